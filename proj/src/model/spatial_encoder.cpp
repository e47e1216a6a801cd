#include "sta/spatial_encoder.hpp"

#include <stdexcept>
#include <string>

#include "sta/autodiff/ops.hpp"

namespace sta {

using ad::Tensor;

std::string_view to_string(View view) {
  switch (view) {
    case View::LCC:
      return "LCC";
    case View::LMLO:
      return "LMLO";
    case View::RCC:
      return "RCC";
    case View::RMLO:
      return "RMLO";
  }
  return "?";
}

View parse_view(std::string_view name) {
  for (View v : kAllViews)
    if (to_string(v) == name) return v;
  throw std::invalid_argument("unknown view name '" + std::string(name) + "'");
}

Side side_of(View view) {
  return (view == View::LCC || view == View::LMLO) ? Side::left : Side::right;
}

bool is_cc(View view) { return view == View::LCC || view == View::RCC; }

BackboneParams BackboneParams::initialize(const SpatialShape& shape, std::mt19937_64& rng) {
  if (shape.patch == 0 || shape.image_size % shape.patch != 0) {
    throw std::invalid_argument("backbone: image size " + std::to_string(shape.image_size) +
                                " is not a multiple of patch size " + std::to_string(shape.patch));
  }
  BackboneParams p;
  p.shape = shape;
  p.patch_embed = nn::Linear::initialize(shape.patch * shape.patch, shape.d_model, rng);
  std::normal_distribution<double> normal(0.0, 0.02);
  std::vector<double> pos(shape.tokens() * shape.d_model);
  for (auto& v : pos) v = normal(rng);
  p.positions = Tensor({shape.tokens(), shape.d_model}, std::move(pos), true);
  for (std::size_t b = 0; b < shape.blocks; ++b)
    p.blocks.push_back(nn::EncoderBlock::initialize(shape.d_model, shape.heads, shape.ffn_hidden, rng));
  return p;
}

void BackboneParams::collect(const std::string& prefix, nn::ParamRefs& out) {
  patch_embed.collect(prefix + ".patch_embed", out);
  out.emplace_back(prefix + ".positions", &positions);
  for (std::size_t b = 0; b < blocks.size(); ++b)
    blocks[b].collect(prefix + ".block" + std::to_string(b), out);
}

CrossAttentionParams CrossAttentionParams::initialize(const SpatialShape& shape,
                                                      std::mt19937_64& rng) {
  return {nn::MultiHeadAttention::initialize(shape.d_model, shape.heads, rng),
          nn::LayerNorm::initialize(shape.d_model)};
}

void CrossAttentionParams::collect(const std::string& prefix, nn::ParamRefs& out) {
  attention.collect(prefix + ".attention", out);
  norm.collect(prefix + ".norm", out);
}

Tensor patchify(std::span<const ViewImage* const> images, std::size_t patch) {
  if (images.empty()) throw std::invalid_argument("patchify: no images");
  const std::size_t H = images.front()->height, W = images.front()->width;
  if (patch == 0 || H % patch != 0 || W % patch != 0 || H == 0 || W == 0) {
    throw std::invalid_argument("patchify: image " + std::to_string(H) + "x" + std::to_string(W) +
                                " is not divisible into " + std::to_string(patch) + "px patches");
  }
  const std::size_t pr = H / patch, pc = W / patch, P = pr * pc, width = patch * patch;
  std::vector<double> out(images.size() * P * width);
  for (std::size_t v = 0; v < images.size(); ++v) {
    const ViewImage& img = *images[v];
    if (img.height != H || img.width != W || img.pixels.size() != H * W) {
      throw std::invalid_argument("patchify: images in one batch must share their size");
    }
    for (std::size_t r = 0; r < pr; ++r)
      for (std::size_t c = 0; c < pc; ++c) {
        double* dst = out.data() + ((v * P) + r * pc + c) * width;
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x)
            dst[y * patch + x] = img.pixels[(r * patch + y) * W + c * patch + x];
      }
  }
  return Tensor({images.size() * P, width}, std::move(out));
}

ViewFeature backbone_forward(const BackboneParams& params, const Tensor& patches,
                             std::size_t views) {
  const std::size_t P = params.shape.tokens(), d = params.shape.d_model;
  Tensor x = ad::reshape(nn::apply(params.patch_embed, patches), {views, P, d}) + params.positions;
  for (const auto& block : params.blocks) x = nn::apply(block, x);
  return {x, ad::mean(x, 1)};
}

ViewFeature add_side_embedding(const ViewFeature& features, const SideEmbeddingTable& table,
                               std::span<const Side> sides) {
  const auto& s = features.tokens.shape();
  const std::size_t V = s[0], P = s[1], d = s[2];
  if (sides.size() != V) throw std::invalid_argument("add_side_embedding: one side per view");
  std::vector<std::int64_t> per_view(V), per_token(V * P);
  for (std::size_t v = 0; v < V; ++v) {
    per_view[v] = sides[v] == Side::left ? 0 : 1;
    for (std::size_t t = 0; t < P; ++t) per_token[v * P + t] = per_view[v];
  }
  const Tensor table2 = table.stacked();
  return {features.tokens + ad::reshape(ad::gather_rows(table2, per_token), {V, P, d}),
          features.pooled + ad::gather_rows(table2, per_view)};
}

Tensor cross_attend_batch(const CrossAttentionParams& params, const Tensor& cc, const Tensor& mlo,
                          Tensor* cc_weights, Tensor* mlo_weights) {
  const Tensor cc_out = nn::apply(params.norm, cc + nn::attend(params.attention, cc, mlo, {}, cc_weights));
  const Tensor mlo_out =
      nn::apply(params.norm, mlo + nn::attend(params.attention, mlo, cc, {}, mlo_weights));
  return ad::scale(ad::mean(cc_out, 1) + ad::mean(mlo_out, 1), 0.5);
}

ViewFeature patch_backbone(const ViewImage& image, const BackboneParams& params) {
  const ViewImage* one[] = {&image};
  const ViewFeature f = backbone_forward(params, patchify(one, params.shape.patch), 1);
  const std::size_t P = params.shape.tokens(), d = params.shape.d_model;
  return {ad::reshape(f.tokens, {P, d}), ad::reshape(f.pooled, {d})};
}

ViewFeature encode_view(const ViewImage& image, const SideEmbeddingTable* table,
                        const BackboneParams& params) {
  ViewFeature f = patch_backbone(image, params);
  if (!table) return f;
  const Tensor& v = side_embedding(*table, image.side());
  return {f.tokens + v, f.pooled + v};
}

SideFeature cross_attend_views(const ViewFeature& cc, View cc_view, const ViewFeature& mlo,
                               View mlo_view, const CrossAttentionParams& params,
                               std::size_t exam_index) {
  if (side_of(cc_view) != side_of(mlo_view)) {
    throw std::invalid_argument("cross_attend_views: " + std::string(to_string(cc_view)) +
                                " and " + std::string(to_string(mlo_view)) +
                                " belong to different sides");
  }
  if (!is_cc(cc_view) || is_cc(mlo_view)) {
    throw std::invalid_argument("cross_attend_views: expected one CC and one MLO view");
  }
  const auto& s = cc.tokens.shape();
  const ad::Shape batched = {1, s[0], s[1]};
  const Tensor z = cross_attend_batch(params, ad::reshape(cc.tokens, batched),
                                      ad::reshape(mlo.tokens, batched));
  return {ad::reshape(z, {s[1]}), side_of(cc_view), exam_index};
}

std::pair<SideFeature, SideFeature> encode_exam(std::span<const ViewImage> views,
                                                const SideEmbeddingTable* table,
                                                const BackboneParams& backbone,
                                                const CrossAttentionParams& cross,
                                                std::size_t exam_index) {
  std::array<const ViewImage*, 4> ordered{};
  for (const auto& img : views) {
    auto& slot = ordered[static_cast<std::size_t>(img.view)];
    if (slot) throw std::invalid_argument("encode_exam: duplicate view " + std::string(to_string(img.view)));
    slot = &img;
  }
  for (View v : kAllViews) {
    if (!ordered[static_cast<std::size_t>(v)])
      throw std::invalid_argument("encode_exam: missing view " + std::string(to_string(v)));
  }
  const std::size_t d = backbone.shape.d_model;
  ViewFeature f = backbone_forward(backbone, patchify(ordered, backbone.shape.patch), 4);
  if (table) {
    const Side sides[] = {Side::left, Side::left, Side::right, Side::right};
    f = add_side_embedding(f, *table, sides);
  }
  const std::int64_t cc_rows[] = {0, 2};
  const std::int64_t mlo_rows[] = {1, 3};
  const Tensor z = cross_attend_batch(cross, ad::gather_rows(f.tokens, cc_rows),
                                      ad::gather_rows(f.tokens, mlo_rows));
  return {SideFeature{ad::reshape(ad::slice(z, 0, 0, 1), {d}), Side::left, exam_index},
          SideFeature{ad::reshape(ad::slice(z, 0, 1, 2), {d}), Side::right, exam_index}};
}

}  // namespace sta
