#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "sta/autodiff/tensor.hpp"
#include "sta/encodings.hpp"
#include "sta/nn.hpp"

namespace sta {

enum class View { LCC, LMLO, RCC, RMLO };

inline constexpr std::array<View, 4> kAllViews = {View::LCC, View::LMLO, View::RCC, View::RMLO};

std::string_view to_string(View view);
/// Parses "LCC", "LMLO", "RCC" or "RMLO"; throws std::invalid_argument otherwise.
View parse_view(std::string_view name);
Side side_of(View view);
bool is_cc(View view);

/// One mammographic projection. Pixels are row-major in [0, 1]. Right-side views are stored
/// mirrored into the left-side frame, so mirror-symmetric breasts give equal pixel grids.
struct ViewImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;
  View view = View::LCC;

  Side side() const { return side_of(view); }
};

/// Per-patch token embeddings and their mean.
struct ViewFeature {
  ad::Tensor tokens;  // [P, d] for one view, [V, P, d] batched
  ad::Tensor pooled;  // [d] for one view, [V, d] batched
};

struct SideFeature {
  ad::Tensor z;  // [d]
  Side side = Side::left;
  std::size_t exam_index = 0;
};

struct SpatialShape {
  std::size_t d_model = 32;
  std::size_t heads = 4;
  std::size_t blocks = 2;
  std::size_t patch = 8;
  std::size_t image_size = 32;
  std::size_t ffn_hidden = 64;

  std::size_t tokens() const { return (image_size / patch) * (image_size / patch); }
};

/// Patch-attention backbone: linear patch projection, learned 2-D position offsets, and a
/// stack of encoder blocks; tokens are mean-pooled.
struct BackboneParams {
  SpatialShape shape;
  nn::Linear patch_embed;  // [patch*patch, d]
  ad::Tensor positions;    // [tokens, d]
  std::vector<nn::EncoderBlock> blocks;

  static BackboneParams initialize(const SpatialShape& shape, std::mt19937_64& rng);
  void collect(const std::string& prefix, nn::ParamRefs& out);
};

/// One cross-attention block, shared by both directions (CC->MLO and MLO->CC).
struct CrossAttentionParams {
  nn::MultiHeadAttention attention;
  nn::LayerNorm norm;

  static CrossAttentionParams initialize(const SpatialShape& shape, std::mt19937_64& rng);
  void collect(const std::string& prefix, nn::ParamRefs& out);
};

/// Cuts images into non-overlapping patches: [views * tokens, patch*patch]. Throws
/// std::invalid_argument when a side is not a multiple of the patch size or sizes differ.
ad::Tensor patchify(std::span<const ViewImage* const> images, std::size_t patch);

/// Batched backbone over `views` images given their patches from patchify().
ViewFeature backbone_forward(const BackboneParams& params, const ad::Tensor& patches,
                             std::size_t views);

/// Adds each view's side vector to all of its tokens and to its pooled feature.
ViewFeature add_side_embedding(const ViewFeature& features, const SideEmbeddingTable& table,
                               std::span<const Side> sides);

/// Batched CC/MLO fusion: cc, mlo [N, P, d] -> z [N, d]. Each direction attends with the
/// other view's tokens as keys; the two mean-pooled outputs are averaged.
ad::Tensor cross_attend_batch(const CrossAttentionParams& params, const ad::Tensor& cc,
                              const ad::Tensor& mlo, ad::Tensor* cc_weights = nullptr,
                              ad::Tensor* mlo_weights = nullptr);

// Single-item forms.

ViewFeature patch_backbone(const ViewImage& image, const BackboneParams& params);
/// Backbone output plus the side vector of the image's side. With a null table this is the
/// bare backbone.
ViewFeature encode_view(const ViewImage& image, const SideEmbeddingTable* table,
                        const BackboneParams& params);
/// Throws std::invalid_argument unless cc is a CC view and mlo an MLO view of the same side.
SideFeature cross_attend_views(const ViewFeature& cc, View cc_view, const ViewFeature& mlo,
                               View mlo_view, const CrossAttentionParams& params,
                               std::size_t exam_index = 0);
/// views must hold LCC, LMLO, RCC, RMLO exactly once (any order).
std::pair<SideFeature, SideFeature> encode_exam(std::span<const ViewImage> views,
                                                const SideEmbeddingTable* table,
                                                const BackboneParams& backbone,
                                                const CrossAttentionParams& cross,
                                                std::size_t exam_index = 0);

}  // namespace sta
