#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "sta/autodiff/grad_check.hpp"
#include "sta/autodiff/ops.hpp"
#include "sta/losses.hpp"
#include "sta/spatial_encoder.hpp"

using namespace sta;

namespace {

const SpatialShape kShape{8, 2, 2, 8, 16, 16};

ViewImage noise_image(View view, std::mt19937_64& rng, std::size_t size = 16) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  ViewImage img{size, size, std::vector<float>(size * size), view};
  for (auto& p : img.pixels) p = u(rng);
  return img;
}

std::vector<double> values(const ad::Tensor& t) { return {t.values().begin(), t.values().end()}; }

struct Fixture {
  std::mt19937_64 rng{17};
  BackboneParams backbone = BackboneParams::initialize(kShape, rng);
  CrossAttentionParams cross = CrossAttentionParams::initialize(kShape, rng);
  SideEmbeddingTable table = SideEmbeddingTable::initialize(kShape.d_model, rng);
};

// Right views equal to the left ones, i.e. a mirror-symmetric exam.
std::vector<ViewImage> mirrored_exam(std::mt19937_64& rng) {
  ViewImage cc = noise_image(View::LCC, rng), mlo = noise_image(View::LMLO, rng);
  ViewImage rcc = cc, rmlo = mlo;
  rcc.view = View::RCC;
  rmlo.view = View::RMLO;
  return {cc, mlo, rcc, rmlo};
}

}  // namespace

TEST(Views, NamesRoundTrip) {
  for (View v : kAllViews) EXPECT_EQ(parse_view(to_string(v)), v);
  EXPECT_THROW(parse_view("XCC"), std::invalid_argument);
  EXPECT_EQ(side_of(View::RMLO), Side::right);
  EXPECT_TRUE(is_cc(View::LCC));
  EXPECT_FALSE(is_cc(View::RMLO));
}

TEST(Backbone, SixteenPixelImageGivesFourTokens) {
  Fixture f;
  const auto feat = patch_backbone(noise_image(View::LCC, f.rng), f.backbone);
  EXPECT_EQ(feat.tokens.shape(), (ad::Shape{4, 8}));
  EXPECT_EQ(feat.pooled.shape(), (ad::Shape{8}));
}

TEST(Backbone, IndivisibleImageIsRejected) {
  Fixture f;
  EXPECT_THROW(patch_backbone(noise_image(View::LCC, f.rng, 12), f.backbone), std::invalid_argument);
}

TEST(Backbone, ZeroImageIsSideBlind) {
  Fixture f;
  ViewImage lcc{16, 16, std::vector<float>(256, 0.0f), View::LCC};
  ViewImage rcc = lcc;
  rcc.view = View::RCC;
  EXPECT_EQ(values(patch_backbone(lcc, f.backbone).pooled), values(patch_backbone(rcc, f.backbone).pooled));
}

TEST(Backbone, GradientMatchesFiniteDifferences) {
  Fixture f;
  const ViewImage img = noise_image(View::LCC, f.rng);
  const ViewImage* one[] = {&img};
  const ad::Tensor patches = patchify(one, 8);
  const ad::Tensor w = ad::Tensor::vector({0.3, -0.2, 0.5, 0.1, -0.4, 0.25, 0.6, -0.35});
  const auto r = ad::grad_check(
      [&](const ad::Tensor& x) { return ad::sum(backbone_forward(f.backbone, x, 1).pooled * w); }, patches);
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(Backbone, PoolingIgnoresTokenOrder) {
  Fixture f;
  const ViewImage img = noise_image(View::LCC, f.rng);
  const ViewImage* one[] = {&img};
  const ad::Tensor patches = patchify(one, 8);
  const std::int64_t perm[] = {2, 0, 3, 1};
  BackboneParams permuted = f.backbone;
  permuted.positions = ad::gather_rows(f.backbone.positions, perm).detach();
  const auto a = backbone_forward(f.backbone, patches, 1);
  const auto b = backbone_forward(permuted, ad::gather_rows(patches, perm), 1);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(a.pooled[i], b.pooled[i], 1e-12);
}

TEST(EncodeView, SideDifferenceIsTheEmbeddingDifference) {
  Fixture f;
  ViewImage lcc = noise_image(View::LCC, f.rng);
  ViewImage rcc = lcc;
  rcc.view = View::RCC;
  const auto l = encode_view(lcc, &f.table, f.backbone), r = encode_view(rcc, &f.table, f.backbone);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_NEAR(l.pooled[i] - r.pooled[i], f.table.left[i] - f.table.right[i], 1e-12);
    for (std::size_t t = 0; t < 4; ++t)
      EXPECT_NEAR(l.tokens[t * 8 + i] - r.tokens[t * 8 + i], f.table.left[i] - f.table.right[i], 1e-12);
  }
}

TEST(EncodeView, ZeroTableIsTheBareBackbone) {
  Fixture f;
  const ViewImage img = noise_image(View::RMLO, f.rng);
  const auto zeros = SideEmbeddingTable::zeros(8);
  const auto a = encode_view(img, &zeros, f.backbone), b = patch_backbone(img, f.backbone);
  EXPECT_EQ(values(a.tokens), values(b.tokens));
  EXPECT_EQ(values(a.pooled), values(b.pooled));
  EXPECT_EQ(values(encode_view(img, nullptr, f.backbone).pooled), values(b.pooled));
}

TEST(CrossAttention, WeightRowsSumToOne) {
  Fixture f;
  const auto cc = encode_view(noise_image(View::LCC, f.rng), &f.table, f.backbone);
  const auto mlo = encode_view(noise_image(View::LMLO, f.rng), &f.table, f.backbone);
  ad::Tensor wc, wm;
  cross_attend_batch(f.cross, ad::reshape(cc.tokens, {1, 4, 8}), ad::reshape(mlo.tokens, {1, 4, 8}), &wc, &wm);
  for (const auto* w : {&wc, &wm}) {
    ASSERT_EQ(w->shape(), (ad::Shape{2, 4, 4}));
    for (std::size_t row = 0; row < 8; ++row) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += (*w)[row * 4 + k];
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(CrossAttention, IdenticalViewsGiveIdenticalDirections) {
  Fixture f;
  const auto v = encode_view(noise_image(View::LCC, f.rng), &f.table, f.backbone);
  const ad::Tensor t = ad::reshape(v.tokens, {1, 4, 8});
  ad::Tensor wc, wm;
  const auto z = cross_attend_batch(f.cross, t, t, &wc, &wm);
  EXPECT_EQ(values(wc), values(wm));
  // with both directions equal the average is one direction's pooled output
  const auto one = nn::apply(f.cross.norm, t + nn::attend(f.cross.attention, t, t));
  const auto pooled = ad::mean(one, 1);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(z[i], pooled[i], 1e-14);
}

TEST(CrossAttention, MismatchedSidesAreRejected) {
  Fixture f;
  const auto cc = encode_view(noise_image(View::LCC, f.rng), &f.table, f.backbone);
  const auto mlo = encode_view(noise_image(View::RMLO, f.rng), &f.table, f.backbone);
  EXPECT_THROW(cross_attend_views(cc, View::LCC, mlo, View::RMLO, f.cross), std::invalid_argument);
  EXPECT_THROW(cross_attend_views(mlo, View::LMLO, cc, View::LCC, f.cross), std::invalid_argument);
  EXPECT_NO_THROW(cross_attend_views(cc, View::LCC, mlo, View::LMLO, f.cross));
}

TEST(CrossAttention, GradientMatchesFiniteDifferences) {
  Fixture f;
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> raw(2 * 4 * 8);
  for (auto& v : raw) v = g(f.rng);
  const ad::Tensor x({2, 4, 8}, raw);
  const ad::Tensor w = ad::Tensor::vector({0.3, -0.2, 0.5, 0.1, -0.4, 0.25, 0.6, -0.35});
  const auto r = ad::grad_check(
      [&](const ad::Tensor& in) {
        const auto cc = ad::reshape(ad::slice(in, 0, 0, 1), {1, 4, 8});
        const auto mlo = ad::reshape(ad::slice(in, 0, 1, 2), {1, 4, 8});
        return ad::sum(cross_attend_batch(f.cross, cc, mlo) * w);
      },
      x);
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(EncodeExam, MirroredExamWithoutSideVectorsIsSymmetric) {
  Fixture f;
  const auto exam = mirrored_exam(f.rng);
  const auto zeros = SideEmbeddingTable::zeros(8);
  const auto [l, r] = encode_exam(exam, &zeros, f.backbone, f.cross);
  EXPECT_EQ(values(l.z), values(r.z));
  const auto [l2, r2] = encode_exam(exam, &f.table, f.backbone, f.cross);
  EXPECT_NE(values(l2.z), values(r2.z));
}

TEST(EncodeExam, Deterministic) {
  Fixture f;
  std::vector<ViewImage> exam;
  for (View v : kAllViews) exam.push_back(noise_image(v, f.rng));
  const auto a = encode_exam(exam, &f.table, f.backbone, f.cross);
  const auto b = encode_exam(exam, &f.table, f.backbone, f.cross);
  EXPECT_EQ(values(a.first.z), values(b.first.z));
  EXPECT_EQ(values(a.second.z), values(b.second.z));
  EXPECT_EQ(a.first.side, Side::left);
  EXPECT_EQ(a.second.side, Side::right);
}

TEST(EncodeExam, ViewOrderDoesNotMatter) {
  Fixture f;
  std::vector<ViewImage> exam;
  for (View v : kAllViews) exam.push_back(noise_image(v, f.rng));
  std::vector<ViewImage> shuffled = {exam[3], exam[1], exam[0], exam[2]};
  const auto a = encode_exam(exam, &f.table, f.backbone, f.cross);
  const auto b = encode_exam(shuffled, &f.table, f.backbone, f.cross);
  EXPECT_EQ(values(a.first.z), values(b.first.z));
  EXPECT_EQ(values(a.second.z), values(b.second.z));
}

TEST(EncodeExam, MissingOrDuplicateViewIsRejected) {
  Fixture f;
  std::vector<ViewImage> exam;
  for (View v : kAllViews) exam.push_back(noise_image(v, f.rng));
  std::vector<ViewImage> three(exam.begin(), exam.begin() + 3);
  EXPECT_THROW(encode_exam(three, &f.table, f.backbone, f.cross), std::invalid_argument);
  exam[3] = exam[2];
  EXPECT_THROW(encode_exam(exam, &f.table, f.backbone, f.cross), std::invalid_argument);
}

// Cross-breast distance recomputed outside encode_exam: per-view encoding, per-side fusion,
// then the Euclidean norm by hand.
TEST(EncodeExam, CrossBreastDistanceMatchesIndependentPath) {
  Fixture f;
  const auto exam = mirrored_exam(f.rng);
  const auto [l, r] = encode_exam(exam, &f.table, f.backbone, f.cross);
  const std::vector<std::vector<double>> lefts = {values(l.z)}, rights = {values(r.z)};
  const auto d = asymmetry_distances(lefts, rights);

  auto side = [&](std::size_t cc, std::size_t mlo) {
    return cross_attend_views(encode_view(exam[cc], &f.table, f.backbone), exam[cc].view,
                              encode_view(exam[mlo], &f.table, f.backbone), exam[mlo].view, f.cross);
  };
  const auto zl = side(0, 1).z, zr = side(2, 3).z;
  double sq = 0;
  for (std::size_t i = 0; i < 8; ++i) sq += (zl[i] - zr[i]) * (zl[i] - zr[i]);
  EXPECT_GT(sq, 0.0);
  EXPECT_NEAR(d.d_bar, std::sqrt(sq), 1e-12);
}
