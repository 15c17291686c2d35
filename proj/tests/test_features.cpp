#include <gtest/gtest.h>

#include <algorithm>

#include "ncgm/errors.hpp"
#include "ncgm/features.hpp"
#include "ncgm/synth.hpp"
#include "support.hpp"

namespace ncgm {
namespace {

FeatureConfig small_features() {
  FeatureConfig cfg;
  cfg.d = 6;
  cfg.image_size = 32;
  cfg.conv_channels = 3;
  cfg.vocab = 50;
  cfg.text_kernel = 3;
  return cfg;
}

TEST(Features, GeometryIdentityFcNormalisesBoxes) {
  ParamStore s;
  s.add("fc/w", Tensor::matrix({{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}}, true));
  s.add("fc/b", Tensor::zeros({4}, true));
  const BoundingBox box{50, 40, 25, 10};
  const auto y = geometry_embed(std::span(&box, 1), 100, 80, ParamScope(s, ""));
  const std::vector<double> want{0.5, 0.5, 0.25, 0.125};
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), want);
}

TEST(Features, GeometryMatchesAffineOracle) {
  std::mt19937_64 rng(3);
  ParamStore s;
  ParamBuilder(s, "", rng).linear("fc", 4, 5);
  s.get("fc/b").mutable_data()[2] = 0.7;
  const std::vector<BoundingBox> boxes{{10, 20, 4, 6}, {90, 5, 10, 10}};
  const auto y = geometry_embed(boxes, 100, 50, ParamScope(s, ""));
  const auto& w = s.get("fc/w");
  for (std::size_t i = 0; i < 2; ++i) {
    const double f[] = {boxes[i].x / 100, boxes[i].y / 50, boxes[i].w / 100, boxes[i].h / 50};
    for (std::size_t c = 0; c < 5; ++c) {
      double v = s.get("fc/b").at(c);
      for (std::size_t k = 0; k < 4; ++k) v += f[k] * w(k, c);
      EXPECT_NEAR(y(i, c), v, 1e-12);
    }
  }
}

TEST(Features, GeometryRejectsBoxOutsideImage) {
  ParamStore s;
  std::mt19937_64 rng(1);
  ParamBuilder(s, "", rng).linear("fc", 4, 2);
  const BoundingBox box{99, 10, 4, 4};
  EXPECT_THROW(geometry_embed(std::span(&box, 1), 100, 50, ParamScope(s, "")), ContractError);
  EXPECT_THROW(geometry_embed(std::span(&box, 1), 0, 50, ParamScope(s, "")), ContractError);
}

TEST(Features, BoxCellsFallsBackToCentreCell) {
  const auto big = box_cells({50, 50, 40, 20}, 100, 100, 10, 10);
  EXPECT_EQ(big.x0, 3u);
  EXPECT_EQ(big.x1, 6u);
  EXPECT_EQ(big.y0, 4u);
  EXPECT_EQ(big.y1, 5u);
  const auto tiny = box_cells({55, 12, 0.5, 0.5}, 100, 100, 10, 10);
  EXPECT_EQ(tiny.x0, 5u);
  EXPECT_EQ(tiny.x1, 5u);
  EXPECT_EQ(tiny.y0, 1u);
  EXPECT_EQ(tiny.y1, 1u);
}

TEST(Features, AppearanceMatchesRegionAverageOracle) {
  const auto cfg = small_features();
  std::mt19937_64 rng(4);
  ParamStore s;
  init_feature_params(s, cfg, rng);
  const ParamScope p(s, "features/appearance");
  const auto img = testing::random_tensor({1, 32, 32}, rng, false, 0.0, 1.0);
  const std::vector<BoundingBox> boxes{{20, 30, 16, 8}, {60, 10, 30, 12}};
  const auto y = appearance_embed(img, boxes, 80, 40, p);

  auto f = relu(conv2d(img, p["conv1/w"], p["conv1/b"], 2, 1));
  f = relu(conv2d(f, p["conv2/w"], p["conv2/b"], 2, 1));
  const auto c = f.shape()[0], mh = f.shape()[1], mw = f.shape()[2];
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto r = box_cells(boxes[i], 80, 40, mh, mw);
    std::vector<double> pooled(c, 0.0);
    double cells = 0.0;
    for (auto yy = r.y0; yy <= r.y1; ++yy)
      for (auto xx = r.x0; xx <= r.x1; ++xx, ++cells)
        for (std::size_t ch = 0; ch < c; ++ch) pooled[ch] += f.at((ch * mh + yy) * mw + xx);
    for (std::size_t k = 0; k < cfg.d; ++k) {
      double v = p["fc/b"].at(k);
      for (std::size_t ch = 0; ch < c; ++ch) v += pooled[ch] / cells * p["fc/w"](ch, k);
      EXPECT_NEAR(y(i, k), v, 1e-12);
    }
  }
}

TEST(Features, AppearanceOfBlankImageWithZeroBiasIsZero) {
  const auto cfg = small_features();
  std::mt19937_64 rng(5);
  ParamStore s;
  init_feature_params(s, cfg, rng);
  const auto img = Tensor::zeros({1, 32, 32});
  const std::vector<BoundingBox> boxes{{10, 10, 5, 5}, {10, 10, 5, 5}};
  const auto y = appearance_embed(img, boxes, 40, 40, ParamScope(s, "features/appearance"));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Features, ContentEmptyTextIsPadConstantAndStringsAreDeterministic) {
  const auto cfg = small_features();
  std::mt19937_64 rng(6);
  ParamStore s;
  init_feature_params(s, cfg, rng);
  const std::vector<std::vector<std::string>> texts{{}, {"total", "12"}, {}, {"total", "12"}, {"x"}};
  const auto y = content_embed(texts, ParamScope(s, "features/content"), cfg);
  for (std::size_t c = 0; c < cfg.d; ++c) {
    EXPECT_EQ(y(0, c), y(2, c));
    EXPECT_EQ(y(1, c), y(3, c));
  }
  EXPECT_NE(y(1, 0), y(4, 0));
}

TEST(Features, ContentSingleTokenHandSetKernel) {
  // d = 2, kernel 3: windows over [tok, pad, pad]; one window, so max-pool is the identity.
  FeatureConfig cfg;
  cfg.d = 2;
  cfg.vocab = 4;
  cfg.text_kernel = 3;
  ParamStore s;
  s.add("table", Tensor::matrix({{1, 2}, {3, 4}, {5, 6}, {7, 8}}, true));
  s.add("pad", Tensor::matrix({{0.5, -0.5}}, true));
  // Output channel 0 reads the token's first feature, channel 1 sums both pads' second features.
  s.add("conv/w", Tensor::matrix({{1, 0}, {0, 0}, {0, 0}, {0, 1}, {0, 0}, {0, 1}}, true));
  s.add("conv/b", Tensor::vector({0.25, 0.0}, true));
  const std::vector<std::vector<std::string>> texts{{"abc"}};
  const auto id = token_id("abc", 4);
  const auto y = content_embed(texts, ParamScope(s, ""), cfg);
  EXPECT_DOUBLE_EQ(y(0, 0), s.get("table")(id, 0) + 0.25);
  EXPECT_DOUBLE_EQ(y(0, 1), -1.0);
}

TEST(Features, ContentMaxPoolsOverWindows) {
  FeatureConfig cfg;
  cfg.d = 1;
  cfg.vocab = 1;
  cfg.text_kernel = 1;
  ParamStore s;
  s.add("table", Tensor::matrix({{2.0}}, true));
  s.add("pad", Tensor::matrix({{0.0}}, true));
  s.add("conv/w", Tensor::matrix({{1.0}}, true));
  s.add("conv/b", Tensor::vector({0.0}, true));
  const std::vector<std::vector<std::string>> texts{{"a", "b", "c"}};
  EXPECT_DOUBLE_EQ(content_embed(texts, ParamScope(s, ""), cfg).item(), 2.0);
}

TEST(Features, TokenIdIsStableAndInRange) {
  EXPECT_EQ(token_id("hello", 4096), token_id("hello", 4096));
  for (const char* t : {"", "a", "Total", "12.5"}) EXPECT_LT(token_id(t, 97), 97u);
}

TEST(Features, EmbedIsPermutationEquivariantAndMaskZeros) {
  const auto cfg = small_features();
  std::mt19937_64 rng(7);
  ParamStore s;
  init_feature_params(s, cfg, rng);
  auto sample = generate_table(11, GenParams{});
  const auto img = image_tensor(sample.image, cfg.image_size);
  const auto a = embed(sample, img, s, cfg);
  auto swapped = sample;
  std::reverse(swapped.elements.begin(), swapped.elements.end());
  const auto b = embed(swapped, img, s, cfg);
  const auto n = sample.size();
  for (auto m : kModalities)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < cfg.d; ++c) EXPECT_EQ(a.get(m)(i, c), b.get(m)(n - 1 - i, c));

  ModalityMask mask;
  mask.zero_appearance = true;
  const auto z = embed(sample, img, s, cfg, mask);
  for (double v : z.appearance.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(z.geometry.at(0), a.geometry.at(0));
}

TEST(Features, ImageTensorIsInkIntensity) {
  GrayImage img(4, 4, 255);
  img.at(0, 0) = 0;
  const auto t = image_tensor(img, 4);
  EXPECT_EQ(t.shape(), (Shape{1, 4, 4}));
  EXPECT_DOUBLE_EQ(t.at(0), 1.0);
  EXPECT_DOUBLE_EQ(t.at(15), 0.0);
}

}  // namespace
}  // namespace ncgm
