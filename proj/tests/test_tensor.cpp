#include <gtest/gtest.h>

#include <cmath>

#include "gradient_cases.hpp"
#include "ncgm/errors.hpp"
#include "ncgm/tensor.hpp"
#include "support.hpp"

namespace ncgm {
namespace {

using testing::random_tensor;

TEST(Tensor, MatmulMatchesTripleLoop) {
  std::mt19937_64 rng(1);
  const auto a = random_tensor({4, 7}, rng, false);
  const auto b = random_tensor({7, 3}, rng, false);
  const auto c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{4, 3}));
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 7; ++k) s += a(i, k) * b(k, j);
      EXPECT_NEAR(c(i, j), s, 1e-12);
    }
  }
}

TEST(Tensor, SoftmaxRowsSumToOneAndMatchLogSoftmax) {
  std::mt19937_64 rng(2);
  const auto x = random_tensor({3, 6}, rng, false, -30.0, 30.0);
  const auto p = softmax_rows(x);
  const auto lp = log_softmax_rows(x);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 6; ++c) {
      s += p(r, c);
      EXPECT_NEAR(std::exp(lp(r, c)), p(r, c), 1e-12);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Tensor, LayerNormMatchesFormula) {
  const auto x = Tensor::matrix({{1.0, 2.0, 4.0}, {-1.0, 0.0, 5.0}});
  const auto g = Tensor::vector({1.0, 2.0, 0.5});
  const auto b = Tensor::vector({0.0, 1.0, -1.0});
  const auto y = layer_norm(x, g, b);
  for (std::size_t r = 0; r < 2; ++r) {
    const double mu = (x(r, 0) + x(r, 1) + x(r, 2)) / 3.0;
    double var = 0.0;
    for (std::size_t c = 0; c < 3; ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
    var /= 3.0;
    for (std::size_t c = 0; c < 3; ++c)
      EXPECT_NEAR(y(r, c), g.at(c) * (x(r, c) - mu) / std::sqrt(var + 1e-5) + b.at(c), 1e-12);
  }
}

TEST(Tensor, Conv2dMatchesDirectLoop) {
  std::mt19937_64 rng(3);
  const auto x = random_tensor({2, 7, 6}, rng, false);
  const auto w = random_tensor({3, 2, 3, 3}, rng, false);
  const auto b = random_tensor({3}, rng, false);
  const std::size_t stride = 2, pad = 1;
  const auto y = conv2d(x, w, b, stride, pad);
  const std::size_t ho = (7 + 2 * pad - 3) / stride + 1, wo = (6 + 2 * pad - 3) / stride + 1;
  ASSERT_EQ(y.shape(), (Shape{3, ho, wo}));
  for (std::size_t o = 0; o < 3; ++o) {
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        double s = b.at(o);
        for (std::size_t c = 0; c < 2; ++c) {
          for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const long yy = static_cast<long>(i * stride + ky) - static_cast<long>(pad);
              const long xx = static_cast<long>(j * stride + kx) - static_cast<long>(pad);
              if (yy < 0 || xx < 0 || yy >= 7 || xx >= 6) continue;
              s += x.at((c * 7 + yy) * 6 + xx) * w.at(((o * 2 + c) * 3 + ky) * 3 + kx);
            }
          }
        }
        EXPECT_NEAR(y.at((o * ho + i) * wo + j), s, 1e-12);
      }
    }
  }
}

TEST(Tensor, RegionAvgPoolMatchesBruteForce) {
  std::mt19937_64 rng(4);
  const auto f = random_tensor({2, 4, 5}, rng, false);
  const CellRect r[] = {{1, 2, 0, 3}, {3, 3, 4, 4}};
  const auto y = region_avg_pool(f, r);
  ASSERT_EQ(y.shape(), (Shape{2, 2}));
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t c = 0; c < 2; ++c) {
      double s = 0.0, k = 0.0;
      for (auto yy = r[n].y0; yy <= r[n].y1; ++yy)
        for (auto xx = r[n].x0; xx <= r[n].x1; ++xx, ++k) s += f.at((c * 4 + yy) * 5 + xx);
      EXPECT_NEAR(y(n, c), s / k, 1e-12);
    }
  }
}

TEST(Tensor, GatherRowsNegativeIndexGivesZeroRow) {
  const auto x = Tensor::matrix({{1, 2}, {3, 4}});
  const long idx[] = {1, -1, 0};
  const auto y = gather_rows(x, idx);
  EXPECT_EQ(y(0, 0), 3.0);
  EXPECT_EQ(y(1, 0), 0.0);
  EXPECT_EQ(y(1, 1), 0.0);
  EXPECT_EQ(y(2, 1), 2.0);
}

TEST(Tensor, MaxOverRowsRoutesGradientToFirstMaximiser) {
  const auto x = Tensor::matrix({{1, 5}, {3, 5}, {3, 0}}, true);
  const auto g = grad(sum(max_over_rows(x))).of(x);
  const std::vector<double> want{0, 1, 1, 0, 0, 0};
  EXPECT_EQ(std::vector<double>(g.data().begin(), g.data().end()), want);
}

TEST(Tensor, UnreachedInputHasZeroGradient) {
  const auto a = Tensor::matrix({{1, 2}}, true);
  const auto b = Tensor::matrix({{3, 4}}, true);
  const auto g = grad(sum(a));
  EXPECT_FALSE(g.reached(b));
  const auto gb = g.of(b);
  for (double v : gb.data()) EXPECT_EQ(v, 0.0);
}

TEST(Tensor, SharedSubexpressionAccumulates) {
  const auto x = Tensor::vector({2.0}, true);
  const auto y = mul(x, x);
  const auto g = grad(sum(add(y, y))).of(x);
  EXPECT_DOUBLE_EQ(g.at(0), 8.0);
}

TEST(Tensor, DetachStopsGradient) {
  const auto x = Tensor::vector({2.0}, true);
  const auto g = grad(sum(mul(x, x.detach()))).of(x);
  EXPECT_DOUBLE_EQ(g.at(0), 2.0);
}

TEST(Tensor, ErrorsOnShapeMismatch) {
  const auto a = Tensor::zeros({2, 3});
  const auto b = Tensor::zeros({2, 3});
  EXPECT_THROW(matmul(a, b), DimensionError);
  EXPECT_THROW(add(a, Tensor::zeros({3, 2})), DimensionError);
  EXPECT_THROW(reshape(a, {4, 2}), DimensionError);
  EXPECT_THROW(add_bias(a, Tensor::zeros({2})), DimensionError);
  EXPECT_THROW(grad(a), ContractError);
  EXPECT_THROW(Tensor::zeros({0, 3}), ContractError);
}

class GradientCase : public ::testing::TestWithParam<std::size_t> {};

TEST_P(GradientCase, PassesFiniteDifferences) {
  const auto cases = testing::gradient_cases();
  const auto& c = cases.at(GetParam());
  for (std::uint64_t seed : {0u, 1u}) {
    const auto rep = c.run(seed);
    EXPECT_GT(rep.checked, 0u) << c.name;
    EXPECT_LT(rep.max_rel_error, 1e-4) << c.name << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, GradientCase, ::testing::Range<std::size_t>(0, testing::gradient_cases().size()),
                         [](const auto& info) {
                           auto name = testing::gradient_cases().at(info.param).name;
                           for (auto& ch : name)
                             if (ch == '-') ch = '_';
                           return name;
                         });

}  // namespace
}  // namespace ncgm
