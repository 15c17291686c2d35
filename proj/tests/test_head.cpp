#include <gtest/gtest.h>

#include <cmath>

#include "ncgm/errors.hpp"
#include "ncgm/head.hpp"
#include "reference_model.hpp"
#include "support.hpp"

namespace ncgm {
namespace {

using testing::random_tensor;

RelationMatrices two_by_two_grid() {
  // Elements 0..3 at (r0,c0), (r0,c1), (r1,c0), (r1,c1).
  std::vector<TableElement> els;
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) els.push_back({{10.0 + 10 * c, 10.0 + 10 * r, 4, 4}, {}, Span{r, r, c, c}});
  return build_adjacency(els);
}

TEST(Head, PairEmbeddingsAreRowMajorConcatenations) {
  const auto e = Tensor::matrix({{1, 2}, {3, 4}});
  const auto b = pair_embeddings(e);
  ASSERT_EQ(b.pairs.size(), 4u);
  EXPECT_EQ(b.pairs[1], (PairIndex{0, 1}));
  const std::vector<double> row1{1, 2, 3, 4};
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(b.vectors(1, j), row1[j]);
  EXPECT_EQ(b.vectors(2, 0), 3.0);
  EXPECT_EQ(b.vectors(2, 2), 1.0);
  EXPECT_THROW(make_pairs(e, {{0, 2}}), ContractError);
  EXPECT_THROW(make_pairs(e, {}), ContractError);
}

TEST(Head, LogitsMatchMlpOracle) {
  std::mt19937_64 rng(2);
  ParamStore s;
  init_head_params(s, 3, HeadConfig{5}, rng);
  const auto u = random_tensor({4, 6}, rng, false);
  const auto y = relation_logits(u, Relation::kCol, s);
  namespace R = reference;
  const R::Params p{s, "head/col"};
  auto h = R::relu(R::plus_bias(R::mul(R::to_mat(u), p.mat("fc1/w")), p.vec("fc1/b")));
  h = R::relu(R::plus_bias(R::mul(h, p.mat("fc2/w")), p.vec("fc2/b")));
  h = R::relu(R::plus_bias(R::mul(h, p.mat("fc3/w")), p.vec("fc3/b")));
  const auto want = R::plus_bias(R::mul(h, p.mat("out/w")), p.vec("out/b"));
  ASSERT_EQ(y.shape(), (Shape{4, 2}));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(y(i, j), want[i][j], 1e-12);
  EXPECT_THROW(relation_logits(random_tensor({2, 5}, rng, false), Relation::kCell, s), DimensionError);
}

TEST(Head, DefaultWidthsFollowTheFixedHead) {
  std::mt19937_64 rng(3);
  ParamStore s;
  init_head_params(s, 64, HeadConfig{}, rng);
  EXPECT_EQ(s.get("head/row/fc1/w").shape(), (Shape{128, 256}));
  EXPECT_EQ(s.get("head/row/fc3/w").shape(), (Shape{256, 256}));
  EXPECT_EQ(s.get("head/row/out/w").shape(), (Shape{256, 2}));
}

TEST(Head, ProbabilitiesAreSoftmaxOfLogits) {
  std::mt19937_64 rng(4);
  ParamStore s;
  init_head_params(s, 2, HeadConfig{4}, rng);
  const auto batch = pair_embeddings(random_tensor({3, 2}, rng, false));
  const auto out = classify_relations(batch, s);
  for (std::size_t p = 0; p < 9; ++p) {
    const auto& l = out[Relation::kRow];
    const double want = 1.0 / (1.0 + std::exp(l(p, 0) - l(p, 1)));
    EXPECT_NEAR(out.positive(Relation::kRow, p), want, 1e-12);
  }
}

TEST(Head, SamplingDrawsHalfPositivesPerAnchor) {
  const auto gt = two_by_two_grid();
  for (std::size_t S : {2, 3, 4, 10}) {
    const auto sp = monte_carlo_sample(gt, S, 7);
    for (auto r : kRelations) {
      const auto& rs = sp[r];
      ASSERT_EQ(rs.pairs.size(), 4 * S);
      ASSERT_EQ(rs.anchor.size(), 4u);
      for (std::size_t a = 0; a < 4; ++a) {
        std::size_t pos = 0;
        for (std::size_t k = 0; k < S; ++k) {
          const auto [i, j] = rs.pairs[a * S + k];
          EXPECT_EQ(i, a);
          EXPECT_EQ(rs.labels[a * S + k], gt.get(r)(i, j));
          pos += rs.labels[a * S + k];
        }
        EXPECT_EQ(pos, (S + 1) / 2);
        EXPECT_TRUE(gt.get(r)(a, rs.positive[a]));
        if (r != Relation::kCell) EXPECT_NE(rs.positive[a], a);
        ASSERT_TRUE(rs.negative[a].has_value());
        EXPECT_FALSE(gt.get(r)(a, *rs.negative[a]));
      }
    }
  }
}

TEST(Head, SamplingWithoutNegativesIsAllPositive) {
  RelationMatrices gt{AdjacencyMatrix(3, 1), AdjacencyMatrix(3, 1), AdjacencyMatrix(3, 1)};
  const auto sp = monte_carlo_sample(gt, 4, 1);
  for (auto r : kRelations) {
    for (auto l : sp[r].labels) EXPECT_EQ(l, 1u);
    for (const auto& n : sp[r].negative) EXPECT_FALSE(n.has_value());
  }
}

TEST(Head, SamplingIsSeedDeterministic) {
  const auto gt = two_by_two_grid();
  const auto a = monte_carlo_sample(gt, 6, 3), b = monte_carlo_sample(gt, 6, 3);
  for (auto r : kRelations) EXPECT_EQ(a[r].pairs, b[r].pairs);
  EXPECT_THROW(monte_carlo_sample(gt, 1, 0), ContractError);
}

// Hand-evaluated loss: mean NLL plus mean over anchors of
// ||e_a - e_p||^2 + max(0, margin - ||e_a - e_n||^2).
double loss_oracle(const std::array<Tensor, 3>& logits, const Tensor& e, const SampledPairs& sp,
                   const LossWeights& w) {
  double total = 0.0;
  for (auto r : kRelations) {
    const auto i = static_cast<std::size_t>(r);
    const auto& rs = sp.relations[i];
    double nll = 0.0;
    for (std::size_t p = 0; p < rs.pairs.size(); ++p) {
      const double l0 = logits[i](p, 0), l1 = logits[i](p, 1);
      const double mx = std::max(l0, l1);
      const double lse = mx + std::log(std::exp(l0 - mx) + std::exp(l1 - mx));
      nll -= (rs.labels[p] ? l1 : l0) - lse;
    }
    nll /= static_cast<double>(rs.pairs.size());
    auto d2 = [&](std::size_t a, std::size_t b) {
      double s = 0.0;
      for (std::size_t c = 0; c < e.cols(); ++c) s += (e(a, c) - e(b, c)) * (e(a, c) - e(b, c));
      return s;
    };
    double con = 0.0;
    for (std::size_t k = 0; k < rs.anchor.size(); ++k) {
      con += d2(rs.anchor[k], rs.positive[k]);
      if (rs.negative[k]) con += std::max(0.0, w.margin - d2(rs.anchor[k], *rs.negative[k]));
    }
    con /= static_cast<double>(rs.anchor.size());
    total += w.lambda_class * nll + w.lambda_con * con;
  }
  return total;
}

TEST(Head, LossMatchesFormula) {
  const auto gt = two_by_two_grid();
  const auto sp = monte_carlo_sample(gt, 4, 5);
  std::mt19937_64 rng(6);
  const auto e = random_tensor({4, 3}, rng, false, -0.5, 0.5);
  std::array<Tensor, 3> logits;
  for (auto r : kRelations) logits[static_cast<std::size_t>(r)] = random_tensor({16, 2}, rng, false, -2, 2);
  for (LossWeights w : {LossWeights{}, LossWeights{0.3, 2.0, 0.5}}) {
    EXPECT_NEAR(relation_loss(logits, e, sp, w).item(), loss_oracle(logits, e, sp, w), 1e-12);
  }
}

TEST(Head, LossLimits) {
  const auto gt = two_by_two_grid();
  const auto sp = monte_carlo_sample(gt, 4, 5);
  // Perfect classifier, contrastive term off.
  std::array<Tensor, 3> logits;
  for (auto r : kRelations) {
    const auto& rs = sp[r];
    std::vector<double> v;
    for (auto l : rs.labels) v.insert(v.end(), {l ? -50.0 : 50.0, l ? 50.0 : -50.0});
    logits[static_cast<std::size_t>(r)] = Tensor({rs.labels.size(), 2}, v);
  }
  const auto e = Tensor::matrix({{0, 0}, {3, 0}, {0, 3}, {3, 3}});
  EXPECT_LT(relation_loss(logits, e, sp, {1.0, 0.0, 1.0}).item(), 1e-20);

  // Positives coincide and negatives sit beyond the margin: zero contrastive loss.
  std::array<Tensor, 3> zeros;
  for (auto& z : zeros) z = Tensor::zeros({16, 2});
  for (auto r : kRelations) {
    // No embedding satisfies all three relations on a grid, so the other two are neutralised.
    SampledPairs one = sp;
    for (auto q : kRelations) {
      if (q == r) continue;
      auto& rs = one.relations[static_cast<std::size_t>(q)];
      rs.positive = rs.anchor;
      rs.negative.assign(rs.anchor.size(), std::nullopt);
    }
    std::vector<double> v(8, 0.0);
    for (std::size_t a = 0; a < 4; ++a) {
      // Members of one class share a point; different classes sit 2 apart.
      const double key = r == Relation::kRow ? static_cast<double>(a / 2)
                         : r == Relation::kCol ? static_cast<double>(a % 2)
                                               : static_cast<double>(a);
      v[2 * a] = 2.0 * key;
    }
    const Tensor placed({4, 2}, v);
    EXPECT_NEAR(relation_loss(zeros, placed, one, {0.0, 1.0, 1.0}).item(), 0.0, 1e-15) << relation_name(r);
  }
  EXPECT_THROW(relation_loss(logits, e, sp, {-1.0, 1.0, 1.0}), ContractError);
  std::array<Tensor, 3> bad{Tensor::zeros({3, 2}), logits[1], logits[2]};
  EXPECT_THROW(relation_loss(bad, e, sp, {}), DimensionError);
}

}  // namespace
}  // namespace ncgm
