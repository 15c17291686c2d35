#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "ncgm/datamodel.hpp"
#include "ncgm/params.hpp"
#include "ncgm/tensor.hpp"

namespace ncgm {

using PairIndex = std::pair<std::size_t, std::size_t>;

/// Pair vectors u_ij = e_i || e_j.
struct PairBatch {
  std::vector<PairIndex> pairs;
  Tensor vectors;
};

/// All N^2 ordered pairs, self-pairs included, row-major (i, j).
PairBatch pair_embeddings(const Tensor& e);
PairBatch make_pairs(const Tensor& e, std::vector<PairIndex> pairs);

struct HeadConfig {
  std::size_t hidden = 256;
};

/// Registers head/{cell,row,col}/fc{1,2,3} and head/{rel}/out for pair width 2*d_e.
void init_head_params(ParamStore& store, std::size_t embed_width, const HeadConfig& cfg, std::mt19937_64& rng);

/// P x 2 logits for one relation: 2d_e -> 256 -> 256 -> 256 -> 2 with ReLU in between.
Tensor relation_logits(const Tensor& vectors, Relation rel, const ParamStore& store);

struct RelationLogits {
  std::array<Tensor, 3> logits;         // indexed by Relation
  std::array<Tensor, 3> probabilities;  // row-wise softmax of logits
  const Tensor& operator[](Relation r) const { return logits[static_cast<std::size_t>(r)]; }
  /// Probability of class 1 ("same cell/row/column") for pair p.
  double positive(Relation r, std::size_t p) const { return probabilities[static_cast<std::size_t>(r)].at(2 * p + 1); }
};

RelationLogits classify_relations(const PairBatch& batch, const ParamStore& store);

/// Monte-Carlo pair draw for one relation.
struct RelationSample {
  std::vector<PairIndex> pairs;
  std::vector<std::size_t> labels;  // 1 = same cell/row/column
  /// Per anchor: one positive partner (a non-self one when available) and an
  /// optional negative partner for the contrastive term.
  std::vector<std::size_t> anchor;
  std::vector<std::size_t> positive;
  std::vector<std::optional<std::size_t>> negative;
};

struct SampledPairs {
  std::array<RelationSample, 3> relations;  // indexed by Relation
  const RelationSample& operator[](Relation r) const { return relations[static_cast<std::size_t>(r)]; }
};

/// S pairs per anchor and relation: up to ceil(S/2) positives, the rest negatives,
/// without replacement while a class lasts and with replacement after.
SampledPairs monte_carlo_sample(const RelationMatrices& gt, std::size_t samples, std::uint64_t seed);

struct LossWeights {
  double lambda_class = 1.0;
  double lambda_con = 1.0;
  double margin = 1.0;
};

/// Sum over relations of lambda1 * mean NLL + lambda2 * mean contrastive term.
/// `logits[r]` must hold logits for `sampled[r].pairs` in order.
Tensor relation_loss(const std::array<Tensor, 3>& logits, const Tensor& e, const SampledPairs& sampled,
                     const LossWeights& weights);

}  // namespace ncgm
