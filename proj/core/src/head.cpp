#include "ncgm/head.hpp"

#include <algorithm>
#include <iterator>

#include "ncgm/errors.hpp"

namespace ncgm {

PairBatch make_pairs(const Tensor& e, std::vector<PairIndex> pairs) {
  if (pairs.empty()) throw ContractError("make_pairs: no pairs");
  std::vector<long> first, second;
  first.reserve(pairs.size());
  second.reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    if (i >= e.rows() || j >= e.rows()) throw ContractError("make_pairs: pair index out of range");
    first.push_back(static_cast<long>(i));
    second.push_back(static_cast<long>(j));
  }
  const Tensor parts[] = {gather_rows(e, first), gather_rows(e, second)};
  return {std::move(pairs), concat_cols(parts)};
}

PairBatch pair_embeddings(const Tensor& e) {
  if (e.rank() != 2) throw DimensionError("pair_embeddings: expected N x d_e");
  std::vector<PairIndex> pairs;
  pairs.reserve(e.rows() * e.rows());
  for (std::size_t i = 0; i < e.rows(); ++i)
    for (std::size_t j = 0; j < e.rows(); ++j) pairs.emplace_back(i, j);
  return make_pairs(e, std::move(pairs));
}

void init_head_params(ParamStore& store, std::size_t embed_width, const HeadConfig& cfg, std::mt19937_64& rng) {
  for (auto r : kRelations) {
    ParamBuilder b(store, std::string("head/") + relation_name(r), rng);
    b.linear("fc1", 2 * embed_width, cfg.hidden);
    b.linear("fc2", cfg.hidden, cfg.hidden);
    b.linear("fc3", cfg.hidden, cfg.hidden);
    b.linear("out", cfg.hidden, 2);
  }
}

Tensor relation_logits(const Tensor& vectors, Relation rel, const ParamStore& store) {
  const ParamScope p(store, std::string("head/") + relation_name(rel));
  const auto& w1 = p["fc1/w"];
  if (vectors.rank() != 2 || vectors.cols() != w1.rows()) {
    throw DimensionError("relation head expects pair width " + std::to_string(w1.rows()) + ", got " +
                         shape_str(vectors.shape()));
  }
  auto h = relu(linear(vectors, p, "fc1"));
  h = relu(linear(h, p, "fc2"));
  h = relu(linear(h, p, "fc3"));
  return linear(h, p, "out");
}

RelationLogits classify_relations(const PairBatch& batch, const ParamStore& store) {
  RelationLogits out;
  for (auto r : kRelations) {
    const auto i = static_cast<std::size_t>(r);
    out.logits[i] = relation_logits(batch.vectors, r, store);
    out.probabilities[i] = softmax_rows(out.logits[i]).detach();
  }
  return out;
}

namespace {

// k draws from `pool`: distinct while the pool lasts, then with replacement.
std::vector<std::size_t> draw(std::vector<std::size_t> pool, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  if (pool.empty() || k == 0) return out;
  std::shuffle(pool.begin(), pool.end(), rng);
  for (std::size_t i = 0; i < std::min(k, pool.size()); ++i) out.push_back(pool[i]);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  while (out.size() < k) out.push_back(pool[pick(rng)]);
  return out;
}

}  // namespace

SampledPairs monte_carlo_sample(const RelationMatrices& gt, std::size_t samples, std::uint64_t seed) {
  if (samples < 2) throw ContractError("monte_carlo_sample: sample size must be >= 2");
  const auto n = gt.size();
  std::mt19937_64 rng(seed);
  SampledPairs out;
  for (auto r : kRelations) {
    const auto& m = gt.get(r);
    auto& rs = out.relations[static_cast<std::size_t>(r)];
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::size_t> pos, neg;
      for (std::size_t j = 0; j < n; ++j) (m(i, j) ? pos : neg).push_back(j);
      const std::size_t want_pos = neg.empty() ? samples : (samples + 1) / 2;
      const auto p = draw(pos, want_pos, rng);
      const auto q = draw(neg, samples - want_pos, rng);
      for (auto j : p) {
        rs.pairs.emplace_back(i, j);
        rs.labels.push_back(1);
      }
      for (auto j : q) {
        rs.pairs.emplace_back(i, j);
        rs.labels.push_back(0);
      }
      // Contrastive positive: a drawn non-self partner, else any non-self positive, else the anchor.
      std::size_t positive = i;
      if (auto it = std::find_if(p.begin(), p.end(), [i](std::size_t j) { return j != i; }); it != p.end()) {
        positive = *it;
      } else {
        std::vector<std::size_t> others;
        std::copy_if(pos.begin(), pos.end(), std::back_inserter(others), [i](std::size_t j) { return j != i; });
        if (!others.empty()) positive = draw(others, 1, rng).front();
      }
      rs.anchor.push_back(i);
      rs.positive.push_back(positive);
      rs.negative.push_back(q.empty() ? std::nullopt : std::optional<std::size_t>(q.front()));
    }
  }
  return out;
}

Tensor relation_loss(const std::array<Tensor, 3>& logits, const Tensor& e, const SampledPairs& sampled,
                     const LossWeights& weights) {
  if (weights.lambda_class < 0.0 || weights.lambda_con < 0.0) {
    throw ContractError("relation_loss: loss weights must be non-negative");
  }
  Tensor total = Tensor::scalar(0.0);
  for (auto r : kRelations) {
    const auto i = static_cast<std::size_t>(r);
    const auto& rs = sampled.relations[i];
    if (logits[i].rows() != rs.pairs.size()) {
      throw DimensionError(std::string("relation_loss: ") + relation_name(r) + " logits do not match sampled pairs");
    }
    const auto nll = scale(mean(pick(log_softmax_rows(logits[i]), rs.labels)), -1.0);

    std::vector<long> a(rs.anchor.begin(), rs.anchor.end());
    std::vector<long> p(rs.positive.begin(), rs.positive.end());
    auto con = sum(row_sq_norm(sub(gather_rows(e, a), gather_rows(e, p))));
    std::vector<long> na, nn;
    for (std::size_t k = 0; k < rs.anchor.size(); ++k) {
      if (!rs.negative[k]) continue;
      na.push_back(static_cast<long>(rs.anchor[k]));
      nn.push_back(static_cast<long>(*rs.negative[k]));
    }
    if (!na.empty()) {
      const auto dist = row_sq_norm(sub(gather_rows(e, na), gather_rows(e, nn)));
      con = add(con, sum(relu(add_scalar(scale(dist, -1.0), weights.margin))));
    }
    con = scale(con, 1.0 / static_cast<double>(rs.anchor.size()));
    total = add(total, add(scale(nll, weights.lambda_class), scale(con, weights.lambda_con)));
  }
  return total;
}

}  // namespace ncgm
