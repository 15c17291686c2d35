#include "ncgm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "ncgm/errors.hpp"

namespace ncgm {

void check(const TrainConfig& cfg) {
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw ContractError("TrainConfig: lr must be >= 0");
  if (!(cfg.lr_decay > 0.0 && cfg.lr_decay < 1.0)) throw ContractError("TrainConfig: lr_decay must be in (0, 1)");
  if (cfg.samples < 2) throw ContractError("TrainConfig: Monte-Carlo sample size must be >= 2");
  if (!(cfg.threshold > 0.0 && cfg.threshold < 1.0)) throw ContractError("TrainConfig: threshold must be in (0, 1)");
  if (cfg.loss.lambda_class < 0.0 || cfg.loss.lambda_con < 0.0) {
    throw ContractError("TrainConfig: loss weights must be non-negative");
  }
  check(cfg.model);
}

std::string EpochLog::line() const {
  char buf[160];
  if (val_f1) {
    std::snprintf(buf, sizeof buf, "epoch=%zu loss=%.9f lr=%.3e val_f1=%.6f", epoch, loss, lr, *val_f1);
  } else {
    std::snprintf(buf, sizeof buf, "epoch=%zu loss=%.9f lr=%.3e val_f1=nan", epoch, loss, lr);
  }
  return buf;
}

double PlateauSchedule::observe(double loss) {
  if (!has_best_ || loss < best_ - 1e-6) {
    best_ = loss;
    has_best_ = true;
    wait_ = 0;
    return lr_;
  }
  if (++wait_ >= patience_) {
    lr_ *= decay_;
    wait_ = 0;
  }
  return lr_;
}

double lr_step(const std::vector<double>& losses, const TrainConfig& cfg) {
  PlateauSchedule s(cfg.lr, cfg.plateau_patience, cfg.lr_decay);
  for (double l : losses) s.observe(l);
  return s.lr();
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

const RelationMatrices& relations_of(const TableSample& s, std::optional<RelationMatrices>& scratch) {
  if (s.relations) return *s.relations;
  scratch = build_adjacency(s.elements);
  return *scratch;
}

std::vector<Tensor> prepare_images(const std::vector<TableSample>& data, const ModelConfig& cfg) {
  std::vector<Tensor> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(image_tensor(s.image, cfg.features.image_size));
  return out;
}

double sampled_loss(const std::vector<TableSample>& data, const std::vector<Tensor>& images, const ParamStore& params,
                    const TrainConfig& cfg, std::uint64_t seed) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::optional<RelationMatrices> scratch;
    const auto sampled = monte_carlo_sample(relations_of(data[i], scratch), cfg.samples, mix(seed, i));
    total += training_loss(data[i], images[i], params, cfg.model, sampled, cfg.loss).item();
  }
  return total / static_cast<double>(data.size());
}

double pooled_f1(const std::vector<TableSample>& data, const std::vector<Tensor>& images, const ParamStore& params,
                 const ModelConfig& cfg, double threshold) {
  PairCounts all;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto pred = predict(data[i], images[i], params, cfg).binarize(threshold);
    std::optional<RelationMatrices> scratch;
    const auto& gt = relations_of(data[i], scratch);
    for (auto r : kRelations) all += relation_counts(pred.get(r), gt.get(r));
  }
  return PRF::from(all).f1;
}

}  // namespace

TrainResult train(const std::vector<TableSample>& data, const TrainConfig& cfg,
                  const std::vector<TableSample>& validation, const EpochCallback& on_epoch) {
  check(cfg);
  if (data.empty()) throw ContractError("train: empty dataset");
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto problems = validate(data[i]);
    if (!problems.empty()) throw DataError("train: sample " + std::to_string(i) + " is invalid: " + problems.front());
  }
  const auto start = std::chrono::steady_clock::now();
  TrainResult result{init_model(cfg.model, cfg.seed), {}, 0.0, 0, false};
  auto& params = result.params;
  Adam adam(params);
  PlateauSchedule schedule(cfg.lr, cfg.plateau_patience, cfg.lr_decay);
  const auto images = prepare_images(data, cfg.model);
  const auto val_images = prepare_images(validation, cfg.model);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::optional<double> best;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = schedule.lr();
    std::mt19937_64 shuffle_rng(mix(cfg.seed, 1000003 * epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double total = 0.0;
    for (auto i : order) {
      std::optional<RelationMatrices> scratch;
      const auto sampled = monte_carlo_sample(relations_of(data[i], scratch), cfg.samples, mix(mix(cfg.seed, epoch), i));
      const auto loss = training_loss(data[i], images[i], params, cfg.model, sampled, cfg.loss);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", sample " + std::to_string(i));
      }
      total += value;
      adam.step(params, backward(loss, params), lr);
#ifndef NDEBUG
      if (!params.all_finite()) {
        throw NumericalError("non-finite parameters after epoch " + std::to_string(epoch) + ", sample " +
                             std::to_string(i));
      }
#endif
    }
    EpochLog entry{epoch, total / static_cast<double>(data.size()), lr, std::nullopt};
    if (!validation.empty() && cfg.eval_every > 0 && epoch % cfg.eval_every == 0) {
      entry.val_f1 = pooled_f1(validation, val_images, params, cfg.model, cfg.threshold);
    }
    schedule.observe(entry.loss);

    const double monitored =
        validation.empty() ? entry.loss : sampled_loss(validation, val_images, params, cfg, mix(cfg.seed, 77));
    if (!best || monitored < *best) {
      best = monitored;
      result.best_loss = monitored;
      result.best_epoch = epoch;
      if (!cfg.checkpoint.empty()) save_model(params, cfg.model, cfg.checkpoint);
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (cfg.max_seconds > 0.0 && elapsed > cfg.max_seconds && epoch < cfg.epochs) {
      result.stopped_by_budget = true;
      break;
    }
  }
  return result;
}

void score_sample(MetricsAccumulator& acc, const TableSample& sample, const ScoreMatrix& cell, const ScoreMatrix& row,
                  const ScoreMatrix& col, double threshold) {
  const auto n = sample.size();
  RelationMatrices pred{AdjacencyMatrix(n), AdjacencyMatrix(n), AdjacencyMatrix(n)};
  const ScoreMatrix* scores[] = {&cell, &row, &col};
  for (auto r : kRelations) {
    const auto& s = *scores[static_cast<std::size_t>(r)];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) pred.get(r).set(i, j, s(i, j) >= threshold);
  }
  std::optional<RelationMatrices> scratch;
  const auto& gt = relations_of(sample, scratch);

  const auto spans = recover_spans(cell, row, col, sample.elements, threshold);
  const auto pred_html = to_html(spans, /*drop_conflicts=*/true);
  std::vector<std::string> gt_html = sample.html;
  if (gt_html.empty()) {
    std::vector<Span> gt_spans;
    for (const auto& e : sample.elements) {
      if (!e.gt_span) throw DataError("evaluate: element without ground-truth span");
      gt_spans.push_back(*e.gt_span);
    }
    gt_html = to_html(gt_spans);
  }
  acc.add(pred, gt, tree_from_html(pred_html), tree_from_html(gt_html), pred_html, gt_html);
}

MetricsReport evaluate(const ParamStore& params, const ModelConfig& cfg, const std::vector<TableSample>& data,
                       double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ContractError("evaluate: threshold must be in (0, 1)");
  MetricsAccumulator acc;
  for (const auto& s : data) {
    const auto pred = predict(s, image_tensor(s.image, cfg.features.image_size), params, cfg);
    score_sample(acc, s, pred.cell, pred.row, pred.col, threshold);
  }
  return acc.report();
}

MetricsReport evaluate_oracle(const std::vector<TableSample>& data, double threshold) {
  MetricsAccumulator acc;
  for (const auto& s : data) {
    std::optional<RelationMatrices> scratch;
    const auto& gt = relations_of(s, scratch);
    score_sample(acc, s, ScoreMatrix::from(gt.cell), ScoreMatrix::from(gt.row), ScoreMatrix::from(gt.col), threshold);
  }
  return acc.report();
}

double relation_f1_score(const ParamStore& params, const ModelConfig& cfg, const std::vector<TableSample>& data,
                         double threshold) {
  return pooled_f1(data, prepare_images(data, cfg), params, cfg, threshold);
}

}  // namespace ncgm
