#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ncgm/metrics.hpp"
#include "ncgm/model.hpp"

namespace ncgm {

struct TrainConfig {
  double lr = 1e-4;
  std::size_t plateau_patience = 100;
  double lr_decay = 0.1;
  std::size_t epochs = 200;
  std::uint64_t seed = 0;
  LossWeights loss;
  /// Monte-Carlo pairs per anchor and relation.
  std::size_t samples = 10;
  ModelConfig model;
  /// Validation F1 every this many epochs (0 = never); needs a validation set.
  std::size_t eval_every = 0;
  double threshold = 0.5;
  /// Written whenever the monitored loss improves; empty = no checkpoint.
  std::filesystem::path checkpoint;
  /// Stops after the epoch that crosses this wall-clock budget (0 = unlimited).
  double max_seconds = 0.0;
};

/// lr >= 0, 0 < lr_decay < 1, samples >= 2, threshold in (0, 1).
void check(const TrainConfig& cfg);

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> val_f1;
  /// "epoch=3 loss=1.234567 lr=1e-04 val_f1=0.912345"
  std::string line() const;
};

/// Divide-on-plateau rule: the first loss sets the best; each later epoch that
/// does not beat the best by more than 1e-6 counts towards the patience, and
/// reaching it multiplies lr by the decay and restarts the count.
class PlateauSchedule {
 public:
  PlateauSchedule(double lr, std::size_t patience, double decay) : lr_(lr), patience_(patience), decay_(decay) {}
  double observe(double loss);
  double lr() const { return lr_; }

 private:
  double lr_;
  std::size_t patience_;
  double decay_;
  double best_ = 0.0;
  bool has_best_ = false;
  std::size_t wait_ = 0;
};

/// Learning rate after replaying `losses` through the plateau rule from cfg.lr.
double lr_step(const std::vector<double>& losses, const TrainConfig& cfg);

struct TrainResult {
  ParamStore params;
  std::vector<EpochLog> log;
  /// Monitored loss at the best epoch (validation loss when a validation set is given).
  double best_loss = 0.0;
  std::size_t best_epoch = 0;
  bool stopped_by_budget = false;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Adam, one table per step, Monte-Carlo pair sampling. Throws NumericalError
/// naming the epoch and sample on a non-finite loss.
TrainResult train(const std::vector<TableSample>& data, const TrainConfig& cfg,
                  const std::vector<TableSample>& validation = {}, const EpochCallback& on_epoch = {});

/// Adds one sample's predictions (probabilities or 0/1) to an accumulator:
/// relation F1 on thresholded matrices, TEDS and BLEU on the recovered HTML.
void score_sample(MetricsAccumulator& acc, const TableSample& sample, const ScoreMatrix& cell, const ScoreMatrix& row,
                  const ScoreMatrix& col, double threshold);

/// Full unsampled inference over `data` plus post-processing and all metrics.
MetricsReport evaluate(const ParamStore& params, const ModelConfig& cfg, const std::vector<TableSample>& data,
                       double threshold = 0.5);
/// Same report with the ground truth fed in as the prediction.
MetricsReport evaluate_oracle(const std::vector<TableSample>& data, double threshold = 0.5);

/// Pooled relation F1 over a dataset, without post-processing.
double relation_f1_score(const ParamStore& params, const ModelConfig& cfg, const std::vector<TableSample>& data,
                         double threshold = 0.5);

}  // namespace ncgm
