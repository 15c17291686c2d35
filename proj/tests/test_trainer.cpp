#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "gradient_cases.hpp"
#include "ncgm/errors.hpp"
#include "ncgm/trainer.hpp"

namespace ncgm {
namespace {

std::vector<TableSample> tiny_tables(std::uint64_t first, std::size_t count) {
  std::vector<TableSample> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_table(first + i, testing::tiny_gen_params()));
  return out;
}

TrainConfig tiny_train(std::size_t epochs) {
  TrainConfig cfg;
  cfg.model = testing::tiny_model_config();
  cfg.epochs = epochs;
  cfg.samples = 4;
  cfg.seed = 3;
  return cfg;
}

TEST(Schedule, DividesAfterPatienceWithoutImprovement) {
  TrainConfig cfg;
  cfg.lr = 1.0;
  cfg.plateau_patience = 2;
  cfg.lr_decay = 0.1;
  EXPECT_DOUBLE_EQ(lr_step({}, cfg), 1.0);
  EXPECT_DOUBLE_EQ(lr_step({3, 2, 1, 0.5}, cfg), 1.0);
  EXPECT_DOUBLE_EQ(lr_step({1, 1}, cfg), 1.0);
  EXPECT_NEAR(lr_step({1, 1, 1}, cfg), 0.1, 1e-15);
  // The count restarts after a division.
  EXPECT_NEAR(lr_step({1, 1, 1, 1}, cfg), 0.1, 1e-15);
  EXPECT_NEAR(lr_step({1, 1, 1, 1, 1}, cfg), 0.01, 1e-15);
  // Gains of at most 1e-6 do not count as improvement.
  EXPECT_NEAR(lr_step({1, 1 - 5e-7, 1 - 9e-7}, cfg), 0.1, 1e-15);
  EXPECT_DOUBLE_EQ(lr_step({1, 1 - 2e-6, 1 - 4e-6}, cfg), 1.0);
  // An improvement resets the wait.
  EXPECT_DOUBLE_EQ(lr_step({1, 2, 0.5, 2}, cfg), 1.0);
}

TEST(Schedule, EpochLogLine) {
  EXPECT_EQ((EpochLog{3, 1.25, 1e-4, std::nullopt}.line()), "epoch=3 loss=1.250000000 lr=1.000e-04 val_f1=nan");
  EXPECT_EQ((EpochLog{12, 0.5, 1e-5, 0.75}.line()), "epoch=12 loss=0.500000000 lr=1.000e-05 val_f1=0.750000");
}

TEST(Trainer, CheckRejectsBadConfig) {
  TrainConfig cfg = tiny_train(1);
  cfg.lr = -1;
  EXPECT_THROW(check(cfg), ContractError);
  cfg = tiny_train(1);
  cfg.lr_decay = 1.0;
  EXPECT_THROW(check(cfg), ContractError);
  cfg = tiny_train(1);
  cfg.samples = 1;
  EXPECT_THROW(check(cfg), ContractError);
  cfg = tiny_train(1);
  cfg.threshold = 1.0;
  EXPECT_THROW(check(cfg), ContractError);
  EXPECT_THROW(train({}, tiny_train(1)), ContractError);
}

TEST(Trainer, ZeroLearningRateLeavesParametersUnchanged) {
  auto cfg = tiny_train(2);
  cfg.lr = 0.0;
  const auto result = train(tiny_tables(0, 2), cfg);
  EXPECT_TRUE(result.params.same_values(init_model(cfg.model, cfg.seed)));
  ASSERT_EQ(result.log.size(), 2u);
  for (const auto& e : result.log) EXPECT_TRUE(std::isfinite(e.loss));
}

TEST(Trainer, ZeroEpochsReturnsInitialModel) {
  const auto cfg = tiny_train(0);
  const auto result = train(tiny_tables(0, 1), cfg);
  EXPECT_TRUE(result.log.empty());
  EXPECT_TRUE(result.params.same_values(init_model(cfg.model, cfg.seed)));
}

TEST(Trainer, SameSeedSameRun) {
  const auto data = tiny_tables(0, 2);
  const auto cfg = tiny_train(2);
  const auto a = train(data, cfg), b = train(data, cfg);
  EXPECT_TRUE(a.params.same_values(b.params));
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].loss, b.log[i].loss);
  auto other = cfg;
  other.seed = 4;
  EXPECT_FALSE(train(data, other).params.same_values(a.params));
}

TEST(Trainer, LossFallsOnASingleTable) {
  auto cfg = tiny_train(60);
  cfg.lr = 1e-3;
  cfg.model.head.hidden = 64;
  cfg.loss.lambda_con = 0.0;
  const auto result = train(tiny_tables(1, 1), cfg);
  auto window = [&](std::size_t from) {
    double s = 0.0;
    for (std::size_t i = from; i < from + 5; ++i) s += result.log[i].loss;
    return s / 5.0;
  };
  EXPECT_LT(window(55), 0.5 * window(0));
}

TEST(Trainer, ValidationCallbackAndCheckpoint) {
  const auto path = std::filesystem::temp_directory_path() / "ncgm_trainer_ckpt.bin";
  std::filesystem::remove(path);
  auto cfg = tiny_train(3);
  cfg.eval_every = 2;
  cfg.checkpoint = path;
  std::vector<EpochLog> seen;
  const auto result = train(tiny_tables(0, 2), cfg, tiny_tables(50, 1), [&](const EpochLog& e) { seen.push_back(e); });
  ASSERT_EQ(seen.size(), 3u);
  EXPECT_FALSE(seen[0].val_f1.has_value());
  ASSERT_TRUE(seen[1].val_f1.has_value());
  EXPECT_GE(*seen[1].val_f1, 0.0);
  EXPECT_LE(*seen[1].val_f1, 1.0);
  EXPECT_GE(result.best_epoch, 1u);
  ASSERT_TRUE(std::filesystem::exists(path));
  const auto [params, loaded_cfg] = load_model(path);
  EXPECT_EQ(config_to_kv(loaded_cfg), config_to_kv(cfg.model));
  EXPECT_EQ(params.count(), result.params.count());
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".cfg");
}

TEST(Trainer, WallClockBudgetStopsEarly) {
  auto cfg = tiny_train(5);
  cfg.max_seconds = 1e-9;
  const auto result = train(tiny_tables(0, 1), cfg);
  EXPECT_TRUE(result.stopped_by_budget);
  EXPECT_EQ(result.log.size(), 1u);
}

TEST(Trainer, InvalidSampleIsRejected) {
  auto bad = tiny_tables(0, 1);
  bad[0].elements[0].box.w = -1;
  EXPECT_THROW(train(bad, tiny_train(1)), DataError);
}

TEST(Evaluate, OracleScoresPerfectly) {
  std::vector<TableSample> data;
  for (std::uint64_t s = 0; s < 10; ++s) data.push_back(generate_table(s, GenParams{}));
  const auto r = evaluate_oracle(data);
  EXPECT_EQ(r.samples, 10u);
  EXPECT_DOUBLE_EQ(r.overall.f1, 1.0);
  EXPECT_DOUBLE_EQ(r.teds, 1.0);
  EXPECT_DOUBLE_EQ(r.bleu, 1.0);
}

TEST(Evaluate, ModelReportIsBounded) {
  const auto cfg = testing::tiny_model_config();
  const auto params = init_model(cfg, 1);
  const auto data = tiny_tables(0, 2);
  const auto r = evaluate(params, cfg, data);
  EXPECT_EQ(r.samples, 2u);
  EXPECT_GE(r.teds, 0.0);
  EXPECT_LE(r.teds, 1.0);
  const double f1 = relation_f1_score(params, cfg, data);
  EXPECT_GE(f1, 0.0);
  EXPECT_LE(f1, 1.0);
  EXPECT_THROW(evaluate(params, cfg, data, 1.5), ContractError);
}

}  // namespace
}  // namespace ncgm
