#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ncgm/errors.hpp"
#include "ncgm/params.hpp"

namespace ncgm {
namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ncgm_test_" + name);
}

ParamStore small_store() {
  std::mt19937_64 rng(5);
  ParamStore s;
  ParamBuilder b(s, "net", rng);
  b.linear("fc", 3, 2);
  b.norm("ln", 2);
  return s;
}

TEST(Params, RegistrationOrderAndCounts) {
  const auto s = small_store();
  ASSERT_EQ(s.count(), 4u);
  EXPECT_EQ(s.all()[0].name, "net/fc/w");
  EXPECT_EQ(s.all()[1].name, "net/fc/b");
  EXPECT_EQ(s.all()[2].name, "net/ln/gamma");
  EXPECT_EQ(s.scalar_count(), 6u + 2u + 2u + 2u);
}

TEST(Params, DuplicateAndUnknownNamesThrow) {
  auto s = small_store();
  EXPECT_THROW(s.add("net/fc/w", Tensor::zeros({1})), ContractError);
  EXPECT_THROW(s.get("nope"), ContractError);
}

TEST(Params, GlorotRespectsBound) {
  std::mt19937_64 rng(1);
  const auto w = glorot(10, 20, rng);
  const double bound = std::sqrt(6.0 / 30.0);
  for (double v : w.data()) EXPECT_LE(std::abs(v), bound);
}

TEST(Params, LinearGainScalesWeights) {
  std::mt19937_64 r1(9), r2(9);
  ParamStore a, b;
  ParamBuilder(a, "", r1).linear("fc", 4, 3);
  ParamBuilder(b, "", r2).linear("fc", 4, 3, true, 2.5);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_DOUBLE_EQ(b.get("fc/w").at(i), 2.5 * a.get("fc/w").at(i));
}

TEST(Params, CheckpointRoundTripIsBitExact) {
  const auto s = small_store();
  const auto path = temp_path("roundtrip.bin");
  save_checkpoint(s, path);
  const auto r = read_checkpoint(path);
  EXPECT_TRUE(r.same_values(s));
  auto t = small_store();
  for (auto& p : t.all())
    for (auto& v : p.value.mutable_data()) v = 0.0;
  load_checkpoint(t, path);
  EXPECT_TRUE(t.same_values(s));
  std::filesystem::remove(path);
}

TEST(Params, CheckpointRejectsGarbageAndMismatch) {
  const auto path = temp_path("garbage.bin");
  {
    std::ofstream os(path, std::ios::binary);
    os << "not a checkpoint";
  }
  EXPECT_THROW(read_checkpoint(path), DataError);
  EXPECT_THROW(read_checkpoint(temp_path("missing.bin")), DataError);

  ParamStore other;
  other.add("x", Tensor::zeros({2}, true));
  save_checkpoint(other, path);
  auto s = small_store();
  EXPECT_THROW(load_checkpoint(s, path), DataError);
  std::filesystem::remove(path);
}

TEST(Params, AdamFirstStepMovesByLearningRate) {
  // With bias correction the first step is lr * g / (|g| + eps') = lr * sign(g).
  ParamStore s;
  s.add("w", Tensor::vector({1.0, -2.0, 3.0}, true));
  Adam adam(s);
  std::map<std::string, Tensor> g{{"w", Tensor::vector({0.5, -4.0, 0.0})}};
  adam.step(s, g, 0.1);
  EXPECT_NEAR(s.get("w").at(0), 0.9, 1e-7);
  EXPECT_NEAR(s.get("w").at(1), -1.9, 1e-7);
  EXPECT_DOUBLE_EQ(s.get("w").at(2), 3.0);
}

TEST(Params, AdamSecondStepMatchesHandComputation) {
  ParamStore s;
  s.add("w", Tensor::vector({0.0}, true));
  Adam adam(s, 0.9, 0.999, 1e-8);
  adam.step(s, {{"w", Tensor::vector({1.0})}}, 0.01);
  adam.step(s, {{"w", Tensor::vector({3.0})}}, 0.01);
  const double m = 0.9 * 0.1 + 0.1 * 3.0;
  const double v = 0.999 * 0.001 + 0.001 * 9.0;
  const double step2 = 0.01 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  const double step1 = 0.01 * 1.0 / (1.0 + 1e-8);
  EXPECT_NEAR(s.get("w").at(0), -step1 - step2, 1e-12);
  EXPECT_EQ(adam.steps(), 2u);
}

TEST(Params, BackwardCoversEveryParameter) {
  const auto s = small_store();
  const auto x = Tensor::matrix({{1, 2, 3}});
  const auto loss = sum(linear(x, ParamScope(s, "net"), "fc"));
  const auto g = backward(loss, s);
  ASSERT_EQ(g.size(), s.count());
  EXPECT_DOUBLE_EQ(g.at("net/fc/w").at(0), 1.0);
  EXPECT_DOUBLE_EQ(g.at("net/fc/w").at(5), 3.0);
  for (double v : g.at("net/ln/gamma").data()) EXPECT_EQ(v, 0.0);
}

}  // namespace
}  // namespace ncgm
