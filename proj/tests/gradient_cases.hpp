#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ncgm/attention.hpp"
#include "ncgm/collab.hpp"
#include "ncgm/head.hpp"
#include "ncgm/model.hpp"
#include "ncgm/synth.hpp"
#include "support.hpp"

namespace ncgm::testing {

struct GradCase {
  std::string name;
  std::function<GradReport(std::uint64_t seed)> run;
};

inline ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.features.d = 8;
  cfg.features.image_size = 32;
  cfg.features.conv_channels = 2;
  cfg.features.vocab = 64;
  cfg.features.text_kernel = 3;
  cfg.blocks.attn = {2, 8, 4, 4};
  cfg.blocks.layers = 2;
  cfg.blocks.max_elements = 8;
  cfg.head.hidden = 16;
  return cfg;
}

inline GenParams tiny_gen_params() {
  GenParams p;
  p.min_rows = 2;
  p.max_rows = 2;
  p.min_cols = 2;
  p.max_cols = 3;
  p.max_elements = 8;
  return p;
}

namespace grad_detail {

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

inline GradReport check_op(std::uint64_t seed, const std::vector<Shape>& shapes, const Fn& op) {
  std::mt19937_64 rng(seed);
  std::vector<Tensor> in;
  for (const auto& s : shapes) in.push_back(random_tensor(s, rng));
  return gradcheck([&](const std::vector<Tensor>& x) { return weighted_sum(op(x), seed + 1); }, in);
}

inline std::vector<Tensor> store_values(const ParamStore& store) {
  std::vector<Tensor> out;
  for (const auto& p : store.all()) out.push_back(p.value);
  return out;
}

/// Zero-initialised biases on blank image regions sit exactly on ReLU kinks,
/// so every parameter is nudged to a generic point first.
inline void jitter(ParamStore& store, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (auto& p : store.all())
    for (auto& v : p.value.mutable_data()) v += u(rng);
}

inline GradReport check_params(ParamStore& store, const std::function<Tensor()>& loss, std::size_t max_coords,
                               std::uint64_t seed) {
  jitter(store, seed + 17);
  auto in = store_values(store);
  GradReport total;
  // Each tensor gets its own coordinate sample so small tensors are always covered.
  for (auto& t : in) {
    std::vector<Tensor> one{t};
    const auto rep = gradcheck([&](const std::vector<Tensor>&) { return loss(); }, one, 1e-6, 1e-3, max_coords, seed);
    total.max_rel_error = std::max(total.max_rel_error, rep.max_rel_error);
    total.checked += rep.checked;
  }
  return total;
}

}  // namespace grad_detail

/// Every differentiable primitive and composite, each checked at a seeded random point.
inline std::vector<GradCase> gradient_cases() {
  using grad_detail::check_op;
  using V = const std::vector<Tensor>&;
  std::vector<GradCase> c;
  c.push_back({"matmul", [](auto s) { return check_op(s, {{3, 4}, {4, 5}}, [](V x) { return matmul(x[0], x[1]); }); }});
  c.push_back({"transpose", [](auto s) { return check_op(s, {{3, 4}}, [](V x) { return transpose(x[0]); }); }});
  c.push_back({"add", [](auto s) { return check_op(s, {{3, 4}, {3, 4}}, [](V x) { return add(x[0], x[1]); }); }});
  c.push_back({"sub", [](auto s) { return check_op(s, {{3, 4}, {3, 4}}, [](V x) { return sub(x[0], x[1]); }); }});
  c.push_back({"mul", [](auto s) { return check_op(s, {{3, 4}, {3, 4}}, [](V x) { return mul(x[0], x[1]); }); }});
  c.push_back({"scale", [](auto s) { return check_op(s, {{3, 4}}, [](V x) { return scale(x[0], -1.7); }); }});
  c.push_back({"add_scalar", [](auto s) { return check_op(s, {{3, 4}}, [](V x) { return add_scalar(x[0], 0.3); }); }});
  c.push_back({"add_bias", [](auto s) { return check_op(s, {{3, 4}, {4}}, [](V x) { return add_bias(x[0], x[1]); }); }});
  c.push_back({"relu", [](auto s) { return check_op(s, {{4, 5}}, [](V x) { return relu(x[0]); }); }});
  c.push_back({"softmax_rows", [](auto s) { return check_op(s, {{3, 5}}, [](V x) { return softmax_rows(x[0]); }); }});
  c.push_back(
      {"log_softmax_rows", [](auto s) { return check_op(s, {{3, 5}}, [](V x) { return log_softmax_rows(x[0]); }); }});
  c.push_back({"layer_norm", [](auto s) {
                 return check_op(s, {{3, 6}, {6}, {6}}, [](V x) { return layer_norm(x[0], x[1], x[2]); });
               }});
  c.push_back({"sum", [](auto s) { return check_op(s, {{3, 4}}, [](V x) { return sum(x[0]); }); }});
  c.push_back({"mean", [](auto s) { return check_op(s, {{3, 4}}, [](V x) { return mean(x[0]); }); }});
  c.push_back({"row_sq_norm", [](auto s) { return check_op(s, {{3, 4}}, [](V x) { return row_sq_norm(x[0]); }); }});
  c.push_back({"max_over_rows", [](auto s) { return check_op(s, {{5, 4}}, [](V x) { return max_over_rows(x[0]); }); }});
  c.push_back({"pick", [](auto s) {
                 return check_op(s, {{4, 3}}, [](V x) {
                   const std::size_t idx[] = {2, 0, 1, 2};
                   return pick(x[0], idx);
                 });
               }});
  c.push_back({"reshape", [](auto s) { return check_op(s, {{3, 4}}, [](V x) { return reshape(x[0], {2, 6}); }); }});
  c.push_back({"concat_rows", [](auto s) {
                 return check_op(s, {{2, 3}, {4, 3}}, [](V x) { return concat_rows(std::span<const Tensor>(x)); });
               }});
  c.push_back({"concat_cols", [](auto s) {
                 return check_op(s, {{3, 2}, {3, 4}}, [](V x) { return concat_cols(std::span<const Tensor>(x)); });
               }});
  c.push_back({"slice_rows", [](auto s) { return check_op(s, {{5, 3}}, [](V x) { return slice_rows(x[0], 1, 4); }); }});
  c.push_back({"slice_cols", [](auto s) { return check_op(s, {{3, 5}}, [](V x) { return slice_cols(x[0], 2, 5); }); }});
  c.push_back({"gather_rows", [](auto s) {
                 return check_op(s, {{4, 3}}, [](V x) {
                   const long idx[] = {3, -1, 0, 3, 1};
                   return gather_rows(x[0], idx);
                 });
               }});
  c.push_back({"conv2d", [](auto s) {
                 return check_op(s, {{2, 7, 6}, {3, 2, 3, 3}, {3}},
                                 [](V x) { return conv2d(x[0], x[1], x[2], 2, 1); });
               }});
  c.push_back({"region_avg_pool", [](auto s) {
                 return check_op(s, {{2, 4, 5}}, [](V x) {
                   const CellRect r[] = {{0, 1, 0, 2}, {2, 3, 4, 4}, {0, 3, 0, 4}};
                   return region_avg_pool(x[0], r);
                 });
               }});

  const AttentionConfig attn{2, 8, 4, 4};
  c.push_back({"mha", [attn](auto s) {
                 std::mt19937_64 rng(s);
                 ParamStore store;
                 init_mha_params(ParamBuilder(store, "m", rng), attn);
                 std::vector<Tensor> in{random_tensor({3, 8}, rng), random_tensor({5, 8}, rng),
                                        random_tensor({5, 8}, rng)};
                 for (auto& p : grad_detail::store_values(store)) in.push_back(p);
                 const ParamScope scope(store, "m");
                 return gradcheck(
                     [&](V x) { return weighted_sum(mha(x[0], x[1], x[2], attn, scope).first, s + 1); }, in);
               }});
  c.push_back({"memory_compress", [](auto s) {
                 std::mt19937_64 rng(s);
                 ParamStore store;
                 init_compress_params(ParamBuilder(store, "mc", rng), 4, 3);
                 std::vector<Tensor> in{random_tensor({7, 4}, rng)};
                 for (auto& p : grad_detail::store_values(store)) in.push_back(p);
                 const ParamScope scope(store, "mc");
                 return gradcheck([&](V x) { return weighted_sum(memory_compress(x[0], 3, scope), s + 1); }, in);
               }});
  c.push_back({"cmha", [attn](auto s) {
                 std::mt19937_64 rng(s);
                 ParamStore store;
                 init_cmha_params(ParamBuilder(store, "c", rng), attn, 2);
                 std::vector<Tensor> in{random_tensor({3, 8}, rng), random_tensor({6, 8}, rng)};
                 for (auto& p : grad_detail::store_values(store)) in.push_back(p);
                 const ParamScope scope(store, "c");
                 return gradcheck(
                     [&](V x) { return weighted_sum(cmha(x[0], x[1], x[1], attn, scope).first, s + 1); }, in);
               }});
  c.push_back({"ece_layer", [attn](auto s) {
                 std::mt19937_64 rng(s);
                 ParamStore store;
                 ParamBuilder b(store, "e", rng);
                 b.linear("edge", 16, 8);
                 init_cmha_params(b.sub("cmha"), attn, compress_group_size(6, 4));
                 std::vector<Tensor> in{random_tensor({4, 8}, rng)};
                 for (auto& p : grad_detail::store_values(store)) in.push_back(p);
                 const ParamScope scope(store, "e");
                 return gradcheck([&](V x) { return weighted_sum(ece_layer(x[0], scope, attn).first, s + 1); }, in);
               }});
  c.push_back({"ccs_layer", [attn](auto s) {
                 std::mt19937_64 rng(s);
                 ParamStore store;
                 init_cmha_params(ParamBuilder(store, "x", rng), attn, kCcsGroup);
                 std::vector<Tensor> in{random_tensor({3, 8}, rng), random_tensor({3, 8}, rng),
                                        random_tensor({3, 8}, rng)};
                 for (auto& p : grad_detail::store_values(store)) in.push_back(p);
                 const ParamScope scope(store, "x");
                 return gradcheck(
                     [&](V x) { return weighted_sum(ccs_layer(x[0], x[1], x[2], scope, attn).first, s + 1); }, in);
               }});
  c.push_back({"relation_head", [](auto s) {
                 std::mt19937_64 rng(s);
                 ParamStore store;
                 init_head_params(store, 3, HeadConfig{5}, rng);
                 grad_detail::jitter(store, s);
                 std::vector<Tensor> in{random_tensor({4, 6}, rng)};
                 for (auto& p : grad_detail::store_values(store)) in.push_back(p);
                 return gradcheck(
                     [&](V x) { return weighted_sum(relation_logits(x[0], Relation::kRow, store), s + 1); }, in);
               }});
  c.push_back({"relation_loss", [](auto s) {
                 std::mt19937_64 rng(s);
                 const auto sample = generate_table(s, tiny_gen_params());
                 const auto n = sample.size();
                 const auto sampled = monte_carlo_sample(*sample.relations, 4, s);
                 std::vector<Tensor> in{random_tensor({n, 3}, rng)};
                 for (std::size_t r = 0; r < 3; ++r) in.push_back(random_tensor({sampled.relations[r].pairs.size(), 2}, rng));
                 return gradcheck([&](V x) { return relation_loss({x[1], x[2], x[3]}, x[0], sampled, {}); }, in);
               }});
  c.push_back({"ncgm_loss", [](auto s) {
                 const auto cfg = tiny_model_config();
                 auto store = init_model(cfg, s);
                 const auto sample = generate_table(s + 1000, tiny_gen_params());
                 const auto image = image_tensor(sample.image, cfg.features.image_size);
                 const auto sampled = monte_carlo_sample(*sample.relations, 4, s);
                 return grad_detail::check_params(
                     store, [&] { return training_loss(sample, image, store, cfg, sampled, {}); }, 3, s);
               }});
  for (auto fusion : {FusionMode::kLateConcat, FusionMode::kMixedEarly}) {
    c.push_back({std::string("ncgm_loss_") + fusion_name(fusion), [fusion](auto s) {
                   auto cfg = tiny_model_config();
                   cfg.blocks.fusion = fusion;
                   auto store = init_model(cfg, s);
                   const auto sample = generate_table(s + 2000, tiny_gen_params());
                   const auto image = image_tensor(sample.image, cfg.features.image_size);
                   const auto sampled = monte_carlo_sample(*sample.relations, 4, s);
                   return grad_detail::check_params(
                       store, [&] { return training_loss(sample, image, store, cfg, sampled, {}); }, 2, s);
                 }});
  }
  return c;
}

}  // namespace ncgm::testing
