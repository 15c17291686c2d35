#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <utility>

#include "ncgm/params.hpp"
#include "ncgm/tensor.hpp"

namespace ncgm {

struct AttentionConfig {
  std::size_t heads = 8;
  std::size_t d_model = 64;
  std::size_t d_k = 8;
  std::size_t d_v = 8;
};

void check(const AttentionConfig& cfg);

/// Attention weights of one unit: [heads x queries x keys], detached from the tape.
struct AttentionMap {
  Tensor weights;
  std::size_t layer = 0;
  std::string unit;      // "ece" or "ccs"
  std::string modality;  // "geometry", "appearance", "content" or "mixed"

  std::size_t heads() const { return weights.shape()[0]; }
  std::size_t queries() const { return weights.shape()[1]; }
  std::size_t keys() const { return weights.shape()[2]; }
  double at(std::size_t head, std::size_t query, std::size_t key) const {
    return weights.at((head * queries() + query) * keys() + key);
  }
};

// ---- Multi-head attention ---------------------------------------------------
//
// Parameters below the scope: wq [d_m x h*d_k], wk [d_m x h*d_k], wv [d_m x h*d_v],
// wo [h*d_v x d_m]; no biases.

void init_mha_params(ParamBuilder b, const AttentionConfig& cfg);

/// head_i = softmax(Q Wq_i (K Wk_i)^T / sqrt(d_k)) V Wv_i; output = [head_1 .. head_h] Wo.
std::pair<Tensor, AttentionMap> mha(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionConfig& cfg,
                                    const ParamScope& params);

// ---- Memory compression -----------------------------------------------------
//
// M input rows are split into N contiguous groups of g = ceil(M/N) rows (the
// tail zero-padded), each group flattened to width g*d, projected by the first
// g*d rows of wh [g_max*d x d], then layer-normalised (norm/gamma, norm/beta).

std::size_t compress_group_size(std::size_t m, std::size_t n);
void init_compress_params(ParamBuilder b, std::size_t d, std::size_t max_group);
Tensor memory_compress(const Tensor& h, std::size_t target_rows, const ParamScope& params);

// ---- Compressed multi-head attention ----------------------------------------
//
//   P  = MHA(Q, MC(K), MC(V))
//   P~ = LayerNorm(Q + P)
//   Y  = LayerNorm(FFN(P~) + P~),  FFN = relu(x W1 + b1) W2 + b2, hidden 4*d_m
//
// One compression module ("mc") is shared by keys and values.

void init_cmha_params(ParamBuilder b, const AttentionConfig& cfg, std::size_t max_group);
std::pair<Tensor, AttentionMap> cmha(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionConfig& cfg,
                                     const ParamScope& params);

/// One PGM per head: row = query, column = key, intensity = 255 * w / max(w).
/// Files are named block{layer}_{unit}_{modality}_head{i}.pgm.
std::vector<std::filesystem::path> dump_attention_map(const AttentionMap& map, const std::filesystem::path& dir);

}  // namespace ncgm
