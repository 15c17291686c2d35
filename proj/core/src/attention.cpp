#include "ncgm/attention.hpp"

#include <algorithm>
#include <cmath>

#include "ncgm/errors.hpp"
#include "ncgm/image.hpp"

namespace ncgm {

void check(const AttentionConfig& cfg) {
  if (cfg.heads < 1 || cfg.d_model < 1 || cfg.d_k < 1 || cfg.d_v < 1) {
    throw ContractError("attention config: heads and widths must be >= 1");
  }
}

void init_mha_params(ParamBuilder b, const AttentionConfig& cfg) {
  check(cfg);
  b.linear("wq", cfg.d_model, cfg.heads * cfg.d_k, false);
  b.linear("wk", cfg.d_model, cfg.heads * cfg.d_k, false);
  b.linear("wv", cfg.d_model, cfg.heads * cfg.d_v, false);
  b.linear("wo", cfg.heads * cfg.d_v, cfg.d_model, false);
}

std::pair<Tensor, AttentionMap> mha(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionConfig& cfg,
                                    const ParamScope& params) {
  check(cfg);
  if (k.rank() != 2 || k.rows() == 0) throw ContractError("mha: empty key memory");
  if (q.cols() != cfg.d_model || k.cols() != cfg.d_model || v.cols() != cfg.d_model) {
    throw DimensionError("mha: inputs must have width d_model=" + std::to_string(cfg.d_model) + ", got " +
                         shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  if (k.rows() != v.rows()) throw DimensionError("mha: keys and values must have the same row count");

  const auto qp = matmul(q, params["wq/w"]);
  const auto kp = matmul(k, params["wk/w"]);
  const auto vp = matmul(v, params["wv/w"]);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg.d_k));

  std::vector<Tensor> heads;
  std::vector<double> weights;
  weights.reserve(cfg.heads * q.rows() * k.rows());
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const auto qh = slice_cols(qp, h * cfg.d_k, (h + 1) * cfg.d_k);
    const auto kh = slice_cols(kp, h * cfg.d_k, (h + 1) * cfg.d_k);
    const auto vh = slice_cols(vp, h * cfg.d_v, (h + 1) * cfg.d_v);
    const auto attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt_dk));
    weights.insert(weights.end(), attn.data().begin(), attn.data().end());
    heads.push_back(matmul(attn, vh));
  }
  auto out = matmul(concat_cols(heads), params["wo/w"]);
  AttentionMap map{Tensor({cfg.heads, q.rows(), k.rows()}, std::move(weights)), 0, {}, {}};
  return {std::move(out), std::move(map)};
}

std::size_t compress_group_size(std::size_t m, std::size_t n) {
  if (m == 0 || n == 0) throw ContractError("memory_compress: need at least one input and one output row");
  return (m + n - 1) / n;
}

void init_compress_params(ParamBuilder b, std::size_t d, std::size_t max_group) {
  b.linear("wh", max_group * d, d, false);
  b.norm("norm", d);
}

Tensor memory_compress(const Tensor& h, std::size_t target_rows, const ParamScope& params) {
  if (h.rank() != 2) throw DimensionError("memory_compress: expected a matrix");
  const auto m = h.rows(), d = h.cols();
  const auto g = compress_group_size(m, target_rows);
  const auto& wh = params["wh/w"];
  if (wh.cols() != d || wh.rows() % d != 0) {
    throw DimensionError("memory_compress: projection " + shape_str(wh.shape()) + " does not fit width " +
                         std::to_string(d));
  }
  if (g * d > wh.rows()) {
    throw ContractError("memory_compress: group size " + std::to_string(g) + " exceeds the configured maximum " +
                        std::to_string(wh.rows() / d));
  }
  Tensor x = h;
  if (m < g * target_rows) {
    const Tensor parts[] = {h, Tensor::zeros({g * target_rows - m, d})};
    x = concat_rows(parts);
  }
  x = reshape(x, {target_rows, g * d});
  const auto w = g * d == wh.rows() ? wh : slice_rows(wh, 0, g * d);
  return layer_norm(matmul(x, w), params["norm/gamma"], params["norm/beta"]);
}

void init_cmha_params(ParamBuilder b, const AttentionConfig& cfg, std::size_t max_group) {
  init_compress_params(b.sub("mc"), cfg.d_model, max_group);
  init_mha_params(b.sub("mha"), cfg);
  b.norm("norm1", cfg.d_model);
  b.linear("ffn1", cfg.d_model, 4 * cfg.d_model);
  b.linear("ffn2", 4 * cfg.d_model, cfg.d_model);
  b.norm("norm2", cfg.d_model);
}

std::pair<Tensor, AttentionMap> cmha(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionConfig& cfg,
                                     const ParamScope& params) {
  const auto n = q.rows();
  const auto mc = params.sub("mc");
  const auto kc = memory_compress(k, n, mc);
  const auto vc = k.id() == v.id() ? kc : memory_compress(v, n, mc);
  auto [p, map] = mha(q, kc, vc, cfg, params.sub("mha"));
  const auto pt = layer_norm(add(q, p), params["norm1/gamma"], params["norm1/beta"]);
  const auto ffn = linear(relu(linear(pt, params, "ffn1")), params, "ffn2");
  auto y = layer_norm(add(ffn, pt), params["norm2/gamma"], params["norm2/beta"]);
  return {std::move(y), std::move(map)};
}

std::vector<std::filesystem::path> dump_attention_map(const AttentionMap& map, const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  const auto nq = map.queries(), nk = map.keys();
  for (std::size_t h = 0; h < map.heads(); ++h) {
    double mx = 0.0;
    for (std::size_t i = 0; i < nq; ++i)
      for (std::size_t j = 0; j < nk; ++j) mx = std::max(mx, map.at(h, i, j));
    GrayImage img(nk, nq, 0);
    for (std::size_t i = 0; i < nq; ++i)
      for (std::size_t j = 0; j < nk; ++j)
        img.at(j, i) = mx > 0.0 ? static_cast<std::uint8_t>(std::lround(255.0 * map.at(h, i, j) / mx)) : 0;
    auto path = dir / ("block" + std::to_string(map.layer) + "_" + map.unit + "_" + map.modality + "_head" +
                       std::to_string(h) + ".pgm");
    write_pgm(img, path);
    files.push_back(std::move(path));
  }
  return files;
}

}  // namespace ncgm
