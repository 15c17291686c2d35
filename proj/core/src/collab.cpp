#include "ncgm/collab.hpp"

#include <algorithm>
#include <numeric>

#include "ncgm/errors.hpp"

namespace ncgm {

const char* fusion_name(FusionMode m) {
  switch (m) {
    case FusionMode::kCollaborative: return "collaborative";
    case FusionMode::kLateConcat: return "late-concat";
    case FusionMode::kMixedEarly: return "mixed-early";
  }
  return "?";
}

FusionMode parse_fusion(const std::string& s) {
  if (s == "collaborative") return FusionMode::kCollaborative;
  if (s == "late-concat") return FusionMode::kLateConcat;
  if (s == "mixed-early") return FusionMode::kMixedEarly;
  throw ContractError("unknown fusion mode '" + s + "' (collaborative|late-concat|mixed-early)");
}

std::size_t ece_max_group(std::size_t max_elements) {
  if (max_elements < 2) return 1;
  const auto m = max_elements * (max_elements - 1) / 2;
  return compress_group_size(m, max_elements);
}

std::size_t fused_width(const BlockConfig& cfg) {
  return cfg.fusion == FusionMode::kLateConcat ? 3 * cfg.attn.d_model : cfg.attn.d_model;
}

namespace {

std::string block_name(std::size_t layer) { return "block" + std::to_string(layer); }

void init_ece(ParamBuilder b, const BlockConfig& cfg) {
  const auto d = cfg.attn.d_model;
  b.linear("edge", 2 * d, d);
  init_cmha_params(b.sub("cmha"), cfg.attn, ece_max_group(cfg.max_elements));
}

}  // namespace

void init_block_params(ParamStore& store, const BlockConfig& cfg, std::mt19937_64& rng) {
  if (cfg.layers < 1) throw ContractError("block stack needs at least one layer");
  check(cfg.attn);
  ParamBuilder root(store, "", rng);
  if (cfg.fusion == FusionMode::kMixedEarly) root.linear("mixed/proj", 3 * cfg.attn.d_model, cfg.attn.d_model);
  for (std::size_t l = 1; l <= cfg.layers; ++l) {
    auto blk = root.sub(block_name(l));
    if (cfg.fusion == FusionMode::kMixedEarly) {
      init_ece(blk.sub("ece/mixed"), cfg);
      continue;
    }
    for (auto m : kModalities) init_ece(blk.sub(std::string("ece/") + modality_name(m)), cfg);
    if (cfg.fusion == FusionMode::kCollaborative) {
      for (auto m : kModalities) init_cmha_params(blk.sub(std::string("ccs/") + modality_name(m)), cfg.attn, kCcsGroup);
    }
  }
}

Tensor edge_features(const Tensor& x) {
  if (x.rank() != 2 || x.rows() < 2) {
    throw ContractError("edge_features: need at least two nodes, got shape " + shape_str(x.shape()));
  }
  const auto n = x.rows();
  std::vector<long> first, second;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      first.push_back(static_cast<long>(i));
      second.push_back(static_cast<long>(j));
    }
  }
  const auto xi = gather_rows(x, first);
  const auto xj = gather_rows(x, second);
  const Tensor parts[] = {xi, sub(xi, xj)};
  return concat_cols(parts);
}

std::pair<Tensor, AttentionMap> ece_layer(const Tensor& c_prev, const ParamScope& params, const AttentionConfig& cfg) {
  Tensor edges;
  if (c_prev.rows() == 1) {
    const Tensor parts[] = {c_prev, Tensor::zeros(c_prev.shape())};
    edges = concat_cols(parts);
  } else {
    edges = edge_features(c_prev);
  }
  const auto memory = linear(edges, params, "edge");
  return cmha(c_prev, memory, memory, cfg, params.sub("cmha"));
}

std::pair<Tensor, AttentionMap> ccs_layer(const Tensor& m_prev, const Tensor& c_a, const Tensor& c_b,
                                          const ParamScope& params, const AttentionConfig& cfg) {
  if (c_a.shape() != m_prev.shape() || c_b.shape() != m_prev.shape()) {
    throw DimensionError("ccs_layer: stream shapes differ");
  }
  const auto n = c_a.rows();
  std::vector<long> interleave(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    interleave[2 * i] = static_cast<long>(i);
    interleave[2 * i + 1] = static_cast<long>(n + i);
  }
  const Tensor parts[] = {c_a, c_b};
  const auto memory = gather_rows(concat_rows(parts), interleave);
  return cmha(m_prev, memory, memory, cfg, params);
}

std::array<Modality, 2> ccs_partners(Modality query) {
  switch (query) {
    case Modality::kAppearance: return {Modality::kGeometry, Modality::kContent};
    case Modality::kGeometry: return {Modality::kAppearance, Modality::kContent};
    default: return {Modality::kAppearance, Modality::kGeometry};
  }
}

std::vector<std::size_t> canonical_order(const ModalityEmbeddings& f) {
  const auto n = f.count();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto less = [&](std::size_t a, std::size_t b) {
    for (auto m : kModalities) {
      const auto& t = f.get(m);
      const auto d = t.cols();
      for (std::size_t c = 0; c < d; ++c) {
        const double x = t.at(a * d + c), y = t.at(b * d + c);
        if (x != y) return x < y;
      }
    }
    return false;
  };
  std::stable_sort(order.begin(), order.end(), less);
  return order;
}

namespace {

// Reorders the query axis (and, when `keys_too`, the key axis) back to input order.
AttentionMap restore_order(AttentionMap map, const std::vector<std::size_t>& order, bool keys_too) {
  const auto h = map.heads(), nq = map.queries(), nk = map.keys();
  std::vector<double> out(map.weights.size());
  for (std::size_t head = 0; head < h; ++head) {
    for (std::size_t q = 0; q < nq; ++q) {
      for (std::size_t k = 0; k < nk; ++k) {
        const auto dq = order[q];
        const auto dk = keys_too ? order[k] : k;
        out[(head * nq + dq) * nk + dk] = map.at(head, q, k);
      }
    }
  }
  map.weights = Tensor(map.weights.shape(), std::move(out));
  return map;
}

}  // namespace

BlockOutput forward_blocks(const ModalityEmbeddings& f, const ParamStore& store, const BlockConfig& cfg) {
  if (cfg.layers < 1) throw ContractError("forward_blocks: L must be >= 1");
  const auto n = f.count();
  if (n > cfg.max_elements) {
    throw ContractError("table has " + std::to_string(n) + " elements, model is built for at most " +
                        std::to_string(cfg.max_elements));
  }
  const auto order = canonical_order(f);
  std::vector<long> to_canonical(order.begin(), order.end());
  std::vector<long> to_input(n);
  for (std::size_t i = 0; i < n; ++i) to_input[order[i]] = static_cast<long>(i);

  BlockOutput out;
  ParamScope root(store, "");
  auto record = [&](AttentionMap map, std::size_t layer, const char* unit, const char* modality) {
    map.layer = layer;
    map.unit = unit;
    map.modality = modality;
    out.maps.push_back(restore_order(std::move(map), order, std::string(unit) == "ccs"));
  };

  if (cfg.fusion == FusionMode::kMixedEarly) {
    const Tensor parts[] = {f.geometry, f.appearance, f.content};
    auto c = gather_rows(linear(concat_cols(parts), root, "mixed/proj"), to_canonical);
    for (std::size_t l = 1; l <= cfg.layers; ++l) {
      auto [next, map] = ece_layer(c, root.sub(block_name(l) + "/ece/mixed"), cfg.attn);
      record(std::move(map), l, "ece", "mixed");
      c = std::move(next);
    }
    out.fused = gather_rows(c, to_input);
    return out;
  }

  StreamState state;
  for (auto m : kModalities) {
    const auto i = static_cast<std::size_t>(m);
    state.intra[i] = gather_rows(f.get(m), to_canonical);
    state.inter[i] = state.intra[i];
  }
  for (std::size_t l = 1; l <= cfg.layers; ++l) {
    const auto blk = root.sub(block_name(l));
    for (auto m : {Modality::kAppearance, Modality::kGeometry, Modality::kContent}) {
      const auto i = static_cast<std::size_t>(m);
      auto [c, map] = ece_layer(state.intra[i], blk.sub(std::string("ece/") + modality_name(m)), cfg.attn);
      record(std::move(map), l, "ece", modality_name(m));
      state.intra[i] = std::move(c);
    }
    if (cfg.fusion == FusionMode::kCollaborative) {
      for (auto m : {Modality::kAppearance, Modality::kGeometry, Modality::kContent}) {
        const auto i = static_cast<std::size_t>(m);
        const auto [a, b] = ccs_partners(m);
        auto [next, map] = ccs_layer(state.inter[i], state.intra[static_cast<std::size_t>(a)],
                                     state.intra[static_cast<std::size_t>(b)],
                                     blk.sub(std::string("ccs/") + modality_name(m)), cfg.attn);
        record(std::move(map), l, "ccs", modality_name(m));
        state.inter[i] = std::move(next);
      }
    }
    state.layer = l;
  }

  Tensor fused;
  if (cfg.fusion == FusionMode::kCollaborative) {
    fused = add(add(state.inter[1], state.inter[0]), state.inter[2]);
  } else {
    fused = concat_cols(state.intra);
  }
  out.fused = gather_rows(fused, to_input);
  return out;
}

}  // namespace ncgm
