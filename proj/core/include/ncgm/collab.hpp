#pragma once

#include <array>
#include <random>
#include <vector>

#include "ncgm/attention.hpp"
#include "ncgm/features.hpp"
#include "ncgm/params.hpp"

namespace ncgm {

enum class FusionMode {
  /// ECE + CCS per block, streams summed at the end.
  kCollaborative,
  /// ECE only per modality, final streams concatenated (no cross-modal attention).
  kLateConcat,
  /// Modalities concatenated and projected up front, one ECE stream.
  kMixedEarly,
};

const char* fusion_name(FusionMode m);
FusionMode parse_fusion(const std::string& s);

struct BlockConfig {
  AttentionConfig attn;
  std::size_t layers = 3;
  /// Largest element count the compression projections are sized for.
  std::size_t max_elements = 64;
  FusionMode fusion = FusionMode::kCollaborative;
};

/// Largest ECE compression group for tables of up to `max_elements` elements.
std::size_t ece_max_group(std::size_t max_elements);
inline constexpr std::size_t kCcsGroup = 2;

/// Width of the fused embedding E.
std::size_t fused_width(const BlockConfig& cfg);

void init_block_params(ParamStore& store, const BlockConfig& cfg, std::mt19937_64& rng);

/// One row [x_i || (x_i - x_j)] per unordered pair i < j, pairs in row-major order.
Tensor edge_features(const Tensor& x);

/// C_(l) from C_(l-1): edges projected 2d -> d ("edge"), then CMHA ("cmha").
/// A single-element table uses its self edge [x || 0] as the only memory row.
std::pair<Tensor, AttentionMap> ece_layer(const Tensor& c_prev, const ParamScope& params, const AttentionConfig& cfg);

/// M_(l) = CMHA(M_(l-1), K = V = union of the other two streams). The union
/// interleaves the two streams per element, so compression groups pair the
/// two views of the same element.
std::pair<Tensor, AttentionMap> ccs_layer(const Tensor& m_prev, const Tensor& c_a, const Tensor& c_b,
                                          const ParamScope& params, const AttentionConfig& cfg);

/// Intra (C) and inter (M) streams after `layer` blocks.
struct StreamState {
  std::array<Tensor, 3> intra;
  std::array<Tensor, 3> inter;
  std::size_t layer = 0;
};

struct BlockOutput {
  Tensor fused;
  std::vector<AttentionMap> maps;
};

/// The two CCS key/value streams for a query modality, in block order.
std::array<Modality, 2> ccs_partners(Modality query);

/// Canonical element order: rows sorted lexicographically by their concatenated
/// modality embeddings. The block stack runs in this order and maps back, which
/// makes it equivariant to input permutations.
std::vector<std::size_t> canonical_order(const ModalityEmbeddings& f);

BlockOutput forward_blocks(const ModalityEmbeddings& f, const ParamStore& store, const BlockConfig& cfg);

}  // namespace ncgm
