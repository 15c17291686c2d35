#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ncgm/collab.hpp"
#include "ncgm/features.hpp"
#include "ncgm/head.hpp"
#include "ncgm/params.hpp"
#include "ncgm/postprocess.hpp"

namespace ncgm {

/// Everything that shapes the network: embedders, block stack, heads, ablation mask.
struct ModelConfig {
  FeatureConfig features;
  BlockConfig blocks;
  HeadConfig head;
  ModalityMask mask;
};

void check(const ModelConfig& cfg);

/// Parses "key = value" lines; blank lines and '#' comments are skipped.
std::map<std::string, std::string> parse_kv(const std::string& text);
std::string config_to_kv(const ModelConfig& cfg);
/// Overrides fields of `base` from known keys; unknown keys throw ContractError.
ModelConfig config_from_kv(const std::map<std::string, std::string>& kv, ModelConfig base = {});

ParamStore init_model(const ModelConfig& cfg, std::uint64_t seed);

struct ForwardResult {
  ModalityEmbeddings features;
  BlockOutput blocks;
  const Tensor& embeddings() const { return blocks.fused; }
};

/// Features plus block stack. `image` comes from image_tensor(sample.image, cfg.features.image_size).
ForwardResult forward(const TableSample& sample, const Tensor& image, const ParamStore& params, const ModelConfig& cfg);

/// Positive-class probabilities for every ordered pair.
struct Prediction {
  ScoreMatrix cell;
  ScoreMatrix row;
  ScoreMatrix col;
  std::vector<AttentionMap> maps;

  const ScoreMatrix& get(Relation r) const;
  RelationMatrices binarize(double threshold) const;
};

Prediction predict(const TableSample& sample, const Tensor& image, const ParamStore& params, const ModelConfig& cfg);

/// Sampled multi-task loss for one table.
Tensor training_loss(const TableSample& sample, const Tensor& image, const ParamStore& params, const ModelConfig& cfg,
                     const SampledPairs& sampled, const LossWeights& weights);

/// Writes the checkpoint at `path` and the config next to it as `path` + ".cfg".
void save_model(const ParamStore& params, const ModelConfig& cfg, const std::filesystem::path& path);
std::pair<ParamStore, ModelConfig> load_model(const std::filesystem::path& path);

}  // namespace ncgm
