#include "ncgm/model.hpp"

#include <fstream>
#include <random>
#include <sstream>

#include "ncgm/errors.hpp"

namespace ncgm {

void check(const ModelConfig& cfg) {
  check(cfg.blocks.attn);
  if (cfg.blocks.attn.d_model != cfg.features.d) {
    throw ContractError("model: attention width " + std::to_string(cfg.blocks.attn.d_model) +
                        " differs from embedding width " + std::to_string(cfg.features.d));
  }
  if (cfg.blocks.layers < 1) throw ContractError("model: layers must be >= 1");
  if (cfg.blocks.max_elements < 1) throw ContractError("model: max_elements must be >= 1");
  if (cfg.head.hidden < 1) throw ContractError("model: head width must be >= 1");
}

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("config line " + std::to_string(lineno) + ": expected key=value");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

std::string config_to_kv(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "d=" << cfg.features.d << "\n"
     << "image_size=" << cfg.features.image_size << "\n"
     << "conv_channels=" << cfg.features.conv_channels << "\n"
     << "vocab=" << cfg.features.vocab << "\n"
     << "text_kernel=" << cfg.features.text_kernel << "\n"
     << "heads=" << cfg.blocks.attn.heads << "\n"
     << "d_k=" << cfg.blocks.attn.d_k << "\n"
     << "d_v=" << cfg.blocks.attn.d_v << "\n"
     << "layers=" << cfg.blocks.layers << "\n"
     << "max_elements=" << cfg.blocks.max_elements << "\n"
     << "fusion=" << fusion_name(cfg.blocks.fusion) << "\n"
     << "head_hidden=" << cfg.head.hidden << "\n"
     << "zero_geometry=" << cfg.mask.zero_geometry << "\n"
     << "zero_appearance=" << cfg.mask.zero_appearance << "\n"
     << "zero_content=" << cfg.mask.zero_content << "\n";
  return os.str();
}

namespace {

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || v.front() == '-') {
    throw ContractError("config: " + key + " expects a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(x);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ContractError("config: " + key + " expects 0/1/true/false, got '" + v + "'");
}

}  // namespace

ModelConfig config_from_kv(const std::map<std::string, std::string>& kv, ModelConfig cfg) {
  for (const auto& [k, v] : kv) {
    if (k == "d") {
      cfg.features.d = to_size(k, v);
      cfg.blocks.attn.d_model = cfg.features.d;
    } else if (k == "image_size") {
      cfg.features.image_size = to_size(k, v);
    } else if (k == "conv_channels") {
      cfg.features.conv_channels = to_size(k, v);
    } else if (k == "vocab") {
      cfg.features.vocab = to_size(k, v);
    } else if (k == "text_kernel") {
      cfg.features.text_kernel = to_size(k, v);
    } else if (k == "heads") {
      cfg.blocks.attn.heads = to_size(k, v);
    } else if (k == "d_k") {
      cfg.blocks.attn.d_k = to_size(k, v);
    } else if (k == "d_v") {
      cfg.blocks.attn.d_v = to_size(k, v);
    } else if (k == "layers") {
      cfg.blocks.layers = to_size(k, v);
    } else if (k == "max_elements") {
      cfg.blocks.max_elements = to_size(k, v);
    } else if (k == "fusion") {
      cfg.blocks.fusion = parse_fusion(v);
    } else if (k == "head_hidden") {
      cfg.head.hidden = to_size(k, v);
    } else if (k == "zero_geometry") {
      cfg.mask.zero_geometry = to_bool(k, v);
    } else if (k == "zero_appearance") {
      cfg.mask.zero_appearance = to_bool(k, v);
    } else if (k == "zero_content") {
      cfg.mask.zero_content = to_bool(k, v);
    } else {
      throw ContractError("config: unknown model key '" + k + "'");
    }
  }
  return cfg;
}

ParamStore init_model(const ModelConfig& cfg, std::uint64_t seed) {
  check(cfg);
  std::mt19937_64 rng(seed);
  ParamStore store;
  init_feature_params(store, cfg.features, rng);
  init_block_params(store, cfg.blocks, rng);
  init_head_params(store, fused_width(cfg.blocks), cfg.head, rng);
  return store;
}

ForwardResult forward(const TableSample& sample, const Tensor& image, const ParamStore& params, const ModelConfig& cfg) {
  if (sample.elements.empty()) throw ContractError("forward: table has no elements");
  ForwardResult out;
  out.features = embed(sample, image, params, cfg.features, cfg.mask);
  out.blocks = forward_blocks(out.features, params, cfg.blocks);
  return out;
}

const ScoreMatrix& Prediction::get(Relation r) const {
  switch (r) {
    case Relation::kCell: return cell;
    case Relation::kRow: return row;
    default: return col;
  }
}

RelationMatrices Prediction::binarize(double threshold) const {
  const auto n = cell.size();
  RelationMatrices out{AdjacencyMatrix(n), AdjacencyMatrix(n), AdjacencyMatrix(n)};
  for (auto r : kRelations) {
    const auto& s = get(r);
    auto& m = out.get(r);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) m.set(i, j, s(i, j) >= threshold);
  }
  return out;
}

Prediction predict(const TableSample& sample, const Tensor& image, const ParamStore& params, const ModelConfig& cfg) {
  auto fwd = forward(sample, image, params, cfg);
  const auto n = sample.size();
  const auto batch = pair_embeddings(fwd.embeddings().detach());
  const auto logits = classify_relations(batch, params);
  Prediction out{ScoreMatrix(n), ScoreMatrix(n), ScoreMatrix(n), std::move(fwd.blocks.maps)};
  ScoreMatrix* mats[] = {&out.cell, &out.row, &out.col};
  for (auto r : kRelations) {
    auto& s = *mats[static_cast<std::size_t>(r)];
    for (std::size_t p = 0; p < batch.pairs.size(); ++p) {
      const auto [i, j] = batch.pairs[p];
      s(i, j) = logits.positive(r, p);
    }
  }
  return out;
}

Tensor training_loss(const TableSample& sample, const Tensor& image, const ParamStore& params, const ModelConfig& cfg,
                     const SampledPairs& sampled, const LossWeights& weights) {
  const auto fwd = forward(sample, image, params, cfg);
  const auto& e = fwd.embeddings();
  std::array<Tensor, 3> logits;
  for (auto r : kRelations) {
    const auto batch = make_pairs(e, sampled[r].pairs);
    logits[static_cast<std::size_t>(r)] = relation_logits(batch.vectors, r, params);
  }
  return relation_loss(logits, e, sampled, weights);
}

void save_model(const ParamStore& params, const ModelConfig& cfg, const std::filesystem::path& path) {
  save_checkpoint(params, path);
  std::ofstream out(path.string() + ".cfg", std::ios::binary);
  out << config_to_kv(cfg);
  if (!out) throw DataError("cannot write " + path.string() + ".cfg");
}

std::pair<ParamStore, ModelConfig> load_model(const std::filesystem::path& path) {
  const auto cfg_path = path.string() + ".cfg";
  std::ifstream in(cfg_path, std::ios::binary);
  if (!in) throw DataError("missing model config " + cfg_path);
  std::stringstream ss;
  ss << in.rdbuf();
  const auto cfg = config_from_kv(parse_kv(ss.str()));
  check(cfg);
  auto params = init_model(cfg, 0);
  load_checkpoint(params, path);
  return {std::move(params), cfg};
}

}  // namespace ncgm
