#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ncgm/errors.hpp"
#include "ncgm/metrics.hpp"
#include "ncgm/model.hpp"
#include "ncgm/sample_io.hpp"
#include "ncgm/synth.hpp"
#include "ncgm/trainer.hpp"

namespace fs = std::filesystem;
using namespace ncgm;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

// ---- Output layout ------------------------------------------------------------

fs::path corpus_dir(const fs::path& root) { return root / "corpus"; }
fs::path checkpoint_dir(const fs::path& root) { return root / "checkpoints"; }
fs::path report_dir(const fs::path& root) { return root / "reports"; }
fs::path map_dir(const fs::path& root) { return root / "maps"; }

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

/// Accepts either a corpus directory or an output root containing corpus/.
std::vector<TableSample> load_corpus(const fs::path& path) {
  if (!fs::is_directory(path)) throw DataError("corpus path " + path.string() + " is not a directory");
  const auto dir = fs::is_directory(corpus_dir(path)) ? corpus_dir(path) : path;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("corpus " + dir.string() + " contains no .json samples");
  std::vector<TableSample> out;
  for (const auto& f : files) {
    try {
      out.push_back(read_sample(f));
    } catch (const DataError& e) {
      throw DataError(f.filename().string() + ": " + e.what());
    }
  }
  return out;
}

std::string sample_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%05zu.json", i);
  return buf;
}

// ---- Config file ----------------------------------------------------------------

// Keys of the optional key=value file are long flag names; they are spliced
// in right after the subcommand so later command-line flags take precedence.
std::vector<std::string> splice_config(const std::vector<std::string>& args) {
  std::optional<std::string> file;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) file = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) file = args[i].substr(9);
  }
  if (!file) return args;
  std::ifstream in(*file, std::ios::binary);
  if (!in) throw DataError("cannot read config file " + *file);
  std::stringstream ss;
  ss << in.rdbuf();
  std::vector<std::string> extra;
  for (const auto& [k, v] : parse_kv(ss.str())) extra.push_back("--" + k + "=" + v);
  const std::vector<std::string> subcommands{"generate", "train", "eval", "analyze"};
  auto at = std::find_first_of(args.begin(), args.end(), subcommands.begin(), subcommands.end());
  if (at == args.end()) return args;
  std::vector<std::string> out(args.begin(), at + 1);
  out.insert(out.end(), extra.begin(), extra.end());
  out.insert(out.end(), at + 1, args.end());
  return out;
}

// ---- Model flags ----------------------------------------------------------------

struct ModelFlags {
  std::map<std::string, std::string> values;

  void add_to(CLI::App* app) {
    static const char* keys[][2] = {
        {"d", "embedding width d"},
        {"image_size", "square input resolution of the appearance backbone"},
        {"conv_channels", "channels of the appearance convolutions"},
        {"vocab", "hashed token vocabulary"},
        {"text_kernel", "width of the content 1-D convolution"},
        {"heads", "attention heads h"},
        {"d_k", "per-head key width"},
        {"d_v", "per-head value width"},
        {"layers", "collaborative blocks L"},
        {"max_elements", "largest table the compression modules accept"},
        {"fusion", "collaborative | late-concat | mixed-early"},
        {"head_hidden", "hidden width of the relation heads"},
        {"zero_geometry", "ablation: zero the geometry embedding (0/1)"},
        {"zero_appearance", "ablation: zero the appearance embedding (0/1)"},
        {"zero_content", "ablation: zero the content embedding (0/1)"},
    };
    for (const auto& [key, help] : keys) {
      app->add_option_function<std::string>(
             std::string("--") + key, [this, k = std::string(key)](const std::string& v) { values[k] = v; }, help)
          ->group("Model");
    }
  }

  ModelConfig apply(ModelConfig base = {}) const {
    auto cfg = config_from_kv(values, base);
    if (!values.count("d_k")) cfg.blocks.attn.d_k = cfg.features.d / cfg.blocks.attn.heads;
    if (!values.count("d_v")) cfg.blocks.attn.d_v = cfg.features.d / cfg.blocks.attn.heads;
    check(cfg);
    return cfg;
  }
};

// ---- generate -------------------------------------------------------------------

struct GenerateFlags {
  fs::path out;
  std::uint64_t seed = 0;
  std::size_t count = 100;
  GenParams params;
  std::optional<int> rows, cols;
  std::string distort = "none";
  double jitter = 20.0;
  double bend = 15.0;
};

int cmd_generate(GenerateFlags f) {
  if (f.rows) f.params.min_rows = f.params.max_rows = *f.rows;
  if (f.cols) f.params.min_cols = f.params.max_cols = *f.cols;
  check(f.params);
  const bool perspective = f.distort == "perspective" || f.distort == "both";
  const bool bezier = f.distort == "bezier" || f.distort == "both";
  const auto dir = corpus_dir(f.out);
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << "format=" << kSampleFormat << "\nseed=" << f.seed << "\ncount=" << f.count
           << "\nmin_rows=" << f.params.min_rows << "\nmax_rows=" << f.params.max_rows
           << "\nmin_cols=" << f.params.min_cols << "\nmax_cols=" << f.params.max_cols
           << "\nspan_prob=" << f.params.span_prob << "\nsplit_prob=" << f.params.split_prob
           << "\nmax_elements=" << f.params.max_elements << "\nstyle_seed=" << f.params.style_seed
           << "\ndistort=" << f.distort << "\njitter=" << f.jitter << "\nbend=" << f.bend << "\n";
  for (std::size_t i = 0; i < f.count; ++i) {
    const auto seed = f.seed + i;
    auto s = generate_table(seed, f.params);
    if (perspective) s = distort_perspective(s, f.jitter, seed);
    if (bezier) s = distort_bezier(s, seed, f.bend);
    const auto problems = validate(s);
    if (!problems.empty()) throw DataError("generated sample " + std::to_string(i) + " is invalid: " + problems[0]);
    write_sample(s, dir / sample_name(i));
    manifest << "sample=" << sample_name(i) << "\n";
  }
  write_text(dir / "manifest.txt", manifest.str());
  std::cout << "wrote " << f.count << " samples to " << dir.string() << "\n";
  return kOk;
}

// ---- train ----------------------------------------------------------------------

struct TrainFlags {
  fs::path corpus;
  fs::path validation;
  fs::path out;
  std::uint64_t seed = 0;
  TrainConfig cfg;
  ModelFlags model;
};

int cmd_train(TrainFlags f) {
  const auto data = load_corpus(f.corpus);
  std::vector<TableSample> val;
  if (!f.validation.empty()) val = load_corpus(f.validation);
  f.cfg.seed = f.seed;
  f.cfg.model = f.model.apply();
  f.cfg.checkpoint = checkpoint_dir(f.out) / "best.bin";
  check(f.cfg);
  fs::create_directories(checkpoint_dir(f.out));
  fs::create_directories(report_dir(f.out));
  std::ofstream log(report_dir(f.out) / "train_log.txt", std::ios::binary);
  const auto result = train(data, f.cfg, val, [&](const EpochLog& e) {
    log << e.line() << "\n";
    log.flush();
    std::cout << e.line() << "\n";
  });
  save_model(result.params, f.cfg.model, checkpoint_dir(f.out) / "model.bin");
  std::ostringstream summary;
  summary << "epochs_run=" << result.log.size() << "\nbest_epoch=" << result.best_epoch
          << "\nbest_loss=" << result.best_loss << "\nstopped_by_budget=" << result.stopped_by_budget
          << "\ntrain_f1=" << relation_f1_score(result.params, f.cfg.model, data, f.cfg.threshold) << "\n";
  if (!val.empty()) summary << "val_f1=" << relation_f1_score(result.params, f.cfg.model, val, f.cfg.threshold) << "\n";
  write_text(report_dir(f.out) / "train_summary.txt", summary.str());
  std::cout << summary.str();
  return kOk;
}

// ---- eval -----------------------------------------------------------------------

struct EvalFlags {
  fs::path corpus;
  fs::path checkpoint;
  fs::path out;
  bool oracle = false;
  double threshold = 0.5;
  std::vector<double> sweep;
};

std::size_t component_count(const ScoreMatrix& s, double threshold) {
  return belonging_lists(s, threshold, std::vector<double>(s.size(), 0.0), GroupMode::kComponents).size();
}

int cmd_eval(const EvalFlags& f) {
  if (!f.oracle && f.checkpoint.empty()) throw ContractError("eval needs --checkpoint or --oracle");
  const auto data = load_corpus(f.corpus);
  std::optional<std::pair<ParamStore, ModelConfig>> model;
  if (!f.oracle) model = load_model(f.checkpoint);

  std::vector<Prediction> preds;
  for (const auto& s : data) {
    if (f.oracle) {
      const auto gt = s.relations ? *s.relations : build_adjacency(s.elements);
      preds.push_back({ScoreMatrix::from(gt.cell), ScoreMatrix::from(gt.row), ScoreMatrix::from(gt.col), {}});
    } else {
      const auto& [params, cfg] = *model;
      preds.push_back(predict(s, image_tensor(s.image, cfg.features.image_size), params, cfg));
    }
  }
  auto report_at = [&](double t) {
    MetricsAccumulator acc;
    for (std::size_t i = 0; i < data.size(); ++i) score_sample(acc, data[i], preds[i].cell, preds[i].row, preds[i].col, t);
    return acc.report();
  };
  const auto report = report_at(f.threshold);
  write_text(report_dir(f.out) / "metrics.txt", report.to_text());
  write_text(report_dir(f.out) / "metrics.kv", report.to_kv());
  std::cout << report.to_text();

  if (!f.sweep.empty()) {
    auto thresholds = f.sweep;
    std::sort(thresholds.begin(), thresholds.end());
    std::ostringstream os;
    os << "threshold cell_groups row_groups col_groups overall_f1\n";
    for (double t : thresholds) {
      if (!(t > 0.0 && t < 1.0)) throw ContractError("sweep thresholds must be in (0, 1)");
      std::size_t counts[3] = {0, 0, 0};
      for (const auto& p : preds)
        for (auto r : kRelations) counts[static_cast<std::size_t>(r)] += component_count(p.get(r), t);
      char line[128];
      std::snprintf(line, sizeof line, "%.4f %zu %zu %zu %.6f\n", t, counts[0], counts[1], counts[2],
                    report_at(t).overall.f1);
      os << line;
    }
    write_text(report_dir(f.out) / "threshold_sweep.txt", os.str());
    std::cout << os.str();
  }
  return kOk;
}

// ---- analyze --------------------------------------------------------------------

struct AnalyzeFlags {
  fs::path corpus;
  fs::path checkpoint;
  fs::path baseline;
  fs::path out;
  std::size_t samples = 1;
};

// Mean JSD of ECE maps per (block, modality) over the analysed samples.
std::map<std::pair<std::size_t, std::string>, double> ece_jsd(const std::vector<TableSample>& data,
                                                              const ParamStore& params, const ModelConfig& cfg,
                                                              const fs::path& dump_root) {
  std::map<std::pair<std::size_t, std::string>, double> sum;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto p = predict(data[i], image_tensor(data[i].image, cfg.features.image_size), params, cfg);
    if (!dump_root.empty()) {
      const auto dir = dump_root / ("sample_" + std::to_string(i));
      fs::create_directories(dir);
      for (const auto& m : p.maps) dump_attention_map(m, dir);
    }
    for (const auto& point : jsd_curve(p.maps))
      if (point.unit == "ece") sum[{point.layer, point.modality}] += point.jsd / static_cast<double>(data.size());
  }
  return sum;
}

int cmd_analyze(const AnalyzeFlags& f) {
  auto data = load_corpus(f.corpus);
  if (f.samples == 0) throw ContractError("--samples must be positive");
  if (data.size() > f.samples) data.resize(f.samples);
  const auto [params, cfg] = load_model(f.checkpoint);
  std::ostringstream os;
  os << "block modality variant jsd\n";
  auto emit = [&](const auto& curve, const char* variant) {
    for (const auto& [key, v] : curve) {
      char line[128];
      std::snprintf(line, sizeof line, "%zu %s %s %.9f\n", key.first, key.second.c_str(), variant, v);
      os << line;
    }
  };
  emit(ece_jsd(data, params, cfg, map_dir(f.out)), "with_ccs");
  if (!f.baseline.empty()) {
    const auto [bparams, bcfg] = load_model(f.baseline);
    emit(ece_jsd(data, bparams, bcfg, {}), "without_ccs");
  }
  write_text(report_dir(f.out) / "jsd.txt", os.str());
  std::cout << os.str();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Table structure recognition: synthetic corpora, training, evaluation and attention analysis", "ncgm"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_file;
  app.add_option("--config", config_file, "key=value file of long flag names; command-line flags override it");

  GenerateFlags gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic corpus to OUT/corpus");
  g->add_option("--out", gen.out, "output root")->required();
  g->add_option("--seed", gen.seed, "seed of the first sample; sample i uses seed + i")->required();
  g->add_option("--count", gen.count, "number of samples")->check(CLI::PositiveNumber);
  g->add_option("--rows", gen.rows, "fixed row count");
  g->add_option("--cols", gen.cols, "fixed column count");
  g->add_option("--min_rows", gen.params.min_rows);
  g->add_option("--max_rows", gen.params.max_rows);
  g->add_option("--min_cols", gen.params.min_cols);
  g->add_option("--max_cols", gen.params.max_cols);
  g->add_option("--span_prob", gen.params.span_prob, "chance a grid position starts a merged cell");
  g->add_option("--split_prob", gen.params.split_prob, "chance a cell's text is split in two elements");
  g->add_option("--max_elements", gen.params.max_elements, "tables with more elements are re-drawn");
  g->add_option("--style_seed", gen.params.style_seed, "rendering style seed");
  g->add_option("--distort", gen.distort, "geometric augmentation")
      ->check(CLI::IsMember({"none", "perspective", "bezier", "both"}));
  g->add_option("--jitter", gen.jitter, "perspective corner jitter in pixels");
  g->add_option("--bend", gen.bend, "Bezier bend amplitude in pixels");

  TrainFlags tr;
  auto* t = app.add_subcommand("train", "Train a model; writes OUT/checkpoints and OUT/reports");
  t->add_option("--corpus", tr.corpus, "training corpus")->required();
  t->add_option("--val", tr.validation, "validation corpus");
  t->add_option("--out", tr.out, "output root")->required();
  t->add_option("--seed", tr.seed, "initialisation and sampling seed")->required();
  t->add_option("--epochs", tr.cfg.epochs);
  t->add_option("--lr", tr.cfg.lr, "Adam learning rate");
  t->add_option("--patience", tr.cfg.plateau_patience, "epochs without improvement before dividing lr");
  t->add_option("--decay", tr.cfg.lr_decay, "lr multiplier on a plateau");
  t->add_option("--samples", tr.cfg.samples, "Monte-Carlo pairs per anchor and relation");
  t->add_option("--lambda_class", tr.cfg.loss.lambda_class);
  t->add_option("--lambda_con", tr.cfg.loss.lambda_con);
  t->add_option("--margin", tr.cfg.loss.margin, "contrastive margin");
  t->add_option("--eval_every", tr.cfg.eval_every, "validation F1 every N epochs");
  t->add_option("--threshold", tr.cfg.threshold);
  t->add_option("--max_seconds", tr.cfg.max_seconds, "wall-clock budget (0 = none)");
  tr.model.add_to(t);

  EvalFlags ev;
  auto* e = app.add_subcommand("eval", "Score a checkpoint (or the ground truth) on a corpus");
  e->add_option("--corpus", ev.corpus)->required();
  e->add_option("--checkpoint", ev.checkpoint, "model.bin written by train");
  e->add_option("--out", ev.out, "output root")->required();
  e->add_flag("--oracle", ev.oracle, "use the ground truth as the prediction");
  e->add_option("--threshold", ev.threshold);
  e->add_option("--sweep", ev.sweep, "thresholds for a component-count sweep")->delimiter(',');

  AnalyzeFlags an;
  auto* a = app.add_subcommand("analyze", "Dump attention heatmaps and ECE head-divergence curves");
  a->add_option("--corpus", an.corpus)->required();
  a->add_option("--checkpoint", an.checkpoint)->required();
  a->add_option("--baseline", an.baseline, "checkpoint of a model without CCS for comparison");
  a->add_option("--out", an.out, "output root")->required();
  a->add_option("--samples", an.samples, "number of corpus samples to analyse");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = splice_config(args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  } catch (const DataError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kData;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    return cmd_analyze(an);
  } catch (const ContractError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return kUsage;
  } catch (const NumericalError& err) {
    std::cerr << "numerical failure: " << err.what() << "\n";
    return kNumerical;
  } catch (const GridConflictError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kData;
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kData;
  }
}
