#include "ncgm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include "ncgm/errors.hpp"

namespace ncgm {

PRF PRF::from(const PairCounts& c) {
  PRF r;
  const auto pred = c.tp + c.fp;
  const auto gt = c.tp + c.fn;
  if (pred == 0 || gt == 0) r.degenerate = true;
  r.precision = pred ? static_cast<double>(c.tp) / static_cast<double>(pred) : 0.0;
  r.recall = gt ? static_cast<double>(c.tp) / static_cast<double>(gt) : 0.0;
  const double s = r.precision + r.recall;
  r.f1 = s > 0.0 ? 2.0 * r.precision * r.recall / s : 0.0;
  return r;
}

PairCounts relation_counts(const AdjacencyMatrix& pred, const AdjacencyMatrix& gt) {
  if (pred.size() != gt.size()) {
    throw ContractError("relation_f1: size mismatch (" + std::to_string(pred.size()) + " vs " +
                        std::to_string(gt.size()) + ")");
  }
  PairCounts c;
  const auto n = gt.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool p = pred(i, j) || pred(j, i);
      const bool g = gt(i, j) || gt(j, i);
      if (p && g) ++c.tp;
      if (p && !g) ++c.fp;
      if (!p && g) ++c.fn;
    }
  }
  return c;
}

PRF relation_f1(const AdjacencyMatrix& pred, const AdjacencyMatrix& gt) { return PRF::from(relation_counts(pred, gt)); }

std::array<PRF, 3> relation_f1(const RelationMatrices& pred, const RelationMatrices& gt) {
  std::array<PRF, 3> out;
  for (auto r : kRelations) out[static_cast<std::size_t>(r)] = relation_f1(pred.get(r), gt.get(r));
  return out;
}

namespace {

// Postorder view of a tree for the Zhang-Shasha dynamic program.
struct Postorder {
  std::vector<std::string> labels;
  std::vector<std::size_t> leftmost;  // leftmost leaf descendant, postorder index
  std::vector<std::size_t> keyroots;

  explicit Postorder(const StructureTree& t) {
    walk(t);
    const auto n = labels.size();
    std::vector<std::uint8_t> seen(n, 0);
    for (std::size_t i = n; i-- > 0;) {
      if (!seen[leftmost[i]]) {
        seen[leftmost[i]] = 1;
        keyroots.push_back(i);
      }
    }
    std::sort(keyroots.begin(), keyroots.end());
  }

  std::size_t walk(const StructureNode& node) {
    std::size_t first_leaf = SIZE_MAX;
    for (const auto& c : node.children) {
      const auto l = walk(c);
      if (first_leaf == SIZE_MAX) first_leaf = l;
    }
    const auto idx = labels.size();
    labels.push_back(node.label());
    leftmost.push_back(first_leaf == SIZE_MAX ? idx : first_leaf);
    return leftmost.back();
  }
};

}  // namespace

std::size_t tree_edit_distance(const StructureTree& a, const StructureTree& b) {
  const Postorder ta(a), tb(b);
  const auto na = ta.labels.size(), nb = tb.labels.size();
  std::vector<std::size_t> td(na * nb, 0);
  std::vector<std::size_t> fd((na + 1) * (nb + 1), 0);
  for (auto i : ta.keyroots) {
    for (auto j : tb.keyroots) {
      const auto li = ta.leftmost[i], lj = tb.leftmost[j];
      const auto rows = i - li + 2, cols = j - lj + 2;
      auto f = [&](std::size_t x, std::size_t y) -> std::size_t& { return fd[x * cols + y]; };
      f(0, 0) = 0;
      for (std::size_t x = 1; x < rows; ++x) f(x, 0) = f(x - 1, 0) + 1;
      for (std::size_t y = 1; y < cols; ++y) f(0, y) = f(0, y - 1) + 1;
      for (std::size_t x = 1; x < rows; ++x) {
        for (std::size_t y = 1; y < cols; ++y) {
          const auto ai = li + x - 1, bj = lj + y - 1;
          const auto del = f(x - 1, y) + 1, ins = f(x, y - 1) + 1;
          if (ta.leftmost[ai] == li && tb.leftmost[bj] == lj) {
            const auto ren = f(x - 1, y - 1) + (ta.labels[ai] == tb.labels[bj] ? 0 : 1);
            f(x, y) = std::min({del, ins, ren});
            td[ai * nb + bj] = f(x, y);
          } else {
            const auto px = ta.leftmost[ai] - li, py = tb.leftmost[bj] - lj;
            f(x, y) = std::min({del, ins, f(px, py) + td[ai * nb + bj]});
          }
        }
      }
    }
  }
  return td[(na - 1) * nb + (nb - 1)];
}

double teds(const StructureTree& a, const StructureTree& b) {
  const auto denom = std::max(a.node_count(), b.node_count());
  return 1.0 - static_cast<double>(tree_edit_distance(a, b)) / static_cast<double>(denom);
}

double bleu(const std::vector<std::string>& candidate, const std::vector<std::string>& reference) {
  if (reference.empty()) throw ContractError("bleu: empty reference");
  if (candidate.empty()) return 0.0;
  constexpr std::size_t kOrder = 4;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= kOrder; ++n) {
    if (candidate.size() < n || reference.size() < n) return 0.0;
    std::map<std::vector<std::string>, std::size_t> ref_counts, cand_counts;
    for (std::size_t i = 0; i + n <= reference.size(); ++i)
      ++ref_counts[std::vector<std::string>(reference.begin() + i, reference.begin() + i + n)];
    for (std::size_t i = 0; i + n <= candidate.size(); ++i)
      ++cand_counts[std::vector<std::string>(candidate.begin() + i, candidate.begin() + i + n)];
    std::size_t clipped = 0;
    for (const auto& [gram, c] : cand_counts) {
      const auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) clipped += std::min(c, it->second);
    }
    if (clipped == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped) / static_cast<double>(candidate.size() - n + 1));
  }
  const double c = static_cast<double>(candidate.size()), r = static_cast<double>(reference.size());
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / static_cast<double>(kOrder));
}

double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

double attention_jsd(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ContractError("attention_jsd: no rows");
  const auto k = rows.front().size();
  std::vector<double> mix(k, 0.0);
  double mean_h = 0.0;
  for (const auto& p : rows) {
    if (p.size() != k) throw ContractError("attention_jsd: rows have different supports");
    double s = 0.0;
    for (double v : p) {
      if (v < 0.0) throw ContractError("attention_jsd: negative probability");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) throw ContractError("attention_jsd: row sums to " + std::to_string(s) + ", not 1");
    for (std::size_t i = 0; i < k; ++i) mix[i] += p[i];
    mean_h += entropy(p);
  }
  const double m = static_cast<double>(rows.size());
  for (auto& v : mix) v /= m;
  return std::max(0.0, entropy(mix) - mean_h / m);
}

double attention_map_jsd(const AttentionMap& map) {
  double total = 0.0;
  for (std::size_t q = 0; q < map.queries(); ++q) {
    std::vector<std::vector<double>> rows(map.heads(), std::vector<double>(map.keys()));
    for (std::size_t h = 0; h < map.heads(); ++h)
      for (std::size_t k = 0; k < map.keys(); ++k) rows[h][k] = map.at(h, q, k);
    total += attention_jsd(rows);
  }
  return total / static_cast<double>(map.queries());
}

std::vector<JsdPoint> jsd_curve(const std::vector<AttentionMap>& maps) {
  std::vector<JsdPoint> out;
  out.reserve(maps.size());
  for (const auto& m : maps) out.push_back({m.layer, m.unit, m.modality, attention_map_jsd(m)});
  return out;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-10s %10s %10s %10s\n", "relation", "precision", "recall", "f1");
  os << line;
  auto row = [&](const char* name, const PRF& p) {
    std::snprintf(line, sizeof line, "%-10s %10.4f %10.4f %10.4f%s\n", name, p.precision, p.recall, p.f1,
                  p.degenerate ? "  (degenerate)" : "");
    os << line;
  };
  for (auto r : kRelations) row(relation_name(r), relations[static_cast<std::size_t>(r)]);
  row("overall", overall);
  std::snprintf(line, sizeof line, "%-10s %10.4f\n%-10s %10.4f\n%-10s %10zu\n", "teds", teds, "bleu", bleu, "samples",
                samples);
  os << line;
  for (const auto& p : jsd) {
    std::snprintf(line, sizeof line, "jsd block%zu %-4s %-10s %10.6f\n", p.layer, p.unit.c_str(), p.modality.c_str(),
                  p.jsd);
    os << line;
  }
  return os.str();
}

std::string MetricsReport::to_kv() const {
  std::ostringstream os;
  auto put = [&](const std::string& prefix, const PRF& p) {
    os << prefix << ".precision=" << num(p.precision) << "\n"
       << prefix << ".recall=" << num(p.recall) << "\n"
       << prefix << ".f1=" << num(p.f1) << "\n"
       << prefix << ".degenerate=" << (p.degenerate ? 1 : 0) << "\n";
  };
  for (auto r : kRelations) put(relation_name(r), relations[static_cast<std::size_t>(r)]);
  put("overall", overall);
  os << "teds=" << num(teds) << "\nbleu=" << num(bleu) << "\nsamples=" << samples << "\n";
  for (const auto& p : jsd) os << "jsd.block" << p.layer << "." << p.unit << "." << p.modality << "=" << num(p.jsd) << "\n";
  return os.str();
}

void MetricsAccumulator::add(const RelationMatrices& pred, const RelationMatrices& gt, const StructureTree& pred_tree,
                             const StructureTree& gt_tree, const std::vector<std::string>& pred_html,
                             const std::vector<std::string>& gt_html) {
  for (auto r : kRelations) counts_[static_cast<std::size_t>(r)] += relation_counts(pred.get(r), gt.get(r));
  teds_sum_ += teds(pred_tree, gt_tree);
  bleu_sum_ += bleu(pred_html, gt_html);
  ++samples_;
}

MetricsReport MetricsAccumulator::report() const {
  MetricsReport r;
  PairCounts all;
  for (std::size_t i = 0; i < 3; ++i) {
    r.relations[i] = PRF::from(counts_[i]);
    all += counts_[i];
  }
  r.overall = PRF::from(all);
  r.samples = samples_;
  if (samples_) {
    r.teds = teds_sum_ / static_cast<double>(samples_);
    r.bleu = bleu_sum_ / static_cast<double>(samples_);
  }
  return r;
}

}  // namespace ncgm
