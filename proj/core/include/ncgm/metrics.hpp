#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "ncgm/attention.hpp"
#include "ncgm/datamodel.hpp"
#include "ncgm/postprocess.hpp"

namespace ncgm {

/// Pair counts over unordered non-self pairs.
struct PairCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  PairCounts& operator+=(const PairCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  /// Set when a denominator was empty and the value defaulted to 0.
  bool degenerate = false;
  static PRF from(const PairCounts& c);
};

/// A predicted pair (i<j) counts as positive if either (i,j) or (j,i) is set.
PairCounts relation_counts(const AdjacencyMatrix& pred, const AdjacencyMatrix& gt);
PRF relation_f1(const AdjacencyMatrix& pred, const AdjacencyMatrix& gt);
std::array<PRF, 3> relation_f1(const RelationMatrices& pred, const RelationMatrices& gt);

/// Exact ordered tree edit distance, unit costs, labels from StructureNode::label().
std::size_t tree_edit_distance(const StructureTree& a, const StructureTree& b);
double teds(const StructureTree& a, const StructureTree& b);

/// 4-gram BLEU, clipped precisions, uniform weights, brevity penalty, no smoothing.
double bleu(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);

/// Natural-log Shannon entropy.
double entropy(const std::vector<double>& p);
/// H(mean P_i) - mean H(P_i) over probability rows P_i of equal length.
double attention_jsd(const std::vector<std::vector<double>>& rows);
/// JSD across heads for every query of a map, averaged over queries.
double attention_map_jsd(const AttentionMap& map);

struct JsdPoint {
  std::size_t layer = 0;
  std::string unit;
  std::string modality;
  double jsd = 0.0;
};

std::vector<JsdPoint> jsd_curve(const std::vector<AttentionMap>& maps);

struct MetricsReport {
  std::array<PRF, 3> relations;  // indexed by Relation
  /// Pooled over the three relations.
  PRF overall;
  double teds = 0.0;
  double bleu = 0.0;
  std::size_t samples = 0;
  std::vector<JsdPoint> jsd;

  /// Aligned human-readable table.
  std::string to_text() const;
  /// One key=value per line.
  std::string to_kv() const;
};

/// Accumulates per-sample results; F1 is pooled over pairs, TEDS/BLEU averaged over samples.
class MetricsAccumulator {
 public:
  void add(const RelationMatrices& pred, const RelationMatrices& gt, const StructureTree& pred_tree,
           const StructureTree& gt_tree, const std::vector<std::string>& pred_html,
           const std::vector<std::string>& gt_html);
  MetricsReport report() const;

 private:
  std::array<PairCounts, 3> counts_{};
  double teds_sum_ = 0.0;
  double bleu_sum_ = 0.0;
  std::size_t samples_ = 0;
};

}  // namespace ncgm
