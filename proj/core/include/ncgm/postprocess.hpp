#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ncgm/datamodel.hpp"

namespace ncgm {

/// Dense N x N matrix of pair scores in [0, 1] (probabilities or 0/1 labels).
class ScoreMatrix {
 public:
  ScoreMatrix() = default;
  explicit ScoreMatrix(std::size_t n, double fill = 0.0) : n_(n), v_(n * n, fill) {}
  ScoreMatrix(std::size_t n, std::vector<double> values);
  static ScoreMatrix from(const AdjacencyMatrix& m);

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return v_[i * n_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return v_[i * n_ + j]; }
  /// Thresholded and symmetrised by element-wise max: (i,j) set iff max(s_ij, s_ji) >= threshold.
  AdjacencyMatrix binarize(double threshold) const;

 private:
  std::size_t n_ = 0;
  std::vector<double> v_;
};

using Groups = std::vector<std::vector<std::size_t>>;

enum class GroupMode {
  /// Connected components of the thresholded graph (a partition).
  kComponents,
  /// Maximal cliques; an element spanning several rows belongs to several groups.
  kMaximalCliques,
};

/// Belonging lists of a relation matrix. Groups are ordered by the mean of
/// `sort_key` over their members; members are listed in ascending index order.
Groups belonging_lists(const ScoreMatrix& adj, double threshold, const std::vector<double>& sort_key,
                       GroupMode mode = GroupMode::kComponents);

/// Row/column span per element. Row groups are ranked top to bottom by
/// comparing the vertical position of column-adjacent members (columns
/// likewise with horizontal positions), so warped rows still order correctly.
/// Elements of one cell group share the union of their spans.
std::vector<Span> to_spans(const Groups& row_groups, const Groups& col_groups, const Groups& cell_groups,
                           const std::vector<TableElement>& elements);

/// Full recovery: maximal-clique row/column lists, component cell lists, then to_spans.
std::vector<Span> recover_spans(const ScoreMatrix& cell, const ScoreMatrix& row, const ScoreMatrix& col,
                                const std::vector<TableElement>& elements, double threshold = 0.5);
std::vector<Span> recover_spans(const RelationMatrices& rel, const std::vector<TableElement>& elements);

/// One logical cell: its span, the corners of the union box of its elements
/// and their text joined by spaces.
struct LogicalCell {
  Span span;
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  std::string content;
  bool operator==(const LogicalCell&) const = default;
};

/// Elements with identical spans merged, ordered row-major by span start.
std::vector<LogicalCell> logical_cells(const std::vector<Span>& spans, const std::vector<TableElement>& elements);

std::string to_xml(const std::vector<Span>& spans, const std::vector<TableElement>& elements);
/// Reads documents produced by to_xml. Throws DataError on anything else.
std::vector<LogicalCell> parse_xml(const std::string& xml);

/// Overlapping logical cells; `conflicts` lists the pairs of clashing spans.
class GridConflictError : public std::runtime_error {
 public:
  GridConflictError(const std::string& what, std::vector<std::pair<Span, Span>> conflicts)
      : std::runtime_error(what), conflicts(std::move(conflicts)) {}
  std::vector<std::pair<Span, Span>> conflicts;
};

/// <table> (<tr> (<td ...> </td>)* </tr>)* </table>, one token per tag.
/// Overlapping cells raise GridConflictError unless `drop_conflicts` is set,
/// in which case the later of two clashing cells (row-major) is dropped.
std::vector<std::string> to_html(const std::vector<Span>& spans, bool drop_conflicts = false);
std::string td_token(int rowspan, int colspan);
std::string join_tokens(const std::vector<std::string>& tokens);

struct StructureNode {
  std::string tag;
  int rowspan = 1;
  int colspan = 1;
  std::string content;
  std::vector<StructureNode> children;

  /// Comparison label: tag, spans for td, and content.
  std::string label() const;
  std::size_t node_count() const;
  bool operator==(const StructureNode&) const = default;
};

using StructureTree = StructureNode;

/// Parses the token stream of to_html (and the generator's reference HTML).
StructureTree tree_from_html(const std::vector<std::string>& tokens);
std::vector<std::string> html_from_tree(const StructureTree& tree);
/// Balanced open/close tags.
bool is_balanced(const std::vector<std::string>& tokens);

}  // namespace ncgm
