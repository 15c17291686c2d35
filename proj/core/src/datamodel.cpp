#include "ncgm/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ncgm/errors.hpp"

namespace ncgm {

std::size_t AdjacencyMatrix::count_ones() const {
  return static_cast<std::size_t>(std::count(v_.begin(), v_.end(), std::uint8_t{1}));
}

AdjacencyMatrix AdjacencyMatrix::permuted(const std::vector<std::size_t>& perm) const {
  // Row i of the result is row perm[i] of this matrix.
  AdjacencyMatrix out(n_);
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j < n_; ++j) out.set(i, j, (*this)(perm[i], perm[j]));
  return out;
}

const char* relation_name(Relation r) {
  switch (r) {
    case Relation::kCell: return "cell";
    case Relation::kRow: return "row";
    case Relation::kCol: return "col";
  }
  return "?";
}

const AdjacencyMatrix& RelationMatrices::get(Relation r) const {
  switch (r) {
    case Relation::kCell: return cell;
    case Relation::kRow: return row;
    default: return col;
  }
}

AdjacencyMatrix& RelationMatrices::get(Relation r) {
  return const_cast<AdjacencyMatrix&>(static_cast<const RelationMatrices&>(*this).get(r));
}

RelationMatrices build_adjacency(const std::vector<TableElement>& elements) {
  const auto n = elements.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!elements[i].gt_span) throw ContractError("element " + std::to_string(i) + " has no span");
  }
  RelationMatrices m{AdjacencyMatrix(n), AdjacencyMatrix(n), AdjacencyMatrix(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = *elements[i].gt_span;
    for (std::size_t j = i; j < n; ++j) {
      const auto& b = *elements[j].gt_span;
      m.row.set_sym(i, j, a.rows_intersect(b));
      m.col.set_sym(i, j, a.cols_intersect(b));
      m.cell.set_sym(i, j, a == b);
    }
  }
  return m;
}

std::vector<std::string> validate(const TableSample& sample) {
  std::vector<std::string> out;
  auto report = [&](const std::string& s) { out.push_back(s); };
  const auto n = sample.elements.size();
  const auto& img = sample.image;
  if (n == 0) report("sample has no elements");
  if (img.width == 0 || img.height == 0) report("image is empty");
  if (img.pixels.size() != img.width * img.height) report("image pixel count does not match dimensions");

  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = sample.elements[i];
    const auto& b = e.box;
    const std::string tag = "element " + std::to_string(i) + ": ";
    if (!(b.w > 0.0) || !(b.h > 0.0)) report(tag + "box has non-positive extent");
    if (!std::isfinite(b.x) || !std::isfinite(b.y)) report(tag + "box centre not finite");
    constexpr double tol = 1e-9;
    if (b.left() < -tol || b.top() < -tol || b.right() > static_cast<double>(img.width) + tol ||
        b.bottom() > static_cast<double>(img.height) + tol) {
      report(tag + "box outside image bounds");
    }
    if (!e.gt_span) {
      report(tag + "missing span");
      continue;
    }
    const auto& s = *e.gt_span;
    if (s.start_row < 0 || s.start_col < 0) report(tag + "negative span index");
    if (s.start_row > s.end_row) report(tag + "start_row > end_row");
    if (s.start_col > s.end_col) report(tag + "start_col > end_col");
  }

  if (!sample.relations) return out;
  const auto& rel = *sample.relations;
  for (auto r : kRelations) {
    const auto& m = rel.get(r);
    const std::string name = relation_name(r);
    if (m.size() != n) {
      report(name + " matrix has size " + std::to_string(m.size()) + ", expected " + std::to_string(n));
      return out;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (m(i, i) != 1) report(name + " diagonal (" + std::to_string(i) + "," + std::to_string(i) + ") is not 1");
      for (std::size_t j = i + 1; j < n; ++j) {
        if (m(i, j) != m(j, i)) {
          report(name + " matrix asymmetric at (" + std::to_string(i) + "," + std::to_string(j) + ")");
        }
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!rel.cell(i, j)) continue;
      const std::string at = " at (" + std::to_string(i) + "," + std::to_string(j) + ")";
      if (!rel.row(i, j)) report("cell implies row violated" + at);
      if (!rel.col(i, j)) report("cell implies col violated" + at);
    }
  }
  return out;
}

}  // namespace ncgm
