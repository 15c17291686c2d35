#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ncgm {

/// 8-bit grayscale raster, row-major.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, std::uint8_t fill = 255) : width(w), height(h), pixels(w * h, fill) {}

  std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  std::uint8_t& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  bool empty() const { return pixels.empty(); }
  bool operator==(const GrayImage&) const = default;
};

/// Axis-aligned box given by its centre and extent, in pixels.
struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double left() const { return x - w / 2.0; }
  double right() const { return x + w / 2.0; }
  double top() const { return y - h / 2.0; }
  double bottom() const { return y + h / 2.0; }
  static BoundingBox from_corners(double x0, double y0, double x1, double y1) {
    return {(x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0};
  }
  bool operator==(const BoundingBox&) const = default;
};

/// Inclusive row/column index ranges of a logical cell.
struct Span {
  int start_row = 0;
  int end_row = 0;
  int start_col = 0;
  int end_col = 0;

  int rowspan() const { return end_row - start_row + 1; }
  int colspan() const { return end_col - start_col + 1; }
  bool rows_intersect(const Span& o) const { return start_row <= o.end_row && o.start_row <= end_row; }
  bool cols_intersect(const Span& o) const { return start_col <= o.end_col && o.start_col <= end_col; }
  auto operator<=>(const Span&) const = default;
};

struct TableElement {
  BoundingBox box;
  std::vector<std::string> text;
  std::optional<Span> gt_span;
  bool operator==(const TableElement&) const = default;
};

/// Square binary matrix.
class AdjacencyMatrix {
 public:
  AdjacencyMatrix() = default;
  explicit AdjacencyMatrix(std::size_t n, std::uint8_t fill = 0) : n_(n), v_(n * n, fill) {}

  std::size_t size() const { return n_; }
  std::uint8_t operator()(std::size_t i, std::size_t j) const { return v_[i * n_ + j]; }
  void set(std::size_t i, std::size_t j, bool value) { v_[i * n_ + j] = value ? 1 : 0; }
  /// Sets (i,j) and (j,i).
  void set_sym(std::size_t i, std::size_t j, bool value) {
    set(i, j, value);
    set(j, i, value);
  }
  std::size_t count_ones() const;
  AdjacencyMatrix permuted(const std::vector<std::size_t>& perm) const;
  bool operator==(const AdjacencyMatrix&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> v_;
};

enum class Relation { kCell = 0, kRow = 1, kCol = 2 };
inline constexpr std::array<Relation, 3> kRelations{Relation::kCell, Relation::kRow, Relation::kCol};
const char* relation_name(Relation r);

struct RelationMatrices {
  AdjacencyMatrix cell;
  AdjacencyMatrix row;
  AdjacencyMatrix col;

  std::size_t size() const { return cell.size(); }
  const AdjacencyMatrix& get(Relation r) const;
  AdjacencyMatrix& get(Relation r);
  bool operator==(const RelationMatrices&) const = default;
};

struct TableSample {
  GrayImage image;
  std::vector<TableElement> elements;
  std::optional<RelationMatrices> relations;
  /// Reference HTML tag tokens emitted by the generator, when known.
  std::vector<std::string> html;

  std::size_t size() const { return elements.size(); }
  bool operator==(const TableSample&) const = default;
};

/// Ground-truth adjacency from element spans. Throws ContractError naming the
/// first element without a span.
RelationMatrices build_adjacency(const std::vector<TableElement>& elements);

/// Human-readable invariant violations; empty when the sample is well formed.
std::vector<std::string> validate(const TableSample& sample);

}  // namespace ncgm
