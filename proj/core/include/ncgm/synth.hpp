#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ncgm/datamodel.hpp"

namespace ncgm {

struct GenParams {
  int min_rows = 2;
  int max_rows = 5;
  int min_cols = 2;
  int max_cols = 4;
  /// Chance that a grid position starts a merged (spanning) cell.
  double span_prob = 0.15;
  /// Chance that a cell's text is split into two stacked text segments.
  double split_prob = 0.15;
  int width = 512;
  int height = 384;
  /// Tables with more elements are re-drawn.
  int max_elements = 16;
  /// Seeds line intensity, ruling style and glyph widths independently of the layout.
  std::uint64_t style_seed = 0;
};

/// Throws ContractError for empty or inverted ranges or a span probability outside [0, 1).
void check(const GenParams& p);

/// Random grid with merged cells, rendered with ruled lines and block glyphs.
/// Every row keeps a single-row cell and every column a single-column cell.
/// The sample carries relations and its reference HTML.
TableSample generate_table(std::uint64_t seed, const GenParams& p);

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

/// Row-major 3x3 projective transform.
struct Homography {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};
  Point2 apply(Point2 p) const;
  /// Throws NumericalError when singular.
  Homography inverse() const;
  bool is_identity() const;
};

/// Maps src[k] to dst[k]. Throws NumericalError for a degenerate configuration.
Homography solve_homography(const std::array<Point2, 4>& src, const std::array<Point2, 4>& dst);

/// Resamples the image through `h` (output pixel -> source by the inverse,
/// bilinear, white outside) and replaces each box by the bounding rectangle of
/// its transformed corners, clipped to the canvas.
TableSample warp_perspective(const TableSample& s, const Homography& h);

/// Moves each canvas corner by uniform [-jitter, jitter] per coordinate.
/// Re-draws degenerate transforms up to 10 times before throwing NumericalError.
TableSample distort_perspective(const TableSample& s, double corner_jitter, std::uint64_t seed);

/// B2(t) = (1-t)^2 P0 + 2t(1-t) P1 + t^2 P2.
Point2 bezier2(Point2 p0, Point2 p1, Point2 p2, double t);

/// Quadratic Bezier row warp. For the row at height y0 the curve runs from
/// P0 = (0, y0) to P2 = (W-1, y0) with P1 = M + b * (0, 1), M being where the
/// row line meets the axis line (pixel-centre coordinates).
struct BezierWarp {
  Point2 axis_point;
  Point2 axis_dir{0.0, 1.0};
  double b = 0.0;
  double width = 0.0;
  double height = 0.0;

  struct Controls {
    Point2 p0, p1, p2;
  };
  /// Intersection M of the row line with the axis; the row midpoint when they are parallel.
  Point2 intersection(double y0) const;
  Controls controls(double y0) const;
  /// Curve parameter whose abscissa is x.
  double t_at(double x, double y0) const;
  /// Vertical displacement of the source row y0 at abscissa x.
  double displacement(double x, double y0) const;
};

/// Applies a warp: rows displaced along their curves, blank pixels filled from
/// the nearest valid pixel in the same column, box centres shifted by the
/// displacement at their centre.
TableSample warp_bezier(const TableSample& s, const BezierWarp& w);

/// Random axis through the middle half of the canvas, fixed offset b for all rows.
TableSample distort_bezier(const TableSample& s, std::uint64_t axis_seed, double b);
BezierWarp random_bezier_warp(const TableSample& s, std::uint64_t axis_seed, double b);

}  // namespace ncgm
