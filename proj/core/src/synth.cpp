#include "ncgm/synth.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

#include "ncgm/errors.hpp"
#include "ncgm/image.hpp"

namespace ncgm {

void check(const GenParams& p) {
  if (p.min_rows < 1 || p.min_cols < 1) throw ContractError("GenParams: rows and cols must be >= 1");
  if (p.max_rows < p.min_rows || p.max_cols < p.min_cols) throw ContractError("GenParams: inverted row/col range");
  if (!(p.span_prob >= 0.0 && p.span_prob < 1.0)) throw ContractError("GenParams: span probability must be in [0, 1)");
  if (!(p.split_prob >= 0.0 && p.split_prob <= 1.0)) throw ContractError("GenParams: split probability must be in [0, 1]");
  if (p.min_rows * p.min_cols > p.max_elements) {
    throw ContractError("GenParams: smallest grid already exceeds max_elements");
  }
  const int margin = 24;
  if (p.width < 2 * margin + 24 * p.max_cols || p.height < 2 * margin + 28 * p.max_rows) {
    throw ContractError("GenParams: canvas too small for the requested grid");
  }
}

namespace {

constexpr int kMargin = 24;

const char* const kWords[] = {"total", "mean",  "model", "score",  "year", "value", "rate",  "count", "name",
                              "type",  "group", "test",  "train",  "size", "error", "time",  "ratio", "gain",
                              "loss",  "base",  "ours",  "method", "data", "set",   "table", "row",   "col"};

struct Cell {
  Span span;
};

struct Style {
  int ruling = 0;  // 0 full grid, 1 horizontal rules only, 2 outer frame + horizontal rules
  std::uint8_t line_ink = 0;
  std::uint8_t glyph_ink = 0;
  int glyph_h = 9;
  int glyph_w = 5;
  bool center = false;
};

void fill_rect(GrayImage& img, int x0, int y0, int x1, int y1, std::uint8_t v) {
  x0 = std::max(x0, 0);
  y0 = std::max(y0, 0);
  x1 = std::min(x1, static_cast<int>(img.width));
  y1 = std::min(y1, static_cast<int>(img.height));
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) img.pixels[static_cast<std::size_t>(y) * img.width + x] = v;
}

std::string random_token(std::mt19937_64& rng, bool header) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (header || u(rng) < 0.4) {
    std::uniform_int_distribution<std::size_t> w(0, std::size(kWords) - 1);
    return kWords[w(rng)];
  }
  std::uniform_int_distribution<int> digits(1, 3), dig(0, 9);
  std::string t;
  const int a = digits(rng);
  for (int i = 0; i < a; ++i) t += static_cast<char>('0' + dig(rng));
  if (u(rng) < 0.5) {
    t += '.';
    t += static_cast<char>('0' + dig(rng));
  }
  return t;
}

// Layout of one cell grid: returns -1 ids for unassigned positions.
std::vector<Cell> draw_grid(std::mt19937_64& rng, int rows, int cols, double span_prob) {
  std::vector<int> owner(static_cast<std::size_t>(rows * cols), -1);
  std::vector<Cell> cells;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto at = [&](int r, int c) -> int& { return owner[static_cast<std::size_t>(r * cols + c)]; };

  // Every row keeps a rowspan-1 cell (or a still unassigned position) and every column a colspan-1 cell.
  auto keeps_singles = [&]() {
    for (int r = 0; r < rows; ++r) {
      bool ok = false;
      for (int c = 0; c < cols && !ok; ++c) ok = at(r, c) < 0 || cells[at(r, c)].span.rowspan() == 1;
      if (!ok) return false;
    }
    for (int c = 0; c < cols; ++c) {
      bool ok = false;
      for (int r = 0; r < rows && !ok; ++r) ok = at(r, c) < 0 || cells[at(r, c)].span.colspan() == 1;
      if (!ok) return false;
    }
    return true;
  };

  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (at(r, c) >= 0) continue;
      int rs = 1, cs = 1;
      if (u(rng) < span_prob) {
        rs = std::uniform_int_distribution<int>(1, std::min(3, rows - r))(rng);
        cs = std::uniform_int_distribution<int>(1, std::min(3, cols - c))(rng);
      }
      bool free = true;
      for (int y = r; y < r + rs && free; ++y)
        for (int x = c; x < c + cs && free; ++x) free = at(y, x) < 0;
      if (!free) rs = cs = 1;
      const int id = static_cast<int>(cells.size());
      cells.push_back({Span{r, r + rs - 1, c, c + cs - 1}});
      for (int y = r; y < r + rs; ++y)
        for (int x = c; x < c + cs; ++x) at(y, x) = id;
      if ((rs > 1 || cs > 1) && !keeps_singles()) {
        for (int y = r; y < r + rs; ++y)
          for (int x = c; x < c + cs; ++x) at(y, x) = -1;
        cells.back().span = Span{r, r, c, c};
        at(r, c) = id;
      }
    }
  }
  return cells;
}

std::vector<std::string> reference_html(const std::vector<Cell>& cells, int rows) {
  std::vector<std::string> out{"<table>"};
  for (int r = 0; r < rows; ++r) {
    out.emplace_back("<tr>");
    for (const auto& cell : cells) {
      if (cell.span.start_row != r) continue;
      std::string td = "<td";
      if (cell.span.rowspan() > 1) td += " rowspan=\"" + std::to_string(cell.span.rowspan()) + "\"";
      if (cell.span.colspan() > 1) td += " colspan=\"" + std::to_string(cell.span.colspan()) + "\"";
      out.push_back(td + ">");
      out.emplace_back("</td>");
    }
    out.emplace_back("</tr>");
  }
  out.emplace_back("</table>");
  return out;
}

}  // namespace

TableSample generate_table(std::uint64_t seed, const GenParams& p) {
  check(p);
  std::mt19937_64 rng(seed);
  std::mt19937_64 style_rng(p.style_seed ^ (seed * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL));
  std::uniform_real_distribution<double> u(0.0, 1.0);

  Style st;
  st.ruling = std::uniform_int_distribution<int>(0, 2)(style_rng);
  st.line_ink = static_cast<std::uint8_t>(std::uniform_int_distribution<int>(0, 90)(style_rng));
  st.glyph_ink = static_cast<std::uint8_t>(std::uniform_int_distribution<int>(0, 70)(style_rng));
  st.glyph_h = std::uniform_int_distribution<int>(8, 11)(style_rng);
  st.glyph_w = std::uniform_int_distribution<int>(4, 6)(style_rng);
  st.center = u(style_rng) < 0.5;

  int rows = 0, cols = 0;
  std::vector<Cell> cells;
  std::vector<std::vector<std::string>> cell_tokens;
  std::vector<std::uint8_t> split;
  for (int attempt = 0;; ++attempt) {
    const int max_r = attempt < 20 ? p.max_rows : p.min_rows;
    const int max_c = attempt < 20 ? p.max_cols : p.min_cols;
    rows = std::uniform_int_distribution<int>(p.min_rows, max_r)(rng);
    cols = std::uniform_int_distribution<int>(p.min_cols, max_c)(rng);
    cells = draw_grid(rng, rows, cols, p.span_prob);
    cell_tokens.assign(cells.size(), {});
    split.assign(cells.size(), 0);
    std::size_t n = 0;
    for (std::size_t k = 0; k < cells.size(); ++k) {
      const int count = std::uniform_int_distribution<int>(1, 3)(rng);
      for (int t = 0; t < count; ++t) cell_tokens[k].push_back(random_token(rng, cells[k].span.start_row == 0));
      const bool can_split = cells.size() > 1 && count >= 2 && attempt < 10;
      split[k] = can_split && u(rng) < p.split_prob;
      n += split[k] ? 2 : 1;
    }
    if (n <= static_cast<std::size_t>(p.max_elements)) break;
  }

  // Geometry: column widths and row heights from random weights.
  const int usable_w = p.width - 2 * kMargin;
  const int usable_h = p.height - 2 * kMargin;
  std::vector<double> cw(cols), rh(rows);
  for (auto& w : cw) w = std::uniform_real_distribution<double>(1.0, 2.0)(rng);
  for (auto& h : rh) h = std::uniform_real_distribution<double>(30.0, 48.0)(rng);
  const double wsum = std::accumulate(cw.begin(), cw.end(), 0.0);
  const double table_w = usable_w * std::uniform_real_distribution<double>(0.8, 1.0)(rng);
  double hsum = std::accumulate(rh.begin(), rh.end(), 0.0);
  const double hscale = hsum > usable_h ? usable_h / hsum : 1.0;
  std::vector<int> xs(cols + 1), ys(rows + 1);
  const int x_off = kMargin + static_cast<int>((usable_w - table_w) * u(rng));
  const int y_off = kMargin + static_cast<int>((usable_h - hsum * hscale) * u(rng));
  double acc = 0.0;
  for (int c = 0; c <= cols; ++c) {
    xs[c] = x_off + static_cast<int>(std::lround(acc));
    if (c < cols) acc += cw[c] / wsum * table_w;
  }
  acc = 0.0;
  for (int r = 0; r <= rows; ++r) {
    ys[r] = y_off + static_cast<int>(std::lround(acc));
    if (r < rows) acc += rh[r] * hscale;
  }

  TableSample s;
  s.image.width = static_cast<std::size_t>(p.width);
  s.image.height = static_cast<std::size_t>(p.height);
  s.image.pixels.assign(s.image.width * s.image.height, 255);
  auto& img = s.image;

  // Ruled lines.
  auto hline = [&](int y, int x0, int x1) { fill_rect(img, x0, y, x1 + 1, y + 1, st.line_ink); };
  auto vline = [&](int x, int y0, int y1) { fill_rect(img, x, y0, x + 1, y1 + 1, st.line_ink); };
  if (st.ruling == 0) {
    for (const auto& cell : cells) {
      const auto& sp = cell.span;
      const int x0 = xs[sp.start_col], x1 = xs[sp.end_col + 1], y0 = ys[sp.start_row], y1 = ys[sp.end_row + 1];
      hline(y0, x0, x1);
      hline(y1, x0, x1);
      vline(x0, y0, y1);
      vline(x1, y0, y1);
    }
  } else {
    hline(ys[0], xs[0], xs[cols]);
    hline(ys[rows], xs[0], xs[cols]);
    if (rows > 1) hline(ys[1], xs[0], xs[cols]);
    if (st.ruling == 2) {
      vline(xs[0], ys[0], ys[rows]);
      vline(xs[cols], ys[0], ys[rows]);
      for (int r = 2; r < rows; ++r) hline(ys[r], xs[0], xs[cols]);
    }
  }

  // Text segments as block glyphs, one element per segment.
  const int pad = 4, line_gap = 4;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const auto& sp = cells[k].span;
    const int cx0 = xs[sp.start_col] + pad, cx1 = xs[sp.end_col + 1] - pad;
    const int cy0 = ys[sp.start_row] + pad, cy1 = ys[sp.end_row + 1] - pad;
    const auto& toks = cell_tokens[k];
    std::vector<std::vector<std::string>> lines;
    if (split[k]) {
      const auto half = toks.size() / 2;
      lines.emplace_back(toks.begin(), toks.begin() + static_cast<long>(half));
      lines.emplace_back(toks.begin() + static_cast<long>(half), toks.end());
    } else {
      lines.push_back(toks);
    }
    const int block_h = static_cast<int>(lines.size()) * st.glyph_h + (static_cast<int>(lines.size()) - 1) * line_gap;
    int ly = cy0 + std::max(0, (cy1 - cy0 - block_h) / 2);
    for (auto& line : lines) {
      // Glyph runs: per character a glyph_w rectangle plus a 1 px gap; tokens separated by a glyph-wide space.
      auto run_width = [&](const std::vector<std::string>& ts) {
        int w = 0;
        for (std::size_t t = 0; t < ts.size(); ++t) {
          w += static_cast<int>(ts[t].size()) * (st.glyph_w + 1) - 1;
          if (t + 1 < ts.size()) w += st.glyph_w + 2;
        }
        return w;
      };
      while (line.size() > 1 && run_width(line) > cx1 - cx0) line.pop_back();
      const int w = std::min(run_width(line), cx1 - cx0);
      const int lx = st.center ? cx0 + (cx1 - cx0 - w) / 2 : cx0;
      int x = lx;
      for (std::size_t t = 0; t < line.size(); ++t) {
        for (std::size_t ch = 0; ch < line[t].size(); ++ch) {
          const int gx1 = std::min(x + st.glyph_w, lx + w);
          // Lowercase glyphs are shorter than digits and capitals.
          const int top = std::isdigit(static_cast<unsigned char>(line[t][ch])) ? ly : ly + st.glyph_h / 4;
          if (gx1 > x) fill_rect(img, x, top, gx1, ly + st.glyph_h, st.glyph_ink);
          x += st.glyph_w + 1;
        }
        x += st.glyph_w + 1;
      }
      TableElement e;
      e.box = BoundingBox::from_corners(lx, ly, lx + w, ly + st.glyph_h);
      e.text = line;
      e.gt_span = sp;
      s.elements.push_back(std::move(e));
      ly += st.glyph_h + line_gap;
    }
  }

  s.relations = build_adjacency(s.elements);
  s.html = reference_html(cells, rows);
  return s;
}

Point2 Homography::apply(Point2 p) const {
  const double w = m[6] * p.x + m[7] * p.y + m[8];
  return {(m[0] * p.x + m[1] * p.y + m[2]) / w, (m[3] * p.x + m[4] * p.y + m[5]) / w};
}

Homography Homography::inverse() const {
  Eigen::Matrix3d a;
  a << m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8];
  const double det = a.determinant();
  if (!std::isfinite(det) || std::abs(det) < 1e-12) throw NumericalError("homography is singular");
  const Eigen::Matrix3d inv = a.inverse();
  Homography h;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) h.m[static_cast<std::size_t>(r * 3 + c)] = inv(r, c) / inv(2, 2);
  return h;
}

bool Homography::is_identity() const { return m == Homography{}.m; }

Homography solve_homography(const std::array<Point2, 4>& src, const std::array<Point2, 4>& dst) {
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> rhs;
  for (int k = 0; k < 4; ++k) {
    const auto [x, y] = src[static_cast<std::size_t>(k)];
    const auto [u, v] = dst[static_cast<std::size_t>(k)];
    a.row(2 * k) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * k + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    rhs(2 * k) = u;
    rhs(2 * k + 1) = v;
  }
  const Eigen::FullPivLU<Eigen::Matrix<double, 8, 8>> lu(a);
  if (!lu.isInvertible()) throw NumericalError("degenerate corner configuration for homography");
  const Eigen::Matrix<double, 8, 1> h = lu.solve(rhs);
  Homography out;
  for (int i = 0; i < 8; ++i) out.m[static_cast<std::size_t>(i)] = h(i);
  out.m[8] = 1.0;
  if (!std::all_of(out.m.begin(), out.m.end(), [](double v) { return std::isfinite(v); })) {
    throw NumericalError("homography has non-finite entries");
  }
  return out;
}

namespace {

std::uint8_t to_pixel(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

BoundingBox clip_box(double x0, double y0, double x1, double y1, const GrayImage& img) {
  x0 = std::max(x0, 0.0);
  y0 = std::max(y0, 0.0);
  x1 = std::min(x1, static_cast<double>(img.width));
  y1 = std::min(y1, static_cast<double>(img.height));
  if (!(x1 > x0) || !(y1 > y0)) throw NumericalError("distortion collapsed a box outside the canvas");
  return BoundingBox::from_corners(x0, y0, x1, y1);
}

}  // namespace

TableSample warp_perspective(const TableSample& s, const Homography& h) {
  if (h.is_identity()) return s;
  const auto inv = h.inverse();
  TableSample out = s;
  const auto& src = s.image;
  for (std::size_t v = 0; v < src.height; ++v) {
    for (std::size_t u = 0; u < src.width; ++u) {
      // Box coordinates put pixel centres at +0.5; bilinear sampling at integers.
      const auto q = inv.apply({static_cast<double>(u) + 0.5, static_cast<double>(v) + 0.5});
      const auto val = sample_bilinear(src, q.x - 0.5, q.y - 0.5);
      out.image.pixels[v * src.width + u] = val ? to_pixel(*val) : 255;
    }
  }
  for (auto& e : out.elements) {
    const auto& b = e.box;
    const Point2 corners[] = {{b.left(), b.top()}, {b.right(), b.top()}, {b.right(), b.bottom()}, {b.left(), b.bottom()}};
    double x0 = INFINITY, y0 = INFINITY, x1 = -INFINITY, y1 = -INFINITY;
    for (const auto& c : corners) {
      const auto t = h.apply(c);
      if (!std::isfinite(t.x) || !std::isfinite(t.y)) throw NumericalError("box corner maps to infinity");
      x0 = std::min(x0, t.x);
      y0 = std::min(y0, t.y);
      x1 = std::max(x1, t.x);
      y1 = std::max(y1, t.y);
    }
    e.box = clip_box(x0, y0, x1, y1, out.image);
  }
  return out;
}

namespace {

double cross(Point2 o, Point2 a, Point2 b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

bool convex(const std::array<Point2, 4>& q) {
  int sign = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double c = cross(q[i], q[(i + 1) % 4], q[(i + 2) % 4]);
    if (std::abs(c) < 1e-9) return false;
    const int sg = c > 0 ? 1 : -1;
    if (sign != 0 && sg != sign) return false;
    sign = sg;
  }
  return true;
}

}  // namespace

TableSample distort_perspective(const TableSample& s, double corner_jitter, std::uint64_t seed) {
  const double w = static_cast<double>(s.image.width), h = static_cast<double>(s.image.height);
  if (!(corner_jitter >= 0.0) || corner_jitter >= std::min(w, h) / 4.0) {
    throw ContractError("distort_perspective: jitter must be in [0, min(W,H)/4)");
  }
  if (corner_jitter == 0.0) return s;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> j(-corner_jitter, corner_jitter);
  const std::array<Point2, 4> src{{{0, 0}, {w, 0}, {w, h}, {0, h}}};
  for (int attempt = 0; attempt < 10; ++attempt) {
    auto dst = src;
    for (auto& p : dst) {
      p.x += j(rng);
      p.y += j(rng);
    }
    if (!convex(dst)) continue;
    try {
      return warp_perspective(s, solve_homography(src, dst));
    } catch (const NumericalError&) {
    }
  }
  throw NumericalError("distort_perspective: no valid homography after 10 draws");
}

Point2 bezier2(Point2 p0, Point2 p1, Point2 p2, double t) {
  const double a = (1 - t) * (1 - t), b = 2 * t * (1 - t), c = t * t;
  return {a * p0.x + b * p1.x + c * p2.x, a * p0.y + b * p1.y + c * p2.y};
}

Point2 BezierWarp::intersection(double y0) const {
  const double right = width - 1.0;
  double x;
  if (std::abs(axis_dir.y) < 1e-12) {
    x = right / 2.0;
  } else {
    x = axis_point.x + (y0 - axis_point.y) * axis_dir.x / axis_dir.y;
  }
  // Keeps the abscissa of the curve monotone in t.
  x = std::clamp(x, 0.05 * right, 0.95 * right);
  return {x, y0};
}

BezierWarp::Controls BezierWarp::controls(double y0) const {
  const auto m = intersection(y0);
  return {{0.0, y0}, {m.x, m.y + b}, {width - 1.0, y0}};
}

double BezierWarp::t_at(double x, double y0) const {
  // x(t) = 2t(1-t) xM + t^2 (W-1); root of (W-1-2xM) t^2 + 2 xM t - x = 0 in rationalised form.
  const double xm = intersection(y0).x;
  const double a = (width - 1.0) - 2.0 * xm;
  const double disc = std::max(0.0, xm * xm + a * x);
  const double denom = xm + std::sqrt(disc);
  return denom > 0.0 ? std::clamp(x / denom, 0.0, 1.0) : 0.0;
}

double BezierWarp::displacement(double x, double y0) const {
  if (b == 0.0) return 0.0;
  const double t = t_at(x, y0);
  return 2.0 * t * (1.0 - t) * b;
}

TableSample warp_bezier(const TableSample& s, const BezierWarp& w) {
  TableSample out = s;
  if (w.b == 0.0) return out;
  const auto& src = s.image;
  const auto W = src.width, H = src.height;
  std::vector<std::uint8_t> valid(W * H, 0);
  for (std::size_t x = 0; x < W; ++x) {
    const double fx = static_cast<double>(x);
    for (std::size_t y = 0; y < H; ++y) {
      // Source row y0 with y0 + d(x, y0) = y, by fixed-point iteration.
      const double fy = static_cast<double>(y);
      double y0 = fy;
      for (int it = 0; it < 50; ++it) {
        const double next = fy - w.displacement(fx, y0);
        const bool done = std::abs(next - y0) < 1e-10;
        y0 = next;
        if (done) break;
      }
      const auto val = sample_bilinear(src, fx, y0);
      if (val) {
        out.image.pixels[y * W + x] = to_pixel(*val);
        valid[y * W + x] = 1;
      }
    }
    // Blank pixels take the nearest valid pixel of the column.
    std::vector<long> nearest(H, -1);
    long last = -1;
    for (std::size_t y = 0; y < H; ++y) {
      if (valid[y * W + x]) last = static_cast<long>(y);
      nearest[y] = last;
    }
    last = -1;
    for (std::size_t y = H; y-- > 0;) {
      if (valid[y * W + x]) last = static_cast<long>(y);
      if (valid[y * W + x]) continue;
      const long up = nearest[y];
      long pick = up;
      if (last >= 0 && (up < 0 || last - static_cast<long>(y) < static_cast<long>(y) - up)) pick = last;
      out.image.pixels[y * W + x] = pick >= 0 ? out.image.pixels[static_cast<std::size_t>(pick) * W + x] : 255;
    }
  }
  for (auto& e : out.elements) {
    const auto& b = e.box;
    const double cx = std::clamp(b.x - 0.5, 0.0, static_cast<double>(W) - 1.0);
    const double dy = w.displacement(cx, b.y - 0.5);
    e.box = clip_box(b.left(), b.top() + dy, b.right(), b.bottom() + dy, out.image);
  }
  return out;
}

BezierWarp random_bezier_warp(const TableSample& s, std::uint64_t axis_seed, double b) {
  const double w = static_cast<double>(s.image.width), h = static_cast<double>(s.image.height);
  if (!(std::abs(b) < h / 4.0)) throw ContractError("distort_bezier: |b| must be < H/4");
  std::mt19937_64 rng(axis_seed);
  BezierWarp warp;
  warp.width = w;
  warp.height = h;
  warp.b = b;
  warp.axis_point = {std::uniform_real_distribution<double>(w / 4, 3 * w / 4)(rng),
                     std::uniform_real_distribution<double>(h / 4, 3 * h / 4)(rng)};
  const double angle = std::uniform_real_distribution<double>(-std::numbers::pi / 4, std::numbers::pi / 4)(rng);
  warp.axis_dir = {std::sin(angle), std::cos(angle)};
  return warp;
}

TableSample distort_bezier(const TableSample& s, std::uint64_t axis_seed, double b) {
  return warp_bezier(s, random_bezier_warp(s, axis_seed, b));
}

}  // namespace ncgm
