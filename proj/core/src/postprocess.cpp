#include "ncgm/postprocess.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <numeric>
#include <regex>
#include <set>

#include "ncgm/errors.hpp"

namespace ncgm {

ScoreMatrix::ScoreMatrix(std::size_t n, std::vector<double> values) : n_(n), v_(std::move(values)) {
  if (v_.size() != n * n) throw DimensionError("ScoreMatrix: expected " + std::to_string(n * n) + " values");
}

ScoreMatrix ScoreMatrix::from(const AdjacencyMatrix& m) {
  ScoreMatrix s(m.size());
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j) s(i, j) = m(i, j);
  return s;
}

AdjacencyMatrix ScoreMatrix::binarize(double threshold) const {
  AdjacencyMatrix out(n_);
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j < n_; ++j) out.set(i, j, std::max((*this)(i, j), (*this)(j, i)) >= threshold);
  return out;
}

namespace {

Groups components(const AdjacencyMatrix& a) {
  const auto n = a.size();
  std::vector<int> label(n, -1);
  Groups out;
  for (std::size_t s = 0; s < n; ++s) {
    if (label[s] >= 0) continue;
    const int id = static_cast<int>(out.size());
    out.emplace_back();
    std::vector<std::size_t> stack{s};
    label[s] = id;
    while (!stack.empty()) {
      const auto u = stack.back();
      stack.pop_back();
      out.back().push_back(u);
      for (std::size_t v = 0; v < n; ++v) {
        if (label[v] < 0 && a(u, v)) {
          label[v] = id;
          stack.push_back(v);
        }
      }
    }
    std::sort(out.back().begin(), out.back().end());
  }
  return out;
}

// Bron-Kerbosch with pivoting. Returns false if more than `cap` cliques exist.
class CliqueFinder {
 public:
  CliqueFinder(const AdjacencyMatrix& a, std::size_t cap) : a_(a), cap_(cap) {}

  bool run(Groups& out) {
    std::vector<std::size_t> p(a_.size());
    std::iota(p.begin(), p.end(), 0);
    std::vector<std::size_t> r;
    expand(r, p, {}, out);
    return !overflow_;
  }

 private:
  bool adj(std::size_t u, std::size_t v) const { return u != v && a_(u, v); }

  std::vector<std::size_t> neighbours_in(std::size_t u, const std::vector<std::size_t>& s) const {
    std::vector<std::size_t> out;
    for (auto v : s)
      if (adj(u, v)) out.push_back(v);
    return out;
  }

  void expand(std::vector<std::size_t>& r, std::vector<std::size_t> p, std::vector<std::size_t> x, Groups& out) {
    if (overflow_) return;
    if (p.empty() && x.empty()) {
      if (out.size() >= cap_) {
        overflow_ = true;
        return;
      }
      auto c = r;
      std::sort(c.begin(), c.end());
      out.push_back(std::move(c));
      return;
    }
    std::size_t pivot = p.empty() ? x.front() : p.front();
    std::size_t best = 0;
    for (const auto* s : {&p, &x}) {
      for (auto u : *s) {
        const auto k = neighbours_in(u, p).size();
        if (k > best) {
          best = k;
          pivot = u;
        }
      }
    }
    std::vector<std::size_t> candidates;
    for (auto v : p)
      if (!adj(pivot, v)) candidates.push_back(v);
    for (auto v : candidates) {
      r.push_back(v);
      expand(r, neighbours_in(v, p), neighbours_in(v, x), out);
      r.pop_back();
      p.erase(std::find(p.begin(), p.end(), v));
      x.push_back(v);
    }
  }

  const AdjacencyMatrix& a_;
  std::size_t cap_;
  bool overflow_ = false;
};

constexpr std::size_t kCliqueCap = 20000;

double mean_of(const std::vector<std::size_t>& g, const std::vector<double>& key) {
  double s = 0.0;
  for (auto i : g) s += key[i];
  return g.empty() ? 0.0 : s / static_cast<double>(g.size());
}

}  // namespace

Groups belonging_lists(const ScoreMatrix& adj, double threshold, const std::vector<double>& sort_key,
                       GroupMode mode) {
  const auto n = adj.size();
  if (sort_key.size() != n) throw DimensionError("belonging_lists: sort key length differs from matrix size");
  const auto a = adj.binarize(threshold);
  Groups groups;
  if (mode == GroupMode::kMaximalCliques) {
    CliqueFinder finder(a, kCliqueCap);
    if (!finder.run(groups)) groups = components(a);
  } else {
    groups = components(a);
  }
  std::stable_sort(groups.begin(), groups.end(), [&](const auto& g, const auto& h) {
    const double mg = mean_of(g, sort_key), mh = mean_of(h, sort_key);
    if (mg != mh) return mg < mh;
    return g < h;
  });
  return groups;
}

namespace {

// Orders groups along one axis. Two groups are compared by the coordinates of
// their exclusive members that share a group on the cross axis (e.g. rows are
// compared within columns), falling back to mean coordinates.
std::vector<int> rank_groups(const Groups& groups, const Groups& cross, const std::vector<double>& coord) {
  const auto n = coord.size();
  std::vector<std::uint8_t> share(n * n, 0);
  for (const auto& c : cross)
    for (auto a : c)
      for (auto b : c) share[a * n + b] = 1;
  std::vector<std::vector<std::uint8_t>> member(groups.size(), std::vector<std::uint8_t>(n, 0));
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (auto i : groups[g]) member[g][i] = 1;

  const auto gcount = groups.size();
  std::vector<int> before_count(gcount, 0);
  for (std::size_t g = 0; g < gcount; ++g) {
    for (std::size_t h = g + 1; h < gcount; ++h) {
      std::vector<std::size_t> only_g, only_h;
      for (auto i : groups[g])
        if (!member[h][i]) only_g.push_back(i);
      for (auto i : groups[h])
        if (!member[g][i]) only_h.push_back(i);
      long vote = 0;
      for (auto a : only_g) {
        for (auto b : only_h) {
          if (!share[a * n + b]) continue;
          if (coord[b] > coord[a]) ++vote;
          if (coord[b] < coord[a]) --vote;
        }
      }
      bool g_first;
      if (vote != 0) {
        g_first = vote > 0;
      } else {
        const auto& ga = only_g.empty() ? groups[g] : only_g;
        const auto& hb = only_h.empty() ? groups[h] : only_h;
        const double mg = mean_of(ga, coord), mh = mean_of(hb, coord);
        g_first = mg != mh ? mg < mh : groups[g] < groups[h];
      }
      ++before_count[g_first ? h : g];
    }
  }
  std::vector<std::size_t> order(gcount);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (before_count[a] != before_count[b]) return before_count[a] < before_count[b];
    const double ma = mean_of(groups[a], coord), mb = mean_of(groups[b], coord);
    if (ma != mb) return ma < mb;
    return groups[a] < groups[b];
  });
  std::vector<int> rank(gcount);
  for (std::size_t r = 0; r < gcount; ++r) rank[order[r]] = static_cast<int>(r);
  return rank;
}

void check_cover(const Groups& groups, std::size_t n, const char* what) {
  std::vector<std::uint8_t> seen(n, 0);
  for (const auto& g : groups) {
    for (auto i : g) {
      if (i >= n) throw ContractError(std::string("to_spans: ") + what + " group references element " + std::to_string(i));
      seen[i] = 1;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen[i]) throw ContractError("to_spans: element " + std::to_string(i) + " is in no " + what + " group");
  }
}

}  // namespace

std::vector<Span> to_spans(const Groups& row_groups, const Groups& col_groups, const Groups& cell_groups,
                           const std::vector<TableElement>& elements) {
  const auto n = elements.size();
  check_cover(row_groups, n, "row");
  check_cover(col_groups, n, "column");
  std::vector<double> ys(n), xs(n);
  for (std::size_t i = 0; i < n; ++i) {
    ys[i] = elements[i].box.y;
    xs[i] = elements[i].box.x;
  }
  const auto row_rank = rank_groups(row_groups, col_groups, ys);
  const auto col_rank = rank_groups(col_groups, row_groups, xs);

  constexpr int kUnset = -1;
  std::vector<Span> spans(n, Span{kUnset, kUnset, kUnset, kUnset});
  auto widen = [](int& lo, int& hi, int v) {
    lo = lo == kUnset ? v : std::min(lo, v);
    hi = hi == kUnset ? v : std::max(hi, v);
  };
  for (std::size_t g = 0; g < row_groups.size(); ++g)
    for (auto i : row_groups[g]) widen(spans[i].start_row, spans[i].end_row, row_rank[g]);
  for (std::size_t g = 0; g < col_groups.size(); ++g)
    for (auto i : col_groups[g]) widen(spans[i].start_col, spans[i].end_col, col_rank[g]);

  for (const auto& g : cell_groups) {
    if (g.empty()) continue;
    Span u = spans[g.front()];
    for (auto i : g) {
      if (i >= n) throw ContractError("to_spans: cell group references element " + std::to_string(i));
      u.start_row = std::min(u.start_row, spans[i].start_row);
      u.end_row = std::max(u.end_row, spans[i].end_row);
      u.start_col = std::min(u.start_col, spans[i].start_col);
      u.end_col = std::max(u.end_col, spans[i].end_col);
    }
    for (auto i : g) spans[i] = u;
  }
  return spans;
}

std::vector<Span> recover_spans(const ScoreMatrix& cell, const ScoreMatrix& row, const ScoreMatrix& col,
                                const std::vector<TableElement>& elements, double threshold) {
  const auto n = elements.size();
  if (cell.size() != n || row.size() != n || col.size() != n) {
    throw DimensionError("recover_spans: matrix size differs from element count");
  }
  std::vector<double> top(n), left(n);
  for (std::size_t i = 0; i < n; ++i) {
    top[i] = elements[i].box.top();
    left[i] = elements[i].box.left();
  }
  const auto rows = belonging_lists(row, threshold, top, GroupMode::kMaximalCliques);
  const auto cols = belonging_lists(col, threshold, left, GroupMode::kMaximalCliques);
  const auto cells = belonging_lists(cell, threshold, top, GroupMode::kComponents);
  return to_spans(rows, cols, cells, elements);
}

std::vector<Span> recover_spans(const RelationMatrices& rel, const std::vector<TableElement>& elements) {
  return recover_spans(ScoreMatrix::from(rel.cell), ScoreMatrix::from(rel.row), ScoreMatrix::from(rel.col), elements);
}

std::vector<LogicalCell> logical_cells(const std::vector<Span>& spans, const std::vector<TableElement>& elements) {
  if (spans.size() != elements.size()) throw DimensionError("logical_cells: span count differs from element count");
  std::map<std::tuple<int, int, int, int>, std::vector<std::size_t>> by_span;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const auto& s = spans[i];
    by_span[{s.start_row, s.start_col, s.end_row, s.end_col}].push_back(i);
  }
  std::vector<LogicalCell> out;
  for (const auto& [key, members] : by_span) {
    LogicalCell c;
    c.span = spans[members.front()];
    c.x0 = c.y0 = std::numeric_limits<double>::infinity();
    c.x1 = c.y1 = -std::numeric_limits<double>::infinity();
    for (auto i : members) {
      const auto& b = elements[i].box;
      c.x0 = std::min(c.x0, b.left());
      c.y0 = std::min(c.y0, b.top());
      c.x1 = std::max(c.x1, b.right());
      c.y1 = std::max(c.y1, b.bottom());
      for (const auto& t : elements[i].text) {
        if (!c.content.empty()) c.content += ' ';
        c.content += t;
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string xml_unescape(const std::string& s) {
  static const std::pair<const char*, char> kEntities[] = {{"&amp;", '&'}, {"&lt;", '<'}, {"&gt;", '>'}, {"&quot;", '"'}};
  std::string out;
  for (std::size_t i = 0; i < s.size();) {
    bool matched = false;
    if (s[i] == '&') {
      for (const auto& [ent, ch] : kEntities) {
        if (s.compare(i, std::char_traits<char>::length(ent), ent) == 0) {
          out += ch;
          i += std::char_traits<char>::length(ent);
          matched = true;
          break;
        }
      }
      if (!matched) throw DataError("xml: unknown entity at offset " + std::to_string(i));
    } else {
      out += s[i++];
    }
  }
  return out;
}

}  // namespace

std::string to_xml(const std::vector<Span>& spans, const std::vector<TableElement>& elements) {
  std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<table>\n";
  for (const auto& c : logical_cells(spans, elements)) {
    out += "  <cell start-row=\"" + std::to_string(c.span.start_row) + "\" end-row=\"" +
           std::to_string(c.span.end_row) + "\" start-col=\"" + std::to_string(c.span.start_col) + "\" end-col=\"" +
           std::to_string(c.span.end_col) + "\" x0=\"" + fmt(c.x0) + "\" y0=\"" + fmt(c.y0) + "\" x1=\"" + fmt(c.x1) +
           "\" y1=\"" + fmt(c.y1) + "\">" + xml_escape(c.content) + "</cell>\n";
  }
  out += "</table>\n";
  return out;
}

std::vector<LogicalCell> parse_xml(const std::string& xml) {
  if (xml.find("<table>") == std::string::npos || xml.find("</table>") == std::string::npos) {
    throw DataError("xml: missing <table> root");
  }
  static const std::regex kCell(
      R"re(<cell start-row="(-?\d+)" end-row="(-?\d+)" start-col="(-?\d+)" end-col="(-?\d+)" x0="([^"]+)" y0="([^"]+)" x1="([^"]+)" y1="([^"]+)">([^<]*)</cell>)re");
  std::vector<LogicalCell> out;
  auto num = [](const std::string& s) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw DataError("xml: bad number '" + s + "'");
    return v;
  };
  for (std::sregex_iterator it(xml.begin(), xml.end(), kCell), end; it != end; ++it) {
    const auto& m = *it;
    LogicalCell c;
    c.span = {std::stoi(m[1]), std::stoi(m[2]), std::stoi(m[3]), std::stoi(m[4])};
    c.x0 = num(m[5]);
    c.y0 = num(m[6]);
    c.x1 = num(m[7]);
    c.y1 = num(m[8]);
    c.content = xml_unescape(m[9]);
    out.push_back(std::move(c));
  }
  std::size_t opened = 0;
  for (auto pos = xml.find("<cell"); pos != std::string::npos; pos = xml.find("<cell", pos + 1)) ++opened;
  if (opened != out.size()) throw DataError("xml: malformed cell node");
  return out;
}

std::string td_token(int rowspan, int colspan) {
  std::string t = "<td";
  if (rowspan > 1) t += " rowspan=\"" + std::to_string(rowspan) + "\"";
  if (colspan > 1) t += " colspan=\"" + std::to_string(colspan) + "\"";
  return t + ">";
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) out += t;
  return out;
}

std::vector<std::string> to_html(const std::vector<Span>& spans, bool drop_conflicts) {
  std::set<Span, std::less<>> unique;
  for (const auto& s : spans) {
    if (s.start_row < 0 || s.start_col < 0 || s.end_row < s.start_row || s.end_col < s.start_col) {
      throw ContractError("to_html: invalid span");
    }
    unique.insert(s);
  }
  std::vector<Span> cells(unique.begin(), unique.end());
  std::stable_sort(cells.begin(), cells.end(), [](const Span& a, const Span& b) {
    return std::tie(a.start_row, a.start_col) < std::tie(b.start_row, b.start_col);
  });
  int rows = 0, cols = 0;
  for (const auto& c : cells) {
    rows = std::max(rows, c.end_row + 1);
    cols = std::max(cols, c.end_col + 1);
  }
  std::vector<int> owner(static_cast<std::size_t>(rows) * cols, -1);
  std::vector<std::uint8_t> kept(cells.size(), 1);
  std::vector<std::pair<Span, Span>> conflicts;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const auto& c = cells[k];
    std::set<int> clash;
    for (int r = c.start_row; r <= c.end_row; ++r)
      for (int q = c.start_col; q <= c.end_col; ++q)
        if (owner[r * cols + q] >= 0) clash.insert(owner[r * cols + q]);
    if (!clash.empty()) {
      for (int o : clash) conflicts.emplace_back(cells[o], c);
      kept[k] = 0;
      continue;
    }
    for (int r = c.start_row; r <= c.end_row; ++r)
      for (int q = c.start_col; q <= c.end_col; ++q) owner[r * cols + q] = static_cast<int>(k);
  }
  if (!conflicts.empty() && !drop_conflicts) {
    std::string msg = "to_html: overlapping cells";
    for (const auto& [a, b] : conflicts) {
      msg += " [(" + std::to_string(a.start_row) + "," + std::to_string(a.end_row) + "," + std::to_string(a.start_col) +
             "," + std::to_string(a.end_col) + ") vs (" + std::to_string(b.start_row) + "," + std::to_string(b.end_row) +
             "," + std::to_string(b.start_col) + "," + std::to_string(b.end_col) + ")]";
    }
    throw GridConflictError(msg, std::move(conflicts));
  }
  std::vector<std::string> out{"<table>"};
  std::size_t k = 0;
  for (int r = 0; r < rows; ++r) {
    out.emplace_back("<tr>");
    for (; k < cells.size() && cells[k].start_row == r; ++k) {
      if (!kept[k]) continue;
      out.push_back(td_token(cells[k].rowspan(), cells[k].colspan()));
      out.emplace_back("</td>");
    }
    out.emplace_back("</tr>");
  }
  out.emplace_back("</table>");
  return out;
}

std::string StructureNode::label() const {
  std::string l = tag;
  if (tag == "td") l += ":" + std::to_string(rowspan) + "x" + std::to_string(colspan);
  if (!content.empty()) l += ":" + content;
  return l;
}

std::size_t StructureNode::node_count() const {
  std::size_t n = 1;
  for (const auto& c : children) n += c.node_count();
  return n;
}

namespace {

bool is_open(const std::string& t) { return t.size() > 2 && t.front() == '<' && t[1] != '/'; }
bool is_close(const std::string& t) { return t.size() > 3 && t.rfind("</", 0) == 0; }

std::string tag_name(const std::string& t) {
  const auto start = t[1] == '/' ? 2u : 1u;
  const auto end = t.find_first_of(" >", start);
  return t.substr(start, end - start);
}

int attr(const std::string& t, const char* name) {
  const auto key = std::string(name) + "=\"";
  const auto pos = t.find(key);
  if (pos == std::string::npos) return 1;
  const int v = std::atoi(t.c_str() + pos + key.size());
  if (v < 1) throw DataError("html: " + std::string(name) + " must be >= 1 in " + t);
  return v;
}

}  // namespace

bool is_balanced(const std::vector<std::string>& tokens) {
  std::vector<std::string> stack;
  for (const auto& t : tokens) {
    if (is_close(t)) {
      if (stack.empty() || stack.back() != tag_name(t)) return false;
      stack.pop_back();
    } else if (is_open(t)) {
      stack.push_back(tag_name(t));
    }
  }
  return stack.empty();
}

StructureTree tree_from_html(const std::vector<std::string>& tokens) {
  if (!is_balanced(tokens)) throw DataError("html: unbalanced tag sequence");
  if (tokens.empty() || tag_name(tokens.front()) != "table" || !is_open(tokens.front())) {
    throw DataError("html: sequence must start with <table>");
  }
  StructureTree root;
  std::vector<StructureNode*> stack;
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    const auto& t = tokens[k];
    if (is_close(t)) {
      stack.pop_back();
      if (stack.empty() && k + 1 != tokens.size()) throw DataError("html: tokens after </table>");
    } else if (is_open(t)) {
      StructureNode node;
      node.tag = tag_name(t);
      if (node.tag == "td") {
        node.rowspan = attr(t, "rowspan");
        node.colspan = attr(t, "colspan");
      }
      if (stack.empty()) {
        if (k != 0) throw DataError("html: multiple roots");
        root = std::move(node);
        stack.push_back(&root);
      } else {
        stack.back()->children.push_back(std::move(node));
        stack.push_back(&stack.back()->children.back());
      }
    } else {
      if (stack.empty()) throw DataError("html: text outside table");
      auto& c = stack.back()->content;
      if (!c.empty()) c += ' ';
      c += t;
    }
  }
  return root;
}

namespace {

void emit(const StructureNode& n, std::vector<std::string>& out) {
  out.push_back(n.tag == "td" ? td_token(n.rowspan, n.colspan) : "<" + n.tag + ">");
  if (!n.content.empty()) out.push_back(n.content);
  for (const auto& c : n.children) emit(c, out);
  out.push_back("</" + n.tag + ">");
}

}  // namespace

std::vector<std::string> html_from_tree(const StructureTree& tree) {
  std::vector<std::string> out;
  emit(tree, out);
  return out;
}

}  // namespace ncgm
