#include "ncgm/sample_io.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ncgm/errors.hpp"

namespace ncgm {

using nlohmann::json;

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

json matrix_to_json(const AdjacencyMatrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.size(); ++i) {
    json r = json::array();
    for (std::size_t j = 0; j < m.size(); ++j) r.push_back(static_cast<int>(m(i, j)));
    rows.push_back(std::move(r));
  }
  return rows;
}

AdjacencyMatrix matrix_from_json(const json& rows) {
  AdjacencyMatrix m(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.size()) throw DataError("relation matrix is not square");
    for (std::size_t j = 0; j < rows.size(); ++j) {
      const int v = rows[i][j].get<int>();
      if (v != 0 && v != 1) throw DataError("relation matrix entries must be 0 or 1");
      m.set(i, j, v == 1);
    }
  }
  return m;
}

}  // namespace

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i + 1 == bytes.size()) {
    const std::uint32_t v = bytes[i] << 16;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == bytes.size()) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw DataError("base64 length must be a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=') {
        if (i + 4 != text.size() || k < 2) throw DataError("misplaced base64 padding");
        v[k] = 0;
        ++pad;
      } else {
        if (pad) throw DataError("misplaced base64 padding");
        v[k] = value(c);
        if (v[k] < 0) throw DataError("invalid base64 character");
      }
    }
    const std::uint32_t w = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(w >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((w >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(w & 0xff));
  }
  return out;
}

std::string sample_to_json(const TableSample& s) {
  json doc;
  doc["format"] = kSampleFormat;
  doc["image"] = {{"width", s.image.width},
                  {"height", s.image.height},
                  {"encoding", "base64-gray8"},
                  {"data", base64_encode(s.image.pixels)}};
  json elements = json::array();
  for (const auto& e : s.elements) {
    json el;
    el["box"] = {{"x", e.box.x}, {"y", e.box.y}, {"w", e.box.w}, {"h", e.box.h}};
    el["text"] = e.text;
    if (e.gt_span) {
      const auto& sp = *e.gt_span;
      el["span"] = {sp.start_row, sp.end_row, sp.start_col, sp.end_col};
    }
    elements.push_back(std::move(el));
  }
  doc["elements"] = std::move(elements);
  if (s.relations) {
    doc["relations"] = {{"cell", matrix_to_json(s.relations->cell)},
                        {"row", matrix_to_json(s.relations->row)},
                        {"col", matrix_to_json(s.relations->col)}};
  }
  if (!s.html.empty()) doc["html"] = s.html;
  return doc.dump();
}

TableSample sample_from_json(const std::string& text) {
  try {
    const auto doc = json::parse(text);
    if (doc.value("format", std::string{}) != kSampleFormat) {
      throw DataError("unknown sample format (expected " + std::string(kSampleFormat) + ")");
    }
    TableSample s;
    const auto& img = doc.at("image");
    if (img.at("encoding").get<std::string>() != "base64-gray8") throw DataError("unsupported image encoding");
    s.image.width = img.at("width").get<std::size_t>();
    s.image.height = img.at("height").get<std::size_t>();
    s.image.pixels = base64_decode(img.at("data").get<std::string>());
    if (s.image.pixels.size() != s.image.width * s.image.height) {
      throw DataError("image data does not match its dimensions");
    }
    for (const auto& el : doc.at("elements")) {
      TableElement e;
      const auto& b = el.at("box");
      e.box = {b.at("x").get<double>(), b.at("y").get<double>(), b.at("w").get<double>(), b.at("h").get<double>()};
      e.text = el.at("text").get<std::vector<std::string>>();
      if (el.contains("span")) {
        const auto sp = el.at("span").get<std::vector<int>>();
        if (sp.size() != 4) throw DataError("span must have four entries");
        e.gt_span = Span{sp[0], sp[1], sp[2], sp[3]};
      }
      s.elements.push_back(std::move(e));
    }
    if (doc.contains("relations")) {
      const auto& r = doc.at("relations");
      s.relations = RelationMatrices{matrix_from_json(r.at("cell")), matrix_from_json(r.at("row")),
                                     matrix_from_json(r.at("col"))};
    }
    if (doc.contains("html")) s.html = doc.at("html").get<std::vector<std::string>>();
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed sample document: ") + e.what());
  }
}

void write_sample(const TableSample& sample, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << sample_to_json(sample) << '\n';
}

TableSample read_sample(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return sample_from_json(ss.str());
}

}  // namespace ncgm
