#include "ncgm/features.hpp"

#include <algorithm>
#include <cmath>

#include "ncgm/errors.hpp"
#include "ncgm/image.hpp"

namespace ncgm {

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::kGeometry: return "geometry";
    case Modality::kAppearance: return "appearance";
    case Modality::kContent: return "content";
  }
  return "?";
}

const Tensor& ModalityEmbeddings::get(Modality m) const {
  switch (m) {
    case Modality::kGeometry: return geometry;
    case Modality::kAppearance: return appearance;
    default: return content;
  }
}

Tensor& ModalityEmbeddings::get(Modality m) {
  return const_cast<Tensor&>(static_cast<const ModalityEmbeddings&>(*this).get(m));
}

bool ModalityMask::zeroed(Modality m) const {
  switch (m) {
    case Modality::kGeometry: return zero_geometry;
    case Modality::kAppearance: return zero_appearance;
    default: return zero_content;
  }
}

void init_feature_params(ParamStore& store, const FeatureConfig& cfg, std::mt19937_64& rng) {
  ParamBuilder b(store, "features", rng);
  // Embeddings enter post-norm residuals next to unit-scale attention outputs;
  // at plain Glorot scale they are drowned out and elements become indistinguishable.
  const double gain = std::sqrt(static_cast<double>(cfg.d));
  b.sub("geometry").linear("fc", 4, cfg.d, true, gain);

  auto app = b.sub("appearance");
  const auto c = cfg.conv_channels;
  const double bound1 = std::sqrt(6.0 / (9.0 + 9.0 * c));
  const double bound2 = std::sqrt(6.0 / (9.0 * c + 9.0 * c));
  app.tensor("conv1/w", uniform({c, 1, 3, 3}, bound1, rng));
  app.tensor("conv1/b", Tensor::zeros({c}, true));
  app.tensor("conv2/w", uniform({c, c, 3, 3}, bound2, rng));
  app.tensor("conv2/b", Tensor::zeros({c}, true));
  app.linear("fc", c, cfg.d, true, gain);

  auto text = b.sub("content");
  text.tensor("table", uniform({cfg.vocab, cfg.d}, 0.1, rng));
  text.tensor("pad", uniform({1, cfg.d}, 0.1, rng));
  text.linear("conv", cfg.text_kernel * cfg.d, cfg.d, true, gain);
}

Tensor geometry_embed(std::span<const BoundingBox> boxes, double width, double height, const ParamScope& params) {
  if (!(width > 0.0) || !(height > 0.0)) throw ContractError("geometry_embed: image size must be positive");
  if (boxes.empty()) throw ContractError("geometry_embed: no boxes");
  std::vector<double> feats;
  feats.reserve(boxes.size() * 4);
  constexpr double tol = 1e-6;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& b = boxes[i];
    if (b.left() < -tol || b.top() < -tol || b.right() > width + tol || b.bottom() > height + tol) {
      throw ContractError("geometry_embed: box " + std::to_string(i) + " lies outside the image");
    }
    feats.insert(feats.end(), {b.x / width, b.y / height, b.w / width, b.h / height});
  }
  return linear(Tensor({boxes.size(), 4}, std::move(feats)), params, "fc");
}

Tensor image_tensor(const GrayImage& image, std::size_t size) {
  if (image.empty()) throw ContractError("image_tensor: empty image");
  const auto scaled = resize_bilinear(image, size, size);
  std::vector<double> data(size * size);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = 1.0 - scaled.pixels[i] / 255.0;
  return Tensor({1, size, size}, std::move(data));
}

CellRect box_cells(const BoundingBox& box, double width, double height, std::size_t map_h, std::size_t map_w) {
  auto axis = [](double lo, double hi, double centre, double scale, std::size_t cells) {
    const auto last = static_cast<long>(cells) - 1;
    long a = static_cast<long>(std::floor(lo * scale));
    long b = static_cast<long>(std::ceil(hi * scale)) - 1;
    a = std::clamp(a, 0L, last);
    b = std::clamp(b, 0L, last);
    if (b < a) {
      const long c = std::clamp(static_cast<long>(std::floor(centre * scale)), 0L, last);
      a = b = c;
    }
    return std::pair<std::size_t, std::size_t>(a, b);
  };
  const auto [x0, x1] = axis(box.left(), box.right(), box.x, static_cast<double>(map_w) / width, map_w);
  const auto [y0, y1] = axis(box.top(), box.bottom(), box.y, static_cast<double>(map_h) / height, map_h);
  return {y0, y1, x0, x1};
}

Tensor appearance_embed(const Tensor& image, std::span<const BoundingBox> boxes, double width, double height,
                        const ParamScope& params) {
  if (image.rank() != 3 || image.shape()[0] != 1) throw DimensionError("appearance_embed: expected [1 x H x W] image");
  if (boxes.empty()) throw ContractError("appearance_embed: no boxes");
  auto f = relu(conv2d(image, params["conv1/w"], params["conv1/b"], 2, 1));
  f = relu(conv2d(f, params["conv2/w"], params["conv2/b"], 2, 1));
  const auto mh = f.shape()[1], mw = f.shape()[2];
  std::vector<CellRect> regions;
  regions.reserve(boxes.size());
  for (const auto& b : boxes) regions.push_back(box_cells(b, width, height, mh, mw));
  return linear(region_avg_pool(f, regions), params, "fc");
}

std::size_t token_id(const std::string& token, std::size_t vocab) {
  // FNV-1a, 64 bit.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : token) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return static_cast<std::size_t>(h % vocab);
}

Tensor content_embed(std::span<const std::vector<std::string>> texts, const ParamScope& params,
                     const FeatureConfig& cfg) {
  if (texts.empty()) throw ContractError("content_embed: no elements");
  const auto k = cfg.text_kernel;
  const auto& table = params["table"];
  const long pad = static_cast<long>(table.rows());
  const Tensor rows[] = {table, params["pad"]};
  const auto lookup = concat_rows(rows);

  // im2col over all elements at once: each window contributes k consecutive rows.
  std::vector<long> index;
  std::vector<std::size_t> windows;
  for (const auto& text : texts) {
    const auto len = std::max(text.size(), k);
    std::vector<long> seq(len, pad);
    for (std::size_t t = 0; t < text.size(); ++t) seq[t] = static_cast<long>(token_id(text[t], table.rows()));
    const auto count = len - k + 1;
    for (std::size_t p = 0; p < count; ++p)
      for (std::size_t j = 0; j < k; ++j) index.push_back(seq[p + j]);
    windows.push_back(count);
  }
  const auto total = index.size() / k;
  auto cols = reshape(gather_rows(lookup, index), {total, k * cfg.d});
  auto conv = linear(cols, params, "conv");

  std::vector<Tensor> pooled;
  pooled.reserve(texts.size());
  std::size_t off = 0;
  for (auto count : windows) {
    pooled.push_back(max_over_rows(slice_rows(conv, off, off + count)));
    off += count;
  }
  return concat_rows(pooled);
}

ModalityEmbeddings embed(const TableSample& sample, const Tensor& image, const ParamStore& store,
                         const FeatureConfig& cfg, const ModalityMask& mask) {
  const auto n = sample.elements.size();
  if (n == 0) throw ContractError("embed: sample has no elements");
  std::vector<BoundingBox> boxes;
  std::vector<std::vector<std::string>> texts;
  for (const auto& e : sample.elements) {
    boxes.push_back(e.box);
    texts.push_back(e.text);
  }
  const auto w = static_cast<double>(sample.image.width);
  const auto h = static_cast<double>(sample.image.height);
  ParamScope root(store, "features");
  ModalityEmbeddings out;
  const auto zeros = Tensor::zeros({n, cfg.d});
  out.geometry = mask.zero_geometry ? zeros : geometry_embed(boxes, w, h, root.sub("geometry"));
  out.appearance = mask.zero_appearance ? zeros : appearance_embed(image, boxes, w, h, root.sub("appearance"));
  out.content = mask.zero_content ? zeros : content_embed(texts, root.sub("content"), cfg);
  return out;
}

}  // namespace ncgm
