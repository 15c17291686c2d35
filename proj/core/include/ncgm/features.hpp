#pragma once

#include <array>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ncgm/datamodel.hpp"
#include "ncgm/params.hpp"
#include "ncgm/tensor.hpp"

namespace ncgm {

enum class Modality { kGeometry = 0, kAppearance = 1, kContent = 2 };
inline constexpr std::array<Modality, 3> kModalities{Modality::kGeometry, Modality::kAppearance,
                                                     Modality::kContent};
const char* modality_name(Modality m);

struct FeatureConfig {
  std::size_t d = 64;
  /// Side of the square raster fed to the appearance backbone.
  std::size_t image_size = 512;
  std::size_t conv_channels = 8;
  std::size_t vocab = 4096;
  std::size_t text_kernel = 7;
};

/// Per-element embeddings of the three modalities, each N x d.
struct ModalityEmbeddings {
  Tensor geometry;
  Tensor appearance;
  Tensor content;

  const Tensor& get(Modality m) const;
  Tensor& get(Modality m);
  std::size_t count() const { return geometry.rows(); }
};

/// Which modalities are replaced by zeros (ablation hooks).
struct ModalityMask {
  bool zero_geometry = false;
  bool zero_appearance = false;
  bool zero_content = false;
  bool zeroed(Modality m) const;
};

/// Registers geometry/appearance/content parameters under "features/...".
void init_feature_params(ParamStore& store, const FeatureConfig& cfg, std::mt19937_64& rng);

/// Row i = FC([x/W, y/H, w/W, h/H]).
Tensor geometry_embed(std::span<const BoundingBox> boxes, double width, double height, const ParamScope& params);

/// Canvas raster -> [1 x S x S] ink intensities (1 - pixel/255) after bilinear rescale.
Tensor image_tensor(const GrayImage& image, std::size_t size);

/// Feature-map cells covered by a box; a box smaller than a cell falls back to the cell under its centre.
CellRect box_cells(const BoundingBox& box, double width, double height, std::size_t map_h, std::size_t map_w);

/// image: [1 x S x S] from image_tensor(); boxes in canvas pixels of a width x height canvas.
Tensor appearance_embed(const Tensor& image, std::span<const BoundingBox> boxes, double width, double height,
                        const ParamScope& params);

/// Stable token id in [0, vocab).
std::size_t token_id(const std::string& token, std::size_t vocab);

Tensor content_embed(std::span<const std::vector<std::string>> texts, const ParamScope& params,
                     const FeatureConfig& cfg);

/// All three modalities for one sample. `image` is the prepared raster tensor.
ModalityEmbeddings embed(const TableSample& sample, const Tensor& image, const ParamStore& store,
                         const FeatureConfig& cfg, const ModalityMask& mask = {});

}  // namespace ncgm
