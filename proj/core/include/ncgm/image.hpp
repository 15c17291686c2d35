#pragma once

#include <filesystem>
#include <optional>

#include "ncgm/datamodel.hpp"

namespace ncgm {

/// Bilinear sample at continuous pixel coordinates (pixel centres at integers).
/// Returns nullopt outside [0, W-1] x [0, H-1].
std::optional<double> sample_bilinear(const GrayImage& img, double x, double y);

GrayImage resize_bilinear(const GrayImage& img, std::size_t width, std::size_t height);

/// Binary portable graymap (P5).
void write_pgm(const GrayImage& img, const std::filesystem::path& path);
GrayImage read_pgm(const std::filesystem::path& path);

}  // namespace ncgm
