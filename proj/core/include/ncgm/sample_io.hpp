#pragma once

#include <filesystem>
#include <string>

#include "ncgm/datamodel.hpp"

namespace ncgm {

// Table samples are stored as one JSON object per file:
//
//   { "format": "ncgm-table/1",
//     "image": {"width": W, "height": H, "encoding": "base64-gray8", "data": "..."},
//     "elements": [{"box": {"x","y","w","h"}, "text": [tokens...],
//                   "span": [start_row, end_row, start_col, end_col]}, ...],
//     "relations": {"cell": [[0/1...]...], "row": ..., "col": ...},   // optional
//     "html": [tokens...] }                                         // optional

inline constexpr const char* kSampleFormat = "ncgm-table/1";

std::string sample_to_json(const TableSample& sample);
/// Throws DataError on malformed documents.
TableSample sample_from_json(const std::string& text);

void write_sample(const TableSample& sample, const std::filesystem::path& path);
TableSample read_sample(const std::filesystem::path& path);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

}  // namespace ncgm
