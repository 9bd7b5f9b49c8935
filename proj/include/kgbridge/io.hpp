#pragma once

#include "kgbridge/types.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace kgb::io {

std::vector<std::string> split(const std::string& line, char sep);

// Reads a whole file; throws std::runtime_error when missing.
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& content);

// Raw little-endian float32 arrays, row-major. Shapes live in the manifest.
void write_f32(const std::filesystem::path& path, const MatF& m);
MatF read_f32(const std::filesystem::path& path, Index rows, Index cols);

// TSV rows, split on '\t'; keeps empty fields, skips blank lines.
std::vector<std::vector<std::string>> read_tsv(const std::filesystem::path& path);

// Fixed 6-decimal formatting so reports are byte-stable across runs.
std::string fmt6(double v);

}  // namespace kgb::io
