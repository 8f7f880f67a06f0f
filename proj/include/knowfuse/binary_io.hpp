#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace knowfuse::io {

// Row-major little-endian IEEE-754 float32 blobs.
void write_f32_blob(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_f32_blob(const std::filesystem::path& path, std::size_t expected_count);

void write_u32_blob(const std::filesystem::path& path, std::span<const std::uint32_t> values);
std::vector<std::uint32_t> read_u32_blob(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// FNV-1a 64-bit content digest as lower-case hex, used for run manifests.
std::string fnv1a64_hex(const std::string& bytes);

}  // namespace knowfuse::io
