#include "knowfuse/binary_io.hpp"

#include "knowfuse/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace knowfuse::io {

static_assert(std::endian::native == std::endian::little,
              "blob readers assume a little-endian host");

namespace {

std::vector<char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const char* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(data, static_cast<std::streamsize>(n));
  if (!out) throw InputError("short write to " + path.string());
}

}  // namespace

void write_f32_blob(const std::filesystem::path& path, std::span<const double> values) {
  std::vector<float> buf(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) buf[i] = static_cast<float>(values[i]);
  write_bytes(path, reinterpret_cast<const char*>(buf.data()), buf.size() * sizeof(float));
}

std::vector<double> read_f32_blob(const std::filesystem::path& path, std::size_t expected_count) {
  const auto bytes = read_bytes(path);
  if (bytes.size() % sizeof(float) != 0) {
    throw InputError(path.string() + ": truncated float32 blob (" + std::to_string(bytes.size()) +
                     " bytes)");
  }
  if (bytes.size() != expected_count * sizeof(float)) {
    throw InputError(path.string() + ": dimension mismatch, manifest implies " +
                     std::to_string(expected_count) + " values but blob holds " +
                     std::to_string(bytes.size() / sizeof(float)));
  }
  std::vector<double> out(expected_count);
  for (std::size_t i = 0; i < expected_count; ++i) {
    float f;
    std::memcpy(&f, bytes.data() + i * sizeof(float), sizeof(float));
    out[i] = f;
  }
  return out;
}

void write_u32_blob(const std::filesystem::path& path, std::span<const std::uint32_t> values) {
  write_bytes(path, reinterpret_cast<const char*>(values.data()),
              values.size() * sizeof(std::uint32_t));
}

std::vector<std::uint32_t> read_u32_blob(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() % sizeof(std::uint32_t) != 0) {
    throw InputError(path.string() + ": size is not a multiple of 4 bytes");
  }
  std::vector<std::uint32_t> out(bytes.size() / sizeof(std::uint32_t));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  return {bytes.begin(), bytes.end()};
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_bytes(path, text.data(), text.size());
}

std::string fnv1a64_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace knowfuse::io
