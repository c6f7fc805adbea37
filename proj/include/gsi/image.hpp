#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace gsi {

using Rgb = std::array<std::uint8_t, 3>;

/// Interleaved 8-bit RGB image, row-major.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(int w, int h, Rgb fill = {0, 0, 0});

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
  Rgb at(int x, int y) const {
    const std::size_t i = 3 * (static_cast<std::size_t>(y) * width + x);
    return {data[i], data[i + 1], data[i + 2]};
  }
  void set(int x, int y, Rgb c) {
    const std::size_t i = 3 * (static_cast<std::size_t>(y) * width + x);
    data[i] = c[0];
    data[i + 1] = c[1];
    data[i + 2] = c[2];
  }
  bool operator==(const RgbImage&) const = default;
};

/// Single-channel 16-bit image, row-major.
struct Gray16Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> data;
};

/// Binary mask, 1 = set.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}
  std::uint8_t at(int x, int y) const {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  std::size_t count() const;
};

std::vector<std::uint8_t> encode_png(const RgbImage& img);
std::vector<std::uint8_t> encode_png(const Mask& mask);
RgbImage decode_png(std::span<const std::uint8_t> bytes);

void write_png(const std::filesystem::path& path, const RgbImage& img);
RgbImage read_png(const std::filesystem::path& path);

/// Binary PGM (P5) with maxval 65535, big-endian samples.
void write_pgm16(const std::filesystem::path& path, const Gray16Image& img);
Gray16Image read_pgm16(const std::filesystem::path& path);

/// BT.601 luma in [0, 255].
std::vector<double> to_luma(const RgbImage& img);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames over `path`.
void write_file_atomic(const std::filesystem::path& path,
                       std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path,
                       const std::string& text);

}  // namespace gsi
