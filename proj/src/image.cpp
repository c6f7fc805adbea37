#include "gsi/image.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "gsi/errors.hpp"

namespace gsi {

RgbImage::RgbImage(int w, int h, Rgb fill) : width(w), height(h) {
  data.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < data.size(); i += 3) {
    data[i] = fill[0];
    data[i + 1] = fill[1];
    data[i + 2] = fill[2];
  }
}

std::size_t Mask::count() const {
  std::size_t n = 0;
  for (auto v : data) n += v != 0;
  return n;
}

namespace {

void png_write_to_vector(png_structp png, png_bytep bytes, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), bytes, bytes + len);
}

void png_flush_noop(png_structp) {}

[[noreturn]] void png_throw(png_structp, png_const_charp msg) {
  throw Error(ErrorCode::ImageIo, std::string("libpng: ") + msg);
}

void png_warn_silent(png_structp, png_const_charp) {}

std::vector<std::uint8_t> encode_rows(int width, int height, int color_type,
                                      int channels, const std::uint8_t* data) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            png_throw, png_warn_silent);
  if (!png) throw Error(ErrorCode::ImageIo, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(ErrorCode::ImageIo, "png_create_info_struct failed");
  }
  try {
    png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
    png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y) {
      png_write_row(png, const_cast<png_bytep>(
                             data + static_cast<std::size_t>(y) * width * channels));
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

struct ReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
};

void png_read_from_span(png_structp png, png_bytep out, png_size_t len) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + len > cur->bytes.size()) {
    png_error(png, "truncated PNG stream");
  }
  std::memcpy(out, cur->bytes.data() + cur->offset, len);
  cur->offset += len;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const RgbImage& img) {
  return encode_rows(img.width, img.height, PNG_COLOR_TYPE_RGB, 3,
                     img.data.data());
}

std::vector<std::uint8_t> encode_png(const Mask& mask) {
  std::vector<std::uint8_t> gray(mask.data.size());
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = mask.data[i] ? 255 : 0;
  return encode_rows(mask.width, mask.height, PNG_COLOR_TYPE_GRAY, 1, gray.data());
}

RgbImage decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw Error(ErrorCode::ImageIo, "not a PNG stream");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           png_throw, png_warn_silent);
  if (!png) throw Error(ErrorCode::ImageIo, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error(ErrorCode::ImageIo, "png_create_info_struct failed");
  }
  RgbImage img;
  ReadCursor cursor{bytes, 0};
  try {
    png_set_read_fn(png, &cursor, png_read_from_span);
    png_read_info(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) {
      png_set_expand_gray_1_2_4_to_8(png);
    }
    if (color_type == PNG_COLOR_TYPE_GRAY ||
        color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
      png_set_gray_to_rgb(png);
    }
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    if (png_get_rowbytes(png, info) != static_cast<std::size_t>(img.width) * 3) {
      png_error(png, "unsupported PNG layout");
    }
    img.data.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    for (int y = 0; y < img.height; ++y) {
      png_read_row(png, img.data.data() + static_cast<std::size_t>(y) * img.width * 3,
                   nullptr);
    }
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
  write_file_atomic(path, encode_png(img));
}

RgbImage read_png(const std::filesystem::path& path) {
  return decode_png(read_file(path));
}

void write_pgm16(const std::filesystem::path& path, const Gray16Image& img) {
  std::string header = "P5\n" + std::to_string(img.width) + " " +
                       std::to_string(img.height) + "\n65535\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + img.data.size() * 2);
  for (std::uint16_t v : img.data) {
    bytes.push_back(static_cast<std::uint8_t>(v >> 8));
    bytes.push_back(static_cast<std::uint8_t>(v & 0xff));
  }
  write_file_atomic(path, bytes);
}

Gray16Image read_pgm16(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::string text(bytes.begin(), bytes.end());
  std::istringstream in(text);
  std::string magic;
  int maxval = 0;
  Gray16Image img;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 65535 || img.width <= 0 || img.height <= 0) {
    throw Error(ErrorCode::ImageIo, "unsupported PGM header in " + path.string());
  }
  const std::size_t offset = static_cast<std::size_t>(in.tellg()) + 1;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  if (bytes.size() < offset + 2 * n) {
    throw Error(ErrorCode::ImageIo, "truncated PGM " + path.string());
  }
  img.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    img.data[i] = static_cast<std::uint16_t>((bytes[offset + 2 * i] << 8) |
                                             bytes[offset + 2 * i + 1]);
  }
  return img;
}

std::vector<double> to_luma(const RgbImage& img) {
  std::vector<double> out(img.pixel_count());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.299 * img.data[3 * i] + 0.587 * img.data[3 * i + 1] +
             0.114 * img.data[3 * i + 2];
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ImageIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path,
                       std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::ImageIo, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::ImageIo, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(text.data()),
                              text.size()));
}

}  // namespace gsi
