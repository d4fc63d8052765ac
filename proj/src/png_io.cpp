#include "semtrack/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <stdexcept>

namespace semtrack {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

void write_png(const std::string& path, int width, int height, int bit_depth,
               int color_type, const uint8_t* data, size_t row_bytes) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open for write: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png write error: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);  // buffers are host little-endian
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y)
    rows[y] = const_cast<png_bytep>(data + static_cast<size_t>(y) * row_bytes);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FilePtr fp;

  explicit PngReader(const std::string& path) : fp(std::fopen(path.c_str(), "rb")) {
    if (!fp) throw std::runtime_error("cannot open: " + path);
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_read_struct failed");
    info = png_create_info_struct(png);
    if (!info) throw std::runtime_error("png_create_info_struct failed");
  }
  ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
  PngReader(const PngReader&) = delete;
  PngReader& operator=(const PngReader&) = delete;
};

}  // namespace

void write_png_rgb8(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& rgb) {
  if (rgb.size() != static_cast<size_t>(width) * height * 3)
    throw std::invalid_argument("write_png_rgb8: size mismatch");
  write_png(path, width, height, 8, PNG_COLOR_TYPE_RGB, rgb.data(),
            static_cast<size_t>(width) * 3);
}

void write_png_gray8(const std::string& path, int width, int height,
                     const std::vector<uint8_t>& gray) {
  if (gray.size() != static_cast<size_t>(width) * height)
    throw std::invalid_argument("write_png_gray8: size mismatch");
  write_png(path, width, height, 8, PNG_COLOR_TYPE_GRAY, gray.data(),
            static_cast<size_t>(width));
}

void write_png_gray16(const std::string& path, int width, int height,
                      const std::vector<uint16_t>& gray) {
  if (gray.size() != static_cast<size_t>(width) * height)
    throw std::invalid_argument("write_png_gray16: size mismatch");
  write_png(path, width, height, 16, PNG_COLOR_TYPE_GRAY,
            reinterpret_cast<const uint8_t*>(gray.data()),
            static_cast<size_t>(width) * 2);
}

Png8 read_png8(const std::string& path) {
  PngReader r(path);
  if (setjmp(png_jmpbuf(r.png))) throw std::runtime_error("png read error: " + path);
  png_init_io(r.png, r.fp.get());
  png_read_info(r.png, r.info);
  png_set_strip_16(r.png);
  png_set_palette_to_rgb(r.png);
  png_set_expand_gray_1_2_4_to_8(r.png);
  png_set_strip_alpha(r.png);
  png_read_update_info(r.png, r.info);
  Png8 out;
  out.width = static_cast<int>(png_get_image_width(r.png, r.info));
  out.height = static_cast<int>(png_get_image_height(r.png, r.info));
  out.channels = static_cast<int>(png_get_channels(r.png, r.info));
  if (out.channels != 1 && out.channels != 3)
    throw std::runtime_error("read_png8: unsupported channel count in " + path);
  const size_t row_bytes = static_cast<size_t>(out.width) * out.channels;
  out.data.resize(row_bytes * out.height);
  std::vector<png_bytep> rows(out.height);
  for (int y = 0; y < out.height; ++y) rows[y] = out.data.data() + y * row_bytes;
  png_read_image(r.png, rows.data());
  return out;
}

Png16 read_png16(const std::string& path) {
  PngReader r(path);
  if (setjmp(png_jmpbuf(r.png))) throw std::runtime_error("png read error: " + path);
  png_init_io(r.png, r.fp.get());
  png_read_info(r.png, r.info);
  if (png_get_bit_depth(r.png, r.info) != 16 ||
      png_get_color_type(r.png, r.info) != PNG_COLOR_TYPE_GRAY)
    throw std::runtime_error("read_png16: expected 16-bit gray: " + path);
  png_set_swap(r.png);
  png_read_update_info(r.png, r.info);
  Png16 out;
  out.width = static_cast<int>(png_get_image_width(r.png, r.info));
  out.height = static_cast<int>(png_get_image_height(r.png, r.info));
  out.data.resize(static_cast<size_t>(out.width) * out.height);
  std::vector<png_bytep> rows(out.height);
  for (int y = 0; y < out.height; ++y)
    rows[y] = reinterpret_cast<png_bytep>(out.data.data() + static_cast<size_t>(y) * out.width);
  png_read_image(r.png, rows.data());
  return out;
}

}  // namespace semtrack
