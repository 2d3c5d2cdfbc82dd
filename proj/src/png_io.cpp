#include "starsr/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace starsr {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

ImageTensor read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw DataError("cannot open " + path.string());

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("png_create_info_struct failed");
  }

  // Row buffers are allocated before setjmp so nothing in scope needs
  // unwinding on a libpng error.
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  int width = 0, height = 0, bit_depth = 0;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("failed to decode PNG " + path.string());
  }

  png_init_io(png, fp.get());
  png_read_info(png, info);

  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  bit_depth = png_get_bit_depth(png, info);
  const png_byte color_type = png_get_color_type(png, info);

  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY ||
      color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  if (bit_depth == 16) png_set_swap(png);  // PNG stores 16-bit big-endian

  png_read_update_info(png, info);
  bit_depth = png_get_bit_depth(png, info);
  const size_t row_bytes = png_get_rowbytes(png, info);

  pixels.resize(row_bytes * height);
  rows.resize(height);
  for (int y = 0; y < height; ++y) rows[y] = pixels.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  ImageTensor img(3, height, width);
  if (bit_depth == 16) {
    const auto* p16 = reinterpret_cast<const uint16_t*>(pixels.data());
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        for (int c = 0; c < 3; ++c)
          img.at(c, y, x) =
              static_cast<float>(p16[(static_cast<size_t>(y) * width + x) * 3 + c]) / 65535.0f;
  } else {
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        for (int c = 0; c < 3; ++c)
          img.at(c, y, x) =
              static_cast<float>(pixels[(static_cast<size_t>(y) * width + x) * 3 + c]) / 255.0f;
  }
  return img;
}

void write_png(const std::filesystem::path& path, const ImageTensor& img,
               int bit_depth) {
  if (img.channels != 3 || img.height < 1 || img.width < 1)
    throw ShapeError("write_png expects a 3xHxW image");
  if (bit_depth != 8 && bit_depth != 16)
    throw ConfigError("write_png: bit depth must be 8 or 16");

  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw DataError("cannot write " + path.string());

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("png_create_info_struct failed");
  }

  const int h = img.height, w = img.width;
  const double maxv = bit_depth == 16 ? 65535.0 : 255.0;
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows(h);
  const size_t row_bytes = static_cast<size_t>(w) * 3 * (bit_depth / 8);
  pixels.resize(row_bytes * h);
  for (int y = 0; y < h; ++y) rows[y] = pixels.data() + y * row_bytes;

  if (bit_depth == 16) {
    auto* p16 = reinterpret_cast<uint16_t*>(pixels.data());
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) {
          const double v = std::clamp(static_cast<double>(img.at(c, y, x)), 0.0, 1.0);
          p16[(static_cast<size_t>(y) * w + x) * 3 + c] =
              static_cast<uint16_t>(std::lround(v * maxv));
        }
  } else {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) {
          const double v = std::clamp(static_cast<double>(img.at(c, y, x)), 0.0, 1.0);
          pixels[(static_cast<size_t>(y) * w + x) * 3 + c] =
              static_cast<png_byte>(std::lround(v * maxv));
        }
  }

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed to encode PNG " + path.string());
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, bit_depth, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace starsr
