#include "dforge/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace dforge {

using ad::fail;
using ad::Tensor;

void write_png(const std::string& path, const Tensor& image) {
  if (image.shape().size() != 3 || image.dim(0) != 3)
    fail("write_png: expected [3,H,W], got " + ad::shape_str(image.shape()));
  const int h = image.dim(1), w = image.dim(2);

  std::vector<unsigned char> rows(static_cast<size_t>(h) * w * 3);
  const double* px = image.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = px[(static_cast<size_t>(c) * h + y) * w + x];
        v = std::min(1.0, std::max(0.0, v));
        rows[(static_cast<size_t>(y) * w + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }

  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) fail("write_png: cannot open '" + path + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    fail("write_png: libpng error on '" + path + "'");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y)
    png_write_row(png, rows.data() + static_cast<size_t>(y) * w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

Tensor read_png(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) fail("read_png: cannot open '" + path + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    fail("read_png: libpng error on '" + path + "'");
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));

  // normalize any input to 8-bit RGB
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  Tensor image = Tensor::zeros({3, h, w});
  double* px = image.data();
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        px[(static_cast<size_t>(c) * h + y) * w + x] =
            row[static_cast<size_t>(x) * 3 + c] / 255.0;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return image;
}

}  // namespace dforge
