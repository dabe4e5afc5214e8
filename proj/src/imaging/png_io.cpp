#include <png.h>

#include <cstdio>
#include <memory>
#include <vector>

#include "kbsr/imaging/image.hpp"

namespace kbsr {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error(path.string() + ": " + what);
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) fail(path, "cannot open for reading");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(path, "png_create_info_struct failed");
  }

  std::vector<png_byte> raw;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "not a valid PNG file");
  }

  png_init_io(png, file.get());
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);

  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS))
    png_set_strip_alpha(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  const int out_depth = png_get_bit_depth(png, info);
  if (out_depth != 8 && out_depth != 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "unsupported bit depth " + std::to_string(bit_depth) +
                   " (only 8- and 16-bit PNGs are accepted)");
  }
  const int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "unsupported channel count " + std::to_string(channels));
  }

  const size_t row_bytes = png_get_rowbytes(png, info);
  raw.resize(row_bytes * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = raw.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img({channels, static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(w)});
  const double scale = out_depth == 8 ? 255.0 : 65535.0;
  for (png_uint_32 y = 0; y < h; ++y) {
    const png_byte* row = raw.data() + y * row_bytes;
    for (png_uint_32 x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        uint32_t code;
        if (out_depth == 8) {
          code = row[x * channels + c];
        } else {  // PNG stores 16-bit samples big-endian
          const size_t i = (x * static_cast<size_t>(channels) + c) * 2;
          code = (static_cast<uint32_t>(row[i]) << 8) | row[i + 1];
        }
        img(c, y, x) = static_cast<double>(code) / scale;
      }
    }
  }
  return img;
}

void save_image(const std::filesystem::path& path, const Image& img, int bit_depth) {
  if (img.rank() != 3 || (img.dim(0) != 1 && img.dim(0) != 3))
    throw std::invalid_argument("save_image: expected a 1- or 3-channel raster, got " +
                                shape_str(img.shape()));
  if (bit_depth != 8 && bit_depth != 16)
    throw std::invalid_argument("save_image: bit depth must be 8 or 16");

  const int channels = static_cast<int>(img.dim(0));
  const png_uint_32 h = static_cast<png_uint_32>(img.dim(1));
  const png_uint_32 w = static_cast<png_uint_32>(img.dim(2));
  const double scale = bit_depth == 8 ? 255.0 : 65535.0;

  const size_t row_bytes = static_cast<size_t>(w) * channels * (bit_depth / 8);
  std::vector<png_byte> raw(row_bytes * h);
  for (png_uint_32 y = 0; y < h; ++y) {
    png_byte* row = raw.data() + y * row_bytes;
    for (png_uint_32 x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        const double v = std::clamp(img(c, y, x), 0.0, 1.0);
        const uint32_t code = static_cast<uint32_t>(std::lround(v * scale));
        if (bit_depth == 8) {
          row[x * channels + c] = static_cast<png_byte>(code);
        } else {
          const size_t i = (x * static_cast<size_t>(channels) + c) * 2;
          row[i] = static_cast<png_byte>(code >> 8);
          row[i + 1] = static_cast<png_byte>(code & 0xff);
        }
      }
    }
  }

  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) fail(path, "cannot open for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(path, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(path, "PNG write failed");
  }

  png_init_io(png, file.get());
  png_set_IHDR(png, info, w, h, bit_depth,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (png_uint_32 y = 0; y < h; ++y) png_write_row(png, raw.data() + y * row_bytes);
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
}

}  // namespace kbsr
