#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

#include "spikerain/data.hpp"

namespace spikerain {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  int bit_depth = 8;
  std::vector<unsigned char> bytes;  // interleaved RGB, big-endian samples when 16-bit
};

// libpng reports errors through longjmp; keep this frame free of objects with
// destructors.
bool read_png(std::FILE* fp, RawImage* out, char* err, std::size_t err_len) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) {
    std::snprintf(err, err_len, "cannot allocate png reader");
    return false;
  }
  png_infop info = png_create_info_struct(png);
  png_bytep* rows = nullptr;
  if (!info || setjmp(png_jmpbuf(png))) {
    std::free(rows);
    png_destroy_read_struct(&png, &info, nullptr);
    std::snprintf(err, err_len, "malformed PNG data");
    return false;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  out->width = png_get_image_width(png, info);
  out->height = png_get_image_height(png, info);
  out->bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  out->bytes.resize(rowbytes * out->height);
  rows = static_cast<png_bytep*>(std::malloc(sizeof(png_bytep) * out->height));
  for (std::size_t y = 0; y < out->height; ++y) rows[y] = out->bytes.data() + y * rowbytes;
  png_read_image(png, rows);
  png_read_end(png, nullptr);
  std::free(rows);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

bool write_png(std::FILE* fp, const RawImage* img, char* err, std::size_t err_len) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) {
    std::snprintf(err, err_len, "cannot allocate png writer");
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::snprintf(err, err_len, "PNG encoding failed");
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img->width), static_cast<png_uint_32>(img->height),
               img->bit_depth, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t rowbytes = img->width * 3 * (img->bit_depth / 8);
  for (std::size_t y = 0; y < img->height; ++y) {
    png_write_row(png, const_cast<png_bytep>(img->bytes.data() + y * rowbytes));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace

Tensor load_image(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open image '" + path.string() + "'");
  unsigned char sig[8] = {};
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError("'" + path.string() + "' is not a PNG file");
  }
  std::rewind(fp.get());
  RawImage raw;
  char err[256] = {};
  if (!read_png(fp.get(), &raw, err, sizeof(err))) throw IoError("'" + path.string() + "': " + err);

  const auto plane = raw.width * raw.height;
  std::vector<double> values(3 * plane);
  const bool wide = raw.bit_depth == 16;
  const double max_code = wide ? 65535.0 : 255.0;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t k = i * 3 + c;
      const unsigned code = wide ? (static_cast<unsigned>(raw.bytes[2 * k]) << 8) | raw.bytes[2 * k + 1]
                                 : raw.bytes[k];
      values[c * plane + i] = code / max_code;
    }
  }
  return Tensor({3, raw.height, raw.width}, std::move(values));
}

void save_image(const Tensor& image, const std::filesystem::path& path, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw ContractError("bit depth must be 8 or 16");
  Shape s = image.shape();
  if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
  if (s.size() != 3 || s[0] != 3) {
    throw DimensionError("save_image expects [3,H,W], got " + shape_str(image.shape()));
  }
  RawImage raw;
  raw.height = s[1];
  raw.width = s[2];
  raw.bit_depth = bit_depth;
  const auto plane = raw.width * raw.height;
  const double max_code = bit_depth == 16 ? 65535.0 : 255.0;
  raw.bytes.resize(plane * 3 * (bit_depth / 8));
  const auto d = image.data();
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(d[c * plane + i], 0.0, 1.0);
      const auto code = static_cast<unsigned>(std::lround(v * max_code));
      const std::size_t k = i * 3 + c;
      if (bit_depth == 16) {
        raw.bytes[2 * k] = static_cast<unsigned char>(code >> 8);
        raw.bytes[2 * k + 1] = static_cast<unsigned char>(code & 0xFF);
      } else {
        raw.bytes[k] = static_cast<unsigned char>(code);
      }
    }
  }
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open '" + path.string() + "' for writing");
  char err[256] = {};
  if (!write_png(fp.get(), &raw, err, sizeof(err))) throw IoError("'" + path.string() + "': " + err);
}

}  // namespace spikerain
