#ifndef BRULE_IMAGE_IO_HPP
#define BRULE_IMAGE_IO_HPP

#include "brule/core.hpp"
#include "brule/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdint>
#include <cstring>
#include <cctype>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace brule {

/// Images are held as doubles in [0, 1]. PNG files may be 8- or 16-bit
/// gray or RGB (palette and low bit depths are expanded, alpha dropped).
/// PGM files may be binary (P5) or ASCII (P2), any maxval up to 65535.

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* buf = static_cast<std::string*>(png_get_error_ptr(png));
  if (buf) *buf = msg;
  png_longjmp(png, 1);
}
inline void png_warning_fn(png_structp, png_const_charp) {}

inline std::uint16_t quantize(double v, int max) {
  return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * max));
}

}  // namespace detail

inline Image read_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw Error("cannot open " + path);
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("libpng initialisation failed");
  }
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError(path + ": invalid PNG (" + err + ")");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  if (png_get_bit_depth(png, info) == 16) png_set_swap(png);  // native little-endian 16-bit words
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int depth = png_get_bit_depth(png, info);
  const int channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  pixels.resize(stride * static_cast<std::size_t>(height));
  rows.resize(static_cast<std::size_t>(height));
  for (int i = 0; i < height; ++i) rows[static_cast<std::size_t>(i)] = pixels.data() + stride * i;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (channels != 1 && channels != 3) throw ParseError(path + ": unsupported PNG channel layout");
  Image img(height, width, channels);
  const double scale = depth == 16 ? 65535.0 : 255.0;
  for (int i = 0; i < height; ++i)
    for (int j = 0; j < width; ++j)
      for (int c = 0; c < channels; ++c) {
        const std::size_t k = static_cast<std::size_t>(j) * channels + c;
        double v;
        if (depth == 16) {
          std::uint16_t w;
          std::memcpy(&w, rows[static_cast<std::size_t>(i)] + 2 * k, 2);
          v = w;
        } else {
          v = rows[static_cast<std::size_t>(i)][k];
        }
        img.at(i, j, c) = v / scale;
      }
  return img;
}

/// Encodes to PNG bytes; values are clamped to [0, 1] and rounded.
inline std::string encode_png(const Image& img, int bit_depth = 8) {
  if (bit_depth != 8 && bit_depth != 16) throw InvalidArgument("PNG bit depth must be 8 or 16");
  std::string err, out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("libpng initialisation failed");
  }
  const int bytes = bit_depth / 8;
  const std::size_t stride = static_cast<std::size_t>(img.width()) * img.channels() * bytes;
  std::vector<png_byte> pixels(stride * static_cast<std::size_t>(img.height()));
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height()));
  const int max = bit_depth == 16 ? 65535 : 255;
  for (int i = 0; i < img.height(); ++i) {
    png_bytep row = pixels.data() + stride * i;
    rows[static_cast<std::size_t>(i)] = row;
    for (int j = 0; j < img.width(); ++j)
      for (int c = 0; c < img.channels(); ++c) {
        const std::uint16_t q = detail::quantize(img.at(i, j, c), max);
        const std::size_t k = (static_cast<std::size_t>(j) * img.channels() + c) * bytes;
        if (bytes == 2) {
          row[k] = static_cast<png_byte>(q >> 8);  // PNG is big-endian
          row[k + 1] = static_cast<png_byte>(q & 0xff);
        } else {
          row[k] = static_cast<png_byte>(q);
        }
      }
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("PNG encoding failed: " + err);
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t n) {
        static_cast<std::string*>(png_get_io_ptr(p))->append(reinterpret_cast<const char*>(data), n);
      },
      [](png_structp) {});
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()), static_cast<png_uint_32>(img.height()), bit_depth,
               img.channels() == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

inline void write_png(const Image& img, const std::string& path, int bit_depth = 8) {
  write_file_atomic(path, encode_png(img, bit_depth));
}

/// Linearly rescales a heatmap to [0, 1] (max -> 1) as a one-channel image.
inline Image heatmap_to_image(const Heatmap& hm) {
  Image img(hm.height(), hm.width(), 1);
  const double lo = hm.min(), hi = hm.max();
  const double span = hi - lo;
  for (int i = 0; i < hm.height(); ++i)
    for (int j = 0; j < hm.width(); ++j) img.at(i, j, 0) = span > 0.0 ? (hm.at(i, j) - lo) / span : 0.0;
  return img;
}

inline Image parse_pgm(const std::string& bytes, const std::string& name = "<pgm>") {
  std::size_t pos = 0;
  auto fail = [&](const std::string& what) { throw ParseError(name + ": " + what); };
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) fail("truncated header");
    return bytes.substr(start, pos - start);
  };
  auto number = [&]() {
    const std::string t = token();
    long v = 0;
    for (char ch : t) {
      if (ch < '0' || ch > '9') fail("non-numeric header field '" + t + "'");
      v = v * 10 + (ch - '0');
      if (v > 1 << 24) fail("header field out of range");
    }
    return static_cast<int>(v);
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P2") fail("not a PGM file (magic " + magic + ")");
  const int width = number(), height = number(), maxval = number();
  if (width < 1 || height < 1) fail("empty image");
  if (maxval < 1 || maxval > 65535) fail("maxval out of range");
  Image img(height, width, 1);
  if (magic == "P2") {
    for (auto& v : img.data()) {
      const int x = number();
      if (x > maxval) fail("sample exceeds maxval");
      v = static_cast<double>(x) / maxval;
    }
    return img;
  }
  ++pos;  // single whitespace after maxval
  const int bytes_per = maxval > 255 ? 2 : 1;
  if (bytes.size() < pos + img.data().size() * bytes_per) fail("truncated raster");
  for (auto& v : img.data()) {
    int x = static_cast<unsigned char>(bytes[pos++]);
    if (bytes_per == 2) x = (x << 8) | static_cast<unsigned char>(bytes[pos++]);
    if (x > maxval) fail("sample exceeds maxval");
    v = static_cast<double>(x) / maxval;
  }
  return img;
}

/// Binary PGM of the first channel.
inline std::string encode_pgm(const Image& img, int bit_depth = 8) {
  if (bit_depth != 8 && bit_depth != 16) throw InvalidArgument("PGM bit depth must be 8 or 16");
  if (img.channels() != 1) throw InvalidArgument("PGM output needs a one-channel image");
  const int max = bit_depth == 16 ? 65535 : 255;
  std::ostringstream os;
  os << "P5\n" << img.width() << ' ' << img.height() << '\n' << max << '\n';
  std::string out = os.str();
  for (double v : img.data()) {
    const std::uint16_t q = detail::quantize(v, max);
    if (bit_depth == 16) out.push_back(static_cast<char>(q >> 8));
    out.push_back(static_cast<char>(q & 0xff));
  }
  return out;
}

inline bool has_extension(const std::string& path, const std::string& ext) {
  if (path.size() < ext.size()) return false;
  return std::equal(ext.rbegin(), ext.rend(), path.rbegin(),
                    [](char a, char b) { return std::tolower(static_cast<unsigned char>(a)) == std::tolower(static_cast<unsigned char>(b)); });
}

/// Dispatches on extension: .pgm reads as PGM, everything else as PNG.
inline Image load_image(const std::string& path) {
  if (has_extension(path, ".pgm")) return parse_pgm(read_text_file(path), path);
  return read_png(path);
}

inline void save_image(const Image& img, const std::string& path, int bit_depth = 8) {
  if (has_extension(path, ".pgm")) {
    write_file_atomic(path, encode_pgm(img, bit_depth));
  } else {
    write_png(img, path, bit_depth);
  }
}

}  // namespace brule

#endif  // BRULE_IMAGE_IO_HPP
