#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dsdf/error.hpp"
#include "dsdf/tensor.hpp"

namespace dsdf {

/// Interleaved RGB image with channel values in [0,1].
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> data;  // height x width x 3, row-major

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h, double fill = 0.0)
      : width(w), height(h), data(w * h * 3, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * 3 + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * width + x) * 3 + c];
  }
};

namespace detail {

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DecodeError("cannot open image " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline RgbImage from_bytes(std::size_t w, std::size_t h, const std::uint8_t* px) {
  RgbImage img(w, h);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = double(px[i]) / 255.0;
  return img;
}

inline std::uint8_t to_byte(double v) {
  return std::uint8_t(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline RgbImage decode_ppm(const std::string& bytes, const std::string& path) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> std::size_t {
    skip_space();
    std::size_t start = pos, v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos])))
      v = v * 10 + std::size_t(bytes[pos++] - '0');
    if (pos == start) throw DecodeError("malformed PPM header in " + path);
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P') throw DecodeError("not a PNM file: " + path);
  if (bytes[1] != '6') {
    throw UnsupportedFormatError(detail::concat("unsupported PNM variant P", bytes[1], " in ", path,
                                                " (only binary RGB P6 is read)"));
  }
  pos = 2;
  const std::size_t w = number(), h = number(), maxval = number();
  if (w == 0 || h == 0) throw DecodeError("empty image in " + path);
  if (maxval != 255) throw UnsupportedFormatError("PPM maxval must be 255 in " + path);
  ++pos;  // single whitespace byte before the raster
  if (bytes.size() < pos + w * h * 3) throw DecodeError("truncated PPM raster in " + path);
  return from_bytes(w, h, reinterpret_cast<const std::uint8_t*>(bytes.data() + pos));
}

inline RgbImage decode_png(const std::string& bytes, const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DecodeError("invalid PNG " + path + ": " + image.message);
  }
  if (!(image.format & PNG_FORMAT_FLAG_COLOR)) {
    png_image_free(&image);
    throw UnsupportedFormatError("grayscale PNG is not RGB: " + path);
  }
  // Alpha, palettes and 16-bit depth are converted to 8-bit RGB.
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> raster(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raster.data(), 0, nullptr)) {
    throw DecodeError("failed to read PNG " + path + ": " + image.message);
  }
  return from_bytes(image.width, image.height, raster.data());
}

}  // namespace detail

/// Reads a PNG or binary PPM (P6) file; channel bytes map to v/255.
inline RgbImage decode(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  static constexpr std::array<unsigned char, 8> png_sig{0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), png_sig.data(), 8) == 0) {
    return detail::decode_png(bytes, path);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P') return detail::decode_ppm(bytes, path);
  throw DecodeError("unrecognized image format: " + path);
}

inline void write_png(const std::string& path, const RgbImage& img) {
  std::vector<std::uint8_t> raster(img.data.size());
  for (std::size_t i = 0; i < raster.size(); ++i) raster[i] = detail::to_byte(img.data[i]);
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = png_uint_32(img.width);
  image.height = png_uint_32(img.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, raster.data(), 0, nullptr)) {
    throw DecodeError("failed to write PNG " + path + ": " + image.message);
  }
}

inline void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DecodeError("cannot write " + path);
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  for (double v : img.data) os.put(char(detail::to_byte(v)));
}

/// Writes an H x W tensor as an 8-bit PGM, mapping [lo, hi] to [0, 255].
template <typename T>
void write_pgm(const std::string& path, const Tensor<T>& plane, double lo, double hi) {
  if (plane.rank() != 2) throw DimensionError("write_pgm expects a 2-D tensor");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DecodeError("cannot write " + path);
  os << "P5\n" << plane.extent(1) << ' ' << plane.extent(0) << "\n255\n";
  const double span = hi > lo ? hi - lo : 1.0;
  for (T v : plane.data()) os.put(char(detail::to_byte((double(v) - lo) / span)));
}

/// Bilinear resampling to target x target with half-pixel-centre alignment.
/// The model's own minimum size is enforced by ModelConfig, not here.
inline RgbImage resize(const RgbImage& img, std::size_t target) {
  if (target == 0) throw DimensionError("resize target must be positive");
  if (img.width == target && img.height == target) return img;
  RgbImage out(target, target);
  const double sy = double(img.height) / double(target);
  const double sx = double(img.width) / double(target);
  for (std::size_t y = 0; y < target; ++y) {
    const double fy = std::clamp((double(y) + 0.5) * sy - 0.5, 0.0, double(img.height - 1));
    const auto y0 = std::size_t(fy);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - double(y0);
    for (std::size_t x = 0; x < target; ++x) {
      const double fx = std::clamp((double(x) + 0.5) * sx - 0.5, 0.0, double(img.width - 1));
      const auto x0 = std::size_t(fx);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - double(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = img.at(y0, x0, c) * (1 - wx) + img.at(y0, x1, c) * wx;
        const double bottom = img.at(y1, x0, c) * (1 - wx) + img.at(y1, x1, c) * wx;
        out.at(y, x, c) = std::clamp(top * (1 - wy) + bottom * wy, 0.0, 1.0);
      }
    }
  }
  return out;
}

inline constexpr double kNormalizeMean = 0.5;
inline constexpr double kNormalizeStd = 0.5;

/// (v - mean) / std per value -> H x W x 3 tensor; the defaults map [0,1] to [-1,1].
inline Tensor<double> normalize(const RgbImage& img, double mean = kNormalizeMean,
                                double stddev = kNormalizeStd) {
  if (!(stddev > 0)) throw ConfigError(detail::concat("normalize: std must be positive, got ", stddev));
  std::vector<double> v(img.data.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (img.data[i] - mean) / stddev;
  return Tensor<double>({img.height, img.width, 3}, std::move(v));
}

inline RgbImage denormalize(const Tensor<double>& t, double mean = kNormalizeMean,
                            double stddev = kNormalizeStd) {
  if (t.rank() != 3 || t.extent(2) != 3) throw DimensionError("denormalize expects H x W x 3");
  RgbImage img(t.extent(1), t.extent(0));
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = t[i] * stddev + mean;
  return img;
}

inline Tensor<double> to_grayscale(const RgbImage& img) {
  std::vector<double> g(img.width * img.height);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double* px = img.data.data() + 3 * i;
    g[i] = 0.2989 * px[0] + 0.5870 * px[1] + 0.1140 * px[2];
  }
  return Tensor<double>({img.height, img.width}, std::move(g));
}

/// Full-range BT.601 Cr, offset into [0,1].
inline Tensor<double> to_ycbcr_cr(const RgbImage& img) {
  std::vector<double> cr(img.width * img.height);
  for (std::size_t i = 0; i < cr.size(); ++i) {
    const double* px = img.data.data() + 3 * i;
    cr[i] = std::clamp(0.5 + 0.5 * px[0] - 0.418688 * px[1] - 0.081312 * px[2], 0.0, 1.0);
  }
  return Tensor<double>({img.height, img.width}, std::move(cr));
}

/// Un-rescaled CIE a* of one sRGB pixel (D65 white).
inline double lab_a_star(double r, double g, double b) {
  auto linear = [](double v) { return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4); };
  constexpr double m[2][3] = {{0.4124564, 0.3575761, 0.1804375}, {0.2126729, 0.7151522, 0.0721750}};
  // White point = matrix row sums, so neutral greys land exactly on a* = 0.
  constexpr double xn = m[0][0] + m[0][1] + m[0][2];
  constexpr double yn = m[1][0] + m[1][1] + m[1][2];
  auto f = [](double t) {
    constexpr double delta = 6.0 / 29.0;
    return t > delta * delta * delta ? std::cbrt(t) : t / (3 * delta * delta) + 4.0 / 29.0;
  };
  const double lr = linear(r), lg = linear(g), lb = linear(b);
  const double x = m[0][0] * lr + m[0][1] * lg + m[0][2] * lb;
  const double y = m[1][0] * lr + m[1][1] * lg + m[1][2] * lb;
  return 500.0 * (f(x / xn) - f(y / yn));
}

/// CIE Lab a*, rescaled from [-128, 127] to [0, 1] via (a + 128) / 255.
inline Tensor<double> to_lab_a(const RgbImage& img) {
  std::vector<double> a(img.width * img.height);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double* px = img.data.data() + 3 * i;
    a[i] = std::clamp((lab_a_star(px[0], px[1], px[2]) + 128.0) / 255.0, 0.0, 1.0);
  }
  return Tensor<double>({img.height, img.width}, std::move(a));
}

/// Radius-1, 8-neighbour local binary pattern. Bits run clockwise from the
/// top-left neighbour (bit 0) to the left neighbour (bit 7); a neighbour
/// >= centre sets its bit. The one-pixel border is dropped.
inline Tensor<double> lbp(const Tensor<double>& gray) {
  if (gray.rank() != 2 || gray.extent(0) < 3 || gray.extent(1) < 3) {
    throw DimensionError("lbp needs a 2-D image of at least 3x3, got " + shape_str(gray.shape()));
  }
  const std::size_t H = gray.extent(0), W = gray.extent(1);
  static constexpr int dy[8] = {-1, -1, -1, 0, 1, 1, 1, 0};
  static constexpr int dx[8] = {-1, 0, 1, 1, 1, 0, -1, -1};
  std::vector<double> codes((H - 2) * (W - 2));
  auto g = gray.data();
  for (std::size_t y = 1; y + 1 < H; ++y) {
    for (std::size_t x = 1; x + 1 < W; ++x) {
      const double centre = g[y * W + x];
      unsigned code = 0;
      for (int b = 0; b < 8; ++b) {
        if (g[(y + dy[b]) * W + (x + dx[b])] >= centre) code |= 1u << b;
      }
      codes[(y - 1) * (W - 2) + (x - 1)] = double(code);
    }
  }
  return Tensor<double>({H - 2, W - 2}, std::move(codes));
}

/// Separable Gaussian blur, kernel radius ceil(3 sigma), edge-clamped borders.
inline RgbImage gaussian_blur(const RgbImage& img, double sigma) {
  if (!(sigma > 0)) return img;
  const int radius = int(std::ceil(3 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0;
  for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= total;

  auto pass = [&](const RgbImage& src, bool horizontal) {
    RgbImage dst(src.width, src.height);
    const auto W = std::ptrdiff_t(src.width), H = std::ptrdiff_t(src.height);
    for (std::ptrdiff_t y = 0; y < H; ++y)
      for (std::ptrdiff_t x = 0; x < W; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          double acc = 0;
          for (int i = -radius; i <= radius; ++i) {
            const auto sy = horizontal ? y : std::clamp<std::ptrdiff_t>(y + i, 0, H - 1);
            const auto sx = horizontal ? std::clamp<std::ptrdiff_t>(x + i, 0, W - 1) : x;
            acc += k[i + radius] * src.at(std::size_t(sy), std::size_t(sx), c);
          }
          dst.at(std::size_t(y), std::size_t(x), c) = acc;
        }
    return dst;
  };
  return pass(pass(img, true), false);
}

}  // namespace dsdf
