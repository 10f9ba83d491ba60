#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "crfnet/error.hpp"
#include "crfnet/nn/tensor.hpp"

namespace crfnet::data {

using nn::Tensor;

/// Bilinear resize of an H x W x C image with corner alignment, clamped to [0, 1].
inline Tensor preprocess_frame(const Tensor& image, std::size_t height, std::size_t width) {
  require(image.rank() == 3, ErrorCode::dimension_mismatch, "frames must be H x W x C");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  require(h > 0 && w > 0 && c > 0, ErrorCode::invalid_argument, "frame has a zero dimension");
  require(height > 0 && width > 0, ErrorCode::invalid_argument, "target size must be positive");

  auto source_coord = [](std::size_t i, std::size_t out, std::size_t in) {
    if (out == 1 || in == 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
  };

  Tensor out({height, width, c});
  for (std::size_t y = 0; y < height; ++y) {
    const double sy = source_coord(y, height, h);
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double sx = source_coord(x, width, w);
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* p = image.data();
        auto at = [&](std::size_t yy, std::size_t xx) { return p[(yy * w + xx) * c + ch]; };
        double v = at(y0, x0);
        // Skip zero-weight neighbours so an identity resize is exact.
        if (fx != 0.0 || fy != 0.0) {
          v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
              fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
        }
        out.data()[(y * width + x) * c + ch] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return out;
}

inline Tensor preprocess_frame(const Tensor& image, std::size_t size) {
  return preprocess_frame(image, size, size);
}

/// Nearest value on the 16-bit grid used by the image files.
inline double quantize16(double v) {
  return std::round(std::clamp(v, 0.0, 1.0) * 65535.0) / 65535.0;
}

namespace detail {

inline std::string next_token(std::istream& in) {
  std::string token;
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!token.empty()) return token;
      continue;
    }
    token.push_back(ch);
  }
  return token;
}

inline std::size_t header_number(std::istream& in, const std::string& path) {
  const std::string token = next_token(in);
  require(!token.empty() && std::all_of(token.begin(), token.end(), ::isdigit),
          ErrorCode::corrupt_file, "bad image header in " + path);
  return std::stoul(token);
}

}  // namespace detail

/// Reads binary PGM (P5, one channel) or PPM (P6, three channels), 8 or 16
/// bit, scaled to [0, 1] by the file's maxval.
inline Tensor read_image(const std::filesystem::path& path) {
  const std::string name = path.string();
  require(std::filesystem::exists(path), ErrorCode::missing_file, "image not found: " + name);
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io_failure, "cannot open " + name);
  const std::string magic = detail::next_token(in);
  require(magic == "P5" || magic == "P6", ErrorCode::corrupt_file,
          "unsupported image format in " + name);
  const std::size_t channels = magic == "P5" ? 1 : 3;
  const std::size_t width = detail::header_number(in, name);
  const std::size_t height = detail::header_number(in, name);
  const std::size_t maxval = detail::header_number(in, name);
  require(width > 0 && height > 0, ErrorCode::invalid_argument, "zero-sized image " + name);
  require(maxval > 0 && maxval < 65536, ErrorCode::corrupt_file, "bad maxval in " + name);

  const std::size_t bytes = maxval < 256 ? 1 : 2;
  const std::size_t count = width * height * channels;
  std::vector<unsigned char> raw(count * bytes);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  require(in.gcount() == static_cast<std::streamsize>(raw.size()), ErrorCode::corrupt_file,
          "truncated pixel data in " + name);

  Tensor image({height, width, channels});
  const double scale = static_cast<double>(maxval);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t v = bytes == 1 ? raw[i] : (std::size_t{raw[2 * i]} << 8) | raw[2 * i + 1];
    require(v <= maxval, ErrorCode::corrupt_file, "pixel exceeds maxval in " + name);
    image[i] = static_cast<double>(v) / scale;
  }
  return image;
}

/// Writes a 16-bit PGM/PPM. Values are clamped to [0, 1] and quantized.
inline void write_image(const std::filesystem::path& path, const Tensor& image) {
  require(image.rank() == 3 && (image.dim(2) == 1 || image.dim(2) == 3),
          ErrorCode::dimension_mismatch, "only 1- or 3-channel images can be written");
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::io_failure, "cannot write " + path.string());
  out << (image.dim(2) == 1 ? "P5" : "P6") << '\n'
      << image.dim(1) << ' ' << image.dim(0) << '\n'
      << 65535 << '\n';
  std::vector<unsigned char> raw(image.size() * 2);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const auto v = static_cast<std::uint16_t>(std::lround(std::clamp(image[i], 0.0, 1.0) * 65535.0));
    raw[2 * i] = static_cast<unsigned char>(v >> 8);
    raw[2 * i + 1] = static_cast<unsigned char>(v & 0xff);
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  require(static_cast<bool>(out), ErrorCode::io_failure, "failed writing " + path.string());
}

}  // namespace crfnet::data
