// Copyright 2026 The pvnet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Interleaved images and binary netpbm IO.
//
// Depth is a 16-bit PGM in millimeters (0 = invalid), labels an 8-bit PGM,
// color an 8-bit PPM. 16-bit samples are big-endian as netpbm requires.

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "pvnet/tensor.hpp"

namespace pvnet {

template <typename T>
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<T> data;  ///< row-major, channels interleaved

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c, T fill = T{})
      : width(w), height(h), channels(c), data(w * h * c, fill) {}

  std::size_t pixels() const { return width * height; }
  T& at(std::size_t x, std::size_t y, std::size_t c = 0) { return data[(y * width + x) * channels + c]; }
  const T& at(std::size_t x, std::size_t y, std::size_t c = 0) const { return data[(y * width + x) * channels + c]; }
  bool operator==(const Image&) const = default;
};

using RgbImage = Image<std::uint8_t>;
using DepthImage = Image<std::uint16_t>;
using LabelImage = Image<std::uint8_t>;

namespace detail {

inline std::string read_token(std::istream& in, const std::filesystem::path& path) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  require(!tok.empty(), path.string(), ": truncated netpbm header");
  return tok;
}

inline std::size_t read_header_number(std::istream& in, const std::filesystem::path& path) {
  const std::string tok = read_token(in, path);
  require(std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }),
          path.string(), ": bad netpbm header field '", tok, "'");
  return std::stoul(tok);
}

template <typename T>
Image<T> read_netpbm(const std::filesystem::path& path, const char* magic, std::size_t channels) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), path.string(), ": cannot open");
  const std::string m = read_token(in, path);
  require(m == magic, path.string(), ": expected netpbm type ", magic, ", found ", m);
  const std::size_t w = read_header_number(in, path);
  const std::size_t h = read_header_number(in, path);
  const std::size_t maxval = read_header_number(in, path);
  require(w > 0 && h > 0, path.string(), ": empty image");
  const std::size_t bytes = maxval < 256 ? 1 : 2;
  require(maxval > 0 && maxval <= 65535, path.string(), ": bad maxval ", maxval);
  require(sizeof(T) >= bytes, path.string(), ": ", 8 * bytes, "-bit samples where ", 8 * sizeof(T),
          "-bit expected");
  Image<T> img(w, h, channels);
  std::vector<unsigned char> raw(img.data.size() * bytes);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  require(static_cast<std::size_t>(in.gcount()) == raw.size(), path.string(), ": truncated pixel data");
  for (std::size_t i = 0; i < img.data.size(); ++i)
    img.data[i] = static_cast<T>(bytes == 1 ? raw[i] : (raw[2 * i] << 8) | raw[2 * i + 1]);
  return img;
}

template <typename T>
void write_netpbm(const std::filesystem::path& path, const Image<T>& img, const char* magic, std::size_t channels) {
  require(img.channels == channels, path.string(), ": image has ", img.channels, " channels, format needs ",
          channels);
  require(img.data.size() == img.pixels() * channels, path.string(), ": image buffer size mismatch");
  constexpr std::size_t bytes = sizeof(T);
  std::ofstream out(path, std::ios::binary);
  require(out.good(), path.string(), ": cannot open for writing");
  out << magic << '\n' << img.width << ' ' << img.height << '\n' << (bytes == 1 ? 255 : 65535) << '\n';
  std::vector<unsigned char> raw(img.data.size() * bytes);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    if constexpr (bytes == 1) {
      raw[i] = img.data[i];
    } else {
      raw[2 * i] = static_cast<unsigned char>(img.data[i] >> 8);
      raw[2 * i + 1] = static_cast<unsigned char>(img.data[i] & 0xff);
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  require(out.good(), path.string(), ": write failed");
}

}  // namespace detail

inline RgbImage read_rgb(const std::filesystem::path& p) { return detail::read_netpbm<std::uint8_t>(p, "P6", 3); }
inline DepthImage read_depth(const std::filesystem::path& p) { return detail::read_netpbm<std::uint16_t>(p, "P5", 1); }
inline LabelImage read_labels(const std::filesystem::path& p) { return detail::read_netpbm<std::uint8_t>(p, "P5", 1); }
inline void write_rgb(const std::filesystem::path& p, const RgbImage& img) { detail::write_netpbm(p, img, "P6", 3); }
inline void write_depth(const std::filesystem::path& p, const DepthImage& img) { detail::write_netpbm(p, img, "P5", 1); }
inline void write_labels(const std::filesystem::path& p, const LabelImage& img) { detail::write_netpbm(p, img, "P5", 1); }

/// Bilinear resample where output pixel (x,y) reads source position
/// ((x + 0.5) * W / W' - 0.5, ...), i.e. pixel centers stay aligned.
/// Same size is an exact copy.
inline Image<float> resize_bilinear(const Image<float>& src, std::size_t w, std::size_t h) {
  detail::require(w > 0 && h > 0, "resize: empty target");
  if (w == src.width && h == src.height) return src;
  Image<float> dst(w, h, src.channels);
  const double sx = static_cast<double>(src.width) / static_cast<double>(w);
  const double sy = static_cast<double>(src.height) / static_cast<double>(h);
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(y0 + 1, src.height - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(x0 + 1, src.width - 1);
      const double tx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < src.channels; ++c) {
        const double top = (1 - tx) * src.at(x0, y0, c) + tx * src.at(x1, y0, c);
        const double bot = (1 - tx) * src.at(x0, y1, c) + tx * src.at(x1, y1, c);
        dst.at(x, y, c) = static_cast<float>((1 - ty) * top + ty * bot);
      }
    }
  }
  return dst;
}

/// Nearest-neighbour resample with the same center alignment as resize_bilinear.
template <typename T>
Image<T> resize_nearest(const Image<T>& src, std::size_t w, std::size_t h) {
  detail::require(w > 0 && h > 0, "resize: empty target");
  if (w == src.width && h == src.height) return src;
  Image<T> dst(w, h, src.channels);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t sy = std::min(src.height - 1, (2 * y + 1) * src.height / (2 * h));
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t sx = std::min(src.width - 1, (2 * x + 1) * src.width / (2 * w));
      for (std::size_t c = 0; c < src.channels; ++c) dst.at(x, y, c) = src.at(sx, sy, c);
    }
  }
  return dst;
}

template <typename T>
Image<T> flip_horizontal(const Image<T>& src) {
  Image<T> dst(src.width, src.height, src.channels);
  for (std::size_t y = 0; y < src.height; ++y)
    for (std::size_t x = 0; x < src.width; ++x)
      for (std::size_t c = 0; c < src.channels; ++c) dst.at(src.width - 1 - x, y, c) = src.at(x, y, c);
  return dst;
}

/// Zoom by `s` about the image center; source positions outside the image
/// clamp to the border.
inline Image<float> zoom_bilinear(const Image<float>& src, double s) {
  detail::require(s > 0, "zoom: scale must be > 0");
  if (s == 1.0) return src;
  Image<float> dst(src.width, src.height, src.channels);
  const double ux = (static_cast<double>(src.width) - 1) / 2, uy = (static_cast<double>(src.height) - 1) / 2;
  for (std::size_t y = 0; y < src.height; ++y) {
    const double fy = std::clamp(uy + (static_cast<double>(y) - uy) / s, 0.0, static_cast<double>(src.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(y0 + 1, src.height - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < src.width; ++x) {
      const double fx = std::clamp(ux + (static_cast<double>(x) - ux) / s, 0.0, static_cast<double>(src.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(x0 + 1, src.width - 1);
      const double tx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < src.channels; ++c) {
        const double top = (1 - tx) * src.at(x0, y0, c) + tx * src.at(x1, y0, c);
        const double bot = (1 - tx) * src.at(x0, y1, c) + tx * src.at(x1, y1, c);
        dst.at(x, y, c) = static_cast<float>((1 - ty) * top + ty * bot);
      }
    }
  }
  return dst;
}

/// Nearest-neighbour zoom about the center; pixels with no source get `fill`.
template <typename T>
Image<T> zoom_nearest(const Image<T>& src, double s, T fill) {
  detail::require(s > 0, "zoom: scale must be > 0");
  if (s == 1.0) return src;
  Image<T> dst(src.width, src.height, src.channels, fill);
  const double ux = (static_cast<double>(src.width) - 1) / 2, uy = (static_cast<double>(src.height) - 1) / 2;
  for (std::size_t y = 0; y < src.height; ++y) {
    const long sy = std::lround(uy + (static_cast<double>(y) - uy) / s);
    if (sy < 0 || sy >= static_cast<long>(src.height)) continue;
    for (std::size_t x = 0; x < src.width; ++x) {
      const long sx = std::lround(ux + (static_cast<double>(x) - ux) / s);
      if (sx < 0 || sx >= static_cast<long>(src.width)) continue;
      for (std::size_t c = 0; c < src.channels; ++c)
        dst.at(x, y, c) = src.at(static_cast<std::size_t>(sx), static_cast<std::size_t>(sy), c);
    }
  }
  return dst;
}

/// Edge-preserving smoothing (5x5 bilateral filter on [0,1] intensities).
inline Image<float> bilateral_smooth(const Image<float>& src, double sigma_space = 1.5, double sigma_range = 0.1) {
  Image<float> dst(src.width, src.height, src.channels);
  const int r = 2;
  const auto W = static_cast<long>(src.width), H = static_cast<long>(src.height);
  for (long y = 0; y < H; ++y) {
    for (long x = 0; x < W; ++x) {
      std::vector<double> acc(src.channels, 0.0);
      double norm = 0.0;
      for (long dy = -r; dy <= r; ++dy) {
        for (long dx = -r; dx <= r; ++dx) {
          const long yy = std::clamp(y + dy, 0L, H - 1), xx = std::clamp(x + dx, 0L, W - 1);
          double d2 = 0.0;
          for (std::size_t c = 0; c < src.channels; ++c) {
            const double d = src.at(xx, yy, c) - src.at(x, y, c);
            d2 += d * d;
          }
          const double wgt = std::exp(-static_cast<double>(dx * dx + dy * dy) / (2 * sigma_space * sigma_space) -
                                      d2 / (2 * sigma_range * sigma_range));
          for (std::size_t c = 0; c < src.channels; ++c) acc[c] += wgt * src.at(xx, yy, c);
          norm += wgt;
        }
      }
      for (std::size_t c = 0; c < src.channels; ++c) dst.at(x, y, c) = static_cast<float>(acc[c] / norm);
    }
  }
  return dst;
}

/// 8-bit color to [0,1] floats.
inline Image<float> to_unit_float(const RgbImage& src) {
  Image<float> out(src.width, src.height, src.channels);
  for (std::size_t i = 0; i < src.data.size(); ++i) out.data[i] = static_cast<float>(src.data[i]) / 255.0f;
  return out;
}

/// Interleaved [h,w,c] image to a planar [c,h,w] tensor.
template <typename T>
Tensor<T> to_chw(const Image<float>& img) {
  Tensor<T> t({img.channels, img.height, img.width});
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x)
        t[(c * img.height + y) * img.width + x] = static_cast<T>(img.at(x, y, c));
  return t;
}

}  // namespace pvnet
