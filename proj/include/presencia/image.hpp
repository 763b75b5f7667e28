#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "presencia/error.hpp"

namespace presencia {

struct Rect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  long long area() const { return static_cast<long long>(w) * h; }
  bool fits(int width, int height) const {
    return x >= 0 && y >= 0 && w > 0 && h > 0 && x + w <= width && y + h <= height;
  }
  friend bool operator==(const Rect&, const Rect&) = default;
};

// Row-major interleaved 8-bit raster with a compile-time channel count.
template <int Channels>
class Image {
 public:
  static constexpr int kChannels = Channels;

  Image() = default;
  Image(int width, int height, std::uint8_t fill = 0);
  Image(int width, int height, std::vector<std::uint8_t> pixels);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return pixels_.empty(); }

  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * Channels + c];
  }
  std::uint8_t& at(int x, int y, int c = 0) {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * Channels + c];
  }

  std::span<const std::uint8_t> pixels() const { return pixels_; }
  std::span<std::uint8_t> pixels() { return pixels_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

using GrayImage = Image<1>;
using RgbImage = Image<3>;
using AnyImage = std::variant<GrayImage, RgbImage>;

// Cumulative sum tables padded with a zero row and column, so that
// sums[y][x] is the sum of all pixels strictly above and left of (x, y).
class IntegralImage {
 public:
  IntegralImage() = default;
  explicit IntegralImage(const GrayImage& img);

  int width() const { return width_; }
  int height() const { return height_; }

  std::int64_t sum_at(int x, int y) const { return sums_[index(x, y)]; }
  std::int64_t sq_sum_at(int x, int y) const { return sq_sums_[index(x, y)]; }

  // Four-lookup rectangle sum; throws OutOfBounds when r leaves the image.
  std::int64_t rect_sum(const Rect& r, bool squared = false) const;

  // Unchecked variant for hot loops whose rectangles are known to fit.
  std::int64_t rect_sum_unchecked(int x, int y, int w, int h) const {
    const std::size_t stride = static_cast<std::size_t>(width_) + 1;
    const std::int64_t* s = sums_.data();
    const std::size_t a = static_cast<std::size_t>(y) * stride + x;
    const std::size_t b = static_cast<std::size_t>(y + h) * stride + x;
    return s[b + w] - s[a + w] - s[b] + s[a];
  }
  std::int64_t sq_rect_sum_unchecked(int x, int y, int w, int h) const {
    const std::size_t stride = static_cast<std::size_t>(width_) + 1;
    const std::int64_t* s = sq_sums_.data();
    const std::size_t a = static_cast<std::size_t>(y) * stride + x;
    const std::size_t b = static_cast<std::size_t>(y + h) * stride + x;
    return s[b + w] - s[a + w] - s[b] + s[a];
  }

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * (static_cast<std::size_t>(width_) + 1) + x;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::int64_t> sums_;
  std::vector<std::int64_t> sq_sums_;
};

AnyImage decode_pnm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pnm(const GrayImage& img);
std::vector<std::uint8_t> encode_pnm(const RgbImage& img);

AnyImage read_pnm_file(const std::string& path);
// Writes the file and fsyncs it before returning.
void write_pnm_file(const std::string& path, const RgbImage& img);
void write_pnm_file(const std::string& path, const GrayImage& img);

// BT.601 luma with round-half-up.
GrayImage to_gray(const RgbImage& img);
GrayImage to_gray(const AnyImage& img);
RgbImage to_rgb(const GrayImage& img);

inline IntegralImage integral(const GrayImage& img) { return IntegralImage(img); }
inline std::int64_t rect_sum(const IntegralImage& ii, const Rect& r, bool squared = false) {
  return ii.rect_sum(r, squared);
}

template <int C>
Image<C> crop(const Image<C>& img, const Rect& r);

// Half-pixel-center bilinear resampling, rounded to the nearest channel value.
template <int C>
Image<C> resize_bilinear(const Image<C>& img, int out_w, int out_h);

extern template class Image<1>;
extern template class Image<3>;
extern template Image<1> crop(const Image<1>&, const Rect&);
extern template Image<3> crop(const Image<3>&, const Rect&);
extern template Image<1> resize_bilinear(const Image<1>&, int, int);
extern template Image<3> resize_bilinear(const Image<3>&, int, int);

}  // namespace presencia
