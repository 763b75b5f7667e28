#include "presencia/image.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace presencia {

template <int C>
Image<C>::Image(int width, int height, std::uint8_t fill)
    : width_(width), height_(height),
      pixels_(static_cast<std::size_t>(width) * height * C, fill) {
  if (width <= 0 || height <= 0) {
    throw Error(ErrorCode::InvariantViolation, "image dimensions must be positive");
  }
}

template <int C>
Image<C>::Image(int width, int height, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width <= 0 || height <= 0 ||
      pixels_.size() != static_cast<std::size_t>(width) * height * C) {
    throw Error(ErrorCode::InvariantViolation, "pixel buffer does not match dimensions");
  }
}

template class Image<1>;
template class Image<3>;

IntegralImage::IntegralImage(const GrayImage& img)
    : width_(img.width()), height_(img.height()) {
  const std::size_t stride = static_cast<std::size_t>(width_) + 1;
  sums_.assign(stride * (height_ + 1), 0);
  sq_sums_.assign(stride * (height_ + 1), 0);
  for (int y = 0; y < height_; ++y) {
    std::int64_t row = 0;
    std::int64_t sq_row = 0;
    for (int x = 0; x < width_; ++x) {
      const std::int64_t v = img.at(x, y);
      row += v;
      sq_row += v * v;
      sums_[(y + 1) * stride + x + 1] = sums_[y * stride + x + 1] + row;
      sq_sums_[(y + 1) * stride + x + 1] = sq_sums_[y * stride + x + 1] + sq_row;
    }
  }
}

std::int64_t IntegralImage::rect_sum(const Rect& r, bool squared) const {
  if (!r.fits(width_, height_)) {
    throw Error(ErrorCode::OutOfBounds, "rectangle outside integral image");
  }
  return squared ? sq_rect_sum_unchecked(r.x, r.y, r.w, r.h)
                 : rect_sum_unchecked(r.x, r.y, r.w, r.h);
}

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const auto c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(c)) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long read_int() {
    skip_space_and_comments();
    long value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      ++pos_;
      if (++digits > 9) throw Error(ErrorCode::MalformedHeader, "PNM header value too large");
    }
    if (digits == 0) throw Error(ErrorCode::MalformedHeader, "expected integer in PNM header");
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  void expect_single_space() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw Error(ErrorCode::MalformedHeader, "missing whitespace after maxval");
    }
    ++pos_;
  }

  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 2;
};

template <int C>
std::vector<std::uint8_t> encode(const Image<C>& img) {
  const std::string header = std::string(C == 1 ? "P5" : "P6") + "\n" +
                             std::to_string(img.width()) + " " +
                             std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels().begin(), img.pixels().end());
  return out;
}

void write_synced(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::size_t written = 0;
  while (written < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + written, bytes.size() - written);
    if (n <= 0) {
      ::close(fd);
      throw Error(ErrorCode::IoError, "write failed for " + path);
    }
    written += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
}

}  // namespace

AnyImage decode_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw Error(ErrorCode::MalformedHeader, "expected P5 or P6 magic");
  }
  const bool color = bytes[1] == '6';
  HeaderReader reader(bytes);
  const long width = reader.read_int();
  const long height = reader.read_int();
  const long maxval = reader.read_int();
  if (width <= 0 || height <= 0) {
    throw Error(ErrorCode::MalformedHeader, "PNM dimensions must be positive");
  }
  if (maxval != 255) throw Error(ErrorCode::MalformedHeader, "PNM maxval must be 255");
  reader.expect_single_space();

  const std::size_t need = static_cast<std::size_t>(width) * height * (color ? 3 : 1);
  const std::size_t begin = reader.pos();
  if (bytes.size() - begin < need) {
    throw Error(ErrorCode::TruncatedPayload, "PNM raster shorter than header promises");
  }
  std::vector<std::uint8_t> pixels(bytes.begin() + begin, bytes.begin() + begin + need);
  if (color) return RgbImage(static_cast<int>(width), static_cast<int>(height), std::move(pixels));
  return GrayImage(static_cast<int>(width), static_cast<int>(height), std::move(pixels));
}

std::vector<std::uint8_t> encode_pnm(const GrayImage& img) { return encode(img); }
std::vector<std::uint8_t> encode_pnm(const RgbImage& img) { return encode(img); }

AnyImage read_pnm_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_pnm(bytes);
}

void write_pnm_file(const std::string& path, const RgbImage& img) {
  write_synced(path, encode_pnm(img));
}
void write_pnm_file(const std::string& path, const GrayImage& img) {
  write_synced(path, encode_pnm(img));
}

GrayImage to_gray(const RgbImage& img) {
  GrayImage out(img.width(), img.height());
  auto src = img.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    // Integer form of 0.299 R + 0.587 G + 0.114 B, round half up.
    const int weighted = 299 * src[3 * i] + 587 * src[3 * i + 1] + 114 * src[3 * i + 2];
    dst[i] = static_cast<std::uint8_t>(std::min(255, (weighted + 500) / 1000));
  }
  return out;
}

GrayImage to_gray(const AnyImage& img) {
  if (const auto* gray = std::get_if<GrayImage>(&img)) return *gray;
  return to_gray(std::get<RgbImage>(img));
}

RgbImage to_rgb(const GrayImage& img) {
  RgbImage out(img.width(), img.height());
  auto src = img.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[3 * i] = dst[3 * i + 1] = dst[3 * i + 2] = src[i];
  }
  return out;
}

template <int C>
Image<C> crop(const Image<C>& img, const Rect& r) {
  if (!r.fits(img.width(), img.height())) {
    throw Error(ErrorCode::OutOfBounds, "crop rectangle outside image");
  }
  Image<C> out(r.w, r.h);
  auto src = img.pixels();
  auto dst = out.pixels();
  const std::size_t row_bytes = static_cast<std::size_t>(r.w) * C;
  for (int y = 0; y < r.h; ++y) {
    const std::size_t from = (static_cast<std::size_t>(r.y + y) * img.width() + r.x) * C;
    std::copy_n(src.begin() + from, row_bytes, dst.begin() + y * row_bytes);
  }
  return out;
}

template <int C>
Image<C> resize_bilinear(const Image<C>& img, int out_w, int out_h) {
  if (out_w <= 0 || out_h <= 0) {
    throw Error(ErrorCode::InvariantViolation, "resize target must be positive");
  }
  Image<C> out(out_w, out_h);
  const double sx = static_cast<double>(img.width()) / out_w;
  const double sy = static_cast<double>(img.height()) / out_h;

  struct Tap {
    int i0;
    int i1;
    double frac;
  };
  auto taps = [](int n_out, int n_in, double scale) {
    std::vector<Tap> t(n_out);
    for (int d = 0; d < n_out; ++d) {
      const double s = std::clamp((d + 0.5) * scale - 0.5, 0.0, static_cast<double>(n_in - 1));
      const int i0 = static_cast<int>(std::floor(s));
      t[d] = {i0, std::min(i0 + 1, n_in - 1), s - i0};
    }
    return t;
  };
  const auto xs = taps(out_w, img.width(), sx);
  const auto ys = taps(out_h, img.height(), sy);

  for (int y = 0; y < out_h; ++y) {
    const Tap& ty = ys[y];
    for (int x = 0; x < out_w; ++x) {
      const Tap& tx = xs[x];
      for (int c = 0; c < C; ++c) {
        const double top = img.at(tx.i0, ty.i0, c) * (1.0 - tx.frac) + img.at(tx.i1, ty.i0, c) * tx.frac;
        const double bottom = img.at(tx.i0, ty.i1, c) * (1.0 - tx.frac) + img.at(tx.i1, ty.i1, c) * tx.frac;
        const double v = top * (1.0 - ty.frac) + bottom * ty.frac;
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

template Image<1> crop(const Image<1>&, const Rect&);
template Image<3> crop(const Image<3>&, const Rect&);
template Image<1> resize_bilinear(const Image<1>&, int, int);
template Image<3> resize_bilinear(const Image<3>&, int, int);

}  // namespace presencia
