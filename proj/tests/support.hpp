#pragma once

// Shared helpers for the unit and acceptance tests: temporary directories,
// random images, and brute-force oracles that recompute library results
// the slow, obvious way.

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "presencia/haar.hpp"
#include "presencia/image.hpp"
#include "presencia/nn.hpp"

namespace testing_support {

namespace fs = std::filesystem;
using namespace presencia;

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("presencia-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline fs::path fixture_dir() { return fs::path(PRESENCIA_FIXTURE_DIR); }

inline haar::HaarCascade fixture_cascade() {
  return haar::load_cascade(read_file(fixture_dir() / "cascade.json"));
}

inline GrayImage random_gray(std::mt19937_64& rng, int w, int h) {
  GrayImage img(w, h);
  for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(rng() & 0xff);
  return img;
}

inline int rand_in(std::mt19937_64& rng, int lo, int hi) {
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

inline Rect random_rect(std::mt19937_64& rng, int w, int h) {
  const int x = rand_in(rng, 0, w - 1);
  const int y = rand_in(rng, 0, h - 1);
  return {x, y, rand_in(rng, 1, w - x), rand_in(rng, 1, h - y)};
}

// Oracle: plain double loop over the pixels.
inline std::int64_t brute_sum(const GrayImage& img, const Rect& r, bool squared = false) {
  std::int64_t s = 0;
  for (int y = r.y; y < r.y + r.h; ++y) {
    for (int x = r.x; x < r.x + r.w; ++x) {
      const std::int64_t v = img.at(x, y);
      s += squared ? v * v : v;
    }
  }
  return s;
}

// Oracle for a feature's rects mapped into a window: each corner is scaled
// and rounded half away from zero, then clamped to the window. The first
// weight is re-derived from the scaled areas so the weighted areas still
// cancel.
struct OracleRect {
  Rect r;
  double weight;
};

inline std::vector<OracleRect> oracle_scaled_rects(const haar::HaarFeature& f, const Rect& window, int base_w,
                                                   int base_h) {
  const double sx = static_cast<double>(window.w) / base_w;
  const double sy = static_cast<double>(window.h) / base_h;
  auto corner = [](double v, int lo, int hi) {
    const double r = v < 0 ? -std::floor(-v + 0.5) : std::floor(v + 0.5);
    return std::min(hi, std::max(lo, static_cast<int>(r)));
  };
  // A rect that collapses after rounding keeps one pixel of width.
  auto widen = [](int& lo, int& hi, int limit) {
    if (hi > lo) return;
    if (lo < limit) hi = lo + 1;
    else lo = limit - 1;
  };
  std::vector<OracleRect> out;
  for (const auto& wr : f.rects) {
    int x0 = corner(wr.rect.x * sx, 0, window.w);
    int y0 = corner(wr.rect.y * sy, 0, window.h);
    int x1 = corner((wr.rect.x + wr.rect.w) * sx, 0, window.w);
    int y1 = corner((wr.rect.y + wr.rect.h) * sy, 0, window.h);
    widen(x0, x1, window.w);
    widen(y0, y1, window.h);
    out.push_back({{window.x + x0, window.y + y0, x1 - x0, y1 - y0}, wr.weight});
  }
  double rest = 0.0;
  for (std::size_t i = 1; i < out.size(); ++i) rest += out[i].weight * static_cast<double>(out[i].r.area());
  out[0].weight = -rest / static_cast<double>(out[0].r.area());
  return out;
}

// Oracle: weighted pixel sums over the scaled rects, divided by window area.
inline double oracle_feature_value(const GrayImage& img, const haar::HaarFeature& f, const Rect& window,
                                   int base_w = 24, int base_h = 24) {
  double v = 0.0;
  for (const auto& r : oracle_scaled_rects(f, window, base_w, base_h)) {
    v += r.weight * static_cast<double>(brute_sum(img, r.r));
  }
  return v / static_cast<double>(window.area());
}

// Oracle: population standard deviation from a pixel loop, clamped at 1.
inline double oracle_stddev(const GrayImage& img, const Rect& w) {
  const std::int64_t s = brute_sum(img, w);
  const std::int64_t s2 = brute_sum(img, w, true);
  const std::int64_t n = w.area();
  const double sd = std::sqrt(static_cast<double>(n * s2 - s * s)) / static_cast<double>(n);
  return sd < 1.0 ? 1.0 : sd;
}

// Oracle: evaluates every stage of every window (no early exit) and
// accepts when all stage responses reach their thresholds.
inline bool oracle_accepts(const GrayImage& img, const haar::HaarCascade& c, const Rect& window) {
  const double sd = oracle_stddev(img, window);
  bool all = true;
  for (const auto& stage : c.stages) {
    double response = 0.0;
    for (const auto& wc : stage.weak) {
      const double v = oracle_feature_value(img, wc.feature, window, c.base_w, c.base_h);
      if (wc.polarity * v < wc.polarity * wc.threshold * sd) response += wc.alpha;
    }
    all = all && !(response < stage.threshold);
  }
  return all;
}

// Oracle: enumerate every window of the scale pyramid independently.
inline std::vector<Rect> oracle_windows(int img_w, int img_h, int base_w, int base_h,
                                        const haar::DetectParams& p) {
  std::vector<Rect> out;
  const int min_size = p.min_size > 0 ? p.min_size : std::min(base_w, base_h);
  for (int k = 0;; ++k) {
    const double s = std::pow(p.scale_factor, k);
    const int w = static_cast<int>(std::lround(base_w * s));
    const int h = static_cast<int>(std::lround(base_h * s));
    if (w > img_w || h > img_h) break;
    if (std::min(w, h) < min_size) continue;
    const int stride = std::max(1, static_cast<int>(std::lround(p.step_fraction * w)));
    for (int y = 0; y + h <= img_h; y += stride) {
      for (int x = 0; x + w <= img_w; x += stride) out.push_back({x, y, w, h});
    }
  }
  return out;
}

// Random zero-sum feature inside a base window: 2 or 3 arbitrary rects,
// the first weight chosen so the weighted areas cancel.
inline haar::HaarFeature random_feature(std::mt19937_64& rng, int base_w = 24, int base_h = 24) {
  haar::HaarFeature f;
  const int n = rand_in(rng, 2, 3);
  for (int i = 0; i < n; ++i) {
    const double w = i == 0 ? 0.0 : static_cast<double>(rand_in(rng, 1, 3)) * (rng() & 1 ? 1 : -1);
    f.rects.push_back({random_rect(rng, base_w, base_h), w});
  }
  double rest = 0.0;
  for (int i = 1; i < n; ++i) rest += f.rects[i].weight * static_cast<double>(f.rects[i].rect.area());
  f.rects[0].weight = -rest / static_cast<double>(f.rects[0].rect.area());
  return f;
}

// Random cascade whose stages pass roughly a fraction of windows; used to
// compare the detector against the exhaustive oracle.
inline haar::HaarCascade random_cascade(std::mt19937_64& rng, int stages, int weak_per_stage) {
  haar::HaarCascade c;
  for (int s = 0; s < stages; ++s) {
    haar::CascadeStage stage;
    double total = 0.0;
    for (int k = 0; k < weak_per_stage; ++k) {
      haar::WeakClassifier wc;
      wc.feature = random_feature(rng);
      wc.threshold = (static_cast<double>(rng() % 2001) - 1000.0) / 4000.0;
      wc.polarity = rng() & 1 ? 1 : -1;
      wc.alpha = 0.1 + static_cast<double>(rng() % 1000) / 1000.0;
      total += wc.alpha;
      stage.weak.push_back(wc);
    }
    stage.threshold = 0.4 * total;
    c.stages.push_back(stage);
  }
  return c;
}

// Central finite differences of a scalar function of a float.
template <typename F>
double central_difference(float& slot, float h, F&& f) {
  const float saved = slot;
  slot = saved + h;
  const double up = f();
  slot = saved - h;
  const double down = f();
  slot = saved;
  return (up - down) / (2.0 * static_cast<double>(h));
}

// Which side of every ReLU kink and which max-pool argmax a forward pass
// took. Finite differences are only trusted when both probes keep it.
inline std::vector<long long> kink_signature(const nn::Network& net, const nn::Tensor& input) {
  const auto fr = nn::forward(net, input);
  std::vector<long long> sig;
  for (std::size_t i = 0; i < net.spec.size(); ++i) {
    const auto& l = net.spec[i];
    const nn::Tensor& x = fr.cache.inputs[i];
    if (l.kind == nn::LayerKind::Relu) {
      for (float v : x.data) sig.push_back(v > 0.0f);
    } else if (l.kind == nn::LayerKind::MaxPool2d) {
      const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
      const int oh = (h - l.kernel) / l.stride + 1, ow = (w - l.kernel) / l.stride + 1;
      for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            long long best = -1;
            float best_v = 0.0f;
            for (int ky = 0; ky < l.kernel; ++ky)
              for (int kx = 0; kx < l.kernel; ++kx) {
                const long long idx = (static_cast<long long>(ch) * h + oy * l.stride + ky) * w + ox * l.stride + kx;
                if (best < 0 || x.data[idx] > best_v) best = idx, best_v = x.data[idx];
              }
            sig.push_back(best);
          }
    }
  }
  return sig;
}

struct GradCheck {
  double max_rel = 0.0;        // over gradients of magnitude >= 1e-2
  double max_abs_small = 0.0;  // over gradients of magnitude < 1e-2
  std::size_t checked = 0;
  std::size_t skipped = 0;     // probes that crossed a kink
  bool ok() const { return checked > 0 && max_rel < 1e-2 && max_abs_small < 1e-4; }
};

// Central-difference check of backward() for L = sum(r * output), r drawn
// from the seed. Checks up to `per_tensor` random coordinates of the input
// and of every weight and bias tensor.
inline GradCheck gradient_check(nn::Network net, nn::Tensor input, std::uint64_t seed, std::size_t per_tensor,
                                float h = 1e-3f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const nn::Shape out_shape = net.output_shape();
  std::vector<double> r(nn::shape_size(out_shape));
  for (double& v : r) v = unit(rng);
  nn::Tensor r_f(out_shape);
  for (std::size_t i = 0; i < r.size(); ++i) r_f.data[i] = static_cast<float>(r[i]);

  auto loss = [&] {
    const nn::Tensor y = nn::infer(net, input);
    double l = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) l += static_cast<double>(r_f.data[i]) * y.data[i];
    return l;
  };
  const auto fr = nn::forward(net, input);
  const auto bw = nn::backward(net, fr.cache, r_f);
  const auto base_sig = kink_signature(net, input);

  GradCheck out;
  auto probe = [&](float& slot, double analytic) {
    const float saved = slot;
    slot = saved + h;
    const bool up_same = kink_signature(net, input) == base_sig;
    slot = saved - h;
    const bool down_same = kink_signature(net, input) == base_sig;
    slot = saved;
    if (!up_same || !down_same) {
      ++out.skipped;
      return;
    }
    const double numeric = central_difference(slot, h, loss);
    const double mag = std::max(std::abs(analytic), std::abs(numeric));
    const double err = std::abs(analytic - numeric);
    if (mag < 1e-2) out.max_abs_small = std::max(out.max_abs_small, err);
    else out.max_rel = std::max(out.max_rel, err / mag);
    ++out.checked;
  };
  auto pick = [&](std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(n, per_tensor));
    return idx;
  };
  for (std::size_t k : pick(input.data.size())) probe(input.data[k], bw.grad_in.data[k]);
  for (std::size_t l = 0; l < net.params.size(); ++l) {
    for (std::size_t k : pick(net.params[l].weight.data.size()))
      probe(net.params[l].weight.data[k], bw.param_grads[l].weight.data[k]);
    for (std::size_t k : pick(net.params[l].bias.data.size()))
      probe(net.params[l].bias.data[k], bw.param_grads[l].bias.data[k]);
  }
  return out;
}

inline nn::Tensor random_tensor(std::mt19937_64& rng, const nn::Shape& shape, double scale = 1.0) {
  std::uniform_real_distribution<double> unit(-scale, scale);
  nn::Tensor t(shape);
  for (float& v : t.data) v = static_cast<float>(unit(rng));
  return t;
}

// Parameters drawn so that biases are nonzero too.
inline nn::Network randomized(nn::Network net, std::mt19937_64& rng, double bias_scale = 0.1) {
  for (auto& p : net.params) {
    std::uniform_real_distribution<double> unit(-bias_scale, bias_scale);
    for (float& b : p.bias.data) b = static_cast<float>(unit(rng));
  }
  return net;
}

}  // namespace testing_support
