#include "presencia/haar.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace presencia::haar {

namespace {

using nlohmann::json;

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::InvariantViolation, what);
}

// Integer-exact stddev: var * A^2 = A * sum(x^2) - sum(x)^2.
double stddev_unchecked(const IntegralImage& ii, int x, int y, int w, int h) {
  const std::int64_t area = static_cast<std::int64_t>(w) * h;
  const std::int64_t s = ii.rect_sum_unchecked(x, y, w, h);
  const std::int64_t sq = ii.sq_rect_sum_unchecked(x, y, w, h);
  const double num = static_cast<double>(std::max<std::int64_t>(0, sq * area - s * s));
  const double sd = std::sqrt(num) / static_cast<double>(area);
  return sd < 1.0 ? 1.0 : sd;
}

struct ScaledStage {
  struct Weak {
    ScaledFeature feature;
    double threshold;
    int polarity;
    double alpha;
  };
  std::vector<Weak> weak;
  double threshold;
};

std::vector<ScaledStage> scale_cascade(const HaarCascade& c, int win_w, int win_h) {
  std::vector<ScaledStage> out;
  out.reserve(c.stages.size());
  for (const auto& stage : c.stages) {
    ScaledStage s{{}, stage.threshold};
    s.weak.reserve(stage.weak.size());
    for (const auto& wc : stage.weak) {
      s.weak.push_back({scale_feature(wc.feature, c.base_w, c.base_h, win_w, win_h),
                        wc.threshold, wc.polarity, wc.alpha});
    }
    out.push_back(std::move(s));
  }
  return out;
}

double scaled_stage_response(const IntegralImage& ii, const ScaledStage& stage, int x, int y,
                             double sd) {
  double response = 0.0;
  for (const auto& wc : stage.weak) {
    const double v = wc.feature.evaluate(ii, x, y);
    if (wc.polarity * v < wc.polarity * wc.threshold * sd) response += wc.alpha;
  }
  return response;
}

CascadeResult run_scaled(const IntegralImage& ii, const std::vector<ScaledStage>& stages, int x,
                         int y, int w, int h) {
  const double sd = stddev_unchecked(ii, x, y, w, h);
  double margin = 0.0;
  for (const auto& stage : stages) {
    const double r = scaled_stage_response(ii, stage, x, y, sd);
    if (r < stage.threshold) return {false, r - stage.threshold};
    margin = r - stage.threshold;
  }
  return {true, margin};
}

int scale_coord(int v, double s) { return static_cast<int>(std::lround(v * s)); }

// Sorted scan shared by train_stump and adaboost_train. `order` lists sample
// indices by ascending response.
StumpFit best_stump_sorted(std::span<const double> values, std::span<const int> labels,
                           std::span<const double> weights, std::span<const std::uint32_t> order) {
  double pos_total = 0.0;
  double neg_total = 0.0;
  for (std::uint32_t i : order) (labels[i] > 0 ? pos_total : neg_total) += weights[i];

  // Below the current candidate threshold.
  double pos_below = 0.0;
  double neg_below = 0.0;
  StumpFit best{kNegSentinel, 1, neg_below + (pos_total - pos_below)};
  auto consider = [&](double t) {
    const double err_pos = neg_below + (pos_total - pos_below);
    if (err_pos < best.weighted_error - kStumpTieTolerance) best = {t, 1, err_pos};
    const double err_neg = pos_below + (neg_total - neg_below);
    if (err_neg < best.weighted_error - kStumpTieTolerance) best = {t, -1, err_neg};
  };
  // polarity -1 at the lowest sentinel
  {
    const double err_neg = pos_below + (neg_total - neg_below);
    if (err_neg < best.weighted_error - kStumpTieTolerance) best = {kNegSentinel, -1, err_neg};
  }
  const std::size_t n = order.size();
  std::size_t k = 0;
  while (k < n) {
    const double v = values[order[k]];
    while (k < n && values[order[k]] == v) {
      const std::uint32_t i = order[k];
      (labels[i] > 0 ? pos_below : neg_below) += weights[i];
      ++k;
    }
    const double t = k < n ? 0.5 * (v + values[order[k]]) : kPosSentinel;
    consider(t);
  }
  return best;
}

void check_labels(std::span<const int> labels) {
  bool pos = false;
  bool neg = false;
  for (int l : labels) {
    if (l == 1) pos = true;
    else if (l == -1) neg = true;
    else throw Error(ErrorCode::DegenerateLabels, "labels must be +1 or -1");
  }
  if (!pos || !neg) throw Error(ErrorCode::DegenerateLabels, "both classes are required");
}

}  // namespace

void validate_feature(const HaarFeature& f, int base_w, int base_h) {
  require(f.rects.size() >= 2 && f.rects.size() <= 3, "feature needs 2 or 3 rects");
  double weighted_area = 0.0;
  double scale = 0.0;
  for (const auto& wr : f.rects) {
    require(wr.rect.fits(base_w, base_h), "feature rect outside base window");
    require(std::isfinite(wr.weight) && wr.weight != 0.0, "feature weight must be finite and nonzero");
    weighted_area += wr.weight * static_cast<double>(wr.rect.area());
    scale += std::abs(wr.weight) * static_cast<double>(wr.rect.area());
  }
  require(std::abs(weighted_area) <= 1e-9 * scale, "feature weights do not cancel");
}

void validate_cascade(const HaarCascade& c) {
  require(c.base_w > 0 && c.base_h > 0, "base window must be positive");
  require(!c.stages.empty(), "cascade has no stages");
  for (const auto& stage : c.stages) {
    require(!stage.weak.empty(), "stage has no weak classifiers");
    require(!std::isnan(stage.threshold), "stage threshold is NaN");
    for (const auto& wc : stage.weak) {
      validate_feature(wc.feature, c.base_w, c.base_h);
      require(wc.polarity == 1 || wc.polarity == -1, "polarity must be +1 or -1");
      require(std::isfinite(wc.alpha) && wc.alpha >= 0.0, "alpha must be finite and nonnegative");
      require(!std::isnan(wc.threshold), "weak threshold is NaN");
    }
  }
}

double ScaledFeature::evaluate(const IntegralImage& ii, int wx, int wy) const {
  const Part& p0 = parts[0];
  const std::int64_t s0 = ii.rect_sum_unchecked(wx + p0.x, wy + p0.y, p0.w, p0.h);
  double acc = 0.0;
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const Part& p = parts[i];
    const std::int64_t si = ii.rect_sum_unchecked(wx + p.x, wy + p.y, p.w, p.h);
    acc += p.weight * static_cast<double>(p0.area * si - p.area * s0);
  }
  return acc * inv_norm;
}

ScaledFeature scale_feature(const HaarFeature& f, int base_w, int base_h, int win_w, int win_h) {
  const double sx = static_cast<double>(win_w) / base_w;
  const double sy = static_cast<double>(win_h) / base_h;
  auto span = [](int lo, int hi, int limit) {
    lo = std::clamp(lo, 0, limit);
    hi = std::clamp(hi, 0, limit);
    if (hi <= lo) {
      if (lo < limit) hi = lo + 1;
      else lo = limit - 1;
    }
    return std::pair{lo, hi};
  };
  ScaledFeature out;
  out.parts.reserve(f.rects.size());
  for (const auto& wr : f.rects) {
    const auto [x0, x1] = span(scale_coord(wr.rect.x, sx), scale_coord(wr.rect.x + wr.rect.w, sx), win_w);
    const auto [y0, y1] = span(scale_coord(wr.rect.y, sy), scale_coord(wr.rect.y + wr.rect.h, sy), win_h);
    const std::int64_t area = static_cast<std::int64_t>(x1 - x0) * (y1 - y0);
    out.parts.push_back({x0, y0, x1 - x0, y1 - y0, wr.weight, area});
  }
  double rest = 0.0;
  for (std::size_t i = 1; i < out.parts.size(); ++i) {
    rest += out.parts[i].weight * static_cast<double>(out.parts[i].area);
  }
  out.parts[0].weight = -rest / static_cast<double>(out.parts[0].area);
  out.inv_norm = 1.0 / (static_cast<double>(out.parts[0].area) *
                        static_cast<double>(win_w) * static_cast<double>(win_h));
  return out;
}

double feature_value(const IntegralImage& ii, const HaarFeature& f, const Rect& window, int base_w,
                     int base_h) {
  if (!window.fits(ii.width(), ii.height())) {
    throw Error(ErrorCode::OutOfBounds, "window outside image");
  }
  return scale_feature(f, base_w, base_h, window.w, window.h).evaluate(ii, window.x, window.y);
}

double window_stddev(const IntegralImage& ii, const Rect& window) {
  if (!window.fits(ii.width(), ii.height())) {
    throw Error(ErrorCode::OutOfBounds, "window outside image");
  }
  return stddev_unchecked(ii, window.x, window.y, window.w, window.h);
}

double stage_response(const IntegralImage& ii, const CascadeStage& stage, const Rect& window,
                      int base_w, int base_h) {
  if (!window.fits(ii.width(), ii.height())) {
    throw Error(ErrorCode::OutOfBounds, "window outside image");
  }
  HaarCascade single{base_w, base_h, {stage}};
  const auto scaled = scale_cascade(single, window.w, window.h);
  const double sd = stddev_unchecked(ii, window.x, window.y, window.w, window.h);
  return scaled_stage_response(ii, scaled[0], window.x, window.y, sd);
}

CascadeResult eval_cascade(const IntegralImage& ii, const HaarCascade& cascade, const Rect& window) {
  if (!window.fits(ii.width(), ii.height())) {
    throw Error(ErrorCode::OutOfBounds, "window outside image");
  }
  const auto scaled = scale_cascade(cascade, window.w, window.h);
  return run_scaled(ii, scaled, window.x, window.y, window.w, window.h);
}

std::vector<Detection> detect_multiscale(const GrayImage& img, const HaarCascade& cascade,
                                         const DetectParams& params) {
  if (img.width() < cascade.base_w || img.height() < cascade.base_h) {
    throw Error(ErrorCode::ImageTooSmall, "image smaller than the cascade window");
  }
  if (!(params.scale_factor > 1.0) || !(params.step_fraction > 0.0 && params.step_fraction <= 1.0)) {
    throw Error(ErrorCode::InvariantViolation, "invalid detection parameters");
  }
  const int min_size = params.min_size > 0 ? params.min_size : std::min(cascade.base_w, cascade.base_h);
  const IntegralImage ii(img);
  std::vector<Detection> out;
  for (int k = 0;; ++k) {
    const double s = std::pow(params.scale_factor, k);
    const int win_w = static_cast<int>(std::lround(cascade.base_w * s));
    const int win_h = static_cast<int>(std::lround(cascade.base_h * s));
    if (win_w > img.width() || win_h > img.height()) break;
    if (std::min(win_w, win_h) < min_size) continue;
    const int stride = std::max(1, static_cast<int>(std::lround(params.step_fraction * win_w)));
    const auto stages = scale_cascade(cascade, win_w, win_h);
    for (int y = 0; y + win_h <= img.height(); y += stride) {
      for (int x = 0; x + win_w <= img.width(); x += stride) {
        const CascadeResult r = run_scaled(ii, stages, x, y, win_w, win_h);
        if (r.accepted) out.push_back({{x, y, win_w, win_h}, r.score});
      }
    }
  }
  return out;
}

double iou(const Rect& a, const Rect& b) {
  const int ix = std::max(0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const int iy = std::max(0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = static_cast<double>(ix) * iy;
  const double uni = static_cast<double>(a.area()) + static_cast<double>(b.area()) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.box.x, a.box.y, a.box.w, a.box.h) < std::tie(b.box.x, b.box.y, b.box.w, b.box.h);
  });
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    const bool clear = std::all_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return iou(k.box, d.box) <= iou_threshold;
    });
    if (clear) kept.push_back(d);
  }
  return kept;
}

std::vector<Detection> detect_faces(const GrayImage& img, const HaarCascade& cascade,
                                    const DetectParams& params, double iou_threshold) {
  return nms(detect_multiscale(img, cascade, params), iou_threshold);
}

StumpFit train_stump(std::span<const double> responses, std::span<const int> labels,
                     std::span<const double> weights) {
  if (responses.size() != labels.size() || responses.size() != weights.size() ||
      responses.size() < 2) {
    throw Error(ErrorCode::InvariantViolation, "stump inputs must have equal length >= 2");
  }
  check_labels(labels);
  std::vector<std::uint32_t> order(responses.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return responses[a] < responses[b]; });
  return best_stump_sorted(responses, labels, weights, order);
}

CascadeStage adaboost_train(std::span<const TrainingWindow> samples,
                            std::span<const HaarFeature> feature_bank, int rounds, int base_w,
                            int base_h) {
  if (feature_bank.empty()) throw Error(ErrorCode::EmptyFeatureBank, "feature bank is empty");
  if (rounds <= 0) throw Error(ErrorCode::InvariantViolation, "rounds must be positive");
  std::vector<int> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.label);
  check_labels(labels);

  const std::size_t n = samples.size();
  const Rect window{0, 0, base_w, base_h};
  std::vector<double> sd(n);
  for (std::size_t i = 0; i < n; ++i) sd[i] = window_stddev(samples[i].ii, window);

  // Variance-normalized responses and their ascending order, per feature.
  std::vector<double> values(feature_bank.size() * n);
  std::vector<std::uint32_t> orders(feature_bank.size() * n);
  for (std::size_t f = 0; f < feature_bank.size(); ++f) {
    validate_feature(feature_bank[f], base_w, base_h);
    const ScaledFeature scaled = scale_feature(feature_bank[f], base_w, base_h, base_w, base_h);
    double* v = &values[f * n];
    for (std::size_t i = 0; i < n; ++i) v[i] = scaled.evaluate(samples[i].ii, 0, 0) / sd[i];
    std::uint32_t* o = &orders[f * n];
    std::iota(o, o + n, 0u);
    std::stable_sort(o, o + n, [v](std::uint32_t a, std::uint32_t b) { return v[a] < v[b]; });
  }

  std::vector<double> weights(n, 1.0 / static_cast<double>(n));
  CascadeStage stage;
  for (int t = 0; t < rounds; ++t) {
    std::size_t best_f = 0;
    StumpFit best{0.0, 1, std::numeric_limits<double>::infinity()};
    for (std::size_t f = 0; f < feature_bank.size(); ++f) {
      const StumpFit fit = best_stump_sorted({&values[f * n], n}, labels, weights, {&orders[f * n], n});
      if (fit.weighted_error < best.weighted_error - kStumpTieTolerance) {
        best = fit;
        best_f = f;
      }
    }
    const double eps = std::clamp(best.weighted_error, 1e-10, 1.0 - 1e-10);
    const double alpha = 0.5 * std::log((1.0 - eps) / eps);
    stage.weak.push_back({feature_bank[best_f], best.threshold, best.polarity, alpha});

    const double* v = &values[best_f * n];
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const int predicted = best.polarity * v[i] < best.polarity * best.threshold ? 1 : -1;
      weights[i] *= std::exp(-alpha * labels[i] * predicted);
      total += weights[i];
    }
    for (double& w : weights) w /= total;
  }

  double min_positive = std::numeric_limits<double>::infinity();
  for (const auto& s : samples) {
    if (s.label == 1) {
      min_positive = std::min(min_positive, stage_response(s.ii, stage, window, base_w, base_h));
    }
  }
  stage.threshold = min_positive;
  return stage;
}

std::vector<HaarFeature> generate_feature_bank(int base_w, int base_h, int step, std::size_t cap) {
  std::vector<HaarFeature> bank;
  auto push = [&](HaarFeature f) {
    if (bank.size() < cap) bank.push_back(std::move(f));
  };
  // horizontal two-rect: left -1, right +1
  for (int pw = step; 2 * pw <= base_w; pw += step)
    for (int h = step; h <= base_h; h += step)
      for (int y = 0; y + h <= base_h; y += step)
        for (int x = 0; x + 2 * pw <= base_w; x += step)
          push({{{{x, y, pw, h}, -1.0}, {{x + pw, y, pw, h}, 1.0}}});
  // vertical two-rect: top -1, bottom +1
  for (int ph = step; 2 * ph <= base_h; ph += step)
    for (int w = step; w <= base_w; w += step)
      for (int y = 0; y + 2 * ph <= base_h; y += step)
        for (int x = 0; x + w <= base_w; x += step)
          push({{{{x, y, w, ph}, -1.0}, {{x, y + ph, w, ph}, 1.0}}});
  // horizontal three-rect: -1, +2, -1
  for (int pw = step; 3 * pw <= base_w; pw += step)
    for (int h = step; h <= base_h; h += step)
      for (int y = 0; y + h <= base_h; y += step)
        for (int x = 0; x + 3 * pw <= base_w; x += step)
          push({{{{x, y, pw, h}, -1.0}, {{x + pw, y, pw, h}, 2.0}, {{x + 2 * pw, y, pw, h}, -1.0}}});
  return bank;
}

HaarCascade train_cascade(std::span<const GrayImage> positives, const NegativeMiner& miner,
                          std::span<const HaarFeature> feature_bank,
                          const CascadeTrainConfig& config) {
  HaarCascade cascade{config.base_w, config.base_h, {}};
  std::vector<TrainingWindow> pos;
  for (const auto& p : positives) {
    if (p.width() != config.base_w || p.height() != config.base_h) {
      throw Error(ErrorCode::ShapeMismatch, "positives must be base-window sized");
    }
    pos.push_back({IntegralImage(p), 1});
  }
  for (int rounds : config.rounds_per_stage) {
    const auto negatives = miner(cascade, config.negatives_per_stage);
    if (negatives.empty()) break;
    std::vector<TrainingWindow> samples = pos;
    for (const auto& n : negatives) samples.push_back({IntegralImage(n), -1});
    cascade.stages.push_back(adaboost_train(samples, feature_bank, rounds, config.base_w, config.base_h));
  }
  if (cascade.stages.empty()) {
    throw Error(ErrorCode::DegenerateLabels, "negative miner produced no negatives");
  }
  return cascade;
}

std::string save_cascade(const HaarCascade& c) {
  validate_cascade(c);
  json stages = json::array();
  for (const auto& stage : c.stages) {
    json weak = json::array();
    for (const auto& wc : stage.weak) {
      json rects = json::array();
      for (const auto& wr : wc.feature.rects) {
        rects.push_back({wr.rect.x, wr.rect.y, wr.rect.w, wr.rect.h, wr.weight});
      }
      weak.push_back({{"threshold", wc.threshold},
                      {"polarity", wc.polarity},
                      {"alpha", wc.alpha},
                      {"rects", std::move(rects)}});
    }
    stages.push_back({{"threshold", stage.threshold}, {"weak", std::move(weak)}});
  }
  json doc{{"format_version", 1}, {"base_w", c.base_w}, {"base_h", c.base_h}, {"stages", std::move(stages)}};
  return doc.dump(1) + "\n";
}

HaarCascade load_cascade(std::string_view text) {
  HaarCascade c;
  try {
    const json doc = json::parse(text);
    if (doc.at("format_version").get<int>() != 1) {
      throw Error(ErrorCode::ParseError, "unsupported cascade format_version");
    }
    c.base_w = doc.at("base_w").get<int>();
    c.base_h = doc.at("base_h").get<int>();
    for (const auto& js : doc.at("stages")) {
      CascadeStage stage;
      stage.threshold = js.at("threshold").get<double>();
      for (const auto& jw : js.at("weak")) {
        WeakClassifier wc;
        wc.threshold = jw.at("threshold").get<double>();
        wc.polarity = jw.at("polarity").get<int>();
        wc.alpha = jw.at("alpha").get<double>();
        for (const auto& jr : jw.at("rects")) {
          if (!jr.is_array() || jr.size() != 5) throw Error(ErrorCode::ParseError, "rect needs 5 numbers");
          wc.feature.rects.push_back({{jr[0].get<int>(), jr[1].get<int>(), jr[2].get<int>(), jr[3].get<int>()},
                                      jr[4].get<double>()});
        }
        stage.weak.push_back(std::move(wc));
      }
      c.stages.push_back(std::move(stage));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("cascade: ") + e.what());
  }
  validate_cascade(c);
  return c;
}

}  // namespace presencia::haar
