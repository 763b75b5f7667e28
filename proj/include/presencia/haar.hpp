#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "presencia/image.hpp"

namespace presencia::haar {

struct WeightedRect {
  Rect rect;  // relative to the base window
  double weight = 0.0;
  friend bool operator==(const WeightedRect&, const WeightedRect&) = default;
};

// Two or three weighted rectangles whose weighted areas cancel, so the
// response on a constant patch is zero.
struct HaarFeature {
  std::vector<WeightedRect> rects;
  friend bool operator==(const HaarFeature&, const HaarFeature&) = default;
};

struct WeakClassifier {
  HaarFeature feature;
  double threshold = 0.0;
  int polarity = 1;
  double alpha = 0.0;
  friend bool operator==(const WeakClassifier&, const WeakClassifier&) = default;
};

struct CascadeStage {
  std::vector<WeakClassifier> weak;
  double threshold = 0.0;
  friend bool operator==(const CascadeStage&, const CascadeStage&) = default;
};

struct HaarCascade {
  int base_w = 24;
  int base_h = 24;
  std::vector<CascadeStage> stages;
  friend bool operator==(const HaarCascade&, const HaarCascade&) = default;
};

struct Detection {
  Rect box;
  double score = 0.0;
  friend bool operator==(const Detection&, const Detection&) = default;
};

struct DetectParams {
  double scale_factor = 1.2;
  int min_size = 0;  // 0 means the cascade base size
  double step_fraction = 0.1;
};

struct StumpFit {
  double threshold = 0.0;
  int polarity = 1;
  double weighted_error = 0.0;
};

// Finite stand-ins for -inf/+inf thresholds so cascades stay serializable.
inline constexpr double kNegSentinel = std::numeric_limits<double>::lowest();
inline constexpr double kPosSentinel = std::numeric_limits<double>::max();

// Two stump errors closer than this are treated as equal (ties go to the
// smaller threshold, then polarity +1).
inline constexpr double kStumpTieTolerance = 1e-12;

// Throws InvariantViolation unless the feature has 2-3 in-window rects with a
// zero weighted-area sum.
void validate_feature(const HaarFeature& f, int base_w, int base_h);
void validate_cascade(const HaarCascade& c);

// A feature's rectangles mapped into a concrete window size. Rect corners are
// rounded independently so neighbours stay adjacent; the first rect's weight
// is re-derived so the weighted areas still cancel exactly.
struct ScaledFeature {
  struct Part {
    int x, y, w, h;
    double weight;
    std::int64_t area;
  };
  std::vector<Part> parts;
  double inv_norm = 0.0;  // 1 / (area of parts[0] * window area)

  // Response relative to a window origin; no bounds checks.
  double evaluate(const IntegralImage& ii, int wx, int wy) const;
};

ScaledFeature scale_feature(const HaarFeature& f, int base_w, int base_h, int win_w, int win_h);

// Area-normalized weighted rect-sum response of f over window.
double feature_value(const IntegralImage& ii, const HaarFeature& f, const Rect& window,
                     int base_w = 24, int base_h = 24);

// Pixel standard deviation of the window, clamped below at 1.
double window_stddev(const IntegralImage& ii, const Rect& window);

struct CascadeResult {
  bool accepted = false;
  double score = 0.0;
};

CascadeResult eval_cascade(const IntegralImage& ii, const HaarCascade& cascade, const Rect& window);

// Stage response (sum of firing alphas) for one window; used by training and
// by the exhaustive test oracle.
double stage_response(const IntegralImage& ii, const CascadeStage& stage, const Rect& window,
                      int base_w, int base_h);

std::vector<Detection> detect_multiscale(const GrayImage& img, const HaarCascade& cascade,
                                         const DetectParams& params = {});

double iou(const Rect& a, const Rect& b);

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold = 0.3);

// detect_multiscale followed by nms.
std::vector<Detection> detect_faces(const GrayImage& img, const HaarCascade& cascade,
                                    const DetectParams& params = {}, double iou_threshold = 0.3);

StumpFit train_stump(std::span<const double> responses, std::span<const int> labels,
                     std::span<const double> weights);

struct TrainingWindow {
  IntegralImage ii;  // integral of a base-window-sized crop
  int label = 1;
};

// Discrete AdaBoost over the feature bank; the stage threshold lets every
// training positive through.
CascadeStage adaboost_train(std::span<const TrainingWindow> samples,
                            std::span<const HaarFeature> feature_bank, int rounds,
                            int base_w = 24, int base_h = 24);

// Horizontal/vertical two-rect and horizontal three-rect features on a grid
// of `step` pixels, truncated to `cap` entries.
std::vector<HaarFeature> generate_feature_bank(int base_w = 24, int base_h = 24, int step = 2,
                                               std::size_t cap = 20000);

// Supplies base-size negatives the partial cascade still accepts.
using NegativeMiner = std::function<std::vector<GrayImage>(const HaarCascade&, std::size_t)>;

struct CascadeTrainConfig {
  int base_w = 24;
  int base_h = 24;
  std::vector<int> rounds_per_stage{10, 20, 30};
  std::size_t negatives_per_stage = 400;
};

// Stage-by-stage training: each stage sees the positives and negatives that
// survived all previous stages. Stops early when the miner comes back empty.
HaarCascade train_cascade(std::span<const GrayImage> positives, const NegativeMiner& miner,
                          std::span<const HaarFeature> feature_bank,
                          const CascadeTrainConfig& config);

std::string save_cascade(const HaarCascade& c);
HaarCascade load_cascade(std::string_view text);

}  // namespace presencia::haar
