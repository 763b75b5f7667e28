#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "presencia/image.hpp"
#include "presencia/nn.hpp"

namespace presencia::siamese {

inline constexpr int kChipSize = 160;
inline constexpr int kEmbeddingDim = 128;

// Network input: [3, size, size] with channels scaled to [-1, 1]. The
// deployed size is 160; smaller sizes are used for fast training tests.
struct FaceChip {
  nn::Tensor tensor;
};

// Unit-length 128-d face code.
struct Embedding {
  std::vector<float> values;
  friend bool operator==(const Embedding&, const Embedding&) = default;
};

using ChipRef = std::shared_ptr<const FaceChip>;

struct PairSample {
  ChipRef chip_a;
  ChipRef chip_b;
  int label = 0;  // 1 same person, 0 different
};

// Expands the face box to a square about its center, clamped to the image.
Rect square_box(const Rect& face_box, int img_w, int img_h);

// Square crop resized to size x size, gray replicated to three channels.
RgbImage chip_image(const AnyImage& img, const Rect& face_box, int size = kChipSize);
FaceChip chip_from_image(const RgbImage& chip);
FaceChip preprocess(const AnyImage& img, const Rect& face_box, int size = kChipSize);

// conv(8,3,s2,p1) relu pool2 conv(16,3,s2,p1) relu pool2 conv(32,3,s2,p1)
// relu flatten dense(128) l2_normalize
nn::NetworkSpec default_embedder_spec();
nn::Shape chip_shape(int size = kChipSize);

Embedding embed(const nn::Network& net, const FaceChip& chip);

// Sum of absolute coordinate differences.
double pair_distance(const Embedding& a, const Embedding& b);

enum class Verdict { Same, Different };
Verdict verify(const Embedding& a, const Embedding& b, double tau);

struct LossAndGrad {
  double loss = 0.0;
  double dloss_dd = 0.0;
};

// label * d + (1 - label) * max(0, margin - d)
LossAndGrad contrastive_loss(double d, int label, double margin = 1.0);

struct SiameseHyper {
  int epochs = 30;
  float lr = 0.05f;
  int batch = 16;
  double margin = 1.0;
  std::uint64_t seed = 7;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
};

// One shared network for both branches, mini-batch SGD on the contrastive
// loss of the pair distance. Bit-reproducible for a fixed seed.
nn::Network train_siamese(std::span<const PairSample> dataset, const nn::NetworkSpec& spec,
                          const SiameseHyper& hyper,
                          const std::function<void(const EpochStats&)>& on_epoch = {});

// Same, continuing from existing weights (fine-tuning a pretrained embedder).
nn::Network train_siamese(std::span<const PairSample> dataset, nn::Network initial, const SiameseHyper& hyper,
                          const std::function<void(const EpochStats&)>& on_epoch = {});

struct TauCalibration {
  double tau = 0.0;
  double error = 0.0;  // fraction of pairs misclassified at tau
};

TauCalibration calibrate_tau(std::span<const double> distances, std::span<const int> labels);
TauCalibration calibrate_tau(const nn::Network& net, std::span<const PairSample> pairs);

}  // namespace presencia::siamese
