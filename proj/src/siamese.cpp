#include "presencia/siamese.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace presencia::siamese {

namespace {

void check_both_labels(std::span<const int> labels) {
  bool same = false;
  bool diff = false;
  for (int l : labels) {
    if (l == 1) same = true;
    else if (l == 0) diff = true;
    else throw Error(ErrorCode::DegenerateLabels, "pair labels must be 0 or 1");
  }
  if (!same || !diff) throw Error(ErrorCode::DegenerateLabels, "both same and different pairs are required");
}

}  // namespace

Rect square_box(const Rect& face_box, int img_w, int img_h) {
  if (!face_box.fits(img_w, img_h)) throw Error(ErrorCode::OutOfBounds, "face box outside image");
  const int side = std::min({std::max(face_box.w, face_box.h), img_w, img_h});
  // center in doubled coordinates avoids half-pixel rounding drift
  const int cx2 = 2 * face_box.x + face_box.w;
  const int cy2 = 2 * face_box.y + face_box.h;
  const int x = std::clamp((cx2 - side) / 2, 0, img_w - side);
  const int y = std::clamp((cy2 - side) / 2, 0, img_h - side);
  return {x, y, side, side};
}

RgbImage chip_image(const AnyImage& img, const Rect& face_box, int size) {
  return std::visit(
      [&](const auto& im) -> RgbImage {
        const Rect sq = square_box(face_box, im.width(), im.height());
        auto resized = resize_bilinear(crop(im, sq), size, size);
        if constexpr (std::decay_t<decltype(im)>::kChannels == 1) {
          return to_rgb(resized);
        } else {
          return resized;
        }
      },
      img);
}

FaceChip chip_from_image(const RgbImage& chip) {
  if (chip.width() != chip.height()) throw Error(ErrorCode::ShapeMismatch, "face chip must be square");
  const int s = chip.width();
  nn::Tensor t({3, s, s});
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        t.data[(static_cast<std::size_t>(c) * s + y) * s + x] = chip.at(x, y, c) / 127.5f - 1.0f;
      }
    }
  }
  return {std::move(t)};
}

FaceChip preprocess(const AnyImage& img, const Rect& face_box, int size) {
  return chip_from_image(chip_image(img, face_box, size));
}

nn::NetworkSpec default_embedder_spec() {
  using nn::LayerSpec;
  return {LayerSpec::conv2d(8, 3, 2, 1),  LayerSpec::relu(), LayerSpec::maxpool2d(2, 2),
          LayerSpec::conv2d(16, 3, 2, 1), LayerSpec::relu(), LayerSpec::maxpool2d(2, 2),
          LayerSpec::conv2d(32, 3, 2, 1), LayerSpec::relu(), LayerSpec::flatten(),
          LayerSpec::dense(kEmbeddingDim), LayerSpec::l2_normalize()};
}

nn::Shape chip_shape(int size) { return {3, size, size}; }

Embedding embed(const nn::Network& net, const FaceChip& chip) {
  if (net.spec.empty() || net.spec.back().kind != nn::LayerKind::L2Normalize ||
      net.output_shape() != nn::Shape{kEmbeddingDim}) {
    throw Error(ErrorCode::ShapeMismatch, "embedder must end in dense(128) -> l2_normalize");
  }
  return {nn::infer(net, chip.tensor).data};
}

double pair_distance(const Embedding& a, const Embedding& b) {
  if (a.values.size() != b.values.size()) throw Error(ErrorCode::ShapeMismatch, "embedding length mismatch");
  double d = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    d += std::abs(static_cast<double>(a.values[i]) - static_cast<double>(b.values[i]));
  }
  return d;
}

Verdict verify(const Embedding& a, const Embedding& b, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorCode::InvariantViolation, "tau must be positive");
  return pair_distance(a, b) < tau ? Verdict::Same : Verdict::Different;
}

LossAndGrad contrastive_loss(double d, int label, double margin) {
  if (label == 1) return {d, 1.0};
  if (d < margin) return {margin - d, -1.0};
  return {0.0, 0.0};
}

nn::Network train_siamese(std::span<const PairSample> dataset, const nn::NetworkSpec& spec,
                          const SiameseHyper& hyper,
                          const std::function<void(const EpochStats&)>& on_epoch) {
  std::vector<int> labels;
  for (const auto& p : dataset) labels.push_back(p.label);
  check_both_labels(labels);
  return train_siamese(dataset, nn::init_network(spec, dataset.front().chip_a->tensor.shape, hyper.seed), hyper,
                       on_epoch);
}

nn::Network train_siamese(std::span<const PairSample> dataset, nn::Network net, const SiameseHyper& hyper,
                          const std::function<void(const EpochStats&)>& on_epoch) {
  std::vector<int> labels;
  for (const auto& p : dataset) labels.push_back(p.label);
  check_both_labels(labels);
  if (hyper.batch <= 0 || hyper.epochs < 0) throw Error(ErrorCode::InvariantViolation, "bad hyperparameters");
  if (net.input_shape != dataset.front().chip_a->tensor.shape) {
    throw Error(ErrorCode::ShapeMismatch, "chip shape differs from the network input");
  }
  std::mt19937_64 rng(hyper.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hyper.batch));
      nn::Gradients grads = nn::zero_gradients(net);
      for (std::size_t k = start; k < end; ++k) {
        const PairSample& pair = dataset[order[k]];
        auto fa = nn::forward(net, pair.chip_a->tensor);
        auto fb = nn::forward(net, pair.chip_b->tensor);
        double d = 0.0;
        for (std::size_t i = 0; i < fa.output.size(); ++i) {
          d += std::abs(static_cast<double>(fa.output.data[i]) - fb.output.data[i]);
        }
        const LossAndGrad lg = contrastive_loss(d, pair.label, hyper.margin);
        loss_sum += lg.loss;
        if (lg.dloss_dd == 0.0) continue;
        nn::Tensor ga(fa.output.shape);
        nn::Tensor gb(fb.output.shape);
        for (std::size_t i = 0; i < ga.size(); ++i) {
          const float diff = fa.output.data[i] - fb.output.data[i];
          const float sign = diff > 0.0f ? 1.0f : (diff < 0.0f ? -1.0f : 0.0f);
          ga.data[i] = sign * static_cast<float>(lg.dloss_dd);
          gb.data[i] = -ga.data[i];
        }
        nn::accumulate(grads, nn::backward(net, fa.cache, ga).param_grads);
        nn::accumulate(grads, nn::backward(net, fb.cache, gb).param_grads);
      }
      nn::apply_sgd(net, grads, hyper.lr / static_cast<float>(end - start));
    }
    if (on_epoch) on_epoch({epoch + 1, loss_sum / static_cast<double>(dataset.size())});
  }
  return net;
}

TauCalibration calibrate_tau(std::span<const double> distances, std::span<const int> labels) {
  if (distances.size() != labels.size()) throw Error(ErrorCode::InvariantViolation, "length mismatch");
  check_both_labels(labels);
  const std::size_t n = distances.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return distances[a] < distances[b]; });

  std::size_t same_total = 0;
  for (int l : labels) same_total += l == 1;

  // Errors at tau: same pairs at or above tau plus different pairs below it.
  std::size_t same_below = 0;
  std::size_t diff_below = 0;
  TauCalibration best{0.0, 2.0};
  auto consider = [&](double tau) {
    if (!(tau > 0.0)) return;
    const double err = static_cast<double>((same_total - same_below) + diff_below) / static_cast<double>(n);
    if (err < best.error) best = {tau, err};
  };
  consider(distances[order.front()]);
  std::size_t k = 0;
  while (k < n) {
    const double v = distances[order[k]];
    while (k < n && distances[order[k]] == v) {
      (labels[order[k]] == 1 ? same_below : diff_below) += 1;
      ++k;
    }
    consider(k < n ? 0.5 * (v + distances[order[k]]) : v + 1.0);
  }
  return best;
}

TauCalibration calibrate_tau(const nn::Network& net, std::span<const PairSample> pairs) {
  std::vector<double> d;
  std::vector<int> labels;
  d.reserve(pairs.size());
  for (const auto& p : pairs) {
    d.push_back(pair_distance(embed(net, *p.chip_a), embed(net, *p.chip_b)));
    labels.push_back(p.label);
  }
  return calibrate_tau(d, labels);
}

}  // namespace presencia::siamese
