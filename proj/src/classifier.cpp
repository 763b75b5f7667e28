#include "presencia/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

namespace presencia::classifier {

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw Error(ErrorCode::ShapeMismatch, "softmax of an empty vector");
  for (double v : logits) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "non-finite logit");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

nn::NetworkSpec head_spec(int hidden, int classes) {
  return {nn::LayerSpec::dense(hidden), nn::LayerSpec::relu(), nn::LayerSpec::dense(classes)};
}

double cross_entropy(std::span<const double> logits, std::size_t target, std::vector<double>* grad) {
  const auto p = softmax(logits);
  if (grad) {
    *grad = p;
    (*grad)[target] -= 1.0;
  }
  return -std::log(std::max(p[target], 1e-300));
}

ClassifierHead train_head(std::span<const siamese::Embedding> embeddings,
                          std::span<const std::string> labels, const HeadHyper& hyper) {
  if (embeddings.size() != labels.size()) throw Error(ErrorCode::InvariantViolation, "length mismatch");
  std::vector<std::string> ids(labels.begin(), labels.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.size() < 2) throw Error(ErrorCode::DegenerateLabels, "at least two classes are required");
  if (hyper.hidden <= 0 || hyper.batch <= 0 || hyper.epochs < 0 || !(hyper.theta > 0.0 && hyper.theta < 1.0)) {
    throw Error(ErrorCode::InvariantViolation, "bad head hyperparameters");
  }

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = i;
  std::vector<nn::Tensor> inputs;
  std::vector<std::size_t> targets;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (embeddings[i].values.size() != siamese::kEmbeddingDim) {
      throw Error(ErrorCode::ShapeMismatch, "embedding must have 128 values");
    }
    inputs.emplace_back(nn::Shape{siamese::kEmbeddingDim}, embeddings[i].values);
    targets.push_back(index[labels[i]]);
  }

  ClassifierHead head;
  head.class_ids = ids;
  head.theta = hyper.theta;
  head.hidden = hyper.hidden;
  head.net = nn::init_network(head_spec(hyper.hidden, static_cast<int>(ids.size())),
                              {siamese::kEmbeddingDim}, hyper.seed);

  std::mt19937_64 rng(hyper.seed ^ 0x5851f42d4c957f2dULL);
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> logits;
  std::vector<double> grad;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hyper.batch));
      nn::Gradients grads = nn::zero_gradients(head.net);
      for (std::size_t k = start; k < end; ++k) {
        auto fw = nn::forward(head.net, inputs[order[k]]);
        logits.assign(fw.output.data.begin(), fw.output.data.end());
        cross_entropy(logits, targets[order[k]], &grad);
        nn::Tensor g(fw.output.shape);
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] = static_cast<float>(grad[i]);
        nn::accumulate(grads, nn::backward(head.net, fw.cache, g).param_grads);
      }
      nn::apply_sgd(head.net, grads, hyper.lr / static_cast<float>(end - start));
    }
  }
  return head;
}

Prediction predict(const ClassifierHead& head, const siamese::Embedding& e) {
  if (e.values.size() != siamese::kEmbeddingDim) throw Error(ErrorCode::ShapeMismatch, "embedding must have 128 values");
  const nn::Tensor out = nn::infer(head.net, nn::Tensor({siamese::kEmbeddingDim}, e.values));
  if (out.size() != head.class_ids.size()) throw Error(ErrorCode::ShapeMismatch, "head outputs differ from class count");
  const std::vector<double> logits(out.data.begin(), out.data.end());
  Prediction p;
  p.probs = softmax(logits);
  // first maximum = lexicographically smallest id, since class_ids are sorted
  const auto best = std::max_element(p.probs.begin(), p.probs.end()) - p.probs.begin();
  p.top_prob = p.probs[best];
  p.best_id = head.class_ids[best];
  p.top_id = p.top_prob >= head.theta ? p.best_id : kUnknown;
  return p;
}

}  // namespace presencia::classifier
