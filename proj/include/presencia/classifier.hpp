#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "presencia/nn.hpp"
#include "presencia/siamese.hpp"

namespace presencia::classifier {

inline constexpr const char* kUnknown = "UNKNOWN";

// dense(hidden) -> relu -> dense(P) over a 128-d embedding.
struct ClassifierHead {
  nn::Network net;
  std::vector<std::string> class_ids;  // sorted, one per output
  double theta = 0.6;                  // minimum top probability for a named result
  int hidden = 64;
};

struct Prediction {
  std::vector<double> probs;
  std::string top_id;    // argmax id, or kUnknown below theta
  std::string best_id;   // argmax id regardless of theta
  double top_prob = 0.0;

  bool known() const { return top_id != kUnknown; }
};

std::vector<double> softmax(std::span<const double> logits);

struct HeadHyper {
  int epochs = 1000;
  float lr = 0.1f;
  int hidden = 64;
  int batch = 8;
  std::uint64_t seed = 11;
  double theta = 0.6;
};

nn::NetworkSpec head_spec(int hidden, int classes);

// Mean cross-entropy of one sample and its gradient with respect to the logits.
double cross_entropy(std::span<const double> logits, std::size_t target, std::vector<double>* grad);

ClassifierHead train_head(std::span<const siamese::Embedding> embeddings,
                          std::span<const std::string> labels, const HeadHyper& hyper);

Prediction predict(const ClassifierHead& head, const siamese::Embedding& e);

}  // namespace presencia::classifier
