#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "presencia/error.hpp"

namespace presencia::nn {

using Shape = std::vector<int>;

// Dense row-major float tensor.
struct Tensor {
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(Shape s, float fill = 0.0f);
  Tensor(Shape s, std::vector<float> values);

  std::size_t size() const { return data.size(); }
  int dim(std::size_t i) const { return shape[i]; }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::size_t shape_size(const Shape& s);
std::string shape_string(const Shape& s);

enum class LayerKind : std::uint8_t {
  Conv2d = 1,
  Relu = 2,
  MaxPool2d = 3,
  Flatten = 4,
  Dense = 5,
  L2Normalize = 6,
};

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  int out = 0;      // conv output channels / dense output features
  int kernel = 0;   // conv kernel or pool window
  int stride = 1;
  int padding = 0;

  static LayerSpec conv2d(int out_channels, int kernel, int stride = 1, int padding = 0) {
    return {LayerKind::Conv2d, out_channels, kernel, stride, padding};
  }
  static LayerSpec relu() { return {LayerKind::Relu}; }
  static LayerSpec maxpool2d(int window, int stride) {
    return {LayerKind::MaxPool2d, 0, window, stride, 0};
  }
  static LayerSpec flatten() { return {LayerKind::Flatten}; }
  static LayerSpec dense(int out_features) { return {LayerKind::Dense, out_features}; }
  static LayerSpec l2_normalize() { return {LayerKind::L2Normalize}; }

  bool has_params() const { return kind == LayerKind::Conv2d || kind == LayerKind::Dense; }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

using NetworkSpec = std::vector<LayerSpec>;

// Weight and bias of one layer; both empty for parameter-free layers.
struct LayerParams {
  Tensor weight;
  Tensor bias;
  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct Network {
  NetworkSpec spec;
  Shape input_shape;
  std::vector<LayerParams> params;  // one entry per layer
  std::uint64_t seed = 0;

  Shape output_shape() const;
  std::size_t parameter_count() const;
  friend bool operator==(const Network&, const Network&) = default;
};

// Activation shapes: element 0 is the input, element i+1 the output of layer i.
std::vector<Shape> infer_shapes(const NetworkSpec& spec, const Shape& input_shape);

Network init_network(const NetworkSpec& spec, const Shape& input_shape, std::uint64_t seed);

struct ForwardCache {
  std::vector<Tensor> inputs;  // input to each layer
};

struct ForwardResult {
  Tensor output;
  ForwardCache cache;
};

ForwardResult forward(const Network& net, const Tensor& input);
// Output only; skips retaining activations.
Tensor infer(const Network& net, const Tensor& input);

using Gradients = std::vector<LayerParams>;

Gradients zero_gradients(const Network& net);
void accumulate(Gradients& into, const Gradients& g, float scale = 1.0f);

struct BackwardResult {
  Gradients param_grads;
  Tensor grad_in;
};

BackwardResult backward(const Network& net, const ForwardCache& cache, const Tensor& grad_out);

// p <- p - lr * g for every parameter.
void apply_sgd(Network& net, const Gradients& grads, float lr);
Network sgd_step(Network net, const Gradients& grads, float lr);

// Binary layout: "PRSN", u16 version, u16 layer count, then per layer a kind
// byte followed (conv/dense only) by weight and bias tensors, each as u8
// rank, u32 dims and f32 values. All integers and floats little-endian.
std::vector<std::uint8_t> save_weights(const Network& net);
Network load_weights(std::span<const std::uint8_t> bytes, const NetworkSpec& spec,
                     const Shape& input_shape);

}  // namespace presencia::nn
