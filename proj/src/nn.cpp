#include "presencia/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

namespace presencia::nn {

namespace {

constexpr float kNormFloor = 1e-12f;

void shape_error(const std::string& what) { throw Error(ErrorCode::ShapeMismatch, what); }

int pooled_extent(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

Shape layer_output_shape(const LayerSpec& l, const Shape& in) {
  switch (l.kind) {
    case LayerKind::Conv2d:
    case LayerKind::MaxPool2d: {
      if (in.size() != 3) shape_error("spatial layer expects [C,H,W] input, got " + shape_string(in));
      if (l.kernel <= 0 || l.stride <= 0 || l.padding < 0) shape_error("invalid kernel/stride/padding");
      const int p = l.kind == LayerKind::Conv2d ? l.padding : 0;
      if (in[1] + 2 * p < l.kernel || in[2] + 2 * p < l.kernel) {
        shape_error("kernel larger than padded input " + shape_string(in));
      }
      const int c = l.kind == LayerKind::Conv2d ? l.out : in[0];
      if (c <= 0) shape_error("conv2d needs positive output channels");
      return {c, pooled_extent(in[1], l.kernel, l.stride, p), pooled_extent(in[2], l.kernel, l.stride, p)};
    }
    case LayerKind::Relu:
      return in;
    case LayerKind::Flatten:
      return {static_cast<int>(shape_size(in))};
    case LayerKind::Dense:
      if (in.size() != 1) shape_error("dense expects a flat input, got " + shape_string(in));
      if (l.out <= 0) shape_error("dense needs positive output features");
      return {l.out};
    case LayerKind::L2Normalize:
      if (in.size() != 1) shape_error("l2_normalize expects a flat input, got " + shape_string(in));
      return in;
  }
  shape_error("unknown layer kind");
  return {};
}

void param_shapes(const LayerSpec& l, const Shape& in, Shape& w, Shape& b) {
  if (l.kind == LayerKind::Conv2d) {
    w = {l.out, in[0], l.kernel, l.kernel};
    b = {l.out};
  } else if (l.kind == LayerKind::Dense) {
    w = {l.out, in[0]};
    b = {l.out};
  } else {
    w.clear();
    b.clear();
  }
}

void check_finite(const Tensor& t, const char* where) {
  for (float v : t.data) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, std::string("non-finite value in ") + where);
  }
}

// --- per-layer kernels -----------------------------------------------------

Tensor conv_forward(const LayerSpec& l, const LayerParams& p, const Tensor& in, const Shape& out_shape) {
  Tensor out(out_shape);
  const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
  const int O = out_shape[0], OH = out_shape[1], OW = out_shape[2];
  const int K = l.kernel, S = l.stride, P = l.padding;
  const float* x = in.data.data();
  const float* w = p.weight.data.data();
  float* y = out.data.data();
  for (int o = 0; o < O; ++o) {
    float* yo = y + static_cast<std::size_t>(o) * OH * OW;
    std::fill(yo, yo + OH * OW, p.bias.data[o]);
    for (int c = 0; c < C; ++c) {
      const float* xc = x + static_cast<std::size_t>(c) * H * W;
      const float* wk = w + (static_cast<std::size_t>(o) * C + c) * K * K;
      for (int oy = 0; oy < OH; ++oy) {
        for (int ky = 0; ky < K; ++ky) {
          const int iy = oy * S - P + ky;
          if (iy < 0 || iy >= H) continue;
          const float* row = xc + static_cast<std::size_t>(iy) * W;
          float* yrow = yo + static_cast<std::size_t>(oy) * OW;
          for (int kx = 0; kx < K; ++kx) {
            const float wv = wk[ky * K + kx];
            for (int ox = 0; ox < OW; ++ox) {
              const int ix = ox * S - P + kx;
              if (ix >= 0 && ix < W) yrow[ox] += wv * row[ix];
            }
          }
        }
      }
    }
  }
  return out;
}

void conv_backward(const LayerSpec& l, const LayerParams& p, const Tensor& in, const Tensor& g,
                   LayerParams& pg, Tensor& gin) {
  const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
  const int O = g.dim(0), OH = g.dim(1), OW = g.dim(2);
  const int K = l.kernel, S = l.stride, P = l.padding;
  const float* x = in.data.data();
  const float* w = p.weight.data.data();
  const float* gy = g.data.data();
  float* gw = pg.weight.data.data();
  float* gx = gin.data.data();
  for (int o = 0; o < O; ++o) {
    const float* go = gy + static_cast<std::size_t>(o) * OH * OW;
    float bsum = 0.0f;
    for (int i = 0; i < OH * OW; ++i) bsum += go[i];
    pg.bias.data[o] += bsum;
    for (int c = 0; c < C; ++c) {
      const float* xc = x + static_cast<std::size_t>(c) * H * W;
      float* gxc = gx + static_cast<std::size_t>(c) * H * W;
      const std::size_t wbase = (static_cast<std::size_t>(o) * C + c) * K * K;
      for (int oy = 0; oy < OH; ++oy) {
        for (int ky = 0; ky < K; ++ky) {
          const int iy = oy * S - P + ky;
          if (iy < 0 || iy >= H) continue;
          const float* row = xc + static_cast<std::size_t>(iy) * W;
          float* grow = gxc + static_cast<std::size_t>(iy) * W;
          const float* grow_out = go + static_cast<std::size_t>(oy) * OW;
          for (int kx = 0; kx < K; ++kx) {
            const float wv = w[wbase + ky * K + kx];
            float acc = 0.0f;
            for (int ox = 0; ox < OW; ++ox) {
              const int ix = ox * S - P + kx;
              if (ix >= 0 && ix < W) {
                acc += grow_out[ox] * row[ix];
                grow[ix] += grow_out[ox] * wv;
              }
            }
            gw[wbase + ky * K + kx] += acc;
          }
        }
      }
    }
  }
}

// Index of the first (row-major) maximum inside each pooling window.
std::vector<std::size_t> pool_argmax(const LayerSpec& l, const Tensor& in, const Shape& out_shape) {
  const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
  const int OH = out_shape[1], OW = out_shape[2];
  std::vector<std::size_t> idx(static_cast<std::size_t>(C) * OH * OW);
  std::size_t n = 0;
  for (int c = 0; c < C; ++c) {
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        std::size_t best = (static_cast<std::size_t>(c) * H + oy * l.stride) * W + ox * l.stride;
        for (int ky = 0; ky < l.kernel; ++ky) {
          for (int kx = 0; kx < l.kernel; ++kx) {
            const std::size_t i = (static_cast<std::size_t>(c) * H + oy * l.stride + ky) * W + ox * l.stride + kx;
            if (in.data[i] > in.data[best]) best = i;
          }
        }
        idx[n++] = best;
      }
    }
  }
  return idx;
}

Tensor run_layer(const LayerSpec& l, const LayerParams& p, const Tensor& in, const Shape& out_shape) {
  switch (l.kind) {
    case LayerKind::Conv2d:
      return conv_forward(l, p, in, out_shape);
    case LayerKind::Relu: {
      Tensor out(out_shape);
      for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = in.data[i] > 0.0f ? in.data[i] : 0.0f;
      return out;
    }
    case LayerKind::MaxPool2d: {
      Tensor out(out_shape);
      const auto idx = pool_argmax(l, in, out_shape);
      for (std::size_t i = 0; i < idx.size(); ++i) out.data[i] = in.data[idx[i]];
      return out;
    }
    case LayerKind::Flatten:
      return Tensor(out_shape, in.data);
    case LayerKind::Dense: {
      Tensor out(out_shape);
      const int O = l.out;
      const int I = in.dim(0);
      for (int o = 0; o < O; ++o) {
        const float* wr = p.weight.data.data() + static_cast<std::size_t>(o) * I;
        float acc = p.bias.data[o];
        for (int i = 0; i < I; ++i) acc += wr[i] * in.data[i];
        out.data[o] = acc;
      }
      return out;
    }
    case LayerKind::L2Normalize: {
      float sq = 0.0f;
      for (float v : in.data) sq += v * v;
      const float denom = std::max(std::sqrt(sq), kNormFloor);
      Tensor out(out_shape);
      for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = in.data[i] / denom;
      return out;
    }
  }
  return {};
}

void backward_layer(const LayerSpec& l, const LayerParams& p, const Tensor& in, const Tensor& g,
                    LayerParams& pg, Tensor& gin) {
  switch (l.kind) {
    case LayerKind::Conv2d:
      conv_backward(l, p, in, g, pg, gin);
      return;
    case LayerKind::Relu:
      for (std::size_t i = 0; i < in.size(); ++i) gin.data[i] = in.data[i] > 0.0f ? g.data[i] : 0.0f;
      return;
    case LayerKind::MaxPool2d: {
      const auto idx = pool_argmax(l, in, g.shape);
      for (std::size_t i = 0; i < idx.size(); ++i) gin.data[idx[i]] += g.data[i];
      return;
    }
    case LayerKind::Flatten:
      gin.data = g.data;
      return;
    case LayerKind::Dense: {
      const int O = l.out;
      const int I = in.dim(0);
      for (int o = 0; o < O; ++o) {
        const float go = g.data[o];
        pg.bias.data[o] += go;
        const float* wr = p.weight.data.data() + static_cast<std::size_t>(o) * I;
        float* gwr = pg.weight.data.data() + static_cast<std::size_t>(o) * I;
        for (int i = 0; i < I; ++i) {
          gwr[i] += go * in.data[i];
          gin.data[i] += go * wr[i];
        }
      }
      return;
    }
    case LayerKind::L2Normalize: {
      float sq = 0.0f;
      for (float v : in.data) sq += v * v;
      const float norm = std::sqrt(sq);
      if (norm <= kNormFloor) {
        for (std::size_t i = 0; i < in.size(); ++i) gin.data[i] = g.data[i] / kNormFloor;
        return;
      }
      // (I - y y^T) g / |x| with y = x / |x|
      float dot = 0.0f;
      for (std::size_t i = 0; i < in.size(); ++i) dot += in.data[i] / norm * g.data[i];
      for (std::size_t i = 0; i < in.size(); ++i) {
        gin.data[i] = (g.data[i] - in.data[i] / norm * dot) / norm;
      }
      return;
    }
  }
}

// --- binary helpers ----------------------------------------------------------

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::TruncatedPayload, "weight file truncated");
  }
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void put_tensor(std::vector<std::uint8_t>& out, const Tensor& t) {
  put_u8(out, static_cast<std::uint8_t>(t.shape.size()));
  for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
  for (float v : t.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
}

Tensor read_tensor(Reader& r, const Shape& expected) {
  const std::uint8_t rank = r.u8();
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<int>(r.u32());
  if (shape != expected) {
    throw Error(ErrorCode::ShapeTableMismatch,
                "weight file has " + shape_string(shape) + ", spec needs " + shape_string(expected));
  }
  Tensor t(shape);
  r.need(t.size() * 4);
  for (auto& v : t.data) v = std::bit_cast<float>(r.u32());
  return t;
}

}  // namespace

Tensor::Tensor(Shape s, float fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<float> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_size(shape)) shape_error("tensor data does not match shape " + shape_string(shape));
}

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) shape_error("shape dimensions must be positive: " + shape_string(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

std::vector<Shape> infer_shapes(const NetworkSpec& spec, const Shape& input_shape) {
  if (input_shape.empty()) shape_error("input shape is empty");
  shape_size(input_shape);
  std::vector<Shape> shapes{input_shape};
  for (const auto& l : spec) shapes.push_back(layer_output_shape(l, shapes.back()));
  return shapes;
}

Shape Network::output_shape() const { return infer_shapes(spec, input_shape).back(); }

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.weight.size() + p.bias.size();
  return n;
}

Network init_network(const NetworkSpec& spec, const Shape& input_shape, std::uint64_t seed) {
  const auto shapes = infer_shapes(spec, input_shape);
  Network net{spec, input_shape, {}, seed};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < spec.size(); ++i) {
    LayerParams p;
    Shape ws, bs;
    param_shapes(spec[i], shapes[i], ws, bs);
    if (!ws.empty()) {
      p.weight = Tensor(ws);
      p.bias = Tensor(bs);
      const std::size_t receptive = ws.size() == 4 ? static_cast<std::size_t>(ws[2]) * ws[3] : 1;
      const double fan_in = static_cast<double>(ws[1] * receptive);
      const double fan_out = static_cast<double>(ws[0] * receptive);
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& w : p.weight.data) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        w = static_cast<float>((2.0 * u - 1.0) * limit);
      }
    }
    net.params.push_back(std::move(p));
  }
  return net;
}

ForwardResult forward(const Network& net, const Tensor& input) {
  const auto shapes = infer_shapes(net.spec, net.input_shape);
  if (input.shape != net.input_shape) {
    shape_error("input " + shape_string(input.shape) + " does not match " + shape_string(net.input_shape));
  }
  check_finite(input, "network input");
  ForwardResult r;
  r.cache.inputs.reserve(net.spec.size());
  Tensor x = input;
  for (std::size_t i = 0; i < net.spec.size(); ++i) {
    Tensor y = run_layer(net.spec[i], net.params[i], x, shapes[i + 1]);
    r.cache.inputs.push_back(std::move(x));
    x = std::move(y);
  }
  check_finite(x, "network output");
  r.output = std::move(x);
  return r;
}

Tensor infer(const Network& net, const Tensor& input) {
  const auto shapes = infer_shapes(net.spec, net.input_shape);
  if (input.shape != net.input_shape) {
    shape_error("input " + shape_string(input.shape) + " does not match " + shape_string(net.input_shape));
  }
  check_finite(input, "network input");
  Tensor x = input;
  for (std::size_t i = 0; i < net.spec.size(); ++i) x = run_layer(net.spec[i], net.params[i], x, shapes[i + 1]);
  check_finite(x, "network output");
  return x;
}

Gradients zero_gradients(const Network& net) {
  Gradients g;
  g.reserve(net.params.size());
  for (const auto& p : net.params) {
    LayerParams z;
    if (!p.weight.shape.empty()) {
      z.weight = Tensor(p.weight.shape);
      z.bias = Tensor(p.bias.shape);
    }
    g.push_back(std::move(z));
  }
  return g;
}

void accumulate(Gradients& into, const Gradients& g, float scale) {
  if (into.size() != g.size()) shape_error("gradient layer count mismatch");
  for (std::size_t l = 0; l < g.size(); ++l) {
    if (into[l].weight.shape != g[l].weight.shape || into[l].bias.shape != g[l].bias.shape) {
      shape_error("gradient shape mismatch at layer " + std::to_string(l));
    }
    for (std::size_t i = 0; i < g[l].weight.size(); ++i) into[l].weight.data[i] += scale * g[l].weight.data[i];
    for (std::size_t i = 0; i < g[l].bias.size(); ++i) into[l].bias.data[i] += scale * g[l].bias.data[i];
  }
}

BackwardResult backward(const Network& net, const ForwardCache& cache, const Tensor& grad_out) {
  if (cache.inputs.size() != net.spec.size()) shape_error("cache does not match network");
  const auto shapes = infer_shapes(net.spec, net.input_shape);
  if (grad_out.shape != shapes.back()) {
    shape_error("grad_out " + shape_string(grad_out.shape) + " does not match output " +
                shape_string(shapes.back()));
  }
  BackwardResult r{zero_gradients(net), {}};
  Tensor g = grad_out;
  for (std::size_t i = net.spec.size(); i-- > 0;) {
    if (cache.inputs[i].shape != shapes[i]) shape_error("cached activation shape mismatch");
    Tensor gin(shapes[i]);
    backward_layer(net.spec[i], net.params[i], cache.inputs[i], g, r.param_grads[i], gin);
    g = std::move(gin);
  }
  r.grad_in = std::move(g);
  return r;
}

void apply_sgd(Network& net, const Gradients& grads, float lr) {
  if (grads.size() != net.params.size()) shape_error("gradient layer count mismatch");
  for (std::size_t l = 0; l < grads.size(); ++l) {
    auto& p = net.params[l];
    if (p.weight.shape != grads[l].weight.shape || p.bias.shape != grads[l].bias.shape) {
      shape_error("gradient shape mismatch at layer " + std::to_string(l));
    }
    for (std::size_t i = 0; i < p.weight.size(); ++i) p.weight.data[i] -= lr * grads[l].weight.data[i];
    for (std::size_t i = 0; i < p.bias.size(); ++i) p.bias.data[i] -= lr * grads[l].bias.data[i];
  }
}

Network sgd_step(Network net, const Gradients& grads, float lr) {
  apply_sgd(net, grads, lr);
  return net;
}

std::vector<std::uint8_t> save_weights(const Network& net) {
  std::vector<std::uint8_t> out{'P', 'R', 'S', 'N'};
  put_u16(out, 1);
  put_u16(out, static_cast<std::uint16_t>(net.spec.size()));
  for (std::size_t i = 0; i < net.spec.size(); ++i) {
    put_u8(out, static_cast<std::uint8_t>(net.spec[i].kind));
    if (net.spec[i].has_params()) {
      put_tensor(out, net.params[i].weight);
      put_tensor(out, net.params[i].bias);
    }
  }
  return out;
}

Network load_weights(std::span<const std::uint8_t> bytes, const NetworkSpec& spec,
                     const Shape& input_shape) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "PRSN", 4) != 0) {
    throw Error(ErrorCode::BadMagic, "not a PRSN weight file");
  }
  Reader r(bytes.subspan(4));
  if (r.u16() != 1) throw Error(ErrorCode::BadMagic, "unsupported PRSN version");
  const auto shapes = infer_shapes(spec, input_shape);
  if (r.u16() != spec.size()) throw Error(ErrorCode::ShapeTableMismatch, "layer count differs from spec");
  Network net{spec, input_shape, {}, 0};
  for (std::size_t i = 0; i < spec.size(); ++i) {
    if (r.u8() != static_cast<std::uint8_t>(spec[i].kind)) {
      throw Error(ErrorCode::ShapeTableMismatch, "layer kind differs from spec at layer " + std::to_string(i));
    }
    LayerParams p;
    if (spec[i].has_params()) {
      Shape ws, bs;
      param_shapes(spec[i], shapes[i], ws, bs);
      p.weight = read_tensor(r, ws);
      p.bias = read_tensor(r, bs);
      check_finite(p.weight, "loaded weights");
      check_finite(p.bias, "loaded biases");
    }
    net.params.push_back(std::move(p));
  }
  if (!r.done()) throw Error(ErrorCode::ShapeTableMismatch, "trailing bytes after last layer");
  return net;
}

}  // namespace presencia::nn
