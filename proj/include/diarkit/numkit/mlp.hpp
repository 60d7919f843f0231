// Copyright 2026  The diarkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Fully-connected networks with exact reverse-mode gradients.
//
// A network is a chain of affine layers z = a W^T + b followed by an
// elementwise activation. Besides the usual parameter/input gradients this
// header provides the parameter gradient of the gradient-penalty term
// mean_r (||d D(x_r)/dx_r|| - 1)^2 for scalar-output ReLU critics. It is
// obtained by differentiating the masked weight product
//   dD/dx = w_L^T M_{L-1} W_{L-1} ... M_1 W_1
// with the ReLU masks M_l held fixed, which is exact almost everywhere.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "diarkit/errors.hpp"
#include "diarkit/numkit/matrix.hpp"

namespace diarkit {

enum class Activation : std::uint8_t { linear = 0, relu = 1, softmax_tail = 2 };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::softmax_tail: return "softmax_tail";
  }
  return "?";
}

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::linear;
  // softmax_tail only: number of trailing outputs that are softmax-normalized.
  std::size_t softmax_width = 0;

  std::size_t in_dim() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weight.rows()); }
};

// Ordered layer list. Every mutation through this interface bumps a
// generation counter, which lets a Tape detect that its weights went stale.
class MlpParams {
 public:
  MlpParams() = default;
  explicit MlpParams(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

  MlpParams(const MlpParams& other) : layers_(other.layers_) {}
  MlpParams(MlpParams&& other) noexcept : layers_(std::move(other.layers_)) { ++other.generation_; }
  MlpParams& operator=(const MlpParams& other) {
    layers_ = other.layers_;
    ++generation_;
    return *this;
  }
  MlpParams& operator=(MlpParams&& other) noexcept {
    layers_ = std::move(other.layers_);
    ++generation_;
    ++other.generation_;
    return *this;
  }

  const std::vector<Layer>& layers() const { return layers_; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  Layer& mutable_layer(std::size_t i) {
    ++generation_;
    return layers_.at(i);
  }
  void touch() { ++generation_; }

  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  std::size_t input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
  std::size_t output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }
  std::uint64_t generation() const { return generation_; }

  void validate() const {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& layer = layers_[l];
      if (layer.weight.rows() == 0 || layer.weight.cols() == 0)
        throw ShapeError("layer " + std::to_string(l) + ": empty weight matrix");
      if (layer.bias.size() != layer.weight.rows())
        throw ShapeError("layer " + std::to_string(l) + ": bias length " +
                         std::to_string(layer.bias.size()) + " != out dim " +
                         std::to_string(layer.weight.rows()));
      if (l > 0 && layer.in_dim() != layers_[l - 1].out_dim())
        throw ShapeError("layer " + std::to_string(l) + ": input dim " +
                         std::to_string(layer.in_dim()) + " does not chain with output dim " +
                         std::to_string(layers_[l - 1].out_dim()));
      if (layer.activation == Activation::softmax_tail) {
        if (l + 1 != layers_.size())
          throw ShapeError("softmax tail is only allowed on the final layer");
        if (layer.softmax_width == 0 || layer.softmax_width > layer.out_dim())
          throw ShapeError("softmax tail width must be in [1, out dim]");
      } else if (layer.softmax_width != 0) {
        throw ShapeError("layer " + std::to_string(l) + ": softmax width set on non-softmax layer");
      }
    }
  }

 private:
  std::vector<Layer> layers_;
  std::uint64_t generation_ = 0;
};

// Gradients shaped like an MlpParams.
struct MlpGradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;

  static MlpGradients zeros_like(const MlpParams& p) {
    MlpGradients g;
    g.weight.reserve(p.size());
    g.bias.reserve(p.size());
    for (const Layer& l : p.layers()) {
      g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      g.bias.push_back(Vector::Zero(l.bias.size()));
    }
    return g;
  }

  std::size_t size() const { return weight.size(); }

  MlpGradients& operator+=(const MlpGradients& o) {
    if (o.size() != size()) throw ShapeError("gradient layer counts differ");
    for (std::size_t l = 0; l < size(); ++l) {
      weight[l] += o.weight[l];
      bias[l] += o.bias[l];
    }
    return *this;
  }

  MlpGradients& operator*=(double s) {
    for (std::size_t l = 0; l < size(); ++l) {
      weight[l] *= s;
      bias[l] *= s;
    }
    return *this;
  }

  double max_abs() const {
    double m = 0.0;
    for (std::size_t l = 0; l < size(); ++l) {
      if (weight[l].size()) m = std::max(m, weight[l].cwiseAbs().maxCoeff());
      if (bias[l].size()) m = std::max(m, bias[l].cwiseAbs().maxCoeff());
    }
    return m;
  }
};

// Activation record of one forward pass. Holds a pointer to the parameters it
// was recorded with; it must not outlive them.
class Tape {
 public:
  const Matrix& input() const { return input_; }
  const Matrix& output() const { return post_.back(); }
  // Pre-activation of the final layer (raw logits for a softmax tail).
  const Matrix& logits() const { return pre_.back(); }
  const std::vector<Matrix>& pre_activations() const { return pre_; }
  const std::vector<Matrix>& activations() const { return post_; }
  const MlpParams& params() const { return *params_; }

  bool stale() const { return params_ == nullptr || params_->generation() != generation_; }

 private:
  friend Tape mlp_forward(const MlpParams& params, const Matrix& x);

  const MlpParams* params_ = nullptr;
  std::uint64_t generation_ = 0;
  Matrix input_;
  std::vector<Matrix> pre_;
  std::vector<Matrix> post_;
};

namespace detail {

inline void softmax_tail_inplace(Matrix& z, std::size_t width) {
  const Eigen::Index start = z.cols() - static_cast<Eigen::Index>(width);
  const Eigen::Index w = static_cast<Eigen::Index>(width);
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    auto tail = z.row(r).segment(start, w);
    const double mx = tail.maxCoeff();
    tail = (tail.array() - mx).exp().matrix();
    tail /= tail.sum();
  }
}

// Gradient through the softmax tail: for the tail slice dz = p * (g - <g, p>).
inline Matrix softmax_tail_backward(const Matrix& grad_out, const Matrix& out, std::size_t width) {
  Matrix dz = grad_out;
  const Eigen::Index start = out.cols() - static_cast<Eigen::Index>(width);
  const Eigen::Index w = static_cast<Eigen::Index>(width);
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    auto p = out.row(r).segment(start, w);
    auto g = grad_out.row(r).segment(start, w);
    const double gp = g.dot(p);
    dz.row(r).segment(start, w) = (p.array() * (g.array() - gp)).matrix();
  }
  return dz;
}

}  // namespace detail

inline Tape mlp_forward(const MlpParams& params, const Matrix& x) {
  if (params.empty()) throw ShapeError("mlp_forward: network has no layers");
  if (static_cast<std::size_t>(x.cols()) != params.input_dim())
    throw ShapeError("mlp_forward: input has " + std::to_string(x.cols()) +
                     " columns, network expects " + std::to_string(params.input_dim()));
  Tape t;
  t.params_ = &params;
  t.generation_ = params.generation();
  t.input_ = x;
  t.pre_.reserve(params.size());
  t.post_.reserve(params.size());
  const Matrix* a = &t.input_;
  for (const Layer& layer : params.layers()) {
    Matrix z(a->rows(), layer.weight.rows());
    z.noalias() = *a * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    t.pre_.push_back(std::move(z));
    Matrix out = t.pre_.back();
    switch (layer.activation) {
      case Activation::linear: break;
      case Activation::relu: out = out.cwiseMax(0.0); break;
      case Activation::softmax_tail: detail::softmax_tail_inplace(out, layer.softmax_width); break;
    }
    t.post_.push_back(std::move(out));
    a = &t.post_.back();
  }
  return t;
}

// Where the upstream gradient handed to mlp_backward is taken.
enum class GradAt {
  output,        // w.r.t. the network output (after the final activation)
  final_logits,  // w.r.t. the final layer's pre-activation
};

struct Backprop {
  MlpGradients params;  // empty when parameter gradients were not requested
  Matrix input;         // gradient w.r.t. the network input
};

inline Backprop mlp_backward(const Tape& tape, const Matrix& upstream, GradAt at = GradAt::output,
                             bool want_param_grads = true) {
  if (tape.stale())
    throw ContractError("mlp_backward: parameters were mutated after the forward pass");
  const MlpParams& params = tape.params();
  require_shape(upstream, tape.output().rows(), tape.output().cols(), "mlp_backward upstream");

  Backprop out;
  if (want_param_grads) {
    out.params.weight.resize(params.size());
    out.params.bias.resize(params.size());
  }
  Matrix delta = upstream;
  for (std::size_t li = params.size(); li-- > 0;) {
    const Layer& layer = params.layer(li);
    const bool last = li + 1 == params.size();
    switch (layer.activation) {
      case Activation::linear: break;
      case Activation::relu:
        delta.array() *= (tape.pre_activations()[li].array() > 0.0).cast<double>();
        break;
      case Activation::softmax_tail:
        if (!(last && at == GradAt::final_logits))
          delta = detail::softmax_tail_backward(delta, tape.activations()[li], layer.softmax_width);
        break;
    }
    const Matrix& a_prev = li == 0 ? tape.input() : tape.activations()[li - 1];
    if (want_param_grads) {
      out.params.weight[li].noalias() = delta.transpose() * a_prev;
      out.params.bias[li] = delta.colwise().sum().transpose();
    }
    Matrix next(delta.rows(), layer.weight.cols());
    next.noalias() = delta * layer.weight;
    delta = std::move(next);
  }
  out.input = std::move(delta);
  return out;
}

// dD/dx per row for a scalar-output network.
inline Matrix input_gradient(const MlpParams& params, const Matrix& x) {
  if (params.output_dim() != 1)
    throw ShapeError("input_gradient: network output dim is " +
                     std::to_string(params.output_dim()) + ", expected 1");
  const Tape t = mlp_forward(params, x);
  return mlp_backward(t, Matrix::Ones(x.rows(), 1), GradAt::output, false).input;
}

struct GradientPenalty {
  double penalty = 0.0;     // mean over rows of (||dD/dx|| - 1)^2
  MlpGradients grads;       // d penalty / d params, masks frozen
  Matrix input_grad;        // dD/dx per row
  Vector grad_norms;        // sqrt(||dD/dx||^2 + 1e-12) per row
};

inline GradientPenalty gp_param_gradient(const MlpParams& params, const Matrix& x_hat) {
  if (params.output_dim() != 1)
    throw ShapeError("gp_param_gradient: network output dim is " +
                     std::to_string(params.output_dim()) + ", expected 1");
  for (const Layer& l : params.layers())
    if (l.activation == Activation::softmax_tail)
      throw ShapeError("gp_param_gradient: softmax layers are not supported");
  if (params.layers().back().activation != Activation::linear)
    throw ShapeError("gp_param_gradient: final layer must be linear");

  const Tape t = mlp_forward(params, x_hat);
  const std::size_t L = params.size();
  const Eigen::Index B = x_hat.rows();

  // masks[l] is 1 where layer l's activation passes gradient.
  std::vector<Matrix> masks(L);
  for (std::size_t l = 0; l + 1 < L; ++l) {
    const Layer& layer = params.layer(l);
    if (layer.activation == Activation::relu)
      masks[l] = (t.pre_activations()[l].array() > 0.0).cast<double>().matrix();
    else
      masks[l] = Matrix::Ones(B, static_cast<Eigen::Index>(layer.out_dim()));
  }

  // Forward sweep of the input-gradient chain, keeping S_l = dD/dz_l.
  std::vector<Matrix> S(L);
  S[L - 1] = Matrix::Ones(B, 1);
  for (std::size_t l = L - 1; l-- > 0;) {
    Matrix g_in(B, params.layer(l + 1).weight.cols());
    g_in.noalias() = S[l + 1] * params.layer(l + 1).weight;
    S[l] = masks[l].cwiseProduct(g_in);
  }
  GradientPenalty gp;
  gp.input_grad.resize(B, x_hat.cols());
  gp.input_grad.noalias() = S[0] * params.layer(0).weight;

  gp.grad_norms.resize(B);
  Matrix adj(B, x_hat.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < B; ++r) {
    const double n = std::sqrt(gp.input_grad.row(r).squaredNorm() + 1e-12);
    gp.grad_norms[r] = n;
    total += (n - 1.0) * (n - 1.0);
    adj.row(r) = (2.0 / static_cast<double>(B)) * (n - 1.0) / n * gp.input_grad.row(r);
  }
  gp.penalty = total / static_cast<double>(B);

  // Reverse sweep: adj holds the adjoint of G_l = S_l W_l.
  gp.grads = MlpGradients::zeros_like(params);
  for (std::size_t l = 0; l < L; ++l) {
    const Matrix& W = params.layer(l).weight;
    gp.grads.weight[l].noalias() = S[l].transpose() * adj;
    if (l + 1 == L) break;
    Matrix s_adj(B, W.rows());
    s_adj.noalias() = adj * W.transpose();
    adj = masks[l].cwiseProduct(s_adj);
  }
  return gp;
}

}  // namespace diarkit
