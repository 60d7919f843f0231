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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>

#include "diarkit/errors.hpp"
#include "diarkit/numkit/mlp.hpp"

namespace diarkit {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("adam: beta1 must be in (0, 1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("adam: beta2 must be in (0, 1)");
    if (!(eps > 0.0)) throw ConfigError("adam: eps must be positive");
  }
};

struct AdamState {
  std::uint64_t step = 0;
  MlpGradients m;
  MlpGradients v;
  AdamConfig config;

  static AdamState for_params(const MlpParams& p, const AdamConfig& cfg) {
    cfg.validate();
    AdamState s;
    s.m = MlpGradients::zeros_like(p);
    s.v = MlpGradients::zeros_like(p);
    s.config = cfg;
    return s;
  }
};

// Bias-corrected Adam: theta -= lr * m_hat / (sqrt(v_hat) + eps).
// Layers below first_trainable are left bitwise untouched (moments included).
inline void adam_step(AdamState& state, MlpParams& params, const MlpGradients& grads,
                      std::size_t first_trainable = 0) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw ShapeError("adam_step: layer counts disagree");
  for (std::size_t l = first_trainable; l < params.size(); ++l) {
    const Layer& layer = params.layer(l);
    if (grads.weight[l].rows() != layer.weight.rows() || grads.weight[l].cols() != layer.weight.cols() ||
        grads.bias[l].size() != layer.bias.size())
      throw ShapeError("adam_step: gradient shape mismatch at layer " + std::to_string(l));
    if (!grads.weight[l].allFinite() || !grads.bias[l].allFinite())
      throw DivergenceError("adam_step: non-finite gradient in layer " + std::to_string(l));
  }

  ++state.step;
  const AdamConfig& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);

  auto update = [&](auto& theta, auto& m, auto& v, const auto& g) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    theta.array() -= c.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
  };
  for (std::size_t l = first_trainable; l < params.size(); ++l) {
    Layer& layer = params.mutable_layer(l);
    update(layer.weight, state.m.weight[l], state.v.weight[l], grads.weight[l]);
    update(layer.bias, state.m.bias[l], state.v.bias[l], grads.bias[l]);
  }
  params.touch();
}

}  // namespace diarkit
