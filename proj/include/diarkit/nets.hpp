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

// Generator, discriminator and encoder construction, latent sampling and
// embedding extraction.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "diarkit/errors.hpp"
#include "diarkit/numkit/matrix.hpp"
#include "diarkit/numkit/mlp.hpp"
#include "diarkit/rng.hpp"

namespace diarkit {

using SpeakerId = int;

struct LatentConfig {
  std::size_t d_n = 90;   // continuous part z_n
  std::size_t d_c = 0;    // categorical part z_c, one slot per training speaker
  double sigma = 0.10;    // std of z_n

  std::size_t dim() const { return d_n + d_c; }

  void validate() const {
    if (d_n == 0) throw ConfigError("latent: d_n must be positive");
    if (d_c < 2) throw ConfigError("latent: d_c must be at least 2, got " + std::to_string(d_c));
    if (!(sigma > 0.0)) throw ConfigError("latent: sigma must be positive");
  }
};

// Hidden widths. The defaults are the published architecture; smaller widths
// are for desk-scale experiments.
struct ArchConfig {
  std::size_t hidden = 512;
  std::size_t encoder_wide = 1024;  // third encoder hidden layer

  void validate() const {
    if (hidden == 0 || encoder_wide == 0) throw ConfigError("arch: widths must be positive");
  }
};

enum class Role : std::uint8_t { generator = 0, discriminator = 1, encoder = 2 };
enum class Stage : std::uint8_t { clustergan = 0, mcgan = 1 };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::generator: return "generator";
    case Role::discriminator: return "discriminator";
    case Role::encoder: return "encoder";
  }
  return "?";
}

inline const char* to_string(Stage s) { return s == Stage::clustergan ? "clustergan" : "mcgan"; }

struct Provenance {
  Stage stage = Stage::clustergan;
  std::uint64_t seed = 0;
  std::string config_digest;
  // Named training hyperparameters (loss weights etc.) echoed into the manifest.
  std::vector<std::pair<std::string, double>> hyper;
};

struct MlpCheckpoint {
  Role role = Role::encoder;
  MlpParams params;
  LatentConfig latent;
  Provenance provenance;

  void validate() const {
    params.validate();
    if (params.empty()) throw ShapeError("checkpoint has no layers");
    switch (role) {
      case Role::encoder:
        if (params.output_dim() != latent.dim())
          throw ShapeError("encoder output dim " + std::to_string(params.output_dim()) +
                           " != d_n + d_c = " + std::to_string(latent.dim()));
        break;
      case Role::generator:
        if (params.input_dim() != latent.dim())
          throw ShapeError("generator input dim " + std::to_string(params.input_dim()) +
                           " != d_n + d_c = " + std::to_string(latent.dim()));
        break;
      case Role::discriminator:
        if (params.output_dim() != 1) throw ShapeError("discriminator must have scalar output");
        break;
    }
  }
};

struct ModelSet {
  MlpCheckpoint generator;
  MlpCheckpoint discriminator;
  MlpCheckpoint encoder;
};

namespace detail {

inline Layer init_layer(std::size_t in, std::size_t out, Activation act, Rng& rng,
                        std::size_t softmax_width = 0) {
  Layer l;
  l.activation = act;
  l.softmax_width = softmax_width;
  // He-uniform for ReLU layers, Xavier-uniform for linear outputs.
  const double limit = act == Activation::relu
                           ? std::sqrt(6.0 / static_cast<double>(in))
                           : std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  l.weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = dist(rng);
  l.bias = Vector::Zero(static_cast<Eigen::Index>(out));
  return l;
}

inline MlpCheckpoint make_checkpoint(Role role, std::vector<Layer> layers, const LatentConfig& latent,
                                     std::uint64_t seed) {
  MlpCheckpoint ck;
  ck.role = role;
  ck.params = MlpParams(std::move(layers));
  ck.latent = latent;
  ck.provenance.stage = Stage::clustergan;
  ck.provenance.seed = seed;
  return ck;
}

}  // namespace detail

// G: d_n+d_c -> H -> H -> x_dim linear
// D: x_dim -> H -> H -> H -> 1 linear
// E: x_dim -> H -> H -> W -> d_n+d_c linear, softmax over the last d_c
inline ModelSet build_models(std::size_t x_dim, const LatentConfig& latent, const ArchConfig& arch,
                             std::uint64_t seed) {
  if (x_dim == 0) throw ConfigError("build_models: x_dim must be positive");
  latent.validate();
  arch.validate();
  const std::size_t H = arch.hidden;
  const std::size_t zdim = latent.dim();

  Rng g_rng(derive_seed(seed, 1));
  Rng d_rng(derive_seed(seed, 2));
  Rng e_rng(derive_seed(seed, 3));
  using detail::init_layer;

  ModelSet m;
  m.generator = detail::make_checkpoint(
      Role::generator,
      {init_layer(zdim, H, Activation::relu, g_rng), init_layer(H, H, Activation::relu, g_rng),
       init_layer(H, x_dim, Activation::linear, g_rng)},
      latent, seed);
  m.discriminator = detail::make_checkpoint(
      Role::discriminator,
      {init_layer(x_dim, H, Activation::relu, d_rng), init_layer(H, H, Activation::relu, d_rng),
       init_layer(H, H, Activation::relu, d_rng), init_layer(H, 1, Activation::linear, d_rng)},
      latent, seed);
  m.encoder = detail::make_checkpoint(
      Role::encoder,
      {init_layer(x_dim, H, Activation::relu, e_rng), init_layer(H, H, Activation::relu, e_rng),
       init_layer(H, arch.encoder_wide, Activation::relu, e_rng),
       init_layer(arch.encoder_wide, zdim, Activation::softmax_tail, e_rng, latent.d_c)},
      latent, seed);
  return m;
}

struct LatentBatch {
  Matrix z;                       // m x (d_n + d_c)
  std::vector<SpeakerId> labels;  // z_c one-hot index per row
  std::size_t d_n = 0;

  Matrix z_n() const { return z.leftCols(static_cast<Eigen::Index>(d_n)); }
  Matrix z_c() const { return z.rightCols(z.cols() - static_cast<Eigen::Index>(d_n)); }
};

// z_n ~ N(0, sigma^2 I), z_c = one-hot of the supplied speaker labels.
inline LatentBatch sample_latent(std::size_t m, const LatentConfig& latent,
                                 std::span<const SpeakerId> labels, Rng& rng) {
  if (labels.size() != m)
    throw ShapeError("sample_latent: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(m));
  LatentBatch b;
  b.d_n = latent.d_n;
  b.labels.assign(labels.begin(), labels.end());
  b.z = Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(latent.dim()));
  std::normal_distribution<double> normal(0.0, latent.sigma);
  for (std::size_t i = 0; i < m; ++i) {
    const SpeakerId y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= latent.d_c)
      throw RangeError("sample_latent: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(latent.d_c) + ")");
    const auto r = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < latent.d_n; ++j) b.z(r, static_cast<Eigen::Index>(j)) = normal(rng);
    b.z(r, static_cast<Eigen::Index>(latent.d_n) + y) = 1.0;
  }
  return b;
}

enum class EncodeMode {
  clustergan_concat,  // raw z_n part followed by softmax(z_c logits)
  mcgan_logits,       // all d_n + d_c linear outputs
};

inline const char* to_string(EncodeMode m) {
  return m == EncodeMode::clustergan_concat ? "clustergan_concat" : "mcgan_logits";
}

// Mode/stage mismatch is reported to `warn` (if given) but is not fatal.
inline EmbeddingMatrix encode(const MlpCheckpoint& encoder, const EmbeddingMatrix& x, EncodeMode mode,
                              std::ostream* warn = nullptr) {
  if (encoder.role != Role::encoder) throw ContractError("encode: checkpoint is not an encoder");
  if (static_cast<std::size_t>(x.cols()) != encoder.params.input_dim())
    throw ShapeError("encode: embeddings have " + std::to_string(x.cols()) +
                     " columns, encoder expects " + std::to_string(encoder.params.input_dim()));
  const bool mismatch = (mode == EncodeMode::clustergan_concat && encoder.provenance.stage == Stage::mcgan) ||
                        (mode == EncodeMode::mcgan_logits && encoder.provenance.stage == Stage::clustergan);
  if (mismatch && warn != nullptr)
    *warn << "warning: encoding with mode " << to_string(mode) << " on a "
          << to_string(encoder.provenance.stage) << "-stage encoder\n";
  const Tape t = mlp_forward(encoder.params, x);
  return mode == EncodeMode::clustergan_concat ? t.output() : t.logits();
}

}  // namespace diarkit
