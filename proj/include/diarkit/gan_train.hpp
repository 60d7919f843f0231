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

// ClusterGAN training: alternating critic and generator/encoder updates under
// the improved-Wasserstein objective with gradient penalty, a cosine latent
// recovery loss on z_n and a cross-entropy loss on z_c.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "diarkit/assignment.hpp"
#include "diarkit/errors.hpp"
#include "diarkit/nets.hpp"
#include "diarkit/numkit/adam.hpp"
#include "diarkit/numkit/mlp.hpp"
#include "diarkit/rng.hpp"

namespace diarkit {

struct GanTrainConfig {
  double lambda_gp = 10.0;
  std::size_t batch = 128;
  std::size_t n_critic = 5;
  std::size_t iterations = 0;  // no default endorsement; callers must set it
  AdamConfig adam{1e-4, 0.5, 0.9, 1e-8};
  double w1 = 1.0;
  double w2 = 10.0;
  double w3 = 10.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lambda_gp > 0.0)) throw ConfigError("gan: lambda_gp must be positive");
    if (batch == 0) throw ConfigError("gan: batch size must be positive");
    if (n_critic == 0) throw ConfigError("gan: n_critic must be at least 1");
    if (!(w1 > 0.0 && w2 > 0.0 && w3 > 0.0)) throw ConfigError("gan: loss weights must be positive");
    adam.validate();
  }
};

struct LabeledEmbeddings {
  EmbeddingMatrix x;
  std::vector<SpeakerId> labels;
  std::size_t num_speakers = 0;

  std::size_t size() const { return labels.size(); }

  void validate() const {
    if (static_cast<std::size_t>(x.rows()) != labels.size())
      throw ShapeError("labeled embeddings: " + std::to_string(x.rows()) + " rows but " +
                       std::to_string(labels.size()) + " labels");
    std::vector<std::size_t> count(num_speakers, 0);
    for (SpeakerId y : labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= num_speakers)
        throw RangeError("labeled embeddings: speaker id " + std::to_string(y) + " outside [0, " +
                         std::to_string(num_speakers) + ")");
      ++count[static_cast<std::size_t>(y)];
    }
    for (std::size_t k = 0; k < num_speakers; ++k)
      if (count[k] == 0) throw RangeError("labeled embeddings: speaker " + std::to_string(k) + " has no rows");
  }

  std::vector<std::vector<std::size_t>> rows_by_speaker() const {
    std::vector<std::vector<std::size_t>> out(num_speakers);
    for (std::size_t i = 0; i < labels.size(); ++i) out[static_cast<std::size_t>(labels[i])].push_back(i);
    return out;
  }
};

struct LossGrad {
  double value = 0.0;
  Matrix grad;
};

// mean_i (1 - cos(z_hat_i, z_i)); gradient w.r.t. z_hat.
inline LossGrad cosine_recovery_loss(const Matrix& z_hat, const Matrix& z) {
  require_shape(z_hat, z.rows(), z.cols(), "cosine_recovery_loss");
  const auto m = static_cast<double>(z.rows());
  LossGrad out;
  out.grad.resize(z.rows(), z.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double na = std::max(z_hat.row(i).norm(), 1e-12);
    const double nb = std::max(z.row(i).norm(), 1e-12);
    const double c = z_hat.row(i).dot(z.row(i)) / (na * nb);
    total += 1.0 - c;
    // d(1 - cos)/da = -(b / (|a||b|) - cos * a / |a|^2)
    out.grad.row(i) = -(z.row(i) / (na * nb) - c * z_hat.row(i) / (na * na)) / m;
  }
  out.value = total / m;
  return out;
}

// Mean negative log-likelihood of the true class; gradient w.r.t. the
// pre-softmax logits, (probs - onehot) / m.
inline LossGrad cluster_ce_loss(const Matrix& probs, const Matrix& onehot) {
  require_shape(probs, onehot.rows(), onehot.cols(), "cluster_ce_loss");
  const auto m = static_cast<double>(probs.rows());
  LossGrad out;
  double total = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index y = 0;
    onehot.row(i).maxCoeff(&y);
    total -= std::log(std::max(probs(i, y), 1e-300));
  }
  out.value = total / m;
  out.grad = (probs - onehot) / m;
  return out;
}

struct PenaltyEval {
  double penalty = 0.0;
  MlpGradients grads;
  Matrix x_hat;
};

// Gradient penalty at x_hat_i = eps_i x_real_i + (1 - eps_i) x_fake_i.
inline PenaltyEval gradient_penalty_at(const MlpParams& D, const Matrix& x_real, const Matrix& x_fake,
                                       std::span<const double> eps) {
  require_shape(x_fake, x_real.rows(), x_real.cols(), "gradient_penalty fake batch");
  if (eps.size() != static_cast<std::size_t>(x_real.rows()))
    throw ShapeError("gradient_penalty: one interpolation weight per row required");
  PenaltyEval out;
  out.x_hat.resize(x_real.rows(), x_real.cols());
  for (Eigen::Index i = 0; i < x_real.rows(); ++i) {
    const double e = eps[static_cast<std::size_t>(i)];
    out.x_hat.row(i) = e * x_real.row(i) + (1.0 - e) * x_fake.row(i);
  }
  GradientPenalty gp = gp_param_gradient(D, out.x_hat);
  out.penalty = gp.penalty;
  out.grads = std::move(gp.grads);
  return out;
}

inline PenaltyEval gradient_penalty(const MlpParams& D, const Matrix& x_real, const Matrix& x_fake, Rng& rng) {
  std::vector<double> eps(static_cast<std::size_t>(x_real.rows()));
  for (double& e : eps) e = uniform01(rng);
  return gradient_penalty_at(D, x_real, x_fake, eps);
}

struct CriticDiagnostics {
  double wasserstein = 0.0;  // mean D(x) - mean D(G(z))
  double gp = 0.0;
  double loss = 0.0;         // the minimized quantity w1 (-wasserstein + lambda gp)
};

struct CriticObjective {
  CriticDiagnostics diag;
  MlpGradients grads;
};

// Critic loss and its D-parameter gradient for fixed interpolation weights.
inline CriticObjective critic_objective(const MlpParams& D, const Matrix& x_real, const Matrix& x_fake,
                                        std::span<const double> eps, const GanTrainConfig& cfg) {
  require_shape(x_fake, x_real.rows(), x_real.cols(), "critic fake batch");
  const Eigen::Index m = x_real.rows();
  Matrix both(2 * m, x_real.cols());
  both.topRows(m) = x_real;
  both.bottomRows(m) = x_fake;
  const Tape t = mlp_forward(D, both);
  const double d_real = t.output().topRows(m).mean();
  const double d_fake = t.output().bottomRows(m).mean();

  Matrix upstream(2 * m, 1);
  upstream.topRows(m).setConstant(-cfg.w1 / static_cast<double>(m));
  upstream.bottomRows(m).setConstant(cfg.w1 / static_cast<double>(m));
  CriticObjective out;
  out.grads = mlp_backward(t, upstream).params;

  PenaltyEval gp = gradient_penalty_at(D, x_real, x_fake, eps);
  gp.grads *= cfg.w1 * cfg.lambda_gp;
  out.grads += gp.grads;

  out.diag.wasserstein = d_real - d_fake;
  out.diag.gp = gp.penalty;
  out.diag.loss = cfg.w1 * (-out.diag.wasserstein + cfg.lambda_gp * gp.penalty);
  return out;
}

// One critic update. G is read only.
inline CriticDiagnostics critic_step(MlpParams& D, AdamState& adam_d, const MlpParams& G, const Matrix& x_real,
                                     const LatentBatch& z, const GanTrainConfig& cfg, Rng& rng,
                                     std::size_t iteration = 0) {
  if (static_cast<std::size_t>(x_real.rows()) != cfg.batch || static_cast<std::size_t>(z.z.rows()) != cfg.batch)
    throw ShapeError("critic_step: batch size must equal configured m = " + std::to_string(cfg.batch));
  const Matrix x_fake = mlp_forward(G, z.z).output();
  std::vector<double> eps(cfg.batch);
  for (double& e : eps) e = uniform01(rng);
  CriticObjective obj = critic_objective(D, x_real, x_fake, eps, cfg);
  if (!std::isfinite(obj.diag.loss))
    throw DivergenceError("critic step at iteration " + std::to_string(iteration) + ": non-finite loss");
  try {
    adam_step(adam_d, D, obj.grads);
  } catch (const DivergenceError& e) {
    throw DivergenceError("critic step at iteration " + std::to_string(iteration) + ": " + e.what());
  }
  return obj.diag;
}

struct GenEncDiagnostics {
  double adv = 0.0;  // -mean D(G(z))
  double cos = 0.0;
  double ce = 0.0;
  double total = 0.0;  // w1 adv + w2 cos + w3 ce
};

struct GenEncObjective {
  GenEncDiagnostics diag;
  MlpGradients grad_g;
  MlpGradients grad_e;
};

// Generator/encoder loss -w1 D(G(z)) + w2 COS + w3 CE and its gradients.
inline GenEncObjective gen_enc_objective(const MlpParams& G, const MlpParams& E, const MlpParams& D,
                                         const LatentBatch& z, const GanTrainConfig& cfg) {
  const Eigen::Index m = z.z.rows();
  const auto d_n = static_cast<Eigen::Index>(z.d_n);
  const Eigen::Index d_c = z.z.cols() - d_n;
  if (static_cast<std::size_t>(E.output_dim()) != static_cast<std::size_t>(z.z.cols()))
    throw ShapeError("gen_enc_objective: encoder output dim does not match latent dim");

  const Tape tg = mlp_forward(G, z.z);
  const Matrix& x_fake = tg.output();

  const Tape td = mlp_forward(D, x_fake);
  GenEncObjective out;
  out.diag.adv = -td.output().mean();
  Matrix dx = mlp_backward(td, Matrix::Constant(m, 1, -cfg.w1 / static_cast<double>(m)), GradAt::output, false).input;

  const Tape te = mlp_forward(E, x_fake);
  const Matrix z_hat_n = te.output().leftCols(d_n);
  const Matrix probs = te.output().rightCols(d_c);
  const LossGrad cos = cosine_recovery_loss(z_hat_n, z.z_n());
  const LossGrad ce = cluster_ce_loss(probs, z.z_c());
  out.diag.cos = cos.value;
  out.diag.ce = ce.value;
  out.diag.total = cfg.w1 * out.diag.adv + cfg.w2 * cos.value + cfg.w3 * ce.value;

  Matrix up_e(m, z.z.cols());
  up_e.leftCols(d_n) = cfg.w2 * cos.grad;
  up_e.rightCols(d_c) = cfg.w3 * ce.grad;
  Backprop be = mlp_backward(te, up_e, GradAt::final_logits);
  dx += be.input;
  out.grad_e = std::move(be.params);
  out.grad_g = mlp_backward(tg, dx).params;
  return out;
}

// One joint generator/encoder update. D is read only.
inline GenEncDiagnostics gen_enc_step(MlpParams& G, AdamState& adam_g, MlpParams& E, AdamState& adam_e,
                                      const MlpParams& D, const LatentBatch& z, const GanTrainConfig& cfg,
                                      std::size_t iteration = 0) {
  GenEncObjective obj = gen_enc_objective(G, E, D, z, cfg);
  if (!std::isfinite(obj.diag.total))
    throw DivergenceError("generator/encoder step at iteration " + std::to_string(iteration) +
                          ": non-finite loss");
  try {
    adam_step(adam_g, G, obj.grad_g);
    adam_step(adam_e, E, obj.grad_e);
  } catch (const DivergenceError& e) {
    throw DivergenceError("generator/encoder step at iteration " + std::to_string(iteration) + ": " + e.what());
  }
  return obj.diag;
}

struct GanLogRow {
  std::size_t iteration = 0;
  double wasserstein = 0.0;  // averaged over the critic steps of the iteration
  double gp = 0.0;
  double adv = 0.0;
  double cos = 0.0;
  double ce = 0.0;
};

inline void write_gan_log_csv(std::ostream& os, const std::vector<GanLogRow>& rows) {
  os << "iter,wasserstein,gp,adv,cos,ce\n";
  char buf[256];
  for (const GanLogRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.iteration, r.wasserstein, r.gp,
                  r.adv, r.cos, r.ce);
    os << buf;
  }
}

struct GanTrainResult {
  ModelSet models;
  std::vector<GanLogRow> log;
  std::optional<std::string> aborted;  // set when training diverged; models are the last good ones
};

// Runs cfg.iterations outer iterations of n_critic critic updates followed
// by one generator/encoder update. Real batches and their labels are drawn
// uniformly with replacement.
inline GanTrainResult train_clustergan(const LabeledEmbeddings& data, ModelSet models, const GanTrainConfig& cfg,
                                       std::ostream* progress = nullptr) {
  cfg.validate();
  data.validate();
  const LatentConfig& latent = models.generator.latent;
  if (data.num_speakers != latent.d_c)
    throw ConfigError("train_clustergan: data has " + std::to_string(data.num_speakers) +
                      " speakers but latent d_c = " + std::to_string(latent.d_c));
  if (static_cast<std::size_t>(data.x.cols()) != models.discriminator.params.input_dim())
    throw ShapeError("train_clustergan: embedding dim does not match the discriminator input");

  MlpParams& G = models.generator.params;
  MlpParams& D = models.discriminator.params;
  MlpParams& E = models.encoder.params;
  AdamState adam_g = AdamState::for_params(G, cfg.adam);
  AdamState adam_d = AdamState::for_params(D, cfg.adam);
  AdamState adam_e = AdamState::for_params(E, cfg.adam);
  Rng rng(derive_seed(cfg.seed, 0x6a17));

  const std::size_t m = cfg.batch;
  std::vector<std::size_t> idx(m);
  std::vector<SpeakerId> labels(m);
  auto draw_real = [&](Matrix& x) {
    for (std::size_t i = 0; i < m; ++i) {
      idx[i] = uniform_index(rng, data.size());
      labels[i] = data.labels[idx[i]];
    }
    x = gather_rows(data.x, idx);
  };

  GanTrainResult result;
  result.log.reserve(cfg.iterations);
  ModelSet last_good = models;
  Matrix x_real;
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    GanLogRow row;
    row.iteration = it;
    try {
      for (std::size_t c = 0; c < cfg.n_critic; ++c) {
        draw_real(x_real);
        const LatentBatch z = sample_latent(m, latent, labels, rng);
        const CriticDiagnostics cd = critic_step(D, adam_d, G, x_real, z, cfg, rng, it);
        row.wasserstein += cd.wasserstein / static_cast<double>(cfg.n_critic);
        row.gp += cd.gp / static_cast<double>(cfg.n_critic);
      }
      for (std::size_t i = 0; i < m; ++i) labels[i] = data.labels[uniform_index(rng, data.size())];
      const LatentBatch z = sample_latent(m, latent, labels, rng);
      const GenEncDiagnostics gd = gen_enc_step(G, adam_g, E, adam_e, D, z, cfg, it);
      row.adv = gd.adv;
      row.cos = gd.cos;
      row.ce = gd.ce;
    } catch (const DivergenceError& e) {
      result.models = std::move(last_good);
      result.aborted = e.what();
      return result;
    }
    result.log.push_back(row);
    if (progress != nullptr && (it % 100 == 0 || it == cfg.iterations)) {
      *progress << "iter " << it << " W=" << row.wasserstein << " gp=" << row.gp << " adv=" << row.adv
                << " cos=" << row.cos << " ce=" << row.ce << "\n";
    }
    last_good = models;
  }
  result.models = std::move(models);
  return result;
}

// Top-1 accuracy of argmax(z_c_hat) on `eval`, after mapping latent
// categories to speakers by the maximum-agreement one-to-one assignment
// estimated on `fit`. The critic never sees labels, so categories are only
// identified up to a permutation.
inline double latent_category_accuracy(const MlpCheckpoint& encoder, const LabeledEmbeddings& fit,
                                       const LabeledEmbeddings& eval) {
  const std::size_t d_c = encoder.latent.d_c;
  auto predict = [&](const Matrix& x) {
    const Matrix out = mlp_forward(encoder.params, x).output();
    std::vector<int> pred(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      Eigen::Index k = 0;
      out.row(i).tail(static_cast<Eigen::Index>(d_c)).maxCoeff(&k);
      pred[static_cast<std::size_t>(i)] = static_cast<int>(k);
    }
    return pred;
  };
  const std::vector<int> fit_pred = predict(fit.x);
  Matrix agree = Matrix::Zero(static_cast<Eigen::Index>(d_c), static_cast<Eigen::Index>(fit.num_speakers));
  for (std::size_t i = 0; i < fit_pred.size(); ++i) agree(fit_pred[i], fit.labels[i]) += 1.0;
  const std::vector<int> cat_to_spk = max_weight_assignment(agree);

  const std::vector<int> eval_pred = predict(eval.x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < eval_pred.size(); ++i)
    if (cat_to_spk[static_cast<std::size_t>(eval_pred[i])] == eval.labels[i]) ++correct;
  return eval_pred.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(eval_pred.size());
}

}  // namespace diarkit
