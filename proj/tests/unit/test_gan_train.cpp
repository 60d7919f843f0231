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

#include <cmath>
#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include "diarkit/gan_train.hpp"
#include "support/oracles.hpp"

namespace diarkit {
namespace {

using testing::fd_param_grad;
using testing::max_rel_err;
using testing::random_matrix;

bool same_params(const MlpParams& a, const MlpParams& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t l = 0; l < a.size(); ++l)
    if (a.layer(l).weight != b.layer(l).weight || a.layer(l).bias != b.layer(l).bias) return false;
  return true;
}

// d_n = 3, d_c = 3, x_dim = 4: a 6-dim latent with small hidden layers.
ModelSet tiny_models(std::uint64_t seed) {
  LatentConfig lc;
  lc.d_n = 3;
  lc.d_c = 3;
  ModelSet m = build_models(4, lc, ArchConfig{5, 7}, seed);
  Rng rng(derive_seed(seed, 99));
  for (MlpCheckpoint* ck : {&m.generator, &m.discriminator, &m.encoder})
    for (std::size_t l = 0; l < ck->params.size(); ++l)
      ck->params.mutable_layer(l).bias = random_matrix(ck->params.layer(l).bias.size(), 1, rng, 0.3);
  return m;
}

LatentBatch tiny_latent(std::size_t m, Rng& rng) {
  LatentConfig lc;
  lc.d_n = 3;
  lc.d_c = 3;
  lc.sigma = 0.5;
  std::vector<SpeakerId> labels(m);
  for (auto& y : labels) y = static_cast<SpeakerId>(uniform_index(rng, 3));
  return sample_latent(m, lc, labels, rng);
}

TEST(CosineRecoveryLoss, Examples) {
  Rng rng(1);
  const Matrix z = random_matrix(5, 4, rng);
  EXPECT_NEAR(cosine_recovery_loss(z, z).value, 0.0, 1e-15);
  EXPECT_NEAR(cosine_recovery_loss(-z, z).value, 2.0, 1e-15);
  Matrix a(2, 2), b(2, 2);
  a << 1, 0, 0, 1;
  b << 2, 0, 3, 0;
  EXPECT_NEAR(cosine_recovery_loss(a, b).value, 0.5, 1e-15);
}

TEST(CosineRecoveryLoss, ZeroRowIsFinite) {
  Matrix a = Matrix::Zero(1, 3), b = Matrix::Ones(1, 3);
  const LossGrad lg = cosine_recovery_loss(a, b);
  EXPECT_TRUE(std::isfinite(lg.value));
  EXPECT_TRUE(lg.grad.allFinite());
}

TEST(CosineRecoveryLoss, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_matrix(6, 5, rng), b = random_matrix(6, 5, rng);
    const Matrix g = cosine_recovery_loss(a, b).grad;
    const Matrix fd = testing::fd_input_grad(a, [&](const Matrix& x) { return cosine_recovery_loss(x, b).value; });
    EXPECT_LT(max_rel_err(g, fd), 1e-6);
  }
}

TEST(ClusterCeLoss, Examples) {
  Matrix onehot(2, 3);
  onehot << 1, 0, 0, 0, 0, 1;
  EXPECT_EQ(cluster_ce_loss(onehot, onehot).value, 0.0);
  Matrix uni = Matrix::Constant(2, 4, 0.25), oh4 = Matrix::Zero(2, 4);
  oh4(0, 1) = oh4(1, 3) = 1.0;
  EXPECT_NEAR(cluster_ce_loss(uni, oh4).value, std::log(4.0), 1e-12);
  Matrix p(1, 3), y(1, 3);
  p << 0.7, 0.2, 0.1;
  y << 1, 0, 0;
  EXPECT_NEAR(cluster_ce_loss(p, y).value, 0.3567, 1e-4);
  Matrix g(1, 3);
  g << -0.3, 0.2, 0.1;
  EXPECT_LT((cluster_ce_loss(p, y).grad - g).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ClusterCeLoss, TinyProbabilityClamped) {
  Matrix p(1, 2), y(1, 2);
  p << 0.0, 1.0;
  y << 1, 0;
  EXPECT_TRUE(std::isfinite(cluster_ce_loss(p, y).value));
}

TEST(ClusterCeLoss, LogitGradientMatchesFiniteDifferences) {
  Rng rng(3);
  const Matrix logits = random_matrix(4, 5, rng);
  Matrix y = Matrix::Zero(4, 5);
  for (Eigen::Index i = 0; i < 4; ++i) y(i, static_cast<Eigen::Index>(uniform_index(rng, 5))) = 1.0;
  auto probs_of = [](const Matrix& z) {
    Matrix p = z;
    detail::softmax_tail_inplace(p, static_cast<std::size_t>(z.cols()));
    return p;
  };
  const Matrix g = cluster_ce_loss(probs_of(logits), y).grad;
  const Matrix fd =
      testing::fd_input_grad(logits, [&](const Matrix& z) { return cluster_ce_loss(probs_of(z), y).value; });
  EXPECT_LT(max_rel_err(g, fd), 1e-6);
}

TEST(GradientPenalty, UnitEpsilonReturnsRealRows) {
  const ModelSet m = tiny_models(1);
  Rng rng(1);
  const Matrix xr = random_matrix(6, 4, rng), xf = random_matrix(6, 4, rng);
  const std::vector<double> eps(6, 1.0);
  EXPECT_EQ(gradient_penalty_at(m.discriminator.params, xr, xf, eps).x_hat, xr);
}

TEST(GradientPenalty, UnitNormLinearCriticHasZeroPenalty) {
  Layer l1, l2;
  l1.weight = Matrix::Identity(3, 3) * 2.0;
  l1.bias = Vector::Zero(3);
  l1.activation = Activation::linear;
  l2.weight.resize(1, 3);
  l2.weight << 0.3, 0.4, 0.0;  // product has norm 2 * 0.5 = 1
  l2.bias = Vector::Constant(1, 0.7);
  l2.activation = Activation::linear;
  const MlpParams D({l1, l2});
  Rng rng(2);
  const PenaltyEval pe = gradient_penalty(D, random_matrix(8, 3, rng), random_matrix(8, 3, rng), rng);
  EXPECT_NEAR(pe.penalty, 0.0, 1e-20);
}

// Straight-line recomputation: explicit per-row loops through the ReLU masks.
double penalty_by_loops(const MlpParams& D, const Matrix& x_hat) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < x_hat.rows(); ++r) {
    std::vector<std::vector<double>> masks;
    std::vector<double> a(static_cast<std::size_t>(x_hat.cols()));
    for (Eigen::Index j = 0; j < x_hat.cols(); ++j) a[static_cast<std::size_t>(j)] = x_hat(r, j);
    for (const Layer& l : D.layers()) {
      std::vector<double> z(l.out_dim()), mask(l.out_dim(), 1.0);
      for (std::size_t o = 0; o < l.out_dim(); ++o) {
        double s = l.bias[static_cast<Eigen::Index>(o)];
        for (std::size_t i = 0; i < l.in_dim(); ++i) s += l.weight(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i)) * a[i];
        if (l.activation == Activation::relu) {
          mask[o] = s > 0.0 ? 1.0 : 0.0;
          s = s > 0.0 ? s : 0.0;
        }
        z[o] = s;
      }
      masks.push_back(mask);
      a = z;
    }
    std::vector<double> g{1.0};
    for (std::size_t li = D.size(); li-- > 0;) {
      const Layer& l = D.layer(li);
      std::vector<double> gm(l.out_dim());
      for (std::size_t o = 0; o < l.out_dim(); ++o) gm[o] = g[o] * masks[li][o];
      std::vector<double> gi(l.in_dim(), 0.0);
      for (std::size_t i = 0; i < l.in_dim(); ++i)
        for (std::size_t o = 0; o < l.out_dim(); ++o)
          gi[i] += l.weight(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i)) * gm[o];
      g = gi;
    }
    double n2 = 0.0;
    for (double v : g) n2 += v * v;
    const double dev = std::sqrt(n2 + 1e-12) - 1.0;
    total += dev * dev;
  }
  return total / static_cast<double>(x_hat.rows());
}

TEST(GradientPenalty, MatchesStraightLineRecomputation) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const ModelSet m = tiny_models(s);
    Rng rng(s);
    const PenaltyEval pe =
        gradient_penalty(m.discriminator.params, random_matrix(8, 4, rng), random_matrix(8, 4, rng), rng);
    EXPECT_NEAR(pe.penalty, penalty_by_loops(m.discriminator.params, pe.x_hat), 1e-10);
  }
}

GanTrainConfig tiny_cfg(std::size_t m) {
  GanTrainConfig cfg;
  cfg.batch = m;
  return cfg;
}

TEST(CriticObjective, GradientMatchesFiniteDifferences) {
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const ModelSet m = tiny_models(s);
    Rng rng(derive_seed(s, 7));
    const Matrix xr = random_matrix(6, 4, rng);
    const Matrix xf = random_matrix(6, 4, rng);
    std::vector<double> eps(6);
    for (double& e : eps) e = uniform01(rng);
    const GanTrainConfig cfg = tiny_cfg(6);
    const CriticObjective obj = critic_objective(m.discriminator.params, xr, xf, eps, cfg);
    const MlpGradients fd = fd_param_grad(m.discriminator.params, [&](const MlpParams& D) {
      return critic_objective(D, xr, xf, eps, cfg).diag.loss;
    });
    worst = std::max(worst, max_rel_err(obj.grads, fd, testing::kFdFloor));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(GenEncObjective, JointGradientMatchesFiniteDifferences) {
  double worst_g = 0.0, worst_e = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const ModelSet m = tiny_models(s);
    Rng rng(derive_seed(s, 8));
    const LatentBatch z = tiny_latent(6, rng);
    const GanTrainConfig cfg = tiny_cfg(6);
    const MlpParams& G = m.generator.params;
    const MlpParams& E = m.encoder.params;
    const MlpParams& D = m.discriminator.params;
    const GenEncObjective obj = gen_enc_objective(G, E, D, z, cfg);
    const MlpGradients fd_g =
        fd_param_grad(G, [&](const MlpParams& g) { return gen_enc_objective(g, E, D, z, cfg).diag.total; });
    const MlpGradients fd_e =
        fd_param_grad(E, [&](const MlpParams& e) { return gen_enc_objective(G, e, D, z, cfg).diag.total; });
    worst_g = std::max(worst_g, max_rel_err(obj.grad_g, fd_g, testing::kFdFloor));
    worst_e = std::max(worst_e, max_rel_err(obj.grad_e, fd_e, testing::kFdFloor));
  }
  EXPECT_LT(worst_g, 1e-4);
  EXPECT_LT(worst_e, 1e-4);
}

TEST(GenEncObjective, EncoderIdleWithoutRecoveryTerms) {
  const ModelSet m = tiny_models(4);
  Rng rng(4);
  GanTrainConfig cfg = tiny_cfg(6);
  cfg.w2 = cfg.w3 = 0.0;
  const GenEncObjective obj =
      gen_enc_objective(m.generator.params, m.encoder.params, m.discriminator.params, tiny_latent(6, rng), cfg);
  EXPECT_EQ(obj.grad_e.max_abs(), 0.0);
  EXPECT_GT(obj.grad_g.max_abs(), 0.0);
}

TEST(GenEncObjective, PerfectInverseGivesZeroLoss) {
  Layer g;
  g.weight = Matrix::Identity(6, 6);
  g.bias = Vector::Zero(6);
  g.activation = Activation::linear;
  Layer e = g;
  e.weight.bottomRightCorner(3, 3) *= 1000.0;
  e.activation = Activation::softmax_tail;
  e.softmax_width = 3;
  Layer d;
  d.weight = Matrix::Ones(1, 6);
  d.bias = Vector::Zero(1);
  d.activation = Activation::linear;
  Rng rng(4);
  GanTrainConfig cfg = tiny_cfg(6);
  cfg.w1 = 0.0;
  const GenEncObjective obj =
      gen_enc_objective(MlpParams({g}), MlpParams({e}), MlpParams({d}), tiny_latent(6, rng), cfg);
  EXPECT_NEAR(obj.diag.total, 0.0, 1e-12);
}

TEST(CriticStep, ZeroWeightCriticHasZeroWasserstein) {
  ModelSet m = tiny_models(5);
  for (std::size_t l = 0; l < m.discriminator.params.size(); ++l)
    m.discriminator.params.mutable_layer(l).weight.setZero();
  Rng rng(5);
  const GanTrainConfig cfg = tiny_cfg(8);
  AdamState st = AdamState::for_params(m.discriminator.params, cfg.adam);
  const CriticDiagnostics d = critic_step(m.discriminator.params, st, m.generator.params, random_matrix(8, 4, rng),
                                          tiny_latent(8, rng), cfg, rng);
  EXPECT_EQ(d.wasserstein, 0.0);
  EXPECT_GE(d.gp, 0.0);
}

TEST(CriticStep, OneStepRaisesObjectiveOnFixedBatch) {
  int raised = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    ModelSet m = tiny_models(s);
    Rng rng(derive_seed(s, 11));
    const GanTrainConfig cfg = tiny_cfg(16);
    const Matrix xr = random_matrix(16, 4, rng);
    const LatentBatch z = tiny_latent(16, rng);
    const Matrix xf = mlp_forward(m.generator.params, z.z).output();
    Rng eps_rng = rng;
    std::vector<double> eps(16);
    for (double& e : eps) e = uniform01(eps_rng);
    const double before = critic_objective(m.discriminator.params, xr, xf, eps, cfg).diag.loss;
    const MlpParams g_before = m.generator.params;
    AdamState st = AdamState::for_params(m.discriminator.params, cfg.adam);
    const CriticDiagnostics d = critic_step(m.discriminator.params, st, m.generator.params, xr, z, cfg, rng);
    EXPECT_GE(d.gp, 0.0);
    EXPECT_TRUE(same_params(g_before, m.generator.params));
    const double after = critic_objective(m.discriminator.params, xr, xf, eps, cfg).diag.loss;
    if (after < before) ++raised;
  }
  EXPECT_GE(raised, 45);
}

TEST(CriticStep, RejectsWrongBatchSize) {
  ModelSet m = tiny_models(5);
  Rng rng(5);
  const GanTrainConfig cfg = tiny_cfg(8);
  AdamState st = AdamState::for_params(m.discriminator.params, cfg.adam);
  EXPECT_THROW(critic_step(m.discriminator.params, st, m.generator.params, random_matrix(7, 4, rng),
                           tiny_latent(7, rng), cfg, rng),
               ShapeError);
}

TEST(GenEncStep, LeavesCriticUntouched) {
  ModelSet m = tiny_models(6);
  Rng rng(6);
  const GanTrainConfig cfg = tiny_cfg(8);
  const MlpParams d_before = m.discriminator.params;
  const MlpParams g_before = m.generator.params;
  AdamState ag = AdamState::for_params(m.generator.params, cfg.adam);
  AdamState ae = AdamState::for_params(m.encoder.params, cfg.adam);
  gen_enc_step(m.generator.params, ag, m.encoder.params, ae, m.discriminator.params, tiny_latent(8, rng), cfg);
  EXPECT_TRUE(same_params(d_before, m.discriminator.params));
  EXPECT_FALSE(same_params(g_before, m.generator.params));
}

LabeledEmbeddings blob_data(std::size_t per, std::uint64_t seed) {
  Rng rng(seed);
  LabeledEmbeddings d;
  d.num_speakers = 3;
  d.x = random_matrix(static_cast<Eigen::Index>(3 * per), 4, rng, 0.1);
  for (std::size_t i = 0; i < 3 * per; ++i) {
    d.labels.push_back(static_cast<SpeakerId>(i % 3));
    d.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i % 3)) += 1.0;
  }
  return d;
}

TEST(TrainClustergan, ZeroIterationsIsNoOp) {
  const ModelSet m = tiny_models(9);
  GanTrainConfig cfg = tiny_cfg(8);
  cfg.iterations = 0;
  const GanTrainResult r = train_clustergan(blob_data(5, 1), m, cfg);
  EXPECT_TRUE(r.log.empty());
  EXPECT_TRUE(same_params(r.models.generator.params, m.generator.params));
  EXPECT_TRUE(same_params(r.models.discriminator.params, m.discriminator.params));
  EXPECT_TRUE(same_params(r.models.encoder.params, m.encoder.params));
}

TEST(TrainClustergan, DeterministicAndLogBounded) {
  GanTrainConfig cfg = tiny_cfg(8);
  cfg.iterations = 6;
  cfg.seed = 123;
  const GanTrainResult a = train_clustergan(blob_data(5, 1), tiny_models(9), cfg);
  const GanTrainResult b = train_clustergan(blob_data(5, 1), tiny_models(9), cfg);
  ASSERT_EQ(a.log.size(), 6u);
  EXPECT_FALSE(a.aborted.has_value());
  EXPECT_TRUE(same_params(a.models.encoder.params, b.models.encoder.params));
  EXPECT_TRUE(same_params(a.models.generator.params, b.models.generator.params));
  EXPECT_TRUE(same_params(a.models.discriminator.params, b.models.discriminator.params));
  std::ostringstream la, lb;
  write_gan_log_csv(la, a.log);
  write_gan_log_csv(lb, b.log);
  EXPECT_EQ(la.str(), lb.str());
  EXPECT_EQ(la.str().substr(0, 30), "iter,wasserstein,gp,adv,cos,ce");
  for (const GanLogRow& r : a.log) {
    EXPECT_GE(r.cos, 0.0);
    EXPECT_LE(r.cos, 2.0);
    EXPECT_GE(r.ce, 0.0);
    EXPECT_GE(r.gp, 0.0);
  }
}

TEST(TrainClustergan, DivergenceKeepsLastGoodModels) {
  LabeledEmbeddings d = blob_data(5, 1);
  d.x.setConstant(std::numeric_limits<double>::quiet_NaN());
  const ModelSet m = tiny_models(9);
  GanTrainConfig cfg = tiny_cfg(8);
  cfg.iterations = 3;
  const GanTrainResult r = train_clustergan(d, m, cfg);
  ASSERT_TRUE(r.aborted.has_value());
  EXPECT_NE(r.aborted->find("iteration 1"), std::string::npos) << *r.aborted;
  EXPECT_TRUE(same_params(r.models.discriminator.params, m.discriminator.params));
}

TEST(TrainClustergan, SpeakerCountMustMatchLatent) {
  LabeledEmbeddings d = blob_data(5, 1);
  d.num_speakers = 2;
  for (auto& y : d.labels) y %= 2;
  GanTrainConfig cfg = tiny_cfg(8);
  EXPECT_THROW(train_clustergan(d, tiny_models(1), cfg), ConfigError);
}

}  // namespace
}  // namespace diarkit
