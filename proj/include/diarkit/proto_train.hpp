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

// Episodic prototypical-loss fine-tuning of a pre-trained encoder. Early
// encoder layers stay frozen; the embedding is the encoder's raw linear
// output, the same representation used when encoding in mcgan_logits mode.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "diarkit/errors.hpp"
#include "diarkit/gan_train.hpp"
#include "diarkit/nets.hpp"
#include "diarkit/numkit/adam.hpp"
#include "diarkit/numkit/mlp.hpp"
#include "diarkit/rng.hpp"

namespace diarkit {

struct ProtoConfig {
  std::vector<std::size_t> n_c_choices = {10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120, 130, 140, 150};
  std::size_t n_s = 10;
  std::size_t n_q = 10;
  std::size_t episodes = 0;
  AdamConfig adam{1e-4, 0.5, 0.9, 1e-8};
  std::size_t frozen_layers = 2;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_s == 0 || n_q == 0) throw ConfigError("proto: supports and queries per speaker must be positive");
    if (n_c_choices.empty()) throw ConfigError("proto: empty speaker-count choice set");
    for (std::size_t c : n_c_choices)
      if (c < 2) throw ConfigError("proto: every speaker-count choice must be at least 2");
    adam.validate();
  }
};

struct Episode {
  std::vector<SpeakerId> speakers;              // V, size N_C
  std::vector<std::vector<std::size_t>> support;  // row indices, N_S per speaker
  std::vector<std::vector<std::size_t>> query;    // row indices, N_Q per speaker

  std::size_t n_c() const { return speakers.size(); }
};

// Speaker-count choices usable with `eligible` speakers: the configured
// choices that fit, or {2, ..., eligible} when none does.
inline std::vector<std::size_t> usable_choices(const ProtoConfig& cfg, std::size_t eligible) {
  std::vector<std::size_t> out;
  for (std::size_t c : cfg.n_c_choices)
    if (c <= eligible) out.push_back(c);
  if (out.empty())
    for (std::size_t c = 2; c <= eligible; ++c) out.push_back(c);
  return out;
}

inline Episode sample_episode(const LabeledEmbeddings& data, const ProtoConfig& cfg, Rng& rng) {
  const auto rows = data.rows_by_speaker();
  std::vector<SpeakerId> eligible;
  for (std::size_t k = 0; k < rows.size(); ++k)
    if (rows[k].size() >= cfg.n_s + cfg.n_q) eligible.push_back(static_cast<SpeakerId>(k));
  const std::vector<std::size_t> choices = usable_choices(cfg, eligible.size());
  if (choices.empty())
    throw ConfigError("proto: " + std::to_string(eligible.size()) + " of " + std::to_string(rows.size()) +
                      " speakers have at least " + std::to_string(cfg.n_s + cfg.n_q) +
                      " rows; an episode needs at least 2");

  Episode ep;
  const std::size_t n_c = choices[uniform_index(rng, choices.size())];
  // Partial Fisher-Yates: speakers without replacement.
  for (std::size_t i = 0; i < n_c; ++i) {
    std::swap(eligible[i], eligible[i + uniform_index(rng, eligible.size() - i)]);
    ep.speakers.push_back(eligible[i]);
  }
  for (SpeakerId k : ep.speakers) {
    std::vector<std::size_t> pool = rows[static_cast<std::size_t>(k)];
    const std::size_t need = cfg.n_s + cfg.n_q;
    for (std::size_t i = 0; i < need; ++i) std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
    ep.support.emplace_back(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(cfg.n_s));
    ep.query.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(cfg.n_s),
                          pool.begin() + static_cast<std::ptrdiff_t>(need));
  }
  return ep;
}

// One prototype per class: the mean of that class's embedded supports.
inline Matrix compute_prototypes(const std::vector<Matrix>& supports) {
  if (supports.empty()) throw ShapeError("compute_prototypes: no classes");
  const Eigen::Index d = supports.front().cols();
  Matrix p(static_cast<Eigen::Index>(supports.size()), d);
  for (std::size_t k = 0; k < supports.size(); ++k) {
    if (supports[k].rows() == 0) throw ShapeError("compute_prototypes: class " + std::to_string(k) + " has no supports");
    require_shape(supports[k], supports[k].rows(), d, "compute_prototypes");
    p.row(static_cast<Eigen::Index>(k)) = supports[k].colwise().mean();
  }
  return p;
}

struct ProtoLoss {
  double value = 0.0;
  Matrix probs;             // queries x classes
  Matrix grad_queries;      // dJ / d(embedded query)
  Matrix grad_prototypes;   // dJ / d(prototype)
};

// J = mean over queries of [d(q, p_y) + log sum_k exp(-d(q, p_k))], d the
// squared Euclidean distance.
inline ProtoLoss proto_loss(const Matrix& prototypes, const Matrix& queries, const std::vector<int>& labels) {
  const Eigen::Index C = prototypes.rows();
  const Eigen::Index Q = queries.rows();
  if (queries.cols() != prototypes.cols()) throw ShapeError("proto_loss: query and prototype dims differ");
  if (static_cast<Eigen::Index>(labels.size()) != Q) throw ShapeError("proto_loss: one label per query required");
  if (Q == 0) throw ShapeError("proto_loss: no queries");

  Matrix dist(Q, C);
  for (Eigen::Index j = 0; j < Q; ++j)
    for (Eigen::Index k = 0; k < C; ++k) dist(j, k) = (queries.row(j) - prototypes.row(k)).squaredNorm();

  ProtoLoss out;
  out.probs.resize(Q, C);
  Matrix coef(Q, C);  // dJ / d dist
  double total = 0.0;
  for (Eigen::Index j = 0; j < Q; ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    if (y < 0 || y >= C) throw RangeError("proto_loss: query label " + std::to_string(y) + " has no prototype");
    const double dmin = dist.row(j).minCoeff();
    double s = 0.0;
    for (Eigen::Index k = 0; k < C; ++k) s += std::exp(-(dist(j, k) - dmin));
    const double lse = -dmin + std::log(s);
    total += dist(j, y) + lse;
    for (Eigen::Index k = 0; k < C; ++k) out.probs(j, k) = std::exp(-dist(j, k) - lse);
    coef.row(j) = -out.probs.row(j);
    coef(j, y) += 1.0;
  }
  coef /= static_cast<double>(Q);
  out.value = total / static_cast<double>(Q);

  out.grad_queries = Matrix::Zero(Q, queries.cols());
  out.grad_prototypes = Matrix::Zero(C, queries.cols());
  for (Eigen::Index j = 0; j < Q; ++j)
    for (Eigen::Index k = 0; k < C; ++k) {
      const double c2 = 2.0 * coef(j, k);
      out.grad_queries.row(j) += c2 * (queries.row(j) - prototypes.row(k));
      out.grad_prototypes.row(k) -= c2 * (queries.row(j) - prototypes.row(k));
    }
  return out;
}

struct EpisodeObjective {
  double value = 0.0;
  MlpGradients grads;
};

// Episode loss and encoder-parameter gradient. `x_support` holds n_c groups
// of n_s consecutive rows, `x_query` n_c groups of n_q rows, both in class
// order. Gradients reach the encoder through supports and queries alike.
inline EpisodeObjective proto_episode_objective(const MlpParams& E, const Matrix& x_support, const Matrix& x_query,
                                                std::size_t n_c) {
  if (n_c == 0 || x_support.rows() % static_cast<Eigen::Index>(n_c) != 0 ||
      x_query.rows() % static_cast<Eigen::Index>(n_c) != 0)
    throw ShapeError("proto_episode_objective: rows are not n_c equal groups");
  const Eigen::Index ns = x_support.rows() / static_cast<Eigen::Index>(n_c);
  const Eigen::Index nq = x_query.rows() / static_cast<Eigen::Index>(n_c);
  Matrix x(x_support.rows() + x_query.rows(), x_support.cols());
  x.topRows(x_support.rows()) = x_support;
  x.bottomRows(x_query.rows()) = x_query;
  const Tape t = mlp_forward(E, x);
  const Matrix& f = t.logits();

  std::vector<Matrix> groups;
  groups.reserve(n_c);
  for (std::size_t k = 0; k < n_c; ++k) groups.push_back(f.middleRows(static_cast<Eigen::Index>(k) * ns, ns));
  const Matrix protos = compute_prototypes(groups);
  std::vector<int> labels(static_cast<std::size_t>(x_query.rows()));
  for (std::size_t j = 0; j < labels.size(); ++j) labels[j] = static_cast<int>(j / static_cast<std::size_t>(nq));
  const ProtoLoss pl = proto_loss(protos, f.bottomRows(x_query.rows()), labels);

  Matrix up(x.rows(), f.cols());
  for (std::size_t k = 0; k < n_c; ++k)
    up.middleRows(static_cast<Eigen::Index>(k) * ns, ns).rowwise() =
        pl.grad_prototypes.row(static_cast<Eigen::Index>(k)) / static_cast<double>(ns);
  up.bottomRows(x_query.rows()) = pl.grad_queries;
  EpisodeObjective out;
  out.value = pl.value;
  out.grads = mlp_backward(t, up, GradAt::final_logits).params;
  return out;
}

struct ProtoLogRow {
  std::size_t episode = 0;
  std::size_t n_c = 0;
  double loss = 0.0;
};

inline void write_proto_log_csv(std::ostream& os, const std::vector<ProtoLogRow>& rows) {
  os << "episode,N_C,loss\n";
  char buf[128];
  for (const ProtoLogRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.10g\n", r.episode, r.n_c, r.loss);
    os << buf;
  }
}

struct FinetuneResult {
  MlpCheckpoint encoder;
  std::vector<ProtoLogRow> log;
  std::optional<std::string> aborted;
};

inline FinetuneResult finetune_mcgan(const MlpCheckpoint& encoder, const LabeledEmbeddings& data,
                                     const ProtoConfig& cfg, bool allow_restage = false,
                                     std::ostream* progress = nullptr) {
  cfg.validate();
  data.validate();
  if (encoder.role != Role::encoder) throw ContractError("finetune: checkpoint is not an encoder");
  if (encoder.provenance.stage != Stage::clustergan && !allow_restage)
    throw ContractError("finetune: encoder is already at stage mcgan");
  if (static_cast<std::size_t>(data.x.cols()) != encoder.params.input_dim())
    throw ShapeError("finetune: embedding dim does not match the encoder input");
  if (cfg.frozen_layers >= encoder.params.size())
    throw ConfigError("finetune: cannot freeze every encoder layer");

  FinetuneResult res;
  res.encoder = encoder;
  res.encoder.provenance.stage = Stage::mcgan;
  res.encoder.provenance.seed = cfg.seed;
  MlpParams& E = res.encoder.params;
  AdamState adam = AdamState::for_params(E, cfg.adam);
  Rng rng(derive_seed(cfg.seed, 0x9e7a));
  MlpParams last_good = E;
  res.log.reserve(cfg.episodes);

  for (std::size_t ep = 1; ep <= cfg.episodes; ++ep) {
    const Episode e = sample_episode(data, cfg, rng);
    std::vector<std::size_t> s_idx, q_idx;
    for (std::size_t k = 0; k < e.n_c(); ++k) {
      s_idx.insert(s_idx.end(), e.support[k].begin(), e.support[k].end());
      q_idx.insert(q_idx.end(), e.query[k].begin(), e.query[k].end());
    }
    try {
      const EpisodeObjective obj = proto_episode_objective(E, gather_rows(data.x, s_idx), gather_rows(data.x, q_idx), e.n_c());
      if (!std::isfinite(obj.value))
        throw DivergenceError("finetune episode " + std::to_string(ep) + ": non-finite loss");
      adam_step(adam, E, obj.grads, cfg.frozen_layers);
      res.log.push_back({ep, e.n_c(), obj.value});
    } catch (const DivergenceError& err) {
      E = last_good;
      res.aborted = "finetune episode " + std::to_string(ep) + ": " + err.what();
      return res;
    }
    last_good = E;
    if (progress != nullptr && (ep % 100 == 0 || ep == cfg.episodes))
      *progress << "episode " << ep << " N_C=" << e.n_c() << " loss=" << res.log.back().loss << "\n";
  }
  return res;
}

}  // namespace diarkit
