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

// Synthetic embedding corpora: speaker means on the unit sphere, labeled
// training embeddings, and sessions with turn-taking, speech regions, a
// reference timeline and one embedding per uniform segment.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "diarkit/errors.hpp"
#include "diarkit/gan_train.hpp"
#include "diarkit/numkit/matrix.hpp"
#include "diarkit/pipeline.hpp"
#include "diarkit/rng.hpp"
#include "diarkit/timeline.hpp"

namespace diarkit {

struct SpeakerMeans {
  Matrix means;  // K x d, unit rows
  double min_angle_deg = 180.0;
};

inline double min_pairwise_angle_deg(const Matrix& unit_rows) {
  double best = 180.0;
  for (Eigen::Index i = 0; i < unit_rows.rows(); ++i)
    for (Eigen::Index j = i + 1; j < unit_rows.rows(); ++j) {
      const double c = std::clamp(unit_rows.row(i).dot(unit_rows.row(j)), -1.0, 1.0);
      best = std::min(best, std::acos(c) * 180.0 / std::numbers::pi);
    }
  return best;
}

// Uniform on the sphere; with min_angle_deg > 0, candidates closer than that
// to an accepted mean are rejected.
inline SpeakerMeans gen_speakers(std::size_t k, std::size_t dim, double min_angle_deg, Rng& rng) {
  if (k < 1) throw RangeError("gen_speakers: need at least one speaker");
  if (dim < 2) throw RangeError("gen_speakers: dimension must be at least 2");
  constexpr std::size_t kMaxTries = 100000;
  const double cos_max = std::cos(min_angle_deg * std::numbers::pi / 180.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  SpeakerMeans out;
  out.means.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(dim));
  Vector v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < out.means.rows(); ++i) {
    std::size_t tries = 0;
    while (true) {
      if (++tries > kMaxTries)
        throw ConfigError("gen_speakers: cannot place " + std::to_string(k) + " means " +
                          std::to_string(min_angle_deg) + " degrees apart in " + std::to_string(dim) + " dimensions");
      for (Eigen::Index j = 0; j < v.size(); ++j) v[j] = n01(rng);
      const double n = v.norm();
      if (n < 1e-12) continue;
      v /= n;
      bool ok = true;
      if (min_angle_deg > 0)
        for (Eigen::Index a = 0; a < i && ok; ++a) ok = out.means.row(a).dot(v) <= cos_max;
      if (ok) break;
    }
    out.means.row(i) = v.transpose();
  }
  out.min_angle_deg = min_pairwise_angle_deg(out.means);
  return out;
}

inline Vector gaussian_around(const Eigen::Ref<const Vector>& mean, double std, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Vector x = mean;
  for (Eigen::Index j = 0; j < x.size(); ++j) x[j] += std * n01(rng);
  return x;
}

// Speaker-independent variability confined to a fixed low-dimensional
// subspace, added on top of the isotropic within-speaker noise. Stands in
// for channel and session effects.
struct Nuisance {
  Matrix basis;  // r x d, orthonormal rows; empty for none
  double std = 0.0;

  bool active() const { return basis.rows() > 0 && std > 0; }
};

inline Nuisance gen_nuisance(std::size_t rank, std::size_t dim, double std, Rng& rng) {
  Nuisance nz;
  nz.std = std;
  if (rank == 0) return nz;
  if (rank > dim) throw RangeError("gen_nuisance: rank exceeds dimension");
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix g(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(rank));
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = n01(rng);
  const Eigen::HouseholderQR<Matrix> qr(g);
  nz.basis = (qr.householderQ() * Matrix::Identity(g.rows(), g.cols())).transpose();
  return nz;
}

inline Vector sample_embedding(const Eigen::Ref<const Vector>& mean, double std, const Nuisance& nz, Rng& rng) {
  Vector x = gaussian_around(mean, std, rng);
  if (nz.active()) x += nz.basis.transpose() * gaussian_around(Vector::Zero(nz.basis.rows()), nz.std, rng);
  return x;
}

// per_speaker samples of mean + N(0, std^2 I) (+ nuisance) for every row of
// `means`, speaker-major order.
inline LabeledEmbeddings gen_training_set(const Matrix& means, std::size_t per_speaker, double std, Rng& rng,
                                          const Nuisance& nz = {}) {
  if (!(std >= 0)) throw RangeError("gen_training_set: std must be >= 0");
  LabeledEmbeddings out;
  out.num_speakers = static_cast<std::size_t>(means.rows());
  out.x.resize(means.rows() * static_cast<Eigen::Index>(per_speaker), means.cols());
  Eigen::Index r = 0;
  for (Eigen::Index s = 0; s < means.rows(); ++s)
    for (std::size_t i = 0; i < per_speaker; ++i, ++r) {
      out.x.row(r) = sample_embedding(means.row(s).transpose(), std, nz, rng).transpose();
      out.labels.push_back(static_cast<SpeakerId>(s));
    }
  return out;
}

struct SessionConfig {
  double duration = 60.0;   // s
  double turn_mean = 2.0;   // exponential mean, s
  double turn_min = 0.5;    // s
  double gap_prob = 0.1;    // chance of silence after a turn
  double gap_mean = 0.5;    // exponential mean, s
  double within_std = 0.08;
  SegmentationConfig segmentation;

  void validate() const {
    if (!(duration > 0)) throw ConfigError("session duration must be > 0");
    if (!(turn_mean > 0) || !(turn_min >= 0)) throw ConfigError("turn lengths must be positive");
    if (!(gap_prob >= 0 && gap_prob <= 1) || !(gap_mean > 0)) throw ConfigError("gap settings out of range");
    if (!(within_std > 0)) throw ConfigError("within-speaker std must be > 0");
    segmentation.validate();
  }
};

struct SynthSession {
  std::string id;
  SadIntervals sad;
  Timeline reference;
  std::vector<Segment> segments;
  EmbeddingMatrix x;                 // one row per segment
  std::vector<int> segment_speaker;  // index into `speakers`
  std::vector<std::size_t> speakers; // pool ids
  std::size_t k = 0;
};

inline std::string pool_speaker_name(std::size_t id) { return "S" + std::to_string(id); }

// Turns cycle once through a random order of the speakers, then each next
// speaker is drawn uniformly from the others. Generation continues until the
// duration is reached and every speaker has spoken.
inline SynthSession gen_session(const std::string& id, const SessionConfig& cfg, const Matrix& pool_means,
                                const std::vector<std::size_t>& speakers, Rng& rng, const Nuisance& nz = {}) {
  cfg.validate();
  if (speakers.empty()) throw RangeError("gen_session: need at least one speaker");
  for (std::size_t s : speakers)
    if (s >= static_cast<std::size_t>(pool_means.rows())) throw RangeError("gen_session: speaker id outside the pool");
  SynthSession out;
  out.id = id;
  out.speakers = speakers;
  out.k = speakers.size();
  out.reference.session = id;
  out.sad.session = id;

  std::exponential_distribution<double> turn_len(1.0 / cfg.turn_mean), gap_len(1.0 / cfg.gap_mean);
  std::vector<std::size_t> order(speakers.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  const Ms end = to_ms(cfg.duration);
  const Ms min_turn = std::max<Ms>(1, to_ms(cfg.turn_min));
  std::vector<std::size_t> turn_owner;  // pool id per reference turn
  Ms t = 0;
  std::size_t cur = order[0];
  for (std::size_t n = 0; t < end || n < order.size(); ++n) {
    if (n > 0) {
      if (n < order.size()) {
        cur = order[n];
      } else if (speakers.size() > 1) {
        std::size_t next = uniform_index(rng, speakers.size() - 1);
        cur = next >= cur ? next + 1 : next;
      }
    }
    const Ms len = std::max(min_turn, to_ms(turn_len(rng)));
    const Ms off = n + 1 >= order.size() ? std::min(t + len, std::max(end, t + min_turn)) : t + len;
    const std::string name = pool_speaker_name(speakers[cur]);
    if (!out.reference.turns.empty() && out.reference.turns.back().offset == t &&
        out.reference.turns.back().speaker == name) {
      out.reference.turns.back().offset = off;
    } else {
      out.reference.turns.push_back({t, off, name});
      turn_owner.push_back(speakers[cur]);
    }
    t = off;
    if (t < end && uniform01(rng) < cfg.gap_prob) {
      const Ms gap = std::max<Ms>(1, to_ms(gap_len(rng)));
      if (t + gap < end) t += gap;
    }
  }
  out.sad = speech_regions(out.reference);
  out.sad.session = id;
  out.segments = uniform_segments(out.sad, cfg.segmentation);

  out.x.resize(static_cast<Eigen::Index>(out.segments.size()), pool_means.cols());
  for (const Segment& seg : out.segments) {
    // Owner of the midpoint; doubled to stay in integers.
    const Ms mid2 = seg.onset + seg.offset;
    std::size_t owner = 0;
    for (std::size_t j = 0; j < out.reference.turns.size(); ++j) {
      const Turn& turn = out.reference.turns[j];
      if (2 * turn.onset <= mid2 && mid2 < 2 * turn.offset) {
        owner = turn_owner[j];
        break;
      }
    }
    const auto local = static_cast<int>(std::find(speakers.begin(), speakers.end(), owner) - speakers.begin());
    out.segment_speaker.push_back(local);
    const auto r = static_cast<Eigen::Index>(seg.row);
    out.x.row(r) =
        sample_embedding(pool_means.row(static_cast<Eigen::Index>(owner)).transpose(), cfg.within_std, nz, rng)
            .transpose();
  }
  return out;
}

struct CorpusConfig {
  std::size_t dim = 32;
  std::size_t train_speakers = 10;
  std::size_t train_per_speaker = 60;
  std::size_t pool_speakers = 40;       // session speakers, disjoint from training
  double min_angle_deg = 25.0;
  double train_std = 0.08;
  std::size_t nuisance_rank = 0;
  double nuisance_std = 0.0;
  std::size_t sessions = 30;
  std::vector<double> k_weights = {1, 1, 1, 1, 1, 1};  // over k = 2..7
  SessionConfig session;
  std::uint64_t seed = 1;

  void validate() const {
    if (dim < 2) throw ConfigError("corpus dim must be >= 2");
    if (train_speakers < 1 || train_per_speaker < 1) throw ConfigError("training set must be nonempty");
    if (pool_speakers < 1) throw ConfigError("speaker pool must be nonempty");
    if (!(train_std > 0)) throw ConfigError("training std must be > 0");
    if (nuisance_rank > dim || !(nuisance_std >= 0)) throw ConfigError("nuisance rank must be <= dim and std >= 0");
    if (k_weights.size() != 6) throw ConfigError("k_weights needs six weights for k = 2..7");
    double total = 0;
    for (double w : k_weights) {
      if (!(w >= 0)) throw ConfigError("k_weights must be >= 0");
      total += w;
    }
    if (!(total > 0)) throw ConfigError("k_weights must not all be zero");
    session.validate();
  }
};

struct SynthCorpus {
  SpeakerMeans speakers;  // training speakers first, then the pool
  Nuisance nuisance;
  LabeledEmbeddings train;
  std::vector<SynthSession> sessions;
  std::vector<std::uint64_t> session_seeds;
};

inline std::uint64_t session_seed(std::uint64_t corpus_seed, std::size_t i) {
  return derive_seed(corpus_seed, 0x5e55'0000ULL + i);
}

inline Nuisance corpus_nuisance(const CorpusConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, 3));
  return gen_nuisance(cfg.nuisance_rank, cfg.dim, cfg.nuisance_std, rng);
}

inline SynthSession gen_corpus_session(const CorpusConfig& cfg, const Matrix& all_means, const Nuisance& nz,
                                       std::size_t i) {
  Rng rng(session_seed(cfg.seed, i));
  std::discrete_distribution<std::size_t> kd(cfg.k_weights.begin(), cfg.k_weights.end());
  const std::size_t k = std::min(kd(rng) + 2, cfg.pool_speakers);
  std::vector<std::size_t> pool(cfg.pool_speakers);
  for (std::size_t j = 0; j < pool.size(); ++j) pool[j] = cfg.train_speakers + j;
  for (std::size_t j = 0; j < k; ++j) std::swap(pool[j], pool[j + uniform_index(rng, pool.size() - j)]);
  pool.resize(k);
  char name[32];
  std::snprintf(name, sizeof name, "sess%03zu", i);
  return gen_session(name, cfg.session, all_means, pool, rng, nz);
}

// Speakers, nuisance and training set; no sessions yet.
inline SynthCorpus gen_corpus_base(const CorpusConfig& cfg) {
  cfg.validate();
  SynthCorpus c;
  Rng speaker_rng(derive_seed(cfg.seed, 1));
  c.speakers = gen_speakers(cfg.train_speakers + cfg.pool_speakers, cfg.dim, cfg.min_angle_deg, speaker_rng);
  c.nuisance = corpus_nuisance(cfg);
  Rng train_rng(derive_seed(cfg.seed, 2));
  c.train = gen_training_set(c.speakers.means.topRows(static_cast<Eigen::Index>(cfg.train_speakers)),
                             cfg.train_per_speaker, cfg.train_std, train_rng, c.nuisance);
  for (std::size_t i = 0; i < cfg.sessions; ++i) c.session_seeds.push_back(session_seed(cfg.seed, i));
  return c;
}

inline SynthCorpus gen_corpus(const CorpusConfig& cfg) {
  SynthCorpus c = gen_corpus_base(cfg);
  for (std::size_t i = 0; i < cfg.sessions; ++i)
    c.sessions.push_back(gen_corpus_session(cfg, c.speakers.means, c.nuisance, i));
  return c;
}

}  // namespace diarkit
