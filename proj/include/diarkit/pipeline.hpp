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

// Session-level diarization: uniform segmentation over speech regions,
// encoding, optional fusion with the raw embeddings, clustering, and
// conversion of segment labels back to a timeline.

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "diarkit/cluster.hpp"
#include "diarkit/errors.hpp"
#include "diarkit/nets.hpp"
#include "diarkit/numkit/matrix.hpp"
#include "diarkit/timeline.hpp"

namespace diarkit {

struct Segment {
  Ms onset = 0;
  Ms offset = 0;
  std::size_t row = 0;  // row of the session embedding matrix

  Ms duration() const { return offset - onset; }
  bool operator==(const Segment&) const = default;
};

struct SegmentationConfig {
  double win = 1.5;
  double hop = 0.5;  // window minus overlap (1.5 s - 1.0 s)
  double min_len = 0.25;

  void validate() const {
    if (!(win > 0) || !(hop > 0) || hop > win) throw ConfigError("segmentation needs 0 < hop <= win");
    if (!(min_len >= 0)) throw ConfigError("segmentation min_len must be >= 0");
  }
};

inline std::vector<Segment> uniform_segments(const SadIntervals& sad, const SegmentationConfig& cfg = {}) {
  cfg.validate();
  sad.validate();
  const Ms win = to_ms(cfg.win), hop = to_ms(cfg.hop), min_len = to_ms(cfg.min_len);
  std::vector<Segment> out;
  for (const SadInterval& iv : sad.intervals) {
    const std::size_t first = out.size();
    const Ms a = iv.onset, b = iv.offset;
    if (b - a <= win) {
      out.push_back({a, b, 0});
      continue;
    }
    for (Ms s = a; s < b - hop; s += hop) {
      const Segment seg{s, std::min(s + win, b), 0};
      if (seg.duration() < min_len && out.size() > first)
        out.back().offset = std::max(out.back().offset, seg.offset);
      else
        out.push_back(seg);
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].row = i;
  return out;
}

// Row-wise L2 normalization of both inputs, then concatenation.
inline EmbeddingMatrix fuse(const EmbeddingMatrix& e1, const EmbeddingMatrix& e2) {
  if (e1.rows() != e2.rows())
    throw ShapeError("fuse: row counts differ (" + std::to_string(e1.rows()) + " vs " + std::to_string(e2.rows()) + ")");
  EmbeddingMatrix out(e1.rows(), e1.cols() + e2.cols());
  out << l2_normalize_rows(e1), l2_normalize_rows(e2);
  return out;
}

inline std::string speaker_name(std::size_t i) { return "spk" + std::to_string(i); }

// Adjacent overlapping segments with different labels are split at the
// integer-ms midpoint of their overlap; same-label pieces that touch merge.
// Speakers are named spk0, spk1, ... by first appearance.
inline Timeline labels_to_timeline(const std::vector<Segment>& segs, const std::vector<int>& labels,
                                   const std::string& session = "") {
  if (segs.size() != labels.size())
    throw ShapeError("labels_to_timeline: " + std::to_string(segs.size()) + " segments but " +
                     std::to_string(labels.size()) + " labels");
  for (std::size_t i = 0; i < segs.size(); ++i) {
    if (segs[i].duration() <= 0) throw ContractError("labels_to_timeline: segment " + std::to_string(i) + " is empty");
    if (i > 0 && (segs[i].onset < segs[i - 1].onset || segs[i].offset < segs[i - 1].offset))
      throw ContractError("labels_to_timeline: segments must be sorted by onset and offset");
  }
  Timeline out;
  out.session = session;
  std::vector<int> order;
  auto name = [&](int label) {
    auto it = std::find(order.begin(), order.end(), label);
    if (it == order.end()) {
      order.push_back(label);
      return speaker_name(order.size() - 1);
    }
    return speaker_name(static_cast<std::size_t>(it - order.begin()));
  };

  Ms start = segs.empty() ? 0 : segs[0].onset;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    Ms end = segs[i].offset;
    Ms next_start = 0;
    if (i + 1 < segs.size()) {
      next_start = segs[i + 1].onset;
      if (next_start < end) {
        next_start = std::max(start, (segs[i + 1].onset + end) / 2);
        end = next_start;
      }
    }
    const std::string spk = name(labels[i]);
    if (end > start) {
      if (!out.turns.empty() && out.turns.back().speaker == spk && out.turns.back().offset == start)
        out.turns.back().offset = end;
      else
        out.turns.push_back({start, end, spk});
    }
    start = next_start;
  }
  return out;
}

enum class EmbeddingSource { xvector_raw, clustergan, mcgan, fused };
enum class Backend { kmeans, sc_fixed_p, nme_sc };

inline const char* to_string(EmbeddingSource s) {
  switch (s) {
    case EmbeddingSource::xvector_raw: return "xvector-raw";
    case EmbeddingSource::clustergan: return "clustergan";
    case EmbeddingSource::mcgan: return "mcgan";
    case EmbeddingSource::fused: return "fused";
  }
  return "?";
}

inline const char* to_string(Backend b) {
  switch (b) {
    case Backend::kmeans: return "kmeans";
    case Backend::sc_fixed_p: return "sc-fixed-p";
    case Backend::nme_sc: return "nme-sc";
  }
  return "?";
}

inline EmbeddingSource parse_embedding_source(const std::string& s) {
  for (auto v : {EmbeddingSource::xvector_raw, EmbeddingSource::clustergan, EmbeddingSource::mcgan, EmbeddingSource::fused})
    if (s == to_string(v)) return v;
  throw ConfigError("unknown embedding source '" + s + "'");
}

inline Backend parse_backend(const std::string& s) {
  for (auto v : {Backend::kmeans, Backend::sc_fixed_p, Backend::nme_sc})
    if (s == to_string(v)) return v;
  throw ConfigError("unknown back-end '" + s + "'");
}

struct DiarizeConfig {
  SegmentationConfig segmentation;
  EmbeddingSource embedding = EmbeddingSource::mcgan;
  Backend backend = Backend::nme_sc;
  std::optional<std::size_t> known_k;
  std::size_t fixed_p = 10;  // sc-fixed-p
  PRange p_range;            // nme-sc; zeros mean the default range
  std::size_t k_max = 10;
  KmeansOptions kmeans;
};

struct DiarizeDiagnostics {
  std::size_t n_segments = 0;
  std::size_t p_used = 0;  // 0 for plain k-means
  double inertia = 0.0;
  std::optional<NmeResult> nme;
};

struct DiarizeResult {
  Timeline timeline;
  std::size_t k_hat = 0;
  std::vector<int> labels;  // per segment
  std::vector<Segment> segments;
  DiarizeDiagnostics diagnostics;
};

// The embedding matrix the back-end sees. Raw rows are the session
// x-vectors, one per segment.
inline EmbeddingMatrix session_embeddings(const EmbeddingMatrix& raw, const MlpCheckpoint* encoder,
                                          EmbeddingSource src, std::ostream* warn = nullptr) {
  if (src == EmbeddingSource::xvector_raw) return raw;
  if (encoder == nullptr) throw ContractError(std::string("embedding source ") + to_string(src) + " needs an encoder");
  switch (src) {
    case EmbeddingSource::clustergan: return encode(*encoder, raw, EncodeMode::clustergan_concat, warn);
    case EmbeddingSource::mcgan: return encode(*encoder, raw, EncodeMode::mcgan_logits, warn);
    default: break;
  }
  const EncodeMode mode =
      encoder->provenance.stage == Stage::mcgan ? EncodeMode::mcgan_logits : EncodeMode::clustergan_concat;
  return fuse(raw, encode(*encoder, raw, mode, warn));
}

// Clusters the rows of `x` with the configured back-end.
inline DiarizeDiagnostics cluster_rows(const EmbeddingMatrix& x, const DiarizeConfig& cfg, ClusterAssignment& out) {
  const auto n = static_cast<std::size_t>(x.rows());
  DiarizeDiagnostics diag;
  diag.n_segments = n;
  if (n == 0) {
    out = {};
    return diag;
  }
  if (cfg.known_k && (*cfg.known_k < 1 || *cfg.known_k > n))
    throw RangeError("known k = " + std::to_string(*cfg.known_k) + " outside [1, " + std::to_string(n) + "]");
  if (n == 1) {
    out.labels = {0};
    out.k = 1;
    out.inertia = 0.0;
    return diag;
  }
  switch (cfg.backend) {
    case Backend::kmeans: {
      std::size_t k = 0;
      if (cfg.known_k) {
        k = *cfg.known_k;
      } else {
        diag.nme = nme_select(cosine_affinity(x), cfg.p_range, cfg.k_max);
        k = diag.nme->k_hat;
      }
      out = kmeans(l2_normalize_rows(x), k, cfg.kmeans);
      break;
    }
    case Backend::sc_fixed_p: {
      const std::size_t p = std::clamp<std::size_t>(cfg.fixed_p, 1, n - 1);
      const SpectralMode mode =
          cfg.known_k ? SpectralMode::known(*cfg.known_k, p) : SpectralMode::estimate_k({p, p}, cfg.k_max);
      SpectralResult r = spectral_cluster(x, mode, cfg.kmeans);
      out = std::move(r.assignment);
      diag.nme = std::move(r.nme);
      diag.p_used = r.p_used;
      break;
    }
    case Backend::nme_sc: {
      const AffinityMatrix a = cosine_affinity(x);
      SpectralResult r;
      if (cfg.known_k) {
        NmeResult nme = nme_select(a, cfg.p_range, cfg.k_max);
        r = spectral_cluster_affinity(a, SpectralMode::known(*cfg.known_k, nme.p_hat), cfg.kmeans);
        r.nme = std::move(nme);
      } else {
        r = spectral_cluster_affinity(a, SpectralMode::estimate_k(cfg.p_range, cfg.k_max), cfg.kmeans);
      }
      out = std::move(r.assignment);
      diag.nme = std::move(r.nme);
      diag.p_used = r.p_used;
      break;
    }
  }
  diag.inertia = out.inertia;
  return diag;
}

namespace detail {

template <typename Fn>
auto with_session(const std::string& session, Fn&& fn) -> decltype(fn()) {
  const std::string pre = "session " + session + ": ";
  try {
    return fn();
  } catch (const ShapeError& e) {
    throw ShapeError(pre + e.what());
  } catch (const RangeError& e) {
    throw RangeError(pre + e.what());
  } catch (const ContractError& e) {
    throw ContractError(pre + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(pre + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(pre + e.what());
  }
}

}  // namespace detail

// `raw` holds one x-vector per segment of uniform_segments(sad).
inline DiarizeResult run_diarization(const SadIntervals& sad, const EmbeddingMatrix& raw, const MlpCheckpoint* encoder,
                                     const DiarizeConfig& cfg, std::ostream* warn = nullptr) {
  return detail::with_session(sad.session, [&] {
    DiarizeResult res;
    res.segments = uniform_segments(sad, cfg.segmentation);
    if (static_cast<std::size_t>(raw.rows()) != res.segments.size())
      throw ShapeError("embedding matrix has " + std::to_string(raw.rows()) + " rows for " +
                       std::to_string(res.segments.size()) + " segments");
    const EmbeddingMatrix x = session_embeddings(raw, encoder, cfg.embedding, warn);
    ClusterAssignment assign;
    res.diagnostics = cluster_rows(x, cfg, assign);
    res.labels = assign.labels;
    res.k_hat = assign.k;
    res.timeline = labels_to_timeline(res.segments, res.labels, sad.session);
    return res;
  });
}

}  // namespace diarkit
