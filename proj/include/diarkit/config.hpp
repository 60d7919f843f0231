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

// Run configuration: one flat key = value file covering training, fine-tuning,
// clustering, segmentation, scoring and the synthetic corpus. Unknown keys
// and repeated keys are errors. '#' starts a comment.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "diarkit/errors.hpp"
#include "diarkit/gan_train.hpp"
#include "diarkit/nets.hpp"
#include "diarkit/pipeline.hpp"
#include "diarkit/proto_train.hpp"
#include "diarkit/rng.hpp"
#include "diarkit/synth.hpp"

namespace diarkit {

struct RunConfig {
  std::uint64_t seed = 1;
  GanTrainConfig gan = [] {
    GanTrainConfig g;
    g.iterations = 2000;
    return g;
  }();
  LatentConfig latent;  // d_c comes from the training data
  ArchConfig arch;
  ProtoConfig proto = [] {
    ProtoConfig p;
    p.episodes = 5000;
    return p;
  }();
  DiarizeConfig diarize;
  double collar = 0.25;
  CorpusConfig corpus;

  // Seeds of the individual stages, all derived from `seed`.
  std::uint64_t model_init_seed() const { return derive_seed(seed, 11); }
  std::uint64_t gan_seed() const { return derive_seed(seed, 12); }
  std::uint64_t proto_seed() const { return derive_seed(seed, 13); }
  std::uint64_t kmeans_seed() const { return derive_seed(seed, 14); }

  // Pushes shared settings into the nested configs and checks them.
  void finalize() {
    gan.seed = gan_seed();
    proto.seed = proto_seed();
    diarize.kmeans.seed = kmeans_seed();
    corpus.seed = seed;
    corpus.session.segmentation = diarize.segmentation;
    gan.validate();
    proto.validate();
    diarize.segmentation.validate();
    corpus.validate();
    if (!(latent.sigma > 0) || latent.d_n == 0) throw ConfigError("latent.sigma must be > 0 and latent.d_n >= 1");
    if (arch.hidden == 0 || arch.encoder_wide == 0) throw ConfigError("arch widths must be positive");
    if (!(collar >= 0)) throw ConfigError("score.collar must be >= 0");
    if (diarize.k_max < 1) throw ConfigError("cluster.k_max must be >= 1");
    if (diarize.fixed_p < 1) throw ConfigError("cluster.fixed_p must be >= 1");
    if (diarize.kmeans.restarts < 1 || diarize.kmeans.max_iter < 1) throw ConfigError("kmeans restarts and max_iter must be >= 1");
  }
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline double cfg_double(const std::string& key, std::string_view s) {
  double v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
    throw ConfigError("key " + key + ": '" + std::string(s) + "' is not a number");
  return v;
}

template <typename Int>
Int cfg_int(const std::string& key, std::string_view s) {
  Int v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ConfigError("key " + key + ": '" + std::string(s) + "' is not a non-negative integer");
  return v;
}

inline std::vector<std::string_view> split_commas(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t c = s.find(',', pos);
    out.push_back(s.substr(pos, c == std::string_view::npos ? std::string_view::npos : c - pos));
    if (c == std::string_view::npos) break;
    pos = c + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

struct ConfigField {
  std::string key;
  std::string note;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline const std::vector<ConfigField>& config_fields() {
  using detail::cfg_double;
  using detail::cfg_int;
  using detail::fmt_double;
  using std::size_t;
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    auto real = [&f](std::string key, std::string note, auto member) {
      f.push_back({key, std::move(note), [member](const RunConfig& c) { return fmt_double(member(const_cast<RunConfig&>(c))); },
                   [member, key](RunConfig& c, const std::string& v) { member(c) = cfg_double(key, v); }});
    };
    auto count = [&f](std::string key, std::string note, auto member) {
      f.push_back({key, std::move(note), [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
                   [member, key](RunConfig& c, const std::string& v) {
                     member(c) = cfg_int<std::remove_reference_t<decltype(member(c))>>(key, v);
                   }});
    };
    const std::string pub = "published";

    count("seed", "master seed; every stage seed is derived from it", [](RunConfig& c) -> std::uint64_t& { return c.seed; });

    real("gan.lambda", pub + ": gradient penalty coefficient", [](RunConfig& c) -> double& { return c.gan.lambda_gp; });
    count("gan.batch", pub + ": mini-batch size", [](RunConfig& c) -> size_t& { return c.gan.batch; });
    count("gan.n_critic", pub + ": critic updates per generator update", [](RunConfig& c) -> size_t& { return c.gan.n_critic; });
    real("gan.lr", pub + ": Adam learning rate", [](RunConfig& c) -> double& { return c.gan.adam.lr; });
    real("gan.beta1", pub + ": Adam beta1", [](RunConfig& c) -> double& { return c.gan.adam.beta1; });
    real("gan.beta2", pub + ": Adam beta2", [](RunConfig& c) -> double& { return c.gan.adam.beta2; });
    real("gan.eps", "Adam epsilon; not published", [](RunConfig& c) -> double& { return c.gan.adam.eps; });
    real("gan.w1", pub + ": adversarial loss weight", [](RunConfig& c) -> double& { return c.gan.w1; });
    real("gan.w2", pub + ": cosine recovery loss weight", [](RunConfig& c) -> double& { return c.gan.w2; });
    real("gan.w3", pub + ": cross-entropy loss weight", [](RunConfig& c) -> double& { return c.gan.w3; });
    count("gan.iterations", "outer iterations; not published, artifact default", [](RunConfig& c) -> size_t& { return c.gan.iterations; });

    real("latent.sigma", pub + ": std of the continuous latent", [](RunConfig& c) -> double& { return c.latent.sigma; });
    count("latent.d_n", pub + ": continuous latent dimension", [](RunConfig& c) -> size_t& { return c.latent.d_n; });
    count("arch.hidden", pub + ": hidden layer width", [](RunConfig& c) -> size_t& { return c.arch.hidden; });
    count("arch.encoder_wide", pub + ": width of the third encoder hidden layer",
          [](RunConfig& c) -> size_t& { return c.arch.encoder_wide; });

    count("proto.n_s", pub + ": supports per speaker", [](RunConfig& c) -> size_t& { return c.proto.n_s; });
    count("proto.n_q", pub + ": queries per speaker", [](RunConfig& c) -> size_t& { return c.proto.n_q; });
    f.push_back({"proto.n_c_choices", pub + ": speakers per episode, drawn from this set",
                 [](const RunConfig& c) {
                   std::string s;
                   for (size_t v : c.proto.n_c_choices) s += (s.empty() ? "" : ",") + std::to_string(v);
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.proto.n_c_choices.clear();
                   for (auto part : detail::split_commas(v))
                     c.proto.n_c_choices.push_back(cfg_int<size_t>("proto.n_c_choices", detail::trim(part)));
                 }});
    count("proto.frozen_layers", pub + ": leading encoder layers kept fixed",
          [](RunConfig& c) -> size_t& { return c.proto.frozen_layers; });
    real("proto.lr", "Adam learning rate; not published, pre-training value reused", [](RunConfig& c) -> double& { return c.proto.adam.lr; });
    real("proto.beta1", "Adam beta1; pre-training value reused", [](RunConfig& c) -> double& { return c.proto.adam.beta1; });
    real("proto.beta2", "Adam beta2; pre-training value reused", [](RunConfig& c) -> double& { return c.proto.adam.beta2; });
    real("proto.eps", "Adam epsilon; not published", [](RunConfig& c) -> double& { return c.proto.adam.eps; });
    count("proto.episodes", "episodes; not published, artifact default", [](RunConfig& c) -> size_t& { return c.proto.episodes; });

    real("segment.win", pub + ": window length in seconds", [](RunConfig& c) -> double& { return c.diarize.segmentation.win; });
    f.push_back({"segment.overlap", pub + ": window overlap in seconds",
                 [](const RunConfig& c) { return fmt_double(c.diarize.segmentation.win - c.diarize.segmentation.hop); },
                 [](RunConfig& c, const std::string& v) {
                   c.diarize.segmentation.hop = c.diarize.segmentation.win - cfg_double("segment.overlap", v);
                 }});
    real("segment.min_len", "segments shorter than this merge into the previous one",
         [](RunConfig& c) -> double& { return c.diarize.segmentation.min_len; });

    f.push_back({"diarize.embedding", "xvector-raw | clustergan | mcgan | fused",
                 [](const RunConfig& c) { return std::string(to_string(c.diarize.embedding)); },
                 [](RunConfig& c, const std::string& v) { c.diarize.embedding = parse_embedding_source(v); }});
    f.push_back({"diarize.backend", "kmeans | sc-fixed-p | nme-sc",
                 [](const RunConfig& c) { return std::string(to_string(c.diarize.backend)); },
                 [](RunConfig& c, const std::string& v) { c.diarize.backend = parse_backend(v); }});
    count("cluster.k_max", "largest speaker count considered", [](RunConfig& c) -> size_t& { return c.diarize.k_max; });
    count("cluster.p_min", "smallest neighbour count searched; 0 = automatic",
          [](RunConfig& c) -> size_t& { return c.diarize.p_range.lo; });
    count("cluster.p_max", "largest neighbour count searched; 0 = automatic",
          [](RunConfig& c) -> size_t& { return c.diarize.p_range.hi; });
    count("cluster.fixed_p", "neighbour count of the sc-fixed-p back-end", [](RunConfig& c) -> size_t& { return c.diarize.fixed_p; });
    count("kmeans.restarts", "k-means++ restarts", [](RunConfig& c) -> size_t& { return c.diarize.kmeans.restarts; });
    count("kmeans.max_iter", "Lloyd iterations per restart", [](RunConfig& c) -> size_t& { return c.diarize.kmeans.max_iter; });

    real("score.collar", pub + ": collar in seconds around reference boundaries", [](RunConfig& c) -> double& { return c.collar; });

    count("corpus.dim", "embedding dimension", [](RunConfig& c) -> size_t& { return c.corpus.dim; });
    count("corpus.train_speakers", "training speakers", [](RunConfig& c) -> size_t& { return c.corpus.train_speakers; });
    count("corpus.train_per_speaker", "training embeddings per speaker",
          [](RunConfig& c) -> size_t& { return c.corpus.train_per_speaker; });
    count("corpus.pool_speakers", "session speakers, disjoint from training", [](RunConfig& c) -> size_t& { return c.corpus.pool_speakers; });
    real("corpus.min_angle_deg", "minimum angle between speaker means", [](RunConfig& c) -> double& { return c.corpus.min_angle_deg; });
    real("corpus.train_std", "within-speaker std of training embeddings", [](RunConfig& c) -> double& { return c.corpus.train_std; });
    real("corpus.session_std", "within-speaker std of session embeddings",
         [](RunConfig& c) -> double& { return c.corpus.session.within_std; });
    count("corpus.nuisance_rank", "rank of the shared nuisance subspace; 0 = none",
          [](RunConfig& c) -> size_t& { return c.corpus.nuisance_rank; });
    real("corpus.nuisance_std", "std along the nuisance subspace", [](RunConfig& c) -> double& { return c.corpus.nuisance_std; });
    count("corpus.sessions", "number of sessions", [](RunConfig& c) -> size_t& { return c.corpus.sessions; });
    real("corpus.session_duration", "session length in seconds", [](RunConfig& c) -> double& { return c.corpus.session.duration; });
    real("corpus.turn_mean", "mean turn length in seconds (exponential)", [](RunConfig& c) -> double& { return c.corpus.session.turn_mean; });
    real("corpus.turn_min", "shortest turn in seconds", [](RunConfig& c) -> double& { return c.corpus.session.turn_min; });
    real("corpus.gap_prob", "chance of a pause after a turn", [](RunConfig& c) -> double& { return c.corpus.session.gap_prob; });
    real("corpus.gap_mean", "mean pause length in seconds", [](RunConfig& c) -> double& { return c.corpus.session.gap_mean; });
    f.push_back({"corpus.k_weights", "relative weights of 2..7 speakers per session",
                 [](const RunConfig& c) {
                   std::string s;
                   for (double v : c.corpus.k_weights) s += (s.empty() ? "" : ",") + fmt_double(v);
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.corpus.k_weights.clear();
                   for (auto part : detail::split_commas(v))
                     c.corpus.k_weights.push_back(cfg_double("corpus.k_weights", detail::trim(part)));
                 }});
    return f;
  }();
  return fields;
}

inline const ConfigField& find_config_field(const std::string& key) {
  for (const auto& f : config_fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  find_config_field(key).set(cfg, value);
}

// Applies the file on top of `cfg`. Keys not present keep their values.
inline void apply_config_text(RunConfig& cfg, std::string_view text) {
  std::set<std::string> seen;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string value(detail::trim(line.substr(eq + 1)));
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(line_no) + ": key " + key + " repeated");
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  apply_config_text(cfg, text);
  return cfg;
}

// Every key with its current value and note.
inline std::string format_config(const RunConfig& cfg) {
  constexpr std::size_t kNoteColumn = 32;
  std::string out;
  for (const auto& f : config_fields()) {
    const std::string lhs = f.key + " = " + f.get(cfg);
    out += lhs;
    out.append(lhs.size() + 2 > kNoteColumn ? 2 : kNoteColumn - lhs.size(), ' ');
    out += "# " + f.note + "\n";
  }
  return out;
}

inline std::uint64_t config_digest(const RunConfig& cfg) { return fnv1a64(format_config(cfg)); }

}  // namespace diarkit
