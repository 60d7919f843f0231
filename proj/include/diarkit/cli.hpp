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

// The corpus -> train -> finetune -> diarize -> score workflow on disk.
//
// Corpus directory:   manifest.txt, config.cfg, train.emb, train.lab,
//                     sessions/<id>.{emb,sad,rttm,lab}
// Model directory:    generator.ckpt, discriminator.ckpt, encoder.ckpt,
//                     gan_log.csv, mcgan_encoder.ckpt, proto_log.csv
//                     (each .ckpt has a .ckpt.manifest next to it)
// Hypothesis dir:     <id>.rttm, <id>.lab, diagnostics.csv, score.csv
//
// Every file is written atomically and depends only on inputs and seed.

#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "diarkit/checkpoint.hpp"
#include "diarkit/config.hpp"
#include "diarkit/errors.hpp"
#include "diarkit/formats.hpp"
#include "diarkit/gan_train.hpp"
#include "diarkit/io.hpp"
#include "diarkit/pipeline.hpp"
#include "diarkit/proto_train.hpp"
#include "diarkit/score.hpp"
#include "diarkit/synth.hpp"

namespace diarkit::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kDivergence = 4 };

// Maps a library error onto the process exit status.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kUsage;
  if (dynamic_cast<const DivergenceError*>(&e) || dynamic_cast<const NumericalError*>(&e)) return kDivergence;
  return kData;
}

struct ConfigSources {
  std::vector<std::string> files;  // applied in order
  std::vector<std::string> sets;   // "key=value", applied after the files
  std::optional<std::uint64_t> seed;
};

inline RunConfig load_run_config(const ConfigSources& src) {
  RunConfig cfg;
  for (const auto& f : src.files) {
    try {
      apply_config_text(cfg, read_text_file(f));
    } catch (const ConfigError& e) {
      throw ConfigError(f + ": " + e.what());
    }
  }
  for (const auto& kv : src.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, std::string(detail::trim(std::string_view(kv).substr(0, eq))),
                     std::string(detail::trim(std::string_view(kv).substr(eq + 1))));
  }
  if (src.seed) cfg.seed = *src.seed;
  cfg.finalize();
  return cfg;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. When several calls
// throw, the one with the lowest index is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(jobs, n); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---- corpus manifest ----

struct ManifestSession {
  std::string id;
  std::uint64_t seed = 0;
  std::size_t k = 0;
  std::size_t n_segments = 0;
};

struct Manifest {
  std::uint64_t seed = 0;
  std::string config_digest;
  std::size_t train_speakers = 0;
  std::size_t train_rows = 0;
  std::vector<ManifestSession> sessions;
};

inline std::string format_manifest(const Manifest& m) {
  std::ostringstream os;
  os << "diarkit-corpus 1\n";
  os << "seed " << m.seed << "\n";
  os << "config_digest " << m.config_digest << "\n";
  os << "train train.emb train.lab " << m.train_speakers << " " << m.train_rows << "\n";
  for (const auto& s : m.sessions) os << "session " << s.id << " " << s.seed << " " << s.k << " " << s.n_segments << "\n";
  return os.str();
}

inline Manifest parse_manifest(std::string_view text) {
  Manifest m;
  bool header = false;
  detail::for_each_line(text, [&](std::string_view line, std::size_t no) {
    const auto f = detail::split_ws(line);
    if (f.empty()) return;
    if (!header) {
      if (f.size() != 2 || f[0] != "diarkit-corpus" || f[1] != "1") throw ParseError("not a diarkit corpus manifest", no);
      header = true;
      return;
    }
    if (f[0] == "seed" && f.size() == 2) {
      m.seed = detail::parse_int<std::uint64_t>(f[1], no, "seed");
    } else if (f[0] == "config_digest" && f.size() == 2) {
      m.config_digest = std::string(f[1]);
    } else if (f[0] == "train" && f.size() == 5) {
      m.train_speakers = detail::parse_int<std::size_t>(f[3], no, "speaker count");
      m.train_rows = detail::parse_int<std::size_t>(f[4], no, "row count");
    } else if (f[0] == "session" && f.size() == 5) {
      m.sessions.push_back({std::string(f[1]), detail::parse_int<std::uint64_t>(f[2], no, "seed"),
                            detail::parse_int<std::size_t>(f[3], no, "speaker count"),
                            detail::parse_int<std::size_t>(f[4], no, "segment count")});
    } else {
      throw ParseError("unrecognized manifest line", no);
    }
  });
  if (!header) throw ParseError("empty manifest", 1);
  return m;
}

inline Manifest read_manifest(const fs::path& corpus) {
  try {
    return parse_manifest(read_text_file(corpus / "manifest.txt"));
  } catch (const ParseError& e) {
    throw Error((corpus / "manifest.txt").string() + ": " + e.what());
  }
}

inline fs::path session_path(const fs::path& corpus, const std::string& id, const char* ext) {
  return corpus / "sessions" / (id + ext);
}

// Reads a text file and re-throws parse errors with the file name in front.
template <typename Parse>
auto parse_file(const fs::path& p, Parse parse) {
  const std::string text = read_text_file(p);
  try {
    return parse(text);
  } catch (const ParseError& e) {
    throw Error(p.string() + ": " + e.what());
  }
}

inline LabeledEmbeddings read_training_set(const fs::path& corpus) {
  LabeledEmbeddings d;
  d.x = parse_file(corpus / "train.emb", parse_emb_text);
  for (int y : parse_file(corpus / "train.lab", parse_labels)) d.labels.push_back(y);
  int top = -1;
  for (int y : d.labels) top = std::max(top, y);
  d.num_speakers = static_cast<std::size_t>(top + 1);
  d.validate();
  return d;
}

// ---- simulate ----

inline Manifest cmd_simulate(const RunConfig& cfg, const fs::path& out, std::size_t jobs = 1) {
  fs::create_directories(out / "sessions");
  SynthCorpus c = gen_corpus_base(cfg.corpus);
  c.sessions.resize(cfg.corpus.sessions);

  Manifest m;
  m.seed = cfg.seed;
  m.config_digest = hex64(config_digest(cfg));
  m.train_speakers = c.train.num_speakers;
  m.train_rows = static_cast<std::size_t>(c.train.x.rows());
  m.sessions.resize(c.sessions.size());

  write_text_atomic(out / "config.cfg", format_config(cfg));
  write_text_atomic(out / "train.emb", format_emb_text(c.train.x));
  write_text_atomic(out / "train.lab", format_labels(std::vector<int>(c.train.labels.begin(), c.train.labels.end())));
  parallel_for(c.sessions.size(), jobs, [&](std::size_t i) {
    c.sessions[i] = gen_corpus_session(cfg.corpus, c.speakers.means, c.nuisance, i);
    const SynthSession& s = c.sessions[i];
    write_text_atomic(session_path(out, s.id, ".emb"), format_emb_text(s.x));
    write_text_atomic(session_path(out, s.id, ".sad"), format_sad(s.sad));
    write_text_atomic(session_path(out, s.id, ".rttm"), format_rttm(s.reference));
    std::vector<int> truth(s.segment_speaker.begin(), s.segment_speaker.end());
    write_text_atomic(session_path(out, s.id, ".lab"), format_labels(truth));
    m.sessions[i] = {s.id, c.session_seeds[i], s.k, s.segments.size()};
  });
  write_text_atomic(out / "manifest.txt", format_manifest(m));
  return m;
}

// ---- train / finetune ----

inline void stamp(MlpCheckpoint& ck, const RunConfig& cfg) { ck.provenance.config_digest = hex64(config_digest(cfg)); }

// Writes G, D, E and the loss log. A diverged run still writes the last good
// models and the log, then throws DivergenceError.
inline GanTrainResult cmd_train(const RunConfig& cfg, const fs::path& corpus, const fs::path& models,
                                std::ostream* progress = nullptr) {
  const LabeledEmbeddings data = read_training_set(corpus);
  LatentConfig latent = cfg.latent;
  latent.d_c = data.num_speakers;
  ModelSet init = build_models(static_cast<std::size_t>(data.x.cols()), latent, cfg.arch, cfg.model_init_seed());
  GanTrainResult r = train_clustergan(data, std::move(init), cfg.gan, progress);
  fs::create_directories(models);
  stamp(r.models.generator, cfg);
  stamp(r.models.discriminator, cfg);
  stamp(r.models.encoder, cfg);
  save_checkpoint(r.models.generator, models / "generator.ckpt");
  save_checkpoint(r.models.discriminator, models / "discriminator.ckpt");
  save_checkpoint(r.models.encoder, models / "encoder.ckpt");
  std::ostringstream log;
  write_gan_log_csv(log, r.log);
  write_text_atomic(models / "gan_log.csv", log.str());
  if (r.aborted) throw DivergenceError("training diverged: " + *r.aborted);
  return r;
}

inline FinetuneResult cmd_finetune(const RunConfig& cfg, const fs::path& corpus, const fs::path& models,
                                   std::ostream* progress = nullptr) {
  const LabeledEmbeddings data = read_training_set(corpus);
  const MlpCheckpoint enc = load_checkpoint(models / "encoder.ckpt");
  FinetuneResult r = finetune_mcgan(enc, data, cfg.proto, false, progress);
  stamp(r.encoder, cfg);
  save_checkpoint(r.encoder, models / "mcgan_encoder.ckpt");
  std::ostringstream log;
  write_proto_log_csv(log, r.log);
  write_text_atomic(models / "proto_log.csv", log.str());
  if (r.aborted) throw DivergenceError("fine-tuning diverged: " + *r.aborted);
  return r;
}

// ---- diarize ----

struct KnownK {
  enum class Mode { none, fixed, oracle } mode = Mode::none;
  std::size_t k = 0;
};

inline KnownK parse_known_k(const std::string& s) {
  if (s.empty() || s == "none") return {};
  if (s == "oracle") return {KnownK::Mode::oracle, 0};
  std::size_t k = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), k);
  if (ec != std::errc() || p != s.data() + s.size() || k == 0)
    throw ConfigError("--known-k expects a positive integer or 'oracle', got '" + s + "'");
  return {KnownK::Mode::fixed, k};
}

// The encoder a given embedding source needs, or nullopt for raw x-vectors.
inline std::optional<fs::path> encoder_for(EmbeddingSource src, const fs::path& models) {
  switch (src) {
    case EmbeddingSource::xvector_raw: return std::nullopt;
    case EmbeddingSource::clustergan: return models / "encoder.ckpt";
    default: return models / "mcgan_encoder.ckpt";
  }
}

struct SessionDiagnostics {
  std::string session;
  std::size_t n_segments = 0;
  std::size_t k_hat = 0;
  std::size_t p_hat = 0;
  double inertia = 0.0;
};

inline std::string format_diagnostics(const RunConfig& cfg, const std::vector<SessionDiagnostics>& rows) {
  std::string out = "session,embedding,backend,n_segments,p_hat,k_hat,inertia\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%s,%zu,%zu,%zu,%.10g\n", r.session.c_str(), to_string(cfg.diarize.embedding),
                  to_string(cfg.diarize.backend), r.n_segments, r.p_hat, r.k_hat, r.inertia);
    out += buf;
  }
  return out;
}

inline std::vector<SessionDiagnostics> cmd_diarize(const RunConfig& cfg, const fs::path& corpus, const fs::path& models,
                                                   const fs::path& out, KnownK known = {}, std::size_t jobs = 1,
                                                   std::optional<fs::path> encoder_path = std::nullopt) {
  const Manifest m = read_manifest(corpus);
  std::optional<MlpCheckpoint> enc;
  if (!encoder_path) encoder_path = encoder_for(cfg.diarize.embedding, models);
  if (encoder_path && cfg.diarize.embedding != EmbeddingSource::xvector_raw) enc = load_checkpoint(*encoder_path);
  fs::create_directories(out);
  std::vector<SessionDiagnostics> diag(m.sessions.size());
  parallel_for(m.sessions.size(), jobs, [&](std::size_t i) {
    const ManifestSession& ms = m.sessions[i];
    auto sads = parse_file(session_path(corpus, ms.id, ".sad"), parse_sad);
    SadIntervals sad = sads.count(ms.id) ? sads.at(ms.id) : SadIntervals{};
    sad.session = ms.id;
    const EmbeddingMatrix raw = parse_file(session_path(corpus, ms.id, ".emb"), parse_emb_text);
    DiarizeConfig dc = cfg.diarize;
    if (known.mode == KnownK::Mode::fixed) dc.known_k = known.k;
    if (known.mode == KnownK::Mode::oracle) dc.known_k = ms.k;
    const DiarizeResult r = run_diarization(sad, raw, enc ? &*enc : nullptr, dc);
    write_text_atomic(out / (ms.id + ".rttm"), format_rttm(r.timeline));
    write_text_atomic(out / (ms.id + ".lab"), format_labels(r.labels));
    diag[i] = {ms.id, r.diagnostics.n_segments, r.k_hat,
               r.diagnostics.nme ? r.diagnostics.nme->p_hat : r.diagnostics.p_used, r.diagnostics.inertia};
  });
  write_text_atomic(out / "diagnostics.csv", format_diagnostics(cfg, diag));
  return diag;
}

// ---- score ----

struct ScoreSummary {
  std::vector<ScoreRow> rows;
  DerReport pooled;
  MapdPoc counts;
  double mean_purity = 0.0;
};

inline ScoreSummary cmd_score(const fs::path& corpus, const fs::path& hyp_dir, double collar) {
  const Manifest m = read_manifest(corpus);
  if (m.sessions.empty()) throw ContractError("corpus has no sessions");
  ScoreSummary s;
  std::vector<CountEstimate> counts;
  for (const ManifestSession& ms : m.sessions) {
    auto refs = parse_file(session_path(corpus, ms.id, ".rttm"), parse_rttm);
    auto hyps = parse_file(hyp_dir / (ms.id + ".rttm"), parse_rttm);
    Timeline ref = refs.count(ms.id) ? refs.at(ms.id) : Timeline{};
    Timeline hyp = hyps.count(ms.id) ? hyps.at(ms.id) : Timeline{};
    ref.session = hyp.session = ms.id;
    ScoreRow row;
    row.session = ms.id;
    row.der = der(ref, hyp, collar);
    row.k_true = static_cast<int>(ref.speakers().size());
    row.k_est = static_cast<int>(hyp.speakers().size());
    const auto truth = parse_file(session_path(corpus, ms.id, ".lab"), parse_labels);
    const auto labels = parse_file(hyp_dir / (ms.id + ".lab"), parse_labels);
    row.purity = truth.empty() ? 1.0 : cluster_purity(truth, labels);
    counts.push_back({ms.id, row.k_true, row.k_est});
    s.pooled.scored += row.der.scored;
    s.pooled.confusion += row.der.confusion;
    s.pooled.missed += row.der.missed;
    s.pooled.false_alarm += row.der.false_alarm;
    s.mean_purity += row.purity;
    s.rows.push_back(std::move(row));
  }
  s.pooled.der = 100.0 * (s.pooled.confusion + s.pooled.missed + s.pooled.false_alarm) / s.pooled.scored;
  s.mean_purity /= static_cast<double>(s.rows.size());
  s.counts = mapd_poc(counts);
  write_text_atomic(hyp_dir / "score.csv", format_score_csv(s.rows));
  return s;
}

inline void print_score_table(std::ostream& os, const ScoreSummary& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-12s %9s %9s %9s %9s %7s %6s %6s %7s\n", "session", "scored_s", "conf_s", "miss_s",
                "fa_s", "DER%", "k", "k_hat", "purity");
  os << buf;
  for (const ScoreRow& r : s.rows) {
    std::snprintf(buf, sizeof buf, "%-12s %9.3f %9.3f %9.3f %9.3f %7.2f %6d %6d %7.4f\n", r.session.c_str(),
                  r.der.scored, r.der.confusion, r.der.missed, r.der.false_alarm, r.der.der, r.k_true, r.k_est,
                  r.purity);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%-12s %9.3f %9.3f %9.3f %9.3f %7.2f\n", "ALL", s.pooled.scored, s.pooled.confusion,
                s.pooled.missed, s.pooled.false_alarm, s.pooled.der);
  os << buf;
  std::snprintf(buf, sizeof buf, "DER %.2f%%  MAPD %.2f%%  POC %.2f%%  mean purity %.4f\n", s.pooled.der, s.counts.mapd,
                s.counts.poc, s.mean_purity);
  os << buf;
}

}  // namespace diarkit::cli
