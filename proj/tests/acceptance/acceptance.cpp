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

// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// fails. Arguments select criteria by number; none runs all nine.
//
//   1 gradient suite          4 ClusterGAN trainability   7 fusion consistency
//   2 DER oracle equivalence  5 fine-tuning improvement   8 shipped config values
//   3 NME-SC planted recovery 6 end-to-end planted DER    9 CLI determinism

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "diarkit/cli.hpp"
#include "diarkit/config.hpp"
#include "diarkit/gan_train.hpp"
#include "diarkit/pipeline.hpp"
#include "diarkit/proto_train.hpp"
#include "diarkit/score.hpp"
#include "diarkit/synth.hpp"
#include "support/cli_runner.hpp"
#include "support/der_oracle.hpp"
#include "support/oracles.hpp"

namespace {

using namespace diarkit;
namespace fs = std::filesystem;
using testing::fd_param_grad;
using testing::kFdFloor;
using testing::max_rel_err;
using testing::random_matrix;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

RunConfig desk_config() {
  RunConfig c = parse_config(read_text_file(testing::desk_config()));
  c.finalize();
  return c;
}

// ---- 1 ----

ModelSet tiny_models(std::uint64_t seed) {
  LatentConfig lc;
  lc.d_n = 3;
  lc.d_c = 3;
  lc.sigma = 0.5;
  ModelSet m = build_models(4, lc, ArchConfig{5, 7}, seed);
  Rng rng(derive_seed(seed, 99));
  for (MlpCheckpoint* ck : {&m.generator, &m.discriminator, &m.encoder})
    for (std::size_t l = 0; l < ck->params.size(); ++l)
      ck->params.mutable_layer(l).bias = random_matrix(ck->params.layer(l).bias.size(), 1, rng, 0.3);
  return m;
}

LatentBatch tiny_latent(const LatentConfig& lc, std::size_t m, Rng& rng) {
  std::vector<SpeakerId> labels(m);
  for (auto& y : labels) y = static_cast<SpeakerId>(uniform_index(rng, lc.d_c));
  return sample_latent(m, lc, labels, rng);
}

// Recovery loss of the encoder on its own, for parameter gradients.
struct EncoderLoss {
  double value;
  MlpGradients grads;
};

EncoderLoss encoder_loss(const MlpParams& E, const Matrix& x, const LatentBatch& z, bool cos_part) {
  const Tape t = mlp_forward(E, x);
  const auto d_n = static_cast<Eigen::Index>(z.d_n);
  const Eigen::Index d_c = z.z.cols() - d_n;
  Matrix up = Matrix::Zero(x.rows(), z.z.cols());
  double value = 0;
  if (cos_part) {
    const LossGrad g = cosine_recovery_loss(t.output().leftCols(d_n), z.z_n());
    up.leftCols(d_n) = g.grad;
    value = g.value;
  } else {
    const LossGrad g = cluster_ce_loss(t.output().rightCols(d_c), z.z_c());
    up.rightCols(d_c) = g.grad;
    value = g.value;
  }
  return {value, mlp_backward(t, up, GradAt::final_logits).params};
}

Outcome gradient_suite() {
  constexpr int kModels = 50;
  std::vector<std::pair<std::string, double>> worst = {{"COS", 0}, {"CE", 0}, {"proto", 0}, {"GP", 0},
                                                       {"critic", 0}, {"gen", 0}, {"enc", 0}};
  GanTrainConfig cfg;
  cfg.batch = 6;
  for (std::uint64_t s = 0; s < kModels; ++s) {
    const ModelSet m = tiny_models(s);
    const MlpParams& G = m.generator.params;
    const MlpParams& D = m.discriminator.params;
    const MlpParams& E = m.encoder.params;
    Rng rng(derive_seed(s, 7));
    const LatentBatch z = tiny_latent(m.encoder.latent, 6, rng);
    const Matrix x = random_matrix(6, 4, rng);
    const Matrix xr = random_matrix(6, 4, rng), xf = random_matrix(6, 4, rng);
    std::vector<double> eps(6);
    for (double& e : eps) e = uniform01(rng);
    const Matrix xs = random_matrix(6, 4, rng), xq = random_matrix(9, 4, rng);

    auto track = [&](std::size_t i, const MlpGradients& a, const MlpGradients& b) {
      worst[i].second = std::max(worst[i].second, max_rel_err(a, b, kFdFloor));
    };
    for (int part = 0; part < 2; ++part) {
      const bool cos = part == 0;
      track(part, encoder_loss(E, x, z, cos).grads,
            fd_param_grad(E, [&](const MlpParams& e) { return encoder_loss(e, x, z, cos).value; }));
    }
    track(2, proto_episode_objective(E, xs, xq, 3).grads,
          fd_param_grad(E, [&](const MlpParams& e) { return proto_episode_objective(e, xs, xq, 3).value; }));
    track(3, gradient_penalty_at(D, xr, xf, eps).grads,
          fd_param_grad(D, [&](const MlpParams& d) { return gradient_penalty_at(d, xr, xf, eps).penalty; }));
    track(4, critic_objective(D, xr, xf, eps, cfg).grads,
          fd_param_grad(D, [&](const MlpParams& d) { return critic_objective(d, xr, xf, eps, cfg).diag.loss; }));
    const GenEncObjective ge = gen_enc_objective(G, E, D, z, cfg);
    track(5, ge.grad_g, fd_param_grad(G, [&](const MlpParams& g) { return gen_enc_objective(g, E, D, z, cfg).diag.total; }));
    track(6, ge.grad_e, fd_param_grad(E, [&](const MlpParams& e) { return gen_enc_objective(G, e, D, z, cfg).diag.total; }));
  }
  Outcome o{true, "50 models each, max rel err"};
  for (const auto& [name, err] : worst) {
    o.detail += " " + name + fmt("=%.1e", err);
    o.pass = o.pass && err < 1e-4;
  }
  return o;
}

// ---- 2 ----

Outcome der_oracle() {
  Rng rng(2026);
  std::uniform_int_distribution<int> nspk(1, 6);
  double worst = 0, self = 0;
  int n = 0;
  while (n < 200) {
    const Timeline ref = testing::random_timeline(rng, nspk(rng), 12000, "r");
    const Timeline hyp = testing::random_timeline(rng, nspk(rng), 12000, "h");
    if (ref.turns.empty()) continue;
    const double collar = (n % 3 == 0) ? 0.0 : 0.25;
    const double oracle = testing::brute_force_der(ref, hyp, to_ms(collar));
    if (std::isnan(oracle)) continue;
    worst = std::max(worst, std::abs(der(ref, hyp, collar).der - oracle));
    self = std::max(self, der(ref, ref, collar).der);
    ++n;
  }
  return {worst < 1e-9 && self == 0.0,
          "200 timelines, max |der - oracle| " + fmt("%.2e", worst) + ", max DER(ref, ref) " + fmt("%.2g", self)};
}

// ---- 3 ----

Outcome nme_recovery() {
  bool ok = true;
  std::string detail;
  for (std::size_t k = 2; k <= 7; ++k) {
    std::vector<CountEstimate> est;
    for (std::uint64_t s = 0; s < 100; ++s) {
      Rng rng(derive_seed(1000 + k, s));
      const Matrix means = gen_speakers(k, 32, 25.0, rng).means;
      std::vector<std::size_t> who(k);
      for (std::size_t i = 0; i < k; ++i) who[i] = i;
      SessionConfig sc;
      sc.duration = 120.0;
      sc.within_std = 0.08;
      const SynthSession ss = gen_session("k" + std::to_string(k), sc, means, who, rng);
      DiarizeConfig dc;
      dc.embedding = EmbeddingSource::xvector_raw;
      dc.backend = Backend::nme_sc;
      const DiarizeResult r = run_diarization(ss.sad, ss.x, nullptr, dc);
      est.push_back({ss.id, static_cast<int>(k), static_cast<int>(r.k_hat)});
    }
    double abs_dev = 0;
    for (const auto& e : est) abs_dev += std::abs(e.k_est - e.k_true);
    abs_dev /= static_cast<double>(est.size());
    const MapdPoc mp = mapd_poc(est);
    ok = ok && mp.poc >= 95.0 && abs_dev <= 0.05;
    detail += " k=" + std::to_string(k) + fmt(":POC %.0f%%", mp.poc) + fmt("/%.2f", abs_dev);
  }
  return {ok, "POC / mean |k_hat - k| per k:" + detail};
}

// ---- 4 ----

Outcome clustergan_trainability() {
  const RunConfig c = desk_config();
  Rng rng(404);
  const Matrix means = gen_speakers(10, c.corpus.dim, c.corpus.min_angle_deg, rng).means;
  const LabeledEmbeddings train = gen_training_set(means, 100, c.corpus.train_std, rng);
  const LabeledEmbeddings held = gen_training_set(means, 50, c.corpus.train_std, rng);
  LatentConfig lat = c.latent;
  lat.d_c = 10;
  GanTrainConfig g = c.gan;
  g.iterations = 2000;
  const GanTrainResult r = train_clustergan(train, build_models(c.corpus.dim, lat, c.arch, c.model_init_seed()), g);
  if (r.aborted) return {false, "training diverged: " + *r.aborted};
  const double acc = latent_category_accuracy(r.models.encoder, train, held);
  double cos = 0;
  const std::size_t tail = std::min<std::size_t>(50, r.log.size());
  for (std::size_t i = r.log.size() - tail; i < r.log.size(); ++i) cos += r.log[i].cos / static_cast<double>(tail);
  return {acc >= 0.9 && cos <= 0.1,
          "10 speakers, 2000 iterations: held-out accuracy " + fmt("%.3f", acc) + ", COS (last 50) " + fmt("%.4f", cos)};
}

// ---- 5 ----

// Four corpora; one ClusterGAN per corpus, then five fine-tuning runs with
// different seeds, each scored on its own 20 held-out-speaker sessions.
Outcome finetune_improvement() {
  RunConfig c = desk_config();
  int wins = 0, trials = 0;
  double gain = 0;
  for (std::uint64_t grp = 0; grp < 4; ++grp) {
    CorpusConfig cc = c.corpus;
    cc.sessions = 100;
    cc.session.duration = 40.0;
    cc.seed = 100 + grp;
    const SynthCorpus corpus = gen_corpus(cc);
    LatentConfig lat = c.latent;
    lat.d_c = corpus.train.num_speakers;
    GanTrainConfig g = c.gan;
    g.seed = 200 + grp;
    const MlpCheckpoint enc =
        train_clustergan(corpus.train, build_models(cc.dim, lat, c.arch, 300 + grp), g).models.encoder;
    for (std::uint64_t t = 0; t < 5; ++t) {
      ProtoConfig pc = c.proto;
      pc.seed = 400 + grp * 5 + t;
      const MlpCheckpoint ft = finetune_mcgan(enc, corpus.train, pc).encoder;
      double before = 0, after = 0;
      for (std::size_t s = t * 20; s < t * 20 + 20; ++s) {
        const SynthSession& ss = corpus.sessions[s];
        DiarizeConfig dc = c.diarize;
        dc.embedding = EmbeddingSource::clustergan;
        before += cluster_purity(ss.segment_speaker, run_diarization(ss.sad, ss.x, &enc, dc).labels) / 20.0;
        dc.embedding = EmbeddingSource::mcgan;
        after += cluster_purity(ss.segment_speaker, run_diarization(ss.sad, ss.x, &ft, dc).labels) / 20.0;
      }
      wins += after > before;
      gain += (after - before) / 20.0;
      ++trials;
    }
  }
  return {wins * 5 >= trials * 4, std::to_string(wins) + "/" + std::to_string(trials) +
                                      " trials improved mean purity, mean gain " + fmt("%+.4f", gain)};
}

// ---- 6 ----

Outcome end_to_end() {
  RunConfig c = desk_config();
  c.diarize.backend = Backend::nme_sc;
  testing::CliScratch dir("acceptance_e2e");
  const fs::path corpus = dir.root() / "corpus", models = dir.root() / "models", hyp = dir.root() / "hyp";
  cli::cmd_simulate(c, corpus);
  cli::cmd_train(c, corpus, models);
  cli::cmd_finetune(c, corpus, models);
  cli::cmd_diarize(c, corpus, models, hyp);
  const cli::ScoreSummary s = cli::cmd_score(corpus, hyp, 0.25);
  double mean = 0;
  for (const ScoreRow& r : s.rows) mean += r.der.der / static_cast<double>(s.rows.size());
  return {s.rows.size() == 30 && mean <= 5.0 && s.pooled.missed == 0.0 && s.pooled.false_alarm == 0.0,
          std::to_string(s.rows.size()) + " sessions, mcgan + nme-sc: mean DER " + fmt("%.2f%%", mean) + ", pooled " +
              fmt("%.2f%%", s.pooled.der) + ", missed " + fmt("%g s", s.pooled.missed) + ", false alarm " +
              fmt("%g s", s.pooled.false_alarm)};
}

// ---- 7 ----

Outcome fusion_consistency() {
  CorpusConfig cc;
  cc.sessions = 50;
  cc.seed = 77;
  const SynthCorpus corpus = gen_corpus(cc);
  int same = 0, total = 0;
  for (const SynthSession& ss : corpus.sessions) {
    for (Backend b : {Backend::kmeans, Backend::nme_sc}) {
      DiarizeConfig dc;
      dc.backend = b;
      ClusterAssignment plain, fused;
      cluster_rows(ss.x, dc, plain);
      cluster_rows(fuse(ss.x, ss.x), dc, fused);
      same += plain.labels == fused.labels && plain.k == fused.k;
      ++total;
    }
  }
  return {same == total, std::to_string(same) + "/" + std::to_string(total) +
                             " identical partitions (50 sessions x {kmeans, nme-sc})"};
}

// ---- 8 ----

Outcome shipped_config() {
  const std::string text = read_text_file(testing::default_config());
  const RunConfig c = parse_config(text);
  std::vector<std::string> bad;
  auto check = [&](const char* name, bool ok) {
    if (!ok) bad.push_back(name);
  };
  check("lambda", c.gan.lambda_gp == 10.0);
  check("batch", c.gan.batch == 128);
  check("n_critic", c.gan.n_critic == 5);
  check("lr", c.gan.adam.lr == 1e-4);
  check("beta1", c.gan.adam.beta1 == 0.5);
  check("beta2", c.gan.adam.beta2 == 0.9);
  check("w1", c.gan.w1 == 1.0);
  check("w2", c.gan.w2 == 10.0);
  check("w3", c.gan.w3 == 10.0);
  check("sigma", c.latent.sigma == 0.10);
  check("d_n", c.latent.d_n == 90);
  check("n_s", c.proto.n_s == 10);
  check("n_q", c.proto.n_q == 10);
  check("window", c.diarize.segmentation.win == 1.5);
  check("overlap", c.diarize.segmentation.win - c.diarize.segmentation.hop == 1.0);
  check("collar", c.collar == 0.25);
  std::string body;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);)
    if (!line.empty() && line[0] != '#') body += line + "\n";
  check("file equals built-in defaults", body == format_config(RunConfig{}));
  std::string detail = "16 published values plus file snapshot";
  for (const auto& b : bad) detail += ", mismatch: " + b;
  return {bad.empty(), detail};
}

// ---- 9 ----

Outcome cli_determinism() {
  testing::CliScratch dir("acceptance_det");
  const std::string t = testing::tiny_overrides() + " --seed 31";
  std::vector<std::string> failures;
  int commands = 0;
  for (const char* run : {"a", "b"}) {
    const std::string r = dir.path(run);
    const std::vector<std::string> cmds = {
        "simulate" + t + " -o " + r + "/c",
        "train" + t + " --corpus " + r + "/c --models " + r + "/m",
        "finetune" + t + " --corpus " + r + "/c --models " + r + "/m",
        "diarize" + t + " --corpus " + r + "/c --embedding xvector-raw --backend kmeans -o " + r + "/h_raw",
        "diarize" + t + " --corpus " + r + "/c --models " + r + "/m --embedding clustergan --backend sc-fixed-p -o " +
            r + "/h_cg",
        "diarize" + t + " --corpus " + r + "/c --models " + r + "/m --embedding mcgan -o " + r + "/h_mc",
        "diarize" + t + " --corpus " + r + "/c --models " + r + "/m --embedding fused --known-k oracle -o " + r +
            "/h_fu",
        "score --corpus " + r + "/c --hyp " + r + "/h_mc",
        "score --corpus " + r + "/c --hyp " + r + "/h_fu --collar 0",
    };
    for (const auto& cmd : cmds) {
      std::string out;
      if (testing::run_cli(cmd, nullptr, &out) != 0) failures.push_back("exit status of: " + cmd);
      if (run[0] == 'a') ++commands;
    }
  }
  const auto a = testing::read_tree(dir.path("a")), b = testing::read_tree(dir.path("b"));
  if (a.size() != b.size()) failures.push_back("different file sets");
  std::size_t same = 0;
  for (const auto& [name, bytes] : a) {
    const auto it = b.find(name);
    if (it != b.end() && it->second == bytes)
      ++same;
    else
      failures.push_back(name);
  }
  std::string detail = std::to_string(commands) + " commands run twice, " + std::to_string(same) + "/" +
                       std::to_string(a.size()) + " files byte-identical";
  for (const auto& f : failures) detail += "; differs: " + f;
  return {failures.empty() && !a.empty(), detail};
}

struct Criterion {
  int id;
  const char* name;
  double limit_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "gradient suite", 60, gradient_suite},
      {2, "DER oracle equivalence", 30, der_oracle},
      {3, "NME-SC planted recovery", 300, nme_recovery},
      {4, "ClusterGAN trainability", 300, clustergan_trainability},
      {5, "fine-tuning improves purity", 600, finetune_improvement},
      {6, "end-to-end planted DER", 900, end_to_end},
      {7, "fusion consistency", 60, fusion_consistency},
      {8, "shipped config values", 10, shipped_config},
      {9, "CLI determinism", 300, cli_determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const Criterion& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = o.pass && secs < c.limit_s;
    failed += !pass;
    std::printf("%s %d %s: %s (%.1f s, limit %.0f s)\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                c.limit_s);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
