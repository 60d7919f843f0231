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

// diarkit: simulate | train | finetune | diarize | score | config

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "diarkit/cli.hpp"

namespace {

using namespace diarkit;
using namespace diarkit::cli;

struct Common {
  ConfigSources src;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  bool verbose = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.src.files, "Config file; repeat to layer several, later files win");
  sub->add_option("--set", c.src.sets, "Override one config key, as key=value; repeatable");
  sub->add_option("--seed", c.seed, "Master seed (overrides the config)");
  sub->add_option("-j,--jobs", c.jobs, "Sessions processed in parallel")->check(CLI::PositiveNumber);
  sub->add_flag("-v,--verbose", c.verbose, "Progress on standard error");
}

RunConfig resolve(Common& c, CLI::App* sub) {
  if (sub->count("--seed")) c.src.seed = c.seed;
  return load_run_config(c.src);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diarkit: speaker diarization with GAN-trained embeddings"};
  app.require_subcommand(1);

  Common common;
  std::string out, corpus, models, hyp, encoder, embedding, backend, known_k;
  double collar = 0;

  CLI::App* sim = app.add_subcommand("simulate", "Generate a synthetic corpus");
  add_common(sim, common);
  sim->add_option("-o,--out", out, "Corpus directory to write")->required();

  CLI::App* train = app.add_subcommand("train", "Train ClusterGAN on the corpus training set");
  add_common(train, common);
  train->add_option("--corpus", corpus, "Corpus directory")->required();
  train->add_option("--models", models, "Model directory to write")->required();

  CLI::App* ft = app.add_subcommand("finetune", "Prototypical fine-tuning of the trained encoder");
  add_common(ft, common);
  ft->add_option("--corpus", corpus, "Corpus directory")->required();
  ft->add_option("--models", models, "Model directory holding encoder.ckpt")->required();

  CLI::App* dia = app.add_subcommand("diarize", "Cluster every corpus session and write RTTM");
  add_common(dia, common);
  dia->add_option("--corpus", corpus, "Corpus directory")->required();
  dia->add_option("--models", models, "Model directory (not needed for xvector-raw)");
  dia->add_option("-o,--out", out, "Hypothesis directory to write")->required();
  dia->add_option("--embedding", embedding, "xvector-raw | clustergan | mcgan | fused");
  dia->add_option("--backend", backend, "kmeans | sc-fixed-p | nme-sc");
  dia->add_option("--known-k", known_k, "Speaker count per session: an integer, or 'oracle'");
  dia->add_option("--encoder", encoder, "Encoder checkpoint to use instead of the one in --models");

  CLI::App* sc = app.add_subcommand("score", "Score hypotheses against the corpus references");
  add_common(sc, common);
  sc->add_option("--corpus", corpus, "Corpus directory")->required();
  sc->add_option("--hyp", hyp, "Hypothesis directory; score.csv is written here")->required();
  sc->add_option("--collar", collar, "Collar in seconds (overrides the config)");

  CLI::App* show = app.add_subcommand("config", "Print the resolved configuration");
  add_common(show, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  std::ostream* progress = common.verbose ? &std::cerr : nullptr;
  try {
    if (*sim) {
      const RunConfig cfg = resolve(common, sim);
      const Manifest m = cmd_simulate(cfg, out, common.jobs);
      std::cout << "wrote " << m.sessions.size() << " sessions and " << m.train_rows << " training rows to " << out
                << "\n";
    } else if (*train) {
      const RunConfig cfg = resolve(common, train);
      cmd_train(cfg, corpus, models, progress);
      std::cout << "wrote generator, discriminator and encoder to " << models << "\n";
    } else if (*ft) {
      const RunConfig cfg = resolve(common, ft);
      cmd_finetune(cfg, corpus, models, progress);
      std::cout << "wrote " << (std::filesystem::path(models) / "mcgan_encoder.ckpt").string() << "\n";
    } else if (*dia) {
      if (!embedding.empty()) common.src.sets.push_back("diarize.embedding=" + embedding);
      if (!backend.empty()) common.src.sets.push_back("diarize.backend=" + backend);
      const RunConfig cfg = resolve(common, dia);
      std::optional<std::filesystem::path> enc;
      if (!encoder.empty()) enc = encoder;
      if (models.empty() && !enc && cfg.diarize.embedding != EmbeddingSource::xvector_raw)
        throw ConfigError(std::string("--models or --encoder is required for embedding ") +
                          to_string(cfg.diarize.embedding));
      const auto diag = cmd_diarize(cfg, corpus, models, out, parse_known_k(known_k), common.jobs, enc);
      for (const auto& d : diag)
        std::cout << d.session << " p_hat=" << d.p_hat << " k_hat=" << d.k_hat << "\n";
    } else if (*sc) {
      RunConfig cfg = resolve(common, sc);
      if (sc->count("--collar")) cfg.collar = collar;
      if (!(cfg.collar >= 0)) throw ConfigError("--collar must be >= 0");
      print_score_table(std::cout, cmd_score(corpus, hyp, cfg.collar));
    } else if (*show) {
      std::cout << format_config(resolve(common, show));
    }
  } catch (const diarkit::Error& e) {
    std::cerr << "diarkit: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "diarkit: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
