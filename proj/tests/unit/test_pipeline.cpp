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

#include <algorithm>
#include <numeric>

#include <gtest/gtest.h>

#include "diarkit/formats.hpp"
#include "diarkit/pipeline.hpp"
#include "diarkit/proto_train.hpp"
#include "diarkit/score.hpp"
#include "diarkit/synth.hpp"
#include "support/oracles.hpp"

namespace diarkit {
namespace {

using testing::random_matrix;

SadIntervals sad_of(std::vector<SadInterval> iv) {
  SadIntervals s;
  s.session = "t";
  s.intervals = std::move(iv);
  return s;
}

// ---- segmentation ----

TEST(UniformSegments, SlidingWindowWithTruncatedTail) {
  const auto segs = uniform_segments(sad_of({{0, 3500}}));
  const std::vector<Segment> want = {{0, 1500, 0},    {500, 2000, 1},  {1000, 2500, 2},
                                     {1500, 3000, 3}, {2000, 3500, 4}, {2500, 3500, 5}};
  EXPECT_EQ(segs, want);
}

TEST(UniformSegments, ShortAndExactIntervals) {
  EXPECT_EQ(uniform_segments(sad_of({{0, 1000}})), (std::vector<Segment>{{0, 1000, 0}}));
  EXPECT_EQ(uniform_segments(sad_of({{0, 1500}})), (std::vector<Segment>{{0, 1500, 0}}));
  EXPECT_EQ(uniform_segments(sad_of({{0, 100}})), (std::vector<Segment>{{0, 100, 0}}));
  EXPECT_TRUE(uniform_segments(sad_of({})).empty());
}

TEST(UniformSegments, SliversMergeIntoPrevious) {
  SegmentationConfig cfg;
  cfg.win = 1.0;
  cfg.hop = 0.1;
  const auto segs = uniform_segments(sad_of({{0, 2000}}), cfg);
  ASSERT_EQ(segs.size(), 18u);  // starts 0.0 .. 1.7; the 0.2 s piece at 1.8 is absorbed
  EXPECT_EQ(segs.back(), (Segment{1700, 2000, 17}));
  for (const auto& s : segs) EXPECT_GE(s.duration(), 250);
}

TEST(UniformSegments, RowsRunAcrossIntervals) {
  const auto segs = uniform_segments(sad_of({{0, 1000}, {2000, 4000}}));
  ASSERT_EQ(segs.size(), 4u);
  for (std::size_t i = 0; i < segs.size(); ++i) EXPECT_EQ(segs[i].row, i);
  EXPECT_EQ(segs[1], (Segment{2000, 3500, 1}));
  EXPECT_EQ(segs[3], (Segment{3000, 4000, 3}));
}

TEST(UniformSegments, InvalidInputs) {
  EXPECT_THROW(uniform_segments(sad_of({{1000, 500}})), ContractError);
  SegmentationConfig bad;
  bad.hop = 2.0;
  EXPECT_THROW(uniform_segments(sad_of({{0, 5000}}), bad), ConfigError);
}

SadIntervals random_sad(Rng& rng) {
  SadIntervals s;
  s.session = "r";
  std::uniform_int_distribution<Ms> len(10, 6000), gap(1, 2000);
  Ms t = gap(rng);
  for (int i = 0; i < 8; ++i) {
    const Ms l = len(rng);
    s.intervals.push_back({t, t + l});
    t += l + gap(rng);
  }
  return s;
}

TEST(UniformSegmentsProperty, InsideOneIntervalAndCoverIt) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const SadIntervals sad = random_sad(rng);
    const auto segs = uniform_segments(sad);
    Ms covered = 0;
    for (const auto& iv : sad.intervals) {
      Ms reach = iv.onset;
      for (const auto& s : segs) {
        if (s.offset <= iv.onset || s.onset >= iv.offset) continue;
        EXPECT_GE(s.onset, iv.onset);
        EXPECT_LE(s.offset, iv.offset);
        EXPECT_GT(s.duration(), 0);
        EXPECT_LE(s.onset, reach);  // no holes
        reach = std::max(reach, s.offset);
      }
      EXPECT_EQ(reach, iv.offset);
      covered += reach - iv.onset;
    }
    EXPECT_EQ(covered, sad.speech_ms());
  }
}

// ---- fusion ----

TEST(Fuse, SelfFusionKeepsAffinity) {
  Rng rng(2);
  const Matrix e = random_matrix(12, 6, rng);
  EXPECT_LT((cosine_affinity(fuse(e, e)) - cosine_affinity(e)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Fuse, CosineIsMeanOfParts) {
  Rng rng(3);
  const Matrix u = l2_normalize_rows(random_matrix(2, 4, rng));
  const Matrix v = l2_normalize_rows(random_matrix(2, 3, rng));
  const Matrix f = fuse(u, v);
  const double fused_cos = f.row(0).dot(f.row(1)) / (f.row(0).norm() * f.row(1).norm());
  EXPECT_NEAR(fused_cos, 0.5 * (u.row(0).dot(u.row(1)) + v.row(0).dot(v.row(1))), 1e-14);
  EXPECT_EQ(f.cols(), 7);
}

TEST(Fuse, ShapeAndZeroRows) {
  EXPECT_EQ(fuse(Matrix::Ones(3, 2), Matrix::Ones(3, 3)).cols(), 5);
  EXPECT_THROW(fuse(Matrix::Ones(3, 2), Matrix::Ones(4, 2)), ShapeError);
  const Matrix f = fuse(Matrix::Zero(2, 2), Matrix::Ones(2, 2));
  EXPECT_TRUE(f.allFinite());
}

TEST(FuseProperty, InvariantToPositiveRowScaling) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_matrix(8, 5, rng), b = random_matrix(8, 3, rng);
    Matrix as = a, bs = b;
    for (Eigen::Index i = 0; i < 8; ++i) {
      as.row(i) *= 0.01 + 10.0 * uniform01(rng);
      bs.row(i) *= 0.01 + 10.0 * uniform01(rng);
    }
    EXPECT_LT((fuse(a, b) - fuse(as, bs)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

// ---- labels to timeline ----

TEST(LabelsToTimeline, MidpointSplit) {
  const Timeline t = labels_to_timeline({{0, 1500, 0}, {500, 2000, 1}}, {4, 9});
  EXPECT_EQ(t.turns, (std::vector<Turn>{{0, 1000, "spk0"}, {1000, 2000, "spk1"}}));
}

TEST(LabelsToTimeline, SameLabelGivesOneTurnPerRegion) {
  const auto segs = uniform_segments(sad_of({{0, 3500}, {5000, 6000}}));
  const Timeline t = labels_to_timeline(segs, std::vector<int>(segs.size(), 3));
  EXPECT_EQ(t.turns, (std::vector<Turn>{{0, 3500, "spk0"}, {5000, 6000, "spk0"}}));
}

TEST(LabelsToTimeline, DisjointSegmentsKeptAsIs) {
  const Timeline t = labels_to_timeline({{0, 1000, 0}, {1200, 2000, 1}, {2500, 2600, 2}}, {1, 0, 1});
  EXPECT_EQ(t.turns, (std::vector<Turn>{{0, 1000, "spk0"}, {1200, 2000, "spk1"}, {2500, 2600, "spk0"}}));
}

TEST(LabelsToTimeline, Errors) {
  EXPECT_THROW(labels_to_timeline({{0, 1000, 0}}, {}), ShapeError);
  EXPECT_THROW(labels_to_timeline({{500, 1000, 0}, {0, 2000, 1}}, {0, 1}), ContractError);
}

TEST(LabelsToTimelineProperty, CoversSadSortedNoSelfOverlap) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const SadIntervals sad = random_sad(rng);
    const auto segs = uniform_segments(sad);
    std::vector<int> labels(segs.size());
    for (auto& y : labels) y = static_cast<int>(uniform_index(rng, 3));
    const Timeline t = labels_to_timeline(segs, labels);
    EXPECT_NO_THROW(t.validate());
    EXPECT_EQ(t.speech_ms(), sad.speech_ms());
    EXPECT_EQ(speech_regions(t).intervals, sad.intervals);
    for (std::size_t i = 1; i < t.turns.size(); ++i) EXPECT_LE(t.turns[i - 1].offset, t.turns[i].onset);
  }
}

// ---- end to end ----

struct TwoSpeakerFixture {
  Matrix means;
  SynthSession session;
};

TwoSpeakerFixture two_speaker_session(std::uint64_t seed) {
  Rng rng(seed);
  TwoSpeakerFixture f;
  f.means = gen_speakers(2, 16, 30.0, rng).means;
  SessionConfig cfg;
  cfg.duration = 60.0;
  cfg.turn_mean = 4.0;
  f.session = gen_session("two", cfg, f.means, {0, 1}, rng);
  return f;
}

TEST(RunDiarization, RawTwoSpeakersRecovered) {
  const auto f = two_speaker_session(11);
  DiarizeConfig cfg;
  cfg.embedding = EmbeddingSource::xvector_raw;
  const DiarizeResult r = run_diarization(f.session.sad, f.session.x, nullptr, cfg);
  EXPECT_EQ(r.k_hat, 2u);
  ASSERT_TRUE(r.diagnostics.nme.has_value());
  EXPECT_EQ(r.diagnostics.p_used, r.diagnostics.nme->p_hat);
  const DerReport rep = der(f.session.reference, r.timeline, 0.25);
  EXPECT_LT(rep.der, 5.0);
  EXPECT_EQ(rep.missed, 0.0);
  EXPECT_EQ(rep.false_alarm, 0.0);
}

// A small ClusterGAN, then prototypical fine-tuning, on 40 speakers. The two
// session speakers are held out of training.
struct McganFixture {
  Matrix session_means;
  MlpCheckpoint encoder;
};

McganFixture small_mcgan() {
  Rng rng(21);
  const SpeakerMeans sp = gen_speakers(42, 32, 30.0, rng);
  const LabeledEmbeddings train = gen_training_set(sp.means.topRows(40), 40, 0.08, rng);
  LatentConfig latent;
  latent.d_n = 16;
  latent.d_c = 40;
  ModelSet models = build_models(32, latent, ArchConfig{64, 96}, 5);
  GanTrainConfig gcfg;
  gcfg.iterations = 1000;
  gcfg.batch = 64;
  gcfg.adam.lr = 1e-3;
  gcfg.seed = 6;
  GanTrainResult g = train_clustergan(train, std::move(models), gcfg);
  ProtoConfig pcfg;
  pcfg.episodes = 300;
  pcfg.n_s = 5;
  pcfg.n_q = 5;
  pcfg.n_c_choices = {40};
  pcfg.adam.lr = 3e-4;
  pcfg.seed = 7;
  return {sp.means.bottomRows(2), finetune_mcgan(g.models.encoder, train, pcfg).encoder};
}

TEST(RunDiarization, McganTwoSpeakersRecovered) {
  const McganFixture m = small_mcgan();
  for (std::uint64_t seed = 100; seed < 105; ++seed) {
    Rng rng(seed);
    SessionConfig scfg;
    scfg.duration = 60.0;
    scfg.turn_mean = 4.0;
    const SynthSession s = gen_session("two", scfg, m.session_means, {0, 1}, rng);
    DiarizeConfig cfg;
    cfg.embedding = EmbeddingSource::mcgan;
    const DiarizeResult r = run_diarization(s.sad, s.x, &m.encoder, cfg);
    EXPECT_EQ(r.k_hat, 2u) << seed;
    EXPECT_LT(der(s.reference, r.timeline, 0.25).der, 5.0) << seed;
  }
}

TEST(RunDiarization, KnownKOneCoversAllSpeech) {
  const auto f = two_speaker_session(12);
  for (Backend b : {Backend::kmeans, Backend::sc_fixed_p, Backend::nme_sc}) {
    DiarizeConfig cfg;
    cfg.embedding = EmbeddingSource::xvector_raw;
    cfg.backend = b;
    cfg.known_k = 1;
    const DiarizeResult r = run_diarization(f.session.sad, f.session.x, nullptr, cfg);
    EXPECT_EQ(r.k_hat, 1u);
    EXPECT_EQ(r.timeline.speakers(), std::vector<std::string>{"spk0"});
    EXPECT_EQ(speech_regions(r.timeline).intervals, f.session.sad.intervals);
  }
}

TEST(RunDiarization, BackendsAgreeOnEasySession) {
  const auto f = two_speaker_session(13);
  for (Backend b : {Backend::kmeans, Backend::sc_fixed_p, Backend::nme_sc}) {
    DiarizeConfig cfg;
    cfg.embedding = EmbeddingSource::xvector_raw;
    cfg.backend = b;
    cfg.known_k = 2;
    const DiarizeResult r = run_diarization(f.session.sad, f.session.x, nullptr, cfg);
    EXPECT_EQ(r.k_hat, 2u) << to_string(b);
    EXPECT_LT(der(f.session.reference, r.timeline, 0.25).der, 5.0) << to_string(b);
  }
}

TEST(RunDiarization, DeterministicRttm) {
  const auto f = two_speaker_session(14);
  DiarizeConfig cfg;
  cfg.embedding = EmbeddingSource::xvector_raw;
  const std::string a = format_rttm(run_diarization(f.session.sad, f.session.x, nullptr, cfg).timeline);
  const std::string b = format_rttm(run_diarization(f.session.sad, f.session.x, nullptr, cfg).timeline);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a.empty());
}

TEST(RunDiarization, ErrorsNameTheSession) {
  const auto f = two_speaker_session(15);
  DiarizeConfig cfg;
  cfg.embedding = EmbeddingSource::xvector_raw;
  try {
    run_diarization(f.session.sad, f.session.x.topRows(3), nullptr, cfg);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("session two"), std::string::npos);
  }
  cfg.embedding = EmbeddingSource::mcgan;
  EXPECT_THROW(run_diarization(f.session.sad, f.session.x, nullptr, cfg), ContractError);
  cfg.embedding = EmbeddingSource::xvector_raw;
  cfg.known_k = 100000;
  EXPECT_THROW(run_diarization(f.session.sad, f.session.x, nullptr, cfg), RangeError);
}

TEST(RunDiarization, EmptyAndSingleSegmentSessions) {
  DiarizeConfig cfg;
  cfg.embedding = EmbeddingSource::xvector_raw;
  const DiarizeResult empty = run_diarization(sad_of({}), Matrix(0, 4), nullptr, cfg);
  EXPECT_TRUE(empty.timeline.turns.empty());
  EXPECT_EQ(empty.k_hat, 0u);
  const DiarizeResult one = run_diarization(sad_of({{0, 1000}}), Matrix::Ones(1, 4), nullptr, cfg);
  EXPECT_EQ(one.k_hat, 1u);
  EXPECT_EQ(one.timeline.turns, (std::vector<Turn>{{0, 1000, "spk0"}}));
}

TEST(RunDiarizationProperty, OracleSadMeansOnlyConfusion) {
  for (std::uint64_t seed = 30; seed < 40; ++seed) {
    Rng rng(seed);
    const Matrix means = gen_speakers(4, 16, 25.0, rng).means;
    SessionConfig scfg;
    scfg.duration = 40.0;
    scfg.gap_prob = 0.3;
    const SynthSession s = gen_session("p", scfg, means, {0, 1, 2, 3}, rng);
    DiarizeConfig cfg;
    cfg.embedding = EmbeddingSource::xvector_raw;
    const DiarizeResult r = run_diarization(s.sad, s.x, nullptr, cfg);
    EXPECT_EQ(std::llabs(r.timeline.speech_ms() - s.sad.speech_ms()), 0);
    const DerReport rep = der(s.reference, r.timeline, 0.0);
    EXPECT_EQ(rep.missed, 0.0);
    EXPECT_EQ(rep.false_alarm, 0.0);
  }
}

}  // namespace
}  // namespace diarkit
