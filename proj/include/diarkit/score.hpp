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

// Diarization error rate with collar and optimal speaker mapping, speaker
// count statistics (MAPD, POC) and cluster purity.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "diarkit/assignment.hpp"
#include "diarkit/errors.hpp"
#include "diarkit/numkit/matrix.hpp"
#include "diarkit/timeline.hpp"

namespace diarkit {

struct DerReport {
  double scored = 0.0;  // seconds
  double confusion = 0.0;
  double missed = 0.0;
  double false_alarm = 0.0;
  double der = 0.0;  // percent
  std::vector<std::pair<std::string, std::string>> mapping;  // reference -> hypothesis
};

// Scoring grid shared by der() and the brute-force check in the tests: the
// elementary intervals outside the collar, each with its active reference
// and hypothesis speaker indices.
struct ScoringGrid {
  struct Cell {
    Ms duration = 0;
    std::vector<int> ref;
    std::vector<int> hyp;
  };
  std::vector<std::string> ref_speakers;
  std::vector<std::string> hyp_speakers;
  std::vector<Cell> cells;
};

inline ScoringGrid build_scoring_grid(const Timeline& ref, const Timeline& hyp, Ms collar) {
  if (collar < 0) throw RangeError("collar must be >= 0");
  ScoringGrid g;
  g.ref_speakers = ref.speakers();
  g.hyp_speakers = hyp.speakers();
  auto index_of = [](const std::vector<std::string>& v, const std::string& s) {
    return static_cast<int>(std::find(v.begin(), v.end(), s) - v.begin());
  };

  std::vector<Ms> cuts;
  std::vector<std::pair<Ms, Ms>> excluded;
  for (const Turn& t : ref.turns) {
    cuts.push_back(t.onset);
    cuts.push_back(t.offset);
    if (collar > 0) {
      for (Ms b : {t.onset, t.offset}) {
        cuts.push_back(b - collar);
        cuts.push_back(b + collar);
        excluded.emplace_back(b - collar, b + collar);
      }
    }
  }
  for (const Turn& t : hyp.turns) {
    cuts.push_back(t.onset);
    cuts.push_back(t.offset);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const Ms a = cuts[i], b = cuts[i + 1];
    // Midpoint test, doubled to stay in integers.
    const Ms mid2 = a + b;
    bool skip = false;
    for (const auto& [lo, hi] : excluded)
      if (2 * lo < mid2 && mid2 < 2 * hi) {
        skip = true;
        break;
      }
    if (skip) continue;
    ScoringGrid::Cell cell;
    cell.duration = b - a;
    for (const Turn& t : ref.turns)
      if (2 * t.onset < mid2 && mid2 < 2 * t.offset) {
        const int s = index_of(g.ref_speakers, t.speaker);
        if (std::find(cell.ref.begin(), cell.ref.end(), s) == cell.ref.end()) cell.ref.push_back(s);
      }
    for (const Turn& t : hyp.turns)
      if (2 * t.onset < mid2 && mid2 < 2 * t.offset) {
        const int s = index_of(g.hyp_speakers, t.speaker);
        if (std::find(cell.hyp.begin(), cell.hyp.end(), s) == cell.hyp.end()) cell.hyp.push_back(s);
      }
    if (!cell.ref.empty() || !cell.hyp.empty()) g.cells.push_back(std::move(cell));
  }
  return g;
}

// Error times for a fixed ref -> hyp mapping (-1 for unmapped); in ms.
struct DerCounts {
  Ms scored = 0, confusion = 0, missed = 0, false_alarm = 0;
};

inline DerCounts der_counts(const ScoringGrid& g, const std::vector<int>& ref_to_hyp) {
  DerCounts c;
  for (const auto& cell : g.cells) {
    const Ms nr = static_cast<Ms>(cell.ref.size()), nh = static_cast<Ms>(cell.hyp.size());
    Ms correct = 0;
    for (int r : cell.ref) {
      const int h = ref_to_hyp[static_cast<std::size_t>(r)];
      if (h >= 0 && std::find(cell.hyp.begin(), cell.hyp.end(), h) != cell.hyp.end()) ++correct;
    }
    c.scored += cell.duration * nr;
    c.missed += cell.duration * std::max<Ms>(0, nr - nh);
    c.false_alarm += cell.duration * std::max<Ms>(0, nh - nr);
    c.confusion += cell.duration * (std::min(nr, nh) - correct);
  }
  return c;
}

inline DerReport der(const Timeline& ref, const Timeline& hyp, double collar_s) {
  if (collar_s < 0 || !std::isfinite(collar_s)) throw RangeError("collar must be a finite value >= 0");
  const ScoringGrid g = build_scoring_grid(ref, hyp, to_ms(collar_s));

  Matrix overlap = Matrix::Zero(static_cast<Eigen::Index>(g.ref_speakers.size()),
                                static_cast<Eigen::Index>(g.hyp_speakers.size()));
  for (const auto& cell : g.cells)
    for (int r : cell.ref)
      for (int h : cell.hyp) overlap(r, h) += static_cast<double>(cell.duration);
  std::vector<int> map = max_weight_assignment(overlap);
  // A zero-overlap pair contributes nothing; leave it out of the reported mapping.
  for (std::size_t r = 0; r < map.size(); ++r)
    if (map[r] >= 0 && overlap(static_cast<Eigen::Index>(r), map[r]) <= 0.0) map[r] = -1;

  const DerCounts c = der_counts(g, map);
  if (c.scored == 0) throw ContractError("session " + ref.session + ": no scored reference speech");
  DerReport rep;
  rep.scored = to_seconds(c.scored);
  rep.confusion = to_seconds(c.confusion);
  rep.missed = to_seconds(c.missed);
  rep.false_alarm = to_seconds(c.false_alarm);
  rep.der = 100.0 * static_cast<double>(c.confusion + c.missed + c.false_alarm) / static_cast<double>(c.scored);
  for (std::size_t r = 0; r < map.size(); ++r)
    if (map[r] >= 0) rep.mapping.emplace_back(g.ref_speakers[r], g.hyp_speakers[static_cast<std::size_t>(map[r])]);
  return rep;
}

// Speaker counts.
struct CountEstimate {
  std::string session;
  int k_true = 1;
  int k_est = 1;
};

struct MapdPoc {
  double mapd = 0.0;  // percent
  double poc = 0.0;   // percent
};

inline MapdPoc mapd_poc(const std::vector<CountEstimate>& est) {
  if (est.empty()) throw ContractError("mapd_poc needs at least one session");
  double dev = 0.0;
  std::size_t hit = 0;
  for (const auto& e : est) {
    if (e.k_true < 1 || e.k_est < 1) throw RangeError("session " + e.session + ": speaker counts must be >= 1");
    dev += std::abs(e.k_est - e.k_true) / static_cast<double>(e.k_true);
    hit += e.k_est == e.k_true;
  }
  const double n = static_cast<double>(est.size());
  return {100.0 * dev / n, 100.0 * static_cast<double>(hit) / n};
}

// Reported on CALLHOME for the fine-tuned encoder; kept for reference only.
inline constexpr double kReportedMapdCallhome = 9.76;
inline constexpr double kReportedPocCallhome = 75.55;

template <typename L1, typename L2>
double cluster_purity(const std::vector<L1>& truth, const std::vector<L2>& hyp) {
  if (truth.size() != hyp.size()) throw ShapeError("cluster_purity: label vectors differ in length");
  if (truth.empty()) throw ContractError("cluster_purity: no segments");
  std::map<L2, std::map<L1, std::size_t>> counts;
  for (std::size_t i = 0; i < truth.size(); ++i) ++counts[hyp[i]][truth[i]];
  std::size_t majority = 0;
  for (const auto& [c, row] : counts) {
    std::size_t best = 0;
    for (const auto& [t, n] : row) best = std::max(best, n);
    majority += best;
  }
  return static_cast<double>(majority) / static_cast<double>(truth.size());
}

// ---- report CSV ----

struct ScoreRow {
  std::string session;
  DerReport der;
  int k_true = 0;
  int k_est = 0;
  double purity = 0.0;
};

inline std::string format_score_csv(const std::vector<ScoreRow>& rows) {
  std::string out = "session,scored_s,confusion_s,missed_s,false_alarm_s,der_pct,k_true,k_est,purity\n";
  char buf[256];
  double scored = 0, conf = 0, miss = 0, fa = 0, purity = 0;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.3f,%.3f,%.3f,%.3f,%.4f,%d,%d,%.6f\n", r.session.c_str(), r.der.scored,
                  r.der.confusion, r.der.missed, r.der.false_alarm, r.der.der, r.k_true, r.k_est, r.purity);
    out += buf;
    scored += r.der.scored;
    conf += r.der.confusion;
    miss += r.der.missed;
    fa += r.der.false_alarm;
    purity += r.purity;
  }
  if (!rows.empty()) {
    std::vector<CountEstimate> est;
    for (const auto& r : rows) est.push_back({r.session, r.k_true, r.k_est});
    const MapdPoc mp = mapd_poc(est);
    const double der_all = scored > 0 ? 100.0 * (conf + miss + fa) / scored : 0.0;
    std::snprintf(buf, sizeof buf, "ALL,%.3f,%.3f,%.3f,%.3f,%.4f,mapd=%.4f,poc=%.4f,%.6f\n", scored, conf, miss, fa,
                  der_all, mp.mapd, mp.poc, purity / static_cast<double>(rows.size()));
    out += buf;
  }
  return out;
}

}  // namespace diarkit
