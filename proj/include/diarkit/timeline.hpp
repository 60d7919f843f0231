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

// Speech timelines. Times are held as integer milliseconds so that interval
// slicing is exact; seconds appear only at the file-format boundary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "diarkit/errors.hpp"

namespace diarkit {

using Ms = std::int64_t;

inline Ms to_ms(double seconds) { return static_cast<Ms>(std::llround(seconds * 1000.0)); }
inline double to_seconds(Ms ms) { return static_cast<double>(ms) / 1000.0; }

struct Turn {
  Ms onset = 0;
  Ms offset = 0;
  std::string speaker;

  Ms duration() const { return offset - onset; }
  bool operator==(const Turn&) const = default;
};

struct Timeline {
  std::string session;
  std::vector<Turn> turns;

  void sort() {
    std::stable_sort(turns.begin(), turns.end(), [](const Turn& a, const Turn& b) {
      if (a.onset != b.onset) return a.onset < b.onset;
      return a.speaker < b.speaker;
    });
  }

  // Onsets nondecreasing, durations positive, no same-speaker self-overlap.
  void validate() const {
    std::map<std::string, Ms> last_end;
    for (std::size_t i = 0; i < turns.size(); ++i) {
      const Turn& t = turns[i];
      if (t.duration() <= 0) throw ContractError("timeline " + session + ": turn " + std::to_string(i) + " has non-positive duration");
      if (i > 0 && t.onset < turns[i - 1].onset)
        throw ContractError("timeline " + session + ": turns not sorted at " + std::to_string(i));
      auto it = last_end.find(t.speaker);
      if (it != last_end.end() && t.onset < it->second)
        throw ContractError("timeline " + session + ": speaker " + t.speaker + " overlaps itself at turn " + std::to_string(i));
      last_end[t.speaker] = std::max(it == last_end.end() ? t.offset : it->second, t.offset);
    }
  }

  std::vector<std::string> speakers() const {
    std::vector<std::string> out;
    for (const Turn& t : turns)
      if (std::find(out.begin(), out.end(), t.speaker) == out.end()) out.push_back(t.speaker);
    return out;
  }

  Ms speech_ms() const {
    Ms total = 0;
    for (const Turn& t : turns) total += t.duration();
    return total;
  }
};

struct SadInterval {
  Ms onset = 0;
  Ms offset = 0;
  bool operator==(const SadInterval&) const = default;
};

struct SadIntervals {
  std::string session;
  std::vector<SadInterval> intervals;

  void validate() const {
    for (std::size_t i = 0; i < intervals.size(); ++i) {
      if (intervals[i].onset >= intervals[i].offset)
        throw ContractError("SAD " + session + ": interval " + std::to_string(i) + " has onset >= offset");
      if (i > 0 && intervals[i].onset < intervals[i - 1].offset)
        throw ContractError("SAD " + session + ": intervals unsorted or overlapping at " + std::to_string(i));
    }
  }

  Ms speech_ms() const {
    Ms total = 0;
    for (const SadInterval& s : intervals) total += s.offset - s.onset;
    return total;
  }
};

// Union of the turns, touching turns joined.
inline SadIntervals speech_regions(const Timeline& t) {
  std::vector<Turn> turns = t.turns;
  std::sort(turns.begin(), turns.end(), [](const Turn& a, const Turn& b) { return a.onset < b.onset; });
  SadIntervals sad;
  sad.session = t.session;
  for (const Turn& turn : turns) {
    if (!sad.intervals.empty() && turn.onset <= sad.intervals.back().offset)
      sad.intervals.back().offset = std::max(sad.intervals.back().offset, turn.offset);
    else
      sad.intervals.push_back({turn.onset, turn.offset});
  }
  return sad;
}

}  // namespace diarkit
