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

// Text and binary interchange formats.
//
//   RTTM       SPEAKER <session> 1 <onset> <dur> <NA> <NA> <label> <NA> <NA>
//   SAD        <session> <onset> <offset>
//   EMB text   "EMB 1 <n> <d>" then n lines of d decimals
//   EMB binary "DKEM", u16 version, u32 n, u32 d, n*d little-endian f32
//   labels     one integer per line

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "diarkit/errors.hpp"
#include "diarkit/numkit/matrix.hpp"
#include "diarkit/timeline.hpp"

namespace diarkit {

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    fn(text.substr(pos, end - pos), ++line_no);
    pos = end + 1;
  }
}

inline double parse_double(std::string_view s, std::size_t line, const char* what) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
    throw ParseError(std::string("bad ") + what + " '" + std::string(s) + "'", line);
  return v;
}

template <typename Int>
Int parse_int(std::string_view s, std::size_t line, const char* what) {
  Int v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ParseError(std::string("bad ") + what + " '" + std::string(s) + "'", line);
  return v;
}

inline void append_ms(std::string& out, Ms ms) {
  char buf[32];
  const Ms whole = ms / 1000, frac = ms % 1000;
  if (ms < 0) throw ContractError("negative time in output");
  std::snprintf(buf, sizeof buf, "%lld.%03lld", static_cast<long long>(whole), static_cast<long long>(frac));
  out += buf;
}

inline void append_shortest(std::string& out, double v) {
  char buf[32];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, p);
}

}  // namespace detail

// ---- RTTM ----

inline std::string format_rttm(const Timeline& t) {
  std::string out;
  for (const Turn& turn : t.turns) {
    out += "SPEAKER ";
    out += t.session;
    out += " 1 ";
    detail::append_ms(out, turn.onset);
    out += ' ';
    detail::append_ms(out, turn.duration());
    out += " <NA> <NA> ";
    out += turn.speaker;
    out += " <NA> <NA>\n";
  }
  return out;
}

// Turns grouped by session; lines of other types and comments are skipped.
inline std::map<std::string, Timeline> parse_rttm(std::string_view text) {
  std::map<std::string, Timeline> out;
  detail::for_each_line(text, [&](std::string_view line, std::size_t no) {
    const auto f = detail::split_ws(line);
    if (f.empty() || f[0] != "SPEAKER") return;
    if (f.size() < 8) throw ParseError("SPEAKER line needs at least 8 fields, has " + std::to_string(f.size()), no);
    const double onset = detail::parse_double(f[3], no, "onset");
    const double dur = detail::parse_double(f[4], no, "duration");
    if (onset < 0) throw ParseError("negative onset", no);
    if (dur < 0) throw ParseError("negative duration", no);
    Timeline& t = out[std::string(f[1])];
    t.session = std::string(f[1]);
    const Ms on = to_ms(onset);
    const Ms off = to_ms(onset + dur);
    if (off > on) t.turns.push_back({on, off, std::string(f[7])});
  });
  for (auto& [id, t] : out) t.sort();
  return out;
}

// ---- SAD ----

inline std::string format_sad(const SadIntervals& sad) {
  std::string out;
  for (const SadInterval& s : sad.intervals) {
    out += sad.session;
    out += ' ';
    detail::append_ms(out, s.onset);
    out += ' ';
    detail::append_ms(out, s.offset);
    out += '\n';
  }
  return out;
}

inline std::map<std::string, SadIntervals> parse_sad(std::string_view text) {
  std::map<std::string, SadIntervals> out;
  detail::for_each_line(text, [&](std::string_view line, std::size_t no) {
    const auto f = detail::split_ws(line);
    if (f.empty() || f[0].front() == '#') return;
    if (f.size() != 3) throw ParseError("SAD line needs 3 fields, has " + std::to_string(f.size()), no);
    const Ms on = to_ms(detail::parse_double(f[1], no, "onset"));
    const Ms off = to_ms(detail::parse_double(f[2], no, "offset"));
    if (on < 0 || off <= on) throw ParseError("SAD interval must satisfy 0 <= onset < offset", no);
    SadIntervals& s = out[std::string(f[0])];
    s.session = std::string(f[0]);
    if (!s.intervals.empty() && on < s.intervals.back().offset)
      throw ParseError("SAD intervals unsorted or overlapping", no);
    s.intervals.push_back({on, off});
  });
  return out;
}

// ---- embeddings, text ----

inline std::string format_emb_text(const EmbeddingMatrix& x) {
  std::string out = "EMB 1 " + std::to_string(x.rows()) + " " + std::to_string(x.cols()) + "\n";
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (j) out += ' ';
      detail::append_shortest(out, x(i, j));
    }
    out += '\n';
  }
  return out;
}

inline EmbeddingMatrix parse_emb_text(std::string_view text) {
  EmbeddingMatrix x;
  Eigen::Index n = -1, d = 0, row = 0;
  detail::for_each_line(text, [&](std::string_view line, std::size_t no) {
    const auto f = detail::split_ws(line);
    if (n < 0) {
      if (f.size() != 4 || f[0] != "EMB") throw ParseError("expected header 'EMB 1 <n> <d>'", no);
      if (f[1] != "1") throw ParseError("unsupported EMB version " + std::string(f[1]), no);
      n = detail::parse_int<Eigen::Index>(f[2], no, "row count");
      d = detail::parse_int<Eigen::Index>(f[3], no, "dimension");
      if (n < 0 || d <= 0) throw ParseError("bad EMB shape", no);
      x.resize(n, d);
      return;
    }
    if (f.empty()) return;
    if (row >= n) throw ParseError("more than " + std::to_string(n) + " rows", no);
    if (static_cast<Eigen::Index>(f.size()) != d)
      throw ParseError("row has " + std::to_string(f.size()) + " values, expected " + std::to_string(d), no);
    for (Eigen::Index j = 0; j < d; ++j) x(row, j) = detail::parse_double(f[static_cast<std::size_t>(j)], no, "value");
    ++row;
  });
  if (n < 0) throw ParseError("missing EMB header", 1);
  if (row != n) throw ParseError("expected " + std::to_string(n) + " rows, found " + std::to_string(row), 0);
  return x;
}

// ---- embeddings, binary ----

inline constexpr char kEmbMagic[4] = {'D', 'K', 'E', 'M'};

inline std::vector<unsigned char> serialize_emb_binary(const EmbeddingMatrix& x) {
  std::vector<unsigned char> out;
  auto put = [&](auto v) {
    for (std::size_t i = 0; i < sizeof v; ++i) out.push_back(static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  };
  out.insert(out.end(), kEmbMagic, kEmbMagic + 4);
  put(std::uint16_t{1});
  put(static_cast<std::uint32_t>(x.rows()));
  put(static_cast<std::uint32_t>(x.cols()));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) put(std::bit_cast<std::uint32_t>(static_cast<float>(x(i, j))));
  return out;
}

inline EmbeddingMatrix deserialize_emb_binary(const std::vector<unsigned char>& b) {
  std::size_t pos = 0;
  auto get = [&](std::size_t n) {
    if (pos + n > b.size()) throw FormatError("truncated embedding file", pos);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[pos + i]) << (8 * i);
    pos += n;
    return v;
  };
  if (b.size() < 4 || std::memcmp(b.data(), kEmbMagic, 4) != 0) throw FormatError("bad embedding magic", 0);
  pos = 4;
  const auto version = get(2);
  if (version != 1) throw FormatError("unsupported embedding version " + std::to_string(version), 4);
  const auto n = static_cast<Eigen::Index>(get(4));
  const auto d = static_cast<Eigen::Index>(get(4));
  const std::size_t expect = 14 + static_cast<std::size_t>(n * d) * 4;
  if (b.size() != expect)
    throw FormatError("expected " + std::to_string(expect) + " bytes, file has " + std::to_string(b.size()),
                      std::min(b.size(), expect));
  EmbeddingMatrix x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      x(i, j) = static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(get(4))));
  return x;
}

// Text or binary, by magic.
inline EmbeddingMatrix parse_emb_any(const std::vector<unsigned char>& bytes) {
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kEmbMagic, 4) == 0) return deserialize_emb_binary(bytes);
  return parse_emb_text(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

// ---- integer labels ----

inline std::string format_labels(const std::vector<int>& labels) {
  std::string out;
  for (int y : labels) {
    out += std::to_string(y);
    out += '\n';
  }
  return out;
}

inline std::vector<int> parse_labels(std::string_view text) {
  std::vector<int> out;
  detail::for_each_line(text, [&](std::string_view line, std::size_t no) {
    const auto f = detail::split_ws(line);
    if (f.empty()) return;
    if (f.size() != 1) throw ParseError("expected one label per line", no);
    out.push_back(detail::parse_int<int>(f[0], no, "label"));
  });
  return out;
}

}  // namespace diarkit
