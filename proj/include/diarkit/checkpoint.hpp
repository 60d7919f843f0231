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

// Binary checkpoint format (all integers and floats little-endian):
//
//   "DKCK" | u16 version | u8 role | u8 stage | u64 seed
//   u32 d_n | u32 d_c | f64 sigma
//   u32 len | digest bytes
//   u32 count | count x (u32 len | key bytes | f64 value)     hyperparameters
//   u32 layers | layers x (u32 in | u32 out | u8 activation | u32 softmax_width)
//   per layer: out*in f64 weights (row-major), out f64 bias
//
// A human-readable "<path>.manifest" is written next to every checkpoint.

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "diarkit/errors.hpp"
#include "diarkit/io.hpp"
#include "diarkit/nets.hpp"

namespace diarkit {

inline constexpr char kCheckpointMagic[4] = {'D', 'K', 'C', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    uint(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::vector<unsigned char>& bytes() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<unsigned char>& b) : buf_(b) {}

  std::size_t pos() const { return pos_; }
  std::size_t size() const { return buf_.size(); }

  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n)
      throw FormatError(std::string("truncated checkpoint while reading ") + what, pos_);
  }
  template <typename U>
  U uint(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(buf_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(uint<std::uint64_t>(what)); }
  std::string str(const char* what) {
    const auto n = uint<std::uint32_t>(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  const std::vector<unsigned char>& buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> serialize_checkpoint(const MlpCheckpoint& ck) {
  ck.validate();
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.uint(kCheckpointVersion);
  w.uint(static_cast<std::uint8_t>(ck.role));
  w.uint(static_cast<std::uint8_t>(ck.provenance.stage));
  w.uint(ck.provenance.seed);
  w.uint(static_cast<std::uint32_t>(ck.latent.d_n));
  w.uint(static_cast<std::uint32_t>(ck.latent.d_c));
  w.f64(ck.latent.sigma);
  w.str(ck.provenance.config_digest);
  w.uint(static_cast<std::uint32_t>(ck.provenance.hyper.size()));
  for (const auto& [k, v] : ck.provenance.hyper) {
    w.str(k);
    w.f64(v);
  }
  w.uint(static_cast<std::uint32_t>(ck.params.size()));
  for (const Layer& l : ck.params.layers()) {
    w.uint(static_cast<std::uint32_t>(l.in_dim()));
    w.uint(static_cast<std::uint32_t>(l.out_dim()));
    w.uint(static_cast<std::uint8_t>(l.activation));
    w.uint(static_cast<std::uint32_t>(l.softmax_width));
  }
  for (const Layer& l : ck.params.layers()) {
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) w.f64(l.weight.data()[i]);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) w.f64(l.bias[i]);
  }
  return std::move(w.bytes());
}

inline MlpCheckpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
  detail::ByteReader r(bytes);
  r.need(4, "magic");
  if (!std::equal(kCheckpointMagic, kCheckpointMagic + 4, bytes.begin()))
    throw FormatError("bad checkpoint magic (expected DKCK)", 0);
  (void)r.uint<std::uint32_t>("magic");
  const std::size_t version_at = r.pos();
  const auto version = r.uint<std::uint16_t>("version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);

  MlpCheckpoint ck;
  const std::size_t role_at = r.pos();
  const auto role = r.uint<std::uint8_t>("role");
  if (role > 2) throw FormatError("bad role byte " + std::to_string(role), role_at);
  ck.role = static_cast<Role>(role);
  const std::size_t stage_at = r.pos();
  const auto stage = r.uint<std::uint8_t>("stage");
  if (stage > 1) throw FormatError("bad stage byte " + std::to_string(stage), stage_at);
  ck.provenance.stage = static_cast<Stage>(stage);
  ck.provenance.seed = r.uint<std::uint64_t>("seed");
  ck.latent.d_n = r.uint<std::uint32_t>("d_n");
  ck.latent.d_c = r.uint<std::uint32_t>("d_c");
  ck.latent.sigma = r.f64("sigma");
  ck.provenance.config_digest = r.str("digest");
  const auto n_hyper = r.uint<std::uint32_t>("hyperparameter count");
  for (std::uint32_t i = 0; i < n_hyper; ++i) {
    std::string k = r.str("hyperparameter name");
    const double v = r.f64("hyperparameter value");
    ck.provenance.hyper.emplace_back(std::move(k), v);
  }

  const auto n_layers = r.uint<std::uint32_t>("layer count");
  struct Shape {
    std::uint32_t in, out, softmax;
    std::uint8_t act;
  };
  std::vector<Shape> shapes;
  std::size_t payload = 0;
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    Shape s{};
    s.in = r.uint<std::uint32_t>("layer in dim");
    s.out = r.uint<std::uint32_t>("layer out dim");
    const std::size_t act_at = r.pos();
    s.act = r.uint<std::uint8_t>("activation");
    if (s.act > 2) throw FormatError("bad activation byte " + std::to_string(s.act), act_at);
    s.softmax = r.uint<std::uint32_t>("softmax width");
    payload += (static_cast<std::size_t>(s.in) * s.out + s.out) * sizeof(double);
    shapes.push_back(s);
  }
  const std::size_t expected = r.pos() + payload;
  if (bytes.size() != expected)
    throw FormatError("checkpoint length mismatch: expected " + std::to_string(expected) +
                          " bytes, file has " + std::to_string(bytes.size()),
                      std::min(bytes.size(), expected));

  std::vector<Layer> layers;
  for (const Shape& s : shapes) {
    Layer l;
    l.activation = static_cast<Activation>(s.act);
    l.softmax_width = s.softmax;
    l.weight.resize(s.out, s.in);
    l.bias.resize(s.out);
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = r.f64("weights");
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = r.f64("bias");
    layers.push_back(std::move(l));
  }
  try {
    ck.params = MlpParams(std::move(layers));
    ck.validate();
  } catch (const ShapeError& e) {
    throw FormatError(std::string("inconsistent architecture: ") + e.what(), bytes.size());
  }
  return ck;
}

inline std::string checkpoint_manifest(const MlpCheckpoint& ck) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "format: DKCK v" << kCheckpointVersion << "\n";
  os << "role: " << to_string(ck.role) << "\n";
  os << "stage: " << to_string(ck.provenance.stage) << "\n";
  os << "seed: " << ck.provenance.seed << "\n";
  os << "config_digest: " << ck.provenance.config_digest << "\n";
  os << "latent: d_n=" << ck.latent.d_n << " d_c=" << ck.latent.d_c << " sigma=" << ck.latent.sigma << "\n";
  os << "layers:";
  for (const Layer& l : ck.params.layers()) {
    os << " " << l.in_dim() << "->" << l.out_dim() << ":" << to_string(l.activation);
    if (l.activation == Activation::softmax_tail) os << "(" << l.softmax_width << ")";
  }
  os << "\n";
  for (const auto& [k, v] : ck.provenance.hyper) os << k << ": " << v << "\n";
  return os.str();
}

inline void save_checkpoint(const MlpCheckpoint& ck, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ck);
  write_file_atomic(path, bytes.data(), bytes.size());
  const std::string manifest = checkpoint_manifest(ck);
  write_file_atomic(path.string() + ".manifest", manifest.data(), manifest.size());
}

inline MlpCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file_bytes(path));
}

}  // namespace diarkit
