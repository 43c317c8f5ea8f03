// Copyright 2026 The leopard-sim Authors
// SPDX-License-Identifier: Apache-2.0

// Workload traces: quantized per-head Q/K/V plus one threshold per layer.
//
// File layout:
//
//   8 bytes   magic "LEOPARDT"
//   4 bytes   header length n, little-endian u32
//   n bytes   UTF-8 JSON header
//   payload   int16 little-endian signed codes; per head Q, K and V, each
//             seq_len x d row-major, at the byte offset given in the header
//
// The header carries format/version/endianness, model and task names, the
// three QuantSpecs and, per layer, the threshold (a number or "-inf"/"+inf")
// and the head geometry. Thresholds apply to scaled scores q.k / sqrt(d) in
// real units.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "leopard/error.hpp"
#include "leopard/fxp.hpp"
#include "leopard/matrix.hpp"

namespace leopard {

inline constexpr char kTraceMagic[8] = {'L', 'E', 'O', 'P', 'A', 'R', 'D', 'T'};
inline constexpr int kTraceVersion = 1;

struct HeadTrace {
  std::size_t seq_len = 0;
  std::size_t valid_length = 0;
  std::size_t d = 0;
  double q_scale = 1.0;
  double k_scale = 1.0;
  double v_scale = 1.0;
  std::vector<std::int32_t> q;  ///< seq_len x d signed codes
  std::vector<std::int32_t> k;
  std::vector<std::int32_t> v;

  friend bool operator==(const HeadTrace&, const HeadTrace&) = default;
};

struct LayerTrace {
  double threshold = 0.0;  ///< may be -inf (pruning off) or +inf
  std::vector<HeadTrace> heads;

  friend bool operator==(const LayerTrace&, const LayerTrace&) = default;
};

struct WorkloadTrace {
  std::string model = "synthetic";
  std::string task = "none";
  QuantSpec q_spec = QuantSpec::unit(12);
  QuantSpec k_spec = QuantSpec::unit(12);
  QuantSpec v_spec = QuantSpec::unit(16);
  std::vector<LayerTrace> layers;

  std::size_t head_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.heads.size();
    return n;
  }

  friend bool operator==(const WorkloadTrace&, const WorkloadTrace&) = default;
};

struct TraceIssue {
  std::string field;
  std::string message;
};

/// Every structural problem with `t`; empty when the trace is usable.
inline std::vector<TraceIssue> check_trace(const WorkloadTrace& t) {
  std::vector<TraceIssue> out;
  auto spec_ok = [&](const QuantSpec& s, const char* name) {
    if (s.total_bits < 2 || s.total_bits > 16 || s.frac_bits < 0 || s.frac_bits > s.total_bits - 1) {
      out.push_back({name, "total_bits must be in [2, 16] and frac_bits in [0, total_bits - 1]"});
      return false;
    }
    return true;
  };
  const bool qs = spec_ok(t.q_spec, "q_spec");
  const bool ks = spec_ok(t.k_spec, "k_spec");
  const bool vs = spec_ok(t.v_spec, "v_spec");
  for (std::size_t l = 0; l < t.layers.size(); ++l) {
    const std::string lp = "layers[" + std::to_string(l) + "]";
    if (std::isnan(t.layers[l].threshold)) out.push_back({lp + ".threshold", "NaN threshold"});
    for (std::size_t h = 0; h < t.layers[l].heads.size(); ++h) {
      const auto& hd = t.layers[l].heads[h];
      const std::string hp = lp + ".heads[" + std::to_string(h) + "]";
      if (hd.valid_length > hd.seq_len) out.push_back({hp + ".valid_length", "exceeds seq_len"});
      if (hd.d == 0) out.push_back({hp + ".d", "must be positive"});
      for (auto [sc, nm] : {std::pair{hd.q_scale, ".q_scale"}, {hd.k_scale, ".k_scale"}, {hd.v_scale, ".v_scale"}}) {
        if (!(sc > 0.0) || !std::isfinite(sc)) out.push_back({hp + nm, "scale must be positive and finite"});
      }
      const std::size_t n = hd.seq_len * hd.d;
      auto mat = [&](const std::vector<std::int32_t>& m, const char* nm, bool spec_valid, const QuantSpec& s) {
        if (m.size() != n) {
          out.push_back({hp + nm, "has " + std::to_string(m.size()) + " codes, expected " + std::to_string(n)});
          return;
        }
        if (!spec_valid) return;
        for (std::int32_t c : m) {
          if (std::abs(static_cast<std::int64_t>(c)) > s.max_magnitude()) {
            out.push_back({hp + nm, "code " + std::to_string(c) + " exceeds the magnitude range"});
            return;
          }
        }
      };
      mat(hd.q, ".q", qs, t.q_spec);
      mat(hd.k, ".k", ks, t.k_spec);
      mat(hd.v, ".v", vs, t.v_spec);
    }
  }
  return out;
}

inline void validate_trace(const WorkloadTrace& t) {
  const auto issues = check_trace(t);
  if (!issues.empty()) throw ValidationError(issues.front().field, issues.front().message);
}

/// Dequantized seq_len x d matrix of a head operand.
inline Matrix dequantize_codes(const std::vector<std::int32_t>& codes, std::size_t rows, std::size_t cols,
                               const QuantSpec& spec, double scale) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    m.data()[i] = std::ldexp(static_cast<double>(codes[i]), -spec.frac_bits) * scale;
  }
  return m;
}

/// Real value of one integer score step of head `h`, including the 1/sqrt(d)
/// scaling.
inline double score_unit(const WorkloadTrace& t, const HeadTrace& h) {
  return h.q_scale * h.k_scale * std::ldexp(1.0, -(t.q_spec.frac_bits + t.k_spec.frac_bits)) /
         std::sqrt(static_cast<double>(h.d));
}

/// Row `r` of a head operand as fixed-point values.
inline std::vector<FixedPointValue> code_row(const std::vector<std::int32_t>& codes, std::size_t r, std::size_t d,
                                             const QuantSpec& spec) {
  std::vector<FixedPointValue> out;
  out.reserve(d);
  for (std::size_t c = 0; c < d; ++c) out.push_back(FixedPointValue::from_raw(codes[r * d + c], spec));
  return out;
}

namespace detail {

inline nlohmann::ordered_json threshold_to_json(double th) {
  if (th == -std::numeric_limits<double>::infinity()) return "-inf";
  if (th == std::numeric_limits<double>::infinity()) return "+inf";
  return th;
}

inline double threshold_from_json(const nlohmann::json& j, const std::string& field) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "+inf" || s == "inf") return std::numeric_limits<double>::infinity();
  }
  throw ValidationError(field, "expected a number, \"-inf\" or \"+inf\"");
}

inline nlohmann::ordered_json spec_to_json(const QuantSpec& s) {
  return {{"total_bits", s.total_bits}, {"frac_bits", s.frac_bits}};
}

template <class T>
T require(const nlohmann::json& obj, const char* key, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) throw ValidationError(path + "." + key, "missing");
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(path + "." + key, "wrong type");
  }
}

inline QuantSpec spec_from_json(const nlohmann::json& j, const std::string& path) {
  return {require<int>(j, "total_bits", path), require<int>(j, "frac_bits", path)};
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_codes(std::string& out, const std::vector<std::int32_t>& codes) {
  for (std::int32_t c : codes) {
    const auto u = static_cast<std::uint16_t>(static_cast<std::int16_t>(c));
    out.push_back(static_cast<char>(u & 0xffu));
    out.push_back(static_cast<char>(u >> 8));
  }
}

}  // namespace detail

/// Serializes `t` to the binary container. Deterministic: equal traces give
/// identical bytes.
inline std::string encode_trace(const WorkloadTrace& t) {
  validate_trace(t);
  nlohmann::ordered_json hdr;
  hdr["format"] = "leopard-trace";
  hdr["version"] = kTraceVersion;
  hdr["endianness"] = "little";
  hdr["model"] = t.model;
  hdr["task"] = t.task;
  hdr["q_spec"] = detail::spec_to_json(t.q_spec);
  hdr["k_spec"] = detail::spec_to_json(t.k_spec);
  hdr["v_spec"] = detail::spec_to_json(t.v_spec);
  hdr["layers"] = nlohmann::ordered_json::array();
  std::string payload;
  for (const auto& l : t.layers) {
    nlohmann::ordered_json lj;
    lj["threshold"] = detail::threshold_to_json(l.threshold);
    lj["heads"] = nlohmann::ordered_json::array();
    for (const auto& h : l.heads) {
      nlohmann::ordered_json hj;
      hj["seq_len"] = h.seq_len;
      hj["valid_length"] = h.valid_length;
      hj["d"] = h.d;
      hj["q_scale"] = h.q_scale;
      hj["k_scale"] = h.k_scale;
      hj["v_scale"] = h.v_scale;
      hj["offset"] = payload.size();
      detail::put_codes(payload, h.q);
      detail::put_codes(payload, h.k);
      detail::put_codes(payload, h.v);
      lj["heads"].push_back(std::move(hj));
    }
    hdr["layers"].push_back(std::move(lj));
  }
  hdr["payload_bytes"] = payload.size();
  const std::string header = hdr.dump();
  std::string out(kTraceMagic, sizeof kTraceMagic);
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  out += payload;
  return out;
}

inline WorkloadTrace decode_trace(const std::string& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kTraceMagic, 8) != 0) {
    throw ValidationError("magic", "not a trace file");
  }
  std::uint32_t n = 0;
  for (int i = 0; i < 4; ++i) n |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  if (bytes.size() < 12 + static_cast<std::size_t>(n)) throw ValidationError("header", "truncated");
  nlohmann::json hdr;
  try {
    hdr = nlohmann::json::parse(bytes.substr(12, n));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("header", std::string("invalid JSON: ") + e.what());
  }
  if (detail::require<std::string>(hdr, "format", "header") != "leopard-trace") {
    throw ValidationError("header.format", "expected \"leopard-trace\"");
  }
  const int version = detail::require<int>(hdr, "version", "header");
  if (version != kTraceVersion) {
    throw ValidationError("header.version", "unsupported version " + std::to_string(version));
  }
  if (detail::require<std::string>(hdr, "endianness", "header") != "little") {
    throw ValidationError("header.endianness", "only little-endian payloads are supported");
  }
  const std::string_view payload(bytes.data() + 12 + n, bytes.size() - 12 - n);
  WorkloadTrace t;
  t.model = detail::require<std::string>(hdr, "model", "header");
  t.task = detail::require<std::string>(hdr, "task", "header");
  t.q_spec = detail::spec_from_json(hdr.contains("q_spec") ? hdr["q_spec"] : nlohmann::json{}, "header.q_spec");
  t.k_spec = detail::spec_from_json(hdr.contains("k_spec") ? hdr["k_spec"] : nlohmann::json{}, "header.k_spec");
  t.v_spec = detail::spec_from_json(hdr.contains("v_spec") ? hdr["v_spec"] : nlohmann::json{}, "header.v_spec");
  if (!hdr.contains("layers") || !hdr["layers"].is_array()) throw ValidationError("header.layers", "missing");
  if (hdr.contains("payload_bytes") && detail::require<std::size_t>(hdr, "payload_bytes", "header") != payload.size()) {
    throw ValidationError("header.payload_bytes", "does not match the file size");
  }
  for (std::size_t l = 0; l < hdr["layers"].size(); ++l) {
    const auto& lj = hdr["layers"][l];
    const std::string lp = "layers[" + std::to_string(l) + "]";
    LayerTrace lt;
    if (!lj.is_object() || !lj.contains("threshold")) throw ValidationError(lp + ".threshold", "missing");
    lt.threshold = detail::threshold_from_json(lj["threshold"], lp + ".threshold");
    if (!lj.contains("heads") || !lj["heads"].is_array()) throw ValidationError(lp + ".heads", "missing");
    for (std::size_t h = 0; h < lj["heads"].size(); ++h) {
      const auto& hj = lj["heads"][h];
      const std::string hp = lp + ".heads[" + std::to_string(h) + "]";
      HeadTrace ht;
      ht.seq_len = detail::require<std::size_t>(hj, "seq_len", hp);
      ht.valid_length = detail::require<std::size_t>(hj, "valid_length", hp);
      ht.d = detail::require<std::size_t>(hj, "d", hp);
      ht.q_scale = detail::require<double>(hj, "q_scale", hp);
      ht.k_scale = detail::require<double>(hj, "k_scale", hp);
      ht.v_scale = detail::require<double>(hj, "v_scale", hp);
      const auto offset = detail::require<std::size_t>(hj, "offset", hp);
      const std::size_t count = ht.seq_len * ht.d;
      if (ht.d != 0 && count / ht.d != ht.seq_len) throw ValidationError(hp + ".seq_len", "too large");
      if (offset > payload.size() || (payload.size() - offset) / 6 < count) {
        throw ValidationError(hp + ".offset", "payload too short for this head");
      }
      auto read = [&](std::size_t base, std::vector<std::int32_t>& dst) {
        dst.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
          const auto lo = static_cast<unsigned char>(payload[base + 2 * i]);
          const auto hi = static_cast<unsigned char>(payload[base + 2 * i + 1]);
          dst[i] = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
        }
      };
      read(offset, ht.q);
      read(offset + 2 * count, ht.k);
      read(offset + 4 * count, ht.v);
      lt.heads.push_back(std::move(ht));
    }
    t.layers.push_back(std::move(lt));
  }
  validate_trace(t);
  return t;
}

inline void write_trace(const std::string& path, const WorkloadTrace& t) {
  const std::string bytes = encode_trace(t);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParameterError("cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write failed: " + path);
}

inline WorkloadTrace read_trace(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParameterError("cannot open trace " + path);
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_trace(bytes);
}

}  // namespace leopard
