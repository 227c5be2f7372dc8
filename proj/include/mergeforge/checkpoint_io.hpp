#pragma once

// Single-file tensor container:
//
//   [u64 little-endian header length N][N bytes UTF-8 JSON header][payload]
//
// The header maps tensor name -> {"dtype", "shape", "data_offsets": [begin, end]}
// with offsets relative to the payload start, plus an optional "__metadata__"
// object of string -> string. Tensors tile the payload contiguously with no
// padding. Writers emit F32 only, with keys sorted and no whitespace, so the
// file bytes are a pure function of the TensorMap value.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mergeforge/error.hpp"
#include "mergeforge/tensor.hpp"

namespace mergeforge {

/// Exact IEEE-754 binary16 -> binary32 conversion (subnormals, infinities
/// and NaN payloads included).
inline float half_to_float(std::uint16_t h) noexcept {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  std::uint32_t exponent = (h >> 10) & 0x1Fu;
  std::uint32_t mantissa = h & 0x3FFu;
  std::uint32_t bits;
  if (exponent == 0x1F) {
    bits = sign | 0x7F800000u | (mantissa << 13);
  } else if (exponent != 0) {
    bits = sign | ((exponent + 112) << 23) | (mantissa << 13);
  } else if (mantissa == 0) {
    bits = sign;
  } else {
    // subnormal: renormalize into an F32 normal
    int shift = 0;
    while ((mantissa & 0x400u) == 0) {
      mantissa <<= 1;
      ++shift;
    }
    mantissa &= 0x3FFu;
    bits = sign | (static_cast<std::uint32_t>(113 - shift) << 23) | (mantissa << 13);
  }
  return std::bit_cast<float>(bits);
}

struct TensorInfo {
  std::string name;
  Dtype dtype = Dtype::F32;
  Shape shape;
  std::uint64_t begin = 0;
  std::uint64_t end = 0;
};

struct HeaderSummary {
  std::size_t tensor_count = 0;
  std::uint64_t total_bytes = 0;
  std::set<Dtype> dtypes;
  std::uint64_t parameter_count = 0;
  std::vector<TensorInfo> tensors;  // lexicographic by name
  std::map<std::string, std::string> metadata;
};

namespace detail {

inline std::uint64_t read_u64_le(const unsigned char* p) noexcept {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline void write_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint64_t checked_byte_size(const Shape& shape, Dtype dtype, const std::string& name) {
  std::uint64_t n = dtype_size(dtype);
  for (std::uint64_t d : shape) {
    if (d != 0 && n > UINT64_MAX / d) {
      fail(ErrorKind::MalformedHeader, "tensor '" + name + "' shape overflows");
    }
    n *= d;
  }
  return n;
}

/// Parses and validates the JSON header against a payload of
/// `payload_size` bytes.
inline HeaderSummary parse_header(std::string_view header_text, std::uint64_t payload_size) {
  using nlohmann::json;
  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    fail(ErrorKind::MalformedHeader, std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) fail(ErrorKind::MalformedHeader, "header must be a JSON object");

  HeaderSummary summary;
  for (const auto& [key, value] : header.items()) {
    if (key == TensorMap::kMetadataKey) {
      if (!value.is_object()) fail(ErrorKind::MalformedHeader, "__metadata__ must be an object");
      for (const auto& [mk, mv] : value.items()) {
        if (!mv.is_string()) {
          fail(ErrorKind::MalformedHeader, "__metadata__ value for '" + mk + "' is not a string");
        }
        summary.metadata.emplace(mk, mv.get<std::string>());
      }
      continue;
    }
    if (key.empty()) fail(ErrorKind::MalformedHeader, "empty tensor name");
    if (!value.is_object()) fail(ErrorKind::MalformedHeader, "entry '" + key + "' is not an object");
    for (const auto& [field, _] : value.items()) {
      if (field != "dtype" && field != "shape" && field != "data_offsets") {
        fail(ErrorKind::MalformedHeader, "entry '" + key + "' has unknown field '" + field + "'");
      }
    }
    if (!value.contains("dtype") || !value.contains("shape") || !value.contains("data_offsets")) {
      fail(ErrorKind::MalformedHeader, "entry '" + key + "' lacks dtype, shape or data_offsets");
    }
    const json& dtype = value["dtype"];
    if (!dtype.is_string()) fail(ErrorKind::MalformedHeader, "entry '" + key + "' dtype is not a string");
    TensorInfo info;
    info.name = key;
    const auto dtype_name = dtype.get<std::string>();
    if (dtype_name == "F32") {
      info.dtype = Dtype::F32;
    } else if (dtype_name == "F16") {
      info.dtype = Dtype::F16;
    } else {
      fail(ErrorKind::UnsupportedDtype, "tensor '" + key + "' has dtype " + dtype_name);
    }
    const json& shape = value["shape"];
    if (!shape.is_array()) fail(ErrorKind::MalformedHeader, "entry '" + key + "' shape is not an array");
    for (const json& d : shape) {
      if (!d.is_number_unsigned()) {
        fail(ErrorKind::MalformedHeader, "entry '" + key + "' shape has a non-natural dimension");
      }
      info.shape.push_back(d.get<std::uint64_t>());
    }
    const json& offsets = value["data_offsets"];
    if (!offsets.is_array() || offsets.size() != 2 || !offsets[0].is_number_unsigned() ||
        !offsets[1].is_number_unsigned()) {
      fail(ErrorKind::MalformedHeader, "entry '" + key + "' data_offsets must be [begin, end]");
    }
    info.begin = offsets[0].get<std::uint64_t>();
    info.end = offsets[1].get<std::uint64_t>();
    if (info.begin > info.end) {
      fail(ErrorKind::MalformedHeader, "entry '" + key + "' has begin > end");
    }
    const std::uint64_t expected = checked_byte_size(info.shape, info.dtype, key);
    if (info.end - info.begin != expected) {
      fail(ErrorKind::ShapeMismatch, "tensor '" + key + "' spans " +
                                         std::to_string(info.end - info.begin) +
                                         " bytes but shape " + shape_string(info.shape) + " of " +
                                         std::string(to_string(info.dtype)) + " needs " +
                                         std::to_string(expected));
    }
    summary.dtypes.insert(info.dtype);
    summary.parameter_count += element_count(info.shape);
    summary.tensors.push_back(std::move(info));
  }

  // Tensors must tile [0, total) without gaps or overlap.
  std::vector<const TensorInfo*> by_offset;
  for (const auto& t : summary.tensors) by_offset.push_back(&t);
  std::stable_sort(by_offset.begin(), by_offset.end(), [](const TensorInfo* a, const TensorInfo* b) {
    return a->begin != b->begin ? a->begin < b->begin : a->end < b->end;
  });
  std::uint64_t cursor = 0;
  for (const TensorInfo* t : by_offset) {
    if (t->begin != cursor) {
      fail(ErrorKind::MalformedHeader, "tensor '" + t->name + "' offsets " +
                                           (t->begin < cursor ? "overlap" : "leave a gap") +
                                           " at byte " + std::to_string(cursor));
    }
    cursor = t->end;
  }
  if (cursor > payload_size) {
    fail(ErrorKind::ShapeMismatch, "payload holds " + std::to_string(payload_size) +
                                       " bytes but the header declares " + std::to_string(cursor));
  }
  if (cursor < payload_size) {
    fail(ErrorKind::MalformedHeader, std::to_string(payload_size - cursor) +
                                         " trailing payload bytes not covered by the header");
  }
  summary.tensor_count = summary.tensors.size();
  summary.total_bytes = cursor;
  return summary;
}

inline std::uint64_t read_header_length(std::istream& in, std::uint64_t file_size,
                                        const std::string& path) {
  if (file_size < 8) fail(ErrorKind::MalformedHeader, path + ": file shorter than 8 bytes");
  std::array<unsigned char, 8> prefix{};
  in.read(reinterpret_cast<char*>(prefix.data()), 8);
  if (!in) fail(ErrorKind::IoFailure, path + ": cannot read header length");
  const std::uint64_t n = read_u64_le(prefix.data());
  if (n > file_size - 8) {
    fail(ErrorKind::MalformedHeader, path + ": header length " + std::to_string(n) +
                                         " exceeds file size " + std::to_string(file_size));
  }
  return n;
}

inline std::uint64_t file_size_of(const std::string& path) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) fail(ErrorKind::IoFailure, path + ": " + ec.message());
  return size;
}

}  // namespace detail

/// Reads and validates only the header; the payload is never loaded.
inline HeaderSummary validate_header(const std::string& path) {
  const std::uint64_t size = detail::file_size_of(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoFailure, path + ": cannot open for reading");
  const std::uint64_t n = detail::read_header_length(in, size, path);
  std::string text(n, '\0');
  in.read(text.data(), static_cast<std::streamsize>(n));
  if (!in) fail(ErrorKind::IoFailure, path + ": cannot read header");
  return detail::parse_header(text, size - 8 - n);
}

/// Decodes a whole container held in memory.
inline TensorMap decode_checkpoint(std::string_view bytes, const std::string& origin = "<memory>") {
  if (bytes.size() < 8) fail(ErrorKind::MalformedHeader, origin + ": shorter than 8 bytes");
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t n = detail::read_u64_le(raw);
  if (n > bytes.size() - 8) {
    fail(ErrorKind::MalformedHeader, origin + ": header length " + std::to_string(n) +
                                         " exceeds size " + std::to_string(bytes.size()));
  }
  const std::string_view payload = bytes.substr(8 + n);
  HeaderSummary summary = detail::parse_header(bytes.substr(8, n), payload.size());

  TensorMap map;
  map.metadata() = std::move(summary.metadata);
  for (auto& info : summary.tensors) {
    const auto* src = reinterpret_cast<const unsigned char*>(payload.data() + info.begin);
    const std::size_t count = element_count(info.shape);
    std::vector<float> data(count);
    if (info.dtype == Dtype::F32) {
      for (std::size_t i = 0; i < count; ++i) {
        const unsigned char* p = src + 4 * i;
        const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                                   (static_cast<std::uint32_t>(p[1]) << 8) |
                                   (static_cast<std::uint32_t>(p[2]) << 16) |
                                   (static_cast<std::uint32_t>(p[3]) << 24);
        data[i] = std::bit_cast<float>(bits);
      }
    } else {
      for (std::size_t i = 0; i < count; ++i) {
        const unsigned char* p = src + 2 * i;
        data[i] = half_to_float(static_cast<std::uint16_t>(p[0] | (p[1] << 8)));
      }
    }
    const Dtype source = info.dtype;
    map.insert(std::move(info.name), Tensor(std::move(info.shape), std::move(data), source));
  }
  return map;
}

inline TensorMap read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoFailure, path + ": cannot open for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::IoFailure, path + ": read error");
  return decode_checkpoint(bytes, path);
}

/// Canonical byte encoding of a TensorMap. Every tensor is stored as F32.
inline std::string encode_checkpoint(const TensorMap& map) {
  using nlohmann::json;
  json header = json::object();
  std::uint64_t cursor = 0;
  for (const auto& [name, tensor] : map) {
    const std::uint64_t bytes = 4 * static_cast<std::uint64_t>(tensor.size());
    header[name] = {{"dtype", "F32"}, {"shape", tensor.shape}, {"data_offsets", {cursor, cursor + bytes}}};
    cursor += bytes;
  }
  if (!map.metadata().empty()) header[std::string(TensorMap::kMetadataKey)] = map.metadata();

  std::string text;
  try {
    text = header.dump();
  } catch (const json::exception& e) {
    fail(ErrorKind::MalformedHeader, std::string("cannot encode header: ") + e.what());
  }
  std::string out;
  out.reserve(8 + text.size() + cursor);
  detail::write_u64_le(out, text.size());
  out += text;
  for (const auto& [_, tensor] : map) {
    for (float v : tensor.data) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
    }
  }
  return out;
}

inline void write_checkpoint(const TensorMap& map, const std::string& path) {
  const std::string bytes = encode_checkpoint(map);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoFailure, path + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) fail(ErrorKind::IoFailure, path + ": write failed");
}

}  // namespace mergeforge
