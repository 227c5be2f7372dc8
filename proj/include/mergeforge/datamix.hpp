#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>
#include <vector>

#include "mergeforge/error.hpp"
#include "mergeforge/numeric.hpp"

namespace mergeforge {

/// Opaque text records, one per line on disk. Records are carried through
/// every operation byte-for-byte.
struct RecordDataset {
  std::string source_id;
  std::vector<std::string> records;

  std::size_t count() const noexcept { return records.size(); }
};

/// Fisher-Yates permutation of [0, n): i runs from n-1 down to 1 and swaps
/// with draw mod (i+1).
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  SplitMix64 rng(seed);
  for (std::size_t i = n; i-- > 1;) {
    const auto j = static_cast<std::size_t>(rng.next() % (static_cast<std::uint64_t>(i) + 1));
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

/// Uniform subsample of floor(ratio * count) records in their original
/// relative order.
inline RecordDataset subsample(const RecordDataset& ds, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    fail(ErrorKind::InvalidRatio, "ratio must lie in (0, 1], got " + std::to_string(ratio));
  }
  const auto keep = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(ds.count())));
  std::vector<std::size_t> idx = shuffled_indices(ds.count(), seed);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  RecordDataset out;
  out.source_id = ds.source_id;
  out.records.reserve(keep);
  for (std::size_t i : idx) out.records.push_back(ds.records[i]);
  return out;
}

/// Concatenates the parts in order, then shuffles the union.
inline RecordDataset mix_datasets(const std::vector<RecordDataset>& parts, std::uint64_t seed) {
  if (parts.empty()) fail(ErrorKind::EmptyInput, "mix needs at least one dataset");
  std::vector<const std::string*> all;
  std::string source;
  for (const auto& p : parts) {
    if (!source.empty()) source += "+";
    source += p.source_id;
    for (const auto& r : p.records) all.push_back(&r);
  }
  RecordDataset out;
  out.source_id = source;
  out.records.reserve(all.size());
  for (std::size_t i : shuffled_indices(all.size(), seed)) out.records.push_back(*all[i]);
  return out;
}

/// Seed for the ordinal-th input of a multi-input command, derived from the
/// user seed so inputs draw independent permutations.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t ordinal) {
  return SplitMix64(seed ^ ordinal).next();
}

/// Reads LF-terminated lines. A final line without a terminator is kept;
/// the empty string after a trailing LF is not a record.
inline RecordDataset read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoFailure, path + ": cannot open for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::IoFailure, path + ": read error");
  RecordDataset ds;
  ds.source_id = path;
  std::size_t start = 0;
  while (start < bytes.size()) {
    const std::size_t nl = bytes.find('\n', start);
    if (nl == std::string::npos) {
      ds.records.push_back(bytes.substr(start));
      break;
    }
    ds.records.push_back(bytes.substr(start, nl - start));
    start = nl + 1;
  }
  return ds;
}

inline std::string encode_jsonl(const RecordDataset& ds) {
  std::string out;
  for (const auto& r : ds.records) {
    out += r;
    out += '\n';
  }
  return out;
}

inline void write_jsonl(const RecordDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoFailure, path + ": cannot open for writing");
  const std::string bytes = encode_jsonl(ds);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) fail(ErrorKind::IoFailure, path + ": write failed");
}

}  // namespace mergeforge
