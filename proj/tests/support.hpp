#pragma once

#include <cstdint>
#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <iterator>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mergeforge/tensor.hpp"

namespace mftest {

namespace fs = std::filesystem;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("mergeforge-test-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

inline std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline mergeforge::Tensor vec(std::vector<float> values) {
  const auto n = values.size();
  return mergeforge::Tensor({n}, std::move(values));
}

inline mergeforge::TensorMap single(const std::string& name, std::vector<float> values) {
  mergeforge::TensorMap m;
  m.insert(name, vec(std::move(values)));
  return m;
}

/// Random shape with at most `max_elems` elements and rank 0..3.
inline mergeforge::Shape random_shape(std::mt19937_64& rng, std::size_t max_elems) {
  std::uniform_int_distribution<int> rank_dist(0, 3);
  const int rank = rank_dist(rng);
  mergeforge::Shape shape;
  std::size_t total = 1;
  for (int i = 0; i < rank; ++i) {
    const std::size_t cap = std::max<std::size_t>(1, max_elems / total);
    std::uniform_int_distribution<std::size_t> dim(0, std::min<std::size_t>(cap, 64));
    const std::size_t d = dim(rng);
    shape.push_back(d);
    total *= std::max<std::size_t>(d, 1);
    if (d == 0) break;
  }
  return shape;
}

/// Random map with up to `max_tensors` tensors of arbitrary F32 bit patterns
/// (NaNs and infinities included) and layer-style names.
inline mergeforge::TensorMap random_bits_map(std::mt19937_64& rng, std::size_t max_tensors, std::size_t max_elems) {
  std::uniform_int_distribution<std::size_t> count(0, max_tensors);
  std::uniform_int_distribution<std::uint32_t> bits;
  const std::size_t n = count(rng);
  mergeforge::TensorMap m;
  for (std::size_t t = 0; m.size() < n && t < 4 * max_tensors; ++t) {
    const std::string name = "model.layers." + std::to_string(rng() % 16) + ".w" + std::to_string(rng() % 1000);
    if (m.contains(name)) continue;
    const auto shape = random_shape(rng, max_elems);
    std::vector<float> data(mergeforge::element_count(shape));
    for (float& v : data) v = std::bit_cast<float>(bits(rng));
    m.insert(name, mergeforge::Tensor(shape, std::move(data)));
  }
  return m;
}

/// Map with the given layout filled from a uniform distribution.
inline mergeforge::TensorMap random_like(std::mt19937_64& rng, const mergeforge::TensorMap& layout, float lo, float hi) {
  std::uniform_real_distribution<float> dist(lo, hi);
  mergeforge::TensorMap m;
  for (const auto& [name, t] : layout) {
    std::vector<float> data(t.size());
    for (float& v : data) v = dist(rng);
    m.insert(name, mergeforge::Tensor(t.shape, std::move(data)));
  }
  return m;
}

/// A small transformer-like layout: `layers` blocks of two matrices plus
/// an embedding and a head.
inline mergeforge::TensorMap toy_layout(std::size_t layers, std::size_t width) {
  mergeforge::TensorMap m;
  auto zeros = [](mergeforge::Shape s) {
    return mergeforge::Tensor(s, std::vector<float>(mergeforge::element_count(s), 0.0f));
  };
  m.insert("model.embed_tokens.weight", zeros({8, width}));
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string p = "model.layers." + std::to_string(l) + ".";
    m.insert(p + "attn.q_proj.weight", zeros({width, width}));
    m.insert(p + "mlp.up_proj.weight", zeros({2 * width, width}));
  }
  m.insert("lm_head.weight", zeros({8, width}));
  return m;
}

/// Task-vector pair over `layout` whose per-layer elements have population
/// correlation `rho`: g = z1, s = rho * z1 + sqrt(1 - rho^2) * z2.
inline std::pair<mergeforge::TensorMap, mergeforge::TensorMap> planted_pair(std::mt19937_64& rng,
                                                                             const mergeforge::TensorMap& layout,
                                                                             double rho, double sigma = 0.01) {
  std::normal_distribution<double> z(0.0, 1.0);
  const double c = std::sqrt(1.0 - rho * rho);
  mergeforge::TensorMap g, s;
  for (const auto& [name, t] : layout) {
    std::vector<float> a(t.size()), b(t.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double z1 = z(rng), z2 = z(rng);
      a[i] = static_cast<float>(sigma * z1);
      b[i] = static_cast<float>(sigma * (rho * z1 + c * z2));
    }
    g.insert(name, mergeforge::Tensor(t.shape, std::move(a)));
    s.insert(name, mergeforge::Tensor(t.shape, std::move(b)));
  }
  return {std::move(g), std::move(s)};
}

}  // namespace mftest
