#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "sica/matio.hpp"
#include "sica/matrix.hpp"
#include "sica/rng.hpp"

namespace sica {

// Low-rank adapter for an m x n weight: update = (alpha/rank) * b * a
// with a (rank x n) and b (m x rank).
struct LoraAdapter {
  Matrix a;
  Matrix b;
  double alpha = 16.0;
  std::size_t rank = 8;

  std::size_t out_dim() const { return b.rows; }
  std::size_t in_dim() const { return a.cols; }
};

// A is i.i.d. uniform in [-1/sqrt(n), 1/sqrt(n)], B is zero, so a fresh
// adapter is an exact no-op on the forward pass.
inline LoraAdapter lora_init(std::size_t m, std::size_t n, std::size_t r, double alpha,
                             std::uint64_t seed) {
  if (r < 1 || r > std::min(m, n))
    throw std::invalid_argument("lora_init: rank must satisfy 1 <= r <= min(m, n)");
  if (!(alpha > 0.0)) throw std::invalid_argument("lora_init: alpha must be positive");
  LoraAdapter ad;
  ad.alpha = alpha;
  ad.rank = r;
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(n));
  ad.a = Matrix::random_uniform(r, n, -bound, bound, rng);
  ad.b = Matrix(m, r);
  return ad;
}

inline void check_adapter_dims(const Matrix& w0, const LoraAdapter& ad, const char* who) {
  if (ad.b.rows != w0.rows || ad.a.cols != w0.cols || ad.a.rows != ad.rank ||
      ad.b.cols != ad.rank)
    throw std::invalid_argument(std::string(who) + ": adapter dimensions do not match weight");
}

// (alpha/r) * B * A, the dense update the adapter represents.
inline Matrix lora_delta(const LoraAdapter& ad) {
  return scale(matmul(ad.b, ad.a), ad.alpha / static_cast<double>(ad.rank));
}

// w0*h + (alpha/r)*B*(A*h), factored; BA is never materialized here.
inline Matrix adapted_forward(const Matrix& w0, const LoraAdapter& ad, const Matrix& h_in) {
  check_adapter_dims(w0, ad, "adapted_forward");
  if (h_in.rows != w0.cols) throw std::invalid_argument("adapted_forward: input dim mismatch");
  Matrix out = matmul(w0, h_in);
  const Matrix mid = matmul(ad.a, h_in);  // r x batch
  const Matrix up = matmul(ad.b, mid);    // m x batch
  const double s = ad.alpha / static_cast<double>(ad.rank);
  for (std::size_t i = 0; i < out.entries.size(); ++i) out.entries[i] += s * up.entries[i];
  return out;
}

inline Matrix merge(const Matrix& w0, const LoraAdapter& ad) {
  check_adapter_dims(w0, ad, "merge");
  return add(w0, lora_delta(ad));
}

// Adapters serialize as <name>.lora_a.matb + <name>.lora_b.matb plus a JSON
// sidecar {name, alpha, rank}.
inline void save_adapter(const std::filesystem::path& dir, const std::string& name,
                         const LoraAdapter& ad) {
  write_matb(dir / (name + ".lora_a.matb"), ad.a);
  write_matb(dir / (name + ".lora_b.matb"), ad.b);
  nlohmann::json j{{"name", name}, {"alpha", ad.alpha}, {"rank", ad.rank}};
  std::ofstream f(dir / (name + ".lora.json"), std::ios::trunc);
  if (!f) throw std::invalid_argument("save_adapter: cannot open sidecar for " + name);
  f << j.dump(2) << "\n";
}

inline LoraAdapter load_adapter(const std::filesystem::path& dir, const std::string& name) {
  std::ifstream f(dir / (name + ".lora.json"));
  if (!f) throw std::invalid_argument("load_adapter: missing sidecar for " + name);
  nlohmann::json j = nlohmann::json::parse(f);
  LoraAdapter ad;
  ad.alpha = j.at("alpha").get<double>();
  ad.rank = j.at("rank").get<std::size_t>();
  ad.a = read_matb(dir / (name + ".lora_a.matb"));
  ad.b = read_matb(dir / (name + ".lora_b.matb"));
  if (ad.a.rows != ad.rank || ad.b.cols != ad.rank)
    throw std::invalid_argument("load_adapter: rank inconsistent with factors for " + name);
  return ad;
}

}  // namespace sica
