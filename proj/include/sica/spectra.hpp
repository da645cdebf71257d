#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "sica/adapt.hpp"
#include "sica/errors.hpp"
#include "sica/format.hpp"
#include "sica/matrix.hpp"
#include "sica/svd.hpp"

namespace sica {

// The three update schemes whose geometry we compare against the
// pretrained principal subspace.
struct FftDelta {
  Matrix w_fft;  // adapted dense weight; delta = w_fft - w0
};
struct EffortDelta {
  std::vector<double> sigma_hat;  // length d - k_effort
  std::size_t k_effort = 0;       // principal columns excluded from the update
};
struct SicaDelta {
  LoraAdapter adapter;
};
using DeltaSpec = std::variant<FftDelta, EffortDelta, SicaDelta>;

inline const char* scheme_name(const DeltaSpec& spec) {
  if (std::holds_alternative<FftDelta>(spec)) return "fft";
  if (std::holds_alternative<EffortDelta>(spec)) return "effort";
  return "sica";
}

inline Matrix build_delta(const Matrix& w0, const DeltaSpec& spec) {
  if (const auto* fft = std::get_if<FftDelta>(&spec)) {
    if (!fft->w_fft.same_shape(w0))
      throw std::invalid_argument("build_delta: fft weight shape mismatch");
    return sub(fft->w_fft, w0);
  }
  if (const auto* eff = std::get_if<EffortDelta>(&spec)) {
    const std::size_t d = std::min(w0.rows, w0.cols);
    if (eff->k_effort >= d)
      throw std::invalid_argument("build_delta: effort k must be below the numerical rank");
    if (eff->sigma_hat.size() != d - eff->k_effort)
      throw std::invalid_argument("build_delta: effort sigma length mismatch");
    const SvdFactors f = svd(w0);
    // U[:, k+1:] * diag(sigma_hat) * V[:, k+1:]^T
    Matrix delta(w0.rows, w0.cols);
    for (std::size_t t = eff->k_effort; t < d; ++t) {
      const double sv = eff->sigma_hat[t - eff->k_effort];
      if (sv == 0.0) continue;
      for (std::size_t i = 0; i < w0.rows; ++i) {
        const double ui = f.u(i, t) * sv;
        if (ui == 0.0) continue;
        double* row = delta.row_ptr(i);
        for (std::size_t j = 0; j < w0.cols; ++j) row[j] += ui * f.v(j, t);
      }
    }
    return delta;
  }
  const auto& sica = std::get<SicaDelta>(spec);
  check_adapter_dims(w0, sica.adapter, "build_delta");
  return lora_delta(sica.adapter);
}

inline void require_orthonormal_basis(const SubspaceBasis& basis, const char* who) {
  if (!orthonormal_check(basis.uk, 1e-8) || !orthonormal_check(basis.vk, 1e-8))
    throw std::invalid_argument(std::string(who) + ": basis columns are not orthonormal");
}

// Dense projectors P_L = Uk Uk^T (m x m) and P_R = Vk Vk^T (n x n).
// Meant for tests and small cases; the energy/cosine routines below use the
// factored form and never materialize these.
inline std::pair<Matrix, Matrix> projectors(const SubspaceBasis& basis) {
  require_orthonormal_basis(basis, "projectors");
  return {matmul_nt(basis.uk, basis.uk), matmul_nt(basis.vk, basis.vk)};
}

struct ProjectionSplit {
  Matrix pi_left;    // P_L * delta
  Matrix res_left;   // delta - pi_left
  Matrix pi_right;   // delta * P_R
  Matrix res_right;  // delta - pi_right
};

inline ProjectionSplit project_and_residual(const Matrix& delta, const SubspaceBasis& basis) {
  if (delta.rows != basis.uk.rows || delta.cols != basis.vk.rows)
    throw std::invalid_argument("project_and_residual: shape mismatch with basis");
  require_orthonormal_basis(basis, "project_and_residual");
  ProjectionSplit out;
  out.pi_left = matmul(basis.uk, matmul_tn(basis.uk, delta));
  out.res_left = sub(delta, out.pi_left);
  out.pi_right = matmul_nt(matmul(delta, basis.vk), basis.vk);
  out.res_right = sub(delta, out.pi_right);
  return out;
}

// Fraction of squared update energy outside the left/right top-k subspace.
inline std::pair<double, double> outside_energy(const Matrix& delta, const SubspaceBasis& basis) {
  if (delta.rows != basis.uk.rows || delta.cols != basis.vk.rows)
    throw std::invalid_argument("outside_energy: shape mismatch with basis");
  require_orthonormal_basis(basis, "outside_energy");
  const double total = frobenius_norm_sq(delta);
  if (total == 0.0) throw numeric_error("outside_energy: zero update has no defined ratio");
  const Matrix left_coef = matmul_tn(basis.uk, delta);   // k x n
  const Matrix right_coef = matmul(delta, basis.vk);     // m x k
  const double inside_l = frobenius_norm_sq(left_coef);  // ||P_L delta||_F^2
  const double inside_r = frobenius_norm_sq(right_coef);
  return {(total - inside_l) / total, (total - inside_r) / total};
}

// Cosine between vec(delta) and its projection. For an orthogonal projector
// this equals ||P delta||_F / ||delta||_F. A zero projection reports exactly
// 0 (the limit convention).
inline std::pair<double, double> subspace_cosine(const Matrix& delta, const SubspaceBasis& basis) {
  if (delta.rows != basis.uk.rows || delta.cols != basis.vk.rows)
    throw std::invalid_argument("subspace_cosine: shape mismatch with basis");
  require_orthonormal_basis(basis, "subspace_cosine");
  const double total = frobenius_norm_sq(delta);
  if (total == 0.0) throw numeric_error("subspace_cosine: zero update has no defined cosine");
  const double inside_l = frobenius_norm_sq(matmul_tn(basis.uk, delta));
  const double inside_r = frobenius_norm_sq(matmul(delta, basis.vk));
  return {std::sqrt(inside_l / total), std::sqrt(inside_r / total)};
}

struct SpectralRecord {
  std::string matrix_name;
  std::size_t k = 0;
  double r_left = 0.0;
  double r_right = 0.0;
  double sim_left = 0.0;
  double sim_right = 0.0;
};

struct SpectralAverage {
  std::size_t k = 0;
  double r_left = 0.0;
  double r_right = 0.0;
  double sim_left = 0.0;
  double sim_right = 0.0;
};

struct SpectralReport {
  std::vector<SpectralRecord> records;    // ordered by (matrix_name, k)
  std::vector<std::size_t> k_grid;        // sorted
  std::vector<SpectralAverage> averages;  // per-k means over the matrix set
};

// Default k sweep: {1,2,4,...,64, min(m,n)/2} clipped to the valid range.
inline std::vector<std::size_t> default_k_grid(std::size_t m, std::size_t n) {
  const std::size_t d = std::min(m, n);
  std::vector<std::size_t> grid;
  for (std::size_t k : {std::size_t{1}, std::size_t{2}, std::size_t{4}, std::size_t{8},
                        std::size_t{16}, std::size_t{32}, std::size_t{64}, d / 2})
    if (k >= 1 && k <= d) grid.push_back(k);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

// One record per (matrix, k), plus per-k means over the whole matrix set.
inline SpectralReport analyze_checkpoint(const std::map<std::string, Matrix>& w0_set,
                                         const std::map<std::string, DeltaSpec>& deltas,
                                         std::vector<std::size_t> k_grid) {
  if (deltas.empty()) throw std::invalid_argument("analyze_checkpoint: empty matrix set");
  std::sort(k_grid.begin(), k_grid.end());
  k_grid.erase(std::unique(k_grid.begin(), k_grid.end()), k_grid.end());
  if (k_grid.empty()) throw std::invalid_argument("analyze_checkpoint: empty k grid");

  SpectralReport report;
  report.k_grid = k_grid;
  for (const auto& [name, spec] : deltas) {
    auto it = w0_set.find(name);
    if (it == w0_set.end())
      throw std::invalid_argument("analyze_checkpoint: no base weight named " + name);
    const Matrix& w0 = it->second;
    const std::size_t d = std::min(w0.rows, w0.cols);
    for (std::size_t k : k_grid)
      if (k < 1 || k > d)
        throw std::invalid_argument("analyze_checkpoint: k=" + std::to_string(k) +
                                    " invalid for matrix " + name);
    const Matrix delta = build_delta(w0, spec);
    const SvdFactors f = svd(w0);
    for (std::size_t k : k_grid) {
      const SubspaceBasis basis = top_k(f, k);
      const auto [rl, rr] = outside_energy(delta, basis);
      const auto [sl, sr] = subspace_cosine(delta, basis);
      report.records.push_back({name, k, rl, rr, sl, sr});
    }
  }
  for (std::size_t k : k_grid) {
    SpectralAverage avg;
    avg.k = k;
    std::size_t count = 0;
    for (const auto& rec : report.records) {
      if (rec.k != k) continue;
      avg.r_left += rec.r_left;
      avg.r_right += rec.r_right;
      avg.sim_left += rec.sim_left;
      avg.sim_right += rec.sim_right;
      ++count;
    }
    avg.r_left /= count;
    avg.r_right /= count;
    avg.sim_left /= count;
    avg.sim_right /= count;
    report.averages.push_back(avg);
  }
  return report;
}

inline void write_spectral_csv(const SpectralReport& report, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::invalid_argument("write_spectral_csv: cannot open " + path.string());
  f << "matrix,k,r_left,r_right,sim_left,sim_right\n";
  for (const auto& r : report.records)
    f << r.matrix_name << ',' << r.k << ',' << fmt::full(r.r_left) << ',' << fmt::full(r.r_right)
      << ',' << fmt::full(r.sim_left) << ',' << fmt::full(r.sim_right) << '\n';
}

inline void write_spectral_avg_csv(const SpectralReport& report,
                                   const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::invalid_argument("write_spectral_avg_csv: cannot open " + path.string());
  f << "k,r_left,r_right,sim_left,sim_right\n";
  for (const auto& a : report.averages)
    f << a.k << ',' << fmt::full(a.r_left) << ',' << fmt::full(a.r_right) << ','
      << fmt::full(a.sim_left) << ',' << fmt::full(a.sim_right) << '\n';
}

inline std::vector<SpectralRecord> read_spectral_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("read_spectral_csv: cannot open " + path.string());
  std::string line;
  std::getline(f, line);  // header
  std::vector<SpectralRecord> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    SpectralRecord r;
    std::getline(ss, r.matrix_name, ',');
    std::getline(ss, field, ',');
    r.k = std::stoull(field);
    std::getline(ss, field, ',');
    r.r_left = std::strtod(field.c_str(), nullptr);
    std::getline(ss, field, ',');
    r.r_right = std::strtod(field.c_str(), nullptr);
    std::getline(ss, field, ',');
    r.sim_left = std::strtod(field.c_str(), nullptr);
    std::getline(ss, field, ',');
    r.sim_right = std::strtod(field.c_str(), nullptr);
    out.push_back(std::move(r));
  }
  return out;
}

inline nlohmann::json spectral_report_json(const SpectralReport& report) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : report.records)
    records.push_back({{"matrix", r.matrix_name},
                       {"k", r.k},
                       {"r_left", r.r_left},
                       {"r_right", r.r_right},
                       {"sim_left", r.sim_left},
                       {"sim_right", r.sim_right}});
  nlohmann::json averages = nlohmann::json::array();
  for (const auto& a : report.averages)
    averages.push_back({{"k", a.k},
                        {"r_left", a.r_left},
                        {"r_right", a.r_right},
                        {"sim_left", a.sim_left},
                        {"sim_right", a.sim_right}});
  return {{"k_grid", report.k_grid}, {"records", records}, {"averages", averages}};
}

}  // namespace sica
