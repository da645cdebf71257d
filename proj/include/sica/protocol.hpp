#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sica/domgen.hpp"
#include "sica/errors.hpp"
#include "sica/format.hpp"
#include "sica/metrics.hpp"
#include "sica/nanovit.hpp"
#include "sica/svg.hpp"

namespace sica {

enum class ProtocolRegime { Sd, Lodo, Unified };

inline ProtocolRegime protocol_regime_from_name(const std::string& s) {
  if (s == "sd") return ProtocolRegime::Sd;
  if (s == "lodo") return ProtocolRegime::Lodo;
  if (s == "unified") return ProtocolRegime::Unified;
  throw std::invalid_argument("unknown protocol regime: " + s);
}

enum class MetricView { Acc, Auc, Ap, F1 };

inline MetricView metric_view_from_name(const std::string& s) {
  if (s == "acc") return MetricView::Acc;
  if (s == "auc") return MetricView::Auc;
  if (s == "ap") return MetricView::Ap;
  if (s == "f1") return MetricView::F1;
  throw std::invalid_argument("unknown metric: " + s);
}

inline const char* metric_view_name(MetricView m) {
  switch (m) {
    case MetricView::Acc: return "acc";
    case MetricView::Auc: return "auc";
    case MetricView::Ap: return "ap";
    default: return "f1";
  }
}

inline double metric_value(const MetricBundle& b, MetricView view) {
  switch (view) {
    case MetricView::Acc: return b.acc;
    case MetricView::Auc: return b.auc;
    case MetricView::Ap: return b.ap;
    default: return b.f1;
  }
}

// Training-regime rows x test-domain columns of metric bundles.
struct EvalMatrix {
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<std::vector<MetricBundle>> cells;

  std::vector<std::vector<double>> view(MetricView m) const {
    std::vector<std::vector<double>> out;
    for (const auto& row : cells) {
      std::vector<double> r;
      for (const auto& cell : row) r.push_back(metric_value(cell, m));
      out.push_back(std::move(r));
    }
    return out;
  }
};

// Trains a checkpoint on the given row subset; row_seed drives every random
// choice inside the row.
using RowTrainFn = std::function<Checkpoint(const SampleSet& row_train, std::uint64_t row_seed)>;

struct ProtocolRow {
  std::string label;
  ProtocolRegime regime = ProtocolRegime::Unified;
  std::size_t domain = 0;  // SD: train domain; LODO: held-out domain
};

inline std::vector<ProtocolRow> protocol_rows(const std::set<ProtocolRegime>& regimes,
                                              const std::vector<std::string>& domain_names) {
  std::vector<ProtocolRow> rows;
  if (regimes.count(ProtocolRegime::Sd))
    for (std::size_t k = 0; k < domain_names.size(); ++k)
      rows.push_back({domain_names[k], ProtocolRegime::Sd, k});
  if (regimes.count(ProtocolRegime::Lodo))
    for (std::size_t k = 0; k < domain_names.size(); ++k)
      rows.push_back({"wo:" + domain_names[k], ProtocolRegime::Lodo, k});
  if (regimes.count(ProtocolRegime::Unified))
    rows.push_back({"Unified", ProtocolRegime::Unified, 0});
  return rows;
}

// Runs the cross-domain protocol: each requested row trains one model and is
// evaluated on every domain's held-out test split. Rows are independent; with
// threads > 1 they run in parallel and are merged by index, so the result is
// identical to the sequential one.
inline EvalMatrix run_protocol(const SplitResult& split, const std::set<ProtocolRegime>& regimes,
                               const RowTrainFn& train_fn, std::uint64_t seed,
                               double threshold = 0.5, std::size_t threads = 1) {
  const std::vector<std::string>& names = split.train.domain_names;
  if (names.size() < 2) throw std::invalid_argument("run_protocol: need at least 2 domains");
  if (regimes.empty()) throw std::invalid_argument("run_protocol: no regimes requested");

  const std::vector<ProtocolRow> rows = protocol_rows(regimes, names);
  EvalMatrix matrix;
  matrix.col_labels = names;
  for (const auto& row : rows) matrix.row_labels.push_back(row.label);
  matrix.cells.assign(rows.size(), std::vector<MetricBundle>(names.size()));

  std::vector<SampleSet> test_by_domain;
  for (std::size_t j = 0; j < names.size(); ++j)
    test_by_domain.push_back(filter_domain(split.test, j, true));

  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto run_row = [&](std::size_t r) {
    try {
      const ProtocolRow& row = rows[r];
      SampleSet subset;
      switch (row.regime) {
        case ProtocolRegime::Sd: subset = filter_domain(split.train, row.domain, true); break;
        case ProtocolRegime::Lodo: subset = filter_domain(split.train, row.domain, false); break;
        case ProtocolRegime::Unified: subset = split.train; break;
      }
      const Checkpoint model = train_fn(subset, rng::derive(seed, "protocol.row", r));
      for (std::size_t j = 0; j < names.size(); ++j)
        matrix.cells[r][j] = evaluate_on(model, test_by_domain[j], threshold);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!first_error) first_error = std::current_exception();
    }
  };

  if (threads <= 1) {
    for (std::size_t r = 0; r < rows.size(); ++r) run_row(r);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (std::size_t t = 0; t < std::min(threads, rows.size()); ++t)
      pool.emplace_back([&]() {
        for (;;) {
          const std::size_t r = next.fetch_add(1);
          if (r >= rows.size()) return;
          run_row(r);
        }
      });
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return matrix;
}

// unified[j] - sd[r][j] per cell; the diagonal cells carry the paper-style
// single-domain vs unified comparison.
struct DiffHeatmap {
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<std::vector<double>> values;
};

inline DiffHeatmap diff_heatmap(const EvalMatrix& sd, const std::vector<double>& unified_row,
                                MetricView view) {
  if (unified_row.size() != sd.col_labels.size())
    throw std::invalid_argument("diff_heatmap: column count mismatch");
  DiffHeatmap out;
  out.row_labels = sd.row_labels;
  out.col_labels = sd.col_labels;
  const auto grid = sd.view(view);
  for (std::size_t r = 0; r < grid.size(); ++r) {
    std::vector<double> row;
    for (std::size_t j = 0; j < grid[r].size(); ++j) row.push_back(unified_row[j] - grid[r][j]);
    out.values.push_back(std::move(row));
  }
  return out;
}

// ---- serialization -----------------------------------------------------------

inline nlohmann::json eval_matrix_json(const EvalMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.cells.size(); ++r) {
    nlohmann::json cells = nlohmann::json::array();
    for (const MetricBundle& b : m.cells[r])
      cells.push_back(
          {{"acc", b.acc}, {"auc", b.auc}, {"ap", b.ap}, {"f1", b.f1}, {"n", b.n}});
    rows.push_back({{"train", m.row_labels[r]}, {"cells", cells}});
  }
  return {{"col_labels", m.col_labels}, {"rows", rows}};
}

inline EvalMatrix eval_matrix_from_json(const nlohmann::json& j) {
  EvalMatrix m;
  m.col_labels = j.at("col_labels").get<std::vector<std::string>>();
  for (const auto& row : j.at("rows")) {
    m.row_labels.push_back(row.at("train").get<std::string>());
    std::vector<MetricBundle> cells;
    for (const auto& c : row.at("cells")) {
      MetricBundle b;
      b.acc = c.at("acc").get<double>();
      b.auc = c.at("auc").get<double>();
      b.ap = c.at("ap").get<double>();
      b.f1 = c.at("f1").get<double>();
      b.n = c.at("n").get<std::size_t>();
      cells.push_back(b);
    }
    m.cells.push_back(std::move(cells));
  }
  return m;
}

inline void write_eval_matrix_csv(const EvalMatrix& m, MetricView view,
                                  const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::invalid_argument("write_eval_matrix_csv: cannot open " + path.string());
  f << "train";
  for (const auto& c : m.col_labels) f << ',' << c;
  f << "\n";
  const auto grid = m.view(view);
  for (std::size_t r = 0; r < grid.size(); ++r) {
    f << m.row_labels[r];
    for (double v : grid[r]) f << ',' << fmt::full(v);
    f << "\n";
  }
}

}  // namespace sica
