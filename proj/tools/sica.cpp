// sica: synthetic heterogeneous-domain forensic benchmark, constrained
// adaptation training, SVD spectral analysis, and cross-domain evaluation.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sica/domgen.hpp"
#include "sica/format.hpp"
#include "sica/matio.hpp"
#include "sica/metrics.hpp"
#include "sica/nanovit.hpp"
#include "sica/protocol.hpp"
#include "sica/spectra.hpp"
#include "sica/svg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

// Configuration precedence is flags > --config JSON > built-in defaults.
// The config file is merged before parsing: every key the user did not pass
// on the command line is appended as a synthetic flag. A run_manifest.json
// works directly as a config file via its resolved_config block.
std::vector<std::string> merge_config_into_args(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw std::invalid_argument("--config needs a file path");
      config_path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    } else {
      out.push_back(args[i]);
    }
  }
  if (config_path.empty()) return out;

  std::ifstream f(config_path);
  if (!f) throw std::invalid_argument("cannot open config file " + config_path);
  json j = json::parse(f, nullptr, true, true);
  if (j.contains("resolved_config")) j = j.at("resolved_config");
  if (!j.is_object()) throw std::invalid_argument("config file must hold a JSON object");

  std::set<std::string> given;
  for (const std::string& a : out)
    if (a.rfind("--", 0) == 0) given.insert(a.substr(0, a.find('=')));

  for (const auto& [key, value] : j.items()) {
    const std::string flag = "--" + key;
    if (given.count(flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) out.push_back(flag);
    } else if (value.is_array()) {
      for (const auto& v : value) {
        out.push_back(flag);
        out.push_back(v.is_string() ? v.get<std::string>() : v.dump());
      }
    } else if (value.is_string()) {
      if (!value.get<std::string>().empty()) {
        out.push_back(flag);
        out.push_back(value.get<std::string>());
      }
    } else {
      out.push_back(flag);
      out.push_back(value.dump());
    }
  }
  return out;
}

struct RunContext {
  std::string subcommand;
  std::string command_line;
  json resolved_config = json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();
};

void ensure_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw std::invalid_argument("output directory " + dir.string() +
                                " exists and is not empty; pass --force to reuse it");
  fs::create_directories(dir);
}

// Written last, atomically; exactly one per output directory.
void write_run_manifest(const RunContext& ctx, const fs::path& out_dir) {
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.started).count();
  const json manifest = {{"tool", "sica"},
                         {"version", kVersion},
                         {"command", ctx.subcommand},
                         {"command_line", ctx.command_line},
                         {"resolved_config", ctx.resolved_config},
                         {"inputs", ctx.inputs},
                         {"outputs", ctx.outputs},
                         {"duration_seconds", seconds}};
  const fs::path tmp = out_dir / ".run_manifest.json.tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    f << manifest.dump(2) << "\n";
  }
  fs::rename(tmp, out_dir / "run_manifest.json");
}

std::vector<std::size_t> parse_size_list(const std::string& csv, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream ss(csv);
  std::string field;
  while (std::getline(ss, field, ',')) {
    if (field.empty()) continue;
    try {
      out.push_back(std::stoull(field));
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string(what) + ": cannot parse '" + field + "'");
    }
  }
  if (out.empty()) throw std::invalid_argument(std::string(what) + ": empty list");
  return out;
}

std::string join_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

// ---- shared option blocks -----------------------------------------------------

struct ModelOpts {
  std::size_t seq_len = 8;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t head_hidden = 32;

  void attach(CLI::App* app) {
    app->add_option("--seq-len", seq_len, "tokens per sample");
    app->add_option("--d-model", d_model, "hidden width");
    app->add_option("--n-heads", n_heads, "attention heads");
    app->add_option("--n-layers", n_layers, "encoder layers");
    app->add_option("--head-hidden", head_hidden, "classifier MLP width");
  }

  sica::ModelConfig to_config(std::size_t d_feature, std::uint64_t seed) const {
    sica::ModelConfig cfg;
    cfg.d_feature = d_feature;
    cfg.seq_len = seq_len;
    cfg.d_model = d_model;
    cfg.n_heads = n_heads;
    cfg.n_layers = n_layers;
    cfg.head_hidden = head_hidden;
    cfg.seed = seed;
    cfg.validate();
    return cfg;
  }

  json to_json() const {
    return {{"seq-len", seq_len},
            {"d-model", d_model},
            {"n-heads", n_heads},
            {"n-layers", n_layers},
            {"head-hidden", head_hidden}};
  }
};

// Base checkpoint: loaded from --init when given, otherwise pretrained on
// the train-split reals and saved under <out>/base.
sica::Checkpoint resolve_base_checkpoint(const std::string& init_dir, const sica::Dataset& ds,
                                         const ModelOpts& model, std::size_t pretrain_epochs,
                                         std::uint64_t seed, const fs::path& out_dir,
                                         RunContext& ctx) {
  if (!init_dir.empty()) {
    ctx.inputs.push_back(init_dir);
    sica::Checkpoint ckpt = sica::load_checkpoint(init_dir);
    if (ckpt.config.d_feature != ds.all.d_feature)
      throw std::invalid_argument("init checkpoint feature width does not match dataset");
    return ckpt;
  }
  sica::SampleSet reals;
  reals.d_feature = ds.all.d_feature;
  reals.domain_names = ds.all.domain_names;
  for (const sica::Sample& s : ds.split.train.samples)
    if (s.label == 0) reals.samples.push_back(s);

  const sica::ModelConfig cfg = model.to_config(ds.all.d_feature, sica::rng::derive(seed, "model"));
  sica::PretrainSpec pspec;
  pspec.epochs = pretrain_epochs;
  pspec.seed = sica::rng::derive(seed, "pretrain");
  const sica::PretrainResult pre = sica::pretrain_backbone(cfg, reals, pspec);
  std::fprintf(stderr, "pretrain: val domain accuracy %.4f over %zu domains\n",
               pre.val_domain_accuracy, ds.all.domain_names.size());
  sica::save_checkpoint(pre.checkpoint, out_dir / "base");
  ctx.outputs.push_back((out_dir / "base").string());
  return pre.checkpoint;
}

void write_train_log_csv(const std::vector<sica::TrainLogRow>& rows, const fs::path& path) {
  std::ofstream f(path, std::ios::trunc);
  f << "epoch,step,lr,loss,acc\n";
  for (const auto& r : rows)
    f << r.epoch << ',' << r.step << ',' << sica::fmt::full(r.lr) << ','
      << sica::fmt::full(r.loss) << ',' << sica::fmt::full(r.acc) << "\n";
}

// ---- gen-data -------------------------------------------------------------------

struct GenDataOpts {
  sica::DatasetConfig cfg;
  std::string out;
  bool force = false;
};

int run_gen_data(const GenDataOpts& opt, RunContext& ctx) {
  ensure_output_dir(opt.out, opt.force);
  const sica::Dataset ds = sica::generate_dataset(opt.cfg);
  sica::save_dataset(ds, opt.out);
  ctx.outputs = {(fs::path(opt.out) / "data.csv").string(),
                 (fs::path(opt.out) / "manifest.json").string()};
  std::fprintf(stderr, "gen-data: %zu samples (%zu train / %zu val / %zu test) in %s\n",
               ds.all.samples.size(), ds.split.manifest.counts.train,
               ds.split.manifest.counts.val, ds.split.manifest.counts.test, opt.out.c_str());
  write_run_manifest(ctx, opt.out);
  return 0;
}

// ---- train ----------------------------------------------------------------------

struct TrainOpts {
  std::string data;
  std::string regime = "sica";
  std::size_t rank = 8;
  double alpha = 16.0;
  sica::TrainSpec spec;
  ModelOpts model;
  std::string init;
  std::size_t pretrain_epochs = 10;
  bool freeze_ln = false;
  std::uint64_t seed = 7;
  std::string out;
  bool force = false;
};

int run_train(const TrainOpts& opt, RunContext& ctx) {
  ensure_output_dir(opt.out, opt.force);
  ctx.inputs.push_back(opt.data);
  const sica::Dataset ds = sica::load_dataset(opt.data);
  sica::Checkpoint ckpt = resolve_base_checkpoint(opt.init, ds, opt.model, opt.pretrain_epochs,
                                                  opt.seed, opt.out, ctx);
  ckpt.regime = sica::regime_from_name(opt.regime);
  if (ckpt.regime == sica::Regime::Sica)
    sica::init_adapters(ckpt, opt.rank, opt.alpha, sica::rng::derive(opt.seed, "adapters"));
  else
    ckpt.adapters.clear();

  sica::TrainSpec spec = opt.spec;
  spec.seed = sica::rng::derive(opt.seed, "train");
  spec.train_layer_norms = !opt.freeze_ln;
  const sica::TrainResult result = sica::train(ckpt, spec, ds.split.train);
  for (const auto& e : result.epochs)
    std::fprintf(stderr, "epoch %zu: loss %.6f acc %.4f\n", e.epoch, e.loss, e.acc);

  sica::save_checkpoint(result.checkpoint, opt.out);
  write_train_log_csv(result.log, fs::path(opt.out) / "train_log.csv");
  json metrics = json::object();
  if (!ds.split.val.samples.empty()) {
    const sica::MetricBundle val = sica::evaluate_on(result.checkpoint, ds.split.val);
    metrics["val"] = {{"acc", val.acc}, {"auc", val.auc}, {"ap", val.ap},
                      {"f1", val.f1}, {"n", val.n}};
    std::fprintf(stderr, "val: acc %.4f auc %.4f\n", val.acc, val.auc);
  }
  {
    std::ofstream f(fs::path(opt.out) / "metrics.json", std::ios::trunc);
    f << metrics.dump(2) << "\n";
  }
  ctx.outputs.push_back((fs::path(opt.out) / "manifest.json").string());
  ctx.outputs.push_back((fs::path(opt.out) / "train_log.csv").string());
  write_run_manifest(ctx, opt.out);
  return 0;
}

// ---- analyze --------------------------------------------------------------------

struct AnalyzeOpts {
  std::string w0;
  std::string delta;
  std::string scheme = "sica";
  std::string k_grid;
  std::size_t k_effort = 8;
  std::string matrices;  // substring filter
  std::uint64_t seed = 7;
  std::string out;
  bool force = false;
};

int run_analyze(const AnalyzeOpts& opt, RunContext& ctx) {
  ensure_output_dir(opt.out, opt.force);
  ctx.inputs.push_back(opt.w0);
  const sica::Checkpoint base = sica::load_checkpoint(opt.w0);

  std::vector<std::string> names;
  for (const std::string& n : sica::attention_matrix_names(base.config))
    if (opt.matrices.empty() || n.find(opt.matrices) != std::string::npos) names.push_back(n);
  if (names.empty()) throw std::invalid_argument("analyze: matrix filter matched nothing");

  std::map<std::string, sica::Matrix> w0_set;
  for (const std::string& n : names) w0_set.emplace(n, base.at(n));

  std::map<std::string, sica::DeltaSpec> deltas;
  if (opt.scheme == "effort") {
    for (const std::string& n : names) {
      const sica::Matrix& w0 = base.at(n);
      const std::size_t d = std::min(w0.rows, w0.cols);
      if (opt.k_effort >= d)
        throw std::invalid_argument("analyze: --k-effort must be below the numerical rank " +
                                    std::to_string(d));
      // Surrogate spectrum: uniform in [0.5, 1.5] times the mean excluded
      // singular value, seeded per matrix.
      const sica::SvdFactors f = sica::svd(w0);
      double mean_excluded = 0.0;
      for (std::size_t i = opt.k_effort; i < d; ++i) mean_excluded += f.s[i];
      mean_excluded /= static_cast<double>(d - opt.k_effort);
      if (mean_excluded <= 0.0) mean_excluded = 1.0;  // fully rank-deficient tail
      sica::Rng rng(sica::rng::derive(opt.seed, "effort.sigma", std::hash<std::string>{}(n)));
      std::vector<double> sigma_hat(d - opt.k_effort);
      for (double& s : sigma_hat) s = rng.uniform(0.5, 1.5) * mean_excluded;
      deltas.emplace(n, sica::EffortDelta{std::move(sigma_hat), opt.k_effort});
    }
  } else {
    if (opt.delta.empty())
      throw std::invalid_argument("analyze: --delta is required for scheme " + opt.scheme);
    ctx.inputs.push_back(opt.delta);
    const sica::Checkpoint adapted = sica::load_checkpoint(opt.delta);
    if (opt.scheme == "fft") {
      for (const std::string& n : names) {
        const sica::Matrix& w = adapted.at(n);
        if (!w.same_shape(base.at(n)))
          throw std::invalid_argument("analyze: shape mismatch for " + n);
        deltas.emplace(n, sica::FftDelta{w});
      }
    } else if (opt.scheme == "sica") {
      for (const std::string& n : names) {
        auto it = adapted.adapters.find(n);
        if (it == adapted.adapters.end())
          throw std::invalid_argument("analyze: checkpoint has no adapter for " + n);
        deltas.emplace(n, sica::SicaDelta{it->second});
      }
    } else {
      throw std::invalid_argument("analyze: unknown scheme " + opt.scheme);
    }
  }

  std::vector<std::size_t> grid;
  if (opt.k_grid.empty()) {
    std::size_t dmin = SIZE_MAX;
    for (const auto& [n, w] : w0_set) dmin = std::min(dmin, std::min(w.rows, w.cols));
    grid = sica::default_k_grid(dmin, dmin);
  } else {
    grid = parse_size_list(opt.k_grid, "--k-grid");
  }

  const sica::SpectralReport report = sica::analyze_checkpoint(w0_set, deltas, grid);
  sica::write_spectral_csv(report, fs::path(opt.out) / "spectral_report.csv");
  sica::write_spectral_avg_csv(report, fs::path(opt.out) / "spectral_avg.csv");
  {
    std::ofstream f(fs::path(opt.out) / "spectral_report.json", std::ios::trunc);
    json j = sica::spectral_report_json(report);
    j["scheme"] = opt.scheme;
    f << j.dump(2) << "\n";
  }
  for (const char* name : {"spectral_report.csv", "spectral_avg.csv", "spectral_report.json"})
    ctx.outputs.push_back((fs::path(opt.out) / name).string());
  for (const auto& a : report.averages)
    std::fprintf(stderr, "k=%zu: r_left %.4f r_right %.4f sim_left %.4f sim_right %.4f\n", a.k,
                 a.r_left, a.r_right, a.sim_left, a.sim_right);
  write_run_manifest(ctx, opt.out);
  return 0;
}

// ---- eval -----------------------------------------------------------------------

struct EvalOpts {
  std::string data;
  std::string regime_set = "sd,lodo,unified";
  std::string train_regime = "sica";
  std::size_t rank = 8;
  double alpha = 16.0;
  std::size_t epochs = 12;
  std::size_t batch = 64;
  double lr_start = 1e-3;
  double lr_end = 1e-5;
  double weight_decay = 0.01;
  std::string metric = "auc";
  double threshold = 0.5;
  std::string init;
  std::size_t pretrain_epochs = 10;
  std::size_t threads = 1;
  std::uint64_t seed = 7;
  std::string out;
  bool force = false;
};

sica::RowTrainFn make_row_train_fn(const sica::Checkpoint& base, const EvalOpts& opt) {
  const sica::Regime regime = sica::regime_from_name(opt.train_regime);
  return [base, regime, opt](const sica::SampleSet& row_train, std::uint64_t row_seed) {
    sica::Checkpoint ckpt = base;
    ckpt.regime = regime;
    if (regime == sica::Regime::Sica)
      sica::init_adapters(ckpt, opt.rank, opt.alpha, sica::rng::derive(row_seed, "adapters"));
    else
      ckpt.adapters.clear();
    sica::TrainSpec spec;
    spec.epochs = opt.epochs;
    spec.batch_size = opt.batch;
    spec.lr_start = opt.lr_start;
    spec.lr_end = opt.lr_end;
    spec.weight_decay = opt.weight_decay;
    spec.seed = sica::rng::derive(row_seed, "train");
    return sica::train(ckpt, spec, row_train).checkpoint;
  };
}

int run_eval(const EvalOpts& opt, RunContext& ctx) {
  ensure_output_dir(opt.out, opt.force);
  ctx.inputs.push_back(opt.data);
  const sica::Dataset ds = sica::load_dataset(opt.data);
  const sica::Checkpoint base = resolve_base_checkpoint(opt.init, ds, ModelOpts{},
                                                        opt.pretrain_epochs, opt.seed, opt.out,
                                                        ctx);

  std::set<sica::ProtocolRegime> regimes;
  std::stringstream ss(opt.regime_set);
  std::string field;
  while (std::getline(ss, field, ','))
    if (!field.empty()) regimes.insert(sica::protocol_regime_from_name(field));

  const sica::MetricView view = sica::metric_view_from_name(opt.metric);
  const sica::EvalMatrix matrix =
      run_protocol(ds.split, regimes, make_row_train_fn(base, opt),
                   sica::rng::derive(opt.seed, "protocol"), opt.threshold, opt.threads);

  const fs::path out_dir(opt.out);
  write_eval_matrix_csv(matrix, view, out_dir / ("matrix_" + opt.metric + ".csv"));
  {
    std::ofstream f(out_dir / "matrix.json", std::ios::trunc);
    json j = sica::eval_matrix_json(matrix);
    j["metric"] = opt.metric;
    j["train"] = opt.train_regime;
    f << j.dump(2) << "\n";
  }
  ctx.outputs.push_back((out_dir / ("matrix_" + opt.metric + ".csv")).string());
  ctx.outputs.push_back((out_dir / "matrix.json").string());

  // Difference heatmap when both SD rows and the unified row are present.
  if (regimes.count(sica::ProtocolRegime::Sd) && regimes.count(sica::ProtocolRegime::Unified)) {
    sica::EvalMatrix sd;
    sd.col_labels = matrix.col_labels;
    std::vector<double> unified_row;
    for (std::size_t r = 0; r < matrix.row_labels.size(); ++r) {
      const std::string& label = matrix.row_labels[r];
      if (label == "Unified") {
        for (const auto& cell : matrix.cells[r])
          unified_row.push_back(metric_value(cell, view));
      } else if (label.rfind("wo:", 0) != 0) {
        sd.row_labels.push_back(label);
        sd.cells.push_back(matrix.cells[r]);
      }
    }
    const sica::DiffHeatmap diff = sica::diff_heatmap(sd, unified_row, view);
    const std::string svg =
        sica::render_heatmap_svg(diff.values, diff.row_labels, diff.col_labels,
                                 "unified - single-domain (" + opt.metric + ")");
    sica::write_text_file(out_dir / "diff_heatmap.svg", svg);
    ctx.outputs.push_back((out_dir / "diff_heatmap.svg").string());
  }

  const auto grid = matrix.view(view);
  for (std::size_t r = 0; r < grid.size(); ++r) {
    std::fprintf(stderr, "%-14s", matrix.row_labels[r].c_str());
    for (double v : grid[r]) std::fprintf(stderr, " %.4f", v);
    std::fprintf(stderr, "\n");
  }
  write_run_manifest(ctx, opt.out);
  return 0;
}

// ---- ablate-rank ------------------------------------------------------------------

struct AblateOpts {
  std::string data;
  std::string ranks = "1,2,4,8,16,32,64";
  double alpha = 16.0;
  std::size_t epochs = 12;
  std::size_t batch = 64;
  double lr_start = 1e-3;
  double lr_end = 1e-5;
  std::string metric = "acc";
  double threshold = 0.5;
  std::string init;
  std::size_t pretrain_epochs = 10;
  std::size_t threads = 1;
  std::uint64_t seed = 7;
  std::string out;
  bool force = false;
};

int run_ablate(const AblateOpts& opt, RunContext& ctx) {
  ensure_output_dir(opt.out, opt.force);
  ctx.inputs.push_back(opt.data);
  const sica::Dataset ds = sica::load_dataset(opt.data);
  const sica::Checkpoint base = resolve_base_checkpoint(opt.init, ds, ModelOpts{},
                                                        opt.pretrain_epochs, opt.seed, opt.out,
                                                        ctx);
  const std::vector<std::size_t> ranks = parse_size_list(opt.ranks, "--ranks");
  const sica::MetricView view = sica::metric_view_from_name(opt.metric);

  // Ranks above an attention matrix's smaller dimension are clamped to it;
  // the CSV keys rows by the requested rank and records the effective one.
  std::size_t max_rank = SIZE_MAX;
  for (const std::string& n : sica::attention_matrix_names(base.config)) {
    const sica::Matrix& w = base.at(n);
    max_rank = std::min(max_rank, std::min(w.rows, w.cols));
  }

  std::vector<double> overall(ranks.size(), 0.0);
  std::vector<std::size_t> effective(ranks.size(), 0);
  auto run_rank = [&](std::size_t i) {
    const std::size_t requested = ranks[i];
    const std::size_t rank_eff = std::min(requested, max_rank);
    effective[i] = rank_eff;
    sica::Checkpoint ckpt = base;
    ckpt.regime = sica::Regime::Sica;
    sica::init_adapters(ckpt, rank_eff, opt.alpha,
                        sica::rng::derive(opt.seed, "ablate.adapters", requested));
    sica::TrainSpec spec;
    spec.epochs = opt.epochs;
    spec.batch_size = opt.batch;
    spec.lr_start = opt.lr_start;
    spec.lr_end = opt.lr_end;
    spec.seed = sica::rng::derive(opt.seed, "ablate.train", requested);
    const sica::Checkpoint model = sica::train(ckpt, spec, ds.split.train).checkpoint;
    double acc = 0.0;
    for (std::size_t d = 0; d < ds.all.domain_names.size(); ++d) {
      const sica::MetricBundle mb =
          sica::evaluate_on(model, sica::filter_domain(ds.split.test, d, true), opt.threshold);
      acc += metric_value(mb, view);
    }
    overall[i] = acc / static_cast<double>(ds.all.domain_names.size());
  };
  if (opt.threads <= 1) {
    for (std::size_t i = 0; i < ranks.size(); ++i) run_rank(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (std::size_t t = 0; t < std::min(opt.threads, ranks.size()); ++t)
      pool.emplace_back([&]() {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= ranks.size()) return;
          run_rank(i);
        }
      });
    for (auto& t : pool) t.join();
  }

  const fs::path csv_path = fs::path(opt.out) / "rank_sweep.csv";
  {
    std::ofstream f(csv_path, std::ios::trunc);
    f << "rank,effective_rank,overall_" << opt.metric << "\n";
    for (std::size_t i = 0; i < ranks.size(); ++i)
      f << ranks[i] << ',' << effective[i] << ',' << sica::fmt::full(overall[i]) << "\n";
  }
  std::vector<double> xs(ranks.begin(), ranks.end());
  sica::write_text_file(
      fs::path(opt.out) / "rank_sweep.svg",
      sica::render_curve_svg(xs, {overall}, {"overall " + opt.metric}, "rank sweep"));
  for (std::size_t i = 0; i < ranks.size(); ++i)
    std::fprintf(stderr, "rank %zu (eff %zu): overall %s %.4f\n", ranks[i], effective[i],
                 opt.metric.c_str(), overall[i]);
  ctx.outputs.push_back(csv_path.string());
  ctx.outputs.push_back((fs::path(opt.out) / "rank_sweep.svg").string());
  write_run_manifest(ctx, opt.out);
  return 0;
}

// ---- report ----------------------------------------------------------------------

struct ReportOpts {
  std::vector<std::string> in_dirs;
  std::string ckpt;
  std::string data;
  std::string out;
  bool force = false;
};

int run_report(const ReportOpts& opt, RunContext& ctx) {
  ensure_output_dir(opt.out, opt.force);
  const fs::path out_dir(opt.out);
  std::string md = "# Run report\n";

  for (const std::string& in : opt.in_dirs) {
    ctx.inputs.push_back(in);
    const fs::path dir(in);
    md += "\n## " + dir.filename().string() + "\n";

    if (fs::exists(dir / "matrix.json")) {
      std::ifstream f(dir / "matrix.json");
      const json j = json::parse(f);
      const sica::EvalMatrix m = sica::eval_matrix_from_json(j);
      const std::string metric = j.value("metric", "auc");
      const sica::MetricView view = sica::metric_view_from_name(metric);
      auto render = [&](double v) {
        return view == sica::MetricView::Acc ? sica::format_percent(v)
                                             : sica::format_fraction4(v);
      };
      md += "\nCross-domain " + metric + " (rows train, columns test):\n\n| train |";
      for (const auto& c : m.col_labels) md += " " + c + " |";
      md += "\n|---|";
      for (std::size_t c = 0; c < m.col_labels.size(); ++c) md += "---|";
      md += "\n";
      const auto grid = m.view(view);
      for (std::size_t r = 0; r < grid.size(); ++r) {
        md += "| " + m.row_labels[r] + " |";
        for (double v : grid[r]) md += " " + render(v) + " |";
        md += "\n";
      }
      for (std::size_t r = 0; r < m.row_labels.size(); ++r) {
        if (m.row_labels[r] != "Unified") continue;
        std::map<std::string, sica::MetricBundle> per_group;
        std::map<std::string, std::vector<std::string>> grouping;
        for (std::size_t c = 0; c < m.col_labels.size(); ++c) {
          per_group[m.col_labels[c]] = m.cells[r][c];
          grouping[m.col_labels[c]] = {m.col_labels[c]};
        }
        const auto rows = sica::macro_table(per_group, grouping);
        md += "\nUnified macro-average (" + metric + "): " +
              render(metric_value(rows.back().mean, view)) + "\n";
      }
      if (fs::exists(dir / "diff_heatmap.svg")) {
        fs::copy_file(dir / "diff_heatmap.svg", out_dir / "diff_heatmap.svg",
                      fs::copy_options::overwrite_existing);
        md += "\n![diff heatmap](diff_heatmap.svg)\n";
        ctx.outputs.push_back((out_dir / "diff_heatmap.svg").string());
      }
    }

    if (fs::exists(dir / "spectral_avg.csv")) {
      std::ifstream f(dir / "spectral_avg.csv");
      std::string line;
      std::getline(f, line);  // header
      std::vector<double> ks, rl, rr, sl, sr;
      while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');
        ks.push_back(std::strtod(field.c_str(), nullptr));
        double vals[4];
        for (double& v : vals) {
          std::getline(ss, field, ',');
          v = std::strtod(field.c_str(), nullptr);
        }
        rl.push_back(vals[0]);
        rr.push_back(vals[1]);
        sl.push_back(vals[2]);
        sr.push_back(vals[3]);
      }
      md += "\nSubspace sweep averages:\n\n| k | r_left | r_right | sim_left | sim_right |\n"
            "|---|---|---|---|---|\n";
      for (std::size_t i = 0; i < ks.size(); ++i)
        md += "| " + std::to_string(static_cast<long long>(ks[i])) + " | " +
              sica::format_fraction4(rl[i]) + " | " + sica::format_fraction4(rr[i]) + " | " +
              sica::format_fraction4(sl[i]) + " | " + sica::format_fraction4(sr[i]) + " |\n";
      if (!ks.empty()) {
        sica::write_text_file(
            out_dir / "spectral_curves.svg",
            sica::render_curve_svg(ks, {rl, rr, sl, sr},
                                   {"r_left", "r_right", "sim_left", "sim_right"},
                                   "outside energy and cosine vs k"));
        md += "\n![spectral curves](spectral_curves.svg)\n";
        ctx.outputs.push_back((out_dir / "spectral_curves.svg").string());
      }
    }

    if (fs::exists(dir / "rank_sweep.csv")) {
      std::ifstream f(dir / "rank_sweep.csv");
      std::string line;
      std::getline(f, line);
      md += "\n| " + line + " |\n|---|---|---|\n";
      while (std::getline(f, line)) {
        if (line.empty()) continue;
        for (char& c : line)
          if (c == ',') c = '|';
        md += "| " + line + " |\n";
      }
      if (fs::exists(dir / "rank_sweep.svg")) {
        fs::copy_file(dir / "rank_sweep.svg", out_dir / "rank_sweep.svg",
                      fs::copy_options::overwrite_existing);
        md += "\n![rank sweep](rank_sweep.svg)\n";
        ctx.outputs.push_back((out_dir / "rank_sweep.svg").string());
      }
    }
  }

  if (!opt.ckpt.empty() && !opt.data.empty()) {
    ctx.inputs.push_back(opt.ckpt);
    ctx.inputs.push_back(opt.data);
    const sica::Checkpoint ckpt = sica::load_checkpoint(opt.ckpt);
    const sica::Dataset ds = sica::load_dataset(opt.data);
    const sica::FeatureExport fx = sica::export_features(ckpt, ds.split.test);
    std::ofstream f(out_dir / "features_pca.csv", std::ios::trunc);
    f << "sample_id,domain,label,pc1,pc2\n";
    for (std::size_t i = 0; i < ds.split.test.samples.size(); ++i) {
      const sica::Sample& s = ds.split.test.samples[i];
      f << s.sample_id << ',' << s.domain_id << ',' << s.label << ','
        << sica::fmt::full(fx.pca2(i, 0)) << ',' << sica::fmt::full(fx.pca2(i, 1)) << "\n";
    }
    md += "\n2-D PCA of penultimate features written to features_pca.csv\n";
    ctx.outputs.push_back((out_dir / "features_pca.csv").string());
  }

  sica::write_text_file(out_dir / "report.md", md);
  ctx.outputs.push_back((out_dir / "report.md").string());
  write_run_manifest(ctx, opt.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SICA toolkit: constrained adaptation, spectral analysis, and "
               "cross-domain evaluation on a synthetic forensic benchmark"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_doc;  // value consumed by the pre-parse merge
  auto add_config = [&config_doc](CLI::App* sub) {
    sub->add_option("--config", config_doc,
                    "JSON config file; explicit flags take precedence");
  };

  GenDataOpts gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate the synthetic benchmark");
  add_config(gen_cmd);
  gen_cmd->add_option("--domains", gen.cfg.domains, "number of domains");
  gen_cmd->add_option("--variants", gen.cfg.variants, "faking variants per domain");
  gen_cmd->add_option("--dim", gen.cfg.d_feature, "feature dimensionality");
  gen_cmd->add_option("--n-real", gen.cfg.n_real_per_domain, "real samples per domain");
  gen_cmd->add_option("--n-fake", gen.cfg.n_fake_per_variant, "fake samples per variant");
  gen_cmd->add_option("--spread", gen.cfg.spread, "semantic cluster spread");
  gen_cmd->add_option("--strength", gen.cfg.strength, "artifact strength");
  gen_cmd->add_option("--variant-correlation", gen.cfg.variant_correlation,
                      "within-domain variant correlation in [0,1]");
  gen_cmd->add_option("--split-fraction", gen.cfg.split_fraction,
                      "fraction of variants assigned to training");
  gen_cmd->add_option("--seed", gen.cfg.seed, "master seed");
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_flag("--force", gen.force, "reuse a non-empty output directory");

  TrainOpts tr;
  CLI::App* train_cmd = app.add_subcommand("train", "train a classifier in a given regime");
  add_config(train_cmd);
  train_cmd->add_option("--data", tr.data, "dataset directory")->required();
  train_cmd->add_option("--regime", tr.regime, "fft|sica|probe");
  train_cmd->add_option("--rank", tr.rank, "adapter rank");
  train_cmd->add_option("--alpha", tr.alpha, "adapter scale");
  train_cmd->add_option("--epochs", tr.spec.epochs, "training epochs");
  train_cmd->add_option("--batch", tr.spec.batch_size, "batch size");
  train_cmd->add_option("--lr-start", tr.spec.lr_start, "initial learning rate");
  train_cmd->add_option("--lr-end", tr.spec.lr_end, "final learning rate");
  train_cmd->add_option("--weight-decay", tr.spec.weight_decay, "decoupled weight decay");
  train_cmd->add_option("--init", tr.init, "base checkpoint directory (skips pretraining)");
  train_cmd->add_option("--pretrain-epochs", tr.pretrain_epochs, "backbone pretraining epochs");
  train_cmd->add_flag("--freeze-ln", tr.freeze_ln, "freeze layer norms in the sica regime");
  tr.model.attach(train_cmd);
  train_cmd->add_option("--seed", tr.seed, "master seed");
  train_cmd->add_option("--out", tr.out, "output checkpoint directory")->required();
  train_cmd->add_flag("--force", tr.force, "reuse a non-empty output directory");

  AnalyzeOpts an;
  CLI::App* an_cmd = app.add_subcommand("analyze", "spectral analysis of weight updates");
  add_config(an_cmd);
  an_cmd->add_option("--w0", an.w0, "base checkpoint directory")->required();
  an_cmd->add_option("--delta", an.delta, "adapted checkpoint directory (fft/sica)");
  an_cmd->add_option("--scheme", an.scheme, "fft|effort|sica");
  an_cmd->add_option("--k-grid", an.k_grid, "comma-separated k values");
  an_cmd->add_option("--k-effort", an.k_effort, "effort principal-subspace size");
  an_cmd->add_option("--matrices", an.matrices, "substring filter over attention matrices");
  an_cmd->add_option("--seed", an.seed, "master seed");
  an_cmd->add_option("--out", an.out, "output directory")->required();
  an_cmd->add_flag("--force", an.force, "reuse a non-empty output directory");

  EvalOpts ev;
  CLI::App* ev_cmd = app.add_subcommand("eval", "cross-domain evaluation protocols");
  add_config(ev_cmd);
  ev_cmd->add_option("--data", ev.data, "dataset directory")->required();
  ev_cmd->add_option("--regime-set", ev.regime_set, "subset of sd,lodo,unified");
  ev_cmd->add_option("--train", ev.train_regime, "fft|sica|probe");
  ev_cmd->add_option("--rank", ev.rank, "adapter rank");
  ev_cmd->add_option("--alpha", ev.alpha, "adapter scale");
  ev_cmd->add_option("--epochs", ev.epochs, "epochs per protocol row");
  ev_cmd->add_option("--batch", ev.batch, "batch size");
  ev_cmd->add_option("--lr-start", ev.lr_start, "initial learning rate");
  ev_cmd->add_option("--lr-end", ev.lr_end, "final learning rate");
  ev_cmd->add_option("--weight-decay", ev.weight_decay, "decoupled weight decay");
  ev_cmd->add_option("--metric", ev.metric, "acc|auc|ap|f1");
  ev_cmd->add_option("--threshold", ev.threshold, "decision threshold");
  ev_cmd->add_option("--init", ev.init, "base checkpoint directory (skips pretraining)");
  ev_cmd->add_option("--pretrain-epochs", ev.pretrain_epochs, "backbone pretraining epochs");
  ev_cmd->add_option("--threads", ev.threads, "parallel protocol rows");
  ev_cmd->add_option("--seed", ev.seed, "master seed");
  ev_cmd->add_option("--out", ev.out, "output directory")->required();
  ev_cmd->add_flag("--force", ev.force, "reuse a non-empty output directory");

  AblateOpts ab;
  CLI::App* ab_cmd = app.add_subcommand("ablate-rank", "sweep adapter rank on unified training");
  add_config(ab_cmd);
  ab_cmd->add_option("--data", ab.data, "dataset directory")->required();
  ab_cmd->add_option("--ranks", ab.ranks, "comma-separated ranks");
  ab_cmd->add_option("--alpha", ab.alpha, "adapter scale");
  ab_cmd->add_option("--epochs", ab.epochs, "epochs per rank");
  ab_cmd->add_option("--batch", ab.batch, "batch size");
  ab_cmd->add_option("--lr-start", ab.lr_start, "initial learning rate");
  ab_cmd->add_option("--lr-end", ab.lr_end, "final learning rate");
  ab_cmd->add_option("--metric", ab.metric, "acc|auc|ap|f1");
  ab_cmd->add_option("--threshold", ab.threshold, "decision threshold");
  ab_cmd->add_option("--init", ab.init, "base checkpoint directory (skips pretraining)");
  ab_cmd->add_option("--pretrain-epochs", ab.pretrain_epochs, "backbone pretraining epochs");
  ab_cmd->add_option("--threads", ab.threads, "parallel rank rows");
  ab_cmd->add_option("--seed", ab.seed, "master seed");
  ab_cmd->add_option("--out", ab.out, "output directory")->required();
  ab_cmd->add_flag("--force", ab.force, "reuse a non-empty output directory");

  ReportOpts rp;
  CLI::App* rp_cmd = app.add_subcommand("report", "render Markdown + SVG from run directories");
  add_config(rp_cmd);
  rp_cmd->add_option("--in", rp.in_dirs, "input run directories")->expected(-1);
  rp_cmd->add_option("--ckpt", rp.ckpt, "checkpoint for feature export");
  rp_cmd->add_option("--data", rp.data, "dataset for feature export");
  rp_cmd->add_option("--out", rp.out, "output directory")->required();
  rp_cmd->add_flag("--force", rp.force, "reuse a non-empty output directory");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = merge_config_into_args(args);
    std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: invalid input: %s\n", e.what());
    return 1;
  }

  RunContext ctx;
  ctx.command_line = join_args(argc, argv);
  try {
    if (gen_cmd->parsed()) {
      ctx.subcommand = "gen-data";
      ctx.resolved_config = {{"domains", gen.cfg.domains},
                             {"variants", gen.cfg.variants},
                             {"dim", gen.cfg.d_feature},
                             {"n-real", gen.cfg.n_real_per_domain},
                             {"n-fake", gen.cfg.n_fake_per_variant},
                             {"spread", gen.cfg.spread},
                             {"strength", gen.cfg.strength},
                             {"variant-correlation", gen.cfg.variant_correlation},
                             {"split-fraction", gen.cfg.split_fraction},
                             {"seed", gen.cfg.seed},
                             {"out", gen.out}};
      return run_gen_data(gen, ctx);
    }
    if (train_cmd->parsed()) {
      ctx.subcommand = "train";
      ctx.resolved_config = {{"data", tr.data},
                             {"regime", tr.regime},
                             {"rank", tr.rank},
                             {"alpha", tr.alpha},
                             {"epochs", tr.spec.epochs},
                             {"batch", tr.spec.batch_size},
                             {"lr-start", tr.spec.lr_start},
                             {"lr-end", tr.spec.lr_end},
                             {"weight-decay", tr.spec.weight_decay},
                             {"init", tr.init},
                             {"pretrain-epochs", tr.pretrain_epochs},
                             {"freeze-ln", tr.freeze_ln},
                             {"seed", tr.seed},
                             {"out", tr.out}};
      const json model_json = tr.model.to_json();
      for (const auto& [k, v] : model_json.items()) ctx.resolved_config[k] = v;
      return run_train(tr, ctx);
    }
    if (an_cmd->parsed()) {
      ctx.subcommand = "analyze";
      ctx.resolved_config = {{"w0", an.w0},
                             {"delta", an.delta},
                             {"scheme", an.scheme},
                             {"k-grid", an.k_grid},
                             {"k-effort", an.k_effort},
                             {"matrices", an.matrices},
                             {"seed", an.seed},
                             {"out", an.out}};
      return run_analyze(an, ctx);
    }
    if (ev_cmd->parsed()) {
      ctx.subcommand = "eval";
      ctx.resolved_config = {{"data", ev.data},
                             {"regime-set", ev.regime_set},
                             {"train", ev.train_regime},
                             {"rank", ev.rank},
                             {"alpha", ev.alpha},
                             {"epochs", ev.epochs},
                             {"batch", ev.batch},
                             {"lr-start", ev.lr_start},
                             {"lr-end", ev.lr_end},
                             {"weight-decay", ev.weight_decay},
                             {"metric", ev.metric},
                             {"threshold", ev.threshold},
                             {"init", ev.init},
                             {"pretrain-epochs", ev.pretrain_epochs},
                             {"threads", ev.threads},
                             {"seed", ev.seed},
                             {"out", ev.out}};
      return run_eval(ev, ctx);
    }
    if (ab_cmd->parsed()) {
      ctx.subcommand = "ablate-rank";
      ctx.resolved_config = {{"data", ab.data},
                             {"ranks", ab.ranks},
                             {"alpha", ab.alpha},
                             {"epochs", ab.epochs},
                             {"batch", ab.batch},
                             {"lr-start", ab.lr_start},
                             {"lr-end", ab.lr_end},
                             {"metric", ab.metric},
                             {"threshold", ab.threshold},
                             {"init", ab.init},
                             {"pretrain-epochs", ab.pretrain_epochs},
                             {"threads", ab.threads},
                             {"seed", ab.seed},
                             {"out", ab.out}};
      return run_ablate(ab, ctx);
    }
    if (rp_cmd->parsed()) {
      ctx.subcommand = "report";
      ctx.resolved_config = {{"in", rp.in_dirs}, {"ckpt", rp.ckpt}, {"data", rp.data},
                             {"out", rp.out}};
      return run_report(rp, ctx);
    }
  } catch (const sica::numeric_error& e) {
    std::fprintf(stderr, "error: numerical failure: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: invalid input: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
