#include <gtest/gtest.h>

#include "sica/protocol.hpp"

using namespace sica;

namespace {

Dataset small_benchmark(std::uint64_t seed) {
  DatasetConfig cfg;
  cfg.domains = 2;
  cfg.variants = 4;
  cfg.d_feature = 32;
  cfg.n_real_per_domain = 120;
  cfg.n_fake_per_variant = 40;
  cfg.seed = seed;
  return generate_dataset(cfg);
}

ModelConfig small_model() {
  ModelConfig cfg;
  cfg.d_feature = 32;
  cfg.seq_len = 4;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.head_hidden = 16;
  cfg.seed = 5;
  return cfg;
}

RowTrainFn make_train_fn(const Checkpoint& base) {
  return [base](const SampleSet& row_train, std::uint64_t row_seed) {
    Checkpoint ckpt = base;
    ckpt.regime = Regime::Sica;
    init_adapters(ckpt, 4, 16.0, row_seed);
    TrainSpec spec;
    spec.epochs = 4;
    spec.batch_size = 32;
    spec.seed = row_seed;
    return train(ckpt, spec, row_train).checkpoint;
  };
}

}  // namespace

TEST(RunProtocol, ShapesAndDeterminism) {
  const Dataset ds = small_benchmark(19);
  const Checkpoint base = init_checkpoint(small_model());
  const RowTrainFn fn = make_train_fn(base);
  const std::set<ProtocolRegime> all = {ProtocolRegime::Sd, ProtocolRegime::Lodo,
                                        ProtocolRegime::Unified};
  const EvalMatrix m = run_protocol(ds.split, all, fn, 7);
  ASSERT_EQ(m.row_labels.size(), 5u);  // 2 SD + 2 LODO + unified
  ASSERT_EQ(m.col_labels.size(), 2u);
  EXPECT_EQ(m.row_labels.front(), "Deepfake");
  EXPECT_EQ(m.row_labels.back(), "Unified");
  for (const auto& row : m.cells)
    for (const auto& cell : row) EXPECT_GT(cell.n, 0u);

  const EvalMatrix again = run_protocol(ds.split, all, fn, 7);
  for (std::size_t r = 0; r < m.cells.size(); ++r)
    for (std::size_t c = 0; c < m.cells[r].size(); ++c) {
      EXPECT_EQ(m.cells[r][c].auc, again.cells[r][c].auc);
      EXPECT_EQ(m.cells[r][c].acc, again.cells[r][c].acc);
    }
}

TEST(RunProtocol, ParallelMatchesSequential) {
  const Dataset ds = small_benchmark(23);
  const Checkpoint base = init_checkpoint(small_model());
  const RowTrainFn fn = make_train_fn(base);
  const std::set<ProtocolRegime> regimes = {ProtocolRegime::Sd, ProtocolRegime::Unified};
  const EvalMatrix seq = run_protocol(ds.split, regimes, fn, 11, 0.5, 1);
  const EvalMatrix par = run_protocol(ds.split, regimes, fn, 11, 0.5, 2);
  for (std::size_t r = 0; r < seq.cells.size(); ++r)
    for (std::size_t c = 0; c < seq.cells[r].size(); ++c)
      EXPECT_EQ(seq.cells[r][c].auc, par.cells[r][c].auc);
}

TEST(RunProtocol, RejectsDegenerateInputs) {
  const Dataset ds = small_benchmark(29);
  const Checkpoint base = init_checkpoint(small_model());
  EXPECT_THROW(run_protocol(ds.split, {}, make_train_fn(base), 1), std::invalid_argument);
}

TEST(DiffHeatmap, IdenticalInputsGiveZeros) {
  EvalMatrix sd;
  sd.row_labels = {"a", "b"};
  sd.col_labels = {"a", "b"};
  MetricBundle x;
  x.auc = 0.7;
  x.n = 10;
  sd.cells = {{x, x}, {x, x}};
  const DiffHeatmap h = diff_heatmap(sd, {0.7, 0.7}, MetricView::Auc);
  for (const auto& row : h.values)
    for (double v : row) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(DiffHeatmap, ReferenceCellArithmetic) {
  // Published single-domain vs unified pairs: the diagonal diff must come
  // out as unified - SD.
  EvalMatrix sd;
  sd.row_labels = {"Deepfake"};
  sd.col_labels = {"Deepfake"};
  MetricBundle fft_cell;
  fft_cell.auc = 0.8183;
  fft_cell.n = 1;
  sd.cells = {{fft_cell}};
  const DiffHeatmap fft = diff_heatmap(sd, {0.7900}, MetricView::Auc);
  EXPECT_EQ(format_fraction4(fft.values[0][0]), "-0.0283");

  sd.cells[0][0].auc = 0.9235;
  const DiffHeatmap sica_diff = diff_heatmap(sd, {0.9234}, MetricView::Auc);
  EXPECT_EQ(format_fraction4(sica_diff.values[0][0]), "-0.0001");
}

TEST(DiffHeatmap, RejectsColumnMismatch) {
  EvalMatrix sd;
  sd.row_labels = {"a"};
  sd.col_labels = {"a", "b"};
  sd.cells = {{MetricBundle{}, MetricBundle{}}};
  EXPECT_THROW(diff_heatmap(sd, {0.5}, MetricView::Auc), std::invalid_argument);
}

TEST(EvalMatrixIo, JsonRoundTripAndCsv) {
  EvalMatrix m;
  m.row_labels = {"Deepfake", "Unified"};
  m.col_labels = {"Deepfake", "AIGC"};
  MetricBundle a{0.9, 0.95, 0.8, 0.85, 100};
  MetricBundle b{0.5, 0.52, 0.4, 0.45, 200};
  m.cells = {{a, b}, {b, a}};
  const EvalMatrix back = eval_matrix_from_json(eval_matrix_json(m));
  EXPECT_EQ(back.row_labels, m.row_labels);
  EXPECT_EQ(back.cells[0][0].auc, m.cells[0][0].auc);
  EXPECT_EQ(back.cells[1][1].n, m.cells[1][1].n);

  const auto path = std::filesystem::temp_directory_path() / "eval_matrix.csv";
  write_eval_matrix_csv(m, MetricView::Auc, path);
  std::ifstream f(path);
  std::string header, row1;
  std::getline(f, header);
  std::getline(f, row1);
  EXPECT_EQ(header, "train,Deepfake,AIGC");
  EXPECT_EQ(row1.substr(0, 9), "Deepfake,");
  std::filesystem::remove(path);
}

TEST(HeatmapSvg, DeterministicBytesNoTimestamps) {
  const std::vector<std::vector<double>> values = {{-0.03, 0.0}, {0.01, 0.05}};
  const std::vector<std::string> labels = {"r1", "r2"};
  const std::string a = render_heatmap_svg(values, labels, labels, "diff");
  const std::string b = render_heatmap_svg(values, labels, labels, "diff");
  EXPECT_EQ(a, b);
  EXPECT_NE(a.find("<svg"), std::string::npos);
  EXPECT_NE(a.find("+0.0500"), std::string::npos);
  EXPECT_EQ(a.find("timestamp"), std::string::npos);
}
