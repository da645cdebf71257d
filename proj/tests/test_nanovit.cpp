#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "reference_model.hpp"
#include "sica/domgen.hpp"
#include "sica/nanovit.hpp"

using namespace sica;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.d_feature = 64;
  cfg.seq_len = 8;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.head_hidden = 16;
  cfg.seed = 11;
  return cfg;
}

Matrix random_batch(std::size_t d_feature, std::size_t bs, std::uint64_t seed) {
  Rng rng(seed);
  return Matrix::random_normal(d_feature, bs, rng);
}

Dataset tiny_dataset(std::uint64_t seed) {
  DatasetConfig cfg;
  cfg.domains = 2;
  cfg.variants = 2;
  cfg.d_feature = 64;
  cfg.n_real_per_domain = 40;
  cfg.n_fake_per_variant = 20;
  cfg.seed = seed;
  return generate_dataset(cfg);
}

// Relative-error gradient check with central differences.
void check_gradients(Checkpoint ckpt, const Matrix& batch, const std::vector<int>& labels) {
  const ForwardCache cache = forward(ckpt, batch);
  const auto [loss, grads] = backward(ckpt, cache, labels);
  ASSERT_TRUE(std::isfinite(loss));
  const double eps = 1e-4;
  auto loss_at = [&]() {
    const ForwardCache c = forward(ckpt, batch);
    Matrix dl;
    return head_out_dim(ckpt) == 1 ? bce_with_logits(c.logits, labels, dl)
                                   : softmax_cross_entropy(c.logits, labels, dl);
  };
  auto check_tensor = [&](Matrix& theta, const Matrix& analytic, const std::string& name) {
    ASSERT_TRUE(theta.same_shape(analytic)) << name;
    for (std::size_t i = 0; i < theta.entries.size(); ++i) {
      const double orig = theta.entries[i];
      theta.entries[i] = orig + eps;
      const double up = loss_at();
      theta.entries[i] = orig - eps;
      const double down = loss_at();
      theta.entries[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max({std::abs(numeric), std::abs(analytic.entries[i]), 1e-2});
      EXPECT_LE(std::abs(numeric - analytic.entries[i]) / denom, 1e-4)
          << name << "[" << i << "]: numeric " << numeric << " analytic "
          << analytic.entries[i];
    }
  };
  for (const auto& [name, grad] : grads.params) check_tensor(ckpt.params.at(name), grad, name);
  for (const auto& [name, ab] : grads.adapters) {
    check_tensor(ckpt.adapters.at(name).a, ab.first, name + "#a");
    check_tensor(ckpt.adapters.at(name).b, ab.second, name + "#b");
  }
}

}  // namespace

TEST(Forward, MatchesSlowReference) {
  Checkpoint ckpt = init_checkpoint(small_config());
  const Matrix batch = random_batch(64, 3, 5);
  const ForwardCache cache = forward(ckpt, batch);
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> feats(64);
    for (std::size_t f = 0; f < 64; ++f) feats[f] = batch(f, c);
    EXPECT_NEAR(cache.logits(c, 0), reference::forward_one(ckpt, feats), 1e-12);
  }
}

TEST(Forward, MatchesSlowReferenceWithAdapters) {
  Checkpoint ckpt = init_checkpoint(small_config());
  ckpt.regime = Regime::Sica;
  init_adapters(ckpt, 4, 16.0, 77);
  Rng rng(9);
  for (auto& [name, ad] : ckpt.adapters) ad.b = Matrix::random_normal(ad.b.rows, ad.b.cols, rng);
  const Matrix batch = random_batch(64, 2, 6);
  const ForwardCache cache = forward(ckpt, batch);
  for (std::size_t c = 0; c < 2; ++c) {
    std::vector<double> feats(64);
    for (std::size_t f = 0; f < 64; ++f) feats[f] = batch(f, c);
    EXPECT_NEAR(cache.logits(c, 0), reference::forward_one(ckpt, feats), 1e-12);
  }
}

TEST(Forward, DuplicatedSampleGivesIdenticalLogits) {
  Checkpoint ckpt = init_checkpoint(small_config());
  Matrix batch(64, 4);
  Rng rng(13);
  for (std::size_t f = 0; f < 64; ++f) {
    const double v = rng.normal();
    for (std::size_t c = 0; c < 4; ++c) batch(f, c) = v;
  }
  const ForwardCache cache = forward(ckpt, batch);
  for (std::size_t c = 1; c < 4; ++c) EXPECT_DOUBLE_EQ(cache.logits(c, 0), cache.logits(0, 0));
}

TEST(Forward, FreshSicaAdaptersMatchProbeBitwise) {
  Checkpoint probe = init_checkpoint(small_config());
  probe.regime = Regime::Probe;
  Checkpoint sica_ckpt = probe;
  sica_ckpt.regime = Regime::Sica;
  init_adapters(sica_ckpt, 4, 16.0, 3);
  const Matrix batch = random_batch(64, 5, 17);
  const ForwardCache a = forward(probe, batch);
  const ForwardCache b = forward(sica_ckpt, batch);
  EXPECT_EQ(a.logits.entries, b.logits.entries);
}

TEST(Forward, RejectsWrongInputWidth) {
  Checkpoint ckpt = init_checkpoint(small_config());
  EXPECT_THROW(forward(ckpt, Matrix(32, 2)), std::invalid_argument);
}

TEST(Loss, ZeroLogitsGiveLnTwo) {
  Matrix logits(4, 1);
  Matrix dl;
  const double loss = bce_with_logits(logits, {0, 1, 1, 0}, dl);
  EXPECT_NEAR(loss, std::log(2.0), 1e-15);
}

TEST(Loss, ConfidentCorrectPredictionsNearZero) {
  Matrix logits(2, 1);
  logits(0, 0) = 12.0;
  logits(1, 0) = -12.0;
  Matrix dl;
  EXPECT_LT(bce_with_logits(logits, {1, 0}, dl), 1e-3);
}

TEST(Loss, RejectsBadLabels) {
  Matrix logits(2, 1);
  Matrix dl;
  EXPECT_THROW(bce_with_logits(logits, {0, 2}, dl), std::invalid_argument);
}

TEST(GradCheck, FftRegime) {
  ModelConfig cfg = small_config();
  Checkpoint ckpt = init_checkpoint(cfg);
  ckpt.regime = Regime::Fft;
  check_gradients(ckpt, random_batch(64, 4, 21), {0, 1, 1, 0});
}

TEST(GradCheck, SicaRegime) {
  Checkpoint ckpt = init_checkpoint(small_config());
  ckpt.regime = Regime::Sica;
  init_adapters(ckpt, 2, 16.0, 23);
  Rng rng(25);
  for (auto& [name, ad] : ckpt.adapters)
    ad.b = Matrix::random_uniform(ad.b.rows, ad.b.cols, -0.1, 0.1, rng);
  check_gradients(ckpt, random_batch(64, 4, 27), {1, 0, 1, 0});
}

TEST(GradCheck, ProbeRegime) {
  Checkpoint ckpt = init_checkpoint(small_config());
  ckpt.regime = Regime::Probe;
  check_gradients(ckpt, random_batch(64, 4, 29), {1, 1, 0, 0});
}

TEST(GradCheck, DomainClassificationHead) {
  Checkpoint ckpt = init_checkpoint(small_config(), /*head_out=*/3);
  ckpt.regime = Regime::Fft;
  check_gradients(ckpt, random_batch(64, 4, 31), {0, 2, 1, 0});
}

TEST(Train, ZeroEpochsLeavesCheckpointUntouched) {
  Checkpoint ckpt = init_checkpoint(small_config());
  const Dataset ds = tiny_dataset(41);
  TrainSpec spec;
  spec.epochs = 0;
  const TrainResult result = train(ckpt, spec, ds.split.train);
  for (const auto& [name, m] : ckpt.params)
    EXPECT_EQ(result.checkpoint.at(name).entries, m.entries) << name;
}

TEST(Train, ConstantScheduleStepCount) {
  Checkpoint ckpt = init_checkpoint(small_config());
  ckpt.regime = Regime::Probe;
  const Dataset ds = tiny_dataset(43);
  TrainSpec spec;
  spec.epochs = 2;
  spec.batch_size = 32;
  spec.lr_start = spec.lr_end = 1e-3;
  const TrainResult result = train(ckpt, spec, ds.split.train);
  const std::size_t n = ds.split.train.samples.size();
  EXPECT_EQ(result.log.size(), 2 * ((n + 31) / 32));
  for (const auto& row : result.log) EXPECT_DOUBLE_EQ(row.lr, 1e-3);
}

TEST(Train, DeterministicGivenSeed) {
  Checkpoint ckpt = init_checkpoint(small_config());
  ckpt.regime = Regime::Fft;
  const Dataset ds = tiny_dataset(47);
  TrainSpec spec;
  spec.epochs = 2;
  spec.batch_size = 16;
  spec.seed = 99;
  const TrainResult a = train(ckpt, spec, ds.split.train);
  const TrainResult b = train(ckpt, spec, ds.split.train);
  for (const auto& [name, m] : a.checkpoint.params)
    EXPECT_EQ(b.checkpoint.at(name).entries, m.entries) << name;
}

TEST(Train, SicaFreezesBackboneBitwise) {
  Checkpoint ckpt = init_checkpoint(small_config());
  ckpt.regime = Regime::Sica;
  init_adapters(ckpt, 2, 16.0, 51);
  const Dataset ds = tiny_dataset(53);
  TrainSpec spec;
  spec.epochs = 2;
  spec.batch_size = 16;
  const TrainResult result = train(ckpt, spec, ds.split.train);
  for (const auto& [name, m] : ckpt.params) {
    const bool trainable = name.starts_with("head.") || name.find("ln") != std::string::npos;
    if (trainable) continue;
    EXPECT_EQ(result.checkpoint.at(name).entries, m.entries) << name;
  }
  // Adapters must have moved.
  bool adapters_changed = false;
  for (const auto& [name, ad] : result.checkpoint.adapters)
    if (ad.b.entries != ckpt.adapters.at(name).b.entries) adapters_changed = true;
  EXPECT_TRUE(adapters_changed);
}

TEST(Train, ProbeFreezesEverythingButHead) {
  Checkpoint ckpt = init_checkpoint(small_config());
  ckpt.regime = Regime::Probe;
  const Dataset ds = tiny_dataset(57);
  TrainSpec spec;
  spec.epochs = 1;
  spec.batch_size = 16;
  const TrainResult result = train(ckpt, spec, ds.split.train);
  for (const auto& [name, m] : ckpt.params) {
    if (name.starts_with("head.")) continue;
    EXPECT_EQ(result.checkpoint.at(name).entries, m.entries) << name;
  }
}

TEST(Train, LossImprovesOnSeparableData) {
  const Dataset ds = tiny_dataset(61);
  ModelConfig cfg = small_config();
  Checkpoint base = init_checkpoint(cfg);
  base.regime = Regime::Sica;
  init_adapters(base, 4, 16.0, 63);
  TrainSpec spec;
  spec.epochs = 6;
  spec.batch_size = 16;
  const TrainResult result = train(base, spec, ds.split.train);
  ASSERT_FALSE(result.epochs.empty());
  EXPECT_LT(result.epochs.back().loss, result.epochs.front().loss);
  for (const auto& e : result.epochs) EXPECT_TRUE(std::isfinite(e.loss));
}

SampleSet pretrain_reals(std::uint64_t seed) {
  DatasetConfig cfg;
  cfg.domains = 2;
  cfg.variants = 2;
  cfg.d_feature = 64;
  cfg.n_real_per_domain = 500;
  cfg.n_fake_per_variant = 10;
  cfg.seed = seed;
  const Dataset ds = generate_dataset(cfg);
  SampleSet reals;
  reals.d_feature = ds.all.d_feature;
  reals.domain_names = ds.all.domain_names;
  for (const Sample& s : ds.all.samples)
    if (s.label == 0) reals.samples.push_back(s);
  return reals;
}

TEST(Pretrain, SeparatesDomainsAndRejectsDegenerates) {
  const SampleSet reals = pretrain_reals(67);
  ModelConfig cfg;  // desk-scale defaults
  cfg.seed = 7;
  PretrainSpec spec;
  spec.seed = 7;
  const PretrainResult result = pretrain_backbone(cfg, reals, spec);
  EXPECT_GE(result.val_domain_accuracy, 0.99);
  EXPECT_EQ(head_out_dim(result.checkpoint), 1u);
  EXPECT_EQ(result.checkpoint.regime, Regime::Probe);

  SampleSet one_domain = filter_domain(reals, 0, true);
  EXPECT_THROW(pretrain_backbone(cfg, one_domain, spec), std::invalid_argument);
  const Dataset with_fakes = tiny_dataset(67);
  EXPECT_THROW(pretrain_backbone(cfg, with_fakes.all, spec), std::invalid_argument);
}

TEST(Pretrain, ReseedingKeepsDomainAccuracy) {
  const SampleSet reals = pretrain_reals(67);
  ModelConfig cfg;
  PretrainSpec spec;
  std::vector<double> first_weight;
  for (std::uint64_t seed : {101ull, 202ull, 303ull}) {
    cfg.seed = seed;
    spec.seed = seed;
    const PretrainResult result = pretrain_backbone(cfg, reals, spec);
    EXPECT_GE(result.val_domain_accuracy, 0.95) << "seed " << seed;
    const auto& w = result.checkpoint.at("layer0.attn.wq").entries;
    if (first_weight.empty())
      first_weight = w;
    else
      EXPECT_NE(first_weight, w);
  }
}

TEST(ExportFeatures, DeterministicRowsAndCenteredPca) {
  const Dataset ds = tiny_dataset(73);
  Checkpoint ckpt = init_checkpoint(small_config());
  const FeatureExport fx = export_features(ckpt, ds.split.test);
  ASSERT_EQ(fx.features.rows, ds.split.test.samples.size());
  ASSERT_EQ(fx.pca2.cols, 2u);
  // Identical inputs give identical rows.
  const FeatureExport fx2 = export_features(ckpt, ds.split.test);
  EXPECT_EQ(fx.features.entries, fx2.features.entries);
  for (std::size_t j = 0; j < 2; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < fx.pca2.rows; ++i) mean += fx.pca2(i, j);
    EXPECT_NEAR(mean / static_cast<double>(fx.pca2.rows), 0.0, 1e-10);
  }
}

TEST(CheckpointDir, SaveLoadRoundTrip) {
  Checkpoint ckpt = init_checkpoint(small_config());
  ckpt.regime = Regime::Sica;
  init_adapters(ckpt, 4, 16.0, 81);
  const fs::path dir = fs::temp_directory_path() / "sica_ckpt_rt";
  fs::remove_all(dir);
  save_checkpoint(ckpt, dir);
  const Checkpoint back = load_checkpoint(dir);
  EXPECT_EQ(back.regime, Regime::Sica);
  EXPECT_EQ(back.params.size(), ckpt.params.size());
  for (const auto& [name, m] : ckpt.params) EXPECT_EQ(back.at(name).entries, m.entries);
  ASSERT_EQ(back.adapters.size(), ckpt.adapters.size());
  for (const auto& [name, ad] : ckpt.adapters) {
    EXPECT_EQ(back.adapters.at(name).a.entries, ad.a.entries);
    EXPECT_EQ(back.adapters.at(name).b.entries, ad.b.entries);
  }
  fs::remove_all(dir);
}

TEST(CheckpointDir, LoadRejectsTamperedShapes) {
  Checkpoint ckpt = init_checkpoint(small_config());
  const fs::path dir = fs::temp_directory_path() / "sica_ckpt_bad";
  fs::remove_all(dir);
  save_checkpoint(ckpt, dir);
  write_matb(dir / "head.w1.matb", Matrix(3, 3));  // wrong shape
  EXPECT_THROW(load_checkpoint(dir), std::invalid_argument);
  fs::remove_all(dir);
}
