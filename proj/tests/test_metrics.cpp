#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sica/metrics.hpp"
#include "sica/rng.hpp"

using namespace sica;

TEST(Accuracy, AllCorrectAndTieConvention) {
  EXPECT_DOUBLE_EQ(accuracy({0.9, 0.1, 0.8}, {1, 0, 1}, 0.5), 1.0);
  // Scores exactly at the threshold predict positive (>= is inclusive).
  EXPECT_DOUBLE_EQ(accuracy({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 1}, 0.5), 0.75);
}

TEST(Accuracy, MatchesCountOracleOnRandomFixture) {
  Rng rng(5);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 200; ++i) {
    scores.push_back(rng.uniform01());
    labels.push_back(rng.below(2) ? 1 : 0);
  }
  EXPECT_EQ(accuracy(scores, labels, 0.5), oracle::count_accuracy(scores, labels, 0.5));
}

TEST(Accuracy, RejectsEmptyAndBadLabels) {
  EXPECT_THROW(accuracy({}, {}, 0.5), std::invalid_argument);
  EXPECT_THROW(accuracy({0.5}, {2}, 0.5), std::invalid_argument);
}

TEST(Auc, FourSampleFixture) {
  EXPECT_DOUBLE_EQ(auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}), 0.75);
}

TEST(Auc, PerfectSeparation) {
  EXPECT_DOUBLE_EQ(auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}), 1.0);
}

TEST(Auc, RandomLabelsNearHalf) {
  Rng rng(7);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 10000; ++i) {
    scores.push_back(rng.uniform01());
    labels.push_back(rng.below(2) ? 1 : 0);
  }
  EXPECT_NEAR(auc(scores, labels), 0.5, 0.02);
}

TEST(Auc, SingleClassIsExplicitError) {
  EXPECT_THROW(auc({0.1, 0.9}, {1, 1}), numeric_error);
  EXPECT_THROW(auc({0.1, 0.9}, {0, 0}), numeric_error);
}

TEST(Auc, MonotoneTransformInvariance) {
  Rng rng(11);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 300; ++i) {
    scores.push_back(rng.uniform(-3.0, 3.0));
    labels.push_back(rng.below(2) ? 1 : 0);
  }
  std::vector<double> warped = scores;
  for (double& s : warped) s = std::exp(0.5 * s) + 7.0;  // strictly increasing
  EXPECT_DOUBLE_EQ(auc(scores, labels), auc(warped, labels));
}

TEST(Auc, LabelFlipSymmetry) {
  Rng rng(13);
  std::vector<double> scores;
  std::vector<int> labels, flipped;
  for (int i = 0; i < 150; ++i) {
    scores.push_back(rng.below(20) * 0.05);  // deliberate ties
    const int y = rng.below(2) ? 1 : 0;
    labels.push_back(y);
    flipped.push_back(1 - y);
  }
  EXPECT_NEAR(auc(scores, flipped), 1.0 - auc(scores, labels), 1e-12);
}

TEST(AveragePrecision, ClosedFormCases) {
  // All positives ranked first.
  EXPECT_DOUBLE_EQ(average_precision({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}), 1.0);
  // Single positive ranked last of n.
  EXPECT_DOUBLE_EQ(average_precision({0.9, 0.8, 0.7, 0.1}, {0, 0, 0, 1}), 0.25);
}

TEST(AveragePrecision, MatchesStepSumOracleWithTies) {
  const std::vector<double> scores = {0.9, 0.9, 0.8, 0.7, 0.7, 0.7, 0.5, 0.4, 0.4, 0.3, 0.2, 0.1};
  const std::vector<int> labels = {1, 0, 1, 1, 0, 1, 0, 1, 0, 0, 1, 0};
  EXPECT_EQ(average_precision(scores, labels), oracle::threshold_scan_ap(scores, labels));
}

TEST(AveragePrecision, NoPositivesIsError) {
  EXPECT_THROW(average_precision({0.5, 0.2}, {0, 0}), numeric_error);
}

TEST(F1, PerfectAndDegenerate) {
  EXPECT_DOUBLE_EQ(f1({0.9, 0.1}, {1, 0}, 0.5), 1.0);
  // Zero predicted positives -> 0 by convention.
  EXPECT_DOUBLE_EQ(f1({0.1, 0.2}, {1, 1}, 0.5), 0.0);
}

TEST(F1, MatchesConfusionOracle) {
  Rng rng(17);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 120; ++i) {
    scores.push_back(rng.uniform01());
    labels.push_back(rng.below(2) ? 1 : 0);
  }
  EXPECT_EQ(f1(scores, labels, 0.5), oracle::confusion_f1(scores, labels, 0.5));
}

// Exhaustive cross-check against the enumeration oracles on every label
// pattern of a fixed 8-score set (the full 12-sample sweep runs in the
// acceptance suite).
TEST(Metrics, ExhaustiveSmallInstancesMatchOracles) {
  const std::vector<double> scores = {0.1, 0.3, 0.3, 0.45, 0.5, 0.5, 0.7, 0.95};
  const std::size_t n = scores.size();
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    std::vector<int> labels(n);
    std::size_t np = 0;
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = (mask >> i) & 1u;
      np += labels[i];
    }
    EXPECT_EQ(accuracy(scores, labels, 0.5), oracle::count_accuracy(scores, labels, 0.5));
    EXPECT_EQ(f1(scores, labels, 0.5), oracle::confusion_f1(scores, labels, 0.5));
    if (np >= 1) EXPECT_EQ(average_precision(scores, labels), oracle::threshold_scan_ap(scores, labels));
    if (np >= 1 && np < n) EXPECT_EQ(auc(scores, labels), oracle::pairwise_auc(scores, labels));
  }
}

TEST(MacroTable, SingleGroupEqualsItself) {
  std::map<std::string, MetricBundle> per_group{{"only", {0.8, 0.7, 0.6, 0.5, 10}}};
  std::map<std::string, std::vector<std::string>> grouping{{"domain", {"only"}}};
  const auto rows = macro_table(per_group, grouping);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(rows.back().mean.acc, 0.8);
  EXPECT_DOUBLE_EQ(rows.back().mean.auc, 0.7);
}

TEST(MacroTable, ReproducesReferenceRows) {
  // Domain-average ACC inputs and their published overall macro-averages.
  auto run = [](std::vector<double> domain_avgs) {
    std::map<std::string, MetricBundle> per_group;
    std::map<std::string, std::vector<std::string>> grouping;
    const char* names[] = {"Deepfake", "AIGC", "IMDL", "Doc"};
    for (std::size_t i = 0; i < domain_avgs.size(); ++i) {
      MetricBundle b;
      b.acc = domain_avgs[i];
      b.n = 1;
      per_group[names[i]] = b;
      grouping[names[i]] = {names[i]};
    }
    return format_percent(macro_table(per_group, grouping).back().mean.acc);
  };
  EXPECT_EQ(run({0.884, 0.940, 0.853, 0.738}), "85.4");
  EXPECT_EQ(run({0.678, 0.742, 0.773, 0.717}), "72.7");
}

TEST(MacroTable, InvariantUnderSubtypeReweighting) {
  // Splitting a domain's mass across more subtypes with the same mean must
  // not change the overall (it averages domain means, not pooled samples).
  std::map<std::string, MetricBundle> a{{"x", {0.9, 0.9, 0.9, 0.9, 100}},
                                        {"y", {0.5, 0.5, 0.5, 0.5, 1}}};
  std::map<std::string, std::vector<std::string>> ga{{"d1", {"x"}}, {"d2", {"y"}}};
  std::map<std::string, MetricBundle> b{{"x1", {0.8, 0.8, 0.8, 0.8, 7}},
                                        {"x2", {1.0, 1.0, 1.0, 1.0, 900}},
                                        {"y", {0.5, 0.5, 0.5, 0.5, 1}}};
  std::map<std::string, std::vector<std::string>> gb{{"d1", {"x1", "x2"}}, {"d2", {"y"}}};
  EXPECT_NEAR(macro_table(a, ga).back().mean.acc, macro_table(b, gb).back().mean.acc, 1e-15);
}

TEST(MacroTable, EmptyGroupRejected) {
  std::map<std::string, MetricBundle> per_group{{"x", {}}};
  std::map<std::string, std::vector<std::string>> grouping{{"d", {}}};
  EXPECT_THROW(macro_table(per_group, grouping), std::invalid_argument);
}

TEST(Formatting, PercentAndFraction) {
  EXPECT_EQ(format_percent(0.85375), "85.4");
  EXPECT_EQ(format_percent(0.7275), "72.7");  // exact half resolves toward zero
  EXPECT_EQ(format_percent(1.0), "100.0");
  EXPECT_EQ(format_fraction4(0.42049), "0.4205");
  EXPECT_EQ(format_fraction4(-0.02834), "-0.0283");
  EXPECT_EQ(format_fraction4(0.5), "0.5000");
}
