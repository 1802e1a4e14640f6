#include <gtest/gtest.h>

#include <set>

#include "scorefuse/metrics.hpp"
#include "support.hpp"

using namespace scorefuse;
using testing_support::to_matrix;

namespace {

struct Case {
  Matrix f;
  LabelIndex labels;
  oracle::Instance raw;
};

Case make_case(const oracle::Rows& rows, const std::vector<std::string>& q, const std::vector<std::string>& g) {
  return {to_matrix(rows), LabelIndex(q, g), {rows, q, g}};
}

}  // namespace

TEST(Rank1, KnownCases) {
  const oracle::Rows f = {{0.9, 0.1}, {0.2, 0.8}};
  EXPECT_EQ(rank1_accuracy(to_matrix(f), LabelIndex({"A", "B"}, {"A", "B"})), 1.0);
  EXPECT_EQ(rank1_accuracy(to_matrix(f), LabelIndex({"A", "A"}, {"A", "B"})), 0.5);
  EXPECT_EQ(rank1_accuracy(to_matrix({{0.5, 0.5}}), LabelIndex({"A"}, {"B", "A"})), 0.0);
}

TEST(Rank1, UnmatedExcludedAndAllUnmatedIsError) {
  const oracle::Rows f = {{0.9, 0.1}, {0.2, 0.8}};
  EXPECT_EQ(rank1_accuracy(to_matrix(f), LabelIndex({"A", "Z"}, {"A", "B"})), 1.0);
  EXPECT_THROW(rank1_accuracy(to_matrix(f), LabelIndex({"Y", "Z"}, {"A", "B"})), DomainError);
}

TEST(AveragePrecision, KnownCases) {
  const std::vector<int> g = {1, 0, 1};
  EXPECT_NEAR(*average_precision(std::vector<double>{0.9, 0.8, 0.7}, g, 1), (1.0 + 2.0 / 3.0) / 2, 1e-15);
  EXPECT_EQ(*average_precision(std::vector<double>{0.9, 0.1, 0.7}, g, 1), 1.0);
  EXPECT_FALSE(average_precision(std::vector<double>{0.9, 0.1, 0.7}, g, 5));
  // Query without mates is left out of the mean.
  const auto f = to_matrix({{0.9, 0.8, 0.7}, {0.1, 0.2, 0.3}});
  EXPECT_NEAR(mean_average_precision(f, LabelIndex({"A", "Q"}, {"A", "B", "A"})), (1.0 + 2.0 / 3.0) / 2, 1e-15);
}

TEST(Threshold, ScanSemantics) {
  std::vector<double> impostors = {0.7, 0.6, 0.5, 0.4, 0.3, 0.3, 0.2, 0.1, 0.05, 0.0};
  EXPECT_EQ(threshold_at_rate(impostors, 0.10), 0.6);
  EXPECT_EQ(threshold_at_rate(impostors, 0.0), 0.7);
  EXPECT_EQ(threshold_at_rate(impostors, 1.0), -std::numeric_limits<double>::infinity());
  EXPECT_THROW(threshold_at_rate({}, 0.1), DomainError);
}

TEST(Tar, WorkedExample) {
  // One query per match score plus ten impostor pairs topped by 0.7, 0.6, 0.5.
  oracle::Rows f;
  std::vector<std::string> q;
  const std::vector<std::string> g = {"M", "N"};
  const std::vector<double> match = {0.9, 0.8, 0.2};
  const std::vector<double> nonmatch = {0.7, 0.6, 0.5, 0.4, 0.3, 0.3, 0.2, 0.1, 0.05, 0.0};
  for (std::size_t i = 0; i < 10; ++i) {
    f.push_back({i < 3 ? match[i] : 0.0, nonmatch[i]});
    q.push_back(i < 3 ? "M" : "X");
  }
  // Queries 3..9 (label X) add seven zero impostors in column 0; 17
  // impostors at far 0.1 still allow exactly one above the threshold.
  const auto c = make_case(f, q, g);
  const double tar = tar_at_far(c.f, c.labels, 0.10);
  EXPECT_EQ(tar, oracle::tar(f, q, g, 0.10));
  EXPECT_NEAR(tar, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(tar_at_far(c.f, c.labels, 1.0), 1.0);
}

TEST(Tar, FullySeparated) {
  const auto c = make_case({{0.9, 0.1}, {0.2, 0.95}}, {"A", "B"}, {"A", "B"});
  for (double far : {0.0, 0.001, 0.5, 1.0}) EXPECT_EQ(tar_at_far(c.f, c.labels, far), 1.0);
}

TEST(NonMatedTrials, CountsAndDeterminism) {
  std::vector<std::string> g, q;
  for (int s = 0; s < 10; ++s)
    for (int r = 0; r < 2; ++r) {
      g.push_back("S" + std::to_string(s));
      q.push_back("S" + std::to_string(s));
    }
  const LabelIndex labels(q, g);
  const auto trials = build_nonmated_trials(labels, 0.2, 10, 7);
  ASSERT_EQ(trials.size(), 10u);
  std::set<std::vector<std::string>> distinct;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const auto& t = trials[i];
    EXPECT_EQ(t.seed, 7 + i);
    EXPECT_EQ(t.nonmated_subjects.size(), 2u);
    distinct.insert(t.nonmated_subjects);
    for (std::size_t gi : t.gallery_kept)
      EXPECT_FALSE(std::binary_search(t.nonmated_subjects.begin(), t.nonmated_subjects.end(), g[gi]));
    EXPECT_EQ(t.gallery_kept.size(), 16u);
    EXPECT_EQ(t.nonmated_probes.size(), 4u);
  }
  EXPECT_GT(distinct.size(), 1u);
  EXPECT_EQ(trials, build_nonmated_trials(labels, 0.2, 10, 7));
  EXPECT_NE(trials, build_nonmated_trials(labels, 0.2, 10, 8));
  EXPECT_THROW(build_nonmated_trials(labels, 0.01, 10, 0), DomainError);
  EXPECT_THROW(build_nonmated_trials(labels, 1.0, 10, 0), DomainError);
}

TEST(Fnir, WorkedExample) {
  // Gallery {A, B, W}; trial withdraws W. Probes P1, P2 are mated to A and
  // B; N1, N2 are W's probes and raise alarms 0.4 and 0.6.
  const std::vector<std::string> g = {"A", "B", "W"};
  const std::vector<std::string> q = {"A", "B", "W", "W"};
  const oracle::Rows f = {{0.7, 0.1, 0.9}, {0.1, 0.3, 0.0}, {0.4, 0.2, 0.95}, {0.1, 0.6, 0.99}};
  const LabelIndex labels(q, g);
  NonMatedTrial trial;
  trial.nonmated_subjects = {"W"};
  trial.gallery_kept = {0, 1};
  trial.mated_probes = {0, 1};
  trial.nonmated_probes = {2, 3};
  EXPECT_EQ(fnir_at_fpir(to_matrix(f), labels, trial, 0.5), 0.5);
  EXPECT_EQ(oracle::fnir(f, q, g, {"W"}, 0.5), 0.5);
}

TEST(Fnir, PerfectAndWrongTop1) {
  const std::vector<std::string> g = {"A", "B", "W"};
  const std::vector<std::string> q = {"A", "B", "W"};
  NonMatedTrial trial{0, {"W"}, {0, 1}, {0, 1}, {2}};
  const LabelIndex labels(q, g);
  EXPECT_EQ(fnir_at_fpir(to_matrix({{0.9, 0.1, 0}, {0.1, 0.9, 0}, {0.2, 0.3, 1}}), labels, trial, 0.5), 0.0);
  // Probe 1's top-1 is A even though its mate score beats every alarm.
  EXPECT_EQ(fnir_at_fpir(to_matrix({{0.9, 0.1, 0}, {0.95, 0.9, 0}, {0.2, 0.3, 1}}), labels, trial, 1.0), 0.5);
}

TEST(Oracles, RandomInstancesExact) {
  Rng rng(2024);
  int checked = 0;
  for (int t = 0; t < 150; ++t) {
    const auto in = oracle::random_instance(rng);
    const Matrix f = to_matrix(in.f);
    const LabelIndex labels(in.q, in.g);
    EXPECT_EQ(rank1_accuracy(f, labels), oracle::rank1(in.f, in.q, in.g));
    EXPECT_EQ(mean_average_precision(f, labels), oracle::map(in.f, in.q, in.g));
    for (double far : {0.0, 0.01, 0.1, 0.5}) EXPECT_EQ(tar_at_far(f, labels, far), oracle::tar(in.f, in.q, in.g, far));
    const auto trials = build_nonmated_trials(labels, 0.34, 3, static_cast<std::uint64_t>(t));
    for (const auto& trial : trials) {
      if (trial.mated_probes.empty() || trial.nonmated_probes.empty()) continue;
      const std::set<std::string> withdrawn(trial.nonmated_subjects.begin(), trial.nonmated_subjects.end());
      for (double fpir : {0.0, 0.1, 0.5})
        EXPECT_EQ(fnir_at_fpir(f, labels, trial, fpir), oracle::fnir(in.f, in.q, in.g, withdrawn, fpir));
      ++checked;
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(Monotonicity, TarAndFnir) {
  Rng rng(99);
  const std::vector<double> rates = {0.0, 0.001, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0};
  for (int t = 0; t < 50; ++t) {
    const auto in = oracle::random_instance(rng);
    const Matrix f = to_matrix(in.f);
    const LabelIndex labels(in.q, in.g);
    for (std::size_t i = 1; i < rates.size(); ++i)
      EXPECT_LE(tar_at_far(f, labels, rates[i - 1]), tar_at_far(f, labels, rates[i]));
    for (const auto& trial : build_nonmated_trials(labels, 0.34, 3, 1)) {
      if (trial.mated_probes.empty() || trial.nonmated_probes.empty()) continue;
      for (std::size_t i = 1; i < rates.size(); ++i)
        EXPECT_GE(fnir_at_fpir(f, labels, trial, rates[i - 1]), fnir_at_fpir(f, labels, trial, rates[i]));
    }
  }
}

TEST(Report, PerfectScoresGiveThree) {
  std::vector<std::string> q, g;
  oracle::Rows f;
  for (int s = 0; s < 10; ++s) {
    g.push_back("S" + std::to_string(s));
    q.push_back("S" + std::to_string(s));
  }
  for (int i = 0; i < 10; ++i) {
    oracle::Row r(10, 0.0);
    r[i] = 1.0;
    f.push_back(r);
  }
  const auto rep = evaluate_report(to_matrix(f), LabelIndex(q, g), MetricTargets{});
  EXPECT_EQ(rep.rank1, 1.0);
  EXPECT_EQ(rep.map, 1.0);
  EXPECT_EQ(rep.tar, 1.0);
  EXPECT_EQ(rep.fnir_mean, 0.0);
  EXPECT_EQ(rep.overall, 3.0);
  EXPECT_EQ(rep.fnir_per_trial.size(), 10u);
}

TEST(Report, AntiPerfectNearMinusOne) {
  std::vector<std::string> q, g;
  oracle::Rows f;
  const int n = 20;
  for (int s = 0; s < n; ++s) {
    g.push_back("S" + std::to_string(s));
    q.push_back("S" + std::to_string(s));
  }
  for (int i = 0; i < n; ++i) {
    oracle::Row r(n, 1.0);
    r[i] = 0.0;
    f.push_back(r);
  }
  const auto rep = evaluate_report(to_matrix(f), LabelIndex(q, g), MetricTargets{});
  EXPECT_EQ(rep.rank1, 0.0);
  EXPECT_EQ(rep.tar, 0.0);
  EXPECT_EQ(rep.fnir_mean, 1.0);
  EXPECT_NEAR(rep.map, 1.0 / n, 1e-15);
  EXPECT_NEAR(rep.overall, -1.0 + 1.0 / n, 1e-15);
}

TEST(Report, StableAcrossReruns) {
  Rng rng(1);
  const auto in = oracle::random_instance(rng, 30, 30);
  const Matrix f = to_matrix(in.f);
  const LabelIndex labels(in.q, in.g);
  MetricTargets targets;
  targets.trial_fraction = 0.34;
  const auto a = evaluate_report(f, labels, targets);
  const auto b = evaluate_report(f, labels, targets);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.overall, a.rank1 + a.map + a.tar - a.fnir_mean);
}
