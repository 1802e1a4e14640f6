#include <gtest/gtest.h>

#include "scorefuse/fusion.hpp"
#include "support.hpp"

using namespace scorefuse;
using testing_support::make_dataset;
using testing_support::to_rows;

namespace {

using Span = std::span<const double>;

void expect_near(const std::vector<double>& got, const std::vector<double>& want, double tol) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "index " << i;
}

const std::vector<double> sA = {0.9, 0.1, 0.5};
const std::vector<double> sB = {0.2, 0.8, 0.5};

}  // namespace

TEST(ZScore, KnownVectors) {
  expect_near(zscore_normalize(std::vector<double>{0, 4}), {-1, 1}, 1e-15);
  expect_near(zscore_normalize(std::vector<double>{5, 5, 5}), {0, 0, 0}, 0);
  const double r = std::sqrt(1.5);
  expect_near(zscore_normalize(std::vector<double>{1, 2, 3}), {-r, 0, r}, 1e-12);
  EXPECT_THROW(zscore_normalize(std::vector<double>{}), DomainError);
}

TEST(ZScore, PropertiesOnRandomVectors) {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> s(2 + rng.below(40));
    for (double& x : s) x = rng.uniform() * 10 - 5;
    const auto z = zscore_normalize(s);
    double mean = 0, var = 0;
    for (double x : z) mean += x;
    mean /= static_cast<double>(z.size());
    for (double x : z) var += (x - mean) * (x - mean);
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var / static_cast<double>(z.size()), 1.0, 1e-12);
  }
}

TEST(Contribution, WorkedExample) {
  const auto act = act_intermediates(sA, 1);
  EXPECT_NEAR(act.mu, 0.5, 1e-15);
  EXPECT_NEAR(act.sigma, std::sqrt(0.32 / 3), 1e-15);
  EXPECT_EQ(act.topk, (std::vector<std::size_t>{0}));
  expect_near(act.contribution, {std::sqrt(1.5) * 0.9, 0, 0}, 1e-12);
  expect_near(contribution_vector(sA, 1), {1.1023, 0, 0}, 1e-4);
}

TEST(Contribution, EmptyTopKAndConstantVectors) {
  expect_near(contribution_vector(sA, 0), {0, 0, 0}, 0);
  expect_near(contribution_vector(std::vector<double>{0.4, 0.4, 0.4, 0.4}, 4), {0, 0, 0, 0}, 0);
}

TEST(TopK, TiesGoToLowerIndex) {
  const std::vector<double> s = {0.5, 0.9, 0.5, 0.9, 0.1};
  EXPECT_EQ(top_k_indices(s, 3), (std::vector<std::size_t>{1, 3, 0}));
  EXPECT_EQ(top_k_indices(s, 99).size(), 5u);
}

TEST(ActFuseQuery, SingleModelZeroK) {
  const std::vector<Span> rows = {sA};
  expect_near(act_fuse_query(rows, 0, 0), {0.45, 0.05, 0.25}, 1e-15);
}

TEST(ActFuseQuery, TwoModelWorkedExample) {
  const std::vector<Span> rows = {sA, sB};
  const auto fused = act_fuse_query(rows, 0, 1);
  expect_near(fused, {0.6674, 0.3599, 0.1667}, 1e-4);
  expect_near(fused, oracle::act({sA, sB}, sA, 1), 1e-12);
}

TEST(ActFuseQuery, ConstantSingleModelAnyK) {
  const std::vector<double> c(6, 0.37);
  const std::vector<Span> rows = {c};
  for (std::size_t k : {0, 1, 3, 6, 50}) expect_near(act_fuse_query(rows, 0, k), std::vector<double>(6, 0.185), 1e-15);
}

TEST(ActFuseQuery, AnchorOutsideSelection) {
  const std::vector<Span> rows = {sA, sB};
  EXPECT_THROW(act_fuse_query(rows, 2, 1), ContractError);
  EXPECT_THROW(act_fuse_query(std::vector<Span>{}, 0, 1), ContractError);
}

TEST(ActFuseQuery, FullKSingleModelClosedForm) {
  Rng rng(9);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> s(1 + rng.below(30));
    for (double& x : s) x = rng.uniform();
    const auto z = zscore_normalize(s);
    const std::vector<Span> rows = {s};
    const auto fused = act_fuse_query(rows, 0, s.size());
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(fused[i], (s[i] + z[i] * s[i]) / 2, 1e-12);
  }
}

TEST(ActFuseQuery, MatchesOracleOnRandomSelections) {
  Rng rng(21);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 1 + rng.below(30);
    const std::size_t m = 1 + rng.below(4);
    std::vector<std::vector<double>> s(m, std::vector<double>(n));
    for (auto& v : s)
      for (double& x : v) x = std::round(rng.uniform() * 20) / 20;
    const std::size_t anchor = rng.below(m);
    const std::size_t k = rng.below(n + 2);
    std::vector<Span> rows(s.begin(), s.end());
    expect_near(act_fuse_query(rows, anchor, k), oracle::act(s, s[anchor], k), 1e-12);
  }
}

TEST(SurrogateAnchor, SingleModelEqualsAct) {
  const std::vector<Span> rows = {sA};
  for (std::size_t k : {0, 1, 3}) expect_near(surrogate_anchor_fuse_query(rows, k), act_fuse_query(rows, 0, k), 0);
}

TEST(SurrogateAnchor, IdenticalModelsEqualActOnEither) {
  const std::vector<Span> rows = {sB, sB};
  expect_near(surrogate_anchor_fuse_query(rows, 2), act_fuse_query(rows, 0, 2), 1e-15);
  expect_near(surrogate_anchor_fuse_query(rows, 2), act_fuse_query(rows, 1, 2), 1e-15);
}

TEST(SurrogateAnchor, WorkedExample) {
  const std::vector<Span> rows = {sA, sB};
  expect_near(surrogate_anchor_fuse_query(rows, 1), oracle::act({sA, sB}, {0.55, 0.45, 0.5}, 1), 1e-12);
}

TEST(ActFuseDataset, RowConsistency) {
  const auto d = make_dataset({{sA, sB}, {sB, sA}}, {"x", "y"}, {"x", "y", "z"});
  const auto all = SelectionMask::uniform(2, 2, {{0, 1}, 0});
  const auto f = act_fuse_dataset(d, all, 1);
  for (std::size_t q = 0; q < 2; ++q) {
    const std::vector<Span> rows = {d.scores[0].row(q), d.scores[1].row(q)};
    const auto expected = act_fuse_query(rows, 0, 1);
    EXPECT_EQ(std::vector<double>(f.row(q).begin(), f.row(q).end()), expected);
  }
}

TEST(ActFuseDataset, OneModelPerRow) {
  const auto d = make_dataset({{sA, sB}, {sB, sA}}, {"x", "y"}, {"x", "y", "z"});
  SelectionMask mask(2, 2);
  mask.set_anchor(0, 1);
  mask.set_anchor(1, 0);
  const auto f = act_fuse_dataset(d, mask, 2);
  for (std::size_t q = 0; q < 2; ++q) {
    const std::size_t m = mask.anchor(q);
    const auto s = d.scores[m].row(q);
    const auto c = contribution_vector(s, 2);
    for (std::size_t g = 0; g < 3; ++g) EXPECT_NEAR(f(q, g), (s[g] + c[g]) / 2, 1e-15);
  }
}

TEST(ActFuseDataset, RejectsInvalidMask) {
  const auto d = make_dataset({{sA, sB}, {sB, sA}}, {"x", "y"}, {"x", "y", "z"});
  SelectionMask mask(2, 2);
  mask.set_anchor(0, 1);
  mask.set(1, 0, false);  // row 1: nothing selected
  EXPECT_THROW(act_fuse_dataset(d, mask, 1), ContractError);
  EXPECT_THROW(act_fuse_dataset(d, SelectionMask(3, 2), 1), ContractError);
}

TEST(ActFuseDataset, AnchorOnInformativeModelWidensMargin) {
  // Separable instance: model 0 ranks the mate clearly, models 1 and 2 are noisy.
  Rng rng(4);
  const std::size_t nq = 20, ng = 20;
  std::vector<oracle::Rows> models(3, oracle::Rows(nq, oracle::Row(ng)));
  std::vector<std::string> q, g;
  for (std::size_t i = 0; i < ng; ++i) g.push_back("s" + std::to_string(i));
  for (std::size_t i = 0; i < nq; ++i) q.push_back("s" + std::to_string(i));
  for (std::size_t i = 0; i < nq; ++i)
    for (std::size_t j = 0; j < ng; ++j) {
      const bool match = i == j;
      models[0][i][j] = match ? 0.8 + 0.1 * rng.uniform() : 0.2 + 0.2 * rng.uniform();
      models[1][i][j] = match ? 0.5 + 0.2 * rng.uniform() : 0.3 + 0.3 * rng.uniform();
      models[2][i][j] = match ? 0.4 + 0.3 * rng.uniform() : 0.3 + 0.3 * rng.uniform();
    }
  const auto d = make_dataset(models, q, g);
  const auto fused = act_fuse_dataset(d, SelectionMask::uniform(nq, 3, {{0, 1, 2}, 0}), 1);
  auto margin = [&](auto value) {
    double match = 0, nonmatch = 0;
    for (std::size_t i = 0; i < nq; ++i)
      for (std::size_t j = 0; j < ng; ++j) (i == j ? match : nonmatch) += value(i, j);
    return match / nq - nonmatch / (nq * (ng - 1));
  };
  const double act_margin = margin([&](std::size_t i, std::size_t j) { return fused(i, j); });
  const double avg_margin = margin([&](std::size_t i, std::size_t j) {
    return (models[0][i][j] + models[1][i][j] + models[2][i][j]) / 3;
  });
  EXPECT_GT(act_margin, avg_margin);
}

TEST(Baselines, KnownValues) {
  const auto d = make_dataset({{{0.2}}, {{0.8}}}, {"x"}, {"x"});
  const auto both = SelectionMask::uniform(1, 2, {{0, 1}, 0});
  EXPECT_EQ(baseline_fuse(d, both, FusionMethod::min)(0, 0), 0.2);
  EXPECT_EQ(baseline_fuse(d, both, FusionMethod::max)(0, 0), 0.8);

  const auto d2 = make_dataset({{{1, 3}}, {{4, 0}}}, {"x"}, {"x", "y"});
  const auto f = baseline_fuse(d2, SelectionMask::uniform(1, 2, {{0, 1}, 0}), FusionMethod::minmax);
  EXPECT_DOUBLE_EQ(f(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(f(0, 1), 0.5);

  const auto d3 = make_dataset({{sA}, {sB}}, {"x"}, {"x", "y", "z"});
  const auto z = baseline_fuse(d3, SelectionMask::uniform(1, 2, {{1}, 1}), FusionMethod::zscore);
  expect_near(std::vector<double>(z.row(0).begin(), z.row(0).end()), zscore_normalize(sB), 0);

  const auto w = baseline_fuse(d3, SelectionMask::uniform(1, 2, {{0, 1}, 0}), FusionMethod::weighted_sum,
                               std::vector<double>{3, 1});
  expect_near(std::vector<double>(w.row(0).begin(), w.row(0).end()),
              {(3 * 0.9 + 0.2) / 4, (3 * 0.1 + 0.8) / 4, 0.5}, 1e-15);
  EXPECT_THROW(baseline_fuse(d3, SelectionMask::uniform(1, 2, {{0, 1}, 0}), FusionMethod::weighted_sum),
               ContractError);
  EXPECT_THROW(baseline_fuse(d3, SelectionMask::uniform(1, 2, {{0, 1}, 0}), FusionMethod::weighted_sum,
                             std::vector<double>{1}),
               ContractError);
}

TEST(Baselines, IgnoreAnchorAndStayInRange) {
  Rng rng(77);
  oracle::Rows a(4, oracle::Row(6)), b(4, oracle::Row(6));
  for (auto* m : {&a, &b})
    for (auto& r : *m)
      for (double& x : r) x = rng.uniform();
  const auto d = make_dataset({a, b}, {"p", "q", "r", "s"}, {"p", "q", "r", "s", "t", "u"});
  for (auto method : {FusionMethod::min, FusionMethod::max, FusionMethod::zscore, FusionMethod::minmax}) {
    const auto f0 = baseline_fuse(d, SelectionMask::uniform(4, 2, {{0, 1}, 0}), method);
    const auto f1 = baseline_fuse(d, SelectionMask::uniform(4, 2, {{0, 1}, 1}), method);
    EXPECT_EQ(f0, f1) << to_string(method);
  }
  const auto lo = baseline_fuse(d, SelectionMask::uniform(4, 2, {{0, 1}, 0}), FusionMethod::min);
  const auto hi = baseline_fuse(d, SelectionMask::uniform(4, 2, {{0, 1}, 0}), FusionMethod::max);
  for (std::size_t i = 0; i < lo.data().size(); ++i) EXPECT_LE(lo.data()[i], hi.data()[i]);
}

TEST(Fuse, DispatchMatchesDirectCalls) {
  const auto d = make_dataset({{sA, sB}, {sB, sA}}, {"x", "y"}, {"x", "y", "z"});
  const auto mask = SelectionMask::uniform(2, 2, {{0, 1}, 1});
  FusionConfig cfg;
  cfg.k = 2;
  EXPECT_EQ(fuse(d, mask, cfg), act_fuse_dataset(d, mask, 2));
  cfg.method = FusionMethod::surrogate_anchor_act;
  EXPECT_EQ(fuse(d, mask, cfg), surrogate_anchor_fuse(d, mask, 2));
  cfg.method = FusionMethod::weighted_sum;
  EXPECT_EQ(fuse(d, mask, cfg), baseline_fuse(d, mask, FusionMethod::weighted_sum, std::vector<double>{1, 1}));
  for (auto m : {FusionMethod::act, FusionMethod::min, FusionMethod::max, FusionMethod::zscore, FusionMethod::minmax,
                 FusionMethod::weighted_sum, FusionMethod::surrogate_anchor_act})
    EXPECT_EQ(parse_fusion_method(to_string(m)), m);
  EXPECT_FALSE(parse_fusion_method("median"));
}

TEST(ConfidenceWeighting, Variants) {
  const auto none = act_intermediates(sA, 2, kDefaultSigmaEpsilon, ConfidenceWeighting::none).contribution;
  expect_near(none, {0.9, 0, 0.5}, 0);
  const auto mm = act_intermediates(sA, 2, kDefaultSigmaEpsilon, ConfidenceWeighting::minmax).contribution;
  expect_near(mm, {0.9, 0, 0.5 * 0.5}, 1e-15);
}
