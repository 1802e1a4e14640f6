#pragma once

// Identification and verification metrics over a fused |Q|x|G| matrix:
// Rank-1, mAP, TAR@FAR, and FNIR@FPIR over seeded non-mated trials.
//
// Ranking convention everywhere: descending score, ties broken by the lower
// gallery index. Thresholds are the smallest observed impostor value t with
// |{x > t}| / n <= target, so results are exact and reproducible.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "scorefuse/core.hpp"
#include "scorefuse/scorespace.hpp"

namespace scorefuse {

// Subject labels encoded as dense integers. Ids are assigned in sorted
// order of the distinct gallery labels; query-only subjects follow.
class LabelIndex {
 public:
  LabelIndex(std::span<const std::string> query_labels, std::span<const std::string> gallery_labels) {
    std::vector<std::string> gallery_subjects(gallery_labels.begin(), gallery_labels.end());
    std::sort(gallery_subjects.begin(), gallery_subjects.end());
    gallery_subjects.erase(std::unique(gallery_subjects.begin(), gallery_subjects.end()), gallery_subjects.end());
    std::unordered_map<std::string, int> ids;
    for (const auto& s : gallery_subjects) ids.emplace(s, static_cast<int>(ids.size()));
    num_gallery_subjects_ = ids.size();
    subjects_ = gallery_subjects;
    auto id_of = [&](const std::string& s) {
      auto [it, inserted] = ids.emplace(s, static_cast<int>(ids.size()));
      if (inserted) subjects_.push_back(s);
      return it->second;
    };
    gallery_.reserve(gallery_labels.size());
    for (const auto& s : gallery_labels) gallery_.push_back(id_of(s));
    query_.reserve(query_labels.size());
    for (const auto& s : query_labels) query_.push_back(id_of(s));
  }

  LabelIndex(const std::vector<std::string>& query_labels, const std::vector<std::string>& gallery_labels)
      : LabelIndex(std::span<const std::string>(query_labels), std::span<const std::string>(gallery_labels)) {}

  explicit LabelIndex(const Dataset& d) : LabelIndex(d.query_labels, d.gallery_labels) {}

  std::span<const int> query() const noexcept { return query_; }
  std::span<const int> gallery() const noexcept { return gallery_; }
  std::size_t num_queries() const noexcept { return query_.size(); }
  std::size_t num_gallery() const noexcept { return gallery_.size(); }
  // Subjects with at least one gallery entry; their ids are 0..n-1.
  std::size_t num_gallery_subjects() const noexcept { return num_gallery_subjects_; }
  const std::string& subject(int id) const { return subjects_.at(static_cast<std::size_t>(id)); }

 private:
  std::vector<int> query_;
  std::vector<int> gallery_;
  std::vector<std::string> subjects_;
  std::size_t num_gallery_subjects_ = 0;
};

namespace detail {

inline void check_shape(const Matrix& f, const LabelIndex& labels) {
  if (f.rows() != labels.num_queries() || f.cols() != labels.num_gallery())
    throw ContractError("metrics: score matrix shape does not match labels");
}

inline bool has_mate(const LabelIndex& labels, std::size_t q) {
  const int id = labels.query()[q];
  const auto g = labels.gallery();
  return std::find(g.begin(), g.end(), id) != g.end();
}

inline std::size_t argmax_lowest(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t g = 1; g < row.size(); ++g)
    if (row[g] > row[best]) best = g;
  return best;
}

}  // namespace detail

// Gallery indices by descending score, ties to the lower index.
inline std::vector<std::size_t> ranked_gallery(std::span<const double> row) {
  std::vector<std::size_t> order(row.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  return order;
}

// Smallest observed value t with |{v > t}| / |values| <= rate. rate >= 1
// yields -inf (accept everything).
inline double threshold_at_rate(std::vector<double> values, double rate) {
  if (values.empty()) throw DomainError("threshold_at_rate: no impostor scores");
  if (rate >= 1.0) return -std::numeric_limits<double>::infinity();
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  // count above values[i] is nonincreasing in i; find the first qualifying.
  std::size_t i = 0;
  while (i < values.size()) {
    const auto upper = std::upper_bound(values.begin() + static_cast<std::ptrdiff_t>(i), values.end(), values[i]);
    const auto above = static_cast<double>(values.end() - upper);
    if (above / n <= rate) return values[i];
    i = static_cast<std::size_t>(upper - values.begin());
  }
  return values.back();
}

// Fraction of mated queries whose top-ranked gallery entry is a mate.
inline double rank1_accuracy(const Matrix& f, const LabelIndex& labels) {
  detail::check_shape(f, labels);
  std::size_t mated = 0;
  std::size_t hits = 0;
  for (std::size_t q = 0; q < f.rows(); ++q) {
    if (!detail::has_mate(labels, q)) continue;
    ++mated;
    if (labels.gallery()[detail::argmax_lowest(f.row(q))] == labels.query()[q]) ++hits;
  }
  if (mated == 0) throw DomainError("rank1_accuracy: no query has a mate in the gallery");
  return static_cast<double>(hits) / static_cast<double>(mated);
}

// Average precision of one ranked row; nullopt when the query has no mate.
inline std::optional<double> average_precision(std::span<const double> row, std::span<const int> gallery,
                                               int subject) {
  const auto order = ranked_gallery(row);
  std::size_t relevant = 0;
  double sum = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (gallery[order[r]] != subject) continue;
    ++relevant;
    sum += static_cast<double>(relevant) / static_cast<double>(r + 1);
  }
  if (relevant == 0) return std::nullopt;
  return sum / static_cast<double>(relevant);
}

inline double mean_average_precision(const Matrix& f, const LabelIndex& labels) {
  detail::check_shape(f, labels);
  double sum = 0.0;
  std::size_t mated = 0;
  for (std::size_t q = 0; q < f.rows(); ++q) {
    if (auto ap = average_precision(f.row(q), labels.gallery(), labels.query()[q])) {
      sum += *ap;
      ++mated;
    }
  }
  if (mated == 0) throw DomainError("mean_average_precision: no query has a mate in the gallery");
  return sum / static_cast<double>(mated);
}

// Verification over all (q, g) pairs pooled into match / non-match sets.
inline double tar_at_far(const Matrix& f, const LabelIndex& labels, double far_target) {
  detail::check_shape(f, labels);
  std::vector<double> match;
  std::vector<double> nonmatch;
  for (std::size_t q = 0; q < f.rows(); ++q) {
    const int id = labels.query()[q];
    const auto row = f.row(q);
    for (std::size_t g = 0; g < row.size(); ++g)
      (labels.gallery()[g] == id ? match : nonmatch).push_back(row[g]);
  }
  if (match.empty()) throw DomainError("tar_at_far: no match pairs");
  if (nonmatch.empty()) throw DomainError("tar_at_far: no non-match pairs");
  const double t = threshold_at_rate(std::move(nonmatch), far_target);
  const auto accepted = std::count_if(match.begin(), match.end(), [&](double x) { return x > t; });
  return static_cast<double>(accepted) / static_cast<double>(match.size());
}

// One open-set trial: a subset of gallery subjects is withdrawn from the
// gallery and their probes become non-mated.
struct NonMatedTrial {
  std::uint64_t seed = 0;
  std::vector<std::string> nonmated_subjects;  // sorted
  std::vector<std::size_t> gallery_kept;       // ascending gallery indices
  std::vector<std::size_t> mated_probes;       // queries with a mate in the reduced gallery
  std::vector<std::size_t> nonmated_probes;    // queries without one

  friend bool operator==(const NonMatedTrial&, const NonMatedTrial&) = default;
};

// Trial i withdraws round(fraction * #gallery subjects) subjects, sampled
// without replacement with seed base_seed + i.
inline std::vector<NonMatedTrial> build_nonmated_trials(const LabelIndex& labels, double fraction,
                                                        std::size_t n_trials, std::uint64_t base_seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw DomainError("build_nonmated_trials: fraction must lie in (0, 1)");
  const std::size_t n_subjects = labels.num_gallery_subjects();
  const auto n_withdrawn = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n_subjects)));
  if (n_withdrawn == 0)
    throw DomainError("build_nonmated_trials: fraction selects no subject out of " + std::to_string(n_subjects));
  if (n_withdrawn >= n_subjects)
    throw DomainError("build_nonmated_trials: fraction selects every subject");

  std::vector<NonMatedTrial> trials;
  trials.reserve(n_trials);
  for (std::size_t i = 0; i < n_trials; ++i) {
    NonMatedTrial trial;
    trial.seed = base_seed + i;
    Rng rng(trial.seed);
    std::vector<int> pool(n_subjects);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t j = 0; j < n_withdrawn; ++j) std::swap(pool[j], pool[j + rng.below(n_subjects - j)]);
    std::vector<bool> withdrawn(n_subjects, false);
    for (std::size_t j = 0; j < n_withdrawn; ++j) {
      withdrawn[static_cast<std::size_t>(pool[j])] = true;
      trial.nonmated_subjects.push_back(labels.subject(pool[j]));
    }
    std::sort(trial.nonmated_subjects.begin(), trial.nonmated_subjects.end());

    std::vector<bool> present(labels.num_gallery_subjects(), false);
    for (std::size_t g = 0; g < labels.num_gallery(); ++g) {
      const auto id = static_cast<std::size_t>(labels.gallery()[g]);
      if (withdrawn[id]) continue;
      trial.gallery_kept.push_back(g);
      present[id] = true;
    }
    for (std::size_t q = 0; q < labels.num_queries(); ++q) {
      const auto id = static_cast<std::size_t>(labels.query()[q]);
      const bool mated = id < present.size() && present[id];
      (mated ? trial.mated_probes : trial.nonmated_probes).push_back(q);
    }
    trials.push_back(std::move(trial));
  }
  return trials;
}

// False-negative identification rate at the threshold fixed by the
// non-mated probes' best (alarm) scores. A mated probe is a miss when its
// rank-1 identity in the reduced gallery is wrong or its best mate score
// does not exceed the threshold.
inline double fnir_at_fpir(const Matrix& f, const LabelIndex& labels, const NonMatedTrial& trial,
                           double fpir_target) {
  detail::check_shape(f, labels);
  if (trial.mated_probes.empty() || trial.nonmated_probes.empty())
    throw DomainError("fnir_at_fpir: trial needs mated and non-mated probes");
  if (trial.gallery_kept.empty()) throw DomainError("fnir_at_fpir: reduced gallery is empty");

  std::vector<double> alarms;
  alarms.reserve(trial.nonmated_probes.size());
  for (std::size_t q : trial.nonmated_probes) {
    const auto row = f.row(q);
    double best = row[trial.gallery_kept.front()];
    for (std::size_t g : trial.gallery_kept) best = std::max(best, row[g]);
    alarms.push_back(best);
  }
  const double t = threshold_at_rate(std::move(alarms), fpir_target);

  std::size_t misses = 0;
  for (std::size_t q : trial.mated_probes) {
    const auto row = f.row(q);
    const int id = labels.query()[q];
    std::size_t top = trial.gallery_kept.front();
    double best_mate = -std::numeric_limits<double>::infinity();
    for (std::size_t g : trial.gallery_kept) {
      if (row[g] > row[top]) top = g;
      if (labels.gallery()[g] == id) best_mate = std::max(best_mate, row[g]);
    }
    if (labels.gallery()[top] != id || !(best_mate > t)) ++misses;
  }
  return static_cast<double>(misses) / static_cast<double>(trial.mated_probes.size());
}

struct MetricTargets {
  double far = 0.01;
  double fpir = 0.01;
  double trial_fraction = 0.2;
  std::size_t n_trials = 10;
  std::uint64_t base_seed = 0;
};

struct MetricReport {
  double rank1 = 0.0;
  double map = 0.0;
  double tar = 0.0;
  double far_target = 0.0;
  double fnir_mean = 0.0;
  double fnir_std = 0.0;
  double fpir_target = 0.0;
  std::vector<double> fnir_per_trial;
  double overall = 0.0;

  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

inline void to_json(nlohmann::ordered_json& j, const MetricReport& r) {
  j = {{"rank1", r.rank1},         {"map", r.map},           {"tar", r.tar},
       {"far_target", r.far_target}, {"fnir_mean", r.fnir_mean}, {"fnir_std", r.fnir_std},
       {"fpir_target", r.fpir_target}, {"fnir_per_trial", r.fnir_per_trial}, {"overall", r.overall}};
}

// overall = rank1 + map + tar - mean FNIR, all as fractions. FNIR spread
// is the population std over trials, aggregated in trial order.
inline MetricReport evaluate_report(const Matrix& f, const LabelIndex& labels, double far_target,
                                    double fpir_target, std::span<const NonMatedTrial> trials) {
  if (trials.empty()) throw DomainError("evaluate_report: no non-mated trials");
  MetricReport r;
  r.far_target = far_target;
  r.fpir_target = fpir_target;
  r.rank1 = rank1_accuracy(f, labels);
  r.map = mean_average_precision(f, labels);
  r.tar = tar_at_far(f, labels, far_target);
  for (const auto& trial : trials) r.fnir_per_trial.push_back(fnir_at_fpir(f, labels, trial, fpir_target));
  const double n = static_cast<double>(trials.size());
  for (double x : r.fnir_per_trial) r.fnir_mean += x;
  r.fnir_mean /= n;
  double var = 0.0;
  for (double x : r.fnir_per_trial) var += (x - r.fnir_mean) * (x - r.fnir_mean);
  r.fnir_std = std::sqrt(var / n);
  r.overall = r.rank1 + r.map + r.tar - r.fnir_mean;
  return r;
}

// Builds the trials from `targets` and evaluates.
inline MetricReport evaluate_report(const Matrix& f, const LabelIndex& labels, const MetricTargets& targets) {
  const auto trials = build_nonmated_trials(labels, targets.trial_fraction, targets.n_trials, targets.base_seed);
  return evaluate_report(f, labels, targets.far, targets.fpir, trials);
}

}  // namespace scorefuse
