#pragma once

// Anchor-based confidence top-k fusion and the rule-based baselines.

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "scorefuse/core.hpp"
#include "scorefuse/scorespace.hpp"

namespace scorefuse {

using FusedScores = Matrix;

inline constexpr double kDefaultSigmaEpsilon = 1e-12;

enum class FusionMethod { act, min, max, zscore, minmax, weighted_sum, surrogate_anchor_act };

// How ACT weights the scores of a model's top-k entries. zscore is the
// standard form; the other two exist for ablations.
enum class ConfidenceWeighting { zscore, minmax, none };

inline std::string_view to_string(FusionMethod m) {
  switch (m) {
    case FusionMethod::act: return "act";
    case FusionMethod::min: return "min";
    case FusionMethod::max: return "max";
    case FusionMethod::zscore: return "zscore";
    case FusionMethod::minmax: return "minmax";
    case FusionMethod::weighted_sum: return "weighted_sum";
    case FusionMethod::surrogate_anchor_act: return "surrogate_anchor_act";
  }
  return "?";
}

inline std::optional<FusionMethod> parse_fusion_method(std::string_view s) {
  for (auto m : {FusionMethod::act, FusionMethod::min, FusionMethod::max, FusionMethod::zscore,
                 FusionMethod::minmax, FusionMethod::weighted_sum, FusionMethod::surrogate_anchor_act})
    if (to_string(m) == s) return m;
  return std::nullopt;
}

inline std::string_view to_string(ConfidenceWeighting w) {
  switch (w) {
    case ConfidenceWeighting::zscore: return "zscore";
    case ConfidenceWeighting::minmax: return "minmax";
    case ConfidenceWeighting::none: return "none";
  }
  return "?";
}

inline std::optional<ConfidenceWeighting> parse_confidence_weighting(std::string_view s) {
  for (auto w : {ConfidenceWeighting::zscore, ConfidenceWeighting::minmax, ConfidenceWeighting::none})
    if (to_string(w) == s) return w;
  return std::nullopt;
}

struct FusionConfig {
  FusionMethod method = FusionMethod::act;
  std::size_t k = 10;
  std::optional<std::vector<double>> weights;  // weighted_sum only
  double sigma_epsilon = kDefaultSigmaEpsilon;
  ConfidenceWeighting weighting = ConfidenceWeighting::zscore;
};

// Everything ACT computes for one (model, query) score vector.
struct ActIntermediates {
  double mu = 0.0;
  double sigma = 0.0;
  std::vector<double> z;
  std::vector<std::size_t> topk;  // descending score, ties by ascending index
  std::vector<double> contribution;
};

// (s - mean) / population std; all zeros when std < eps.
inline std::vector<double> zscore_normalize(std::span<const double> s, double eps = kDefaultSigmaEpsilon) {
  if (s.empty()) throw DomainError("zscore_normalize: empty score vector");
  const double n = static_cast<double>(s.size());
  const double mu = std::accumulate(s.begin(), s.end(), 0.0) / n;
  double var = 0.0;
  for (double x : s) var += (x - mu) * (x - mu);
  const double sigma = std::sqrt(var / n);
  std::vector<double> z(s.size(), 0.0);
  if (sigma < eps) return z;
  for (std::size_t i = 0; i < s.size(); ++i) z[i] = (s[i] - mu) / sigma;
  return z;
}

// (s - min) / (max - min); all zeros when max == min.
inline std::vector<double> minmax_normalize(std::span<const double> s) {
  if (s.empty()) throw DomainError("minmax_normalize: empty score vector");
  const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
  std::vector<double> out(s.size(), 0.0);
  const double range = *hi - *lo;
  if (range <= 0.0) return out;
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = (s[i] - *lo) / range;
  return out;
}

// Indices of the min(k, |s|) highest scores; ties go to the lower index.
inline std::vector<std::size_t> top_k_indices(std::span<const double> s, std::size_t k) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t kk = std::min(k, s.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(kk), idx.end(),
                    [&](std::size_t a, std::size_t b) { return s[a] > s[b] || (s[a] == s[b] && a < b); });
  idx.resize(kk);
  return idx;
}

inline ActIntermediates act_intermediates(std::span<const double> s, std::size_t k,
                                          double eps = kDefaultSigmaEpsilon,
                                          ConfidenceWeighting weighting = ConfidenceWeighting::zscore) {
  if (s.empty()) throw DomainError("act_intermediates: empty score vector");
  ActIntermediates out;
  const double n = static_cast<double>(s.size());
  out.mu = std::accumulate(s.begin(), s.end(), 0.0) / n;
  double var = 0.0;
  for (double x : s) var += (x - out.mu) * (x - out.mu);
  out.sigma = std::sqrt(var / n);
  out.z = zscore_normalize(s, eps);
  out.topk = top_k_indices(s, k);
  out.contribution.assign(s.size(), 0.0);

  std::vector<double> weight;
  switch (weighting) {
    case ConfidenceWeighting::zscore: weight = out.z; break;
    case ConfidenceWeighting::minmax: weight = minmax_normalize(s); break;
    case ConfidenceWeighting::none: weight.assign(s.size(), 1.0); break;
  }
  for (std::size_t g : out.topk) out.contribution[g] = weight[g] * s[g];
  return out;
}

// c[g] = z[g] * s[g] on the top-k entries of s, zero elsewhere.
inline std::vector<double> contribution_vector(std::span<const double> s, std::size_t k,
                                               double eps = kDefaultSigmaEpsilon) {
  return act_intermediates(s, k, eps).contribution;
}

namespace detail {

inline void check_selection(std::span<const std::span<const double>> scores) {
  if (scores.empty()) throw ContractError("fusion: empty model selection");
  const std::size_t n = scores.front().size();
  if (n == 0) throw DomainError("fusion: empty score vector");
  for (const auto& s : scores)
    if (s.size() != n) throw ContractError("fusion: score vectors differ in length");
}

// (anchor_vector + sum of contributions) / (1 + |selection|)
inline void act_combine(std::span<const double> anchor_vector,
                        std::span<const std::span<const double>> scores, std::size_t k, double eps,
                        ConfidenceWeighting weighting, std::span<double> out) {
  std::copy(anchor_vector.begin(), anchor_vector.end(), out.begin());
  for (const auto& s : scores) {
    const auto c = act_intermediates(s, k, eps, weighting).contribution;
    for (std::size_t g = 0; g < out.size(); ++g) out[g] += c[g];
  }
  const double norm = 1.0 + static_cast<double>(scores.size());
  for (double& x : out) x /= norm;
}

}  // namespace detail

// Fuses one query. `scores` holds the selected models' vectors in selection
// order; `anchor_index` indexes into that selection. The anchor's own
// contribution is part of the sum.
inline std::vector<double> act_fuse_query(std::span<const std::span<const double>> scores,
                                          std::size_t anchor_index, std::size_t k,
                                          double eps = kDefaultSigmaEpsilon,
                                          ConfidenceWeighting weighting = ConfidenceWeighting::zscore) {
  detail::check_selection(scores);
  if (anchor_index >= scores.size()) throw ContractError("act_fuse_query: anchor is not in the selection");
  std::vector<double> out(scores.front().size());
  detail::act_combine(scores[anchor_index], scores, k, eps, weighting, out);
  return out;
}

// ACT with the elementwise mean of the selected vectors standing in for the
// anchor.
inline std::vector<double> surrogate_anchor_fuse_query(std::span<const std::span<const double>> scores,
                                                       std::size_t k, double eps = kDefaultSigmaEpsilon) {
  detail::check_selection(scores);
  const std::size_t n = scores.front().size();
  std::vector<double> mean(n, 0.0);
  for (const auto& s : scores)
    for (std::size_t g = 0; g < n; ++g) mean[g] += s[g];
  for (double& x : mean) x /= static_cast<double>(scores.size());
  std::vector<double> out(n);
  detail::act_combine(mean, scores, k, eps, ConfidenceWeighting::zscore, out);
  return out;
}

namespace detail {

inline std::vector<std::span<const double>> gather_rows(const Dataset& d, std::size_t q,
                                                        std::span<const std::size_t> models) {
  std::vector<std::span<const double>> rows;
  rows.reserve(models.size());
  for (std::size_t m : models) rows.push_back(d.scores[m].row(q));
  return rows;
}

inline void check_mask(const Dataset& d, const SelectionMask& mask) {
  if (d.scores.empty()) throw ContractError("fusion: dataset has no models");
  mask.validate_for(d);
}

}  // namespace detail

// Row q = ACT over the models selected in mask row q, anchored at mask.anchor(q).
inline FusedScores act_fuse_dataset(const Dataset& d, const SelectionMask& mask, std::size_t k,
                                    double eps = kDefaultSigmaEpsilon,
                                    ConfidenceWeighting weighting = ConfidenceWeighting::zscore) {
  detail::check_mask(d, mask);
  FusedScores out(d.num_queries(), d.num_gallery());
  for (std::size_t q = 0; q < d.num_queries(); ++q) {
    const auto models = mask.selected_models(q);
    const auto rows = detail::gather_rows(d, q, models);
    const auto anchor_pos = static_cast<std::size_t>(
        std::find(models.begin(), models.end(), mask.anchor(q)) - models.begin());
    detail::act_combine(rows[anchor_pos], rows, k, eps, weighting, out.row(q));
  }
  return out;
}

inline FusedScores surrogate_anchor_fuse(const Dataset& d, const SelectionMask& mask, std::size_t k,
                                         double eps = kDefaultSigmaEpsilon) {
  detail::check_mask(d, mask);
  FusedScores out(d.num_queries(), d.num_gallery());
  for (std::size_t q = 0; q < d.num_queries(); ++q) {
    const auto models = mask.selected_models(q);
    const auto fused = surrogate_anchor_fuse_query(detail::gather_rows(d, q, models), k, eps);
    std::copy(fused.begin(), fused.end(), out.row(q).begin());
  }
  return out;
}

// min / max / zscore / minmax / weighted_sum over the selected models.
// The anchor plays no role here.
inline FusedScores baseline_fuse(const Dataset& d, const SelectionMask& mask, FusionMethod method,
                                 const std::optional<std::vector<double>>& weights = std::nullopt,
                                 double eps = kDefaultSigmaEpsilon) {
  detail::check_mask(d, mask);
  if (method == FusionMethod::weighted_sum) {
    if (!weights) throw ContractError("baseline_fuse: weighted_sum needs weights");
    if (weights->size() != d.num_models())
      throw ContractError("baseline_fuse: weight count != model count");
    for (double w : *weights)
      if (!std::isfinite(w) || w < 0.0) throw ContractError("baseline_fuse: weights must be finite and >= 0");
  }
  const std::size_t ng = d.num_gallery();
  FusedScores out(d.num_queries(), ng);
  for (std::size_t q = 0; q < d.num_queries(); ++q) {
    const auto models = mask.selected_models(q);
    auto row = out.row(q);
    switch (method) {
      case FusionMethod::min:
      case FusionMethod::max: {
        const auto first = d.scores[models.front()].row(q);
        std::copy(first.begin(), first.end(), row.begin());
        for (std::size_t i = 1; i < models.size(); ++i) {
          const auto s = d.scores[models[i]].row(q);
          for (std::size_t g = 0; g < ng; ++g)
            row[g] = method == FusionMethod::min ? std::min(row[g], s[g]) : std::max(row[g], s[g]);
        }
        break;
      }
      case FusionMethod::zscore:
      case FusionMethod::minmax: {
        std::fill(row.begin(), row.end(), 0.0);
        for (std::size_t m : models) {
          const auto s = d.scores[m].row(q);
          const auto n = method == FusionMethod::zscore ? zscore_normalize(s, eps) : minmax_normalize(s);
          for (std::size_t g = 0; g < ng; ++g) row[g] += n[g];
        }
        for (double& x : row) x /= static_cast<double>(models.size());
        break;
      }
      case FusionMethod::weighted_sum: {
        std::fill(row.begin(), row.end(), 0.0);
        double total = 0.0;
        for (std::size_t m : models) {
          const double w = (*weights)[m];
          total += w;
          const auto s = d.scores[m].row(q);
          for (std::size_t g = 0; g < ng; ++g) row[g] += w * s[g];
        }
        if (!(total > 0.0))
          throw ContractError("baseline_fuse: selected weights sum to zero at query " + std::to_string(q));
        for (double& x : row) x /= total;
        break;
      }
      default:
        throw ContractError("baseline_fuse: unsupported method " + std::string(to_string(method)));
    }
  }
  return out;
}

// Dispatches on cfg.method. weighted_sum without weights falls back to uniform.
inline FusedScores fuse(const Dataset& d, const SelectionMask& mask, const FusionConfig& cfg) {
  switch (cfg.method) {
    case FusionMethod::act: return act_fuse_dataset(d, mask, cfg.k, cfg.sigma_epsilon, cfg.weighting);
    case FusionMethod::surrogate_anchor_act: return surrogate_anchor_fuse(d, mask, cfg.k, cfg.sigma_epsilon);
    case FusionMethod::weighted_sum: {
      auto weights = cfg.weights.value_or(std::vector<double>(d.num_models(), 1.0));
      return baseline_fuse(d, mask, cfg.method, weights, cfg.sigma_epsilon);
    }
    default: return baseline_fuse(d, mask, cfg.method, std::nullopt, cfg.sigma_epsilon);
  }
}

}  // namespace scorefuse
