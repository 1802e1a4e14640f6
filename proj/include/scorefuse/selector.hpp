#pragma once

// Model-selection strategies: exhaustive dataset-level grid search, the
// per-query oracle, and a feature-conditioned stochastic selection policy
// trained with group-relative policy optimization.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scorefuse/core.hpp"
#include "scorefuse/fusion.hpp"
#include "scorefuse/metrics.hpp"
#include "scorefuse/reward.hpp"
#include "scorefuse/scorespace.hpp"

namespace scorefuse {

inline constexpr std::size_t kDefaultCandidateCap = 8;

// Every (subset, anchor) pair with anchor in subset: n * 2^(n-1) of them,
// in candidate_order.
inline std::vector<CombinationCandidate> enumerate_candidates(std::size_t n_models,
                                                              std::size_t cap = kDefaultCandidateCap) {
  if (n_models == 0) throw ContractError("enumerate_candidates: no models");
  if (n_models > cap)
    throw ContractError("enumerate_candidates: " + std::to_string(n_models) + " models exceeds the cap of " +
                        std::to_string(cap));
  std::vector<CombinationCandidate> out;
  for (std::size_t bits = 1; bits < (std::size_t{1} << n_models); ++bits) {
    std::vector<std::size_t> subset;
    for (std::size_t m = 0; m < n_models; ++m)
      if (bits & (std::size_t{1} << m)) subset.push_back(m);
    for (std::size_t a : subset) out.push_back({subset, a});
  }
  std::sort(out.begin(), out.end(), candidate_order);
  return out;
}

struct CandidateResult {
  CombinationCandidate candidate;
  MetricReport report;
};

struct GridSearchResult {
  CombinationCandidate best;
  MetricReport best_report;
  std::vector<CandidateResult> evaluated;  // in the order given
};

// True when `a` beats `b`: higher overall, then candidate_order.
inline bool better_candidate(const CandidateResult& a, const CandidateResult& b) {
  if (a.report.overall != b.report.overall) return a.report.overall > b.report.overall;
  return candidate_order(a.candidate, b.candidate);
}

// Evaluates ACT with the same candidate applied to every query and keeps
// the best by overall score.
inline GridSearchResult grid_search(const Dataset& d, std::size_t k, const LabelIndex& labels, double far,
                                    double fpir, std::span<const NonMatedTrial> trials,
                                    std::span<const CombinationCandidate> candidates) {
  if (candidates.empty()) throw ContractError("grid_search: no candidates");
  GridSearchResult result;
  for (const auto& c : candidates) {
    const auto mask = SelectionMask::uniform(d.num_queries(), d.num_models(), c);
    const auto fused = act_fuse_dataset(d, mask, k);
    result.evaluated.push_back({c, evaluate_report(fused, labels, far, fpir, trials)});
  }
  const auto best = std::min_element(result.evaluated.begin(), result.evaluated.end(), better_candidate);
  result.best = best->candidate;
  result.best_report = best->report;
  return result;
}

inline GridSearchResult grid_search(const Dataset& d, std::size_t k, const MetricTargets& targets,
                                    std::size_t cap = kDefaultCandidateCap) {
  const LabelIndex labels(d);
  const auto trials = build_nonmated_trials(labels, targets.trial_fraction, targets.n_trials, targets.base_seed);
  const auto candidates = enumerate_candidates(d.num_models(), cap);
  return grid_search(d, k, labels, targets.far, targets.fpir, trials, candidates);
}

// For each query independently, the candidate whose ACT-fused row has the
// highest average precision; ties go to the better-ranked first mate, then
// candidate_order. Queries without a mate get the first candidate.
inline SelectionMask per_sample_oracle(const Dataset& d, std::size_t k, std::size_t cap = kDefaultCandidateCap,
                                       double eps = kDefaultSigmaEpsilon) {
  validate_dataset(d);
  const LabelIndex labels(d);
  const auto candidates = enumerate_candidates(d.num_models(), cap);
  const std::size_t nm = d.num_models();
  const std::size_t ng = d.num_gallery();
  SelectionMask mask(d.num_queries(), nm);
  std::vector<std::vector<double>> contributions(nm);
  std::vector<double> fused(ng);

  for (std::size_t q = 0; q < d.num_queries(); ++q) {
    for (std::size_t m = 0; m < nm; ++m) contributions[m] = act_intermediates(d.scores[m].row(q), k, eps).contribution;
    const int subject = labels.query()[q];

    std::size_t best = 0;
    double best_ap = -1.0;
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const auto& c = candidates[i];
      // Same operation order as act_fuse_dataset so results agree bitwise.
      const auto anchor_row = d.scores[c.anchor].row(q);
      std::copy(anchor_row.begin(), anchor_row.end(), fused.begin());
      for (std::size_t m : c.subset)
        for (std::size_t g = 0; g < ng; ++g) fused[g] += contributions[m][g];
      const double norm = 1.0 + static_cast<double>(c.subset.size());
      for (double& x : fused) x /= norm;

      const double ap = average_precision(fused, labels.gallery(), subject).value_or(-1.0);
      const auto order = ranked_gallery(fused);
      std::size_t rank = ng;
      for (std::size_t r = 0; r < ng; ++r)
        if (labels.gallery()[order[r]] == subject) {
          rank = r;
          break;
        }
      if (ap > best_ap || (ap == best_ap && rank < best_rank)) {
        best = i;
        best_ap = ap;
        best_rank = rank;
      }
    }
    mask.set_row(q, candidates[best]);
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Selection policy

// Log-linear policy over ordered model selections. An anchor is drawn from
// softmax(W_a x~); every other model then gets an independent
// Bernoulli(sigmoid(W_c x~)) continuation decision, in index order, until
// the call budget is spent. x~ is the query feature vector with a trailing 1.
class Policy {
 public:
  Policy() = default;
  Policy(std::vector<std::string> model_names, std::size_t feature_dim)
      : model_names_(std::move(model_names)),
        feature_dim_(feature_dim),
        params_(2 * model_names_.size() * (feature_dim + 1), 0.0) {
    if (model_names_.empty()) throw ContractError("Policy: no models");
  }

  std::size_t num_models() const noexcept { return model_names_.size(); }
  std::size_t feature_dim() const noexcept { return feature_dim_; }
  std::size_t row_width() const noexcept { return feature_dim_ + 1; }
  const std::vector<std::string>& model_names() const noexcept { return model_names_; }

  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }

  double& anchor_weight(std::size_t m, std::size_t j) { return params_[m * row_width() + j]; }
  double& continuation_weight(std::size_t m, std::size_t j) {
    return params_[(num_models() + m) * row_width() + j];
  }
  std::size_t anchor_offset(std::size_t m) const noexcept { return m * row_width(); }
  std::size_t continuation_offset(std::size_t m) const noexcept { return (num_models() + m) * row_width(); }

  std::vector<double> anchor_logits(std::span<const double> features) const { return logits(features, 0); }
  std::vector<double> continuation_logits(std::span<const double> features) const {
    return logits(features, num_models());
  }

  friend bool operator==(const Policy&, const Policy&) = default;

 private:
  std::vector<double> logits(std::span<const double> features, std::size_t block) const {
    if (features.size() != feature_dim_)
      throw ContractError("Policy: feature dimension " + std::to_string(features.size()) + " != " +
                          std::to_string(feature_dim_));
    std::vector<double> out(num_models());
    for (std::size_t m = 0; m < num_models(); ++m) {
      const double* w = params_.data() + (block + m) * row_width();
      double acc = w[feature_dim_];
      for (std::size_t j = 0; j < feature_dim_; ++j) acc += w[j] * features[j];
      out[m] = acc;
    }
    return out;
  }

  std::vector<std::string> model_names_;
  std::size_t feature_dim_ = 0;
  std::vector<double> params_;
};

inline void to_json(nlohmann::ordered_json& j, const Policy& p) {
  j = {{"model_names", p.model_names()},
       {"feature_dim", p.feature_dim()},
       {"params", std::vector<double>(p.params().begin(), p.params().end())}};
}

inline Policy policy_from_json(const nlohmann::json& j) {
  Policy p(j.at("model_names").get<std::vector<std::string>>(), j.at("feature_dim").get<std::size_t>());
  const auto params = j.at("params").get<std::vector<double>>();
  if (params.size() != p.params().size())
    throw IngestError("policy: expected " + std::to_string(p.params().size()) + " parameters, got " +
                      std::to_string(params.size()));
  if (!all_finite(params)) throw IngestError("policy: non-finite parameter");
  std::copy(params.begin(), params.end(), p.params().begin());
  return p;
}

namespace detail {

inline std::vector<double> softmax(std::span<const double> logits) {
  const double hi = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - hi));
  for (double& x : p) x /= z;
  return p;
}

inline double log_sum_exp(std::span<const double> logits) {
  const double hi = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - hi);
  return hi + std::log(z);
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(sigmoid(x)), stable for large |x|.
inline double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

}  // namespace detail

struct GrpoConfig {
  std::size_t group_size = 6;
  double kl_coefficient = 0.04;
  double clip_epsilon = 0.2;
  double learning_rate = 0.3;
  std::size_t steps = 200;
  std::size_t turn_limit = 4;
  std::size_t batch_size = 8;
  ResponseMode mode = ResponseMode::cot;
};

inline void validate(const GrpoConfig& cfg) {
  if (cfg.group_size < 2) throw ContractError("grpo.group_size must be >= 2");
  if (!(cfg.clip_epsilon > 0.0)) throw ContractError("grpo.clip_epsilon must be > 0");
  if (!(cfg.kl_coefficient >= 0.0)) throw ContractError("grpo.kl_coefficient must be >= 0");
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate))
    throw ContractError("grpo.learning_rate must be positive and finite");
  if (cfg.turn_limit < 2) throw ContractError("grpo.turn_limit must allow one tool call and one answer");
  if (cfg.batch_size == 0) throw ContractError("grpo.batch_size must be >= 1");
}

enum class Sampling { stochastic, greedy };

// One simulated episode: the decisions taken plus the transcript they imply.
struct SampledTrajectory {
  std::size_t anchor = 0;
  std::vector<std::size_t> considered;  // continuation heads consulted, in order
  std::vector<std::uint8_t> included;   // decision per considered head
  TrajectoryTranscript transcript;

  // Tool-call order: anchor first, then included models.
  std::vector<std::size_t> calls() const {
    std::vector<std::size_t> out{anchor};
    for (std::size_t i = 0; i < considered.size(); ++i)
      if (included[i]) out.push_back(considered[i]);
    return out;
  }

  CombinationCandidate combination() const {
    auto subset = calls();
    std::sort(subset.begin(), subset.end());
    return {std::move(subset), anchor};
  }
};

// At most turn_limit - 1 tool calls (anchor included) followed by one
// answer turn. Greedy mode takes the argmax anchor (lowest index on ties)
// and includes a model iff its continuation probability exceeds 1/2.
inline SampledTrajectory sample_trajectory(const Policy& policy, std::span<const double> features,
                                           const GrpoConfig& cfg, std::uint64_t seed,
                                           Sampling sampling = Sampling::stochastic) {
  if (cfg.turn_limit < 2) throw ContractError("sample_trajectory: turn_limit must be >= 2");
  Rng rng(seed);
  SampledTrajectory t;
  const auto a_logits = policy.anchor_logits(features);
  if (sampling == Sampling::greedy) {
    t.anchor = static_cast<std::size_t>(std::max_element(a_logits.begin(), a_logits.end()) - a_logits.begin());
  } else {
    const auto p = detail::softmax(a_logits);
    const double u = rng.uniform();
    double cumulative = 0.0;
    t.anchor = p.size() - 1;
    for (std::size_t m = 0; m < p.size(); ++m) {
      cumulative += p[m];
      if (u < cumulative) {
        t.anchor = m;
        break;
      }
    }
  }

  const auto c_logits = policy.continuation_logits(features);
  std::size_t budget = cfg.turn_limit - 2;
  for (std::size_t m = 0; m < policy.num_models() && budget > 0; ++m) {
    if (m == t.anchor) continue;
    const bool take = sampling == Sampling::greedy ? c_logits[m] > 0.0 : rng.bernoulli(detail::sigmoid(c_logits[m]));
    t.considered.push_back(m);
    t.included.push_back(take ? 1 : 0);
    if (take) --budget;
  }

  const bool think = cfg.mode == ResponseMode::cot;
  t.transcript.mode = cfg.mode;
  for (std::size_t m : t.calls()) {
    t.transcript.turns.push_back({think, TurnAction::tool_call});
    t.transcript.tool_calls.push_back({policy.model_names()[m], true});
  }
  t.transcript.turns.push_back({think, TurnAction::answer});
  return t;
}

inline double log_prob(const Policy& policy, std::span<const double> features, const SampledTrajectory& t) {
  const auto a = policy.anchor_logits(features);
  double lp = a[t.anchor] - detail::log_sum_exp(a);
  const auto c = policy.continuation_logits(features);
  for (std::size_t i = 0; i < t.considered.size(); ++i) {
    const double l = c[t.considered[i]];
    lp += t.included[i] ? detail::log_sigmoid(l) : detail::log_sigmoid(-l);
  }
  return lp;
}

// d log pi(t) / d params, accumulated into `grad` scaled by `scale`.
inline void accumulate_log_prob_gradient(const Policy& policy, std::span<const double> features,
                                         const SampledTrajectory& t, double scale, std::span<double> grad) {
  const std::size_t w = policy.row_width();
  auto add_row = [&](std::size_t offset, double coeff) {
    for (std::size_t j = 0; j < policy.feature_dim(); ++j) grad[offset + j] += scale * coeff * features[j];
    grad[offset + w - 1] += scale * coeff;
  };
  const auto p = detail::softmax(policy.anchor_logits(features));
  for (std::size_t m = 0; m < p.size(); ++m) add_row(policy.anchor_offset(m), (m == t.anchor ? 1.0 : 0.0) - p[m]);
  const auto c = policy.continuation_logits(features);
  for (std::size_t i = 0; i < t.considered.size(); ++i) {
    const std::size_t m = t.considered[i];
    add_row(policy.continuation_offset(m), (t.included[i] ? 1.0 : 0.0) - detail::sigmoid(c[m]));
  }
}

// KL(pi || ref) at one query: categorical KL of the anchor distributions
// plus the Bernoulli KL of every continuation head.
inline double kl_divergence(const Policy& policy, const Policy& reference, std::span<const double> features) {
  const auto a = policy.anchor_logits(features);
  const auto a_ref = reference.anchor_logits(features);
  const double lse = detail::log_sum_exp(a);
  const double lse_ref = detail::log_sum_exp(a_ref);
  double kl = 0.0;
  for (std::size_t m = 0; m < a.size(); ++m) {
    const double lp = a[m] - lse;
    kl += std::exp(lp) * (lp - (a_ref[m] - lse_ref));
  }
  const auto c = policy.continuation_logits(features);
  const auto c_ref = reference.continuation_logits(features);
  for (std::size_t m = 0; m < c.size(); ++m) {
    const double p = detail::sigmoid(c[m]);
    kl += p * (detail::log_sigmoid(c[m]) - detail::log_sigmoid(c_ref[m])) +
          (1.0 - p) * (detail::log_sigmoid(-c[m]) - detail::log_sigmoid(-c_ref[m]));
  }
  return kl;
}

inline void accumulate_kl_gradient(const Policy& policy, const Policy& reference, std::span<const double> features,
                                   double scale, std::span<double> grad) {
  const std::size_t w = policy.row_width();
  auto add_row = [&](std::size_t offset, double coeff) {
    for (std::size_t j = 0; j < policy.feature_dim(); ++j) grad[offset + j] += scale * coeff * features[j];
    grad[offset + w - 1] += scale * coeff;
  };
  const auto a = policy.anchor_logits(features);
  const auto a_ref = reference.anchor_logits(features);
  const double lse = detail::log_sum_exp(a);
  const double lse_ref = detail::log_sum_exp(a_ref);
  std::vector<double> log_ratio(a.size());
  double kl_anchor = 0.0;
  for (std::size_t m = 0; m < a.size(); ++m) {
    log_ratio[m] = (a[m] - lse) - (a_ref[m] - lse_ref);
    kl_anchor += std::exp(a[m] - lse) * log_ratio[m];
  }
  for (std::size_t m = 0; m < a.size(); ++m)
    add_row(policy.anchor_offset(m), std::exp(a[m] - lse) * (log_ratio[m] - kl_anchor));
  const auto c = policy.continuation_logits(features);
  const auto c_ref = reference.continuation_logits(features);
  for (std::size_t m = 0; m < c.size(); ++m) {
    const double p = detail::sigmoid(c[m]);
    add_row(policy.continuation_offset(m), p * (1.0 - p) * (c[m] - c_ref[m]));
  }
}

// A_i = (r_i - mean) / population std; all zeros for a degenerate group.
inline std::vector<double> group_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw ContractError("group_advantages: need at least two rewards");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> a(rewards.size(), 0.0);
  if (sd < 1e-12) return a;
  for (std::size_t i = 0; i < rewards.size(); ++i) a[i] = (rewards[i] - mean) / sd;
  return a;
}

// One query's sampled group, frozen at sampling time.
struct TrajectoryGroup {
  std::vector<double> features;
  std::vector<SampledTrajectory> trajectories;
  std::vector<double> old_log_probs;
  std::vector<double> advantages;
};

struct SurrogateEvaluation {
  double objective = 0.0;
  double kl = 0.0;
  std::vector<double> gradient;
};

// Mean over groups of
//   (1/N) sum_i min(rho_i A_i, clip(rho_i, 1-eps, 1+eps) A_i) - beta KL(pi || ref)
// with rho_i = pi(o_i) / pi_old(o_i), and its exact gradient (zero through
// the clipped branch when it is the active minimum).
inline SurrogateEvaluation grpo_surrogate(const Policy& policy, const Policy& reference,
                                          std::span<const TrajectoryGroup> groups, double clip_epsilon,
                                          double kl_coefficient) {
  SurrogateEvaluation out;
  out.gradient.assign(policy.params().size(), 0.0);
  if (groups.empty()) return out;
  const double group_weight = 1.0 / static_cast<double>(groups.size());
  for (const auto& group : groups) {
    const double per_traj = group_weight / static_cast<double>(group.trajectories.size());
    for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
      const auto& t = group.trajectories[i];
      const double ratio = std::exp(log_prob(policy, group.features, t) - group.old_log_probs[i]);
      const double adv = group.advantages[i];
      const double clipped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
      const double unclipped_term = ratio * adv;
      const double clipped_term = clipped * adv;
      if (unclipped_term <= clipped_term) {
        out.objective += per_traj * unclipped_term;
        // d(rho A) = A rho d log pi
        accumulate_log_prob_gradient(policy, group.features, t, per_traj * adv * ratio, out.gradient);
      } else {
        out.objective += per_traj * clipped_term;
      }
    }
    const double kl = kl_divergence(policy, reference, group.features);
    out.kl += group_weight * kl;
    out.objective -= group_weight * kl_coefficient * kl;
    if (kl_coefficient != 0.0)
      accumulate_kl_gradient(policy, reference, group.features, -group_weight * kl_coefficient, out.gradient);
  }
  return out;
}

struct StepDiagnostics {
  std::size_t step = 0;
  double mean_reward = 0.0;
  double reward_std = 0.0;
  double mean_accuracy = 0.0;
  double mean_metric_reward = 0.0;
  double advantage_mean = 0.0;
  double advantage_std = 0.0;
  double kl = 0.0;
  double objective = 0.0;
  double gradient_norm = 0.0;
};

inline void to_json(nlohmann::ordered_json& j, const StepDiagnostics& d) {
  j = {{"step", d.step},
       {"mean_reward", d.mean_reward},
       {"reward_std", d.reward_std},
       {"mean_accuracy", d.mean_accuracy},
       {"mean_metric_reward", d.mean_metric_reward},
       {"advantage_mean", d.advantage_mean},
       {"advantage_std", d.advantage_std},
       {"kl", d.kl},
       {"objective", d.objective},
       {"gradient_norm", d.gradient_norm}};
}

class NonFiniteGradient : public std::runtime_error {
 public:
  NonFiniteGradient(const std::string& what, StepDiagnostics diagnostics)
      : std::runtime_error(what), diagnostics_(diagnostics) {}
  const StepDiagnostics& diagnostics() const noexcept { return diagnostics_; }

 private:
  StepDiagnostics diagnostics_;
};

inline std::vector<double> query_features(const Dataset& d, std::size_t q) {
  if (!d.query_features) return {};
  const auto row = d.query_features->row(q);
  return {row.begin(), row.end()};
}

// The simulated agent answers with the identity its anchor tool predicts
// (that model's top-ranked gallery entry), the way a tool returns a label.
inline std::string anchor_prediction(const Dataset& d, std::size_t q, const SampledTrajectory& t) {
  return d.gallery_labels[detail::argmax_lowest(d.scores[t.anchor].row(q))];
}

// Samples a group per query, scores every trajectory with the total reward
// (metric part on an augmented mask over the training set), normalizes
// within groups and takes one gradient-ascent step on the clipped
// surrogate. `policy` is updated in place.
inline StepDiagnostics grpo_step(Policy& policy, const Policy& reference, std::span<const std::size_t> batch,
                                 const MetricRewardContext& ctx, const GrpoConfig& cfg, std::uint64_t seed,
                                 std::size_t step_index = 0) {
  validate(cfg);
  const Dataset& d = ctx.dataset();
  if (policy.num_models() != d.num_models() || policy.feature_dim() != d.feature_dim())
    throw ContractError("grpo_step: policy shape does not match the dataset");

  StepDiagnostics diag;
  diag.step = step_index;
  std::vector<TrajectoryGroup> groups;
  std::vector<double> all_rewards;
  std::vector<double> all_advantages;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::size_t q = batch[b];
    TrajectoryGroup group;
    group.features = query_features(d, q);
    std::vector<double> rewards;
    for (std::size_t i = 0; i < cfg.group_size; ++i) {
      const std::uint64_t stream = b * cfg.group_size + i;
      auto t = sample_trajectory(policy, group.features, cfg, derive_seed(seed, 2 * stream));
      t.transcript.final_answer = anchor_prediction(d, q, t);
      const auto parts = reward_components(t.transcript, d.query_labels[q], ctx, derive_seed(seed, 2 * stream + 1));
      rewards.push_back(parts.total(ctx.config().weights));
      diag.mean_accuracy += parts.accuracy;
      diag.mean_metric_reward += parts.metric;
      group.old_log_probs.push_back(log_prob(policy, group.features, t));
      group.trajectories.push_back(std::move(t));
    }
    group.advantages = group_advantages(rewards);
    all_rewards.insert(all_rewards.end(), rewards.begin(), rewards.end());
    all_advantages.insert(all_advantages.end(), group.advantages.begin(), group.advantages.end());
    groups.push_back(std::move(group));
  }

  auto mean_std = [](std::span<const double> xs) {
    if (xs.empty()) return std::pair{0.0, 0.0};
    const double n = static_cast<double>(xs.size());
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    return std::pair{mean, std::sqrt(var / n)};
  };
  std::tie(diag.mean_reward, diag.reward_std) = mean_std(all_rewards);
  std::tie(diag.advantage_mean, diag.advantage_std) = mean_std(all_advantages);
  if (!all_rewards.empty()) {
    diag.mean_accuracy /= static_cast<double>(all_rewards.size());
    diag.mean_metric_reward /= static_cast<double>(all_rewards.size());
  }

  const auto eval = grpo_surrogate(policy, reference, groups, cfg.clip_epsilon, cfg.kl_coefficient);
  diag.objective = eval.objective;
  diag.kl = eval.kl;
  double norm2 = 0.0;
  for (double g : eval.gradient) norm2 += g * g;
  diag.gradient_norm = std::sqrt(norm2);
  if (!std::isfinite(diag.gradient_norm)) throw NonFiniteGradient("grpo_step: non-finite gradient", diag);

  auto params = policy.params();
  for (std::size_t i = 0; i < params.size(); ++i) params[i] += cfg.learning_rate * eval.gradient[i];
  return diag;
}

// Runs cfg.steps GRPO steps on uniformly drawn query batches. The
// reference policy is the initial one.
inline Policy train_policy(const MetricRewardContext& ctx, const GrpoConfig& cfg, std::uint64_t seed,
                           std::optional<Policy> initial = std::nullopt,
                           const std::function<void(const StepDiagnostics&)>& on_step = {}) {
  validate(cfg);
  const Dataset& d = ctx.dataset();
  Policy policy = initial ? std::move(*initial) : Policy(d.model_names, d.feature_dim());
  const Policy reference = policy;
  std::vector<std::size_t> batch(cfg.batch_size);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Rng rng(derive_seed(seed, 0xBA7C4000ULL + step));
    for (auto& q : batch) q = rng.below(d.num_queries());
    const auto diag = grpo_step(policy, reference, batch, ctx, cfg, derive_seed(seed, step), step);
    if (on_step) on_step(diag);
  }
  return policy;
}

// Per-query greedy selections of `policy` as a mask.
inline SelectionMask greedy_selection_mask(const Policy& policy, const Dataset& d, const GrpoConfig& cfg) {
  SelectionMask mask(d.num_queries(), d.num_models());
  for (std::size_t q = 0; q < d.num_queries(); ++q) {
    const auto t = sample_trajectory(policy, query_features(d, q), cfg, 0, Sampling::greedy);
    mask.set_row(q, t.combination());
  }
  return mask;
}

}  // namespace scorefuse
