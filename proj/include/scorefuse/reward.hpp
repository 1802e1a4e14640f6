#pragma once

// Rewards for simulated tool-calling episodes: format, tool success,
// answer accuracy and the metric-based reward computed on an augmented
// dataset-level selection mask.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "scorefuse/core.hpp"
#include "scorefuse/fusion.hpp"
#include "scorefuse/metrics.hpp"
#include "scorefuse/scorespace.hpp"

namespace scorefuse {

enum class ResponseMode { cot, da };

inline std::string_view to_string(ResponseMode m) { return m == ResponseMode::cot ? "cot" : "da"; }

inline std::optional<ResponseMode> parse_response_mode(std::string_view s) {
  if (s == "cot") return ResponseMode::cot;
  if (s == "da") return ResponseMode::da;
  return std::nullopt;
}

// `malformed` covers a turn with neither or both of answer / tool_call.
enum class TurnAction { tool_call, answer, malformed };

struct Turn {
  bool has_think = false;
  TurnAction action = TurnAction::malformed;
};

struct ToolCall {
  std::string model_name;
  bool succeeded = false;
};

struct TrajectoryTranscript {
  std::vector<Turn> turns;
  std::vector<ToolCall> tool_calls;
  std::optional<std::string> final_answer;
  ResponseMode mode = ResponseMode::cot;
};

inline std::vector<std::string> transcript_issues(const TrajectoryTranscript& t, std::size_t turn_limit) {
  std::vector<std::string> out;
  if (t.turns.size() > turn_limit)
    out.push_back(std::to_string(t.turns.size()) + " turns exceed the limit of " + std::to_string(turn_limit));
  std::vector<std::string_view> seen;
  for (const auto& call : t.tool_calls) {
    if (!call.succeeded) continue;
    if (std::find(seen.begin(), seen.end(), call.model_name) != seen.end())
      out.push_back("model '" + call.model_name + "' selected more than once");
    seen.push_back(call.model_name);
  }
  return out;
}

// Mean per-turn format score. CoT turns need a think block and exactly one
// action; DA turns only the action.
inline double format_reward(const TrajectoryTranscript& t) {
  if (t.turns.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& turn : t.turns) {
    const bool one_action = turn.action != TurnAction::malformed;
    const bool ok = t.mode == ResponseMode::cot ? (turn.has_think && one_action) : one_action;
    sum += ok ? 1.0 : 0.0;
  }
  return sum / static_cast<double>(t.turns.size());
}

// Successful calls / total calls; 0 when no call was made.
inline double tool_success_reward(const TrajectoryTranscript& t) {
  if (t.tool_calls.empty()) return 0.0;
  const auto ok = std::count_if(t.tool_calls.begin(), t.tool_calls.end(), [](const ToolCall& c) { return c.succeeded; });
  return static_cast<double>(ok) / static_cast<double>(t.tool_calls.size());
}

inline double accuracy_reward(const std::optional<std::string>& answer, std::string_view truth) {
  return answer && *answer == truth ? 1.0 : 0.0;
}

struct RewardWeights {
  double format = 1.0;
  double tool = 1.0;
  double accuracy = 1.0;
  double metric = 1.0;
};

struct RewardConfig {
  double gamma = 0.8;
  double bernoulli_p = 0.5;
  RewardWeights weights;
  std::size_t k = 10;
  MetricTargets targets;
};

inline void validate(const RewardConfig& cfg) {
  if (!(cfg.gamma >= 0.0 && cfg.gamma <= 1.0)) throw ContractError("reward.gamma must lie in [0, 1]");
  if (!(cfg.bernoulli_p >= 0.0 && cfg.bernoulli_p <= 1.0)) throw ContractError("reward.bernoulli_p must lie in [0, 1]");
  for (double w : {cfg.weights.format, cfg.weights.tool, cfg.weights.accuracy, cfg.weights.metric})
    if (!std::isfinite(w)) throw ContractError("reward weights must be finite");
}

// Each row keeps `combo` with probability gamma; otherwise every entry is
// an independent Bernoulli(p) draw. The anchor column is always set, so no
// row is ever empty. Every row consumes 1 + |M| draws regardless of branch.
inline SelectionMask augment_selection_mask(const CombinationCandidate& combo, std::size_t num_queries,
                                            std::size_t num_models, double gamma, double p, std::uint64_t seed) {
  if (!combo.valid() || combo.subset.back() >= num_models)
    throw ContractError("augment_selection_mask: invalid combination");
  SelectionMask mask(num_queries, num_models);
  Rng rng(seed);
  std::vector<bool> draws(num_models);
  for (std::size_t q = 0; q < num_queries; ++q) {
    const bool keep = rng.uniform() < gamma;
    for (std::size_t m = 0; m < num_models; ++m) draws[m] = rng.bernoulli(p);
    if (keep) {
      mask.set_row(q, combo);
    } else {
      for (std::size_t m = 0; m < num_models; ++m) mask.set(q, m, draws[m]);
      mask.set_anchor(q, combo.anchor);
    }
  }
  return mask;
}

// Precomputed labels and non-mated trials for repeated metric-reward
// evaluation on one training dataset.
class MetricRewardContext {
 public:
  MetricRewardContext(const Dataset& d, RewardConfig cfg)
      : dataset_(&d),
        cfg_(std::move(cfg)),
        labels_(d),
        trials_(build_nonmated_trials(labels_, cfg_.targets.trial_fraction, cfg_.targets.n_trials,
                                      cfg_.targets.base_seed)) {
    validate(cfg_);
  }

  const Dataset& dataset() const noexcept { return *dataset_; }
  const RewardConfig& config() const noexcept { return cfg_; }
  const LabelIndex& labels() const noexcept { return labels_; }
  std::span<const NonMatedTrial> trials() const noexcept { return trials_; }

  MetricReport report(const SelectionMask& mask) const {
    const auto fused = act_fuse_dataset(*dataset_, mask, cfg_.k);
    return evaluate_report(fused, labels_, cfg_.targets.far, cfg_.targets.fpir, trials_);
  }

  // rank1 + map + tar - mean fnir of ACT(mask, k) over the whole dataset.
  double metric_reward(const SelectionMask& mask) const { return report(mask).overall; }

 private:
  const Dataset* dataset_;
  RewardConfig cfg_;
  LabelIndex labels_;
  std::vector<NonMatedTrial> trials_;
};

inline double metric_based_reward(const Dataset& d, const SelectionMask& mask, const RewardConfig& cfg) {
  return MetricRewardContext(d, cfg).metric_reward(mask);
}

struct RewardBreakdown {
  double format = 0.0;
  double tool = 0.0;
  double accuracy = 0.0;
  double metric = 0.0;

  double total(const RewardWeights& w) const {
    return w.format * format + w.tool * tool + w.accuracy * accuracy + w.metric * metric;
  }
};

// Models of the successful calls in call order, duplicates dropped. The
// first one is the anchor. nullopt when nothing usable was called.
inline std::optional<CombinationCandidate> combination_from_transcript(const TrajectoryTranscript& t,
                                                                       const Dataset& d) {
  std::optional<std::size_t> anchor;
  std::vector<std::size_t> subset;
  for (const auto& call : t.tool_calls) {
    if (!call.succeeded) continue;
    const auto m = d.model_index(call.model_name);
    if (!m || std::find(subset.begin(), subset.end(), *m) != subset.end()) continue;
    if (!anchor) anchor = *m;
    subset.push_back(*m);
  }
  if (!anchor) return std::nullopt;
  std::sort(subset.begin(), subset.end());
  return CombinationCandidate{std::move(subset), *anchor};
}

// All four components. The metric reward is 0 when the episode produced no
// usable model selection.
inline RewardBreakdown reward_components(const TrajectoryTranscript& t, std::string_view truth,
                                         const MetricRewardContext& ctx, std::uint64_t mask_seed) {
  RewardBreakdown r;
  r.format = format_reward(t);
  r.tool = tool_success_reward(t);
  r.accuracy = accuracy_reward(t.final_answer, truth);
  const auto& d = ctx.dataset();
  if (auto combo = combination_from_transcript(t, d)) {
    const auto& cfg = ctx.config();
    const auto mask = augment_selection_mask(*combo, d.num_queries(), d.num_models(), cfg.gamma,
                                             cfg.bernoulli_p, mask_seed);
    r.metric = ctx.metric_reward(mask);
  }
  return r;
}

inline double total_reward(const TrajectoryTranscript& t, std::string_view truth, const MetricRewardContext& ctx,
                           std::uint64_t mask_seed) {
  return reward_components(t, truth, ctx, mask_seed).total(ctx.config().weights);
}

inline double total_reward(const TrajectoryTranscript& t, std::string_view truth, const Dataset& d,
                           const RewardConfig& cfg, std::uint64_t mask_seed) {
  return total_reward(t, truth, MetricRewardContext(d, cfg), mask_seed);
}

}  // namespace scorefuse
