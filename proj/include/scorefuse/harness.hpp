#pragma once

// Experiment runner behind the command-line tool. Each command resolves an
// ExperimentConfig, runs a pipeline and writes report.json (resolved
// config, seeds, one entry per row) plus report.csv (fixed six decimals).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scorefuse/core.hpp"
#include "scorefuse/fusion.hpp"
#include "scorefuse/metrics.hpp"
#include "scorefuse/reward.hpp"
#include "scorefuse/scorespace.hpp"
#include "scorefuse/selector.hpp"
#include "scorefuse/synth.hpp"

namespace scorefuse {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::optional<std::filesystem::path> manifest;
  std::optional<SynthConfig> synth;
  FusionConfig fusion;
  RewardConfig reward;
  GrpoConfig grpo;
  MetricTargets targets;
  std::uint64_t seed = 0;  // trials and policy training
  std::filesystem::path output_dir = "out";
  std::vector<std::size_t> sweep_k = {1, 5, 10, 20, 40};
  std::optional<CombinationCandidate> selection;  // eval / compare-fusion / sweep-topk
  std::optional<std::filesystem::path> policy_path;
  std::size_t candidate_cap = kDefaultCandidateCap;
};

namespace detail {

template <class T>
T config_value(const nlohmann::json& obj, const char* key, T fallback, const std::string& path) {
  if (!obj.contains(key) || obj[key].is_null()) return fallback;
  try {
    return obj[key].get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(path + "." + key + ": wrong type");
  }
}

inline void require(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw ConfigError(field + ": " + message);
}

}  // namespace detail

// Checks every field; throws ConfigError naming the offending field path.
inline void validate(const ExperimentConfig& cfg) {
  using detail::require;
  require(cfg.manifest || cfg.synth, "dataset", "needs either 'manifest' or 'synth'");
  if (cfg.manifest) require(std::filesystem::exists(*cfg.manifest), "dataset.manifest", "not found: " + cfg.manifest->string());
  require(cfg.targets.far > 0.0 && cfg.targets.far <= 1.0, "metrics.far", "must lie in (0, 1]");
  require(cfg.targets.fpir > 0.0 && cfg.targets.fpir <= 1.0, "metrics.fpir", "must lie in (0, 1]");
  require(cfg.targets.trial_fraction > 0.0 && cfg.targets.trial_fraction < 1.0, "metrics.trial_fraction",
          "must lie in (0, 1)");
  require(cfg.targets.n_trials >= 1, "metrics.n_trials", "must be >= 1");
  require(cfg.fusion.sigma_epsilon > 0.0, "fusion.sigma_epsilon", "must be > 0");
  if (cfg.fusion.weights) {
    double sum = 0.0;
    for (double w : *cfg.fusion.weights) {
      require(std::isfinite(w) && w >= 0.0, "fusion.weights", "must be finite and >= 0");
      sum += w;
    }
    require(sum > 0.0, "fusion.weights", "must have a positive sum");
  }
  require(cfg.reward.gamma >= 0.0 && cfg.reward.gamma <= 1.0, "reward.gamma", "must lie in [0, 1]");
  require(cfg.reward.bernoulli_p >= 0.0 && cfg.reward.bernoulli_p <= 1.0, "reward.bernoulli_p", "must lie in [0, 1]");
  require(cfg.grpo.group_size >= 2, "grpo.group_size", "must be >= 2");
  require(cfg.grpo.clip_epsilon > 0.0, "grpo.clip_epsilon", "must be > 0");
  require(cfg.grpo.kl_coefficient >= 0.0, "grpo.kl_coefficient", "must be >= 0");
  require(cfg.grpo.learning_rate > 0.0, "grpo.learning_rate", "must be > 0");
  require(cfg.grpo.turn_limit >= 2, "grpo.turn_limit", "must be >= 2");
  require(cfg.grpo.batch_size >= 1, "grpo.batch_size", "must be >= 1");
  require(!cfg.sweep_k.empty(), "sweep.k_values", "must be nonempty");
  if (cfg.selection) require(cfg.selection->valid(), "selection", "anchor must be one of the subset's models");
}

// Relative paths are resolved against `base_dir` (the config file's directory).
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j,
                                                    const std::filesystem::path& base_dir = {}) {
  using detail::config_value;
  ExperimentConfig cfg;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  if (!j.is_object()) throw ConfigError("config: top level must be an object");

  if (j.contains("dataset")) {
    const auto& ds = j["dataset"];
    if (ds.contains("manifest")) cfg.manifest = resolve(config_value<std::string>(ds, "manifest", "", "dataset"));
    if (ds.contains("synth")) {
      try {
        cfg.synth = synth_config_from_json(ds["synth"]);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("dataset.synth: ") + e.what());
      } catch (const ContractError& e) {
        throw ConfigError(std::string("dataset.") + e.what());
      }
    }
  }

  if (j.contains("fusion")) {
    const auto& f = j["fusion"];
    const auto method = config_value<std::string>(f, "method", "act", "fusion");
    const auto parsed = parse_fusion_method(method);
    if (!parsed) throw ConfigError("fusion.method: unknown method '" + method + "'");
    cfg.fusion.method = *parsed;
    cfg.fusion.k = config_value<std::size_t>(f, "k", cfg.fusion.k, "fusion");
    cfg.fusion.sigma_epsilon = config_value<double>(f, "sigma_epsilon", cfg.fusion.sigma_epsilon, "fusion");
    if (f.contains("weights") && !f["weights"].is_null())
      cfg.fusion.weights = config_value<std::vector<double>>(f, "weights", {}, "fusion");
    const auto weighting = config_value<std::string>(f, "weighting", "zscore", "fusion");
    const auto w = parse_confidence_weighting(weighting);
    if (!w) throw ConfigError("fusion.weighting: unknown weighting '" + weighting + "'");
    cfg.fusion.weighting = *w;
  }

  if (j.contains("metrics")) {
    const auto& m = j["metrics"];
    cfg.targets.far = config_value<double>(m, "far", cfg.targets.far, "metrics");
    cfg.targets.fpir = config_value<double>(m, "fpir", cfg.targets.fpir, "metrics");
    cfg.targets.trial_fraction = config_value<double>(m, "trial_fraction", cfg.targets.trial_fraction, "metrics");
    cfg.targets.n_trials = config_value<std::size_t>(m, "n_trials", cfg.targets.n_trials, "metrics");
    cfg.targets.base_seed = config_value<std::uint64_t>(m, "base_seed", cfg.targets.base_seed, "metrics");
  }
  cfg.seed = config_value<std::uint64_t>(j, "seed", cfg.seed, "config");

  cfg.reward.k = cfg.fusion.k;
  if (j.contains("reward")) {
    const auto& r = j["reward"];
    cfg.reward.gamma = config_value<double>(r, "gamma", cfg.reward.gamma, "reward");
    cfg.reward.bernoulli_p = config_value<double>(r, "bernoulli_p", cfg.reward.bernoulli_p, "reward");
    cfg.reward.k = config_value<std::size_t>(r, "k", cfg.reward.k, "reward");
    if (r.contains("weights")) {
      const auto& w = r["weights"];
      cfg.reward.weights.format = config_value<double>(w, "format", 1.0, "reward.weights");
      cfg.reward.weights.tool = config_value<double>(w, "tool", 1.0, "reward.weights");
      cfg.reward.weights.accuracy = config_value<double>(w, "accuracy", 1.0, "reward.weights");
      cfg.reward.weights.metric = config_value<double>(w, "metric", 1.0, "reward.weights");
    }
  }

  if (j.contains("grpo")) {
    const auto& g = j["grpo"];
    cfg.grpo.group_size = config_value<std::size_t>(g, "group_size", cfg.grpo.group_size, "grpo");
    cfg.grpo.kl_coefficient = config_value<double>(g, "kl_coefficient", cfg.grpo.kl_coefficient, "grpo");
    cfg.grpo.clip_epsilon = config_value<double>(g, "clip_epsilon", cfg.grpo.clip_epsilon, "grpo");
    cfg.grpo.learning_rate = config_value<double>(g, "learning_rate", cfg.grpo.learning_rate, "grpo");
    cfg.grpo.steps = config_value<std::size_t>(g, "steps", cfg.grpo.steps, "grpo");
    cfg.grpo.turn_limit = config_value<std::size_t>(g, "turn_limit", cfg.grpo.turn_limit, "grpo");
    cfg.grpo.batch_size = config_value<std::size_t>(g, "batch_size", cfg.grpo.batch_size, "grpo");
    const auto mode = config_value<std::string>(g, "mode", "cot", "grpo");
    const auto parsed = parse_response_mode(mode);
    if (!parsed) throw ConfigError("grpo.mode: must be 'cot' or 'da'");
    cfg.grpo.mode = *parsed;
  }

  if (j.contains("sweep")) cfg.sweep_k = config_value<std::vector<std::size_t>>(j["sweep"], "k_values", cfg.sweep_k, "sweep");
  if (j.contains("selection") && !j["selection"].is_null()) {
    CombinationCandidate c;
    c.subset = config_value<std::vector<std::size_t>>(j["selection"], "subset", {}, "selection");
    std::sort(c.subset.begin(), c.subset.end());
    c.anchor = config_value<std::size_t>(j["selection"], "anchor", c.subset.empty() ? 0 : c.subset.front(), "selection");
    cfg.selection = c;
  }
  if (j.contains("policy") && !j["policy"].is_null()) cfg.policy_path = resolve(config_value<std::string>(j, "policy", "", "config"));
  if (j.contains("output_dir")) cfg.output_dir = resolve(config_value<std::string>(j, "output_dir", "out", "config"));
  cfg.candidate_cap = config_value<std::size_t>(j, "candidate_cap", cfg.candidate_cap, "config");
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j, path.parent_path());
}

// The fully resolved configuration, embedded in every report.
inline nlohmann::ordered_json resolved_config_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["dataset"] = nlohmann::ordered_json::object();
  if (cfg.manifest) j["dataset"]["manifest"] = cfg.manifest->string();
  if (cfg.synth) j["dataset"]["synth"] = synth_config_to_json(*cfg.synth);
  j["fusion"] = {{"method", std::string(to_string(cfg.fusion.method))},
                 {"k", cfg.fusion.k},
                 {"sigma_epsilon", cfg.fusion.sigma_epsilon},
                 {"weighting", std::string(to_string(cfg.fusion.weighting))}};
  j["fusion"]["weights"] = cfg.fusion.weights ? nlohmann::ordered_json(*cfg.fusion.weights) : nlohmann::ordered_json();
  j["metrics"] = {{"far", cfg.targets.far},
                  {"fpir", cfg.targets.fpir},
                  {"trial_fraction", cfg.targets.trial_fraction},
                  {"n_trials", cfg.targets.n_trials},
                  {"base_seed", cfg.targets.base_seed}};
  j["seed"] = cfg.seed;
  j["reward"] = {{"gamma", cfg.reward.gamma},
                 {"bernoulli_p", cfg.reward.bernoulli_p},
                 {"k", cfg.reward.k},
                 {"weights",
                  {{"format", cfg.reward.weights.format},
                   {"tool", cfg.reward.weights.tool},
                   {"accuracy", cfg.reward.weights.accuracy},
                   {"metric", cfg.reward.weights.metric}}}};
  j["grpo"] = {{"group_size", cfg.grpo.group_size},
               {"kl_coefficient", cfg.grpo.kl_coefficient},
               {"clip_epsilon", cfg.grpo.clip_epsilon},
               {"learning_rate", cfg.grpo.learning_rate},
               {"steps", cfg.grpo.steps},
               {"turn_limit", cfg.grpo.turn_limit},
               {"batch_size", cfg.grpo.batch_size},
               {"mode", std::string(to_string(cfg.grpo.mode))}};
  j["sweep"] = {{"k_values", cfg.sweep_k}};
  if (cfg.selection)
    j["selection"] = {{"subset", cfg.selection->subset}, {"anchor", cfg.selection->anchor}};
  else
    j["selection"] = nullptr;
  j["policy"] = cfg.policy_path ? nlohmann::ordered_json(cfg.policy_path->string()) : nlohmann::ordered_json();
  j["output_dir"] = cfg.output_dir.string();
  j["candidate_cap"] = cfg.candidate_cap;
  return j;
}

// ---------------------------------------------------------------------------
// Reports

struct ReportRow {
  std::string label;
  std::optional<double> parameter;  // swept value, when sweeping
  MetricReport metrics;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

struct ExperimentResults {
  std::string command;
  std::optional<std::string> swept_parameter;
  std::vector<ReportRow> rows;
  nlohmann::ordered_json config;
  nlohmann::ordered_json seeds;
  nlohmann::ordered_json summary = nlohmann::ordered_json::object();
};

inline std::string fixed6(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

// Whole-valued sweep parameters (k) print without decimals.
inline std::string parameter_text(double x) {
  if (x == std::floor(x) && std::abs(x) < 1e15) return std::to_string(static_cast<long long>(x));
  return fixed6(x);
}

inline std::string report_table(const ExperimentResults& results) {
  std::string out = "label";
  if (results.swept_parameter) out += "," + *results.swept_parameter;
  out += ",rank1,map,tar,fnir_mean,fnir_std,overall\n";
  for (const auto& row : results.rows) {
    out += row.label;
    if (results.swept_parameter) out += "," + (row.parameter ? parameter_text(*row.parameter) : std::string());
    for (double v : {row.metrics.rank1, row.metrics.map, row.metrics.tar, row.metrics.fnir_mean, row.metrics.fnir_std,
                     row.metrics.overall})
      out += "," + fixed6(v);
    out += '\n';
  }
  return out;
}

inline nlohmann::ordered_json report_document(const ExperimentResults& results) {
  nlohmann::ordered_json j;
  j["command"] = results.command;
  j["config"] = results.config;
  j["seeds"] = results.seeds;
  j["swept_parameter"] = results.swept_parameter ? nlohmann::ordered_json(*results.swept_parameter) : nlohmann::ordered_json();
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : results.rows) {
    nlohmann::ordered_json r;
    r["label"] = row.label;
    if (row.parameter) r["parameter"] = *row.parameter;
    r["metrics"] = row.metrics;
    if (!row.extra.empty()) r["extra"] = row.extra;
    j["rows"].push_back(std::move(r));
  }
  j["summary"] = results.summary;
  return j;
}

// Collects files written by one run so a failed run can remove them.
class OutputFiles {
 public:
  explicit OutputFiles(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const std::filesystem::path& dir() const noexcept { return dir_; }

  // Writes via a temporary name and renames into place.
  std::filesystem::path write(const std::string& name, const std::string& content) {
    std::filesystem::create_directories(dir_);
    const auto path = dir_ / name;
    const auto tmp = dir_ / (name + ".partial");
    detail::write_file(tmp, content);
    std::filesystem::rename(tmp, path);
    written_.push_back(path);
    return path;
  }

  void track(const std::filesystem::path& path) { written_.push_back(path); }

  void remove_all() noexcept {
    std::error_code ec;
    for (auto it = written_.rbegin(); it != written_.rend(); ++it) std::filesystem::remove_all(*it, ec);
    written_.clear();
  }

 private:
  std::filesystem::path dir_;
  std::vector<std::filesystem::path> written_;
};

// Sorts sweep rows by parameter, then writes report.json and report.csv.
inline void emit_report(ExperimentResults& results, OutputFiles& out) {
  if (results.rows.empty()) throw std::runtime_error("emit_report: no results");
  if (results.swept_parameter)
    std::stable_sort(results.rows.begin(), results.rows.end(),
                     [](const ReportRow& a, const ReportRow& b) { return a.parameter < b.parameter; });
  out.write("report.json", report_document(results).dump(2) + '\n');
  out.write("report.csv", report_table(results));
}

// ---------------------------------------------------------------------------
// Commands

inline const std::vector<std::string>& experiment_commands() {
  static const std::vector<std::string> commands = {"generate",   "eval",         "compare-fusion", "sweep-topk",
                                                    "grid-search", "oracle",       "train-policy",   "eval-policy"};
  return commands;
}

namespace detail {

inline Dataset experiment_dataset(const ExperimentConfig& cfg) {
  if (cfg.manifest) return load_dataset(*cfg.manifest);
  return generate(*cfg.synth);
}

inline CombinationCandidate experiment_selection(const ExperimentConfig& cfg, const Dataset& d) {
  if (cfg.selection) {
    if (cfg.selection->subset.back() >= d.num_models())
      throw ConfigError("selection.subset: model index out of range");
    return *cfg.selection;
  }
  std::vector<std::size_t> all(d.num_models());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return {all, 0};
}

inline nlohmann::ordered_json anchor_counts(const SelectionMask& mask, const Dataset& d) {
  nlohmann::ordered_json counts = nlohmann::ordered_json::object();
  for (const auto& name : d.model_names) counts[name] = 0;
  for (std::size_t q = 0; q < mask.num_queries(); ++q) counts[d.model_names[mask.anchor(q)]] = counts[d.model_names[mask.anchor(q)]].get<int>() + 1;
  return counts;
}

inline nlohmann::ordered_json candidate_json(const CombinationCandidate& c, const Dataset& d) {
  return {{"subset", c.subset}, {"anchor", c.anchor}, {"name", describe(c, d.model_names)}};
}

}  // namespace detail

// Runs one command and writes its report into cfg.output_dir. Files from
// a failed run are removed before the error propagates.
inline ExperimentResults run_experiment(const ExperimentConfig& cfg, const std::string& command) {
  if (std::find(experiment_commands().begin(), experiment_commands().end(), command) == experiment_commands().end())
    throw ConfigError("command: unknown command '" + command + "'");
  validate(cfg);
  if (command == "generate" && !cfg.synth) throw ConfigError("dataset.synth: 'generate' needs a synth config");

  OutputFiles out(cfg.output_dir);
  try {
    ExperimentResults results;
    results.command = command;
    results.config = resolved_config_json(cfg);
    results.seeds = {{"base_seed", cfg.targets.base_seed}, {"seed", cfg.seed}};
    if (cfg.synth) results.seeds["synth_seed"] = cfg.synth->seed;

    const Dataset d = detail::experiment_dataset(cfg);
    const LabelIndex labels(d);
    const auto trials = build_nonmated_trials(labels, cfg.targets.trial_fraction, cfg.targets.n_trials,
                                              cfg.targets.base_seed);
    auto evaluate = [&](const FusedScores& f) {
      return evaluate_report(f, labels, cfg.targets.far, cfg.targets.fpir, trials);
    };
    results.summary["dataset"] = {{"models", d.model_names},
                                  {"queries", d.num_queries()},
                                  {"gallery", d.num_gallery()},
                                  {"feature_dim", d.feature_dim()}};

    if (command == "generate") {
      const auto dir = cfg.output_dir / "dataset";
      out.track(dir);
      const auto manifest = save_dataset(d, dir);
      results.summary["manifest"] = manifest.string();
      for (std::size_t m = 0; m < d.num_models(); ++m) {
        const auto mask = SelectionMask::uniform(d.num_queries(), d.num_models(), {{m}, m});
        results.rows.push_back({d.model_names[m], std::nullopt, evaluate(act_fuse_dataset(d, mask, cfg.fusion.k)), {}});
      }
    } else if (command == "eval") {
      const auto combo = detail::experiment_selection(cfg, d);
      const auto mask = SelectionMask::uniform(d.num_queries(), d.num_models(), combo);
      ReportRow row{std::string(to_string(cfg.fusion.method)), std::nullopt, evaluate(fuse(d, mask, cfg.fusion)), {}};
      row.extra["selection"] = detail::candidate_json(combo, d);
      results.rows.push_back(std::move(row));
    } else if (command == "compare-fusion") {
      const auto combo = detail::experiment_selection(cfg, d);
      const auto mask = SelectionMask::uniform(d.num_queries(), d.num_models(), combo);
      for (auto method : {FusionMethod::act, FusionMethod::min, FusionMethod::max, FusionMethod::zscore,
                          FusionMethod::minmax, FusionMethod::weighted_sum}) {
        FusionConfig fc = cfg.fusion;
        fc.method = method;
        results.rows.push_back({std::string(to_string(method)), std::nullopt, evaluate(fuse(d, mask, fc)), {}});
      }
      results.summary["selection"] = detail::candidate_json(combo, d);
    } else if (command == "sweep-topk") {
      const auto combo = detail::experiment_selection(cfg, d);
      const auto mask = SelectionMask::uniform(d.num_queries(), d.num_models(), combo);
      results.swept_parameter = "k";
      auto ks = cfg.sweep_k;
      std::sort(ks.begin(), ks.end());
      ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
      for (std::size_t k : ks) {
        FusionConfig fc = cfg.fusion;
        fc.k = k;
        results.rows.push_back({"k=" + std::to_string(k), static_cast<double>(k), evaluate(fuse(d, mask, fc)), {}});
      }
      // First maximum in ascending k.
      const auto best = std::max_element(results.rows.begin(), results.rows.end(), [](const ReportRow& a, const ReportRow& b) {
        return a.metrics.overall < b.metrics.overall;
      });
      results.summary["selection"] = detail::candidate_json(combo, d);
      results.summary["best_k"] = static_cast<std::size_t>(*best->parameter);
      results.summary["best_overall"] = best->metrics.overall;
    } else if (command == "grid-search") {
      const auto candidates = enumerate_candidates(d.num_models(), cfg.candidate_cap);
      const auto grid = grid_search(d, cfg.fusion.k, labels, cfg.targets.far, cfg.targets.fpir, trials, candidates);
      for (const auto& r : grid.evaluated) {
        ReportRow row{describe(r.candidate, d.model_names), std::nullopt, r.report, {}};
        row.extra["candidate"] = detail::candidate_json(r.candidate, d);
        results.rows.push_back(std::move(row));
      }
      results.summary["best"] = detail::candidate_json(grid.best, d);
      results.summary["best_metrics"] = grid.best_report;
    } else if (command == "oracle") {
      const auto mask = per_sample_oracle(d, cfg.fusion.k, cfg.candidate_cap);
      ReportRow row{"oracle", std::nullopt, evaluate(act_fuse_dataset(d, mask, cfg.fusion.k)), {}};
      row.extra["anchor_counts"] = detail::anchor_counts(mask, d);
      results.rows.push_back(std::move(row));
      std::vector<std::size_t> all(d.num_models());
      std::iota(all.begin(), all.end(), std::size_t{0});
      const auto hard = SelectionMask::uniform(d.num_queries(), d.num_models(), {all, 0});
      results.rows.push_back({"hard_selection", std::nullopt, evaluate(surrogate_anchor_fuse(d, hard, cfg.fusion.k)), {}});
    } else if (command == "train-policy") {
      RewardConfig rc = cfg.reward;
      rc.targets = cfg.targets;
      const MetricRewardContext ctx(d, rc);
      const Policy initial(d.model_names, d.feature_dim());
      std::string diagnostics;
      const Policy trained = train_policy(ctx, cfg.grpo, cfg.seed, initial, [&](const StepDiagnostics& s) {
        diagnostics += nlohmann::ordered_json(s).dump() + '\n';
      });
      out.write("diagnostics.jsonl", diagnostics);
      out.write("policy.json", nlohmann::ordered_json(trained).dump(2) + '\n');
      for (const auto& [label, policy] : {std::pair{"untrained", &initial}, std::pair{"trained", &trained}}) {
        const auto mask = greedy_selection_mask(*policy, d, cfg.grpo);
        ReportRow row{label, std::nullopt, evaluate(act_fuse_dataset(d, mask, cfg.fusion.k)), {}};
        row.extra["anchor_counts"] = detail::anchor_counts(mask, d);
        results.rows.push_back(std::move(row));
      }
    } else if (command == "eval-policy") {
      const auto path = cfg.policy_path.value_or(cfg.output_dir / "policy.json");
      std::ifstream in(path);
      if (!in) throw ConfigError("policy: cannot open " + path.string());
      const Policy policy = policy_from_json(nlohmann::json::parse(in));
      if (policy.model_names() != d.model_names || policy.feature_dim() != d.feature_dim())
        throw ConfigError("policy: model names or feature dimension do not match the dataset");
      const auto mask = greedy_selection_mask(policy, d, cfg.grpo);
      ReportRow row{"policy", std::nullopt, evaluate(act_fuse_dataset(d, mask, cfg.fusion.k)), {}};
      row.extra["anchor_counts"] = detail::anchor_counts(mask, d);
      results.rows.push_back(std::move(row));
      results.summary["policy"] = path.string();
    }

    emit_report(results, out);
    return results;
  } catch (...) {
    out.remove_all();
    throw;
  }
}

}  // namespace scorefuse
