// scorefuse: command-line front end for the experiment harness.
//
//   scorefuse <command> [--config FILE] [overrides...]
//
// Commands: generate, eval, compare-fusion, sweep-topk, grid-search,
// oracle, train-policy, eval-policy. Without --config or --manifest the
// built-in gated face/body/gait synthetic dataset is used.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif

#include "scorefuse/harness.hpp"

namespace {

void print_table(const scorefuse::ExperimentResults& r) {
  std::printf("%-28s %8s %8s %8s %10s %9s %9s\n", "label", "rank1%", "mAP%", "TAR%", "FNIR%", "FNIRsd%", "overall");
  for (const auto& row : r.rows) {
    std::string label = row.label;
    if (label.size() > 28) label = label.substr(0, 25) + "...";
    const auto& m = row.metrics;
    std::printf("%-28s %8.2f %8.2f %8.2f %10.2f %9.2f %9.4f\n", label.c_str(), 100 * m.rank1, 100 * m.map, 100 * m.tar,
                100 * m.fnir_mean, 100 * m.fnir_std, m.overall);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Score-level fusion experiments for multi-model retrieval"};
  app.require_subcommand(0, 1);

  std::string command;
  std::optional<std::string> config_path, manifest, out, mode, method, policy;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k, trials, anchor, steps;
  std::optional<double> far, fpir, trial_fraction, lr;
  std::vector<std::size_t> subset;

  app.add_option("command", command, "generate | eval | compare-fusion | sweep-topk | grid-search | oracle | "
                                     "train-policy | eval-policy")
      ->required()
      ->check(CLI::IsMember(scorefuse::experiment_commands()));
  app.add_option("--config", config_path, "experiment config (JSON)");
  app.add_option("--manifest", manifest, "dataset manifest; replaces the config's dataset");
  app.add_option("--seed", seed, "seed for trials, training and synthetic data (default 0)");
  app.add_option("--out", out, "output directory");
  app.add_option("--k", k, "ACT top-k")->check(CLI::PositiveNumber);
  app.add_option("--far", far, "target FAR");
  app.add_option("--fpir", fpir, "target FPIR");
  app.add_option("--trials", trials, "number of non-mated trials");
  app.add_option("--trial-fraction", trial_fraction, "fraction of subjects withdrawn per trial");
  app.add_option("--mode", mode, "response mode: cot | da");
  app.add_option("--method", method, "fusion method for eval");
  app.add_option("--subset", subset, "model indices of the selection")->delimiter(',');
  app.add_option("--anchor", anchor, "anchor model index of the selection");
  app.add_option("--policy", policy, "policy file for eval-policy");
  app.add_option("--steps", steps, "GRPO steps");
  app.add_option("--lr", lr, "GRPO learning rate");

  CLI11_PARSE(app, argc, argv);

  try {
    scorefuse::ExperimentConfig cfg;
    if (config_path) cfg = scorefuse::load_experiment_config(*config_path);
    if (manifest) {
      cfg.manifest = *manifest;
      cfg.synth.reset();
    }
    if (!cfg.manifest && !cfg.synth) cfg.synth = scorefuse::gated_face_body_gait();
    if (seed) {
      cfg.seed = *seed;
      cfg.targets.base_seed = *seed;
      if (cfg.synth) cfg.synth->seed = *seed;
    }
    if (out) cfg.output_dir = *out;
    if (k) cfg.fusion.k = cfg.reward.k = *k;
    if (far) cfg.targets.far = *far;
    if (fpir) cfg.targets.fpir = *fpir;
    if (trials) cfg.targets.n_trials = *trials;
    if (trial_fraction) cfg.targets.trial_fraction = *trial_fraction;
    if (mode) {
      const auto m = scorefuse::parse_response_mode(*mode);
      if (!m) throw scorefuse::ConfigError("--mode: must be 'cot' or 'da'");
      cfg.grpo.mode = *m;
    }
    if (method) {
      const auto m = scorefuse::parse_fusion_method(*method);
      if (!m) throw scorefuse::ConfigError("--method: unknown fusion method '" + *method + "'");
      cfg.fusion.method = *m;
    }
    if (!subset.empty()) {
      std::sort(subset.begin(), subset.end());
      cfg.selection = scorefuse::CombinationCandidate{subset, anchor.value_or(subset.front())};
    } else if (anchor) {
      throw scorefuse::ConfigError("--anchor: needs --subset");
    }
    if (policy) cfg.policy_path = *policy;
    if (steps) cfg.grpo.steps = *steps;
    if (lr) cfg.grpo.learning_rate = *lr;

    const auto results = scorefuse::run_experiment(cfg, command);
    std::printf("command %s  base_seed %llu  seed %llu", command.c_str(),
                static_cast<unsigned long long>(cfg.targets.base_seed), static_cast<unsigned long long>(cfg.seed));
    if (cfg.synth) std::printf("  synth_seed %llu", static_cast<unsigned long long>(cfg.synth->seed));
    std::printf("\n");
    print_table(results);
    if (results.summary.contains("best")) std::printf("best: %s\n", results.summary["best"]["name"].get<std::string>().c_str());
    if (results.summary.contains("best_k")) std::printf("best k: %zu\n", results.summary["best_k"].get<std::size_t>());
    std::printf("wrote %s\n", (cfg.output_dir / "report.json").string().c_str());
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
