#pragma once

// Seeded synthetic score matrices with per-model reliability that can be
// gated on a per-query binary attribute (e.g. whether the face is visible).

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scorefuse/core.hpp"
#include "scorefuse/scorespace.hpp"

namespace scorefuse {

struct FeatureSpec {
  enum class Kind { binary, uniform };
  std::string name;
  Kind kind = Kind::binary;
  double probability = 0.5;  // P(feature = 1) for binary features
};

struct ModelSpec {
  std::string name;
  double match_mean = 0.8;
  double match_spread = 0.1;
  double nonmatch_mean = 0.2;
  double nonmatch_spread = 0.1;
  // When set, the model is only reliable for queries whose binary feature
  // at this index is 1; otherwise match scores are drawn around
  // inactive_match_mean (default: nonmatch_mean, i.e. no separation).
  std::optional<std::size_t> gate_feature;
  std::optional<double> inactive_match_mean;
};

struct SynthConfig {
  std::size_t n_subjects = 20;
  std::size_t queries_per_subject = 4;
  std::size_t gallery_per_subject = 2;
  std::vector<ModelSpec> models;
  std::vector<FeatureSpec> features;
  double score_min = 0.0;
  double score_max = 1.0;
  std::uint64_t seed = 0;
};

inline void validate(const SynthConfig& cfg) {
  if (cfg.n_subjects < 1 || cfg.queries_per_subject < 1 || cfg.gallery_per_subject < 1)
    throw ContractError("synth: subject, query and gallery counts must be >= 1");
  if (cfg.models.empty()) throw ContractError("synth: no models configured");
  if (!(cfg.score_min < cfg.score_max)) throw ContractError("synth: score_min must be < score_max");
  for (std::size_t m = 0; m < cfg.models.size(); ++m) {
    const auto& spec = cfg.models[m];
    const std::string where = "synth.models[" + std::to_string(m) + "]";
    if (spec.name.empty()) throw ContractError(where + ": empty name");
    if (!(spec.match_spread > 0.0) || !(spec.nonmatch_spread > 0.0))
      throw ContractError(where + ": spreads must be > 0");
    if (spec.gate_feature && *spec.gate_feature >= cfg.features.size())
      throw ContractError(where + ": gate_feature out of range");
    if (spec.gate_feature && cfg.features[*spec.gate_feature].kind != FeatureSpec::Kind::binary)
      throw ContractError(where + ": gate_feature must be binary");
  }
  for (const auto& f : cfg.features)
    if (!(f.probability >= 0.0 && f.probability <= 1.0))
      throw ContractError("synth.features: probability must lie in [0, 1]");
}

// Draw order is fixed and independent of the configured means and spreads:
// gallery shuffle, query shuffle, one draw per (query, feature), then one
// standard normal per (model, query, gallery). Scores are
// clamp(mean + spread * z, score_min, score_max), so with a fixed seed
// every score is monotone in its configured mean.
inline Dataset generate(const SynthConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  const std::size_t width = std::to_string(cfg.n_subjects - 1).size();
  auto subject_id = [&](std::size_t s) {
    auto digits = std::to_string(s);
    return "S" + std::string(width - std::min(width, digits.size()), '0') + digits;
  };
  auto shuffled = [&](std::size_t per_subject) {
    std::vector<std::string> labels;
    for (std::size_t s = 0; s < cfg.n_subjects; ++s)
      for (std::size_t i = 0; i < per_subject; ++i) labels.push_back(subject_id(s));
    for (std::size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[rng.below(i)]);
    return labels;
  };

  Dataset d;
  d.gallery_labels = shuffled(cfg.gallery_per_subject);
  d.query_labels = shuffled(cfg.queries_per_subject);
  const std::size_t nq = d.query_labels.size();
  const std::size_t ng = d.gallery_labels.size();

  if (!cfg.features.empty()) {
    Matrix features(nq, cfg.features.size());
    for (std::size_t q = 0; q < nq; ++q)
      for (std::size_t f = 0; f < cfg.features.size(); ++f) {
        const double u = rng.uniform();
        features(q, f) = cfg.features[f].kind == FeatureSpec::Kind::binary
                             ? (u < cfg.features[f].probability ? 1.0 : 0.0)
                             : u;
      }
    d.query_features = std::move(features);
    for (const auto& f : cfg.features) d.feature_names.push_back(f.name);
  }

  for (const auto& spec : cfg.models) {
    Matrix s(nq, ng);
    for (std::size_t q = 0; q < nq; ++q) {
      const bool reliable = !spec.gate_feature || (*d.query_features)(q, *spec.gate_feature) > 0.5;
      const double match_mean = reliable ? spec.match_mean : spec.inactive_match_mean.value_or(spec.nonmatch_mean);
      for (std::size_t g = 0; g < ng; ++g) {
        const double z = rng.normal();
        const bool match = d.query_labels[q] == d.gallery_labels[g];
        const double value = match ? match_mean + spec.match_spread * z : spec.nonmatch_mean + spec.nonmatch_spread * z;
        s(q, g) = std::clamp(value, cfg.score_min, cfg.score_max);
      }
    }
    d.model_names.push_back(spec.name);
    d.metric_kinds.push_back(MetricKind::cosine_similarity);
    d.scores.push_back(std::move(s));
  }
  validate_dataset(d);
  return d;
}

// JSON form used by experiment configs.
inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig cfg;
  cfg.n_subjects = j.value("n_subjects", cfg.n_subjects);
  cfg.queries_per_subject = j.value("queries_per_subject", cfg.queries_per_subject);
  cfg.gallery_per_subject = j.value("gallery_per_subject", cfg.gallery_per_subject);
  cfg.score_min = j.value("score_min", cfg.score_min);
  cfg.score_max = j.value("score_max", cfg.score_max);
  cfg.seed = j.value("seed", cfg.seed);
  for (const auto& f : j.value("features", nlohmann::json::array())) {
    FeatureSpec spec;
    spec.name = f.at("name").get<std::string>();
    const auto kind = f.value("kind", std::string("binary"));
    if (kind == "binary") spec.kind = FeatureSpec::Kind::binary;
    else if (kind == "uniform") spec.kind = FeatureSpec::Kind::uniform;
    else throw ContractError("synth.features: unknown kind '" + kind + "'");
    spec.probability = f.value("probability", spec.probability);
    cfg.features.push_back(spec);
  }
  for (const auto& m : j.at("models")) {
    ModelSpec spec;
    spec.name = m.at("name").get<std::string>();
    spec.match_mean = m.value("match_mean", spec.match_mean);
    spec.match_spread = m.value("match_spread", spec.match_spread);
    spec.nonmatch_mean = m.value("nonmatch_mean", spec.nonmatch_mean);
    spec.nonmatch_spread = m.value("nonmatch_spread", spec.nonmatch_spread);
    if (m.contains("gate_feature") && !m["gate_feature"].is_null()) {
      const auto& gate = m["gate_feature"];
      if (gate.is_string()) {
        const auto name = gate.get<std::string>();
        const auto it = std::find_if(cfg.features.begin(), cfg.features.end(),
                                     [&](const FeatureSpec& f) { return f.name == name; });
        if (it == cfg.features.end()) throw ContractError("synth.models: unknown gate feature '" + name + "'");
        spec.gate_feature = static_cast<std::size_t>(it - cfg.features.begin());
      } else {
        spec.gate_feature = gate.get<std::size_t>();
      }
    }
    if (m.contains("inactive_match_mean")) spec.inactive_match_mean = m["inactive_match_mean"].get<double>();
    cfg.models.push_back(spec);
  }
  return cfg;
}

inline nlohmann::ordered_json synth_config_to_json(const SynthConfig& cfg) {
  nlohmann::ordered_json j;
  j["n_subjects"] = cfg.n_subjects;
  j["queries_per_subject"] = cfg.queries_per_subject;
  j["gallery_per_subject"] = cfg.gallery_per_subject;
  j["score_min"] = cfg.score_min;
  j["score_max"] = cfg.score_max;
  j["seed"] = cfg.seed;
  j["features"] = nlohmann::ordered_json::array();
  for (const auto& f : cfg.features)
    j["features"].push_back({{"name", f.name},
                             {"kind", f.kind == FeatureSpec::Kind::binary ? "binary" : "uniform"},
                             {"probability", f.probability}});
  j["models"] = nlohmann::ordered_json::array();
  for (const auto& m : cfg.models) {
    nlohmann::ordered_json mj = {{"name", m.name},
                                 {"match_mean", m.match_mean},
                                 {"match_spread", m.match_spread},
                                 {"nonmatch_mean", m.nonmatch_mean},
                                 {"nonmatch_spread", m.nonmatch_spread}};
    if (m.gate_feature) mj["gate_feature"] = *m.gate_feature;
    if (m.inactive_match_mean) mj["inactive_match_mean"] = *m.inactive_match_mean;
    j["models"].push_back(mj);
  }
  return j;
}

// Three-model setup used by the demos and the acceptance suite: a face
// model that is only informative when `face_visible` is 1, a moderately
// reliable body model, and a weak gait model.
inline SynthConfig gated_face_body_gait(std::uint64_t seed = 0) {
  SynthConfig cfg;
  cfg.n_subjects = 30;
  cfg.queries_per_subject = 4;
  cfg.gallery_per_subject = 2;
  cfg.seed = seed;
  cfg.features = {{"face_visible", FeatureSpec::Kind::binary, 0.5}};
  cfg.models = {
      {"face", 0.85, 0.08, 0.30, 0.10, std::size_t{0}, std::nullopt},
      {"body", 0.55, 0.12, 0.40, 0.10, std::nullopt, std::nullopt},
      {"gait", 0.50, 0.12, 0.40, 0.10, std::nullopt, std::nullopt},
  };
  return cfg;
}

}  // namespace scorefuse
