#include <gtest/gtest.h>

#include "scorefuse/fusion.hpp"
#include "scorefuse/metrics.hpp"
#include "scorefuse/synth.hpp"

using namespace scorefuse;

namespace {

double rank1_on(const Dataset& d, std::size_t model, const std::vector<std::size_t>& queries) {
  double hits = 0;
  for (std::size_t q : queries) {
    const auto row = d.scores[model].row(q);
    if (d.gallery_labels[detail::argmax_lowest(row)] == d.query_labels[q]) hits += 1;
  }
  return hits / static_cast<double>(queries.size());
}

}  // namespace

TEST(Synth, SameSeedSameDataset) {
  const auto a = generate(gated_face_body_gait(5));
  const auto b = generate(gated_face_body_gait(5));
  EXPECT_EQ(a.scores, b.scores);
  EXPECT_EQ(a.query_labels, b.query_labels);
  EXPECT_EQ(a.gallery_labels, b.gallery_labels);
  EXPECT_EQ(*a.query_features, *b.query_features);
  const auto c = generate(gated_face_body_gait(6));
  EXPECT_NE(a.scores, c.scores);
}

TEST(Synth, ShapesAndRange) {
  const auto cfg = gated_face_body_gait(1);
  const auto d = generate(cfg);
  EXPECT_EQ(d.num_models(), 3u);
  EXPECT_EQ(d.num_queries(), cfg.n_subjects * cfg.queries_per_subject);
  EXPECT_EQ(d.num_gallery(), cfg.n_subjects * cfg.gallery_per_subject);
  EXPECT_EQ(d.feature_dim(), 1u);
  EXPECT_EQ(d.feature_names, std::vector<std::string>{"face_visible"});
  for (const auto& s : d.scores)
    for (double x : s.data()) {
      EXPECT_GE(x, 0.0);
      EXPECT_LE(x, 1.0);
    }
  EXPECT_EQ(d.query_labels.front().size(), 3u);  // "S" plus two digits
}

TEST(Synth, StrongModelIsPerfect) {
  SynthConfig cfg;
  cfg.seed = 3;
  cfg.models = {{"strong", 0.9, 0.02, 0.1, 0.02, std::nullopt, std::nullopt}};
  const auto d = generate(cfg);
  EXPECT_EQ(rank1_accuracy(d.scores[0], LabelIndex(d)), 1.0);
}

TEST(Synth, GatedModelIsChanceWhenInactive) {
  auto cfg = gated_face_body_gait(0);
  cfg.n_subjects = 60;
  const auto d = generate(cfg);
  std::vector<std::size_t> visible, hidden;
  for (std::size_t q = 0; q < d.num_queries(); ++q) ((*d.query_features)(q, 0) > 0.5 ? visible : hidden).push_back(q);
  ASSERT_FALSE(visible.empty());
  ASSERT_FALSE(hidden.empty());
  EXPECT_GT(rank1_on(d, 0, visible), 0.9);
  // Chance is gallery_per_subject / |G| = 1/60.
  EXPECT_LT(rank1_on(d, 0, hidden), 0.1);
}

TEST(Synth, ScoresMonotoneInConfiguredMean) {
  auto lo = gated_face_body_gait(4);
  auto hi = lo;
  hi.models[1].match_mean += 0.1;
  const auto a = generate(lo);
  const auto b = generate(hi);
  EXPECT_EQ(a.query_labels, b.query_labels);
  EXPECT_EQ(a.scores[0], b.scores[0]);
  for (std::size_t i = 0; i < a.scores[1].data().size(); ++i) EXPECT_GE(b.scores[1].data()[i], a.scores[1].data()[i]);
}

TEST(Synth, JsonRoundTrip) {
  const auto cfg = gated_face_body_gait(12);
  const auto back = synth_config_from_json(nlohmann::json::parse(synth_config_to_json(cfg).dump()));
  EXPECT_EQ(generate(back).scores, generate(cfg).scores);

  const auto by_name = synth_config_from_json(nlohmann::json::parse(R"({
    "seed": 12, "n_subjects": 30,
    "features": [{"name": "face_visible", "probability": 0.5}],
    "models": [
      {"name": "face", "match_mean": 0.85, "match_spread": 0.08, "nonmatch_mean": 0.30, "nonmatch_spread": 0.10,
       "gate_feature": "face_visible"},
      {"name": "body", "match_mean": 0.55, "match_spread": 0.12, "nonmatch_mean": 0.40, "nonmatch_spread": 0.10},
      {"name": "gait", "match_mean": 0.50, "match_spread": 0.12, "nonmatch_mean": 0.40, "nonmatch_spread": 0.10}
    ]})"));
  EXPECT_EQ(generate(by_name).scores, generate(cfg).scores);
}

TEST(Synth, InvalidConfigs) {
  SynthConfig cfg;
  EXPECT_THROW(generate(cfg), ContractError);  // no models
  cfg.models = {{"m", 0.8, 0.0, 0.2, 0.1, std::nullopt, std::nullopt}};
  EXPECT_THROW(generate(cfg), ContractError);  // zero spread
  cfg.models = {{"m", 0.8, 0.1, 0.2, 0.1, std::size_t{0}, std::nullopt}};
  EXPECT_THROW(generate(cfg), ContractError);  // gate without features
  cfg.features = {{"u", FeatureSpec::Kind::uniform, 0.5}};
  EXPECT_THROW(generate(cfg), ContractError);  // gate on non-binary feature
  EXPECT_THROW(synth_config_from_json(nlohmann::json::parse(R"({"models": [{"name": "m", "gate_feature": "nope"}]})")),
               ContractError);
}
