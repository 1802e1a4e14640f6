#pragma once

// Small builders shared by the test files.

#include <filesystem>
#include <string>
#include <vector>

#include "scorefuse/scorespace.hpp"
#include "oracles.hpp"

namespace testing_support {

inline scorefuse::Matrix to_matrix(const oracle::Rows& rows) {
  scorefuse::Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  return m;
}

inline oracle::Rows to_rows(const scorefuse::Matrix& m) {
  oracle::Rows rows;
  for (std::size_t r = 0; r < m.rows(); ++r) rows.emplace_back(m.row(r).begin(), m.row(r).end());
  return rows;
}

inline scorefuse::Dataset make_dataset(const std::vector<oracle::Rows>& models, std::vector<std::string> q,
                                       std::vector<std::string> g) {
  scorefuse::Dataset d;
  for (std::size_t m = 0; m < models.size(); ++m) {
    d.model_names.push_back("m" + std::to_string(m));
    d.metric_kinds.push_back(scorefuse::MetricKind::cosine_similarity);
    d.scores.push_back(to_matrix(models[m]));
  }
  d.query_labels = std::move(q);
  d.gallery_labels = std::move(g);
  return d;
}

// Fresh per-test scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::path(SCOREFUSE_TEST_TMP) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing_support
