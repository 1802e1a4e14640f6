#pragma once

// Queries, galleries, models and their score matrices; dataset ingestion,
// validation and the dense text formats shared with the generator and CLI.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "scorefuse/core.hpp"

namespace scorefuse {

enum class MetricKind { cosine_similarity, euclidean_distance };

inline std::string_view to_string(MetricKind kind) {
  return kind == MetricKind::cosine_similarity ? "cosine" : "euclidean";
}

inline std::optional<MetricKind> parse_metric_kind(std::string_view text) {
  if (text == "cosine") return MetricKind::cosine_similarity;
  if (text == "euclidean") return MetricKind::euclidean_distance;
  return std::nullopt;
}

// Maps a nonnegative Euclidean distance to a similarity in (0, 1].
inline double distance_to_similarity(double distance) {
  if (!std::isfinite(distance) || distance < 0.0)
    throw DomainError("distance_to_similarity: distance must be finite and >= 0");
  return 1.0 / (1.0 + distance);
}

// Per-model |Q|x|G| similarity matrices plus subject labels. Immutable by
// convention once validated; every stored score is a similarity.
struct Dataset {
  std::vector<std::string> model_names;
  std::vector<MetricKind> metric_kinds;  // kind as ingested, before the transform
  std::vector<Matrix> scores;
  std::vector<std::string> query_labels;
  std::vector<std::string> gallery_labels;
  std::optional<Matrix> query_features;  // |Q| x feature_dim
  std::vector<std::string> feature_names;

  std::size_t num_models() const noexcept { return scores.size(); }
  std::size_t num_queries() const noexcept { return query_labels.size(); }
  std::size_t num_gallery() const noexcept { return gallery_labels.size(); }
  std::size_t feature_dim() const noexcept { return query_features ? query_features->cols() : 0; }

  std::optional<std::size_t> model_index(std::string_view name) const {
    for (std::size_t m = 0; m < model_names.size(); ++m)
      if (model_names[m] == name) return m;
    return std::nullopt;
  }
};

// Every violated invariant, one message per issue. Empty means valid.
inline std::vector<std::string> dataset_issues(const Dataset& d) {
  std::vector<std::string> issues;
  if (d.scores.empty()) issues.emplace_back("dataset has no models");
  if (d.model_names.size() != d.scores.size())
    issues.push_back("model name count " + std::to_string(d.model_names.size()) +
                     " != model count " + std::to_string(d.scores.size()));
  if (d.metric_kinds.size() != d.scores.size())
    issues.push_back("metric kind count " + std::to_string(d.metric_kinds.size()) +
                     " != model count " + std::to_string(d.scores.size()));
  if (d.query_labels.empty()) issues.emplace_back("no queries");
  if (d.gallery_labels.empty()) issues.emplace_back("empty gallery");

  const std::size_t nq = d.query_labels.size();
  const std::size_t ng = d.gallery_labels.size();
  for (std::size_t m = 0; m < d.scores.size(); ++m) {
    const Matrix& s = d.scores[m];
    if (s.rows() != nq)
      issues.push_back("model " + std::to_string(m) + ": " + std::to_string(s.rows()) +
                       " score rows != query label count " + std::to_string(nq));
    if (s.cols() != ng)
      issues.push_back("model " + std::to_string(m) + ": " + std::to_string(s.cols()) +
                       " score columns != gallery label count " + std::to_string(ng));
    for (std::size_t q = 0; q < s.rows(); ++q)
      for (std::size_t g = 0; g < s.cols(); ++g)
        if (!std::isfinite(s(q, g)))
          issues.push_back("non-finite score at (model " + std::to_string(m) + ", query " +
                           std::to_string(q) + ", gallery " + std::to_string(g) + ")");
  }
  for (std::size_t q = 0; q < d.query_labels.size(); ++q)
    if (d.query_labels[q].empty()) issues.push_back("empty query label at " + std::to_string(q));
  for (std::size_t g = 0; g < d.gallery_labels.size(); ++g)
    if (d.gallery_labels[g].empty()) issues.push_back("empty gallery label at " + std::to_string(g));

  if (d.query_features) {
    if (d.query_features->rows() != nq)
      issues.push_back("query feature rows " + std::to_string(d.query_features->rows()) +
                       " != |Q| " + std::to_string(nq));
    if (!all_finite(d.query_features->data())) issues.emplace_back("non-finite query feature");
  }
  return issues;
}

inline void validate_dataset(const Dataset& d) {
  auto issues = dataset_issues(d);
  if (issues.empty()) return;
  std::string message = "invalid dataset: " + issues.front();
  if (issues.size() > 1) message += " (and " + std::to_string(issues.size() - 1) + " more)";
  throw ValidationError(std::move(message), std::move(issues));
}

// A model subset (ascending indices) with its anchor. Used both for
// uniform dataset-level selections and for a single trajectory's choice.
struct CombinationCandidate {
  std::vector<std::size_t> subset;
  std::size_t anchor = 0;

  bool valid() const {
    return !subset.empty() && std::is_sorted(subset.begin(), subset.end()) &&
           std::adjacent_find(subset.begin(), subset.end()) == subset.end() &&
           std::find(subset.begin(), subset.end(), anchor) != subset.end();
  }

  friend bool operator==(const CombinationCandidate&, const CombinationCandidate&) = default;
};

// Deterministic total order: smaller subset first, then lexicographic on
// the subset, then on the anchor.
inline bool candidate_order(const CombinationCandidate& a, const CombinationCandidate& b) {
  if (a.subset.size() != b.subset.size()) return a.subset.size() < b.subset.size();
  if (a.subset != b.subset) return a.subset < b.subset;
  return a.anchor < b.anchor;
}

inline std::string describe(const CombinationCandidate& c, std::span<const std::string> names) {
  std::string out = "{";
  for (std::size_t i = 0; i < c.subset.size(); ++i) {
    if (i) out += ',';
    out += c.subset[i] < names.size() ? names[c.subset[i]] : std::to_string(c.subset[i]);
  }
  out += "}@";
  out += c.anchor < names.size() ? names[c.anchor] : std::to_string(c.anchor);
  return out;
}

// Per-query binary model selection with a designated anchor per row.
class SelectionMask {
 public:
  SelectionMask() = default;
  SelectionMask(std::size_t num_queries, std::size_t num_models)
      : num_models_(num_models), bits_(num_queries * num_models, 0), anchors_(num_queries, 0) {}

  // Same subset and anchor for every query.
  static SelectionMask uniform(std::size_t num_queries, std::size_t num_models,
                               const CombinationCandidate& combo) {
    if (!combo.valid()) throw ContractError("SelectionMask::uniform: invalid combination");
    if (combo.subset.back() >= num_models) throw ContractError("SelectionMask::uniform: model index out of range");
    SelectionMask mask(num_queries, num_models);
    for (std::size_t q = 0; q < num_queries; ++q) mask.set_row(q, combo);
    return mask;
  }

  std::size_t num_queries() const noexcept { return anchors_.size(); }
  std::size_t num_models() const noexcept { return num_models_; }

  bool selected(std::size_t q, std::size_t m) const { return bits_[q * num_models_ + m] != 0; }
  void set(std::size_t q, std::size_t m, bool on) { bits_[q * num_models_ + m] = on ? 1 : 0; }

  std::size_t anchor(std::size_t q) const { return anchors_[q]; }
  // Also marks the anchor column selected.
  void set_anchor(std::size_t q, std::size_t m) {
    anchors_[q] = m;
    set(q, m, true);
  }

  void set_row(std::size_t q, const CombinationCandidate& combo) {
    for (std::size_t m = 0; m < num_models_; ++m) set(q, m, false);
    for (std::size_t m : combo.subset) set(q, m, true);
    set_anchor(q, combo.anchor);
  }

  CombinationCandidate row(std::size_t q) const { return {selected_models(q), anchor(q)}; }

  std::vector<std::size_t> selected_models(std::size_t q) const {
    std::vector<std::size_t> out;
    for (std::size_t m = 0; m < num_models_; ++m)
      if (selected(q, m)) out.push_back(m);
    return out;
  }

  std::vector<std::string> issues(std::size_t num_queries, std::size_t num_models) const {
    std::vector<std::string> out;
    if (this->num_queries() != num_queries || num_models_ != num_models) {
      out.push_back("mask shape " + std::to_string(this->num_queries()) + "x" +
                    std::to_string(num_models_) + " != dataset " + std::to_string(num_queries) +
                    "x" + std::to_string(num_models));
      return out;
    }
    for (std::size_t q = 0; q < anchors_.size(); ++q) {
      if (anchors_[q] >= num_models_)
        out.push_back("row " + std::to_string(q) + ": anchor out of range");
      else if (!selected(q, anchors_[q]))
        out.push_back("row " + std::to_string(q) + ": anchor not selected");
    }
    return out;
  }

  void validate_for(const Dataset& d) const {
    auto found = issues(d.num_queries(), d.num_models());
    if (!found.empty()) throw ContractError("invalid selection mask: " + found.front());
  }

  friend bool operator==(const SelectionMask&, const SelectionMask&) = default;

 private:
  std::size_t num_models_ = 0;
  std::vector<std::uint8_t> bits_;
  std::vector<std::size_t> anchors_;
};

// ---------------------------------------------------------------------------
// Text formats

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  return lines;
}

inline double parse_real(std::string_view field, const std::filesystem::path& path,
                         std::size_t row, std::size_t col) {
  field = trim(field);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw IngestError(path.string() + ": row " + std::to_string(row + 1) + ", column " +
                      std::to_string(col + 1) + ": cannot parse '" + std::string(field) + "'");
  if (!std::isfinite(value))
    throw IngestError(path.string() + ": row " + std::to_string(row + 1) + ", column " +
                      std::to_string(col + 1) + ": non-finite value");
  return value;
}

inline std::string format_real(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace detail

// One row per line, comma-separated, all rows equal length.
inline Matrix read_matrix(const std::filesystem::path& path) {
  const auto lines = detail::read_lines(path);
  if (lines.empty()) throw IngestError(path.string() + ": empty matrix file");
  std::vector<double> values;
  std::size_t cols = 0;
  for (std::size_t r = 0; r < lines.size(); ++r) {
    std::string_view line = lines[r];
    std::size_t count = 0;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      const auto field = line.substr(start, comma == std::string_view::npos ? line.npos : comma - start);
      values.push_back(detail::parse_real(field, path, r, count));
      ++count;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (r == 0) cols = count;
    else if (count != cols)
      throw IngestError(path.string() + ": row " + std::to_string(r + 1) + " has " +
                        std::to_string(count) + " values, expected " + std::to_string(cols));
  }
  Matrix m(lines.size(), cols);
  std::copy(values.begin(), values.end(), m.data().begin());
  return m;
}

inline std::string format_matrix(const Matrix& m) {
  std::string out;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      out += detail::format_real(m(r, c));
    }
    out += '\n';
  }
  return out;
}

inline void write_matrix(const std::filesystem::path& path, const Matrix& m) {
  detail::write_file(path, format_matrix(m));
}

inline std::vector<std::string> read_labels(const std::filesystem::path& path) {
  auto lines = detail::read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto t = detail::trim(lines[i]);
    if (t.empty()) throw IngestError(path.string() + ": row " + std::to_string(i + 1) + ": empty subject id");
    lines[i] = std::string(t);
  }
  return lines;
}

// Reads a manifest (JSON) and every file it references. Relative paths are
// resolved against the manifest's directory. Euclidean-distance models are
// converted to similarities here, once.
inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IngestError("cannot open manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IngestError(manifest_path.string() + ": " + e.what());
  }
  const auto base = manifest_path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
  };
  auto required_string = [&](const nlohmann::json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key) || !obj[key].is_string())
      throw IngestError(manifest_path.string() + ": " + where + " missing string field '" + key + "'");
    return obj[key].get<std::string>();
  };

  Dataset d;
  if (!manifest.contains("models") || !manifest["models"].is_array() || manifest["models"].empty())
    throw IngestError(manifest_path.string() + ": 'models' must be a nonempty array");

  d.query_labels = read_labels(resolve(required_string(manifest, "query_labels_file", "manifest")));
  d.gallery_labels = read_labels(resolve(required_string(manifest, "gallery_labels_file", "manifest")));

  const auto& models = manifest["models"];
  for (std::size_t i = 0; i < models.size(); ++i) {
    const std::string where = "models[" + std::to_string(i) + "]";
    const auto name = required_string(models[i], "name", where);
    const auto metric_text = required_string(models[i], "metric", where);
    const auto file = resolve(required_string(models[i], "score_file", where));
    const auto kind = parse_metric_kind(metric_text);
    if (!kind)
      throw IngestError(manifest_path.string() + ": " + where + ": unknown metric '" + metric_text + "'");
    // A model saved after the transform records its original kind separately.
    MetricKind source_kind = *kind;
    if (models[i].contains("source_metric")) {
      const auto src = parse_metric_kind(models[i]["source_metric"].get<std::string>());
      if (!src) throw IngestError(manifest_path.string() + ": " + where + ": unknown source_metric");
      source_kind = *src;
    }

    Matrix s = read_matrix(file);
    if (s.rows() != d.query_labels.size())
      throw IngestError(file.string() + ": " + std::to_string(s.rows()) + " rows but query label count is " +
                        std::to_string(d.query_labels.size()));
    if (s.cols() != d.gallery_labels.size())
      throw IngestError(file.string() + ": gallery label count != |G| (" +
                        std::to_string(d.gallery_labels.size()) + " labels, " + std::to_string(s.cols()) +
                        " score columns)");
    if (*kind == MetricKind::euclidean_distance) {
      for (std::size_t r = 0; r < s.rows(); ++r)
        for (std::size_t c = 0; c < s.cols(); ++c) {
          if (s(r, c) < 0.0)
            throw IngestError(file.string() + ": row " + std::to_string(r + 1) + ", column " +
                              std::to_string(c + 1) + ": negative distance");
          s(r, c) = distance_to_similarity(s(r, c));
        }
    }
    d.model_names.push_back(name);
    d.metric_kinds.push_back(source_kind);
    d.scores.push_back(std::move(s));
  }

  if (manifest.contains("query_features_file") && !manifest["query_features_file"].is_null()) {
    const auto file = resolve(manifest["query_features_file"].get<std::string>());
    Matrix f = read_matrix(file);
    if (f.rows() != d.query_labels.size())
      throw IngestError(file.string() + ": " + std::to_string(f.rows()) + " feature rows but |Q| is " +
                        std::to_string(d.query_labels.size()));
    d.query_features = std::move(f);
    if (manifest.contains("feature_names"))
      d.feature_names = manifest["feature_names"].get<std::vector<std::string>>();
  }

  try {
    validate_dataset(d);
  } catch (const ValidationError& e) {
    throw IngestError(manifest_path.string() + ": " + e.what());
  }
  return d;
}

// Writes manifest.json plus one file per matrix/label list into `dir`.
// Stored scores are similarities, so every model is written as "cosine"
// with its original kind kept under "source_metric".
inline std::filesystem::path save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  validate_dataset(d);
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["models"] = nlohmann::ordered_json::array();
  for (std::size_t m = 0; m < d.num_models(); ++m) {
    const std::string file = "scores_" + std::to_string(m) + ".csv";
    write_matrix(dir / file, d.scores[m]);
    manifest["models"].push_back({{"name", d.model_names[m]},
                                  {"metric", "cosine"},
                                  {"source_metric", std::string(to_string(d.metric_kinds[m]))},
                                  {"score_file", file}});
  }
  auto write_labels = [&](const std::string& file, const std::vector<std::string>& labels) {
    std::string text;
    for (const auto& l : labels) text += l + '\n';
    detail::write_file(dir / file, text);
  };
  write_labels("query_labels.txt", d.query_labels);
  write_labels("gallery_labels.txt", d.gallery_labels);
  manifest["query_labels_file"] = "query_labels.txt";
  manifest["gallery_labels_file"] = "gallery_labels.txt";
  if (d.query_features) {
    write_matrix(dir / "query_features.csv", *d.query_features);
    manifest["query_features_file"] = "query_features.csv";
    if (!d.feature_names.empty()) manifest["feature_names"] = d.feature_names;
  }
  const auto manifest_path = dir / "manifest.json";
  detail::write_file(manifest_path, manifest.dump(2) + '\n');
  return manifest_path;
}

}  // namespace scorefuse
