#pragma once

#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ars2/corpus.hpp"
#include "ars2/random.hpp"

namespace ars2 {

inline constexpr int kAbstain = -1;

// A keyword rule: assigns its associated label when any pattern occurs as a
// substring of the lowercased text, abstains (-1) otherwise.
struct Rule {
  int id = 0;
  int label = 0;
  std::vector<std::string> patterns;
};

struct RuleSet {
  std::vector<Rule> rules;
  int num_rules() const { return static_cast<int>(rules.size()); }
};

struct WeakLabelMatrix {
  // values[x][i] = l_i(x) in {-1} U {0..C-1}, row order matches dataset order.
  std::vector<std::vector<int>> values;
  int num_classes = 0;

  std::size_t rows() const { return values.size(); }
  int cols() const { return values.empty() ? 0 : static_cast<int>(values.front().size()); }
  bool row_covered(std::size_t x) const {
    for (int v : values[x])
      if (v >= 0) return true;
    return false;
  }
};

// Ruleset file: JSON array of {"label": int, "patterns": [string,...]},
// rule id = array position.
inline RuleSet load_ruleset(const std::string& path, int num_classes) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open ruleset file: " + path);
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  if (!root.is_array()) throw std::runtime_error(path + ": ruleset must be a JSON array");
  RuleSet rs;
  for (std::size_t i = 0; i < root.size(); ++i) {
    Rule r;
    r.id = static_cast<int>(i);
    r.label = root[i].at("label").get<int>();
    if (r.label < 0 || r.label >= num_classes)
      throw std::runtime_error(path + ": rule " + std::to_string(i) + " label out of range");
    r.patterns = root[i].at("patterns").get<std::vector<std::string>>();
    if (r.patterns.empty())
      throw std::runtime_error(path + ": rule " + std::to_string(i) + " has no patterns");
    for (auto& p : r.patterns) p = to_lower(p);
    rs.rules.push_back(std::move(r));
  }
  return rs;
}

inline void save_ruleset(const RuleSet& rs, const std::string& path) {
  nlohmann::json root = nlohmann::json::array();
  for (const Rule& r : rs.rules) root.push_back({{"label", r.label}, {"patterns", r.patterns}});
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write ruleset file: " + path);
  out << root.dump() << '\n';
}

// Pre-materialized weak labels in the dataset override rule evaluation, so
// externally produced matrices can be replayed.
inline WeakLabelMatrix apply_ruleset(const RuleSet& ruleset, const Dataset& dataset) {
  if (dataset.has_preset_weak_labels()) {
    WeakLabelMatrix m;
    m.values = dataset.preset_weak_labels;
    m.num_classes = dataset.num_classes;
    return m;
  }
  if (ruleset.rules.empty()) throw std::runtime_error("apply_ruleset: empty ruleset");
  for (const Rule& r : ruleset.rules) {
    if (r.label < 0 || r.label >= dataset.num_classes)
      throw std::runtime_error("apply_ruleset: rule " + std::to_string(r.id) + " label out of range");
  }
  WeakLabelMatrix m;
  m.num_classes = dataset.num_classes;
  m.values.resize(dataset.docs.size());
  for (std::size_t x = 0; x < dataset.docs.size(); ++x) {
    const std::string text = to_lower(dataset.docs[x].text);
    std::vector<int>& row = m.values[x];
    row.assign(ruleset.rules.size(), -1);
    for (std::size_t i = 0; i < ruleset.rules.size(); ++i) {
      for (const std::string& p : ruleset.rules[i].patterns) {
        if (text.find(p) != std::string::npos) {
          row[i] = ruleset.rules[i].label;
          break;
        }
      }
    }
  }
  return m;
}

// Fraction of rows with at least one non-abstain entry.
inline double coverage(const WeakLabelMatrix& matrix) {
  if (matrix.rows() == 0) throw std::runtime_error("coverage: empty matrix");
  std::size_t covered = 0;
  for (std::size_t x = 0; x < matrix.rows(); ++x)
    if (matrix.row_covered(x)) ++covered;
  return static_cast<double>(covered) / static_cast<double>(matrix.rows());
}

inline std::vector<char> covered_mask(const WeakLabelMatrix& matrix) {
  std::vector<char> mask(matrix.rows(), 0);
  for (std::size_t x = 0; x < matrix.rows(); ++x) mask[x] = matrix.row_covered(x) ? 1 : 0;
  return mask;
}

// The agreed label when all non-abstain entries of the row coincide; nothing
// on an all-abstain or conflicting row.
inline std::optional<int> unipolar_label(const std::vector<int>& row) {
  std::optional<int> agreed;
  for (int v : row) {
    if (v < 0) continue;
    if (!agreed) {
      agreed = v;
    } else if (*agreed != v) {
      return std::nullopt;
    }
  }
  return agreed;
}

// Per-rule covered index lists, ascending within each rule.
inline std::vector<std::vector<std::size_t>> rule_subsets(const WeakLabelMatrix& matrix) {
  std::vector<std::vector<std::size_t>> subsets(static_cast<std::size_t>(matrix.cols()));
  for (std::size_t x = 0; x < matrix.rows(); ++x) {
    const auto& row = matrix.values[x];
    for (std::size_t i = 0; i < row.size(); ++i)
      if (row[i] >= 0) subsets[i].push_back(x);
  }
  return subsets;
}

}  // namespace ars2
