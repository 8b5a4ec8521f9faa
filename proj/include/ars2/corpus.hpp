#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ars2/random.hpp"

namespace ars2 {

enum class Split { train, valid, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    default: return "test";
  }
}

inline Split split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "valid") return Split::valid;
  if (name == "test") return Split::test;
  throw std::runtime_error("unknown split name: " + name);
}

struct Document {
  std::int64_t id = 0;
  std::string text;
  // Held for evaluation only; never visible to training.
  std::optional<int> gold_label;
};

struct Dataset {
  Split split = Split::train;
  std::vector<Document> docs;
  int num_classes = 0;

  // Pre-materialized rule outputs from the dataset file, row-aligned with
  // docs. Empty when the file carried none.
  std::vector<std::vector<int>> preset_weak_labels;
  int num_rules = 0;

  std::size_t size() const { return docs.size(); }
  bool has_preset_weak_labels() const { return !preset_weak_labels.empty(); }
};

struct ImbalanceSpec {
  double rho = 1.0;  // target max/min class-count ratio
  std::uint64_t seed = 0;
};

struct ClassStats {
  std::vector<std::int64_t> counts;
  std::vector<double> prior;
  double empirical_rho = 1.0;
};

struct NoiseRate {
  double value = 0.0;
  bool empty_coverage = false;
};

// ---------------------------------------------------------------------------
// Dataset file format: a JSON array headed by one metadata object
//   [{"num_classes": C, "num_rules": k}, {"id":..,"text":..,"label":..,
//    "weak_labels":[..]}, ...]
// ---------------------------------------------------------------------------

inline Dataset load_dataset(const std::string& path, Split split) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);

  nlohmann::json root;
  try {
    root = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }

  if (!root.is_array() || root.empty())
    throw std::runtime_error(path + ": no documents");
  const nlohmann::json& meta = root[0];
  if (!meta.is_object() || !meta.contains("num_classes"))
    throw std::runtime_error(path + ": missing metadata head {\"num_classes\": C}");

  Dataset ds;
  ds.split = split;
  ds.num_classes = meta.at("num_classes").get<int>();
  if (ds.num_classes < 2) throw std::runtime_error(path + ": num_classes must be >= 2");
  ds.num_rules = meta.value("num_rules", 0);
  if (root.size() == 1) throw std::runtime_error(path + ": no documents");

  bool any_id = false, all_id = true;
  bool any_weak = false;
  for (std::size_t i = 1; i < root.size(); ++i) {
    const nlohmann::json& obj = root[i];
    if (!obj.is_object() || !obj.contains("text"))
      throw std::runtime_error(path + ": document " + std::to_string(i - 1) + " lacks a text field");
    Document d;
    d.text = obj.at("text").get<std::string>();
    if (obj.contains("id")) {
      any_id = true;
      d.id = obj.at("id").get<std::int64_t>();
      if (d.id < 0) throw std::runtime_error(path + ": negative id on document " + std::to_string(i - 1));
    } else {
      all_id = false;
      d.id = static_cast<std::int64_t>(i - 1);
    }
    if (obj.contains("label") && !obj.at("label").is_null()) {
      const int lab = obj.at("label").get<int>();
      if (lab < 0 || lab >= ds.num_classes)
        throw std::runtime_error(path + ": label " + std::to_string(lab) +
                                 " out of range on document id " + std::to_string(d.id));
      d.gold_label = lab;
    }
    if (obj.contains("weak_labels")) {
      any_weak = true;
      std::vector<int> row = obj.at("weak_labels").get<std::vector<int>>();
      for (int v : row) {
        if (v < -1 || v >= ds.num_classes)
          throw std::runtime_error(path + ": weak label " + std::to_string(v) +
                                   " out of range on document id " + std::to_string(d.id));
      }
      ds.preset_weak_labels.push_back(std::move(row));
    }
    ds.docs.push_back(std::move(d));
  }
  if (any_id && !all_id)
    throw std::runtime_error(path + ": either every document carries an id or none does");
  if (any_weak) {
    if (ds.preset_weak_labels.size() != ds.docs.size())
      throw std::runtime_error(path + ": weak_labels present on some documents but not all");
    const std::size_t k = ds.preset_weak_labels.front().size();
    for (const auto& row : ds.preset_weak_labels) {
      if (row.size() != k) throw std::runtime_error(path + ": weak_labels rows differ in length");
    }
    if (ds.num_rules == 0) ds.num_rules = static_cast<int>(k);
    if (ds.num_rules != static_cast<int>(k))
      throw std::runtime_error(path + ": num_rules does not match weak_labels width");
  }

  // id uniqueness
  std::vector<std::int64_t> ids;
  ids.reserve(ds.docs.size());
  for (const auto& d : ds.docs) ids.push_back(d.id);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw std::runtime_error(path + ": duplicate document ids");
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  nlohmann::json root = nlohmann::json::array();
  nlohmann::json meta = {{"num_classes", ds.num_classes}};
  if (ds.num_rules > 0) meta["num_rules"] = ds.num_rules;
  root.push_back(meta);
  for (std::size_t i = 0; i < ds.docs.size(); ++i) {
    const Document& d = ds.docs[i];
    nlohmann::json obj = {{"id", d.id}, {"text", d.text}};
    if (d.gold_label) obj["label"] = *d.gold_label;
    if (ds.has_preset_weak_labels()) obj["weak_labels"] = ds.preset_weak_labels[i];
    root.push_back(std::move(obj));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);
  out << root.dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Class statistics
// ---------------------------------------------------------------------------

inline ClassStats class_stats(const std::vector<int>& labels, int num_classes) {
  if (labels.empty()) throw std::runtime_error("class_stats: empty label list");
  ClassStats st;
  st.counts.assign(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes)
      throw std::runtime_error("class_stats: label " + std::to_string(y) + " out of range");
    ++st.counts[static_cast<std::size_t>(y)];
  }
  const double n = static_cast<double>(labels.size());
  st.prior.resize(st.counts.size());
  for (std::size_t c = 0; c < st.counts.size(); ++c)
    st.prior[c] = static_cast<double>(st.counts[c]) / n;
  std::int64_t mx = 0, mn = 0;
  for (std::int64_t v : st.counts) {
    if (v == 0) continue;
    if (v > mx) mx = v;
    if (mn == 0 || v < mn) mn = v;
  }
  st.empirical_rho = mn > 0 ? static_cast<double>(mx) / static_cast<double>(mn) : 1.0;
  return st;
}

// ---------------------------------------------------------------------------
// Exponential imbalance construction: the class at descending-count rank i
// keeps floor(n_max * rho^(-i/(C-1))) documents.
// ---------------------------------------------------------------------------

inline std::int64_t imbalance_target(std::int64_t n_max, double rho, int rank, int num_classes) {
  if (num_classes < 2) throw std::runtime_error("build_imbalanced: need at least 2 classes");
  const double expo = -static_cast<double>(rank) / static_cast<double>(num_classes - 1);
  // Nudge guards exact-integer targets against representation dips.
  return static_cast<std::int64_t>(std::floor(static_cast<double>(n_max) * std::pow(rho, expo) + 1e-9));
}

inline Dataset build_imbalanced(const Dataset& dataset, const ImbalanceSpec& spec) {
  if (!(spec.rho >= 1.0) || !std::isfinite(spec.rho))
    throw std::runtime_error("build_imbalanced: rho must be finite and >= 1");
  const int C = dataset.num_classes;
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(C));
  for (std::size_t i = 0; i < dataset.docs.size(); ++i) {
    const Document& d = dataset.docs[i];
    if (!d.gold_label)
      throw std::runtime_error("build_imbalanced: document id " + std::to_string(d.id) +
                               " has no gold label");
    by_class[static_cast<std::size_t>(*d.gold_label)].push_back(i);
  }

  // Rank classes by descending original count, ties by ascending class index.
  std::vector<int> order(static_cast<std::size_t>(C));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return by_class[static_cast<std::size_t>(a)].size() > by_class[static_cast<std::size_t>(b)].size();
  });
  const std::int64_t n_max = static_cast<std::int64_t>(by_class[static_cast<std::size_t>(order[0])].size());

  Rng rng(spec.seed);
  std::vector<char> keep(dataset.docs.size(), 0);
  for (int rank = 0; rank < C; ++rank) {
    auto& idx = by_class[static_cast<std::size_t>(order[static_cast<std::size_t>(rank)])];
    const std::int64_t avail = static_cast<std::int64_t>(idx.size());
    const std::int64_t target = std::min(avail, imbalance_target(n_max, spec.rho, rank, C));
    if (target <= 0 && avail > 0)
      throw std::runtime_error("build_imbalanced: imbalance too extreme, class " +
                               std::to_string(order[static_cast<std::size_t>(rank)]) +
                               " would drop to 0 documents");
    if (target == avail) {
      for (std::size_t i : idx) keep[i] = 1;
      continue;
    }
    // Partial Fisher-Yates: uniform sample of `target` positions.
    for (std::int64_t j = 0; j < target; ++j) {
      const std::size_t pick = static_cast<std::size_t>(j) +
                               static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(avail - j)));
      std::swap(idx[static_cast<std::size_t>(j)], idx[pick]);
      keep[idx[static_cast<std::size_t>(j)]] = 1;
    }
  }

  Dataset out;
  out.split = dataset.split;
  out.num_classes = C;
  out.num_rules = dataset.num_rules;
  for (std::size_t i = 0; i < dataset.docs.size(); ++i) {
    if (!keep[i]) continue;
    out.docs.push_back(dataset.docs[i]);
    if (dataset.has_preset_weak_labels()) out.preset_weak_labels.push_back(dataset.preset_weak_labels[i]);
  }
  return out;
}

// Fraction of covered examples whose pseudo-label disagrees with gold.
inline NoiseRate noise_rate(const std::vector<int>& pseudo, const std::vector<int>& gold,
                            const std::vector<char>& covered) {
  if (pseudo.size() != gold.size() || pseudo.size() != covered.size())
    throw std::runtime_error("noise_rate: length mismatch");
  std::int64_t n = 0, wrong = 0;
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    if (!covered[i]) continue;
    ++n;
    if (pseudo[i] != gold[i]) ++wrong;
  }
  if (n == 0) return {0.0, true};
  return {static_cast<double>(wrong) / static_cast<double>(n), false};
}

inline std::vector<int> gold_labels(const Dataset& ds) {
  std::vector<int> out;
  out.reserve(ds.docs.size());
  for (const auto& d : ds.docs) {
    if (!d.gold_label)
      throw std::runtime_error("dataset " + std::string(split_name(ds.split)) +
                               ": document id " + std::to_string(d.id) + " has no gold label");
    out.push_back(*d.gold_label);
  }
  return out;
}

}  // namespace ars2
