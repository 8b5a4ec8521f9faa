#pragma once

// Shared fixtures and oracles for the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "ars2/end_model.hpp"
#include "ars2/random.hpp"
#include "ars2/selection.hpp"

namespace testutil {

// Analytic backprop versus central finite differences on one small network.
// Returns the maximum relative error across every parameter. Models whose
// hidden pre-activations sit within `margin` of the ReLU kink are resampled,
// since a crossing would invalidate the difference quotient, not the gradient.
inline double gradient_check_max_rel_error(std::uint64_t seed, ars2::LossMode mode,
                                           int input_dim = 6, int hidden_dim = 5,
                                           int num_classes = 3, int batch = 3,
                                           double h = 1e-5, double margin = 1e-3) {
  using namespace ars2;
  Rng rng(seed);
  std::vector<FeatureVector> feats;
  std::vector<TrainExample> examples;
  MlpModel model;

  for (int attempt = 0;; ++attempt) {
    if (attempt > 200) throw std::runtime_error("gradient check: could not find a kink-free fixture");
    feats.clear();
    examples.clear();
    for (int b = 0; b < batch; ++b) {
      FeatureVector x;
      x.dim = input_dim;
      for (int d = 0; d < input_dim; ++d)
        if (rng.bernoulli(0.7)) x.entries.emplace_back(d, rng.normal());
      if (x.entries.empty()) x.entries.emplace_back(0, 1.0);
      feats.push_back(std::move(x));
      examples.push_back({b, rng.below_int(num_classes)});
    }
    model = MlpModel::init(input_dim, hidden_dim, num_classes, rng.next_u64());
    // Wider-than-He weights push pre-activations away from zero.
    for (double& p : model.params) p *= 3.0;

    bool safe = true;
    detail::ForwardCache cache;
    for (const FeatureVector& x : feats) {
      detail::mlp_forward(model, x, false, 0.0, nullptr, cache);
      for (double v : cache.pre1) safe = safe && std::abs(v) > margin;
      for (double v : cache.pre2) safe = safe && std::abs(v) > margin;
    }
    if (safe) break;
  }

  std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (const TrainExample& e : examples) ++counts[static_cast<std::size_t>(e.label)];
  const LossContext ctx = mode == LossMode::plain
          ? LossContext{}
          : make_loss_context(mode, counts, 0.9);

  std::vector<double> grads;
  loss_and_grad(model, feats, examples.data(), examples.size(), ctx, 0.0, nullptr, grads);

  auto loss_at = [&](const MlpModel& m) {
    std::vector<double> scratch;
    return loss_and_grad(m, feats, examples.data(), examples.size(), ctx, 0.0, nullptr, scratch);
  };

  double worst = 0.0;
  for (std::size_t i = 0; i < model.param_count(); ++i) {
    MlpModel plus = model, minus = model;
    plus.params[i] += h;
    minus.params[i] -= h;
    const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
    // The denominator floor sits above the difference quotient's own noise
    // (~1e-10 absolute from cancellation at h=1e-5), so components whose true
    // gradient is below any trainable scale cannot fail the check spuriously.
    const double denom = std::max({std::abs(fd), std::abs(grads[i]), 1e-5});
    worst = std::max(worst, std::abs(fd - grads[i]) / denom);
  }
  return worst;
}

// Two well-separated keyword vocabularies; trivially learnable.
struct ToySet {
  std::vector<ars2::FeatureVector> feats;
  std::vector<int> labels;
  std::vector<ars2::TrainExample> examples;
};

inline ToySet separable_toy_set(int per_class, int feature_dim, std::uint64_t seed) {
  static const char* bank[2][6] = {
      {"alpha", "bravo", "charlie", "delta", "echo", "foxtrot"},
      {"unicorn", "victor", "whiskey", "xray", "yankee", "zulu"},
  };
  ars2::Rng rng(seed);
  ToySet out;
  for (int i = 0; i < 2 * per_class; ++i) {
    const int y = i % 2;
    std::string text;
    for (int w = 0; w < 5; ++w) {
      if (!text.empty()) text += ' ';
      text += bank[y][rng.below_int(6)];
    }
    out.feats.push_back(ars2::featurize(text, feature_dim));
    out.labels.push_back(y);
    out.examples.push_back({i, y});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Randomized selection fixtures. Scores live on a 1/64 grid and transforms
// use small dyadic coefficients, so affine rescaling is exact in binary and
// the monotone-invariance check is free of rounding ambiguity.
// ---------------------------------------------------------------------------

struct SelectionCase {
  ars2::ScoreTable table;
  std::vector<int> pseudo;
  ars2::WeakLabelMatrix matrix;
  int num_classes = 2;
  int k = 1;
  double xi = 0.0;
};

inline SelectionCase random_selection_case(ars2::Rng& rng) {
  SelectionCase sc;
  const int n = 1 + rng.below_int(60);
  sc.num_classes = 2 + rng.below_int(4);
  const int rules = 1 + rng.below_int(5);
  sc.k = 1 + rng.below_int(8);
  sc.xi = (rng.below_int(129) - 64) / 64.0;
  sc.matrix.num_classes = sc.num_classes;
  for (int i = 0; i < n; ++i) {
    std::vector<int> row(static_cast<std::size_t>(rules), -1);
    for (int r = 0; r < rules; ++r)
      if (rng.bernoulli(0.5)) row[static_cast<std::size_t>(r)] = rng.below_int(sc.num_classes);
    sc.matrix.values.push_back(std::move(row));
  }
  for (int i = 0; i < n; ++i) {
    const bool cov = sc.matrix.row_covered(static_cast<std::size_t>(i));
    sc.table.covered.push_back(cov ? 1 : 0);
    sc.pseudo.push_back(cov ? rng.below_int(sc.num_classes) : -1);
    sc.table.scores.push_back(cov ? (rng.below_int(129) - 64) / 64.0
                                  : std::numeric_limits<double>::quiet_NaN());
  }
  return sc;
}

namespace detail {

inline std::vector<int> top_k_by_score(std::vector<int> cand, const std::vector<double>& scores,
                                       int k) {
  std::sort(cand.begin(), cand.end(), [&scores](int a, int b) {
    const double sa = scores[static_cast<std::size_t>(a)];
    const double sb = scores[static_cast<std::size_t>(b)];
    if (sa != sb) return sa > sb;
    return a < b;
  });
  if (cand.size() > static_cast<std::size_t>(k)) cand.resize(static_cast<std::size_t>(k));
  return cand;
}

}  // namespace detail

// Re-derives every selector output from first principles and counts
// disagreements with the library. Zero means the case holds.
inline int selection_invariant_violations(const SelectionCase& sc) {
  using namespace ars2;
  int bad = 0;
  const CrSelection cr = class_wise_select(sc.table, sc.pseudo, sc.num_classes, sc.k, sc.xi);
  const RrSelection rr = rule_aware_select(sc.table, sc.matrix, sc.pseudo, sc.k);

  // Class-wise ranking against a brute-force rebuild.
  if (cr.per_class.size() != static_cast<std::size_t>(sc.num_classes)) ++bad;
  for (int c = 0; c < sc.num_classes; ++c) {
    std::vector<int> want;
    for (std::size_t i = 0; i < sc.table.scores.size(); ++i)
      if (sc.table.covered[i] != 0 && sc.pseudo[i] == c && sc.table.scores[i] > sc.xi)
        want.push_back(static_cast<int>(i));
    want = detail::top_k_by_score(std::move(want), sc.table.scores, sc.k);
    if (cr.per_class[static_cast<std::size_t>(c)] != want) ++bad;
  }

  // Monotone rescaling of scores and threshold must not move the cut.
  {
    static const double kA[] = {0.5, 1.5, 2.0, 4.0};
    static const double kB[] = {-0.25, 0.0, 0.5};
    const double a = kA[(sc.matrix.rows() + static_cast<std::size_t>(sc.k)) % 4];
    const double b = kB[sc.matrix.rows() % 3];
    ScoreTable scaled = sc.table;
    for (double& s : scaled.scores)
      if (!std::isnan(s)) s = a * s + b;
    const CrSelection cr2 =
        class_wise_select(scaled, sc.pseudo, sc.num_classes, sc.k, a * sc.xi + b);
    if (cr2.per_class != cr.per_class) ++bad;
    const RrSelection rr2 = rule_aware_select(scaled, sc.matrix, sc.pseudo, sc.k);
    if (rr2.per_rule != rr.per_rule) ++bad;
  }

  // Rule-aware ranking: per-rule top-k over each rule's covered set.
  if (rr.per_rule.size() != static_cast<std::size_t>(sc.matrix.cols())) ++bad;
  for (std::size_t r = 0; r < static_cast<std::size_t>(sc.matrix.cols()); ++r) {
    std::vector<int> want;
    for (std::size_t i = 0; i < sc.matrix.rows(); ++i)
      if (sc.matrix.values[i][r] != kAbstain) want.push_back(static_cast<int>(i));
    want = detail::top_k_by_score(std::move(want), sc.table.scores, sc.k);
    if (rr.per_rule[r] != want) ++bad;
  }

  // Union entries: deduplicated, ascending, lowest rule wins, agreed weak
  // labels override the pseudo-label.
  {
    std::map<int, int> first_rule;
    for (std::size_t r = 0; r < rr.per_rule.size(); ++r)
      for (int idx : rr.per_rule[r]) first_rule.emplace(idx, static_cast<int>(r));
    if (rr.entries.size() != first_rule.size()) ++bad;
    int prev = -1;
    for (const RrEntry& e : rr.entries) {
      if (e.index <= prev) ++bad;
      prev = e.index;
      const auto it = first_rule.find(e.index);
      if (it == first_rule.end() || it->second != e.rule) ++bad;
      const auto uni = unipolar_label(sc.matrix.values[static_cast<std::size_t>(e.index)]);
      const int want_label = uni.has_value() ? *uni : sc.pseudo[static_cast<std::size_t>(e.index)];
      if (e.label != want_label) ++bad;
      if (e.relabeled != uni.has_value()) ++bad;
    }
  }

  // Merged batch: ascending unique indices, rule-rank provenance wins.
  {
    const SelectionBatch batch = merge_selections(&cr, &rr, sc.pseudo, 3);
    std::map<int, SelectionEntry> want;
    for (std::size_t c = 0; c < cr.per_class.size(); ++c)
      for (int idx : cr.per_class[c])
        want[idx] = SelectionEntry{idx, sc.pseudo[static_cast<std::size_t>(idx)],
                                   Provenance::class_rank, static_cast<int>(c)};
    for (const RrEntry& e : rr.entries)
      want[e.index] = SelectionEntry{e.index, e.label, Provenance::rule_rank, e.rule};
    if (batch.entries.size() != want.size()) ++bad;
    int prev = -1;
    for (const SelectionEntry& e : batch.entries) {
      if (e.index <= prev) ++bad;
      prev = e.index;
      const auto it = want.find(e.index);
      if (it == want.end() || it->second.label != e.label || it->second.source != e.source ||
          it->second.group != e.group)
        ++bad;
    }
  }
  return bad;
}

}  // namespace testutil
