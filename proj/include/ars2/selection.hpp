#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ars2/end_model.hpp"
#include "ars2/rules.hpp"

namespace ars2 {

// ---------------------------------------------------------------------------
// Margin scoring
// ---------------------------------------------------------------------------

enum class ScoreMode { margin, confidence };

inline ScoreMode score_mode_from_name(const std::string& name) {
  if (name == "margin") return ScoreMode::margin;
  if (name == "confidence") return ScoreMode::confidence;
  throw std::runtime_error("unknown score mode: " + name);
}

inline const char* score_mode_name(ScoreMode m) {
  return m == ScoreMode::margin ? "margin" : "confidence";
}

// Margin mode: probability of the pseudo-class minus the strongest other
// class, in [-1,1]; negative means the model disagrees with the pseudo-label.
// Confidence mode keeps just the pseudo-class probability.
inline double pms(const std::vector<double>& probs, int pseudo_label,
                  ScoreMode mode = ScoreMode::margin) {
  const int C = static_cast<int>(probs.size());
  if (C < 2) throw std::runtime_error("pms: need at least two classes");
  if (pseudo_label < 0 || pseudo_label >= C) throw std::runtime_error("pms: pseudo-label out of range");
  const double own = probs[static_cast<std::size_t>(pseudo_label)];
  if (mode == ScoreMode::confidence) return own;
  double best_other = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < C; ++c)
    if (c != pseudo_label) best_other = std::max(best_other, probs[static_cast<std::size_t>(c)]);
  return own - best_other;
}

// Scores for covered examples; uncovered slots hold NaN and are never read by
// the selectors. Recomputed from the current model every selection step.
struct ScoreTable {
  std::vector<double> scores;
  std::vector<char> covered;
  int step = 0;
};

inline ScoreTable score_dataset(const MlpModel& model, const std::vector<FeatureVector>& feats,
                                const std::vector<int>& pseudo_labels,
                                const std::vector<char>& covered, ScoreMode mode,
                                int step = 0) {
  if (feats.size() != pseudo_labels.size() || feats.size() != covered.size())
    throw std::runtime_error("score_dataset: input length mismatch");
  ScoreTable table;
  table.step = step;
  table.covered = covered;
  table.scores.assign(feats.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < feats.size(); ++i) {
    if (covered[i] == 0) continue;
    if (pseudo_labels[i] < 0)
      throw std::runtime_error("score_dataset: covered example without pseudo-label");
    const std::vector<double> p = forward(model, feats[i]);
    table.scores[i] = pms(p, pseudo_labels[i], mode);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Dynamic-rate batch sizing: per-group k grows linearly from floor(B/C) at
// t=0 to floor(gamma*B/C) at t=T_s, never below 1.
// ---------------------------------------------------------------------------

inline int dynamic_k(int budget, int num_classes, int t, int selection_steps, double gamma) {
  if (budget < 1) throw std::runtime_error("dynamic_k: budget must be >= 1");
  if (num_classes < 1) throw std::runtime_error("dynamic_k: num_classes must be >= 1");
  if (selection_steps < 1) throw std::runtime_error("dynamic_k: selection_steps must be >= 1");
  if (t < 0 || t > selection_steps) throw std::runtime_error("dynamic_k: step out of range");
  if (gamma < 1.0) throw std::runtime_error("dynamic_k: gamma must be >= 1");
  const double base = static_cast<double>(budget) / static_cast<double>(num_classes);
  const double scale = 1.0 + static_cast<double>(t) * (gamma - 1.0) / static_cast<double>(selection_steps);
  const int k = static_cast<int>(std::floor(base * scale + 1e-9));
  return std::max(1, k);
}

// ---------------------------------------------------------------------------
// Ranking selectors. Candidates are sorted by score descending with ties
// broken by ascending index, so selections are deterministic.
// ---------------------------------------------------------------------------

namespace detail {

inline void sort_by_score_desc(std::vector<int>& idx, const std::vector<double>& scores) {
  std::sort(idx.begin(), idx.end(), [&scores](int a, int b) {
    const double sa = scores[static_cast<std::size_t>(a)];
    const double sb = scores[static_cast<std::size_t>(b)];
    if (sa != sb) return sa > sb;
    return a < b;
  });
}

}  // namespace detail

struct CrSelection {
  std::vector<std::vector<int>> per_class;  // ascending-rank order within each class
};

// Per pseudo-class: top k by score among examples strictly above xi. Classes
// short on qualifying examples contribute fewer; nothing is backfilled.
inline CrSelection class_wise_select(const ScoreTable& table, const std::vector<int>& pseudo_labels,
                                     int num_classes, int k, double xi) {
  if (k < 1) throw std::runtime_error("class_wise_select: k must be >= 1");
  if (table.scores.size() != pseudo_labels.size())
    throw std::runtime_error("class_wise_select: input length mismatch");
  CrSelection sel;
  sel.per_class.resize(static_cast<std::size_t>(num_classes));
  std::vector<std::vector<int>> candidates(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < table.scores.size(); ++i) {
    if (table.covered[i] == 0) continue;
    const int y = pseudo_labels[i];
    if (y < 0 || y >= num_classes) throw std::runtime_error("class_wise_select: pseudo-label out of range");
    if (table.scores[i] > xi) candidates[static_cast<std::size_t>(y)].push_back(static_cast<int>(i));
  }
  for (int c = 0; c < num_classes; ++c) {
    std::vector<int>& cand = candidates[static_cast<std::size_t>(c)];
    detail::sort_by_score_desc(cand, table.scores);
    if (cand.size() > static_cast<std::size_t>(k)) cand.resize(static_cast<std::size_t>(k));
    sel.per_class[static_cast<std::size_t>(c)] = std::move(cand);
  }
  return sel;
}

struct RrEntry {
  int index = 0;
  int label = 0;      // unipolar agreed label when one exists, else pseudo-label
  int rule = 0;       // lowest rule index that ranked the example
  bool relabeled = false;
};

struct RrSelection {
  std::vector<std::vector<int>> per_rule;
  std::vector<RrEntry> entries;  // deduplicated union, ascending index
};

// Per rule: top k by score among the rule's covered set, no threshold. The
// union deduplicates by index; unipolar rows carry their agreed weak label.
inline RrSelection rule_aware_select(const ScoreTable& table, const WeakLabelMatrix& matrix,
                                     const std::vector<int>& pseudo_labels, int k) {
  if (k < 1) throw std::runtime_error("rule_aware_select: k must be >= 1");
  if (table.scores.size() != matrix.rows() || pseudo_labels.size() != matrix.rows())
    throw std::runtime_error("rule_aware_select: input length mismatch");
  const std::size_t R = matrix.cols();
  RrSelection sel;
  sel.per_rule.resize(R);
  for (std::size_t r = 0; r < R; ++r) {
    std::vector<int> cand;
    for (std::size_t i = 0; i < matrix.rows(); ++i)
      if (matrix.values[i][r] != kAbstain) cand.push_back(static_cast<int>(i));
    detail::sort_by_score_desc(cand, table.scores);
    if (cand.size() > static_cast<std::size_t>(k)) cand.resize(static_cast<std::size_t>(k));
    sel.per_rule[r] = std::move(cand);
  }
  std::map<int, int> first_rule;  // index -> lowest selecting rule
  for (std::size_t r = 0; r < R; ++r)
    for (int idx : sel.per_rule[r]) first_rule.emplace(idx, static_cast<int>(r));
  for (const auto& [idx, rule] : first_rule) {
    RrEntry e;
    e.index = idx;
    e.rule = rule;
    const auto uni = unipolar_label(matrix.values[static_cast<std::size_t>(idx)]);
    if (uni.has_value()) {
      e.label = *uni;
      e.relabeled = true;
    } else {
      e.label = pseudo_labels[static_cast<std::size_t>(idx)];
    }
    sel.entries.push_back(e);
  }
  return sel;
}

// ---------------------------------------------------------------------------
// Orchestration: warm-up then selection-driven continual training.
// ---------------------------------------------------------------------------

struct Ars2Config {
  double gamma = 4.0;
  double xi = 0.0;
  int selection_steps = 10;
  int batch_size = 128;   // selection budget B of the dynamic-rate rule
  int inner_updates = 0;  // optimizer updates per step; 0 means one pass over the batch
  ScoreMode score_mode = ScoreMode::margin;
  bool use_cr = true;
  bool use_rr = true;

  // Throws on hard violations, returns soft warnings.
  std::vector<std::string> validate(int num_classes) const {
    if (gamma < 1.0) throw std::runtime_error("ars2 config: gamma must be >= 1");
    if (selection_steps < 1) throw std::runtime_error("ars2 config: selection_steps must be >= 1");
    if (batch_size < 1) throw std::runtime_error("ars2 config: batch_size must be >= 1");
    if (inner_updates < 0) throw std::runtime_error("ars2 config: inner_updates must be >= 0");
    if (!use_cr && !use_rr) throw std::runtime_error("ars2 config: no selector enabled");
    std::vector<std::string> warnings;
    if (batch_size < num_classes)
      warnings.push_back("selection budget " + std::to_string(batch_size) +
                         " is below the class count " + std::to_string(num_classes));
    return warnings;
  }
};

enum class Provenance { class_rank, rule_rank };

struct SelectionEntry {
  int index = 0;
  int label = 0;
  Provenance source = Provenance::class_rank;
  int group = 0;  // class for CR entries, rule for RR entries
};

struct SelectionBatch {
  int step = 0;
  std::vector<SelectionEntry> entries;  // ascending index
};

struct StepRecord {
  int step = 0;
  int k = 0;
  std::size_t cr_size = 0;
  std::size_t rr_size = 0;
  std::size_t union_size = 0;
  std::vector<int> per_class_counts;
  std::vector<int> per_rule_counts;
  int relabel_count = 0;
  double cleanliness = -1.0;  // fraction matching gold; -1 when gold absent
  bool skipped = false;
};

struct ContinualResult {
  MlpModel model;
  std::vector<SelectionBatch> batches;
  std::vector<StepRecord> records;
  TrainHistory history;
  std::vector<std::string> warnings;
};

inline MlpModel warm_up(MlpModel model, const std::vector<FeatureVector>& feats,
                        const std::vector<int>& pseudo_labels, const std::vector<char>& covered,
                        const EvalSet& dev, const TrainConfig& cfg,
                        TrainHistory* history = nullptr) {
  if (feats.size() != pseudo_labels.size() || feats.size() != covered.size())
    throw std::runtime_error("warm_up: input length mismatch");
  std::vector<TrainExample> examples;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    if (covered[i] == 0) continue;
    if (pseudo_labels[i] < 0) throw std::runtime_error("warm_up: covered example without pseudo-label");
    examples.push_back({static_cast<int>(i), pseudo_labels[i]});
  }
  if (examples.empty()) throw std::runtime_error("warm_up: no covered examples");
  return train(std::move(model), feats, examples, dev, cfg, history);
}

// One selection step's batch: CR and RR unions merged by index, the RR label
// and provenance winning on overlap.
inline SelectionBatch merge_selections(const CrSelection* cr, const RrSelection* rr,
                                       const std::vector<int>& pseudo_labels, int step) {
  std::map<int, SelectionEntry> merged;
  if (cr != nullptr) {
    for (std::size_t c = 0; c < cr->per_class.size(); ++c)
      for (int idx : cr->per_class[c]) {
        SelectionEntry e;
        e.index = idx;
        e.label = pseudo_labels[static_cast<std::size_t>(idx)];
        e.source = Provenance::class_rank;
        e.group = static_cast<int>(c);
        merged[idx] = e;
      }
  }
  if (rr != nullptr) {
    for (const RrEntry& re : rr->entries) {
      SelectionEntry e;
      e.index = re.index;
      e.label = re.label;
      e.source = Provenance::rule_rank;
      e.group = re.rule;
      merged[re.index] = e;
    }
  }
  SelectionBatch batch;
  batch.step = step;
  batch.entries.reserve(merged.size());
  for (const auto& [idx, e] : merged) batch.entries.push_back(e);
  return batch;
}

inline ContinualResult continual_train(MlpModel model, const std::vector<FeatureVector>& feats,
                                       const std::vector<int>& pseudo_labels,
                                       const WeakLabelMatrix& matrix, const EvalSet& dev,
                                       const Ars2Config& acfg, const TrainConfig& tcfg,
                                       const std::vector<int>* gold_for_audit = nullptr) {
  tcfg.validate();
  ContinualResult result;
  result.warnings = acfg.validate(model.num_classes);
  if (feats.size() != matrix.rows() || pseudo_labels.size() != matrix.rows())
    throw std::runtime_error("continual_train: input length mismatch");
  if (dev.features == nullptr || dev.labels == nullptr || dev.features->empty())
    throw std::runtime_error("continual_train: missing dev set");
  if (gold_for_audit != nullptr && gold_for_audit->size() != feats.size())
    throw std::runtime_error("continual_train: gold audit length mismatch");

  const int C = model.num_classes;
  const std::vector<char> covered = covered_mask(matrix);
  Rng shuffle_rng(Rng::derive(tcfg.seed, 0x63747368));
  Rng dropout_rng(Rng::derive(tcfg.seed, 0x63746472));
  AdamWState opt = AdamWState::init(model.param_count());
  detail::EarlyStopper stopper;
  TrainHistory& hist = result.history;

  // The warmed model competes as the initial best-dev candidate.
  stopper.record(evaluate_macro_f1(model, *dev.features, *dev.labels), 0, model, tcfg.patience, hist);

  std::vector<double> grads;
  std::vector<TrainExample> order;
  bool any_selected = false;
  bool stop = false;
  int updates = 0;
  int updates_since_eval = 0;

  for (int t = 1; t <= acfg.selection_steps && !stop; ++t) {
    const ScoreTable table = score_dataset(model, feats, pseudo_labels, covered, acfg.score_mode, t);
    const int k = dynamic_k(acfg.batch_size, C, t, acfg.selection_steps, acfg.gamma);

    CrSelection cr;
    RrSelection rr;
    if (acfg.use_cr) cr = class_wise_select(table, pseudo_labels, C, k, acfg.xi);
    if (acfg.use_rr) rr = rule_aware_select(table, matrix, pseudo_labels, k);
    SelectionBatch batch = merge_selections(acfg.use_cr ? &cr : nullptr,
                                            acfg.use_rr ? &rr : nullptr, pseudo_labels, t);

    StepRecord rec;
    rec.step = t;
    rec.k = k;
    rec.per_class_counts.assign(static_cast<std::size_t>(C), 0);
    rec.per_rule_counts.assign(matrix.cols(), 0);
    if (acfg.use_cr)
      for (std::size_t c = 0; c < cr.per_class.size(); ++c) {
        rec.per_class_counts[c] = static_cast<int>(cr.per_class[c].size());
        rec.cr_size += cr.per_class[c].size();
      }
    if (acfg.use_rr) {
      for (std::size_t r = 0; r < rr.per_rule.size(); ++r)
        rec.per_rule_counts[r] = static_cast<int>(rr.per_rule[r].size());
      rec.rr_size = rr.entries.size();
    }
    rec.union_size = batch.entries.size();
    for (const SelectionEntry& e : batch.entries)
      if (e.label != pseudo_labels[static_cast<std::size_t>(e.index)]) ++rec.relabel_count;
    if (gold_for_audit != nullptr && !batch.entries.empty()) {
      std::size_t clean = 0;
      for (const SelectionEntry& e : batch.entries)
        if (e.label == (*gold_for_audit)[static_cast<std::size_t>(e.index)]) ++clean;
      rec.cleanliness = static_cast<double>(clean) / static_cast<double>(batch.entries.size());
    }

    if (batch.entries.empty()) {
      rec.skipped = true;
      result.warnings.push_back("selection step " + std::to_string(t) + " produced no examples");
      result.records.push_back(rec);
      result.batches.push_back(std::move(batch));
      continue;
    }
    any_selected = true;

    LossContext ctx;
    if (tcfg.loss_mode != LossMode::plain) {
      std::vector<std::int64_t> counts(static_cast<std::size_t>(C), 0);
      for (const SelectionEntry& e : batch.entries) ++counts[static_cast<std::size_t>(e.label)];
      ctx = make_loss_context(tcfg.loss_mode, counts, tcfg.en_beta);
    }

    order.clear();
    for (const SelectionEntry& e : batch.entries) order.push_back({e.index, e.label});
    const int passes_needed = acfg.inner_updates > 0
            ? acfg.inner_updates
            : static_cast<int>((order.size() + tcfg.batch_size - 1) /
                               static_cast<std::size_t>(tcfg.batch_size));
    std::size_t cursor = order.size();  // force a shuffle first
    for (int u = 0; u < passes_needed && !stop; ++u) {
      if (cursor >= order.size()) {
        shuffle_rng.shuffle(order);
        cursor = 0;
      }
      const std::size_t n = std::min(static_cast<std::size_t>(tcfg.batch_size), order.size() - cursor);
      loss_and_grad(model, feats, order.data() + cursor, n, ctx, tcfg.dropout_rate, &dropout_rng, grads);
      adamw_step(model, opt, grads, tcfg.learning_rate, tcfg.weight_decay);
      cursor += n;
      ++updates;
      ++updates_since_eval;
      if (updates % tcfg.eval_every == 0) {
        updates_since_eval = 0;
        const double f1 = evaluate_macro_f1(model, *dev.features, *dev.labels);
        if (stopper.record(f1, updates, model, tcfg.patience, hist)) {
          hist.stopped_early = true;
          stop = true;
        }
      }
    }
    result.records.push_back(rec);
    result.batches.push_back(std::move(batch));
  }

  if (!any_selected) throw std::runtime_error("selection starved");
  if (!stop && updates_since_eval > 0)
    stopper.record(evaluate_macro_f1(model, *dev.features, *dev.labels), updates, model,
                   tcfg.patience, hist);
  hist.steps_run = updates;
  stopper.restore(model, hist);
  result.model = std::move(model);
  return result;
}

}  // namespace ars2
