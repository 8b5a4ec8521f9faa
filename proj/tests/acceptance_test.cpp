// Shipping gate. One test per release criterion, run in order; each prints a
// single [ACCEPTANCE] verdict line so the log doubles as the checklist.
// Tolerances and the end-to-end configuration are frozen here on purpose:
// any behavioural drift in the library should trip one of these.

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <vector>

#include "ars2/corpus.hpp"
#include "ars2/end_model.hpp"
#include "ars2/harness.hpp"
#include "ars2/label_model.hpp"
#include "ars2/rules.hpp"
#include "ars2/selection.hpp"
#include "test_util.hpp"

namespace {

using namespace ars2;

void verdict(int number, const char* label, bool pass) {
  std::printf("[ACCEPTANCE] criterion %d (%s): %s\n", number, label, pass ? "PASS" : "FAIL");
  std::fflush(stdout);
}

struct Stopwatch {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

Dataset balanced_pool(int per_class, int num_classes) {
  Dataset ds;
  ds.split = Split::train;
  ds.num_classes = num_classes;
  for (int i = 0; i < per_class * num_classes; ++i) {
    Document d;
    d.id = i;
    d.text = "doc " + std::to_string(i);
    d.gold_label = i % num_classes;
    ds.docs.push_back(std::move(d));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// 1. Imbalance arithmetic on the two published corpus shapes.
// ---------------------------------------------------------------------------

TEST(Acceptance, Criterion1ImbalanceTotals) {
  Stopwatch watch;
  const struct {
    int per_class;
    int num_classes;
    double rho;
    std::int64_t reference;
  } cases[] = {
      {24000, 4, 10.0, 42700}, {24000, 4, 20.0, 37300}, {24000, 4, 50.0, 32800},
      {15200, 2, 10.0, 16800}, {15200, 2, 20.0, 16000}, {15200, 2, 50.0, 15600},
  };
  bool pass = true;
  for (const auto& c : cases) {
    const Dataset pool = balanced_pool(c.per_class, c.num_classes);
    ImbalanceSpec spec;
    spec.rho = c.rho;
    spec.seed = 1;
    const Dataset out = build_imbalanced(pool, spec);
    const std::int64_t total = static_cast<std::int64_t>(out.docs.size());
    EXPECT_LE(std::llabs(total - c.reference), 100)
        << c.num_classes << " classes, rho " << c.rho << ": total " << total;
    pass = pass && std::llabs(total - c.reference) <= 100;
  }
  const double secs = watch.seconds();
  EXPECT_LT(secs, 5.0);
  pass = pass && secs < 5.0;
  verdict(1, "imbalance totals", pass);
}

// ---------------------------------------------------------------------------
// 2. Backprop against central finite differences.
// ---------------------------------------------------------------------------

TEST(Acceptance, Criterion2GradientCheck) {
  Stopwatch watch;
  const LossMode modes[] = {LossMode::plain, LossMode::logit_adjust, LossMode::effective_number};
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed)
    for (const LossMode mode : modes) {
      const double err = testutil::gradient_check_max_rel_error(seed, mode);
      worst = std::max(worst, err);
      EXPECT_LT(err, 1e-4) << "seed " << seed << " mode " << static_cast<int>(mode);
    }
  const double secs = watch.seconds();
  EXPECT_LT(secs, 30.0);
  verdict(2, "gradient check", worst < 1e-4 && secs < 30.0);
}

// ---------------------------------------------------------------------------
// 3. EM objective monotone; fixed-parameter posterior equals direct Bayes.
// ---------------------------------------------------------------------------

struct PlantedCorpus {
  WeakLabelMatrix matrix;
  std::vector<int> gold;
};

// Rules fire and err independently at planted rates.
PlantedCorpus planted(int n, int num_classes, const std::vector<double>& accuracy,
                      const std::vector<double>& fire_prob, std::uint64_t seed) {
  PlantedCorpus out;
  out.matrix.num_classes = num_classes;
  Rng rng(seed);
  for (int x = 0; x < n; ++x) {
    const int y = rng.below_int(num_classes);
    out.gold.push_back(y);
    std::vector<int> row;
    for (std::size_t i = 0; i < accuracy.size(); ++i) {
      if (!rng.bernoulli(fire_prob[i])) {
        row.push_back(kAbstain);
        continue;
      }
      if (rng.bernoulli(accuracy[i])) {
        row.push_back(y);
      } else {
        int wrong = rng.below_int(num_classes - 1);
        if (wrong >= y) ++wrong;
        row.push_back(wrong);
      }
    }
    out.matrix.values.push_back(std::move(row));
  }
  return out;
}

TEST(Acceptance, Criterion3EmCorrectness) {
  Stopwatch watch;
  bool pass = true;

  Rng rng(2026);
  for (int trial = 0; trial < 20; ++trial) {
    const int C = 2 + rng.below_int(3);
    const int k = 2 + rng.below_int(4);
    const int n = 30 + rng.below_int(71);
    std::vector<double> acc, fire;
    for (int i = 0; i < k; ++i) {
      acc.push_back(0.35 + 0.6 * rng.uniform());
      fire.push_back(0.3 + 0.7 * rng.uniform());
    }
    PlantedCorpus pc = planted(n, C, acc, fire, rng.next_u64());
    if (coverage(pc.matrix) == 0.0) pc.matrix.values[0][0] = 0;
    const DawidSkeneModel model = dawid_skene_fit(pc.matrix, 60, 1e-12);
    EXPECT_GE(model.log_likelihood_trace.size(), 1u);
    for (std::size_t i = 1; i < model.log_likelihood_trace.size(); ++i) {
      EXPECT_GE(model.log_likelihood_trace[i], model.log_likelihood_trace[i - 1] - 1e-9)
          << "trial " << trial << " iteration " << i;
      pass = pass && model.log_likelihood_trace[i] >= model.log_likelihood_trace[i - 1] - 1e-9;
    }
  }

  // Three-example fixture, parameters held fixed; enumeration in long double
  // with plain products is the independent oracle for the log-space path.
  DawidSkeneModel fixed;
  fixed.class_prior = {0.6, 0.4};
  fixed.confusion = {
      {{0.55, 0.15, 0.30}, {0.25, 0.45, 0.30}},
      {{0.50, 0.10, 0.40}, {0.05, 0.55, 0.40}},
  };
  WeakLabelMatrix m;
  m.num_classes = 2;
  m.values = {{0, 1}, {1, kAbstain}, {0, 0}};
  const LabelModelOutput out = posterior(fixed, m, 0);
  for (std::size_t x = 0; x < m.rows(); ++x) {
    long double joint[2];
    for (int y = 0; y < 2; ++y) {
      long double p = static_cast<long double>(fixed.class_prior[static_cast<std::size_t>(y)]);
      for (int i = 0; i < 2; ++i) {
        const int v = m.values[x][static_cast<std::size_t>(i)];
        const std::size_t col = v < 0 ? 2u : static_cast<std::size_t>(v);
        p *= static_cast<long double>(
            fixed.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(y)][col]);
      }
      joint[y] = p;
    }
    const long double z = joint[0] + joint[1];
    for (int y = 0; y < 2; ++y) {
      const double want = static_cast<double>(joint[y] / z);
      EXPECT_NEAR(out.posterior[x][static_cast<std::size_t>(y)], want, 1e-8) << "row " << x;
      pass = pass && std::abs(out.posterior[x][static_cast<std::size_t>(y)] - want) <= 1e-8;
    }
  }

  const double secs = watch.seconds();
  EXPECT_LT(secs, 30.0);
  verdict(3, "em correctness", pass && secs < 30.0);
}

// ---------------------------------------------------------------------------
// 4. Selection invariants on randomized fixtures.
// ---------------------------------------------------------------------------

TEST(Acceptance, Criterion4SelectionInvariants) {
  Stopwatch watch;
  bool pass = true;

  // Margin range and sign, confidence range, on random probability rows.
  {
    Rng rng(41);
    for (int i = 0; i < 1000; ++i) {
      const int C = 2 + rng.below_int(5);
      std::vector<double> probs(static_cast<std::size_t>(C));
      double z = 0.0;
      for (double& p : probs) {
        p = 1e-3 + rng.uniform();
        z += p;
      }
      for (double& p : probs) p /= z;
      const int pl = rng.below_int(C);
      const double margin = pms(probs, pl, ScoreMode::margin);
      const double conf = pms(probs, pl, ScoreMode::confidence);
      double best_other = -1.0;
      for (int c = 0; c < C; ++c)
        if (c != pl) best_other = std::max(best_other, probs[static_cast<std::size_t>(c)]);
      const bool ok = margin >= -1.0 && margin <= 1.0 && conf >= 0.0 && conf <= 1.0 &&
                      margin == probs[static_cast<std::size_t>(pl)] - best_other &&
                      ((margin > 0.0) == (probs[static_cast<std::size_t>(pl)] > best_other));
      EXPECT_TRUE(ok) << "case " << i;
      pass = pass && ok;
    }
  }

  // Per-class caps and threshold, per-rule caps and relabels, monotone
  // transform stability, and merge bookkeeping, against brute force.
  {
    Rng rng(42);
    for (int i = 0; i < 1200; ++i) {
      const testutil::SelectionCase sc = testutil::random_selection_case(rng);
      const int violations = testutil::selection_invariant_violations(sc);
      EXPECT_EQ(violations, 0) << "case " << i;
      pass = pass && violations == 0;
    }
  }

  // Batch growth endpoints and monotonicity across the schedule.
  {
    Rng rng(43);
    for (int i = 0; i < 1000; ++i) {
      const int B = 1 + rng.below_int(512);
      const int C = 1 + rng.below_int(10);
      const int T = 1 + rng.below_int(20);
      const double gamma = 1.0 + 7.0 * rng.uniform();
      const double base = static_cast<double>(B) / static_cast<double>(C);
      const int k0 = dynamic_k(B, C, 0, T, gamma);
      const int kT = dynamic_k(B, C, T, T, gamma);
      bool ok = k0 == std::max(1, static_cast<int>(std::floor(base + 1e-9)));
      ok = ok && kT == std::max(1, static_cast<int>(std::floor(base * gamma + 1e-9)));
      int prev = k0;
      for (int t = 1; t <= T; ++t) {
        const int kt = dynamic_k(B, C, t, T, gamma);
        ok = ok && kt >= prev;
        prev = kt;
      }
      EXPECT_TRUE(ok) << "case " << i;
      pass = pass && ok;
    }
  }

  // Deterministic logs: the whole adaptive loop repeats bitwise, records,
  // batches, and parameters alike.
  for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
    const testutil::ToySet base = testutil::separable_toy_set(40, 256, seed);
    WeakLabelMatrix matrix;
    matrix.num_classes = 2;
    std::vector<int> pseudo;
    Rng rng(seed + 5);
    for (std::size_t i = 0; i < base.feats.size(); ++i) {
      std::vector<int> row(2, kAbstain);
      if (rng.uniform() < 0.8)
        row[0] = rng.bernoulli(0.75) ? base.labels[i] : 1 - base.labels[i];
      if (rng.uniform() < 0.4) row[1] = base.labels[i];
      matrix.values.push_back(std::move(row));
      pseudo.push_back(matrix.row_covered(i)
                           ? (matrix.values[i][0] != kAbstain ? matrix.values[i][0]
                                                              : matrix.values[i][1])
                           : kAbstain);
    }
    const testutil::ToySet dev_set = testutil::separable_toy_set(12, 256, seed + 1);
    const EvalSet dev{&dev_set.feats, &dev_set.labels};
    TrainConfig tcfg;
    tcfg.feature_dim = 256;
    tcfg.hidden_dim = 16;
    tcfg.batch_size = 16;
    tcfg.learning_rate = 5e-3;
    tcfg.dropout_rate = 0.1;
    tcfg.max_steps = 60;
    tcfg.eval_every = 10;
    tcfg.patience = 6;
    tcfg.seed = seed;
    Ars2Config acfg;
    acfg.selection_steps = 4;
    acfg.batch_size = 16;
    acfg.gamma = 2.0;
    acfg.xi = 0.0;
    const MlpModel init = MlpModel::init(256, 16, 2, seed);
    const ContinualResult a = continual_train(init, base.feats, pseudo, matrix, dev, acfg, tcfg);
    const ContinualResult b = continual_train(init, base.feats, pseudo, matrix, dev, acfg, tcfg);
    bool ok = a.records.size() == b.records.size() && a.batches.size() == b.batches.size() &&
              a.model.params == b.model.params;
    for (std::size_t t = 0; ok && t < a.batches.size(); ++t) {
      ok = a.batches[t].entries.size() == b.batches[t].entries.size();
      for (std::size_t e = 0; ok && e < a.batches[t].entries.size(); ++e) {
        const SelectionEntry& x = a.batches[t].entries[e];
        const SelectionEntry& y = b.batches[t].entries[e];
        ok = x.index == y.index && x.label == y.label && x.source == y.source && x.group == y.group;
      }
    }
    for (std::size_t t = 0; ok && t < a.records.size(); ++t)
      ok = a.records[t].k == b.records[t].k && a.records[t].union_size == b.records[t].union_size;
    EXPECT_TRUE(ok) << "seed " << seed;
    pass = pass && ok;
  }

  const double secs = watch.seconds();
  EXPECT_LT(secs, 120.0);
  verdict(4, "selection invariants", pass && secs < 120.0);
}

// ---------------------------------------------------------------------------
// 5-7. End-to-end ordering, selection cleanliness, and determinism on one
// frozen configuration. The four method runs are shared across the three
// criteria, so they execute once.
// ---------------------------------------------------------------------------

ExperimentConfig end_to_end_config() {
  ExperimentConfig cfg;
  cfg.data.synthetic = true;
  cfg.data.spec.num_classes = 4;
  cfg.data.spec.train_pool = 5000;
  cfg.data.spec.valid_pool = 500;
  cfg.data.spec.test_size = 500;
  cfg.data.spec.vocab_size = 2000;
  cfg.data.spec.signal_keywords_per_class = 6;
  cfg.data.spec.signal_strength = 0.8;
  cfg.data.spec.doc_length = 12;
  cfg.data.spec.num_rules = 6;
  cfg.data.spec.rule_precision = 0.7;
  cfg.data.spec.rule_coverage = 0.6;
  cfg.data.spec.rho = 20.0;
  cfg.label_model = "dawid_skene";
  cfg.train.feature_dim = 4096;
  cfg.train.hidden_dim = 64;
  cfg.train.batch_size = 128;
  cfg.train.learning_rate = 1e-3;
  cfg.train.dropout_rate = 0.2;
  cfg.train.weight_decay = 0.0;
  cfg.train.loss_mode = LossMode::logit_adjust;
  cfg.train.max_steps = 400;
  cfg.train.eval_every = 50;
  cfg.train.patience = 5;
  cfg.ars2.selection_steps = 10;
  cfg.ars2.batch_size = 128;
  cfg.ars2.gamma = 2.0;
  cfg.ars2.xi = 0.15;
  cfg.ars2.inner_updates = 0;
  cfg.seeds = {1, 2, 3, 4, 5};
  return cfg;
}

struct EndToEnd {
  RunReport warmup, ars2, no_cr, no_rr;
  double seconds = 0.0;
};

const EndToEnd& end_to_end() {
  static const EndToEnd shared = [] {
    EndToEnd e;
    Stopwatch watch;
    ExperimentConfig cfg = end_to_end_config();
    cfg.method = "warmup_only";
    e.warmup = run_experiment(cfg);
    cfg.method = "ars2";
    e.ars2 = run_experiment(cfg);
    cfg.method = "ars2_no_cr";
    e.no_cr = run_experiment(cfg);
    cfg.method = "ars2_no_rr";
    e.no_rr = run_experiment(cfg);
    e.seconds = watch.seconds();
    return e;
  }();
  return shared;
}

TEST(Acceptance, Criterion5EndToEndOrdering) {
  const EndToEnd& e = end_to_end();
  EXPECT_EQ(e.warmup.num_successful, 5);
  EXPECT_EQ(e.ars2.num_successful, 5);
  EXPECT_EQ(e.no_cr.num_successful, 5);
  EXPECT_EQ(e.no_rr.num_successful, 5);

  const double full = e.ars2.mean_test_macro_f1;
  EXPECT_GE(full, e.warmup.mean_test_macro_f1 + 0.02)
      << "ars2 " << full << " vs warmup " << e.warmup.mean_test_macro_f1;
  EXPECT_GT(full, e.no_cr.mean_test_macro_f1)
      << "ars2 " << full << " vs no_cr " << e.no_cr.mean_test_macro_f1;
  EXPECT_GT(full, e.no_rr.mean_test_macro_f1)
      << "ars2 " << full << " vs no_rr " << e.no_rr.mean_test_macro_f1;
  EXPECT_LT(e.seconds, 600.0);

  const bool pass = e.warmup.num_successful == 5 && e.ars2.num_successful == 5 &&
                    e.no_cr.num_successful == 5 && e.no_rr.num_successful == 5 &&
                    full >= e.warmup.mean_test_macro_f1 + 0.02 &&
                    full > e.no_cr.mean_test_macro_f1 && full > e.no_rr.mean_test_macro_f1 &&
                    e.seconds < 600.0;
  verdict(5, "end-to-end ordering", pass);
}

TEST(Acceptance, Criterion6SelectionCleanliness) {
  const EndToEnd& e = end_to_end();
  int seeds_ok = 0, seeds_run = 0;
  for (const SeedOutcome& s : e.ars2.seeds) {
    if (s.failed) continue;
    ++seeds_run;
    double sum = 0.0;
    int n = 0;
    for (const StepRecord& rec : s.records) {
      if (rec.step < 2 || rec.skipped || rec.cleanliness < 0.0) continue;
      sum += rec.cleanliness;
      ++n;
    }
    const double mean_clean = n > 0 ? sum / n : 0.0;
    if (mean_clean >= s.pseudo_accuracy + 0.05) ++seeds_ok;
  }
  EXPECT_EQ(seeds_run, 5);
  EXPECT_GE(seeds_ok, 4) << seeds_ok << " of " << seeds_run
                         << " seeds kept late batches 5 points above pseudo accuracy";
  verdict(6, "selection cleanliness", seeds_run == 5 && seeds_ok >= 4);
}

TEST(Acceptance, Criterion7Determinism) {
  const EndToEnd& e = end_to_end();
  ExperimentConfig cfg = end_to_end_config();
  cfg.method = "ars2";
  const RunReport repeat = run_experiment(cfg);
  const std::string first = report_metrics_json(e.ars2).dump(2);
  const std::string second = report_metrics_json(repeat).dump(2);
  EXPECT_EQ(first, second);
  verdict(7, "determinism", first == second);
}

}  // namespace
