#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ars2/corpus.hpp"
#include "ars2/end_model.hpp"
#include "ars2/label_model.hpp"
#include "ars2/rules.hpp"
#include "ars2/selection.hpp"

namespace ars2 {

// ---------------------------------------------------------------------------
// Synthetic corpus generation. Each class owns signal keywords; each rule
// keys on a cue token planted with calibrated leakage so empirical rule
// precision and coverage land near their targets after imbalance.
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  int num_classes = 4;
  int train_pool = 5000;  // documents before imbalance
  int valid_pool = 500;
  int test_size = 500;
  int vocab_size = 2000;
  int signal_keywords_per_class = 6;
  double signal_strength = 0.8;  // inclusion probability per signal keyword
  int doc_length = 12;           // background tokens per document
  int num_rules = 8;
  double rule_precision = 0.7;
  double rule_coverage = 0.6;
  double rho = 20.0;

  void validate() const {
    if (num_classes < 2) throw std::runtime_error("synthetic spec: num_classes must be >= 2");
    if (num_rules < 1 || num_rules > 99) throw std::runtime_error("synthetic spec: num_rules must be in [1,99]");
    if (!(rule_precision > 0.0 && rule_precision <= 1.0))
      throw std::runtime_error("synthetic spec: rule_precision must lie in (0,1]");
    if (!(rule_coverage > 0.0 && rule_coverage <= 1.0))
      throw std::runtime_error("synthetic spec: rule_coverage must lie in (0,1]");
    if (!(signal_strength >= 0.0 && signal_strength <= 1.0))
      throw std::runtime_error("synthetic spec: signal_strength must lie in [0,1]");
    if (train_pool < num_classes || valid_pool < num_classes || test_size < num_classes)
      throw std::runtime_error("synthetic spec: each split needs at least one document per class");
    if (vocab_size < 1 || doc_length < 1 || signal_keywords_per_class < 1)
      throw std::runtime_error("synthetic spec: vocabulary parameters must be positive");
    if (rho < 1.0) throw std::runtime_error("synthetic spec: rho must be >= 1");
  }
};

struct SyntheticBundle {
  Dataset train, valid, test;
  RuleSet rules;
  double achieved_precision = 0.0;  // micro over all rule firings on train
  double achieved_coverage = 0.0;   // fraction of train docs with >= 1 firing
};

namespace detail {

inline std::string cue_token(int rule) {
  std::ostringstream os;
  os << "cue" << std::setw(2) << std::setfill('0') << rule;
  return os.str();
}

inline Dataset synthetic_pool(const SyntheticSpec& spec, Split split, int size, std::uint64_t seed) {
  Dataset ds;
  ds.split = split;
  ds.num_classes = spec.num_classes;
  Rng rng(seed);
  for (int i = 0; i < size; ++i) {
    Document d;
    d.id = i;
    d.gold_label = i % spec.num_classes;
    std::string text;
    for (int w = 0; w < spec.doc_length; ++w) {
      if (!text.empty()) text += ' ';
      text += 'w' + std::to_string(static_cast<int>(rng.below_int(spec.vocab_size)));
    }
    for (int s = 0; s < spec.signal_keywords_per_class; ++s) {
      if (!rng.bernoulli(spec.signal_strength)) continue;
      text += " sig" + std::to_string(*d.gold_label) + 'x' + std::to_string(s);
    }
    d.text = std::move(text);
    ds.docs.push_back(std::move(d));
  }
  return ds;
}

// Expected coverage when each rule fires on its own class with probability
// q_own and leaks onto the rest at the precision-preserving rate.
inline double expected_coverage(double q_own, const SyntheticSpec& spec,
                                const std::vector<std::int64_t>& counts, std::int64_t total) {
  const double p = spec.rule_precision;
  double covered = 0.0;
  for (int c = 0; c < spec.num_classes; ++c) {
    double miss = 1.0;
    for (int r = 0; r < spec.num_rules; ++r) {
      const int own = r % spec.num_classes;
      double fire;
      if (own == c) {
        fire = q_own;
      } else {
        const double n_own = static_cast<double>(counts[static_cast<std::size_t>(own)]);
        const double n_rest = static_cast<double>(total) - n_own;
        fire = p >= 1.0 ? 0.0 : q_own * n_own * (1.0 - p) / (p * n_rest);
      }
      miss *= 1.0 - fire;
    }
    covered += static_cast<double>(counts[static_cast<std::size_t>(c)]) * (1.0 - miss);
  }
  return covered / static_cast<double>(total);
}

// Plants cue tokens by per-document Bernoulli draws at the calibrated rates.
inline void plant_cues(Dataset& ds, const SyntheticSpec& spec, double q_own,
                       const std::vector<double>& q_other, Rng& rng) {
  for (Document& d : ds.docs) {
    const int c = *d.gold_label;
    for (int r = 0; r < spec.num_rules; ++r) {
      const double fire = (r % spec.num_classes) == c ? q_own : q_other[static_cast<std::size_t>(r)];
      if (fire > 0.0 && rng.bernoulli(fire)) {
        d.text += ' ' + cue_token(r);
      }
    }
  }
}

}  // namespace detail

inline SyntheticBundle generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  SyntheticBundle out;

  ImbalanceSpec imb;
  imb.rho = spec.rho;
  imb.seed = Rng::derive(seed, 0x696d62);
  Dataset train_pool = detail::synthetic_pool(spec, Split::train, spec.train_pool, Rng::derive(seed, 0x7472));
  Dataset valid_pool = detail::synthetic_pool(spec, Split::valid, spec.valid_pool, Rng::derive(seed, 0x7661));
  out.train = build_imbalanced(train_pool, imb);
  imb.seed = Rng::derive(seed, 0x696d6276);
  out.valid = build_imbalanced(valid_pool, imb);
  out.test = detail::synthetic_pool(spec, Split::test, spec.test_size, Rng::derive(seed, 0x7465));

  // Calibrate the own-class firing rate so expected coverage matches the
  // target at the requested precision, given the post-imbalance class mix.
  const ClassStats stats = class_stats(gold_labels(out.train), spec.num_classes);
  const std::int64_t total = static_cast<std::int64_t>(out.train.docs.size());
  const double p = spec.rule_precision;
  double q_max = 1.0;
  for (int r = 0; r < spec.num_rules; ++r) {
    const double n_own = static_cast<double>(stats.counts[static_cast<std::size_t>(r % spec.num_classes)]);
    const double n_rest = static_cast<double>(total) - n_own;
    if (p < 1.0 && n_own > 0.0) {
      q_max = std::min(q_max, p * n_rest / (n_own * (1.0 - p)));
    }
  }
  const double best = detail::expected_coverage(q_max, spec, stats.counts, total);
  if (best + 1e-9 < spec.rule_coverage) {
    std::ostringstream os;
    os << "synthetic generator: precision/coverage combination unattainable; at precision "
       << p << " the achievable coverage is " << best << " (target " << spec.rule_coverage << ")";
    throw std::runtime_error(os.str());
  }
  double lo = 0.0, hi = q_max;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (detail::expected_coverage(mid, spec, stats.counts, total) < spec.rule_coverage) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double q_own = hi;
  std::vector<double> q_other(static_cast<std::size_t>(spec.num_rules), 0.0);
  for (int r = 0; r < spec.num_rules; ++r) {
    const double n_own = static_cast<double>(stats.counts[static_cast<std::size_t>(r % spec.num_classes)]);
    const double n_rest = static_cast<double>(total) - n_own;
    q_other[static_cast<std::size_t>(r)] =
        p >= 1.0 || n_rest <= 0.0 ? 0.0 : q_own * n_own * (1.0 - p) / (p * n_rest);
  }

  Rng cue_train(Rng::derive(seed, 0x63756572));
  Rng cue_valid(Rng::derive(seed, 0x63756576));
  Rng cue_test(Rng::derive(seed, 0x63756574));
  detail::plant_cues(out.train, spec, q_own, q_other, cue_train);
  detail::plant_cues(out.valid, spec, q_own, q_other, cue_valid);
  detail::plant_cues(out.test, spec, q_own, q_other, cue_test);

  for (int r = 0; r < spec.num_rules; ++r) {
    Rule rule;
    rule.id = r;
    rule.label = r % spec.num_classes;
    rule.patterns = {detail::cue_token(r)};
    out.rules.rules.push_back(std::move(rule));
  }

  // Empirical check on the train split.
  std::int64_t fires = 0, correct = 0, covered_docs = 0;
  const WeakLabelMatrix wl = apply_ruleset(out.rules, out.train);
  for (std::size_t i = 0; i < wl.rows(); ++i) {
    bool any = false;
    for (std::size_t r = 0; r < static_cast<std::size_t>(wl.cols()); ++r) {
      if (wl.values[i][r] == kAbstain) continue;
      any = true;
      ++fires;
      if (wl.values[i][r] == *out.train.docs[i].gold_label) ++correct;
    }
    if (any) ++covered_docs;
  }
  out.achieved_precision = fires > 0 ? static_cast<double>(correct) / static_cast<double>(fires) : 0.0;
  out.achieved_coverage = static_cast<double>(covered_docs) / static_cast<double>(total);
  if (std::abs(out.achieved_precision - p) > 0.1 ||
      std::abs(out.achieved_coverage - spec.rule_coverage) > 0.1) {
    std::ostringstream os;
    os << "synthetic generator: targets missed; achieved precision " << out.achieved_precision
       << " (target " << p << "), coverage " << out.achieved_coverage << " (target "
       << spec.rule_coverage << ")";
    throw std::runtime_error(os.str());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment configuration, JSON in and out with every default made explicit.
// ---------------------------------------------------------------------------

struct DatasetSource {
  bool synthetic = true;
  SyntheticSpec spec;
  std::string train_path, valid_path, test_path, ruleset_path;
  double file_rho = 1.0;  // imbalance applied to file-based train/valid splits
};

struct ExperimentConfig {
  DatasetSource data;
  std::string label_model = "dawid_skene";
  TrainConfig train;
  Ars2Config ars2;
  std::string method = "ars2";
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};

  void validate() const {
    if (seeds.empty()) throw std::runtime_error("experiment config: seeds must be non-empty");
    if (label_model != "majority_vote" && label_model != "dawid_skene")
      throw std::runtime_error("experiment config: unknown label model: " + label_model);
    if (method != "warmup_only" && method != "ars2" && method != "ars2_no_cr" &&
        method != "ars2_no_rr" && method != "ars2_conf")
      throw std::runtime_error("experiment config: unknown method: " + method);
    if (data.synthetic) {
      data.spec.validate();
    } else {
      if (data.train_path.empty() || data.valid_path.empty() || data.test_path.empty() ||
          data.ruleset_path.empty())
        throw std::runtime_error("experiment config: file dataset requires train/valid/test/ruleset paths");
      if (data.file_rho < 1.0) throw std::runtime_error("experiment config: rho must be >= 1");
    }
    train.validate();
  }
};

inline nlohmann::json synthetic_spec_to_json(const SyntheticSpec& s) {
  return {{"num_classes", s.num_classes},
          {"train_pool", s.train_pool},
          {"valid_pool", s.valid_pool},
          {"test_size", s.test_size},
          {"vocab_size", s.vocab_size},
          {"signal_keywords_per_class", s.signal_keywords_per_class},
          {"signal_strength", s.signal_strength},
          {"doc_length", s.doc_length},
          {"num_rules", s.num_rules},
          {"rule_precision", s.rule_precision},
          {"rule_coverage", s.rule_coverage},
          {"rho", s.rho}};
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec d;
  SyntheticSpec s;
  s.num_classes = j.value("num_classes", d.num_classes);
  s.train_pool = j.value("train_pool", d.train_pool);
  s.valid_pool = j.value("valid_pool", d.valid_pool);
  s.test_size = j.value("test_size", d.test_size);
  s.vocab_size = j.value("vocab_size", d.vocab_size);
  s.signal_keywords_per_class = j.value("signal_keywords_per_class", d.signal_keywords_per_class);
  s.signal_strength = j.value("signal_strength", d.signal_strength);
  s.doc_length = j.value("doc_length", d.doc_length);
  s.num_rules = j.value("num_rules", d.num_rules);
  s.rule_precision = j.value("rule_precision", d.rule_precision);
  s.rule_coverage = j.value("rule_coverage", d.rule_coverage);
  s.rho = j.value("rho", d.rho);
  return s;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"dropout_rate", c.dropout_rate},
          {"max_steps", c.max_steps},
          {"eval_every", c.eval_every},
          {"patience", c.patience},
          {"loss_mode", loss_mode_name(c.loss_mode)},
          {"en_beta", c.en_beta},
          {"feature_dim", c.feature_dim},
          {"hidden_dim", c.hidden_dim}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig d;
  TrainConfig c;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.dropout_rate = j.value("dropout_rate", d.dropout_rate);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.patience = j.value("patience", d.patience);
  c.loss_mode = loss_mode_from_name(j.value("loss_mode", std::string(loss_mode_name(d.loss_mode))));
  c.en_beta = j.value("en_beta", d.en_beta);
  c.feature_dim = j.value("feature_dim", d.feature_dim);
  c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
  return c;
}

inline nlohmann::json ars2_config_to_json(const Ars2Config& c) {
  return {{"gamma", c.gamma},
          {"xi", c.xi},
          {"selection_steps", c.selection_steps},
          {"batch_size", c.batch_size},
          {"inner_updates", c.inner_updates},
          {"score_mode", score_mode_name(c.score_mode)},
          {"use_cr", c.use_cr},
          {"use_rr", c.use_rr}};
}

inline Ars2Config ars2_config_from_json(const nlohmann::json& j) {
  Ars2Config d;
  Ars2Config c;
  c.gamma = j.value("gamma", d.gamma);
  c.xi = j.value("xi", d.xi);
  c.selection_steps = j.value("selection_steps", d.selection_steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.inner_updates = j.value("inner_updates", d.inner_updates);
  c.score_mode = score_mode_from_name(j.value("score_mode", std::string(score_mode_name(d.score_mode))));
  c.use_cr = j.value("use_cr", d.use_cr);
  c.use_rr = j.value("use_rr", d.use_rr);
  return c;
}

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  nlohmann::json data;
  if (c.data.synthetic) {
    data = {{"type", "synthetic"}, {"spec", synthetic_spec_to_json(c.data.spec)}};
  } else {
    data = {{"type", "file"},
            {"train", c.data.train_path},
            {"valid", c.data.valid_path},
            {"test", c.data.test_path},
            {"ruleset", c.data.ruleset_path},
            {"rho", c.data.file_rho}};
  }
  return {{"dataset", data},
          {"label_model", c.label_model},
          {"train", train_config_to_json(c.train)},
          {"ars2", ars2_config_to_json(c.ars2)},
          {"method", c.method},
          {"seeds", c.seeds}};
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  if (j.contains("dataset")) {
    const nlohmann::json& data = j.at("dataset");
    const std::string type = data.value("type", std::string("synthetic"));
    if (type == "synthetic") {
      c.data.synthetic = true;
      c.data.spec = synthetic_spec_from_json(data.value("spec", nlohmann::json::object()));
    } else if (type == "file") {
      c.data.synthetic = false;
      c.data.train_path = data.value("train", std::string());
      c.data.valid_path = data.value("valid", std::string());
      c.data.test_path = data.value("test", std::string());
      c.data.ruleset_path = data.value("ruleset", std::string());
      c.data.file_rho = data.value("rho", 1.0);
    } else {
      throw std::runtime_error("experiment config: unknown dataset type: " + type);
    }
  }
  c.label_model = j.value("label_model", c.label_model);
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("ars2")) c.ars2 = ars2_config_from_json(j.at("ars2"));
  c.method = j.value("method", c.method);
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Multi-seed experiment execution
// ---------------------------------------------------------------------------

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  double test_macro_f1 = 0.0;
  double noise_rate = 0.0;
  double coverage = 0.0;
  double pseudo_accuracy = 0.0;  // on covered train examples
  double warm_best_dev_f1 = 0.0;
  double final_best_dev_f1 = 0.0;
  std::vector<StepRecord> records;
  std::vector<SelectionBatch> batches;
  std::vector<std::string> warnings;
};

struct RunReport {
  ExperimentConfig config;
  std::vector<SeedOutcome> seeds;
  int num_successful = 0;
  bool partial = false;
  double mean_test_macro_f1 = 0.0;
  double std_test_macro_f1 = 0.0;
  double wall_clock_seconds = 0.0;  // kept out of metrics.json
};

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Population standard deviation.
inline double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

namespace detail {

struct MethodSpec {
  bool continual = true;
  bool use_cr = true;
  bool use_rr = true;
  ScoreMode mode = ScoreMode::margin;
};

inline MethodSpec method_spec(const std::string& name) {
  if (name == "warmup_only") return {false, false, false, ScoreMode::margin};
  if (name == "ars2") return {true, true, true, ScoreMode::margin};
  if (name == "ars2_no_cr") return {true, false, true, ScoreMode::margin};
  if (name == "ars2_no_rr") return {true, true, false, ScoreMode::margin};
  if (name == "ars2_conf") return {true, true, true, ScoreMode::confidence};
  throw std::runtime_error("unknown method: " + name);
}

template <typename F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("stage ") + name + ": " + e.what());
  }
}

}  // namespace detail

// One full pipeline pass for one seed. Gold labels are used for dev/test
// evaluation and audit only; training targets come from the label model.
inline SeedOutcome run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedOutcome out;
  out.seed = seed;
  const detail::MethodSpec method = detail::method_spec(cfg.method);

  Dataset train, valid, test;
  RuleSet rules;
  detail::stage("data", [&] {
    if (cfg.data.synthetic) {
      SyntheticBundle b = generate_synthetic(cfg.data.spec, seed);
      train = std::move(b.train);
      valid = std::move(b.valid);
      test = std::move(b.test);
      rules = std::move(b.rules);
    } else {
      train = load_dataset(cfg.data.train_path, Split::train);
      valid = load_dataset(cfg.data.valid_path, Split::valid);
      test = load_dataset(cfg.data.test_path, Split::test);
      rules = load_ruleset(cfg.data.ruleset_path, train.num_classes);
      if (cfg.data.file_rho > 1.0) {
        ImbalanceSpec imb;
        imb.rho = cfg.data.file_rho;
        imb.seed = Rng::derive(seed, 0x696d62);
        train = build_imbalanced(train, imb);
        imb.seed = Rng::derive(seed, 0x696d6276);
        valid = build_imbalanced(valid, imb);
      }
    }
    return 0;
  });

  const int C = train.num_classes;
  WeakLabelMatrix wl;
  LabelModelOutput lm;
  detail::stage("labeling", [&] {
    wl = apply_ruleset(rules, train);
    out.coverage = coverage(wl);
    if (cfg.label_model == "majority_vote") {
      lm = majority_vote(wl, seed);
    } else {
      const DawidSkeneModel ds = dawid_skene_fit(wl);
      lm = posterior(ds, wl, seed);
    }
    return 0;
  });

  std::vector<int> gold;
  const bool has_gold = !train.docs.empty() && train.docs.front().gold_label.has_value();
  if (has_gold) {
    gold = gold_labels(train);
    const NoiseRate nr = noise_rate(lm.pseudo_labels, gold, lm.covered);
    out.noise_rate = nr.value;
    out.pseudo_accuracy = nr.empty_coverage ? 0.0 : 1.0 - nr.value;
  }

  std::vector<FeatureVector> train_feats, valid_feats, test_feats;
  std::vector<int> valid_gold, test_gold;
  detail::stage("features", [&] {
    const int D = cfg.train.feature_dim;
    train_feats.reserve(train.docs.size());
    for (const Document& d : train.docs) train_feats.push_back(featurize(d.text, D));
    valid_feats.reserve(valid.docs.size());
    for (const Document& d : valid.docs) valid_feats.push_back(featurize(d.text, D));
    test_feats.reserve(test.docs.size());
    for (const Document& d : test.docs) test_feats.push_back(featurize(d.text, D));
    valid_gold = gold_labels(valid);
    test_gold = gold_labels(test);
    return 0;
  });
  EvalSet dev{&valid_feats, &valid_gold};

  TrainConfig tcfg = cfg.train;
  tcfg.seed = seed;
  MlpModel model = MlpModel::init(tcfg.feature_dim, tcfg.hidden_dim, C, seed);
  detail::stage("warm_up", [&] {
    TrainHistory hist;
    model = warm_up(std::move(model), train_feats, lm.pseudo_labels, lm.covered, dev, tcfg, &hist);
    out.warm_best_dev_f1 = hist.best_dev_f1;
    out.final_best_dev_f1 = hist.best_dev_f1;
    return 0;
  });

  if (method.continual) {
    detail::stage("continual", [&] {
      Ars2Config acfg = cfg.ars2;
      acfg.use_cr = method.use_cr;
      acfg.use_rr = method.use_rr;
      acfg.score_mode = method.mode;
      ContinualResult res = continual_train(std::move(model), train_feats, lm.pseudo_labels, wl,
                                            dev, acfg, tcfg, has_gold ? &gold : nullptr);
      model = std::move(res.model);
      out.records = std::move(res.records);
      out.batches = std::move(res.batches);
      out.warnings = std::move(res.warnings);
      out.final_best_dev_f1 = res.history.best_dev_f1;
      return 0;
    });
  }

  detail::stage("evaluation", [&] {
    out.test_macro_f1 = evaluate_macro_f1(model, test_feats, test_gold);
    return 0;
  });
  return out;
}

inline RunReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RunReport report;
  report.config = cfg;
  std::vector<double> f1s;
  for (std::uint64_t seed : cfg.seeds) {
    SeedOutcome out;
    try {
      out = run_seed(cfg, seed);
    } catch (const std::exception& e) {
      out = SeedOutcome{};
      out.seed = seed;
      out.failed = true;
      out.error = e.what();
    }
    if (!out.failed) {
      f1s.push_back(out.test_macro_f1);
      ++report.num_successful;
    }
    report.seeds.push_back(std::move(out));
  }
  report.partial = report.num_successful < static_cast<int>(cfg.seeds.size());
  report.mean_test_macro_f1 = mean_of(f1s);
  report.std_test_macro_f1 = std_of(f1s);
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// Per-step fraction of batch entries whose training label matches gold.
// Steps whose batch came up empty carry no value.
inline std::vector<std::pair<int, double>> cleanliness_curve(
    const std::vector<SelectionBatch>& batches, const std::vector<int>& gold) {
  if (gold.empty()) throw std::runtime_error("cleanliness_curve: missing gold labels");
  std::vector<std::pair<int, double>> curve;
  for (const SelectionBatch& b : batches) {
    if (b.entries.empty()) continue;
    std::size_t clean = 0;
    for (const SelectionEntry& e : b.entries) {
      if (e.index < 0 || static_cast<std::size_t>(e.index) >= gold.size())
        throw std::runtime_error("cleanliness_curve: entry index out of range");
      if (e.label == gold[static_cast<std::size_t>(e.index)]) ++clean;
    }
    curve.emplace_back(b.step, static_cast<double>(clean) / static_cast<double>(b.entries.size()));
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Report emission. metrics.json holds only deterministic quantities; wall
// clock goes to timing.json so repeated runs diff clean.
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json step_record_to_json(const StepRecord& r) {
  nlohmann::json j = {{"step", r.step},
                      {"k", r.k},
                      {"cr_size", r.cr_size},
                      {"rr_size", r.rr_size},
                      {"union_size", r.union_size},
                      {"per_class_counts", r.per_class_counts},
                      {"per_rule_counts", r.per_rule_counts},
                      {"relabel_count", r.relabel_count},
                      {"skipped", r.skipped}};
  if (r.cleanliness >= 0.0) j["cleanliness"] = r.cleanliness;
  return j;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace detail

inline nlohmann::json report_metrics_json(const RunReport& report) {
  nlohmann::json seeds = nlohmann::json::array();
  for (const SeedOutcome& s : report.seeds) {
    nlohmann::json j = {{"seed", s.seed}, {"failed", s.failed}};
    if (s.failed) {
      j["error"] = s.error;
    } else {
      j["test_macro_f1"] = s.test_macro_f1;
      j["noise_rate"] = s.noise_rate;
      j["coverage"] = s.coverage;
      j["pseudo_accuracy"] = s.pseudo_accuracy;
      j["warm_best_dev_f1"] = s.warm_best_dev_f1;
      j["final_best_dev_f1"] = s.final_best_dev_f1;
      nlohmann::json steps = nlohmann::json::array();
      for (const StepRecord& r : s.records) steps.push_back(detail::step_record_to_json(r));
      j["steps"] = steps;
      if (!s.warnings.empty()) j["warnings"] = s.warnings;
    }
    seeds.push_back(std::move(j));
  }
  return {{"format_version", 1},
          {"method", report.config.method},
          {"label_model", report.config.label_model},
          {"num_seeds", report.config.seeds.size()},
          {"num_successful", report.num_successful},
          {"partial", report.partial},
          {"mean_test_macro_f1", report.mean_test_macro_f1},
          {"std_test_macro_f1", report.std_test_macro_f1},
          {"per_seed", seeds}};
}

inline void emit_report(const RunReport& report, const std::string& out_dir) {
  if (report.config.seeds.empty()) throw std::runtime_error("emit_report: empty seeds list");
  const std::string dir = out_dir.empty() ? "." : out_dir;

  detail::write_file(dir + "/metrics.json", report_metrics_json(report).dump(2) + "\n");
  detail::write_file(dir + "/config.json",
                     experiment_config_to_json(report.config).dump(2) + "\n");
  detail::write_file(dir + "/timing.json",
                     nlohmann::json{{"wall_clock_seconds", report.wall_clock_seconds}}.dump(2) + "\n");

  std::ostringstream summary;
  summary << "seed,test_macro_f1,noise_rate,coverage\n";
  for (const SeedOutcome& s : report.seeds) {
    if (s.failed) continue;
    summary << s.seed << ',' << std::setprecision(17) << s.test_macro_f1 << ',' << s.noise_rate
            << ',' << s.coverage << '\n';
  }
  detail::write_file(dir + "/summary.csv", summary.str());

  std::ostringstream clean;
  clean << "seed,step,cleanliness\n";
  for (const SeedOutcome& s : report.seeds) {
    if (s.failed) continue;
    for (const StepRecord& r : s.records) {
      if (r.skipped || r.cleanliness < 0.0) continue;
      clean << s.seed << ',' << r.step << ',' << std::setprecision(17) << r.cleanliness << '\n';
    }
  }
  detail::write_file(dir + "/cleanliness.csv", clean.str());

  for (const SeedOutcome& s : report.seeds) {
    if (s.failed) continue;
    if (s.records.empty()) continue;
    std::ostringstream lines;
    for (std::size_t i = 0; i < s.records.size(); ++i) {
      nlohmann::json j = detail::step_record_to_json(s.records[i]);
      nlohmann::json entries = nlohmann::json::array();
      if (i < s.batches.size()) {
        for (const SelectionEntry& e : s.batches[i].entries) {
          entries.push_back({{"index", e.index},
                             {"label", e.label},
                             {"source", e.source == Provenance::class_rank ? "cr" : "rr"},
                             {"group", e.group}});
        }
      }
      j["entries"] = std::move(entries);
      lines << j.dump() << '\n';
    }
    detail::write_file(dir + "/selection_seed" + std::to_string(s.seed) + ".jsonl", lines.str());
  }
}

}  // namespace ars2
