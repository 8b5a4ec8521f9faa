// Command-line front end for the weak-supervision pipeline: synthetic corpus
// generation, imbalance construction, label-model aggregation, end-to-end
// training, and report re-aggregation.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ars2/ars2.hpp"

namespace {

using nlohmann::json;

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

int cmd_generate(const std::string& config_path, std::uint64_t seed, const std::string& out_dir) {
  ars2::SyntheticSpec spec;
  if (!config_path.empty()) spec = ars2::synthetic_spec_from_json(read_json_file(config_path));
  const ars2::SyntheticBundle b = ars2::generate_synthetic(spec, seed);
  ars2::save_dataset(b.train, out_dir + "/train.json");
  ars2::save_dataset(b.valid, out_dir + "/valid.json");
  ars2::save_dataset(b.test, out_dir + "/test.json");
  ars2::save_ruleset(b.rules, out_dir + "/rules.json");
  const json stats = {{"seed", seed},
                      {"train_docs", b.train.docs.size()},
                      {"valid_docs", b.valid.docs.size()},
                      {"test_docs", b.test.docs.size()},
                      {"achieved_precision", b.achieved_precision},
                      {"achieved_coverage", b.achieved_coverage}};
  std::ofstream out(out_dir + "/generate_stats.json");
  if (!out) throw std::runtime_error("cannot write: " + out_dir + "/generate_stats.json");
  out << stats.dump(2) << '\n';
  std::cout << "wrote " << b.train.docs.size() << " train / " << b.valid.docs.size()
            << " valid / " << b.test.docs.size() << " test documents to " << out_dir
            << " (rule precision " << b.achieved_precision << ", coverage "
            << b.achieved_coverage << ")\n";
  return 0;
}

int cmd_imbalance(const std::string& in_path, double rho, std::uint64_t seed,
                  const std::string& out_path) {
  const ars2::Dataset ds = ars2::load_dataset(in_path, ars2::Split::train);
  ars2::ImbalanceSpec spec;
  spec.rho = rho;
  spec.seed = seed;
  const ars2::Dataset out = ars2::build_imbalanced(ds, spec);
  ars2::save_dataset(out, out_path);
  const ars2::ClassStats stats = ars2::class_stats(ars2::gold_labels(out), out.num_classes);
  std::cout << "kept " << out.docs.size() << " of " << ds.docs.size()
            << " documents, empirical imbalance ratio " << stats.empirical_rho << '\n';
  return 0;
}

int cmd_label(const std::string& in_path, const std::string& rules_path,
              const std::string& model_name, std::uint64_t seed, const std::string& out_path) {
  const ars2::Dataset ds = ars2::load_dataset(in_path, ars2::Split::train);
  ars2::RuleSet rules;
  if (!rules_path.empty()) rules = ars2::load_ruleset(rules_path, ds.num_classes);
  const ars2::WeakLabelMatrix wl = ars2::apply_ruleset(rules, ds);

  ars2::LabelModelOutput lm;
  json model_blob;
  if (model_name == "majority_vote") {
    lm = ars2::majority_vote(wl, seed);
  } else if (model_name == "dawid_skene") {
    const ars2::DawidSkeneModel m = ars2::dawid_skene_fit(wl);
    lm = ars2::posterior(m, wl, seed);
    model_blob = ars2::dawid_skene_to_json(m);
  } else {
    throw std::runtime_error("unknown label model: " + model_name);
  }

  json out = {{"num_classes", ds.num_classes},
              {"label_model", model_name},
              {"coverage", ars2::coverage(wl)},
              {"num_covered", lm.num_covered()},
              {"pseudo_labels", lm.pseudo_labels},
              {"posterior", lm.posterior}};
  if (!model_blob.is_null()) out["model"] = model_blob;
  if (!ds.docs.empty() && ds.docs.front().gold_label.has_value()) {
    const ars2::NoiseRate nr =
        ars2::noise_rate(lm.pseudo_labels, ars2::gold_labels(ds), lm.covered);
    if (!nr.empty_coverage) out["noise_rate"] = nr.value;
  }
  std::ofstream f(out_path);
  if (!f) throw std::runtime_error("cannot write: " + out_path);
  f << out.dump() << '\n';
  std::cout << "labeled " << lm.num_covered() << " of " << ds.docs.size() << " documents ("
            << model_name << ")\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& method, std::int64_t seed,
              const std::string& out_dir) {
  ars2::ExperimentConfig cfg = config_path.empty()
          ? ars2::ExperimentConfig{}
          : ars2::load_experiment_config(config_path);
  if (!method.empty()) cfg.method = method;
  if (seed >= 0) cfg.seeds = {static_cast<std::uint64_t>(seed)};
  cfg.validate();
  const ars2::RunReport report = ars2::run_experiment(cfg);
  ars2::emit_report(report, out_dir);
  std::cout << cfg.method << ": test macro-F1 " << report.mean_test_macro_f1 << " +/- "
            << report.std_test_macro_f1 << " over " << report.num_successful << '/'
            << cfg.seeds.size() << " seeds\n";
  for (const ars2::SeedOutcome& s : report.seeds)
    if (s.failed) std::cerr << "seed " << s.seed << " failed: " << s.error << '\n';
  return report.num_successful == 0 ? 1 : 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_path) {
  json combined = json::array();
  for (const std::string& dir : run_dirs) {
    const json m = read_json_file(dir + "/metrics.json");
    combined.push_back({{"run_dir", dir},
                        {"method", m.at("method")},
                        {"mean_test_macro_f1", m.at("mean_test_macro_f1")},
                        {"std_test_macro_f1", m.at("std_test_macro_f1")},
                        {"num_successful", m.at("num_successful")},
                        {"partial", m.at("partial")}});
    std::cout << dir << ": " << m.at("method").get<std::string>() << " "
              << m.at("mean_test_macro_f1").get<double>() << " +/- "
              << m.at("std_test_macro_f1").get<double>()
              << (m.at("partial").get<bool>() ? " (partial)" : "") << '\n';
  }
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw std::runtime_error("cannot write: " + out_path);
    f << combined.dump(2) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive ranking-based sample selection pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_path = ".";
  std::uint64_t seed = 0;

  CLI::App* generate = app.add_subcommand("generate", "generate a synthetic corpus and ruleset");
  generate->add_option("--config", config_path, "synthetic spec JSON");
  generate->add_option("--seed", seed, "random seed");
  generate->add_option("--out", out_path, "output directory");

  std::string in_path, rules_path;
  double rho = 10.0;
  CLI::App* imbalance = app.add_subcommand("imbalance", "subsample a dataset to an exponential class profile");
  imbalance->add_option("--in", in_path, "input dataset JSON")->required();
  imbalance->add_option("--rho", rho, "imbalance ratio (largest/smallest)");
  imbalance->add_option("--seed", seed, "random seed");
  imbalance->add_option("--out", out_path, "output dataset path")->required();

  std::string label_model = "dawid_skene";
  CLI::App* label = app.add_subcommand("label", "aggregate weak labels into pseudo-labels");
  label->add_option("--in", in_path, "input dataset JSON")->required();
  label->add_option("--rules", rules_path, "ruleset JSON (optional if the dataset embeds weak labels)");
  label->add_option("--model", label_model, "majority_vote or dawid_skene");
  label->add_option("--seed", seed, "random seed");
  label->add_option("--out", out_path, "output JSON path")->required();

  std::string method;
  std::int64_t train_seed = -1;
  CLI::App* train = app.add_subcommand("train", "run the full pipeline from a config");
  train->add_option("--config", config_path, "experiment config JSON");
  train->add_option("--method", method, "override: warmup_only, ars2, ars2_no_cr, ars2_no_rr, ars2_conf");
  train->add_option("--seed", train_seed, "run a single seed instead of the config list");
  train->add_option("--out", out_path, "output directory");

  std::vector<std::string> run_dirs;
  std::string report_out;
  CLI::App* report = app.add_subcommand("report", "re-aggregate existing run directories");
  report->add_option("dirs", run_dirs, "run directories holding metrics.json")->required();
  report->add_option("--out", report_out, "write combined JSON here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return cmd_generate(config_path, seed, out_path);
    if (imbalance->parsed()) return cmd_imbalance(in_path, rho, seed, out_path);
    if (label->parsed()) return cmd_label(in_path, rules_path, label_model, seed, out_path);
    if (train->parsed()) return cmd_train(config_path, method, train_seed, out_path);
    if (report->parsed()) return cmd_report(run_dirs, report_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
