#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ars2/random.hpp"
#include "ars2/rules.hpp"

namespace ars2 {

struct LabelModelOutput {
  // Row-stochastic posterior for covered rows; uncovered rows are all zero.
  std::vector<std::vector<double>> posterior;
  // argmax per covered row; -1 on uncovered rows.
  std::vector<int> pseudo_labels;
  std::vector<char> covered;

  std::size_t num_covered() const {
    std::size_t n = 0;
    for (char c : covered) n += c ? 1 : 0;
    return n;
  }
};

// Per-source confusion model fit by EM. confusion[i] has shape C x (C+1):
// P(l_i = v | y) for v in 0..C-1, with column C holding the abstain emission.
struct DawidSkeneModel {
  std::vector<double> class_prior;
  std::vector<std::vector<std::vector<double>>> confusion;
  std::vector<double> log_likelihood_trace;

  int num_classes() const { return static_cast<int>(class_prior.size()); }
  int num_rules() const { return static_cast<int>(confusion.size()); }
};

namespace detail {

// Argmax with uniform seeded tie-breaking over exactly-equal maxima.
inline int argmax_tiebreak(const std::vector<double>& row, Rng& rng) {
  double best = row[0];
  for (double v : row) best = std::max(best, v);
  int ties = 0;
  for (double v : row)
    if (v == best) ++ties;
  int pick = ties > 1 ? rng.below_int(ties) : 0;
  for (std::size_t c = 0; c < row.size(); ++c) {
    if (row[c] == best) {
      if (pick == 0) return static_cast<int>(c);
      --pick;
    }
  }
  return 0;
}

}  // namespace detail

// Posterior proportional to per-class vote counts among non-abstain entries.
inline LabelModelOutput majority_vote(const WeakLabelMatrix& matrix, std::uint64_t seed) {
  const int C = matrix.num_classes;
  Rng rng(Rng::derive(seed, 0x6d76));
  LabelModelOutput out;
  out.posterior.assign(matrix.rows(), std::vector<double>(static_cast<std::size_t>(C), 0.0));
  out.pseudo_labels.assign(matrix.rows(), -1);
  out.covered.assign(matrix.rows(), 0);
  for (std::size_t x = 0; x < matrix.rows(); ++x) {
    int total = 0;
    std::vector<int> votes(static_cast<std::size_t>(C), 0);
    for (int v : matrix.values[x]) {
      if (v >= 0) {
        ++votes[static_cast<std::size_t>(v)];
        ++total;
      }
    }
    if (total == 0) continue;
    out.covered[x] = 1;
    for (int c = 0; c < C; ++c)
      out.posterior[x][static_cast<std::size_t>(c)] =
          static_cast<double>(votes[static_cast<std::size_t>(c)]) / static_cast<double>(total);
    out.pseudo_labels[x] = detail::argmax_tiebreak(out.posterior[x], rng);
  }
  return out;
}

namespace detail {

// Data log-likelihood of the covered rows plus the Dirichlet smoothing terms.
// The M-step below maximizes exactly this penalized objective, which keeps the
// recorded trace monotone; the bare likelihood can dip under smoothed updates.
inline double ds_objective(const DawidSkeneModel& m, const WeakLabelMatrix& matrix,
                           const std::vector<std::size_t>& rows, double smoothing) {
  const int C = m.num_classes();
  const int k = m.num_rules();
  double ll = 0.0;
  std::vector<double> logp(static_cast<std::size_t>(C));
  for (std::size_t x : rows) {
    for (int c = 0; c < C; ++c) {
      double lp = std::log(m.class_prior[static_cast<std::size_t>(c)]);
      for (int i = 0; i < k; ++i) {
        const int v = matrix.values[x][static_cast<std::size_t>(i)];
        const std::size_t col = v < 0 ? static_cast<std::size_t>(C) : static_cast<std::size_t>(v);
        lp += std::log(m.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)][col]);
      }
      logp[static_cast<std::size_t>(c)] = lp;
    }
    const double mx = *std::max_element(logp.begin(), logp.end());
    double s = 0.0;
    for (double lp : logp) s += std::exp(lp - mx);
    ll += mx + std::log(s);
  }
  double penalty = 0.0;
  for (double p : m.class_prior) penalty += smoothing * std::log(p);
  for (const auto& conf : m.confusion)
    for (const auto& crow : conf)
      for (double p : crow) penalty += smoothing * std::log(p);
  return ll + penalty;
}

}  // namespace detail

// EM fit over the covered rows, initialized from majority-vote posteriors.
// Additive smoothing of 1 pseudo-count per cell stabilizes the M-step.
inline DawidSkeneModel dawid_skene_fit(const WeakLabelMatrix& matrix, int max_iter = 100,
                                       double tol = 1e-6) {
  if (max_iter < 1) throw std::runtime_error("dawid_skene_fit: max_iter must be >= 1");
  if (!(tol > 0)) throw std::runtime_error("dawid_skene_fit: tol must be > 0");
  const int C = matrix.num_classes;
  const int k = matrix.cols();
  const double smoothing = 1.0;

  std::vector<std::size_t> rows;
  for (std::size_t x = 0; x < matrix.rows(); ++x)
    if (matrix.row_covered(x)) rows.push_back(x);
  if (rows.empty()) throw std::runtime_error("dawid_skene_fit: nothing to aggregate");

  // Soft responsibilities, seeded from vote fractions.
  const LabelModelOutput mv = majority_vote(matrix, 0);
  std::vector<std::vector<double>> resp;
  resp.reserve(rows.size());
  for (std::size_t x : rows) resp.push_back(mv.posterior[x]);

  DawidSkeneModel model;
  model.class_prior.assign(static_cast<std::size_t>(C), 0.0);
  model.confusion.assign(static_cast<std::size_t>(k),
                         std::vector<std::vector<double>>(static_cast<std::size_t>(C),
                                                          std::vector<double>(static_cast<std::size_t>(C) + 1, 0.0)));

  for (int iter = 0; iter < max_iter; ++iter) {
    // M-step: prior and confusions from current responsibilities.
    std::vector<double> prior_num(static_cast<std::size_t>(C), smoothing);
    for (const auto& r : resp)
      for (int c = 0; c < C; ++c) prior_num[static_cast<std::size_t>(c)] += r[static_cast<std::size_t>(c)];
    const double prior_den = static_cast<double>(rows.size()) + smoothing * C;
    for (int c = 0; c < C; ++c)
      model.class_prior[static_cast<std::size_t>(c)] = prior_num[static_cast<std::size_t>(c)] / prior_den;

    for (int i = 0; i < k; ++i) {
      auto& conf = model.confusion[static_cast<std::size_t>(i)];
      for (auto& crow : conf) std::fill(crow.begin(), crow.end(), smoothing);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const int v = matrix.values[rows[r]][static_cast<std::size_t>(i)];
        const std::size_t col = v < 0 ? static_cast<std::size_t>(C) : static_cast<std::size_t>(v);
        for (int c = 0; c < C; ++c) conf[static_cast<std::size_t>(c)][col] += resp[r][static_cast<std::size_t>(c)];
      }
      for (auto& crow : conf) {
        double s = 0.0;
        for (double v : crow) s += v;
        for (double& v : crow) v /= s;
      }
    }

    // E-step: responsibilities under the refreshed parameters.
    std::vector<double> logp(static_cast<std::size_t>(C));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (int c = 0; c < C; ++c) {
        double lp = std::log(model.class_prior[static_cast<std::size_t>(c)]);
        for (int i = 0; i < k; ++i) {
          const int v = matrix.values[rows[r]][static_cast<std::size_t>(i)];
          const std::size_t col = v < 0 ? static_cast<std::size_t>(C) : static_cast<std::size_t>(v);
          lp += std::log(model.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)][col]);
        }
        logp[static_cast<std::size_t>(c)] = lp;
      }
      const double mx = *std::max_element(logp.begin(), logp.end());
      double s = 0.0;
      for (int c = 0; c < C; ++c) {
        resp[r][static_cast<std::size_t>(c)] = std::exp(logp[static_cast<std::size_t>(c)] - mx);
        s += resp[r][static_cast<std::size_t>(c)];
      }
      for (int c = 0; c < C; ++c) resp[r][static_cast<std::size_t>(c)] /= s;
    }

    model.log_likelihood_trace.push_back(detail::ds_objective(model, matrix, rows, smoothing));
    const std::size_t t = model.log_likelihood_trace.size();
    if (t >= 2 && model.log_likelihood_trace[t - 1] - model.log_likelihood_trace[t - 2] < tol) break;
  }
  return model;
}

// Posterior per row under fixed parameters, abstain columns included.
inline LabelModelOutput posterior(const DawidSkeneModel& model, const WeakLabelMatrix& matrix,
                                  std::uint64_t seed = 0) {
  const int C = matrix.num_classes;
  const int k = matrix.cols();
  if (model.num_classes() != C || model.num_rules() != k)
    throw std::runtime_error("posterior: model dimensions do not match matrix");
  Rng rng(Rng::derive(seed, 0x647370));
  LabelModelOutput out;
  out.posterior.assign(matrix.rows(), std::vector<double>(static_cast<std::size_t>(C), 0.0));
  out.pseudo_labels.assign(matrix.rows(), -1);
  out.covered.assign(matrix.rows(), 0);
  std::vector<double> logp(static_cast<std::size_t>(C));
  for (std::size_t x = 0; x < matrix.rows(); ++x) {
    if (!matrix.row_covered(x)) continue;
    out.covered[x] = 1;
    for (int c = 0; c < C; ++c) {
      double lp = std::log(model.class_prior[static_cast<std::size_t>(c)]);
      for (int i = 0; i < k; ++i) {
        const int v = matrix.values[x][static_cast<std::size_t>(i)];
        const std::size_t col = v < 0 ? static_cast<std::size_t>(C) : static_cast<std::size_t>(v);
        lp += std::log(model.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)][col]);
      }
      logp[static_cast<std::size_t>(c)] = lp;
    }
    const double mx = *std::max_element(logp.begin(), logp.end());
    double s = 0.0;
    for (int c = 0; c < C; ++c) {
      out.posterior[x][static_cast<std::size_t>(c)] = std::exp(logp[static_cast<std::size_t>(c)] - mx);
      s += out.posterior[x][static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < C; ++c) out.posterior[x][static_cast<std::size_t>(c)] /= s;
    out.pseudo_labels[x] = detail::argmax_tiebreak(out.posterior[x], rng);
  }
  return out;
}

inline nlohmann::json dawid_skene_to_json(const DawidSkeneModel& model) {
  return {{"class_prior", model.class_prior},
          {"confusion", model.confusion},
          {"log_likelihood_trace", model.log_likelihood_trace}};
}

inline void export_dawid_skene(const DawidSkeneModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  out << dawid_skene_to_json(model).dump(2) << '\n';
}

}  // namespace ars2
