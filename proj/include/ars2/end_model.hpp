#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ars2/random.hpp"

namespace ars2 {

// ---------------------------------------------------------------------------
// Hashed term-frequency features. Stored sparse; semantically a dense
// D-vector, zero outside the listed buckets, L2-normalized unless empty.
// ---------------------------------------------------------------------------

struct FeatureVector {
  int dim = 0;
  std::vector<std::pair<int, double>> entries;  // sorted by bucket
};

inline FeatureVector featurize(std::string_view text, int dim) {
  if (dim < 2) throw std::runtime_error("featurize: dimension must be >= 2");
  FeatureVector fv;
  fv.dim = dim;
  std::vector<std::pair<int, double>>& e = fv.entries;
  for (const std::string& tok : tokenize(text)) {
    const int bucket = static_cast<int>(fnv1a64(tok) % static_cast<std::uint64_t>(dim));
    e.emplace_back(bucket, 1.0);
  }
  if (e.empty()) return fv;
  std::sort(e.begin(), e.end());
  std::size_t w = 0;
  for (std::size_t r = 1; r < e.size(); ++r) {
    if (e[r].first == e[w].first) {
      e[w].second += e[r].second;
    } else {
      e[++w] = e[r];
    }
  }
  e.resize(w + 1);
  double norm = 0.0;
  for (const auto& [b, v] : e) norm += v * v;
  norm = std::sqrt(norm);
  for (auto& [b, v] : e) v /= norm;
  return fv;
}

inline std::vector<FeatureVector> featurize_all(const std::vector<std::string>& texts, int dim) {
  std::vector<FeatureVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(featurize(t, dim));
  return out;
}

// ---------------------------------------------------------------------------
// 2-hidden-layer MLP, parameters in one flat vector.
// Layout: w1 [d*H + h] | b1 [H] | w2 [i*H + j] | b2 [H] | w3 [h*C + c] | b3 [C]
// ---------------------------------------------------------------------------

struct MlpModel {
  int input_dim = 0;
  int hidden_dim = 0;
  int num_classes = 0;
  std::vector<double> params;

  std::size_t w1_off() const { return 0; }
  std::size_t b1_off() const { return static_cast<std::size_t>(input_dim) * hidden_dim; }
  std::size_t w2_off() const { return b1_off() + hidden_dim; }
  std::size_t b2_off() const { return w2_off() + static_cast<std::size_t>(hidden_dim) * hidden_dim; }
  std::size_t w3_off() const { return b2_off() + hidden_dim; }
  std::size_t b3_off() const { return w3_off() + static_cast<std::size_t>(hidden_dim) * num_classes; }
  std::size_t param_count() const { return b3_off() + num_classes; }

  const char* block_name(std::size_t idx) const {
    if (idx < b1_off()) return "w1";
    if (idx < w2_off()) return "b1";
    if (idx < b2_off()) return "w2";
    if (idx < w3_off()) return "b2";
    if (idx < b3_off()) return "w3";
    return "b3";
  }

  // He-normal weights, zero biases.
  static MlpModel init(int input_dim, int hidden_dim, int num_classes, std::uint64_t seed) {
    if (input_dim < 1 || hidden_dim < 1 || num_classes < 2)
      throw std::runtime_error("MlpModel::init: bad dimensions");
    MlpModel m;
    m.input_dim = input_dim;
    m.hidden_dim = hidden_dim;
    m.num_classes = num_classes;
    m.params.assign(m.param_count(), 0.0);
    Rng rng(Rng::derive(seed, 0x696e6974));
    const double s1 = std::sqrt(2.0 / input_dim);
    const double s2 = std::sqrt(2.0 / hidden_dim);
    const double s3 = std::sqrt(1.0 / hidden_dim);
    for (std::size_t i = m.w1_off(); i < m.b1_off(); ++i) m.params[i] = s1 * rng.normal();
    for (std::size_t i = m.w2_off(); i < m.b2_off(); ++i) m.params[i] = s2 * rng.normal();
    for (std::size_t i = m.w3_off(); i < m.b3_off(); ++i) m.params[i] = s3 * rng.normal();
    return m;
  }
};

namespace detail {

struct ForwardCache {
  std::vector<double> pre1, act1, pre2, act2, logits, probs;
  std::vector<double> mask1, mask2;  // inverted-dropout scale factors
};

inline void mlp_forward(const MlpModel& m, const FeatureVector& x, bool train_mode,
                        double dropout_rate, Rng* rng, ForwardCache& c) {
  const int H = m.hidden_dim;
  const int C = m.num_classes;
  if (x.dim != m.input_dim) throw std::runtime_error("forward: feature dimension mismatch");
  for (const auto& [b, v] : x.entries)
    if (!std::isfinite(v)) throw std::runtime_error("forward: non-finite input");

  c.pre1.assign(static_cast<std::size_t>(H), 0.0);
  const double* w1 = m.params.data() + m.w1_off();
  for (const auto& [d, v] : x.entries) {
    const double* row = w1 + static_cast<std::size_t>(d) * H;
    for (int h = 0; h < H; ++h) c.pre1[static_cast<std::size_t>(h)] += row[h] * v;
  }
  const double* b1 = m.params.data() + m.b1_off();
  for (int h = 0; h < H; ++h) c.pre1[static_cast<std::size_t>(h)] += b1[h];

  c.act1.resize(static_cast<std::size_t>(H));
  for (int h = 0; h < H; ++h) c.act1[static_cast<std::size_t>(h)] = std::max(0.0, c.pre1[static_cast<std::size_t>(h)]);

  const bool drop = train_mode && dropout_rate > 0.0;
  if (drop && rng == nullptr) throw std::runtime_error("forward: dropout requires an RNG in train mode");
  c.mask1.assign(static_cast<std::size_t>(H), 1.0);
  if (drop) {
    const double keep = 1.0 - dropout_rate;
    for (int h = 0; h < H; ++h)
      c.mask1[static_cast<std::size_t>(h)] = rng->bernoulli(dropout_rate) ? 0.0 : 1.0 / keep;
    for (int h = 0; h < H; ++h) c.act1[static_cast<std::size_t>(h)] *= c.mask1[static_cast<std::size_t>(h)];
  }

  c.pre2.assign(static_cast<std::size_t>(H), 0.0);
  const double* w2 = m.params.data() + m.w2_off();
  for (int i = 0; i < H; ++i) {
    const double a = c.act1[static_cast<std::size_t>(i)];
    if (a == 0.0) continue;
    const double* row = w2 + static_cast<std::size_t>(i) * H;
    for (int j = 0; j < H; ++j) c.pre2[static_cast<std::size_t>(j)] += row[j] * a;
  }
  const double* b2 = m.params.data() + m.b2_off();
  for (int j = 0; j < H; ++j) c.pre2[static_cast<std::size_t>(j)] += b2[j];

  c.act2.resize(static_cast<std::size_t>(H));
  for (int j = 0; j < H; ++j) c.act2[static_cast<std::size_t>(j)] = std::max(0.0, c.pre2[static_cast<std::size_t>(j)]);
  c.mask2.assign(static_cast<std::size_t>(H), 1.0);
  if (drop) {
    const double keep = 1.0 - dropout_rate;
    for (int j = 0; j < H; ++j)
      c.mask2[static_cast<std::size_t>(j)] = rng->bernoulli(dropout_rate) ? 0.0 : 1.0 / keep;
    for (int j = 0; j < H; ++j) c.act2[static_cast<std::size_t>(j)] *= c.mask2[static_cast<std::size_t>(j)];
  }

  c.logits.assign(static_cast<std::size_t>(C), 0.0);
  const double* w3 = m.params.data() + m.w3_off();
  for (int h = 0; h < H; ++h) {
    const double a = c.act2[static_cast<std::size_t>(h)];
    if (a == 0.0) continue;
    const double* row = w3 + static_cast<std::size_t>(h) * C;
    for (int cc = 0; cc < C; ++cc) c.logits[static_cast<std::size_t>(cc)] += row[cc] * a;
  }
  const double* b3 = m.params.data() + m.b3_off();
  for (int cc = 0; cc < C; ++cc) c.logits[static_cast<std::size_t>(cc)] += b3[cc];
}

inline void softmax_from_logits(const std::vector<double>& logits, std::vector<double>& probs) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  probs.resize(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - mx);
    s += probs[i];
  }
  for (double& p : probs) p /= s;
}

}  // namespace detail

// Softmax class probabilities. Dropout is applied after each hidden
// activation only in train mode.
inline std::vector<double> forward(const MlpModel& m, const FeatureVector& x,
                                   bool train_mode = false, Rng* rng = nullptr,
                                   double dropout_rate = 0.0) {
  detail::ForwardCache c;
  detail::mlp_forward(m, x, train_mode, dropout_rate, rng, c);
  detail::softmax_from_logits(c.logits, c.probs);
  return c.probs;
}

// ---------------------------------------------------------------------------
// Loss modes
// ---------------------------------------------------------------------------

enum class LossMode { plain, logit_adjust, effective_number };

inline LossMode loss_mode_from_name(const std::string& name) {
  if (name == "plain") return LossMode::plain;
  if (name == "logit_adjust") return LossMode::logit_adjust;
  if (name == "effective_number") return LossMode::effective_number;
  throw std::runtime_error("unknown loss mode: " + name);
}

inline const char* loss_mode_name(LossMode m) {
  switch (m) {
    case LossMode::plain: return "plain";
    case LossMode::logit_adjust: return "logit_adjust";
    default: return "effective_number";
  }
}

struct LossContext {
  LossMode mode = LossMode::plain;
  std::vector<double> logit_offset;  // tau * log p(y), tau = 1
  std::vector<double> class_weight;  // mean 1 over classes present in counts
};

// Builds the per-class terms the adjusted modes need from training-label
// counts. Plain mode needs nothing.
inline LossContext make_loss_context(LossMode mode, const std::vector<std::int64_t>& class_counts,
                                     double en_beta = 0.999) {
  LossContext ctx;
  ctx.mode = mode;
  if (mode == LossMode::plain) return ctx;
  if (class_counts.empty())
    throw std::runtime_error("make_loss_context: class counts required for adjusted loss modes");
  const std::size_t C = class_counts.size();
  std::int64_t total = 0;
  for (std::int64_t n : class_counts) total += n;
  if (total <= 0) throw std::runtime_error("make_loss_context: empty class counts");
  if (mode == LossMode::logit_adjust) {
    ctx.logit_offset.resize(C);
    for (std::size_t c = 0; c < C; ++c) {
      const double p = std::max(static_cast<double>(class_counts[c]) / static_cast<double>(total), 1e-12);
      ctx.logit_offset[c] = std::log(p);
    }
  } else {
    if (!(en_beta >= 0.0 && en_beta < 1.0))
      throw std::runtime_error("make_loss_context: en_beta must lie in [0,1)");
    ctx.class_weight.assign(C, 0.0);
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < C; ++c) {
      if (class_counts[c] <= 0) continue;
      const double w = en_beta == 0.0
              ? 1.0
              : (1.0 - en_beta) / (1.0 - std::pow(en_beta, static_cast<double>(class_counts[c])));
      ctx.class_weight[c] = w;
      sum += w;
      ++present;
    }
    for (std::size_t c = 0; c < C; ++c)
      if (ctx.class_weight[c] > 0.0) ctx.class_weight[c] *= static_cast<double>(present) / sum;
  }
  return ctx;
}

struct TrainExample {
  int index = 0;  // position in the feature table
  int label = 0;
};

// Mean (weighted) cross-entropy over the batch plus gradients via
// backpropagation. grads is resized and overwritten.
inline double loss_and_grad(const MlpModel& m, const std::vector<FeatureVector>& feats,
                            const TrainExample* batch, std::size_t batch_size,
                            const LossContext& ctx, double dropout_rate, Rng* rng,
                            std::vector<double>& grads) {
  if (batch_size == 0) throw std::runtime_error("loss_and_grad: empty batch");
  const int H = m.hidden_dim;
  const int C = m.num_classes;
  if (ctx.mode == LossMode::logit_adjust && ctx.logit_offset.size() != static_cast<std::size_t>(C))
    throw std::runtime_error("loss_and_grad: logit_adjust requires a class prior");
  if (ctx.mode == LossMode::effective_number && ctx.class_weight.size() != static_cast<std::size_t>(C))
    throw std::runtime_error("loss_and_grad: effective_number requires class counts");

  grads.assign(m.param_count(), 0.0);
  double* g = grads.data();
  const double* w2 = m.params.data() + m.w2_off();
  const double* w3 = m.params.data() + m.w3_off();

  detail::ForwardCache c;
  std::vector<double> dz(static_cast<std::size_t>(C));
  std::vector<double> dh2(static_cast<std::size_t>(H)), dh1(static_cast<std::size_t>(H));
  double total_loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(batch_size);

  for (std::size_t b = 0; b < batch_size; ++b) {
    const TrainExample& ex = batch[b];
    const int y = ex.label;
    if (y < 0 || y >= C) throw std::runtime_error("loss_and_grad: label out of range");
    const FeatureVector& x = feats[static_cast<std::size_t>(ex.index)];
    detail::mlp_forward(m, x, true, dropout_rate, rng, c);

    if (ctx.mode == LossMode::logit_adjust)
      for (int cc = 0; cc < C; ++cc) c.logits[static_cast<std::size_t>(cc)] += ctx.logit_offset[static_cast<std::size_t>(cc)];

    // Log-softmax cross-entropy.
    const double mx = *std::max_element(c.logits.begin(), c.logits.end());
    double lse = 0.0;
    for (double z : c.logits) lse += std::exp(z - mx);
    lse = mx + std::log(lse);
    const double weight =
        ctx.mode == LossMode::effective_number ? ctx.class_weight[static_cast<std::size_t>(y)] : 1.0;
    total_loss += weight * (lse - c.logits[static_cast<std::size_t>(y)]);

    for (int cc = 0; cc < C; ++cc)
      dz[static_cast<std::size_t>(cc)] = std::exp(c.logits[static_cast<std::size_t>(cc)] - lse);
    dz[static_cast<std::size_t>(y)] -= 1.0;
    for (int cc = 0; cc < C; ++cc) dz[static_cast<std::size_t>(cc)] *= weight * inv_n;

    // Output layer.
    double* gw3 = g + m.w3_off();
    double* gb3 = g + m.b3_off();
    std::fill(dh2.begin(), dh2.end(), 0.0);
    for (int h = 0; h < H; ++h) {
      const double a = c.act2[static_cast<std::size_t>(h)];
      const double* row = w3 + static_cast<std::size_t>(h) * C;
      double* grow = gw3 + static_cast<std::size_t>(h) * C;
      double acc = 0.0;
      for (int cc = 0; cc < C; ++cc) {
        grow[cc] += a * dz[static_cast<std::size_t>(cc)];
        acc += row[cc] * dz[static_cast<std::size_t>(cc)];
      }
      dh2[static_cast<std::size_t>(h)] = acc;
    }
    for (int cc = 0; cc < C; ++cc) gb3[cc] += dz[static_cast<std::size_t>(cc)];

    // Second hidden layer: dropout scale, then ReLU gate.
    for (int j = 0; j < H; ++j) {
      double d = dh2[static_cast<std::size_t>(j)] * c.mask2[static_cast<std::size_t>(j)];
      if (c.pre2[static_cast<std::size_t>(j)] <= 0.0) d = 0.0;
      dh2[static_cast<std::size_t>(j)] = d;
    }
    double* gw2 = g + m.w2_off();
    double* gb2 = g + m.b2_off();
    std::fill(dh1.begin(), dh1.end(), 0.0);
    for (int i = 0; i < H; ++i) {
      const double a = c.act1[static_cast<std::size_t>(i)];
      const double* row = w2 + static_cast<std::size_t>(i) * H;
      double* grow = gw2 + static_cast<std::size_t>(i) * H;
      double acc = 0.0;
      for (int j = 0; j < H; ++j) {
        const double d = dh2[static_cast<std::size_t>(j)];
        grow[j] += a * d;
        acc += row[j] * d;
      }
      dh1[static_cast<std::size_t>(i)] = acc;
    }
    for (int j = 0; j < H; ++j) gb2[j] += dh2[static_cast<std::size_t>(j)];

    // First hidden layer.
    for (int h = 0; h < H; ++h) {
      double d = dh1[static_cast<std::size_t>(h)] * c.mask1[static_cast<std::size_t>(h)];
      if (c.pre1[static_cast<std::size_t>(h)] <= 0.0) d = 0.0;
      dh1[static_cast<std::size_t>(h)] = d;
    }
    double* gw1 = g + m.w1_off();
    double* gb1 = g + m.b1_off();
    for (const auto& [d_idx, v] : x.entries) {
      double* grow = gw1 + static_cast<std::size_t>(d_idx) * H;
      for (int h = 0; h < H; ++h) grow[h] += v * dh1[static_cast<std::size_t>(h)];
    }
    for (int h = 0; h < H; ++h) gb1[h] += dh1[static_cast<std::size_t>(h)];
  }
  return total_loss * inv_n;
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay and bias-corrected moments.
// ---------------------------------------------------------------------------

struct AdamWState {
  std::vector<double> m, v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamWState init(std::size_t param_count) {
    AdamWState st;
    st.m.assign(param_count, 0.0);
    st.v.assign(param_count, 0.0);
    return st;
  }
};

inline void adamw_step(MlpModel& model, AdamWState& st, const std::vector<double>& grads,
                       double learning_rate, double weight_decay) {
  if (grads.size() != model.param_count() || st.m.size() != grads.size())
    throw std::runtime_error("adamw_step: size mismatch");
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const double grad = grads[i];
    if (!std::isfinite(grad))
      throw std::runtime_error(std::string("adamw_step: non-finite gradient in block ") +
                               model.block_name(i));
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad;
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad * grad;
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    model.params[i] -= learning_rate * (mhat / (std::sqrt(vhat) + st.eps) + weight_decay * model.params[i]);
  }
}

// ---------------------------------------------------------------------------
// Macro-averaged F1. A class absent from both predictions and gold scores 0.
// ---------------------------------------------------------------------------

inline double macro_f1(const std::vector<int>& predictions, const std::vector<int>& gold,
                       int num_classes) {
  if (predictions.empty()) throw std::runtime_error("macro_f1: empty input");
  if (predictions.size() != gold.size()) throw std::runtime_error("macro_f1: length mismatch");
  std::vector<std::int64_t> tp(static_cast<std::size_t>(num_classes), 0);
  std::vector<std::int64_t> fp(static_cast<std::size_t>(num_classes), 0);
  std::vector<std::int64_t> fn(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int p = predictions[i], y = gold[i];
    if (p < 0 || p >= num_classes || y < 0 || y >= num_classes)
      throw std::runtime_error("macro_f1: label out of range");
    if (p == y) {
      ++tp[static_cast<std::size_t>(p)];
    } else {
      ++fp[static_cast<std::size_t>(p)];
      ++fn[static_cast<std::size_t>(y)];
    }
  }
  double sum = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    const auto i = static_cast<std::size_t>(c);
    const double denom = static_cast<double>(2 * tp[i] + fp[i] + fn[i]);
    sum += denom > 0.0 ? 2.0 * static_cast<double>(tp[i]) / denom : 0.0;
  }
  return sum / static_cast<double>(num_classes);
}

inline int predict_class(const MlpModel& m, const FeatureVector& x) {
  const std::vector<double> p = forward(m, x);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

inline double evaluate_macro_f1(const MlpModel& m, const std::vector<FeatureVector>& feats,
                                const std::vector<int>& labels) {
  std::vector<int> preds(feats.size());
  for (std::size_t i = 0; i < feats.size(); ++i) preds[i] = predict_class(m, feats[i]);
  return macro_f1(preds, labels, m.num_classes);
}

// ---------------------------------------------------------------------------
// Training with early stopping on dev macro-F1.
// ---------------------------------------------------------------------------

struct TrainConfig {
  int batch_size = 128;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double dropout_rate = 0.2;
  int max_steps = 5000;
  int eval_every = 100;
  int patience = 10;
  LossMode loss_mode = LossMode::plain;
  double en_beta = 0.999;
  int feature_dim = 4096;
  int hidden_dim = 128;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) throw std::runtime_error("train config: batch_size must be >= 1");
    if (eval_every < 1) throw std::runtime_error("train config: eval_every must be >= 1");
    if (patience < 1) throw std::runtime_error("train config: patience must be >= 1");
    if (max_steps < 1) throw std::runtime_error("train config: max_steps must be >= 1");
    if (!(en_beta >= 0.0 && en_beta < 1.0)) throw std::runtime_error("train config: en_beta must lie in [0,1)");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw std::runtime_error("train config: dropout_rate must lie in [0,1)");
  }
};

struct EvalSet {
  const std::vector<FeatureVector>* features = nullptr;
  const std::vector<int>* labels = nullptr;
};

struct TrainHistory {
  std::vector<double> dev_macro_f1;
  int best_step = 0;
  double best_dev_f1 = 0.0;
  bool stopped_early = false;
  int steps_run = 0;
};

namespace detail {

// Tracks the best dev score and the patience counter shared by warm-up and
// continual training.
struct EarlyStopper {
  double best = -1.0;
  int best_step = 0;
  int evals_since_best = 0;
  std::vector<double> params_at_best;

  // Returns true when patience is exhausted.
  bool record(double f1, int step, const MlpModel& m, int patience, TrainHistory& hist) {
    hist.dev_macro_f1.push_back(f1);
    if (f1 > best) {
      best = f1;
      best_step = step;
      evals_since_best = 0;
      params_at_best = m.params;
    } else {
      ++evals_since_best;
    }
    return evals_since_best >= patience;
  }

  void restore(MlpModel& m, TrainHistory& hist) const {
    if (!params_at_best.empty()) m.params = params_at_best;
    hist.best_step = best_step;
    hist.best_dev_f1 = best;
  }
};

}  // namespace detail

// Minibatch AdamW over the given examples with periodic dev evaluation;
// returns the parameters from the best evaluation.
inline MlpModel train(MlpModel model, const std::vector<FeatureVector>& feats,
                      const std::vector<TrainExample>& examples, const EvalSet& dev,
                      const TrainConfig& cfg, TrainHistory* history = nullptr,
                      const LossContext* ctx_in = nullptr) {
  cfg.validate();
  if (examples.empty()) throw std::runtime_error("train: empty training set");
  if (dev.features == nullptr || dev.labels == nullptr || dev.features->empty())
    throw std::runtime_error("train: missing dev set");

  LossContext ctx;
  if (ctx_in != nullptr) {
    ctx = *ctx_in;
  } else if (cfg.loss_mode != LossMode::plain) {
    std::vector<std::int64_t> counts(static_cast<std::size_t>(model.num_classes), 0);
    for (const TrainExample& e : examples) ++counts[static_cast<std::size_t>(e.label)];
    ctx = make_loss_context(cfg.loss_mode, counts, cfg.en_beta);
  }

  Rng shuffle_rng(Rng::derive(cfg.seed, 0x73687566));
  Rng dropout_rng(Rng::derive(cfg.seed, 0x64726f70));
  AdamWState opt = AdamWState::init(model.param_count());
  TrainHistory local;
  TrainHistory& hist = history != nullptr ? *history : local;
  detail::EarlyStopper stopper;

  std::vector<TrainExample> order = examples;
  std::size_t cursor = order.size();  // triggers the first shuffle
  std::vector<double> grads;
  int step = 0;
  bool stop = false;
  while (step < cfg.max_steps && !stop) {
    if (cursor >= order.size()) {
      shuffle_rng.shuffle(order);
      cursor = 0;
    }
    const std::size_t n = std::min(static_cast<std::size_t>(cfg.batch_size), order.size() - cursor);
    loss_and_grad(model, feats, order.data() + cursor, n, ctx, cfg.dropout_rate, &dropout_rng, grads);
    adamw_step(model, opt, grads, cfg.learning_rate, cfg.weight_decay);
    cursor += n;
    ++step;
    if (step % cfg.eval_every == 0) {
      const double f1 = evaluate_macro_f1(model, *dev.features, *dev.labels);
      if (stopper.record(f1, step, model, cfg.patience, hist)) {
        hist.stopped_early = true;
        stop = true;
      }
    }
  }
  if (hist.dev_macro_f1.empty() || (!hist.stopped_early && step % cfg.eval_every != 0)) {
    const double f1 = evaluate_macro_f1(model, *dev.features, *dev.labels);
    stopper.record(f1, step, model, cfg.patience, hist);
  }
  hist.steps_run = step;
  stopper.restore(model, hist);
  return model;
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON blob that round-trips parameters exactly.
// ---------------------------------------------------------------------------

inline nlohmann::json model_to_json(const MlpModel& m, std::uint64_t seed = 0) {
  return {{"format_version", 1},
          {"input_dim", m.input_dim},
          {"hidden_dim", m.hidden_dim},
          {"num_classes", m.num_classes},
          {"seed", seed},
          {"params", m.params}};
}

inline MlpModel model_from_json(const nlohmann::json& j) {
  MlpModel m;
  m.input_dim = j.at("input_dim").get<int>();
  m.hidden_dim = j.at("hidden_dim").get<int>();
  m.num_classes = j.at("num_classes").get<int>();
  m.params = j.at("params").get<std::vector<double>>();
  if (m.params.size() != m.param_count())
    throw std::runtime_error("model checkpoint: parameter count mismatch");
  return m;
}

inline void save_model(const MlpModel& m, const std::string& path, std::uint64_t seed = 0) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model checkpoint: " + path);
  out << model_to_json(m, seed).dump() << '\n';
}

inline MlpModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model checkpoint: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace ars2
