#pragma once

// Adam, a plateau learning-rate scheduler, early stopping with a best-weights
// snapshot, and the epoch loops that tie them to the models.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "clarae/models.hpp"
#include "clarae/signals.hpp"

namespace clarae::training {

enum class TargetMode { reconstruction, denoising };

struct TrainConfig {
  double lr0 = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 300;
  std::size_t early_stop_patience = 11;
  double early_stop_min_delta = 1e-6;
  double sched_factor = 0.5;
  std::size_t sched_patience = 5;
  double lr_min = 1e-8;
  std::uint64_t seed = 0;
  TargetMode target = TargetMode::reconstruction;
  double snr_min_db = -5.0;  // denoising mode: per-sample SNR drawn uniformly
  double snr_max_db = 15.0;
  double max_seconds = 0.0;  // wall-clock cap, 0 = none

  void validate() const {
    if (!(lr0 > 0.0)) throw std::invalid_argument("train: lr0 must be positive");
    if (!(sched_factor > 0.0 && sched_factor < 1.0)) throw std::invalid_argument("train: sched_factor in (0,1)");
    if (sched_patience < 1 || early_stop_patience < 1) throw std::invalid_argument("train: patience must be >= 1");
    if (!(lr_min > 0.0 && lr_min <= lr0)) throw std::invalid_argument("train: need 0 < lr_min <= lr0");
    if (batch_size == 0 || max_epochs == 0) throw std::invalid_argument("train: batch_size and max_epochs >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw std::invalid_argument("train: betas must be in [0,1)");
    }
    if (!(adam_eps > 0.0)) throw std::invalid_argument("train: adam_eps must be positive");
    if (!(snr_min_db <= snr_max_db)) throw std::invalid_argument("train: snr_min_db > snr_max_db");
  }
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), T{0});
      v_.emplace_back(p.size(), T{0});
    }
  }

  std::size_t steps() const { return t_; }
  std::span<const T> first_moment(std::size_t i) const { return m_.at(i); }
  std::span<const T> second_moment(std::size_t i) const { return v_.at(i); }

  /// Bias-corrected Adam step with the gradients currently held by the
  /// parameters. A parameter without a gradient buffer counts as zero gradient.
  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      auto pv = p.values();
      const bool has = p.has_grad();
      if (has && p.grad().size() != pv.size()) throw ShapeError("adam: gradient/parameter size mismatch");
      T* m = m_[i].data();
      T* v = v_[i].data();
      const T* g = has ? p.grad().data() : nullptr;
      const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
      const T c1 = static_cast<T>(1.0 - beta1_), c2 = static_cast<T>(1.0 - beta2_);
      const T step = static_cast<T>(lr / bc1);
      const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
      const T e = static_cast<T>(eps_);
      T* pd = pv.data();
#pragma omp simd
      for (std::size_t j = 0; j < pv.size(); ++j) {
        const T gj = g ? g[j] : T{0};
        m[j] = b1 * m[j] + c1 * gj;
        v[j] = b2 * v[j] + c2 * gj * gj;
        pd[j] -= step * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + e);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Plateau scheduler and early stopping
// ---------------------------------------------------------------------------

/// Multiplies the rate by factor once more than patience consecutive epochs
/// fail to lower the best validation loss, never going below min_lr.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor = 0.5, std::size_t patience = 5, double min_lr = 1e-8)
      : factor_(factor), patience_(patience), min_lr_(min_lr) {}

  double step(double val_loss, double lr) {
    if (val_loss < best_) {
      best_ = val_loss;
      bad_ = 0;
      return lr;
    }
    if (++bad_ > patience_) {
      bad_ = 0;
      return std::max(lr * factor_, min_lr_);
    }
    return lr;
  }

  double best() const { return best_; }
  std::size_t bad_epochs() const { return bad_; }

 private:
  double factor_;
  std::size_t patience_;
  double min_lr_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_ = 0;
};

/// Improvement means val < best - min_delta. Signals a stop once patience
/// consecutive epochs fail to improve.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience = 11, double min_delta = 1e-6) : patience_(patience), min_delta_(min_delta) {}

  /// Returns true on improvement (the caller should snapshot weights).
  bool observe(double val_loss) {
    if (val_loss < best_ - min_delta_) {
      best_ = val_loss;
      bad_ = 0;
      return true;
    }
    ++bad_;
    return false;
  }

  bool should_stop() const { return bad_ >= patience_; }
  double best() const { return best_; }
  std::size_t bad_epochs() const { return bad_; }

 private:
  std::size_t patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_ = 0;
};

template <typename T>
using Snapshot = std::vector<std::vector<T>>;

template <typename T>
Snapshot<T> snapshot(const std::vector<NamedTensor<T>>& state) {
  Snapshot<T> s;
  for (const auto& nt : state) s.emplace_back(nt.tensor.values().begin(), nt.tensor.values().end());
  return s;
}

template <typename T>
void restore(std::vector<NamedTensor<T>> state, const Snapshot<T>& s) {
  if (s.size() != state.size()) throw std::logic_error("restore: snapshot does not match model state");
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto dst = state[i].tensor.values();
    if (dst.size() != s[i].size()) throw std::logic_error("restore: snapshot tensor size mismatch");
    std::copy(s[i].begin(), s[i].end(), dst.begin());
  }
}

// ---------------------------------------------------------------------------
// Epoch loop
// ---------------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::string stop_reason;  // early_stop | max_epochs | time_limit
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Runs epochs until early stopping, max_epochs or the time cap, then restores
/// the best weights. train_epoch(epoch, lr) returns the mean training loss;
/// validate() returns the validation loss in eval mode.
template <class Model, class TrainEpoch, class Validate>
TrainReport run_epochs(Model& model, const TrainConfig& cfg, TrainEpoch&& train_epoch, Validate&& validate,
                       const EpochCallback& on_epoch = {}) {
  using T = typename Model::value_type;
  cfg.validate();
  PlateauScheduler sched(cfg.sched_factor, cfg.sched_patience, cfg.lr_min);
  EarlyStopping stopper(cfg.early_stop_patience, cfg.early_stop_min_delta);
  Snapshot<T> best = snapshot(model.state());
  TrainReport report;
  double lr = cfg.lr0;
  const auto start = std::chrono::steady_clock::now();
  report.stop_reason = "max_epochs";
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = train_epoch(epoch, lr);
    rec.val_loss = validate();
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss)) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) + " (train loss " +
                         std::to_string(rec.train_loss) + ", val loss " + std::to_string(rec.val_loss) + ")");
    }
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    lr = sched.step(rec.val_loss, lr);
    if (stopper.observe(rec.val_loss)) {
      best = snapshot(model.state());
      report.best_epoch = epoch;
      report.best_val_loss = rec.val_loss;
    }
    if (stopper.should_stop()) {
      report.stop_reason = "early_stop";
      break;
    }
    if (cfg.max_seconds > 0.0 && rec.seconds >= cfg.max_seconds && epoch < cfg.max_epochs) {
      report.stop_reason = "time_limit";
      break;
    }
  }
  restore(model.state(), best);
  model.set_mode(Mode::eval);
  return report;
}

/// Input batch for rows idx[first, first + n): the clean rows, or in
/// denoising mode each row plus white noise at an SNR drawn uniformly from the
/// configured range. Noise depends only on (seed, stream, row id).
inline std::vector<float> make_inputs(const signals::SignalSet& data, std::span<const std::size_t> rows,
                                      const TrainConfig& cfg, std::uint64_t stream) {
  std::vector<float> out;
  out.reserve(rows.size() * data.len);
  for (auto r : rows) {
    auto clean = data.row(r);
    if (cfg.target == TargetMode::reconstruction) {
      out.insert(out.end(), clean.begin(), clean.end());
      continue;
    }
    const auto seed = signals::mix_seed(cfg.seed, stream, r);
    std::mt19937_64 rng(seed);
    const double snr = std::uniform_real_distribution<double>(cfg.snr_min_db, cfg.snr_max_db)(rng);
    if (signals::mean_power(clean) == 0.0) {
      out.insert(out.end(), clean.begin(), clean.end());
      continue;
    }
    auto noisy = signals::add_noise_at_snr<float>(clean, {snr, signals::mix_seed(seed)});
    out.insert(out.end(), noisy.noisy.begin(), noisy.noisy.end());
  }
  return out;
}

/// Mean squared error of the model over a whole set in eval mode. In
/// denoising mode the inputs are noisy with a fixed per-row noise stream.
template <class Model>
double evaluate_mse(const Model& model, const signals::SignalSet& data, const TrainConfig& cfg,
                    std::size_t batch = 64) {
  if (data.rows == 0) throw DataError("evaluate: empty dataset");
  std::vector<std::size_t> order(data.rows);
  std::iota(order.begin(), order.end(), 0);
  double sse = 0.0;
  for (std::size_t first = 0; first < data.rows; first += batch) {
    const std::size_t n = std::min(batch, data.rows - first);
    std::span<const std::size_t> rows(order.data() + first, n);
    auto x = make_inputs(data, rows, cfg, 0x56414cULL);
    auto y = model.infer(Tensor<float>({n, 1, data.len}, std::move(x)));
    const float* yp = y.data();
    for (std::size_t i = 0; i < n; ++i) {
      auto ref = data.row(first + i);
      for (std::size_t j = 0; j < data.len; ++j) {
        const double d = double(yp[i * data.len + j]) - double(ref[j]);
        sse += d * d;
      }
    }
  }
  return sse / double(data.rows * data.len);
}

/// Trains an autoencoder (Clarae or BaselineDae) on rows of train, selecting
/// weights by validation MSE against the clean rows.
template <class Model>
TrainReport fit(Model& model, const signals::SignalSet& train, const signals::SignalSet& val, const TrainConfig& cfg,
                const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train.rows == 0 || val.rows == 0) throw DataError("fit: empty train or validation set");
  if (train.len != model.config().input_len || val.len != model.config().input_len) {
    throw ShapeError("fit: signal length does not match model input_len");
  }
  model.reseed_dropout(signals::mix_seed(cfg.seed, 0x44524f50ULL));
  Adam<float> opt(model.parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps);
  std::vector<std::size_t> order(train.rows);

  auto train_epoch = [&](std::size_t epoch, double lr) {
    model.set_mode(Mode::train);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(signals::mix_seed(cfg.seed, 0x53485546ULL, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double sse = 0.0;
    for (std::size_t first = 0; first < train.rows; first += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, train.rows - first);
      std::span<const std::size_t> rows(order.data() + first, n);
      auto x = make_inputs(train, rows, cfg, 0x54524e00ULL + epoch);
      std::vector<float> target;
      target.reserve(n * train.len);
      for (auto r : rows) target.insert(target.end(), train.row(r).begin(), train.row(r).end());
      Tape<float> tape;
      auto y = model.forward(tape, Tensor<float>({n, 1, train.len}, std::move(x)));
      auto loss = mse_loss(tape, Tensor<float>({n, 1, train.len}, std::move(target)), y);
      tape.backward(loss);
      opt.step(lr);
      opt.zero_grad();
      sse += double(loss.item()) * double(n);
    }
    return sse / double(train.rows);
  };
  auto validate = [&]() {
    model.set_mode(Mode::eval);
    return evaluate_mse(model, val, cfg);
  };
  return run_epochs(model, cfg, train_epoch, validate, on_epoch);
}

/// Mean cross-entropy of the classifier over a latent matrix.
inline double classifier_loss(const MlpClassifier<float>& clf, std::span<const float> latents,
                              std::span<const int> labels) {
  if (labels.empty()) throw DataError("classifier: empty dataset");
  auto tape = Tape<float>::inference();
  const std::size_t d = clf.latent_dim();
  auto logits = clf.forward(tape, Tensor<float>({labels.size(), d}, std::vector<float>(latents.begin(), latents.end())));
  return double(cross_entropy(tape, logits, labels).item());
}

/// Thin adapter so run_epochs can snapshot and restore a classifier.
struct ClassifierHandle {
  using value_type = float;
  MlpClassifier<float>& clf;
  std::vector<NamedTensor<float>> state() const { return clf.state(); }
  void set_mode(Mode) {}
};

/// Trains the latent MLP with cross-entropy under the same optimizer,
/// scheduler and early-stopping contract as the autoencoders.
inline TrainReport fit_classifier(MlpClassifier<float>& clf, std::span<const float> train_latents,
                                  std::span<const int> train_labels, std::span<const float> val_latents,
                                  std::span<const int> val_labels, const TrainConfig& cfg,
                                  const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const std::size_t d = clf.latent_dim();
  if (train_labels.empty() || val_labels.empty()) throw DataError("fit_classifier: empty dataset");
  if (train_latents.size() != train_labels.size() * d || val_latents.size() != val_labels.size() * d) {
    throw ShapeError("fit_classifier: latent matrix does not match label count and latent dim");
  }
  Adam<float> opt(clf.parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps);
  std::vector<std::size_t> order(train_labels.size());
  ClassifierHandle handle{clf};

  auto train_epoch = [&](std::size_t epoch, double lr) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(signals::mix_seed(cfg.seed, 0x434c4600ULL, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - first);
      std::vector<float> x;
      std::vector<int> y;
      x.reserve(n * d);
      for (std::size_t i = first; i < first + n; ++i) {
        const auto r = order[i];
        x.insert(x.end(), train_latents.begin() + static_cast<std::ptrdiff_t>(r * d),
                 train_latents.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
        y.push_back(train_labels[r]);
      }
      Tape<float> tape;
      auto logits = clf.forward(tape, Tensor<float>({n, d}, std::move(x)));
      auto loss = cross_entropy(tape, logits, y);
      tape.backward(loss);
      opt.step(lr);
      opt.zero_grad();
      total += double(loss.item()) * double(n);
    }
    return total / double(order.size());
  };
  auto validate = [&]() { return classifier_loss(clf, val_latents, val_labels); };
  return run_epochs(handle, cfg, train_epoch, validate, on_epoch);
}

}  // namespace clarae::training
