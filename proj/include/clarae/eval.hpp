#pragma once

// Metrics and evaluation protocols: MSE, one-vs-rest F1, the SNR robustness
// sweep, latent extraction with a PCA projection, and a spectral index of
// high-frequency reconstruction artifacts.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "clarae/models.hpp"
#include "clarae/signals.hpp"

namespace clarae::eval {

template <typename A, typename B>
double mse_metric(std::span<const A> y, std::span<const B> yhat) {
  if (y.size() != yhat.size()) {
    throw ShapeError("mse: lengths differ (" + std::to_string(y.size()) + " vs " + std::to_string(yhat.size()) + ")");
  }
  if (y.empty()) throw ShapeError("mse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = double(y[i]) - double(yhat[i]);
    s += d * d;
  }
  return s / double(y.size());
}

inline double mse_metric(const std::vector<float>& y, const std::vector<float>& yhat) {
  return mse_metric<float, float>(y, yhat);
}

/// Per-row MSE of two equally shaped signal sets.
inline std::vector<double> mse_rows(const signals::SignalSet& y, const signals::SignalSet& yhat) {
  if (y.rows != yhat.rows || y.len != yhat.len) throw ShapeError("mse_rows: shapes differ");
  std::vector<double> out(y.rows);
  for (std::size_t i = 0; i < y.rows; ++i) out[i] = mse_metric<float, float>(y.row(i), yhat.row(i));
  return out;
}

inline double mean(std::span<const double> v) {
  if (v.empty()) return std::nan("");
  return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

struct ClassificationReport {
  std::array<std::size_t, 3> tp{}, fp{}, fn{}, support{};
  std::array<double, 3> f1{};
  std::array<std::array<std::size_t, 3>, 3> confusion{};  // [true][predicted]
  double macro_f1 = 0.0;
  std::size_t n = 0;
  std::vector<std::string> warnings;
};

/// One-vs-rest F1 = 2TP / (2TP + FP + FN) per class, macro = unweighted mean.
/// A class absent from both predictions and labels scores 0 with a warning.
inline ClassificationReport f1_per_class(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw ShapeError("f1: prediction and label counts differ");
  ClassificationReport r;
  r.n = labels.size();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = preds[i];
    if (y < 0 || y > 2 || p < 0 || p > 2) throw std::invalid_argument("f1: class index outside {0,1,2}");
    ++r.confusion[y][p];
    ++r.support[y];
    if (y == p) {
      ++r.tp[y];
    } else {
      ++r.fn[y];
      ++r.fp[p];
    }
  }
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t denom = 2 * r.tp[c] + r.fp[c] + r.fn[c];
    if (denom == 0) {
      r.f1[c] = 0.0;
      r.warnings.push_back("class " + std::string(signals::kRhythmNames[c]) +
                          " absent from labels and predictions; F1 set to 0");
    } else {
      r.f1[c] = 2.0 * double(r.tp[c]) / double(denom);
    }
  }
  r.macro_f1 = (r.f1[0] + r.f1[1] + r.f1[2]) / 3.0;
  return r;
}

// ---------------------------------------------------------------------------
// SNR sweep
// ---------------------------------------------------------------------------

struct SweepLevel {
  double snr_db = 0.0;
  double mean_mse = 0.0;
  double median_mse = 0.0;
  double mean_output_snr = 0.0;
  double median_output_snr = 0.0;
  std::size_t n = 0;
};

struct SweepReport {
  std::vector<SweepLevel> levels;
  std::vector<std::vector<double>> mse;  // [level][signal]
  std::string model_id;
  std::uint64_t seed = 0;
};

inline std::vector<double> sweep_levels(double lo = -5.0, double hi = 15.0, double step = 1.0) {
  if (!(step > 0.0) || !(lo <= hi)) throw std::invalid_argument("sweep: need lo <= hi and step > 0");
  std::vector<double> v;
  const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  for (std::size_t i = 0; i < count; ++i) v.push_back(lo + double(i) * step);
  return v;
}

/// Noise seed for one (signal, level) pair: a counter construction over the
/// signal index and the level in millidecibels, so adding signals or levels
/// leaves existing draws untouched.
inline std::uint64_t noise_seed(std::uint64_t master, std::size_t signal, double snr_db) {
  const auto milli = static_cast<std::int64_t>(std::llround(snr_db * 1000.0));
  return signals::mix_seed(master, signal, static_cast<std::uint64_t>(milli));
}

/// Denoises every test row at every level. Output SNR compares the clean
/// reference power with the residual power of the reconstruction.
template <class Model>
SweepReport snr_sweep(const Model& model, const signals::SignalSet& test, std::uint64_t seed,
                      std::span<const double> levels, std::size_t batch = 64) {
  if (test.rows == 0) throw DataError("snr_sweep: empty test set");
  SweepReport rep;
  rep.seed = seed;
  for (double db : levels) {
    std::vector<double> mse(test.rows), osnr(test.rows);
    for (std::size_t first = 0; first < test.rows; first += batch) {
      const std::size_t n = std::min(batch, test.rows - first);
      std::vector<float> x;
      x.reserve(n * test.len);
      for (std::size_t i = first; i < first + n; ++i) {
        auto noisy = signals::add_noise_at_snr<float>(test.row(i), {db, noise_seed(seed, i, db)});
        x.insert(x.end(), noisy.noisy.begin(), noisy.noisy.end());
      }
      auto y = model.infer(Tensor<float>({n, 1, test.len}, std::move(x)));
      for (std::size_t i = 0; i < n; ++i) {
        std::span<const float> out(y.data() + i * test.len, test.len);
        const auto clean = test.row(first + i);
        const double m = mse_metric<float, float>(clean, out);
        mse[first + i] = m;
        osnr[first + i] = 10.0 * std::log10(signals::mean_power(clean) / m);
      }
    }
    SweepLevel lvl;
    lvl.snr_db = db;
    lvl.n = test.rows;
    lvl.mean_mse = mean(mse);
    lvl.median_mse = median(mse);
    lvl.mean_output_snr = mean(osnr);
    lvl.median_output_snr = median(osnr);
    rep.levels.push_back(lvl);
    rep.mse.push_back(std::move(mse));
  }
  return rep;
}

template <class Model>
SweepReport snr_sweep(const Model& model, const signals::SignalSet& test, std::uint64_t seed) {
  const auto levels = sweep_levels();
  return snr_sweep(model, test, seed, std::span<const double>(levels));
}

/// Spearman rank correlation (average ranks for ties).
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal samples, n >= 2");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * double(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = mean(rx), my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nan("");
  return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// Latents
// ---------------------------------------------------------------------------

struct LatentMatrix {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<float> data;  // row-major rows x dim

  std::span<const float> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
};

inline LatentMatrix extract_latents(const Clarae<float>& model, const signals::SignalSet& set,
                                    std::size_t batch = 64) {
  LatentMatrix z;
  z.rows = set.rows;
  z.dim = model.config().latent_dim;
  z.data.reserve(z.rows * z.dim);
  for (std::size_t first = 0; first < set.rows; first += batch) {
    const std::size_t n = std::min(batch, set.rows - first);
    std::vector<float> x(set.data.begin() + static_cast<std::ptrdiff_t>(first * set.len),
                         set.data.begin() + static_cast<std::ptrdiff_t>((first + n) * set.len));
    auto out = model.infer_encode(Tensor<float>({n, 1, set.len}, std::move(x)));
    z.data.insert(z.data.end(), out.values().begin(), out.values().end());
  }
  return z;
}

struct Pca2d {
  std::vector<double> coords;          // rows x 2
  std::array<double, 2> explained{};   // fraction of total variance per axis
  std::vector<double> components;      // 2 x dim, unit rows
  std::vector<double> mean;
};

/// Mean-centred projection onto the top two principal axes. Each axis is
/// signed so that its largest-magnitude loading is positive.
inline Pca2d pca2d(std::span<const float> data, std::size_t rows, std::size_t dim) {
  if (rows < 2 || dim < 2) throw DataError("pca2d: need at least 2 rows and 2 dimensions");
  if (data.size() != rows * dim) throw ShapeError("pca2d: data size does not match rows x dim");
  Eigen::MatrixXd x(rows, dim);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < dim; ++j) x(Eigen::Index(i), Eigen::Index(j)) = data[i * dim + j];
  }
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  const Eigen::MatrixXd cov = (x.transpose() * x) / double(rows - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw NumericError("pca2d: eigendecomposition failed");
  const double total = cov.trace();
  Pca2d out;
  out.mean.assign(mu.data(), mu.data() + dim);
  Eigen::MatrixXd axes(dim, 2);
  for (int a = 0; a < 2; ++a) {
    Eigen::VectorXd v = es.eigenvectors().col(Eigen::Index(dim) - 1 - a);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    axes.col(a) = v;
    const double lambda = std::max(0.0, es.eigenvalues()(Eigen::Index(dim) - 1 - a));
    out.explained[std::size_t(a)] = total > 0.0 ? lambda / total : 0.0;
    for (std::size_t j = 0; j < dim; ++j) out.components.push_back(v(Eigen::Index(j)));
  }
  const Eigen::MatrixXd proj = x * axes;
  out.coords.resize(rows * 2);
  for (std::size_t i = 0; i < rows; ++i) {
    out.coords[2 * i] = proj(Eigen::Index(i), 0);
    out.coords[2 * i + 1] = proj(Eigen::Index(i), 1);
  }
  return out;
}

inline Pca2d pca2d(const LatentMatrix& z) { return pca2d(z.data, z.rows, z.dim); }

/// Per-class mean latent vectors, in class order; classes without rows are empty.
inline std::array<std::vector<double>, 3> class_centroids(const LatentMatrix& z, std::span<const int> labels) {
  std::array<std::vector<double>, 3> c;
  std::array<std::size_t, 3> n{};
  for (auto& v : c) v.assign(z.dim, 0.0);
  for (std::size_t i = 0; i < z.rows; ++i) {
    const auto k = static_cast<std::size_t>(labels[i]);
    ++n[k];
    for (std::size_t j = 0; j < z.dim; ++j) c[k][j] += z.data[i * z.dim + j];
  }
  for (std::size_t k = 0; k < 3; ++k) {
    if (n[k] == 0) {
      c[k].clear();
      continue;
    }
    for (auto& v : c[k]) v /= double(n[k]);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Artifact index
// ---------------------------------------------------------------------------

/// Energy of the reconstruction error in the top decile of the frequency
/// axis, as a fraction of the reference energy. Periodic high-frequency
/// patterns left by strided upsampling land in this band.
template <typename A, typename B>
double artifact_index(std::span<const A> recon, std::span<const B> ref, double band_fraction = 0.1) {
  if (recon.size() != ref.size()) throw ShapeError("artifact_index: lengths differ");
  if (recon.empty()) throw ShapeError("artifact_index: empty input");
  const std::size_t n = ref.size();
  const double ref_energy = double(n) * std::accumulate(ref.begin(), ref.end(), 0.0, [](double s, B v) {
    return s + double(v) * double(v);
  });
  if (!(ref_energy > 0.0)) throw DataError("artifact_index: reference has zero energy");
  std::vector<double> err(n);
  for (std::size_t i = 0; i < n; ++i) err[i] = double(recon[i]) - double(ref[i]);

  std::vector<double> cos_t(n), sin_t(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = 2.0 * std::numbers::pi * double(i) / double(n);
    cos_t[i] = std::cos(a);
    sin_t[i] = std::sin(a);
  }
  const std::size_t half = n / 2;
  const auto k0 = static_cast<std::size_t>(std::ceil((1.0 - band_fraction) * double(half)));
  double band = 0.0;
  for (std::size_t k = std::max<std::size_t>(k0, 1); k <= half; ++k) {
    double re = 0.0, im = 0.0;
    std::size_t idx = 0;
    for (std::size_t t = 0; t < n; ++t) {
      re += err[t] * cos_t[idx];
      im -= err[t] * sin_t[idx];
      idx += k;
      if (idx >= n) idx -= n;
    }
    // Bins below Nyquist stand for themselves and their mirror image.
    const double mult = (2 * k == n) ? 1.0 : 2.0;
    band += mult * (re * re + im * im);
  }
  return band / ref_energy;
}

inline double artifact_index(const std::vector<float>& recon, const std::vector<float>& ref) {
  return artifact_index<float, float>(recon, ref);
}

}  // namespace clarae::eval
