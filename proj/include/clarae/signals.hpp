#pragma once

// Synthetic atrial EGM cohorts, dataset preprocessing, patient-wise splits and
// additive white noise at an exact SNR.
//
// Raw traces are sampled at 1 kHz in millivolts. Preprocessing clips to
// training-set percentiles, maps to [-1, 1] with global bounds and keeps every
// second sample, so a 2500-sample raw trace becomes a 1250-sample record.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "clarae/tensor.hpp"

namespace clarae::signals {

enum class Rhythm : int { af = 0, sr300 = 1, sr600 = 2 };
enum class Polarity : int { unipolar = 0, bipolar = 1 };

inline constexpr std::array<std::string_view, 3> kRhythmNames = {"AF", "SR300", "SR600"};

inline std::string_view name(Rhythm r) { return kRhythmNames.at(static_cast<std::size_t>(r)); }
inline std::string_view name(Polarity p) { return p == Polarity::unipolar ? "unipolar" : "bipolar"; }

inline Rhythm parse_rhythm(std::string_view s) {
  for (std::size_t i = 0; i < kRhythmNames.size(); ++i) {
    if (s == kRhythmNames[i]) return static_cast<Rhythm>(i);
  }
  if (s == "0" || s == "1" || s == "2") return static_cast<Rhythm>(s[0] - '0');
  throw DataError("unknown rhythm '" + std::string(s) + "' (expected AF, SR300 or SR600)");
}

inline Polarity parse_polarity(std::string_view s) {
  if (s == "unipolar" || s == "0") return Polarity::unipolar;
  if (s == "bipolar" || s == "1") return Polarity::bipolar;
  throw DataError("unknown polarity '" + std::string(s) + "' (expected unipolar or bipolar)");
}

struct EgmRecord {
  std::vector<float> samples;  // preprocessed, 500 Hz, in [-1, 1]
  Rhythm rhythm = Rhythm::af;
  int patient_id = 0;
  Polarity polarity = Polarity::unipolar;
  std::vector<float> raw;             // 1 kHz trace in mV, empty once discarded
  std::vector<double> activation_ms;  // ground-truth activation onsets inside the window
};

/// splitmix64 finalizer; used to derive independent stream seeds from counters.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(master) ^ a) ^ (b * 0xd1342543de82ef95ULL));
}

// ---------------------------------------------------------------------------
// Cohort generation
// ---------------------------------------------------------------------------

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct CohortConfig {
  std::size_t n_patients = 30;
  std::size_t signals_per_patient = 100;
  std::array<double, 3> rhythm_mix = {0.388, 0.340, 0.272};  // AF, SR300, SR600
  double fs_hz = 1000.0;
  std::size_t raw_len = 2500;
  double sr_jitter_ms = 3.0;
  Range af_cycle_ms = {120.0, 250.0};
  double af_min_cv = 0.1;
  Range width_ms = {10.0, 30.0};
  Range bipolar_spacing_ms = {3.0, 6.0};
  double bipolar_fraction = 0.5;
  Range amplitude_mv = {0.8, 3.0};
  Range farfield_ratio = {0.1, 0.4};
  Range farfield_period_ms = {600.0, 1000.0};
  Range farfield_width_ms = {15.0, 30.0};
  Range wander_hz = {0.1, 0.5};
  Range wander_ratio = {0.05, 0.2};
  double powerline_hz = 50.0;
  Range powerline_ratio = {0.01, 0.05};
  Range noise_floor_ratio = {0.005, 0.02};
  std::uint64_t seed = 0;

  std::size_t total() const { return n_patients * signals_per_patient; }

  void validate() const {
    if (n_patients == 0 || signals_per_patient == 0) {
      throw std::invalid_argument("cohort: n_patients and signals_per_patient must be positive");
    }
    double s = 0.0;
    for (double m : rhythm_mix) {
      if (!(m >= 0.0)) throw std::invalid_argument("cohort: rhythm mix fractions must be non-negative");
      s += m;
    }
    if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("cohort: rhythm mix must sum to 1");
    if (raw_len < 8 || raw_len % 2 != 0) throw std::invalid_argument("cohort: raw_len must be even and >= 8");
    if (!(sr_jitter_ms >= 0.0 && sr_jitter_ms <= 5.0)) {
      throw std::invalid_argument("cohort: sinus jitter must be within [0, 5] ms");
    }
    if (!(af_cycle_ms.lo > 0.0 && af_cycle_ms.lo < af_cycle_ms.hi)) {
      throw std::invalid_argument("cohort: AF cycle range must be increasing and positive");
    }
    if (!(bipolar_fraction >= 0.0 && bipolar_fraction <= 1.0)) {
      throw std::invalid_argument("cohort: bipolar_fraction must be in [0, 1]");
    }
    if (!(fs_hz > 0.0)) throw std::invalid_argument("cohort: fs_hz must be positive");
  }
};

/// Splits n into parts proportional to weights (largest-remainder rounding;
/// ties go to the earlier part).
inline std::vector<std::size_t> apportion(std::size_t n, std::span<const double> weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> counts(weights.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = double(n) * weights[i] / total;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    rem.emplace_back(exact - double(counts[i]), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[rem[i % rem.size()].second];
  return counts;
}

namespace detail {

// Biphasic Gaussian-derivative deflection with unit peak magnitude at t = -+sigma.
inline double wavelet(double t, double sigma) {
  const double u = t / sigma;
  return -u * std::exp(0.5 - 0.5 * u * u);
}

struct PatientTraits {
  double amplitude;
  double width_ms;
  double farfield_ratio;
  double farfield_period_ms;
  double farfield_width_ms;
};

inline double draw(std::mt19937_64& rng, Range r) {
  return r.lo == r.hi ? r.lo : std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

inline PatientTraits patient_traits(const CohortConfig& c, std::size_t patient) {
  std::mt19937_64 rng(mix_seed(c.seed, 0x5041544945ULL, patient));
  PatientTraits p{};
  p.amplitude = draw(rng, c.amplitude_mv);
  p.width_ms = draw(rng, c.width_ms);
  p.farfield_ratio = draw(rng, c.farfield_ratio);
  p.farfield_period_ms = draw(rng, c.farfield_period_ms);
  p.farfield_width_ms = draw(rng, c.farfield_width_ms);
  return p;
}

inline double coefficient_of_variation(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / double(v.size() - 1)) / mean;
}

// Activation onsets covering [-margin, duration + margin]. The first onset is a
// random phase so windows do not all start on a beat.
inline std::vector<double> activation_times(const CohortConfig& c, Rhythm rhythm, double duration,
                                            std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double margin = 60.0;
  auto next_interval = [&]() {
    switch (rhythm) {
      case Rhythm::sr300:
        return 300.0 + (2.0 * unit(rng) - 1.0) * c.sr_jitter_ms;
      case Rhythm::sr600:
        return 600.0 + (2.0 * unit(rng) - 1.0) * c.sr_jitter_ms;
      case Rhythm::af:
        break;
    }
    return draw(rng, c.af_cycle_ms);
  };
  for (int attempt = 0;; ++attempt) {
    std::vector<double> t;
    double now = -margin - unit(rng) * next_interval();
    while (now < duration + margin) {
      t.push_back(now);
      now += next_interval();
    }
    if (rhythm != Rhythm::af) return t;
    std::vector<double> inside, gaps;
    for (double x : t) {
      if (x >= 0.0 && x < duration) inside.push_back(x);
    }
    for (std::size_t i = 1; i < inside.size(); ++i) gaps.push_back(inside[i] - inside[i - 1]);
    // Short windows can draw near-regular AF by chance; redraw so the class
    // stays irregular by construction.
    if (coefficient_of_variation(gaps) > c.af_min_cv || attempt >= 64) return t;
  }
}

}  // namespace detail

/// Deterministic synthetic cohort. Records carry raw 1 kHz traces; call
/// fit_preprocess / apply_preprocess to obtain model-ready samples.
inline std::vector<EgmRecord> generate_cohort(const CohortConfig& c) {
  c.validate();
  const std::size_t n = c.total();
  const auto counts = apportion(n, c.rhythm_mix);
  std::vector<Rhythm> labels;
  for (std::size_t r = 0; r < counts.size(); ++r) labels.insert(labels.end(), counts[r], static_cast<Rhythm>(r));
  std::mt19937_64 shuffle_rng(mix_seed(c.seed, 0x4c4142454cULL));
  std::shuffle(labels.begin(), labels.end(), shuffle_rng);

  const double dt = 1000.0 / c.fs_hz;
  const double duration = double(c.raw_len) * dt;
  std::vector<EgmRecord> out(n);
  std::vector<detail::PatientTraits> traits;
  for (std::size_t p = 0; p < c.n_patients; ++p) traits.push_back(detail::patient_traits(c, p));

  for (std::size_t i = 0; i < n; ++i) {
    EgmRecord& rec = out[i];
    const std::size_t patient = i / c.signals_per_patient;
    const auto& pt = traits[patient];
    std::mt19937_64 rng(mix_seed(c.seed, 0x524543ULL, i));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    rec.rhythm = labels[i];
    rec.patient_id = static_cast<int>(patient);
    rec.polarity = unit(rng) < c.bipolar_fraction ? Polarity::bipolar : Polarity::unipolar;
    const bool af = rec.rhythm == Rhythm::af;
    const double amp = pt.amplitude * (0.8 + 0.4 * unit(rng)) * (rec.polarity == Polarity::bipolar ? 0.6 : 1.0);
    const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
    const double spacing = detail::draw(rng, c.bipolar_spacing_ms);

    const auto onsets = detail::activation_times(c, rec.rhythm, duration, rng);
    std::vector<double> raw(c.raw_len, 0.0);
    auto add_deflection = [&](double onset, double a, double width) {
      const double sigma = width / 2.0;  // width is the peak-to-peak span
      const double reach = 5.0 * sigma + spacing;
      const auto i0 = static_cast<std::ptrdiff_t>(std::floor((onset - reach) / dt));
      const auto i1 = static_cast<std::ptrdiff_t>(std::ceil((onset + reach) / dt));
      for (auto k = std::max<std::ptrdiff_t>(i0, 0); k <= i1 && k < static_cast<std::ptrdiff_t>(c.raw_len); ++k) {
        const double t = double(k) * dt - onset;
        double v = detail::wavelet(t, sigma);
        if (rec.polarity == Polarity::bipolar) v = v - detail::wavelet(t - spacing, sigma);
        raw[static_cast<std::size_t>(k)] += a * v;
      }
    };
    for (double onset : onsets) {
      double a = amp * sign, w = pt.width_ms;
      if (af) {
        a *= 0.5 + 0.7 * unit(rng);
        w *= 0.8 + 0.7 * unit(rng);
        if (unit(rng) < 0.4) add_deflection(onset + 8.0 + 12.0 * unit(rng), 0.5 * a * unit(rng), w);
      } else {
        a *= 0.95 + 0.1 * unit(rng);
      }
      add_deflection(onset, a, w);
      if (onset >= 0.0 && onset < duration) rec.activation_ms.push_back(onset);
    }

    // Far-field ventricular bumps, baseline wander, powerline and noise floor.
    const double ff_amp = pt.farfield_ratio * amp * (unit(rng) < 0.5 ? -1.0 : 1.0);
    const double ff_period = pt.farfield_period_ms;
    const double ff_sigma = pt.farfield_width_ms / 2.0;
    const double ff_phase = unit(rng) * ff_period;
    const double wander_amp = detail::draw(rng, c.wander_ratio) * amp;
    const double wander_hz = detail::draw(rng, c.wander_hz);
    const double wander_phase = unit(rng) * 2.0 * std::numbers::pi;
    const double line_amp = detail::draw(rng, c.powerline_ratio) * amp;
    const double line_phase = unit(rng) * 2.0 * std::numbers::pi;
    const double floor_sd = detail::draw(rng, c.noise_floor_ratio) * amp;
    for (std::size_t k = 0; k < c.raw_len; ++k) {
      const double t = double(k) * dt;
      for (double b = ff_phase - ff_period; b < duration + ff_period; b += ff_period) {
        const double u = (t - b) / ff_sigma;
        if (std::abs(u) < 6.0) raw[k] += ff_amp * std::exp(-0.5 * u * u);
      }
      raw[k] += wander_amp * std::sin(2.0 * std::numbers::pi * wander_hz * t / 1000.0 + wander_phase);
      raw[k] += line_amp * std::sin(2.0 * std::numbers::pi * c.powerline_hz * t / 1000.0 + line_phase);
      raw[k] += floor_sd * gauss(rng);
    }
    rec.raw.assign(raw.begin(), raw.end());
  }
  return out;
}

/// Consecutive differences of activation onsets, in ms.
inline std::vector<double> activation_intervals(const EgmRecord& r) {
  std::vector<double> d;
  for (std::size_t i = 1; i < r.activation_ms.size(); ++i) d.push_back(r.activation_ms[i] - r.activation_ms[i - 1]);
  return d;
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

struct PreprocessParams {
  double clip_lo = -1.0;
  double clip_hi = 1.0;
  double min = -1.0;
  double max = 1.0;
  bool lowpass = false;  // anti-alias FIR before decimation

  static PreprocessParams identity() { return {}; }
};

/// Percentile by linear interpolation between order statistics:
/// position p/100 * (n - 1) in the sorted sample. Reorders v.
inline double percentile(std::vector<double>& v, double p) {
  if (v.empty()) throw DataError("percentile: empty sample");
  const double pos = p / 100.0 * double(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
  const double a = v[lo];
  double b = a;
  if (hi != lo) b = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(lo) + 1, v.end());
  return a + (pos - double(lo)) * (b - a);
}

/// Fits clip percentiles and post-clip bounds over every raw sample of the
/// given (training) records pooled together.
inline PreprocessParams fit_preprocess(std::span<const EgmRecord> train, double lo_pct = 0.5,
                                       double hi_pct = 99.5) {
  std::vector<double> pooled;
  for (const auto& r : train) pooled.insert(pooled.end(), r.raw.begin(), r.raw.end());
  if (pooled.empty()) throw DataError("fit_preprocess: no training samples");
  for (double v : pooled) {
    if (!std::isfinite(v)) throw DataError("fit_preprocess: non-finite sample");
  }
  PreprocessParams p;
  p.clip_lo = percentile(pooled, lo_pct);
  p.clip_hi = percentile(pooled, hi_pct);
  if (!(p.clip_lo < p.clip_hi)) throw DataError("fit_preprocess: degenerate clip range (constant data)");
  double mn = p.clip_hi, mx = p.clip_lo;
  for (double v : pooled) {
    const double c = std::clamp(v, p.clip_lo, p.clip_hi);
    mn = std::min(mn, c);
    mx = std::max(mx, c);
  }
  p.min = mn;
  p.max = mx;
  return p;
}

/// Clip then min-max map to [-1, 1]; no resampling.
inline std::vector<float> normalize(std::span<const float> x, const PreprocessParams& p) {
  if (!(p.clip_lo < p.clip_hi) || !(p.min < p.max)) throw DataError("normalize: degenerate parameters");
  std::vector<float> out(x.size());
  const double scale = 2.0 / (p.max - p.min);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double c = std::clamp(static_cast<double>(x[i]), p.clip_lo, p.clip_hi);
    out[i] = static_cast<float>(std::clamp((c - p.min) * scale - 1.0, -1.0, 1.0));
  }
  return out;
}

/// Keeps even indices.
inline std::vector<float> decimate2(std::span<const float> x) {
  std::vector<float> out((x.size() + 1) / 2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[2 * i];
  return out;
}

/// 31-tap Hamming-windowed sinc low-pass at 0.225 cycles/sample (225 Hz at 1 kHz).
inline std::vector<float> lowpass_fir(std::span<const float> x) {
  constexpr int taps = 31, half = taps / 2;
  constexpr double fc = 0.225;
  std::array<double, taps> h{};
  double s = 0.0;
  for (int n = 0; n < taps; ++n) {
    const int m = n - half;
    const double sinc = m == 0 ? 2.0 * fc : std::sin(2.0 * std::numbers::pi * fc * m) / (std::numbers::pi * m);
    h[n] = sinc * (0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / (taps - 1)));
    s += h[n];
  }
  for (auto& v : h) v /= s;
  std::vector<float> out(x.size());
  const auto len = static_cast<int>(x.size());
  for (int i = 0; i < len; ++i) {
    double acc = 0.0;
    for (int n = 0; n < taps; ++n) {
      const int j = std::clamp(i + n - half, 0, len - 1);  // edge replication
      acc += h[n] * x[j];
    }
    out[i] = static_cast<float>(acc);
  }
  return out;
}

/// Fills rec.samples from rec.raw: clip, normalize, optional low-pass,
/// decimate by two. expected_raw_len of 0 accepts any even length.
inline void apply_preprocess(EgmRecord& rec, const PreprocessParams& p, std::size_t expected_raw_len = 2500) {
  if (expected_raw_len != 0 && rec.raw.size() != expected_raw_len) {
    throw DataError("apply_preprocess: raw trace has " + std::to_string(rec.raw.size()) + " samples, expected " +
                    std::to_string(expected_raw_len));
  }
  if (rec.raw.empty()) throw DataError("apply_preprocess: empty raw trace");
  auto x = normalize(rec.raw, p);
  if (p.lowpass) {
    x = lowpass_fir(x);
    for (auto& v : x) v = std::clamp(v, -1.0f, 1.0f);
  }
  rec.samples = decimate2(x);
}

inline void apply_preprocess(std::span<EgmRecord> recs, const PreprocessParams& p,
                             std::size_t expected_raw_len = 2500) {
  for (auto& r : recs) apply_preprocess(r, p, expected_raw_len);
}

// ---------------------------------------------------------------------------
// Noise injection
// ---------------------------------------------------------------------------

struct NoiseSpec {
  double snr_db = 0.0;
  std::uint64_t seed = 0;
};

template <typename T>
struct NoisySignal {
  std::vector<T> noisy;
  std::vector<T> noise;
};

template <typename T>
double mean_power(std::span<const T> x) {
  double s = 0.0;
  for (T v : x) s += double(v) * double(v);
  return x.empty() ? 0.0 : s / double(x.size());
}

/// 10 log10(P_signal / P_noise) with P the mean of squares.
template <typename T>
double snr_db(std::span<const T> signal, std::span<const T> noise) {
  return 10.0 * std::log10(mean_power(signal) / mean_power(noise));
}

/// Draws white Gaussian noise and rescales that realization so its power hits
/// the target SNR exactly.
template <typename T>
NoisySignal<T> add_noise_at_snr(std::span<const T> clean, const NoiseSpec& spec) {
  const double ps = mean_power(clean);
  if (!(ps > 0.0)) throw DataError("add_noise_at_snr: clean signal has zero power, SNR undefined");
  if (!std::isfinite(spec.snr_db)) throw std::invalid_argument("add_noise_at_snr: snr_db must be finite");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> w(clean.size());
  double pw = 0.0;
  for (auto& v : w) {
    v = gauss(rng);
    pw += v * v;
  }
  pw /= double(w.size());
  const double target = ps / std::pow(10.0, spec.snr_db / 10.0);
  const double scale = std::sqrt(target / pw);
  NoisySignal<T> out;
  out.noise.resize(clean.size());
  out.noisy.resize(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    out.noise[i] = static_cast<T>(w[i] * scale);
    out.noisy[i] = clean[i] + out.noise[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patient-wise split
// ---------------------------------------------------------------------------

struct DatasetSplit {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
};

inline std::vector<int> patient_ids(std::span<const EgmRecord> recs) {
  std::vector<int> ids;
  for (const auto& r : recs) ids.push_back(r.patient_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

/// Shuffles patient ids with the seed and cuts them by largest-remainder
/// counts. Validation and test each receive at least one patient.
inline DatasetSplit split_patientwise(std::span<const EgmRecord> recs,
                                      std::array<double, 3> fractions = {0.8, 0.1, 0.1}, std::uint64_t seed = 0) {
  auto ids = patient_ids(recs);
  if (ids.size() < 3) {
    throw DataError("split_patientwise: need at least 3 patients, got " + std::to_string(ids.size()));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  auto counts = apportion(ids.size(), fractions);
  for (std::size_t s = 1; s < 3; ++s) {
    if (counts[s] == 0) {
      const auto donor = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      --counts[donor];
      ++counts[s];
    }
  }
  DatasetSplit split;
  auto first = ids.begin();
  split.train.assign(first, first + static_cast<std::ptrdiff_t>(counts[0]));
  first += static_cast<std::ptrdiff_t>(counts[0]);
  split.val.assign(first, first + static_cast<std::ptrdiff_t>(counts[1]));
  first += static_cast<std::ptrdiff_t>(counts[1]);
  split.test.assign(first, ids.end());
  return split;
}

/// Records whose patient is in ids, in original order.
inline std::vector<EgmRecord> select(std::span<const EgmRecord> recs, std::span<const int> ids) {
  std::vector<EgmRecord> out;
  for (const auto& r : recs) {
    if (std::find(ids.begin(), ids.end(), r.patient_id) != ids.end()) out.push_back(r);
  }
  return out;
}

/// Row-major n x len matrix of preprocessed samples.
struct SignalSet {
  std::size_t rows = 0;
  std::size_t len = 0;
  std::vector<float> data;

  std::span<const float> row(std::size_t i) const { return {data.data() + i * len, len}; }
  std::span<float> row(std::size_t i) { return {data.data() + i * len, len}; }
};

inline SignalSet stack(std::span<const EgmRecord> recs) {
  SignalSet s;
  s.rows = recs.size();
  if (recs.empty()) return s;
  s.len = recs.front().samples.size();
  s.data.reserve(s.rows * s.len);
  for (const auto& r : recs) {
    if (r.samples.size() != s.len) throw DataError("stack: records have unequal lengths");
    s.data.insert(s.data.end(), r.samples.begin(), r.samples.end());
  }
  return s;
}

inline std::vector<int> labels(std::span<const EgmRecord> recs) {
  std::vector<int> l;
  for (const auto& r : recs) l.push_back(static_cast<int>(r.rhythm));
  return l;
}

}  // namespace clarae::signals
