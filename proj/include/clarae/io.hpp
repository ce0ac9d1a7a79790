#pragma once

// File formats: the CLRW weights container, signal CSV files with their JSON
// sidecar, and report exports.

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "clarae/eval.hpp"
#include "clarae/models.hpp"
#include "clarae/signals.hpp"
#include "clarae/training.hpp"

namespace clarae::io {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

/// Shortest decimal text that parses back to the same value.
template <typename F>
std::string format_number(F v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

/// 64-bit FNV-1a as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

// Assigns j[key] to out when present. Unknown keys are reported by check_keys.
template <typename V>
void take(const json& j, const char* key, V& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<V>();
    } catch (const json::exception& e) {
      throw DataError(std::string("config key '") + key + "': " + e.what());
    }
  }
}

inline void take(const json& j, const char* key, signals::Range& out) {
  if (auto it = j.find(key); it != j.end()) {
    if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number() || !(*it)[1].is_number()) {
      throw DataError(std::string("config key '") + key + "': expected [lo, hi]");
    }
    out = {(*it)[0].get<double>(), (*it)[1].get<double>()};
  }
}

inline void check_keys(const json& j, std::initializer_list<std::string_view> known, std::string_view what) {
  if (!j.is_object()) throw DataError(std::string(what) + ": expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (auto n : known) ok = ok || n == k;
    if (!ok) throw DataError(std::string(what) + ": unknown key '" + k + "'");
  }
}

inline json range(const signals::Range& r) { return json::array({r.lo, r.hi}); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Config <-> JSON
// ---------------------------------------------------------------------------

inline json to_json(const ClaraeConfig& c) {
  return {{"input_len", c.input_len},
          {"latent_dim", c.latent_dim},
          {"kernel", c.kernel},
          {"block1_channels", c.block1_channels},
          {"block2_channels", c.block2_channels},
          {"dense_hidden", c.dense_hidden},
          {"leaky_alpha", c.leaky_alpha},
          {"dropout_p", c.dropout_p},
          {"decoder_stage_channels", c.decoder_stage_channels}};
}

/// Reads a model config. Missing keys keep the values of `base`.
inline ClaraeConfig clarae_config_from_json(const json& j, ClaraeConfig base = {}) {
  detail::check_keys(j,
                     {"input_len", "latent_dim", "kernel", "block1_channels", "block2_channels", "dense_hidden",
                      "leaky_alpha", "dropout_p", "decoder_stage_channels"},
                     "model config");
  detail::take(j, "input_len", base.input_len);
  detail::take(j, "latent_dim", base.latent_dim);
  detail::take(j, "kernel", base.kernel);
  detail::take(j, "block1_channels", base.block1_channels);
  detail::take(j, "block2_channels", base.block2_channels);
  detail::take(j, "dense_hidden", base.dense_hidden);
  detail::take(j, "leaky_alpha", base.leaky_alpha);
  detail::take(j, "dropout_p", base.dropout_p);
  detail::take(j, "decoder_stage_channels", base.decoder_stage_channels);
  try {
    base.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  return base;
}

inline json to_json(const training::TrainConfig& c) {
  return {{"lr0", c.lr0},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"early_stop_patience", c.early_stop_patience},
          {"early_stop_min_delta", c.early_stop_min_delta},
          {"sched_factor", c.sched_factor},
          {"sched_patience", c.sched_patience},
          {"lr_min", c.lr_min},
          {"seed", c.seed},
          {"target", c.target == training::TargetMode::denoising ? "denoising" : "reconstruction"},
          {"snr_min_db", c.snr_min_db},
          {"snr_max_db", c.snr_max_db},
          {"max_seconds", c.max_seconds}};
}

inline training::TrainConfig train_config_from_json(const json& j, training::TrainConfig base = {}) {
  detail::check_keys(j,
                     {"lr0", "beta1", "beta2", "adam_eps", "batch_size", "max_epochs", "early_stop_patience",
                      "early_stop_min_delta", "sched_factor", "sched_patience", "lr_min", "seed", "target",
                      "snr_min_db", "snr_max_db", "max_seconds"},
                     "train config");
  detail::take(j, "lr0", base.lr0);
  detail::take(j, "beta1", base.beta1);
  detail::take(j, "beta2", base.beta2);
  detail::take(j, "adam_eps", base.adam_eps);
  detail::take(j, "batch_size", base.batch_size);
  detail::take(j, "max_epochs", base.max_epochs);
  detail::take(j, "early_stop_patience", base.early_stop_patience);
  detail::take(j, "early_stop_min_delta", base.early_stop_min_delta);
  detail::take(j, "sched_factor", base.sched_factor);
  detail::take(j, "sched_patience", base.sched_patience);
  detail::take(j, "lr_min", base.lr_min);
  detail::take(j, "seed", base.seed);
  detail::take(j, "snr_min_db", base.snr_min_db);
  detail::take(j, "snr_max_db", base.snr_max_db);
  detail::take(j, "max_seconds", base.max_seconds);
  std::string target;
  detail::take(j, "target", target);
  if (target == "denoising") {
    base.target = training::TargetMode::denoising;
  } else if (target == "reconstruction") {
    base.target = training::TargetMode::reconstruction;
  } else if (!target.empty()) {
    throw DataError("train config: target must be 'reconstruction' or 'denoising'");
  }
  try {
    base.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  return base;
}

inline json to_json(const signals::CohortConfig& c) {
  using detail::range;
  return {{"n_patients", c.n_patients},
          {"signals_per_patient", c.signals_per_patient},
          {"rhythm_mix", c.rhythm_mix},
          {"fs_hz", c.fs_hz},
          {"raw_len", c.raw_len},
          {"sr_jitter_ms", c.sr_jitter_ms},
          {"af_cycle_ms", range(c.af_cycle_ms)},
          {"af_min_cv", c.af_min_cv},
          {"width_ms", range(c.width_ms)},
          {"bipolar_spacing_ms", range(c.bipolar_spacing_ms)},
          {"bipolar_fraction", c.bipolar_fraction},
          {"amplitude_mv", range(c.amplitude_mv)},
          {"farfield_ratio", range(c.farfield_ratio)},
          {"farfield_period_ms", range(c.farfield_period_ms)},
          {"farfield_width_ms", range(c.farfield_width_ms)},
          {"wander_hz", range(c.wander_hz)},
          {"wander_ratio", range(c.wander_ratio)},
          {"powerline_hz", c.powerline_hz},
          {"powerline_ratio", range(c.powerline_ratio)},
          {"noise_floor_ratio", range(c.noise_floor_ratio)},
          {"seed", c.seed}};
}

inline signals::CohortConfig cohort_config_from_json(const json& j, signals::CohortConfig base = {}) {
  detail::check_keys(j,
                     {"n_patients", "signals_per_patient", "rhythm_mix", "fs_hz", "raw_len", "sr_jitter_ms",
                      "af_cycle_ms", "af_min_cv", "width_ms", "bipolar_spacing_ms", "bipolar_fraction",
                      "amplitude_mv", "farfield_ratio", "farfield_period_ms", "farfield_width_ms", "wander_hz",
                      "wander_ratio", "powerline_hz", "powerline_ratio", "noise_floor_ratio", "seed"},
                     "cohort config");
  detail::take(j, "n_patients", base.n_patients);
  detail::take(j, "signals_per_patient", base.signals_per_patient);
  detail::take(j, "rhythm_mix", base.rhythm_mix);
  detail::take(j, "fs_hz", base.fs_hz);
  detail::take(j, "raw_len", base.raw_len);
  detail::take(j, "sr_jitter_ms", base.sr_jitter_ms);
  detail::take(j, "af_cycle_ms", base.af_cycle_ms);
  detail::take(j, "af_min_cv", base.af_min_cv);
  detail::take(j, "width_ms", base.width_ms);
  detail::take(j, "bipolar_spacing_ms", base.bipolar_spacing_ms);
  detail::take(j, "bipolar_fraction", base.bipolar_fraction);
  detail::take(j, "amplitude_mv", base.amplitude_mv);
  detail::take(j, "farfield_ratio", base.farfield_ratio);
  detail::take(j, "farfield_period_ms", base.farfield_period_ms);
  detail::take(j, "farfield_width_ms", base.farfield_width_ms);
  detail::take(j, "wander_hz", base.wander_hz);
  detail::take(j, "wander_ratio", base.wander_ratio);
  detail::take(j, "powerline_hz", base.powerline_hz);
  detail::take(j, "powerline_ratio", base.powerline_ratio);
  detail::take(j, "noise_floor_ratio", base.noise_floor_ratio);
  detail::take(j, "seed", base.seed);
  try {
    base.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  return base;
}

inline json to_json(const signals::PreprocessParams& p) {
  return {{"clip_lo", p.clip_lo}, {"clip_hi", p.clip_hi}, {"min", p.min}, {"max", p.max}, {"lowpass", p.lowpass}};
}

inline signals::PreprocessParams preprocess_from_json(const json& j) {
  detail::check_keys(j, {"clip_lo", "clip_hi", "min", "max", "lowpass"}, "preprocess");
  signals::PreprocessParams p;
  detail::take(j, "clip_lo", p.clip_lo);
  detail::take(j, "clip_hi", p.clip_hi);
  detail::take(j, "min", p.min);
  detail::take(j, "max", p.max);
  detail::take(j, "lowpass", p.lowpass);
  return p;
}

// ---------------------------------------------------------------------------
// CLRW weights container
//
//   bytes 0..3   "CLRW"
//   bytes 4..7   format version, u32 little-endian
//   bytes 8..11  header length H, u32 little-endian
//   bytes 12..   UTF-8 JSON header of H bytes
//   payloads     f32 little-endian, one per directory entry, in order, each
//                starting at an 8-byte aligned absolute file offset
//
// Header keys: kind, config, metadata, tensors[{name, dtype, rank, dims,
// offset, nbytes}]. dtype 0 is f32.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::size_t kContainerPrologue = 12;
inline constexpr std::size_t kMaxHeaderBytes = std::size_t{64} << 20;

struct ContainerTensor {
  std::string name;
  Shape dims;
  std::vector<float> data;
};

struct Container {
  std::string kind;  // clarae | baseline | mlp
  json config = json::object();
  json metadata = json::object();
  std::vector<ContainerTensor> tensors;
};

namespace detail {

inline std::size_t align8(std::size_t n) { return (n + 7) & ~std::size_t{7}; }

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(in[at + std::size_t(i)])) << (8 * i);
  return v;
}

inline void put_f32(char* dst, float f) {
  auto u = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) dst[i] = static_cast<char>((u >> (8 * i)) & 0xffu);
}

inline float get_f32(const char* src) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= std::uint32_t(static_cast<unsigned char>(src[i])) << (8 * i);
  return std::bit_cast<float>(u);
}

inline json header_json(const Container& c, std::size_t payload_start) {
  json dir = json::array();
  std::size_t off = payload_start;
  for (const auto& t : c.tensors) {
    const std::size_t nbytes = t.data.size() * 4;
    dir.push_back({{"name", t.name}, {"dtype", 0}, {"rank", t.dims.size()}, {"dims", t.dims}, {"offset", off},
                   {"nbytes", nbytes}});
    off = align8(off + nbytes);
  }
  return {{"kind", c.kind}, {"config", c.config}, {"metadata", c.metadata}, {"tensors", dir}};
}

}  // namespace detail

inline std::string encode_container(const Container& c) {
  for (const auto& t : c.tensors) {
    if (numel(t.dims) != t.data.size()) {
      throw ShapeError("container: tensor " + t.name + " has " + std::to_string(t.data.size()) +
                       " values for dims " + to_string(t.dims));
    }
  }
  // Offsets are absolute, so the header length feeds back into them. Iterate
  // until the header text stops changing; lengths only grow, so this settles.
  std::string header;
  std::size_t start = detail::align8(kContainerPrologue);
  for (int pass = 0; pass < 8; ++pass) {
    header = detail::header_json(c, start).dump();
    const std::size_t next = detail::align8(kContainerPrologue + header.size());
    if (next == start) break;
    start = next;
  }
  if (detail::align8(kContainerPrologue + header.size()) != start) {
    throw NumericError("container: header layout did not converge");
  }

  std::string out = "CLRW";
  detail::put_u32(out, kContainerVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  for (const auto& t : c.tensors) {
    out.resize(detail::align8(out.size()), '\0');
    const std::size_t at = out.size();
    out.resize(at + t.data.size() * 4);
    for (std::size_t i = 0; i < t.data.size(); ++i) detail::put_f32(out.data() + at + 4 * i, t.data[i]);
  }
  return out;
}

inline Container decode_container(std::string_view bytes) {
  if (bytes.size() < kContainerPrologue || bytes.substr(0, 4) != "CLRW") {
    throw DataError("container: missing CLRW magic");
  }
  const auto version = detail::get_u32(bytes, 4);
  if (version != kContainerVersion) {
    throw DataError("container: unsupported format version " + std::to_string(version));
  }
  const std::size_t hlen = detail::get_u32(bytes, 8);
  if (hlen > kMaxHeaderBytes || kContainerPrologue + hlen > bytes.size()) {
    throw DataError("container: header length " + std::to_string(hlen) + " exceeds file size");
  }
  json h;
  try {
    h = json::parse(bytes.substr(kContainerPrologue, hlen));
  } catch (const json::exception& e) {
    throw DataError(std::string("container: bad header JSON: ") + e.what());
  }
  Container c;
  try {
    c.kind = h.at("kind").get<std::string>();
    c.config = h.at("config");
    c.metadata = h.value("metadata", json::object());
    const std::size_t header_end = kContainerPrologue + hlen;
    std::size_t prev_end = header_end;
    for (const auto& e : h.at("tensors")) {
      ContainerTensor t;
      t.name = e.at("name").get<std::string>();
      if (e.at("dtype").get<int>() != 0) throw DataError("container: tensor " + t.name + " has unsupported dtype");
      t.dims = e.at("dims").get<Shape>();
      if (e.at("rank").get<std::size_t>() != t.dims.size()) {
        throw DataError("container: tensor " + t.name + " rank does not match dims");
      }
      const std::size_t count = numel(t.dims);
      const auto off = e.at("offset").get<std::uint64_t>();
      const auto nbytes = e.value("nbytes", std::uint64_t(count) * 4);
      if (nbytes != std::uint64_t(count) * 4) throw DataError("container: tensor " + t.name + " byte size mismatch");
      if (off % 8 != 0 || off < prev_end || off > bytes.size() || nbytes > bytes.size() - off) {
        throw DataError("container: tensor " + t.name + " extent lies outside the payload");
      }
      t.data.resize(count);
      for (std::size_t i = 0; i < count; ++i) t.data[i] = detail::get_f32(bytes.data() + off + 4 * i);
      prev_end = off + nbytes;
      c.tensors.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("container: malformed header: ") + e.what());
  }
  return c;
}

inline void save_container(const std::filesystem::path& path, const Container& c) {
  write_file(path, encode_container(c));
}

inline Container load_container(const std::filesystem::path& path) { return decode_container(read_file(path)); }

/// Identifier of a serialized model: hash of its container bytes.
inline std::string model_id(std::string_view container_bytes) { return fnv1a_hex(container_bytes); }

template <typename Model>
std::vector<ContainerTensor> export_state(const Model& m) {
  std::vector<ContainerTensor> out;
  for (const auto& nt : m.state()) {
    const auto v = nt.tensor.values();
    out.push_back({nt.name, nt.tensor.shape(), std::vector<float>(v.begin(), v.end())});
  }
  return out;
}

template <typename Model>
void import_state(Model& m, const Container& c) {
  std::vector<NamedTensor<float>> src;
  for (const auto& t : c.tensors) src.push_back({t.name, Tensor<float>(t.dims, t.data)});
  m.load_state(src);
}

inline Container to_container(const Clarae<float>& m, json metadata = json::object()) {
  return {"clarae", to_json(m.config()), std::move(metadata), export_state(m)};
}

inline Container to_container(const BaselineDae<float>& m, json metadata = json::object()) {
  return {"baseline", to_json(m.config()), std::move(metadata), export_state(m)};
}

inline Container to_container(const MlpClassifier<float>& m, json metadata = json::object()) {
  return {"mlp", {{"latent_dim", m.latent_dim()}, {"hidden", m.hidden()}}, std::move(metadata), export_state(m)};
}

inline void expect_kind(const Container& c, std::string_view kind) {
  if (c.kind != kind) throw DataError("container holds a '" + c.kind + "' model, expected '" + std::string(kind) + "'");
}

/// Rebuilds a CLARAE model in eval mode.
inline Clarae<float> load_clarae(const Container& c) {
  expect_kind(c, "clarae");
  Clarae<float> m(clarae_config_from_json(c.config), 0);
  import_state(m, c);
  m.set_mode(Mode::eval);
  return m;
}

inline BaselineDae<float> load_baseline(const Container& c) {
  expect_kind(c, "baseline");
  BaselineDae<float> m(clarae_config_from_json(c.config), 0);
  import_state(m, c);
  m.set_mode(Mode::eval);
  return m;
}

inline MlpClassifier<float> load_classifier(const Container& c) {
  expect_kind(c, "mlp");
  std::size_t latent = 0, hidden = 0;
  try {
    latent = c.config.at("latent_dim").get<std::size_t>();
    hidden = c.config.at("hidden").get<std::size_t>();
  } catch (const json::exception& e) {
    throw DataError(std::string("classifier config: ") + e.what());
  }
  if (latent == 0 || hidden == 0) throw DataError("classifier config: dimensions must be positive");
  MlpClassifier<float> m(latent, hidden, 0);
  import_state(m, c);
  return m;
}

// ---------------------------------------------------------------------------
// Signal CSV files
//
// One signal per row. Plain rows hold only samples; labeled rows start with
// patient_id,rhythm,polarity. An optional header row is detected by its first
// field not being a number.
// ---------------------------------------------------------------------------

struct SignalTable {
  bool labeled = false;
  std::size_t len = 0;
  std::vector<signals::EgmRecord> rows;

  signals::SignalSet set() const { return signals::stack(rows); }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> f;
  std::size_t pos = 0;
  while (true) {
    const auto comma = line.find(',', pos);
    f.push_back(trim(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return f;
}

template <typename N>
bool parse_number(std::string_view s, N& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc{} && r.ptr == s.data() + s.size() && !s.empty();
}

}  // namespace detail

/// Parses CSV text. expected_len = 0 takes the sample count from the first row.
inline SignalTable parse_signals(std::string_view text, std::size_t expected_len = 0) {
  SignalTable t;
  t.len = expected_len;
  bool decided = false;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = detail::trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty()) continue;
    const auto fields = detail::split_csv(line);
    const std::string where = "line " + std::to_string(line_no) + ": ";

    if (!decided) {
      double probe = 0.0;
      if (!detail::parse_number(fields[0], probe)) {
        if (!t.rows.empty()) throw DataError(where + "unexpected header row");
        t.labeled = fields.size() >= 3 && fields[0] == "patient_id";
        decided = true;
        continue;
      }
      t.labeled = false;
      if (fields.size() >= 3) {
        try {
          signals::parse_rhythm(fields[1]);
          signals::parse_polarity(fields[2]);
          int pid = 0;
          t.labeled = detail::parse_number(fields[0], pid) && !detail::parse_number(fields[1], probe);
        } catch (const DataError&) {
        }
      }
      decided = true;
    }

    const std::size_t lead = t.labeled ? 3 : 0;
    if (fields.size() <= lead) throw DataError(where + "row has no samples");
    if (t.len == 0) t.len = fields.size() - lead;
    if (fields.size() != t.len + lead) {
      throw DataError(where + "expected " + std::to_string(t.len + lead) + " columns (" + std::to_string(t.len) +
                      " samples), got " + std::to_string(fields.size()));
    }
    signals::EgmRecord rec;
    if (t.labeled) {
      if (!detail::parse_number(fields[0], rec.patient_id)) {
        throw DataError(where + "patient_id '" + std::string(fields[0]) + "' is not an integer");
      }
      try {
        rec.rhythm = signals::parse_rhythm(fields[1]);
        rec.polarity = signals::parse_polarity(fields[2]);
      } catch (const DataError& e) {
        throw DataError(where + e.what());
      }
    }
    rec.samples.resize(t.len);
    for (std::size_t i = 0; i < t.len; ++i) {
      float v = 0.0f;
      if (!detail::parse_number(fields[lead + i], v) || !std::isfinite(v)) {
        throw DataError(where + "column " + std::to_string(lead + i + 1) + " is not a finite number: '" +
                        std::string(fields[lead + i]) + "'");
      }
      rec.samples[i] = v;
    }
    t.rows.push_back(std::move(rec));
  }
  if (t.rows.empty()) throw DataError("signal file contains no rows");
  return t;
}

inline SignalTable read_signals(const std::filesystem::path& path, std::size_t expected_len = 0) {
  try {
    return parse_signals(read_file(path), expected_len);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline std::string format_signals(std::span<const signals::EgmRecord> rows, bool labeled, bool header = true) {
  std::string out;
  if (rows.empty()) return out;
  const std::size_t len = rows.front().samples.size();
  if (header) {
    if (labeled) out += "patient_id,rhythm,polarity,";
    for (std::size_t i = 0; i < len; ++i) {
      if (i) out += ',';
      out += 's' + std::to_string(i);
    }
    out += '\n';
  }
  for (const auto& r : rows) {
    if (r.samples.size() != len) throw ShapeError("format_signals: rows differ in length");
    if (labeled) {
      out += std::to_string(r.patient_id);
      out += ',';
      out += signals::name(r.rhythm);
      out += ',';
      out += signals::name(r.polarity);
      out += ',';
    }
    for (std::size_t i = 0; i < len; ++i) {
      if (i) out += ',';
      out += format_number(r.samples[i]);
    }
    out += '\n';
  }
  return out;
}

inline void write_signals(const std::filesystem::path& path, std::span<const signals::EgmRecord> rows,
                          bool labeled, bool header = true) {
  write_file(path, format_signals(rows, labeled, header));
}

/// Sidecar written next to a generated cohort: labels, patient ids, the
/// generator config, the preprocessing fitted on the training split and the
/// split itself.
inline json cohort_sidecar(std::span<const signals::EgmRecord> rows, const signals::CohortConfig& cfg,
                           const signals::PreprocessParams& params, const signals::DatasetSplit& split) {
  json recs = json::array();
  for (const auto& r : rows) {
    recs.push_back({{"patient_id", r.patient_id}, {"rhythm", signals::name(r.rhythm)},
                    {"polarity", signals::name(r.polarity)}});
  }
  return {{"count", rows.size()},
          {"generator", to_json(cfg)},
          {"preprocess", to_json(params)},
          {"split", {{"train", split.train}, {"val", split.val}, {"test", split.test}}},
          {"records", recs}};
}

inline signals::DatasetSplit split_from_sidecar(const json& j) {
  try {
    const auto& s = j.at("split");
    return {s.at("train").get<std::vector<int>>(), s.at("val").get<std::vector<int>>(),
            s.at("test").get<std::vector<int>>()};
  } catch (const json::exception& e) {
    throw DataError(std::string("sidecar: bad split: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline json to_json(const training::TrainReport& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"lr", e.lr},
                      {"seconds", e.seconds}});
  }
  return {{"stop_reason", r.stop_reason}, {"best_epoch", r.best_epoch}, {"best_val_loss", r.best_val_loss},
          {"epochs", epochs}};
}

inline std::string train_report_csv(const training::TrainReport& r) {
  std::string out = "epoch,train_loss,val_loss,lr,seconds\n";
  for (const auto& e : r.epochs) {
    out += std::to_string(e.epoch) + ',' + format_number(e.train_loss) + ',' + format_number(e.val_loss) + ',' +
           format_number(e.lr) + ',' + format_number(e.seconds) + '\n';
  }
  return out;
}

inline json to_json(const eval::SweepReport& r) {
  json levels = json::array();
  for (const auto& l : r.levels) {
    levels.push_back({{"snr_db", l.snr_db}, {"mean_mse", l.mean_mse}, {"median_mse", l.median_mse},
                      {"mean_output_snr", l.mean_output_snr}, {"median_output_snr", l.median_output_snr},
                      {"n", l.n}});
  }
  return {{"model_id", r.model_id}, {"seed", r.seed}, {"levels", levels}, {"per_signal_mse", r.mse}};
}

inline std::string sweep_csv(const eval::SweepReport& r) {
  std::string out = "snr_db,mean_mse,median_mse,n\n";
  for (const auto& l : r.levels) {
    out += format_number(l.snr_db) + ',' + format_number(l.mean_mse) + ',' + format_number(l.median_mse) + ',' +
           std::to_string(l.n) + '\n';
  }
  return out;
}

inline json to_json(const eval::ClassificationReport& r) {
  json classes = json::array();
  for (std::size_t c = 0; c < 3; ++c) {
    classes.push_back({{"class", signals::kRhythmNames[c]}, {"tp", r.tp[c]}, {"fp", r.fp[c]}, {"fn", r.fn[c]},
                       {"support", r.support[c]}, {"f1", r.f1[c]}});
  }
  json confusion = json::array();
  for (const auto& row : r.confusion) confusion.push_back(row);
  return {{"classes", classes}, {"macro_f1", r.macro_f1}, {"n", r.n}, {"confusion", confusion},
          {"warnings", r.warnings}};
}

inline std::string classification_csv(const eval::ClassificationReport& r) {
  std::string out = "class,tp,fp,fn,support,f1\n";
  for (std::size_t c = 0; c < 3; ++c) {
    out += std::string(signals::kRhythmNames[c]) + ',' + std::to_string(r.tp[c]) + ',' + std::to_string(r.fp[c]) +
           ',' + std::to_string(r.fn[c]) + ',' + std::to_string(r.support[c]) + ',' + format_number(r.f1[c]) + '\n';
  }
  out += "macro,,,," + std::to_string(r.n) + ',' + format_number(r.macro_f1) + '\n';
  return out;
}

/// Latent matrix as CSV: l0..l{d-1},label,patient_id.
inline std::string latents_csv(const eval::LatentMatrix& z, std::span<const signals::EgmRecord> rows) {
  if (rows.size() != z.rows) throw ShapeError("latents_csv: row count mismatch");
  std::string out;
  for (std::size_t j = 0; j < z.dim; ++j) out += 'l' + std::to_string(j) + ',';
  out += "label,patient_id\n";
  for (std::size_t i = 0; i < z.rows; ++i) {
    for (float v : z.row(i)) out += format_number(v) + ',';
    out += std::string(signals::name(rows[i].rhythm)) + ',' + std::to_string(rows[i].patient_id) + '\n';
  }
  return out;
}

/// Writes JSON when the path ends in .json, CSV otherwise.
inline void write_report(const std::filesystem::path& path, const json& as_json, const std::string& as_csv) {
  if (path.extension() == ".json") {
    write_file(path, as_json.dump(2) + "\n");
  } else {
    write_file(path, as_csv);
  }
}

}  // namespace clarae::io
