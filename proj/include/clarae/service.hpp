#pragma once

// Denoising entry point shared by the CLI and the HTTP service, and the
// service itself.

#include <cmath>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>

// Eigen names a parameter _res, which <resolv.h> (pulled in by httplib)
// defines as a macro, so Eigen has to come first.
#include "clarae/io.hpp"

#include <httplib.h>

namespace clarae::service {

using json = nlohmann::json;

/// A model ready to serve, with the identity of the container it came from.
struct LoadedModel {
  Clarae<float> model;
  std::string id;
  json metadata;
};

inline std::shared_ptr<const LoadedModel> load_model(std::string_view container_bytes) {
  const auto c = io::decode_container(container_bytes);
  return std::make_shared<const LoadedModel>(LoadedModel{io::load_clarae(c), io::model_id(container_bytes), c.metadata});
}

struct DenoiseResult {
  std::vector<float> input;  // what the model saw: the signal, plus noise when requested
  std::vector<float> denoised;
  std::vector<float> latent;
  double mse_vs_input = 0.0;
  std::optional<double> mse_vs_clean;  // only when noise was injected
  std::optional<double> snr_db;
  std::uint64_t seed = 0;
};

/// Optionally adds white noise at snr_db (seeded), then reconstructs.
inline DenoiseResult denoise(const Clarae<float>& model, std::span<const float> signal, std::optional<double> snr_db,
                             std::uint64_t seed) {
  const std::size_t len = model.config().input_len;
  if (signal.size() != len) {
    throw ShapeError("signal has " + std::to_string(signal.size()) + " samples, model expects " + std::to_string(len));
  }
  for (float v : signal) {
    if (!std::isfinite(v)) throw DataError("signal contains non-finite values");
  }
  DenoiseResult r;
  r.seed = seed;
  r.snr_db = snr_db;
  if (snr_db) {
    r.input = signals::add_noise_at_snr<float>(signal, {*snr_db, seed}).noisy;
  } else {
    r.input.assign(signal.begin(), signal.end());
  }
  const auto z = model.infer_encode(Tensor<float>({len}, r.input));
  const auto y = model.infer_decode(z);
  r.latent.assign(z.values().begin(), z.values().end());
  r.denoised.assign(y.values().begin(), y.values().end());
  r.mse_vs_input = eval::mse_metric(r.input, r.denoised);
  if (snr_db) r.mse_vs_clean = eval::mse_metric(std::vector<float>(signal.begin(), signal.end()), r.denoised);
  return r;
}

struct Limits {
  std::size_t max_body_bytes = std::size_t{256} << 20;
  std::size_t max_input_len = 1 << 16;
  std::size_t max_params = std::size_t{64} << 20;
};

inline json model_summary(const LoadedModel& m) {
  const auto& cfg = m.model.config();
  return {{"model_id", m.id},
          {"kind", "clarae"},
          {"config", io::to_json(cfg)},
          {"metadata", m.metadata},
          {"param_count", param_count(m.model.param_groups()).total},
          {"latent_dim", cfg.latent_dim},
          {"input_len", cfg.input_len},
          {"compression_ratio", cfg.compression_ratio()}};
}

class Server {
 public:
  explicit Server(Limits limits = {}) : limits_(limits) { routes(); }

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  void set_model(std::shared_ptr<const LoadedModel> m) {
    std::lock_guard lock(mu_);
    model_ = std::move(m);
  }

  std::shared_ptr<const LoadedModel> model() const {
    std::lock_guard lock(mu_);
    return model_;
  }

  /// Serves files under `dir` at "/". Returns false if the directory is missing.
  bool mount_static(const std::string& dir) { return http_.set_mount_point("/", dir); }

  bool listen(const std::string& host, int port) { return http_.listen(host, port); }

  /// Binds an ephemeral port; call listen_after_bind() on another thread.
  int bind_any(const std::string& host = "127.0.0.1") { return http_.bind_to_any_port(host); }
  bool listen_after_bind() { return http_.listen_after_bind(); }
  void wait_until_ready() const { http_.wait_until_ready(); }
  void stop() { http_.stop(); }

  /// Cap on the model configs this server accepts.
  const Limits& limits() const { return limits_; }

  /// Throws DataError when the config exceeds server limits.
  void check_limits(const Clarae<float>& m) const {
    const auto& cfg = m.config();
    if (cfg.input_len > limits_.max_input_len) {
      throw DataError("input_len " + std::to_string(cfg.input_len) + " exceeds server limit " +
                      std::to_string(limits_.max_input_len));
    }
    const auto n = param_count(m.param_groups()).total;
    if (n > limits_.max_params) {
      throw DataError("model has " + std::to_string(n) + " parameters, server limit is " +
                      std::to_string(limits_.max_params));
    }
  }

 private:
  static void send_error(httplib::Response& res, int status, const std::string& error, const std::string& detail) {
    res.status = status;
    res.set_content(json{{"error", error}, {"detail", detail}}.dump(), "application/json");
  }

  static void send_json(httplib::Response& res, const json& j) { res.set_content(j.dump(), "application/json"); }

  void routes() {
    http_.set_payload_max_length(limits_.max_body_bytes);

    http_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      const int s = res.status;
      if (s == 413) {
        send_error(res, s, "payload_too_large", "request body exceeds the server limit");
      } else if (s == 404) {
        send_error(res, s, "not_found", "no such endpoint");
      } else {
        send_error(res, s, "http_error", "status " + std::to_string(s));
      }
    });

    http_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string detail = "unexpected failure";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        detail = e.what();
      } catch (...) {
      }
      send_error(res, 500, "internal", detail);
    });

    http_.Get("/api/health", [this](const httplib::Request&, httplib::Response& res) {
      const auto m = model();
      send_json(res, {{"status", "ok"}, {"model_id", m ? json(m->id) : json(nullptr)}});
    });

    http_.Get("/api/model", [this](const httplib::Request&, httplib::Response& res) {
      const auto m = model();
      if (!m) return send_error(res, 503, "no_model", "no model loaded; POST a container to /api/weights");
      send_json(res, model_summary(*m));
    });

    http_.Post("/api/denoise", [this](const httplib::Request& req, httplib::Response& res) { on_denoise(req, res); });
    http_.Post("/api/weights", [this](const httplib::Request& req, httplib::Response& res) { on_weights(req, res); });
  }

  void on_denoise(const httplib::Request& req, httplib::Response& res) {
    if (req.body.size() > limits_.max_body_bytes) {
      return send_error(res, 413, "payload_too_large", "request body exceeds the server limit");
    }
    const auto m = model();
    if (!m) return send_error(res, 503, "no_model", "no model loaded; POST a container to /api/weights");

    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      return send_error(res, 400, "bad_json", e.what());
    }
    if (!body.is_object() || !body.contains("signal") || !body["signal"].is_array()) {
      return send_error(res, 400, "bad_request", "body must be an object with a 'signal' array");
    }
    std::vector<float> signal;
    signal.reserve(body["signal"].size());
    for (const auto& v : body["signal"]) {
      if (!v.is_number()) return send_error(res, 400, "bad_signal", "signal values must be numbers");
      signal.push_back(v.get<float>());
    }
    std::optional<double> snr;
    if (body.contains("snr_db") && !body["snr_db"].is_null()) {
      if (!body["snr_db"].is_number() || !std::isfinite(body["snr_db"].get<double>())) {
        return send_error(res, 400, "bad_snr", "snr_db must be a finite number");
      }
      snr = body["snr_db"].get<double>();
    }
    std::uint64_t seed = 0;
    if (body.contains("seed") && !body["seed"].is_null()) {
      if (!body["seed"].is_number_unsigned()) {
        return send_error(res, 400, "bad_seed", "seed must be a non-negative integer");
      }
      seed = body["seed"].get<std::uint64_t>();
    } else {
      seed = fresh_seed();
    }

    DenoiseResult r;
    try {
      r = denoise(m->model, signal, snr, seed);
    } catch (const ShapeError& e) {
      return send_error(res, 400, "bad_length", e.what());
    } catch (const DataError& e) {
      return send_error(res, 400, "bad_signal", e.what());
    }
    send_json(res, {{"denoised", r.denoised},
                    {"noisy", r.input},
                    {"latent", r.latent},
                    {"mse_vs_input", r.mse_vs_input},
                    {"mse_vs_clean", r.mse_vs_clean ? json(*r.mse_vs_clean) : json(nullptr)},
                    {"snr_db", r.snr_db ? json(*r.snr_db) : json(nullptr)},
                    {"seed", r.seed},
                    {"model_id", m->id}});
  }

  void on_weights(const httplib::Request& req, httplib::Response& res) {
    std::string_view bytes = req.body;
    if (req.is_multipart_form_data()) {
      if (req.files.empty()) return send_error(res, 400, "bad_upload", "multipart upload carries no file");
      bytes = req.files.begin()->second.content;
    }
    std::shared_ptr<const LoadedModel> loaded;
    try {
      const auto c = io::decode_container(bytes);
      if (c.kind != "clarae") {
        return send_error(res, 400, "bad_container", "container holds a '" + c.kind + "' model, expected 'clarae'");
      }
      // Check limits on the declared config before allocating the model.
      const auto cfg = io::clarae_config_from_json(c.config);
      if (cfg.input_len > limits_.max_input_len) {
        return send_error(res, 422, "incompatible_config",
                          "input_len " + std::to_string(cfg.input_len) + " exceeds server limit " +
                              std::to_string(limits_.max_input_len));
      }
      loaded = load_model(bytes);
      check_limits(loaded->model);
    } catch (const DataError& e) {
      const bool limit = loaded != nullptr;
      return send_error(res, limit ? 422 : 400, limit ? "incompatible_config" : "bad_container", e.what());
    } catch (const ShapeError& e) {
      return send_error(res, 400, "bad_container", e.what());
    }
    set_model(loaded);
    send_json(res, {{"model_id", loaded->id}});
  }

  std::uint64_t fresh_seed() {
    std::lock_guard lock(mu_);
    return seed_rng_() >> 11;  // 53 bits survive a round trip through JavaScript numbers
  }

  Limits limits_;
  httplib::Server http_;
  mutable std::mutex mu_;
  std::shared_ptr<const LoadedModel> model_;
  std::mt19937_64 seed_rng_{std::random_device{}()};
};

}  // namespace clarae::service
