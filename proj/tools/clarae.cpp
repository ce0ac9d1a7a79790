// clarae: command-line front end.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "clarae/service.hpp"

namespace fs = std::filesystem;
using namespace clarae;
using json = nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json(const fs::path& p) {
  try {
    return json::parse(io::read_file(p));
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

fs::path sidecar_path(const fs::path& data) {
  auto p = data;
  p.replace_extension(".json");
  return p;
}

// Rows of a signal file plus, when present, the split recorded in its sidecar.
struct Dataset {
  io::SignalTable table;
  std::optional<signals::DatasetSplit> split;
};

Dataset load_dataset(const fs::path& path, std::size_t expected_len = 0) {
  Dataset d;
  d.table = io::read_signals(path, expected_len);
  const auto side = sidecar_path(path);
  if (d.table.labeled && side != path && fs::exists(side)) {
    const auto j = read_json(side);
    if (j.contains("split")) d.split = io::split_from_sidecar(j);
  }
  return d;
}

signals::DatasetSplit split_of(const Dataset& d, std::uint64_t seed) {
  if (!d.table.labeled) throw DataError("this command needs labeled rows (patient_id,rhythm,polarity,...)");
  if (d.split) return *d.split;
  return signals::split_patientwise(d.table.rows, {0.8, 0.1, 0.1}, seed);
}

// Rows to evaluate on: the test patients when a split is known, else all rows.
std::vector<signals::EgmRecord> eval_rows(const Dataset& d, const std::string& which, std::uint64_t seed) {
  if (which == "all" || (which == "auto" && !d.table.labeled)) return d.table.rows;
  return signals::select(d.table.rows, split_of(d, seed).test);
}

struct ModelFile {
  Clarae<float> model;
  std::string id;
};

ModelFile load_weights(const fs::path& path) {
  const auto bytes = io::read_file(path);
  return {io::load_clarae(io::decode_container(bytes)), io::model_id(bytes)};
}

void log_epoch(const training::EpochRecord& r) {
  std::fprintf(stderr, "epoch %zu  train %.6f  val %.6f  lr %.3g  %.0fs\n", r.epoch, r.train_loss, r.val_loss, r.lr,
               r.seconds);
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  bool lowpass = false;
};

int cmd_generate(const GenerateArgs& a) {
  signals::CohortConfig cfg;
  if (!a.config.empty()) cfg = io::cohort_config_from_json(read_json(a.config));
  if (a.seed) cfg.seed = *a.seed;
  auto recs = signals::generate_cohort(cfg);
  const auto split = signals::split_patientwise(recs, {0.8, 0.1, 0.1}, cfg.seed);
  auto params = signals::fit_preprocess(signals::select(recs, split.train));
  params.lowpass = a.lowpass;
  signals::apply_preprocess(recs, params, cfg.raw_len);
  for (auto& r : recs) r.raw.clear();

  const fs::path out(a.out);
  const auto side = sidecar_path(out);
  if (side == out) throw UsageError("--out must not end in .json; the sidecar is written there");
  io::write_signals(out, recs, true);
  io::write_file(side, io::cohort_sidecar(recs, cfg, params, split).dump(2) + "\n");
  std::fprintf(stderr, "wrote %zu signals to %s (sidecar %s)\n", recs.size(), out.c_str(), side.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, config, out_weights, report;
  std::string preset;  // empty: config file, else full
  std::string model = "clarae";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch;
  std::optional<double> max_seconds;
  bool denoising = false;
  bool quiet = false;
};

ClaraeConfig preset_config(const std::string& name) {
  if (name == "desk") return ClaraeConfig::desk();
  if (name == "full") return ClaraeConfig{};
  throw DataError("unknown preset '" + name + "' (expected full or desk)");
}

int cmd_train(const TrainArgs& a) {
  ClaraeConfig mcfg;
  training::TrainConfig tcfg;
  json j = json::object();
  if (!a.config.empty()) {
    j = read_json(a.config);
    io::detail::check_keys(j, {"preset", "model", "train"}, "config file");
  }
  if (!a.preset.empty()) {
    mcfg = preset_config(a.preset);
  } else if (j.contains("preset")) {
    if (!j["preset"].is_string()) throw DataError("config file: preset must be a string");
    mcfg = preset_config(j["preset"].get<std::string>());
  }
  if (j.contains("model")) mcfg = io::clarae_config_from_json(j["model"], mcfg);
  if (j.contains("train")) tcfg = io::train_config_from_json(j["train"], tcfg);
  if (a.seed) tcfg.seed = *a.seed;
  if (a.epochs) tcfg.max_epochs = *a.epochs;
  if (a.batch) tcfg.batch_size = *a.batch;
  if (a.max_seconds) tcfg.max_seconds = *a.max_seconds;
  if (a.denoising) tcfg.target = training::TargetMode::denoising;
  tcfg.validate();

  const auto data = load_dataset(a.data, mcfg.input_len);
  const auto split = split_of(data, tcfg.seed);
  const auto train = signals::stack(signals::select(data.table.rows, split.train));
  const auto val = signals::stack(signals::select(data.table.rows, split.val));
  std::fprintf(stderr, "training %s on %zu signals, validating on %zu\n", a.model.c_str(), train.rows, val.rows);

  const training::EpochCallback cb = a.quiet ? training::EpochCallback{} : training::EpochCallback{log_epoch};
  json meta = {{"train_config", io::to_json(tcfg)},
               {"data", fs::path(a.data).filename().string()},
               {"split", {{"train", split.train}, {"val", split.val}, {"test", split.test}}}};
  training::TrainReport rep;
  io::Container c;
  if (a.model == "baseline") {
    BaselineDae<float> m(mcfg, tcfg.seed);
    rep = training::fit(m, train, val, tcfg, cb);
    c = io::to_container(m);
  } else {
    Clarae<float> m(mcfg, tcfg.seed);
    rep = training::fit(m, train, val, tcfg, cb);
    c = io::to_container(m);
  }
  meta["stop_reason"] = rep.stop_reason;
  meta["best_epoch"] = rep.best_epoch;
  meta["best_val_loss"] = rep.best_val_loss;
  meta["epochs_run"] = rep.epochs.size();
  c.metadata = meta;
  io::save_container(a.out_weights, c);
  if (!a.report.empty()) io::write_report(a.report, io::to_json(rep), io::train_report_csv(rep));
  std::fprintf(stderr, "stop: %s, best val %.6f at epoch %zu\n", rep.stop_reason.c_str(), rep.best_val_loss,
               rep.best_epoch);
  return 0;
}

// ---------------------------------------------------------------------------

struct DenoiseArgs {
  std::string weights, input, out, noisy_out;
  std::optional<double> snr;
  std::uint64_t seed = 0;
};

int cmd_denoise(const DenoiseArgs& a) {
  const auto mf = load_weights(a.weights);
  const auto table = io::read_signals(a.input, mf.model.config().input_len);
  std::vector<signals::EgmRecord> den = table.rows, noisy = table.rows;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    // Row i draws its noise from seed + i, so a single row replays through
    // the HTTP API with that seed.
    auto r = service::denoise(mf.model, table.rows[i].samples, a.snr, a.seed + i);
    den[i].samples = std::move(r.denoised);
    noisy[i].samples = std::move(r.input);
  }
  io::write_signals(a.out, den, table.labeled);
  if (!a.noisy_out.empty()) io::write_signals(a.noisy_out, noisy, table.labeled);
  std::fprintf(stderr, "denoised %zu rows with model %s\n", den.size(), mf.id.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct SweepArgs {
  std::string weights, data, out;
  std::string rows = "auto";
  double snr_min = -5.0, snr_max = 15.0, step = 1.0;
  std::uint64_t seed = 0;
};

int cmd_sweep(const SweepArgs& a) {
  const auto mf = load_weights(a.weights);
  const auto data = load_dataset(a.data, mf.model.config().input_len);
  const auto set = signals::stack(eval_rows(data, a.rows, a.seed));
  auto rep = eval::snr_sweep(mf.model, set, a.seed, eval::sweep_levels(a.snr_min, a.snr_max, a.step));
  rep.model_id = mf.id;
  io::write_report(a.out, io::to_json(rep), io::sweep_csv(rep));
  std::fprintf(stderr, "swept %zu levels over %zu signals\n", rep.levels.size(), set.rows);
  return 0;
}

// ---------------------------------------------------------------------------

struct ClassifyArgs {
  std::string weights, data, clf_out, clf_in, report, latents_out;
  std::uint64_t seed = 0;
  std::size_t epochs = 300;
  bool quiet = false;
};

int cmd_classify(const ClassifyArgs& a) {
  const auto mf = load_weights(a.weights);
  const auto data = load_dataset(a.data, mf.model.config().input_len);
  const std::size_t d = mf.model.config().latent_dim;

  std::vector<signals::EgmRecord> test_rows;
  MlpClassifier<float> clf(d, 32, a.seed);
  if (!a.clf_in.empty()) {
    clf = io::load_classifier(io::load_container(a.clf_in));
    if (clf.latent_dim() != d) throw DataError("classifier latent dim does not match the autoencoder");
    test_rows = eval_rows(data, "auto", a.seed);
  } else {
    const auto split = split_of(data, a.seed);
    const auto tr = signals::select(data.table.rows, split.train);
    const auto va = signals::select(data.table.rows, split.val);
    test_rows = signals::select(data.table.rows, split.test);
    const auto ztr = eval::extract_latents(mf.model, signals::stack(tr));
    const auto zva = eval::extract_latents(mf.model, signals::stack(va));
    training::TrainConfig cfg;
    cfg.seed = a.seed;
    cfg.batch_size = 64;
    cfg.max_epochs = a.epochs;
    const auto ltr = signals::labels(tr), lva = signals::labels(va);
    const auto rep = training::fit_classifier(clf, ztr.data, ltr, zva.data, lva, cfg,
                                              a.quiet ? training::EpochCallback{} : training::EpochCallback{log_epoch});
    std::fprintf(stderr, "classifier: %s after %zu epochs\n", rep.stop_reason.c_str(), rep.epochs.size());
    if (!a.clf_out.empty()) io::save_container(a.clf_out, io::to_container(clf, {{"autoencoder", mf.id}}));
  }

  const auto z = eval::extract_latents(mf.model, signals::stack(test_rows));
  if (!a.latents_out.empty()) io::write_file(a.latents_out, io::latents_csv(z, test_rows));
  std::vector<int> preds(z.rows);
  for (std::size_t i = 0; i < z.rows; ++i) preds[i] = clf.predict(z.row(i));
  if (!data.table.labeled) {
    for (int p : preds) std::printf("%s\n", std::string(signals::kRhythmNames[std::size_t(p)]).c_str());
    return 0;
  }
  const auto rep = eval::f1_per_class(preds, signals::labels(test_rows));
  for (const auto& w : rep.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  if (!a.report.empty()) io::write_report(a.report, io::to_json(rep), io::classification_csv(rep));
  std::fprintf(stderr, "macro F1 %.4f over %zu signals\n", rep.macro_f1, rep.n);
  return 0;
}

// ---------------------------------------------------------------------------

struct ServeArgs {
  std::string weights, static_dir;
  std::string host = "127.0.0.1";
  int port = 8080;
};

int cmd_serve(const ServeArgs& a) {
  int port = a.port;
  if (const char* env = std::getenv("CLARAE_PORT"); env && *env) {
    char* end = nullptr;
    const long p = std::strtol(env, &end, 10);
    if (*end != '\0' || p < 0 || p > 65535) throw UsageError("CLARAE_PORT must be a port number");
    port = int(p);
  }
  service::Server server;
  if (!a.weights.empty()) {
    auto m = service::load_model(io::read_file(a.weights));
    server.check_limits(m->model);
    server.set_model(std::move(m));
  }
  if (!a.static_dir.empty() && !server.mount_static(a.static_dir)) {
    throw UsageError("--static-dir " + a.static_dir + " is not a directory");
  }
  std::fprintf(stderr, "listening on http://%s:%d\n", a.host.c_str(), port);
  if (!server.listen(a.host, port)) throw DataError("cannot listen on " + a.host + ":" + std::to_string(port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CLARAE: convolutional autoencoder for atrial electrograms"};
  app.require_subcommand(1);

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Write a synthetic cohort as a signal CSV plus JSON sidecar");
  gen->add_option("--config", ga.config, "Cohort config JSON");
  gen->add_option("--seed", ga.seed, "Generator seed (overrides config)");
  gen->add_option("--out", ga.out, "Output CSV; the sidecar goes next to it with a .json extension")->required();
  gen->add_flag("--lowpass", ga.lowpass, "Low-pass before decimation");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train an autoencoder");
  tr->add_option("--data", ta.data, "Labeled signal CSV")->required()->check(CLI::ExistingFile);
  tr->add_option("--config", ta.config, "JSON with optional preset, model and train sections")
      ->check(CLI::ExistingFile);
  tr->add_option("--out-weights", ta.out_weights, "Output weights container")->required();
  tr->add_option("--report", ta.report, "Training report (.json or .csv)");
  tr->add_option("--preset", ta.preset, "Model size (overrides the config file; default full)")->check(CLI::IsMember({"full", "desk"}));
  tr->add_option("--model", ta.model, "Architecture")->check(CLI::IsMember({"clarae", "baseline"}));
  tr->add_option("--seed", ta.seed, "Training seed");
  tr->add_option("--epochs", ta.epochs, "Maximum epochs");
  tr->add_option("--batch", ta.batch, "Batch size");
  tr->add_option("--max-seconds", ta.max_seconds, "Wall-clock cap");
  tr->add_flag("--denoising", ta.denoising, "Train noisy input against clean target");
  tr->add_flag("--quiet", ta.quiet, "No per-epoch log");

  DenoiseArgs da;
  auto* dn = app.add_subcommand("denoise", "Reconstruct signals, optionally after adding noise");
  dn->add_option("--weights", da.weights)->required()->check(CLI::ExistingFile);
  dn->add_option("--input", da.input, "Signal CSV")->required()->check(CLI::ExistingFile);
  dn->add_option("--out", da.out, "Denoised CSV")->required();
  dn->add_option("--snr", da.snr, "Inject white noise at this SNR (dB) first");
  dn->add_option("--seed", da.seed, "Noise seed; row i uses seed + i");
  dn->add_option("--noisy-out", da.noisy_out, "Also write the model inputs");

  SweepArgs sa;
  auto* sw = app.add_subcommand("sweep", "Reconstruction error across input SNR levels");
  sw->add_option("--weights", sa.weights)->required()->check(CLI::ExistingFile);
  sw->add_option("--data", sa.data)->required()->check(CLI::ExistingFile);
  sw->add_option("--out", sa.out, "Report (.json or .csv)")->required();
  sw->add_option("--snr-min", sa.snr_min);
  sw->add_option("--snr-max", sa.snr_max);
  sw->add_option("--step", sa.step);
  sw->add_option("--seed", sa.seed);
  sw->add_option("--rows", sa.rows, "auto: test patients when labeled, else all")
      ->check(CLI::IsMember({"auto", "test", "all"}));

  ClassifyArgs ca;
  auto* cl = app.add_subcommand("classify", "Rhythm classification from latent features");
  cl->add_option("--weights", ca.weights)->required()->check(CLI::ExistingFile);
  cl->add_option("--data", ca.data)->required()->check(CLI::ExistingFile);
  auto* clf_out = cl->add_option("--clf-out", ca.clf_out, "Train a classifier and save it here");
  auto* clf_in = cl->add_option("--clf-in", ca.clf_in, "Apply a saved classifier")->check(CLI::ExistingFile);
  clf_out->excludes(clf_in);
  cl->add_option("--report", ca.report, "Classification report (.json or .csv)");
  cl->add_option("--latents-out", ca.latents_out, "Latent matrix CSV of the evaluated rows");
  cl->add_option("--seed", ca.seed);
  cl->add_option("--epochs", ca.epochs);
  cl->add_flag("--quiet", ca.quiet);

  ServeArgs va;
  auto* sv = app.add_subcommand("serve", "HTTP API and static UI");
  sv->add_option("--weights", va.weights)->check(CLI::ExistingFile);
  sv->add_option("--port", va.port, "Port (CLARAE_PORT overrides)");
  sv->add_option("--host", va.host);
  sv->add_option("--static-dir", va.static_dir);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_generate(ga);
    if (tr->parsed()) return cmd_train(ta);
    if (dn->parsed()) return cmd_denoise(da);
    if (sw->parsed()) return cmd_sweep(sa);
    if (cl->parsed()) return cmd_classify(ca);
    if (sv->parsed()) return cmd_serve(va);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
