// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
// The training criteria share one synthetic cohort and one reconstruction
// model. The baseline trains on the same split; the denoising model gets a
// cohort of its own, twice the size.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <functional>
#include <random>
#include <thread>

#include "clarae/service.hpp"
#include "support/grad_cases.hpp"
#include "support/reference_adam.hpp"

using namespace clarae;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kPatients = 30;
constexpr std::size_t kDenoisePatients = 60;  // twice the data; 30 patients overfit before the gain appears
constexpr std::size_t kPerPatient = 100;
constexpr std::uint64_t kCohortSeed = 7;
constexpr std::size_t kReconEpochs = 60;
constexpr std::size_t kDenoiseEpochs = 200;
constexpr double kCpuBudgetSeconds = 30.0 * 60.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double cpu_seconds() { return double(std::clock()) / CLOCKS_PER_SEC; }

void log_epoch(const char* tag, const training::EpochRecord& r) {
  std::fprintf(stderr, "  [%s] epoch %zu train %.5f val %.5f lr %g %.0fs\n", tag, r.epoch, r.train_loss, r.val_loss,
               r.lr, r.seconds);
}

struct Cohort {
  std::vector<signals::EgmRecord> train, val, test;
  signals::SignalSet tr, va, te;
};

Cohort make_cohort(std::size_t patients) {
  signals::CohortConfig cfg;
  cfg.n_patients = patients;
  cfg.signals_per_patient = kPerPatient;
  cfg.seed = kCohortSeed;
  auto recs = signals::generate_cohort(cfg);
  const auto split = signals::split_patientwise(recs, {0.8, 0.1, 0.1}, kCohortSeed);
  Cohort out;
  out.train = signals::select(recs, split.train);
  const auto pre = signals::fit_preprocess(out.train);
  signals::apply_preprocess(out.train, pre);
  out.val = signals::select(recs, split.val);
  signals::apply_preprocess(out.val, pre);
  out.test = signals::select(recs, split.test);
  signals::apply_preprocess(out.test, pre);
  out.tr = signals::stack(out.train);
  out.va = signals::stack(out.val);
  out.te = signals::stack(out.test);
  return out;
}

const Cohort& cohort() {
  static const Cohort c = make_cohort(kPatients);
  return c;
}

training::TrainConfig desk_train_config() {
  training::TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.seed = 1;
  return cfg;
}

struct ReconRun {
  Clarae<float> model{ClaraeConfig::desk(), 1};
  training::TrainReport report;
  double cpu = 0.0;
};

// Trained once, then shared by the latent, classification and comparison checks.
ReconRun& recon() {
  static ReconRun run = [] {
    ReconRun r;
    const auto& c = cohort();
    auto cfg = desk_train_config();
    cfg.max_epochs = kReconEpochs;
    cfg.max_seconds = kCpuBudgetSeconds;
    const double t0 = cpu_seconds();
    r.report = training::fit(r.model, c.tr, c.va, cfg, [](const auto& e) { log_epoch("recon", e); });
    r.cpu = cpu_seconds() - t0;
    return r;
  }();
  return run;
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_op;
  std::size_t checks = 0;
  for (const auto& c : testing::cases::all()) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const double e = c.run(seed);
      ++checks;
      if (!(e <= worst) || std::isnan(e)) {
        worst = e;
        worst_op = c.op;
      }
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst < 1e-3 && secs < 120.0,
          fmt("%zu ops x 20 configs, worst rel err %.2e (%s), %.1fs", testing::cases::all().size(), worst,
              worst_op.c_str(), secs)};
}

Outcome architecture() {
  const ClaraeConfig cfg;
  Clarae<float> model(cfg, 0);
  const auto pc = param_count(model.param_groups());
  const double share = pc.top2_dense_share();
  const std::string ratio = fmt("%.1f", cfg.compression_ratio());
  const bool ok = pc.total >= 20'000'000 && pc.total <= 22'500'000 && share > 0.95 && ratio == "19.5";
  return {ok, fmt("%zu params, top-2 dense share %.4f, compression %s:1", pc.total, share, ratio.c_str())};
}

Outcome latent_bounds() {
  auto check = [](const Clarae<float>& m) {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    std::normal_distribution<float> g(0.0f, 1.0f);
    const std::size_t len = m.config().input_len, batch = 250;
    float lo = 0.0f, hi = 0.0f;
    std::size_t outside = 0;
    for (std::size_t first = 0; first < 10'000; first += batch) {
      std::vector<float> x(batch * len);
      // Uniform, Gaussian and heavily scaled inputs in rotation.
      const float scale = (first / batch) % 3 == 2 ? 1000.0f : 1.0f;
      for (auto& v : x) v = (first / batch) % 3 == 0 ? u(rng) : scale * g(rng);
      const auto z = m.infer_encode(Tensor<float>({batch, 1, len}, std::move(x)));
      for (float v : z.values()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        if (!(v > -1.0f && v < 1.0f)) ++outside;
      }
    }
    return std::tuple{outside, lo, hi};
  };
  const Clarae<float> fresh(ClaraeConfig::desk(), 5);
  const auto [o1, lo1, hi1] = check(fresh);
  const auto [o2, lo2, hi2] = check(recon().model);
  return {o1 == 0 && o2 == 0, fmt("random-init range [%.7f, %.7f], trained range [%.7f, %.7f], %zu outside",
                                  lo1, hi1, lo2, hi2, o1 + o2)};
}

Outcome noise_exactness() {
  const auto& te = cohort().te;
  double worst = 0.0;
  const auto levels = eval::sweep_levels();
  for (double db : levels) {
    for (std::size_t i = 0; i < te.rows; ++i) {
      const auto n = signals::add_noise_at_snr<float>(te.row(i), {db, eval::noise_seed(3, i, db)});
      worst = std::max(worst, std::abs(signals::snr_db<float>(te.row(i), n.noise) - db));
    }
  }
  return {levels.size() == 21 && worst < 1e-6,
          fmt("%zu levels x %zu signals, worst deviation %.2e dB", levels.size(), te.rows, worst)};
}

Outcome desk_reconstruction() {
  const auto& r = recon();
  const auto& c = cohort();
  const double mse = training::evaluate_mse(r.model, c.te, desk_train_config());
  const bool ok = c.tr.rows + c.va.rows + c.te.rows >= 3000 && mse <= 0.02 && r.cpu <= kCpuBudgetSeconds;
  return {ok, fmt("%zu signals, test MSE %.5f after %zu epochs (%s), %.1f CPU-min", c.tr.rows + c.va.rows + c.te.rows,
                  mse, r.report.epochs.size(), r.report.stop_reason.c_str(), r.cpu / 60.0)};
}

Outcome denoising_gain() {
  const auto c = make_cohort(kDenoisePatients);
  Clarae<float> model(ClaraeConfig::desk(), 1);
  auto cfg = desk_train_config();
  cfg.target = training::TargetMode::denoising;
  cfg.max_epochs = kDenoiseEpochs;
  const auto rep = training::fit(model, c.tr, c.va, cfg, [](const auto& e) { log_epoch("denoise", e); });
  const auto sweep = eval::snr_sweep(model, c.te, 5);
  std::vector<double> x, y;
  bool gain = true;
  std::string worst;
  double worst_margin = 1e300;
  for (const auto& l : sweep.levels) {
    x.push_back(l.snr_db);
    y.push_back(l.mean_mse);
    std::fprintf(stderr, "  [denoise] input %5.1f dB  median output %.2f dB  mean MSE %.5f\n", l.snr_db,
                 l.median_output_snr, l.mean_mse);
    if (l.snr_db <= 5.0) {
      const double margin = l.median_output_snr - l.snr_db;
      if (margin < worst_margin) {
        worst_margin = margin;
        worst = fmt("%.0f dB in -> %.2f dB out", l.snr_db, l.median_output_snr);
      }
      gain = gain && margin > 0.0;
    }
  }
  const double rho = eval::spearman(x, y);
  return {gain && rho <= -0.9, fmt("%zu signals, %zu epochs, tightest level %s, Spearman %.4f",
                                   c.tr.rows + c.va.rows + c.te.rows, rep.epochs.size(), worst.c_str(), rho)};
}

Outcome latent_classification() {
  const auto& c = cohort();
  const auto& m = recon().model;
  const auto ztr = eval::extract_latents(m, c.tr), zva = eval::extract_latents(m, c.va);
  const auto zte = eval::extract_latents(m, c.te);
  MlpClassifier<float> clf(m.config().latent_dim, 32, 1);
  auto cfg = desk_train_config();
  cfg.max_epochs = 300;
  const auto ltr = signals::labels(c.train), lva = signals::labels(c.val), lte = signals::labels(c.test);
  training::fit_classifier(clf, ztr.data, ltr, zva.data, lva, cfg);
  std::vector<int> preds(zte.rows);
  for (std::size_t i = 0; i < zte.rows; ++i) preds[i] = clf.predict(zte.row(i));
  const auto rep = eval::f1_per_class(preds, lte);
  return {rep.macro_f1 >= 0.90, fmt("macro F1 %.4f (AF %.3f, SR300 %.3f, SR600 %.3f) on %zu test signals",
                                    rep.macro_f1, rep.f1[0], rep.f1[1], rep.f1[2], rep.n)};
}

template <class Model>
double median_artifact_index(const Model& m, const signals::SignalSet& s) {
  const auto y = m.infer(Tensor<float>({s.rows, 1, s.len}, s.data));
  std::vector<double> ai(s.rows);
  for (std::size_t i = 0; i < s.rows; ++i) {
    const std::vector<float> out(y.data() + i * s.len, y.data() + (i + 1) * s.len);
    const std::vector<float> ref(s.row(i).begin(), s.row(i).end());
    ai[i] = eval::artifact_index(out, ref);
  }
  return eval::median(ai);
}

Outcome checkerboard() {
  const auto& c = cohort();
  const auto& r = recon();
  BaselineDae<float> base(ClaraeConfig::desk(), 1);
  auto cfg = desk_train_config();
  cfg.max_epochs = r.report.epochs.size();
  training::fit(base, c.tr, c.va, cfg, [](const auto& e) { log_epoch("baseline", e); });
  const double a = median_artifact_index(r.model, c.te), b = median_artifact_index(base, c.te);
  return {a <= b, fmt("median artifact index %.3e (resize-conv) vs %.3e (transposed), %zu epochs each", a, b,
                      cfg.max_epochs)};
}

Outcome optimizer_suite() {
  std::vector<std::string> failed;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    const double lr = std::uniform_real_distribution<double>(1e-4, 1e-1)(rng);
    auto p = Tensor<double>::scalar(g(rng), true);
    testing::ReferenceAdam ref{lr, 0.9, 0.999, 1e-8};
    double theta = p.item();
    training::Adam<double> opt({p});
    for (int step = 0; step < 100; ++step) {
      const double grad = g(rng) + 0.1 * theta;
      p.ensure_grad()[0] = grad;
      opt.step(lr);
      theta = ref.step(theta, grad);
      worst = std::max(worst, std::abs(p.item() - theta));
    }
  }
  if (!(worst <= 1e-12)) failed.push_back("adam");

  // Halving lands on exactly the (patience+1)-th stagnant epoch.
  for (std::size_t patience = 1; patience <= 8; ++patience) {
    training::PlateauScheduler s(0.5, patience, 1e-8);
    double lr = s.step(1.0, 1e-3);
    std::size_t bad = 0;
    while (lr == 1e-3 && bad < 100) {
      lr = s.step(1.0, lr);
      ++bad;
    }
    if (bad != patience + 1 || lr != 5e-4) failed.push_back(fmt("scheduler patience %zu", patience));
  }
  training::PlateauScheduler floor(0.5, 5, 1e-8);
  double lr = 1e-3;
  for (int i = 0; i < 400; ++i) lr = floor.step(1.0, lr);
  if (lr != 1e-8) failed.push_back("scheduler floor");

  training::EarlyStopping stop(11, 1e-6);
  stop.observe(1.0);
  std::size_t bad = 0;
  while (!stop.should_stop() && bad < 100) {
    stop.observe(1.0 - 9e-7);  // less than min_delta below the best: stagnant
    ++bad;
  }
  if (bad != 11) failed.push_back(fmt("early stop after %zu", bad));
  training::EarlyStopping moving(11, 1e-6);
  for (int i = 0; i < 100; ++i) {
    moving.observe(1.0 - 2e-6 * i);
    if (moving.should_stop()) {
      failed.push_back("early stop on improvement");
      break;
    }
  }

  std::string detail = fmt("adam worst |diff| %.1e", worst);
  for (const auto& f : failed) detail += "; failed " + f;
  return {failed.empty(), detail};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CLARAE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome format_roundtrips() {
  const auto& c = cohort();
  const auto& model = recon().model;
  std::vector<std::string> failed;

  const auto bytes = io::encode_container(io::to_container(model));
  const auto back = io::decode_container(bytes);
  if (io::encode_container(back) != bytes) failed.push_back("container bytes");
  const auto reloaded = io::load_clarae(back);
  const auto a = model.state(), b = reloaded.state();
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i) {
    same = a[i].name == b[i].name && a[i].tensor.shape() == b[i].tensor.shape() &&
           std::memcmp(a[i].tensor.data(), b[i].tensor.data(), a[i].tensor.size() * sizeof(float)) == 0;
  }
  if (!same) failed.push_back("container tensors");

  const auto text = io::format_signals(c.test, true);
  const auto table = io::parse_signals(text, c.te.len);
  bool exact = table.rows.size() == c.test.size();
  for (std::size_t i = 0; exact && i < c.test.size(); ++i) {
    exact = std::memcmp(table.rows[i].samples.data(), c.test[i].samples.data(), c.te.len * sizeof(float)) == 0 &&
            table.rows[i].rhythm == c.test[i].rhythm && table.rows[i].patient_id == c.test[i].patient_id;
  }
  if (!exact) failed.push_back("signal file");

  // CLI and HTTP denoise on the same rows, noise level and seeds.
  const fs::path dir = fs::temp_directory_path() / "clarae_acceptance";
  fs::create_directories(dir);
  const std::vector<signals::EgmRecord> rows(c.test.begin(), c.test.begin() + 8);
  io::write_signals(dir / "in.csv", rows, true);
  io::write_file(dir / "m.clrw", bytes);
  const int rc = run_cli("denoise --weights " + (dir / "m.clrw").string() + " --input " + (dir / "in.csv").string() +
                         " --snr 5 --seed 11 --out " + (dir / "out.csv").string());
  double worst = 0.0;
  if (rc != 0) {
    failed.push_back(fmt("cli exit %d", rc));
  } else {
    const auto cli = io::read_signals(dir / "out.csv", c.te.len);
    service::Server server;
    server.set_model(service::load_model(bytes));
    const int port = server.bind_any();
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    httplib::Client client("127.0.0.1", port);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const json body = {{"signal", rows[i].samples}, {"snr_db", 5.0}, {"seed", 11 + i}};
      const auto r = client.Post("/api/denoise", body.dump(), "application/json");
      if (!r || r->status != 200) {
        failed.push_back("http status");
        break;
      }
      const auto got = json::parse(r->body)["denoised"].get<std::vector<float>>();
      for (std::size_t k = 0; k < got.size(); ++k) {
        worst = std::max(worst, double(std::abs(got[k] - cli.rows[i].samples[k])));
      }
    }
    server.stop();
    t.join();
    if (!(worst <= 1e-6)) failed.push_back("cli vs http");
  }
  fs::remove_all(dir);

  std::string detail = fmt("container %zu bytes, %zu signal rows, cli vs http max |diff| %.1e", bytes.size(),
                           c.test.size(), worst);
  for (const auto& f : failed) detail += "; failed " + f;
  return {failed.empty(), detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"architecture accounting", architecture},
      {"latent boundedness", latent_bounds},
      {"noise-injection exactness", noise_exactness},
      {"desk-scale reconstruction", desk_reconstruction},
      {"denoising gain", denoising_gain},
      {"latent classification", latent_classification},
      {"checkerboard comparison", checkerboard},
      {"optimizer/scheduler/early-stop", optimizer_suite},
      {"format roundtrips", format_roundtrips},
  };
  // ctest hides the output of passing tests, so the lines also go to a file
  // in the working directory.
  std::FILE* log = std::fopen("acceptance_results.txt", "w");
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    const std::string line = fmt("criterion %zu %-32s %s  ", i + 1, criteria[i].first.c_str(),
                                 o.pass ? "PASS" : "FAIL") + o.detail + "\n";
    std::fputs(line.c_str(), stdout);
    std::fflush(stdout);
    if (log) {
      std::fputs(line.c_str(), log);
      std::fflush(log);
    }
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  if (log) {
    std::fprintf(log, "%d of %zu criteria failed\n", failures, criteria.size());
    std::fclose(log);
  }
  return failures == 0 ? 0 : 1;
}
