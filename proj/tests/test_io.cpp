#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "clarae/io.hpp"

using namespace clarae;
using namespace clarae::io;

namespace {

ClaraeConfig tiny() {
  ClaraeConfig c;
  c.input_len = 40;
  c.kernel = 3;
  c.block1_channels = 2;
  c.block2_channels = 2;
  c.dense_hidden = 5;
  c.latent_dim = 4;
  c.decoder_stage_channels = {2, 2};
  return c;
}

std::uint32_t le32(const std::string& b, std::size_t at) {
  return std::uint32_t(std::uint8_t(b[at])) | std::uint32_t(std::uint8_t(b[at + 1])) << 8 |
         std::uint32_t(std::uint8_t(b[at + 2])) << 16 | std::uint32_t(std::uint8_t(b[at + 3])) << 24;
}

void poke_u32(std::string& b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + std::size_t(i)] = char((v >> (8 * i)) & 0xff);
}

std::vector<signals::EgmRecord> random_rows(std::size_t n, std::size_t len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<signals::EgmRecord> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    rows[i].patient_id = int(i % 4);
    rows[i].rhythm = static_cast<signals::Rhythm>(i % 3);
    rows[i].polarity = i % 2 ? signals::Polarity::bipolar : signals::Polarity::unipolar;
    for (std::size_t k = 0; k < len; ++k) rows[i].samples.push_back(u(rng));
  }
  return rows;
}

}  // namespace

TEST(Container, LayoutIsReadableByHand) {
  Clarae<float> m(tiny(), 5);
  const auto bytes = encode_container(to_container(m, {{"note", "x"}}));
  ASSERT_EQ(bytes.substr(0, 4), "CLRW");
  EXPECT_EQ(le32(bytes, 4), 1u);
  const std::size_t hlen = le32(bytes, 8);
  auto h = json::parse(bytes.substr(12, hlen));
  EXPECT_EQ(h["kind"], "clarae");
  EXPECT_EQ(h["metadata"]["note"], "x");
  EXPECT_EQ(h["config"]["input_len"], 40);

  const auto state = m.state();
  ASSERT_EQ(h["tensors"].size(), state.size());
  std::size_t prev_end = 12 + hlen;
  for (std::size_t i = 0; i < state.size(); ++i) {
    const auto& e = h["tensors"][i];
    EXPECT_EQ(e["name"], state[i].name);
    EXPECT_EQ(e["dtype"], 0);
    EXPECT_EQ(e["rank"], state[i].tensor.rank());
    const std::size_t off = e["offset"];
    EXPECT_EQ(off % 8, 0u);
    EXPECT_GE(off, prev_end);
    const auto vals = state[i].tensor.values();
    ASSERT_LE(off + 4 * vals.size(), bytes.size());
    for (std::size_t k = 0; k < vals.size(); ++k) {
      float f;
      std::uint32_t u = le32(bytes, off + 4 * k);
      std::memcpy(&f, &u, 4);
      EXPECT_EQ(std::bit_cast<std::uint32_t>(f), std::bit_cast<std::uint32_t>(vals[k]));
    }
    prev_end = off + 4 * vals.size();
  }
  EXPECT_EQ(prev_end, bytes.size());
}

TEST(Container, RoundtripIsBitIdentical) {
  Clarae<float> m(ClaraeConfig::desk(), 11);
  const auto first = encode_container(to_container(m, {{"epochs", 3}, {"val", 0.1}}));
  const auto c = decode_container(first);
  const auto again = encode_container(c);
  EXPECT_EQ(first, again);

  auto loaded = load_clarae(c);
  EXPECT_EQ(encode_container(to_container(loaded, c.metadata)), first);
  std::vector<float> x(1250);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(0.01f * float(i));
  m.set_mode(Mode::eval);
  EXPECT_EQ(m.reconstruct(x), loaded.reconstruct(x));
  EXPECT_EQ(model_id(first), model_id(again));
}

TEST(Container, FileRoundtrip) {
  const auto path = std::filesystem::temp_directory_path() / "clarae_io_test.clrw";
  MlpClassifier<float> clf(6, 4, 2);
  save_container(path, to_container(clf));
  auto back = load_classifier(load_container(path));
  std::vector<float> z = {0.1f, -0.2f, 0.3f, 0.0f, 0.5f, -0.9f};
  EXPECT_EQ(clf.probabilities(z), back.probabilities(z));
  std::filesystem::remove(path);
}

TEST(Container, BaselineRoundtrip) {
  BaselineDae<float> m(tiny(), 3);
  const auto bytes = encode_container(to_container(m));
  auto back = load_baseline(decode_container(bytes));
  EXPECT_EQ(encode_container(to_container(back)), bytes);
}

TEST(Container, ModelIdTracksContent) {
  Clarae<float> a(tiny(), 1), b(tiny(), 2);
  EXPECT_NE(model_id(encode_container(to_container(a))), model_id(encode_container(to_container(b))));
  EXPECT_EQ(model_id(encode_container(to_container(a))).size(), 16u);
}

TEST(Container, RejectsCorruptFiles) {
  Clarae<float> m(tiny(), 5);
  const auto good = encode_container(to_container(m));

  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_container(bad_magic), DataError);

  auto bad_version = good;
  poke_u32(bad_version, 4, 2);
  EXPECT_THROW(decode_container(bad_version), DataError);

  EXPECT_THROW(decode_container(good.substr(0, good.size() - 4)), DataError);
  EXPECT_THROW(decode_container(good.substr(0, 10)), DataError);

  auto long_header = good;
  poke_u32(long_header, 8, std::uint32_t(good.size()));
  EXPECT_THROW(decode_container(long_header), DataError);

  auto garbage_header = good;
  garbage_header[12] = '[';
  EXPECT_THROW(decode_container(garbage_header), DataError);
}

TEST(Container, RejectsOutOfRangeOffsets) {
  Container c;
  c.kind = "mlp";
  c.config = {{"latent_dim", 2}, {"hidden", 1}};
  c.tensors.push_back({"t", {2}, {1.0f, 2.0f}});
  auto bytes = encode_container(c);
  const std::size_t hlen = le32(bytes, 8);
  auto h = json::parse(bytes.substr(12, hlen));
  h["tensors"][0]["offset"] = bytes.size();
  std::string header = h.dump();
  header.resize(hlen, ' ');
  ASSERT_EQ(header.size(), hlen);
  auto tampered = bytes.substr(0, 12) + header + bytes.substr(12 + hlen);
  EXPECT_THROW(decode_container(tampered), DataError);
}

TEST(Container, KindAndShapeChecks) {
  Clarae<float> m(tiny(), 5);
  auto c = decode_container(encode_container(to_container(m)));
  EXPECT_THROW(load_baseline(c), DataError);
  EXPECT_THROW(load_classifier(c), DataError);
  c.config["dense_hidden"] = 6;
  EXPECT_THROW(load_clarae(c), DataError);
  Container mismatch;
  mismatch.tensors.push_back({"t", {3}, {1.0f}});
  EXPECT_THROW(encode_container(mismatch), ShapeError);
}

TEST(Configs, JsonRoundtrip) {
  EXPECT_EQ(clarae_config_from_json(to_json(ClaraeConfig::desk())), ClaraeConfig::desk());
  auto partial = clarae_config_from_json(json{{"latent_dim", 32}}, ClaraeConfig::desk());
  EXPECT_EQ(partial.latent_dim, 32u);
  EXPECT_EQ(partial.block1_channels, 16u);
  EXPECT_THROW(clarae_config_from_json(json{{"latnet_dim", 32}}), DataError);
  EXPECT_THROW(clarae_config_from_json(json{{"kernel", 4}}), DataError);

  training::TrainConfig t;
  t.batch_size = 64;
  t.target = training::TargetMode::denoising;
  auto tb = train_config_from_json(to_json(t));
  EXPECT_EQ(tb.batch_size, 64u);
  EXPECT_EQ(tb.target, training::TargetMode::denoising);
  EXPECT_THROW(train_config_from_json(json{{"target", "both"}}), DataError);

  signals::CohortConfig cc;
  cc.n_patients = 7;
  cc.width_ms = {12.0, 20.0};
  auto cb = cohort_config_from_json(to_json(cc));
  EXPECT_EQ(to_json(cb), to_json(cc));
  EXPECT_THROW(cohort_config_from_json(json{{"width_ms", 3}}), DataError);
}

TEST(SignalFile, RoundtripPreservesEveryBit) {
  auto rows = random_rows(6, 50, 3);
  rows[0].samples[0] = 0.1f;
  rows[0].samples[1] = std::nextafter(1.0f, 0.0f);
  rows[0].samples[2] = -1.0f;
  rows[0].samples[3] = 1e-30f;
  rows[0].samples[4] = std::numeric_limits<float>::denorm_min();
  for (bool labeled : {false, true}) {
    for (bool header : {false, true}) {
      auto t = parse_signals(format_signals(rows, labeled, header));
      EXPECT_EQ(t.labeled, labeled);
      EXPECT_EQ(t.len, 50u);
      ASSERT_EQ(t.rows.size(), rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t k = 0; k < 50; ++k) {
          EXPECT_EQ(std::bit_cast<std::uint32_t>(t.rows[i].samples[k]),
                    std::bit_cast<std::uint32_t>(rows[i].samples[k]));
        }
        if (labeled) {
          EXPECT_EQ(t.rows[i].patient_id, rows[i].patient_id);
          EXPECT_EQ(t.rows[i].rhythm, rows[i].rhythm);
          EXPECT_EQ(t.rows[i].polarity, rows[i].polarity);
        }
      }
    }
  }
}

TEST(SignalFile, WrongArityNamesTheLine) {
  const std::string text = "a,b,c\n1,2,3\n\n4,5\n";
  try {
    parse_signals(text);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_signals("1,2,3\n", 4), DataError);
  EXPECT_NO_THROW(parse_signals("1,2,3,4\n", 4));
}

TEST(SignalFile, RejectsNonFiniteAndBadLabels) {
  EXPECT_THROW(parse_signals("1,nan,3\n"), DataError);
  EXPECT_THROW(parse_signals("1,inf,3\n"), DataError);
  EXPECT_THROW(parse_signals("1,x,3\n"), DataError);
  EXPECT_THROW(parse_signals("patient_id,rhythm,polarity,s0\n1,VT,bipolar,0.5\n"), DataError);
  EXPECT_THROW(parse_signals(""), DataError);
  EXPECT_THROW(parse_signals("s0,s1\n"), DataError);
}

TEST(SignalFile, AcceptsCrlfAndSpaces) {
  auto t = parse_signals("s0,s1\r\n 0.5 , -0.25\r\n1,2\r\n");
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0].samples[1], -0.25f);
  auto l = parse_signals("3,SR600,bipolar,0.5,0.25\n");
  EXPECT_TRUE(l.labeled);
  EXPECT_EQ(l.rows[0].patient_id, 3);
  EXPECT_EQ(l.rows[0].rhythm, signals::Rhythm::sr600);
}

TEST(SignalFile, SidecarCarriesSplit) {
  auto rows = random_rows(8, 4, 1);
  signals::DatasetSplit s{{0, 1}, {2}, {3}};
  auto j = cohort_sidecar(rows, signals::CohortConfig{}, signals::PreprocessParams{}, s);
  EXPECT_EQ(j["count"], 8);
  EXPECT_EQ(j["records"][2]["rhythm"], "SR600");
  auto back = split_from_sidecar(json::parse(j.dump()));
  EXPECT_EQ(back.train, s.train);
  EXPECT_EQ(back.test, s.test);
  EXPECT_EQ(preprocess_from_json(j["preprocess"]).clip_hi, 1.0);
}

TEST(Reports, CsvColumns) {
  eval::SweepReport sr;
  sr.levels.push_back({-5.0, 0.5, 0.4, 1.0, 1.0, 3});
  EXPECT_EQ(sweep_csv(sr), "snr_db,mean_mse,median_mse,n\n-5,0.5,0.4,3\n");

  eval::LatentMatrix z{2, 64, std::vector<float>(128, 0.25f)};
  auto rows = random_rows(2, 1, 0);
  const auto csv = latents_csv(z, rows);
  const auto header = csv.substr(0, csv.find('\n'));
  EXPECT_EQ(header.substr(0, 6), "l0,l1,");
  EXPECT_NE(header.find(",l63,label,patient_id"), std::string::npos);
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), 65);

  training::TrainReport tr;
  tr.epochs.push_back({1, 0.5, 0.25, 1e-3, 2.0});
  EXPECT_EQ(train_report_csv(tr), "epoch,train_loss,val_loss,lr,seconds\n1,0.5,0.25,0.001,2\n");
  EXPECT_EQ(to_json(tr)["epochs"][0]["val_loss"], 0.25);

  auto cr = eval::f1_per_class(std::vector<int>{0, 1, 2}, std::vector<int>{0, 1, 2});
  const auto cj = to_json(cr);
  EXPECT_EQ(cj["classes"].size(), 3u);
  EXPECT_EQ(cj["macro_f1"], 1.0);
  EXPECT_NE(classification_csv(cr).find("macro,,,,3,1"), std::string::npos);
}
