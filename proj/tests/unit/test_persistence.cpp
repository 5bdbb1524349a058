#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "dadee/checkpoint.hpp"
#include "dadee/config.hpp"
#include "dadee/errors.hpp"
#include "dadee/pipeline.hpp"

using namespace dadee;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dadee-test-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

const char* kTinyConfig = R"({
  "encoder": {"num_layers": 2, "d_model": 8, "n_heads": 2, "d_ff": 12, "max_seq_len": 32},
  "source_training": {"epochs": 1, "lr": 0.001},
  "adaptation": {"epochs": 1, "disc_hidden": 8},
  "data": {"synthetic": {"shift": 0.9, "source_train": 64, "source_dev": 40, "source_test": 40,
                         "target_train": 64, "target_test": 40}},
  "seeds": [3]
})";

EncoderBundle frozen_model(std::uint64_t seed) {
  EncoderConfig c;
  c.num_layers = 3;
  c.d_model = 8;
  c.d_ff = 12;
  c.vocab_size = 20;
  c.max_seq_len = 10;
  SeededRng rng(seed);
  auto b = init_encoder<float>(c, rng);
  b.freeze();
  return b;
}

bool bitwise_equal(const EncoderBundle& a, const EncoderBundle& b) {
  const auto na = a.named_tensors(), nb = b.named_tensors();
  if (na.size() != nb.size()) return false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    if (na[i].first != nb[i].first || na[i].second.shape() != nb[i].second.shape()) return false;
    const auto da = na[i].second.data(), db = nb[i].second.data();
    for (std::size_t k = 0; k < da.size(); ++k)
      if (std::bit_cast<std::uint32_t>(da[k]) != std::bit_cast<std::uint32_t>(db[k])) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("base64 test vectors") {
  CHECK(base64_encode("") == "");
  CHECK(base64_encode("f") == "Zg==");
  CHECK(base64_encode("fo") == "Zm8=");
  CHECK(base64_encode("foo") == "Zm9v");
  CHECK(base64_encode("foobar") == "Zm9vYmFy");
  for (const std::string s : {"", "f", "fo", "foo", "foob", "fooba", "foobar"}) CHECK(base64_decode(base64_encode(s)) == s);
  CHECK_THROWS_AS(base64_decode("abc"), ValidationError);
}

TEST_CASE("sha256 test vectors") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("checkpoint round trip is bitwise") {
  auto model = frozen_model(2);
  auto w = model.blocks[0].ff_in;
  w.mutable_data()[0] = -0.0f;
  w.mutable_data()[1] = std::numeric_limits<float>::denorm_min();
  w.mutable_data()[2] = std::numeric_limits<float>::max();
  const Provenance prov{Phase::kAdapted, 17, "digest"};
  const std::string text = checkpoint_to_json(model, prov);
  const Checkpoint back = checkpoint_from_json(text);
  CHECK(bitwise_equal(model, back.bundle));
  CHECK(back.bundle.config == model.config);
  CHECK(back.bundle.frozen);
  CHECK(back.provenance.phase == Phase::kAdapted);
  CHECK(back.provenance.seed == 17);
  CHECK(back.provenance.config_digest == "digest");
  CHECK(checkpoint_to_json(back.bundle, back.provenance) == text);
}

TEST_CASE("checkpoint document layout") {
  const std::string text = checkpoint_to_json(frozen_model(1), Provenance{Phase::kSourceTrained, 1, "d"});
  CHECK(text.find("\"format_version\": 1") != std::string::npos);
  CHECK(text.find("\"dtype\": \"f32\"") != std::string::npos);
  CHECK(text.find("\"phase\": \"source-trained\"") != std::string::npos);
  CHECK(text.find("\"blocks.0.attn.bk\"") < text.find("\"embedding.token\""));
  CHECK(text.find("\"embedding.token\"") < text.find("\"heads.0.bias\""));
}

TEST_CASE("checkpoint loading rejects damaged documents") {
  const std::string good = checkpoint_to_json(frozen_model(1), Provenance{Phase::kSourceTrained, 1, "d"});
  auto replaced = [&](const std::string& from, const std::string& to) {
    std::string s = good;
    s.replace(s.find(from), from.size(), to);
    return s;
  };
  CHECK_THROWS_AS(checkpoint_from_json(replaced("\"format_version\": 1", "\"format_version\": 2")), ValidationError);
  CHECK_THROWS_AS(checkpoint_from_json(replaced("\"vocab_size\": 20", "\"vocab_size\": 21")), ValidationError);
  CHECK_THROWS_AS(checkpoint_from_json(replaced("\"f32\"", "\"f64\"")), ValidationError);
  CHECK_THROWS_AS(checkpoint_from_json(replaced("\"source-trained\"", "\"sideways\"")), ValidationError);
  CHECK_THROWS_AS(checkpoint_from_json("{"), ValidationError);
  auto open = frozen_model(1);
  open.frozen = false;
  const fs::path dir = scratch("ckpt");
  CHECK_THROWS_AS(save_checkpoint(dir / "x.json", open, {}), ValidationError);
}

TEST_CASE("checkpoint file names") {
  CHECK(checkpoint_file_name(Phase::kSourceTrained, 7) == "source-trained-seed0007.ckpt.json");
  CHECK(checkpoint_file_name(Phase::kAdapted, 12345) == "adapted-seed12345.ckpt.json");
  CHECK(parse_phase("adapted") == Phase::kAdapted);
  CHECK_THROWS_AS(parse_phase("final"), ValidationError);
}

TEST_CASE("config parsing, defaults and round trip") {
  const auto c = config_from_json(kTinyConfig);
  CHECK(c.encoder.num_layers == 2);
  CHECK(c.encoder.block_kind == BlockKind::kTransformer);
  CHECK(c.adapt.kd_weight == 1.0);
  CHECK(c.adapt.disc_hidden == 8);
  CHECK(c.alpha_space == std::vector<double>{0.8, 0.85, 0.9, 0.95, 1.0});
  REQUIRE(c.data.synthetic.has_value());
  CHECK(c.data.synthetic->shift == 0.9);
  CHECK(c.data.synthetic->indicative_rate == SyntheticShiftSpec{}.indicative_rate);
  const auto again = config_from_json(config_to_json(c));
  CHECK(config_to_json(again) == config_to_json(c));
  CHECK(config_digest(again) == config_digest(c));
}

TEST_CASE("config digest ignores seeds and output directory only") {
  auto a = config_from_json(kTinyConfig);
  auto b = a;
  b.seeds = {9, 10};
  b.output_dir = "elsewhere";
  CHECK(config_digest(a) == config_digest(b));
  b.adapt.kd_weight = 100.0;
  CHECK(config_digest(a) != config_digest(b));
  CHECK(config_digest(a).size() == 64);
}

TEST_CASE("config validation names the problem") {
  auto expect = [](const std::string& text, const std::string& needle) {
    try {
      config_from_json(text);
      FAIL("accepted: " << text);
    } catch (const ValidationError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos, e.what());
    }
  };
  expect(R"({"data": {"synthetic": {}}, "seeds": [1], "bogus": 1})", "bogus");
  expect(R"({"data": {"synthetic": {"shfit": 0.5}}, "seeds": [1]})", "data.synthetic.shfit");
  expect(R"({"data": {"synthetic": {}}, "seeds": []})", "seeds");
  expect(R"({"data": {"synthetic": {}}})", "seeds");
  expect(R"({"data": {}, "seeds": [1]})", "exactly one");
  expect(R"({"data": {"synthetic": {}}, "seeds": [1], "alpha_space": [0.0]})", "alpha_space");
  expect(R"({"data": {"synthetic": {}}, "seeds": [1], "encoder": {"num_layers": "six"}})", "encoder.num_layers");
  expect(R"({"data": {"synthetic": {}}, "seeds": [1], "encoder": {"d_model": 10, "n_heads": 3}})", "d_model");
  expect(R"({"data": {"synthetic": {}}, "seeds": [1], "adaptation": {"lr_generator": -1}})", "lr_generator");
  expect("not json", "invalid JSON");
}

TEST_CASE("TSV paths resolve against the config directory") {
  const auto c = config_from_json(R"({"data": {"tsv": {"source_train": "a.tsv", "source_dev": "b.tsv",
      "source_test": "/abs/c.tsv", "target_train": "d.tsv", "target_test": "e.tsv"}}, "seeds": [1]})",
                                  "/cfg");
  REQUIRE(c.data.tsv.has_value());
  CHECK(c.data.tsv->source_train == fs::path("/cfg/a.tsv"));
  CHECK(c.data.tsv->source_test == fs::path("/abs/c.tsv"));
}

TEST_CASE("commands write reproducible artifacts") {
  const auto config = config_from_json(kTinyConfig);
  const fs::path a = scratch("run-a"), b = scratch("run-b");
  for (const fs::path& dir : {a, b}) {
    cmd_train_source(config, dir);
    cmd_adapt(config, dir, std::nullopt);
    cmd_evaluate(config, dir, std::nullopt);
    cmd_sweep_alpha(config, dir, std::nullopt);
    cmd_export_features(config, dir, std::nullopt, std::nullopt);
  }
  const std::vector<std::string> files{"source-trained-seed0003.ckpt.json", "source-history-seed0003.csv",
                                       "adapted-seed0003.ckpt.json",        "adapt-history-seed0003.csv",
                                       "report-seed0003.json",              "sweep-seed0003.csv",
                                       "features-adapted-seed0003-layer2.csv"};
  for (const auto& f : files) {
    REQUIRE(fs::exists(a / f));
    CHECK_MESSAGE(slurp(a / f) == slurp(b / f), f);
  }

  const auto source = load_checkpoint(a / files[0]);
  const auto adapted = load_checkpoint(a / files[2]);
  CHECK(adapted.provenance.phase == Phase::kAdapted);
  CHECK(adapted.provenance.config_digest == config_digest(config));

  const PreparedData data = prepare_data(config, 3);
  const auto dev_acc = exit_accuracies(source.bundle, data.source_dev);
  const auto trained = run_source_training(config, data, 3);
  CHECK(dev_acc == exit_accuracies(trained.bundle, data.source_dev));

  const auto report = ExperimentReport::from_json(slurp(a / files[4]));
  CHECK(report.early_exit_speedup >= 1.0);
  CHECK(report.early_exit_speedup <= 2.0);
  CHECK_FALSE(report.source_history_csv.empty());
  CHECK_FALSE(report.adapt_history_csv.empty());

  const std::string sweep = slurp(a / files[5]);
  CHECK(std::count(sweep.begin(), sweep.end(), '\n') == 6);
  const auto last_row = sweep.substr(sweep.rfind("\n1,", sweep.size() - 2) + 3);
  CHECK(std::stod(last_row) == report.final_target_accuracy);

  const auto rows = features_from_csv(slurp(a / files[6]));
  CHECK(rows.size() == data.source_test.size() + data.target_test.size());
  std::set<std::string> domains;
  for (const auto& r : rows) domains.insert(r.domain);
  CHECK(domains.size() == 2);
}

TEST_CASE("adapt leaves the source checkpoint untouched and checks phase and digest") {
  const auto config = config_from_json(kTinyConfig);
  const fs::path dir = scratch("adapt");
  cmd_train_source(config, dir);
  const fs::path source_file = dir / checkpoint_file_name(Phase::kSourceTrained, 3);
  const std::string before = slurp(source_file);
  const auto written = cmd_adapt(config, dir, source_file);
  CHECK(slurp(source_file) == before);
  REQUIRE(!written.empty());
  CHECK_THROWS_AS(cmd_adapt(config, dir, written.front()), ValidationError);

  auto other = config;
  other.adapt.kd_weight = 5.0;
  CHECK_THROWS_AS(cmd_adapt(other, dir, source_file), ValidationError);
  CHECK_THROWS_AS(cmd_evaluate(other, dir, std::nullopt), ValidationError);
}

TEST_CASE("TSV data errors name the file and line") {
  const fs::path dir = scratch("tsv");
  spit(dir / "train.tsv", "1\tgood movie\n0\tbad plot\nno label here\n");
  spit(dir / "dev.tsv", "1\tgood\n");
  spit(dir / "test.tsv", "0\tbad\n");
  spit(dir / "target.tsv", "great film\n");
  spit(dir / "target_test.tsv", "1\tgreat\n");
  spit(dir / "config.json", R"({"data": {"tsv": {"source_train": "train.tsv", "source_dev": "dev.tsv",
      "source_test": "test.tsv", "target_train": "target.tsv", "target_test": "target_test.tsv"}}, "seeds": [1]})");
  const auto config = load_config(dir / "config.json");
  try {
    cmd_train_source(config, dir / "out");
    FAIL("accepted a row without a label");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("train.tsv:3") != std::string::npos);
  }
}
