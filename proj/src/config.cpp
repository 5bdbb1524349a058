#include "dadee/config.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dadee/errors.hpp"
#include "json_io.hpp"

namespace dadee {

namespace {

[[noreturn]] void fail(const std::string& why) { throw ValidationError("config: " + why); }

std::string key_path(const std::string& where, const std::string& key) { return where.empty() ? key : where + "." + key; }

// Rejects keys outside `allowed` so typos do not silently fall back to defaults.
void check_keys(const Json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail(where + " must be an object");
  const std::set<std::string> names(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items())
    if (!names.contains(key)) fail("unknown key '" + key_path(where, key) + "'");
}

template <typename T>
void read(const Json& j, const char* key, const std::string& where, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception&) {
    fail("'" + key_path(where, key) + "' has the wrong type");
  }
}

void read_size(const Json& j, const char* key, const std::string& where, std::size_t& out) {
  if (!j.contains(key)) return;
  const Json& v = j.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) fail("'" + key_path(where, key) + "' must be a non-negative integer");
  out = v.get<std::size_t>();
}

}  // namespace

EncoderConfig encoder_config_from_json(const Json& j) {
  check_keys(j, "encoder", {"num_layers", "d_model", "block_kind", "n_heads", "d_ff", "vocab_size", "max_seq_len",
                            "num_classes", "pooling"});
  EncoderConfig c;
  read_size(j, "vocab_size", "encoder", c.vocab_size);
  read_size(j, "num_layers", "encoder", c.num_layers);
  read_size(j, "d_model", "encoder", c.d_model);
  read_size(j, "n_heads", "encoder", c.n_heads);
  read_size(j, "d_ff", "encoder", c.d_ff);
  read_size(j, "max_seq_len", "encoder", c.max_seq_len);
  read_size(j, "num_classes", "encoder", c.num_classes);
  std::string kind = to_string(c.block_kind), pooling = to_string(c.pooling);
  read(j, "block_kind", "encoder", kind);
  read(j, "pooling", "encoder", pooling);
  c.block_kind = parse_block_kind(kind);
  c.pooling = parse_pooling(pooling);
  return c;
}

Json encoder_config_to_json(const EncoderConfig& c, bool with_vocab) {
  Json j{{"num_layers", c.num_layers}, {"d_model", c.d_model}, {"block_kind", to_string(c.block_kind)},
         {"n_heads", c.n_heads},       {"d_ff", c.d_ff}};
  if (with_vocab) j["vocab_size"] = c.vocab_size;
  j["max_seq_len"] = c.max_seq_len;
  j["num_classes"] = c.num_classes;
  j["pooling"] = to_string(c.pooling);
  return j;
}

namespace {

SourceTrainConfig source_from(const Json& j) {
  check_keys(j, "source_training", {"epochs", "batch_size", "lr", "patience"});
  SourceTrainConfig c;
  read_size(j, "epochs", "source_training", c.epochs);
  read_size(j, "batch_size", "source_training", c.batch_size);
  read(j, "lr", "source_training", c.lr);
  read_size(j, "patience", "source_training", c.patience);
  return c;
}

Json source_to(const SourceTrainConfig& c) {
  return Json{{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr}, {"patience", c.patience}};
}

AdaptConfig adapt_from(const Json& j) {
  check_keys(j, "adaptation",
             {"epochs", "batch_size", "lr_generator", "lr_discriminator", "disc_steps", "kd_weight", "disc_hidden"});
  AdaptConfig c;
  read_size(j, "epochs", "adaptation", c.epochs);
  read_size(j, "batch_size", "adaptation", c.batch_size);
  read(j, "lr_generator", "adaptation", c.lr_generator);
  read(j, "lr_discriminator", "adaptation", c.lr_discriminator);
  read_size(j, "disc_steps", "adaptation", c.disc_steps);
  read(j, "kd_weight", "adaptation", c.kd_weight);
  read_size(j, "disc_hidden", "adaptation", c.disc_hidden);
  return c;
}

Json adapt_to(const AdaptConfig& c) {
  return Json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr_generator", c.lr_generator},
              {"lr_discriminator", c.lr_discriminator},
              {"disc_steps", c.disc_steps},
              {"kd_weight", c.kd_weight},
              {"disc_hidden", c.disc_hidden}};
}

SyntheticShiftSpec synthetic_from(const Json& j) {
  const std::string w = "data.synthetic";
  check_keys(j, w,
             {"num_classes", "neutral_tokens", "shared_tokens_per_class", "exclusive_tokens_per_class",
              "indicative_rate", "shift", "min_length", "max_length", "label_noise", "source_train", "source_dev",
              "source_test", "target_train", "target_test"});
  SyntheticShiftSpec s;
  read_size(j, "num_classes", w, s.num_classes);
  read_size(j, "neutral_tokens", w, s.neutral_tokens);
  read_size(j, "shared_tokens_per_class", w, s.shared_tokens_per_class);
  read_size(j, "exclusive_tokens_per_class", w, s.exclusive_tokens_per_class);
  read(j, "indicative_rate", w, s.indicative_rate);
  read(j, "shift", w, s.shift);
  read_size(j, "min_length", w, s.min_length);
  read_size(j, "max_length", w, s.max_length);
  read(j, "label_noise", w, s.label_noise);
  read_size(j, "source_train", w, s.source_train);
  read_size(j, "source_dev", w, s.source_dev);
  read_size(j, "source_test", w, s.source_test);
  read_size(j, "target_train", w, s.target_train);
  read_size(j, "target_test", w, s.target_test);
  return s;
}

Json synthetic_to(const SyntheticShiftSpec& s) {
  return Json{{"num_classes", s.num_classes},
              {"neutral_tokens", s.neutral_tokens},
              {"shared_tokens_per_class", s.shared_tokens_per_class},
              {"exclusive_tokens_per_class", s.exclusive_tokens_per_class},
              {"indicative_rate", s.indicative_rate},
              {"shift", s.shift},
              {"min_length", s.min_length},
              {"max_length", s.max_length},
              {"label_noise", s.label_noise},
              {"source_train", s.source_train},
              {"source_dev", s.source_dev},
              {"source_test", s.source_test},
              {"target_train", s.target_train},
              {"target_test", s.target_test}};
}

TsvPaths tsv_from(const Json& j, const std::filesystem::path& base_dir) {
  check_keys(j, "data.tsv", {"source_train", "source_dev", "source_test", "target_train", "target_test"});
  TsvPaths p;
  auto path = [&](const char* key) {
    if (!j.contains(key)) fail("missing 'data.tsv." + std::string(key) + "'");
    std::string s;
    read(j, key, "data.tsv", s);
    const std::filesystem::path raw(s);
    return raw.is_absolute() || base_dir.empty() ? raw : base_dir / raw;
  };
  p.source_train = path("source_train");
  p.source_dev = path("source_dev");
  p.source_test = path("source_test");
  p.target_train = path("target_train");
  p.target_test = path("target_test");
  return p;
}

Json tsv_to(const TsvPaths& p) {
  return Json{{"source_train", p.source_train.generic_string()},
              {"source_dev", p.source_dev.generic_string()},
              {"source_test", p.source_test.generic_string()},
              {"target_train", p.target_train.generic_string()},
              {"target_test", p.target_test.generic_string()}};
}

Json core_json(const ExperimentConfig& c) {
  Json data{{"min_count", c.data.min_count}};
  if (c.data.tsv) data["tsv"] = tsv_to(*c.data.tsv);
  if (c.data.synthetic) data["synthetic"] = synthetic_to(*c.data.synthetic);
  return Json{{"encoder", encoder_config_to_json(c.encoder, false)},
              {"source_training", source_to(c.source)},
              {"adaptation", adapt_to(c.adapt)},
              {"data", data},
              {"alpha_space", c.alpha_space}};
}

}  // namespace

void ExperimentConfig::validate() const {
  EncoderConfig e = encoder;
  if (e.vocab_size == 0) e.vocab_size = 2;
  e.validate();
  source.validate();
  adapt.validate();
  if (data.tsv.has_value() == data.synthetic.has_value()) fail("exactly one of data.tsv and data.synthetic must be given");
  if (data.synthetic) {
    data.synthetic->validate();
    if (data.synthetic->num_classes != encoder.num_classes) fail("data.synthetic.num_classes != encoder.num_classes");
  }
  if (data.min_count < 1) fail("data.min_count must be at least 1");
  if (alpha_space.empty()) fail("alpha_space must not be empty");
  for (double a : alpha_space)
    if (!(a > 0.0 && a <= 1.0)) fail("alpha_space values must lie in (0, 1]");
  if (seeds.empty()) fail("seeds must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) fail("seeds must be distinct");
}

ExperimentConfig config_from_json(const std::string& text, const std::filesystem::path& base_dir) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    fail(std::string("invalid JSON: ") + e.what());
  }
  check_keys(j, "", {"encoder", "source_training", "adaptation", "data", "alpha_space", "seeds", "output_dir"});
  ExperimentConfig c;
  c.alpha_space = {0.8, 0.85, 0.9, 0.95, 1.0};
  if (j.contains("encoder")) {
    c.encoder = encoder_config_from_json(j["encoder"]);
    c.encoder.vocab_size = 0;
  }
  if (j.contains("source_training")) c.source = source_from(j["source_training"]);
  if (j.contains("adaptation")) c.adapt = adapt_from(j["adaptation"]);
  if (!j.contains("data")) fail("missing 'data'");
  const Json& data = j["data"];
  check_keys(data, "data", {"tsv", "synthetic", "min_count"});
  read_size(data, "min_count", "data", c.data.min_count);
  if (data.contains("tsv")) c.data.tsv = tsv_from(data["tsv"], base_dir);
  if (data.contains("synthetic")) c.data.synthetic = synthetic_from(data["synthetic"]);
  read(j, "alpha_space", "", c.alpha_space);
  if (!j.contains("seeds")) fail("missing 'seeds'");
  read(j, "seeds", "", c.seeds);
  if (j.contains("output_dir")) {
    std::string out;
    read(j, "output_dir", "", out);
    const std::filesystem::path raw(out);
    c.output_dir = raw.is_absolute() || base_dir.empty() ? raw : base_dir / raw;
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return config_from_json(text.str(), path.parent_path());
}

std::string config_to_json(const ExperimentConfig& config) {
  Json j = core_json(config);
  j["seeds"] = config.seeds;
  j["output_dir"] = config.output_dir.generic_string();
  return j.dump(2) + "\n";
}

std::string config_digest(const ExperimentConfig& config) { return sha256_hex(core_json(config).dump()); }

std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256: digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 15];
  }
  return out;
}

}  // namespace dadee
