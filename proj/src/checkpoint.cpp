#include "dadee/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dadee/errors.hpp"
#include "json_io.hpp"

namespace dadee {

namespace {

[[noreturn]] void fail(const std::string& why) { throw ValidationError("checkpoint: " + why); }

std::string floats_to_le_bytes(std::span<const float> values) {
  std::string bytes(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  return bytes;
}

void le_bytes_to_floats(const std::string& bytes, std::span<float> out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
}

}  // namespace

std::string to_string(Phase phase) { return phase == Phase::kSourceTrained ? "source-trained" : "adapted"; }

Phase parse_phase(const std::string& name) {
  if (name == "source-trained") return Phase::kSourceTrained;
  if (name == "adapted") return Phase::kAdapted;
  fail("unknown phase '" + name + "'");
}

std::string base64_encode(const std::string& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) fail("base64 length is not a multiple of 4");
  std::string out(3 * text.size() / 4, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) fail("invalid base64 data");
  std::size_t padding = 0;
  if (!text.empty() && text.back() == '=') ++padding;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++padding;
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

std::string checkpoint_to_json(const EncoderBundle& bundle, const Provenance& provenance) {
  Json tensors = Json::object();
  for (const auto& [name, t] : bundle.named_tensors()) {
    tensors[name] = Json{{"shape", t.shape()}, {"dtype", "f32"}, {"data", base64_encode(floats_to_le_bytes(t.data()))}};
  }
  const Json j{{"format_version", kCheckpointFormatVersion},
               {"config", encoder_config_to_json(bundle.config, true)},
               {"provenance",
                {{"phase", to_string(provenance.phase)},
                 {"seed", provenance.seed},
                 {"config_digest", provenance.config_digest}}},
               {"tensors", tensors}};
  return j.dump(1) + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    fail(std::string("invalid JSON: ") + e.what());
  }
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) fail("unsupported format_version " + std::to_string(version));
    Checkpoint c;
    const EncoderConfig config = encoder_config_from_json(j.at("config"));
    const Json& prov = j.at("provenance");
    c.provenance.phase = parse_phase(prov.at("phase").get<std::string>());
    c.provenance.seed = prov.at("seed").get<std::uint64_t>();
    c.provenance.config_digest = prov.at("config_digest").get<std::string>();

    SeededRng skeleton_rng(0);
    c.bundle = init_encoder<float>(config, skeleton_rng);
    const Json& tensors = j.at("tensors");
    const auto named = c.bundle.named_tensors();
    if (tensors.size() != named.size()) {
      fail("expected " + std::to_string(named.size()) + " tensors, found " + std::to_string(tensors.size()));
    }
    for (auto [name, t] : named) {
      if (!tensors.contains(name)) fail("missing tensor '" + name + "'");
      const Json& entry = tensors.at(name);
      if (entry.at("dtype").get<std::string>() != "f32") fail("tensor '" + name + "' is not f32");
      if (entry.at("shape").get<Shape>() != t.shape()) {
        fail("tensor '" + name + "' has shape " + shape_str(entry.at("shape").get<Shape>()) + ", expected " +
             shape_str(t.shape()));
      }
      const std::string bytes = base64_decode(entry.at("data").get<std::string>());
      if (bytes.size() != 4 * t.size()) fail("tensor '" + name + "' has the wrong byte count");
      le_bytes_to_floats(bytes, t.mutable_data());
    }
    c.bundle.freeze();
    return c;
  } catch (const Json::exception& e) {
    fail(std::string("malformed document: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const EncoderBundle& bundle, const Provenance& provenance) {
  if (!bundle.frozen) fail("refusing to save an unfrozen bundle");
  const std::string text = checkpoint_to_json(bundle, provenance);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
  if (!out) throw ValidationError("cannot write " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read checkpoint " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return checkpoint_from_json(text.str());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string checkpoint_file_name(Phase phase, std::uint64_t seed) {
  std::ostringstream name;
  name << to_string(phase) << "-seed" << std::setw(4) << std::setfill('0') << seed << ".ckpt.json";
  return name.str();
}

}  // namespace dadee
