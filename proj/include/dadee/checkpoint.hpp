#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "dadee/model.hpp"

namespace dadee {

inline constexpr int kCheckpointFormatVersion = 1;

enum class Phase { kSourceTrained, kAdapted };

std::string to_string(Phase phase);  // "source-trained" / "adapted"
Phase parse_phase(const std::string& name);

struct Provenance {
  Phase phase = Phase::kSourceTrained;
  std::uint64_t seed = 0;
  std::string config_digest;
};

struct Checkpoint {
  EncoderBundle bundle;  // frozen on load
  Provenance provenance;
};

// {format_version, config, provenance, tensors}. Tensors appear in name order,
// each as {shape, dtype "f32", data: base64 of little-endian floats}.
std::string checkpoint_to_json(const EncoderBundle& bundle, const Provenance& provenance);
Checkpoint checkpoint_from_json(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const EncoderBundle& bundle, const Provenance& provenance);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// "{phase}-seed{NNNN}.ckpt.json"
std::string checkpoint_file_name(Phase phase, std::uint64_t seed);

std::string base64_encode(const std::string& bytes);
std::string base64_decode(const std::string& text);

}  // namespace dadee
