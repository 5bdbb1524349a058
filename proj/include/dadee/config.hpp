#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dadee/adaptation.hpp"
#include "dadee/data.hpp"
#include "dadee/model.hpp"
#include "dadee/source_training.hpp"

namespace dadee {

struct TsvPaths {
  std::filesystem::path source_train, source_dev, source_test;
  std::filesystem::path target_train;  // read without labels
  std::filesystem::path target_test;
};

// Exactly one of `tsv` and `synthetic` is set. For synthetic data the run seed
// replaces SyntheticShiftSpec::seed, so every seed draws its own corpora.
struct DataSpec {
  std::optional<TsvPaths> tsv;
  std::optional<SyntheticShiftSpec> synthetic;
  std::size_t min_count = 1;
};

// encoder.vocab_size is ignored on input; it is set from the vocabulary built
// for each run.
struct ExperimentConfig {
  EncoderConfig encoder;
  SourceTrainConfig source;
  AdaptConfig adapt;
  DataSpec data;
  std::vector<double> alpha_space;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path output_dir = "runs";

  void validate() const;
};

// Unknown keys are rejected; missing keys take the defaults above. Relative
// TSV paths resolve against `base_dir`.
ExperimentConfig config_from_json(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& config);

// Hex SHA-256 of the canonical JSON without seeds and output directory, so the
// runs of one experiment share it.
std::string config_digest(const ExperimentConfig& config);

std::string sha256_hex(const std::string& bytes);

}  // namespace dadee
