#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "dadee/adaptation.hpp"
#include "dadee/checkpoint.hpp"
#include "dadee/config.hpp"
#include "dadee/evaluation.hpp"
#include "dadee/inference.hpp"
#include "dadee/source_training.hpp"

namespace dadee {

// Corpora of one run, tokenized with a vocabulary over source-train and
// target-train text. `encoder` carries the resulting vocab_size.
struct PreparedData {
  Vocabulary vocab;
  EncoderConfig encoder;
  Corpus source_train, source_dev, source_test, target_test;
  UnlabeledCorpus target_train;
};

PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed);

// Independent random streams of one run.
enum class Stream : std::uint64_t { kSourceTraining = 1, kAdaptation = 2, kProbe = 3 };
SeededRng stream_rng(std::uint64_t seed, Stream stream);

TrainedSource run_source_training(const ExperimentConfig& config, const PreparedData& data, std::uint64_t seed);

AdaptResult run_adaptation(const ExperimentConfig& config, const PreparedData& data, const EncoderBundle& source,
                           std::uint64_t seed, const AdaptProbe& probe = {});

// Source-dev picks alpha*; the points hold target-test accuracy and speedup
// for every alpha, and `selected` indexes alpha*.
SweepResult target_sweep(const ExperimentConfig& config, const PreparedData& data, const EncoderBundle& adapted);

// d_A before uses the source encoder on both test sets, d_A after the adapted
// encoder; both at the final layer with the same probe stream.
ExperimentReport build_report(const ExperimentConfig& config, const PreparedData& data, const EncoderBundle& source,
                              const EncoderBundle& adapted, std::uint64_t seed);

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, Phase phase, std::uint64_t seed);

// CLI commands. Each runs every configured seed, or only the seed of
// `checkpoint` when given, and returns the files it wrote.
std::vector<std::filesystem::path> cmd_train_source(const ExperimentConfig& config, const std::filesystem::path& out);
std::vector<std::filesystem::path> cmd_adapt(const ExperimentConfig& config, const std::filesystem::path& out,
                                             const std::optional<std::filesystem::path>& checkpoint);
std::vector<std::filesystem::path> cmd_evaluate(const ExperimentConfig& config, const std::filesystem::path& out,
                                                const std::optional<std::filesystem::path>& checkpoint);
std::vector<std::filesystem::path> cmd_sweep_alpha(const ExperimentConfig& config, const std::filesystem::path& out,
                                                   const std::optional<std::filesystem::path>& checkpoint);
// Defaults to the adapted checkpoints and the final layer.
std::vector<std::filesystem::path> cmd_export_features(const ExperimentConfig& config,
                                                       const std::filesystem::path& out,
                                                       const std::optional<std::filesystem::path>& checkpoint,
                                                       std::optional<std::size_t> layer);

}  // namespace dadee
