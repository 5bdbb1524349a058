#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dadee/data.hpp"
#include "dadee/model.hpp"
#include "dadee/rng.hpp"

namespace dadee {

using FeatureMatrix = std::vector<std::vector<double>>;

struct ADistanceReport {
  double probe_error = 0.5;
  double d_a = 0.0;
  std::size_t layer = 0;  // 1-based layer the features came from; 0 when unknown
  std::size_t source_size = 0;
  std::size_t target_size = 0;
};

struct ProbeConfig {
  std::size_t epochs = 500;
  double lr = 0.01;
};

inline constexpr std::size_t kMinADistanceSamples = 40;

// clamp(2 (1 - 2 eps), 0, 2).
double d_a_from_error(double probe_error);

// Proxy A-distance: each domain is shuffled, cut to the size of the smaller
// one and halved, a hinge-loss linear
// probe is trained by SGD on the first halves and its error on the second
// halves gives eps. Arguments are put in a canonical order first, so swapping
// the two sets gives the same result for the same rng state.
ADistanceReport a_distance(const FeatureMatrix& source, const FeatureMatrix& target, SeededRng& rng,
                           const ProbeConfig& probe = {});

// Requires a frozen bundle and a labeled corpus.
std::vector<double> per_exit_accuracy(const EncoderBundle& bundle, const Corpus& corpus);

// Pooled representation at 1-based `layer` for every example.
FeatureMatrix pooled_features(const EncoderBundle& bundle, const Corpus& corpus, std::size_t layer);

struct FeatureRow {
  std::string domain;
  std::optional<std::size_t> label;
  std::vector<double> features;
};

std::vector<FeatureRow> export_features(const EncoderBundle& bundle, const Corpus& corpus, std::size_t layer);

// Header "domain,label,f0,...,f{d-1}"; an absent label is an empty field.
std::string features_to_csv(std::span<const FeatureRow> rows);
std::vector<FeatureRow> features_from_csv(const std::string& csv);

struct ExperimentReport {
  std::uint64_t seed = 0;
  std::string config_digest;
  std::vector<double> source_exit_accuracy;  // source-test, per exit
  std::vector<double> target_exit_accuracy;  // target-test, per exit
  double source_only_target_accuracy = 0.0;  // source encoder, final exit
  double final_target_accuracy = 0.0;        // adapted encoder, final exit
  double selected_alpha = 1.0;
  double early_exit_target_accuracy = 0.0;
  double early_exit_speedup = 1.0;
  double a_distance_before = 0.0;
  double a_distance_after = 0.0;
  std::string source_history_csv;  // empty when the history file was not found
  std::string adapt_history_csv;

  void validate() const;
  std::string to_json() const;
  static ExperimentReport from_json(const std::string& text);
};

struct MetricSummary {
  std::string name;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
};

// Needs at least two reports sharing one config digest.
std::vector<MetricSummary> multi_seed_summary(std::span<const ExperimentReport> reports);
std::string summary_to_json(std::span<const MetricSummary> summary);

}  // namespace dadee
