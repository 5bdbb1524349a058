#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dadee/data.hpp"
#include "dadee/model.hpp"
#include "dadee/rng.hpp"
#include "dadee/tensor.hpp"

namespace dadee {

// Depth-weighted mean: sum_i i * v_i / sum_i i with i = 1..L. Throws when
// values.size() != num_layers.
double weighted_aggregate(std::span<const double> values, std::size_t num_layers);

template <std::floating_point T>
Tensor<T> weighted_aggregate(std::span<const Tensor<T>> values, std::size_t num_layers);

// Weight of exit i (0-based) in the depth-weighted mean.
double layer_weight(std::size_t layer, std::size_t num_layers);

struct SourceTrainConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 16;
  double lr = 1e-4;
  std::size_t patience = 1;

  void validate() const;
};

struct SourceEpochRecord {
  double mean_loss = 0.0;
  std::vector<double> dev_accuracy;  // one per exit
  double dev_metric = 0.0;           // depth-weighted mean of dev_accuracy
  bool selected = false;
};

struct TrainHistory {
  std::vector<SourceEpochRecord> epochs;
  std::vector<double> batch_losses;

  std::size_t selected_epoch() const;
  // Columns: epoch, mean_loss, dev_metric, selected, dev_acc_1..dev_acc_L.
  std::string to_csv() const;
};

struct TrainedSource {
  EncoderBundle bundle;
  TrainHistory history;
};

// Depth-weighted mean of the per-exit cross-entropy on one batch.
template <std::floating_point T>
Tensor<T> source_loss(const BasicEncoderBundle<T>& bundle, std::span<const std::vector<TokenId>> sequences,
                      std::span<const std::size_t> labels);

// Accuracy of argmax p_i at every exit over a labeled corpus, full forward.
// No frozen requirement; evaluation wraps this with one.
std::vector<double> exit_accuracies(const EncoderBundle& bundle, const Corpus& corpus,
                                    std::size_t batch_size = 64);

// Trains all parameters on the depth-weighted per-exit cross-entropy, keeps the
// epoch with the best dev metric, and returns it frozen.
TrainedSource train_source(EncoderBundle bundle, const Corpus& train, const Corpus& dev,
                           const SourceTrainConfig& config, SeededRng& rng);

}  // namespace dadee
