#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dadee/data.hpp"
#include "dadee/model.hpp"
#include "dadee/rng.hpp"
#include "dadee/tensor.hpp"

namespace dadee {

inline constexpr double kDiscriminatorSlope = 0.2;

// Domain discriminator for one layer: width -> hidden -> hidden -> 1 with
// LeakyReLU after each hidden layer. Outputs P(domain = source).
template <std::floating_point T>
struct Discriminator {
  Tensor<T> w1, b1, w2, b2, w3, b3;

  std::size_t input_width() const { return w1.dim(0); }
  // [B, width] -> [B, 1], clamped to [kProbFloor, 1 - kProbFloor].
  Tensor<T> forward(const Tensor<T>& features) const;
  std::vector<Tensor<T>> parameters() const;
  // Same values, no gradient tracking.
  Discriminator detached() const;
};

template <std::floating_point T>
struct DiscriminatorStack {
  std::vector<Discriminator<T>> layers;

  std::size_t size() const { return layers.size(); }
  std::vector<Tensor<T>> parameters() const;
};

template <std::floating_point T>
DiscriminatorStack<T> init_discriminators(std::size_t num_layers, std::size_t width, std::size_t hidden,
                                          SeededRng& rng);

// -log D(e_s) - log(1 - D(e_t)), batch-meaned. Both inputs are detached first.
template <std::floating_point T>
Tensor<T> disc_loss_layer(const Discriminator<T>& d, const Tensor<T>& e_s, const Tensor<T>& e_t);

// -log D(e_t), batch-meaned. No gradient reaches the discriminator.
template <std::floating_point T>
Tensor<T> gen_loss_layer(const Discriminator<T>& d, const Tensor<T>& e_t);

// KL(C_i(e_s) || C_i(e_t)) with the frozen head of `layer`; e_s is detached.
template <std::floating_point T>
Tensor<T> kd_loss_layer(const ExitHeads<T>& heads, std::size_t layer, const Tensor<T>& e_s, const Tensor<T>& e_t);

// Per-layer pooled features for one paired batch. The source parts never carry
// gradients; the target parts are recorded on the active tape.
template <std::floating_point T>
struct PairForward {
  std::vector<Tensor<T>> source_on_source;  // E^s_i(x_s)
  std::vector<Tensor<T>> target_on_source;  // E^t_i(x_s)
  std::vector<Tensor<T>> target_on_target;  // E^t_i(x_t)
};

template <std::floating_point T>
PairForward<T> pair_forward(const BasicEncoderBundle<T>& source, const BasicEncoderBundle<T>& target,
                            std::span<const std::vector<TokenId>> x_s, std::span<const std::vector<TokenId>> x_t);

// Depth-weighted discriminator loss over all layers.
template <std::floating_point T>
Tensor<T> discriminator_objective(const DiscriminatorStack<T>& discs, const PairForward<T>& f);

template <std::floating_point T>
struct GeneratorObjective {
  Tensor<T> total;  // weighted sum over layers of gen_i + kd_weight * kd_i
  double gen = 0.0;
  double kd = 0.0;
};

template <std::floating_point T>
GeneratorObjective<T> generator_objective(const ExitHeads<T>& heads, const DiscriminatorStack<T>& discs,
                                          const PairForward<T>& f, double kd_weight);

struct AdaptConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 16;
  double lr_generator = 1e-4;
  double lr_discriminator = 1e-4;
  std::size_t disc_steps = 1;  // discriminator steps per generator step
  double kd_weight = 1.0;
  std::size_t disc_hidden = 128;

  void validate() const;
};

struct AdaptStepRecord {
  double disc_loss = 0.0;
  double gen_loss = 0.0;
  double kd_loss = 0.0;
};

struct AdaptEpochRecord {
  std::optional<double> target_accuracy;
  std::optional<double> a_distance;
};

struct AdaptHistory {
  std::vector<AdaptStepRecord> steps;
  std::vector<AdaptEpochRecord> epochs;

  // Columns: step, disc_loss, gen_loss, kd_loss.
  std::string to_csv() const;
};

// Called after each epoch with a frozen snapshot of the target encoder. It
// fills the diagnostic fields; target labels stay with the caller.
using AdaptProbe = std::function<void(const EncoderBundle& snapshot, std::size_t epoch, AdaptEpochRecord& record)>;

struct AdaptResult {
  EncoderBundle target;
  DiscriminatorStack<float> discriminators;
  AdaptHistory history;
};

AdaptResult adapt(const EncoderBundle& source, EncoderBundle target, DiscriminatorStack<float> discriminators,
                  const Corpus& source_train, const UnlabeledCorpus& target_train, const AdaptConfig& config,
                  SeededRng& rng, const AdaptProbe& probe = {});

}  // namespace dadee
