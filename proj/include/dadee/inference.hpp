#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dadee/data.hpp"
#include "dadee/model.hpp"

namespace dadee {

inline const std::vector<double> kAlphaSearchSpace = {0.8, 0.85, 0.9, 0.95, 1.0};

struct ExitDecision {
  std::size_t exit_layer = 0;  // 1-based
  std::size_t label = 0;
  double confidence = 0.0;     // max_c p_i(c) at the exit layer
};

struct InferenceTrace {
  std::vector<ExitDecision> decisions;
  std::vector<std::size_t> histogram;  // histogram[i] = samples exiting at layer i + 1
};

// Runs layers one at a time and returns at the first non-final layer whose
// confidence is >= alpha; the final layer always answers. Requires a frozen
// bundle and alpha in (0, 1].
ExitDecision infer_one(const EncoderBundle& bundle, std::span<const TokenId> token_ids, double alpha);

InferenceTrace infer_corpus(const EncoderBundle& bundle, const Corpus& corpus, double alpha);

// sum_i L * n_i / sum_i i * n_i.
double speedup(std::span<const std::size_t> histogram);

double trace_accuracy(const InferenceTrace& trace, const Corpus& corpus);

struct SweepPoint {
  double alpha = 1.0;
  double accuracy = 0.0;
  double speedup = 1.0;
  std::vector<std::size_t> histogram;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  std::size_t selected = 0;

  double selected_alpha() const { return points.at(selected).alpha; }
  // Columns: alpha, accuracy, speedup, n_1..n_L.
  std::string to_csv() const;
};

// Index of the most accurate point; ties go to the higher speedup, then to
// the earlier point.
std::size_t select_best(std::span<const SweepPoint> points);

// Accuracy, speedup and histogram for every alpha on a labeled corpus.
SweepResult sweep_alpha(const EncoderBundle& bundle, const Corpus& corpus, std::span<const double> search_space);

// sweep_alpha on the source validation split; the selected alpha is reused
// unchanged on the target domain.
SweepResult select_alpha(const EncoderBundle& bundle, const Corpus& validation,
                         std::span<const double> search_space = kAlphaSearchSpace);

}  // namespace dadee
