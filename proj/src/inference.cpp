#include "dadee/inference.hpp"

#include <algorithm>
#include <sstream>

#include "dadee/errors.hpp"

namespace dadee {

namespace {

void require_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw ValidationError("alpha " + std::to_string(alpha) + " outside (0, 1]");
  }
}

}  // namespace

ExitDecision infer_one(const EncoderBundle& bundle, std::span<const TokenId> token_ids, double alpha) {
  if (!bundle.frozen) throw ValidationError("infer_one: bundle is not frozen");
  require_alpha(alpha);
  NoGradGuard<float> no_grad;
  EncoderPass<float> pass(bundle, pack_batch(token_ids, bundle.config));
  while (true) {
    const LayerResult<float> r = pass.next();
    const auto p = r.probs.data();
    const auto best = std::max_element(p.begin(), p.end());
    ExitDecision d{pass.layers_done(), static_cast<std::size_t>(best - p.begin()), static_cast<double>(*best)};
    if (pass.finished() || d.confidence >= alpha) return d;
  }
}

InferenceTrace infer_corpus(const EncoderBundle& bundle, const Corpus& corpus, double alpha) {
  if (corpus.size() == 0) throw ValidationError("infer_corpus: empty corpus");
  InferenceTrace trace;
  trace.histogram.assign(bundle.config.num_layers, 0);
  trace.decisions.reserve(corpus.size());
  for (const auto& ex : corpus.examples) {
    const ExitDecision d = infer_one(bundle, ex.ids, alpha);
    ++trace.histogram[d.exit_layer - 1];
    trace.decisions.push_back(d);
  }
  return trace;
}

double speedup(std::span<const std::size_t> histogram) {
  const std::size_t layers = histogram.size();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < layers; ++i) {
    num += static_cast<double>(layers) * static_cast<double>(histogram[i]);
    den += static_cast<double>(i + 1) * static_cast<double>(histogram[i]);
  }
  if (den == 0.0) throw ValidationError("speedup: empty histogram");
  return num / den;
}

double trace_accuracy(const InferenceTrace& trace, const Corpus& corpus) {
  const auto labels = corpus.labels();
  if (labels.size() != trace.decisions.size()) throw ValidationError("trace_accuracy: size mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += trace.decisions[i].label == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

std::string SweepResult::to_csv() const {
  std::ostringstream out;
  out.precision(9);
  out << "alpha,accuracy,speedup";
  const std::size_t layers = points.empty() ? 0 : points.front().histogram.size();
  for (std::size_t i = 0; i < layers; ++i) out << ",n_" << i + 1;
  out << '\n';
  for (const auto& p : points) {
    out << p.alpha << ',' << p.accuracy << ',' << p.speedup;
    for (auto n : p.histogram) out << ',' << n;
    out << '\n';
  }
  return out.str();
}

std::size_t select_best(std::span<const SweepPoint> points) {
  if (points.empty()) throw ValidationError("select_alpha: empty search space");
  std::size_t best = 0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    const auto& p = points[i];
    const auto& b = points[best];
    if (p.accuracy > b.accuracy || (p.accuracy == b.accuracy && p.speedup > b.speedup)) best = i;
  }
  return best;
}

SweepResult sweep_alpha(const EncoderBundle& bundle, const Corpus& corpus, std::span<const double> search_space) {
  if (search_space.empty()) throw ValidationError("sweep_alpha: empty search space");
  if (!corpus.labeled()) throw ValidationError("sweep_alpha: corpus " + to_string(corpus.role) + " is unlabeled");
  for (double a : search_space) require_alpha(a);
  SweepResult result;
  for (double alpha : search_space) {
    const InferenceTrace trace = infer_corpus(bundle, corpus, alpha);
    result.points.push_back(SweepPoint{alpha, trace_accuracy(trace, corpus), speedup(trace.histogram), trace.histogram});
  }
  result.selected = select_best(result.points);
  return result;
}

SweepResult select_alpha(const EncoderBundle& bundle, const Corpus& validation, std::span<const double> search_space) {
  return sweep_alpha(bundle, validation, search_space);
}

}  // namespace dadee
