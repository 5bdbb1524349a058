#include "dadee/source_training.hpp"

#include <algorithm>
#include <sstream>

#include "dadee/errors.hpp"
#include "dadee/losses.hpp"
#include "dadee/optim.hpp"

namespace dadee {

double layer_weight(std::size_t layer, std::size_t num_layers) {
  const double total = static_cast<double>(num_layers * (num_layers + 1)) / 2.0;
  return static_cast<double>(layer + 1) / total;
}

double weighted_aggregate(std::span<const double> values, std::size_t num_layers) {
  if (values.size() != num_layers || num_layers == 0) {
    throw ValidationError("weighted_aggregate: expected " + std::to_string(num_layers) + " values, got " +
                          std::to_string(values.size()));
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    num += static_cast<double>(i + 1) * values[i];
    den += static_cast<double>(i + 1);
  }
  return num / den;
}

template <std::floating_point T>
Tensor<T> weighted_aggregate(std::span<const Tensor<T>> values, std::size_t num_layers) {
  if (values.size() != num_layers || num_layers == 0) {
    throw ValidationError("weighted_aggregate: expected " + std::to_string(num_layers) + " values, got " +
                          std::to_string(values.size()));
  }
  Tensor<T> total;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].size() != 1) {
      throw ShapeError("weighted_aggregate: value " + std::to_string(i) + " is not a scalar " +
                       shape_str(values[i].shape()));
    }
    Tensor<T> term = scale(values[i], static_cast<T>(layer_weight(i, num_layers)));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

template Tensor<float> weighted_aggregate(std::span<const Tensor<float>>, std::size_t);
template Tensor<double> weighted_aggregate(std::span<const Tensor<double>>, std::size_t);

void SourceTrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("source training: epochs must be at least 1");
  if (batch_size < 1) throw ValidationError("source training: batch_size must be at least 1");
  if (!(lr > 0.0)) throw ValidationError("source training: lr must be positive");
}

std::size_t TrainHistory::selected_epoch() const {
  for (std::size_t i = 0; i < epochs.size(); ++i)
    if (epochs[i].selected) return i;
  throw ValidationError("train history: no selected epoch");
}

std::string TrainHistory::to_csv() const {
  std::ostringstream out;
  out.precision(9);
  out << "epoch,mean_loss,dev_metric,selected";
  const std::size_t layers = epochs.empty() ? 0 : epochs.front().dev_accuracy.size();
  for (std::size_t i = 0; i < layers; ++i) out << ",dev_acc_" << i + 1;
  out << '\n';
  for (std::size_t e = 0; e < epochs.size(); ++e) {
    const auto& r = epochs[e];
    out << e + 1 << ',' << r.mean_loss << ',' << r.dev_metric << ',' << (r.selected ? 1 : 0);
    for (double a : r.dev_accuracy) out << ',' << a;
    out << '\n';
  }
  return out.str();
}

std::vector<double> exit_accuracies(const EncoderBundle& bundle, const Corpus& corpus, std::size_t batch_size) {
  if (corpus.size() == 0) throw ValidationError("accuracy: empty corpus");
  const auto labels = corpus.labels();
  const std::size_t layers = bundle.config.num_layers;
  const std::size_t classes = bundle.config.num_classes;
  std::vector<std::size_t> correct(layers, 0);
  NoGradGuard<float> no_grad;
  for (std::size_t start = 0; start < corpus.size(); start += batch_size) {
    const std::size_t end = std::min(corpus.size(), start + batch_size);
    std::vector<std::vector<TokenId>> seqs;
    for (std::size_t i = start; i < end; ++i) seqs.push_back(corpus.examples[i].ids);
    const auto out = encode(bundle, pack_batch(seqs, bundle.config));
    for (std::size_t l = 0; l < layers; ++l) {
      const auto p = out.probs[l].data();
      for (std::size_t s = 0; s < seqs.size(); ++s) {
        const auto row = p.subspan(s * classes, classes);
        const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        correct[l] += pred == labels[start + s];
      }
    }
  }
  std::vector<double> acc(layers);
  for (std::size_t l = 0; l < layers; ++l) acc[l] = static_cast<double>(correct[l]) / corpus.size();
  return acc;
}

template <std::floating_point T>
Tensor<T> source_loss(const BasicEncoderBundle<T>& bundle, std::span<const std::vector<TokenId>> sequences,
                      std::span<const std::size_t> labels) {
  const std::size_t layers = bundle.config.num_layers;
  const auto out = encode(bundle, pack_batch(sequences, bundle.config));
  std::vector<Tensor<T>> per_exit;
  for (std::size_t l = 0; l < layers; ++l) per_exit.push_back(cross_entropy(out.probs[l], labels));
  return weighted_aggregate<T>(per_exit, layers);
}

template Tensor<float> source_loss(const BasicEncoderBundle<float>&, std::span<const std::vector<TokenId>>,
                                   std::span<const std::size_t>);
template Tensor<double> source_loss(const BasicEncoderBundle<double>&, std::span<const std::vector<TokenId>>,
                                    std::span<const std::size_t>);

namespace {

std::vector<std::vector<float>> snapshot(const std::vector<Tensor<float>>& params) {
  std::vector<std::vector<float>> out;
  for (const auto& p : params) out.emplace_back(p.data().begin(), p.data().end());
  return out;
}

void restore(std::vector<Tensor<float>>& params, const std::vector<std::vector<float>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i)
    std::copy(values[i].begin(), values[i].end(), params[i].mutable_data().begin());
}

}  // namespace

TrainedSource train_source(EncoderBundle bundle, const Corpus& train, const Corpus& dev,
                           const SourceTrainConfig& config, SeededRng& rng) {
  config.validate();
  if (bundle.frozen) throw ValidationError("train_source: bundle is frozen");
  if (train.size() == 0 || !train.labeled()) throw ValidationError("train_source: source-train must be labeled");
  if (dev.size() == 0 || !dev.labeled()) throw ValidationError("train_source: source-dev must be labeled");

  const std::size_t layers = bundle.config.num_layers;
  auto params = bundle.all_parameters();
  Adam<float> adam(params, AdamConfig{config.lr});
  TrainHistory history;
  std::vector<std::vector<float>> best;
  double best_metric = -1.0;
  std::size_t best_epoch = 0, since_best = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double loss_sum = 0.0;
    const auto batches = labeled_batches(train, config.batch_size, rng);
    for (const auto& batch : batches) {
      GradTape<float> tape;
      Tensor<float> loss;
      {
        TapeGuard<float> guard(tape);
        loss = source_loss(bundle, batch.sequences, batch.labels);
      }
      adam.step(backward(tape, loss));
      history.batch_losses.push_back(loss.item());
      loss_sum += loss.item();
    }
    SourceEpochRecord record;
    record.mean_loss = loss_sum / static_cast<double>(batches.size());
    record.dev_accuracy = exit_accuracies(bundle, dev);
    record.dev_metric = weighted_aggregate(record.dev_accuracy, layers);
    history.epochs.push_back(record);
    if (record.dev_metric > best_metric) {
      best_metric = record.dev_metric;
      best_epoch = epoch;
      best = snapshot(params);
      since_best = 0;
    } else if (++since_best > config.patience) {
      break;
    }
  }
  history.epochs[best_epoch].selected = true;
  restore(params, best);
  bundle.freeze();
  return TrainedSource{std::move(bundle), std::move(history)};
}

}  // namespace dadee
