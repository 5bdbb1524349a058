#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include "dadee/errors.hpp"
#include "dadee/source_training.hpp"

using namespace dadee;

namespace {

struct SourceData {
  Vocabulary vocab;
  Corpus train, dev;
};

SourceData separable_source(std::uint64_t seed) {
  SyntheticShiftSpec spec;
  spec.seed = seed;
  spec.label_noise = 0.0;
  spec.source_train = 600;
  spec.source_dev = 200;
  const auto pair = generate_shift_pair(spec);
  const std::array<RawCorpus, 1> corpora{pair.source_train};
  SourceData out{build_vocab(corpora, 1), {}, {}};
  out.train = tokenize(pair.source_train, out.vocab, 64);
  out.dev = tokenize(pair.source_dev, out.vocab, 64);
  return out;
}

EncoderConfig tiny_encoder(std::size_t vocab_size) {
  EncoderConfig c;
  c.num_layers = 3;
  c.d_model = 16;
  c.d_ff = 32;
  c.vocab_size = vocab_size;
  return c;
}

SourceTrainConfig fast_training() {
  SourceTrainConfig c;
  c.lr = 1e-3;
  return c;
}

}  // namespace

TEST_CASE("weighted_aggregate matches the closed form") {
  const std::vector<double> v{3.0, 2.0, 1.0};
  CHECK(weighted_aggregate(v, 3) == doctest::Approx((1 * 3.0 + 2 * 2.0 + 3 * 1.0) / 6.0).epsilon(1e-12));

  const std::vector<double> same(7, 0.37);
  CHECK(weighted_aggregate(same, 7) == doctest::Approx(0.37).epsilon(1e-12));

  const std::vector<double> single{-4.5};
  CHECK(weighted_aggregate(single, 1) == -4.5);

  CHECK_THROWS_AS(weighted_aggregate(v, 4), ValidationError);
}

TEST_CASE("layer weights are i over the triangular number") {
  double total = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(layer_weight(i, 6) == doctest::Approx(static_cast<double>(i + 1) / 21.0).epsilon(1e-15));
    total += layer_weight(i, 6);
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("tensor weighted_aggregate agrees with the scalar form") {
  const std::vector<double> raw{0.5, 1.25, -2.0, 4.0};
  std::vector<Tensor<double>> values;
  for (double x : raw) values.push_back(Tensor<double>::scalar(x));
  const auto t = weighted_aggregate<double>(values, 4);
  CHECK(t.item() == doctest::Approx(weighted_aggregate(raw, 4)).epsilon(1e-12));
}

TEST_CASE("config validation") {
  SourceTrainConfig c;
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.lr = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  CHECK_NOTHROW(SourceTrainConfig{}.validate());
}

TEST_CASE("train_source reaches high dev accuracy and freezes the best epoch") {
  const auto data = separable_source(3);
  SeededRng rng(3);
  auto bundle = init_encoder<float>(tiny_encoder(data.vocab.size()), rng);
  const auto result = train_source(bundle, data.train, data.dev, fast_training(), rng);

  CHECK(result.bundle.frozen);
  CHECK(result.bundle.heads->frozen);
  for (const auto& [name, t] : result.bundle.named_tensors()) CHECK_FALSE(t.requires_grad());

  const auto& h = result.history;
  REQUIRE(h.epochs.size() <= 3);
  std::size_t selected = 0;
  for (const auto& e : h.epochs) selected += e.selected ? 1 : 0;
  CHECK(selected == 1);

  const auto acc = exit_accuracies(result.bundle, data.dev);
  CHECK(acc.back() >= 0.95);
  CHECK(acc.back() >= acc.front() - 0.05);
  CHECK(h.epochs[h.selected_epoch()].dev_accuracy == acc);

  REQUIRE(h.batch_losses.size() >= 2);
  CHECK(h.batch_losses.back() < h.batch_losses.front());
}

TEST_CASE("train_source is deterministic per seed") {
  const auto data = separable_source(5);
  auto run = [&] {
    SeededRng rng(11);
    auto bundle = init_encoder<float>(tiny_encoder(data.vocab.size()), rng);
    SourceTrainConfig c = fast_training();
    c.epochs = 1;
    return parameter_checksum(train_source(bundle, data.train, data.dev, c, rng).bundle);
  };
  CHECK(run() == run());
}

TEST_CASE("train_source rejects frozen bundles and unlabeled data") {
  const auto data = separable_source(2);
  SeededRng rng(1);
  auto bundle = init_encoder<float>(tiny_encoder(data.vocab.size()), rng);
  Corpus unlabeled = data.dev;
  unlabeled.examples[0].label.reset();
  CHECK_THROWS_AS(train_source(bundle, data.train, unlabeled, fast_training(), rng), ValidationError);
  CHECK_THROWS_AS(train_source(bundle, unlabeled, data.dev, fast_training(), rng), ValidationError);
  bundle.freeze();
  CHECK_THROWS_AS(train_source(bundle, data.train, data.dev, fast_training(), rng), ValidationError);
}

TEST_CASE("history CSV has one row per epoch") {
  TrainHistory h;
  h.epochs.push_back({0.7, {0.6, 0.7}, 2.0 / 3.0, false});
  h.epochs.push_back({0.4, {0.8, 0.9}, 26.0 / 30.0, true});
  const auto csv = h.to_csv();
  CHECK(csv.rfind("epoch,mean_loss,dev_metric,selected,dev_acc_1,dev_acc_2\n", 0) == 0);
  std::size_t lines = 0;
  for (char c : csv) lines += c == '\n';
  CHECK(lines == 3);
  CHECK(h.selected_epoch() == 1);
}
