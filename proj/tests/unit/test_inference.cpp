#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <vector>

#include "dadee/errors.hpp"
#include "dadee/inference.hpp"

using namespace dadee;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.num_layers = 4;
  c.d_model = 16;
  c.d_ff = 24;
  c.vocab_size = 40;
  c.max_seq_len = 12;
  return c;
}

// Untrained encoders sit near 0.5 confidence, so larger output weights are
// used to spread the exit layers over the whole depth.
EncoderBundle spread_model(std::uint64_t seed, float head_gain) {
  SeededRng rng(seed);
  auto b = init_encoder<float>(small_config(), rng);
  for (auto& w : b.heads->weight)
    for (auto& x : w.mutable_data()) x *= head_gain;
  b.freeze();
  return b;
}

Corpus random_corpus(std::size_t n, const EncoderConfig& c, SeededRng& rng) {
  Corpus corpus;
  corpus.role = CorpusRole::kTargetTest;
  for (std::size_t i = 0; i < n; ++i) {
    Example e;
    e.ids.resize(1 + rng.below(c.max_seq_len));
    for (auto& t : e.ids) t = static_cast<TokenId>(rng.below(c.vocab_size));
    e.label = rng.below(c.num_classes);
    corpus.examples.push_back(std::move(e));
  }
  return corpus;
}

ExitDecision oracle(const EncoderBundle& b, std::span<const TokenId> ids, double alpha) {
  const auto out = encode(b, ids);
  const std::size_t layers = b.config.num_layers;
  for (std::size_t i = 0; i < layers; ++i) {
    const auto p = out.probs[i].data();
    const auto best = std::max_element(p.begin(), p.end());
    const double conf = *best;
    if (i + 1 == layers || conf >= alpha)
      return {i + 1, static_cast<std::size_t>(best - p.begin()), conf};
  }
  return {};
}

}  // namespace

TEST_CASE("speedup closed forms") {
  CHECK(speedup(std::vector<std::size_t>{0, 0, 0, 17}) == 1.0);
  std::vector<std::size_t> at6(12, 0);
  at6[5] = 40;
  CHECK(speedup(at6) == 2.0);
  std::vector<std::size_t> split(12, 0);
  split[5] = 50;
  split[11] = 50;
  CHECK(speedup(split) == doctest::Approx(12.0 / 9.0).epsilon(1e-15));
  std::vector<std::size_t> first(5, 0);
  first[0] = 3;
  CHECK(speedup(first) == 5.0);
  CHECK_THROWS_AS(speedup(std::vector<std::size_t>(4, 0)), ValidationError);
}

TEST_CASE("infer_one matches a full-forward scan on 1000 inputs") {
  const auto model = spread_model(31, 6.0f);
  SeededRng rng(5);
  const auto corpus = random_corpus(1000, model.config, rng);
  std::vector<std::size_t> layers_seen(model.config.num_layers, 0);
  std::size_t mismatches = 0;
  for (double alpha : kAlphaSearchSpace) {
    for (const auto& e : corpus.examples) {
      const auto got = infer_one(model, e.ids, alpha);
      const auto want = oracle(model, e.ids, alpha);
      if (got.exit_layer != want.exit_layer || got.label != want.label) ++mismatches;
      ++layers_seen[got.exit_layer - 1];
    }
  }
  CHECK(mismatches == 0);
  for (std::size_t n : layers_seen) CHECK(n > 0);
}

TEST_CASE("exit decisions respect the threshold") {
  const auto model = spread_model(2, 6.0f);
  SeededRng rng(1);
  const auto corpus = random_corpus(200, model.config, rng);
  for (const auto& e : corpus.examples) {
    std::size_t previous = 0;
    for (double alpha : kAlphaSearchSpace) {
      const auto d = infer_one(model, e.ids, alpha);
      if (d.exit_layer < model.config.num_layers) CHECK(d.confidence >= alpha);
      CHECK(d.confidence >= 0.5);
      CHECK(d.exit_layer >= previous);
      previous = d.exit_layer;
    }
  }
}

TEST_CASE("infer_corpus histogram and determinism") {
  const auto model = spread_model(3, 6.0f);
  SeededRng rng(2);
  const auto corpus = random_corpus(150, model.config, rng);
  const auto a = infer_corpus(model, corpus, 0.9);
  const auto b = infer_corpus(model, corpus, 0.9);
  std::size_t total = 0;
  for (std::size_t n : a.histogram) total += n;
  CHECK(total == corpus.size());
  CHECK(a.histogram == b.histogram);
  REQUIRE(a.decisions.size() == b.decisions.size());
  for (std::size_t i = 0; i < a.decisions.size(); ++i) {
    CHECK(a.decisions[i].exit_layer == b.decisions[i].exit_layer);
    CHECK(a.decisions[i].label == b.decisions[i].label);
  }
}

TEST_CASE("alpha 1.0 sends an unsaturated model to the final layer") {
  const auto model = spread_model(4, 1.0f);
  SeededRng rng(3);
  const auto corpus = random_corpus(200, model.config, rng);
  const auto trace = infer_corpus(model, corpus, 1.0);
  CHECK(trace.histogram.back() == corpus.size());
  CHECK(speedup(trace.histogram) == 1.0);
}

TEST_CASE("sweep speedup is non-increasing in alpha and matches final-layer accuracy") {
  const auto model = spread_model(6, 6.0f);
  SeededRng rng(4);
  const auto corpus = random_corpus(300, model.config, rng);
  const auto sweep = sweep_alpha(model, corpus, kAlphaSearchSpace);
  REQUIRE(sweep.points.size() == kAlphaSearchSpace.size());
  for (std::size_t i = 1; i < sweep.points.size(); ++i)
    CHECK(sweep.points[i].speedup <= sweep.points[i - 1].speedup);
  for (const auto& p : sweep.points) {
    CHECK(p.speedup >= 1.0);
    CHECK(p.speedup <= 4.0);
  }

  std::size_t correct = 0;
  for (const auto& e : corpus.examples) correct += oracle(model, e.ids, 2.0).label == *e.label;
  CHECK(sweep.points.back().accuracy == static_cast<double>(correct) / static_cast<double>(corpus.size()));

  const auto csv = sweep.to_csv();
  CHECK(csv.rfind("alpha,accuracy,speedup,n_1,n_2,n_3,n_4\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
}

TEST_CASE("select_best breaks accuracy ties toward speed") {
  std::vector<SweepPoint> points;
  const std::vector<double> acc{0.84, 0.84, 0.83, 0.82, 0.82};
  const std::vector<double> spd{1.9, 1.6, 1.4, 1.2, 1.0};
  for (std::size_t i = 0; i < acc.size(); ++i) points.push_back({kAlphaSearchSpace[i], acc[i], spd[i], {}});
  CHECK(select_best(points) == 0);

  points[1].speedup = 2.5;
  CHECK(select_best(points) == 1);
}

TEST_CASE("select_alpha over a singleton space") {
  const auto model = spread_model(7, 6.0f);
  SeededRng rng(5);
  const auto corpus = random_corpus(50, model.config, rng);
  const std::vector<double> only{1.0};
  CHECK(select_alpha(model, corpus, only).selected_alpha() == 1.0);
}

TEST_CASE("inference rejects unfrozen models, bad alphas and unlabeled data") {
  SeededRng rng(8);
  auto open = init_encoder<float>(small_config(), rng);
  const std::vector<TokenId> ids{2, 3, 4};
  CHECK_THROWS_AS(infer_one(open, ids, 0.9), ValidationError);
  open.freeze();
  CHECK_THROWS_AS(infer_one(open, ids, 0.0), ValidationError);
  CHECK_THROWS_AS(infer_one(open, ids, 1.5), ValidationError);
  auto corpus = random_corpus(10, open.config, rng);
  corpus.examples[4].label.reset();
  CHECK_THROWS_AS(select_alpha(open, corpus), ValidationError);
}
