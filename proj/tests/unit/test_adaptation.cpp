#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <array>
#include <cstring>
#include <cmath>
#include <numeric>
#include <vector>

#include "dadee/adaptation.hpp"
#include "dadee/errors.hpp"
#include "dadee/losses.hpp"
#include "dadee/optim.hpp"
#include "dadee/source_training.hpp"

using namespace dadee;

namespace {

// Width-1 discriminator: sign of the input decides the output when `gain` is large.
Discriminator<double> scalar_discriminator(double gain, double bias) {
  Discriminator<double> d;
  d.w1 = Tensor<double>({1, 1}, {1.0}, true);
  d.b1 = Tensor<double>::zeros({1}, true);
  d.w2 = Tensor<double>({1, 1}, {1.0}, true);
  d.b2 = Tensor<double>::zeros({1}, true);
  d.w3 = Tensor<double>({1, 1}, {gain}, true);
  d.b3 = Tensor<double>({1}, {bias}, true);
  return d;
}

Tensor<double> column(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor<double>({n, 1}, std::move(v));
}

std::uint64_t stack_checksum(const DiscriminatorStack<float>& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : s.parameters()) {
    for (float x : p.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &x, sizeof bits);
      h = (h ^ bits) * 1099511628211ull;
    }
  }
  return h;
}

EncoderConfig ffn_config(std::size_t vocab = 30) {
  EncoderConfig c;
  c.num_layers = 2;
  c.d_model = 8;
  c.d_ff = 12;
  c.block_kind = BlockKind::kFfnOnly;
  c.vocab_size = vocab;
  c.max_seq_len = 10;
  return c;
}

std::vector<std::vector<TokenId>> random_sequences(std::size_t n, const EncoderConfig& c, SeededRng& rng) {
  std::vector<std::vector<TokenId>> out(n);
  for (auto& s : out) {
    s.resize(1 + rng.below(c.max_seq_len));
    for (auto& t : s) t = static_cast<TokenId>(rng.below(c.vocab_size));
  }
  return out;
}

double layer_kd(const BasicEncoderBundle<double>& source, const BasicEncoderBundle<double>& target,
                const std::vector<std::vector<TokenId>>& x, std::size_t layer) {
  const auto s = encode(source, pack_batch(x, source.config));
  const auto t = encode(target, pack_batch(x, target.config));
  return kd_loss_layer(*source.heads, layer, s.pooled[layer], t.pooled[layer]).item();
}

struct Fixture {
  Corpus source_train, source_dev;
  UnlabeledCorpus target_train;
  EncoderBundle source;

  explicit Fixture(std::uint64_t seed) {
    SyntheticShiftSpec spec;
    spec.seed = seed;
    spec.shift = 0.9;
    spec.source_train = 160;
    spec.source_dev = 60;
    spec.target_train = 96;
    const auto pair = generate_shift_pair(spec);
    const std::array<RawCorpus, 2> corpora{pair.source_train, pair.target_train};
    const auto vocab = build_vocab(corpora, 1);
    source_train = tokenize(pair.source_train, vocab, 64);
    source_dev = tokenize(pair.source_dev, vocab, 64);
    target_train = strip_labels(tokenize(pair.target_train, vocab, 64));
    EncoderConfig c;
    c.num_layers = 3;
    c.d_model = 16;
    c.d_ff = 24;
    c.vocab_size = vocab.size();
    SeededRng rng(seed);
    SourceTrainConfig sc;
    sc.lr = 1e-3;
    sc.epochs = 1;
    source = train_source(init_encoder<float>(c, rng), source_train, source_dev, sc, rng).bundle;
  }
};

AdaptConfig short_adapt() {
  AdaptConfig c;
  c.epochs = 1;
  c.disc_hidden = 16;
  c.lr_generator = 1e-3;
  c.lr_discriminator = 1e-3;
  return c;
}

}  // namespace

TEST_CASE("discriminator loss closed forms") {
  const auto e_s = column({10.0, 20.0, 5.0});
  const auto e_t = column({-10.0, -20.0, -5.0});

  const auto half = scalar_discriminator(0.0, 0.0);
  CHECK(disc_loss_layer(half, e_s, e_t).item() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));

  const auto perfect = scalar_discriminator(100.0, 0.0);
  CHECK(disc_loss_layer(perfect, e_s, e_t).item() == doctest::Approx(2e-7).epsilon(1e-6));
  CHECK(disc_loss_layer(perfect, e_t, e_s).item() ==
        doctest::Approx(-2.0 * std::log(1e-7)).epsilon(1e-6));
  CHECK(-2.0 * std::log(1e-7) == doctest::Approx(2 * 16.118).epsilon(1e-4));
}

TEST_CASE("generator loss closed forms") {
  const auto fooled = scalar_discriminator(100.0, 0.0);
  CHECK(gen_loss_layer(fooled, column({3.0, 7.0})).item() == doctest::Approx(1e-7).epsilon(1e-6));
  const auto half = scalar_discriminator(0.0, 0.0);
  CHECK(gen_loss_layer(half, column({3.0, -7.0})).item() == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("discriminator outputs stay inside the clamp") {
  const auto d = scalar_discriminator(1e4, 0.0);
  const auto out = d.forward(column({-1e3, 1e3}));
  CHECK(out[0] == doctest::Approx(kProbFloor).epsilon(1e-9));
  CHECK(out[1] == doctest::Approx(1.0 - kProbFloor).epsilon(1e-9));
}

TEST_CASE("generator loss sends no gradient to the discriminator") {
  const auto d = scalar_discriminator(0.7, 0.1);
  const auto e_t = Tensor<double>({2, 1}, {0.4, -0.3}, true);
  GradTape<double> tape;
  Gradients<double> g;
  {
    TapeGuard<double> guard(tape);
    g = backward(tape, gen_loss_layer(d, e_t));
  }
  for (const auto& p : d.parameters()) CHECK_FALSE(g.contains(p));
  CHECK(g.contains(e_t));
}

TEST_CASE("discriminator loss sends no gradient to the features") {
  const auto d = scalar_discriminator(0.7, 0.1);
  const auto e_s = Tensor<double>({2, 1}, {0.4, -0.3}, true);
  const auto e_t = Tensor<double>({2, 1}, {0.2, 0.9}, true);
  GradTape<double> tape;
  Gradients<double> g;
  {
    TapeGuard<double> guard(tape);
    g = backward(tape, disc_loss_layer(d, e_s, e_t));
  }
  CHECK_FALSE(g.contains(e_s));
  CHECK_FALSE(g.contains(e_t));
  CHECK(g.contains(d.w3));
}

TEST_CASE("losses reject a width mismatch") {
  const auto d = scalar_discriminator(1.0, 0.0);
  const auto wide = Tensor<double>::zeros({2, 3});
  CHECK_THROWS_AS(disc_loss_layer(d, wide, column({1.0, 2.0})), ShapeError);
  CHECK_THROWS_AS(gen_loss_layer(d, wide), ShapeError);
}

TEST_CASE("KD is zero right after cloning") {
  SeededRng rng(21);
  auto source = init_encoder<double>(ffn_config(), rng);
  source.freeze();
  const auto target = clone_for_target(source);
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = random_sequences(6, source.config, rng);
    for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(layer_kd(source, target, x, i)) < 1e-9);
  }
}

TEST_CASE("KD is positive under a perturbation and vanishes with it") {
  SeededRng rng(8);
  auto source = init_encoder<double>(ffn_config(), rng);
  source.freeze();
  const auto x = random_sequences(8, source.config, rng);
  std::vector<double> kd;
  for (double delta : {1e-1, 1e-2, 1e-3}) {
    auto target = clone_for_target(source);
    target.blocks[0].ff_in.mutable_data()[3] += delta;
    kd.push_back(layer_kd(source, target, x, 1));
  }
  CHECK(kd[2] > 0.0);
  CHECK(kd[0] > kd[1]);
  CHECK(kd[1] > kd[2]);
}

TEST_CASE("KD gradient never reaches the source encoder") {
  SeededRng rng(9);
  auto source = init_encoder<double>(ffn_config(), rng);
  source.freeze();
  auto target = clone_for_target(source);
  target.blocks[1].ff_out.mutable_data()[0] += 0.05;
  const auto x = random_sequences(4, source.config, rng);
  GradTape<double> tape;
  Gradients<double> g;
  {
    TapeGuard<double> guard(tape);
    const auto s = encode(source, pack_batch(x, source.config));
    const auto t = encode(target, pack_batch(x, target.config));
    g = backward(tape, kd_loss_layer(*source.heads, 1, s.pooled[1], t.pooled[1]));
  }
  for (const auto& p : source.all_parameters()) CHECK(g.of(p) == std::vector<double>(p.size(), 0.0));
  const auto tg = g.of(target.blocks[1].ff_out);
  CHECK(std::any_of(tg.begin(), tg.end(), [](double v) { return v != 0.0; }));
}

TEST_CASE("objectives partition gradients between the two players") {
  Fixture fx(4);
  auto target = clone_for_target(fx.source);
  SeededRng rng(4);
  auto discs = init_discriminators<float>(3, 16, 16, rng);
  const auto x_s = fx.source_train.sequences();
  const std::vector<std::vector<TokenId>> xs(x_s.begin(), x_s.begin() + 8);
  const std::vector<std::vector<TokenId>> xt(fx.target_train.sequences.begin(),
                                             fx.target_train.sequences.begin() + 8);

  const auto source_sum = parameter_checksum(fx.source);
  const auto target_sum = parameter_checksum(target);
  const auto disc_sum = stack_checksum(discs);

  Adam<float> disc_opt(discs.parameters(), AdamConfig{1e-2});
  Adam<float> gen_opt(target.encoder_parameters(), AdamConfig{1e-2});
  GradTape<float> gen_tape;
  TapeGuard<float> gen_guard(gen_tape);
  const auto f = pair_forward(fx.source, target, xs, xt);
  {
    GradTape<float> disc_tape;
    TapeGuard<float> disc_guard(disc_tape);
    disc_opt.step(backward(disc_tape, discriminator_objective(discs, f)));
  }
  CHECK(parameter_checksum(target) == target_sum);
  const auto after_disc = stack_checksum(discs);
  CHECK(after_disc != disc_sum);

  const auto g = generator_objective(*target.heads, discs, f, 1.0);
  CHECK(std::abs(g.kd) < 1e-9);
  gen_opt.step(backward(gen_tape, g.total));
  CHECK(stack_checksum(discs) == after_disc);
  CHECK(parameter_checksum(target) != target_sum);
  CHECK(parameter_checksum(fx.source) == source_sum);
}

TEST_CASE("adapt records a neutral first step and leaves the source untouched") {
  Fixture fx(6);
  const auto source_sum = parameter_checksum(fx.source);
  SeededRng rng(6);
  auto discs = init_discriminators<float>(3, 16, short_adapt().disc_hidden, rng);
  std::size_t probes = 0;
  const auto result = adapt(
      fx.source, clone_for_target(fx.source), discs, fx.source_train, fx.target_train, short_adapt(), rng,
      [&](const EncoderBundle& snapshot, std::size_t epoch, AdaptEpochRecord& record) {
        CHECK(snapshot.frozen);
        CHECK(epoch == probes);
        record.a_distance = 1.0;
        ++probes;
      });
  CHECK(probes == 1);
  REQUIRE(result.history.epochs.size() == 1);
  CHECK(result.history.epochs[0].a_distance == 1.0);

  const auto& steps = result.history.steps;
  REQUIRE(steps.size() == fx.source_train.size() / short_adapt().batch_size);
  CHECK(std::abs(steps[0].kd_loss) < 1e-9);
  CHECK(steps[0].disc_loss == doctest::Approx(2.0 * std::log(2.0)).epsilon(0.3 / (2.0 * std::log(2.0))));

  CHECK(parameter_checksum(fx.source) == source_sum);
  CHECK(result.target.frozen);
  CHECK(result.target.heads == fx.source.heads);
  CHECK(parameter_checksum(result.target) != source_sum);
  CHECK(result.history.to_csv().rfind("step,disc_loss,gen_loss,kd_loss\n1,", 0) == 0);
}

TEST_CASE("adapt is deterministic per seed") {
  Fixture fx(2);
  auto run = [&] {
    SeededRng rng(13);
    auto discs = init_discriminators<float>(3, 16, 16, rng);
    return parameter_checksum(
        adapt(fx.source, clone_for_target(fx.source), discs, fx.source_train, fx.target_train, short_adapt(), rng)
            .target);
  };
  CHECK(run() == run());
}

TEST_CASE("adapt rejects broken setups") {
  Fixture fx(3);
  SeededRng rng(3);
  const auto discs = init_discriminators<float>(3, 16, 16, rng);
  const auto cfg = short_adapt();

  auto frozen_target = clone_for_target(fx.source);
  frozen_target.freeze();
  CHECK_THROWS_AS(adapt(fx.source, frozen_target, discs, fx.source_train, fx.target_train, cfg, rng),
                  ValidationError);

  SeededRng other(99);
  auto stranger = init_encoder<float>(fx.source.config, other);
  CHECK_THROWS_AS(adapt(fx.source, stranger, discs, fx.source_train, fx.target_train, cfg, rng), ValidationError);
  stranger.freeze();
  CHECK_THROWS_AS(
      adapt(stranger, clone_for_target(stranger), init_discriminators<float>(2, 16, 16, rng), fx.source_train,
            fx.target_train, cfg, rng),
      ValidationError);
  CHECK_THROWS_AS(
      adapt(fx.source, clone_for_target(fx.source), init_discriminators<float>(3, 8, 16, rng), fx.source_train,
            fx.target_train, cfg, rng),
      ShapeError);

  AdaptConfig bad = cfg;
  bad.lr_discriminator = 0.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = cfg;
  bad.disc_steps = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}
