#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dadee/data.hpp"
#include "dadee/errors.hpp"
#include "dadee/losses.hpp"
#include "dadee/model.hpp"

using namespace dadee;

namespace {

EncoderConfig small_config(BlockKind kind = BlockKind::kTransformer) {
  EncoderConfig c;
  c.num_layers = 3;
  c.d_model = 16;
  c.d_ff = 24;
  c.n_heads = 2;
  c.vocab_size = 50;
  c.max_seq_len = 12;
  c.block_kind = kind;
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

template <typename T>
bool same_values(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST_CASE("init_encoder is deterministic per seed") {
  SeededRng r1(4), r2(4), r3(5);
  const auto a = init_encoder<float>(small_config(), r1);
  const auto b = init_encoder<float>(small_config(), r2);
  const auto c = init_encoder<float>(small_config(), r3);
  CHECK(parameter_checksum(a) == parameter_checksum(b));
  CHECK(parameter_checksum(a) != parameter_checksum(c));
}

TEST_CASE("default config has one head per layer of the right shape") {
  EncoderConfig cfg;
  cfg.vocab_size = 100;
  SeededRng rng(1);
  const auto bundle = init_encoder<float>(cfg, rng);
  REQUIRE(bundle.heads->weight.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(bundle.heads->weight[i].shape() == Shape{64, 2});
    CHECK(bundle.heads->bias[i].shape() == Shape{2});
  }
  CHECK_FALSE(bundle.frozen);
}

TEST_CASE("initializer follows the fan-in bound with zero biases") {
  SeededRng rng(2);
  const auto bundle = init_encoder<double>(small_config(), rng);
  const double bound = 1.0 / std::sqrt(16.0);
  for (double v : bundle.blocks[0].wq.data()) CHECK(std::abs(v) <= bound);
  for (double v : bundle.blocks[0].ff_out.data()) CHECK(std::abs(v) <= 1.0 / std::sqrt(24.0));
  for (double v : bundle.blocks[1].bq.data()) CHECK(v == 0.0);
  for (double v : bundle.blocks[1].ff_norm_gamma.data()) CHECK(v == 1.0);
}

TEST_CASE("config validation names the offending field") {
  auto cfg = small_config();
  cfg.d_model = 15;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("d_model"), ValidationError);
  cfg = small_config();
  cfg.num_layers = 1;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("num_layers"), ValidationError);
  cfg = small_config();
  cfg.vocab_size = 0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("vocab_size"), ValidationError);
  CHECK_THROWS_AS(parse_block_kind("lstm"), ValidationError);
  CHECK(parse_pooling("first-token") == Pooling::kFirstToken);
}

TEST_CASE("encode yields L pooled vectors and valid distributions") {
  for (auto kind : {BlockKind::kTransformer, BlockKind::kFfnOnly}) {
    const auto cfg = small_config(kind);
    SeededRng rng(7);
    const auto bundle = init_encoder<float>(cfg, rng);
    for (const auto& seq : random_sequences(20, cfg, rng)) {
      const auto out = encode(bundle, std::span<const TokenId>(seq));
      REQUIRE(out.probs.size() == cfg.num_layers);
      REQUIRE(out.pooled.size() == cfg.num_layers);
      for (std::size_t i = 0; i < cfg.num_layers; ++i) {
        CHECK(out.pooled[i].shape() == Shape{1, cfg.d_model});
        double total = 0;
        for (float p : out.probs[i].data()) {
          CHECK(p >= 0.f);
          total += p;
        }
        CHECK(std::abs(total - 1.0) < 1e-5);
      }
    }
  }
}

TEST_CASE("batched encode matches per-sequence encode") {
  const auto cfg = small_config();
  SeededRng rng(8);
  const auto bundle = init_encoder<double>(cfg, rng);
  const auto seqs = random_sequences(5, cfg, rng);
  const auto batched = encode(bundle, pack_batch(seqs, cfg));
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto single = encode(bundle, pack_batch(std::span<const TokenId>(seqs[s]), cfg));
    for (std::size_t i = 0; i < cfg.num_layers; ++i)
      for (std::size_t c = 0; c < cfg.num_classes; ++c)
        CHECK(single.probs[i][c] == doctest::Approx(batched.probs[i][s * cfg.num_classes + c]).epsilon(1e-12));
  }
}

TEST_CASE("mean pooling with ffn-only blocks is order invariant") {
  const auto cfg = small_config(BlockKind::kFfnOnly);
  SeededRng rng(9);
  const auto bundle = init_encoder<double>(cfg, rng);
  std::vector<TokenId> seq = {3, 14, 15, 9, 26, 5};
  const auto a = encode(bundle, pack_batch(std::span<const TokenId>(seq), cfg));
  std::reverse(seq.begin(), seq.end());
  const auto b = encode(bundle, pack_batch(std::span<const TokenId>(seq), cfg));
  for (std::size_t k = 0; k < cfg.d_model; ++k) CHECK(a.pooled[0][k] == doctest::Approx(b.pooled[0][k]).epsilon(1e-12));
}

TEST_CASE("encode is a pure function") {
  const auto cfg = small_config();
  SeededRng rng(10);
  const auto bundle = init_encoder<float>(cfg, rng);
  const std::vector<TokenId> seq = {4, 8, 15, 16, 23, 42};
  const auto a = encode(bundle, std::span<const TokenId>(seq));
  const auto b = encode(bundle, std::span<const TokenId>(seq));
  for (std::size_t i = 0; i < cfg.num_layers; ++i) {
    CHECK(same_values(a.pooled[i], b.pooled[i]));
    CHECK(same_values(a.probs[i], b.probs[i]));
  }
}

TEST_CASE("encode rejects empty and out-of-range input") {
  const auto cfg = small_config();
  SeededRng rng(11);
  const auto bundle = init_encoder<float>(cfg, rng);
  const std::vector<TokenId> empty;
  CHECK_THROWS_AS(encode(bundle, std::span<const TokenId>(empty)), ValidationError);
  const std::vector<TokenId> big = {1, 50};
  CHECK_THROWS_AS(encode(bundle, std::span<const TokenId>(big)), ValidationError);
  const std::vector<TokenId> negative = {-1};
  CHECK_THROWS_AS(encode(bundle, std::span<const TokenId>(negative)), ValidationError);
  const std::vector<TokenId> longer(13, 2);
  CHECK_THROWS_AS(encode(bundle, std::span<const TokenId>(longer)), ValidationError);
}

TEST_CASE("clone_for_target copies outputs and shares heads") {
  const auto cfg = small_config();
  SeededRng rng(12);
  auto source = init_encoder<float>(cfg, rng);
  CHECK_THROWS_AS(clone_for_target(source), ValidationError);
  source.freeze();
  auto target = clone_for_target(source);
  CHECK_FALSE(target.frozen);
  CHECK(target.heads == source.heads);
  for (const auto& seq : random_sequences(10, cfg, rng)) {
    const auto a = encode(source, std::span<const TokenId>(seq));
    const auto b = encode(target, std::span<const TokenId>(seq));
    for (std::size_t i = 0; i < cfg.num_layers; ++i) {
      CHECK(same_values(a.pooled[i], b.pooled[i]));
      CHECK(same_values(a.probs[i], b.probs[i]));
    }
  }

  const auto before = parameter_checksum(source);
  const std::vector<TokenId> seq = {5, 6, 7};
  const auto src_out = encode(source, std::span<const TokenId>(seq));
  target.blocks[0].ff_in.mutable_data()[3] += 0.5f;
  target.token_embedding.mutable_data()[0] = 9.f;
  CHECK(parameter_checksum(source) == before);
  CHECK(same_values(encode(source, std::span<const TokenId>(seq)).probs[2], src_out.probs[2]));
  CHECK_FALSE(same_values(encode(target, std::span<const TokenId>(seq)).probs[2], src_out.probs[2]));
}

TEST_CASE("frozen heads get zero gradient while blocks get some") {
  const auto cfg = small_config();
  SeededRng rng(13);
  auto source = init_encoder<double>(cfg, rng);
  source.freeze();
  auto target = clone_for_target(source);
  const auto seqs = random_sequences(4, cfg, rng);
  GradTape<double> tape;
  Tensor<double> loss;
  {
    TapeGuard<double> guard(tape);
    const auto out = encode(target, pack_batch(seqs, cfg));
    const std::vector<std::size_t> labels = {0, 1, 1, 0};
    loss = cross_entropy_with_logits(out.logits[2], labels);
  }
  const auto grads = backward(tape, loss);
  for (const auto& h : target.head_parameters())
    for (double g : grads.of(h)) CHECK(g == 0.0);
  double block_norm = 0;
  for (const auto& p : target.encoder_parameters())
    for (double g : grads.of(p)) block_norm += g * g;
  CHECK(block_norm > 0.0);
}

TEST_CASE("named tensors are sorted and cover every parameter") {
  const auto cfg = small_config();
  SeededRng rng(14);
  const auto bundle = init_encoder<float>(cfg, rng);
  const auto named = bundle.named_tensors();
  CHECK(std::is_sorted(named.begin(), named.end(), [](const auto& a, const auto& b) { return a.first < b.first; }));
  CHECK(named.size() == bundle.all_parameters().size());
  CHECK(std::any_of(named.begin(), named.end(), [](const auto& p) { return p.first == "heads.2.weight"; }));
}

TEST_CASE("untrained model is near chance at every exit") {
  SyntheticShiftSpec spec;
  spec.source_train = 1000;
  const auto pair = generate_shift_pair(spec);
  const std::vector<RawCorpus> corpora = {pair.source_train};
  const auto vocab = build_vocab(corpora, 1);
  EncoderConfig cfg;
  cfg.num_layers = 3;
  cfg.d_model = 32;
  cfg.d_ff = 32;
  cfg.vocab_size = vocab.size();
  const auto corpus = tokenize(pair.source_train, vocab, cfg.max_seq_len);
  SeededRng rng(15);
  const auto bundle = init_encoder<float>(cfg, rng);
  const auto seqs = corpus.sequences();
  const auto labels = corpus.labels();
  const auto out = encode(bundle, pack_batch(seqs, cfg));
  for (std::size_t i = 0; i < cfg.num_layers; ++i) {
    std::size_t correct = 0;
    for (std::size_t s = 0; s < seqs.size(); ++s) {
      const std::size_t pred = out.probs[i][s * 2 + 1] > out.probs[i][s * 2] ? 1 : 0;
      correct += pred == labels[s];
    }
    CHECK(std::abs(static_cast<double>(correct) / seqs.size() - 0.5) <= 0.1);
  }
}
