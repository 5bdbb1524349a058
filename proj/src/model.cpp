#include "dadee/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "dadee/errors.hpp"

namespace dadee {

std::string to_string(BlockKind kind) {
  return kind == BlockKind::kTransformer ? "transformer" : "ffn-only";
}

std::string to_string(Pooling pooling) {
  return pooling == Pooling::kMean ? "mean" : "first-token";
}

BlockKind parse_block_kind(const std::string& name) {
  if (name == "transformer") return BlockKind::kTransformer;
  if (name == "ffn-only") return BlockKind::kFfnOnly;
  throw ValidationError("block_kind: unknown value '" + name + "' (expected transformer or ffn-only)");
}

Pooling parse_pooling(const std::string& name) {
  if (name == "mean") return Pooling::kMean;
  if (name == "first-token") return Pooling::kFirstToken;
  throw ValidationError("pooling: unknown value '" + name + "' (expected mean or first-token)");
}

void EncoderConfig::validate() const {
  auto positive = [](std::size_t v, const char* field) {
    if (v == 0) throw ValidationError(std::string("encoder config: ") + field + " must be positive");
  };
  positive(d_model, "d_model");
  positive(d_ff, "d_ff");
  positive(vocab_size, "vocab_size");
  positive(max_seq_len, "max_seq_len");
  if (num_layers < 2) throw ValidationError("encoder config: num_layers must be at least 2");
  if (num_classes < 2) throw ValidationError("encoder config: num_classes must be at least 2");
  if (block_kind == BlockKind::kTransformer) {
    positive(n_heads, "n_heads");
    if (d_model % n_heads != 0) {
      throw ValidationError("encoder config: d_model (" + std::to_string(d_model) +
                            ") not divisible by n_heads (" + std::to_string(n_heads) + ")");
    }
  }
}

namespace {

template <std::floating_point T>
Tensor<T> uniform_tensor(Shape shape, double bound, SeededRng& rng) {
  std::vector<T> data(numel(shape));
  for (T& x : data) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(data), true);
}

template <std::floating_point T>
Tensor<T> linear_weight(std::size_t in, std::size_t out, SeededRng& rng) {
  return uniform_tensor<T>(Shape{in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
}

template <std::floating_point T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add(matmul(x, w), b);
}

std::string layer_name(const char* group, std::size_t i, const char* leaf) {
  return std::string(group) + "." + std::to_string(i) + "." + leaf;
}

}  // namespace

template <std::floating_point T>
std::vector<std::pair<std::string, Tensor<T>>> BasicEncoderBundle<T>::named_tensors() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  out.emplace_back("embedding.token", token_embedding);
  if (position_embedding.defined()) out.emplace_back("embedding.position", position_embedding);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    if (b.wq.defined()) {
      out.emplace_back(layer_name("blocks", i, "attn.wq"), b.wq);
      out.emplace_back(layer_name("blocks", i, "attn.bq"), b.bq);
      out.emplace_back(layer_name("blocks", i, "attn.wk"), b.wk);
      out.emplace_back(layer_name("blocks", i, "attn.bk"), b.bk);
      out.emplace_back(layer_name("blocks", i, "attn.wv"), b.wv);
      out.emplace_back(layer_name("blocks", i, "attn.bv"), b.bv);
      out.emplace_back(layer_name("blocks", i, "attn.wo"), b.wo);
      out.emplace_back(layer_name("blocks", i, "attn.bo"), b.bo);
      out.emplace_back(layer_name("blocks", i, "attn_norm.gamma"), b.attn_norm_gamma);
      out.emplace_back(layer_name("blocks", i, "attn_norm.beta"), b.attn_norm_beta);
    }
    out.emplace_back(layer_name("blocks", i, "ff.in"), b.ff_in);
    out.emplace_back(layer_name("blocks", i, "ff.in_bias"), b.ff_in_bias);
    out.emplace_back(layer_name("blocks", i, "ff.out"), b.ff_out);
    out.emplace_back(layer_name("blocks", i, "ff.out_bias"), b.ff_out_bias);
    out.emplace_back(layer_name("blocks", i, "ff_norm.gamma"), b.ff_norm_gamma);
    out.emplace_back(layer_name("blocks", i, "ff_norm.beta"), b.ff_norm_beta);
  }
  for (std::size_t i = 0; i < heads->weight.size(); ++i) {
    out.emplace_back(layer_name("heads", i, "weight"), heads->weight[i]);
    out.emplace_back(layer_name("heads", i, "bias"), heads->bias[i]);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

template <std::floating_point T>
std::vector<Tensor<T>> BasicEncoderBundle<T>::encoder_parameters() const {
  std::vector<Tensor<T>> out;
  for (const auto& [name, t] : named_tensors()) {
    if (name.rfind("heads.", 0) != 0) out.push_back(t);
  }
  return out;
}

template <std::floating_point T>
std::vector<Tensor<T>> BasicEncoderBundle<T>::head_parameters() const {
  std::vector<Tensor<T>> out;
  for (std::size_t i = 0; i < heads->weight.size(); ++i) {
    out.push_back(heads->weight[i]);
    out.push_back(heads->bias[i]);
  }
  return out;
}

template <std::floating_point T>
std::vector<Tensor<T>> BasicEncoderBundle<T>::all_parameters() const {
  std::vector<Tensor<T>> out;
  for (const auto& [name, t] : named_tensors()) out.push_back(t);
  return out;
}

template <std::floating_point T>
void BasicEncoderBundle<T>::freeze() {
  for (auto& t : all_parameters()) t.set_requires_grad(false);
  frozen = true;
  heads->frozen = true;
}

template <std::floating_point T>
BasicEncoderBundle<T> init_encoder(const EncoderConfig& config, SeededRng& rng) {
  config.validate();
  const std::size_t d = config.d_model;
  const double embed_bound = 1.0 / std::sqrt(static_cast<double>(d));
  BasicEncoderBundle<T> bundle;
  bundle.config = config;
  bundle.token_embedding = uniform_tensor<T>(Shape{config.vocab_size, d}, embed_bound, rng);
  const bool attention = config.block_kind == BlockKind::kTransformer;
  if (attention) {
    bundle.position_embedding = uniform_tensor<T>(Shape{config.max_seq_len, d}, embed_bound, rng);
  }
  for (std::size_t i = 0; i < config.num_layers; ++i) {
    EncoderBlock<T> b;
    if (attention) {
      b.wq = linear_weight<T>(d, d, rng);
      b.bq = Tensor<T>::zeros({d}, true);
      b.wk = linear_weight<T>(d, d, rng);
      b.bk = Tensor<T>::zeros({d}, true);
      b.wv = linear_weight<T>(d, d, rng);
      b.bv = Tensor<T>::zeros({d}, true);
      b.wo = linear_weight<T>(d, d, rng);
      b.bo = Tensor<T>::zeros({d}, true);
      b.attn_norm_gamma = Tensor<T>::full({d}, T(1), true);
      b.attn_norm_beta = Tensor<T>::zeros({d}, true);
    }
    b.ff_in = linear_weight<T>(d, config.d_ff, rng);
    b.ff_in_bias = Tensor<T>::zeros({config.d_ff}, true);
    b.ff_out = linear_weight<T>(config.d_ff, d, rng);
    b.ff_out_bias = Tensor<T>::zeros({d}, true);
    b.ff_norm_gamma = Tensor<T>::full({d}, T(1), true);
    b.ff_norm_beta = Tensor<T>::zeros({d}, true);
    bundle.blocks.push_back(std::move(b));
  }
  bundle.heads = std::make_shared<ExitHeads<T>>();
  for (std::size_t i = 0; i < config.num_layers; ++i) {
    bundle.heads->weight.push_back(linear_weight<T>(d, config.num_classes, rng));
    bundle.heads->bias.push_back(Tensor<T>::zeros({config.num_classes}, true));
  }
  return bundle;
}

template <std::floating_point T>
BasicEncoderBundle<T> clone_for_target(const BasicEncoderBundle<T>& source) {
  if (!source.frozen) {
    throw ValidationError("clone_for_target: source encoder is not frozen; finish source training first");
  }
  auto trainable = [](const Tensor<T>& t) {
    if (!t.defined()) return Tensor<T>();
    Tensor<T> c = t.clone();
    c.set_requires_grad(true);
    return c;
  };
  BasicEncoderBundle<T> target;
  target.config = source.config;
  target.token_embedding = trainable(source.token_embedding);
  target.position_embedding = trainable(source.position_embedding);
  for (const auto& b : source.blocks) {
    target.blocks.push_back(EncoderBlock<T>{
        trainable(b.wq), trainable(b.bq), trainable(b.wk), trainable(b.bk), trainable(b.wv),
        trainable(b.bv), trainable(b.wo), trainable(b.bo), trainable(b.attn_norm_gamma),
        trainable(b.attn_norm_beta), trainable(b.ff_in), trainable(b.ff_in_bias),
        trainable(b.ff_out), trainable(b.ff_out_bias), trainable(b.ff_norm_gamma),
        trainable(b.ff_norm_beta)});
  }
  target.heads = source.heads;
  target.frozen = false;
  return target;
}

template <std::floating_point T>
std::uint64_t parameter_checksum(const BasicEncoderBundle<T>& bundle) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const unsigned char* bytes, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : bundle.named_tensors()) {
    mix(reinterpret_cast<const unsigned char*>(name.data()), name.size());
    auto v = t.data();
    mix(reinterpret_cast<const unsigned char*>(v.data()), v.size_bytes());
  }
  return h;
}

PackedBatch pack_batch(std::span<const std::vector<TokenId>> sequences, const EncoderConfig& config) {
  if (sequences.empty()) throw ValidationError("encode: empty batch");
  PackedBatch batch;
  batch.segments.push_back(0);
  for (const auto& seq : sequences) {
    if (seq.empty()) throw ValidationError("encode: empty token sequence");
    if (seq.size() > config.max_seq_len) {
      throw ValidationError("encode: sequence of length " + std::to_string(seq.size()) +
                            " exceeds max_seq_len " + std::to_string(config.max_seq_len));
    }
    for (std::size_t p = 0; p < seq.size(); ++p) {
      if (seq[p] < 0 || static_cast<std::size_t>(seq[p]) >= config.vocab_size) {
        throw ValidationError("encode: token id " + std::to_string(seq[p]) +
                              " outside vocabulary of size " + std::to_string(config.vocab_size));
      }
      batch.ids.push_back(seq[p]);
      batch.positions.push_back(p);
    }
    batch.segments.push_back(batch.ids.size());
  }
  return batch;
}

PackedBatch pack_batch(std::span<const TokenId> sequence, const EncoderConfig& config) {
  const std::vector<TokenId> one(sequence.begin(), sequence.end());
  return pack_batch(std::span<const std::vector<TokenId>>(&one, 1), config);
}

template <std::floating_point T>
Tensor<T> apply_head(const ExitHeads<T>& heads, std::size_t layer, const Tensor<T>& pooled) {
  if (layer >= heads.weight.size()) {
    throw ValidationError("apply_head: layer " + std::to_string(layer + 1) + " out of range");
  }
  return linear(pooled, heads.weight[layer], heads.bias[layer]);
}

template <std::floating_point T>
EncoderPass<T>::EncoderPass(const BasicEncoderBundle<T>& bundle, const PackedBatch& batch)
    : bundle_(bundle), segments_(batch.segments) {
  hidden_ = embedding(bundle.token_embedding, std::span<const TokenId>(batch.ids));
  if (bundle.config.block_kind == BlockKind::kTransformer) {
    std::vector<TokenId> pos(batch.positions.begin(), batch.positions.end());
    hidden_ = add(hidden_, embedding(bundle.position_embedding, std::span<const TokenId>(pos)));
  }
}

template <std::floating_point T>
LayerResult<T> EncoderPass<T>::next() {
  const EncoderConfig& cfg = bundle_.config;
  if (finished()) throw ValidationError("EncoderPass: all layers already computed");
  const EncoderBlock<T>& b = bundle_.blocks[layer_];
  Tensor<T> h = hidden_;
  if (cfg.block_kind == BlockKind::kTransformer) {
    const Tensor<T> q = linear(h, b.wq, b.bq);
    const Tensor<T> k = linear(h, b.wk, b.bk);
    const Tensor<T> v = linear(h, b.wv, b.bv);
    const Tensor<T> attn = linear(segment_attention(q, k, v, segments_, cfg.n_heads), b.wo, b.bo);
    h = layer_norm(add(h, attn), b.attn_norm_gamma, b.attn_norm_beta);
  }
  const Tensor<T> ff = linear(gelu(linear(h, b.ff_in, b.ff_in_bias)), b.ff_out, b.ff_out_bias);
  h = layer_norm(add(h, ff), b.ff_norm_gamma, b.ff_norm_beta);
  hidden_ = h;

  LayerResult<T> r;
  r.pooled = cfg.pooling == Pooling::kMean ? segment_mean(h, segments_) : segment_first(h, segments_);
  r.logits = apply_head(*bundle_.heads, layer_, r.pooled);
  r.probs = softmax(r.logits);
  ++layer_;
  return r;
}

template <std::floating_point T>
LayerOutputs<T> encode(const BasicEncoderBundle<T>& bundle, const PackedBatch& batch) {
  EncoderPass<T> pass(bundle, batch);
  LayerOutputs<T> out;
  while (!pass.finished()) {
    LayerResult<T> r = pass.next();
    out.pooled.push_back(std::move(r.pooled));
    out.logits.push_back(std::move(r.logits));
    out.probs.push_back(std::move(r.probs));
  }
  return out;
}

LayerOutputs<float> encode(const EncoderBundle& bundle, std::span<const TokenId> token_ids) {
  return encode(bundle, pack_batch(token_ids, bundle.config));
}

#define DADEE_INSTANTIATE_MODEL(T)                                                            \
  template struct BasicEncoderBundle<T>;                                                    \
  template BasicEncoderBundle<T> init_encoder<T>(const EncoderConfig&, SeededRng&);         \
  template BasicEncoderBundle<T> clone_for_target(const BasicEncoderBundle<T>&);            \
  template std::uint64_t parameter_checksum(const BasicEncoderBundle<T>&);                  \
  template Tensor<T> apply_head(const ExitHeads<T>&, std::size_t, const Tensor<T>&);        \
  template class EncoderPass<T>;                                                            \
  template LayerOutputs<T> encode(const BasicEncoderBundle<T>&, const PackedBatch&);

DADEE_INSTANTIATE_MODEL(float)
DADEE_INSTANTIATE_MODEL(double)

#undef DADEE_INSTANTIATE_MODEL

}  // namespace dadee
