#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dadee/ops.hpp"
#include "dadee/rng.hpp"
#include "dadee/tensor.hpp"

namespace dadee {

enum class BlockKind { kTransformer, kFfnOnly };
enum class Pooling { kMean, kFirstToken };

std::string to_string(BlockKind kind);
std::string to_string(Pooling pooling);
BlockKind parse_block_kind(const std::string& name);
Pooling parse_pooling(const std::string& name);

struct EncoderConfig {
  std::size_t num_layers = 6;
  std::size_t d_model = 64;
  BlockKind block_kind = BlockKind::kTransformer;
  std::size_t n_heads = 2;
  std::size_t d_ff = 128;
  std::size_t vocab_size = 0;
  std::size_t max_seq_len = 64;
  std::size_t num_classes = 2;
  Pooling pooling = Pooling::kMean;

  // Throws ValidationError naming the offending field.
  void validate() const;

  bool operator==(const EncoderConfig&) const = default;
};

// One encoder layer. The attention tensors are left undefined for ffn-only
// blocks. Post-norm residual layout: h = LN(h + Attn(h)); h = LN(h + FFN(h)).
template <std::floating_point T>
struct EncoderBlock {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> attn_norm_gamma, attn_norm_beta;
  Tensor<T> ff_in, ff_in_bias, ff_out, ff_out_bias;
  Tensor<T> ff_norm_gamma, ff_norm_beta;
};

// Exit classifier i: logits = pooled_i * weight[i] + bias[i].
template <std::floating_point T>
struct ExitHeads {
  std::vector<Tensor<T>> weight;  // [d_model, num_classes]
  std::vector<Tensor<T>> bias;    // [num_classes]
  bool frozen = false;
};

template <std::floating_point T>
struct BasicEncoderBundle {
  EncoderConfig config;
  Tensor<T> token_embedding;     // [vocab_size, d_model]
  Tensor<T> position_embedding;  // [max_seq_len, d_model]; transformer blocks only
  std::vector<EncoderBlock<T>> blocks;
  // Shared between a source bundle and the targets cloned from it.
  std::shared_ptr<ExitHeads<T>> heads;
  bool frozen = false;

  // Stable names ("blocks.0.ff_in", "heads.2.weight", ...) sorted by name.
  std::vector<std::pair<std::string, Tensor<T>>> named_tensors() const;
  // Embeddings and blocks; excludes exit heads.
  std::vector<Tensor<T>> encoder_parameters() const;
  std::vector<Tensor<T>> head_parameters() const;
  std::vector<Tensor<T>> all_parameters() const;

  // Freezes encoder and heads; clears requires_grad everywhere.
  void freeze();
};

using EncoderBundle = BasicEncoderBundle<float>;

template <std::floating_point T>
BasicEncoderBundle<T> init_encoder(const EncoderConfig& config, SeededRng& rng);

// Target encoder for adaptation: deep copy of embeddings and blocks, unfrozen,
// sharing the source's frozen heads. Rejects an unfrozen source.
template <std::floating_point T>
BasicEncoderBundle<T> clone_for_target(const BasicEncoderBundle<T>& source);

// FNV-1a over every named tensor's bytes, heads included.
template <std::floating_point T>
std::uint64_t parameter_checksum(const BasicEncoderBundle<T>& bundle);

// Variable-length sequences packed row-wise for one forward pass.
struct PackedBatch {
  std::vector<TokenId> ids;
  std::vector<std::size_t> positions;  // position of each id within its sequence
  Segments segments;

  std::size_t batch_size() const { return segments.size() - 1; }
};

// Validates ids against the config (non-empty, < vocab_size, <= max_seq_len).
PackedBatch pack_batch(std::span<const std::vector<TokenId>> sequences, const EncoderConfig& config);
PackedBatch pack_batch(std::span<const TokenId> sequence, const EncoderConfig& config);

template <std::floating_point T>
struct LayerResult {
  Tensor<T> pooled;  // [B, d_model]
  Tensor<T> logits;  // [B, num_classes]
  Tensor<T> probs;   // [B, num_classes]
};

template <std::floating_point T>
struct LayerOutputs {
  std::vector<Tensor<T>> pooled;
  std::vector<Tensor<T>> logits;
  std::vector<Tensor<T>> probs;
};

template <std::floating_point T>
Tensor<T> apply_head(const ExitHeads<T>& heads, std::size_t layer, const Tensor<T>& pooled);

// Layer-at-a-time forward pass; the caller decides how deep to go.
template <std::floating_point T>
class EncoderPass {
 public:
  EncoderPass(const BasicEncoderBundle<T>& bundle, const PackedBatch& batch);

  std::size_t layers_done() const { return layer_; }
  bool finished() const { return layer_ == bundle_.config.num_layers; }

  // Runs block `layers_done()` and its exit head.
  LayerResult<T> next();

 private:
  const BasicEncoderBundle<T>& bundle_;
  Segments segments_;
  Tensor<T> hidden_;
  std::size_t layer_ = 0;
};

// Full forward pass over all L layers.
template <std::floating_point T>
LayerOutputs<T> encode(const BasicEncoderBundle<T>& bundle, const PackedBatch& batch);

LayerOutputs<float> encode(const EncoderBundle& bundle, std::span<const TokenId> token_ids);

}  // namespace dadee
