#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dadee/ops.hpp"
#include "dadee/rng.hpp"

namespace dadee {

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;

enum class CorpusRole { kSourceTrain, kSourceDev, kSourceTest, kTargetTrain, kTargetTest };

std::string to_string(CorpusRole role);

struct RawExample {
  std::string text;
  std::optional<std::size_t> label;
};

struct RawCorpus {
  CorpusRole role = CorpusRole::kSourceTrain;
  std::string domain;
  std::vector<RawExample> examples;
};

struct Example {
  std::vector<TokenId> ids;
  std::optional<std::size_t> label;
};

struct Corpus {
  CorpusRole role = CorpusRole::kSourceTrain;
  std::string domain;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
  // True when every example carries a label.
  bool labeled() const;
  std::vector<std::vector<TokenId>> sequences() const;
  std::vector<std::size_t> labels() const;  // throws ValidationError if unlabeled
};

// Inputs of the target domain with labels removed; the adaptation API only
// accepts this type.
struct UnlabeledCorpus {
  std::string domain;
  std::vector<std::vector<TokenId>> sequences;

  std::size_t size() const { return sequences.size(); }
};

UnlabeledCorpus strip_labels(const Corpus& corpus);

std::vector<std::string> whitespace_tokenize(std::string_view text);

// Ids: 0 = <pad>, 1 = <unk>, then tokens by descending count, ties broken
// lexicographically.
class Vocabulary {
 public:
  static Vocabulary build(std::span<const RawCorpus> corpora, std::size_t min_count);
  // Token i gets id i; tokens[0] and tokens[1] must be "<pad>" and "<unk>".
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  TokenId id(const std::string& token) const;
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t count(TokenId id) const { return counts_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Whitespace tokenization, UNK for unknown tokens, truncated to max_len.
  std::vector<TokenId> encode(std::string_view text, std::size_t max_len) const;

 private:
  std::vector<std::string> tokens_;
  std::vector<std::size_t> counts_;
  std::unordered_map<std::string, TokenId> index_;
};

// Counts tokens over every given corpus (source-train and target-train text).
Vocabulary build_vocab(std::span<const RawCorpus> corpora, std::size_t min_count);

struct TsvOptions {
  bool labeled = true;  // rows are "label<TAB>text"; otherwise the whole row is text
  std::size_t num_classes = 2;
  CorpusRole role = CorpusRole::kSourceTrain;
  std::string domain;
};

// Errors name the file and the 1-based line number.
RawCorpus read_tsv(const std::filesystem::path& path, const TsvOptions& options);
Corpus tokenize(const RawCorpus& raw, const Vocabulary& vocab, std::size_t max_seq_len);
Corpus load_tsv(const std::filesystem::path& path, const Vocabulary& vocab, const TsvOptions& options,
                std::size_t max_seq_len);

// Two-domain text generator. Each position is either a neutral token shared by
// both domains or, with probability indicative_rate, a token indicating the
// sentence's class. An indicative token comes from the domain's exclusive set
// for that class with probability `shift`, else from a class set shared by
// both domains.
struct SyntheticShiftSpec {
  std::size_t num_classes = 2;
  std::size_t neutral_tokens = 200;
  std::size_t shared_tokens_per_class = 10;
  std::size_t exclusive_tokens_per_class = 50;
  double indicative_rate = 0.6;
  double shift = 0.5;
  std::size_t min_length = 16;
  std::size_t max_length = 24;
  double label_noise = 0.05;
  std::size_t source_train = 1000;
  std::size_t source_dev = 200;
  std::size_t source_test = 500;
  std::size_t target_train = 1000;
  std::size_t target_test = 500;
  std::uint64_t seed = 1;

  void validate() const;
};

struct ShiftPair {
  RawCorpus source_train, source_dev, source_test;
  // target_train keeps its labels for diagnostics only; the adapter receives
  // strip_labels() of it.
  RawCorpus target_train, target_test;
};

ShiftPair generate_shift_pair(const SyntheticShiftSpec& spec);

struct LabeledBatch {
  std::vector<std::vector<TokenId>> sequences;
  std::vector<std::size_t> labels;
};

struct PairedBatch {
  LabeledBatch source;
  std::vector<std::vector<TokenId>> target;
};

// One shuffled pass over a labeled corpus; the last batch may be short.
std::vector<LabeledBatch> labeled_batches(const Corpus& corpus, std::size_t batch_size, SeededRng& rng);

// Equal-size (source, target) batch pairs. An epoch covers the longer corpus
// once in a fresh order (a tail shorter than a batch is dropped); the shorter
// corpus is drawn from a continuous stream of reshuffled passes.
class PairedBatcher {
 public:
  PairedBatcher(const Corpus& source, const UnlabeledCorpus& target, std::size_t batch_size);

  std::size_t steps_per_epoch() const;
  std::vector<PairedBatch> epoch(SeededRng& rng);

 private:
  std::vector<std::size_t> draw(std::size_t n, std::vector<std::size_t>& order, std::size_t& cursor,
                                SeededRng& rng);

  const Corpus& source_;
  const UnlabeledCorpus& target_;
  std::size_t batch_size_;
  std::vector<std::size_t> source_order_, target_order_;
  std::size_t source_cursor_ = 0, target_cursor_ = 0;
};

}  // namespace dadee
