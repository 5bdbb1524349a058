#include "dadee/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>

#include "dadee/errors.hpp"

namespace dadee {

std::string to_string(CorpusRole role) {
  switch (role) {
    case CorpusRole::kSourceTrain: return "source-train";
    case CorpusRole::kSourceDev: return "source-dev";
    case CorpusRole::kSourceTest: return "source-test";
    case CorpusRole::kTargetTrain: return "target-train";
    case CorpusRole::kTargetTest: return "target-test";
  }
  return "unknown";
}

bool Corpus::labeled() const {
  return std::all_of(examples.begin(), examples.end(), [](const Example& e) { return e.label.has_value(); });
}

std::vector<std::vector<TokenId>> Corpus::sequences() const {
  std::vector<std::vector<TokenId>> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(e.ids);
  return out;
}

std::vector<std::size_t> Corpus::labels() const {
  std::vector<std::size_t> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!examples[i].label) {
      throw ValidationError("corpus " + to_string(role) + ": example " + std::to_string(i) + " has no label");
    }
    out.push_back(*examples[i].label);
  }
  return out;
}

UnlabeledCorpus strip_labels(const Corpus& corpus) {
  return UnlabeledCorpus{corpus.domain, corpus.sequences()};
}

std::vector<std::string> whitespace_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

Vocabulary Vocabulary::build(std::span<const RawCorpus> corpora, std::size_t min_count) {
  if (corpora.empty()) throw ValidationError("build_vocab: no corpora given");
  if (min_count < 1) throw ValidationError("build_vocab: min_count must be at least 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& corpus : corpora)
    for (const auto& ex : corpus.examples)
      for (auto& tok : whitespace_tokenize(ex.text)) ++counts[std::move(tok)];

  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : counts)
    if (n >= min_count) ranked.emplace_back(tok, n);
  // std::map iteration is already lexicographic; stable sort keeps that as the tie-break.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocabulary v;
  v.tokens_ = {"<pad>", "<unk>"};
  v.counts_ = {0, 0};
  for (auto& [tok, n] : ranked) {
    v.tokens_.push_back(tok);
    v.counts_.push_back(n);
  }
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.index_[v.tokens_[i]] = static_cast<TokenId>(i);
  return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>") {
    throw ValidationError("vocabulary must start with <pad>, <unk>");
  }
  Vocabulary v;
  v.counts_.assign(tokens.size(), 0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!v.index_.emplace(tokens[i], static_cast<TokenId>(i)).second) {
      throw ValidationError("vocabulary: duplicate token '" + tokens[i] + "'");
    }
  }
  v.tokens_ = std::move(tokens);
  return v;
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

std::vector<TokenId> Vocabulary::encode(std::string_view text, std::size_t max_len) const {
  std::vector<TokenId> ids;
  for (const auto& tok : whitespace_tokenize(text)) {
    if (ids.size() == max_len) break;
    ids.push_back(id(tok));
  }
  return ids;
}

Vocabulary build_vocab(std::span<const RawCorpus> corpora, std::size_t min_count) {
  return Vocabulary::build(corpora, min_count);
}

RawCorpus read_tsv(const std::filesystem::path& path, const TsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  RawCorpus corpus;
  corpus.role = options.role;
  corpus.domain = options.domain.empty() ? path.stem().string() : options.domain;

  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (whitespace_tokenize(line).empty()) continue;
    RawExample ex;
    if (options.labeled) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) fail("expected \"label<TAB>text\", found no label column");
      const std::string_view field(line.data(), tab);
      std::size_t label = 0;
      const auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), label);
      if (ec != std::errc() || end != field.data() + field.size() || field.empty()) {
        fail("label '" + std::string(field) + "' is not a non-negative integer");
      }
      if (label >= options.num_classes) {
        fail("label " + std::to_string(label) + " outside {0.." + std::to_string(options.num_classes - 1) + "}");
      }
      ex.label = label;
      ex.text = line.substr(tab + 1);
      if (whitespace_tokenize(ex.text).empty()) fail("empty text");
    } else {
      ex.text = line;
    }
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

Corpus tokenize(const RawCorpus& raw, const Vocabulary& vocab, std::size_t max_seq_len) {
  if (max_seq_len == 0) throw ValidationError("tokenize: max_seq_len must be positive");
  Corpus corpus;
  corpus.role = raw.role;
  corpus.domain = raw.domain;
  corpus.examples.reserve(raw.examples.size());
  for (std::size_t i = 0; i < raw.examples.size(); ++i) {
    Example ex{vocab.encode(raw.examples[i].text, max_seq_len), raw.examples[i].label};
    if (ex.ids.empty()) {
      throw ValidationError("tokenize: example " + std::to_string(i) + " of " + to_string(raw.role) +
                            " has no tokens");
    }
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

Corpus load_tsv(const std::filesystem::path& path, const Vocabulary& vocab, const TsvOptions& options,
                std::size_t max_seq_len) {
  return tokenize(read_tsv(path, options), vocab, max_seq_len);
}

void SyntheticShiftSpec::validate() const {
  auto fail = [](const std::string& why) { throw ValidationError("synthetic spec: " + why); };
  if (num_classes < 2) fail("num_classes must be at least 2");
  if (neutral_tokens == 0) fail("neutral_tokens must be positive");
  if (shared_tokens_per_class == 0) fail("shared_tokens_per_class must be positive");
  if (exclusive_tokens_per_class == 0) fail("exclusive_tokens_per_class must be positive");
  if (!(indicative_rate > 0.0 && indicative_rate <= 1.0)) fail("indicative_rate must be in (0, 1]");
  if (!(shift >= 0.0 && shift <= 1.0)) fail("shift must be in [0, 1]");
  if (min_length == 0 || min_length > max_length) fail("need 0 < min_length <= max_length");
  if (!(label_noise >= 0.0 && label_noise < 1.0)) fail("label_noise must be in [0, 1)");
  if (source_train == 0 || source_dev == 0 || source_test == 0 || target_train == 0 || target_test == 0) {
    fail("every split size must be positive");
  }
}

namespace {

std::string class_token(char kind, std::size_t cls, std::size_t k) {
  return std::string(1, kind) + std::to_string(cls) + "_" + std::to_string(k);
}

// `exclusive` is 's' for the source domain and 't' for the target domain.
RawCorpus generate_split(const SyntheticShiftSpec& spec, char exclusive, CorpusRole role,
                         std::size_t count, SeededRng rng) {
  RawCorpus corpus;
  corpus.role = role;
  corpus.domain = exclusive == 's' ? "synthetic-source" : "synthetic-target";
  corpus.examples.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t cls = static_cast<std::size_t>(rng.below(spec.num_classes));
    const std::size_t len =
        spec.min_length + static_cast<std::size_t>(rng.below(spec.max_length - spec.min_length + 1));
    std::string text;
    for (std::size_t p = 0; p < len; ++p) {
      std::string tok;
      if (rng.bernoulli(spec.indicative_rate)) {
        if (rng.bernoulli(spec.shift)) {
          tok = class_token(exclusive, cls, rng.below(spec.exclusive_tokens_per_class));
        } else {
          tok = class_token('p', cls, rng.below(spec.shared_tokens_per_class));
        }
      } else {
        tok = "n" + std::to_string(rng.below(spec.neutral_tokens));
      }
      if (p) text += ' ';
      text += tok;
    }
    std::size_t label = cls;
    if (rng.bernoulli(spec.label_noise)) {
      label = (cls + 1 + static_cast<std::size_t>(rng.below(spec.num_classes - 1))) % spec.num_classes;
    }
    corpus.examples.push_back(RawExample{std::move(text), label});
  }
  return corpus;
}

}  // namespace

ShiftPair generate_shift_pair(const SyntheticShiftSpec& spec) {
  spec.validate();
  SeededRng root(spec.seed);
  ShiftPair pair;
  pair.source_train = generate_split(spec, 's', CorpusRole::kSourceTrain, spec.source_train, root.fork(1));
  pair.source_dev = generate_split(spec, 's', CorpusRole::kSourceDev, spec.source_dev, root.fork(2));
  pair.source_test = generate_split(spec, 's', CorpusRole::kSourceTest, spec.source_test, root.fork(3));
  pair.target_train = generate_split(spec, 't', CorpusRole::kTargetTrain, spec.target_train, root.fork(4));
  pair.target_test = generate_split(spec, 't', CorpusRole::kTargetTest, spec.target_test, root.fork(5));
  return pair;
}

std::vector<LabeledBatch> labeled_batches(const Corpus& corpus, std::size_t batch_size, SeededRng& rng) {
  if (batch_size == 0) throw ValidationError("labeled_batches: batch_size must be positive");
  if (corpus.examples.empty()) throw ValidationError("labeled_batches: empty corpus");
  const auto order = rng.permutation(corpus.size());
  std::vector<LabeledBatch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    LabeledBatch b;
    for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
      const Example& ex = corpus.examples[order[i]];
      if (!ex.label) throw ValidationError("labeled_batches: corpus " + to_string(corpus.role) + " is unlabeled");
      b.sequences.push_back(ex.ids);
      b.labels.push_back(*ex.label);
    }
    out.push_back(std::move(b));
  }
  return out;
}

PairedBatcher::PairedBatcher(const Corpus& source, const UnlabeledCorpus& target, std::size_t batch_size)
    : source_(source), target_(target), batch_size_(batch_size) {
  if (source.size() == 0 || target.size() == 0) throw ValidationError("paired_batches: empty corpus");
  if (batch_size == 0) throw ValidationError("paired_batches: batch_size must be positive");
  if (batch_size > source.size() || batch_size > target.size()) {
    throw ValidationError("paired_batches: batch_size " + std::to_string(batch_size) +
                          " exceeds corpus size (source " + std::to_string(source.size()) + ", target " +
                          std::to_string(target.size()) + ")");
  }
  if (!source.labeled()) throw ValidationError("paired_batches: source corpus must be labeled");
}

std::size_t PairedBatcher::steps_per_epoch() const {
  return std::max(source_.size(), target_.size()) / batch_size_;
}

std::vector<std::size_t> PairedBatcher::draw(std::size_t n, std::vector<std::size_t>& order,
                                             std::size_t& cursor, SeededRng& rng) {
  std::vector<std::size_t> out;
  out.reserve(n);
  while (out.size() < n) {
    if (cursor == order.size()) {
      order = rng.permutation(order.size());
      cursor = 0;
    }
    out.push_back(order[cursor++]);
  }
  return out;
}

std::vector<PairedBatch> PairedBatcher::epoch(SeededRng& rng) {
  const bool source_leads = source_.size() >= target_.size();
  const bool target_leads = target_.size() >= source_.size();
  // Leading corpora restart with a fresh order every epoch; the other stream
  // carries over between epochs.
  if (source_leads) {
    source_order_ = rng.permutation(source_.size());
    source_cursor_ = 0;
  } else if (source_order_.empty()) {
    source_order_.resize(source_.size());
    source_cursor_ = source_order_.size();
  }
  if (target_leads) {
    target_order_ = rng.permutation(target_.size());
    target_cursor_ = 0;
  } else if (target_order_.empty()) {
    target_order_.resize(target_.size());
    target_cursor_ = target_order_.size();
  }

  std::vector<PairedBatch> out;
  for (std::size_t step = 0; step < steps_per_epoch(); ++step) {
    PairedBatch pb;
    for (std::size_t i : draw(batch_size_, source_order_, source_cursor_, rng)) {
      pb.source.sequences.push_back(source_.examples[i].ids);
      pb.source.labels.push_back(*source_.examples[i].label);
    }
    for (std::size_t i : draw(batch_size_, target_order_, target_cursor_, rng)) {
      pb.target.push_back(target_.sequences[i]);
    }
    out.push_back(std::move(pb));
  }
  return out;
}

}  // namespace dadee
