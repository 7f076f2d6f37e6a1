#pragma once

#include "privlm/rng.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace privlm {

using TokenId = std::int32_t;
using AuthorId = std::int32_t;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kBos = 2;
inline constexpr TokenId kEos = 3;
inline constexpr TokenId kCount = 4;
}  // namespace special

class Vocabulary {
 public:
  Vocabulary();

  // Keeps the `max_regular` most frequent tokens (ties: lexicographic) after
  // the four fixed specials. Tokens with count zero are kept too, so a caller
  // can pin a known type inventory.
  static Vocabulary from_counts(const std::map<std::string, std::int64_t>& counts,
                                std::size_t max_regular);
  static Vocabulary from_tokens(std::vector<std::string> id_to_token);

  std::size_t size() const { return id_to_token_.size(); }
  std::size_t regular_size() const { return size() - special::kCount; }

  TokenId id(const std::string& token) const;  // <unk> when absent
  bool contains(const std::string& token) const { return token_to_id_.count(token) != 0; }
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  std::uint64_t hash() const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.id_to_token_ == b.id_to_token_;
  }

 private:
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
};

// Counts tokens over all streams and keeps the `max_vocab` most frequent
// regular tokens; specials come on top of that budget.
Vocabulary build_vocab(const std::vector<std::vector<std::string>>& token_streams,
                       std::size_t max_vocab);

class AuthorRegistry {
 public:
  AuthorId add(const std::string& name);  // idempotent
  std::optional<AuthorId> find(const std::string& name) const;

  std::size_t size() const { return names_.size(); }
  const std::string& name(AuthorId id) const { return names_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& names() const { return names_; }

  friend bool operator==(const AuthorRegistry& a, const AuthorRegistry& b) {
    return a.names_ == b.names_;
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, AuthorId> index_;
};

enum class Split : std::uint8_t { kTrain, kTest };

struct Sample {
  AuthorId author = 0;
  std::vector<TokenId> tokens;  // unframed word ids
  Split split = Split::kTrain;
  bool canary = false;  // injected secret; excluded from utility metrics

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Corpus {
  Vocabulary vocab;
  AuthorRegistry authors;
  std::vector<Sample> samples;

  std::size_t num_authors() const { return authors.size(); }

  // Indices into `samples`, in ascending order.
  std::vector<std::size_t> train_indices() const;
  std::vector<std::size_t> test_indices() const;  // never includes canaries
  std::vector<std::size_t> utility_train_indices() const;  // train minus canaries
  std::vector<std::vector<std::size_t>> train_indices_by_author() const;
  std::vector<std::size_t> train_counts_by_author(bool include_canaries = false) const;

  void validate() const;

  friend bool operator==(const Corpus& a, const Corpus& b) {
    return a.vocab == b.vocab && a.authors == b.authors && a.samples == b.samples;
  }
};

// Row-major tokens x positions; row r holds one framed, right-padded sample.
struct TokenMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<TokenId> data;

  TokenMatrix() = default;
  TokenMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, special::kPad) {}

  TokenId& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  TokenId at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  // Number of leading non-pad tokens in a row.
  std::size_t length(std::size_t r) const;
  std::size_t max_length() const;

  friend bool operator==(const TokenMatrix&, const TokenMatrix&) = default;
};

// <bos> w1 ... wn <eos>, truncated to seq_len.
std::vector<TokenId> frame(std::span<const TokenId> words, std::size_t seq_len);
TokenMatrix frame_rows(const std::vector<std::span<const TokenId>>& rows, std::size_t seq_len);

struct Batch {
  std::vector<std::size_t> sample_indices;
  TokenMatrix tokens;
  AuthorId author = 0;  // all rows share it under per-user batching
  std::vector<AuthorId> row_authors;

  friend bool operator==(const Batch&, const Batch&) = default;
};

Batch make_batch(const Corpus& corpus, std::vector<std::size_t> sample_indices,
                 std::size_t seq_len);

struct SyntheticCorpusConfig {
  std::size_t n_authors = 20;
  std::size_t samples_per_author = 100;
  // Overrides samples_per_author when non-empty (one entry per author).
  std::vector<std::size_t> samples_by_author;
  std::size_t vocab_size = 2000;  // total, specials included
  std::pair<std::size_t, std::size_t> seq_len_range{8, 24};
  double zipf_exponent = 1.0;
  // Shape of the multiplicative Gamma noise applied per author to the shared
  // Zipf profile; smaller means more distinct authors.
  double author_concentration = 1.0;
  // Probability that a token (after the first) follows a shared successor
  // table instead of the author profile; 0 gives bag-of-words samples.
  double transition_weight = 0.0;
  std::size_t successors = 4;  // entries per successor list
  std::uint64_t seed = 7;
};

Corpus generate_synthetic_corpus(const SyntheticCorpusConfig& config);
Corpus generate_synthetic_corpus(std::size_t n_authors, std::size_t samples_per_author,
                                 std::size_t vocab_size,
                                 std::pair<std::size_t, std::size_t> seq_len_range,
                                 std::uint64_t seed);

// One JSON object per line with string fields "author" and "text".
Corpus ingest_jsonl(const std::filesystem::path& path, std::size_t max_vocab,
                    std::uint64_t split_seed = 0);

// Deterministic 80/20 split of each author's samples (floor(n/5) test,
// at least one train sample kept).
void assign_split(std::vector<Sample>& samples, std::size_t n_authors, std::uint64_t seed);

// Every training sample exactly once, in single-author batches; batch order
// is shuffled by seed.
std::vector<Batch> user_batches(const Corpus& corpus, std::size_t batch_size,
                                std::size_t seq_len, std::uint64_t seed);

Batch sample_auxiliary_batch(const Corpus& corpus, const Batch& base_batch, double p_same,
                             Rng& rng);

// Unigram Naive Bayes author classifier trained on the train split and scored
// on the test split; a quick check that authorship carries signal.
double naive_bayes_author_accuracy(const Corpus& corpus);

nlohmann::json corpus_to_json(const Corpus& corpus);
Corpus corpus_from_json(const nlohmann::json& j);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

}  // namespace privlm
