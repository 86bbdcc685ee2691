#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pscs {

// One annotation/function record of a CodeSearchNet-style dataset.
struct RawPair {
  std::string id;
  std::string code;
  std::string annotation;
};

enum class VocabKind { Word, Node };

// Bidirectional token <-> id map. Ids 0 and 1 are reserved for PAD and UNK.
class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;

  explicit Vocabulary(VocabKind kind = VocabKind::Word);

  VocabKind kind() const { return kind_; }
  std::size_t size() const { return tokens_.size(); }

  // Appends a token if absent; returns its id.
  std::int32_t add(const std::string& token);
  // UNK when absent.
  std::int32_t lookup(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token_of(std::int32_t id) const;

  void save(std::ostream& out) const;
  void save(const std::string& path) const;
  static Vocabulary load(std::istream& in);
  static Vocabulary load(const std::string& path);

  bool operator==(const Vocabulary& other) const {
    return kind_ == other.kind_ && tokens_ == other.tokens_;
  }

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const {
      return std::hash<std::string_view>{}(s);
    }
  };

  VocabKind kind_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t, Hash, std::equal_to<>> index_;
};

// Fixed-length word-id sequence with its real/PAD mask.
struct QueryTokens {
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> mask;

  std::size_t real_count() const;
};

// First sentence of an annotation with bracketed spans and punctuation
// removed, tokens split into lowercase subtokens and joined by single spaces.
std::string extract_query(std::string_view annotation);

// Splits an identifier on camel-case boundaries, hyphens, underscores and any
// other non-alphanumeric byte. Output is lowercase; digits stay attached to
// the run they follow.
std::vector<std::string> split_subtokens(std::string_view token);

// Whitespace tokenization followed by subtoken splitting.
std::vector<std::string> sentence_subtokens(std::string_view sentence);

std::size_t count_words(std::string_view text);

// True iff the extracted query has strictly more than two words.
bool filter_pair(const RawPair& pair);

// Most-frequent-first ids after PAD/UNK; ties broken lexicographically.
// max_size bounds the whole vocabulary, reserved ids included.
Vocabulary build_vocabulary(std::span<const std::string> token_stream,
                            std::size_t min_count, std::size_t max_size,
                            VocabKind kind);

// Same ranking from precomputed counts, for streams too large to hold.
using TokenCounts = std::map<std::string, std::size_t, std::less<>>;
Vocabulary vocabulary_from_counts(const TokenCounts& counts, std::size_t min_count,
                                  std::size_t max_size, VocabKind kind);

// Throws InvalidArgument when the sentence has no tokens.
QueryTokens encode_query(std::string_view sentence, const Vocabulary& vocab,
                         std::size_t q);

// Reads {"id","code","docstring"} JSON lines.
std::vector<RawPair> read_pairs_jsonl(const std::string& path);
void write_pairs_jsonl(const std::string& path, std::span<const RawPair> pairs);

}  // namespace pscs
