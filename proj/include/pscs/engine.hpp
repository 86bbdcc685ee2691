#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pscs/corpus.hpp"
#include "pscs/model.hpp"
#include "pscs/paths.hpp"

namespace pscs {

using LogFn = std::function<void(const std::string&)>;

// ---------------------------------------------------------------- corpus

struct CompactPath {
  std::uint32_t start = 0;  // terminal row within the snippet
  std::uint32_t end = 0;
  std::uint32_t seq = 0;    // interned node sequence
};

// One snippet with its query and paths in id form. Terminal ids are stored
// once per distinct terminal; PAD marks unused subtoken slots.
struct EncodedSnippet {
  std::string id;
  std::string query;
  std::vector<std::int32_t> query_ids;  // real ids only, at most q
  std::vector<std::int32_t> terminals;  // m per terminal
  std::vector<CompactPath> paths;
};

// Encoded snippets plus the table of distinct node-id sequences they share.
class EncodedCorpus {
 public:
  EncodedCorpus() = default;
  EncodedCorpus(std::int32_t m, std::int32_t l, std::int32_t q);

  enum class AddResult { Added, NoPaths, NoQuery };
  AddResult add(const PathRecord& record, const Vocabulary& words, const Vocabulary& nodes);

  std::size_t size() const { return snippets_.size(); }
  bool empty() const { return snippets_.empty(); }
  const EncodedSnippet& operator[](std::size_t i) const { return snippets_[i]; }
  const std::vector<EncodedSnippet>& snippets() const { return snippets_; }

  std::size_t word_vocab_size() const { return word_vocab_; }
  std::size_t node_vocab_size() const { return node_vocab_; }
  std::int32_t m() const { return m_; }
  std::int32_t l() const { return l_; }
  std::int32_t q() const { return q_; }
  std::size_t sequence_count() const { return l_ == 0 ? 0 : sequences_.size() / static_cast<std::size_t>(l_); }
  std::span<const std::int32_t> sequence(std::uint32_t seq) const;

  // The full PathContext of one stored path.
  PathContext context(const EncodedSnippet& snippet, const CompactPath& path) const;

  // Snippets at the given positions, in that order.
  EncodedCorpus subset(std::span<const std::size_t> positions) const;

 private:
  std::uint32_t intern(std::span<const std::int32_t> ids);

  std::int32_t m_ = 0, l_ = 0, q_ = 0;
  std::size_t word_vocab_ = 0, node_vocab_ = 0;
  std::vector<EncodedSnippet> snippets_;
  std::vector<std::int32_t> sequences_;
  std::unordered_map<std::string, std::uint32_t> seq_index_;
};

struct LoadStats {
  std::size_t records = 0;
  std::size_t no_paths = 0;
  std::size_t no_query = 0;
};

// Streams a path file into an encoded corpus.
EncodedCorpus load_corpus(const std::string& paths_file, const Vocabulary& words, const Vocabulary& nodes,
                          const HyperParams& hp, LoadStats* stats = nullptr);
// Adds the records of another path file to an existing corpus.
void append_corpus(EncodedCorpus& corpus, const std::string& paths_file, const Vocabulary& words,
                   const Vocabulary& nodes, LoadStats* stats = nullptr);
EncodedCorpus encode_records(std::span<const PathRecord> records, const Vocabulary& words,
                             const Vocabulary& nodes, const HyperParams& hp, LoadStats* stats = nullptr);

// Sorted path positions placed in a g-slot bag for one snippet.
std::vector<std::size_t> sample_snippet_paths(const EncodedSnippet& snippet, std::size_t g, Rng& rng);
// Deterministic inference-time selection.
std::vector<std::size_t> inference_paths(const EncodedSnippet& snippet, std::size_t g);

// Same batch CodeBatch::from_bags builds from the equivalent PathBags.
CodeBatch make_code_batch(const EncodedCorpus& corpus, std::span<const std::size_t> snippets,
                          std::span<const std::vector<std::size_t>> chosen);

// ---------------------------------------------------------------- preprocessing

struct PreprocessConfig {
  std::string input;       // training pairs, JSON lines
  std::string test_input;  // optional held-out pairs
  std::string out_dir;
  std::size_t min_count = 2;
  std::size_t word_max = 30000;
  std::size_t node_max = 500;
  PathLimits limits;
  std::uint64_t seed = 1;
};

struct PreprocessStats {
  std::size_t read = 0;
  std::size_t short_annotation = 0;
  std::size_t parse_errors = 0;
  std::size_t no_paths = 0;
  std::size_t train = 0;
  std::size_t test = 0;
  std::size_t word_vocab = 0;
  std::size_t node_vocab = 0;
};

// Writes word.vocab, node.vocab, train.paths.jsonl, test.paths.jsonl (when a
// test input is given), code.jsonl and meta.json into out_dir. Vocabularies
// come from the training split only.
PreprocessStats preprocess(const PreprocessConfig& config, const LogFn& log = {});

// Parses one function and extracts its paths; nullopt on a parse error.
std::optional<std::vector<AstPath>> function_paths(const std::string& code, const PathLimits& limits,
                                                   std::uint64_t seed, std::string* error = nullptr);

struct DataDir {
  std::string dir;
  Vocabulary words{VocabKind::Word};
  Vocabulary nodes{VocabKind::Node};

  static DataDir open(const std::string& dir);
  std::string file(const std::string& name) const;
  bool has(const std::string& name) const;
};

// id -> one-line code preview from a code.jsonl file.
std::unordered_map<std::string, std::string> load_previews(const std::string& code_file, std::size_t max_chars = 160);

// ---------------------------------------------------------------- training

struct TrainConfig {
  HyperParams hp;
  AblationConfig ablation;
  int epochs = 50;
  std::uint64_t seed = 1;
  int checkpoint_every = 1;  // epochs between versioned checkpoints; 0 = none
  int patience = 5;          // epochs without validation gain; 0 = never stop early
  double validation_fraction = 0.05;
  std::string out_dir;       // empty: nothing written

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double validation_mrr = -1.0;  // -1 without a validation split
  double seconds = 0.0;
};

struct TrainResult {
  PscsModel model;
  std::vector<EpochStats> history;
  int best_epoch = 0;
  std::vector<std::string> checkpoints;
  std::size_t train_pairs = 0;
  std::size_t validation_pairs = 0;
};

// Uniform over [0, batch) without i. Throws for batch < 2.
std::size_t sample_negative(std::size_t batch, std::size_t i, Rng& rng);

// True when id falls in the validation split.
bool in_validation_split(std::string_view id, double fraction);

// Mean hinge loss of one batch plus its backward pass and Adam step. Exposed
// for tests; train() drives it.
double train_step(PscsModel& model, nn::AdamState& adam, const EncodedCorpus& corpus,
                  std::span<const std::size_t> batch, Rng& rng);

// Throws NumericError (with batch ids and recent losses) on a non-finite loss.
TrainResult train(const TrainConfig& config, const EncodedCorpus& corpus, const LogFn& log = {});

// ---------------------------------------------------------------- index and search

struct SearchIndex {
  std::int32_t d = 0;
  std::vector<std::string> ids;
  std::vector<float> vectors;         // n x d, unit rows
  std::vector<std::string> previews;  // empty or one per row

  std::size_t size() const { return ids.size(); }
  std::span<const float> row(std::size_t i) const {
    return {vectors.data() + i * static_cast<std::size_t>(d), static_cast<std::size_t>(d)};
  }
  // Throws InvalidArgument on broken invariants.
  void validate() const;
  // Dot product with every row.
  void scores(std::span<const float> query, std::vector<float>& out) const;
};

inline constexpr std::uint32_t kIndexVersion = 1;

void save_index(std::ostream& out, const SearchIndex& index);
void save_index(const std::string& path, const SearchIndex& index);
SearchIndex load_index(std::istream& in);
SearchIndex load_index(const std::string& path);

// Unit-normalized code vectors for every snippet, encoded in batches.
std::vector<float> encode_corpus(PscsModel& model, const EncodedCorpus& corpus, std::size_t batch = 64);

SearchIndex build_index(PscsModel& model, const EncodedCorpus& corpus,
                        const std::unordered_map<std::string, std::string>* previews = nullptr,
                        const LogFn& log = {});

struct SearchHit {
  std::size_t row = 0;
  std::string id;
  float score = 0.0f;
};

struct SearchResult {
  std::string query;  // preprocessed query echo
  std::vector<SearchHit> hits;
};

// Highest scores first, ties by ascending id.
std::vector<SearchHit> top_k(const SearchIndex& index, std::span<const float> scores, std::size_t k);

// Unit-normalized query vector; throws EmptyQuery when nothing is left
// after preprocessing.
std::vector<float> encode_query_text(PscsModel& model, const Vocabulary& words, std::string_view text,
                                     std::string* echo = nullptr);

SearchResult search(std::string_view query_text, const SearchIndex& index, PscsModel& model,
                    const Vocabulary& words, std::size_t k);

void normalize(std::span<float> v);

}  // namespace pscs
