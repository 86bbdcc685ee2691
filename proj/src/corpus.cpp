#include "pscs/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "pscs/common.hpp"

namespace pscs {

namespace {

bool is_upper(unsigned char c) { return c >= 'A' && c <= 'Z'; }
bool is_lower(unsigned char c) { return (c >= 'a' && c <= 'z') || c >= 0x80; }
bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }
bool is_word_byte(unsigned char c) { return is_upper(c) || is_lower(c) || is_digit(c); }
char to_lower(unsigned char c) { return is_upper(c) ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c); }

bool is_open(char c) { return c == '(' || c == '[' || c == '{'; }
bool is_close(char c) { return c == ')' || c == ']' || c == '}'; }

// Drops (), [] and {} spans, nested ones with their outermost span. An opener
// that is never closed is dropped alone.
std::string strip_brackets(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (is_open(c)) {
      int depth = 0;
      std::size_t j = i;
      for (; j < text.size(); ++j) {
        if (is_open(text[j])) ++depth;
        else if (is_close(text[j]) && --depth == 0) break;
      }
      if (j == text.size()) {
        ++i;  // unmatched opener
        continue;
      }
      out.push_back(' ');
      i = j + 1;
      continue;
    }
    if (!is_close(c)) out.push_back(c);
    ++i;
  }
  return out;
}

std::string_view first_sentence(std::string_view text) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c != '.' && c != '!' && c != '?') continue;
    if (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1])))
      return text.substr(0, i);
  }
  return text;
}

}  // namespace

Vocabulary::Vocabulary(VocabKind kind) : kind_(kind) {
  add("<PAD>");
  add("<UNK>");
}

std::int32_t Vocabulary::add(const std::string& token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  const auto id = static_cast<std::int32_t>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

std::int32_t Vocabulary::lookup(std::string_view token) const {
  auto it = index_.find(token);
  if (it == index_.end() || it->second < 2) return kUnk;
  return it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  auto it = index_.find(token);
  return it != index_.end() && it->second >= 2;
}

const std::string& Vocabulary::token_of(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw InvalidArgument("vocabulary id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(std::ostream& out) const {
  out << "kind:" << (kind_ == VocabKind::Word ? "word" : "node") << '\n';
  out << "count:" << tokens_.size() - 2 << '\n';
  for (std::size_t i = 2; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary: " + path);
  save(out);
}

Vocabulary Vocabulary::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("kind:", 0) != 0)
    throw FormatError("vocabulary: missing kind header");
  const std::string kind = line.substr(5);
  if (kind != "word" && kind != "node") throw FormatError("vocabulary: unknown kind '" + kind + "'");
  if (!std::getline(in, line) || line.rfind("count:", 0) != 0)
    throw FormatError("vocabulary: missing count header");
  std::size_t count = 0;
  try {
    count = std::stoul(line.substr(6));
  } catch (const std::exception&) {
    throw FormatError("vocabulary: bad count '" + line.substr(6) + "'");
  }
  Vocabulary vocab(kind == "word" ? VocabKind::Word : VocabKind::Node);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw FormatError("vocabulary: truncated token list");
    if (line.empty()) throw FormatError("vocabulary: empty token at line " + std::to_string(i + 3));
    if (vocab.add(line) != static_cast<std::int32_t>(i + 2))
      throw FormatError("vocabulary: duplicate token '" + line + "'");
  }
  return vocab;
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read vocabulary: " + path);
  return load(in);
}

std::size_t QueryTokens::real_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

std::vector<std::string> split_subtokens(std::string_view token) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < token.size(); ++i) {
    const auto c = static_cast<unsigned char>(token[i]);
    if (!is_word_byte(c)) {
      flush();
      continue;
    }
    if (!cur.empty() && is_upper(c)) {
      const auto prev = static_cast<unsigned char>(token[i - 1]);
      const bool next_lower = i + 1 < token.size() && is_lower(static_cast<unsigned char>(token[i + 1]));
      // setTimer, v2Response | HTTPResponse
      if (is_lower(prev) || is_digit(prev) || (is_upper(prev) && next_lower)) flush();
    }
    cur.push_back(to_lower(c));
  }
  flush();
  return out;
}

std::vector<std::string> sentence_subtokens(std::string_view sentence) {
  std::vector<std::string> out;
  std::istringstream in{std::string(sentence)};
  std::string word;
  while (in >> word) {
    for (auto& s : split_subtokens(word)) out.push_back(std::move(s));
  }
  return out;
}

std::string extract_query(std::string_view annotation) {
  const std::string stripped = strip_brackets(annotation);
  std::string out;
  for (const auto& s : sentence_subtokens(first_sentence(stripped))) {
    if (!out.empty()) out.push_back(' ');
    out += s;
  }
  return out;
}

std::size_t count_words(std::string_view text) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

bool filter_pair(const RawPair& pair) { return count_words(extract_query(pair.annotation)) > 2; }

Vocabulary build_vocabulary(std::span<const std::string> token_stream, std::size_t min_count,
                            std::size_t max_size, VocabKind kind) {
  TokenCounts counts;
  for (const auto& t : token_stream) ++counts[t];
  return vocabulary_from_counts(counts, min_count, max_size, kind);
}

Vocabulary vocabulary_from_counts(const TokenCounts& counts, std::size_t min_count, std::size_t max_size,
                                  VocabKind kind) {
  if (min_count < 1) throw InvalidArgument("build_vocabulary: min_count must be >= 1");
  std::vector<std::pair<std::string_view, std::size_t>> ranked;
  for (const auto& [tok, n] : counts) {
    if (n >= min_count && !tok.empty()) ranked.emplace_back(tok, n);
  }
  // map iteration is lexicographic, so a stable sort on count keeps ties ordered.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocabulary vocab(kind);
  for (const auto& [tok, n] : ranked) {
    if (vocab.size() >= max_size) break;
    vocab.add(std::string(tok));
  }
  return vocab;
}

QueryTokens encode_query(std::string_view sentence, const Vocabulary& vocab, std::size_t q) {
  if (vocab.kind() != VocabKind::Word) throw InvalidArgument("encode_query: needs a word vocabulary");
  if (q == 0) throw InvalidArgument("encode_query: q must be positive");
  const auto tokens = sentence_subtokens(sentence);
  if (tokens.empty()) throw InvalidArgument("encode_query: query has no tokens");
  QueryTokens out;
  out.ids.assign(q, Vocabulary::kPad);
  out.mask.assign(q, 0);
  const std::size_t n = std::min(q, tokens.size());
  for (std::size_t i = 0; i < n; ++i) {
    out.ids[i] = vocab.lookup(tokens[i]);
    out.mask[i] = 1;
  }
  return out;
}

std::vector<RawPair> read_pairs_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read dataset: " + path);
  std::vector<RawPair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      RawPair p;
      p.id = j.at("id").get<std::string>();
      p.code = j.at("code").get<std::string>();
      p.annotation = j.value("docstring", std::string{});
      pairs.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return pairs;
}

void write_pairs_jsonl(const std::string& path, std::span<const RawPair> pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset: " + path);
  for (const auto& p : pairs) {
    nlohmann::json j{{"id", p.id}, {"code", p.code}, {"docstring", p.annotation}};
    out << j.dump() << '\n';
  }
}

}  // namespace pscs
