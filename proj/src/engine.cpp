#include "pscs/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <Eigen/Dense>
#include <json.hpp>

#include "binio.hpp"
#include "pscs/evaluate.hpp"

namespace fs = std::filesystem;

namespace pscs {

namespace {

void say(const LogFn& log, const std::string& msg) {
  if (log) log(msg);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------- EncodedCorpus

EncodedCorpus::EncodedCorpus(std::int32_t m, std::int32_t l, std::int32_t q) : m_(m), l_(l), q_(q) {
  if (m <= 0 || l <= 0 || q <= 0) throw InvalidArgument("EncodedCorpus: m, l and q must be positive");
}

std::uint32_t EncodedCorpus::intern(std::span<const std::int32_t> ids) {
  std::string key(reinterpret_cast<const char*>(ids.data()), ids.size_bytes());
  auto [it, inserted] = seq_index_.try_emplace(std::move(key), static_cast<std::uint32_t>(sequence_count()));
  if (inserted) sequences_.insert(sequences_.end(), ids.begin(), ids.end());
  return it->second;
}

std::span<const std::int32_t> EncodedCorpus::sequence(std::uint32_t seq) const {
  return {sequences_.data() + static_cast<std::size_t>(seq) * static_cast<std::size_t>(l_),
          static_cast<std::size_t>(l_)};
}

EncodedCorpus::AddResult EncodedCorpus::add(const PathRecord& record, const Vocabulary& words,
                                            const Vocabulary& nodes) {
  if (words.kind() != VocabKind::Word || nodes.kind() != VocabKind::Node)
    throw InvalidArgument("EncodedCorpus: vocabulary kinds do not match");
  if (snippets_.empty() && word_vocab_ == 0) {
    word_vocab_ = words.size();
    node_vocab_ = nodes.size();
  } else if (word_vocab_ != words.size() || node_vocab_ != nodes.size()) {
    throw InvalidArgument("EncodedCorpus: records encoded with different vocabularies");
  }
  if (record.paths.empty()) return AddResult::NoPaths;
  const auto tokens = sentence_subtokens(record.query);
  if (tokens.empty()) return AddResult::NoQuery;

  EncodedSnippet s;
  s.id = record.id;
  s.query = record.query;
  for (std::size_t i = 0; i < tokens.size() && i < static_cast<std::size_t>(q_); ++i)
    s.query_ids.push_back(words.lookup(tokens[i]));

  std::unordered_map<std::string, std::uint32_t> rows;
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> mask;
  auto terminal_row = [&](const std::string& terminal) {
    auto [it, inserted] = rows.try_emplace(terminal, static_cast<std::uint32_t>(rows.size()));
    if (inserted) {
      encode_terminal_ids(terminal, words, static_cast<std::size_t>(m_), ids, mask);
      s.terminals.insert(s.terminals.end(), ids.begin(), ids.end());
    }
    return it->second;
  };
  std::vector<std::int32_t> seq(static_cast<std::size_t>(l_));
  s.paths.reserve(record.paths.size());
  for (const auto& p : record.paths) {
    CompactPath cp;
    cp.start = terminal_row(p.start_terminal);
    cp.end = terminal_row(p.end_terminal);
    std::fill(seq.begin(), seq.end(), Vocabulary::kPad);
    for (std::size_t i = 0; i < p.directed_nodes.size() && i < seq.size(); ++i)
      seq[i] = nodes.lookup(node_token(p.directed_nodes[i]));
    cp.seq = intern(seq);
    s.paths.push_back(cp);
  }
  snippets_.push_back(std::move(s));
  return AddResult::Added;
}

PathContext EncodedCorpus::context(const EncodedSnippet& snippet, const CompactPath& path) const {
  PathContext c;
  const auto m = static_cast<std::size_t>(m_);
  auto fill = [&](std::uint32_t row, std::vector<std::int32_t>& ids, std::vector<std::uint8_t>& mask) {
    ids.assign(snippet.terminals.begin() + row * m, snippet.terminals.begin() + (row + 1) * m);
    mask.resize(m);
    for (std::size_t i = 0; i < m; ++i) mask[i] = ids[i] != Vocabulary::kPad;
  };
  fill(path.start, c.start_ids, c.start_mask);
  fill(path.end, c.end_ids, c.end_mask);
  const auto seq = sequence(path.seq);
  c.node_ids.assign(seq.begin(), seq.end());
  c.node_mask.resize(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) c.node_mask[i] = seq[i] != Vocabulary::kPad;
  return c;
}

EncodedCorpus EncodedCorpus::subset(std::span<const std::size_t> positions) const {
  EncodedCorpus out = *this;
  out.snippets_.clear();
  out.snippets_.reserve(positions.size());
  for (auto p : positions) out.snippets_.push_back(snippets_.at(p));
  return out;
}

namespace {

void count_add(EncodedCorpus::AddResult r, LoadStats* stats) {
  if (!stats) return;
  ++stats->records;
  if (r == EncodedCorpus::AddResult::NoPaths) ++stats->no_paths;
  if (r == EncodedCorpus::AddResult::NoQuery) ++stats->no_query;
}

}  // namespace

void append_corpus(EncodedCorpus& corpus, const std::string& paths_file, const Vocabulary& words,
                   const Vocabulary& nodes, LoadStats* stats) {
  std::ifstream in(paths_file, std::ios::binary);
  if (!in) throw IoError("cannot read path file: " + paths_file);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    PathRecord record;
    try {
      record = path_record_from_json(line);
    } catch (const FormatError& e) {
      throw FormatError(paths_file + ":" + std::to_string(lineno) + ": " + e.what());
    }
    count_add(corpus.add(record, words, nodes), stats);
  }
}

EncodedCorpus load_corpus(const std::string& paths_file, const Vocabulary& words, const Vocabulary& nodes,
                          const HyperParams& hp, LoadStats* stats) {
  EncodedCorpus corpus(hp.m, hp.l, hp.q);
  append_corpus(corpus, paths_file, words, nodes, stats);
  return corpus;
}

EncodedCorpus encode_records(std::span<const PathRecord> records, const Vocabulary& words,
                             const Vocabulary& nodes, const HyperParams& hp, LoadStats* stats) {
  EncodedCorpus corpus(hp.m, hp.l, hp.q);
  for (const auto& r : records) count_add(corpus.add(r, words, nodes), stats);
  return corpus;
}

std::vector<std::size_t> sample_snippet_paths(const EncodedSnippet& snippet, std::size_t g, Rng& rng) {
  if (snippet.paths.empty()) throw InvalidArgument("snippet '" + snippet.id + "' has no paths");
  return sample_path_indices(snippet.paths.size(), g, rng);
}

std::vector<std::size_t> inference_paths(const EncodedSnippet& snippet, std::size_t g) {
  Rng rng(inference_seed(snippet.id));
  return sample_snippet_paths(snippet, g, rng);
}

CodeBatch make_code_batch(const EncodedCorpus& corpus, std::span<const std::size_t> snippets,
                          std::span<const std::vector<std::size_t>> chosen) {
  if (snippets.size() != chosen.size()) throw InvalidArgument("make_code_batch: one path list per snippet");
  CodeBatch b;
  b.m = corpus.m();
  b.l = corpus.l();
  const auto m = static_cast<std::size_t>(b.m);
  std::unordered_map<std::uint32_t, std::int32_t> local;
  auto push_terminal = [&](const EncodedSnippet& s, std::uint32_t row, std::vector<std::int32_t>& ids,
                           std::vector<std::uint8_t>& mask) {
    for (std::size_t i = 0; i < m; ++i) {
      const std::int32_t id = s.terminals[row * m + i];
      ids.push_back(id);
      mask.push_back(id != Vocabulary::kPad);
    }
  };
  for (std::size_t k = 0; k < snippets.size(); ++k) {
    const EncodedSnippet& s = corpus[snippets[k]];
    if (chosen[k].empty()) throw InvalidArgument("make_code_batch: snippet '" + s.id + "' has no chosen paths");
    for (auto p : chosen[k]) {
      const CompactPath& cp = s.paths.at(p);
      push_terminal(s, cp.start, b.start_ids, b.start_mask);
      push_terminal(s, cp.end, b.end_ids, b.end_mask);
      auto [it, inserted] = local.try_emplace(cp.seq, static_cast<std::int32_t>(local.size()));
      if (inserted) {
        const auto seq = corpus.sequence(cp.seq);
        for (auto id : seq) {
          b.seq_ids.push_back(id);
          b.seq_mask.push_back(id != Vocabulary::kPad);
        }
      }
      b.path_seq.push_back(it->second);
    }
    b.path_offsets.push_back(static_cast<std::int32_t>(b.path_seq.size()));
  }
  return b;
}

// ---------------------------------------------------------------- preprocessing

std::optional<std::vector<AstPath>> function_paths(const std::string& code, const PathLimits& limits,
                                                   std::uint64_t seed, std::string* error) {
  try {
    const Ast ast = parse_function(code);
    return extract_paths(ast, limits, seed);
  } catch (const ParseError& e) {
    if (error) *error = e.what();
    return std::nullopt;
  }
}

namespace {

void count_record(const PathRecord& r, TokenCounts& words, TokenCounts& nodes) {
  for (const auto& w : sentence_subtokens(r.query)) ++words[w];
  for (const auto& p : r.paths) {
    for (const auto& w : split_subtokens(p.start_terminal)) ++words[w];
    for (const auto& w : split_subtokens(p.end_terminal)) ++words[w];
    for (const auto& t : p.node_tokens()) ++nodes[t];
  }
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  return out;
}

}  // namespace

PreprocessStats preprocess(const PreprocessConfig& config, const LogFn& log) {
  if (config.input.empty() || config.out_dir.empty()) throw InvalidArgument("preprocess: input and out dir required");
  if (config.min_count < 1) throw InvalidArgument("preprocess: min_count must be >= 1");
  fs::create_directories(config.out_dir);
  const fs::path dir(config.out_dir);

  PreprocessStats stats;
  TokenCounts word_counts, node_counts;
  std::ofstream code_out = open_out(dir / "code.jsonl");
  std::unordered_set<std::string> seen;

  auto run = [&](const std::string& input, const std::string& name, bool count, std::size_t& kept) {
    std::ofstream out = open_out(dir / name);
    const auto pairs = read_pairs_jsonl(input);
    std::size_t reported = 0;
    for (const auto& pair : pairs) {
      ++stats.read;
      if (!seen.insert(pair.id).second) throw InvalidArgument("preprocess: duplicate id '" + pair.id + "'");
      if (!filter_pair(pair)) {
        ++stats.short_annotation;
        continue;
      }
      std::string error;
      auto paths = function_paths(pair.code, config.limits, config.seed ^ stable_hash(pair.id), &error);
      if (!paths) {
        ++stats.parse_errors;
        if (reported++ < 5) say(log, "parse error in " + pair.id + ": " + error);
        continue;
      }
      if (paths->empty()) {
        ++stats.no_paths;
        continue;
      }
      PathRecord record{pair.id, extract_query(pair.annotation), std::move(*paths)};
      if (count) count_record(record, word_counts, node_counts);
      out << path_record_to_json(record) << '\n';
      code_out << nlohmann::json{{"id", pair.id}, {"code", pair.code}}.dump(-1, ' ', false,
                                                                            nlohmann::json::error_handler_t::replace)
               << '\n';
      ++kept;
    }
    if (!out) throw IoError("write failed: " + (dir / name).string());
  };

  run(config.input, "train.paths.jsonl", true, stats.train);
  if (!config.test_input.empty()) run(config.test_input, "test.paths.jsonl", false, stats.test);

  const Vocabulary words = vocabulary_from_counts(word_counts, config.min_count, config.word_max, VocabKind::Word);
  const Vocabulary nodes = vocabulary_from_counts(node_counts, config.min_count, config.node_max, VocabKind::Node);
  words.save((dir / "word.vocab").string());
  nodes.save((dir / "node.vocab").string());
  stats.word_vocab = words.size();
  stats.node_vocab = nodes.size();

  nlohmann::json meta = {
      {"read", stats.read},
      {"short_annotation", stats.short_annotation},
      {"parse_errors", stats.parse_errors},
      {"no_paths", stats.no_paths},
      {"train", stats.train},
      {"test", stats.test},
      {"word_vocab", stats.word_vocab},
      {"node_vocab", stats.node_vocab},
      {"min_count", config.min_count},
      {"max_height", config.limits.max_height},
      {"max_width", config.limits.max_width},
      {"cap", config.limits.cap},
      {"seed", config.seed},
      {"ast_label_set_version", kAstLabelSetVersion},
  };
  open_out(dir / "meta.json") << meta.dump(2) << '\n';
  say(log, "preprocess: read " + std::to_string(stats.read) + ", kept " + std::to_string(stats.train) + " train / " +
               std::to_string(stats.test) + " test; dropped " + std::to_string(stats.short_annotation) +
               " short annotations, " + std::to_string(stats.parse_errors) + " parse errors, " +
               std::to_string(stats.no_paths) + " without paths");
  return stats;
}

DataDir DataDir::open(const std::string& dir) {
  DataDir d;
  d.dir = dir;
  d.words = Vocabulary::load(d.file("word.vocab"));
  d.nodes = Vocabulary::load(d.file("node.vocab"));
  if (d.words.kind() != VocabKind::Word || d.nodes.kind() != VocabKind::Node)
    throw FormatError("data dir " + dir + ": vocabulary kinds are swapped");
  return d;
}

std::string DataDir::file(const std::string& name) const { return (fs::path(dir) / name).string(); }

bool DataDir::has(const std::string& name) const { return fs::exists(fs::path(dir) / name); }

std::unordered_map<std::string, std::string> load_previews(const std::string& code_file, std::size_t max_chars) {
  std::ifstream in(code_file, std::ios::binary);
  if (!in) throw IoError("cannot read " + code_file);
  std::unordered_map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("id") || !j.contains("code")) throw FormatError("bad line in " + code_file);
    std::string preview;
    bool space = false;
    for (char c : j["code"].get<std::string>()) {
      if (std::isspace(static_cast<unsigned char>(c))) {
        space = !preview.empty();
        continue;
      }
      if (space) preview += ' ';
      space = false;
      preview += c;
      if (preview.size() > max_chars) break;
    }
    if (preview.size() > max_chars) {
      // cut on a UTF-8 boundary
      std::size_t cut = max_chars;
      while (cut > 0 && (static_cast<unsigned char>(preview[cut]) & 0xC0) == 0x80) --cut;
      preview.resize(cut);
    }
    out[j["id"].get<std::string>()] = std::move(preview);
  }
  return out;
}

// ---------------------------------------------------------------- training

void TrainConfig::validate() const {
  hp.validate();
  ablation.validate();
  if (epochs < 1) throw InvalidArgument("train: epochs must be >= 1");
  if (checkpoint_every < 0 || patience < 0) throw InvalidArgument("train: checkpoint_every and patience must be >= 0");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw InvalidArgument("train: validation fraction must be in [0, 1)");
}

std::size_t sample_negative(std::size_t batch, std::size_t i, Rng& rng) {
  if (batch < 2) throw InvalidArgument("sample_negative: batch needs at least two pairs");
  if (i >= batch) throw InvalidArgument("sample_negative: position outside the batch");
  const std::size_t j = rng.below(batch - 1);
  return j >= i ? j + 1 : j;
}

bool in_validation_split(std::string_view id, double fraction) {
  if (fraction <= 0.0) return false;
  return static_cast<double>(stable_hash(id) % 1000000) < fraction * 1000000.0;
}

double train_step(PscsModel& model, nn::AdamState& adam, const EncodedCorpus& corpus,
                  std::span<const std::size_t> batch, Rng& rng) {
  const HyperParams& hp = model.hyper();
  std::vector<std::vector<std::size_t>> chosen;
  chosen.reserve(batch.size());
  QueryBatch queries;
  for (auto s : batch) {
    chosen.push_back(sample_snippet_paths(corpus[s], static_cast<std::size_t>(hp.g), rng));
    queries.add_ids(corpus[s].query_ids);
  }
  std::vector<std::int32_t> negatives(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i)
    negatives[i] = static_cast<std::int32_t>(sample_negative(batch.size(), i, rng));
  const CodeBatch code = make_code_batch(corpus, batch, chosen);

  model.params().zero_grad();
  nn::Graph graph;
  const BoundParams bound = model.bind(graph);
  const nn::Var v_code = model.encode_code(graph, bound, code, true, rng);
  const nn::Var v_query = model.encode_query(graph, bound, queries);
  const nn::Var v_neg = nn::gather_rows(v_query, negatives);
  const nn::Var loss = ranking_loss(v_query, v_neg, v_code, hp.margin, hp.delta);
  const double value = graph.value(loss).data[0];
  if (!std::isfinite(value)) return value;
  graph.backward(loss);
  auto tensors = model.params().tensors();
  adam.lr = hp.lr;
  nn::adam_step(tensors, adam);
  return value;
}

TrainResult train(const TrainConfig& config, const EncodedCorpus& corpus, const LogFn& log) {
  config.validate();
  if (corpus.m() != config.hp.m || corpus.l() != config.hp.l || corpus.q() != config.hp.q)
    throw InvalidArgument("train: corpus was encoded with different m/l/q");
  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    (in_validation_split(corpus[i].id, config.validation_fraction) ? val_idx : train_idx).push_back(i);
  if (train_idx.size() < 2) throw InvalidArgument("train: need at least two training pairs");
  const EncodedCorpus validation = corpus.subset(val_idx);
  if (!config.out_dir.empty()) fs::create_directories(config.out_dir);

  Rng master(config.seed);
  TrainResult result{PscsModel::create(config.hp, config.ablation, corpus.word_vocab_size(),
                                       corpus.node_vocab_size(), master.next()),
                     {}, 0, {}, train_idx.size(), val_idx.size()};
  PscsModel model = result.model;
  model.params().enable_grad();
  nn::AdamState adam;
  adam.lr = config.hp.lr;
  say(log, "train: " + std::to_string(train_idx.size()) + " pairs, " + std::to_string(val_idx.size()) +
               " validation, ablation " + config.ablation.to_string());

  const std::size_t B = static_cast<std::size_t>(config.hp.batch);
  double best_mrr = -1.0;
  int since_best = 0;
  std::vector<double> recent;
  std::vector<std::size_t> order = train_idx;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng = master.fork();
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    std::vector<std::pair<std::size_t, std::size_t>> batches;
    for (std::size_t b = 0; b < order.size(); b += B) batches.emplace_back(b, std::min(order.size(), b + B));
    if (batches.size() > 1 && batches.back().second - batches.back().first < 2) {
      batches[batches.size() - 2].second = batches.back().second;
      batches.pop_back();
    }

    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const std::span<const std::size_t> batch(order.data() + batches[bi].first,
                                               batches[bi].second - batches[bi].first);
      const double loss = train_step(model, adam, corpus, batch, rng);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", batch " << bi << "; ids:";
        for (auto s : batch) msg << ' ' << corpus[s].id;
        msg << "; recent losses:";
        for (double v : recent) msg << ' ' << v;
        say(log, msg.str());
        throw NumericError(msg.str());
      }
      recent.push_back(loss);
      if (recent.size() > 20) recent.erase(recent.begin());
      loss_sum += loss * static_cast<double>(batch.size());
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.loss = loss_sum / static_cast<double>(order.size());
    if (!validation.empty()) {
      const std::int64_t k10[] = {10};
      stats.validation_mrr = evaluate_checkpoint(validation, model, k10).mrr;
    }
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(stats);
    say(log, "epoch " + std::to_string(epoch) + " loss " + fmt("%.5f", stats.loss) +
                 (validation.empty() ? std::string() : " val_mrr " + fmt("%.4f", stats.validation_mrr)) + " (" +
                 fmt("%.1f", stats.seconds) + " s)");

    if (!config.out_dir.empty() && config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint-epoch-%03d.bin", epoch);
      const std::string path = (fs::path(config.out_dir) / name).string();
      save_checkpoint(path, model);
      result.checkpoints.push_back(path);
    }

    if (validation.empty()) {
      result.model = model;
      result.best_epoch = epoch;
    } else if (stats.validation_mrr > best_mrr) {
      best_mrr = stats.validation_mrr;
      result.model = model;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (config.patience > 0 && ++since_best >= config.patience && epoch < config.epochs) {
      say(log, "early stop: no validation gain for " + std::to_string(config.patience) + " epochs");
      break;
    }
  }
  // the stored copy should not carry gradient buffers
  for (auto* t : result.model.params().tensors()) {
    t->requires_grad = false;
    t->grad.clear();
  }
  if (!config.out_dir.empty()) {
    const std::string path = (fs::path(config.out_dir) / "model.bin").string();
    save_checkpoint(path, result.model);
    result.checkpoints.push_back(path);
  }
  return result;
}

// ---------------------------------------------------------------- index

void normalize(std::span<float> v) {
  double n = 0.0;
  for (float x : v) n += static_cast<double>(x) * x;
  n = std::sqrt(n);
  if (n == 0.0) return;
  for (float& x : v) x = static_cast<float>(x / n);
}

void SearchIndex::validate() const {
  if (d <= 0) throw InvalidArgument("index: dimension must be positive");
  if (ids.empty()) throw InvalidArgument("index: no entries");
  if (vectors.size() != ids.size() * static_cast<std::size_t>(d)) throw InvalidArgument("index: vector table size");
  if (!previews.empty() && previews.size() != ids.size()) throw InvalidArgument("index: preview count");
  std::unordered_set<std::string_view> seen;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!seen.insert(ids[i]).second) throw InvalidArgument("index: duplicate id '" + ids[i] + "'");
    double n = 0.0;
    for (float x : row(i)) n += static_cast<double>(x) * x;
    if (std::abs(std::sqrt(n) - 1.0) > 1e-6) throw InvalidArgument("index: row '" + ids[i] + "' is not unit length");
  }
}

void SearchIndex::scores(std::span<const float> query, std::vector<float>& out) const {
  if (query.size() != static_cast<std::size_t>(d)) throw InvalidArgument("index: query dimension mismatch");
  out.resize(size());
  Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> V(
      vectors.data(), static_cast<Eigen::Index>(size()), d);
  Eigen::Map<const Eigen::VectorXf> q(query.data(), d);
  Eigen::Map<Eigen::VectorXf>(out.data(), static_cast<Eigen::Index>(out.size())).noalias() = V * q;
}

namespace {
constexpr char kIndexMagic[5] = "PSCI";
}

void save_index(std::ostream& out, const SearchIndex& index) {
  index.validate();
  binio::put_bytes(out, kIndexMagic, 4);
  binio::put<std::uint32_t>(out, kIndexVersion);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(index.size()));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(index.d));
  for (const auto& id : index.ids) binio::put_string32(out, id);
  binio::put_bytes(out, index.vectors.data(), index.vectors.size() * sizeof(float));
  // optional trailer: previews
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(index.previews.size()));
  for (const auto& p : index.previews) binio::put_string32(out, p);
  if (!out) throw IoError("index: write failed");
}

void save_index(const std::string& path, const SearchIndex& index) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("index: cannot open '" + tmp + "' for writing");
    save_index(out, index);
    out.close();
    if (!out) throw IoError("index: write to '" + tmp + "' failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("index: cannot rename to '" + path + "'");
}

SearchIndex load_index(std::istream& in) {
  binio::Reader r(in, "index");
  r.magic(kIndexMagic);
  r.version(kIndexVersion);
  SearchIndex index;
  const auto n = r.get<std::uint32_t>();
  const auto d = r.get<std::uint32_t>();
  if (n == 0 || d == 0 || d > 65536 || n > (1u << 26)) throw FormatError("index: implausible size header");
  index.d = static_cast<std::int32_t>(d);
  index.ids.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) index.ids.push_back(r.string32());
  r.floats(index.vectors, static_cast<std::size_t>(n) * d);
  if (!r.at_end()) {
    const auto np = r.get<std::uint32_t>();
    if (np != 0 && np != n) throw FormatError("index: preview count does not match entry count");
    index.previews.reserve(np);
    for (std::uint32_t i = 0; i < np; ++i) index.previews.push_back(r.string32());
  }
  if (!r.at_end()) throw FormatError("index: trailing bytes");
  try {
    index.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(e.what());
  }
  return index;
}

SearchIndex load_index(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("index: cannot open '" + path + "'");
  try {
    return load_index(in);
  } catch (const FormatError& e) {
    throw FormatError(std::string(e.what()) + " [" + path + "]");
  }
}

std::vector<float> encode_corpus(PscsModel& model, const EncodedCorpus& corpus, std::size_t batch) {
  const auto d = static_cast<std::size_t>(model.hyper().d);
  const auto g = static_cast<std::size_t>(model.hyper().g);
  std::vector<float> out;
  out.reserve(corpus.size() * d);
  std::vector<std::size_t> idx;
  std::vector<std::vector<std::size_t>> chosen;
  for (std::size_t start = 0; start < corpus.size(); start += batch) {
    idx.clear();
    chosen.clear();
    for (std::size_t i = start; i < std::min(corpus.size(), start + batch); ++i) {
      idx.push_back(i);
      chosen.push_back(inference_paths(corpus[i], g));
    }
    auto v = model.code_vectors(make_code_batch(corpus, idx, chosen));
    for (std::size_t r = 0; r < idx.size(); ++r) normalize(std::span<float>(v.data() + r * d, d));
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

SearchIndex build_index(PscsModel& model, const EncodedCorpus& corpus,
                        const std::unordered_map<std::string, std::string>* previews, const LogFn& log) {
  if (corpus.empty()) throw InvalidArgument("build_index: empty corpus");
  const auto vectors = encode_corpus(model, corpus);
  const auto d = static_cast<std::size_t>(model.hyper().d);
  SearchIndex index;
  index.d = model.hyper().d;
  std::size_t zero = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::span<const float> row(vectors.data() + i * d, d);
    if (std::all_of(row.begin(), row.end(), [](float x) { return x == 0.0f; })) {
      ++zero;
      continue;
    }
    index.ids.push_back(corpus[i].id);
    index.vectors.insert(index.vectors.end(), row.begin(), row.end());
    if (previews) {
      auto it = previews->find(corpus[i].id);
      index.previews.push_back(it == previews->end() ? std::string() : it->second);
    }
  }
  if (zero) say(log, "index: skipped " + std::to_string(zero) + " snippets with a zero code vector");
  index.validate();
  return index;
}

std::vector<SearchHit> top_k(const SearchIndex& index, std::span<const float> scores, std::size_t k) {
  if (scores.size() != index.size()) throw InvalidArgument("top_k: one score per index row");
  k = std::min(k, index.size());
  std::vector<std::uint32_t> order(index.size());
  std::iota(order.begin(), order.end(), 0u);
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return index.ids[a] < index.ids[b];
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
  std::vector<SearchHit> hits;
  hits.reserve(k);
  for (std::size_t i = 0; i < k; ++i) hits.push_back({order[i], index.ids[order[i]], scores[order[i]]});
  return hits;
}

std::vector<float> encode_query_text(PscsModel& model, const Vocabulary& words, std::string_view text,
                                     std::string* echo) {
  const std::string query = extract_query(text);
  if (echo) *echo = query;
  const auto tokens = sentence_subtokens(query);
  if (tokens.empty()) throw EmptyQuery("query is empty after preprocessing");
  std::vector<std::int32_t> ids;
  for (std::size_t i = 0; i < tokens.size() && i < static_cast<std::size_t>(model.hyper().q); ++i)
    ids.push_back(words.lookup(tokens[i]));
  QueryBatch batch;
  batch.add_ids(ids);
  auto v = model.query_vectors(batch);
  normalize(v);
  return v;
}

SearchResult search(std::string_view query_text, const SearchIndex& index, PscsModel& model,
                    const Vocabulary& words, std::size_t k) {
  if (index.d != model.hyper().d) throw InvalidArgument("search: index and model dimensions differ");
  if (words.size() != model.word_vocab_size())
    throw InvalidArgument("search: word vocabulary does not match the checkpoint");
  SearchResult result;
  const auto q = encode_query_text(model, words, query_text, &result.query);
  std::vector<float> scores;
  index.scores(q, scores);
  result.hits = top_k(index, scores, k);
  return result;
}

}  // namespace pscs
