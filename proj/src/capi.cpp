#include "pscs/pscs.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <memory>
#include <new>

#include <json.hpp>

#include "pscs/engine.hpp"
#include "pscs/evaluate.hpp"
#include "pscs/synth.hpp"

namespace fs = std::filesystem;

struct pscs_model {
  pscs::PscsModel model;
  pscs::Vocabulary words;
  pscs::Vocabulary nodes;
};

struct pscs_index {
  pscs::SearchIndex index;
};

struct pscs_results {
  pscs::SearchResult result;
  std::vector<std::string> previews;
};

namespace {

thread_local std::string g_error;

pscs_status fail(pscs_status status, const std::string& message) {
  g_error = message;
  return status;
}

template <typename F>
pscs_status guarded(F&& body) {
  try {
    g_error.clear();
    return body();
  } catch (const pscs::EmptyQuery& e) {
    return fail(PSCS_E_EMPTY_QUERY, e.what());
  } catch (const pscs::InvalidArgument& e) {
    return fail(PSCS_E_INVALID_ARGUMENT, e.what());
  } catch (const pscs::IoError& e) {
    return fail(PSCS_E_IO, e.what());
  } catch (const pscs::FormatError& e) {
    return fail(PSCS_E_FORMAT, e.what());
  } catch (const pscs::ParseError& e) {
    return fail(PSCS_E_PARSE, e.what());
  } catch (const pscs::NumericError& e) {
    return fail(PSCS_E_NUMERIC, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(PSCS_E_FORMAT, e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(PSCS_E_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(PSCS_E_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(PSCS_E_INTERNAL, e.what());
  } catch (...) {
    return fail(PSCS_E_INTERNAL, "unknown error");
  }
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void set_out(char** out, const std::string& s) {
  if (out) *out = dup(s);
}

void require(const void* p, const char* what) {
  if (!p) throw pscs::InvalidArgument(std::string(what) + " must not be NULL");
}

pscs::HyperParams hyper_from(const pscs_train_options& o) {
  pscs::HyperParams hp;
  hp.d = o.d;
  hp.hidden = o.hidden;
  hp.q = o.q;
  hp.m = o.m;
  hp.l = o.l;
  hp.g = o.g;
  hp.batch = o.batch;
  hp.dropout = o.dropout;
  hp.margin = o.margin;
  hp.delta = o.delta;
  hp.lr = o.lr;
  hp.validate();
  return hp;
}

pscs::TrainConfig config_from(const pscs_train_options& o, const std::string& out_dir) {
  pscs::TrainConfig c;
  c.hp = hyper_from(o);
  c.ablation = pscs::AblationConfig::parse(o.ablation ? o.ablation : "");
  c.epochs = o.epochs;
  c.seed = o.seed;
  c.checkpoint_every = o.checkpoint_every;
  c.patience = o.patience;
  c.validation_fraction = o.validation_fraction;
  c.out_dir = out_dir;
  c.validate();
  return c;
}

pscs::LogFn stderr_log(bool verbose) {
  if (!verbose) return {};
  return [](const std::string& s) { std::cerr << s << std::endl; };
}

std::string split_file(const std::string& split) {
  if (split == "train") return "train.paths.jsonl";
  if (split == "test") return "test.paths.jsonl";
  throw pscs::InvalidArgument("unknown split '" + split + "' (train, test or all)");
}

// Loads the named split of a data dir with the model's vocabularies.
pscs::EncodedCorpus load_split(const pscs_model& m, const pscs::DataDir& data, const std::string& split) {
  const auto& hp = m.model.hyper();
  pscs::EncodedCorpus corpus(hp.m, hp.l, hp.q);
  const std::vector<std::string> parts =
      split == "all" ? std::vector<std::string>{"train", "test"} : std::vector<std::string>{split};
  bool any = false;
  for (const auto& part : parts) {
    const std::string name = split_file(part);
    if (!data.has(name)) {
      if (split == "all") continue;
      throw pscs::IoError("data dir " + data.dir + " has no " + name);
    }
    pscs::append_corpus(corpus, data.file(name), m.words, m.nodes);
    any = true;
  }
  if (!any) throw pscs::IoError("data dir " + data.dir + " has no path files");
  return corpus;
}

pscs::DataDir open_data(const char* dir) {
  require(dir, "data_dir");
  pscs::DataDir d;
  d.dir = dir;
  return d;
}

}  // namespace

extern "C" {

const char* pscs_version(void) { return "1.0.0"; }

const char* pscs_status_name(pscs_status status) {
  switch (status) {
    case PSCS_OK: return "ok";
    case PSCS_E_INVALID_ARGUMENT: return "invalid argument";
    case PSCS_E_IO: return "i/o error";
    case PSCS_E_FORMAT: return "format error";
    case PSCS_E_PARSE: return "parse error";
    case PSCS_E_NUMERIC: return "numeric error";
    case PSCS_E_EMPTY_QUERY: return "empty query";
    case PSCS_E_INVARIANT: return "invariant violated";
    case PSCS_E_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* pscs_last_error(void) { return g_error.c_str(); }

void pscs_string_free(char* s) { std::free(s); }

void pscs_preprocess_options_init(pscs_preprocess_options* o) {
  if (!o) return;
  const pscs::PreprocessConfig c;
  *o = {};
  o->min_count = static_cast<uint32_t>(c.min_count);
  o->word_max = static_cast<uint32_t>(c.word_max);
  o->node_max = static_cast<uint32_t>(c.node_max);
  o->max_height = c.limits.max_height;
  o->max_width = c.limits.max_width;
  o->cap = static_cast<uint32_t>(c.limits.cap);
  o->seed = c.seed;
}

pscs_status pscs_preprocess(const pscs_preprocess_options* o, char** summary_json) {
  return guarded([&] {
    require(o, "options");
    require(o->input, "options.input");
    require(o->out_dir, "options.out_dir");
    pscs::PreprocessConfig c;
    c.input = o->input;
    c.test_input = o->test_input ? o->test_input : "";
    c.out_dir = o->out_dir;
    c.min_count = o->min_count;
    c.word_max = o->word_max;
    c.node_max = o->node_max;
    c.limits = {o->max_height, o->max_width, o->cap};
    if (c.limits.max_height < 1 || c.limits.max_width < 1 || c.limits.cap < 1)
      throw pscs::InvalidArgument("path limits must be positive");
    c.seed = o->seed;
    const auto s = pscs::preprocess(c, stderr_log(true));
    set_out(summary_json, nlohmann::json{{"read", s.read},
                                         {"short_annotation", s.short_annotation},
                                         {"parse_errors", s.parse_errors},
                                         {"no_paths", s.no_paths},
                                         {"train", s.train},
                                         {"test", s.test},
                                         {"word_vocab", s.word_vocab},
                                         {"node_vocab", s.node_vocab}}
                              .dump(2));
    return PSCS_OK;
  });
}

void pscs_train_options_init(pscs_train_options* o) {
  if (!o) return;
  const pscs::TrainConfig c;
  *o = {};
  o->d = c.hp.d;
  o->hidden = c.hp.hidden;
  o->q = c.hp.q;
  o->m = c.hp.m;
  o->l = c.hp.l;
  o->g = c.hp.g;
  o->batch = c.hp.batch;
  o->dropout = c.hp.dropout;
  o->margin = c.hp.margin;
  o->delta = c.hp.delta;
  o->lr = c.hp.lr;
  o->ablation = nullptr;
  o->epochs = c.epochs;
  o->seed = c.seed;
  o->checkpoint_every = c.checkpoint_every;
  o->patience = c.patience;
  o->validation_fraction = c.validation_fraction;
  o->verbose = 0;
}

pscs_status pscs_train(const char* data_dir, const char* out_dir, const pscs_train_options* o, char** history_json) {
  return guarded([&] {
    require(o, "options");
    require(out_dir, "out_dir");
    const auto config = config_from(*o, out_dir);
    const auto data = pscs::DataDir::open(open_data(data_dir).dir);
    const auto corpus = pscs::load_corpus(data.file("train.paths.jsonl"), data.words, data.nodes, config.hp);
    fs::create_directories(out_dir);
    data.words.save((fs::path(out_dir) / "word.vocab").string());
    data.nodes.save((fs::path(out_dir) / "node.vocab").string());
    const auto result = pscs::train(config, corpus, stderr_log(o->verbose != 0));
    nlohmann::json h = nlohmann::json::array();
    for (const auto& e : result.history)
      h.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"validation_mrr", e.validation_mrr}, {"seconds", e.seconds}});
    set_out(history_json, nlohmann::json{{"best_epoch", result.best_epoch},
                                         {"train_pairs", result.train_pairs},
                                         {"validation_pairs", result.validation_pairs},
                                         {"checkpoints", result.checkpoints},
                                         {"history", h}}
                              .dump(2));
    return PSCS_OK;
  });
}

pscs_status pscs_model_load(const char* checkpoint, const char* vocab_dir, pscs_model** out) {
  return guarded([&] {
    require(checkpoint, "checkpoint");
    require(out, "out");
    *out = nullptr;
    auto model = pscs::load_checkpoint(std::string(checkpoint));
    const fs::path dir = vocab_dir ? fs::path(vocab_dir) : fs::path(checkpoint).parent_path();
    auto words = pscs::Vocabulary::load((dir / "word.vocab").string());
    auto nodes = pscs::Vocabulary::load((dir / "node.vocab").string());
    if (words.kind() != pscs::VocabKind::Word || nodes.kind() != pscs::VocabKind::Node)
      throw pscs::FormatError("vocabulary kinds are swapped in " + dir.string());
    if (words.size() != model.word_vocab_size())
      throw pscs::FormatError("word vocabulary in " + dir.string() + " does not match the checkpoint");
    if (!model.ablation().tokens_only && nodes.size() != model.node_vocab_size())
      throw pscs::FormatError("node vocabulary in " + dir.string() + " does not match the checkpoint");
    *out = new pscs_model{std::move(model), std::move(words), std::move(nodes)};
    return PSCS_OK;
  });
}

void pscs_model_free(pscs_model* model) { delete model; }

pscs_status pscs_model_info(const pscs_model* m, char** json) {
  return guarded([&] {
    require(m, "model");
    const auto& hp = m->model.hyper();
    nlohmann::json tensors = nlohmann::json::object();
    for (const auto& name : m->model.params().names()) tensors[name] = m->model.params().get(name).shape;
    set_out(json, nlohmann::json{{"d", hp.d},
                                 {"hidden", hp.hidden},
                                 {"q", hp.q},
                                 {"m", hp.m},
                                 {"l", hp.l},
                                 {"g", hp.g},
                                 {"dropout", hp.dropout},
                                 {"margin", hp.margin},
                                 {"delta", hp.delta},
                                 {"lr", hp.lr},
                                 {"batch", hp.batch},
                                 {"ablation", m->model.ablation().to_string()},
                                 {"word_vocab", m->words.size()},
                                 {"node_vocab", m->nodes.size()},
                                 {"tensors", tensors}}
                          .dump(2));
    return PSCS_OK;
  });
}

pscs_status pscs_index_build(pscs_model* m, const char* data_dir, const char* split, pscs_index** out) {
  return guarded([&] {
    require(m, "model");
    require(out, "out");
    *out = nullptr;
    const auto data = open_data(data_dir);
    const auto corpus = load_split(*m, data, split ? split : "all");
    std::unordered_map<std::string, std::string> previews;
    if (data.has("code.jsonl")) previews = pscs::load_previews(data.file("code.jsonl"));
    auto index = pscs::build_index(m->model, corpus, previews.empty() ? nullptr : &previews, stderr_log(true));
    *out = new pscs_index{std::move(index)};
    return PSCS_OK;
  });
}

pscs_status pscs_index_save(const pscs_index* index, const char* path) {
  return guarded([&] {
    require(index, "index");
    require(path, "path");
    pscs::save_index(std::string(path), index->index);
    return PSCS_OK;
  });
}

pscs_status pscs_index_load(const char* path, pscs_index** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    *out = new pscs_index{pscs::load_index(std::string(path))};
    return PSCS_OK;
  });
}

size_t pscs_index_size(const pscs_index* index) { return index ? index->index.size() : 0; }

void pscs_index_free(pscs_index* index) { delete index; }

pscs_status pscs_search(pscs_model* m, const pscs_index* index, const char* query, size_t k, pscs_results** out) {
  return guarded([&] {
    require(m, "model");
    require(index, "index");
    require(query, "query");
    require(out, "out");
    *out = nullptr;
    auto r = std::make_unique<pscs_results>();
    r->result = pscs::search(query, index->index, m->model, m->words, k);
    for (const auto& h : r->result.hits)
      r->previews.push_back(index->index.previews.empty() ? std::string() : index->index.previews[h.row]);
    *out = r.release();
    return PSCS_OK;
  });
}

const char* pscs_results_query(const pscs_results* r) { return r ? r->result.query.c_str() : ""; }
size_t pscs_results_count(const pscs_results* r) { return r ? r->result.hits.size() : 0; }
const char* pscs_results_id(const pscs_results* r, size_t i) {
  return r && i < r->result.hits.size() ? r->result.hits[i].id.c_str() : nullptr;
}
float pscs_results_score(const pscs_results* r, size_t i) {
  return r && i < r->result.hits.size() ? r->result.hits[i].score : 0.0f;
}
const char* pscs_results_preview(const pscs_results* r, size_t i) {
  return r && i < r->previews.size() ? r->previews[i].c_str() : nullptr;
}
void pscs_results_free(pscs_results* r) { delete r; }

void pscs_eval_options_init(pscs_eval_options* o) {
  if (!o) return;
  *o = {};
}

pscs_status pscs_eval(pscs_model* m, const char* data_dir, const pscs_eval_options* o, char** report_json,
                      char** report_text) {
  return guarded([&] {
    require(m, "model");
    pscs_eval_options defaults;
    pscs_eval_options_init(&defaults);
    if (!o) o = &defaults;
    std::vector<std::int64_t> ks = {1, 5, 10};
    if (o->ks && o->num_ks) ks.assign(o->ks, o->ks + o->num_ks);
    for (auto k : ks)
      if (k < 0) throw pscs::InvalidArgument("k must be >= 0");

    pscs::PscsModel model = m->model;
    if (o->ablation) {
      const auto want = pscs::AblationConfig::parse(o->ablation);
      const auto& have = model.ablation();
      if (want.tokens_only != have.tokens_only || want.nodes_only != have.nodes_only ||
          want.no_shared_embedding != have.no_shared_embedding || want.no_bilstm != have.no_bilstm)
        throw pscs::InvalidArgument("ablation '" + want.to_string() + "' changes the architecture of a '" +
                                    have.to_string() + "' checkpoint; train that variant instead");
      model.override_attention(want.no_code_attention, want.no_query_attention);
    }
    const auto corpus = load_split(*m, open_data(data_dir), o->split ? o->split : "test");
    auto report = pscs::evaluate_checkpoint(corpus, model, ks);
    if (!o->by_length) report.breakdown.clear();
    set_out(report_json, report.to_json());
    set_out(report_text, report.to_text());
    if (!report.ok()) return fail(PSCS_E_INVARIANT, "evaluation report failed: " + report.violations.front());
    return PSCS_OK;
  });
}

pscs_status pscs_ablate(const char* data_dir, const char* out_dir, const pscs_train_options* o, const char* variants,
                        char** table_json, char** table_text) {
  return guarded([&] {
    require(o, "options");
    require(variants, "variants");
    const auto config = config_from(*o, out_dir ? out_dir : "");
    const auto data = pscs::DataDir::open(open_data(data_dir).dir);
    const auto train = pscs::load_corpus(data.file("train.paths.jsonl"), data.words, data.nodes, config.hp);
    if (!data.has("test.paths.jsonl")) throw pscs::IoError("data dir " + data.dir + " has no test.paths.jsonl");
    const auto test = pscs::load_corpus(data.file("test.paths.jsonl"), data.words, data.nodes, config.hp);
    std::vector<pscs::AblationConfig> list;
    std::string spec = variants;
    for (std::size_t pos = 0; pos <= spec.size();) {
      auto end = spec.find(';', pos);
      if (end == std::string::npos) end = spec.size();
      const auto item = spec.substr(pos, end - pos);
      if (!item.empty()) list.push_back(pscs::AblationConfig::parse(item));
      pos = end + 1;
    }
    const std::int64_t ks[] = {1, 5, 10};
    const auto table = pscs::ablation_campaign(train, test, config, list, ks, stderr_log(o->verbose != 0));
    set_out(table_json, table.to_json());
    set_out(table_text, table.to_text());
    return PSCS_OK;
  });
}

pscs_status pscs_timing(pscs_model* m, const pscs_index* index, const char* data_dir, size_t trials,
                        char** report_json, char** report_text) {
  return guarded([&] {
    require(m, "model");
    require(index, "index");
    const auto data = open_data(data_dir);
    const auto sample = load_split(*m, data, data.has("test.paths.jsonl") ? "test" : "train");
    const auto r = pscs::timing_report(index->index, m->model, sample, trials);
    set_out(report_json, r.to_json());
    set_out(report_text, r.to_text());
    return PSCS_OK;
  });
}

pscs_status pscs_synth(const char* train_file, const char* test_file, size_t train_pairs, size_t test_pairs,
                       size_t variants, uint64_t seed) {
  return guarded([&] {
    require(train_file, "train_file");
    if (test_pairs > 0) require(test_file, "test_file");
    pscs::write_synth_split(train_file, test_pairs ? test_file : "", train_pairs, test_pairs, variants, seed);
    return PSCS_OK;
  });
}

}  // extern "C"
