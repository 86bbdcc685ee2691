// Command-line front end. Talks to the library only through pscs.h.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pscs/pscs.h"

namespace {

int report(pscs_status s) {
  if (s == PSCS_OK) return 0;
  std::cerr << "pscs: " << pscs_status_name(s) << ": " << pscs_last_error() << '\n';
  return static_cast<int>(s);
}

// Owns a string handed out by the library.
struct Owned {
  char* p = nullptr;
  ~Owned() { pscs_string_free(p); }
  const char* c_str() const { return p ? p : ""; }
};

struct Model {
  pscs_model* p = nullptr;
  ~Model() { pscs_model_free(p); }
};

struct Index {
  pscs_index* p = nullptr;
  ~Index() { pscs_index_free(p); }
};

struct TrainOpts {
  pscs_train_options o;
  std::string ablation;
  bool quiet = false;
  TrainOpts() { pscs_train_options_init(&o); }

  void attach(CLI::App* app) {
    app->add_option("--epochs", o.epochs, "Training epochs")->capture_default_str();
    app->add_option("--seed", o.seed, "Random seed")->capture_default_str();
    app->add_option("--ablation", ablation, "Ablation flags: full or a comma list of tokens_only, nodes_only, "
                                            "no_code_attention, no_query_attention, no_shared_embedding, no_bilstm");
    app->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
    app->add_option("--batch", o.batch, "Batch size")->capture_default_str();
    app->add_option("--d", o.d, "Embedding size")->capture_default_str();
    app->add_option("--hidden", o.hidden, "LSTM hidden size per direction")->capture_default_str();
    app->add_option("--q", o.q, "Maximum query length")->capture_default_str();
    app->add_option("--m", o.m, "Subtokens per terminal")->capture_default_str();
    app->add_option("--l", o.l, "Maximum path length")->capture_default_str();
    app->add_option("--g", o.g, "Paths sampled per snippet")->capture_default_str();
    app->add_option("--dropout", o.dropout, "Dropout rate on path vectors")->capture_default_str();
    app->add_option("--margin", o.margin, "Hinge margin")->capture_default_str();
    app->add_option("--patience", o.patience, "Early-stop patience in epochs (0 = off)")->capture_default_str();
    app->add_option("--checkpoint-every", o.checkpoint_every, "Epochs between checkpoints (0 = final only)")
        ->capture_default_str();
    app->add_option("--validation", o.validation_fraction, "Validation fraction, held out by id hash")
        ->capture_default_str();
    app->add_flag("--quiet", quiet, "No per-epoch progress");
  }

  const pscs_train_options& get() {
    o.ablation = ablation.empty() ? nullptr : ablation.c_str();
    o.verbose = quiet ? 0 : 1;
    return o;
  }
};

void print_results(const pscs_results* r) {
  const size_t n = pscs_results_count(r);
  if (n == 0) std::cout << "(no results)\n";
  for (size_t i = 0; i < n; ++i) {
    std::printf("%3zu  %.4f  %s", i + 1, pscs_results_score(r, i), pscs_results_id(r, i));
    const char* preview = pscs_results_preview(r, i);
    if (preview && *preview) std::printf("  %s", preview);
    std::printf("\n");
  }
}

bool write_file(const std::string& path, const char* text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  return static_cast<bool>(out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pscs: path-based neural code search"};
  app.require_subcommand(1);
  app.set_version_flag("--version", pscs_version());
  int rc = 0;

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Parse functions, extract paths, build vocabularies");
  pscs_preprocess_options popt;
  pscs_preprocess_options_init(&popt);
  std::string pre_in, pre_test, pre_out;
  pre->add_option("--input", pre_in, "Training pairs (JSON lines with id, code, docstring)")->required();
  pre->add_option("--test", pre_test, "Held-out pairs, same format");
  pre->add_option("--out", pre_out, "Output data directory")->required();
  pre->add_option("--min-count", popt.min_count, "Minimum token count for the vocabularies")->capture_default_str();
  pre->add_option("--word-max", popt.word_max, "Word vocabulary size cap")->capture_default_str();
  pre->add_option("--node-max", popt.node_max, "Node vocabulary size cap")->capture_default_str();
  pre->add_option("--max-height", popt.max_height, "Maximum path height")->capture_default_str();
  pre->add_option("--max-width", popt.max_width, "Maximum path width")->capture_default_str();
  pre->add_option("--cap", popt.cap, "Paths kept per snippet")->capture_default_str();
  pre->add_option("--seed", popt.seed, "Seed for path subsampling")->capture_default_str();
  pre->callback([&] {
    popt.input = pre_in.c_str();
    popt.test_input = pre_test.empty() ? nullptr : pre_test.c_str();
    popt.out_dir = pre_out.c_str();
    Owned summary;
    rc = report(pscs_preprocess(&popt, &summary.p));
    if (rc == 0) std::cout << summary.c_str() << '\n';
  });

  // train
  auto* tr = app.add_subcommand("train", "Train a model");
  TrainOpts topt;
  std::string tr_data, tr_out;
  tr->add_option("--data", tr_data, "Data directory from preprocess")->required();
  tr->add_option("--out", tr_out, "Checkpoint directory")->required();
  topt.attach(tr);
  tr->callback([&] {
    Owned history;
    rc = report(pscs_train(tr_data.c_str(), tr_out.c_str(), &topt.get(), &history.p));
    if (rc == 0) std::cout << history.c_str() << '\n';
  });

  // index
  auto* ix = app.add_subcommand("index", "Encode a corpus into a search index");
  std::string ix_data, ix_ckpt, ix_out, ix_vocab, ix_split = "all";
  ix->add_option("--data", ix_data, "Data directory")->required();
  ix->add_option("--ckpt", ix_ckpt, "Checkpoint file")->required();
  ix->add_option("--out", ix_out, "Index file to write")->required();
  ix->add_option("--split", ix_split, "train, test or all")->capture_default_str();
  ix->add_option("--vocab", ix_vocab, "Vocabulary directory (default: beside the checkpoint)");
  ix->callback([&] {
    Model m;
    Index index;
    if ((rc = report(pscs_model_load(ix_ckpt.c_str(), ix_vocab.empty() ? nullptr : ix_vocab.c_str(), &m.p)))) return;
    if ((rc = report(pscs_index_build(m.p, ix_data.c_str(), ix_split.c_str(), &index.p)))) return;
    if ((rc = report(pscs_index_save(index.p, ix_out.c_str())))) return;
    std::cout << "indexed " << pscs_index_size(index.p) << " snippets into " << ix_out << '\n';
  });

  // search
  auto* se = app.add_subcommand("search", "Search an index; reads queries from stdin without --query");
  std::string se_index, se_ckpt, se_query, se_vocab;
  std::size_t se_k = 10;
  se->add_option("--index", se_index, "Index file")->required();
  se->add_option("--ckpt", se_ckpt, "Checkpoint file")->required();
  se->add_option("--k", se_k, "Results per query")->capture_default_str();
  se->add_option("--query", se_query, "A single query");
  se->add_option("--vocab", se_vocab, "Vocabulary directory (default: beside the checkpoint)");
  se->callback([&] {
    Model m;
    Index index;
    if ((rc = report(pscs_model_load(se_ckpt.c_str(), se_vocab.empty() ? nullptr : se_vocab.c_str(), &m.p)))) return;
    if ((rc = report(pscs_index_load(se_index.c_str(), &index.p)))) return;
    auto run = [&](const std::string& q) {
      pscs_results* r = nullptr;
      const pscs_status s = pscs_search(m.p, index.p, q.c_str(), se_k, &r);
      if (s == PSCS_OK) print_results(r);
      pscs_results_free(r);
      return s;
    };
    if (!se_query.empty()) {
      rc = report(run(se_query));
      return;
    }
    std::string line;
    while (true) {
      std::cout << "query> " << std::flush;
      if (!std::getline(std::cin, line)) break;
      if (line.empty()) continue;
      report(run(line));  // keep the loop going after a bad query
    }
    std::cout << '\n';
  });

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  std::string ev_data, ev_ckpt, ev_ablation, ev_json, ev_vocab, ev_split = "test";
  std::vector<int64_t> ev_ks = {1, 5, 10};
  bool ev_by_length = false;
  ev->add_option("--data", ev_data, "Data directory")->required();
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--k", ev_ks, "Cutoffs for SuccessRate@k, comma separated")->delimiter(',')->capture_default_str();
  ev->add_option("--ablation", ev_ablation, "Switch attention off at inference (no_code_attention, no_query_attention)");
  ev->add_flag("--by-length", ev_by_length, "Add the query-length table");
  ev->add_option("--json", ev_json, "Also write the JSON report here");
  ev->add_option("--split", ev_split, "train or test")->capture_default_str();
  ev->add_option("--vocab", ev_vocab, "Vocabulary directory (default: beside the checkpoint)");
  ev->callback([&] {
    Model m;
    if ((rc = report(pscs_model_load(ev_ckpt.c_str(), ev_vocab.empty() ? nullptr : ev_vocab.c_str(), &m.p)))) return;
    pscs_eval_options o;
    pscs_eval_options_init(&o);
    o.ks = ev_ks.data();
    o.num_ks = ev_ks.size();
    o.ablation = ev_ablation.empty() ? nullptr : ev_ablation.c_str();
    o.by_length = ev_by_length ? 1 : 0;
    o.split = ev_split.c_str();
    Owned json, text;
    const pscs_status s = pscs_eval(m.p, ev_data.c_str(), &o, &json.p, &text.p);
    if (text.p) std::cout << text.c_str();
    if (json.p && !ev_json.empty() && !write_file(ev_json, json.c_str())) {
      std::cerr << "pscs: cannot write " << ev_json << '\n';
      rc = static_cast<int>(PSCS_E_IO);
      return;
    }
    rc = report(s);
  });

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train and compare ablation variants against the full model");
  TrainOpts aopt;
  std::string ab_data, ab_out, ab_json;
  std::string ab_variants =
      "tokens_only;nodes_only;no_code_attention;no_query_attention;no_shared_embedding;no_bilstm";
  ab->add_option("--data", ab_data, "Data directory with train and test splits")->required();
  ab->add_option("--out", ab_out, "Directory for per-variant checkpoints");
  ab->add_option("--variants", ab_variants, "Semicolon-separated variants")->capture_default_str();
  ab->add_option("--json", ab_json, "Also write the JSON table here");
  aopt.attach(ab);
  ab->callback([&] {
    Owned json, text;
    rc = report(pscs_ablate(ab_data.c_str(), ab_out.empty() ? nullptr : ab_out.c_str(), &aopt.get(),
                            ab_variants.c_str(), &json.p, &text.p));
    if (rc) return;
    std::cout << text.c_str();
    if (!ab_json.empty()) write_file(ab_json, json.c_str());
  });

  // timing
  auto* tm = app.add_subcommand("timing", "Measure encoding and search latency");
  std::string tm_index, tm_ckpt, tm_data, tm_vocab;
  std::size_t tm_trials = 1000;
  tm->add_option("--index", tm_index, "Index file")->required();
  tm->add_option("--ckpt", tm_ckpt, "Checkpoint file")->required();
  tm->add_option("--data", tm_data, "Data directory supplying sample snippets and queries")->required();
  tm->add_option("--trials", tm_trials, "Trials per stage")->capture_default_str();
  tm->add_option("--vocab", tm_vocab, "Vocabulary directory (default: beside the checkpoint)");
  tm->callback([&] {
    Model m;
    Index index;
    if ((rc = report(pscs_model_load(tm_ckpt.c_str(), tm_vocab.empty() ? nullptr : tm_vocab.c_str(), &m.p)))) return;
    if ((rc = report(pscs_index_load(tm_index.c_str(), &index.p)))) return;
    Owned json, text;
    if ((rc = report(pscs_timing(m.p, index.p, tm_data.c_str(), tm_trials, &json.p, &text.p)))) return;
    std::cout << text.c_str();
  });

  // info
  auto* in = app.add_subcommand("info", "Print a checkpoint's hyperparameters and tensors");
  std::string in_ckpt, in_vocab;
  in->add_option("--ckpt", in_ckpt, "Checkpoint file")->required();
  in->add_option("--vocab", in_vocab, "Vocabulary directory (default: beside the checkpoint)");
  in->callback([&] {
    Model m;
    if ((rc = report(pscs_model_load(in_ckpt.c_str(), in_vocab.empty() ? nullptr : in_vocab.c_str(), &m.p)))) return;
    Owned json;
    if ((rc = report(pscs_model_info(m.p, &json.p)))) return;
    std::cout << json.c_str() << '\n';
  });

  // synth
  auto* sy = app.add_subcommand("synth", "Generate a synthetic Java corpus with train/test splits");
  std::string sy_out, sy_test;
  std::size_t sy_pairs = 20000, sy_test_pairs = 2000, sy_variants = 4;
  std::uint64_t sy_seed = 1;
  sy->add_option("--out", sy_out, "Training pairs file")->required();
  sy->add_option("--test", sy_test, "Test pairs file");
  sy->add_option("--pairs", sy_pairs, "Training pairs")->capture_default_str();
  sy->add_option("--test-pairs", sy_test_pairs, "Test pairs (needs --test)")->capture_default_str();
  sy->add_option("--variants", sy_variants, "Snippets per family, 1..4")->capture_default_str();
  sy->add_option("--seed", sy_seed, "Seed")->capture_default_str();
  sy->callback([&] {
    const std::size_t test_pairs = sy_test.empty() ? 0 : sy_test_pairs;
    rc = report(pscs_synth(sy_out.c_str(), sy_test.empty() ? nullptr : sy_test.c_str(), sy_pairs, test_pairs,
                           sy_variants, sy_seed));
  });

  CLI11_PARSE(app, argc, argv);
  return rc;
}
