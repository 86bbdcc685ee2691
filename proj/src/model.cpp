#include "pscs/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace pscs {

using nn::Graph;
using nn::Tensor;
using nn::Var;

void HyperParams::validate() const {
  if (d <= 0 || hidden <= 0 || q <= 0 || m <= 0 || l <= 0 || g <= 0 || batch <= 0)
    throw InvalidArgument("hyperparameters: sizes must be positive");
  if (!(dropout >= 0.0f && dropout < 1.0f)) throw InvalidArgument("hyperparameters: dropout must be in [0, 1)");
  if (!(margin > 0.0f) || !(delta > 0.0f) || !(lr > 0.0f))
    throw InvalidArgument("hyperparameters: margin, delta and lr must be positive");
}

namespace {

struct Flag {
  const char* name;
  bool AblationConfig::*member;
};

const Flag kFlags[] = {
    {"tokens_only", &AblationConfig::tokens_only},
    {"nodes_only", &AblationConfig::nodes_only},
    {"no_code_attention", &AblationConfig::no_code_attention},
    {"no_query_attention", &AblationConfig::no_query_attention},
    {"no_shared_embedding", &AblationConfig::no_shared_embedding},
    {"no_bilstm", &AblationConfig::no_bilstm},
};

}  // namespace

void AblationConfig::validate() const {
  if (tokens_only && nodes_only) throw InvalidArgument("ablation: tokens_only and nodes_only are incompatible");
}

std::uint32_t AblationConfig::bits() const {
  std::uint32_t b = 0;
  for (std::size_t i = 0; i < std::size(kFlags); ++i)
    if (this->*kFlags[i].member) b |= 1u << i;
  return b;
}

AblationConfig AblationConfig::from_bits(std::uint32_t bits) {
  if (bits >> std::size(kFlags)) throw FormatError("ablation: unknown flag bits " + std::to_string(bits));
  AblationConfig a;
  for (std::size_t i = 0; i < std::size(kFlags); ++i) a.*kFlags[i].member = (bits >> i) & 1u;
  a.validate();
  return a;
}

std::string AblationConfig::to_string() const {
  std::string out;
  for (const auto& f : kFlags) {
    if (!(this->*f.member)) continue;
    if (!out.empty()) out += ',';
    out += f.name;
  }
  return out.empty() ? "full" : out;
}

AblationConfig AblationConfig::parse(std::string_view flags) {
  AblationConfig a;
  std::size_t pos = 0;
  while (pos <= flags.size()) {
    auto end = flags.find(',', pos);
    if (end == std::string_view::npos) end = flags.size();
    std::string_view item = flags.substr(pos, end - pos);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty() && item != "full" && item != "none") {
      bool known = false;
      for (const auto& f : kFlags) {
        if (item == f.name) {
          a.*f.member = true;
          known = true;
        }
      }
      if (!known) throw InvalidArgument("ablation: unknown flag '" + std::string(item) + "'");
    }
    pos = end + 1;
  }
  a.validate();
  return a;
}

std::int64_t path_vector_width(const HyperParams& hp, const AblationConfig& ablation) {
  if (ablation.tokens_only) return 2 * hp.d;
  if (ablation.nodes_only) return 2 * hp.hidden;
  return 2 * hp.d + 2 * hp.hidden;
}

// ---------------------------------------------------------------- ModelParams

ModelParams::ModelParams(const ModelParams& other) {
  for (const auto& e : other.entries_) entries_.push_back(std::make_unique<Entry>(*e));
}

ModelParams& ModelParams::operator=(const ModelParams& other) {
  if (this != &other) {
    entries_.clear();
    for (const auto& e : other.entries_) entries_.push_back(std::make_unique<Entry>(*e));
  }
  return *this;
}

Tensor& ModelParams::add(std::string name, Tensor tensor) {
  if (contains(name)) throw InvalidArgument("duplicate parameter '" + name + "'");
  entries_.push_back(std::make_unique<Entry>(Entry{std::move(name), std::move(tensor)}));
  return entries_.back()->tensor;
}

bool ModelParams::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e->name == name; });
}

Tensor& ModelParams::get(std::string_view name) {
  for (auto& e : entries_)
    if (e->name == name) return e->tensor;
  throw InvalidArgument("unknown parameter '" + std::string(name) + "'");
}

const Tensor& ModelParams::get(std::string_view name) const { return const_cast<ModelParams*>(this)->get(name); }

std::vector<std::string> ModelParams::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e->name);
  return out;
}

std::vector<Tensor*> ModelParams::tensors() {
  std::vector<Tensor*> out;
  for (auto& e : entries_) out.push_back(&e->tensor);
  return out;
}

void ModelParams::enable_grad() {
  for (auto& e : entries_) e->tensor.enable_grad();
}

void ModelParams::zero_grad() {
  for (auto& e : entries_) e->tensor.zero_grad();
}

std::vector<std::pair<std::string, std::vector<std::int64_t>>> expected_tensors(const HyperParams& hp,
                                                                               const AblationConfig& ab,
                                                                               std::size_t word_vocab,
                                                                               std::size_t node_vocab) {
  const std::int64_t d = hp.d, H = hp.hidden, F = path_vector_width(hp, ab);
  const auto ow = static_cast<std::int64_t>(word_vocab), on = static_cast<std::int64_t>(node_vocab);
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> out;
  out.push_back({"e1", {ow, d}});
  if (ab.no_shared_embedding) out.push_back({"e1_query", {ow, d}});
  if (!ab.tokens_only) {
    out.push_back({"e2", {on, d}});
    if (ab.no_bilstm) {
      out.push_back({"w_node_proj", {2 * H, d}});
    } else {
      for (const char* dir : {"lstm_fwd", "lstm_bwd"}) {
        out.push_back({std::string(dir) + ".w_ih", {4 * H, d}});
        out.push_back({std::string(dir) + ".w_hh", {4 * H, H}});
        out.push_back({std::string(dir) + ".bias", {1, 4 * H}});
      }
    }
  }
  if (!ab.no_code_attention) out.push_back({"w_a", {F, F}});
  if (!ab.no_query_attention) out.push_back({"w_b", {d, d}});
  out.push_back({"w_fuse", {d, F}});
  return out;
}

ModelParams init_params(const HyperParams& hp, const AblationConfig& ablation, std::size_t word_vocab,
                        std::size_t node_vocab, std::uint64_t seed) {
  hp.validate();
  ablation.validate();
  Rng rng(seed);
  ModelParams params;
  for (const auto& [name, shape] : expected_tensors(hp, ablation, word_vocab, node_vocab)) {
    Tensor t(shape);
    const bool embedding = name == "e1" || name == "e1_query" || name == "e2";
    if (name.ends_with(".bias")) {
      for (std::int64_t k = hp.hidden; k < 2 * hp.hidden; ++k) t.data[static_cast<std::size_t>(k)] = 1.0f;
    } else {
      const float bound = embedding ? 0.1f : 1.0f / std::sqrt(static_cast<float>(shape[1]));
      for (auto& v : t.data) v = rng.uniform(-bound, bound);
    }
    params.add(name, std::move(t));
  }
  return params;
}

// ---------------------------------------------------------------- batches

CodeBatch CodeBatch::from_bags(std::span<const PathBag> bags) {
  CodeBatch b;
  std::map<std::vector<std::int32_t>, std::int32_t> seqs;
  for (const auto& bag : bags) {
    std::size_t real = 0;
    for (std::size_t s = 0; s < bag.contexts.size(); ++s) {
      if (!bag.path_mask[s]) continue;
      const auto& c = bag.contexts[s];
      if (b.m == 0) {
        b.m = static_cast<std::int32_t>(c.start_ids.size());
        b.l = static_cast<std::int32_t>(c.node_ids.size());
      }
      if (c.start_ids.size() != static_cast<std::size_t>(b.m) || c.node_ids.size() != static_cast<std::size_t>(b.l))
        throw InvalidArgument("CodeBatch: inconsistent context lengths");
      b.start_ids.insert(b.start_ids.end(), c.start_ids.begin(), c.start_ids.end());
      b.start_mask.insert(b.start_mask.end(), c.start_mask.begin(), c.start_mask.end());
      b.end_ids.insert(b.end_ids.end(), c.end_ids.begin(), c.end_ids.end());
      b.end_mask.insert(b.end_mask.end(), c.end_mask.begin(), c.end_mask.end());
      std::vector<std::int32_t> key(c.node_ids.size());
      for (std::size_t k = 0; k < key.size(); ++k) key[k] = c.node_mask[k] ? c.node_ids[k] : -1;
      auto [it, inserted] = seqs.try_emplace(std::move(key), static_cast<std::int32_t>(seqs.size()));
      if (inserted) {
        b.seq_ids.insert(b.seq_ids.end(), c.node_ids.begin(), c.node_ids.end());
        b.seq_mask.insert(b.seq_mask.end(), c.node_mask.begin(), c.node_mask.end());
      }
      b.path_seq.push_back(it->second);
      ++real;
    }
    if (real == 0) throw InvalidArgument("CodeBatch: snippet '" + bag.code_id + "' has no real paths");
    b.path_offsets.push_back(static_cast<std::int32_t>(b.path_seq.size()));
  }
  return b;
}

void QueryBatch::add(const QueryTokens& tokens) {
  for (std::size_t i = 0; i < tokens.ids.size(); ++i)
    if (tokens.mask[i]) ids.push_back(tokens.ids[i]);
  if (static_cast<std::int32_t>(ids.size()) == offsets.back())
    throw InvalidArgument("QueryBatch: query without real tokens");
  offsets.push_back(static_cast<std::int32_t>(ids.size()));
}

void QueryBatch::add_ids(std::span<const std::int32_t> real_ids) {
  if (real_ids.empty()) throw InvalidArgument("QueryBatch: query without real tokens");
  ids.insert(ids.end(), real_ids.begin(), real_ids.end());
  offsets.push_back(static_cast<std::int32_t>(ids.size()));
}

QueryBatch QueryBatch::from_tokens(std::span<const QueryTokens> tokens) {
  QueryBatch b;
  for (const auto& t : tokens) b.add(t);
  return b;
}

// ---------------------------------------------------------------- encoders

Var encode_terminal(Var e1, std::span<const std::int32_t> subtoken_ids, std::span<const std::uint8_t> mask,
                    std::int64_t m) {
  return nn::embedding_bag(e1, subtoken_ids, mask, m);
}

Var encode_nodes(Var e2, std::span<const std::int32_t> node_ids, std::span<const std::uint8_t> mask, std::int64_t l,
                 const nn::LstmWeights& fwd, const nn::LstmWeights& bwd, std::int64_t hidden) {
  if (l <= 0 || node_ids.empty() || node_ids.size() % static_cast<std::size_t>(l) != 0 || mask.size() != node_ids.size())
    throw InvalidArgument("encode_nodes: ids must be a non-empty multiple of l");
  const std::size_t U = node_ids.size() / static_cast<std::size_t>(l);
  std::size_t steps = 0;
  for (std::size_t u = 0; u < U; ++u) {
    std::size_t last = 0;
    for (std::size_t t = 0; t < static_cast<std::size_t>(l); ++t)
      if (mask[u * static_cast<std::size_t>(l) + t]) last = t + 1;
    if (last == 0) throw InvalidArgument("encode_nodes: empty node sequence");
    steps = std::max(steps, last);
  }
  std::vector<Var> inputs;
  std::vector<std::vector<std::uint8_t>> masks;
  std::vector<std::int32_t> ids_t(U);
  std::vector<std::uint8_t> mask_t(U);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t u = 0; u < U; ++u) {
      ids_t[u] = node_ids[u * static_cast<std::size_t>(l) + t];
      mask_t[u] = mask[u * static_cast<std::size_t>(l) + t];
    }
    inputs.push_back(nn::embedding_lookup(e2, ids_t, mask_t));
    masks.push_back(mask_t);
  }
  return nn::bilstm_final(inputs, masks, fwd, bwd, hidden);
}

Var attend_paths(Var path_vectors, std::span<const std::int32_t> offsets, Var w_a) {
  const Var context = nn::segment_mean(path_vectors, offsets);
  // (W_a e) . c == e . (c W_a): one [S,F]x[F,F] product instead of one per path.
  const Var probe = nn::matmul(context, w_a);
  std::vector<std::int32_t> segment_of_row;
  segment_of_row.reserve(static_cast<std::size_t>(offsets.back()));
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s)
    segment_of_row.insert(segment_of_row.end(), static_cast<std::size_t>(offsets[s + 1] - offsets[s]),
                          static_cast<std::int32_t>(s));
  const Var logits = nn::rowwise_dot(path_vectors, nn::gather_rows(probe, segment_of_row));
  return nn::segment_softmax(logits, offsets);
}

Var ranking_loss(Var v_query_pos, Var v_query_neg, Var v_code, float margin, float delta) {
  const Var pos = nn::cosine_rows(v_query_pos, v_code, delta);
  const Var neg = nn::cosine_rows(v_query_neg, v_code, delta);
  return nn::mean_all(nn::relu(nn::add_scalar(nn::sub(neg, pos), margin)));
}

PscsModel::PscsModel(HyperParams hp, AblationConfig ablation, ModelParams params)
    : hp_(hp), ablation_(ablation), params_(std::move(params)) {
  hp_.validate();
  ablation_.validate();
  for (const auto& [name, shape] : expected_tensors(hp_, ablation_, word_vocab_size(), node_vocab_size())) {
    if (!params_.contains(name)) throw FormatError("model: missing tensor '" + name + "'");
    if (params_.get(name).shape != shape) throw FormatError("model: tensor '" + name + "' has the wrong shape");
  }
  if (params_.size() != expected_tensors(hp_, ablation_, 0, 0).size())
    throw FormatError("model: unexpected extra tensors for ablation " + ablation_.to_string());
}

PscsModel PscsModel::create(const HyperParams& hp, const AblationConfig& ablation, std::size_t word_vocab,
                            std::size_t node_vocab, std::uint64_t seed) {
  return PscsModel(hp, ablation, init_params(hp, ablation, word_vocab, node_vocab, seed));
}

std::size_t PscsModel::word_vocab_size() const {
  return params_.contains("e1") ? static_cast<std::size_t>(params_.get("e1").shape.at(0)) : 0;
}

std::size_t PscsModel::node_vocab_size() const {
  return params_.contains("e2") ? static_cast<std::size_t>(params_.get("e2").shape.at(0)) : 0;
}

void PscsModel::override_attention(bool no_code_attention, bool no_query_attention) {
  if (ablation_.no_code_attention && !no_code_attention)
    throw InvalidArgument("model was trained without code attention; it cannot be re-enabled");
  if (ablation_.no_query_attention && !no_query_attention)
    throw InvalidArgument("model was trained without query attention; it cannot be re-enabled");
  ablation_.no_code_attention = no_code_attention;
  ablation_.no_query_attention = no_query_attention;
}

BoundParams PscsModel::bind(Graph& graph) {
  BoundParams b;
  auto maybe = [&](const char* name) { return params_.contains(name) ? graph.parameter(params_.get(name)) : Var{}; };
  b.e1 = maybe("e1");
  b.e1_query = ablation_.no_shared_embedding ? maybe("e1_query") : b.e1;
  b.e2 = maybe("e2");
  b.lstm_fwd = {maybe("lstm_fwd.w_ih"), maybe("lstm_fwd.w_hh"), maybe("lstm_fwd.bias")};
  b.lstm_bwd = {maybe("lstm_bwd.w_ih"), maybe("lstm_bwd.w_hh"), maybe("lstm_bwd.bias")};
  b.w_a = maybe("w_a");
  b.w_b = maybe("w_b");
  b.w_fuse = maybe("w_fuse");
  b.w_node_proj = maybe("w_node_proj");
  return b;
}

Var PscsModel::encode_path_vectors(Graph& graph, const BoundParams& bound, const CodeBatch& batch, bool train,
                                   Rng& rng) const {
  if (batch.snippets() == 0 || batch.paths() == 0) throw InvalidArgument("encode_code: empty code batch");
  for (std::size_t s = 0; s < batch.snippets(); ++s)
    if (batch.path_offsets[s + 1] <= batch.path_offsets[s]) throw InvalidArgument("encode_code: snippet without paths");

  std::vector<Var> parts;
  Var e_start, e_end, e_node;
  if (!ablation_.nodes_only) {
    e_start = encode_terminal(bound.e1, batch.start_ids, batch.start_mask, batch.m);
    e_end = encode_terminal(bound.e1, batch.end_ids, batch.end_mask, batch.m);
  }
  if (!ablation_.tokens_only) {
    Var per_sequence;
    if (ablation_.no_bilstm) {
      // Mean of the embedded nodes, projected to the bi-LSTM output width.
      const Var sums = nn::embedding_bag(bound.e2, batch.seq_ids, batch.seq_mask, batch.l);
      const auto U = static_cast<std::int64_t>(batch.sequences());
      Tensor inv = Tensor::matrix(U, hp_.d);
      for (std::int64_t u = 0; u < U; ++u) {
        const auto begin = batch.seq_mask.begin() + u * batch.l;
        const auto n = std::count(begin, begin + batch.l, std::uint8_t{1});
        if (n == 0) throw InvalidArgument("encode_nodes: empty node sequence");
        std::fill_n(inv.data.begin() + u * hp_.d, hp_.d, 1.0f / static_cast<float>(n));
      }
      per_sequence = nn::linear(nn::mul(sums, graph.constant(std::move(inv))), bound.w_node_proj);
    } else {
      per_sequence = encode_nodes(bound.e2, batch.seq_ids, batch.seq_mask, batch.l, bound.lstm_fwd, bound.lstm_bwd,
                                  hp_.hidden);
    }
    e_node = nn::gather_rows(per_sequence, batch.path_seq);
  }
  if (ablation_.tokens_only) {
    parts = {e_start, e_end};
  } else if (ablation_.nodes_only) {
    parts = {e_node};
  } else {
    parts = {e_start, e_node, e_end};
  }
  const Var joined = parts.size() == 1 ? parts.front() : nn::concat_cols(parts);
  return nn::dropout(joined, hp_.dropout, train, rng);
}

Var PscsModel::encode_code(Graph& graph, const BoundParams& bound, const CodeBatch& batch, bool train,
                           Rng& rng) const {
  const Var paths = encode_path_vectors(graph, bound, batch, train, rng);
  Var pooled;
  if (ablation_.no_code_attention) {
    pooled = nn::segment_mean(paths, batch.path_offsets);
  } else {
    const Var alpha = attend_paths(paths, batch.path_offsets, bound.w_a);
    pooled = nn::segment_weighted_sum(paths, alpha, batch.path_offsets);
  }
  return nn::linear(pooled, bound.w_fuse);
}

Var PscsModel::encode_query(Graph&, const BoundParams& bound, const QueryBatch& batch) const {
  if (batch.queries() == 0) throw InvalidArgument("encode_query: empty query batch");
  const std::vector<std::uint8_t> ones(batch.ids.size(), 1);
  const Var emb = nn::embedding_lookup(bound.e1_query, batch.ids, ones);
  if (ablation_.no_query_attention) return nn::segment_mean(emb, batch.offsets);
  const Var context = nn::segment_mean(emb, batch.offsets);
  const Var probe = nn::matmul(context, bound.w_b);
  std::vector<std::int32_t> segment_of_row;
  for (std::size_t s = 0; s + 1 < batch.offsets.size(); ++s)
    segment_of_row.insert(segment_of_row.end(), static_cast<std::size_t>(batch.offsets[s + 1] - batch.offsets[s]),
                          static_cast<std::int32_t>(s));
  const Var beta = nn::segment_softmax(nn::rowwise_dot(emb, nn::gather_rows(probe, segment_of_row)), batch.offsets);
  return nn::segment_weighted_sum(emb, beta, batch.offsets);
}

std::vector<float> PscsModel::code_vectors(const CodeBatch& batch) {
  Graph graph(false);
  const BoundParams bound = bind(graph);
  Rng unused(0);
  return graph.value(encode_code(graph, bound, batch, false, unused)).data;
}

std::vector<float> PscsModel::query_vectors(const QueryBatch& batch) {
  Graph graph(false);
  const BoundParams bound = bind(graph);
  return graph.value(encode_query(graph, bound, batch)).data;
}

}  // namespace pscs
