#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pscs/corpus.hpp"
#include "pscs/numerics.hpp"
#include "pscs/paths.hpp"

namespace pscs {

struct HyperParams {
  std::int32_t d = 128;       // embedding size
  std::int32_t hidden = 128;  // LSTM hidden size per direction
  std::int32_t q = 20;        // query length
  std::int32_t m = 5;         // subtokens per terminal
  std::int32_t l = 12;        // nodes per path
  std::int32_t g = 100;       // paths sampled per snippet
  float dropout = 0.25f;
  float margin = 1.0f;
  float delta = 1e-8f;
  float lr = 1e-4f;
  std::int32_t batch = 64;

  void validate() const;
  bool operator==(const HyperParams&) const = default;
};

struct AblationConfig {
  bool tokens_only = false;
  bool nodes_only = false;
  bool no_code_attention = false;
  bool no_query_attention = false;
  bool no_shared_embedding = false;
  bool no_bilstm = false;

  // Throws InvalidArgument for tokens_only together with nodes_only.
  void validate() const;
  bool is_full() const { return bits() == 0; }
  std::uint32_t bits() const;
  static AblationConfig from_bits(std::uint32_t bits);
  // "full" or a comma-separated flag list.
  std::string to_string() const;
  // Accepts "full", "", or comma-separated flag names.
  static AblationConfig parse(std::string_view flags);
  bool operator==(const AblationConfig&) const = default;
};

// Width of one path vector under an ablation: 2d + 2H for the full model.
std::int64_t path_vector_width(const HyperParams& hp, const AblationConfig& ablation);

// Named trainable tensors in a fixed order. Tensor addresses are stable.
class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(const ModelParams& other);
  ModelParams& operator=(const ModelParams& other);
  ModelParams(ModelParams&&) noexcept = default;
  ModelParams& operator=(ModelParams&&) noexcept = default;

  nn::Tensor& add(std::string name, nn::Tensor tensor);
  bool contains(std::string_view name) const;
  nn::Tensor& get(std::string_view name);
  const nn::Tensor& get(std::string_view name) const;
  std::vector<std::string> names() const;
  std::vector<nn::Tensor*> tensors();
  std::size_t size() const { return entries_.size(); }

  void enable_grad();
  void zero_grad();

 private:
  struct Entry {
    std::string name;
    nn::Tensor tensor;
  };
  std::vector<std::unique_ptr<Entry>> entries_;
};

// The tensors an (hp, ablation) model carries, with their shapes.
std::vector<std::pair<std::string, std::vector<std::int64_t>>> expected_tensors(const HyperParams& hp,
                                                                               const AblationConfig& ablation,
                                                                               std::size_t word_vocab,
                                                                               std::size_t node_vocab);

// Embeddings uniform in [-0.1, 0.1]; other matrices uniform in
// [-1/sqrt(fan_in), 1/sqrt(fan_in)]; LSTM forget-gate bias 1, other biases 0.
ModelParams init_params(const HyperParams& hp, const AblationConfig& ablation, std::size_t word_vocab,
                        std::size_t node_vocab, std::uint64_t seed);

// Code side of a batch: real paths only, grouped per snippet by offsets.
// Node sequences are deduplicated; path_seq maps each path to its row.
struct CodeBatch {
  std::int32_t m = 0;
  std::int32_t l = 0;
  std::vector<std::int32_t> path_offsets{0};
  std::vector<std::int32_t> start_ids, end_ids;
  std::vector<std::uint8_t> start_mask, end_mask;
  std::vector<std::int32_t> path_seq;
  std::vector<std::int32_t> seq_ids;
  std::vector<std::uint8_t> seq_mask;

  std::size_t snippets() const { return path_offsets.size() - 1; }
  std::size_t paths() const { return path_seq.size(); }
  std::size_t sequences() const { return l == 0 ? 0 : seq_ids.size() / static_cast<std::size_t>(l); }

  static CodeBatch from_bags(std::span<const PathBag> bags);
};

// Query side of a batch: real tokens only, grouped per query by offsets.
struct QueryBatch {
  std::vector<std::int32_t> offsets{0};
  std::vector<std::int32_t> ids;

  std::size_t queries() const { return offsets.size() - 1; }
  void add(const QueryTokens& tokens);
  // Real ids only; throws on an empty list.
  void add_ids(std::span<const std::int32_t> real_ids);
  static QueryBatch from_tokens(std::span<const QueryTokens> tokens);
};

// Graph handles for every parameter of a model.
struct BoundParams {
  nn::Var e1, e1_query, e2;
  nn::LstmWeights lstm_fwd, lstm_bwd;
  nn::Var w_a, w_b, w_fuse, w_node_proj;
};

// Sum of the embedded real subtokens of each terminal -> [k, d].
nn::Var encode_terminal(nn::Var e1, std::span<const std::int32_t> subtoken_ids, std::span<const std::uint8_t> mask,
                        std::int64_t m);

// Embeds node sequences through E2 and returns final forward | final
// backward bi-LSTM states -> [U, 2H]. Throws on an empty sequence.
nn::Var encode_nodes(nn::Var e2, std::span<const std::int32_t> node_ids, std::span<const std::uint8_t> mask,
                     std::int64_t l, const nn::LstmWeights& fwd, const nn::LstmWeights& bwd, std::int64_t hidden);

// Attention weights over the path vectors of each snippet: logits are
// (W_a e_j) . c_a with c_a the mean path vector, softmax per snippet.
nn::Var attend_paths(nn::Var path_vectors, std::span<const std::int32_t> offsets, nn::Var w_a);

// Mean over the batch of max(0, margin - cos(q+, c) + cos(q-, c)).
nn::Var ranking_loss(nn::Var v_query_pos, nn::Var v_query_neg, nn::Var v_code, float margin, float delta);

class PscsModel {
 public:
  PscsModel(HyperParams hp, AblationConfig ablation, ModelParams params);
  static PscsModel create(const HyperParams& hp, const AblationConfig& ablation, std::size_t word_vocab,
                          std::size_t node_vocab, std::uint64_t seed);

  const HyperParams& hyper() const { return hp_; }
  HyperParams& hyper() { return hp_; }
  const AblationConfig& ablation() const { return ablation_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }
  std::size_t word_vocab_size() const;
  std::size_t node_vocab_size() const;

  // Inference-time attention ablation on a loaded model: either attention
  // may be switched to a uniform average. Switching one back on needs weights
  // the model does not have and throws. Models altered this way are for
  // evaluation only; saving one produces a checkpoint that will not load.
  void override_attention(bool no_code_attention, bool no_query_attention);

  BoundParams bind(nn::Graph& graph);

  // Path vectors e_path = dropout(e_start | e_node | e_end) -> [N, F].
  nn::Var encode_path_vectors(nn::Graph& graph, const BoundParams& bound, const CodeBatch& batch, bool train,
                              Rng& rng) const;
  // v_code = W_fuse (sum_j alpha_j e_path_j) -> [S, d].
  nn::Var encode_code(nn::Graph& graph, const BoundParams& bound, const CodeBatch& batch, bool train, Rng& rng) const;
  // v_query = sum_i beta_i emb(w_i) -> [B, d].
  nn::Var encode_query(nn::Graph& graph, const BoundParams& bound, const QueryBatch& batch) const;

  // Inference without gradient tracking; row-major [S, d] / [B, d].
  std::vector<float> code_vectors(const CodeBatch& batch);
  std::vector<float> query_vectors(const QueryBatch& batch);

 private:
  HyperParams hp_;
  AblationConfig ablation_;
  ModelParams params_;
};

// ---------------------------------------------------------------- checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(std::ostream& out, const PscsModel& model);
void save_checkpoint(const std::string& path, const PscsModel& model);
// Throws FormatError on bad magic, version mismatch, truncation, or tensors
// that do not match the stored hyperparameters.
PscsModel load_checkpoint(std::istream& in);
PscsModel load_checkpoint(const std::string& path);

}  // namespace pscs
