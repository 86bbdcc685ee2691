#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pscs/ast.hpp"
#include "pscs/common.hpp"
#include "pscs/corpus.hpp"

namespace pscs {

enum class Direction : std::uint8_t { Up, Down };

struct DirectedNode {
  std::string label;
  Direction direction = Direction::Up;
  bool operator==(const DirectedNode&) const = default;
};

// Leaf-to-leaf walk. Each non-terminal carries the direction of the step that
// leaves it towards the end terminal: a run of Up below the apex, then the
// apex and everything after it Down.
struct AstPath {
  std::string start_terminal;
  std::vector<DirectedNode> directed_nodes;
  std::string end_terminal;

  // Node-vocabulary tokens, "Label↑" / "Label↓".
  std::vector<std::string> node_tokens() const;
  bool operator==(const AstPath&) const = default;
};

inline constexpr std::string_view kUpArrow = "↑";
inline constexpr std::string_view kDownArrow = "↓";

std::string node_token(const DirectedNode& node);
DirectedNode parse_node_token(std::string_view token);

// "(void, PT↑MD↓B↓ES↓MI↓SN, println)"; labels abbreviated when requested.
std::string format_path(const AstPath& path, bool abbreviate = true);

struct PathLimits {
  int max_height = 8;
  int max_width = 3;
  std::size_t cap = 500;
};

// Height: edges from the farther terminal up to the apex. Width: difference
// between the positions, among the apex's children, of the two children the
// path passes through. Paths are ordered by (start, end) position in
// leaf_order; more than `cap` survivors are subsampled with `seed`.
std::vector<AstPath> extract_paths(const Ast& ast, int max_height, int max_width, std::size_t cap,
                                   std::uint64_t seed);
inline std::vector<AstPath> extract_paths(const Ast& ast, const PathLimits& limits, std::uint64_t seed) {
  return extract_paths(ast, limits.max_height, limits.max_width, limits.cap, seed);
}

struct PathContext {
  std::vector<std::int32_t> start_ids;
  std::vector<std::uint8_t> start_mask;
  std::vector<std::int32_t> node_ids;
  std::vector<std::uint8_t> node_mask;
  std::vector<std::int32_t> end_ids;
  std::vector<std::uint8_t> end_mask;

  // All-PAD context used for masked-off bag slots.
  static PathContext padding(std::size_t m, std::size_t l);
  bool operator==(const PathContext&) const = default;
};

// Fixed-length subtoken ids for one terminal.
void encode_terminal_ids(std::string_view terminal, const Vocabulary& word_vocab, std::size_t m,
                         std::vector<std::int32_t>& ids, std::vector<std::uint8_t>& mask);

PathContext encode_path(const AstPath& path, const Vocabulary& word_vocab, const Vocabulary& node_vocab,
                        std::size_t m, std::size_t l);

struct PathBag {
  std::string code_id;
  std::vector<PathContext> contexts;  // exactly g slots
  std::vector<std::uint8_t> path_mask;

  std::size_t real_count() const;
};

// Indices of the paths placed in a bag of g slots: a uniform sample without
// replacement when count >= g, otherwise every index. Sorted ascending.
std::vector<std::size_t> sample_path_indices(std::size_t count, std::size_t g, Rng& rng);

// Throws InvalidArgument on an empty path list.
PathBag sample_paths(std::span<const PathContext> paths, std::size_t g, Rng& rng, std::string code_id = {});

// Deterministic seed for inference-time sampling of one snippet.
inline std::uint64_t inference_seed(std::string_view code_id) { return stable_hash(code_id); }

// One record of a pre-extracted path file.
struct PathRecord {
  std::string id;
  std::string query;
  std::vector<AstPath> paths;
};

std::string path_record_to_json(const PathRecord& record);
PathRecord path_record_from_json(std::string_view line);
void write_path_records(const std::string& file, std::span<const PathRecord> records);
std::vector<PathRecord> read_path_records(const std::string& file);

}  // namespace pscs
