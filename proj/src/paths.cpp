#include "pscs/paths.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <tuple>

#include <json.hpp>

namespace pscs {

std::string node_token(const DirectedNode& node) {
  return node.label + std::string(node.direction == Direction::Up ? kUpArrow : kDownArrow);
}

DirectedNode parse_node_token(std::string_view token) {
  for (auto [arrow, dir] : {std::pair{kUpArrow, Direction::Up}, std::pair{kDownArrow, Direction::Down}}) {
    if (token.size() > arrow.size() && token.substr(token.size() - arrow.size()) == arrow)
      return {std::string(token.substr(0, token.size() - arrow.size())), dir};
  }
  throw FormatError("node token without direction mark: '" + std::string(token) + "'");
}

std::vector<std::string> AstPath::node_tokens() const {
  std::vector<std::string> out;
  out.reserve(directed_nodes.size());
  for (const auto& n : directed_nodes) out.push_back(node_token(n));
  return out;
}

std::string format_path(const AstPath& path, bool abbreviate) {
  std::string out = "(" + path.start_terminal + ", ";
  for (std::size_t i = 0; i < path.directed_nodes.size(); ++i) {
    const auto& n = path.directed_nodes[i];
    out += abbreviate ? abbreviate_label(n.label) : n.label;
    if (i + 1 < path.directed_nodes.size()) out += n.direction == Direction::Up ? kUpArrow : kDownArrow;
  }
  return out + ", " + path.end_terminal + ")";
}

std::vector<AstPath> extract_paths(const Ast& ast, int max_height, int max_width, std::size_t cap,
                                   std::uint64_t seed) {
  if (max_height < 1 || max_width < 1) throw InvalidArgument("extract_paths: limits must be >= 1");
  const std::size_t n = ast.nodes.size();
  std::vector<NodeId> parent(n, -1);
  std::vector<int> depth(n, 0);
  std::vector<int> leaf_pos(n, -1);
  for (std::size_t i = 0; i < ast.leaf_order.size(); ++i) leaf_pos[static_cast<std::size_t>(ast.leaf_order[i])] = static_cast<int>(i);

  // Pre-order walk for depths, then a reverse pass collecting each subtree's
  // leaves in left-to-right order.
  std::vector<NodeId> order;
  order.reserve(n);
  std::vector<NodeId> stack{ast.root};
  while (!stack.empty()) {
    const NodeId v = stack.back();
    stack.pop_back();
    order.push_back(v);
    const auto& kids = ast.node(v).children;
    for (auto it = kids.rbegin(); it != kids.rend(); ++it) {
      parent[static_cast<std::size_t>(*it)] = v;
      depth[static_cast<std::size_t>(*it)] = depth[static_cast<std::size_t>(v)] + 1;
      stack.push_back(*it);
    }
  }
  std::vector<std::vector<NodeId>> leaves(n);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto v = static_cast<std::size_t>(*it);
    if (ast.nodes[v].is_terminal) {
      leaves[v].push_back(*it);
      continue;
    }
    for (NodeId c : ast.nodes[v].children) {
      auto& sub = leaves[static_cast<std::size_t>(c)];
      leaves[v].insert(leaves[v].end(), sub.begin(), sub.end());
    }
  }

  struct Candidate {
    int start_pos;
    int end_pos;
    NodeId start;
    NodeId end;
    NodeId apex;
  };
  std::vector<Candidate> found;
  for (NodeId v : order) {
    const auto& kids = ast.node(v).children;
    const int dv = depth[static_cast<std::size_t>(v)];
    for (std::size_t i = 0; i < kids.size(); ++i) {
      for (std::size_t j = i + 1; j < kids.size() && static_cast<int>(j - i) <= max_width; ++j) {
        for (NodeId a : leaves[static_cast<std::size_t>(kids[i])]) {
          if (depth[static_cast<std::size_t>(a)] - dv > max_height) continue;
          for (NodeId b : leaves[static_cast<std::size_t>(kids[j])]) {
            if (depth[static_cast<std::size_t>(b)] - dv > max_height) continue;
            found.push_back({leaf_pos[static_cast<std::size_t>(a)], leaf_pos[static_cast<std::size_t>(b)], a, b, v});
          }
        }
      }
    }
  }
  std::sort(found.begin(), found.end(), [](const Candidate& x, const Candidate& y) {
    return std::tie(x.start_pos, x.end_pos) < std::tie(y.start_pos, y.end_pos);
  });
  if (found.size() > cap) {
    Rng rng(seed);
    std::vector<std::size_t> idx(found.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < cap; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    idx.resize(cap);
    std::sort(idx.begin(), idx.end());
    std::vector<Candidate> kept;
    kept.reserve(cap);
    for (auto i : idx) kept.push_back(found[i]);
    found = std::move(kept);
  }

  std::vector<AstPath> paths;
  paths.reserve(found.size());
  std::vector<NodeId> descent;
  for (const auto& c : found) {
    AstPath p;
    p.start_terminal = ast.node(c.start).label;
    p.end_terminal = ast.node(c.end).label;
    for (NodeId u = parent[static_cast<std::size_t>(c.start)]; u != c.apex; u = parent[static_cast<std::size_t>(u)])
      p.directed_nodes.push_back({ast.node(u).label, Direction::Up});
    p.directed_nodes.push_back({ast.node(c.apex).label, Direction::Down});
    descent.clear();
    for (NodeId u = parent[static_cast<std::size_t>(c.end)]; u != c.apex; u = parent[static_cast<std::size_t>(u)])
      descent.push_back(u);
    for (auto it = descent.rbegin(); it != descent.rend(); ++it)
      p.directed_nodes.push_back({ast.node(*it).label, Direction::Down});
    paths.push_back(std::move(p));
  }
  return paths;
}

PathContext PathContext::padding(std::size_t m, std::size_t l) {
  PathContext c;
  c.start_ids.assign(m, Vocabulary::kPad);
  c.start_mask.assign(m, 0);
  c.node_ids.assign(l, Vocabulary::kPad);
  c.node_mask.assign(l, 0);
  c.end_ids = c.start_ids;
  c.end_mask = c.start_mask;
  return c;
}

void encode_terminal_ids(std::string_view terminal, const Vocabulary& word_vocab, std::size_t m,
                         std::vector<std::int32_t>& ids, std::vector<std::uint8_t>& mask) {
  ids.assign(m, Vocabulary::kPad);
  mask.assign(m, 0);
  const auto subtokens = split_subtokens(terminal);
  const std::size_t k = std::min(m, subtokens.size());
  for (std::size_t i = 0; i < k; ++i) {
    ids[i] = word_vocab.lookup(subtokens[i]);
    mask[i] = 1;
  }
}

PathContext encode_path(const AstPath& path, const Vocabulary& word_vocab, const Vocabulary& node_vocab,
                        std::size_t m, std::size_t l) {
  if (word_vocab.kind() != VocabKind::Word || node_vocab.kind() != VocabKind::Node)
    throw InvalidArgument("encode_path: vocabulary kinds do not match");
  PathContext c;
  encode_terminal_ids(path.start_terminal, word_vocab, m, c.start_ids, c.start_mask);
  encode_terminal_ids(path.end_terminal, word_vocab, m, c.end_ids, c.end_mask);
  c.node_ids.assign(l, Vocabulary::kPad);
  c.node_mask.assign(l, 0);
  const std::size_t k = std::min(l, path.directed_nodes.size());
  for (std::size_t i = 0; i < k; ++i) {
    c.node_ids[i] = node_vocab.lookup(node_token(path.directed_nodes[i]));
    c.node_mask[i] = 1;
  }
  return c;
}

std::size_t PathBag::real_count() const {
  return static_cast<std::size_t>(std::count(path_mask.begin(), path_mask.end(), std::uint8_t{1}));
}

std::vector<std::size_t> sample_path_indices(std::size_t count, std::size_t g, Rng& rng) {
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  if (count <= g) return idx;
  for (std::size_t i = 0; i < g; ++i) std::swap(idx[i], idx[i + rng.below(count - i)]);
  idx.resize(g);
  std::sort(idx.begin(), idx.end());
  return idx;
}

PathBag sample_paths(std::span<const PathContext> paths, std::size_t g, Rng& rng, std::string code_id) {
  if (paths.empty()) throw InvalidArgument("sample_paths: snippet '" + code_id + "' has no paths");
  if (g == 0) throw InvalidArgument("sample_paths: g must be positive");
  PathBag bag;
  bag.code_id = std::move(code_id);
  for (auto i : sample_path_indices(paths.size(), g, rng)) {
    bag.contexts.push_back(paths[i]);
    bag.path_mask.push_back(1);
  }
  const auto& first = paths.front();
  const auto pad = PathContext::padding(first.start_ids.size(), first.node_ids.size());
  while (bag.contexts.size() < g) {
    bag.contexts.push_back(pad);
    bag.path_mask.push_back(0);
  }
  return bag;
}

std::string path_record_to_json(const PathRecord& record) {
  nlohmann::json paths = nlohmann::json::array();
  for (const auto& p : record.paths) paths.push_back({p.start_terminal, p.node_tokens(), p.end_terminal});
  return nlohmann::json{{"id", record.id}, {"query", record.query}, {"paths", std::move(paths)}}.dump();
}

PathRecord path_record_from_json(std::string_view line) {
  PathRecord r;
  try {
    const auto j = nlohmann::json::parse(line);
    r.id = j.at("id").get<std::string>();
    r.query = j.at("query").get<std::string>();
    for (const auto& jp : j.at("paths")) {
      if (!jp.is_array() || jp.size() != 3) throw FormatError("path entry is not a [start, nodes, end] triple");
      AstPath p;
      p.start_terminal = jp[0].get<std::string>();
      for (const auto& t : jp[1]) p.directed_nodes.push_back(parse_node_token(t.get<std::string>()));
      p.end_terminal = jp[2].get<std::string>();
      if (p.directed_nodes.empty()) throw FormatError("path with no non-terminal nodes");
      r.paths.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("path record: ") + e.what());
  }
  return r;
}

void write_path_records(const std::string& file, std::span<const PathRecord> records) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write path file: " + file);
  for (const auto& r : records) out << path_record_to_json(r) << '\n';
}

std::vector<PathRecord> read_path_records(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read path file: " + file);
  std::vector<PathRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(path_record_from_json(line));
    } catch (const FormatError& e) {
      throw FormatError(file + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace pscs
