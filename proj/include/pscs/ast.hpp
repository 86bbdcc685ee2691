#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pscs/common.hpp"

namespace pscs {

using NodeId = std::int32_t;

struct AstNode {
  NodeId id = 0;
  // Grammar label for non-terminals, identifier/literal text for terminals.
  std::string label;
  std::vector<NodeId> children;
  bool is_terminal = false;
};

struct Ast {
  std::vector<AstNode> nodes;
  NodeId root = 0;
  std::vector<NodeId> leaf_order;

  const AstNode& node(NodeId id) const { return nodes[static_cast<std::size_t>(id)]; }
  // Recomputes leaf_order by a depth-first walk from root.
  void index_leaves();
  bool operator==(const Ast& other) const;
};

inline bool operator==(const AstNode& a, const AstNode& b) {
  return a.id == b.id && a.label == b.label && a.children == b.children &&
         a.is_terminal == b.is_terminal;
}

class ParseError : public Error {
 public:
  ParseError(const std::string& message, int line, int column, std::string lexeme);
  int line() const { return line_; }
  int column() const { return column_; }
  const std::string& lexeme() const { return lexeme_; }

 private:
  int line_;
  int column_;
  std::string lexeme_;
};

// Label inventory of the built-in parser. Bumped whenever a label is added,
// renamed or removed, since node vocabularies depend on it.
inline constexpr int kAstLabelSetVersion = 1;
const std::vector<std::string>& ast_labels();

// Two-letter style abbreviation used when printing paths (MethodDeclaration ->
// MD, PrimitiveType -> PT, ...). Unknown labels are returned unchanged.
std::string abbreviate_label(std::string_view label);

// Parses one method of the supported Java subset. Throws ParseError.
Ast parse_function(std::string_view source);

// One JSON line {"id", "nodes": [{"label","children"}...], "root"}.
std::string serialize_ast(const Ast& ast, std::string_view id);
// Throws FormatError naming the record id on any malformed or invalid record.
Ast load_serialized_ast(std::string_view record, std::string* id_out = nullptr);

// First invariant violation, or nullopt when the tree is well formed.
std::optional<std::string> validate_ast(const Ast& ast);

}  // namespace pscs
