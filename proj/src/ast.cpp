#include "pscs/ast.hpp"

#include <algorithm>
#include <cctype>
#include <memory>
#include <set>

#include <json.hpp>

namespace pscs {

ParseError::ParseError(const std::string& message, int line, int column, std::string lexeme)
    : Error(message + " at " + std::to_string(line) + ":" + std::to_string(column) + " near '" +
            lexeme + "'"),
      line_(line),
      column_(column),
      lexeme_(std::move(lexeme)) {}

namespace {

const char* const kBaseLabels[] = {
    "MethodDeclaration",     "Modifier",
    "PrimitiveType",         "SimpleType",
    "ArrayType",             "ParameterizedType",
    "SingleVariableDeclaration", "SimpleName",
    "QualifiedName",         "Block",
    "ExpressionStatement",   "VariableDeclarationStatement",
    "VariableDeclarationExpression", "VariableDeclarationFragment",
    "IfStatement",           "ForStatement",
    "EnhancedForStatement",  "WhileStatement",
    "DoStatement",           "ReturnStatement",
    "ThrowStatement",        "TryStatement",
    "CatchClause",           "MethodInvocation",
    "FieldAccess",           "ArrayAccess",
    "ClassInstanceCreation", "ArrayCreation",
    "ArrayInitializer",      "ConditionalExpression",
    "InstanceofExpression",  "CastExpression",
    "ParenthesizedExpression", "ThisExpression",
    "NumberLiteral",         "StringLiteral",
    "CharacterLiteral",      "BooleanLiteral",
    "NullLiteral",
};

struct OpName {
  const char* symbol;
  const char* name;
};

const OpName kInfixOps[] = {
    {"||", "or"},     {"&&", "and"},       {"|", "bit_or"},       {"^", "xor"},
    {"&", "bit_and"}, {"==", "equals"},    {"!=", "not_equals"},  {"<", "less"},
    {">", "greater"}, {"<=", "less_equals"}, {">=", "greater_equals"}, {"<<", "lshift"},
    {">>", "rshift"}, {">>>", "urshift"},  {"+", "plus"},         {"-", "minus"},
    {"*", "times"},   {"/", "divide"},     {"%", "remainder"},
};
const OpName kAssignOps[] = {
    {"=", "assign"},        {"+=", "plus"},     {"-=", "minus"},   {"*=", "times"},
    {"/=", "divide"},       {"%=", "remainder"}, {"&=", "bit_and"}, {"|=", "bit_or"},
    {"^=", "xor"},          {"<<=", "lshift"},  {">>=", "rshift"}, {">>>=", "urshift"},
};
const OpName kPrefixOps[] = {
    {"!", "not"}, {"-", "minus"}, {"+", "plus"}, {"~", "complement"}, {"++", "increment"}, {"--", "decrement"},
};
const OpName kPostfixOps[] = {{"++", "increment"}, {"--", "decrement"}};

template <std::size_t N>
const char* op_name(const OpName (&table)[N], std::string_view symbol) {
  for (const auto& op : table)
    if (symbol == op.symbol) return op.name;
  return nullptr;
}

// ---------------------------------------------------------------- lexer

enum class Tok { Ident, Number, String, Char, Op, End };

struct Token {
  Tok kind = Tok::End;
  std::string text;
  int line = 1;
  int col = 1;
  bool glued = false;  // no whitespace between this token and the previous one
};

const char* const kOps[] = {">>>=", "<<=", ">>=", "...", "==", "!=", "<=", ">=", "&&", "||", "++", "--",
                            "+=",   "-=",  "*=",  "/=",  "%=", "&=", "|=", "^=", "<<", "->", "::"};

std::vector<Token> lex(std::string_view src) {
  std::vector<Token> out;
  int line = 1, col = 1;
  std::size_t i = 0;
  bool glued = false;
  auto advance = [&](std::size_t n) {
    for (std::size_t k = 0; k < n && i < src.size(); ++k, ++i) {
      if (src[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
  };
  while (i < src.size()) {
    const char c = src[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      advance(1);
      glued = false;
      continue;
    }
    if (src.substr(i, 2) == "//") {
      while (i < src.size() && src[i] != '\n') advance(1);
      glued = false;
      continue;
    }
    if (src.substr(i, 2) == "/*") {
      const int l0 = line, c0 = col;
      const auto end = src.find("*/", i + 2);
      if (end == std::string_view::npos) throw ParseError("unterminated comment", l0, c0, "/*");
      advance(end + 2 - i);
      glued = false;
      continue;
    }
    Token t;
    t.line = line;
    t.col = col;
    t.glued = glued;
    glued = true;
    const auto uc = static_cast<unsigned char>(c);
    if (std::isalpha(uc) || c == '_' || c == '$' || uc >= 0x80) {
      std::size_t j = i;
      while (j < src.size()) {
        const auto d = static_cast<unsigned char>(src[j]);
        if (!(std::isalnum(d) || d == '_' || d == '$' || d >= 0x80)) break;
        ++j;
      }
      t.kind = Tok::Ident;
      t.text = std::string(src.substr(i, j - i));
      advance(j - i);
    } else if (std::isdigit(uc) || (c == '.' && i + 1 < src.size() && std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
      std::size_t j = i;
      while (j < src.size()) {
        const char d = src[j];
        if (std::isalnum(static_cast<unsigned char>(d)) || d == '.' || d == '_') {
          ++j;
        } else if ((d == '+' || d == '-') && j > i && (src[j - 1] == 'e' || src[j - 1] == 'E') &&
                   src.substr(i, 2) != "0x" && src.substr(i, 2) != "0X") {
          ++j;
        } else {
          break;
        }
      }
      t.kind = Tok::Number;
      t.text = std::string(src.substr(i, j - i));
      advance(j - i);
    } else if (c == '"' || c == '\'') {
      std::size_t j = i + 1;
      while (j < src.size() && src[j] != c) {
        if (src[j] == '\\') ++j;
        if (j < src.size() && src[j] == '\n') break;
        ++j;
      }
      if (j >= src.size() || src[j] != c)
        throw ParseError(c == '"' ? "unterminated string literal" : "unterminated character literal", line, col,
                         std::string(1, c));
      t.kind = c == '"' ? Tok::String : Tok::Char;
      t.text = std::string(src.substr(i, j + 1 - i));
      advance(j + 1 - i);
    } else if (c == '@') {
      // Annotations are skipped: '@' Name ('.' Name)* and an optional
      // parenthesised argument list.
      advance(1);
      while (i < src.size() && (std::isalnum(static_cast<unsigned char>(src[i])) || src[i] == '_' || src[i] == '.'))
        advance(1);
      while (i < src.size() && (src[i] == ' ' || src[i] == '\t')) advance(1);
      if (i < src.size() && src[i] == '(') {
        int depth = 0;
        do {
          if (src[i] == '(') ++depth;
          if (src[i] == ')') --depth;
          advance(1);
        } while (i < src.size() && depth > 0);
      }
      glued = false;
      continue;
    } else {
      std::string op;
      for (const char* candidate : kOps) {
        if (src.substr(i, std::char_traits<char>::length(candidate)) == candidate) {
          op = candidate;
          break;
        }
      }
      if (op.empty()) {
        static const std::string_view single = "{}()[];,.=<>!~?:+-*/&|^%";
        if (single.find(c) == std::string_view::npos)
          throw ParseError("unexpected character", line, col, std::string(1, c));
        op = std::string(1, c);
      }
      t.kind = Tok::Op;
      t.text = op;
      advance(op.size());
    }
    out.push_back(std::move(t));
  }
  Token end;
  end.line = line;
  end.col = col;
  out.push_back(end);
  return out;
}

// ---------------------------------------------------------------- parser

struct PNode {
  std::string label;
  bool terminal = false;
  std::vector<std::unique_ptr<PNode>> children;
};
using P = std::unique_ptr<PNode>;

P leaf(std::string text) {
  auto n = std::make_unique<PNode>();
  n->label = std::move(text);
  n->terminal = true;
  return n;
}

P node(std::string label) {
  auto n = std::make_unique<PNode>();
  n->label = std::move(label);
  return n;
}

P node(std::string label, P child) {
  auto n = node(std::move(label));
  if (child) n->children.push_back(std::move(child));
  return n;
}

P node(std::string label, P a, P b) {
  auto n = node(std::move(label), std::move(a));
  if (b) n->children.push_back(std::move(b));
  return n;
}

bool is_primitive(std::string_view s) {
  static const std::set<std::string_view> prims = {"boolean", "byte", "char",  "short", "int",
                                                   "long",    "float", "double", "void"};
  return prims.contains(s);
}

bool is_modifier(std::string_view s) {
  static const std::set<std::string_view> mods = {"public",   "private", "protected",    "static",
                                                  "final",    "abstract", "synchronized", "native",
                                                  "strictfp", "transient", "volatile",   "default"};
  return mods.contains(s);
}

bool is_reserved(std::string_view s) {
  static const std::set<std::string_view> kw = {
      "if",    "else",  "for",    "while", "do",     "return", "break",  "continue", "throw",
      "try",   "catch", "finally", "new",  "this",   "super",  "null",   "true",     "false",
      "class", "switch", "case",  "instanceof", "throws", "interface", "enum", "import", "package"};
  return kw.contains(s) || is_primitive(s) || is_modifier(s);
}

class Parser {
 public:
  explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  P method() {
    auto md = node("MethodDeclaration");
    while (peek().kind == Tok::Ident && is_modifier(peek().text)) md->children.push_back(node("Modifier", leaf(next().text)));
    if (is_op("<")) fail("generic methods are not supported");
    md->children.push_back(type());
    md->children.push_back(simple_name());
    expect("(");
    if (!is_op(")")) {
      do {
        md->children.push_back(parameter());
      } while (accept(","));
    }
    expect(")");
    while (accept("[")) expect("]");
    if (accept_word("throws")) {
      do {
        md->children.push_back(type());
      } while (accept(","));
    }
    if (!accept(";")) md->children.push_back(block());
    if (peek().kind != Tok::End) fail("unexpected trailing input");
    return md;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    const Token& t = peek();
    throw ParseError(msg, t.line, t.col, t.kind == Tok::End ? "<end of input>" : t.text);
  }

  const Token& peek(std::size_t k = 0) const { return toks_[std::min(pos_ + k, toks_.size() - 1)]; }
  const Token& next() {
    const Token& t = toks_[pos_];
    if (pos_ + 1 < toks_.size()) ++pos_;
    return t;
  }
  bool is_op(std::string_view s, std::size_t k = 0) const { return peek(k).kind == Tok::Op && peek(k).text == s; }
  bool is_word(std::string_view s) const { return peek().kind == Tok::Ident && peek().text == s; }
  bool accept(std::string_view s) {
    if (!is_op(s)) return false;
    next();
    return true;
  }
  bool accept_word(std::string_view s) {
    if (!is_word(s)) return false;
    next();
    return true;
  }
  void expect(std::string_view s) {
    if (!accept(s)) fail("expected '" + std::string(s) + "'");
  }
  void expect_word(std::string_view s) {
    if (!accept_word(s)) fail("expected '" + std::string(s) + "'");
  }

  std::string identifier() {
    if (peek().kind != Tok::Ident || is_reserved(peek().text)) fail("expected identifier");
    return next().text;
  }
  P simple_name() { return node("SimpleName", leaf(identifier())); }

  // Type parsing that reports failure instead of throwing, for the
  // declaration-vs-expression decision.
  P try_type() {
    const std::size_t save = pos_;
    try {
      return type();
    } catch (const ParseError&) {
      pos_ = save;
      return nullptr;
    }
  }

  P type() {
    P t;
    if (peek().kind == Tok::Ident && is_primitive(peek().text)) {
      t = node("PrimitiveType", leaf(next().text));
    } else {
      P name = simple_name();
      while (is_op(".") && peek(1).kind == Tok::Ident && !is_reserved(peek(1).text)) {
        next();
        name = node("QualifiedName", std::move(name), simple_name());
      }
      t = node("SimpleType", std::move(name));
      if (is_op("<")) {
        next();
        auto pt = node("ParameterizedType", std::move(t));
        if (!is_op(">")) {
          do {
            pt->children.push_back(type());
          } while (accept(","));
        }
        expect(">");
        t = std::move(pt);
      }
    }
    while (is_op("[") && is_op("]", 1)) {
      next();
      next();
      t = node("ArrayType", std::move(t));
    }
    return t;
  }

  P parameter() {
    while (peek().kind == Tok::Ident && is_modifier(peek().text)) next();
    auto decl = node("SingleVariableDeclaration", type());
    accept("...");
    decl->children.push_back(simple_name());
    while (accept("[")) expect("]");
    return decl;
  }

  P block() {
    expect("{");
    auto b = node("Block");
    while (!is_op("}")) {
      if (peek().kind == Tok::End) fail("expected '}'");
      if (auto s = statement()) b->children.push_back(std::move(s));
    }
    expect("}");
    return b;
  }

  // True when the upcoming tokens read as `Type identifier`.
  bool declaration_ahead() {
    const std::size_t save = pos_;
    while (peek().kind == Tok::Ident && peek().text == "final") next();
    bool ok = false;
    if (peek().kind == Tok::Ident && (!is_reserved(peek().text) || is_primitive(peek().text))) {
      if (try_type()) ok = peek().kind == Tok::Ident && !is_reserved(peek().text);
    }
    pos_ = save;
    return ok;
  }

  P declaration(const char* label) {
    while (accept_word("final")) {
    }
    auto decl = node(label, type());
    do {
      auto frag = node("VariableDeclarationFragment", simple_name());
      while (accept("[")) expect("]");
      if (accept("=")) frag->children.push_back(is_op("{") ? array_initializer() : expression());
      decl->children.push_back(std::move(frag));
    } while (accept(","));
    return decl;
  }

  P array_initializer() {
    expect("{");
    auto init = node("ArrayInitializer");
    while (!is_op("}")) {
      init->children.push_back(is_op("{") ? array_initializer() : expression());
      if (!accept(",")) break;
    }
    expect("}");
    return init;
  }

  P statement() {
    if (is_op("{")) return block();
    if (accept(";")) return nullptr;
    if (accept_word("if")) {
      expect("(");
      auto s = node("IfStatement", expression());
      expect(")");
      s->children.push_back(statement());
      if (accept_word("else")) s->children.push_back(statement());
      return s;
    }
    if (accept_word("while")) {
      expect("(");
      auto s = node("WhileStatement", expression());
      expect(")");
      s->children.push_back(statement());
      return s;
    }
    if (accept_word("do")) {
      auto s = node("DoStatement", statement());
      expect_word("while");
      expect("(");
      s->children.push_back(expression());
      expect(")");
      expect(";");
      return s;
    }
    if (accept_word("for")) return for_statement();
    if (accept_word("return")) {
      auto s = node("ReturnStatement");
      if (!is_op(";")) s->children.push_back(expression());
      expect(";");
      return s;
    }
    if (accept_word("break") || accept_word("continue")) {
      if (peek().kind == Tok::Ident) next();  // label
      expect(";");
      return nullptr;
    }
    if (accept_word("throw")) {
      auto s = node("ThrowStatement", expression());
      expect(";");
      return s;
    }
    if (accept_word("try")) {
      auto s = node("TryStatement", block());
      bool handled = false;
      while (accept_word("catch")) {
        handled = true;
        expect("(");
        while (accept_word("final")) {
        }
        auto decl = node("SingleVariableDeclaration", type());
        while (accept("|")) decl->children.push_back(type());
        decl->children.push_back(simple_name());
        expect(")");
        s->children.push_back(node("CatchClause", std::move(decl), block()));
      }
      if (accept_word("finally")) {
        handled = true;
        s->children.push_back(block());
      }
      if (!handled) fail("expected 'catch' or 'finally'");
      return s;
    }
    if (peek().kind == Tok::Ident &&
        (peek().text == "switch" || peek().text == "class" || peek().text == "synchronized" ||
         peek().text == "assert"))
      fail("statement outside the supported subset");
    if (declaration_ahead()) {
      auto d = declaration("VariableDeclarationStatement");
      expect(";");
      return d;
    }
    auto s = node("ExpressionStatement", expression());
    expect(";");
    return s;
  }

  P for_statement() {
    expect("(");
    {
      const std::size_t save = pos_;
      while (accept_word("final")) {
      }
      if (auto t = try_type(); t && peek().kind == Tok::Ident && !is_reserved(peek().text) && is_op(":", 1)) {
        auto var = node("SingleVariableDeclaration", std::move(t), simple_name());
        expect(":");
        auto s = node("EnhancedForStatement", std::move(var), expression());
        expect(")");
        s->children.push_back(statement());
        return s;
      }
      pos_ = save;
    }
    auto s = node("ForStatement");
    if (!is_op(";")) {
      if (declaration_ahead()) {
        s->children.push_back(declaration("VariableDeclarationExpression"));
      } else {
        do {
          s->children.push_back(expression());
        } while (accept(","));
      }
    }
    expect(";");
    if (!is_op(";")) s->children.push_back(expression());
    expect(";");
    if (!is_op(")")) {
      do {
        s->children.push_back(expression());
      } while (accept(","));
    }
    expect(")");
    s->children.push_back(statement());
    return s;
  }

  // ------------------------------------------------------------ expressions

  // Multi-character operators that the lexer emits as glued single
  // characters (">>", ">>>").
  std::string peek_operator() const {
    if (peek().kind != Tok::Op) return {};
    if (peek().text == ">") {
      if (is_op(">", 1) && peek(1).glued) {
        if (is_op(">", 2) && peek(2).glued) return ">>>";
        if (is_op(">=", 2) && peek(2).glued) return ">>>=";
        return ">>";
      }
      if (is_op(">=", 1) && peek(1).glued) return ">>=";
    }
    return peek().text;
  }
  void consume_operator(const std::string& op) {
    if (op == ">>" || op == ">>=") {
      next();
      next();
    } else if (op == ">>>" || op == ">>>=") {
      next();
      next();
      next();
    } else {
      next();
    }
  }

  P expression() {
    P lhs = conditional();
    const std::string op = peek_operator();
    if (const char* name = op_name(kAssignOps, op)) {
      consume_operator(op);
      P rhs = is_op("{") ? array_initializer() : expression();
      return node(std::string("Assignment:") + name, std::move(lhs), std::move(rhs));
    }
    return lhs;
  }

  P conditional() {
    P cond = binary(0);
    if (accept("?")) {
      auto n = node("ConditionalExpression", std::move(cond), expression());
      expect(":");
      n->children.push_back(conditional());
      return n;
    }
    return cond;
  }

  static int precedence(std::string_view op) {
    static const std::vector<std::vector<std::string_view>> levels = {
        {"||"}, {"&&"}, {"|"}, {"^"}, {"&"}, {"==", "!="}, {"<", ">", "<=", ">="},
        {"<<", ">>", ">>>"}, {"+", "-"}, {"*", "/", "%"}};
    for (std::size_t i = 0; i < levels.size(); ++i)
      for (auto s : levels[i])
        if (s == op) return static_cast<int>(i);
    return -1;
  }

  P binary(int level) {
    if (level > 9) return unary();
    P lhs = binary(level + 1);
    for (;;) {
      if (level == 6 && is_word("instanceof")) {
        next();
        lhs = node("InstanceofExpression", std::move(lhs), type());
        continue;
      }
      const std::string op = peek_operator();
      if (op.empty() || precedence(op) != level) return lhs;
      consume_operator(op);
      lhs = node(std::string("InfixExpression:") + op_name(kInfixOps, op), std::move(lhs), binary(level + 1));
    }
  }

  bool cast_ahead() {
    if (!is_op("(")) return false;
    const std::size_t save = pos_;
    next();
    bool ok = false;
    if (peek().kind == Tok::Ident && (is_primitive(peek().text) || !is_reserved(peek().text))) {
      const bool primitive = is_primitive(peek().text);
      if (try_type() && accept(")")) {
        const Token& t = peek();
        ok = primitive ? t.kind != Tok::End && !(t.kind == Tok::Op && (t.text == ")" || t.text == ";" || t.text == ","))
                       : (t.kind == Tok::Ident && t.text != "instanceof") || t.kind == Tok::Number ||
                             t.kind == Tok::String || t.kind == Tok::Char ||
                             (t.kind == Tok::Op && (t.text == "(" || t.text == "!" || t.text == "~"));
      }
    }
    pos_ = save;
    return ok;
  }

  P unary() {
    if (peek().kind == Tok::Op) {
      if (const char* name = op_name(kPrefixOps, peek().text)) {
        next();
        return node(std::string("PrefixExpression:") + name, unary());
      }
    }
    if (cast_ahead()) {
      expect("(");
      auto t = type();
      expect(")");
      return node("CastExpression", std::move(t), unary());
    }
    return postfix(primary());
  }

  void arguments(PNode& call) {
    expect("(");
    if (!is_op(")")) {
      do {
        call.children.push_back(expression());
      } while (accept(","));
    }
    expect(")");
  }

  static bool is_name(const PNode& n) { return n.label == "SimpleName" || n.label == "QualifiedName"; }

  P postfix(P expr) {
    for (;;) {
      if (accept(".")) {
        if (is_op("<")) fail("explicit type arguments are not supported");
        P name = simple_name();
        if (is_op("(")) {
          auto call = node("MethodInvocation", std::move(expr), std::move(name));
          arguments(*call);
          expr = std::move(call);
        } else if (is_name(*expr)) {
          expr = node("QualifiedName", std::move(expr), std::move(name));
        } else {
          expr = node("FieldAccess", std::move(expr), std::move(name));
        }
      } else if (is_op("[")) {
        next();
        expr = node("ArrayAccess", std::move(expr), expression());
        expect("]");
      } else if (is_op("++") || is_op("--")) {
        const char* name = op_name(kPostfixOps, next().text);
        expr = node(std::string("PostfixExpression:") + name, std::move(expr));
      } else {
        return expr;
      }
    }
  }

  P primary() {
    const Token& t = peek();
    switch (t.kind) {
      case Tok::Number:
        return node("NumberLiteral", leaf(next().text));
      case Tok::String:
        next();
        return node("StringLiteral", leaf("STR"));
      case Tok::Char:
        return node("CharacterLiteral", leaf(next().text));
      case Tok::End:
        fail("unexpected end of input");
      case Tok::Op:
        if (accept("(")) {
          auto e = node("ParenthesizedExpression", expression());
          expect(")");
          return e;
        }
        fail("unexpected token");
      case Tok::Ident:
        break;
    }
    if (t.text == "true" || t.text == "false") return node("BooleanLiteral", leaf(next().text));
    if (t.text == "null") return node("NullLiteral", leaf(next().text));
    if (t.text == "this" || t.text == "super") return node("ThisExpression", leaf(next().text));
    if (t.text == "new") {
      next();
      P ty;
      if (peek().kind == Tok::Ident && is_primitive(peek().text)) {
        ty = node("PrimitiveType", leaf(next().text));
      } else {
        P name = simple_name();
        while (is_op(".") && peek(1).kind == Tok::Ident) {
          next();
          name = node("QualifiedName", std::move(name), simple_name());
        }
        ty = node("SimpleType", std::move(name));
        if (accept("<")) {
          auto pt = node("ParameterizedType", std::move(ty));
          if (!is_op(">")) {
            do {
              pt->children.push_back(type());
            } while (accept(","));
          }
          expect(">");
          ty = std::move(pt);
        }
      }
      if (is_op("[")) {
        auto arr = node("ArrayCreation", std::move(ty));
        while (accept("[")) {
          if (!is_op("]")) arr->children.push_back(expression());
          expect("]");
        }
        if (is_op("{")) arr->children.push_back(array_initializer());
        return arr;
      }
      auto create = node("ClassInstanceCreation", std::move(ty));
      arguments(*create);
      if (is_op("{")) fail("anonymous classes are not supported");
      return create;
    }
    P name = simple_name();
    if (is_op("(")) {
      auto call = node("MethodInvocation", std::move(name));
      arguments(*call);
      return call;
    }
    return name;
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

// Pre-order flattening. Non-terminals left without children are dropped so
// that is_terminal <=> children.empty() holds.
NodeId flatten(const PNode& p, std::vector<AstNode>& out) {
  if (p.terminal) {
    const auto id = static_cast<NodeId>(out.size());
    out.push_back(AstNode{id, p.label, {}, true});
    return id;
  }
  const auto id = static_cast<NodeId>(out.size());
  out.push_back(AstNode{id, p.label, {}, false});
  std::vector<NodeId> kids;
  for (const auto& c : p.children) {
    if (!c) continue;
    const NodeId k = flatten(*c, out);
    if (k >= 0) kids.push_back(k);
  }
  if (kids.empty()) {
    out.resize(static_cast<std::size_t>(id));
    return -1;
  }
  out[static_cast<std::size_t>(id)].children = std::move(kids);
  return id;
}

}  // namespace

const std::vector<std::string>& ast_labels() {
  static const std::vector<std::string> labels = [] {
    std::vector<std::string> v(std::begin(kBaseLabels), std::end(kBaseLabels));
    for (const auto& op : kInfixOps) v.push_back(std::string("InfixExpression:") + op.name);
    for (const auto& op : kAssignOps) v.push_back(std::string("Assignment:") + op.name);
    for (const auto& op : kPrefixOps) v.push_back(std::string("PrefixExpression:") + op.name);
    for (const auto& op : kPostfixOps) v.push_back(std::string("PostfixExpression:") + op.name);
    return v;
  }();
  return labels;
}

std::string abbreviate_label(std::string_view label) {
  const auto colon = label.find(':');
  const std::string_view base = label.substr(0, colon);
  const auto& known = ast_labels();
  if (std::find(known.begin(), known.end(), label) == known.end()) return std::string(label);
  std::string abbr;
  for (char c : base)
    if (std::isupper(static_cast<unsigned char>(c))) abbr.push_back(c);
  if (abbr.empty()) return std::string(label);
  if (colon != std::string_view::npos) abbr += std::string(label.substr(colon));
  return abbr;
}

void Ast::index_leaves() {
  leaf_order.clear();
  if (nodes.empty()) return;
  std::vector<NodeId> stack{root};
  while (!stack.empty()) {
    const NodeId n = stack.back();
    stack.pop_back();
    const auto& nd = nodes[static_cast<std::size_t>(n)];
    if (nd.children.empty()) {
      leaf_order.push_back(n);
      continue;
    }
    for (auto it = nd.children.rbegin(); it != nd.children.rend(); ++it) stack.push_back(*it);
  }
}

bool Ast::operator==(const Ast& other) const {
  return root == other.root && leaf_order == other.leaf_order && nodes == other.nodes;
}

Ast parse_function(std::string_view source) {
  Parser parser(lex(source));
  P tree = parser.method();
  Ast ast;
  if (flatten(*tree, ast.nodes) < 0) throw ParseError("method has no terminals", 1, 1, "");
  ast.root = 0;
  ast.index_leaves();
  return ast;
}

std::string serialize_ast(const Ast& ast, std::string_view id) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : ast.nodes) nodes.push_back({{"label", n.label}, {"children", n.children}});
  nlohmann::json j{{"id", id}, {"nodes", std::move(nodes)}, {"root", ast.root}};
  return j.dump();
}

Ast load_serialized_ast(std::string_view record, std::string* id_out) {
  std::string id = "<unknown>";
  auto reject = [&](const std::string& why) -> FormatError {
    return FormatError("serialized AST '" + id + "': " + why);
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(record);
  } catch (const nlohmann::json::exception& e) {
    throw reject(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw reject("record is not an object");
  if (j.contains("id") && j["id"].is_string()) id = j["id"].get<std::string>();
  else throw reject("missing string field 'id'");
  if (id_out) *id_out = id;
  if (!j.contains("nodes") || !j["nodes"].is_array()) throw reject("missing array field 'nodes'");
  if (!j.contains("root") || !j["root"].is_number_integer()) throw reject("missing integer field 'root'");

  Ast ast;
  const auto& nodes = j["nodes"];
  const auto n = static_cast<std::int64_t>(nodes.size());
  if (n == 0) throw reject("empty node list");
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& jn = nodes[static_cast<std::size_t>(i)];
    if (!jn.is_object() || !jn.contains("label") || !jn["label"].is_string())
      throw reject("node " + std::to_string(i) + " has no string label");
    AstNode node;
    node.id = static_cast<NodeId>(i);
    node.label = jn["label"].get<std::string>();
    if (jn.contains("children")) {
      if (!jn["children"].is_array()) throw reject("node " + std::to_string(i) + ": children is not an array");
      for (const auto& c : jn["children"]) {
        if (!c.is_number_integer()) throw reject("node " + std::to_string(i) + ": non-integer child");
        const auto k = c.get<std::int64_t>();
        if (k < 0 || k >= n) throw reject("node " + std::to_string(i) + ": child index out of range");
        node.children.push_back(static_cast<NodeId>(k));
      }
    }
    node.is_terminal = node.children.empty();
    if (jn.contains("terminal")) {
      if (!jn["terminal"].is_boolean()) throw reject("node " + std::to_string(i) + ": terminal is not a boolean");
      if (jn["terminal"].get<bool>() != node.is_terminal)
        throw reject("node " + std::to_string(i) +
                     (node.is_terminal ? " is a non-terminal without children" : " is a terminal with children"));
    }
    ast.nodes.push_back(std::move(node));
  }
  const auto root = j["root"].get<std::int64_t>();
  if (root < 0 || root >= n) throw reject("root index out of range");
  ast.root = static_cast<NodeId>(root);

  std::vector<int> parents(static_cast<std::size_t>(n), 0);
  for (const auto& node : ast.nodes)
    for (NodeId c : node.children) ++parents[static_cast<std::size_t>(c)];
  if (parents[static_cast<std::size_t>(root)] != 0) throw reject("cyclic reference: root has a parent");
  for (std::int64_t i = 0; i < n; ++i) {
    if (parents[static_cast<std::size_t>(i)] > 1) throw reject("node " + std::to_string(i) + " has multiple parents");
  }
  // Single parents and a parentless root: any cycle lies outside the root's
  // component, so the leaf walk terminates and validate_ast reports it.
  ast.index_leaves();
  if (auto v = validate_ast(ast)) throw reject(*v);
  return ast;
}

std::optional<std::string> validate_ast(const Ast& ast) {
  const auto n = ast.nodes.size();
  if (n == 0) return "tree has no nodes";
  if (ast.root < 0 || static_cast<std::size_t>(ast.root) >= n) return "root id out of range";
  std::vector<int> parents(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& node = ast.nodes[i];
    if (node.id != static_cast<NodeId>(i)) return "node " + std::to_string(i) + " has id " + std::to_string(node.id);
    if (node.is_terminal != node.children.empty())
      return "node " + std::to_string(i) + (node.is_terminal ? " is a terminal with children" : " is a non-terminal without children");
    if (node.is_terminal && node.label.empty()) return "terminal " + std::to_string(i) + " has an empty label";
    for (NodeId c : node.children) {
      if (c < 0 || static_cast<std::size_t>(c) >= n) return "node " + std::to_string(i) + " has a child out of range";
      ++parents[static_cast<std::size_t>(c)];
    }
  }
  if (parents[static_cast<std::size_t>(ast.root)] != 0) return "root has a parent (cycle)";
  for (std::size_t i = 0; i < n; ++i) {
    if (static_cast<NodeId>(i) != ast.root && parents[i] != 1)
      return "node " + std::to_string(i) + " has " + std::to_string(parents[i]) + " parents";
  }
  // With single parents everywhere, reachability from root rules out cycles.
  std::vector<char> seen(n, 0);
  std::vector<NodeId> stack{ast.root};
  std::vector<NodeId> leaves;
  std::size_t visited = 0;
  while (!stack.empty()) {
    const NodeId v = stack.back();
    stack.pop_back();
    if (seen[static_cast<std::size_t>(v)]) return "cycle through node " + std::to_string(v);
    seen[static_cast<std::size_t>(v)] = 1;
    ++visited;
    const auto& node = ast.nodes[static_cast<std::size_t>(v)];
    if (node.children.empty()) leaves.push_back(v);
    for (auto it = node.children.rbegin(); it != node.children.rend(); ++it) stack.push_back(*it);
  }
  if (visited != n) return "node unreachable from root (cycle or forest)";
  if (leaves.empty()) return "tree has no terminals";
  if (leaves != ast.leaf_order) return "leaf_order does not match the in-order leaf sequence";
  return std::nullopt;
}

}  // namespace pscs
