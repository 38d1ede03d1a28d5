#pragma once

// WHILE-language: AST, parser, canonical formatter and the crisp interpreter.
//
//   prog = WHILE var != 0 DO prog END
//        | prog prog
//        | var := var          (left and right var unequal)
//        | var := var + 1      (left and right var equal)
//        | var := var - 1      (left and right var equal)
//
// Variables are x0, x1, ... (no leading zeros). Statements may be separated
// by newlines or ';' but separators are optional since every statement is
// self-delimiting. `//` starts a line comment.
//
// A sequence `prog prog` is kept as a flat statement list; nested sequences
// are equivalent under associativity and the flat form makes
// parse(format(p)) == p hold structurally.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace smoothlang::lang {

struct Var {
  std::uint32_t index = 0;
  friend bool operator==(Var, Var) = default;
  friend auto operator<=>(Var, Var) = default;
};

inline std::string to_string(Var v) { return "x" + std::to_string(v.index); }

struct Assign {
  Var dst, src;
  friend bool operator==(const Assign&, const Assign&) = default;
};
struct Inc {
  Var var;
  friend bool operator==(const Inc&, const Inc&) = default;
};
struct Dec {
  Var var;
  friend bool operator==(const Dec&, const Dec&) = default;
};

struct Statement;

struct While {
  Var cond;
  std::vector<Statement> body;
  friend bool operator==(const While&, const While&);
};

struct Statement {
  std::variant<Assign, Inc, Dec, While> node;
  friend bool operator==(const Statement&, const Statement&) = default;
};

inline bool operator==(const While& a, const While& b) { return a.cond == b.cond && a.body == b.body; }

struct Program {
  std::vector<Statement> body;
  friend bool operator==(const Program&, const Program&) = default;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, int line, int column)
      : std::runtime_error(std::to_string(line) + ":" + std::to_string(column) + ": " + msg),
        message_(msg), line_(line), column_(column) {}
  const std::string& message() const { return message_; }
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  std::string message_;
  int line_, column_;
};

namespace detail {

enum class Tok { Var, While, Do, End, Assign, Plus, Minus, NotEq, Number, Eof };

struct Token {
  Tok kind;
  std::string text;
  int line, column;
};

inline const char* describe(Tok t) {
  switch (t) {
    case Tok::Var: return "variable";
    case Tok::While: return "'WHILE'";
    case Tok::Do: return "'DO'";
    case Tok::End: return "'END'";
    case Tok::Assign: return "':='";
    case Tok::Plus: return "'+'";
    case Tok::Minus: return "'-'";
    case Tok::NotEq: return "'!='";
    case Tok::Number: return "number";
    case Tok::Eof: return "end of input";
  }
  return "token";
}

inline std::vector<Token> lex(std::string_view src) {
  std::vector<Token> out;
  int line = 1, col = 1;
  std::size_t i = 0;
  auto advance = [&](std::size_t n) {
    for (std::size_t k = 0; k < n; ++k, ++i) {
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
    if (c == ';' || std::isspace(static_cast<unsigned char>(c))) {
      advance(1);
      continue;
    }
    if (c == '/' && i + 1 < src.size() && src[i + 1] == '/') {
      while (i < src.size() && src[i] != '\n') advance(1);
      continue;
    }
    const int l = line, cc = col;
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < src.size() && (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_')) ++j;
      std::string word(src.substr(i, j - i));
      if (word == "WHILE") {
        out.push_back({Tok::While, word, l, cc});
      } else if (word == "DO") {
        out.push_back({Tok::Do, word, l, cc});
      } else if (word == "END") {
        out.push_back({Tok::End, word, l, cc});
      } else {
        const bool digits = word.size() >= 2 && word[0] == 'x' &&
                            word.find_first_not_of("0123456789", 1) == std::string::npos;
        if (!digits || (word.size() > 2 && word[1] == '0') || word.size() > 11)
          throw ParseError("malformed variable name '" + word + "' (expected xN)", l, cc);
        const auto n = std::stoull(word.substr(1));
        if (n > 0xFFFFFFFFull) throw ParseError("variable index out of range in '" + word + "'", l, cc);
        out.push_back({Tok::Var, word, l, cc});
      }
      advance(j - i);
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t j = i;
      while (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) ++j;
      out.push_back({Tok::Number, std::string(src.substr(i, j - i)), l, cc});
      advance(j - i);
      continue;
    }
    if (c == ':' && i + 1 < src.size() && src[i + 1] == '=') {
      out.push_back({Tok::Assign, ":=", l, cc});
      advance(2);
      continue;
    }
    if (c == '!' && i + 1 < src.size() && src[i + 1] == '=') {
      out.push_back({Tok::NotEq, "!=", l, cc});
      advance(2);
      continue;
    }
    if (c == '+') {
      out.push_back({Tok::Plus, "+", l, cc});
      advance(1);
      continue;
    }
    if (c == '-') {
      out.push_back({Tok::Minus, "-", l, cc});
      advance(1);
      continue;
    }
    throw ParseError(std::string("unknown token '") + c + "'", l, cc);
  }
  out.push_back({Tok::Eof, "", line, col});
  return out;
}

class Parser {
 public:
  explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  Program program() {
    Program p;
    p.body = statements();
    if (peek().kind == Tok::End) throw error("'END' without matching 'WHILE'", peek());
    if (peek().kind != Tok::Eof) throw error(std::string("unexpected ") + describe(peek().kind), peek());
    if (p.body.empty()) throw error("empty program", peek());
    return p;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }
  const Token& take() { return toks_[pos_++]; }

  static ParseError error(const std::string& msg, const Token& t) { return ParseError(msg, t.line, t.column); }

  const Token& expect(Tok kind, const char* context) {
    if (peek().kind != kind)
      throw error(std::string("expected ") + describe(kind) + " " + context + ", found " + describe(peek().kind),
                  peek());
    return take();
  }

  static Var var_of(const Token& t) { return Var{static_cast<std::uint32_t>(std::stoul(t.text.substr(1)))}; }

  std::vector<Statement> statements() {
    std::vector<Statement> out;
    while (peek().kind == Tok::While || peek().kind == Tok::Var) out.push_back(statement());
    return out;
  }

  Statement statement() {
    if (peek().kind == Tok::While) {
      const Token& kw = take();
      const Var cond = var_of(expect(Tok::Var, "after 'WHILE'"));
      expect(Tok::NotEq, "in loop condition");
      const Token& zero = expect(Tok::Number, "in loop condition");
      if (zero.text != "0") throw error("loop condition must compare against 0", zero);
      expect(Tok::Do, "after loop condition");
      auto body = statements();
      if (body.empty()) throw error("loop body is empty", peek());
      if (peek().kind != Tok::End) throw error("unbalanced 'WHILE': missing 'END'", kw);
      take();
      return Statement{While{cond, std::move(body)}};
    }
    const Token& lhs_tok = expect(Tok::Var, "at statement start");
    const Var lhs = var_of(lhs_tok);
    expect(Tok::Assign, "after assignment target");
    const Token& rhs_tok = expect(Tok::Var, "after ':='");
    const Var rhs = var_of(rhs_tok);
    if (peek().kind == Tok::Plus || peek().kind == Tok::Minus) {
      const bool inc = take().kind == Tok::Plus;
      const Token& one = expect(Tok::Number, inc ? "after '+'" : "after '-'");
      if (one.text != "1") throw error("only +1 and -1 are supported", one);
      if (lhs != rhs) throw error("increment/decrement requires identical left and right variable", rhs_tok);
      return inc ? Statement{Inc{lhs}} : Statement{Dec{lhs}};
    }
    if (lhs == rhs) throw error("assignment requires distinct left and right variables", rhs_tok);
    return Statement{Assign{lhs, rhs}};
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

inline void format_into(std::ostringstream& os, const std::vector<Statement>& body, int depth) {
  const std::string indent(static_cast<std::size_t>(depth) * 4, ' ');
  for (const auto& s : body) {
    std::visit(
        [&](const auto& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, Assign>) {
            os << indent << to_string(n.dst) << " := " << to_string(n.src) << '\n';
          } else if constexpr (std::is_same_v<T, Inc>) {
            os << indent << to_string(n.var) << " := " << to_string(n.var) << " + 1\n";
          } else if constexpr (std::is_same_v<T, Dec>) {
            os << indent << to_string(n.var) << " := " << to_string(n.var) << " - 1\n";
          } else {
            os << indent << "WHILE " << to_string(n.cond) << " != 0 DO\n";
            format_into(os, n.body, depth + 1);
            os << indent << "END\n";
          }
        },
        s.node);
  }
}

}  // namespace detail

inline Program parse(std::string_view source) { return detail::Parser(detail::lex(source)).program(); }

/// Canonical text: one statement per line, loop bodies indented by 4 spaces,
/// trailing newline.
inline std::string format(const Program& program) {
  std::ostringstream os;
  detail::format_into(os, program.body, 0);
  return os.str();
}

/// Variable store; unset variables read as 0.
template <class T>
class Env {
 public:
  T get(Var v) const {
    auto it = values_.find(v.index);
    return it == values_.end() ? T(0.0) : it->second;
  }
  void set(Var v, T x) { values_.insert_or_assign(v.index, std::move(x)); }
  const std::map<std::uint32_t, T>& values() const { return values_; }

 private:
  std::map<std::uint32_t, T> values_;
};

inline constexpr std::uint64_t kDefaultIterationCap = 1'000'000;

class NonTerminationError : public std::runtime_error {
 public:
  explicit NonTerminationError(std::uint64_t cap)
      : std::runtime_error("iteration cap of " + std::to_string(cap) + " loop iterations exceeded"), cap_(cap) {}
  std::uint64_t cap() const { return cap_; }

 private:
  std::uint64_t cap_;
};

struct DiscreteRun {
  Env<double> env;
  std::uint64_t loop_iterations = 0;
  std::vector<std::string> warnings;
};

namespace detail {

inline void exec_discrete(const std::vector<Statement>& body, DiscreteRun& run, std::uint64_t cap) {
  for (const auto& s : body) {
    if (const auto* a = std::get_if<Assign>(&s.node)) {
      run.env.set(a->dst, run.env.get(a->src));
    } else if (const auto* inc = std::get_if<Inc>(&s.node)) {
      run.env.set(inc->var, run.env.get(inc->var) + 1.0);
    } else if (const auto* dec = std::get_if<Dec>(&s.node)) {
      run.env.set(dec->var, run.env.get(dec->var) - 1.0);
    } else {
      const auto& w = std::get<While>(s.node);
      while (run.env.get(w.cond) != 0.0) {
        if (++run.loop_iterations > cap) throw NonTerminationError(cap);
        exec_discrete(w.body, run, cap);
      }
    }
  }
}

}  // namespace detail

/// Crisp semantics. Throws NonTerminationError once more than `iteration_cap`
/// loop iterations (summed over all loops) have been entered.
inline DiscreteRun run_discrete(const Program& program, const std::map<std::uint32_t, double>& inputs,
                                std::uint64_t iteration_cap = kDefaultIterationCap) {
  DiscreteRun run;
  for (const auto& [idx, value] : inputs) {
    if (!std::isfinite(value)) throw std::domain_error("input x" + std::to_string(idx) + " is not finite");
    if (value != std::floor(value))
      run.warnings.push_back("input x" + std::to_string(idx) +
                             " is not an integer; crisp loops may not terminate");
    run.env.set(Var{idx}, value);
  }
  detail::exec_discrete(program.body, run, iteration_cap);
  return run;
}

/// Number of assignment-like statements (Assign, Inc, Dec) in pre-order.
inline std::size_t count_assignments(const std::vector<Statement>& body) {
  std::size_t n = 0;
  for (const auto& s : body) {
    if (const auto* w = std::get_if<While>(&s.node)) {
      n += count_assignments(w->body);
    } else {
      ++n;
    }
  }
  return n;
}
inline std::size_t count_assignments(const Program& p) { return count_assignments(p.body); }

inline std::size_t count_loops(const std::vector<Statement>& body) {
  std::size_t n = 0;
  for (const auto& s : body)
    if (const auto* w = std::get_if<While>(&s.node)) n += 1 + count_loops(w->body);
  return n;
}
inline std::size_t count_loops(const Program& p) { return count_loops(p.body); }

}  // namespace smoothlang::lang
