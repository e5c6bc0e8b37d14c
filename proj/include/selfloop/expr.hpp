#pragma once

// Boolean expression domain: token vocabulary, expression trees, random
// generation, strict parsing, evaluation and correctness classification.

#include <array>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <variant>
#include <vector>

namespace selfloop {

enum class Token : std::uint8_t {
  True = 0,
  False = 1,
  Not = 2,
  And = 3,
  Or = 4,
  LParen = 5,
  RParen = 6,
  Eos = 7,
};

inline constexpr int kVocabSize = 8;

using TokenSeq = std::vector<Token>;

inline constexpr std::array<std::string_view, kVocabSize> kTokenText = {
    "True", "False", "not", "and", "or", "(", ")", "<eos>"};

constexpr int token_id(Token t) noexcept { return static_cast<int>(t); }

inline Token token_from_id(int id) {
  if (id < 0 || id >= kVocabSize) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside [0,8)");
  }
  return static_cast<Token>(id);
}

constexpr std::string_view token_text(Token t) noexcept {
  return kTokenText[static_cast<std::size_t>(t)];
}

inline Token token_from_text(std::string_view s) {
  for (int i = 0; i < kVocabSize; ++i) {
    if (kTokenText[static_cast<std::size_t>(i)] == s) return static_cast<Token>(i);
  }
  throw std::invalid_argument("unknown token '" + std::string(s) + "'");
}

/// Space-separated rendering, e.g. "not ( True and False )".
inline std::string to_text(const TokenSeq& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out += ' ';
    out += token_text(seq[i]);
  }
  return out;
}

inline TokenSeq from_text(std::string_view line) {
  TokenSeq out;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t' || line[pos] == '\r')) ++pos;
    if (pos >= line.size()) break;
    std::size_t end = pos;
    while (end < line.size() && line[end] != ' ' && line[end] != '\t' && line[end] != '\r') ++end;
    out.push_back(token_from_text(line.substr(pos, end - pos)));
    pos = end;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Expression trees

struct Expr {
  enum class Kind : std::uint8_t { Leaf, Not, And, Or };

  Kind kind = Kind::Leaf;
  bool value = false;          // Leaf only
  std::vector<Expr> children;  // 0 for Leaf, 1 for Not, 2 for And/Or

  static Expr leaf(bool v) { return Expr{Kind::Leaf, v, {}}; }
  static Expr negate(Expr child) {
    Expr e{Kind::Not, false, {}};
    e.children.push_back(std::move(child));
    return e;
  }
  static Expr conj(Expr l, Expr r) { return binary(Kind::And, std::move(l), std::move(r)); }
  static Expr disj(Expr l, Expr r) { return binary(Kind::Or, std::move(l), std::move(r)); }
  static Expr binary(Kind k, Expr l, Expr r) {
    Expr e{k, false, {}};
    e.children.reserve(2);
    e.children.push_back(std::move(l));
    e.children.push_back(std::move(r));
    return e;
  }

  bool is_leaf() const noexcept { return kind == Kind::Leaf; }

  friend bool operator==(const Expr&, const Expr&) = default;
};

inline int depth(const Expr& e) {
  int d = 0;
  for (const auto& c : e.children) d = std::max(d, depth(c) + 1);
  return d;
}

/// Smallest root-to-leaf path length.
inline int min_depth(const Expr& e) {
  if (e.is_leaf()) return 0;
  int d = std::numeric_limits<int>::max();
  for (const auto& c : e.children) d = std::min(d, min_depth(c) + 1);
  return d;
}

inline bool evaluate(const Expr& e) {
  switch (e.kind) {
    case Expr::Kind::Leaf: return e.value;
    case Expr::Kind::Not: return !evaluate(e.children[0]);
    case Expr::Kind::And: return evaluate(e.children[0]) && evaluate(e.children[1]);
    case Expr::Kind::Or: return evaluate(e.children[0]) || evaluate(e.children[1]);
  }
  return false;
}

// ---------------------------------------------------------------------------
// Serialization: compound children are parenthesized, the root never is.

namespace detail {

inline void serialize_child(const Expr& e, TokenSeq& out);

inline void serialize_into(const Expr& e, TokenSeq& out) {
  switch (e.kind) {
    case Expr::Kind::Leaf:
      out.push_back(e.value ? Token::True : Token::False);
      return;
    case Expr::Kind::Not:
      out.push_back(Token::Not);
      serialize_child(e.children[0], out);
      return;
    case Expr::Kind::And:
    case Expr::Kind::Or:
      serialize_child(e.children[0], out);
      out.push_back(e.kind == Expr::Kind::And ? Token::And : Token::Or);
      serialize_child(e.children[1], out);
      return;
  }
}

inline void serialize_child(const Expr& e, TokenSeq& out) {
  if (e.is_leaf()) {
    serialize_into(e, out);
    return;
  }
  out.push_back(Token::LParen);
  serialize_into(e, out);
  out.push_back(Token::RParen);
}

}  // namespace detail

inline TokenSeq serialize(const Expr& e) {
  TokenSeq out;
  detail::serialize_into(e, out);
  return out;
}

// ---------------------------------------------------------------------------
// Parsing
//
//   expr     := or_term ('or' or_term)*
//   or_term  := and_term ('and' and_term)*
//   and_term := 'not' and_term | atom
//   atom     := 'True' | 'False' | '(' expr ')'

struct SyntaxError {
  std::size_t index = 0;  // first offending token; == size() for premature end
  std::string message;

  friend bool operator==(const SyntaxError& a, const SyntaxError& b) { return a.index == b.index; }
};

using ParseResult = std::variant<Expr, SyntaxError>;

namespace detail {

class Parser {
 public:
  explicit Parser(const TokenSeq& toks) : toks_(toks) {}

  ParseResult run() {
    if (toks_.empty()) return SyntaxError{0, "empty input"};
    Expr e = expr();
    if (failed_) return err_;
    if (pos_ != toks_.size()) return SyntaxError{pos_, "unexpected trailing token"};
    return e;
  }

 private:
  bool at(Token t) const { return pos_ < toks_.size() && toks_[pos_] == t; }

  void fail(std::string msg) {
    if (!failed_) {
      failed_ = true;
      err_ = SyntaxError{pos_, std::move(msg)};
    }
  }

  Expr expr() {
    Expr lhs = or_term();
    while (!failed_ && at(Token::Or)) {
      ++pos_;
      Expr rhs = or_term();
      lhs = Expr::disj(std::move(lhs), std::move(rhs));
    }
    return lhs;
  }

  Expr or_term() {
    Expr lhs = and_term();
    while (!failed_ && at(Token::And)) {
      ++pos_;
      Expr rhs = and_term();
      lhs = Expr::conj(std::move(lhs), std::move(rhs));
    }
    return lhs;
  }

  Expr and_term() {
    if (failed_) return {};
    if (at(Token::Not)) {
      ++pos_;
      return Expr::negate(and_term());
    }
    return atom();
  }

  Expr atom() {
    if (failed_) return {};
    if (pos_ >= toks_.size()) {
      fail("expected operand, found end of input");
      return {};
    }
    switch (toks_[pos_]) {
      case Token::True: ++pos_; return Expr::leaf(true);
      case Token::False: ++pos_; return Expr::leaf(false);
      case Token::LParen: {
        ++pos_;
        Expr inner = expr();
        if (failed_) return {};
        if (!at(Token::RParen)) {
          fail("expected ')'");
          return {};
        }
        ++pos_;
        return inner;
      }
      default:
        fail("expected operand, found '" + std::string(token_text(toks_[pos_])) + "'");
        return {};
    }
  }

  const TokenSeq& toks_;
  std::size_t pos_ = 0;
  bool failed_ = false;
  SyntaxError err_;
};

}  // namespace detail

inline ParseResult parse(const TokenSeq& seq) { return detail::Parser(seq).run(); }

// ---------------------------------------------------------------------------
// Classification

enum class Classification : std::uint8_t { TrueExpr, FalseExpr, SyntaxError };

inline std::string_view to_string(Classification c) {
  switch (c) {
    case Classification::TrueExpr: return "true";
    case Classification::FalseExpr: return "false";
    case Classification::SyntaxError: return "error";
  }
  return "?";
}

/// A single trailing EOS is stripped; a missing one is not an error.
inline Classification classify(const TokenSeq& seq) {
  TokenSeq body = seq;
  if (!body.empty() && body.back() == Token::Eos) body.pop_back();
  ParseResult r = parse(body);
  if (std::holds_alternative<SyntaxError>(r)) return Classification::SyntaxError;
  return evaluate(std::get<Expr>(r)) ? Classification::TrueExpr : Classification::FalseExpr;
}

// ---------------------------------------------------------------------------
// Random generation

/// Every root-to-leaf path has length exactly `d`.
template <class Rng>
Expr generate_expression(int d, Rng& rng) {
  if (d < 0) throw std::invalid_argument("generate_expression: negative depth");
  if (d == 0) {
    std::uniform_int_distribution<int> coin(0, 1);
    return Expr::leaf(coin(rng) == 0);
  }
  std::uniform_int_distribution<int> op(0, 2);
  switch (op(rng)) {
    case 0: return Expr::negate(generate_expression(d - 1, rng));
    case 1: {
      Expr l = generate_expression(d - 1, rng);
      Expr r = generate_expression(d - 1, rng);
      return Expr::conj(std::move(l), std::move(r));
    }
    default: {
      Expr l = generate_expression(d - 1, rng);
      Expr r = generate_expression(d - 1, rng);
      return Expr::disj(std::move(l), std::move(r));
    }
  }
}

struct TruthCounts {
  std::uint64_t n_true = 0;
  std::uint64_t n_false = 0;
};

/// Number of distinct exact-depth-d trees by value, saturating at 2^64-1.
inline TruthCounts count_trees(int d) {
  constexpr std::uint64_t kMax = std::numeric_limits<std::uint64_t>::max();
  auto add = [](std::uint64_t a, std::uint64_t b) { return a > kMax - b ? kMax : a + b; };
  auto mul = [](std::uint64_t a, std::uint64_t b) {
    if (a == 0 || b == 0) return std::uint64_t{0};
    return a > kMax / b ? kMax : a * b;
  };
  TruthCounts c{1, 1};
  for (int i = 1; i <= d; ++i) {
    const std::uint64_t t = c.n_true, f = c.n_false, n = add(t, f);
    // not x: true iff x false.  a and b: true iff both.  a or b: false iff both false.
    const std::uint64_t and_true = mul(t, t);
    const std::uint64_t or_false = mul(f, f);
    const std::uint64_t nn = mul(n, n);
    const std::uint64_t and_false = nn == kMax ? kMax : nn - and_true;
    const std::uint64_t or_true = nn == kMax ? kMax : nn - or_false;
    c = TruthCounts{add(add(f, and_true), or_true), add(add(t, and_false), or_false)};
  }
  return c;
}

class GenerationCapExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint64_t kDefaultMaxDraws = 1'000'000'000ULL;

/// Rejection-samples `m` distinct True-evaluating expressions with depth
/// drawn uniformly from [d_min, d_max]. Items keep insertion order.
template <class Rng>
std::vector<TokenSeq> generate_dataset(std::size_t m, int d_min, int d_max, Rng& rng,
                                       std::uint64_t max_draws = kDefaultMaxDraws) {
  if (m < 1) throw std::invalid_argument("generate_dataset: m must be >= 1");
  if (d_min < 1 || d_min > d_max) {
    throw std::invalid_argument("generate_dataset: need 1 <= d_min <= d_max");
  }
  std::uint64_t available = 0;
  for (int d = d_min; d <= d_max; ++d) {
    const std::uint64_t t = count_trees(d).n_true;
    available = available > std::numeric_limits<std::uint64_t>::max() - t
                    ? std::numeric_limits<std::uint64_t>::max()
                    : available + t;
  }
  if (available < m) {
    throw GenerationCapExceeded("generate_dataset: only " + std::to_string(available) +
                                " distinct True expressions exist for depths [" +
                                std::to_string(d_min) + "," + std::to_string(d_max) +
                                "], cannot draw m=" + std::to_string(m));
  }

  std::vector<TokenSeq> out;
  out.reserve(m);
  std::unordered_set<std::string> seen;
  std::uniform_int_distribution<int> depth_dist(d_min, d_max);
  std::uint64_t draws = 0;
  while (out.size() < m) {
    if (draws++ >= max_draws) {
      throw GenerationCapExceeded("generate_dataset: gave up after " + std::to_string(max_draws) +
                                  " draws with " + std::to_string(out.size()) + "/" +
                                  std::to_string(m) + " unique True expressions");
    }
    Expr e = generate_expression(depth_dist(rng), rng);
    if (!evaluate(e)) continue;
    TokenSeq s = serialize(e);
    if (seen.insert(to_text(s)).second) out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Line-based text files: one expression per line, tokens single-space separated.

inline void write_lines(const std::string& path, const std::vector<TokenSeq>& items) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  for (const auto& s : items) os << to_text(s) << '\n';
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

inline std::vector<TokenSeq> read_lines(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "' for reading");
  std::vector<TokenSeq> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    try {
      out.push_back(from_text(line));
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace selfloop
