#include "nesyarith/expr.hpp"

#include <charconv>
#include <limits>

namespace nesyarith {

struct Expr::Rep {
  bool leaf = true;
  std::int64_t value = 0;
  Op op = Op::Add;
  Expr left{nullptr};
  Expr right{nullptr};
};

Expr Expr::leaf(std::int64_t value) {
  auto rep = std::make_shared<Rep>();
  rep->value = value;
  return Expr(std::move(rep));
}

Expr Expr::node(Op op, Expr left, Expr right) {
  auto rep = std::make_shared<Rep>();
  rep->leaf = false;
  rep->op = op;
  rep->left = std::move(left);
  rep->right = std::move(right);
  return Expr(std::move(rep));
}

bool Expr::is_leaf() const { return rep_->leaf; }

std::int64_t Expr::value() const {
  if (!rep_->leaf) throw ExprError("value() on a compound expression");
  return rep_->value;
}

Op Expr::op() const {
  if (rep_->leaf) throw IsLeaf();
  return rep_->op;
}

const Expr& Expr::left() const {
  if (rep_->leaf) throw IsLeaf();
  return rep_->left;
}

const Expr& Expr::right() const {
  if (rep_->leaf) throw IsLeaf();
  return rep_->right;
}

bool operator==(const Expr& a, const Expr& b) {
  if (a.rep_ == b.rep_) return true;
  if (a.is_leaf() != b.is_leaf()) return false;
  if (a.is_leaf()) return a.value() == b.value();
  return a.op() == b.op() && a.left() == b.left() && a.right() == b.right();
}

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

class Parser {
 public:
  Parser(std::string_view text, ParseMode mode) : text_(text), mode_(mode) {}

  Expr run() {
    if (text_.empty()) throw SyntaxError("empty input", 0);
    Expr e = expr();
    if (pos_ != text_.size()) throw SyntaxError("trailing characters", pos_);
    return e;
  }

 private:
  Expr expr() {
    if (pos_ >= text_.size()) throw SyntaxError("empty operand", pos_);
    if (text_[pos_] == '(') return compound();
    if (text_[pos_] == '-' || is_digit(text_[pos_])) return literal();
    if (text_[pos_] == ')' || text_[pos_] == '+' || text_[pos_] == '*')
      throw SyntaxError("empty operand", pos_);
    throw SyntaxError(std::string("illegal character '") + text_[pos_] + "'", pos_);
  }

  Expr compound() {
    const std::size_t open = pos_;
    ++pos_;  // '('
    Expr lhs = expr();
    if (pos_ >= text_.size()) throw SyntaxError("unbalanced parentheses", open);
    Op op;
    switch (text_[pos_]) {
      case '+': op = Op::Add; break;
      case '-': op = Op::Sub; break;
      case '*': op = Op::Mul; break;
      case ')': throw SyntaxError("missing operator", pos_);
      default:
        throw SyntaxError(std::string("illegal character '") + text_[pos_] + "'", pos_);
    }
    ++pos_;
    Expr rhs = expr();
    if (pos_ >= text_.size()) throw SyntaxError("unbalanced parentheses", open);
    if (text_[pos_] != ')') {
      if (text_[pos_] == '+' || text_[pos_] == '-' || text_[pos_] == '*')
        throw SyntaxError("binary operation without parentheses", pos_);
      throw SyntaxError(std::string("illegal character '") + text_[pos_] + "'", pos_);
    }
    ++pos_;
    if (mode_ == ParseMode::Chain && !lhs.is_leaf() && !rhs.is_leaf())
      throw NotChainForm("both operands of the operation at offset " +
                         std::to_string(open) + " are compound");
    return Expr::node(op, std::move(lhs), std::move(rhs));
  }

  Expr literal() {
    const std::size_t start = pos_;
    if (text_[pos_] == '-') ++pos_;
    const std::size_t digits = pos_;
    while (pos_ < text_.size() && is_digit(text_[pos_])) ++pos_;
    if (pos_ == digits) throw SyntaxError("expected digits", pos_);
    if (mode_ == ParseMode::Chain) {
      // Canonical literals only, so that render(parse(t)) == t.
      if (pos_ - digits > 1 && text_[digits] == '0')
        throw SyntaxError("leading zero in literal", start);
      if (digits != start && pos_ - digits == 1 && text_[digits] == '0')
        throw SyntaxError("negative zero literal", start);
    }
    std::int64_t value = 0;
    auto [ptr, ec] = std::from_chars(text_.data() + start, text_.data() + pos_, value);
    if (ec != std::errc() || ptr != text_.data() + pos_)
      throw SyntaxError("integer literal out of range", start);
    return Expr::leaf(value);
  }

  std::string_view text_;
  ParseMode mode_;
  std::size_t pos_ = 0;
};

void render_into(const Expr& e, std::string& out) {
  if (e.is_leaf()) {
    out += std::to_string(e.value());
    return;
  }
  out += '(';
  render_into(e.left(), out);
  out += static_cast<char>(e.op());
  render_into(e.right(), out);
  out += ')';
}

// Depth of the innermost candidate below `e` and the candidate itself.
struct Deepest {
  int depth = -1;
  const Expr* node = nullptr;
};

Deepest find_deepest(const Expr& e, int depth) {
  if (e.is_leaf()) return {};
  if (e.left().is_leaf() && e.right().is_leaf()) return {depth, &e};
  Deepest l = find_deepest(e.left(), depth + 1);
  Deepest r = find_deepest(e.right(), depth + 1);
  return r.depth > l.depth ? r : l;
}

Expr replace_node(const Expr& e, const Expr* target, const Expr& with) {
  if (&e == target) return with;
  if (e.is_leaf()) return e;
  return Expr::node(e.op(), replace_node(e.left(), target, with),
                    replace_node(e.right(), target, with));
}

}  // namespace

Expr parse(std::string_view text, ParseMode mode) { return Parser(text, mode).run(); }

std::string render(const Expr& e) {
  std::string out;
  render_into(e, out);
  return out;
}

std::int64_t apply(Op op, std::int64_t lhs, std::int64_t rhs) {
  std::int64_t out = 0;
  bool overflow = false;
  switch (op) {
    case Op::Add: overflow = __builtin_add_overflow(lhs, rhs, &out); break;
    case Op::Sub: overflow = __builtin_sub_overflow(lhs, rhs, &out); break;
    case Op::Mul: overflow = __builtin_mul_overflow(lhs, rhs, &out); break;
  }
  if (overflow) throw ExprError("integer overflow");
  return out;
}

std::int64_t evaluate(const Expr& e) {
  if (e.is_leaf()) return e.value();
  return apply(e.op(), evaluate(e.left()), evaluate(e.right()));
}

int nesting_depth(const Expr& e) {
  if (e.is_leaf()) return 0;
  return 1 + std::max(nesting_depth(e.left()), nesting_depth(e.right()));
}

int operation_count(const Expr& e) {
  if (e.is_leaf()) return 0;
  return 1 + operation_count(e.left()) + operation_count(e.right());
}

bool is_chain_form(const Expr& e) {
  if (e.is_leaf()) return true;
  if (!e.left().is_leaf() && !e.right().is_leaf()) return false;
  return is_chain_form(e.left()) && is_chain_form(e.right());
}

InnermostRef innermost(const Expr& e) {
  if (e.is_leaf()) throw IsLeaf();
  const Expr& node = *find_deepest(e, 0).node;
  return {render(node), apply(node.op(), node.left().value(), node.right().value())};
}

Expr solve_step(const Expr& e) {
  if (e.is_leaf()) throw IsLeaf();
  const Expr* node = find_deepest(e, 0).node;
  Expr result =
      Expr::leaf(apply(node->op(), node->left().value(), node->right().value()));
  return replace_node(e, node, result);
}

std::vector<Expr> solution_chain(const Expr& e) {
  std::vector<Expr> chain{e};
  while (!chain.back().is_leaf()) chain.push_back(solve_step(chain.back()));
  return chain;
}

std::string substitute_once(std::string_view text, std::string_view target,
                            std::string_view candidate) {
  if (target.empty()) throw TargetAbsent("empty target");
  const auto at = text.find(target);
  if (at == std::string_view::npos)
    throw TargetAbsent("'" + std::string(target) + "' does not occur in '" +
                       std::string(text) + "'");
  std::string out;
  out.reserve(text.size() - target.size() + candidate.size());
  out.append(text.substr(0, at));
  out.append(candidate);
  out.append(text.substr(at + target.size()));
  return out;
}

bool is_integer_literal(std::string_view text) {
  std::size_t i = (!text.empty() && text[0] == '-') ? 1 : 0;
  if (i == text.size()) return false;
  for (std::size_t j = i; j < text.size(); ++j)
    if (!is_digit(text[j])) return false;
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  return ec == std::errc() && ptr == text.data() + text.size();
}

}  // namespace nesyarith
