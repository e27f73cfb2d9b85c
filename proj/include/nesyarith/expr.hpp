#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nesyarith {

class ExprError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SyntaxError : public ExprError {
 public:
  SyntaxError(const std::string& what, std::size_t offset)
      : ExprError(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class NotChainForm : public ExprError {
 public:
  using ExprError::ExprError;
};

class IsLeaf : public ExprError {
 public:
  IsLeaf() : ExprError("expression has no operation") {}
};

class TargetAbsent : public ExprError {
 public:
  using ExprError::ExprError;
};

enum class Op : char { Add = '+', Sub = '-', Mul = '*' };

// Immutable binary tree of integer leaves and {+,-,*} nodes. Copies share
// structure.
class Expr {
 public:
  static Expr leaf(std::int64_t value);
  static Expr node(Op op, Expr left, Expr right);

  bool is_leaf() const;
  std::int64_t value() const;  // leaf only
  Op op() const;               // node only
  const Expr& left() const;
  const Expr& right() const;

  friend bool operator==(const Expr& a, const Expr& b);

 private:
  struct Rep;
  explicit Expr(std::shared_ptr<const Rep> rep) : rep_(std::move(rep)) {}
  std::shared_ptr<const Rep> rep_;
};

enum class ParseMode {
  Chain,       // reject nodes with two compound children
  Permissive,  // accept any binary tree
};

struct InnermostRef {
  std::string subexpr_text;
  std::int64_t result = 0;
};

Expr parse(std::string_view text, ParseMode mode = ParseMode::Chain);
std::string render(const Expr& e);
std::int64_t evaluate(const Expr& e);
std::int64_t apply(Op op, std::int64_t lhs, std::int64_t rhs);

/// Number of operations along the longest root-to-leaf path. On chain-form
/// expressions this equals the operation count.
int nesting_depth(const Expr& e);
int operation_count(const Expr& e);
bool is_chain_form(const Expr& e);

/// Deepest node whose children are both leaves; leftmost on ties, which only
/// matters for non-chain trees.
InnermostRef innermost(const Expr& e);
Expr solve_step(const Expr& e);
std::vector<Expr> solution_chain(const Expr& e);

/// Replaces the leftmost occurrence of `target` in `text`.
std::string substitute_once(std::string_view text, std::string_view target,
                            std::string_view candidate);

/// True iff `text` is "-"? digit+ and fits in 64 bits.
bool is_integer_literal(std::string_view text);

}  // namespace nesyarith
