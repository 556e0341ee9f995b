#ifndef CCGEO_SYMEXPR_HPP_
#define CCGEO_SYMEXPR_HPP_

// Symbolic scalar expressions over the coordinates x1..xn, coordinate vector
// fields built from them, and a flat evaluator ("tape") for hot loops.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ccgeo/error.hpp"

namespace ccgeo {

enum class Op : std::uint8_t {
  Const,
  Var,
  Neg,
  Sin,
  Cos,
  Exp,
  Sqrt,
  Add,
  Sub,
  Mul,
  Div,
  Pow,  // integer exponent
};

class Expr;

namespace detail {
struct Node;
using NodePtr = std::shared_ptr<const Node>;
}  // namespace detail

/// Immutable expression tree. Copies share structure. Constructors fold
/// constants and absorb zeros and ones; nothing else is rewritten.
class Expr {
 public:
  Expr();  // the constant 0
  explicit Expr(double value);

  static Expr constant(double value);
  /// Coordinate x_{index+1}; `index` is zero-based.
  static Expr variable(int index);

  static Expr neg(const Expr& a);
  static Expr sin(const Expr& a);
  static Expr cos(const Expr& a);
  static Expr exp(const Expr& a);
  static Expr sqrt(const Expr& a);
  static Expr add(const Expr& a, const Expr& b);
  static Expr sub(const Expr& a, const Expr& b);
  static Expr mul(const Expr& a, const Expr& b);
  static Expr div(const Expr& a, const Expr& b);
  static Expr pow(const Expr& a, int exponent);

  Op op() const noexcept;
  bool is_constant() const noexcept { return op() == Op::Const; }
  bool is_zero() const noexcept;
  bool is_one() const noexcept;
  double constant_value() const noexcept;  // meaningful for Op::Const
  int variable_index() const noexcept;     // meaningful for Op::Var
  int exponent() const noexcept;           // meaningful for Op::Pow
  Expr child(int i) const;                 // 0 or 1
  int child_count() const noexcept;

  /// Highest zero-based variable index used, or -1 for constants.
  int max_variable() const noexcept { return max_var_; }

  /// Canonical text; parse(to_string()) is structurally equal to *this.
  std::string to_string() const;

  bool structurally_equal(const Expr& other) const;

  const detail::Node* raw() const noexcept { return node_.get(); }

 private:
  explicit Expr(detail::NodePtr node);
  friend struct detail::Node;
  detail::NodePtr node_;
  int max_var_ = -1;
};

inline Expr operator+(const Expr& a, const Expr& b) { return Expr::add(a, b); }
inline Expr operator-(const Expr& a, const Expr& b) { return Expr::sub(a, b); }
inline Expr operator*(const Expr& a, const Expr& b) { return Expr::mul(a, b); }
inline Expr operator/(const Expr& a, const Expr& b) { return Expr::div(a, b); }
inline Expr operator-(const Expr& a) { return Expr::neg(a); }

/// Parses `text` in the grammar
///   expr := term (('+'|'-') term)*; term := factor (('*'|'/') factor)*;
///   factor := ['-'] atom ['^' int];
///   atom := number | ident | func '(' expr ')' | '(' expr ')'
/// with func in {sin,cos,exp,sqrt} and ident in x1..x9, restricted to x1..xn.
Expr parse_expr(std::string_view text, int n);

/// Evaluates at `p`; throws DomainError on division by zero, sqrt of a
/// negative number, or a non-finite intermediate.
double eval(const Expr& e, std::span<const double> p);

/// Exact partial derivative with respect to the zero-based variable `index`.
Expr diff(const Expr& e, int index);

/// Replaces variable `index` by the constant `value` and re-simplifies.
Expr substitute(const Expr& e, int index, double value);

/// True when `a` and `b` are structurally negatives of each other
/// (c and -c, e and neg(e), p-q and q-p).
bool structurally_negated(const Expr& a, const Expr& b);

class Tape;

/// Coordinate vector field sum_k a_k(x) d/dx_k on R^n.
class VField {
 public:
  VField() = default;
  /// Throws DimensionError if a component references a variable beyond n.
  VField(int dim, std::vector<Expr> components);

  static VField zero(int dim);
  /// The coordinate field d/dx_{index+1}.
  static VField coordinate(int dim, int index);
  /// Parses a comma separated component list, e.g. "1, -2*x1".
  static VField parse(std::string_view text, int dim);

  int dim() const noexcept { return dim_; }
  const Expr& operator[](int k) const { return components_[k]; }
  const std::vector<Expr>& components() const noexcept { return components_; }
  /// The n-th (last) component, the one that decides tangency to {x_n = 0}.
  const Expr& normal_component() const { return components_.back(); }

  bool is_structurally_zero() const;
  std::string to_string() const;  // "e1, e2, ..."

  std::vector<double> eval(std::span<const double> p) const;

  VField scaled(const Expr& factor) const;
  VField scaled(double factor) const { return scaled(Expr(factor)); }
  VField operator-() const { return scaled(-1.0); }
  VField operator+(const VField& other) const;
  VField operator-(const VField& other) const;

  bool structurally_equal(const VField& other) const;
  bool structurally_negated(const VField& other) const;

 private:
  int dim_ = 0;
  std::vector<Expr> components_;
};

/// [X,Y]^k = sum_i (X^i d_i Y^k - Y^i d_i X^k). Throws DimensionError if the
/// dimensions differ.
VField lie_bracket(const VField& x, const VField& y);

/// Flat straight-line program computing several expressions at once with
/// shared subexpressions evaluated once. Immutable; safe to share.
class Tape {
 public:
  Tape() = default;
  Tape(std::span<const Expr> outputs, int dim);

  int dim() const noexcept { return dim_; }
  std::size_t output_count() const noexcept { return outputs_.size(); }

  /// Writes output_count() values into `out`. `scratch` must hold at least
  /// scratch_size() doubles. Throws DomainError.
  void run(std::span<const double> p, std::span<double> out,
           std::span<double> scratch) const;
  std::size_t scratch_size() const noexcept { return code_.size(); }

  /// Convenience overload allocating its own scratch.
  std::vector<double> run(std::span<const double> p) const;

 private:
  struct Instr {
    Op op;
    std::int32_t a;
    std::int32_t b;
    double value;  // Const value, Var index, or Pow exponent
  };
  int dim_ = 0;
  std::vector<Instr> code_;
  std::vector<std::int32_t> outputs_;
  std::vector<std::string> paths_;  // node path per instruction, for errors
};

}  // namespace ccgeo

#endif  // CCGEO_SYMEXPR_HPP_
