#include "ccgeo/symexpr.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <unordered_map>

namespace ccgeo {

namespace detail {

struct Node {
  Op op = Op::Const;
  double value = 0.0;  // Const
  int index = 0;       // Var
  int exponent = 0;    // Pow
  NodePtr a;
  NodePtr b;

  static Expr wrap(NodePtr n) { return Expr(std::move(n)); }
};

}  // namespace detail

using detail::Node;
using detail::NodePtr;

namespace {

NodePtr make_node(Op op, NodePtr a = nullptr, NodePtr b = nullptr) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->a = std::move(a);
  n->b = std::move(b);
  return n;
}

NodePtr make_const(double v) {
  auto n = std::make_shared<Node>();
  n->op = Op::Const;
  n->value = v;
  return n;
}

bool is_binary(Op op) {
  return op == Op::Add || op == Op::Sub || op == Op::Mul || op == Op::Div;
}

bool is_unary(Op op) {
  return op == Op::Neg || op == Op::Sin || op == Op::Cos || op == Op::Exp ||
         op == Op::Sqrt || op == Op::Pow;
}

const char* func_name(Op op) {
  switch (op) {
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Exp: return "exp";
    case Op::Sqrt: return "sqrt";
    default: return "";
  }
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double int_pow(double base, int k) {
  if (k < 0) return 1.0 / int_pow(base, -k);
  double result = 1.0;
  while (k > 0) {
    if (k & 1) result *= base;
    base *= base;
    k >>= 1;
  }
  return result;
}

}  // namespace

// ---------------------------------------------------------------------------
// Expr

Expr::Expr() : Expr(make_const(0.0)) {}
Expr::Expr(double value) : Expr(make_const(value)) {}

Expr::Expr(NodePtr node) : node_(std::move(node)) {
  switch (node_->op) {
    case Op::Const: max_var_ = -1; break;
    case Op::Var: max_var_ = node_->index; break;
    default: {
      max_var_ = Expr(node_->a).max_var_;
      if (node_->b) max_var_ = std::max(max_var_, Expr(node_->b).max_var_);
    }
  }
}

Expr Expr::constant(double value) { return Expr(value); }

Expr Expr::variable(int index) {
  auto n = std::make_shared<Node>();
  n->op = Op::Var;
  n->index = index;
  return Expr(NodePtr(std::move(n)));
}

Op Expr::op() const noexcept { return node_->op; }
bool Expr::is_zero() const noexcept {
  return node_->op == Op::Const && node_->value == 0.0;
}
bool Expr::is_one() const noexcept {
  return node_->op == Op::Const && node_->value == 1.0;
}
double Expr::constant_value() const noexcept { return node_->value; }
int Expr::variable_index() const noexcept { return node_->index; }
int Expr::exponent() const noexcept { return node_->exponent; }
Expr Expr::child(int i) const { return Expr(i == 0 ? node_->a : node_->b); }
int Expr::child_count() const noexcept {
  if (is_binary(node_->op)) return 2;
  if (is_unary(node_->op)) return 1;
  return 0;
}

Expr Expr::neg(const Expr& a) {
  if (a.is_constant()) return Expr(-a.constant_value());
  if (a.op() == Op::Neg) return a.child(0);
  return Expr(make_node(Op::Neg, a.node_));
}

Expr Expr::sin(const Expr& a) {
  if (a.is_constant()) return Expr(std::sin(a.constant_value()));
  return Expr(make_node(Op::Sin, a.node_));
}

Expr Expr::cos(const Expr& a) {
  if (a.is_constant()) return Expr(std::cos(a.constant_value()));
  return Expr(make_node(Op::Cos, a.node_));
}

Expr Expr::exp(const Expr& a) {
  if (a.is_constant()) return Expr(std::exp(a.constant_value()));
  return Expr(make_node(Op::Exp, a.node_));
}

Expr Expr::sqrt(const Expr& a) {
  // A negative constant is left unfolded so the error surfaces at evaluation.
  if (a.is_constant() && a.constant_value() >= 0.0)
    return Expr(std::sqrt(a.constant_value()));
  return Expr(make_node(Op::Sqrt, a.node_));
}

Expr Expr::add(const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant())
    return Expr(a.constant_value() + b.constant_value());
  if (a.is_zero()) return b;
  if (b.is_zero()) return a;
  return Expr(make_node(Op::Add, a.node_, b.node_));
}

Expr Expr::sub(const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant())
    return Expr(a.constant_value() - b.constant_value());
  if (b.is_zero()) return a;
  if (a.is_zero()) return neg(b);
  if (a.structurally_equal(b)) return Expr(0.0);
  return Expr(make_node(Op::Sub, a.node_, b.node_));
}

Expr Expr::mul(const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant())
    return Expr(a.constant_value() * b.constant_value());
  if (a.is_zero() || b.is_zero()) return Expr(0.0);
  if (a.is_one()) return b;
  if (b.is_one()) return a;
  return Expr(make_node(Op::Mul, a.node_, b.node_));
}

Expr Expr::div(const Expr& a, const Expr& b) {
  if (b.is_zero()) return Expr(make_node(Op::Div, a.node_, b.node_));
  if (a.is_constant() && b.is_constant())
    return Expr(a.constant_value() / b.constant_value());
  if (a.is_zero()) return Expr(0.0);
  if (b.is_one()) return a;
  return Expr(make_node(Op::Div, a.node_, b.node_));
}

Expr Expr::pow(const Expr& a, int exponent) {
  if (exponent == 0) return Expr(1.0);
  if (exponent == 1) return a;
  if (a.is_constant() && (a.constant_value() != 0.0 || exponent > 0))
    return Expr(int_pow(a.constant_value(), exponent));
  auto n = std::make_shared<Node>();
  n->op = Op::Pow;
  n->exponent = exponent;
  n->a = a.node_;
  return Expr(NodePtr(std::move(n)));
}

bool Expr::structurally_equal(const Expr& other) const {
  std::function<bool(const Node*, const Node*)> eq = [&](const Node* x,
                                                          const Node* y) {
    if (x == y) return true;
    if (x->op != y->op) return false;
    switch (x->op) {
      case Op::Const: return x->value == y->value;
      case Op::Var: return x->index == y->index;
      case Op::Pow: return x->exponent == y->exponent && eq(x->a.get(), y->a.get());
      default:
        if (!eq(x->a.get(), y->a.get())) return false;
        return !x->b || eq(x->b.get(), y->b.get());
    }
  };
  return eq(node_.get(), other.node_.get());
}

std::string Expr::to_string() const {
  std::function<std::string(const Node*)> str = [&](const Node* n) -> std::string {
    switch (n->op) {
      case Op::Const: {
        if (n->value < 0.0 || std::signbit(n->value))
          return "(-" + format_double(-n->value) + ")";
        return format_double(n->value);
      }
      case Op::Var: return "x" + std::to_string(n->index + 1);
      case Op::Neg: return "(-" + str(n->a.get()) + ")";
      case Op::Sin:
      case Op::Cos:
      case Op::Exp:
      case Op::Sqrt: return std::string(func_name(n->op)) + "(" + str(n->a.get()) + ")";
      case Op::Add: return "(" + str(n->a.get()) + "+" + str(n->b.get()) + ")";
      case Op::Sub: return "(" + str(n->a.get()) + "-" + str(n->b.get()) + ")";
      case Op::Mul: return "(" + str(n->a.get()) + "*" + str(n->b.get()) + ")";
      case Op::Div: return "(" + str(n->a.get()) + "/" + str(n->b.get()) + ")";
      case Op::Pow: {
        const Node* base = n->a.get();
        std::string b = str(base);
        bool atom = base->op == Op::Var || (base->op == Op::Const && !std::signbit(base->value));
        if (!atom && b.front() != '(') b = "(" + b + ")";
        return b + "^" + std::to_string(n->exponent);
      }
    }
    return {};
  };
  return str(node_.get());
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

class Parser {
 public:
  Parser(std::string_view text, int n) : text_(text), n_(n) {}

  Expr parse() {
    Expr e = expr();
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected character '" + std::string(1, text_[pos_]) + "'");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, pos_); }

  void skip_ws() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t')) ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) fail(std::string("expected '") + c + "'");
  }

  Expr expr() {
    Expr lhs = term();
    for (;;) {
      if (accept('+')) lhs = lhs + term();
      else if (accept('-')) lhs = lhs - term();
      else return lhs;
    }
  }

  Expr term() {
    Expr lhs = factor();
    for (;;) {
      if (accept('*')) lhs = lhs * factor();
      else if (accept('/')) lhs = lhs / factor();
      else return lhs;
    }
  }

  Expr factor() {
    bool negate = accept('-');
    Expr base = atom();
    if (accept('^')) base = Expr::pow(base, integer());
    return negate ? -base : base;
  }

  int integer() {
    skip_ws();
    std::size_t start = pos_;
    if (pos_ < text_.size() && (text_[pos_] == '-' || text_[pos_] == '+')) ++pos_;
    std::size_t digits = pos_;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (pos_ == digits) {
      pos_ = start;
      fail("expected integer exponent");
    }
    int value = 0;
    const char* first = text_.data() + start + (text_[start] == '+' ? 1 : 0);
    auto res = std::from_chars(first, text_.data() + pos_, value);
    if (res.ec != std::errc()) {
      pos_ = start;
      fail("exponent out of range");
    }
    return value;
  }

  Expr atom() {
    skip_ws();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      Expr e = expr();
      expect(')');
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c))) return identifier();
    fail("unexpected character '" + std::string(1, c) + "'");
  }

  Expr number() {
    std::size_t start = pos_;
    auto is_digit = [&](std::size_t i) {
      return i < text_.size() && std::isdigit(static_cast<unsigned char>(text_[i]));
    };
    while (is_digit(pos_)) ++pos_;
    if (pos_ < text_.size() && text_[pos_] == '.') {
      ++pos_;
      while (is_digit(pos_)) ++pos_;
    }
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t save = pos_;
      ++pos_;
      if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) ++pos_;
      if (!is_digit(pos_)) {
        pos_ = save;
      } else {
        while (is_digit(pos_)) ++pos_;
      }
    }
    double value = 0.0;
    auto res = std::from_chars(text_.data() + start, text_.data() + pos_, value);
    if (res.ec != std::errc() || res.ptr != text_.data() + pos_) {
      pos_ = start;
      fail("malformed number");
    }
    return Expr(value);
  }

  Expr identifier() {
    std::size_t start = pos_;
    while (pos_ < text_.size() && std::isalnum(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    std::string_view name = text_.substr(start, pos_ - start);
    static constexpr std::pair<std::string_view, Op> funcs[] = {
        {"sin", Op::Sin}, {"cos", Op::Cos}, {"exp", Op::Exp}, {"sqrt", Op::Sqrt}};
    for (const auto& [fname, op] : funcs) {
      if (name != fname) continue;
      expect('(');
      Expr arg = expr();
      skip_ws();
      if (pos_ < text_.size() && text_[pos_] == ',')
        fail("arity mismatch: " + std::string(fname) + " takes one argument");
      expect(')');
      switch (op) {
        case Op::Sin: return Expr::sin(arg);
        case Op::Cos: return Expr::cos(arg);
        case Op::Exp: return Expr::exp(arg);
        default: return Expr::sqrt(arg);
      }
    }
    if (name.size() == 2 && name[0] == 'x' && name[1] >= '1' && name[1] <= '9') {
      int index = name[1] - '1';
      if (index >= n_) {
        pos_ = start;
        fail("unknown variable " + std::string(name) + " (dimension " + std::to_string(n_) + ")");
      }
      return Expr::variable(index);
    }
    pos_ = start;
    fail("unknown identifier '" + std::string(name) + "'");
  }

  std::string_view text_;
  int n_;
  std::size_t pos_ = 0;
};

}  // namespace

Expr parse_expr(std::string_view text, int n) { return Parser(text, n).parse(); }

// ---------------------------------------------------------------------------
// Evaluation

namespace {

std::string join_path(const std::vector<int>& path) {
  std::string out;
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (i) out += '.';
    out += std::to_string(path[i]);
  }
  return out.empty() ? "root" : out;
}

double eval_node(const Node* n, std::span<const double> p, std::vector<int>& path) {
  auto child = [&](const NodePtr& c, int which) {
    path.push_back(which);
    double v = eval_node(c.get(), p, path);
    path.pop_back();
    return v;
  };
  switch (n->op) {
    case Op::Const: return n->value;
    case Op::Var: return p[n->index];
    case Op::Neg: return -child(n->a, 0);
    case Op::Sin: return std::sin(child(n->a, 0));
    case Op::Cos: return std::cos(child(n->a, 0));
    case Op::Exp: {
      double v = std::exp(child(n->a, 0));
      if (!std::isfinite(v)) throw DomainError("exp overflow", join_path(path));
      return v;
    }
    case Op::Sqrt: {
      double v = child(n->a, 0);
      if (v < 0.0) throw DomainError("sqrt of negative value", join_path(path));
      return std::sqrt(v);
    }
    case Op::Add: return child(n->a, 0) + child(n->b, 1);
    case Op::Sub: return child(n->a, 0) - child(n->b, 1);
    case Op::Mul: return child(n->a, 0) * child(n->b, 1);
    case Op::Div: {
      double num = child(n->a, 0);
      double den = child(n->b, 1);
      if (den == 0.0) throw DomainError("division by zero", join_path(path));
      double v = num / den;
      if (!std::isfinite(v)) throw DomainError("non-finite quotient", join_path(path));
      return v;
    }
    case Op::Pow: {
      double base = child(n->a, 0);
      if (base == 0.0 && n->exponent < 0)
        throw DomainError("zero raised to a negative power", join_path(path));
      return int_pow(base, n->exponent);
    }
  }
  return 0.0;
}

}  // namespace

double eval(const Expr& e, std::span<const double> p) {
  if (e.max_variable() >= static_cast<int>(p.size()))
    throw DimensionError("point has arity " + std::to_string(p.size()) +
                         " but expression uses x" + std::to_string(e.max_variable() + 1));
  std::vector<int> path;
  return eval_node(e.raw(), p, path);
}

// ---------------------------------------------------------------------------
// Differentiation and substitution

namespace {

class Rewriter {
 public:
  explicit Rewriter(std::function<Expr(const Expr&, Rewriter&)> rule) : rule_(std::move(rule)) {}
  Expr operator()(const Expr& e) {
    auto it = cache_.find(e.raw());
    if (it != cache_.end()) return it->second;
    Expr out = rule_(e, *this);
    cache_.emplace(e.raw(), out);
    keep_.push_back(e);  // pins raw pointers used as keys
    return out;
  }

 private:
  std::function<Expr(const Expr&, Rewriter&)> rule_;
  std::unordered_map<const Node*, Expr> cache_;
  std::vector<Expr> keep_;
};

}  // namespace

Expr diff(const Expr& root, int index) {
  Rewriter d([index](const Expr& e, Rewriter& self) -> Expr {
    switch (e.op()) {
      case Op::Const: return Expr(0.0);
      case Op::Var: return Expr(e.variable_index() == index ? 1.0 : 0.0);
      case Op::Neg: return -self(e.child(0));
      case Op::Sin: return Expr::cos(e.child(0)) * self(e.child(0));
      case Op::Cos: return -(Expr::sin(e.child(0)) * self(e.child(0)));
      case Op::Exp: return e * self(e.child(0));
      case Op::Sqrt: return self(e.child(0)) / (Expr(2.0) * e);
      case Op::Add: return self(e.child(0)) + self(e.child(1));
      case Op::Sub: return self(e.child(0)) - self(e.child(1));
      case Op::Mul: {
        Expr a = e.child(0), b = e.child(1);
        return self(a) * b + a * self(b);
      }
      case Op::Div: {
        Expr a = e.child(0), b = e.child(1);
        return (self(a) * b - a * self(b)) / Expr::pow(b, 2);
      }
      case Op::Pow: {
        int k = e.exponent();
        Expr a = e.child(0);
        return Expr(static_cast<double>(k)) * Expr::pow(a, k - 1) * self(a);
      }
    }
    return Expr(0.0);
  });
  return d(root);
}

namespace {

Expr rebuild(const Expr& e, const Expr& a, const Expr& b) {
  switch (e.op()) {
    case Op::Neg: return -a;
    case Op::Sin: return Expr::sin(a);
    case Op::Cos: return Expr::cos(a);
    case Op::Exp: return Expr::exp(a);
    case Op::Sqrt: return Expr::sqrt(a);
    case Op::Pow: return Expr::pow(a, e.exponent());
    case Op::Add: return a + b;
    case Op::Sub: return a - b;
    case Op::Mul: return a * b;
    case Op::Div: return a / b;
    default: return e;
  }
}

}  // namespace

Expr substitute(const Expr& root, int index, double value) {
  Rewriter s([index, value](const Expr& e, Rewriter& self) -> Expr {
    if (e.op() == Op::Var) return e.variable_index() == index ? Expr(value) : e;
    if (e.op() == Op::Const) return e;
    Expr a = self(e.child(0));
    Expr b = e.child_count() == 2 ? self(e.child(1)) : Expr();
    return rebuild(e, a, b);
  });
  return s(root);
}

bool structurally_negated(const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant()) return a.constant_value() == -b.constant_value();
  if (a.op() == Op::Neg && a.child(0).structurally_equal(b)) return true;
  if (b.op() == Op::Neg && b.child(0).structurally_equal(a)) return true;
  if (a.op() != b.op()) return false;
  switch (a.op()) {
    case Op::Sub:
      if (a.child(0).structurally_equal(b.child(1)) && a.child(1).structurally_equal(b.child(0)))
        return true;
      [[fallthrough]];
    case Op::Add:
      return structurally_negated(a.child(0), b.child(0)) &&
             structurally_negated(a.child(1), b.child(1));
    case Op::Mul:
    case Op::Div:
      return (structurally_negated(a.child(0), b.child(0)) &&
              a.child(1).structurally_equal(b.child(1))) ||
             (a.op() == Op::Mul && a.child(0).structurally_equal(b.child(0)) &&
              structurally_negated(a.child(1), b.child(1)));
    default: return false;
  }
}

// ---------------------------------------------------------------------------
// VField

VField::VField(int dim, std::vector<Expr> components)
    : dim_(dim), components_(std::move(components)) {
  if (dim_ <= 0) throw DimensionError("vector field dimension must be positive");
  if (static_cast<int>(components_.size()) != dim_)
    throw DimensionError("vector field of dimension " + std::to_string(dim_) + " given " +
                         std::to_string(components_.size()) + " components");
  for (const auto& c : components_)
    if (c.max_variable() >= dim_)
      throw DimensionError("component uses x" + std::to_string(c.max_variable() + 1) +
                           " in dimension " + std::to_string(dim_));
}

VField VField::zero(int dim) { return VField(dim, std::vector<Expr>(dim)); }

VField VField::coordinate(int dim, int index) {
  std::vector<Expr> c(dim);
  c.at(index) = Expr(1.0);
  return VField(dim, std::move(c));
}

VField VField::parse(std::string_view text, int dim) {
  std::vector<Expr> parts;
  int depth = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i < text.size() && text[i] == '(') ++depth;
    if (i < text.size() && text[i] == ')') --depth;
    if (i == text.size() || (text[i] == ',' && depth == 0)) {
      try {
        parts.push_back(parse_expr(text.substr(start, i - start), dim));
      } catch (const ParseError& e) {
        throw ParseError("component " + std::to_string(parts.size() + 1) + ": " + e.what(),
                         start + e.offset());
      }
      start = i + 1;
    }
  }
  if (static_cast<int>(parts.size()) != dim)
    throw DimensionError("expected " + std::to_string(dim) + " components, got " +
                         std::to_string(parts.size()));
  return VField(dim, std::move(parts));
}

bool VField::is_structurally_zero() const {
  for (const auto& c : components_)
    if (!c.is_zero()) return false;
  return true;
}

std::string VField::to_string() const {
  std::string out;
  for (std::size_t k = 0; k < components_.size(); ++k) {
    if (k) out += ", ";
    out += components_[k].to_string();
  }
  return out;
}

std::vector<double> VField::eval(std::span<const double> p) const {
  if (static_cast<int>(p.size()) != dim_)
    throw DimensionError("point arity does not match field dimension");
  std::vector<double> v(dim_);
  for (int k = 0; k < dim_; ++k) v[k] = ccgeo::eval(components_[k], p);
  return v;
}

VField VField::scaled(const Expr& factor) const {
  std::vector<Expr> c;
  c.reserve(dim_);
  for (const auto& e : components_) c.push_back(factor * e);
  return VField(dim_, std::move(c));
}

VField VField::operator+(const VField& other) const {
  if (other.dim_ != dim_) throw DimensionError("adding fields of different dimensions");
  std::vector<Expr> c;
  for (int k = 0; k < dim_; ++k) c.push_back(components_[k] + other.components_[k]);
  return VField(dim_, std::move(c));
}

VField VField::operator-(const VField& other) const {
  if (other.dim_ != dim_) throw DimensionError("subtracting fields of different dimensions");
  std::vector<Expr> c;
  for (int k = 0; k < dim_; ++k) c.push_back(components_[k] - other.components_[k]);
  return VField(dim_, std::move(c));
}

bool VField::structurally_equal(const VField& other) const {
  if (other.dim_ != dim_) return false;
  for (int k = 0; k < dim_; ++k)
    if (!components_[k].structurally_equal(other.components_[k])) return false;
  return true;
}

bool VField::structurally_negated(const VField& other) const {
  if (other.dim_ != dim_) return false;
  for (int k = 0; k < dim_; ++k)
    if (!ccgeo::structurally_negated(components_[k], other.components_[k])) return false;
  return true;
}

VField lie_bracket(const VField& x, const VField& y) {
  if (x.dim() != y.dim())
    throw DimensionError("lie_bracket of fields with dimensions " + std::to_string(x.dim()) +
                         " and " + std::to_string(y.dim()));
  const int n = x.dim();
  std::vector<Expr> c(n);
  for (int k = 0; k < n; ++k) {
    Expr forward, backward;
    for (int i = 0; i < n; ++i) {
      forward = forward + x[i] * diff(y[k], i);
      backward = backward + y[i] * diff(x[k], i);
    }
    c[k] = forward - backward;
  }
  return VField(n, std::move(c));
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape(std::span<const Expr> outputs, int dim) : dim_(dim) {
  std::unordered_map<const Node*, std::int32_t> slot;
  std::vector<Expr> pins;

  std::function<std::int32_t(const Expr&, const std::string&)> emit =
      [&](const Expr& e, const std::string& path) -> std::int32_t {
    if (auto it = slot.find(e.raw()); it != slot.end()) return it->second;
    Instr ins{e.op(), -1, -1, 0.0};
    switch (e.op()) {
      case Op::Const: ins.value = e.constant_value(); break;
      case Op::Var: ins.value = e.variable_index(); break;
      case Op::Pow:
        ins.value = e.exponent();
        ins.a = emit(e.child(0), path + ".0");
        break;
      default:
        ins.a = emit(e.child(0), path + ".0");
        if (e.child_count() == 2) ins.b = emit(e.child(1), path + ".1");
    }
    auto id = static_cast<std::int32_t>(code_.size());
    code_.push_back(ins);
    paths_.push_back(path);
    slot.emplace(e.raw(), id);
    pins.push_back(e);
    return id;
  };

  for (std::size_t k = 0; k < outputs.size(); ++k) {
    if (outputs[k].max_variable() >= dim)
      throw DimensionError("tape output uses a variable beyond dimension " + std::to_string(dim));
    outputs_.push_back(emit(outputs[k], "out" + std::to_string(k)));
  }
}

void Tape::run(std::span<const double> p, std::span<double> out,
               std::span<double> scratch) const {
  double* r = scratch.data();
  const std::size_t count = code_.size();
  for (std::size_t i = 0; i < count; ++i) {
    const Instr& ins = code_[i];
    switch (ins.op) {
      case Op::Const: r[i] = ins.value; break;
      case Op::Var: r[i] = p[static_cast<std::size_t>(ins.value)]; break;
      case Op::Neg: r[i] = -r[ins.a]; break;
      case Op::Sin: r[i] = std::sin(r[ins.a]); break;
      case Op::Cos: r[i] = std::cos(r[ins.a]); break;
      case Op::Exp:
        r[i] = std::exp(r[ins.a]);
        if (!std::isfinite(r[i])) throw DomainError("exp overflow", paths_[i]);
        break;
      case Op::Sqrt:
        if (r[ins.a] < 0.0) throw DomainError("sqrt of negative value", paths_[i]);
        r[i] = std::sqrt(r[ins.a]);
        break;
      case Op::Add: r[i] = r[ins.a] + r[ins.b]; break;
      case Op::Sub: r[i] = r[ins.a] - r[ins.b]; break;
      case Op::Mul: r[i] = r[ins.a] * r[ins.b]; break;
      case Op::Div:
        if (r[ins.b] == 0.0) throw DomainError("division by zero", paths_[i]);
        r[i] = r[ins.a] / r[ins.b];
        if (!std::isfinite(r[i])) throw DomainError("non-finite quotient", paths_[i]);
        break;
      case Op::Pow: {
        int k = static_cast<int>(ins.value);
        if (r[ins.a] == 0.0 && k < 0) throw DomainError("zero raised to a negative power", paths_[i]);
        r[i] = int_pow(r[ins.a], k);
        break;
      }
    }
  }
  for (std::size_t k = 0; k < outputs_.size(); ++k) out[k] = r[outputs_[k]];
}

std::vector<double> Tape::run(std::span<const double> p) const {
  std::vector<double> scratch(scratch_size());
  std::vector<double> out(output_count());
  run(p, out, scratch);
  return out;
}

}  // namespace ccgeo
