#pragma once

// Arithmetic expressions in (t, x, u) for coefficients given as strings.
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := ('+' | '-') unary | power
//   power   := primary ('^' unary)?
//   primary := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "glab/error.hpp"

namespace glab {

class Expression {
 public:
  Expression() = default;

  /// Throws InvalidArgument with the offending column.
  static Expression parse(std::string_view text) {
    Parser p{text};
    Expression e;
    e.root_ = p.expr();
    p.skip();
    if (p.pos != text.size()) p.fail("unexpected '" + std::string(1, text[p.pos]) + "'");
    e.text_ = std::string(text);
    e.uses_ = p.uses;
    return e;
  }

  double operator()(double t, double x = 0.0, double u = 0.0) const {
    const double v[3] = {t, x, u};
    return eval(*root_, v);
  }

  bool uses_t() const noexcept { return uses_ & 1; }
  bool uses_x() const noexcept { return uses_ & 2; }
  bool uses_u() const noexcept { return uses_ & 4; }
  bool is_constant() const noexcept { return uses_ == 0; }
  const std::string& text() const noexcept { return text_; }
  explicit operator bool() const noexcept { return static_cast<bool>(root_); }

 private:
  enum class Op { num, var, neg, add, sub, mul, div, pow, call };
  enum class Fn { exp, log, sqrt, abs, sin, cos, tanh, pow, min, max };

  struct Node {
    Op op = Op::num;
    double value = 0.0;
    int var = 0;
    Fn fn = Fn::exp;
    std::vector<std::shared_ptr<const Node>> args;
  };
  using Ptr = std::shared_ptr<const Node>;

  static double eval(const Node& n, const double* v) {
    switch (n.op) {
      case Op::num:
        return n.value;
      case Op::var:
        return v[n.var];
      case Op::neg:
        return -eval(*n.args[0], v);
      case Op::add:
        return eval(*n.args[0], v) + eval(*n.args[1], v);
      case Op::sub:
        return eval(*n.args[0], v) - eval(*n.args[1], v);
      case Op::mul:
        return eval(*n.args[0], v) * eval(*n.args[1], v);
      case Op::div:
        return eval(*n.args[0], v) / eval(*n.args[1], v);
      case Op::pow:
        return std::pow(eval(*n.args[0], v), eval(*n.args[1], v));
      case Op::call: {
        const double a = eval(*n.args[0], v);
        switch (n.fn) {
          case Fn::exp: return std::exp(a);
          case Fn::log: return std::log(a);
          case Fn::sqrt: return std::sqrt(a);
          case Fn::abs: return std::abs(a);
          case Fn::sin: return std::sin(a);
          case Fn::cos: return std::cos(a);
          case Fn::tanh: return std::tanh(a);
          case Fn::pow: return std::pow(a, eval(*n.args[1], v));
          case Fn::min: return std::min(a, eval(*n.args[1], v));
          case Fn::max: return std::max(a, eval(*n.args[1], v));
        }
      }
    }
    return 0.0;
  }

  struct Parser {
    std::string_view s;
    std::size_t pos = 0;
    unsigned uses = 0;

    [[noreturn]] void fail(const std::string& what) const {
      throw InvalidArgument("expression '" + std::string(s) + "', column " + std::to_string(pos + 1) + ": " + what);
    }
    void skip() {
      while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }
    bool eat(char c) {
      skip();
      if (pos < s.size() && s[pos] == c) {
        ++pos;
        return true;
      }
      return false;
    }
    static Ptr make(Op op, std::vector<Ptr> args) {
      auto n = std::make_shared<Node>();
      n->op = op;
      n->args = std::move(args);
      return n;
    }

    Ptr expr() {
      Ptr l = term();
      for (;;) {
        if (eat('+')) l = make(Op::add, {l, term()});
        else if (eat('-')) l = make(Op::sub, {l, term()});
        else return l;
      }
    }
    Ptr term() {
      Ptr l = unary();
      for (;;) {
        if (eat('*')) l = make(Op::mul, {l, unary()});
        else if (eat('/')) l = make(Op::div, {l, unary()});
        else return l;
      }
    }
    Ptr unary() {
      if (eat('-')) return make(Op::neg, {unary()});
      if (eat('+')) return unary();
      return power();
    }
    Ptr power() {
      Ptr base = primary();
      if (eat('^')) return make(Op::pow, {base, unary()});
      return base;
    }
    Ptr primary() {
      skip();
      if (pos >= s.size()) fail("unexpected end of input");
      if (eat('(')) {
        Ptr e = expr();
        if (!eat(')')) fail("expected ')'");
        return e;
      }
      const char c = s[pos];
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return name();
      fail("unexpected '" + std::string(1, c) + "'");
    }
    Ptr number() {
      const std::string rest(s.substr(pos));
      char* end = nullptr;
      const double v = std::strtod(rest.c_str(), &end);
      if (end == rest.c_str()) fail("malformed number");
      pos += static_cast<std::size_t>(end - rest.c_str());
      auto n = std::make_shared<Node>();
      n->value = v;
      return n;
    }
    Ptr name() {
      const std::size_t start = pos;
      while (pos < s.size() && (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_')) ++pos;
      const std::string id(s.substr(start, pos - start));
      if (eat('(')) return call(id, start);
      auto n = std::make_shared<Node>();
      if (id == "t" || id == "x" || id == "u") {
        n->op = Op::var;
        n->var = id == "t" ? 0 : (id == "x" ? 1 : 2);
        uses |= 1u << n->var;
      } else if (id == "pi") {
        n->value = std::numbers::pi;
      } else if (id == "e") {
        n->value = std::numbers::e;
      } else {
        pos = start;
        fail("unknown name '" + id + "'");
      }
      return n;
    }
    Ptr call(const std::string& id, std::size_t start) {
      static const std::pair<const char*, Fn> table[] = {
          {"exp", Fn::exp}, {"log", Fn::log}, {"sqrt", Fn::sqrt}, {"abs", Fn::abs}, {"sin", Fn::sin},
          {"cos", Fn::cos}, {"tanh", Fn::tanh}, {"pow", Fn::pow}, {"min", Fn::min}, {"max", Fn::max}};
      auto n = std::make_shared<Node>();
      n->op = Op::call;
      bool found = false;
      for (const auto& [name, fn] : table)
        if (id == name) {
          n->fn = fn;
          found = true;
        }
      if (!found) {
        pos = start;
        fail("unknown function '" + id + "'");
      }
      n->args.push_back(expr());
      while (eat(',')) n->args.push_back(expr());
      if (!eat(')')) fail("expected ')'");
      const bool binary = n->fn == Fn::pow || n->fn == Fn::min || n->fn == Fn::max;
      if (n->args.size() != (binary ? 2u : 1u)) {
        pos = start;
        fail("'" + id + "' takes " + (binary ? "2" : "1") + " argument(s)");
      }
      return n;
    }
  };

  Ptr root_;
  std::string text_;
  unsigned uses_ = 0;
};

}  // namespace glab
