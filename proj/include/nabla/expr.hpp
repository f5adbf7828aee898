#pragma once

// Small complex-valued expression language used by scenario files:
//   + - * / ^, unary minus, parentheses, exp log sqrt sin cos, x1..xn, i, decimal literals.
// '^' is right associative and binds tighter than unary minus.

#include <cctype>
#include <complex>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "nabla/errors.hpp"
#include "nabla/grid.hpp"

namespace nabla {

class Expr {
 public:
  Expr() = default;

  static Expr parse(const std::string& text, int max_dim = 16) {
    Parser p{text, 0, max_dim};
    Expr e;
    e.root_ = p.expression();
    p.skip();
    if (p.pos != text.size()) p.error("unexpected trailing input");
    e.text_ = text;
    e.max_var_ = p.max_var;
    return e;
  }

  cplx operator()(const double* x) const { return eval(*root_, x); }

  const std::string& text() const { return text_; }
  /// Largest coordinate index referenced (0 when constant).
  int max_var() const { return max_var_; }
  bool valid() const { return static_cast<bool>(root_); }

 private:
  enum class Op { num, imag, var, add, sub, mul, div, pow, neg, exp, log, sqrt, sin, cos };

  struct Node {
    Op op;
    double value = 0;
    int var = 0;
    std::shared_ptr<Node> a, b;
  };
  using P = std::shared_ptr<Node>;

  static P make(Op op, P a = nullptr, P b = nullptr) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->a = std::move(a);
    n->b = std::move(b);
    return n;
  }

  struct Parser {
    const std::string& s;
    std::size_t pos;
    int max_dim;
    int max_var = 0;

    [[noreturn]] void error(const std::string& msg) const {
      fail(ErrorKind::config_error, "expression '" + s + "' at offset " + std::to_string(pos) + ": " + msg);
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

    P expression() {
      P lhs = term();
      for (;;) {
        if (eat('+')) lhs = make(Op::add, lhs, term());
        else if (eat('-')) lhs = make(Op::sub, lhs, term());
        else return lhs;
      }
    }
    P term() {
      P lhs = unary();
      for (;;) {
        if (eat('*')) lhs = make(Op::mul, lhs, unary());
        else if (eat('/')) lhs = make(Op::div, lhs, unary());
        else return lhs;
      }
    }
    P unary() {
      if (eat('-')) return make(Op::neg, unary());
      if (eat('+')) return unary();
      return power();
    }
    P power() {
      P base = primary();
      if (eat('^')) return make(Op::pow, base, unary());
      return base;
    }
    P primary() {
      skip();
      if (pos >= s.size()) error("unexpected end of input");
      char c = s[pos];
      if (c == '(') {
        ++pos;
        P e = expression();
        if (!eat(')')) error("expected ')'");
        return e;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        std::size_t used = 0;
        double v = 0;
        try {
          v = std::stod(s.substr(pos), &used);
        } catch (const std::exception&) {
          error("bad number");
        }
        pos += used;
        auto n = make(Op::num);
        n->value = v;
        return n;
      }
      if (std::isalpha(static_cast<unsigned char>(c))) {
        std::size_t start = pos;
        while (pos < s.size() && std::isalnum(static_cast<unsigned char>(s[pos]))) ++pos;
        std::string id = s.substr(start, pos - start);
        if (id == "i") return make(Op::imag);
        static const std::pair<const char*, Op> funcs[] = {
            {"exp", Op::exp}, {"log", Op::log}, {"sqrt", Op::sqrt}, {"sin", Op::sin}, {"cos", Op::cos}};
        for (const auto& [name, op] : funcs)
          if (id == name) {
            if (!eat('(')) error("expected '(' after " + id);
            P arg = expression();
            if (!eat(')')) error("expected ')'");
            return make(op, arg);
          }
        if (id.size() >= 2 && id[0] == 'x') {
          bool digits = true;
          for (std::size_t k = 1; k < id.size(); ++k) digits &= std::isdigit(static_cast<unsigned char>(id[k])) != 0;
          if (digits) {
            int v = std::stoi(id.substr(1));
            if (v < 1 || v > max_dim) error("coordinate " + id + " out of range");
            max_var = std::max(max_var, v);
            auto n = make(Op::var);
            n->var = v - 1;
            return n;
          }
        }
        pos = start;
        error("unknown identifier '" + id + "'");
      }
      error(std::string("unexpected character '") + c + "'");
    }
  };

  static cplx ipow_c(cplx b, long e) {
    if (e < 0) return 1.0 / ipow_c(b, -e);
    cplx r = 1.0;
    while (e) {
      if (e & 1) r *= b;
      b *= b;
      e >>= 1;
    }
    return r;
  }

  static cplx eval(const Node& n, const double* x) {
    switch (n.op) {
      case Op::num: return n.value;
      case Op::imag: return cplx(0, 1);
      case Op::var: return x[n.var];
      case Op::add: return eval(*n.a, x) + eval(*n.b, x);
      case Op::sub: return eval(*n.a, x) - eval(*n.b, x);
      case Op::mul: return eval(*n.a, x) * eval(*n.b, x);
      case Op::div: return eval(*n.a, x) / eval(*n.b, x);
      case Op::neg: return -eval(*n.a, x);
      case Op::exp: return std::exp(eval(*n.a, x));
      case Op::log: return std::log(eval(*n.a, x));
      case Op::sqrt: return std::sqrt(eval(*n.a, x));
      case Op::sin: return std::sin(eval(*n.a, x));
      case Op::cos: return std::cos(eval(*n.a, x));
      case Op::pow: {
        cplx b = eval(*n.a, x), e = eval(*n.b, x);
        if (e.imag() == 0 && e.real() == std::round(e.real()) && std::abs(e.real()) < 64)
          return ipow_c(b, static_cast<long>(e.real()));
        if (b.imag() == 0 && b.real() > 0 && e.imag() == 0) return std::pow(b.real(), e.real());
        return std::pow(b, e);
      }
    }
    return 0;
  }

  P root_;
  std::string text_;
  int max_var_ = 0;
};

}  // namespace nabla
