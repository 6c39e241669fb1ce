#include "qlut/expr.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <stdexcept>

namespace qlut {
namespace {

struct Parser {
  const std::string& s;
  size_t pos = 0;

  explicit Parser(const std::string& text) : s(text) {}

  void skip_ws() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  }

  [[noreturn]] void fail(const std::string& what) {
    throw std::invalid_argument("eval_expr: " + what + " at position " +
                                std::to_string(pos) + " in \"" + s + "\"");
  }

  bool eat(char c) {
    skip_ws();
    if (pos < s.size() && s[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }

  double parse_expr() {
    double v = parse_term();
    for (;;) {
      if (eat('+')) {
        v += parse_term();
      } else if (eat('-')) {
        v -= parse_term();
      } else {
        return v;
      }
    }
  }

  double parse_term() {
    double v = parse_unary();
    for (;;) {
      if (eat('*')) {
        v *= parse_unary();
      } else if (eat('/')) {
        v /= parse_unary();
      } else {
        return v;
      }
    }
  }

  // Unary minus binds looser than ^, so -2^2 = -(2^2); exponents may carry
  // their own sign (2^-3). ^ is right associative.
  double parse_unary() {
    if (eat('-')) return -parse_unary();
    if (eat('+')) return parse_unary();
    return parse_power();
  }

  double parse_power() {
    double base = parse_atom();
    if (eat('^')) return std::pow(base, parse_unary());
    return base;
  }

  double parse_atom() {
    skip_ws();
    if (pos >= s.size()) fail("unexpected end of expression");
    if (s[pos] == '(') {
      ++pos;
      double v = parse_expr();
      if (!eat(')')) fail("missing ')'");
      return v;
    }
    if (std::isalpha(static_cast<unsigned char>(s[pos]))) {
      size_t start = pos;
      while (pos < s.size() && std::isalpha(static_cast<unsigned char>(s[pos]))) ++pos;
      std::string name = s.substr(start, pos - start);
      if (name == "pi" || name == "PI" || name == "Pi") return M_PI;
      pos = start;
      fail("unknown identifier \"" + name + "\"");
    }
    // Numeric literal; strtod handles decimals and exponents.
    const char* begin = s.c_str() + pos;
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin) fail("expected a number");
    pos += static_cast<size_t>(end - begin);
    return v;
  }
};

}  // namespace

double eval_expr(const std::string& text) {
  Parser p(text);
  double v = p.parse_expr();
  p.skip_ws();
  if (p.pos != text.size()) p.fail("trailing characters");
  return v;
}

}  // namespace qlut
