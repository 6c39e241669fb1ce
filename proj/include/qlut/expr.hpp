// Tiny arithmetic expression evaluator for config numerics.
// Grammar: + - * / ^ (right-assoc), unary minus, parentheses, decimal and
// scientific literals, and the constant pi. "5/16 - pi/1000" -> 0.30935...
#pragma once

#include <string>

namespace qlut {

// Evaluates the expression or throws std::invalid_argument naming the
// offending position.
double eval_expr(const std::string& text);

}  // namespace qlut
