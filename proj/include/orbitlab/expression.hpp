#pragma once

// Expression AST for vector-field coefficient functions.
//
// Grammar (whitespace insensitive, variables 1-indexed x1..xn):
//   expr   := term (("+"|"-") term)*
//   term   := factor (("*"|"/") factor)*
//   factor := "-"? atom ("^" int)?
//   atom   := number | "x"int | fn "(" expr ")" | "(" expr ")"
//   fn     := "abs" | "exp" | "sign" | "sqrt"
//
// Every expression owns an almost-everywhere derivative: abs' = sign,
// sign' = 0, sqrt' = 1/(2 sqrt), applied formally. sign(0) = 0 and
// abs'(0) = 0 by convention; audits stay off the kink loci.

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace orbitlab {

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (byte " + std::to_string(offset) + ")"),
          offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

enum class NodeKind {
    Constant,
    Variable,
    Add,
    Sub,
    Mul,
    Div,
    Pow,   // integer exponent
    Abs,
    Exp,
    Sign,
    Sqrt
};

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
    NodeKind kind;
    double value = 0.0;   // Constant
    int index = 0;        // Variable (1-based)
    int exponent = 0;     // Pow
    NodePtr lhs, rhs;     // children; unary ops use lhs only
};

inline NodePtr make_constant(double v) {
    auto n = std::make_shared<Node>();
    n->kind = NodeKind::Constant;
    n->value = v;
    return n;
}

inline NodePtr make_variable(int idx) {
    auto n = std::make_shared<Node>();
    n->kind = NodeKind::Variable;
    n->index = idx;
    return n;
}

inline bool is_const(const NodePtr& n, double v) {
    return n->kind == NodeKind::Constant && n->value == v;
}

inline NodePtr make_binary(NodeKind k, NodePtr a, NodePtr b) {
    // Fold the identities that keep derivative trees small. Nothing fancier.
    if (a->kind == NodeKind::Constant && b->kind == NodeKind::Constant) {
        switch (k) {
        case NodeKind::Add: return make_constant(a->value + b->value);
        case NodeKind::Sub: return make_constant(a->value - b->value);
        case NodeKind::Mul: return make_constant(a->value * b->value);
        default: break;  // folding x/0 would hide an evaluation error
        }
    }
    if (k == NodeKind::Add) {
        if (is_const(a, 0.0)) return b;
        if (is_const(b, 0.0)) return a;
    }
    if (k == NodeKind::Sub && is_const(b, 0.0)) return a;
    if (k == NodeKind::Mul) {
        if (is_const(a, 0.0) || is_const(b, 0.0)) return make_constant(0.0);
        if (is_const(a, 1.0)) return b;
        if (is_const(b, 1.0)) return a;
    }
    if (k == NodeKind::Div && is_const(a, 0.0)) return make_constant(0.0);
    auto n = std::make_shared<Node>();
    n->kind = k;
    n->lhs = std::move(a);
    n->rhs = std::move(b);
    return n;
}

inline NodePtr make_unary(NodeKind k, NodePtr a) {
    auto n = std::make_shared<Node>();
    n->kind = k;
    n->lhs = std::move(a);
    return n;
}

inline NodePtr make_pow(NodePtr a, int e) {
    if (e == 0) return make_constant(1.0);
    if (e == 1) return a;
    auto n = std::make_shared<Node>();
    n->kind = NodeKind::Pow;
    n->exponent = e;
    n->lhs = std::move(a);
    return n;
}

inline double eval_node(const Node& n, std::span<const double> x) {
    switch (n.kind) {
    case NodeKind::Constant: return n.value;
    case NodeKind::Variable:
        if (n.index < 1 || static_cast<std::size_t>(n.index) > x.size())
            throw EvalError("variable x" + std::to_string(n.index) +
                            " out of range for dimension " + std::to_string(x.size()));
        return x[static_cast<std::size_t>(n.index - 1)];
    case NodeKind::Add: return eval_node(*n.lhs, x) + eval_node(*n.rhs, x);
    case NodeKind::Sub: return eval_node(*n.lhs, x) - eval_node(*n.rhs, x);
    case NodeKind::Mul: return eval_node(*n.lhs, x) * eval_node(*n.rhs, x);
    case NodeKind::Div: return eval_node(*n.lhs, x) / eval_node(*n.rhs, x);
    case NodeKind::Pow: {
        const double b = eval_node(*n.lhs, x);
        int e = n.exponent;
        const bool neg = e < 0;
        e = neg ? -e : e;
        double r = 1.0, base = b;
        while (e > 0) {  // square-and-multiply keeps rounding mild
            if (e & 1) r *= base;
            base *= base;
            e >>= 1;
        }
        return neg ? 1.0 / r : r;
    }
    case NodeKind::Abs: return std::abs(eval_node(*n.lhs, x));
    case NodeKind::Exp: return std::exp(eval_node(*n.lhs, x));
    case NodeKind::Sign: {
        const double v = eval_node(*n.lhs, x);
        return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
    }
    case NodeKind::Sqrt: return std::sqrt(eval_node(*n.lhs, x));
    }
    throw EvalError("corrupt expression node");
}

inline NodePtr diff_node(const NodePtr& n, int var) {
    switch (n->kind) {
    case NodeKind::Constant: return make_constant(0.0);
    case NodeKind::Variable: return make_constant(n->index == var ? 1.0 : 0.0);
    case NodeKind::Add:
        return make_binary(NodeKind::Add, diff_node(n->lhs, var), diff_node(n->rhs, var));
    case NodeKind::Sub:
        return make_binary(NodeKind::Sub, diff_node(n->lhs, var), diff_node(n->rhs, var));
    case NodeKind::Mul:
        return make_binary(NodeKind::Add,
                           make_binary(NodeKind::Mul, diff_node(n->lhs, var), n->rhs),
                           make_binary(NodeKind::Mul, n->lhs, diff_node(n->rhs, var)));
    case NodeKind::Div:
        // (u'v - uv') / v^2
        return make_binary(
            NodeKind::Div,
            make_binary(NodeKind::Sub,
                        make_binary(NodeKind::Mul, diff_node(n->lhs, var), n->rhs),
                        make_binary(NodeKind::Mul, n->lhs, diff_node(n->rhs, var))),
            make_pow(n->rhs, 2));
    case NodeKind::Pow:
        // k u^{k-1} u'
        return make_binary(NodeKind::Mul,
                           make_binary(NodeKind::Mul,
                                       make_constant(static_cast<double>(n->exponent)),
                                       make_pow(n->lhs, n->exponent - 1)),
                           diff_node(n->lhs, var));
    case NodeKind::Abs:
        return make_binary(NodeKind::Mul, make_unary(NodeKind::Sign, n->lhs),
                           diff_node(n->lhs, var));
    case NodeKind::Exp:
        return make_binary(NodeKind::Mul, make_unary(NodeKind::Exp, n->lhs),
                           diff_node(n->lhs, var));
    case NodeKind::Sign: return make_constant(0.0);
    case NodeKind::Sqrt:
        return make_binary(NodeKind::Div, diff_node(n->lhs, var),
                           make_binary(NodeKind::Mul, make_constant(2.0),
                                       make_unary(NodeKind::Sqrt, n->lhs)));
    }
    throw EvalError("corrupt expression node");
}

inline void kink_distance_node(const Node& n, std::span<const double> x, double& best) {
    if (n.kind == NodeKind::Abs || n.kind == NodeKind::Sign || n.kind == NodeKind::Sqrt) {
        const double arg = eval_node(*n.lhs, x);
        const double d = std::abs(arg);
        if (std::isfinite(d) && d < best) best = d;
    }
    if (n.lhs) kink_distance_node(*n.lhs, x, best);
    if (n.rhs) kink_distance_node(*n.rhs, x, best);
}

inline int max_var_node(const Node& n) {
    int m = n.kind == NodeKind::Variable ? n.index : 0;
    if (n.lhs) m = std::max(m, max_var_node(*n.lhs));
    if (n.rhs) m = std::max(m, max_var_node(*n.rhs));
    return m;
}

// Printer precedence: additive 0, multiplicative 1, factor/power 2.
inline int precedence(NodeKind k) {
    switch (k) {
    case NodeKind::Add:
    case NodeKind::Sub: return 0;
    case NodeKind::Mul:
    case NodeKind::Div: return 1;
    default: return 2;
    }
}

inline void print_node(const Node& n, std::ostringstream& out, int parent_prec);

inline void print_child(const NodePtr& c, std::ostringstream& out, int min_prec) {
    const bool parens = precedence(c->kind) < min_prec ||
                        (c->kind == NodeKind::Constant && c->value < 0.0 && min_prec > 0);
    if (parens) out << '(';
    print_node(*c, out, 0);
    if (parens) out << ')';
}

inline void print_node(const Node& n, std::ostringstream& out, int) {
    switch (n.kind) {
    case NodeKind::Constant: {
        std::ostringstream tmp;
        tmp.precision(17);
        tmp << n.value;
        out << tmp.str();
        return;
    }
    case NodeKind::Variable: out << 'x' << n.index; return;
    case NodeKind::Add:
        print_child(n.lhs, out, 0);
        out << " + ";
        print_child(n.rhs, out, 1);  // a - b + c must not reprint as a - (b + c)
        return;
    case NodeKind::Sub:
        print_child(n.lhs, out, 0);
        out << " - ";
        print_child(n.rhs, out, 1);
        return;
    case NodeKind::Mul:
        print_child(n.lhs, out, 1);
        out << "*";
        print_child(n.rhs, out, 2);
        return;
    case NodeKind::Div:
        print_child(n.lhs, out, 1);
        out << "/";
        print_child(n.rhs, out, 2);
        return;
    case NodeKind::Pow:
        print_child(n.lhs, out, 3);  // always parenthesize a compound base
        out << '^' << n.exponent;
        return;
    case NodeKind::Abs: out << "abs("; print_node(*n.lhs, out, 0); out << ')'; return;
    case NodeKind::Exp: out << "exp("; print_node(*n.lhs, out, 0); out << ')'; return;
    case NodeKind::Sign: out << "sign("; print_node(*n.lhs, out, 0); out << ')'; return;
    case NodeKind::Sqrt: out << "sqrt("; print_node(*n.lhs, out, 0); out << ')'; return;
    }
}

class Parser {
public:
    explicit Parser(std::string_view text) : text_(text) {}

    NodePtr parse() {
        auto e = parse_expr();
        skip_ws();
        if (pos_ != text_.size())
            throw ParseError("unexpected trailing input", pos_);
        return e;
    }

private:
    std::string_view text_;
    std::size_t pos_ = 0;

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_])))
            ++pos_;
    }

    bool consume(char c) {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    char peek() {
        skip_ws();
        return pos_ < text_.size() ? text_[pos_] : '\0';
    }

    NodePtr parse_expr() {
        auto lhs = parse_term();
        for (;;) {
            if (consume('+'))
                lhs = make_binary(NodeKind::Add, lhs, parse_term());
            else if (consume('-'))
                lhs = make_binary(NodeKind::Sub, lhs, parse_term());
            else
                return lhs;
        }
    }

    NodePtr parse_term() {
        auto lhs = parse_factor();
        for (;;) {
            if (consume('*'))
                lhs = make_binary(NodeKind::Mul, lhs, parse_factor());
            else if (consume('/'))
                lhs = make_binary(NodeKind::Div, lhs, parse_factor());
            else
                return lhs;
        }
    }

    NodePtr parse_factor() {
        const bool neg = consume('-');
        auto a = parse_atom();
        if (consume('^')) a = make_pow(a, parse_int());
        if (!neg) return a;
        if (a->kind == NodeKind::Constant) return make_constant(-a->value);
        return make_binary(NodeKind::Mul, make_constant(-1.0), a);
    }

    int parse_int() {
        skip_ws();
        std::size_t start = pos_;
        if (pos_ < text_.size() && (text_[pos_] == '-' || text_[pos_] == '+')) ++pos_;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_])))
            ++pos_;
        int value = 0;
        auto res = std::from_chars(text_.data() + start, text_.data() + pos_, value);
        if (res.ec != std::errc() || res.ptr != text_.data() + pos_ || pos_ == start)
            throw ParseError("expected integer exponent", start);
        return value;
    }

    NodePtr parse_atom() {
        skip_ws();
        if (pos_ >= text_.size()) throw ParseError("unexpected end of input", pos_);
        const char c = text_[pos_];
        if (c == '(') {
            ++pos_;
            auto e = parse_expr();
            if (!consume(')')) throw ParseError("expected ')'", pos_);
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c))) return parse_identifier();
        throw ParseError(std::string("unexpected character '") + c + "'", pos_);
    }

    NodePtr parse_number() {
        const std::size_t start = pos_;
        double value = 0.0;
        auto res = std::from_chars(text_.data() + start, text_.data() + text_.size(), value);
        if (res.ec != std::errc())
            throw ParseError("malformed number", start);
        pos_ = static_cast<std::size_t>(res.ptr - text_.data());
        return make_constant(value);
    }

    NodePtr parse_identifier() {
        const std::size_t start = pos_;
        while (pos_ < text_.size() && std::isalpha(static_cast<unsigned char>(text_[pos_])))
            ++pos_;
        const std::string_view word = text_.substr(start, pos_ - start);
        if (word == "x") {
            std::size_t dstart = pos_;
            while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_])))
                ++pos_;
            int idx = 0;
            auto res = std::from_chars(text_.data() + dstart, text_.data() + pos_, idx);
            if (res.ec != std::errc() || pos_ == dstart || idx < 1)
                throw ParseError("expected variable index after 'x'", dstart);
            return make_variable(idx);
        }
        NodeKind k;
        if (word == "abs") k = NodeKind::Abs;
        else if (word == "exp") k = NodeKind::Exp;
        else if (word == "sign") k = NodeKind::Sign;
        else if (word == "sqrt") k = NodeKind::Sqrt;
        else throw ParseError("unknown identifier '" + std::string(word) + "'", start);
        if (!consume('(')) throw ParseError("expected '(' after function name", pos_);
        auto arg = parse_expr();
        if (!consume(')')) throw ParseError("expected ')'", pos_);
        return make_unary(k, arg);
    }
};

}  // namespace detail

/// Immutable scalar expression over x1..xn with a formal a.e. derivative.
class Expression {
public:
    Expression() : root_(detail::make_constant(0.0)) {}
    explicit Expression(detail::NodePtr root) : root_(std::move(root)) {}

    static Expression parse(std::string_view text) {
        detail::Parser p(text);
        return Expression(p.parse());
    }
    static Expression constant(double v) { return Expression(detail::make_constant(v)); }
    static Expression variable(int index) { return Expression(detail::make_variable(index)); }

    /// Raw IEEE evaluation; non-finite values propagate to the caller.
    double operator()(std::span<const double> x) const { return detail::eval_node(*root_, x); }

    /// Evaluation that rejects a non-finite result.
    double evaluate(std::span<const double> x) const {
        const double v = (*this)(x);
        if (!std::isfinite(v))
            throw EvalError("non-finite value from '" + to_string() + "'");
        return v;
    }

    Expression derivative(int var) const { return Expression(detail::diff_node(root_, var)); }

    /// Distance of x to the nearest kink argument (|arg| over abs/sign/sqrt
    /// nodes); +inf when the expression is smooth.
    double kink_distance(std::span<const double> x) const {
        double best = std::numeric_limits<double>::infinity();
        detail::kink_distance_node(*root_, x, best);
        return best;
    }

    int max_variable() const { return detail::max_var_node(*root_); }

    std::string to_string() const {
        std::ostringstream out;
        detail::print_node(*root_, out, 0);
        return out.str();
    }

private:
    detail::NodePtr root_;
};

}  // namespace orbitlab
