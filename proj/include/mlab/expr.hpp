#pragma once

// Scalar symbolic expressions in one variable x, closed under d/dx.
// Supported shapes: constants, x, unary minus, + - * /, integer powers,
// and exp/sin/cos/tanh. Division by a vanishing denominator is a domain
// error at evaluation time, never a silent NaN.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mlab {

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at offset " + std::to_string(offset) + ")"),
          offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

class DomainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ExprKind {
    Constant,
    Variable,
    Negate,
    Add,
    Sub,
    Mul,
    Div,
    Pow,   // integer exponent only
    Exp,
    Sin,
    Cos,
    Tanh,
};

class Expr {
    struct Node;
    using NodePtr = std::shared_ptr<const Node>;

    struct Node {
        ExprKind kind;
        double value = 0.0;   // Constant
        int exponent = 0;     // Pow
        NodePtr a, b;         // children; unary ops use a only
    };

    NodePtr node_;

    explicit Expr(NodePtr n) : node_(std::move(n)) {}

    static Expr make(ExprKind k, Expr a = Expr(), Expr b = Expr(), double v = 0.0, int e = 0) {
        auto n = std::make_shared<Node>();
        n->kind = k;
        n->value = v;
        n->exponent = e;
        n->a = a.node_;
        n->b = b.node_;
        return Expr(std::move(n));
    }

public:
    Expr() = default;

    bool empty() const { return node_ == nullptr; }
    ExprKind kind() const { return node_->kind; }
    double constant_value() const { return node_->value; }
    int exponent() const { return node_->exponent; }
    Expr child(int i = 0) const { return Expr(i == 0 ? node_->a : node_->b); }

    bool is_constant(double v) const {
        return node_->kind == ExprKind::Constant && node_->value == v;
    }
    bool is_constant() const { return node_->kind == ExprKind::Constant; }

    static Expr constant(double v) { return make(ExprKind::Constant, Expr(), Expr(), v); }
    static Expr variable() { return make(ExprKind::Variable); }

    // Constructors fold constants and drop additive/multiplicative identities.
    // No other algebraic rewriting happens, so the tree mirrors the source.
    static Expr neg(Expr a) {
        if (a.is_constant()) return constant(-a.constant_value());
        if (a.kind() == ExprKind::Negate) return a.child();
        return make(ExprKind::Negate, std::move(a));
    }
    static Expr add(Expr a, Expr b) {
        if (a.is_constant() && b.is_constant()) return constant(a.constant_value() + b.constant_value());
        if (a.is_constant(0.0)) return b;
        if (b.is_constant(0.0)) return a;
        return make(ExprKind::Add, std::move(a), std::move(b));
    }
    static Expr sub(Expr a, Expr b) {
        if (a.is_constant() && b.is_constant()) return constant(a.constant_value() - b.constant_value());
        if (b.is_constant(0.0)) return a;
        if (a.is_constant(0.0)) return neg(std::move(b));
        return make(ExprKind::Sub, std::move(a), std::move(b));
    }
    static Expr mul(Expr a, Expr b) {
        if (a.is_constant() && b.is_constant()) return constant(a.constant_value() * b.constant_value());
        if (a.is_constant(0.0) || b.is_constant(0.0)) return constant(0.0);
        if (a.is_constant(1.0)) return b;
        if (b.is_constant(1.0)) return a;
        if (a.is_constant(-1.0)) return neg(std::move(b));
        if (b.is_constant(-1.0)) return neg(std::move(a));
        return make(ExprKind::Mul, std::move(a), std::move(b));
    }
    static Expr div(Expr a, Expr b) {
        // 0/e -> 0 and folding may shrink the domain; values agree wherever
        // both sides are defined.
        if (b.is_constant(1.0)) return a;
        if (a.is_constant(0.0)) return constant(0.0);
        if (a.is_constant() && b.is_constant() && b.constant_value() != 0.0)
            return constant(a.constant_value() / b.constant_value());
        return make(ExprKind::Div, std::move(a), std::move(b));
    }
    static Expr pow(Expr a, int e) {
        if (e == 0) return constant(1.0);
        if (e == 1) return a;
        if (a.is_constant()) {
            double v = a.constant_value();
            if (v != 0.0 || e > 0) return constant(powi(v, e));
        }
        return make(ExprKind::Pow, std::move(a), Expr(), 0.0, e);
    }
    static Expr exp(Expr a) {
        if (a.is_constant()) return constant(std::exp(a.constant_value()));
        return make(ExprKind::Exp, std::move(a));
    }
    static Expr sin(Expr a) {
        if (a.is_constant()) return constant(std::sin(a.constant_value()));
        return make(ExprKind::Sin, std::move(a));
    }
    static Expr cos(Expr a) {
        if (a.is_constant()) return constant(std::cos(a.constant_value()));
        return make(ExprKind::Cos, std::move(a));
    }
    static Expr tanh(Expr a) {
        if (a.is_constant()) return constant(std::tanh(a.constant_value()));
        return make(ExprKind::Tanh, std::move(a));
    }

    static double powi(double x, int e) {
        if (e < 0) {
            if (x == 0.0) throw DomainError("zero raised to a negative power");
            return 1.0 / powi(x, -e);
        }
        double r = 1.0, base = x;
        for (unsigned n = static_cast<unsigned>(e); n != 0; n >>= 1) {
            if (n & 1) r *= base;
            base *= base;
        }
        return r;
    }

    double eval(double x) const {
        const Node& n = *node_;
        switch (n.kind) {
            case ExprKind::Constant: return n.value;
            case ExprKind::Variable: return x;
            case ExprKind::Negate: return -Expr(n.a).eval(x);
            case ExprKind::Add: return Expr(n.a).eval(x) + Expr(n.b).eval(x);
            case ExprKind::Sub: return Expr(n.a).eval(x) - Expr(n.b).eval(x);
            case ExprKind::Mul: return Expr(n.a).eval(x) * Expr(n.b).eval(x);
            case ExprKind::Div: {
                double den = Expr(n.b).eval(x);
                if (den == 0.0) throw DomainError("division by zero");
                return Expr(n.a).eval(x) / den;
            }
            case ExprKind::Pow: return powi(Expr(n.a).eval(x), n.exponent);
            case ExprKind::Exp: return std::exp(Expr(n.a).eval(x));
            case ExprKind::Sin: return std::sin(Expr(n.a).eval(x));
            case ExprKind::Cos: return std::cos(Expr(n.a).eval(x));
            case ExprKind::Tanh: return std::tanh(Expr(n.a).eval(x));
        }
        throw std::logic_error("corrupt expression node");
    }

    Expr derivative() const {
        const Node& n = *node_;
        Expr a(n.a), b(n.b);
        switch (n.kind) {
            case ExprKind::Constant: return constant(0.0);
            case ExprKind::Variable: return constant(1.0);
            case ExprKind::Negate: return neg(a.derivative());
            case ExprKind::Add: return add(a.derivative(), b.derivative());
            case ExprKind::Sub: return sub(a.derivative(), b.derivative());
            case ExprKind::Mul:
                return add(mul(a.derivative(), b), mul(a, b.derivative()));
            case ExprKind::Div:
                return div(sub(mul(a.derivative(), b), mul(a, b.derivative())),
                           pow(b, 2));
            case ExprKind::Pow:
                return mul(mul(constant(n.exponent), pow(a, n.exponent - 1)),
                           a.derivative());
            case ExprKind::Exp: return mul(exp(a), a.derivative());
            case ExprKind::Sin: return mul(cos(a), a.derivative());
            case ExprKind::Cos: return neg(mul(sin(a), a.derivative()));
            case ExprKind::Tanh:
                return mul(sub(constant(1.0), pow(tanh(a), 2)), a.derivative());
        }
        throw std::logic_error("corrupt expression node");
    }

    Expr derivative(int order) const {
        if (order < 0) throw std::invalid_argument("derivative order must be >= 0");
        Expr e = *this;
        for (int i = 0; i < order; ++i) e = e.derivative();
        return e;
    }

    // Dense coefficient vector when the expression is a polynomial in x,
    // nullopt otherwise. A function of a constant argument counts as a
    // constant. Division works only by a nonzero constant.
    std::optional<std::vector<double>> poly_coefficients() const {
        const Node& n = *node_;
        using V = std::vector<double>;
        auto lift = [](double v) { return V{v}; };
        auto trim = [](V c) {
            while (c.size() > 1 && c.back() == 0.0) c.pop_back();
            return c;
        };
        switch (n.kind) {
            case ExprKind::Constant: return lift(n.value);
            case ExprKind::Variable: return V{0.0, 1.0};
            case ExprKind::Negate: {
                auto c = Expr(n.a).poly_coefficients();
                if (!c) return std::nullopt;
                for (double& v : *c) v = -v;
                return c;
            }
            case ExprKind::Add:
            case ExprKind::Sub: {
                auto ca = Expr(n.a).poly_coefficients();
                auto cb = Expr(n.b).poly_coefficients();
                if (!ca || !cb) return std::nullopt;
                double s = n.kind == ExprKind::Add ? 1.0 : -1.0;
                if (cb->size() > ca->size()) ca->resize(cb->size(), 0.0);
                for (std::size_t i = 0; i < cb->size(); ++i) (*ca)[i] += s * (*cb)[i];
                return trim(std::move(*ca));
            }
            case ExprKind::Mul: {
                auto ca = Expr(n.a).poly_coefficients();
                auto cb = Expr(n.b).poly_coefficients();
                if (!ca || !cb) return std::nullopt;
                V out(ca->size() + cb->size() - 1, 0.0);
                if (out.size() > 4096) return std::nullopt;
                for (std::size_t i = 0; i < ca->size(); ++i)
                    for (std::size_t j = 0; j < cb->size(); ++j)
                        out[i + j] += (*ca)[i] * (*cb)[j];
                return trim(std::move(out));
            }
            case ExprKind::Div: {
                auto ca = Expr(n.a).poly_coefficients();
                auto cb = Expr(n.b).poly_coefficients();
                if (!ca || !cb) return std::nullopt;
                if (cb->size() != 1 || (*cb)[0] == 0.0) return std::nullopt;
                for (double& v : *ca) v /= (*cb)[0];
                return ca;
            }
            case ExprKind::Pow: {
                auto ca = Expr(n.a).poly_coefficients();
                if (!ca) return std::nullopt;
                if (n.exponent < 0) {
                    if (ca->size() == 1 && (*ca)[0] != 0.0)
                        return lift(powi((*ca)[0], n.exponent));
                    return std::nullopt;
                }
                if ((ca->size() - 1) * n.exponent > 4096) return std::nullopt;
                V out{1.0};
                for (int i = 0; i < n.exponent; ++i) {
                    V next(out.size() + ca->size() - 1, 0.0);
                    for (std::size_t a_ = 0; a_ < out.size(); ++a_)
                        for (std::size_t b_ = 0; b_ < ca->size(); ++b_)
                            next[a_ + b_] += out[a_] * (*ca)[b_];
                    out = std::move(next);
                }
                return trim(std::move(out));
            }
            case ExprKind::Exp:
            case ExprKind::Sin:
            case ExprKind::Cos:
            case ExprKind::Tanh: {
                auto ca = Expr(n.a).poly_coefficients();
                if (ca && ca->size() == 1) return lift(eval(0.0));
                return std::nullopt;
            }
        }
        return std::nullopt;
    }

    // Exact degree for polynomials (zero polynomial reports 0), nullopt for
    // anything genuinely non-polynomial.
    std::optional<int> poly_degree() const {
        auto c = poly_coefficients();
        if (!c) return std::nullopt;
        for (int i = static_cast<int>(c->size()) - 1; i >= 0; --i)
            if ((*c)[i] != 0.0) return i;
        return 0;
    }

    std::string to_string() const { return print(0); }

private:
    // Precedence: additive 1, multiplicative 2, unary minus 3, power 4.
    std::string print(int parent) const {
        const Node& n = *node_;
        auto wrap = [parent](int mine, std::string s) {
            return mine < parent ? "(" + std::move(s) + ")" : std::move(s);
        };
        switch (n.kind) {
            case ExprKind::Constant: {
                double v = n.value;
                char buf[64];
                std::snprintf(buf, sizeof buf, "%.17g", v);
                std::string s(buf);
                if (v < 0.0) return wrap(3, std::move(s));
                return s;
            }
            case ExprKind::Variable: return "x";
            case ExprKind::Negate: return wrap(3, "-" + Expr(n.a).print(3));
            case ExprKind::Add:
                return wrap(1, Expr(n.a).print(1) + " + " + Expr(n.b).print(2));
            case ExprKind::Sub:
                return wrap(1, Expr(n.a).print(1) + " - " + Expr(n.b).print(2));
            case ExprKind::Mul:
                return wrap(2, Expr(n.a).print(2) + "*" + Expr(n.b).print(3));
            case ExprKind::Div:
                return wrap(2, Expr(n.a).print(2) + "/" + Expr(n.b).print(4));
            case ExprKind::Pow:
                return wrap(4, Expr(n.a).print(5) + "^" + std::to_string(n.exponent));
            case ExprKind::Exp: return "exp(" + Expr(n.a).print(0) + ")";
            case ExprKind::Sin: return "sin(" + Expr(n.a).print(0) + ")";
            case ExprKind::Cos: return "cos(" + Expr(n.a).print(0) + ")";
            case ExprKind::Tanh: return "tanh(" + Expr(n.a).print(0) + ")";
        }
        throw std::logic_error("corrupt expression node");
    }

    friend class ExprParser;
};

// Recursive descent over:
//   expr   := term (('+'|'-') term)*
//   term   := factor (('*'|'/') factor)*
//   factor := '-' factor | base ('^' integer)?
//   base   := number | 'x' | func '(' expr ')' | '(' expr ')'
// Unary minus binds looser than '^' so "-x^5" is -(x^5).
class ExprParser {
public:
    explicit ExprParser(std::string src) : src_(std::move(src)) {}

    Expr parse() {
        Expr e = parse_expr();
        skip_ws();
        if (pos_ != src_.size())
            throw ParseError("unexpected trailing input", pos_);
        return e;
    }

private:
    std::string src_;
    std::size_t pos_ = 0;

    void skip_ws() {
        while (pos_ < src_.size() && (src_[pos_] == ' ' || src_[pos_] == '\t')) ++pos_;
    }
    bool peek(char c) {
        skip_ws();
        return pos_ < src_.size() && src_[pos_] == c;
    }
    bool consume(char c) {
        if (peek(c)) {
            ++pos_;
            return true;
        }
        return false;
    }

    Expr parse_expr() {
        Expr e = parse_term();
        for (;;) {
            if (consume('+')) e = Expr::add(e, parse_term());
            else if (consume('-')) e = Expr::sub(e, parse_term());
            else return e;
        }
    }

    Expr parse_term() {
        Expr e = parse_factor();
        for (;;) {
            if (consume('*')) e = Expr::mul(e, parse_factor());
            else if (consume('/')) e = Expr::div(e, parse_factor());
            else return e;
        }
    }

    Expr parse_factor() {
        if (consume('-')) return Expr::neg(parse_factor());
        Expr base = parse_base();
        if (consume('^')) {
            skip_ws();
            std::size_t at = pos_;
            bool negated = consume('-');
            skip_ws();
            std::size_t start = pos_;
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
            if (pos_ == start)
                throw ParseError("expected integer exponent after '^'", at);
            if (pos_ < src_.size() && (src_[pos_] == '.' || src_[pos_] == 'e' || src_[pos_] == 'E'))
                throw ParseError("exponent must be an integer", pos_);
            long v = std::stol(src_.substr(start, pos_ - start));
            if (v > 64 || v < -64)
                throw ParseError("exponent out of supported range [-64, 64]", start);
            return Expr::pow(base, static_cast<int>(negated ? -v : v));
        }
        return base;
    }

    Expr parse_base() {
        skip_ws();
        if (pos_ >= src_.size()) throw ParseError("unexpected end of input", pos_);
        char c = src_[pos_];
        if (c == '(') {
            ++pos_;
            Expr e = parse_expr();
            if (!consume(')')) throw ParseError("expected ')'", pos_);
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c))) {
            std::size_t start = pos_;
            while (pos_ < src_.size() && std::isalpha(static_cast<unsigned char>(src_[pos_]))) ++pos_;
            std::string name = src_.substr(start, pos_ - start);
            if (name == "x") return Expr::variable();
            Expr (*fn)(Expr) = nullptr;
            if (name == "exp") fn = &Expr::exp;
            else if (name == "sin") fn = &Expr::sin;
            else if (name == "cos") fn = &Expr::cos;
            else if (name == "tanh") fn = &Expr::tanh;
            if (!fn) throw ParseError("unknown function '" + name + "'", start);
            if (!consume('(')) throw ParseError("expected '(' after '" + name + "'", pos_);
            Expr arg = parse_expr();
            if (!consume(')')) throw ParseError("expected ')'", pos_);
            return fn(arg);
        }
        throw ParseError(std::string("unexpected character '") + c + "'", pos_);
    }

    Expr parse_number() {
        std::size_t start = pos_;
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
        if (pos_ < src_.size() && src_[pos_] == '.') {
            ++pos_;
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
        }
        if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
            std::size_t mark = pos_++;
            if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
            std::size_t digits = pos_;
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
            if (pos_ == digits) pos_ = mark;  // "2e" is "2" followed by junk
        }
        if (pos_ == start) throw ParseError("expected number", start);
        try {
            return Expr::constant(std::stod(src_.substr(start, pos_ - start)));
        } catch (const std::exception&) {
            throw ParseError("malformed number", start);
        }
    }
};

inline Expr parse_expr(const std::string& src) { return ExprParser(src).parse(); }

// Flat postfix program for tight loops; semantics match Expr::eval exactly.
class CompiledExpr {
    enum class Op : std::uint8_t {
        PushConst, PushX, Neg, Add, Sub, Mul, Div, Pow, Exp, Sin, Cos, Tanh
    };
    struct Instr {
        Op op;
        double value = 0.0;
        int exponent = 0;
    };
    std::vector<Instr> prog_;
    std::size_t stack_need_ = 1;

    void compile(const Expr& e, std::size_t depth) {
        stack_need_ = std::max(stack_need_, depth + 2);
        switch (e.kind()) {
            case ExprKind::Constant:
                prog_.push_back({Op::PushConst, e.constant_value(), 0});
                return;
            case ExprKind::Variable:
                prog_.push_back({Op::PushX, 0.0, 0});
                return;
            case ExprKind::Negate:
                compile(e.child(), depth);
                prog_.push_back({Op::Neg, 0.0, 0});
                return;
            case ExprKind::Add:
            case ExprKind::Sub:
            case ExprKind::Mul:
            case ExprKind::Div: {
                compile(e.child(0), depth);
                compile(e.child(1), depth + 1);
                Op op = e.kind() == ExprKind::Add   ? Op::Add
                        : e.kind() == ExprKind::Sub ? Op::Sub
                        : e.kind() == ExprKind::Mul ? Op::Mul
                                                    : Op::Div;
                prog_.push_back({op, 0.0, 0});
                return;
            }
            case ExprKind::Pow:
                compile(e.child(), depth);
                prog_.push_back({Op::Pow, 0.0, e.exponent()});
                return;
            case ExprKind::Exp:
                compile(e.child(), depth);
                prog_.push_back({Op::Exp, 0.0, 0});
                return;
            case ExprKind::Sin:
                compile(e.child(), depth);
                prog_.push_back({Op::Sin, 0.0, 0});
                return;
            case ExprKind::Cos:
                compile(e.child(), depth);
                prog_.push_back({Op::Cos, 0.0, 0});
                return;
            case ExprKind::Tanh:
                compile(e.child(), depth);
                prog_.push_back({Op::Tanh, 0.0, 0});
                return;
        }
        throw std::logic_error("corrupt expression node");
    }

public:
    CompiledExpr() = default;
    explicit CompiledExpr(const Expr& e) { compile(e, 0); }

    double operator()(double x) const {
        double stack[64];
        if (stack_need_ > 64) throw std::logic_error("expression too deep to compile");
        std::size_t top = 0;
        for (const Instr& in : prog_) {
            switch (in.op) {
                case Op::PushConst: stack[top++] = in.value; break;
                case Op::PushX: stack[top++] = x; break;
                case Op::Neg: stack[top - 1] = -stack[top - 1]; break;
                case Op::Add: --top; stack[top - 1] += stack[top]; break;
                case Op::Sub: --top; stack[top - 1] -= stack[top]; break;
                case Op::Mul: --top; stack[top - 1] *= stack[top]; break;
                case Op::Div:
                    --top;
                    if (stack[top] == 0.0) throw DomainError("division by zero");
                    stack[top - 1] /= stack[top];
                    break;
                case Op::Pow: stack[top - 1] = Expr::powi(stack[top - 1], in.exponent); break;
                case Op::Exp: stack[top - 1] = std::exp(stack[top - 1]); break;
                case Op::Sin: stack[top - 1] = std::sin(stack[top - 1]); break;
                case Op::Cos: stack[top - 1] = std::cos(stack[top - 1]); break;
                case Op::Tanh: stack[top - 1] = std::tanh(stack[top - 1]); break;
            }
        }
        return stack[0];
    }
};

}  // namespace mlab
