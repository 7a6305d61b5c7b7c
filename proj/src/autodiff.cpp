#include "pbody/autodiff.hpp"

#include <stdexcept>

namespace pbody::ad {

Var Tape::input(double value)
{
    nodes_.push_back({-1, -1, 0.0, 0.0});
    return Var(this, static_cast<std::int32_t>(nodes_.size() - 1), value);
}

std::vector<Var> Tape::inputs(std::span<const double> values)
{
    std::vector<Var> out;
    out.reserve(values.size());
    for (double v : values) out.push_back(input(v));
    return out;
}

Var Tape::record(double value, const Var& a, double da)
{
    nodes_.push_back({a.is_constant() ? -1 : a.index(), -1, da, 0.0});
    return Var(this, static_cast<std::int32_t>(nodes_.size() - 1), value);
}

Var Tape::record(double value, const Var& a, double da, const Var& b, double db)
{
    nodes_.push_back({a.is_constant() ? -1 : a.index(), b.is_constant() ? -1 : b.index(), da, db});
    return Var(this, static_cast<std::int32_t>(nodes_.size() - 1), value);
}

std::vector<double> Tape::backward(const Var& root) const
{
    if (root.is_constant() || root.tape() != this) {
        throw std::invalid_argument("backward: root is not a node of this tape");
    }
    std::vector<double> adj(nodes_.size(), 0.0);
    adj[root.index()] = 1.0;
    for (std::int32_t i = root.index(); i >= 0; --i) {
        const double g = adj[i];
        if (g == 0.0) continue;
        const Node& n = nodes_[i];
        if (n.a >= 0) adj[n.a] += n.da * g;
        if (n.b >= 0) adj[n.b] += n.db * g;
    }
    return adj;
}

std::vector<double> Tape::gradient(const Var& root, std::span<const Var> wrt) const
{
    std::vector<double> out(wrt.size(), 0.0);
    if (root.is_constant()) return out;
    const auto adj = backward(root);
    for (std::size_t i = 0; i < wrt.size(); ++i) {
        if (!wrt[i].is_constant() && wrt[i].tape() == this) out[i] = adj[wrt[i].index()];
    }
    return out;
}

Tape* common_tape(const Var& a, const Var& b)
{
    if (a.tape() && b.tape() && a.tape() != b.tape()) {
        throw std::invalid_argument("operands recorded on different tapes");
    }
    return a.tape() ? a.tape() : b.tape();
}

namespace {

Var unary(const Var& x, double value, double d)
{
    if (x.is_constant()) return Var(value);
    return x.tape()->record(value, x, d);
}

Var binary(const Var& a, const Var& b, double value, double da, double db)
{
    Tape* t = common_tape(a, b);
    if (!t) return Var(value);
    return t->record(value, a, da, b, db);
}

}  // namespace

Var operator+(const Var& a, const Var& b) { return binary(a, b, a.value() + b.value(), 1.0, 1.0); }
Var operator-(const Var& a, const Var& b) { return binary(a, b, a.value() - b.value(), 1.0, -1.0); }
Var operator*(const Var& a, const Var& b) { return binary(a, b, a.value() * b.value(), b.value(), a.value()); }

Var operator/(const Var& a, const Var& b)
{
    if (b.value() == 0.0) throw std::domain_error("division by zero");
    const double inv = 1.0 / b.value();
    const double q = a.value() * inv;
    return binary(a, b, q, inv, -q * inv);
}

Var operator-(const Var& a) { return unary(a, -a.value(), -1.0); }

Var exp(const Var& x)
{
    const double e = std::exp(x.value());
    return unary(x, e, e);
}

Var log(const Var& x)
{
    if (!(x.value() > 0.0)) throw std::domain_error("log of non-positive value");
    return unary(x, std::log(x.value()), 1.0 / x.value());
}

Var sqrt(const Var& x)
{
    if (!(x.value() > 0.0)) throw std::domain_error("sqrt of non-positive value");
    const double s = std::sqrt(x.value());
    return unary(x, s, 0.5 / s);
}

Var sin(const Var& x) { return unary(x, std::sin(x.value()), std::cos(x.value())); }
Var cos(const Var& x) { return unary(x, std::cos(x.value()), -std::sin(x.value())); }

Var clamp(const Var& x, double lo, double hi)
{
    const double v = x.value();
    if (v <= lo) return unary(x, lo, 0.0);
    if (v >= hi) return unary(x, hi, 0.0);
    return unary(x, v, 1.0);
}

double relative_error(double analytic, double numeric)
{
    return std::abs(analytic - numeric) / (std::abs(analytic) + kRelErrorEps);
}

std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::span<const double> x, double step)
{
    std::vector<double> xp(x.begin(), x.end());
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0 = xp[i];
        xp[i] = x0 + step;
        const double fp = f(xp);
        xp[i] = x0 - step;
        const double fm = f(xp);
        xp[i] = x0;
        g[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

GradCheckResult grad_check(const ScalarFn& f, std::span<const double> x, double step)
{
    GradCheckResult r;
    {
        Tape tape;
        const auto in = tape.inputs(x);
        const Var y = f(in);
        r.analytic = y.is_constant() ? std::vector<double>(x.size(), 0.0) : tape.gradient(y, in);
    }
    r.numeric = central_difference(
        [&](std::span<const double> p) {
            std::vector<Var> c(p.begin(), p.end());
            return f(c).value();
        },
        x, step);
    r.rel_error.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        r.rel_error[i] = relative_error(r.analytic[i], r.numeric[i]);
        r.max_rel_error = std::max(r.max_rel_error, r.rel_error[i]);
    }
    return r;
}

}  // namespace pbody::ad
