#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

// Scalar reverse-mode automatic differentiation.
//
// A Var is either a constant (no tape) or a handle to a node recorded on a
// Tape. Nodes store their value and up to two (parent, local partial) pairs.
// Nodes are appended after their parents, so walking the store backwards is a
// reverse topological order and backward() touches every node exactly once.
//
// Generic numeric code is written as templates over the scalar type and
// instantiated with either double or Var.

namespace pbody::ad {

class Tape;

class Var {
public:
    Var() = default;
    Var(double v) : value_(v) {}  // NOLINT: implicit constants are intended

    double value() const { return value_; }
    bool is_constant() const { return tape_ == nullptr; }
    std::int32_t index() const { return index_; }
    Tape* tape() const { return tape_; }

private:
    friend class Tape;
    Var(Tape* tape, std::int32_t index, double value) : tape_(tape), index_(index), value_(value) {}

    Tape* tape_ = nullptr;
    std::int32_t index_ = -1;
    double value_ = 0.0;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Declares an independent variable.
    Var input(double value);
    std::vector<Var> inputs(std::span<const double> values);

    // Records a node whose parents are a (and b). Constant parents are dropped.
    Var record(double value, const Var& a, double da);
    Var record(double value, const Var& a, double da, const Var& b, double db);

    // Adjoints of every node for d(root)/d(node). Throws std::invalid_argument
    // if root is a constant or belongs to another tape.
    std::vector<double> backward(const Var& root) const;

    // d(root)/d(v) for each v in wrt (0 for constants).
    std::vector<double> gradient(const Var& root, std::span<const Var> wrt) const;

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }
    void reserve(std::size_t n) { nodes_.reserve(n); }

private:
    struct Node {
        std::int32_t a;
        std::int32_t b;
        double da;
        double db;
    };
    std::vector<Node> nodes_;
};

Tape* common_tape(const Var& a, const Var& b);

// Arithmetic.
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator/=(Var& a, const Var& b) { return a = a / b; }

// Comparisons act on values only; they are used for branch selection.
inline bool operator<(const Var& a, const Var& b) { return a.value() < b.value(); }
inline bool operator>(const Var& a, const Var& b) { return a.value() > b.value(); }
inline bool operator<=(const Var& a, const Var& b) { return a.value() <= b.value(); }
inline bool operator>=(const Var& a, const Var& b) { return a.value() >= b.value(); }

// Elementary functions. log and sqrt throw std::domain_error on non-positive
// arguments; division throws on a zero divisor.
Var exp(const Var& x);
Var log(const Var& x);
Var sqrt(const Var& x);
Var sin(const Var& x);
Var cos(const Var& x);
// Clamp to [lo, hi]; derivative 1 strictly inside, 0 on or outside the bounds.
Var clamp(const Var& x, double lo, double hi);

// Overloads so templated code can call the same names for double.
inline double clamp(double x, double lo, double hi) { return x < lo ? lo : (x > hi ? hi : x); }
inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.value(); }

// max |analytic - numeric| / (|analytic| + eps) over components.
inline constexpr double kRelErrorEps = 1e-12;
double relative_error(double analytic, double numeric);

struct GradCheckResult {
    std::vector<double> analytic;
    std::vector<double> numeric;
    std::vector<double> rel_error;
    double max_rel_error = 0.0;
};

using ScalarFn = std::function<Var(std::span<const Var>)>;

// Compares the tape gradient of f at x with central differences of step
// `step`. f is evaluated once on tape inputs and 2n times on constants.
GradCheckResult grad_check(const ScalarFn& f, std::span<const double> x, double step);

// Central-difference gradient of a plain function.
std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::span<const double> x, double step);

}  // namespace pbody::ad
