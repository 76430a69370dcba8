#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <functional>
#include <span>
#include <vector>

#include "xilbench/numerics/matrix.hpp"

namespace xilbench::ad {

/// Append-only record of scalar operations for reverse-mode differentiation.
/// Each node keeps at most two parents with their local partials.
class Tape {
public:
    struct Node {
        int parent[2];
        double partial[2];
    };

    int push(int p0 = -1, double d0 = 0.0, int p1 = -1, double d1 = 0.0) {
        nodes_.push_back({{p0, p1}, {d0, d1}});
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::size_t size() const noexcept { return nodes_.size(); }
    void clear() { nodes_.clear(); }
    void reserve(std::size_t n) { nodes_.reserve(n); }

    /// Adjoints of every node with respect to `output`.
    std::vector<double> backward(int output) const {
        std::vector<double> adj(nodes_.size(), 0.0);
        adj[static_cast<std::size_t>(output)] = 1.0;
        for (int i = output; i >= 0; --i) {
            const double a = adj[static_cast<std::size_t>(i)];
            if (a == 0.0) continue;
            const Node& nd = nodes_[static_cast<std::size_t>(i)];
            if (nd.parent[0] >= 0) adj[static_cast<std::size_t>(nd.parent[0])] += a * nd.partial[0];
            if (nd.parent[1] >= 0) adj[static_cast<std::size_t>(nd.parent[1])] += a * nd.partial[1];
        }
        return adj;
    }

private:
    std::vector<Node> nodes_;
};

/// Scalar that records onto a tape. A Var with index -1 is a constant.
class Var {
public:
    Var() = default;
    Var(double v) : value_(v) {}  // NOLINT: implicit constants are intended
    Var(Tape* t, int index, double v) : tape_(t), index_(index), value_(v) {}

    static Var input(Tape& t, double v) { return Var(&t, t.push(), v); }

    double value() const noexcept { return value_; }
    int index() const noexcept { return index_; }
    Tape* tape() const noexcept { return tape_; }
    bool is_constant() const noexcept { return index_ < 0; }

    friend Var unary(const Var& x, double v, double dx) {
        if (x.is_constant()) return Var(v);
        return Var(x.tape_, x.tape_->push(x.index_, dx), v);
    }
    friend Var binary(const Var& x, const Var& y, double v, double dx, double dy) {
        if (x.is_constant() && y.is_constant()) return Var(v);
        if (x.is_constant()) return Var(y.tape_, y.tape_->push(y.index_, dy), v);
        if (y.is_constant()) return Var(x.tape_, x.tape_->push(x.index_, dx), v);
        return Var(x.tape_, x.tape_->push(x.index_, dx, y.index_, dy), v);
    }

    friend Var operator+(const Var& a, const Var& b) { return binary(a, b, a.value_ + b.value_, 1.0, 1.0); }
    friend Var operator-(const Var& a, const Var& b) { return binary(a, b, a.value_ - b.value_, 1.0, -1.0); }
    friend Var operator*(const Var& a, const Var& b) {
        return binary(a, b, a.value_ * b.value_, b.value_, a.value_);
    }
    friend Var operator/(const Var& a, const Var& b) {
        const double q = a.value_ / b.value_;
        return binary(a, b, q, 1.0 / b.value_, -q / b.value_);
    }
    friend Var operator-(const Var& a) { return unary(a, -a.value_, -1.0); }
    Var& operator+=(const Var& o) { return *this = *this + o; }
    Var& operator-=(const Var& o) { return *this = *this - o; }
    Var& operator*=(const Var& o) { return *this = *this * o; }

private:
    Tape* tape_ = nullptr;
    int index_ = -1;
    double value_ = 0.0;
};

template <std::floating_point R>
R value_of(R x) {
    return x;
}
inline double value_of(const Var& x) { return x.value(); }

inline Var exp(const Var& x) {
    const double e = std::exp(x.value());
    return unary(x, e, e);
}
inline Var log(const Var& x) { return unary(x, std::log(x.value()), 1.0 / x.value()); }
/// Subgradient 0 at the origin, so exactly-zero columns stay differentiable.
inline Var sqrt(const Var& x) {
    const double r = std::sqrt(x.value());
    return unary(x, r, r > 0.0 ? 0.5 / r : 0.0);
}
inline Var square(const Var& x) { return unary(x, x.value() * x.value(), 2.0 * x.value()); }
inline Var abs(const Var& x) {
    const double v = x.value();
    return unary(x, std::abs(v), v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
}
inline Var relu(const Var& x) { return unary(x, x.value() > 0.0 ? x.value() : 0.0, x.value() > 0.0 ? 1.0 : 0.0); }

// Plain scalars of any precision, so oracles can run in long double.
template <std::floating_point R>
R exp(R x) { return std::exp(x); }
template <std::floating_point R>
R log(R x) { return std::log(x); }
template <std::floating_point R>
R sqrt(R x) { return std::sqrt(x); }
template <std::floating_point R>
R square(R x) { return x * x; }
template <std::floating_point R>
R abs(R x) { return std::abs(x); }
template <std::floating_point R>
R relu(R x) { return x > R(0) ? x : R(0); }

/// Gradient of `output` with respect to `inputs` (all on the same tape).
inline std::vector<double> gradient(const Var& output, std::span<const Var> inputs) {
    std::vector<double> g(inputs.size(), 0.0);
    if (output.is_constant()) return g;
    const auto adj = output.tape()->backward(output.index());
    for (std::size_t i = 0; i < inputs.size(); ++i)
        if (!inputs[i].is_constant()) g[i] = adj[static_cast<std::size_t>(inputs[i].index())];
    return g;
}

// ---------------------------------------------------------------------------
// Vector vocabulary, generic over double and Var.

/// y = W x + b for a row-major W (rows x cols) given as a flat span.
template <typename T, typename U>
std::vector<T> affine(std::span<const T> w, std::size_t rows, std::size_t cols,
                      std::span<const U> x, std::span<const T> b) {
    if (w.size() != rows * cols || x.size() != cols || b.size() != rows)
        throw DimensionError("affine: shape mismatch");
    std::vector<T> y(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        T acc = b[r];
        for (std::size_t c = 0; c < cols; ++c) acc = acc + w[r * cols + c] * x[c];
        y[r] = acc;
    }
    return y;
}

template <typename T>
std::vector<T> relu(std::span<const T> x) {
    std::vector<T> y;
    y.reserve(x.size());
    for (const T& v : x) y.push_back(relu(v));
    return y;
}

template <typename T>
std::vector<T> softmax(std::span<const T> x) {
    auto m = value_of(x[0]);
    for (const T& v : x) m = std::max(m, value_of(v));
    std::vector<T> e;
    e.reserve(x.size());
    T sum = 0.0;
    for (const T& v : x) {
        e.push_back(exp(v - m));
        sum = sum + e.back();
    }
    for (T& v : e) v = v / sum;
    return e;
}

/// log-softmax via the max-shifted log-sum-exp.
template <typename T>
std::vector<T> log_softmax(std::span<const T> x) {
    auto m = value_of(x[0]);
    for (const T& v : x) m = std::max(m, value_of(v));
    T sum = 0.0;
    for (const T& v : x) sum = sum + exp(v - m);
    const T lse = log(sum) + m;
    std::vector<T> out;
    out.reserve(x.size());
    for (const T& v : x) out.push_back(v - lse);
    return out;
}

/// L2 norm of each column of the row block [row_begin, row_end) of W.
template <typename T>
std::vector<T> column_l2_norms(std::span<const T> w, std::size_t cols, std::size_t row_begin,
                               std::size_t row_end) {
    std::vector<T> out(cols);
    for (std::size_t c = 0; c < cols; ++c) {
        T acc = 0.0;
        for (std::size_t r = row_begin; r < row_end; ++r) acc = acc + square(w[r * cols + c]);
        out[c] = sqrt(acc);
    }
    return out;
}

template <typename T, typename U>
std::vector<T> hadamard(std::span<const T> a, std::span<const U> b) {
    if (a.size() != b.size()) throw DimensionError("hadamard: length mismatch");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

template <typename T>
T sum(std::span<const T> x) {
    T acc = 0.0;
    for (const T& v : x) acc = acc + v;
    return acc;
}

}  // namespace xilbench::ad

namespace xilbench {

/// Central finite differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate, at precision R.
template <std::floating_point R, typename F>
std::vector<R> central_differences(F&& f, std::vector<R> x, R h) {
    std::vector<R> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const R xi = x[i];
        x[i] = xi + h;
        const R up = f(x);
        x[i] = xi - h;
        const R down = f(x);
        x[i] = xi;
        g[i] = (up - down) / (R(2) * h);
    }
    return g;
}

inline Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
    return central_differences<double>(f, x, h);
}

}  // namespace xilbench
