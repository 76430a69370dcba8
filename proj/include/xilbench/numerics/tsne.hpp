#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "xilbench/numerics/matrix.hpp"
#include "xilbench/numerics/rng.hpp"

namespace xilbench {

struct TsneOptions {
    double perplexity = 30.0;
    std::size_t iterations = 500;
    double exaggeration = 12.0;
    std::size_t exaggeration_iterations = 100;
    double learning_rate = 200.0;
    std::size_t momentum_switch = 250;
    std::uint64_t seed = 0;
};

struct TsneResult {
    Matrix coords;       ///< n x 2
    Vector kl_history;   ///< KL(P || Q) after every iteration, unexaggerated P
};

namespace detail {

/// Conditional affinities for one row, bisecting the Gaussian precision until
/// the row entropy matches log(perplexity). Returns false when the target lies
/// above the entropy reachable at precision zero.
inline bool row_affinities(const Matrix& d2, std::size_t i, double log_perp, std::span<double> out) {
    const std::size_t n = d2.rows();
    auto entropy_at = [&](double beta) {
        double min_d = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) min_d = std::min(min_d, d2(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out[j] = (j == i) ? 0.0 : std::exp(-beta * (d2(i, j) - min_d));
            sum += out[j];
        }
        double h = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out[j] /= sum;
            if (out[j] > 0.0) h -= out[j] * std::log(out[j]);
        }
        return h;
    };

    constexpr double tol = 1e-5;
    if (entropy_at(0.0) < log_perp - tol) return false;

    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 200; ++iter) {
        const double h = entropy_at(beta);
        if (std::abs(h - log_perp) < tol) return true;
        if (h > log_perp) {
            lo = beta;
            beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
        if (beta > 1e300) break;  // target below the tie-limited entropy floor
    }
    return true;
}

inline double kl_divergence(const Matrix& p, const Matrix& y) {
    const std::size_t n = p.rows();
    double z = 0.0;
    Matrix num(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = y(i, 0) - y(j, 0), dy = y(i, 1) - y(j, 1);
            const double q = 1.0 / (1.0 + dx * dx + dy * dy);
            num(i, j) = num(j, i) = q;
            z += 2.0 * q;
        }
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j || p(i, j) <= 0.0) continue;
            const double q = std::max(num(i, j) / z, 1e-300);
            kl += p(i, j) * std::log(p(i, j) / q);
        }
    return kl;
}

}  // namespace detail

/// Exact (O(n^2) per iteration) t-SNE over a precomputed distance matrix.
inline TsneResult tsne(const Matrix& distances, const TsneOptions& opt) {
    const std::size_t n = distances.rows();
    if (distances.cols() != n) throw DimensionError("tsne: distance matrix must be square");
    if (n < 2) throw ParameterError("tsne: need at least two points");
    if (!(opt.perplexity > 0.0) || opt.perplexity >= static_cast<double>(n))
        throw ParameterError("tsne: perplexity must be in (0, n)");

    Matrix d2(n, n);
    double max_d2 = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double v = distances(i, j);
            if (v < 0.0) throw ParameterError("tsne: negative distance");
            d2(i, j) = (i == j) ? 0.0 : v * v;
            max_d2 = std::max(max_d2, d2(i, j));
        }
    if (max_d2 > 0.0)
        for (double& v : d2.data()) v /= max_d2;

    Matrix p(n, n);
    const double log_perp = std::log(opt.perplexity);
    for (std::size_t i = 0; i < n; ++i)
        if (!detail::row_affinities(d2, i, log_perp, p.row(i)))
            throw ParameterError("tsne: perplexity " + std::to_string(opt.perplexity) +
                                 " cannot be bracketed for point " + std::to_string(i));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = std::max((p(i, j) + p(j, i)) / (2.0 * static_cast<double>(n)), 1e-12);
            p(i, j) = p(j, i) = v;
        }

    Rng rng(opt.seed);
    Matrix y(n, 2);
    for (double& v : y.data()) v = normal(rng, 0.0, 1e-4);
    Matrix update(n, 2), gains(n, 2, 1.0), grad(n, 2), num(n, n);

    TsneResult res;
    res.kl_history.reserve(opt.iterations);
    for (std::size_t iter = 0; iter < opt.iterations; ++iter) {
        const double exag = iter < opt.exaggeration_iterations ? opt.exaggeration : 1.0;
        const double momentum = iter < opt.momentum_switch ? 0.5 : 0.8;

        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                const double dx = y(i, 0) - y(j, 0), dy = y(i, 1) - y(j, 1);
                const double q = 1.0 / (1.0 + dx * dx + dy * dy);
                num(i, j) = num(j, i) = q;
                z += 2.0 * q;
            }
        for (std::size_t i = 0; i < n; ++i) {
            double gx = 0.0, gy = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double mult = (exag * p(i, j) - num(i, j) / z) * num(i, j);
                gx += mult * (y(i, 0) - y(j, 0));
                gy += mult * (y(i, 1) - y(j, 1));
            }
            grad(i, 0) = 4.0 * gx;
            grad(i, 1) = 4.0 * gy;
        }
        for (std::size_t t = 0; t < n * 2; ++t) {
            double& g = gains.data()[t];
            const double dy = grad.data()[t];
            double& u = update.data()[t];
            g = ((dy > 0.0) != (u > 0.0)) ? g + 0.2 : g * 0.8;
            g = std::max(g, 0.01);
            u = momentum * u - opt.learning_rate * g * dy;
            y.data()[t] += u;
        }
        for (std::size_t c = 0; c < 2; ++c) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += y(i, c);
            mean /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) y(i, c) -= mean;
        }
        res.kl_history.push_back(detail::kl_divergence(p, y));
    }
    res.coords = std::move(y);
    return res;
}

inline TsneResult tsne(const Matrix& distances, double perplexity, std::size_t iterations, std::uint64_t seed) {
    TsneOptions opt;
    opt.perplexity = perplexity;
    opt.iterations = iterations;
    opt.seed = seed;
    return tsne(distances, opt);
}

}  // namespace xilbench
