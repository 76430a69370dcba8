#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xilbench/numerics/matrix.hpp"

namespace xilbench {

struct EigenDecomposition {
    Vector values;   ///< ascending
    Matrix vectors;  ///< column i is the eigenvector of values[i]
};

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Eigenvectors are sign-normalized so their first non-negligible component is
/// positive. Eigenvalues that agree to within 1e-10 of the matrix scale are
/// treated as tied and ordered lexicographically by eigenvector, so the output
/// is fully deterministic.
inline EigenDecomposition sym_eig(const Matrix& m) {
    const std::size_t n = m.rows();
    if (m.cols() != n) throw DimensionError("sym_eig: matrix is not square");
    double scale = 0.0;
    for (double v : m.data()) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(m(i, j) - m(j, i)) > 1e-9 * std::max(1.0, scale))
                throw DimensionError("sym_eig: matrix is not symmetric");

    Matrix a = m;
    Matrix v = Matrix::identity(n);
    const double norm = m.frobenius();

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (std::sqrt(off) <= 1e-15 * norm || off == 0.0) break;

        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                auto rp = a.row(p);
                auto rq = a.row(q);
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = rp[k], aqk = rq[k];
                    rp[k] = c * apk - s * aqk;
                    rq[k] = s * apk + c * aqk;
                }
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    // sign normalization
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < n; ++k) {
            if (std::abs(v(k, j)) > 1e-12) {
                if (v(k, j) < 0.0)
                    for (std::size_t r = 0; r < n; ++r) v(r, j) = -v(r, j);
                break;
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });

    const double tie = 1e-10 * std::max(1.0, norm);
    auto lex_less = [&](std::size_t i, std::size_t j) {
        for (std::size_t k = 0; k < n; ++k) {
            if (v(k, i) < v(k, j) - 1e-12) return true;
            if (v(k, i) > v(k, j) + 1e-12) return false;
        }
        return false;
    };
    for (std::size_t start = 0; start < n;) {
        std::size_t end = start + 1;
        while (end < n && a(order[end], order[end]) - a(order[start], order[start]) <= tie) ++end;
        std::stable_sort(order.begin() + start, order.begin() + end, lex_less);
        start = end;
    }

    EigenDecomposition out{Vector(n), Matrix(n, n)};
    for (std::size_t j = 0; j < n; ++j) {
        out.values[j] = a(order[j], order[j]);
        for (std::size_t k = 0; k < n; ++k) out.vectors(k, j) = v(k, order[j]);
    }
    return out;
}

}  // namespace xilbench
