#pragma once

#include <algorithm>
#include <numeric>

#include "xilbench/numerics/matrix.hpp"

namespace xilbench {

/// Squared Euclidean distances between the rows of `points`.
inline Matrix pairwise_sq_distances(const Matrix& points) {
    const std::size_t n = points.rows();
    Matrix d(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = squared_distance(points.row(i), points.row(j));
            d(i, j) = v;
            d(j, i) = v;
        }
    return d;
}

/// Binary k-nearest-neighbour adjacency, symmetrized by OR, zero diagonal.
/// Distance ties resolve toward the lower row index.
inline Matrix knn_graph(const Matrix& points, std::size_t k) {
    const std::size_t n = points.rows();
    if (k == 0 || k >= n)
        throw ParameterError("knn_graph: k must satisfy 0 < k < n (k=" + std::to_string(k) +
                             ", n=" + std::to_string(n) + ")");
    const Matrix d = pairwise_sq_distances(points);
    Matrix a(n, n);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i) {
        idx.resize(n);
        std::iota(idx.begin(), idx.end(), 0);
        idx.erase(idx.begin() + static_cast<std::ptrdiff_t>(i));
        std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                          [&](std::size_t x, std::size_t y) {
                              return d(i, x) < d(i, y) || (d(i, x) == d(i, y) && x < y);
                          });
        for (std::size_t t = 0; t < k; ++t) {
            a(i, idx[t]) = 1.0;
            a(idx[t], i) = 1.0;
        }
    }
    return a;
}

}  // namespace xilbench
