#pragma once

#include <limits>

#include "xilbench/numerics/matrix.hpp"
#include "xilbench/numerics/rng.hpp"

namespace xilbench {

struct KMeansResult {
    std::vector<std::size_t> assignments;
    double inertia = 0.0;
    Matrix centroids;
    Vector inertia_history;  ///< inertia after each assignment step
};

/// Lloyd's k-means with k-means++ seeding. Ties go to the lowest cluster id;
/// a cluster that loses all its points keeps its previous centroid.
inline KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                           std::size_t max_iter = 300) {
    const std::size_t n = points.rows(), dim = points.cols();
    if (n == 0) throw ParameterError("kmeans: empty input");
    if (k == 0 || k > n) throw ParameterError("kmeans: k must be in [1, n]");

    Rng rng(seed);
    Matrix centroids(k, dim);
    std::vector<bool> chosen(n, false);
    std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    chosen[first] = true;
    std::copy(points.row(first).begin(), points.row(first).end(), centroids.row(0).begin());
    Vector nearest(n, std::numeric_limits<double>::infinity());
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], squared_distance(points.row(i), centroids.row(c - 1)));
            total += nearest[i];
        }
        std::size_t pick = n;
        if (total > 0.0) {
            double r = uniform(rng) * total;
            for (std::size_t i = 0; i < n; ++i) {
                r -= nearest[i];
                if (r < 0.0 && nearest[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
            if (pick == n)
                for (std::size_t i = n; i-- > 0;)
                    if (nearest[i] > 0.0) {
                        pick = i;
                        break;
                    }
        }
        if (pick == n)  // all remaining points coincide with chosen centres
            for (std::size_t i = 0; i < n; ++i)
                if (!chosen[i]) {
                    pick = i;
                    break;
                }
        chosen[pick] = true;
        std::copy(points.row(pick).begin(), points.row(pick).end(), centroids.row(c).begin());
    }

    KMeansResult res;
    res.assignments.assign(n, 0);
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        bool changed = false;
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = squared_distance(points.row(i), centroids.row(0));
            for (std::size_t c = 1; c < k; ++c) {
                const double dd = squared_distance(points.row(i), centroids.row(c));
                if (dd < best_d) {
                    best_d = dd;
                    best = c;
                }
            }
            if (iter == 0 || res.assignments[i] != best) changed = true;
            res.assignments[i] = best;
            inertia += best_d;
        }
        res.inertia_history.push_back(inertia);
        res.inertia = inertia;
        if (!changed) break;

        Matrix sums(k, dim);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto dst = sums.row(res.assignments[i]);
            auto src = points.row(i);
            for (std::size_t j = 0; j < dim; ++j) dst[j] += src[j];
            ++counts[res.assignments[i]];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            for (std::size_t j = 0; j < dim; ++j)
                centroids(c, j) = sums(c, j) / static_cast<double>(counts[c]);
        }
    }
    res.centroids = std::move(centroids);
    return res;
}

}  // namespace xilbench
