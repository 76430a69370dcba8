#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <utility>
#include <vector>

#include "xilbench/error.hpp"

namespace xilbench {

/// Adjusted Rand index between two labelings of the same items.
template <typename A, typename B>
double adjusted_rand_index(const std::vector<A>& x, const std::vector<B>& y) {
    if (x.size() != y.size()) throw DimensionError("adjusted_rand_index: length mismatch");
    const double n = static_cast<double>(x.size());
    std::map<std::pair<A, B>, double> table;
    std::map<A, double> rows;
    std::map<B, double> cols;
    for (std::size_t i = 0; i < x.size(); ++i) {
        table[{x[i], y[i]}] += 1.0;
        rows[x[i]] += 1.0;
        cols[y[i]] += 1.0;
    }
    auto c2 = [](double v) { return v * (v - 1.0) / 2.0; };
    double sum_ij = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (const auto& [k, v] : table) sum_ij += c2(v);
    for (const auto& [k, v] : rows) sum_a += c2(v);
    for (const auto& [k, v] : cols) sum_b += c2(v);
    const double expected = sum_a * sum_b / c2(n);
    const double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) return 1.0;  // both partitions trivial
    return (sum_ij - expected) / (max_index - expected);
}

/// ROC AUC from scores of the positive class (Mann-Whitney with midranks).
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& positive) {
    if (scores.size() != positive.size()) throw DimensionError("roc_auc: length mismatch");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0, n_pos = 0.0, n_neg = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double mid = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t t = i; t < j; ++t)
            if (positive[order[t]]) rank_sum += mid;
        i = j;
    }
    for (int p : positive) (p ? n_pos : n_neg) += 1.0;
    if (n_pos == 0.0 || n_neg == 0.0) return 0.5;
    return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

}  // namespace xilbench
