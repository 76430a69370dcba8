#include <gtest/gtest.h>

#include <complex>
#include <numbers>

#include "xilbench/numerics/autodiff.hpp"
#include "xilbench/numerics/dft.hpp"
#include "xilbench/numerics/eig.hpp"
#include "xilbench/numerics/kmeans.hpp"
#include "xilbench/numerics/knn.hpp"
#include "xilbench/numerics/metrics.hpp"
#include "xilbench/numerics/tsne.hpp"

using namespace xilbench;

namespace {

Matrix random_symmetric(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) m(i, j) = m(j, i) = normal(rng);
    return m;
}

Matrix blobs(std::size_t per_blob, double gap, std::uint64_t seed) {
    Rng rng(seed);
    Matrix pts(2 * per_blob, 2);
    for (std::size_t i = 0; i < 2 * per_blob; ++i) {
        const double off = i < per_blob ? 0.0 : gap;
        pts(i, 0) = off + normal(rng, 0.0, 0.3);
        pts(i, 1) = normal(rng, 0.0, 0.3);
    }
    return pts;
}

// Direct O(N^2) transform, written independently of the separable version.
std::vector<std::complex<double>> naive_dft(const Grid2D& g) {
    const std::size_t h = g.height(), w = g.width();
    std::vector<std::complex<double>> out(h * w);
    for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v) {
            std::complex<double> acc = 0.0;
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    const double ph = -2.0 * std::numbers::pi *
                                      (static_cast<double>(u * y) / static_cast<double>(h) +
                                       static_cast<double>(v * x) / static_cast<double>(w));
                    acc += g.at(y, x) * std::complex<double>(std::cos(ph), std::sin(ph));
                }
            out[u * w + v] = acc;
        }
    return out;
}

}  // namespace

TEST(SymEig, IdentityAndDiagonal) {
    const auto id = sym_eig(Matrix::identity(3));
    for (double v : id.values) EXPECT_NEAR(v, 1.0, 1e-12);

    Matrix d(2, 2);
    d(0, 0) = 5.0;
    d(1, 1) = 2.0;
    const auto e = sym_eig(d);
    EXPECT_NEAR(e.values[0], 2.0, 1e-12);
    EXPECT_NEAR(e.values[1], 5.0, 1e-12);
    EXPECT_NEAR(std::abs(e.vectors(1, 0)), 1.0, 1e-12);
    EXPECT_NEAR(std::abs(e.vectors(0, 1)), 1.0, 1e-12);
}

TEST(SymEig, ReconstructionTraceOrthonormality) {
    for (std::size_t n : {8u, 24u, 64u}) {
        const Matrix m = random_symmetric(n, 40 + n);
        const auto e = sym_eig(m);
        const double scale = m.frobenius();
        Matrix rec(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < n; ++k) s += e.vectors(i, k) * e.values[k] * e.vectors(j, k);
                rec(i, j) = s;
            }
        double err = 0.0, trace = 0.0, sum = 0.0;
        for (std::size_t i = 0; i < n * n; ++i) err = std::max(err, std::abs(rec.data()[i] - m.data()[i]));
        EXPECT_LE(err, 1e-6 * scale) << n;
        for (std::size_t i = 0; i < n; ++i) trace += m(i, i);
        for (double v : e.values) sum += v;
        EXPECT_NEAR(sum, trace, 1e-6 * std::max(1.0, std::abs(trace)));
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) {
                double d = 0.0;
                for (std::size_t k = 0; k < n; ++k) d += e.vectors(k, a) * e.vectors(k, b);
                EXPECT_NEAR(d, a == b ? 1.0 : 0.0, 1e-6);
            }
        for (std::size_t i = 1; i < n; ++i) EXPECT_LE(e.values[i - 1], e.values[i]);
    }
}

TEST(SymEig, RejectsBadInput) {
    EXPECT_THROW(sym_eig(Matrix(2, 3)), DimensionError);
    Matrix a(2, 2);
    a(0, 1) = 1.0;
    EXPECT_THROW(sym_eig(a), DimensionError);
}

TEST(SymEig, Deterministic) {
    const Matrix m = random_symmetric(10, 3);
    const auto a = sym_eig(m), b = sym_eig(m);
    EXPECT_EQ(a.values, b.values);
    EXPECT_EQ(a.vectors, b.vectors);
}

TEST(Dft, ConstantGridIsDcOnly) {
    const double c = 0.7;
    const auto out = dft2_logmag(Grid2D(4, 4, 1, c));
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x)
            EXPECT_NEAR(out.at(y, x), (y == 2 && x == 2) ? std::log1p(16.0 * c) : 0.0, 1e-12);
}

TEST(Dft, MatchesDirectSummation) {
    Rng rng(5);
    Grid2D g(6, 5);
    for (double& v : g.data()) v = uniform(rng);
    const auto fast = dft2(g);
    const auto slow = naive_dft(g);
    for (std::size_t i = 0; i < fast.size(); ++i) EXPECT_LT(std::abs(fast[i] - slow[i]), 1e-9);
}

TEST(Dft, CosinePeaksOnHorizontalAxis) {
    const std::size_t n = 8;
    Grid2D g(n, n);
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x)
            g.at(y, x) = std::cos(2.0 * std::numbers::pi * static_cast<double>(x) / static_cast<double>(n));
    const auto slow = naive_dft(g);
    const auto out = dft2_logmag(g);
    // shifted coordinates: zero frequency at (4,4); v = 1 and v = n-1 land at x = 5 and x = 3
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const std::size_t u = (y + n / 2) % n, v = (x + n / 2) % n;
            EXPECT_NEAR(out.at(y, x), std::log1p(std::abs(slow[u * n + v])), 1e-9);
        }
    EXPECT_NEAR(out.at(4, 5), std::log1p(32.0), 1e-9);
    EXPECT_NEAR(out.at(4, 3), std::log1p(32.0), 1e-9);
    EXPECT_NEAR(out.at(4, 4), 0.0, 1e-9);
}

TEST(Dft, ShiftInvariantMagnitude) {
    Rng rng(9);
    Grid2D g(8, 8), shifted(8, 8);
    for (double& v : g.data()) v = uniform(rng);
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) shifted.at((y + 3) % 8, (x + 5) % 8) = g.at(y, x);
    const auto a = dft2_logmag(g), b = dft2_logmag(shifted);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-9);
}

TEST(Dft, Parseval) {
    Rng rng(11);
    Grid2D g(7, 9);
    for (double& v : g.data()) v = normal(rng);
    const auto f = dft2(g);
    double lhs = 0.0, rhs = 0.0;
    for (const auto& z : f) lhs += std::norm(z);
    for (double v : g.data()) rhs += v * v;
    rhs *= static_cast<double>(g.size());
    EXPECT_NEAR(lhs, rhs, 1e-6 * rhs);
}

TEST(Dft, RejectsMultiChannel) {
    EXPECT_THROW(dft2_logmag(Grid2D(4, 4, 2)), ChannelError);
}

TEST(Knn, CollinearMiddleConnectsBothEnds) {
    Matrix pts(3, 1, {0.0, 1.0, 2.0});
    const auto a = knn_graph(pts, 1);
    EXPECT_EQ(a(1, 0), 1.0);
    EXPECT_EQ(a(1, 2), 1.0);
    EXPECT_EQ(a(0, 2), 0.0);
}

TEST(Knn, BlockDiagonalForSeparatedBlobs) {
    const auto pts = blobs(10, 50.0, 2);
    const auto a = knn_graph(pts, 3);
    for (std::size_t i = 0; i < 20; ++i) {
        EXPECT_EQ(a(i, i), 0.0);
        for (std::size_t j = 0; j < 20; ++j) {
            EXPECT_EQ(a(i, j), a(j, i));
            if ((i < 10) != (j < 10)) {
                EXPECT_EQ(a(i, j), 0.0);
            }
        }
    }
}

TEST(Knn, SymmetricAndErrors) {
    Rng rng(1);
    Matrix pts(30, 4);
    for (double& v : pts.data()) v = normal(rng);
    const auto a = knn_graph(pts, 5);
    EXPECT_EQ(a, a.transpose());
    EXPECT_THROW(knn_graph(pts, 30), ParameterError);
    EXPECT_THROW(knn_graph(pts, 0), ParameterError);
}

TEST(KMeans, KEqualsNGivesZeroInertia) {
    const auto pts = blobs(3, 5.0, 4);
    const auto r = kmeans(pts, 6, 1);
    EXPECT_NEAR(r.inertia, 0.0, 1e-12);
    std::vector<std::size_t> sorted = r.assignments;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(KMeans, MatchesExhaustiveTwoPartition) {
    const auto pts = blobs(6, 4.0, 8);
    const std::size_t n = pts.rows();
    // exhaustive oracle: best split over all 2^(n-1) labelings
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_mask = 0;
    for (std::uint32_t mask = 1; mask < (1u << (n - 1)); ++mask) {
        double cost = 0.0;
        for (int side = 0; side < 2; ++side) {
            double cx = 0.0, cy = 0.0;
            std::size_t cnt = 0;
            for (std::size_t i = 0; i < n; ++i)
                if (((mask >> i) & 1u) == static_cast<std::uint32_t>(side)) {
                    cx += pts(i, 0);
                    cy += pts(i, 1);
                    ++cnt;
                }
            cx /= static_cast<double>(cnt);
            cy /= static_cast<double>(cnt);
            for (std::size_t i = 0; i < n; ++i)
                if (((mask >> i) & 1u) == static_cast<std::uint32_t>(side))
                    cost += (pts(i, 0) - cx) * (pts(i, 0) - cx) + (pts(i, 1) - cy) * (pts(i, 1) - cy);
        }
        if (cost < best) best = cost, best_mask = mask;
    }
    const auto r = kmeans(pts, 2, 3);
    EXPECT_NEAR(r.inertia, best, 1e-9);
    std::vector<int> oracle(n), got(n);
    for (std::size_t i = 0; i < n; ++i) {
        oracle[i] = static_cast<int>((best_mask >> i) & 1u);
        got[i] = static_cast<int>(r.assignments[i]);
    }
    EXPECT_DOUBLE_EQ(adjusted_rand_index(oracle, got), 1.0);
}

TEST(KMeans, DeterministicAndMonotone) {
    Rng rng(2);
    Matrix pts(60, 3);
    for (double& v : pts.data()) v = normal(rng);
    const auto a = kmeans(pts, 4, 17), b = kmeans(pts, 4, 17);
    EXPECT_EQ(a.assignments, b.assignments);
    for (std::size_t i = 1; i < a.inertia_history.size(); ++i)
        EXPECT_LE(a.inertia_history[i], a.inertia_history[i - 1] + 1e-12);
}

TEST(KMeans, Errors) {
    EXPECT_THROW(kmeans(Matrix(0, 2), 1, 0), ParameterError);
    EXPECT_THROW(kmeans(Matrix(3, 2), 4, 0), ParameterError);
}

TEST(KMeans, DuplicatePointsTieToLowestCluster) {
    Matrix pts(4, 1, {1.0, 1.0, 1.0, 1.0});
    const auto r = kmeans(pts, 2, 0);
    for (auto a : r.assignments) EXPECT_EQ(a, 0u);
}

TEST(Tsne, EquidistantTriangle) {
    Matrix d(3, 3, 1.0);
    for (std::size_t i = 0; i < 3; ++i) d(i, i) = 0.0;
    // Scale is free here, so the shape settles only after the embedding stops growing.
    const auto r = tsne(d, 1.5, 1000, 4);
    double dist[3];
    for (std::size_t k = 0; k < 3; ++k) {
        const std::size_t i = k, j = (k + 1) % 3;
        dist[k] = std::hypot(r.coords(i, 0) - r.coords(j, 0), r.coords(i, 1) - r.coords(j, 1));
    }
    const double lo = *std::min_element(dist, dist + 3), hi = *std::max_element(dist, dist + 3);
    EXPECT_LE(hi, 1.15 * lo);
}

TEST(Tsne, TwoClustersAndKlDecrease) {
    const auto pts = blobs(15, 30.0, 6);
    const auto d2 = pairwise_sq_distances(pts);
    Matrix d(d2.rows(), d2.cols());
    for (std::size_t i = 0; i < d.data().size(); ++i) d.data()[i] = std::sqrt(d2.data()[i]);
    const auto r = tsne(d, 5.0, 500, 12);
    double intra = 0.0, inter = 0.0;
    std::size_t ni = 0, nx = 0;
    for (std::size_t i = 0; i < 30; ++i)
        for (std::size_t j = i + 1; j < 30; ++j) {
            const double dd = std::hypot(r.coords(i, 0) - r.coords(j, 0), r.coords(i, 1) - r.coords(j, 1));
            if ((i < 15) == (j < 15)) intra += dd, ++ni;
            else inter += dd, ++nx;
        }
    EXPECT_GT(inter / static_cast<double>(nx), intra / static_cast<double>(ni));
    ASSERT_EQ(r.kl_history.size(), 500u);
    EXPECT_LE(r.kl_history.back(), r.kl_history[49]);
}

TEST(Tsne, DeterministicAndPerplexityErrors) {
    const auto pts = blobs(8, 3.0, 1);
    const auto d2 = pairwise_sq_distances(pts);
    const auto a = tsne(d2, 4.0, 120, 7), b = tsne(d2, 4.0, 120, 7);
    EXPECT_EQ(a.coords, b.coords);
    EXPECT_THROW(tsne(d2, 16.0, 10, 0), ParameterError);
    EXPECT_THROW(tsne(d2, 15.5, 10, 0), ParameterError);
}

TEST(FiniteDiff, AnalyticCases) {
    auto sq = [](const Vector& x) { return x[0] * x[0] + x[1] * x[1]; };
    auto g = finite_diff_grad(sq, {1.0, 2.0}, 1e-5);
    EXPECT_NEAR(g[0], 2.0, 1e-6);
    EXPECT_NEAR(g[1], 4.0, 1e-6);
    g = finite_diff_grad([](const Vector&) { return 3.0; }, {1.0, 2.0, 3.0}, 1e-5);
    for (double v : g) EXPECT_EQ(v, 0.0);
    g = finite_diff_grad([](const Vector& x) { return x[0] * x[1]; }, {3.0, 5.0}, 1e-5);
    EXPECT_NEAR(g[0], 5.0, 1e-6);
    EXPECT_NEAR(g[1], 3.0, 1e-6);
}

namespace {

// Composite of every vocabulary op: sum(square(softmax(relu(W x + b)) * colnorm(W))).
template <typename T>
T composite(std::span<const T> p, std::span<const double> x) {
    using ad::square;
    const std::size_t rows = 3, cols = 4;
    const auto w = p.subspan(0, rows * cols), b = p.subspan(rows * cols, rows);
    const auto z = ad::affine<T, double>(w, rows, cols, x, b);
    const auto a = ad::softmax<T>(ad::relu<T>(z));
    auto norms = ad::column_l2_norms<T>(w, cols, 0, rows);
    norms.resize(rows);
    const auto prod = ad::hadamard<T, T>(a, norms);
    std::vector<T> sq;
    for (const T& v : prod) sq.push_back(square(v));
    return ad::sum<T>(sq);
}

}  // namespace

TEST(Autodiff, VocabularyMatchesFiniteDifferences) {
    Rng rng(21);
    for (int trial = 0; trial < 25; ++trial) {
        Vector theta(15), x(4);
        for (double& v : theta) v = normal(rng);
        for (double& v : x) v = normal(rng);
        ad::Tape tape;
        std::vector<ad::Var> vars;
        for (double v : theta) vars.push_back(ad::Var::input(tape, v));
        const auto out = composite<ad::Var>(vars, x);
        const auto g = ad::gradient(out, vars);
        EXPECT_NEAR(out.value(), composite<double>(theta, x), 1e-12);
        const std::vector<long double> theta_ld(theta.begin(), theta.end());
        const auto fd = central_differences<long double>(
            [&](const std::vector<long double>& t) { return composite<long double>(t, x); }, theta_ld, 1e-6L);
        for (std::size_t i = 0; i < g.size(); ++i)
            EXPECT_LE(std::abs(g[i] - static_cast<double>(fd[i])) / std::max(1e-8, std::abs(g[i])), 1e-4)
                << "trial " << trial << " coord " << i << " analytic " << g[i] << " fd " << static_cast<double>(fd[i]);
    }
}

TEST(Metrics, AdjustedRandIndex) {
    EXPECT_DOUBLE_EQ(adjusted_rand_index(std::vector<int>{0, 0, 1, 1}, std::vector<int>{1, 1, 0, 0}), 1.0);
    // hand-computed: contingency [[1,1],[1,1]] -> index 0, expected 2/3*... = 2/3, max 2 -> ARI = -0.5
    EXPECT_NEAR(adjusted_rand_index(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 1, 0, 1}), -0.5, 1e-12);
}

TEST(Metrics, RocAuc) {
    EXPECT_DOUBLE_EQ(roc_auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}), 1.0);
    EXPECT_DOUBLE_EQ(roc_auc({0.1, 0.2, 0.8, 0.9}, {1, 1, 0, 0}), 0.0);
    EXPECT_DOUBLE_EQ(roc_auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}), 0.5);
    // pairs (pos,neg): (0.8>0.3) (0.8>0.6) (0.4>0.3) (0.4<0.6) -> 3/4
    EXPECT_DOUBLE_EQ(roc_auc({0.8, 0.4, 0.3, 0.6}, {1, 1, 0, 0}), 0.75);
}
