#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "xilbench/backbone.hpp"
#include "xilbench/numerics/dft.hpp"
#include "xilbench/numerics/eig.hpp"
#include "xilbench/numerics/kmeans.hpp"
#include "xilbench/numerics/knn.hpp"
#include "xilbench/numerics/tsne.hpp"

namespace xilbench {

struct GccdParams {
    std::size_t subsample = 500;
    std::size_t knn_k = 0;       ///< 0 = max(10, ceil(sqrt(subsample)))
    std::size_t n_clusters = 0;  ///< 0 = eigengap selection up to k_max
    std::size_t k_max = 10;
    std::size_t downscale_factor = 5;
    double tsne_perplexity = 30.0;
    std::size_t tsne_iterations = 500;
    double epsilon = 1e-3;
    std::uint64_t seed = 0;

    std::size_t effective_knn_k() const {
        if (knn_k) return knn_k;
        return std::max<std::size_t>(10, static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(subsample)))));
    }

    void validate() const {
        if (downscale_factor < 1) throw ParameterError("gccd: downscale_factor must be >= 1");
        if (!(epsilon > 0.0)) throw ParameterError("gccd: epsilon must be > 0");
        if (subsample < effective_knn_k() + 1) throw ParameterError("gccd: subsample must be >= knn_k + 1");
    }

    bool operator==(const GccdParams&) const = default;
};

struct ClusterReport {
    int class_id = 0;
    std::vector<std::string> sample_ids;                ///< row order of the matrices below
    std::vector<std::vector<std::string>> member_ids;   ///< per cluster
    Matrix spectral_embedding;
    Matrix tsne_coords;
    std::vector<std::string> medoid_ids;
    std::vector<std::optional<std::string>> labels;     ///< human-assigned, empty until labeled
    Vector eigenvalues;

    std::size_t num_clusters() const noexcept { return member_ids.size(); }
    bool operator==(const ClusterReport&) const = default;
};

struct SpectralResult {
    std::vector<std::size_t> labels;
    Matrix embedding;
    Vector eigenvalues;
};

/// Index i in [1, k_max] maximizing eigenvalues[i] - eigenvalues[i-1]
/// (1-based: the gap after the i-th smallest eigenvalue). Ties keep the smallest i.
inline std::size_t eigengap_k(const Vector& eigenvalues, std::size_t k_max) {
    if (eigenvalues.size() < 2) throw ParameterError("eigengap_k: need at least two eigenvalues");
    k_max = std::clamp<std::size_t>(k_max, 1, eigenvalues.size() - 1);
    double scale = 0.0;
    for (double v : eigenvalues) scale = std::max(scale, std::abs(v));
    const double tol = 1e-12 * std::max(1.0, scale);
    std::size_t best = 1;
    double best_gap = eigenvalues[1] - eigenvalues[0];
    for (std::size_t i = 2; i <= k_max; ++i) {
        const double gap = eigenvalues[i] - eigenvalues[i - 1];
        if (gap > best_gap + tol) {
            best_gap = gap;
            best = i;
        }
    }
    return best;
}

/// Normalized-Laplacian spectral clustering; k = 0 selects k by eigengap.
inline SpectralResult spectral_cluster(const Matrix& adjacency, std::size_t k, std::uint64_t seed,
                                       std::size_t k_max = 10) {
    const std::size_t n = adjacency.rows();
    if (adjacency.cols() != n) throw DimensionError("spectral_cluster: adjacency must be square");
    if (n < 2) throw ParameterError("spectral_cluster: need at least two vertices");
    Vector inv_sqrt_deg(n);
    for (std::size_t i = 0; i < n; ++i) {
        double d = 0.0;
        for (std::size_t j = 0; j < n; ++j) d += adjacency(i, j);
        inv_sqrt_deg[i] = 1.0 / std::sqrt(d > 0.0 ? d : 1.0);
    }
    Matrix lap(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            lap(i, j) = (i == j ? 1.0 : 0.0) - inv_sqrt_deg[i] * adjacency(i, j) * inv_sqrt_deg[j];

    auto eig = sym_eig(lap);
    if (k == 0) k = eigengap_k(eig.values, k_max);
    if (k > n) throw ParameterError("spectral_cluster: more clusters than vertices");

    Matrix emb(n, k);
    for (std::size_t i = 0; i < n; ++i) {
        double norm = 0.0;
        for (std::size_t c = 0; c < k; ++c) norm += eig.vectors(i, c) * eig.vectors(i, c);
        norm = std::sqrt(norm);
        for (std::size_t c = 0; c < k; ++c) emb(i, c) = norm > 0.0 ? eig.vectors(i, c) / norm : 0.0;
    }
    auto km = kmeans(emb, k, seed);

    // canonical cluster ids: ordered by first member
    std::vector<std::size_t> remap(k, k);
    std::size_t next = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (remap[km.assignments[i]] == k) remap[km.assignments[i]] = next++;
    for (auto& l : km.assignments) l = remap[l];
    return {std::move(km.assignments), std::move(emb), std::move(eig.values)};
}

/// Non-overlapping factor x factor mean pooling of a single channel.
inline Grid2D downscale(const Grid2D& g, std::size_t factor) {
    if (factor == 0) throw ParameterError("downscale: factor must be >= 1");
    const std::size_t h = g.height() / factor, w = g.width() / factor;
    if (h == 0 || w == 0) throw DimensionError("downscale: grid smaller than the pooling factor");
    Grid2D out(h, w, 1);
    const double inv = 1.0 / static_cast<double>(factor * factor);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double s = 0.0;
            for (std::size_t dy = 0; dy < factor; ++dy)
                for (std::size_t dx = 0; dx < factor; ++dx) s += g.at(y * factor + dy, x * factor + dx);
            out.at(y, x) = s * inv;
        }
    return out;
}

inline void z_normalize(std::span<double> v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / static_cast<double>(v.size()));
    for (double& x : v) x = sd > 0.0 ? (x - mean) / sd : 0.0;
}

/// Feature vector for one sample: [spectrum of heatmap | image], each channel
/// mean-pooled by `factor` and z-normalized independently.
inline Vector preprocess_sample(const Grid2D& image, const Grid2D& heatmap, std::size_t factor) {
    if (image.channels() != 1 || heatmap.channels() != 1)
        throw ChannelError("preprocess_sample: image and heatmap must be single-channel");
    if (image.height() != heatmap.height() || image.width() != heatmap.width())
        throw DimensionError("preprocess_sample: image and heatmap sizes differ");
    const Grid2D spec = downscale(dft2_logmag(heatmap), factor);
    const Grid2D img = downscale(image, factor);
    Vector out;
    out.reserve(spec.size() * 2);
    out.insert(out.end(), spec.data().begin(), spec.data().end());
    out.insert(out.end(), img.data().begin(), img.data().end());
    const std::size_t half = spec.size();
    z_normalize(std::span<double>(out.data(), half));
    z_normalize(std::span<double>(out.data() + half, half));
    return out;
}

/// Global confounding-concept discovery for one class: subsample, build
/// spectral+appearance features, cluster the kNN graph spectrally, and lay the
/// graph out with t-SNE over 1/(A + eps).
inline ClusterReport discover(const std::vector<Sample>& samples, const Backbone& backbone, int cls,
                              const GccdParams& params) {
    params.validate();
    std::size_t with_maps = 0;
    for (const auto& s : samples) with_maps += s.heatmaps.has_value();
    const bool stored = with_maps > 0;
    if (stored && with_maps != samples.size())
        throw DataError("discover: some samples carry stored heatmaps and others do not; refusing to mix sources");
    if (!stored && std::holds_alternative<ExternalBackbone>(backbone))
        throw DataError("discover: external backbone requires stored heatmaps");
    if (samples.size() < params.subsample)
        throw DataError("discover: " + std::to_string(samples.size()) + " heatmap-bearing samples, subsample needs " +
                        std::to_string(params.subsample));

    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return samples[a].id < samples[b].id; });
    Rng rng(derive_seed(params.seed, "gccd/subsample"));
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(params.subsample);

    const std::size_t n = order.size();
    Matrix features;
    ClusterReport rep;
    rep.class_id = cls;
    for (std::size_t r = 0; r < n; ++r) {
        const Sample& s = samples[order[r]];
        if (s.image.empty()) throw DataError("discover: sample '" + s.id + "' has no image");
        Grid2D heat;
        if (stored) {
            if (cls < 0 || static_cast<std::size_t>(cls) >= s.heatmaps->size())
                throw DataError("discover: sample '" + s.id + "' has no heatmap for class " + std::to_string(cls));
            heat = (*s.heatmaps)[static_cast<std::size_t>(cls)];
        } else {
            heat = saliency(backbone, s, cls);
        }
        const Vector f = preprocess_sample(s.image, heat, params.downscale_factor);
        if (r == 0) features = Matrix(n, f.size());
        std::copy(f.begin(), f.end(), features.row(r).begin());
        rep.sample_ids.push_back(s.id);
    }

    const Matrix adj = knn_graph(features, params.effective_knn_k());
    auto sc = spectral_cluster(adj, params.n_clusters, derive_seed(params.seed, "gccd/kmeans"), params.k_max);
    const std::size_t k = 1 + *std::max_element(sc.labels.begin(), sc.labels.end());

    Matrix dist(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) dist(i, j) = i == j ? 0.0 : 1.0 / (adj(i, j) + params.epsilon);
    TsneOptions topt;
    // exact t-SNE needs n - 1 >= 3 * perplexity
    topt.perplexity = std::min(params.tsne_perplexity, static_cast<double>(n - 1) / 3.0);
    topt.iterations = params.tsne_iterations;
    topt.seed = derive_seed(params.seed, "gccd/tsne");
    rep.tsne_coords = tsne(dist, topt).coords;

    rep.member_ids.assign(k, {});
    std::vector<std::vector<std::size_t>> rows(k);
    for (std::size_t i = 0; i < n; ++i) {
        rows[sc.labels[i]].push_back(i);
        rep.member_ids[sc.labels[i]].push_back(rep.sample_ids[i]);
    }
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t best = rows[c].empty() ? 0 : rows[c].front();
        double best_mean = std::numeric_limits<double>::infinity();
        for (std::size_t a : rows[c]) {
            double total = 0.0;
            for (std::size_t b : rows[c]) total += std::sqrt(squared_distance(features.row(a), features.row(b)));
            if (total < best_mean) {
                best_mean = total;
                best = a;
            }
        }
        rep.medoid_ids.push_back(rows[c].empty() ? std::string{} : rep.sample_ids[best]);
    }
    rep.labels.assign(k, std::nullopt);
    rep.spectral_embedding = std::move(sc.embedding);
    rep.eigenvalues = std::move(sc.eigenvalues);
    return rep;
}

}  // namespace xilbench
