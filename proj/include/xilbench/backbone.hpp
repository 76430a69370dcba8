#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <variant>

#include "xilbench/numerics/matrix.hpp"
#include "xilbench/numerics/rng.hpp"
#include "xilbench/synth/sample.hpp"

namespace xilbench {

/// Two-layer ReLU network on flattened images: the embedding is the hidden
/// layer, the classifier head is W2/b2.
struct ToyBackbone {
    Matrix W1;  ///< hidden x pixels
    Vector b1;
    Matrix W2;  ///< classes x hidden
    Vector b2;
    Vector pixel_mean;  ///< subtracted from every input; empty = no centering
    std::size_t image_height = 0;
    std::size_t image_width = 0;

    std::size_t hidden_dim() const noexcept { return W1.rows(); }
    std::size_t num_classes() const noexcept { return W2.rows(); }
    std::size_t pixels() const noexcept { return W1.cols(); }

    bool operator==(const ToyBackbone&) const = default;
};

/// Pass-through for samples that already carry embeddings (and heatmaps).
struct ExternalBackbone {
    bool operator==(const ExternalBackbone&) const = default;
};

using Backbone = std::variant<ToyBackbone, ExternalBackbone>;

struct BaselineOptions {
    std::size_t hidden_dim = 32;
    std::size_t epochs = 10;
    double lr = 0.02;
    std::size_t batch = 32;
    std::size_t num_classes = 2;
    std::uint64_t seed = 0;

    bool operator==(const BaselineOptions&) const = default;
};

namespace backbone_detail {

inline std::span<const double> pixels_of(const ToyBackbone& b, const Sample& s) {
    if (s.image.empty()) throw DataError("sample '" + s.id + "' has no image");
    if (s.image.size() != b.pixels())
        throw DimensionError("sample '" + s.id + "' image has " + std::to_string(s.image.size()) +
                             " pixels, backbone expects " + std::to_string(b.pixels()));
    return s.image.data();
}

inline Vector centered(const ToyBackbone& b, std::span<const double> x) {
    Vector out(x.begin(), x.end());
    if (!b.pixel_mean.empty())
        for (std::size_t p = 0; p < out.size(); ++p) out[p] -= b.pixel_mean[p];
    return out;
}

inline Vector pre_activation(const ToyBackbone& b, std::span<const double> x) {
    Vector z = matvec(b.W1, centered(b, x));
    for (std::size_t r = 0; r < z.size(); ++r) z[r] += b.b1[r];
    return z;
}

inline Vector logits_from_hidden(const ToyBackbone& b, const Vector& h) {
    Vector out = matvec(b.W2, h);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += b.b2[c];
    return out;
}

inline Vector softmax(const Vector& z) {
    const double m = *std::max_element(z.begin(), z.end());
    Vector p(z.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) sum += (p[i] = std::exp(z[i] - m));
    for (double& v : p) v /= sum;
    return p;
}

}  // namespace backbone_detail

inline ToyBackbone init_toy_backbone(std::size_t height, std::size_t width, std::size_t hidden, std::size_t classes,
                                     std::uint64_t seed) {
    ToyBackbone b;
    b.image_height = height;
    b.image_width = width;
    const std::size_t pixels = height * width;
    b.W1 = Matrix(hidden, pixels);
    b.b1 = Vector(hidden, 0.0);
    b.W2 = Matrix(classes, hidden);
    b.b2 = Vector(classes, 0.0);
    Rng rng(derive_seed(seed, "backbone/init"));
    const double s1 = std::sqrt(2.0 / static_cast<double>(pixels));
    const double s2 = std::sqrt(1.0 / static_cast<double>(hidden));
    for (double& v : b.W1.data()) v = normal(rng, 0.0, s1);
    for (double& v : b.W2.data()) v = normal(rng, 0.0, s2);
    return b;
}

/// h = ReLU(W1 x + b1).
inline Vector extract(const ToyBackbone& b, const Sample& s) {
    Vector z = backbone_detail::pre_activation(b, backbone_detail::pixels_of(b, s));
    for (double& v : z) v = std::max(v, 0.0);
    return z;
}

inline Vector extract(const ExternalBackbone&, const Sample& s) {
    if (!s.embedding) throw DataError("sample '" + s.id + "' has no stored embedding");
    return *s.embedding;
}

inline Vector extract(const Backbone& b, const Sample& s) {
    return std::visit([&](const auto& impl) { return extract(impl, s); }, b);
}

inline Vector logits(const ToyBackbone& b, const Sample& s) {
    return backbone_detail::logits_from_hidden(b, extract(b, s));
}

inline int predict(const ToyBackbone& b, const Sample& s) {
    const Vector z = logits(b, s);
    return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

/// Mean cross-entropy of the toy classifier over `data`.
inline double cross_entropy(const ToyBackbone& b, const std::vector<Sample>& data) {
    double total = 0.0;
    for (const auto& s : data) {
        const Vector p = backbone_detail::softmax(logits(b, s));
        total -= std::log(std::max(p[static_cast<std::size_t>(s.label)], 1e-300));
    }
    return data.empty() ? 0.0 : total / static_cast<double>(data.size());
}

/// d logit_class / d x for one image (flattened).
inline Vector logit_input_gradient(const ToyBackbone& b, const Sample& s, int cls) {
    const auto x = backbone_detail::pixels_of(b, s);
    if (cls < 0 || static_cast<std::size_t>(cls) >= b.num_classes()) throw ParameterError("class id out of range");
    const Vector z = backbone_detail::pre_activation(b, x);
    Vector g(b.pixels(), 0.0);
    for (std::size_t r = 0; r < z.size(); ++r) {
        if (z[r] <= 0.0) continue;
        const double w = b.W2(static_cast<std::size_t>(cls), r);
        if (w == 0.0) continue;
        auto row = b.W1.row(r);
        for (std::size_t p = 0; p < g.size(); ++p) g[p] += w * row[p];
    }
    return g;
}

/// Input-times-gradient heatmap |x * d logit / d x|, min-max normalized to [0,1].
/// A constant map (including an all-zero gradient) yields all zeros.
inline Grid2D saliency(const ToyBackbone& b, const Sample& s, int cls) {
    const Vector g = logit_input_gradient(b, s, cls);
    const Vector x = backbone_detail::centered(b, s.image.data());
    std::vector<double> heat(g.size());
    for (std::size_t p = 0; p < g.size(); ++p) heat[p] = std::abs(x[p] * g[p]);
    const auto [lo, hi] = std::minmax_element(heat.begin(), heat.end());
    const double min = *lo, range = *hi - *lo;
    for (double& v : heat) v = range > 0.0 ? (v - min) / range : 0.0;
    return Grid2D(s.image.height(), s.image.width(), 1, std::move(heat));
}

inline Grid2D saliency(const Backbone& b, const Sample& s, int cls) {
    if (std::holds_alternative<ExternalBackbone>(b))
        throw UnsupportedError("saliency is unavailable for external backbones; use the stored per-class heatmaps");
    return saliency(std::get<ToyBackbone>(b), s, cls);
}

/// Continues minibatch SGD (no momentum) on softmax cross-entropy from `b`.
/// When `epoch_loss` is given it receives the mean training cross-entropy
/// after every epoch.
inline ToyBackbone fine_tune(ToyBackbone b, const std::vector<Sample>& train, const BaselineOptions& opt,
                             Vector* epoch_loss = nullptr) {
    if (train.empty()) throw DataError("train_baseline: no images to train on");
    for (const auto& s : train)
        if (s.image.empty()) throw DataError("train_baseline: sample '" + s.id + "' has no image");
    const std::size_t pixels = b.pixels();
    const std::size_t hidden = b.hidden_dim(), classes = b.num_classes();
    const std::size_t batch = std::max<std::size_t>(1, opt.batch);

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(opt.seed, "backbone/shuffle"));

    Matrix gW1(hidden, pixels), gW2(classes, hidden);
    Vector gb1(hidden), gb2(classes);
    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            std::fill(gW1.data().begin(), gW1.data().end(), 0.0);
            std::fill(gW2.data().begin(), gW2.data().end(), 0.0);
            std::fill(gb1.begin(), gb1.end(), 0.0);
            std::fill(gb2.begin(), gb2.end(), 0.0);
            for (std::size_t t = start; t < end; ++t) {
                const Sample& s = train[order[t]];
                const Vector x = backbone_detail::centered(b, backbone_detail::pixels_of(b, s));
                Vector z = matvec(b.W1, x);
                for (std::size_t r = 0; r < hidden; ++r) z[r] += b.b1[r];
                Vector hid(z.size());
                for (std::size_t r = 0; r < z.size(); ++r) hid[r] = std::max(z[r], 0.0);
                Vector dlogit = backbone_detail::softmax(backbone_detail::logits_from_hidden(b, hid));
                dlogit[static_cast<std::size_t>(s.label)] -= 1.0;
                Vector dz(hidden, 0.0);
                for (std::size_t c = 0; c < classes; ++c) {
                    gb2[c] += dlogit[c];
                    for (std::size_t r = 0; r < hidden; ++r) {
                        gW2(c, r) += dlogit[c] * hid[r];
                        dz[r] += dlogit[c] * b.W2(c, r);
                    }
                }
                for (std::size_t r = 0; r < hidden; ++r) {
                    if (z[r] <= 0.0) continue;
                    gb1[r] += dz[r];
                    auto g = gW1.row(r);
                    for (std::size_t p = 0; p < pixels; ++p) g[p] += dz[r] * x[p];
                }
            }
            const double step = opt.lr / static_cast<double>(end - start);
            for (std::size_t i = 0; i < gW1.data().size(); ++i) b.W1.data()[i] -= step * gW1.data()[i];
            for (std::size_t i = 0; i < gW2.data().size(); ++i) b.W2.data()[i] -= step * gW2.data()[i];
            for (std::size_t r = 0; r < hidden; ++r) b.b1[r] -= step * gb1[r];
            for (std::size_t c = 0; c < classes; ++c) b.b2[c] -= step * gb2[c];
        }
        if (epoch_loss) epoch_loss->push_back(cross_entropy(b, train));
    }
    return b;
}

/// Fresh toy backbone (He init, input centering from `train`) trained with
/// fine_tune.
inline ToyBackbone train_baseline(const std::vector<Sample>& train, const BaselineOptions& opt,
                                  Vector* epoch_loss = nullptr) {
    if (train.empty() || train.front().image.empty()) throw DataError("train_baseline: no images to train on");
    const std::size_t h = train.front().image.height(), w = train.front().image.width();
    ToyBackbone b = init_toy_backbone(h, w, opt.hidden_dim, opt.num_classes, opt.seed);
    b.pixel_mean.assign(h * w, 0.0);
    for (const auto& s : train) {
        const auto x = backbone_detail::pixels_of(b, s);
        for (std::size_t p = 0; p < x.size(); ++p) b.pixel_mean[p] += x[p];
    }
    for (double& v : b.pixel_mean) v /= static_cast<double>(train.size());
    return fine_tune(std::move(b), train, opt, epoch_loss);
}

}  // namespace xilbench
