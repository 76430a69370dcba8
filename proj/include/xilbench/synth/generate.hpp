#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <cstdio>
#include <numeric>
#include <optional>

#include "xilbench/numerics/rng.hpp"
#include "xilbench/synth/sample.hpp"

namespace xilbench {

struct SyntheticConfig {
    std::size_t image_size = 64;
    std::size_t n_train = 2000;
    std::size_t n_test = 600;
    Confounder confounder = Confounder::dark_corner;
    int confounded_class = 1;
    double train_confound_rate = 0.95;
    double test_confound_rate = 0.0;
    /// Rate applied to the other class in both splits. Zero reproduces the
    /// fully confounded setting; 0.5 with confounded-class rate 0.5 gives a
    /// probe set where the confounder is independent of the label.
    double other_class_confound_rate = 0.0;
    std::uint64_t seed = 0;
    /// Re-randomizes confounder placement without touching the class signal.
    std::optional<std::uint64_t> confounder_seed;

    void validate() const {
        auto rate_ok = [](double r) { return r >= 0.0 && r <= 1.0; };
        if (!rate_ok(train_confound_rate) || !rate_ok(test_confound_rate) ||
            !rate_ok(other_class_confound_rate))
            throw ParameterError("synthetic config: confound rates must lie in [0,1]");
        if (n_train == 0 || n_test == 0) throw ParameterError("synthetic config: n_train and n_test must be > 0");
        if (image_size < 16)
            throw ParameterError("synthetic config: image_size " + std::to_string(image_size) +
                                 " is too small to place a confounder (< 16)");
        if (confounded_class != 0 && confounded_class != 1)
            throw ParameterError("synthetic config: confounded_class must be 0 or 1");
    }

    bool operator==(const SyntheticConfig&) const = default;
};

struct SyntheticDataset {
    std::vector<Sample> train;
    std::vector<Sample> test;
};

namespace synth {

inline double smoothstep_inside(double signed_dist) {
    // 1 well inside, 0 well outside, linear over one pixel
    return std::clamp(signed_dist + 0.5, 0.0, 1.0);
}

/// Class-defining layer: skin background plus a lesion whose shape depends on
/// the label only through the class stream `rng`.
inline Grid2D render_lesion(std::size_t size, int label, Rng& rng) {
    const double s = static_cast<double>(size);
    const double background = uniform(rng, 0.62, 0.78);
    const double tone = uniform(rng, 0.28, 0.42);
    const double cx = s / 2.0 + uniform(rng, -s / 8.0, s / 8.0);
    const double cy = s / 2.0 + uniform(rng, -s / 8.0, s / 8.0);
    const double r0 = uniform(rng, 0.14 * s, 0.22 * s);

    // class 1: irregular border and a darker inner blob (two independent parameters)
    double a3 = 0.0, a5 = 0.0, ph3 = 0.0, ph5 = 0.0;
    double blob_dx = 0.0, blob_dy = 0.0, blob_r = 0.0, blob_dark = 0.0;
    if (label == 1) {
        a3 = uniform(rng, 0.10, 0.22);
        a5 = uniform(rng, 0.06, 0.14);
        ph3 = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        ph5 = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const double ang = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        blob_dx = 0.2 * r0 * std::cos(ang);
        blob_dy = 0.2 * r0 * std::sin(ang);
        blob_r = uniform(rng, 0.55, 0.75) * r0;
        blob_dark = uniform(rng, 0.14, 0.22);
    }

    Grid2D img(size, size, 1);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const double dx = static_cast<double>(x) + 0.5 - cx;
            const double dy = static_cast<double>(y) + 0.5 - cy;
            const double dist = std::hypot(dx, dy);
            const double theta = std::atan2(dy, dx);
            const double radius = r0 * (1.0 + a3 * std::sin(3.0 * theta + ph3) + a5 * std::sin(5.0 * theta + ph5));
            const double inside = smoothstep_inside(radius - dist);
            double v = background * (1.0 - inside) + tone * inside;
            if (label == 1) {
                const double bd = std::hypot(dx - blob_dx, dy - blob_dy);
                v -= blob_dark * inside * smoothstep_inside(blob_r - bd);
            }
            v += normal(rng, 0.0, 0.02);
            img.at(y, x) = v;
        }
    return img;
}

inline void blend(double& px, double target, double weight) { px = px * (1.0 - weight) + target * weight; }

inline void apply_confounder(Grid2D& img, Confounder kind, Rng& rng) {
    const std::size_t size = img.height();
    const double s = static_cast<double>(size);
    switch (kind) {
        case Confounder::dark_corner: {
            const int corner = std::uniform_int_distribution<int>(0, 3)(rng);
            const double radius = uniform(rng, 0.35 * s, 0.5 * s);
            const double level = uniform(rng, 0.0, 0.05);
            const double ox = (corner & 1) ? s : 0.0, oy = (corner & 2) ? s : 0.0;
            for (std::size_t y = 0; y < size; ++y)
                for (std::size_t x = 0; x < size; ++x) {
                    const double d = std::hypot(static_cast<double>(x) + 0.5 - ox, static_cast<double>(y) + 0.5 - oy);
                    blend(img.at(y, x), level, std::clamp((radius - d) / 2.0 + 0.5, 0.0, 1.0));
                }
            break;
        }
        case Confounder::dark_border: {
            const double inner = uniform(rng, 0.40 * s, 0.46 * s);
            const double level = uniform(rng, 0.0, 0.06);
            for (std::size_t y = 0; y < size; ++y)
                for (std::size_t x = 0; x < size; ++x) {
                    const double d = std::hypot(static_cast<double>(x) + 0.5 - s / 2.0, static_cast<double>(y) + 0.5 - s / 2.0);
                    blend(img.at(y, x), level, std::clamp((d - inner) / 2.0 + 0.5, 0.0, 1.0));
                }
            break;
        }
        case Confounder::ruler: {
            const int edge = std::uniform_int_distribution<int>(0, 3)(rng);
            const auto band = static_cast<std::size_t>(std::round(0.12 * s));
            const std::size_t spacing = 4;
            for (std::size_t a = 0; a < size; ++a)
                for (std::size_t b = 0; b < band; ++b) {
                    // a runs along the edge, b inward from it
                    const bool tick = (a % spacing == 0) && b < ((a / spacing) % 2 == 0 ? band : band / 2);
                    const double v = tick ? 0.1 : 0.9;
                    std::size_t y = 0, x = 0;
                    switch (edge) {
                        case 0: y = b; x = a; break;
                        case 1: y = size - 1 - b; x = a; break;
                        case 2: y = a; x = b; break;
                        default: y = a; x = size - 1 - b; break;
                    }
                    img.at(y, x) = v;
                }
            break;
        }
        case Confounder::hair: {
            const int strokes = std::uniform_int_distribution<int>(3, 6)(rng);
            for (int k = 0; k < strokes; ++k) {
                const double x0 = uniform(rng, 0, s), y0 = uniform(rng, 0, s);
                const double x1 = uniform(rng, 0, s), y1 = uniform(rng, 0, s);
                const double x2 = uniform(rng, 0, s), y2 = uniform(rng, 0, s);
                for (int step = 0; step <= 200; ++step) {
                    const double t = step / 200.0, u = 1.0 - t;
                    const double bx = u * u * x0 + 2 * u * t * x1 + t * t * x2;
                    const double by = u * u * y0 + 2 * u * t * y1 + t * t * y2;
                    const auto px = static_cast<std::ptrdiff_t>(bx), py = static_cast<std::ptrdiff_t>(by);
                    if (px >= 0 && py >= 0 && px < static_cast<std::ptrdiff_t>(size) && py < static_cast<std::ptrdiff_t>(size))
                        img.at(static_cast<std::size_t>(py), static_cast<std::size_t>(px)) = 0.08;
                }
            }
            break;
        }
        case Confounder::air_pockets: {
            const int pockets = std::uniform_int_distribution<int>(3, 7)(rng);
            for (int k = 0; k < pockets; ++k) {
                const double cx = uniform(rng, 0, s), cy = uniform(rng, 0, s);
                const double r = uniform(rng, 1.5, 3.5);
                for (std::size_t y = 0; y < size; ++y)
                    for (std::size_t x = 0; x < size; ++x) {
                        const double d = std::hypot(static_cast<double>(x) + 0.5 - cx, static_cast<double>(y) + 0.5 - cy);
                        blend(img.at(y, x), 0.97, smoothstep_inside(r - d));
                    }
            }
            break;
        }
        case Confounder::global_brightness: {
            const double factor = uniform(rng, 0.5, 0.62);
            for (double& v : img.data()) v *= factor;
            break;
        }
    }
}

inline std::vector<Sample> generate_split(const SyntheticConfig& cfg, std::string_view split, std::size_t n,
                                          double confounded_rate) {
    const std::uint64_t conf_seed = cfg.confounder_seed.value_or(cfg.seed);
    const std::string conf_name(to_string(cfg.confounder));

    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < n; ++i) by_class[i % 2].push_back(i);

    std::vector<bool> confounded(n, false);
    Rng select(derive_seed(conf_seed, std::string(split) + "/select"));
    for (int c = 0; c < 2; ++c) {
        const double rate = (c == cfg.confounded_class) ? confounded_rate : cfg.other_class_confound_rate;
        auto members = by_class[c];
        std::shuffle(members.begin(), members.end(), select);
        const auto count = static_cast<std::size_t>(std::llround(rate * static_cast<double>(members.size())));
        for (std::size_t t = 0; t < count; ++t) confounded[members[t]] = true;
    }

    std::vector<Sample> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        Sample& smp = out[i];
        char buf[32];
        std::snprintf(buf, sizeof buf, "-%06zu", i);
        smp.id = std::string(split) + buf;
        smp.label = static_cast<int>(i % 2);
        Rng lesion_rng(derive_seed(cfg.seed, std::string(split) + "/lesion", i));
        smp.image = render_lesion(cfg.image_size, smp.label, lesion_rng);
        if (confounded[i]) {
            Rng conf_rng(derive_seed(conf_seed, std::string(split) + "/confounder", i));
            apply_confounder(smp.image, cfg.confounder, conf_rng);
            smp.confounder_flags.insert(conf_name);
        }
        for (double& v : smp.image.data()) v = std::clamp(v, 0.0, 1.0);
        smp.concept_truth[conf_name] = confounded[i] ? ConceptTruth::present : ConceptTruth::absent;
        const auto lesion = smp.label == 1 ? ConceptTruth::present : ConceptTruth::absent;
        smp.concept_truth[std::string(kIrregularBorder)] = lesion;
        smp.concept_truth[std::string(kMultiTone)] = lesion;
    }
    return out;
}

}  // namespace synth

/// Confounded two-class dataset. Classes alternate by index, so each split is
/// balanced; exactly round(rate x class size) samples of each class carry the
/// confounder.
inline SyntheticDataset generate(const SyntheticConfig& cfg) {
    cfg.validate();
    return {synth::generate_split(cfg, "train", cfg.n_train, cfg.train_confound_rate),
            synth::generate_split(cfg, "test", cfg.n_test, cfg.test_confound_rate)};
}

}  // namespace xilbench
