#pragma once

#include <algorithm>
#include <cmath>

#include "xilbench/numerics/autodiff.hpp"
#include "xilbench/numerics/matrix.hpp"
#include "xilbench/numerics/rng.hpp"

namespace xilbench {

/// Entropy-style logic layer over concept scores.
///
/// Every class c owns a block of `hidden_per_class` first-layer rows
/// (rows [c*k, (c+1)*k) of W1) and row c of W2. Concept importance for class c
/// is the L2 norm of each W1 column inside that block; a temperature softmax
/// over those norms, rescaled so its maximum is 1, gives the attention alpha^c
/// that weights the concept scores before the block's two linear layers.
struct LogicHead {
    Matrix W1;  ///< (classes * hidden_per_class) x concepts
    Vector b1;
    Matrix W2;  ///< classes x hidden_per_class
    Vector b2;
    double temperature = 1.0;

    std::size_t num_concepts() const noexcept { return W1.cols(); }
    std::size_t num_classes() const noexcept { return W2.rows(); }
    std::size_t hidden_per_class() const noexcept { return W2.cols(); }
    std::size_t num_params() const noexcept { return W1.data().size() + b1.size() + W2.data().size() + b2.size(); }

    Vector flat_params() const {
        Vector out;
        out.reserve(num_params());
        out.insert(out.end(), W1.data().begin(), W1.data().end());
        out.insert(out.end(), b1.begin(), b1.end());
        out.insert(out.end(), W2.data().begin(), W2.data().end());
        out.insert(out.end(), b2.begin(), b2.end());
        return out;
    }

    void set_flat_params(std::span<const double> p) {
        if (p.size() != num_params()) throw DimensionError("LogicHead: parameter vector has the wrong length");
        auto it = p.begin();
        for (auto* dst : {&W1.data(), &b1, &W2.data(), &b2}) {
            std::copy(it, it + static_cast<std::ptrdiff_t>(dst->size()), dst->begin());
            it += static_cast<std::ptrdiff_t>(dst->size());
        }
    }

    bool operator==(const LogicHead&) const = default;
};

inline LogicHead init_logic_head(std::size_t concepts, std::size_t classes, std::size_t hidden_per_class,
                                 std::uint64_t seed, double temperature = 1.0) {
    if (concepts == 0 || classes == 0 || hidden_per_class == 0)
        throw ParameterError("init_logic_head: all dimensions must be positive");
    LogicHead h;
    h.W1 = Matrix(classes * hidden_per_class, concepts);
    h.b1 = Vector(classes * hidden_per_class, 0.0);
    h.W2 = Matrix(classes, hidden_per_class);
    h.b2 = Vector(classes, 0.0);
    h.temperature = temperature;
    Rng rng(derive_seed(seed, "head/init"));
    const double s1 = 1.0 / std::sqrt(static_cast<double>(concepts));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden_per_class));
    for (double& v : h.W1.data()) v = normal(rng, 0.0, s1);
    for (double& v : h.b1) v = normal(rng, 0.0, 0.1);
    for (double& v : h.W2.data()) v = normal(rng, 0.0, s2);
    return h;
}

namespace head {

/// Flat parameter view shared by the double and tape evaluations:
/// [W1 | b1 | W2 | b2] in row-major order.
template <typename T>
struct Params {
    std::span<const T> all;
    std::size_t d, p, k;
    double tau;

    std::span<const T> W1() const { return all.subspan(0, p * k * d); }
    std::span<const T> b1() const { return all.subspan(p * k * d, p * k); }
    std::span<const T> W2() const { return all.subspan(p * k * d + p * k, p * k); }
    std::span<const T> b2() const { return all.subspan(p * k * d + 2 * p * k, p); }
};

/// Per-class attention alpha^c = softmax(gamma^c / tau) / max(...).
template <typename T>
std::vector<std::vector<T>> attention(const Params<T>& P) {
    std::vector<std::vector<T>> alpha(P.p);
    for (std::size_t c = 0; c < P.p; ++c) {
        auto gamma = ad::column_l2_norms<T>(P.W1(), P.d, c * P.k, (c + 1) * P.k);
        for (T& g : gamma) g = g / P.tau;
        auto a = ad::softmax<T>(gamma);
        std::size_t arg = 0;
        for (std::size_t j = 1; j < a.size(); ++j)
            if (ad::value_of(a[j]) > ad::value_of(a[arg])) arg = j;
        const T top = a[arg];
        for (T& v : a) v = v / top;
        alpha[c] = std::move(a);
    }
    return alpha;
}

/// Per-sample forward state needed by the input gradient.
template <typename T>
struct Pass {
    std::vector<T> logits;
    std::vector<std::vector<bool>> active;  ///< ReLU masks per class block
};

template <typename T>
Pass<T> forward(const Params<T>& P, const std::vector<std::vector<T>>& alpha, std::span<const double> s) {
    Pass<T> out;
    out.logits.resize(P.p);
    out.active.resize(P.p);
    const auto W1 = P.W1(), b1 = P.b1(), W2 = P.W2(), b2 = P.b2();
    for (std::size_t c = 0; c < P.p; ++c) {
        const auto weighted = ad::hadamard<T, double>(alpha[c], s);
        const auto z = ad::affine<T, T>(W1.subspan(c * P.k * P.d, P.k * P.d), P.k, P.d, weighted,
                                        b1.subspan(c * P.k, P.k));
        const auto hidden = ad::relu<T>(z);
        T logit = b2[c];
        out.active[c].resize(P.k);
        for (std::size_t r = 0; r < P.k; ++r) {
            out.active[c][r] = ad::value_of(z[r]) > 0.0;
            logit = logit + W2[c * P.k + r] * hidden[r];
        }
        out.logits[c] = logit;
    }
    return out;
}

/// Gradient of sum_c log softmax(logits)_c with respect to the concept scores:
///   g_j = sum_c (1 - p * yhat_c) * alpha^c_j * sum_r W2[c,r] [z^c_r > 0] W1[ck + r, j]
template <typename T>
std::vector<T> input_gradient(const Params<T>& P, const std::vector<std::vector<T>>& alpha, const Pass<T>& pass) {
    const auto probs = ad::softmax<T>(pass.logits);
    const auto W1 = P.W1(), W2 = P.W2();
    std::vector<T> g(P.d, T(0.0));
    for (std::size_t c = 0; c < P.p; ++c) {
        const T u = T(1.0) - static_cast<double>(P.p) * probs[c];
        std::vector<T> dz(P.d, T(0.0));
        for (std::size_t r = 0; r < P.k; ++r) {
            if (!pass.active[c][r]) continue;
            const T w2 = W2[c * P.k + r];
            const std::size_t row = (c * P.k + r) * P.d;
            for (std::size_t j = 0; j < P.d; ++j) dz[j] = dz[j] + w2 * W1[row + j];
        }
        for (std::size_t j = 0; j < P.d; ++j) g[j] = g[j] + u * alpha[c][j] * dz[j];
    }
    return g;
}

inline Params<double> view(const LogicHead& h, const Vector& flat) {
    return {flat, h.num_concepts(), h.num_classes(), h.hidden_per_class(), h.temperature};
}

}  // namespace head

struct HeadOutput {
    Vector logits;
    std::vector<Vector> alpha;  ///< per class, length = concepts
};

inline void check_scores(const LogicHead& h, std::span<const double> s) {
    if (s.size() != h.num_concepts())
        throw DataError("logic head expects " + std::to_string(h.num_concepts()) + " concept scores, got " +
                        std::to_string(s.size()));
}

inline HeadOutput forward(const LogicHead& h, std::span<const double> s) {
    check_scores(h, s);
    const Vector flat = h.flat_params();
    const auto P = head::view(h, flat);
    auto alpha = head::attention(P);
    auto pass = head::forward(P, alpha, s);
    return {std::move(pass.logits), std::move(alpha)};
}

inline int predict(const LogicHead& h, std::span<const double> s) {
    const auto out = forward(h, s);
    return static_cast<int>(std::max_element(out.logits.begin(), out.logits.end()) - out.logits.begin());
}

inline Vector class_probabilities(const LogicHead& h, std::span<const double> s) {
    const auto out = forward(h, s);
    return ad::softmax<double>(out.logits);
}

/// d/ds of sum_c log yhat_c(s): the input-gradient explanation, evaluated on
/// the same graph the right-reasons penalty differentiates through.
inline Vector input_gradient(const LogicHead& h, std::span<const double> s) {
    check_scores(h, s);
    const Vector flat = h.flat_params();
    const auto P = head::view(h, flat);
    const auto alpha = head::attention(P);
    return head::input_gradient(P, alpha, head::forward(P, alpha, s));
}

}  // namespace xilbench
