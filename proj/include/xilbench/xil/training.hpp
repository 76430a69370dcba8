#pragma once

#include <concepts>
#include <numeric>
#include <optional>
#include <string>

#include "xilbench/xil/logic_head.hpp"

namespace xilbench {

enum class Strategy { rrr, l1, edit_norm };

inline std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::rrr: return "rrr";
        case Strategy::l1: return "l1";
        case Strategy::edit_norm: return "edit_norm";
    }
    return "?";
}

inline Strategy strategy_from_string(std::string_view s) {
    if (s == "rrr") return Strategy::rrr;
    if (s == "l1") return Strategy::l1;
    if (s == "edit_norm") return Strategy::edit_norm;
    throw ParameterError("unknown strategy '" + std::string(s) + "'");
}

enum class Optimizer { gd, adam };

/// Human annotation matrix: H[b][j] = 1 marks concept j as irrelevant for
/// sample b. A single row applies to every sample.
struct RuleTable {
    Matrix H;
    std::vector<std::string> rules;
    bool per_sample = false;

    static RuleTable empty(std::size_t concepts) { return {Matrix(1, concepts), {}, false}; }

    /// Row of H that applies to sample `b`.
    std::span<const double> row_for(std::size_t b) const { return H.row(H.rows() == 1 ? 0 : b); }

    bool operator==(const RuleTable&) const = default;
};

struct TrainConfig {
    double lambda1 = 0.05;
    double lambda2 = 2000.0;
    double alpha_mix = 0.5;
    Strategy strategy = Strategy::rrr;
    Optimizer optimizer = Optimizer::adam;
    double lr = 0.01;
    double lr_decay = 0.98;
    std::size_t epochs = 200;
    std::size_t batch = 0;  ///< 0 = full batch
    std::uint64_t seed = 0;

    void validate() const {
        if (lambda1 < 0.0 || lambda2 < 0.0) throw ParameterError("train config: lambda1 and lambda2 must be >= 0");
        if (alpha_mix < 0.0 || alpha_mix > 1.0) throw ParameterError("train config: alpha_mix must lie in [0,1]");
    }

    bool operator==(const TrainConfig&) const = default;
};

struct LossTerms {
    double cross_entropy = 0.0;
    double regularizer = 0.0;
    double right_reasons = 0.0;
    double total = 0.0;

    bool operator==(const LossTerms&) const = default;
};

namespace head {

template <typename T>
struct TermsT {
    T ce = 0.0, reg = 0.0, rr = 0.0, total = 0.0;
};

/// Objective on one batch:
///   mean CE + lambda1 (a ||theta||_1 + (1-a) ||theta||_2^2)
///          + lambda2 mean_b sum_j (H_bj g_bj)^2      (|H_bj g_bj| for l1)
/// where theta is every head parameter and g the input gradient.
template <typename T>
TermsT<T> objective(const Params<T>& P, const std::vector<Vector>& scores, const std::vector<int>& labels,
                    const RuleTable& table, const TrainConfig& cfg) {
    TermsT<T> t;
    const auto alpha = attention(P);
    const double inv_b = 1.0 / static_cast<double>(scores.size());
    const bool rr_on = cfg.lambda2 > 0.0;
    for (std::size_t b = 0; b < scores.size(); ++b) {
        const auto pass = forward(P, alpha, scores[b]);
        const auto lsm = ad::log_softmax<T>(pass.logits);
        t.ce = t.ce - lsm[static_cast<std::size_t>(labels[b])];
        if (!rr_on) continue;
        const auto mask = table.row_for(b);
        bool any = false;
        for (double m : mask) any = any || m != 0.0;
        if (!any) continue;
        const auto g = input_gradient(P, alpha, pass);
        for (std::size_t j = 0; j < P.d; ++j) {
            if (mask[j] == 0.0) continue;
            const T masked = mask[j] * g[j];
            t.rr = t.rr + (cfg.strategy == Strategy::l1 ? ad::abs(masked) : ad::square(masked));
        }
    }
    t.ce = t.ce * inv_b;
    t.rr = t.rr * inv_b;
    if (cfg.lambda1 > 0.0) {
        T l1 = 0.0, l2 = 0.0;
        for (const T& v : P.all) {
            l1 = l1 + ad::abs(v);
            l2 = l2 + ad::square(v);
        }
        t.reg = cfg.lambda1 * (cfg.alpha_mix * l1 + (1.0 - cfg.alpha_mix) * l2);
    }
    t.total = t.ce + t.reg + cfg.lambda2 * t.rr;
    return t;
}

inline void check_batch(const LogicHead& h, const std::vector<Vector>& scores, const std::vector<int>& labels,
                        const RuleTable& table) {
    if (scores.empty()) throw DataError("empty batch");
    if (scores.size() != labels.size()) throw DimensionError("scores and labels differ in length");
    if (table.H.cols() != h.num_concepts())
        throw DimensionError("rule table has " + std::to_string(table.H.cols()) + " columns, head has " +
                             std::to_string(h.num_concepts()) + " concepts");
    if (table.H.rows() != 1 && table.H.rows() != scores.size())
        throw DimensionError("rule table rows must be 1 or the batch size");
    for (const auto& s : scores) check_scores(h, s);
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= h.num_classes()) throw DataError("label out of range");
}

}  // namespace head

/// Loss terms only (no gradient); used by finite-difference checks.
inline LossTerms loss_terms(const LogicHead& h, const std::vector<Vector>& scores, const std::vector<int>& labels,
                            const RuleTable& table, const TrainConfig& cfg) {
    head::check_batch(h, scores, labels, table);
    const Vector flat = h.flat_params();
    const auto t = head::objective(head::view(h, flat), scores, labels, table, cfg);
    return {t.ce, t.reg, t.rr, t.total};
}

/// Objective total evaluated at precision Real over `flat` (LogicHead::flat_params
/// layout). Lets finite-difference oracles run in long double.
template <std::floating_point Real>
Real objective_value(const LogicHead& h, std::span<const Real> flat, const std::vector<Vector>& scores,
                     const std::vector<int>& labels, const RuleTable& table, const TrainConfig& cfg) {
    head::check_batch(h, scores, labels, table);
    if (flat.size() != h.num_params()) throw DimensionError("objective_value: parameter vector has the wrong length");
    const head::Params<Real> P{flat, h.num_concepts(), h.num_classes(), h.hidden_per_class(), h.temperature};
    return head::objective(P, scores, labels, table, cfg).total;
}

/// sum_c log yhat_c(s) at precision Real; the quantity input_gradient differentiates.
template <std::floating_point Real>
Real sum_log_probs(const LogicHead& h, std::span<const Real> flat, std::span<const double> s) {
    check_scores(h, s);
    const head::Params<Real> P{flat, h.num_concepts(), h.num_classes(), h.hidden_per_class(), h.temperature};
    const auto pass = head::forward(P, head::attention(P), s);
    Real total = 0.0;
    for (const Real& v : ad::log_softmax<Real>(pass.logits)) total += v;
    return total;
}

struct LossAndGrads {
    LossTerms terms;
    Vector grads;  ///< same layout as LogicHead::flat_params()
};

/// Objective value and its gradient with respect to every head parameter,
/// including the paths through the attention weights and through the input
/// gradient inside the right-reasons term.
inline LossAndGrads loss_and_grads(const LogicHead& h, const std::vector<Vector>& scores,
                                   const std::vector<int>& labels, const RuleTable& table, const TrainConfig& cfg) {
    if (cfg.strategy == Strategy::edit_norm)
        throw ParameterError("loss_and_grads: edit_norm is an intervention, not a training loss");
    cfg.validate();
    head::check_batch(h, scores, labels, table);
    ad::Tape tape;
    tape.reserve(scores.size() * (h.num_params() * 4 + 64));
    const Vector flat = h.flat_params();
    std::vector<ad::Var> params;
    params.reserve(flat.size());
    for (double v : flat) params.push_back(ad::Var::input(tape, v));
    const head::Params<ad::Var> P{params, h.num_concepts(), h.num_classes(), h.hidden_per_class(), h.temperature};
    const auto t = head::objective(P, scores, labels, table, cfg);
    LossAndGrads out;
    out.terms = {t.ce.value(), t.reg.value(), t.rr.value(), t.total.value()};
    out.grads = ad::gradient(t.total, params);
    return out;
}

struct TrainResult {
    LogicHead head;
    std::vector<LossTerms> history;  ///< one entry per epoch, averaged over its batches
};

/// Deterministic training: full batch by default, Adam or plain gradient
/// descent, learning rate multiplied by `lr_decay` after every epoch.
inline TrainResult train(LogicHead h, const std::vector<Vector>& scores, const std::vector<int>& labels,
                         const RuleTable& table, const TrainConfig& cfg) {
    cfg.validate();
    if (scores.empty()) throw DataError("train: empty dataset");
    head::check_batch(h, scores, labels, table);

    TrainResult res;
    const std::size_t n = scores.size();
    const std::size_t batch = cfg.batch == 0 ? n : std::min(cfg.batch, n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, "head/shuffle"));

    Vector theta = h.flat_params();
    Vector m(theta.size(), 0.0), v(theta.size(), 0.0);
    std::size_t step = 0;
    double lr = cfg.lr;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (batch < n) std::shuffle(order.begin(), order.end(), rng);
        LossTerms acc;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t end = std::min(n, start + batch);
            std::vector<Vector> bs;
            std::vector<int> bl;
            RuleTable bt{Matrix(table.H.rows() == 1 ? 1 : end - start, table.H.cols()), {}, table.per_sample};
            for (std::size_t t = start; t < end; ++t) {
                bs.push_back(scores[order[t]]);
                bl.push_back(labels[order[t]]);
                if (table.H.rows() != 1) {
                    const auto src = table.row_for(order[t]);
                    std::copy(src.begin(), src.end(), bt.H.row(t - start).begin());
                }
            }
            if (table.H.rows() == 1) bt.H = table.H;
            h.set_flat_params(theta);
            const auto lg = loss_and_grads(h, bs, bl, bt, cfg);
            acc.cross_entropy += lg.terms.cross_entropy;
            acc.regularizer += lg.terms.regularizer;
            acc.right_reasons += lg.terms.right_reasons;
            acc.total += lg.terms.total;
            ++batches;
            ++step;
            if (cfg.optimizer == Optimizer::adam) {
                constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
                const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
                const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
                for (std::size_t i = 0; i < theta.size(); ++i) {
                    m[i] = b1 * m[i] + (1.0 - b1) * lg.grads[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * lg.grads[i] * lg.grads[i];
                    theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
                }
            } else {
                for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * lg.grads[i];
            }
        }
        const double inv = 1.0 / static_cast<double>(batches);
        res.history.push_back({acc.cross_entropy * inv, acc.regularizer * inv, acc.right_reasons * inv, acc.total * inv});
        lr *= cfg.lr_decay;
    }
    h.set_flat_params(theta);
    res.head = std::move(h);
    return res;
}

struct EditResult {
    LogicHead head;
    std::optional<std::string> warning;
};

/// Removes masked concepts by zeroing their first-layer columns in every class
/// block, then restores each row's pre-edit L2 norm. No retraining.
inline EditResult intervene_edit_norm(LogicHead h, std::span<const double> mask) {
    if (mask.size() != h.num_concepts()) throw DimensionError("edit mask length differs from the concept count");
    EditResult out;
    bool all = true;
    for (double m : mask) all = all && m != 0.0;
    if (all) out.warning = "every concept is masked; the edited head is constant";
    for (std::size_t r = 0; r < h.W1.rows(); ++r) {
        auto row = h.W1.row(r);
        double before = 0.0, after = 0.0;
        for (double x : row) before += x * x;
        for (std::size_t j = 0; j < row.size(); ++j)
            if (mask[j] != 0.0) row[j] = 0.0;
        for (double x : row) after += x * x;
        if (after > 0.0) {
            const double scale = std::sqrt(before / after);
            for (double& x : row) x *= scale;
        }
    }
    out.head = std::move(h);
    return out;
}

/// Mean |input gradient| per concept over a scored dataset.
inline Vector mean_abs_input_gradient(const LogicHead& h, const std::vector<Vector>& scores) {
    Vector out(h.num_concepts(), 0.0);
    for (const auto& s : scores) {
        const auto g = input_gradient(h, s);
        for (std::size_t j = 0; j < g.size(); ++j) out[j] += std::abs(g[j]);
    }
    for (double& v : out) v /= static_cast<double>(std::max<std::size_t>(1, scores.size()));
    return out;
}

}  // namespace xilbench
