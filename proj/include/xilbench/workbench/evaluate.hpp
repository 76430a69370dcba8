#pragma once

#include <optional>
#include <string>

#include "xilbench/backbone.hpp"
#include "xilbench/numerics/metrics.hpp"
#include "xilbench/xil/training.hpp"

namespace xilbench {

/// Metrics of one model variant ("cnn", "cav" or "xil") on one split.
struct EvalReport {
    std::string model;
    Vector per_class_accuracy;
    double overall_accuracy = 0.0;
    double confounded_class_accuracy = 0.0;
    std::optional<double> auc;           ///< binary tasks only
    Vector mean_abs_input_gradient;      ///< per concept; empty for the CNN

    bool operator==(const EvalReport&) const = default;
};

namespace eval_detail {

inline EvalReport tally(std::string model, const std::vector<int>& predicted, const std::vector<int>& labels,
                        const std::vector<double>& positive_score, std::size_t classes, int confounded_class) {
    if (labels.empty()) throw DataError("evaluate: split is empty");
    EvalReport r;
    r.model = std::move(model);
    Vector hit(classes, 0.0), count(classes, 0.0);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto y = static_cast<std::size_t>(labels[i]);
        if (y >= classes) throw DataError("evaluate: label " + std::to_string(labels[i]) + " out of range");
        count[y] += 1.0;
        if (predicted[i] == labels[i]) {
            hit[y] += 1.0;
            ++ok;
        }
    }
    r.per_class_accuracy.resize(classes);
    for (std::size_t c = 0; c < classes; ++c) r.per_class_accuracy[c] = count[c] > 0.0 ? hit[c] / count[c] : 0.0;
    r.overall_accuracy = static_cast<double>(ok) / static_cast<double>(labels.size());
    if (confounded_class >= 0 && static_cast<std::size_t>(confounded_class) < classes)
        r.confounded_class_accuracy = r.per_class_accuracy[static_cast<std::size_t>(confounded_class)];
    if (classes == 2) {
        std::vector<int> pos(labels.size());
        bool both = false;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            pos[i] = labels[i] == 1;
            both = both || pos[i] != pos[0];
        }
        if (both) r.auc = roc_auc(positive_score, pos);
    }
    return r;
}

}  // namespace eval_detail

inline EvalReport evaluate_backbone(const ToyBackbone& b, const std::vector<Sample>& samples, int confounded_class) {
    std::vector<int> pred, labels;
    std::vector<double> score;
    for (const auto& s : samples) {
        const Vector z = logits(b, s);
        pred.push_back(static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin()));
        labels.push_back(s.label);
        if (z.size() == 2) score.push_back(z[1] - z[0]);
    }
    return eval_detail::tally("cnn", pred, labels, score, b.num_classes(), confounded_class);
}

inline EvalReport evaluate_head(std::string model, const LogicHead& h, const std::vector<Vector>& scores,
                                const std::vector<int>& labels, int confounded_class) {
    std::vector<int> pred;
    std::vector<double> score;
    for (const auto& s : scores) {
        const auto out = forward(h, s);
        pred.push_back(static_cast<int>(std::max_element(out.logits.begin(), out.logits.end()) - out.logits.begin()));
        if (out.logits.size() == 2) score.push_back(out.logits[1] - out.logits[0]);
    }
    auto r = eval_detail::tally(std::move(model), pred, labels, score, h.num_classes(), confounded_class);
    r.mean_abs_input_gradient = mean_abs_input_gradient(h, scores);
    return r;
}

}  // namespace xilbench
