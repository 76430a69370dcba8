#pragma once

#include <map>
#include <optional>
#include <regex>
#include <string>

#include "xilbench/xil/training.hpp"

namespace xilbench {

struct RuleExtraction {
    std::string formula;  ///< empty when nothing qualifies
    std::optional<std::string> warning;
};

struct RuleOptions {
    double importance_threshold = 0.5;
    /// Minimum number of samples a conjunction must cover; unset = 5% of the
    /// correctly classified class samples (at least 1).
    std::optional<std::size_t> samples_threshold;
};

/// First-order explanation for class `cls`: `<head_name> ← t1 ∨ t2 ∨ ...`,
/// each term a conjunction over the concepts whose attention reaches the
/// importance threshold, negated where the binarized score (s > 0) is 0.
inline RuleExtraction extract_rules(const LogicHead& h, const std::vector<Vector>& scores,
                                    const std::vector<int>& labels, int cls,
                                    const std::vector<std::string>& concept_names, const RuleOptions& opt = {},
                                    const std::string& head_name = "class") {
    if (concept_names.size() != h.num_concepts()) throw DimensionError("extract_rules: concept name count");
    if (scores.size() != labels.size()) throw DimensionError("extract_rules: scores and labels differ in length");
    if (cls < 0 || static_cast<std::size_t>(cls) >= h.num_classes()) throw ParameterError("extract_rules: class");

    RuleExtraction out;
    std::vector<std::size_t> literals;
    std::vector<std::string> patterns;
    for (std::size_t b = 0; b < scores.size(); ++b) {
        if (labels[b] != cls) continue;
        const auto fw = forward(h, scores[b]);
        const auto pred = std::max_element(fw.logits.begin(), fw.logits.end()) - fw.logits.begin();
        if (pred != cls) continue;
        if (literals.empty() && patterns.empty()) {
            for (std::size_t j = 0; j < h.num_concepts(); ++j)
                if (fw.alpha[static_cast<std::size_t>(cls)][j] >= opt.importance_threshold) literals.push_back(j);
        }
        std::string key;
        for (std::size_t j : literals) key.push_back(scores[b][j] > 0.0 ? '1' : '0');
        patterns.push_back(std::move(key));
    }
    if (patterns.empty()) {
        out.warning = "no correctly classified samples of class " + std::to_string(cls);
        return out;
    }
    if (literals.empty()) return out;

    std::map<std::string, std::size_t> counts;
    for (const auto& p : patterns) ++counts[p];
    const std::size_t min_count =
        opt.samples_threshold.value_or(std::max<std::size_t>(1, (patterns.size() * 5 + 99) / 100));
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

    std::vector<std::string> terms;
    for (const auto& [key, n] : ranked) {
        if (n < min_count) break;
        std::string term;
        for (std::size_t i = 0; i < literals.size(); ++i) {
            if (i) term += " ∧ ";
            if (key[i] == '0') term += "¬";
            term += concept_names[literals[i]];
        }
        terms.push_back(std::move(term));
    }
    if (terms.empty()) return out;
    out.formula = head_name + " ← ";
    for (std::size_t i = 0; i < terms.size(); ++i) out.formula += (i ? " ∨ " : "") + terms[i];
    return out;
}

struct ExplanationReport {
    std::vector<std::string> concepts;
    std::vector<Vector> mean_activations;  ///< per class, mean concept scores of its samples
    std::vector<Vector> alpha;             ///< per class attention
    std::vector<std::string> logic_rules;  ///< per class
    Matrix input_gradients;                ///< samples x concepts
    std::vector<std::string> warnings;

    bool operator==(const ExplanationReport&) const = default;
};

inline ExplanationReport explain(const LogicHead& h, const std::vector<std::string>& concept_names,
                                 const std::vector<Vector>& scores, const std::vector<int>& labels,
                                 const RuleOptions& opt = {}) {
    if (concept_names.size() != h.num_concepts()) throw DimensionError("explain: concept name count");
    const std::size_t p = h.num_classes(), d = h.num_concepts();
    ExplanationReport r;
    r.concepts = concept_names;
    r.mean_activations.assign(p, Vector(d, 0.0));
    std::vector<std::size_t> count(p, 0);
    r.input_gradients = Matrix(scores.size(), d);
    for (std::size_t b = 0; b < scores.size(); ++b) {
        const auto c = static_cast<std::size_t>(labels.at(b));
        if (c >= p) throw DataError("explain: label out of range");
        for (std::size_t j = 0; j < d; ++j) r.mean_activations[c][j] += scores[b][j];
        ++count[c];
        const auto g = input_gradient(h, scores[b]);
        std::copy(g.begin(), g.end(), r.input_gradients.row(b).begin());
    }
    for (std::size_t c = 0; c < p; ++c)
        if (count[c] > 0)
            for (double& v : r.mean_activations[c]) v /= static_cast<double>(count[c]);
    const Vector flat = h.flat_params();
    r.alpha = head::attention(head::view(h, flat));
    for (std::size_t c = 0; c < p; ++c) {
        auto rule = extract_rules(h, scores, labels, static_cast<int>(c), concept_names, opt,
                                  "class_" + std::to_string(c));
        r.logic_rules.push_back(rule.formula);
        if (rule.warning) r.warnings.push_back(*rule.warning);
    }
    return r;
}

/// Parses "never focus on X" or "ignore X" and returns the concept name.
inline std::string parse_rule(const std::string& text) {
    static const std::regex re(R"re(^\s*(?:never\s+focus\s+on|ignore)\s+"?([A-Za-z0-9_\-]+)"?\s*$)re",
                               std::regex::icase);
    std::smatch m;
    if (!std::regex_match(text, m, re))
        throw ParameterError("cannot parse rule '" + text + "'; expected 'never focus on <concept>'");
    return m[1].str();
}

/// Returns a copy of `table` with the rule's concept column set to ones for
/// every row and the rule text appended.
inline RuleTable add_rule(RuleTable table, const std::string& text, const std::vector<std::string>& concept_names) {
    const std::string name = parse_rule(text);
    const auto it = std::find(concept_names.begin(), concept_names.end(), name);
    if (it == concept_names.end()) throw ParameterError("rule names unknown concept '" + name + "'");
    if (table.H.cols() != concept_names.size()) throw DimensionError("rule table width differs from the bank");
    const auto j = static_cast<std::size_t>(it - concept_names.begin());
    for (std::size_t r = 0; r < table.H.rows(); ++r) table.H(r, j) = 1.0;
    table.rules.push_back(text);
    return table;
}

/// Union of the masked columns of a rule table (any row marked).
inline Vector rule_mask(const RuleTable& table) {
    Vector mask(table.H.cols(), 0.0);
    for (std::size_t r = 0; r < table.H.rows(); ++r)
        for (std::size_t j = 0; j < table.H.cols(); ++j)
            if (table.H(r, j) != 0.0) mask[j] = 1.0;
    return mask;
}

}  // namespace xilbench
