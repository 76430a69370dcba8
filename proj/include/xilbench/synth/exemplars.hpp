#pragma once

#include <algorithm>

#include "xilbench/numerics/rng.hpp"
#include "xilbench/synth/sample.hpp"

namespace xilbench {

struct ExemplarSplit {
    std::vector<std::size_t> positives;  ///< indices into the sample list
    std::vector<std::size_t> negatives;
};

/// Draws disjoint positive/negative exemplar sets for one concept without
/// replacement. Samples whose truth for the concept is unknown are never used.
inline ExemplarSplit split_concept_exemplars(const std::vector<Sample>& samples, const std::string& concept_name,
                                             std::size_t n_pos, std::size_t n_neg, std::uint64_t seed) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        switch (samples[i].truth(concept_name)) {
            case ConceptTruth::present: pos.push_back(i); break;
            case ConceptTruth::absent: neg.push_back(i); break;
            case ConceptTruth::unknown: break;
        }
    }
    if (pos.size() < n_pos || neg.size() < n_neg)
        throw CountError("concept '" + concept_name + "': requested " + std::to_string(n_pos) + " positive / " +
                         std::to_string(n_neg) + " negative exemplars, available " + std::to_string(pos.size()) +
                         " / " + std::to_string(neg.size()));
    Rng rng(derive_seed(seed, "exemplars/" + concept_name));
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);
    pos.resize(n_pos);
    neg.resize(n_neg);
    return {std::move(pos), std::move(neg)};
}

}  // namespace xilbench
