#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "xilbench/numerics/matrix.hpp"

namespace xilbench {

enum class Confounder { dark_corner, dark_border, ruler, hair, air_pockets, global_brightness };

inline constexpr std::array<Confounder, 6> kAllConfounders = {
    Confounder::dark_corner, Confounder::dark_border, Confounder::ruler,
    Confounder::hair,        Confounder::air_pockets, Confounder::global_brightness};

inline std::string_view to_string(Confounder c) {
    switch (c) {
        case Confounder::dark_corner: return "dark_corner";
        case Confounder::dark_border: return "dark_border";
        case Confounder::ruler: return "ruler";
        case Confounder::hair: return "hair";
        case Confounder::air_pockets: return "air_pockets";
        case Confounder::global_brightness: return "global_brightness";
    }
    return "?";
}

inline std::optional<Confounder> confounder_from_string(std::string_view s) {
    for (Confounder c : kAllConfounders)
        if (to_string(c) == s) return c;
    return std::nullopt;
}

enum class ConceptTruth { absent, present, unknown };

/// Lesion concepts the synthetic generator annotates alongside its confounder.
inline constexpr std::string_view kIrregularBorder = "irregular_border";
inline constexpr std::string_view kMultiTone = "multi_tone";

struct Sample {
    std::string id;
    Grid2D image;  ///< empty when the sample came from an embedding-only record
    int label = 0;
    std::set<std::string> confounder_flags;
    std::map<std::string, ConceptTruth> concept_truth;
    std::optional<Vector> embedding;
    std::optional<std::vector<Grid2D>> heatmaps;  ///< one per class

    ConceptTruth truth(const std::string& concept_name) const {
        auto it = concept_truth.find(concept_name);
        return it == concept_truth.end() ? ConceptTruth::unknown : it->second;
    }

    bool operator==(const Sample&) const = default;
};

}  // namespace xilbench
