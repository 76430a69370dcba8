#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "xilbench/gccd.hpp"
#include "xilbench/numerics/matrix.hpp"
#include "xilbench/numerics/rng.hpp"

namespace xilbench {

enum class Provenance { cluster, probe, manual };

inline std::string_view to_string(Provenance p) {
    switch (p) {
        case Provenance::cluster: return "cluster";
        case Provenance::probe: return "probe";
        case Provenance::manual: return "manual";
    }
    return "?";
}

inline Provenance provenance_from_string(std::string_view s) {
    if (s == "cluster") return Provenance::cluster;
    if (s == "probe") return Provenance::probe;
    if (s == "manual") return Provenance::manual;
    throw FormatError("unknown provenance '" + std::string(s) + "'");
}

/// A concept activation vector: the normal and bias of a hyperplane
/// separating concept exemplars from non-exemplars in embedding space.
struct ConceptVector {
    std::string name;
    Vector w;
    double bias = 0.0;
    Provenance provenance = Provenance::manual;
    double train_accuracy = 0.0;
    double heldout_accuracy = 0.0;

    bool operator==(const ConceptVector&) const = default;
};

/// Ordered CAV collection. The order is the concept index used by every
/// downstream score vector, rule table and head column.
class ConceptBank {
public:
    ConceptBank() = default;
    explicit ConceptBank(std::size_t embedding_dim) : embedding_dim_(embedding_dim) {}

    void add(ConceptVector c) {
        if (c.w.size() != embedding_dim_)
            throw DimensionError("concept '" + c.name + "' has dimension " + std::to_string(c.w.size()) +
                                 ", bank expects " + std::to_string(embedding_dim_));
        if (index_of(c.name)) throw NameCollisionError("concept name '" + c.name + "' already in the bank");
        double norm = 0.0;
        for (double v : c.w) norm += v * v;
        if (!(norm > 0.0)) throw DegeneracyError("concept '" + c.name + "' has a zero normal");
        concepts_.push_back(std::move(c));
    }

    std::optional<std::size_t> index_of(std::string_view name) const {
        for (std::size_t i = 0; i < concepts_.size(); ++i)
            if (concepts_[i].name == name) return i;
        return std::nullopt;
    }

    const std::vector<ConceptVector>& concepts() const noexcept { return concepts_; }
    std::size_t size() const noexcept { return concepts_.size(); }
    std::size_t embedding_dim() const noexcept { return embedding_dim_; }
    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& c : concepts_) out.push_back(c.name);
        return out;
    }

    bool operator==(const ConceptBank&) const = default;

private:
    std::size_t embedding_dim_ = 0;
    std::vector<ConceptVector> concepts_;
};

struct CavOptions {
    double beta = 0.14;
    std::size_t epochs = 100;
    double heldout_fraction = 0.2;
    std::uint64_t seed = 0;

    bool operator==(const CavOptions&) const = default;
};

namespace cav_detail {

inline double accuracy(const Vector& w, double bias, const std::vector<const Vector*>& xs, const std::vector<int>& ys) {
    if (xs.empty()) return 0.0;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double f = dot(w, *xs[i]) + bias;
        ok += (f > 0.0) == (ys[i] > 0);
    }
    return static_cast<double>(ok) / static_cast<double>(xs.size());
}

}  // namespace cav_detail

/// Linear SVM by Pegasos-style subgradient descent on
///   1/2 ||w||^2 + beta * sum hinge(y (w.x + b))
/// (beta plays the role of an SVM's C), i.e. lambda/2 ||w||^2 + mean hinge
/// with lambda = 1 / (beta n), step 1/(lambda t).
/// Exemplars are centred internally and the bias unregularized; the returned
/// bias is expressed for uncentred embeddings. A stratified `heldout_fraction`
/// of each class is held out for the heldout accuracy (which falls back to the
/// train accuracy when the split leaves nothing out).
inline ConceptVector learn_cav(const std::vector<Vector>& positives, const std::vector<Vector>& negatives,
                               const CavOptions& opt, std::string name = {}) {
    if (positives.empty() || negatives.empty()) throw DataError("learn_cav: both exemplar sets must be non-empty");
    const std::size_t dim = positives.front().size();
    for (const auto* set : {&positives, &negatives})
        for (const auto& v : *set)
            if (v.size() != dim) throw DataError("learn_cav: exemplar dimensions differ");
    {
        bool all_same = true;
        const Vector& ref = positives.front();
        for (const auto* set : {&positives, &negatives})
            for (const auto& v : *set)
                if (v != ref) all_same = false;
        if (all_same) throw DegeneracyError("learn_cav: all exemplars are identical across classes");
    }

    Rng rng(derive_seed(opt.seed, "cav/split"));
    std::vector<const Vector*> train_x, held_x;
    std::vector<int> train_y, held_y;
    for (int label : {1, -1}) {
        const auto& set = label > 0 ? positives : negatives;
        std::vector<std::size_t> idx(set.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto n_held = static_cast<std::size_t>(std::floor(opt.heldout_fraction * static_cast<double>(set.size())));
        for (std::size_t t = 0; t < idx.size(); ++t) {
            if (t < n_held) {
                held_x.push_back(&set[idx[t]]);
                held_y.push_back(label);
            } else {
                train_x.push_back(&set[idx[t]]);
                train_y.push_back(label);
            }
        }
    }

    Vector mean(dim, 0.0);
    for (const Vector* x : train_x)
        for (std::size_t j = 0; j < dim; ++j) mean[j] += (*x)[j];
    for (double& v : mean) v /= static_cast<double>(train_x.size());

    Vector w(dim, 0.0);
    double b = 0.0;
    std::vector<std::size_t> order(train_x.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(opt.seed, "cav/shuffle"));
    std::size_t t = 0;
    const double lambda = 1.0 / (opt.beta * static_cast<double>(train_x.size()));
    const double radius = 1.0 / std::sqrt(lambda);
    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t i : order) {
            ++t;
            const double eta = 1.0 / (lambda * static_cast<double>(t));
            const Vector& x = *train_x[i];
            const double y = train_y[i];
            double f = b;
            for (std::size_t j = 0; j < dim; ++j) f += w[j] * (x[j] - mean[j]);
            const double shrink = 1.0 - eta * lambda;
            for (double& v : w) v *= shrink;
            if (y * f < 1.0) {
                for (std::size_t j = 0; j < dim; ++j) w[j] += eta * y * (x[j] - mean[j]);
                b += eta * y;
            }
            double norm = 0.0;
            for (double v : w) norm += v * v;
            norm = std::sqrt(norm);
            if (norm > radius)
                for (double& v : w) v *= radius / norm;
        }
    }

    double wnorm = 0.0;
    for (double v : w) wnorm += v * v;
    if (!(wnorm > 0.0)) throw DegeneracyError("learn_cav: learned a zero normal");

    ConceptVector cv;
    cv.name = std::move(name);
    cv.bias = b - dot(w, mean);
    cv.w = std::move(w);
    cv.train_accuracy = cav_detail::accuracy(cv.w, cv.bias, train_x, train_y);
    cv.heldout_accuracy = held_x.empty() ? cv.train_accuracy : cav_detail::accuracy(cv.w, cv.bias, held_x, held_y);
    return cv;
}

/// Per-concept projection coefficients s_j = <h, w_j> / ||w_j||^2. With
/// `signed_distance` the bias participates: s_j = (<h, w_j> + bias_j) / ||w_j||.
inline Vector project(std::span<const double> h, const ConceptBank& bank, bool signed_distance = false) {
    if (h.size() != bank.embedding_dim())
        throw DataError("project: embedding has dimension " + std::to_string(h.size()) + ", bank expects " +
                        std::to_string(bank.embedding_dim()));
    Vector s(bank.size());
    for (std::size_t j = 0; j < bank.size(); ++j) {
        const auto& c = bank.concepts()[j];
        const double nn = dot(c.w, c.w);
        s[j] = signed_distance ? (dot(h, c.w) + c.bias) / std::sqrt(nn) : dot(h, c.w) / nn;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Bank assembly

/// A labeled cluster chosen for harvesting as a confounding concept.
struct ClusterHarvest {
    const ClusterReport* report = nullptr;
    std::size_t cluster = 0;
};

/// Expert concept defined by exemplar sample ids.
struct ProbeDefinition {
    std::string name;
    std::vector<std::string> positive_ids;
    std::vector<std::string> negative_ids;
};

struct BankOptions {
    CavOptions cav;
    std::size_t min_exemplars = 70;
    bool signed_distance = false;
};

/// Assembles B_c = C_conf (from labeled clusters) followed by C_exp (probe
/// definitions). Cluster concepts use members as positives and an equal-size
/// draw from sibling clusters of the same report as negatives.
inline ConceptBank build_bank(const std::vector<ClusterHarvest>& harvest, const std::vector<ProbeDefinition>& probes,
                              const Backbone& backbone, const std::vector<const Sample*>& data,
                              const BankOptions& opt) {
    std::unordered_map<std::string, const Sample*> by_id;
    for (const Sample* s : data) by_id.emplace(s->id, s);
    auto embed = [&](const std::vector<std::string>& ids, const std::string& concept_name) {
        std::vector<Vector> out;
        out.reserve(ids.size());
        for (const auto& id : ids) {
            auto it = by_id.find(id);
            if (it == by_id.end()) throw DataError("concept '" + concept_name + "': unknown sample id '" + id + "'");
            out.push_back(extract(backbone, *it->second));
        }
        return out;
    };

    std::optional<ConceptBank> bank;
    std::vector<std::string> seen;
    auto add = [&](ConceptVector cv) {
        if (std::find(seen.begin(), seen.end(), cv.name) != seen.end())
            throw NameCollisionError("concept name '" + cv.name + "' is defined more than once");
        seen.push_back(cv.name);
        if (!bank) bank.emplace(cv.w.size());
        bank->add(std::move(cv));
    };

    for (const auto& h : harvest) {
        if (!h.report || h.cluster >= h.report->num_clusters())
            throw ParameterError("build_bank: harvested cluster does not exist");
        const auto& label = h.report->labels[h.cluster];
        if (!label || label->empty())
            throw WorkflowError("build_bank: cluster " + std::to_string(h.cluster) + " of class " +
                                std::to_string(h.report->class_id) + " is unlabeled and cannot be harvested");
        std::vector<std::string> members = h.report->member_ids[h.cluster];
        std::vector<std::string> siblings;
        for (std::size_t c = 0; c < h.report->num_clusters(); ++c)
            if (c != h.cluster)
                siblings.insert(siblings.end(), h.report->member_ids[c].begin(), h.report->member_ids[c].end());
        const std::size_t n = std::min(members.size(), siblings.size());
        if (n < opt.min_exemplars)
            throw CountError("concept '" + *label + "': cluster has " + std::to_string(members.size()) +
                             " members and " + std::to_string(siblings.size()) + " sibling samples, need " +
                             std::to_string(opt.min_exemplars) + " of each");
        Rng rng(derive_seed(opt.cav.seed, "bank/harvest/" + *label));
        std::shuffle(members.begin(), members.end(), rng);
        std::shuffle(siblings.begin(), siblings.end(), rng);
        members.resize(n);
        siblings.resize(n);
        auto cv = learn_cav(embed(members, *label), embed(siblings, *label), opt.cav, *label);
        cv.provenance = Provenance::cluster;
        add(std::move(cv));
    }
    for (const auto& p : probes) {
        if (p.positive_ids.size() < opt.min_exemplars || p.negative_ids.size() < opt.min_exemplars)
            throw CountError("concept '" + p.name + "': " + std::to_string(p.positive_ids.size()) + " positive / " +
                             std::to_string(p.negative_ids.size()) + " negative exemplars, need " +
                             std::to_string(opt.min_exemplars) + " of each");
        auto cv = learn_cav(embed(p.positive_ids, p.name), embed(p.negative_ids, p.name), opt.cav, p.name);
        cv.provenance = Provenance::probe;
        add(std::move(cv));
    }
    if (!bank) throw DataError("build_bank: no concepts to learn");
    return std::move(*bank);
}

}  // namespace xilbench
