#pragma once

#include <bit>
#include <cstring>
#include <initializer_list>
#include <string>

#include <json.hpp>

#include "xilbench/backbone.hpp"
#include "xilbench/concepts.hpp"
#include "xilbench/gccd.hpp"
#include "xilbench/synth/generate.hpp"
#include "xilbench/xil/rules.hpp"

namespace xilbench::io {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Real arrays: base64 over little-endian IEEE-754 doubles, so values survive
// a save/load cycle bit for bit.

inline constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(const unsigned char* p, std::size_t n) {
    std::string out;
    out.reserve((n + 2) / 3 * 4);
    for (std::size_t i = 0; i < n; i += 3) {
        const std::uint32_t v = (std::uint32_t(p[i]) << 16) | (i + 1 < n ? std::uint32_t(p[i + 1]) << 8 : 0u) |
                                (i + 2 < n ? std::uint32_t(p[i + 2]) : 0u);
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += i + 1 < n ? kB64[(v >> 6) & 63] : '=';
        out += i + 2 < n ? kB64[v & 63] : '=';
    }
    return out;
}

inline std::vector<unsigned char> base64_decode(std::string_view s) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    if (s.size() % 4 != 0) throw FormatError("base64: length is not a multiple of 4");
    std::vector<unsigned char> out;
    out.reserve(s.size() / 4 * 3);
    for (std::size_t i = 0; i < s.size(); i += 4) {
        int q[4];
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = s[i + k];
            if (c == '=' && i + 4 == s.size() && k >= 2) {
                q[k] = 0;
                ++pad;
                continue;
            }
            if (pad) throw FormatError("base64: data after padding");
            q[k] = val(c);
            if (q[k] < 0) throw FormatError("base64: invalid character");
        }
        const std::uint32_t v = (std::uint32_t(q[0]) << 18) | (std::uint32_t(q[1]) << 12) |
                                (std::uint32_t(q[2]) << 6) | std::uint32_t(q[3]);
        out.push_back(static_cast<unsigned char>(v >> 16));
        if (pad < 2) out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
        if (pad < 1) out.push_back(static_cast<unsigned char>(v & 0xFF));
    }
    return out;
}

inline std::string encode_reals(std::span<const double> v) {
    std::vector<unsigned char> bytes(v.size() * 8);
    for (std::size_t i = 0; i < v.size(); ++i) {
        auto bits = std::bit_cast<std::uint64_t>(v[i]);
        for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xFF);
    }
    return base64_encode(bytes.data(), bytes.size());
}

inline Vector decode_reals(std::string_view s) {
    const auto bytes = base64_decode(s);
    if (bytes.size() % 8 != 0) throw FormatError("real array: byte count is not a multiple of 8");
    Vector out(bytes.size() / 8);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= std::uint64_t(bytes[i * 8 + b]) << (8 * b);
        out[i] = std::bit_cast<double>(bits);
    }
    return out;
}

inline json pack(const Vector& v) { return {{"shape", {v.size()}}, {"f64le", encode_reals(v)}}; }

inline json pack(const Matrix& m) {
    return {{"shape", {m.rows(), m.cols()}}, {"f64le", encode_reals(m.data())}};
}

inline Vector unpack_vector(const json& j) {
    if (!j.is_object() || !j.contains("f64le") || !j.contains("shape") || j["shape"].size() != 1)
        throw FormatError("expected a packed vector");
    Vector v = decode_reals(j["f64le"].get<std::string>());
    if (v.size() != j["shape"][0].get<std::size_t>()) throw FormatError("packed vector: length does not match shape");
    return v;
}

inline Matrix unpack_matrix(const json& j) {
    if (!j.is_object() || !j.contains("f64le") || !j.contains("shape") || j["shape"].size() != 2)
        throw FormatError("expected a packed matrix");
    const auto r = j["shape"][0].get<std::size_t>(), c = j["shape"][1].get<std::size_t>();
    Vector v = decode_reals(j["f64le"].get<std::string>());
    if (v.size() != r * c) throw FormatError("packed matrix: length does not match shape");
    return Matrix(r, c, std::move(v));
}

// ---------------------------------------------------------------------------
// Configs. Readers start from the current value, so a partial object only
// overrides what it names; unknown keys are rejected to catch typos.

inline void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* what) {
    if (!j.is_object()) throw ParameterError(std::string(what) + " config must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw ParameterError(std::string(what) + " config: unknown key '" + key + "'");
    }
}

template <typename T>
void read(const json& j, const char* key, T& field) {
    if (!j.contains(key)) return;
    try {
        field = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ParameterError(std::string("config key '") + key + "' has the wrong type");
    }
}

inline json to_json(const SyntheticConfig& c) {
    json j{{"image_size", c.image_size},
           {"n_train", c.n_train},
           {"n_test", c.n_test},
           {"confounder", to_string(c.confounder)},
           {"confounded_class", c.confounded_class},
           {"train_confound_rate", c.train_confound_rate},
           {"test_confound_rate", c.test_confound_rate},
           {"other_class_confound_rate", c.other_class_confound_rate},
           {"seed", c.seed}};
    j["confounder_seed"] = c.confounder_seed ? json(*c.confounder_seed) : json(nullptr);
    return j;
}

inline void from_json(const json& j, SyntheticConfig& c) {
    reject_unknown(j, {"image_size", "n_train", "n_test", "confounder", "confounded_class", "train_confound_rate",
                       "test_confound_rate", "other_class_confound_rate", "seed", "confounder_seed"},
                   "synthetic");
    read(j, "image_size", c.image_size);
    read(j, "n_train", c.n_train);
    read(j, "n_test", c.n_test);
    if (j.contains("confounder")) {
        std::string name;
        read(j, "confounder", name);
        auto kind = confounder_from_string(name);
        if (!kind) throw ParameterError("unknown confounder '" + name + "'");
        c.confounder = *kind;
    }
    read(j, "confounded_class", c.confounded_class);
    read(j, "train_confound_rate", c.train_confound_rate);
    read(j, "test_confound_rate", c.test_confound_rate);
    read(j, "other_class_confound_rate", c.other_class_confound_rate);
    read(j, "seed", c.seed);
    if (j.contains("confounder_seed")) {
        if (j["confounder_seed"].is_null()) {
            c.confounder_seed.reset();
        } else {
            std::uint64_t s = 0;
            read(j, "confounder_seed", s);
            c.confounder_seed = s;
        }
    }
}

inline json to_json(const GccdParams& p) {
    return {{"subsample", p.subsample},
            {"knn_k", p.knn_k},
            {"n_clusters", p.n_clusters},
            {"k_max", p.k_max},
            {"downscale_factor", p.downscale_factor},
            {"tsne_perplexity", p.tsne_perplexity},
            {"tsne_iterations", p.tsne_iterations},
            {"epsilon", p.epsilon},
            {"seed", p.seed}};
}

inline void from_json(const json& j, GccdParams& p) {
    reject_unknown(j, {"subsample", "knn_k", "n_clusters", "k_max", "downscale_factor", "tsne_perplexity",
                       "tsne_iterations", "epsilon", "seed"},
                   "gccd");
    read(j, "subsample", p.subsample);
    read(j, "knn_k", p.knn_k);
    read(j, "n_clusters", p.n_clusters);
    read(j, "k_max", p.k_max);
    read(j, "downscale_factor", p.downscale_factor);
    read(j, "tsne_perplexity", p.tsne_perplexity);
    read(j, "tsne_iterations", p.tsne_iterations);
    read(j, "epsilon", p.epsilon);
    read(j, "seed", p.seed);
}

inline json to_json(const TrainConfig& c) {
    return {{"lambda1", c.lambda1},
            {"lambda2", c.lambda2},
            {"alpha_mix", c.alpha_mix},
            {"strategy", to_string(c.strategy)},
            {"optimizer", c.optimizer == Optimizer::adam ? "adam" : "gd"},
            {"lr", c.lr},
            {"lr_decay", c.lr_decay},
            {"epochs", c.epochs},
            {"batch", c.batch},
            {"seed", c.seed}};
}

inline void from_json(const json& j, TrainConfig& c) {
    reject_unknown(j, {"lambda1", "lambda2", "alpha_mix", "strategy", "optimizer", "lr", "lr_decay", "epochs",
                       "batch", "seed"},
                   "train");
    read(j, "lambda1", c.lambda1);
    read(j, "lambda2", c.lambda2);
    read(j, "alpha_mix", c.alpha_mix);
    if (j.contains("strategy")) {
        std::string s;
        read(j, "strategy", s);
        c.strategy = strategy_from_string(s);
    }
    if (j.contains("optimizer")) {
        std::string s;
        read(j, "optimizer", s);
        if (s == "adam") c.optimizer = Optimizer::adam;
        else if (s == "gd") c.optimizer = Optimizer::gd;
        else throw ParameterError("unknown optimizer '" + s + "'");
    }
    read(j, "lr", c.lr);
    read(j, "lr_decay", c.lr_decay);
    read(j, "epochs", c.epochs);
    read(j, "batch", c.batch);
    read(j, "seed", c.seed);
    c.validate();
}

inline json to_json(const BaselineOptions& o) {
    return {{"hidden_dim", o.hidden_dim}, {"epochs", o.epochs},           {"lr", o.lr},
            {"batch", o.batch},           {"num_classes", o.num_classes}, {"seed", o.seed}};
}

inline void from_json(const json& j, BaselineOptions& o) {
    reject_unknown(j, {"hidden_dim", "epochs", "lr", "batch", "num_classes", "seed"}, "baseline");
    read(j, "hidden_dim", o.hidden_dim);
    read(j, "epochs", o.epochs);
    read(j, "lr", o.lr);
    read(j, "batch", o.batch);
    read(j, "num_classes", o.num_classes);
    read(j, "seed", o.seed);
}

inline json to_json(const CavOptions& o) {
    return {{"beta", o.beta}, {"epochs", o.epochs}, {"heldout_fraction", o.heldout_fraction}, {"seed", o.seed}};
}

inline void from_json(const json& j, CavOptions& o) {
    reject_unknown(j, {"beta", "epochs", "heldout_fraction", "seed"}, "cav");
    read(j, "beta", o.beta);
    read(j, "epochs", o.epochs);
    read(j, "heldout_fraction", o.heldout_fraction);
    read(j, "seed", o.seed);
}

// ---------------------------------------------------------------------------
// Model artifacts

inline json to_json(const ToyBackbone& b) {
    return {{"kind", "toy"},
            {"W1", pack(b.W1)},
            {"b1", pack(b.b1)},
            {"W2", pack(b.W2)},
            {"b2", pack(b.b2)},
            {"pixel_mean", pack(b.pixel_mean)},
            {"image_height", b.image_height},
            {"image_width", b.image_width}};
}

inline json to_json(const Backbone& b) {
    if (const auto* toy = std::get_if<ToyBackbone>(&b)) return to_json(*toy);
    return {{"kind", "external"}};
}

inline Backbone backbone_from_json(const json& j) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "external") return ExternalBackbone{};
    if (kind != "toy") throw FormatError("unknown backbone kind '" + kind + "'");
    ToyBackbone b;
    b.W1 = unpack_matrix(j.at("W1"));
    b.b1 = unpack_vector(j.at("b1"));
    b.W2 = unpack_matrix(j.at("W2"));
    b.b2 = unpack_vector(j.at("b2"));
    b.pixel_mean = unpack_vector(j.at("pixel_mean"));
    b.image_height = j.at("image_height").get<std::size_t>();
    b.image_width = j.at("image_width").get<std::size_t>();
    return b;
}

inline json to_json(const ConceptBank& bank) {
    json cs = json::array();
    for (const auto& c : bank.concepts())
        cs.push_back({{"name", c.name},
                      {"w", pack(c.w)},
                      {"bias", c.bias},
                      {"provenance", to_string(c.provenance)},
                      {"train_accuracy", c.train_accuracy},
                      {"heldout_accuracy", c.heldout_accuracy}});
    return {{"embedding_dim", bank.embedding_dim()}, {"concepts", std::move(cs)}};
}

inline ConceptBank bank_from_json(const json& j) {
    ConceptBank bank(j.at("embedding_dim").get<std::size_t>());
    for (const auto& c : j.at("concepts")) {
        ConceptVector cv;
        cv.name = c.at("name").get<std::string>();
        cv.w = unpack_vector(c.at("w"));
        cv.bias = c.at("bias").get<double>();
        cv.provenance = provenance_from_string(c.at("provenance").get<std::string>());
        cv.train_accuracy = c.at("train_accuracy").get<double>();
        cv.heldout_accuracy = c.at("heldout_accuracy").get<double>();
        bank.add(std::move(cv));
    }
    return bank;
}

inline json to_json(const LogicHead& h) {
    return {{"W1", pack(h.W1)},
            {"b1", pack(h.b1)},
            {"W2", pack(h.W2)},
            {"b2", pack(h.b2)},
            {"temperature", h.temperature}};
}

inline LogicHead head_from_json(const json& j) {
    LogicHead h;
    h.W1 = unpack_matrix(j.at("W1"));
    h.b1 = unpack_vector(j.at("b1"));
    h.W2 = unpack_matrix(j.at("W2"));
    h.b2 = unpack_vector(j.at("b2"));
    h.temperature = j.at("temperature").get<double>();
    if (h.b1.size() != h.W1.rows() || h.W2.rows() * h.W2.cols() != h.W1.rows() || h.b2.size() != h.W2.rows())
        throw FormatError("logic head: inconsistent parameter shapes");
    return h;
}

inline json to_json(const RuleTable& t) {
    return {{"H", pack(t.H)}, {"rules", t.rules}, {"per_sample", t.per_sample}};
}

inline RuleTable rule_table_from_json(const json& j) {
    RuleTable t;
    t.H = unpack_matrix(j.at("H"));
    t.rules = j.at("rules").get<std::vector<std::string>>();
    t.per_sample = j.at("per_sample").get<bool>();
    for (double v : t.H.data())
        if (v != 0.0 && v != 1.0) throw FormatError("rule table entries must be 0 or 1");
    return t;
}

inline json to_json(const ClusterReport& r) {
    json labels = json::array();
    for (const auto& l : r.labels) labels.push_back(l ? json(*l) : json(nullptr));
    return {{"class_id", r.class_id},
            {"sample_ids", r.sample_ids},
            {"member_ids", r.member_ids},
            {"spectral_embedding", pack(r.spectral_embedding)},
            {"tsne_coords", pack(r.tsne_coords)},
            {"medoid_ids", r.medoid_ids},
            {"labels", std::move(labels)},
            {"eigenvalues", pack(r.eigenvalues)}};
}

inline ClusterReport cluster_report_from_json(const json& j) {
    ClusterReport r;
    r.class_id = j.at("class_id").get<int>();
    r.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
    r.member_ids = j.at("member_ids").get<std::vector<std::vector<std::string>>>();
    r.spectral_embedding = unpack_matrix(j.at("spectral_embedding"));
    r.tsne_coords = unpack_matrix(j.at("tsne_coords"));
    r.medoid_ids = j.at("medoid_ids").get<std::vector<std::string>>();
    for (const auto& l : j.at("labels")) {
        if (l.is_null()) r.labels.emplace_back();
        else r.labels.emplace_back(l.get<std::string>());
    }
    r.eigenvalues = unpack_vector(j.at("eigenvalues"));
    if (r.labels.size() != r.member_ids.size() || r.medoid_ids.size() != r.member_ids.size())
        throw FormatError("cluster report: per-cluster arrays differ in length");
    return r;
}

inline json to_json(const LossTerms& t) {
    return {{"cross_entropy", t.cross_entropy},
            {"regularizer", t.regularizer},
            {"right_reasons", t.right_reasons},
            {"total", t.total}};
}

inline LossTerms loss_terms_from_json(const json& j) {
    return {j.at("cross_entropy").get<double>(), j.at("regularizer").get<double>(),
            j.at("right_reasons").get<double>(), j.at("total").get<double>()};
}

// ---------------------------------------------------------------------------
// Reports for the UI: plain numeric arrays, no base64.

inline json plain(const Matrix& m) {
    json rows = json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
    return rows;
}

inline json to_json(const ExplanationReport& r) {
    return {{"concepts", r.concepts},
            {"mean_activations", r.mean_activations},
            {"alpha", r.alpha},
            {"logic_rules", r.logic_rules},
            {"input_gradients", plain(r.input_gradients)},
            {"warnings", r.warnings}};
}

}  // namespace xilbench::io
