#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "xilbench/workbench/evaluate.hpp"
#include "xilbench/workbench/serialize.hpp"

namespace xilbench {

namespace fs = std::filesystem;

struct BaselineConfig {
    BaselineOptions options{.hidden_dim = 64};
    /// Epochs on an unconfounded corpus before fine-tuning on the project data
    /// (synthetic datasets only); 0 trains from scratch.
    std::size_t pretrain_epochs = 10;

    bool operator==(const BaselineConfig&) const = default;
};

struct BankConfig {
    std::size_t n_exemplars = 70;  ///< per side, per concept
    std::size_t probe_size = 400;  ///< synthetic probe corpus size
    CavOptions cav;
    bool signed_distance = false;

    bool operator==(const BankConfig&) const = default;
};

struct HeadConfig {
    std::size_t hidden_per_class = 10;
    double temperature = 1.0;

    bool operator==(const HeadConfig&) const = default;
};

struct ProjectConfig {
    SyntheticConfig synthetic;
    BaselineConfig baseline;
    GccdParams gccd;
    BankConfig bank;
    HeadConfig head;
    TrainConfig train;

    /// Every stochastic stage follows the project seed.
    void apply_seed(std::uint64_t seed) {
        synthetic.seed = seed;
        baseline.options.seed = seed;
        gccd.seed = seed;
        bank.cav.seed = seed;
        train.seed = seed;
    }

    bool operator==(const ProjectConfig&) const = default;
};

struct DatasetRef {
    std::string kind;  ///< "synthetic" or "records"
    std::string train_path, test_path;  ///< records only, relative to the project file

    bool operator==(const DatasetRef&) const = default;
};

/// Config hash an artifact was produced under, and the step that produced it.
struct Stamp {
    std::string step;
    std::string config_hash;

    bool operator==(const Stamp&) const = default;
};

struct RuleVersion {
    std::size_t version = 0;
    RuleTable table;
    std::string config_hash;

    bool operator==(const RuleVersion&) const = default;
};

struct HeadArtifact {
    LogicHead head;
    Strategy strategy = Strategy::rrr;
    std::size_t rules_version = 0;  ///< 0 = trained without interaction
    std::vector<LossTerms> history;

    bool operator==(const HeadArtifact&) const = default;
};

struct EvalRecord {
    std::string split;
    std::string config_hash;
    std::vector<EvalReport> reports;

    bool operator==(const EvalRecord&) const = default;
};

struct Project {
    std::string id;
    std::uint64_t seed = 0;
    ProjectConfig config;
    std::map<std::string, nlohmann::json> config_snapshots;  ///< hash -> config
    std::map<std::string, Stamp> stamps;                     ///< artifact -> stamp
    std::optional<DatasetRef> dataset;
    std::optional<Backbone> backbone;
    std::vector<ClusterReport> clusters;  ///< one per discovered class
    std::optional<ConceptBank> bank;
    std::vector<RuleVersion> rules;  ///< append-only
    std::optional<HeadArtifact> head_cav, head_xil;
    std::vector<EvalRecord> evals;

    const ClusterReport* clusters_for(int cls) const {
        for (const auto& r : clusters)
            if (r.class_id == cls) return &r;
        return nullptr;
    }
    ClusterReport* clusters_for(int cls) {
        return const_cast<ClusterReport*>(std::as_const(*this).clusters_for(cls));
    }

    /// Current rule table, or an empty one sized to the bank.
    RuleTable current_rules() const {
        if (!rules.empty()) return rules.back().table;
        return RuleTable::empty(bank ? bank->size() : 0);
    }

    bool operator==(const Project&) const = default;
};

// ---------------------------------------------------------------------------
// JSON

namespace io {

inline json to_json(const ProjectConfig& c) {
    json baseline = to_json(c.baseline.options);
    baseline["pretrain_epochs"] = c.baseline.pretrain_epochs;
    return {{"synthetic", to_json(c.synthetic)},
            {"baseline", std::move(baseline)},
            {"gccd", to_json(c.gccd)},
            {"bank",
             {{"n_exemplars", c.bank.n_exemplars},
              {"probe_size", c.bank.probe_size},
              {"cav", to_json(c.bank.cav)},
              {"signed_distance", c.bank.signed_distance}}},
            {"head", {{"hidden_per_class", c.head.hidden_per_class}, {"temperature", c.head.temperature}}},
            {"train", to_json(c.train)}};
}

/// Overlays a (possibly partial) config object onto `out`. On error `out` is
/// left unchanged.
inline void merge_config(const json& j, ProjectConfig& out) {
    ProjectConfig c = out;
    reject_unknown(j, {"synthetic", "baseline", "gccd", "bank", "head", "train"}, "project");
    if (j.contains("synthetic")) from_json(j["synthetic"], c.synthetic);
    if (j.contains("baseline")) {
        json b = j["baseline"];
        if (b.is_object() && b.contains("pretrain_epochs")) {
            read(b, "pretrain_epochs", c.baseline.pretrain_epochs);
            b.erase("pretrain_epochs");
        }
        from_json(b, c.baseline.options);
    }
    if (j.contains("gccd")) from_json(j["gccd"], c.gccd);
    if (j.contains("bank")) {
        const json& b = j["bank"];
        reject_unknown(b, {"n_exemplars", "probe_size", "cav", "signed_distance"}, "bank");
        read(b, "n_exemplars", c.bank.n_exemplars);
        read(b, "probe_size", c.bank.probe_size);
        read(b, "signed_distance", c.bank.signed_distance);
        if (b.contains("cav")) from_json(b["cav"], c.bank.cav);
    }
    if (j.contains("head")) {
        const json& h = j["head"];
        reject_unknown(h, {"hidden_per_class", "temperature"}, "head");
        read(h, "hidden_per_class", c.head.hidden_per_class);
        read(h, "temperature", c.head.temperature);
        if (c.head.hidden_per_class == 0) throw ParameterError("head config: hidden_per_class must be > 0");
        if (!(c.head.temperature > 0.0)) throw ParameterError("head config: temperature must be > 0");
    }
    if (j.contains("train")) from_json(j["train"], c.train);
    out = std::move(c);
}

inline json to_json(const EvalReport& r) {
    json j{{"model", r.model},
           {"per_class_accuracy", r.per_class_accuracy},
           {"overall_accuracy", r.overall_accuracy},
           {"confounded_class_accuracy", r.confounded_class_accuracy},
           {"mean_abs_input_gradient", r.mean_abs_input_gradient}};
    j["auc"] = r.auc ? json(*r.auc) : json(nullptr);
    return j;
}

inline EvalReport eval_report_from_json(const json& j) {
    EvalReport r;
    r.model = j.at("model").get<std::string>();
    r.per_class_accuracy = j.at("per_class_accuracy").get<Vector>();
    r.overall_accuracy = j.at("overall_accuracy").get<double>();
    r.confounded_class_accuracy = j.at("confounded_class_accuracy").get<double>();
    if (!j.at("auc").is_null()) r.auc = j["auc"].get<double>();
    r.mean_abs_input_gradient = j.at("mean_abs_input_gradient").get<Vector>();
    return r;
}

inline json to_json(const HeadArtifact& h) {
    json hist = json::array();
    for (const auto& t : h.history) hist.push_back(to_json(t));
    return {{"head", to_json(h.head)},
            {"strategy", to_string(h.strategy)},
            {"rules_version", h.rules_version},
            {"history", std::move(hist)}};
}

inline HeadArtifact head_artifact_from_json(const json& j) {
    HeadArtifact h;
    h.head = head_from_json(j.at("head"));
    h.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    h.rules_version = j.at("rules_version").get<std::size_t>();
    for (const auto& t : j.at("history")) h.history.push_back(loss_terms_from_json(t));
    return h;
}

inline constexpr int kProjectFormat = 1;

inline json to_json(const Project& p) {
    json j;
    j["format"] = kProjectFormat;
    j["id"] = p.id;
    j["seed"] = p.seed;
    j["config"] = to_json(p.config);
    j["config_snapshots"] = p.config_snapshots;
    json stamps = json::object();
    for (const auto& [name, s] : p.stamps) stamps[name] = {{"step", s.step}, {"config_hash", s.config_hash}};
    j["stamps"] = std::move(stamps);
    j["dataset"] = p.dataset ? json{{"kind", p.dataset->kind},
                                    {"train_path", p.dataset->train_path},
                                    {"test_path", p.dataset->test_path}}
                             : json(nullptr);
    j["backbone"] = p.backbone ? to_json(*p.backbone) : json(nullptr);
    j["clusters"] = json::array();
    for (const auto& r : p.clusters) j["clusters"].push_back(to_json(r));
    j["bank"] = p.bank ? to_json(*p.bank) : json(nullptr);
    j["rules"] = json::array();
    for (const auto& v : p.rules)
        j["rules"].push_back({{"version", v.version}, {"table", to_json(v.table)}, {"config_hash", v.config_hash}});
    j["head_cav"] = p.head_cav ? to_json(*p.head_cav) : json(nullptr);
    j["head_xil"] = p.head_xil ? to_json(*p.head_xil) : json(nullptr);
    j["evals"] = json::array();
    for (const auto& e : p.evals) {
        json reports = json::array();
        for (const auto& r : e.reports) reports.push_back(to_json(r));
        j["evals"].push_back({{"split", e.split}, {"config_hash", e.config_hash}, {"reports", std::move(reports)}});
    }
    return j;
}

inline Project project_from_json(const json& j) {
    try {
        if (j.at("format").get<int>() != kProjectFormat)
            throw FormatError("project format " + j["format"].dump() + " is not supported");
        Project p;
        p.id = j.at("id").get<std::string>();
        p.seed = j.at("seed").get<std::uint64_t>();
        merge_config(j.at("config"), p.config);
        p.config_snapshots = j.at("config_snapshots").get<std::map<std::string, json>>();
        for (const auto& [name, s] : j.at("stamps").items())
            p.stamps[name] = {s.at("step").get<std::string>(), s.at("config_hash").get<std::string>()};
        if (!j.at("dataset").is_null()) {
            const auto& d = j["dataset"];
            p.dataset = DatasetRef{d.at("kind").get<std::string>(), d.at("train_path").get<std::string>(),
                                   d.at("test_path").get<std::string>()};
        }
        if (!j.at("backbone").is_null()) p.backbone = backbone_from_json(j["backbone"]);
        for (const auto& r : j.at("clusters")) p.clusters.push_back(cluster_report_from_json(r));
        if (!j.at("bank").is_null()) p.bank = bank_from_json(j["bank"]);
        for (const auto& v : j.at("rules"))
            p.rules.push_back({v.at("version").get<std::size_t>(), rule_table_from_json(v.at("table")),
                               v.at("config_hash").get<std::string>()});
        if (!j.at("head_cav").is_null()) p.head_cav = head_artifact_from_json(j["head_cav"]);
        if (!j.at("head_xil").is_null()) p.head_xil = head_artifact_from_json(j["head_xil"]);
        for (const auto& e : j.at("evals")) {
            EvalRecord rec{e.at("split").get<std::string>(), e.at("config_hash").get<std::string>(), {}};
            for (const auto& r : e.at("reports")) rec.reports.push_back(eval_report_from_json(r));
            p.evals.push_back(std::move(rec));
        }
        return p;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed project: ") + e.what());
    } catch (const ParameterError& e) {
        throw FormatError(std::string("malformed project config: ") + e.what());
    }
}

}  // namespace io

/// 16 hex digits of FNV-1a over the canonical config JSON.
inline std::string config_hash(const ProjectConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(io::to_json(c).dump())));
    return buf;
}

/// Records the current config under its hash and stamps `artifact` with it.
inline void stamp(Project& p, const std::string& artifact, const std::string& step) {
    const auto h = config_hash(p.config);
    p.config_snapshots.emplace(h, io::to_json(p.config));
    p.stamps[artifact] = {step, h};
}

// ---------------------------------------------------------------------------
// Persistence

/// Test hooks around the atomic write. Throwing from either aborts the save the
/// way a crash would: `after_partial_write` fires with half the bytes written,
/// `before_rename` once the temporary file is complete and synced.
struct SaveHooks {
    std::function<void(const fs::path& tmp)> after_partial_write;
    std::function<void(const fs::path& tmp)> before_rename;
};

inline std::string serialize_project(const Project& p) { return io::to_json(p).dump(1) + "\n"; }

/// Writes to a sibling temporary file, fsyncs it, then renames over `path`, so
/// a reader sees either the old or the new project, never a torn one.
inline void save_project(const Project& p, const fs::path& path, const SaveHooks& hooks = {}) {
    const std::string bytes = serialize_project(p);
    const fs::path tmp = path.string() + ".tmp";
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd < 0) throw DataError("cannot write '" + tmp.string() + "': " + std::strerror(errno));
    auto write_all = [&](const char* data, std::size_t n) {
        while (n > 0) {
            const ssize_t w = ::write(fd, data, n);
            if (w < 0) {
                if (errno == EINTR) continue;
                ::close(fd);
                throw DataError("write to '" + tmp.string() + "' failed: " + std::strerror(errno));
            }
            data += w;
            n -= static_cast<std::size_t>(w);
        }
    };
    const std::size_t half = bytes.size() / 2;
    write_all(bytes.data(), half);
    if (hooks.after_partial_write) {
        try {
            hooks.after_partial_write(tmp);
        } catch (...) {
            ::close(fd);
            throw;
        }
    }
    write_all(bytes.data() + half, bytes.size() - half);
    if (::fsync(fd) != 0) {
        ::close(fd);
        throw DataError("fsync of '" + tmp.string() + "' failed");
    }
    ::close(fd);
    if (hooks.before_rename) hooks.before_rename(tmp);
    fs::rename(tmp, path);
    // persist the directory entry too
    const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    if (const int dfd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY); dfd >= 0) {
        ::fsync(dfd);
        ::close(dfd);
    }
}

inline Project load_project(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open project '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("project '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return io::project_from_json(j);
}

}  // namespace xilbench
