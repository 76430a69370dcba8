#pragma once

#include <regex>

#include "xilbench/synth/exemplars.hpp"
#include "xilbench/synth/records.hpp"
#include "xilbench/workbench/project.hpp"

namespace xilbench {

enum class Step {
    generate,
    ingest,
    train_baseline,
    discover,
    label_cluster,
    build_bank,
    train_head,
    add_rule,
    set_rules,
    evaluate,
    explain,
    sweep
};

inline constexpr std::array<std::pair<Step, std::string_view>, 12> kStepNames{{
    {Step::generate, "generate"},
    {Step::ingest, "ingest"},
    {Step::train_baseline, "train-baseline"},
    {Step::discover, "discover"},
    {Step::label_cluster, "label-cluster"},
    {Step::build_bank, "build-bank"},
    {Step::train_head, "train-head"},
    {Step::add_rule, "add-rule"},
    {Step::set_rules, "set-rules"},
    {Step::evaluate, "evaluate"},
    {Step::explain, "explain"},
    {Step::sweep, "sweep"},
}};

inline std::string_view to_string(Step s) {
    for (const auto& [step, name] : kStepNames)
        if (step == s) return name;
    return "?";
}

inline std::optional<Step> step_from_string(std::string_view s) {
    for (const auto& [step, name] : kStepNames)
        if (name == s) return step;
    return std::nullopt;
}

/// Steps that only read the project; everything else is persisted after it runs.
inline bool is_read_only(Step s) { return s == Step::explain || s == Step::sweep; }

/// An open project file plus derived data that is cheap to recompute and never
/// stored: decoded samples, embeddings and concept scores.
class Session {
public:
    Session(Project p, fs::path file) : project_(std::move(p)), file_(std::move(file)) {}

    static Session create(const fs::path& file, std::string id, std::uint64_t seed,
                          const nlohmann::json& config = nlohmann::json::object()) {
        Project p;
        p.id = std::move(id);
        p.seed = seed;
        io::merge_config(config, p.config);
        p.config.apply_seed(seed);
        return Session(std::move(p), file);
    }

    static Session open(const fs::path& file) { return Session(load_project(file), file); }

    Project& project() noexcept { return project_; }
    const Project& project() const noexcept { return project_; }
    const fs::path& file() const noexcept { return file_; }

    void save(const SaveHooks& hooks = {}) const { save_project(project_, file_, hooks); }

    /// Drops cached data derived from the named artifact and everything downstream.
    void invalidate(std::string_view artifact) {
        if (artifact == "dataset") {
            data_.reset();
            probe_.reset();
        }
        if (artifact == "dataset" || artifact == "backbone") embeddings_.clear();
        scores_.clear();
    }

    /// The synthetic config the dataset was generated under.
    SyntheticConfig dataset_config() const {
        const auto it = project_.stamps.find("dataset");
        if (it == project_.stamps.end()) return project_.config.synthetic;
        SyntheticConfig c;
        io::from_json(project_.config_snapshots.at(it->second.config_hash).at("synthetic"), c);
        return c;
    }

    const std::vector<Sample>& split(std::string_view name) {
        if (name != "train" && name != "test") throw DataError("unknown split '" + std::string(name) + "'");
        load_data();
        return name == "train" ? data_->train : data_->test;
    }

    /// Exemplar source for expert concepts: an independent synthetic split in
    /// which the confounder is decorrelated from the label, or the training
    /// records when the data was ingested.
    const std::vector<Sample>& probe_corpus() {
        if (probe_) return *probe_;
        require_dataset();
        if (project_.dataset->kind == "records") {
            probe_ = split("train");
        } else {
            SyntheticConfig pc = dataset_config();
            pc.train_confound_rate = 0.5;
            pc.other_class_confound_rate = 0.5;
            probe_ = synth::generate_split(pc, "probe", project_.config.bank.probe_size, 0.5);
        }
        return *probe_;
    }

    std::vector<int> labels(std::string_view name) {
        std::vector<int> y;
        for (const auto& s : split(name)) y.push_back(s.label);
        return y;
    }

    std::size_t num_classes() {
        int top = 1;
        for (const auto& s : split("train")) top = std::max(top, s.label);
        return static_cast<std::size_t>(top) + 1;
    }

    const std::vector<Vector>& embeddings(const std::string& name) {
        if (auto it = embeddings_.find(name); it != embeddings_.end()) return it->second;
        if (!project_.backbone) throw WorkflowError("no backbone; run train-baseline first");
        std::vector<Vector> out;
        for (const auto& s : split(name)) out.push_back(extract(*project_.backbone, s));
        return embeddings_[name] = std::move(out);
    }

    std::vector<Vector> scores_under(const std::string& name, const ConceptBank& bank) {
        std::vector<Vector> out;
        const bool signed_distance = project_.config.bank.signed_distance;
        for (const auto& h : embeddings(name)) out.push_back(xilbench::project(h, bank, signed_distance));
        return out;
    }

    const std::vector<Vector>& scores(const std::string& name) {
        if (auto it = scores_.find(name); it != scores_.end()) return it->second;
        if (!project_.bank) throw WorkflowError("no concept bank; run build-bank first");
        return scores_[name] = scores_under(name, *project_.bank);
    }

    void require_dataset() const {
        if (!project_.dataset) throw WorkflowError("no dataset; run generate or ingest first");
    }

private:
    void load_data() {
        if (data_) return;
        require_dataset();
        const auto& ref = *project_.dataset;
        if (ref.kind == "synthetic") {
            data_ = generate(dataset_config());
        } else {
            const fs::path base = file_.parent_path();
            data_ = SyntheticDataset{ingest_records((base / ref.train_path).string()),
                                     ingest_records((base / ref.test_path).string())};
        }
    }

    Project project_;
    fs::path file_;
    std::optional<SyntheticDataset> data_;
    std::optional<std::vector<Sample>> probe_;
    std::map<std::string, std::vector<Vector>> embeddings_;
    std::map<std::string, std::vector<Vector>> scores_;
};

/// Throws WorkflowError when `step` cannot run yet because an upstream
/// artifact is missing.
inline void check_prerequisites(const Project& p, Step step) {
    auto need = [&](bool ok, const char* what, const char* fix) {
        if (!ok)
            throw WorkflowError(std::string(to_string(step)) + " requires " + what + "; run " + fix + " first");
    };
    switch (step) {
        case Step::generate:
        case Step::ingest: break;
        case Step::train_baseline: need(p.dataset.has_value(), "a dataset", "generate or ingest"); break;
        case Step::discover:
        case Step::build_bank: need(p.backbone.has_value(), "a backbone", "train-baseline"); break;
        case Step::label_cluster: need(!p.clusters.empty(), "a cluster report", "discover"); break;
        case Step::train_head:
        case Step::add_rule:
        case Step::set_rules:
        case Step::sweep: need(p.bank.has_value(), "a concept bank", "build-bank"); break;
        case Step::evaluate:
            need(p.backbone.has_value() || p.head_cav.has_value(), "a trained baseline or head", "train-baseline");
            break;
        case Step::explain: need(p.head_cav.has_value(), "a trained head", "train-head"); break;
    }
}

namespace pipeline_detail {

using nlohmann::json;

inline void allow_keys(const json& params, std::initializer_list<const char*> keys, Step step) {
    if (!params.is_object())
        throw ParameterError(std::string(to_string(step)) + ": parameters must be a JSON object");
    for (const auto& [key, _] : params.items()) {
        bool ok = false;
        for (const char* k : keys) ok = ok || key == k;
        if (!ok) throw ParameterError(std::string(to_string(step)) + ": unknown parameter '" + key + "'");
    }
}

template <typename T>
T get(const json& params, const char* key, T fallback) {
    if (!params.contains(key) || params[key].is_null()) return fallback;
    try {
        return params[key].get<T>();
    } catch (const json::exception&) {
        throw ParameterError(std::string("parameter '") + key + "' has the wrong type");
    }
}

inline std::string require_string(const json& params, const char* key, Step step) {
    if (!params.contains(key) || !params[key].is_string())
        throw ParameterError(std::string(to_string(step)) + ": missing string parameter '" + key + "'");
    return params[key].get<std::string>();
}

inline void validate_label(const std::string& label) {
    static const std::regex ok("[A-Za-z0-9_\\-]+");
    if (!std::regex_match(label, ok))
        throw ParameterError("label '" + label + "' must be non-empty and use only letters, digits, '_' and '-'");
}

inline RuleTable compile_rules(const std::vector<std::string>& texts, const ConceptBank& bank) {
    RuleTable t = RuleTable::empty(bank.size());
    const auto names = bank.names();
    for (const auto& text : texts) {
        const auto name = parse_rule(text);
        if (!bank.index_of(name))
            throw ParameterError("rule '" + text + "' names concept '" + name + "', which is not in the bank");
        t = add_rule(std::move(t), text, names);
    }
    return t;
}

/// The current rule texts recompiled against `bank`; a rule whose concept is
/// gone is a workflow error (the bank was rebuilt under it).
inline std::optional<std::pair<std::size_t, RuleTable>> current_rules(const Project& p, const ConceptBank& bank) {
    if (p.rules.empty() || p.rules.back().table.rules.empty()) return std::nullopt;
    try {
        return std::make_pair(p.rules.back().version, compile_rules(p.rules.back().table.rules, bank));
    } catch (const ParameterError& e) {
        throw WorkflowError(std::string("current rule table no longer matches the bank: ") + e.what());
    }
}

struct TrainedHeads {
    HeadArtifact cav;
    std::optional<HeadArtifact> xil;
    std::vector<std::string> warnings;
};

/// The CAV head (no interaction) and, when rules exist, the XIL head. Both
/// start from the same initialization.
inline TrainedHeads train_heads(const Project& p, std::size_t classes, const std::vector<Vector>& S,
                                const std::vector<int>& Y, const ConceptBank& bank, const TrainConfig& cfg) {
    const auto h0 = init_logic_head(bank.size(), classes, p.config.head.hidden_per_class, p.seed,
                                    p.config.head.temperature);
    TrainConfig plain = cfg;
    plain.lambda2 = 0.0;
    plain.strategy = Strategy::rrr;
    auto cav = train(h0, S, Y, RuleTable::empty(bank.size()), plain);
    TrainedHeads out{{std::move(cav.head), Strategy::rrr, 0, std::move(cav.history)}, std::nullopt, {}};
    const auto rules = current_rules(p, bank);
    if (!rules) return out;
    if (cfg.strategy == Strategy::edit_norm) {
        auto edit = intervene_edit_norm(out.cav.head, rule_mask(rules->second));
        if (edit.warning) out.warnings.push_back(*edit.warning);
        out.xil = HeadArtifact{std::move(edit.head), Strategy::edit_norm, rules->first, {}};
    } else {
        auto xil = train(h0, S, Y, rules->second, cfg);
        out.xil = HeadArtifact{std::move(xil.head), cfg.strategy, rules->first, std::move(xil.history)};
    }
    return out;
}

inline ConceptBank assemble_bank(Session& s, const std::vector<std::string>& requested, std::size_t n) {
    Project& p = s.project();
    if (!p.backbone) throw WorkflowError("build-bank requires a backbone; run train-baseline first");
    if (n == 0) throw ParameterError("build-bank: n_exemplars must be > 0");
    std::vector<ClusterHarvest> harvest;
    std::vector<std::string> harvested;
    for (const auto& rep : p.clusters)
        for (std::size_t k = 0; k < rep.num_clusters(); ++k)
            if (rep.labels[k]) {
                harvest.push_back({&rep, k});
                harvested.push_back(*rep.labels[k]);
            }
    const auto& corpus = s.probe_corpus();
    std::vector<std::string> names = requested;
    if (names.empty()) {
        std::set<std::string> annotated;
        for (const auto& smp : corpus)
            for (const auto& [name, truth] : smp.concept_truth)
                if (truth != ConceptTruth::unknown) annotated.insert(name);
        for (const auto& name : annotated)
            if (std::find(harvested.begin(), harvested.end(), name) == harvested.end()) names.push_back(name);
    }
    std::vector<ProbeDefinition> probes;
    for (const auto& name : names) {
        const auto split = split_concept_exemplars(corpus, name, n, n, derive_seed(p.seed, "bank/exemplars"));
        ProbeDefinition def{name, {}, {}};
        for (auto i : split.positives) def.positive_ids.push_back(corpus[i].id);
        for (auto i : split.negatives) def.negative_ids.push_back(corpus[i].id);
        probes.push_back(std::move(def));
    }
    std::vector<const Sample*> pool;
    for (const auto& smp : corpus) pool.push_back(&smp);
    if (p.dataset->kind != "records")
        for (const auto& smp : s.split("train")) pool.push_back(&smp);
    BankOptions opt;
    opt.cav = p.config.bank.cav;
    opt.min_exemplars = n;
    opt.signed_distance = p.config.bank.signed_distance;
    return build_bank(harvest, probes, *p.backbone, pool, opt);
}

inline json eval_json(const std::vector<EvalReport>& reports) {
    json out = json::array();
    for (const auto& r : reports) out.push_back(io::to_json(r));
    return out;
}

inline std::vector<EvalReport> evaluate_all(Session& s, const std::string& split, const Project& p,
                                            const ConceptBank* bank, const HeadArtifact* cav,
                                            const HeadArtifact* xil, const std::vector<Vector>* scores = nullptr) {
    const int conf = s.dataset_config().confounded_class;
    std::vector<EvalReport> out;
    if (const auto* toy = p.backbone ? std::get_if<ToyBackbone>(&*p.backbone) : nullptr)
        out.push_back(evaluate_backbone(*toy, s.split(split), conf));
    if (bank && (cav || xil)) {
        const auto own = scores ? std::vector<Vector>{} : s.scores_under(split, *bank);
        const auto& S = scores ? *scores : own;
        const auto Y = s.labels(split);
        if (cav) out.push_back(evaluate_head("cav", cav->head, S, Y, conf));
        if (xil) out.push_back(evaluate_head("xil", xil->head, S, Y, conf));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Steps

inline json step_generate(Session& s, const json& params) {
    allow_keys(params, {"synthetic"}, Step::generate);
    Project& p = s.project();
    if (params.contains("synthetic")) io::from_json(params["synthetic"], p.config.synthetic);
    p.config.synthetic.seed = p.seed;
    p.config.synthetic.validate();
    p.dataset = DatasetRef{"synthetic", "", ""};
    stamp(p, "dataset", "generate");
    s.invalidate("dataset");
    return {{"kind", "synthetic"},
            {"n_train", p.config.synthetic.n_train},
            {"n_test", p.config.synthetic.n_test}};
}

inline json step_ingest(Session& s, const json& params) {
    allow_keys(params, {"train", "test"}, Step::ingest);
    Project& p = s.project();
    const fs::path base = s.file().parent_path();
    auto relative = [&](const std::string& path) {
        const fs::path abs = fs::absolute(path);
        if (!fs::exists(abs)) throw DataError("record file '" + path + "' does not exist");
        return fs::relative(abs, fs::absolute(base.empty() ? fs::path(".") : base)).string();
    };
    DatasetRef ref{"records", relative(require_string(params, "train", Step::ingest)),
                   relative(require_string(params, "test", Step::ingest))};
    // parse now so malformed records fail the step instead of a later one
    const auto train = ingest_records((base / ref.train_path).string());
    const auto test = ingest_records((base / ref.test_path).string());
    if (train.empty() || test.empty()) throw DataError("ingest: both splits need at least one record");
    p.dataset = std::move(ref);
    stamp(p, "dataset", "ingest");
    s.invalidate("dataset");
    return {{"kind", "records"}, {"n_train", train.size()}, {"n_test", test.size()}};
}

inline json step_train_baseline(Session& s, const json& params) {
    allow_keys(params, {}, Step::train_baseline);
    Project& p = s.project();
    s.require_dataset();
    const auto& train = s.split("train");
    json out;
    if (train.front().image.empty()) {
        if (!train.front().embedding)
            throw DataError("train-baseline: records carry neither images nor embeddings");
        p.backbone = ExternalBackbone{};
        out["kind"] = "external";
    } else {
        BaselineOptions o = p.config.baseline.options;
        o.num_classes = s.num_classes();
        Vector loss;
        ToyBackbone b;
        if (p.dataset->kind == "synthetic" && p.config.baseline.pretrain_epochs > 0) {
            SyntheticConfig pc = s.dataset_config();
            pc.seed = derive_seed(p.seed, "baseline/pretrain");
            pc.confounder_seed.reset();
            pc.other_class_confound_rate = 0.0;
            const auto corpus = synth::generate_split(pc, "pretrain", pc.n_train, 0.0);
            BaselineOptions po = o;
            po.epochs = p.config.baseline.pretrain_epochs;
            b = fine_tune(train_baseline(corpus, po), train, o, &loss);
        } else {
            b = train_baseline(train, o, &loss);
        }
        p.backbone = std::move(b);
        out["kind"] = "toy";
        out["epoch_loss"] = loss;
    }
    stamp(p, "backbone", "train-baseline");
    s.invalidate("backbone");
    return out;
}

inline json step_discover(Session& s, const json& params) {
    allow_keys(params, {"class", "gccd"}, Step::discover);
    Project& p = s.project();
    if (!p.backbone) throw WorkflowError("discover requires a backbone; run train-baseline first");
    if (params.contains("gccd")) io::from_json(params["gccd"], p.config.gccd);
    const int cls = get<int>(params, "class", s.dataset_config().confounded_class);
    if (cls < 0 || static_cast<std::size_t>(cls) >= s.num_classes())
        throw ParameterError("discover: class " + std::to_string(cls) + " does not exist");
    std::vector<Sample> members;
    for (const auto& smp : s.split("train"))
        if (smp.label == cls) members.push_back(smp);
    auto rep = discover(members, *p.backbone, cls, p.config.gccd);
    json sizes = json::array();
    for (const auto& m : rep.member_ids) sizes.push_back(m.size());
    if (auto* old = p.clusters_for(cls)) *old = std::move(rep);
    else p.clusters.push_back(std::move(rep));
    stamp(p, "clusters/" + std::to_string(cls), "discover");
    return {{"class", cls}, {"clusters", sizes.size()}, {"sizes", std::move(sizes)}};
}

inline json step_label_cluster(Session& s, const json& params) {
    allow_keys(params, {"class", "cluster", "label"}, Step::label_cluster);
    Project& p = s.project();
    if (p.clusters.empty()) throw WorkflowError("label-cluster requires a cluster report; run discover first");
    int cls = p.clusters.front().class_id;
    if (params.contains("class")) cls = get<int>(params, "class", cls);
    else if (p.clusters.size() > 1) throw ParameterError("label-cluster: several classes are discovered; pass 'class'");
    ClusterReport* rep = p.clusters_for(cls);
    if (!rep) throw WorkflowError("no cluster report for class " + std::to_string(cls) + "; run discover first");
    if (!params.contains("cluster")) throw ParameterError("label-cluster: missing parameter 'cluster'");
    const auto k = get<long long>(params, "cluster", -1);
    if (k < 0 || static_cast<std::size_t>(k) >= rep->num_clusters())
        throw ParameterError("label-cluster: cluster " + std::to_string(k) + " does not exist");
    std::optional<std::string> label;
    if (params.contains("label") && !params["label"].is_null()) {
        label = require_string(params, "label", Step::label_cluster);
        validate_label(*label);
        for (const auto& r : p.clusters)
            for (std::size_t c = 0; c < r.num_clusters(); ++c)
                if (r.labels[c] == label && !(&r == rep && c == static_cast<std::size_t>(k)))
                    throw NameCollisionError("label '" + *label + "' is already used by cluster " +
                                             std::to_string(c) + " of class " + std::to_string(r.class_id));
    }
    rep->labels[static_cast<std::size_t>(k)] = label;
    return {{"class", cls}, {"cluster", k}, {"label", label ? json(*label) : json(nullptr)}};
}

inline json step_build_bank(Session& s, const json& params) {
    allow_keys(params, {"concepts", "n_exemplars"}, Step::build_bank);
    Project& p = s.project();
    const auto requested = get<std::vector<std::string>>(params, "concepts", {});
    p.config.bank.n_exemplars = get<std::size_t>(params, "n_exemplars", p.config.bank.n_exemplars);
    auto bank = assemble_bank(s, requested, p.config.bank.n_exemplars);
    json concepts = json::array();
    for (const auto& c : bank.concepts())
        concepts.push_back({{"name", c.name},
                            {"provenance", to_string(c.provenance)},
                            {"train_accuracy", c.train_accuracy},
                            {"heldout_accuracy", c.heldout_accuracy}});
    p.bank = std::move(bank);
    stamp(p, "bank", "build-bank");
    s.invalidate("bank");
    return {{"concepts", std::move(concepts)}};
}

inline json rules_json(const Project& p) {
    json versions = json::array();
    for (const auto& v : p.rules)
        versions.push_back({{"version", v.version},
                            {"rules", v.table.rules},
                            {"H", io::plain(v.table.H)},
                            {"config_hash", v.config_hash}});
    return {{"concepts", p.bank ? p.bank->names() : std::vector<std::string>{}},
            {"current", p.rules.empty() ? 0 : p.rules.back().version},
            {"versions", std::move(versions)}};
}

inline json append_rules(Session& s, const std::vector<std::string>& texts) {
    Project& p = s.project();
    if (!p.bank) throw WorkflowError("rules need a concept bank; run build-bank first");
    RuleVersion v{p.rules.empty() ? 1 : p.rules.back().version + 1, compile_rules(texts, *p.bank),
                  config_hash(p.config)};
    p.config_snapshots.emplace(v.config_hash, io::to_json(p.config));
    p.rules.push_back(std::move(v));
    return rules_json(p);
}

inline json step_add_rule(Session& s, const json& params) {
    allow_keys(params, {"text"}, Step::add_rule);
    const auto text = require_string(params, "text", Step::add_rule);
    auto texts = s.project().rules.empty() ? std::vector<std::string>{} : s.project().rules.back().table.rules;
    texts.push_back(text);
    return append_rules(s, texts);
}

inline json step_set_rules(Session& s, const json& params) {
    allow_keys(params, {"rules"}, Step::set_rules);
    if (!params.contains("rules") || !params["rules"].is_array())
        throw ParameterError("set-rules: 'rules' must be an array of strings");
    return append_rules(s, get<std::vector<std::string>>(params, "rules", {}));
}

inline json step_train_head(Session& s, const json& params) {
    allow_keys(params, {"strategy"}, Step::train_head);
    Project& p = s.project();
    if (!p.bank) throw WorkflowError("train-head requires a concept bank; run build-bank first");
    if (params.contains("strategy"))
        p.config.train.strategy = strategy_from_string(require_string(params, "strategy", Step::train_head));
    auto heads = train_heads(p, s.num_classes(), s.scores("train"), s.labels("train"), *p.bank, p.config.train);
    p.head_cav = std::move(heads.cav);
    stamp(p, "head/cav", "train-head");
    p.head_xil = std::move(heads.xil);
    if (p.head_xil) stamp(p, "head/xil", "train-head");
    else p.stamps.erase("head/xil");
    json out{{"cav", {{"final", io::to_json(p.head_cav->history.empty() ? LossTerms{} : p.head_cav->history.back())}}}};
    if (p.head_xil) {
        out["xil"] = {{"strategy", to_string(p.head_xil->strategy)}, {"rules_version", p.head_xil->rules_version}};
        if (!p.head_xil->history.empty()) out["xil"]["final"] = io::to_json(p.head_xil->history.back());
    } else {
        out["xil"] = nullptr;
        heads.warnings.push_back("no rules in the current table; only the CAV head was trained");
    }
    out["warnings"] = heads.warnings;
    return out;
}

inline json step_evaluate(Session& s, const json& params) {
    allow_keys(params, {"split"}, Step::evaluate);
    Project& p = s.project();
    const auto split = get<std::string>(params, "split", "test");
    if (split != "train" && split != "test") throw DataError("evaluate: split '" + split + "' does not exist");
    if (!p.backbone && !p.head_cav) throw WorkflowError("evaluate requires a trained baseline or head");
    s.require_dataset();
    auto reports = evaluate_all(s, split, p, p.bank ? &*p.bank : nullptr, p.head_cav ? &*p.head_cav : nullptr,
                                p.head_xil ? &*p.head_xil : nullptr, p.bank ? &s.scores(split) : nullptr);
    p.evals.push_back({split, config_hash(p.config), reports});
    return {{"split", split}, {"reports", eval_json(reports)}};
}

inline json step_explain(Session& s, const json& params) {
    allow_keys(params, {"split"}, Step::explain);
    Project& p = s.project();
    if (!p.head_cav || !p.bank) throw WorkflowError("explain requires a trained head; run train-head first");
    const auto split = get<std::string>(params, "split", "test");
    const auto& S = s.scores(split);
    const auto Y = s.labels(split);
    const auto names = p.bank->names();
    json masked = json::array();
    if (p.head_xil)
        if (const auto rules = current_rules(p, *p.bank)) {
            const auto mask = rule_mask(rules->second);
            for (std::size_t j = 0; j < mask.size(); ++j)
                if (mask[j] != 0.0) masked.push_back(names[j]);
        }
    return {{"split", split},
            {"concepts", names},
            {"masked", std::move(masked)},
            {"before", io::to_json(explain(p.head_cav->head, names, S, Y))},
            {"after", p.head_xil ? io::to_json(explain(p.head_xil->head, names, S, Y)) : json(nullptr)}};
}

inline json step_sweep(Session& s, const json& params) {
    allow_keys(params, {"parameter", "values", "split", "retrain_heads"}, Step::sweep);
    const Project& p = s.project();
    if (!p.bank) throw WorkflowError("sweep requires the pipeline through build-bank");
    const auto parameter = require_string(params, "parameter", Step::sweep);
    if (parameter != "n_exemplars" && parameter != "lambda1" && parameter != "lambda2")
        throw ParameterError("sweep: parameter must be n_exemplars, lambda1 or lambda2");
    const auto values = get<std::vector<double>>(params, "values", {});
    if (values.empty()) throw ParameterError("sweep: values must be a non-empty list");
    const auto split = get<std::string>(params, "split", "test");
    const bool retrain = get<bool>(params, "retrain_heads", true);
    const auto Ytr = s.labels("train");
    json rows = json::array();
    for (double value : values) {
        json row{{"value", value}};
        const ConceptBank* bank = &*p.bank;
        std::optional<ConceptBank> rebuilt;
        TrainConfig cfg = p.config.train;
        if (parameter == "n_exemplars") {
            if (value < 1.0 || value != std::floor(value))
                throw ParameterError("sweep: n_exemplars values must be positive integers");
            rebuilt = assemble_bank(s, {}, static_cast<std::size_t>(value));
            bank = &*rebuilt;
        } else if (parameter == "lambda1") {
            cfg.lambda1 = value;
        } else {
            cfg.lambda2 = value;
        }
        cfg.validate();
        json concepts = json::array();
        double heldout = 0.0;
        for (const auto& c : bank->concepts()) {
            concepts.push_back({{"name", c.name}, {"heldout_accuracy", c.heldout_accuracy}});
            heldout += c.heldout_accuracy;
        }
        row["concepts"] = std::move(concepts);
        row["mean_heldout_accuracy"] = heldout / static_cast<double>(bank->size());
        if (retrain) {
            const auto Str = s.scores_under("train", *bank);
            auto heads = train_heads(p, s.num_classes(), Str, Ytr, *bank, cfg);
            const auto Sev = s.scores_under(split, *bank);
            row["reports"] = eval_json(evaluate_all(s, split, p, bank, &heads.cav,
                                                    heads.xil ? &*heads.xil : nullptr, &Sev));
            if (heads.xil) {
                const auto mask = rule_mask(current_rules(p, *bank)->second);
                const auto g = mean_abs_input_gradient(heads.xil->head, Str);
                double total = 0.0, count = 0.0;
                for (std::size_t j = 0; j < mask.size(); ++j)
                    if (mask[j] != 0.0) {
                        total += g[j];
                        count += 1.0;
                    }
                row["masked_gradient"] = total / count;
            }
        }
        rows.push_back(std::move(row));
    }
    return {{"parameter", parameter}, {"split", split}, {"rows", std::move(rows)}};
}

}  // namespace pipeline_detail

/// Runs one workflow step against the session's project. Mutating steps are
/// persisted atomically before returning; a failing step leaves both the
/// in-memory project and the file untouched.
inline nlohmann::json run_step(Session& s, Step step, const nlohmann::json& params = nlohmann::json::object(),
                               const SaveHooks& hooks = {}) {
    using namespace pipeline_detail;
    check_prerequisites(s.project(), step);
    const Project before = s.project();
    nlohmann::json out;
    try {
        switch (step) {
            case Step::generate: out = step_generate(s, params); break;
            case Step::ingest: out = step_ingest(s, params); break;
            case Step::train_baseline: out = step_train_baseline(s, params); break;
            case Step::discover: out = step_discover(s, params); break;
            case Step::label_cluster: out = step_label_cluster(s, params); break;
            case Step::build_bank: out = step_build_bank(s, params); break;
            case Step::train_head: out = step_train_head(s, params); break;
            case Step::add_rule: out = step_add_rule(s, params); break;
            case Step::set_rules: out = step_set_rules(s, params); break;
            case Step::evaluate: out = step_evaluate(s, params); break;
            case Step::explain: out = step_explain(s, params); break;
            case Step::sweep: out = step_sweep(s, params); break;
        }
        if (!is_read_only(step)) s.save(hooks);
    } catch (...) {
        s.project() = before;
        s.invalidate("dataset");
        throw;
    }
    return out;
}

}  // namespace xilbench
