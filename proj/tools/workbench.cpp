// workbench: command-line front end for XIL projects.
//
//   workbench --project demo.json new --seed 7
//   workbench --project demo.json generate
//   workbench --project demo.json train-baseline
//   workbench --project demo.json discover --class 1
//   workbench --project demo.json label-cluster --class 1 --cluster 0 --label watermark
//   workbench --project demo.json build-bank
//   workbench --project demo.json rule add "class 1 must not use watermark"
//   workbench --project demo.json train-head --strategy rrr
//   workbench --project demo.json evaluate
//   workbench serve --root projects --port 8080
//
// Every command prints its result as JSON on stdout. Failures print a JSON
// error object on stderr and exit with a code derived from the error kind:
// 2 invalid input, 3 workflow order, 4 unreadable files, 1 anything else.

#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "xilbench/workbench/service.hpp"

namespace {

using nlohmann::json;
using namespace xilbench;

enum ExitCode : int { kOk = 0, kInternal = 1, kInvalid = 2, kWorkflow = 3, kIo = 4 };

int exit_code_for(const std::exception& e) {
    if (const auto* err = dynamic_cast<const Error*>(&e)) {
        if (err->kind() == "workflow") return kWorkflow;
        if (err->kind() == "format") return kIo;
        return kInvalid;
    }
    if (dynamic_cast<const json::exception*>(&e)) return kInvalid;
    if (dynamic_cast<const fs::filesystem_error*>(&e)) return kIo;
    return kInternal;
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot read '" + path + "'");
    auto j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw FormatError("'" + path + "' is not valid JSON");
    return j;
}

httplib::Server* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

struct Options {
    std::string project;
    std::optional<std::uint64_t> seed;
    std::string config;
    std::string id;

    std::string train_path, test_path;
    int cls = 1;
    std::int64_t cluster = 0;
    std::string label;
    std::vector<std::string> concepts;
    std::size_t exemplars = 0;
    std::string strategy;
    std::string rule_text;
    std::string split = "test";
    std::string parameter;
    std::vector<double> values;
    bool no_retrain = false;

    std::string root = "projects";
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string static_dir;
};

int serve(const Options& o) {
    Service service(o.root);
    httplib::Server srv;
    service.mount(srv);
    if (!o.static_dir.empty() && !srv.set_mount_point("/", o.static_dir))
        throw ParameterError("static directory '" + o.static_dir + "' does not exist");
    g_server = &srv;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cerr << "serving " << o.root << " on http://" << o.host << ":" << o.port << "\n";
    if (!srv.listen(o.host, o.port)) {
        std::cerr << "cannot listen on " << o.host << ":" << o.port << "\n";
        return kIo;
    }
    return kOk;
}

/// Opens the project, applies --seed and --config overrides, and runs one step.
json run(const Options& o, Step step, json params) {
    auto s = Session::open(o.project);
    auto& p = s.project();
    bool changed = false;
    if (!o.config.empty()) {
        io::merge_config(read_json_file(o.config), p.config);
        changed = true;
    }
    if (o.seed && *o.seed != p.seed) {
        p.seed = *o.seed;
        changed = true;
    }
    if (changed) p.config.apply_seed(p.seed);
    return run_step(s, step, params);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Concept-level explanatory interactive learning workbench"};
    app.require_subcommand(1);
    app.fallthrough();
    Options o;
    app.add_option("-p,--project", o.project, "Project file");
    app.add_option("--seed", o.seed, "Project seed (new) or reseed an existing project");
    app.add_option("--config", o.config, "JSON file merged into the project config")->check(CLI::ExistingFile);

    auto* cmd_new = app.add_subcommand("new", "Create an empty project file");
    cmd_new->add_option("--id", o.id, "Project id (defaults to the file stem)");

    app.add_subcommand("show", "Print a project summary");
    app.add_subcommand("generate", "Generate the synthetic confounded dataset");
    auto* cmd_ingest = app.add_subcommand("ingest", "Register external embedding files");
    cmd_ingest->add_option("--train", o.train_path, "Train split JSON")->required();
    cmd_ingest->add_option("--test", o.test_path, "Test split JSON")->required();
    app.add_subcommand("train-baseline", "Train (or adopt) the frozen backbone");

    auto* cmd_discover = app.add_subcommand("discover", "Cluster saliency maps for one class");
    cmd_discover->add_option("--class", o.cls, "Target class")->capture_default_str();

    auto* cmd_label = app.add_subcommand("label-cluster", "Name a discovered cluster");
    cmd_label->add_option("--class", o.cls, "Target class")->capture_default_str();
    cmd_label->add_option("--cluster", o.cluster, "Cluster index")->required();
    cmd_label->add_option("--label", o.label, "Concept name")->required();

    auto* cmd_bank = app.add_subcommand("build-bank", "Fit concept activation vectors");
    cmd_bank->add_option("--concepts", o.concepts, "Concept names (default: all labeled)")->delimiter(',');
    cmd_bank->add_option("--exemplars", o.exemplars, "Exemplars per side");

    auto* cmd_rule = app.add_subcommand("rule", "Edit the rule table");
    cmd_rule->require_subcommand(1);
    auto* cmd_rule_add = cmd_rule->add_subcommand("add", "Append a rule");
    cmd_rule_add->add_option("text", o.rule_text, "e.g. \"class 1 must not use watermark\"")->required();
    cmd_rule->add_subcommand("list", "Print every rule version");

    auto* cmd_head = app.add_subcommand("train-head", "Train the CAV and XIL heads");
    cmd_head->add_option("--strategy", o.strategy, "rrr, l1 or edit_norm")
        ->check(CLI::IsMember({"rrr", "l1", "edit_norm"}));

    auto* cmd_eval = app.add_subcommand("evaluate", "Score every model on a split");
    cmd_eval->add_option("--split", o.split, "train or test")->capture_default_str();
    auto* cmd_explain = app.add_subcommand("explain", "Concept attributions before and after the edit");
    cmd_explain->add_option("--split", o.split, "train or test")->capture_default_str();

    auto* cmd_sweep = app.add_subcommand("sweep", "Retrain over a parameter grid without saving");
    cmd_sweep->add_option("--parameter", o.parameter, "n_exemplars, lambda1 or lambda2")->required();
    cmd_sweep->add_option("--values", o.values, "Comma separated values")->required()->delimiter(',');
    cmd_sweep->add_option("--split", o.split, "train or test")->capture_default_str();
    cmd_sweep->add_flag("--no-retrain", o.no_retrain, "Only refit the concept bank");

    auto* cmd_serve = app.add_subcommand("serve", "Serve projects over HTTP");
    cmd_serve->add_option("--root", o.root, "Project directory")->capture_default_str();
    cmd_serve->add_option("--host", o.host, "Bind address")->capture_default_str();
    cmd_serve->add_option("--port", o.port, "Port")->capture_default_str();
    cmd_serve->add_option("--static", o.static_dir, "Directory served at /");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kInvalid;  // --help exits cleanly
    }

    try {
        if (cmd_serve->parsed()) return serve(o);
        if (o.project.empty()) throw ParameterError("--project is required");

        json out;
        if (cmd_new->parsed()) {
            if (fs::exists(o.project)) throw WorkflowError("'" + o.project + "' already exists");
            const auto id = o.id.empty() ? fs::path(o.project).stem().string() : o.id;
            const json config = o.config.empty() ? json::object() : read_json_file(o.config);
            auto s = Session::create(o.project, id, o.seed.value_or(0), config);
            s.save();
            out = project_summary(s.project());
        } else if (app.got_subcommand("show")) {
            out = project_summary(load_project(o.project));
        } else if (app.got_subcommand("generate")) {
            out = run(o, Step::generate, json::object());
        } else if (cmd_ingest->parsed()) {
            out = run(o, Step::ingest, {{"train", o.train_path}, {"test", o.test_path}});
        } else if (app.got_subcommand("train-baseline")) {
            out = run(o, Step::train_baseline, json::object());
        } else if (cmd_discover->parsed()) {
            out = run(o, Step::discover, {{"class", o.cls}});
        } else if (cmd_label->parsed()) {
            out = run(o, Step::label_cluster, {{"class", o.cls}, {"cluster", o.cluster}, {"label", o.label}});
        } else if (cmd_bank->parsed()) {
            json params = json::object();
            if (!o.concepts.empty()) params["concepts"] = o.concepts;
            if (o.exemplars > 0) params["n_exemplars"] = o.exemplars;
            out = run(o, Step::build_bank, std::move(params));
        } else if (cmd_rule_add->parsed()) {
            out = run(o, Step::add_rule, {{"text", o.rule_text}});
        } else if (cmd_rule->parsed()) {
            out = pipeline_detail::rules_json(load_project(o.project));
        } else if (cmd_head->parsed()) {
            json params = json::object();
            if (!o.strategy.empty()) params["strategy"] = o.strategy;
            out = run(o, Step::train_head, std::move(params));
        } else if (cmd_eval->parsed()) {
            out = run(o, Step::evaluate, {{"split", o.split}});
        } else if (cmd_explain->parsed()) {
            out = run(o, Step::explain, {{"split", o.split}});
        } else if (cmd_sweep->parsed()) {
            out = run(o, Step::sweep, {{"parameter", o.parameter}, {"values", o.values}, {"split", o.split},
                                       {"retrain_heads", !o.no_retrain}});
        }
        std::cout << out.dump(2) << "\n";
        return kOk;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", error_json(e)}}.dump(2) << "\n";
        return exit_code_for(e);
    }
}
