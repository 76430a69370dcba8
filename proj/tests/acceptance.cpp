// Acceptance runner: every headline criterion at full size, one PASS/FAIL
// line each. Exits non-zero when any criterion fails.
//
//   acceptance                 # everything
//   acceptance --only gccd,cav # a subset

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "planted.hpp"
#include "xilbench/numerics/metrics.hpp"
#include "xilbench/workbench/pipeline.hpp"

using namespace xilbench;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 3) {
    std::ostringstream ss;
    ss.setf(std::ios::fixed);
    ss.precision(digits);
    ss << v;
    return ss.str();
}

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

class Scratch {
public:
    Scratch() {
        dir_ = fs::temp_directory_path() / ("xilbench-acceptance-" + std::to_string(::getpid()));
        fs::create_directories(dir_);
    }
    ~Scratch() {
        std::error_code ec;
        fs::remove_all(dir_, ec);
    }
    fs::path operator/(const std::string& name) const { return dir_ / name; }

private:
    fs::path dir_;
};

// ---------------------------------------------------------------------------
// gradients

double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic));
}

Outcome gradient_fidelity() {
    Rng rng(2024);
    auto pick = [&](int lo, int hi) { return static_cast<std::size_t>(std::uniform_int_distribution<int>(lo, hi)(rng)); };
    double worst_params = 0.0, worst_inputs = 0.0;
    std::size_t failures = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t d = pick(1, 8), p = pick(2, 3), b = pick(1, 4), hidden = pick(1, 4);
        auto h = init_logic_head(d, p, hidden, 500 + trial, uniform(rng, 0.5, 2.0));
        Vector theta = h.flat_params();
        for (double& v : theta) v = normal(rng, 0.0, 0.7);
        h.set_flat_params(theta);

        std::vector<Vector> S(b, Vector(d));
        std::vector<int> Y(b);
        for (std::size_t i = 0; i < b; ++i) {
            for (double& v : S[i]) v = normal(rng);
            Y[i] = static_cast<int>(pick(0, static_cast<int>(p) - 1));
        }
        const bool per_sample = uniform(rng) < 0.5;
        RuleTable table{Matrix(per_sample ? b : 1, d), {}, per_sample};
        for (double& v : table.H.data()) v = uniform(rng) < 0.4 ? 1.0 : 0.0;

        TrainConfig cfg;
        cfg.strategy = uniform(rng) < 0.5 ? Strategy::rrr : Strategy::l1;
        cfg.lambda1 = uniform(rng, 0.0, 0.2);
        cfg.alpha_mix = uniform(rng);
        cfg.lambda2 = std::pow(10.0, uniform(rng, -1.0, 3.5));

        const auto analytic = loss_and_grads(h, S, Y, table, cfg).grads;
        std::vector<long double> x(theta.begin(), theta.end());
        const auto numeric = central_differences<long double>(
            [&](const std::vector<long double>& th) {
                return objective_value<long double>(h, th, S, Y, table, cfg);
            },
            x, 1e-7L);
        for (std::size_t i = 0; i < numeric.size(); ++i) {
            const double e = rel_err(analytic[i], static_cast<double>(numeric[i]));
            worst_params = std::max(worst_params, e);
            failures += e > 1e-4;
        }

        // d/ds of sum_c log yhat_c; the step is the one actually realized in double
        const std::vector<long double> flat(theta.begin(), theta.end());
        for (const auto& s : S) {
            const auto g = input_gradient(h, s);
            for (std::size_t j = 0; j < d; ++j) {
                Vector up = s, down = s;
                up[j] += 1e-5;
                down[j] -= 1e-5;
                const long double step = static_cast<long double>(up[j]) - static_cast<long double>(down[j]);
                const long double fd =
                    (sum_log_probs<long double>(h, flat, up) - sum_log_probs<long double>(h, flat, down)) / step;
                const double e = rel_err(g[j], static_cast<double>(fd));
                worst_inputs = std::max(worst_inputs, e);
                failures += e > 1e-4;
            }
        }
    }
    return {failures == 0, "100 configs, max rel err params " + sci(worst_params) + ", inputs " + sci(worst_inputs) +
                               ", " + std::to_string(failures) + " over 1e-4"};
}

// ---------------------------------------------------------------------------
// end-to-end benchmark

struct SeedRun {
    std::uint64_t seed = 0;
    double cnn = 0.0;
    std::map<std::string, double> xil;  // strategy -> confounded-class accuracy
    double grad_init = 0.0, grad_rrr = 0.0;
};

double confounded_accuracy(const json& eval, const std::string& model) {
    for (const auto& r : eval["reports"])
        if (r["model"] == model) return r["confounded_class_accuracy"].get<double>();
    throw std::runtime_error("no report for " + model);
}

double masked_mean(const Vector& g, const Vector& mask) {
    double total = 0.0, count = 0.0;
    for (std::size_t j = 0; j < mask.size(); ++j)
        if (mask[j] != 0.0) {
            total += g[j];
            count += 1.0;
        }
    return total / count;
}

SeedRun run_seed(const Scratch& scratch, std::uint64_t seed) {
    auto s = Session::create(scratch / ("e2e-" + std::to_string(seed) + ".json"), "e2e", seed);
    run_step(s, Step::generate);
    run_step(s, Step::train_baseline);
    run_step(s, Step::build_bank);
    run_step(s, Step::add_rule, {{"text", "never focus on dark_corner"}});
    SeedRun out{seed, 0.0, {}, 0.0, 0.0};
    for (const char* strategy : {"rrr", "l1", "edit_norm"}) {
        run_step(s, Step::train_head, {{"strategy", strategy}});
        const auto eval = run_step(s, Step::evaluate);
        out.cnn = confounded_accuracy(eval, "cnn");
        out.xil[strategy] = confounded_accuracy(eval, "xil");
        if (std::string(strategy) == "rrr") {
            const Project& p = s.project();
            const auto& S = s.scores("train");
            const auto mask = rule_mask(p.current_rules());
            const auto h0 = init_logic_head(p.bank->size(), s.num_classes(), p.config.head.hidden_per_class, p.seed,
                                            p.config.head.temperature);
            out.grad_init = masked_mean(mean_abs_input_gradient(h0, S), mask);
            out.grad_rrr = masked_mean(mean_abs_input_gradient(p.head_xil->head, S), mask);
        }
    }
    std::cerr << "  seed " << seed << ": cnn " << fmt(out.cnn) << "  rrr " << fmt(out.xil["rrr"]) << "  l1 "
              << fmt(out.xil["l1"]) << "  edit_norm " << fmt(out.xil["edit_norm"]) << "  masked |grad| "
              << fmt(out.grad_init, 5) << " -> " << fmt(out.grad_rrr, 5) << "\n";
    return out;
}

const std::vector<SeedRun>& e2e_runs(const Scratch& scratch) {
    static std::vector<SeedRun> runs;
    if (runs.empty())
        for (std::uint64_t seed = 1; seed <= 5; ++seed) runs.push_back(run_seed(scratch, seed));
    return runs;
}

Outcome end_to_end(const Scratch& scratch) {
    std::size_t wins = 0;
    std::string margins;
    for (const auto& r : e2e_runs(scratch)) {
        const double margin = r.xil.at("rrr") - r.cnn;
        wins += margin >= 0.15;
        margins += (margins.empty() ? "" : " ") + fmt(100.0 * margin, 1);
    }
    return {wins >= 3, std::to_string(wins) + "/5 seeds with XIL >= CNN + 15 pts (margins " + margins + ")"};
}

Outcome gradient_suppression(const Scratch& scratch) {
    std::size_t ok = 0;
    std::string ratios;
    for (const auto& r : e2e_runs(scratch)) {
        const double ratio = r.grad_init / std::max(r.grad_rrr, 1e-300);
        ok += ratio >= 10.0;
        ratios += (ratios.empty() ? "" : " ") + fmt(ratio, 1) + "x";
    }
    return {ok == 5, std::to_string(ok) + "/5 seeds with masked |grad| down >= 10x (" + ratios + ")"};
}

Outcome strategy_ordering(const Scratch& scratch) {
    std::size_t ok = 0;
    for (const auto& r : e2e_runs(scratch))
        ok += r.xil.at("rrr") >= r.xil.at("l1") && r.xil.at("l1") >= r.xil.at("edit_norm");
    return {ok >= 4, std::to_string(ok) + "/5 seeds with rrr >= l1 >= edit_norm"};
}

// ---------------------------------------------------------------------------
// concept discovery and concept vectors

Outcome gccd_recovery() {
    std::size_t ok = 0;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto bench = planted::two_mode_saliency(200, 40, 100 + seed);
        GccdParams p;
        p.subsample = 200;
        p.seed = seed;
        const auto rep = discover(bench.samples, Backbone{ExternalBackbone{}}, 0, p);
        std::map<std::string, int> got;
        for (std::size_t c = 0; c < rep.num_clusters(); ++c)
            for (const auto& id : rep.member_ids[c]) got[id] = static_cast<int>(c);
        std::vector<int> truth, pred;
        for (std::size_t i = 0; i < bench.samples.size(); ++i) {
            truth.push_back(bench.truth[i]);
            pred.push_back(got.at(bench.samples[i].id));
        }
        const double ari = adjusted_rand_index(truth, pred);
        ok += rep.num_clusters() == 2 && ari >= 0.9;
        detail += (detail.empty() ? "" : ", ") + ("k=" + std::to_string(rep.num_clusters()) + " ARI " + fmt(ari));
    }
    return {ok == 5, std::to_string(ok) + "/5 seeds (" + detail + ")"};
}

Outcome cav_recovery() {
    const auto lc = planted::linear_concept(32, 70, 2.0, 8);
    CavOptions opt;
    opt.seed = 1;
    const auto cv = learn_cav(lc.positives, lc.negatives, opt);
    const double cosine = dot(cv.w, lc.direction) / std::sqrt(dot(cv.w, cv.w));
    return {cosine >= 0.95 && cv.heldout_accuracy >= 0.95,
            "cosine " + fmt(cosine, 4) + ", heldout " + fmt(cv.heldout_accuracy)};
}

Outcome exemplar_plateau(const Scratch& scratch) {
    // 150 exemplars per side need a larger probe corpus than the default
    auto s = Session::create(scratch / "plateau.json", "plateau", 1, {{"bank", {{"probe_size", 800}}}});
    run_step(s, Step::generate);
    run_step(s, Step::train_baseline);
    run_step(s, Step::build_bank);
    const std::vector<double> grid{10, 25, 50, 75, 100, 125, 150};
    const auto sweep =
        run_step(s, Step::sweep, {{"parameter", "n_exemplars"}, {"values", grid}, {"retrain_heads", false}});
    double at75 = 0.0, best = 0.0;
    std::string curve;
    for (const auto& row : sweep["rows"]) {
        const double acc = row["mean_heldout_accuracy"].get<double>();
        if (row["value"].get<double>() == 75.0) at75 = acc;
        best = std::max(best, acc);
        curve += (curve.empty() ? "" : " ") + fmt(acc);
    }
    return {best - at75 <= 0.03, "heldout at 75 " + fmt(at75) + ", max " + fmt(best) + " (curve " + curve + ")"};
}

// ---------------------------------------------------------------------------
// persistence

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome persistence(const Scratch& scratch) {
    // a fully trained project from the end-to-end run
    const auto& runs = e2e_runs(scratch);
    const fs::path file = scratch / ("e2e-" + std::to_string(runs.front().seed) + ".json");
    auto s = Session::open(file);
    const Project loaded = s.project();
    const bool round_trip = serialize_project(loaded) == slurp(file) && load_project(file) == loaded;

    std::size_t injected = 0, intact = 0;
    struct Boom {};
    const std::vector<SaveHooks> faults{
        {[](const fs::path&) { throw Boom{}; }, nullptr},
        {nullptr, [](const fs::path&) { throw Boom{}; }},
        {nullptr, [](const fs::path& tmp) {
             fs::resize_file(tmp, fs::file_size(tmp) / 3);
             throw Boom{};
         }},
    };
    const std::vector<std::pair<Step, json>> steps{
        {Step::add_rule, {{"text", "never focus on irregular_border"}}},
        {Step::train_head, {{"strategy", "l1"}}},
        {Step::evaluate, json::object()},
        {Step::build_bank, {{"n_exemplars", 40}}},
    };
    for (const auto& hooks : faults)
        for (const auto& [step, params] : steps) {
            const std::string before = slurp(file);
            ++injected;
            try {
                run_step(s, step, params, hooks);
            } catch (const Boom&) {
            }
            bool ok = slurp(file) == before && s.project() == loaded;
            try {
                ok = ok && load_project(file) == loaded;
            } catch (const std::exception&) {
                ok = false;
            }
            intact += ok;
        }
    // a clean save afterwards still works and replaces the stale temporary
    run_step(s, Step::add_rule, {{"text", "never focus on irregular_border"}});
    const bool recovered = load_project(file) == s.project() && s.project().rules.size() == loaded.rules.size() + 1;
    return {round_trip && intact == injected && recovered,
            std::string("round trip ") + (round_trip ? "bit-exact" : "differs") + ", " + std::to_string(intact) + "/" +
                std::to_string(injected) + " injected crashes left the project intact, clean save " +
                (recovered ? "ok" : "failed")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::vector<std::string> only;
    app.add_option("--only", only, "Criteria to run")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    Scratch scratch;
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient-fidelity", gradient_fidelity},
        {"end-to-end", [&] { return end_to_end(scratch); }},
        {"gradient-suppression", [&] { return gradient_suppression(scratch); }},
        {"gccd-recovery", gccd_recovery},
        {"cav-recovery", cav_recovery},
        {"strategy-ordering", [&] { return strategy_ordering(scratch); }},
        {"exemplar-plateau", [&] { return exemplar_plateau(scratch); }},
        {"persistence", [&] { return persistence(scratch); }},
    };
    const std::set<std::string> wanted(only.begin(), only.end());
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        if (!wanted.empty() && !wanted.count(name)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << " [" << fmt(secs, 1) << " s]"
                  << std::endl;
        failed += !o.pass;
    }
    return failed == 0 ? 0 : 1;
}
