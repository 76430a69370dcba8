#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <future>
#include <memory>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "xilbench/workbench/pipeline.hpp"

namespace xilbench {

/// HTTP status for a failure: workflow-order violations are conflicts,
/// every other library error is a validation failure.
inline int http_status_for(const std::exception& e) {
    if (const auto* err = dynamic_cast<const Error*>(&e)) return err->kind() == "workflow" ? 409 : 422;
    if (dynamic_cast<const nlohmann::json::exception*>(&e)) return 422;
    return 500;
}

inline nlohmann::json error_json(const std::exception& e) {
    const auto* err = dynamic_cast<const Error*>(&e);
    return {{"kind", err ? err->kind() : std::string("internal")},
            {"message", e.what()},
            {"status", http_status_for(e)}};
}

// ---------------------------------------------------------------------------
// Views served to the UI

inline nlohmann::json stamp_view(const Project& p, const std::string& artifact) {
    const auto it = p.stamps.find(artifact);
    if (it == p.stamps.end()) return nullptr;
    return {{"step", it->second.step},
            {"config_hash", it->second.config_hash},
            {"stale", it->second.config_hash != config_hash(p.config)}};
}

inline nlohmann::json project_summary(const Project& p) {
    using nlohmann::json;
    json stamps = json::object();
    for (const auto& [name, _] : p.stamps) stamps[name] = stamp_view(p, name);
    json clusters = json::array();
    for (const auto& r : p.clusters) clusters.push_back({{"class", r.class_id}, {"clusters", r.num_clusters()}});
    json bank = nullptr;
    if (p.bank) {
        bank = json::array();
        for (const auto& c : p.bank->concepts())
            bank.push_back({{"name", c.name},
                            {"provenance", to_string(c.provenance)},
                            {"train_accuracy", c.train_accuracy},
                            {"heldout_accuracy", c.heldout_accuracy}});
    }
    json heads = {{"cav", p.head_cav.has_value()}, {"xil", nullptr}};
    if (p.head_xil)
        heads["xil"] = {{"strategy", to_string(p.head_xil->strategy)}, {"rules_version", p.head_xil->rules_version}};
    return {{"id", p.id},
            {"seed", p.seed},
            {"config", io::to_json(p.config)},
            {"config_hash", config_hash(p.config)},
            {"dataset", p.dataset ? json(p.dataset->kind) : json(nullptr)},
            {"backbone", p.backbone ? json(std::holds_alternative<ToyBackbone>(*p.backbone) ? "toy" : "external")
                                    : json(nullptr)},
            {"stamps", std::move(stamps)},
            {"clusters", std::move(clusters)},
            {"bank", std::move(bank)},
            {"rules_version", p.rules.empty() ? 0 : p.rules.back().version},
            {"heads", std::move(heads)},
            {"evals", p.evals.size()}};
}

inline nlohmann::json cluster_view(const Project& p, const ClusterReport& r) {
    using nlohmann::json;
    std::map<std::string, std::size_t> cluster_of;
    json clusters = json::array();
    for (std::size_t k = 0; k < r.num_clusters(); ++k) {
        for (const auto& id : r.member_ids[k]) cluster_of[id] = k;
        clusters.push_back({{"index", k},
                            {"label", r.labels[k] ? json(*r.labels[k]) : json(nullptr)},
                            {"size", r.member_ids[k].size()},
                            {"medoid_id", r.medoid_ids[k]},
                            {"member_ids", r.member_ids[k]}});
    }
    json points = json::array();
    for (std::size_t i = 0; i < r.sample_ids.size(); ++i)
        points.push_back({{"id", r.sample_ids[i]},
                          {"x", r.tsne_coords(i, 0)},
                          {"y", r.tsne_coords(i, 1)},
                          {"cluster", cluster_of.at(r.sample_ids[i])}});
    return {{"class_id", r.class_id},
            {"stamp", stamp_view(p, "clusters/" + std::to_string(r.class_id))},
            {"eigenvalues", r.eigenvalues},
            {"clusters", std::move(clusters)},
            {"points", std::move(points)}};
}

inline nlohmann::json eval_history(const Project& p) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& e : p.evals)
        out.push_back({{"split", e.split},
                       {"config_hash", e.config_hash},
                       {"reports", pipeline_detail::eval_json(e.reports)}});
    return out;
}

// ---------------------------------------------------------------------------
// Per-project job queue

struct Job {
    std::string id;
    Step step;
    nlohmann::json params;
    std::string status = "queued";  ///< queued | running | succeeded | failed
    nlohmann::json result;
    nlohmann::json error;
};

/// One open project: a worker thread applies queued mutations in FIFO order,
/// and readers see the snapshot published after the last completed job.
class ProjectSlot {
public:
    explicit ProjectSlot(Session session)
        : session_(std::move(session)), snapshot_(std::make_shared<const Project>(session_.project())) {
        worker_ = std::thread([this] { run(); });
    }

    ~ProjectSlot() {
        {
            std::lock_guard lock(mutex_);
            stopping_ = true;
        }
        cv_.notify_all();
        worker_.join();
    }

    ProjectSlot(const ProjectSlot&) = delete;
    ProjectSlot& operator=(const ProjectSlot&) = delete;

    std::shared_ptr<const Project> snapshot() const {
        std::lock_guard lock(mutex_);
        return snapshot_;
    }

    /// Queues `step`. When nothing is pending the prerequisites are checked
    /// up front so ordering mistakes fail fast; otherwise they are checked
    /// when the job runs.
    std::shared_ptr<Job> submit(Step step, nlohmann::json params) {
        std::lock_guard lock(mutex_);
        if (queue_.empty() && !busy_) check_prerequisites(*snapshot_, step);
        auto job = std::make_shared<Job>();
        job->id = "job-" + std::to_string(++counter_);
        job->step = step;
        job->params = std::move(params);
        jobs_[job->id] = job;
        order_.push_back(job->id);
        queue_.push_back(job);
        cv_.notify_all();
        return job;
    }

    /// Submits and blocks until the job finishes.
    std::shared_ptr<Job> run_sync(Step step, nlohmann::json params) {
        auto job = submit(step, std::move(params));
        std::unique_lock lock(mutex_);
        done_cv_.wait(lock, [&] { return job->status == "succeeded" || job->status == "failed"; });
        return job;
    }

    std::optional<nlohmann::json> job_json(const std::string& id) const {
        std::lock_guard lock(mutex_);
        const auto it = jobs_.find(id);
        if (it == jobs_.end()) return std::nullopt;
        return describe(*it->second);
    }

    nlohmann::json jobs_json() const {
        std::lock_guard lock(mutex_);
        nlohmann::json out = nlohmann::json::array();
        for (const auto& id : order_) out.push_back({{"id", id}, {"step", to_string(jobs_.at(id)->step)},
                                                     {"status", jobs_.at(id)->status}});
        return out;
    }

    static nlohmann::json describe(const Job& j) {
        return {{"id", j.id},
                {"step", to_string(j.step)},
                {"status", j.status},
                {"result", j.result},
                {"error", j.error}};
    }

private:
    void run() {
        for (;;) {
            std::shared_ptr<Job> job;
            {
                std::unique_lock lock(mutex_);
                cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
                if (queue_.empty()) return;  // stopping with nothing left
                job = queue_.front();
                queue_.pop_front();
                job->status = "running";
                busy_ = true;
            }
            nlohmann::json result, error;
            try {
                result = run_step(session_, job->step, job->params);
            } catch (const std::exception& e) {
                error = error_json(e);
            }
            {
                std::lock_guard lock(mutex_);
                job->result = std::move(result);
                job->error = std::move(error);
                job->status = job->error.is_null() ? "succeeded" : "failed";
                snapshot_ = std::make_shared<const Project>(session_.project());
                busy_ = false;
            }
            done_cv_.notify_all();
        }
    }

    Session session_;  // touched only by the worker
    mutable std::mutex mutex_;
    std::condition_variable cv_, done_cv_;
    std::shared_ptr<const Project> snapshot_;
    std::deque<std::shared_ptr<Job>> queue_;
    std::map<std::string, std::shared_ptr<Job>> jobs_;
    std::vector<std::string> order_;
    std::size_t counter_ = 0;
    bool busy_ = false;
    bool stopping_ = false;
    std::thread worker_;
};

// ---------------------------------------------------------------------------
// HTTP routes

/// Serves every project file `<root>/<id>.json` over the JSON API.
class Service {
public:
    explicit Service(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

    void mount(httplib::Server& srv) {
        using httplib::Request;
        using httplib::Response;
        srv.Post("/projects", [this](const Request& rq, Response& rs) { guard(rs, [&] { create(rq, rs); }); });
        srv.Get(R"(/projects/([A-Za-z0-9_\-]+))", [this](const Request& rq, Response& rs) {
            guard(rs, [&] { reply(rs, 200, with_jobs(rq.matches[1])); });
        });
        srv.Post(R"(/projects/([A-Za-z0-9_\-]+)/steps/([a-z\-]+))", [this](const Request& rq, Response& rs) {
            guard(rs, [&] { post_step(rq, rs); });
        });
        srv.Get(R"(/projects/([A-Za-z0-9_\-]+)/jobs/([A-Za-z0-9_\-]+))", [this](const Request& rq, Response& rs) {
            guard(rs, [&] {
                auto job = slot(rq.matches[1]).job_json(rq.matches[2]);
                if (!job) return reply(rs, 404, {{"error", {{"kind", "not-found"}, {"message", "no such job"}}}});
                reply(rs, 200, *job);
            });
        });
        srv.Get(R"(/projects/([A-Za-z0-9_\-]+)/clusters)", [this](const Request& rq, Response& rs) {
            guard(rs, [&] {
                const auto p = slot(rq.matches[1]).snapshot();
                nlohmann::json out = nlohmann::json::array();
                for (const auto& r : p->clusters) out.push_back(cluster_view(*p, r));
                reply(rs, 200, {{"clusters", std::move(out)}});
            });
        });
        srv.Put(R"(/projects/([A-Za-z0-9_\-]+)/clusters/([0-9]+)/label)", [this](const Request& rq, Response& rs) {
            guard(rs, [&] {
                auto body = parse_body(rq);
                body["cluster"] = std::stoll(rq.matches[2]);
                sync(rs, rq.matches[1], Step::label_cluster, std::move(body));
            });
        });
        srv.Get(R"(/projects/([A-Za-z0-9_\-]+)/rules)", [this](const Request& rq, Response& rs) {
            guard(rs, [&] { reply(rs, 200, pipeline_detail::rules_json(*slot(rq.matches[1]).snapshot())); });
        });
        srv.Put(R"(/projects/([A-Za-z0-9_\-]+)/rules)", [this](const Request& rq, Response& rs) {
            guard(rs, [&] { sync(rs, rq.matches[1], Step::set_rules, parse_body(rq)); });
        });
        srv.Get(R"(/projects/([A-Za-z0-9_\-]+)/explanations)", [this](const Request& rq, Response& rs) {
            guard(rs, [&] {
                nlohmann::json params = nlohmann::json::object();
                if (rq.has_param("split")) params["split"] = rq.get_param_value("split");
                sync(rs, rq.matches[1], Step::explain, std::move(params));
            });
        });
        srv.Get(R"(/projects/([A-Za-z0-9_\-]+)/eval)", [this](const Request& rq, Response& rs) {
            guard(rs, [&] { reply(rs, 200, {{"history", eval_history(*slot(rq.matches[1]).snapshot())}}); });
        });
    }

    ProjectSlot& slot(const std::string& id) {
        std::lock_guard lock(mutex_);
        if (auto it = slots_.find(id); it != slots_.end()) return *it->second;
        const fs::path file = root_ / (id + ".json");
        if (!fs::exists(file)) throw NotFound("no project '" + id + "'");
        auto& s = slots_[id];
        s = std::make_unique<ProjectSlot>(Session::open(file));
        return *s;
    }

private:
    struct NotFound : std::runtime_error {
        using std::runtime_error::runtime_error;
    };

    static void reply(httplib::Response& rs, int status, const nlohmann::json& body) {
        rs.status = status;
        rs.set_content(body.dump(), "application/json");
    }

    template <typename F>
    static void guard(httplib::Response& rs, F&& f) {
        try {
            f();
        } catch (const NotFound& e) {
            reply(rs, 404, {{"error", {{"kind", "not-found"}, {"message", e.what()}, {"status", 404}}}});
        } catch (const std::exception& e) {
            const auto err = error_json(e);
            reply(rs, err["status"].get<int>(), {{"error", err}});
        }
    }

    static nlohmann::json parse_body(const httplib::Request& rq) {
        if (rq.body.empty()) return nlohmann::json::object();
        auto j = nlohmann::json::parse(rq.body, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw ParameterError("request body must be a JSON object");
        return j;
    }

    nlohmann::json with_jobs(const std::string& id) {
        auto& s = slot(id);
        auto out = project_summary(*s.snapshot());
        out["jobs"] = s.jobs_json();
        return out;
    }

    void create(const httplib::Request& rq, httplib::Response& rs) {
        const auto body = parse_body(rq);
        pipeline_detail::allow_keys(body, {"id", "seed", "config"}, Step::generate);
        const auto id = pipeline_detail::get<std::string>(body, "id", "");
        static const std::regex ok("[A-Za-z0-9_\\-]+");
        if (!std::regex_match(id, ok)) throw ParameterError("project id must use only letters, digits, '_' and '-'");
        const auto seed = pipeline_detail::get<std::uint64_t>(body, "seed", 0);
        const auto config = body.contains("config") ? body["config"] : nlohmann::json::object();
        std::lock_guard lock(mutex_);
        const fs::path file = root_ / (id + ".json");
        if (slots_.count(id) || fs::exists(file))
            return reply(rs, 409, {{"error", {{"kind", "conflict"}, {"message", "project '" + id + "' exists"},
                                              {"status", 409}}}});
        auto session = Session::create(file, id, seed, config);
        session.save();
        auto& s = slots_[id];
        s = std::make_unique<ProjectSlot>(std::move(session));
        reply(rs, 201, project_summary(*s->snapshot()));
    }

    void post_step(const httplib::Request& rq, httplib::Response& rs) {
        const auto step = step_from_string(rq.matches[2].str());
        if (!step) throw NotFound("no step '" + rq.matches[2].str() + "'");
        auto job = slot(rq.matches[1]).submit(*step, parse_body(rq));
        reply(rs, 202, {{"job", job->id}, {"status", job->status}});
    }

    void sync(httplib::Response& rs, const std::string& id, Step step, nlohmann::json params) {
        auto job = slot(id).run_sync(step, std::move(params));
        if (job->status == "failed") return reply(rs, job->error["status"].get<int>(), {{"error", job->error}});
        reply(rs, 200, job->result);
    }

    fs::path root_;
    std::mutex mutex_;
    std::map<std::string, std::unique_ptr<ProjectSlot>> slots_;
};

}  // namespace xilbench
