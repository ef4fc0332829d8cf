#ifndef AQM_SERVICE_HPP
#define AQM_SERVICE_HPP

// HTTP session service for interactive labeling. Requires cpp-httplib.

#include "aqm/session.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>

namespace aqm {

struct ServiceReply {
    int status = 200;
    nlohmann::json body;
};

/// Session registry behind the HTTP routes. Requests on one session are
/// serialized by its own mutex; distinct sessions proceed in parallel.
class SessionService {
public:
    SessionService() = default;

    /// Dataset used when a session config names neither a setting nor a file.
    void set_default_dataset(std::shared_ptr<const Dataset> data) { default_data_ = std::move(data); }
    /// Directory that relative dataset paths in session configs resolve against.
    void set_data_dir(std::string dir) { data_dir_ = std::move(dir); }

    ServiceReply create(const nlohmann::json& body) {
        RunConfig cfg;
        std::shared_ptr<const Dataset> data;
        try {
            const nlohmann::json& c = body.contains("config") ? body.at("config") : body;
            cfg = c.get<RunConfig>();
            if (cfg.setting) {
                data = std::make_shared<const Dataset>(generate(*cfg.setting));
            } else if (!cfg.dataset.empty()) {
                std::string path = cfg.dataset;
                if (!data_dir_.empty() && !path.empty() && path.front() != '/') path = data_dir_ + "/" + path;
                data = std::make_shared<const Dataset>(load_csv(path));
            } else if (default_data_) {
                data = default_data_;
            } else {
                return error(400, "config names no dataset and the service has no default");
            }
            auto entry = std::make_shared<Entry>();
            entry->session = std::make_unique<ActiveSession>(data, cfg);
            std::lock_guard lock(mu_);
            std::string id = "s" + std::to_string(++counter_);
            sessions_[id] = entry;
            return {201, {{"session_id", id}}};
        } catch (const nlohmann::json::exception& e) {
            return error(400, std::string("bad config: ") + e.what());
        } catch (const Error& e) {
            return error(400, e.what());
        }
    }

    ServiceReply next(const std::string& id) {
        return with(id, [&](ActiveSession& s) -> ServiceReply {
            if (s.budget_exhausted()) return error(410, "query budget exhausted");
            auto q = s.next_question();
            if (!q) return error(410, "no instance is left to query");
            nlohmann::json j;
            j["pair"] = {q->pair.first, q->pair.second};
            j["target"] = q->target ? nlohmann::json(*q->target) : nlohmann::json(nullptr);
            j["neighborhood_probed"] = q->neighborhood >= 0 ? nlohmann::json(q->neighborhood) : nlohmann::json(nullptr);
            j["progress"] = progress(s);
            return {200, j};
        });
    }

    ServiceReply answer(const std::string& id, const nlohmann::json& body) {
        return with(id, [&](ActiveSession& s) -> ServiceReply {
            Pair pr;
            Relation rel;
            try {
                auto p = body.at("pair");
                if (!p.is_array() || p.size() != 2) return error(400, "pair must be [i, j]");
                auto i = p[0].get<long long>(), j = p[1].get<long long>();
                if (i < 0 || j < 0) return error(400, "pair indices must be nonnegative");
                pr = Pair(static_cast<Index>(i), static_cast<Index>(j));
                rel = relation_from_string(body.at("relation").get<std::string>());
            } catch (const nlohmann::json::exception& e) {
                return error(400, std::string("bad answer: ") + e.what());
            } catch (const Error& e) {
                return error(400, e.what());
            }
            if (s.budget_exhausted()) return error(410, "query budget exhausted");
            try {
                AnswerResult r = s.answer(pr, rel);
                nlohmann::json j;
                j["accepted"] = r.accepted;
                j["implied_constraints"] = r.implied;
                j["new_neighborhood"] = r.created >= 0 ? nlohmann::json(r.created) : nlohmann::json(nullptr);
                j["joined_neighborhood"] = r.joined >= 0 ? nlohmann::json(r.joined) : nlohmann::json(nullptr);
                j["loop_completed"] = r.loop_completed;
                j["progress"] = progress(s);
                return {200, j};
            } catch (const ContradictionError& e) {
                return error(409, e.what());
            } catch (const BudgetExhausted& e) {
                return error(410, e.what());
            } catch (const NoCandidates& e) {
                return error(410, e.what());
            } catch (const Error& e) {
                return error(400, e.what());
            }
        });
    }

    ServiceReply state(const std::string& id) {
        return with(id, [&](ActiveSession& s) -> ServiceReply {
            nlohmann::json j = s.state_json();
            // 2-D view on the two most heavily weighted features, scaled by sqrt(weight).
            Vector w = s.metric().feature_weights();
            std::vector<Index> idx(w.size());
            std::iota(idx.begin(), idx.end(), 0);
            std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) {
                return w[static_cast<Eigen::Index>(a)] > w[static_cast<Eigen::Index>(b)];
            });
            const Index fx = idx[0], fy = idx.size() > 1 ? idx[1] : idx[0];
            const double sx = std::sqrt(std::max(0.0, w[static_cast<Eigen::Index>(fx)]));
            const double sy = std::sqrt(std::max(0.0, w[static_cast<Eigen::Index>(fy)]));
            nlohmann::json pts = nlohmann::json::array();
            const Matrix& X = s.data().points();
            for (Index i = 0; i < s.data().n(); ++i) {
                const auto r = static_cast<Eigen::Index>(i);
                int m = s.neighborhoods().membership(i);
                pts.push_back({X(r, static_cast<Eigen::Index>(fx)) * sx, X(r, static_cast<Eigen::Index>(fy)) * sy,
                               m >= 0 ? nlohmann::json(m) : nlohmann::json(nullptr)});
            }
            j["embedding"] = {{"features", {fx, fy}}, {"points", pts}};
            j["feature_names"] = s.data().feature_names();
            j["finished"] = s.finished();
            return {200, j};
        });
    }

    ServiceReply clusters(const std::string& id) {
        return with(id, [&](ActiveSession& s) -> ServiceReply {
            try {
                Evaluation ev = s.evaluate();
                nlohmann::json j = to_json(ev);
                j["K"] = ev.result.assignment.K;
                return {200, j};
            } catch (const Error& e) {
                return error(500, e.what());
            }
        });
    }

    ServiceReply remove(const std::string& id) {
        std::lock_guard lock(mu_);
        if (sessions_.erase(id) == 0) return error(404, "unknown session '" + id + "'");
        return {200, {{"deleted", id}}};
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return sessions_.size();
    }

private:
    struct Entry {
        std::mutex mu;
        std::unique_ptr<ActiveSession> session;
    };

    static ServiceReply error(int status, const std::string& msg) { return {status, {{"error", msg}}}; }

    static nlohmann::json progress(const ActiveSession& s) {
        return {{"spent", s.spent()}, {"budget", s.budget()}, {"loops", s.loops()}};
    }

    template <class F>
    ServiceReply with(const std::string& id, F&& f) {
        std::shared_ptr<Entry> e;
        {
            std::lock_guard lock(mu_);
            auto it = sessions_.find(id);
            if (it == sessions_.end()) return error(404, "unknown session '" + id + "'");
            e = it->second;
        }
        std::lock_guard lock(e->mu);
        return f(*e->session);
    }

    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<Entry>> sessions_;
    unsigned long long counter_ = 0;
    std::shared_ptr<const Dataset> default_data_;
    std::string data_dir_;
};

/// Registers the REST routes on `server`.
inline void mount_routes(httplib::Server& server, SessionService& svc) {
    auto send = [](httplib::Response& res, const ServiceReply& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    auto parse = [](const httplib::Request& req) -> std::optional<nlohmann::json> {
        if (req.body.empty()) return nlohmann::json::object();
        auto j = nlohmann::json::parse(req.body, nullptr, false);
        if (j.is_discarded()) return std::nullopt;
        return j;
    };
    auto bad_json = ServiceReply{400, {{"error", "request body is not valid JSON"}}};

    server.Post("/sessions", [=, &svc](const httplib::Request& req, httplib::Response& res) {
        auto j = parse(req);
        send(res, j ? svc.create(*j) : bad_json);
    });
    server.Get("/sessions/:id/next", [=, &svc](const httplib::Request& req, httplib::Response& res) {
        send(res, svc.next(req.path_params.at("id")));
    });
    server.Post("/sessions/:id/answer", [=, &svc](const httplib::Request& req, httplib::Response& res) {
        auto j = parse(req);
        send(res, j ? svc.answer(req.path_params.at("id"), *j) : bad_json);
    });
    server.Get("/sessions/:id/state", [=, &svc](const httplib::Request& req, httplib::Response& res) {
        send(res, svc.state(req.path_params.at("id")));
    });
    server.Get("/sessions/:id/clusters", [=, &svc](const httplib::Request& req, httplib::Response& res) {
        send(res, svc.clusters(req.path_params.at("id")));
    });
    server.Delete("/sessions/:id", [=, &svc](const httplib::Request& req, httplib::Response& res) {
        send(res, svc.remove(req.path_params.at("id")));
    });
}

/// Port from AQM_PORT when set, else `fallback`.
inline int service_port(int fallback) {
    if (const char* p = std::getenv("AQM_PORT")) {
        try {
            int v = std::stoi(p);
            if (v > 0 && v < 65536) return v;
        } catch (const std::exception&) {
        }
        throw InvalidArgument(std::string("AQM_PORT is not a valid port: ") + p);
    }
    return fallback;
}

/// Data directory from AQM_DATA_DIR when set, else `fallback`.
inline std::string service_data_dir(const std::string& fallback) {
    if (const char* d = std::getenv("AQM_DATA_DIR")) return d;
    return fallback;
}

}  // namespace aqm

#endif  // AQM_SERVICE_HPP
