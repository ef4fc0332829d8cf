// Command-line front end: generate, run, bench, serve, weights.

#include "aqm/experiment.hpp"
#include "aqm/service.hpp"
#include "aqm/session.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <numeric>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace {

using namespace aqm;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("'" + path + "' is not valid JSON: " + e.what());
    }
}

// Options shared by run and weights.
struct RunFlags {
    std::string config;
    std::string setting;
    std::string dataset;
    int p1 = 5, p2 = 30, n = 300, K = 0, budget = 0;
    double c = 3.0, r = 5.0;
    bool balanced = false;
    std::string strategy;
    std::optional<unsigned long long> seed;
    std::vector<int> checkpoints;

    void add(CLI::App* app) {
        app->add_option("--config", config, "JSON run configuration");
        app->add_option("--setting", setting, "synthetic setting: basic, signflip, sphere");
        app->add_option("--dataset", dataset, "CSV dataset (header row, optional final 'label' column)");
        app->add_option("--p1", p1, "relevant features");
        app->add_option("--p2", p2, "irrelevant features");
        app->add_option("--c", c, "center offset");
        app->add_option("--r", r, "sphere radius");
        app->add_option("--n", n, "points");
        app->add_option("--K", K, "clusters");
        app->add_flag("--balanced", balanced, "exact cluster sizes");
        app->add_option("--budget", budget, "query budget");
        app->add_option("--strategy", strategy, "mee, npu, random, two-step");
        app->add_option("--seed", seed, "random seed");
        app->add_option("--checkpoints", checkpoints, "query counts to evaluate at");
    }

    RunConfig build() const {
        RunConfig cfg;
        if (!config.empty()) {
            try {
                cfg = read_json_file(config).get<RunConfig>();
            } catch (const nlohmann::json::exception& e) {
                throw UsageError(std::string("bad config: ") + e.what());
            }
        }
        if (!setting.empty()) {
            SimSetting s;
            s.kind = sim_kind_from_string(setting);
            s.p1 = p1;
            s.p2 = p2;
            s.c = c;
            s.r = r;
            s.n = n;
            s.K = K > 0 ? K : p1;
            s.balanced = balanced;
            s.seed = seed.value_or(cfg.seed);
            cfg.setting = s;
        }
        if (!dataset.empty()) {
            cfg.dataset = dataset;
            cfg.setting.reset();
        }
        if (K > 0) cfg.K = K;
        if (budget > 0) cfg.budget = budget;
        if (!strategy.empty()) cfg.strategy = strategy_from_string(strategy);
        if (seed) {
            cfg.seed = *seed;
            if (cfg.setting && setting.empty()) cfg.setting->seed = *seed;
        }
        if (!checkpoints.empty()) cfg.checkpoints = checkpoints;
        if (!cfg.setting && cfg.dataset.empty()) throw UsageError("give --setting, --dataset or a config naming one");
        cfg.validate();
        return cfg;
    }
};

std::string setting_label(const RunConfig& cfg) {
    if (cfg.setting) return to_string(cfg.setting->kind);
    return cfg.dataset;
}

int cmd_generate(const std::string& kind, const SimSetting& base, const std::string& out) {
    SimSetting s = base;
    s.kind = sim_kind_from_string(kind);
    Dataset d = generate(s);
    if (out.empty() || out == "-") write_csv(std::cout, d);
    else save_dataset_csv(out, d);
    return kOk;
}

int cmd_run(const RunFlags& flags, const std::string& out, const std::string& trajectory) {
    RunConfig cfg = flags.build();
    RunTrajectory tr = run_session(cfg);
    std::vector<ResultRecord> recs;
    for (const auto& c : tr.checkpoints)
        recs.push_back({setting_label(cfg), to_string(cfg.strategy), c.n_queries, 0, cfg.seed, c.ari, std::nullopt});
    if (tr.checkpoints.empty() || tr.checkpoints.back().n_queries != tr.final.n_queries)
        recs.push_back({setting_label(cfg), to_string(cfg.strategy), tr.final.n_queries, 0, cfg.seed, tr.final.ari, std::nullopt});
    nlohmann::json meta = {{"command", "run"}, {"config", cfg}};
    if (out.empty() || out == "-") write_results(std::cout, recs);
    else save_results(out, recs, meta);
    if (!trajectory.empty()) {
        std::ofstream t(trajectory);
        if (!t) throw IoError("cannot write '" + trajectory + "'");
        t << to_json(tr).dump(2) << '\n';
    }
    return kOk;
}

/// Bench grid file:
///   {"name": "...", "base": {RunConfig}, "strategies": [...], "n_queries": [...], "reps": N}
/// or an explicit {"cells": [{"name": ..., "config": {...}}], "reps": N}.
int cmd_bench(const std::string& grid_path, const std::string& out, int reps_flag, int threads, bool timing) {
    nlohmann::json g = read_json_file(grid_path);
    std::vector<ExperimentCell> cells;
    int reps = g.value("reps", 1);
    try {
        if (g.contains("cells")) {
            for (const auto& c : g.at("cells")) cells.push_back({c.at("name").get<std::string>(), c.at("config").get<RunConfig>()});
        } else {
            RunConfig base = g.at("base").get<RunConfig>();
            std::string name = g.value("name", setting_label(base));
            std::vector<std::string> strategies = g.value("strategies", std::vector<std::string>{to_string(base.strategy)});
            std::vector<int> nq = g.value("n_queries", std::vector<int>{base.budget});
            for (const auto& s : strategies) {
                RunConfig cfg = base;
                cfg.strategy = strategy_from_string(s);
                cfg.checkpoints = nq;
                cells.push_back({name, cfg});
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("bad bench grid: ") + e.what());
    }
    if (reps_flag > 0) reps = reps_flag;
    ExperimentOptions opt{reps, threads, timing};
    ExperimentResult res = run_experiment(cells, opt);
    nlohmann::json meta = {{"command", "bench"}, {"grid", g}, {"reps", reps}, {"summary", to_json(res.summary)}};
    if (out.empty() || out == "-") write_results(std::cout, res.records);
    else save_results(out, res.records, meta);
    for (const auto& s : res.summary)
        std::cerr << s.setting << ' ' << s.strategy << ' ' << s.n_queries << ": mean ARI " << s.mean << " (sd " << s.std
                  << ", n=" << s.count << ")\n";
    return kOk;
}

int cmd_weights(const RunFlags& flags) {
    RunConfig cfg = flags.build();
    auto data = std::make_shared<const Dataset>(load_dataset(cfg));
    RunTrajectory tr = run_session(cfg, data, label_oracle(*data));
    const Vector& w = tr.feature_weights;
    std::vector<Index> idx(static_cast<std::size_t>(w.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) {
        return w[static_cast<Eigen::Index>(a)] > w[static_cast<Eigen::Index>(b)];
    });
    const double total = w.sum();
    std::cout << "feature,weight,share\n";
    for (Index m : idx)
        std::cout << data->feature_names()[m] << ',' << format_double(w[static_cast<Eigen::Index>(m)]) << ','
                  << format_double(total > 0 ? w[static_cast<Eigen::Index>(m)] / total : 0.0) << '\n';
    return kOk;
}

int cmd_serve(std::optional<int> port_flag, const std::string& dataset, const std::string& config) {
    int port = 8080;
    std::string data_dir;
    if (!config.empty()) {
        nlohmann::json c = read_json_file(config);
        port = c.value("port", port);
        data_dir = c.value("data_dir", data_dir);
    }
    port = port_flag ? *port_flag : service_port(port);
    data_dir = service_data_dir(data_dir);
    SessionService svc;
    svc.set_data_dir(data_dir);
    if (!dataset.empty()) {
        std::string path = dataset;
        if (!data_dir.empty() && path.front() != '/') path = data_dir + "/" + path;
        svc.set_default_dataset(std::make_shared<const Dataset>(load_csv(path)));
    }
    httplib::Server server;
    mount_routes(server, svc);
    std::cerr << "listening on port " << port << '\n';
    if (!server.listen("0.0.0.0", port)) throw std::runtime_error("cannot listen on port " + std::to_string(port));
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Active semi-supervised clustering with metric learning"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("generate", "write a synthetic dataset as CSV");
    std::string gen_kind = "basic", gen_out;
    SimSetting gs;
    gen->add_option("--setting", gen_kind, "basic, signflip, sphere");
    gen->add_option("--p1", gs.p1);
    gen->add_option("--p2", gs.p2);
    gen->add_option("--c", gs.c);
    gen->add_option("--r", gs.r);
    gen->add_option("--n", gs.n);
    gen->add_option("--K", gs.K);
    gen->add_option("--seed", gs.seed);
    gen->add_flag("--balanced", gs.balanced);
    gen->add_option("-o,--out", gen_out, "output path (default stdout)");

    auto* run = app.add_subcommand("run", "one session with the label oracle; writes a results CSV");
    RunFlags run_flags;
    run_flags.add(run);
    std::string run_out, run_traj;
    run->add_option("-o,--out", run_out, "results CSV (sidecar <out>.json holds the config)");
    run->add_option("--trajectory", run_traj, "write the per-loop trajectory as JSON");

    auto* bench = app.add_subcommand("bench", "experiment grid; writes a results CSV");
    std::string bench_grid, bench_out;
    int bench_reps = 0, bench_threads = 1;
    bool bench_timing = false;
    bench->add_option("grid", bench_grid, "JSON grid file")->required();
    bench->add_option("-o,--out", bench_out, "results CSV");
    bench->add_option("--reps", bench_reps, "override the grid's replicate count");
    bench->add_option("--threads", bench_threads, "worker threads");
    bench->add_flag("--timing", bench_timing, "record runtime_seconds (breaks byte-identical output)");

    auto* serve = app.add_subcommand("serve", "HTTP session service");
    std::optional<int> serve_port;
    std::string serve_dataset, serve_config;
    serve->add_option("--port", serve_port, "port (default: AQM_PORT, config, then 8080)");
    serve->add_option("--dataset", serve_dataset, "default dataset CSV");
    serve->add_option("--config", serve_config, "service config JSON (port, data_dir)");

    auto* weights = app.add_subcommand("weights", "run a session and print final feature weights, largest first");
    RunFlags weight_flags;
    weight_flags.add(weights);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*gen) return cmd_generate(gen_kind, gs, gen_out);
        if (*run) return cmd_run(run_flags, run_out, run_traj);
        if (*bench) return cmd_bench(bench_grid, bench_out, bench_reps, bench_threads, bench_timing);
        if (*serve) return cmd_serve(serve_port, serve_dataset, serve_config);
        if (*weights) return cmd_weights(weight_flags);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const ParseError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const IoError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const LengthMismatch& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return kRuntime;
    }
    return kUsage;
}
