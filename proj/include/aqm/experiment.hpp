#ifndef AQM_EXPERIMENT_HPP
#define AQM_EXPERIMENT_HPP

#include "aqm/datagen.hpp"
#include "aqm/session.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <map>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace aqm {

/// One (setting, strategy) cell; `config.checkpoints` are the query counts
/// reported, and the budget is raised to the largest of them.
struct ExperimentCell {
    std::string name;  // setting label written to the results
    RunConfig config;
};

struct ExperimentOptions {
    int reps = 1;
    int threads = 1;
    bool timing = false;  // runtime_seconds stays NA otherwise, keeping files byte-identical
};

struct CellSummary {
    std::string setting;
    std::string strategy;
    int n_queries = 0;
    int count = 0;   // successful reps
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation; 0 for a single rep
};

struct ExperimentResult {
    std::vector<ResultRecord> records;
    std::vector<CellSummary> summary;
};

/// Seed of replicate `rep`: shared by all strategies of a setting so they
/// see the same data.
inline unsigned long long replicate_seed(unsigned long long base, int rep) {
    return derive_seed(base, 100, static_cast<unsigned long long>(rep));
}

inline std::vector<CellSummary> summarize(const std::vector<ResultRecord>& records) {
    std::map<std::tuple<std::string, std::string, int>, std::vector<double>> groups;
    std::vector<std::tuple<std::string, std::string, int>> order;
    for (const auto& r : records) {
        auto key = std::make_tuple(r.setting, r.strategy, r.n_queries);
        if (!groups.count(key)) order.push_back(key);
        auto& g = groups[key];
        if (r.ari) g.push_back(*r.ari);
    }
    std::vector<CellSummary> out;
    for (const auto& key : order) {
        const auto& v = groups[key];
        CellSummary s{std::get<0>(key), std::get<1>(key), std::get<2>(key), static_cast<int>(v.size()), 0.0, 0.0};
        if (!v.empty()) {
            for (double x : v) s.mean += x;
            s.mean /= static_cast<double>(v.size());
            if (v.size() > 1) {
                double ss = 0.0;
                for (double x : v) ss += (x - s.mean) * (x - s.mean);
                s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
            }
        } else {
            s.mean = std::nan("");
        }
        out.push_back(s);
    }
    return out;
}

/// Runs every cell for `reps` replicates with the label oracle. A failed run
/// is recorded with ARI "NA" and the experiment continues.
inline ExperimentResult run_experiment(const std::vector<ExperimentCell>& cells, const ExperimentOptions& opt) {
    if (cells.empty()) throw InvalidArgument("experiment grid is empty");
    if (opt.reps < 1) throw InvalidArgument("reps must be at least 1");
    struct Job {
        std::size_t cell;
        int rep;
    };
    std::vector<Job> jobs;
    for (int r = 0; r < opt.reps; ++r)
        for (std::size_t c = 0; c < cells.size(); ++c) jobs.push_back({c, r});
    std::vector<std::vector<ResultRecord>> out(jobs.size());

    auto run_job = [&](std::size_t k) {
        const ExperimentCell& cell = cells[jobs[k].cell];
        RunConfig cfg = cell.config;
        const int rep = jobs[k].rep;
        const unsigned long long seed = replicate_seed(cfg.seed, rep);
        cfg.seed = seed;
        if (cfg.setting) cfg.setting->seed = seed;
        std::vector<int> counts = cfg.checkpoints;
        if (counts.empty()) counts.push_back(cfg.budget);
        std::sort(counts.begin(), counts.end());
        cfg.checkpoints = counts;
        cfg.budget = counts.back();
        auto t0 = std::chrono::steady_clock::now();
        std::vector<ResultRecord> recs;
        try {
            RunTrajectory tr = run_session(cfg);
            double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            for (int nq : counts) {
                ResultRecord r{cell.name, to_string(cfg.strategy), nq, rep, seed, std::nullopt, std::nullopt};
                // A run that stops early (no candidates left) is scored by its final state.
                const Evaluation* ev = &tr.final;
                for (const auto& c : tr.checkpoints)
                    if (c.n_queries == nq) ev = &c;
                r.ari = ev->ari;
                if (opt.timing) r.runtime_seconds = secs;
                recs.push_back(r);
            }
        } catch (const std::exception&) {
            for (int nq : counts) recs.push_back({cell.name, to_string(cfg.strategy), nq, rep, seed, std::nullopt, std::nullopt});
        }
        out[k] = std::move(recs);
    };

    const int threads = std::max(1, std::min<int>(opt.threads, static_cast<int>(jobs.size())));
    if (threads == 1) {
        for (std::size_t k = 0; k < jobs.size(); ++k) run_job(k);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t k; (k = next.fetch_add(1)) < jobs.size();) run_job(k);
            });
        for (auto& th : pool) th.join();
    }

    ExperimentResult res;
    for (auto& v : out)
        for (auto& r : v) res.records.push_back(std::move(r));
    res.summary = summarize(res.records);
    return res;
}

inline nlohmann::json to_json(const std::vector<CellSummary>& summary) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : summary)
        j.push_back({{"setting", s.setting},
                     {"strategy", s.strategy},
                     {"n_queries", s.n_queries},
                     {"count", s.count},
                     {"mean", std::isfinite(s.mean) ? nlohmann::json(s.mean) : nlohmann::json(nullptr)},
                     {"std", s.std}});
    return j;
}

// ---------------------------------------------------------------------------
// Augmentation study
// ---------------------------------------------------------------------------

struct AugmentationPoint {
    int n_constraints = 0;
    unsigned long long seed = 0;
    double ari_without = 0.0;
    double ari_with = 0.0;
};

/// Random pairwise constraints, one metric learned with and one without the
/// augmented pairs, each followed by constrained clustering on the same
/// constraints. Both arms share data, pairs and clustering seed.
inline AugmentationPoint augmentation_trial(const SimSetting& setting, int n_constraints, double lambda,
                                            const SolverOptions& solver = {}) {
    Dataset data = generate(setting);
    const Index n = data.n();
    const int K = setting.K;
    Oracle oracle = label_oracle(data);
    std::vector<Pair> all;
    all.reserve(n * (n - 1) / 2);
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j) all.emplace_back(i, j);
    if (static_cast<std::size_t>(n_constraints) > all.size()) throw InvalidArgument("more constraints than pairs");
    std::mt19937_64 rng(derive_seed(setting.seed, 200, static_cast<unsigned long long>(n_constraints)));
    std::shuffle(all.begin(), all.end(), rng);
    ConstraintStore store(n);
    for (int k = 0; k < n_constraints; ++k) store.add(all[static_cast<std::size_t>(k)].first, all[static_cast<std::size_t>(k)].second,
                                                      oracle(all[static_cast<std::size_t>(k)]));
    AdmmConfig admm;
    admm.lambda = lambda;
    FuzzyMembership fm = fit_fuzzy_membership(data, store, K, admm, setting.seed);

    AugmentationPoint pt{n_constraints, setting.seed, 0.0, 0.0};
    for (int arm = 0; arm < 2; ++arm) {
        MetricProblem prob;
        prob.data = &data;
        prob.similar = store.similar_pairs();
        prob.dissimilar = store.dissimilar_pairs();
        if (arm == 1) prob.aug = augment_constraints(fm, K);
        MetricMatrix A = MetricMatrix::identity(data.p());
        try {
            A = learn_metric_diagonal(prob, solver);
        } catch (const DegenerateProblem&) {
        }
        PckmeansConfig pc;
        pc.K = K;
        ClusterAssignment a = pckmeans(data, A, store, pc, setting.seed);
        (arm ? pt.ari_with : pt.ari_without) = adjusted_rand_index(a.labels, data.labels());
    }
    return pt;
}

inline std::vector<AugmentationPoint> augmentation_study(SimSetting setting, const std::vector<int>& counts, int seeds,
                                                         double lambda = 0.5) {
    std::vector<AugmentationPoint> out;
    const unsigned long long base = setting.seed;
    for (int c : counts)
        for (int s = 0; s < seeds; ++s) {
            setting.seed = replicate_seed(base, s);
            out.push_back(augmentation_trial(setting, c, lambda));
        }
    return out;
}

}  // namespace aqm

#endif  // AQM_EXPERIMENT_HPP
