#ifndef AQM_AGGREGATION_HPP
#define AQM_AGGREGATION_HPP

#include "aqm/augmentation.hpp"
#include "aqm/clustering.hpp"
#include "aqm/constraints.hpp"
#include "aqm/metric_learning.hpp"

#include <limits>
#include <optional>
#include <vector>

namespace aqm {

/// One grid point of the gamma search.
struct GammaCandidate {
    double gamma = 0.0;
    MetricMatrix metric;
    ClusterAssignment assignment;
    double ch = -std::numeric_limits<double>::infinity();  // -inf when the clustering is degenerate
};

/// Result of metric aggregation followed by constrained clustering.
struct Aggregate {
    int q = 0;
    std::vector<Index> penalty_set;
    double gamma = 0.0;
    MetricMatrix metric;
    ClusterAssignment assignment;
    double ch = -std::numeric_limits<double>::infinity();
    std::vector<GammaCandidate> candidates;
    bool degenerate = false;  // no dissimilar information; fell back to the last learned metric
};

struct AggregateOptions {
    std::optional<int> q;              // empty: elbow rule on the history spectrum
    std::vector<double> gamma_grid{0.0, 0.1, 0.3, 1.0, 3.0, 10.0};
    SolverOptions solver;
    PckmeansConfig pckmeans;           // K must be set
};

/// Penalizes the q axes ranked least important over the history, picks gamma
/// on the grid by the Calinski-Harabasz index of the constrained clustering
/// (ties go to the smaller gamma), and returns that metric and clustering.
/// `base` supplies data, queried and augmented pairs, and the metric kind.
inline Aggregate aggregate_and_cluster(const MetricProblem& base, const ConstraintStore& store,
                                       const MetricHistory& history, const AggregateOptions& opt,
                                       unsigned long long seed) {
    if (!base.data) throw InvalidArgument("metric problem has no data");
    if (opt.gamma_grid.empty()) throw InvalidArgument("gamma grid is empty");
    const Dataset& data = *base.data;
    const auto p = static_cast<int>(data.p());
    Aggregate out;

    auto fallback = [&]() {
        out.degenerate = true;
        out.metric = history.empty() ? MetricMatrix::identity(data.p()) : history.back();
        out.assignment = pckmeans(data, out.metric, store, opt.pckmeans, seed);
        try {
            out.ch = calinski_harabasz(data, out.assignment, out.metric);
        } catch (const DegenerateClustering&) {
        }
        return out;
    };
    if (history.empty()) return fallback();

    out.q = opt.q ? std::clamp(*opt.q, 1, p) : select_q(history);

    Eigen::MatrixXd basis;
    const Eigen::MatrixXd* basis_ptr = nullptr;
    if (base.kind == MetricMatrix::Kind::full) {
        try {
            MetricProblem unpen = base;
            unpen.gamma = 0.0;
            unpen.penalty_set.clear();
            FullMetricObjective full(data.points(), unpen);
            MetricFit f = solve_full_unpenalized(full, data.p(), opt.solver);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(f.metric.dense());
            basis = es.eigenvectors();
            basis_ptr = &basis;
        } catch (const DegenerateProblem&) {
            return fallback();
        }
    }
    out.penalty_set = aggregate_penalty_set(history, out.q, basis_ptr);

    std::vector<double> grid = opt.gamma_grid;
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    std::optional<std::size_t> best;
    for (double g : grid) {
        MetricProblem prob = base;
        prob.gamma = g;
        prob.penalty_set = out.penalty_set;
        GammaCandidate cand;
        cand.gamma = g;
        try {
            cand.metric = learn_metric_fit(prob, opt.solver, basis_ptr).metric;
        } catch (const DegenerateProblem&) {
            return fallback();
        }
        cand.assignment = pckmeans(data, cand.metric, store, opt.pckmeans, seed);
        try {
            cand.ch = calinski_harabasz(data, cand.assignment, cand.metric);
        } catch (const DegenerateClustering&) {
        }
        out.candidates.push_back(std::move(cand));
        // CH is scale invariant, so equal indices can differ in the last bits;
        // those count as ties and the smaller gamma stays.
        const double cur = out.candidates.back().ch;
        if (!best || (std::isfinite(cur) && cur > out.candidates[*best].ch +
                                                     1e-12 * std::max(1.0, std::abs(out.candidates[*best].ch))))
            best = out.candidates.size() - 1;
    }
    const GammaCandidate& b = out.candidates[*best];
    out.gamma = b.gamma;
    out.metric = b.metric;
    out.assignment = b.assignment;
    out.ch = b.ch;
    return out;
}

/// Gamma on `grid` maximizing the Calinski-Harabasz index (ties: smaller).
inline double tune_gamma(const Dataset& data, const ConstraintStore& store, const AugmentedConstraints& aug,
                         const MetricHistory& history, const std::vector<double>& grid, int K,
                         std::optional<int> q = std::nullopt, unsigned long long seed = 0) {
    if (grid.empty()) throw InvalidArgument("gamma grid is empty");
    MetricProblem base;
    base.data = &data;
    base.similar = store.similar_pairs();
    base.dissimilar = store.dissimilar_pairs();
    base.aug = aug;
    AggregateOptions opt;
    opt.q = q;
    opt.gamma_grid = grid;
    opt.pckmeans.K = K;
    Aggregate a = aggregate_and_cluster(base, store, history, opt, seed);
    if (a.degenerate) {
        std::vector<double> g = grid;
        return *std::min_element(g.begin(), g.end());
    }
    return a.gamma;
}

}  // namespace aqm

#endif  // AQM_AGGREGATION_HPP
