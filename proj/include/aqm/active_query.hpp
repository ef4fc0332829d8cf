#ifndef AQM_ACTIVE_QUERY_HPP
#define AQM_ACTIVE_QUERY_HPP

#include "aqm/clustering.hpp"
#include "aqm/constraints.hpp"
#include "aqm/core.hpp"
#include "aqm/forest.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <vector>

namespace aqm {

/// n x L neighborhood-membership probabilities.
struct MembershipProbabilities {
    Matrix R;
    int L() const { return static_cast<int>(R.cols()); }
};

/// Oracle contract: answers whether an unordered pair is similar.
using Oracle = std::function<Relation(const Pair&)>;

/// Automatic oracle backed by ground-truth labels.
inline Oracle label_oracle(const Dataset& data) {
    if (!data.has_labels()) throw InvalidArgument("label oracle needs a dataset with ground-truth labels");
    std::vector<int> labels = data.labels();
    return [labels = std::move(labels)](const Pair& pr) {
        return labels.at(pr.first) == labels.at(pr.second) ? Relation::similar : Relation::dissimilar;
    };
}

/// Binary entropy in nats; exactly 0 within 1e-12 of 0 or 1.
inline double binary_entropy(double p) {
    if (p < 1e-12 || 1.0 - p < 1e-12) return 0.0;
    return -(p * std::log(p) + (1.0 - p) * std::log(1.0 - p));
}

inline double pair_probability(const MembershipProbabilities& R, Index i, Index j) {
    double p = R.R.row(static_cast<Eigen::Index>(i)).dot(R.R.row(static_cast<Eigen::Index>(j)));
    return std::clamp(p, 0.0, 1.0);
}

/// Sum of binary entropies of p_ij over the given unlabeled pairs.
inline double entropy_Q(const MembershipProbabilities& R, const std::vector<Pair>& unlabeled) {
    double q = 0.0;
    for (const Pair& pr : unlabeled) {
        if (pr.first >= static_cast<Index>(R.R.rows()) || pr.second >= static_cast<Index>(R.R.rows()))
            throw IndexError("pair index out of range");
        q += binary_entropy(pair_probability(R, pr.first, pr.second));
    }
    return q;
}

/// Q(R) over every pair the store leaves unlabeled.
inline double entropy_Q(const MembershipProbabilities& R, const ConstraintStore& store) {
    double q = 0.0;
    const Index n = store.n();
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j)
            if (!store.is_labeled(i, j)) q += binary_entropy(pair_probability(R, i, j));
    return q;
}

inline std::vector<Pair> unlabeled_pairs(const ConstraintStore& store) {
    std::vector<Pair> out;
    for (Index i = 0; i < store.n(); ++i)
        for (Index j = i + 1; j < store.n(); ++j)
            if (!store.is_labeled(i, j)) out.emplace_back(i, j);
    return out;
}

// ---------------------------------------------------------------------------
// Membership model
// ---------------------------------------------------------------------------

/// Neighborhood probabilities from a forest trained on a clustering.
///
/// The forest learns the cluster labels (computed under the metric) from the
/// raw features; each cluster maps to the neighborhood holding the majority of its in-neighborhood
/// points. Vote mass on unmapped clusters is dropped and rows renormalized
/// (uniform if nothing remains). Rows of neighborhood members are one-hot.
inline MembershipProbabilities fit_membership_model(const Dataset& data, const NeighborhoodState& state,
                                                    const MetricMatrix& /*A*/, const std::vector<int>& cluster_labels, int K,
                                                    const ForestConfig& cfg, unsigned long long seed) {
    const int L = state.count();
    if (L < 1) throw InvalidArgument("membership model needs at least one neighborhood");
    if (cluster_labels.size() != data.n()) throw LengthMismatch("cluster labels do not match dataset");
    const Index n = data.n();
    MembershipProbabilities out;
    out.R = Matrix::Zero(static_cast<Eigen::Index>(n), L);
    if (L == 1) {
        out.R.setOnes();
        return out;
    }

    std::vector<std::vector<int>> votes(static_cast<std::size_t>(K), std::vector<int>(static_cast<std::size_t>(L), 0));
    for (int m = 0; m < L; ++m)
        for (Index i : state.members(m)) ++votes[static_cast<std::size_t>(cluster_labels[i])][static_cast<std::size_t>(m)];
    std::vector<int> map(static_cast<std::size_t>(K), -1);
    for (int c = 0; c < K; ++c) {
        const auto& v = votes[static_cast<std::size_t>(c)];
        auto it = std::max_element(v.begin(), v.end());
        if (*it > 0) map[static_cast<std::size_t>(c)] = static_cast<int>(it - v.begin());
    }

    // Axis-aligned splits ignore positive feature scaling, so the metric only
    // matters through the labels. Raw features keep coordinates that a sparse
    // metric has zeroed available to the trees.
    RandomForest forest;
    forest.fit(data.points(), cluster_labels, K, cfg, seed);
    Matrix V = forest.training_votes(data.points(), cfg.out_of_bag);

    for (Index i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        int own = state.membership(i);
        if (own >= 0) {
            out.R(r, own) = 1.0;
            continue;
        }
        for (int c = 0; c < K; ++c)
            if (map[static_cast<std::size_t>(c)] >= 0) out.R(r, map[static_cast<std::size_t>(c)]) += V(r, c);
        double s = out.R.row(r).sum();
        if (s > 0) out.R.row(r) /= s;
        else out.R.row(r).setConstant(1.0 / L);
    }
    return out;
}

/// Convenience form: clusters with PCKmeans under A first.
inline MembershipProbabilities fit_membership_model(const Dataset& data, const NeighborhoodState& state,
                                                    const MetricMatrix& A, const ConstraintStore& store, int K,
                                                    const ForestConfig& cfg, unsigned long long seed) {
    if (state.count() == 1) return fit_membership_model(data, state, A, std::vector<int>(data.n(), 0), K, cfg, seed);
    PckmeansConfig pc;
    pc.K = K;
    ClusterAssignment ca = pckmeans(data, A, store, pc, seed);
    return fit_membership_model(data, state, A, ca.labels, K, cfg, seed);
}

// ---------------------------------------------------------------------------
// Selection criteria
// ---------------------------------------------------------------------------

/// Expected entropy u(x_i) = sum_m r_im Q(R with row i set to e_m), for each
/// instance outside the neighborhoods, computed incrementally: only pairs
/// involving i change, so
///   u(i) = Q - sum_{j in U_i} H(p_ij) + sum_m r_im sum_{j in U_i} H(r_jm).
/// Returns (candidate, score) in ascending candidate order.
inline std::vector<std::pair<Index, double>> mee_scores(const MembershipProbabilities& R, const ConstraintStore& store,
                                                        const NeighborhoodState& state, bool include_q = true) {
    const Index n = store.n();
    const int L = R.L();
    if (static_cast<Index>(R.R.rows()) != n) throw DimensionError("membership rows do not match store");
    Matrix Hr(static_cast<Eigen::Index>(n), L);
    for (Index j = 0; j < n; ++j)
        for (int m = 0; m < L; ++m) Hr(static_cast<Eigen::Index>(j), m) = binary_entropy(R.R(static_cast<Eigen::Index>(j), m));
    Eigen::RowVectorXd col_total = Hr.colwise().sum();
    const double Q = include_q ? entropy_Q(R, store) : 0.0;

    std::vector<std::pair<Index, double>> out;
    Eigen::RowVectorXd S(L);
    for (Index i = 0; i < n; ++i) {
        if (state.contains(i)) continue;
        const auto ri = R.R.row(static_cast<Eigen::Index>(i));
        S = col_total - Hr.row(static_cast<Eigen::Index>(i));
        double lost = 0.0;
        for (Index j = 0; j < n; ++j) {
            if (j == i) continue;
            if (store.is_constrained(i) && store.is_labeled(i, j)) {
                S -= Hr.row(static_cast<Eigen::Index>(j));
                continue;
            }
            lost += binary_entropy(std::clamp(ri.dot(R.R.row(static_cast<Eigen::Index>(j))), 0.0, 1.0));
        }
        out.emplace_back(i, Q - lost + ri.dot(S));
    }
    return out;
}

/// Minimum-expected-entropy instance; ties go to the smallest index.
inline Index mee_select(const MembershipProbabilities& R, const ConstraintStore& store, const NeighborhoodState& state) {
    auto scores = mee_scores(R, store, state, false);
    if (scores.empty()) throw NoCandidates("every instance already belongs to a neighborhood");
    Index best = scores.front().first;
    double best_u = scores.front().second;
    for (const auto& [i, u] : scores)
        if (u < best_u) {
            best_u = u;
            best = i;
        }
    return best;
}

/// Row entropy divided by the expected number of queries to resolve it.
inline double npu_score(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    std::vector<double> r(row.data(), row.data() + row.size());
    std::sort(r.begin(), r.end(), std::greater<>());
    double h = 0.0, eq = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) {
        if (r[k] > 1e-12) h -= r[k] * std::log(r[k]);
        eq += static_cast<double>(k + 1) * r[k];
    }
    return eq > 0 ? h / eq : 0.0;
}

inline Index npu_select(const MembershipProbabilities& R, const NeighborhoodState& state) {
    std::optional<Index> best;
    double best_s = 0.0;
    for (Index i = 0; i < state.n(); ++i) {
        if (state.contains(i)) continue;
        double s = npu_score(R.R.row(static_cast<Eigen::Index>(i)));
        if (!best || s > best_s) {
            best = i;
            best_s = s;
        }
    }
    if (!best) throw NoCandidates("every instance already belongs to a neighborhood");
    return *best;
}

/// Non-adaptive baseline: k-means, forest memberships over its clusters, then
/// the T pairs whose similarity probability is closest to 1/2.
inline std::vector<Pair> two_step_plan(const Dataset& data, int K, std::size_t T, const ForestConfig& cfg,
                                       unsigned long long seed) {
    const Index n = data.n();
    if (T > n * (n - 1) / 2) throw InvalidArgument("two-step plan asks for more pairs than exist");
    if (T == 0) return {};
    ClusterAssignment km = kmeans(data, K, seed);
    RandomForest forest;
    forest.fit(data.points(), km.labels, K, cfg, seed);
    MembershipProbabilities R{forest.training_votes(data.points(), cfg.out_of_bag)};
    std::vector<std::pair<double, Pair>> scored;
    scored.reserve(n * (n - 1) / 2);
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j) scored.emplace_back(std::abs(pair_probability(R, i, j) - 0.5), Pair(i, j));
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(T), scored.end());
    std::vector<Pair> plan;
    plan.reserve(T);
    for (std::size_t k = 0; k < T; ++k) plan.push_back(scored[k].second);
    return plan;
}

// ---------------------------------------------------------------------------
// Neighborhood query protocol
// ---------------------------------------------------------------------------

/// Medoid of a neighborhood under the metric A (smallest summed distance).
inline Index neighborhood_medoid(const Matrix& metric_coords, const std::vector<Index>& members) {
    if (members.size() <= 2) return members.front();
    Index best = members.front();
    double best_sum = std::numeric_limits<double>::infinity();
    for (Index a : members) {
        double s = 0.0;
        for (Index b : members)
            s += (metric_coords.row(static_cast<Eigen::Index>(a)) - metric_coords.row(static_cast<Eigen::Index>(b))).norm();
        if (s < best_sum) {
            best_sum = s;
            best = a;
        }
    }
    return best;
}

/// Neighborhood ids sorted by descending membership probability (ties by id).
inline std::vector<int> probe_order(const MembershipProbabilities& R, Index target) {
    std::vector<int> order(static_cast<std::size_t>(R.L()));
    std::iota(order.begin(), order.end(), 0);
    auto row = R.R.row(static_cast<Eigen::Index>(target));
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return row[a] > row[b]; });
    return order;
}

/// In-progress resolution of one instance's neighborhood membership.
struct Resolution {
    Index target = 0;
    std::vector<int> order;             // neighborhoods to probe, most probable first
    std::vector<Index> representatives; // by neighborhood id
    std::size_t next = 0;               // position in `order`
    int spent = 0;

    bool finished() const { return next >= order.size(); }
    int probed() const { return order.at(next); }
    Pair pair() const { return Pair(target, representatives.at(static_cast<std::size_t>(probed()))); }
};

struct QueryRecord {
    Pair pair;
    Relation answer;
};

/// Outcome of applying one answer to a resolution.
struct StepOutcome {
    bool resolved = false;
    int joined = -1;         // neighborhood joined on a similar answer
    int created = -1;        // new neighborhood id when every probe was dissimilar
    std::size_t implied = 0; // pairs newly added to the store (including transitivity)
};

/// Applies an oracle answer for the current probe of `res`, updating the
/// store and neighborhoods. Throws ContradictionError (state unchanged) when
/// the answer conflicts with the store.
inline StepOutcome apply_answer(Resolution& res, Relation answer, NeighborhoodState& state, ConstraintStore& store) {
    StepOutcome out;
    Pair pr = res.pair();
    auto known = store.relation(pr.first, pr.second);
    if (known && *known != answer) throw ContradictionError("answer contradicts an implied constraint");
    out.implied = store.add(pr.first, pr.second, answer);
    ++res.spent;
    if (answer == Relation::similar) {
        out.joined = res.probed();
        state.join(res.target, out.joined);
        res.next = res.order.size();
        out.resolved = true;
        return out;
    }
    ++res.next;
    if (res.finished()) {
        out.created = state.create(res.target);
        out.resolved = true;
    }
    return out;
}

/// Session-level bookkeeping of the query protocol.
struct QuerySession {
    int budget = 0;
    int spent = 0;
    NeighborhoodState neighborhoods;
    ConstraintStore store;
    std::vector<QueryRecord> history;
};

/// Queries `target` against one representative per neighborhood, most
/// probable first, until a similar answer or the budget runs out. Returns the
/// number of queries spent. Throws BudgetExhausted if the budget ends before
/// the membership is settled; answers already given are kept.
inline int resolve_instance(QuerySession& session, Index target, const MembershipProbabilities& R,
                            const std::vector<Index>& representatives, const Oracle& oracle) {
    if (session.neighborhoods.contains(target)) throw InvalidArgument("target already belongs to a neighborhood");
    if (session.spent >= session.budget) throw BudgetExhausted("query budget exhausted");
    Resolution res;
    res.target = target;
    res.order = probe_order(R, target);
    res.representatives = representatives;
    while (!res.finished()) {
        if (session.spent >= session.budget) throw BudgetExhausted("query budget exhausted mid-resolution");
        Pair pr = res.pair();
        Relation ans = oracle(pr);
        apply_answer(res, ans, session.neighborhoods, session.store);
        ++session.spent;
        session.history.push_back({pr, ans});
    }
    return res.spent;
}

}  // namespace aqm

#endif  // AQM_ACTIVE_QUERY_HPP
