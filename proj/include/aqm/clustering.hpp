#ifndef AQM_CLUSTERING_HPP
#define AQM_CLUSTERING_HPP

#include "aqm/constraints.hpp"
#include "aqm/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

namespace aqm {

struct PckmeansConfig {
    enum class Init { neighborhood, random, kmeanspp };

    int K = 2;
    int max_iters = 100;
    double violation_weight = 1.0;
    Init init = Init::neighborhood;
    std::optional<std::vector<Index>> scan_order;  // default: seed-shuffled instance order
    std::optional<Matrix> initial_centers;         // K x p, overrides `init`
};

/// Coordinates in which the A-norm is Euclidean: rows x^T L with A = L L^T.
inline Matrix metric_coordinates(const Matrix& X, const MetricMatrix& A) {
    if (static_cast<Index>(X.cols()) != A.p()) throw DimensionError("metric dimension does not match data");
    if (A.is_diagonal()) return X * A.diagonal_values().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A.dense());
    Eigen::MatrixXd L = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    return X * L;
}

namespace detail {

inline Matrix cluster_means(const Matrix& X, const std::vector<int>& labels, int K, std::vector<Index>& counts) {
    Matrix mu = Matrix::Zero(K, X.cols());
    counts.assign(static_cast<std::size_t>(K), 0);
    for (Index i = 0; i < labels.size(); ++i) {
        mu.row(labels[i]) += X.row(static_cast<Eigen::Index>(i));
        ++counts[static_cast<std::size_t>(labels[i])];
    }
    for (int k = 0; k < K; ++k)
        if (counts[static_cast<std::size_t>(k)] > 0) mu.row(k) /= static_cast<double>(counts[static_cast<std::size_t>(k)]);
    return mu;
}

/// Farthest-point completion of a partial center set (rows of `centers`).
inline Matrix complete_centers(const Matrix& Y, const Matrix& seeds, int K, std::mt19937_64& rng) {
    const Eigen::Index n = Y.rows();
    Matrix centers(K, Y.cols());
    int have = 0;
    for (Eigen::Index r = 0; r < seeds.rows() && have < K; ++r) centers.row(have++) = seeds.row(r);
    if (have == 0) {
        std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
        centers.row(have++) = Y.row(pick(rng));
    }
    Vector mind(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double d = std::numeric_limits<double>::infinity();
        for (int k = 0; k < have; ++k) d = std::min(d, (Y.row(i) - centers.row(k)).squaredNorm());
        mind[i] = d;
    }
    while (have < K) {
        Eigen::Index far = 0;
        mind.maxCoeff(&far);
        centers.row(have) = Y.row(far);
        for (Eigen::Index i = 0; i < n; ++i) mind[i] = std::min(mind[i], (Y.row(i) - centers.row(have)).squaredNorm());
        ++have;
    }
    return centers;
}

inline Matrix kmeanspp_centers(const Matrix& Y, int K, std::mt19937_64& rng) {
    const Eigen::Index n = Y.rows();
    Matrix centers(K, Y.cols());
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    centers.row(0) = Y.row(pick(rng));
    Vector d2(n);
    for (Eigen::Index i = 0; i < n; ++i) d2[i] = (Y.row(i) - centers.row(0)).squaredNorm();
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 1; k < K; ++k) {
        double total = d2.sum();
        Eigen::Index chosen = n - 1;
        if (total > 0) {
            double r = u(rng) * total, acc = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= r) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = pick(rng);
        }
        centers.row(k) = Y.row(chosen);
        for (Eigen::Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], (Y.row(i) - centers.row(k)).squaredNorm());
    }
    return centers;
}

}  // namespace detail

/// Objective: sum ||x_i - nu_{l_i}||_A^2 + w * (#violated must-links + #violated cannot-links).
inline double pckmeans_objective(const Dataset& data, const MetricMatrix& A, const ConstraintStore& store,
                                 const std::vector<int>& labels, int K, double violation_weight = 1.0) {
    Matrix Y = metric_coordinates(data.points(), A);
    std::vector<Index> counts;
    Matrix mu = detail::cluster_means(Y, labels, K, counts);
    double f = 0.0;
    for (Index i = 0; i < data.n(); ++i) f += (Y.row(static_cast<Eigen::Index>(i)) - mu.row(labels[i])).squaredNorm();
    double v = 0.0;
    for (const Pair& pr : store.similar_pairs()) v += labels[pr.first] != labels[pr.second];
    for (const Pair& pr : store.dissimilar_pairs()) v += labels[pr.first] == labels[pr.second];
    return f + violation_weight * v;
}

/// Pairwise-constrained k-means under the metric A. Assignment is greedy and
/// sequential: each instance takes the cluster minimizing its squared
/// A-distance plus violation penalties against the current labels.
inline ClusterAssignment pckmeans(const Dataset& data, const MetricMatrix& A, const ConstraintStore& store,
                                  const PckmeansConfig& cfg, unsigned long long seed) {
    const int K = cfg.K;
    const Index n = data.n();
    if (K < 2) throw InvalidArgument("pckmeans needs K >= 2");
    if (static_cast<Index>(K) > n) throw InvalidArgument("pckmeans needs K <= n");
    if (store.n() != n) throw DimensionError("constraint store size does not match dataset");
    const double w = cfg.violation_weight;

    std::mt19937_64 rng(seed);
    Matrix Y = metric_coordinates(data.points(), A);

    std::vector<Index> order;
    if (cfg.scan_order) {
        order = *cfg.scan_order;
        if (order.size() != n) throw LengthMismatch("scan order length does not match dataset");
    } else {
        order.resize(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
    }

    Matrix centers;
    if (cfg.initial_centers) {
        if (cfg.initial_centers->rows() != K || static_cast<Index>(cfg.initial_centers->cols()) != data.p())
            throw DimensionError("initial centers must be K x p");
        centers = metric_coordinates(*cfg.initial_centers, A);
    } else if (cfg.init == PckmeansConfig::Init::kmeanspp) {
        centers = detail::kmeanspp_centers(Y, K, rng);
    } else if (cfg.init == PckmeansConfig::Init::random) {
        std::vector<Index> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        centers.resize(K, Y.cols());
        for (int k = 0; k < K; ++k) centers.row(k) = Y.row(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(k)]));
    } else {
        // Largest constrained must-link components seed the first centers.
        std::vector<Index> roots;
        for (Index i = 0; i < n; ++i)
            if (store.root(i) == i && store.is_constrained(i)) roots.push_back(i);
        std::stable_sort(roots.begin(), roots.end(),
                         [&](Index a, Index b) { return store.component(a).size() > store.component(b).size(); });
        if (roots.size() > static_cast<std::size_t>(K)) roots.resize(static_cast<std::size_t>(K));
        Matrix seeds(static_cast<Eigen::Index>(roots.size()), Y.cols());
        for (std::size_t r = 0; r < roots.size(); ++r) {
            Eigen::RowVectorXd s = Eigen::RowVectorXd::Zero(Y.cols());
            for (Index m : store.component(roots[r])) s += Y.row(static_cast<Eigen::Index>(m));
            seeds.row(static_cast<Eigen::Index>(r)) = s / static_cast<double>(store.component(roots[r]).size());
        }
        centers = detail::complete_centers(Y, seeds, K, rng);
    }

    // Per-component label counts make violation penalties O(K * #cannot-linked components).
    std::vector<std::vector<int>> comp_count(n);
    for (Index i = 0; i < n; ++i)
        if (store.root(i) == i && store.is_constrained(i)) comp_count[i].assign(static_cast<std::size_t>(K), 0);
    std::vector<Index> root_of(n);
    std::vector<std::vector<Index>> cl_roots(n);
    for (Index i = 0; i < n; ++i) {
        root_of[i] = store.root(i);
        if (i == root_of[i]) {
            const auto& s = store.cannot_linked_roots(i);
            cl_roots[i].assign(s.begin(), s.end());
        }
    }

    ClusterAssignment out;
    out.K = K;
    std::vector<int> labels(n, -1);
    std::vector<double> cost(static_cast<std::size_t>(K));
    std::vector<Index> counts;

    auto objective = [&]() {
        Matrix mu = detail::cluster_means(Y, labels, K, counts);
        double f = 0.0;
        for (Index i = 0; i < n; ++i) f += (Y.row(static_cast<Eigen::Index>(i)) - mu.row(labels[i])).squaredNorm();
        double v = 0.0;
        for (Index r = 0; r < n; ++r) {
            if (comp_count[r].empty()) continue;
            double sz = 0.0, same = 0.0;
            for (int k = 0; k < K; ++k) {
                double c = comp_count[r][static_cast<std::size_t>(k)];
                sz += c;
                same += c * (c - 1) / 2;
            }
            v += sz * (sz - 1) / 2 - same;
            for (Index s : cl_roots[r]) {
                if (s < r) continue;
                for (int k = 0; k < K; ++k)
                    v += static_cast<double>(comp_count[r][static_cast<std::size_t>(k)]) * comp_count[s][static_cast<std::size_t>(k)];
            }
        }
        return f + w * v;
    };

    for (int it = 0; it < cfg.max_iters; ++it) {
        bool changed = false;
        for (Index i : order) {
            const Index r = root_of[i];
            const bool constrained = !comp_count[r].empty();
            for (int k = 0; k < K; ++k) cost[static_cast<std::size_t>(k)] = (Y.row(static_cast<Eigen::Index>(i)) - centers.row(k)).squaredNorm();
            if (constrained) {
                const auto& cc = comp_count[r];
                int assigned = 0;
                for (int k = 0; k < K; ++k) assigned += cc[static_cast<std::size_t>(k)];
                if (labels[i] >= 0) --assigned;
                for (int k = 0; k < K; ++k) {
                    int same = cc[static_cast<std::size_t>(k)] - (labels[i] == k ? 1 : 0);
                    double viol = assigned - same;
                    for (Index s : cl_roots[r]) viol += comp_count[s][static_cast<std::size_t>(k)];
                    cost[static_cast<std::size_t>(k)] += w * viol;
                }
            }
            int best = labels[i] >= 0 ? labels[i] : 0;
            double best_cost = cost[static_cast<std::size_t>(best)];
            for (int k = 0; k < K; ++k)
                if (cost[static_cast<std::size_t>(k)] < best_cost) {
                    best_cost = cost[static_cast<std::size_t>(k)];
                    best = k;
                }
            if (best != labels[i]) {
                if (constrained) {
                    if (labels[i] >= 0) --comp_count[r][static_cast<std::size_t>(labels[i])];
                    ++comp_count[r][static_cast<std::size_t>(best)];
                }
                labels[i] = best;
                changed = true;
            }
        }
        out.iterations = it + 1;
        if (!changed && it > 0) break;

        centers = detail::cluster_means(Y, labels, K, counts);
        // Empty-cluster repair: the point farthest from its own center starts the empty cluster.
        for (int k = 0; k < K; ++k) {
            if (counts[static_cast<std::size_t>(k)] > 0) continue;
            Index far = 0;
            double fd = -1.0;
            for (Index i = 0; i < n; ++i) {
                if (counts[static_cast<std::size_t>(labels[i])] <= 1) continue;
                double d = (Y.row(static_cast<Eigen::Index>(i)) - centers.row(labels[i])).squaredNorm();
                if (d > fd) {
                    fd = d;
                    far = i;
                }
            }
            if (fd < 0) continue;
            const Index r = root_of[far];
            if (!comp_count[r].empty()) {
                --comp_count[r][static_cast<std::size_t>(labels[far])];
                ++comp_count[r][static_cast<std::size_t>(k)];
            }
            labels[far] = k;
            ++out.empty_cluster_repairs;
            centers = detail::cluster_means(Y, labels, K, counts);
        }
        out.objective_trace.push_back(objective());
        if (!changed) break;
    }

    out.labels = labels;
    out.centers = detail::cluster_means(data.points(), labels, K, counts);
    return out;
}

/// Unconstrained k-means (k-means++ starts, best of `restarts` by inertia).
inline ClusterAssignment kmeans(const Dataset& data, int K, unsigned long long seed, int restarts = 5,
                                const MetricMatrix* A = nullptr) {
    ConstraintStore empty(data.n());
    MetricMatrix I = A ? *A : MetricMatrix::identity(data.p());
    PckmeansConfig cfg;
    cfg.K = K;
    cfg.init = PckmeansConfig::Init::kmeanspp;
    ClusterAssignment best;
    double best_obj = std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(1, restarts); ++r) {
        ClusterAssignment a = pckmeans(data, I, empty, cfg, seed * 7919ULL + static_cast<unsigned long long>(r));
        double obj = pckmeans_objective(data, I, empty, a.labels, K);
        if (obj < best_obj) {
            best_obj = obj;
            best = std::move(a);
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// [B / (K - 1)] / [W / (n - K)] under the squared A-norm.
inline double calinski_harabasz(const Dataset& data, const ClusterAssignment& assignment, const MetricMatrix& A) {
    const int K = assignment.K;
    const Index n = data.n();
    if (K < 2) throw DegenerateClustering("Calinski-Harabasz needs K >= 2");
    if (assignment.labels.size() != n) throw LengthMismatch("assignment length does not match dataset");
    Matrix Y = metric_coordinates(data.points(), A);
    std::vector<Index> counts;
    Matrix mu = detail::cluster_means(Y, assignment.labels, K, counts);
    for (Index c : counts)
        if (c == 0) throw DegenerateClustering("empty cluster");
    Eigen::RowVectorXd grand = Y.colwise().mean();
    double B = 0.0, W = 0.0;
    for (int k = 0; k < K; ++k) B += static_cast<double>(counts[static_cast<std::size_t>(k)]) * (mu.row(k) - grand).squaredNorm();
    for (Index i = 0; i < n; ++i) W += (Y.row(static_cast<Eigen::Index>(i)) - mu.row(assignment.labels[i])).squaredNorm();
    if (W <= 0 || static_cast<Index>(K) >= n) throw DegenerateClustering("within-cluster dispersion is zero");
    return (B / (K - 1)) / (W / static_cast<double>(n - static_cast<Index>(K)));
}

/// Adjusted Rand index from the pair-counting contingency table.
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw LengthMismatch("label sequences differ in length");
    const std::size_t n = a.size();
    if (n < 2) return 1.0;
    std::map<int, std::size_t> ia, ib;
    for (int x : a) ia.emplace(x, ia.size());
    for (int x : b) ib.emplace(x, ib.size());
    std::vector<double> table(ia.size() * ib.size(), 0.0), ra(ia.size(), 0.0), cb(ib.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t r = ia[a[i]], c = ib[b[i]];
        table[r * ib.size() + c] += 1;
        ra[r] += 1;
        cb[c] += 1;
    }
    auto c2 = [](double x) { return x * (x - 1) / 2; };
    double sum_ij = 0, sum_a = 0, sum_b = 0;
    for (double v : table) sum_ij += c2(v);
    for (double v : ra) sum_a += c2(v);
    for (double v : cb) sum_b += c2(v);
    double total = c2(static_cast<double>(n));
    double expected = sum_a * sum_b / total;
    double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) return 1.0;  // both partitions trivial in the same way
    return (sum_ij - expected) / (max_index - expected);
}

}  // namespace aqm

#endif  // AQM_CLUSTERING_HPP
