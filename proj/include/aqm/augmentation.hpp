#ifndef AQM_AUGMENTATION_HPP
#define AQM_AUGMENTATION_HPP

#include "aqm/constraints.hpp"
#include "aqm/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace aqm {

// ---------------------------------------------------------------------------
// Proximal pieces
// ---------------------------------------------------------------------------

/// min(|z|, |z - 1|)
inline double mdsp_penalty(double z) { return std::min(std::abs(z), std::abs(z - 1.0)); }

/// argmin_z 0.5 (z - v)^2 + tau * min(|z|, |z - 1|).
///
/// The penalty is |z| on z <= 1/2 and |z - 1| on z >= 1/2; each branch is a
/// soft threshold clipped to its half-line, and the better branch wins. Ties
/// go to the candidate nearer v, then to the one nearer 0.
inline double mdsp_prox(double v, double tau) {
    if (tau < 0) throw InvalidArgument("mdsp_prox requires tau >= 0");
    auto soft = [tau](double x) { return x > tau ? x - tau : (x < -tau ? x + tau : 0.0); };
    double lo = std::min(soft(v), 0.5);
    double hi = std::max(1.0 + soft(v - 1.0), 0.5);
    auto obj = [&](double z) { return 0.5 * (z - v) * (z - v) + tau * mdsp_penalty(z); };
    double flo = obj(lo), fhi = obj(hi);
    if (flo < fhi) return lo;
    if (fhi < flo) return hi;
    double dlo = std::abs(lo - v), dhi = std::abs(hi - v);
    if (dlo != dhi) return dlo < dhi ? lo : hi;
    return std::abs(lo) <= std::abs(hi) ? lo : hi;
}

/// Euclidean projection onto the probability simplex (sort and threshold).
inline Vector project_simplex(const Vector& v) {
    const Eigen::Index k = v.size();
    if (k < 1) throw InvalidArgument("project_simplex requires a nonempty vector");
    std::vector<double> u(v.data(), v.data() + k);
    std::sort(u.begin(), u.end(), std::greater<>());
    double cumsum = 0.0, theta = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
        cumsum += u[static_cast<std::size_t>(j)];
        double t = (cumsum - 1.0) / static_cast<double>(j + 1);
        if (u[static_cast<std::size_t>(j)] - t > 0) theta = t;
    }
    Vector out = (v.array() - theta).cwiseMax(0.0);
    double s = out.sum();
    if (s > 0) out /= s;  // rounding only
    return out;
}

// ---------------------------------------------------------------------------
// Fuzzy membership
// ---------------------------------------------------------------------------

struct AdmmConfig {
    double rho = 1.0;
    int max_iters = 200;
    double tol = 1e-4;
    double lambda = 0.5;
    int inner_steps = 10;
};

/// n x K row-stochastic membership matrix. Rows that were not inferred (no
/// observed constraint) are exactly uniform.
struct FuzzyMembership {
    Matrix H;
    std::vector<bool> inferred;
    int K = 0;
    int iterations = 0;
    bool converged = true;  // false signals a ConvergenceWarning
    std::vector<double> objective_trace;  // incumbent objective after each outer iteration

    double concordance(Index i, Index j) const {
        if (!inferred[i] || !inferred[j]) return 1.0 / K;
        return H.row(static_cast<Eigen::Index>(i)).dot(H.row(static_cast<Eigen::Index>(j)));
    }
};

struct LabeledPair {
    Pair pair;
    double y = 0.0;  // 1 similar, 0 dissimilar
};

inline std::vector<LabeledPair> labeled_pairs_of(const ConstraintStore& store) {
    std::vector<LabeledPair> out;
    out.reserve(store.labeled_count());
    for (const auto& [pr, rel] : store.labeled_pairs()) out.push_back({pr, rel == Relation::similar ? 1.0 : 0.0});
    return out;
}

namespace detail {

struct Neighbor {
    Index row;  // local row index
    double y;
};

/// sum over pairs (y - h_i.h_j)^2 + lambda * sum over rows of MDSP(H).
inline double membership_objective(const Matrix& H, const std::vector<std::vector<Neighbor>>& adj, double lambda) {
    double fit = 0.0, pen = 0.0;
    for (Eigen::Index r = 0; r < H.rows(); ++r) {
        for (const auto& nb : adj[static_cast<std::size_t>(r)]) {
            if (static_cast<Eigen::Index>(nb.row) <= r) continue;
            double e = nb.y - H.row(r).dot(H.row(static_cast<Eigen::Index>(nb.row)));
            fit += e * e;
        }
        for (Eigen::Index k = 0; k < H.cols(); ++k) pen += mdsp_penalty(H(r, k));
    }
    return fit + lambda * pen;
}

}  // namespace detail

/// Solves the constraint-only membership problem
///   min_H sum_{(i,j) labeled} (y_ij - h_i.h_j)^2 + lambda sum_ik min(|h_ik|, |h_ik - 1|)
///   s.t. rows of H on the probability simplex
/// by consensus ADMM (H = Z). The H-block takes row-wise projected-gradient
/// steps on the data-fit term plus the augmented-Lagrangian proximity; the
/// Z-block is the elementwise MDSP prox with tau = lambda / rho.
///
/// `init_ids` optionally gives a known cluster id per instance (e.g. its
/// neighborhood); such rows start one-hot. The returned H is the best
/// simplex-feasible iterate seen, so the recorded objective never increases.
inline FuzzyMembership fit_fuzzy_membership_pairs(Index n, const std::vector<LabeledPair>& pairs, int K,
                                                  const AdmmConfig& cfg, unsigned long long seed,
                                                  const std::vector<int>* init_ids = nullptr) {
    if (K < 2) throw InvalidArgument("fuzzy membership needs K >= 2");
    if (cfg.tol <= 0 || cfg.max_iters < 1 || cfg.rho <= 0) throw InvalidArgument("invalid ADMM configuration");

    FuzzyMembership out;
    out.K = K;
    out.H = Matrix::Constant(static_cast<Eigen::Index>(n), K, 1.0 / K);
    out.inferred.assign(n, false);

    for (const auto& lp : pairs) {
        if (lp.pair.second >= n) throw IndexError("constrained index out of range");
        out.inferred[lp.pair.first] = out.inferred[lp.pair.second] = true;
    }
    std::vector<Index> rows;
    std::vector<Index> local(n, 0);
    for (Index i = 0; i < n; ++i)
        if (out.inferred[i]) {
            local[i] = rows.size();
            rows.push_back(i);
        }
    if (rows.empty()) return out;

    const auto m = static_cast<Eigen::Index>(rows.size());
    std::vector<std::vector<detail::Neighbor>> adj(rows.size());
    for (const auto& lp : pairs) {
        Index a = local[lp.pair.first], b = local[lp.pair.second];
        adj[a].push_back({b, lp.y});
        adj[b].push_back({a, lp.y});
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Matrix H(m, K);
    for (Eigen::Index r = 0; r < m; ++r) {
        int id = init_ids ? (*init_ids)[rows[static_cast<std::size_t>(r)]] : -1;
        if (id >= 0 && id < K) {
            H.row(r).setZero();
            H(r, id) = 1.0;
        } else {
            // Near-uniform start; exact uniform is a stationary point of the fit term.
            for (int k = 0; k < K; ++k) H(r, k) = 1.0 / K + 0.2 * (unif(rng) - 0.5) / K;
            H.row(r) /= H.row(r).sum();
        }
    }
    Matrix Z = H;
    Matrix U = Matrix::Zero(m, K);
    const double rho = cfg.rho;
    const double tau = cfg.lambda / rho;

    Matrix best = H;
    double best_obj = detail::membership_objective(H, adj, cfg.lambda);
    out.objective_trace.push_back(best_obj);
    out.converged = false;

    Vector h(K), grad(K), trial(K), target(K);
    for (int it = 0; it < cfg.max_iters; ++it) {
        // H-block: row-wise projected gradient, other rows fixed.
        for (Eigen::Index r = 0; r < m; ++r) {
            const auto& nbs = adj[static_cast<std::size_t>(r)];
            target = (Z.row(r) - U.row(r)).transpose();
            double lip = rho;
            for (const auto& nb : nbs) lip += 2.0 * H.row(static_cast<Eigen::Index>(nb.row)).squaredNorm();
            auto local_obj = [&](const Vector& x) {
                double f = 0.0;
                for (const auto& nb : nbs) {
                    double e = nb.y - H.row(static_cast<Eigen::Index>(nb.row)).dot(x);
                    f += e * e;
                }
                return f + 0.5 * rho * (x - target).squaredNorm();
            };
            h = H.row(r).transpose();
            double fh = local_obj(h);
            double step = 1.0 / lip;
            for (int s = 0; s < cfg.inner_steps; ++s) {
                grad = rho * (h - target);
                for (const auto& nb : nbs) {
                    auto hj = H.row(static_cast<Eigen::Index>(nb.row));
                    grad -= 2.0 * (nb.y - hj.dot(h)) * hj.transpose();
                }
                double t = step * 2.0;
                bool moved = false;
                for (int bt = 0; bt < 30; ++bt) {
                    trial = project_simplex(h - t * grad);
                    double ft = local_obj(trial);
                    Vector d = trial - h;
                    if (ft <= fh + grad.dot(d) + 0.5 / t * d.squaredNorm()) {
                        moved = d.squaredNorm() > 0;
                        h = trial;
                        fh = ft;
                        step = t;
                        break;
                    }
                    t *= 0.5;
                }
                if (!moved) break;
            }
            H.row(r) = h.transpose();
        }

        // Z-block and dual update.
        Matrix Zprev = Z;
        for (Eigen::Index r = 0; r < m; ++r)
            for (int k = 0; k < K; ++k) Z(r, k) = mdsp_prox(H(r, k) + U(r, k), tau);
        U += H - Z;

        double obj = detail::membership_objective(H, adj, cfg.lambda);
        if (obj < best_obj) {
            best_obj = obj;
            best = H;
        }
        out.objective_trace.push_back(best_obj);
        out.iterations = it + 1;

        double scale = std::sqrt(static_cast<double>(m * K));
        double primal = (H - Z).norm() / scale;
        double dual = rho * (Z - Zprev).norm() / scale;
        if (primal < cfg.tol && dual < cfg.tol) {
            out.converged = true;
            break;
        }
    }

    for (Eigen::Index r = 0; r < m; ++r) out.H.row(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)])) = best.row(r);
    return out;
}

inline FuzzyMembership fit_fuzzy_membership(const Dataset& data, const ConstraintStore& store, int K,
                                            const AdmmConfig& cfg, unsigned long long seed,
                                            const std::vector<int>* init_ids = nullptr) {
    if (store.n() != data.n()) throw DimensionError("constraint store size does not match dataset");
    return fit_fuzzy_membership_pairs(data.n(), labeled_pairs_of(store), K, cfg, seed, init_ids);
}

/// Objective value of a membership matrix over a labeled pair list.
inline double membership_objective(const FuzzyMembership& fm, const std::vector<LabeledPair>& pairs, double lambda) {
    double fit = 0.0, pen = 0.0;
    for (const auto& lp : pairs) {
        double e = lp.y - fm.concordance(lp.pair.first, lp.pair.second);
        fit += e * e;
    }
    for (Index i = 0; i < fm.inferred.size(); ++i) {
        if (!fm.inferred[i]) continue;
        for (int k = 0; k < fm.K; ++k) pen += mdsp_penalty(fm.H(static_cast<Eigen::Index>(i), k));
    }
    return fit + lambda * pen;
}

// ---------------------------------------------------------------------------
// Augmented constraints
// ---------------------------------------------------------------------------

struct WeightedPair {
    Pair pair;
    double weight = 0.0;
};

struct AugmentedConstraints {
    std::vector<WeightedPair> similar;     // concordance > 1/K
    std::vector<WeightedPair> dissimilar;  // concordance < 1/K
};

/// Certainty weight of an inferred pair given its concordance h_i.h_j.
inline double augmentation_weight(double concordance, int K) {
    const double d = concordance - 1.0 / K;
    const double w = static_cast<double>(K) / (K - 1) * std::max(d, 0.0) - K * std::min(d, 0.0);
    return std::clamp(w, 0.0, 1.0);
}

inline AugmentedConstraints augment_constraints(const FuzzyMembership& fm, int K) {
    if (K < 2 || fm.K != K) throw InvalidArgument("augment_constraints: K does not match membership");
    AugmentedConstraints out;
    const double thr = 1.0 / K;
    std::vector<Index> rows;
    for (Index i = 0; i < fm.inferred.size(); ++i)
        if (fm.inferred[i]) rows.push_back(i);
    // Pairs touching a non-inferred (uniform) row sit exactly on the threshold.
    for (std::size_t a = 0; a < rows.size(); ++a) {
        auto hi = fm.H.row(static_cast<Eigen::Index>(rows[a]));
        for (std::size_t b = a + 1; b < rows.size(); ++b) {
            double c = hi.dot(fm.H.row(static_cast<Eigen::Index>(rows[b])));
            if (c > thr)
                out.similar.push_back({Pair(rows[a], rows[b]), augmentation_weight(c, K)});
            else if (c < thr)
                out.dissimilar.push_back({Pair(rows[a], rows[b]), augmentation_weight(c, K)});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Lambda selection
// ---------------------------------------------------------------------------

/// Mean held-out squared error of 5-fold cross-validation over labeled pairs.
inline double lambda_cv_error(Index n, const std::vector<LabeledPair>& pairs, int K, double lambda, AdmmConfig cfg,
                              unsigned long long seed, int folds = 5) {
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    cfg.lambda = lambda;
    double total = 0.0;
    for (int f = 0; f < folds; ++f) {
        std::vector<LabeledPair> train, test;
        for (std::size_t k = 0; k < order.size(); ++k)
            (static_cast<int>(k % static_cast<std::size_t>(folds)) == f ? test : train).push_back(pairs[order[k]]);
        FuzzyMembership fm = fit_fuzzy_membership_pairs(n, train, K, cfg, seed + static_cast<unsigned long long>(f));
        double err = 0.0;
        for (const auto& lp : test) {
            double e = lp.y - fm.concordance(lp.pair.first, lp.pair.second);
            err += e * e;
        }
        total += test.empty() ? 0.0 : err / static_cast<double>(test.size());
    }
    return total / folds;
}

/// Grid value with the smallest 5-fold CV error; ties go to the smaller lambda.
inline double tune_lambda(const Dataset& data, const ConstraintStore& store, int K, const std::vector<double>& grid,
                          const AdmmConfig& cfg, unsigned long long seed) {
    if (grid.empty()) throw InvalidArgument("lambda grid is empty");
    auto pairs = labeled_pairs_of(store);
    if (pairs.size() < 5) throw InsufficientConstraints("lambda tuning needs at least 5 labeled pairs");
    std::vector<double> sorted = grid;
    std::sort(sorted.begin(), sorted.end());
    if (sorted.size() == 1) return sorted.front();
    double best = sorted.front();
    double best_err = std::numeric_limits<double>::infinity();
    for (double lam : sorted) {
        double err = lambda_cv_error(data.n(), pairs, K, lam, cfg, seed);
        if (err < best_err) {
            best_err = err;
            best = lam;
        }
    }
    return best;
}

}  // namespace aqm

#endif  // AQM_AUGMENTATION_HPP
