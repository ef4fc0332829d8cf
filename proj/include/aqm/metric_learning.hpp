#ifndef AQM_METRIC_LEARNING_HPP
#define AQM_METRIC_LEARNING_HPP

#include "aqm/augmentation.hpp"
#include "aqm/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

namespace aqm {

/// Everything needed to learn a metric from queried and augmented pairs.
/// Empty pair sets drop their normalized term.
struct MetricProblem {
    const Dataset* data = nullptr;
    std::vector<Pair> similar;
    std::vector<Pair> dissimilar;
    AugmentedConstraints aug;
    double gamma = 0.0;
    std::vector<Index> penalty_set;  // 0-based feature (or rotated-axis) indices
    MetricMatrix::Kind kind = MetricMatrix::Kind::diagonal;
};

struct SolverOptions {
    int max_iters = 500;
    double step_tol = 1e-7;
    double shrink = 0.5;
    double sufficient_increase = 1e-4;
    int max_backtracks = 60;
    int full_max_iters = 300;
    std::optional<Vector> initial;  // diagonal solver start; must be feasible-ish, projected anyway
};

struct MetricFit {
    MetricMatrix metric;
    double objective = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> trace;  // objective after each accepted step
    Eigen::MatrixXd basis;       // eigenvectors used by the full path (empty for diagonal)
};

inline constexpr double kSqrtEps = 1e-12;

// ---------------------------------------------------------------------------
// Projection onto {a >= 0, c^T a <= budget}
// ---------------------------------------------------------------------------

inline Vector project_feasible(const Vector& a, const Vector& c, double budget) {
    if (a.size() != c.size()) throw DimensionError("project_feasible: size mismatch");
    if (budget <= 0) throw InvalidArgument("project_feasible: budget must be positive");
    if (c.size() > 0 && c.minCoeff() < 0) throw InvalidArgument("project_feasible: costs must be nonnegative");
    Vector x = a.cwiseMax(0.0);
    if (c.dot(x) <= budget) return x;

    // x(mu) = max(a - mu c, 0); c^T x(mu) is piecewise linear and decreasing.
    std::vector<double> brk;
    for (Eigen::Index m = 0; m < a.size(); ++m)
        if (c[m] > 0 && a[m] > 0) brk.push_back(a[m] / c[m]);
    std::sort(brk.begin(), brk.end());
    auto g = [&](double mu) {
        double s = 0.0;
        for (Eigen::Index m = 0; m < a.size(); ++m) s += c[m] * std::max(a[m] - mu * c[m], 0.0);
        return s;
    };
    double lo = 0.0;
    double mu = 0.0;
    for (double b : brk) {
        if (g(b) <= budget) {
            // Linear on [lo, b]: s(mu) = sum_{active} c_m a_m - mu sum_{active} c_m^2.
            double sa = 0.0, sc = 0.0;
            for (Eigen::Index m = 0; m < a.size(); ++m)
                if (c[m] > 0 && a[m] - lo * c[m] > 0 && a[m] / c[m] > lo) {
                    sa += c[m] * a[m];
                    sc += c[m] * c[m];
                }
            mu = sc > 0 ? (sa - budget) / sc : b;
            mu = std::clamp(mu, lo, b);
            break;
        }
        lo = b;
    }
    for (Eigen::Index m = 0; m < a.size(); ++m) x[m] = c[m] > 0 ? std::max(a[m] - mu * c[m], 0.0) : std::max(a[m], 0.0);
    double s = c.dot(x);
    if (s > budget) {
        // Rounding: shrink the cost-bearing coordinates onto the boundary.
        double excess = s - budget;
        double cost_part = 0.0;
        for (Eigen::Index m = 0; m < a.size(); ++m)
            if (c[m] > 0) cost_part += c[m] * x[m];
        double f = cost_part > 0 ? std::max(0.0, 1.0 - excess / cost_part) : 0.0;
        for (Eigen::Index m = 0; m < a.size(); ++m)
            if (c[m] > 0) x[m] *= f * (1.0 - 1e-15);
    }
    return x;
}

// ---------------------------------------------------------------------------
// Pair terms
// ---------------------------------------------------------------------------

namespace detail {

struct PairTerms {
    std::vector<Pair> pairs;
    Vector coef;
};

/// Merges queried pairs (coefficient 1/|Q|) with augmented pairs (w/|A|).
inline PairTerms merge_terms(const std::vector<Pair>& queried, const std::vector<WeightedPair>& aug) {
    std::vector<std::pair<Pair, double>> all;
    all.reserve(queried.size() + aug.size());
    if (!queried.empty()) {
        double c = 1.0 / static_cast<double>(queried.size());
        for (const Pair& p : queried) all.emplace_back(p, c);
    }
    if (!aug.empty()) {
        double c = 1.0 / static_cast<double>(aug.size());
        for (const auto& wp : aug)
            if (wp.weight > 0) all.emplace_back(wp.pair, c * wp.weight);
    }
    std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    PairTerms t;
    std::vector<double> coef;
    for (const auto& [p, c] : all) {
        if (!t.pairs.empty() && t.pairs.back() == p) {
            coef.back() += c;
        } else {
            t.pairs.push_back(p);
            coef.push_back(c);
        }
    }
    t.coef = Eigen::Map<Vector>(coef.data(), static_cast<Eigen::Index>(coef.size()));
    return t;
}

/// Rows (x_i - x_j) for each pair, optionally rotated by `basis` (x -> basis^T x).
inline Matrix pair_differences(const Matrix& X, const std::vector<Pair>& pairs) {
    Matrix D(static_cast<Eigen::Index>(pairs.size()), X.cols());
    for (std::size_t k = 0; k < pairs.size(); ++k)
        D.row(static_cast<Eigen::Index>(k)) =
            X.row(static_cast<Eigen::Index>(pairs[k].first)) - X.row(static_cast<Eigen::Index>(pairs[k].second));
    return D;
}

}  // namespace detail

/// The diagonal problem in linear form:
///   maximize   f(a) = sum_k coef_k sqrt(sum_m a_m dsq_km)
///   subject to cost^T a <= 1,  a >= 0
/// where cost folds the similar terms and gamma on the penalty set.
class DiagonalMetricObjective {
public:
    DiagonalMetricObjective(const Matrix& X, const MetricProblem& prob) {
        const Index p = static_cast<Index>(X.cols());
        for (Index g : prob.penalty_set)
            if (g >= p) throw IndexError("penalty feature index out of range");
        if (prob.gamma < 0) throw InvalidArgument("gamma must be nonnegative");

        auto dis = detail::merge_terms(prob.dissimilar, prob.aug.dissimilar);
        if (dis.pairs.empty()) throw DegenerateProblem("metric learning needs at least one dissimilar pair");
        dsq_ = detail::pair_differences(X, dis.pairs).cwiseAbs2();
        coef_ = dis.coef;
        if (dsq_.maxCoeff() <= 0) throw DegenerateProblem("all dissimilar pairs have zero feature differences");

        auto sim = detail::merge_terms(prob.similar, prob.aug.similar);
        similar_cost_ = Vector::Zero(static_cast<Eigen::Index>(p));
        if (!sim.pairs.empty()) similar_cost_ = detail::pair_differences(X, sim.pairs).cwiseAbs2().transpose() * sim.coef;
        penalty_ = Vector::Zero(static_cast<Eigen::Index>(p));
        for (Index g : prob.penalty_set) penalty_[static_cast<Eigen::Index>(g)] = prob.gamma;

        cost_ = similar_cost_ + penalty_;
        // A zero cost coordinate would make the problem unbounded; floor it.
        double pos_mean = 0.0;
        int pos = 0;
        for (Eigen::Index m = 0; m < cost_.size(); ++m)
            if (cost_[m] > 0) {
                pos_mean += cost_[m];
                ++pos;
            }
        pos_mean = pos > 0 ? pos_mean / pos : 1.0;
        cost_ = cost_.cwiseMax(1e-6 * pos_mean);
    }

    Index p() const { return static_cast<Index>(cost_.size()); }
    const Vector& cost() const { return cost_; }
    const Vector& similar_cost() const { return similar_cost_; }
    const Vector& penalty() const { return penalty_; }

    double value(const Vector& a) const {
        Vector s = dsq_ * a;
        double f = 0.0;
        for (Eigen::Index k = 0; k < s.size(); ++k) f += coef_[k] * std::sqrt(std::max(s[k], 0.0) + kSqrtEps);
        return f;
    }

    Vector gradient(const Vector& a) const {
        Vector s = dsq_ * a;
        Vector r(s.size());
        for (Eigen::Index k = 0; k < s.size(); ++k) r[k] = coef_[k] / (2.0 * std::sqrt(std::max(s[k], 0.0) + kSqrtEps));
        return dsq_.transpose() * r;
    }

    /// Similar-plus-penalty side of the constraint, without flooring.
    double constraint_value(const Vector& a) const { return (similar_cost_ + penalty_).dot(a); }

private:
    Matrix dsq_;
    Vector coef_;
    Vector similar_cost_;
    Vector penalty_;
    Vector cost_;
};

/// Projected-gradient ascent with Barzilai-Borwein trial steps and
/// backtracking (sufficient increase) on the diagonal problem.
inline MetricFit solve_diagonal(const DiagonalMetricObjective& obj, const SolverOptions& opt) {
    const Vector& c = obj.cost();
    Vector a = opt.initial ? project_feasible(*opt.initial, c, 1.0) : Vector(Vector::Constant(c.size(), 1.0 / c.sum()));
    double fa = obj.value(a);
    Vector g = obj.gradient(a);
    MetricFit fit;
    fit.trace.push_back(fa);
    double t = 1.0 / std::max(g.norm(), 1e-300) * std::max(a.norm(), 1e-12);
    Vector a_prev, g_prev;
    for (int it = 0; it < opt.max_iters; ++it) {
        if (it > 0) {
            Vector s = a - a_prev, y = g - g_prev;
            double sy = s.dot(y);
            if (sy < 0) t = s.squaredNorm() / -sy;  // concave: s^T y <= 0
            else t *= 2.0;
        }
        Vector trial;
        double ft = fa;
        bool accepted = false;
        for (int bt = 0; bt < opt.max_backtracks; ++bt) {
            trial = project_feasible(a + t * g, c, 1.0);
            ft = obj.value(trial);
            if (ft >= fa + opt.sufficient_increase * g.dot(trial - a)) {
                accepted = true;
                break;
            }
            t *= opt.shrink;
        }
        fit.iterations = it + 1;
        if (!accepted) {
            fit.converged = true;
            break;
        }
        double step = (trial - a).norm();
        a_prev = a;
        g_prev = g;
        a = trial;
        fa = ft;
        g = obj.gradient(a);
        fit.trace.push_back(fa);
        if (step < opt.step_tol) {
            fit.converged = true;
            break;
        }
    }
    fit.objective = fa;
    fit.metric = MetricMatrix::diagonal(a);
    return fit;
}

inline MetricFit learn_metric_diagonal_fit(const MetricProblem& prob, const SolverOptions& opt = {}) {
    if (!prob.data) throw InvalidArgument("metric problem has no data");
    DiagonalMetricObjective obj(prob.data->points(), prob);
    return solve_diagonal(obj, opt);
}

/// Diagonal metric maximizing the dissimilar spread subject to the
/// similar-plus-selective-penalty budget.
inline MetricMatrix learn_metric_diagonal(const MetricProblem& prob, const SolverOptions& opt = {},
                                          unsigned long long seed = 0) {
    (void)seed;  // the solver is deterministic; the seed is kept for interface symmetry
    return learn_metric_diagonal_fit(prob, opt).metric;
}

// ---------------------------------------------------------------------------
// Full matrix path
// ---------------------------------------------------------------------------

/// Unpenalized full-matrix problem:
///   maximize sum_k coef_k sqrt(d_k^T A d_k)  s.t. <C, A> <= 1, A psd.
class FullMetricObjective {
public:
    FullMetricObjective(const Matrix& X, const MetricProblem& prob) {
        auto dis = detail::merge_terms(prob.dissimilar, prob.aug.dissimilar);
        if (dis.pairs.empty()) throw DegenerateProblem("metric learning needs at least one dissimilar pair");
        diff_ = detail::pair_differences(X, dis.pairs);
        coef_ = dis.coef;
        if (diff_.cwiseAbs().maxCoeff() <= 0) throw DegenerateProblem("all dissimilar pairs have zero feature differences");
        auto sim = detail::merge_terms(prob.similar, prob.aug.similar);
        const auto p = X.cols();
        C_ = Eigen::MatrixXd::Zero(p, p);
        if (!sim.pairs.empty()) {
            Matrix sd = detail::pair_differences(X, sim.pairs);
            C_ = sd.transpose() * sim.coef.asDiagonal() * sd;
        }
        double tr = C_.trace();
        C_ += Eigen::MatrixXd::Identity(p, p) * 1e-6 * (tr > 0 ? tr / static_cast<double>(p) : 1.0);
        L_ = Eigen::LLT<Eigen::MatrixXd>(C_).matrixL();
        Linv_ = L_.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(p, p));
    }

    const Eigen::MatrixXd& budget_matrix() const { return C_; }

    double value(const Eigen::MatrixXd& A) const {
        Matrix DA = diff_ * A;
        double f = 0.0;
        for (Eigen::Index k = 0; k < diff_.rows(); ++k)
            f += coef_[k] * std::sqrt(std::max(DA.row(k).dot(diff_.row(k)), 0.0) + kSqrtEps);
        return f;
    }

    Eigen::MatrixXd gradient(const Eigen::MatrixXd& A) const {
        Matrix DA = diff_ * A;
        Vector r(diff_.rows());
        for (Eigen::Index k = 0; k < diff_.rows(); ++k)
            r[k] = coef_[k] / (2.0 * std::sqrt(std::max(DA.row(k).dot(diff_.row(k)), 0.0) + kSqrtEps));
        return diff_.transpose() * r.asDiagonal() * diff_;
    }

    /// Euclidean projection onto {A psd, <C, A> <= 1} in whitened coordinates
    /// B = L^T A L (C = L L^T), where the set is the spectraplex.
    Eigen::MatrixXd project(const Eigen::MatrixXd& A) const { return from_white(project_white(to_white(A))); }

    Eigen::MatrixXd to_white(const Eigen::MatrixXd& A) const { return L_.transpose() * A * L_; }
    Eigen::MatrixXd from_white(const Eigen::MatrixXd& B) const { return Linv_.transpose() * B * Linv_; }
    /// Gradient of B -> f(from_white(B)).
    Eigen::MatrixXd white_gradient(const Eigen::MatrixXd& A) const { return Linv_ * gradient(A) * Linv_.transpose(); }

    static Eigen::MatrixXd project_white(const Eigen::MatrixXd& B) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (B + B.transpose()));
        Vector ev = project_feasible(es.eigenvalues(), Vector::Ones(B.rows()), 1.0);
        return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    }

private:
    Matrix diff_;
    Vector coef_;
    Eigen::MatrixXd C_;
    Eigen::MatrixXd L_, Linv_;
};

inline MetricFit solve_full_unpenalized(const FullMetricObjective& obj, Index p, const SolverOptions& opt) {
    const auto pp = static_cast<Eigen::Index>(p);
    // Concave objective over the spectraplex: projected gradient ascent on B.
    Eigen::MatrixXd B = Eigen::MatrixXd::Identity(pp, pp) / static_cast<double>(p);
    Eigen::MatrixXd A = obj.from_white(B);
    double fa = obj.value(A);
    MetricFit fit;
    fit.trace.push_back(fa);
    Eigen::MatrixXd g = obj.white_gradient(A);
    double t = 1.0 / std::max(g.norm(), 1e-300);
    for (int it = 0; it < opt.full_max_iters; ++it) {
        Eigen::MatrixXd trial, Atrial;
        double ft = fa;
        bool accepted = false;
        for (int bt = 0; bt < opt.max_backtracks; ++bt) {
            trial = FullMetricObjective::project_white(B + t * g);
            Atrial = obj.from_white(trial);
            ft = obj.value(Atrial);
            // Armijo condition along the projection arc.
            if (ft >= fa + opt.sufficient_increase * g.cwiseProduct(trial - B).sum() && ft > fa) {
                accepted = true;
                break;
            }
            t *= opt.shrink;
        }
        fit.iterations = it + 1;
        if (!accepted) {
            fit.converged = true;
            break;
        }
        Eigen::MatrixXd g_new = obj.white_gradient(Atrial);
        const Eigen::MatrixXd s = trial - B, y = g_new - g;
        const double step = s.norm();
        B = trial;
        A = Atrial;
        fa = ft;
        g = g_new;
        fit.trace.push_back(fa);
        // Barzilai-Borwein step for an ascent problem: -<s,s>/<s,y> > 0.
        const double sy = s.cwiseProduct(y).sum();
        t = sy < 0 ? -s.squaredNorm() / sy : 2.0 * t;
        if (step < opt.step_tol * std::max(1.0, B.norm())) {
            fit.converged = true;
            break;
        }
    }
    fit.objective = fa;
    fit.metric = MetricMatrix::full(0.5 * (A + A.transpose()));
    return fit;
}

/// Two-step full metric: eigenvectors of the unpenalized full solution, then
/// the selectively penalized diagonal problem in that rotated basis.
inline MetricFit learn_metric_full_fit(const MetricProblem& prob, const SolverOptions& opt = {},
                                       const Eigen::MatrixXd* fixed_basis = nullptr) {
    if (!prob.data) throw InvalidArgument("metric problem has no data");
    const Matrix& X = prob.data->points();
    const Index p = prob.data->p();
    Eigen::MatrixXd basis;
    if (fixed_basis) {
        basis = *fixed_basis;
    } else {
        FullMetricObjective full(X, prob);
        MetricFit unpen = solve_full_unpenalized(full, p, opt);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(unpen.metric.dense());
        basis = es.eigenvectors();
    }
    Matrix rotated = X * basis;
    DiagonalMetricObjective diag(rotated, prob);
    MetricFit d = solve_diagonal(diag, opt);
    Eigen::MatrixXd A = basis * d.metric.diagonal_values().asDiagonal() * basis.transpose();
    MetricFit out;
    out.metric = MetricMatrix::full(A);
    out.objective = d.objective;
    out.iterations = d.iterations;
    out.converged = d.converged;
    out.trace = std::move(d.trace);
    out.basis = std::move(basis);
    return out;
}

inline MetricMatrix learn_metric_full(const MetricProblem& prob, const SolverOptions& opt = {},
                                      unsigned long long seed = 0) {
    (void)seed;
    return learn_metric_full_fit(prob, opt).metric;
}

inline MetricFit learn_metric_fit(const MetricProblem& prob, const SolverOptions& opt = {},
                                  const Eigen::MatrixXd* fixed_basis = nullptr) {
    return prob.kind == MetricMatrix::Kind::diagonal ? learn_metric_diagonal_fit(prob, opt)
                                                     : learn_metric_full_fit(prob, opt, fixed_basis);
}

// ---------------------------------------------------------------------------
// Metric history and selective penalty set
// ---------------------------------------------------------------------------

/// 1-based ascending ranks with average-rank ties.
inline Vector average_ranks(const Vector& v) {
    const auto p = v.size();
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(p));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    Vector r(p);
    for (Eigen::Index s = 0; s < p;) {
        Eigen::Index e = s;
        while (e + 1 < p && v[idx[static_cast<std::size_t>(e + 1)]] == v[idx[static_cast<std::size_t>(s)]]) ++e;
        double avg = 0.5 * static_cast<double>(s + e) + 1.0;
        for (Eigen::Index k = s; k <= e; ++k) r[idx[static_cast<std::size_t>(k)]] = avg;
        s = e + 1;
    }
    return r;
}

/// Metrics learned at each loop of the active phase.
class MetricHistory {
public:
    void push(MetricMatrix a) { metrics_.push_back(std::move(a)); }
    bool empty() const { return metrics_.empty(); }
    std::size_t size() const { return metrics_.size(); }
    const std::vector<MetricMatrix>& metrics() const { return metrics_; }
    const MetricMatrix& back() const { return metrics_.back(); }

    /// Per-axis eigenvalue of A^t: the diagonal for diagonal metrics, or
    /// diag(basis^T A basis) when a basis (e.g. the final eigenbasis) is given.
    static Vector axis_spectrum(const MetricMatrix& a, const Eigen::MatrixXd* basis = nullptr) {
        if (basis) return (basis->transpose() * a.dense() * *basis).diagonal();
        return a.feature_weights();
    }

    /// Mean of the ascending rank statistics over the history.
    Vector rank_average(const Eigen::MatrixXd* basis = nullptr) const {
        if (empty()) throw EmptyHistory("metric history is empty");
        Vector sum = Vector::Zero(static_cast<Eigen::Index>(metrics_.front().p()));
        for (const auto& a : metrics_) sum += average_ranks(axis_spectrum(a, basis));
        return sum / static_cast<double>(metrics_.size());
    }

    /// Mean eigenvalue per rank position, sorted descending.
    Vector mean_spectrum() const {
        if (empty()) throw EmptyHistory("metric history is empty");
        Vector sum = Vector::Zero(static_cast<Eigen::Index>(metrics_.front().p()));
        for (const auto& a : metrics_) {
            Vector ev = a.eigenvalues();
            sum += ev.reverse();
        }
        return sum / static_cast<double>(metrics_.size());
    }

private:
    std::vector<MetricMatrix> metrics_;
};

/// The q axes with the smallest average rank; ties go to the smaller index.
inline std::vector<Index> aggregate_penalty_set(const MetricHistory& history, int q,
                                                const Eigen::MatrixXd* basis = nullptr) {
    Vector rbar = history.rank_average(basis);
    const auto p = rbar.size();
    if (q < 1 || q > p) throw InvalidArgument("q must lie in [1, p]");
    std::vector<Index> idx(static_cast<std::size_t>(p));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) {
        return rbar[static_cast<Eigen::Index>(a)] < rbar[static_cast<Eigen::Index>(b)];
    });
    idx.resize(static_cast<std::size_t>(q));
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Elbow rule on a descending spectrum: keep the head up to the position of
/// the largest second difference, penalize the rest. No positive curvature
/// means no elbow and the minimal q = 1.
inline int select_q_from_spectrum(const Vector& spectrum_desc) {
    const auto p = spectrum_desc.size();
    if (p < 3) return 1;
    double best = 0.0;
    Eigen::Index keep = -1;
    const double scale = std::max(1e-300, spectrum_desc.cwiseAbs().maxCoeff());
    for (Eigen::Index k = 0; k + 2 < p; ++k) {
        double d2 = spectrum_desc[k] - 2.0 * spectrum_desc[k + 1] + spectrum_desc[k + 2];
        if (d2 > best + 1e-12 * scale) {
            best = d2;
            keep = k + 1;
        }
    }
    if (keep < 0) return 1;
    return static_cast<int>(std::clamp<Eigen::Index>(p - keep, 1, p - 1));
}

inline int select_q(const MetricHistory& history) { return select_q_from_spectrum(history.mean_spectrum()); }

}  // namespace aqm

#endif  // AQM_METRIC_LEARNING_HPP
