#include "aqm/datagen.hpp"
#include "aqm/metric_learning.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace aqm;

namespace {

/// Random truthful pairs from the labels of `d`.
MetricProblem labeled_problem(const Dataset& d, int n_pairs, unsigned long long seed) {
    MetricProblem prob;
    prob.data = &d;
    std::mt19937_64 rng(seed);
    for (int k = 0; k < n_pairs; ++k) {
        Index i = rng() % d.n(), j = rng() % d.n();
        if (i == j) continue;
        (d.labels()[i] == d.labels()[j] ? prob.similar : prob.dissimilar).emplace_back(i, j);
    }
    return prob;
}

Dataset two_blobs_feature_one(unsigned long long seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Matrix X(40, 2);
    std::vector<int> y(40);
    for (Eigen::Index i = 0; i < 40; ++i) {
        y[static_cast<std::size_t>(i)] = static_cast<int>(i % 2);
        X(i, 0) = g(rng) + 5.0 * y[static_cast<std::size_t>(i)];
        X(i, 1) = g(rng);
    }
    return Dataset(X, y);
}

}  // namespace

TEST(ProjectFeasible, Examples) {
    Vector c(2), a(2);
    c << 1, 1;
    a << 0.2, 0.3;
    EXPECT_TRUE(project_feasible(a, c, 1.0) == a);
    a << 2, 2;
    EXPECT_TRUE(project_feasible(a, c, 1.0).isApprox(Vector::Constant(2, 0.5), 1e-12));
    c << 1, 0;
    a << -1, 3;
    Vector want(2);
    want << 0, 3;
    EXPECT_TRUE(project_feasible(a, c, 1.0) == want);
    EXPECT_THROW(project_feasible(a, -c, 1.0), InvalidArgument);
    EXPECT_THROW(project_feasible(a, c, 0.0), InvalidArgument);
}

TEST(ProjectFeasible, OptimalAgainstRandomFeasiblePoints) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g(0.0, 3.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
        const int p = 1 + t % 7;
        Vector a(p), c(p);
        for (int m = 0; m < p; ++m) {
            a[m] = g(rng);
            c[m] = u(rng) < 0.2 ? 0.0 : u(rng) * 2;
        }
        const double budget = 0.1 + u(rng);
        Vector x = project_feasible(a, c, budget);
        EXPECT_GE(x.minCoeff(), 0.0);
        EXPECT_LE(c.dot(x), budget + 1e-10);
        for (int s = 0; s < 100; ++s) {
            Vector z(p);
            for (int m = 0; m < p; ++m) z[m] = u(rng) * 3;
            double cz = c.dot(z);
            if (cz > budget) z *= budget / cz;
            EXPECT_LE((x - a).norm(), (z - a).norm() + 1e-9);
        }
    }
}

TEST(DiagonalMetric, SeparatingFeatureDominates) {
    Dataset d = two_blobs_feature_one(1);
    MetricProblem prob = labeled_problem(d, 200, 2);
    MetricFit fit = learn_metric_diagonal_fit(prob);
    Vector a = fit.metric.diagonal_values();
    EXPECT_GE(a[0] / a.sum(), 0.9);
    // Exhaustive search along the budget boundary (the optimum lies on it).
    DiagonalMetricObjective obj(d.points(), prob);
    const Vector& c = obj.cost();
    double best = 0.0;
    for (int k = 0; k <= 10000; ++k) {
        double s = k / 10000.0;
        Vector z(2);
        z << s / c[0], (1 - s) / c[1];
        best = std::max(best, obj.value(z));
    }
    EXPECT_GE(fit.objective, best - 1e-6 * best);
}

TEST(DiagonalMetric, LargePenaltyShrinksEverything) {
    Dataset d = two_blobs_feature_one(3);
    MetricProblem prob = labeled_problem(d, 100, 4);
    prob.gamma = 1e3;
    prob.penalty_set = {0, 1};
    Vector a = learn_metric_diagonal(prob).diagonal_values();
    EXPECT_LE(a.maxCoeff(), 1e-3);
}

TEST(DiagonalMetric, OneDimensionalClosedForm) {
    Matrix X(4, 1);
    X << 0.0, 1.5, 4.0, 10.0;
    Dataset d(X);
    MetricProblem prob;
    prob.data = &d;
    prob.similar = {Pair(0, 1)};     // d_s = 1.5
    prob.dissimilar = {Pair(2, 3)};  // d_d = 6
    Vector a = learn_metric_diagonal(prob).diagonal_values();
    EXPECT_NEAR(a[0], 1.0 / (1.5 * 1.5), 1e-9);
}

TEST(DiagonalMetric, DegenerateProblems) {
    Matrix X = Matrix::Ones(4, 2);
    Dataset d(X);
    MetricProblem prob;
    prob.data = &d;
    prob.dissimilar = {Pair(0, 1)};
    EXPECT_THROW(learn_metric_diagonal(prob), DegenerateProblem);
    prob.dissimilar.clear();
    EXPECT_THROW(learn_metric_diagonal(prob), DegenerateProblem);
}

TEST(DiagonalMetric, GradientMatchesFiniteDifferences) {
    SimSetting st;
    st.kind = SimSetting::Kind::signflip;
    st.p1 = 3;
    st.p2 = 4;
    st.K = 3;
    st.c = 3;
    Dataset d = generate(st);
    MetricProblem prob = labeled_problem(d, 60, 5);
    prob.aug.dissimilar = {{Pair(0, 5), 0.4}, {Pair(2, 9), 0.7}};
    prob.aug.similar = {{Pair(1, 3), 0.5}};
    prob.gamma = 0.3;
    prob.penalty_set = {4, 6};
    DiagonalMetricObjective obj(d.points(), prob);
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (int t = 0; t < 100; ++t) {
        Vector a(static_cast<Eigen::Index>(d.p()));
        for (Eigen::Index m = 0; m < a.size(); ++m) a[m] = u(rng);
        a /= obj.cost().dot(a);
        Vector g = obj.gradient(a);
        Vector fd = oracle::fd_gradient([&](const Vector& z) { return obj.value(z); }, a);
        EXPECT_LE((g - fd).norm(), 1e-4 * g.norm()) << "point " << t;
    }
}

TEST(DiagonalMetric, FeasibleMonotoneAndPinned) {
    for (unsigned long long seed = 0; seed < 10; ++seed) {
        SimSetting st;
        st.seed = seed;
        Dataset d = generate(st);
        MetricProblem prob = labeled_problem(d, 80, seed + 50);
        prob.gamma = 0.1 * static_cast<double>(seed);
        prob.penalty_set = {6, 7, 8};
        MetricFit fit = learn_metric_diagonal_fit(prob);
        DiagonalMetricObjective obj(d.points(), prob);
        const Vector& a = fit.metric.diagonal_values();
        EXPECT_GE(a.minCoeff(), 0.0);
        EXPECT_LE(obj.constraint_value(a), 1.0 + 1e-6);
        EXPECT_NEAR(obj.cost().dot(a), 1.0, 1e-4);
        for (std::size_t k = 1; k < fit.trace.size(); ++k) EXPECT_GE(fit.trace[k], fit.trace[k - 1]);
        EXPECT_GE(fit.metric.eigenvalues().minCoeff(), kPsdTolerance);
    }
}

TEST(DiagonalMetric, TwoStartsAgree) {
    SimSetting st;
    st.kind = SimSetting::Kind::signflip;
    st.p1 = 5;
    st.p2 = 10;
    st.K = 5;
    st.c = 3;
    st.n = 120;
    Dataset d = generate(st);
    MetricProblem prob = labeled_problem(d, 150, 9);
    SolverOptions a, b;
    a.max_iters = b.max_iters = 5000;
    a.step_tol = b.step_tol = 1e-10;
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vector s1(static_cast<Eigen::Index>(d.p())), s2(static_cast<Eigen::Index>(d.p()));
    for (Eigen::Index m = 0; m < s1.size(); ++m) {
        s1[m] = u(rng);
        s2[m] = u(rng);
    }
    a.initial = s1;
    b.initial = s2;
    double fa = learn_metric_diagonal_fit(prob, a).objective;
    double fb = learn_metric_diagonal_fit(prob, b).objective;
    EXPECT_NEAR(fa, fb, 1e-4);
}

TEST(AverageRanks, Ties) {
    Vector v(4);
    v << 3, 1, 3, 2;
    Vector r = average_ranks(v);
    Vector want(4);
    want << 3.5, 1, 3.5, 2;
    EXPECT_TRUE(r == want);
}

namespace {

MetricMatrix diag3(double a, double b, double c) {
    Vector v(3);
    v << a, b, c;
    return MetricMatrix::diagonal(v);
}

}  // namespace

TEST(PenaltySet, Examples) {
    MetricHistory h;
    EXPECT_THROW(aggregate_penalty_set(h, 1), EmptyHistory);
    h.push(diag3(5, 1, 3));
    EXPECT_EQ(aggregate_penalty_set(h, 1), (std::vector<Index>{1}));
    h.push(diag3(4, 2, 1));
    Vector want(3);
    want << 3, 1.5, 1.5;
    EXPECT_TRUE(h.rank_average() == want);
    EXPECT_EQ(aggregate_penalty_set(h, 1), (std::vector<Index>{1}));
    EXPECT_EQ(aggregate_penalty_set(h, 3), (std::vector<Index>{0, 1, 2}));
    EXPECT_THROW(aggregate_penalty_set(h, 0), InvalidArgument);
}

TEST(PenaltySet, InvariantToRescaling) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 50; ++t) {
        MetricHistory h, scaled;
        for (int k = 0; k < 4; ++k) {
            Vector v(6);
            for (int m = 0; m < 6; ++m) v[m] = u(rng);
            h.push(MetricMatrix::diagonal(v));
            scaled.push(MetricMatrix::diagonal(v * (k == t % 4 ? 37.5 : 1.0)));
        }
        for (int q = 1; q <= 6; ++q) EXPECT_EQ(aggregate_penalty_set(h, q), aggregate_penalty_set(scaled, q));
    }
}

TEST(SelectQ, Examples) {
    Vector s(5);
    s << 10, 9.5, 0.1, 0.05, 0.02;
    EXPECT_EQ(select_q_from_spectrum(s), 3);
    EXPECT_EQ(select_q_from_spectrum(Vector::Ones(4)), 1);
    Vector t(3);
    t << 100, 1, 1;
    EXPECT_EQ(select_q_from_spectrum(t), 2);

    MetricHistory h;
    EXPECT_THROW(select_q(h), EmptyHistory);
    Vector a(5);
    a << 0.1, 10, 0.02, 9.5, 0.05;
    h.push(MetricMatrix::diagonal(a));
    EXPECT_EQ(select_q(h), 3);
}

namespace {

Dataset axis_aligned(unsigned long long seed) {
    SimSetting st;
    st.kind = SimSetting::Kind::basic;
    st.p1 = 3;
    st.p2 = 2;
    st.K = 3;
    st.c = 5;
    st.n = 90;
    st.seed = seed;
    return generate(st);
}

}  // namespace

TEST(FullMetric, PsdAndFeasible) {
    Dataset d = axis_aligned(1);
    MetricProblem prob = labeled_problem(d, 120, 3);
    prob.kind = MetricMatrix::Kind::full;
    MetricFit fit = learn_metric_full_fit(prob);
    EXPECT_FALSE(fit.metric.is_diagonal());
    EXPECT_GE(fit.metric.eigenvalues().minCoeff(), kPsdTolerance);
    // Constraint in the rotated basis: similar cost of the diagonal part <= 1.
    Matrix rotated = d.points() * fit.basis;
    DiagonalMetricObjective diag(rotated, prob);
    Vector dvals = (fit.basis.transpose() * fit.metric.dense() * fit.basis).diagonal();
    EXPECT_LE(diag.constraint_value(dvals), 1.0 + 1e-6);
}

namespace {

// Closed under reflecting each coordinate; labels follow (sign x1, sign x2),
// so every reflection only permutes clusters. The objective is then invariant
// under A -> D A D for sign matrices D, which makes the optimum diagonal.
Dataset reflection_symmetric(unsigned long long seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Matrix X(80, 3);
    std::vector<int> y(80);
    Eigen::Index r = 0;
    for (int b = 0; b < 10; ++b) {
        const double x1 = 3 + g(rng), x2 = 1.5 + g(rng), x3 = 0.5 * g(rng);
        for (int m = 0; m < 8; ++m) {
            const double s1 = (m & 1) ? -1 : 1, s2 = (m & 2) ? -1 : 1, s3 = (m & 4) ? -1 : 1;
            X.row(r) << s1 * x1, s2 * x2, s3 * x3;
            y[static_cast<std::size_t>(r)] = (s1 > 0 ? 0 : 1) + (s2 > 0 ? 0 : 2);
            ++r;
        }
    }
    return Dataset(X, y);
}

}  // namespace

TEST(FullMetric, AxisAlignedMatchesDiagonalSpectrum) {
    for (unsigned long long seed : {2ull, 5ull, 9ull}) {
        Dataset d = reflection_symmetric(seed);
        MetricProblem prob;
        prob.data = &d;
        for (Index i = 0; i < d.n(); ++i)
            for (Index j = i + 1; j < d.n(); ++j)
                (d.labels()[i] == d.labels()[j] ? prob.similar : prob.dissimilar).emplace_back(i, j);
        Vector diag_ev = learn_metric_diagonal(prob).eigenvalues();
        prob.kind = MetricMatrix::Kind::full;
        Vector full_ev = learn_metric_full(prob).eigenvalues();
        EXPECT_LE((full_ev - diag_ev).norm(), 0.05 * diag_ev.norm()) << "seed " << seed;
    }
}

TEST(FullMetric, UnpenalizedReducesToFullSolution) {
    Dataset d = axis_aligned(3);
    MetricProblem prob = labeled_problem(d, 150, 6);
    prob.kind = MetricMatrix::Kind::full;
    FullMetricObjective full(d.points(), prob);
    MetricFit unpen = solve_full_unpenalized(full, d.p(), SolverOptions{});
    MetricMatrix two_step = learn_metric_full(prob);
    // Same unpenalized problem: the two-step solution is at least as good, and
    // close to it.
    EXPECT_GE(full.value(two_step.dense()), unpen.objective * (1 - 1e-3));
    EXPECT_LE(full.value(two_step.dense()), unpen.objective * (1 + 5e-2));
}

TEST(FullMetric, RotationEquivariant) {
    Dataset d = axis_aligned(4);
    MetricProblem prob = labeled_problem(d, 150, 8);
    prob.kind = MetricMatrix::Kind::full;
    Eigen::MatrixXd A = learn_metric_full(prob).dense();

    std::mt19937_64 rng(10);
    std::normal_distribution<double> g;
    Eigen::MatrixXd M(5, 5);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 5; ++c) M(r, c) = g(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(M);
    Eigen::MatrixXd Q = qr.householderQ();
    Dataset rotated(d.points() * Q.transpose(), d.labels());
    MetricProblem rprob = prob;
    rprob.data = &rotated;
    Eigen::MatrixXd Ar = learn_metric_full(rprob).dense();
    EXPECT_LE((Q.transpose() * Ar * Q - A).norm() / A.norm(), 0.1);
}
