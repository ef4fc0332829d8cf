#include "aqm/constraints.hpp"
#include "aqm/core.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace aqm;

namespace {

std::vector<Pair> pairs(std::initializer_list<std::pair<Index, Index>> l) {
    std::vector<Pair> out;
    for (auto [i, j] : l) out.emplace_back(i, j);
    return out;
}

}  // namespace

TEST(Pair, Canonical) {
    Pair a(5, 2);
    EXPECT_EQ(a.first, 2u);
    EXPECT_EQ(a.second, 5u);
    EXPECT_EQ(a, Pair(2, 5));
}

TEST(Dataset, Invariants) {
    EXPECT_THROW(Dataset(Matrix::Zero(1, 2)), InvalidArgument);
    EXPECT_THROW(Dataset(Matrix::Zero(3, 0)), InvalidArgument);
    Matrix bad = Matrix::Zero(3, 2);
    bad(1, 1) = std::nan("");
    EXPECT_THROW(Dataset{bad}, InvalidArgument);
    EXPECT_THROW(Dataset(Matrix::Zero(3, 2), std::vector<int>{0, 1}), LengthMismatch);
    Dataset d(Matrix::Zero(3, 2), std::vector<int>{0, 2, 1});
    EXPECT_EQ(d.label_count(), 3);
    EXPECT_EQ(d.feature_names()[1], "x2");
    Dataset u(Matrix::Zero(3, 2));
    EXPECT_FALSE(u.has_labels());
    EXPECT_THROW(u.labels(), InvalidArgument);
}

// 1-based pair ids in the examples map to 0-based indices here.
TEST(AddConstraint, SinglePair) {
    ConstraintStore s = add_constraint(ConstraintStore(4), 0, 1, Relation::similar);
    EXPECT_EQ(s.similar_pairs(), pairs({{0, 1}}));
    EXPECT_TRUE(s.dissimilar_pairs().empty());
}

TEST(AddConstraint, DissimilarPropagatesThroughSimilar) {
    ConstraintStore s(4);
    s.add(0, 1, Relation::similar);
    s.add(0, 2, Relation::similar);
    EXPECT_EQ(s.add(1, 3, Relation::dissimilar), 3u);
    EXPECT_EQ(s.dissimilar_pairs(), pairs({{0, 3}, {1, 3}, {2, 3}}));
    EXPECT_EQ(s.similar_pairs(), pairs({{0, 1}, {0, 2}, {1, 2}}));
}

TEST(AddConstraint, Contradiction) {
    ConstraintStore s(3);
    s.add(0, 1, Relation::similar);
    EXPECT_THROW(s.add(0, 1, Relation::dissimilar), ContradictionError);
    s.add(1, 2, Relation::dissimilar);
    EXPECT_THROW(s.add(0, 2, Relation::similar), ContradictionError);
    // state survives the failed additions
    EXPECT_EQ(s.similar_count(), 1u);
    EXPECT_EQ(s.dissimilar_count(), 2u);
}

TEST(AddConstraint, Errors) {
    ConstraintStore s(3);
    EXPECT_THROW(s.add(0, 3, Relation::similar), IndexError);
    EXPECT_THROW(s.add(1, 1, Relation::similar), InvalidArgument);
}

TEST(AddConstraint, Idempotent) {
    ConstraintStore s(5);
    s.add(0, 1, Relation::similar);
    s.add(1, 2, Relation::similar);
    s.add(2, 3, Relation::dissimilar);
    ConstraintStore before = s;
    EXPECT_EQ(s.add(0, 2, Relation::similar), 0u);
    EXPECT_EQ(s.add(0, 3, Relation::dissimilar), 0u);
    EXPECT_EQ(s, before);
}

TEST(AddConstraint, MatchesBruteForceClosure) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const Index n = 2 + rng() % 7;
        const int k = 1 + static_cast<int>(rng() % 4);
        std::vector<int> truth(n);
        for (auto& t : truth) t = static_cast<int>(rng() % static_cast<unsigned>(k));
        std::vector<std::tuple<Index, Index, Relation>> cons;
        ConstraintStore s(n);
        const int m = static_cast<int>(rng() % (n * (n - 1) / 2 + 1));
        for (int c = 0; c < m; ++c) {
            Index i = rng() % n, j = rng() % n;
            if (i == j) continue;
            Relation r = truth[i] == truth[j] ? Relation::similar : Relation::dissimilar;
            cons.emplace_back(i, j, r);
            s.add(i, j, r);
        }
        auto ref = oracle::brute_closure(n, cons);
        std::size_t ns = 0, nd = 0;
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j) {
                if (i == j) continue;
                auto rel = s.relation(i, j);
                int got = !rel ? 0 : (*rel == Relation::similar ? 1 : 2);
                ASSERT_EQ(got, ref[i][j]) << "trial " << trial << " pair " << i << "," << j;
                if (i < j && got == 1) ++ns;
                if (i < j && got == 2) ++nd;
            }
        EXPECT_EQ(s.similar_count(), ns);
        EXPECT_EQ(s.dissimilar_count(), nd);
        EXPECT_EQ(s.similar_pairs().size(), ns);
        EXPECT_EQ(s.dissimilar_pairs().size(), nd);
    }
}

TEST(Neighborhoods, ToConstraints) {
    auto s = constraints_from_neighborhoods(NeighborhoodState::from_sets(3, {{0, 1}, {2}}));
    EXPECT_EQ(s.similar_pairs(), pairs({{0, 1}}));
    EXPECT_EQ(s.dissimilar_pairs(), pairs({{0, 2}, {1, 2}}));

    auto one = constraints_from_neighborhoods(NeighborhoodState::from_sets(3, {{0}}));
    EXPECT_EQ(one.labeled_count(), 0u);

    auto all = constraints_from_neighborhoods(NeighborhoodState::from_sets(3, {{0, 1, 2}}));
    EXPECT_EQ(all.similar_pairs(), pairs({{0, 1}, {0, 2}, {1, 2}}));
    EXPECT_TRUE(all.dissimilar_pairs().empty());
}

TEST(Neighborhoods, OrderInvariant) {
    auto a = constraints_from_neighborhoods(NeighborhoodState::from_sets(7, {{0, 4}, {2}, {5, 1, 6}}));
    auto b = constraints_from_neighborhoods(NeighborhoodState::from_sets(7, {{6, 5, 1}, {4, 0}, {2}}));
    EXPECT_EQ(a, b);
}

TEST(Neighborhoods, StateRules) {
    NeighborhoodState s(4);
    int m = s.create(2);
    EXPECT_THROW(s.create(2), InvalidArgument);
    EXPECT_THROW(s.join(1, 5), IndexError);
    s.join(0, m);
    EXPECT_EQ(s.members(m), (std::vector<Index>{0, 2}));
    EXPECT_EQ(s.covered(), 2u);
    EXPECT_EQ(s.outside(), (std::vector<Index>{1, 3}));
    EXPECT_THROW(NeighborhoodState::from_sets(3, {{}}), InvalidArgument);
}

TEST(Mahalanobis, Examples) {
    Eigen::Vector2d o(0, 0), y(3, 4);
    EXPECT_DOUBLE_EQ(mahalanobis_distance(MetricMatrix::identity(2), o, y), 5.0);
    Vector d0(2);
    d0 << 0, 1;
    EXPECT_DOUBLE_EQ(mahalanobis_distance(MetricMatrix::diagonal(d0), Eigen::Vector2d(7, 1), Eigen::Vector2d(0, 1)), 0.0);
    Vector d1(2);
    d1 << 4, 1;
    EXPECT_DOUBLE_EQ(mahalanobis_distance(MetricMatrix::diagonal(d1), Eigen::Vector2d(1, 1), o), std::sqrt(5.0));
    EXPECT_THROW(mahalanobis_distance(MetricMatrix::identity(3), o, y), DimensionError);
}

TEST(Mahalanobis, SymmetricAndTriangle) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    for (int t = 0; t < 500; ++t) {
        Eigen::MatrixXd M(4, 4);
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) M(r, c) = g(rng);
        MetricMatrix A = MetricMatrix::full(M.transpose() * M);
        Eigen::Vector4d x, y, z;
        for (int r = 0; r < 4; ++r) {
            x[r] = g(rng);
            y[r] = g(rng);
            z[r] = g(rng);
        }
        double xy = mahalanobis_distance(A, x, y), yx = mahalanobis_distance(A, y, x);
        EXPECT_NEAR(xy, yx, 1e-12);
        EXPECT_EQ(mahalanobis_distance(A, x, x), 0.0);
        EXPECT_LE(mahalanobis_distance(A, x, z), xy + mahalanobis_distance(A, y, z) + 1e-9);
    }
}

TEST(MetricMatrix, Validation) {
    Vector neg(2);
    neg << 1, -1;
    EXPECT_THROW(MetricMatrix::diagonal(neg), InvalidArgument);
    Eigen::MatrixXd indefinite(2, 2);
    indefinite << 1, 2, 2, 1;
    EXPECT_THROW(MetricMatrix::full(indefinite), InvalidArgument);
    EXPECT_THROW(MetricMatrix::full(Eigen::MatrixXd::Identity(2, 3)), DimensionError);
    Vector d(3);
    d << 5, 1, 3;
    Vector ev = MetricMatrix::diagonal(d).eigenvalues();
    EXPECT_EQ(ev[0], 1);
    EXPECT_EQ(ev[2], 5);
}
