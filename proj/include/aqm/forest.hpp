#ifndef AQM_FOREST_HPP
#define AQM_FOREST_HPP

#include "aqm/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace aqm {

struct ForestConfig {
    int n_trees = 50;
    int max_depth = -1;              // -1: unbounded
    int min_leaf = 1;
    double feature_subsample = 0.0;  // fraction of p per split; 0 means sqrt(p)
    bool out_of_bag = true;          // vote with trees that did not see the instance
};

/// Axis-aligned Gini tree grown on a bootstrap sample.
class DecisionTree {
public:
    struct Node {
        int feature = -1;  // -1 marks a leaf
        double threshold = 0.0;
        int left = -1;
        int right = -1;
        int label = 0;
    };

    void fit(const Matrix& X, const std::vector<int>& y, int n_classes, std::vector<Index> sample, const ForestConfig& cfg,
             std::mt19937_64& rng) {
        nodes_.clear();
        n_classes_ = n_classes;
        const auto p = static_cast<int>(X.cols());
        mtry_ = cfg.feature_subsample > 0 ? std::max(1, static_cast<int>(std::lround(cfg.feature_subsample * p)))
                                          : std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(p)))));
        mtry_ = std::min(mtry_, p);
        build(X, y, sample, 0, sample.size(), 0, cfg, rng);
    }

    template <class Row>
    int predict(const Row& x) const {
        int k = 0;
        while (nodes_[static_cast<std::size_t>(k)].feature >= 0) {
            const Node& nd = nodes_[static_cast<std::size_t>(k)];
            k = x[nd.feature] <= nd.threshold ? nd.left : nd.right;
        }
        return nodes_[static_cast<std::size_t>(k)].label;
    }

    std::size_t size() const { return nodes_.size(); }

private:
    int make_leaf(const std::vector<int>& y, const std::vector<Index>& s, std::size_t lo, std::size_t hi) {
        std::vector<int> cnt(static_cast<std::size_t>(n_classes_), 0);
        for (std::size_t k = lo; k < hi; ++k) ++cnt[static_cast<std::size_t>(y[s[k]])];
        Node nd;
        nd.label = static_cast<int>(std::max_element(cnt.begin(), cnt.end()) - cnt.begin());
        nodes_.push_back(nd);
        return static_cast<int>(nodes_.size()) - 1;
    }

    int build(const Matrix& X, const std::vector<int>& y, std::vector<Index>& s, std::size_t lo, std::size_t hi, int depth,
              const ForestConfig& cfg, std::mt19937_64& rng) {
        const std::size_t m = hi - lo;
        bool pure = true;
        for (std::size_t k = lo + 1; k < hi && pure; ++k) pure = y[s[k]] == y[s[lo]];
        if (pure || m < static_cast<std::size_t>(2 * cfg.min_leaf) || (cfg.max_depth >= 0 && depth >= cfg.max_depth))
            return make_leaf(y, s, lo, hi);

        std::vector<int> features(static_cast<std::size_t>(X.cols()));
        std::iota(features.begin(), features.end(), 0);
        // Partial Fisher-Yates for the first mtry features.
        for (int f = 0; f < mtry_; ++f) {
            std::uniform_int_distribution<int> pick(f, static_cast<int>(features.size()) - 1);
            std::swap(features[static_cast<std::size_t>(f)], features[static_cast<std::size_t>(pick(rng))]);
        }

        std::vector<int> total(static_cast<std::size_t>(n_classes_), 0);
        for (std::size_t k = lo; k < hi; ++k) ++total[static_cast<std::size_t>(y[s[k]])];
        auto gini_sum = [](const std::vector<int>& c, double n) {
            if (n <= 0) return 0.0;
            double sq = 0.0;
            for (int v : c) sq += static_cast<double>(v) * v;
            return n - sq / n;  // n * gini
        };
        const double parent = gini_sum(total, static_cast<double>(m));

        int best_f = -1;
        double best_thr = 0.0, best_imp = parent - 1e-12;
        std::vector<std::pair<double, int>> vals(m);
        std::vector<int> left(static_cast<std::size_t>(n_classes_));
        for (int fi = 0; fi < mtry_; ++fi) {
            const int f = features[static_cast<std::size_t>(fi)];
            for (std::size_t k = 0; k < m; ++k) vals[k] = {X(static_cast<Eigen::Index>(s[lo + k]), f), y[s[lo + k]]};
            std::sort(vals.begin(), vals.end());
            if (vals.front().first == vals.back().first) continue;
            std::fill(left.begin(), left.end(), 0);
            std::vector<int> right = total;
            for (std::size_t k = 0; k + 1 < m; ++k) {
                ++left[static_cast<std::size_t>(vals[k].second)];
                --right[static_cast<std::size_t>(vals[k].second)];
                if (vals[k].first == vals[k + 1].first) continue;
                const std::size_t nl = k + 1, nr = m - nl;
                if (nl < static_cast<std::size_t>(cfg.min_leaf) || nr < static_cast<std::size_t>(cfg.min_leaf)) continue;
                double imp = gini_sum(left, static_cast<double>(nl)) + gini_sum(right, static_cast<double>(nr));
                if (imp < best_imp) {
                    best_imp = imp;
                    best_f = f;
                    best_thr = 0.5 * (vals[k].first + vals[k + 1].first);
                }
            }
        }
        if (best_f < 0) return make_leaf(y, s, lo, hi);

        auto mid_it = std::partition(s.begin() + static_cast<std::ptrdiff_t>(lo), s.begin() + static_cast<std::ptrdiff_t>(hi),
                                     [&](Index i) { return X(static_cast<Eigen::Index>(i), best_f) <= best_thr; });
        const auto mid = static_cast<std::size_t>(mid_it - s.begin());
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{best_f, best_thr, -1, -1, 0});
        int l = build(X, y, s, lo, mid, depth + 1, cfg, rng);
        int r = build(X, y, s, mid, hi, depth + 1, cfg, rng);
        nodes_[static_cast<std::size_t>(id)].left = l;
        nodes_[static_cast<std::size_t>(id)].right = r;
        return id;
    }

    std::vector<Node> nodes_;
    int n_classes_ = 0;
    int mtry_ = 1;
};

/// Bagged Gini trees; probabilities are tree-vote fractions.
class RandomForest {
public:
    void fit(const Matrix& X, const std::vector<int>& y, int n_classes, const ForestConfig& cfg, unsigned long long seed) {
        if (cfg.n_trees < 1) throw InvalidArgument("forest needs at least one tree");
        if (static_cast<Eigen::Index>(y.size()) != X.rows()) throw LengthMismatch("label count does not match rows");
        n_classes_ = n_classes;
        const Index n = y.size();
        trees_.assign(static_cast<std::size_t>(cfg.n_trees), DecisionTree{});
        in_bag_.assign(static_cast<std::size_t>(cfg.n_trees), std::vector<bool>(n, false));
        for (int t = 0; t < cfg.n_trees; ++t) {
            // Per-tree derived seed keeps trees independent of training order.
            std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<unsigned long long>(t) + 1);
            std::uniform_int_distribution<Index> pick(0, n - 1);
            std::vector<Index> sample(n);
            for (Index k = 0; k < n; ++k) {
                sample[k] = pick(rng);
                in_bag_[static_cast<std::size_t>(t)][sample[k]] = true;
            }
            trees_[static_cast<std::size_t>(t)].fit(X, y, n_classes, std::move(sample), cfg, rng);
        }
    }

    /// n x C vote fractions for the training rows. With `out_of_bag`, only
    /// trees that did not sample a row vote on it (all trees if none).
    Matrix training_votes(const Matrix& X, bool out_of_bag) const {
        Matrix V = Matrix::Zero(X.rows(), n_classes_);
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            int voters = 0;
            for (std::size_t t = 0; t < trees_.size(); ++t) {
                if (out_of_bag && in_bag_[t][static_cast<Index>(i)]) continue;
                ++V(i, trees_[t].predict(X.row(i)));
                ++voters;
            }
            if (voters == 0) {
                for (const auto& tree : trees_) ++V(i, tree.predict(X.row(i)));
                voters = static_cast<int>(trees_.size());
            }
            V.row(i) /= voters;
        }
        return V;
    }

    Matrix predict_proba(const Matrix& X) const {
        Matrix V = Matrix::Zero(X.rows(), n_classes_);
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            for (const auto& tree : trees_) ++V(i, tree.predict(X.row(i)));
            V.row(i) /= static_cast<double>(trees_.size());
        }
        return V;
    }

    std::size_t tree_count() const { return trees_.size(); }

private:
    std::vector<DecisionTree> trees_;
    std::vector<std::vector<bool>> in_bag_;
    int n_classes_ = 0;
};

}  // namespace aqm

#endif  // AQM_FOREST_HPP
