#ifndef AQM_CONSTRAINTS_HPP
#define AQM_CONSTRAINTS_HPP

#include "aqm/core.hpp"

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace aqm {

/// Must-link / cannot-link bookkeeping, always closed under transitivity:
/// similar o similar => similar, similar o dissimilar => dissimilar.
///
/// Must-link components live in a union-find; cannot-link is a relation
/// between component roots. The pair sets are therefore implicit and
/// enumerated on demand.
class ConstraintStore {
public:
    ConstraintStore() = default;
    explicit ConstraintStore(Index n) : parent_(n), size_(n, 1), members_(n), cannot_(n) {
        for (Index i = 0; i < n; ++i) {
            parent_[i] = i;
            members_[i] = {i};
        }
    }

    Index n() const { return parent_.size(); }

    Index root(Index i) const {
        while (parent_[i] != i) i = parent_[i];
        return i;
    }

    std::optional<Relation> relation(Index i, Index j) const {
        check_index(i);
        check_index(j);
        if (i == j) return std::nullopt;
        Index ri = root(i), rj = root(j);
        if (ri == rj) return Relation::similar;
        if (cannot_[ri].count(rj)) return Relation::dissimilar;
        return std::nullopt;
    }

    bool is_labeled(Index i, Index j) const { return relation(i, j).has_value(); }

    /// True when instance i takes part in at least one (possibly implied) constraint.
    bool is_constrained(Index i) const {
        Index r = root(i);
        return size_[r] > 1 || !cannot_[r].empty();
    }

    /// Adds a constraint in place. Returns the number of newly implied pairs
    /// (0 when the relation was already implied).
    std::size_t add(Index i, Index j, Relation rel) {
        check_index(i);
        check_index(j);
        if (i == j) throw InvalidArgument("cannot constrain an instance with itself");
        Index ri = root(i), rj = root(j);
        if (rel == Relation::similar) {
            if (ri == rj) return 0;
            if (cannot_[ri].count(rj))
                throw ContradictionError("similar(" + std::to_string(i) + "," + std::to_string(j) +
                                         ") contradicts an implied dissimilar relation");
            return merge(ri, rj);
        }
        if (ri == rj)
            throw ContradictionError("dissimilar(" + std::to_string(i) + "," + std::to_string(j) +
                                     ") contradicts an implied similar relation");
        if (cannot_[ri].count(rj)) return 0;
        cannot_[ri].insert(rj);
        cannot_[rj].insert(ri);
        std::size_t added = size_[ri] * size_[rj];
        n_dissimilar_ += added;
        return added;
    }

    std::size_t similar_count() const { return n_similar_; }
    std::size_t dissimilar_count() const { return n_dissimilar_; }
    std::size_t labeled_count() const { return n_similar_ + n_dissimilar_; }

    /// Members of the must-link component containing i (sorted).
    const std::vector<Index>& component(Index i) const { return members_[root(i)]; }

    /// Roots of components that are cannot-linked to the component of i.
    const std::set<Index>& cannot_linked_roots(Index i) const { return cannot_[root(i)]; }

    std::vector<Pair> similar_pairs() const {
        std::vector<Pair> out;
        out.reserve(n_similar_);
        for (Index r = 0; r < n(); ++r) {
            if (parent_[r] != r) continue;
            const auto& m = members_[r];
            for (std::size_t a = 0; a < m.size(); ++a)
                for (std::size_t b = a + 1; b < m.size(); ++b) out.emplace_back(m[a], m[b]);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    std::vector<Pair> dissimilar_pairs() const {
        std::vector<Pair> out;
        out.reserve(n_dissimilar_);
        for (Index r = 0; r < n(); ++r) {
            if (parent_[r] != r) continue;
            for (Index s : cannot_[r]) {
                if (s < r) continue;
                for (Index a : members_[r])
                    for (Index b : members_[s]) out.emplace_back(a, b);
            }
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    /// Every labeled pair with its relation, sorted by pair.
    std::vector<std::pair<Pair, Relation>> labeled_pairs() const {
        std::vector<std::pair<Pair, Relation>> out;
        for (const Pair& pr : similar_pairs()) out.emplace_back(pr, Relation::similar);
        for (const Pair& pr : dissimilar_pairs()) out.emplace_back(pr, Relation::dissimilar);
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        return out;
    }

    friend bool operator==(const ConstraintStore& a, const ConstraintStore& b) {
        return a.n() == b.n() && a.similar_pairs() == b.similar_pairs() && a.dissimilar_pairs() == b.dissimilar_pairs();
    }

private:
    void check_index(Index i) const {
        if (i >= n()) throw IndexError("instance index " + std::to_string(i) + " out of range (n=" + std::to_string(n()) + ")");
    }

    std::size_t merge(Index ri, Index rj) {
        if (size_[ri] < size_[rj]) std::swap(ri, rj);
        std::size_t added = size_[ri] * size_[rj];
        n_similar_ += added;
        // Cannot-links of the absorbed component now apply to the whole merged one.
        for (Index s : cannot_[rj]) {
            cannot_[s].erase(rj);
            if (!cannot_[ri].count(s)) {
                n_dissimilar_ += size_[ri] * size_[s];
                cannot_[ri].insert(s);
                cannot_[s].insert(ri);
            }
        }
        for (Index s : cannot_[ri]) {
            if (cannot_[rj].count(s)) continue;
            n_dissimilar_ += size_[rj] * size_[s];
        }
        cannot_[rj].clear();
        parent_[rj] = ri;
        size_[ri] += size_[rj];
        auto& dst = members_[ri];
        std::vector<Index> merged;
        merged.reserve(dst.size() + members_[rj].size());
        std::merge(dst.begin(), dst.end(), members_[rj].begin(), members_[rj].end(), std::back_inserter(merged));
        dst = std::move(merged);
        members_[rj].clear();
        members_[rj].shrink_to_fit();
        return added;
    }

    std::vector<Index> parent_;
    std::vector<std::size_t> size_;
    std::vector<std::vector<Index>> members_;
    std::vector<std::set<Index>> cannot_;
    std::size_t n_similar_ = 0;
    std::size_t n_dissimilar_ = 0;
};

/// Value-returning form of ConstraintStore::add.
inline ConstraintStore add_constraint(ConstraintStore store, Index i, Index j, Relation rel) {
    store.add(i, j, rel);
    return store;
}

/// Disjoint sets of instances known to lie in distinct clusters.
class NeighborhoodState {
public:
    NeighborhoodState() = default;
    explicit NeighborhoodState(Index n) : membership_(n, -1) {}

    static NeighborhoodState from_sets(Index n, const std::vector<std::vector<Index>>& sets) {
        NeighborhoodState s(n);
        for (const auto& set : sets) {
            if (set.empty()) throw InvalidArgument("neighborhoods must be nonempty");
            int id = s.create(set.front());
            for (std::size_t k = 1; k < set.size(); ++k) s.join(set[k], id);
        }
        return s;
    }

    Index n() const { return membership_.size(); }
    int count() const { return static_cast<int>(sets_.size()); }
    const std::vector<std::vector<Index>>& sets() const { return sets_; }
    const std::vector<Index>& members(int m) const { return sets_.at(static_cast<std::size_t>(m)); }

    /// Neighborhood id of instance i, or -1.
    int membership(Index i) const { return membership_.at(i); }
    bool contains(Index i) const { return membership(i) >= 0; }

    Index covered() const {
        Index c = 0;
        for (const auto& s : sets_) c += s.size();
        return c;
    }

    std::vector<Index> outside() const {
        std::vector<Index> out;
        for (Index i = 0; i < n(); ++i)
            if (membership_[i] < 0) out.push_back(i);
        return out;
    }

    int create(Index i) {
        check_free(i);
        sets_.push_back({i});
        membership_[i] = count() - 1;
        return count() - 1;
    }

    void join(Index i, int m) {
        check_free(i);
        if (m < 0 || m >= count()) throw IndexError("neighborhood id out of range");
        auto& s = sets_[static_cast<std::size_t>(m)];
        s.insert(std::upper_bound(s.begin(), s.end(), i), i);
        membership_[i] = m;
    }

private:
    void check_free(Index i) const {
        if (i >= n()) throw IndexError("instance index out of range");
        if (membership_[i] >= 0) throw InvalidArgument("instance already belongs to a neighborhood");
    }

    std::vector<std::vector<Index>> sets_;
    std::vector<int> membership_;
};

/// Within-neighborhood pairs similar, cross-neighborhood pairs dissimilar.
inline ConstraintStore constraints_from_neighborhoods(const NeighborhoodState& state) {
    ConstraintStore store(state.n());
    const auto& sets = state.sets();
    for (const auto& s : sets)
        for (std::size_t k = 1; k < s.size(); ++k) store.add(s.front(), s[k], Relation::similar);
    for (std::size_t a = 0; a < sets.size(); ++a)
        for (std::size_t b = a + 1; b < sets.size(); ++b) store.add(sets[a].front(), sets[b].front(), Relation::dissimilar);
    return store;
}

}  // namespace aqm

#endif  // AQM_CONSTRAINTS_HPP
