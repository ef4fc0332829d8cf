#ifndef AQM_SESSION_HPP
#define AQM_SESSION_HPP

#include "aqm/active_query.hpp"
#include "aqm/aggregation.hpp"
#include "aqm/augmentation.hpp"
#include "aqm/clustering.hpp"
#include "aqm/constraints.hpp"
#include "aqm/datagen.hpp"
#include "aqm/forest.hpp"
#include "aqm/metric_learning.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace aqm {

enum class Strategy { mee, npu, random, two_step };

inline const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::mee: return "mee";
        case Strategy::npu: return "npu";
        case Strategy::random: return "random";
        case Strategy::two_step: return "two-step";
    }
    return "mee";
}

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "mee") return Strategy::mee;
    if (s == "npu") return Strategy::npu;
    if (s == "random") return Strategy::random;
    if (s == "two-step" || s == "two_step") return Strategy::two_step;
    throw InvalidArgument("unknown strategy '" + s + "'");
}

/// splitmix64 finalizer; derives independent stream seeds from one seed.
inline unsigned long long derive_seed(unsigned long long seed, unsigned long long a, unsigned long long b = 0) {
    unsigned long long z = seed + 0x9E3779B97F4A7C15ULL * (a + 1) + 0xBF58476D1CE4E5B9ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

struct RunConfig {
    std::optional<SimSetting> setting;  // synthetic data, or
    std::string dataset;                // a CSV path
    int K = 0;                          // 0: from the setting or the label count
    int budget = 60;
    Strategy strategy = Strategy::mee;
    std::optional<double> lambda = 0.5;  // empty: 5-fold CV on lambda_grid each loop
    std::vector<double> lambda_grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::optional<double> gamma;         // empty: Calinski-Harabasz search on gamma_grid
    std::vector<double> gamma_grid{0.0, 0.1, 0.3, 1.0, 3.0, 10.0};
    std::optional<int> q;                // empty: elbow rule
    bool augment = true;
    MetricMatrix::Kind metric_kind = MetricMatrix::Kind::diagonal;
    ForestConfig forest;
    AdmmConfig admm;
    SolverOptions solver;
    unsigned long long seed = 0;
    int reps = 1;
    std::vector<int> checkpoints;  // query counts at which the full pipeline is evaluated

    void validate() const {
        if (budget < 1) throw InvalidArgument("budget must be at least 1");
        if (reps < 1) throw InvalidArgument("reps must be at least 1");
        if (!lambda && lambda_grid.empty()) throw InvalidArgument("lambda grid is empty");
        if (!gamma && gamma_grid.empty()) throw InvalidArgument("gamma grid is empty");
        if (forest.n_trees < 1) throw InvalidArgument("forest needs at least one tree");
    }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json::object();
    if (c.setting) j["setting"] = *c.setting;
    if (!c.dataset.empty()) j["dataset"] = c.dataset;
    j["K"] = c.K;
    j["budget"] = c.budget;
    j["strategy"] = to_string(c.strategy);
    j["lambda"] = c.lambda ? nlohmann::json(*c.lambda) : nlohmann::json("auto");
    j["lambda_grid"] = c.lambda_grid;
    j["gamma"] = c.gamma ? nlohmann::json(*c.gamma) : nlohmann::json("auto");
    j["gamma_grid"] = c.gamma_grid;
    j["q"] = c.q ? nlohmann::json(*c.q) : nlohmann::json("auto");
    j["augment"] = c.augment;
    j["metric"] = c.metric_kind == MetricMatrix::Kind::diagonal ? "diagonal" : "full";
    j["forest"] = {{"n_trees", c.forest.n_trees},
                   {"max_depth", c.forest.max_depth},
                   {"min_leaf", c.forest.min_leaf},
                   {"feature_subsample", c.forest.feature_subsample},
                   {"out_of_bag", c.forest.out_of_bag}};
    j["admm"] = {{"rho", c.admm.rho}, {"max_iters", c.admm.max_iters}, {"tol", c.admm.tol}};
    j["solver"] = {{"max_iters", c.solver.max_iters}, {"step_tol", c.solver.step_tol}};
    j["seed"] = c.seed;
    j["reps"] = c.reps;
    j["checkpoints"] = c.checkpoints;
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
    if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
    auto auto_or = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        const auto& v = j.at(key);
        if (v.is_string() && v.get<std::string>() == "auto") field.reset();
        else field = v.get<typename std::remove_reference_t<decltype(field)>::value_type>();
    };
    if (j.contains("setting")) c.setting = j.at("setting").get<SimSetting>();
    c.dataset = j.value("dataset", c.dataset);
    c.K = j.value("K", c.K);
    c.budget = j.value("budget", c.budget);
    if (j.contains("strategy")) c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    auto_or("lambda", c.lambda);
    c.lambda_grid = j.value("lambda_grid", c.lambda_grid);
    auto_or("gamma", c.gamma);
    c.gamma_grid = j.value("gamma_grid", c.gamma_grid);
    auto_or("q", c.q);
    c.augment = j.value("augment", c.augment);
    if (j.contains("metric")) {
        auto m = j.at("metric").get<std::string>();
        if (m == "diagonal") c.metric_kind = MetricMatrix::Kind::diagonal;
        else if (m == "full") c.metric_kind = MetricMatrix::Kind::full;
        else throw InvalidArgument("metric must be 'diagonal' or 'full'");
    }
    if (j.contains("forest")) {
        const auto& f = j.at("forest");
        c.forest.n_trees = f.value("n_trees", c.forest.n_trees);
        c.forest.max_depth = f.value("max_depth", c.forest.max_depth);
        c.forest.min_leaf = f.value("min_leaf", c.forest.min_leaf);
        c.forest.feature_subsample = f.value("feature_subsample", c.forest.feature_subsample);
        c.forest.out_of_bag = f.value("out_of_bag", c.forest.out_of_bag);
    }
    if (j.contains("admm")) {
        const auto& a = j.at("admm");
        c.admm.rho = a.value("rho", c.admm.rho);
        c.admm.max_iters = a.value("max_iters", c.admm.max_iters);
        c.admm.tol = a.value("tol", c.admm.tol);
    }
    if (j.contains("solver")) {
        const auto& s = j.at("solver");
        c.solver.max_iters = s.value("max_iters", c.solver.max_iters);
        c.solver.step_tol = s.value("step_tol", c.solver.step_tol);
    }
    c.seed = j.value("seed", c.seed);
    c.reps = j.value("reps", c.reps);
    c.checkpoints = j.value("checkpoints", c.checkpoints);
}

/// Loads the configured dataset: a generated setting or a CSV file.
inline Dataset load_dataset(const RunConfig& cfg) {
    if (cfg.setting) return generate(*cfg.setting);
    if (cfg.dataset.empty()) throw InvalidArgument("config names neither a setting nor a dataset");
    return load_csv(cfg.dataset);
}

inline int resolve_K(const RunConfig& cfg, const Dataset& data) {
    if (cfg.K > 0) return cfg.K;
    if (cfg.setting) return cfg.setting->K;
    if (data.has_labels()) return data.label_count();
    throw InvalidArgument("K is required when the dataset has no labels");
}

// ---------------------------------------------------------------------------
// Trajectory records
// ---------------------------------------------------------------------------

struct StepRecord {
    int t = 0;
    int queries_spent = 0;
    std::size_t n_similar = 0;
    std::size_t n_dissimilar = 0;
    int L = 0;
    std::optional<double> ari;  // clustering that drove this loop's selection
    double eig_max = 0.0;
    double eig_min = 0.0;
    double eig_sum = 0.0;
};

struct Evaluation {
    int n_queries = 0;
    Aggregate result;
    std::optional<double> ari;
};

struct RunTrajectory {
    std::vector<StepRecord> steps;
    std::vector<Evaluation> checkpoints;
    Evaluation final;
    std::vector<QueryRecord> queries;
    Vector feature_weights;  // diagonal of the final metric
};

/// Pending oracle question.
struct Question {
    Pair pair;
    std::optional<Index> target;  // instance being resolved (neighborhood strategies)
    int neighborhood = -1;        // neighborhood probed, -1 in pair mode
};

struct AnswerResult {
    bool accepted = true;
    std::size_t implied = 0;
    int joined = -1;
    int created = -1;
    bool loop_completed = false;
};

/// One run of the active clustering loop. Strategies mee, npu and random
/// resolve one instance per loop against neighborhood representatives and
/// update the metric when the loop ends; two-step asks a fixed pair plan and
/// learns its metric only at evaluation.
class ActiveSession {
public:
    ActiveSession(std::shared_ptr<const Dataset> data, RunConfig cfg)
        : data_(std::move(data)), cfg_(std::move(cfg)), store_(data_->n()), state_(data_->n()) {
        cfg_.validate();
        K_ = resolve_K(cfg_, *data_);
        if (K_ < 2) throw InvalidArgument("K must be at least 2");
        if (static_cast<Index>(K_) > data_->n()) throw InvalidArgument("K exceeds the number of points");
        metric_ = MetricMatrix::identity(data_->p());
        rng_.seed(derive_seed(cfg_.seed, 1));
        if (cfg_.strategy == Strategy::two_step) {
            const Index n = data_->n();
            std::size_t T = std::min<std::size_t>(static_cast<std::size_t>(cfg_.budget), n * (n - 1) / 2);
            plan_ = two_step_plan(*data_, K_, T, cfg_.forest, derive_seed(cfg_.seed, 2));
        } else {
            std::uniform_int_distribution<Index> pick(0, data_->n() - 1);
            state_.create(pick(rng_));
        }
    }

    const Dataset& data() const { return *data_; }
    const RunConfig& config() const { return cfg_; }
    int K() const { return K_; }
    int budget() const { return cfg_.budget; }
    int spent() const { return static_cast<int>(queries_.size()); }
    int loops() const { return t_; }
    const ConstraintStore& store() const { return store_; }
    const NeighborhoodState& neighborhoods() const { return state_; }
    const MetricMatrix& metric() const { return metric_; }
    const MetricHistory& history() const { return history_; }
    const std::vector<QueryRecord>& queries() const { return queries_; }
    const std::vector<StepRecord>& steps() const { return steps_; }
    const std::vector<Evaluation>& checkpoint_results() const { return checkpoints_; }

    bool budget_exhausted() const { return spent() >= cfg_.budget; }

    /// True when no further question can be asked.
    bool finished() {
        if (budget_exhausted()) return true;
        return !next_question().has_value();
    }

    /// The pending question, selecting a new target when none is pending.
    /// Empty when the budget is spent or no candidate remains.
    std::optional<Question> next_question() {
        if (budget_exhausted()) return std::nullopt;
        if (cfg_.strategy == Strategy::two_step) {
            if (static_cast<std::size_t>(spent()) >= plan_.size()) return std::nullopt;
            return Question{plan_[static_cast<std::size_t>(spent())], std::nullopt, -1};
        }
        if (!pending_ && !start_loop()) return std::nullopt;
        return Question{pending_->pair(), pending_->target, pending_->probed()};
    }

    /// Records the oracle's answer to the pending question. Throws
    /// ContradictionError (state unchanged) on a conflicting answer,
    /// BudgetExhausted when no budget remains, InvalidArgument if `pair` is
    /// not the pending question.
    AnswerResult answer(const Pair& pair, Relation rel) {
        if (budget_exhausted()) throw BudgetExhausted("query budget exhausted");
        auto q = next_question();
        if (!q) throw NoCandidates("no question is pending");
        if (!(q->pair == pair)) throw InvalidArgument("answer does not match the pending question");
        AnswerResult res;
        if (cfg_.strategy == Strategy::two_step) {
            auto known = store_.relation(pair.first, pair.second);
            if (known && *known != rel) throw ContradictionError("answer contradicts an implied constraint");
            res.implied = store_.add(pair.first, pair.second, rel);
            queries_.push_back({pair, rel});
        } else {
            StepOutcome o = apply_answer(*pending_, rel, state_, store_);
            queries_.push_back({pair, rel});
            res.implied = o.implied;
            res.joined = o.joined;
            res.created = o.created;
            if (o.resolved || budget_exhausted()) {
                finish_loop();
                res.loop_completed = true;
            }
        }
        if (std::find(cfg_.checkpoints.begin(), cfg_.checkpoints.end(), spent()) != cfg_.checkpoints.end())
            checkpoints_.push_back(evaluate());
        return res;
    }

    /// Metric aggregation and constrained clustering on the current state.
    /// Does not modify the session.
    Evaluation evaluate() const {
        MetricHistory history = history_;
        AugmentedConstraints aug = last_aug_;
        if (cfg_.strategy == Strategy::two_step || aug_stamp_ != store_.labeled_count()) {
            aug = augmentation(derive_seed(cfg_.seed, 5, static_cast<unsigned long long>(spent())));
            if (cfg_.strategy == Strategy::two_step) {
                history = MetricHistory{};
                MetricMatrix A = learn(aug, nullptr).value_or(MetricMatrix::identity(data_->p()));
                history.push(A);
            }
        }
        MetricProblem base = problem(aug);
        AggregateOptions opt;
        opt.q = cfg_.q;
        opt.gamma_grid = cfg_.gamma ? std::vector<double>{*cfg_.gamma} : cfg_.gamma_grid;
        opt.solver = cfg_.solver;
        opt.pckmeans.K = K_;
        Evaluation ev;
        ev.n_queries = spent();
        ev.result = aggregate_and_cluster(base, store_, history, opt, derive_seed(cfg_.seed, 6));
        if (data_->has_labels()) ev.ari = adjusted_rand_index(ev.result.assignment.labels, data_->labels());
        return ev;
    }

    nlohmann::json state_json() const {
        nlohmann::json j;
        j["budget"] = cfg_.budget;
        j["spent"] = spent();
        j["loops"] = t_;
        j["strategy"] = to_string(cfg_.strategy);
        j["K"] = K_;
        j["n_similar"] = store_.similar_count();
        j["n_dissimilar"] = store_.dissimilar_count();
        j["neighborhoods"] = state_.sets();
        Vector w = metric_.feature_weights();
        j["feature_weights"] = std::vector<double>(w.data(), w.data() + w.size());
        nlohmann::json qs = nlohmann::json::array();
        for (const auto& q : queries_) qs.push_back({{"pair", {q.pair.first, q.pair.second}}, {"relation", to_string(q.answer)}});
        j["queries"] = qs;
        return j;
    }

private:
    MetricProblem problem(const AugmentedConstraints& aug) const {
        MetricProblem prob;
        prob.data = data_.get();
        prob.similar = store_.similar_pairs();
        prob.dissimilar = store_.dissimilar_pairs();
        prob.aug = aug;
        prob.kind = cfg_.metric_kind;
        return prob;
    }

    AugmentedConstraints augmentation(unsigned long long seed) const {
        if (!cfg_.augment || store_.labeled_count() == 0) return {};
        AdmmConfig admm = cfg_.admm;
        if (cfg_.lambda) {
            admm.lambda = *cfg_.lambda;
        } else {
            try {
                admm.lambda = tune_lambda(*data_, store_, K_, cfg_.lambda_grid, cfg_.admm, seed);
            } catch (const InsufficientConstraints&) {
                admm.lambda = AdmmConfig{}.lambda;
            }
        }
        std::vector<int> ids(data_->n(), -1);
        for (Index i = 0; i < data_->n(); ++i) {
            int m = state_.membership(i);
            if (m >= 0 && m < K_) ids[i] = m;
        }
        FuzzyMembership fm = fit_fuzzy_membership(*data_, store_, K_, admm, seed, &ids);
        return augment_constraints(fm, K_);
    }

    /// Unpenalized metric from the current constraints; empty if there is no
    /// dissimilar information to learn from.
    std::optional<MetricMatrix> learn(const AugmentedConstraints& aug, const MetricMatrix* warm) const {
        MetricProblem prob = problem(aug);
        SolverOptions opt = cfg_.solver;
        if (warm && warm->is_diagonal() && prob.kind == MetricMatrix::Kind::diagonal) opt.initial = warm->diagonal_values();
        try {
            return learn_metric_fit(prob, opt).metric;
        } catch (const DegenerateProblem&) {
            return std::nullopt;
        }
    }

    bool start_loop() {
        if (state_.covered() >= data_->n()) return false;
        const unsigned long long s = derive_seed(cfg_.seed, 3, static_cast<unsigned long long>(t_));
        StepRecord rec;
        MembershipProbabilities R;
        const int L = state_.count();
        if (L == 1) {
            R.R = Matrix::Ones(static_cast<Eigen::Index>(data_->n()), 1);
        } else {
            PckmeansConfig pc;
            pc.K = K_;
            ClusterAssignment ca = pckmeans(*data_, metric_, store_, pc, s);
            if (data_->has_labels()) rec.ari = adjusted_rand_index(ca.labels, data_->labels());
            R = fit_membership_model(*data_, state_, metric_, ca.labels, K_, cfg_.forest, s);
        }
        Index target = 0;
        switch (cfg_.strategy) {
            case Strategy::mee: target = mee_select(R, store_, state_); break;
            case Strategy::npu: target = npu_select(R, state_); break;
            case Strategy::random: {
                auto out = state_.outside();
                std::uniform_int_distribution<std::size_t> pick(0, out.size() - 1);
                target = out[pick(rng_)];
                break;
            }
            case Strategy::two_step: return false;
        }
        Matrix Y = metric_coordinates(data_->points(), metric_);
        Resolution res;
        res.target = target;
        res.order = probe_order(R, target);
        for (int m = 0; m < L; ++m) res.representatives.push_back(neighborhood_medoid(Y, state_.members(m)));
        pending_ = std::move(res);
        pending_record_ = rec;
        return true;
    }

    void finish_loop() {
        ++t_;
        const unsigned long long s = derive_seed(cfg_.seed, 4, static_cast<unsigned long long>(t_));
        last_aug_ = augmentation(s);
        aug_stamp_ = store_.labeled_count();
        if (auto A = learn(last_aug_, &metric_)) metric_ = *A;
        history_.push(metric_);
        StepRecord rec = pending_record_;
        rec.t = t_;
        rec.queries_spent = spent();
        rec.n_similar = store_.similar_count();
        rec.n_dissimilar = store_.dissimilar_count();
        rec.L = state_.count();
        Vector ev = metric_.eigenvalues();
        rec.eig_min = ev[0];
        rec.eig_max = ev[ev.size() - 1];
        rec.eig_sum = ev.sum();
        steps_.push_back(rec);
        pending_.reset();
    }

    std::shared_ptr<const Dataset> data_;
    RunConfig cfg_;
    int K_ = 0;
    ConstraintStore store_;
    NeighborhoodState state_;
    MetricMatrix metric_;
    MetricHistory history_;
    AugmentedConstraints last_aug_;
    std::size_t aug_stamp_ = 0;
    std::vector<QueryRecord> queries_;
    std::vector<StepRecord> steps_;
    std::vector<Evaluation> checkpoints_;
    std::vector<Pair> plan_;
    std::optional<Resolution> pending_;
    StepRecord pending_record_;
    std::mt19937_64 rng_;
    int t_ = 0;
};

/// Runs the full loop against `oracle`, then aggregates and clusters.
inline RunTrajectory run_session(const RunConfig& cfg, std::shared_ptr<const Dataset> data, const Oracle& oracle,
                                 ActiveSession** keep = nullptr) {
    auto session = std::make_unique<ActiveSession>(std::move(data), cfg);
    while (auto q = session->next_question()) session->answer(q->pair, oracle(q->pair));
    RunTrajectory tr;
    tr.steps = session->steps();
    tr.checkpoints = session->checkpoint_results();
    tr.queries = session->queries();
    // A checkpoint at the final count already holds the final evaluation.
    if (!tr.checkpoints.empty() && tr.checkpoints.back().n_queries == session->spent())
        tr.final = tr.checkpoints.back();
    else
        tr.final = session->evaluate();
    tr.feature_weights = tr.final.result.metric.feature_weights();
    if (keep) *keep = session.release();
    return tr;
}

inline RunTrajectory run_session(const RunConfig& cfg, const Oracle* oracle = nullptr) {
    auto data = std::make_shared<const Dataset>(load_dataset(cfg));
    Oracle o = oracle ? *oracle : label_oracle(*data);
    return run_session(cfg, data, o);
}

inline nlohmann::json to_json(const Evaluation& e) {
    nlohmann::json j;
    j["n_queries"] = e.n_queries;
    j["ari"] = e.ari ? nlohmann::json(*e.ari) : nlohmann::json(nullptr);
    j["gamma"] = e.result.gamma;
    j["q"] = e.result.q;
    j["penalty_set"] = e.result.penalty_set;
    j["ch"] = std::isfinite(e.result.ch) ? nlohmann::json(e.result.ch) : nlohmann::json(nullptr);
    std::vector<int> labels = e.result.assignment.labels;
    for (int& l : labels) ++l;
    j["labels"] = labels;
    Vector w = e.result.metric.feature_weights();
    j["feature_weights"] = std::vector<double>(w.data(), w.data() + w.size());
    return j;
}

inline nlohmann::json to_json(const RunTrajectory& tr) {
    nlohmann::json j;
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : tr.steps)
        steps.push_back({{"t", s.t},
                         {"queries_spent", s.queries_spent},
                         {"n_similar", s.n_similar},
                         {"n_dissimilar", s.n_dissimilar},
                         {"L", s.L},
                         {"ari", s.ari ? nlohmann::json(*s.ari) : nlohmann::json(nullptr)},
                         {"eig_max", s.eig_max},
                         {"eig_min", s.eig_min},
                         {"eig_sum", s.eig_sum}});
    j["steps"] = steps;
    nlohmann::json cps = nlohmann::json::array();
    for (const auto& c : tr.checkpoints) cps.push_back(to_json(c));
    j["checkpoints"] = cps;
    j["final"] = to_json(tr.final);
    nlohmann::json qs = nlohmann::json::array();
    for (const auto& q : tr.queries) qs.push_back({{"pair", {q.pair.first, q.pair.second}}, {"relation", to_string(q.answer)}});
    j["queries"] = qs;
    return j;
}

}  // namespace aqm

#endif  // AQM_SESSION_HPP
