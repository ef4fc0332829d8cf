#ifndef AQM_DATAGEN_HPP
#define AQM_DATAGEN_HPP

#include "aqm/core.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace aqm {

/// Synthetic setting. Cluster membership is carried by the first p1
/// features; the next p2 features are label-independent.
struct SimSetting {
    enum class Kind { basic, signflip, sphere };
    Kind kind = Kind::basic;
    int p1 = 6;
    int p2 = 3;
    double c = 5.0;  // center offset (basic, signflip, and the irrelevant block of sphere)
    double r = 5.0;  // sphere radius
    int n = 60;
    int K = 6;
    unsigned long long seed = 0;
    bool balanced = false;  // exact cluster sizes instead of i.i.d. uniform labels

    void validate() const {
        if (p1 < 1 || p2 < 0 || n < 2) throw InvalidArgument("setting needs p1 >= 1, p2 >= 0, n >= 2");
        if (kind == Kind::sphere) {
            if (K < 2 || p1 < 2) throw InvalidArgument("sphere setting needs K >= 2 and p1 >= 2");
        } else if (K != p1) {
            throw InvalidArgument("basic and signflip settings need K == p1");
        }
    }
};

inline const char* to_string(SimSetting::Kind k) {
    switch (k) {
        case SimSetting::Kind::basic: return "basic";
        case SimSetting::Kind::signflip: return "signflip";
        case SimSetting::Kind::sphere: return "sphere";
    }
    return "basic";
}

inline SimSetting::Kind sim_kind_from_string(const std::string& s) {
    if (s == "basic") return SimSetting::Kind::basic;
    if (s == "signflip") return SimSetting::Kind::signflip;
    if (s == "sphere") return SimSetting::Kind::sphere;
    throw InvalidArgument("unknown setting '" + s + "'");
}

inline void to_json(nlohmann::json& j, const SimSetting& s) {
    j = {{"name", to_string(s.kind)}, {"p1", s.p1}, {"p2", s.p2}, {"c", s.c},       {"r", s.r},
         {"n", s.n},                  {"K", s.K},   {"seed", s.seed}, {"balanced", s.balanced}};
}

inline void from_json(const nlohmann::json& j, SimSetting& s) {
    s.kind = sim_kind_from_string(j.value("name", std::string("basic")));
    s.p1 = j.value("p1", s.p1);
    s.p2 = j.value("p2", s.p2);
    s.c = j.value("c", s.c);
    s.r = j.value("r", s.r);
    s.n = j.value("n", s.n);
    s.K = j.value("K", s.K);
    s.seed = j.value("seed", s.seed);
    s.balanced = j.value("balanced", s.balanced);
}

namespace detail {

inline std::vector<int> draw_labels(int n, int K, bool balanced, std::mt19937_64& rng) {
    std::vector<int> z(static_cast<std::size_t>(n));
    if (balanced) {
        for (int i = 0; i < n; ++i) z[static_cast<std::size_t>(i)] = i % K;
        std::shuffle(z.begin(), z.end(), rng);
    } else {
        std::uniform_int_distribution<int> u(0, K - 1);
        for (auto& v : z) v = u(rng);
    }
    return z;
}

// Irrelevant block: offset +-c (or +c) on one uniformly chosen coordinate.
inline void fill_irrelevant(Matrix& X, int p1, int p2, double c, bool signflip, std::mt19937_64& rng) {
    if (p2 == 0) return;
    std::uniform_int_distribution<int> u(0, p2 - 1);
    std::bernoulli_distribution coin(0.5);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        int z2 = u(rng);
        double sign = signflip && coin(rng) ? -1.0 : 1.0;
        X(i, p1 + z2) += sign * c;
    }
}

inline Matrix standard_normal(int n, int p, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix X(n, p);
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        for (Eigen::Index m = 0; m < X.cols(); ++m) X(i, m) = g(rng);
    return X;
}

inline Dataset axis_setting(const SimSetting& s, bool signflip) {
    s.validate();
    std::mt19937_64 rng(s.seed);
    std::vector<int> z = draw_labels(s.n, s.p1, s.balanced, rng);
    Matrix X = standard_normal(s.n, s.p1 + s.p2, rng);
    for (int i = 0; i < s.n; ++i) X(i, z[static_cast<std::size_t>(i)]) += s.c;
    fill_irrelevant(X, s.p1, s.p2, s.c, signflip, rng);
    return Dataset(std::move(X), std::move(z));
}

}  // namespace detail

/// Gaussian clusters at c * e_z in the relevant block; the irrelevant block
/// has its own independent uniform offset.
inline Dataset gen_basic(const SimSetting& s) { return detail::axis_setting(s, false); }

/// As gen_basic, with the irrelevant offset's sign flipped at random.
inline Dataset gen_signflip(const SimSetting& s) { return detail::axis_setting(s, true); }

/// Random centers on the radius-r sphere of the relevant block.
inline Matrix sphere_centers(int K, int p1, double r, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix C(K, p1);
    for (int k = 0; k < K; ++k) {
        for (;;) {
            Eigen::RowVectorXd v(p1);
            for (int m = 0; m < p1; ++m) v[m] = g(rng);
            double nv = v.norm();
            if (nv < 1e-12) continue;
            v *= r / nv;
            bool degenerate = false;
            for (int j = 0; j < k && !degenerate; ++j) degenerate = (C.row(j) - v).norm() < 1e-6;
            if (degenerate) continue;
            C.row(k) = v;
            break;
        }
    }
    return C;
}

inline Dataset gen_sphere(const SimSetting& s, Matrix* centers_out = nullptr) {
    s.validate();
    std::mt19937_64 rng(s.seed);
    Matrix C = sphere_centers(s.K, s.p1, s.r, rng);
    std::vector<int> z = detail::draw_labels(s.n, s.K, s.balanced, rng);
    Matrix X = detail::standard_normal(s.n, s.p1 + s.p2, rng);
    for (int i = 0; i < s.n; ++i) X.row(i).head(s.p1) += C.row(z[static_cast<std::size_t>(i)]);
    detail::fill_irrelevant(X, s.p1, s.p2, s.c, true, rng);
    if (centers_out) *centers_out = C;
    return Dataset(std::move(X), std::move(z));
}

inline Dataset generate(const SimSetting& s) {
    switch (s.kind) {
        case SimSetting::Kind::basic: return gen_basic(s);
        case SimSetting::Kind::signflip: return gen_signflip(s);
        case SimSetting::Kind::sphere: return gen_sphere(s);
    }
    throw InvalidArgument("unknown setting");
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Shortest round-trip decimal form with '.' radix regardless of locale.
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        std::size_t pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

}  // namespace detail

/// Parses a comma-separated dataset. The header names the features; a final
/// column named "label" holds 1-based ground-truth cluster ids.
inline Dataset parse_csv(std::istream& in, const std::string& source = "<stream>") {
    std::string line;
    if (!std::getline(in, line)) throw ParseError(source + ": missing header row");
    std::vector<std::string> names;
    for (auto f : detail::split_commas(line)) names.emplace_back(detail::trim(f));
    const bool has_label = !names.empty() && names.back() == "label";
    if (has_label) names.pop_back();
    const std::size_t p = names.size();
    if (p == 0) throw ParseError(source + ": header defines no features");

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (detail::trim(line).empty()) continue;
        auto fields = detail::split_commas(line);
        if (fields.size() != p + (has_label ? 1 : 0))
            throw ParseError(source + ": line " + std::to_string(row) + ": expected " +
                             std::to_string(p + (has_label ? 1 : 0)) + " fields, found " + std::to_string(fields.size()));
        for (std::size_t m = 0; m < p; ++m) {
            auto f = detail::trim(fields[m]);
            if (!f.empty() && f.front() == '+') f.remove_prefix(1);
            double v = 0.0;
            auto res = std::from_chars(f.data(), f.data() + f.size(), v);
            if (f.empty() || res.ec != std::errc() || res.ptr != f.data() + f.size() || !std::isfinite(v))
                throw ParseError(source + ": line " + std::to_string(row) + ": bad number '" + std::string(f) + "'");
            values.push_back(v);
        }
        if (has_label) {
            auto f = detail::trim(fields[p]);
            int l = 0;
            auto res = std::from_chars(f.data(), f.data() + f.size(), l);
            if (f.empty() || res.ec != std::errc() || res.ptr != f.data() + f.size() || l < 1)
                throw ParseError(source + ": line " + std::to_string(row) + ": bad label '" + std::string(f) + "'");
            labels.push_back(l - 1);
        }
    }
    const std::size_t n = values.size() / p;
    if (n < 2) throw ParseError(source + ": need at least 2 data rows");
    Matrix X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t m = 0; m < p; ++m) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)) = values[i * p + m];
    std::optional<std::vector<int>> lab;
    if (has_label) lab = std::move(labels);
    return Dataset(std::move(X), std::move(lab), std::move(names));
}

inline Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    return parse_csv(in, path);
}

inline void write_csv(std::ostream& out, const Dataset& data) {
    const auto& names = data.feature_names();
    for (std::size_t m = 0; m < names.size(); ++m) out << (m ? "," : "") << names[m];
    if (data.has_labels()) out << ",label";
    out << '\n';
    for (Index i = 0; i < data.n(); ++i) {
        for (Index m = 0; m < data.p(); ++m)
            out << (m ? "," : "") << format_double(data.points()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)));
        if (data.has_labels()) out << ',' << data.labels()[i] + 1;
        out << '\n';
    }
}

inline void save_dataset_csv(const std::string& path, const Dataset& data) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    write_csv(out, data);
    if (!out) throw IoError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct ResultRecord {
    std::string setting;
    std::string strategy;
    int n_queries = 0;
    int rep = 0;
    unsigned long long seed = 0;
    std::optional<double> ari;              // empty for a failed run
    std::optional<double> runtime_seconds;  // empty unless timing was requested
};

inline void write_results(std::ostream& out, const std::vector<ResultRecord>& records) {
    out << "setting,strategy,n_queries,rep,seed,ari,runtime_seconds\n";
    for (const auto& r : records) {
        out << r.setting << ',' << r.strategy << ',' << r.n_queries << ',' << r.rep << ',' << r.seed << ','
            << (r.ari ? format_double(*r.ari) : "NA") << ','
            << (r.runtime_seconds ? format_double(*r.runtime_seconds) : "NA") << '\n';
    }
}

/// Writes the records and a `<path>.json` sidecar holding `metadata`.
inline void save_results(const std::string& path, const std::vector<ResultRecord>& records,
                         const nlohmann::json& metadata = nlohmann::json::object()) {
    {
        std::ofstream out(path);
        if (!out) throw IoError("cannot write '" + path + "'");
        write_results(out, records);
        if (!out) throw IoError("write failed for '" + path + "'");
    }
    std::ofstream meta(path + ".json");
    if (!meta) throw IoError("cannot write '" + path + ".json'");
    meta << metadata.dump(2) << '\n';
}

}  // namespace aqm

#endif  // AQM_DATAGEN_HPP
