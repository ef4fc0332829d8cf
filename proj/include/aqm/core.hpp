#ifndef AQM_CORE_HPP
#define AQM_CORE_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace aqm {

using Index = std::size_t;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define AQM_DEFINE_ERROR(Name)                  \
    class Name : public Error {                 \
    public:                                     \
        using Error::Error;                     \
    }

AQM_DEFINE_ERROR(ContradictionError);
AQM_DEFINE_ERROR(IndexError);
AQM_DEFINE_ERROR(DimensionError);
AQM_DEFINE_ERROR(InvalidArgument);
AQM_DEFINE_ERROR(DegenerateProblem);
AQM_DEFINE_ERROR(EmptyHistory);
AQM_DEFINE_ERROR(InsufficientConstraints);
AQM_DEFINE_ERROR(DegenerateClustering);
AQM_DEFINE_ERROR(LengthMismatch);
AQM_DEFINE_ERROR(NoCandidates);
AQM_DEFINE_ERROR(BudgetExhausted);
AQM_DEFINE_ERROR(ParseError);
AQM_DEFINE_ERROR(IoError);

#undef AQM_DEFINE_ERROR

// ---------------------------------------------------------------------------
// Pairs
// ---------------------------------------------------------------------------

/// Unordered instance pair, canonicalized so that first < second.
struct Pair {
    Index first = 0;
    Index second = 0;

    Pair() = default;
    Pair(Index i, Index j) : first(i < j ? i : j), second(i < j ? j : i) {}

    friend bool operator==(const Pair&, const Pair&) = default;
    friend auto operator<=>(const Pair&, const Pair&) = default;
};

enum class Relation { similar, dissimilar };

inline const char* to_string(Relation r) { return r == Relation::similar ? "similar" : "dissimilar"; }

inline Relation relation_from_string(const std::string& s) {
    if (s == "similar" || s == "must-link" || s == "1") return Relation::similar;
    if (s == "dissimilar" || s == "cannot-link" || s == "0") return Relation::dissimilar;
    throw InvalidArgument("unknown relation '" + s + "'");
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// n x p feature matrix with optional ground truth. Labels are 0-based cluster
/// ids internally; file formats use 1-based ids.
class Dataset {
public:
    Dataset() = default;

    explicit Dataset(Matrix points, std::optional<std::vector<int>> labels = std::nullopt,
                     std::vector<std::string> feature_names = {})
        : points_(std::move(points)), labels_(std::move(labels)), names_(std::move(feature_names)) {
        if (points_.rows() < 2) throw InvalidArgument("dataset needs at least 2 points");
        if (points_.cols() < 1) throw InvalidArgument("dataset needs at least 1 feature");
        if (!points_.allFinite()) throw InvalidArgument("dataset contains non-finite values");
        if (labels_) {
            if (labels_->size() != n()) throw LengthMismatch("label count does not match point count");
            for (int l : *labels_)
                if (l < 0) throw InvalidArgument("labels must be nonnegative cluster ids");
        }
        if (names_.empty()) {
            names_.reserve(p());
            for (Index m = 0; m < p(); ++m) names_.push_back("x" + std::to_string(m + 1));
        } else if (names_.size() != p()) {
            throw LengthMismatch("feature name count does not match feature count");
        }
    }

    Index n() const { return static_cast<Index>(points_.rows()); }
    Index p() const { return static_cast<Index>(points_.cols()); }

    const Matrix& points() const { return points_; }
    auto row(Index i) const { return points_.row(static_cast<Eigen::Index>(i)); }

    bool has_labels() const { return labels_.has_value(); }
    const std::vector<int>& labels() const {
        if (!labels_) throw InvalidArgument("dataset has no ground-truth labels");
        return *labels_;
    }
    const std::vector<std::string>& feature_names() const { return names_; }

    /// Number of distinct label values (max id + 1).
    int label_count() const {
        int k = 0;
        for (int l : labels()) k = std::max(k, l + 1);
        return k;
    }

    /// Copy with points replaced (e.g. rotated coordinates); labels kept.
    Dataset with_points(Matrix pts) const { return Dataset(std::move(pts), labels_, {}); }

private:
    Matrix points_;
    std::optional<std::vector<int>> labels_;
    std::vector<std::string> names_;
};

// ---------------------------------------------------------------------------
// Metric matrix
// ---------------------------------------------------------------------------

inline constexpr double kPsdTolerance = -1e-8;

/// Positive semi-definite matrix defining ||x - y||_A. Stored either as the
/// diagonal vector or as a dense symmetric matrix.
class MetricMatrix {
public:
    enum class Kind { diagonal, full };

    static MetricMatrix identity(Index p) { return diagonal(Vector::Ones(static_cast<Eigen::Index>(p))); }

    static MetricMatrix diagonal(Vector a) {
        if (!a.allFinite()) throw InvalidArgument("metric has non-finite entries");
        if (a.size() > 0 && a.minCoeff() < kPsdTolerance) throw InvalidArgument("diagonal metric has negative entries");
        MetricMatrix m;
        m.kind_ = Kind::diagonal;
        m.diag_ = a.cwiseMax(0.0);
        return m;
    }

    static MetricMatrix full(Eigen::MatrixXd a) {
        if (a.rows() != a.cols()) throw DimensionError("metric matrix must be square");
        if (!a.allFinite()) throw InvalidArgument("metric has non-finite entries");
        Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
        double scale = std::max(1.0, sym.cwiseAbs().maxCoeff());
        if (es.eigenvalues().minCoeff() < kPsdTolerance * scale)
            throw InvalidArgument("metric matrix is not positive semi-definite");
        MetricMatrix m;
        m.kind_ = Kind::full;
        m.full_ = std::move(sym);
        return m;
    }

    Kind kind() const { return kind_; }
    bool is_diagonal() const { return kind_ == Kind::diagonal; }
    Index p() const { return static_cast<Index>(is_diagonal() ? diag_.size() : full_.rows()); }

    const Vector& diagonal_values() const { return diag_; }

    Eigen::MatrixXd dense() const {
        if (is_diagonal()) return diag_.asDiagonal();
        return full_;
    }

    /// Eigenvalues in ascending order.
    Vector eigenvalues() const {
        if (is_diagonal()) {
            Vector v = diag_;
            std::sort(v.data(), v.data() + v.size());
            return v;
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(full_, Eigen::EigenvaluesOnly);
        return es.eigenvalues();
    }

    /// Per-feature weights: the diagonal of A.
    Vector feature_weights() const { return is_diagonal() ? diag_ : Vector(full_.diagonal()); }

    template <class Derived>
    double squared_norm(const Eigen::MatrixBase<Derived>& d) const {
        if (is_diagonal()) {
            double s = 0.0;
            for (Eigen::Index m = 0; m < d.size(); ++m) s += diag_[m] * d.derived().coeff(m) * d.derived().coeff(m);
            return s;
        }
        Eigen::VectorXd v = d.transpose();
        return v.dot(full_ * v);
    }

    MetricMatrix scaled(double s) const {
        MetricMatrix m = *this;
        m.diag_ *= s;
        m.full_ *= s;
        return m;
    }

private:
    Kind kind_ = Kind::diagonal;
    Vector diag_;
    Eigen::MatrixXd full_;
};

/// sqrt((x - y)^T A (x - y)).
template <class DX, class DY>
double mahalanobis_distance(const MetricMatrix& a, const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) {
    if (x.size() != y.size() || static_cast<Index>(x.size()) != a.p())
        throw DimensionError("point dimensions do not match metric");
    Eigen::RowVectorXd d(x.size());
    for (Eigen::Index m = 0; m < x.size(); ++m) d[m] = x.derived().coeff(m) - y.derived().coeff(m);
    return std::sqrt(std::max(0.0, a.squared_norm(d)));
}

// ---------------------------------------------------------------------------
// Clustering result
// ---------------------------------------------------------------------------

struct ClusterAssignment {
    std::vector<int> labels;  // 0-based cluster ids
    Matrix centers;           // K x p
    int K = 0;
    int iterations = 0;
    int empty_cluster_repairs = 0;  // EmptyClusterWarning count
    std::vector<double> objective_trace;
};

}  // namespace aqm

#endif  // AQM_CORE_HPP
