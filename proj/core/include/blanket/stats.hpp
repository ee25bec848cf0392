#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "blanket/graph.hpp"
#include "blanket/seed.hpp"

namespace blanket {

class StatsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// n x m sample matrix whose columns are labelled by node index.
class DataMatrix {
public:
    DataMatrix() = default;
    DataMatrix(Eigen::MatrixXd values, std::vector<NodeId> column_ids);

    [[nodiscard]] const Eigen::MatrixXd& values() const noexcept { return values_; }
    [[nodiscard]] const std::vector<NodeId>& column_ids() const noexcept { return column_ids_; }
    [[nodiscard]] Eigen::Index rows() const noexcept { return values_.rows(); }
    [[nodiscard]] Eigen::Index cols() const noexcept { return values_.cols(); }

    /// Position of a node's column; throws if absent.
    [[nodiscard]] Eigen::Index position(NodeId id) const;
    [[nodiscard]] Eigen::VectorXd column(NodeId id) const { return values_.col(position(id)); }
    [[nodiscard]] DataMatrix select_columns(std::span<const NodeId> ids) const;
    [[nodiscard]] DataMatrix select_rows(std::span<const Eigen::Index> rows) const;

private:
    Eigen::MatrixXd values_;
    std::vector<NodeId> column_ids_;
    std::vector<Eigen::Index> lookup_;  // node id -> column position, -1 if absent
};

// ---- conditional independence ----------------------------------------------

struct CiResult {
    double statistic = 0.0;  // Fisher z
    double p_value = 1.0;
    bool independent = true;
};

/// Correlation of the residuals of columns i and j after least-squares
/// regression (with intercept) on the columns in s.
double partial_correlation(const DataMatrix& data, NodeId i, NodeId j, const NodeSet& s);

/// z = atanh(r) * sqrt(n - cond_size - 3), two-sided normal p-value.
CiResult fisher_z_test(double r, std::size_t n, std::size_t cond_size, double alpha);

/// Two-sided standard-normal tail probability P(|Z| >= |z|).
double normal_two_sided_p(double z);

/// Partial correlations from the inverse of the sample correlation
/// submatrix. Agrees with partial_correlation() on the same data and is the
/// route the discovery algorithms use.
class CorrelationCache {
public:
    explicit CorrelationCache(const DataMatrix& data);

    [[nodiscard]] std::size_t sample_count() const noexcept { return n_; }
    [[nodiscard]] double correlation(NodeId i, NodeId j) const;
    [[nodiscard]] double partial_correlation(NodeId i, NodeId j, std::span<const NodeId> s) const;

private:
    [[nodiscard]] Eigen::Index pos(NodeId id) const;

    std::size_t n_;
    Eigen::MatrixXd corr_;
    std::vector<Eigen::Index> lookup_;
};

// ---- regression -------------------------------------------------------------

enum class Regressor { ols, ridge, lasso };

std::string_view to_string(Regressor r) noexcept;
Regressor parse_regressor(std::string_view tag);
inline constexpr Regressor kAllRegressors[] = {Regressor::ols, Regressor::ridge, Regressor::lasso};

/// 13 log-spaced penalties spanning 1e-4 .. 1e1.
std::vector<double> default_lambda_grid();

struct FitSettings {
    /// Fixed penalty. When unset, ridge and lasso pick one by cross-validation.
    std::optional<double> lambda;
    std::vector<double> lambda_grid = default_lambda_grid();
    std::size_t cv_folds = 5;
    bool fit_intercept = true;
    double lasso_tolerance = 1e-7;
    std::size_t lasso_max_sweeps = 10000;
};

struct FitResult {
    Regressor regressor = Regressor::ols;
    Eigen::VectorXd coefficients;
    double intercept = 0.0;
    double hyperparameter = 0.0;  // penalty; 0 for OLS
};

void to_json(nlohmann::json& j, const FitResult& fit);

/// Fits on x (n x m) against y. Features are standardized and y centered
/// internally; coefficients are reported on the original scale.
/// Penalties follow the 1/(2n) squared-loss convention:
///   ridge: (1/2n)|y - Xb|^2 + (lambda/2)|b|^2
///   lasso: (1/2n)|y - Xb|^2 + lambda |b|_1
FitResult fit(Regressor regressor, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
              const FitSettings& settings = {});

Eigen::VectorXd predict(const FitResult& fit, const Eigen::MatrixXd& x);

class LassoConvergenceError : public StatsError {
public:
    LassoConvergenceError(std::size_t sweeps, double last_change);
    [[nodiscard]] std::size_t sweeps() const noexcept { return sweeps_; }

private:
    std::size_t sweeps_;
};

struct LassoState {
    Eigen::VectorXd coefficients;
    std::size_t sweeps = 0;
};

/// Cyclic coordinate descent with soft-thresholding on a standardized,
/// centered problem given by gram = Z'Z/n and xty = Z'y/n. If `objective`
/// is non-null, the objective (up to the constant |y|^2/2n) after every
/// sweep is appended.
LassoState lasso_coordinate_descent(const Eigen::MatrixXd& gram, const Eigen::VectorXd& xty, double lambda,
                                    Eigen::VectorXd warm_start, double tolerance, std::size_t max_sweeps,
                                    std::vector<double>* objective = nullptr);

double soft_threshold(double value, double threshold) noexcept;

/// Plain least squares on an explicit design. Throws StatsError when the
/// design is rank deficient. R^2 uses the centered total sum of squares.
struct LinearModel {
    Eigen::VectorXd coefficients;
    double r2 = 0.0;
    double r2_adjusted = 0.0;
};
LinearModel least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& response, bool has_intercept);

// ---- evaluation plumbing ----------------------------------------------------

struct RowSplit {
    std::vector<Eigen::Index> train;
    std::vector<Eigen::Index> test;
};

/// Seeded permutation split; test gets round(n * test_fraction) rows.
RowSplit split_rows(Eigen::Index n, double test_fraction, Seed seed);
std::pair<DataMatrix, DataMatrix> split(const DataMatrix& data, double test_fraction, Seed seed);

double rmse(const Eigen::VectorXd& predicted, const Eigen::VectorXd& actual);

// ---- finite-sample risk law for OLS ----------------------------------------

/// sigma^2 p / (n - p - 1): expected excess risk of OLS on a sufficient
/// subset of size p under the linear Gaussian working model.
double ols_excess_risk(std::size_t p, std::size_t n, double sigma);

/// Exact full-vs-boundary excess-risk gap.
double ols_gap_exact(std::size_t feature_count, std::size_t boundary_size, std::size_t n, double sigma);

/// Leading term sigma^2 (F - k) / n.
double ols_gap_leading(std::size_t feature_count, std::size_t boundary_size, std::size_t n, double sigma);

}  // namespace blanket
