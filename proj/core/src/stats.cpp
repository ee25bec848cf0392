#include "blanket/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

namespace blanket {

// ---- DataMatrix -------------------------------------------------------------

DataMatrix::DataMatrix(Eigen::MatrixXd values, std::vector<NodeId> column_ids)
    : values_(std::move(values)), column_ids_(std::move(column_ids)) {
    if (static_cast<std::size_t>(values_.cols()) != column_ids_.size())
        throw StatsError("DataMatrix: column id count does not match the matrix width");
    if (!values_.allFinite()) throw StatsError("DataMatrix: non-finite entry");
    NodeId max_id = 0;
    for (NodeId id : column_ids_) max_id = std::max(max_id, id);
    lookup_.assign(column_ids_.empty() ? 0 : max_id + 1, -1);
    for (std::size_t c = 0; c < column_ids_.size(); ++c) {
        if (lookup_[column_ids_[c]] != -1) throw StatsError("DataMatrix: duplicate column id " + std::to_string(column_ids_[c]));
        lookup_[column_ids_[c]] = static_cast<Eigen::Index>(c);
    }
}

Eigen::Index DataMatrix::position(NodeId id) const {
    if (id >= lookup_.size() || lookup_[id] < 0) throw StatsError("DataMatrix: no column for node " + std::to_string(id));
    return lookup_[id];
}

DataMatrix DataMatrix::select_columns(std::span<const NodeId> ids) const {
    Eigen::MatrixXd out(values_.rows(), static_cast<Eigen::Index>(ids.size()));
    for (std::size_t c = 0; c < ids.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = values_.col(position(ids[c]));
    return DataMatrix(std::move(out), std::vector<NodeId>(ids.begin(), ids.end()));
}

DataMatrix DataMatrix::select_rows(std::span<const Eigen::Index> rows) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), values_.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = values_.row(rows[r]);
    return DataMatrix(std::move(out), column_ids_);
}

// ---- conditional independence ----------------------------------------------

double partial_correlation(const DataMatrix& data, NodeId i, NodeId j, const NodeSet& s) {
    if (i == j) throw StatsError("partial_correlation: i and j must differ");
    if (s.contains(i) || s.contains(j)) throw StatsError("partial_correlation: i and j must not be in the conditioning set");
    const Eigen::Index n = data.rows();
    const auto k = static_cast<Eigen::Index>(s.size());
    if (n <= k + 3) throw StatsError("partial_correlation: need more than |s| + 3 samples");

    Eigen::MatrixXd design(n, k + 1);
    design.col(0).setOnes();
    for (Eigen::Index c = 0; c < k; ++c) design.col(c + 1) = data.values().col(data.position(s.members()[c]));

    Eigen::MatrixXd targets(n, 2);
    targets.col(0) = data.values().col(data.position(i));
    targets.col(1) = data.values().col(data.position(j));

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < k + 1) {
        std::ostringstream msg;
        msg << "partial_correlation: singular conditioning design; collinear columns:";
        for (Eigen::Index c = qr.rank(); c < k + 1; ++c) {
            const Eigen::Index col = qr.colsPermutation().indices()(c);
            if (col == 0)
                msg << " intercept";
            else
                msg << ' ' << s.members()[col - 1];
        }
        throw StatsError(msg.str());
    }
    const Eigen::MatrixXd resid = targets - design * qr.solve(targets);
    const double sxx = resid.col(0).squaredNorm();
    const double syy = resid.col(1).squaredNorm();
    if (sxx <= 0.0 || syy <= 0.0) throw StatsError("partial_correlation: zero residual variance");
    return std::clamp(resid.col(0).dot(resid.col(1)) / std::sqrt(sxx * syy), -1.0, 1.0);
}

double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

CiResult fisher_z_test(double r, std::size_t n, std::size_t cond_size, double alpha) {
    if (n <= cond_size + 3) throw StatsError("fisher_z_test: need n - cond_size - 3 > 0");
    if (!std::isfinite(r)) throw StatsError("fisher_z_test: non-finite correlation");
    if (std::abs(r) >= 1.0) {
        const double inf = std::numeric_limits<double>::infinity();
        return {r > 0 ? inf : -inf, 0.0, false};
    }
    const double z = std::atanh(r) * std::sqrt(static_cast<double>(n - cond_size - 3));
    const double p = std::clamp(normal_two_sided_p(z), 0.0, 1.0);
    return {z, p, p >= alpha};
}

CorrelationCache::CorrelationCache(const DataMatrix& data) : n_(static_cast<std::size_t>(data.rows())) {
    if (data.rows() < 2) throw StatsError("CorrelationCache: need at least two rows");
    const Eigen::MatrixXd centered = data.values().rowwise() - data.values().colwise().mean();
    Eigen::MatrixXd cov = centered.transpose() * centered;
    const Eigen::VectorXd sd = cov.diagonal().cwiseSqrt();
    for (Eigen::Index c = 0; c < sd.size(); ++c)
        if (sd(c) <= 0.0) throw StatsError("CorrelationCache: constant column for node " + std::to_string(data.column_ids()[c]));
    corr_ = sd.cwiseInverse().asDiagonal() * cov * sd.cwiseInverse().asDiagonal();
    NodeId max_id = 0;
    for (NodeId id : data.column_ids()) max_id = std::max(max_id, id);
    lookup_.assign(max_id + 1, -1);
    for (std::size_t c = 0; c < data.column_ids().size(); ++c) lookup_[data.column_ids()[c]] = static_cast<Eigen::Index>(c);
}

Eigen::Index CorrelationCache::pos(NodeId id) const {
    if (id >= lookup_.size() || lookup_[id] < 0) throw StatsError("CorrelationCache: no column for node " + std::to_string(id));
    return lookup_[id];
}

double CorrelationCache::correlation(NodeId i, NodeId j) const { return corr_(pos(i), pos(j)); }

double CorrelationCache::partial_correlation(NodeId i, NodeId j, std::span<const NodeId> s) const {
    if (s.empty()) return correlation(i, j);
    const auto m = static_cast<Eigen::Index>(s.size() + 2);
    std::vector<Eigen::Index> idx{pos(i), pos(j)};
    for (NodeId v : s) idx.push_back(pos(v));
    Eigen::MatrixXd sub(m, m);
    for (Eigen::Index a = 0; a < m; ++a)
        for (Eigen::Index b = 0; b < m; ++b) sub(a, b) = corr_(idx[a], idx[b]);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(sub);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 1e-12 * ldlt.vectorD().maxCoeff())
        throw StatsError("CorrelationCache: singular conditioning set");
    // Only the leading 2x2 block of the precision matrix is needed.
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(m, 2);
    rhs(0, 0) = 1.0;
    rhs(1, 1) = 1.0;
    const Eigen::MatrixXd prec = ldlt.solve(rhs);
    const double r = -prec(1, 0) / std::sqrt(prec(0, 0) * prec(1, 1));
    return std::clamp(r, -1.0, 1.0);
}

// ---- regression -------------------------------------------------------------

std::string_view to_string(Regressor r) noexcept {
    switch (r) {
        case Regressor::ols: return "ols";
        case Regressor::ridge: return "ridge";
        case Regressor::lasso: return "lasso";
    }
    return "unknown";
}

Regressor parse_regressor(std::string_view tag) {
    for (Regressor r : kAllRegressors)
        if (to_string(r) == tag) return r;
    throw StatsError("unknown regressor tag '" + std::string(tag) + "'");
}

std::vector<double> default_lambda_grid() {
    std::vector<double> grid(13);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = std::pow(10.0, -4.0 + 5.0 * static_cast<double>(i) / 12.0);
    return grid;
}

void to_json(nlohmann::json& j, const FitResult& fit) {
    j = nlohmann::json{{"regressor", to_string(fit.regressor)},
                       {"coefficients", std::vector<double>(fit.coefficients.begin(), fit.coefficients.end())},
                       {"intercept", fit.intercept},
                       {"hyperparameter", fit.hyperparameter}};
}

double soft_threshold(double value, double threshold) noexcept {
    if (value > threshold) return value - threshold;
    if (value < -threshold) return value + threshold;
    return 0.0;
}

LassoConvergenceError::LassoConvergenceError(std::size_t sweeps, double last_change)
    : StatsError("lasso: no convergence after " + std::to_string(sweeps) + " sweeps (last max change " +
                 std::to_string(last_change) + ")"),
      sweeps_(sweeps) {}

LassoState lasso_coordinate_descent(const Eigen::MatrixXd& gram, const Eigen::VectorXd& xty, double lambda,
                                    Eigen::VectorXd warm_start, double tolerance, std::size_t max_sweeps,
                                    std::vector<double>* objective) {
    const Eigen::Index p = xty.size();
    Eigen::VectorXd beta = warm_start.size() == p ? std::move(warm_start) : Eigen::VectorXd::Zero(p);
    Eigen::VectorXd g = gram * beta;  // gram * beta, maintained incrementally
    auto current_objective = [&] { return 0.5 * beta.dot(g) - xty.dot(beta) + lambda * beta.lpNorm<1>(); };

    for (std::size_t sweep = 1; sweep <= max_sweeps; ++sweep) {
        double max_change = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            const double gjj = gram(j, j);
            if (gjj <= 0.0) continue;
            const double z = xty(j) - g(j) + gjj * beta(j);
            const double updated = soft_threshold(z, lambda) / gjj;
            const double delta = updated - beta(j);
            if (delta != 0.0) {
                g += gram.col(j) * delta;
                beta(j) = updated;
                max_change = std::max(max_change, std::abs(delta));
            }
        }
        if (objective) objective->push_back(current_objective());
        if (max_change < tolerance) return {std::move(beta), sweep};
        if (sweep == max_sweeps) throw LassoConvergenceError(sweep, max_change);
    }
    return {std::move(beta), 0};
}

namespace {

/// Standardized copy of a design plus the affine maps needed to report
/// coefficients on the original scale.
struct Standardized {
    Eigen::MatrixXd z;
    Eigen::VectorXd y;
    Eigen::RowVectorXd x_mean;
    Eigen::VectorXd x_scale;  // 0 for constant columns
    double y_mean = 0.0;
};

Standardized standardize(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, bool center) {
    Standardized s;
    const auto n = static_cast<double>(x.rows());
    s.x_mean = center ? Eigen::RowVectorXd(x.colwise().mean()) : Eigen::RowVectorXd::Zero(x.cols());
    s.y_mean = center ? y.mean() : 0.0;
    s.z = x.rowwise() - s.x_mean;
    s.y = y.array() - s.y_mean;
    s.x_scale.resize(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        const double scale = std::sqrt(s.z.col(c).squaredNorm() / n);
        s.x_scale(c) = scale > 1e-12 ? scale : 0.0;
        if (s.x_scale(c) > 0.0)
            s.z.col(c) /= scale;
        else
            s.z.col(c).setZero();
    }
    return s;
}

FitResult unstandardize(Regressor r, const Standardized& s, const Eigen::VectorXd& beta, double hyper) {
    FitResult out;
    out.regressor = r;
    out.hyperparameter = hyper;
    out.coefficients = Eigen::VectorXd::Zero(beta.size());
    for (Eigen::Index c = 0; c < beta.size(); ++c)
        if (s.x_scale(c) > 0.0) out.coefficients(c) = beta(c) / s.x_scale(c);
    out.intercept = s.y_mean - s.x_mean.dot(out.coefficients);
    return out;
}

Eigen::VectorXd ols_solve(const Eigen::MatrixXd& z, const Eigen::VectorXd& y) {
    if (z.cols() == 0) return {};
    const Eigen::MatrixXd gram = z.transpose() * z;
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() == Eigen::Success && llt.rcond() > 1e-12) return llt.solve(z.transpose() * y);
    // Pseudo-inverse: singular values below 1e-10 of the largest count as zero.
    Eigen::BDCSVD<Eigen::MatrixXd> svd(z, Eigen::ComputeThinU | Eigen::ComputeThinV);
    svd.setThreshold(1e-10);
    return svd.solve(y);
}

/// Ridge solutions for every penalty from one eigendecomposition of Z'Z/n.
std::vector<Eigen::VectorXd> ridge_path(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                                        std::span<const double> lambdas) {
    const double n = static_cast<double>(z.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(z.transpose() * z / n);
    const Eigen::VectorXd rotated = eig.eigenvectors().transpose() * (z.transpose() * y / n);
    std::vector<Eigen::VectorXd> out;
    out.reserve(lambdas.size());
    for (double lambda : lambdas) {
        const Eigen::VectorXd shrunk =
            rotated.array() / (eig.eigenvalues().array().max(0.0) + lambda);
        out.push_back(eig.eigenvectors() * shrunk);
    }
    return out;
}

Eigen::VectorXd ridge_solve(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, double lambda) {
    if (z.cols() == 0) return {};
    const double n = static_cast<double>(z.rows());
    Eigen::MatrixXd system = z.transpose() * z / n;
    system.diagonal().array() += lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(system);
    if (llt.info() == Eigen::Success && llt.rcond() > 1e-12) return llt.solve(z.transpose() * y / n);
    if (lambda == 0.0) return ols_solve(z, y);
    return ridge_path(z, y, std::span<const double>(&lambda, 1)).front();
}

std::vector<Eigen::VectorXd> lasso_path(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                                        std::span<const double> lambdas, const FitSettings& settings) {
    const double n = static_cast<double>(z.rows());
    const Eigen::MatrixXd gram = z.transpose() * z / n;
    const Eigen::VectorXd xty = z.transpose() * y / n;
    // Walk from the largest penalty down so each solve warm-starts the next.
    std::vector<std::size_t> order(lambdas.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return lambdas[a] > lambdas[b]; });
    std::vector<Eigen::VectorXd> out(lambdas.size());
    Eigen::VectorXd warm = Eigen::VectorXd::Zero(z.cols());
    for (std::size_t i : order) {
        warm = lasso_coordinate_descent(gram, xty, lambdas[i], warm, settings.lasso_tolerance, settings.lasso_max_sweeps)
                   .coefficients;
        out[i] = warm;
    }
    return out;
}

std::vector<Eigen::VectorXd> penalized_path(Regressor r, const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                                            std::span<const double> lambdas, const FitSettings& settings) {
    return r == Regressor::ridge ? ridge_path(z, y, lambdas) : lasso_path(z, y, lambdas, settings);
}

double cross_validate_lambda(Regressor r, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                             const FitSettings& settings) {
    const auto& grid = settings.lambda_grid;
    if (grid.empty()) throw StatsError("fit: empty lambda grid");
    const Eigen::Index n = x.rows();
    const auto folds = static_cast<Eigen::Index>(std::min<std::size_t>(settings.cv_folds, static_cast<std::size_t>(n)));
    if (folds < 2) throw StatsError("fit: cross-validation needs at least two folds");

    std::vector<double> sse(grid.size(), 0.0);
    for (Eigen::Index f = 0; f < folds; ++f) {
        std::vector<Eigen::Index> train, valid;
        for (Eigen::Index i = 0; i < n; ++i) (i % folds == f ? valid : train).push_back(i);
        const Eigen::MatrixXd xt = x(train, Eigen::all);
        const Eigen::VectorXd yt = y(train);
        const Eigen::MatrixXd xv = x(valid, Eigen::all);
        const Eigen::VectorXd yv = y(valid);

        const Standardized s = standardize(xt, yt, settings.fit_intercept);
        const auto path = penalized_path(r, s.z, s.y, grid, settings);
        for (std::size_t l = 0; l < grid.size(); ++l) {
            const FitResult fr = unstandardize(r, s, path[l], grid[l]);
            sse[l] += (predict(fr, xv) - yv).squaredNorm();
        }
    }
    // Ties resolve toward the larger penalty.
    std::size_t best = 0;
    for (std::size_t l = 1; l < grid.size(); ++l) {
        if (sse[l] < sse[best] || (sse[l] == sse[best] && grid[l] > grid[best])) best = l;
    }
    return grid[best];
}

}  // namespace

FitResult fit(Regressor regressor, const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const FitSettings& settings) {
    if (x.rows() != y.size()) throw StatsError("fit: x and y row counts differ");
    if (x.rows() < 2) throw StatsError("fit: need at least two rows");
    if (!x.allFinite() || !y.allFinite()) throw StatsError("fit: non-finite input");
    const Eigen::Index extra = settings.fit_intercept ? 1 : 0;
    if (regressor == Regressor::ols && x.rows() <= x.cols() + extra)
        throw StatsError("fit: OLS needs n > m + 1 (n=" + std::to_string(x.rows()) + ", m=" + std::to_string(x.cols()) + ")");

    const Standardized s = standardize(x, y, settings.fit_intercept);
    if (x.cols() == 0) return unstandardize(regressor, s, Eigen::VectorXd(), 0.0);

    switch (regressor) {
        case Regressor::ols: return unstandardize(regressor, s, ols_solve(s.z, s.y), 0.0);
        case Regressor::ridge: {
            const double lambda = settings.lambda ? *settings.lambda : cross_validate_lambda(regressor, x, y, settings);
            return unstandardize(regressor, s, ridge_solve(s.z, s.y, lambda), lambda);
        }
        case Regressor::lasso: {
            const double lambda = settings.lambda ? *settings.lambda : cross_validate_lambda(regressor, x, y, settings);
            const double n = static_cast<double>(s.z.rows());
            const Eigen::MatrixXd gram = s.z.transpose() * s.z / n;
            const Eigen::VectorXd xty = s.z.transpose() * s.y / n;
            auto state = lasso_coordinate_descent(gram, xty, lambda, Eigen::VectorXd::Zero(x.cols()),
                                                  settings.lasso_tolerance, settings.lasso_max_sweeps);
            return unstandardize(regressor, s, state.coefficients, lambda);
        }
    }
    throw StatsError("fit: unknown regressor");
}

Eigen::VectorXd predict(const FitResult& fit, const Eigen::MatrixXd& x) {
    if (x.cols() != fit.coefficients.size())
        throw StatsError("predict: expected " + std::to_string(fit.coefficients.size()) + " columns, got " +
                         std::to_string(x.cols()));
    if (x.cols() == 0) return Eigen::VectorXd::Constant(x.rows(), fit.intercept);
    return (x * fit.coefficients).array() + fit.intercept;
}

LinearModel least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& response, bool has_intercept) {
    const Eigen::Index n = design.rows();
    const Eigen::Index p = design.cols();
    if (response.size() != n) throw StatsError("least_squares: row count mismatch");
    if (n <= p) throw StatsError("least_squares: need more rows than columns");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < p)
        throw StatsError("least_squares: rank-deficient design (rank " + std::to_string(qr.rank()) + " < " +
                         std::to_string(p) + " columns)");
    LinearModel out;
    out.coefficients = qr.solve(response);
    const double ssr = (response - design * out.coefficients).squaredNorm();
    const double sst = (response.array() - response.mean()).matrix().squaredNorm();
    out.r2 = sst > 0.0 ? 1.0 - ssr / sst : (ssr <= 1e-24 ? 1.0 : 0.0);
    const double slopes = static_cast<double>(has_intercept ? p - 1 : p);
    const double dof = static_cast<double>(n) - slopes - 1.0;
    out.r2_adjusted = dof > 0.0 ? 1.0 - (1.0 - out.r2) * (static_cast<double>(n) - 1.0) / dof : out.r2;
    return out;
}

// ---- evaluation plumbing ----------------------------------------------------

RowSplit split_rows(Eigen::Index n, double test_fraction, Seed seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw StatsError("split: test_fraction must lie in (0, 1)");
    const auto n_test = static_cast<Eigen::Index>(std::llround(static_cast<double>(n) * test_fraction));
    if (n_test < 1 || n_test >= n) throw StatsError("split: both parts must be non-empty");
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    Rng rng = make_rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    RowSplit out;
    out.test.assign(perm.begin(), perm.begin() + n_test);
    out.train.assign(perm.begin() + n_test, perm.end());
    return out;
}

std::pair<DataMatrix, DataMatrix> split(const DataMatrix& data, double test_fraction, Seed seed) {
    const RowSplit rs = split_rows(data.rows(), test_fraction, seed);
    return {data.select_rows(rs.train), data.select_rows(rs.test)};
}

double rmse(const Eigen::VectorXd& predicted, const Eigen::VectorXd& actual) {
    if (predicted.size() != actual.size()) throw StatsError("rmse: length mismatch");
    if (predicted.size() == 0) throw StatsError("rmse: empty input");
    return std::sqrt((predicted - actual).squaredNorm() / static_cast<double>(predicted.size()));
}

// ---- risk law ---------------------------------------------------------------

double ols_excess_risk(std::size_t p, std::size_t n, double sigma) {
    if (n <= p + 1) throw StatsError("ols_excess_risk: need n > p + 1");
    return sigma * sigma * static_cast<double>(p) / static_cast<double>(n - p - 1);
}

double ols_gap_exact(std::size_t feature_count, std::size_t boundary_size, std::size_t n, double sigma) {
    return ols_excess_risk(feature_count, n, sigma) - ols_excess_risk(boundary_size, n, sigma);
}

double ols_gap_leading(std::size_t feature_count, std::size_t boundary_size, std::size_t n, double sigma) {
    return sigma * sigma * (static_cast<double>(feature_count) - static_cast<double>(boundary_size)) /
           static_cast<double>(n);
}

}  // namespace blanket
