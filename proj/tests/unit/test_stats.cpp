#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>

#include "blanket/stats.hpp"

using namespace blanket;

namespace {

Eigen::MatrixXd gaussian(Eigen::Index n, Eigen::Index m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    Eigen::MatrixXd x(n, m);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < m; ++j) x(i, j) = z(rng);
    return x;
}

DataMatrix labelled(const Eigen::MatrixXd& x) {
    std::vector<NodeId> ids(static_cast<std::size_t>(x.cols()));
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    return DataMatrix(x, ids);
}

// Simpson integration of the standard normal density on [0, |z|].
double tail_by_quadrature(double z) {
    const int steps = 20000;
    const double h = std::abs(z) / steps;
    auto pdf = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2 * std::numbers::pi); };
    double s = pdf(0) + pdf(std::abs(z));
    for (int i = 1; i < steps; ++i) s += (i % 2 ? 4 : 2) * pdf(i * h);
    return 1.0 - 2.0 * s * h / 3.0;
}

}  // namespace

TEST_CASE("fisher z statistic and p-value") {
    const CiResult r = fisher_z_test(0.1, 1000, 0, 0.05);
    const double z = std::atanh(0.1) * std::sqrt(997.0);
    CHECK(r.statistic == doctest::Approx(z).epsilon(1e-12));
    CHECK(z == doctest::Approx(3.17).epsilon(0.01));
    CHECK(r.p_value == doctest::Approx(tail_by_quadrature(z)).epsilon(1e-6));
    CHECK(r.p_value == doctest::Approx(0.0015).epsilon(0.05));
    CHECK_FALSE(r.independent);
    CHECK(fisher_z_test(0.01, 100, 2, 0.05).independent);
    CHECK(normal_two_sided_p(1.959963984540054) == doctest::Approx(0.05).epsilon(1e-9));
    CHECK(fisher_z_test(1.0, 50, 0, 0.05).p_value == 0.0);
}

TEST_CASE("partial correlation: residual route, precision route and the 3-variable formula agree") {
    Eigen::MatrixXd x = gaussian(500, 4, 1);
    x.col(1) += 0.8 * x.col(0);
    x.col(2) += 0.5 * x.col(0) - 0.4 * x.col(1);
    x.col(3) += 0.3 * x.col(2);
    const DataMatrix d = labelled(x);
    const CorrelationCache cache(d);

    const double r01 = cache.correlation(0, 1), r02 = cache.correlation(0, 2), r12 = cache.correlation(1, 2);
    const double formula = (r12 - r01 * r02) / std::sqrt((1 - r01 * r01) * (1 - r02 * r02));
    CHECK(partial_correlation(d, 1, 2, NodeSet{0}) == doctest::Approx(formula).epsilon(1e-10));
    const NodeId s0[] = {0};
    CHECK(cache.partial_correlation(1, 2, s0) == doctest::Approx(formula).epsilon(1e-10));

    const NodeId s[] = {0, 2};
    CHECK(cache.partial_correlation(1, 3, s) ==
          doctest::Approx(partial_correlation(d, 1, 3, NodeSet{0, 2})).epsilon(1e-9));
    CHECK(cache.partial_correlation(1, 3, {}) == doctest::Approx(cache.correlation(1, 3)).epsilon(1e-12));
}

TEST_CASE("partial correlation names collinear conditioning columns") {
    Eigen::MatrixXd x = gaussian(100, 4, 2);
    x.col(3) = 2.0 * x.col(2);
    const DataMatrix d = labelled(x);
    try {
        (void)partial_correlation(d, 0, 1, NodeSet{2, 3});
        FAIL("expected StatsError");
    } catch (const StatsError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("collinear") != std::string::npos);
        CHECK((msg.find(" 2") != std::string::npos || msg.find(" 3") != std::string::npos));
    }
}

TEST_CASE("fisher z false-positive rate under independence is near alpha") {
    const int trials = 2000;
    int rejections = 0;
    for (int t = 0; t < trials; ++t) {
        const DataMatrix d = labelled(gaussian(200, 4, 100 + static_cast<std::uint64_t>(t)));
        const CorrelationCache c(d);
        const NodeId s[] = {2, 3};
        if (!fisher_z_test(c.partial_correlation(0, 1, s), 200, 2, 0.05).independent) ++rejections;
    }
    const double rate = static_cast<double>(rejections) / trials;
    CHECK(std::abs(rate - 0.05) < 3 * std::sqrt(0.05 * 0.95 / trials));
}

TEST_CASE("soft threshold") {
    CHECK(soft_threshold(3.0, 1.0) == 2.0);
    CHECK(soft_threshold(-3.0, 1.0) == -2.0);
    CHECK(soft_threshold(0.5, 1.0) == 0.0);
    CHECK(soft_threshold(-1.0, 1.0) == 0.0);
}

TEST_CASE("ols matches the normal equations") {
    const Eigen::MatrixXd x = gaussian(200, 5, 3);
    const Eigen::VectorXd beta = (Eigen::VectorXd(5) << 1, -2, 0.5, 0, 3).finished();
    const Eigen::VectorXd y = (x * beta).array() + 1.5 + 0.1 * gaussian(200, 1, 4).col(0).array();
    const FitResult f = fit(Regressor::ols, x, y);
    Eigen::MatrixXd design(200, 6);
    design << Eigen::VectorXd::Ones(200), x;
    const Eigen::VectorXd ref = (design.transpose() * design).ldlt().solve(design.transpose() * y);
    CHECK(f.intercept == doctest::Approx(ref(0)).epsilon(1e-9));
    for (int j = 0; j < 5; ++j) CHECK(f.coefficients(j) == doctest::Approx(ref(j + 1)).epsilon(1e-9));
    CHECK((predict(f, x) - design * ref).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("ols without intercept") {
    const Eigen::MatrixXd x = gaussian(100, 3, 5);
    const Eigen::VectorXd y = x * Eigen::Vector3d(1, 2, 3) + Eigen::VectorXd::Constant(100, 4.0);
    FitSettings s;
    s.fit_intercept = false;
    const FitResult f = fit(Regressor::ols, x, y, s);
    const Eigen::VectorXd ref = (x.transpose() * x).ldlt().solve(x.transpose() * y);
    CHECK(f.intercept == 0.0);
    for (int j = 0; j < 3; ++j) CHECK(f.coefficients(j) == doctest::Approx(ref(j)).epsilon(1e-9));
}

TEST_CASE("ols needs more rows than columns plus one") {
    CHECK_THROWS_AS(fit(Regressor::ols, gaussian(5, 5, 1), gaussian(5, 1, 2).col(0)), StatsError);
}

TEST_CASE("ridge with fixed penalty matches the standardized closed form") {
    const Eigen::Index n = 150;
    Eigen::MatrixXd x = gaussian(n, 4, 6);
    x.col(1) = 3.0 * x.col(1).array() + 2.0;
    const Eigen::VectorXd y = x * Eigen::Vector4d(0.5, -1, 2, 0) + gaussian(n, 1, 7).col(0);
    const double lambda = 0.3;
    FitSettings s;
    s.lambda = lambda;
    const FitResult f = fit(Regressor::ridge, x, y, s);

    const Eigen::RowVectorXd mean = x.colwise().mean();
    const Eigen::MatrixXd xc = x.rowwise() - mean;
    const Eigen::RowVectorXd sd = (xc.array().square().colwise().sum() / static_cast<double>(n)).sqrt();
    const Eigen::MatrixXd z = xc.array().rowwise() / sd.array();
    const Eigen::VectorXd yc = y.array() - y.mean();
    const Eigen::MatrixXd a = z.transpose() * z / static_cast<double>(n) + lambda * Eigen::MatrixXd::Identity(4, 4);
    const Eigen::VectorXd bz = a.ldlt().solve(z.transpose() * yc / static_cast<double>(n));
    for (int j = 0; j < 4; ++j) CHECK(f.coefficients(j) == doctest::Approx(bz(j) / sd(j)).epsilon(1e-9));
    CHECK(f.intercept == doctest::Approx(y.mean() - (mean.array() / sd.array()).matrix().dot(bz)).epsilon(1e-9));
    CHECK(f.hyperparameter == lambda);
}

TEST_CASE("lasso on an orthonormal design is soft thresholding") {
    const Eigen::Index n = 400;
    Eigen::MatrixXd raw = gaussian(n, 5, 8);
    raw = raw.rowwise() - raw.colwise().mean();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, 5);
    const Eigen::MatrixXd z = q * std::sqrt(static_cast<double>(n));
    const Eigen::VectorXd y = z * (Eigen::VectorXd(5) << 2, -1, 0.3, 0.05, 0).finished() + gaussian(n, 1, 9).col(0) * 0.2;
    FitSettings s;
    s.lambda = 0.25;
    const FitResult f = fit(Regressor::lasso, z, y, s);
    const Eigen::VectorXd zty = z.transpose() * (y.array() - y.mean()).matrix() / static_cast<double>(n);
    for (int j = 0; j < 5; ++j) CHECK(f.coefficients(j) == doctest::Approx(soft_threshold(zty(j), 0.25)).epsilon(1e-6));
}

TEST_CASE("lasso objective never increases across sweeps") {
    Eigen::MatrixXd x = gaussian(300, 8, 10);
    x.col(1) += 0.9 * x.col(0);
    x.col(2) += 0.9 * x.col(1);
    const Eigen::VectorXd y = x.col(0) - x.col(2) + 0.5 * gaussian(300, 1, 11).col(0);
    const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
    const Eigen::MatrixXd gram = xc.transpose() * xc / 300.0;
    const Eigen::VectorXd xty = xc.transpose() * (y.array() - y.mean()).matrix() / 300.0;
    std::vector<double> obj;
    const LassoState st = lasso_coordinate_descent(gram, xty, 0.05, Eigen::VectorXd::Zero(8), 1e-10, 10000, &obj);
    REQUIRE(obj.size() >= 2);
    for (std::size_t i = 1; i < obj.size(); ++i) CHECK(obj[i] <= obj[i - 1] + 1e-14);
    // KKT: |gradient| <= lambda on zeros, = lambda with matching sign elsewhere
    const Eigen::VectorXd grad = xty - gram * st.coefficients;
    for (int j = 0; j < 8; ++j) {
        if (st.coefficients(j) == 0.0)
            CHECK(std::abs(grad(j)) <= 0.05 + 1e-8);
        else
            CHECK(grad(j) == doctest::Approx(0.05 * (st.coefficients(j) > 0 ? 1 : -1)).epsilon(1e-6));
    }
}

TEST_CASE("lasso reports non-convergence") {
    const Eigen::MatrixXd x = gaussian(100, 6, 12);
    const Eigen::MatrixXd gram = x.transpose() * x / 100.0;
    const Eigen::VectorXd xty = x.transpose() * gaussian(100, 1, 13).col(0) / 100.0;
    CHECK_THROWS_AS(lasso_coordinate_descent(gram, xty, 1e-4, Eigen::VectorXd::Zero(6), 1e-15, 1), LassoConvergenceError);
}

TEST_CASE("cross-validated penalties come from the grid") {
    const Eigen::MatrixXd x = gaussian(200, 10, 14);
    const Eigen::VectorXd y = x.col(0) + 0.5 * gaussian(200, 1, 15).col(0);
    const auto grid = default_lambda_grid();
    CHECK(grid.size() == 13);
    CHECK(grid.front() == doctest::Approx(1e-4));
    CHECK(grid.back() == doctest::Approx(10.0));
    for (Regressor r : {Regressor::ridge, Regressor::lasso}) {
        const FitResult f = fit(r, x, y);
        CHECK(std::find_if(grid.begin(), grid.end(), [&](double g) { return std::abs(g - f.hyperparameter) < 1e-12; }) !=
              grid.end());
        CHECK(f.coefficients(0) > 0.5);
    }
}

TEST_CASE("intercept-only model with no features") {
    const Eigen::VectorXd y = gaussian(50, 1, 16).col(0);
    const FitResult f = fit(Regressor::ridge, Eigen::MatrixXd(50, 0), y);
    CHECK(f.intercept == doctest::Approx(y.mean()));
    CHECK(f.coefficients.size() == 0);
}

TEST_CASE("least squares reports R^2 and rejects rank deficiency") {
    Eigen::MatrixXd d(6, 2);
    d << 1, 0, 1, 1, 1, 2, 1, 3, 1, 4, 1, 5;
    const Eigen::VectorXd y = (Eigen::VectorXd(6) << 1, 3, 5, 7, 9, 11).finished();
    const LinearModel lm = least_squares(d, y, true);
    CHECK(lm.coefficients(0) == doctest::Approx(1.0));
    CHECK(lm.coefficients(1) == doctest::Approx(2.0));
    CHECK(lm.r2 == doctest::Approx(1.0));
    Eigen::MatrixXd bad(6, 3);
    bad << d, 2 * d.col(1);
    CHECK_THROWS_AS(least_squares(bad, y, true), StatsError);
}

TEST_CASE("row split is a seeded partition") {
    const RowSplit a = split_rows(1000, 0.2, 42);
    const RowSplit b = split_rows(1000, 0.2, 42);
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);
    CHECK(a.test.size() == 200);
    std::vector<Eigen::Index> all = a.train;
    all.insert(all.end(), a.test.begin(), a.test.end());
    std::sort(all.begin(), all.end());
    for (Eigen::Index i = 0; i < 1000; ++i) CHECK(all[static_cast<std::size_t>(i)] == i);
    CHECK(split_rows(1000, 0.2, 43).test != a.test);
}

TEST_CASE("risk-law helpers") {
    CHECK(ols_excess_risk(5, 1000, 0.5) == doctest::Approx(0.25 * 5 / 994.0));
    CHECK(ols_gap_leading(100, 10, 1000, 0.5) == doctest::Approx(0.0225));
    CHECK(ols_gap_exact(100, 10, 1000, 0.5) == doctest::Approx(0.25 * (100 / 899.0 - 10 / 989.0)));
    CHECK(rmse(Eigen::Vector2d(1, 2), Eigen::Vector2d(1, 4)) == doctest::Approx(std::sqrt(2.0)));
}
