#include <doctest.h>

#include <cmath>
#include <nlohmann/json.hpp>
#include <random>

#include "blanket/mask_eval.hpp"

using namespace blanket;

namespace {

TaskInstance small_task(Seed seed, std::size_t f = 25) {
    TaskConfig c;
    c.feature_count = f;
    c.density = 0.15;
    c.n = 600;
    c.seed = seed;
    return generate_task(c);
}

EvalRecord record(const std::string& task, Regressor reg, std::size_t tp, std::size_t fn, std::size_t fp, double rmse) {
    EvalRecord r;
    r.task_id = task;
    r.regressor = reg;
    r.mask_kind = "perturbed";
    r.score.tp_count = tp;
    r.score.fn_count = fn;
    r.score.fp_count = fp;
    r.rmse_mask = rmse;
    return r;
}

}  // namespace

TEST_CASE("mask scores and empty-set conventions") {
    const MaskScore s = score_mask(FeatureMask{1, 2, 7}, FeatureMask{1, 2, 3, 4});
    CHECK(s.tp_count == 2);
    CHECK(s.fn_count == 2);
    CHECK(s.fp_count == 1);
    CHECK(s.precision == doctest::Approx(2.0 / 3));
    CHECK(s.recall == doctest::Approx(0.5));
    CHECK(s.f1 == doctest::Approx(2 * (2.0 / 3) * 0.5 / (2.0 / 3 + 0.5)));
    CHECK(score_mask({}, FeatureMask{1}).precision == 0.0);
    CHECK(score_mask({}, FeatureMask{1}).f1 == 0.0);
    CHECK(score_mask({}, {}).precision == 1.0);
    CHECK(score_mask(FeatureMask{3}, {}).recall == 1.0);
}

TEST_CASE("all-features mask has zero gap; oracle gap matches the two RMSEs") {
    const TaskInstance t = small_task(1);
    const MaskEvaluator ev;
    for (Regressor r : kAllRegressors) {
        const EvalRecord all = ev.evaluate(t, r, FeatureMask(t.dag.features()), "all");
        CHECK(all.gap_abs == 0.0);
        CHECK(all.gap_rel == 0.0);
        CHECK(all.prediction_gain == 0.0);
        const EvalRecord orc = ev.evaluate(t, r, t.oracle_boundary);
        CHECK(orc.gap_abs == doctest::Approx(orc.rmse_all - orc.rmse_mask));
        CHECK(orc.gap_rel == doctest::Approx((orc.rmse_all - orc.rmse_mask) / orc.rmse_all));
        CHECK(orc.score.f1 == 1.0);
        CHECK(orc.feature_count == 25);
        CHECK(orc.sample_count == 600);
    }
}

TEST_CASE("evaluation reproduces an independent fit on the same split") {
    const TaskInstance t = small_task(2);
    const MaskEvaluator ev;
    const Seed seed = split_seed_for(t.meta.task_id);
    const RowSplit sp = split_rows(t.data.rows(), 0.2, seed);
    const auto cols = t.oracle_boundary.members();
    const Eigen::MatrixXd x = t.data.values()(Eigen::all, std::vector<Eigen::Index>(cols.begin(), cols.end()));
    const Eigen::VectorXd y = t.data.column(t.target());
    const FitResult f = fit(Regressor::ols, x(sp.train, Eigen::all), y(sp.train));
    const double expect = rmse(predict(f, x(sp.test, Eigen::all)), y(sp.test));
    CHECK(ev.mask_rmse(t, Regressor::ols, t.oracle_boundary, seed) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("empty mask predicts the train mean") {
    const TaskInstance t = small_task(3);
    const MaskEvaluator ev;
    const Seed seed = 9;
    const RowSplit sp = split_rows(t.data.rows(), 0.2, seed);
    const Eigen::VectorXd y = t.data.column(t.target());
    const double mean = y(sp.train).mean();
    const Eigen::VectorXd yt = y(sp.test);
    CHECK(ev.mask_rmse(t, Regressor::ridge, {}, seed) ==
          doctest::Approx(rmse(Eigen::VectorXd::Constant(yt.size(), mean), yt)).epsilon(1e-12));
}

TEST_CASE("split seed depends only on the task id") {
    CHECK(split_seed_for("a") == split_seed_for("a"));
    CHECK(split_seed_for("a") != split_seed_for("b"));
}

TEST_CASE("eval record json round trip") {
    const TaskInstance t = small_task(4);
    const EvalRecord r = MaskEvaluator().evaluate(t, Regressor::lasso, t.oracle_boundary.with(t.dag.features().front() == t.target() ? 1 : t.dag.features().front()), "estimated");
    const auto j = eval_record_to_json(r);
    for (const char* k : {"task_id", "regressor", "mask_kind", "mask", "rmse_all", "rmse_mask", "gap_abs", "gap_rel",
                          "prediction_gain", "tp", "fn", "fp", "precision", "recall", "f1"})
        CHECK(j.contains(k));
    const EvalRecord back = eval_record_from_json(j);
    CHECK(eval_record_to_json(back) == j);
}

TEST_CASE("perturbations have exactly the requested composition") {
    const FeatureMask oracle{2, 5, 9, 11};
    std::vector<NodeId> features;
    for (NodeId v = 0; v < 20; ++v)
        if (v != 3) features.push_back(v);
    for (std::size_t j = 0; j <= 4; ++j) {
        const MaskScore s = score_mask(perturb_fn(oracle, j, 7), oracle);
        CHECK(s.fn_count == j);
        CHECK(s.fp_count == 0);
    }
    for (std::size_t j = 0; j <= 8; ++j) {
        const FeatureMask m = perturb_fp(oracle, j, features, 7);
        const MaskScore s = score_mask(m, oracle);
        CHECK(s.fn_count == 0);
        CHECK(s.fp_count == j);
        CHECK_FALSE(m.contains(3));
    }
    CHECK_THROWS_AS(perturb_fn(oracle, 5, 1), EvalError);

    PerturbationPlan plan;
    plan.reps = 3;
    const auto grid = perturbation_grid(4, 15, plan);
    // steps 1,2,4 fit FN; 1,2,4,8 fit FP; mixed 3x4
    CHECK(grid.size() == 3 * (3 + 4 + 12));
    for (const auto& p : grid) {
        const MaskScore s = score_mask(apply_perturbation(oracle, features, p, 99), oracle);
        CHECK(s.fn_count == p.fn_drop);
        CHECK(s.fp_count == p.fp_add);
    }
    CHECK(apply_perturbation(oracle, features, grid[5], 99) == apply_perturbation(oracle, features, grid[5], 99));
}

TEST_CASE("cost fit recovers planted per-error costs") {
    std::vector<EvalRecord> rs;
    const double a_fn = 0.04, a_fp = 0.003;
    for (int t = 0; t < 5; ++t) {
        const std::string id = "t" + std::to_string(t);
        const double base = 0.5 + 0.01 * t;
        rs.push_back(record(id, Regressor::ols, 6, 0, 0, base));
        for (std::size_t j : {1, 2, 4}) rs.push_back(record(id, Regressor::ols, 6 - j, j, 0, base + a_fn * j));
        for (std::size_t j : {1, 2, 4, 8}) rs.push_back(record(id, Regressor::ols, 6, 0, j, base + a_fp * j));
        // mixed records carry substitution effects and are ignored
        rs.push_back(record(id, Regressor::ols, 4, 2, 2, base - 1.0));
    }
    const CostFit c = fit_cost_coefficients(rs);
    CHECK(c.alpha_fn == doctest::Approx(a_fn).epsilon(1e-10));
    CHECK(c.alpha_fp == doctest::Approx(a_fp).epsilon(1e-10));
    CHECK(c.ratio == doctest::Approx(a_fn / a_fp).epsilon(1e-9));
    CHECK(c.fit_r2 == doctest::Approx(1.0));
    CHECK(c.fn_records == 15);
    CHECK(c.fp_records == 20);

    std::vector<EvalRecord> fn_only;
    for (const auto& r : rs)
        if (r.score.fp_count == 0) fn_only.push_back(r);
    CHECK_THROWS_AS(fit_cost_coefficients(fn_only), EvalError);
}

TEST_CASE("attribution recovers a planted fixed-effect model") {
    std::vector<AttributionRow> rows;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.1, 0.9);
    const char* families[] = {"additive_gaussian", "linear_gaussian", "post_nonlinear"};
    const char* regs[] = {"lasso", "ols", "ridge"};
    for (int i = 0; i < 300; ++i) {
        AttributionRow r;
        r.redundancy_ratio = u(rng);
        r.feature_count = std::size_t{40} << (i % 4);
        r.density = 0.1 * (1 + i % 3);
        r.family = families[i % 3];
        r.regressor = regs[(i / 3) % 3];
        const double lf = std::log10(static_cast<double>(r.feature_count));
        double y = 0.2 + 0.5 * r.redundancy_ratio - 0.1 * lf;
        if (r.family == std::string("linear_gaussian")) y += 0.05;
        if (r.family == std::string("post_nonlinear")) y -= 0.03;
        if (r.regressor == std::string("ridge")) y += 0.3 + 0.2 * r.redundancy_ratio - 0.04 * lf;
        if (r.regressor == std::string("ols")) y += 0.1;
        r.response = y;
        rows.push_back(r);
    }
    const AttributionFit a = fit_attribution(rows);
    CHECK(a.coefficient("(Intercept)") == doctest::Approx(0.2).epsilon(1e-8));
    CHECK(a.coefficient("redundancy_ratio") == doctest::Approx(0.5).epsilon(1e-8));
    CHECK(a.coefficient("log10_F") == doctest::Approx(-0.1).epsilon(1e-8));
    CHECK(a.coefficient("scm_family[linear_gaussian]") == doctest::Approx(0.05).epsilon(1e-8));
    CHECK(a.coefficient("scm_family[post_nonlinear]") == doctest::Approx(-0.03).epsilon(1e-8));
    CHECK(a.coefficient("regressor[ridge]") == doctest::Approx(0.3).epsilon(1e-8));
    CHECK(a.coefficient("regressor[ols]") == doctest::Approx(0.1).epsilon(1e-8));
    CHECK(a.coefficient("regressor[ridge]:redundancy_ratio") == doctest::Approx(0.2).epsilon(1e-8));
    CHECK(a.coefficient("regressor[ridge]:log10_F") == doctest::Approx(-0.04).epsilon(1e-8));
    CHECK(std::abs(a.coefficient("regressor[ols]:log10_F")) < 1e-8);
    CHECK(a.r2_adjusted == doctest::Approx(1.0));
    CHECK_THROWS_AS((void)a.coefficient("scm_family[additive_gaussian]"), EvalError);

    // univariate oracle: squared correlation for a numeric factor
    const double n = static_cast<double>(rows.size());
    double mx = 0, my = 0;
    for (const auto& r : rows) mx += r.redundancy_ratio / n, my += r.response / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (const auto& r : rows) {
        sxy += (r.redundancy_ratio - mx) * (r.response - my);
        sxx += (r.redundancy_ratio - mx) * (r.redundancy_ratio - mx);
        syy += (r.response - my) * (r.response - my);
    }
    const double r2 = sxy * sxy / (sxx * syy);
    CHECK(a.univariate("redundancy_ratio") == doctest::Approx(1 - (1 - r2) * (n - 1) / (n - 2)).epsilon(1e-10));

    // between-group share for a categorical factor (3 levels -> 2 predictors)
    std::map<std::string, std::pair<double, int>> g;
    for (const auto& r : rows) g[r.regressor].first += r.response, g[r.regressor].second++;
    double ssb = 0;
    for (auto& [k, v] : g) ssb += v.second * std::pow(v.first / v.second - my, 2);
    const double r2c = ssb / syy;
    CHECK(a.univariate("regressor") == doctest::Approx(1 - (1 - r2c) * (n - 1) / (n - 3)).epsilon(1e-10));
}

TEST_CASE("attribution gives a constant factor zero explanatory power") {
    std::vector<AttributionRow> rows;
    for (int i = 0; i < 40; ++i)
        rows.push_back({0.1 * (i % 7) + 0.01 * i, 0.2 + 0.015 * i + 0.01 * (i % 3), std::size_t{40} << (i % 3), 0.2, "linear_gaussian",
                        i % 2 ? "ols" : "ridge"});
    const AttributionFit a = fit_attribution(rows);
    CHECK(a.univariate("density") == 0.0);
    CHECK(a.univariate("scm_family") == 0.0);
}
