#include <doctest.h>

#include <cmath>
#include <nlohmann/json.hpp>

#include "blanket/reward_map.hpp"

using namespace blanket;

namespace {

std::vector<EvalRecord> planted(double b0, double b_tp, double b_fn, double b_fp, std::size_t n) {
    std::vector<EvalRecord> rs;
    int id = 0;
    for (std::size_t boundary : {4, 6, 9})
        for (std::size_t fn = 0; fn <= 3; ++fn)
            for (std::size_t fp : {0, 2, 5}) {
                EvalRecord r;
                r.task_id = "t" + std::to_string(id++);
                r.regressor = Regressor::ridge;
                r.mask_kind = "perturbed";
                r.score.tp_count = boundary - fn;
                r.score.fn_count = fn;
                r.score.fp_count = fp;
                r.feature_count = 40;
                r.sample_count = n;
                r.prediction_gain = b0 + b_tp * r.score.tp_count + b_fn * fn + b_fp * static_cast<double>(fp) / n;
                rs.push_back(r);
            }
    return rs;
}

}  // namespace

TEST_CASE("implied counts") {
    const ImpliedCounts c = implied_counts(0.5, 0.8, 10);
    CHECK(c.tp == doctest::Approx(8));
    CHECK(c.fn == doctest::Approx(2));
    CHECK(c.fp == doctest::Approx(8));
    const ImpliedCounts perfect = implied_counts(1.0, 1.0, 7);
    CHECK(perfect.fn == 0.0);
    CHECK(perfect.fp == 0.0);
    CHECK_THROWS(implied_counts(0.0, 0.5, 10));
    CHECK_THROWS(implied_counts(0.5, 1.5, 10));
}

TEST_CASE("reward fit recovers planted coefficients") {
    const auto rs = planted(-0.05, 0.02, -0.03, -1.5, 1000);
    const RewardFit f = fit_reward_model(rs, Regressor::ridge);
    CHECK(f.intercept == doctest::Approx(-0.05).epsilon(1e-9));
    CHECK(f.coef_tp == doctest::Approx(0.02).epsilon(1e-9));
    CHECK(f.coef_fn == doctest::Approx(-0.03).epsilon(1e-9));
    CHECK(f.coef_fp_over_n == doctest::Approx(-1.5).epsilon(1e-7));
    CHECK(f.r2 == doctest::Approx(1.0));
    CHECK(f.compositions == rs.size());
    CHECK_THROWS_AS(fit_reward_model(rs, Regressor::ols), EvalError);
}

TEST_CASE("reward fit needs varied compositions") {
    auto rs = planted(0, 0.01, -0.01, -1, 1000);
    rs.resize(5);
    CHECK_THROWS_AS(fit_reward_model(rs, Regressor::ridge), EvalError);
    auto mixed = planted(0, 0.01, -0.01, -1, 1000);
    mixed[3].feature_count = 100;
    CHECK_THROWS_AS(fit_reward_model(mixed, Regressor::ridge), EvalError);
}

TEST_CASE("gain surface contour separates the signs of the fitted gain") {
    RewardFit f;
    f.intercept = -0.02;
    f.coef_tp = 0.01;
    f.coef_fn = -0.01;
    f.coef_fp_over_n = -2.0;
    f.n = 1000;
    const GainSurface s = gain_surface(f, 10, 0.02);
    CHECK(s.precision_axis.size() == 50);
    CHECK(s.precision_axis.back() == 1.0);
    CHECK(s.predicted_gain.rows() == 50);
    REQUIRE_FALSE(s.zero_contour.empty());
    for (const auto& p : s.zero_contour) {
        // gain is affine in recall at fixed precision, so each point is an
        // exact root along recall edges and near one along precision edges
        const double g = predicted_gain(f, implied_counts(p.precision, p.recall, 10));
        CHECK(std::abs(g) < 2e-3);
    }
    for (std::size_t i = 1; i < s.zero_contour.size(); ++i) {
        const auto& a = s.zero_contour[i - 1];
        const auto& b = s.zero_contour[i];
        CHECK((a.precision < b.precision || (a.precision == b.precision && a.recall < b.recall)));
    }
    // perfect masks gain, near-empty masks lose
    CHECK(s.predicted_gain(49, 49) > 0);
    CHECK(s.predicted_gain(0, 49) < 0);

    RewardFit all_good = f;
    all_good.intercept = 1.0;
    CHECK(gain_surface(all_good, 10, 0.1).zero_contour.empty());
}

TEST_CASE("trajectories of nested masks") {
    const FeatureMask oracle{1, 2, 3};
    const std::vector<FeatureMask> layered{{1, 2, 3}, {1, 2, 3, 4, 5}, {1, 2, 3, 4, 5, 6, 7, 8}};
    const auto t = trajectory(layered, oracle);
    for (const auto& p : t) CHECK(p.recall == 1.0);
    CHECK(t[0].precision == 1.0);
    CHECK(t[1].precision == doctest::Approx(0.6));
    const std::vector<FeatureMask> proximity{{1, 9}, {1, 2, 9, 10}};
    const auto q = trajectory(proximity, oracle);
    CHECK(q[0].recall == doctest::Approx(1.0 / 3));
    CHECK(q[1].precision == doctest::Approx(0.5));
    CHECK_THROWS(trajectory(std::vector<FeatureMask>{}, oracle));
}

TEST_CASE("surface csv and point export") {
    RewardFit f;
    f.intercept = 0.1;
    f.n = 100;
    const GainSurface s = gain_surface(f, 5, 0.5);
    const std::string csv = surface_csv(s);
    CHECK(csv.rfind("precision,recall,predicted_gain\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 4);
    const std::vector<PrPoint> pts{{0.25, 1.0}};
    CHECK(points_json(pts).dump() == "[[0.25,1.0]]");
    CHECK(unit_axis(0.25) == std::vector<double>{0.25, 0.5, 0.75, 1.0});
    CHECK(unit_axis(0.3).back() == 1.0);
}
