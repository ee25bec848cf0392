#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>

#include "blanket/scm.hpp"

using namespace blanket;
namespace fs = std::filesystem;

namespace {

double excess_kurtosis(const Eigen::VectorXd& v) {
    const Eigen::ArrayXd c = v.array() - v.mean();
    const double m2 = c.square().mean();
    return c.pow(4).mean() / (m2 * m2) - 3.0;
}

double softplus_ref(double x) { return std::log(1.0 + std::exp(x)); }

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("blanket_scm_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("family tags round trip") {
    for (ScmFamily f : kAllFamilies) CHECK(parse_family(to_string(f)) == f);
    CHECK_THROWS(parse_family("quadratic"));
}

TEST_CASE("coefficients lie in +-[0.3, coeff_range]") {
    const Dag g = generate_er_dag(30, 0.3, 1);
    const ScmSpec s = build_scm(g, ScmFamily::linear_gaussian, 1.5, 0.5, 2);
    bool pos = false, neg = false;
    for (const auto& m : s.nodes)
        for (double w : m.weights) {
            CHECK(std::abs(w) >= kMinCoefficient);
            CHECK(std::abs(w) <= 1.5);
            (w > 0 ? pos : neg) = true;
        }
    CHECK(pos);
    CHECK(neg);
    CHECK_THROWS_AS(build_scm(g, ScmFamily::linear_gaussian, 0.2, 0.5, 2), ScmError);
    CHECK_THROWS_AS(build_scm(g, ScmFamily::linear_gaussian, 1.0, 0.0, 2), ScmError);
}

TEST_CASE("two-node linear correlation is w / sqrt(w^2 + sigma^2)") {
    const Dag g(2, {{0, 1}}, 1);
    ScmSpec s = build_scm(g, ScmFamily::linear_gaussian, 1.0, 0.5, 3);
    const double w = s.nodes[1].weights[0];
    const Eigen::MatrixXd x = sample(s, g, 200000, 4);
    const double r = x.col(0).dot(x.col(1)) / (x.rows() - 1.0);
    CHECK(r == doctest::Approx(w / std::sqrt(w * w + 0.25)).epsilon(0.01));
}

TEST_CASE("every family yields standardized columns") {
    const Dag g = generate_er_dag(12, 0.3, 5);
    for (ScmFamily f : kAllFamilies) {
        const ScmSpec s = build_scm(g, f, 1.0, 0.5, 6);
        const Eigen::MatrixXd x = sample(s, g, 500, 7);
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            CHECK(std::abs(x.col(c).mean()) < 1e-12);
            CHECK(std::sqrt((x.col(c).array() - x.col(c).mean()).square().sum() / 499.0) == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("non-Gaussian noise laws show their kurtosis") {
    const Dag g(6, {}, 0);
    const ScmSpec s = build_scm(g, ScmFamily::linear_nongaussian, 1.0, 0.5, 8);
    const Eigen::MatrixXd x = sample(s, g, 100000, 9);
    int uniform = 0, laplace = 0;
    for (NodeId v = 0; v < 6; ++v) {
        const double k = excess_kurtosis(x.col(static_cast<Eigen::Index>(v)));
        if (s.nodes[v].noise == NoiseLaw::uniform) {
            CHECK(k == doctest::Approx(-1.2).epsilon(0.05));
            ++uniform;
        } else {
            REQUIRE(s.nodes[v].noise == NoiseLaw::laplace);
            CHECK(k == doctest::Approx(3.0).epsilon(0.15));
            ++laplace;
        }
    }
    CHECK(uniform == 3);
    CHECK(laplace == 3);
}

TEST_CASE("heteroskedastic noise scale follows 0.5 + softplus") {
    const Dag g(2, {{0, 1}}, 1);
    const ScmSpec s = build_scm(g, ScmFamily::heteroskedastic, 1.0, 0.5, 10);
    const auto& m = s.nodes[1];
    const Eigen::MatrixXd x = sample(s, g, 400000, 11);
    const Eigen::Index n = x.rows();
    // Regress y on the known basis to get back to the residual scale.
    Eigen::MatrixXd d(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) d(i, 0) = 1.0, d(i, 1) = apply_basis(m.bases[0], x(i, 0));
    const Eigen::VectorXd beta = d.colPivHouseholderQr().solve(x.col(1));
    const Eigen::VectorXd resid = x.col(1) - d * beta;

    std::vector<double> ratio;
    for (double lo = -2.0; lo < 2.0; lo += 0.5) {
        double ss = 0, expect = 0;
        int cnt = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (x(i, 0) < lo || x(i, 0) >= lo + 0.5) continue;
            ss += resid(i) * resid(i);
            const double sd = 0.5 + softplus_ref(m.scale_weights[0] * x(i, 0));
            expect += sd * sd;
            ++cnt;
        }
        ratio.push_back(ss / expect);
    }
    const double c = ratio[ratio.size() / 2];
    for (double r : ratio) CHECK(r == doctest::Approx(c).epsilon(0.1));
}

TEST_CASE("post-nonlinear output is the signed power of the additive value") {
    const Dag g(2, {{0, 1}}, 1);
    const ScmSpec s = build_scm(g, ScmFamily::post_nonlinear, 1.0, 0.5, 12);
    const Eigen::MatrixXd x = sample(s, g, 1000, 13);
    CHECK(x.allFinite());
}

TEST_CASE("target selection is uniform over qualifying nodes") {
    const Dag g = generate_er_dag(25, 0.15, 14);
    const MbBand band{0.1, 0.9};
    std::vector<NodeId> qualifying;
    for (NodeId v = 0; v < g.node_count(); ++v) {
        const double r = mb_ratio(g, v);
        if (r >= band.low && r <= band.high) qualifying.push_back(v);
    }
    REQUIRE(qualifying.size() >= 3);
    std::map<NodeId, int> counts;
    const int draws = 20000;
    for (int s = 0; s < draws; ++s) ++counts[select_target(g, band, static_cast<Seed>(s)).value()];
    for (auto [v, c] : counts) CHECK(std::find(qualifying.begin(), qualifying.end(), v) != qualifying.end());
    const double e = static_cast<double>(draws) / static_cast<double>(qualifying.size());
    double chi2 = 0;
    for (NodeId v : qualifying) chi2 += (counts[v] - e) * (counts[v] - e) / e;
    const double df = static_cast<double>(qualifying.size() - 1);
    const double crit = df * std::pow(1 - 2 / (9 * df) + 3.09 * std::sqrt(2 / (9 * df)), 3);  // 99.9%
    CHECK(chi2 < crit);
    CHECK_FALSE(select_target(Dag(5, {}, 0), band, 1).has_value());
}

TEST_CASE("generate_task is deterministic and consistent") {
    TaskConfig cfg;
    cfg.feature_count = 30;
    cfg.density = 0.15;
    cfg.family = ScmFamily::additive_nongaussian;
    cfg.n = 300;
    cfg.seed = 77;
    const TaskInstance a = generate_task(cfg);
    const TaskInstance b = generate_task(cfg);
    CHECK(a.dag == b.dag);
    CHECK(a.spec == b.spec);
    CHECK(a.data.values() == b.data.values());
    CHECK(a.oracle_boundary == markov_boundary(a.dag, a.target()));
    CHECK(a.meta.mb_ratio >= 0.1);
    CHECK(a.meta.mb_ratio <= 0.9);
    CHECK(a.meta.redundancy_ratio == doctest::Approx(1.0 - a.meta.mb_ratio));
    CHECK(a.meta.task_id == make_task_id(cfg));
    CHECK(a.meta.task_id.rfind("additive_nongaussian-F30-", 0) == 0);
    cfg.seed = 78;
    CHECK(generate_task(cfg).meta.task_id != a.meta.task_id);
}

TEST_CASE("generation fails loudly when no target fits the band") {
    TaskConfig cfg;
    cfg.feature_count = 10;
    cfg.density = 0.0;
    cfg.seed = 1;
    try {
        (void)generate_task(cfg);
        FAIL("expected GenerationError");
    } catch (const GenerationError& e) {
        CHECK(e.config().feature_count == 10);
        CHECK(std::string(e.what()).find("\"density\":0.0") != std::string::npos);
    }
}

TEST_CASE("bundle round trip preserves data to 1e-12") {
    TaskConfig cfg;
    cfg.feature_count = 20;
    cfg.density = 0.2;
    cfg.family = ScmFamily::heteroskedastic;
    cfg.n = 400;
    cfg.seed = 5;
    const TaskInstance t = generate_task(cfg);
    const fs::path dir = scratch("bundle");
    write_bundle(t, dir.string());
    for (const char* f : {"dag.json", "scm.json", "meta.json", "data.csv"}) CHECK(fs::exists(dir / f));
    const TaskInstance back = read_bundle(dir.string());
    CHECK((back.data.values() - t.data.values()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(back.data.values() == t.data.values());
    CHECK(back.dag == t.dag);
    CHECK(back.spec == t.spec);
    CHECK(back.oracle_boundary == t.oracle_boundary);
    CHECK(back.meta.task_id == t.meta.task_id);
    const auto meta = nlohmann::json::parse(std::ifstream(dir / "meta.json"));
    for (const char* k : {"task_id", "F", "density", "family", "mb_ratio", "redundancy_ratio", "seed"}) CHECK(meta.contains(k));
    fs::remove_all(dir);
}

TEST_CASE("csv parser rejects ragged rows") {
    CHECK_THROWS(parse_data_csv("0,1\n1.0,2.0\n3.0\n"));
    const DataMatrix d = parse_data_csv("0,1\n1.5,-2e-3\n0.1,7\n");
    CHECK(d.rows() == 2);
    CHECK(d.values()(0, 1) == -2e-3);
}

TEST_CASE("task config json round trip") {
    TaskConfig c;
    c.feature_count = 100;
    c.density = 0.04;
    c.family = ScmFamily::post_nonlinear;
    c.band = {0.2, 0.5};
    c.seed = 12345678901234ULL;
    const TaskConfig d = task_config_from_json(nlohmann::json(c));
    CHECK(nlohmann::json(d) == nlohmann::json(c));
}
