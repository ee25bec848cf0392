#include "blanket/reward_map.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <stdexcept>
#include <tuple>

#include <nlohmann/json.hpp>

namespace blanket {

void to_json(nlohmann::json& j, const RewardFit& fit) {
    j = nlohmann::json{{"regressor", to_string(fit.regressor)},
                       {"F", fit.feature_count},
                       {"n", fit.n},
                       {"intercept", fit.intercept},
                       {"coef_tp", fit.coef_tp},
                       {"coef_fn", fit.coef_fn},
                       {"coef_fp_over_n", fit.coef_fp_over_n},
                       {"r2", fit.r2},
                       {"compositions", fit.compositions}};
}

RewardFit fit_reward_model(std::span<const EvalRecord> records, Regressor regressor) {
    std::vector<const EvalRecord*> used;
    for (const auto& r : records)
        if (r.regressor == regressor && r.mask_kind != "all") used.push_back(&r);
    if (used.empty()) throw EvalError("fit_reward_model: no records for regressor " + std::string(to_string(regressor)));

    RewardFit out;
    out.regressor = regressor;
    out.feature_count = used.front()->feature_count;
    out.n = used.front()->sample_count;
    std::set<std::tuple<std::size_t, std::size_t, std::size_t>> compositions;
    for (const auto* r : used) {
        if (r->feature_count != out.feature_count) throw EvalError("fit_reward_model: records span several feature counts");
        if (r->sample_count != out.n) throw EvalError("fit_reward_model: records span several sample sizes");
        compositions.emplace(r->score.tp_count, r->score.fn_count, r->score.fp_count);
    }
    out.compositions = compositions.size();
    if (out.compositions < kMinRewardCompositions)
        throw EvalError("fit_reward_model: need at least " + std::to_string(kMinRewardCompositions) +
                        " distinct mask compositions, got " + std::to_string(out.compositions));

    const auto m = static_cast<Eigen::Index>(used.size());
    const double n = static_cast<double>(out.n);
    Eigen::MatrixXd design(m, 4);
    Eigen::VectorXd gain(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto& s = used[static_cast<std::size_t>(i)]->score;
        design(i, 0) = 1.0;
        design(i, 1) = static_cast<double>(s.tp_count);
        design(i, 2) = static_cast<double>(s.fn_count);
        design(i, 3) = static_cast<double>(s.fp_count) / n;
        gain(i) = used[static_cast<std::size_t>(i)]->prediction_gain;
    }
    LinearModel lm;
    try {
        lm = least_squares(design, gain, true);
    } catch (const StatsError& e) {
        throw EvalError(std::string("fit_reward_model: collinear composition counts (") + e.what() +
                        "); vary |B| across tasks or mix FN and FP perturbations");
    }
    out.intercept = lm.coefficients(0);
    out.coef_tp = lm.coefficients(1);
    out.coef_fn = lm.coefficients(2);
    out.coef_fp_over_n = lm.coefficients(3);
    out.r2 = lm.r2;
    return out;
}

ImpliedCounts implied_counts(double precision, double recall, double boundary_size) {
    if (!(precision > 0.0 && precision <= 1.0)) throw std::invalid_argument("implied_counts: precision must lie in (0, 1]");
    if (!(recall >= 0.0 && recall <= 1.0)) throw std::invalid_argument("implied_counts: recall must lie in [0, 1]");
    return {recall * boundary_size, (1.0 - recall) * boundary_size, recall * boundary_size * (1.0 / precision - 1.0)};
}

double predicted_gain(const RewardFit& fit, const ImpliedCounts& c) {
    return fit.intercept + fit.coef_tp * c.tp + fit.coef_fn * c.fn + fit.coef_fp_over_n * c.fp / static_cast<double>(fit.n);
}

std::vector<double> unit_axis(double step) {
    if (!(step > 0.0 && step <= 0.5)) throw std::invalid_argument("grid step must lie in (0, 0.5]");
    std::vector<double> axis;
    for (std::size_t k = 1;; ++k) {
        const double v = static_cast<double>(k) * step;
        if (v > 1.0 + 1e-9) break;
        axis.push_back(std::min(v, 1.0));
    }
    if (axis.back() < 1.0 - 1e-9) axis.push_back(1.0);
    return axis;
}

GainSurface gain_surface(const RewardFit& fit, std::size_t boundary_size, double grid_step) {
    GainSurface s;
    s.boundary_size = boundary_size;
    s.precision_axis = unit_axis(grid_step);
    s.recall_axis = s.precision_axis;
    const auto rows = static_cast<Eigen::Index>(s.recall_axis.size());
    const auto cols = static_cast<Eigen::Index>(s.precision_axis.size());
    s.predicted_gain.resize(rows, cols);
    const auto b = static_cast<double>(boundary_size);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
            s.predicted_gain(r, c) = predicted_gain(
                fit, implied_counts(s.precision_axis[static_cast<std::size_t>(c)], s.recall_axis[static_cast<std::size_t>(r)], b));

    auto crossing = [](double a, double b) { return (a < 0.0 && b > 0.0) || (a > 0.0 && b < 0.0); };
    std::vector<PrPoint> points;
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            const double g = s.predicted_gain(r, c);
            const double p = s.precision_axis[static_cast<std::size_t>(c)];
            const double rc = s.recall_axis[static_cast<std::size_t>(r)];
            if (g == 0.0) points.push_back({p, rc});
            if (c + 1 < cols && crossing(g, s.predicted_gain(r, c + 1))) {
                const double t = g / (g - s.predicted_gain(r, c + 1));
                const double p2 = s.precision_axis[static_cast<std::size_t>(c + 1)];
                points.push_back({p + t * (p2 - p), rc});
            }
            if (r + 1 < rows && crossing(g, s.predicted_gain(r + 1, c))) {
                const double t = g / (g - s.predicted_gain(r + 1, c));
                const double r2 = s.recall_axis[static_cast<std::size_t>(r + 1)];
                points.push_back({p, rc + t * (r2 - rc)});
            }
        }
    }
    std::sort(points.begin(), points.end(), [](const PrPoint& a, const PrPoint& b) {
        return std::tie(a.precision, a.recall) < std::tie(b.precision, b.recall);
    });
    points.erase(std::unique(points.begin(), points.end()), points.end());
    s.zero_contour = std::move(points);
    return s;
}

std::vector<PrPoint> trajectory(std::span<const FeatureMask> masks, const FeatureMask& oracle) {
    if (masks.empty()) throw std::invalid_argument("trajectory: empty mask list");
    std::vector<PrPoint> out;
    out.reserve(masks.size());
    for (const auto& m : masks) {
        const MaskScore s = score_mask(m, oracle);
        out.push_back({s.precision, s.recall});
    }
    return out;
}

std::string surface_csv(const GainSurface& surface) {
    std::string out = "precision,recall,predicted_gain\n";
    char buf[64];
    auto put = [&](double v) {
        auto res = std::to_chars(buf, buf + sizeof buf, v);
        out.append(buf, res.ptr);
    };
    for (std::size_t r = 0; r < surface.recall_axis.size(); ++r) {
        for (std::size_t c = 0; c < surface.precision_axis.size(); ++c) {
            put(surface.precision_axis[c]);
            out += ',';
            put(surface.recall_axis[r]);
            out += ',';
            put(surface.predicted_gain(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
            out += '\n';
        }
    }
    return out;
}

nlohmann::json points_json(std::span<const PrPoint> points) {
    auto arr = nlohmann::json::array();
    for (const auto& p : points) arr.push_back({p.precision, p.recall});
    return arr;
}

}  // namespace blanket
