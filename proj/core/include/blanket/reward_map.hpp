#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "blanket/graph.hpp"
#include "blanket/mask_eval.hpp"
#include "blanket/stats.hpp"

namespace blanket {

/// prediction_gain ~ intercept + tp + fn + fp/n, fitted at one (F, regressor).
struct RewardFit {
    double coef_tp = 0.0;
    double coef_fn = 0.0;
    double coef_fp_over_n = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    Regressor regressor = Regressor::ols;
    std::size_t feature_count = 0;
    std::size_t n = 0;
    std::size_t compositions = 0;  // distinct (tp, fn, fp) triples
};

void to_json(nlohmann::json& j, const RewardFit& fit);

inline constexpr std::size_t kMinRewardCompositions = 10;

RewardFit fit_reward_model(std::span<const EvalRecord> records, Regressor regressor);

struct ImpliedCounts {
    double tp = 0.0;
    double fn = 0.0;
    double fp = 0.0;
};

/// Counts implied by (precision, recall) for a boundary of the given size:
/// tp = r|B|, fn = (1 - r)|B|, fp = r|B|(1/precision - 1).
ImpliedCounts implied_counts(double precision, double recall, double boundary_size);

double predicted_gain(const RewardFit& fit, const ImpliedCounts& counts);

struct PrPoint {
    double precision = 0.0;
    double recall = 0.0;

    friend bool operator==(const PrPoint&, const PrPoint&) = default;
};

struct GainSurface {
    std::vector<double> precision_axis;  // (0, 1], ascending
    std::vector<double> recall_axis;     // (0, 1], ascending
    Eigen::MatrixXd predicted_gain;      // rows = recall, cols = precision
    std::vector<PrPoint> zero_contour;   // sorted by precision, then recall
    std::size_t boundary_size = 0;
};

/// Lattice step, 1.0, ... values k*step up to 1.
std::vector<double> unit_axis(double step);

/// Evaluates the fitted model over the precision-recall lattice and extracts
/// the zero contour by linear interpolation along sign-changing lattice edges.
GainSurface gain_surface(const RewardFit& fit, std::size_t boundary_size, double grid_step = 0.02);

/// (precision, recall) of each mask against the oracle, in order.
std::vector<PrPoint> trajectory(std::span<const FeatureMask> masks, const FeatureMask& oracle);

/// CSV: precision,recall,predicted_gain.
std::string surface_csv(const GainSurface& surface);
/// JSON array of [precision, recall] pairs.
nlohmann::json points_json(std::span<const PrPoint> points);

}  // namespace blanket
