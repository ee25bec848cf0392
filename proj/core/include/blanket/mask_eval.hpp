#pragma once

#include <cstddef>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "blanket/graph.hpp"
#include "blanket/scm.hpp"
#include "blanket/stats.hpp"

namespace blanket {

/// Composition of a mask relative to the oracle boundary.
/// Empty-set conventions: precision is 1 when the mask and the oracle are
/// both empty and 0 when only the mask is; recall is 1 for an empty oracle.
struct MaskScore {
    std::size_t tp_count = 0;
    std::size_t fn_count = 0;
    std::size_t fp_count = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

MaskScore score_mask(const FeatureMask& mask, const FeatureMask& oracle);

/// One (task, regressor, mask) evaluation. gap_abs and prediction_gain are
/// both RMSE(all) - RMSE(mask); on the oracle mask they are the MB gap.
struct EvalRecord {
    std::string task_id;
    Regressor regressor = Regressor::ols;
    /// all | oracle | estimated | layered_<k> | proximity_<r> | perturbed
    std::string mask_kind;
    /// Discovery method for estimated masks; empty otherwise.
    std::string method;
    FeatureMask mask;
    double rmse_all = 0.0;
    double rmse_mask = 0.0;
    double gap_abs = 0.0;
    double gap_rel = 0.0;
    double prediction_gain = 0.0;
    MaskScore score;
    std::size_t feature_count = 0;
    std::size_t sample_count = 0;
};

nlohmann::json eval_record_to_json(const EvalRecord& r);
EvalRecord eval_record_from_json(const nlohmann::json& j);

/// Split seed tied to the task identity.
Seed split_seed_for(const std::string& task_id);

/// Fits regressors on a task's train rows and scores them on its test rows.
/// The all-features RMSE is computed once per (task, regressor, split seed)
/// and shared; the cache is safe for concurrent use.
class MaskEvaluator {
public:
    explicit MaskEvaluator(FitSettings settings = {}, double test_fraction = 0.2);

    /// Test RMSE of `regressor` restricted to `mask`. An empty mask predicts
    /// the train mean of the target.
    [[nodiscard]] double mask_rmse(const TaskInstance& task, Regressor regressor, const FeatureMask& mask,
                                   Seed split_seed) const;
    [[nodiscard]] double baseline_rmse(const TaskInstance& task, Regressor regressor, Seed split_seed) const;

    [[nodiscard]] EvalRecord evaluate(const TaskInstance& task, Regressor regressor, const FeatureMask& mask,
                                      Seed split_seed, std::string mask_kind = "oracle") const;
    [[nodiscard]] EvalRecord evaluate(const TaskInstance& task, Regressor regressor, const FeatureMask& mask,
                                      std::string mask_kind = "oracle") const {
        return evaluate(task, regressor, mask, split_seed_for(task.meta.task_id), std::move(mask_kind));
    }

    [[nodiscard]] const FitSettings& settings() const noexcept { return settings_; }

private:
    FitSettings settings_;
    double test_fraction_;
    mutable std::mutex cache_mutex_;
    mutable std::map<std::tuple<std::string, Regressor, Seed>, double> baseline_cache_;
};

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---- perturbations ------------------------------------------------------------

/// Oracle minus j members chosen uniformly.
FeatureMask perturb_fn(const FeatureMask& oracle, std::size_t j, Seed seed);
/// Oracle plus j non-members drawn uniformly from `features`.
FeatureMask perturb_fp(const FeatureMask& oracle, std::size_t j, std::span<const NodeId> features, Seed seed);

struct Perturbation {
    std::size_t fn_drop = 0;
    std::size_t fp_add = 0;
    std::size_t rep = 0;
};

struct PerturbationPlan {
    std::vector<std::size_t> steps{1, 2, 4, 8};
    std::size_t reps = 20;
    /// Also combine FN and FP steps; gives the gain model varied compositions.
    bool include_mixed = true;
};

/// FN-only, FP-only and (optionally) mixed perturbations, with steps capped
/// by |oracle| and by the number of non-members.
std::vector<Perturbation> perturbation_grid(std::size_t oracle_size, std::size_t non_member_count,
                                            const PerturbationPlan& plan);
FeatureMask apply_perturbation(const FeatureMask& oracle, std::span<const NodeId> features, const Perturbation& p,
                               Seed task_seed);

// ---- cost fit -----------------------------------------------------------------

struct CostFit {
    double alpha_fn = 0.0;
    double alpha_fp = 0.0;
    double ratio = 0.0;
    double fit_r2 = 0.0;
    std::size_t records = 0;
    std::size_t fn_records = 0;
    std::size_t fp_records = 0;
};

/// Regresses RMSE(mask) - RMSE(oracle) on (fn_count, fp_count) without an
/// intercept. The oracle RMSE of each (task, regressor) comes from the record
/// with fn = fp = 0. Records with both error kinds are ignored.
CostFit fit_cost_coefficients(std::span<const EvalRecord> records);

// ---- attribution --------------------------------------------------------------

struct AttributionRow {
    double response = 0.0;  // relative MB gap
    double redundancy_ratio = 0.0;
    std::size_t feature_count = 0;
    double density = 0.0;
    std::string family;
    std::string regressor;
};

struct AttributionFit {
    std::vector<std::pair<std::string, double>> coefficients;
    double r2_adjusted = 0.0;
    /// Adjusted R^2 of one-factor models: redundancy_ratio, log10_F, density,
    /// scm_family, regressor.
    std::vector<std::pair<std::string, double>> univariate_r2_adjusted;
    std::size_t observations = 0;

    [[nodiscard]] double coefficient(const std::string& term) const;
    [[nodiscard]] double univariate(const std::string& factor) const;
};

/// Fixed-effect model: redundancy_ratio + log10 F + scm_family + regressor
/// + regressor:redundancy_ratio + regressor:log10 F, first level of each
/// factor as reference.
AttributionFit fit_attribution(std::span<const AttributionRow> rows);

}  // namespace blanket
