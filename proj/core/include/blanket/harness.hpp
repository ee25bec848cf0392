#pragma once

#include <cstddef>
#include <fstream>
#include <map>
#include <memory>
#include <stdexcept>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "blanket/discovery.hpp"
#include "blanket/mask_eval.hpp"
#include "blanket/reward_map.hpp"
#include "blanket/scm.hpp"

namespace blanket {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GridCell {
    std::size_t feature_count = 40;
    double density = 0.2;
    ScmFamily family = ScmFamily::linear_gaussian;
    MbBand band;
    std::size_t n = 1000;
    double coeff_range = 1.0;
    double noise_std = 0.5;
    std::size_t tasks_per_cell = 30;
};

struct EvaluationPlan {
    std::size_t layered_k_max = 3;
    std::size_t proximity_r_max = 3;
    PerturbationPlan perturbations;
    double test_fraction = 0.2;
};

struct RunConfig {
    std::vector<GridCell> grid;
    std::vector<Regressor> regressors{Regressor::ols, Regressor::ridge, Regressor::lasso};
    std::vector<DiscoveryMethod> methods{DiscoveryMethod::grow_shrink, DiscoveryMethod::hiton_mb};
    double alpha = 0.05;
    double budget_s = 60.0;
    Seed master_seed = 0;
    std::string output_dir = "runs";
    std::size_t parallelism = 1;
    EvaluationPlan evaluation;
    double grid_step = 0.02;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Missing keys take the defaults above; unknown tags are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
void validate(const RunConfig& cfg);

/// F in {40, 100, 200}, 30 tasks per cell, linear Gaussian plus additive
/// Gaussian, dense bands below F = 200 and sparse ones from 200 up.
RunConfig desk_config();
/// The 3,450-task grid: F <= 100 with densities {0.2, 0.4}, F >= 200 with
/// {0.01, 0.02, 0.04}, all six families, 25 tasks per cell.
RunConfig full_benchmark_config();

struct TaskPlan {
    TaskConfig config;
    std::string task_id;
    std::size_t cell = 0;
    std::size_t replicate = 0;
};

/// One plan per (cell, replicate); seeds derive from the master seed and the
/// cell contents, so adding cells does not reshuffle existing tasks.
std::vector<TaskPlan> plan_tasks(const RunConfig& cfg);

// ---- JSONL --------------------------------------------------------------------

/// Line-atomic appender: each record is written and flushed as one line.
class JsonlWriter {
public:
    JsonlWriter(const std::string& path, bool truncate);
    void append(const nlohmann::json& record);

private:
    std::mutex mutex_;
    std::ofstream out_;
};

/// Reads records, dropping a truncated or unparsable final line.
std::vector<nlohmann::json> read_jsonl(const std::string& path);

// ---- commands -----------------------------------------------------------------

struct GenerateSummary {
    std::size_t generated = 0;
    std::size_t skipped = 0;
    std::vector<std::string> failures;
};

/// Writes <out>/tasks/<task_id>/ bundles and <out>/manifest.json.
GenerateSummary cmd_generate(const RunConfig& cfg);

struct DiscoverSummary {
    std::size_t runs = 0;
    std::size_t completed = 0;
    std::vector<std::string> failures;
};

/// Runs every configured method on every bundle listed in
/// <bundle_dir>/manifest.json; writes <out>/discovery.jsonl and
/// <out>/discovery_summary.csv.
DiscoverSummary cmd_discover(const RunConfig& cfg, const std::string& bundle_dir);

enum class MaskSource { all, oracle, estimated, layered, proximity, perturbed };
std::string_view to_string(MaskSource s) noexcept;
MaskSource parse_mask_source(std::string_view tag);

struct EvaluateSummary {
    std::size_t records = 0;
    std::vector<std::string> failures;
};

/// Writes <out>/evaluations/<source>.jsonl for each requested source.
EvaluateSummary cmd_evaluate(const RunConfig& cfg, const std::string& bundle_dir, const std::vector<MaskSource>& sources);

struct ReportSummary {
    std::vector<std::string> files;
    std::vector<std::string> notes;
};

/// Reads <records_dir>/evaluations/*.jsonl, discovery.jsonl and
/// manifest.json; writes CSV tables and map exports to <records_dir>/report.
ReportSummary cmd_report(const std::string& records_dir, double grid_step = 0.02);

// ---- report building blocks (shared with tests) --------------------------------

/// Median and quartiles by linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);

struct RecoveryRow {
    std::size_t feature_count = 0;
    std::string method;
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double time_s = 0.0;
    double completion = 0.0;
    std::size_t runs = 0;
};

/// Per-(F, method) means over completed runs, completion over all runs.
std::vector<RecoveryRow> recovery_table(const std::vector<nlohmann::json>& discovery,
                                        const std::map<std::string, nlohmann::json>& meta_by_task);

}  // namespace blanket
