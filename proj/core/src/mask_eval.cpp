#include "blanket/mask_eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

namespace blanket {

MaskScore score_mask(const FeatureMask& mask, const FeatureMask& oracle) {
    MaskScore s;
    s.tp_count = set_intersection(mask, oracle).size();
    s.fn_count = oracle.size() - s.tp_count;
    s.fp_count = mask.size() - s.tp_count;
    const auto tp = static_cast<double>(s.tp_count);
    if (mask.empty())
        s.precision = oracle.empty() ? 1.0 : 0.0;
    else
        s.precision = tp / static_cast<double>(mask.size());
    s.recall = oracle.empty() ? 1.0 : tp / static_cast<double>(oracle.size());
    s.f1 = (s.precision + s.recall) > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

nlohmann::json eval_record_to_json(const EvalRecord& r) {
    return nlohmann::json{{"task_id", r.task_id},
                          {"regressor", to_string(r.regressor)},
                          {"mask_kind", r.mask_kind},
                          {"method", r.method},
                          {"mask", r.mask.members()},
                          {"rmse_all", r.rmse_all},
                          {"rmse_mask", r.rmse_mask},
                          {"gap_abs", r.gap_abs},
                          {"gap_rel", r.gap_rel},
                          {"prediction_gain", r.prediction_gain},
                          {"tp", r.score.tp_count},
                          {"fn", r.score.fn_count},
                          {"fp", r.score.fp_count},
                          {"precision", r.score.precision},
                          {"recall", r.score.recall},
                          {"f1", r.score.f1},
                          {"F", r.feature_count},
                          {"n", r.sample_count}};
}

EvalRecord eval_record_from_json(const nlohmann::json& j) {
    EvalRecord r;
    r.task_id = j.at("task_id").get<std::string>();
    r.regressor = parse_regressor(j.at("regressor").get<std::string>());
    r.mask_kind = j.at("mask_kind").get<std::string>();
    r.method = j.value("method", std::string{});
    r.mask = node_set_from_json(j.at("mask"));
    r.rmse_all = j.at("rmse_all").get<double>();
    r.rmse_mask = j.at("rmse_mask").get<double>();
    r.gap_abs = j.at("gap_abs").get<double>();
    r.gap_rel = j.at("gap_rel").get<double>();
    r.prediction_gain = j.at("prediction_gain").get<double>();
    r.score.tp_count = j.at("tp").get<std::size_t>();
    r.score.fn_count = j.at("fn").get<std::size_t>();
    r.score.fp_count = j.at("fp").get<std::size_t>();
    r.score.precision = j.at("precision").get<double>();
    r.score.recall = j.at("recall").get<double>();
    r.score.f1 = j.at("f1").get<double>();
    r.feature_count = j.at("F").get<std::size_t>();
    r.sample_count = j.at("n").get<std::size_t>();
    return r;
}

Seed split_seed_for(const std::string& task_id) { return derive_seed(fnv1a(task_id), "split"); }

// ---- evaluator ------------------------------------------------------------------

MaskEvaluator::MaskEvaluator(FitSettings settings, double test_fraction)
    : settings_(std::move(settings)), test_fraction_(test_fraction) {}

double MaskEvaluator::mask_rmse(const TaskInstance& task, Regressor regressor, const FeatureMask& mask,
                                Seed split_seed) const {
    const NodeId target = task.target();
    if (mask.contains(target)) throw EvalError(task.meta.task_id + ": mask contains the target");
    try {
        const RowSplit rows = split_rows(task.data.rows(), test_fraction_, split_seed);
        const Eigen::Index y_col = task.data.position(target);
        std::vector<Eigen::Index> cols;
        cols.reserve(mask.size());
        for (NodeId v : mask) cols.push_back(task.data.position(v));
        const auto& values = task.data.values();
        const Eigen::MatrixXd x_train = values(rows.train, cols);
        const Eigen::VectorXd y_train = values(rows.train, y_col);
        const Eigen::MatrixXd x_test = values(rows.test, cols);
        const Eigen::VectorXd y_test = values(rows.test, y_col);
        const FitResult fr = fit(regressor, x_train, y_train, settings_);
        return rmse(predict(fr, x_test), y_test);
    } catch (const StatsError& e) {
        throw EvalError(task.meta.task_id + " [" + std::string(to_string(regressor)) + "]: " + e.what());
    }
}

double MaskEvaluator::baseline_rmse(const TaskInstance& task, Regressor regressor, Seed split_seed) const {
    const auto key = std::make_tuple(task.meta.task_id, regressor, split_seed);
    {
        std::lock_guard lock(cache_mutex_);
        if (auto it = baseline_cache_.find(key); it != baseline_cache_.end()) return it->second;
    }
    const double value = mask_rmse(task, regressor, FeatureMask(task.dag.features()), split_seed);
    std::lock_guard lock(cache_mutex_);
    return baseline_cache_.emplace(key, value).first->second;
}

EvalRecord MaskEvaluator::evaluate(const TaskInstance& task, Regressor regressor, const FeatureMask& mask,
                                   Seed split_seed, std::string mask_kind) const {
    EvalRecord r;
    r.task_id = task.meta.task_id;
    r.regressor = regressor;
    r.mask_kind = std::move(mask_kind);
    r.mask = mask;
    r.rmse_all = baseline_rmse(task, regressor, split_seed);
    r.rmse_mask = mask.size() == task.dag.feature_count() ? r.rmse_all : mask_rmse(task, regressor, mask, split_seed);
    r.gap_abs = r.rmse_all - r.rmse_mask;
    r.prediction_gain = r.gap_abs;
    r.gap_rel = r.rmse_all > 0.0 ? r.gap_abs / r.rmse_all : 0.0;
    r.score = score_mask(mask, task.oracle_boundary);
    r.feature_count = task.dag.feature_count();
    r.sample_count = static_cast<std::size_t>(task.data.rows());
    return r;
}

// ---- perturbations ------------------------------------------------------------

FeatureMask perturb_fn(const FeatureMask& oracle, std::size_t j, Seed seed) {
    if (j > oracle.size()) throw EvalError("perturb_fn: j exceeds the oracle size");
    std::vector<NodeId> members = oracle.members();
    Rng rng = make_rng(seed);
    std::shuffle(members.begin(), members.end(), rng);
    members.resize(members.size() - j);
    return FeatureMask(std::move(members));
}

FeatureMask perturb_fp(const FeatureMask& oracle, std::size_t j, std::span<const NodeId> features, Seed seed) {
    std::vector<NodeId> pool;
    for (NodeId v : features)
        if (!oracle.contains(v)) pool.push_back(v);
    std::sort(pool.begin(), pool.end());
    pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
    if (j > pool.size()) throw EvalError("perturb_fp: j exceeds the number of non-members");
    Rng rng = make_rng(seed);
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<NodeId> members = oracle.members();
    members.insert(members.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(j));
    return FeatureMask(std::move(members));
}

std::vector<Perturbation> perturbation_grid(std::size_t oracle_size, std::size_t non_member_count,
                                            const PerturbationPlan& plan) {
    std::vector<std::size_t> fn_steps, fp_steps;
    for (std::size_t s : plan.steps) {
        if (s == 0) continue;
        if (s <= oracle_size) fn_steps.push_back(s);
        if (s <= non_member_count) fp_steps.push_back(s);
    }
    std::vector<Perturbation> out;
    for (std::size_t rep = 0; rep < plan.reps; ++rep) {
        for (std::size_t s : fn_steps) out.push_back({s, 0, rep});
        for (std::size_t s : fp_steps) out.push_back({0, s, rep});
        if (plan.include_mixed)
            for (std::size_t a : fn_steps)
                for (std::size_t b : fp_steps) out.push_back({a, b, rep});
    }
    return out;
}

FeatureMask apply_perturbation(const FeatureMask& oracle, std::span<const NodeId> features, const Perturbation& p,
                               Seed task_seed) {
    const std::uint64_t key = (static_cast<std::uint64_t>(p.fn_drop) << 40) ^ (static_cast<std::uint64_t>(p.fp_add) << 20) ^ p.rep;
    // Additions are drawn from outside the oracle, so they never undo a drop.
    FeatureMask dropped = perturb_fn(oracle, p.fn_drop, derive_seed(task_seed, "perturb-fn", key));
    FeatureMask added = perturb_fp(oracle, p.fp_add, features, derive_seed(task_seed, "perturb-fp", key));
    return set_union(dropped, set_difference(added, oracle));
}

// ---- cost fit -----------------------------------------------------------------

CostFit fit_cost_coefficients(std::span<const EvalRecord> records) {
    std::map<std::pair<std::string, Regressor>, double> oracle_rmse;
    for (const auto& r : records)
        if (r.score.fn_count == 0 && r.score.fp_count == 0) oracle_rmse.emplace(std::make_pair(r.task_id, r.regressor), r.rmse_mask);

    std::vector<double> fn, fp, delta;
    CostFit out;
    for (const auto& r : records) {
        if (r.score.fn_count == 0 && r.score.fp_count == 0) continue;
        // Mixed masks let added features stand in for dropped ones; they
        // belong to the gain map, not to the per-error costs.
        if (r.score.fn_count > 0 && r.score.fp_count > 0) continue;
        auto it = oracle_rmse.find({r.task_id, r.regressor});
        if (it == oracle_rmse.end()) continue;
        fn.push_back(static_cast<double>(r.score.fn_count));
        fp.push_back(static_cast<double>(r.score.fp_count));
        delta.push_back(r.rmse_mask - it->second);
        if (r.score.fn_count > 0) ++out.fn_records;
        if (r.score.fp_count > 0) ++out.fp_records;
    }
    if (out.fn_records == 0 || out.fp_records == 0)
        throw EvalError("fit_cost_coefficients: need both false-negative and false-positive perturbations");

    const auto m = static_cast<Eigen::Index>(delta.size());
    Eigen::MatrixXd design(m, 2);
    Eigen::VectorXd response(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        design(i, 0) = fn[static_cast<std::size_t>(i)];
        design(i, 1) = fp[static_cast<std::size_t>(i)];
        response(i) = delta[static_cast<std::size_t>(i)];
    }
    LinearModel lm;
    try {
        lm = least_squares(design, response, false);
    } catch (const StatsError& e) {
        throw EvalError(std::string("fit_cost_coefficients: ") + e.what());
    }
    out.alpha_fn = lm.coefficients(0);
    out.alpha_fp = lm.coefficients(1);
    out.fit_r2 = lm.r2;
    out.records = static_cast<std::size_t>(m);
    if (std::abs(out.alpha_fp) <= 1e-12 * std::max(1.0, std::abs(out.alpha_fn)))
        throw EvalError("fit_cost_coefficients: alpha_fp is zero, cost ratio undefined");
    out.ratio = out.alpha_fn / out.alpha_fp;
    return out;
}

// ---- attribution --------------------------------------------------------------

double AttributionFit::coefficient(const std::string& term) const {
    for (const auto& [name, value] : coefficients)
        if (name == term) return value;
    throw EvalError("attribution: no term '" + term + "'");
}

double AttributionFit::univariate(const std::string& factor) const {
    for (const auto& [name, value] : univariate_r2_adjusted)
        if (name == factor) return value;
    throw EvalError("attribution: no factor '" + factor + "'");
}

namespace {

std::vector<std::string> levels_of(std::span<const AttributionRow> rows, std::string AttributionRow::*field) {
    std::set<std::string> levels;
    for (const auto& r : rows) levels.insert(r.*field);
    return {levels.begin(), levels.end()};
}

/// Design columns for one factor (no intercept): numeric or dummy-coded.
struct FactorColumns {
    std::vector<std::string> names;
    Eigen::MatrixXd columns;
};

FactorColumns dummies(std::span<const AttributionRow> rows, std::string AttributionRow::*field, const std::string& prefix) {
    const auto levels = levels_of(rows, field);
    FactorColumns out;  // a single level contributes no columns
    out.columns = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(levels.size() - 1));
    for (std::size_t l = 1; l < levels.size(); ++l) out.names.push_back(prefix + "[" + levels[l] + "]");
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto pos = std::lower_bound(levels.begin(), levels.end(), rows[i].*field) - levels.begin();
        if (pos > 0) out.columns(static_cast<Eigen::Index>(i), pos - 1) = 1.0;
    }
    return out;
}

FactorColumns numeric(std::span<const AttributionRow> rows, const std::string& name, double (*get)(const AttributionRow&)) {
    FactorColumns out;
    out.names = {name};
    out.columns.resize(static_cast<Eigen::Index>(rows.size()), 1);
    for (std::size_t i = 0; i < rows.size(); ++i) out.columns(static_cast<Eigen::Index>(i), 0) = get(rows[i]);
    return out;
}

double get_redundancy(const AttributionRow& r) { return r.redundancy_ratio; }
double get_log10_f(const AttributionRow& r) { return std::log10(static_cast<double>(r.feature_count)); }
double get_density(const AttributionRow& r) { return r.density; }

LinearModel fit_with_intercept(const std::vector<const FactorColumns*>& blocks, const Eigen::VectorXd& y,
                               std::vector<std::string>* names) {
    Eigen::Index width = 1;
    for (const auto* b : blocks) width += b->columns.cols();
    Eigen::MatrixXd design(y.size(), width);
    design.col(0).setOnes();
    if (names) names->assign(1, "(Intercept)");
    Eigen::Index at = 1;
    for (const auto* b : blocks) {
        design.middleCols(at, b->columns.cols()) = b->columns;
        at += b->columns.cols();
        if (names) names->insert(names->end(), b->names.begin(), b->names.end());
    }
    try {
        return least_squares(design, y, true);
    } catch (const StatsError& e) {
        throw EvalError(std::string("fit_attribution: ") + e.what());
    }
}

}  // namespace

AttributionFit fit_attribution(std::span<const AttributionRow> rows) {
    if (rows.empty()) throw EvalError("fit_attribution: no rows");
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) y(static_cast<Eigen::Index>(i)) = rows[i].response;

    const FactorColumns redundancy = numeric(rows, "redundancy_ratio", get_redundancy);
    const FactorColumns log_f = numeric(rows, "log10_F", get_log10_f);
    const FactorColumns density = numeric(rows, "density", get_density);
    const FactorColumns family = dummies(rows, &AttributionRow::family, "scm_family");
    const FactorColumns regressor = dummies(rows, &AttributionRow::regressor, "regressor");

    FactorColumns reg_x_red, reg_x_logf;
    reg_x_red.columns.resize(y.size(), regressor.columns.cols());
    reg_x_logf.columns.resize(y.size(), regressor.columns.cols());
    for (Eigen::Index c = 0; c < regressor.columns.cols(); ++c) {
        reg_x_red.columns.col(c) = regressor.columns.col(c).cwiseProduct(redundancy.columns.col(0));
        reg_x_logf.columns.col(c) = regressor.columns.col(c).cwiseProduct(log_f.columns.col(0));
        reg_x_red.names.push_back(regressor.names[static_cast<std::size_t>(c)] + ":redundancy_ratio");
        reg_x_logf.names.push_back(regressor.names[static_cast<std::size_t>(c)] + ":log10_F");
    }

    AttributionFit out;
    out.observations = rows.size();
    std::vector<std::string> names;
    const LinearModel full = fit_with_intercept({&redundancy, &log_f, &family, &regressor, &reg_x_red, &reg_x_logf}, y, &names);
    for (std::size_t i = 0; i < names.size(); ++i) out.coefficients.emplace_back(names[i], full.coefficients(static_cast<Eigen::Index>(i)));
    out.r2_adjusted = full.r2_adjusted;

    const std::pair<const char*, const FactorColumns*> singles[] = {
        {"redundancy_ratio", &redundancy}, {"log10_F", &log_f}, {"density", &density},
        {"scm_family", &family},           {"regressor", &regressor},
    };
    for (const auto& [name, block] : singles) {
        double r2 = 0.0;
        // constant factors explain nothing
        if (block->columns.cols() > 0) {
            try {
                r2 = fit_with_intercept({block}, y, nullptr).r2_adjusted;
            } catch (const EvalError&) {
                r2 = 0.0;
            }
        }
        out.univariate_r2_adjusted.emplace_back(name, r2);
    }
    return out;
}

}  // namespace blanket
