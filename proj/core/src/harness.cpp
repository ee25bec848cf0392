#include "blanket/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "blanket/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace blanket {

// ---- config -------------------------------------------------------------------

namespace {

json cell_to_json(const GridCell& c) {
    return json{{"F", c.feature_count},        {"density", c.density},
                {"family", to_string(c.family)}, {"band", {c.band.low, c.band.high}},
                {"n", c.n},                     {"coeff_range", c.coeff_range},
                {"noise_std", c.noise_std},     {"tasks_per_cell", c.tasks_per_cell}};
}

GridCell cell_from_json(const json& j) {
    GridCell c;
    c.feature_count = j.at("F").get<std::size_t>();
    c.density = j.at("density").get<double>();
    c.family = parse_family(j.value("family", std::string(to_string(c.family))));
    if (j.contains("band")) {
        const auto band = j.at("band").get<std::vector<double>>();
        if (band.size() != 2) throw ConfigError("grid cell: band must have two entries");
        c.band = {band[0], band[1]};
    }
    c.n = j.value("n", c.n);
    c.coeff_range = j.value("coeff_range", c.coeff_range);
    c.noise_std = j.value("noise_std", c.noise_std);
    c.tasks_per_cell = j.value("tasks_per_cell", c.tasks_per_cell);
    return c;
}

std::string fixed(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace

json to_json(const RunConfig& cfg) {
    json grid = json::array();
    for (const auto& c : cfg.grid) grid.push_back(cell_to_json(c));
    json regs = json::array();
    for (auto r : cfg.regressors) regs.push_back(to_string(r));
    json methods = json::array();
    for (auto m : cfg.methods) methods.push_back(to_string(m));
    const auto& ev = cfg.evaluation;
    return json{{"grid", grid},
                {"regressors", regs},
                {"methods", methods},
                {"alpha", cfg.alpha},
                {"budget_s", cfg.budget_s},
                {"master_seed", cfg.master_seed},
                {"output_dir", cfg.output_dir},
                {"parallelism", cfg.parallelism},
                {"evaluation",
                 {{"layered_k_max", ev.layered_k_max},
                  {"proximity_r_max", ev.proximity_r_max},
                  {"test_fraction", ev.test_fraction},
                  {"perturbation_steps", ev.perturbations.steps},
                  {"perturbation_reps", ev.perturbations.reps},
                  {"perturbation_mixed", ev.perturbations.include_mixed}}},
                {"grid_step", cfg.grid_step}};
}

RunConfig run_config_from_json(const json& j) {
    RunConfig cfg;
    try {
        if (!j.is_object()) throw ConfigError("run config must be a JSON object");
        for (const auto& c : j.at("grid")) cfg.grid.push_back(cell_from_json(c));
        if (j.contains("regressors")) {
            cfg.regressors.clear();
            for (const auto& r : j.at("regressors")) cfg.regressors.push_back(parse_regressor(r.get<std::string>()));
        }
        if (j.contains("methods")) {
            cfg.methods.clear();
            for (const auto& m : j.at("methods")) cfg.methods.push_back(parse_method(m.get<std::string>()));
        }
        cfg.alpha = j.value("alpha", cfg.alpha);
        cfg.budget_s = j.value("budget_s", cfg.budget_s);
        cfg.master_seed = j.value("master_seed", cfg.master_seed);
        cfg.output_dir = j.value("output_dir", cfg.output_dir);
        cfg.parallelism = j.value("parallelism", cfg.parallelism);
        cfg.grid_step = j.value("grid_step", cfg.grid_step);
        if (j.contains("evaluation")) {
            const auto& e = j.at("evaluation");
            auto& ev = cfg.evaluation;
            ev.layered_k_max = e.value("layered_k_max", ev.layered_k_max);
            ev.proximity_r_max = e.value("proximity_r_max", ev.proximity_r_max);
            ev.test_fraction = e.value("test_fraction", ev.test_fraction);
            ev.perturbations.steps = e.value("perturbation_steps", ev.perturbations.steps);
            ev.perturbations.reps = e.value("perturbation_reps", ev.perturbations.reps);
            ev.perturbations.include_mixed = e.value("perturbation_mixed", ev.perturbations.include_mixed);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    validate(cfg);
    return cfg;
}

void validate(const RunConfig& cfg) {
    if (cfg.grid.empty()) throw ConfigError("run config: grid is empty");
    if (cfg.parallelism < 1) throw ConfigError("run config: parallelism must be at least 1");
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw ConfigError("run config: alpha must lie in (0, 1)");
    if (!(cfg.budget_s > 0.0)) throw ConfigError("run config: budget_s must be positive");
    if (!(cfg.evaluation.test_fraction > 0.0 && cfg.evaluation.test_fraction < 1.0))
        throw ConfigError("run config: test_fraction must lie in (0, 1)");
    for (const auto& c : cfg.grid) {
        if (c.feature_count < 1) throw ConfigError("run config: F must be at least 1");
        if (!(c.density >= 0.0 && c.density <= 1.0)) throw ConfigError("run config: density must lie in [0, 1]");
        if (!(c.band.low >= 0.0 && c.band.low < c.band.high && c.band.high <= 1.0))
            throw ConfigError("run config: band must satisfy 0 <= low < high <= 1");
        if (c.n < 10) throw ConfigError("run config: n must be at least 10");
    }
}

RunConfig desk_config() {
    RunConfig cfg;
    for (ScmFamily fam : {ScmFamily::linear_gaussian, ScmFamily::additive_gaussian}) {
        cfg.grid.push_back({.feature_count = 40, .density = 0.2, .family = fam, .band = {}});
        cfg.grid.push_back({.feature_count = 100, .density = 0.04, .family = fam, .band = {}});
        cfg.grid.push_back({.feature_count = 200, .density = 0.02, .family = fam, .band = {}});
    }
    cfg.evaluation.perturbations.reps = 5;
    return cfg;
}

RunConfig full_benchmark_config() {
    RunConfig cfg;
    for (std::size_t f : {40, 60, 80, 100})
        for (double d : {0.2, 0.4})
            for (ScmFamily fam : kAllFamilies)
                cfg.grid.push_back({.feature_count = f, .density = d, .family = fam, .band = {}, .tasks_per_cell = 25});
    for (std::size_t f : {200, 400, 600, 800, 1000})
        for (double d : {0.01, 0.02, 0.04})
            for (ScmFamily fam : kAllFamilies)
                cfg.grid.push_back({.feature_count = f, .density = d, .family = fam, .band = {}, .tasks_per_cell = 25});
    return cfg;
}

std::vector<TaskPlan> plan_tasks(const RunConfig& cfg) {
    std::vector<TaskPlan> out;
    for (std::size_t ci = 0; ci < cfg.grid.size(); ++ci) {
        const GridCell& c = cfg.grid[ci];
        const std::string cell_key = cell_to_json(c).dump();
        for (std::size_t rep = 0; rep < c.tasks_per_cell; ++rep) {
            TaskPlan p;
            p.config = {c.feature_count, c.density, c.family, c.band, c.n, c.coeff_range, c.noise_std,
                        derive_seed(cfg.master_seed, cell_key, rep)};
            p.task_id = make_task_id(p.config);
            p.cell = ci;
            p.replicate = rep;
            out.push_back(std::move(p));
        }
    }
    return out;
}

// ---- JSONL --------------------------------------------------------------------

JsonlWriter::JsonlWriter(const std::string& path, bool truncate) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    out_.open(path, std::ios::binary | (truncate ? std::ios::trunc : std::ios::app));
    if (!out_) throw std::runtime_error("cannot open " + path + " for writing");
}

void JsonlWriter::append(const json& record) {
    const std::string line = record.dump() + "\n";
    std::lock_guard lock(mutex_);
    out_.write(line.data(), static_cast<std::streamsize>(line.size()));
    out_.flush();
    if (!out_) throw std::runtime_error("JSONL append failed");
}

std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    std::vector<json> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) break;  // no terminator: truncated write
        const std::string_view line(text.data() + pos, nl - pos);
        const bool last = nl + 1 >= text.size();
        pos = nl + 1;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            if (last) break;
            throw std::runtime_error(path + ": corrupt record before end of file");
        }
        out.push_back(std::move(j));
    }
    return out;
}

// ---- generate -----------------------------------------------------------------

namespace {

const char* const kBundleFiles[] = {"dag.json", "scm.json", "meta.json", "data.csv"};

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << text;
    }
    fs::rename(tmp, p);
}

std::string hex16(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::optional<std::string> bundle_checksum(const fs::path& dir) {
    std::uint64_t h = fnv1a("");
    for (const char* name : kBundleFiles) {
        const fs::path p = dir / name;
        if (!fs::exists(p)) return std::nullopt;
        h = fnv1a(name, h);
        h = fnv1a(read_text(p), h);
    }
    return hex16(h);
}

json manifest_entry(const TaskPlan& plan, const TaskInstance& task, const std::string& checksum) {
    json e = meta_to_json(task);
    e["cell"] = plan.cell;
    e["replicate"] = plan.replicate;
    e["config"] = plan.config;
    e["path"] = "tasks/" + plan.task_id;
    e["checksum"] = checksum;
    return e;
}

json load_manifest(const fs::path& dir) {
    const fs::path p = dir / "manifest.json";
    if (!fs::exists(p)) throw std::runtime_error("missing " + p.string() + "; run generate first");
    return json::parse(read_text(p));
}

struct GenerateOutcome {
    std::optional<json> entry;
    std::string failure;
    bool skipped = false;
};

}  // namespace

GenerateSummary cmd_generate(const RunConfig& cfg) {
    validate(cfg);
    const fs::path root(cfg.output_dir);
    fs::create_directories(root / "tasks");

    std::map<std::string, json> previous;
    if (fs::exists(root / "manifest.json")) {
        const json old = json::parse(read_text(root / "manifest.json"), nullptr, false);
        if (!old.is_discarded() && old.contains("tasks"))
            for (const auto& e : old["tasks"]) previous.emplace(e.at("task_id").get<std::string>(), e);
    }

    const auto plans = plan_tasks(cfg);
    GenerateSummary summary;
    json tasks = json::array();
    json failures = json::array();

    auto work = [&](std::size_t i) {
        const TaskPlan& plan = plans[i];
        const fs::path dir = root / "tasks" / plan.task_id;
        GenerateOutcome out;
        if (fs::exists(dir)) {
            const auto sum = bundle_checksum(dir);
            auto it = previous.find(plan.task_id);
            if (sum && it != previous.end() && it->second.value("checksum", "") == *sum) {
                out.entry = it->second;
                out.skipped = true;
                return out;
            }
            if (sum && it == previous.end()) {
                // Bundle written by an interrupted run: keep it if it loads and
                // matches the plan.
                try {
                    const TaskInstance t = read_bundle(dir.string());
                    if (t.meta.task_id == plan.task_id) {
                        out.entry = manifest_entry(plan, t, *sum);
                        out.skipped = true;
                        return out;
                    }
                } catch (const std::exception&) {
                }
            }
        }
        try {
            const TaskInstance task = generate_task(plan.config);
            write_bundle(task, dir.string());
            out.entry = manifest_entry(plan, task, bundle_checksum(dir).value());
        } catch (const std::exception& e) {
            out.failure = e.what();
        }
        return out;
    };
    auto commit = [&](std::size_t i, GenerateOutcome out) {
        if (out.entry) {
            tasks.push_back(std::move(*out.entry));
            ++(out.skipped ? summary.skipped : summary.generated);
        } else {
            const TaskPlan& plan = plans[i];
            failures.push_back({{"cell", plan.cell}, {"replicate", plan.replicate}, {"config", plan.config},
                                {"error", out.failure}});
            summary.failures.push_back("cell " + std::to_string(plan.cell) + " replicate " +
                                       std::to_string(plan.replicate) + ": " + out.failure);
        }
    };
    ordered_parallel_for(plans.size(), cfg.parallelism, work, commit);

    json manifest{{"master_seed", cfg.master_seed}, {"grid", to_json(cfg)["grid"]}, {"tasks", tasks},
                  {"failures", failures}};
    write_text(root / "manifest.json", manifest.dump(2) + "\n");
    return summary;
}

// ---- discover -----------------------------------------------------------------

std::vector<RecoveryRow> recovery_table(const std::vector<json>& discovery,
                                        const std::map<std::string, json>& meta_by_task) {
    struct Acc {
        double f1 = 0, precision = 0, recall = 0, time = 0;
        std::size_t runs = 0, completed = 0;
    };
    std::map<std::pair<std::size_t, std::string>, Acc> acc;
    for (const auto& rec : discovery) {
        const std::string id = rec.at("task_id").get<std::string>();
        auto it = meta_by_task.find(id);
        if (it == meta_by_task.end()) throw std::runtime_error("discovery record for unknown task " + id);
        const auto f = it->second.at("F").get<std::size_t>();
        Acc& a = acc[{f, rec.at("method").get<std::string>()}];
        ++a.runs;
        a.time += rec.at("wall_time_s").get<double>();
        if (!rec.at("completed").get<bool>() || rec.at("mask").is_null()) continue;
        ++a.completed;
        const NodeSet mask(rec.at("mask").get<std::vector<NodeId>>());
        const NodeSet oracle(it->second.at("oracle_boundary").get<std::vector<NodeId>>());
        const MaskScore s = score_mask(mask, oracle);
        a.f1 += s.f1;
        a.precision += s.precision;
        a.recall += s.recall;
    }
    std::vector<RecoveryRow> out;
    for (const auto& [key, a] : acc) {
        RecoveryRow r;
        r.feature_count = key.first;
        r.method = key.second;
        r.runs = a.runs;
        r.completion = static_cast<double>(a.completed) / static_cast<double>(a.runs);
        r.time_s = a.time / static_cast<double>(a.runs);
        if (a.completed > 0) {
            const auto c = static_cast<double>(a.completed);
            r.f1 = a.f1 / c;
            r.precision = a.precision / c;
            r.recall = a.recall / c;
        } else {
            r.f1 = r.precision = r.recall = std::nan("");
        }
        out.push_back(r);
    }
    return out;
}

namespace {

std::map<std::string, json> meta_index(const json& manifest) {
    std::map<std::string, json> out;
    for (const auto& e : manifest.at("tasks")) out.emplace(e.at("task_id").get<std::string>(), e);
    return out;
}

std::string csv_num(double v) { return std::isfinite(v) ? fixed(v) : std::string(); }

void write_recovery_csv(const fs::path& path, const std::vector<RecoveryRow>& rows) {
    std::string out = "F,method,f1,precision,recall,time_s,completion\n";
    for (const auto& r : rows)
        out += std::to_string(r.feature_count) + "," + r.method + "," + csv_num(r.f1) + "," + csv_num(r.precision) +
               "," + csv_num(r.recall) + "," + csv_num(r.time_s) + "," + csv_num(r.completion) + "\n";
    write_text(path, out);
}

struct TaskOutput {
    std::vector<json> records;
    std::vector<std::string> failures;
};

}  // namespace

DiscoverSummary cmd_discover(const RunConfig& cfg, const std::string& bundle_dir) {
    validate(cfg);
    const fs::path bundles(bundle_dir);
    const json manifest = load_manifest(bundles);
    const auto& entries = manifest.at("tasks");
    const fs::path root(cfg.output_dir);
    fs::create_directories(root);
    JsonlWriter writer((root / "discovery.jsonl").string(), true);

    DiscoverSummary summary;
    std::vector<json> all;
    const DiscoveryOptions opts{.alpha = cfg.alpha, .budget_s = cfg.budget_s};
    const std::size_t count = cfg.methods.empty() ? 0 : entries.size();

    auto work = [&](std::size_t i) {
        TaskOutput out;
        const json& e = entries[i];
        const std::string id = e.at("task_id").get<std::string>();
        try {
            const TaskInstance task = read_bundle((bundles / e.at("path").get<std::string>()).string());
            for (DiscoveryMethod m : cfg.methods) {
                try {
                    const DiscoveryResult r = discover(m, task.data, task.target(), opts);
                    json rec = discovery_record(id, r);
                    rec["F"] = task.meta.feature_count;
                    out.records.push_back(std::move(rec));
                } catch (const std::exception& ex) {
                    out.failures.push_back(id + " " + std::string(to_string(m)) + ": " + ex.what());
                }
            }
        } catch (const std::exception& ex) {
            out.failures.push_back(id + ": " + ex.what());
        }
        return out;
    };
    auto commit = [&](std::size_t, TaskOutput out) {
        for (auto& rec : out.records) {
            writer.append(rec);
            ++summary.runs;
            if (rec.at("completed").get<bool>()) ++summary.completed;
            all.push_back(std::move(rec));
        }
        for (auto& f : out.failures) {
            std::cerr << "discover: " << f << "\n";
            summary.failures.push_back(std::move(f));
        }
    };
    ordered_parallel_for(count, cfg.parallelism, work, commit);

    write_recovery_csv(root / "discovery_summary.csv", recovery_table(all, meta_index(manifest)));
    return summary;
}

// ---- evaluate -----------------------------------------------------------------

std::string_view to_string(MaskSource s) noexcept {
    switch (s) {
        case MaskSource::all: return "all";
        case MaskSource::oracle: return "oracle";
        case MaskSource::estimated: return "estimated";
        case MaskSource::layered: return "layered";
        case MaskSource::proximity: return "proximity";
        case MaskSource::perturbed: return "perturbed";
    }
    return "?";
}

MaskSource parse_mask_source(std::string_view tag) {
    for (MaskSource s : {MaskSource::all, MaskSource::oracle, MaskSource::estimated, MaskSource::layered,
                         MaskSource::proximity, MaskSource::perturbed})
        if (to_string(s) == tag) return s;
    throw ConfigError("unknown mask source '" + std::string(tag) + "'");
}

EvaluateSummary cmd_evaluate(const RunConfig& cfg, const std::string& bundle_dir,
                             const std::vector<MaskSource>& sources) {
    validate(cfg);
    const fs::path bundles(bundle_dir);
    const json manifest = load_manifest(bundles);
    const auto& entries = manifest.at("tasks");
    const fs::path root(cfg.output_dir);

    std::vector<MaskSource> srcs;
    for (MaskSource s : sources)
        if (std::find(srcs.begin(), srcs.end(), s) == srcs.end()) srcs.push_back(s);

    // Estimated masks come from the discovery log, keyed by task.
    std::map<std::string, std::vector<json>> discovered;
    if (std::find(srcs.begin(), srcs.end(), MaskSource::estimated) != srcs.end()) {
        const fs::path p = root / "discovery.jsonl";
        if (!fs::exists(p)) throw std::runtime_error("missing " + p.string() + "; run discover first");
        for (auto& rec : read_jsonl(p.string())) discovered[rec.at("task_id").get<std::string>()].push_back(rec);
    }

    std::vector<std::unique_ptr<JsonlWriter>> writers;
    for (MaskSource s : srcs)
        writers.push_back(
            std::make_unique<JsonlWriter>((root / "evaluations" / (std::string(to_string(s)) + ".jsonl")).string(), true));

    const MaskEvaluator evaluator(FitSettings{}, cfg.evaluation.test_fraction);
    const auto& ev = cfg.evaluation;
    EvaluateSummary summary;

    using PerSource = std::vector<std::vector<json>>;
    struct Out {
        PerSource records;
        std::vector<std::string> failures;
    };

    auto work = [&](std::size_t i) {
        Out out;
        out.records.resize(srcs.size());
        const json& e = entries[i];
        const std::string id = e.at("task_id").get<std::string>();
        try {
            const TaskInstance task = read_bundle((bundles / e.at("path").get<std::string>()).string());
            const Seed split_seed = split_seed_for(id);
            const NodeId y = task.target();
            const std::vector<NodeId> features = task.dag.features();
            const FeatureMask all_mask(features);
            for (std::size_t si = 0; si < srcs.size(); ++si) {
                auto& sink = out.records[si];
                for (Regressor reg : cfg.regressors) {
                    auto emit = [&](const FeatureMask& mask, const std::string& kind, const std::string& method = {}) {
                        EvalRecord r = evaluator.evaluate(task, reg, mask, split_seed, kind);
                        r.method = method;
                        sink.push_back(eval_record_to_json(r));
                    };
                    try {
                        switch (srcs[si]) {
                            case MaskSource::all: emit(all_mask, "all"); break;
                            case MaskSource::oracle: emit(task.oracle_boundary, "oracle"); break;
                            case MaskSource::estimated: {
                                auto it = discovered.find(id);
                                if (it == discovered.end()) break;
                                for (const auto& rec : it->second) {
                                    if (!rec.at("completed").get<bool>() || rec.at("mask").is_null()) continue;
                                    emit(FeatureMask(rec.at("mask").get<std::vector<NodeId>>()), "estimated",
                                         rec.at("method").get<std::string>());
                                }
                                break;
                            }
                            case MaskSource::layered: {
                                const auto layers = layered_blankets(task.dag, y, ev.layered_k_max);
                                for (std::size_t k = 0; k < layers.size(); ++k)
                                    emit(layers[k], "layered_" + std::to_string(k + 1));
                                break;
                            }
                            case MaskSource::proximity:
                                for (std::size_t r = 1; r <= ev.proximity_r_max; ++r)
                                    emit(proximity_mask(task.dag, y, r), "proximity_" + std::to_string(r));
                                break;
                            case MaskSource::perturbed: {
                                const auto grid = perturbation_grid(task.oracle_boundary.size(),
                                                                    features.size() - task.oracle_boundary.size(),
                                                                    ev.perturbations);
                                for (const auto& p : grid)
                                    emit(apply_perturbation(task.oracle_boundary, features, p, task.meta.seed),
                                         "perturbed");
                                break;
                            }
                        }
                    } catch (const std::exception& ex) {
                        out.failures.push_back(id + " " + std::string(to_string(srcs[si])) + " " +
                                               std::string(to_string(reg)) + ": " + ex.what());
                    }
                }
            }
        } catch (const std::exception& ex) {
            out.failures.push_back(id + ": " + ex.what());
        }
        return out;
    };
    auto commit = [&](std::size_t, Out out) {
        for (std::size_t si = 0; si < srcs.size(); ++si)
            for (const auto& rec : out.records[si]) {
                writers[si]->append(rec);
                ++summary.records;
            }
        for (auto& f : out.failures) {
            std::cerr << "evaluate: " << f << "\n";
            summary.failures.push_back(std::move(f));
        }
    };
    ordered_parallel_for(entries.size(), cfg.parallelism, work, commit);
    return summary;
}

// ---- report -------------------------------------------------------------------

double quantile(std::vector<double> values, double q) {
    if (values.empty()) return std::nan("");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double t = pos - static_cast<double>(lo);
    return values[lo] + t * (values[hi] - values[lo]);
}

namespace {

std::string win_key(const EvalRecord& r) { return r.mask_kind == "estimated" ? "estimated:" + r.method : r.mask_kind; }

}  // namespace

ReportSummary cmd_report(const std::string& records_dir, double grid_step) {
    const fs::path root(records_dir);
    if (!fs::exists(root)) throw std::runtime_error("records directory " + records_dir + " does not exist");
    const fs::path out_dir = root / "report";
    fs::create_directories(out_dir / "maps");
    ReportSummary summary;
    auto emit = [&](const fs::path& p, const std::string& text) {
        write_text(p, text);
        summary.files.push_back(fs::relative(p, root).string());
    };

    std::map<std::string, json> meta;
    if (fs::exists(root / "manifest.json"))
        meta = meta_index(load_manifest(root));
    else
        summary.notes.push_back("missing " + (root / "manifest.json").string() + "; attribution and recovery skipped");

    std::vector<EvalRecord> records;
    const fs::path eval_dir = root / "evaluations";
    if (fs::exists(eval_dir)) {
        std::vector<fs::path> files;
        for (const auto& f : fs::directory_iterator(eval_dir))
            if (f.path().extension() == ".jsonl") files.push_back(f.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files)
            for (const auto& j : read_jsonl(f.string())) records.push_back(eval_record_from_json(j));
    } else {
        summary.notes.push_back("missing " + eval_dir.string() + "; evaluation tables are header-only");
    }

    std::vector<json> discovery;
    if (fs::exists(root / "discovery.jsonl"))
        discovery = read_jsonl((root / "discovery.jsonl").string());
    else
        summary.notes.push_back("missing " + (root / "discovery.jsonl").string() + "; recovery columns empty");

    // (a) median relative MB gap per (F, regressor)
    {
        std::map<std::pair<std::size_t, std::string>, std::vector<const EvalRecord*>> groups;
        for (const auto& r : records)
            if (r.mask_kind == "oracle") groups[{r.feature_count, std::string(to_string(r.regressor))}].push_back(&r);
        std::string out = "F,regressor,tasks,median_gap_rel,q25_gap_rel,q75_gap_rel,median_gap_abs\n";
        for (const auto& [key, rs] : groups) {
            std::vector<double> rel, abs;
            for (const auto* r : rs) {
                rel.push_back(r->gap_rel);
                abs.push_back(r->gap_abs);
            }
            out += std::to_string(key.first) + "," + key.second + "," + std::to_string(rs.size()) + "," +
                   csv_num(quantile(rel, 0.5)) + "," + csv_num(quantile(rel, 0.25)) + "," +
                   csv_num(quantile(rel, 0.75)) + "," + csv_num(quantile(abs, 0.5)) + "\n";
        }
        emit(out_dir / "gap_by_F.csv", out);
    }

    // win rates against all features; ties are non-wins
    std::map<std::tuple<std::size_t, std::string, std::string>, std::pair<std::size_t, std::size_t>> wins;
    for (const auto& r : records) {
        if (r.mask_kind == "all" || r.mask_kind == "perturbed") continue;
        auto& w = wins[{r.feature_count, win_key(r), std::string(to_string(r.regressor))}];
        ++w.second;
        if (r.rmse_mask < r.rmse_all) ++w.first;
    }
    {
        std::string out = "F,mask,regressor,win_rate,records\n";
        for (const auto& [key, w] : wins)
            out += std::to_string(std::get<0>(key)) + "," + std::get<1>(key) + "," + std::get<2>(key) + "," +
                   csv_num(static_cast<double>(w.first) / static_cast<double>(w.second)) + "," +
                   std::to_string(w.second) + "\n";
        emit(out_dir / "win_rates.csv", out);
    }

    // (b) recovery joined with estimated-mask win rates
    {
        std::vector<RecoveryRow> recovery;
        if (!meta.empty()) recovery = recovery_table(discovery, meta);
        std::set<std::string> regs;
        for (const auto& r : records) regs.insert(std::string(to_string(r.regressor)));
        std::string out = "F,method,regressor,f1,precision,recall,win_rate,time_s,completion\n";
        for (const auto& row : recovery) {
            auto line = [&](const std::string& reg, double wr) {
                out += std::to_string(row.feature_count) + "," + row.method + "," + reg + "," + csv_num(row.f1) + "," +
                       csv_num(row.precision) + "," + csv_num(row.recall) + "," + csv_num(wr) + "," +
                       csv_num(row.time_s) + "," + csv_num(row.completion) + "\n";
            };
            bool any = false;
            for (const auto& reg : regs) {
                auto it = wins.find({row.feature_count, "estimated:" + row.method, reg});
                if (it == wins.end()) continue;
                any = true;
                line(reg, static_cast<double>(it->second.first) / static_cast<double>(it->second.second));
            }
            if (!any) line("", std::nan(""));
        }
        emit(out_dir / "table2.csv", out);
    }

    // (c) cost ratio per (F, regressor)
    std::map<std::pair<std::size_t, Regressor>, std::vector<EvalRecord>> by_cell;
    for (const auto& r : records)
        if (r.mask_kind != "all") by_cell[{r.feature_count, r.regressor}].push_back(r);
    {
        std::string out = "F,regressor,alpha_fn,alpha_fp,ratio,fit_r2,records\n";
        for (const auto& [key, rs] : by_cell) {
            std::vector<EvalRecord> use;
            for (const auto& r : rs)
                if (r.mask_kind == "perturbed" || r.mask_kind == "oracle") use.push_back(r);
            try {
                const CostFit c = fit_cost_coefficients(use);
                out += std::to_string(key.first) + "," + std::string(to_string(key.second)) + "," + csv_num(c.alpha_fn) +
                       "," + csv_num(c.alpha_fp) + "," + csv_num(c.ratio) + "," + csv_num(c.fit_r2) + "," +
                       std::to_string(c.records) + "\n";
            } catch (const EvalError& e) {
                summary.notes.push_back("cost ratio F=" + std::to_string(key.first) + " " +
                                        std::string(to_string(key.second)) + ": " + e.what());
            }
        }
        emit(out_dir / "cost_ratio.csv", out);
    }

    // (d) attribution of the relative gap
    {
        std::vector<AttributionRow> rows;
        for (const auto& r : records) {
            if (r.mask_kind != "oracle") continue;
            auto it = meta.find(r.task_id);
            if (it == meta.end()) continue;
            rows.push_back({r.gap_rel, it->second.at("redundancy_ratio").get<double>(), r.feature_count,
                            it->second.at("density").get<double>(), it->second.at("family").get<std::string>(),
                            std::string(to_string(r.regressor))});
        }
        std::string coef = "term,coefficient\n";
        std::string r2 = "model,adj_r2,observations\n";
        if (!rows.empty()) {
            try {
                const AttributionFit a = fit_attribution(rows);
                for (const auto& [term, v] : a.coefficients) coef += term + "," + csv_num(v) + "\n";
                r2 += "full," + csv_num(a.r2_adjusted) + "," + std::to_string(a.observations) + "\n";
                for (const auto& [factor, v] : a.univariate_r2_adjusted)
                    r2 += factor + "," + csv_num(v) + "," + std::to_string(a.observations) + "\n";
            } catch (const std::exception& e) {
                summary.notes.push_back(std::string("attribution: ") + e.what());
            }
        }
        emit(out_dir / "attribution.csv", coef);
        emit(out_dir / "attribution_r2.csv", r2);
    }

    // (e) reward maps and mask-expansion trajectories
    {
        std::string fits = "F,regressor,intercept,coef_tp,coef_fn,coef_fp_over_n,r2,compositions,boundary_size\n";
        for (const auto& [key, rs] : by_cell) {
            std::vector<double> sizes;
            for (const auto& r : rs)
                if (r.mask_kind == "oracle") sizes.push_back(static_cast<double>(r.mask.size()));
            if (sizes.empty()) continue;
            const auto b = static_cast<std::size_t>(std::max(1.0, std::round(quantile(sizes, 0.5))));
            try {
                const RewardFit fit = fit_reward_model(rs, key.second);
                fits += std::to_string(key.first) + "," + std::string(to_string(key.second)) + "," +
                        csv_num(fit.intercept) + "," + csv_num(fit.coef_tp) + "," + csv_num(fit.coef_fn) + "," +
                        csv_num(fit.coef_fp_over_n) + "," + csv_num(fit.r2) + "," + std::to_string(fit.compositions) +
                        "," + std::to_string(b) + "\n";
                const GainSurface s = gain_surface(fit, b, grid_step);
                const std::string stem = "F" + std::to_string(key.first) + "_" + std::string(to_string(key.second));
                emit(out_dir / "maps" / ("surface_" + stem + ".csv"), surface_csv(s));
                emit(out_dir / "maps" / ("contour_" + stem + ".json"), points_json(s.zero_contour).dump() + "\n");
            } catch (const std::exception& e) {
                summary.notes.push_back("reward map F=" + std::to_string(key.first) + " " +
                                        std::string(to_string(key.second)) + ": " + e.what());
            }
        }
        emit(out_dir / "reward_fit.csv", fits);

        // Mean (precision, recall) per expansion step.
        std::map<std::size_t, std::map<std::string, std::map<std::size_t, std::pair<PrPoint, std::size_t>>>> traj;
        for (const auto& r : records) {
            for (const std::string prefix : {"layered_", "proximity_"}) {
                if (r.mask_kind.rfind(prefix, 0) != 0) continue;
                const auto step = static_cast<std::size_t>(std::stoul(r.mask_kind.substr(prefix.size())));
                auto& cell = traj[r.feature_count][prefix.substr(0, prefix.size() - 1)][step];
                cell.first.precision += r.score.precision;
                cell.first.recall += r.score.recall;
                ++cell.second;
            }
        }
        for (const auto& [f, kinds] : traj) {
            json j = json::object();
            for (const auto& [kind, steps] : kinds) {
                std::vector<PrPoint> pts;
                for (const auto& [step, acc] : steps)
                    pts.push_back({acc.first.precision / static_cast<double>(acc.second),
                                   acc.first.recall / static_cast<double>(acc.second)});
                j[kind] = points_json(pts);
            }
            emit(out_dir / "maps" / ("trajectory_F" + std::to_string(f) + ".json"), j.dump() + "\n");
        }
    }
    return summary;
}

}  // namespace blanket
