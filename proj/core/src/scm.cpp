#include "blanket/scm.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace blanket {

namespace fs = std::filesystem;

// ---- tags -------------------------------------------------------------------

std::string_view to_string(ScmFamily f) noexcept {
    switch (f) {
        case ScmFamily::linear_gaussian: return "linear_gaussian";
        case ScmFamily::linear_nongaussian: return "linear_nongaussian";
        case ScmFamily::additive_gaussian: return "additive_gaussian";
        case ScmFamily::additive_nongaussian: return "additive_nongaussian";
        case ScmFamily::post_nonlinear: return "post_nonlinear";
        case ScmFamily::heteroskedastic: return "heteroskedastic";
    }
    return "unknown";
}

ScmFamily parse_family(std::string_view tag) {
    for (ScmFamily f : kAllFamilies)
        if (to_string(f) == tag) return f;
    throw ScmError("unknown SCM family tag '" + std::string(tag) + "'");
}

std::string_view to_string(Basis b) noexcept {
    switch (b) {
        case Basis::tanh: return "tanh";
        case Basis::sin: return "sin";
        case Basis::square: return "square";
        case Basis::leaky_softplus: return "leaky_softplus";
    }
    return "unknown";
}

std::string_view to_string(NoiseLaw n) noexcept {
    switch (n) {
        case NoiseLaw::gaussian: return "gaussian";
        case NoiseLaw::uniform: return "uniform";
        case NoiseLaw::laplace: return "laplace";
    }
    return "unknown";
}

namespace {

double softplus(double x) noexcept { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

/// Monotone outer function of the post-nonlinear family.
double post_squash(double u) noexcept { return std::copysign(std::pow(std::abs(u), 0.7), u); }

template <typename E>
E parse_enum(std::string_view tag, std::initializer_list<E> values, const char* what) {
    for (E v : values)
        if (to_string(v) == tag) return v;
    throw ScmError(std::string("unknown ") + what + " tag '" + std::string(tag) + "'");
}

bool is_linear(ScmFamily f) { return f == ScmFamily::linear_gaussian || f == ScmFamily::linear_nongaussian; }
bool is_nongaussian(ScmFamily f) {
    return f == ScmFamily::linear_nongaussian || f == ScmFamily::additive_nongaussian;
}

double draw_coefficient(Rng& rng, double coeff_range) {
    std::uniform_real_distribution<double> magnitude(kMinCoefficient, coeff_range);
    std::bernoulli_distribution negative(0.5);
    const double w = magnitude(rng);
    return negative(rng) ? -w : w;
}

double draw_noise(Rng& rng, NoiseLaw law, double sd) {
    switch (law) {
        case NoiseLaw::gaussian: return std::normal_distribution<double>(0.0, sd)(rng);
        case NoiseLaw::uniform: {
            const double half_width = sd * std::sqrt(3.0);
            return std::uniform_real_distribution<double>(-half_width, half_width)(rng);
        }
        case NoiseLaw::laplace: {
            // Difference of two exponentials with scale sd / sqrt(2).
            std::exponential_distribution<double> e(std::sqrt(2.0) / sd);
            return e(rng) - e(rng);
        }
    }
    return 0.0;
}

}  // namespace

double apply_basis(Basis b, double x) noexcept {
    switch (b) {
        case Basis::tanh: return std::tanh(x);
        case Basis::sin: return std::sin(x);
        case Basis::square: return x * x;
        case Basis::leaky_softplus: return softplus(x) + 0.1 * x;
    }
    return x;
}

// ---- mechanism json -----------------------------------------------------------

void to_json(nlohmann::json& j, const ScmSpec& spec) {
    auto nodes = nlohmann::json::array();
    for (const auto& m : spec.nodes) {
        std::vector<std::string> bases;
        for (Basis b : m.bases) bases.emplace_back(to_string(b));
        nodes.push_back({{"weights", m.weights},
                         {"bases", bases},
                         {"scale_weights", m.scale_weights},
                         {"noise", to_string(m.noise)},
                         {"noise_std", m.noise_std}});
    }
    j = nlohmann::json{{"family", to_string(spec.family)},
                       {"coeff_range", spec.coeff_range},
                       {"noise_std", spec.noise_std},
                       {"nodes", std::move(nodes)}};
}

ScmSpec scm_spec_from_json(const nlohmann::json& j) {
    ScmSpec spec;
    spec.family = parse_family(j.at("family").get<std::string>());
    spec.coeff_range = j.at("coeff_range").get<double>();
    spec.noise_std = j.at("noise_std").get<double>();
    for (const auto& node : j.at("nodes")) {
        NodeMechanism m;
        m.weights = node.at("weights").get<std::vector<double>>();
        for (const auto& b : node.at("bases"))
            m.bases.push_back(parse_enum(b.get<std::string>(), {Basis::tanh, Basis::sin, Basis::square, Basis::leaky_softplus},
                                         "basis"));
        m.scale_weights = node.at("scale_weights").get<std::vector<double>>();
        m.noise = parse_enum(node.at("noise").get<std::string>(),
                             {NoiseLaw::gaussian, NoiseLaw::uniform, NoiseLaw::laplace}, "noise");
        m.noise_std = node.at("noise_std").get<double>();
        spec.nodes.push_back(std::move(m));
    }
    return spec;
}

// ---- mechanisms ---------------------------------------------------------------

ScmSpec build_scm(const Dag& dag, ScmFamily family, double coeff_range, double noise_std, Seed seed) {
    if (!(coeff_range >= kMinCoefficient)) throw ScmError("build_scm: coeff_range must be >= 0.3");
    if (!(noise_std > 0.0)) throw ScmError("build_scm: noise_std must be positive");

    ScmSpec spec{family, coeff_range, noise_std, {}};
    spec.nodes.resize(dag.node_count());
    Rng rng = make_rng(seed);
    const bool parity = (derive_seed(seed, "noise-parity") & 1U) != 0;
    std::uniform_int_distribution<int> basis_pick(0, 3);

    for (NodeId v = 0; v < dag.node_count(); ++v) {
        NodeMechanism& m = spec.nodes[v];
        m.noise_std = noise_std;
        if (is_nongaussian(family)) m.noise = ((v % 2 == 0) != parity) ? NoiseLaw::uniform : NoiseLaw::laplace;
        for (std::size_t k = 0; k < dag.parents(v).size(); ++k) {
            m.weights.push_back(draw_coefficient(rng, coeff_range));
            if (!is_linear(family)) m.bases.push_back(static_cast<Basis>(basis_pick(rng)));
            if (family == ScmFamily::heteroskedastic) m.scale_weights.push_back(draw_coefficient(rng, coeff_range));
        }
    }
    return spec;
}

namespace {

void assign_column(const ScmSpec& spec, const Dag& dag, NodeId v, const Eigen::MatrixXd& data, Rng& rng,
                   Eigen::Ref<Eigen::VectorXd> out) {
    const NodeMechanism& m = spec.nodes[v];
    const auto& parents = dag.parents(v);
    const Eigen::Index n = data.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
        double mean = 0.0;
        double scale_arg = 0.0;
        for (std::size_t k = 0; k < parents.size(); ++k) {
            const double x = data(i, static_cast<Eigen::Index>(parents[k]));
            mean += m.weights[k] * (m.bases.empty() ? x : apply_basis(m.bases[k], x));
            if (!m.scale_weights.empty()) scale_arg += m.scale_weights[k] * x;
        }
        switch (spec.family) {
            case ScmFamily::heteroskedastic: {
                const double sd = m.noise_std * (0.5 + softplus(scale_arg));
                out(i) = mean + draw_noise(rng, NoiseLaw::gaussian, sd);
                break;
            }
            case ScmFamily::post_nonlinear: out(i) = post_squash(mean + draw_noise(rng, m.noise, m.noise_std)); break;
            default: out(i) = mean + draw_noise(rng, m.noise, m.noise_std); break;
        }
    }
}

bool standardize_in_place(Eigen::Ref<Eigen::VectorXd> col) {
    const auto n = static_cast<double>(col.size());
    const double mean = col.mean();
    col.array() -= mean;
    const double sd = std::sqrt(col.squaredNorm() / (n - 1.0));
    if (!(sd > 1e-12) || !std::isfinite(sd)) return false;
    col /= sd;
    // Second pass removes the rounding left in the mean by the first.
    col.array() -= col.mean();
    col /= std::sqrt(col.squaredNorm() / (n - 1.0));
    return true;
}

}  // namespace

Eigen::MatrixXd sample(const ScmSpec& spec, const Dag& dag, std::size_t n, Seed seed) {
    if (n < 2) throw ScmError("sample: n must be >= 2");
    if (spec.nodes.size() != dag.node_count()) throw ScmError("sample: spec does not match the DAG");
    for (NodeId v = 0; v < dag.node_count(); ++v)
        if (spec.nodes[v].weights.size() != dag.parents(v).size()) throw ScmError("sample: spec does not match the DAG");

    Eigen::MatrixXd data = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dag.node_count()));
    for (NodeId v : dag.topological_order()) {
        auto col = data.col(static_cast<Eigen::Index>(v));
        bool ok = false;
        for (std::uint64_t attempt = 0; attempt < 2 && !ok; ++attempt) {
            Rng rng = make_rng(derive_seed(seed, attempt == 0 ? "noise" : "noise-resample", v));
            assign_column(spec, dag, v, data, rng, col);
            ok = col.allFinite() && standardize_in_place(col);
        }
        if (!ok) throw ScmError("sample: degenerate column for node " + std::to_string(v) + " after resampling noise");
    }
    return data;
}

std::optional<NodeId> select_target(const Dag& dag, MbBand band, Seed seed) {
    if (!(band.low >= 0.0 && band.low < band.high && band.high <= 1.0))
        throw ScmError("select_target: band must satisfy 0 <= low < high <= 1");
    std::vector<NodeId> qualifying;
    for (NodeId v = 0; v < dag.node_count(); ++v) {
        const double r = mb_ratio(dag, v);
        if (r >= band.low && r <= band.high) qualifying.push_back(v);
    }
    if (qualifying.empty()) return std::nullopt;
    Rng rng = make_rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, qualifying.size() - 1);
    return qualifying[pick(rng)];
}

// ---- tasks --------------------------------------------------------------------

void to_json(nlohmann::json& j, const TaskConfig& cfg) {
    j = nlohmann::json{{"F", cfg.feature_count},
                       {"density", cfg.density},
                       {"family", to_string(cfg.family)},
                       {"band", {cfg.band.low, cfg.band.high}},
                       {"n", cfg.n},
                       {"coeff_range", cfg.coeff_range},
                       {"noise_std", cfg.noise_std},
                       {"seed", cfg.seed}};
}

TaskConfig task_config_from_json(const nlohmann::json& j) {
    TaskConfig cfg;
    cfg.feature_count = j.at("F").get<std::size_t>();
    cfg.density = j.at("density").get<double>();
    cfg.family = parse_family(j.at("family").get<std::string>());
    const auto band = j.at("band").get<std::vector<double>>();
    if (band.size() != 2) throw ScmError("task config: band must have two entries");
    cfg.band = {band[0], band[1]};
    cfg.n = j.value("n", cfg.n);
    cfg.coeff_range = j.value("coeff_range", cfg.coeff_range);
    cfg.noise_std = j.value("noise_std", cfg.noise_std);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

GenerationError::GenerationError(const TaskConfig& cfg, const std::string& reason)
    : std::runtime_error("task generation failed: " + reason + "; config " + nlohmann::json(cfg).dump()),
      config_(cfg) {}

std::string make_task_id(const TaskConfig& cfg) {
    const std::uint64_t h = fnv1a(nlohmann::json(cfg).dump());
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    char density[32];
    std::snprintf(density, sizeof density, "%g", cfg.density);
    return std::string(to_string(cfg.family)) + "-F" + std::to_string(cfg.feature_count) + "-d" + density + "-" + hex;
}

TaskInstance generate_task(const TaskConfig& cfg) {
    if (cfg.feature_count < 1) throw GenerationError(cfg, "F must be positive");
    for (std::uint64_t attempt = 0; attempt < kMaxGenerationRetries; ++attempt) {
        Dag dag = generate_er_dag(cfg.feature_count + 1, cfg.density, derive_seed(cfg.seed, "dag", attempt));
        const auto target = select_target(dag, cfg.band, derive_seed(cfg.seed, "target", attempt));
        if (!target) continue;
        dag = dag.with_target(*target);
        ScmSpec spec = build_scm(dag, cfg.family, cfg.coeff_range, cfg.noise_std, derive_seed(cfg.seed, "scm", attempt));
        Eigen::MatrixXd values;
        try {
            values = sample(spec, dag, cfg.n, derive_seed(cfg.seed, "sample", attempt));
        } catch (const ScmError&) {
            continue;
        }
        std::vector<NodeId> ids(dag.node_count());
        for (NodeId v = 0; v < ids.size(); ++v) ids[v] = v;

        TaskInstance task{dag, std::move(spec), DataMatrix(std::move(values), std::move(ids)),
                          markov_boundary(dag, *target), {}};
        task.meta.feature_count = cfg.feature_count;
        task.meta.density = cfg.density;
        task.meta.family = cfg.family;
        task.meta.mb_ratio = mb_ratio(dag);
        task.meta.redundancy_ratio = 1.0 - task.meta.mb_ratio;
        task.meta.seed = cfg.seed;
        task.meta.task_id = make_task_id(cfg);
        task.meta.n = cfg.n;
        return task;
    }
    throw GenerationError(cfg, "no qualifying target after " + std::to_string(kMaxGenerationRetries) + " retries");
}

// ---- bundles ------------------------------------------------------------------

std::string format_data_csv(const DataMatrix& data) {
    std::string out;
    out.reserve(static_cast<std::size_t>(data.rows() * data.cols()) * 22 + 64);
    for (std::size_t c = 0; c < data.column_ids().size(); ++c) {
        if (c) out += ',';
        out += std::to_string(data.column_ids()[c]);
    }
    out += '\n';
    char buf[64];
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
        for (Eigen::Index c = 0; c < data.cols(); ++c) {
            if (c) out += ',';
            auto res = std::to_chars(buf, buf + sizeof buf, data.values()(r, c));
            out.append(buf, res.ptr);
        }
        out += '\n';
    }
    return out;
}

DataMatrix parse_data_csv(std::string_view text) {
    auto next_line = [&text]() -> std::optional<std::string_view> {
        if (text.empty()) return std::nullopt;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        return line;
    };
    auto split_fields = [](std::string_view line) {
        std::vector<std::string_view> fields;
        std::size_t start = 0;
        while (true) {
            const auto comma = line.find(',', start);
            fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        return fields;
    };

    const auto header = next_line();
    if (!header || header->empty()) throw ScmError("data.csv: missing header");
    std::vector<NodeId> ids;
    for (auto f : split_fields(*header)) {
        NodeId id{};
        auto res = std::from_chars(f.data(), f.data() + f.size(), id);
        if (res.ec != std::errc{} || res.ptr != f.data() + f.size()) throw ScmError("data.csv: bad header field");
        ids.push_back(id);
    }
    std::vector<double> flat;
    std::size_t rows = 0;
    while (auto line = next_line()) {
        if (line->empty()) continue;
        const auto fields = split_fields(*line);
        if (fields.size() != ids.size()) throw ScmError("data.csv: row " + std::to_string(rows + 1) + " has wrong width");
        for (auto f : fields) {
            double v{};
            auto res = std::from_chars(f.data(), f.data() + f.size(), v);
            if (res.ec != std::errc{} || res.ptr != f.data() + f.size()) throw ScmError("data.csv: bad number");
            flat.push_back(v);
        }
        ++rows;
    }
    Eigen::MatrixXd values =
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            flat.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(ids.size()));
    return DataMatrix(std::move(values), std::move(ids));
}

nlohmann::json meta_to_json(const TaskInstance& task) {
    return nlohmann::json{{"task_id", task.meta.task_id},
                          {"F", task.meta.feature_count},
                          {"density", task.meta.density},
                          {"family", to_string(task.meta.family)},
                          {"mb_ratio", task.meta.mb_ratio},
                          {"redundancy_ratio", task.meta.redundancy_ratio},
                          {"seed", task.meta.seed},
                          {"n", task.meta.n},
                          {"target", task.target()},
                          {"oracle_boundary", task.oracle_boundary.members()}};
}

namespace {

void write_file(const fs::path& path, std::string_view content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ScmError("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw ScmError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ScmError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

void write_bundle(const TaskInstance& task, const std::string& dir) {
    const fs::path root(dir);
    fs::create_directories(root);
    write_file(root / "dag.json", nlohmann::json(task.dag).dump() + "\n");
    write_file(root / "scm.json", nlohmann::json(task.spec).dump() + "\n");
    write_file(root / "meta.json", meta_to_json(task).dump(2) + "\n");
    write_file(root / "data.csv", format_data_csv(task.data));
}

TaskInstance read_bundle(const std::string& dir) {
    const fs::path root(dir);
    const auto dag_json = nlohmann::json::parse(read_file(root / "dag.json"));
    const auto meta_json = nlohmann::json::parse(read_file(root / "meta.json"));
    Dag dag = dag_from_json(dag_json);
    ScmSpec spec;
    if (fs::exists(root / "scm.json")) spec = scm_spec_from_json(nlohmann::json::parse(read_file(root / "scm.json")));
    DataMatrix data = parse_data_csv(read_file(root / "data.csv"));
    if (static_cast<std::size_t>(data.cols()) != dag.node_count()) throw ScmError("bundle " + dir + ": data width does not match dag");

    TaskInstance task{dag, std::move(spec), std::move(data), node_set_from_json(meta_json.at("oracle_boundary")), {}};
    if (task.oracle_boundary != markov_boundary(dag, dag.target()))
        throw ScmError("bundle " + dir + ": oracle_boundary disagrees with dag.json");
    task.meta.task_id = meta_json.at("task_id").get<std::string>();
    task.meta.feature_count = meta_json.at("F").get<std::size_t>();
    task.meta.density = meta_json.at("density").get<double>();
    task.meta.family = parse_family(meta_json.at("family").get<std::string>());
    task.meta.mb_ratio = meta_json.at("mb_ratio").get<double>();
    task.meta.redundancy_ratio = meta_json.at("redundancy_ratio").get<double>();
    task.meta.seed = meta_json.at("seed").get<Seed>();
    task.meta.n = meta_json.at("n").get<std::size_t>();
    return task;
}

}  // namespace blanket
