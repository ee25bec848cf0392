#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "blanket/graph.hpp"
#include "blanket/seed.hpp"
#include "blanket/stats.hpp"

namespace blanket {

enum class ScmFamily {
    linear_gaussian,
    linear_nongaussian,
    additive_gaussian,
    additive_nongaussian,
    post_nonlinear,
    heteroskedastic,
};

std::string_view to_string(ScmFamily f) noexcept;
ScmFamily parse_family(std::string_view tag);
inline constexpr ScmFamily kAllFamilies[] = {
    ScmFamily::linear_gaussian,   ScmFamily::linear_nongaussian, ScmFamily::additive_gaussian,
    ScmFamily::additive_nongaussian, ScmFamily::post_nonlinear,  ScmFamily::heteroskedastic,
};

enum class Basis { tanh, sin, square, leaky_softplus };
enum class NoiseLaw { gaussian, uniform, laplace };

std::string_view to_string(Basis b) noexcept;
std::string_view to_string(NoiseLaw n) noexcept;
double apply_basis(Basis b, double x) noexcept;

/// Smallest absolute edge coefficient.
inline constexpr double kMinCoefficient = 0.3;

/// Mechanism of one node. Vectors are aligned with dag.parents(node).
struct NodeMechanism {
    std::vector<double> weights;
    std::vector<Basis> bases;           // additive, post-nonlinear, heteroskedastic
    std::vector<double> scale_weights;  // heteroskedastic noise scale
    NoiseLaw noise = NoiseLaw::gaussian;
    double noise_std = 0.5;

    friend bool operator==(const NodeMechanism&, const NodeMechanism&) = default;
};

struct ScmSpec {
    ScmFamily family = ScmFamily::linear_gaussian;
    double coeff_range = 1.0;
    double noise_std = 0.5;
    std::vector<NodeMechanism> nodes;

    friend bool operator==(const ScmSpec&, const ScmSpec&) = default;
};

void to_json(nlohmann::json& j, const ScmSpec& spec);
ScmSpec scm_spec_from_json(const nlohmann::json& j);

class ScmError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Draws edge coefficients uniformly from ±[0.3, coeff_range], plus basis
/// tags and noise laws as the family requires.
ScmSpec build_scm(const Dag& dag, ScmFamily family, double coeff_range, double noise_std, Seed seed);

/// n x node_count samples, column c = node c. Each node is assigned from
/// already-standardized parents and then standardized (sample mean 0,
/// sample sd 1). A degenerate column gets one noise resample before failing.
Eigen::MatrixXd sample(const ScmSpec& spec, const Dag& dag, std::size_t n, Seed seed);

struct MbBand {
    double low = 0.10;
    double high = 0.90;
};

/// Uniform choice among nodes whose MB ratio lies in [low, high].
std::optional<NodeId> select_target(const Dag& dag, MbBand band, Seed seed);

struct TaskConfig {
    std::size_t feature_count = 40;
    double density = 0.2;
    ScmFamily family = ScmFamily::linear_gaussian;
    MbBand band;
    std::size_t n = 1000;
    double coeff_range = 1.0;
    double noise_std = 0.5;
    Seed seed = 0;
};

void to_json(nlohmann::json& j, const TaskConfig& cfg);
TaskConfig task_config_from_json(const nlohmann::json& j);

struct TaskMeta {
    std::size_t feature_count = 0;
    double density = 0.0;
    ScmFamily family = ScmFamily::linear_gaussian;
    double mb_ratio = 0.0;
    double redundancy_ratio = 0.0;
    Seed seed = 0;
    std::string task_id;
    std::size_t n = 0;
};

struct TaskInstance {
    Dag dag;
    ScmSpec spec;
    DataMatrix data;  // columns are node indices 0..F
    NodeSet oracle_boundary;
    TaskMeta meta;

    [[nodiscard]] NodeId target() const noexcept { return dag.target(); }
};

class GenerationError : public std::runtime_error {
public:
    GenerationError(const TaskConfig& cfg, const std::string& reason);
    [[nodiscard]] const TaskConfig& config() const noexcept { return config_; }

private:
    TaskConfig config_;
};

inline constexpr std::size_t kMaxGenerationRetries = 100;

/// Deterministic identifier derived from the full config.
std::string make_task_id(const TaskConfig& cfg);

/// DAG -> target -> mechanisms -> samples, retrying with fresh sub-seeds
/// until a target in the band exists.
TaskInstance generate_task(const TaskConfig& cfg);

// ---- task bundles -------------------------------------------------------------

/// Writes dag.json, data.csv, meta.json and scm.json into `dir`.
void write_bundle(const TaskInstance& task, const std::string& dir);
TaskInstance read_bundle(const std::string& dir);

/// CSV with a header of node indices and shortest round-trip decimals.
std::string format_data_csv(const DataMatrix& data);
DataMatrix parse_data_csv(std::string_view text);

nlohmann::json meta_to_json(const TaskInstance& task);

}  // namespace blanket
