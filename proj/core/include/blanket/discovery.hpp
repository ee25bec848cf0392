#pragma once

#include <chrono>
#include <map>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "blanket/graph.hpp"
#include "blanket/scm.hpp"
#include "blanket/stats.hpp"

namespace blanket {

enum class DiscoveryMethod { grow_shrink, hiton_mb };

std::string_view to_string(DiscoveryMethod m) noexcept;
DiscoveryMethod parse_method(std::string_view tag);

struct DiscoveryResult {
    std::optional<FeatureMask> mask;  // absent when the budget ran out
    DiscoveryMethod method = DiscoveryMethod::grow_shrink;
    std::size_t ci_test_count = 0;
    /// Tests whose conditioning set was too large for n; counted as dependent.
    std::size_t underpowered_tests = 0;
    double wall_time_s = 0.0;
    bool completed = false;
    double budget_s = 0.0;
};

struct DiscoveryOptions {
    double alpha = 0.05;
    double budget_s = 60.0;
    /// Largest conditioning subset HITON-MB searches.
    std::size_t max_cond = 3;
    /// HITON-MB: keep X in PC(target) only when target is also in PC(X).
    bool symmetry_check = false;
};

/// Counts and times CI tests against a correlation cache and enforces a
/// cooperative wall-clock budget between tests.
class CiOracle {
public:
    CiOracle(const DataMatrix& data, double alpha, double budget_s);

    /// True when x and y are judged dependent given z.
    bool dependent(NodeId x, NodeId y, std::span<const NodeId> z);
    /// Throws BudgetExceeded once the budget is spent.
    void check_budget() const;

    [[nodiscard]] double correlation(NodeId x, NodeId y) const { return cache_.correlation(x, y); }
    [[nodiscard]] std::size_t test_count() const noexcept { return tests_; }
    [[nodiscard]] std::size_t underpowered() const noexcept { return underpowered_; }
    [[nodiscard]] double elapsed_s() const;

    struct BudgetExceeded {};

private:
    CorrelationCache cache_;
    double alpha_;
    double budget_s_;
    std::chrono::steady_clock::time_point start_;
    std::size_t tests_ = 0;
    std::size_t underpowered_ = 0;
};

/// Candidates ordered by descending |marginal correlation| with the target,
/// ties by ascending index.
std::vector<NodeId> association_order(const CiOracle& ci, const DataMatrix& data, NodeId target);

DiscoveryResult grow_shrink(const DataMatrix& data, NodeId target, const DiscoveryOptions& opts = {});
DiscoveryResult hiton_mb(const DataMatrix& data, NodeId target, const DiscoveryOptions& opts = {});
DiscoveryResult discover(DiscoveryMethod method, const DataMatrix& data, NodeId target, const DiscoveryOptions& opts = {});

struct PcResult {
    std::vector<NodeId> pc;
    /// Separating set found for each candidate that was ruled out.
    std::map<NodeId, std::vector<NodeId>> sepset;
};

/// Interleaved parents/children search around `target`, conditioning on
/// subsets of the admitted set up to max_cond.
PcResult hiton_pc(CiOracle& ci, const DataMatrix& data, NodeId target, std::size_t max_cond);

/// Shrink phase on its own: repeatedly drops members independent of the
/// target given the rest, to a fixed point.
FeatureMask shrink_phase(CiOracle& ci, NodeId target, std::vector<NodeId> members);

std::vector<DiscoveryResult> run_budgeted(DiscoveryMethod method, std::span<const TaskInstance> tasks,
                                          double alpha, double budget_s);

/// One JSONL record: {task_id, method, mask, ci_tests, wall_time_s, completed}.
nlohmann::json discovery_record(const std::string& task_id, const DiscoveryResult& result);

}  // namespace blanket
