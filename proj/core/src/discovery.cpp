#include "blanket/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

namespace blanket {

std::string_view to_string(DiscoveryMethod m) noexcept {
    switch (m) {
        case DiscoveryMethod::grow_shrink: return "grow_shrink";
        case DiscoveryMethod::hiton_mb: return "hiton_mb";
    }
    return "unknown";
}

DiscoveryMethod parse_method(std::string_view tag) {
    if (tag == "grow_shrink") return DiscoveryMethod::grow_shrink;
    if (tag == "hiton_mb") return DiscoveryMethod::hiton_mb;
    throw std::invalid_argument("unknown discovery method '" + std::string(tag) + "'");
}

// ---- CI oracle --------------------------------------------------------------

CiOracle::CiOracle(const DataMatrix& data, double alpha, double budget_s)
    : cache_(data), alpha_(alpha), budget_s_(budget_s), start_(std::chrono::steady_clock::now()) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("discovery: alpha must lie in (0, 1)");
}

double CiOracle::elapsed_s() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
}

void CiOracle::check_budget() const {
    if (elapsed_s() >= budget_s_) throw BudgetExceeded{};
}

bool CiOracle::dependent(NodeId x, NodeId y, std::span<const NodeId> z) {
    check_budget();
    ++tests_;
    const std::size_t n = cache_.sample_count();
    if (n <= z.size() + 3) {
        ++underpowered_;
        return true;
    }
    double r = 0.0;
    try {
        r = cache_.partial_correlation(x, y, z);
    } catch (const StatsError&) {
        ++underpowered_;
        return true;
    }
    return !fisher_z_test(r, n, z.size(), alpha_).independent;
}

std::vector<NodeId> association_order(const CiOracle& ci, const DataMatrix& data, NodeId target) {
    std::vector<std::pair<double, NodeId>> scored;
    for (NodeId v : data.column_ids())
        if (v != target) scored.emplace_back(std::abs(ci.correlation(v, target)), v);
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<NodeId> out;
    out.reserve(scored.size());
    for (const auto& [score, v] : scored) out.push_back(v);
    return out;
}

namespace {

DiscoveryResult finish(DiscoveryMethod method, const CiOracle& ci, double budget_s, std::optional<FeatureMask> mask) {
    DiscoveryResult r;
    r.method = method;
    r.ci_test_count = ci.test_count();
    r.underpowered_tests = ci.underpowered();
    r.wall_time_s = ci.elapsed_s();
    r.completed = mask.has_value();
    r.mask = std::move(mask);
    r.budget_s = budget_s;
    return r;
}

std::vector<NodeId> without(const std::vector<NodeId>& v, NodeId x) {
    std::vector<NodeId> out;
    out.reserve(v.size());
    for (NodeId u : v)
        if (u != x) out.push_back(u);
    return out;
}

/// Calls fn on every subset of `pool` of size in [min_size, max_size], in
/// lexicographic order of positions; stops early when fn returns true.
template <typename Fn>
bool any_subset(const std::vector<NodeId>& pool, std::size_t min_size, std::size_t max_size, Fn&& fn) {
    std::vector<NodeId> subset;
    std::vector<std::size_t> idx;
    for (std::size_t size = min_size; size <= std::min(max_size, pool.size()); ++size) {
        idx.resize(size);
        for (std::size_t i = 0; i < size; ++i) idx[i] = i;
        while (true) {
            subset.clear();
            for (std::size_t i : idx) subset.push_back(pool[i]);
            if (fn(subset)) return true;
            // advance combination
            std::size_t k = size;
            while (k > 0 && idx[k - 1] == pool.size() - size + k - 1) --k;
            if (k == 0) break;
            ++idx[k - 1];
            for (std::size_t i = k; i < size; ++i) idx[i] = idx[i - 1] + 1;
        }
    }
    return false;
}

/// Interleaved parents/children search around `target`. A member that was
/// already dependent given every subset of the previous admitted set only
/// needs re-testing against subsets that include the newest admission.
}  // namespace

PcResult hiton_pc(CiOracle& ci, const DataMatrix& data, NodeId target, std::size_t max_cond) {
    PcResult out;
    static const std::vector<NodeId> empty;
    for (NodeId x : association_order(ci, data, target)) {
        if (!ci.dependent(x, target, empty)) {
            out.sepset[x] = {};
            continue;
        }
        // The newcomer against every subset of the current members.
        std::vector<NodeId> sep;
        const bool x_separated = any_subset(out.pc, 1, max_cond, [&](const std::vector<NodeId>& s) {
            if (ci.dependent(x, target, s)) return false;
            sep = s;
            return true;
        });
        if (x_separated) {
            out.sepset[x] = sep;
            continue;
        }
        out.pc.push_back(x);
        // Older members against subsets containing x.
        std::vector<NodeId> survivors{x};
        for (NodeId m : std::vector<NodeId>(out.pc.begin(), out.pc.end() - 1)) {
            const std::vector<NodeId> others = without(without(out.pc, m), x);
            std::vector<NodeId> found;
            const bool separated = max_cond >= 1 && any_subset(others, 0, max_cond - 1, [&](const std::vector<NodeId>& s) {
                std::vector<NodeId> cond = s;
                cond.push_back(x);
                if (ci.dependent(m, target, cond)) return false;
                found = cond;
                return true;
            });
            if (separated) {
                out.sepset[m] = found;
            } else {
                survivors.push_back(m);
            }
        }
        // Preserve admission order for survivors.
        std::vector<NodeId> next;
        for (NodeId m : out.pc)
            if (std::find(survivors.begin(), survivors.end(), m) != survivors.end()) next.push_back(m);
        out.pc = std::move(next);
    }
    return out;
}


FeatureMask shrink_phase(CiOracle& ci, NodeId target, std::vector<NodeId> members) {
    bool removed = true;
    while (removed) {
        removed = false;
        for (NodeId x : std::vector<NodeId>(members)) {
            const auto rest = without(members, x);
            if (!ci.dependent(x, target, rest)) {
                members = rest;
                removed = true;
            }
        }
    }
    return FeatureMask(std::move(members));
}

DiscoveryResult grow_shrink(const DataMatrix& data, NodeId target, const DiscoveryOptions& opts) {
    CiOracle ci(data, opts.alpha, opts.budget_s);
    try {
        ci.check_budget();
        const auto order = association_order(ci, data, target);
        std::vector<NodeId> members;
        std::vector<char> in_set(order.empty() ? 0 : *std::max_element(order.begin(), order.end()) + 1, 0);
        bool grew = true;
        while (grew) {
            grew = false;
            for (NodeId x : order) {
                if (in_set[x]) continue;
                if (ci.dependent(x, target, members)) {
                    members.push_back(x);
                    in_set[x] = 1;
                    grew = true;
                }
            }
        }
        FeatureMask mask = shrink_phase(ci, target, std::move(members));
        return finish(DiscoveryMethod::grow_shrink, ci, opts.budget_s, std::move(mask));
    } catch (const CiOracle::BudgetExceeded&) {
        return finish(DiscoveryMethod::grow_shrink, ci, opts.budget_s, std::nullopt);
    }
}

DiscoveryResult hiton_mb(const DataMatrix& data, NodeId target, const DiscoveryOptions& opts) {
    CiOracle ci(data, opts.alpha, opts.budget_s);
    try {
        ci.check_budget();
        std::map<NodeId, PcResult> searched;
        auto pc_of = [&](NodeId v) -> const PcResult& {
            auto it = searched.find(v);
            if (it == searched.end()) it = searched.emplace(v, hiton_pc(ci, data, v, opts.max_cond)).first;
            return it->second;
        };
        // Symmetry check: X stays only if the target also shows up in PC(X).
        // Drops descendants admitted because their separating set lies
        // outside PC(target).
        PcResult around_target = pc_of(target);
        std::vector<NodeId> pc;
        for (NodeId x : around_target.pc) {
            if (!opts.symmetry_check) {
                pc.push_back(x);
                continue;
            }
            const PcResult& around_x = pc_of(x);
            if (!opts.symmetry_check || std::find(around_x.pc.begin(), around_x.pc.end(), target) != around_x.pc.end()) {
                pc.push_back(x);
            } else {
                auto it = around_x.sepset.find(target);
                around_target.sepset[x] = it != around_x.sepset.end() ? it->second : std::vector<NodeId>{};
            }
        }
        std::vector<NodeId> mask = pc;
        auto in_mask = [&](NodeId v) { return std::find(mask.begin(), mask.end(), v) != mask.end(); };

        for (NodeId c : pc) {
            const std::vector<NodeId> candidates = pc_of(c).pc;
            for (NodeId s : candidates) {
                if (s == target || in_mask(s)) continue;
                auto it = around_target.sepset.find(s);
                std::vector<NodeId> cond = it != around_target.sepset.end() ? it->second : std::vector<NodeId>{};
                std::erase(cond, s);
                if (std::find(cond.begin(), cond.end(), c) == cond.end()) cond.push_back(c);
                if (ci.dependent(s, target, cond)) mask.push_back(s);
            }
        }
        return finish(DiscoveryMethod::hiton_mb, ci, opts.budget_s, FeatureMask(std::move(mask)));
    } catch (const CiOracle::BudgetExceeded&) {
        return finish(DiscoveryMethod::hiton_mb, ci, opts.budget_s, std::nullopt);
    }
}

DiscoveryResult discover(DiscoveryMethod method, const DataMatrix& data, NodeId target, const DiscoveryOptions& opts) {
    return method == DiscoveryMethod::grow_shrink ? grow_shrink(data, target, opts) : hiton_mb(data, target, opts);
}

std::vector<DiscoveryResult> run_budgeted(DiscoveryMethod method, std::span<const TaskInstance> tasks, double alpha,
                                          double budget_s) {
    if (tasks.empty()) throw std::invalid_argument("run_budgeted: empty task list");
    std::vector<DiscoveryResult> out;
    out.reserve(tasks.size());
    DiscoveryOptions opts;
    opts.alpha = alpha;
    opts.budget_s = budget_s;
    for (const auto& task : tasks) out.push_back(discover(method, task.data, task.target(), opts));
    return out;
}

nlohmann::json discovery_record(const std::string& task_id, const DiscoveryResult& result) {
    nlohmann::json j{{"task_id", task_id},
                     {"method", to_string(result.method)},
                     {"mask", nullptr},
                     {"ci_tests", result.ci_test_count},
                     {"underpowered_tests", result.underpowered_tests},
                     {"wall_time_s", result.wall_time_s},
                     {"completed", result.completed}};
    if (result.mask) j["mask"] = result.mask->members();
    return j;
}

}  // namespace blanket
