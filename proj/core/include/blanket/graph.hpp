#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "blanket/seed.hpp"

namespace blanket {

using NodeId = std::size_t;

class GraphError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Sorted, duplicate-free set of node indices. Canonicalized on construction
/// so that equality and serialization are bit-stable.
class NodeSet {
public:
    NodeSet() = default;
    NodeSet(std::initializer_list<NodeId> members);
    explicit NodeSet(std::vector<NodeId> members);

    [[nodiscard]] const std::vector<NodeId>& members() const noexcept { return members_; }
    [[nodiscard]] std::size_t size() const noexcept { return members_.size(); }
    [[nodiscard]] bool empty() const noexcept { return members_.empty(); }
    [[nodiscard]] bool contains(NodeId v) const noexcept;
    [[nodiscard]] auto begin() const noexcept { return members_.begin(); }
    [[nodiscard]] auto end() const noexcept { return members_.end(); }

    [[nodiscard]] NodeSet with(NodeId v) const;
    [[nodiscard]] NodeSet without(NodeId v) const;
    [[nodiscard]] bool is_subset_of(const NodeSet& other) const noexcept;

    friend NodeSet set_union(const NodeSet& a, const NodeSet& b);
    friend NodeSet set_intersection(const NodeSet& a, const NodeSet& b);
    friend NodeSet set_difference(const NodeSet& a, const NodeSet& b);

    friend bool operator==(const NodeSet&, const NodeSet&) = default;

private:
    std::vector<NodeId> members_;
};

/// Features selected for a regressor. Node indices, target never included.
using FeatureMask = NodeSet;

/// Directed acyclic graph over node_count nodes with a designated target.
/// Immutable after construction; the constructor rejects cycles, self-loops
/// and out-of-range indices.
class Dag {
public:
    Dag(std::size_t node_count, std::vector<std::pair<NodeId, NodeId>> edges, NodeId target);

    [[nodiscard]] std::size_t node_count() const noexcept { return parents_.size(); }
    [[nodiscard]] std::size_t feature_count() const noexcept { return parents_.size() - 1; }
    [[nodiscard]] NodeId target() const noexcept { return target_; }
    [[nodiscard]] const std::vector<NodeId>& parents(NodeId v) const { return parents_.at(v); }
    [[nodiscard]] const std::vector<NodeId>& children(NodeId v) const { return children_.at(v); }
    [[nodiscard]] const std::vector<NodeId>& topological_order() const noexcept { return topo_; }
    [[nodiscard]] std::size_t edge_count() const noexcept;
    /// Lexicographically sorted (parent, child) pairs.
    [[nodiscard]] std::vector<std::pair<NodeId, NodeId>> edges() const;
    [[nodiscard]] bool has_edge(NodeId from, NodeId to) const;

    /// Same graph, different target.
    [[nodiscard]] Dag with_target(NodeId target) const;
    /// All node indices except the target.
    [[nodiscard]] std::vector<NodeId> features() const;

    friend bool operator==(const Dag& a, const Dag& b) {
        return a.target_ == b.target_ && a.parents_ == b.parents_;
    }

private:
    std::vector<std::vector<NodeId>> parents_;
    std::vector<std::vector<NodeId>> children_;
    std::vector<NodeId> topo_;
    NodeId target_;
};

void to_json(nlohmann::json& j, const Dag& dag);
Dag dag_from_json(const nlohmann::json& j);
void to_json(nlohmann::json& j, const NodeSet& set);
NodeSet node_set_from_json(const nlohmann::json& j);

/// Erdos-Renyi DAG: a seeded uniform permutation fixes the topological order,
/// then every forward pair gets an edge with probability `density`.
/// The returned graph's target is node_count - 1 until one is selected.
Dag generate_er_dag(std::size_t num_nodes, double density, Seed seed);

/// Parents, children and the children's other parents of v.
NodeSet markov_boundary(const Dag& dag, NodeId v);

/// d-separation of a and b given z, by reachability in the moralized
/// ancestral graph of {a, b} ∪ z.
bool d_separated(const Dag& dag, NodeId a, NodeId b, const NodeSet& z);

/// [L<=1, ..., L<=k_max] with L<=1 = B(y) and
/// L<=k+1 = (L<=k ∪ ⋃_{v ∈ L<=k} B(v)) \ {y}.
std::vector<NodeSet> layered_blankets(const Dag& dag, NodeId y, std::size_t k_max);

/// First layer index containing each node; nullopt for nodes the closure
/// never reaches (including y itself).
std::vector<std::optional<std::size_t>> blanket_rank(const Dag& dag, NodeId y);

/// Nodes within `radius` hops of y in the undirected skeleton, y excluded.
NodeSet proximity_mask(const Dag& dag, NodeId y, std::size_t radius);

/// |B(target)| / (node_count - 1).
double mb_ratio(const Dag& dag);
double mb_ratio(const Dag& dag, NodeId v);

}  // namespace blanket
