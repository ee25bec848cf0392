#include "blanket/graph.hpp"

#include <algorithm>
#include <deque>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

namespace blanket {

namespace {

void canonicalize(std::vector<NodeId>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
}

void check_node(const Dag& dag, NodeId v, const char* what) {
    if (v >= dag.node_count()) {
        throw GraphError(std::string(what) + ": node " + std::to_string(v) + " out of range [0, " +
                         std::to_string(dag.node_count()) + ")");
    }
}

}  // namespace

// ---- NodeSet ---------------------------------------------------------------

NodeSet::NodeSet(std::initializer_list<NodeId> members) : members_(members) {
    canonicalize(members_);
}

NodeSet::NodeSet(std::vector<NodeId> members) : members_(std::move(members)) {
    canonicalize(members_);
}

bool NodeSet::contains(NodeId v) const noexcept {
    return std::binary_search(members_.begin(), members_.end(), v);
}

NodeSet NodeSet::with(NodeId v) const {
    NodeSet out = *this;
    auto it = std::lower_bound(out.members_.begin(), out.members_.end(), v);
    if (it == out.members_.end() || *it != v) out.members_.insert(it, v);
    return out;
}

NodeSet NodeSet::without(NodeId v) const {
    NodeSet out = *this;
    auto it = std::lower_bound(out.members_.begin(), out.members_.end(), v);
    if (it != out.members_.end() && *it == v) out.members_.erase(it);
    return out;
}

bool NodeSet::is_subset_of(const NodeSet& other) const noexcept {
    return std::includes(other.members_.begin(), other.members_.end(), members_.begin(), members_.end());
}

NodeSet set_union(const NodeSet& a, const NodeSet& b) {
    NodeSet out;
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out.members_));
    return out;
}

NodeSet set_intersection(const NodeSet& a, const NodeSet& b) {
    NodeSet out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out.members_));
    return out;
}

NodeSet set_difference(const NodeSet& a, const NodeSet& b) {
    NodeSet out;
    std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out.members_));
    return out;
}

// ---- Dag -------------------------------------------------------------------

Dag::Dag(std::size_t node_count, std::vector<std::pair<NodeId, NodeId>> edges, NodeId target)
    : parents_(node_count), children_(node_count), target_(target) {
    if (node_count == 0) throw GraphError("Dag: node_count must be positive");
    if (target >= node_count) throw GraphError("Dag: target out of range");
    for (auto [from, to] : edges) {
        if (from >= node_count || to >= node_count) throw GraphError("Dag: edge endpoint out of range");
        if (from == to) throw GraphError("Dag: self-loop on node " + std::to_string(from));
        parents_[to].push_back(from);
        children_[from].push_back(to);
    }
    for (std::size_t v = 0; v < node_count; ++v) {
        const auto before = parents_[v].size();
        canonicalize(parents_[v]);
        if (parents_[v].size() != before) throw GraphError("Dag: duplicate edge into node " + std::to_string(v));
        canonicalize(children_[v]);
    }

    // Kahn's algorithm; smallest ready index first keeps the order canonical.
    std::vector<std::size_t> indegree(node_count);
    for (std::size_t v = 0; v < node_count; ++v) indegree[v] = parents_[v].size();
    std::vector<NodeId> ready;
    for (std::size_t v = 0; v < node_count; ++v)
        if (indegree[v] == 0) ready.push_back(v);
    std::make_heap(ready.begin(), ready.end(), std::greater<>{});
    topo_.reserve(node_count);
    while (!ready.empty()) {
        std::pop_heap(ready.begin(), ready.end(), std::greater<>{});
        NodeId v = ready.back();
        ready.pop_back();
        topo_.push_back(v);
        for (NodeId c : children_[v]) {
            if (--indegree[c] == 0) {
                ready.push_back(c);
                std::push_heap(ready.begin(), ready.end(), std::greater<>{});
            }
        }
    }
    if (topo_.size() != node_count) throw GraphError("Dag: graph contains a directed cycle");
}

std::size_t Dag::edge_count() const noexcept {
    std::size_t total = 0;
    for (const auto& p : parents_) total += p.size();
    return total;
}

std::vector<std::pair<NodeId, NodeId>> Dag::edges() const {
    std::vector<std::pair<NodeId, NodeId>> out;
    out.reserve(edge_count());
    for (NodeId p = 0; p < children_.size(); ++p)
        for (NodeId c : children_[p]) out.emplace_back(p, c);
    return out;
}

bool Dag::has_edge(NodeId from, NodeId to) const {
    const auto& ch = children_.at(from);
    return std::binary_search(ch.begin(), ch.end(), to);
}

Dag Dag::with_target(NodeId target) const {
    if (target >= node_count()) throw GraphError("Dag::with_target: target out of range");
    Dag out = *this;
    out.target_ = target;
    return out;
}

std::vector<NodeId> Dag::features() const {
    std::vector<NodeId> out;
    out.reserve(feature_count());
    for (NodeId v = 0; v < node_count(); ++v)
        if (v != target_) out.push_back(v);
    return out;
}

void to_json(nlohmann::json& j, const Dag& dag) {
    auto edges = nlohmann::json::array();
    for (auto [p, c] : dag.edges()) edges.push_back({p, c});
    j = nlohmann::json{{"node_count", dag.node_count()}, {"target", dag.target()}, {"edges", std::move(edges)}};
}

Dag dag_from_json(const nlohmann::json& j) {
    std::vector<std::pair<NodeId, NodeId>> edges;
    for (const auto& e : j.at("edges")) {
        if (!e.is_array() || e.size() != 2) throw GraphError("dag json: edge must be a [parent, child] pair");
        edges.emplace_back(e[0].get<NodeId>(), e[1].get<NodeId>());
    }
    return Dag(j.at("node_count").get<std::size_t>(), std::move(edges), j.at("target").get<NodeId>());
}

void to_json(nlohmann::json& j, const NodeSet& set) { j = set.members(); }

NodeSet node_set_from_json(const nlohmann::json& j) { return NodeSet(j.get<std::vector<NodeId>>()); }

// ---- generation ------------------------------------------------------------

Dag generate_er_dag(std::size_t num_nodes, double density, Seed seed) {
    if (num_nodes < 2) throw GraphError("generate_er_dag: num_nodes must be >= 2");
    if (!(density >= 0.0 && density <= 1.0)) throw GraphError("generate_er_dag: density must lie in [0, 1]");

    Rng rng = make_rng(seed);
    std::vector<NodeId> order(num_nodes);
    std::iota(order.begin(), order.end(), NodeId{0});
    std::shuffle(order.begin(), order.end(), rng);

    std::bernoulli_distribution coin(density);
    std::vector<std::pair<NodeId, NodeId>> edges;
    for (std::size_t i = 0; i < num_nodes; ++i)
        for (std::size_t j = i + 1; j < num_nodes; ++j)
            if (coin(rng)) edges.emplace_back(order[i], order[j]);
    return Dag(num_nodes, std::move(edges), num_nodes - 1);
}

// ---- oracle structure ------------------------------------------------------

NodeSet markov_boundary(const Dag& dag, NodeId v) {
    check_node(dag, v, "markov_boundary");
    std::vector<NodeId> out(dag.parents(v).begin(), dag.parents(v).end());
    for (NodeId c : dag.children(v)) {
        out.push_back(c);
        for (NodeId s : dag.parents(c))
            if (s != v) out.push_back(s);
    }
    return NodeSet(std::move(out));
}

bool d_separated(const Dag& dag, NodeId a, NodeId b, const NodeSet& z) {
    check_node(dag, a, "d_separated");
    check_node(dag, b, "d_separated");
    for (NodeId v : z) check_node(dag, v, "d_separated");
    if (a == b) throw GraphError("d_separated: a and b must differ");
    if (z.contains(a) || z.contains(b)) throw GraphError("d_separated: a and b must not be in the conditioning set");

    const std::size_t n = dag.node_count();
    std::vector<char> ancestral(n, 0);
    std::vector<NodeId> stack{a, b};
    stack.insert(stack.end(), z.begin(), z.end());
    while (!stack.empty()) {
        NodeId v = stack.back();
        stack.pop_back();
        if (ancestral[v]) continue;
        ancestral[v] = 1;
        for (NodeId p : dag.parents(v)) stack.push_back(p);
    }

    // Moral graph of the ancestral set: skeleton edges plus married co-parents.
    std::vector<std::vector<NodeId>> adj(n);
    for (NodeId v = 0; v < n; ++v) {
        if (!ancestral[v]) continue;
        const auto& ps = dag.parents(v);
        for (std::size_t i = 0; i < ps.size(); ++i) {
            adj[v].push_back(ps[i]);
            adj[ps[i]].push_back(v);
            for (std::size_t k = i + 1; k < ps.size(); ++k) {
                adj[ps[i]].push_back(ps[k]);
                adj[ps[k]].push_back(ps[i]);
            }
        }
    }

    std::vector<char> seen(n, 0);
    for (NodeId v : z) seen[v] = 1;
    std::deque<NodeId> queue{a};
    seen[a] = 1;
    while (!queue.empty()) {
        NodeId v = queue.front();
        queue.pop_front();
        if (v == b) return false;
        for (NodeId w : adj[v]) {
            if (!seen[w]) {
                seen[w] = 1;
                queue.push_back(w);
            }
        }
    }
    return true;
}

std::vector<NodeSet> layered_blankets(const Dag& dag, NodeId y, std::size_t k_max) {
    check_node(dag, y, "layered_blankets");
    if (k_max < 1) throw GraphError("layered_blankets: k_max must be >= 1");

    std::vector<NodeSet> boundaries;
    boundaries.reserve(dag.node_count());
    for (NodeId v = 0; v < dag.node_count(); ++v) boundaries.push_back(markov_boundary(dag, v));

    std::vector<NodeSet> layers{boundaries[y]};
    while (layers.size() < k_max) {
        const NodeSet& prev = layers.back();
        std::vector<NodeId> next(prev.begin(), prev.end());
        for (NodeId v : prev) next.insert(next.end(), boundaries[v].begin(), boundaries[v].end());
        layers.push_back(NodeSet(std::move(next)).without(y));
    }
    return layers;
}

std::vector<std::optional<std::size_t>> blanket_rank(const Dag& dag, NodeId y) {
    check_node(dag, y, "blanket_rank");
    std::vector<std::optional<std::size_t>> rank(dag.node_count());
    // The closure is a fixed point after at most node_count steps.
    auto layers = layered_blankets(dag, y, dag.node_count());
    for (std::size_t k = layers.size(); k-- > 0;)
        for (NodeId v : layers[k]) rank[v] = k + 1;
    return rank;
}

NodeSet proximity_mask(const Dag& dag, NodeId y, std::size_t radius) {
    check_node(dag, y, "proximity_mask");
    if (radius < 1) throw GraphError("proximity_mask: radius must be >= 1");

    constexpr std::size_t unvisited = static_cast<std::size_t>(-1);
    std::vector<std::size_t> dist(dag.node_count(), unvisited);
    std::deque<NodeId> queue{y};
    dist[y] = 0;
    std::vector<NodeId> out;
    while (!queue.empty()) {
        NodeId v = queue.front();
        queue.pop_front();
        if (dist[v] == radius) continue;
        auto visit = [&](NodeId w) {
            if (dist[w] != unvisited) return;
            dist[w] = dist[v] + 1;
            out.push_back(w);
            queue.push_back(w);
        };
        for (NodeId p : dag.parents(v)) visit(p);
        for (NodeId c : dag.children(v)) visit(c);
    }
    return NodeSet(std::move(out));
}

double mb_ratio(const Dag& dag, NodeId v) {
    return static_cast<double>(markov_boundary(dag, v).size()) / static_cast<double>(dag.node_count() - 1);
}

double mb_ratio(const Dag& dag) { return mb_ratio(dag, dag.target()); }

}  // namespace blanket
