#pragma once

// Undirected PMU communication graphs, diffusion weights and a
// neighbour-restricted mailbox for synchronous message rounds.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "modal/errors.hpp"

namespace modal {

class Topology {
public:
    using Edge = std::pair<std::size_t, std::size_t>;

    /// Self loops are implicit. Rejects disconnected graphs.
    Topology(std::size_t nodes, const std::vector<Edge>& edges) : nodes_(nodes), neighbors_(nodes) {
        if (nodes < 1) throw ValidationError("topology needs at least one node");
        for (auto [u, v] : edges) {
            if (u >= nodes || v >= nodes)
                throw ValidationError("edge (" + std::to_string(u) + "," + std::to_string(v) + ") out of range");
            if (u == v) continue;
            edges_.insert({std::min(u, v), std::max(u, v)});
        }
        for (std::size_t m = 0; m < nodes; ++m) neighbors_[m].push_back(m);
        for (auto [u, v] : edges_) {
            neighbors_[u].push_back(v);
            neighbors_[v].push_back(u);
        }
        for (auto& n : neighbors_) std::sort(n.begin(), n.end());
        if (!connected()) throw ValidationError("topology is disconnected");
    }

    static Topology ring(std::size_t m) {
        if (m < 2) throw ValidationError("ring topology needs at least two nodes");
        std::vector<Edge> edges;
        for (std::size_t i = 0; i < m; ++i) edges.emplace_back(i, (i + 1) % m);
        return Topology(m, edges);
    }

    static Topology complete(std::size_t m) {
        std::vector<Edge> edges;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = i + 1; j < m; ++j) edges.emplace_back(i, j);
        return Topology(m, edges);
    }

    static Topology from_edge_list(const std::vector<Edge>& edges, std::optional<std::size_t> nodes = std::nullopt) {
        std::size_t count = 0;
        for (auto [u, v] : edges) count = std::max({count, u + 1, v + 1});
        if (nodes) {
            if (*nodes < count) throw ValidationError("edge list references nodes beyond the node count");
            count = *nodes;
        }
        return Topology(count, edges);
    }

    /// One "u v" pair per line, 0-indexed. Blank lines and '#' comments ignored.
    static Topology parse_edge_list(std::istream& in, std::optional<std::size_t> nodes = std::nullopt) {
        std::vector<Edge> edges;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            std::istringstream ls(line);
            long long u = 0;
            long long v = 0;
            if (!(ls >> u)) continue;
            std::string rest;
            if (!(ls >> v) || u < 0 || v < 0 || (ls >> rest))
                throw ValidationError("malformed edge on line " + std::to_string(lineno));
            edges.emplace_back(static_cast<std::size_t>(u), static_cast<std::size_t>(v));
        }
        return from_edge_list(edges, nodes);
    }

    /// "ring:M", "complete:M", or a path to an edge-list file.
    static Topology parse_spec(const std::string& spec, std::optional<std::size_t> nodes = std::nullopt) {
        auto count_after = [&](std::size_t prefix) {
            try {
                std::size_t used = 0;
                const long long m = std::stoll(spec.substr(prefix), &used);
                if (used != spec.size() - prefix || m < 1) throw ValidationError("bad node count");
                return static_cast<std::size_t>(m);
            } catch (const std::logic_error&) {
                throw ValidationError("bad topology spec '" + spec + "'");
            }
        };
        if (spec.rfind("ring:", 0) == 0) return ring(count_after(5));
        if (spec.rfind("complete:", 0) == 0) return complete(count_after(9));
        std::ifstream file(spec);
        if (!file) throw ValidationError("cannot open topology file '" + spec + "'");
        return parse_edge_list(file, nodes);
    }

    std::size_t size() const { return nodes_; }
    const std::set<Edge>& edges() const { return edges_; }
    const std::vector<std::size_t>& neighbors(std::size_t m) const { return neighbors_.at(m); }
    std::size_t degree(std::size_t m) const { return neighbors_.at(m).size(); }

    bool adjacent(std::size_t m, std::size_t j) const {
        const auto& n = neighbors_.at(m);
        return std::binary_search(n.begin(), n.end(), j);
    }

    /// N_m intersect N_j, ascending.
    std::vector<std::size_t> common_neighbors(std::size_t m, std::size_t j) const {
        std::vector<std::size_t> out;
        std::set_intersection(neighbors_.at(m).begin(), neighbors_.at(m).end(), neighbors_.at(j).begin(),
                              neighbors_.at(j).end(), std::back_inserter(out));
        return out;
    }

private:
    bool connected() const {
        std::vector<bool> seen(nodes_, false);
        std::vector<std::size_t> stack{0};
        seen[0] = true;
        std::size_t visited = 1;
        while (!stack.empty()) {
            const std::size_t u = stack.back();
            stack.pop_back();
            for (std::size_t v : neighbors_[u]) {
                if (!seen[v]) {
                    seen[v] = true;
                    ++visited;
                    stack.push_back(v);
                }
            }
        }
        return visited == nodes_;
    }

    std::size_t nodes_;
    std::set<Edge> edges_;
    std::vector<std::vector<std::size_t>> neighbors_;
};

inline constexpr double weight_tolerance = 1e-12;

/// c[m][i] weights neighbour topology.neighbors(m)[i].
struct DiffusionWeights {
    std::vector<std::vector<double>> c;

    void validate(const Topology& topo) const {
        if (c.size() != topo.size()) throw ValidationError("diffusion weights: one row per node required");
        for (std::size_t m = 0; m < topo.size(); ++m) {
            if (c[m].size() != topo.degree(m)) throw ValidationError("diffusion weights: row length must equal degree");
            double sum = 0.0;
            for (double w : c[m]) {
                if (!(w >= 0.0)) throw ValidationError("diffusion weights must be non-negative");
                sum += w;
            }
            if (std::abs(sum - 1.0) > weight_tolerance) throw ValidationError("diffusion weights must sum to one");
        }
    }

    /// Dense M x M matrix with entry (m, j) used for j in N_m; other entries must be zero.
    static DiffusionWeights from_matrix(const Topology& topo, const Eigen::MatrixXd& w) {
        const auto n = static_cast<Eigen::Index>(topo.size());
        if (w.rows() != n || w.cols() != n) throw ValidationError("weight matrix must be M x M");
        DiffusionWeights out;
        out.c.resize(topo.size());
        for (std::size_t m = 0; m < topo.size(); ++m) {
            for (std::size_t j = 0; j < topo.size(); ++j) {
                const double v = w(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(j));
                if (topo.adjacent(m, j))
                    out.c[m].push_back(v);
                else if (v != 0.0)
                    throw ValidationError("weight matrix has mass on a non-neighbour");
            }
        }
        out.validate(topo);
        return out;
    }
};

/// d[m][a][b] weights contributor common_neighbors(m, neighbors(m)[a])[b].
struct ReducedDiffusionWeights {
    std::vector<std::vector<std::vector<double>>> d;

    void validate(const Topology& topo) const {
        if (d.size() != topo.size()) throw ValidationError("reduced weights: one entry per node required");
        for (std::size_t m = 0; m < topo.size(); ++m) {
            const auto& nbrs = topo.neighbors(m);
            if (d[m].size() != nbrs.size()) throw ValidationError("reduced weights: one row per neighbour required");
            for (std::size_t a = 0; a < nbrs.size(); ++a) {
                if (d[m][a].size() != topo.common_neighbors(m, nbrs[a]).size())
                    throw ValidationError("reduced weights: row length must equal |N_m & N_j|");
                double sum = 0.0;
                for (double w : d[m][a]) {
                    if (!(w >= 0.0)) throw ValidationError("reduced weights must be non-negative");
                    sum += w;
                }
                if (std::abs(sum - 1.0) > weight_tolerance) throw ValidationError("reduced weights must sum to one");
            }
        }
    }
};

inline DiffusionWeights uniform_weights(const Topology& topo) {
    DiffusionWeights w;
    w.c.resize(topo.size());
    for (std::size_t m = 0; m < topo.size(); ++m)
        w.c[m].assign(topo.degree(m), 1.0 / static_cast<double>(topo.degree(m)));
    w.validate(topo);
    return w;
}

inline ReducedDiffusionWeights uniform_reduced_weights(const Topology& topo) {
    ReducedDiffusionWeights w;
    w.d.resize(topo.size());
    for (std::size_t m = 0; m < topo.size(); ++m) {
        for (std::size_t j : topo.neighbors(m)) {
            const std::size_t shared = topo.common_neighbors(m, j).size();
            w.d[m].emplace_back(shared, 1.0 / static_cast<double>(shared));
        }
    }
    w.validate(topo);
    return w;
}

/// Record of (reader, sender) pairs seen by a mailbox.
using AccessLog = std::vector<std::pair<std::size_t, std::size_t>>;

/// One round of messages. A node may only read what its neighbours posted.
template <typename Message>
class Mailbox {
public:
    Mailbox(const Topology& topo, AccessLog* log = nullptr) : topo_(&topo), slots_(topo.size()), log_(log) {}

    void post(std::size_t sender, Message msg) { slots_.at(sender) = std::move(msg); }

    const Message& read(std::size_t reader, std::size_t sender) const {
        if (!topo_->adjacent(reader, sender))
            throw InvariantViolation("node " + std::to_string(reader) + " read from non-neighbour " +
                                     std::to_string(sender));
        const auto& slot = slots_.at(sender);
        if (!slot) throw InvariantViolation("node " + std::to_string(sender) + " has not posted this round");
        if (log_) log_->emplace_back(reader, sender);
        return *slot;
    }

    void clear() {
        for (auto& s : slots_) s.reset();
    }

private:
    const Topology* topo_;
    std::vector<std::optional<Message>> slots_;
    AccessLog* log_;
};

}  // namespace modal
