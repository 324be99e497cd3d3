#pragma once

#include <algorithm>
#include <set>
#include <utility>
#include <vector>

#include "dmpc/common.hpp"

namespace dmpc {

// Undirected coupling topology over agents 0..node_count-1.
// Neighbor sets include the node itself.
class CouplingGraph {
public:
    CouplingGraph() = default;

    CouplingGraph(int node_count, const std::vector<std::pair<int, int>>& edges)
        : node_count_(node_count) {
        if (node_count <= 0) throw InvalidArgument("graph: node_count must be positive");
        for (auto [a, b] : edges) {
            if (a < 0 || a >= node_count || b < 0 || b >= node_count)
                throw InvalidArgument("graph: edge endpoint out of range");
            if (a == b) continue;  // self-neighborship is implicit
            edges_.insert(a < b ? std::make_pair(a, b) : std::make_pair(b, a));
        }
    }

    int node_count() const { return node_count_; }

    const std::set<std::pair<int, int>>& edges() const { return edges_; }

    bool has_edge(int a, int b) const {
        if (a == b) return true;
        return edges_.count(a < b ? std::make_pair(a, b) : std::make_pair(b, a)) > 0;
    }

    // N_i: sorted, contains i.
    std::vector<int> neighbors(int i) const {
        if (i < 0 || i >= node_count_) throw InvalidArgument("graph: node id out of range");
        std::vector<int> out{i};
        for (auto [a, b] : edges_) {
            if (a == i) out.push_back(b);
            if (b == i) out.push_back(a);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

private:
    int node_count_ = 0;
    std::set<std::pair<int, int>> edges_;
};

// Induced subgraph for one coupled constraint: the participants and the
// coupling edges among them. Participant order is preserved from the input.
struct ConstraintSubgraph {
    int constraint_id = -1;
    std::vector<int> participants;
    std::vector<std::pair<int, int>> edges;  // pairs of participant *indices*

    int size() const { return static_cast<int>(participants.size()); }

    int index_of(int agent) const {
        for (int k = 0; k < size(); ++k)
            if (participants[k] == agent) return k;
        throw InvalidArgument("subgraph: agent is not a participant");
    }

    // Participant-index neighbor list of participant k, including k.
    std::vector<int> local_neighbors(int k) const {
        std::vector<int> out{k};
        for (auto [a, b] : edges) {
            if (a == k) out.push_back(b);
            if (b == k) out.push_back(a);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    bool connected() const {
        if (participants.empty()) return false;
        std::vector<char> seen(participants.size(), 0);
        std::vector<int> stack{0};
        seen[0] = 1;
        while (!stack.empty()) {
            int k = stack.back();
            stack.pop_back();
            for (auto [a, b] : edges) {
                int other = (a == k) ? b : (b == k ? a : -1);
                if (other >= 0 && !seen[other]) {
                    seen[other] = 1;
                    stack.push_back(other);
                }
            }
        }
        return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
    }
};

inline ConstraintSubgraph induce_subgraph(const CouplingGraph& g, int constraint_id,
                                          const std::vector<int>& participants) {
    ConstraintSubgraph sg;
    sg.constraint_id = constraint_id;
    sg.participants = participants;
    std::set<int> uniq(participants.begin(), participants.end());
    if (uniq.size() != participants.size())
        throw InvalidArgument("subgraph: duplicate participant");
    for (int a : participants)
        if (a < 0 || a >= g.node_count())
            throw InvalidArgument("subgraph: participant out of range");
    for (int i = 0; i < sg.size(); ++i)
        for (int j = i + 1; j < sg.size(); ++j)
            if (g.has_edge(participants[i], participants[j])) sg.edges.emplace_back(i, j);
    return sg;
}

enum class WeightScheme { Uniform, Metropolis };

// Row- and column-stochastic weights whose support matches the subgraph:
// p_kj > 0 iff j is a subgraph neighbor of k (diagonal included).
struct WeightMatrix {
    int constraint_id = -1;
    Mat P;
};

inline bool validate_doubly_stochastic(const Mat& P, double tol = 1e-12) {
    if (P.rows() != P.cols() || P.rows() == 0) return false;
    if ((P.array() < -tol).any()) return false;
    const int n = static_cast<int>(P.rows());
    for (int i = 0; i < n; ++i) {
        if (std::abs(P.row(i).sum() - 1.0) > tol) return false;
        if (std::abs(P.col(i).sum() - 1.0) > tol) return false;
    }
    return true;
}

inline WeightMatrix build_weight_matrix(const ConstraintSubgraph& sg, WeightScheme scheme) {
    const int n = sg.size();
    if (n == 0) throw InvalidArgument("weights: empty participant set");
    if (!sg.connected()) throw InvalidArgument("weights: constraint subgraph is disconnected");

    WeightMatrix wm;
    wm.constraint_id = sg.constraint_id;
    wm.P = Mat::Zero(n, n);

    if (scheme == WeightScheme::Uniform) {
        // Only valid when the induced subgraph is complete; otherwise the
        // uniform weight would put mass on a non-neighbor.
        const int expected_edges = n * (n - 1) / 2;
        if (static_cast<int>(sg.edges.size()) != expected_edges)
            throw InvalidArgument("weights: uniform scheme requires a complete subgraph");
        wm.P.setConstant(1.0 / n);
        return wm;
    }

    // Metropolis: p_kj = 1/(1 + max(deg_k, deg_j)) on edges,
    // diagonal takes the remainder.
    std::vector<int> deg(n, 0);
    for (auto [a, b] : sg.edges) {
        ++deg[a];
        ++deg[b];
    }
    for (auto [a, b] : sg.edges) {
        const double p = 1.0 / (1.0 + std::max(deg[a], deg[b]));
        wm.P(a, b) = p;
        wm.P(b, a) = p;
    }
    for (int k = 0; k < n; ++k) wm.P(k, k) = 1.0 - wm.P.row(k).sum();

    for (int k = 0; k < n; ++k)
        if (wm.P(k, k) <= 0.0)
            throw InvalidArgument("weights: scheme produced a nonpositive diagonal entry");
    return wm;
}

}  // namespace dmpc
