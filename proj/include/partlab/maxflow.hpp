#pragma once

#include <algorithm>
#include <limits>
#include <queue>
#include <vector>

namespace partlab {

/// Dinic max-flow with real capacities over nodes [0, n) plus an implicit source and sink.
class MaxFlow {
public:
    explicit MaxFlow(int nodes) : num_nodes_(nodes), adj_(static_cast<std::size_t>(nodes + 2)) {}

    int num_nodes() const { return num_nodes_; }

    void add_edge(int u, int v, double cap) {
        if (cap <= 0) return;
        link(u, v, cap);
    }

    /// Capacity from the source (cut when the node ends on the sink side) and to the sink.
    void add_terminal(int u, double from_source, double to_sink) {
        if (from_source > 0) link(source(), u, from_source);
        if (to_sink > 0) link(u, sink(), to_sink);
    }

    double solve() {
        double flow = 0;
        const auto n = adj_.size();
        level_.assign(n, -1);
        while (bfs()) {
            iter_.assign(n, 0);
            for (double f; (f = dfs(source(), std::numeric_limits<double>::infinity())) > kEps;) flow += f;
        }
        bfs();  // final residual reachability
        return flow;
    }

    /// After solve(): true if `u` is reachable from the source in the residual graph.
    bool source_side(int u) const { return level_[static_cast<std::size_t>(u)] >= 0; }

private:
    static constexpr double kEps = 1e-12;

    struct Edge {
        int to;
        std::size_t rev;
        double cap;
    };

    int source() const { return num_nodes_; }
    int sink() const { return num_nodes_ + 1; }

    void link(int u, int v, double cap) {
        auto& a = adj_[static_cast<std::size_t>(u)];
        auto& b = adj_[static_cast<std::size_t>(v)];
        a.push_back({v, b.size(), cap});
        b.push_back({u, a.size() - 1, 0.0});
    }

    bool bfs() {
        std::fill(level_.begin(), level_.end(), -1);
        std::queue<int> q;
        level_[static_cast<std::size_t>(source())] = 0;
        q.push(source());
        while (!q.empty()) {
            const int u = q.front();
            q.pop();
            for (const auto& e : adj_[static_cast<std::size_t>(u)])
                if (e.cap > kEps && level_[static_cast<std::size_t>(e.to)] < 0) {
                    level_[static_cast<std::size_t>(e.to)] = level_[static_cast<std::size_t>(u)] + 1;
                    q.push(e.to);
                }
        }
        return level_[static_cast<std::size_t>(sink())] >= 0;
    }

    double dfs(int u, double pushed) {
        if (u == sink()) return pushed;
        auto& edges = adj_[static_cast<std::size_t>(u)];
        for (auto& i = iter_[static_cast<std::size_t>(u)]; i < edges.size(); ++i) {
            Edge& e = edges[i];
            if (e.cap <= kEps || level_[static_cast<std::size_t>(e.to)] != level_[static_cast<std::size_t>(u)] + 1) continue;
            const double f = dfs(e.to, std::min(pushed, e.cap));
            if (f > kEps) {
                e.cap -= f;
                adj_[static_cast<std::size_t>(e.to)][e.rev].cap += f;
                return f;
            }
        }
        return 0;
    }

    int num_nodes_;
    std::vector<std::vector<Edge>> adj_;
    std::vector<int> level_;
    std::vector<std::size_t> iter_;
};

} // namespace partlab
