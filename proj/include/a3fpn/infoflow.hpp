#pragma once

#include <cmath>
#include <optional>
#include <queue>
#include <utility>
#include <vector>

#include "a3fpn/plan.hpp"

namespace a3fpn {
namespace infoflow {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>; // row-stochastic transition matrices

// Discrete noisy channel: input marginal plus a k x k transition matrix.
struct ChannelDist {
    int k = 2;
    Vec marginal;
    Mat transition;

    void validate() const {
        if (k < 1 || static_cast<int>(marginal.size()) != k || static_cast<int>(transition.size()) != k)
            throw UsageError("ChannelDist: dimension mismatch");
        double sum = 0.0;
        for (double p : marginal) {
            if (p < 0.0) throw UsageError("ChannelDist: negative probability");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-12) throw UsageError("ChannelDist: marginal must sum to 1");
        for (const Vec& row : transition) {
            if (static_cast<int>(row.size()) != k) throw UsageError("ChannelDist: ragged transition");
            double rs = 0.0;
            for (double p : row) {
                if (p < 0.0) throw UsageError("ChannelDist: negative probability");
                rs += p;
            }
            if (std::abs(rs - 1.0) > 1e-12) throw UsageError("ChannelDist: transition rows must sum to 1");
        }
    }
};

inline double log2_safe(double x) { return std::log2(x); }

// H(p) in bits, 0*log0 = 0.
inline double entropy(const Vec& p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * log2_safe(v);
    return h;
}

inline double binary_entropy(double p) {
    Vec v = {p, 1.0 - p};
    return entropy(v);
}

// I(X;Y) in bits from a joint table; 0*log0 = 0.
inline double mutual_information(const Mat& joint) {
    const std::size_t k = joint.size();
    double total = 0.0;
    for (const Vec& row : joint) {
        if (row.size() != k) throw UsageError("mutual_information: joint must be square");
        for (double p : row) {
            if (p < 0.0) throw UsageError("mutual_information: negative entry");
            total += p;
        }
    }
    if (std::abs(total - 1.0) > 1e-6) throw UsageError("mutual_information: joint must sum to 1");
    Vec px(k, 0.0), py(k, 0.0);
    for (std::size_t x = 0; x < k; ++x)
        for (std::size_t y = 0; y < k; ++y) {
            px[x] += joint[x][y];
            py[y] += joint[x][y];
        }
    double info = 0.0;
    for (std::size_t x = 0; x < k; ++x)
        for (std::size_t y = 0; y < k; ++y) {
            const double p = joint[x][y];
            if (p > 0.0) info += p * log2_safe(p / (px[x] * py[y]));
        }
    return info;
}

inline Mat compose(const Mat& a, const Mat& b) {
    const std::size_t k = a.size();
    if (b.size() != k) throw UsageError("compose: dimension mismatch");
    Mat out(k, Vec(k, 0.0));
    for (std::size_t i = 0; i < k; ++i) {
        if (a[i].size() != k) throw UsageError("compose: ragged matrix");
        for (std::size_t j = 0; j < k; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t) acc += a[i][t] * b[t][j];
            out[i][j] = acc;
        }
    }
    return out;
}

inline Mat identity_channel(int k) {
    Mat m(static_cast<std::size_t>(k), Vec(static_cast<std::size_t>(k), 0.0));
    for (int i = 0; i < k; ++i) m[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 1.0;
    return m;
}

inline Mat joint_from(const Vec& marginal, const Mat& channel) {
    const std::size_t k = marginal.size();
    Mat joint(k, Vec(k, 0.0));
    for (std::size_t x = 0; x < k; ++x)
        for (std::size_t y = 0; y < k; ++y) joint[x][y] = marginal[x] * channel[x][y];
    return joint;
}

// Exact I(X_0; X_T) through the composed transition. Zero hops gives H(X_0).
inline double chain_mi(const ChannelDist& source, const std::vector<Mat>& hops) {
    source.validate();
    Mat t = identity_channel(source.k);
    for (const Mat& hop : hops) {
        if (static_cast<int>(hop.size()) != source.k) throw UsageError("chain_mi: hop dimension mismatch");
        t = compose(t, hop);
    }
    return mutual_information(joint_from(source.marginal, t));
}

// I(X_0; X_t) for every prefix t = 0..T.
inline Vec chain_prefix_mi(const ChannelDist& source, const std::vector<Mat>& hops) {
    source.validate();
    Vec out;
    Mat t = identity_channel(source.k);
    out.push_back(mutual_information(joint_from(source.marginal, t)));
    for (const Mat& hop : hops) {
        t = compose(t, hop);
        out.push_back(mutual_information(joint_from(source.marginal, t)));
    }
    return out;
}

struct ContractionReport {
    double info_bits = 0.0;
    double bound_bits = 0.0;
    bool pass = false;
};

// Checks I(X_0;X_T) <= (prod eta) * H(X_0) for supplied per-hop contraction
// coefficients.
inline ContractionReport check_contraction(const ChannelDist& source, const std::vector<Mat>& hops,
                                           const Vec& etas) {
    if (etas.size() != hops.size()) throw UsageError("check_contraction: one eta per hop required");
    double prod = 1.0;
    for (double e : etas) {
        if (e < 0.0 || e > 1.0) throw UsageError("check_contraction: eta must be in [0,1]");
        prod *= e;
    }
    ContractionReport r;
    r.info_bits = chain_mi(source, hops);
    r.bound_bits = prod * entropy(source.marginal);
    r.pass = r.info_bits <= r.bound_bits + 1e-12;
    return r;
}

// Binary symmetric channel utilities; the BSC contraction coefficient for
// mutual information is (1-2p)^2.
inline Mat bsc(double p) { return Mat{{1.0 - p, p}, {p, 1.0 - p}}; }
inline double bsc_eta(double p) { return (1.0 - 2.0 * p) * (1.0 - 2.0 * p); }

inline ChannelDist uniform_binary_source() {
    ChannelDist d;
    d.k = 2;
    d.marginal = {0.5, 0.5};
    d.transition = identity_channel(2);
    return d;
}

inline Vec random_marginal(int k, Rng& rng) {
    Vec p(static_cast<std::size_t>(k));
    double sum = 0.0;
    for (double& v : p) {
        v = 1e-3 + rng.uniform();
        sum += v;
    }
    for (double& v : p) v /= sum;
    return p;
}

inline Mat random_transition(int k, Rng& rng) {
    Mat m(static_cast<std::size_t>(k));
    for (Vec& row : m) {
        row = random_marginal(k, rng);
    }
    return m;
}

// ---- fusion topology graphs -----------------------------------------------------

enum class TopologyKind { kLayerwise, kGlobal, kAsymptotic };

// nodes are (column, level) instances; level_edges is the derived
// level-interaction adjacency (a fuses into b somewhere along the schedule).
struct TopologyGraph {
    TopologyKind kind = TopologyKind::kAsymptotic;
    int n_levels = 4;
    int columns = 1;
    struct InstanceEdge {
        int from_col, from_level, to_col, to_level;
        bool fusion; // false = pass-through
    };
    std::vector<InstanceEdge> instance_edges;
    std::vector<std::pair<int, int>> level_edges; // directed source -> reference
};

// Classic top-down chain: each fusion step carries level l+1 into level l.
inline TopologyGraph layerwise_graph(int n) {
    TopologyGraph g;
    g.kind = TopologyKind::kLayerwise;
    g.n_levels = n;
    g.columns = n - 1;
    for (int l = n; l >= 2; --l) g.level_edges.emplace_back(l, l - 1);
    return g;
}

// Gather-and-distribute style: every pair interacts directly.
inline TopologyGraph global_graph(int n) {
    TopologyGraph g;
    g.kind = TopologyKind::kGlobal;
    g.n_levels = n;
    g.columns = 1;
    for (int a = 1; a <= n; ++a)
        for (int b = 1; b <= n; ++b)
            if (a != b) g.level_edges.emplace_back(a, b);
    return g;
}

inline TopologyGraph asymptotic_graph(const PyramidConfig& cfg) {
    TopologyGraph g;
    g.kind = TopologyKind::kAsymptotic;
    g.n_levels = cfg.n_levels;
    g.columns = cfg.columns;
    std::vector<std::vector<bool>> adj(static_cast<std::size_t>(cfg.n_levels + 1),
                                       std::vector<bool>(static_cast<std::size_t>(cfg.n_levels + 1), false));
    for (const ColumnPlan& plan : plan_columns(cfg)) {
        const int j = plan.column;
        std::vector<bool> participates(static_cast<std::size_t>(cfg.n_levels + 1), false);
        for (const ColumnPlan::Reference& ref : plan.refs) {
            participates[static_cast<std::size_t>(ref.level)] = true;
            g.instance_edges.push_back({j - 1, ref.level, j, ref.level, true});
            adj[static_cast<std::size_t>(ref.level)][static_cast<std::size_t>(ref.level)] = true;
            for (const ColumnPlan::Source& src : ref.sources) {
                g.instance_edges.push_back({j - 1, src.level, j, ref.level, true});
                adj[static_cast<std::size_t>(src.level)][static_cast<std::size_t>(ref.level)] = true;
            }
        }
        for (int l = 1; l <= cfg.n_levels; ++l)
            if (!participates[static_cast<std::size_t>(l)])
                g.instance_edges.push_back({j - 1, l, j, l, false});
    }
    for (int a = 1; a <= cfg.n_levels; ++a)
        for (int b = 1; b <= cfg.n_levels; ++b)
            if (a != b && adj[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)])
                g.level_edges.emplace_back(a, b);
    return g;
}

// Minimum number of fusion applications needed to carry content from one level
// to another; absent when unreachable.
inline std::optional<int> topology_hops(const TopologyGraph& g, int from_level, int to_level) {
    if (from_level < 1 || from_level > g.n_levels || to_level < 1 || to_level > g.n_levels)
        throw UsageError("topology_hops: level out of range");
    if (from_level == to_level) return 0;
    std::vector<int> dist(static_cast<std::size_t>(g.n_levels + 1), -1);
    std::queue<int> q;
    dist[static_cast<std::size_t>(from_level)] = 0;
    q.push(from_level);
    while (!q.empty()) {
        const int cur = q.front();
        q.pop();
        for (const auto& [a, b] : g.level_edges) {
            if (a != cur || dist[static_cast<std::size_t>(b)] >= 0) continue;
            dist[static_cast<std::size_t>(b)] = dist[static_cast<std::size_t>(cur)] + 1;
            if (b == to_level) return dist[static_cast<std::size_t>(b)];
            q.push(b);
        }
    }
    const int d = dist[static_cast<std::size_t>(to_level)];
    return d < 0 ? std::nullopt : std::optional<int>(d);
}

inline std::optional<int> max_pairwise_hops(const TopologyGraph& g) {
    int worst = 0;
    for (int a = 1; a <= g.n_levels; ++a)
        for (int b = 1; b <= g.n_levels; ++b) {
            if (a == b) continue;
            auto h = topology_hops(g, a, b);
            if (!h) return std::nullopt; // some pair unreachable
            worst = std::max(worst, *h);
        }
    return worst;
}

// Instance-DAG reachability: can column-0 level `from` influence the final
// column's level `to`?
inline bool instance_reachable(const TopologyGraph& g, int from_level, int to_level) {
    std::vector<std::vector<bool>> seen(static_cast<std::size_t>(g.columns + 1),
                                        std::vector<bool>(static_cast<std::size_t>(g.n_levels + 1), false));
    seen[0][static_cast<std::size_t>(from_level)] = true;
    for (int col = 1; col <= g.columns; ++col)
        for (const auto& e : g.instance_edges)
            if (e.to_col == col && seen[static_cast<std::size_t>(e.from_col)][static_cast<std::size_t>(e.from_level)])
                seen[static_cast<std::size_t>(col)][static_cast<std::size_t>(e.to_level)] = true;
    return seen[static_cast<std::size_t>(g.columns)][static_cast<std::size_t>(to_level)];
}

} // namespace infoflow
} // namespace a3fpn
