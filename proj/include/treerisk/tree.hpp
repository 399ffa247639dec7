#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "treerisk/errors.hpp"

namespace treerisk {

/// Validation tolerance for probability / mass-normalization checks.
inline constexpr double kValidationTol = 1e-12;
/// Tolerance for derived identities (disintegrations, cocycles, round trips).
inline constexpr double kIdentityTol = 1e-9;
/// Tolerance for optimizer-based cross-checks against closed forms.
inline constexpr double kDualityTol = 1e-6;

using NodeIndex = std::size_t;
using TimeIndex = int;

/// One node of a tree description: external id, time layer, parent id, and the
/// one-step branch probability P(node | parent) (1 for the root).
struct NodeSpec {
    int id = 0;
    TimeIndex time = 0;
    std::optional<int> parent;
    double prob = 1.0;
};

/// Raw tree description as it appears in the JSON interchange format.
struct TreeSpec {
    TimeIndex horizon = 0;
    std::vector<NodeSpec> nodes;
    std::map<int, double> mu;  // empty => uniform 1/(horizon+1)
    std::map<std::string, std::map<int, double>> processes;
};

/// Finite event tree carrying the filtration, the reference measure P (as
/// branch probabilities) and the adapted time weights mu with sum_t mu_t = 1
/// along every path.
///
/// Nodes are stored sorted by (time, id); all library code works with dense
/// NodeIndex values, external ids only appear at the JSON boundary.
class EventTree {
  public:
    /// Validate a TreeSpec and build the tree.  Throws MalformedTree,
    /// BadProbabilities or BadMu with a node-referencing message.
    static EventTree build(const TreeSpec& spec);

    TimeIndex horizon() const { return horizon_; }
    std::size_t node_count() const { return id_.size(); }

    int id(NodeIndex i) const { return id_[i]; }
    TimeIndex time(NodeIndex i) const { return time_[i]; }
    bool is_root(NodeIndex i) const { return time_[i] == 0; }
    NodeIndex parent(NodeIndex i) const { return parent_[i]; }
    double branch_prob(NodeIndex i) const { return prob_[i]; }
    double mu(NodeIndex i) const { return mu_[i]; }
    const std::vector<NodeIndex>& children(NodeIndex i) const { return children_[i]; }
    bool is_leaf(NodeIndex i) const { return children_[i].empty(); }

    /// P(node) = product of branch probabilities from the root.
    double path_prob(NodeIndex i) const { return path_prob_[i]; }
    /// Tail mass sum_{s >= time(i)} mu_s along any path through i (predictable,
    /// identical on the whole subtree of i by path normalization).
    double mu_tail(NodeIndex i) const { return mu_tail_[i]; }

    const std::vector<NodeIndex>& nodes_at(TimeIndex t) const {
        if (t < 0 || t > horizon_)
            throw TimeOrder("time " + std::to_string(t) + " outside [0, horizon]");
        return by_time_[static_cast<std::size_t>(t)];
    }
    const std::vector<NodeIndex>& leaves() const { return by_time_.back(); }

    /// Ancestor of node i at time s <= time(i) (i itself when s == time(i)).
    NodeIndex ancestor_at(NodeIndex i, TimeIndex s) const {
        NodeIndex n = i;
        while (time_[n] > s) n = parent_[n];
        return n;
    }

    /// True when a is an ancestor of (or equal to) b.
    bool is_ancestor(NodeIndex a, NodeIndex b) const {
        return time_[a] <= time_[b] && ancestor_at(b, time_[a]) == a;
    }

    /// All nodes of the subtree rooted at i (i first, then by (time, id)).
    std::vector<NodeIndex> subtree(NodeIndex i) const {
        std::vector<NodeIndex> out{i};
        for (std::size_t k = 0; k < out.size(); ++k)
            for (NodeIndex c : children_[out[k]]) out.push_back(c);
        std::sort(out.begin(), out.end());
        return out;
    }

    /// Conditional probability P(b | a) for an ancestor a of b.
    double cond_prob(NodeIndex a, NodeIndex b) const {
        double p = 1.0;
        NodeIndex n = b;
        while (n != a) {
            p *= prob_[n];
            n = parent_[n];
        }
        return p;
    }

    NodeIndex index_of(int id) const {
        auto it = index_by_id_.find(id);
        if (it == index_by_id_.end())
            throw MalformedTree("unknown node id " + std::to_string(id));
        return it->second;
    }

  private:
    TimeIndex horizon_ = 0;
    std::vector<int> id_;
    std::vector<TimeIndex> time_;
    std::vector<NodeIndex> parent_;
    std::vector<double> prob_;
    std::vector<double> mu_;
    std::vector<std::vector<NodeIndex>> children_;
    std::vector<double> path_prob_;
    std::vector<double> mu_tail_;
    std::vector<std::vector<NodeIndex>> by_time_;
    std::map<int, NodeIndex> index_by_id_;
};

/// Real-valued adapted process: one value per node (the value of X_t on that
/// time-t atom).
class AdaptedProcess {
  public:
    AdaptedProcess() = default;
    AdaptedProcess(const EventTree& tree, double constant = 0.0)
        : tree_(&tree), v_(tree.node_count(), constant) {}
    AdaptedProcess(const EventTree& tree, std::vector<double> values)
        : tree_(&tree), v_(std::move(values)) {
        if (v_.size() != tree.node_count())
            throw InconsistentInput("process has " + std::to_string(v_.size()) +
                                    " values for " + std::to_string(tree.node_count()) +
                                    " nodes");
    }

    /// Build from a map keyed by external node id; every node must be covered.
    static AdaptedProcess from_id_map(const EventTree& tree, const std::map<int, double>& m) {
        std::vector<double> v(tree.node_count());
        for (NodeIndex i = 0; i < tree.node_count(); ++i) {
            auto it = m.find(tree.id(i));
            if (it == m.end())
                throw InconsistentInput("process value missing for node id " +
                                        std::to_string(tree.id(i)));
            v[i] = it->second;
        }
        return AdaptedProcess(tree, std::move(v));
    }

    const EventTree& tree() const { return *tree_; }
    double operator[](NodeIndex i) const { return v_[i]; }
    double& operator[](NodeIndex i) { return v_[i]; }
    const std::vector<double>& values() const { return v_; }
    std::size_t size() const { return v_.size(); }

  private:
    const EventTree* tree_ = nullptr;
    std::vector<double> v_;
};

inline EventTree EventTree::build(const TreeSpec& spec) {
    if (spec.horizon < 0) throw MalformedTree("horizon must be nonnegative");
    if (spec.nodes.empty()) throw MalformedTree("tree has no nodes");

    EventTree t;
    t.horizon_ = spec.horizon;

    std::vector<NodeSpec> nodes = spec.nodes;
    std::stable_sort(nodes.begin(), nodes.end(), [](const NodeSpec& a, const NodeSpec& b) {
        return a.time != b.time ? a.time < b.time : a.id < b.id;
    });

    const std::size_t n = nodes.size();
    t.id_.resize(n);
    t.time_.resize(n);
    t.parent_.assign(n, 0);
    t.prob_.resize(n);
    t.children_.resize(n);
    t.by_time_.resize(static_cast<std::size_t>(spec.horizon) + 1);

    for (NodeIndex i = 0; i < n; ++i) {
        const NodeSpec& s = nodes[i];
        if (s.time < 0 || s.time > spec.horizon)
            throw MalformedTree("node " + std::to_string(s.id) + " has time " +
                                std::to_string(s.time) + " outside [0, horizon]");
        if (!t.index_by_id_.emplace(s.id, i).second)
            throw MalformedTree("duplicate node id " + std::to_string(s.id));
        t.id_[i] = s.id;
        t.time_[i] = s.time;
        t.by_time_[static_cast<std::size_t>(s.time)].push_back(i);
    }

    for (NodeIndex i = 0; i < n; ++i) {
        const NodeSpec& s = nodes[i];
        if (s.time == 0) {
            if (s.parent)
                throw MalformedTree("root node " + std::to_string(s.id) +
                                    " must not have a parent");
            t.parent_[i] = i;
        } else {
            if (!s.parent)
                throw MalformedTree("node " + std::to_string(s.id) + " has no parent");
            auto it = t.index_by_id_.find(*s.parent);
            if (it == t.index_by_id_.end())
                throw MalformedTree("node " + std::to_string(s.id) +
                                    " references unknown parent " + std::to_string(*s.parent));
            NodeIndex p = it->second;
            if (t.time_[p] != s.time - 1)
                throw MalformedTree("node " + std::to_string(s.id) +
                                    " has parent at time " + std::to_string(t.time_[p]) +
                                    ", expected " + std::to_string(s.time - 1));
            t.parent_[i] = p;
            t.children_[p].push_back(i);
        }
        if (!(s.prob >= 0.0))
            throw BadProbabilities("node " + std::to_string(s.id) +
                                   " has negative branch probability");
        t.prob_[i] = s.prob;
    }

    if (t.by_time_[0].size() != 1) throw MalformedTree("tree must have exactly one root");
    if (std::abs(t.prob_[t.by_time_[0][0]] - 1.0) > kValidationTol)
        throw BadProbabilities("root branch probability must be 1");

    for (NodeIndex i = 0; i < n; ++i) {
        if (t.time_[i] < spec.horizon && t.children_[i].empty())
            throw MalformedTree("node " + std::to_string(t.id_[i]) + " at time " +
                                std::to_string(t.time_[i]) + " has no children");
        if (t.time_[i] == spec.horizon && !t.children_[i].empty())
            throw MalformedTree("terminal node " + std::to_string(t.id_[i]) + " has children");
        if (!t.children_[i].empty()) {
            double s = 0.0;
            for (NodeIndex c : t.children_[i]) s += t.prob_[c];
            if (std::abs(s - 1.0) > kValidationTol)
                throw BadProbabilities("children of node " + std::to_string(t.id_[i]) +
                                       " have branch probabilities summing to " +
                                       std::to_string(s));
        }
    }

    // mu: explicit per-node weights or the uniform default 1/(horizon+1).
    t.mu_.resize(n);
    if (spec.mu.empty()) {
        std::fill(t.mu_.begin(), t.mu_.end(), 1.0 / (spec.horizon + 1.0));
    } else {
        for (NodeIndex i = 0; i < n; ++i) {
            auto it = spec.mu.find(t.id_[i]);
            if (it == spec.mu.end())
                throw BadMu("mu missing for node id " + std::to_string(t.id_[i]));
            if (!(it->second > 0.0))
                throw BadMu("mu must be strictly positive at node id " +
                            std::to_string(t.id_[i]));
            t.mu_[i] = it->second;
        }
    }

    // Path tail sums; per-path normalization makes them constant across
    // siblings, which is checked here and relied on everywhere else.
    t.mu_tail_.assign(n, 0.0);
    for (std::size_t ti = t.by_time_.size(); ti-- > 0;) {
        for (NodeIndex i : t.by_time_[ti]) {
            if (t.children_[i].empty()) {
                t.mu_tail_[i] = t.mu_[i];
            } else {
                double tail = t.mu_tail_[t.children_[i][0]];
                for (NodeIndex c : t.children_[i])
                    if (std::abs(t.mu_tail_[c] - tail) > kValidationTol)
                        throw BadMu("mu path sums differ below node id " +
                                    std::to_string(t.id_[i]));
                t.mu_tail_[i] = t.mu_[i] + tail;
            }
        }
    }
    if (std::abs(t.mu_tail_[t.by_time_[0][0]] - 1.0) > kValidationTol)
        throw BadMu("mu must sum to 1 along every path");

    t.path_prob_.assign(n, 1.0);
    for (NodeIndex i = 0; i < n; ++i)
        t.path_prob_[i] = t.is_root(i) ? 1.0 : t.path_prob_[t.parent_[i]] * t.prob_[i];

    return t;
}

/// E^w[X_s | F_t]: conditional expectation of the time-s slice of X given F_t,
/// optionally reweighted by a per-leaf density w (nonnegative, unit P-mean).
/// Returns one value per time-t node, in nodes_at(t) order.
///
/// Branch probabilities define conditional expectations node-wise, so values
/// are well defined even below P-null branches.  On a subtree where the
/// reweighted mass vanishes the conditional expectation is reported as 0.
inline std::vector<double> cond_expect(const AdaptedProcess& x, TimeIndex s, TimeIndex t,
                                       const std::vector<double>* leaf_weights = nullptr) {
    const EventTree& tree = x.tree();
    if (s < t) throw TimeOrder("cond_expect: s=" + std::to_string(s) + " before t=" +
                               std::to_string(t));
    if (s > tree.horizon() || t < 0) throw TimeOrder("cond_expect: time outside [0, horizon]");

    if (leaf_weights) {
        const auto& lv = tree.leaves();
        if (leaf_weights->size() != lv.size())
            throw InconsistentInput("leaf weight count mismatch");
        double mean = 0.0;
        for (std::size_t k = 0; k < lv.size(); ++k) {
            if ((*leaf_weights)[k] < 0.0) throw BadDensity("negative leaf weight");
            mean += tree.path_prob(lv[k]) * (*leaf_weights)[k];
        }
        if (std::abs(mean - 1.0) > kValidationTol)
            throw BadDensity("leaf weights have P-mean " + std::to_string(mean));
    }

    std::vector<double> out;
    out.reserve(tree.nodes_at(t).size());
    for (NodeIndex n : tree.nodes_at(t)) {
        double num = 0.0, den = 0.0;
        if (leaf_weights) {
            const auto& lv = tree.leaves();
            for (std::size_t k = 0; k < lv.size(); ++k) {
                NodeIndex leaf = lv[k];
                if (!tree.is_ancestor(n, leaf)) continue;
                double w = tree.cond_prob(n, leaf) * (*leaf_weights)[k];
                num += w * x[tree.ancestor_at(leaf, s)];
                den += w;
            }
            out.push_back(den > 0.0 ? num / den : 0.0);
        } else {
            for (NodeIndex m : tree.subtree(n))
                if (tree.time(m) == s) num += tree.cond_prob(n, m) * x[m];
            out.push_back(num);
        }
    }
    return out;
}

/// Backward difference Delta X_t = X_t - X_{t-1} with X_{-1} := 0.
inline AdaptedProcess delta(const AdaptedProcess& x) {
    const EventTree& tree = x.tree();
    AdaptedProcess d(tree);
    for (NodeIndex i = 0; i < tree.node_count(); ++i)
        d[i] = tree.is_root(i) ? x[i] : x[i] - x[tree.parent(i)];
    return d;
}

/// Path-wise cumulative sum; inverse of delta().
inline AdaptedProcess cumsum(const AdaptedProcess& d) {
    const EventTree& tree = d.tree();
    AdaptedProcess x(tree);
    for (NodeIndex i = 0; i < tree.node_count(); ++i)
        x[i] = tree.is_root(i) ? d[i] : x[tree.parent(i)] + d[i];
    return x;
}

/// X + m * 1_{[s, T]} with m F_t-measurable, given as one value per time-t
/// node: adds m (read off the time-t ancestor) to every node at times >= s.
inline AdaptedProcess shift_cash(const AdaptedProcess& x, const std::vector<double>& m_at_t,
                                 TimeIndex t, TimeIndex s) {
    const EventTree& tree = x.tree();
    if (s < t) throw TimeOrder("shift_cash: s=" + std::to_string(s) + " before t=" +
                               std::to_string(t));
    if (m_at_t.size() != tree.nodes_at(t).size())
        throw InconsistentInput("shift_cash: m has " + std::to_string(m_at_t.size()) +
                                " values for " + std::to_string(tree.nodes_at(t).size()) +
                                " time-t nodes");
    std::vector<double> m_by_node(tree.node_count(), 0.0);
    const auto& tn = tree.nodes_at(t);
    for (std::size_t k = 0; k < tn.size(); ++k) m_by_node[tn[k]] = m_at_t[k];

    AdaptedProcess y = x;
    for (NodeIndex i = 0; i < tree.node_count(); ++i)
        if (tree.time(i) >= s) y[i] += m_by_node[tree.ancestor_at(i, t)];
    return y;
}

/// Overload taking m as a full process that is claimed to be F_t-measurable;
/// throws MeasurabilityViolation when m varies inside a time-t subtree.
inline AdaptedProcess shift_cash(const AdaptedProcess& x, const AdaptedProcess& m,
                                 TimeIndex t, TimeIndex s) {
    const EventTree& tree = x.tree();
    for (NodeIndex i = 0; i < tree.node_count(); ++i)
        if (tree.time(i) >= t && std::abs(m[i] - m[tree.ancestor_at(i, t)]) > kValidationTol)
            throw MeasurabilityViolation("shift amount varies inside the time-" +
                                         std::to_string(t) + " subtree at node id " +
                                         std::to_string(tree.id(tree.ancestor_at(i, t))));
    std::vector<double> m_at_t;
    m_at_t.reserve(tree.nodes_at(t).size());
    for (NodeIndex n : tree.nodes_at(t)) m_at_t.push_back(m[n]);
    return shift_cash(x, m_at_t, t, s);
}

}  // namespace treerisk
