#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "treerisk/optional_measure.hpp"
#include "treerisk/rng.hpp"
#include "treerisk/tree.hpp"

// Shared fixtures and brute-force oracles for the test suite.  The oracles
// deliberately take the dumbest possible route (leaf-path enumeration) so they
// share no code path with the library implementations they check.
namespace trh {

using namespace treerisk;

// ---------------------------------------------------------------------------
// fixtures

/// Recombining-id-free binomial tree with `T` periods.  Level t holds 2^t
/// nodes with ids 2^t - 1 + k (k = 0..2^t-1); node k's children are 2k ("up")
/// and 2k+1 ("down").  mu is uniform 1/(T+1) unless per-time weights are given.
inline TreeSpec binomial_spec(int T, double p_up = 0.5,
                              const std::vector<double>& mu_by_time = {}) {
    TreeSpec spec;
    spec.horizon = T;
    for (int t = 0; t <= T; ++t) {
        int level = (1 << t) - 1;
        for (int k = 0; k < (1 << t); ++k) {
            NodeSpec n;
            n.id = level + k;
            n.time = t;
            if (t > 0) {
                n.parent = (1 << (t - 1)) - 1 + k / 2;
                n.prob = (k % 2 == 0) ? p_up : 1.0 - p_up;
            }
            spec.nodes.push_back(n);
            if (!mu_by_time.empty()) spec.mu[n.id] = mu_by_time[static_cast<size_t>(t)];
        }
    }
    return spec;
}

inline EventTree binomial(int T, double p_up = 0.5,
                          const std::vector<double>& mu_by_time = {}) {
    return EventTree::build(binomial_spec(T, p_up, mu_by_time));
}

/// Random binary tree of the given horizon: branch probabilities in
/// [0.15, 0.85], mu built from random consumption fractions so that every
/// path-sum is exactly 1 and every weight is strictly positive.
inline EventTree random_tree(Rng& rng, int T) {
    TreeSpec spec = binomial_spec(T);
    spec.mu.clear();
    for (auto& n : spec.nodes)
        if (n.time > 0 && n.id % 2 == 1) {  // "up" child within its sibling pair
            double p = rng.uniform(0.15, 0.85);
            n.prob = p;
        }
    // fix the sibling of each randomized branch
    std::map<int, double> up_prob;
    for (auto& n : spec.nodes)
        if (n.time > 0 && n.id % 2 == 1) up_prob[*n.parent] = n.prob;
    for (auto& n : spec.nodes)
        if (n.time > 0 && n.id % 2 == 0) n.prob = 1.0 - up_prob[*n.parent];
    // adapted mu via consumption fractions of the remaining mass
    std::map<int, double> remaining;
    for (auto& n : spec.nodes) {
        double rem = n.time == 0 ? 1.0 : remaining[*n.parent];
        double frac = n.time == T ? 1.0 : rng.uniform(0.1, 0.6);
        spec.mu[n.id] = rem * frac;
        remaining[n.id] = rem * (1.0 - frac);
    }
    return EventTree::build(spec);
}

inline AdaptedProcess random_process(Rng& rng, const EventTree& tree, double bound = 2.0) {
    AdaptedProcess x(tree);
    for (NodeIndex i = 0; i < tree.node_count(); ++i) x[i] = rng.uniform(-bound, bound);
    return x;
}

/// Random strictly positive product-measure density, normalized to mass 1.
inline ProductMeasure random_measure(Rng& rng, const EventTree& tree) {
    AdaptedProcess z(tree);
    double mass = 0.0;
    for (NodeIndex i = 0; i < tree.node_count(); ++i) {
        z[i] = rng.uniform(0.05, 2.0);
        mass += tree.path_prob(i) * tree.mu(i) * z[i];
    }
    for (NodeIndex i = 0; i < tree.node_count(); ++i) z[i] /= mass;
    return ProductMeasure::from_density(z);
}

/// Process from per-id values (terse fixture literals in tests).
inline AdaptedProcess proc(const EventTree& tree, std::map<int, double> by_id) {
    return AdaptedProcess::from_id_map(tree, by_id);
}

// ---------------------------------------------------------------------------
// oracles (leaf-path enumeration throughout)

/// All (leaf, time) product atoms: mass Pbar = P(leaf) mu_s(ancestor) and the
/// node the atom projects to.  This is the finest decomposition of the product
/// space and ignores adaptedness entirely.
struct PathAtom {
    NodeIndex leaf;
    TimeIndex s;
    NodeIndex node;
    double pbar;
};

inline std::vector<PathAtom> path_atoms(const EventTree& tree) {
    std::vector<PathAtom> out;
    for (NodeIndex leaf : tree.leaves())
        for (TimeIndex s = 0; s <= tree.horizon(); ++s) {
            NodeIndex n = tree.ancestor_at(leaf, s);
            out.push_back({leaf, s, n, tree.path_prob(leaf) * tree.mu(n)});
        }
    return out;
}

/// E_Pbar[Z X] by path enumeration.
inline double oracle_ebar(const EventTree& tree, const AdaptedProcess& z,
                          const AdaptedProcess& x) {
    double e = 0.0;
    for (const PathAtom& a : path_atoms(tree)) e += a.pbar * z[a.node] * x[a.node];
    return e;
}

/// E_P[X_s | F_t] at a given time-t node by path enumeration.
inline double oracle_cond_expect(const EventTree& tree, const AdaptedProcess& x, TimeIndex s,
                                 NodeIndex at) {
    double num = 0.0, den = 0.0;
    for (NodeIndex leaf : tree.leaves()) {
        if (!tree.is_ancestor(at, leaf)) continue;
        double p = tree.path_prob(leaf);
        num += p * x[tree.ancestor_at(leaf, s)];
        den += p;
    }
    return num / den;
}

/// E_Qbar[X | tail atom of node n at time t] by path enumeration (0/0 -> 0).
inline double oracle_tail_cond_expect(const ProductMeasure& q, const AdaptedProcess& x,
                                      TimeIndex t, NodeIndex n) {
    const EventTree& tree = q.tree();
    double num = 0.0, den = 0.0;
    for (const PathAtom& a : path_atoms(tree)) {
        if (a.s < t || !tree.is_ancestor(n, a.node)) continue;
        // each (leaf, s) pair contributes its own share of the node atom
        double mass = a.pbar * q.z(a.node);
        num += mass * x[a.node];
        den += mass;
    }
    return den > 0.0 ? num / den : 0.0;
}

}  // namespace trh
