#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "treerisk/ext_real.hpp"
#include "treerisk/optional_measure.hpp"
#include "treerisk/polytope.hpp"
#include "treerisk/rng.hpp"
#include "treerisk/tree.hpp"

namespace treerisk {

/// Tail atoms of the product reference measure below node n: every subtree
/// node m paired with its conditional weight P(m|n) mu(m) / mu_tail(n).
struct TailAtoms {
    std::vector<NodeIndex> nodes;
    std::vector<double> pbar;
};

inline TailAtoms tail_atoms(const EventTree& tree, NodeIndex n) {
    TailAtoms out;
    out.nodes = tree.subtree(n);
    out.pbar.reserve(out.nodes.size());
    for (NodeIndex m : out.nodes)
        out.pbar.push_back(tree.cond_prob(n, m) * tree.mu(m) / tree.mu_tail(n));
    return out;
}

/// Conditional tail density of a disintegrated measure at node n: the mass the
/// measure assigns to the atom {m} x {time(m)} relative to its tail at n,
/// i.e. P(m|n) (M_m / M_n) gamma_m / D_n.  Undefined when D_n = 0; on Q-null
/// nodes (M_n = 0) the all-zero version is returned.
inline std::vector<double> tail_density(const EventTree& tree, const Disintegration& dis,
                                        NodeIndex n, const std::vector<NodeIndex>& nodes) {
    if (dis.d[n] <= 0.0) throw ZeroDiscount("tail density undefined where D vanishes");
    std::vector<double> zeta(nodes.size(), 0.0);
    if (dis.m[n] <= 0.0) return zeta;
    for (std::size_t a = 0; a < nodes.size(); ++a) {
        NodeIndex m = nodes[a];
        zeta[a] = tree.cond_prob(n, m) * (dis.m[m] / dis.m[n]) * dis.gamma[m] / dis.d[n];
    }
    return zeta;
}

namespace detail {

inline double xlogratio(double p, double q) {
    if (p <= 0.0) return 0.0;
    return p * std::log(p / q);
}

inline double log_sum_exp(const std::vector<double>& a) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : a) mx = std::max(mx, v);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double v : a) s += std::exp(v - mx);
    return mx + std::log(s);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// entropic family
// ---------------------------------------------------------------------------

/// rho_t(X) at node n for the entropic measure with risk aversion r:
/// (1/r) log of the tail-atom expectation of exp(-r X).
inline double entropic_eval_at(const AdaptedProcess& x, NodeIndex n, double r) {
    const EventTree& tree = x.tree();
    TailAtoms atoms = tail_atoms(tree, n);
    std::vector<double> a(atoms.nodes.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        double w = atoms.pbar[i];
        a[i] = w > 0.0 ? std::log(w) - r * x[atoms.nodes[i]]
                       : -std::numeric_limits<double>::infinity();
    }
    return detail::log_sum_exp(a) / r;
}

/// Minimal penalty of the entropic measure: (1/r) times the conditional
/// relative entropy of the measure's tail density against the reference tail.
/// Infinite where the measure has no tail mass (D_n = 0).
inline ExtReal entropic_penalty_at(const EventTree& tree, const Disintegration& dis,
                                   NodeIndex n, double r) {
    if (dis.d[n] <= 0.0) return ExtReal::infinity();
    if (dis.m[n] <= 0.0) return ExtReal(0.0);
    TailAtoms atoms = tail_atoms(tree, n);
    std::vector<double> zeta = tail_density(tree, dis, n, atoms.nodes);
    double acc = 0.0;
    for (std::size_t i = 0; i < zeta.size(); ++i)
        acc += detail::xlogratio(zeta[i], atoms.pbar[i]);
    return ExtReal(std::max(acc, 0.0) / r);
}

/// One-step minimal penalty of the entropic measure at an internal node:
/// relative entropy of the induced stop-or-continue distribution
/// (gamma_n / D_n on "stop now", branch mass times D_{t+1}/D_t on each child)
/// against its reference analogue built from mu.
inline ExtReal entropic_one_step_at(const EventTree& tree, const Disintegration& dis,
                                    NodeIndex n, double r) {
    if (tree.is_leaf(n)) throw TimeOrder("one-step penalty needs a node before the horizon");
    if (dis.d[n] <= 0.0) return ExtReal::infinity();
    if (dis.m[n] <= 0.0) return ExtReal(0.0);
    double acc = detail::xlogratio(dis.gamma[n] / dis.d[n], tree.mu(n) / tree.mu_tail(n));
    for (NodeIndex c : tree.children(n)) {
        double a = tree.branch_prob(c) * (dis.m[c] / dis.m[n]) * (dis.d[c] / dis.d[n]);
        double b = tree.branch_prob(c) * tree.mu_tail(c) / tree.mu_tail(n);
        if (a > 0.0 && b <= 0.0) return ExtReal::infinity();
        acc += detail::xlogratio(a, b);
    }
    return ExtReal(std::max(acc, 0.0) / r);
}

// ---------------------------------------------------------------------------
// AV@R family
// ---------------------------------------------------------------------------

/// rho_t(X) at node n for tail AV@R at level lambda: the worst expectation of
/// the running losses -X over tail densities capped at 1/lambda.
inline double avar_eval_at(const AdaptedProcess& x, NodeIndex n, double lambda) {
    const EventTree& tree = x.tree();
    TailAtoms atoms = tail_atoms(tree, n);
    std::vector<double> losses(atoms.nodes.size());
    for (std::size_t i = 0; i < losses.size(); ++i) losses[i] = -x[atoms.nodes[i]];
    return capped_linear_max(losses, atoms.pbar, lambda);
}

/// Minimal penalty of tail AV@R: 0 when the measure's tail density respects
/// the cap 1/lambda against the reference tail, infinite otherwise (and
/// infinite where D_n = 0).
inline ExtReal avar_penalty_at(const EventTree& tree, const Disintegration& dis, NodeIndex n,
                               double lambda) {
    if (dis.d[n] <= 0.0) return ExtReal::infinity();
    if (dis.m[n] <= 0.0) return ExtReal(0.0);
    TailAtoms atoms = tail_atoms(tree, n);
    std::vector<double> zeta = tail_density(tree, dis, n, atoms.nodes);
    for (std::size_t i = 0; i < zeta.size(); ++i)
        if (zeta[i] > atoms.pbar[i] / lambda + 1e-12) return ExtReal::infinity();
    return ExtReal(0.0);
}

/// One-step penalty of tail AV@R: cap test on the induced stop-or-continue
/// distribution.
inline ExtReal avar_one_step_at(const EventTree& tree, const Disintegration& dis, NodeIndex n,
                                double lambda) {
    if (tree.is_leaf(n)) throw TimeOrder("one-step penalty needs a node before the horizon");
    if (dis.d[n] <= 0.0) return ExtReal::infinity();
    if (dis.m[n] <= 0.0) return ExtReal(0.0);
    double a0 = dis.gamma[n] / dis.d[n];
    double b0 = tree.mu(n) / tree.mu_tail(n);
    if (a0 > b0 / lambda + 1e-12) return ExtReal::infinity();
    for (NodeIndex c : tree.children(n)) {
        double a = tree.branch_prob(c) * (dis.m[c] / dis.m[n]) * (dis.d[c] / dis.d[n]);
        double b = tree.branch_prob(c) * tree.mu_tail(c) / tree.mu_tail(n);
        if (a > b / lambda + 1e-12) return ExtReal::infinity();
    }
    return ExtReal(0.0);
}

/// Decoupled AV@R: sup over allocation processes gamma with per-path tail mass
/// one and cap mu^t / lambda1 of the lambda2-AV@R of the aggregated payoff.
/// The objective is convex in gamma, so the supremum sits at a vertex of the
/// allocation polytope; vertices are enumerated exactly.
inline double decoupled_avar_eval_at(const AdaptedProcess& x, NodeIndex n, double lambda1,
                                     double lambda2) {
    const EventTree& tree = x.tree();
    std::vector<NodeIndex> sub = tree.subtree(n);
    std::vector<std::size_t> local(tree.node_count(), 0);
    for (std::size_t i = 0; i < sub.size(); ++i) local[sub[i]] = i;

    std::vector<NodeIndex> leaves;
    for (NodeIndex m : sub)
        if (tree.is_leaf(m)) leaves.push_back(m);

    // path incidence rows over subtree nodes; caps from the normalized clock
    std::vector<std::vector<double>> a(leaves.size(), std::vector<double>(sub.size(), 0.0));
    for (std::size_t r = 0; r < leaves.size(); ++r)
        for (NodeIndex m = leaves[r];; m = tree.parent(m)) {
            a[r][local[m]] = 1.0;
            if (m == n) break;
        }
    std::vector<double> b(leaves.size(), 1.0), cap(sub.size());
    for (std::size_t i = 0; i < sub.size(); ++i)
        cap[i] = tree.mu(sub[i]) / tree.mu_tail(n) / lambda1;

    std::vector<std::vector<double>> verts = bounded_polytope_vertices(a, b, cap);
    if (verts.empty()) throw InfeasibleFamily("allocation polytope has no vertices");

    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> losses(leaves.size()), weights(leaves.size());
    for (std::size_t r = 0; r < leaves.size(); ++r) weights[r] = tree.cond_prob(n, leaves[r]);
    for (const auto& g : verts) {
        for (std::size_t r = 0; r < leaves.size(); ++r) {
            double y = 0.0;
            for (NodeIndex m = leaves[r];; m = tree.parent(m)) {
                y += g[local[m]] * x[m];
                if (m == n) break;
            }
            losses[r] = -y;
        }
        best = std::max(best, capped_linear_max(losses, weights, lambda2));
    }
    return best;
}

// ---------------------------------------------------------------------------
// simplified entropic family (scenario aversion u, clock aversion v)
// ---------------------------------------------------------------------------

/// rho-hat at node n: sup over allocations gamma of the u-entropic risk of
/// sum_s gamma_s X_s minus (1/v) times the clock entropy H(gamma | mu^t).
/// Solved by alternating exact coordinate maximization: for fixed gamma the
/// optimal scenario tilt is a Gibbs law; for fixed scenario weights the
/// optimal allocation comes from a softmax consumption recursion on the
/// subtree.  Deterministic multistart guards against the biconcave landscape.
inline double simplified_entropic_eval_at(const AdaptedProcess& x, NodeIndex n, double u,
                                          double v) {
    const EventTree& tree = x.tree();
    std::vector<NodeIndex> sub = tree.subtree(n);
    const std::size_t k = sub.size();
    std::vector<std::size_t> local(tree.node_count(), 0);
    for (std::size_t i = 0; i < k; ++i) local[sub[i]] = i;
    std::vector<NodeIndex> leaves;
    for (NodeIndex m : sub)
        if (tree.is_leaf(m)) leaves.push_back(m);

    std::vector<double> mut(k);
    for (std::size_t i = 0; i < k; ++i) mut[i] = tree.mu(sub[i]) / tree.mu_tail(n);

    // objective of an allocation after maximizing out the scenario law, plus
    // the induced subtree scenario weights for the next allocation step
    auto value_and_weights = [&](const std::vector<double>& g, std::vector<double>& w) {
        std::vector<double> a(leaves.size());
        for (std::size_t r = 0; r < leaves.size(); ++r) {
            double y = 0.0;
            for (NodeIndex m = leaves[r];; m = tree.parent(m)) {
                double gm = g[local[m]];
                if (gm > 0.0) y += gm * (x[m] + std::log(gm / mut[local[m]]) / v);
                if (m == n) break;
            }
            double p = tree.cond_prob(n, leaves[r]);
            a[r] = p > 0.0 ? std::log(p) - u * y : -std::numeric_limits<double>::infinity();
        }
        double lse = detail::log_sum_exp(a);
        std::fill(w.begin(), w.end(), 0.0);
        for (std::size_t r = 0; r < leaves.size(); ++r) {
            if (!std::isfinite(a[r])) continue;
            double q = std::exp(a[r] - lse);
            for (NodeIndex m = leaves[r];; m = tree.parent(m)) {
                w[local[m]] += q;
                if (m == n) break;
            }
        }
        return lse / u;
    };

    // exact allocation step for fixed scenario weights w: backward softmax
    // recursion over consumption fractions, then a forward mass sweep
    // (subtree() is time-ordered, so a reverse sweep sees children first)
    auto best_allocation = [&](const std::vector<double>& w, std::vector<double>& g) {
        std::vector<double> c(k, 0.0), sigma(k, 1.0);
        for (std::size_t i = k; i-- > 0;) {
            NodeIndex m = sub[i];
            double wm = w[i];
            double am = wm * (-x[m] + std::log(mut[i]) / v);
            if (tree.is_leaf(m)) {
                c[i] = am;
                sigma[i] = 1.0;
                continue;
            }
            double cc = 0.0;
            for (NodeIndex ch : tree.children(m)) cc += c[local[ch]];
            if (wm <= 0.0) {
                c[i] = std::max(am, cc);
                sigma[i] = am >= cc ? 1.0 : 0.0;
                continue;
            }
            double kap = wm / v;
            double hi = std::max(am, cc) / kap, lo = std::min(am, cc) / kap;
            double lse = hi + std::log1p(std::exp(lo - hi));
            c[i] = kap * lse;
            sigma[i] = std::exp(am / kap - lse);
        }
        std::vector<double> mass(k, 0.0);
        mass[0] = 1.0;
        for (std::size_t i = 0; i < k; ++i) {
            NodeIndex m = sub[i];
            g[i] = mass[i] * sigma[i];
            for (NodeIndex ch : tree.children(m)) mass[local[ch]] = mass[i] - g[i];
        }
    };

    // deterministic starts: reference clock, every Dirac clock, two seeded draws
    std::vector<std::vector<double>> starts;
    starts.push_back(mut);
    for (TimeIndex s = tree.time(n); s <= tree.horizon(); ++s) {
        std::vector<double> g(k, 0.0);
        for (std::size_t i = 0; i < k; ++i)
            if (tree.time(sub[i]) == s) g[i] = 1.0;
        starts.push_back(std::move(g));
    }
    Rng rng = Rng::stream(0x5e9u, static_cast<std::uint64_t>(n));
    for (int draw = 0; draw < 2; ++draw) {
        std::vector<double> g(k, 0.0), mass(k, 0.0);
        mass[0] = 1.0;
        for (std::size_t i = 0; i < k; ++i) {
            NodeIndex m = sub[i];
            double frac = tree.is_leaf(m) ? 1.0 : rng.uniform01();
            g[i] = mass[i] * frac;
            for (NodeIndex ch : tree.children(m)) mass[local[ch]] = mass[i] - g[i];
        }
        starts.push_back(std::move(g));
    }

    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> w(k);
    for (auto g : starts) {
        double val = value_and_weights(g, w);
        for (int it = 0; it < 300; ++it) {
            best_allocation(w, g);
            double next = value_and_weights(g, w);
            if (next < val - 1e-9)
                throw OptimizerFailed("alternating ascent decreased the objective");
            if (next - val < 1e-13) {
                val = next;
                break;
            }
            val = next;
        }
        best = std::max(best, val);
    }
    return best;
}

/// Penalty of the simplified entropic measure: scenario relative entropy at
/// the horizon scaled by 1/u plus expected clock relative entropy scaled by
/// 1/v.  Infinite where D_n = 0.
inline ExtReal simplified_entropic_penalty_at(const EventTree& tree, const Disintegration& dis,
                                              NodeIndex n, double u, double v) {
    if (dis.d[n] <= 0.0) return ExtReal::infinity();
    if (dis.m[n] <= 0.0) return ExtReal(0.0);
    double term_q = 0.0;
    for (NodeIndex l : tree.subtree(n)) {
        if (!tree.is_leaf(l)) continue;
        double pl = tree.cond_prob(n, l);
        if (pl <= 0.0) continue;
        term_q += detail::xlogratio(pl * dis.m[l] / dis.m[n], pl);
    }
    double term_clock = 0.0;
    for (NodeIndex m : tree.subtree(n)) {
        double qm = tree.cond_prob(n, m) * dis.m[m] / dis.m[n];
        if (qm <= 0.0) continue;
        term_clock += qm * detail::xlogratio(dis.gamma[m] / dis.d[n],
                                             tree.mu(m) / tree.mu_tail(n));
    }
    return ExtReal(std::max(term_q, 0.0) / u + std::max(term_clock, 0.0) / v);
}

// ---------------------------------------------------------------------------
// separated families: fixed allocation, Dirac clocks, stopping suprema
// ---------------------------------------------------------------------------

enum class InnerKind { expectation, entropic_rv, avar_rv };

inline const char* to_string(InnerKind k) {
    switch (k) {
        case InnerKind::expectation: return "expectation";
        case InnerKind::entropic_rv: return "entropic";
        case InnerKind::avar_rv: return "avar";
    }
    return "?";
}

/// Static one-period risk functional applied to an aggregated payoff.
struct InnerPsi {
    InnerKind kind = InnerKind::expectation;
    double r = 1.0;       ///< risk aversion for entropic_rv
    double lambda = 0.5;  ///< level for avar_rv
    /// optional scenario density process (positive martingale, M_0 = 1) for
    /// expectation under a tilted model
    std::optional<AdaptedProcess> model;
};

namespace detail {

/// psi applied at node n to a payoff y given on an antichain of descendants
/// (leaves for aggregation, children for one-step recursions).
inline double inner_apply(const EventTree& tree, const InnerPsi& psi, NodeIndex n,
                          const std::vector<NodeIndex>& atoms, const std::vector<double>& y) {
    switch (psi.kind) {
        case InnerKind::expectation: {
            double acc = 0.0;
            if (psi.model) {
                double mn = (*psi.model)[n];
                if (mn <= 0.0) return 0.0;
                for (std::size_t r = 0; r < atoms.size(); ++r)
                    acc += tree.cond_prob(n, atoms[r]) * ((*psi.model)[atoms[r]] / mn) * -y[r];
            } else {
                for (std::size_t r = 0; r < atoms.size(); ++r)
                    acc += tree.cond_prob(n, atoms[r]) * -y[r];
            }
            return acc;
        }
        case InnerKind::entropic_rv: {
            std::vector<double> a(atoms.size());
            for (std::size_t r = 0; r < atoms.size(); ++r) {
                double w = tree.cond_prob(n, atoms[r]);
                a[r] = w > 0.0 ? std::log(w) - psi.r * y[r]
                               : -std::numeric_limits<double>::infinity();
            }
            return log_sum_exp(a) / psi.r;
        }
        case InnerKind::avar_rv: {
            std::vector<double> losses(atoms.size()), weights(atoms.size());
            for (std::size_t r = 0; r < atoms.size(); ++r) {
                losses[r] = -y[r];
                weights[r] = tree.cond_prob(n, atoms[r]);
            }
            return capped_linear_max(losses, weights, psi.lambda);
        }
    }
    throw UnsupportedKind("unknown inner functional");
}

}  // namespace detail

/// rho_t(X) at node n for a fixed global allocation gamma (adapted, per-path
/// mass one): psi of the tail-normalized aggregation.  When the allocation has
/// no mass left from time(n) on, the position pays nothing and the value is 0.
inline double fixed_gamma_eval_at(const AdaptedProcess& x, NodeIndex n,
                                  const AdaptedProcess& gamma, const InnerPsi& psi) {
    const EventTree& tree = x.tree();
    double spent = 0.0;
    for (NodeIndex m = n; !tree.is_root(m);) {
        m = tree.parent(m);
        spent += gamma[m];
    }
    double tail = 1.0 - spent;
    if (tail <= 1e-13) return 0.0;

    std::vector<NodeIndex> leaves;
    for (NodeIndex m : tree.subtree(n))
        if (tree.is_leaf(m)) leaves.push_back(m);
    std::vector<double> y(leaves.size(), 0.0);
    for (std::size_t r = 0; r < leaves.size(); ++r)
        for (NodeIndex m = leaves[r];; m = tree.parent(m)) {
            y[r] += gamma[m] / tail * x[m];
            if (m == n) break;
        }
    return detail::inner_apply(tree, psi, n, leaves, y);
}

/// Allocation concentrated at one date: gamma = indicator of time s.
inline AdaptedProcess dirac_allocation(const EventTree& tree, TimeIndex s) {
    AdaptedProcess g(tree, 0.0);
    for (NodeIndex m : tree.nodes_at(s)) g[m] = 1.0;
    return g;
}

/// Optimal-stopping value sup over stopping times tau >= time(n) of
/// psi_n(X_tau), computed for every node by the backward recursion
/// V = max(-X, psi one-step of -V).  Exact whenever psi is recursively
/// consistent (expectation, entropic); for avar_rv it is the nested variant.
inline std::vector<double> stopping_values(const AdaptedProcess& x, const InnerPsi& psi) {
    const EventTree& tree = x.tree();
    std::vector<double> v(tree.node_count(), 0.0);
    for (std::size_t i = tree.node_count(); i-- > 0;) {  // children have larger indices
        NodeIndex m = static_cast<NodeIndex>(i);
        if (tree.is_leaf(m)) {
            v[m] = -x[m];
            continue;
        }
        const auto& ch = tree.children(m);
        std::vector<double> contv(ch.size());
        for (std::size_t j = 0; j < ch.size(); ++j) contv[j] = -v[ch[j]];
        double cont = detail::inner_apply(tree, psi, m, ch, contv);
        v[m] = std::max(-x[m], cont);
    }
    return v;
}

}  // namespace treerisk
