#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "treerisk/tree.hpp"

namespace treerisk {

/// Probability measure on the product space Omega x {0..T}, stored as its
/// density Z with respect to Pbar = P (x) mu: one value per node, nonnegative,
/// with E_P[sum_t mu_t Z_t] = 1.
class ProductMeasure {
  public:
    static ProductMeasure from_density(const AdaptedProcess& z) {
        double mass = 0.0;
        for (NodeIndex i = 0; i < z.tree().node_count(); ++i) {
            if (z[i] < 0.0)
                throw BadDensity("density negative at node id " +
                                 std::to_string(z.tree().id(i)));
            mass += z.tree().path_prob(i) * z.tree().mu(i) * z[i];
        }
        if (std::abs(mass - 1.0) > kValidationTol)
            throw BadDensity("density has total mass " + std::to_string(mass));
        return ProductMeasure(z);
    }

    /// Reference measure Pbar itself (Z identically 1).
    static ProductMeasure reference(const EventTree& tree) {
        return ProductMeasure(AdaptedProcess(tree, 1.0));
    }

    const EventTree& tree() const { return z_.tree(); }
    const AdaptedProcess& density() const { return z_; }
    double z(NodeIndex i) const { return z_[i]; }

    /// Mass of the single product atom (node i, time(i)).
    double atom_mass(NodeIndex i) const {
        return tree().path_prob(i) * tree().mu(i) * z_[i];
    }

    /// E_Qbar[X] = E_P[sum_t mu_t Z_t X_t].
    double expect(const AdaptedProcess& x) const {
        double e = 0.0;
        for (NodeIndex i = 0; i < tree().node_count(); ++i) e += atom_mass(i) * x[i];
        return e;
    }

  private:
    explicit ProductMeasure(AdaptedProcess z) : z_(std::move(z)) {}
    AdaptedProcess z_;
};

/// U_t = E_P[sum_{s>=t} mu_s Z_s | F_t]: the nonnegative supermartingale whose
/// multiplicative decomposition carries the (Q, gamma) split of the measure.
/// U(tail atom of node n) is also Qbar(A_n x T_t) / P(n).
inline AdaptedProcess u_process(const ProductMeasure& q) {
    const EventTree& tree = q.tree();
    AdaptedProcess u(tree);
    for (TimeIndex t = tree.horizon(); t >= 0; --t)
        for (NodeIndex n : tree.nodes_at(t)) {
            double v = tree.mu(n) * q.z(n);
            for (NodeIndex c : tree.children(n)) v += tree.branch_prob(c) * u[c];
            u[n] = v;
        }
    return u;
}

/// Multiplicative Ito-Watanabe decomposition U = M * D of a nonnegative
/// supermartingale with U_0 = 1: M a nonnegative martingale, D predictable and
/// nonincreasing with D_0 = 1.
///
/// D_t = prod_{s<t} E[U_{s+1} | F_s] / U_s up to the hitting time of zero and
/// 0 afterwards; when U dies predictably (E[U_{t+1} | F_t] = 0 with U_t > 0)
/// D drops to 0 one step later and M freezes at its last value.  The pair is
/// unique on {U > 0}.
inline std::pair<AdaptedProcess, AdaptedProcess> ito_watanabe(const AdaptedProcess& u) {
    const EventTree& tree = u.tree();
    for (NodeIndex i = 0; i < tree.node_count(); ++i)
        if (u[i] < 0.0)
            throw NegativeValue("supermartingale negative at node id " +
                                std::to_string(tree.id(i)));
    NodeIndex root = tree.nodes_at(0)[0];
    if (std::abs(u[root] - 1.0) > kValidationTol)
        throw BadStart("supermartingale must start at 1, got " + std::to_string(u[root]));
    for (NodeIndex i = 0; i < tree.node_count(); ++i) {
        if (tree.is_leaf(i)) continue;
        double e = 0.0;
        for (NodeIndex c : tree.children(i)) e += tree.branch_prob(c) * u[c];
        if (e > u[i] + kValidationTol)
            throw NotSupermartingale("E[U_{t+1} | F_t] = " + std::to_string(e) + " > U_t = " +
                                     std::to_string(u[i]) + " at node id " +
                                     std::to_string(tree.id(i)));
    }

    AdaptedProcess m(tree), d(tree);
    d[root] = 1.0;
    m[root] = 1.0;  // U_0 = 1
    for (TimeIndex t = 1; t <= tree.horizon(); ++t)
        for (NodeIndex n : tree.nodes_at(t)) {
            NodeIndex p = tree.parent(n);
            double ratio = 0.0;
            if (d[p] > 0.0 && u[p] > 0.0) {
                double e = 0.0;
                for (NodeIndex c : tree.children(p)) e += tree.branch_prob(c) * u[c];
                // The exact ratio is <= 1; clamp away validation-tolerance noise
                // so that D stays nonincreasing.
                ratio = std::min(e / u[p], 1.0);
            }
            d[n] = d[p] * ratio;
            m[n] = d[n] > 0.0 ? u[n] / d[n] : m[p];
        }
    return {m, d};
}

/// Disintegration Qbar = Q (x) gamma: density process M of Q, predictable
/// discount D, and the adapted allocation gamma_t = D_t - D_{t+1}.
struct Disintegration {
    AdaptedProcess m;      ///< martingale density of the scenario marginal Q
    AdaptedProcess d;      ///< predictable nonincreasing discount, D_0 = 1
    AdaptedProcess gamma;  ///< gamma_t = D_t - D_{t+1} >= 0, D_{T+1} := 0
};

/// Split a product measure into its scenario marginal and time allocation via
/// the Ito-Watanabe decomposition of U; the density identity
/// Z_t = M_t gamma_t / mu_t then reassembles it.
inline Disintegration decompose(const ProductMeasure& q) {
    const EventTree& tree = q.tree();
    auto [m, d] = ito_watanabe(u_process(q));
    AdaptedProcess gamma(tree);
    for (NodeIndex i = 0; i < tree.node_count(); ++i) {
        double next = 0.0;  // D_{T+1} := 0
        if (!tree.is_leaf(i)) next = d[tree.children(i)[0]];  // D predictable
        gamma[i] = std::max(d[i] - next, 0.0);
    }
    return {m, d, gamma};
}

/// Rebuild the product measure from a martingale density M and an allocation
/// gamma via Z_t = M_t gamma_t / mu_t.
inline ProductMeasure compose(const AdaptedProcess& m, const AdaptedProcess& gamma) {
    const EventTree& tree = m.tree();
    NodeIndex root = tree.nodes_at(0)[0];
    if (std::abs(m[root] - 1.0) > kValidationTol)
        throw NotMartingale("density process must start at 1");
    for (NodeIndex i = 0; i < tree.node_count(); ++i) {
        if (m[i] < 0.0)
            throw NotMartingale("density process negative at node id " +
                                std::to_string(tree.id(i)));
        if (gamma[i] < 0.0)
            throw BadGamma("gamma negative at node id " + std::to_string(tree.id(i)));
        if (tree.is_leaf(i)) continue;
        double e = 0.0;
        for (NodeIndex c : tree.children(i)) e += tree.branch_prob(c) * m[c];
        if (std::abs(e - m[i]) > kValidationTol)
            throw NotMartingale("E[M_{t+1} | F_t] = " + std::to_string(e) + " != M_t at node id " +
                                std::to_string(tree.id(i)));
    }
    // gamma must allocate full mass Q-a.s.: path sums are 1 on every path the
    // scenario marginal charges.
    for (NodeIndex leaf : tree.leaves()) {
        if (tree.path_prob(leaf) * m[leaf] <= 0.0) continue;
        double s = 0.0;
        for (NodeIndex n = leaf;; n = tree.parent(n)) {
            s += gamma[n];
            if (tree.is_root(n)) break;
        }
        if (std::abs(s - 1.0) > kValidationTol)
            throw BadGamma("gamma sums to " + std::to_string(s) +
                           " on the path of leaf id " + std::to_string(tree.id(leaf)));
    }
    AdaptedProcess z(tree);
    for (NodeIndex i = 0; i < tree.node_count(); ++i)
        z[i] = m[i] * gamma[i] / tree.mu(i);
    return ProductMeasure::from_density(z);
}

/// Both sides of the summation-by-parts identity
///   sum_{s>=t} gamma_s X_s = sum_{s=t}^T D_s (X_s - X_{s-1})
/// evaluated path-wise; returned per leaf in leaves() order.
struct PartsIdentity {
    std::vector<double> lhs;
    std::vector<double> rhs;
};

inline PartsIdentity integration_by_parts(const AdaptedProcess& x, const Disintegration& dis,
                                          TimeIndex t) {
    const EventTree& tree = x.tree();
    if (t < 0 || t > tree.horizon()) throw TimeOrder("integration_by_parts: bad time");
    AdaptedProcess dx = delta(x);
    PartsIdentity out;
    for (NodeIndex leaf : tree.leaves()) {
        double lhs = 0.0, rhs = 0.0;
        for (NodeIndex n = leaf;; n = tree.parent(n)) {
            if (tree.time(n) >= t) {
                lhs += dis.gamma[n] * x[n];
                // The telescoping starts from zero at s = t (X_{t-1} := 0), so
                // the first increment is X_t itself.
                rhs += dis.d[n] * (tree.time(n) == t ? x[n] : dx[n]);
            }
            if (tree.is_root(n)) break;
        }
        out.lhs.push_back(lhs);
        out.rhs.push_back(rhs);
    }
    return out;
}

/// F_bar_t-measurable function: one value per strict-past atom (node, time(node))
/// with time < t, plus one value per time-t tail atom.  Tail entries are
/// std::nullopt where they are undefined (D_t = 0).
struct OptionalValue {
    TimeIndex t = 0;
    /// Indexed like the tree's nodes; meaningful only for nodes with time < t.
    std::vector<double> early;
    /// One entry per time-t node, in nodes_at(t) order.
    std::vector<std::optional<double>> tail;
};

/// E_Qbar[X | F_bar_t]: X_s itself on each strict-past atom, and the
/// gamma-weighted tail expectation E_Q[sum_{s>=t} (gamma_s / D_t) X_s | F_t]
/// on each time-t tail atom (undefined where D_t = 0, reported as nullopt;
/// on Q-null tail atoms with D_t > 0 any version works and 0 is returned).
inline OptionalValue optional_cond_expect(const ProductMeasure& q, const AdaptedProcess& x,
                                          TimeIndex t) {
    const EventTree& tree = q.tree();
    if (t < 0 || t > tree.horizon()) throw TimeOrder("optional_cond_expect: bad time");
    Disintegration dis = decompose(q);

    OptionalValue out;
    out.t = t;
    out.early.assign(tree.node_count(), 0.0);
    for (TimeIndex j = 0; j < t; ++j)
        for (NodeIndex n : tree.nodes_at(j)) out.early[n] = x[n];

    for (NodeIndex n : tree.nodes_at(t)) {
        if (dis.d[n] <= 0.0) {
            out.tail.push_back(std::nullopt);
            continue;
        }
        if (dis.m[n] <= 0.0) {
            out.tail.push_back(0.0);
            continue;
        }
        double v = 0.0;
        for (NodeIndex mm : tree.subtree(n))
            v += tree.cond_prob(n, mm) * dis.m[mm] * dis.gamma[mm] * x[mm];
        out.tail.push_back(v / (dis.m[n] * dis.d[n]));
    }
    return out;
}

/// Diagnostics for equality of two measures on the optional sigma-field
/// F_bar_t.  `equal` compares the conditional densities E_Pbar[Z | F_bar_t]
/// atom by atom; the two factor flags report the scenario/allocation split
/// (Q1 = Q2 on F_t where D1_t > 0, and gamma1 = gamma2 before t, Q1-a.s.).
struct RestrictionReport {
    bool equal = false;
    bool q_equal_on_ft = false;
    bool gamma_equal_before_t = false;
};

inline RestrictionReport restrict_equal(const ProductMeasure& q1, const ProductMeasure& q2,
                                        TimeIndex t, double tol = kValidationTol) {
    const EventTree& tree = q1.tree();
    if (&tree != &q2.tree()) throw InconsistentInput("measures live on different trees");
    if (t < 0 || t > tree.horizon()) throw TimeOrder("restrict_equal: bad time");

    RestrictionReport r;
    r.equal = true;
    // Compare atom masses rather than density versions: strict-past atoms have
    // mass P(n) mu(n) Z(n), tail atoms have mass P(n) U_t(n).  This is the
    // conditional-density comparison E_Pbar[Z | F_bar_t] up to the positive
    // Pbar-atom weights, and it is insensitive to values on null branches.
    AdaptedProcess u1 = u_process(q1), u2 = u_process(q2);
    for (TimeIndex j = 0; j < t; ++j)
        for (NodeIndex n : tree.nodes_at(j))
            if (std::abs(q1.atom_mass(n) - q2.atom_mass(n)) > tol) r.equal = false;
    for (NodeIndex n : tree.nodes_at(t))
        if (std::abs(tree.path_prob(n) * (u1[n] - u2[n])) > tol) r.equal = false;

    Disintegration d1 = decompose(q1), d2 = decompose(q2);
    r.q_equal_on_ft = true;
    for (NodeIndex n : tree.nodes_at(t))
        if (d1.d[n] > 0.0 && std::abs(d1.m[n] - d2.m[n]) > tol) r.q_equal_on_ft = false;
    r.gamma_equal_before_t = true;
    for (TimeIndex j = 0; j < t; ++j)
        for (NodeIndex n : tree.nodes_at(j))
            if (tree.path_prob(n) * d1.m[n] > 0.0 &&
                std::abs(d1.gamma[n] - d2.gamma[n]) > tol)
                r.gamma_equal_before_t = false;
    return r;
}

/// F_bar_t-measurable event: a union of strict-past atoms and time-t tail atoms.
struct OptionalSet {
    TimeIndex t = 0;
    /// Indexed like the tree's nodes; meaningful only for nodes with time < t.
    std::vector<char> early;
    /// One entry per time-t node, in nodes_at(t) order.
    std::vector<char> tail;

    static OptionalSet empty(const EventTree& tree, TimeIndex t) {
        OptionalSet b;
        b.t = t;
        b.early.assign(tree.node_count(), 0);
        b.tail.assign(tree.nodes_at(t).size(), 0);
        return b;
    }
    static OptionalSet all(const EventTree& tree, TimeIndex t) {
        OptionalSet b = empty(tree, t);
        std::fill(b.early.begin(), b.early.end(), 1);
        std::fill(b.tail.begin(), b.tail.end(), 1);
        return b;
    }
};

/// Paste Q1 and Q2 at time t on the event B:
///   Q0(A) = E_Q1[ E_Q2[1_A | F_bar_t] 1_B + 1_{B^c} 1_A ].
/// Requires Q1 << Q2 on F_bar_t (checked atom-wise; NotAbsContinuous).
inline ProductMeasure paste(const ProductMeasure& q1, const ProductMeasure& q2, TimeIndex t,
                            const OptionalSet& b) {
    const EventTree& tree = q1.tree();
    if (&tree != &q2.tree()) throw InconsistentInput("measures live on different trees");
    if (b.t != t) throw InconsistentInput("paste: event lives on a different time");
    if (t < 0 || t > tree.horizon()) throw TimeOrder("paste: bad time");

    AdaptedProcess u1 = u_process(q1), u2 = u_process(q2);
    for (TimeIndex j = 0; j < t; ++j)
        for (NodeIndex n : tree.nodes_at(j))
            if (q2.atom_mass(n) == 0.0 && q1.atom_mass(n) > 0.0)
                throw NotAbsContinuous("Q1 charges the past atom at node id " +
                                       std::to_string(tree.id(n)) + " that Q2 does not");
    for (NodeIndex n : tree.nodes_at(t))
        if (tree.path_prob(n) * u2[n] == 0.0 && tree.path_prob(n) * u1[n] > 0.0)
            throw NotAbsContinuous("Q1 charges the tail atom at node id " +
                                   std::to_string(tree.id(n)) + " that Q2 does not");

    // Per product atom: inside B, redistribute the Q1-mass of its F_bar_t atom
    // according to Q2's conditional law; outside B keep Q1.  Strict-past atoms
    // are themselves F_bar_t atoms, so redistribution is the identity there and
    // the density stays Q1's whether or not they belong to B.
    AdaptedProcess z0(tree);
    for (TimeIndex j = 0; j < t; ++j)
        for (NodeIndex n : tree.nodes_at(j)) z0[n] = q1.z(n);
    const auto& tnodes = tree.nodes_at(t);
    for (std::size_t k = 0; k < tnodes.size(); ++k) {
        NodeIndex n = tnodes[k];
        for (NodeIndex m : tree.subtree(n)) {
            if (b.tail[k] && u2[n] > 0.0) {
                // Z0 = (mass1 / mass2) * Z2 on this tail atom.
                z0[m] = q2.z(m) * (u1[n] / u2[n]);
            } else if (b.tail[k]) {
                z0[m] = 0.0;  // Q1-null atom by absolute continuity
            } else {
                z0[m] = q1.z(m);
            }
        }
    }
    return ProductMeasure::from_density(z0);
}

}  // namespace treerisk
