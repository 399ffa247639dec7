#pragma once
// Time-consistency diagnostics for dynamic risk measures on event trees:
// recursiveness checks, acceptance-set splitting, the penalty cocycle,
// supermartingale tests, Doob / Riesz decompositions of the discounted
// penalty, truncated-horizon bubble profiles, a maximal inequality for the
// excess capital requirement, pasting stability and weak acceptance.
//
// Probe-based checks return a budgeted probabilistic certificate: "pass"
// means no violation was found on a seeded family of probe processes,
// "fail" comes with a replayable counterexample that has been shrunk
// coordinate-wise toward zero while the violation persisted.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "treerisk/errors.hpp"
#include "treerisk/ext_real.hpp"
#include "treerisk/optional_measure.hpp"
#include "treerisk/polytope.hpp"
#include "treerisk/risk.hpp"
#include "treerisk/rng.hpp"
#include "treerisk/tree.hpp"

namespace treerisk {

// ---------------------------------------------------------------------------
// verdicts
// ---------------------------------------------------------------------------

enum class ConsistencyProperty { strong, acceptance, rejection, weak_acceptance };

inline const char* to_string(ConsistencyProperty p) {
    switch (p) {
        case ConsistencyProperty::strong: return "strong";
        case ConsistencyProperty::acceptance: return "acceptance";
        case ConsistencyProperty::rejection: return "rejection";
        case ConsistencyProperty::weak_acceptance: return "weak-acceptance";
    }
    return "?";
}

/// A replayable witness of a violated property: re-evaluating both sides on
/// `x` at (`t`, `node`) reproduces a gap beyond the verdict's tolerance.
struct Counterexample {
    AdaptedProcess x;
    TimeIndex t = 0;
    NodeIndex node = 0;
    double lhs = 0.0;
    double rhs = 0.0;
};

struct ConsistencyVerdict {
    ConsistencyProperty property = ConsistencyProperty::strong;
    bool pass = true;
    std::optional<Counterexample> counterexample;
    double tolerance = kIdentityTol;
};

namespace detail {

/// E_Q[ v | F_t ](n) over the children of n, with Q-weights P(c|n) M_c / M_n.
/// On a Q-null node (M_n <= 0) the conditional expectation is arbitrary; we
/// return 0 and callers skip such nodes.
inline double cond_expect_children(const EventTree& tree, const Disintegration& dis,
                                   NodeIndex n, const std::vector<double>& v) {
    if (dis.m[n] <= 0.0) return 0.0;
    double acc = 0.0;
    for (NodeIndex c : tree.children(n))
        if (dis.m[c] > 0.0) acc += tree.branch_prob(c) * (dis.m[c] / dis.m[n]) * v[c];
    return acc;
}

/// The one-period certainty equivalent -rho_{t+1}(X), embedded as a payment
/// stream: returns  X_t 1_{t} - rho_{t+1}(X) 1_{[t+1, T]}  with the time-(t+1)
/// value read off each node's time-(t+1) ancestor.
inline AdaptedProcess recursion_candidate(const RiskMeasure& rm, const AdaptedProcess& x,
                                          TimeIndex t) {
    const EventTree& tree = rm.tree();
    std::vector<double> rho_next = evaluate(rm, x, t + 1);
    AdaptedProcess y(tree);
    for (NodeIndex n : tree.nodes_at(t)) y[n] = x[n];
    for (NodeIndex n = 0; n < tree.node_count(); ++n)
        if (tree.time(n) >= t + 1)
            y[n] = -rho_next[rank_in_level(tree, tree.ancestor_at(n, t + 1))];
    return y;
}

/// Coordinate-wise minimization of a violating process: each pass tries to
/// zero a coordinate, then to halve it, keeping the change whenever the
/// violation survives.  Stops at a fixpoint (or after a bounded number of
/// sweeps, since halving alone can refine indefinitely).
inline void shrink_counterexample(AdaptedProcess& x,
                                  const std::function<bool(const AdaptedProcess&)>& violates) {
    const NodeIndex count = x.tree().node_count();
    for (int sweep = 0; sweep < 48; ++sweep) {
        bool changed = false;
        for (NodeIndex n = 0; n < count; ++n) {
            if (x[n] == 0.0) continue;
            const double keep = x[n];
            x[n] = 0.0;
            if (violates(x)) { changed = true; continue; }
            x[n] = keep * 0.5;
            if (violates(x)) { changed = true; continue; }
            x[n] = keep;
        }
        if (!changed) return;
    }
}

/// Violation magnitude of `property` for the recursion identity at time t:
/// positive when lhs = rho_t(X) and rhs = rho_t(X_t 1_t - rho_{t+1}(X) 1) differ
/// the wrong way.  Returns the worst gap over time-t nodes and reports the
/// offending node / sides.
inline double recursion_gap(const RiskMeasure& rm, const AdaptedProcess& x, TimeIndex t,
                            ConsistencyProperty property, NodeIndex* node, double* lhs_out,
                            double* rhs_out) {
    const EventTree& tree = rm.tree();
    std::vector<double> lhs = evaluate(rm, x, t);
    std::vector<double> rhs = evaluate(rm, recursion_candidate(rm, x, t), t);
    const auto& level = tree.nodes_at(t);
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < level.size(); ++k) {
        double gap = 0.0;
        switch (property) {
            case ConsistencyProperty::strong: gap = std::abs(lhs[k] - rhs[k]); break;
            case ConsistencyProperty::acceptance: gap = lhs[k] - rhs[k]; break;   // need <=
            case ConsistencyProperty::rejection: gap = rhs[k] - lhs[k]; break;    // need >=
            case ConsistencyProperty::weak_acceptance: gap = 0.0; break;          // not used here
        }
        if (gap > worst) {
            worst = gap;
            if (node) *node = level[k];
            if (lhs_out) *lhs_out = lhs[k];
            if (rhs_out) *rhs_out = rhs[k];
        }
    }
    return worst;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// recursiveness
// ---------------------------------------------------------------------------

/// Both sides of the recursion identity
///     rho_t(X) = rho_t( X_t 1_{t} - rho_{t+1}(X) 1_{[t+1, T]} )
/// per time-t node, plus the strong-consistency verdict for this single X.
struct RecursiveCheck {
    std::vector<double> lhs;
    std::vector<double> rhs;
    ConsistencyVerdict verdict;
};

inline RecursiveCheck check_recursive(const RiskMeasure& rm, const AdaptedProcess& x,
                                      TimeIndex t, double tolerance = kIdentityTol) {
    const EventTree& tree = rm.tree();
    if (t < 0 || t >= tree.horizon()) throw TimeOrder("recursion needs t < horizon");
    RecursiveCheck out;
    out.lhs = evaluate(rm, x, t);
    out.rhs = evaluate(rm, detail::recursion_candidate(rm, x, t), t);
    out.verdict.property = ConsistencyProperty::strong;
    out.verdict.tolerance = tolerance;
    const auto& level = tree.nodes_at(t);
    for (std::size_t k = 0; k < level.size(); ++k) {
        if (std::abs(out.lhs[k] - out.rhs[k]) <= tolerance) continue;
        out.verdict.pass = false;
        out.verdict.counterexample = Counterexample{x, t, level[k], out.lhs[k], out.rhs[k]};
        break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// probe-based consistency certificates
// ---------------------------------------------------------------------------

/// Searches seeded random processes (values uniform in [-5, 5]) for a
/// violation of the recursion identity in the direction selected by
/// `property` (strong: equality; acceptance: lhs <= rhs; rejection:
/// lhs >= rhs), at every t < horizon.  `budget` probes are drawn per time.
inline ConsistencyVerdict check_time_consistent(const RiskMeasure& rm, int budget = 500,
                                                ConsistencyProperty property =
                                                    ConsistencyProperty::strong,
                                                double tolerance = kIdentityTol,
                                                std::uint64_t seed = 2026) {
    const EventTree& tree = rm.tree();
    if (budget < 1) throw MalformedSpec("probe budget must be at least 1");
    ConsistencyVerdict verdict;
    verdict.property = property;
    verdict.tolerance = tolerance;
    for (TimeIndex t = 0; t < tree.horizon(); ++t) {
        Rng rng = Rng::stream(seed, 0xc0215u + static_cast<std::uint64_t>(t));
        for (int probe = 0; probe < budget; ++probe) {
            AdaptedProcess x(tree);
            for (NodeIndex n = 0; n < tree.node_count(); ++n) x[n] = rng.uniform(-5.0, 5.0);
            if (detail::recursion_gap(rm, x, t, property, nullptr, nullptr, nullptr) <=
                tolerance)
                continue;
            detail::shrink_counterexample(x, [&](const AdaptedProcess& y) {
                return detail::recursion_gap(rm, y, t, property, nullptr, nullptr, nullptr) >
                       tolerance;
            });
            Counterexample ce;
            ce.x = x;
            ce.t = t;
            detail::recursion_gap(rm, x, t, property, &ce.node, &ce.lhs, &ce.rhs);
            verdict.pass = false;
            verdict.counterexample = std::move(ce);
            return verdict;
        }
    }
    return verdict;
}

/// Probes the splitting of acceptance sets at time t,
///     A_t = A_{t,t+1} + A_{t+1}:
/// the "subset" direction splits a random accepted X into
/// Y = X_t 1_t - rho_{t+1}(X) 1_{[t+1,T]} (must be accepted at t) plus the
/// remainder (accepted at t+1 by construction); the "superset" direction sums
/// a random accepted one-step process and a random process accepted at t+1
/// and demands acceptance at t.  Rejection consistency certifies the first
/// direction, acceptance consistency the second; both hold under strong
/// consistency.
inline ConsistencyVerdict check_acceptance_split(const RiskMeasure& rm, TimeIndex t,
                                                 int budget = 500,
                                                 double tolerance = kIdentityTol,
                                                 std::uint64_t seed = 2026) {
    const EventTree& tree = rm.tree();
    if (t < 0 || t >= tree.horizon()) throw TimeOrder("splitting needs t < horizon");
    if (budget < 1) throw MalformedSpec("probe budget must be at least 1");
    ConsistencyVerdict verdict;
    verdict.property = ConsistencyProperty::strong;
    verdict.tolerance = tolerance;

    const auto& level = tree.nodes_at(t);
    const auto& next = tree.nodes_at(t + 1);
    Rng rng = Rng::stream(seed, 0x59117u + static_cast<std::uint64_t>(t));

    auto accepted_at = [&](const AdaptedProcess& x, TimeIndex s) {
        std::vector<double> rho = evaluate(rm, x, s);
        std::vector<double> lift(rho.size());
        for (std::size_t k = 0; k < rho.size(); ++k) lift[k] = std::max(rho[k], 0.0);
        return shift_cash(x, lift, s, s);
    };

    for (int probe = 0; probe < budget; ++probe) {
        // subset direction: split an accepted process.
        AdaptedProcess x(tree);
        for (NodeIndex n = 0; n < tree.node_count(); ++n) x[n] = rng.uniform(-5.0, 5.0);
        x = accepted_at(x, t);
        AdaptedProcess y = detail::recursion_candidate(rm, x, t);
        std::vector<double> rho_y = evaluate(rm, y, t);
        for (std::size_t k = 0; k < level.size(); ++k) {
            if (rho_y[k] <= tolerance) continue;
            verdict.pass = false;
            verdict.counterexample = Counterexample{x, t, level[k], rho_y[k], 0.0};
            return verdict;
        }

        // superset direction: sum of an accepted one-step process and a
        // process accepted at t+1.
        AdaptedProcess one_step(tree);
        for (NodeIndex n : level) one_step[n] = rng.uniform(-5.0, 5.0);
        std::vector<double> cert(next.size());
        for (std::size_t k = 0; k < next.size(); ++k) cert[k] = rng.uniform(-5.0, 5.0);
        one_step = shift_cash(one_step, cert, t + 1, t + 1);
        one_step = accepted_at(one_step, t);

        AdaptedProcess late(tree);
        for (NodeIndex n = 0; n < tree.node_count(); ++n)
            if (tree.time(n) >= t + 1) late[n] = rng.uniform(-5.0, 5.0);
        late = accepted_at(late, t + 1);

        AdaptedProcess sum(tree);
        for (NodeIndex n = 0; n < tree.node_count(); ++n) sum[n] = one_step[n] + late[n];
        std::vector<double> rho_sum = evaluate(rm, sum, t);
        for (std::size_t k = 0; k < level.size(); ++k) {
            if (rho_sum[k] <= tolerance) continue;
            verdict.pass = false;
            verdict.counterexample = Counterexample{sum, t, level[k], rho_sum[k], 0.0};
            return verdict;
        }
    }
    return verdict;
}

/// Probes weak acceptance consistency: X with X_t = 0 and rho_{t+1}(X) <= 0
/// must satisfy rho_t(X) <= 0.
inline ConsistencyVerdict check_weak_acceptance(const RiskMeasure& rm, int budget = 500,
                                                double tolerance = kIdentityTol,
                                                std::uint64_t seed = 2026) {
    const EventTree& tree = rm.tree();
    if (budget < 1) throw MalformedSpec("probe budget must be at least 1");
    ConsistencyVerdict verdict;
    verdict.property = ConsistencyProperty::weak_acceptance;
    verdict.tolerance = tolerance;
    for (TimeIndex t = 0; t < tree.horizon(); ++t) {
        Rng rng = Rng::stream(seed, 0x3ea7u + static_cast<std::uint64_t>(t));
        const auto& level = tree.nodes_at(t);
        for (int probe = 0; probe < budget; ++probe) {
            AdaptedProcess x(tree);
            for (NodeIndex n = 0; n < tree.node_count(); ++n)
                x[n] = tree.time(n) == t ? 0.0 : rng.uniform(-5.0, 5.0);
            std::vector<double> rho_next = evaluate(rm, x, t + 1);
            std::vector<double> lift(rho_next.size());
            for (std::size_t k = 0; k < lift.size(); ++k) lift[k] = std::max(rho_next[k], 0.0);
            x = shift_cash(x, lift, t + 1, t + 1);

            auto violates = [&](const AdaptedProcess& y) {
                for (NodeIndex n : level)
                    if (y[n] != 0.0) return false;   // precondition X_t = 0
                for (double v : evaluate(rm, y, t + 1))
                    if (v > tolerance) return false; // precondition rho_{t+1} <= 0
                for (double v : evaluate(rm, y, t))
                    if (v > tolerance) return true;
                return false;
            };
            if (!violates(x)) continue;
            detail::shrink_counterexample(x, violates);
            std::vector<double> rho = evaluate(rm, x, t);
            std::size_t worst = 0;
            for (std::size_t k = 0; k < rho.size(); ++k)
                if (rho[k] > rho[worst]) worst = k;
            verdict.pass = false;
            verdict.counterexample = Counterexample{x, t, level[worst], rho[worst], 0.0};
            return verdict;
        }
    }
    return verdict;
}

// ---------------------------------------------------------------------------
// penalty cocycle
// ---------------------------------------------------------------------------

/// Residual of the penalty cocycle at every time-t node:
///     D_t alpha_t  -  ( D_t alpha_{t,t+1} + E_Q[ D_{t+1} alpha_{t+1} | F_t ] ).
/// Zero (to tolerance) under strong consistency; >= 0 characterizes
/// acceptance consistency and <= 0 rejection consistency.  Values use the
/// conventions 0 * inf = 0 (so the residual is 0 on {D_t = 0}) and
/// inf - inf = 0 (both sides agree on an infinite penalty); Q-null nodes
/// report 0.  Requires closed-form penalties.
inline std::vector<double> one_step_cocycle_residual(const RiskMeasure& rm,
                                                     const ProductMeasure& q, TimeIndex t) {
    const EventTree& tree = rm.tree();
    if (&q.tree() != &tree) throw InconsistentInput("measure built on another tree");
    if (t < 0 || t >= tree.horizon()) throw TimeOrder("cocycle needs t < horizon");
    if (!has_exact_penalty(rm))
        throw UnsupportedKind("cocycle residuals need closed-form penalties; kind " +
                              std::string(to_string(rm.kind())) +
                              " only has probe lower bounds");
    const double inf = std::numeric_limits<double>::infinity();
    Disintegration dis = decompose(q);
    std::vector<ExtReal> now = penalty(rm, q, t).value;
    std::vector<ExtReal> next = penalty(rm, q, t + 1).value;
    std::vector<ExtReal> step = one_step_penalty(rm, q, t).value;

    // discounted next-period penalty per time-(t+1) node, with 0 * inf = 0
    const auto& next_level = tree.nodes_at(t + 1);
    std::vector<double> dnext(tree.node_count(), 0.0);
    for (std::size_t k = 0; k < next_level.size(); ++k) {
        NodeIndex n = next_level[k];
        if (dis.d[n] <= 0.0) continue;
        dnext[n] = next[k].is_inf() ? inf : dis.d[n] * next[k].as_double();
    }

    const auto& level = tree.nodes_at(t);
    std::vector<double> residual(level.size(), 0.0);
    for (std::size_t k = 0; k < level.size(); ++k) {
        NodeIndex n = level[k];
        if (dis.d[n] <= 0.0 || dis.m[n] <= 0.0) continue;  // 0 * inf = 0 / Q-null
        double lhs = now[k].is_inf() ? inf : dis.d[n] * now[k].as_double();
        double rhs = step[k].is_inf() ? inf : dis.d[n] * step[k].as_double();
        rhs += detail::cond_expect_children(tree, dis, n, dnext);
        if (std::isinf(lhs) && std::isinf(rhs)) continue;  // inf - inf := 0
        residual[k] = lhs - rhs;
    }
    return residual;
}

// ---------------------------------------------------------------------------
// supermartingale tests
// ---------------------------------------------------------------------------

enum class MartingaleSign { supermartingale, submartingale, martingale };

struct SupermartingaleReport {
    bool pass = true;
    double max_violation = 0.0;  ///< worst signed one-step gap beyond 0
    NodeIndex node = 0;          ///< parent node where the worst gap occurs
    double tolerance = kIdentityTol;
};

/// Node-wise one-step comparison of E_Q[ W_{t+1} | F_t ] against W_t under
/// the model part Q of `qbar`.  Nodes that Q does not charge are skipped, as
/// are comparisons against an infinite W_t (trivially satisfied for the
/// supermartingale sign).
inline SupermartingaleReport supermartingale_check(const AdaptedProcess& w,
                                                   const ProductMeasure& qbar,
                                                   MartingaleSign sign =
                                                       MartingaleSign::supermartingale,
                                                   double tolerance = kIdentityTol) {
    const EventTree& tree = w.tree();
    if (&qbar.tree() != &tree) throw InconsistentInput("measure built on another tree");
    Disintegration dis = decompose(qbar);
    std::vector<double> values(tree.node_count());
    for (NodeIndex n = 0; n < tree.node_count(); ++n) values[n] = w[n];

    SupermartingaleReport rep;
    rep.tolerance = tolerance;
    for (NodeIndex n = 0; n < tree.node_count(); ++n) {
        if (tree.is_leaf(n) || dis.m[n] <= 0.0 || tree.path_prob(n) <= 0.0) continue;
        if (std::isinf(w[n])) continue;
        double expected = detail::cond_expect_children(tree, dis, n, values);
        double gap = 0.0;
        switch (sign) {
            case MartingaleSign::supermartingale: gap = expected - w[n]; break;
            case MartingaleSign::submartingale: gap = w[n] - expected; break;
            case MartingaleSign::martingale: gap = std::abs(expected - w[n]); break;
        }
        if (gap > rep.max_violation) {
            rep.max_violation = gap;
            rep.node = n;
        }
    }
    rep.pass = rep.max_violation <= tolerance;
    return rep;
}

/// The supermartingale witness of strong consistency under the model Q x D:
///     W_t = D_t rho_t(X - X_t 1_{[t,T]})  +  sum_{s<=t} D_s (-Delta X_s)
///           +  D_t alpha_t(Qbar),
/// one value per node.  Under a strongly consistent risk measure this is a
/// Q-supermartingale for every finite-penalty model.  Uses 0 * inf = 0 on
/// {D_t = 0}; an infinite penalty on a discounted node yields +inf.
inline AdaptedProcess supermartingale_witness(const RiskMeasure& rm, const AdaptedProcess& x,
                                              const ProductMeasure& qbar) {
    const EventTree& tree = rm.tree();
    if (&qbar.tree() != &tree || &x.tree() != &tree)
        throw InconsistentInput("witness inputs live on different trees");
    const double inf = std::numeric_limits<double>::infinity();
    Disintegration dis = decompose(qbar);
    AdaptedProcess w(tree);
    for (TimeIndex t = 0; t <= tree.horizon(); ++t) {
        AdaptedProcess centered = x;
        for (NodeIndex n = 0; n < tree.node_count(); ++n)
            if (tree.time(n) >= t) centered[n] -= x[tree.ancestor_at(n, t)];
        std::vector<double> rho = evaluate(rm, centered, t);
        std::vector<ExtReal> alpha = penalty(rm, qbar, t).value;
        const auto& level = tree.nodes_at(t);
        for (std::size_t k = 0; k < level.size(); ++k) {
            NodeIndex n = level[k];
            double paid = 0.0;  // sum_{s<=t} D_s (-Delta X_s) along the path
            for (NodeIndex a = n;; a = tree.parent(a)) {
                double delta = tree.is_root(a) ? x[a] : x[a] - x[tree.parent(a)];
                paid -= dis.d[a] * delta;
                if (tree.is_root(a)) break;
            }
            double discounted = 0.0;
            if (dis.d[n] > 0.0)
                discounted = alpha[k].is_inf() ? inf : dis.d[n] * (rho[k] + alpha[k].as_double());
            w[n] = discounted + paid;
        }
    }
    return w;
}

// ---------------------------------------------------------------------------
// Doob and Riesz decompositions of the discounted penalty
// ---------------------------------------------------------------------------

/// Doob and Riesz decompositions of the discounted penalty process
/// t -> D_t alpha_t(Qbar), stored as one value per node:
///   * discounted  =  D_t alpha_t,
///   * predictable =  A_t = sum_{k<t} D_k alpha_{k,k+1}    (A_0 = 0),
///   * martingale  =  M_t = D_t alpha_t + A_t,
///   * potential   =  S_t = E_Q[ sum_{k=t}^{T-1} D_k alpha_{k,k+1} | F_t ],
///   * bubble      =  N_t = D_t alpha_t - S_t   (identically 0 at finite horizon).
struct PenaltyDecomposition {
    AdaptedProcess discounted;
    AdaptedProcess predictable;
    AdaptedProcess martingale;
    AdaptedProcess potential;
    AdaptedProcess bubble;
};

inline PenaltyDecomposition doob_riesz(const RiskMeasure& rm, const ProductMeasure& qbar,
                                       double tolerance = kIdentityTol) {
    const EventTree& tree = rm.tree();
    if (&qbar.tree() != &tree) throw InconsistentInput("measure built on another tree");
    if (!has_exact_penalty(rm))
        throw UnsupportedKind("decompositions need closed-form penalties; kind " +
                              std::string(to_string(rm.kind())) +
                              " only has probe lower bounds");
    Disintegration dis = decompose(qbar);
    auto charged = [&](NodeIndex n) { return tree.path_prob(n) * dis.m[n] > 0.0; };

    PenaltyDecomposition dec{AdaptedProcess(tree), AdaptedProcess(tree), AdaptedProcess(tree),
                             AdaptedProcess(tree), AdaptedProcess(tree)};
    std::vector<double> step(tree.node_count(), 0.0);  // D_t alpha_{t,t+1} per node
    for (TimeIndex t = 0; t <= tree.horizon(); ++t) {
        std::vector<ExtReal> alpha = penalty(rm, qbar, t).value;
        std::vector<ExtReal> one;
        if (t < tree.horizon()) one = one_step_penalty(rm, qbar, t).value;
        const auto& level = tree.nodes_at(t);
        for (std::size_t k = 0; k < level.size(); ++k) {
            NodeIndex n = level[k];
            if (dis.d[n] <= 0.0) continue;  // 0 * inf = 0
            if (alpha[k].is_inf() || (t < tree.horizon() && one[k].is_inf())) {
                if (charged(n))
                    throw InfinitePenalty("the model carries an infinite penalty at node id " +
                                          std::to_string(tree.id(n)) +
                                          "; the discounted penalty is not Q-integrable");
                continue;
            }
            dec.discounted[n] = dis.d[n] * alpha[k].as_double();
            if (t < tree.horizon()) step[n] = dis.d[n] * one[k].as_double();
        }
    }
    for (NodeIndex n = 0; n < tree.node_count(); ++n) {
        dec.predictable[n] =
            tree.is_root(n) ? 0.0 : dec.predictable[tree.parent(n)] + step[tree.parent(n)];
        dec.martingale[n] = dec.discounted[n] + dec.predictable[n];
    }
    // potential by backward recursion: S_T = 0, S_t = D_t alpha_{t,t+1} + E_Q[S_{t+1}|F_t]
    std::vector<double> pot(tree.node_count(), 0.0);
    for (NodeIndex n = tree.node_count(); n-- > 0;)
        if (!tree.is_leaf(n))
            pot[n] = step[n] + detail::cond_expect_children(tree, dis, n, pot);
    for (NodeIndex n = 0; n < tree.node_count(); ++n) {
        dec.potential[n] = pot[n];
        dec.bubble[n] = dec.discounted[n] - pot[n];
    }

    // the Doob part must close: M is a Q-martingale exactly when the penalty
    // cocycle holds, i.e. when the risk measure is strongly consistent.
    SupermartingaleReport mart =
        supermartingale_check(dec.martingale, qbar, MartingaleSign::martingale, tolerance);
    if (!mart.pass)
        throw InconsistentInput(
            "the compensated discounted penalty fails the martingale property by " +
            std::to_string(mart.max_violation) + " at node id " +
            std::to_string(tree.id(mart.node)) + "; the risk measure is not strongly consistent");
    return dec;
}

// ---------------------------------------------------------------------------
// truncated-horizon bubble profile
// ---------------------------------------------------------------------------

/// Trend of the expected discounted penalty across a family of models indexed
/// by the diagnostic date.  For each s in `dates`, the family supplies a risk
/// measure and a model (on a tree whose horizon must be >= s) and the profile
/// records
///     values[i]    = E_Q[ D_s alpha_s(Qbar) ],
///     tail_sums[i] = alpha_0(Qbar) - E_Q[ sum_{k<s} D_k alpha_{k,k+1} ],
/// which agree under strong consistency (the finite-horizon Riesz identity).
/// The fitted trend label extrapolates the value sequence; no infinite-
/// horizon claim is made.
struct BubbleProfile {
    std::vector<TimeIndex> dates;
    std::vector<double> values;
    std::vector<double> tail_sums;
    std::string trend;  ///< "decreasing-to-zero" | "bounded-away" | "inconclusive"
};

namespace detail {

inline std::string classify_trend(const std::vector<double>& v) {
    if (v.empty()) return "inconclusive";
    double scale = 0.0;
    bool finite = true;
    for (double e : v) {
        if (!std::isfinite(e)) finite = false;
        else scale = std::max(scale, std::abs(e));
    }
    if (finite && scale <= 1e-9) return "decreasing-to-zero";
    if (!finite) return "inconclusive";
    const double slack = 1e-9 * std::max(1.0, scale);
    bool nonincreasing = true, nondecreasing = true;
    for (std::size_t i = 0; i + 1 < v.size(); ++i) {
        if (v[i + 1] > v[i] + slack) nonincreasing = false;
        if (v[i + 1] < v[i] - slack) nondecreasing = false;
    }
    if (nonincreasing) {
        if (v.back() <= 0.25 * v.front()) return "decreasing-to-zero";
        if (v.back() >= 0.75 * v.front()) return "bounded-away";
        return "inconclusive";
    }
    if (nondecreasing) return "bounded-away";
    return "inconclusive";
}

}  // namespace detail

inline BubbleProfile bubble_profile(
    const std::function<RiskMeasure(TimeIndex)>& rm_family,
    const std::function<ProductMeasure(TimeIndex)>& qbar_family,
    const std::vector<TimeIndex>& dates) {
    const double inf = std::numeric_limits<double>::infinity();
    BubbleProfile profile;
    profile.dates = dates;
    for (TimeIndex s : dates) {
        RiskMeasure rm = rm_family(s);
        ProductMeasure q = qbar_family(s);
        const EventTree& tree = rm.tree();
        if (&q.tree() != &tree) throw InconsistentInput("family measure on another tree");
        if (s < 0 || s > tree.horizon())
            throw TimeOrder("diagnostic date " + std::to_string(s) + " outside the tree");
        Disintegration dis = decompose(q);

        std::vector<ExtReal> alpha = penalty(rm, q, s).value;
        const auto& level = tree.nodes_at(s);
        double value = 0.0;
        for (std::size_t k = 0; k < level.size(); ++k) {
            NodeIndex n = level[k];
            double weight = tree.path_prob(n) * dis.m[n];
            if (weight <= 0.0 || dis.d[n] <= 0.0) continue;  // 0 * inf = 0
            value += alpha[k].is_inf() ? inf : weight * dis.d[n] * alpha[k].as_double();
        }
        profile.values.push_back(value);

        ExtReal alpha0 = penalty(rm, q, 0).value.front();
        double spent = 0.0;  // E_Q[ sum_{k<s} D_k alpha_{k,k+1} ]
        for (TimeIndex k = 0; k < s; ++k) {
            std::vector<ExtReal> one = one_step_penalty(rm, q, k).value;
            const auto& kl = tree.nodes_at(k);
            for (std::size_t j = 0; j < kl.size(); ++j) {
                NodeIndex n = kl[j];
                double weight = tree.path_prob(n) * dis.m[n];
                if (weight <= 0.0 || dis.d[n] <= 0.0) continue;
                spent += one[j].is_inf() ? inf : weight * dis.d[n] * one[j].as_double();
            }
        }
        profile.tail_sums.push_back(alpha0.is_inf() ? inf : alpha0.as_double() - spent);
    }
    profile.trend = detail::classify_trend(profile.values);
    return profile;
}

// ---------------------------------------------------------------------------
// maximal inequality for the excess capital requirement
// ---------------------------------------------------------------------------

/// Outcome of the excess-supremum experiment
///     Q( sup_t D_t (rho_t(X) - F_t(X)) >= c )  <=  (rho_0 - F_0) / c,
/// where F_t(X) = E_Q[ -sum_{s>=t} (gamma_s / D_t) X_s | F_t ] - alpha_t(Qbar)
/// is the penalized risk evaluation under the specific model.
struct MaximalInequalityReport {
    double probability = 0.0;  ///< exact, or the Monte Carlo point estimate
    double bound = 0.0;        ///< (rho_0 - F_0) / c
    bool exact = true;
    double lower = 0.0;        ///< 99% Wilson interval (equals probability when exact)
    double upper = 0.0;
    bool pass = true;
};

/// Runs the experiment with exact path enumeration when `trials` == 0, and
/// as a Monte Carlo estimate with a 99% Wilson interval otherwise.  `pass`
/// asserts probability <= bound (exact mode) or interval consistency with the
/// bound (Monte Carlo mode).
inline MaximalInequalityReport maximal_inequality_experiment(
    const RiskMeasure& rm, const ProductMeasure& qbar, const AdaptedProcess& x, int trials,
    double c, std::uint64_t seed = 2026) {
    const EventTree& tree = rm.tree();
    if (&qbar.tree() != &tree || &x.tree() != &tree)
        throw InconsistentInput("experiment inputs live on different trees");
    if (c <= 0.0) throw InconsistentInput("the threshold c must be positive");
    Disintegration dis = decompose(qbar);
    auto charged = [&](NodeIndex n) { return tree.path_prob(n) * dis.m[n] > 0.0; };

    // excess process Y_t = D_t (rho_t - F_t) = D_t rho_t + E_Q[sum gamma X | F_t] + D_t alpha_t
    std::vector<double> excess(tree.node_count(), 0.0);
    for (TimeIndex t = 0; t <= tree.horizon(); ++t) {
        std::vector<double> rho = evaluate(rm, x, t);
        std::vector<ExtReal> alpha = penalty(rm, qbar, t).value;
        const auto& level = tree.nodes_at(t);
        for (std::size_t k = 0; k < level.size(); ++k) {
            NodeIndex n = level[k];
            if (!charged(n) || dis.d[n] <= 0.0) continue;
            if (alpha[k].is_inf())
                throw InfinitePenalty("the model has an infinite penalty at node id " +
                                      std::to_string(tree.id(n)) +
                                      "; the maximal inequality is trivial");
            double tail = 0.0;  // E_Q[ sum_{s>=t} gamma_s X_s | F_t ](n)
            for (NodeIndex m : tree.subtree(n))
                if (dis.m[m] > 0.0)
                    tail += tree.cond_prob(n, m) * (dis.m[m] / dis.m[n]) * dis.gamma[m] * x[m];
            excess[n] = dis.d[n] * (rho[k] + alpha[k].as_double()) + tail;
        }
    }

    MaximalInequalityReport rep;
    rep.bound = excess[0] / c;  // D_0 = 1, so the root excess is rho_0 - F_0

    auto path_hits = [&](NodeIndex leaf) {
        for (NodeIndex a = leaf;; a = tree.parent(a)) {
            if (excess[a] >= c) return true;
            if (tree.is_root(a)) break;
        }
        return false;
    };

    if (trials <= 0) {
        double prob = 0.0;
        for (NodeIndex leaf : tree.leaves())
            if (charged(leaf) && path_hits(leaf)) prob += tree.path_prob(leaf) * dis.m[leaf];
        rep.probability = rep.lower = rep.upper = prob;
        rep.exact = true;
        rep.pass = prob <= rep.bound + 1e-12;
        return rep;
    }

    Rng rng = Rng::stream(seed, 0x3a71u);
    int hits = 0;
    for (int trial = 0; trial < trials; ++trial) {
        NodeIndex n = 0;
        while (!tree.is_leaf(n)) {  // sample a child under Q
            double u = rng.uniform01(), acc = 0.0;
            NodeIndex pick = tree.children(n).back();
            for (NodeIndex ch : tree.children(n)) {
                acc += dis.m[n] > 0.0 ? tree.branch_prob(ch) * dis.m[ch] / dis.m[n] : 0.0;
                if (u < acc) { pick = ch; break; }
            }
            n = pick;
        }
        if (path_hits(n)) ++hits;
    }
    const double z = 2.5758293035489004;  // 99% two-sided normal quantile
    double nn = trials, p = hits / nn;
    double denom = 1.0 + z * z / nn;
    double center = (p + z * z / (2.0 * nn)) / denom;
    double half = z * std::sqrt(p * (1.0 - p) / nn + z * z / (4.0 * nn * nn)) / denom;
    rep.exact = false;
    rep.probability = p;
    rep.lower = std::max(0.0, center - half);
    rep.upper = std::min(1.0, center + half);
    rep.pass = rep.lower <= rep.bound + 1e-12;
    return rep;
}

// ---------------------------------------------------------------------------
// pasting stability
// ---------------------------------------------------------------------------

struct StabilityViolation {
    std::size_t first = 0;   ///< index of the measure pasted on the event
    std::size_t second = 0;  ///< index of the continuation measure
    TimeIndex t = 0;
    std::size_t set_index = 0;  ///< index into the supplied event battery
    AdaptedProcess density;     ///< the pasting's density, outside the hull
};

struct StabilityReport {
    bool pass = true;
    std::size_t checked = 0;
    std::size_t skipped = 0;  ///< pairs whose pasting is undefined (Q1 not << Q2)
    std::optional<StabilityViolation> violation;
};

/// Closure of a finite family under pasting: every admissible pasting
/// Q_i (+)_B Q_j at a time in `times` via an event from `sets` (the full and
/// empty events at each time are always included) must stay in the convex
/// hull of the family, to tolerance 1e-12.  Pairs violating the absolute-
/// continuity precondition are skipped and counted, since their pasting is
/// undefined; pass `skip_inadmissible = false` to propagate NotAbsContinuous
/// instead.
inline StabilityReport check_stability(const std::vector<ProductMeasure>& measures,
                                       const std::vector<TimeIndex>& times,
                                       const std::vector<OptionalSet>& sets,
                                       bool skip_inadmissible = true) {
    if (measures.empty()) throw MalformedSpec("stability needs at least one measure");
    const EventTree& tree = measures.front().tree();
    for (const ProductMeasure& q : measures)
        if (&q.tree() != &tree) throw InconsistentInput("measures live on different trees");

    std::vector<std::vector<double>> hull;
    hull.reserve(measures.size());
    for (const ProductMeasure& q : measures) {
        std::vector<double> z(tree.node_count());
        for (NodeIndex n = 0; n < tree.node_count(); ++n) z[n] = q.z(n);
        hull.push_back(std::move(z));
    }

    std::vector<OptionalSet> battery = sets;
    for (TimeIndex t : times) {
        battery.push_back(OptionalSet::all(tree, t));
        battery.push_back(OptionalSet::empty(tree, t));
    }

    StabilityReport rep;
    for (std::size_t i = 0; i < measures.size(); ++i)
        for (std::size_t j = 0; j < measures.size(); ++j)
            for (std::size_t b = 0; b < battery.size(); ++b) {
                TimeIndex t = battery[b].t;
                if (std::find(times.begin(), times.end(), t) == times.end()) continue;
                ProductMeasure pasted = ProductMeasure::reference(tree);
                try {
                    pasted = paste(measures[i], measures[j], t, battery[b]);
                } catch (const NotAbsContinuous&) {
                    if (!skip_inadmissible) throw;
                    ++rep.skipped;
                    continue;
                }
                ++rep.checked;
                std::vector<double> z(tree.node_count());
                for (NodeIndex n = 0; n < tree.node_count(); ++n) z[n] = pasted.z(n);
                if (in_convex_hull(hull, z, 1e-12)) continue;
                rep.pass = false;
                rep.violation = StabilityViolation{i, j, t, b, AdaptedProcess(tree, z)};
                return rep;
            }
    return rep;
}

}  // namespace treerisk
