#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "treerisk/errors.hpp"
#include "treerisk/ext_real.hpp"
#include "treerisk/optional_measure.hpp"
#include "treerisk/polytope.hpp"
#include "treerisk/rng.hpp"
#include "treerisk/tree.hpp"
#include "treerisk/zoo.hpp"

namespace treerisk {

enum class RiskKind {
    entropic,
    simplified_entropic,
    avar,
    decoupled_avar,
    fixed_gamma,
    stopping_sup,
    penalty_table,
    recursive_wrapper,
};

inline const char* to_string(RiskKind k) {
    switch (k) {
        case RiskKind::entropic: return "entropic";
        case RiskKind::simplified_entropic: return "simplified-entropic";
        case RiskKind::avar: return "avar";
        case RiskKind::decoupled_avar: return "decoupled-avar";
        case RiskKind::fixed_gamma: return "fixed-gamma";
        case RiskKind::stopping_sup: return "stopping-sup";
        case RiskKind::penalty_table: return "penalty-table";
        case RiskKind::recursive_wrapper: return "recursive-wrapper";
    }
    return "?";
}

/// Scenario measures with explicit penalty entries per (time, node).
struct PenaltyTable {
    std::vector<std::string> ids;
    std::vector<ProductMeasure> measures;
    std::vector<Disintegration> parts;  ///< decompositions, filled on validation
    /// alpha[i][t] holds one entry per time-t node, in node-bucket order
    std::vector<std::map<TimeIndex, std::vector<ExtReal>>> alpha;
};

/// A dynamic convex risk measure on adapted cash-flow processes over one event
/// tree.  Instances are built through the validating factories below; the
/// kind selects the evaluation and penalty algorithms.
class RiskMeasure {
  public:
    RiskKind kind() const { return kind_; }
    const EventTree& tree() const { return *tree_; }

    /// risk-aversion profile (entropic), broadcast when constructed scalar
    double r_at(TimeIndex t) const { return profile_at(r_, t); }
    /// AV@R level profile
    double lambda_at(TimeIndex t) const { return profile_at(lambda_, t); }
    double scenario_aversion() const { return u_; }
    double clock_aversion() const { return v_; }
    double lambda_clock() const { return lambda1_; }
    double lambda_scenario() const { return lambda2_; }
    const AdaptedProcess& allocation() const { return *gamma_; }
    const InnerPsi& inner() const { return psi_; }
    const PenaltyTable& table() const { return *table_; }
    const RiskMeasure& base() const { return *base_; }

    static RiskMeasure entropic(const EventTree& tree, std::vector<double> r) {
        RiskMeasure rm(tree, RiskKind::entropic);
        rm.r_ = validate_profile(tree, std::move(r), "risk aversion", false);
        return rm;
    }
    static RiskMeasure entropic(const EventTree& tree, double r) {
        return entropic(tree, std::vector<double>{r});
    }

    static RiskMeasure simplified_entropic(const EventTree& tree, double u, double v) {
        RiskMeasure rm(tree, RiskKind::simplified_entropic);
        if (!(u > 0.0) || !(v > 0.0))
            throw MalformedSpec("simplified entropic needs positive aversions u, v");
        rm.u_ = u;
        rm.v_ = v;
        return rm;
    }

    static RiskMeasure avar(const EventTree& tree, std::vector<double> lambda) {
        RiskMeasure rm(tree, RiskKind::avar);
        rm.lambda_ = validate_profile(tree, std::move(lambda), "AV@R level", true);
        return rm;
    }
    static RiskMeasure avar(const EventTree& tree, double lambda) {
        return avar(tree, std::vector<double>{lambda});
    }

    static RiskMeasure decoupled_avar(const EventTree& tree, double lambda1, double lambda2) {
        RiskMeasure rm(tree, RiskKind::decoupled_avar);
        if (!(lambda1 > 0.0) || lambda1 > 1.0 || !(lambda2 > 0.0) || lambda2 > 1.0)
            throw MalformedSpec("decoupled AV@R levels must lie in (0, 1]");
        rm.lambda1_ = lambda1;
        rm.lambda2_ = lambda2;
        return rm;
    }

    static RiskMeasure fixed_gamma(const EventTree& tree, AdaptedProcess gamma, InnerPsi psi) {
        RiskMeasure rm(tree, RiskKind::fixed_gamma);
        if (&gamma.tree() != &tree) throw InconsistentInput("allocation built on another tree");
        for (NodeIndex m = 0; m < tree.node_count(); ++m)
            if (gamma[m] < -kValidationTol)
                throw BadGamma("allocation must be nonnegative at node id " +
                               std::to_string(tree.id(m)));
        for (NodeIndex l : tree.leaves()) {
            double s = 0.0;
            for (NodeIndex m = l;; m = tree.parent(m)) {
                s += gamma[m];
                if (tree.is_root(m)) break;
            }
            if (std::abs(s - 1.0) > kIdentityTol)
                throw BadGamma("allocation path mass must be 1 (got " + std::to_string(s) +
                               " at leaf id " + std::to_string(tree.id(l)) + ")");
        }
        validate_psi(tree, psi);
        rm.gamma_ = std::make_shared<AdaptedProcess>(std::move(gamma));
        rm.psi_ = std::move(psi);
        return rm;
    }

    /// Fixed allocation concentrated on one date.
    static RiskMeasure dirac(const EventTree& tree, TimeIndex s, InnerPsi psi) {
        if (s < 0 || s > tree.horizon())
            throw TimeOrder("Dirac date outside the tree horizon");
        return fixed_gamma(tree, dirac_allocation(tree, s), std::move(psi));
    }

    static RiskMeasure stopping_sup(const EventTree& tree, InnerPsi psi) {
        RiskMeasure rm(tree, RiskKind::stopping_sup);
        validate_psi(tree, psi);
        rm.psi_ = std::move(psi);
        return rm;
    }

    static RiskMeasure penalty_table(const EventTree& tree, PenaltyTable table) {
        RiskMeasure rm(tree, RiskKind::penalty_table);
        const std::size_t n = table.ids.size();
        if (n == 0) throw MalformedSpec("penalty table needs at least one measure");
        if (table.measures.size() != n || table.alpha.size() != n)
            throw MalformedSpec("penalty table columns out of alignment");
        table.parts.clear();
        for (const ProductMeasure& q : table.measures) {
            if (&q.tree() != &tree) throw InconsistentInput("table measure on another tree");
            table.parts.push_back(decompose(q));
        }
        for (TimeIndex t = 0; t <= tree.horizon(); ++t) {
            const auto& level = tree.nodes_at(t);
            for (std::size_t i = 0; i < n; ++i) {
                auto it = table.alpha[i].find(t);
                if (it == table.alpha[i].end() || it->second.size() != level.size())
                    throw MalformedSpec("penalty table must cover every time and node");
                for (std::size_t k = 0; k < level.size(); ++k) {
                    const ExtReal& a = it->second[k];
                    if (!a.is_inf() && a.as_double() < 0.0)
                        throw MalformedSpec("penalty entries must be nonnegative");
                    if (!a.is_inf() && table.parts[i].d[level[k]] <= 0.0)
                        throw MalformedSpec(
                            "finite penalty entry where the measure has no tail mass");
                }
            }
            for (std::size_t k = 0; k < level.size(); ++k) {
                bool any = false;
                for (std::size_t i = 0; i < n && !any; ++i)
                    any = !table.alpha[i].at(t)[k].is_inf() &&
                          table.parts[i].m[level[k]] > 0.0 && table.parts[i].d[level[k]] > 0.0;
                if (!any)
                    throw MalformedSpec(
                        "every (time, node) needs one finite entry whose measure charges it");
            }
        }
        rm.table_ = std::make_shared<PenaltyTable>(std::move(table));
        return rm;
    }

    /// Recursive pasting of one-step slices of `base`: the largest
    /// time-consistent measure built from base's one-step acceptance sets.
    static RiskMeasure make_time_consistent(RiskMeasure base) {
        RiskMeasure rm(base.tree(), RiskKind::recursive_wrapper);
        rm.base_ = std::make_shared<RiskMeasure>(std::move(base));
        return rm;
    }

  private:
    RiskMeasure(const EventTree& tree, RiskKind kind) : tree_(&tree), kind_(kind) {}

    static std::vector<double> validate_profile(const EventTree& tree, std::vector<double> p,
                                                const char* what, bool is_level) {
        if (p.size() != 1 && p.size() != static_cast<std::size_t>(tree.horizon()) + 1)
            throw MalformedSpec(std::string(what) +
                                " profile must be scalar or one entry per time");
        for (double v : p) {
            if (!(v > 0.0)) throw MalformedSpec(std::string(what) + " must be positive");
            if (is_level && v > 1.0)
                throw MalformedSpec(std::string(what) + " must lie in (0, 1]");
        }
        return p;
    }

    static void validate_psi(const EventTree& tree, const InnerPsi& psi) {
        if (psi.kind == InnerKind::entropic_rv && !(psi.r > 0.0))
            throw MalformedSpec("inner entropic needs positive risk aversion");
        if (psi.kind == InnerKind::avar_rv && (!(psi.lambda > 0.0) || psi.lambda > 1.0))
            throw MalformedSpec("inner AV@R level must lie in (0, 1]");
        if (psi.model) {
            if (psi.kind != InnerKind::expectation)
                throw MalformedSpec("scenario model only combines with inner expectation");
            const AdaptedProcess& m = *psi.model;
            if (&m.tree() != &tree) throw InconsistentInput("scenario model on another tree");
            if (std::abs(m[tree.nodes_at(0)[0]] - 1.0) > kValidationTol)
                throw BadStart("scenario model must start at 1");
            for (NodeIndex i = 0; i < tree.node_count(); ++i) {
                if (m[i] < 0.0) throw NegativeValue("scenario model must be nonnegative");
                if (tree.is_leaf(i)) continue;
                double e = 0.0;
                for (NodeIndex c : tree.children(i)) e += tree.branch_prob(c) * m[c];
                if (std::abs(e - m[i]) > kValidationTol)
                    throw NotMartingale("scenario model must be a martingale");
            }
        }
    }

    double profile_at(const std::vector<double>& p, TimeIndex t) const {
        if (t < 0 || t > tree_->horizon()) throw TimeOrder("time outside the tree horizon");
        return p.size() == 1 ? p[0] : p[static_cast<std::size_t>(t)];
    }

    const EventTree* tree_;
    RiskKind kind_;
    std::vector<double> r_{1.0};
    std::vector<double> lambda_{0.5};
    double u_ = 1.0, v_ = 1.0;
    double lambda1_ = 0.5, lambda2_ = 0.5;
    std::shared_ptr<AdaptedProcess> gamma_;
    InnerPsi psi_;
    std::shared_ptr<PenaltyTable> table_;
    std::shared_ptr<RiskMeasure> base_;
};

namespace detail {

/// Position of n inside nodes_at(time(n)); buckets are contiguous because
/// nodes are stored sorted by (time, id).
inline std::size_t rank_in_level(const EventTree& tree, NodeIndex n) {
    return n - tree.nodes_at(tree.time(n)).front();
}

}  // namespace detail

/// rho_t(X): one value per time-t node, in nodes_at(t) order.
inline std::vector<double> evaluate(const RiskMeasure& rm, const AdaptedProcess& x,
                                    TimeIndex t) {
    const EventTree& tree = rm.tree();
    if (&x.tree() != &tree) throw InconsistentInput("process built on another tree");
    const auto& level = tree.nodes_at(t);
    std::vector<double> out(level.size());

    switch (rm.kind()) {
        case RiskKind::entropic:
            for (std::size_t k = 0; k < level.size(); ++k)
                out[k] = entropic_eval_at(x, level[k], rm.r_at(t));
            return out;
        case RiskKind::avar:
            for (std::size_t k = 0; k < level.size(); ++k)
                out[k] = avar_eval_at(x, level[k], rm.lambda_at(t));
            return out;
        case RiskKind::simplified_entropic:
            for (std::size_t k = 0; k < level.size(); ++k)
                out[k] = simplified_entropic_eval_at(x, level[k], rm.scenario_aversion(),
                                                     rm.clock_aversion());
            return out;
        case RiskKind::decoupled_avar:
            for (std::size_t k = 0; k < level.size(); ++k)
                out[k] = decoupled_avar_eval_at(x, level[k], rm.lambda_clock(),
                                                rm.lambda_scenario());
            return out;
        case RiskKind::fixed_gamma:
            for (std::size_t k = 0; k < level.size(); ++k)
                out[k] = fixed_gamma_eval_at(x, level[k], rm.allocation(), rm.inner());
            return out;
        case RiskKind::stopping_sup: {
            std::vector<double> v = stopping_values(x, rm.inner());
            for (std::size_t k = 0; k < level.size(); ++k) out[k] = v[level[k]];
            return out;
        }
        case RiskKind::penalty_table: {
            const PenaltyTable& tab = rm.table();
            for (std::size_t k = 0; k < level.size(); ++k) {
                NodeIndex n = level[k];
                std::vector<NodeIndex> sub = tree.subtree(n);
                double best = -std::numeric_limits<double>::infinity();
                for (std::size_t i = 0; i < tab.measures.size(); ++i) {
                    const ExtReal& a = tab.alpha[i].at(t)[k];
                    // a measure participates only where it charges the node:
                    // elsewhere its conditional tail expectation is undefined
                    if (a.is_inf() || tab.parts[i].m[n] <= 0.0 || tab.parts[i].d[n] <= 0.0)
                        continue;
                    std::vector<double> zeta = tail_density(tree, tab.parts[i], n, sub);
                    double e = 0.0;
                    for (std::size_t j = 0; j < sub.size(); ++j) e -= zeta[j] * x[sub[j]];
                    best = std::max(best, e - a.as_double());
                }
                out[k] = best;
            }
            return out;
        }
        case RiskKind::recursive_wrapper: {
            const RiskMeasure& base = rm.base();
            std::vector<double> rho = evaluate(base, x, tree.horizon());
            for (TimeIndex tau = tree.horizon() - 1; tau >= t; --tau) {
                AdaptedProcess y(tree, 0.0);
                for (NodeIndex m = 0; m < tree.node_count(); ++m) {
                    if (tree.time(m) == tau) y[m] = x[m];
                    if (tree.time(m) > tau) {
                        NodeIndex a = tree.ancestor_at(m, tau + 1);
                        y[m] = -rho[detail::rank_in_level(tree, a)];
                    }
                }
                rho = evaluate(base, y, tau);
            }
            return rho;
        }
    }
    throw UnsupportedKind("unknown risk kind");
}

/// Lift of rho_t to the optional field: -X_j on strict-past atoms, rho_t on
/// the tail atoms.
inline OptionalValue lift(const RiskMeasure& rm, const AdaptedProcess& x, TimeIndex t) {
    const EventTree& tree = rm.tree();
    OptionalValue out;
    out.t = t;
    out.early.assign(tree.node_count(), 0.0);
    for (NodeIndex m = 0; m < tree.node_count(); ++m)
        if (tree.time(m) < t) out.early[m] = -x[m];
    std::vector<double> rho = evaluate(rm, x, t);
    out.tail.reserve(rho.size());
    for (double v : rho) out.tail.push_back(v);
    return out;
}

/// Membership test for the acceptance set at time t; with `lifted` the
/// strict-past cash flows must be nonnegative as well.
struct AcceptanceReport {
    std::vector<char> tail_ok;   ///< per time-t node: rho_t(X) <= tol
    std::vector<char> early_ok;  ///< per node with time < t: X >= -tol
    bool accepted = true;
};

inline AcceptanceReport acceptance_test(const RiskMeasure& rm, const AdaptedProcess& x,
                                        TimeIndex t, bool lifted = false,
                                        double tol = kIdentityTol) {
    const EventTree& tree = rm.tree();
    AcceptanceReport rep;
    std::vector<double> rho = evaluate(rm, x, t);
    rep.tail_ok.resize(rho.size());
    for (std::size_t k = 0; k < rho.size(); ++k) {
        rep.tail_ok[k] = rho[k] <= tol;
        rep.accepted = rep.accepted && rep.tail_ok[k];
    }
    if (lifted) {
        for (NodeIndex m = 0; m < tree.node_count(); ++m) {
            if (tree.time(m) >= t) break;  // nodes are time-ordered
            bool ok = x[m] >= -tol;
            rep.early_ok.push_back(ok);
            rep.accepted = rep.accepted && ok;
        }
    }
    return rep;
}

/// Monotone approximation probe: evaluates rho_t along X + 2^-k on the tail
/// times; the bumped positions decrease to X, so the values must increase
/// toward rho_t(X) from below.
struct ContinuityReport {
    std::vector<std::vector<double>> values;  ///< per step, per time-t node
    std::vector<double> limit;                ///< rho_t(X)
    bool monotone = true;
    double max_gap = 0.0;  ///< |last step - limit|, worst node
};

inline ContinuityReport continuity_probe(const RiskMeasure& rm, const AdaptedProcess& x,
                                         TimeIndex t, int steps = 12) {
    const EventTree& tree = rm.tree();
    ContinuityReport rep;
    rep.limit = evaluate(rm, x, t);
    for (int k = 0; k < steps; ++k) {
        AdaptedProcess xs = x;
        double bump = std::ldexp(1.0, -k);
        for (NodeIndex m = 0; m < tree.node_count(); ++m)
            if (tree.time(m) >= t) xs[m] += bump;
        rep.values.push_back(evaluate(rm, xs, t));
    }
    for (std::size_t k = 0; k + 1 < rep.values.size(); ++k)
        for (std::size_t i = 0; i < rep.limit.size(); ++i)
            if (rep.values[k + 1][i] < rep.values[k][i] - 1e-12) rep.monotone = false;
    for (std::size_t i = 0; i < rep.limit.size(); ++i)
        rep.max_gap = std::max(rep.max_gap, std::abs(rep.values.back()[i] - rep.limit[i]));
    return rep;
}

// ---------------------------------------------------------------------------
// penalties
// ---------------------------------------------------------------------------

struct PenaltyReport {
    std::vector<ExtReal> value;  ///< per time-t node
    bool exact = true;           ///< false when only a probe lower bound
};

/// True when the minimal penalty has a closed form for this kind.
inline bool has_exact_penalty(const RiskMeasure& rm) {
    switch (rm.kind()) {
        case RiskKind::entropic:
        case RiskKind::avar:
        case RiskKind::simplified_entropic:
            return true;
        case RiskKind::recursive_wrapper: {
            const RiskMeasure* b = &rm.base();
            while (b->kind() == RiskKind::recursive_wrapper) b = &b->base();
            return b->kind() == RiskKind::entropic || b->kind() == RiskKind::avar;
        }
        default:
            return false;
    }
}

/// One-step minimal penalty at every time-t node (closed forms only).
inline PenaltyReport one_step_penalty(const RiskMeasure& rm, const ProductMeasure& q,
                                      TimeIndex t) {
    const EventTree& tree = rm.tree();
    if (&q.tree() != &tree) throw InconsistentInput("measure built on another tree");
    if (t >= tree.horizon()) throw TimeOrder("one-step penalty needs t < horizon");
    Disintegration dis = decompose(q);
    const auto& level = tree.nodes_at(t);
    PenaltyReport rep;
    rep.value.reserve(level.size());
    switch (rm.kind()) {
        case RiskKind::entropic:
            for (NodeIndex n : level)
                rep.value.push_back(entropic_one_step_at(tree, dis, n, rm.r_at(t)));
            return rep;
        case RiskKind::avar:
            for (NodeIndex n : level)
                rep.value.push_back(avar_one_step_at(tree, dis, n, rm.lambda_at(t)));
            return rep;
        case RiskKind::recursive_wrapper:
            // recursive pasting keeps the base's one-step slices
            return one_step_penalty(rm.base(), q, t);
        default:
            throw UnsupportedKind("no closed one-step penalty for kind " +
                                  std::string(to_string(rm.kind())));
    }
}

namespace detail {

/// Riesz sum of one-step penalties: alpha_t(n) = E_Q[ sum_{k=t}^{T-1} D_k
/// alpha_{k,k+1} | F_t ](n) / D_t(n), the exact penalty of the recursive
/// pasting of a measure with closed one-step penalties.
inline ExtReal riesz_penalty_at(const RiskMeasure& base, const Disintegration& dis,
                                NodeIndex n) {
    const EventTree& tree = base.tree();
    if (dis.d[n] <= 0.0) return ExtReal::infinity();
    if (dis.m[n] <= 0.0) return ExtReal(0.0);
    const RiskMeasure* b = &base;
    while (b->kind() == RiskKind::recursive_wrapper) b = &b->base();
    double acc = 0.0;
    for (NodeIndex m : tree.subtree(n)) {
        if (tree.is_leaf(m)) continue;
        double w = tree.cond_prob(n, m) * (dis.m[m] / dis.m[n]) * dis.d[m];
        if (w <= 0.0) continue;
        ExtReal step = b->kind() == RiskKind::entropic
                           ? entropic_one_step_at(tree, dis, m, b->r_at(tree.time(m)))
                           : avar_one_step_at(tree, dis, m, b->lambda_at(tree.time(m)));
        if (step.is_inf()) return ExtReal::infinity();
        acc += w * step.as_double();
    }
    return ExtReal(acc / dis.d[n]);
}

}  // namespace detail

/// Minimal penalty alpha_t(Qbar) at every time-t node.  Closed forms for the
/// entropic, AV@R and simplified entropic kinds and for recursive pastings of
/// entropic / AV@R; other kinds get a certified probe lower bound
/// (exact = false): the supremum of E_tail[-X] - rho_t(X) over a deterministic
/// battery of indicator and seeded random processes.
inline PenaltyReport penalty(const RiskMeasure& rm, const ProductMeasure& q, TimeIndex t,
                             int budget = 64, std::uint64_t seed = 42) {
    const EventTree& tree = rm.tree();
    if (&q.tree() != &tree) throw InconsistentInput("measure built on another tree");
    Disintegration dis = decompose(q);
    const auto& level = tree.nodes_at(t);
    PenaltyReport rep;
    rep.value.reserve(level.size());

    switch (rm.kind()) {
        case RiskKind::entropic:
            for (NodeIndex n : level)
                rep.value.push_back(entropic_penalty_at(tree, dis, n, rm.r_at(t)));
            return rep;
        case RiskKind::avar:
            for (NodeIndex n : level)
                rep.value.push_back(avar_penalty_at(tree, dis, n, rm.lambda_at(t)));
            return rep;
        case RiskKind::simplified_entropic:
            for (NodeIndex n : level)
                rep.value.push_back(simplified_entropic_penalty_at(
                    tree, dis, n, rm.scenario_aversion(), rm.clock_aversion()));
            return rep;
        case RiskKind::recursive_wrapper:
            if (has_exact_penalty(rm)) {
                for (NodeIndex n : level)
                    rep.value.push_back(detail::riesz_penalty_at(rm.base(), dis, n));
                return rep;
            }
            break;
        default:
            break;
    }

    rep.exact = false;
    rep.value.clear();
    std::vector<std::vector<NodeIndex>> subs;
    std::vector<std::vector<double>> zetas;
    for (NodeIndex n : level) {
        subs.push_back(tree.subtree(n));
        // X = 0 seeds the bound at 0; D = 0 nodes carry the infinite convention
        rep.value.push_back(dis.d[n] > 0.0 ? ExtReal(0.0) : ExtReal::infinity());
        zetas.push_back(dis.d[n] > 0.0 ? tail_density(tree, dis, n, subs.back())
                                       : std::vector<double>(subs.back().size(), 0.0));
    }
    auto probe = [&](const AdaptedProcess& x) {
        std::vector<double> rho = evaluate(rm, x, t);
        for (std::size_t k = 0; k < level.size(); ++k) {
            if (rep.value[k].is_inf()) continue;
            double e = 0.0;
            for (std::size_t j = 0; j < subs[k].size(); ++j)
                e -= zetas[k][j] * x[subs[k][j]];
            if (e - rho[k] > rep.value[k].as_double()) rep.value[k] = ExtReal(e - rho[k]);
        }
    };
    for (NodeIndex m = 0; m < tree.node_count(); ++m) {
        if (tree.time(m) < t) continue;
        for (double scale : {1.0, -1.0, 5.0, -5.0}) {
            AdaptedProcess x(tree, 0.0);
            x[m] = scale;
            probe(x);
        }
    }
    Rng rng = Rng::stream(seed, 0x9e7a11u);
    for (int i = 0; i < budget; ++i) {
        AdaptedProcess x(tree, 0.0);
        for (NodeIndex m = 0; m < tree.node_count(); ++m)
            if (tree.time(m) >= t) x[m] = rng.uniform(-3.0, 3.0);
        probe(x);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// robust evaluation from penalty data
// ---------------------------------------------------------------------------

/// sup over a finite family of measures of E_tail[-X] - alpha, where
/// `alphas[i]` lists the penalty of measures[i] per time-t node.
inline std::vector<double> robust_evaluate(const AdaptedProcess& x, TimeIndex t,
                                           const std::vector<ProductMeasure>& measures,
                                           const std::vector<std::vector<ExtReal>>& alphas) {
    const EventTree& tree = x.tree();
    if (measures.empty()) throw MalformedSpec("robust evaluation needs at least one measure");
    if (alphas.size() != measures.size())
        throw InconsistentInput("one penalty column per measure required");
    const auto& level = tree.nodes_at(t);
    std::vector<Disintegration> parts;
    parts.reserve(measures.size());
    for (const ProductMeasure& q : measures) {
        if (&q.tree() != &tree) throw InconsistentInput("measure built on another tree");
        parts.push_back(decompose(q));
    }
    std::vector<double> out(level.size());
    for (std::size_t k = 0; k < level.size(); ++k) {
        NodeIndex n = level[k];
        std::vector<NodeIndex> sub = tree.subtree(n);
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < measures.size(); ++i) {
            if (alphas[i].size() != level.size())
                throw InconsistentInput("penalty column has wrong length");
            // only measures that charge the node participate in the supremum
            if (alphas[i][k].is_inf()) continue;
            if (parts[i].d[n] <= 0.0 || parts[i].m[n] <= 0.0) continue;
            std::vector<double> zeta = tail_density(tree, parts[i], n, sub);
            double e = 0.0;
            for (std::size_t j = 0; j < sub.size(); ++j) e -= zeta[j] * x[sub[j]];
            best = std::max(best, e - alphas[i][k].as_double());
        }
        if (!std::isfinite(best))
            throw InfinitePenalty("no finite-penalty measure at a time-" + std::to_string(t) +
                                  " node");
        out[k] = best;
    }
    return out;
}

struct SmoothRobustOptions {
    int max_iters = 400;
    double fd_step = 1e-6;
    double tol = 1e-10;
};

/// sup over tail densities w of sum_a w_a (-X_a) - alpha(Qbar(w)) for a smooth
/// penalty callable, by gradient ascent in logit coordinates on the tail
/// simplex (finite-difference gradients, backtracking line search).  The
/// candidate w is embedded as a product measure that agrees with the
/// reference off the evaluated subtree, so `alpha_at_t` always receives a
/// valid measure.  Meaningful on P-charged nodes.
inline std::vector<double> robust_evaluate(
    const AdaptedProcess& x, TimeIndex t,
    const std::function<std::vector<ExtReal>(const ProductMeasure&)>& alpha_at_t,
    SmoothRobustOptions opts = {}) {
    const EventTree& tree = x.tree();
    const auto& level = tree.nodes_at(t);
    std::vector<double> out(level.size(), 0.0);

    for (std::size_t k = 0; k < level.size(); ++k) {
        NodeIndex n = level[k];
        TailAtoms atoms = tail_atoms(tree, n);
        std::vector<std::size_t> act;  // atoms with positive reference weight
        for (std::size_t a = 0; a < atoms.nodes.size(); ++a)
            if (atoms.pbar[a] > 0.0 && tree.path_prob(atoms.nodes[a]) > 0.0) act.push_back(a);

        auto embed = [&](const std::vector<double>& w) {
            AdaptedProcess z(tree, 1.0);
            for (std::size_t j = 0; j < act.size(); ++j)
                z[atoms.nodes[act[j]]] = w[j] / atoms.pbar[act[j]];
            return ProductMeasure::from_density(z);
        };
        auto objective = [&](const std::vector<double>& theta) {
            std::vector<double> logw(act.size());
            for (std::size_t j = 0; j < act.size(); ++j)
                logw[j] = std::log(atoms.pbar[act[j]]) + theta[j];
            double lse = detail::log_sum_exp(logw);
            std::vector<double> w(act.size());
            for (std::size_t j = 0; j < act.size(); ++j) w[j] = std::exp(logw[j] - lse);
            std::vector<ExtReal> alpha = alpha_at_t(embed(w));
            if (alpha[k].is_inf()) return -std::numeric_limits<double>::infinity();
            double e = 0.0;
            for (std::size_t j = 0; j < act.size(); ++j)
                e -= w[j] * x[atoms.nodes[act[j]]];
            return e - alpha[k].as_double();
        };

        std::vector<double> theta(act.size(), 0.0);
        double f = objective(theta);
        for (int it = 0; it < opts.max_iters; ++it) {
            std::vector<double> g(theta.size());
            double gnorm2 = 0.0;
            for (std::size_t j = 0; j < theta.size(); ++j) {
                std::vector<double> tp = theta, tm = theta;
                tp[j] += opts.fd_step;
                tm[j] -= opts.fd_step;
                g[j] = (objective(tp) - objective(tm)) / (2.0 * opts.fd_step);
                gnorm2 += g[j] * g[j];
            }
            if (std::sqrt(gnorm2) < opts.tol) break;
            double step = 1.0;
            bool moved = false;
            while (step > 1e-14) {
                std::vector<double> cand = theta;
                for (std::size_t j = 0; j < cand.size(); ++j) cand[j] += step * g[j];
                double fc = objective(cand);
                if (fc > f + 1e-4 * step * gnorm2) {
                    theta = std::move(cand);
                    f = fc;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if (!moved) break;
        }
        out[k] = f;
    }
    return out;
}

/// sup over cap-constrained tail densities (coherent family with penalty 0 on
/// {w <= pbar / lambda} and infinity elsewhere).  Exact vertex enumeration for
/// small tail-atom counts, exact greedy cap filling beyond that.
inline std::vector<double> robust_evaluate(const AdaptedProcess& x, TimeIndex t,
                                           double lambda) {
    const EventTree& tree = x.tree();
    const auto& level = tree.nodes_at(t);
    std::vector<double> out(level.size());
    for (std::size_t k = 0; k < level.size(); ++k) {
        NodeIndex n = level[k];
        TailAtoms atoms = tail_atoms(tree, n);
        if (atoms.nodes.size() <= 20) {
            std::vector<double> caps(atoms.pbar.size());
            for (std::size_t a = 0; a < caps.size(); ++a) caps[a] = atoms.pbar[a] / lambda;
            double best = -std::numeric_limits<double>::infinity();
            for (const auto& w : capped_simplex_vertices(caps)) {
                double e = 0.0;
                for (std::size_t a = 0; a < w.size(); ++a) e -= w[a] * x[atoms.nodes[a]];
                best = std::max(best, e);
            }
            out[k] = best;
        } else {
            out[k] = avar_eval_at(x, n, lambda);
        }
    }
    return out;
}

}  // namespace treerisk
