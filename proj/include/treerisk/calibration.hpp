#pragma once
// Cash subadditivity and cash additivity diagnostics, numeraire linearity
// probes, and calibration of a risk measure to a quoted term structure of
// zero-coupon bonds.
//
// The payment conventions follow the cumulated-cash-flow reading: "m paid at
// time s" is the process m 1_{[s, T]}.  Cash subadditivity
// rho_t(X + m 1_{[t+s, T]}) >= rho_t(X) - m holds for every measure in the
// library; cash additivity at a date s (equality for every F_t-measurable m)
// is equivalent to the absence of discounting between t and s in every model
// with finite penalty, which the discount certificate inspects directly.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "treerisk/errors.hpp"
#include "treerisk/ext_real.hpp"
#include "treerisk/optional_measure.hpp"
#include "treerisk/risk.hpp"
#include "treerisk/rng.hpp"
#include "treerisk/tree.hpp"

namespace treerisk {

// ---------------------------------------------------------------------------
// term structures
// ---------------------------------------------------------------------------

/// A money market account B_t = prod_{s=1}^{t} (1 + r_s) driven by adapted
/// nonnegative short rates, together with zero-coupon bond quotes B_{t,k}
/// (the price at a time-t node of the bond paying 1 at maturity k).
///
/// The rate stored at a node is the rate paid over the step ending at that
/// node's time; the root carries no accrual step and its rate must be 0.
/// Quotes are per node: `quotes(n)` maps maturities to prices.  Every date-t
/// node must quote the same maturity set so that calibration verdicts can be
/// reported per maturity.
class TermStructure {
  public:
    TermStructure(AdaptedProcess rates, std::vector<std::map<TimeIndex, double>> zcb)
        : rates_(std::move(rates)), zcb_(std::move(zcb)) {
        const EventTree& tr = rates_.tree();
        if (zcb_.size() != static_cast<std::size_t>(tr.node_count()))
            throw BadTermStructure("zero-coupon table has " + std::to_string(zcb_.size()) +
                                   " rows for " + std::to_string(tr.node_count()) + " nodes");
        for (NodeIndex n = 0; n < tr.node_count(); ++n) {
            if (!std::isfinite(rates_[n]) || rates_[n] < 0.0)
                throw BadTermStructure("short rate must be finite and nonnegative at node id " +
                                       std::to_string(tr.id(n)));
            if (tr.is_root(n) && rates_[n] != 0.0)
                throw BadTermStructure("the root carries no accrual step; its rate must be 0");
        }
        bank_.assign(tr.node_count(), 1.0);
        for (NodeIndex n = 0; n < tr.node_count(); ++n)
            if (!tr.is_root(n)) bank_[n] = bank_[tr.parent(n)] * (1.0 + rates_[n]);
        for (NodeIndex n = 0; n < tr.node_count(); ++n) {
            for (const auto& [k, p] : zcb_[n]) {
                if (k < tr.time(n) || k > tr.horizon())
                    throw BadTermStructure("maturity " + std::to_string(k) +
                                           " out of range at node id " + std::to_string(tr.id(n)));
                if (!std::isfinite(p) || p <= 0.0 || p > 1.0 + kValidationTol)
                    throw BadTermStructure("zero-coupon price at node id " +
                                           std::to_string(tr.id(n)) + ", maturity " +
                                           std::to_string(k) + " must lie in (0, 1]");
                if (k == tr.time(n) && std::abs(p - 1.0) > kValidationTol)
                    throw BadTermStructure("a bond at its own maturity must be quoted at 1");
            }
        }
        for (TimeIndex t = 0; t <= tr.horizon(); ++t) {
            const auto& level = tr.nodes_at(t);
            for (std::size_t i = 1; i < level.size(); ++i) {
                const auto& a = zcb_[level[0]];
                const auto& b = zcb_[level[i]];
                bool same = a.size() == b.size() &&
                            std::equal(a.begin(), a.end(), b.begin(),
                                       [](const auto& x, const auto& y) {
                                           return x.first == y.first;
                                       });
                if (!same)
                    throw BadTermStructure("date-" + std::to_string(t) +
                                           " nodes quote different maturity sets");
            }
        }
    }

    const EventTree& tree() const { return rates_.tree(); }
    /// Short rate paid over the step ending at this node's time.
    double rate(NodeIndex n) const { return rates_[n]; }
    /// Money market account value B_t at the node.
    double money_market(NodeIndex n) const { return bank_[n]; }
    const std::map<TimeIndex, double>& quotes(NodeIndex n) const { return zcb_[n]; }

    /// True when every step's rate is known one period ahead, i.e. the rate is
    /// constant across each sibling set.
    bool predictable() const {
        const EventTree& tr = tree();
        for (NodeIndex n = 0; n < tr.node_count(); ++n) {
            if (tr.is_leaf(n)) continue;
            const auto& ch = tr.children(n);
            for (std::size_t i = 1; i < ch.size(); ++i)
                if (std::abs(rates_[ch[i]] - rates_[ch[0]]) > kValidationTol) return false;
        }
        return true;
    }

    /// Quoted price B_{t,k}; a bond at its own maturity is worth 1 even when
    /// not quoted explicitly.
    double price(NodeIndex n, TimeIndex k) const {
        if (k == tree().time(n)) return 1.0;
        auto it = zcb_[n].find(k);
        if (it == zcb_[n].end())
            throw BadTermStructure("no quote for maturity " + std::to_string(k) +
                                   " at node id " + std::to_string(tree().id(n)));
        return it->second;
    }

    /// Maturity set quoted at date t (identical across date-t nodes).
    std::vector<TimeIndex> maturities(TimeIndex t) const {
        const EventTree& tr = tree();
        if (t > tr.horizon()) throw TimeOrder("date beyond the tree horizon");
        std::vector<TimeIndex> out;
        for (const auto& [k, p] : zcb_[tr.nodes_at(t).front()]) out.push_back(k);
        return out;
    }

  private:
    AdaptedProcess rates_;
    std::vector<std::map<TimeIndex, double>> zcb_;
    std::vector<double> bank_;
};

// ---------------------------------------------------------------------------
// verdicts
// ---------------------------------------------------------------------------

/// Outcome of the pointwise comparison rho_t(X + m 1_{[t+s, T]}) vs
/// rho_t(X) - m at every time-t node.
struct CashSubadditivityReport {
    bool pass = true;
    std::vector<double> shifted;  ///< rho_t(X + m 1_{[t+s, T]}) per time-t node
    std::vector<double> floor;    ///< rho_t(X) - m per time-t node
    double worst_gap = 0.0;       ///< min over nodes of shifted - floor
    NodeIndex node = 0;           ///< node attaining the worst gap
    double tolerance = kIdentityTol;
};

/// A replayable probe that broke an equality: `m` is the F_t-measurable
/// amount (one value per time-t node) paid from the probed date on.
struct CashProbeCounterexample {
    AdaptedProcess x;
    std::vector<double> m;
    NodeIndex node = 0;
    double lhs = 0.0;
    double rhs = 0.0;
};

/// Structural evidence for or against cash additivity: every model with
/// finite penalty must keep its discount factor D constant on [t, s].  The
/// certificate is only `applicable` for kinds whose relevant models the
/// library can enumerate (fixed allocations, penalty tables) or probe through
/// exact penalties.
struct DiscountCertificate {
    bool applicable = false;
    bool constant = true;         ///< D_t = ... = D_s wherever the penalty is finite
    int models = 0;               ///< models inspected
    int finite = 0;               ///< (model, time-t node) pairs with finite penalty
    double max_deviation = 0.0;   ///< worst |D_k - D_t| over those pairs, k in (t, s]
    double tolerance = kIdentityTol;
};

struct CashAdditivityReport {
    bool additive = true;
    std::optional<CashProbeCounterexample> counterexample;
    DiscountCertificate certificate;
    double tolerance = kIdentityTol;
};

/// Numeraire linearity at one date: positive homogeneity (i) over
/// F_t-measurable scalings, and — once (i) holds — full additivity (iii)
/// against probe positions.  `price` is the implied numeraire price
/// -rho_t(N_s 1_{[s, T]}) per time-t node.
struct NumeraireReport {
    bool homogeneous = true;
    bool additive = true;
    std::vector<double> price;
    std::optional<CashProbeCounterexample> counterexample;
    double tolerance = kIdentityTol;
};

struct MaturityVerdict {
    TimeIndex maturity = 0;
    bool calibrated = true;
    double worst_residual = 0.0;  ///< max |rho_t + lambda B_{t,k}| over probes
    NodeIndex node = 0;
};

struct CalibrationReport {
    bool pass = true;
    bool rates_predictable = false;
    std::vector<MaturityVerdict> maturities;
    /// Filled when the rates are predictable and every maturity is
    /// calibrated: calibration then forces the absence of discounting over
    /// the next step, so cash additivity at t+1 is asserted as well.
    std::optional<CashAdditivityReport> additivity;
    double tolerance = kIdentityTol;
};

// ---------------------------------------------------------------------------
// cash subadditivity
// ---------------------------------------------------------------------------

/// Checks rho_t(X + m 1_{[t+s, T]}) >= rho_t(X) - m at every time-t node for
/// an F_t-measurable amount m >= 0 (one value per time-t node) and an offset
/// s >= 0.  With s = 0 the shift lands at time t itself, the inequality
/// collapses to cash invariance, and equality is required instead.
inline CashSubadditivityReport check_cash_subadditive(const RiskMeasure& rm,
                                                      const AdaptedProcess& x, TimeIndex t,
                                                      const std::vector<double>& m, TimeIndex s,
                                                      double tolerance = kIdentityTol) {
    const EventTree& tree = rm.tree();
    if (&x.tree() != &tree) throw InconsistentInput("process built on another tree");
    if (t + s > tree.horizon())
        throw TimeOrder("payment date " + std::to_string(t + s) + " beyond the horizon");
    for (double v : m)
        if (!(v >= 0.0)) throw InconsistentInput("cash subadditivity probes need m >= 0");

    CashSubadditivityReport rep;
    rep.tolerance = tolerance;
    rep.shifted = evaluate(rm, shift_cash(x, m, t, t + s), t);
    rep.floor = evaluate(rm, x, t);
    for (std::size_t k = 0; k < rep.floor.size(); ++k) rep.floor[k] -= m[k];
    rep.worst_gap = std::numeric_limits<double>::infinity();
    const auto& level = tree.nodes_at(t);
    for (std::size_t k = 0; k < level.size(); ++k) {
        double gap = rep.shifted[k] - rep.floor[k];
        if (gap < rep.worst_gap) {
            rep.worst_gap = gap;
            rep.node = level[k];
        }
        if (gap < -tolerance) rep.pass = false;
        if (s == 0 && gap > tolerance) rep.pass = false;  // cash invariance is an equality
    }
    return rep;
}

/// Convenience overload for a constant amount m.
inline CashSubadditivityReport check_cash_subadditive(const RiskMeasure& rm,
                                                      const AdaptedProcess& x, TimeIndex t,
                                                      double m, TimeIndex s,
                                                      double tolerance = kIdentityTol) {
    std::vector<double> mv(rm.tree().nodes_at(t).size(), m);
    return check_cash_subadditive(rm, x, t, mv, s, tolerance);
}

// ---------------------------------------------------------------------------
// cash additivity
// ---------------------------------------------------------------------------

namespace detail {

/// Strictly positive probe model with atom densities in [lo, hi], normalized
/// to unit mass.
inline ProductMeasure random_model(Rng& rng, const EventTree& tree, double lo, double hi) {
    AdaptedProcess z(tree);
    double mass = 0.0;
    for (NodeIndex n = 0; n < tree.node_count(); ++n) {
        z[n] = rng.uniform(lo, hi);
        mass += tree.path_prob(n) * tree.mu(n) * z[n];
    }
    for (NodeIndex n = 0; n < tree.node_count(); ++n) z[n] /= mass;
    return ProductMeasure::from_density(z);
}

/// Max |D_k - D_t| over nodes m below `n` with t < time(m) <= s.
inline double discount_deviation(const EventTree& tree, const AdaptedProcess& d, NodeIndex n,
                                 TimeIndex s) {
    double dev = 0.0;
    for (NodeIndex m : tree.subtree(n))
        if (tree.time(m) > tree.time(n) && tree.time(m) <= s)
            dev = std::max(dev, std::abs(d[m] - d[n]));
    return dev;
}

/// Discount factors implied by a fixed allocation: D at a node is one minus
/// the allocation mass spent strictly before it.
inline AdaptedProcess allocation_discounts(const EventTree& tree, const AdaptedProcess& gamma) {
    AdaptedProcess d(tree, 1.0);
    for (NodeIndex n = 0; n < tree.node_count(); ++n)
        if (!tree.is_root(n)) d[n] = d[tree.parent(n)] - gamma[tree.parent(n)];
    return d;
}

inline void certify_discounts(const RiskMeasure& rm, TimeIndex t, TimeIndex s, int budget,
                              std::uint64_t seed, DiscountCertificate& cert) {
    const EventTree& tree = rm.tree();
    const auto& level = tree.nodes_at(t);
    auto inspect = [&](const AdaptedProcess& d, const std::vector<ExtReal>& alpha) {
        ++cert.models;
        for (std::size_t k = 0; k < level.size(); ++k) {
            if (alpha[k].is_inf()) continue;
            ++cert.finite;
            cert.max_deviation =
                std::max(cert.max_deviation, discount_deviation(tree, d, level[k], s));
        }
    };

    switch (rm.kind()) {
        case RiskKind::fixed_gamma: {
            // every relevant model shares the fixed allocation's clock
            cert.applicable = true;
            std::vector<ExtReal> finite(level.size(), ExtReal(0.0));
            inspect(allocation_discounts(tree, rm.allocation()), finite);
            break;
        }
        case RiskKind::penalty_table: {
            cert.applicable = true;
            const PenaltyTable& table = rm.table();
            for (std::size_t i = 0; i < table.ids.size(); ++i)
                inspect(table.parts[i].d, table.alpha[i].at(t));
            break;
        }
        default: {
            if (!has_exact_penalty(rm)) return;  // nothing the library can certify
            cert.applicable = true;
            // the reference model always has zero penalty and a live clock;
            // random tilts around it widen the net
            std::vector<ProductMeasure> probes{ProductMeasure::reference(tree)};
            Rng rng = Rng::stream(seed, 0xca5d0ull + t);
            int extra = std::max(8, std::min(budget, 64));
            for (int i = 0; i < extra; ++i)
                probes.push_back(random_model(rng, tree, 0.9, 1.6));
            for (const ProductMeasure& q : probes)
                inspect(decompose(q).d, penalty(rm, q, t).value);
        }
    }
    cert.constant = cert.max_deviation <= cert.tolerance;
}

}  // namespace detail

/// Definitional test of cash additivity at the date s > t: for probe amounts
/// m (the deterministic ladder 0, 0.5, 1, 2 and seeded F_t-measurable draws)
/// and probe positions X, rho_t(X + m 1_{[s, T]}) must equal rho_t(X) - m at
/// every time-t node.  The report carries the structural discount
/// certificate alongside the probe verdict; a definitional pass implies a
/// certificate pass for every kind the certificate applies to.
inline CashAdditivityReport check_cash_additive_at(const RiskMeasure& rm, TimeIndex t,
                                                   TimeIndex s, int budget = 200,
                                                   double tolerance = kIdentityTol,
                                                   std::uint64_t seed = 2026) {
    const EventTree& tree = rm.tree();
    if (t >= s || s > tree.horizon())
        throw TimeOrder("cash additivity needs t < s <= horizon (got t=" + std::to_string(t) +
                        ", s=" + std::to_string(s) + ")");
    if (budget < 1) throw MalformedSpec("probe budget must be positive");

    CashAdditivityReport rep;
    rep.tolerance = tolerance;
    rep.certificate.tolerance = tolerance;
    const auto& level = tree.nodes_at(t);

    auto probe = [&](const AdaptedProcess& x, const std::vector<double>& m) {
        if (rep.counterexample) return;
        std::vector<double> lhs = evaluate(rm, shift_cash(x, m, t, s), t);
        std::vector<double> rhs = evaluate(rm, x, t);
        for (std::size_t k = 0; k < level.size(); ++k) {
            if (std::abs(lhs[k] - (rhs[k] - m[k])) <= tolerance) continue;
            rep.additive = false;
            rep.counterexample =
                CashProbeCounterexample{x, m, level[k], lhs[k], rhs[k] - m[k]};
            return;
        }
    };

    AdaptedProcess zero(tree);
    AdaptedProcess ramp(tree);
    for (NodeIndex n = 0; n < tree.node_count(); ++n)
        ramp[n] = static_cast<double>(tree.time(n)) - 0.5 * (n % 3);
    for (double m : {0.0, 0.5, 1.0, 2.0}) {
        std::vector<double> mv(level.size(), m);
        probe(zero, mv);
        probe(ramp, mv);
    }
    Rng rng = Rng::stream(seed, 0xadd17ull + t);
    for (int rep_i = 0; rep_i < budget && !rep.counterexample; ++rep_i) {
        AdaptedProcess x(tree);
        for (NodeIndex n = 0; n < tree.node_count(); ++n) x[n] = rng.uniform(-5.0, 5.0);
        std::vector<double> mv(level.size());
        for (double& v : mv) v = rng.uniform(-2.0, 2.0);
        probe(x, mv);
    }

    detail::certify_discounts(rm, t, s, budget, seed, rep.certificate);
    return rep;
}

// ---------------------------------------------------------------------------
// numeraire linearity
// ---------------------------------------------------------------------------

namespace detail {

/// The cumulated process lambda_t N_s 1_{[s, T]} for F_t-measurable lambda
/// and an F_s-measurable payoff (one value per time-s node).
inline AdaptedProcess scaled_claim(const EventTree& tree, const std::vector<double>& lambda,
                                   TimeIndex t, const std::vector<double>& numeraire,
                                   TimeIndex s) {
    AdaptedProcess x(tree);
    for (NodeIndex n = 0; n < tree.node_count(); ++n) {
        if (tree.time(n) < s) continue;
        std::size_t kt = rank_in_level(tree, tree.ancestor_at(n, t));
        std::size_t ks = rank_in_level(tree, tree.ancestor_at(n, s));
        x[n] = lambda[kt] * numeraire[ks];
    }
    return x;
}

}  // namespace detail

/// Probes Lemma-style numeraire linearity for the claim N_s paid at date s:
/// (i) rho_t(lambda N_s 1_{[s,T]}) = lambda rho_t(N_s 1_{[s,T]}) over
/// F_t-measurable scalings lambda, and, when (i) holds, the additivity
/// (iii) rho_t(X + lambda N_s 1_{[s,T]}) = rho_t(X) + lambda rho_t(N_s 1_{[s,T]}).
inline NumeraireReport numeraire_linearity(const RiskMeasure& rm,
                                           const std::vector<double>& numeraire, TimeIndex s,
                                           TimeIndex t, int budget = 50,
                                           double tolerance = kIdentityTol,
                                           std::uint64_t seed = 2026) {
    const EventTree& tree = rm.tree();
    if (t >= s || s > tree.horizon())
        throw TimeOrder("numeraire linearity needs t < s <= horizon");
    const auto& level = tree.nodes_at(t);
    if (numeraire.size() != tree.nodes_at(s).size())
        throw InconsistentInput("numeraire has " + std::to_string(numeraire.size()) +
                                " values for " + std::to_string(tree.nodes_at(s).size()) +
                                " time-s nodes");
    if (budget < 1) throw MalformedSpec("probe budget must be positive");

    NumeraireReport rep;
    rep.tolerance = tolerance;
    std::vector<double> ones(level.size(), 1.0);
    std::vector<double> base =
        evaluate(rm, detail::scaled_claim(tree, ones, t, numeraire, s), t);
    rep.price.resize(base.size());
    for (std::size_t k = 0; k < base.size(); ++k) rep.price[k] = -base[k];

    const double ladder[] = {-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0};
    std::vector<std::vector<double>> lambdas;
    for (double l : ladder) lambdas.emplace_back(level.size(), l);
    {
        std::vector<double> mixed(level.size());
        for (std::size_t k = 0; k < level.size(); ++k) mixed[k] = ladder[k % 7];
        lambdas.push_back(std::move(mixed));
    }
    Rng rng = Rng::stream(seed, 0x11e4ull + t);
    for (int i = 0; i < budget; ++i) {
        std::vector<double> l(level.size());
        for (double& v : l) v = rng.uniform(-3.0, 3.0);
        lambdas.push_back(std::move(l));
    }

    for (const auto& l : lambdas) {
        std::vector<double> lhs =
            evaluate(rm, detail::scaled_claim(tree, l, t, numeraire, s), t);
        for (std::size_t k = 0; k < level.size(); ++k) {
            double rhs = l[k] * base[k];
            if (std::abs(lhs[k] - rhs) <= tolerance) continue;
            rep.homogeneous = false;
            rep.additive = false;
            rep.counterexample =
                CashProbeCounterexample{AdaptedProcess(tree), l, level[k], lhs[k], rhs};
            return rep;
        }
    }

    for (int i = 0; i < budget; ++i) {
        AdaptedProcess x(tree);
        for (NodeIndex n = 0; n < tree.node_count(); ++n) x[n] = rng.uniform(-4.0, 4.0);
        const auto& l = lambdas[i % lambdas.size()];
        AdaptedProcess claim = detail::scaled_claim(tree, l, t, numeraire, s);
        for (NodeIndex n = 0; n < tree.node_count(); ++n) claim[n] += x[n];
        std::vector<double> lhs = evaluate(rm, claim, t);
        std::vector<double> rhs = evaluate(rm, x, t);
        for (std::size_t k = 0; k < level.size(); ++k) {
            double want = rhs[k] + l[k] * base[k];
            if (std::abs(lhs[k] - want) <= tolerance) continue;
            rep.additive = false;
            rep.counterexample = CashProbeCounterexample{x, l, level[k], lhs[k], want};
            return rep;
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// calibration to a term structure
// ---------------------------------------------------------------------------

/// Checks the calibration condition at date t: for every quoted maturity k,
/// rho_t(lambda (B_t / B_k) 1_{[k, T]}) = -lambda B_{t,k} over F_t-measurable
/// probe scalings lambda.  When the short rates are predictable, a quote at
/// maturity t+1 must equal 1 / (1 + r_{t+1}); if additionally every maturity
/// calibrates, the verdict asserts cash additivity at t+1 and folds that
/// result into `pass`.
inline CalibrationReport check_zcb_calibration(const RiskMeasure& rm, const TermStructure& term,
                                               TimeIndex t, int budget = 50,
                                               double tolerance = kIdentityTol,
                                               std::uint64_t seed = 2026) {
    const EventTree& tree = rm.tree();
    if (&term.tree() != &tree) throw InconsistentInput("term structure built on another tree");
    if (t > tree.horizon()) throw TimeOrder("date beyond the tree horizon");
    if (budget < 1) throw MalformedSpec("probe budget must be positive");

    CalibrationReport rep;
    rep.tolerance = tolerance;
    rep.rates_predictable = term.predictable();
    const auto& level = tree.nodes_at(t);

    if (rep.rates_predictable && t < tree.horizon()) {
        for (NodeIndex n : level) {
            auto it = term.quotes(n).find(t + 1);
            if (it == term.quotes(n).end()) continue;
            double implied = 1.0 / (1.0 + term.rate(tree.children(n).front()));
            if (std::abs(it->second - implied) > 1e-9)
                throw BadTermStructure("predictable rates force B_{t,t+1} = 1/(1+r); quote " +
                                       std::to_string(it->second) + " at node id " +
                                       std::to_string(tree.id(n)) + " implies " +
                                       std::to_string(implied));
        }
    }

    const double ladder[] = {-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0};
    std::vector<std::vector<double>> lambdas;
    for (double l : ladder) lambdas.emplace_back(level.size(), l);
    {
        std::vector<double> mixed(level.size());
        for (std::size_t k = 0; k < level.size(); ++k) mixed[k] = ladder[k % 7];
        lambdas.push_back(std::move(mixed));
    }
    Rng rng = Rng::stream(seed, 0x2cbull + t);
    for (int i = 0; i < budget; ++i) {
        std::vector<double> l(level.size());
        for (double& v : l) v = rng.uniform(-3.0, 3.0);
        lambdas.push_back(std::move(l));
    }

    for (TimeIndex k : term.maturities(t)) {
        MaturityVerdict verdict;
        verdict.maturity = k;
        verdict.node = level.front();
        // discounted payoff B_t / B_k read off the time-k ancestor
        std::vector<double> payoff;
        payoff.reserve(tree.nodes_at(k).size());
        for (NodeIndex m : tree.nodes_at(k))
            payoff.push_back(term.money_market(tree.ancestor_at(m, t)) / term.money_market(m));
        for (const auto& l : lambdas) {
            std::vector<double> rho =
                evaluate(rm, detail::scaled_claim(tree, l, t, payoff, k), t);
            for (std::size_t i = 0; i < level.size(); ++i) {
                double residual = std::abs(rho[i] + l[i] * term.price(level[i], k));
                if (residual > verdict.worst_residual) {
                    verdict.worst_residual = residual;
                    verdict.node = level[i];
                }
            }
        }
        verdict.calibrated = verdict.worst_residual <= tolerance;
        rep.pass = rep.pass && verdict.calibrated;
        rep.maturities.push_back(std::move(verdict));
    }

    if (rep.rates_predictable && rep.pass && t < tree.horizon()) {
        rep.additivity = check_cash_additive_at(rm, t, t + 1, budget, tolerance, seed);
        rep.pass = rep.pass && rep.additivity->additive;
    }
    return rep;
}

}  // namespace treerisk
