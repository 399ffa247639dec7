#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "helpers.hpp"
#include "treerisk/consistency.hpp"

using namespace treerisk;
using trh::binomial;
using trh::proc;

namespace {

// Entropy of the conditional one-step law of Q against P at node n:
// sum_c P(c|n) (M_c/M_n) log(M_c/M_n).  Used as an independent value for the
// penalty-based cross-checks below.
double one_step_entropy(const EventTree& tree, const Disintegration& dis, NodeIndex n) {
    if (dis.m[n] <= 0.0) return 0.0;
    double h = 0.0;
    for (NodeIndex c : tree.children(n)) {
        if (dis.m[c] <= 0.0) continue;
        double ratio = dis.m[c] / dis.m[n];
        h += tree.branch_prob(c) * ratio * std::log(ratio);
    }
    return h;
}

// Measure with an independent per-branch martingale tilt and the clock mass
// concentrated at the horizon (D identically 1 along every path).
ProductMeasure tilted_horizon_measure(const EventTree& tree, double up_weight) {
    AdaptedProcess m(tree, 1.0);
    for (NodeIndex n = 0; n < tree.node_count(); ++n) {
        if (tree.is_root(n)) continue;
        const auto& sibs = tree.children(tree.parent(n));
        double w = n == sibs.front() ? up_weight : (1.0 - up_weight * tree.branch_prob(sibs.front())) /
                                                       (1.0 - tree.branch_prob(sibs.front()));
        m[n] = m[tree.parent(n)] * w;
    }
    AdaptedProcess z(tree);
    for (NodeIndex n = 0; n < tree.node_count(); ++n)
        if (tree.is_leaf(n)) z[n] = m[n] / tree.mu(n);
    return ProductMeasure::from_density(z);
}

// Worst-case process for the entropic penalty at a strictly positive model:
// X* = -(1/r) log z attains alpha_0 = E_zeta[-X*] - rho_0(X*) exactly.
AdaptedProcess entropic_attainer(const EventTree& tree, const ProductMeasure& q, double r) {
    AdaptedProcess x(tree);
    for (NodeIndex n = 0; n < tree.node_count(); ++n)
        x[n] = -std::log(std::max(q.z(n), 1e-12)) / r;
    return x;
}

}  // namespace

TEST_CASE("the recursion identity holds for constant-aversion entropic measures") {
    EventTree tree = binomial(3);
    RiskMeasure rm = RiskMeasure::entropic(tree, 1.0);
    Rng rng = Rng::stream(91, 1);
    for (int rep = 0; rep < 20; ++rep) {
        AdaptedProcess x = trh::random_process(rng, tree);
        for (TimeIndex t = 0; t < tree.horizon(); ++t) {
            RecursiveCheck check = check_recursive(rm, x, t);
            CHECK(check.verdict.pass);
            for (std::size_t k = 0; k < check.lhs.size(); ++k)
                CHECK(check.lhs[k] == Catch::Approx(check.rhs[k]).margin(1e-9));
        }
    }
}

TEST_CASE("one-step processes collapse the recursion for any measure") {
    // X paying only at t and t+1 satisfies rho_{t+1}(X) = -X_{t+1}, so the
    // substituted process equals X from time t on and the identity is cash
    // invariance, even for measures that are not time consistent.
    EventTree tree = binomial(2);
    RiskMeasure rm = RiskMeasure::avar(tree, 0.5);
    Rng rng = Rng::stream(91, 2);
    for (int rep = 0; rep < 20; ++rep) {
        TimeIndex t = 0;
        AdaptedProcess x(tree);
        for (NodeIndex n : tree.nodes_at(t)) x[n] = rng.uniform(-3.0, 3.0);
        std::vector<double> cert(tree.nodes_at(t + 1).size());
        for (double& v : cert) v = rng.uniform(-3.0, 3.0);
        x = shift_cash(x, cert, t + 1, t + 1);
        RecursiveCheck check = check_recursive(rm, x, t);
        CHECK(check.verdict.pass);
    }
}

TEST_CASE("probe search separates the consistency notions across aversion profiles") {
    EventTree tree = binomial(2);
    RiskMeasure flat = RiskMeasure::entropic(tree, 1.0);
    RiskMeasure falling = RiskMeasure::entropic(tree, std::vector<double>{2.0, 1.0, 0.5});
    RiskMeasure rising = RiskMeasure::entropic(tree, std::vector<double>{0.5, 1.0, 2.0});

    SECTION("constant aversion passes the strong certificate") {
        CHECK(check_time_consistent(flat, 200).pass);
    }
    SECTION("decreasing aversion fails strong but passes the rejection side") {
        ConsistencyVerdict strong = check_time_consistent(falling, 200);
        REQUIRE_FALSE(strong.pass);
        REQUIRE(strong.counterexample.has_value());
        const Counterexample& ce = *strong.counterexample;
        RecursiveCheck replay = check_recursive(falling, ce.x, ce.t);
        CHECK_FALSE(replay.verdict.pass);
        std::size_t rank = detail::rank_in_level(tree, ce.node);
        CHECK(replay.lhs[rank] == Catch::Approx(ce.lhs).margin(1e-12));
        CHECK(replay.rhs[rank] == Catch::Approx(ce.rhs).margin(1e-12));

        CHECK(check_time_consistent(falling, 200, ConsistencyProperty::rejection).pass);
        CHECK_FALSE(check_time_consistent(falling, 200, ConsistencyProperty::acceptance).pass);
    }
    SECTION("increasing aversion fails strong but passes the acceptance side") {
        CHECK_FALSE(check_time_consistent(rising, 200).pass);
        CHECK(check_time_consistent(rising, 200, ConsistencyProperty::acceptance).pass);
        CHECK_FALSE(check_time_consistent(rising, 200, ConsistencyProperty::rejection).pass);
    }
    SECTION("the recursive pasting of a static measure passes by construction") {
        RiskMeasure wrapped = RiskMeasure::make_time_consistent(RiskMeasure::avar(tree, 0.5));
        CHECK(check_time_consistent(wrapped, 200).pass);
    }
    SECTION("the raw average value at risk fails with a replayable counterexample") {
        RiskMeasure raw = RiskMeasure::avar(tree, 0.5);
        ConsistencyVerdict verdict = check_time_consistent(raw, 200);
        REQUIRE_FALSE(verdict.pass);
        REQUIRE(verdict.counterexample.has_value());
        const Counterexample& ce = *verdict.counterexample;
        CHECK(std::abs(ce.lhs - ce.rhs) > 1e-9);
        RecursiveCheck replay = check_recursive(raw, ce.x, ce.t);
        CHECK_FALSE(replay.verdict.pass);
    }
}

TEST_CASE("acceptance sets split across one step exactly for consistent measures") {
    EventTree tree = binomial(2);
    RiskMeasure flat = RiskMeasure::entropic(tree, 1.0);

    SECTION("both directions pass under constant aversion") {
        for (TimeIndex t = 0; t < tree.horizon(); ++t)
            CHECK(check_acceptance_split(flat, t, 100).pass);
    }
    SECTION("the zero process splits as zero plus zero") {
        AdaptedProcess zero(tree);
        AdaptedProcess y = detail::recursion_candidate(flat, zero, 0);
        for (double v : evaluate(flat, y, 0)) CHECK(v == Catch::Approx(0.0).margin(1e-12));
        AdaptedProcess rest(tree);
        for (NodeIndex n = 0; n < tree.node_count(); ++n) rest[n] = zero[n] - y[n];
        for (double v : evaluate(flat, rest, 1)) CHECK(v == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("a rejection-consistent-only measure fails on a composed pair") {
        RiskMeasure falling = RiskMeasure::entropic(tree, std::vector<double>{2.0, 1.0, 0.5});
        ConsistencyVerdict verdict = check_acceptance_split(falling, 0, 300);
        REQUIRE_FALSE(verdict.pass);
        REQUIRE(verdict.counterexample.has_value());
        // replay: the exhibited sum is accepted tomorrow-composed yet rejected at t
        std::vector<double> rho = evaluate(falling, verdict.counterexample->x, 0);
        CHECK(rho[detail::rank_in_level(tree, verdict.counterexample->node)] ==
              Catch::Approx(verdict.counterexample->lhs).margin(1e-12));
        CHECK(verdict.counterexample->lhs > 1e-9);
    }
    SECTION("an acceptance-consistent-only measure fails on the split direction") {
        RiskMeasure rising = RiskMeasure::entropic(tree, std::vector<double>{0.5, 1.0, 2.0});
        ConsistencyVerdict verdict = check_acceptance_split(rising, 0, 300);
        CHECK_FALSE(verdict.pass);
    }
}

TEST_CASE("weak acceptance consistency follows the aversion profile") {
    EventTree tree = binomial(2);
    SECTION("strong consistency implies weak acceptance") {
        CHECK(check_weak_acceptance(RiskMeasure::entropic(tree, 1.0), 100).pass);
    }
    SECTION("increasing aversion is acceptance consistent, hence weakly so") {
        RiskMeasure rising = RiskMeasure::entropic(tree, std::vector<double>{0.5, 1.0, 2.0});
        CHECK(check_weak_acceptance(rising, 100).pass);
    }
    SECTION("decreasing aversion violates the acceptance-set inclusion") {
        RiskMeasure falling = RiskMeasure::entropic(tree, std::vector<double>{2.0, 1.0, 0.25});
        ConsistencyVerdict verdict = check_weak_acceptance(falling, 300);
        REQUIRE_FALSE(verdict.pass);
        REQUIRE(verdict.counterexample.has_value());
        const Counterexample& ce = *verdict.counterexample;
        for (NodeIndex n : tree.nodes_at(ce.t)) CHECK(ce.x[n] == 0.0);
        for (double v : evaluate(falling, ce.x, ce.t + 1)) CHECK(v <= 1e-9);
        std::vector<double> rho = evaluate(falling, ce.x, ce.t);
        CHECK(*std::max_element(rho.begin(), rho.end()) > 1e-9);
    }
    SECTION("a penalty table with time-increasing entries fails with a witness") {
        // one scenario measure (clock at the horizon) whose penalty jumps from
        // 0 to 2 at time 1: tomorrow's assessment is lenient, today's strict.
        AdaptedProcess z(tree);
        for (NodeIndex leaf : tree.leaves()) z[leaf] = 1.0 / tree.mu(leaf);
        PenaltyTable table;
        table.ids = {"strict-today"};
        table.measures = {ProductMeasure::from_density(z)};
        table.alpha.push_back({{0, {ExtReal(0.0)}},
                               {1, {ExtReal(2.0), ExtReal(2.0)}},
                               {2, {ExtReal(0.0), ExtReal(0.0), ExtReal(0.0), ExtReal(0.0)}}});
        RiskMeasure rm = RiskMeasure::penalty_table(tree, std::move(table));
        ConsistencyVerdict verdict = check_weak_acceptance(rm, 300);
        REQUIRE_FALSE(verdict.pass);
        REQUIRE(verdict.counterexample.has_value());
        std::vector<double> rho = evaluate(rm, verdict.counterexample->x, verdict.counterexample->t);
        CHECK(*std::max_element(rho.begin(), rho.end()) > 1e-9);
    }
}

TEST_CASE("the penalty cocycle residual separates the consistency notions") {
    EventTree tree = binomial(2);
    RiskMeasure flat = RiskMeasure::entropic(tree, 1.0);
    RiskMeasure falling = RiskMeasure::entropic(tree, std::vector<double>{2.0, 1.0, 0.5});
    RiskMeasure rising = RiskMeasure::entropic(tree, std::vector<double>{0.5, 1.0, 2.0});
    Rng rng = Rng::stream(91, 3);

    SECTION("constant aversion has a vanishing residual on every probe") {
        for (int rep = 0; rep < 10; ++rep) {
            ProductMeasure q = trh::random_measure(rng, tree);
            for (TimeIndex t = 0; t < tree.horizon(); ++t)
                for (double r : one_step_cocycle_residual(flat, q, t))
                    CHECK(r == Catch::Approx(0.0).margin(1e-9));
        }
    }
    SECTION("decreasing aversion sits on the rejection side of the cocycle") {
        double most_negative = 0.0;
        for (int rep = 0; rep < 10; ++rep) {
            ProductMeasure q = trh::random_measure(rng, tree);
            for (TimeIndex t = 0; t < tree.horizon(); ++t)
                for (double r : one_step_cocycle_residual(falling, q, t)) {
                    CHECK(r <= 1e-9);
                    most_negative = std::min(most_negative, r);
                }
        }
        CHECK(most_negative < -1e-6);
    }
    SECTION("increasing aversion sits on the acceptance side of the cocycle") {
        double most_positive = 0.0;
        for (int rep = 0; rep < 10; ++rep) {
            ProductMeasure q = trh::random_measure(rng, tree);
            for (TimeIndex t = 0; t < tree.horizon(); ++t)
                for (double r : one_step_cocycle_residual(rising, q, t)) {
                    CHECK(r >= -1e-9);
                    most_positive = std::max(most_positive, r);
                }
        }
        CHECK(most_positive > 1e-6);
    }
    SECTION("the residual against the entropy chain rule on a crafted model") {
        // With the clock at the horizon, D is 1 everywhere and the cocycle for
        // aversion r reads H_t/r_t vs H_{t,t+1}/r_t + E[H_{t+1}/r_{t+1}]; the
        // chain rule H_t = H_{t,t+1} + E[H_{t+1}] leaves the residual equal to
        // E[H_{t+1}] (1/r_t - 1/r_{t+1}).  H counts both divergences: the
        // per-branch tilt below each child and the clock part, because this
        // model rings surely at the horizon while the reference clock spreads
        // its remaining mass over all later dates.
        ProductMeasure q = tilted_horizon_measure(tree, 1.4);
        Disintegration dis = decompose(q);
        double mu_horizon = tree.mu(tree.leaves().front());
        for (TimeIndex t = 0; t < tree.horizon(); ++t) {
            std::vector<double> residual = one_step_cocycle_residual(falling, q, t);
            const auto& level = tree.nodes_at(t);
            for (std::size_t k = 0; k < level.size(); ++k) {
                NodeIndex n = level[k];
                double tail = 0.0;
                for (NodeIndex c : tree.children(n)) {
                    double kl = std::log(tree.mu_tail(c) / mu_horizon);
                    for (NodeIndex m : tree.subtree(c)) {
                        if (tree.is_leaf(m)) continue;
                        kl += tree.cond_prob(c, m) * (dis.m[m] / dis.m[c]) *
                              one_step_entropy(tree, dis, m);
                    }
                    tail += tree.branch_prob(c) * (dis.m[c] / dis.m[n]) * kl;
                }
                double want = tail * (1.0 / falling.r_at(t) - 1.0 / falling.r_at(t + 1));
                CHECK(residual[k] == Catch::Approx(want).margin(1e-9));
            }
        }
    }
    SECTION("recursive pastings satisfy the cocycle exactly") {
        RiskMeasure wrapped = RiskMeasure::make_time_consistent(RiskMeasure::avar(tree, 0.5));
        for (int rep = 0; rep < 10; ++rep) {
            ProductMeasure q = trh::random_measure(rng, tree);
            for (TimeIndex t = 0; t < tree.horizon(); ++t)
                for (double r : one_step_cocycle_residual(wrapped, q, t))
                    CHECK(r == Catch::Approx(0.0).margin(1e-9));
        }
    }
    SECTION("probe-only kinds are rejected") {
        RiskMeasure dirac = RiskMeasure::dirac(tree, tree.horizon(), InnerPsi{});
        CHECK_THROWS_AS(one_step_cocycle_residual(dirac, ProductMeasure::reference(tree), 0),
                        UnsupportedKind);
    }
    SECTION("the horizon is out of range") {
        CHECK_THROWS_AS(one_step_cocycle_residual(flat, ProductMeasure::reference(tree),
                                                  tree.horizon()),
                        TimeOrder);
    }
}

TEST_CASE("supermartingale tests flag one-step violations under the chosen model") {
    EventTree tree = binomial(2);
    ProductMeasure pbar = ProductMeasure::reference(tree);

    SECTION("a constant process is a martingale") {
        AdaptedProcess w(tree, 3.25);
        CHECK(supermartingale_check(w, pbar, MartingaleSign::martingale).pass);
        CHECK(supermartingale_check(w, pbar, MartingaleSign::supermartingale).pass);
        CHECK(supermartingale_check(w, pbar, MartingaleSign::submartingale).pass);
    }
    SECTION("a process increasing by one per period violates by exactly one") {
        AdaptedProcess w(tree);
        for (NodeIndex n = 0; n < tree.node_count(); ++n) w[n] = tree.time(n);
        SupermartingaleReport rep = supermartingale_check(w, pbar);
        CHECK_FALSE(rep.pass);
        CHECK(rep.max_violation == Catch::Approx(1.0).margin(1e-12));
        CHECK(supermartingale_check(w, pbar, MartingaleSign::submartingale).pass);
        CHECK_FALSE(supermartingale_check(w, pbar, MartingaleSign::martingale).pass);
    }
    SECTION("the discounted penalty of a consistent measure is a supermartingale") {
        RiskMeasure flat = RiskMeasure::entropic(tree, 1.0);
        Rng rng = Rng::stream(91, 4);
        for (int rep = 0; rep < 10; ++rep) {
            ProductMeasure q = trh::random_measure(rng, tree);
            PenaltyDecomposition dec = doob_riesz(flat, q);
            CHECK(supermartingale_check(dec.discounted, q).pass);
        }
    }
    SECTION("the consistency witness is a supermartingale for consistent kinds") {
        RiskMeasure flat = RiskMeasure::entropic(tree, 1.0);
        RiskMeasure wrapped = RiskMeasure::make_time_consistent(RiskMeasure::avar(tree, 0.5));
        Rng rng = Rng::stream(91, 5);
        for (int rep = 0; rep < 10; ++rep) {
            AdaptedProcess x = trh::random_process(rng, tree);
            ProductMeasure q = trh::random_measure(rng, tree);
            CHECK(supermartingale_check(supermartingale_witness(flat, x, q), q).pass);
            CHECK(supermartingale_check(supermartingale_witness(wrapped, x, q), q).pass);
        }
    }
}

TEST_CASE("the Doob and Riesz decompositions close at a finite horizon") {
    EventTree tree = binomial(3);
    RiskMeasure flat = RiskMeasure::entropic(tree, 1.0);
    Rng rng = Rng::stream(91, 6);

    SECTION("the reference model has zero penalty throughout") {
        PenaltyDecomposition dec = doob_riesz(flat, ProductMeasure::reference(tree));
        for (NodeIndex n = 0; n < tree.node_count(); ++n) {
            CHECK(dec.discounted[n] == Catch::Approx(0.0).margin(1e-12));
            CHECK(dec.predictable[n] == Catch::Approx(0.0).margin(1e-12));
            CHECK(dec.martingale[n] == Catch::Approx(0.0).margin(1e-12));
            CHECK(dec.potential[n] == Catch::Approx(0.0).margin(1e-12));
            CHECK(dec.bubble[n] == Catch::Approx(0.0).margin(1e-12));
        }
    }
    SECTION("structure holds on twenty probe models") {
        for (int rep = 0; rep < 20; ++rep) {
            ProductMeasure q = trh::random_measure(rng, tree);
            PenaltyDecomposition dec = doob_riesz(flat, q);
            CHECK(dec.predictable[0] == 0.0);
            for (NodeIndex n = 0; n < tree.node_count(); ++n) {
                if (!tree.is_root(n)) {
                    // predictable: known one step ahead and nondecreasing
                    CHECK(dec.predictable[n] >= dec.predictable[tree.parent(n)] - 1e-12);
                    for (NodeIndex sib : tree.children(tree.parent(n)))
                        CHECK(dec.predictable[sib] ==
                              Catch::Approx(dec.predictable[n]).margin(1e-12));
                }
                CHECK(dec.martingale[n] ==
                      Catch::Approx(dec.discounted[n] + dec.predictable[n]).margin(1e-12));
                CHECK(dec.potential[n] + dec.bubble[n] ==
                      Catch::Approx(dec.discounted[n]).margin(1e-9));
                CHECK(dec.bubble[n] == Catch::Approx(0.0).margin(1e-9));
            }
            CHECK(supermartingale_check(dec.martingale, q, MartingaleSign::martingale).pass);
        }
    }
    SECTION("an inconsistent aversion profile is refused") {
        RiskMeasure falling = RiskMeasure::entropic(tree, std::vector<double>{2, 1.5, 1, 0.5});
        ProductMeasure q = tilted_horizon_measure(tree, 1.4);
        CHECK_THROWS_AS(doob_riesz(falling, q), InconsistentInput);
    }
    SECTION("models with infinite discounted penalty are refused") {
        EventTree small = binomial(2);
        RiskMeasure coherent = RiskMeasure::avar(small, 0.5);
        // spatial density doubling along one path under the reference clock:
        // every one-step density sits exactly at the conditional cap 2, so the
        // one-step penalties all vanish, yet the two-step product density 4
        // breaches the cap and the date-0 penalty is infinite
        AdaptedProcess z(small);
        NodeIndex u = small.children(0).front();
        NodeIndex uu = small.children(u).front();
        z[0] = 1.0;
        z[u] = 2.0;
        z[uu] = 4.0;
        ProductMeasure q = ProductMeasure::from_density(z);
        CHECK(one_step_penalty(coherent, q, 0).value[0].finite() == 0.0);
        CHECK_THROWS_AS(doob_riesz(coherent, q), InfinitePenalty);
    }
    SECTION("coherent measures with zero penalty decompose to zero") {
        RiskMeasure wrapped = RiskMeasure::make_time_consistent(RiskMeasure::avar(tree, 0.5));
        PenaltyDecomposition dec = doob_riesz(wrapped, ProductMeasure::reference(tree));
        for (NodeIndex n = 0; n < tree.node_count(); ++n) {
            CHECK(dec.discounted[n] == 0.0);
            CHECK(dec.potential[n] == 0.0);
        }
    }
}

TEST_CASE("truncated-horizon profiles classify the expected discounted penalty") {
    std::map<TimeIndex, EventTree> trees;
    for (TimeIndex s = 0; s <= 4; ++s) trees.emplace(s, binomial(s + 1));
    std::vector<TimeIndex> dates{0, 1, 2, 3, 4};
    auto rm_family = [&](TimeIndex s) { return RiskMeasure::entropic(trees.at(s), 1.0); };

    SECTION("the reference family carries no penalty at all") {
        auto q_family = [&](TimeIndex s) { return ProductMeasure::reference(trees.at(s)); };
        BubbleProfile profile = bubble_profile(rm_family, q_family, dates);
        for (double v : profile.values) CHECK(v == Catch::Approx(0.0).margin(1e-12));
        for (double v : profile.tail_sums) CHECK(v == Catch::Approx(0.0).margin(1e-9));
        CHECK(profile.trend == "decreasing-to-zero");
    }
    SECTION("a fixed per-step tilt keeps the profile bounded away from zero") {
        auto q_family = [&](TimeIndex s) { return tilted_horizon_measure(trees.at(s), 1.4); };
        BubbleProfile profile = bubble_profile(rm_family, q_family, dates);
        // every member has one tilted step left after the diagnostic date and
        // rings surely at the horizon where the reference clock would ring at
        // the diagnostic date with conditional probability 1/2, so the
        // expected discounted penalty is the one-step entropy plus log 2
        ProductMeasure q0 = q_family(0);
        double step = one_step_entropy(trees.at(0), decompose(q0), 0);
        REQUIRE(step > 1e-3);
        for (std::size_t i = 0; i < dates.size(); ++i) {
            CHECK(profile.values[i] == Catch::Approx(step + std::log(2.0)).margin(1e-9));
            CHECK(profile.tail_sums[i] == Catch::Approx(profile.values[i]).margin(1e-9));
        }
        CHECK(profile.trend == "bounded-away");
    }
    SECTION("a tilt on the first step only decays to zero") {
        // the clock stays at the reference here, so after the first step the
        // conditional model agrees with the reference entirely and the
        // discounted penalty at later diagnostic dates is exactly zero
        std::map<TimeIndex, ProductMeasure> tilted_first;
        for (TimeIndex s = 0; s <= 4; ++s) {
            const EventTree& tree = trees.at(s);
            AdaptedProcess m(tree, 1.0);
            for (NodeIndex n = 0; n < tree.node_count(); ++n) {
                if (tree.is_root(n)) continue;
                double w = 1.0;
                if (tree.time(n) == 1)
                    w = n == tree.children(0).front() ? 1.4
                                                      : (1.0 - 1.4 * tree.branch_prob(
                                                                         tree.children(0).front())) /
                                                            (1.0 -
                                                             tree.branch_prob(
                                                                 tree.children(0).front()));
                m[n] = m[tree.parent(n)] * w;
            }
            tilted_first.emplace(s, ProductMeasure::from_density(m));
        }
        auto q_family = [&](TimeIndex s) { return tilted_first.at(s); };
        BubbleProfile profile = bubble_profile(rm_family, q_family, dates);
        CHECK(profile.values[0] > 1e-3);
        for (std::size_t i = 1; i < dates.size(); ++i)
            CHECK(profile.values[i] == Catch::Approx(0.0).margin(1e-9));
        for (std::size_t i = 0; i < dates.size(); ++i)
            CHECK(profile.tail_sums[i] == Catch::Approx(profile.values[i]).margin(1e-9));
        CHECK(profile.trend == "decreasing-to-zero");
    }
    SECTION("an alternating family is inconclusive") {
        auto q_family = [&](TimeIndex s) {
            return s % 2 == 0 ? ProductMeasure::reference(trees.at(s))
                              : tilted_horizon_measure(trees.at(s), 1.4);
        };
        BubbleProfile profile = bubble_profile(rm_family, q_family, dates);
        CHECK(profile.trend == "inconclusive");
    }
}

TEST_CASE("the maximal inequality for the excess capital requirement holds exactly") {
    EventTree tree = binomial(3);
    RiskMeasure flat = RiskMeasure::entropic(tree, 1.0);
    Rng rng = Rng::stream(91, 7);

    SECTION("exact enumeration stays below the bound on every probe model") {
        for (int rep = 0; rep < 10; ++rep) {
            ProductMeasure q = trh::random_measure(rng, tree);
            AdaptedProcess x = trh::random_process(rng, tree);
            for (double c : {0.05, 0.1, 0.5}) {
                MaximalInequalityReport rep_c =
                    maximal_inequality_experiment(flat, q, x, 0, c);
                CHECK(rep_c.exact);
                CHECK(rep_c.pass);
                CHECK(rep_c.probability <= rep_c.bound + 1e-12);
            }
        }
    }
    SECTION("a threshold above every excess gives probability zero") {
        ProductMeasure q = trh::random_measure(rng, tree);
        AdaptedProcess x = trh::random_process(rng, tree);
        MaximalInequalityReport rep = maximal_inequality_experiment(flat, q, x, 0, 1e6);
        CHECK(rep.probability == 0.0);
        CHECK(rep.pass);
    }
    SECTION("the maximizing model saturates the bound at zero") {
        EventTree small = binomial(1);
        RiskMeasure rm = RiskMeasure::entropic(small, 1.0);
        AdaptedProcess x = proc(small, {{0, 0.0}, {1, 1.0}, {2, -1.0}});
        // Gibbs density exp(-x) / normalizer attains the robust supremum
        AdaptedProcess z(small);
        double norm = 0.0;
        ProductMeasure pbar = ProductMeasure::reference(small);
        for (NodeIndex n = 0; n < small.node_count(); ++n)
            norm += pbar.atom_mass(n) * std::exp(-x[n]);
        for (NodeIndex n = 0; n < small.node_count(); ++n) z[n] = std::exp(-x[n]) / norm;
        ProductMeasure gibbs = ProductMeasure::from_density(z);
        MaximalInequalityReport rep = maximal_inequality_experiment(rm, gibbs, x, 0, 0.05);
        CHECK(rep.bound == Catch::Approx(0.0).margin(1e-9));
        CHECK(rep.probability == 0.0);
    }
    SECTION("Monte Carlo intervals are consistent with exact enumeration") {
        ProductMeasure q = trh::random_measure(rng, tree);
        AdaptedProcess x = trh::random_process(rng, tree);
        MaximalInequalityReport exact = maximal_inequality_experiment(flat, q, x, 0, 0.1);
        MaximalInequalityReport mc = maximal_inequality_experiment(flat, q, x, 20000, 0.1);
        CHECK_FALSE(mc.exact);
        CHECK(mc.lower <= exact.probability + 1e-9);
        CHECK(mc.upper >= exact.probability - 1e-9);
        CHECK(mc.pass);
    }
    SECTION("infinite penalties make the inequality trivial and are refused") {
        EventTree small = binomial(1);
        RiskMeasure coherent = RiskMeasure::avar(small, 0.5);
        AdaptedProcess z(small);
        z[1] = 1.0 / (small.path_prob(1) * small.mu(1));  // atom density 4 breaches the cap 2
        ProductMeasure q = ProductMeasure::from_density(z);
        AdaptedProcess x = trh::random_process(rng, small);
        CHECK_THROWS_AS(maximal_inequality_experiment(coherent, q, x, 0, 0.1),
                        InfinitePenalty);
    }
    SECTION("a nonpositive threshold is rejected") {
        ProductMeasure q = ProductMeasure::reference(tree);
        AdaptedProcess x(tree);
        CHECK_THROWS_AS(maximal_inequality_experiment(flat, q, x, 0, 0.0), InconsistentInput);
    }
}

TEST_CASE("pasting stability holds for singletons and closed families") {
    EventTree tree = binomial(1);
    std::vector<TimeIndex> times{0, 1};

    SECTION("a singleton is stable: pasting with itself is the identity") {
        StabilityReport rep = check_stability({ProductMeasure::reference(tree)}, times, {});
        CHECK(rep.pass);
        CHECK(rep.checked > 0);
    }
    SECTION("the average-value-at-risk polytope closes under pasting") {
        // vertex densities of { 0 <= Z <= 2, mean one } over the three atoms
        std::vector<double> caps;
        ProductMeasure pbar = ProductMeasure::reference(tree);
        for (NodeIndex n = 0; n < tree.node_count(); ++n)
            caps.push_back(pbar.atom_mass(n) * 2.0);
        std::vector<ProductMeasure> family;
        for (const auto& w : capped_simplex_vertices(caps)) {
            AdaptedProcess z(tree);
            for (NodeIndex n = 0; n < tree.node_count(); ++n)
                z[n] = w[n] / pbar.atom_mass(n);
            family.push_back(ProductMeasure::from_density(z));
        }
        REQUIRE(family.size() >= 3);

        // close the family under admissible pastings, then certify stability
        for (int round = 0; round < 8; ++round) {
            StabilityReport rep = check_stability(family, times, {});
            if (rep.pass) break;
            family.push_back(ProductMeasure::from_density(rep.violation->density));
            REQUIRE(round < 7);
        }
        StabilityReport closed = check_stability(family, times, {});
        CHECK(closed.pass);
        CHECK(closed.checked > 0);
    }
    SECTION("two unrelated strictly positive measures fail with a witness") {
        Rng rng = Rng::stream(91, 8);
        EventTree two = binomial(2);
        std::vector<ProductMeasure> pair{trh::random_measure(rng, two),
                                         trh::random_measure(rng, two)};
        std::vector<TimeIndex> ts{1};
        StabilityReport rep = check_stability(pair, ts, {});
        REQUIRE_FALSE(rep.pass);
        REQUIRE(rep.violation.has_value());
        // replay: the exhibited density really is a pasting outside the hull
        std::vector<std::vector<double>> hull;
        for (const ProductMeasure& q : pair) {
            std::vector<double> z(two.node_count());
            for (NodeIndex n = 0; n < two.node_count(); ++n) z[n] = q.z(n);
            hull.push_back(z);
        }
        std::vector<double> z(two.node_count());
        for (NodeIndex n = 0; n < two.node_count(); ++n) z[n] = rep.violation->density[n];
        CHECK_FALSE(in_convex_hull(hull, z, 1e-12));
    }
    SECTION("inadmissible pairs are skipped by default and refused on demand") {
        AdaptedProcess z1(tree), z2(tree);
        z1[1] = 1.0 / (tree.path_prob(1) * tree.mu(1));  // only the up tail
        z2[2] = 1.0 / (tree.path_prob(2) * tree.mu(2));  // only the down tail
        std::vector<ProductMeasure> pair{ProductMeasure::from_density(z1),
                                         ProductMeasure::from_density(z2)};
        StabilityReport rep = check_stability(pair, times, {});
        CHECK(rep.skipped > 0);
        CHECK_THROWS_AS(check_stability(pair, times, {}, false), NotAbsContinuous);
    }
}

TEST_CASE("the three consistency criteria agree on every fixture") {
    EventTree tree = binomial(2);
    Rng rng = Rng::stream(91, 9);

    struct Fixture {
        const char* name;
        RiskMeasure rm;
        bool consistent;
    };
    std::vector<Fixture> fixtures;
    fixtures.push_back({"entropic flat", RiskMeasure::entropic(tree, 1.0), true});
    fixtures.push_back(
        {"entropic falling", RiskMeasure::entropic(tree, std::vector<double>{2.0, 1.0, 0.5}),
         false});
    fixtures.push_back(
        {"entropic rising", RiskMeasure::entropic(tree, std::vector<double>{0.5, 1.0, 2.0}),
         false});
    fixtures.push_back(
        {"wrapped avar", RiskMeasure::make_time_consistent(RiskMeasure::avar(tree, 0.5)), true});

    for (const Fixture& fx : fixtures) {
        INFO(fx.name);
        // (i) recursiveness over the probe family
        bool recursive = check_time_consistent(fx.rm, 150).pass;
        CHECK(recursive == fx.consistent);

        // (ii) vanishing cocycle residual on probe models
        bool cocycle = true;
        std::vector<ProductMeasure> probes;
        for (int rep = 0; rep < 8; ++rep) probes.push_back(trh::random_measure(rng, tree));
        probes.push_back(tilted_horizon_measure(tree, 1.4));
        for (const ProductMeasure& q : probes)
            for (TimeIndex t = 0; t < tree.horizon() && cocycle; ++t)
                for (double r : one_step_cocycle_residual(fx.rm, q, t))
                    if (std::abs(r) > 1e-9) cocycle = false;
        CHECK(cocycle == fx.consistent);

        // (iii) the witness supermartingale property over (process, model) probes
        bool witness = true;
        for (const ProductMeasure& q : probes) {
            for (int rep = 0; rep < 6 && witness; ++rep) {
                AdaptedProcess x = trh::random_process(rng, tree);
                if (!supermartingale_check(supermartingale_witness(fx.rm, x, q), q,
                                           MartingaleSign::supermartingale, 1e-9)
                         .pass)
                    witness = false;
            }
            if (!witness) break;
            // penalty attainers are the sharpest probes for the witness
            AdaptedProcess x = entropic_attainer(tree, q, fx.rm.kind() == RiskKind::entropic
                                                              ? fx.rm.r_at(0)
                                                              : 1.0);
            if (!supermartingale_check(supermartingale_witness(fx.rm, x, q), q,
                                       MartingaleSign::supermartingale, 1e-9)
                     .pass)
                witness = false;
        }
        CHECK(witness == fx.consistent);
    }
}
