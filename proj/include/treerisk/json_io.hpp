#pragma once

#include <json.hpp>

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "treerisk/calibration.hpp"
#include "treerisk/consistency.hpp"
#include "treerisk/optional_measure.hpp"
#include "treerisk/risk.hpp"
#include "treerisk/tree.hpp"
#include "treerisk/zoo.hpp"

/// JSON interchange for every artifact the library reads or writes: tree
/// specs, adapted processes, product measures, disintegrations, risk measure
/// specs, term structures and check verdicts.  Parsing is strict -- missing
/// or ill-typed fields raise MalformedSpec naming the offending field -- and
/// serialization is deterministic, so parse -> serialize -> parse is the
/// identity on every valid document.

namespace treerisk {

using Json = nlohmann::json;

namespace detail {

[[noreturn]] inline void bad_field(const std::string& what) { throw MalformedSpec(what); }

inline const Json& require(const Json& j, const std::string& ctx, const char* key) {
    if (!j.is_object()) bad_field(ctx + " must be an object");
    auto it = j.find(key);
    if (it == j.end()) bad_field(ctx + "." + key + " is required");
    return *it;
}

inline double as_number(const Json& j, const std::string& where) {
    if (!j.is_number()) bad_field(where + " must be a number");
    return j.get<double>();
}

inline int as_int(const Json& j, const std::string& where) {
    if (!j.is_number_integer()) bad_field(where + " must be an integer");
    return j.get<int>();
}

inline std::string as_string(const Json& j, const std::string& where) {
    if (!j.is_string()) bad_field(where + " must be a string");
    return j.get<std::string>();
}

/// Object keys are external node ids (or times) rendered as decimal strings.
inline int key_to_int(const std::string& key, const std::string& where) {
    std::size_t pos = 0;
    int v = 0;
    try {
        v = std::stoi(key, &pos);
    } catch (...) {
        pos = 0;
    }
    if (pos != key.size()) bad_field(where + " has a non-integer key \"" + key + "\"");
    return v;
}

inline NodeIndex key_to_node(const EventTree& tree, const std::string& key,
                             const std::string& where) {
    int id = key_to_int(key, where);
    try {
        return tree.index_of(id);
    } catch (const MalformedTree&) {
        bad_field(where + " references unknown node id " + key);
    }
}

/// {"<node id>": number} covering every node of the tree.
inline AdaptedProcess node_map(const EventTree& tree, const Json& j, const std::string& where) {
    if (!j.is_object()) bad_field(where + " must map node ids to numbers");
    AdaptedProcess x(tree);
    std::vector<char> seen(tree.node_count(), 0);
    for (auto it = j.begin(); it != j.end(); ++it) {
        NodeIndex n = key_to_node(tree, it.key(), where);
        x[n] = as_number(it.value(), where + "." + it.key());
        seen[n] = 1;
    }
    for (NodeIndex n = 0; n < tree.node_count(); ++n)
        if (!seen[n]) bad_field(where + " is missing node id " + std::to_string(tree.id(n)));
    return x;
}

inline Json node_map_json(const AdaptedProcess& x) {
    const EventTree& tree = x.tree();
    Json j = Json::object();
    for (NodeIndex n = 0; n < tree.node_count(); ++n) j[std::to_string(tree.id(n))] = x[n];
    return j;
}

inline ExtReal ext_from_json(const Json& j, const std::string& where) {
    if (j.is_string()) {
        if (j.get<std::string>() == "inf") return ExtReal::infinity();
        bad_field(where + " must be a number or \"inf\"");
    }
    return ExtReal(as_number(j, where));
}

inline Json ext_to_json(const ExtReal& a) {
    return a.is_inf() ? Json("inf") : Json(a.as_double());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// trees and adapted processes
// ---------------------------------------------------------------------------

inline TreeSpec tree_spec_from_json(const Json& j) {
    TreeSpec spec;
    spec.horizon = detail::as_int(detail::require(j, "tree", "horizon"), "tree.horizon");
    const Json& nodes = detail::require(j, "tree", "nodes");
    if (!nodes.is_array()) detail::bad_field("tree.nodes must be an array");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const std::string ctx = "tree.nodes[" + std::to_string(i) + "]";
        const Json& nj = nodes[i];
        NodeSpec ns;
        ns.id = detail::as_int(detail::require(nj, ctx, "id"), ctx + ".id");
        ns.time = detail::as_int(detail::require(nj, ctx, "time"), ctx + ".time");
        const Json& pj = detail::require(nj, ctx, "parent");
        if (!pj.is_null()) ns.parent = detail::as_int(pj, ctx + ".parent");
        ns.prob = detail::as_number(detail::require(nj, ctx, "prob"), ctx + ".prob");
        spec.nodes.push_back(ns);
    }
    if (j.contains("mu")) {
        const Json& mj = j.at("mu");
        if (!mj.is_object()) detail::bad_field("tree.mu must map node ids to numbers");
        for (auto it = mj.begin(); it != mj.end(); ++it)
            spec.mu[detail::key_to_int(it.key(), "tree.mu")] =
                detail::as_number(it.value(), "tree.mu." + it.key());
    }
    if (j.contains("processes")) {
        const Json& pj = j.at("processes");
        if (!pj.is_object()) detail::bad_field("tree.processes must map names to value maps");
        for (auto it = pj.begin(); it != pj.end(); ++it) {
            const std::string where = "tree.processes." + it.key();
            if (!it.value().is_object())
                detail::bad_field(where + " must map node ids to numbers");
            std::map<int, double>& values = spec.processes[it.key()];
            for (auto vit = it.value().begin(); vit != it.value().end(); ++vit)
                values[detail::key_to_int(vit.key(), where)] =
                    detail::as_number(vit.value(), where + "." + vit.key());
        }
    }
    return spec;
}

inline Json tree_spec_to_json(const TreeSpec& spec) {
    Json nodes = Json::array();
    for (const NodeSpec& ns : spec.nodes) {
        Json nj{{"id", ns.id}, {"time", ns.time}, {"prob", ns.prob}};
        nj["parent"] = ns.parent ? Json(*ns.parent) : Json(nullptr);
        nodes.push_back(std::move(nj));
    }
    Json j{{"horizon", spec.horizon}, {"nodes", std::move(nodes)}};
    if (!spec.mu.empty()) {
        Json mj = Json::object();
        for (auto [id, v] : spec.mu) mj[std::to_string(id)] = v;
        j["mu"] = std::move(mj);
    }
    if (!spec.processes.empty()) {
        Json pj = Json::object();
        for (const auto& [name, values] : spec.processes) {
            Json vj = Json::object();
            for (auto [id, v] : values) vj[std::to_string(id)] = v;
            pj[name] = std::move(vj);
        }
        j["processes"] = std::move(pj);
    }
    return j;
}

/// A process stored inside a tree spec, materialized against the built tree.
inline AdaptedProcess process_from_values(const EventTree& tree,
                                          const std::map<int, double>& values,
                                          const std::string& where) {
    AdaptedProcess x(tree);
    std::vector<char> seen(tree.node_count(), 0);
    for (auto [id, v] : values) {
        NodeIndex n = detail::key_to_node(tree, std::to_string(id), where);
        x[n] = v;
        seen[n] = 1;
    }
    for (NodeIndex n = 0; n < tree.node_count(); ++n)
        if (!seen[n])
            detail::bad_field(where + " is missing node id " + std::to_string(tree.id(n)));
    return x;
}

inline AdaptedProcess process_from_json(const EventTree& tree, const Json& j) {
    return detail::node_map(tree, j, "process");
}

inline Json process_to_json(const AdaptedProcess& x) { return detail::node_map_json(x); }

// ---------------------------------------------------------------------------
// product measures and disintegrations
// ---------------------------------------------------------------------------

inline ProductMeasure measure_from_json(const EventTree& tree, const Json& j) {
    return ProductMeasure::from_density(
        detail::node_map(tree, detail::require(j, "measure", "Z"), "measure.Z"));
}

inline Json measure_to_json(const ProductMeasure& q) {
    return Json{{"Z", detail::node_map_json(q.density())}};
}

inline Disintegration disintegration_from_json(const EventTree& tree, const Json& j) {
    Disintegration dis;
    dis.m = detail::node_map(tree, detail::require(j, "disintegration", "M"), "disintegration.M");
    dis.d = detail::node_map(tree, detail::require(j, "disintegration", "D"), "disintegration.D");
    dis.gamma = detail::node_map(tree, detail::require(j, "disintegration", "gamma"),
                                 "disintegration.gamma");
    return dis;
}

inline Json disintegration_to_json(const Disintegration& dis) {
    return Json{{"M", detail::node_map_json(dis.m)},
                {"D", detail::node_map_json(dis.d)},
                {"gamma", detail::node_map_json(dis.gamma)}};
}

// ---------------------------------------------------------------------------
// risk measure specs
// ---------------------------------------------------------------------------

namespace detail {

inline InnerPsi psi_from_json(const EventTree& tree, const Json& j, const std::string& where) {
    InnerPsi psi;
    std::string kind = as_string(require(j, where, "kind"), where + ".kind");
    if (kind == "expectation") psi.kind = InnerKind::expectation;
    else if (kind == "entropic") psi.kind = InnerKind::entropic_rv;
    else if (kind == "avar") psi.kind = InnerKind::avar_rv;
    else bad_field(where + ".kind \"" + kind + "\" is not one of expectation, entropic, avar");
    if (j.contains("r")) psi.r = as_number(j.at("r"), where + ".r");
    if (j.contains("lambda")) psi.lambda = as_number(j.at("lambda"), where + ".lambda");
    if (j.contains("model")) psi.model = node_map(tree, j.at("model"), where + ".model");
    return psi;
}

inline Json psi_to_json(const InnerPsi& psi) {
    Json j{{"kind", to_string(psi.kind)}};
    if (psi.kind == InnerKind::entropic_rv) j["r"] = psi.r;
    if (psi.kind == InnerKind::avar_rv) j["lambda"] = psi.lambda;
    if (psi.model) j["model"] = node_map_json(*psi.model);
    return j;
}

/// Per-time parameter profile: a scalar broadcasts, an array is indexed by t.
inline std::vector<double> profile_from_json(const Json& j, const std::string& where) {
    if (j.is_array()) {
        std::vector<double> p;
        for (std::size_t i = 0; i < j.size(); ++i)
            p.push_back(as_number(j[i], where + "[" + std::to_string(i) + "]"));
        return p;
    }
    return {as_number(j, where)};
}

inline Json profile_to_json(const EventTree& tree, double (RiskMeasure::*at)(TimeIndex) const,
                            const RiskMeasure& rm) {
    std::vector<double> p;
    for (TimeIndex t = 0; t <= tree.horizon(); ++t) p.push_back((rm.*at)(t));
    bool constant = true;
    for (double v : p) constant = constant && v == p.front();
    if (constant) return Json(p.front());
    return Json(p);
}

}  // namespace detail

inline RiskMeasure risk_from_json(const EventTree& tree, const Json& j) {
    std::string kind = detail::as_string(detail::require(j, "risk", "kind"), "risk.kind");
    const Json& params = detail::require(j, "risk", "params");
    if (!params.is_object()) detail::bad_field("risk.params must be an object");
    const std::string ctx = "risk.params";

    if (kind == "entropic")
        return RiskMeasure::entropic(
            tree, detail::profile_from_json(detail::require(params, ctx, "r"), ctx + ".r"));
    if (kind == "avar")
        return RiskMeasure::avar(tree, detail::profile_from_json(
                                           detail::require(params, ctx, "lambda"), ctx + ".lambda"));
    if (kind == "simplified-entropic")
        return RiskMeasure::simplified_entropic(
            tree, detail::as_number(detail::require(params, ctx, "u"), ctx + ".u"),
            detail::as_number(detail::require(params, ctx, "v"), ctx + ".v"));
    if (kind == "decoupled-avar")
        return RiskMeasure::decoupled_avar(
            tree, detail::as_number(detail::require(params, ctx, "lambda1"), ctx + ".lambda1"),
            detail::as_number(detail::require(params, ctx, "lambda2"), ctx + ".lambda2"));
    if (kind == "fixed-gamma") {
        AdaptedProcess gamma =
            detail::node_map(tree, detail::require(params, ctx, "gamma"), ctx + ".gamma");
        InnerPsi psi;
        if (params.contains("inner"))
            psi = detail::psi_from_json(tree, params.at("inner"), ctx + ".inner");
        return RiskMeasure::fixed_gamma(tree, std::move(gamma), std::move(psi));
    }
    if (kind == "dirac") {
        TimeIndex s = detail::as_int(detail::require(params, ctx, "date"), ctx + ".date");
        InnerPsi psi;
        if (params.contains("inner"))
            psi = detail::psi_from_json(tree, params.at("inner"), ctx + ".inner");
        return RiskMeasure::dirac(tree, s, std::move(psi));
    }
    if (kind == "stopping-sup") {
        InnerPsi psi;
        if (params.contains("inner"))
            psi = detail::psi_from_json(tree, params.at("inner"), ctx + ".inner");
        return RiskMeasure::stopping_sup(tree, std::move(psi));
    }
    if (kind == "penalty-table") {
        PenaltyTable table;
        const Json& measures = detail::require(params, ctx, "measures");
        if (!measures.is_array() || measures.empty())
            detail::bad_field(ctx + ".measures must be a non-empty array");
        for (std::size_t i = 0; i < measures.size(); ++i) {
            const std::string mctx = ctx + ".measures[" + std::to_string(i) + "]";
            table.ids.push_back(
                detail::as_string(detail::require(measures[i], mctx, "id"), mctx + ".id"));
            table.measures.push_back(ProductMeasure::from_density(
                detail::node_map(tree, detail::require(measures[i], mctx, "Z"), mctx + ".Z")));
        }
        table.alpha.resize(table.ids.size());
        const Json& alpha = detail::require(params, ctx, "alpha");
        if (!alpha.is_object()) detail::bad_field(ctx + ".alpha must be an object");
        for (std::size_t i = 0; i < table.ids.size(); ++i) {
            const std::string actx = ctx + ".alpha." + table.ids[i];
            auto it = alpha.find(table.ids[i]);
            if (it == alpha.end()) detail::bad_field(actx + " is required");
            if (!it->is_object()) detail::bad_field(actx + " must map times to node entries");
            for (auto tit = it->begin(); tit != it->end(); ++tit) {
                TimeIndex t = detail::key_to_int(tit.key(), actx);
                if (t < 0 || t > tree.horizon())
                    detail::bad_field(actx + "." + tit.key() + " is outside [0, horizon]");
                const std::string tctx = actx + "." + tit.key();
                const auto& level = tree.nodes_at(t);
                std::vector<ExtReal> row(level.size(), ExtReal::infinity());
                if (!tit->is_object())
                    detail::bad_field(tctx + " must map node ids to penalties");
                for (auto nit = tit->begin(); nit != tit->end(); ++nit) {
                    NodeIndex n = detail::key_to_node(tree, nit.key(), tctx);
                    if (tree.time(n) != t)
                        detail::bad_field(tctx + " keys node id " + nit.key() +
                                          " which is not a time-" + tit.key() + " node");
                    row[detail::rank_in_level(tree, n)] =
                        detail::ext_from_json(nit.value(), tctx + "." + nit.key());
                }
                table.alpha[i][t] = std::move(row);
            }
            for (TimeIndex t = 0; t <= tree.horizon(); ++t)
                if (!table.alpha[i].count(t))
                    detail::bad_field(actx + " is missing time " + std::to_string(t));
        }
        return RiskMeasure::penalty_table(tree, std::move(table));
    }
    if (kind == "recursive-wrapper")
        return RiskMeasure::make_time_consistent(
            risk_from_json(tree, detail::require(params, ctx, "base")));
    detail::bad_field("risk.kind \"" + kind + "\" is not recognized");
}

inline Json risk_to_json(const RiskMeasure& rm) {
    const EventTree& tree = rm.tree();
    Json params = Json::object();
    switch (rm.kind()) {
        case RiskKind::entropic:
            params["r"] = detail::profile_to_json(tree, &RiskMeasure::r_at, rm);
            break;
        case RiskKind::avar:
            params["lambda"] = detail::profile_to_json(tree, &RiskMeasure::lambda_at, rm);
            break;
        case RiskKind::simplified_entropic:
            params["u"] = rm.scenario_aversion();
            params["v"] = rm.clock_aversion();
            break;
        case RiskKind::decoupled_avar:
            params["lambda1"] = rm.lambda_clock();
            params["lambda2"] = rm.lambda_scenario();
            break;
        case RiskKind::fixed_gamma:
            params["gamma"] = detail::node_map_json(rm.allocation());
            params["inner"] = detail::psi_to_json(rm.inner());
            break;
        case RiskKind::stopping_sup:
            params["inner"] = detail::psi_to_json(rm.inner());
            break;
        case RiskKind::penalty_table: {
            const PenaltyTable& table = rm.table();
            Json measures = Json::array();
            Json alpha = Json::object();
            for (std::size_t i = 0; i < table.ids.size(); ++i) {
                measures.push_back(Json{{"id", table.ids[i]},
                                        {"Z", detail::node_map_json(table.measures[i].density())}});
                Json by_time = Json::object();
                for (const auto& [t, row] : table.alpha[i]) {
                    Json by_node = Json::object();
                    const auto& level = tree.nodes_at(t);
                    for (std::size_t k = 0; k < level.size(); ++k)
                        by_node[std::to_string(tree.id(level[k]))] = detail::ext_to_json(row[k]);
                    by_time[std::to_string(t)] = std::move(by_node);
                }
                alpha[table.ids[i]] = std::move(by_time);
            }
            params["measures"] = std::move(measures);
            params["alpha"] = std::move(alpha);
            break;
        }
        case RiskKind::recursive_wrapper:
            params["base"] = risk_to_json(rm.base());
            break;
    }
    return Json{{"kind", to_string(rm.kind())}, {"params", std::move(params)}};
}

// ---------------------------------------------------------------------------
// term structures
// ---------------------------------------------------------------------------

inline TermStructure term_structure_from_json(const EventTree& tree, const Json& j) {
    AdaptedProcess rates(tree);
    const Json& rj = detail::require(j, "term structure", "rates");
    if (!rj.is_object()) detail::bad_field("term structure.rates must map node ids to numbers");
    for (auto it = rj.begin(); it != rj.end(); ++it)
        rates[detail::key_to_node(tree, it.key(), "term structure.rates")] =
            detail::as_number(it.value(), "term structure.rates." + it.key());
    std::vector<std::map<TimeIndex, double>> zcb(tree.node_count());
    const Json& zj = detail::require(j, "term structure", "zcb");
    if (!zj.is_object()) detail::bad_field("term structure.zcb must map node ids to quote maps");
    for (auto it = zj.begin(); it != zj.end(); ++it) {
        NodeIndex n = detail::key_to_node(tree, it.key(), "term structure.zcb");
        const std::string where = "term structure.zcb." + it.key();
        if (!it->is_object()) detail::bad_field(where + " must map maturities to prices");
        for (auto qit = it->begin(); qit != it->end(); ++qit)
            zcb[n][detail::key_to_int(qit.key(), where)] =
                detail::as_number(qit.value(), where + "." + qit.key());
    }
    return TermStructure(std::move(rates), std::move(zcb));
}

inline Json term_structure_to_json(const TermStructure& term) {
    const EventTree& tree = term.tree();
    Json rates = Json::object();
    for (NodeIndex n = 0; n < tree.node_count(); ++n)
        if (!tree.is_root(n)) rates[std::to_string(tree.id(n))] = term.rate(n);
    Json zcb = Json::object();
    for (NodeIndex n = 0; n < tree.node_count(); ++n) {
        const auto& quotes = term.quotes(n);
        if (quotes.empty()) continue;
        Json row = Json::object();
        for (auto [k, price] : quotes) row[std::to_string(k)] = price;
        zcb[std::to_string(tree.id(n))] = std::move(row);
    }
    return Json{{"rates", std::move(rates)}, {"zcb", std::move(zcb)}};
}

// ---------------------------------------------------------------------------
// verdicts and counterexamples
// ---------------------------------------------------------------------------

inline Json verdict_json(const std::string& property, const std::string& status,
                         Json counterexample, double tolerance) {
    return Json{{"property", property},
                {"status", status},
                {"counterexample", std::move(counterexample)},
                {"tolerance", tolerance}};
}

inline Json counterexample_json(const EventTree& tree, const Counterexample& ce) {
    return Json{{"x", detail::node_map_json(ce.x)},
                {"t", ce.t},
                {"node", tree.id(ce.node)},
                {"lhs", ce.lhs},
                {"rhs", ce.rhs}};
}

inline Json counterexample_json(const EventTree& tree, const CashProbeCounterexample& ce,
                                TimeIndex s) {
    TimeIndex t = tree.time(ce.node);
    Json m = Json::object();
    const auto& level = tree.nodes_at(t);
    for (std::size_t k = 0; k < level.size(); ++k)
        m[std::to_string(tree.id(level[k]))] = ce.m[k];
    return Json{{"x", detail::node_map_json(ce.x)}, {"m", std::move(m)},   {"t", t},
                {"s", s},                           {"node", tree.id(ce.node)},
                {"lhs", ce.lhs},                    {"rhs", ce.rhs}};
}

}  // namespace treerisk
