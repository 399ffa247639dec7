// Command-line front end: ingest tree/process/measure/risk specs, run
// evaluations and diagnostics, emit machine-readable reports (JSON) and
// plot-ready tabular data (CSV long format: time,node,quantity,value).
//
// Exit codes: 0 pass, 1 check failed with a counterexample, 2 validation
// failure, 3 evaluation failure.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "treerisk/treerisk.hpp"

namespace {

using namespace treerisk;

struct RunConfig {
    std::string tree_path;
    std::string process_name;
    std::vector<std::string> measure_paths;
    std::string risk_path;
    std::string term_path;
    std::string property;
    std::string out_path;
    std::string format = "json";
    std::uint64_t seed = 42;
    int budget = 500;
    double tol = 1e-9;
};

Json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MalformedSpec("cannot open " + path);
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw MalformedSpec(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// output plumbing
// ---------------------------------------------------------------------------

struct CsvRow {
    TimeIndex time;
    int node;
    std::string quantity;
    double value;
};

std::string csv_text(const std::vector<CsvRow>& rows) {
    std::ostringstream out;
    out << "time,node,quantity,value\n";
    for (const CsvRow& r : rows)
        out << r.time << ',' << r.node << ',' << r.quantity << ','
            << Json(r.value).dump() << '\n';
    return out.str();
}

void write_output(const RunConfig& cfg, const std::string& text) {
    if (cfg.out_path.empty()) {
        std::cout << text;
        return;
    }
    const std::string tmp = cfg.out_path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw MalformedSpec("cannot write " + tmp);
        out << text;
        if (!out) throw MalformedSpec("write to " + tmp + " failed");
    }
    if (std::rename(tmp.c_str(), cfg.out_path.c_str()) != 0)
        throw MalformedSpec("cannot move " + tmp + " into place");
}

void emit(const RunConfig& cfg, const Json& report, const std::vector<CsvRow>& rows) {
    if (cfg.format == "csv") write_output(cfg, csv_text(rows));
    else write_output(cfg, report.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// shared input handling
// ---------------------------------------------------------------------------

AdaptedProcess named_process(const EventTree& tree, const TreeSpec& spec,
                             const std::string& name) {
    auto it = spec.processes.find(name);
    if (it == spec.processes.end())
        throw MalformedSpec("processes." + name + " not found");
    return process_from_values(tree, it->second, "tree.processes." + name);
}

RiskMeasure load_risk(const RunConfig& cfg, const EventTree& tree) {
    if (cfg.risk_path.empty()) throw MalformedSpec("--risk is required for this command");
    return risk_from_json(tree, load_json(cfg.risk_path));
}

std::vector<ProductMeasure> load_measures(const RunConfig& cfg, const EventTree& tree) {
    if (cfg.measure_paths.empty())
        throw MalformedSpec("--measure is required for this command");
    std::vector<ProductMeasure> out;
    for (const std::string& path : cfg.measure_paths)
        out.push_back(measure_from_json(tree, load_json(path)));
    return out;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const RunConfig& cfg, const EventTree& tree, const TreeSpec& spec) {
    if (cfg.process_name.empty()) throw MalformedSpec("--process is required for eval");
    AdaptedProcess x = named_process(tree, spec, cfg.process_name);
    RiskMeasure rm = load_risk(cfg, tree);

    Json values = Json::object();
    std::vector<CsvRow> rows;
    for (TimeIndex t = 0; t <= tree.horizon(); ++t) {
        std::vector<double> rho = evaluate(rm, x, t);
        const auto& level = tree.nodes_at(t);
        for (std::size_t k = 0; k < level.size(); ++k) {
            values[std::to_string(tree.id(level[k]))] = rho[k];
            rows.push_back({t, tree.id(level[k]), "rho", rho[k]});
        }
    }
    Json report{{"command", "eval"},
                {"process", cfg.process_name},
                {"risk", risk_to_json(rm)},
                {"values", std::move(values)}};
    emit(cfg, report, rows);
    return 0;
}

// ---------------------------------------------------------------------------
// decompose
// ---------------------------------------------------------------------------

int cmd_decompose(const RunConfig& cfg, const EventTree& tree) {
    std::vector<ProductMeasure> measures = load_measures(cfg, tree);
    const ProductMeasure& q = measures.front();
    Disintegration dis = decompose(q);
    ProductMeasure back = compose(dis.m, dis.gamma);
    double residual = 0.0;
    for (NodeIndex n = 0; n < tree.node_count(); ++n)
        if (q.z(n) > 0.0) residual = std::max(residual, std::abs(back.z(n) - q.z(n)));

    std::vector<CsvRow> rows;
    for (NodeIndex n = 0; n < tree.node_count(); ++n) {
        rows.push_back({tree.time(n), tree.id(n), "M", dis.m[n]});
        rows.push_back({tree.time(n), tree.id(n), "D", dis.d[n]});
        rows.push_back({tree.time(n), tree.id(n), "gamma", dis.gamma[n]});
    }
    rows.push_back({0, tree.id(tree.nodes_at(0).front()), "residual", residual});

    Json report = disintegration_to_json(dis);
    report["command"] = "decompose";
    report["residual"] = residual;
    emit(cfg, report, rows);
    return 0;
}

// ---------------------------------------------------------------------------
// check
// ---------------------------------------------------------------------------

struct CheckResult {
    std::string status;              // "pass", "fail", or a trend label
    bool failed = false;             // drives the exit code
    Json counterexample = nullptr;
    std::vector<CsvRow> rows;        // extra plot rows beyond the status row
};

CheckResult check_consistency_family(const RunConfig& cfg, const RiskMeasure& rm,
                                     ConsistencyProperty property) {
    ConsistencyVerdict v =
        check_time_consistent(rm, cfg.budget, property, cfg.tol, cfg.seed);
    CheckResult res;
    res.failed = !v.pass;
    res.status = v.pass ? "pass" : "fail";
    if (v.counterexample)
        res.counterexample = counterexample_json(rm.tree(), *v.counterexample);
    return res;
}

CheckResult check_weak(const RunConfig& cfg, const RiskMeasure& rm) {
    ConsistencyVerdict v = check_weak_acceptance(rm, cfg.budget, cfg.tol, cfg.seed);
    CheckResult res;
    res.failed = !v.pass;
    res.status = v.pass ? "pass" : "fail";
    if (v.counterexample)
        res.counterexample = counterexample_json(rm.tree(), *v.counterexample);
    return res;
}

CheckResult check_subadditivity(const RunConfig& cfg, const EventTree& tree,
                                const TreeSpec& spec, const RiskMeasure& rm) {
    std::optional<AdaptedProcess> fixed;
    if (!cfg.process_name.empty()) fixed = named_process(tree, spec, cfg.process_name);

    CheckResult res;
    res.status = "pass";
    int pairs = (tree.horizon() + 1) * (tree.horizon() + 2) / 2;
    int draws = std::max(1, cfg.budget / pairs);
    for (TimeIndex t = 0; t <= tree.horizon(); ++t) {
        for (TimeIndex s = 0; t + s <= tree.horizon(); ++s) {
            Rng rng = Rng::stream(cfg.seed, 0x5badd0ull + 64u * static_cast<unsigned>(t) +
                                                static_cast<unsigned>(s));
            for (int draw = 0; draw < draws; ++draw) {
                AdaptedProcess x = fixed ? *fixed : AdaptedProcess(tree);
                if (!fixed)
                    for (NodeIndex n = 0; n < tree.node_count(); ++n)
                        x[n] = rng.uniform(-5.0, 5.0);
                std::vector<double> m(tree.nodes_at(t).size());
                for (double& v : m) v = rng.uniform(0.0, 2.0);
                CashSubadditivityReport rep = check_cash_subadditive(rm, x, t, m, s, cfg.tol);
                if (rep.pass) continue;
                std::size_t k = detail::rank_in_level(tree, rep.node);
                CashProbeCounterexample ce{x, m, rep.node, rep.shifted[k], rep.floor[k]};
                res.failed = true;
                res.status = "fail";
                res.counterexample = counterexample_json(tree, ce, t + s);
                return res;
            }
        }
    }
    return res;
}

CheckResult check_additivity(const RunConfig& cfg, const EventTree& tree,
                             const RiskMeasure& rm) {
    CheckResult res;
    res.status = "pass";
    for (TimeIndex t = 0; t < tree.horizon(); ++t)
        for (TimeIndex s = t + 1; s <= tree.horizon(); ++s) {
            CashAdditivityReport rep =
                check_cash_additive_at(rm, t, s, cfg.budget, cfg.tol, cfg.seed);
            if (rep.additive) continue;
            res.failed = true;
            res.status = "fail";
            if (rep.counterexample)
                res.counterexample = counterexample_json(tree, *rep.counterexample, s);
            return res;
        }
    return res;
}

CheckResult check_calibration(const RunConfig& cfg, const EventTree& tree,
                              const RiskMeasure& rm) {
    if (cfg.term_path.empty())
        throw MalformedSpec("--term is required for the calibration property");
    TermStructure term = term_structure_from_json(tree, load_json(cfg.term_path));

    CheckResult res;
    res.status = "pass";
    for (TimeIndex t = 0; t < tree.horizon(); ++t) {
        CalibrationReport rep = check_zcb_calibration(rm, term, t, cfg.budget, cfg.tol, cfg.seed);
        for (const MaturityVerdict& v : rep.maturities)
            res.rows.push_back({t, tree.id(v.node), "residual@" + std::to_string(v.maturity),
                                v.worst_residual});
        if (rep.pass) continue;
        res.failed = true;
        res.status = "fail";
        Json maturities = Json::array();
        for (const MaturityVerdict& v : rep.maturities)
            maturities.push_back(Json{{"maturity", v.maturity},
                                      {"calibrated", v.calibrated},
                                      {"worst_residual", v.worst_residual},
                                      {"node", tree.id(v.node)}});
        res.counterexample = Json{{"t", t}, {"maturities", std::move(maturities)}};
        return res;
    }
    return res;
}

CheckResult check_maximal(const RunConfig& cfg, const EventTree& tree, const TreeSpec& spec,
                          const RiskMeasure& rm) {
    std::vector<ProductMeasure> measures = load_measures(cfg, tree);
    AdaptedProcess x(tree);
    if (!cfg.process_name.empty()) {
        x = named_process(tree, spec, cfg.process_name);
    } else {
        Rng rng = Rng::stream(cfg.seed, 0x3a71ull);
        for (NodeIndex n = 0; n < tree.node_count(); ++n) x[n] = rng.uniform(-5.0, 5.0);
    }

    CheckResult res;
    res.status = "pass";
    const double thresholds[] = {0.05, 0.1, 0.5};
    for (std::size_t i = 0; i < measures.size(); ++i)
        for (double c : thresholds) {
            MaximalInequalityReport rep =
                maximal_inequality_experiment(rm, measures[i], x, 0, c, cfg.seed);
            res.rows.push_back({0, tree.id(tree.nodes_at(0).front()),
                                "probability@c=" + Json(c).dump(), rep.probability});
            res.rows.push_back({0, tree.id(tree.nodes_at(0).front()),
                                "bound@c=" + Json(c).dump(), rep.bound});
            if (rep.pass) continue;
            res.failed = true;
            res.status = "fail";
            res.counterexample = Json{{"measure", cfg.measure_paths[i]},
                                      {"c", c},
                                      {"probability", rep.probability},
                                      {"bound", rep.bound}};
            return res;
        }
    return res;
}

CheckResult check_doob_riesz(const RunConfig& cfg, const EventTree& tree,
                             const RiskMeasure& rm) {
    std::vector<ProductMeasure> measures = load_measures(cfg, tree);
    CheckResult res;
    res.status = "pass";
    for (std::size_t i = 0; i < measures.size(); ++i) {
        PenaltyDecomposition dec{AdaptedProcess(tree), AdaptedProcess(tree),
                                 AdaptedProcess(tree), AdaptedProcess(tree),
                                 AdaptedProcess(tree)};
        try {
            dec = doob_riesz(rm, measures[i], cfg.tol);
        } catch (const InconsistentInput& e) {
            // the compensated discounted penalty failed to close into a
            // martingale: the measure is not strongly consistent
            res.failed = true;
            res.status = "fail";
            res.counterexample = Json{{"measure", cfg.measure_paths[i]}, {"reason", e.what()}};
            return res;
        }
        double worst = 0.0;
        for (NodeIndex n = 0; n < tree.node_count(); ++n) {
            worst = std::max(worst, std::abs(dec.bubble[n]));
            res.rows.push_back({tree.time(n), tree.id(n), "discounted", dec.discounted[n]});
            res.rows.push_back({tree.time(n), tree.id(n), "predictable", dec.predictable[n]});
            res.rows.push_back({tree.time(n), tree.id(n), "martingale", dec.martingale[n]});
            res.rows.push_back({tree.time(n), tree.id(n), "potential", dec.potential[n]});
            res.rows.push_back({tree.time(n), tree.id(n), "bubble", dec.bubble[n]});
        }
        if (worst <= cfg.tol) continue;
        res.failed = true;
        res.status = "fail";
        res.counterexample = Json{{"measure", cfg.measure_paths[i]}, {"max_bubble", worst}};
        return res;
    }
    return res;
}

CheckResult check_bubble_profile(const RunConfig& cfg, const EventTree& tree,
                                 const RiskMeasure& rm) {
    std::vector<ProductMeasure> measures = load_measures(cfg, tree);
    const ProductMeasure& q = measures.front();
    std::vector<TimeIndex> dates;
    for (TimeIndex s = 0; s <= tree.horizon(); ++s) dates.push_back(s);
    BubbleProfile profile = bubble_profile([&](TimeIndex) { return rm; },
                                           [&](TimeIndex) { return q; }, dates);
    CheckResult res;
    res.status = profile.trend;  // a labeled trend, never a binary verdict
    int root = tree.id(tree.nodes_at(0).front());
    for (std::size_t i = 0; i < profile.dates.size(); ++i) {
        res.rows.push_back({profile.dates[i], root, "value", profile.values[i]});
        res.rows.push_back({profile.dates[i], root, "tail_sum", profile.tail_sums[i]});
    }
    return res;
}

CheckResult check_pasting_stability(const RunConfig& cfg, const EventTree& tree) {
    std::vector<ProductMeasure> measures = load_measures(cfg, tree);
    std::vector<TimeIndex> times;
    for (TimeIndex t = 0; t <= tree.horizon(); ++t) times.push_back(t);
    std::vector<OptionalSet> sets;
    for (TimeIndex t : times) {
        const auto& level = tree.nodes_at(t);
        for (std::size_t k = 0; k < level.size(); ++k) {
            OptionalSet b = OptionalSet::empty(tree, t);
            b.tail[k] = 1;
            sets.push_back(std::move(b));
        }
    }
    StabilityReport rep = check_stability(measures, times, sets);
    CheckResult res;
    res.failed = !rep.pass;
    res.status = rep.pass ? "pass" : "fail";
    if (rep.violation)
        res.counterexample = Json{{"first", cfg.measure_paths[rep.violation->first]},
                                  {"second", cfg.measure_paths[rep.violation->second]},
                                  {"t", rep.violation->t},
                                  {"density", process_to_json(rep.violation->density)}};
    return res;
}

int cmd_check(const RunConfig& cfg, const EventTree& tree, const TreeSpec& spec) {
    static const std::set<std::string> known{
        "time-consistency", "acceptance",         "rejection",       "weak",
        "cash-subadditivity", "cash-additivity",  "calibration",     "maximal-inequality",
        "doob-riesz",       "bubble-profile",     "stability"};
    if (!known.count(cfg.property))
        throw MalformedSpec("unknown property \"" + cfg.property + "\"");

    CheckResult res;
    if (cfg.property == "stability") {
        res = check_pasting_stability(cfg, tree);
    } else {
        RiskMeasure rm = load_risk(cfg, tree);
        if (cfg.property == "time-consistency")
            res = check_consistency_family(cfg, rm, ConsistencyProperty::strong);
        else if (cfg.property == "acceptance")
            res = check_consistency_family(cfg, rm, ConsistencyProperty::acceptance);
        else if (cfg.property == "rejection")
            res = check_consistency_family(cfg, rm, ConsistencyProperty::rejection);
        else if (cfg.property == "weak")
            res = check_weak(cfg, rm);
        else if (cfg.property == "cash-subadditivity")
            res = check_subadditivity(cfg, tree, spec, rm);
        else if (cfg.property == "cash-additivity")
            res = check_additivity(cfg, tree, rm);
        else if (cfg.property == "calibration")
            res = check_calibration(cfg, tree, rm);
        else if (cfg.property == "maximal-inequality")
            res = check_maximal(cfg, tree, spec, rm);
        else if (cfg.property == "doob-riesz")
            res = check_doob_riesz(cfg, tree, rm);
        else
            res = check_bubble_profile(cfg, tree, rm);
    }

    std::vector<CsvRow> rows;
    rows.push_back({0, tree.id(tree.nodes_at(0).front()), "status", res.failed ? 0.0 : 1.0});
    rows.insert(rows.end(), res.rows.begin(), res.rows.end());
    emit(cfg, verdict_json(cfg.property, res.status, std::move(res.counterexample), cfg.tol),
         rows);
    return res.failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynamic risk measures on event trees: evaluate, decompose, check"};
    app.require_subcommand(1);

    RunConfig cfg;
    auto add_common = [&cfg](CLI::App* sub) {
        sub->add_option("--tree", cfg.tree_path, "tree spec JSON file")->required();
        sub->add_option("--process", cfg.process_name, "process name inside the tree file");
        sub->add_option("--measure", cfg.measure_paths,
                        "product measure JSON file (repeatable)");
        sub->add_option("--risk", cfg.risk_path, "risk measure spec JSON file");
        sub->add_option("--term", cfg.term_path, "term structure JSON file");
        sub->add_option("--property", cfg.property, "property name for check");
        sub->add_option("--seed", cfg.seed, "probe RNG seed")->capture_default_str();
        sub->add_option("--budget", cfg.budget, "probe budget")->capture_default_str();
        sub->add_option("--tol", cfg.tol, "comparison tolerance")->capture_default_str();
        sub->add_option("--format", cfg.format, "output format: json | csv")
            ->capture_default_str();
        sub->add_option("--out", cfg.out_path, "output file (written atomically)");
    };
    CLI::App* eval_cmd = app.add_subcommand("eval", "risk values per (time, node)");
    CLI::App* decompose_cmd =
        app.add_subcommand("decompose", "split a product measure into (M, D, gamma)");
    CLI::App* check_cmd = app.add_subcommand("check", "verify a property, emit a verdict");
    add_common(eval_cmd);
    add_common(decompose_cmd);
    add_common(check_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;  // usage problems are validation failures
    }

    try {
        if (cfg.format != "json" && cfg.format != "csv")
            throw MalformedSpec("--format must be json or csv");
        if (cfg.budget < 1) throw MalformedSpec("--budget must be at least 1");
        TreeSpec spec = tree_spec_from_json(load_json(cfg.tree_path));
        EventTree tree = EventTree::build(spec);
        if (eval_cmd->parsed()) return cmd_eval(cfg, tree, spec);
        if (decompose_cmd->parsed()) return cmd_decompose(cfg, tree);
        if (check_cmd->parsed()) {
            if (cfg.property.empty())
                throw MalformedSpec("--property is required for check");
            return cmd_check(cfg, tree, spec);
        }
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const EvaluationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
