#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dyneq/arc_models.hpp"
#include "dyneq/equilibrium.hpp"
#include "dyneq/network_loading.hpp"
#include "dyneq/reference_oracle.hpp"
#include "dyneq/scenario_io.hpp"

namespace dyneq {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitInvalid = 2, kExitNotConverged = 3 };

struct CliOptions {
    std::string scenario;
    std::string out = "dyneq_out";
    double dt = 0.0;
    std::size_t bins = 0;
    double tol = 1e-3;
    std::size_t max_iters = 200;
    std::uint64_t seed = 1;
    std::size_t probes = 200;
    bool strict = false;
    std::string method = "averaging";
    std::string flows;
};

namespace detail {

/// Each od's demand spread evenly over its routes.
inline RouteFlowPattern even_split(const Scenario& sc) {
    RouteFlowPattern x;
    x.flows.resize(sc.network.routes().size());
    for (const auto& od : sc.demand.ods) {
        auto routes = sc.network.routes_between(od.origin, od.destination);
        for (std::size_t r : routes)
            x.flows[r] = sum({x.flows[r], scale(od.departures, 1.0 / static_cast<double>(routes.size()))});
    }
    return x;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

class Output {
public:
    explicit Output(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

    void table(const std::string& name, const CsvTable& t) { write_file(dir_ / name, t.str()); }

    void summary(const nlohmann::json& s) { write_file(dir_ / "summary.json", s.dump(2) + "\n"); }

private:
    std::filesystem::path dir_;
};

inline nlohmann::json state_summary(const EquilibriumState& s) {
    return {{"gap", s.gap},
            {"iterations", s.iterations},
            {"best_iteration", s.best_iteration},
            {"converged", s.converged},
            {"bins", s.bins},
            {"bin_width", s.bin_width},
            {"warnings", s.warnings}};
}

inline void write_loading(Output& out, const Scenario& sc, const RouteFlowPattern& x, const ArcFlowBundle& b,
                          const TravelTimePattern& times) {
    out.table("route_flows.csv", route_flow_table(sc.network, x));
    out.table("arc_flows.csv", arc_flow_table(sc.network, b));
    out.table("route_times.csv", route_time_table(sc.network, times));
}

inline SolverConfig solver_config(const CliOptions& o, const Scenario& sc) {
    SolverConfig cfg;
    if (o.bins > 0) cfg.bin_width = sc.horizon.end / static_cast<double>(o.bins);
    cfg.gap_tolerance = o.tol;
    cfg.max_iterations = o.max_iters;
    if (o.method == "forward-fill")
        cfg.departure_method = DepartureMethod::forward_fill;
    else if (o.method != "averaging")
        throw ValidationError("unknown method '" + o.method + "' (expected averaging or forward-fill)");
    return cfg;
}

inline int cmd_load(const CliOptions& o, std::ostream& log) {
    Scenario sc = parse_scenario(o.scenario);
    RouteFlowPattern x = even_split(sc);
    ArcFlowBundle b = load(sc.network, x);
    TravelTimePattern times = route_times(sc.network, b, sc.horizon);
    Output out(o.out);
    write_loading(out, sc, x, b, times);
    out.summary({{"command", "load"}, {"scenario", o.scenario}, {"mass", x.total()}, {"frontier_steps", b.frontier_steps}});
    log << "loaded " << sc.network.arcs().size() << " arcs, mass " << format_number(x.total()) << "\n";
    return kExitOk;
}

inline int finish_solve(const CliOptions& o, const Scenario& sc, const EquilibriumState& s, const char* command,
                        std::ostream& log) {
    Output out(o.out);
    write_loading(out, sc, s.flows, load(sc.network, s.flows), s.times);
    out.table("gap_trace.csv", gap_trace_table(s));
    nlohmann::json summary = state_summary(s);
    summary["command"] = command;
    summary["scenario"] = o.scenario;
    out.summary(summary);
    for (const auto& w : s.warnings) log << "warning: " << w << "\n";
    log << command << ": gap " << format_number(s.gap) << " after " << s.iterations << " iterations"
        << (s.converged ? "" : " (tolerance not met)") << "\n";
    return !s.converged && o.strict ? kExitNotConverged : kExitOk;
}

inline int cmd_solve(const CliOptions& o, std::ostream& log) {
    Scenario sc = parse_scenario(o.scenario);
    return finish_solve(o, sc, solve_wardrop(sc.network, sc.demand, solver_config(o, sc)), "solve", log);
}

inline int cmd_solve_dtc(const CliOptions& o, std::ostream& log) {
    Scenario sc = parse_scenario(o.scenario);
    if (sc.classes.empty()) throw ValidationError("scenario defines no user classes");
    return finish_solve(o, sc, solve_departure_choice(sc.network, sc.classes, sc.horizon, solver_config(o, sc)),
                        "solve-dtc", log);
}

inline int cmd_check(const CliOptions& o, std::ostream& log) {
    Scenario sc = parse_scenario(o.scenario);
    // The scenario's own loads join the random probes.
    std::vector<CumulativeFlow> observed(sc.network.arcs().size());
    RouteFlowPattern x = even_split(sc);
    if (x.total() > 0.0) {
        try {
            ArcFlowBundle b = load(sc.network, x);
            observed = b.total;
        } catch (const FifoViolation& e) {
            log << "note: loading the scenario demand failed (" << e.what() << ")\n";
        }
    }
    std::vector<std::pair<std::string, ConformanceReport>> reports;
    nlohmann::json arcs = nlohmann::json::object();
    for (std::size_t a = 0; a < sc.network.arcs().size(); ++a) {
        std::vector<CumulativeFlow> extra;
        if (!observed[a].is_zero()) extra.push_back(observed[a]);
        const Arc& arc = sc.network.arc(a);
        reports.emplace_back(arc.id, check_assumptions(*arc.model, o.probes, o.seed + a, sc.horizon, extra));
        const ConformanceReport& rep = reports.back().second;
        arcs[arc.id] = rep.all_passed();
        for (const auto& c : rep.checks)
            if (!c.passed) log << arc.id << ": " << c.name << " failed: " << c.detail << "\n";
    }
    Output out(o.out);
    out.table("conformance.csv", conformance_table(reports));
    out.summary({{"command", "check"}, {"scenario", o.scenario}, {"probes", o.probes}, {"seed", o.seed}, {"arcs_passed", arcs}});
    log << "checked " << reports.size() << " arcs\n";
    return kExitOk;
}

inline int cmd_oracle(const CliOptions& o, std::ostream& log) {
    Scenario sc = parse_scenario(o.scenario);
    RouteFlowPattern x;
    if (o.flows.empty()) {
        x = even_split(sc);
    } else {
        std::ifstream in(o.flows);
        if (!in) throw ParseError("cannot open route flows '" + o.flows + "'", 0, "");
        x = read_route_flows(sc.network, in);
    }
    const double step = o.dt > 0.0 ? o.dt : sc.network.min_t_min() / 32.0;
    ArcFlowBundle exact = load(sc.network, x);
    ArcFlowBundle grid = oracle_load(sc.network, x, GridConfig{step}).bundle();

    CsvTable diff({"arc", "linf_inflow"});
    nlohmann::json summary = {{"command", "oracle"}, {"scenario", o.scenario}, {"step", step}};
    double worst = 0.0;
    for (std::size_t a = 0; a < sc.network.arcs().size(); ++a) {
        double d = linf_distance(exact.total[a], grid.total[a]);
        worst = std::max(worst, d);
        diff.add(sc.network.arc(a).id, 0.0, {sc.network.arc(a).id, format_number(d)});
    }
    diff.sort();
    summary["worst_linf"] = worst;
    if (x.total() > 0.0) {
        double gap = wardrop_gap(sc.network, x, route_times(sc.network, exact, sc.horizon));
        summary["gap"] = gap;
        log << "gap " << format_number(gap) << "\n";
        auto recorded = std::filesystem::path(o.flows).parent_path() / "summary.json";
        if (!o.flows.empty() && std::filesystem::exists(recorded)) {
            std::ifstream in(recorded);
            auto prior = nlohmann::json::parse(in, nullptr, false);
            if (prior.is_object() && prior.contains("gap") && prior["gap"].is_number()) {
                summary["recorded_gap"] = prior["gap"];
                summary["gap_difference"] = std::abs(gap - prior["gap"].get<double>());
            }
        }
    }
    Output out(o.out);
    out.table("oracle_diff.csv", diff);
    out.summary(summary);
    log << "oracle step " << format_number(step) << ", worst L-inf distance " << format_number(worst) << "\n";
    return kExitOk;
}

}  // namespace detail

/// Entry point of the dyneq command-line tool. Returns the process exit code.
inline int run_cli(const std::vector<std::string>& args, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Dynamic network loading and dynamic Wardrop equilibrium"};
    app.require_subcommand(1);
    CliOptions o;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("scenario", o.scenario, "scenario file")->required();
        sub->add_option("--out", o.out, "output directory");
    };
    auto add_solver = [&](CLI::App* sub) {
        sub->add_option("--bins", o.bins, "departure bins over the horizon (default 64)");
        sub->add_option("--tol", o.tol, "gap tolerance");
        sub->add_option("--max-iters", o.max_iters, "iteration limit");
        sub->add_flag("--strict", o.strict, "exit 3 when the tolerance is not met");
    };

    auto* load_cmd = app.add_subcommand("load", "network loading of the scenario demand split evenly over routes");
    add_common(load_cmd);
    auto* solve_cmd = app.add_subcommand("solve", "dynamic Wardrop equilibrium with fixed departures");
    add_common(solve_cmd);
    add_solver(solve_cmd);
    auto* dtc_cmd = app.add_subcommand("solve-dtc", "joint route and departure-time equilibrium");
    add_common(dtc_cmd);
    add_solver(dtc_cmd);
    dtc_cmd->add_option("--method", o.method, "averaging or forward-fill");
    auto* check_cmd = app.add_subcommand("check", "arc model assumption conformance");
    add_common(check_cmd);
    check_cmd->add_option("--probes", o.probes, "random probes per arc");
    check_cmd->add_option("--seed", o.seed, "probe seed");
    auto* oracle_cmd = app.add_subcommand("oracle", "grid oracle loading diffed against exact loading");
    add_common(oracle_cmd);
    oracle_cmd->add_option("--dt", o.dt, "oracle grid step (default t_min*/32)");
    oracle_cmd->add_option("--flows", o.flows, "route_flows.csv to load instead of the even split");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        log << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    }

    try {
        if (load_cmd->parsed()) return detail::cmd_load(o, log);
        if (solve_cmd->parsed()) return detail::cmd_solve(o, log);
        if (dtc_cmd->parsed()) return detail::cmd_solve_dtc(o, log);
        if (check_cmd->parsed()) return detail::cmd_check(o, log);
        if (oracle_cmd->parsed()) return detail::cmd_oracle(o, log);
    } catch (const ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const NoRoute& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const DegenerateDemand& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitFailure;
}

}  // namespace dyneq
