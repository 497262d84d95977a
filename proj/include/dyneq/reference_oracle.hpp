#pragma once

// Brute-force cross-checks: a uniform-grid, time-stepped network loader and a
// fine-bin damped best-response equilibrium built on it. Deliberately shares
// no code path with the exact exit-curve machinery.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dyneq/arc_models.hpp"
#include "dyneq/equilibrium.hpp"
#include "dyneq/errors.hpp"
#include "dyneq/network_loading.hpp"

namespace dyneq {

struct GridConfig {
    double step = 0.0;
};

/// Grid-sampled loading result.
struct OracleLoad {
    double step = 0.0;
    std::vector<double> times;                                 // grid points, times[0] = 0
    std::vector<std::vector<std::vector<double>>> inflow;      // [arc][route][k]
    std::vector<std::vector<std::vector<double>>> outflow;     // [arc][route][k]
    std::vector<std::vector<double>> exit_time;                // [arc][k]: exit time of a user entering at times[k]

    /// Cumulative curves as piecewise-linear flows through the grid samples.
    ArcFlowBundle bundle() const {
        ArcFlowBundle b;
        b.inflow.resize(inflow.size());
        b.total.resize(inflow.size());
        for (std::size_t a = 0; a < inflow.size(); ++a) {
            std::vector<double> total(times.size(), 0.0);
            for (const auto& series : inflow[a]) {
                b.inflow[a].push_back(CumulativeFlow::from_samples(times, series));
                for (std::size_t k = 0; k < times.size(); ++k) total[k] += series[k];
            }
            b.total[a] = CumulativeFlow::from_samples(times, total);
        }
        return b;
    }

    /// Exit time of a user entering arc a at time h (linear between grid points).
    double exit_at(std::size_t a, double h) const {
        const auto& e = exit_time[a];
        if (h <= 0.0) return e.front() + h;
        double x = h / step;
        std::size_t j = static_cast<std::size_t>(x);
        if (j + 1 >= e.size()) return e.back() + (h - times.back());
        double f = x - static_cast<double>(j);
        return e[j] + f * (e[j + 1] - e[j]);
    }

    double route_time(const Network& net, std::size_t r, double h) const {
        double clock = h;
        for (std::size_t a : net.route(r).arcs) clock = exit_at(a, clock);
        return clock - h;
    }
};

namespace detail {

inline double sample(const std::vector<double>& series, double step, double t) {
    if (t < 0.0 || series.empty()) return 0.0;
    double x = t / step;
    std::size_t j = static_cast<std::size_t>(x);
    if (j + 1 >= series.size()) return series.back();
    double f = x - static_cast<double>(j);
    return series[j] + f * (series[j + 1] - series[j]);
}

/// First time the nondecreasing grid series reaches `level` (linear between points).
inline double first_reach(const std::vector<double>& series, double step, double level) {
    auto it = std::lower_bound(series.begin(), series.end(), level);
    if (it == series.end()) return std::numeric_limits<double>::infinity();
    std::size_t j = static_cast<std::size_t>(it - series.begin());
    if (j == 0) return 0.0;
    double lo = series[j - 1], hi = series[j];
    double f = hi > lo ? (level - lo) / (hi - lo) : 1.0;
    return (static_cast<double>(j - 1) + f) * step;
}

}  // namespace detail

/**
 * Forward-Euler loading on the grid t_k = k * step. Each arc's cumulative
 * exits are advanced one step at a time from its cumulative entries:
 * constant arcs read the entry curve c seconds back, bottlenecks release at
 * most `capacity * step` of the backlog per step, and arc-performance arcs
 * deposit each step's entering packet uniformly between the exit times of its
 * first and last user. Per-route exits follow by FIFO matching on the
 * cumulative entry curve.
 */
inline OracleLoad oracle_load(const Network& net, const RouteFlowPattern& x, GridConfig grid) {
    const std::size_t n_arcs = net.arcs().size();
    const std::size_t n_routes = net.routes().size();
    if (x.flows.size() != n_routes) throw ValidationError("route flow pattern does not match the route table");
    const double t_star = net.min_t_min();
    if (!(grid.step > 0.0)) throw ValidationError("grid step must be positive");
    if (grid.step > t_star / 8.0 * (1.0 + 1e-12)) throw ValidationError("grid step must not exceed t_min*/8");

    struct Kind {
        const ConstantArc* constant = nullptr;
        const BottleneckArc* bottleneck = nullptr;
        const ArcPerformanceArc* performance = nullptr;
    };
    std::vector<Kind> kinds(n_arcs);
    for (std::size_t a = 0; a < n_arcs; ++a) {
        const ArcModel* m = net.arc(a).model.get();
        kinds[a] = {dynamic_cast<const ConstantArc*>(m), dynamic_cast<const BottleneckArc*>(m),
                    dynamic_cast<const ArcPerformanceArc*>(m)};
        if (!kinds[a].constant && !kinds[a].bottleneck && !kinds[a].performance)
            throw ModelParameterError("oracle does not support arc model '" + std::string(m->kind()) + "'");
    }

    double depart_end = 0.0, mass = x.total();
    for (const auto& f : x.flows)
        if (!f.is_zero()) depart_end = std::max(depart_end, f.knots().back().time);
    double tau = 0.0;
    for (const auto& a : net.arcs()) tau = std::max(tau, a.model->t_max(mass));
    double length_sum = 0.0;
    for (const auto& r : net.routes()) length_sum += static_cast<double>(r.arcs.size());
    const double budget = depart_end + length_sum * tau + 1.0;

    const double s = grid.step;
    OracleLoad out;
    out.step = s;
    out.inflow.assign(n_arcs, std::vector<std::vector<double>>(n_routes));
    out.outflow.assign(n_arcs, std::vector<std::vector<double>>(n_routes));
    std::vector<std::vector<double>> in_total(n_arcs), out_total(n_arcs);
    std::vector<std::vector<double>> deposits(n_arcs);  // arc-performance exits per grid cell ]t_{k-1}, t_k]
    std::vector<double> last_exit(n_arcs, 0.0);
    out.exit_time.assign(n_arcs, {});

    // Upstream arc of each (arc, route), or n_arcs for the first arc.
    std::vector<std::vector<std::size_t>> upstream(n_arcs, std::vector<std::size_t>(n_routes, n_arcs));
    std::vector<std::vector<bool>> on_route(n_arcs, std::vector<bool>(n_routes, false));
    for (std::size_t r = 0; r < n_routes; ++r) {
        const auto& arcs = net.route(r).arcs;
        for (std::size_t i = 0; i < arcs.size(); ++i) {
            on_route[arcs[i]][r] = true;
            if (i > 0) upstream[arcs[i]][r] = arcs[i - 1];
        }
    }

    auto deposit = [&](std::size_t a, double lo, double hi, double m) {
        auto& d = deposits[a];
        auto cell = [&](double t) { return static_cast<std::size_t>(std::max(0.0, std::ceil(t / s - 1e-9))); };
        std::size_t c_lo = cell(lo), c_hi = cell(hi);
        if (d.size() <= c_hi) d.resize(c_hi + 1, 0.0);
        if (c_lo == c_hi) {
            d[c_hi] += m;
            return;
        }
        for (std::size_t c = c_lo; c <= c_hi; ++c) {
            double a0 = std::max(lo, (static_cast<double>(c) - 1.0) * s), a1 = std::min(hi, static_cast<double>(c) * s);
            if (a1 > a0) d[c] += m * (a1 - a0) / (hi - lo);
        }
    };

    for (std::size_t k = 0;; ++k) {
        const double t = static_cast<double>(k) * s;
        out.times.push_back(t);

        // Exits at t_k depend only on entries at least t_min* >= 8 steps old.
        for (std::size_t a = 0; a < n_arcs; ++a) {
            const double prev = k == 0 ? 0.0 : out_total[a][k - 1];
            double exited = prev;
            if (kinds[a].constant) {
                exited = detail::sample(in_total[a], s, t - kinds[a].constant->free_flow_time());
            } else if (kinds[a].bottleneck) {
                const auto* b = kinds[a].bottleneck;
                double arrived = detail::sample(in_total[a], s, t - b->free_flow_time());
                exited = std::min(arrived, prev + b->capacity() * s);
            } else {
                exited = prev + (k < deposits[a].size() ? deposits[a][k] : 0.0);
            }
            const double entered_before = k == 0 ? 0.0 : in_total[a][k - 1];
            exited = std::clamp(exited, prev, std::max(prev, entered_before));
            out_total[a].push_back(exited);

            // FIFO matching: the users gone are the earliest entrants.
            double entry_time = k == 0 ? 0.0 : detail::first_reach(in_total[a], s, exited);
            for (std::size_t r = 0; r < n_routes; ++r) {
                double v = 0.0;
                if (on_route[a][r] && exited > 0.0) {
                    v = std::isfinite(entry_time) ? detail::sample(out.inflow[a][r], s, entry_time)
                                                  : out.inflow[a][r].back();
                    if (exited >= entered_before) v = out.inflow[a][r].back();
                }
                out.outflow[a][r].push_back(v);
            }
        }

        for (std::size_t a = 0; a < n_arcs; ++a) {
            double entered = 0.0;
            for (std::size_t r = 0; r < n_routes; ++r) {
                double v = 0.0;
                if (on_route[a][r]) {
                    std::size_t up = upstream[a][r];
                    v = up == n_arcs ? x.flows[r].at(t) : out.outflow[up][r][k];
                }
                out.inflow[a][r].push_back(v);
                entered += v;
            }
            in_total[a].push_back(entered);

            if (kinds[a].performance) {
                double volume = std::max(0.0, entered - out_total[a][k]);
                double h_now = t + kinds[a].performance->delay()(volume);
                double packet = k == 0 ? entered : entered - in_total[a][k - 1];
                if (packet > 0.0)
                    deposit(a, k == 0 ? h_now : std::min(last_exit[a], h_now), std::max(last_exit[a], h_now), packet);
                last_exit[a] = h_now;
                out.exit_time[a].push_back(h_now);
            }
        }

        bool finished = t >= depart_end;
        for (std::size_t r = 0; r < n_routes && finished; ++r) {
            const std::size_t last = net.route(r).arcs.back();
            double want = x.flows[r].total();
            if (std::abs(out.outflow[last][r][k] - want) > 1e-12 * std::max(1.0, want)) finished = false;
        }
        if (finished) break;
        if (t > budget) throw NonTermination("oracle loading exceeded its finiteness budget");
    }

    // Exit times of constant arcs and bottlenecks from the sampled curves.
    for (std::size_t a = 0; a < n_arcs; ++a) {
        if (kinds[a].performance) continue;
        auto& e = out.exit_time[a];
        for (std::size_t k = 0; k < out.times.size(); ++k) {
            double t = out.times[k];
            if (kinds[a].constant) {
                e.push_back(t + kinds[a].constant->free_flow_time());
            } else {
                double c = kinds[a].bottleneck->free_flow_time();
                double reach = detail::first_reach(out_total[a], s, in_total[a][k]);
                e.push_back(std::max(t + c, std::isfinite(reach) ? reach : t + c));
            }
        }
    }
    return out;
}

struct OracleEquilibrium {
    RouteFlowPattern flows;
    /// Fraction of each od's demand in each fine bin sent on each route: [od][bin][route position].
    std::vector<std::vector<std::vector<double>>> splits;
    double bin_width = 0.0;
    /// wardrop_gap of `flows` under exact loading.
    double gap = 0.0;
};

/**
 * Damped best response on bins of width `grid.step`, using oracle travel
 * times sampled at bin midpoints. Bin shares move toward the fastest route
 * with weight 1 / (n + 1) at iteration n.
 */
inline OracleEquilibrium oracle_equilibrium(const Network& net, const DemandTable& demand, GridConfig grid,
                                            std::size_t iterations) {
    if (net.routes().size() > 4 || net.arcs().size() > 6)
        throw InstanceTooLarge("oracle equilibrium is limited to 4 routes and 6 arcs");
    if (!(grid.step > 0.0)) throw ValidationError("grid step must be positive");
    const double horizon = demand.horizon.end;
    const std::size_t bins = static_cast<std::size_t>(std::ceil(horizon / grid.step - 1e-9));

    OracleEquilibrium eq;
    eq.bin_width = grid.step;
    std::vector<std::vector<std::size_t>> routes(demand.ods.size());
    eq.splits.resize(demand.ods.size());
    for (std::size_t i = 0; i < demand.ods.size(); ++i) {
        routes[i] = net.routes_between(demand.ods[i].origin, demand.ods[i].destination);
        if (routes[i].empty() && demand.ods[i].departures.total() > 0.0)
            throw NoRoute("no route connects " + demand.ods[i].origin + "->" + demand.ods[i].destination);
        eq.splits[i].assign(bins, std::vector<double>(routes[i].size(), routes[i].empty() ? 0.0 : 1.0 / routes[i].size()));
    }

    auto assemble = [&]() {
        RouteFlowPattern x;
        x.flows.resize(net.routes().size());
        for (std::size_t i = 0; i < demand.ods.size(); ++i) {
            const auto& q = demand.ods[i].departures;
            for (std::size_t j = 0; j < routes[i].size(); ++j) {
                FlowBuilder b;
                for (std::size_t k = 0; k < bins; ++k) {
                    double lo = k * grid.step, hi = std::min(horizon, (k + 1) * grid.step);
                    std::vector<double> cuts{lo, hi};
                    for (const auto& kn : q.knots())
                        if (kn.time > lo && kn.time < hi) cuts.push_back(kn.time);
                    std::sort(cuts.begin(), cuts.end());
                    for (std::size_t c = 0; c + 1 < cuts.size(); ++c)
                        b.add_uniform(cuts[c], cuts[c + 1], eq.splits[i][k][j] * measure_of(q, cuts[c], cuts[c + 1]));
                }
                x.flows[routes[i][j]] = std::move(b).build();
            }
        }
        return x;
    };

    for (std::size_t n = 1; n <= iterations; ++n) {
        OracleLoad loaded = oracle_load(net, assemble(), grid);
        const double weight = 1.0 / static_cast<double>(n + 1);
        for (std::size_t i = 0; i < demand.ods.size(); ++i) {
            if (routes[i].size() < 2) continue;
            for (std::size_t k = 0; k < bins; ++k) {
                double mid = (static_cast<double>(k) + 0.5) * grid.step;
                std::size_t best = 0;
                double best_time = std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < routes[i].size(); ++j) {
                    double t = loaded.route_time(net, routes[i][j], mid);
                    if (t < best_time - 1e-12) {
                        best_time = t;
                        best = j;
                    }
                }
                for (std::size_t j = 0; j < routes[i].size(); ++j)
                    eq.splits[i][k][j] += weight * ((j == best ? 1.0 : 0.0) - eq.splits[i][k][j]);
            }
        }
    }
    eq.flows = assemble();
    ArcFlowBundle exact = load(net, eq.flows);
    eq.gap = wardrop_gap(net, eq.flows, route_times(net, exact, demand.horizon));
    return eq;
}

}  // namespace dyneq
