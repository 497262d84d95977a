#pragma once

// Distances behind the loading properties, shared by unit and acceptance tests.

#include <algorithm>
#include <vector>

#include "dyneq/network_loading.hpp"

namespace dyneq::properties {

/// Per-route outflow of every arc.
inline std::vector<std::vector<CumulativeFlow>> arc_outflows(const ArcFlowBundle& b) {
    std::vector<std::vector<CumulativeFlow>> out(b.inflow.size());
    for (std::size_t a = 0; a < b.inflow.size(); ++a)
        for (const auto& y : b.inflow[a]) out[a].push_back(pushforward(y, b.exit_curves[a]));
    return out;
}

/// Largest sup-distance between any two corresponding arc curves (inflows, totals, outflows).
inline double bundle_distance(const ArcFlowBundle& x, const ArcFlowBundle& y) {
    double d = 0.0;
    auto ox = arc_outflows(x), oy = arc_outflows(y);
    for (std::size_t a = 0; a < x.inflow.size(); ++a) {
        d = std::max(d, linf_distance(x.total[a], y.total[a]));
        for (std::size_t r = 0; r < x.inflow[a].size(); ++r) {
            d = std::max(d, linf_distance(x.inflow[a][r], y.inflow[a][r]));
            d = std::max(d, linf_distance(ox[a][r], oy[a][r]));
        }
    }
    return d;
}

/// Change of the loading when the propagation frontier is halved.
inline double frontier_halving_distance(const Network& net, const RouteFlowPattern& x) {
    return bundle_distance(load(net, x, {1.0}), load(net, x, {0.5}));
}

/**
 * Disagreement between load(X) and load(X restricted to h) on the part that
 * cannot see departures after h: inflows of first arcs up to h, inflows of
 * later arcs and every outflow up to h + t_min*.
 */
inline double prefix_causality_distance(const Network& net, const RouteFlowPattern& x, double h) {
    RouteFlowPattern cut;
    for (const auto& f : x.flows) cut.flows.push_back(restrict(f, h));
    ArcFlowBundle full = load(net, x), part = load(net, cut);
    auto of = arc_outflows(full), op = arc_outflows(part);
    const double later = h + net.min_t_min();
    double d = 0.0;
    for (std::size_t r = 0; r < net.routes().size(); ++r) {
        const auto& arcs = net.route(r).arcs;
        for (std::size_t i = 0; i < arcs.size(); ++i) {
            const std::size_t a = arcs[i];
            const double upto = i == 0 ? h : later;
            d = std::max(d, linf_distance(restrict(full.inflow[a][r], upto), restrict(part.inflow[a][r], upto)));
            d = std::max(d, linf_distance(restrict(of[a][r], later), restrict(op[a][r], later)));
        }
    }
    return d;
}

/// Latest departure time carried by the pattern.
inline double departure_end(const RouteFlowPattern& x) {
    double end = 0.0;
    for (const auto& f : x.flows)
        if (!f.is_zero()) end = std::max(end, f.support_end());
    return end;
}

}  // namespace dyneq::properties
