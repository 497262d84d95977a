#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dyneq/arc_models.hpp"
#include "dyneq/errors.hpp"
#include "dyneq/exit_time_curve.hpp"
#include "dyneq/flow_measures.hpp"

namespace dyneq {

struct Arc {
    std::string id;
    std::string tail;
    std::string head;
    ArcModelPtr model;
};

/// A simple directed path through the network. Origin and destination are
/// the tail of the first arc and the head of the last.
struct Route {
    std::string id;
    std::vector<std::size_t> arcs;
    std::string origin;
    std::string destination;
};

class Network {
public:
    void add_node(const std::string& id) {
        if (id.empty()) throw ValidationError("empty node id");
        if (node_set_.insert(id).second) nodes_.push_back(id);
    }

    std::size_t add_arc(const std::string& id, const std::string& tail, const std::string& head, ArcModelPtr model) {
        if (arc_index_.count(id)) throw ValidationError("duplicate arc '" + id + "'");
        if (!node_set_.count(tail)) throw ValidationError("unknown node '" + tail + "'");
        if (!node_set_.count(head)) throw ValidationError("unknown node '" + head + "'");
        if (!model) throw ValidationError("arc '" + id + "' has no model");
        arc_index_[id] = arcs_.size();
        arcs_.push_back({id, tail, head, std::move(model)});
        return arcs_.size() - 1;
    }

    std::size_t add_route(const std::string& id, const std::vector<std::string>& arc_ids) {
        if (route_index_.count(id)) throw ValidationError("duplicate route '" + id + "'");
        if (arc_ids.empty()) throw ValidationError("route '" + id + "' has no arcs");
        Route r{id, {}, {}, {}};
        std::set<std::size_t> seen;
        for (const auto& a : arc_ids) {
            auto it = arc_index_.find(a);
            if (it == arc_index_.end()) throw ValidationError("unknown arc '" + a + "' in route '" + id + "'");
            if (!seen.insert(it->second).second)
                throw ValidationError("route '" + id + "' repeats arc '" + a + "' (routes must be simple paths)");
            if (!r.arcs.empty() && arcs_[r.arcs.back()].head != arcs_[it->second].tail)
                throw ValidationError("route '" + id + "' is not connected at arc '" + a + "'");
            r.arcs.push_back(it->second);
        }
        r.origin = arcs_[r.arcs.front()].tail;
        r.destination = arcs_[r.arcs.back()].head;
        route_index_[id] = routes_.size();
        routes_.push_back(std::move(r));
        return routes_.size() - 1;
    }

    const std::vector<std::string>& nodes() const { return nodes_; }
    const std::vector<Arc>& arcs() const { return arcs_; }
    const std::vector<Route>& routes() const { return routes_; }
    const Arc& arc(std::size_t i) const { return arcs_.at(i); }
    const Route& route(std::size_t i) const { return routes_.at(i); }
    bool has_node(const std::string& id) const { return node_set_.count(id) > 0; }

    std::size_t arc_index(const std::string& id) const {
        auto it = arc_index_.find(id);
        if (it == arc_index_.end()) throw ValidationError("unknown arc '" + id + "'");
        return it->second;
    }

    std::size_t route_index(const std::string& id) const {
        auto it = route_index_.find(id);
        if (it == route_index_.end()) throw ValidationError("unknown route '" + id + "'");
        return it->second;
    }

    /// Route indices connecting origin to destination, in insertion order.
    std::vector<std::size_t> routes_between(const std::string& origin, const std::string& destination) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < routes_.size(); ++i)
            if (routes_[i].origin == origin && routes_[i].destination == destination) out.push_back(i);
        return out;
    }

    /// Distinct (origin, destination) pairs served by routes, in first-seen order.
    std::vector<std::pair<std::string, std::string>> od_pairs() const {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& r : routes_) {
            std::pair<std::string, std::string> od{r.origin, r.destination};
            if (std::find(out.begin(), out.end(), od) == out.end()) out.push_back(od);
        }
        return out;
    }

    /// Smallest t_min over all arcs (t_min*).
    double min_t_min() const {
        double m = std::numeric_limits<double>::infinity();
        for (const auto& a : arcs_) m = std::min(m, a.model->t_min());
        return m;
    }

    std::size_t max_route_length() const {
        std::size_t n = 0;
        for (const auto& r : routes_) n = std::max(n, r.arcs.size());
        return n;
    }

private:
    std::vector<std::string> nodes_;
    std::set<std::string> node_set_;
    std::vector<Arc> arcs_;
    std::vector<Route> routes_;
    std::unordered_map<std::string, std::size_t> arc_index_;
    std::unordered_map<std::string, std::size_t> route_index_;
};

/// Route inflows X_r, indexed like Network::routes().
struct RouteFlowPattern {
    std::vector<CumulativeFlow> flows;

    double total() const {
        double t = 0.0;
        for (const auto& f : flows) t += f.total();
        return t;
    }
};

/// Per-arc, per-route inflows Y_a^r with their totals Y_a and the exit curves
/// H_a(Y_a) they induce.
struct ArcFlowBundle {
    std::vector<std::vector<CumulativeFlow>> inflow;  // [arc][route]
    std::vector<CumulativeFlow> total;                // [arc]
    std::vector<ExitTimeCurve> exit_curves;           // [arc], empty for grid bundles
    std::size_t frontier_steps = 0;

    const CumulativeFlow& route_inflow(std::size_t arc, std::size_t route) const { return inflow.at(arc).at(route); }
};

/// Flowing function of one arc: each route's inflow pushed through the exit
/// curve of the arc's total inflow.
inline std::vector<CumulativeFlow> flowing(const ArcModel& arc, std::span<const CumulativeFlow> route_inflows) {
    const ExitTimeCurve h = arc.exit_curve(sum(route_inflows));
    std::vector<CumulativeFlow> out;
    out.reserve(route_inflows.size());
    for (const auto& y : route_inflows) out.push_back(pushforward(y, h));
    return out;
}

struct LoadOptions {
    /// Frontier step as a fraction of t_min*.
    double frontier_fraction = 1.0;
};

namespace detail {

inline void refresh_totals(ArcFlowBundle& b) {
    for (std::size_t a = 0; a < b.inflow.size(); ++a) b.total[a] = sum(b.inflow[a]);
}

inline bool mass_complete(double got, double want) {
    return std::abs(got - want) <= 1e-12 * std::max(1.0, want);
}

}  // namespace detail

/**
 * Unique outflow of the route inflows X.
 *
 * Propagates flow in blocks: at frontier T = k * step, first arcs receive
 * X_r restricted to T and every downstream arc receives the previous block's
 * upstream flow pushed through its exit curve, again restricted to T. Because
 * no arc is faster than t_min*, a block never needs information from beyond
 * its own frontier. Stops when every route's flow has reached its last arc in
 * full; throws NonTermination past the finiteness budget.
 */
inline ArcFlowBundle load(const Network& net, const RouteFlowPattern& x, LoadOptions opts = {}) {
    const std::size_t n_arcs = net.arcs().size();
    const std::size_t n_routes = net.routes().size();
    if (x.flows.size() != n_routes) throw ValidationError("route flow pattern does not match the route table");
    if (!(opts.frontier_fraction > 0.0 && opts.frontier_fraction <= 1.0))
        throw ValidationError("frontier fraction must lie in (0, 1]");

    double depart_end = 0.0;
    for (const auto& f : x.flows) {
        if (f.support_begin() < -kMergeTolerance) throw ValidationError("route flows must start at time >= 0");
        if (!f.is_zero()) depart_end = std::max(depart_end, f.knots().back().time);
    }

    const double step = net.min_t_min() * opts.frontier_fraction;
    const double mass = x.total();
    double tau = 0.0;
    for (const auto& a : net.arcs()) tau = std::max(tau, a.model->t_max(mass));
    double length_sum = 0.0;
    for (const auto& r : net.routes()) length_sum += static_cast<double>(r.arcs.size());
    const double budget = depart_end + length_sum * tau + 1.0;

    ArcFlowBundle cur;
    cur.inflow.assign(n_arcs, std::vector<CumulativeFlow>(n_routes));
    cur.total.assign(n_arcs, CumulativeFlow{});

    std::vector<ExitTimeCurve> curves(n_arcs);
    for (std::size_t k = 1;; ++k) {
        const double frontier = static_cast<double>(k) * step;
        for (std::size_t a = 0; a < n_arcs; ++a) curves[a] = net.arc(a).model->exit_curve(cur.total[a]);

        ArcFlowBundle next;
        next.inflow.assign(n_arcs, std::vector<CumulativeFlow>(n_routes));
        next.total.assign(n_arcs, CumulativeFlow{});
        bool settled = true;
        for (std::size_t r = 0; r < n_routes; ++r) {
            const Route& route = net.route(r);
            const CumulativeFlow& xr = x.flows[r];
            if (xr.is_zero()) continue;
            next.inflow[route.arcs[0]][r] = restrict(xr, frontier);
            if (xr.support_end() > frontier) settled = false;
            for (std::size_t i = 1; i < route.arcs.size(); ++i) {
                const std::size_t up = route.arcs[i - 1];
                CumulativeFlow moved = pushforward(cur.inflow[up][r], curves[up]);
                if (moved.support_end() > frontier || !detail::mass_complete(moved.total(), xr.total()))
                    settled = false;
                next.inflow[route.arcs[i]][r] = restrict(moved, frontier);
            }
        }
        detail::refresh_totals(next);
        next.frontier_steps = k;
        cur = std::move(next);
        if (settled) break;
        if (frontier > budget)
            throw NonTermination("network loading exceeded its finiteness budget at t = " + std::to_string(frontier));
    }
    cur.exit_curves.resize(n_arcs);
    for (std::size_t a = 0; a < n_arcs; ++a) cur.exit_curves[a] = net.arc(a).model->exit_curve(cur.total[a]);
    return cur;
}

/// Mass leaving the last arc of route r.
inline CumulativeFlow route_outflow(const Network& net, const ArcFlowBundle& b, std::size_t r) {
    const std::size_t last = net.route(r).arcs.back();
    return pushforward(b.inflow[last][r], b.exit_curves[last]);
}

/// Arc-by-arc recursion: h_1 = h, h_{i+1} = h_i + t_{a_i}(h_i); returns the sum of arc times.
inline double route_time_recursive(const Network& net, const ArcFlowBundle& b, std::size_t r, double h) {
    double clock = h, total = 0.0;
    for (std::size_t a : net.route(r).arcs) {
        double t = b.exit_curves[a].travel_time(clock);
        total += t;
        clock += t;
    }
    return total;
}

/// Composition of exit curves minus the departure time.
inline double route_time_composed(const Network& net, const ArcFlowBundle& b, std::size_t r, double h) {
    double clock = h;
    for (std::size_t a : net.route(r).arcs) clock = b.exit_curves[a].at(clock);
    return clock - h;
}

/// h -> t_r(h) on the horizon, stored as a piecewise-linear interpolant.
struct TravelTimeCurve {
    std::vector<double> departures;
    std::vector<double> times;

    double at(double h) const {
        if (departures.empty()) return 0.0;
        if (h <= departures.front()) return times.front();
        if (h >= departures.back()) return times.back();
        auto it = std::upper_bound(departures.begin(), departures.end(), h);
        std::size_t j = static_cast<std::size_t>(it - departures.begin());
        double h0 = departures[j - 1], h1 = departures[j];
        return times[j - 1] + (times[j] - times[j - 1]) * (h - h0) / (h1 - h0);
    }
};

struct TravelTimePattern {
    double horizon = 0.0;
    std::vector<TravelTimeCurve> routes;

    double at(std::size_t r, double h) const { return routes.at(r).at(h); }
};

/**
 * Travel-time functions t_r on [0, H]. Departures are sampled at every point
 * where the composed exit curves can kink (knots of each arc's curve pulled
 * back to the route entry) plus a uniform grid, so the interpolant is exact
 * for continuous monotone curves.
 */
inline TravelTimePattern route_times(const Network& net, const ArcFlowBundle& b, Horizon horizon,
                                     std::size_t grid_points = 256) {
    TravelTimePattern out;
    out.horizon = horizon.end;
    for (std::size_t r = 0; r < net.routes().size(); ++r) {
        const auto& arcs = net.route(r).arcs;
        const std::size_t n = arcs.size();

        // Entry-time window of each arc along the route.
        std::vector<std::pair<double, double>> window(n);
        double lo = 0.0, hi = horizon.end;
        for (std::size_t i = 0; i < n; ++i) {
            window[i] = {lo, hi};
            lo = b.exit_curves[arcs[i]].at(lo);
            hi = b.exit_curves[arcs[i]].at(hi);
        }

        std::vector<double> level;
        for (std::size_t i = n; i-- > 0;) {
            const ExitTimeCurve& h = b.exit_curves[arcs[i]];
            std::vector<double> pulled;
            if (h.is_nondecreasing())
                for (double s : level) pulled.push_back(h.preimage(s));
            for (const auto& k : h.knots()) pulled.push_back(k.entry);
            level.clear();
            for (double t : pulled)
                if (std::isfinite(t) && t >= window[i].first && t <= window[i].second) level.push_back(t);
        }
        for (std::size_t g = 0; g <= grid_points; ++g)
            level.push_back(horizon.end * static_cast<double>(g) / static_cast<double>(grid_points));
        std::sort(level.begin(), level.end());
        TravelTimeCurve curve;
        for (double h : level) {
            if (!curve.departures.empty() && h - curve.departures.back() <= 1e-12) continue;
            curve.departures.push_back(h);
            curve.times.push_back(route_time_composed(net, b, r, h));
        }
        out.routes.push_back(std::move(curve));
    }
    return out;
}

}  // namespace dyneq
