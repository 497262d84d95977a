#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/tools/toms748_solve.hpp>

#include "dyneq/errors.hpp"
#include "dyneq/flow_measures.hpp"
#include "dyneq/network_loading.hpp"

namespace dyneq {

/// Departure-rate curve q_od of one origin-destination pair.
struct OdDemand {
    std::string origin;
    std::string destination;
    CumulativeFlow departures;
};

struct DemandTable {
    Horizon horizon;
    std::vector<OdDemand> ods;

    double total() const {
        double n = 0.0;
        for (const auto& od : ods) n += od.departures.total();
        return n;
    }
};

enum class ChoiceMode { fixed_departure, departure_choice };

/// Scheduling utility u(r, h) = -alpha t - beta (early) - gamma (late).
struct ScheduleUtility {
    double alpha = 1.0;
    double beta = 0.0;
    double gamma = 0.0;
    double preferred_arrival = 0.0;

    double operator()(double departure, double travel) const {
        double arrival = departure + travel;
        return -alpha * travel - beta * std::max(0.0, preferred_arrival - arrival) -
               gamma * std::max(0.0, arrival - preferred_arrival);
    }
};

struct UserClass {
    std::string id;
    std::string origin;
    std::string destination;
    ChoiceMode mode = ChoiceMode::departure_choice;
    double mass = 0.0;
    ScheduleUtility utility;
    /// Departure density of fixed-departure classes; ignored otherwise.
    CumulativeFlow departures;
};

enum class StepRule { msa, fixed };

/// How solve_departure_choice searches: successive averaging, or filling bins in time order to a common utility level.
enum class DepartureMethod { averaging, forward_fill };

struct SolverConfig {
    /// Width of a departure-time bin; 0 selects horizon / 64.
    double bin_width = 0.0;
    std::size_t max_iterations = 200;
    double gap_tolerance = 1e-3;
    StepRule step_rule = StepRule::msa;
    double fixed_step = 0.1;
    double tie_tolerance = 1e-12;
    std::size_t route_time_grid = 256;
    DepartureMethod departure_method = DepartureMethod::averaging;
};

/// One route-and-bin option of a choice group.
struct Alternative {
    std::size_t route = 0;
    std::size_t bin = 0;
};

/**
 * A block of users sharing one probability vector. Wardrop groups are one
 * (od, departure bin) pair choosing among routes; a departure-choice class is
 * one group choosing among (route, bin) pairs.
 */
struct ChoiceGroup {
    std::string label;
    std::size_t source = 0;   // od row or class index
    std::optional<std::size_t> shape;  // index into EquilibriumState::shapes; empty = uniform in the bin
    double mass = 0.0;
    ScheduleUtility utility;
    std::vector<Alternative> alternatives;
    std::vector<double> probabilities;
};

struct EquilibriumState {
    Horizon horizon;
    double bin_width = 0.0;
    std::size_t bins = 0;
    std::vector<CumulativeFlow> shapes;
    std::vector<ChoiceGroup> groups;

    RouteFlowPattern flows;
    TravelTimePattern times;
    std::vector<std::pair<std::size_t, double>> gap_trace;
    /// Worst relative margin error of the induced flows, one entry per iteration.
    std::vector<double> margin_trace;
    double gap = std::numeric_limits<double>::infinity();
    std::size_t iterations = 0;
    std::size_t best_iteration = 0;
    bool converged = false;
    std::vector<std::string> warnings;

    double bin_begin(std::size_t b) const { return static_cast<double>(b) * bin_width; }
    double bin_end(std::size_t b) const { return b + 1 == bins ? horizon.end : static_cast<double>(b + 1) * bin_width; }
};

namespace detail {

inline std::size_t bin_count(Horizon horizon, double width) {
    if (!(width > 0.0)) throw ValidationError("bin width must be positive");
    double n = std::round(horizon.end / width);
    if (n < 1.0 || std::abs(n * width - horizon.end) > 1e-9 * horizon.end)
        throw ValidationError("bin width must divide the horizon");
    return static_cast<std::size_t>(n);
}

inline void validate_departures(const CumulativeFlow& q, Horizon horizon, const std::string& what) {
    if (q.has_atoms()) throw ValidationError(what + " must be atom-free");
    if (q.is_zero()) return;
    if (q.support_begin() < -kMergeTolerance || q.support_end() > horizon.end + kMergeTolerance)
        throw ValidationError(what + " must be supported in the horizon");
}

/// Breakpoints of the interval [lo, hi] induced by a travel-time curve and an optional weight.
inline std::vector<double> pieces(const TravelTimeCurve& t, const CumulativeFlow* weight, double lo, double hi) {
    std::vector<double> cuts{lo, hi};
    auto first = std::upper_bound(t.departures.begin(), t.departures.end(), lo);
    for (auto it = first; it != t.departures.end() && *it < hi; ++it) cuts.push_back(*it);
    if (weight)
        for (const auto& k : weight->knots())
            if (k.time > lo && k.time < hi) cuts.push_back(k.time);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    return cuts;
}

/// (integral of w(h) u(h, t(h)) over [lo, hi], integral of w) with w the weight's density or 1.
inline std::pair<double, double> integrate_utility(const TravelTimeCurve& t, const CumulativeFlow* weight, double lo,
                                                   double hi, const ScheduleUtility& u) {
    double acc = 0.0, mass = 0.0;
    const auto cuts = pieces(t, weight, lo, hi);
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        double a = cuts[i], b = cuts[i + 1];
        double w = weight ? weight->rate_at(a) : 1.0;
        if (w == 0.0) continue;
        double ta = t.at(a), tb = t.at(b);
        double ea = a + ta - u.preferred_arrival, eb = b + tb - u.preferred_arrival;
        double mid = b;
        if ((ea < 0.0 && eb > 0.0) || (ea > 0.0 && eb < 0.0)) mid = a + (b - a) * ea / (ea - eb);
        auto seg = [&](double x0, double x1) {
            if (x1 <= x0) return;
            double t0 = ta + (tb - ta) * (x0 - a) / (b - a);
            double t1 = ta + (tb - ta) * (x1 - a) / (b - a);
            acc += w * 0.5 * (u(x0, t0) + u(x1, t1)) * (x1 - x0);
        };
        seg(a, mid);
        seg(mid, b);
        mass += w * (b - a);
    }
    return {acc, mass};
}

/// Mean of u over the alternative's bin, weighted by the group's departure shape.
inline double alternative_utility(const EquilibriumState& s, const ChoiceGroup& g, const Alternative& alt) {
    const TravelTimeCurve& t = s.times.routes.at(alt.route);
    const double lo = s.bin_begin(alt.bin), hi = s.bin_end(alt.bin);
    const CumulativeFlow* w = g.shape ? &s.shapes[*g.shape] : nullptr;
    auto [acc, mass] = integrate_utility(t, w, lo, hi, g.utility);
    if (mass <= 0.0) std::tie(acc, mass) = integrate_utility(t, nullptr, lo, hi, g.utility);
    return acc / mass;
}

inline std::size_t best_alternative(const std::vector<double>& utilities, double tie_tolerance) {
    double best = *std::max_element(utilities.begin(), utilities.end());
    for (std::size_t i = 0; i < utilities.size(); ++i)
        if (utilities[i] >= best - tie_tolerance) return i;
    return 0;
}

inline void normalize(std::vector<double>& p) {
    double total = 0.0;
    for (double& v : p) {
        v = std::max(v, 0.0);
        total += v;
    }
    for (double& v : p) v /= total;
}

}  // namespace detail

/**
 * Route flows induced by the splits: X_r collects, bin by bin, each group's
 * share p times its departure shape (or uniform mass, for groups that choose
 * their bin).
 */
inline RouteFlowPattern induced_flows(const EquilibriumState& state, const Network& network) {
    const std::size_t n_routes = network.routes().size();
    struct BinLoad {
        std::map<std::size_t, double> shaped;  // shape index -> coefficient
        double uniform_mass = 0.0;
    };
    std::vector<std::vector<BinLoad>> loads(n_routes, std::vector<BinLoad>(state.bins));
    for (const auto& g : state.groups) {
        for (std::size_t i = 0; i < g.alternatives.size(); ++i) {
            const double p = g.probabilities[i];
            if (p <= 0.0) continue;
            BinLoad& l = loads.at(g.alternatives[i].route).at(g.alternatives[i].bin);
            if (g.shape)
                l.shaped[*g.shape] += p;
            else
                l.uniform_mass += p * g.mass;
        }
    }

    RouteFlowPattern out;
    out.flows.resize(n_routes);
    for (std::size_t r = 0; r < n_routes; ++r) {
        FlowBuilder builder;
        for (std::size_t b = 0; b < state.bins; ++b) {
            const BinLoad& l = loads[r][b];
            if (l.shaped.empty() && l.uniform_mass <= 0.0) continue;
            const double lo = state.bin_begin(b), hi = state.bin_end(b);
            std::vector<double> cuts{lo, hi};
            for (const auto& [shape, coeff] : l.shaped)
                for (const auto& k : state.shapes[shape].knots())
                    if (k.time > lo && k.time < hi) cuts.push_back(k.time);
            std::sort(cuts.begin(), cuts.end());
            cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
            for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
                double a = cuts[i], c = cuts[i + 1];
                double mass = l.uniform_mass * (c - a) / (hi - lo);
                for (const auto& [shape, coeff] : l.shaped) mass += coeff * measure_of(state.shapes[shape], a, c);
                builder.add_uniform(a, c, mass);
            }
        }
        out.flows[r] = std::move(builder).build();
    }
    return out;
}

/// Overload matching the demand-table call shape; the demand curves are the state's shapes.
inline RouteFlowPattern induced_flows(const EquilibriumState& state, const DemandTable& demand,
                                      const Network& network) {
    if (state.shapes.size() < demand.ods.size()) throw ValidationError("state does not match the demand table");
    return induced_flows(state, network);
}

/**
 * Relative Wardrop gap: mass-weighted excess travel time over the best route
 * of the same od, divided by the total mass-weighted travel time. Exact for
 * piecewise-linear travel times and piecewise-constant route flows.
 */
inline double wardrop_gap(const Network& network, const RouteFlowPattern& x, const TravelTimePattern& times) {
    double excess = 0.0, spent = 0.0;
    for (const auto& [origin, destination] : network.od_pairs()) {
        const auto routes = network.routes_between(origin, destination);
        std::vector<double> cuts;
        for (std::size_t r : routes) {
            for (double h : times.routes[r].departures) cuts.push_back(h);
            for (const auto& k : x.flows[r].knots()) cuts.push_back(k.time);
        }
        std::sort(cuts.begin(), cuts.end());
        cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

        auto best_at = [&](double h) {
            double m = std::numeric_limits<double>::infinity();
            for (std::size_t r : routes) m = std::min(m, times.at(r, h));
            return m;
        };
        for (std::size_t i = 0; i < cuts.size(); ++i) {
            const double a = cuts[i];
            for (std::size_t r : routes) {
                double atom = x.flows[r].atom_at(a);
                if (atom > 0.0) {
                    excess += atom * (times.at(r, a) - best_at(a));
                    spent += atom * times.at(r, a);
                }
            }
            if (i + 1 == cuts.size()) break;
            const double b = cuts[i + 1];
            // Every t_r is linear on [a, b]; split where two of them cross.
            std::vector<double> sub{a, b};
            for (std::size_t p = 0; p < routes.size(); ++p)
                for (std::size_t q = p + 1; q < routes.size(); ++q) {
                    double da = times.at(routes[p], a) - times.at(routes[q], a);
                    double db = times.at(routes[p], b) - times.at(routes[q], b);
                    if ((da < 0.0 && db > 0.0) || (da > 0.0 && db < 0.0)) sub.push_back(a + (b - a) * da / (da - db));
                }
            std::sort(sub.begin(), sub.end());
            for (std::size_t j = 0; j + 1 < sub.size(); ++j) {
                double s0 = sub[j], s1 = sub[j + 1];
                if (s1 <= s0) continue;
                double m0 = best_at(s0), m1 = best_at(s1);
                for (std::size_t r : routes) {
                    double rate = x.flows[r].rate_at(a);
                    if (rate <= 0.0) continue;
                    double t0 = times.at(r, s0), t1 = times.at(r, s1);
                    excess += rate * 0.5 * ((t0 - m0) + (t1 - m1)) * (s1 - s0);
                    spent += rate * 0.5 * (t0 + t1) * (s1 - s0);
                }
            }
        }
    }
    if (!(spent > 0.0)) throw DegenerateDemand("gap is undefined for zero demand");
    return std::clamp(excess / spent, 0.0, 1.0);
}

/// Normalized utility regret of the current splits against the state's travel times.
inline double utility_regret(const EquilibriumState& state) {
    double mass = 0.0, lost = 0.0, scale = 0.0;
    for (const auto& g : state.groups) {
        std::vector<double> u;
        for (const auto& alt : g.alternatives) u.push_back(detail::alternative_utility(state, g, alt));
        double best = *std::max_element(u.begin(), u.end());
        double achieved = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) achieved += g.probabilities[i] * u[i];
        mass += g.mass;
        lost += g.mass * std::max(0.0, best - achieved);
        scale += g.mass * std::abs(best);
    }
    if (!(mass > 0.0)) throw DegenerateDemand("regret is undefined for zero demand");
    return (lost / mass) / (scale / mass + 1.0);
}

namespace detail {

enum class GapKind { wardrop, regret };

/// Worst relative gap between each shaped group's bin mass and what its routes carry.
inline double margin_error(const EquilibriumState& s, const Network& network) {
    double worst = 0.0;
    for (const auto& g : s.groups) {
        if (!g.shape || g.alternatives.empty()) continue;
        const Route& first = network.route(g.alternatives.front().route);
        const std::size_t b = g.alternatives.front().bin;
        const double lo = s.bin_begin(b), hi = s.bin_end(b);
        double carried = 0.0;
        for (std::size_t r : network.routes_between(first.origin, first.destination))
            carried += measure_of(s.flows.flows[r], lo, hi);
        double demand = 0.0;
        for (const auto& h : s.groups)
            if (h.shape && h.alternatives.front().bin == b &&
                network.route(h.alternatives.front().route).origin == first.origin &&
                network.route(h.alternatives.front().route).destination == first.destination)
                demand += measure_of(s.shapes[*h.shape], lo, hi);
        worst = std::max(worst, std::abs(carried - demand) / std::max(demand, std::numeric_limits<double>::min()));
    }
    return worst;
}

/// Fixed-point iteration shared by both solvers.
inline EquilibriumState iterate(const Network& network, EquilibriumState state, const SolverConfig& config,
                                GapKind kind) {
    if (!(config.gap_tolerance > 0.0)) throw ValidationError("gap tolerance must be positive");
    if (config.max_iterations < 1) throw ValidationError("at least one iteration is required");
    if (config.step_rule == StepRule::fixed && !(config.fixed_step > 0.0 && config.fixed_step <= 1.0))
        throw ValidationError("fixed step must lie in (0, 1]");

    EquilibriumState best;
    bool have_best = false;

    for (std::size_t n = 1; n <= config.max_iterations; ++n) {
        state.flows = induced_flows(state, network);
        state.margin_trace.push_back(margin_error(state, network));
        ArcFlowBundle bundle = load(network, state.flows);
        state.times = route_times(network, bundle, state.horizon, config.route_time_grid);
        double gap = kind == GapKind::wardrop ? wardrop_gap(network, state.flows, state.times) : utility_regret(state);
        state.gap_trace.emplace_back(n, gap);
        state.iterations = n;
        if (!have_best || gap < best.gap) {
            state.gap = gap;
            state.best_iteration = n;
            best = state;
            have_best = true;
        }
        if (gap <= config.gap_tolerance) break;
        if (n == config.max_iterations) break;

        const double step =
            config.step_rule == StepRule::msa ? 1.0 / static_cast<double>(n + 1) : config.fixed_step;
        for (auto& g : state.groups) {
            std::vector<double> u;
            u.reserve(g.alternatives.size());
            for (const auto& alt : g.alternatives) u.push_back(alternative_utility(state, g, alt));
            const std::size_t target = best_alternative(u, config.tie_tolerance);
            for (std::size_t i = 0; i < g.probabilities.size(); ++i)
                g.probabilities[i] += step * ((i == target ? 1.0 : 0.0) - g.probabilities[i]);
            normalize(g.probabilities);
        }
    }
    best.gap_trace = state.gap_trace;
    best.margin_trace = state.margin_trace;
    best.iterations = state.iterations;
    best.converged = best.gap <= config.gap_tolerance;
    return best;
}

/**
 * Departure-choice search by forward substitution. For a utility level per
 * class, bins are visited in time order and each alternative receives the
 * mass that brings its utility down to the level (none if it is already
 * below). A bin's utility depends only on departures up to its end, so one
 * pass yields a state in which every used alternative attains the level and
 * every unused one falls short of it. The level is then root-found so that
 * each class places exactly its mass. Every pass counts as one iteration.
 */
inline EquilibriumState forward_fill(const Network& network, EquilibriumState state, const SolverConfig& config) {
    if (!(config.gap_tolerance > 0.0)) throw ValidationError("gap tolerance must be positive");
    if (config.max_iterations < 1) throw ValidationError("at least one iteration is required");
    for (const auto& g : state.groups)
        if (g.shape) throw ValidationError("forward fill supports departure-choice classes only");

    const std::size_t n_groups = state.groups.size();
    // Alternatives of each group indexed by bin.
    std::vector<std::vector<std::vector<std::size_t>>> by_bin(n_groups, std::vector<std::vector<std::size_t>>(state.bins));
    for (std::size_t g = 0; g < n_groups; ++g)
        for (std::size_t i = 0; i < state.groups[g].alternatives.size(); ++i)
            by_bin[g][state.groups[g].alternatives[i].bin].push_back(i);

    std::vector<std::vector<double>> masses(n_groups);
    auto install = [&](const std::vector<std::vector<double>>& m) {
        for (std::size_t g = 0; g < n_groups; ++g)
            for (std::size_t i = 0; i < m[g].size(); ++i) state.groups[g].probabilities[i] = m[g][i] / state.groups[g].mass;
    };
    auto evaluate = [&]() {
        state.flows = induced_flows(state, network);
        state.times = route_times(network, load(network, state.flows), state.horizon, config.route_time_grid);
    };
    auto utility = [&](std::size_t g, std::size_t i) {
        return alternative_utility(state, state.groups[g], state.groups[g].alternatives[i]);
    };

    // Mass placed by each group when filling to `levels`.
    struct Pinned {
        std::size_t group = 0, alternative = 0;
        double mass = 0.0;
    };
    auto fill = [&](const std::vector<double>& levels, std::optional<Pinned> pin = std::nullopt) {
        for (std::size_t g = 0; g < n_groups; ++g) masses[g].assign(state.groups[g].alternatives.size(), 0.0);
        std::vector<double> placed(n_groups, 0.0);
        for (std::size_t b = 0; b < state.bins; ++b) {
            std::size_t in_bin = 0;
            for (std::size_t g = 0; g < n_groups; ++g) in_bin += by_bin[g][b].size();
            const std::size_t rounds = in_bin > 1 ? 4 : 1;
            for (std::size_t round = 0; round < rounds; ++round) {
                for (std::size_t g = 0; g < n_groups; ++g) {
                    // Overshooting the class mass is allowed so that too low a level reads as surplus.
                    const double cap = 2.0 * state.groups[g].mass;
                    for (std::size_t i : by_bin[g][b]) {
                        if (placed[g] - masses[g][i] > state.groups[g].mass) continue;
                        auto excess = [&](double m) {
                            masses[g][i] = m;
                            install(masses);
                            evaluate();
                            return utility(g, i) - levels[g];
                        };
                        double previous = masses[g][i];
                        double chosen = 0.0;
                        if (pin && pin->group == g && pin->alternative == i) {
                            chosen = pin->mass;
                        } else if (double f0 = excess(0.0); f0 > 0.0) {
                            double f1 = excess(cap);
                            if (f1 >= 0.0) {
                                chosen = cap;
                            } else {
                                std::uintmax_t budget = 100;
                                auto [lo, hi] = boost::math::tools::toms748_solve(
                                    excess, 0.0, cap, f0, f1, boost::math::tools::eps_tolerance<double>(45), budget);
                                chosen = 0.5 * (lo + hi);
                            }
                        }
                        masses[g][i] = chosen;
                        placed[g] += chosen - previous;
                    }
                }
            }
        }
        return placed;
    };

    EquilibriumState best;
    bool have_best = false;
    std::size_t passes = 0;
    bool done = false;
    std::vector<std::pair<std::size_t, double>> trace;

    // Records the state at `levels`, rescaled to the exact class masses.
    auto record = [&](const std::vector<double>& placed) {
        for (std::size_t g = 0; g < n_groups; ++g) {
            double scale = placed[g] > 0.0 ? state.groups[g].mass / placed[g] : 0.0;
            for (double& m : masses[g]) m *= scale;
            if (!(placed[g] > 0.0)) {
                auto& p = state.groups[g].probabilities;
                std::fill(p.begin(), p.end(), 0.0);
                for (std::size_t i = 0; i < masses[g].size(); ++i) masses[g][i] = 0.0;
                masses[g][0] = state.groups[g].mass;
            }
        }
        install(masses);
        evaluate();
        const double gap = utility_regret(state);
        ++passes;
        trace.emplace_back(passes, gap);
        state.iterations = passes;
        if (!have_best || gap < best.gap) {
            state.gap = gap;
            state.best_iteration = passes;
            best = state;
            have_best = true;
        }
        if (gap <= config.gap_tolerance || passes >= config.max_iterations) done = true;
    };

    // Upper level: the best free-flow utility, at which nothing is placed.
    for (auto& g : state.groups) std::fill(g.probabilities.begin(), g.probabilities.end(), 0.0);
    evaluate();
    std::vector<double> levels(n_groups);
    for (std::size_t g = 0; g < n_groups; ++g) {
        double top = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < state.groups[g].alternatives.size(); ++i) top = std::max(top, utility(g, i));
        levels[g] = top;
    }

    for (std::size_t sweep = 0; !done; ++sweep) {
        for (std::size_t g = 0; g < n_groups && !done; ++g) {
            const double mass = state.groups[g].mass;
            // Fills on either side of the target mass, kept for the final blend.
            std::vector<std::vector<double>> surplus_fill, deficit_fill;
            double surplus = 0.0, deficit = 0.0;
            auto shortfall = [&](double level) {
                levels[g] = level;
                auto placed = fill(levels);
                if (placed[g] >= mass) {
                    surplus_fill = masses;
                    surplus = placed[g];
                } else {
                    deficit_fill = masses;
                    deficit = placed[g];
                }
                record(placed);
                return placed[g] - mass;
            };
            // First sweep: start above every attainable utility. Later sweeps: expand around the current level.
            double x = sweep == 0 ? levels[g] + 1e-9 * (1.0 + std::abs(levels[g])) : levels[g];
            double fx = shortfall(x);
            double lo = x, hi = x, f_lo = fx, f_hi = fx;
            const double direction = fx < 0.0 ? -1.0 : 1.0;
            for (double step = sweep == 0 ? 1.0 : 1e-3 * (1.0 + std::abs(x)); (f_lo < 0.0 || f_hi > 0.0) && !done;
                 step *= 2.0) {
                double y = x + direction * step;
                double fy = shortfall(y);
                if (direction < 0.0) {
                    hi = lo;
                    f_hi = f_lo;
                    lo = y;
                    f_lo = fy;
                } else {
                    lo = hi;
                    f_lo = f_hi;
                    hi = y;
                    f_hi = fy;
                }
            }
            if (done || f_lo == 0.0 || f_hi > 0.0) continue;
            auto tolerance = [&](double a, double b) {
                return done || std::abs(b - a) <= 1e-12 * (1.0 + std::abs(a));
            };
            std::uintmax_t budget = config.max_iterations;
            boost::math::tools::toms748_solve(shortfall, lo, hi, f_lo, f_hi, tolerance, budget);
            if (done || surplus_fill.empty() || deficit_fill.empty()) continue;

            // The placed mass jumps where a bin's utility is flat in its own mass
            // (an uncongested bin at exactly the level). Pin that bin's mass and
            // solve for it instead.
            std::optional<Pinned> pin;
            for (std::size_t b = 0; b < state.bins && !pin; ++b) {
                double widest = 1e-9 * mass;
                for (std::size_t i : by_bin[g][b]) {
                    double d = std::abs(surplus_fill[g][i] - deficit_fill[g][i]);
                    if (d > widest) {
                        widest = d;
                        pin = Pinned{g, i, 0.0};
                    }
                }
            }
            if (!pin) continue;
            const double level = levels[g];
            const double m_lo = std::min(surplus_fill[g][pin->alternative], deficit_fill[g][pin->alternative]);
            const double m_hi = std::max(surplus_fill[g][pin->alternative], deficit_fill[g][pin->alternative]);
            auto balance = [&](double m) {
                pin->mass = m;
                levels[g] = level;
                auto placed = fill(levels, pin);
                record(placed);
                return placed[g] - mass;
            };
            double b_lo = balance(m_lo);
            if (done || b_lo >= 0.0) continue;
            double b_hi = balance(m_hi);
            if (done || b_hi <= 0.0) continue;
            std::uintmax_t pin_budget = config.max_iterations;
            boost::math::tools::toms748_solve(balance, m_lo, m_hi, b_lo, b_hi, tolerance, pin_budget);
        }
        if (n_groups == 1) break;
    }

    best.gap_trace = trace;
    best.iterations = passes;
    best.converged = best.gap <= config.gap_tolerance;
    return best;
}

inline EquilibriumState empty_state(Horizon horizon, const SolverConfig& config) {
    EquilibriumState s;
    s.horizon = horizon;
    s.bin_width = config.bin_width > 0.0 ? config.bin_width : horizon.end / 64.0;
    s.bins = bin_count(horizon, s.bin_width);
    return s;
}

/// One group per nonempty bin of a fixed departure curve, choosing among routes.
inline void add_fixed_groups(EquilibriumState& s, const std::vector<std::size_t>& routes, const CumulativeFlow& q,
                             const std::string& label, std::size_t source, const ScheduleUtility& u) {
    const std::size_t shape = s.shapes.size();
    s.shapes.push_back(q);
    for (std::size_t b = 0; b < s.bins; ++b) {
        double mass = measure_of(q, s.bin_begin(b), s.bin_end(b));
        if (!(mass > 0.0)) continue;
        ChoiceGroup g;
        g.label = label;
        g.source = source;
        g.shape = shape;
        g.mass = mass;
        g.utility = u;
        for (std::size_t r : routes) g.alternatives.push_back({r, b});
        g.probabilities.assign(routes.size(), 1.0 / static_cast<double>(routes.size()));
        s.groups.push_back(std::move(g));
    }
}

}  // namespace detail

/**
 * Dynamic Wardrop equilibrium with fixed departure times by the method of
 * successive averages: all-or-nothing reassignment per (od, bin) to the
 * route with the smallest demand-weighted mean travel time. Returns the
 * lowest-gap state seen; `converged` is false if the tolerance was not met.
 */
inline EquilibriumState solve_wardrop(const Network& network, const DemandTable& demand,
                                      const SolverConfig& config = {}) {
    EquilibriumState state = detail::empty_state(demand.horizon, config);
    for (std::size_t i = 0; i < demand.ods.size(); ++i) {
        const OdDemand& od = demand.ods[i];
        const std::string label = od.origin + "->" + od.destination;
        detail::validate_departures(od.departures, demand.horizon, "demand " + label);
        auto routes = network.routes_between(od.origin, od.destination);
        if (routes.empty()) {
            if (od.departures.total() > 0.0) throw NoRoute("no route connects " + label);
            state.shapes.push_back(od.departures);
            continue;
        }
        detail::add_fixed_groups(state, routes, od.departures, label, i, ScheduleUtility{});
    }
    if (state.groups.empty()) throw DegenerateDemand("demand table carries no mass");
    return detail::iterate(network, std::move(state), config, detail::GapKind::wardrop);
}

/**
 * Joint route and departure-time equilibrium. Departure-choice classes pick a
 * (route, bin) pair, spreading their mass uniformly over the chosen bin;
 * fixed-departure classes pick routes per bin of their own departure curve.
 * The gap is the normalized utility regret.
 */
inline EquilibriumState solve_departure_choice(const Network& network, const std::vector<UserClass>& classes,
                                               Horizon horizon, const SolverConfig& config = {}) {
    if (classes.empty()) throw ValidationError("at least one user class is required");
    EquilibriumState state = detail::empty_state(horizon, config);
    for (std::size_t c = 0; c < classes.size(); ++c) {
        const UserClass& uc = classes[c];
        if (!(uc.utility.alpha > 0.0)) throw ValidationError("class '" + uc.id + "': alpha must be positive");
        if (uc.utility.beta < 0.0 || uc.utility.gamma < 0.0)
            throw ValidationError("class '" + uc.id + "': schedule weights must be nonnegative");
        auto routes = network.routes_between(uc.origin, uc.destination);
        if (routes.empty()) throw NoRoute("no route connects " + uc.origin + "->" + uc.destination);

        if (uc.mode == ChoiceMode::fixed_departure) {
            detail::validate_departures(uc.departures, horizon, "class '" + uc.id + "' departures");
            if (!(uc.departures.total() > 0.0)) throw ValidationError("class '" + uc.id + "': mass must be positive");
            detail::add_fixed_groups(state, routes, uc.departures, uc.id, c, uc.utility);
            continue;
        }
        if (!(uc.mass > 0.0)) throw ValidationError("class '" + uc.id + "': mass must be positive");
        double fastest = std::numeric_limits<double>::infinity();
        for (std::size_t r : routes) {
            double t = 0.0;
            for (std::size_t a : network.route(r).arcs) t += network.arc(a).model->t_min();
            fastest = std::min(fastest, t);
        }
        if (uc.utility.preferred_arrival < fastest || uc.utility.preferred_arrival > horizon.end)
            state.warnings.push_back("class '" + uc.id +
                                     "': preferred arrival cannot be both preceded and followed within the horizon");
        ChoiceGroup g;
        g.label = uc.id;
        g.source = c;
        g.mass = uc.mass;
        g.utility = uc.utility;
        for (std::size_t r : routes)
            for (std::size_t b = 0; b < state.bins; ++b) g.alternatives.push_back({r, b});
        g.probabilities.assign(g.alternatives.size(), 1.0 / static_cast<double>(g.alternatives.size()));
        state.groups.push_back(std::move(g));
    }
    if (config.departure_method == DepartureMethod::forward_fill)
        return detail::forward_fill(network, std::move(state), config);
    return detail::iterate(network, std::move(state), config, detail::GapKind::regret);
}

}  // namespace dyneq
