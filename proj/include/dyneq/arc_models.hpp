#pragma once

// Arc travel-time models. Each model maps the total inflow of an arc to its
// exit-time curve H(h) = h + t_a(Y)(h).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dyneq/errors.hpp"
#include "dyneq/exit_time_curve.hpp"
#include "dyneq/flow_measures.hpp"

namespace dyneq {

class ArcModel {
public:
    virtual ~ArcModel() = default;

    virtual std::string_view kind() const = 0;
    /// Lower bound on travel time, whatever the inflow.
    virtual double t_min() const = 0;
    /// Upper bound on travel time when the arc carries `mass` users in total.
    virtual double t_max(double mass) const = 0;
    virtual ExitTimeCurve exit_curve(const CumulativeFlow& inflow) const = 0;
};

using ArcModelPtr = std::shared_ptr<const ArcModel>;

inline ExitTimeCurve exit_curve(const ArcModel& model, const CumulativeFlow& inflow) {
    return model.exit_curve(inflow);
}

inline double travel_time(const ArcModel& model, const CumulativeFlow& inflow, double h) {
    return model.exit_curve(inflow).at(h) - h;
}

// ---------------------------------------------------------------------------

class ConstantArc final : public ArcModel {
public:
    explicit ConstantArc(double free_flow_time) : time_(free_flow_time) {
        if (!(free_flow_time > 0.0)) throw ModelParameterError("constant arc needs free_flow_time > 0");
    }

    std::string_view kind() const override { return "constant"; }
    double t_min() const override { return time_; }
    double t_max(double) const override { return time_; }
    double free_flow_time() const { return time_; }

    ExitTimeCurve exit_curve(const CumulativeFlow& inflow) const override {
        double anchor = inflow.knots().empty() ? 0.0 : inflow.knots().front().time;
        return ExitTimeCurve::constant_delay(time_, anchor);
    }

private:
    double time_;
};

// ---------------------------------------------------------------------------

/// Strictly increasing piecewise-linear delay D(v), extrapolated with its last slope.
class DelayFunction {
public:
    struct Point {
        double volume = 0.0;
        double time = 0.0;
    };

    DelayFunction() = default;

    explicit DelayFunction(std::vector<Point> points) : points_(std::move(points)) {
        if (points_.size() < 2) throw ModelParameterError("delay function needs at least two breakpoints");
        if (points_.front().volume != 0.0) throw ModelParameterError("delay function must start at volume 0");
        if (!(points_.front().time > 0.0)) throw ModelParameterError("delay function needs D(0) > 0");
        for (std::size_t i = 1; i < points_.size(); ++i) {
            if (!(points_[i].volume > points_[i - 1].volume))
                throw ModelParameterError("delay function volumes must be strictly increasing");
            if (!(points_[i].time > points_[i - 1].time))
                throw ModelParameterError("delay function must be strictly increasing");
        }
    }

    /// D(v) = a + b v.
    static DelayFunction affine(double free_time, double slope) {
        return DelayFunction({{0.0, free_time}, {1.0, free_time + slope}});
    }

    double operator()(double v) const {
        if (v <= 0.0) return points_.front().time;
        auto it = std::upper_bound(points_.begin(), points_.end(), v,
                                   [](double x, const Point& p) { return x < p.volume; });
        if (it == points_.end()) it = points_.end() - 1;
        const Point& a = *(it - 1);
        const Point& b = *it;
        return a.time + (b.time - a.time) * (v - a.volume) / (b.volume - a.volume);
    }

    double min_time() const { return points_.front().time; }
    std::span<const Point> points() const { return points_; }

private:
    std::vector<Point> points_;
};

/**
 * Whole-arc performance model: H(h) = h + D(V(h)) with V the volume currently
 * on the arc, V(h) = Y(]-inf,h]) - Y(H^-1(]-inf,h])).
 *
 * Solved forward in time. Exits at any time h come only from entries before
 * h - D(0), so the exit term is always known when it is needed. The curve is
 * assembled on a uniform sub-grid (default D(0)/64) augmented with every
 * point where the piecewise-linear structure changes: inflow knots, images of
 * earlier knots (kinks of the exit term) and crossings of the delay
 * function's breakpoints. Between those points V is linear, so the curve is
 * exact up to roundoff and does not depend on the sub-grid step.
 */
class ArcPerformanceArc final : public ArcModel {
public:
    explicit ArcPerformanceArc(DelayFunction delay, double step = 0.0) : delay_(std::move(delay)), step_(step) {
        if (!(delay_.min_time() > 0.0)) throw ModelParameterError("arc performance needs D(0) > 0");
        if (step_ < 0.0) throw ModelParameterError("negative solver step");
        if (step_ == 0.0) step_ = delay_.min_time() / 64.0;
    }

    std::string_view kind() const override { return "arc_performance"; }
    double t_min() const override { return delay_.min_time(); }
    double t_max(double mass) const override { return delay_(mass); }
    const DelayFunction& delay() const { return delay_; }
    double step() const { return step_; }

    ExitTimeCurve exit_curve(const CumulativeFlow& inflow) const override;

private:
    DelayFunction delay_;
    double step_;
};

inline ExitTimeCurve ArcPerformanceArc::exit_curve(const CumulativeFlow& inflow) const {
    const double d0 = delay_.min_time();
    auto yk = inflow.knots();
    if (inflow.is_zero()) return ExitTimeCurve::constant_delay(d0, yk.empty() ? 0.0 : yk.front().time);

    constexpr double tol = 1e-10;
    const double t0 = yk.front().time;
    const double total = inflow.total();

    // Exit contribution of one linear piece (or atom) of the inflow.
    struct Exit {
        double lo, hi, mass;
    };
    auto part = [](const Exit& e, double t, bool left) {
        if (e.hi <= e.lo) return (left ? e.lo < t : e.lo <= t) ? e.mass : 0.0;
        if (t <= e.lo) return 0.0;
        if (t >= e.hi) return e.mass;
        return e.mass * (t - e.lo) / (e.hi - e.lo);
    };
    std::multimap<double, Exit> pending;
    std::vector<Exit> active;
    double completed = 0.0;

    auto exited = [&](double t, bool left) {
        double o = completed;
        for (const Exit& e : active) o += part(e, t, left);
        for (auto it = pending.begin(); it != pending.end() && it->first <= t; ++it) o += part(it->second, t, left);
        return o;
    };
    auto commit = [&](double t) {
        while (!pending.empty() && pending.begin()->first <= t) {
            active.push_back(pending.begin()->second);
            pending.erase(pending.begin());
        }
        auto done = std::remove_if(active.begin(), active.end(), [&](const Exit& e) {
            if (e.hi <= t) {
                completed += e.mass;
                return true;
            }
            return false;
        });
        active.erase(done, active.end());
    };
    auto delay_at = [&](double v) { return delay_(std::max(v, 0.0)); };

    std::set<double> events;
    std::size_t yi = 0;
    std::uint64_t grid_index = 1;
    auto grid_time = [&] { return t0 + static_cast<double>(grid_index) * step_; };

    auto next_candidate = [&](double after) {
        while (!events.empty() && *events.begin() <= after + tol) events.erase(events.begin());
        while (grid_time() <= after + tol) ++grid_index;
        double m = grid_time();
        if (!events.empty()) m = std::min(m, *events.begin());
        if (yi < yk.size() && yk[yi].time <= m + tol) m = yk[yi].time;
        return m;
    };

    const double budget = yk.back().time + 4.0 * delay_(total) + 10.0 * d0 + 1.0;
    std::vector<ExitTimeCurve::Knot> knots;

    // First knot: nothing has entered before t0.
    double v_prev = inflow.at(t0);
    {
        double left = t0 + d0;
        double value = t0 + delay_at(v_prev);
        knots.push_back({t0, left, value, value, 1.0});
        double atom = inflow.at(t0);
        if (atom > 0.0) {
            pending.insert({value, {value, value, atom}});
            events.insert(value);
        }
        yi = 1;
    }

    const auto dpoints = delay_.points();
    for (;;) {
        const double p = knots.back().entry;
        double s = next_candidate(p);
        double v_left = inflow.before(s) - exited(s, true);

        // Split at the first delay breakpoint crossed strictly inside (p, s).
        double crossing = s;
        for (std::size_t k = 1; k < dpoints.size(); ++k) {
            double vk = dpoints[k].volume;
            if ((vk - v_prev) * (vk - v_left) < 0.0) {
                double c = p + (vk - v_prev) / (v_left - v_prev) * (s - p);
                if (c > p + tol && c < s - tol) crossing = std::min(crossing, c);
            }
        }
        if (crossing < s) {
            s = crossing;
            v_left = inflow.before(s) - exited(s, true);
        }

        const double v_now = inflow.at(s) - exited(s, false);
        const double left = s + delay_at(v_left);
        const double value = s + delay_at(v_now);

        ExitTimeCurve::Knot& prev = knots.back();
        prev.slope = (left - prev.value) / (s - p);

        if (inflow.rate_at(p) > 0.0) {
            double mass = inflow.before(s) - inflow.at(p);
            if (mass > 0.0) {
                double lo = std::min(prev.value, left), hi = std::max(prev.value, left);
                pending.insert({lo, {lo, hi, mass}});
                events.insert(lo);
                events.insert(hi);
            }
        }
        double atom = inflow.at(s) - inflow.before(s);
        if (atom > 0.0) {
            pending.insert({value, {value, value, atom}});
            events.insert(value);
        }
        knots.push_back({s, left, value, value, 1.0});
        commit(s);
        while (yi < yk.size() && yk[yi].time <= s + tol) ++yi;
        v_prev = v_now;

        if (yi == yk.size() && pending.empty() && active.empty()) {
            // Everyone has left; free flow from here on.
            knots.back().value = s + d0;
            knots.back().release_begin = s + d0;
            knots.back().slope = 1.0;
            break;
        }
        if (s > budget) throw NonTermination("arc performance solver did not drain the arc");
    }
    return ExitTimeCurve(std::move(knots));
}

// ---------------------------------------------------------------------------

/**
 * Point-queue bottleneck: free-flow time c, then a queue discharging at
 * capacity K. Exact on piecewise-linear inflows: the queue q is linear between
 * inflow knots and queue-clearing instants, and H(h) = h + c + q(h + c) / K.
 * An atom joins the queue at once and is released at rate K.
 */
class BottleneckArc final : public ArcModel {
public:
    BottleneckArc(double free_flow_time, double capacity) : c_(free_flow_time), k_(capacity) {
        if (!(free_flow_time > 0.0)) throw ModelParameterError("bottleneck needs free_flow_time > 0");
        if (!(capacity > 0.0)) throw ModelParameterError("bottleneck needs capacity > 0");
    }

    std::string_view kind() const override { return "bottleneck"; }
    double t_min() const override { return c_; }
    double t_max(double mass) const override { return c_ + std::max(mass, 0.0) / k_; }
    double free_flow_time() const { return c_; }
    double capacity() const { return k_; }

    ExitTimeCurve exit_curve(const CumulativeFlow& inflow) const override {
        auto yk = inflow.knots();
        if (inflow.is_zero()) return ExitTimeCurve::constant_delay(c_, yk.empty() ? 0.0 : yk.front().time);

        std::vector<ExitTimeCurve::Knot> knots;
        auto exit_at = [&](double h, double q) { return h + c_ + q / k_; };
        auto push = [&](double h, double q_left, double q_right) {
            double left = exit_at(h, q_left);
            if (!knots.empty()) {
                auto& prev = knots.back();
                left = std::max(left, prev.value);
                prev.slope = (left - prev.value) / (h - prev.entry);
            }
            knots.push_back({h, left, std::max(exit_at(h, q_right), left), left, 1.0});
        };

        double q = 0.0;  // queue just after the current knot (entry-time clock)
        for (std::size_t i = 0; i < yk.size(); ++i) {
            const auto& k = yk[i];
            double q_left = q;
            q = q_left + (k.value - k.left);
            push(k.time, q_left, q);
            if (i + 1 == yk.size()) break;
            double a = k.rate;
            double dt = yk[i + 1].time - k.time;
            const double snap = 1e-12 * (1.0 + std::abs(yk[i + 1].time));
            if (q > 0.0 && a < k_) {
                double clear = q / (k_ - a);
                if (clear <= snap) {
                    q = 0.0;
                    continue;
                }
                if (clear < dt - snap) {
                    push(k.time + clear, 0.0, 0.0);
                    q = 0.0;
                    continue;
                }
                q = clear <= dt + snap ? 0.0 : q + (a - k_) * dt;
            } else if (a > k_) {
                q += (a - k_) * dt;
            }
        }
        if (q * k_ > 1e-12 * (1.0 + std::abs(yk.back().time))) push(yk.back().time + q / k_, 0.0, 0.0);
        knots.back().slope = 1.0;
        return ExitTimeCurve(std::move(knots));
    }

private:
    double c_;
    double k_;
};

// ---------------------------------------------------------------------------

struct AssumptionCheck {
    std::string name;
    bool passed = true;
    double worst = 0.0;
    std::string detail;
};

struct ConformanceReport {
    std::string model;
    std::size_t probes = 0;
    std::vector<AssumptionCheck> checks;

    bool all_passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
    }

    const AssumptionCheck& get(std::string_view name) const {
        for (const auto& c : checks)
            if (c.name == name) return c;
        throw std::out_of_range("no assumption check named " + std::string(name));
    }
};

namespace detail {

inline CumulativeFlow random_probe(std::mt19937_64& rng, double horizon) {
    std::uniform_int_distribution<int> pieces(1, 4);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    int n = pieces(rng);
    std::vector<double> cuts;
    for (int i = 0; i < 2 * n; ++i) cuts.push_back(unit(rng) * horizon);
    std::sort(cuts.begin(), cuts.end());
    std::vector<RateSegment> segs;
    for (int i = 0; i < n; ++i) {
        double rate = unit(rng) < 0.2 ? 0.0 : 3.0 * unit(rng);
        segs.push_back({cuts[2 * i], cuts[2 * i + 1], rate});
    }
    return CumulativeFlow::piecewise_constant(segs);
}

}  // namespace detail

/**
 * Probes a model with random piecewise-constant inflows on [0, horizon] and
 * reports, per assumption, whether any probe contradicted it. Violations are
 * report entries; nothing is thrown for a nonconforming model.
 *
 * Continuity is checked statistically: scaling the inflow by 1 + eps must
 * move the exit curve less and less as eps shrinks.
 */
inline ConformanceReport check_assumptions(const ArcModel& model, std::size_t probes, std::uint64_t seed,
                                           Horizon horizon, std::span<const CumulativeFlow> extra_probes = {}) {
    if (probes < 1) throw ValidationError("at least one probe is required");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    ConformanceReport report;
    report.model = std::string(model.kind());
    AssumptionCheck continuity{"continuity", true, 0.0, {}}, speed{"no_infinite_speed", true, 0.0, {}},
        finite{"finiteness", true, 0.0, {}},
        fifo{"strict_fifo", true, 0.0, {}}, causal{"causality", true, 0.0, {}};
    speed.worst = std::numeric_limits<double>::infinity();

    auto fail = [](AssumptionCheck& c, std::string msg) {
        if (c.passed) c.detail = std::move(msg);
        c.passed = false;
    };

    std::vector<CumulativeFlow> inputs(extra_probes.begin(), extra_probes.end());
    for (std::size_t i = 0; i < probes; ++i) inputs.push_back(detail::random_probe(rng, horizon.end));
    report.probes = inputs.size();

    for (std::size_t pi = 0; pi < inputs.size(); ++pi) {
        const CumulativeFlow& y = inputs[pi];
        const double mass = y.total();
        const ExitTimeCurve h = model.exit_curve(y);

        double span_end = std::max(horizon.end, y.knots().empty() ? 0.0 : y.knots().back().time);
        span_end += std::min(model.t_max(mass), 1e6);
        std::vector<double> samples;
        const int grid = 400;
        for (int i = 0; i <= grid; ++i) samples.push_back(span_end * i / grid);
        for (const auto& k : y.knots()) samples.push_back(k.time);
        for (const auto& k : h.knots())
            if (k.entry >= 0.0 && k.entry <= span_end) samples.push_back(k.entry);
        std::sort(samples.begin(), samples.end());
        samples.erase(std::unique(samples.begin(), samples.end()), samples.end());

        for (double s : samples) {
            double tt = h.at(s) - s;
            speed.worst = std::min(speed.worst, tt);
            if (tt < model.t_min() - 1e-12)
                fail(speed, "probe " + std::to_string(pi) + ": travel time " + std::to_string(tt) + " below t_min");
            finite.worst = std::max(finite.worst, tt - model.t_max(mass));
            if (tt > model.t_max(mass) + 1e-9)
                fail(finite, "probe " + std::to_string(pi) + ": travel time " + std::to_string(tt) +
                                 " above t_max(" + std::to_string(mass) + ")");
        }
        for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
            double a = samples[i], b = samples[i + 1];
            if (y.at(b) - y.before(a) <= 1e-12) continue;
            double gap = h.at(b) - h.at(a);
            if (!(gap > 0.0)) {
                fifo.worst = std::min(fifo.worst, gap);
                fail(fifo, "probe " + std::to_string(pi) + ": exit times not increasing between entries " +
                               std::to_string(a) + " and " + std::to_string(b));
            }
        }

        for (int c = 0; c < 3; ++c) {
            double cut = unit(rng) * horizon.end;
            ExitTimeCurve hc = model.exit_curve(restrict(y, cut));
            for (double s : samples) {
                if (s > cut) break;
                double d = std::abs(hc.at(s) - h.at(s));
                causal.worst = std::max(causal.worst, d);
                if (d > 1e-9)
                    fail(causal, "probe " + std::to_string(pi) + ": truncating at " + std::to_string(cut) +
                                     " changed travel time at " + std::to_string(s));
            }
            double d = std::abs(hc.at(cut) - h.at(cut));
            causal.worst = std::max(causal.worst, d);
            if (d > 1e-9) fail(causal, "probe " + std::to_string(pi) + ": truncation changed H at the cut");
        }

        if (mass > 0.0) {
            auto drift = [&](double eps) {
                ExitTimeCurve he = model.exit_curve(scale(y, 1.0 + eps));
                double d = 0.0;
                for (double s : samples) d = std::max(d, std::abs(he.at(s) - h.at(s)));
                return d;
            };
            double coarse = drift(1e-3), fine = drift(1e-5);
            continuity.worst = std::max(continuity.worst, coarse > 0.0 ? fine / coarse : 0.0);
            if (fine > 0.5 * coarse + 1e-9)
                fail(continuity, "probe " + std::to_string(pi) + ": exit curve moved " + std::to_string(fine) +
                                     " under a 1e-5 relative perturbation");
        }
    }
    if (speed.worst == std::numeric_limits<double>::infinity()) speed.worst = 0.0;
    report.checks = {continuity, speed, finite, fifo, causal};
    return report;
}

}  // namespace dyneq
