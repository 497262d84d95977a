#pragma once

// Finite measures on the time axis, stored as right-continuous piecewise-linear
// cumulative curves. Atoms are jumps of the curve; densities are piecewise
// constant. All operations are pure and return new values.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "dyneq/errors.hpp"
#include "dyneq/exit_time_curve.hpp"

namespace dyneq {

/// Breakpoints closer than this (seconds) are merged.
inline constexpr double kMergeTolerance = 1e-9;

/// The time window I = [0, end] in which route departures happen.
struct Horizon {
    double end = 1.0;

    Horizon() = default;
    explicit Horizon(double end_) : end(end_) {
        if (!(end_ > 0.0) || !std::isfinite(end_)) throw ValidationError("horizon end must be positive");
    }
};

/// A constant-rate piece of a density, used to build flows from tables.
struct RateSegment {
    double from = 0.0;
    double to = 0.0;
    double rate = 0.0;
};

/**
 * Cumulative curve N of a finite measure Y: N(t) = Y(]-inf, t]).
 *
 * Each knot stores the left limit N(t-) and the value N(t), so the jump
 * value - left is the atom at t, together with the density on the segment up
 * to the next knot. N is zero before the first knot and constant after the
 * last one. An empty knot list is the zero measure.
 */
class CumulativeFlow {
public:
    struct Knot {
        double time = 0.0;
        double left = 0.0;
        double value = 0.0;
        double rate = 0.0;

        bool operator==(const Knot&) const = default;
    };

    CumulativeFlow() = default;

    /// Validates knot invariants. Throws ValidationError.
    static CumulativeFlow from_knots(std::vector<Knot> knots) {
        for (std::size_t i = 0; i < knots.size(); ++i) {
            const Knot& k = knots[i];
            if (!std::isfinite(k.time) || !std::isfinite(k.value) || !std::isfinite(k.left) || !std::isfinite(k.rate))
                throw ValidationError("cumulative flow knots must be finite");
            if (k.rate < 0.0) throw ValidationError("negative rate");
            if (k.value < k.left) throw ValidationError("cumulative mass must be nondecreasing");
            if (i == 0) {
                if (k.left != 0.0) throw ValidationError("cumulative mass must start at zero");
            } else {
                const Knot& p = knots[i - 1];
                if (!(k.time > p.time)) throw ValidationError("knot times must be strictly increasing");
                if (k.left < p.value) throw ValidationError("cumulative mass must be nondecreasing");
            }
        }
        if (!knots.empty() && knots.back().rate != 0.0)
            throw ValidationError("cumulative flow must be constant after its last knot");
        CumulativeFlow f;
        f.knots_ = std::move(knots);
        return f;
    }

    static CumulativeFlow atom(double time, double mass);
    static CumulativeFlow uniform(double from, double to, double mass);
    static CumulativeFlow piecewise_constant(std::span<const RateSegment> segments);

    /// Samples of a continuous cumulative curve, linearly interpolated.
    static CumulativeFlow from_samples(std::span<const double> times, std::span<const double> values) {
        std::vector<Knot> knots;
        knots.reserve(times.size());
        double running = 0.0;
        for (std::size_t i = 0; i < times.size(); ++i) {
            double v = std::max(values[i], running);
            if (knots.empty()) {
                if (v <= 0.0 && i + 1 < times.size() && values[i + 1] <= 0.0) continue;
                knots.push_back({times[i], 0.0, v, 0.0});
                running = v;
                continue;
            }
            Knot& prev = knots.back();
            double dt = times[i] - prev.time;
            prev.rate = (v - prev.value) / dt;
            knots.push_back({times[i], v, v, 0.0});
            running = v;
        }
        // Drop trailing flat knots.
        while (knots.size() >= 2 && knots[knots.size() - 2].rate == 0.0 &&
               knots.back().value == knots[knots.size() - 2].value)
            knots.pop_back();
        if (knots.size() == 1 && knots[0].value == 0.0) knots.clear();
        CumulativeFlow f;
        f.knots_ = std::move(knots);
        return f;
    }

    std::span<const Knot> knots() const { return knots_; }
    bool is_zero() const { return knots_.empty() || total() == 0.0; }
    double total() const { return knots_.empty() ? 0.0 : knots_.back().value; }

    /// N(t), right-continuous.
    double at(double t) const {
        if (knots_.empty() || t < knots_.front().time) return 0.0;
        auto it = std::upper_bound(knots_.begin(), knots_.end(), t,
                                   [](double x, const Knot& k) { return x < k.time; });
        const Knot& k = *(it - 1);
        return k.value + k.rate * (t - k.time);
    }

    /// N(t-), the left limit.
    double before(double t) const {
        if (knots_.empty() || t <= knots_.front().time) return 0.0;
        auto it = std::lower_bound(knots_.begin(), knots_.end(), t,
                                   [](const Knot& k, double x) { return k.time < x; });
        if (it != knots_.end() && it->time == t) return it->left;
        const Knot& k = *(it - 1);
        return k.value + k.rate * (t - k.time);
    }

    /// Density on the segment starting at t (right derivative).
    double rate_at(double t) const {
        if (knots_.empty() || t < knots_.front().time) return 0.0;
        auto it = std::upper_bound(knots_.begin(), knots_.end(), t,
                                   [](double x, const Knot& k) { return x < k.time; });
        return (it - 1)->rate;
    }

    double atom_at(double t) const { return at(t) - before(t); }

    bool has_atoms() const {
        return std::any_of(knots_.begin(), knots_.end(), [](const Knot& k) { return k.value > k.left; });
    }

    /// First knot time, or +inf for the zero measure.
    double support_begin() const {
        return knots_.empty() ? std::numeric_limits<double>::infinity() : knots_.front().time;
    }

    /// Earliest time after which no mass remains, or -inf for the zero measure.
    double support_end() const {
        for (std::size_t i = knots_.size(); i-- > 0;) {
            const Knot& k = knots_[i];
            if (k.rate > 0.0 && i + 1 < knots_.size()) return knots_[i + 1].time;
            if (k.value > k.left) return k.time;
        }
        return -std::numeric_limits<double>::infinity();
    }

    bool operator==(const CumulativeFlow&) const = default;

private:
    std::vector<Knot> knots_;
};

/**
 * Incremental construction of a flow from time-ordered pieces. Pieces must be
 * appended with nondecreasing start times; a start that falls slightly before
 * the previous end (roundoff) is clamped.
 */
class FlowBuilder {
public:
    void add_atom(double t, double mass) {
        if (!(mass > 0.0)) return;
        if (!knots_.empty() && t <= knots_.back().time + kMergeTolerance) {
            knots_.back().value += mass;
        } else {
            double c = current();
            knots_.push_back({t, c, c + mass, 0.0});
        }
        cum_ += mass;
    }

    /// Spreads mass uniformly over [from, to].
    void add_uniform(double from, double to, double mass) {
        if (!(mass > 0.0)) return;
        if (!knots_.empty()) from = std::max(from, knots_.back().time);
        if (to - from < kMergeTolerance) {
            add_atom(from, mass);
            return;
        }
        if (!knots_.empty() && from <= knots_.back().time + kMergeTolerance) {
            from = knots_.back().time;
        } else {
            double c = current();
            knots_.push_back({from, c, c, 0.0});
        }
        knots_.back().rate = mass / (to - from);
        cum_ += mass;
        knots_.push_back({to, cum_, cum_, 0.0});
    }

    double last_time() const {
        return knots_.empty() ? -std::numeric_limits<double>::infinity() : knots_.back().time;
    }

    CumulativeFlow build() && {
        if (knots_.empty()) return {};
        return CumulativeFlow::from_knots(std::move(knots_));
    }

private:
    double current() const { return knots_.empty() ? 0.0 : knots_.back().value; }

    std::vector<CumulativeFlow::Knot> knots_;
    double cum_ = 0.0;
};

inline CumulativeFlow CumulativeFlow::atom(double time, double mass) {
    if (mass < 0.0) throw ValidationError("negative mass");
    FlowBuilder b;
    b.add_atom(time, mass);
    return std::move(b).build();
}

inline CumulativeFlow CumulativeFlow::uniform(double from, double to, double mass) {
    if (mass < 0.0) throw ValidationError("negative mass");
    if (to < from) throw ValidationError("segment end precedes its start");
    FlowBuilder b;
    b.add_uniform(from, to, mass);
    return std::move(b).build();
}

inline CumulativeFlow CumulativeFlow::piecewise_constant(std::span<const RateSegment> segments) {
    FlowBuilder b;
    double last = -std::numeric_limits<double>::infinity();
    for (const RateSegment& s : segments) {
        if (s.rate < 0.0) throw ValidationError("negative rate");
        if (s.to < s.from) throw ValidationError("segment end precedes its start");
        if (s.from < last - kMergeTolerance) throw ValidationError("rate segments must be ordered and disjoint");
        b.add_uniform(s.from, s.to, s.rate * (s.to - s.from));
        last = s.to;
    }
    return std::move(b).build();
}

/// Y(]from, to]).
inline double measure_of(const CumulativeFlow& flow, double from, double to) {
    if (to <= from) return 0.0;
    return std::max(0.0, flow.at(to) - flow.at(from));
}

/// The restriction Y|_h: mass entering after h is dropped.
inline CumulativeFlow restrict(const CumulativeFlow& flow, double h) {
    auto knots = flow.knots();
    if (knots.empty() || h >= knots.back().time) return flow;
    if (h < knots.front().time) return {};
    std::vector<CumulativeFlow::Knot> out;
    for (const auto& k : knots) {
        if (k.time > h) break;
        out.push_back(k);
    }
    auto& last = out.back();
    if (last.time == h) {
        last.rate = 0.0;
    } else {
        double v = last.value + last.rate * (h - last.time);
        out.push_back({h, v, v, 0.0});
    }
    return CumulativeFlow::from_knots(std::move(out));
}

/// Pointwise sum of cumulative curves; knots within kMergeTolerance are merged.
inline CumulativeFlow sum(std::span<const CumulativeFlow> flows) {
    std::vector<const CumulativeFlow*> live;
    for (const auto& f : flows)
        if (!f.knots().empty()) live.push_back(&f);
    if (live.empty()) return {};
    if (live.size() == 1) return *live.front();

    std::vector<double> times;
    for (const auto* f : live)
        for (const auto& k : f->knots()) times.push_back(k.time);
    std::sort(times.begin(), times.end());

    // Groups of nearly equal times: [first, last].
    std::vector<std::pair<double, double>> groups;
    for (double t : times) {
        if (!groups.empty() && t - groups.back().first <= kMergeTolerance)
            groups.back().second = t;
        else
            groups.emplace_back(t, t);
    }

    std::vector<CumulativeFlow::Knot> out;
    out.reserve(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        auto [first, last] = groups[g];
        double left = 0.0, value = 0.0, rate = 0.0;
        for (const auto* f : live) {
            left += f->before(first);
            value += f->at(last);
            rate += f->rate_at(last);
        }
        if (g + 1 == groups.size()) rate = 0.0;
        if (!out.empty()) left = std::max(left, out.back().value);
        if (g == 0) left = 0.0;
        value = std::max(value, left);
        out.push_back({first, left, value, rate});
    }
    return CumulativeFlow::from_knots(std::move(out));
}

inline CumulativeFlow sum(std::initializer_list<CumulativeFlow> flows) {
    return sum(std::span<const CumulativeFlow>(flows.begin(), flows.size()));
}

/// Multiplies every mass by a nonnegative factor.
inline CumulativeFlow scale(const CumulativeFlow& flow, double factor) {
    if (factor < 0.0) throw ValidationError("negative scale factor");
    if (factor == 0.0) return {};
    std::vector<CumulativeFlow::Knot> out(flow.knots().begin(), flow.knots().end());
    for (auto& k : out) {
        k.left *= factor;
        k.value *= factor;
        k.rate *= factor;
    }
    return CumulativeFlow::from_knots(std::move(out));
}

/**
 * Image measure of `flow` under the exit-time map: result(J) = flow(map^-1(J)).
 *
 * Densities are carried through each linear piece of the map (rate divided by
 * slope). An atom at h leaves over [map.release_begin(h), map(h)], uniformly
 * when that interval is nondegenerate. Throws FifoViolation if the map is
 * flat or decreasing over an interval carrying density, or if a later piece
 * of mass would leave before an earlier one.
 */
inline CumulativeFlow pushforward(const CumulativeFlow& flow, const ExitTimeCurve& map) {
    auto fk = flow.knots();
    if (fk.empty()) return {};
    const double lo = fk.front().time;
    const double hi = fk.back().time;

    std::vector<double> times;
    times.reserve(fk.size() + map.knots().size());
    for (const auto& k : fk) times.push_back(k.time);
    for (const auto& k : map.knots())
        if (k.entry > lo && k.entry < hi) times.push_back(k.entry);
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());

    struct Piece {
        double begin, end, mass;
    };
    std::vector<Piece> pieces;
    for (std::size_t i = 0; i < times.size(); ++i) {
        const double t = times[i];
        const double atom = flow.at(t) - flow.before(t);
        if (atom > 0.0) {
            double b = map.release_begin(t), e = map.at(t);
            if (b > e) throw FifoViolation("atom release interval is reversed");
            pieces.push_back({b, e, atom});
        }
        if (i + 1 == times.size()) break;
        const double t2 = times[i + 1];
        if (flow.rate_at(t) > 0.0) {
            double mass = flow.before(t2) - flow.at(t);
            if (!(mass > 0.0)) continue;
            double b = map.at(t), e = map.before(t2);
            if (!(e > b))
                throw FifoViolation("exit-time map is not strictly increasing on [" + std::to_string(t) + ", " +
                                    std::to_string(t2) + "] which carries mass");
            pieces.push_back({b, e, mass});
        }
    }

    FlowBuilder builder;
    double prev_end = -std::numeric_limits<double>::infinity();
    for (const auto& p : pieces) {
        if (p.begin < prev_end - 1e-9 * (1.0 + std::abs(prev_end)))
            throw FifoViolation("users entering later exit earlier (exit at " + std::to_string(p.begin) +
                                " before " + std::to_string(prev_end) + ")");
        if (p.end == p.begin)
            builder.add_atom(p.begin, p.mass);
        else
            builder.add_uniform(p.begin, p.end, p.mass);
        prev_end = std::max(prev_end, p.end);
    }
    return std::move(builder).build();
}

/// Largest |a(t) - b(t)| over the given sample times.
inline double linf_distance(const CumulativeFlow& a, const CumulativeFlow& b, std::span<const double> times) {
    double d = 0.0;
    for (double t : times) d = std::max(d, std::abs(a.at(t) - b.at(t)));
    return d;
}

/// Sup-norm distance of two cumulative curves, exact for piecewise-linear curves.
inline double linf_distance(const CumulativeFlow& a, const CumulativeFlow& b) {
    std::vector<double> times;
    for (const auto& k : a.knots()) times.push_back(k.time);
    for (const auto& k : b.knots()) times.push_back(k.time);
    double d = 0.0;
    for (double t : times) {
        d = std::max(d, std::abs(a.at(t) - b.at(t)));
        d = std::max(d, std::abs(a.before(t) - b.before(t)));
    }
    return d;
}

}  // namespace dyneq
