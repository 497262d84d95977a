#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "dyneq/errors.hpp"

namespace dyneq {

/**
 * Entry time -> exit time map H(h) = h + t_a(Y)(h) of one arc under a given
 * inflow.
 *
 * Piecewise linear and right-continuous. A knot may carry a jump where the
 * inflow has an atom; `release_begin` is when the first user of that atom
 * leaves (equal to `value` unless the model spreads atoms). Before the first
 * knot the map runs at slope one into the first knot's left limit.
 */
class ExitTimeCurve {
public:
    struct Knot {
        double entry = 0.0;
        double left = 0.0;
        double value = 0.0;
        double release_begin = 0.0;
        double slope = 1.0;
    };

    ExitTimeCurve() = default;

    explicit ExitTimeCurve(std::vector<Knot> knots) : knots_(std::move(knots)) {
        for (std::size_t i = 1; i < knots_.size(); ++i)
            if (!(knots_[i].entry > knots_[i - 1].entry))
                throw ValidationError("exit curve entries must be strictly increasing");
    }

    /// H(h) = h + travel_time for all h.
    static ExitTimeCurve constant_delay(double travel_time, double anchor = 0.0) {
        double v = anchor + travel_time;
        return ExitTimeCurve({{anchor, v, v, v, 1.0}});
    }

    std::span<const Knot> knots() const { return knots_; }

    double at(double h) const {
        if (knots_.empty()) return h;
        if (h < knots_.front().entry) return knots_.front().left - (knots_.front().entry - h);
        auto it = std::upper_bound(knots_.begin(), knots_.end(), h,
                                   [](double x, const Knot& k) { return x < k.entry; });
        const Knot& k = *(it - 1);
        return k.value + k.slope * (h - k.entry);
    }

    double before(double h) const {
        if (knots_.empty()) return h;
        if (h <= knots_.front().entry) {
            if (h == knots_.front().entry) return knots_.front().left;
            return knots_.front().left - (knots_.front().entry - h);
        }
        auto it = std::lower_bound(knots_.begin(), knots_.end(), h,
                                   [](const Knot& k, double x) { return k.entry < x; });
        if (it != knots_.end() && it->entry == h) return it->left;
        const Knot& k = *(it - 1);
        return k.value + k.slope * (h - k.entry);
    }

    double release_begin(double h) const {
        auto it = std::lower_bound(knots_.begin(), knots_.end(), h,
                                   [](const Knot& k, double x) { return k.entry < x; });
        if (it != knots_.end() && it->entry == h) return it->release_begin;
        return at(h);
    }

    double travel_time(double h) const { return at(h) - h; }

    /// True when H never decreases (jumps included).
    bool is_nondecreasing() const {
        for (std::size_t i = 0; i < knots_.size(); ++i) {
            const Knot& k = knots_[i];
            if (k.value < k.left || k.slope < 0.0) return false;
        }
        return true;
    }

    /**
     * sup{h : H(h) <= s} for a nondecreasing curve. Returns +inf when the
     * curve stays at or below s forever.
     */
    double preimage(double s) const {
        if (knots_.empty()) return s;
        const Knot& first = knots_.front();
        if (s < first.left) return first.entry - (first.left - s);
        // Last knot whose left limit is <= s.
        auto it = std::upper_bound(knots_.begin(), knots_.end(), s,
                                   [](double x, const Knot& k) { return x < k.left; });
        const Knot& k = *(it - 1);
        if (k.value > s) return k.entry;
        if (k.slope > 0.0) {
            double h = k.entry + (s - k.value) / k.slope;
            if (it != knots_.end()) h = std::min(h, it->entry);
            return h;
        }
        if (it != knots_.end()) return it->entry;
        return std::numeric_limits<double>::infinity();
    }

private:
    std::vector<Knot> knots_;
};

}  // namespace dyneq
