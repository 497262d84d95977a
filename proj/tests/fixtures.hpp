#pragma once

// Small networks shared by the unit and acceptance tests. Departure windows
// deliberately avoid dyadic breakpoints so grid methods see discretization error.

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dyneq/arc_models.hpp"
#include "dyneq/network_loading.hpp"

namespace dyneq::fixtures {

struct Fixture {
    std::string name;
    Network net;
    RouteFlowPattern x;
};

inline ArcModelPtr constant(double c) { return std::make_shared<ConstantArc>(c); }
inline ArcModelPtr bottleneck(double c, double k) { return std::make_shared<BottleneckArc>(c, k); }
inline ArcModelPtr performance(double free_time, double slope) {
    return std::make_shared<ArcPerformanceArc>(DelayFunction::affine(free_time, slope));
}

/// Planted non-FIFO model: its exit map runs backwards in time.
class ReversingArc final : public ArcModel {
public:
    std::string_view kind() const override { return "reversing"; }
    double t_min() const override { return 0.0; }
    double t_max(double) const override { return 10.0; }
    ExitTimeCurve exit_curve(const CumulativeFlow&) const override {
        return ExitTimeCurve({{0.0, 10.0, 10.0, 10.0, -1.0}, {10.0, 0.0, 0.0, 0.0, 1.0}});
    }
};

inline CumulativeFlow rate(double from, double to, double r) { return CumulativeFlow::uniform(from, to, r * (to - from)); }

/// Random mix of atoms and uniform pieces starting in [0, 1].
inline CumulativeFlow random_flow(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    FlowBuilder b;
    double t = unit(rng);
    int pieces = 1 + static_cast<int>(unit(rng) * 6);
    for (int i = 0; i < pieces; ++i) {
        if (unit(rng) < 0.3) {
            b.add_atom(t, unit(rng) * 2);
        } else {
            double len = 0.05 + unit(rng);
            b.add_uniform(t, t + len, unit(rng) * 3);
            t += len;
        }
        t += unit(rng) * 0.5;
    }
    return std::move(b).build();
}

inline Network nodes(std::initializer_list<const char*> ids) {
    Network n;
    for (const char* id : ids) n.add_node(id);
    return n;
}

inline std::vector<Fixture> all() {
    std::vector<Fixture> out;
    {
        Fixture f{"constant_atom", nodes({"o", "d"}), {}};
        f.net.add_arc("a", "o", "d", constant(1.0));
        f.net.add_route("r", {"a"});
        f.x.flows = {sum({CumulativeFlow::atom(0.0, 1.0), rate(0.3, 1.3, 1.0)})};
        out.push_back(std::move(f));
    }
    {
        Fixture f{"constant_chain", nodes({"o", "m", "d"}), {}};
        f.net.add_arc("a1", "o", "m", constant(1.0));
        f.net.add_arc("a2", "m", "d", constant(0.5));
        f.net.add_route("r", {"a1", "a2"});
        f.x.flows = {CumulativeFlow::atom(0.0, 1.0)};
        out.push_back(std::move(f));
    }
    {
        Fixture f{"bottleneck", nodes({"o", "d"}), {}};
        f.net.add_arc("b", "o", "d", bottleneck(1.0, 1.0));
        f.net.add_route("r", {"b"});
        f.x.flows = {rate(0.1, 1.1, 2.0)};
        out.push_back(std::move(f));
    }
    {
        Fixture f{"merge", nodes({"o1", "o2", "m", "d"}), {}};
        f.net.add_arc("a", "o1", "m", constant(0.5));
        f.net.add_arc("b", "o2", "m", constant(0.75));
        f.net.add_arc("s", "m", "d", bottleneck(1.0, 1.0));
        f.net.add_route("r1", {"a", "s"});
        f.net.add_route("r2", {"b", "s"});
        f.x.flows = {rate(0.0, 0.9, 1.0), rate(0.2, 1.3, 1.5)};
        out.push_back(std::move(f));
    }
    {
        Fixture f{"performance", nodes({"o", "d"}), {}};
        f.net.add_arc("p", "o", "d", performance(1.0, 1.0));
        f.net.add_route("r", {"p"});
        f.x.flows = {sum({rate(0.0, 0.7, 1.0), rate(0.7, 1.9, 2.2)})};
        out.push_back(std::move(f));
    }
    {
        Fixture f{"parallel_into_bottleneck", nodes({"o", "m", "d"}), {}};
        f.net.add_arc("p1", "o", "m", performance(1.0, 1.0));
        f.net.add_arc("p2", "o", "m", performance(0.5, 2.0));
        f.net.add_arc("s", "m", "d", bottleneck(0.5, 1.5));
        f.net.add_route("r1", {"p1", "s"});
        f.net.add_route("r2", {"p2", "s"});
        f.x.flows = {rate(0.0, 1.1, 1.0), rate(0.3, 1.7, 0.6)};
        out.push_back(std::move(f));
    }
    {
        Fixture f{"diverge", nodes({"o", "m", "d1", "d2"}), {}};
        f.net.add_arc("s", "o", "m", bottleneck(0.5, 2.0));
        f.net.add_arc("c", "m", "d1", constant(1.0));
        f.net.add_arc("p", "m", "d2", performance(0.5, 1.0));
        f.net.add_route("r1", {"s", "c"});
        f.net.add_route("r2", {"s", "p"});
        f.x.flows = {rate(0.0, 1.05, 1.5), rate(0.45, 1.35, 1.1)};
        out.push_back(std::move(f));
    }
    {
        Fixture f{"mixed_chain", nodes({"o", "m1", "m2", "d"}), {}};
        f.net.add_arc("b", "o", "m1", bottleneck(0.5, 1.0));
        f.net.add_arc("p", "m1", "m2", performance(1.0, 0.5));
        f.net.add_arc("c", "m2", "d", constant(0.25));
        f.net.add_route("r", {"b", "p", "c"});
        f.x.flows = {sum({rate(0.1, 1.1, 2.0), CumulativeFlow::atom(1.3, 0.5)})};
        out.push_back(std::move(f));
    }
    {
        Fixture f{"four_routes", nodes({"o", "a", "b", "d"}), {}};
        f.net.add_arc("oa", "o", "a", bottleneck(0.5, 2.0));
        f.net.add_arc("ob", "o", "b", constant(1.0));
        f.net.add_arc("ad", "a", "d", performance(0.5, 0.5));
        f.net.add_arc("bd", "b", "d", bottleneck(0.25, 1.0));
        f.net.add_arc("ab", "a", "b", constant(0.25));
        f.net.add_arc("od", "o", "d", performance(2.0, 0.5));
        f.net.add_route("r1", {"oa", "ad"});
        f.net.add_route("r2", {"oa", "ab", "bd"});
        f.net.add_route("r3", {"ob", "bd"});
        f.net.add_route("r4", {"od"});
        f.x.flows = {rate(0.0, 1.1, 1.5), rate(0.3, 1.2, 1.0), rate(0.1, 1.9, 0.75), rate(0.5, 0.9, 2.0)};
        out.push_back(std::move(f));
    }
    {
        // Each route's second arc is the other route's first.
        Fixture f{"cross_dependency", nodes({"a", "b", "c", "d"}), {}};
        f.net.add_arc("p", "a", "b", bottleneck(0.5, 1.0));
        f.net.add_arc("bc", "b", "c", constant(0.25));
        f.net.add_arc("q", "c", "d", performance(0.5, 1.0));
        f.net.add_arc("da", "d", "a", constant(0.25));
        f.net.add_route("r1", {"p", "bc", "q"});
        f.net.add_route("r2", {"q", "da", "p"});
        f.x.flows = {rate(0.0, 1.1, 1.5), rate(0.2, 1.5, 1.0)};
        out.push_back(std::move(f));
    }
    return out;
}

}  // namespace dyneq::fixtures
