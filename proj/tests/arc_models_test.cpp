#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "dyneq/arc_models.hpp"
#include "fixtures.hpp"

using namespace dyneq;

namespace {

// Volume on the arc at time s: entered minus exited.
double volume(const CumulativeFlow& y, const CumulativeFlow& out, double s) { return y.at(s) - out.at(s); }

CumulativeFlow segments(std::vector<RateSegment> segs) { return CumulativeFlow::piecewise_constant(segs); }

}  // namespace

TEST(ConstantArc, ShiftsEverything) {
    ConstantArc arc(1.0);
    auto h = arc.exit_curve(CumulativeFlow::uniform(0.0, 2.0, 5.0));
    for (double s : {-1.0, 0.0, 0.3, 2.0, 7.0}) EXPECT_DOUBLE_EQ(h.at(s), s + 1.0);
    EXPECT_DOUBLE_EQ(travel_time(arc, CumulativeFlow{}, 0.0), 1.0);
    EXPECT_THROW(ConstantArc(0.0), ModelParameterError);
}

TEST(BottleneckArc, QueueBalanceClosedForm) {
    BottleneckArc arc(1.0, 1.0);
    auto y = CumulativeFlow::uniform(0.0, 1.0, 2.0);
    auto h = arc.exit_curve(y);
    for (int i = 0; i <= 100; ++i) {
        double s = i / 100.0;
        EXPECT_NEAR(h.at(s), 1.0 + 2.0 * s, 1e-12);
    }
    EXPECT_NEAR(h.travel_time(1.0), 2.0, 1e-12);
    auto out = pushforward(y, h);
    EXPECT_NEAR(out.support_begin(), 1.0, 1e-12);
    EXPECT_NEAR(out.support_end(), 3.0, 1e-12);
    for (double s : {1.0, 1.7, 2.5, 2.99}) EXPECT_NEAR(out.rate_at(s), 1.0, 1e-12);
    // After the queue clears the arc is free again.
    EXPECT_NEAR(h.travel_time(4.0), 1.0, 1e-12);
}

TEST(BottleneckArc, AtomLeavesAtCapacity) {
    BottleneckArc arc(1.0, 1.0);
    auto y = CumulativeFlow::atom(0.0, 2.0);
    auto h = arc.exit_curve(y);
    EXPECT_NEAR(h.release_begin(0.0), 1.0, 1e-12);
    EXPECT_NEAR(h.at(0.0), 3.0, 1e-12);
    auto out = pushforward(y, h);
    EXPECT_FALSE(out.has_atoms());
    EXPECT_NEAR(out.at(2.0), 1.0, 1e-12);
}

TEST(BottleneckArc, RejectsBadParameters) {
    EXPECT_THROW(BottleneckArc(1.0, 0.0), ModelParameterError);
    EXPECT_THROW(BottleneckArc(-1.0, 1.0), ModelParameterError);
}

TEST(ArcPerformanceArc, AtomSeesItsOwnVolume) {
    ArcPerformanceArc arc(DelayFunction::affine(1.0, 1.0));
    auto h = arc.exit_curve(CumulativeFlow::atom(0.0, 1.0));
    EXPECT_NEAR(h.at(0.0), 2.0, 1e-12);
}

TEST(ArcPerformanceArc, ZeroInflowIsFreeFlow) {
    ArcPerformanceArc arc(DelayFunction::affine(1.0, 1.0));
    for (double s : {0.0, 1.0, 5.0}) EXPECT_DOUBLE_EQ(travel_time(arc, CumulativeFlow{}, s), 1.0);
}

TEST(ArcPerformanceArc, ExitMapSolvesVolumeEquation) {
    std::vector<DelayFunction> delays{
        DelayFunction::affine(1.0, 1.0),
        DelayFunction({{0.0, 1.0}, {1.0, 1.5}, {3.0, 4.0}}),
        DelayFunction({{0.0, 0.5}, {2.0, 1.0}, {5.0, 3.0}}),
    };
    auto y = segments({{0.0, 1.0, 2.0}, {1.0, 2.5, 0.5}, {3.0, 3.5, 3.0}});
    for (const auto& d : delays) {
        ArcPerformanceArc arc(d);
        auto h = arc.exit_curve(y);
        auto out = pushforward(y, h);
        for (int i = 0; i <= 400; ++i) {
            double s = 6.0 * i / 400.0;
            EXPECT_NEAR(h.at(s), s + d(volume(y, out, s)), 1e-9) << "at " << s;
        }
    }
}

TEST(ArcPerformanceArc, StableUnderGridRefinement) {
    DelayFunction d({{0.0, 1.0}, {1.0, 1.5}, {3.0, 4.0}});
    auto y = segments({{0.0, 1.0, 2.0}, {1.0, 2.5, 0.5}});
    auto coarse = ArcPerformanceArc(d, 0.05).exit_curve(y);
    auto fine = ArcPerformanceArc(d, 0.0125).exit_curve(y);
    for (int i = 0; i <= 300; ++i) {
        double s = 3.0 * i / 300.0;
        EXPECT_NEAR(coarse.at(s), fine.at(s), 1e-9);
    }
}

TEST(DelayFunction, ValidatesShape) {
    EXPECT_THROW(DelayFunction({{0.0, 1.0}}), ModelParameterError);
    EXPECT_THROW(DelayFunction({{0.0, 0.0}, {1.0, 1.0}}), ModelParameterError);
    EXPECT_THROW(DelayFunction({{0.0, 1.0}, {1.0, 0.5}}), ModelParameterError);
    DelayFunction d({{0.0, 1.0}, {1.0, 2.0}});
    EXPECT_DOUBLE_EQ(d(3.0), 4.0);
}

TEST(Conformance, StandardModelsPass) {
    Horizon hz(4.0);
    std::vector<std::shared_ptr<const ArcModel>> models{
        std::make_shared<ConstantArc>(1.0),
        std::make_shared<BottleneckArc>(0.5, 1.0),
        std::make_shared<ArcPerformanceArc>(DelayFunction::affine(1.0, 1.0)),
    };
    for (const auto& m : models) {
        auto rep = check_assumptions(*m, 30, 3, hz);
        for (const auto& c : rep.checks) EXPECT_TRUE(c.passed) << m->kind() << " " << c.name << ": " << c.detail;
    }
}

TEST(Conformance, ReversingModelFailsFifo) {
    auto rep = check_assumptions(fixtures::ReversingArc{}, 10, 1, Horizon(4.0));
    EXPECT_FALSE(rep.get("strict_fifo").passed);
    EXPECT_FALSE(rep.all_passed());
}

TEST(BottleneckArc, NearCapacityInflowsKeepExitCurveMonotone) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 2000; ++trial) {
        double cap = 0.5 * (1 + static_cast<int>(u(rng) * 4));
        std::vector<RateSegment> segs;
        double t = 0.0;
        for (int i = 0; i < 30; ++i) {
            double len = (1 + static_cast<int>(u(rng) * 4)) / (u(rng) < 0.5 ? 48.0 : 96.0);
            double rate = u(rng) < 0.5 ? cap * (u(rng) < 0.5 ? 2.0 : 1.0 / 3.0) : 3.0 * cap * u(rng);
            segs.push_back({t, t + len, rate});
            t += len;
        }
        auto h = BottleneckArc(0.5, cap).exit_curve(segments(segs));
        ASSERT_TRUE(h.is_nondecreasing()) << "trial " << trial;
    }
}
