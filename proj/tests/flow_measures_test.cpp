#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "dyneq/flow_measures.hpp"
#include "fixtures.hpp"

using namespace dyneq;

using fixtures::random_flow;

TEST(CumulativeFlow, LinearCurveQuery) {
    auto f = CumulativeFlow::uniform(0.0, 2.0, 2.0);
    EXPECT_DOUBLE_EQ(measure_of(f, 0.0, 1.0), 1.0);
    EXPECT_DOUBLE_EQ(f.at(2.0), 2.0);
    EXPECT_DOUBLE_EQ(f.rate_at(0.5), 1.0);
    EXPECT_EQ(f.support_end(), 2.0);
}

TEST(CumulativeFlow, AtomIsAJump) {
    auto f = CumulativeFlow::atom(1.0, 3.0);
    EXPECT_EQ(f.before(1.0), 0.0);
    EXPECT_EQ(f.at(1.0), 3.0);
    EXPECT_EQ(f.atom_at(1.0), 3.0);
    EXPECT_TRUE(f.has_atoms());
    EXPECT_EQ(f.support_begin(), 1.0);
    EXPECT_EQ(f.support_end(), 1.0);
}

TEST(CumulativeFlow, RejectsNegativeRate) {
    std::vector<RateSegment> segs{{0.0, 1.0, -1.0}};
    try {
        CumulativeFlow::piecewise_constant(segs);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("negative rate"), std::string::npos);
    }
}

TEST(CumulativeFlow, RejectsNonMonotoneKnots) {
    EXPECT_THROW(CumulativeFlow::from_knots({{0.0, 0.0, 1.0, 0.0}, {1.0, 0.5, 0.5, 0.0}}), ValidationError);
    EXPECT_THROW(CumulativeFlow::from_knots({{0.0, 0.0, 1.0, 1.0}}), ValidationError);
}

TEST(CumulativeFlow, FromSamplesInterpolates) {
    std::vector<double> t{0, 1, 2, 3}, v{0, 1, 1, 3};
    auto f = CumulativeFlow::from_samples(t, v);
    EXPECT_DOUBLE_EQ(f.at(0.5), 0.5);
    EXPECT_DOUBLE_EQ(f.at(2.5), 2.0);
    EXPECT_DOUBLE_EQ(f.total(), 3.0);
}

TEST(Restrict, DropsLaterMass) {
    auto f = sum({CumulativeFlow::uniform(0.0, 2.0, 2.0), CumulativeFlow::atom(3.0, 1.0)});
    auto r = restrict(f, 1.0);
    EXPECT_DOUBLE_EQ(r.total(), 1.0);
    EXPECT_DOUBLE_EQ(r.at(5.0), 1.0);
    EXPECT_DOUBLE_EQ(restrict(f, 3.0).total(), 3.0);
    EXPECT_TRUE(restrict(f, -1.0).is_zero());
}

TEST(Restrict, KeepsAtomAtCut) {
    auto f = CumulativeFlow::atom(1.0, 2.0);
    EXPECT_DOUBLE_EQ(restrict(f, 1.0).total(), 2.0);
    EXPECT_DOUBLE_EQ(restrict(f, 0.999).total(), 0.0);
}

TEST(Restrict, IdempotentOnRandomFlows) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < 300; ++i) {
        auto f = random_flow(rng);
        double a = unit(rng) * 6, b = unit(rng) * 6;
        double h1 = std::min(a, b), h2 = std::max(a, b);
        EXPECT_EQ(restrict(restrict(f, h2), h1), restrict(f, h1));
        EXPECT_EQ(restrict(restrict(f, h1), h1), restrict(f, h1));
    }
}

TEST(Sum, AddsMassesAndAtoms) {
    auto s = sum({CumulativeFlow::uniform(0.0, 2.0, 2.0), CumulativeFlow::uniform(1.0, 3.0, 4.0),
                  CumulativeFlow::atom(1.5, 1.0)});
    EXPECT_DOUBLE_EQ(s.total(), 7.0);
    EXPECT_DOUBLE_EQ(s.at(1.0), 1.0);
    EXPECT_DOUBLE_EQ(s.rate_at(1.2), 3.0);
    EXPECT_DOUBLE_EQ(s.atom_at(1.5), 1.0);
    EXPECT_DOUBLE_EQ(s.at(2.5), 2.0 + 3.0 + 1.0);
}

TEST(Sum, MatchesPointwiseOnRandomFlows) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        auto a = random_flow(rng), b = random_flow(rng);
        auto s = sum({a, b});
        for (int j = 0; j < 50; ++j) {
            double t = unit(rng) * 10;
            EXPECT_NEAR(s.at(t), a.at(t) + b.at(t), 1e-9);
        }
    }
}

TEST(Pushforward, ConstantShiftMovesMass) {
    auto f = sum({CumulativeFlow::uniform(0.0, 1.0, 1.0), CumulativeFlow::atom(2.0, 0.5)});
    auto g = pushforward(f, ExitTimeCurve::constant_delay(3.0));
    EXPECT_DOUBLE_EQ(g.total(), 1.5);
    EXPECT_DOUBLE_EQ(g.at(3.5), 0.5);
    EXPECT_DOUBLE_EQ(g.atom_at(5.0), 0.5);
    EXPECT_DOUBLE_EQ(g.at(4.999), 1.0);
}

TEST(Pushforward, SlopeDividesDensity) {
    // H(h) = 1 + 2h on [0, 1].
    ExitTimeCurve h({{0.0, 1.0, 1.0, 1.0, 2.0}, {1.0, 3.0, 3.0, 3.0, 1.0}});
    auto g = pushforward(CumulativeFlow::uniform(0.0, 1.0, 2.0), h);
    EXPECT_DOUBLE_EQ(g.rate_at(2.0), 1.0);
    EXPECT_DOUBLE_EQ(g.support_begin(), 1.0);
    EXPECT_DOUBLE_EQ(g.support_end(), 3.0);
}

TEST(Pushforward, SpreadsAtomOverReleaseWindow) {
    ExitTimeCurve h({{0.0, 1.0, 2.0, 1.0, 1.0}});
    auto g = pushforward(CumulativeFlow::atom(0.0, 1.0), h);
    EXPECT_FALSE(g.has_atoms());
    EXPECT_DOUBLE_EQ(g.at(1.5), 0.5);
}

TEST(Pushforward, DecreasingMapIsFifoViolation) {
    ExitTimeCurve h({{0.0, 2.0, 2.0, 2.0, -0.5}, {1.0, 1.5, 1.5, 1.5, 1.0}});
    EXPECT_THROW(pushforward(CumulativeFlow::uniform(0.0, 1.0, 1.0), h), FifoViolation);
}

TEST(Pushforward, OvertakingAtomIsFifoViolation) {
    // Entry at 1 leaves at 1.5, before entries just earlier leave.
    ExitTimeCurve h({{0.0, 1.0, 1.0, 1.0, 2.0}, {1.0, 3.0, 1.5, 1.5, 1.0}});
    auto f = sum({CumulativeFlow::uniform(0.0, 1.0, 1.0), CumulativeFlow::atom(1.0, 1.0)});
    EXPECT_THROW(pushforward(f, h), FifoViolation);
}

TEST(Distance, ExactSupNorm) {
    auto a = CumulativeFlow::uniform(0.0, 1.0, 1.0);
    auto b = CumulativeFlow::atom(0.5, 1.0);
    EXPECT_DOUBLE_EQ(linf_distance(a, b), 0.5);
}
