// Copyright 2026 The cascadelab Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include <gtest/gtest.h>

#include "cascadelab/geometry.hpp"
#include "cascadelab/io.hpp"
#include "cascadelab/rng.hpp"
#include "cascadelab/stats.hpp"

using namespace cascadelab;

namespace {

Point p2(double x, double y) { return Point{x, y}; }

PointPattern random_pattern(std::size_t n, RngStream& rng)
{
    PointPattern p(2);
    for (std::size_t i = 0; i < n; ++i)
        p.add(p2(4 * rng.uniform() - 2, 4 * rng.uniform() - 2));
    return p;
}

} // namespace

TEST(Point, RejectsBadDimensionAndNonFinite)
{
    EXPECT_THROW(Point(std::size_t{0}), Error);
    EXPECT_THROW(Point(kMaxDim + 1), Error);
    EXPECT_THROW((Point{1.0, std::nan("")}), Error);
    EXPECT_THROW((Point{INFINITY}), Error);
    EXPECT_EQ(Point::zero(3).dim(), 3u);
}

TEST(Region, Invariants)
{
    EXPECT_THROW(Ball(p2(0, 0), 0.0), Error);
    EXPECT_THROW(Ball(p2(0, 0), -1.0), Error);
    EXPECT_THROW(Box(p2(0, 0), p2(1, 0)), Error);
    EXPECT_THROW(Box(p2(0, 0), Point{1.0}), DimensionMismatch);
}

TEST(Region, BallIsOpenBoxIsHalfOpen)
{
    const Ball b(p2(0, 0), 1.0);
    EXPECT_TRUE(b.contains(p2(0.5, 0)));
    EXPECT_FALSE(b.contains(p2(1, 0)));
    const Box x(p2(0, 0), p2(1, 1));
    EXPECT_TRUE(x.contains(p2(0, 0)));
    EXPECT_FALSE(x.contains(p2(1, 0.5)));
    EXPECT_FALSE(x.contains(p2(0.5, 1)));
}

TEST(Region, Volume)
{
    EXPECT_NEAR(volume(Ball(p2(3, 3), 2.0)), 4 * std::numbers::pi, 1e-12);
    EXPECT_NEAR(volume(Ball::at_origin(3, 1.0)), 4.0 / 3.0 * std::numbers::pi, 1e-12);
    EXPECT_NEAR(volume(Box::cube(2, 0, 5)), 25.0, 1e-12);
    EXPECT_NEAR(volume(dilate(Box::cube(2, 0, 5), 1.0)), 49.0, 1e-12);
    EXPECT_NEAR(volume(dilate(Ball::at_origin(2, 1.0), 1.0)), 4 * std::numbers::pi, 1e-12);
}

TEST(Region, SampleUniformStaysInside)
{
    RngStream rng(1, 0);
    const Region box = Box(p2(-1, 2), p2(3, 2.5));
    const Region ball = Ball(p2(1, 1), 0.5);
    for (int i = 0; i < 2000; ++i) {
        EXPECT_TRUE(contains(box, sample_uniform(box, rng)));
        EXPECT_TRUE(contains(ball, sample_uniform(ball, rng)));
    }
}

TEST(Region, SampleUniformBallRadialLaw)
{
    // In d dimensions |U|/r has cdf t^d.
    RngStream rng(2, 0);
    const Region ball = Ball::at_origin(3, 2.0);
    int inner = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i)
        inner += sample_uniform(ball, rng).norm() < 1.0 ? 1 : 0;
    const double p = 1.0 / 8.0;
    EXPECT_NEAR(inner / double(n), p, 4 * std::sqrt(p * (1 - p) / n));
}

TEST(CountIn, Examples)
{
    PointPattern one(2, {p2(0.5, 0.5)});
    EXPECT_EQ(count_in(one, Box(p2(0, 0), p2(1, 1))), 1u);
    PointPattern empty(2);
    EXPECT_EQ(count_in(empty, Ball(p2(0, 0), 3.0)), 0u);
    PointPattern multi(2, {p2(0, 0), p2(0, 0), p2(3, 0)});
    EXPECT_EQ(count_in(multi, Ball(p2(0, 0), 1.0)), 2u);
}

TEST(CountIn, DimensionMismatch)
{
    PointPattern p(2, {p2(0, 0)});
    EXPECT_THROW(count_in(p, Ball::at_origin(3, 1.0)), DimensionMismatch);
    EXPECT_THROW(p.add(Point{1.0}), DimensionMismatch);
}

TEST(CountIn, AdditiveOverDisjointBoxes)
{
    RngStream rng(3, 0);
    for (int trial = 0; trial < 50; ++trial) {
        const auto pat = random_pattern(200, rng);
        const double cut = 2 * rng.uniform() - 1;
        const Box whole(p2(-1, -1), p2(1, 1));
        const Box left(p2(-1, -1), p2(cut, 1)), right(p2(cut, -1), p2(1, 1));
        EXPECT_EQ(count_in(pat, whole), count_in(pat, left) + count_in(pat, right));
    }
}

TEST(CountIn, MonotoneUnderInclusion)
{
    RngStream rng(4, 0);
    for (int trial = 0; trial < 50; ++trial) {
        const auto pat = random_pattern(200, rng);
        const double r = 0.2 + rng.uniform();
        EXPECT_LE(count_in(pat, Ball(p2(0, 0), r)), count_in(pat, Ball(p2(0, 0), r + 0.3)));
        EXPECT_LE(count_in(pat, Box(p2(-r, -r), p2(r, r))), count_in(pat, Box(p2(-r - 0.1, -r), p2(r, r + 0.1))));
    }
}

TEST(RngStream, Deterministic)
{
    RngStream a(42, 7), b(42, 7), c(42, 8), d(43, 7);
    bool differs_c = false, differs_d = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a();
        EXPECT_EQ(x, b());
        differs_c |= x != c();
        differs_d |= x != d();
    }
    EXPECT_TRUE(differs_c);
    EXPECT_TRUE(differs_d);
}

TEST(RngStream, SubstreamIgnoresConsumption)
{
    RngStream a(5, 1), b(5, 1);
    for (int i = 0; i < 10; ++i)
        (void)b();
    RngStream sa = a.substream(3), sb = b.substream(3);
    for (int i = 0; i < 10; ++i)
        EXPECT_EQ(sa(), sb());
}

TEST(RngStream, UniformAndBelowRanges)
{
    RngStream rng(6, 0);
    std::vector<int> hist(7, 0);
    for (int i = 0; i < 70000; ++i) {
        const double u = rng.uniform();
        ASSERT_GT(u, 0.0);
        ASSERT_LT(u, 1.0);
        ++hist[rng.below(7)];
    }
    for (int h : hist)
        EXPECT_NEAR(h, 10000, 4 * std::sqrt(10000 * 6.0 / 7.0));
}

TEST(RngStream, StreamsLookIndependent)
{
    // Correlation of uniforms from neighbouring substreams.
    const RngStream base(9, 0);
    RngStream a = base.substream(0), b = base.substream(1);
    const int n = 20000;
    double sab = 0;
    for (int i = 0; i < n; ++i)
        sab += (a.uniform() - 0.5) * (b.uniform() - 0.5);
    const double corr = sab / n * 12.0;
    EXPECT_LT(std::abs(corr), 4.0 / std::sqrt(n));
}

TEST(RunReplicates, IndependentOfThreadCount)
{
    const RngStream base(10, 2);
    auto fn = [](std::size_t i, RngStream& s) { return static_cast<double>(s() % 1000) + static_cast<double>(i); };
    const auto one = run_replicates(500, base, 1, fn);
    const auto many = run_replicates(500, base, 8, fn);
    EXPECT_EQ(one, many);
}

TEST(RunReplicates, FailureCarriesIndex)
{
    const RngStream base(11, 0);
    try {
        (void)run_replicates(100, base, 4, [](std::size_t i, RngStream&) -> double {
            if (i == 37 || i == 80)
                throw std::runtime_error("boom");
            return 0.0;
        });
        FAIL() << "expected ReplicateError";
    } catch (const ReplicateError& e) {
        EXPECT_EQ(e.index(), 37u);
    }
}

TEST(McEstimate, ConstantSampler)
{
    const auto r = mc_estimate([](RngStream&) { return 7.0; }, 100, 0.95, RngStream(1, 1));
    EXPECT_DOUBLE_EQ(r.mean, 7.0);
    EXPECT_DOUBLE_EQ(r.ci_half_width, 0.0);
    EXPECT_EQ(r.n_replicates, 100u);
    EXPECT_EQ(r.seed, 1u);
}

TEST(McEstimate, Bernoulli)
{
    // Hoeffding: P(|mean - 0.5| > 0.02) <= 2 exp(-2 * 10000 * 0.0004) ~ 7e-4.
    const auto r = mc_estimate([](RngStream& s) { return s.uniform() < 0.5 ? 1.0 : 0.0; }, 10000, 0.99,
                               RngStream(2, 1));
    EXPECT_NEAR(r.mean, 0.5, 0.02);
}

TEST(McEstimate, PoissonMoments)
{
    const auto r = mc_estimate(
        [](RngStream& s) {
            std::poisson_distribution<int> p(3.0);
            return p(s);
        },
        10000, 0.99, RngStream(3, 1));
    EXPECT_TRUE(r.covers(3.0)) << r.mean << " +- " << r.ci_half_width;
    // Var of the sample variance of Poisson(3): (mu + 2 mu^2) / n.
    EXPECT_NEAR(r.sd * r.sd, 3.0, 4 * std::sqrt((3.0 + 2 * 9.0) / 10000));
}

TEST(McEstimate, ValidatesArguments)
{
    EXPECT_THROW(mc_estimate([](RngStream&) { return 0.0; }, 1, 0.95, RngStream(1, 1)), Error);
    EXPECT_THROW(mc_estimate([](RngStream&) { return 0.0; }, 10, 1.5, RngStream(1, 1)), Error);
}

TEST(McEstimate, FailurePropagatesWithIndex)
{
    std::size_t calls = 0;
    auto sampler = [&](RngStream&) -> double {
        if (calls++ == 4)
            throw std::runtime_error("bad draw");
        return 1.0;
    };
    EXPECT_THROW(mc_estimate(sampler, 10, 0.95, RngStream(1, 1)), ReplicateError);
}

TEST(McEstimate, CoverageOverMetaTrials)
{
    const double conf = 0.95;
    int covered = 0;
    const RngStream root(77, 0);
    for (int t = 0; t < 200; ++t) {
        const auto r = mc_estimate(
            [](RngStream& s) {
                std::exponential_distribution<double> e(0.5);
                return e(s);
            },
            400, conf, root.substream(static_cast<std::uint64_t>(t)));
        covered += r.covers(2.0) ? 1 : 0;
    }
    EXPECT_GE(covered, static_cast<int>((conf - 0.03) * 200));
}

TEST(DispersionTest, PoissonDrawsAreConsistent)
{
    RngStream rng(12, 0);
    std::poisson_distribution<long long> p(5.0);
    std::vector<long long> v;
    for (int i = 0; i < 1000; ++i)
        v.push_back(p(rng));
    const auto r = dispersion_test(v, 0.01);
    EXPECT_TRUE(r.consistent_with_poisson);
    EXPECT_NEAR(r.index_of_dispersion, 1.0, 0.15);
}

TEST(DispersionTest, ConstantIsUnderdispersed)
{
    const auto r = dispersion_test(std::vector<long long>(1000, 5), 0.01);
    EXPECT_DOUBLE_EQ(r.index_of_dispersion, 0.0);
    EXPECT_FALSE(r.consistent_with_poisson);
}

TEST(DispersionTest, ScaledBernoulliIsOverdispersed)
{
    RngStream rng(13, 0);
    std::vector<long long> v;
    for (int i = 0; i < 1000; ++i)
        v.push_back(rng.uniform() < 0.5 ? 5 : 0);
    const auto r = dispersion_test(v, 0.01);
    EXPECT_NEAR(r.index_of_dispersion, 2.5, 0.2);
    EXPECT_FALSE(r.consistent_with_poisson);
}

TEST(DispersionTest, AllZeroAndTooFew)
{
    const auto r = dispersion_test(std::vector<long long>(50, 0), 0.01);
    EXPECT_TRUE(r.consistent_with_poisson);
    EXPECT_TRUE(std::isnan(r.index_of_dispersion));
    EXPECT_THROW(dispersion_test(std::vector<long long>(29, 1), 0.01), Error);
}

TEST(Tests, ChiSquareGoodnessOfFit)
{
    RngStream rng(14, 0);
    std::vector<double> obs(4, 0);
    for (int i = 0; i < 4000; ++i)
        obs[rng.below(4)] += 1;
    EXPECT_GT(chi_square_gof(obs, {0.25, 0.25, 0.25, 0.25}).p_value, 0.001);
    EXPECT_LT(chi_square_gof(obs, {0.4, 0.2, 0.2, 0.2}).p_value, 1e-6);
}

TEST(Tests, KolmogorovSmirnovTwoSample)
{
    RngStream rng(15, 0);
    std::normal_distribution<double> nd;
    std::vector<double> a, b, c;
    for (int i = 0; i < 2000; ++i) {
        a.push_back(nd(rng));
        b.push_back(nd(rng));
        c.push_back(nd(rng) + 0.3);
    }
    EXPECT_GT(ks_two_sample(a, b).p_value, 0.001);
    EXPECT_LT(ks_two_sample(a, c).p_value, 1e-6);
}

TEST(Tests, KolmogorovSurvivalKnownValues)
{
    // Q(1.36) ~ 0.049, Q(1.63) ~ 0.0098 (classical 5% and 1% points).
    EXPECT_NEAR(kolmogorov_survival(1.358), 0.05, 1e-3);
    EXPECT_NEAR(kolmogorov_survival(1.628), 0.01, 5e-4);
}

TEST(Tests, OlsSlopeAndQuantile)
{
    EXPECT_NEAR(ols_slope({0, 1, 2, 3}, {1, 3, 5, 7}), 2.0, 1e-12);
    EXPECT_DOUBLE_EQ(quantile({3, 1, 2}, 0.5), 2.0);
    EXPECT_DOUBLE_EQ(quantile({3, 1, 2}, 0.0), 1.0);
}

TEST(Io, FormatDouble)
{
    EXPECT_EQ(format_double(0.1), "0.1");
    EXPECT_EQ(format_double(2.0), "2");
    EXPECT_EQ(format_double(-1.5e-300), "-1.5e-300");
    EXPECT_EQ(format_double(std::nan("")), "nan");
}

TEST(Io, CsvQuoting)
{
    std::ostringstream os;
    CsvWriter csv(os);
    csv.field("plain").field("a,b").field("say \"hi\"").field(1.5).field(true);
    csv.end_row();
    EXPECT_EQ(os.str(), "plain,\"a,b\",\"say \"\"hi\"\"\",1.5,1\n");
}

TEST(Io, Fnv1a)
{
    EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
    EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}
