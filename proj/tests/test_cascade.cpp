// Copyright 2026 The cascadelab Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "cascadelab/cascade.hpp"

using namespace cascadelab;

namespace {

CascadeConfig line_config(double c, double padding, int n_max, const ClusterModel& model)
{
    return CascadeConfig{c, Box({0.0}, {10.0}), padding, model, n_max};
}

CascadeConfig plane_config(double c, double padding, int n_max, const ClusterModel& model)
{
    return CascadeConfig{c, Box({0.0, 0.0}, {6.0, 6.0}), padding, model, n_max};
}

ClusterModel counts02(std::size_t d)
{
    return ClusterModel::compound(CountLaw::table({0.5, 0.0, 0.5}), laws::gaussian(d, 0.5));
}

std::vector<double> poisson_samples(double mean, std::size_t n, RngStream& rng)
{
    std::poisson_distribution<long long> p(mean);
    std::vector<double> v(n);
    for (auto& x : v)
        x = mean > 0 ? static_cast<double>(p(rng)) : 0.0;
    return v;
}

} // namespace

TEST(CascadeConfig, ValidationRejectsBadValues)
{
    auto cfg = line_config(1.0, 0.0, 2, counts02(1));
    EXPECT_NO_THROW(cfg.validate());
    auto bad = cfg;
    bad.c = 0;
    EXPECT_THROW(bad.validate(), Error);
    bad = cfg;
    bad.padding = -1;
    EXPECT_THROW(bad.validate(), Error);
    bad = cfg;
    bad.n_max = -1;
    EXPECT_THROW(bad.validate(), Error);
    bad = cfg;
    bad.model = counts02(2);
    EXPECT_THROW(bad.validate(), DimensionMismatch);
}

TEST(CascadeConfig, KappaBallIsCenteredInTheWindow)
{
    const auto cfg = plane_config(1.0, 0.0, 1, counts02(2));
    const auto b = kappa_ball(cfg, 1.5);
    EXPECT_EQ(b.center[0], 3.0);
    EXPECT_EQ(b.center[1], 3.0);
    EXPECT_EQ(b.radius, 1.5);
    auto round = cfg;
    round.window = Ball(Point{1.0, -1.0}, 4.0);
    EXPECT_EQ(kappa_ball(round, 2.0).center[1], -1.0);
}

TEST(ActiveSet, MarkThreshold)
{
    EXPECT_TRUE(active_at(1.0, 0));
    EXPECT_TRUE(active_at(0.5, 1));
    EXPECT_FALSE(active_at(0.5000001, 1));
    EXPECT_TRUE(active_at(0.25, 3));
    EXPECT_FALSE(active_at(0.3, 3));
}

TEST(CascadeState, ActiveSetShrinksAndNeverReactivates)
{
    RngStream rng(1, 0);
    const auto cfg = line_config(2.0, 1.0, 6, counts02(1));
    auto s = init_cascade(cfg, rng);
    std::vector<bool> prev(s.immigrants().size(), true);
    for (int n = 0; n <= cfg.n_max; ++n) {
        for (std::size_t i = 0; i < s.immigrants().size(); ++i) {
            const bool a = s.is_active(i);
            EXPECT_TRUE(prev[i] || !a);
            if (!a) {
                EXPECT_EQ(s.immigrants()[i].tree.size(), 1u);
            } else {
                EXPECT_EQ(s.immigrants()[i].tree.max_generation(), n);
            }
            prev[i] = a;
        }
        if (n < cfg.n_max)
            s = advance(std::move(s), rng);
    }
    EXPECT_EQ(s.n(), cfg.n_max);
    EXPECT_THROW(advance(s, rng), Error);
}

TEST(CascadeState, ImmigrantsLieInTheSimulationRegion)
{
    RngStream rng(2, 0);
    const auto cfg = plane_config(1.0, 2.0, 0, counts02(2));
    const auto s = init_cascade(cfg, rng);
    const Region sim = cfg.simulation_region();
    for (const auto& im : s.immigrants()) {
        EXPECT_TRUE(contains(sim, im.location));
        EXPECT_GE(im.mark, 0.0);
        EXPECT_LE(im.mark, 1.0);
    }
    EXPECT_GT(s.immigrants().size(), 50u);
}

TEST(CascadeState, QueriesOutsideTheWindowAreRejected)
{
    RngStream rng(3, 0);
    const auto cfg = plane_config(1.0, 1.0, 0, counts02(2));
    const auto s = init_cascade(cfg, rng);
    EXPECT_THROW(kappa(s, Ball(Point{0.5, 0.5}, 1.0)), Error);
    EXPECT_THROW(xi_count(s, Box({-1.0, 0.0}, {1.0, 1.0})), Error);
    EXPECT_THROW(active_immigrants_in(s, Ball(Point{3.0}, 1.0)), DimensionMismatch);
    EXPECT_NO_THROW(kappa(s, Ball(Point{3.0, 3.0}, 3.0)));
}

TEST(CascadeState, NoDisplacementKappaIsActiveImmigrantCount)
{
    RngStream rng(4, 0);
    const auto cfg = plane_config(3.0, 0.0, 4, ClusterModel::no_displacement(CountLaw::poisson(1.0), 2));
    auto s = init_cascade(cfg, rng);
    const Ball b = kappa_ball(cfg, 2.0);
    for (int n = 0; n <= cfg.n_max; ++n) {
        EXPECT_EQ(kappa(s, b), active_immigrants_in(s, b));
        EXPECT_GE(xi_count(s, b), kappa(s, b));
        if (n < cfg.n_max)
            s = advance(std::move(s), rng);
    }
}

TEST(CascadeState, PointsAreTheActiveTrees)
{
    RngStream rng(5, 0);
    const auto cfg = line_config(1.0, 2.0, 3, counts02(1));
    auto s = init_cascade(cfg, rng);
    for (int n = 0; n < 3; ++n)
        s = advance(std::move(s), rng);
    std::size_t total = 0;
    for (std::size_t i = 0; i < s.immigrants().size(); ++i)
        if (s.is_active(i))
            total += s.immigrants()[i].tree.size();
    EXPECT_EQ(s.points().size(), total);
    EXPECT_EQ(xi_count(s, cfg.window), static_cast<long long>(count_in(s.points(), cfg.window)));
}

TEST(CascadeTrace, MatchesStepwiseStateOnTheSameStream)
{
    const auto cfg = plane_config(2.0, 1.5, 5, counts02(2));
    const CascadeProbes probes{{kappa_ball(cfg, 1.0), kappa_ball(cfg, 2.5)},
                               {Box({1.0, 1.0}, {5.0, 5.0}), Ball(Point{3.0, 3.0}, 2.0)}};
    for (std::uint64_t rep = 0; rep < 20; ++rep) {
        RngStream a(6, rep), b(6, rep);
        const auto tr = trace_cascade(cfg, probes, a);
        ASSERT_EQ(tr.kappa.size(), static_cast<std::size_t>(cfg.n_max + 1));
        auto s = init_cascade(cfg, b);
        for (int n = 0; n <= cfg.n_max; ++n) {
            const auto k = static_cast<std::size_t>(n);
            for (std::size_t j = 0; j < probes.kappa_balls.size(); ++j)
                EXPECT_EQ(tr.kappa[k][j], kappa(s, probes.kappa_balls[j])) << "n=" << n;
            for (std::size_t j = 0; j < probes.count_regions.size(); ++j) {
                EXPECT_EQ(tr.xi[k][j], xi_count(s, probes.count_regions[j])) << "n=" << n;
                EXPECT_EQ(tr.active[k][j], active_immigrants_in(s, probes.count_regions[j])) << "n=" << n;
            }
            if (n < cfg.n_max)
                s = advance(std::move(s), b);
        }
    }
}

TEST(CascadeTrace, RejectsProbesOutsideTheWindow)
{
    RngStream rng(7, 0);
    const auto cfg = line_config(1.0, 1.0, 2, counts02(1));
    EXPECT_THROW(trace_cascade(cfg, {{Ball(Point{9.5}, 1.0)}, {}}, rng), Error);
    EXPECT_THROW(trace_cascade(cfg, {{}, {Box({-1.0}, {2.0})}}, rng), Error);
    EXPECT_THROW(trace_cascade(cfg, {}, rng, 3), Error);
    EXPECT_THROW(trace_cascade(cfg, {}, rng, -1), Error);
}

TEST(CascadeTrace, RestrictedStartHasTheSameLaw)
{
    const auto cfg = line_config(1.0, 3.0, 8, counts02(1));
    const CascadeProbes probes{{kappa_ball(cfg, 1.0)}, {Box({2.0}, {8.0})}};
    const int n_from = 4;
    const std::size_t reps = 6000;
    std::vector<std::vector<long long>> full(3), restricted(3);
    const RngStream base_a(8, 0), base_b(8, 1);
    for (std::size_t r = 0; r < reps; ++r) {
        RngStream a = base_a.substream(r), b = base_b.substream(r);
        const auto ta = trace_cascade(cfg, probes, a);
        const auto tb = trace_cascade(cfg, probes, b, n_from);
        ASSERT_EQ(tb.kappa.size(), static_cast<std::size_t>(cfg.n_max - n_from + 1));
        full[0].push_back(ta.kappa.back()[0]);
        full[1].push_back(ta.xi.back()[0]);
        full[2].push_back(ta.active[n_from][0]);
        restricted[0].push_back(tb.kappa.back()[0]);
        restricted[1].push_back(tb.xi.back()[0]);
        restricted[2].push_back(tb.active.front()[0]);
    }
    for (int q = 0; q < 3; ++q)
        EXPECT_GT(chi_square_two_sample(full[q], restricted[q]).p_value, 1e-3) << "quantity " << q;
}

TEST(CascadeLaw, ActiveImmigrantsArePoissonWithThinnedIntensity)
{
    const auto cfg = line_config(2.0, 0.0, 5, ClusterModel::poisson(laws::gaussian(1)));
    const Region b = Box({2.0}, {6.0});
    const CascadeProbes probes{{}, {b}};
    const RngStream base(9, 0);
    auto traces = run_replicates(4000, base, 1, [&](std::size_t, RngStream& s) {
        return trace_cascade(cfg, probes, s).active;
    });
    for (int n : {0, 2, 5}) {
        std::vector<long long> v;
        std::vector<double> d;
        for (const auto& t : traces) {
            v.push_back(t[static_cast<std::size_t>(n)][0]);
            d.push_back(static_cast<double>(v.back()));
        }
        const auto est = summarize(d, 0.99, 9);
        EXPECT_TRUE(est.covers(2.0 * 4.0 / (n + 1))) << "n=" << n << " mean=" << est.mean;
        EXPECT_TRUE(dispersion_test(v, 0.001).consistent_with_poisson) << "n=" << n;
    }
}

TEST(CascadeLaw, IntensityIsConserved)
{
    const auto model = ClusterModel::poisson(laws::gaussian(1));
    const int n_max = 6;
    const double pad = auto_padding(model, n_max, RngStream(10, 1), 0.9999, 4000);
    const auto cfg = line_config(1.5, pad, n_max, model);
    const Region b = Box({3.0}, {7.0});
    const CascadeProbes probes{{}, {b}};
    const RngStream base(10, 0);
    auto traces = run_replicates(4000, base, 1, [&](std::size_t, RngStream& s) {
        return trace_cascade(cfg, probes, s).xi;
    });
    for (int n = 0; n <= n_max; ++n) {
        std::vector<double> v;
        for (const auto& t : traces)
            v.push_back(static_cast<double>(t[static_cast<std::size_t>(n)][0]));
        const auto est = summarize(v, 0.99, 10);
        EXPECT_TRUE(est.covers(1.5 * 4.0)) << "n=" << n << " mean=" << est.mean << " +- " << est.ci_half_width;
    }
}

TEST(CascadeLaw, NoDisplacementKappaMeanIsThinnedIntensity)
{
    const auto cfg = plane_config(1.0, 0.0, 9, ClusterModel::no_displacement(CountLaw::table({0.5, 0.0, 0.5}), 2));
    const double vol = std::numbers::pi * 4.0;
    for (int n : {0, 3, 9}) {
        const auto est = estimate_kappa_mean(cfg, 2.0, n, 3000, RngStream(11, static_cast<std::uint64_t>(n)));
        EXPECT_TRUE(est.covers(vol / (n + 1))) << "n=" << n << " mean=" << est.mean;
    }
}

TEST(CascadeLaw, KappaMeanDoesNotDependOnThreads)
{
    const auto cfg = line_config(1.0, 2.0, 4, counts02(1));
    const RngStream base(12, 0);
    const auto one = estimate_kappa_mean(cfg, 1.0, 4, 300, base, 1);
    const auto four = estimate_kappa_mean(cfg, 1.0, 4, 300, base, 4);
    EXPECT_EQ(one.mean, four.mean);
    EXPECT_EQ(one.ci_half_width, four.ci_half_width);
    EXPECT_THROW(estimate_kappa_mean(cfg, 1.0, 5, 300, base), Error);
}

TEST(CascadeLaw, ClusterInvarianceStatisticIsBounded)
{
    const auto model = counts02(1);
    const double pad = auto_padding(model, 8, RngStream(13, 1));
    const auto cfg = line_config(1.0, pad, 8, model);
    const Region b = Box({4.0}, {6.0});
    for (int n : {1, 4, 8}) {
        const auto est = mc_estimate(
            [&](RngStream& s) {
                auto st = init_cascade(cfg, s);
                for (int k = 0; k < n; ++k)
                    st = advance(std::move(st), s);
                return cluster_invariance_stat(st, b, s);
            },
            1500, 0.99, RngStream(13, static_cast<std::uint64_t>(n)));
        EXPECT_LE(est.mean, 2.0 * 1.0 * 2.0 / (n + 1) + est.ci_half_width) << "n=" << n << " mean=" << est.mean;
    }
}

TEST(Padding, AutoPaddingGrowsWithGenerations)
{
    const auto model = ClusterModel::poisson(laws::gaussian(2));
    const double p2 = auto_padding(model, 2, RngStream(14, 0), 0.99, 2000);
    const double p8 = auto_padding(model, 8, RngStream(14, 0), 0.99, 2000);
    EXPECT_GT(p2, 0.0);
    EXPECT_GT(p8, p2);
    EXPECT_EQ(auto_padding(ClusterModel::no_displacement(CountLaw::poisson(1.0), 2), 5, RngStream(14, 1)), 0.0);
}

TEST(Padding, DiagnosticAcceptsAutoPadding)
{
    const auto model = ClusterModel::poisson(laws::gaussian(1));
    const double pad = auto_padding(model, 6, RngStream(15, 0));
    const auto cfg = line_config(1.0, pad, 6, model);
    const auto d = padding_diagnostic(cfg, 1.0, 6, 2000, RngStream(15, 1));
    EXPECT_EQ(d.doubled, 2 * pad);
    EXPECT_TRUE(d.ok) << d.at_padding.mean << " vs " << d.at_doubled.mean;
}

TEST(Trend, ThinnedCountsDecay)
{
    RngStream rng(16, 0);
    std::vector<int> ns;
    std::vector<std::vector<double>> samples;
    for (int n = 0; n <= 32; n += 2) {
        ns.push_back(n);
        samples.push_back(poisson_samples(12.0 / (n + 1), 400, rng));
    }
    const auto t = classify_kappa_trend(ns, samples);
    EXPECT_EQ(t.trend, KappaTrend::Decaying) << t.limit << " [" << t.limit_lower << ", " << t.limit_upper << "]";
    EXPECT_LT(t.slope, -0.5);
}

TEST(Trend, SlowApproachToAPositiveLimitIsBounded)
{
    RngStream rng(17, 0);
    std::vector<int> ns;
    std::vector<std::vector<double>> samples;
    for (int n = 0; n <= 32; n += 2) {
        ns.push_back(n);
        samples.push_back(poisson_samples(1.0 + 4.0 / std::sqrt(n + 1.0), 400, rng));
    }
    const auto t = classify_kappa_trend(ns, samples);
    EXPECT_EQ(t.trend, KappaTrend::Bounded) << t.limit << " [" << t.limit_lower << ", " << t.limit_upper << "]";
    EXPECT_LE(t.limit_lower, t.limit);
    EXPECT_GE(t.limit_upper, t.limit);
    const auto wide = classify_kappa_trend(ns, samples, TrendOptions{0.99});
    EXPECT_LE(wide.limit_lower, 1.0);
    EXPECT_GE(wide.limit_upper, 1.0);
}

TEST(Trend, IdenticallyZeroTailDecays)
{
    std::vector<int> ns{0, 1, 2, 3, 4, 5};
    std::vector<std::vector<double>> samples(6, std::vector<double>(10, 0.0));
    samples[0][0] = 3;
    EXPECT_EQ(classify_kappa_trend(ns, samples).trend, KappaTrend::Decaying);
}

TEST(Trend, NoisyFlatDataIsUnclear)
{
    RngStream rng(18, 0);
    std::vector<int> ns;
    std::vector<std::vector<double>> samples;
    for (int n = 0; n <= 16; ++n) {
        ns.push_back(n);
        samples.push_back(poisson_samples(0.05, 20, rng));
    }
    EXPECT_EQ(classify_kappa_trend(ns, samples).trend, KappaTrend::Unclear);
}

TEST(Trend, DeterministicGivenSeed)
{
    RngStream rng(19, 0);
    std::vector<int> ns{0, 2, 4, 6, 8};
    std::vector<std::vector<double>> samples;
    for (int n : ns)
        samples.push_back(poisson_samples(3.0 / (n + 1), 50, rng));
    const auto a = classify_kappa_trend(ns, samples), b = classify_kappa_trend(ns, samples);
    EXPECT_EQ(a.limit_lower, b.limit_lower);
    EXPECT_EQ(a.limit_upper, b.limit_upper);
}

TEST(Trend, RejectsMalformedInput)
{
    std::vector<std::vector<double>> three(3, std::vector<double>(5, 1.0));
    EXPECT_THROW(classify_kappa_trend({0, 1, 2}, three), Error);
    std::vector<std::vector<double>> single(4, std::vector<double>(1, 1.0));
    EXPECT_THROW(classify_kappa_trend({0, 1, 2, 3}, single), Error);
    std::vector<std::vector<double>> ragged(4, std::vector<double>(5, 1.0));
    ragged[2].pop_back();
    EXPECT_THROW(classify_kappa_trend({0, 1, 2, 3}, ragged), Error);
    EXPECT_THROW(classify_kappa_trend({0, 1, 2, 3}, std::vector<std::vector<double>>(4, std::vector<double>(5, 1.0)),
                                      TrendOptions{1.5}),
                 Error);
}

TEST(Snapshot, CsvColumns)
{
    RngStream rng(20, 0);
    const auto cfg = plane_config(0.2, 0.0, 1, counts02(2));
    auto s = init_cascade(cfg, rng);
    s = advance(std::move(s), rng);
    std::ostringstream os;
    write_cascade_snapshot(os, s, 7, true, {"config_hash", "seed"}, {"abc", "20"});
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "config_hash,seed,replicate,n,immigrant_id,active,node_id,generation,x1,x2");
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        ++rows;
        EXPECT_EQ(line.rfind("abc,20,7,1,", 0), 0u) << line;
    }
    std::size_t expected = 0;
    for (const auto& im : s.immigrants())
        expected += im.tree.size();
    EXPECT_EQ(rows, expected);
}
