// Copyright 2026 The cascadelab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "branching.hpp"
#include "clusters.hpp"
#include "geometry.hpp"
#include "io.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace cascadelab {

struct CascadeConfig
{
    double c = 1.0;          // immigrant intensity
    Region window;           // observation region
    double padding = 0.0;    // simulation margin around the window
    ClusterModel model;
    int n_max = 0;

    Region simulation_region() const { return dilate(window, padding); }

    void validate() const
    {
        if (!(c > 0) || !std::isfinite(c))
            throw Error("immigrant intensity must be positive and finite");
        if (!(padding >= 0) || !std::isfinite(padding))
            throw Error("padding must be finite and nonnegative");
        if (n_max < 0)
            throw Error("n_max must be nonnegative");
        if (dim_of(window) != model.dim())
            throw DimensionMismatch(model.dim(), dim_of(window));
    }
};

/// Immigrant x is kept in mu_n iff U_x <= 1/(n+1).
inline bool active_at(double mark, int n) noexcept
{
    return mark <= 1.0 / static_cast<double>(n + 1);
}

struct Immigrant
{
    Point location;
    double mark = 0;
    GenealogyTree tree;
};

/// One coupled realization of (mu_n, xi-bar_n) on the padded window.
/// Thinned immigrants keep only their root; they never reactivate.
class CascadeState
{
  public:
    explicit CascadeState(std::shared_ptr<const CascadeConfig> cfg) : cfg_(std::move(cfg)) {}

    const CascadeConfig& config() const noexcept { return *cfg_; }
    int n() const noexcept { return n_; }
    const std::vector<Immigrant>& immigrants() const noexcept { return imm_; }
    bool is_active(std::size_t i) const noexcept { return active_at(imm_[i].mark, n_); }

    std::size_t active_count() const noexcept
    {
        std::size_t k = 0;
        for (std::size_t i = 0; i < imm_.size(); ++i)
            k += is_active(i) ? 1 : 0;
        return k;
    }

    /// All points of xi-bar_n (active trees) on the simulation region.
    PointPattern points() const
    {
        PointPattern p(cfg_->model.dim());
        for (std::size_t i = 0; i < imm_.size(); ++i)
            if (is_active(i))
                for (const auto& node : imm_[i].tree.nodes())
                    p.add(node.location);
        return p;
    }

  private:
    friend CascadeState init_cascade(std::shared_ptr<const CascadeConfig>, RngStream&);
    friend CascadeState advance(CascadeState, RngStream&);

    std::shared_ptr<const CascadeConfig> cfg_;
    int n_ = 0;
    std::vector<Immigrant> imm_;
};

inline CascadeState init_cascade(std::shared_ptr<const CascadeConfig> cfg, RngStream& rng)
{
    cfg->validate();
    const Region sim = cfg->simulation_region();
    CascadeState s(cfg);
    std::poisson_distribution<long long> count(cfg->c * volume(sim));
    const long long k = count(rng);
    s.imm_.reserve(static_cast<std::size_t>(k));
    for (long long i = 0; i < k; ++i) {
        const Point x = sample_uniform(sim, rng);
        const double u = rng.uniform();
        s.imm_.push_back({x, u, GenealogyTree(x)});
    }
    return s;
}

inline CascadeState init_cascade(const CascadeConfig& cfg, RngStream& rng)
{
    return init_cascade(std::make_shared<const CascadeConfig>(cfg), rng);
}

/// Step n -> n+1: thin at level 1/(n+2), then grow the surviving trees.
inline CascadeState advance(CascadeState s, RngStream& rng)
{
    if (s.n_ >= s.cfg_->n_max)
        throw Error("cascade already at n_max = " + std::to_string(s.cfg_->n_max));
    const int next = s.n_ + 1;
    for (auto& im : s.imm_) {
        if (!active_at(im.mark, s.n_))
            continue;
        if (active_at(im.mark, next))
            im.tree.grow(s.cfg_->model, rng);
        else
            im.tree.prune_to_root();
    }
    s.n_ = next;
    return s;
}

namespace detail {

inline void require_within_window(const CascadeState& s, const Region& region)
{
    if (dim_of(region) != s.config().model.dim())
        throw DimensionMismatch(s.config().model.dim(), dim_of(region));
    if (!region_within(region, s.config().window))
        throw Error("query region must lie within the observation window");
}

} // namespace detail

/// kappa-bar_n^r: active immigrant trees with at least one point in the ball.
inline long long kappa(const CascadeState& s, const Ball& ball)
{
    detail::require_within_window(s, ball);
    long long k = 0;
    for (std::size_t i = 0; i < s.immigrants().size(); ++i) {
        if (!s.is_active(i))
            continue;
        for (const auto& node : s.immigrants()[i].tree.nodes())
            if (ball.contains(node.location)) {
                ++k;
                break;
            }
    }
    return k;
}

/// xi-bar_n(region).
inline long long xi_count(const CascadeState& s, const Region& region)
{
    detail::require_within_window(s, region);
    long long k = 0;
    for (std::size_t i = 0; i < s.immigrants().size(); ++i)
        if (s.is_active(i))
            k += static_cast<long long>(s.immigrants()[i].tree.count_in(region));
    return k;
}

/// mu_n(region).
inline long long active_immigrants_in(const CascadeState& s, const Region& region)
{
    detail::require_within_window(s, region);
    long long k = 0;
    for (std::size_t i = 0; i < s.immigrants().size(); ++i)
        if (s.is_active(i) && contains(region, s.immigrants()[i].location))
            ++k;
    return k;
}

/// |xi-bar_n(B) - sum_p chi^p(B)| where chi^p is the cluster field of the
/// cascade: an interior node's cluster is its children in the tree and a
/// leaf gets a fresh cluster (its generation n+1). Its mean is at most
/// 2 c vol(B) / (n+1).
inline long long cluster_invariance_stat(const CascadeState& s, const Region& region, RngStream& rng)
{
    detail::require_within_window(s, region);
    const auto& model = s.config().model;
    long long direct = 0, shifted = 0;
    std::vector<Point> kids;
    for (std::size_t i = 0; i < s.immigrants().size(); ++i) {
        if (!s.is_active(i))
            continue;
        const auto& tree = s.immigrants()[i].tree;
        const auto& nodes = tree.nodes();
        for (std::size_t j = 0; j < nodes.size(); ++j) {
            const long long in = contains(region, nodes[j].location) ? 1 : 0;
            direct += in;
            if (j != GenealogyTree::root_index())
                shifted += in;
        }
        for (const auto& leaf : tree.leaves()) {
            kids.clear();
            model.sample_children(leaf.location, rng, kids);
            for (const auto& q : kids)
                shifted += contains(region, q) ? 1 : 0;
        }
    }
    return std::abs(direct - shifted);
}

/// Ball of radius r at the window center; by stationarity it plays the
/// role of B_0^r.
inline Ball kappa_ball(const CascadeConfig& cfg, double r)
{
    if (const auto* b = std::get_if<Ball>(&cfg.window))
        return Ball(b->center, r);
    const auto& bx = std::get<Box>(cfg.window);
    return Ball((bx.lo + bx.hi) * 0.5, r);
}

struct CascadeProbes
{
    std::vector<Ball> kappa_balls;
    std::vector<Region> count_regions;
};

/// Per-step counters of one replicate, indexed [n][probe].
struct CascadeTrace
{
    std::vector<std::vector<long long>> kappa;
    std::vector<std::vector<long long>> xi;
    std::vector<std::vector<long long>> active;
};

/// Runs one cascade from n = 0 to n_max and records kappa, xi and mu_n
/// counts at every step. Only the current leaves of each tree are stored.
/// Consumes the stream exactly like init_cascade followed by advance, so
/// both paths give the same realization for the same stream.
///
/// With n_from > 0 only steps n_from..n_max are recorded (entry 0 is step
/// n_from) and only the immigrants still active at n_from are simulated: a
/// Poisson process of intensity c/(n_from+1) with marks uniform on
/// (0, 1/(n_from+1)). The recorded steps have the same law.
inline CascadeTrace trace_cascade(const CascadeConfig& cfg, const CascadeProbes& probes, RngStream& rng,
                                  int n_from = 0)
{
    cfg.validate();
    if (n_from < 0 || n_from > cfg.n_max)
        throw Error("n_from must lie in [0, n_max]");
    for (const auto& b : probes.kappa_balls)
        if (!region_within(b, cfg.window))
            throw Error("kappa ball must lie within the observation window");
    for (const auto& r : probes.count_regions)
        if (!region_within(r, cfg.window))
            throw Error("count region must lie within the observation window");

    const Region sim = cfg.simulation_region();
    const std::size_t nb = probes.kappa_balls.size(), nr = probes.count_regions.size();
    struct Track
    {
        Point location;
        double mark;
        std::vector<Point> leaves;
        std::vector<char> hit;
        std::vector<long long> count;
    };

    const double keep = 1.0 / (n_from + 1.0);
    std::poisson_distribution<long long> pois(cfg.c * volume(sim) * keep);
    const long long k = pois(rng);
    std::vector<Track> tr;
    tr.reserve(static_cast<std::size_t>(k));
    std::vector<long long> kap(nb, 0), xi(nr, 0), act(nr, 0);

    auto absorb = [&](Track& t, const Point& p) {
        for (std::size_t b = 0; b < nb; ++b)
            if (!t.hit[b] && probes.kappa_balls[b].contains(p)) {
                t.hit[b] = 1;
                ++kap[b];
            }
        for (std::size_t j = 0; j < nr; ++j)
            if (contains(probes.count_regions[j], p)) {
                ++t.count[j];
                ++xi[j];
            }
    };

    for (long long i = 0; i < k; ++i) {
        const Point x = sample_uniform(sim, rng);
        const double u = n_from == 0 ? rng.uniform() : rng.uniform() * keep;
        tr.push_back({x, u, {x}, std::vector<char>(nb, 0), std::vector<long long>(nr, 0)});
        absorb(tr.back(), x);
        for (std::size_t j = 0; j < nr; ++j)
            act[j] += contains(probes.count_regions[j], x) ? 1 : 0;
    }

    CascadeTrace out;
    auto record = [&] {
        out.kappa.push_back(kap);
        out.xi.push_back(xi);
        out.active.push_back(act);
    };
    if (n_from == 0)
        record();

    std::vector<Point> next;
    for (int n = 0; n < cfg.n_max; ++n) {
        for (auto& t : tr) {
            if (!active_at(t.mark, n))
                continue;
            if (!active_at(t.mark, n + 1)) {
                for (std::size_t b = 0; b < nb; ++b)
                    kap[b] -= t.hit[b];
                for (std::size_t j = 0; j < nr; ++j) {
                    xi[j] -= t.count[j];
                    act[j] -= contains(probes.count_regions[j], t.location) ? 1 : 0;
                }
                t.leaves.clear();
                t.leaves.shrink_to_fit();
                continue;
            }
            next.clear();
            for (const auto& leaf : t.leaves)
                cfg.model.sample_children(leaf, rng, next);
            for (const auto& p : next)
                absorb(t, p);
            t.leaves.swap(next);
        }
        if (n + 1 >= n_from)
            record();
    }
    return out;
}

/// Monte Carlo estimate of E kappa-bar_n^r.
inline EstimatorResult estimate_kappa_mean(const CascadeConfig& cfg, double r, int n, std::size_t replicates,
                                           const RngStream& rng, std::size_t threads = 1,
                                           double confidence = 0.99)
{
    if (n < 0 || n > cfg.n_max)
        throw Error("n must lie in [0, n_max]");
    CascadeConfig local = cfg;
    local.n_max = n;
    const CascadeProbes probes{{kappa_ball(cfg, r)}, {}};
    return mc_estimate([&](RngStream& s) {
        return static_cast<double>(trace_cascade(local, probes, s).kappa.back()[0]);
    }, replicates, confidence, rng, threads);
}

/// Padding from a pilot of cumulative trees: the q-quantile of the largest
/// distance from the root over generations 0..n.
inline double auto_padding(const ClusterModel& model, int n, const RngStream& rng, double q = 0.999,
                           std::size_t pilot = 4000, std::size_t threads = 1)
{
    const Point origin = Point::zero(model.dim());
    auto reach = run_replicates(pilot, rng, threads, [&](std::size_t, RngStream& s) {
        const auto tree = simulate_cumulative_brw(model, origin, n, s);
        double m = 0;
        for (const auto& node : tree.nodes())
            m = std::max(m, node.location.norm());
        return m;
    });
    return quantile(std::move(reach), q);
}

struct PaddingDiagnostic
{
    double padding = 0;
    double doubled = 0;
    EstimatorResult at_padding;
    EstimatorResult at_doubled;
    bool ok = false;   // |difference| below the combined CI width
};

/// Re-estimates E kappa-bar_n^r with twice the padding (or padding 1 when
/// the padding is zero) and compares.
inline PaddingDiagnostic padding_diagnostic(const CascadeConfig& cfg, double r, int n, std::size_t replicates,
                                            const RngStream& rng, std::size_t threads = 1)
{
    PaddingDiagnostic d;
    d.padding = cfg.padding;
    d.doubled = cfg.padding > 0 ? 2 * cfg.padding : 1.0;
    d.at_padding = estimate_kappa_mean(cfg, r, n, replicates, rng.substream(0), threads);
    CascadeConfig wide = cfg;
    wide.padding = d.doubled;
    d.at_doubled = estimate_kappa_mean(wide, r, n, replicates, rng.substream(1), threads);
    const double w = 2 * std::hypot(d.at_padding.ci_half_width, d.at_doubled.ci_half_width);
    d.ok = std::abs(d.at_padding.mean - d.at_doubled.mean) <= w;
    return d;
}

enum class KappaTrend { Decaying, Bounded, Unclear };

inline const char* to_string(KappaTrend t) noexcept
{
    switch (t) {
    case KappaTrend::Decaying: return "decaying";
    case KappaTrend::Bounded: return "bounded";
    case KappaTrend::Unclear: return "unclear";
    }
    return "?";
}

struct TrendReport
{
    KappaTrend trend = KappaTrend::Unclear;
    double slope = 0;         // d log E kappa / d log(n+1) over the second half
    double limit = 0;         // intercept of E kappa ~ a + b (n+1)^(-1/2)
    double limit_lower = 0;   // bootstrap band for the intercept
    double limit_upper = 0;
};

struct TrendOptions
{
    double band = 0.95;
    std::size_t bootstrap = 1000;
    std::uint64_t seed = 1;
};

/// Classifies the tail of E kappa-bar_n^r from per-replicate samples
/// (samples[i][j] is replicate j at step ns[i]).
///
/// Over the second half of the steps the means are fitted by
/// a + b (n+1)^(-1/2) and a is read as the extrapolated limit. Bounded when
/// the whole bootstrap band of a (replicates resampled jointly across n) is
/// above zero, decaying when it is below zero (or the tail is identically
/// zero), unclear otherwise. Decay like
/// 1/(n+1) gives a < 0; a slower approach to a positive limit gives a > 0.
inline TrendReport classify_kappa_trend(const std::vector<int>& ns, const std::vector<std::vector<double>>& samples,
                                        const TrendOptions& opt = {})
{
    if (ns.size() != samples.size() || ns.size() < 4)
        throw Error("trend classification needs at least 4 steps");
    const std::size_t reps = samples.front().size();
    if (reps < 2)
        throw Error("trend classification needs at least 2 replicates");
    for (const auto& row : samples)
        if (row.size() != reps)
            throw Error("every step needs the same replicates");
    if (!(opt.band > 0 && opt.band < 1))
        throw Error("band must lie in (0, 1)");

    std::vector<std::size_t> tail;
    for (std::size_t i = 0; i < ns.size(); ++i)
        if (2 * ns[i] >= ns.back())
            tail.push_back(i);
    if (tail.size() < 2)
        throw Error("trend classification needs at least 2 steps in the second half");

    auto fit = [&](const std::vector<std::size_t>& idx, double* slope) {
        std::vector<double> x, y, lx, ly;
        for (std::size_t i : tail) {
            double m = 0;
            for (std::size_t j : idx)
                m += samples[i][j];
            m /= static_cast<double>(idx.size());
            x.push_back(1.0 / std::sqrt(ns[i] + 1.0));
            y.push_back(m);
            if (m > 0) {
                lx.push_back(std::log(ns[i] + 1.0));
                ly.push_back(std::log(m));
            }
        }
        if (slope)
            *slope = lx.size() >= 2 ? ols_slope(lx, ly) : -std::numeric_limits<double>::infinity();
        const double b = ols_slope(x, y);
        const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
        const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
        return my - b * mx;
    };

    TrendReport t;
    std::vector<std::size_t> idx(reps);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    t.limit = fit(idx, &t.slope);
    RngStream boot(opt.seed, 0x7472656e64ULL);
    std::vector<double> stats;
    stats.reserve(opt.bootstrap);
    for (std::size_t b = 0; b < opt.bootstrap; ++b) {
        for (auto& i : idx)
            i = boot.below(reps);
        stats.push_back(fit(idx, nullptr));
    }
    const double tail_mass = (1 - opt.band) / 2;
    t.limit_lower = stats.empty() ? t.limit : quantile(stats, tail_mass);
    t.limit_upper = stats.empty() ? t.limit : quantile(stats, 1 - tail_mass);
    bool vanished = true;
    for (std::size_t i : tail)
        for (double v : samples[i])
            vanished = vanished && v == 0;
    t.trend = t.limit_lower > 0                 ? KappaTrend::Bounded
              : t.limit_upper < 0 || vanished ? KappaTrend::Decaying
                                                : KappaTrend::Unclear;
    return t;
}

/// Snapshot rows: replicate,n,immigrant_id,active,node_id,generation,x1..xd.
/// Thinned immigrants appear as their root only.
inline void write_cascade_snapshot(std::ostream& os, const CascadeState& s, long long replicate, bool header,
                                   const std::vector<std::string>& prefix_header = {},
                                   const std::vector<std::string>& prefix = {})
{
    CsvWriter csv(os);
    if (header) {
        std::vector<std::string> h = prefix_header;
        h.insert(h.end(), {"replicate", "n", "immigrant_id", "active", "node_id", "generation"});
        for (std::size_t i = 0; i < s.config().model.dim(); ++i)
            h.push_back("x" + std::to_string(i + 1));
        csv.row(h);
    }
    for (std::size_t i = 0; i < s.immigrants().size(); ++i) {
        const bool act = s.is_active(i);
        const auto& nodes = s.immigrants()[i].tree.nodes();
        for (std::size_t j = 0; j < nodes.size(); ++j) {
            for (const auto& p : prefix)
                csv.field(p);
            csv.field(replicate).field(s.n()).field(i).field(act).field(j).field(nodes[j].generation);
            for (double x : nodes[j].location.coords())
                csv.field(x);
            csv.end_row();
        }
    }
}

} // namespace cascadelab
