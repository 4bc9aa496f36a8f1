// Copyright 2026 The cascadelab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "clusters.hpp"
#include "geometry.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace cascadelab {

using Json = nlohmann::ordered_json;

enum class SeriesVerdict { Finite, Divergent, Inconclusive };

inline const char* to_string(SeriesVerdict v) noexcept
{
    switch (v) {
    case SeriesVerdict::Finite: return "finite";
    case SeriesVerdict::Divergent: return "divergent";
    case SeriesVerdict::Inconclusive: return "inconclusive";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Integral of 1 / |1 - cf|^2 near the origin

struct CfIntegralReport
{
    double eps = 0;
    std::vector<std::pair<double, double>> value_on_shrinking_exclusions;   // (delta, integral over B_eps \ B_delta)
    std::vector<std::pair<double, double>> annulus_contributions;           // (inner radius, integral over annulus)
    double fitted_slope = 0;                  // log-contribution vs log-radius
    double fitted_singularity_exponent = 0;   // beta in integrand ~ |z|^{-beta}
    SeriesVerdict verdict = SeriesVerdict::Inconclusive;
    std::string reason;
};

struct CfIntegralOptions
{
    bool isotropic = false;
    std::size_t random_directions = 16;
    std::size_t fit_annuli = 8;
    std::size_t max_annuli = 60;
    double precision_floor = 1e-9;   // smallest |1 - cf| trusted in double precision
    double slope_margin = 0.1;
};

namespace detail {

/// Gauss-Legendre nodes and weights on [-1, 1].
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(std::size_t n)
{
    std::vector<double> x(n), w(n);
    for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
        double z = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
        double dp = 0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1, p1 = z;
            for (std::size_t k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * static_cast<double>(k) - 1) * z * p1 - (static_cast<double>(k) - 1) * p0) /
                                  static_cast<double>(k);
                p0 = p1;
                p1 = p2;
            }
            if (n == 1)
                p1 = z, p0 = 1;
            dp = static_cast<double>(n) * (z * p1 - p0) / (z * z - 1);
            const double dz = p1 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-15)
                break;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = w[n - 1 - i] = 2 / ((1 - z * z) * dp * dp);
    }
    return {x, w};
}

inline std::vector<Point> probe_directions(std::size_t d, bool isotropic, std::size_t random)
{
    std::vector<Point> dirs;
    if (isotropic) {
        Point e(d);
        e[0] = 1;
        dirs.push_back(e);
        return dirs;
    }
    for (std::size_t i = 0; i < d; ++i)
        for (double s : {1.0, -1.0}) {
            Point e(d);
            e[i] = s;
            dirs.push_back(e);
        }
    if (d == 1)
        return dirs;
    RngStream rng(0x5eedc0de, d);
    std::normal_distribution<double> nd;
    for (std::size_t k = 0; k < random; ++k) {
        Point u(d);
        for (std::size_t i = 0; i < d; ++i)
            u[i] = nd(rng);
        dirs.push_back(u * (1.0 / u.norm()));
    }
    return dirs;
}

} // namespace detail

/// Integral of 1/|1 - cf(z)|^2 over B_0^eps \ B_0^delta for shrinking delta,
/// in polar coordinates with Gauss-Legendre quadrature in log-radius on each
/// annulus (directions averaged unless the cf is isotropic). The singularity
/// exponent comes from the log-log slope of the annulus contributions over
/// the innermost annuli: slope = d - beta, finite iff slope > margin,
/// divergent iff slope < -margin.
///
/// eps is halved until Re cf lies in [0, 1] on a probe grid of B_0^eps.
/// Empty `deltas` means eps 2^{-i} down to the precision floor.
inline CfIntegralReport cf_integral(const std::function<Complex(const Point&)>& cf, std::size_t d, double eps,
                                    std::vector<double> deltas, std::size_t quadrature_points,
                                    const CfIntegralOptions& opt = {})
{
    if (d == 0 || d > kMaxDim)
        throw Error("dimension out of range");
    if (!(eps > 0) || quadrature_points == 0)
        throw Error("cf_integral needs eps > 0 and at least one quadrature point");
    CfIntegralReport rep;
    const auto dirs = detail::probe_directions(d, opt.isotropic, opt.random_directions);

    auto eval = [&](const Point& z) -> std::optional<Complex> {
        try {
            const Complex v = cf(z);
            if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
                return std::nullopt;
            return v;
        } catch (const std::exception&) {
            return std::nullopt;
        }
    };

    bool ok_eps = false;
    for (int shrink = 0; shrink < 40 && !ok_eps; ++shrink) {
        ok_eps = true;
        for (const auto& u : dirs) {
            for (double t : {1.0, 0.75, 0.5, 0.25, 0.1}) {
                const auto v = eval(u * (eps * t));
                if (!v) {
                    rep.eps = eps;
                    rep.reason = "characteristic function evaluation failed";
                    return rep;
                }
                if (v->real() < -1e-12 || v->real() > 1 + 1e-12)
                    ok_eps = false;
            }
        }
        if (!ok_eps)
            eps *= 0.5;
    }
    rep.eps = eps;
    if (!ok_eps) {
        rep.reason = "no eps with Re cf in [0, 1] found";
        return rep;
    }

    auto min_gap = [&](double s) {
        double g = std::numeric_limits<double>::infinity();
        for (const auto& u : dirs) {
            const auto v = eval(u * s);
            g = std::min(g, v ? std::abs(Complex(1, 0) - *v) : 0.0);
        }
        return g;
    };

    if (deltas.empty()) {
        double delta = eps;
        for (std::size_t i = 0; i < opt.max_annuli; ++i) {
            delta *= 0.5;
            if (min_gap(delta) < opt.precision_floor)
                break;
            deltas.push_back(delta);
        }
    } else {
        std::sort(deltas.begin(), deltas.end(), std::greater<>());
        if (!(deltas.front() < eps) || !(deltas.back() > 0))
            throw Error("deltas must lie in (0, eps)");
        if (min_gap(deltas.back()) < opt.precision_floor) {
            rep.reason = "1 - cf below the precision floor at the smallest delta";
            return rep;
        }
    }

    const auto [gx, gw] = detail::gauss_legendre(quadrature_points);
    const double sphere = d == 1 ? 2.0 : unit_sphere_area(d);
    double outer = eps, total = 0;
    for (double inner : deltas) {
        // integral over inner <= |z| < outer of s^{d-1} f(s u) ds dS(u), with s = e^t
        const double a = std::log(inner), b = std::log(outer);
        double acc = 0;
        for (const auto& u : dirs) {
            double dir_acc = 0;
            for (std::size_t q = 0; q < gx.size(); ++q) {
                const double t = 0.5 * (b - a) * gx[q] + 0.5 * (a + b);
                const double s = std::exp(t);
                const auto v = eval(u * s);
                if (!v) {
                    rep.reason = "characteristic function evaluation failed";
                    return rep;
                }
                const double gap2 = std::norm(Complex(1, 0) - *v);
                if (!(gap2 > 0)) {
                    rep.reason = "characteristic function equals 1 away from the origin (degenerate law)";
                    return rep;
                }
                dir_acc += gw[q] * std::pow(s, static_cast<double>(d)) / gap2;
            }
            acc += 0.5 * (b - a) * dir_acc;
        }
        const double contrib = sphere * acc / static_cast<double>(dirs.size());
        total += contrib;
        rep.annulus_contributions.emplace_back(inner, contrib);
        rep.value_on_shrinking_exclusions.emplace_back(inner, total);
        outer = inner;
    }

    if (rep.annulus_contributions.size() < 4) {
        rep.reason = "fewer than 4 annuli above the precision floor";
        return rep;
    }
    const std::size_t m = std::min(opt.fit_annuli, rep.annulus_contributions.size());
    std::vector<double> x, y;
    for (std::size_t i = rep.annulus_contributions.size() - m; i < rep.annulus_contributions.size(); ++i) {
        x.push_back(std::log(rep.annulus_contributions[i].first));
        y.push_back(std::log(rep.annulus_contributions[i].second));
    }
    rep.fitted_slope = ols_slope(x, y);
    rep.fitted_singularity_exponent = static_cast<double>(d) - rep.fitted_slope;
    if (rep.fitted_slope > opt.slope_margin) {
        rep.verdict = SeriesVerdict::Finite;
        rep.reason = "integrand exponent below the dimension";
    } else if (rep.fitted_slope < -opt.slope_margin) {
        rep.verdict = SeriesVerdict::Divergent;
        rep.reason = "integrand exponent above the dimension";
    } else {
        rep.reason = "integrand exponent indistinguishable from the dimension";
    }
    return rep;
}

/// Largest violation of 1/|1 - s cf|^2 <= 1/|1 - cf|^2 <= 1/(1 - Re cf)^2
/// over the probe points and s values (0 when the chain holds).
inline double cf_inequality_violation(const std::function<Complex(const Point&)>& cf,
                                      const std::vector<Point>& probes, const std::vector<double>& ss)
{
    double worst = 0;
    for (const auto& z : probes) {
        const Complex v = cf(z);
        const double mid = 1 / std::norm(Complex(1, 0) - v);
        const double top = 1 / ((1 - v.real()) * (1 - v.real()));
        worst = std::max(worst, (mid - top) / top);
        for (double s : ss) {
            const double low = 1 / std::norm(Complex(1, 0) - s * v);
            worst = std::max(worst, (low - mid) / mid);
        }
    }
    return std::max(worst, 0.0);
}

// ---------------------------------------------------------------------------
// Occupation sums

struct OccupationPoint
{
    int horizon = 0;
    EstimatorResult estimate;
};

struct OccupationReport
{
    double r = 0;
    std::vector<OccupationPoint> partial_sums;
    double increment_slope = 0;         // log-log slope of the increments per doubling of the horizon
    double increment_slope_lower = 0;   // bootstrap band
    double increment_slope_upper = 0;
    SeriesVerdict verdict = SeriesVerdict::Inconclusive;
};

struct OccupationOptions
{
    double finite_slope = -0.25;      // increments shrink at least like h^{-1/4}
    double divergent_slope = -0.1;    // increments do not shrink
    std::size_t fit_increments = 6;
    double confidence = 0.99;         // for the partial-sum CIs
    double band = 0.95;               // two-sided bootstrap band on the slope
    std::size_t bootstrap = 400;
    std::size_t threads = 1;
};

namespace detail {

inline void validate_horizons(const std::vector<int>& horizons)
{
    if (horizons.size() < 3 || horizons.front() < 0 || !std::is_sorted(horizons.begin(), horizons.end()) ||
        std::adjacent_find(horizons.begin(), horizons.end()) != horizons.end())
        throw Error("need at least 3 strictly increasing nonnegative horizons");
}

/// Slope of log(increment per unit horizon) against log(horizon), plus one,
/// over the last fit_increments increments of the mean partial sums. For
/// doubling horizons this is the growth exponent of the per-doubling
/// increment: negative for a convergent power tail, zero for a logarithmic
/// divergence, positive for power growth. A vanishing increment (no visits
/// at all in a window) is reported as kSteepDecay.
inline constexpr double kSteepDecay = -1e6;

inline double increment_slope(const std::vector<double>& means, const std::vector<int>& horizons, std::size_t fit)
{
    const std::size_t m = horizons.size();
    const std::size_t first = m - 1 > fit ? m - fit : 1;
    std::vector<double> x, y;
    for (std::size_t j = first; j < m; ++j) {
        const double inc = means[j] - means[j - 1];
        if (!(inc > 0))
            return kSteepDecay;
        x.push_back(std::log(static_cast<double>(horizons[j])));
        y.push_back(std::log(inc / static_cast<double>(horizons[j] - horizons[j - 1])));
    }
    return x.size() >= 2 ? ols_slope(x, y) + 1.0 : std::numeric_limits<double>::quiet_NaN();
}

/// Summaries plus a verdict from per-replicate partial sums rows[i][j].
/// Finite needs the whole bootstrap band of the slope below finite_slope,
/// divergent needs it above divergent_slope.
inline OccupationReport summarize_occupation(double r, const std::vector<std::vector<double>>& rows,
                                             const std::vector<int>& horizons, const RngStream& rng,
                                             const OccupationOptions& opt)
{
    const std::size_t nrep = rows.size(), nh = horizons.size();
    OccupationReport rep;
    rep.r = r;
    std::vector<double> means(nh);
    for (std::size_t j = 0; j < nh; ++j) {
        std::vector<double> col(nrep);
        for (std::size_t i = 0; i < nrep; ++i)
            col[i] = rows[i][j];
        rep.partial_sums.push_back({horizons[j], summarize(col, opt.confidence, rng.seed())});
        means[j] = rep.partial_sums.back().estimate.mean;
    }
    rep.increment_slope = increment_slope(means, horizons, opt.fit_increments);

    RngStream boot = rng.substream(0xb007);
    std::vector<double> slopes;
    std::vector<double> bm(nh);
    for (std::size_t b = 0; b < opt.bootstrap; ++b) {
        std::fill(bm.begin(), bm.end(), 0.0);
        for (std::size_t i = 0; i < nrep; ++i) {
            const auto& row = rows[boot.below(nrep)];
            for (std::size_t j = 0; j < nh; ++j)
                bm[j] += row[j];
        }
        slopes.push_back(increment_slope(bm, horizons, opt.fit_increments));
    }
    if (slopes.empty())
        slopes.push_back(rep.increment_slope);
    const double tail = 0.5 * (1 - opt.band);
    rep.increment_slope_lower = quantile(slopes, tail);
    rep.increment_slope_upper = quantile(slopes, 1 - tail);
    if (rep.increment_slope_upper < opt.finite_slope)
        rep.verdict = SeriesVerdict::Finite;
    else if (rep.increment_slope_lower > opt.divergent_slope)
        rep.verdict = SeriesVerdict::Divergent;
    else
        rep.verdict = SeriesVerdict::Inconclusive;
    return rep;
}

/// Adds one visit to the bucket (h_{j-1}, h_j] containing m.
inline void bucket_hit(std::vector<double>& hits, const std::vector<int>& horizons, int m)
{
    const auto j = std::lower_bound(horizons.begin(), horizons.end(), m) - horizons.begin();
    if (static_cast<std::size_t>(j) < hits.size())
        hits[static_cast<std::size_t>(j)] += 1;
}

struct IndexedPoint
{
    Point p;
    int index;
};

/// Calls hit(a_index, b_index) for every pair with |a.p - b.p| < r, using a
/// sweep over the first coordinate (both lists sorted by it).
template <class Hit>
void for_close_pairs(const std::vector<IndexedPoint>& a, const std::vector<IndexedPoint>& b, double r, Hit&& hit)
{
    const double r2 = r * r;
    std::size_t lo = 0;
    for (const auto& u : b) {
        while (lo < a.size() && a[lo].p[0] <= u.p[0] - r)
            ++lo;
        for (std::size_t j = lo; j < a.size() && a[j].p[0] < u.p[0] + r; ++j)
            if (distance2(a[j].p, u.p) < r2)
                hit(a[j].index, u.index);
    }
}

inline void sort_by_first(std::vector<IndexedPoint>& v)
{
    std::sort(v.begin(), v.end(), [](const IndexedPoint& x, const IndexedPoint& y) { return x.p[0] < y.p[0]; });
}

inline void accumulate_rows(std::vector<double>& hits)
{
    for (std::size_t j = 1; j < hits.size(); ++j)
        hits[j] += hits[j - 1];
}

} // namespace detail

/// Monte Carlo partial sums of U(B_0^r) = sum_{k <= h} P{S_k in B_0^r} for
/// the walk generated by the law. Each replicate draws one walk of length
/// 2H (H the largest horizon) and averages over the H starting times j the
/// visits of S_{j+k} - S_j to B_0^r, which lowers the variance without bias.
/// Pathwise monotone in h.
inline OccupationReport occupation_measure(const DisplacementLaw& law, double r, const std::vector<int>& horizons,
                                           std::size_t replicates, const RngStream& rng,
                                           const OccupationOptions& opt = {})
{
    detail::validate_horizons(horizons);
    if (!(r > 0) || replicates < 2)
        throw Error("occupation needs r > 0 and at least 2 replicates");
    const int H = std::max(horizons.back(), 1);
    auto rows = run_replicates(replicates, rng, opt.threads, [&](std::size_t, RngStream& s) {
        std::vector<detail::IndexedPoint> walk;
        walk.reserve(2 * static_cast<std::size_t>(H) + 1);
        Point p = Point::zero(law.dim);
        walk.push_back({p, 0});
        for (int i = 1; i <= 2 * H; ++i) {
            p += law.sample(s);
            walk.push_back({p, i});
        }
        detail::sort_by_first(walk);
        std::vector<double> hits(horizons.size(), 0.0);
        detail::for_close_pairs(walk, walk, r, [&](int later, int start) {
            const int k = later - start;
            if (start < H && k >= 0 && k <= horizons.back())
                detail::bucket_hit(hits, horizons, k);
        });
        for (auto& h : hits)
            h /= static_cast<double>(H);
        detail::accumulate_rows(hits);
        return hits;
    });
    return detail::summarize_occupation(r, rows, horizons, rng, opt);
}

/// Monte Carlo partial sums of (U * U^-)(B_0^r) = sum_{n,k} rho^{*k} * (rho^-)^{*n}(B_0^r),
/// truncated at each horizon h (n, k <= h). Each replicate draws a walk S
/// with steps X and an independent walk S' with steps -X and counts all
/// pairs with S_k + S'_n in B_0^r; every pair has the law of the (n, k)
/// term, so the count is unbiased for the truncated sum.
inline OccupationReport occupation_convolution(const DisplacementLaw& law, double r, const std::vector<int>& horizons,
                                               std::size_t replicates, const RngStream& rng,
                                               const OccupationOptions& opt = {})
{
    detail::validate_horizons(horizons);
    if (!(r > 0) || replicates < 2)
        throw Error("occupation needs r > 0 and at least 2 replicates");
    const int H = horizons.back();
    auto rows = run_replicates(replicates, rng, opt.threads, [&](std::size_t, RngStream& s) {
        std::vector<detail::IndexedPoint> fwd, bwd;
        fwd.reserve(static_cast<std::size_t>(H) + 1);
        bwd.reserve(static_cast<std::size_t>(H) + 1);
        Point a = Point::zero(law.dim), b = Point::zero(law.dim);
        fwd.push_back({a, 0});
        bwd.push_back({b, 0});
        for (int i = 1; i <= H; ++i) {
            a += law.sample(s);
            b -= law.sample(s);
            fwd.push_back({a, i});
            bwd.push_back({-b, i});   // S_k + S'_n in B  <=>  |S_k - (-S'_n)| < r
        }
        detail::sort_by_first(fwd);
        detail::sort_by_first(bwd);
        // hits[j] collects pairs with max(n, k) in (h_{j-1}, h_j].
        std::vector<double> hits(horizons.size(), 0.0);
        detail::for_close_pairs(fwd, bwd, r, [&](int k, int n) {
            detail::bucket_hit(hits, horizons, std::max(n, k));
        });
        detail::accumulate_rows(hits);
        return hits;
    });
    return detail::summarize_occupation(r, rows, horizons, rng, opt);
}

// ---------------------------------------------------------------------------
// Recurrence and effective dimension

/// Rank of the sample second-moment matrix of `samples` draws, with
/// eigenvalues below tol times the largest treated as zero.
inline std::size_t estimate_effective_dim(const DisplacementLaw& law, std::size_t samples, RngStream& rng,
                                          double tol = 1e-8)
{
    const auto d = static_cast<Eigen::Index>(law.dim);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t i = 0; i < samples; ++i) {
        const Point x = law.sample(rng);
        // Bounded weights keep heavy tails from swamping the matrix.
        const double n2 = x.norm2();
        const double w = n2 > 0 ? 1.0 / (1.0 + n2) : 0.0;
        Eigen::VectorXd v(d);
        for (Eigen::Index j = 0; j < d; ++j)
            v(j) = x[static_cast<std::size_t>(j)];
        m += w * v * v.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    const auto& ev = es.eigenvalues();
    const double top = ev.maxCoeff();
    if (!(top > 0))
        return 0;
    std::size_t rank = 0;
    for (Eigen::Index j = 0; j < d; ++j)
        rank += ev(j) > tol * top ? 1 : 0;
    return rank;
}

enum class Recurrence { Recurrent, Transient, Unknown };

inline const char* to_string(Recurrence r) noexcept
{
    switch (r) {
    case Recurrence::Recurrent: return "recurrent";
    case Recurrence::Transient: return "transient";
    case Recurrence::Unknown: return "unknown";
    }
    return "?";
}

/// Rule table: zero-mean walks in d = 1, zero-mean finite-variance walks in
/// d = 2 are recurrent; effective dimension >= 5 is transient.
inline Recurrence classify_recurrence(const DisplacementLaw& law, std::size_t d)
{
    const bool zero_mean = law.mean && law.mean->is_zero();
    if (d == 1 && zero_mean)
        return Recurrence::Recurrent;
    if (d == 2 && zero_mean && law.second_moment_finite.value_or(false))
        return Recurrence::Recurrent;
    if (law.effective_dim && *law.effective_dim >= 5)
        return Recurrence::Transient;
    return Recurrence::Unknown;
}

// ---------------------------------------------------------------------------
// Persistence

enum class Persistence { Persists, Extinguishes, Inconclusive };

inline const char* to_string(Persistence p) noexcept
{
    switch (p) {
    case Persistence::Persists: return "persists";
    case Persistence::Extinguishes: return "extinguishes";
    case Persistence::Inconclusive: return "inconclusive";
    }
    return "?";
}

struct PersistenceVerdict
{
    Persistence verdict = Persistence::Inconclusive;
    std::string rule_fired;   // empty when nothing fired
    Json evidence = Json::array();
};

/// Heavy-tailed one-sided displacement with tail index alpha in (0, 1):
/// persistence is guaranteed for alpha < 1/2 and undecided otherwise.
inline PersistenceVerdict hawkes_tail_rule(double alpha)
{
    if (!(alpha > 0 && alpha < 1))
        throw Error("tail index must lie in (0, 1)");
    PersistenceVerdict v;
    const bool fires = alpha < 0.5;
    v.verdict = fires ? Persistence::Persists : Persistence::Inconclusive;
    v.rule_fired = fires ? "hawkes_tail" : "";
    v.evidence.push_back({{"rule", "hawkes_tail"}, {"alpha", alpha}, {"threshold", 0.5}, {"fired", fires}});
    return v;
}

struct PersistenceBudget
{
    std::uint64_t seed = 1;
    double cf_eps = 1.0;
    std::size_t cf_quadrature = 16;
    double r = 1.0;
    std::vector<int> recurrence_horizons{16, 32, 64, 128, 256, 512, 1024};
    std::size_t recurrence_replicates = 2000;
    std::vector<int> convolution_horizons{8, 16, 32, 64, 128, 256, 512};
    std::size_t convolution_replicates = 10000;
    std::size_t effective_dim_samples = 2000;
    std::size_t threads = 1;
};

inline Json to_json(const EstimatorResult& e)
{
    return {{"mean", e.mean}, {"ci_half_width", e.ci_half_width}, {"n_replicates", e.n_replicates},
            {"seed", e.seed}};
}

inline Json to_json(const CfIntegralReport& r)
{
    Json ex = Json::array();
    for (const auto& [d, v] : r.value_on_shrinking_exclusions)
        ex.push_back({d, v});
    return {{"eps", r.eps},
            {"value_on_shrinking_exclusions", ex},
            {"fitted_slope", r.fitted_slope},
            {"fitted_singularity_exponent", r.fitted_singularity_exponent},
            {"verdict", to_string(r.verdict)},
            {"reason", r.reason}};
}

inline Json to_json(const OccupationReport& r)
{
    Json ps = Json::array();
    for (const auto& p : r.partial_sums)
        ps.push_back({{"horizon", p.horizon}, {"estimate", p.estimate.mean}, {"ci", p.estimate.ci_half_width}});
    return {{"r", r.r}, {"partial_sums", ps}, {"increment_slope", r.increment_slope},
            {"increment_slope_band", {r.increment_slope_lower, r.increment_slope_upper}},
            {"verdict", to_string(r.verdict)}};
}

inline Json to_json(const PersistenceVerdict& v)
{
    return {{"verdict", to_string(v.verdict)}, {"rule_fired", v.rule_fired}, {"evidence", v.evidence}};
}

/// Decision cascade over the available criteria. A definite verdict is only
/// returned by a rule whose preconditions hold; otherwise inconclusive.
inline PersistenceVerdict classify_persistence(const ClusterModel& model, const PersistenceBudget& budget = {})
{
    PersistenceVerdict v;
    const auto& law = model.displacement();
    const std::size_t d = model.dim();
    auto decide = [&](Persistence p, const std::string& rule) {
        v.verdict = p;
        v.rule_fired = rule;
        return v;
    };
    const RngStream root(budget.seed, 0xc1a55);

    // Elementary families with atoms at the root or a fixed drift.
    if (model.family() == Family::NoDisplacement) {
        v.evidence.push_back({{"rule", "no_displacement"}, {"fired", true}});
        return decide(Persistence::Extinguishes, "no_displacement");
    }
    if (model.family() == Family::Deterministic) {
        const bool drift = law.mean && !law.mean->is_zero();
        v.evidence.push_back({{"rule", "deterministic"}, {"drift_nonzero", drift}, {"fired", true}});
        return decide(drift ? Persistence::Persists : Persistence::Extinguishes, "deterministic");
    }

    auto recurrence = [&]() {
        Recurrence rec = classify_recurrence(law, d);
        Json ev = {{"rule", "recurrence_table"}, {"result", to_string(rec)}};
        if (rec == Recurrence::Unknown) {
            RngStream s = root.substream(1);
            const auto occ = occupation_measure(law, budget.r, budget.recurrence_horizons,
                                                budget.recurrence_replicates, s,
                                                {.threads = budget.threads});
            ev["numeric_occupation"] = to_json(occ);
            rec = occ.verdict == SeriesVerdict::Finite      ? Recurrence::Transient
                  : occ.verdict == SeriesVerdict::Divergent ? Recurrence::Recurrent
                                                            : Recurrence::Unknown;
            ev["result"] = to_string(rec);
        }
        v.evidence.push_back(ev);
        return rec;
    };

    if (model.var_zero()) {
        // Single-point walk: persists iff the walk is transient.
        const Recurrence rec = recurrence();
        if (rec == Recurrence::Transient)
            return decide(Persistence::Persists, "single_point_transient");
        if (rec == Recurrence::Recurrent)
            return decide(Persistence::Extinguishes, "single_point_recurrent");
        return v;
    }

    if (law.one_sided_tail_index) {
        const double a = *law.one_sided_tail_index;
        if (a > 0 && a < 1) {
            const auto h = hawkes_tail_rule(a);
            v.evidence.push_back(h.evidence.front());
            if (h.verdict == Persistence::Persists)
                return decide(Persistence::Persists, "hawkes_tail");
        }
    }

    if (recurrence() == Recurrence::Recurrent)
        return decide(Persistence::Extinguishes, "recurrence");

    if (law.has_cf()) {
        const auto rep = cf_integral(law.cf, d, budget.cf_eps, {}, budget.cf_quadrature,
                                     {.isotropic = law.isotropic});
        Json ev = to_json(rep);
        ev["rule"] = "cf_integral";
        v.evidence.push_back(ev);
        if (rep.verdict == SeriesVerdict::Finite)
            return decide(Persistence::Persists, "cf_integral");
    }

    {
        const auto occ = occupation_convolution(law, budget.r, budget.convolution_horizons,
                                                budget.convolution_replicates, root.substream(2),
                                                {.threads = budget.threads});
        Json ev = to_json(occ);
        ev["rule"] = "occupation_convolution";
        v.evidence.push_back(ev);
        if (occ.verdict == SeriesVerdict::Finite)
            return decide(Persistence::Persists, "occupation_convolution");
    }

    std::size_t eff = 0;
    if (law.effective_dim) {
        eff = *law.effective_dim;
    } else {
        RngStream s = root.substream(3);
        eff = estimate_effective_dim(law, budget.effective_dim_samples, s);
    }
    v.evidence.push_back({{"rule", "effective_dimension"}, {"effective_dim", eff}, {"threshold", 5}});
    if (eff >= 5)
        return decide(Persistence::Persists, "effective_dimension");
    return v;
}

} // namespace cascadelab
