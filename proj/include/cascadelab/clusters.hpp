// Copyright 2026 The cascadelab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "geometry.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace cascadelab {

using Complex = std::complex<double>;

/// The displacement law rho = E chi of a critical cluster, with the metadata
/// the persistence criteria consume.
struct DisplacementLaw
{
    std::string name;
    std::size_t dim = 1;
    std::function<Point(RngStream&)> sampler;
    std::function<Complex(const Point&)> cf;    // empty: no analytic form
    std::optional<Point> mean;                  // nullopt: undefined or unknown
    std::optional<bool> second_moment_finite;
    std::optional<std::size_t> effective_dim;
    std::optional<double> one_sided_tail_index; // law on R_+ with survival ~ x^{-a}
    bool symmetric = false;
    bool isotropic = false;
    bool diffuse = true;
    std::vector<std::pair<std::string, double>> params;

    bool has_cf() const noexcept { return static_cast<bool>(cf); }
    Point sample(RngStream& rng) const { return sampler(rng); }
};

/// Checks cf(0) = 1, |cf| <= 1 and, for symmetric laws, a real cf on a probe grid.
inline void validate_displacement(const DisplacementLaw& law)
{
    if (!law.sampler)
        throw Error("displacement law '" + law.name + "' has no sampler");
    if (law.dim == 0 || law.dim > kMaxDim)
        throw Error("displacement law dimension out of range");
    if (!law.has_cf())
        return;
    const Complex at0 = law.cf(Point::zero(law.dim));
    if (std::abs(at0 - Complex(1, 0)) > 1e-12)
        throw Error("characteristic function of '" + law.name + "' is not 1 at 0");
    const double ts[] = {0.1, 0.5, 1.0, 2.0, 5.0};
    std::vector<Point> dirs;
    for (std::size_t i = 0; i < law.dim; ++i) {
        Point e(law.dim);
        e[i] = 1;
        dirs.push_back(e);
    }
    Point diag(law.dim);
    for (std::size_t i = 0; i < law.dim; ++i)
        diag[i] = 1.0 / std::sqrt(static_cast<double>(law.dim));
    dirs.push_back(diag);
    for (const auto& u : dirs)
        for (double t : ts) {
            const Complex v = law.cf(u * t);
            if (std::abs(v) > 1 + 1e-12)
                throw Error("characteristic function of '" + law.name + "' exceeds 1 in modulus");
            if (law.symmetric && std::abs(v.imag()) > 1e-9)
                throw Error("symmetric law '" + law.name + "' has a non-real characteristic function");
        }
}

namespace laws {

/// Centered Gaussian with independent coordinates of standard deviation
/// sigmas[i]; zero entries give a lower-dimensional law.
inline DisplacementLaw gaussian_diag(std::vector<double> sigmas)
{
    const std::size_t d = sigmas.size();
    std::size_t eff = 0;
    for (double s : sigmas) {
        if (s < 0 || !std::isfinite(s))
            throw Error("gaussian standard deviations must be finite and nonnegative");
        eff += s > 0 ? 1 : 0;
    }
    DisplacementLaw law;
    law.name = "gaussian";
    law.dim = d;
    law.sampler = [sigmas](RngStream& rng) {
        std::normal_distribution<double> nd;
        Point p(sigmas.size());
        for (std::size_t i = 0; i < sigmas.size(); ++i)
            p[i] = sigmas[i] * nd(rng);
        return p;
    };
    law.cf = [sigmas](const Point& z) {
        double q = 0;
        for (std::size_t i = 0; i < sigmas.size(); ++i)
            q += sigmas[i] * sigmas[i] * z[i] * z[i];
        return Complex(std::exp(-0.5 * q), 0);
    };
    law.mean = Point::zero(d);
    law.second_moment_finite = true;
    law.effective_dim = eff;
    law.symmetric = true;
    law.isotropic = std::all_of(sigmas.begin(), sigmas.end(), [&](double s) { return s == sigmas[0]; });
    law.diffuse = eff > 0;
    for (std::size_t i = 0; i < d; ++i)
        law.params.emplace_back("sigma" + std::to_string(i + 1), sigmas[i]);
    validate_displacement(law);
    return law;
}

inline DisplacementLaw gaussian(std::size_t d, double sigma = 1.0)
{
    auto law = gaussian_diag(std::vector<double>(d, sigma));
    law.params = {{"sigma", sigma}};
    return law;
}

namespace detail {

// Chambers-Mallows-Stuck draw with characteristic function exp(-|t|^alpha).
inline double symmetric_stable_1d(double alpha, RngStream& rng)
{
    const double v = std::numbers::pi * (rng.uniform() - 0.5);
    if (alpha == 1.0)
        return std::tan(v);
    const double w = -std::log(rng.uniform());
    return std::sin(alpha * v) / std::pow(std::cos(v), 1.0 / alpha) *
           std::pow(std::cos((1.0 - alpha) * v) / w, (1.0 - alpha) / alpha);
}

// Kanter's positive stable draw with Laplace transform exp(-s^a), a in (0,1).
inline double positive_stable(double a, RngStream& rng)
{
    const double u = std::numbers::pi * rng.uniform();
    const double w = -std::log(rng.uniform());
    return std::sin(a * u) / std::pow(std::sin(u), 1.0 / a) *
           std::pow(std::sin((1.0 - a) * u) / w, (1.0 - a) / a);
}

} // namespace detail

/// Isotropic symmetric alpha-stable law with characteristic function
/// exp(-|z|^alpha), alpha in (0, 2]. In d = 1 the Chambers-Mallows-Stuck
/// construction is used; for d > 1 a sub-Gaussian mixture sqrt(A) G with
/// A positive (alpha/2)-stable and G ~ N(0, 2 I).
inline DisplacementLaw symmetric_stable(std::size_t d, double alpha)
{
    if (!(alpha > 0 && alpha <= 2))
        throw Error("stable index alpha must lie in (0, 2]");
    DisplacementLaw law;
    law.name = "stable";
    law.dim = d;
    law.sampler = [d, alpha](RngStream& rng) {
        Point p(d);
        if (alpha == 2.0) {
            std::normal_distribution<double> nd(0.0, std::numbers::sqrt2);
            for (std::size_t i = 0; i < d; ++i)
                p[i] = nd(rng);
        } else if (d == 1) {
            p[0] = detail::symmetric_stable_1d(alpha, rng);
        } else {
            const double scale = std::sqrt(detail::positive_stable(0.5 * alpha, rng));
            std::normal_distribution<double> nd(0.0, std::numbers::sqrt2);
            for (std::size_t i = 0; i < d; ++i)
                p[i] = scale * nd(rng);
        }
        return p;
    };
    law.cf = [alpha](const Point& z) { return Complex(std::exp(-std::pow(z.norm(), alpha)), 0); };
    if (alpha > 1)
        law.mean = Point::zero(d);
    law.second_moment_finite = alpha == 2.0;
    law.effective_dim = d;
    law.symmetric = true;
    law.isotropic = true;
    law.params = {{"alpha", alpha}};
    validate_displacement(law);
    return law;
}

/// Point mass at x0.
inline DisplacementLaw point_mass(const Point& x0)
{
    DisplacementLaw law;
    law.name = "point_mass";
    law.dim = x0.dim();
    law.sampler = [x0](RngStream&) { return x0; };
    law.cf = [x0](const Point& z) { return std::polar(1.0, z.dot(x0)); };
    law.mean = x0;
    law.second_moment_finite = true;
    law.effective_dim = x0.is_zero() ? 0 : 1;
    law.symmetric = x0.is_zero();
    law.isotropic = x0.is_zero();
    law.diffuse = false;
    for (std::size_t i = 0; i < x0.dim(); ++i)
        law.params.emplace_back("x0_" + std::to_string(i + 1), x0[i]);
    validate_displacement(law);
    return law;
}

/// Shifted Pareto (Lomax) law on R_+ with survival (1 + x)^{-alpha}; the
/// one-sided heavy-tailed displacement of critical Hawkes cascades.
inline DisplacementLaw lomax(double alpha)
{
    if (!(alpha > 0) || !std::isfinite(alpha))
        throw Error("tail index must be positive");
    DisplacementLaw law;
    law.name = "lomax";
    law.dim = 1;
    law.sampler = [alpha](RngStream& rng) {
        Point p(1);
        p[0] = std::pow(rng.uniform(), -1.0 / alpha) - 1.0;
        return p;
    };
    if (alpha > 1)
        law.mean = Point{1.0 / (alpha - 1.0)};
    law.second_moment_finite = alpha > 2;
    law.effective_dim = 1;
    law.one_sided_tail_index = alpha;
    law.params = {{"alpha", alpha}};
    validate_displacement(law);
    return law;
}

/// Symmetrized Lomax law on R: a random sign times a lomax(alpha) draw.
inline DisplacementLaw symmetric_pareto(double alpha)
{
    if (!(alpha > 0) || !std::isfinite(alpha))
        throw Error("tail index must be positive");
    DisplacementLaw law;
    law.name = "symmetric_pareto";
    law.dim = 1;
    law.sampler = [alpha](RngStream& rng) {
        const bool neg = rng() >> 63;
        Point p(1);
        p[0] = std::pow(rng.uniform(), -1.0 / alpha) - 1.0;
        if (neg)
            p[0] = -p[0];
        return p;
    };
    if (alpha > 1)
        law.mean = Point{0.0};
    law.second_moment_finite = alpha > 2;
    law.effective_dim = 1;
    law.symmetric = true;
    law.params = {{"alpha", alpha}};
    validate_displacement(law);
    return law;
}

} // namespace laws

/// Offspring count distribution ||chi||: a finite pmf table or a Poisson law.
class CountLaw
{
  public:
    static CountLaw poisson(double mean)
    {
        if (!(mean >= 0) || !std::isfinite(mean))
            throw Error("Poisson mean must be finite and nonnegative");
        CountLaw c;
        c.poisson_ = true;
        c.mean_ = c.var_ = mean;
        c.proto_ = std::poisson_distribution<std::int64_t>(mean > 0 ? mean : 1.0);
        return c;
    }

    static CountLaw table(std::vector<double> pmf)
    {
        double total = 0;
        for (double p : pmf) {
            if (!(p >= 0) || !std::isfinite(p))
                throw Error("count pmf entries must be finite and nonnegative");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-9)
            throw Error("count pmf must sum to 1");
        CountLaw c;
        for (auto& p : pmf)
            p /= total;
        c.pmf_ = std::move(pmf);
        double m = 0, m2 = 0;
        for (std::size_t k = 0; k < c.pmf_.size(); ++k) {
            m += static_cast<double>(k) * c.pmf_[k];
            m2 += static_cast<double>(k * k) * c.pmf_[k];
        }
        c.mean_ = m;
        c.var_ = std::max(0.0, m2 - m * m);
        double acc = 0, sacc = 0;
        for (std::size_t k = 0; k < c.pmf_.size(); ++k) {
            acc += c.pmf_[k];
            c.cdf_.push_back(acc);
            if (m > 0)
                sacc += static_cast<double>(k) * c.pmf_[k] / m;
            c.sb_cdf_.push_back(sacc);
        }
        return c;
    }

    static CountLaw constant(std::size_t k)
    {
        std::vector<double> pmf(k + 1, 0.0);
        pmf[k] = 1.0;
        return table(std::move(pmf));
    }

    bool is_poisson() const noexcept { return poisson_; }
    double mean() const noexcept { return mean_; }
    double variance() const noexcept { return var_; }
    const std::vector<double>& table_pmf() const noexcept { return pmf_; }

    double pmf(std::size_t k) const
    {
        if (poisson_)
            return std::exp(static_cast<double>(k) * std::log(mean_) - mean_ - std::lgamma(static_cast<double>(k) + 1.0));
        return k < pmf_.size() ? pmf_[k] : 0.0;
    }

    /// Size-biased pmf q_k = k p_k / E||chi||.
    double size_biased_pmf(std::size_t k) const
    {
        return mean_ > 0 ? static_cast<double>(k) * pmf(k) / mean_ : 0.0;
    }

    std::uint64_t sample(RngStream& rng) const
    {
        if (poisson_) {
            if (mean_ == 0)
                return 0;
            auto d = proto_;
            return static_cast<std::uint64_t>(d(rng));
        }
        return invert(cdf_, rng.uniform());
    }

    std::uint64_t sample_size_biased(RngStream& rng) const
    {
        if (mean_ <= 0)
            throw Error("size-biased count needs a positive mean");
        if (poisson_)
            return 1 + sample(rng);   // k e^{-m} m^{k-1}/(k-1)! shifted Poisson
        return invert(sb_cdf_, rng.uniform());
    }

    std::string describe() const
    {
        if (poisson_)
            return "poisson(" + std::to_string(mean_) + ")";
        std::string s = "table(";
        for (std::size_t k = 0; k < pmf_.size(); ++k)
            s += (k ? "," : "") + std::to_string(pmf_[k]);
        return s + ")";
    }

  private:
    static std::uint64_t invert(const std::vector<double>& cdf, double u) noexcept
    {
        for (std::size_t k = 0; k < cdf.size(); ++k)
            if (u < cdf[k])
                return k;
        // u beyond rounding slack: last category with mass
        std::size_t k = cdf.size() - 1;
        while (k > 0 && cdf[k] == cdf[k - 1])
            --k;
        return k;
    }

    bool poisson_ = false;
    double mean_ = 0;
    double var_ = 0;
    std::vector<double> pmf_, cdf_, sb_cdf_;
    std::poisson_distribution<std::int64_t> proto_;
};

enum class Family { Deterministic, NoDisplacement, SinglePoint, PoissonCluster, GeneralCompound, Custom };

inline const char* to_string(Family f) noexcept
{
    switch (f) {
    case Family::Deterministic: return "deterministic";
    case Family::NoDisplacement: return "no_displacement";
    case Family::SinglePoint: return "single_point";
    case Family::PoissonCluster: return "poisson";
    case Family::GeneralCompound: return "compound";
    case Family::Custom: return "custom";
    }
    return "?";
}

/// A critical cluster chi: E||chi|| = 1 and Var||chi|| < infinity.
///
/// Families other than Custom place ||chi|| points i.i.d. from the
/// displacement law given the count, which is the contract the exact Palm
/// sampler relies on.
class ClusterModel
{
  public:
    using CustomSampler = std::function<void(RngStream&, std::vector<Point>&)>;

    static ClusterModel deterministic(const Point& x0)
    {
        return ClusterModel(Family::Deterministic, CountLaw::constant(1), laws::point_mass(x0));
    }

    static ClusterModel no_displacement(CountLaw y, std::size_t dim)
    {
        return ClusterModel(Family::NoDisplacement, std::move(y), laws::point_mass(Point::zero(dim)));
    }

    static ClusterModel single_point(DisplacementLaw law)
    {
        return ClusterModel(Family::SinglePoint, CountLaw::constant(1), std::move(law));
    }

    static ClusterModel poisson(DisplacementLaw law)
    {
        return ClusterModel(Family::PoissonCluster, CountLaw::poisson(1.0), std::move(law));
    }

    static ClusterModel compound(CountLaw count, DisplacementLaw law)
    {
        return ClusterModel(Family::GeneralCompound, std::move(count), std::move(law));
    }

    /// User-defined cluster; `sampler` appends the points of one cluster
    /// rooted at the origin. `rho` must be its normalized intensity.
    static ClusterModel custom(CustomSampler sampler, DisplacementLaw rho, double count_variance,
                               bool diffuse = true)
    {
        ClusterModel m(Family::Custom, CountLaw::constant(1), std::move(rho));
        m.custom_ = std::move(sampler);
        m.count_variance_ = count_variance;
        m.diffuse_ = diffuse;
        if (!(count_variance >= 0) || !std::isfinite(count_variance))
            throw Error("count variance must be finite and nonnegative");
        return m;
    }

    Family family() const noexcept { return family_; }
    std::size_t dim() const noexcept { return law_.dim; }
    const DisplacementLaw& displacement() const noexcept { return law_; }
    const CountLaw& count_law() const noexcept { return count_; }
    double count_mean() const noexcept { return 1.0; }
    double count_variance() const noexcept { return count_variance_; }
    bool var_zero() const noexcept { return count_variance_ == 0; }
    /// Simple and diffuse (no atom at the root, no duplicate points).
    bool diffuse() const noexcept { return diffuse_; }
    bool palm_samplable() const noexcept { return diffuse_; }
    bool has_custom_sampler() const noexcept { return static_cast<bool>(custom_); }

    std::string describe() const
    {
        std::string s = std::string(to_string(family_)) + "[count=" + count_.describe() + ", law=" + law_.name;
        for (const auto& [k, v] : law_.params)
            s += "," + k + "=" + std::to_string(v);
        return s + ", d=" + std::to_string(dim()) + "]";
    }

    /// Appends the children of one cluster rooted at `root`.
    void sample_children(const Point& root, RngStream& rng, std::vector<Point>& out) const
    {
        if (custom_) {
            const std::size_t before = out.size();
            custom_(rng, out);
            for (std::size_t i = before; i < out.size(); ++i)
                out[i] += root;
            return;
        }
        const std::uint64_t k = count_.sample(rng);
        for (std::uint64_t i = 0; i < k; ++i)
            out.push_back(root + law_.sampler(rng));
    }

  private:
    ClusterModel(Family f, CountLaw count, DisplacementLaw law)
        : family_(f), count_(std::move(count)), law_(std::move(law))
    {
        validate_displacement(law_);
        if (std::abs(count_.mean() - 1.0) > 1e-9)
            throw Error("critical cluster needs E||chi|| = 1, got " + std::to_string(count_.mean()));
        count_variance_ = count_.variance();
        // Atoms at the root or repeated locations make the cluster non-diffuse.
        diffuse_ = law_.diffuse && f != Family::Deterministic && f != Family::NoDisplacement;
    }

    Family family_;
    CountLaw count_;
    DisplacementLaw law_;
    double count_variance_ = 0;
    bool diffuse_ = true;
    CustomSampler custom_;
};

/// Children of one cluster shifted to `root`.
inline PointPattern sample_cluster(const ClusterModel& model, const Point& root, RngStream& rng)
{
    if (root.dim() != model.dim())
        throw DimensionMismatch(model.dim(), root.dim());
    std::vector<Point> pts;
    model.sample_children(root, rng, pts);
    return PointPattern(model.dim(), std::move(pts));
}

class NoAnalyticCf : public Error
{
  public:
    explicit NoAnalyticCf(const std::string& name)
        : Error("no analytic characteristic function for law '" + name + "'")
    {
    }
};

/// rho-hat(z) = E exp(i <z, X>), X ~ rho.
inline Complex displacement_cf(const ClusterModel& model, const Point& z)
{
    if (z.dim() != model.dim())
        throw DimensionMismatch(model.dim(), z.dim());
    if (!model.displacement().has_cf())
        throw NoAnalyticCf(model.displacement().name);
    return model.displacement().cf(z);
}

/// K with P{K = k} = k P{||chi|| = k}.
inline std::uint64_t size_biased_count(const ClusterModel& model, RngStream& rng)
{
    if (model.family() == Family::Custom)
        throw Error("size_biased_count needs an analytic count law");
    return model.count_law().sample_size_biased(rng);
}

/// Parent location and siblings of the typical point of a cluster, in
/// coordinates centered at that point.
struct ParentSiblings
{
    Point parent;
    PointPattern siblings;
};

struct RejectionPalmOptions
{
    std::size_t cap = 64;              // C: acceptance weight min(k, C) / C
    std::size_t max_attempts = 1'000'000;
};

struct RejectionPalmStats
{
    std::size_t attempts = 0;
    std::size_t accepted = 0;
    double count_sum = 0;
    double truncated_mass_sum = 0;      // sum of k 1{k > C} over attempts

    /// Empirical estimate of sum_{k > C} k p_k, the mass the cap underweights.
    double truncated_mass() const noexcept
    {
        return attempts ? truncated_mass_sum / static_cast<double>(attempts) : 0.0;
    }
};

class PalmSamplingError : public Error
{
  public:
    PalmSamplingError(const std::string& what, RejectionPalmStats stats) : Error(what), stats_(stats) {}
    const RejectionPalmStats& stats() const noexcept { return stats_; }

  private:
    RejectionPalmStats stats_;
};

/// Rejection sampler for the parent/siblings pair of an arbitrary cluster:
/// accept a draw with ||chi|| = k with probability min(k, C)/C, then pick one
/// of its points uniformly as the typical point.
inline ParentSiblings sample_parent_siblings_rejection(const ClusterModel& model, RngStream& rng,
                                                       const RejectionPalmOptions& opts = {},
                                                       RejectionPalmStats* stats = nullptr)
{
    if (opts.cap == 0)
        throw Error("rejection cap must be positive");
    RejectionPalmStats local;
    RejectionPalmStats& st = stats ? *stats : local;
    std::vector<Point> pts;
    const Point origin = Point::zero(model.dim());
    for (std::size_t attempt = 0; attempt < opts.max_attempts; ++attempt) {
        pts.clear();
        model.sample_children(origin, rng, pts);
        const std::size_t k = pts.size();
        ++st.attempts;
        st.count_sum += static_cast<double>(k);
        if (k > opts.cap)
            st.truncated_mass_sum += static_cast<double>(k);
        if (k == 0)
            continue;
        const double accept = static_cast<double>(std::min(k, opts.cap)) / static_cast<double>(opts.cap);
        if (rng.uniform() >= accept)
            continue;
        ++st.accepted;
        const std::size_t j = rng.below(k);
        ParentSiblings out{-pts[j], PointPattern(model.dim())};
        for (std::size_t i = 0; i < k; ++i)
            if (i != j)
                out.siblings.add(pts[i] - pts[j]);
        return out;
    }
    throw PalmSamplingError("rejection Palm sampler exceeded " + std::to_string(opts.max_attempts) +
                                " attempts (accepted " + std::to_string(st.accepted) + ", mean count " +
                                std::to_string(st.attempts ? st.count_sum / static_cast<double>(st.attempts) : 0.0) + ")",
                            st);
}

/// Palm version of one reproduction event, distributed as
/// (eta_0^(1), eta_1^(1) - delta_0) at a typical point.
inline ParentSiblings sample_parent_siblings(const ClusterModel& model, RngStream& rng)
{
    if (!model.palm_samplable())
        throw Error("cluster family '" + std::string(to_string(model.family())) +
                    "' is not simple and diffuse; Palm sampling is not defined");
    const std::size_t d = model.dim();
    const auto& law = model.displacement();
    switch (model.family()) {
    case Family::PoissonCluster: {
        // (delta_{-X0}, theta_{-X0} chi) with X0 ~ rho independent of chi.
        const Point x0 = law.sample(rng);
        ParentSiblings out{-x0, PointPattern(d)};
        std::vector<Point> pts;
        model.sample_children(-x0, rng, pts);
        for (const auto& p : pts)
            out.siblings.add(p);
        return out;
    }
    case Family::SinglePoint:
        return ParentSiblings{-law.sample(rng), PointPattern(d)};
    case Family::GeneralCompound: {
        const std::uint64_t k = size_biased_count(model, rng);
        std::vector<Point> xs;
        xs.reserve(k);
        for (std::uint64_t i = 0; i < k; ++i)
            xs.push_back(law.sample(rng));
        const std::size_t j = rng.below(k);
        ParentSiblings out{-xs[j], PointPattern(d)};
        for (std::size_t i = 0; i < k; ++i)
            if (i != j)
                out.siblings.add(xs[i] - xs[j]);
        return out;
    }
    case Family::Custom:
        return sample_parent_siblings_rejection(model, rng);
    default:
        break;
    }
    throw Error("unreachable cluster family");
}

struct CriticalityCheck
{
    EstimatorResult count;
    bool ok = false;   // |mean - 1| within 4 standard errors
};

/// Empirical self-test of E||chi|| = 1.
inline CriticalityCheck verify_criticality(const ClusterModel& model, std::size_t replicates, const RngStream& rng)
{
    const Point origin = Point::zero(model.dim());
    CriticalityCheck out;
    out.count = mc_estimate([&](RngStream& s) {
        std::vector<Point> pts;
        model.sample_children(origin, s, pts);
        return static_cast<double>(pts.size());
    }, replicates, 0.95, rng);
    const double se = out.count.standard_error();
    out.ok = std::abs(out.count.mean - 1.0) <= 4 * std::max(se, 1e-12);
    return out;
}

} // namespace cascadelab
