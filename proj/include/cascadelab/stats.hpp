// Copyright 2026 The cascadelab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include "geometry.hpp"
#include "rng.hpp"

namespace cascadelab {

/// Monte Carlo estimate with a normal-approximation confidence interval.
///
/// Counts are nonnegative and often right-skewed, so at small replicate
/// numbers the symmetric interval undercovers on the upper side.
struct EstimatorResult
{
    double mean = 0;
    double ci_half_width = 0;
    std::size_t n_replicates = 0;
    std::uint64_t seed = 0;
    double sd = 0;          // sample standard deviation of one replicate
    double confidence = 0.95;

    double lower() const noexcept { return mean - ci_half_width; }
    double upper() const noexcept { return mean + ci_half_width; }
    double standard_error() const noexcept
    {
        return n_replicates > 0 ? sd / std::sqrt(static_cast<double>(n_replicates)) : 0.0;
    }
    bool covers(double value) const noexcept { return std::abs(value - mean) <= ci_half_width; }
};

/// Raised when a replicate throws; carries the replicate index.
class ReplicateError : public Error
{
  public:
    ReplicateError(std::size_t index, const std::string& what)
        : Error("replicate " + std::to_string(index) + " failed: " + what), index_(index)
    {
    }
    std::size_t index() const noexcept { return index_; }

  private:
    std::size_t index_;
};

inline double normal_quantile(double p)
{
    return boost::math::quantile(boost::math::normal(), p);
}

/// Two-sided z multiplier for a confidence level in (0, 1).
inline double z_value(double confidence)
{
    if (!(confidence > 0 && confidence < 1))
        throw Error("confidence must lie in (0, 1)");
    return normal_quantile(0.5 + 0.5 * confidence);
}

inline std::size_t default_threads()
{
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : hc;
}

/// Evaluates fn(index, stream) for index in [0, n) with stream =
/// base.substream(index), fanning out over `threads` workers. Results are
/// returned in index order, so any reduction over them is independent of
/// the thread count.
template <class Fn>
auto run_replicates(std::size_t n, const RngStream& base, std::size_t threads, Fn&& fn)
{
    using R = std::invoke_result_t<Fn&, std::size_t, RngStream&>;
    std::vector<R> out(n);
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::size_t err_index = std::numeric_limits<std::size_t>::max();
    std::string err_what;

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n)
                return;
            try {
                RngStream s = base.substream(i);
                out[i] = fn(i, s);
            } catch (const std::exception& e) {
                std::lock_guard lock(err_mu);
                if (i < err_index) {
                    err_index = i;
                    err_what = e.what();
                }
            }
        }
    };

    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back(worker);
    }
    if (err_index != std::numeric_limits<std::size_t>::max())
        throw ReplicateError(err_index, err_what);
    return out;
}

/// Mean and CI of a list of replicate values.
inline EstimatorResult summarize(const std::vector<double>& values, double confidence, std::uint64_t seed)
{
    if (values.empty())
        throw Error("cannot summarize an empty sample");
    EstimatorResult r;
    r.n_replicates = values.size();
    r.seed = seed;
    r.confidence = confidence;
    const double n = static_cast<double>(values.size());
    r.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() > 1) {
        double ss = 0;
        for (double v : values)
            ss += (v - r.mean) * (v - r.mean);
        r.sd = std::sqrt(ss / (n - 1));
    }
    r.ci_half_width = z_value(confidence) * r.sd / std::sqrt(n);
    return r;
}

/// Monte Carlo estimate of E[sampler(stream)] over independent replicates.
template <class Sampler>
EstimatorResult mc_estimate(Sampler&& sampler, std::size_t n_replicates, double confidence,
                            const RngStream& rng, std::size_t threads = 1)
{
    if (n_replicates < 2)
        throw Error("mc_estimate needs at least 2 replicates");
    (void)z_value(confidence);
    auto values = run_replicates(n_replicates, rng, threads,
                                 [&](std::size_t, RngStream& s) { return static_cast<double>(sampler(s)); });
    return summarize(values, confidence, rng.seed());
}

struct DispersionResult
{
    bool consistent_with_poisson = true;
    double index_of_dispersion = std::numeric_limits<double>::quiet_NaN();
    double statistic = 0;   // (n-1) * index
    double p_value = 1;     // two-sided
};

/// Poisson dispersion test: (n-1) * var/mean is approximately chi-square with
/// n-1 degrees of freedom under a Poisson law; two-sided at level alpha.
inline DispersionResult dispersion_test(const std::vector<long long>& samples, double alpha)
{
    if (samples.size() < 30)
        throw Error("dispersion_test needs at least 30 samples");
    if (!(alpha > 0 && alpha < 1))
        throw Error("alpha must lie in (0, 1)");
    const double n = static_cast<double>(samples.size());
    double mean = 0;
    for (auto s : samples)
        mean += static_cast<double>(s);
    mean /= n;
    DispersionResult out;
    if (mean == 0)
        return out;   // degenerate Poisson(0)
    double ss = 0;
    for (auto s : samples)
        ss += (static_cast<double>(s) - mean) * (static_cast<double>(s) - mean);
    const double var = ss / (n - 1);
    out.index_of_dispersion = var / mean;
    out.statistic = (n - 1) * out.index_of_dispersion;
    boost::math::chi_squared chi(n - 1);
    const double lower = boost::math::cdf(chi, out.statistic);
    const double upper = boost::math::cdf(boost::math::complement(chi, out.statistic));
    out.p_value = std::min(1.0, 2 * std::min(lower, upper));
    out.consistent_with_poisson = out.p_value >= alpha;
    return out;
}

struct TestResult
{
    double statistic = 0;
    double df = 0;
    double p_value = 1;
};

/// Pearson goodness of fit of observed category counts against expected
/// probabilities. Adjacent categories are pooled (left to right) until each
/// pooled cell has expected count >= min_expected.
inline TestResult chi_square_gof(const std::vector<double>& observed, const std::vector<double>& probs,
                                 double min_expected = 5.0)
{
    if (observed.size() != probs.size() || observed.empty())
        throw Error("chi_square_gof: size mismatch");
    const double total = std::accumulate(observed.begin(), observed.end(), 0.0);
    const double psum = std::accumulate(probs.begin(), probs.end(), 0.0);
    std::vector<double> obs, exp;
    double o = 0, e = 0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        o += observed[i];
        e += total * probs[i] / psum;
        if (e >= min_expected) {
            obs.push_back(o);
            exp.push_back(e);
            o = e = 0;
        }
    }
    if (e > 0 || o > 0) {
        if (exp.empty()) {
            obs.push_back(o);
            exp.push_back(e);
        } else {
            obs.back() += o;
            exp.back() += e;
        }
    }
    TestResult r;
    if (exp.size() < 2)
        return r;
    for (std::size_t i = 0; i < exp.size(); ++i)
        r.statistic += (obs[i] - exp[i]) * (obs[i] - exp[i]) / exp[i];
    r.df = static_cast<double>(exp.size() - 1);
    r.p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared(r.df), r.statistic));
    return r;
}

/// Chi-square test of homogeneity between two samples of nonnegative
/// integers; sparse tail categories are pooled.
inline TestResult chi_square_two_sample(const std::vector<long long>& a, const std::vector<long long>& b,
                                        double min_expected = 5.0)
{
    if (a.empty() || b.empty())
        throw Error("chi_square_two_sample: empty sample");
    const long long top = std::max(*std::max_element(a.begin(), a.end()), *std::max_element(b.begin(), b.end()));
    std::vector<double> ca(static_cast<std::size_t>(top) + 1), cb(ca.size());
    for (auto v : a)
        ca[static_cast<std::size_t>(v)] += 1;
    for (auto v : b)
        cb[static_cast<std::size_t>(v)] += 1;
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double fa = na / (na + nb), fb = nb / (na + nb);
    std::vector<std::pair<double, double>> cells;
    double oa = 0, ob = 0;
    for (std::size_t i = 0; i < ca.size(); ++i) {
        oa += ca[i];
        ob += cb[i];
        if ((oa + ob) * std::min(fa, fb) >= min_expected) {
            cells.emplace_back(oa, ob);
            oa = ob = 0;
        }
    }
    if (oa + ob > 0) {
        if (cells.empty())
            cells.emplace_back(oa, ob);
        else {
            cells.back().first += oa;
            cells.back().second += ob;
        }
    }
    TestResult r;
    if (cells.size() < 2)
        return r;
    for (auto [x, y] : cells) {
        const double t = x + y;
        const double ea = t * fa, eb = t * fb;
        r.statistic += (x - ea) * (x - ea) / ea + (y - eb) * (y - eb) / eb;
    }
    r.df = static_cast<double>(cells.size() - 1);
    r.p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared(r.df), r.statistic));
    return r;
}

/// Asymptotic Kolmogorov survival function Q(t) = 2 sum (-1)^{k-1} e^{-2 k^2 t^2}.
inline double kolmogorov_survival(double t)
{
    if (t <= 0)
        return 1.0;
    if (t < 0.3)
        return 1.0;   // series converges slowly; value is 1 to machine precision
    double s = 0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * t * t);
        s += (k % 2 == 1 ? term : -term);
        if (term < 1e-16)
            break;
    }
    return std::clamp(2.0 * s, 0.0, 1.0);
}

/// Two-sample Kolmogorov-Smirnov test (asymptotic p-value with the
/// Stephens small-sample correction).
inline TestResult ks_two_sample(std::vector<double> a, std::vector<double> b)
{
    if (a.empty() || b.empty())
        throw Error("ks_two_sample: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x)
            ++i;
        while (j < b.size() && b[j] <= x)
            ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    const double en = std::sqrt(na * nb / (na + nb));
    TestResult r;
    r.statistic = d;
    r.p_value = kolmogorov_survival((en + 0.12 + 0.11 / en) * d);
    return r;
}

/// Ordinary least-squares slope of y on x.
inline double ols_slope(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size() || x.size() < 2)
        throw Error("ols_slope needs two or more paired values");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    return sxx > 0 ? sxy / sxx : 0.0;
}

/// Empirical quantile with linear interpolation (type 7).
inline double quantile(std::vector<double> v, double q)
{
    if (v.empty())
        throw Error("quantile of empty sample");
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1) * std::clamp(q, 0.0, 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

} // namespace cascadelab
