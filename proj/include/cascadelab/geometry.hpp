// Copyright 2026 The cascadelab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace cascadelab {

/// Base class of every error raised by the library.
class Error : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error
{
  public:
    DimensionMismatch(std::size_t expected, std::size_t got)
        : Error("dimension mismatch: expected " + std::to_string(expected) +
                ", got " + std::to_string(got))
    {
    }
};

inline constexpr std::size_t kMaxDim = 6;

/// A location in R^d with inline storage (d <= kMaxDim).
class Point
{
  public:
    Point() = default;

    explicit Point(std::size_t dim) : dim_(static_cast<std::uint8_t>(dim))
    {
        check_dim(dim);
    }

    Point(std::initializer_list<double> coords)
        : Point(std::span<const double>(coords.begin(), coords.size()))
    {
    }

    explicit Point(std::span<const double> coords)
        : dim_(static_cast<std::uint8_t>(coords.size()))
    {
        check_dim(coords.size());
        for (std::size_t i = 0; i < coords.size(); ++i) {
            if (!std::isfinite(coords[i]))
                throw Error("point coordinates must be finite");
            c_[i] = coords[i];
        }
    }

    static Point zero(std::size_t dim) { return Point(dim); }

    std::size_t dim() const noexcept { return dim_; }
    double operator[](std::size_t i) const noexcept { return c_[i]; }
    double& operator[](std::size_t i) noexcept { return c_[i]; }
    std::span<const double> coords() const noexcept { return {c_.data(), dim_}; }

    Point& operator+=(const Point& o) noexcept
    {
        for (std::size_t i = 0; i < dim_; ++i)
            c_[i] += o.c_[i];
        return *this;
    }
    Point& operator-=(const Point& o) noexcept
    {
        for (std::size_t i = 0; i < dim_; ++i)
            c_[i] -= o.c_[i];
        return *this;
    }
    Point& operator*=(double s) noexcept
    {
        for (std::size_t i = 0; i < dim_; ++i)
            c_[i] *= s;
        return *this;
    }

    friend Point operator+(Point a, const Point& b) noexcept { return a += b; }
    friend Point operator-(Point a, const Point& b) noexcept { return a -= b; }
    friend Point operator*(Point a, double s) noexcept { return a *= s; }
    friend Point operator*(double s, Point a) noexcept { return a *= s; }
    Point operator-() const noexcept
    {
        Point r = *this;
        for (std::size_t i = 0; i < dim_; ++i)
            r.c_[i] = -r.c_[i];
        return r;
    }

    friend bool operator==(const Point& a, const Point& b) noexcept
    {
        if (a.dim_ != b.dim_)
            return false;
        for (std::size_t i = 0; i < a.dim_; ++i)
            if (a.c_[i] != b.c_[i])
                return false;
        return true;
    }

    double dot(const Point& o) const noexcept
    {
        double s = 0;
        for (std::size_t i = 0; i < dim_; ++i)
            s += c_[i] * o.c_[i];
        return s;
    }
    double norm2() const noexcept { return dot(*this); }
    double norm() const noexcept { return std::sqrt(norm2()); }

    bool is_zero() const noexcept
    {
        return std::all_of(c_.begin(), c_.begin() + dim_, [](double v) { return v == 0.0; });
    }

  private:
    static void check_dim(std::size_t d)
    {
        if (d == 0 || d > kMaxDim)
            throw Error("point dimension must be in [1, " + std::to_string(kMaxDim) + "]");
    }

    std::array<double, kMaxDim> c_{};
    std::uint8_t dim_ = 0;
};

inline double distance2(const Point& a, const Point& b) noexcept
{
    double s = 0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        const double t = a[i] - b[i];
        s += t * t;
    }
    return s;
}

/// Open ball B_center^radius.
struct Ball
{
    Point center;
    double radius = 1.0;

    Ball(Point c, double r) : center(c), radius(r)
    {
        if (!(r > 0) || !std::isfinite(r))
            throw Error("ball radius must be positive and finite");
    }

    static Ball at_origin(std::size_t dim, double r) { return Ball(Point::zero(dim), r); }
    bool contains(const Point& p) const noexcept
    {
        return distance2(p, center) < radius * radius;
    }
};

/// Half-open box [lo, hi).
struct Box
{
    Point lo;
    Point hi;

    Box(Point l, Point h) : lo(l), hi(h)
    {
        if (lo.dim() != hi.dim())
            throw DimensionMismatch(lo.dim(), hi.dim());
        for (std::size_t i = 0; i < lo.dim(); ++i)
            if (!(lo[i] < hi[i]))
                throw Error("box requires lo < hi componentwise");
    }

    static Box cube(std::size_t dim, double lo, double hi)
    {
        Point l(dim), h(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            l[i] = lo;
            h[i] = hi;
        }
        return Box(l, h);
    }

    bool contains(const Point& p) const noexcept
    {
        for (std::size_t i = 0; i < lo.dim(); ++i)
            if (p[i] < lo[i] || !(p[i] < hi[i]))
                return false;
        return true;
    }
};

using Region = std::variant<Ball, Box>;

inline std::size_t dim_of(const Region& region)
{
    return std::visit([](const auto& r) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(r)>, Ball>)
            return r.center.dim();
        else
            return r.lo.dim();
    }, region);
}

inline bool contains(const Region& region, const Point& p) noexcept
{
    return std::visit([&](const auto& r) { return r.contains(p); }, region);
}

inline double unit_ball_volume(std::size_t d)
{
    const double h = 0.5 * static_cast<double>(d);
    return std::pow(std::numbers::pi, h) / std::tgamma(h + 1.0);
}

/// Surface area of the unit sphere S^{d-1}.
inline double unit_sphere_area(std::size_t d)
{
    return static_cast<double>(d) * unit_ball_volume(d);
}

inline double volume(const Region& region)
{
    return std::visit([](const auto& r) -> double {
        if constexpr (std::is_same_v<std::decay_t<decltype(r)>, Ball>) {
            return unit_ball_volume(r.center.dim()) * std::pow(r.radius, static_cast<double>(r.center.dim()));
        } else {
            double v = 1;
            for (std::size_t i = 0; i < r.lo.dim(); ++i)
                v *= r.hi[i] - r.lo[i];
            return v;
        }
    }, region);
}

/// Region enlarged by `pad` in every direction (ball stays a ball).
inline Region dilate(const Region& region, double pad)
{
    if (pad < 0 || !std::isfinite(pad))
        throw Error("padding must be finite and nonnegative");
    return std::visit([pad](const auto& r) -> Region {
        if constexpr (std::is_same_v<std::decay_t<decltype(r)>, Ball>) {
            return Ball(r.center, r.radius + pad);
        } else {
            Point lo = r.lo, hi = r.hi;
            for (std::size_t i = 0; i < lo.dim(); ++i) {
                lo[i] -= pad;
                hi[i] += pad;
            }
            return Box(lo, hi);
        }
    }, region);
}

/// True when `inner` lies inside the closure of `outer`.
inline bool region_within(const Region& inner, const Region& outer)
{
    if (dim_of(inner) != dim_of(outer))
        throw DimensionMismatch(dim_of(outer), dim_of(inner));
    const std::size_t d = dim_of(inner);
    constexpr double tol = 1e-12;
    if (const auto* ob = std::get_if<Ball>(&outer)) {
        if (const auto* ib = std::get_if<Ball>(&inner))
            return std::sqrt(distance2(ib->center, ob->center)) + ib->radius <= ob->radius + tol;
        const auto& bx = std::get<Box>(inner);
        // Farthest corner must be inside.
        double s = 0;
        for (std::size_t i = 0; i < d; ++i) {
            const double a = std::abs(bx.lo[i] - ob->center[i]);
            const double b = std::abs(bx.hi[i] - ob->center[i]);
            s += std::max(a, b) * std::max(a, b);
        }
        return std::sqrt(s) <= ob->radius + tol;
    }
    const auto& ox = std::get<Box>(outer);
    for (std::size_t i = 0; i < d; ++i) {
        double lo = 0, hi = 0;
        if (const auto* ib = std::get_if<Ball>(&inner)) {
            lo = ib->center[i] - ib->radius;
            hi = ib->center[i] + ib->radius;
        } else {
            lo = std::get<Box>(inner).lo[i];
            hi = std::get<Box>(inner).hi[i];
        }
        if (lo < ox.lo[i] - tol || hi > ox.hi[i] + tol)
            return false;
    }
    return true;
}

/// Uniform draw from a ball or box.
template <class Rng>
Point sample_uniform(const Region& region, Rng& rng)
{
    if (const auto* bx = std::get_if<Box>(&region)) {
        Point p(bx->lo.dim());
        for (std::size_t i = 0; i < p.dim(); ++i)
            p[i] = bx->lo[i] + (bx->hi[i] - bx->lo[i]) * rng.uniform();
        return p;
    }
    const auto& b = std::get<Ball>(region);
    const std::size_t d = b.center.dim();
    // Rejection from the bounding cube; acceptance >= 8% for d <= 6.
    for (;;) {
        Point u(d);
        for (std::size_t i = 0; i < d; ++i)
            u[i] = 2.0 * rng.uniform() - 1.0;
        if (u.norm2() < 1.0)
            return b.center + u * b.radius;
    }
}

/// Finite multiset of points sharing one dimension.
class PointPattern
{
  public:
    explicit PointPattern(std::size_t dim) : dim_(dim)
    {
        if (dim == 0 || dim > kMaxDim)
            throw Error("pattern dimension out of range");
    }

    PointPattern(std::size_t dim, std::vector<Point> pts) : PointPattern(dim)
    {
        for (const auto& p : pts)
            add(p);
    }

    void add(const Point& p)
    {
        if (p.dim() != dim_)
            throw DimensionMismatch(dim_, p.dim());
        points_.push_back(p);
    }

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return points_.size(); }
    bool empty() const noexcept { return points_.empty(); }
    const std::vector<Point>& points() const noexcept { return points_; }
    const Point& operator[](std::size_t i) const noexcept { return points_[i]; }
    auto begin() const noexcept { return points_.begin(); }
    auto end() const noexcept { return points_.end(); }

    PointPattern translated(const Point& shift) const
    {
        PointPattern out(dim_);
        out.points_.reserve(points_.size());
        for (const auto& p : points_)
            out.points_.push_back(p + shift);
        return out;
    }

    friend bool operator==(const PointPattern&, const PointPattern&) = default;

  private:
    std::size_t dim_;
    std::vector<Point> points_;
};

/// Number of points of the multiset inside the region.
inline std::size_t count_in(const PointPattern& pattern, const Region& region)
{
    if (pattern.dim() != dim_of(region))
        throw DimensionMismatch(dim_of(region), pattern.dim());
    return static_cast<std::size_t>(std::count_if(
        pattern.begin(), pattern.end(), [&](const Point& p) { return contains(region, p); }));
}

} // namespace cascadelab
