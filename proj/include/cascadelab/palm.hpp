// Copyright 2026 The cascadelab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "branching.hpp"
#include "clusters.hpp"
#include "geometry.hpp"
#include "io.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace cascadelab {

/// One transition of the chain L_n: stay at l w.p. (n+1-l)/(n+2), else
/// move to l+1.
inline int step_L(int l, int n, RngStream& rng)
{
    if (n < 0 || l < 0 || l > n)
        throw Error("step_L needs 0 <= l <= n, got l=" + std::to_string(l) + ", n=" + std::to_string(n));
    const double stay = static_cast<double>(n + 1 - l) / static_cast<double>(n + 2);
    return rng.uniform() < stay ? l : l + 1;
}

/// Node of a Palm tree. `gen` is the generation relative to the origin
/// point (ancestors negative); `level` is the spine level whose
/// attachment introduced the node (0 for the origin's own tree).
struct PalmNode
{
    Point location;
    std::int32_t gen = 0;
    std::int32_t parent = -1;
    std::int32_t level = 0;
    bool spine = false;
};

namespace detail {

inline void append_subtree(std::vector<PalmNode>& nodes, const GenealogyTree& tree, std::int32_t parent,
                           std::int32_t gen0, std::int32_t level, std::vector<std::size_t>* leaves,
                           int leaf_generation)
{
    const auto base = static_cast<std::int32_t>(nodes.size());
    for (const auto& t : tree.nodes()) {
        const std::int32_t p = t.parent < 0 ? parent : base + t.parent;
        nodes.push_back({t.location, gen0 + t.generation, p, level, false});
        if (leaves && t.generation == leaf_generation)
            leaves->push_back(nodes.size() - 1);
    }
}

inline std::size_t count_in_ball(const std::vector<PalmNode>& nodes, double r)
{
    const double r2 = r * r;
    std::size_t k = 0;
    for (const auto& n : nodes)
        k += n.location.norm2() < r2 ? 1 : 0;
    return k;
}

} // namespace detail

/// eta-bar_n^(l): the tree of the forward/backward construction. The
/// origin point is node 0; the current root is the oldest ancestor.
class PalmTreeState
{
  public:
    explicit PalmTreeState(std::size_t dim)
    {
        nodes_.push_back({Point::zero(dim), 0, -1, 0, true});
        leaves_.push_back(0);
    }

    int n() const noexcept { return n_; }
    int l() const noexcept { return l_; }
    std::size_t dim() const noexcept { return nodes_.front().location.dim(); }
    std::size_t size() const noexcept { return nodes_.size(); }
    const std::vector<PalmNode>& nodes() const noexcept { return nodes_; }
    std::size_t root_index() const noexcept { return root_; }
    static constexpr std::size_t origin_index() noexcept { return 0; }
    const std::vector<std::size_t>& leaves() const noexcept { return leaves_; }
    int generation_from_root(std::size_t i) const noexcept { return nodes_[i].gen + l_; }

    std::size_t count_in_ball(double r) const { return detail::count_in_ball(nodes_, r); }

    PointPattern points() const
    {
        PointPattern p(dim());
        for (const auto& n : nodes_)
            p.add(n.location);
        return p;
    }

  private:
    friend PalmTreeState palm_forward_step(PalmTreeState, const ClusterModel&, RngStream&);
    friend PalmTreeState palm_backward_step(PalmTreeState, const ClusterModel&, RngStream&);

    std::vector<PalmNode> nodes_;
    std::vector<std::size_t> leaves_;   // nodes at generation n from the root
    std::size_t root_ = 0;
    int n_ = 0;
    int l_ = 0;
};

/// eta-bar_n^(l) -> eta-bar_{n+1}^(l): one cluster on every leaf.
inline PalmTreeState palm_forward_step(PalmTreeState s, const ClusterModel& model, RngStream& rng)
{
    if (model.dim() != s.dim())
        throw DimensionMismatch(s.dim(), model.dim());
    std::vector<std::size_t> next;
    std::vector<Point> kids;
    for (std::size_t i : s.leaves_) {
        kids.clear();
        model.sample_children(s.nodes_[i].location, rng, kids);
        const std::int32_t g = s.nodes_[i].gen + 1;
        for (const auto& k : kids) {
            s.nodes_.push_back({k, g, static_cast<std::int32_t>(i), 0, false});
            next.push_back(s.nodes_.size() - 1);
        }
    }
    s.leaves_ = std::move(next);
    ++s.n_;
    return s;
}

/// eta-bar_n^(l) -> eta-bar_{n+1}^(l+1): a parent above the current root
/// and a depth-n cumulative tree on each sibling.
inline PalmTreeState palm_backward_step(PalmTreeState s, const ClusterModel& model, RngStream& rng)
{
    if (model.dim() != s.dim())
        throw DimensionMismatch(s.dim(), model.dim());
    const ParentSiblings ps = sample_parent_siblings(model, rng);
    const PalmNode old_root = s.nodes_[s.root_];
    const auto parent_index = static_cast<std::int32_t>(s.nodes_.size());
    s.nodes_.push_back({old_root.location + ps.parent, old_root.gen - 1, -1, 0, true});
    s.nodes_[s.root_].parent = parent_index;
    s.root_ = static_cast<std::size_t>(parent_index);
    for (const auto& sib : ps.siblings) {
        const auto tree = simulate_cumulative_brw(model, old_root.location + sib, s.n_, rng);
        detail::append_subtree(s.nodes_, tree, parent_index, old_root.gen, 0, &s.leaves_, s.n_);
    }
    ++s.n_;
    ++s.l_;
    return s;
}

/// eta-bar_n via the L chain started at L_0 = 0.
inline PalmTreeState simulate_palm_fb(const ClusterModel& model, int n, RngStream& rng)
{
    if (n < 0)
        throw Error("n must be nonnegative");
    PalmTreeState s(model.dim());
    for (int t = 0; t < n; ++t) {
        const int next = step_L(s.l(), t, rng);
        s = next == s.l() ? palm_forward_step(std::move(s), model, rng)
                          : palm_backward_step(std::move(s), model, rng);
    }
    return s;
}

struct BackwardSpine
{
    std::vector<Point> locations;   // zeta_0 = 0, zeta_1, ...
};

/// Truncated direct construction: origin tree, then for every spine level
/// j < spine_depth the parent zeta_{j+1} and the siblings of zeta_j, each
/// carrying its own tree. Nodes are tagged with the level that added them
/// (origin tree 0, level j attachments j+1), so the tree for any smaller
/// depth m is the set of nodes with level <= m.
struct DirectPalmTree
{
    std::vector<PalmNode> nodes;
    BackwardSpine spine;
    int spine_depth = 0;
    std::size_t trees = 0;             // attached trees
    std::size_t truncated_trees = 0;   // stopped by gen_cap or node_cap

    std::size_t count_in_ball(double r, int depth) const
    {
        const double r2 = r * r;
        std::size_t k = 0;
        for (const auto& n : nodes)
            k += (n.level <= depth && n.location.norm2() < r2) ? 1 : 0;
        return k;
    }
    std::size_t count_in_ball(double r) const { return count_in_ball(r, spine_depth); }
    int generation_from_root(std::size_t i) const noexcept { return nodes[i].gen + spine_depth; }
};

/// Approximation of eta-bar_infinity with outgrown trees capped at gen_cap
/// generations and node_cap nodes.
inline DirectPalmTree simulate_palm_direct(const ClusterModel& model, int spine_depth, int gen_cap, RngStream& rng,
                                           std::size_t node_cap = kDefaultNodeCap)
{
    if (model.var_zero())
        throw Error("outgrown tree a.s. infinite: count variance is zero");
    if (spine_depth < 0)
        throw Error("spine depth must be nonnegative");
    const std::size_t d = model.dim();
    DirectPalmTree out;
    out.spine_depth = spine_depth;
    out.spine.locations.push_back(Point::zero(d));

    auto attach = [&](const OutgrownTree& t, std::int32_t parent, std::int32_t gen0, std::int32_t level) {
        ++out.trees;
        out.truncated_trees += t.truncated ? 1 : 0;
        detail::append_subtree(out.nodes, t.tree, parent, gen0, level, nullptr, 0);
    };

    attach(simulate_outgrown_brw(model, Point::zero(d), rng, gen_cap, node_cap), -1, 0, 0);
    out.nodes.front().spine = true;
    std::size_t child = 0;   // index of zeta_j
    for (int j = 0; j < spine_depth; ++j) {
        const ParentSiblings ps = sample_parent_siblings(model, rng);
        const Point zj = out.spine.locations.back();
        const auto pidx = static_cast<std::int32_t>(out.nodes.size());
        out.nodes.push_back({zj + ps.parent, -(j + 1), -1, j + 1, true});
        out.nodes[child].parent = pidx;
        out.spine.locations.push_back(zj + ps.parent);
        for (const auto& sib : ps.siblings)
            attach(simulate_outgrown_brw(model, zj + sib, rng, gen_cap, node_cap), pidx, -j, j + 1);
        child = static_cast<std::size_t>(pidx);
    }
    return out;
}

/// Direct construction of eta-bar_n itself: L ~ Unif{0..n}, a spine of
/// length L, the origin carrying a depth n-L tree and every sibling of
/// zeta_j a depth n-L+j tree. Equal in law to simulate_palm_fb(model, n).
inline DirectPalmTree simulate_palm_direct_finite(const ClusterModel& model, int n, RngStream& rng)
{
    if (n < 0)
        throw Error("n must be nonnegative");
    const std::size_t d = model.dim();
    const int L = static_cast<int>(rng.below(static_cast<std::uint64_t>(n) + 1));
    DirectPalmTree out;
    out.spine_depth = L;
    out.spine.locations.push_back(Point::zero(d));
    ++out.trees;
    detail::append_subtree(out.nodes, simulate_cumulative_brw(model, Point::zero(d), n - L, rng), -1, 0, 0,
                           nullptr, 0);
    out.nodes.front().spine = true;
    std::size_t child = 0;
    for (int j = 0; j < L; ++j) {
        const ParentSiblings ps = sample_parent_siblings(model, rng);
        const Point zj = out.spine.locations.back();
        const auto pidx = static_cast<std::int32_t>(out.nodes.size());
        out.nodes.push_back({zj + ps.parent, -(j + 1), -1, j + 1, true});
        out.nodes[child].parent = pidx;
        out.spine.locations.push_back(zj + ps.parent);
        for (const auto& sib : ps.siblings) {
            ++out.trees;
            detail::append_subtree(out.nodes, simulate_cumulative_brw(model, zj + sib, n - L + j, rng), pidx, -j,
                                   j + 1, nullptr, 0);
        }
        child = static_cast<std::size_t>(pidx);
    }
    return out;
}

/// ||mu^{r,k}||: points whose open r-ball (itself included) holds at most
/// k points of the pattern.
inline std::size_t truncated_count(std::vector<Point> pts, double r, std::size_t k)
{
    if (!(r > 0) || k == 0)
        throw Error("truncation needs r > 0 and k > 0");
    std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a[0] < b[0]; });
    const double r2 = r * r;
    std::size_t kept = 0, lo = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        while (pts[lo][0] <= pts[i][0] - r)
            ++lo;
        std::size_t c = 0;
        for (std::size_t j = lo; j < pts.size() && pts[j][0] < pts[i][0] + r; ++j)
            c += distance2(pts[i], pts[j]) < r2 ? 1 : 0;
        kept += c <= k ? 1 : 0;
    }
    return kept;
}

inline std::size_t truncated_count(const PointPattern& p, double r, std::size_t k)
{
    return truncated_count(p.points(), r, k);
}

/// Estimates of E||chi-bar_n^{r,k}|| / (n+1) over an (r, k) grid, r-major,
/// sharing one tree per replicate across the grid.
inline std::vector<EstimatorResult> truncation_ratio_grid(const ClusterModel& model, int n,
                                                          const std::vector<double>& rs,
                                                          const std::vector<std::size_t>& ks,
                                                          std::size_t replicates, const RngStream& rng,
                                                          std::size_t threads = 1, double confidence = 0.99)
{
    if (replicates < 2)
        throw Error("need at least 2 replicates");
    const Point origin = Point::zero(model.dim());
    const double scale = 1.0 / (n + 1.0);
    auto rows = run_replicates(replicates, rng, threads, [&](std::size_t, RngStream& s) {
        const auto pts = simulate_cumulative_brw(model, origin, n, s).points().points();
        std::vector<double> v;
        for (double r : rs)
            for (std::size_t k : ks)
                v.push_back(static_cast<double>(truncated_count(pts, r, k)) * scale);
        return v;
    });
    std::vector<EstimatorResult> out;
    for (std::size_t j = 0; j < rs.size() * ks.size(); ++j) {
        std::vector<double> col(replicates);
        for (std::size_t i = 0; i < replicates; ++i)
            col[i] = rows[i][j];
        out.push_back(summarize(col, confidence, rng.seed()));
    }
    return out;
}

inline EstimatorResult truncation_ratio(const ClusterModel& model, int n, double r, std::size_t k,
                                        std::size_t replicates, const RngStream& rng, std::size_t threads = 1,
                                        double confidence = 0.99)
{
    return truncation_ratio_grid(model, n, {r}, {k}, replicates, rng, threads, confidence).front();
}

/// Estimates of P{eta-bar_n B_0^r <= k} over an (r, k) grid, r-major,
/// from the forward/backward construction.
inline std::vector<EstimatorResult> palm_ball_probability_grid(const ClusterModel& model, int n,
                                                               const std::vector<double>& rs,
                                                               const std::vector<std::size_t>& ks,
                                                               std::size_t replicates, const RngStream& rng,
                                                               std::size_t threads = 1, double confidence = 0.99)
{
    if (replicates < 2)
        throw Error("need at least 2 replicates");
    auto rows = run_replicates(replicates, rng, threads, [&](std::size_t, RngStream& s) {
        const auto tree = simulate_palm_fb(model, n, s);
        std::vector<double> v;
        for (double r : rs) {
            const std::size_t c = tree.count_in_ball(r);
            for (std::size_t k : ks)
                v.push_back(c <= k ? 1.0 : 0.0);
        }
        return v;
    });
    std::vector<EstimatorResult> out;
    for (std::size_t j = 0; j < rs.size() * ks.size(); ++j) {
        std::vector<double> col(replicates);
        for (std::size_t i = 0; i < replicates; ++i)
            col[i] = rows[i][j];
        out.push_back(summarize(col, confidence, rng.seed()));
    }
    return out;
}

enum class Finiteness { Finite, Infinite, Inconclusive };

inline const char* to_string(Finiteness f) noexcept
{
    switch (f) {
    case Finiteness::Finite: return "finite";
    case Finiteness::Infinite: return "infinite";
    case Finiteness::Inconclusive: return "inconclusive";
    }
    return "?";
}

struct FinitenessOptions
{
    int gen_cap = 200;
    std::size_t node_cap = 200'000;
    double plateau_threshold = 0.02;   // relative increment over the final doubling
    double growth_slope = 0.3;         // log-log slope of the mean curve
    std::size_t bootstrap = 1000;
    double confidence = 0.95;
    std::size_t threads = 1;
};

struct CurvePoint
{
    int spine_depth = 0;
    double mean = 0;
    double q10 = 0, q50 = 0, q90 = 0;
};

struct FinitenessReport
{
    Finiteness verdict = Finiteness::Inconclusive;
    double r = 0;
    std::vector<CurvePoint> curve;
    double relative_increment = 0;      // (m_last - m_prev) / m_last
    double relative_increment_upper = 0;
    double slope = 0;                   // over the second half of the schedule
    double truncation_rate = 0;         // fraction of attached trees hitting a cap
    std::size_t replicates = 0;
};

/// Counts of direct Palm trees in B_0^r along a spine schedule. One tree
/// per replicate is built at the deepest level, so the curve is pathwise
/// nondecreasing. Finite when the mean curve has plateaued (bootstrap upper
/// bound of the relative increment over the last two schedule points below
/// the threshold), infinite when its log-log slope exceeds growth_slope.
inline FinitenessReport local_finiteness_diagnostic(const ClusterModel& model, double r,
                                                    const std::vector<int>& schedule, std::size_t replicates,
                                                    const RngStream& rng, const FinitenessOptions& opt = {})
{
    if (schedule.size() < 2 || !std::is_sorted(schedule.begin(), schedule.end()) ||
        std::adjacent_find(schedule.begin(), schedule.end()) != schedule.end() || schedule.front() < 0)
        throw Error("spine schedule must be strictly increasing, nonnegative, with at least 2 entries");
    if (replicates < 2)
        throw Error("need at least 2 replicates");
    struct Row
    {
        std::vector<double> counts;
        std::size_t trees = 0, truncated = 0;
    };
    const RngStream sim = rng.substream(0);
    auto rows = run_replicates(replicates, sim, opt.threads, [&](std::size_t, RngStream& s) {
        const auto t = simulate_palm_direct(model, schedule.back(), opt.gen_cap, s, opt.node_cap);
        Row row;
        for (int m : schedule)
            row.counts.push_back(static_cast<double>(t.count_in_ball(r, m)));
        row.trees = t.trees;
        row.truncated = t.truncated_trees;
        return row;
    });

    FinitenessReport rep;
    rep.r = r;
    rep.replicates = replicates;
    std::size_t trees = 0, truncated = 0;
    for (const auto& row : rows) {
        trees += row.trees;
        truncated += row.truncated;
    }
    rep.truncation_rate = trees ? static_cast<double>(truncated) / static_cast<double>(trees) : 0.0;
    const std::size_t m = schedule.size();
    for (std::size_t j = 0; j < m; ++j) {
        std::vector<double> col(replicates);
        for (std::size_t i = 0; i < replicates; ++i)
            col[i] = rows[i].counts[j];
        CurvePoint p;
        p.spine_depth = schedule[j];
        p.mean = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(replicates);
        p.q10 = quantile(col, 0.1);
        p.q50 = quantile(col, 0.5);
        p.q90 = quantile(col, 0.9);
        rep.curve.push_back(p);
    }

    auto rel_increment = [&](const std::vector<std::size_t>& idx) {
        double a = 0, b = 0;
        for (std::size_t i : idx) {
            a += rows[i].counts[m - 2];
            b += rows[i].counts[m - 1];
        }
        return b > 0 ? (b - a) / b : 0.0;
    };
    std::vector<std::size_t> all(replicates);
    std::iota(all.begin(), all.end(), std::size_t{0});
    rep.relative_increment = rel_increment(all);
    RngStream boot = rng.substream(1);
    std::vector<double> stats;
    stats.reserve(opt.bootstrap);
    std::vector<std::size_t> idx(replicates);
    for (std::size_t b = 0; b < opt.bootstrap; ++b) {
        for (auto& i : idx)
            i = boot.below(replicates);
        stats.push_back(rel_increment(idx));
    }
    rep.relative_increment_upper = stats.empty() ? rep.relative_increment : quantile(stats, opt.confidence);

    std::vector<double> x, y;
    for (const auto& p : rep.curve)
        if (2 * p.spine_depth >= schedule.back() && p.mean > 0) {
            x.push_back(std::log(p.spine_depth + 1.0));
            y.push_back(std::log(p.mean));
        }
    rep.slope = x.size() >= 2 ? ols_slope(x, y) : 0.0;

    if (rep.relative_increment_upper < opt.plateau_threshold)
        rep.verdict = Finiteness::Finite;
    else if (rep.slope > opt.growth_slope)
        rep.verdict = Finiteness::Infinite;
    else
        rep.verdict = Finiteness::Inconclusive;
    return rep;
}

/// CSV: node_id,parent_id,generation_from_current_root,is_origin,is_spine,x1..xd.
inline void write_palm_csv(std::ostream& os, const std::vector<PalmNode>& nodes, int root_offset, bool header,
                           const std::vector<std::string>& prefix_header = {},
                           const std::vector<std::string>& prefix = {})
{
    CsvWriter csv(os);
    const std::size_t d = nodes.empty() ? 0 : nodes.front().location.dim();
    if (header) {
        std::vector<std::string> h = prefix_header;
        for (const char* c : {"node_id", "parent_id", "generation_from_current_root", "is_origin", "is_spine"})
            h.emplace_back(c);
        for (std::size_t i = 0; i < d; ++i)
            h.push_back("x" + std::to_string(i + 1));
        csv.row(h);
    }
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        for (const auto& p : prefix)
            csv.field(p);
        csv.field(i);
        if (nodes[i].parent >= 0)
            csv.field(static_cast<long long>(nodes[i].parent));
        else
            csv.field("");
        csv.field(nodes[i].gen + root_offset).field(i == 0).field(nodes[i].spine);
        for (double x : nodes[i].location.coords())
            csv.field(x);
        csv.end_row();
    }
}

} // namespace cascadelab
