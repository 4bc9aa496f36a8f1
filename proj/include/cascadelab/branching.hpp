// Copyright 2026 The cascadelab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "clusters.hpp"
#include "geometry.hpp"
#include "io.hpp"
#include "rng.hpp"

namespace cascadelab {

struct TreeNode
{
    Point location;
    std::int32_t generation = 0;
    std::int32_t parent = -1;   // -1 for the root
};

/// Genealogy of a cumulative branching random walk.
///
/// Nodes are stored generation by generation, so the leaves (the nodes of
/// generation max_generation) are a contiguous suffix of the node list.
/// Parents are referenced by index; there are no child lists.
class GenealogyTree
{
  public:
    explicit GenealogyTree(const Point& root) { nodes_.push_back({root, 0, -1}); }

    const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    std::size_t dim() const noexcept { return nodes_.front().location.dim(); }
    static constexpr std::size_t root_index() noexcept { return 0; }
    const Point& root() const noexcept { return nodes_.front().location; }
    int max_generation() const noexcept { return max_generation_; }

    std::span<const TreeNode> leaves() const noexcept
    {
        return std::span<const TreeNode>(nodes_).subspan(leaf_begin_);
    }
    std::size_t leaf_begin() const noexcept { return leaf_begin_; }
    bool extinct() const noexcept { return leaf_begin_ == nodes_.size(); }

    /// Galton-Watson path ||chi_k||, k = 0..max_generation.
    std::vector<std::size_t> generation_counts() const
    {
        std::vector<std::size_t> c(static_cast<std::size_t>(max_generation_) + 1, 0);
        for (const auto& n : nodes_)
            ++c[static_cast<std::size_t>(n.generation)];
        return c;
    }

    std::size_t count_in(const Region& region) const
    {
        if (dim_of(region) != dim())
            throw DimensionMismatch(dim(), dim_of(region));
        std::size_t k = 0;
        for (const auto& n : nodes_)
            k += contains(region, n.location) ? 1 : 0;
        return k;
    }

    PointPattern points() const
    {
        PointPattern p(dim());
        for (const auto& n : nodes_)
            p.add(n.location);
        return p;
    }

    /// Attaches an independent cluster to every leaf; the new children form
    /// generation max_generation + 1 (possibly empty).
    void grow(const ClusterModel& model, RngStream& rng)
    {
        const std::size_t begin = leaf_begin_, end = nodes_.size();
        const auto gen = static_cast<std::int32_t>(max_generation_ + 1);
        std::vector<Point> kids;
        for (std::size_t i = begin; i < end; ++i) {
            kids.clear();
            model.sample_children(nodes_[i].location, rng, kids);
            for (const auto& k : kids)
                nodes_.push_back({k, gen, static_cast<std::int32_t>(i)});
        }
        leaf_begin_ = end;
        ++max_generation_;
    }

    /// Keeps only the root (used to release the memory of thinned trees).
    void prune_to_root()
    {
        nodes_.resize(1);
        nodes_.shrink_to_fit();
        leaf_begin_ = 0;
        max_generation_ = 0;
    }

  private:
    std::vector<TreeNode> nodes_;
    std::size_t leaf_begin_ = 0;
    int max_generation_ = 0;
};

inline GenealogyTree grow_generation(GenealogyTree tree, const ClusterModel& model, RngStream& rng)
{
    tree.grow(model, rng);
    return tree;
}

/// chi-bar_n^root: generations 0..n of a branching random walk.
inline GenealogyTree simulate_cumulative_brw(const ClusterModel& model, const Point& root, int n, RngStream& rng)
{
    if (n < 0)
        throw Error("number of generations must be nonnegative");
    if (root.dim() != model.dim())
        throw DimensionMismatch(model.dim(), root.dim());
    GenealogyTree tree(root);
    for (int k = 0; k < n && !tree.extinct(); ++k)
        tree.grow(model, rng);
    // Extinct lineages still advance the generation counter.
    while (tree.max_generation() < n)
        tree.grow(model, rng);
    return tree;
}

struct OutgrownTree
{
    GenealogyTree tree;
    bool extinct = false;
    bool truncated = false;   // stopped by gen_cap or node_cap before extinction
};

inline constexpr int kDefaultGenCap = 10'000;
inline constexpr std::size_t kDefaultNodeCap = std::size_t{1} << 22;

/// Grows chi-bar_infinity until a generation is empty or a cap is reached.
/// Only defined when Var||chi|| > 0; otherwise the tree is a.s. infinite.
inline OutgrownTree simulate_outgrown_brw(const ClusterModel& model, const Point& root, RngStream& rng,
                                          int gen_cap = kDefaultGenCap, std::size_t node_cap = kDefaultNodeCap)
{
    if (model.var_zero())
        throw Error("outgrown tree a.s. infinite: count variance is zero");
    if (gen_cap < 0)
        throw Error("gen_cap must be nonnegative");
    if (root.dim() != model.dim())
        throw DimensionMismatch(model.dim(), root.dim());
    OutgrownTree out{GenealogyTree(root), false, false};
    while (out.tree.max_generation() < gen_cap && out.tree.size() < node_cap) {
        out.tree.grow(model, rng);
        if (out.tree.extinct()) {
            out.extinct = true;
            return out;
        }
    }
    out.truncated = true;
    return out;
}

/// CSV: node_id,parent_id,generation,x1..xd (parent_id empty for the root).
inline void write_tree_csv(std::ostream& os, const GenealogyTree& tree, bool header = true)
{
    CsvWriter csv(os);
    if (header) {
        std::vector<std::string> h{"node_id", "parent_id", "generation"};
        for (std::size_t i = 0; i < tree.dim(); ++i)
            h.push_back("x" + std::to_string(i + 1));
        csv.row(h);
    }
    for (std::size_t i = 0; i < tree.size(); ++i) {
        const auto& n = tree.nodes()[i];
        csv.field(static_cast<long long>(i));
        if (n.parent >= 0)
            csv.field(static_cast<long long>(n.parent));
        else
            csv.field(std::string());
        csv.field(static_cast<long long>(n.generation));
        for (double x : n.location.coords())
            csv.field(x);
        csv.end_row();
    }
}

} // namespace cascadelab
