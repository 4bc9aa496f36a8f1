// Copyright 2026 The cascadelab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cascade.hpp"
#include "clusters.hpp"
#include "criteria.hpp"
#include "geometry.hpp"
#include "io.hpp"
#include "palm.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace cascadelab {

/// Malformed or inconsistent configuration; maps to exit code 2.
class ConfigError : public Error
{
  public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Schema helpers

namespace config {

/// Read access to one JSON object that remembers which keys were used, so
/// that leftovers can be rejected.
class Section
{
  public:
    Section(const Json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object())
            throw ConfigError(path_ + ": expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    const Json& raw(const std::string& key)
    {
        if (!j_.contains(key))
            throw ConfigError(at(key) + ": missing required key");
        used_.insert(key);
        return j_.at(key);
    }

    Section sub(const std::string& key) { return Section(raw(key), at(key)); }

    template <class T>
    T req(const std::string& key)
    {
        return as<T>(raw(key), at(key));
    }

    template <class T>
    T get(const std::string& key, T fallback)
    {
        return has(key) ? req<T>(key) : std::move(fallback);
    }

    /// Rejects keys that were never read.
    void done() const
    {
        for (const auto& [k, v] : j_.items())
            if (!used_.count(k))
                throw ConfigError(at(k) + ": unknown key");
    }

    std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    const std::string& path() const noexcept { return path_; }

    template <class T>
    static T as(const Json& v, const std::string& path)
    {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean())
                throw ConfigError(path + ": expected a boolean");
            return v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string())
                throw ConfigError(path + ": expected a string");
            return v.get<std::string>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number())
                throw ConfigError(path + ": expected a number");
            const double x = v.get<double>();
            if (!std::isfinite(x))
                throw ConfigError(path + ": expected a finite number");
            return x;
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer())
                throw ConfigError(path + ": expected an integer");
            if constexpr (std::is_unsigned_v<T>) {
                if (v.is_number_unsigned())
                    return static_cast<T>(v.get<std::uint64_t>());
                if (v.get<long long>() < 0)
                    throw ConfigError(path + ": expected a nonnegative integer");
                return static_cast<T>(v.get<long long>());
            } else {
                return static_cast<T>(v.get<long long>());
            }
        } else {
            // std::vector<U>
            using U = typename T::value_type;
            if (!v.is_array())
                throw ConfigError(path + ": expected an array");
            T out;
            for (std::size_t i = 0; i < v.size(); ++i)
                out.push_back(as<U>(v[i], path + "[" + std::to_string(i) + "]"));
            return out;
        }
    }

  private:
    const Json& j_;
    std::string path_;
    std::set<std::string> used_;
};

inline Point parse_point(const Json& j, const std::string& path)
{
    const auto v = Section::as<std::vector<double>>(j, path);
    if (v.empty() || v.size() > kMaxDim)
        throw ConfigError(path + ": dimension must lie in [1, " + std::to_string(kMaxDim) + "]");
    return Point(std::span<const double>(v));
}

inline std::size_t parse_dim(Section& s, const std::string& key)
{
    const auto d = s.req<std::size_t>(key);
    if (d < 1 || d > kMaxDim)
        throw ConfigError(s.at(key) + ": dimension must lie in [1, " + std::to_string(kMaxDim) + "]");
    return d;
}

inline DisplacementLaw parse_displacement(Section s)
{
    const auto law = s.req<std::string>("law");
    DisplacementLaw out;
    if (law == "gaussian") {
        const auto d = parse_dim(s, "d");
        out = laws::gaussian(d, s.get<double>("sigma", 1.0));
    } else if (law == "gaussian_diag") {
        const auto sig = s.req<std::vector<double>>("sigmas");
        if (sig.empty() || sig.size() > kMaxDim)
            throw ConfigError(s.at("sigmas") + ": dimension must lie in [1, " + std::to_string(kMaxDim) + "]");
        out = laws::gaussian_diag(sig);
    } else if (law == "stable") {
        const auto d = parse_dim(s, "d");
        out = laws::symmetric_stable(d, s.req<double>("alpha"));
    } else if (law == "lomax") {
        out = laws::lomax(s.req<double>("alpha"));
    } else if (law == "symmetric_pareto") {
        out = laws::symmetric_pareto(s.req<double>("alpha"));
    } else if (law == "point_mass") {
        out = laws::point_mass(parse_point(s.raw("x0"), s.at("x0")));
    } else {
        throw ConfigError(s.at("law") + ": unknown displacement law '" + law + "'");
    }
    s.done();
    return out;
}

inline CountLaw parse_count(Section s)
{
    const auto law = s.req<std::string>("law");
    CountLaw out = CountLaw::constant(1);
    if (law == "poisson")
        out = CountLaw::poisson(s.get<double>("mean", 1.0));
    else if (law == "table")
        out = CountLaw::table(s.req<std::vector<double>>("pmf"));
    else if (law == "constant")
        out = CountLaw::constant(s.req<std::size_t>("k"));
    else
        throw ConfigError(s.at("law") + ": unknown count law '" + law + "'");
    s.done();
    return out;
}

inline ClusterModel parse_model(Section s)
{
    const auto family = s.req<std::string>("family");
    std::optional<ClusterModel> m;
    if (family == "deterministic") {
        m = ClusterModel::deterministic(parse_point(s.raw("x0"), s.at("x0")));
    } else if (family == "no_displacement") {
        const auto d = parse_dim(s, "d");
        m = ClusterModel::no_displacement(parse_count(s.sub("count")), d);
    } else if (family == "single_point") {
        m = ClusterModel::single_point(parse_displacement(s.sub("displacement")));
    } else if (family == "poisson_cluster") {
        m = ClusterModel::poisson(parse_displacement(s.sub("displacement")));
    } else if (family == "compound") {
        auto count = parse_count(s.sub("count"));
        m = ClusterModel::compound(std::move(count), parse_displacement(s.sub("displacement")));
    } else {
        throw ConfigError(s.at("family") + ": unknown family '" + family + "'");
    }
    s.done();
    return *m;
}

inline Region parse_region(Section s)
{
    if (s.has("box") == s.has("ball"))
        throw ConfigError(s.path() + ": expected exactly one of 'box' or 'ball'");
    Region out = Ball::at_origin(1, 1);
    if (s.has("box")) {
        Section b = s.sub("box");
        out = Box(parse_point(b.raw("lo"), b.at("lo")), parse_point(b.raw("hi"), b.at("hi")));
        b.done();
    } else {
        Section b = s.sub("ball");
        out = Ball(parse_point(b.raw("center"), b.at("center")), b.req<double>("radius"));
        b.done();
    }
    s.done();
    return out;
}

} // namespace config

// ---------------------------------------------------------------------------
// Configuration

enum class ExperimentKind { Cascade, PalmFb, PalmDirect, Truncation, Criteria, RegressionTable };

inline const char* to_string(ExperimentKind k) noexcept
{
    switch (k) {
    case ExperimentKind::Cascade: return "cascade";
    case ExperimentKind::PalmFb: return "palm_fb";
    case ExperimentKind::PalmDirect: return "palm_direct";
    case ExperimentKind::Truncation: return "truncation";
    case ExperimentKind::Criteria: return "criteria";
    case ExperimentKind::RegressionTable: return "regression_table";
    }
    return "?";
}

struct CascadeSection
{
    double c = 1.0;
    std::optional<Region> window;
    std::optional<double> padding;   // absent: pilot quantile
    double padding_quantile = 0.999;
    std::size_t padding_pilot = 4000;
    int n_max = 10;
    int n_from = 0;
    std::vector<double> r{1.0};
    double dispersion_alpha = 0.01;
};

struct PalmSection
{
    int n_max = 3;
    std::vector<double> r{1.0};
    std::vector<int> schedule{0, 4, 8, 16, 32};
    int spine_depth = 6;
    int gen_cap = 200;
    std::size_t node_cap = 200'000;
};

struct TruncationSection
{
    std::vector<int> n{2, 4, 8};
    std::vector<double> r{0.5, 1.0, 2.0};
    std::vector<std::size_t> k{1, 2, 4};
};

struct SimulationSection
{
    bool enabled = true;
    double r = 1.0;
    int n_max = 16;
    std::size_t replicates = 40;
    double expected_immigrants = 20'000;
    double padding_quantile = 0.999;
    double min_kappa = 2.0;   // expected kappa at n = 0 below this: no trend reported
};

struct FiguresSection
{
    std::vector<int> cascade_steps{0, 1, 2, 3};
    int palm_fb_steps = 3;
    int palm_direct_spine_depth = 6;
    int gen_cap = 50;
    std::size_t node_cap = 20'000;
};

struct ExperimentConfig
{
    ExperimentKind kind = ExperimentKind::Cascade;
    std::uint64_t seed = 1;
    std::optional<std::size_t> threads;
    std::size_t replicates = 1000;
    double confidence = 0.99;
    std::optional<ClusterModel> model;
    CascadeSection cascade;
    PalmSection palm;
    TruncationSection truncation;
    PersistenceBudget criteria;   // seed and threads are filled in at run time
    SimulationSection simulation;
    FiguresSection figures;
    std::string output_dir = ".";
    std::string output_prefix;
    std::string hash;   // FNV-1a of the canonical config without "threads"
};

namespace detail {

inline void require(bool ok, const std::string& what)
{
    if (!ok)
        throw ConfigError(what);
}

inline void require_positive(const std::vector<double>& v, const std::string& what)
{
    require(!v.empty(), what + ": must not be empty");
    for (double x : v)
        require(x > 0, what + ": entries must be positive");
}

inline void require_horizons(const std::vector<int>& h, const std::string& what)
{
    require(h.size() >= 3, what + ": needs at least 3 horizons");
    for (std::size_t i = 0; i < h.size(); ++i)
        require(h[i] > 0 && (i == 0 || h[i] > h[i - 1]), what + ": must be positive and increasing");
}

} // namespace detail

/// Parses and validates a configuration document. Every check that can be
/// made without simulating happens here.
inline ExperimentConfig parse_config(const Json& doc)
{
    using detail::require;
    ExperimentConfig cfg;
    config::Section top(doc, "");

    const auto kind = top.req<std::string>("experiment");
    bool known = false;
    for (auto k : {ExperimentKind::Cascade, ExperimentKind::PalmFb, ExperimentKind::PalmDirect,
                   ExperimentKind::Truncation, ExperimentKind::Criteria, ExperimentKind::RegressionTable})
        if (kind == to_string(k)) {
            cfg.kind = k;
            known = true;
        }
    require(known, "experiment: unknown experiment '" + kind + "'");

    cfg.seed = top.req<std::uint64_t>("seed");
    if (top.has("threads")) {
        cfg.threads = top.req<std::size_t>("threads");
        require(*cfg.threads >= 1, "threads: must be at least 1");
    }
    cfg.replicates = top.get<std::size_t>("replicates", cfg.replicates);
    require(cfg.replicates >= 2, "replicates: must be at least 2");
    cfg.confidence = top.get<double>("confidence", cfg.confidence);
    require(cfg.confidence > 0 && cfg.confidence < 1, "confidence: must lie in (0, 1)");

    if (top.has("model")) {
        try {
            cfg.model = config::parse_model(top.sub("model"));
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            throw ConfigError(std::string("model: ") + e.what());
        }
    }
    require(cfg.model.has_value() || cfg.kind == ExperimentKind::RegressionTable, "model: missing required key");

    if (top.has("cascade")) {
        auto s = top.sub("cascade");
        auto& c = cfg.cascade;
        c.c = s.get<double>("c", c.c);
        if (s.has("window"))
            c.window = config::parse_region(s.sub("window"));
        if (s.has("padding")) {
            const Json& p = s.raw("padding");
            if (!(p.is_string() && p.get<std::string>() == "auto"))
                c.padding = config::Section::as<double>(p, s.at("padding"));
        }
        c.padding_quantile = s.get<double>("padding_quantile", c.padding_quantile);
        c.padding_pilot = s.get<std::size_t>("padding_pilot", c.padding_pilot);
        c.n_max = s.get<int>("n_max", c.n_max);
        c.n_from = s.get<int>("n_from", c.n_from);
        c.r = s.get<std::vector<double>>("r", c.r);
        c.dispersion_alpha = s.get<double>("dispersion_alpha", c.dispersion_alpha);
        s.done();
        require(c.c > 0, "cascade.c: must be positive");
        require(!c.padding || *c.padding >= 0, "cascade.padding: must be nonnegative or \"auto\"");
        require(c.padding_quantile > 0 && c.padding_quantile < 1, "cascade.padding_quantile: must lie in (0, 1)");
        require(c.padding_pilot >= 1, "cascade.padding_pilot: must be positive");
        require(c.n_max >= 0, "cascade.n_max: must be nonnegative");
        require(c.n_from >= 0 && c.n_from <= c.n_max, "cascade.n_from: must lie in [0, n_max]");
        detail::require_positive(c.r, "cascade.r");
        require(c.dispersion_alpha > 0 && c.dispersion_alpha < 1, "cascade.dispersion_alpha: must lie in (0, 1)");
    }
    if (top.has("palm")) {
        auto s = top.sub("palm");
        auto& p = cfg.palm;
        p.n_max = s.get<int>("n_max", p.n_max);
        p.r = s.get<std::vector<double>>("r", p.r);
        p.schedule = s.get<std::vector<int>>("schedule", p.schedule);
        p.spine_depth = s.get<int>("spine_depth", p.spine_depth);
        p.gen_cap = s.get<int>("gen_cap", p.gen_cap);
        p.node_cap = s.get<std::size_t>("node_cap", p.node_cap);
        s.done();
        require(p.n_max >= 0, "palm.n_max: must be nonnegative");
        detail::require_positive(p.r, "palm.r");
        require(p.schedule.size() >= 2, "palm.schedule: needs at least 2 depths");
        for (std::size_t i = 0; i < p.schedule.size(); ++i)
            require(p.schedule[i] >= 0 && (i == 0 || p.schedule[i] > p.schedule[i - 1]),
                    "palm.schedule: must be nonnegative and increasing");
        require(p.spine_depth >= 0, "palm.spine_depth: must be nonnegative");
        require(p.gen_cap >= 0, "palm.gen_cap: must be nonnegative");
        require(p.node_cap >= 1, "palm.node_cap: must be positive");
    }
    if (top.has("truncation")) {
        auto s = top.sub("truncation");
        auto& t = cfg.truncation;
        t.n = s.get<std::vector<int>>("n", t.n);
        t.r = s.get<std::vector<double>>("r", t.r);
        t.k = s.get<std::vector<std::size_t>>("k", t.k);
        s.done();
        require(!t.n.empty(), "truncation.n: must not be empty");
        for (int n : t.n)
            require(n >= 0, "truncation.n: entries must be nonnegative");
        detail::require_positive(t.r, "truncation.r");
        require(!t.k.empty(), "truncation.k: must not be empty");
        for (auto k : t.k)
            require(k >= 1, "truncation.k: entries must be positive");
    }
    if (top.has("criteria")) {
        auto s = top.sub("criteria");
        auto& b = cfg.criteria;
        b.cf_eps = s.get<double>("cf_eps", b.cf_eps);
        b.cf_quadrature = s.get<std::size_t>("cf_quadrature", b.cf_quadrature);
        b.r = s.get<double>("r", b.r);
        b.recurrence_horizons = s.get<std::vector<int>>("recurrence_horizons", b.recurrence_horizons);
        b.recurrence_replicates = s.get<std::size_t>("recurrence_replicates", b.recurrence_replicates);
        b.convolution_horizons = s.get<std::vector<int>>("convolution_horizons", b.convolution_horizons);
        b.convolution_replicates = s.get<std::size_t>("convolution_replicates", b.convolution_replicates);
        b.effective_dim_samples = s.get<std::size_t>("effective_dim_samples", b.effective_dim_samples);
        s.done();
        require(b.cf_eps > 0, "criteria.cf_eps: must be positive");
        require(b.cf_quadrature >= 2, "criteria.cf_quadrature: must be at least 2");
        require(b.r > 0, "criteria.r: must be positive");
        detail::require_horizons(b.recurrence_horizons, "criteria.recurrence_horizons");
        detail::require_horizons(b.convolution_horizons, "criteria.convolution_horizons");
        require(b.recurrence_replicates >= 2, "criteria.recurrence_replicates: must be at least 2");
        require(b.convolution_replicates >= 2, "criteria.convolution_replicates: must be at least 2");
        require(b.effective_dim_samples >= 2, "criteria.effective_dim_samples: must be at least 2");
    }
    if (top.has("simulation")) {
        auto s = top.sub("simulation");
        auto& m = cfg.simulation;
        m.enabled = s.get<bool>("enabled", m.enabled);
        m.r = s.get<double>("r", m.r);
        m.n_max = s.get<int>("n_max", m.n_max);
        m.replicates = s.get<std::size_t>("replicates", m.replicates);
        m.expected_immigrants = s.get<double>("expected_immigrants", m.expected_immigrants);
        m.padding_quantile = s.get<double>("padding_quantile", m.padding_quantile);
        m.min_kappa = s.get<double>("min_kappa", m.min_kappa);
        s.done();
        require(m.r > 0, "simulation.r: must be positive");
        require(m.n_max >= 6, "simulation.n_max: must be at least 6");
        require(m.replicates >= 2, "simulation.replicates: must be at least 2");
        require(m.expected_immigrants > 0, "simulation.expected_immigrants: must be positive");
        require(m.padding_quantile > 0 && m.padding_quantile < 1, "simulation.padding_quantile: must lie in (0, 1)");
        require(m.min_kappa >= 0, "simulation.min_kappa: must be nonnegative");
    }
    if (top.has("figures")) {
        auto s = top.sub("figures");
        auto& f = cfg.figures;
        f.cascade_steps = s.get<std::vector<int>>("cascade_steps", f.cascade_steps);
        f.palm_fb_steps = s.get<int>("palm_fb_steps", f.palm_fb_steps);
        f.palm_direct_spine_depth = s.get<int>("palm_direct_spine_depth", f.palm_direct_spine_depth);
        f.gen_cap = s.get<int>("gen_cap", f.gen_cap);
        f.node_cap = s.get<std::size_t>("node_cap", f.node_cap);
        s.done();
        for (std::size_t i = 0; i < f.cascade_steps.size(); ++i)
            require(f.cascade_steps[i] >= 0 && (i == 0 || f.cascade_steps[i] > f.cascade_steps[i - 1]),
                    "figures.cascade_steps: must be nonnegative and increasing");
        require(f.palm_fb_steps >= 0, "figures.palm_fb_steps: must be nonnegative");
        require(f.palm_direct_spine_depth >= 0, "figures.palm_direct_spine_depth: must be nonnegative");
        require(f.gen_cap >= 0, "figures.gen_cap: must be nonnegative");
        require(f.node_cap >= 1, "figures.node_cap: must be positive");
    }
    if (top.has("output")) {
        auto s = top.sub("output");
        cfg.output_dir = s.get<std::string>("dir", cfg.output_dir);
        cfg.output_prefix = s.get<std::string>("prefix", cfg.output_prefix);
        s.done();
        require(!cfg.output_dir.empty(), "output.dir: must not be empty");
        require(cfg.output_prefix.find('/') == std::string::npos, "output.prefix: must not contain '/'");
    }
    if (cfg.output_prefix.empty())
        cfg.output_prefix = to_string(cfg.kind);
    top.done();

    // Cross-section checks.
    if (cfg.kind == ExperimentKind::Cascade) {
        require(cfg.cascade.window.has_value(), "cascade.window: missing required key");
        require(dim_of(*cfg.cascade.window) == cfg.model->dim(), "cascade.window: dimension differs from the model");
        for (double r : cfg.cascade.r) {
            const CascadeConfig probe{cfg.cascade.c, *cfg.cascade.window, 0.0, *cfg.model, cfg.cascade.n_max};
            try {
                (void)kappa_ball(probe, r);
            } catch (const Error& e) {
                throw ConfigError("cascade.r: " + std::string(e.what()));
            }
        }
    }
    if (cfg.kind == ExperimentKind::PalmFb || cfg.kind == ExperimentKind::PalmDirect ||
        cfg.kind == ExperimentKind::Truncation)
        require(cfg.model->palm_samplable(), "model: Palm sampling needs a diffuse cluster model");
    if (cfg.kind == ExperimentKind::PalmDirect)
        require(!cfg.model->var_zero(), "model: outgrown trees need a random offspring count");

    Json canon = doc;
    canon.erase("threads");
    cfg.hash = fnv1a_hex(canon.dump());
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError(path + ": cannot open");
    std::stringstream buf;
    buf << in.rdbuf();
    Json doc;
    try {
        doc = Json::parse(buf.str());
    } catch (const Json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return parse_config(doc);
}

/// CASCADELAB_THREADS, then the config, then the hardware default.
inline std::size_t resolve_threads(const ExperimentConfig& cfg)
{
    if (const char* env = std::getenv("CASCADELAB_THREADS"); env && *env) {
        char* end = nullptr;
        const long long v = std::strtoll(env, &end, 10);
        if (*end != '\0' || v < 1)
            throw ConfigError("CASCADELAB_THREADS: expected a positive integer");
        return static_cast<std::size_t>(v);
    }
    return cfg.threads.value_or(default_threads());
}

// ---------------------------------------------------------------------------
// Outputs

struct OutputFile
{
    std::string name;   // relative to the output directory
    std::string content;
};

struct Artifacts
{
    Json summary;
    std::vector<OutputFile> files;
};

/// Writes every file to a temporary name first and renames them only once
/// all writes succeeded.
inline std::vector<std::string> write_atomically(const std::string& dir, const std::vector<OutputFile>& files)
{
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<std::pair<fs::path, fs::path>> staged;
    auto cleanup = [&] {
        std::error_code ec;
        for (const auto& [tmp, dst] : staged)
            fs::remove(tmp, ec);
    };
    try {
        for (const auto& f : files) {
            const fs::path dst = fs::path(dir) / f.name;
            const fs::path tmp = fs::path(dir) / (f.name + ".tmp");
            staged.emplace_back(tmp, dst);
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            out << f.content;
            out.close();
            if (!out)
                throw Error("cannot write " + tmp.string());
        }
        std::vector<std::string> written;
        for (const auto& [tmp, dst] : staged) {
            fs::rename(tmp, dst);
            written.push_back(dst.string());
        }
        return written;
    } catch (...) {
        cleanup();
        throw;
    }
}

namespace detail {

// Stream ids of the independent random inputs of an experiment.
inline constexpr std::uint64_t kPaddingStream = 0x70616401;
inline constexpr std::uint64_t kCascadeStream = 0x63617301;
inline constexpr std::uint64_t kPalmStream = 0x70616c01;
inline constexpr std::uint64_t kDirectStream = 0x64697201;
inline constexpr std::uint64_t kSpineStream = 0x73706e01;
inline constexpr std::uint64_t kDisplacementStream = 0x64737001;
inline constexpr std::uint64_t kFinitenessStream = 0x66696e01;
inline constexpr std::uint64_t kTruncationStream = 0x74726e01;
inline constexpr std::uint64_t kFigureStream = 0x66696701;

/// Long-format table: one estimate per row.
class LongTable
{
  public:
    LongTable(const ExperimentConfig& cfg) : cfg_(cfg), csv_(os_)
    {
        csv_.row({"config_hash", "seed", "experiment", "quantity", "label", "n", "r", "k", "mean", "ci_half_width",
                  "n_replicates", "reference"});
    }

    struct Key
    {
        std::string quantity;
        std::string label;
        std::optional<int> n;
        std::optional<double> r;
        std::optional<std::size_t> k;
    };

    void add(const Key& key, double mean, double ci, std::size_t reps, std::optional<double> reference = {})
    {
        csv_.field(cfg_.hash).field(std::to_string(cfg_.seed)).field(to_string(cfg_.kind));
        csv_.field(key.quantity).field(key.label);
        opt(key.n);
        opt(key.r);
        opt(key.k);
        csv_.field(mean).field(ci).field(reps);
        opt(reference);
        csv_.end_row();
    }

    void add(const Key& key, const EstimatorResult& e, std::optional<double> reference = {})
    {
        add(key, e.mean, e.ci_half_width, e.n_replicates, reference);
    }

    std::string str() const { return os_.str(); }

  private:
    template <class T>
    void opt(const std::optional<T>& v)
    {
        if (v)
            csv_.field(*v);
        else
            csv_.field("");
    }

    const ExperimentConfig& cfg_;
    std::ostringstream os_;
    CsvWriter csv_;
};

inline Json header(const ExperimentConfig& cfg)
{
    Json j;
    j["experiment"] = to_string(cfg.kind);
    j["config_hash"] = cfg.hash;
    j["seed"] = cfg.seed;
    if (cfg.model)
        j["model"] = cfg.model->describe();
    j["replicates"] = cfg.replicates;
    j["confidence"] = cfg.confidence;
    return j;
}

inline Json to_json(const TrendReport& t)
{
    return {{"trend", to_string(t.trend)}, {"log_log_slope", t.slope}, {"extrapolated_limit", t.limit},
            {"limit_band", {t.limit_lower, t.limit_upper}}};
}

inline double cascade_padding(const CascadeSection& c, const ClusterModel& model, std::uint64_t seed,
                              std::size_t threads)
{
    if (c.padding)
        return *c.padding;
    return auto_padding(model, c.n_max, RngStream(seed, kPaddingStream), c.padding_quantile, c.padding_pilot,
                        threads);
}

inline std::string to_string_point(const Point& p)
{
    std::string s = "(";
    for (std::size_t i = 0; i < p.dim(); ++i)
        s += (i ? "," : "") + format_double(p[i]);
    return s + ")";
}

} // namespace detail

// ---------------------------------------------------------------------------
// Experiments

inline Artifacts run_cascade_experiment(const ExperimentConfig& cfg, std::size_t threads)
{
    const auto& cs = cfg.cascade;
    const ClusterModel& model = *cfg.model;
    const double pad = detail::cascade_padding(cs, model, cfg.seed, threads);
    const CascadeConfig cc{cs.c, *cs.window, pad, model, cs.n_max};
    CascadeProbes probes;
    for (double r : cs.r)
        probes.kappa_balls.push_back(kappa_ball(cc, r));
    probes.count_regions.push_back(cs.window.value());

    const auto rows = run_replicates(cfg.replicates, RngStream(cfg.seed, detail::kCascadeStream), threads,
                                     [&](std::size_t, RngStream& s) { return trace_cascade(cc, probes, s, cs.n_from); });

    detail::LongTable table(cfg);
    Json summary = detail::header(cfg);
    const double win_vol = volume(*cs.window);
    summary["padding"] = pad;
    summary["padding_source"] = cs.padding ? "config" : "pilot_quantile";
    summary["expected_immigrants"] = cs.c * volume(cc.simulation_region()) / (cs.n_from + 1.0);
    summary["window_volume"] = win_vol;

    Json steps = Json::array();
    std::vector<int> ns;
    std::vector<std::vector<std::vector<double>>> kappa_samples(cs.r.size());
    for (int n = cs.n_from; n <= cs.n_max; ++n) {
        const auto i = static_cast<std::size_t>(n - cs.n_from);
        ns.push_back(n);
        Json step = {{"n", n}};
        Json kap = Json::array();
        for (std::size_t b = 0; b < cs.r.size(); ++b) {
            std::vector<double> v;
            std::vector<long long> iv;
            for (const auto& row : rows) {
                v.push_back(static_cast<double>(row.kappa[i][b]));
                iv.push_back(row.kappa[i][b]);
            }
            const auto e = summarize(v, cfg.confidence, cfg.seed);
            const double ref = cs.c * volume(Region(probes.kappa_balls[b])) / (n + 1.0);
            table.add({"kappa", "", n, cs.r[b], {}}, e, ref);
            Json kj = {{"r", cs.r[b]}, {"estimate", to_json(e)}, {"no_displacement_value", ref}};
            if (iv.size() >= 30) {
                const auto disp = dispersion_test(iv, cs.dispersion_alpha);
                table.add({"kappa_dispersion_index", "", n, cs.r[b], {}}, disp.index_of_dispersion, 0.0,
                          iv.size(), 1.0);
                kj["dispersion_index"] = disp.index_of_dispersion;
                kj["consistent_with_poisson"] = disp.consistent_with_poisson;
            }
            kap.push_back(kj);
            kappa_samples[b].push_back(std::move(v));
        }
        step["kappa"] = kap;

        std::vector<double> xi, act;
        for (const auto& row : rows) {
            xi.push_back(static_cast<double>(row.xi[i][0]));
            act.push_back(static_cast<double>(row.active[i][0]));
        }
        const auto exi = summarize(xi, cfg.confidence, cfg.seed);
        const auto eact = summarize(act, cfg.confidence, cfg.seed);
        table.add({"xi_count", "window", n, {}, {}}, exi, cs.c * win_vol);
        table.add({"active_immigrants", "window", n, {}, {}}, eact, cs.c * win_vol / (n + 1.0));
        step["xi_count"] = {{"estimate", to_json(exi)}, {"reference", cs.c * win_vol}};
        step["active_immigrants"] = {{"estimate", to_json(eact)}, {"reference", cs.c * win_vol / (n + 1.0)}};
        steps.push_back(step);
    }
    summary["steps"] = steps;

    Json trends = Json::array();
    for (std::size_t b = 0; b < cs.r.size(); ++b) {
        if (ns.size() >= 4) {
            const auto t = classify_kappa_trend(ns, kappa_samples[b], {.seed = cfg.seed});
            Json tj = detail::to_json(t);
            tj["r"] = cs.r[b];
            trends.push_back(tj);
        } else {
            trends.push_back({{"r", cs.r[b]}, {"trend", "n/a"}});
        }
    }
    summary["kappa_trend"] = trends;
    return {summary, {{"", table.str()}}};
}

inline Artifacts run_palm_fb_experiment(const ExperimentConfig& cfg, std::size_t threads)
{
    const auto& ps = cfg.palm;
    const ClusterModel& model = *cfg.model;
    detail::LongTable table(cfg);
    Json summary = detail::header(cfg);
    Json steps = Json::array();
    const RngStream base(cfg.seed, detail::kPalmStream);
    for (int n = 0; n <= ps.n_max; ++n) {
        struct Sample
        {
            double total = 0;
            int l = 0;
            std::vector<double> ball;
        };
        const auto rows = run_replicates(cfg.replicates, base.substream(static_cast<std::uint64_t>(n)), threads,
                                         [&](std::size_t, RngStream& s) {
                                             const auto t = simulate_palm_fb(model, n, s);
                                             Sample out{static_cast<double>(t.size()), t.l(), {}};
                                             for (double r : ps.r)
                                                 out.ball.push_back(static_cast<double>(t.count_in_ball(r)));
                                             return out;
                                         });
        std::vector<double> total, ls;
        std::vector<double> hist(static_cast<std::size_t>(n) + 1, 0.0);
        for (const auto& s : rows) {
            total.push_back(s.total);
            ls.push_back(s.l);
            hist[static_cast<std::size_t>(s.l)] += 1;
        }
        const auto et = summarize(total, cfg.confidence, cfg.seed);
        const auto el = summarize(ls, cfg.confidence, cfg.seed);
        table.add({"total_count", "", n, {}, {}}, et);
        table.add({"spine_length", "", n, {}, {}}, el, n / 2.0);
        Json step = {{"n", n}, {"total_count", to_json(et)}, {"spine_length", to_json(el)}};
        if (n > 0) {
            const auto chi = chi_square_gof(hist, std::vector<double>(hist.size(), 1.0 / (n + 1.0)));
            step["spine_length_uniformity_p_value"] = chi.p_value;
        }
        Json balls = Json::array();
        for (std::size_t j = 0; j < ps.r.size(); ++j) {
            std::vector<double> v;
            for (const auto& s : rows)
                v.push_back(s.ball[j]);
            const auto e = summarize(v, cfg.confidence, cfg.seed);
            table.add({"ball_count", "", n, ps.r[j], {}}, e);
            balls.push_back({{"r", ps.r[j]}, {"estimate", to_json(e)}});
        }
        step["ball_count"] = balls;
        steps.push_back(step);
    }
    summary["steps"] = steps;
    return {summary, {{"", table.str()}}};
}

inline Artifacts run_palm_direct_experiment(const ExperimentConfig& cfg, std::size_t threads)
{
    const auto& ps = cfg.palm;
    const ClusterModel& model = *cfg.model;
    detail::LongTable table(cfg);
    Json summary = detail::header(cfg);

    // Direct construction at finite depth against the forward/backward chain.
    Json matched = Json::array();
    const RngStream fb_base(cfg.seed, detail::kPalmStream), dir_base(cfg.seed, detail::kDirectStream);
    for (int n = 0; n <= ps.n_max; ++n) {
        auto sample = [&](bool direct) {
            const auto& base = direct ? dir_base : fb_base;
            return run_replicates(cfg.replicates, base.substream(static_cast<std::uint64_t>(n)), threads,
                                  [&](std::size_t, RngStream& s) {
                                      std::vector<long long> out;
                                      if (direct) {
                                          const auto t = simulate_palm_direct_finite(model, n, s);
                                          out.push_back(static_cast<long long>(t.nodes.size()));
                                          for (double r : ps.r)
                                              out.push_back(static_cast<long long>(t.count_in_ball(r)));
                                      } else {
                                          const auto t = simulate_palm_fb(model, n, s);
                                          out.push_back(static_cast<long long>(t.size()));
                                          for (double r : ps.r)
                                              out.push_back(static_cast<long long>(t.count_in_ball(r)));
                                      }
                                      return out;
                                  });
        };
        const auto a = sample(true), b = sample(false);
        Json row = {{"n", n}};
        Json cols = Json::array();
        for (std::size_t j = 0; j <= ps.r.size(); ++j) {
            std::vector<long long> ca, cb;
            std::vector<double> da, db;
            for (const auto& v : a) {
                ca.push_back(v[j]);
                da.push_back(static_cast<double>(v[j]));
            }
            for (const auto& v : b) {
                cb.push_back(v[j]);
                db.push_back(static_cast<double>(v[j]));
            }
            const auto ea = summarize(da, cfg.confidence, cfg.seed), eb = summarize(db, cfg.confidence, cfg.seed);
            const auto test = chi_square_two_sample(ca, cb);
            const std::string q = j == 0 ? "total_count" : "ball_count";
            std::optional<double> r = j == 0 ? std::nullopt : std::optional<double>(ps.r[j - 1]);
            table.add({q, "direct", n, r, {}}, ea);
            table.add({q, "forward_backward", n, r, {}}, eb);
            Json c = {{"quantity", q}, {"direct", to_json(ea)}, {"forward_backward", to_json(eb)},
                      {"two_sample_p_value", test.p_value}};
            if (r)
                c["r"] = *r;
            cols.push_back(c);
        }
        row["comparisons"] = cols;
        matched.push_back(row);
    }
    summary["direct_vs_forward_backward"] = matched;

    // Spine increments against negated displacement draws, first coordinate.
    {
        const auto spines =
            run_replicates(cfg.replicates, RngStream(cfg.seed, detail::kSpineStream), threads,
                           [&](std::size_t, RngStream& s) {
                               const ParentSiblings p = sample_parent_siblings(model, s);
                               return p.parent[0];
                           });
        RngStream ds(cfg.seed, detail::kDisplacementStream);
        std::vector<double> neg;
        for (std::size_t i = 0; i < cfg.replicates; ++i)
            neg.push_back(-model.displacement().sample(ds)[0]);
        const auto ks = ks_two_sample(spines, neg);
        summary["spine_step_vs_negated_displacement"] = {{"statistic", ks.statistic}, {"p_value", ks.p_value}};
    }

    // Local finiteness along the spine schedule.
    Json fin = Json::array();
    for (std::size_t j = 0; j < ps.r.size(); ++j) {
        FinitenessOptions opt;
        opt.gen_cap = ps.gen_cap;
        opt.node_cap = ps.node_cap;
        opt.threads = threads;
        const auto rep = local_finiteness_diagnostic(model, ps.r[j], ps.schedule, cfg.replicates,
                                                     RngStream(cfg.seed, detail::kFinitenessStream).substream(j),
                                                     opt);
        for (const auto& p : rep.curve)
            table.add({"direct_ball_count", "outgrown", p.spine_depth, ps.r[j], {}}, p.mean, 0.0, rep.replicates);
        Json curve = Json::array();
        for (const auto& p : rep.curve)
            curve.push_back({{"spine_depth", p.spine_depth}, {"mean", p.mean}, {"q10", p.q10}, {"q50", p.q50},
                             {"q90", p.q90}});
        fin.push_back({{"r", ps.r[j]},
                       {"verdict", to_string(rep.verdict)},
                       {"curve", curve},
                       {"relative_increment", rep.relative_increment},
                       {"relative_increment_upper", rep.relative_increment_upper},
                       {"log_log_slope", rep.slope},
                       {"truncation_rate", rep.truncation_rate}});
    }
    summary["local_finiteness"] = fin;
    return {summary, {{"", table.str()}}};
}

inline Artifacts run_truncation_experiment(const ExperimentConfig& cfg, std::size_t threads)
{
    const auto& ts = cfg.truncation;
    const ClusterModel& model = *cfg.model;
    detail::LongTable table(cfg);
    Json summary = detail::header(cfg);
    Json cells = Json::array();
    std::size_t agree = 0, total = 0;
    const RngStream base(cfg.seed, detail::kTruncationStream), palm(cfg.seed, detail::kPalmStream);
    for (std::size_t i = 0; i < ts.n.size(); ++i) {
        const int n = ts.n[i];
        const auto lhs = truncation_ratio_grid(model, n, ts.r, ts.k, cfg.replicates, base.substream(i), threads,
                                               cfg.confidence);
        const auto rhs = palm_ball_probability_grid(model, n, ts.r, ts.k, cfg.replicates, palm.substream(i),
                                                    threads, cfg.confidence);
        for (std::size_t a = 0; a < ts.r.size(); ++a)
            for (std::size_t b = 0; b < ts.k.size(); ++b) {
                const std::size_t j = a * ts.k.size() + b;
                const double diff = lhs[j].mean - rhs[j].mean;
                const double width = 2.0 * std::hypot(lhs[j].ci_half_width, rhs[j].ci_half_width);
                const bool ok = std::abs(diff) < width;
                agree += ok ? 1 : 0;
                ++total;
                table.add({"truncation_ratio", "", n, ts.r[a], ts.k[b]}, lhs[j]);
                table.add({"palm_ball_probability", "", n, ts.r[a], ts.k[b]}, rhs[j]);
                cells.push_back({{"n", n},
                                 {"r", ts.r[a]},
                                 {"k", ts.k[b]},
                                 {"truncation_ratio", to_json(lhs[j])},
                                 {"palm_ball_probability", to_json(rhs[j])},
                                 {"difference", diff},
                                 {"combined_ci_width", width},
                                 {"agree", ok}});
            }
    }
    summary["cells"] = cells;
    summary["agreeing_cells"] = agree;
    summary["total_cells"] = total;
    return {summary, {{"", table.str()}}};
}

inline Artifacts run_criteria_experiment(const ExperimentConfig& cfg, std::size_t threads)
{
    const ClusterModel& model = *cfg.model;
    PersistenceBudget budget = cfg.criteria;
    budget.seed = cfg.seed;
    budget.threads = threads;
    const auto v = classify_persistence(model, budget);

    detail::LongTable table(cfg);
    for (const auto& ev : v.evidence) {
        const std::string rule = ev.value("rule", std::string());
        const Json* occ = nullptr;
        if (rule == "occupation_convolution")
            occ = &ev;
        else if (ev.contains("numeric_occupation"))
            occ = &ev["numeric_occupation"];
        if (occ)
            for (const auto& p : (*occ)["partial_sums"])
                table.add({rule == "occupation_convolution" ? "occupation_convolution" : "occupation_measure",
                           "partial_sum", p["horizon"].get<int>(), budget.r, {}},
                          p["estimate"].get<double>(), p["ci"].get<double>(),
                          rule == "occupation_convolution" ? budget.convolution_replicates
                                                           : budget.recurrence_replicates);
        if (rule == "cf_integral")
            for (const auto& p : ev["value_on_shrinking_exclusions"])
                table.add({"cf_integral", "exclusion_radius", {}, p[0].get<double>(), {}}, p[1].get<double>(), 0.0,
                          0);
    }
    Json summary = detail::header(cfg);
    summary["classification"] = to_json(v);
    return {summary, {{"", table.str()}}};
}

// ---------------------------------------------------------------------------
// Regression table

struct RegressionExample
{
    std::string name;
    ClusterModel model;
    std::string reference;   // persists, extinguishes, inconclusive (boundary) or none
};

inline std::vector<RegressionExample> regression_examples()
{
    using laws::gaussian;
    std::vector<RegressionExample> ex;
    ex.push_back({"deterministic_drift", ClusterModel::deterministic(Point{1.0, 0.0}), "persists"});
    ex.push_back({"no_displacement", ClusterModel::no_displacement(CountLaw::poisson(1.0), 2), "extinguishes"});
    ex.push_back({"single_point_gaussian_d1", ClusterModel::single_point(gaussian(1)), "extinguishes"});
    ex.push_back({"single_point_gaussian_d3", ClusterModel::single_point(gaussian(3)), "persists"});
    for (auto [alpha, d] : {std::pair{1.0, 3}, {2.0, 5}, {0.5, 2}, {1.5, 4}})
        ex.push_back({"stable_alpha" + format_double(alpha) + "_d" + std::to_string(d),
                      ClusterModel::poisson(laws::symmetric_stable(static_cast<std::size_t>(d), alpha)),
                      "persists"});
    ex.push_back({"stable_alpha1_d2", ClusterModel::poisson(laws::symmetric_stable(2, 1.0)), "inconclusive"});
    ex.push_back({"hawkes_lomax_alpha0.3", ClusterModel::poisson(laws::lomax(0.3)), "persists"});
    ex.push_back({"hawkes_lomax_alpha0.7", ClusterModel::poisson(laws::lomax(0.7)), "none"});
    ex.push_back({"gaussian_d1", ClusterModel::poisson(gaussian(1)), "extinguishes"});
    ex.push_back({"gaussian_d2", ClusterModel::poisson(gaussian(2)), "extinguishes"});
    ex.push_back({"gaussian_d5", ClusterModel::poisson(gaussian(5)), "persists"});
    ex.push_back({"gaussian_rank5_d6", ClusterModel::poisson(laws::gaussian_diag({1, 1, 1, 1, 1, 0})), "persists"});
    return ex;
}

struct SimulationTrend
{
    std::string trend = "n/a";
    std::optional<TrendReport> report;
    double c = 0;
    double padding = 0;
};

/// Short cascade run in a ball around the origin, with c chosen so that the
/// padded window holds the configured expected number of immigrants. Heavy
/// tails need a wide padding, which can leave too few immigrants near the
/// ball; those rows report insufficient_signal.
inline SimulationTrend simulation_trend(const ClusterModel& model, const SimulationSection& sim,
                                        std::uint64_t seed, std::size_t index, std::size_t threads)
{
    SimulationTrend out;
    const std::size_t d = model.dim();
    const RngStream base = RngStream(seed, detail::kCascadeStream).substream(index);
    out.padding = auto_padding(model, sim.n_max, base.substream(0), sim.padding_quantile, 1000, threads);
    if (!std::isfinite(out.padding))
        return out;
    const int n_from = sim.n_max / 2;
    const Region window = Ball::at_origin(d, sim.r);
    const double vol = volume(dilate(window, out.padding));
    out.c = sim.expected_immigrants * (n_from + 1.0) / vol;
    if (out.c * volume(window) < sim.min_kappa) {
        out.trend = "insufficient_signal";
        return out;
    }
    const CascadeConfig cc{out.c, window, out.padding, model, sim.n_max};
    const CascadeProbes probes{{kappa_ball(cc, sim.r)}, {}};
    const auto rows = run_replicates(sim.replicates, base.substream(1), threads,
                                     [&](std::size_t, RngStream& s) { return trace_cascade(cc, probes, s, n_from); });
    std::vector<int> ns;
    std::vector<std::vector<double>> samples;
    for (int n = n_from; n <= sim.n_max; ++n) {
        ns.push_back(n);
        std::vector<double> v;
        for (const auto& row : rows)
            v.push_back(static_cast<double>(row.kappa[static_cast<std::size_t>(n - n_from)][0]));
        samples.push_back(std::move(v));
    }
    out.report = classify_kappa_trend(ns, samples, {.seed = seed});
    out.trend = to_string(out.report->trend);
    return out;
}

inline Artifacts run_regression_table(const ExperimentConfig& cfg, std::size_t threads)
{
    PersistenceBudget budget = cfg.criteria;
    budget.seed = cfg.seed;
    budget.threads = threads;

    std::ostringstream os;
    CsvWriter csv(os);
    csv.row({"config_hash", "seed", "example", "family", "model", "reference_verdict", "classifier_verdict",
             "rule_fired", "simulation_trend", "match"});
    Json rows = Json::array();
    std::size_t mismatches = 0, checked = 0;
    const auto examples = regression_examples();
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& ex = examples[i];
        const auto v = classify_persistence(ex.model, budget);
        const std::string got = to_string(v.verdict);
        const bool has_reference = ex.reference != "none";
        const bool match = !has_reference || got == ex.reference;
        if (has_reference) {
            ++checked;
            mismatches += match ? 0 : 1;
        }
        SimulationTrend trend;
        if (cfg.simulation.enabled)
            trend = simulation_trend(ex.model, cfg.simulation, cfg.seed, i, threads);
        csv.field(cfg.hash).field(std::to_string(cfg.seed)).field(ex.name).field(to_string(ex.model.family()));
        csv.field(ex.model.describe()).field(ex.reference).field(got).field(v.rule_fired).field(trend.trend);
        if (has_reference)
            csv.field(match);
        else
            csv.field("");
        csv.end_row();
        Json row = {{"example", ex.name},
                    {"family", to_string(ex.model.family())},
                    {"model", ex.model.describe()},
                    {"reference_verdict", ex.reference},
                    {"classification", to_json(v)},
                    {"match", has_reference ? Json(match) : Json(nullptr)},
                    {"simulation_trend", trend.trend}};
        if (trend.report)
            row["simulation"] = detail::to_json(*trend.report);
        if (cfg.simulation.enabled) {
            row["simulation"]["c"] = trend.c;
            row["simulation"]["padding"] = trend.padding;
        }
        rows.push_back(row);
    }
    Json summary = detail::header(cfg);
    summary["rows"] = rows;
    summary["checked_rows"] = checked;
    summary["mismatches"] = mismatches;
    return {summary, {{"", os.str()}}};
}

// ---------------------------------------------------------------------------
// Entry points

/// Runs the configured experiment and returns the summary plus a CSV table
/// named <prefix>.csv; the summary itself goes to <prefix>.json.
inline Artifacts run_experiment(const ExperimentConfig& cfg, std::size_t threads)
{
    Artifacts a;
    switch (cfg.kind) {
    case ExperimentKind::Cascade: {
        a = run_cascade_experiment(cfg, threads);
        break;
    }
    case ExperimentKind::PalmFb: a = run_palm_fb_experiment(cfg, threads); break;
    case ExperimentKind::PalmDirect: a = run_palm_direct_experiment(cfg, threads); break;
    case ExperimentKind::Truncation: a = run_truncation_experiment(cfg, threads); break;
    case ExperimentKind::Criteria: a = run_criteria_experiment(cfg, threads); break;
    case ExperimentKind::RegressionTable: a = run_regression_table(cfg, threads); break;
    }
    for (auto& f : a.files)
        if (f.name.empty())
            f.name = cfg.output_prefix + ".csv";
    a.files.push_back({cfg.output_prefix + ".json", a.summary.dump(2) + "\n"});
    return a;
}

/// Node tables for plotting: cascade snapshots, the forward/backward chain
/// step by step and one direct Palm tree.
inline Artifacts emit_figure_data(const ExperimentConfig& cfg, std::size_t threads)
{
    const ClusterModel& model = *cfg.model;
    const auto& f = cfg.figures;
    Artifacts a;
    a.summary = detail::header(cfg);
    Json files = Json::array();
    const std::string pre = cfg.output_prefix;
    const std::vector<std::string> stamp_header{"config_hash", "seed"};
    const std::vector<std::string> stamp{cfg.hash, std::to_string(cfg.seed)};

    if (cfg.cascade.window && !f.cascade_steps.empty()) {
        const int last = f.cascade_steps.back();
        CascadeSection cs = cfg.cascade;
        cs.n_max = std::max(cs.n_max, last);
        const double pad = detail::cascade_padding(cs, model, cfg.seed, threads);
        auto cc = std::make_shared<const CascadeConfig>(CascadeConfig{cs.c, *cs.window, pad, model, cs.n_max});
        RngStream rng(cfg.seed, detail::kFigureStream);
        CascadeState s = init_cascade(cc, rng);
        std::size_t next = 0;
        for (int n = 0; n <= last; ++n) {
            if (n > 0)
                s = advance(std::move(s), rng);
            if (f.cascade_steps[next] != n)
                continue;
            std::ostringstream os;
            write_cascade_snapshot(os, s, 0, true, stamp_header, stamp);
            const std::string name = pre + "_cascade_n" + std::to_string(n) + ".csv";
            a.files.push_back({name, os.str()});
            files.push_back({{"file", name}, {"kind", "cascade_snapshot"}, {"n", n}});
            ++next;
        }
    }

    if (model.palm_samplable()) {
        RngStream rng(cfg.seed, detail::kFigureStream + 1);
        PalmTreeState s(model.dim());
        std::ostringstream os;
        std::vector<std::string> h = stamp_header;
        h.insert(h.end(), {"step", "move", "L"});
        write_palm_csv(os, s.nodes(), s.l(), true, h, {stamp[0], stamp[1], "0", "start", "0"});
        for (int t = 0; t < f.palm_fb_steps; ++t) {
            const int l = step_L(s.l(), t, rng);
            const bool forward = l == s.l();
            s = forward ? palm_forward_step(std::move(s), model, rng) : palm_backward_step(std::move(s), model, rng);
            write_palm_csv(os, s.nodes(), s.l(), false, {},
                           {stamp[0], stamp[1], std::to_string(t + 1), forward ? "forward" : "backward",
                            std::to_string(s.l())});
        }
        const std::string name = pre + "_palm_fb.csv";
        a.files.push_back({name, os.str()});
        files.push_back({{"file", name}, {"kind", "palm_forward_backward"}, {"steps", f.palm_fb_steps}});
    }

    if (model.palm_samplable() && !model.var_zero()) {
        RngStream rng(cfg.seed, detail::kFigureStream + 2);
        const auto t = simulate_palm_direct(model, f.palm_direct_spine_depth, f.gen_cap, rng, f.node_cap);
        std::ostringstream os;
        std::vector<std::string> h = stamp_header;
        h.emplace_back("spine_depth");
        write_palm_csv(os, t.nodes, t.spine_depth, true, h,
                       {stamp[0], stamp[1], std::to_string(f.palm_direct_spine_depth)});
        const std::string name = pre + "_palm_direct.csv";
        a.files.push_back({name, os.str()});
        files.push_back({{"file", name},
                         {"kind", "palm_direct"},
                         {"spine_depth", f.palm_direct_spine_depth},
                         {"truncated_trees", t.truncated_trees},
                         {"trees", t.trees}});
    }
    a.summary["files"] = files;
    a.files.push_back({pre + "_figures.json", a.summary.dump(2) + "\n"});
    return a;
}

} // namespace cascadelab
