#pragma once

// Experiment configuration and per-seed pipelines shared by the command-line
// runner and the acceptance suite. Configs are JSON documents; every output
// file embeds the resolved config.

#include "pdvi/baselines.hpp"
#include "pdvi/core.hpp"
#include "pdvi/data.hpp"
#include "pdvi/metrics.hpp"
#include "pdvi/objectives/mixture.hpp"
#include "pdvi/objectives/quadratic.hpp"
#include "pdvi/solver.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

namespace pdvi {

using json = nlohmann::ordered_json;

inline constexpr const char* kGeneratorVersion = "pdvi-gen 1";
inline constexpr const char* kTraceHeader = "t,objective,grad_norm_global,consensus_residual,wallclock_ms";

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct DatasetSpec {
    std::string path;                 // empty: generate
    std::optional<std::uint64_t> seed; // generator seed; unset: the run seed
    // quadratic
    Index n = 200;
    Index d_phi = 5;
    Index d_lambda = 5;
    double cond = 1000.0;
    std::vector<Index> block_dims;   // empty: one block
    std::vector<double> block_scales; // non-empty: block-scaled generator
    double cond_within = 10.0;
    // gmm / spatial
    Index K = 5;
    Index d = 10;
    double sigma0_sq = 1.0;
    double sigma1_sq = 4.0;
    Index n_side = 30;
    double sep = 20.0;
    Index knn = 6;
    double tau = 0.5;
    Index patches = 9;
    // optional preprocessing of loaded tables
    bool preprocess = false;
    PreprocessSpec prep;
};

struct SolverSpec {
    long iters = 1000;
    Index batch_size = 20;
    std::string batching = "uniform"; // uniform | biased | patches
    double bias = 0.9;
    Index num_batches = 3;            // patches batching
    std::vector<double> eta{5e-3};
    std::string eta_rule = "uniform"; // uniform | inv-lipschitz
    double c = 0.5;
    std::string inner_method = "closed_form";
    double inner_tol = 1e-8;
    int max_inner_iters = 200;
    std::string line_search = "backtracking";
    double stop_grad_tol = 0.0;
    long trace_every = 10;
};

struct BaselineSpec {
    std::vector<double> step{0.01};
    double diminish_b = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double decay = 0.9;
};

struct ExperimentConfig {
    std::string objective = "quadratic"; // quadratic | gmm | spatial
    std::string optimizer = "pdvi";      // pdvi | p2dvi | sgd | svi_constant | svi_diminishing | adam | rmsprop
    std::string preset = "quad-desk";
    DatasetSpec dataset;
    SolverSpec solver;
    BaselineSpec baseline;
    std::vector<std::uint64_t> seeds{0};
    std::string output_dir = "out";

    void validate() const
    {
        static const std::set<std::string> objs{"quadratic", "gmm", "spatial"};
        static const std::set<std::string> opts{"pdvi", "p2dvi", "sgd", "svi_constant", "svi_diminishing", "adam", "rmsprop"};
        if (!objs.count(objective)) throw ConfigError("objective: unknown value '" + objective + "'");
        if (!opts.count(optimizer)) throw ConfigError("optimizer: unknown value '" + optimizer + "'");
        if (seeds.empty()) throw ConfigError("seeds: must be non-empty");
        if (solver.iters < 0) throw ConfigError("solver.iters: must be >= 0");
        if (solver.trace_every < 1) throw ConfigError("solver.trace_every: must be >= 1");
        if (solver.eta_rule != "uniform" && solver.eta_rule != "inv-lipschitz") {
            throw ConfigError("solver.eta_rule: expected 'uniform' or 'inv-lipschitz'");
        }
        if (solver.batching != "uniform" && solver.batching != "biased" && solver.batching != "patches") {
            throw ConfigError("solver.batching: expected 'uniform', 'biased' or 'patches'");
        }
        if (solver.batching == "patches" && objective != "spatial") {
            throw ConfigError("solver.batching: 'patches' needs the spatial objective");
        }
        for (double e : solver.eta) {
            if (!(e > 0.0)) throw ConfigError("solver.eta: step sizes must be > 0");
        }
        if (!dataset.path.empty() && !std::filesystem::exists(dataset.path)) {
            throw ConfigError("dataset.path: '" + dataset.path + "' does not exist");
        }
        inner_method_from_string(solver.inner_method);
    }

    bool is_primal_dual() const { return optimizer == "pdvi" || optimizer == "p2dvi"; }
};

/// Defaults for a named preset: quad-desk, quad-full, gmm-desk, gmm-full,
/// spatial-desk, spatial-full.
inline ExperimentConfig preset_config(const std::string& name)
{
    ExperimentConfig c;
    c.preset = name;
    const bool full = name.size() > 5 && name.substr(name.size() - 5) == "-full";
    if (name == "quad-desk" || name == "quad-full") {
        const QuadPreset p = quad_preset(full);
        c.objective = "quadratic";
        c.dataset.n = p.n;
        c.dataset.d_phi = p.d_phi;
        c.dataset.d_lambda = p.d_lambda;
        c.dataset.cond = p.cond;
        c.solver.batch_size = p.batch_size;
        c.solver.iters = 1000;
        c.solver.eta = {5e-3};
        c.solver.inner_method = "closed_form";
        c.solver.inner_tol = 1e-8;
        c.solver.trace_every = 1;
        c.baseline.step = {2.5e-4};
    } else if (name == "gmm-desk" || name == "gmm-full") {
        const GmmPreset p = gmm_preset(full);
        c.objective = "gmm";
        c.dataset.n = p.n;
        c.dataset.K = p.K;
        c.dataset.d = p.d;
        c.dataset.sigma0_sq = p.sigma0_sq;
        c.dataset.sigma1_sq = p.sigma1_sq;
        c.solver.batch_size = p.batch_size;
        c.solver.batching = "biased";
        c.solver.bias = p.bias;
        c.solver.iters = 2000;
        c.solver.eta_rule = "inv-lipschitz";
        // Larger c lets boundary points swap clusters between visits and the
        // duals chase them round a cycle; 0.02 is the largest that settled.
        c.solver.c = 0.02;
        c.solver.inner_method = "block_coordinate_descent";
        c.solver.inner_tol = 1e-6;
        c.solver.trace_every = 50;
        // best svi_constant step on seed 0 over {0.01, 0.03, 0.1, 0.3, 1}
        c.baseline.step = {0.01};
    } else if (name == "spatial-desk" || name == "spatial-full") {
        const SpatialPreset p = spatial_preset(full);
        c.objective = "spatial";
        c.dataset.n_side = p.n_side;
        c.dataset.K = p.K;
        c.dataset.d = p.d;
        c.dataset.sep = p.sep;
        c.dataset.knn = p.knn;
        c.dataset.tau = p.tau;
        c.dataset.patches = p.patches;
        c.solver.batching = "patches";
        c.solver.num_batches = p.batches;
        c.solver.iters = 60;
        c.solver.eta_rule = "inv-lipschitz";
        c.solver.c = 0.5;
        c.solver.inner_method = "block_coordinate_descent";
        c.solver.inner_tol = 1e-6;
        c.solver.trace_every = 1;
        c.baseline.step = {0.1};
    } else {
        throw ConfigError("unknown preset '" + name + "'");
    }
    return c;
}

inline json to_json(const ExperimentConfig& c)
{
    const auto& d = c.dataset;
    const auto& s = c.solver;
    const auto& b = c.baseline;
    json ds = {{"path", d.path},
               {"seed", d.seed ? json(*d.seed) : json(nullptr)},
               {"n", d.n},
               {"d_phi", d.d_phi},
               {"d_lambda", d.d_lambda},
               {"cond", d.cond},
               {"block_dims", d.block_dims},
               {"block_scales", d.block_scales},
               {"cond_within", d.cond_within},
               {"K", d.K},
               {"d", d.d},
               {"sigma0_sq", d.sigma0_sq},
               {"sigma1_sq", d.sigma1_sq},
               {"n_side", d.n_side},
               {"sep", d.sep},
               {"knn", d.knn},
               {"tau", d.tau},
               {"patches", d.patches},
               {"preprocess", d.preprocess},
               {"top_features", d.prep.top_features},
               {"normalize_depth", d.prep.normalize_depth},
               {"log1p", d.prep.log1p},
               {"scale_clip", d.prep.scale_clip}};
    json sv = {{"iters", s.iters},
               {"batch_size", s.batch_size},
               {"batching", s.batching},
               {"bias", s.bias},
               {"num_batches", s.num_batches},
               {"eta", s.eta},
               {"eta_rule", s.eta_rule},
               {"c", s.c},
               {"inner_method", s.inner_method},
               {"inner_tol", s.inner_tol},
               {"max_inner_iters", s.max_inner_iters},
               {"line_search", s.line_search},
               {"stop_grad_tol", s.stop_grad_tol},
               {"trace_every", s.trace_every}};
    json bl = {{"step", b.step},       {"diminish_b", b.diminish_b}, {"beta1", b.beta1},
               {"beta2", b.beta2},     {"eps", b.eps},               {"decay", b.decay}};
    return json{{"objective", c.objective}, {"optimizer", c.optimizer}, {"preset", c.preset}, {"dataset", ds},
                {"solver", sv},         {"baseline", bl},           {"seeds", c.seeds},   {"output_dir", c.output_dir}};
}

namespace detail {

template <class T>
void read_field(const json& obj, const char* key, T& out, const std::string& where)
{
    auto it = obj.find(key);
    if (it == obj.end()) return;
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        // json would silently truncate 2.5 or wrap -1
        if (!it->is_number_integer()) throw ConfigError(where + key + ": expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
            if (it->is_number_unsigned() == false && it->template get<long long>() < 0) {
                throw ConfigError(where + key + ": expected a non-negative integer");
            }
        }
    }
    if constexpr (std::is_same_v<T, std::vector<Index>> || std::is_same_v<T, std::vector<std::uint64_t>>) {
        if (it->is_array()) {
            for (const auto& e : *it) {
                if (!e.is_number_integer() || (std::is_same_v<T, std::vector<std::uint64_t>> && !e.is_number_unsigned())) {
                    throw ConfigError(where + key + ": expected a list of non-negative integers");
                }
            }
        }
    }
    try {
        out = it->template get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + key + ": " + e.what());
    }
}

inline void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& where)
{
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!known.count(it.key())) throw ConfigError(where + it.key() + ": unknown field");
    }
}

} // namespace detail

/// Overlays a JSON document on `base`. Unknown keys and type mismatches are
/// reported with their field path.
inline ExperimentConfig config_from_json(const json& j, ExperimentConfig base)
{
    detail::reject_unknown(j, {"objective", "optimizer", "preset", "dataset", "solver", "baseline", "seeds", "output_dir"}, "");
    if (auto it = j.find("preset"); it != j.end() && it->is_string() && it->get<std::string>() != base.preset) {
        base = preset_config(it->get<std::string>());
    }
    detail::read_field(j, "objective", base.objective, "");
    detail::read_field(j, "optimizer", base.optimizer, "");
    detail::read_field(j, "seeds", base.seeds, "");
    detail::read_field(j, "output_dir", base.output_dir, "");
    if (auto it = j.find("dataset"); it != j.end()) {
        const json& d = *it;
        auto& o = base.dataset;
        detail::reject_unknown(d, {"path", "seed", "n", "d_phi", "d_lambda", "cond", "block_dims", "block_scales",
                                   "cond_within", "K", "d", "sigma0_sq", "sigma1_sq", "n_side", "sep", "knn", "tau",
                                   "patches", "preprocess", "top_features", "normalize_depth", "log1p", "scale_clip"},
                               "dataset.");
        const std::string w = "dataset.";
        detail::read_field(d, "path", o.path, w);
        if (auto s = d.find("seed"); s != d.end()) {
            if (s->is_null()) o.seed.reset();
            else {
                std::uint64_t v = 0;
                detail::read_field(d, "seed", v, w);
                o.seed = v;
            }
        }
        detail::read_field(d, "n", o.n, w);
        detail::read_field(d, "d_phi", o.d_phi, w);
        detail::read_field(d, "d_lambda", o.d_lambda, w);
        detail::read_field(d, "cond", o.cond, w);
        detail::read_field(d, "block_dims", o.block_dims, w);
        detail::read_field(d, "block_scales", o.block_scales, w);
        detail::read_field(d, "cond_within", o.cond_within, w);
        detail::read_field(d, "K", o.K, w);
        detail::read_field(d, "d", o.d, w);
        detail::read_field(d, "sigma0_sq", o.sigma0_sq, w);
        detail::read_field(d, "sigma1_sq", o.sigma1_sq, w);
        detail::read_field(d, "n_side", o.n_side, w);
        detail::read_field(d, "sep", o.sep, w);
        detail::read_field(d, "knn", o.knn, w);
        detail::read_field(d, "tau", o.tau, w);
        detail::read_field(d, "patches", o.patches, w);
        detail::read_field(d, "preprocess", o.preprocess, w);
        detail::read_field(d, "top_features", o.prep.top_features, w);
        detail::read_field(d, "normalize_depth", o.prep.normalize_depth, w);
        detail::read_field(d, "log1p", o.prep.log1p, w);
        detail::read_field(d, "scale_clip", o.prep.scale_clip, w);
    }
    if (auto it = j.find("solver"); it != j.end()) {
        const json& s = *it;
        auto& o = base.solver;
        detail::reject_unknown(s, {"iters", "batch_size", "batching", "bias", "num_batches", "eta", "eta_rule", "c",
                                   "inner_method", "inner_tol", "max_inner_iters", "line_search", "stop_grad_tol",
                                   "trace_every"},
                               "solver.");
        const std::string w = "solver.";
        detail::read_field(s, "iters", o.iters, w);
        detail::read_field(s, "batch_size", o.batch_size, w);
        detail::read_field(s, "batching", o.batching, w);
        detail::read_field(s, "bias", o.bias, w);
        detail::read_field(s, "num_batches", o.num_batches, w);
        if (auto e = s.find("eta"); e != s.end() && e->is_number()) o.eta = {e->get<double>()};
        else detail::read_field(s, "eta", o.eta, w);
        detail::read_field(s, "eta_rule", o.eta_rule, w);
        detail::read_field(s, "c", o.c, w);
        detail::read_field(s, "inner_method", o.inner_method, w);
        detail::read_field(s, "inner_tol", o.inner_tol, w);
        detail::read_field(s, "max_inner_iters", o.max_inner_iters, w);
        detail::read_field(s, "line_search", o.line_search, w);
        detail::read_field(s, "stop_grad_tol", o.stop_grad_tol, w);
        detail::read_field(s, "trace_every", o.trace_every, w);
    }
    if (auto it = j.find("baseline"); it != j.end()) {
        const json& b = *it;
        auto& o = base.baseline;
        detail::reject_unknown(b, {"step", "diminish_b", "beta1", "beta2", "eps", "decay"}, "baseline.");
        const std::string w = "baseline.";
        if (auto e = b.find("step"); e != b.end() && e->is_number()) o.step = {e->get<double>()};
        else detail::read_field(b, "step", o.step, w);
        detail::read_field(b, "diminish_b", o.diminish_b, w);
        detail::read_field(b, "beta1", o.beta1, w);
        detail::read_field(b, "beta2", o.beta2, w);
        detail::read_field(b, "eps", o.eps, w);
        detail::read_field(b, "decay", o.decay, w);
    }
    return base;
}

/// Parses a config file. Syntax errors report line and column.
inline ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t k = 0; k + 1 < e.byte && k < text.size(); ++k) {
            if (text[k] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ConfigError(path + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
    }
    std::string preset = "quad-desk";
    if (auto it = j.find("preset"); it != j.end() && it->is_string()) preset = it->get<std::string>();
    return config_from_json(j, preset_config(preset));
}

// ---------------------------------------------------------------------------
// Data per seed
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 1469598103934665603ull)
{
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t k = 0; k < bytes; ++k) {
        h ^= p[k];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v)
{
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

inline std::uint64_t data_seed(const ExperimentConfig& c, std::uint64_t run_seed)
{
    return c.dataset.seed ? *c.dataset.seed : run_seed;
}

inline QuadraticInstance make_quadratic(const DatasetSpec& d, std::uint64_t seed)
{
    if (!d.block_scales.empty()) {
        return generate_block_scaled_quadratic(d.n, d.d_phi, d.block_dims, d.block_scales, d.cond_within, seed);
    }
    return generate_quadratic_instance(d.n, d.d_phi, d.d_lambda, d.cond, seed);
}

/// Quadratic instances are stored as JSON: {"d_phi", "d_lambda", "block_dims", "Q": [[row-major]], "v": [[...]]}.
inline void save_quadratic(const QuadraticInstance& q, const std::vector<Index>& block_dims, const std::string& path)
{
    json j = {{"d_phi", q.d_phi}, {"d_lambda", q.d_lambda}, {"block_dims", block_dims}};
    json Q = json::array(), v = json::array();
    for (std::size_t i = 0; i < q.Q.size(); ++i) {
        std::vector<double> flat;
        for (Index r = 0; r < q.Q[i].rows(); ++r)
            for (Index c = 0; c < q.Q[i].cols(); ++c) flat.push_back(q.Q[i](r, c));
        Q.push_back(flat);
        v.push_back(std::vector<double>(q.v[i].data(), q.v[i].data() + q.v[i].size()));
    }
    j["Q"] = std::move(Q);
    j["v"] = std::move(v);
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << j.dump(-1, ' ', false, json::error_handler_t::strict) << '\n';
    if (!out) throw ConfigError("write to '" + path + "' failed");
}

inline std::pair<QuadraticInstance, std::vector<Index>> load_quadratic(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    QuadraticInstance q;
    std::vector<Index> dims;
    try {
        q.d_phi = j.at("d_phi").get<Index>();
        q.d_lambda = j.at("d_lambda").get<Index>();
        if (j.contains("block_dims")) dims = j.at("block_dims").get<std::vector<Index>>();
        const auto& Q = j.at("Q");
        const auto& v = j.at("v");
        if (Q.size() != v.size()) throw ConfigError(path + ": Q and v counts differ");
        const Index d = q.dim();
        for (std::size_t i = 0; i < Q.size(); ++i) {
            const auto flat = Q[i].get<std::vector<double>>();
            const auto vi = v[i].get<std::vector<double>>();
            if (static_cast<Index>(flat.size()) != d * d || static_cast<Index>(vi.size()) != d) {
                throw ConfigError(path + ": sample " + std::to_string(i) + " has the wrong size");
            }
            Matrix M(d, d);
            for (Index r = 0; r < d; ++r)
                for (Index c = 0; c < d; ++c) M(r, c) = flat[static_cast<std::size_t>(r * d + c)];
            q.Q.push_back(std::move(M));
            q.v.push_back(Eigen::Map<const Vector>(vi.data(), d));
        }
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return {std::move(q), std::move(dims)};
}

inline BlockPartition quadratic_partition(const DatasetSpec& d, Index d_lambda)
{
    if (d.block_dims.empty()) return BlockPartition::single(d_lambda);
    return BlockPartition(d.block_dims);
}

inline Dataset make_table_dataset(const ExperimentConfig& c, std::uint64_t seed)
{
    const auto& d = c.dataset;
    Dataset ds;
    if (!d.path.empty()) {
        ds = load_table(d.path);
        if (d.preprocess) ds = preprocess(ds, d.prep);
    } else if (c.objective == "gmm") {
        GmmPreset p;
        p.n = d.n;
        p.K = d.K;
        p.d = d.d;
        p.sigma0_sq = d.sigma0_sq;
        p.sigma1_sq = d.sigma1_sq;
        ds = sample_gmm(p.n, p.K, p.d, generating_hyper(p), seed);
    } else {
        ds = synth_spatial(d.n_side, d.K, d.d, seed, d.sep);
    }
    ds.validate();
    return ds;
}

inline std::uint64_t dataset_fingerprint(const Dataset& ds)
{
    std::uint64_t h = fnv1a(ds.X.data(), static_cast<std::size_t>(ds.X.size()) * sizeof(double));
    if (ds.coords) h = fnv1a(ds.coords->data(), static_cast<std::size_t>(ds.coords->size()) * sizeof(double), h);
    return h;
}

inline std::uint64_t quadratic_fingerprint(const QuadraticInstance& q)
{
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& Q : q.Q) h = fnv1a(Q.data(), static_cast<std::size_t>(Q.size()) * sizeof(double), h);
    for (const auto& v : q.v) h = fnv1a(v.data(), static_cast<std::size_t>(v.size()) * sizeof(double), h);
    return h;
}

// ---------------------------------------------------------------------------
// One run
// ---------------------------------------------------------------------------

struct SeedOutcome {
    std::uint64_t seed = 0;
    std::string data_fingerprint;
    RunResult result;
    double final_objective = std::nan("");
    double final_grad_norm = std::nan("");
    double final_consensus = std::nan("");
    std::optional<double> mixture_w2;
    std::optional<double> ari;
    std::vector<double> etas;
    double wall_ms = 0.0;
    bool rho_clipped = false;
};

/// Everything a run needs, built for one seed.
struct PreparedProblem {
    std::shared_ptr<const Objective> objective;
    std::shared_ptr<const MixtureElboObjective> mixture; // null for quadratics
    Dataset data;
    Vector init_lambda0;
    BatchSchedule schedule;
    std::string fingerprint;
};

inline PreparedProblem prepare(const ExperimentConfig& c, std::uint64_t seed)
{
    PreparedProblem p;
    const std::uint64_t dseed = data_seed(c, seed);
    if (c.objective == "quadratic") {
        QuadraticInstance inst;
        BlockPartition part;
        if (!c.dataset.path.empty()) {
            auto [q, dims] = load_quadratic(c.dataset.path);
            inst = std::move(q);
            part = dims.empty() ? BlockPartition::single(inst.d_lambda) : BlockPartition(dims);
        } else {
            inst = make_quadratic(c.dataset, dseed);
            part = quadratic_partition(c.dataset, inst.d_lambda);
        }
        p.fingerprint = hex64(quadratic_fingerprint(inst));
        const Index dl = inst.d_lambda;
        p.objective = std::make_shared<QuadraticObjective>(std::move(inst), std::move(part));
        p.init_lambda0 = Vector::Ones(dl);
    } else {
        p.data = make_table_dataset(c, dseed);
        p.fingerprint = hex64(dataset_fingerprint(p.data));
        const GmmHyperFit fit = gmm_hyper_from_data(p.data.X, c.dataset.K, seed);
        std::shared_ptr<MixtureElboObjective> obj;
        if (c.objective == "gmm") {
            obj = std::make_shared<MixtureElboObjective>(p.data.X, fit.hyper);
        } else {
            if (!p.data.coords) throw ConfigError("spatial objective needs coordinates (cx, cy columns)");
            const auto patches = partition_patches(*p.data.coords, c.dataset.patches);
            SpatialGraph g = build_knn_graph(*p.data.coords, c.dataset.knn, nullptr, p.data.X, c.dataset.tau);
            g.patches = patches;
            obj = std::make_shared<MixtureElboObjective>(p.data.X, fit.hyper, patch_members(patches), g);
        }
        p.init_lambda0 = obj->lambda_from_labels(fit.labels);
        p.mixture = obj;
        p.objective = obj;
    }

    const Index n = p.objective->num_samples();
    const auto& s = c.solver;
    if (s.batching == "uniform") {
        p.schedule = BatchSchedule::uniform(std::min<Index>(s.batch_size, n), seed);
    } else if (s.batching == "biased") {
        if (!p.mixture || c.objective != "gmm") throw ConfigError("solver.batching: 'biased' needs the gmm objective");
        std::vector<int> labels;
        if (p.data.true_labels) labels = *p.data.true_labels;
        else labels = gmm_hyper_from_data(p.data.X, c.dataset.K, seed).labels;
        p.schedule = BatchSchedule::custom(biased_batches(labels, s.batch_size, s.bias, seed).batches);
    } else {
        const Index B = std::max<Index>(1, std::min(s.num_batches, n));
        std::vector<Index> assign(static_cast<std::size_t>(n));
        for (Index u = 0; u < n; ++u) assign[static_cast<std::size_t>(u)] = u % B;
        BatchSchedule sch;
        sch.mode = BatchMode::fixed_partition;
        sch.partition_assignment = std::move(assign);
        p.schedule = std::move(sch);
    }
    return p;
}

/// Block step sizes for the primal-dual optimizers.
inline Preconditioner choose_preconditioner(const ExperimentConfig& c, const Objective& obj, const Vector& lambda_ref)
{
    const BlockPartition& part = obj.partition();
    const auto& s = c.solver;
    if (s.eta_rule == "inv-lipschitz") {
        const auto est = obj.lipschitz_estimates(lambda_ref);
        if (!est) throw ConfigError("objective '" + obj.name() + "' has no Lipschitz estimate; set solver.eta");
        if (c.optimizer == "p2dvi") return default_preconditioner(est->blocks, s.c).preconditioner;
        const double Lmax = *std::max_element(est->blocks.begin(), est->blocks.end());
        return Preconditioner::uniform(s.c / Lmax, part);
    }
    if (s.eta.size() == 1) return Preconditioner::uniform(s.eta.front(), part);
    if (c.optimizer == "pdvi") throw ConfigError("solver.eta: pdvi takes a single step size");
    if (static_cast<Index>(s.eta.size()) != part.num_blocks()) {
        throw ConfigError("solver.eta: expected " + std::to_string(part.num_blocks()) + " block step sizes");
    }
    return Preconditioner(s.eta);
}

inline InnerSolverConfig inner_config(const SolverSpec& s)
{
    InnerSolverConfig in;
    in.method = inner_method_from_string(s.inner_method);
    in.inner_tol = s.inner_tol;
    in.max_inner_iters = s.max_inner_iters;
    if (s.line_search == "fixed_step") in.line_search = LineSearch::fixed_step;
    else if (s.line_search == "backtracking") in.line_search = LineSearch::backtracking;
    else throw ConfigError("solver.line_search: expected 'fixed_step' or 'backtracking'");
    return in;
}

inline SeedOutcome run_seed(const ExperimentConfig& c, std::uint64_t seed, int threads = 1, const RunHooks& hooks = {})
{
    c.validate();
    const auto t0 = std::chrono::steady_clock::now();
    PreparedProblem p = prepare(c, seed);
    const ConsensusProblem problem(p.objective);
    const auto& s = c.solver;
    InnerSolverConfig inner = inner_config(s);
    if (!c.is_primal_dual() && inner.method == InnerMethod::closed_form) inner.method = InnerMethod::block_coordinate_descent;

    SeedOutcome out;
    out.seed = seed;
    out.data_fingerprint = p.fingerprint;
    if (c.is_primal_dual()) {
        SolveConfig cfg;
        cfg.preconditioner = choose_preconditioner(c, *p.objective, p.init_lambda0);
        cfg.schedule = p.schedule;
        cfg.max_iters = s.iters;
        cfg.inner = inner;
        cfg.stop_grad_tol = s.stop_grad_tol;
        cfg.trace_every = s.trace_every;
        cfg.threads = threads;
        out.etas = cfg.preconditioner.etas();
        out.result = run(problem, cfg, p.init_lambda0, hooks);
    } else {
        BaselineConfig cfg;
        cfg.method = baseline_method_from_string(c.optimizer);
        cfg.steps = c.baseline.step;
        cfg.diminish_b = c.baseline.diminish_b;
        cfg.beta1 = c.baseline.beta1;
        cfg.beta2 = c.baseline.beta2;
        cfg.eps = c.baseline.eps;
        cfg.rms_decay = c.baseline.decay;
        cfg.schedule = p.schedule;
        cfg.max_iters = s.iters;
        cfg.inner = inner;
        cfg.stop_grad_tol = s.stop_grad_tol;
        cfg.trace_every = s.trace_every;
        cfg.threads = threads;
        out.etas = c.baseline.step;
        out.result = run_baseline(problem, cfg, p.init_lambda0);
    }
    if (!out.result.trace.empty()) {
        const auto& last = out.result.trace.back();
        out.final_objective = last.objective;
        out.final_grad_norm = last.grad_norm_global;
        out.final_consensus = last.consensus_residual;
    }
    if (p.mixture && out.result.state.lambda0.size() > 0) {
        const Vector& lam = out.result.state.lambda0;
        out.rho_clipped = p.mixture->rho_clipped(lam);
        if (p.data.true_mixture && p.data.true_mixture->components() == c.dataset.K) {
            out.mixture_w2 = mixture_w2_matched(p.mixture->mixture_summary(lam), *p.data.true_mixture);
        }
        if (p.data.true_labels) {
            std::vector<Vector> phis;
            for (const auto& smp : out.result.state.samples) phis.push_back(smp.phi);
            out.ari = adjusted_rand_index(p.mixture->point_labels(phis), *p.data.true_labels);
        }
    }
    out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

inline std::string format_double(double v)
{
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

/// Trace file: one '#' line with the resolved config, then the CSV header and rows.
inline void write_trace(const std::string& path, const std::vector<TraceRecord>& trace, const json& meta)
{
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << "# " << meta.dump() << '\n' << kTraceHeader << '\n';
    for (const auto& r : trace) {
        out << r.t << ',' << format_double(r.objective) << ',' << format_double(r.grad_norm_global) << ','
            << format_double(r.consensus_residual) << ',' << format_double(r.wallclock_ms) << '\n';
    }
    if (!out) throw ConfigError("write to '" + path + "' failed");
}

inline json opt_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json seed_summary(const SeedOutcome& o)
{
    json j = {{"seed", o.seed},
              {"data_fingerprint", o.data_fingerprint},
              {"ok", o.result.ok()},
              {"iterations", o.result.stats.iterations},
              {"final_objective", o.final_objective},
              {"final_grad_norm", o.final_grad_norm},
              {"final_consensus_residual", o.final_consensus},
              {"mixture_w2", opt_number(o.mixture_w2)},
              {"ari", opt_number(o.ari)},
              {"etas", o.etas},
              {"local_updates", o.result.stats.local_updates},
              {"unconverged_local_updates", o.result.stats.unconverged_updates},
              {"rho_clip_active", o.rho_clipped},
              {"wall_ms", o.wall_ms}};
    if (o.result.error) j["error"] = *o.result.error;
    return j;
}

inline json mean_sd(const std::vector<double>& xs)
{
    if (xs.empty()) return json(nullptr);
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    const double sd = xs.size() > 1 ? std::sqrt(v / static_cast<double>(xs.size() - 1)) : 0.0;
    return json{{"mean", m}, {"sd", sd}};
}

inline json run_summary(const ExperimentConfig& c, const std::vector<SeedOutcome>& outcomes)
{
    json per = json::array();
    std::vector<double> obj, grad, w2, ari;
    for (const auto& o : outcomes) {
        per.push_back(seed_summary(o));
        if (std::isfinite(o.final_objective)) obj.push_back(o.final_objective);
        if (std::isfinite(o.final_grad_norm)) grad.push_back(o.final_grad_norm);
        if (o.mixture_w2) w2.push_back(*o.mixture_w2);
        if (o.ari) ari.push_back(*o.ari);
    }
    json agg = {{"final_objective", mean_sd(obj)}, {"final_grad_norm", mean_sd(grad)}};
    if (!w2.empty()) agg["mixture_w2"] = mean_sd(w2);
    if (!ari.empty()) agg["ari"] = mean_sd(ari);
    return json{{"config", to_json(c)},
                {"mixture_w2_definition", kMixtureW2Definition},
                {"objective_excludes_constants", true},
                {"seeds", per},
                {"aggregate", agg}};
}

// ---------------------------------------------------------------------------
// Paired comparison
// ---------------------------------------------------------------------------

/// Paired per-seed table over run summaries. Runs must share the dataset
/// section of their configs, the seed list and the per-seed data fingerprints.
/// Lower is better for objective, gradient norm and W2; higher for ARI.
inline json compare_runs(const std::vector<json>& summaries, const std::vector<std::string>& names)
{
    if (summaries.size() < 2) throw ConfigError("compare: need at least two runs");
    if (names.size() != summaries.size()) throw ConfigError("compare: one name per run");
    const json& ref = summaries.front();
    auto ds_key = [](const json& s) {
        json d = s.at("config").at("dataset");
        return json{{"objective", s.at("config").at("objective")}, {"dataset", d}};
    };
    for (std::size_t r = 1; r < summaries.size(); ++r) {
        if (ds_key(summaries[r]) != ds_key(ref)) throw ConfigError("compare: runs '" + names[0] + "' and '" + names[r] + "' use different datasets");
        if (summaries[r].at("config").at("seeds") != ref.at("config").at("seeds")) {
            throw ConfigError("compare: runs '" + names[0] + "' and '" + names[r] + "' use different seed lists");
        }
        const auto& a = ref.at("seeds");
        const auto& b = summaries[r].at("seeds");
        if (a.size() != b.size()) throw ConfigError("compare: seed tables differ in length");
        for (std::size_t k = 0; k < a.size(); ++k) {
            if (a[k].at("data_fingerprint") != b[k].at("data_fingerprint")) {
                throw ConfigError("compare: data for seed " + a[k].at("seed").dump() + " differs between runs");
            }
        }
    }
    bool has_w2 = true, has_ari = true;
    for (const auto& s : summaries) {
        for (const auto& row : s.at("seeds")) {
            has_w2 = has_w2 && row.at("mixture_w2").is_number();
            has_ari = has_ari && row.at("ari").is_number();
        }
    }
    std::vector<std::pair<std::string, bool>> metrics{{"final_objective", false}, {"final_grad_norm", false}};
    if (has_w2) metrics.emplace_back("mixture_w2", false);
    if (has_ari) metrics.emplace_back("ari", true);

    json rows = json::array();
    json wins = json::object();
    for (const auto& [m, higher] : metrics) {
        json w = json::object();
        for (const auto& nm : names) w[nm] = 0;
        w["ties"] = 0;
        wins[m] = w;
    }
    const auto& seeds = ref.at("seeds");
    for (std::size_t k = 0; k < seeds.size(); ++k) {
        json row = {{"seed", seeds[k].at("seed")}};
        for (const auto& [m, higher] : metrics) {
            json vals = json::object();
            double best = higher ? -INFINITY : INFINITY;
            for (std::size_t r = 0; r < summaries.size(); ++r) {
                const double v = summaries[r].at("seeds")[k].at(m).get<double>();
                vals[names[r]] = v;
                best = higher ? std::max(best, v) : std::min(best, v);
            }
            std::vector<std::string> winners;
            for (std::size_t r = 0; r < summaries.size(); ++r) {
                if (summaries[r].at("seeds")[k].at(m).get<double>() == best) winners.push_back(names[r]);
            }
            if (winners.size() == 1) wins[m][winners.front()] = wins[m][winners.front()].get<int>() + 1;
            else wins[m]["ties"] = wins[m]["ties"].get<int>() + 1;
            if (summaries.size() == 2) {
                vals["difference"] = summaries[0].at("seeds")[k].at(m).get<double>() -
                                     summaries[1].at("seeds")[k].at(m).get<double>();
            }
            row[m] = vals;
        }
        rows.push_back(row);
    }
    json cols = json::array();
    for (const auto& [m, higher] : metrics) cols.push_back(m);
    return json{{"runs", names},
                {"metrics", cols},
                {"mixture_w2_definition", kMixtureW2Definition},
                {"per_seed", rows},
                {"wins", wins}};
}

} // namespace pdvi
