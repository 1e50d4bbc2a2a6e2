// pdvi: generate data, run optimizers, compare runs.

#include "pdvi/experiment.hpp"
#include "pdvi/parallel.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace pdvi;

namespace {

struct Overrides {
    std::string config;
    std::string preset;
    std::string seeds;
    std::string out;
    std::string optimizer;
    std::string eta;
    std::string eta_rule;
    long batch_size = -1;
    long iters = -1;
};

std::vector<double> parse_list(const std::string& s, const char* flag)
{
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ConfigError(std::string(flag) + ": cannot parse '" + tok + "'");
        }
    }
    if (out.empty()) throw ConfigError(std::string(flag) + ": empty list");
    return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s)
{
    std::vector<std::uint64_t> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoull(tok, &used));
            if (used != tok.size() || tok.front() == '-') throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ConfigError("--seed: cannot parse '" + tok + "'");
        }
    }
    if (out.empty()) throw ConfigError("--seed: empty list");
    return out;
}

ExperimentConfig resolve(const Overrides& o)
{
    ExperimentConfig c;
    if (!o.config.empty()) {
        c = load_config(o.config);
        if (!o.preset.empty() && o.preset != c.preset) {
            throw ConfigError("--preset '" + o.preset + "' conflicts with the config file's preset '" + c.preset + "'");
        }
    } else {
        c = preset_config(o.preset.empty() ? "quad-desk" : o.preset);
    }
    if (!o.seeds.empty()) c.seeds = parse_seeds(o.seeds);
    if (!o.out.empty()) c.output_dir = o.out;
    if (!o.optimizer.empty()) c.optimizer = o.optimizer;
    if (!o.eta_rule.empty()) c.solver.eta_rule = o.eta_rule;
    if (!o.eta.empty()) {
        const auto v = parse_list(o.eta, "--eta");
        if (c.is_primal_dual()) {
            c.solver.eta = v;
            if (o.eta_rule.empty()) c.solver.eta_rule = "uniform";
        } else {
            c.baseline.step = v;
        }
    }
    if (o.batch_size >= 0) c.solver.batch_size = o.batch_size;
    if (o.iters >= 0) c.solver.iters = o.iters;
    c.validate();
    return c;
}

void write_json(const fs::path& path, const json& j)
{
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
    if (!out) throw ConfigError("write to '" + path.string() + "' failed");
}

int cmd_gen(const ExperimentConfig& c)
{
    fs::create_directories(c.output_dir);
    for (std::uint64_t seed : c.seeds) {
        const std::uint64_t dseed = data_seed(c, seed);
        const std::string stem = "data_seed" + std::to_string(seed);
        fs::path file;
        std::string fingerprint;
        if (c.objective == "quadratic") {
            const QuadraticInstance q = make_quadratic(c.dataset, dseed);
            file = fs::path(c.output_dir) / (stem + ".json");
            save_quadratic(q, c.dataset.block_dims, file.string());
            fingerprint = hex64(quadratic_fingerprint(q));
        } else {
            if (!c.dataset.path.empty()) throw ConfigError("gen: dataset.path is set; nothing to generate");
            const Dataset ds = make_table_dataset(c, dseed);
            file = fs::path(c.output_dir) / (stem + ".csv");
            save_table(ds, file.string());
            fingerprint = hex64(dataset_fingerprint(ds));
        }
        json meta = {{"file", file.filename().string()},
                     {"seed", dseed},
                     {"preset", c.preset},
                     {"generator_version", kGeneratorVersion},
                     {"data_fingerprint", fingerprint},
                     {"config", to_json(c)}};
        write_json(fs::path(c.output_dir) / (stem + ".meta.json"), meta);
        std::cout << file.string() << '\n';
    }
    return 0;
}

int cmd_run(const ExperimentConfig& c)
{
    fs::create_directories(c.output_dir);
    const int threads = threads_from_env();
    std::vector<SeedOutcome> outcomes;
    bool failed = false;
    for (std::uint64_t seed : c.seeds) {
        SeedOutcome o = run_seed(c, seed, threads);
        json meta = {{"seed", seed}, {"data_fingerprint", o.data_fingerprint}, {"config", to_json(c)}};
        write_trace((fs::path(c.output_dir) / ("trace_seed" + std::to_string(seed) + ".csv")).string(), o.result.trace,
                    meta);
        std::cout << "seed " << seed << ": objective " << format_double(o.final_objective) << ", grad "
                  << format_double(o.final_grad_norm);
        if (o.mixture_w2) std::cout << ", W2 " << format_double(*o.mixture_w2);
        if (o.ari) std::cout << ", ARI " << format_double(*o.ari);
        std::cout << '\n';
        if (o.result.error) {
            std::cerr << "seed " << seed << " aborted: " << *o.result.error << '\n';
            failed = true;
        }
        outcomes.push_back(std::move(o));
    }
    write_json(fs::path(c.output_dir) / "summary.json", run_summary(c, outcomes));
    return failed ? 2 : 0;
}

int cmd_compare(const std::vector<std::string>& paths, const std::string& out)
{
    std::vector<json> sums;
    std::vector<std::string> names;
    for (const auto& p : paths) {
        std::ifstream in(p);
        if (!in) throw ConfigError("cannot open '" + p + "'");
        try {
            sums.push_back(json::parse(in));
        } catch (const json::exception& e) {
            throw ConfigError(p + ": " + e.what());
        }
        std::string name = sums.back().at("config").at("optimizer").get<std::string>();
        // same optimizer twice: fall back to the directory name, then to a counter
        auto taken = [&](const std::string& nm) { return std::find(names.begin(), names.end(), nm) != names.end(); };
        if (taken(name)) name = fs::path(p).parent_path().filename().string();
        for (int k = 2; taken(name) || name.empty(); ++k) name = "run" + std::to_string(k);
        names.push_back(name);
    }
    const json report = compare_runs(sums, names);
    if (!out.empty()) {
        fs::create_directories(out);
        write_json(fs::path(out) / "compare.json", report);
    }
    std::cout << report.dump(2) << '\n';
    return 0;
}

void add_common(CLI::App* app, Overrides& o)
{
    app->add_option("--config", o.config, "JSON config file");
    app->add_option("--preset", o.preset, "quad-desk, quad-full, gmm-desk, gmm-full, spatial-desk, spatial-full");
    app->add_option("--seed", o.seeds, "seed or comma-separated seeds");
    app->add_option("--out", o.out, "output directory");
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"primal-dual variational inference runner"};
    app.require_subcommand(1);
    Overrides o;

    auto* gen = app.add_subcommand("gen", "write a dataset and its metadata sidecar");
    add_common(gen, o);

    auto* runc = app.add_subcommand("run", "run an optimizer; writes trace_seed<k>.csv and summary.json");
    add_common(runc, o);
    runc->add_option("--optimizer", o.optimizer, "pdvi, p2dvi, sgd, svi_constant, svi_diminishing, adam, rmsprop");
    runc->add_option("--eta", o.eta, "step size, or one per block (comma-separated)");
    runc->add_option("--eta-rule", o.eta_rule, "uniform or inv-lipschitz");
    runc->add_option("--batch-size", o.batch_size, "mini-batch size");
    runc->add_option("--iters", o.iters, "iterations");

    auto* cmp = app.add_subcommand("compare", "paired per-seed comparison of run summaries");
    std::vector<std::string> summaries;
    std::string cmp_out;
    cmp->add_option("summaries", summaries, "summary.json files")->required()->expected(2, -1);
    cmp->add_option("--out", cmp_out, "also write compare.json here");

    auto* pc = app.add_subcommand("print-config", "print the resolved config with every default");
    add_common(pc, o);
    pc->add_option("--optimizer", o.optimizer);
    pc->add_option("--eta", o.eta);
    pc->add_option("--eta-rule", o.eta_rule);
    pc->add_option("--batch-size", o.batch_size);
    pc->add_option("--iters", o.iters);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*cmp) return cmd_compare(summaries, cmp_out);
        const ExperimentConfig c = resolve(o);
        if (*gen) return cmd_gen(c);
        if (*runc) return cmd_run(c);
        std::cout << to_json(c).dump(2) << '\n';
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
