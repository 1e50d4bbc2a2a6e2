#pragma once

// Mini-batch primal-dual solver (PD-VI) and its block-preconditioned variant
// (P2D-VI). Each iteration:
//
//   1. draw a batch S_t;
//   2. for i in S_t: solve the augmented subproblem around lambda0^{t-1} and
//      set mu_i += D_eta (lambda_i - lambda0^{t-1});
//   3. h^t = h^{t-1} + (1/n) sum_{i in S_t} (lambda_i^t - lambda0^{t-1});
//   4. lambda0^t = mean_{i in S_t} lambda_i^t + h^t.
//
// A uniform preconditioner (all eta_j equal) is PD-VI; anything else is P2D-VI.

#include "pdvi/core.hpp"
#include "pdvi/local_solver.hpp"
#include "pdvi/metrics.hpp"
#include "pdvi/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

namespace pdvi {

// ---------------------------------------------------------------------------
// Batch schedules
// ---------------------------------------------------------------------------

enum class BatchMode { uniform_without_replacement, fixed_partition, custom_sequence };

struct BatchSchedule {
    BatchMode mode = BatchMode::uniform_without_replacement;
    Index batch_size = 1;
    /// fixed_partition: sample -> batch id (used when `batches` is empty).
    std::vector<Index> partition_assignment;
    /// fixed_partition / custom_sequence: explicit batches, cycled in order.
    std::vector<std::vector<Index>> batches;
    std::uint64_t seed = 0;

    static BatchSchedule uniform(Index m, std::uint64_t seed)
    {
        BatchSchedule s;
        s.mode = BatchMode::uniform_without_replacement;
        s.batch_size = m;
        s.seed = seed;
        return s;
    }

    static BatchSchedule fixed(std::vector<std::vector<Index>> parts)
    {
        BatchSchedule s;
        s.mode = BatchMode::fixed_partition;
        s.batches = std::move(parts);
        return s;
    }

    static BatchSchedule custom(std::vector<std::vector<Index>> seq)
    {
        BatchSchedule s;
        s.mode = BatchMode::custom_sequence;
        s.batches = std::move(seq);
        return s;
    }
};

namespace detail {

inline std::mt19937_64 rng_for(std::uint64_t seed, std::uint64_t stream)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x9e3779b9u};
    return std::mt19937_64(seq);
}

} // namespace detail

/// Produces S_t for t = 1, 2, ... ; the draw for iteration t depends only on
/// (seed, t), so any two consumers of the same schedule see the same batches.
class BatchSampler {
public:
    BatchSampler(BatchSchedule schedule, Index n) : sched_(std::move(schedule)), n_(n)
    {
        if (n_ < 1) throw ConfigError("batch sampler needs n >= 1");
        switch (sched_.mode) {
        case BatchMode::uniform_without_replacement:
            if (sched_.batch_size < 1 || sched_.batch_size > n_) {
                throw ConfigError("batch size " + std::to_string(sched_.batch_size) + " must lie in [1, " +
                                  std::to_string(n_) + "]");
            }
            break;
        case BatchMode::fixed_partition: {
            if (sched_.batches.empty()) build_from_assignment();
            std::vector<int> seen(static_cast<std::size_t>(n_), 0);
            for (const auto& b : sched_.batches) {
                if (b.empty()) throw ConfigError("fixed partition contains an empty batch");
                for (Index i : b) {
                    if (i < 0 || i >= n_) throw ConfigError("fixed partition index out of range");
                    ++seen[static_cast<std::size_t>(i)];
                }
            }
            for (int c : seen) {
                if (c != 1) throw ConfigError("fixed partition must cover every sample exactly once");
            }
            break;
        }
        case BatchMode::custom_sequence:
            if (sched_.batches.empty()) throw ConfigError("custom batch sequence is empty");
            for (const auto& b : sched_.batches) {
                if (b.empty()) throw ConfigError("custom batch sequence contains an empty batch");
                std::unordered_set<Index> uniq(b.begin(), b.end());
                if (static_cast<Index>(uniq.size()) != static_cast<Index>(b.size())) {
                    throw ConfigError("custom batch contains repeated indices");
                }
                for (Index i : b) {
                    if (i < 0 || i >= n_) throw ConfigError("custom batch index out of range");
                }
            }
            break;
        }
    }

    const BatchSchedule& schedule() const noexcept { return sched_; }

    /// Batch for iteration t >= 1, sorted ascending.
    std::vector<Index> batch(long t) const
    {
        if (sched_.mode != BatchMode::uniform_without_replacement) {
            const auto k = static_cast<std::size_t>((t - 1) % static_cast<long>(sched_.batches.size()));
            auto b = sched_.batches[k];
            std::sort(b.begin(), b.end());
            return b;
        }
        const Index m = sched_.batch_size;
        std::vector<Index> out;
        if (m == n_) {
            out.resize(static_cast<std::size_t>(n_));
            for (Index i = 0; i < n_; ++i) out[static_cast<std::size_t>(i)] = i;
            return out;
        }
        // Floyd's algorithm: uniform m-subset of [0, n).
        auto rng = detail::rng_for(sched_.seed, static_cast<std::uint64_t>(t));
        std::unordered_set<Index> chosen;
        chosen.reserve(static_cast<std::size_t>(m) * 2);
        for (Index j = n_ - m; j < n_; ++j) {
            std::uniform_int_distribution<Index> dist(0, j);
            const Index r = dist(rng);
            if (!chosen.insert(r).second) chosen.insert(j);
        }
        out.assign(chosen.begin(), chosen.end());
        std::sort(out.begin(), out.end());
        return out;
    }

private:
    void build_from_assignment()
    {
        if (static_cast<Index>(sched_.partition_assignment.size()) != n_) {
            throw ConfigError("fixed partition assignment must have one entry per sample");
        }
        Index nb = 0;
        for (Index b : sched_.partition_assignment) {
            if (b < 0) throw ConfigError("negative batch id");
            nb = std::max(nb, b + 1);
        }
        sched_.batches.assign(static_cast<std::size_t>(nb), {});
        for (Index i = 0; i < n_; ++i) {
            sched_.batches[static_cast<std::size_t>(sched_.partition_assignment[static_cast<std::size_t>(i)])].push_back(i);
        }
        sched_.batches.erase(std::remove_if(sched_.batches.begin(), sched_.batches.end(),
                                            [](const auto& b) { return b.empty(); }),
                             sched_.batches.end());
    }

    BatchSchedule sched_;
    Index n_;
};

/// Convenience wrapper over BatchSampler.
inline std::vector<Index> sample_batch(const BatchSchedule& schedule, Index n, long t)
{
    return BatchSampler(schedule, n).batch(t);
}

// ---------------------------------------------------------------------------
// Configuration and trace
// ---------------------------------------------------------------------------

struct SolveConfig {
    Preconditioner preconditioner;
    BatchSchedule schedule;
    long max_iters = 100;
    InnerSolverConfig inner;
    double stop_grad_tol = 0.0;
    long trace_every = 1;
    int threads = 1;

    void validate() const
    {
        if (max_iters < 0) throw ConfigError("max_iters must be >= 0");
        if (stop_grad_tol < 0.0) throw ConfigError("stop_grad_tol must be >= 0");
        if (trace_every < 1) throw ConfigError("trace_every must be >= 1");
        inner.validate();
    }
};

struct TraceRecord {
    long t = 0;
    double objective = 0.0;
    double grad_norm_global = 0.0;
    double consensus_residual = 0.0;
    double wallclock_ms = 0.0;
};

struct RunStats {
    long iterations = 0;
    long local_updates = 0;
    long unconverged_updates = 0;
    long inner_iterations = 0;
    bool stopped_early = false;
};

struct RunResult {
    SolverState state;
    std::vector<TraceRecord> trace;
    RunStats stats;
    /// Set when an oracle or inner-solver error aborted the run; the trace
    /// holds everything recorded before the failure.
    std::optional<std::string> error;

    bool ok() const noexcept { return !error.has_value(); }
};

/// Optional observation points, mainly for tests and diagnostics.
struct RunHooks {
    std::function<void(Index, const SampleState&, const InnerReport&)> after_update;
    std::function<void(const SolverState&, const std::vector<Index>&)> after_iteration;
};

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

struct PreconditionerChoice {
    Preconditioner preconditioner;
    /// sum_j eta_j^2 L_j^2 (= B c^2); compare against the admissibility budget.
    double admissibility = 0.0;
};

/// eta_j = c / L_j.
inline PreconditionerChoice default_preconditioner(const std::vector<double>& lipschitz, double c = 0.5)
{
    if (lipschitz.empty()) throw ConfigError("default_preconditioner: no Lipschitz estimates");
    if (!(c > 0.0)) throw ConfigError("default_preconditioner: scale c must be > 0");
    std::vector<double> etas;
    double budget = 0.0;
    for (double L : lipschitz) {
        if (!(L > 0.0) || !std::isfinite(L)) throw ConfigError("default_preconditioner: Lipschitz constants must be > 0");
        etas.push_back(c / L);
        budget += (c / L) * (c / L) * L * L;
    }
    return {Preconditioner(std::move(etas)), budget};
}

/// Local primal solve followed by the dual step for one sample. The sample
/// record is updated in place (warm-started from its previous phi, lambda).
inline InnerReport oracle_update(const Objective& objective, Index i, SampleState& sample, const Vector& lambda0_prev,
                                 const Vector& penalty_weights, const InnerSolverConfig& inner)
{
    const AugmentedTerms al{lambda0_prev, sample.mu, penalty_weights};
    LocalSolution sol = solve_local_al(objective, i, al, sample.phi, sample.lambda, inner);
    sample.mu = sample.mu + penalty_weights.cwiseProduct(sol.lambda - lambda0_prev);
    sample.phi = std::move(sol.phi);
    sample.lambda = std::move(sol.lambda);
    ++sample.visits;
    return sol.report;
}

inline InnerReport oracle_update(const Objective& objective, Index i, SampleState& sample, const Vector& lambda0_prev,
                                 const Preconditioner& precond, const InnerSolverConfig& inner)
{
    return oracle_update(objective, i, sample, lambda0_prev, precond.penalty_weights(objective.partition()), inner);
}

/// Drift accumulation and global step. Samples outside the batch are not read.
inline void aggregate_global(SolverState& state, const std::vector<Index>& batch, const Vector& lambda0_prev)
{
    if (batch.empty()) throw ConfigError("aggregate_global: empty batch");
    const double n = static_cast<double>(state.samples.size());
    Vector batch_sum = Vector::Zero(lambda0_prev.size());
    for (Index i : batch) batch_sum += state.samples.at(static_cast<std::size_t>(i)).lambda;
    const double m = static_cast<double>(batch.size());
    state.h += (batch_sum - m * lambda0_prev) / n;
    state.lambda0 = batch_sum / m + state.h;
}

// ---------------------------------------------------------------------------
// Main loop
// ---------------------------------------------------------------------------

class PrimalDualSolver {
public:
    PrimalDualSolver(ConsensusProblem problem, SolveConfig config)
        : problem_(std::move(problem)), config_(std::move(config)),
          sampler_(config_.schedule, problem_.n())
    {
        config_.validate();
        weights_ = config_.preconditioner.penalty_weights(problem_.partition());
    }

    const ConsensusProblem& problem() const noexcept { return problem_; }
    const SolveConfig& config() const noexcept { return config_; }

    RunResult run(const Vector& init_lambda0, const RunHooks& hooks = {}) const
    {
        RunResult result;
        result.state = SolverState::initial(problem_, init_lambda0);
        const auto start = std::chrono::steady_clock::now();
        const Objective& obj = problem_.objective();

        for (long t = 1; t <= config_.max_iters; ++t) {
            SolverState& st = result.state;
            const std::vector<Index> batch = sampler_.batch(t);
            const Vector lambda0_prev = st.lambda0;
            std::vector<InnerReport> reports(batch.size());
            try {
                parallel_for(batch.size(), config_.threads, [&](std::size_t k) {
                    const Index i = batch[k];
                    reports[k] = oracle_update(obj, i, st.samples[static_cast<std::size_t>(i)], lambda0_prev, weights_,
                                               config_.inner);
                });
            } catch (const std::exception& e) {
                result.error = "iteration " + std::to_string(t) + ": " + e.what();
                return result;
            }
            for (std::size_t k = 0; k < batch.size(); ++k) {
                ++result.stats.local_updates;
                result.stats.inner_iterations += reports[k].iterations;
                if (!reports[k].converged) ++result.stats.unconverged_updates;
                if (hooks.after_update) {
                    hooks.after_update(batch[k], st.samples[static_cast<std::size_t>(batch[k])], reports[k]);
                }
            }
            aggregate_global(st, batch, lambda0_prev);
            st.t = t;
            result.stats.iterations = t;
            check_consistent(problem_, st);
            if (!st.lambda0.allFinite()) {
                result.error = "iteration " + std::to_string(t) + ": global iterate became non-finite";
                return result;
            }
            if (hooks.after_iteration) hooks.after_iteration(st, batch);

            if (t % config_.trace_every == 0 || t == config_.max_iters) {
                TraceRecord rec;
                try {
                    rec = make_record(st, start);
                } catch (const std::exception& e) {
                    result.error = "trace at iteration " + std::to_string(t) + ": " + e.what();
                    return result;
                }
                result.trace.push_back(rec);
                if (config_.stop_grad_tol > 0.0 && rec.grad_norm_global <= config_.stop_grad_tol) {
                    result.stats.stopped_early = t < config_.max_iters;
                    break;
                }
            }
        }
        return result;
    }

private:
    TraceRecord make_record(const SolverState& st, std::chrono::steady_clock::time_point start) const
    {
        const Index n = problem_.n();
        std::vector<double> values(static_cast<std::size_t>(n));
        parallel_for(static_cast<std::size_t>(n), config_.threads, [&](std::size_t i) {
            values[i] = problem_.objective().eval(static_cast<Index>(i), st.samples[i].phi, st.lambda0);
        });
        double sum = 0.0;
        for (double v : values) sum += v;
        TraceRecord rec;
        rec.t = st.t;
        rec.objective = sum / static_cast<double>(n);
        rec.grad_norm_global = global_grad_norm(problem_, st, config_.threads);
        rec.consensus_residual = consensus_residual(st);
        rec.wallclock_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        return rec;
    }

    ConsensusProblem problem_;
    SolveConfig config_;
    BatchSampler sampler_;
    Vector weights_;
};

inline RunResult run(const ConsensusProblem& problem, const SolveConfig& config, const Vector& init_lambda0,
                     const RunHooks& hooks = {})
{
    return PrimalDualSolver(problem, config).run(init_lambda0, hooks);
}

} // namespace pdvi
