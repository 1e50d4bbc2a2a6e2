#pragma once

// Reference optimizers on the unconstrained problem min (1/n) sum_i f_i(phi_i, lambda):
// mini-batch SGD, SVI with constant or diminishing step, Adam and RMSProp.
// Each step re-optimises phi_i for i in the batch at the current lambda and
// then moves lambda using the batch-mean gradient, an unbiased estimate of the
// full-mean gradient. SVI on a conjugate objective instead blends natural
// parameters towards the batch target (one natural-gradient step).

#include "pdvi/core.hpp"
#include "pdvi/local_solver.hpp"
#include "pdvi/metrics.hpp"
#include "pdvi/objectives/mixture.hpp"
#include "pdvi/parallel.hpp"
#include "pdvi/solver.hpp"

#include <chrono>
#include <cmath>
#include <string>
#include <vector>

namespace pdvi {

enum class BaselineMethod { sgd, svi_constant, svi_diminishing, adam, rmsprop };

inline std::string to_string(BaselineMethod m)
{
    switch (m) {
    case BaselineMethod::sgd: return "sgd";
    case BaselineMethod::svi_constant: return "svi_constant";
    case BaselineMethod::svi_diminishing: return "svi_diminishing";
    case BaselineMethod::adam: return "adam";
    case BaselineMethod::rmsprop: return "rmsprop";
    }
    return "?";
}

inline BaselineMethod baseline_method_from_string(const std::string& s)
{
    if (s == "sgd") return BaselineMethod::sgd;
    if (s == "svi_constant") return BaselineMethod::svi_constant;
    if (s == "svi_diminishing") return BaselineMethod::svi_diminishing;
    if (s == "adam") return BaselineMethod::adam;
    if (s == "rmsprop") return BaselineMethod::rmsprop;
    throw ConfigError("unknown baseline '" + s + "'");
}

struct BaselineConfig {
    BaselineMethod method = BaselineMethod::sgd;
    /// One step per global block, or a single value for all blocks. For the
    /// diminishing schedule this is `a` in a / (1 + b t).
    std::vector<double> steps{0.01};
    double diminish_b = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double rms_decay = 0.9;
    BatchSchedule schedule;
    long max_iters = 100;
    InnerSolverConfig inner;
    double stop_grad_tol = 0.0;
    long trace_every = 1;
    int threads = 1;

    void validate(const BlockPartition& part) const
    {
        if (steps.empty()) throw ConfigError("baseline: no step size");
        if (steps.size() != 1 && static_cast<Index>(steps.size()) != part.num_blocks()) {
            throw ConfigError("baseline: expected 1 or " + std::to_string(part.num_blocks()) + " step sizes");
        }
        for (double s : steps) {
            if (!(s > 0.0)) throw ConfigError("baseline: step sizes must be > 0");
        }
        if (!(diminish_b >= 0.0)) throw ConfigError("baseline: diminish b must be >= 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
            throw ConfigError("baseline: moment parameters must lie in [0, 1)");
        }
        if (!(rms_decay >= 0.0 && rms_decay < 1.0)) throw ConfigError("baseline: rmsprop decay must lie in [0, 1)");
        if (!(eps > 0.0)) throw ConfigError("baseline: eps must be > 0");
        if (max_iters < 0) throw ConfigError("max_iters must be >= 0");
        if (trace_every < 1) throw ConfigError("trace_every must be >= 1");
        inner.validate();
    }

    /// Per-coordinate base step.
    Vector step_vector(const BlockPartition& part) const
    {
        if (steps.size() == 1) return Vector::Constant(part.total(), steps.front());
        return part.expand(steps);
    }

    /// Multiplier of the base step at iteration t (1 except for the diminishing schedule).
    double schedule_factor(long t) const
    {
        return method == BaselineMethod::svi_diminishing ? 1.0 / (1.0 + diminish_b * static_cast<double>(t)) : 1.0;
    }
};

/// Global iterate, local variables and optimizer moments. Baselines keep no
/// per-sample copies of lambda; the SolverState's lambda_i mirror lambda0.
struct BaselineState {
    SolverState core;
    Vector m1;
    Vector m2;
    long t = 0;

    static BaselineState initial(const ConsensusProblem& problem, const Vector& lambda0)
    {
        BaselineState s;
        s.core = SolverState::initial(problem, lambda0);
        s.m1 = Vector::Zero(lambda0.size());
        s.m2 = Vector::Zero(lambda0.size());
        return s;
    }
};

/// One baseline iteration on batch S_t. Returns the local-solve reports.
inline std::vector<InnerReport> baseline_step(const ConsensusProblem& problem, const BaselineConfig& cfg,
                                              BaselineState& state, const std::vector<Index>& batch)
{
    if (batch.empty()) throw ConfigError("baseline_step: empty batch");
    const Objective& obj = problem.objective();
    SolverState& st = state.core;
    std::vector<InnerReport> reports(batch.size());
    parallel_for(batch.size(), cfg.threads, [&](std::size_t k) {
        const Index i = batch[k];
        auto& smp = st.samples[static_cast<std::size_t>(i)];
        LocalSolution sol = minimize_local(obj, i, st.lambda0, smp.phi, cfg.inner);
        smp.phi = std::move(sol.phi);
        ++smp.visits;
        reports[k] = sol.report;
    });
    ++state.t;
    const long t = state.t;
    const Vector base = cfg.step_vector(problem.partition());
    const double factor = cfg.schedule_factor(t);

    const auto* conj = dynamic_cast<const ConjugateGlobal*>(&obj);
    const bool svi = cfg.method == BaselineMethod::svi_constant || cfg.method == BaselineMethod::svi_diminishing;
    if (svi && conj) {
        // Natural-parameter blend; the step is shared by all blocks since the
        // mean and variance of each Gaussian factor move together.
        const double rho = std::min(1.0, base(0) * factor);
        std::vector<Vector> phis;
        phis.reserve(batch.size());
        for (Index i : batch) phis.push_back(st.samples[static_cast<std::size_t>(i)].phi);
        const GaussianNatural target = conj->natural_target(batch, phis);
        GaussianNatural cur = conj->natural_from_lambda(st.lambda0);
        cur.precision = (1.0 - rho) * cur.precision + rho * target.precision;
        cur.precision_mean = (1.0 - rho) * cur.precision_mean + rho * target.precision_mean;
        st.lambda0 = conj->lambda_from_natural(cur);
    } else {
        std::vector<Vector> grads(batch.size());
        parallel_for(batch.size(), cfg.threads, [&](std::size_t k) {
            const Index i = batch[k];
            grads[k] = obj.grad_lambda(i, st.samples[static_cast<std::size_t>(i)].phi, st.lambda0);
        });
        Vector g = Vector::Zero(st.lambda0.size());
        for (const auto& gk : grads) g += gk;
        g /= static_cast<double>(batch.size());

        switch (cfg.method) {
        case BaselineMethod::sgd:
        case BaselineMethod::svi_constant:
        case BaselineMethod::svi_diminishing:
            st.lambda0 -= (factor * base).cwiseProduct(g);
            break;
        case BaselineMethod::adam: {
            state.m1 = cfg.beta1 * state.m1 + (1.0 - cfg.beta1) * g;
            state.m2 = cfg.beta2 * state.m2 + (1.0 - cfg.beta2) * g.cwiseAbs2();
            const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
            const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
            const Vector mhat = state.m1 / c1;
            const Vector vhat = state.m2 / c2;
            st.lambda0 -= base.cwiseProduct(mhat.cwiseQuotient((vhat.cwiseSqrt().array() + cfg.eps).matrix()));
            break;
        }
        case BaselineMethod::rmsprop:
            state.m2 = cfg.rms_decay * state.m2 + (1.0 - cfg.rms_decay) * g.cwiseAbs2();
            st.lambda0 -= base.cwiseProduct(g.cwiseQuotient((state.m2.cwiseSqrt().array() + cfg.eps).matrix()));
            break;
        }
    }
    if (!st.lambda0.allFinite()) throw Error("baseline produced a non-finite global iterate");
    for (Index i : batch) st.samples[static_cast<std::size_t>(i)].lambda = st.lambda0;
    st.t = t;
    return reports;
}

/// Same loop structure, trace schema and stopping rule as the primal-dual
/// solver. The consensus residual column is always 0.
inline RunResult run_baseline(const ConsensusProblem& problem, const BaselineConfig& cfg, const Vector& init_lambda0)
{
    cfg.validate(problem.partition());
    const BatchSampler sampler(cfg.schedule, problem.n());
    BaselineState state = BaselineState::initial(problem, init_lambda0);
    RunResult result;
    const auto start = std::chrono::steady_clock::now();
    const Objective& obj = problem.objective();

    auto finish = [&] {
        for (auto& s : state.core.samples) s.lambda = state.core.lambda0;
        result.state = std::move(state.core);
    };

    for (long t = 1; t <= cfg.max_iters; ++t) {
        const auto batch = sampler.batch(t);
        try {
            const auto reports = baseline_step(problem, cfg, state, batch);
            for (const auto& r : reports) {
                ++result.stats.local_updates;
                result.stats.inner_iterations += r.iterations;
                if (!r.converged) ++result.stats.unconverged_updates;
            }
        } catch (const std::exception& e) {
            result.error = "iteration " + std::to_string(t) + ": " + e.what();
            finish();
            return result;
        }
        result.stats.iterations = t;
        if (t % cfg.trace_every == 0 || t == cfg.max_iters) {
            const SolverState& st = state.core;
            TraceRecord rec;
            rec.t = t;
            try {
                std::vector<double> values(st.samples.size());
                parallel_for(values.size(), cfg.threads, [&](std::size_t i) {
                    values[i] = obj.eval(static_cast<Index>(i), st.samples[i].phi, st.lambda0);
                });
                double sum = 0.0;
                for (double v : values) sum += v;
                rec.objective = sum / static_cast<double>(values.size());
                rec.grad_norm_global = global_grad_norm(problem, st, cfg.threads);
            } catch (const std::exception& e) {
                result.error = "trace at iteration " + std::to_string(t) + ": " + e.what();
                finish();
                return result;
            }
            rec.consensus_residual = 0.0;
            rec.wallclock_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
            result.trace.push_back(rec);
            if (cfg.stop_grad_tol > 0.0 && rec.grad_norm_global <= cfg.stop_grad_tol) {
                result.stats.stopped_early = t < cfg.max_iters;
                break;
            }
        }
    }
    finish();
    return result;
}

} // namespace pdvi
