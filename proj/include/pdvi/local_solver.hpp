#pragma once

// Per-sample augmented-Lagrangian subproblem
//
//   min_{phi, lambda}  f_i(phi, lambda) + <mu, lambda - lambda0> + 1/2 ||lambda - lambda0||^2_D
//
// solved either in closed form (quadratics), by block coordinate descent, or
// by plain gradient descent.

#include "pdvi/core.hpp"

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

namespace pdvi {

enum class InnerMethod { closed_form, block_coordinate_descent, gradient_descent };
enum class LineSearch { fixed_step, backtracking };

inline std::string to_string(InnerMethod m)
{
    switch (m) {
    case InnerMethod::closed_form: return "closed_form";
    case InnerMethod::block_coordinate_descent: return "block_coordinate_descent";
    case InnerMethod::gradient_descent: return "gradient_descent";
    }
    return "?";
}

inline InnerMethod inner_method_from_string(const std::string& s)
{
    if (s == "closed_form") return InnerMethod::closed_form;
    if (s == "block_coordinate_descent" || s == "bcd") return InnerMethod::block_coordinate_descent;
    if (s == "gradient_descent" || s == "gd") return InnerMethod::gradient_descent;
    throw ConfigError("unknown inner method '" + s + "'");
}

struct InnerSolverConfig {
    InnerMethod method = InnerMethod::block_coordinate_descent;
    double inner_tol = 1e-8;
    int max_inner_iters = 200;
    LineSearch line_search = LineSearch::backtracking;
    double fixed_step = 1e-2;

    void validate() const
    {
        if (!(inner_tol > 0.0)) throw ConfigError("inner_tol must be > 0");
        if (max_inner_iters < 1) throw ConfigError("max_inner_iters must be >= 1");
        if (!(fixed_step > 0.0)) throw ConfigError("fixed_step must be > 0");
    }
};

struct InnerReport {
    int iterations = 0;
    double grad_phi_norm = 0.0;
    double grad_lambda_norm = 0.0;
    bool converged = false;
    int line_search_fallbacks = 0;
};

struct LocalSolution {
    Vector phi;
    Vector lambda;
    InnerReport report;
};

/// Raised when the inner iteration produces a non-finite point. Carries the
/// last finite iterate.
class InnerSolverError : public Error {
public:
    InnerSolverError(const std::string& what, LocalPoint last) : Error(what), last_(std::move(last)) {}
    const LocalPoint& last_iterate() const noexcept { return last_; }

private:
    LocalPoint last_;
};

/// f_i plus the augmented terms, bound to one sample.
class AugmentedSubproblem {
public:
    AugmentedSubproblem(const Objective& objective, Index i, const AugmentedTerms& al)
        : obj_(objective), i_(i), al_(al)
    {}

    const Objective& objective() const noexcept { return obj_; }
    Index sample() const noexcept { return i_; }
    const AugmentedTerms& terms() const noexcept { return al_; }

    double value(const Vector& phi, const Vector& lambda) const { return obj_.eval(i_, phi, lambda) + al_.value(lambda); }
    Vector grad_phi(const Vector& phi, const Vector& lambda) const { return obj_.grad_phi(i_, phi, lambda); }
    Vector grad_lambda(const Vector& phi, const Vector& lambda) const
    {
        return obj_.grad_lambda(i_, phi, lambda) + al_.gradient(lambda);
    }

private:
    const Objective& obj_;
    Index i_;
    const AugmentedTerms& al_;
};

namespace detail {

inline bool finite_value(double v) { return std::isfinite(v); }

/// Armijo backtracking along -g on one block. Returns false if no decrease
/// could be found, in which case the fixed fallback step is tried.
template <class Eval>
bool line_search_block(Vector& x, const Vector& g, double f0, double& step, Eval&& eval, const InnerSolverConfig& cfg,
                       InnerReport& report)
{
    const double g2 = g.squaredNorm();
    if (g2 == 0.0) return true;
    if (cfg.line_search == LineSearch::fixed_step) {
        Vector trial = x - cfg.fixed_step * g;
        const double ft = eval(trial);
        if (finite_value(ft) && ft <= f0) {
            x = std::move(trial);
            return true;
        }
        return false;
    }
    double s = step;
    for (int k = 0; k < 60; ++k) {
        Vector trial = x - s * g;
        const double ft = eval(trial);
        if (finite_value(ft) && ft <= f0 - 1e-4 * s * g2) {
            x = std::move(trial);
            step = std::min(2.0 * s, 1e8);
            return true;
        }
        s *= 0.5;
    }
    ++report.line_search_fallbacks;
    const double fallback = std::min(cfg.fixed_step, step) * 1e-3;
    Vector trial = x - fallback * g;
    const double ft = eval(trial);
    if (finite_value(ft) && ft <= f0) x = std::move(trial);
    step = std::max(step * 1e-3, 1e-12);
    return false;
}

inline void measure(const AugmentedSubproblem& sub, const Vector& phi, const Vector& lambda, InnerReport& report)
{
    report.grad_phi_norm = phi.size() > 0 ? sub.grad_phi(phi, lambda).norm() : 0.0;
    report.grad_lambda_norm = sub.grad_lambda(phi, lambda).norm();
}

inline void ensure_finite(const Vector& phi, const Vector& lambda, const LocalPoint& last, const char* where)
{
    if (!phi.allFinite() || !lambda.allFinite()) {
        throw InnerSolverError(std::string("non-finite iterate in ") + where, last);
    }
}

} // namespace detail

/// Default block order: phi first (when present), then the global blocks in index order.
inline std::vector<Index> default_block_order(const Objective& objective, Index i)
{
    std::vector<Index> order;
    if (objective.local_dim(i) > 0) order.push_back(0);
    for (Index j = 0; j < objective.partition().num_blocks(); ++j) order.push_back(j + 1);
    return order;
}

/// One sweep of block coordinate descent over the given block order.
/// Block 0 is phi, block j >= 1 the global block j - 1. Blocks with a
/// specialised exact solver use it; others take line-searched gradient steps.
/// The augmented value never increases.
inline void coordinate_descent_step(const AugmentedSubproblem& sub, Vector& phi, Vector& lambda,
                                    const std::vector<Index>& block_order, const InnerSolverConfig& cfg,
                                    InnerReport& report, int generic_steps = 20)
{
    const Objective& obj = sub.objective();
    const BlockPartition& part = obj.partition();
    std::vector<double> steps(static_cast<std::size_t>(part.num_blocks()) + 1, 1.0);

    for (Index b : block_order) {
        if (b < 0 || b > part.num_blocks()) throw ConfigError("block index out of range");
        if (b == 0 && phi.size() == 0) continue;

        const double before = sub.value(phi, lambda);
        Vector phi_try = phi;
        Vector lambda_try = lambda;
        if (obj.minimize_block(sub.sample(), b, sub.terms(), phi_try, lambda_try)) {
            if (b == 0) obj.normalize_phi(sub.sample(), phi_try);
            const double after = sub.value(phi_try, lambda_try);
            // Exact block minimisers can lose a few ulps; never accept an increase.
            if (after <= before + 1e-12 * std::max(1.0, std::abs(before))) {
                phi = std::move(phi_try);
                lambda = std::move(lambda_try);
            }
            continue;
        }

        double& step = steps[static_cast<std::size_t>(b)];
        for (int k = 0; k < generic_steps; ++k) {
            if (b == 0) {
                const Vector g = sub.grad_phi(phi, lambda);
                if (g.norm() <= 0.1 * cfg.inner_tol) break;
                auto eval = [&](const Vector& x) { return sub.value(x, lambda); };
                detail::line_search_block(phi, g, eval(phi), step, eval, cfg, report);
                obj.normalize_phi(sub.sample(), phi);
            } else {
                const Index j = b - 1;
                const Vector g = part.block(sub.grad_lambda(phi, lambda), j);
                if (g.norm() <= 0.1 * cfg.inner_tol) break;
                Vector x = part.block(lambda, j);
                auto eval = [&](const Vector& xb) {
                    Vector l = lambda;
                    part.block(l, j) = xb;
                    return sub.value(phi, l);
                };
                detail::line_search_block(x, g, eval(x), step, eval, cfg, report);
                part.block(lambda, j) = x;
            }
        }
    }
}

/// Solves the augmented subproblem of sample i from the warm start (phi, lambda).
/// A run that exhausts max_inner_iters above tolerance returns its best iterate
/// with report.converged == false.
inline LocalSolution solve_local_al(const Objective& objective, Index i, const AugmentedTerms& al, Vector phi,
                                    Vector lambda, const InnerSolverConfig& cfg)
{
    cfg.validate();
    const AugmentedSubproblem sub(objective, i, al);
    LocalSolution out;

    if (cfg.method == InnerMethod::closed_form) {
        auto sol = objective.solve_local_closed_form(i, al);
        if (!sol) throw ConfigError("objective '" + objective.name() + "' has no closed-form local solve");
        detail::ensure_finite(sol->phi, sol->lambda, LocalPoint{phi, lambda}, "closed-form solve");
        out.phi = std::move(sol->phi);
        out.lambda = std::move(sol->lambda);
        out.report.iterations = 1;
        detail::measure(sub, out.phi, out.lambda, out.report);
        out.report.converged = true;
        return out;
    }

    detail::check_finite(phi, "phi");
    detail::check_finite(lambda, "lambda");
    const auto order = default_block_order(objective, i);
    double gd_step = 1.0;

    InnerReport& rep = out.report;
    detail::measure(sub, phi, lambda, rep);
    while (rep.iterations < cfg.max_inner_iters &&
           (rep.grad_phi_norm > cfg.inner_tol || rep.grad_lambda_norm > cfg.inner_tol)) {
        const LocalPoint last{phi, lambda};
        if (cfg.method == InnerMethod::block_coordinate_descent) {
            coordinate_descent_step(sub, phi, lambda, order, cfg, rep);
        } else {
            const Vector gphi = phi.size() > 0 ? sub.grad_phi(phi, lambda) : Vector();
            const Vector glam = sub.grad_lambda(phi, lambda);
            Vector z(phi.size() + lambda.size());
            z << phi, lambda;
            Vector g(z.size());
            g << gphi, glam;
            auto eval = [&](const Vector& x) {
                return sub.value(x.head(phi.size()), x.tail(lambda.size()));
            };
            detail::line_search_block(z, g, eval(z), gd_step, eval, cfg, rep);
            phi = z.head(phi.size());
            lambda = z.tail(lambda.size());
            objective.normalize_phi(i, phi);
        }
        detail::ensure_finite(phi, lambda, last, "local augmented solve");
        ++rep.iterations;
        detail::measure(sub, phi, lambda, rep);
    }
    rep.converged = rep.grad_phi_norm <= cfg.inner_tol && rep.grad_lambda_norm <= cfg.inner_tol;
    out.phi = std::move(phi);
    out.lambda = std::move(lambda);
    return out;
}

/// Minimises f_i(., lambda) over phi alone with lambda held fixed. Used by the
/// baselines, which re-optimise local variables at the current global point.
inline LocalSolution minimize_local(const Objective& objective, Index i, const Vector& lambda, Vector phi,
                                    const InnerSolverConfig& cfg)
{
    LocalSolution out;
    out.lambda = lambda;
    if (phi.size() == 0) {
        out.phi = std::move(phi);
        out.report.converged = true;
        return out;
    }
    // Infinite penalty is emulated by only ever touching block 0.
    const Vector zero = Vector::Zero(lambda.size());
    const AugmentedTerms al{lambda, zero, zero};
    const AugmentedSubproblem sub(objective, i, al);
    const std::vector<Index> order{0};
    InnerReport& rep = out.report;
    Vector lam = lambda;
    rep.grad_phi_norm = sub.grad_phi(phi, lam).norm();
    while (rep.iterations < cfg.max_inner_iters && rep.grad_phi_norm > cfg.inner_tol) {
        const LocalPoint last{phi, lam};
        coordinate_descent_step(sub, phi, lam, order, cfg, rep);
        detail::ensure_finite(phi, lam, last, "local phi solve");
        ++rep.iterations;
        rep.grad_phi_norm = sub.grad_phi(phi, lam).norm();
    }
    rep.converged = rep.grad_phi_norm <= cfg.inner_tol;
    out.phi = std::move(phi);
    return out;
}

} // namespace pdvi
