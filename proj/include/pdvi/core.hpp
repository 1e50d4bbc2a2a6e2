#pragma once

// Consensus-constrained finite-sum problems.
//
// A problem is  min (1/n) sum_i f_i(phi_i, lambda_i)  s.t.  lambda_i = lambda_0,
// where phi_i are per-sample (local) variables and lambda is shared (global).
// Every algorithm in this library talks to an objective only through the
// Objective interface declared here.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pdvi {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input outside an objective's domain (non-finite values, bad variances, ...).
class DomainError : public Error {
public:
    DomainError(std::string field, const std::string& what)
        : Error(field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void check_finite(const Vector& v, const char* field)
{
    if (!v.allFinite()) throw DomainError(field, "non-finite entry");
}

inline void check_size(const Vector& v, Index expected, const char* field)
{
    if (v.size() != expected) {
        throw DimensionError(std::string(field) + ": expected dimension " + std::to_string(expected) +
                             ", got " + std::to_string(v.size()));
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Block partition of the global variable
// ---------------------------------------------------------------------------

/// Contiguous, ordered, non-overlapping blocks covering the global vector.
class BlockPartition {
public:
    BlockPartition() = default;

    explicit BlockPartition(std::vector<Index> block_dims) : dims_(std::move(block_dims))
    {
        if (dims_.empty()) throw ConfigError("block partition needs at least one block");
        offsets_.reserve(dims_.size());
        Index off = 0;
        for (Index d : dims_) {
            if (d < 1) throw ConfigError("block dimensions must be >= 1");
            offsets_.push_back(off);
            off += d;
        }
        total_ = off;
    }

    static BlockPartition single(Index dim) { return BlockPartition({dim}); }

    Index num_blocks() const noexcept { return static_cast<Index>(dims_.size()); }
    Index total() const noexcept { return total_; }
    Index dim(Index j) const { return dims_.at(static_cast<std::size_t>(j)); }
    Index offset(Index j) const { return offsets_.at(static_cast<std::size_t>(j)); }
    const std::vector<Index>& dims() const noexcept { return dims_; }

    template <class V>
    auto block(V&& v, Index j) const
    {
        return std::forward<V>(v).segment(offset(j), dim(j));
    }

    /// One value per block -> one value per coordinate.
    Vector expand(const std::vector<double>& per_block) const
    {
        if (static_cast<Index>(per_block.size()) != num_blocks()) {
            throw DimensionError("expand: expected one value per block");
        }
        Vector out(total_);
        for (Index j = 0; j < num_blocks(); ++j) {
            out.segment(offset(j), dim(j)).setConstant(per_block[static_cast<std::size_t>(j)]);
        }
        return out;
    }

    bool operator==(const BlockPartition& o) const { return dims_ == o.dims_; }

private:
    std::vector<Index> dims_;
    std::vector<Index> offsets_;
    Index total_ = 0;
};

// ---------------------------------------------------------------------------
// Block preconditioner D_eta = blkdiag(I / eta_1, ..., I / eta_B)
// ---------------------------------------------------------------------------

class Preconditioner {
public:
    Preconditioner() = default;

    explicit Preconditioner(std::vector<double> etas) : etas_(std::move(etas))
    {
        if (etas_.empty()) throw ConfigError("preconditioner needs at least one step size");
        for (double e : etas_) {
            if (!(e > 0.0) || !std::isfinite(e)) throw ConfigError("block step sizes must be positive and finite");
        }
    }

    /// Single penalty parameter shared by all blocks (plain augmented Lagrangian).
    static Preconditioner uniform(double eta, const BlockPartition& partition)
    {
        return Preconditioner(std::vector<double>(static_cast<std::size_t>(partition.num_blocks()), eta));
    }

    const std::vector<double>& etas() const noexcept { return etas_; }
    Index num_blocks() const noexcept { return static_cast<Index>(etas_.size()); }

    bool is_uniform() const
    {
        for (double e : etas_) if (e != etas_.front()) return false;
        return true;
    }

    /// Diagonal of D_eta, i.e. 1/eta_j repeated over block j.
    Vector penalty_weights(const BlockPartition& partition) const
    {
        if (num_blocks() != partition.num_blocks()) {
            throw DimensionError("preconditioner has " + std::to_string(num_blocks()) + " blocks, partition has " +
                                 std::to_string(partition.num_blocks()));
        }
        std::vector<double> inv(etas_.size());
        for (std::size_t j = 0; j < etas_.size(); ++j) inv[j] = 1.0 / etas_[j];
        return partition.expand(inv);
    }

    /// Per-coordinate step sizes (eta_j over block j).
    Vector step_sizes(const BlockPartition& partition) const { return partition.expand(etas_); }

private:
    std::vector<double> etas_;
};

// ---------------------------------------------------------------------------
// Augmented-Lagrangian terms attached to one sample
// ---------------------------------------------------------------------------

/// <mu, lambda - lambda0> + 1/2 ||lambda - lambda0||^2_D, with D = diag(weights).
struct AugmentedTerms {
    const Vector& lambda0;
    const Vector& mu;
    const Vector& weights;

    double value(const Vector& lambda) const
    {
        const Vector diff = lambda - lambda0;
        return mu.dot(diff) + 0.5 * diff.dot(weights.cwiseProduct(diff));
    }

    Vector gradient(const Vector& lambda) const { return mu + weights.cwiseProduct(lambda - lambda0); }
};

struct LocalPoint {
    Vector phi;
    Vector lambda;
};

/// Block-wise Lipschitz bounds of a per-sample objective.
struct LipschitzEstimate {
    double phi = 0.0;
    std::vector<double> blocks;
};

// ---------------------------------------------------------------------------
// Objective oracle
// ---------------------------------------------------------------------------

/// Per-sample objective f_i(phi_i, lambda). Implementations must be pure:
/// identical inputs give identical outputs, and concurrent calls for
/// distinct samples are safe.
///
/// The public entry points validate indices, dimensions and finiteness and
/// then dispatch to the *_impl hooks.
class Objective {
public:
    virtual ~Objective() = default;

    virtual std::string name() const = 0;
    virtual Index num_samples() const = 0;
    virtual Index local_dim(Index i) const = 0;
    virtual const BlockPartition& partition() const = 0;

    Index global_dim() const { return partition().total(); }

    double eval(Index i, const Vector& phi, const Vector& lambda) const
    {
        validate(i, phi, lambda);
        return eval_impl(i, phi, lambda);
    }

    Vector grad_phi(Index i, const Vector& phi, const Vector& lambda) const
    {
        validate(i, phi, lambda);
        return grad_phi_impl(i, phi, lambda);
    }

    Vector grad_lambda(Index i, const Vector& phi, const Vector& lambda) const
    {
        validate(i, phi, lambda);
        return grad_lambda_impl(i, phi, lambda);
    }

    /// Exact minimiser of f_i + AL terms over both variables, when one exists in
    /// closed form (quadratics).
    virtual std::optional<LocalPoint> solve_local_closed_form(Index /*i*/, const AugmentedTerms& /*al*/) const
    {
        return std::nullopt;
    }

    /// Exact minimisation of the augmented subproblem over one block with the
    /// others held fixed. Block 0 is phi, block j >= 1 is global block j - 1.
    /// Returns false when the objective has no specialised block solver.
    virtual bool minimize_block(Index /*i*/, Index /*block*/, const AugmentedTerms& /*al*/, Vector& /*phi*/,
                                Vector& /*lambda*/) const
    {
        return false;
    }

    /// Upper bounds on the block-wise Lipschitz constants of grad f_i, taken
    /// at (or near) the reference global point. nullopt: no estimate.
    virtual std::optional<LipschitzEstimate> lipschitz_estimates(const Vector& /*lambda_ref*/) const
    {
        return std::nullopt;
    }

    virtual Vector initial_phi(Index i, const Vector& /*lambda0*/) const { return Vector::Zero(local_dim(i)); }

    /// Removes flat directions of phi that leave f_i unchanged (e.g. softmax gauge).
    virtual void normalize_phi(Index /*i*/, Vector& /*phi*/) const {}

protected:
    virtual double eval_impl(Index i, const Vector& phi, const Vector& lambda) const = 0;
    virtual Vector grad_phi_impl(Index i, const Vector& phi, const Vector& lambda) const = 0;
    virtual Vector grad_lambda_impl(Index i, const Vector& phi, const Vector& lambda) const = 0;

    void validate(Index i, const Vector& phi, const Vector& lambda) const
    {
        if (i < 0 || i >= num_samples()) {
            throw DimensionError("sample index " + std::to_string(i) + " out of range [0, " +
                                 std::to_string(num_samples()) + ")");
        }
        detail::check_size(phi, local_dim(i), "phi");
        detail::check_size(lambda, global_dim(), "lambda");
        detail::check_finite(phi, "phi");
        detail::check_finite(lambda, "lambda");
    }
};

// ---------------------------------------------------------------------------
// Problem and solver state
// ---------------------------------------------------------------------------

class ConsensusProblem {
public:
    explicit ConsensusProblem(std::shared_ptr<const Objective> objective) : objective_(std::move(objective))
    {
        if (!objective_) throw ConfigError("consensus problem needs an objective");
        if (objective_->num_samples() < 1) throw ConfigError("consensus problem needs n >= 1");
        if (objective_->global_dim() < 1) throw ConfigError("consensus problem needs a global dimension >= 1");
        for (Index i = 0; i < objective_->num_samples(); ++i) {
            if (objective_->local_dim(i) < 0) throw ConfigError("negative local dimension");
        }
    }

    const Objective& objective() const noexcept { return *objective_; }
    std::shared_ptr<const Objective> objective_ptr() const noexcept { return objective_; }
    Index n() const { return objective_->num_samples(); }
    Index global_dim() const { return objective_->global_dim(); }
    const BlockPartition& partition() const { return objective_->partition(); }

private:
    std::shared_ptr<const Objective> objective_;
};

struct SampleState {
    Vector phi;
    Vector lambda;
    Vector mu;
    long visits = 0;
};

struct SolverState {
    Vector lambda0;
    std::vector<SampleState> samples;
    Vector h;
    long t = 0;

    /// lambda_i = lambda0, mu_i = 0, h = 0.
    static SolverState initial(const ConsensusProblem& problem, const Vector& lambda0)
    {
        detail::check_size(lambda0, problem.global_dim(), "lambda0");
        detail::check_finite(lambda0, "lambda0");
        SolverState s;
        s.lambda0 = lambda0;
        s.h = Vector::Zero(lambda0.size());
        s.samples.resize(static_cast<std::size_t>(problem.n()));
        for (Index i = 0; i < problem.n(); ++i) {
            auto& smp = s.samples[static_cast<std::size_t>(i)];
            smp.phi = problem.objective().initial_phi(i, lambda0);
            smp.lambda = lambda0;
            smp.mu = Vector::Zero(lambda0.size());
        }
        return s;
    }
};

/// Throws DimensionError if any vector in the state disagrees with the problem.
inline void check_consistent(const ConsensusProblem& problem, const SolverState& state)
{
    const Index d = problem.global_dim();
    detail::check_size(state.lambda0, d, "lambda0");
    detail::check_size(state.h, d, "h");
    if (static_cast<Index>(state.samples.size()) != problem.n()) {
        throw DimensionError("state holds " + std::to_string(state.samples.size()) + " samples, problem has " +
                             std::to_string(problem.n()));
    }
    for (Index i = 0; i < problem.n(); ++i) {
        const auto& s = state.samples[static_cast<std::size_t>(i)];
        detail::check_size(s.phi, problem.objective().local_dim(i), "phi_i");
        detail::check_size(s.lambda, d, "lambda_i");
        detail::check_size(s.mu, d, "mu_i");
    }
}

/// (1/n) sum_i f_i(phi_i, lambda) with every sample evaluated at the common lambda.
inline double full_objective(const ConsensusProblem& problem, const SolverState& state, const Vector& lambda)
{
    check_consistent(problem, state);
    double sum = 0.0;
    for (Index i = 0; i < problem.n(); ++i) {
        sum += problem.objective().eval(i, state.samples[static_cast<std::size_t>(i)].phi, lambda);
    }
    return sum / static_cast<double>(problem.n());
}

inline double full_objective(const ConsensusProblem& problem, const SolverState& state)
{
    return full_objective(problem, state, state.lambda0);
}

/// max_i ||lambda_i - lambda_0||.
inline double consensus_residual(const SolverState& state)
{
    double r = 0.0;
    for (const auto& s : state.samples) r = std::max(r, (s.lambda - state.lambda0).norm());
    return r;
}

} // namespace pdvi
