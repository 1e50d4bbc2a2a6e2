#pragma once

// Strongly convex quadratic finite sum:  f_i(phi, lambda) = z^T Q_i z + v_i^T z,
// z = (phi, lambda). With v_i = 0 the optimum value is 0.

#include "pdvi/core.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace pdvi {

struct QuadraticInstance {
    Index d_phi = 0;
    Index d_lambda = 0;
    std::vector<Matrix> Q;
    std::vector<Vector> v;

    Index n() const { return static_cast<Index>(Q.size()); }
    Index dim() const { return d_phi + d_lambda; }
};

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration.
inline double power_iteration_max_eig(const Matrix& A, int max_iters = 1000, double tol = 1e-12)
{
    if (A.rows() == 0) return 0.0;
    Vector x = Vector::Ones(A.rows()) / std::sqrt(static_cast<double>(A.rows()));
    // A deterministic but generic start avoids orthogonality to the top eigenvector.
    for (Index k = 0; k < x.size(); ++k) x(k) += 1e-3 * static_cast<double>(k + 1);
    x.normalize();
    double lam = 0.0;
    for (int it = 0; it < max_iters; ++it) {
        Vector y = A * x;
        const double ny = y.norm();
        if (ny == 0.0) return 0.0;
        const double next = x.dot(y);
        x = y / ny;
        if (std::abs(next - lam) <= tol * std::max(1.0, std::abs(next))) return next;
        lam = next;
    }
    return lam;
}

class QuadraticObjective final : public Objective {
public:
    QuadraticObjective(QuadraticInstance inst, BlockPartition partition)
        : inst_(std::move(inst)), partition_(std::move(partition))
    {
        if (inst_.Q.empty()) throw ConfigError("quadratic instance has no samples");
        if (inst_.v.size() != inst_.Q.size()) throw DimensionError("quadratic instance: Q and v counts differ");
        if (partition_.total() != inst_.d_lambda) throw DimensionError("quadratic instance: partition does not cover lambda");
        for (std::size_t i = 0; i < inst_.Q.size(); ++i) {
            if (inst_.Q[i].rows() != inst_.dim() || inst_.Q[i].cols() != inst_.dim()) {
                throw DimensionError("quadratic instance: Q_" + std::to_string(i) + " has wrong shape");
            }
            detail::check_size(inst_.v[i], inst_.dim(), "v_i");
        }
    }

    explicit QuadraticObjective(QuadraticInstance inst)
        : QuadraticObjective(inst, BlockPartition::single(inst.d_lambda))
    {}

    std::string name() const override { return "quadratic"; }
    Index num_samples() const override { return inst_.n(); }
    Index local_dim(Index) const override { return inst_.d_phi; }
    const BlockPartition& partition() const override { return partition_; }
    const QuadraticInstance& instance() const noexcept { return inst_; }

    /// (value, gradient) at the stacked point z = (phi, lambda).
    std::pair<double, Vector> eval_grad(Index i, const Vector& z) const
    {
        detail::check_size(z, inst_.dim(), "z");
        const Matrix& Q = inst_.Q[static_cast<std::size_t>(i)];
        const Vector& v = inst_.v[static_cast<std::size_t>(i)];
        const Vector Qz = Q * z;
        return {z.dot(Qz) + v.dot(z), Qz + Q.transpose() * z + v};
    }

    std::optional<LocalPoint> solve_local_closed_form(Index i, const AugmentedTerms& al) const override
    {
        const Index dp = inst_.d_phi;
        const Matrix& Q = inst_.Q[static_cast<std::size_t>(i)];
        Matrix M = Q + Q.transpose();
        M.diagonal().tail(inst_.d_lambda) += al.weights;
        Vector rhs = -inst_.v[static_cast<std::size_t>(i)];
        rhs.tail(inst_.d_lambda) -= al.mu - al.weights.cwiseProduct(al.lambda0);
        const Vector z = M.ldlt().solve(rhs);
        return LocalPoint{z.head(dp), z.tail(inst_.d_lambda)};
    }

    bool minimize_block(Index i, Index block, const AugmentedTerms& al, Vector& phi, Vector& lambda) const override
    {
        const Index dp = inst_.d_phi;
        Index off, len;
        if (block == 0) {
            off = 0;
            len = dp;
        } else {
            off = dp + partition_.offset(block - 1);
            len = partition_.dim(block - 1);
        }
        if (len == 0) return true;
        const Matrix& Q = inst_.Q[static_cast<std::size_t>(i)];
        const Matrix S = Q + Q.transpose();
        Vector z(inst_.dim());
        z << phi, lambda;
        Matrix M = S.block(off, off, len, len);
        // Gradient of the augmented value with block b zeroed gives the constant term.
        Vector zb = z;
        zb.segment(off, len).setZero();
        Vector rhs = -(S.middleRows(off, len) * zb + inst_.v[static_cast<std::size_t>(i)].segment(off, len));
        if (block > 0) {
            const Index lo = off - dp;
            M.diagonal() += al.weights.segment(lo, len);
            rhs -= al.mu.segment(lo, len) - al.weights.segment(lo, len).cwiseProduct(al.lambda0.segment(lo, len));
        }
        const Vector xb = M.ldlt().solve(rhs);
        if (block == 0) {
            phi = xb;
        } else {
            lambda.segment(off - dp, len) = xb;
        }
        return true;
    }

    /// 2 * lambda_max of the diagonal block of Q_i for phi and each global
    /// block, maximised over samples. Exact for quadratics.
    std::optional<LipschitzEstimate> lipschitz_estimates(const Vector& /*lambda_ref*/) const override
    {
        LipschitzEstimate est;
        est.blocks.assign(static_cast<std::size_t>(partition_.num_blocks()), 0.0);
        for (const Matrix& Q : inst_.Q) {
            const Matrix S = Q + Q.transpose();
            if (inst_.d_phi > 0) {
                est.phi = std::max(est.phi, power_iteration_max_eig(S.topLeftCorner(inst_.d_phi, inst_.d_phi)));
            }
            for (Index j = 0; j < partition_.num_blocks(); ++j) {
                const Index off = inst_.d_phi + partition_.offset(j);
                const Index len = partition_.dim(j);
                auto& L = est.blocks[static_cast<std::size_t>(j)];
                L = std::max(L, power_iteration_max_eig(S.block(off, off, len, len)));
            }
        }
        return est;
    }

protected:
    double eval_impl(Index i, const Vector& phi, const Vector& lambda) const override
    {
        return eval_grad(i, stack(phi, lambda)).first;
    }

    Vector grad_phi_impl(Index i, const Vector& phi, const Vector& lambda) const override
    {
        return eval_grad(i, stack(phi, lambda)).second.head(inst_.d_phi);
    }

    Vector grad_lambda_impl(Index i, const Vector& phi, const Vector& lambda) const override
    {
        return eval_grad(i, stack(phi, lambda)).second.tail(inst_.d_lambda);
    }

private:
    Vector stack(const Vector& phi, const Vector& lambda) const
    {
        Vector z(inst_.dim());
        z << phi, lambda;
        return z;
    }

    QuadraticInstance inst_;
    BlockPartition partition_;
};

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

namespace detail {

/// Haar-distributed orthogonal matrix from the QR factorisation of a Gaussian matrix.
inline Matrix random_rotation(Index d, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix A(d, d);
    for (Index c = 0; c < d; ++c)
        for (Index r = 0; r < d; ++r) A(r, c) = normal(rng);
    Eigen::HouseholderQR<Matrix> qr(A);
    Matrix Qm = qr.householderQ();
    const Matrix R = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Index k = 0; k < d; ++k) {
        if (R(k, k) < 0) Qm.col(k) *= -1.0;
    }
    return Qm;
}

inline Vector log_spaced(double lo, double hi, Index count)
{
    Vector out(count);
    if (count == 1) {
        out(0) = lo;
        return out;
    }
    const double a = std::log(lo), b = std::log(hi);
    for (Index k = 0; k < count; ++k) {
        out(k) = std::exp(a + (b - a) * static_cast<double>(k) / static_cast<double>(count - 1));
    }
    out(0) = lo;
    out(count - 1) = hi;
    return out;
}

} // namespace detail

/// Q_i = R_i^T diag(eig) R_i with eigenvalues log-spaced over exactly [1, cond]
/// and R_i a seeded random rotation; v_i = 0.
inline QuadraticInstance generate_quadratic_instance(Index n, Index d_phi, Index d_lambda, double cond,
                                                     std::uint64_t seed)
{
    if (!(cond >= 1.0)) throw ConfigError("condition number must be >= 1");
    if (n < 1 || d_lambda < 1 || d_phi < 0) throw ConfigError("quadratic instance: bad dimensions");
    std::mt19937_64 rng(seed);
    QuadraticInstance inst;
    inst.d_phi = d_phi;
    inst.d_lambda = d_lambda;
    const Index d = d_phi + d_lambda;
    const Vector eig = detail::log_spaced(1.0, d == 1 ? 1.0 : cond, d);
    for (Index i = 0; i < n; ++i) {
        const Matrix R = detail::random_rotation(d, rng);
        Matrix Q = R.transpose() * eig.asDiagonal() * R;
        Q = 0.5 * (Q + Q.transpose()).eval();
        inst.Q.push_back(std::move(Q));
        inst.v.push_back(Vector::Zero(d));
    }
    return inst;
}

/// Quadratic whose global blocks live at different curvature scales.
/// phi is mixed (rotated) with global block 0; every other global block is
/// rotated on its own. Block j has eigenvalues log-spaced over
/// [scale_j, scale_j * cond_within].
inline QuadraticInstance generate_block_scaled_quadratic(Index n, Index d_phi, const std::vector<Index>& block_dims,
                                                         const std::vector<double>& block_scales,
                                                         double cond_within, std::uint64_t seed)
{
    if (block_dims.empty() || block_dims.size() != block_scales.size()) {
        throw ConfigError("block-scaled quadratic: need one scale per block");
    }
    std::mt19937_64 rng(seed);
    QuadraticInstance inst;
    inst.d_phi = d_phi;
    inst.d_lambda = 0;
    for (Index b : block_dims) inst.d_lambda += b;
    const Index d = inst.dim();
    for (Index i = 0; i < n; ++i) {
        Matrix Q = Matrix::Zero(d, d);
        Index off = 0;
        for (std::size_t j = 0; j < block_dims.size(); ++j) {
            const Index len = block_dims[j] + (j == 0 ? d_phi : 0);
            const double s = block_scales[j];
            const Vector eig = detail::log_spaced(s, s * cond_within, len);
            const Matrix R = detail::random_rotation(len, rng);
            Q.block(off, off, len, len) = R.transpose() * eig.asDiagonal() * R;
            off += len;
        }
        Q = 0.5 * (Q + Q.transpose()).eval();
        inst.Q.push_back(std::move(Q));
        inst.v.push_back(Vector::Zero(d));
    }
    return inst;
}

} // namespace pdvi
