#pragma once

#include "pdvi/core.hpp"

#include <functional>
#include <random>
#include <vector>

namespace pdvi::testing {

// f_i(lambda) = c/2 ||lambda - a_i||^2, no local variables
class ShiftedSquares final : public Objective {
public:
    ShiftedSquares(std::vector<Vector> centres, double c = 1.0)
        : a_(std::move(centres)), c_(c), part_(BlockPartition::single(a_.front().size()))
    {}
    ShiftedSquares(std::vector<Vector> centres, double c, BlockPartition part)
        : a_(std::move(centres)), c_(c), part_(std::move(part))
    {}

    std::string name() const override { return "shifted-squares"; }
    Index num_samples() const override { return static_cast<Index>(a_.size()); }
    Index local_dim(Index) const override { return 0; }
    const BlockPartition& partition() const override { return part_; }

    std::optional<LocalPoint> solve_local_closed_form(Index i, const AugmentedTerms& al) const override
    {
        // c (lam - a) + mu + W (lam - lam0) = 0
        const Vector& a = a_[static_cast<std::size_t>(i)];
        const Vector lam = ((c_ * a - al.mu + al.weights.cwiseProduct(al.lambda0)).array() /
                            (c_ + al.weights.array()))
                               .matrix();
        return LocalPoint{Vector(), lam};
    }

    std::optional<LipschitzEstimate> lipschitz_estimates(const Vector&) const override
    {
        LipschitzEstimate e;
        e.blocks.assign(static_cast<std::size_t>(part_.num_blocks()), c_);
        return e;
    }

protected:
    double eval_impl(Index i, const Vector&, const Vector& lambda) const override
    {
        return 0.5 * c_ * (lambda - a_[static_cast<std::size_t>(i)]).squaredNorm();
    }
    Vector grad_phi_impl(Index, const Vector&, const Vector&) const override { return Vector(); }
    Vector grad_lambda_impl(Index i, const Vector&, const Vector& lambda) const override
    {
        return c_ * (lambda - a_[static_cast<std::size_t>(i)]);
    }

private:
    std::vector<Vector> a_;
    double c_;
    BlockPartition part_;
};

inline Vector vec(std::initializer_list<double> v)
{
    Vector out(static_cast<Index>(v.size()));
    Index k = 0;
    for (double x : v) out(k++) = x;
    return out;
}

inline Vector random_vector(Index n, std::mt19937_64& rng, double scale = 1.0)
{
    std::normal_distribution<double> g(0.0, scale);
    Vector v(n);
    for (Index k = 0; k < n; ++k) v(k) = g(rng);
    return v;
}

// central differences of a scalar function
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h = 1e-5)
{
    Vector g(x.size());
    Vector y = x;
    for (Index k = 0; k < x.size(); ++k) {
        y(k) = x(k) + h;
        const double fp = f(y);
        y(k) = x(k) - h;
        const double fm = f(y);
        y(k) = x(k);
        g(k) = (fp - fm) / (2.0 * h);
    }
    return g;
}

// ||a - b|| / max(||b||, floor)
inline double rel_err(const Vector& a, const Vector& b, double floor = 1e-6)
{
    return (a - b).norm() / std::max(b.norm(), floor);
}

} // namespace pdvi::testing
