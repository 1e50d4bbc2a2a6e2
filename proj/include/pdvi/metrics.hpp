#pragma once

// Evaluation quantities: global gradient norm, Gaussian / mixture Wasserstein
// distances and the adjusted Rand index.

#include "pdvi/core.hpp"
#include "pdvi/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <utility>
#include <vector>

namespace pdvi {

/// ||(1/n) sum_i grad_lambda f_i(phi_i, lambda0)|| with phi_i as currently held.
inline double global_grad_norm(const ConsensusProblem& problem, const SolverState& state, int threads = 1)
{
    const Index n = problem.n();
    std::vector<Vector> grads(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t i) {
        grads[i] = problem.objective().grad_lambda(static_cast<Index>(i), state.samples[i].phi, state.lambda0);
    });
    Vector sum = Vector::Zero(problem.global_dim());
    for (const auto& g : grads) sum += g;
    return (sum / static_cast<double>(n)).norm();
}

// ---------------------------------------------------------------------------
// Wasserstein distances
// ---------------------------------------------------------------------------

struct GaussianMixtureSummary {
    Vector weights;   // K
    Matrix means;     // K x d
    Matrix variances; // K x d, diagonal covariances

    Index components() const { return means.rows(); }
    Index dim() const { return means.cols(); }

    void validate() const
    {
        if (weights.size() != means.rows() || variances.rows() != means.rows() || variances.cols() != means.cols()) {
            throw DimensionError("mixture summary: inconsistent shapes");
        }
        if ((variances.array() <= 0.0).any()) throw DomainError("variances", "must be > 0");
        if (std::abs(weights.sum() - 1.0) > 1e-8) throw DomainError("weights", "must sum to 1");
    }
};

/// W2 between N(mean1, diag(var1)) and N(mean2, diag(var2)).
inline double w2_gaussian_diag(const Vector& mean1, const Vector& var1, const Vector& mean2, const Vector& var2)
{
    if (mean1.size() != mean2.size() || var1.size() != mean1.size() || var2.size() != mean2.size()) {
        throw DimensionError("w2_gaussian_diag: dimension mismatch");
    }
    if ((var1.array() <= 0.0).any()) throw DomainError("var1", "must be > 0");
    if ((var2.array() <= 0.0).any()) throw DomainError("var2", "must be > 0");
    const double sq = (mean1 - mean2).squaredNorm() + (var1.cwiseSqrt() - var2.cwiseSqrt()).squaredNorm();
    return std::sqrt(sq);
}

/// Minimum-cost perfect assignment on a square cost matrix (Hungarian method,
/// O(K^3)). Returns assignment[row] = column.
inline std::vector<Index> hungarian_assignment(const Matrix& cost)
{
    const Index n = cost.rows();
    if (cost.cols() != n) throw DimensionError("hungarian_assignment: cost matrix must be square");
    const double inf = std::numeric_limits<double>::infinity();
    // Potentials formulation with 1-based sentinel column 0.
    std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
    std::vector<Index> p(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
    for (Index i = 1; i <= n; ++i) {
        p[0] = i;
        Index j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
        std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const Index i0 = p[static_cast<std::size_t>(j0)];
            double delta = inf;
            Index j1 = 0;
            for (Index j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (Index j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            const Index j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<Index> assignment(static_cast<std::size_t>(n), -1);
    for (Index j = 1; j <= n; ++j) assignment[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
    return assignment;
}

/// Matched mixture W2: optimal one-to-one matching of components under the
/// squared per-component Gaussian W2 cost, reported as the square root of
/// the weight-averaged matched squared distances. For equal-weight mixtures
/// this is an upper bound on the true mixture W2.
inline double mixture_w2_matched(const GaussianMixtureSummary& a, const GaussianMixtureSummary& b)
{
    a.validate();
    b.validate();
    if (a.components() != b.components()) throw DimensionError("mixture_w2_matched: component counts differ");
    if (a.dim() != b.dim()) throw DimensionError("mixture_w2_matched: dimensions differ");
    const Index K = a.components();
    Matrix cost(K, K);
    for (Index r = 0; r < K; ++r) {
        for (Index c = 0; c < K; ++c) {
            const double w = w2_gaussian_diag(a.means.row(r).transpose(), a.variances.row(r).transpose(),
                                              b.means.row(c).transpose(), b.variances.row(c).transpose());
            cost(r, c) = w * w;
        }
    }
    const auto match = hungarian_assignment(cost);
    double total = 0.0;
    for (Index r = 0; r < K; ++r) {
        const Index c = match[static_cast<std::size_t>(r)];
        total += 0.5 * (a.weights(r) + b.weights(c)) * cost(r, c);
    }
    return std::sqrt(std::max(0.0, total));
}

inline constexpr const char* kMixtureW2Definition =
    "matched-component W2: sqrt(sum_k w_k * W2^2(a_k, b_pi(k))) over the optimal assignment pi "
    "(Hungarian), w_k the mean of the matched weights; diagonal Gaussian W2 in closed form";

// ---------------------------------------------------------------------------
// Adjusted Rand index
// ---------------------------------------------------------------------------

/// Standard (Hubert-Arabie) ARI from the contingency table. Two single-cluster
/// labelings score 1.
inline double adjusted_rand_index(const std::vector<int>& labels_a, const std::vector<int>& labels_b)
{
    if (labels_a.size() != labels_b.size()) throw DimensionError("adjusted_rand_index: length mismatch");
    if (labels_a.size() < 2) throw DimensionError("adjusted_rand_index: need at least two items");
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> ra, rb;
    for (std::size_t k = 0; k < labels_a.size(); ++k) {
        joint[{labels_a[k], labels_b[k]}] += 1.0;
        ra[labels_a[k]] += 1.0;
        rb[labels_b[k]] += 1.0;
    }
    auto comb2 = [](double x) { return 0.5 * x * (x - 1.0); };
    double index = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (const auto& [key, c] : joint) index += comb2(c);
    for (const auto& [key, c] : ra) sum_a += comb2(c);
    for (const auto& [key, c] : rb) sum_b += comb2(c);
    const double total = comb2(static_cast<double>(labels_a.size()));
    // (index - expected) / (max - expected) multiplied through by 2 * total,
    // so small tables stay in exact integer arithmetic until the last division
    const double num = 2.0 * (index * total - sum_a * sum_b);
    const double denom = (sum_a + sum_b) * total - 2.0 * sum_a * sum_b;
    if (denom == 0.0) return num == 0.0 ? 1.0 : 0.0;
    return num / denom;
}

} // namespace pdvi
