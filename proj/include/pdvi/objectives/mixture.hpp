#pragma once

// Mean-field negative ELBO of a diagonal Gaussian mixture, optionally with a
// Potts coupling between neighbouring points.
//
// Model: c_k ~ N(xi, Sigma1), zeta_i ~ Cat(1/K) or Potts(E, r), x_i | zeta_i = k ~ N(c_k, Sigma0).
// Variational family: q(zeta_i) = Cat(softmax(alpha_i)), q(c_kj) = N(m_kj, exp(rho_kj)).
//
// Global variable layout: lambda = [m (K*d, cluster-major), rho (K*d)], two
// blocks. Consensus units are groups of points: one point per unit for the
// plain mixture, one spatial patch per unit for the Potts model. Unit u carries
// the logits of all its points and
//
//   f_u = (U/N) * sum_{i in u} [ sum_k phi_ik (log phi_ik + c_ik) + G/N + const_i ]
//         - (U/N) * sum_{(i,j) in E, i,j in u} r_ij <phi_i, phi_j>
//
// with c_ik = 1/2 sum_j (m_kj^2 + s_kj^2 - 2 x_ij m_kj) / sigma0_j^2 and
// G = 1/2 sum_kj [(m_kj^2 + s_kj^2 - 2 xi_j m_kj) / sigma1_j^2 - rho_kj], so that
// (1/U) sum_u f_u = (1/N) * (negative ELBO) up to log Z.

#include "pdvi/core.hpp"
#include "pdvi/kmeans.hpp"
#include "pdvi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pdvi {

inline constexpr double kRhoClip = 30.0;

struct GmmHyperParams {
    Vector xi;        // prior mean of cluster centres
    Vector sigma0_sq; // diag Sigma0, observation noise
    Vector sigma1_sq; // diag Sigma1, prior spread of centres
    Index K = 1;

    Index dim() const { return xi.size(); }

    void validate() const
    {
        if (K < 1) throw ConfigError("K must be >= 1");
        if (sigma0_sq.size() != xi.size() || sigma1_sq.size() != xi.size()) {
            throw DimensionError("hyperparameters: xi, sigma0_sq, sigma1_sq must share a dimension");
        }
        if (!(sigma0_sq.array() > 0.0).all()) throw DomainError("sigma0_sq", "variances must be > 0");
        if (!(sigma1_sq.array() > 0.0).all()) throw DomainError("sigma1_sq", "variances must be > 0");
        detail::check_finite(xi, "xi");
    }
};

// ---------------------------------------------------------------------------
// Softmax helpers
// ---------------------------------------------------------------------------

namespace detail {

inline Vector log_softmax(const Vector& a)
{
    const double mx = a.maxCoeff();
    const double lse = mx + std::log((a.array() - mx).exp().sum());
    return a.array() - lse;
}

inline Vector softmax(const Vector& a) { return log_softmax(a).array().exp(); }

/// J^T g for the softmax Jacobian J = diag(p) - p p^T.
inline Vector softmax_pullback(const Vector& p, const Vector& g) { return p.cwiseProduct((g.array() - p.dot(g)).matrix()); }

inline void center(Eigen::Ref<Vector> a) { a.array() -= a.mean(); }

inline double clipped_exp(double rho) { return std::exp(std::clamp(rho, -kRhoClip, kRhoClip)); }

} // namespace detail

// ---------------------------------------------------------------------------
// Spatial graph and Potts pieces
// ---------------------------------------------------------------------------

struct EdgeWeight {
    double value = 0.0;
    /// A zero-norm direction or feature vector forced one cosine term to 0.
    bool degenerate = false;
};

/// r_ij = |g_i . (l_j - l_i)| / (|g_i| |l_j - l_i|) + tau (x_i . x_j / (|x_i| |x_j|) + 1).
/// Zero-norm vectors make their cosine term 0 and set the degenerate flag.
inline EdgeWeight edge_weight(const Vector& g_i, const Vector& l_i, const Vector& l_j, const Vector& x_i,
                              const Vector& x_j, double tau)
{
    if (g_i.size() != l_i.size() || l_j.size() != l_i.size() || x_i.size() != x_j.size()) {
        throw DimensionError("edge_weight: dimension mismatch");
    }
    EdgeWeight w;
    const Vector disp = l_j - l_i;
    const double gn = g_i.norm(), dn = disp.norm();
    if (gn > 0.0 && dn > 0.0) {
        w.value += std::abs(g_i.dot(disp)) / (gn * dn);
    } else {
        w.degenerate = true;
    }
    const double xn = x_i.norm() * x_j.norm();
    if (xn > 0.0) {
        w.value += tau * (x_i.dot(x_j) / xn + 1.0);
    } else {
        w.degenerate = true;
    }
    return w;
}

struct SpatialGraph {
    Index num_nodes = 0;
    std::vector<std::pair<Index, Index>> edges; // i < j, each undirected edge once
    std::vector<double> weights;                // aligned with edges
    std::vector<Index> patches;                 // node -> patch id (empty: one patch)
    long degenerate_weights = 0;

    struct Neighbor {
        Index node;
        double weight;
    };

    std::vector<std::vector<Neighbor>> adjacency() const
    {
        std::vector<std::vector<Neighbor>> adj(static_cast<std::size_t>(num_nodes));
        for (std::size_t e = 0; e < edges.size(); ++e) {
            const auto [a, b] = edges[e];
            adj[static_cast<std::size_t>(a)].push_back({b, weights[e]});
            adj[static_cast<std::size_t>(b)].push_back({a, weights[e]});
        }
        return adj;
    }

    Index patch_of(Index i) const { return patches.empty() ? 0 : patches[static_cast<std::size_t>(i)]; }

    /// Same graph with every cross-patch edge removed.
    SpatialGraph within_patches() const
    {
        SpatialGraph g = *this;
        g.edges.clear();
        g.weights.clear();
        for (std::size_t e = 0; e < edges.size(); ++e) {
            if (patch_of(edges[e].first) == patch_of(edges[e].second)) {
                g.edges.push_back(edges[e]);
                g.weights.push_back(weights[e]);
            }
        }
        return g;
    }
};

struct PottsPieces {
    double value = 0.0;
    Vector grad_self;                 // w.r.t. alpha_i
    std::vector<Vector> grad_neighbors; // w.r.t. each alpha_l, aligned with the input
};

/// Per-sample share of the Potts energy, -1/2 sum_l r_il <phi_i, phi_l>, and its
/// gradients through the softmax. Summing over all nodes counts each edge once.
inline PottsPieces potts_penalty_eval_grad(const Vector& alpha_i, const std::vector<Vector>& neighbor_alphas,
                                           const std::vector<double>& neighbor_weights)
{
    if (neighbor_alphas.size() != neighbor_weights.size()) {
        throw DimensionError("potts_penalty_eval_grad: one weight per neighbour required");
    }
    PottsPieces out;
    const Vector p = detail::softmax(alpha_i);
    Vector dphi_i = Vector::Zero(p.size());
    out.grad_neighbors.reserve(neighbor_alphas.size());
    for (std::size_t l = 0; l < neighbor_alphas.size(); ++l) {
        if (neighbor_alphas[l].size() != alpha_i.size()) throw DimensionError("potts: neighbour logits have wrong size");
        const Vector q = detail::softmax(neighbor_alphas[l]);
        const double r = neighbor_weights[l];
        out.value -= 0.5 * r * p.dot(q);
        dphi_i -= 0.5 * r * q;
        out.grad_neighbors.push_back(detail::softmax_pullback(q, -0.5 * r * p));
    }
    out.grad_self = detail::softmax_pullback(p, dphi_i);
    return out;
}

// ---------------------------------------------------------------------------
// Single-point negative ELBO (no Potts term)
// ---------------------------------------------------------------------------

struct GmmPointEval {
    double value = 0.0;
    Vector grad_alpha; // K
    Matrix grad_m;     // K x d
    Matrix grad_rho;   // K x d
};

/// f_i for one observation x with n observations in total; global prior and
/// entropy terms carry weight 1/n.
inline GmmPointEval gmm_negelbo_eval_grad(const Vector& x, const Vector& alpha, const Matrix& m, const Matrix& rho,
                                          const GmmHyperParams& hyper, Index n, bool include_constants)
{
    const Index K = hyper.K, d = hyper.dim();
    if (alpha.size() != K || m.rows() != K || m.cols() != d || rho.rows() != K || rho.cols() != d || x.size() != d) {
        throw DimensionError("gmm_negelbo_eval_grad: K or d mismatch");
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    const Vector logp = detail::log_softmax(alpha);
    const Vector p = logp.array().exp();
    const Matrix s2 = rho.unaryExpr([](double r) { return detail::clipped_exp(r); });
    const Eigen::RowVectorXd inv0 = hyper.sigma0_sq.cwiseInverse().transpose();
    const Eigen::RowVectorXd inv1 = hyper.sigma1_sq.cwiseInverse().transpose();

    Vector c(K);
    for (Index k = 0; k < K; ++k) {
        c(k) = 0.5 * ((m.row(k).array().square() + s2.row(k).array() - 2.0 * x.transpose().array() * m.row(k).array()) *
                      inv0.array())
                         .sum();
    }
    double glob = 0.0;
    for (Index k = 0; k < K; ++k) {
        for (Index j = 0; j < d; ++j) {
            glob += (m(k, j) * m(k, j) + s2(k, j) - 2.0 * hyper.xi(j) * m(k, j)) / hyper.sigma1_sq(j) - rho(k, j);
        }
    }
    glob *= 0.5;

    GmmPointEval out;
    out.value = p.dot(logp + c) + inv_n * glob;
    if (include_constants) {
        const double two_pi = 2.0 * std::numbers::pi;
        out.value += 0.5 * ((two_pi * hyper.sigma0_sq.array()).log() + x.array().square() / hyper.sigma0_sq.array()).sum();
        out.value += 0.5 * inv_n * static_cast<double>(K) *
                     (hyper.sigma1_sq.array().log() + hyper.xi.array().square() / hyper.sigma1_sq.array() - 1.0).sum();
    }
    const Vector u = logp + c;
    out.grad_alpha = detail::softmax_pullback(p, u);
    out.grad_m.resize(K, d);
    out.grad_rho.resize(K, d);
    for (Index k = 0; k < K; ++k) {
        out.grad_m.row(k) = p(k) * (m.row(k) - x.transpose()).cwiseProduct(inv0) +
                            inv_n * (m.row(k) - hyper.xi.transpose()).cwiseProduct(inv1);
        out.grad_rho.row(k) = 0.5 * p(k) * s2.row(k).cwiseProduct(inv0) +
                              0.5 * inv_n * (s2.row(k).cwiseProduct(inv1).array() - 1.0).matrix();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Direct negative ELBO (term by term, no per-sample split)
// ---------------------------------------------------------------------------

/// Negative ELBO summed over all points, coded from the likelihood, prior,
/// Potts, q(zeta) and q(c) terms directly. log Z is omitted.
/// phi: N x K probabilities, m and s2: K x d.
inline double negative_elbo_direct(const Matrix& X, const GmmHyperParams& hyper, const Matrix& phi, const Matrix& m,
                                   const Matrix& s2, const SpatialGraph* graph, bool include_constants)
{
    const Index N = X.rows(), K = hyper.K, d = hyper.dim();
    const double two_pi = 2.0 * std::numbers::pi;
    double likelihood = 0.0, prior = 0.0, potts = 0.0, ent_zeta = 0.0, ent_c = 0.0;
    for (Index i = 0; i < N; ++i) {
        for (Index k = 0; k < K; ++k) {
            double s = 0.0;
            for (Index j = 0; j < d; ++j) {
                const double diff = X(i, j) - m(k, j);
                const double quad = (diff * diff + s2(k, j)) / hyper.sigma0_sq(j);
                s += include_constants ? std::log(two_pi * hyper.sigma0_sq(j)) + quad
                                       : quad - X(i, j) * X(i, j) / hyper.sigma0_sq(j);
            }
            likelihood += phi(i, k) * 0.5 * s;
            if (phi(i, k) > 0.0) ent_zeta += phi(i, k) * std::log(phi(i, k));
        }
    }
    for (Index k = 0; k < K; ++k) {
        for (Index j = 0; j < d; ++j) {
            const double diff = m(k, j) - hyper.xi(j);
            prior += 0.5 * ((include_constants ? std::log(two_pi * hyper.sigma1_sq(j)) : 0.0) +
                            (diff * diff + s2(k, j)) / hyper.sigma1_sq(j) -
                            (include_constants ? 0.0 : hyper.xi(j) * hyper.xi(j) / hyper.sigma1_sq(j)));
            ent_c += -0.5 * (include_constants ? std::log(two_pi * s2(k, j)) + 1.0 : std::log(s2(k, j)));
        }
    }
    if (graph) {
        for (std::size_t e = 0; e < graph->edges.size(); ++e) {
            const auto [a, b] = graph->edges[e];
            potts -= graph->weights[e] * phi.row(a).dot(phi.row(b));
        }
    }
    return likelihood + prior + potts + ent_zeta + ent_c;
}

// ---------------------------------------------------------------------------
// Conjugate natural-gradient support (used by the SVI baselines)
// ---------------------------------------------------------------------------

/// Natural parameters of the diagonal Gaussian factors q(c_kj).
struct GaussianNatural {
    Vector precision;      // 1 / s^2, per (k, j)
    Vector precision_mean; // m / s^2
};

/// Objectives whose global factor is conjugate given the local factors.
class ConjugateGlobal {
public:
    virtual ~ConjugateGlobal() = default;
    virtual GaussianNatural natural_from_lambda(const Vector& lambda) const = 0;
    virtual Vector lambda_from_natural(const GaussianNatural& nat) const = 0;
    /// Optimal global natural parameters if the given units (with their
    /// current phi) were replicated to the full data size.
    virtual GaussianNatural natural_target(const std::vector<Index>& units, const std::vector<Vector>& phis) const = 0;
};

// ---------------------------------------------------------------------------
// The objective
// ---------------------------------------------------------------------------

struct MixtureOptions {
    bool include_constants = false;
};

class MixtureElboObjective final : public Objective, public ConjugateGlobal {
public:
    using Options = MixtureOptions;

    /// units: partition of the points into consensus units (empty: one point per unit).
    /// graph: Potts edges; edges crossing units are ignored.
    MixtureElboObjective(Matrix X, GmmHyperParams hyper, std::vector<std::vector<Index>> units = {},
                         std::optional<SpatialGraph> graph = std::nullopt, Options opts = Options())
        : X_(std::move(X)), hyper_(std::move(hyper)), units_(std::move(units)), opts_(opts)
    {
        hyper_.validate();
        if (X_.rows() < 1) throw ConfigError("mixture objective needs at least one point");
        if (X_.cols() != hyper_.dim()) throw DimensionError("data dimension does not match hyperparameters");
        if (!X_.allFinite()) throw DomainError("X", "non-finite entry");
        const Index N = X_.rows();
        if (units_.empty()) {
            units_.resize(static_cast<std::size_t>(N));
            for (Index i = 0; i < N; ++i) units_[static_cast<std::size_t>(i)] = {i};
        }
        unit_of_.assign(static_cast<std::size_t>(N), -1);
        slot_of_.assign(static_cast<std::size_t>(N), -1);
        for (std::size_t u = 0; u < units_.size(); ++u) {
            if (units_[u].empty()) throw ConfigError("mixture objective: empty unit");
            for (std::size_t s = 0; s < units_[u].size(); ++s) {
                const Index i = units_[u][s];
                if (i < 0 || i >= N) throw ConfigError("mixture objective: unit index out of range");
                if (unit_of_[static_cast<std::size_t>(i)] != -1) throw ConfigError("mixture objective: point in two units");
                unit_of_[static_cast<std::size_t>(i)] = static_cast<Index>(u);
                slot_of_[static_cast<std::size_t>(i)] = static_cast<Index>(s);
            }
        }
        for (Index i = 0; i < N; ++i) {
            if (unit_of_[static_cast<std::size_t>(i)] < 0) throw ConfigError("mixture objective: point not in any unit");
        }
        scale_ = static_cast<double>(units_.size()) / static_cast<double>(N);

        neighbors_.assign(static_cast<std::size_t>(N), {});
        if (graph) {
            if (graph->num_nodes != N) throw DimensionError("spatial graph size does not match data");
            for (std::size_t e = 0; e < graph->edges.size(); ++e) {
                const auto [a, b] = graph->edges[e];
                if (unit_of_[static_cast<std::size_t>(a)] != unit_of_[static_cast<std::size_t>(b)]) {
                    ++dropped_edges_;
                    continue;
                }
                neighbors_[static_cast<std::size_t>(a)].push_back({slot_of_[static_cast<std::size_t>(b)], graph->weights[e]});
                neighbors_[static_cast<std::size_t>(b)].push_back({slot_of_[static_cast<std::size_t>(a)], graph->weights[e]});
                ++kept_edges_;
            }
        }

        const Index Kd = hyper_.K * hyper_.dim();
        partition_ = BlockPartition({Kd, Kd});
        const double two_pi = 2.0 * std::numbers::pi;
        point_const_.resize(N);
        const double global_const = 0.5 * static_cast<double>(hyper_.K) *
                                    (hyper_.sigma1_sq.array().log() +
                                     hyper_.xi.array().square() / hyper_.sigma1_sq.array() - 1.0)
                                        .sum();
        for (Index i = 0; i < N; ++i) {
            point_const_(i) = 0.5 * ((two_pi * hyper_.sigma0_sq.array()).log() +
                                     X_.row(i).transpose().array().square() / hyper_.sigma0_sq.array())
                                        .sum() +
                              global_const / static_cast<double>(N);
        }
    }

    /// Logits of the point in `slot` of a unit.
    Vector logits(const Vector& phi, Index slot) const { return phi.segment(slot * hyper_.K, hyper_.K); }

    std::string name() const override { return kept_edges_ > 0 || dropped_edges_ > 0 ? "spatial" : "gmm"; }
    Index num_samples() const override { return static_cast<Index>(units_.size()); }
    Index local_dim(Index u) const override
    {
        return static_cast<Index>(units_.at(static_cast<std::size_t>(u)).size()) * hyper_.K;
    }
    const BlockPartition& partition() const override { return partition_; }

    const Matrix& data() const noexcept { return X_; }
    const GmmHyperParams& hyper() const noexcept { return hyper_; }
    const std::vector<std::vector<Index>>& units() const noexcept { return units_; }
    Index num_points() const { return X_.rows(); }
    long kept_edges() const noexcept { return kept_edges_; }
    long dropped_edges() const noexcept { return dropped_edges_; }
    bool include_constants() const noexcept { return opts_.include_constants; }

    // -- layout helpers ------------------------------------------------------

    Matrix means(const Vector& lambda) const
    {
        return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            lambda.data(), hyper_.K, hyper_.dim());
    }

    Matrix log_variances(const Vector& lambda) const
    {
        return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            lambda.data() + hyper_.K * hyper_.dim(), hyper_.K, hyper_.dim());
    }

    Vector pack(const Matrix& m, const Matrix& rho) const
    {
        const Index Kd = hyper_.K * hyper_.dim();
        Vector lambda(2 * Kd);
        for (Index k = 0; k < hyper_.K; ++k) {
            for (Index j = 0; j < hyper_.dim(); ++j) {
                lambda(k * hyper_.dim() + j) = m(k, j);
                lambda(Kd + k * hyper_.dim() + j) = rho(k, j);
            }
        }
        return lambda;
    }

    /// Global point from hard labels: the exact global coordinate update with
    /// one-hot assignments.
    Vector lambda_from_labels(const std::vector<int>& labels) const
    {
        if (static_cast<Index>(labels.size()) != num_points()) throw DimensionError("lambda_from_labels: one label per point");
        std::vector<Vector> phis;
        std::vector<Index> all(units_.size());
        for (std::size_t u = 0; u < units_.size(); ++u) {
            all[u] = static_cast<Index>(u);
            Vector a = Vector::Constant(local_dim(static_cast<Index>(u)), -30.0);
            for (std::size_t s = 0; s < units_[u].size(); ++s) {
                const int k = labels[static_cast<std::size_t>(units_[u][s])];
                if (k < 0 || k >= hyper_.K) throw DomainError("labels", "label out of range");
                a(static_cast<Index>(s) * hyper_.K + k) = 30.0;
            }
            phis.push_back(std::move(a));
        }
        return lambda_from_natural(natural_target(all, phis));
    }

    /// Probabilities of every point, N x K.
    Matrix point_probabilities(const std::vector<Vector>& phis) const
    {
        Matrix P(num_points(), hyper_.K);
        for (std::size_t u = 0; u < units_.size(); ++u) {
            for (std::size_t s = 0; s < units_[u].size(); ++s) {
                P.row(units_[u][s]) = detail::softmax(logits(phis[u], static_cast<Index>(s))).transpose();
            }
        }
        return P;
    }

    std::vector<int> point_labels(const std::vector<Vector>& phis) const
    {
        const Matrix P = point_probabilities(phis);
        std::vector<int> labels(static_cast<std::size_t>(num_points()));
        for (Index i = 0; i < P.rows(); ++i) {
            Index k;
            P.row(i).maxCoeff(&k);
            labels[static_cast<std::size_t>(i)] = static_cast<int>(k);
        }
        return labels;
    }

    /// Variational mixture: equal weights, centres m_k and component variances
    /// sigma0^2 + s_k^2 (the posterior predictive of each component).
    GaussianMixtureSummary mixture_summary(const Vector& lambda) const
    {
        GaussianMixtureSummary s;
        s.weights = Vector::Constant(hyper_.K, 1.0 / static_cast<double>(hyper_.K));
        s.means = means(lambda);
        const Matrix rho = log_variances(lambda);
        s.variances = rho.unaryExpr([](double r) { return detail::clipped_exp(r); }).rowwise() + hyper_.sigma0_sq.transpose();
        return s;
    }

    /// True when some rho coordinate sits outside the exp clip range.
    bool rho_clipped(const Vector& lambda) const
    {
        return (log_variances(lambda).array().abs() > kRhoClip).any();
    }

    // -- Objective hooks -----------------------------------------------------

    Vector initial_phi(Index u, const Vector& lambda0) const override
    {
        const Matrix m = means(lambda0);
        const Matrix s2 = log_variances(lambda0).unaryExpr([](double r) { return detail::clipped_exp(r); });
        Vector a(local_dim(u));
        const auto& pts = units_[static_cast<std::size_t>(u)];
        for (std::size_t s = 0; s < pts.size(); ++s) {
            auto seg = a.segment(static_cast<Index>(s) * hyper_.K, hyper_.K);
            seg = -costs(pts[s], m, s2);
            detail::center(seg);
        }
        return a;
    }

    void normalize_phi(Index u, Vector& phi) const override
    {
        const Index P = static_cast<Index>(units_[static_cast<std::size_t>(u)].size());
        for (Index s = 0; s < P; ++s) detail::center(phi.segment(s * hyper_.K, hyper_.K));
    }

    bool minimize_block(Index u, Index block, const AugmentedTerms& al, Vector& phi, Vector& lambda) const override
    {
        const auto& pts = units_[static_cast<std::size_t>(u)];
        const Index K = hyper_.K, d = hyper_.dim(), Kd = K * d;
        const Matrix m = means(lambda);
        const Matrix rho = log_variances(lambda);
        const double N = static_cast<double>(num_points());
        const double cnt = static_cast<double>(pts.size());

        if (block == 0) {
            // Gauss-Seidel over the points of the unit; each step is the exact
            // minimiser over that point's simplex given its neighbours.
            const Matrix s2 = rho.unaryExpr([](double r) { return detail::clipped_exp(r); });
            for (std::size_t s = 0; s < pts.size(); ++s) {
                Vector a = -costs(pts[s], m, s2);
                for (const auto& nb : neighbors_[static_cast<std::size_t>(pts[s])]) {
                    a += nb.weight * detail::softmax(logits(phi, nb.slot));
                }
                detail::center(a);
                phi.segment(static_cast<Index>(s) * K, K) = a;
            }
            return true;
        }

        // Soft-assignment statistics of the unit.
        Vector mass = Vector::Zero(K);
        Matrix weighted_x = Matrix::Zero(K, d);
        for (std::size_t s = 0; s < pts.size(); ++s) {
            const Vector p = detail::softmax(logits(phi, static_cast<Index>(s)));
            mass += p;
            weighted_x += p * X_.row(pts[s]);
        }
        const double w = scale_;

        if (block == 1) {
            for (Index k = 0; k < K; ++k) {
                for (Index j = 0; j < d; ++j) {
                    const Index c = k * d + j;
                    const double inv0 = 1.0 / hyper_.sigma0_sq(j), inv1 = 1.0 / hyper_.sigma1_sq(j);
                    const double A = w * (mass(k) * inv0 + cnt * inv1 / N) + al.weights(c);
                    const double b = w * (weighted_x(k, j) * inv0 + cnt * hyper_.xi(j) * inv1 / N) - al.mu(c) +
                                     al.weights(c) * al.lambda0(c);
                    lambda(c) = b / A;
                }
            }
            return true;
        }

        if (block == 2) {
            for (Index k = 0; k < K; ++k) {
                for (Index j = 0; j < d; ++j) {
                    const Index c = Kd + k * d + j;
                    const double A = w * (0.5 * mass(k) / hyper_.sigma0_sq(j) + 0.5 * cnt / (N * hyper_.sigma1_sq(j)));
                    const double B = w * 0.5 * cnt / N;
                    lambda(c) = solve_rho(A, B - al.mu(c) + al.weights(c) * al.lambda0(c), al.weights(c), lambda(c));
                }
            }
            return true;
        }
        return false;
    }

    std::optional<LipschitzEstimate> lipschitz_estimates(const Vector& lambda_ref) const override
    {
        double unit_mass = 0.0;
        for (const auto& u : units_) unit_mass = std::max(unit_mass, scale_ * static_cast<double>(u.size()));
        const double N = static_cast<double>(num_points());
        const double rho_max = std::min(log_variances(lambda_ref).maxCoeff(), kRhoClip);
        double Lm = 0.0, Lr = 0.0;
        for (Index j = 0; j < hyper_.dim(); ++j) {
            Lm = std::max(Lm, 1.0 / hyper_.sigma0_sq(j) + 1.0 / (N * hyper_.sigma1_sq(j)));
            Lr = std::max(Lr, 0.5 / hyper_.sigma0_sq(j) + 0.5 / (N * hyper_.sigma1_sq(j)));
        }
        LipschitzEstimate est;
        est.blocks = {unit_mass * Lm, unit_mass * Lr * std::exp(rho_max)};
        // Curvature scale of the entropy in natural coordinates (diag(1/phi) >= 1).
        est.phi = unit_mass;
        return est;
    }

    // -- ConjugateGlobal -----------------------------------------------------

    GaussianNatural natural_from_lambda(const Vector& lambda) const override
    {
        const Index Kd = hyper_.K * hyper_.dim();
        GaussianNatural nat;
        nat.precision = lambda.tail(Kd).unaryExpr([](double r) { return 1.0 / detail::clipped_exp(r); });
        nat.precision_mean = nat.precision.cwiseProduct(lambda.head(Kd));
        return nat;
    }

    Vector lambda_from_natural(const GaussianNatural& nat) const override
    {
        const Index Kd = hyper_.K * hyper_.dim();
        if (nat.precision.size() != Kd || nat.precision_mean.size() != Kd) {
            throw DimensionError("natural parameters have the wrong size");
        }
        if (!(nat.precision.array() > 0.0).all()) throw DomainError("precision", "must be > 0");
        Vector lambda(2 * Kd);
        lambda.head(Kd) = nat.precision_mean.cwiseQuotient(nat.precision);
        lambda.tail(Kd) = -nat.precision.array().log();
        return lambda;
    }

    GaussianNatural natural_target(const std::vector<Index>& units, const std::vector<Vector>& phis) const override
    {
        if (units.size() != phis.size()) throw DimensionError("natural_target: one phi per unit");
        const Index K = hyper_.K, d = hyper_.dim();
        Vector mass = Vector::Zero(K);
        Matrix weighted_x = Matrix::Zero(K, d);
        double points = 0.0;
        for (std::size_t b = 0; b < units.size(); ++b) {
            const auto& pts = units_.at(static_cast<std::size_t>(units[b]));
            for (std::size_t s = 0; s < pts.size(); ++s) {
                const Vector p = detail::softmax(logits(phis[b], static_cast<Index>(s)));
                mass += p;
                weighted_x += p * X_.row(pts[s]);
            }
            points += static_cast<double>(pts.size());
        }
        const double rescale = static_cast<double>(num_points()) / points;
        GaussianNatural nat;
        nat.precision.resize(K * d);
        nat.precision_mean.resize(K * d);
        for (Index k = 0; k < K; ++k) {
            for (Index j = 0; j < d; ++j) {
                const double inv0 = 1.0 / hyper_.sigma0_sq(j), inv1 = 1.0 / hyper_.sigma1_sq(j);
                nat.precision(k * d + j) = inv1 + rescale * mass(k) * inv0;
                nat.precision_mean(k * d + j) = hyper_.xi(j) * inv1 + rescale * weighted_x(k, j) * inv0;
            }
        }
        return nat;
    }

protected:
    double eval_impl(Index u, const Vector& phi, const Vector& lambda) const override
    {
        const auto& pts = units_[static_cast<std::size_t>(u)];
        const Matrix m = means(lambda);
        const Matrix rho = log_variances(lambda);
        const Matrix s2 = rho.unaryExpr([](double r) { return detail::clipped_exp(r); });
        const double N = static_cast<double>(num_points());
        const double glob = global_term(m, rho, s2);
        double total = 0.0;
        for (std::size_t s = 0; s < pts.size(); ++s) {
            const Vector logp = detail::log_softmax(logits(phi, static_cast<Index>(s)));
            const Vector p = logp.array().exp();
            total += p.dot(logp + costs(pts[s], m, s2)) + glob / N;
            if (opts_.include_constants) total += point_const_(pts[s]);
            for (const auto& nb : neighbors_[static_cast<std::size_t>(pts[s])]) {
                // Each edge is seen from both ends.
                total -= 0.5 * nb.weight * p.dot(detail::softmax(logits(phi, nb.slot)));
            }
        }
        return scale_ * total;
    }

    Vector grad_phi_impl(Index u, const Vector& phi, const Vector& lambda) const override
    {
        const auto& pts = units_[static_cast<std::size_t>(u)];
        const Index K = hyper_.K;
        const Matrix m = means(lambda);
        const Matrix s2 = log_variances(lambda).unaryExpr([](double r) { return detail::clipped_exp(r); });
        Vector g(phi.size());
        for (std::size_t s = 0; s < pts.size(); ++s) {
            const Vector logp = detail::log_softmax(logits(phi, static_cast<Index>(s)));
            const Vector p = logp.array().exp();
            Vector dphi = logp + costs(pts[s], m, s2);
            for (const auto& nb : neighbors_[static_cast<std::size_t>(pts[s])]) {
                dphi -= nb.weight * detail::softmax(logits(phi, nb.slot));
            }
            g.segment(static_cast<Index>(s) * K, K) = scale_ * detail::softmax_pullback(p, dphi);
        }
        return g;
    }

    Vector grad_lambda_impl(Index u, const Vector& phi, const Vector& lambda) const override
    {
        const auto& pts = units_[static_cast<std::size_t>(u)];
        const Index K = hyper_.K, d = hyper_.dim(), Kd = K * d;
        const Matrix m = means(lambda);
        const Matrix s2 = log_variances(lambda).unaryExpr([](double r) { return detail::clipped_exp(r); });
        const double N = static_cast<double>(num_points());
        const double cnt = static_cast<double>(pts.size());
        Vector mass = Vector::Zero(K);
        Matrix weighted_x = Matrix::Zero(K, d);
        for (std::size_t s = 0; s < pts.size(); ++s) {
            const Vector p = detail::softmax(logits(phi, static_cast<Index>(s)));
            mass += p;
            weighted_x += p * X_.row(pts[s]);
        }
        Vector g(2 * Kd);
        for (Index k = 0; k < K; ++k) {
            for (Index j = 0; j < d; ++j) {
                const double inv0 = 1.0 / hyper_.sigma0_sq(j), inv1 = 1.0 / hyper_.sigma1_sq(j);
                g(k * d + j) = scale_ * ((mass(k) * m(k, j) - weighted_x(k, j)) * inv0 +
                                         cnt * (m(k, j) - hyper_.xi(j)) * inv1 / N);
                g(Kd + k * d + j) =
                    scale_ * (0.5 * mass(k) * s2(k, j) * inv0 + 0.5 * cnt * (s2(k, j) * inv1 - 1.0) / N);
            }
        }
        return g;
    }

private:
    struct Slot {
        Index slot;
        double weight;
    };


    Vector costs(Index point, const Matrix& m, const Matrix& s2) const
    {
        Vector c(hyper_.K);
        for (Index k = 0; k < hyper_.K; ++k) {
            double acc = 0.0;
            for (Index j = 0; j < hyper_.dim(); ++j) {
                acc += (m(k, j) * m(k, j) + s2(k, j) - 2.0 * X_(point, j) * m(k, j)) / hyper_.sigma0_sq(j);
            }
            c(k) = 0.5 * acc;
        }
        return c;
    }

    double global_term(const Matrix& m, const Matrix& rho, const Matrix& s2) const
    {
        double acc = 0.0;
        for (Index k = 0; k < hyper_.K; ++k) {
            for (Index j = 0; j < hyper_.dim(); ++j) {
                acc += (m(k, j) * m(k, j) + s2(k, j) - 2.0 * hyper_.xi(j) * m(k, j)) / hyper_.sigma1_sq(j) - rho(k, j);
            }
        }
        return 0.5 * acc;
    }

    /// Root of A e^r + W r - c = 0 (A >= 0, W >= 0), i.e. the minimiser of the
    /// strictly convex A e^r - c r + W r^2 / 2. Safeguarded Newton.
    static double solve_rho(double A, double c, double W, double start)
    {
        auto h = [&](double r) { return A * std::exp(r) + W * r - c; };
        double lo = -2.0 * kRhoClip, hi = 2.0 * kRhoClip;
        if (h(lo) >= 0.0) return lo;
        if (h(hi) <= 0.0) return hi;
        double r = std::clamp(start, lo, hi);
        for (int it = 0; it < 200; ++it) {
            const double val = h(r);
            if (val > 0.0) hi = r; else lo = r;
            const double slope = A * std::exp(r) + W;
            double next = slope > 0.0 ? r - val / slope : 0.5 * (lo + hi);
            if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
            if (std::abs(next - r) <= 1e-15 * std::max(1.0, std::abs(r))) return next;
            r = next;
            if (hi - lo <= 1e-15 * std::max(1.0, std::abs(r))) break;
        }
        return r;
    }

    Matrix X_;
    GmmHyperParams hyper_;
    std::vector<std::vector<Index>> units_;
    Options opts_;
    std::vector<Index> unit_of_;
    std::vector<Index> slot_of_;
    std::vector<std::vector<Slot>> neighbors_;
    long kept_edges_ = 0;
    long dropped_edges_ = 0;
    double scale_ = 1.0;
    BlockPartition partition_;
    Vector point_const_;
};

// ---------------------------------------------------------------------------
// Empirical-Bayes hyperparameters
// ---------------------------------------------------------------------------

struct GmmHyperFit {
    GmmHyperParams hyper;
    std::vector<int> labels;
    Matrix centroids;
};

/// xi: data mean; Sigma0: pooled within-cluster variance of a seeded k-means;
/// Sigma1: variance of the cluster means, floored at 1e-6 * data variance.
inline GmmHyperFit gmm_hyper_from_data(const Matrix& X, Index K, std::uint64_t seed)
{
    const Index n = X.rows(), d = X.cols();
    if (n < K) throw ConfigError("gmm_hyper_from_data: need at least K points");
    KMeansResult km = kmeans(X, K, seed, 50);
    GmmHyperFit fit;
    fit.hyper.K = K;
    fit.hyper.xi = X.colwise().mean().transpose();
    const Vector data_var = (X.rowwise() - fit.hyper.xi.transpose()).array().square().colwise().mean().transpose();
    Vector within = Vector::Zero(d);
    for (Index i = 0; i < n; ++i) {
        within += (X.row(i) - km.centroids.row(km.labels[static_cast<std::size_t>(i)])).array().square().matrix().transpose();
    }
    within /= static_cast<double>(n);
    const Vector floor = (1e-6 * data_var).cwiseMax(1e-12);
    fit.hyper.sigma0_sq = within.cwiseMax(floor);
    const Vector cmean = km.centroids.colwise().mean().transpose();
    Vector between = Vector::Zero(d);
    if (K > 1) {
        between = (km.centroids.rowwise() - cmean.transpose()).array().square().colwise().sum().transpose() /
                  static_cast<double>(K);
    }
    fit.hyper.sigma1_sq = between.cwiseMax(floor);
    fit.labels = std::move(km.labels);
    fit.centroids = std::move(km.centroids);
    return fit;
}

} // namespace pdvi
