#include "helpers.hpp"

#include "pdvi/data.hpp"
#include "pdvi/kmeans.hpp"
#include "pdvi/metrics.hpp"
#include "pdvi/objectives/mixture.hpp"
#include "pdvi/objectives/quadratic.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace pdvi;
using pdvi::testing::fd_gradient;
using pdvi::testing::random_vector;
using pdvi::testing::rel_err;
using pdvi::testing::vec;

namespace {

GmmHyperParams hyper(Index K, Index d, double s0 = 1.0, double s1 = 1.0, double xi = 0.0)
{
    GmmHyperParams h;
    h.K = K;
    h.xi = Vector::Constant(d, xi);
    h.sigma0_sq = Vector::Constant(d, s0);
    h.sigma1_sq = Vector::Constant(d, s1);
    return h;
}

// random diag hyperparameters so every coordinate differs
GmmHyperParams random_hyper(Index K, Index d, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.5, 2.0);
    GmmHyperParams h;
    h.K = K;
    h.xi = random_vector(d, rng);
    h.sigma0_sq.resize(d);
    h.sigma1_sq.resize(d);
    for (Index j = 0; j < d; ++j) {
        h.sigma0_sq(j) = u(rng);
        h.sigma1_sq(j) = 2.0 * u(rng);
    }
    return h;
}

Vector random_lambda(const MixtureElboObjective& obj, std::mt19937_64& rng)
{
    const Index K = obj.hyper().K, d = obj.hyper().dim();
    Matrix m(K, d), rho(K, d);
    std::normal_distribution<double> g(0.0, 1.0);
    for (Index k = 0; k < K; ++k)
        for (Index j = 0; j < d; ++j) {
            m(k, j) = 2.0 * g(rng);
            rho(k, j) = 0.5 * g(rng) - 0.5;
        }
    return obj.pack(m, rho);
}

struct SpatialFixture {
    Dataset data;
    SpatialGraph graph;
    std::vector<Index> patches;
};

SpatialFixture spatial_fixture(Index n_side, Index K, Index d, std::uint64_t seed, Index target_patches)
{
    SpatialFixture f;
    f.data = synth_spatial(n_side, K, d, seed, 3.0);
    f.graph = build_knn_graph(*f.data.coords, 4, nullptr, f.data.X, 0.5);
    f.patches = partition_patches(*f.data.coords, target_patches);
    f.graph.patches = f.patches;
    return f;
}

void check_objective_gradients(const Objective& obj, std::mt19937_64& rng, int points, const std::function<Vector()>& lam_gen)
{
    for (int t = 0; t < points; ++t) {
        const Index i = std::uniform_int_distribution<Index>(0, obj.num_samples() - 1)(rng);
        const Vector phi = random_vector(obj.local_dim(i), rng, 1.5);
        const Vector lam = lam_gen();
        const Vector gphi = obj.grad_phi(i, phi, lam);
        const Vector glam = obj.grad_lambda(i, phi, lam);
        const Vector fphi = fd_gradient([&](const Vector& p) { return obj.eval(i, p, lam); }, phi);
        const Vector flam = fd_gradient([&](const Vector& l) { return obj.eval(i, phi, l); }, lam);
        EXPECT_LE(rel_err(gphi, fphi), 1e-5) << obj.name() << " phi, sample " << i;
        for (Index b = 0; b < obj.partition().num_blocks(); ++b) {
            const Vector a = obj.partition().block(glam, b);
            const Vector f = obj.partition().block(flam, b);
            EXPECT_LE(rel_err(a, f), 1e-5) << obj.name() << " block " << b << ", sample " << i;
        }
    }
}

} // namespace

// -- quadratic --------------------------------------------------------------

TEST(Quadratic, EvalGradHand)
{
    QuadraticInstance q;
    q.d_phi = 1;
    q.d_lambda = 1;
    q.Q = {Matrix::Identity(2, 2)};
    q.v = {vec({0.5, -1})};
    QuadraticObjective obj(q);
    auto [f0, g0] = obj.eval_grad(0, vec({0, 0}));
    EXPECT_EQ(f0, 0.0);
    EXPECT_EQ(g0, vec({0.5, -1}));
    q.v = {Vector::Zero(2)};
    QuadraticObjective obj2(q);
    auto [f, g] = obj2.eval_grad(0, vec({1, 2}));
    EXPECT_DOUBLE_EQ(f, 5.0);
    EXPECT_EQ(g, vec({2, 4}));
}

TEST(Quadratic, FiniteDifferences)
{
    auto inst = generate_quadratic_instance(4, 3, 4, 50.0, 9);
    std::mt19937_64 rng(2);
    for (auto& v : inst.v) v = random_vector(7, rng);
    QuadraticObjective obj(inst, BlockPartition({1, 3}));
    for (int t = 0; t < 10; ++t) {
        const Vector z = random_vector(7, rng);
        auto [f, g] = obj.eval_grad(t % 4, z);
        const Vector fd = fd_gradient([&](const Vector& y) { return obj.eval_grad(t % 4, y).first; }, z, 1e-4);
        EXPECT_LE(rel_err(g, fd), 1e-8);
    }
    check_objective_gradients(obj, rng, 20, [&] { return random_vector(4, rng); });
}

TEST(Quadratic, GeneratorConditionNumber)
{
    const auto inst = generate_quadratic_instance(10, 5, 5, 1000.0, 3);
    for (const Matrix& Q : inst.Q) {
        EXPECT_LT((Q - Q.transpose()).norm(), 1e-12);
        Eigen::SelfAdjointEigenSolver<Matrix> es(Q);
        const double ratio = es.eigenvalues().maxCoeff() / es.eigenvalues().minCoeff();
        EXPECT_GE(ratio, 990.0);
        EXPECT_LE(ratio, 1010.0);
        EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
    }
    for (const Vector& v : inst.v) EXPECT_EQ(v.norm(), 0.0);
}

TEST(Quadratic, GeneratorUnitCondition)
{
    const auto inst = generate_quadratic_instance(3, 2, 2, 1.0, 1);
    for (const Matrix& Q : inst.Q) EXPECT_LT((Q - Matrix::Identity(4, 4)).norm(), 1e-12);
}

TEST(Quadratic, GeneratorDeterministic)
{
    const auto a = generate_quadratic_instance(5, 2, 3, 100.0, 77);
    const auto b = generate_quadratic_instance(5, 2, 3, 100.0, 77);
    const auto c = generate_quadratic_instance(5, 2, 3, 100.0, 78);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(a.Q[i], b.Q[i]);
    EXPECT_NE(a.Q[0], c.Q[0]);
}

TEST(Quadratic, LipschitzPerBlock)
{
    QuadraticInstance q;
    q.d_phi = 0;
    q.d_lambda = 2;
    q.Q = {Matrix(vec({1, 1000}).asDiagonal())};
    q.v = {Vector::Zero(2)};
    QuadraticObjective obj(q, BlockPartition({1, 1}));
    const auto L = obj.lipschitz_estimates(Vector::Zero(2));
    ASSERT_TRUE(L);
    EXPECT_NEAR(L->blocks[0], 2.0, 1e-9);
    EXPECT_NEAR(L->blocks[1], 2000.0, 1e-6);

    q.Q = {Matrix::Identity(3, 3)};
    q.d_lambda = 3;
    q.v = {Vector::Zero(3)};
    QuadraticObjective eye(q, BlockPartition({1, 1, 1}));
    const auto Le = eye.lipschitz_estimates(Vector::Zero(3));
    EXPECT_DOUBLE_EQ(Le->blocks[0], Le->blocks[1]);
    EXPECT_DOUBLE_EQ(Le->blocks[1], Le->blocks[2]);
}

TEST(Quadratic, BlockScaledGeneratorRatio)
{
    const auto inst = generate_block_scaled_quadratic(5, 2, {3, 3}, {1.0, 200.0}, 5.0, 4);
    QuadraticObjective obj(inst, BlockPartition({3, 3}));
    const auto L = obj.lipschitz_estimates(Vector::Zero(6));
    EXPECT_GE(L->blocks[1] / L->blocks[0], 100.0);
}

// -- mixture ELBO -----------------------------------------------------------

TEST(GmmPoint, HandValue)
{
    const auto h = hyper(1, 1);
    const auto e = gmm_negelbo_eval_grad(vec({0}), vec({0}), Matrix::Zero(1, 1), Matrix::Zero(1, 1), h, 1, true);
    EXPECT_NEAR(e.value, 0.5 * std::log(2.0 * std::numbers::pi) + 0.5, 1e-12);
    EXPECT_NEAR(e.value, 1.418939, 1e-6);
    // K = 1: the single logit does not matter
    EXPECT_EQ(e.grad_alpha.norm(), 0.0);
    const auto e2 = gmm_negelbo_eval_grad(vec({0}), vec({3.7}), Matrix::Zero(1, 1), Matrix::Zero(1, 1), h, 1, true);
    EXPECT_DOUBLE_EQ(e.value, e2.value);

    MixtureElboObjective obj(Matrix::Zero(1, 1), h, {}, std::nullopt, MixtureOptions{true});
    EXPECT_NEAR(obj.eval(0, vec({0}), vec({0, 0})), 1.418939, 1e-6);
}

TEST(GmmPoint, FiniteDifferences)
{
    std::mt19937_64 rng(5);
    for (int t = 0; t < 20; ++t) {
        const Index K = 2 + t % 3, d = 1 + t % 4;
        const auto h = random_hyper(K, d, rng);
        const Vector x = random_vector(d, rng, 2.0);
        const Vector alpha = random_vector(K, rng, 1.5);
        Matrix m(K, d), rho(K, d);
        for (Index k = 0; k < K; ++k) {
            m.row(k) = random_vector(d, rng, 2.0).transpose();
            rho.row(k) = random_vector(d, rng, 0.5).transpose();
        }
        const Index n = 7;
        const bool consts = t % 2 == 0;
        const auto e = gmm_negelbo_eval_grad(x, alpha, m, rho, h, n, consts);
        const Vector fa = fd_gradient(
            [&](const Vector& a) { return gmm_negelbo_eval_grad(x, a, m, rho, h, n, consts).value; }, alpha);
        EXPECT_LE(rel_err(e.grad_alpha, fa), 1e-5);
        auto flat = [](const Matrix& M) { return Vector(Eigen::Map<const Vector>(M.data(), M.size())); };
        const Vector fm = fd_gradient(
            [&](const Vector& v) {
                const Matrix mm = Eigen::Map<const Matrix>(v.data(), K, d);
                return gmm_negelbo_eval_grad(x, alpha, mm, rho, h, n, consts).value;
            },
            flat(m));
        EXPECT_LE(rel_err(flat(e.grad_m), fm), 1e-5);
        const Vector fr = fd_gradient(
            [&](const Vector& v) {
                const Matrix rr = Eigen::Map<const Matrix>(v.data(), K, d);
                return gmm_negelbo_eval_grad(x, alpha, m, rr, h, n, consts).value;
            },
            flat(rho));
        EXPECT_LE(rel_err(flat(e.grad_rho), fr), 1e-5);
    }
}

TEST(GmmObjective, FiniteDifferencesAllBlocks)
{
    std::mt19937_64 rng(11);
    const auto h = random_hyper(3, 4, rng);
    Matrix X(25, 4);
    for (Index i = 0; i < 25; ++i) X.row(i) = random_vector(4, rng, 2.0).transpose();
    MixtureElboObjective obj(X, h);
    check_objective_gradients(obj, rng, 20, [&] { return random_lambda(obj, rng); });
}

TEST(SpatialObjective, FiniteDifferencesAllBlocks)
{
    std::mt19937_64 rng(13);
    auto f = spatial_fixture(6, 3, 3, 2, 4);
    MixtureElboObjective obj(f.data.X, hyper(3, 3, 1.0, 4.0), patch_members(f.patches), f.graph);
    ASSERT_GT(obj.kept_edges(), 0);
    check_objective_gradients(obj, rng, 20, [&] { return random_lambda(obj, rng); });
}

TEST(Potts, HandValues)
{
    const auto iso = potts_penalty_eval_grad(vec({1, -1}), {}, {});
    EXPECT_EQ(iso.value, 0.0);
    EXPECT_EQ(iso.grad_self.norm(), 0.0);

    // phi_i = phi_j = (1, 0) in the limit of large logits
    const Vector a = vec({40, -40});
    const auto pi = potts_penalty_eval_grad(a, {a}, {2.0});
    EXPECT_NEAR(pi.value, -1.0, 1e-12);
    const auto pj = potts_penalty_eval_grad(a, {a}, {2.0});
    EXPECT_NEAR(pi.value + pj.value, -2.0, 1e-12);
}

TEST(Potts, FiniteDifferences)
{
    std::mt19937_64 rng(17);
    for (int t = 0; t < 20; ++t) {
        const Index K = 2 + t % 3;
        const Vector ai = random_vector(K, rng, 1.5);
        std::vector<Vector> nb;
        std::vector<double> w;
        for (int l = 0; l < 1 + t % 4; ++l) {
            nb.push_back(random_vector(K, rng, 1.5));
            w.push_back(0.5 + 0.25 * l);
        }
        const auto e = potts_penalty_eval_grad(ai, nb, w);
        const Vector fs = fd_gradient([&](const Vector& a) { return potts_penalty_eval_grad(a, nb, w).value; }, ai);
        EXPECT_LE(rel_err(e.grad_self, fs), 1e-5);
        for (std::size_t l = 0; l < nb.size(); ++l) {
            const Vector fl = fd_gradient(
                [&](const Vector& a) {
                    auto copy = nb;
                    copy[l] = a;
                    return potts_penalty_eval_grad(ai, copy, w).value;
                },
                nb[l]);
            EXPECT_LE(rel_err(e.grad_neighbors[l], fl), 1e-5);
        }
    }
}

TEST(EdgeWeight, HandValues)
{
    const auto w = edge_weight(vec({1, 0}), vec({0, 0}), vec({1, 0}), vec({1, 0}), vec({1, 0}), 0.5);
    EXPECT_DOUBLE_EQ(w.value, 2.0);
    EXPECT_FALSE(w.degenerate);
    const auto perp = edge_weight(vec({0, 1}), vec({0, 0}), vec({1, 0}), vec({1, 0}), vec({0, 1}), 0.0);
    EXPECT_DOUBLE_EQ(perp.value, 0.0);
    const auto anti = edge_weight(vec({0, 1}), vec({0, 0}), vec({1, 0}), vec({1, 2}), vec({-1, -2}), 1.0);
    EXPECT_NEAR(anti.value, 0.0, 1e-15);
    const auto deg = edge_weight(vec({0, 0}), vec({0, 0}), vec({1, 0}), vec({1, 0}), vec({1, 0}), 0.5);
    EXPECT_TRUE(deg.degenerate);
    EXPECT_DOUBLE_EQ(deg.value, 1.0);
}

TEST(Decomposition, GmmMatchesDirectObjective)
{
    std::mt19937_64 rng(21);
    const auto h = random_hyper(3, 3, rng);
    Matrix X(40, 3);
    for (Index i = 0; i < 40; ++i) X.row(i) = random_vector(3, rng, 2.0).transpose();
    for (bool consts : {false, true}) {
        MixtureElboObjective obj(X, h, {}, std::nullopt, MixtureOptions{consts});
        for (int t = 0; t < 5; ++t) {
            const Vector lam = random_lambda(obj, rng);
            std::vector<Vector> phis;
            double mean = 0.0;
            for (Index u = 0; u < obj.num_samples(); ++u) {
                phis.push_back(random_vector(3, rng, 2.0));
                mean += obj.eval(u, phis.back(), lam);
            }
            mean /= static_cast<double>(obj.num_samples());
            const Matrix s2 = obj.log_variances(lam).array().exp();
            const double direct =
                negative_elbo_direct(X, h, obj.point_probabilities(phis), obj.means(lam), s2, nullptr, consts) / 40.0;
            EXPECT_LE(std::abs(mean - direct), 1e-8 * std::max(1.0, std::abs(direct)));
        }
    }
}

TEST(Decomposition, SpatialPatchesMatchDirectObjective)
{
    std::mt19937_64 rng(23);
    // coarse patches drop edges, so compare against the within-patch graph
    auto f = spatial_fixture(8, 3, 2, 5, 4);
    const auto h = hyper(3, 2, 1.0, 4.0);
    const SpatialGraph inner = f.graph.within_patches();
    MixtureElboObjective obj(f.data.X, h, patch_members(f.patches), f.graph);
    EXPECT_EQ(obj.kept_edges(), static_cast<long>(inner.edges.size()));
    EXPECT_EQ(obj.kept_edges() + obj.dropped_edges(), static_cast<long>(f.graph.edges.size()));
    const Index N = f.data.X.rows();
    for (int t = 0; t < 5; ++t) {
        const Vector lam = random_lambda(obj, rng);
        std::vector<Vector> phis;
        double mean = 0.0;
        for (Index u = 0; u < obj.num_samples(); ++u) {
            phis.push_back(random_vector(obj.local_dim(u), rng, 2.0));
            mean += obj.eval(u, phis.back(), lam);
        }
        mean /= static_cast<double>(obj.num_samples());
        const Matrix s2 = obj.log_variances(lam).array().exp();
        const double direct = negative_elbo_direct(f.data.X, h, obj.point_probabilities(phis), obj.means(lam), s2,
                                                   &inner, false) /
                              static_cast<double>(N);
        EXPECT_LE(std::abs(mean - direct), 1e-8 * std::max(1.0, std::abs(direct)));
    }
}

TEST(Decomposition, PottsPatchTotalEqualsFullWithoutCrossEdges)
{
    // two far-apart clumps; kNN edges never cross, patches split them
    Matrix coords(12, 2);
    for (Index i = 0; i < 6; ++i) {
        coords.row(i) << static_cast<double>(i % 3), static_cast<double>(i / 3);
        coords.row(i + 6) << 100.0 + static_cast<double>(i % 3), static_cast<double>(i / 3);
    }
    std::mt19937_64 rng(4);
    Matrix X(12, 2);
    for (Index i = 0; i < 12; ++i) X.row(i) = random_vector(2, rng).transpose();
    SpatialGraph g = build_knn_graph(coords, 3, nullptr, X, 0.5);
    g.patches = partition_patches(coords, 2);
    const SpatialGraph inner = g.within_patches();
    ASSERT_EQ(inner.edges.size(), g.edges.size());
    ASSERT_FALSE(g.edges.empty());

    std::vector<Vector> alphas;
    for (Index i = 0; i < 12; ++i) alphas.push_back(random_vector(3, rng, 2.0));
    auto total = [&](const SpatialGraph& graph) {
        const auto adj = graph.adjacency();
        double sum = 0.0;
        for (Index i = 0; i < 12; ++i) {
            std::vector<Vector> nb;
            std::vector<double> w;
            for (const auto& e : adj[static_cast<std::size_t>(i)]) {
                nb.push_back(alphas[static_cast<std::size_t>(e.node)]);
                w.push_back(e.weight);
            }
            sum += potts_penalty_eval_grad(alphas[static_cast<std::size_t>(i)], nb, w).value;
        }
        return sum;
    };
    EXPECT_EQ(total(inner), total(g));

    // the objective with patch units agrees with one unit holding everything
    const auto h = hyper(3, 2);
    MixtureElboObjective patched(X, h, patch_members(g.patches), g);
    std::vector<Index> all(12);
    std::iota(all.begin(), all.end(), Index{0});
    MixtureElboObjective whole(X, h, {all}, g);
    EXPECT_EQ(patched.dropped_edges(), 0);
    const Vector lam = random_lambda(whole, rng);
    Vector phi_all(36);
    for (Index i = 0; i < 12; ++i) phi_all.segment(3 * i, 3) = alphas[static_cast<std::size_t>(i)];
    const double full = whole.eval(0, phi_all, lam);
    double parts = 0.0;
    for (Index u = 0; u < patched.num_samples(); ++u) {
        const auto& pts = patched.units()[static_cast<std::size_t>(u)];
        Vector phi(3 * static_cast<Index>(pts.size()));
        for (std::size_t s = 0; s < pts.size(); ++s) phi.segment(3 * static_cast<Index>(s), 3) = alphas[static_cast<std::size_t>(pts[s])];
        parts += patched.eval(u, phi, lam);
    }
    parts /= static_cast<double>(patched.num_samples());
    EXPECT_NEAR(parts, full, 1e-12 * std::abs(full));
}

TEST(GmmObjective, LipschitzBoundsCurvature)
{
    std::mt19937_64 rng(31);
    const auto h = random_hyper(2, 3, rng);
    Matrix X(20, 3);
    for (Index i = 0; i < 20; ++i) X.row(i) = random_vector(3, rng, 2.0).transpose();
    MixtureElboObjective obj(X, h);
    const Vector lam = random_lambda(obj, rng);
    const auto L = obj.lipschitz_estimates(lam);
    ASSERT_TRUE(L);
    double bound = 0.0;
    for (Index j = 0; j < 3; ++j) bound = std::max(bound, 1.0 / h.sigma0_sq(j) + 1.0 / (20.0 * h.sigma1_sq(j)));
    EXPECT_LE(L->blocks[0], bound * (1.0 + 1e-12));
    // second derivative along each m coordinate is below the estimate
    for (int t = 0; t < 10; ++t) {
        const Index i = t;
        const Vector phi = random_vector(2, rng, 3.0);
        for (Index c = 0; c < 6; ++c) {
            Vector e = Vector::Zero(12);
            e(c) = 1e-3;
            const double curv = (obj.eval(i, phi, lam + e) - 2.0 * obj.eval(i, phi, lam) + obj.eval(i, phi, lam - e)) / 1e-6;
            EXPECT_LE(curv, L->blocks[0] * (1.0 + 1e-4));
        }
    }
}

TEST(GmmObjective, BlockMinimisersAreStationary)
{
    std::mt19937_64 rng(41);
    const auto h = random_hyper(3, 2, rng);
    Matrix X(30, 2);
    for (Index i = 0; i < 30; ++i) X.row(i) = random_vector(2, rng, 2.0).transpose();
    MixtureElboObjective obj(X, h);
    const Vector lam0 = random_lambda(obj, rng);
    const Vector mu = random_vector(lam0.size(), rng, 0.2);
    const Vector w = Vector::Constant(lam0.size(), 1.5);
    const AugmentedTerms al{lam0, mu, w};
    Vector phi = random_vector(3, rng);
    Vector lam = random_lambda(obj, rng);
    const auto& part = obj.partition();
    for (Index b : {1, 2}) {
        ASSERT_TRUE(obj.minimize_block(5, b, al, phi, lam));
        const Vector g = obj.grad_lambda(5, phi, lam) + al.gradient(lam);
        EXPECT_LT(part.block(g, b - 1).norm(), 1e-10) << "block " << b;
    }
    ASSERT_TRUE(obj.minimize_block(5, 0, al, phi, lam));
    EXPECT_LT(obj.grad_phi(5, phi, lam).norm(), 1e-12);
}

TEST(GmmObjective, NaturalParameterRoundTrip)
{
    std::mt19937_64 rng(43);
    MixtureElboObjective obj(Matrix::Random(10, 3), hyper(2, 3));
    const Vector lam = random_lambda(obj, rng);
    const Vector back = obj.lambda_from_natural(obj.natural_from_lambda(lam));
    EXPECT_LT((back - lam).norm(), 1e-12);
}

TEST(GmmObjective, ConstructionErrors)
{
    EXPECT_THROW(MixtureElboObjective(Matrix::Zero(3, 2), hyper(2, 3)), DimensionError);
    Matrix bad = Matrix::Zero(3, 2);
    bad(1, 1) = NAN;
    EXPECT_THROW(MixtureElboObjective(bad, hyper(2, 2)), DomainError);
    EXPECT_THROW(MixtureElboObjective(Matrix::Zero(3, 2), hyper(2, 2), {{0, 1}}), ConfigError);
    EXPECT_THROW(MixtureElboObjective(Matrix::Zero(3, 2), hyper(2, 2), {{0, 1}, {1, 2}}), ConfigError);
    auto h = hyper(2, 2);
    h.sigma0_sq(0) = 0.0;
    EXPECT_THROW(MixtureElboObjective(Matrix::Zero(3, 2), h), DomainError);
}

TEST(HyperFromData, SeparatedBlobs)
{
    std::mt19937_64 rng(51);
    const Index K = 3, d = 2, per = 200;
    Matrix X(K * per, d);
    std::vector<int> truth;
    std::normal_distribution<double> g(0.0, 1.0);
    for (Index k = 0; k < K; ++k)
        for (Index r = 0; r < per; ++r) {
            X(k * per + r, 0) = 20.0 * static_cast<double>(k) + g(rng);
            X(k * per + r, 1) = -20.0 * static_cast<double>(k % 2) + g(rng);
            truth.push_back(static_cast<int>(k));
        }
    const auto fit = gmm_hyper_from_data(X, K, 7);
    EXPECT_DOUBLE_EQ(adjusted_rand_index(fit.labels, truth), 1.0);
    const Vector grand = X.colwise().mean().transpose();
    EXPECT_LT((fit.hyper.xi - grand).norm(), 1e-12);
    for (Index j = 0; j < d; ++j) EXPECT_NEAR(fit.hyper.sigma0_sq(j), 1.0, 0.15);
    const auto again = gmm_hyper_from_data(X, K, 7);
    EXPECT_EQ(again.labels, fit.labels);
    EXPECT_EQ(again.hyper.sigma1_sq, fit.hyper.sigma1_sq);
}

TEST(HyperFromData, SingleClusterFloor)
{
    std::mt19937_64 rng(53);
    Matrix X(50, 2);
    for (Index i = 0; i < 50; ++i) X.row(i) = random_vector(2, rng).transpose();
    const auto fit = gmm_hyper_from_data(X, 1, 1);
    EXPECT_TRUE((fit.hyper.sigma1_sq.array() > 0.0).all());
    EXPECT_NO_THROW(fit.hyper.validate());
    for (int l : fit.labels) EXPECT_EQ(l, 0);
}
