#include "helpers.hpp"

#include "pdvi/data.hpp"
#include "pdvi/kmeans.hpp"
#include "pdvi/metrics.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

using namespace pdvi;

namespace {

std::string temp_path(const std::string& name)
{
    return (std::filesystem::temp_directory_path() / ("pdvi_test_" + name)).string();
}

void write_file(const std::string& path, const std::string& text)
{
    std::ofstream out(path);
    out << text;
}

std::vector<int> labels_with_sizes(const std::vector<int>& sizes)
{
    std::vector<int> out;
    for (std::size_t k = 0; k < sizes.size(); ++k) out.insert(out.end(), static_cast<std::size_t>(sizes[k]), static_cast<int>(k));
    return out;
}

} // namespace

TEST(SampleGmm, PresetShape)
{
    const auto p = gmm_preset();
    EXPECT_EQ(p.K, 5);
    EXPECT_EQ(p.d, 10);
    EXPECT_EQ(p.n, 10000);
    EXPECT_EQ(p.batch_size, 100);
    EXPECT_EQ(gmm_preset(true).n, 100000);
    EXPECT_EQ(gmm_preset(true).batch_size, 1000);
    const auto ds = sample_gmm(500, p.K, p.d, generating_hyper(p), 1);
    EXPECT_EQ(ds.X.rows(), 500);
    EXPECT_EQ(ds.X.cols(), 10);
    ASSERT_TRUE(ds.true_mixture);
    EXPECT_EQ(ds.true_mixture->components(), 5);
    EXPECT_NEAR(ds.true_mixture->weights.sum(), 1.0, 1e-15);
    EXPECT_EQ(ds.true_mixture->variances, Matrix::Ones(5, 10));
    EXPECT_NO_THROW(ds.validate());
}

TEST(SampleGmm, LabelFrequencies)
{
    const Index n = 100000;
    const auto ds = sample_gmm(n, 5, 2, [] {
        GmmHyperParams h;
        h.K = 5;
        h.xi = Vector::Zero(2);
        h.sigma0_sq = Vector::Ones(2);
        h.sigma1_sq = Vector::Constant(2, 4.0);
        return h;
    }(), 9);
    std::vector<double> count(5, 0.0);
    for (int l : *ds.true_labels) count[static_cast<std::size_t>(l)] += 1.0;
    const double sd = std::sqrt(static_cast<double>(n) * 0.2 * 0.8);
    for (double c : count) EXPECT_NEAR(c, 0.2 * static_cast<double>(n), 3.0 * sd);
}

TEST(SampleGmm, DeterministicAndValidated)
{
    const auto h = generating_hyper(gmm_preset());
    const auto a = sample_gmm(200, 5, 10, h, 3), b = sample_gmm(200, 5, 10, h, 3), c = sample_gmm(200, 5, 10, h, 4);
    EXPECT_EQ(a.X, b.X);
    EXPECT_EQ(*a.true_labels, *b.true_labels);
    EXPECT_NE(a.X, c.X);
    EXPECT_THROW(sample_gmm(3, 5, 10, h, 0), ConfigError);
    EXPECT_THROW(sample_gmm(100, 4, 10, h, 0), DimensionError);
}

TEST(BiasedBatches, PureClusters)
{
    const auto labels = labels_with_sizes({300, 300, 300});
    const auto bb = biased_batches(labels, 50, 1.0, 2);
    EXPECT_EQ(bb.short_batches, 0);
    ASSERT_EQ(bb.batches.size(), 18u);
    for (std::size_t b = 0; b < bb.batches.size(); ++b) {
        std::set<int> seen;
        for (Index i : bb.batches[b]) seen.insert(labels[static_cast<std::size_t>(i)]);
        EXPECT_EQ(seen.size(), 1u) << "batch " << b;
    }
}

TEST(BiasedBatches, PartitionWithoutRepetition)
{
    const auto labels = labels_with_sizes({120, 40, 77});
    for (double bias : {0.0, 0.5, 0.9, 1.0}) {
        const auto bb = biased_batches(labels, 30, bias, 5);
        std::vector<int> hits(labels.size(), 0);
        for (const auto& b : bb.batches) {
            EXPECT_LE(b.size(), 30u);
            for (Index i : b) ++hits[static_cast<std::size_t>(i)];
        }
        for (int h : hits) EXPECT_EQ(h, 1);
        EXPECT_EQ(bb.batches.back().size(), labels.size() % 30);
    }
    // cluster 1 runs dry under bias 0.9
    EXPECT_GT(biased_batches(labels, 30, 0.9, 5).short_batches, 0);
}

TEST(BiasedBatches, DesignatedShare)
{
    const auto labels = labels_with_sizes({1000, 1000, 1000, 1000, 1000});
    const auto bb = biased_batches(labels, 100, 0.9, 1);
    // the first batches of an epoch have plenty to draw from
    for (std::size_t b = 0; b < 10; ++b) {
        int own = 0;
        for (Index i : bb.batches[b]) own += labels[static_cast<std::size_t>(i)] == static_cast<int>(b % 5);
        EXPECT_GE(own, 90);
    }
}

TEST(BiasedBatches, ZeroBiasIsUniform)
{
    // per-batch cluster histogram matches global proportions within 3 sd
    const auto labels = labels_with_sizes({500, 300, 200});
    const double props[3] = {0.5, 0.3, 0.2};
    // the first batch of each epoch should follow the global proportions
    double chi2 = 0.0;
    std::vector<double> first(3, 0.0);
    const int epochs = 400;
    for (int e = 0; e < epochs; ++e) {
        const auto bb = biased_batches(labels, 50, 0.0, 1000 + static_cast<std::uint64_t>(e));
        for (Index i : bb.batches.front()) first[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])] += 1.0;
    }
    for (int k = 0; k < 3; ++k) {
        const double expected = 50.0 * epochs * props[k];
        chi2 += std::pow(first[static_cast<std::size_t>(k)] - expected, 2) / expected;
        const double sd = std::sqrt(50.0 * epochs * props[k] * (1.0 - props[k]));
        EXPECT_NEAR(first[static_cast<std::size_t>(k)], expected, 3.0 * sd);
    }
    // 2 degrees of freedom, p = 0.01 critical value
    EXPECT_LT(chi2, 9.21);
}

TEST(BiasedBatches, Errors)
{
    EXPECT_THROW(biased_batches({0, 1}, 3, 0.5, 0), ConfigError);
    EXPECT_THROW(biased_batches({0, 1}, 1, 1.5, 0), ConfigError);
    EXPECT_THROW(biased_batches({0, -1}, 1, 0.5, 0), DomainError);
}

TEST(KnnGraph, CollinearTie)
{
    Matrix coords(3, 2);
    coords << 0, 0, 1, 0, 2, 0;
    const auto g = build_knn_graph(coords, 1, nullptr, Matrix::Ones(3, 1), 0.5);
    ASSERT_EQ(g.edges.size(), 1u);
    EXPECT_EQ(g.edges[0], std::make_pair(Index{0}, Index{1}));
}

TEST(KnnGraph, CompleteWhenKIsNMinusOne)
{
    std::mt19937_64 rng(3);
    Matrix coords(6, 2), X(6, 3);
    for (Index i = 0; i < 6; ++i) {
        coords.row(i) = pdvi::testing::random_vector(2, rng).transpose();
        X.row(i) = pdvi::testing::random_vector(3, rng).transpose();
    }
    const auto g = build_knn_graph(coords, 5, nullptr, X, 0.5);
    EXPECT_EQ(g.edges.size(), 15u);
    std::set<std::pair<Index, Index>> uniq(g.edges.begin(), g.edges.end());
    EXPECT_EQ(uniq.size(), 15u);
    for (const auto& [a, b] : g.edges) EXPECT_LT(a, b);
    EXPECT_EQ(g.weights.size(), g.edges.size());
    // larger k saturates
    EXPECT_EQ(build_knn_graph(coords, 50, nullptr, X, 0.5).edges.size(), 15u);
}

TEST(KnnGraph, SimpleAndMutual)
{
    const auto ds = synth_spatial(10, 3, 2, 4, 5.0);
    const auto g = build_knn_graph(*ds.coords, 6, nullptr, ds.X, 0.5);
    std::set<std::pair<Index, Index>> uniq;
    for (const auto& e : g.edges) {
        EXPECT_LT(e.first, e.second);
        EXPECT_TRUE(uniq.insert(e).second);
    }
    const auto adj = g.adjacency();
    for (Index i = 0; i < g.num_nodes; ++i) {
        EXPECT_LE(adj[static_cast<std::size_t>(i)].size(), 6u);
        for (const auto& nb : adj[static_cast<std::size_t>(i)]) {
            bool back = false;
            for (const auto& r : adj[static_cast<std::size_t>(nb.node)]) back = back || (r.node == i && r.weight == nb.weight);
            EXPECT_TRUE(back);
        }
    }
}

TEST(KnnGraph, FlowsAndErrors)
{
    Matrix coords(2, 2), X(2, 2), flows(2, 2);
    coords << 0, 0, 1, 0;
    X << 1, 0, 1, 0;
    flows << 1, 0, 1, 0;
    const auto g = build_knn_graph(coords, 1, &flows, X, 0.5);
    ASSERT_EQ(g.weights.size(), 1u);
    EXPECT_DOUBLE_EQ(g.weights[0], 2.0);
    EXPECT_THROW(build_knn_graph(coords, 0, nullptr, X, 0.5), ConfigError);
    EXPECT_THROW(build_knn_graph(Matrix::Zero(2, 3), 1, nullptr, X, 0.5), DimensionError);
}

TEST(Patches, SingleAndGrid)
{
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix coords(4000, 2);
    for (Index i = 0; i < 4000; ++i) coords.row(i) << u(rng), u(rng);
    const auto one = partition_patches(coords, 1);
    for (Index p : one) EXPECT_EQ(p, 0);
    const auto four = partition_patches(coords, 4);
    std::vector<int> count(4, 0);
    for (Index p : four) {
        ASSERT_GE(p, 0);
        ASSERT_LT(p, 4);
        ++count[static_cast<std::size_t>(p)];
    }
    for (int c : count) EXPECT_NEAR(c, 1000, 100);
    EXPECT_EQ(partition_patches(coords, 4), four);
    EXPECT_THROW(partition_patches(coords, 0), ConfigError);
}

TEST(Patches, EmptyCellsDropped)
{
    Matrix coords(4, 2);
    coords << 0, 0, 0.1, 0.1, 10, 10, 9.9, 9.9;
    const auto p = partition_patches(coords, 4);
    const auto members = patch_members(p);
    EXPECT_EQ(members.size(), 2u);
    for (Index x : p) EXPECT_LT(x, 2);
}

TEST(Patches, SinglePatchKeepsEveryEdge)
{
    const auto ds = synth_spatial(8, 2, 2, 1);
    SpatialGraph g = build_knn_graph(*ds.coords, 6, nullptr, ds.X, 0.5);
    g.patches = partition_patches(*ds.coords, 1);
    EXPECT_EQ(g.within_patches().edges.size(), g.edges.size());
}

TEST(SynthSpatial, Basics)
{
    const auto one = synth_spatial(6, 1, 3, 2);
    for (int l : *one.true_labels) EXPECT_EQ(l, 0);
    const auto a = synth_spatial(12, 4, 5, 7), b = synth_spatial(12, 4, 5, 7);
    EXPECT_EQ(a.X, b.X);
    EXPECT_EQ(*a.true_labels, *b.true_labels);
    EXPECT_EQ(a.X.rows(), 144);
    EXPECT_NO_THROW(a.validate());
    // regions are contiguous: every point has a lattice neighbour with its label
    const auto& lab = *a.true_labels;
    for (Index r = 0; r < 12; ++r)
        for (Index c = 0; c < 12; ++c) {
            const int l = lab[static_cast<std::size_t>(r * 12 + c)];
            bool any = false;
            for (auto [dr, dc] : {std::pair{0, 1}, {0, -1}, {1, 0}, {-1, 0}}) {
                const Index rr = r + dr, cc = c + dc;
                if (rr < 0 || cc < 0 || rr >= 12 || cc >= 12) continue;
                any = any || lab[static_cast<std::size_t>(rr * 12 + cc)] == l;
            }
            int members = 0;
            for (int x : lab) members += x == l;
            if (members > 1) {
                EXPECT_TRUE(any);
            }
        }
}

TEST(SynthSpatial, SeparatedMeansClusterWithKMeans)
{
    for (std::uint64_t seed : {0, 1, 2}) {
        const auto ds = synth_spatial(30, 4, 5, seed, 20.0);
        const auto km = kmeans(ds.X, 4, seed);
        std::vector<int> labels(km.labels.begin(), km.labels.end());
        EXPECT_GE(adjusted_rand_index(labels, *ds.true_labels), 0.95);
    }
}

TEST(Table, RoundTrip)
{
    auto ds = synth_spatial(5, 2, 3, 4);
    const std::string path = temp_path("roundtrip.csv");
    save_table(ds, path);
    const auto back = load_table(path);
    EXPECT_EQ(back.X, ds.X);
    EXPECT_EQ(*back.coords, *ds.coords);
    EXPECT_EQ(*back.true_labels, *ds.true_labels);
    std::remove(path.c_str());
}

TEST(Table, TabsAndColumnOrder)
{
    const std::string path = temp_path("tabs.tsv");
    write_file(path, "label\tx1\tcy\tx0\tcx\n1\t2.5\t0\t-1\t3\n0\t4\t1\t5e-1\t2\n");
    const auto ds = load_table(path);
    EXPECT_EQ(ds.X.rows(), 2);
    EXPECT_DOUBLE_EQ(ds.X(0, 0), -1.0);
    EXPECT_DOUBLE_EQ(ds.X(0, 1), 2.5);
    EXPECT_DOUBLE_EQ(ds.X(1, 0), 0.5);
    EXPECT_DOUBLE_EQ((*ds.coords)(0, 0), 3.0);
    EXPECT_EQ(*ds.true_labels, (std::vector<int>{1, 0}));
    std::remove(path.c_str());
}

TEST(Table, Errors)
{
    const std::string path = temp_path("bad.csv");
    auto expect_error = [&](const std::string& text, const std::string& needle) {
        write_file(path, text);
        try {
            load_table(path);
            ADD_FAILURE() << "no error for: " << text;
        } catch (const ConfigError& e) {
            EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
        }
    };
    expect_error("x0,x1\n1,2\n3\n", "line 3");
    expect_error("x0,x1\n1,2\n3,abc\n", "line 3");
    expect_error("x0,x1\n1,nan\n", "line 2");
    expect_error("x0,foo\n1,2\n", "unknown column");
    expect_error("x0,x2\n1,2\n", "x0..x");
    expect_error("x0,cx\n1,2\n", "cx and cy");
    expect_error("x0,label\n1,0.5\n", "label");
    std::remove(path.c_str());
    EXPECT_THROW(load_table(temp_path("does_not_exist.csv")), ConfigError);
}

TEST(Preprocess, ClipAndConstantColumns)
{
    std::mt19937_64 rng(2);
    std::exponential_distribution<double> e(0.3);
    Dataset ds;
    ds.X.resize(200, 6);
    for (Index i = 0; i < 200; ++i)
        for (Index j = 0; j < 6; ++j) ds.X(i, j) = j == 2 ? 4.0 : std::pow(e(rng), 1.0 + static_cast<double>(j));
    PreprocessSpec spec;
    spec.scale_clip = 3.0;
    const auto out = preprocess(ds, spec);
    EXPECT_LE(out.X.cwiseAbs().maxCoeff(), 3.0);
    // depth normalisation rescales rows, so check the constant column without it
    spec.normalize_depth = false;
    EXPECT_EQ(preprocess(ds, spec).X.cols(), 5);
    EXPECT_LE(out.X.cwiseAbs().maxCoeff(), 3.0);
    spec.top_features = 2;
    EXPECT_EQ(preprocess(ds, spec).X.cols(), 2);
    spec.top_features = 7;
    EXPECT_THROW(preprocess(ds, spec), ConfigError);
}

TEST(Preprocess, StandardisationIsIdempotent)
{
    std::mt19937_64 rng(6);
    Dataset ds;
    ds.X.resize(300, 4);
    for (Index i = 0; i < 300; ++i) ds.X.row(i) = pdvi::testing::random_vector(4, rng).transpose();
    PreprocessSpec spec;
    spec.normalize_depth = false;
    spec.log1p = false;
    spec.scale_clip = 100.0;
    const auto once = preprocess(ds, spec);
    const auto twice = preprocess(once, spec);
    EXPECT_LT((once.X - twice.X).cwiseAbs().maxCoeff(), 1e-12);
    for (Index j = 0; j < 4; ++j) {
        EXPECT_NEAR(once.X.col(j).mean(), 0.0, 1e-12);
        EXPECT_NEAR(once.X.col(j).squaredNorm() / 300.0, 1.0, 1e-12);
    }
}

TEST(Preprocess, DepthNormalisationNeedsNonNegative)
{
    Dataset ds;
    ds.X = Matrix::Constant(3, 2, -1.0);
    EXPECT_THROW(preprocess(ds, PreprocessSpec{}), DomainError);
}
