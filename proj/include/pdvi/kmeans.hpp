#pragma once

#include "pdvi/core.hpp"

#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace pdvi {

struct KMeansResult {
    Matrix centroids; // K x d
    std::vector<int> labels;
    int iterations = 0;
    double inertia = 0.0;
};

/// Lloyd's algorithm with k-means++ seeding. Empty clusters are re-seeded
/// from the point farthest from its current centroid.
inline KMeansResult kmeans_single(const Matrix& X, Index K, std::mt19937_64& rng, int max_iters = 50)
{
    const Index n = X.rows();
    if (K < 1) throw ConfigError("kmeans: K must be >= 1");
    if (n < K) throw ConfigError("kmeans: fewer points than clusters");

    KMeansResult res;
    res.centroids.resize(K, X.cols());
    std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    std::uniform_int_distribution<Index> first(0, n - 1);
    res.centroids.row(0) = X.row(first(rng));
    for (Index k = 1; k < K; ++k) {
        double total = 0.0;
        for (Index i = 0; i < n; ++i) {
            auto& d = d2[static_cast<std::size_t>(i)];
            d = std::min(d, (X.row(i) - res.centroids.row(k - 1)).squaredNorm());
            total += d;
        }
        Index pick = n - 1;
        if (total > 0.0) {
            std::uniform_real_distribution<double> u(0.0, total);
            double r = u(rng), acc = 0.0;
            for (Index i = 0; i < n; ++i) {
                acc += d2[static_cast<std::size_t>(i)];
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = first(rng);
        }
        res.centroids.row(k) = X.row(pick);
    }

    res.labels.assign(static_cast<std::size_t>(n), -1);
    for (int it = 0; it < max_iters; ++it) {
        bool changed = false;
        std::vector<double> dist(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i) {
            int best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (Index k = 0; k < K; ++k) {
                const double d = (X.row(i) - res.centroids.row(k)).squaredNorm();
                if (d < bd) {
                    bd = d;
                    best = static_cast<int>(k);
                }
            }
            dist[static_cast<std::size_t>(i)] = bd;
            if (res.labels[static_cast<std::size_t>(i)] != best) {
                res.labels[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }
        res.iterations = it + 1;

        Matrix sums = Matrix::Zero(K, X.cols());
        std::vector<Index> counts(static_cast<std::size_t>(K), 0);
        for (Index i = 0; i < n; ++i) {
            const int k = res.labels[static_cast<std::size_t>(i)];
            sums.row(k) += X.row(i);
            ++counts[static_cast<std::size_t>(k)];
        }
        for (Index k = 0; k < K; ++k) {
            if (counts[static_cast<std::size_t>(k)] > 0) {
                res.centroids.row(k) = sums.row(k) / static_cast<double>(counts[static_cast<std::size_t>(k)]);
                continue;
            }
            Index far = 0;
            for (Index i = 1; i < n; ++i) {
                if (dist[static_cast<std::size_t>(i)] > dist[static_cast<std::size_t>(far)]) far = i;
            }
            res.centroids.row(k) = X.row(far);
            res.labels[static_cast<std::size_t>(far)] = static_cast<int>(k);
            dist[static_cast<std::size_t>(far)] = 0.0;
            changed = true;
        }
        if (!changed) break;
    }
    res.inertia = 0.0;
    for (Index i = 0; i < n; ++i) {
        res.inertia += (X.row(i) - res.centroids.row(res.labels[static_cast<std::size_t>(i)])).squaredNorm();
    }
    return res;
}

/// Best of `restarts` seeded runs by within-cluster sum of squares.
inline KMeansResult kmeans(const Matrix& X, Index K, std::uint64_t seed, int max_iters = 50, int restarts = 10)
{
    if (restarts < 1) throw ConfigError("kmeans: restarts must be >= 1");
    std::mt19937_64 rng(seed);
    KMeansResult best = kmeans_single(X, K, rng, max_iters);
    for (int r = 1; r < restarts; ++r) {
        KMeansResult cur = kmeans_single(X, K, rng, max_iters);
        if (cur.inertia < best.inertia) best = std::move(cur);
    }
    return best;
}

} // namespace pdvi
