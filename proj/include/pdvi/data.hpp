#pragma once

// Synthetic generators, delimited-table I/O, preprocessing, kNN graphs and
// spatial patches.

#include "pdvi/core.hpp"
#include "pdvi/metrics.hpp"
#include "pdvi/objectives/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace pdvi {

struct Dataset {
    Matrix X;
    std::optional<Matrix> coords;              // n x 2
    std::optional<std::vector<int>> true_labels;
    std::optional<GaussianMixtureSummary> true_mixture;

    Index n() const { return X.rows(); }
    Index dim() const { return X.cols(); }

    void validate() const
    {
        if (coords && (coords->rows() != X.rows() || coords->cols() != 2)) {
            throw DimensionError("dataset: coordinates must be n x 2");
        }
        if (true_labels && static_cast<Index>(true_labels->size()) != X.rows()) {
            throw DimensionError("dataset: one label per row required");
        }
        if (true_mixture) true_mixture->validate();
    }
};

// ---------------------------------------------------------------------------
// Gaussian mixture sampler and biased batching
// ---------------------------------------------------------------------------

/// Equal-weight mixture: c_k ~ N(xi, Sigma1) once, zeta_i ~ Uniform[K],
/// x_i ~ N(c_{zeta_i}, Sigma0).
inline Dataset sample_gmm(Index n, Index K, Index d, const GmmHyperParams& hyper, std::uint64_t seed)
{
    if (n < K) throw ConfigError("sample_gmm: need n >= K");
    if (hyper.K != K || hyper.dim() != d) throw DimensionError("sample_gmm: hyperparameters do not match K, d");
    hyper.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix centers(K, d);
    for (Index k = 0; k < K; ++k)
        for (Index j = 0; j < d; ++j) centers(k, j) = hyper.xi(j) + std::sqrt(hyper.sigma1_sq(j)) * normal(rng);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(K) - 1);
    Dataset ds;
    ds.X.resize(n, d);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        const int k = pick(rng);
        labels[static_cast<std::size_t>(i)] = k;
        for (Index j = 0; j < d; ++j) ds.X(i, j) = centers(k, j) + std::sqrt(hyper.sigma0_sq(j)) * normal(rng);
    }
    ds.true_labels = std::move(labels);
    GaussianMixtureSummary mix;
    mix.weights = Vector::Constant(K, 1.0 / static_cast<double>(K));
    mix.means = centers;
    mix.variances = hyper.sigma0_sq.transpose().replicate(K, 1);
    ds.true_mixture = std::move(mix);
    return ds;
}

struct BiasedBatches {
    std::vector<std::vector<Index>> batches;
    /// Batches whose designated cluster ran out before the biased share was drawn.
    long short_batches = 0;
};

/// One epoch of batches that partition [0, n). Batch b draws round(bias * m)
/// members from cluster (b mod K) and fills the rest uniformly from what is
/// left; the last batch holds the remainder when m does not divide n.
inline BiasedBatches biased_batches(const std::vector<int>& labels, Index batch_size, double bias, std::uint64_t seed)
{
    const Index n = static_cast<Index>(labels.size());
    if (batch_size < 1 || batch_size > n) throw ConfigError("biased_batches: batch size must lie in [1, n]");
    if (!(bias >= 0.0 && bias <= 1.0)) throw ConfigError("biased_batches: bias must lie in [0, 1]");
    std::mt19937_64 rng(seed);
    int K = 0;
    for (int l : labels) {
        if (l < 0) throw DomainError("labels", "negative label");
        K = std::max(K, l + 1);
    }
    std::vector<std::vector<Index>> pools(static_cast<std::size_t>(K));
    for (Index i = 0; i < n; ++i) pools[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);
    for (auto& p : pools) std::shuffle(p.begin(), p.end(), rng);
    std::vector<char> used(static_cast<std::size_t>(n), 0);
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t fill_pos = 0;
    std::vector<std::size_t> pool_pos(pools.size(), 0);

    BiasedBatches out;
    Index remaining = n;
    for (Index b = 0; remaining > 0; ++b) {
        const Index m = std::min(batch_size, remaining);
        std::vector<Index> batch;
        batch.reserve(static_cast<std::size_t>(m));
        // Only labels that actually occur are designated.
        std::size_t k = static_cast<std::size_t>(b % K);
        for (int tries = 0; tries < K && pools[k].empty(); ++tries) k = (k + 1) % pools.size();
        const auto want = static_cast<Index>(std::llround(bias * static_cast<double>(m)));
        auto& pool = pools[k];
        auto& pos = pool_pos[k];
        while (static_cast<Index>(batch.size()) < want && pos < pool.size()) {
            const Index i = pool[pos++];
            if (used[static_cast<std::size_t>(i)]) continue;
            used[static_cast<std::size_t>(i)] = 1;
            batch.push_back(i);
        }
        if (static_cast<Index>(batch.size()) < want) ++out.short_batches;
        while (static_cast<Index>(batch.size()) < m) {
            const Index i = order[fill_pos++];
            if (used[static_cast<std::size_t>(i)]) continue;
            used[static_cast<std::size_t>(i)] = 1;
            batch.push_back(i);
        }
        std::sort(batch.begin(), batch.end());
        remaining -= m;
        out.batches.push_back(std::move(batch));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Spatial graph and patches
// ---------------------------------------------------------------------------

/// Mutual k-nearest-neighbour graph with weights from edge_weight. Distance
/// ties are broken towards the lower index. Without flows, g_i is the unit
/// vector from i towards its nearest neighbour.
inline SpatialGraph build_knn_graph(const Matrix& coords, Index k, const Matrix* flows, const Matrix& X, double tau)
{
    const Index n = coords.rows();
    if (coords.cols() != 2) throw DimensionError("build_knn_graph: coordinates must be n x 2");
    if (X.rows() != n) throw DimensionError("build_knn_graph: features and coordinates disagree on n");
    if (flows && (flows->rows() != n || flows->cols() != 2)) throw DimensionError("build_knn_graph: flows must be n x 2");
    if (k < 1) throw ConfigError("build_knn_graph: k must be >= 1");
    const Index kk = std::min(k, n - 1);

    std::vector<std::vector<Index>> nn(static_cast<std::size_t>(n));
    std::vector<std::pair<double, Index>> cand;
    for (Index i = 0; i < n; ++i) {
        cand.clear();
        for (Index j = 0; j < n; ++j) {
            if (j != i) cand.emplace_back((coords.row(i) - coords.row(j)).squaredNorm(), j);
        }
        std::partial_sort(cand.begin(), cand.begin() + kk, cand.end());
        for (Index r = 0; r < kk; ++r) nn[static_cast<std::size_t>(i)].push_back(cand[static_cast<std::size_t>(r)].second);
        std::sort(nn[static_cast<std::size_t>(i)].begin(), nn[static_cast<std::size_t>(i)].end());
    }
    auto has = [&](Index a, Index b) {
        const auto& v = nn[static_cast<std::size_t>(a)];
        return std::binary_search(v.begin(), v.end(), b);
    };

    SpatialGraph g;
    g.num_nodes = n;
    for (Index i = 0; i < n; ++i) {
        Vector gi(2);
        if (flows) {
            gi = flows->row(i).transpose();
        } else if (kk > 0) {
            Index nearest = -1;
            double best = std::numeric_limits<double>::infinity();
            for (Index j : nn[static_cast<std::size_t>(i)]) {
                const double d2 = (coords.row(i) - coords.row(j)).squaredNorm();
                if (d2 < best) {
                    best = d2;
                    nearest = j;
                }
            }
            gi = (coords.row(nearest) - coords.row(i)).transpose();
            if (gi.norm() > 0.0) gi.normalize();
        } else {
            gi.setZero();
        }
        for (Index j : nn[static_cast<std::size_t>(i)]) {
            if (j <= i || !has(j, i)) continue;
            const EdgeWeight w = edge_weight(gi, coords.row(i).transpose(), coords.row(j).transpose(),
                                             X.row(i).transpose(), X.row(j).transpose(), tau);
            g.edges.emplace_back(i, j);
            g.weights.push_back(w.value);
            if (w.degenerate) ++g.degenerate_weights;
        }
    }
    return g;
}

/// Axis-aligned grid over the bounding box with about `target_patches` cells.
/// Empty cells are dropped and the rest numbered in row-major cell order.
inline std::vector<Index> partition_patches(const Matrix& coords, Index target_patches)
{
    if (target_patches < 1) throw ConfigError("partition_patches: target must be >= 1");
    if (coords.cols() != 2) throw DimensionError("partition_patches: coordinates must be n x 2");
    const Index n = coords.rows();
    std::vector<Index> patch(static_cast<std::size_t>(n), 0);
    if (n == 0) return patch;
    const double x0 = coords.col(0).minCoeff(), x1 = coords.col(0).maxCoeff();
    const double y0 = coords.col(1).minCoeff(), y1 = coords.col(1).maxCoeff();
    const double w = std::max(x1 - x0, 1e-12), h = std::max(y1 - y0, 1e-12);
    const double t = static_cast<double>(target_patches);
    Index gx = std::max<Index>(1, static_cast<Index>(std::llround(std::sqrt(t * w / h))));
    gx = std::min<Index>(gx, target_patches);
    const Index gy = std::max<Index>(1, static_cast<Index>(std::llround(t / static_cast<double>(gx))));
    std::vector<Index> cell(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        const Index cx = std::min<Index>(gx - 1, static_cast<Index>((coords(i, 0) - x0) / w * static_cast<double>(gx)));
        const Index cy = std::min<Index>(gy - 1, static_cast<Index>((coords(i, 1) - y0) / h * static_cast<double>(gy)));
        cell[static_cast<std::size_t>(i)] = cy * gx + cx;
    }
    std::vector<Index> remap(static_cast<std::size_t>(gx * gy), -1);
    std::vector<char> occupied(remap.size(), 0);
    for (Index c : cell) occupied[static_cast<std::size_t>(c)] = 1;
    Index next = 0;
    for (std::size_t c = 0; c < remap.size(); ++c) {
        if (occupied[c]) remap[c] = next++;
    }
    for (Index i = 0; i < n; ++i) patch[static_cast<std::size_t>(i)] = remap[static_cast<std::size_t>(cell[static_cast<std::size_t>(i)])];
    return patch;
}

/// Points of each patch, in index order.
inline std::vector<std::vector<Index>> patch_members(const std::vector<Index>& patches)
{
    Index np = 0;
    for (Index p : patches) np = std::max(np, p + 1);
    std::vector<std::vector<Index>> out(static_cast<std::size_t>(np));
    for (std::size_t i = 0; i < patches.size(); ++i) out[static_cast<std::size_t>(patches[i])].push_back(static_cast<Index>(i));
    out.erase(std::remove_if(out.begin(), out.end(), [](const auto& v) { return v.empty(); }), out.end());
    return out;
}

/// n_side x n_side lattice split into K Voronoi regions around seeded centres.
/// Region means are pairwise `sep` apart when d >= K (random orthogonal
/// directions), noise is unit variance.
inline Dataset synth_spatial(Index n_side, Index K, Index d, std::uint64_t seed, double sep = 20.0)
{
    if (n_side < 1 || K < 1 || d < 1) throw ConfigError("synth_spatial: bad sizes");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, static_cast<double>(n_side));
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix centres(K, 2);
    for (Index k = 0; k < K; ++k) {
        centres(k, 0) = unif(rng);
        centres(k, 1) = unif(rng);
    }
    Matrix means(K, d);
    if (d >= K) {
        Matrix A(d, d);
        for (Index c = 0; c < d; ++c)
            for (Index r = 0; r < d; ++r) A(r, c) = normal(rng);
        const Matrix Q = Eigen::HouseholderQR<Matrix>(A).householderQ();
        for (Index k = 0; k < K; ++k) means.row(k) = sep / std::sqrt(2.0) * Q.col(k).transpose();
    } else {
        for (Index k = 0; k < K; ++k) {
            Vector v(d);
            for (Index j = 0; j < d; ++j) v(j) = normal(rng);
            means.row(k) = sep / std::sqrt(2.0) * v.normalized().transpose();
        }
    }

    const Index n = n_side * n_side;
    Dataset ds;
    ds.X.resize(n, d);
    Matrix coords(n, 2);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (Index r = 0; r < n_side; ++r) {
        for (Index c = 0; c < n_side; ++c) {
            const Index i = r * n_side + c;
            coords(i, 0) = static_cast<double>(c) + 0.5;
            coords(i, 1) = static_cast<double>(r) + 0.5;
            Index best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (Index k = 0; k < K; ++k) {
                const double d2 = (coords.row(i) - centres.row(k)).squaredNorm();
                if (d2 < bd) {
                    bd = d2;
                    best = k;
                }
            }
            labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
            for (Index j = 0; j < d; ++j) ds.X(i, j) = means(best, j) + normal(rng);
        }
    }
    ds.coords = std::move(coords);
    ds.true_labels = std::move(labels);
    GaussianMixtureSummary mix;
    mix.weights = Vector::Constant(K, 1.0 / static_cast<double>(K));
    mix.means = means;
    mix.variances = Matrix::Ones(K, d);
    ds.true_mixture = std::move(mix);
    return ds;
}

// ---------------------------------------------------------------------------
// Table I/O
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_row(const std::string& line, char delim)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, delim)) out.push_back(cell);
    if (!line.empty() && line.back() == delim) out.emplace_back();
    return out;
}

inline std::string trim(const std::string& s)
{
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline double parse_cell(const std::string& raw, std::size_t line, const std::string& column)
{
    const std::string s = trim(raw);
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (...) {
        used = 0;
    }
    if (s.empty() || used != s.size()) {
        throw ConfigError("line " + std::to_string(line) + ", column '" + column + "': not a number: '" + s + "'");
    }
    if (!std::isfinite(v)) throw ConfigError("line " + std::to_string(line) + ", column '" + column + "': not finite");
    return v;
}

} // namespace detail

/// Reads a comma- or tab-separated table with a header of `x0..x{d-1}`,
/// optional `cx,cy` and optional `label` columns (any order).
inline Dataset load_table(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::string header;
    if (!std::getline(in, header)) throw ConfigError(path + ": empty file");
    const char delim = header.find('\t') != std::string::npos ? '\t' : ',';
    const auto names = detail::split_row(header, delim);
    std::vector<int> feature_col;
    int cx = -1, cy = -1, lab = -1;
    std::vector<std::pair<int, int>> feats; // (feature index, column)
    for (std::size_t c = 0; c < names.size(); ++c) {
        const std::string nm = detail::trim(names[c]);
        if (nm == "cx") cx = static_cast<int>(c);
        else if (nm == "cy") cy = static_cast<int>(c);
        else if (nm == "label") lab = static_cast<int>(c);
        else if (nm.size() > 1 && nm[0] == 'x' && std::all_of(nm.begin() + 1, nm.end(), ::isdigit)) {
            feats.emplace_back(std::stoi(nm.substr(1)), static_cast<int>(c));
        } else {
            throw ConfigError(path + ": line 1: unknown column '" + nm + "'");
        }
    }
    if (feats.empty()) throw ConfigError(path + ": line 1: no feature columns");
    if ((cx < 0) != (cy < 0)) throw ConfigError(path + ": line 1: cx and cy must appear together");
    std::sort(feats.begin(), feats.end());
    for (std::size_t k = 0; k < feats.size(); ++k) {
        if (feats[k].first != static_cast<int>(k)) throw ConfigError(path + ": line 1: feature columns must be x0..x{d-1}");
    }

    std::vector<std::vector<double>> rows;
    std::vector<double> cxs, cys;
    std::vector<int> labels;
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_row(line, delim);
        if (cells.size() != names.size()) {
            throw ConfigError(path + ": line " + std::to_string(lineno) + ": expected " + std::to_string(names.size()) +
                              " fields, found " + std::to_string(cells.size()));
        }
        std::vector<double> r(feats.size());
        for (std::size_t k = 0; k < feats.size(); ++k) {
            r[k] = detail::parse_cell(cells[static_cast<std::size_t>(feats[k].second)], lineno, names[static_cast<std::size_t>(feats[k].second)]);
        }
        rows.push_back(std::move(r));
        if (cx >= 0) {
            cxs.push_back(detail::parse_cell(cells[static_cast<std::size_t>(cx)], lineno, "cx"));
            cys.push_back(detail::parse_cell(cells[static_cast<std::size_t>(cy)], lineno, "cy"));
        }
        if (lab >= 0) {
            const double v = detail::parse_cell(cells[static_cast<std::size_t>(lab)], lineno, "label");
            if (v != std::floor(v) || v < 0) throw ConfigError(path + ": line " + std::to_string(lineno) + ": label must be a non-negative integer");
            labels.push_back(static_cast<int>(v));
        }
    }
    Dataset ds;
    ds.X.resize(static_cast<Index>(rows.size()), static_cast<Index>(feats.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < feats.size(); ++j) ds.X(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    if (cx >= 0) {
        Matrix c(static_cast<Index>(rows.size()), 2);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            c(static_cast<Index>(i), 0) = cxs[i];
            c(static_cast<Index>(i), 1) = cys[i];
        }
        ds.coords = std::move(c);
    }
    if (lab >= 0) ds.true_labels = std::move(labels);
    return ds;
}

/// Writes the table format read by load_table (comma-separated, full precision).
inline void save_table(const Dataset& ds, const std::string& path)
{
    ds.validate();
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << std::setprecision(17);
    for (Index j = 0; j < ds.dim(); ++j) out << (j ? "," : "") << 'x' << j;
    if (ds.coords) out << ",cx,cy";
    if (ds.true_labels) out << ",label";
    out << '\n';
    for (Index i = 0; i < ds.n(); ++i) {
        for (Index j = 0; j < ds.dim(); ++j) out << (j ? "," : "") << ds.X(i, j);
        if (ds.coords) out << ',' << (*ds.coords)(i, 0) << ',' << (*ds.coords)(i, 1);
        if (ds.true_labels) out << ',' << (*ds.true_labels)[static_cast<std::size_t>(i)];
        out << '\n';
    }
    if (!out) throw ConfigError("write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

struct PreprocessSpec {
    Index top_features = 0; // 0 keeps every non-constant feature
    bool normalize_depth = true;
    bool log1p = true;
    double scale_clip = 10.0;
};

/// Depth normalisation to the median row total, log1p, selection of the
/// top-variance features, per-column standardisation and clipping at
/// +-scale_clip. Constant columns are never selected.
inline Dataset preprocess(const Dataset& in, const PreprocessSpec& spec)
{
    if (spec.top_features < 0 || spec.top_features > in.dim()) throw ConfigError("preprocess: top_features must lie in [0, d]");
    if (!(spec.scale_clip > 0.0)) throw ConfigError("preprocess: scale_clip must be > 0");
    Matrix X = in.X;
    if (spec.normalize_depth) {
        if ((X.array() < 0.0).any()) throw DomainError("X", "depth normalisation needs non-negative values");
        Vector totals = X.rowwise().sum();
        std::vector<double> tv(totals.data(), totals.data() + totals.size());
        std::nth_element(tv.begin(), tv.begin() + static_cast<std::ptrdiff_t>(tv.size() / 2), tv.end());
        const double median = tv.empty() ? 1.0 : tv[tv.size() / 2];
        for (Index i = 0; i < X.rows(); ++i) {
            if (totals(i) > 0.0) X.row(i) *= median / totals(i);
        }
    }
    if (spec.log1p) {
        if ((X.array() <= -1.0).any()) throw DomainError("X", "log1p needs values > -1");
        X = X.array().log1p().matrix();
    }
    const Eigen::RowVectorXd mean = X.colwise().mean();
    const Eigen::RowVectorXd var = (X.rowwise() - mean).array().square().colwise().mean();
    std::vector<Index> cols;
    for (Index j = 0; j < X.cols(); ++j) {
        if (var(j) > 1e-12 * std::max(1.0, mean(j) * mean(j))) cols.push_back(j);
    }
    std::stable_sort(cols.begin(), cols.end(), [&](Index a, Index b) { return var(a) > var(b); });
    if (spec.top_features > 0 && static_cast<Index>(cols.size()) > spec.top_features) cols.resize(static_cast<std::size_t>(spec.top_features));
    std::sort(cols.begin(), cols.end());

    Dataset out;
    out.X.resize(X.rows(), static_cast<Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) {
        const Index j = cols[c];
        out.X.col(static_cast<Index>(c)) =
            ((X.col(j).array() - mean(j)) / std::sqrt(var(j))).cwiseMax(-spec.scale_clip).cwiseMin(spec.scale_clip).matrix();
    }
    out.coords = in.coords;
    out.true_labels = in.true_labels;
    return out;
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

struct GmmPreset {
    Index n = 10000;
    Index K = 5;
    Index d = 10;
    Index batch_size = 100;
    double bias = 0.9;
    double sigma0_sq = 1.0; // generating noise variance
    double sigma1_sq = 4.0; // generating prior variance of the centres
};

/// gmm-desk (10x below the full-size setting) or gmm-full.
inline GmmPreset gmm_preset(bool full = false)
{
    GmmPreset p;
    if (full) {
        p.n = 100000;
        p.batch_size = 1000;
    }
    return p;
}

inline GmmHyperParams generating_hyper(const GmmPreset& p)
{
    GmmHyperParams h;
    h.K = p.K;
    h.xi = Vector::Zero(p.d);
    h.sigma0_sq = Vector::Constant(p.d, p.sigma0_sq);
    h.sigma1_sq = Vector::Constant(p.d, p.sigma1_sq);
    return h;
}

struct QuadPreset {
    Index n = 200;
    Index d_phi = 5;
    Index d_lambda = 5;
    double cond = 1000.0;
    Index batch_size = 20;
};

inline QuadPreset quad_preset(bool full = false)
{
    QuadPreset p;
    if (full) {
        p.n = 10000;
        p.batch_size = 1000;
    }
    return p;
}

struct SpatialPreset {
    Index n_side = 30;
    Index K = 4;
    Index d = 5;
    double sep = 20.0;
    Index knn = 6;
    double tau = 0.5;
    Index patches = 9;
    Index batches = 3;
};

inline SpatialPreset spatial_preset(bool full = false)
{
    SpatialPreset p;
    if (full) {
        p.n_side = 100;
        p.patches = 30;
        p.batches = 10;
    }
    return p;
}

} // namespace pdvi
