#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchalign/rng.hpp"
#include "patchalign/synthdata.hpp"

namespace patchalign {

/// Non-overlapping patch tiling anchored at the top-left corner. Border
/// pixels beyond rows * patch_h or cols * patch_w belong to no patch.
struct PatchGrid {
    std::size_t patch_h = 8;
    std::size_t patch_w = 8;
    std::size_t rows = 0;  // U
    std::size_t cols = 0;  // V

    static PatchGrid fit(std::size_t height, std::size_t width, std::size_t patch_h, std::size_t patch_w) {
        if (patch_h < 2 || patch_w < 2) throw std::invalid_argument("patch grid: patches must be at least 2x2");
        if (patch_h > height || patch_w > width)
            throw std::invalid_argument("patch grid: patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                                        " does not fit a " + std::to_string(height) + "x" + std::to_string(width) +
                                        " map");
        return {patch_h, patch_w, height / patch_h, width / patch_w};
    }

    std::size_t cells() const { return rows * cols; }
    std::size_t covered_height() const { return rows * patch_h; }
    std::size_t covered_width() const { return cols * patch_w; }
};

/// Four per-quadrant class-frequency blocks (TL, TR, BL, BR), 4*C entries.
using PatchHistogram = std::vector<double>;

/**
 * Spatial label histogram of the patch_h x patch_w window at (top, left).
 * Quadrants split at floor(patch_h/2), floor(patch_w/2); each quadrant is
 * normalized over its non-void pixels, and an all-void quadrant stays zero.
 */
inline PatchHistogram extract_patch_histogram(const LabelMap& map, std::size_t top, std::size_t left,
                                              std::size_t patch_h, std::size_t patch_w, int num_classes) {
    if (patch_h < 2 || patch_w < 2) throw std::invalid_argument("extract_patch_histogram: patch must be at least 2x2");
    if (top + patch_h > map.height || left + patch_w > map.width)
        throw std::out_of_range("extract_patch_histogram: patch outside the label map");
    const auto c = static_cast<std::size_t>(num_classes);
    PatchHistogram hist(4 * c, 0.0);
    const std::size_t rows[3] = {0, patch_h / 2, patch_h};
    const std::size_t cols[3] = {0, patch_w / 2, patch_w};
    for (std::size_t q = 0; q < 4; ++q) {
        const std::size_t qr = q / 2, qc = q % 2;
        std::size_t counted = 0;
        for (std::size_t y = rows[qr]; y < rows[qr + 1]; ++y)
            for (std::size_t x = cols[qc]; x < cols[qc + 1]; ++x) {
                const auto v = map.at(top + y, left + x);
                if (v == LabelMap::kIgnore) continue;
                if (v >= num_classes)
                    throw std::out_of_range("extract_patch_histogram: class id " + std::to_string(v) +
                                            " >= num_classes " + std::to_string(num_classes));
                hist[q * c + v] += 1.0;
                ++counted;
            }
        if (counted > 0)
            for (std::size_t k = 0; k < c; ++k) hist[q * c + k] /= static_cast<double>(counted);
    }
    return hist;
}

/// Whole label map treated as a single patch.
inline PatchHistogram extract_patch_histogram(const LabelMap& patch, int num_classes) {
    return extract_patch_histogram(patch, 0, 0, patch.height, patch.width, num_classes);
}

/// Histograms of n (image, grid cell) pairs drawn uniformly with replacement.
inline std::vector<PatchHistogram> sample_patches(std::span<const LabelMap> label_maps, const PatchGrid& grid,
                                                  std::size_t n, std::uint64_t seed, int num_classes,
                                                  std::size_t num_clusters) {
    if (label_maps.empty()) throw std::invalid_argument("sample_patches: no label maps");
    if (n < num_clusters)
        throw std::invalid_argument("sample_patches: " + std::to_string(n) + " samples is fewer than K = " +
                                    std::to_string(num_clusters));
    for (const auto& m : label_maps)
        if (m.height < grid.covered_height() || m.width < grid.covered_width())
            throw std::invalid_argument("sample_patches: grid does not fit every label map");
    CounterRng rng(stream_key(seed, stream_tag::kPatchSample));
    std::vector<PatchHistogram> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto image = static_cast<std::size_t>(rng.below(label_maps.size()));
        const auto cell = static_cast<std::size_t>(rng.below(grid.cells()));
        const std::size_t u = cell / grid.cols, v = cell % grid.cols;
        out.push_back(extract_patch_histogram(label_maps[image], u * grid.patch_h, v * grid.patch_w, grid.patch_h,
                                              grid.patch_w, num_classes));
    }
    return out;
}

// ---------------------------------------------------------------------------
// K-means
// ---------------------------------------------------------------------------

struct ClusterModel {
    std::size_t num_clusters = 0;  // K
    std::size_t dim = 0;
    std::vector<double> centroids;  // K x dim, row-major
    double inertia = 0.0;
    /// Inertia after every assignment step, first entry from the initial centroids.
    std::vector<double> inertia_history;
    std::size_t iterations = 0;

    std::span<const double> centroid(std::size_t k) const { return {centroids.data() + k * dim, dim}; }
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

/// Nearest centroid by squared Euclidean distance; ties go to the lowest id.
inline std::size_t assign_cluster(std::span<const double> h, const ClusterModel& model) {
    if (h.size() != model.dim)
        throw std::invalid_argument("assign_cluster: histogram length " + std::to_string(h.size()) +
                                    " does not match centroid dimension " + std::to_string(model.dim));
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < model.num_clusters; ++k) {
        const double d = squared_distance(h, model.centroid(k));
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

namespace detail {

inline void check_vectors(const std::vector<std::vector<double>>& vectors, std::size_t k) {
    if (k == 0) throw std::invalid_argument("kmeans: K must be positive");
    if (vectors.size() < k)
        throw std::invalid_argument("kmeans: " + std::to_string(vectors.size()) + " vectors is fewer than K = " +
                                    std::to_string(k));
    const std::size_t d = vectors.front().size();
    if (d == 0) throw std::invalid_argument("kmeans: empty vectors");
    for (const auto& v : vectors) {
        if (v.size() != d) throw std::invalid_argument("kmeans: vectors differ in length");
        for (double x : v)
            if (!std::isfinite(x)) throw std::invalid_argument("kmeans: non-finite input");
    }
}

}  // namespace detail

/**
 * Lloyd iterations from the given centroids (K x dim, row-major). Stops when
 * the assignment no longer changes, when no centroid moves by `tol` or more,
 * or after `max_iter` updates. A cluster left empty by an update is moved
 * onto the point farthest from its own centroid.
 */
inline ClusterModel kmeans_lloyd(const std::vector<std::vector<double>>& vectors, std::vector<double> initial,
                                 std::size_t max_iter, double tol) {
    const std::size_t dim = vectors.empty() ? 0 : vectors.front().size();
    if (dim == 0 || initial.size() % dim != 0) throw std::invalid_argument("kmeans: bad initial centroids");
    const std::size_t k = initial.size() / dim;
    detail::check_vectors(vectors, k);
    const std::size_t n = vectors.size();

    ClusterModel model;
    model.num_clusters = k;
    model.dim = dim;
    model.centroids = std::move(initial);

    std::vector<std::size_t> labels(n);
    std::vector<double> dist(n);
    auto assign_all = [&] {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = assign_cluster(vectors[i], model);
            dist[i] = squared_distance(vectors[i], model.centroid(labels[i]));
            total += dist[i];
        }
        return total;
    };
    model.inertia = assign_all();
    model.inertia_history.push_back(model.inertia);

    std::vector<double> sums(k * dim);
    std::vector<std::size_t> counts(k);
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[labels[i]];
            for (std::size_t j = 0; j < dim; ++j) sums[labels[i] * dim + j] += vectors[i][j];
        }
        std::vector<double> next(k * dim);
        for (std::size_t c = 0; c < k; ++c)
            for (std::size_t j = 0; j < dim; ++j)
                next[c * dim + j] = counts[c] ? sums[c * dim + j] / static_cast<double>(counts[c]) : model.centroids[c * dim + j];
        for (std::size_t i = 0; i < n; ++i) dist[i] = squared_distance(vectors[i], {next.data() + labels[i] * dim, dim});
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] != 0) continue;
            std::size_t far = 0;
            for (std::size_t i = 1; i < n; ++i)
                if (dist[i] > dist[far]) far = i;
            if (dist[far] <= 0.0) break;  // every point sits on its centroid
            std::copy(vectors[far].begin(), vectors[far].end(), next.begin() + static_cast<std::ptrdiff_t>(c * dim));
            --counts[labels[far]];
            labels[far] = c;
            counts[c] = 1;
            dist[far] = 0.0;
        }
        double movement = 0.0;
        for (std::size_t c = 0; c < k; ++c)
            movement = std::max(movement, std::sqrt(squared_distance({next.data() + c * dim, dim},
                                                                     model.centroid(c))));
        model.centroids = std::move(next);
        const auto previous = labels;
        model.inertia = assign_all();
        model.inertia_history.push_back(model.inertia);
        model.iterations = iter + 1;
        if (labels == previous || movement < tol) break;
    }
    return model;
}

/// k-means++ seeding: first centroid uniform, then proportional to D^2.
inline std::vector<double> kmeans_plus_plus(const std::vector<std::vector<double>>& vectors, std::size_t k,
                                            std::uint64_t seed) {
    detail::check_vectors(vectors, k);
    const std::size_t n = vectors.size(), dim = vectors.front().size();
    CounterRng rng(stream_key(seed, stream_tag::kKMeans));
    std::vector<double> centroids;
    centroids.reserve(k * dim);
    const auto first = static_cast<std::size_t>(rng.below(n));
    centroids.insert(centroids.end(), vectors[first].begin(), vectors[first].end());
    std::vector<double> nearest(n);
    for (std::size_t i = 0; i < n; ++i) nearest[i] = squared_distance(vectors[i], {centroids.data(), dim});
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (double d : nearest) total += d;
        if (!(total > 0.0))
            throw std::invalid_argument("kmeans: only " + std::to_string(c) + " distinct vectors for K = " +
                                        std::to_string(k));
        const double target = rng.uniform() * total;
        double cum = 0.0;
        std::size_t pick = n;
        for (std::size_t i = 0; i < n; ++i) {
            cum += nearest[i];
            if (nearest[i] > 0.0 && cum > target) {
                pick = i;
                break;
            }
        }
        if (pick == n)  // rounding left target beyond the last positive weight
            for (std::size_t i = n; i-- > 0;)
                if (nearest[i] > 0.0) {
                    pick = i;
                    break;
                }
        centroids.insert(centroids.end(), vectors[pick].begin(), vectors[pick].end());
        const std::span<const double> added(centroids.data() + c * dim, dim);
        for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], squared_distance(vectors[i], added));
    }
    return centroids;
}

inline ClusterModel kmeans_fit(const std::vector<std::vector<double>>& vectors, std::size_t k, std::uint64_t seed,
                               std::size_t max_iter = 300, double tol = 1e-6) {
    return kmeans_lloyd(vectors, kmeans_plus_plus(vectors, k, seed), max_iter, tol);
}

// ---------------------------------------------------------------------------
// cluster maps
// ---------------------------------------------------------------------------

/// Gamma(Y): per grid cell cluster id, plus a mask that is false for cells
/// made only of void pixels.
struct ClusterMap {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::int32_t> ids;
    std::vector<std::uint8_t> valid;

    std::int32_t at(std::size_t u, std::size_t v) const { return ids[u * cols + v]; }

    /// One entry per cell, -1 where the cell is excluded.
    std::vector<std::int32_t> masked_ids() const {
        std::vector<std::int32_t> out(ids);
        for (std::size_t i = 0; i < out.size(); ++i)
            if (!valid[i]) out[i] = -1;
        return out;
    }

    std::size_t valid_count() const {
        std::size_t n = 0;
        for (auto v : valid) n += v ? 1 : 0;
        return n;
    }

    bool operator==(const ClusterMap&) const = default;
};

inline ClusterMap cluster_map(const LabelMap& labels, const PatchGrid& grid, const ClusterModel& model,
                              int num_classes) {
    if (labels.height < grid.covered_height() || labels.width < grid.covered_width() || grid.cells() == 0)
        throw std::invalid_argument("cluster_map: grid does not fit the label map");
    ClusterMap out;
    out.rows = grid.rows;
    out.cols = grid.cols;
    out.ids.resize(grid.cells());
    out.valid.resize(grid.cells());
    for (std::size_t u = 0; u < grid.rows; ++u)
        for (std::size_t v = 0; v < grid.cols; ++v) {
            const auto hist =
                extract_patch_histogram(labels, u * grid.patch_h, v * grid.patch_w, grid.patch_h, grid.patch_w, num_classes);
            out.ids[u * grid.cols + v] = static_cast<std::int32_t>(assign_cluster(hist, model));
            bool any = false;
            for (std::size_t y = 0; y < grid.patch_h && !any; ++y)
                for (std::size_t x = 0; x < grid.patch_w; ++x)
                    if (labels.at(u * grid.patch_h + y, v * grid.patch_w + x) != LabelMap::kIgnore) {
                        any = true;
                        break;
                    }
            out.valid[u * grid.cols + v] = any ? 1 : 0;
        }
    return out;
}

}  // namespace patchalign
