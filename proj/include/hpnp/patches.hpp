#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hpnp/error.hpp"
#include "hpnp/image.hpp"
#include "hpnp/parallel.hpp"

namespace hpnp {

struct PatchGeometry {
    std::size_t patch_side = 7;
    std::size_t stride = 4;
    std::size_t group_size = 60;
    std::size_t window = 20;

    std::size_t patch_pixels() const { return patch_side * patch_side; }

    void validate() const
    {
        if (patch_side < 1 || stride < 1 || group_size < 1)
            throw Error(Errc::invalid_argument, "patch side, stride and group size must be positive");
        if (patch_side > window)
            throw Error(Errc::invalid_argument, "patch side exceeds search window");
    }
};

struct PatchCoord {
    std::uint32_t row = 0;
    std::uint32_t col = 0;

    friend bool operator==(const PatchCoord&, const PatchCoord&) = default;
};

/// Top-left corners of the reference patches and of their similar patches.
/// neighbor(i, 0) is always the reference itself.
struct PatchGroupIndex {
    std::size_t height = 0;
    std::size_t width = 0;
    PatchGeometry geometry;
    std::vector<PatchCoord> refs;
    std::vector<PatchCoord> neighbors;  // refs.size() x group_size, row-major

    std::size_t group_count() const { return refs.size(); }
    std::size_t group_size() const { return geometry.group_size; }

    const PatchCoord& neighbor(std::size_t i, std::size_t j) const { return neighbors[i * geometry.group_size + j]; }
};

/// b x m matrix whose column j is the patch at neighbor(i, j), vectorized row by row.
using GroupMatrix = Eigen::MatrixXd;

/// Stride grid 0, s, 2s, ... plus a final position flush with the far edge.
inline std::vector<std::size_t> reference_positions(std::size_t length, std::size_t patch_side, std::size_t stride)
{
    std::vector<std::size_t> pos;
    const std::size_t last = length - patch_side;
    for (std::size_t p = 0; p <= last; p += stride)
        pos.push_back(p);
    if (pos.back() != last)
        pos.push_back(last);
    return pos;
}

/// First top-left position of the search window along one axis, shifted
/// inward at the borders.
inline std::size_t window_start(std::size_t ref, std::size_t positions, std::size_t window)
{
    if (positions <= window)
        return 0;
    const std::size_t half = window / 2;
    const std::size_t start = ref > half ? ref - half : 0;
    return std::min(start, positions - window);
}

inline double patch_distance(const Image& img, PatchCoord a, PatchCoord b, std::size_t side)
{
    double d = 0.0;
    for (std::size_t r = 0; r < side; ++r) {
        const double* pa = &img.data()[(a.row + r) * img.width() + a.col];
        const double* pb = &img.data()[(b.row + r) * img.width() + b.col];
        for (std::size_t c = 0; c < side; ++c) {
            const double diff = pa[c] - pb[c];
            d += diff * diff;
        }
    }
    return d;
}

inline PatchGroupIndex build_group_index(const Image& img, const PatchGeometry& geom,
    ExecutionMode mode = ExecutionMode::parallel)
{
    geom.validate();
    if (img.height() < geom.patch_side || img.width() < geom.patch_side)
        throw Error(Errc::dimension_mismatch, "image smaller than patch side");

    const std::size_t pos_y = img.height() - geom.patch_side + 1;
    const std::size_t pos_x = img.width() - geom.patch_side + 1;
    const std::size_t win_y = std::min(geom.window, pos_y);
    const std::size_t win_x = std::min(geom.window, pos_x);
    if (win_y * win_x < geom.group_size)
        throw Error(Errc::invalid_argument,
            "group size " + std::to_string(geom.group_size) + " exceeds the " + std::to_string(win_y * win_x)
                + " candidates in the search window");

    PatchGroupIndex index;
    index.height = img.height();
    index.width = img.width();
    index.geometry = geom;
    for (std::size_t r : reference_positions(img.height(), geom.patch_side, geom.stride))
        for (std::size_t c : reference_positions(img.width(), geom.patch_side, geom.stride))
            index.refs.push_back({static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c)});
    index.neighbors.resize(index.refs.size() * geom.group_size);

    parallel_for(index.refs.size(), mode, [&](std::size_t i) {
        const PatchCoord ref = index.refs[i];
        const std::size_t y0 = window_start(ref.row, pos_y, win_y);
        const std::size_t x0 = window_start(ref.col, pos_x, win_x);
        // (distance, linear index of the top-left pixel)
        std::vector<std::pair<double, std::size_t>> cand;
        cand.reserve(win_y * win_x);
        for (std::size_t r = y0; r < y0 + win_y; ++r)
            for (std::size_t c = x0; c < x0 + win_x; ++c) {
                if (r == ref.row && c == ref.col)
                    continue;
                const PatchCoord p{static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c)};
                cand.emplace_back(patch_distance(img, ref, p, geom.patch_side), r * img.width() + c);
            }
        const std::size_t keep = geom.group_size - 1;
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end());
        PatchCoord* out = &index.neighbors[i * geom.group_size];
        out[0] = ref;
        for (std::size_t j = 0; j < keep; ++j)
            out[j + 1] = {static_cast<std::uint32_t>(cand[j].second / img.width()),
                static_cast<std::uint32_t>(cand[j].second % img.width())};
    });
    return index;
}

inline void check_index_shape(const Image& img, const PatchGroupIndex& index)
{
    if (img.height() != index.height || img.width() != index.width)
        throw Error(Errc::dimension_mismatch, "image does not match patch index geometry");
}

inline GroupMatrix extract_group(const Image& img, const PatchGroupIndex& index, std::size_t i)
{
    check_index_shape(img, index);
    if (i >= index.group_count())
        throw Error(Errc::invalid_argument, "group id " + std::to_string(i) + " out of range");
    const std::size_t side = index.geometry.patch_side;
    GroupMatrix g(static_cast<Eigen::Index>(side * side), static_cast<Eigen::Index>(index.group_size()));
    for (std::size_t j = 0; j < index.group_size(); ++j) {
        const PatchCoord p = index.neighbor(i, j);
        for (std::size_t r = 0; r < side; ++r)
            for (std::size_t c = 0; c < side; ++c)
                g(static_cast<Eigen::Index>(r * side + c), static_cast<Eigen::Index>(j)) = img(p.row + r, p.col + c);
    }
    return g;
}

/// Sum of R_i^T L_i together with the coverage map C, where C[p] counts the
/// (group, column) pairs covering pixel p so that sum R_i^T R_i = diag(C).
struct Aggregate {
    Image sum;
    WeightMap counts;
};

inline WeightMap coverage_counts(const PatchGroupIndex& index)
{
    WeightMap counts(index.height, index.width);
    const std::size_t side = index.geometry.patch_side;
    for (std::size_t i = 0; i < index.group_count(); ++i)
        for (std::size_t j = 0; j < index.group_size(); ++j) {
            const PatchCoord p = index.neighbor(i, j);
            for (std::size_t r = 0; r < side; ++r)
                for (std::size_t c = 0; c < side; ++c)
                    counts(p.row + r, p.col + c) += 1.0;
        }
    return counts;
}

namespace detail {

inline void scatter_groups(const std::vector<GroupMatrix>& groups, const PatchGroupIndex& index,
    std::size_t begin, std::size_t end, Image& sum)
{
    const std::size_t side = index.geometry.patch_side;
    for (std::size_t i = begin; i < end; ++i) {
        const GroupMatrix& g = groups[i];
        for (std::size_t j = 0; j < index.group_size(); ++j) {
            const PatchCoord p = index.neighbor(i, j);
            for (std::size_t r = 0; r < side; ++r)
                for (std::size_t c = 0; c < side; ++c)
                    sum(p.row + r, p.col + c) += g(static_cast<Eigen::Index>(r * side + c), static_cast<Eigen::Index>(j));
        }
    }
}

} // namespace detail

/// Sequential mode adds groups in index order. Parallel mode accumulates
/// contiguous chunks separately and merges them in chunk order, so its result
/// is deterministic for a given thread budget but may differ from the
/// sequential sum by rounding.
inline Aggregate aggregate(const std::vector<GroupMatrix>& groups, const PatchGroupIndex& index,
    ExecutionMode mode = ExecutionMode::sequential)
{
    if (groups.size() != index.group_count())
        throw Error(Errc::dimension_mismatch, "group count does not match index");
    const auto b = static_cast<Eigen::Index>(index.geometry.patch_pixels());
    const auto m = static_cast<Eigen::Index>(index.group_size());
    for (const auto& g : groups)
        if (g.rows() != b || g.cols() != m)
            throw Error(Errc::dimension_mismatch, "group matrix shape does not match geometry");

    Aggregate out{Image(index.height, index.width), coverage_counts(index)};
    const std::size_t chunks = mode == ExecutionMode::parallel
        ? std::min<std::size_t>(static_cast<std::size_t>(thread_budget()), groups.size())
        : 1;
    if (chunks <= 1) {
        detail::scatter_groups(groups, index, 0, groups.size(), out.sum);
        return out;
    }
    std::vector<Image> partial(chunks, Image(index.height, index.width));
    const std::size_t per = (groups.size() + chunks - 1) / chunks;
    parallel_for(chunks, ExecutionMode::parallel, [&](std::size_t t) {
        const std::size_t begin = std::min(groups.size(), t * per);
        const std::size_t end = std::min(groups.size(), begin + per);
        detail::scatter_groups(groups, index, begin, end, partial[t]);
    });
    for (const Image& p : partial)
        for (std::size_t k = 0; k < p.size(); ++k)
            out.sum[k] += p[k];
    return out;
}

} // namespace hpnp
