#pragma once

// Independent reference computations for the test suite. Nothing here calls
// into the library's numerical routines.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hpnp/image.hpp"
#include "hpnp/patches.hpp"
#include "hpnp/sensing.hpp"

namespace oracle {

// Singular values of an r x 2 matrix (r = 2 or 3). sigma_1 comes from the
// closed-form Gram eigenvalue; sigma_2 = |det| / sigma_1 (2 x 2) or
// |c0 x c1| / sigma_1 (3 x 2), which stays accurate for nearly rank-one
// input. Values below 1e-12 sigma_1 are numerical rank deficiency and read as 0.
inline std::array<double, 2> singular_values_n2(const Eigen::MatrixXd& a)
{
    double p = 0.0, q = 0.0, r = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        p += a(i, 0) * a(i, 0);
        q += a(i, 0) * a(i, 1);
        r += a(i, 1) * a(i, 1);
    }
    const double mean = 0.5 * (p + r);
    const double disc = std::sqrt(0.25 * (p - r) * (p - r) + q * q);
    const double s1 = std::sqrt(mean + disc);
    if (s1 == 0.0)
        return {0.0, 0.0};
    double area = 0.0;
    if (a.rows() == 2) {
        area = std::abs(a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0));
    } else {
        const Eigen::Vector3d c0 = a.col(0), c1 = a.col(1);
        area = c0.cross(c1).norm();
    }
    double s2 = std::min(area / s1, s1);
    if (s2 < 1e-12 * s1)
        s2 = 0.0;
    return {s1, s2};
}

inline double weighted_objective(const Eigen::MatrixXd& x, const Eigen::MatrixXd& l, double theta,
    const std::array<double, 2>& w)
{
    const auto s = singular_values_n2(l);
    return 0.5 * (x - l).squaredNorm() + theta * (w[0] * s[0] + w[1] * s[1]);
}

// Best frozen-weight objective over `samples` candidates: a grid of rescaled
// truncations of x, random matrices in a box around x, and random
// perturbations of `hint` at several scales.
inline double best_candidate_objective(const Eigen::MatrixXd& x, const Eigen::MatrixXd& hint, double theta,
    const std::array<double, 2>& w, std::size_t samples, std::uint64_t seed)
{
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double scale = std::max(1.0, x.cwiseAbs().maxCoeff());
    double best = weighted_objective(x, Eigen::MatrixXd::Zero(x.rows(), x.cols()), theta, w);
    best = std::min(best, weighted_objective(x, x, theta, w));

    Eigen::MatrixXd cand(x.rows(), x.cols());
    const std::size_t grid = samples / 4;
    for (std::size_t k = 0; k < grid; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(grid);
        best = std::min(best, weighted_objective(x, t * x, theta, w));
        best = std::min(best, weighted_objective(x, t * hint, theta, w));
    }
    for (std::size_t k = 2 * grid; k < samples; ++k) {
        const bool local = (k % 2) == 0;
        const double spread = local ? scale * std::pow(10.0, -static_cast<double>(k % 8) / 2.0) : 2.0 * scale;
        const Eigen::MatrixXd& centre = local ? hint : x;
        for (Eigen::Index i = 0; i < cand.size(); ++i)
            cand.data()[i] = centre.data()[i] + spread * normal(gen);
        best = std::min(best, weighted_objective(x, cand, theta, w));
    }
    return best;
}

// Pixel-by-pixel scatter-add of every group column.
inline hpnp::Image scatter_add(const std::vector<Eigen::MatrixXd>& groups, const hpnp::PatchGroupIndex& index)
{
    hpnp::Image sum(index.height, index.width);
    const std::size_t side = index.geometry.patch_side;
    for (std::size_t i = 0; i < groups.size(); ++i)
        for (std::size_t j = 0; j < index.group_size(); ++j) {
            const auto p = index.neighbor(i, j);
            std::size_t k = 0;
            for (std::size_t r = 0; r < side; ++r)
                for (std::size_t c = 0; c < side; ++c, ++k)
                    sum(p.row + r, p.col + c) = sum(p.row + r, p.col + c) + groups[i](static_cast<Eigen::Index>(k),
                                                                                static_cast<Eigen::Index>(j));
        }
    return sum;
}

// Exhaustive ranking of every candidate in the (clamped) window, reference first.
inline std::vector<hpnp::PatchCoord> brute_force_neighbors(const hpnp::Image& img, const hpnp::PatchGeometry& g,
    hpnp::PatchCoord ref)
{
    const long pos_y = static_cast<long>(img.height() - g.patch_side + 1);
    const long pos_x = static_cast<long>(img.width() - g.patch_side + 1);
    const long wy = std::min<long>(static_cast<long>(g.window), pos_y);
    const long wx = std::min<long>(static_cast<long>(g.window), pos_x);
    const long y0 = std::clamp<long>(static_cast<long>(ref.row) - static_cast<long>(g.window / 2), 0, pos_y - wy);
    const long x0 = std::clamp<long>(static_cast<long>(ref.col) - static_cast<long>(g.window / 2), 0, pos_x - wx);

    struct Cand {
        double d;
        long linear;
        hpnp::PatchCoord p;
    };
    std::vector<Cand> all;
    for (long r = y0; r < y0 + wy; ++r)
        for (long c = x0; c < x0 + wx; ++c) {
            if (r == ref.row && c == ref.col)
                continue;
            double d = 0.0;
            for (std::size_t a = 0; a < g.patch_side; ++a)
                for (std::size_t b = 0; b < g.patch_side; ++b) {
                    const double diff = img(ref.row + a, ref.col + b) - img(static_cast<std::size_t>(r) + a,
                                                                             static_cast<std::size_t>(c) + b);
                    d += diff * diff;
                }
            all.push_back({d, r * static_cast<long>(img.width()) + c,
                {static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c)}});
        }
    std::stable_sort(all.begin(), all.end(), [](const Cand& a, const Cand& b) {
        return a.d != b.d ? a.d < b.d : a.linear < b.linear;
    });
    std::vector<hpnp::PatchCoord> out{ref};
    for (std::size_t k = 0; k + 1 < g.group_size; ++k)
        out.push_back(all[k].p);
    return out;
}

// A fully specified quadratic instance: fixed low-rank targets L_i, fixed z and c.
struct QuadraticInstance {
    hpnp::BlockSensor sensor;
    hpnp::Measurements meas;
    hpnp::Image z;
    hpnp::Image c;
    hpnp::PatchGroupIndex index;
    std::vector<Eigen::MatrixXd> targets;
    double mu = 0.0;
    double tau = 0.0;
};

// F(x) = 1/2 ||y - Phi x||^2 + mu/2 sum_i ||R_i x - L_i||_F^2 + tau/2 ||x - z - c||^2,
// evaluated block by block and patch by patch in long double.
inline double quadratic_objective(const QuadraticInstance& q, const hpnp::Image& x)
{
    const std::size_t bs = q.sensor.block_size;
    long double fid = 0.0L;
    for (std::size_t by = 0; by < q.meas.blocks_y; ++by)
        for (std::size_t bx = 0; bx < q.meas.blocks_x; ++bx) {
            const auto col = static_cast<Eigen::Index>(by * q.meas.blocks_x + bx);
            for (Eigen::Index r = 0; r < q.sensor.matrix.rows(); ++r) {
                long double acc = 0.0L;
                for (std::size_t a = 0; a < bs; ++a)
                    for (std::size_t b = 0; b < bs; ++b)
                        acc += static_cast<long double>(q.sensor.matrix(r, static_cast<Eigen::Index>(a * bs + b)))
                            * x(by * bs + a, bx * bs + b);
                const long double d = q.meas.data(r, col) - acc;
                fid += d * d;
            }
        }
    long double lr = 0.0L;
    const std::size_t side = q.index.geometry.patch_side;
    for (std::size_t i = 0; i < q.targets.size(); ++i)
        for (std::size_t j = 0; j < q.index.group_size(); ++j) {
            const auto p = q.index.neighbor(i, j);
            for (std::size_t a = 0; a < side; ++a)
                for (std::size_t b = 0; b < side; ++b) {
                    const long double d = x(p.row + a, p.col + b)
                        - q.targets[i](static_cast<Eigen::Index>(a * side + b), static_cast<Eigen::Index>(j));
                    lr += d * d;
                }
        }
    long double prox = 0.0L;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const long double d = static_cast<long double>(x[k]) - q.z[k] - q.c[k];
        prox += d * d;
    }
    return static_cast<double>(0.5L * fid + 0.5L * q.mu * lr + 0.5L * q.tau * prox);
}

// Central difference of F along d.
inline double directional_derivative(const QuadraticInstance& q, const hpnp::Image& x, const hpnp::Image& d, double h)
{
    hpnp::Image plus = x, minus = x;
    for (std::size_t k = 0; k < x.size(); ++k) {
        plus[k] += h * d[k];
        minus[k] -= h * d[k];
    }
    return (quadratic_objective(q, plus) - quadratic_objective(q, minus)) / (2.0 * h);
}

} // namespace oracle
