#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "hpnp/error.hpp"
#include "hpnp/image.hpp"
#include "hpnp/parallel.hpp"
#include "hpnp/patches.hpp"

namespace hpnp {

struct WnnmParams {
    double theta = 0.0;                         // lambda / mu
    double c_weight = 2.0 * std::numbers::sqrt2;
    double eps = 1e-16;
    double noise_floor = 0.0;

    void validate() const
    {
        if (!(theta >= 0.0) || !(eps > 0.0) || !(noise_floor >= 0.0) || !(c_weight >= 0.0))
            throw Error(Errc::invalid_argument, "WNNM parameters must be nonnegative (eps positive)");
    }
};

/// Thin SVD: U is rows x r, V is cols x r, singular values descending, r = min(rows, cols).
struct Svd {
    Eigen::MatrixXd u;
    Eigen::VectorXd s;
    Eigen::MatrixXd v;
};

inline Svd svd(const Eigen::MatrixXd& matrix)
{
    if (!matrix.allFinite())
        throw Error(Errc::numerical, "SVD input has non-finite entries");
    Eigen::BDCSVD<Eigen::MatrixXd> dec(matrix, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (dec.info() != Eigen::Success)
        throw Error(Errc::numerical, "SVD did not converge");
    return {dec.matrixU(), dec.singularValues(), dec.matrixV()};
}

/// WNNM weights w_j = c sqrt(m) / (sigma_hat_j + eps), with the clean
/// singular value estimated as sigma_hat_j^2 = max(sigma_j^2 - m * noise^2, 0).
inline Eigen::VectorXd wnnm_weights(const Eigen::VectorXd& singular, Eigen::Index columns, const WnnmParams& params)
{
    const double m = static_cast<double>(columns);
    Eigen::VectorXd w(singular.size());
    for (Eigen::Index j = 0; j < singular.size(); ++j) {
        const double s = singular(j);
        const double clean = std::sqrt(std::max(s * s - m * params.noise_floor * params.noise_floor, 0.0));
        w(j) = params.c_weight * std::sqrt(m) / (clean + params.eps);
    }
    return w;
}

struct WnnmResult {
    GroupMatrix low_rank;
    Eigen::VectorXd weights;
    Eigen::VectorXd shrunk;  // singular values of low_rank
};

/// Single-shot weighted singular value shrinkage of one group.
inline WnnmResult wnnm_shrink_detailed(const GroupMatrix& group, const WnnmParams& params)
{
    params.validate();
    const Svd dec = svd(group);
    WnnmResult out;
    out.weights = wnnm_weights(dec.s, group.cols(), params);
    out.shrunk.resize(dec.s.size());
    Eigen::Index rank = 0;
    for (Eigen::Index j = 0; j < dec.s.size(); ++j) {
        out.shrunk(j) = std::max(dec.s(j) - params.theta * out.weights(j), 0.0);
        if (out.shrunk(j) > 0.0)
            rank = j + 1;
    }
    // Weights grow as singular values fall, so the kept values are a prefix.
    out.low_rank = dec.u.leftCols(rank) * out.shrunk.head(rank).asDiagonal() * dec.v.leftCols(rank).transpose();
    if (rank == 0)
        out.low_rank = GroupMatrix::Zero(group.rows(), group.cols());
    return out;
}

inline GroupMatrix wnnm_shrink(const GroupMatrix& group, const WnnmParams& params)
{
    return wnnm_shrink_detailed(group, params).low_rank;
}

/// Low-rank estimates of every group plus their aggregation.
struct LowRankStack {
    std::vector<GroupMatrix> groups;
    Aggregate aggregate;
    double frobenius_sq = 0.0;  // sum_i ||L_i||_F^2
};

inline LowRankStack lowrank_pass(const Image& img, const PatchGroupIndex& index, const WnnmParams& params,
    ExecutionMode mode = ExecutionMode::parallel)
{
    check_index_shape(img, index);
    params.validate();
    LowRankStack out;
    out.groups.resize(index.group_count());
    parallel_for(index.group_count(), mode, [&](std::size_t i) {
        out.groups[i] = wnnm_shrink(extract_group(img, index, i), params);
    });
    out.aggregate = aggregate(out.groups, index, ExecutionMode::sequential);
    for (const auto& g : out.groups)
        out.frobenius_sq += g.squaredNorm();
    return out;
}

} // namespace hpnp
