#include <cmath>

#include <gtest/gtest.h>

#include "hpnp/lowrank.hpp"
#include "hpnp/rng.hpp"
#include "support/oracles.hpp"

using hpnp::GroupMatrix;
using hpnp::Image;
using hpnp::WnnmParams;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, hpnp::Xoshiro256pp& rng, double scale = 1.0)
{
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index k = 0; k < m.size(); ++k)
        m.data()[k] = scale * rng.normal();
    return m;
}

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed)
{
    hpnp::Xoshiro256pp rng(seed);
    Image img(h, w);
    for (double& v : img.data())
        v = rng.uniform(0.0, 255.0);
    return img;
}

Eigen::VectorXd singular_values(const Eigen::MatrixXd& m)
{
    return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues();
}

} // namespace

TEST(Svd, Diagonal)
{
    Eigen::MatrixXd d(2, 2);
    d << 3, 0, 0, 1;
    const auto s = hpnp::svd(d);
    EXPECT_NEAR(s.s(0), 3.0, 1e-14);
    EXPECT_NEAR(s.s(1), 1.0, 1e-14);
}

TEST(Svd, ZeroMatrix)
{
    const auto s = hpnp::svd(Eigen::MatrixXd::Zero(4, 3));
    EXPECT_EQ(s.s.size(), 3);
    EXPECT_EQ(s.s.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Svd, ReconstructsAndIsOrthogonal)
{
    hpnp::Xoshiro256pp rng(1);
    for (int t = 0; t < 5; ++t) {
        const Eigen::MatrixXd x = random_matrix(49, 60, rng, 50.0);
        const auto s = hpnp::svd(x);
        EXPECT_EQ(s.u.cols(), 49);
        EXPECT_EQ(s.v.rows(), 60);
        EXPECT_LT((s.u * s.s.asDiagonal() * s.v.transpose() - x).cwiseAbs().maxCoeff(), 1e-8);
        EXPECT_LT((s.u.transpose() * s.u - Eigen::MatrixXd::Identity(49, 49)).cwiseAbs().maxCoeff(), 1e-8);
        for (Eigen::Index j = 1; j < s.s.size(); ++j)
            EXPECT_GE(s.s(j - 1), s.s(j));
        EXPECT_GE(s.s.minCoeff(), 0.0);
    }
}

TEST(Svd, RejectsNonFinite)
{
    Eigen::MatrixXd x = Eigen::MatrixXd::Ones(3, 3);
    x(1, 1) = std::nan("");
    try {
        hpnp::svd(x);
        FAIL();
    } catch (const hpnp::Error& e) {
        EXPECT_EQ(e.code(), hpnp::Errc::numerical);
    }
}

TEST(WnnmShrink, ThetaZeroIsIdentity)
{
    hpnp::Xoshiro256pp rng(2);
    const Eigen::MatrixXd x = random_matrix(49, 60, rng, 30.0);
    EXPECT_LT((hpnp::wnnm_shrink(x, {0.0}) - x).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(WnnmShrink, ZeroMatrixStaysZero)
{
    EXPECT_EQ(hpnp::wnnm_shrink(Eigen::MatrixXd::Zero(5, 4), {3.0}).cwiseAbs().maxCoeff(), 0.0);
}

TEST(WnnmShrink, WeightsFollowRule)
{
    Eigen::VectorXd s(3);
    s << 10.0, 4.0, 1.0;
    const WnnmParams p{1.0, 2.0, 1e-16, 0.5};
    const auto w = hpnp::wnnm_weights(s, 4, p);
    // sigma_hat^2 = sigma^2 - 4 * 0.25
    EXPECT_NEAR(w(0), 2.0 * 2.0 / std::sqrt(99.0), 1e-14);
    EXPECT_NEAR(w(1), 2.0 * 2.0 / std::sqrt(15.0), 1e-14);
    EXPECT_NEAR(w(2), 4.0 / 1e-16, 1e2);
}

TEST(WnnmShrink, ShrinksSingularValuesByWeightedThreshold)
{
    hpnp::Xoshiro256pp rng(3);
    const Eigen::MatrixXd x = random_matrix(6, 5, rng, 10.0);
    const WnnmParams p{0.7, 2.0 * std::sqrt(2.0), 1e-16, 0.3};
    const auto res = hpnp::wnnm_shrink_detailed(x, p);
    const Eigen::VectorXd s = singular_values(x);
    for (Eigen::Index j = 0; j < s.size(); ++j) {
        const double hat = std::sqrt(std::max(s(j) * s(j) - 5.0 * 0.09, 0.0));
        const double w = p.c_weight * std::sqrt(5.0) / (hat + p.eps);
        EXPECT_NEAR(res.shrunk(j), std::max(s(j) - p.theta * w, 0.0), 1e-10);
    }
    const Eigen::VectorXd out = singular_values(res.low_rank);
    for (Eigen::Index j = 0; j < s.size(); ++j)
        EXPECT_NEAR(out(j), res.shrunk(j), 1e-9);
}

TEST(WnnmShrink, BeatsBruteForceObjective)
{
    hpnp::Xoshiro256pp rng(4);
    for (int t = 0; t < 12; ++t) {
        const Eigen::MatrixXd x = random_matrix(t % 2 ? 3 : 2, 2, rng, 3.0);
        for (double theta : {0.1, 1.0, 10.0}) {
            const auto res = hpnp::wnnm_shrink_detailed(x, {theta});
            const std::array<double, 2> w{res.weights(0), res.weights(1)};
            const double got = oracle::weighted_objective(x, res.low_rank, theta, w);
            const double best = oracle::best_candidate_objective(x, res.low_rank, theta, w, 20000, 100 + t);
            EXPECT_LE(got, best + 1e-3) << "trial " << t << " theta " << theta;
        }
    }
}

TEST(WnnmShrink, SpectralProperties)
{
    hpnp::Xoshiro256pp rng(5);
    for (int t = 0; t < 20; ++t) {
        Eigen::MatrixXd x = random_matrix(8, 6, rng, 20.0);
        if (t % 3 == 0)  // rank deficient input
            x = x.leftCols(2) * random_matrix(2, 6, rng);
        const Eigen::VectorXd s = singular_values(x);
        const WnnmParams lo{0.5, 2.0 * std::sqrt(2.0), 1e-16, 1.0};
        WnnmParams hi = lo;
        hi.theta = 2.0;
        const Eigen::MatrixXd a = hpnp::wnnm_shrink(x, lo);
        const Eigen::MatrixXd b = hpnp::wnnm_shrink(x, hi);
        const Eigen::VectorXd sa = singular_values(a);
        const Eigen::VectorXd sb = singular_values(b);
        for (Eigen::Index j = 0; j < s.size(); ++j) {
            EXPECT_LE(sa(j), s(j) + 1e-9);
            EXPECT_LE(sb(j), sa(j) + 1e-9);
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lx(x), la(a);
        lx.setThreshold(1e-9);
        la.setThreshold(1e-9);
        EXPECT_LE(la.rank(), lx.rank());
    }
}

TEST(WnnmShrink, LargeThetaZeroesGroup)
{
    hpnp::Xoshiro256pp rng(6);
    const Eigen::MatrixXd x = random_matrix(49, 60, rng, 40.0);
    const WnnmParams base{0.0, 2.0 * std::sqrt(2.0), 1e-16, 2.0};
    const Eigen::VectorXd s = singular_values(x);
    const double hat = std::sqrt(std::max(s(0) * s(0) - 60.0 * 4.0, 0.0));
    const double crossing = s(0) * (hat + base.eps) / (base.c_weight * std::sqrt(60.0));
    WnnmParams p = base;
    p.theta = crossing * 1.0001;
    EXPECT_EQ(hpnp::wnnm_shrink(x, p).cwiseAbs().maxCoeff(), 0.0);
    p.theta = crossing * 0.99;
    EXPECT_GT(hpnp::wnnm_shrink(x, p).cwiseAbs().maxCoeff(), 0.0);
}

TEST(WnnmShrink, RejectsNegativeTheta)
{
    EXPECT_THROW(hpnp::wnnm_shrink(Eigen::MatrixXd::Ones(2, 2), {-1.0}), hpnp::Error);
}

TEST(LowRankPass, ThetaZeroReproducesCountsTimesImage)
{
    const Image img = random_image(32, 32, 7);
    const auto index = hpnp::build_group_index(img, hpnp::PatchGeometry{});
    const auto stack = hpnp::lowrank_pass(img, index, {0.0});
    for (std::size_t k = 0; k < img.size(); ++k)
        EXPECT_NEAR(stack.aggregate.sum[k], stack.aggregate.counts[k] * img[k], 1e-8 * stack.aggregate.counts[k] * 255.0);
}

TEST(LowRankPass, ConstantImageKeepsRankOneStructure)
{
    const Image img(24, 24, 80.0);
    const auto index = hpnp::build_group_index(img, hpnp::PatchGeometry{5, 4, 10, 10});
    const auto stack = hpnp::lowrank_pass(img, index, {0.5});
    for (const auto& g : stack.groups) {
        const Eigen::VectorXd s = singular_values(g);
        EXPECT_GT(s(0), 0.0);
        EXPECT_LT(s.tail(s.size() - 1).maxCoeff(), 1e-9);
        const double v = g(0, 0);
        EXPECT_LT((g.array() - v).abs().maxCoeff(), 1e-9);
    }
}

TEST(LowRankPass, ModesAgree)
{
    const Image img = random_image(40, 40, 9);
    const auto index = hpnp::build_group_index(img, hpnp::PatchGeometry{});
    const WnnmParams p{2.0, 2.0 * std::sqrt(2.0), 1e-16, 5.0};
    const auto a = hpnp::lowrank_pass(img, index, p, hpnp::ExecutionMode::sequential);
    const auto b = hpnp::lowrank_pass(img, index, p, hpnp::ExecutionMode::parallel);
    EXPECT_EQ(a.aggregate.sum, b.aggregate.sum);
    EXPECT_EQ(a.frobenius_sq, b.frobenius_sq);
}

TEST(Oracle, ClosedFormSingularValues)
{
    hpnp::Xoshiro256pp rng(12);
    for (int t = 0; t < 50; ++t) {
        const Eigen::MatrixXd x = random_matrix(t % 2 ? 3 : 2, 2, rng, 5.0);
        const auto s = oracle::singular_values_n2(x);
        const Eigen::VectorXd ref = singular_values(x);
        EXPECT_NEAR(s[0], ref(0), 1e-10);
        EXPECT_NEAR(s[1], ref(1), 1e-10);
    }
    Eigen::MatrixXd rank_one(3, 2);
    rank_one << 1, 2, 2, 4, 3, 6;
    EXPECT_EQ(oracle::singular_values_n2(rank_one)[1], 0.0);
}
