#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "hpnp/denoise.hpp"
#include "hpnp/error.hpp"
#include "hpnp/image.hpp"
#include "hpnp/lowrank.hpp"
#include "hpnp/parallel.hpp"
#include "hpnp/patches.hpp"
#include "hpnp/sensing.hpp"

namespace hpnp {

struct SolverConfig {
    double mu = 0.0;      // low-rank coupling weight
    double lambda = 0.0;  // rank penalty weight; the WNNM threshold is lambda / mu
    double rho = 0.0;     // denoiser prior weight
    double tau = 1.0;     // ADMM penalty
    double eta = 1.0;     // gradient step size
    std::size_t max_iters = 60;
    double upsilon = 1e-5;
    std::size_t admm_inner = 1;
    std::size_t grad_steps = 2;
    std::size_t regroup_every = 1;
    PatchGeometry geometry;
    DenoiserKind denoiser = NativeDct{};

    // WNNM noise proxy schedule noise_floor0 * noise_decay^(k-1).
    double noise_floor0 = 0.0;
    double noise_decay = 0.95;
    double c_weight = 2.0 * std::numbers::sqrt2;
    double wnnm_eps = 1e-16;

    std::size_t init_smoothing_iters = 8;
    ExecutionMode mode = ExecutionMode::parallel;

    void validate() const
    {
        if (!(mu >= 0.0) || !(lambda >= 0.0) || !(rho >= 0.0) || !(tau >= 0.0))
            throw Error(Errc::invalid_argument, "mu, lambda, rho and tau must be nonnegative");
        if (rho > 0.0 && !(tau > 0.0))
            throw Error(Errc::invalid_argument, "tau must be positive when rho > 0");
        if (!(eta > 0.0))
            throw Error(Errc::invalid_argument, "eta must be positive");
        if (max_iters < 1 || admm_inner < 1 || grad_steps < 1 || regroup_every < 1)
            throw Error(Errc::invalid_argument, "iteration counts must be at least 1");
        if (!(upsilon >= 0.0) || !(noise_floor0 >= 0.0) || !(noise_decay > 0.0) || !(wnnm_eps > 0.0))
            throw Error(Errc::invalid_argument, "invalid stopping or noise schedule parameter");
        geometry.validate();
    }

    double denoiser_sigma() const { return rho == 0.0 ? 0.0 : std::sqrt(rho / tau); }

    WnnmParams wnnm_params(std::size_t iteration) const
    {
        WnnmParams p;
        p.theta = mu > 0.0 ? lambda / mu : 0.0;
        p.c_weight = c_weight;
        p.eps = wnnm_eps;
        p.noise_floor = noise_floor0 * std::pow(noise_decay, static_cast<double>(iteration - 1));
        return p;
    }
};

struct IterationRecord {
    std::size_t iteration = 0;
    double relative_change = 0.0;
    double psnr = std::numeric_limits<double>::quiet_NaN();
    double fidelity = 0.0;         // 0.5 ||y - Phi x||^2
    double lowrank_coupling = 0.0; // 0.5 mu sum ||R_i x - L_i||_F^2
    double noise_floor = 0.0;
    double group_seconds = 0.0;
    double lowrank_seconds = 0.0;
    double admm_seconds = 0.0;
};

struct SolverCounters {
    std::size_t regroups = 0;
    std::size_t lowrank_passes = 0;
    std::size_t admm_rounds = 0;
    std::size_t gradient_steps = 0;
    std::size_t denoiser_calls = 0;
};

struct SolverState {
    Image x;
    Image z;
    Image c;
    std::size_t k = 0;
    std::vector<IterationRecord> history;
    SolverCounters counters;
    std::vector<std::string> warnings;
    bool converged = false;  // stopped by the relative-change test rather than the cap
};

/// Quantities fixed for the whole solve: the sensor, measurements and Phi^T y.
struct SensingProblem {
    const BlockSensor& sensor;
    const Measurements& meas;
    Image backprojection;

    SensingProblem(const BlockSensor& s, const Measurements& m) : sensor(s), meas(m), backprojection(adjoint(s, m)) {}
};

/// q = Phi^T Phi x - Phi^T y + tau (x - z - c) + mu (C .* x - S).
/// The low-rank term is skipped when `lowrank` is null or mu is zero.
inline Image gradient(const Image& x, const SensingProblem& problem, const Aggregate* lowrank, const Image& z,
    const Image& c, const SolverConfig& cfg)
{
    require_same_shape(x, problem.backprojection, "gradient x vs measurements");
    require_same_shape(x, z, "gradient x vs z");
    require_same_shape(x, c, "gradient x vs c");
    Image q = apply_gram(problem.sensor, x);
    const Image& aty = problem.backprojection;
    for (std::size_t i = 0; i < q.size(); ++i)
        q[i] += -aty[i] + cfg.tau * (x[i] - z[i] - c[i]);
    if (lowrank && cfg.mu != 0.0) {
        require_same_shape(x, lowrank->sum, "gradient x vs low-rank aggregate");
        for (std::size_t i = 0; i < q.size(); ++i)
            q[i] += cfg.mu * (lowrank->counts[i] * x[i] - lowrank->sum[i]);
    }
    return q;
}

/// grad_steps iterations of x <- x - eta q, recomputing q each step. No clamping.
inline Image x_update(Image x, const SensingProblem& problem, const Aggregate* lowrank, const Image& z,
    const Image& c, const SolverConfig& cfg, SolverCounters* counters = nullptr)
{
    for (std::size_t s = 0; s < cfg.grad_steps; ++s) {
        const Image q = gradient(x, problem, lowrank, z, c, cfg);
        for (std::size_t i = 0; i < x.size(); ++i)
            x[i] -= cfg.eta * q[i];
        if (counters)
            ++counters->gradient_steps;
    }
    return x;
}

/// z = F(x - c, sqrt(rho / tau)).
inline Image z_update(const Image& x, const Image& c, const SolverConfig& cfg, Denoiser& denoiser)
{
    require_same_shape(x, c, "z update");
    Image r = x;
    for (std::size_t i = 0; i < r.size(); ++i)
        r[i] -= c[i];
    return denoiser({std::move(r), cfg.denoiser_sigma()});
}

/// c <- c - (x - z).
inline Image dual_update(Image c, const Image& x, const Image& z)
{
    require_same_shape(c, x, "dual update");
    require_same_shape(c, z, "dual update");
    for (std::size_t i = 0; i < c.size(); ++i)
        c[i] -= x[i] - z[i];
    return c;
}

/// ||x_new - x_old||^2 / ||x_old||^2.
inline double relative_change(const Image& x_new, const Image& x_old)
{
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < x_new.size(); ++i) {
        const double d = x_new[i] - x_old[i];
        num += d * d;
        den += x_old[i] * x_old[i];
    }
    if (den == 0.0)
        return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return num / den;
}

inline double fidelity_term(const SensingProblem& problem, const Image& x)
{
    const Measurements mx = measure(problem.sensor, x);
    return 0.5 * (problem.meas.data - mx.data).squaredNorm();
}

/// Upper bound on the gradient's Lipschitz constant for a row-orthonormal Phi.
inline double lipschitz_bound(const SolverConfig& cfg, const Aggregate* lowrank)
{
    double max_count = 0.0;
    if (lowrank)
        for (double v : lowrank->counts.data())
            max_count = std::max(max_count, v);
    return 1.0 + cfg.tau + cfg.mu * max_count;
}

struct Reconstruction {
    Image image;    // final estimate clamped to [0, 255]
    Image initial;  // seed estimate
    SolverState state;
};

/// Called after each outer iteration with the record and the unclamped iterate.
using IterationObserver = std::function<void(const IterationRecord&, const Image&)>;

namespace detail {

template <typename F>
auto run_phase(std::size_t iteration, const char* phase, F&& f)
{
    try {
        return f();
    } catch (const Error& e) {
        throw Error(e.code(), "iteration " + std::to_string(iteration) + ", " + phase + ": " + e.what());
    }
}

inline double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace detail

/// Alternates the grouped low-rank pass with ADMM rounds on the image until
/// the relative change falls below upsilon or max_iters is reached.
inline Reconstruction reconstruct(const BlockSensor& sensor, const Measurements& meas, const SolverConfig& cfg,
    const std::optional<Image>& ground_truth = std::nullopt, const IterationObserver& observer = {})
{
    cfg.validate();
    const SensingProblem problem(sensor, meas);
    if (ground_truth)
        require_same_shape(*ground_truth, problem.backprojection, "ground truth");

    Reconstruction out;
    SolverState& st = out.state;
    out.initial = initial_estimate(sensor, meas, cfg.init_smoothing_iters);
    st.x = out.initial;
    st.z = st.x;
    st.c = Image(st.x.height(), st.x.width());

    std::unique_ptr<Denoiser> denoiser;
    if (cfg.rho > 0.0)
        denoiser = std::make_unique<Denoiser>(cfg.denoiser);
    Denoiser identity{NativeDct{}};  // sigma is zero whenever rho is zero

    PatchGroupIndex index;
    std::optional<LowRankStack> lowrank;
    bool warned_step = false;

    for (std::size_t k = 1; k <= cfg.max_iters; ++k) {
        IterationRecord rec;
        rec.iteration = k;
        st.k = k;
        const Image previous = st.x;

        if (cfg.mu > 0.0) {
            auto t0 = std::chrono::steady_clock::now();
            if ((k - 1) % cfg.regroup_every == 0) {
                index = detail::run_phase(k, "grouping", [&] { return build_group_index(st.x, cfg.geometry, cfg.mode); });
                ++st.counters.regroups;
            }
            rec.group_seconds = detail::seconds_since(t0);
            t0 = std::chrono::steady_clock::now();
            const WnnmParams params = cfg.wnnm_params(k);
            rec.noise_floor = params.noise_floor;
            lowrank = detail::run_phase(k, "low-rank", [&] { return lowrank_pass(st.x, index, params, cfg.mode); });
            ++st.counters.lowrank_passes;
            rec.lowrank_seconds = detail::seconds_since(t0);
            if (!warned_step && cfg.eta > 1.0 / lipschitz_bound(cfg, &lowrank->aggregate)) {
                st.warnings.push_back("step size " + std::to_string(cfg.eta) + " exceeds 1/L = "
                    + std::to_string(1.0 / lipschitz_bound(cfg, &lowrank->aggregate)));
                warned_step = true;
            }
        }

        const auto t_admm = std::chrono::steady_clock::now();
        const Aggregate* agg = lowrank ? &lowrank->aggregate : nullptr;
        st.z = st.x;
        st.c = Image(st.x.height(), st.x.width());
        for (std::size_t j = 0; j < cfg.admm_inner; ++j) {
            st.x = detail::run_phase(k, "x-update", [&] {
                return x_update(std::move(st.x), problem, agg, st.z, st.c, cfg, &st.counters);
            });
            st.z = detail::run_phase(k, "z-update", [&] {
                return z_update(st.x, st.c, cfg, denoiser ? *denoiser : identity);
            });
            if (denoiser)
                ++st.counters.denoiser_calls;
            st.c = dual_update(std::move(st.c), st.x, st.z);
            ++st.counters.admm_rounds;
        }
        rec.admm_seconds = detail::seconds_since(t_admm);

        if (!st.x.all_finite())
            throw Error(Errc::numerical, "iteration " + std::to_string(k) + ": estimate became non-finite");
        rec.relative_change = relative_change(st.x, previous);
        rec.fidelity = fidelity_term(problem, st.x);
        if (lowrank) {
            double coupling = lowrank->frobenius_sq;
            for (std::size_t i = 0; i < st.x.size(); ++i)
                coupling += lowrank->aggregate.counts[i] * st.x[i] * st.x[i] - 2.0 * st.x[i] * lowrank->aggregate.sum[i];
            rec.lowrank_coupling = 0.5 * cfg.mu * coupling;
        }
        if (ground_truth)
            rec.psnr = psnr(*ground_truth, clamp(st.x));
        st.history.push_back(rec);
        if (observer)
            observer(rec, st.x);
        if (rec.relative_change < cfg.upsilon) {
            st.converged = true;
            break;
        }
    }
    out.image = clamp(st.x);
    return out;
}

} // namespace hpnp
