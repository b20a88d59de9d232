#pragma once

#include <vector>

#include "pebm/energy_model.hpp"
#include "pebm/point_cloud.hpp"
#include "pebm/rng.hpp"
#include "pebm/sampler.hpp"

namespace pebm {

struct ReconConfig {
    std::size_t recon_steps = 200;  // gradient-descent iterations on Z
    double recon_step_size = 0.1;
    std::size_t restarts = 3;       // independent Z initializations

    void validate() const;
};

struct ReconResult {
    PointCloud latent;         // Z*
    PointCloud reconstruction; // M(Z*), noise disabled
    double loss;               // final L(Z*)
    double initial_loss;       // L at the returned restart's Z0
    std::size_t restart_index;
};

// dL/dZ for L(Z) = ||target - M(Z)||^2 with M the noise-disabled K-step
// dynamics, computed by reverse-mode differentiation through the full
// unrolled trajectory. `z` and `target` are [B,M,3] with matching shapes;
// rows are independent problems. Requires config.noise_scale == 0 and
// K <= 256 (the unrolled tape is linear in K).
Tensor grad_latent(const EnergyModel& model, const Tensor& z, const Tensor& target,
                   const SamplerConfig& config, double* total_loss = nullptr,
                   std::vector<double>* per_row_loss = nullptr);

// L per row for a candidate Z (forward unroll only).
std::vector<double> latent_loss(const EnergyModel& model, const Tensor& z,
                                const Tensor& target, const SamplerConfig& config);

// Gradient descent on L(Z) with backtracking halving (a step is accepted
// only if L does not increase; at most 20 halvings per step, no move
// otherwise). Z is initialized from white noise per restart; the best
// restart is returned. L is the coordinate-wise squared distance under the
// stored point ordering; use the metrics module for permutation-invariant
// evaluation of the result.
ReconResult reconstruct(const EnergyModel& model, const PointCloud& target,
                        const SamplerConfig& sampler, const ReconConfig& recon,
                        RngStream& rng);

// Frames M((1-rho) Z1 + rho Z2) for num_steps evenly spaced rho in [0,1].
// Endpoints equal direct generation from Z1 / Z2 bit-exactly.
std::vector<PointCloud> interpolate(const EnergyModel& model, const PointCloud& z1,
                                    const PointCloud& z2, std::size_t num_steps,
                                    const SamplerConfig& sampler);

} // namespace pebm
