#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "pebm/energy_model.hpp"
#include "pebm/point_cloud.hpp"
#include "pebm/rng.hpp"
#include "pebm/tensor.hpp"

namespace pebm {

enum class InitScheme { noise, persistent, data };

struct SamplerConfig {
    double step_size = 0.01;   // Langevin delta in normalized coordinates
    std::size_t num_steps = 64;
    double noise_scale = 1.0;  // 0 disables injected noise (generator mode)
    InitScheme init_scheme = InitScheme::noise;
    std::optional<double> clamp_bound; // divergence guard, off by default
    double p_refresh = 0.0;            // persistent-bank refresh probability

    void validate() const;
};

// Persistent-chain storage: one slot per chain, with per-chain step ages.
struct ChainState {
    std::vector<PointCloud> bank;
    std::vector<std::uint64_t> ages;
};

struct StepDiagnostics {
    double mean_energy = 0.0;
    double mean_grad_norm = 0.0;
};

struct ChainResult {
    Tensor clouds; // [B,M,3]
    std::vector<StepDiagnostics> diagnostics;
};

// I.i.d. standard normal coordinates, [B,M,3].
Tensor gaussian_clouds(std::size_t b, std::size_t m, RngStream& rng);

// One update X <- X + (delta^2/2) df/dX + noise_scale * delta * U with the
// given noise tensor (same shape as clouds). Throws DivergenceError with
// the offending chain index if the gradient goes non-finite.
Tensor langevin_step(const EnergyModel& model, const Tensor& clouds, double delta,
                     double noise_scale, const Tensor& noise,
                     std::optional<double> clamp_bound = std::nullopt,
                     StepDiagnostics* diag = nullptr);

// RNG-driven variant; draws the noise from `rng`.
Tensor langevin_step(const EnergyModel& model, const Tensor& clouds, double delta,
                     double noise_scale, RngStream& rng,
                     std::optional<double> clamp_bound = std::nullopt,
                     StepDiagnostics* diag = nullptr);

// K steps from `init`; diagnostics has one record per step.
ChainResult run_chain(const EnergyModel& model, const Tensor& init,
                      const SamplerConfig& config, RngStream& rng);

// Chain initialization. `data` is required for InitScheme::data, `state`
// for InitScheme::persistent (bank size must equal b).
Tensor init_chains(InitScheme scheme, std::size_t b, std::size_t m,
                   const std::vector<PointCloud>* data, ChainState* state,
                   double p_refresh, RngStream& rng);

// The short-run generator X = M(Z, xi): run_chain started at z. With
// config.noise_scale == 0 this is the deterministic variant M(Z).
ChainResult short_run_generate(const EnergyModel& model, const Tensor& z,
                               const SamplerConfig& config, RngStream& rng);

void write_diagnostics_csv(const std::filesystem::path& path,
                           std::span<const StepDiagnostics> diagnostics);

} // namespace pebm
