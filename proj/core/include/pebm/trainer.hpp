#pragma once

#include <functional>
#include <span>
#include <vector>

#include "pebm/energy_net.hpp"
#include "pebm/sampler.hpp"

namespace pebm {

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
    std::size_t batch_size = 16;
    std::size_t epochs = 10;
    OptimizerKind optimizer = OptimizerKind::adam;
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 100.0; // global-norm clip on the update direction
    SamplerConfig sampler;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 0; // iterations; 0 = never

    void validate() const;
};

struct TrainRecord {
    std::size_t iteration; // 1-based
    double f_obs;          // mean score over the observed batch
    double f_syn;          // mean score over the synthesized batch
    double value_fn;       // f_obs - f_syn
    double grad_norm;      // norm of the observed-batch parameter gradient
    double residual;       // norm of the observed-minus-synthesized gradient
};

struct TrainLog {
    std::vector<TrainRecord> records;
    void write_csv(std::ostream& os) const;
};

struct TrainHooks {
    std::function<void(const TrainRecord&)> on_record;
    std::function<void(const EnergyNet&, std::size_t iteration)> on_checkpoint;
};

// The learning update direction: mean_i df(X_i)/dtheta over the observed
// batch minus the same over the synthesized batch. The observed pass runs
// batch norm in train mode (and updates the running stats when
// update_stats is set); the synthesized pass runs in eval mode.
struct MleGradient {
    std::vector<Tensor> delta;
    double f_obs;
    double f_syn;
    double obs_grad_norm;
};
MleGradient mle_gradient_full(EnergyNet& net, const Tensor& observed,
                              const Tensor& synthesized, bool update_stats = true);
std::vector<Tensor> mle_gradient(EnergyNet& net, const Tensor& observed,
                                 const Tensor& synthesized,
                                 bool update_stats = true);

// V = mean f(X_i) - mean f(X~_i), eval mode.
double value_function(const EnergyNet& net, const Tensor& observed,
                      const Tensor& synthesized);

// Norm of the stacked update direction; 0 iff the batch statistics match.
// Leaves the running stats untouched.
double moment_residual(EnergyNet& net, const Tensor& observed,
                       const Tensor& synthesized);

// Runs epochs * floor(N / batch_size) iterations of: initialize chains,
// run the sampler, take the gradient step. Mutates `net` in place;
// epochs = 0 leaves it untouched. Deterministic in (seed, config, data).
// On divergence the error propagates after any cadence checkpoints have
// fired, so the last written checkpoint stays valid.
TrainLog train(EnergyNet& net, const std::vector<PointCloud>& data,
               const TrainConfig& config, const TrainHooks& hooks = {});

// Euclidean norm over a stacked set of tensors.
double stacked_norm(std::span<const Tensor> tensors);

} // namespace pebm
