#include "pebm/generator_ops.hpp"

#include <algorithm>
#include <cmath>

namespace pebm {

namespace {

constexpr std::size_t kMaxUnrollSteps = 256;
constexpr int kMaxHalvings = 20;

void check_unroll_config(const SamplerConfig& config) {
    config.validate();
    if (config.noise_scale != 0.0) {
        throw ContractError("latent gradient requires the noise-disabled dynamics "
                            "(noise_scale = 0)");
    }
    if (config.num_steps > kMaxUnrollSteps) {
        throw ConfigError("unrolled differentiation is limited to K <= " +
                          std::to_string(kMaxUnrollSteps) +
                          " steps; use a smaller-K sampler config");
    }
    if (config.clamp_bound) {
        throw ConfigError("latent gradient does not support clamped dynamics");
    }
}

// Noise-free dynamics recorded on the tape; returns the final state node.
Value unroll_on_tape(Tape& tape, const EnergyModel& model, Value z,
                     const SamplerConfig& config) {
    const double coef = config.step_size * config.step_size / 2.0;
    Value x = z;
    for (std::size_t step = 0; step < config.num_steps; ++step) {
        Value e = model.energy_sum(tape, x);
        Value stop[1] = {x};
        Value gx = tape.grad(e, x, stop);
        x = tape.add(x, tape.scale(gx, coef));
    }
    return x;
}

std::vector<double> per_row_sq_loss(const Tensor& x, const Tensor& target) {
    const std::size_t bsz = x.dim(0);
    const std::size_t per_row = x.dim(1) * x.dim(2);
    std::vector<double> loss(bsz, 0.0);
    for (std::size_t b = 0; b < bsz; ++b) {
        for (std::size_t i = 0; i < per_row; ++i) {
            const double d = x[b * per_row + i] - target[b * per_row + i];
            loss[b] += d * d;
        }
    }
    return loss;
}

} // namespace

void ReconConfig::validate() const {
    if (recon_steps < 1) throw ConfigError("recon: recon_steps must be >= 1");
    if (restarts < 1) throw ConfigError("recon: restarts must be >= 1");
    if (recon_step_size <= 0.0) throw ConfigError("recon: step size must be > 0");
}

Tensor grad_latent(const EnergyModel& model, const Tensor& z, const Tensor& target,
                   const SamplerConfig& config, double* total_loss,
                   std::vector<double>* per_row_loss) {
    check_unroll_config(config);
    if (!z.same_shape(target)) {
        throw ShapeError("grad_latent: z and target shapes differ");
    }
    Tape tape;
    Value zv = tape.leaf(z);
    Value x = unroll_on_tape(tape, model, zv, config);
    Value diff = tape.sub(x, tape.constant(target));
    Value loss = tape.sum_all(tape.square(diff));
    Value gz = tape.grad(loss, zv);
    if (total_loss) *total_loss = tape.tensor(loss)[0];
    if (per_row_loss) *per_row_loss = per_row_sq_loss(tape.tensor(x), target);
    return tape.tensor(gz);
}

std::vector<double> latent_loss(const EnergyModel& model, const Tensor& z,
                                const Tensor& target, const SamplerConfig& config) {
    check_unroll_config(config);
    if (!z.same_shape(target)) {
        throw ShapeError("latent_loss: z and target shapes differ");
    }
    RngStream unused(0);
    ChainResult result = run_chain(model, z, config, unused);
    return per_row_sq_loss(result.clouds, target);
}

ReconResult reconstruct(const EnergyModel& model, const PointCloud& target,
                        const SamplerConfig& sampler, const ReconConfig& recon,
                        RngStream& rng) {
    recon.validate();
    target.validate();
    SamplerConfig dyn = sampler;
    dyn.noise_scale = 0.0;
    dyn.clamp_bound.reset();
    check_unroll_config(dyn);

    const std::size_t r = recon.restarts;
    const std::size_t m = target.size();

    // Restarts run batched: row b is restart b throughout.
    Tensor z = gaussian_clouds(r, m, rng);
    Tensor target_tiled = [&] {
        std::vector<PointCloud> tiled(r, target);
        return pack_clouds(tiled);
    }();

    std::vector<double> loss = latent_loss(model, z, target_tiled, dyn);
    const std::vector<double> initial_loss = loss;
    for (std::size_t b = 0; b < r; ++b) {
        if (!std::isfinite(loss[b])) {
            throw DivergenceError("reconstruct: non-finite loss at restart " +
                                      std::to_string(b),
                                  -1, -1, static_cast<long>(b));
        }
    }

    const std::size_t per_row = m * 3;
    for (std::size_t step = 0; step < recon.recon_steps; ++step) {
        Tensor grad = grad_latent(model, z, target_tiled, dyn);
        std::vector<char> accepted(r, 0);
        std::vector<double> alpha(r, recon.recon_step_size);
        std::vector<double> zdata(z.data().begin(), z.data().end());
        for (int halving = 0; halving <= kMaxHalvings; ++halving) {
            std::vector<double> cand = zdata;
            for (std::size_t b = 0; b < r; ++b) {
                if (accepted[b]) continue;
                for (std::size_t i = 0; i < per_row; ++i) {
                    cand[b * per_row + i] -= alpha[b] * grad[b * per_row + i];
                }
            }
            Tensor cand_t = Tensor::from_data(z.shape(), std::move(cand));
            std::vector<double> cand_loss =
                latent_loss(model, cand_t, target_tiled, dyn);
            bool any_open = false;
            for (std::size_t b = 0; b < r; ++b) {
                if (accepted[b]) continue;
                if (!std::isfinite(cand_loss[b])) {
                    throw DivergenceError(
                        "reconstruct: non-finite loss at restart " + std::to_string(b),
                        -1, static_cast<long>(step), static_cast<long>(b));
                }
                if (cand_loss[b] <= loss[b]) {
                    accepted[b] = 1;
                    loss[b] = cand_loss[b];
                    const double* src = cand_t.data().data() + b * per_row;
                    std::copy(src, src + per_row, zdata.begin() + b * per_row);
                } else {
                    alpha[b] /= 2.0;
                    any_open = true;
                }
            }
            if (!any_open) break;
        }
        z = Tensor::from_data(z.shape(), std::move(zdata));
    }

    std::size_t best = 0;
    for (std::size_t b = 1; b < r; ++b) {
        if (loss[b] < loss[best]) best = b;
    }

    ReconResult out;
    out.latent = unpack_cloud(z, best);
    RngStream unused(0);
    Tensor final_x = run_chain(model, pack_cloud(out.latent), dyn, unused).clouds;
    out.reconstruction = unpack_cloud(final_x, 0);
    out.loss = loss[best];
    out.initial_loss = initial_loss[best];
    out.restart_index = best;
    return out;
}

std::vector<PointCloud> interpolate(const EnergyModel& model, const PointCloud& z1,
                                    const PointCloud& z2, std::size_t num_steps,
                                    const SamplerConfig& sampler) {
    if (z1.size() != z2.size()) {
        throw ContractError("interpolate: endpoint latents must share M");
    }
    if (num_steps < 2) throw ContractError("interpolate: num_steps must be >= 2");
    SamplerConfig dyn = sampler;
    dyn.noise_scale = 0.0;
    dyn.validate();

    const std::size_t m = z1.size();
    std::vector<double> data(num_steps * m * 3);
    Tensor a = pack_cloud(z1), b = pack_cloud(z2);
    for (std::size_t s = 0; s < num_steps; ++s) {
        const double rho =
            static_cast<double>(s) / static_cast<double>(num_steps - 1);
        for (std::size_t i = 0; i < m * 3; ++i) {
            data[s * m * 3 + i] = (1.0 - rho) * a[i] + rho * b[i];
        }
    }
    Tensor frames_z = Tensor::from_data({num_steps, m, 3}, std::move(data));
    RngStream unused(0);
    ChainResult frames = run_chain(model, frames_z, dyn, unused);
    return unpack_clouds(frames.clouds);
}

} // namespace pebm
