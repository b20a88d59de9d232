#include "pebm/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace pebm {

void SamplerConfig::validate() const {
    if (step_size <= 0.0) throw ConfigError("sampler: step_size must be > 0");
    if (num_steps < 1) throw ConfigError("sampler: num_steps must be >= 1");
    if (noise_scale < 0.0 || noise_scale > 1.0) {
        throw ConfigError("sampler: noise_scale must lie in {0} U (0,1]");
    }
    if (p_refresh < 0.0 || p_refresh > 1.0) {
        throw ConfigError("sampler: p_refresh must lie in [0,1]");
    }
    if (clamp_bound && *clamp_bound <= 0.0) {
        throw ConfigError("sampler: clamp_bound must be positive");
    }
}

Tensor gaussian_clouds(std::size_t b, std::size_t m, RngStream& rng) {
    std::vector<double> data(b * m * 3);
    for (double& v : data) v = rng.normal();
    return Tensor::from_data({b, m, 3}, std::move(data));
}

namespace {

void check_clouds(const Tensor& t, const char* name) {
    if (t.rank() != 3 || t.dim(2) != 3) {
        throw ShapeError(std::string(name) + ": expected [B,M,3], got " + t.shape_str());
    }
}

Tensor apply_clamp(Tensor x, double bound) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (double& v : out) v = std::clamp(v, -bound, bound);
    return Tensor::from_data(x.shape(), std::move(out));
}

} // namespace

Tensor langevin_step(const EnergyModel& model, const Tensor& clouds, double delta,
                     double noise_scale, const Tensor& noise,
                     std::optional<double> clamp_bound, StepDiagnostics* diag) {
    check_clouds(clouds, "langevin_step");
    if (delta <= 0.0) throw ConfigError("langevin_step: delta must be > 0");
    if (noise_scale != 0.0 && !clouds.same_shape(noise)) {
        throw ShapeError("langevin_step: noise shape mismatch");
    }
    const std::size_t bsz = clouds.dim(0);
    const std::size_t per_chain = clouds.dim(1) * 3;

    Tape tape;
    Value x = tape.leaf(clouds);
    Value e = model.energy_sum(tape, x);
    Tensor grad = tape.tensor(tape.grad(e, x));

    for (std::size_t b = 0; b < bsz; ++b) {
        for (std::size_t i = 0; i < per_chain; ++i) {
            if (!std::isfinite(grad[b * per_chain + i])) {
                throw DivergenceError(
                    "langevin_step: non-finite gradient in chain " + std::to_string(b),
                    static_cast<long>(b));
            }
        }
    }

    if (diag) {
        diag->mean_energy = tape.tensor(e)[0] / static_cast<double>(bsz);
        double total = 0.0;
        for (std::size_t b = 0; b < bsz; ++b) {
            double s = 0.0;
            for (std::size_t i = 0; i < per_chain; ++i) {
                const double g = grad[b * per_chain + i];
                s += g * g;
            }
            total += std::sqrt(s);
        }
        diag->mean_grad_norm = total / static_cast<double>(bsz);
    }

    Tensor out = add(clouds, scale(grad, delta * delta / 2.0));
    if (noise_scale != 0.0) {
        out = add(out, scale(noise, noise_scale * delta));
    }
    if (clamp_bound) out = apply_clamp(out, *clamp_bound);
    return out;
}

Tensor langevin_step(const EnergyModel& model, const Tensor& clouds, double delta,
                     double noise_scale, RngStream& rng,
                     std::optional<double> clamp_bound, StepDiagnostics* diag) {
    check_clouds(clouds, "langevin_step");
    Tensor noise;
    if (noise_scale != 0.0) {
        noise = gaussian_clouds(clouds.dim(0), clouds.dim(1), rng);
    }
    return langevin_step(model, clouds, delta, noise_scale, noise, clamp_bound, diag);
}

ChainResult run_chain(const EnergyModel& model, const Tensor& init,
                      const SamplerConfig& config, RngStream& rng) {
    config.validate();
    check_clouds(init, "run_chain");
    ChainResult result;
    result.clouds = init;
    result.diagnostics.reserve(config.num_steps);
    for (std::size_t step = 0; step < config.num_steps; ++step) {
        StepDiagnostics diag;
        try {
            result.clouds =
                langevin_step(model, result.clouds, config.step_size,
                              config.noise_scale, rng, config.clamp_bound, &diag);
        } catch (const DivergenceError& e) {
            throw DivergenceError(std::string(e.what()) + " at step " +
                                      std::to_string(step),
                                  e.chain_index, static_cast<long>(step));
        }
        result.diagnostics.push_back(diag);
    }
    return result;
}

Tensor init_chains(InitScheme scheme, std::size_t b, std::size_t m,
                   const std::vector<PointCloud>* data, ChainState* state,
                   double p_refresh, RngStream& rng) {
    if (b == 0 || m == 0) throw ContractError("init_chains: B and M must be >= 1");
    switch (scheme) {
    case InitScheme::noise:
        return gaussian_clouds(b, m, rng);
    case InitScheme::data: {
        if (!data || data->empty()) {
            throw ConfigError("init_chains: data scheme requires a data source");
        }
        std::vector<PointCloud> picks;
        picks.reserve(b);
        for (std::size_t i = 0; i < b; ++i) {
            picks.push_back((*data)[rng.below(data->size())]);
        }
        Tensor out = pack_clouds(picks);
        if (out.dim(1) != m) {
            throw ShapeError("init_chains: data clouds have M=" +
                             std::to_string(out.dim(1)) + ", expected " +
                             std::to_string(m));
        }
        return out;
    }
    case InitScheme::persistent: {
        if (!state || state->bank.empty()) {
            throw ConfigError("init_chains: persistent scheme requires a chain bank");
        }
        if (state->bank.size() != b) {
            throw ConfigError("init_chains: bank holds " +
                              std::to_string(state->bank.size()) +
                              " chains, batch needs " + std::to_string(b));
        }
        state->ages.resize(b, 0);
        for (std::size_t i = 0; i < b; ++i) {
            if (p_refresh > 0.0 && rng.uniform() < p_refresh) {
                PointCloud fresh;
                fresh.points.resize(m);
                for (auto& p : fresh.points) {
                    p = {rng.normal(), rng.normal(), rng.normal()};
                }
                state->bank[i] = std::move(fresh);
                state->ages[i] = 0;
            }
        }
        Tensor out = pack_clouds(state->bank);
        if (out.dim(1) != m) {
            throw ShapeError("init_chains: bank clouds have M=" +
                             std::to_string(out.dim(1)) + ", expected " +
                             std::to_string(m));
        }
        return out;
    }
    }
    throw ConfigError("init_chains: unknown scheme");
}

ChainResult short_run_generate(const EnergyModel& model, const Tensor& z,
                               const SamplerConfig& config, RngStream& rng) {
    return run_chain(model, z, config, rng);
}

void write_diagnostics_csv(const std::filesystem::path& path,
                           std::span<const StepDiagnostics> diagnostics) {
    std::ofstream os(path);
    if (!os) throw ParseError("cannot open " + path.string() + " for writing");
    os << "step,mean_energy,mean_grad_norm\n";
    char buf[96];
    for (std::size_t i = 0; i < diagnostics.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", i,
                      diagnostics[i].mean_energy, diagnostics[i].mean_grad_norm);
        os << buf;
    }
}

} // namespace pebm
