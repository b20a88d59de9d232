#include "pebm/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace pebm {

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (learning_rate <= 0.0) throw ConfigError("train: learning_rate must be > 0");
    if (grad_clip <= 0.0) throw ConfigError("train: grad_clip must be > 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw ConfigError("train: moment decays must lie in [0,1)");
    }
    sampler.validate();
}

void TrainLog::write_csv(std::ostream& os) const {
    os << "iteration,f_obs,f_syn,value_fn,grad_norm,residual\n";
    char buf[192];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      r.iteration, r.f_obs, r.f_syn, r.value_fn, r.grad_norm,
                      r.residual);
        os << buf;
    }
}

double stacked_norm(std::span<const Tensor> tensors) {
    double s = 0.0;
    for (const Tensor& t : tensors) {
        for (double x : t.data()) s += x * x;
    }
    return std::sqrt(s);
}

namespace {

double mean_of(const Tensor& energies) {
    double s = 0.0;
    for (double x : energies.data()) s += x;
    return s / static_cast<double>(energies.size());
}

void check_batches(const Tensor& observed, const Tensor& synthesized) {
    if (observed.rank() != 3 || synthesized.rank() != 3) {
        throw ContractError("batches must be [B,M,3] tensors");
    }
    if (observed.dim(0) == 0 || synthesized.dim(0) == 0) {
        throw ContractError("batches must be non-empty");
    }
    if (observed.dim(0) != synthesized.dim(0)) {
        throw ContractError("observed and synthesized batch sizes must match");
    }
}

} // namespace

MleGradient mle_gradient_full(EnergyNet& net, const Tensor& observed,
                              const Tensor& synthesized, bool update_stats) {
    check_batches(observed, synthesized);

    Tape obs_tape;
    auto obs = net.forward_on_tape(obs_tape, observed, BnMode::train,
                                   /*input_grad=*/false, /*bind_params=*/true,
                                   update_stats);
    Value obs_objective = obs_tape.scale(obs_tape.sum_all(obs.energies),
                                         1.0 / static_cast<double>(observed.dim(0)));
    auto obs_adj = obs_tape.backward(obs_objective, obs.params);

    Tape syn_tape;
    auto syn = net.forward_on_tape(syn_tape, synthesized, BnMode::eval,
                                   /*input_grad=*/false, /*bind_params=*/true);
    Value syn_objective = syn_tape.scale(syn_tape.sum_all(syn.energies),
                                         1.0 / static_cast<double>(synthesized.dim(0)));
    auto syn_adj = syn_tape.backward(syn_objective, syn.params);

    MleGradient out;
    out.f_obs = mean_of(obs_tape.tensor(obs.energies));
    out.f_syn = mean_of(syn_tape.tensor(syn.energies));
    out.delta.resize(net.num_params());
    double obs_sq = 0.0;
    for (std::size_t i = 0; i < net.num_params(); ++i) {
        Tensor g_obs = obs_adj[i].valid() ? obs_tape.tensor(obs_adj[i])
                                          : Tensor::zeros(net.param(i).shape());
        Tensor g_syn = syn_adj[i].valid() ? syn_tape.tensor(syn_adj[i])
                                          : Tensor::zeros(net.param(i).shape());
        for (double x : g_obs.data()) obs_sq += x * x;
        out.delta[i] = sub(g_obs, g_syn);
    }
    out.obs_grad_norm = std::sqrt(obs_sq);
    return out;
}

std::vector<Tensor> mle_gradient(EnergyNet& net, const Tensor& observed,
                                 const Tensor& synthesized, bool update_stats) {
    return mle_gradient_full(net, observed, synthesized, update_stats).delta;
}

double value_function(const EnergyNet& net, const Tensor& observed,
                      const Tensor& synthesized) {
    if (observed.dim(0) == 0 || synthesized.dim(0) == 0) {
        throw ContractError("value_function: batches must be non-empty");
    }
    return mean_of(net.forward_plain(observed, BnMode::eval)) -
           mean_of(net.forward_plain(synthesized, BnMode::eval));
}

double moment_residual(EnergyNet& net, const Tensor& observed,
                       const Tensor& synthesized) {
    auto g = mle_gradient_full(net, observed, synthesized, /*update_stats=*/false);
    return stacked_norm(g.delta);
}

namespace {

struct AdamState {
    std::vector<Tensor> m, v;
    std::size_t t = 0;
};

void apply_update(EnergyNet& net, std::vector<Tensor>& delta,
                  const TrainConfig& cfg, AdamState& adam) {
    const double total = stacked_norm(delta);
    if (total > cfg.grad_clip) {
        const double factor = cfg.grad_clip / total;
        for (Tensor& t : delta) t = scale(t, factor);
    }

    if (cfg.optimizer == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < delta.size(); ++i) {
            net.set_param(i, add(net.param(i), scale(delta[i], cfg.learning_rate)));
        }
        return;
    }

    adam.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam.t));
    for (std::size_t i = 0; i < delta.size(); ++i) {
        adam.m[i] = add(scale(adam.m[i], cfg.beta1), scale(delta[i], 1.0 - cfg.beta1));
        adam.v[i] = add(scale(adam.v[i], cfg.beta2),
                        scale(square(delta[i]), 1.0 - cfg.beta2));
        std::vector<double> upd(delta[i].size());
        const auto md = adam.m[i].data();
        const auto vd = adam.v[i].data();
        for (std::size_t j = 0; j < upd.size(); ++j) {
            const double mhat = md[j] / bc1;
            const double vhat = vd[j] / bc2;
            upd[j] = cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
        net.set_param(i, add(net.param(i),
                             Tensor::from_data(net.param(i).shape(), std::move(upd))));
    }
}

} // namespace

TrainLog train(EnergyNet& net, const std::vector<PointCloud>& data,
               const TrainConfig& config, const TrainHooks& hooks) {
    config.validate();
    if (data.empty()) throw ContractError("train: empty dataset");
    const std::size_t m = data[0].size();
    for (const auto& c : data) {
        if (c.size() != m) throw ShapeError("train: dataset clouds must share M");
    }
    if (config.batch_size > data.size()) {
        throw ContractError("train: batch_size exceeds dataset size");
    }

    RngStream root(config.seed);
    RngStream shuffle_rng = root.derive("train.shuffle");
    RngStream chain_rng = root.derive("train.chains");

    const std::size_t n = config.batch_size;
    const std::size_t batches_per_epoch = std::max<std::size_t>(1, data.size() / n);

    ChainState bank;
    if (config.sampler.init_scheme == InitScheme::persistent) {
        Tensor seed_clouds = gaussian_clouds(n, m, chain_rng);
        bank.bank = unpack_clouds(seed_clouds);
        bank.ages.assign(n, 0);
    }

    AdamState adam;
    if (config.optimizer == OptimizerKind::adam) {
        adam.m.reserve(net.num_params());
        for (std::size_t i = 0; i < net.num_params(); ++i) {
            adam.m.push_back(Tensor::zeros(net.param(i).shape()));
            adam.v.push_back(Tensor::zeros(net.param(i).shape()));
        }
    }

    TrainLog log;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t iteration = 0;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        // Fisher-Yates with the dedicated shuffle stream.
        for (std::size_t i = data.size(); i > 1; --i) {
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        }
        for (std::size_t b = 0; b < batches_per_epoch; ++b) {
            ++iteration;
            std::vector<PointCloud> observed;
            observed.reserve(n);
            for (std::size_t i = 0; i < n; ++i) {
                observed.push_back(data[order[b * n + i]]);
            }
            Tensor obs = pack_clouds(observed);

            Tensor init = init_chains(config.sampler.init_scheme, n, m, &data,
                                      &bank, config.sampler.p_refresh, chain_rng);
            ChainResult chains = run_chain(net, init, config.sampler, chain_rng);
            if (config.sampler.init_scheme == InitScheme::persistent) {
                bank.bank = unpack_clouds(chains.clouds);
                for (auto& age : bank.ages) age += config.sampler.num_steps;
            }

            MleGradient grad = mle_gradient_full(net, obs, chains.clouds,
                                                 /*update_stats=*/true);
            const double residual = stacked_norm(grad.delta);
            apply_update(net, grad.delta, config, adam);

            TrainRecord record{iteration, grad.f_obs, grad.f_syn,
                               grad.f_obs - grad.f_syn, grad.obs_grad_norm,
                               residual};
            if (!std::isfinite(record.f_obs) || !std::isfinite(record.f_syn) ||
                !std::isfinite(residual)) {
                throw DivergenceError("train: non-finite training statistic at iteration " +
                                          std::to_string(iteration),
                                      -1, static_cast<long>(iteration));
            }
            log.records.push_back(record);
            if (hooks.on_record) hooks.on_record(record);
            if (hooks.on_checkpoint && config.checkpoint_every > 0 &&
                iteration % config.checkpoint_every == 0) {
                hooks.on_checkpoint(net, iteration);
            }
        }
    }
    return log;
}

} // namespace pebm
