#include "pebm/energy_net.hpp"

#include <cmath>

#include "pebm/rng.hpp"

namespace pebm {

void NetConfig::validate() const {
    if (encoder_widths.empty()) throw ConfigError("encoder_widths must not be empty");
    if (head_widths.empty()) throw ConfigError("head_widths must not be empty");
    for (std::size_t w : encoder_widths) {
        if (w < 1) throw ConfigError("encoder widths must be >= 1");
    }
    for (std::size_t w : head_widths) {
        if (w < 1) throw ConfigError("head widths must be >= 1");
    }
    if (head_widths.back() != 1) {
        throw ConfigError("head_widths must end with 1 (scalar score)");
    }
}

Tensor pack_clouds(std::span<const PointCloud> clouds) {
    if (clouds.empty()) throw ContractError("pack_clouds: empty batch");
    const std::size_t m = clouds[0].size();
    for (const auto& c : clouds) {
        if (c.size() != m) {
            throw ShapeError("pack_clouds: clouds in a batch must share M");
        }
        if (c.size() == 0) throw ContractError("pack_clouds: empty cloud");
    }
    std::vector<double> data;
    data.reserve(clouds.size() * m * 3);
    for (const auto& c : clouds) {
        for (const auto& p : c.points) {
            data.insert(data.end(), p.begin(), p.end());
        }
    }
    return Tensor::from_data({clouds.size(), m, 3}, std::move(data));
}

std::vector<PointCloud> unpack_clouds(const Tensor& batch) {
    if (batch.rank() != 3 || batch.dim(2) != 3) {
        throw ShapeError("unpack_clouds: tensor must be [B,M,3]");
    }
    std::vector<PointCloud> out(batch.dim(0));
    for (std::size_t b = 0; b < batch.dim(0); ++b) {
        out[b] = unpack_cloud(batch, b);
    }
    return out;
}

PointCloud unpack_cloud(const Tensor& batch, std::size_t index) {
    if (batch.rank() != 3 || batch.dim(2) != 3) {
        throw ShapeError("unpack_cloud: tensor must be [B,M,3]");
    }
    const std::size_t m = batch.dim(1);
    PointCloud c;
    c.points.resize(m);
    const double* base = batch.data().data() + index * m * 3;
    for (std::size_t i = 0; i < m; ++i) {
        c.points[i] = {base[i * 3], base[i * 3 + 1], base[i * 3 + 2]};
    }
    return c;
}

namespace {

Tensor uniform_tensor(std::vector<std::size_t> shape, double bound, RngStream& rng) {
    std::vector<double> data(shape_product(shape));
    for (double& v : data) v = rng.uniform(-bound, bound);
    return Tensor::from_data(std::move(shape), std::move(data));
}

} // namespace

EnergyNet EnergyNet::init(const NetConfig& config, std::uint64_t seed) {
    config.validate();
    EnergyNet net;
    net.cfg_ = config;
    RngStream root(seed);

    auto add_linear = [&](const std::string& name, std::size_t fan_in,
                          std::size_t fan_out) {
        LayerRef ref;
        RngStream stream = root.derive(name + ".w");
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        ref.w = net.params_.size();
        net.params_.push_back(uniform_tensor({fan_in, fan_out}, bound, stream));
        net.param_names_.push_back(name + ".w");
        ref.b = net.params_.size();
        net.params_.push_back(Tensor::zeros({fan_out}));
        net.param_names_.push_back(name + ".b");
        return ref;
    };

    std::size_t in = 3;
    for (std::size_t i = 0; i < config.encoder_widths.size(); ++i) {
        const std::size_t out = config.encoder_widths[i];
        const std::string name = "enc" + std::to_string(i);
        LayerRef ref = add_linear(name, in, out);
        if (config.use_batch_norm_encoder) {
            ref.gamma = net.params_.size();
            net.params_.push_back(Tensor::full({out}, 1.0));
            net.param_names_.push_back(name + ".bn.gamma");
            ref.beta = net.params_.size();
            net.params_.push_back(Tensor::zeros({out}));
            net.param_names_.push_back(name + ".bn.beta");
            ref.bn = net.bn_stats_.size();
            net.bn_stats_.push_back(RunningStats{Tensor::zeros({out}),
                                                 Tensor::full({out}, 1.0), true});
        }
        net.enc_layers_.push_back(ref);
        in = out;
    }
    for (std::size_t i = 0; i < config.head_widths.size(); ++i) {
        const std::size_t out = config.head_widths[i];
        net.head_layers_.push_back(add_linear("head" + std::to_string(i), in, out));
        in = out;
    }
    return net;
}

void EnergyNet::set_param(std::size_t i, Tensor t) {
    if (!params_[i].same_shape(t)) {
        throw ShapeError("set_param: shape mismatch for " + param_names_[i]);
    }
    params_[i] = std::move(t);
}

std::size_t EnergyNet::total_param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
}

void EnergyNet::set_bn_stats(std::size_t layer, RunningStats stats) {
    bn_stats_[layer] = std::move(stats);
}

Value EnergyNet::build_energies(Tape& tape, Value x, BnMode mode,
                                bool bind_params, bool update_stats,
                                std::vector<Value>* param_values) {
    const Tensor& xt = tape.tensor(x);
    if (xt.rank() != 3 || xt.dim(2) != 3) {
        throw ShapeError("forward: input must be [B,M,3], got " + xt.shape_str());
    }
    if (update_stats && mode != BnMode::train) {
        throw ContractError("forward: running stats update requires train mode");
    }
    const std::size_t bsz = xt.dim(0), m = xt.dim(1);

    std::vector<Value> bound(params_.size());
    auto pv = [&](std::size_t i) {
        if (!bound[i].valid()) {
            bound[i] = bind_params ? tape.leaf(params_[i]) : tape.constant(params_[i]);
        }
        return bound[i];
    };

    Value flat = tape.reshape(x, {bsz * m, 3});
    const std::size_t rows = bsz * m;
    for (const LayerRef& layer : enc_layers_) {
        Value z = tape.add_rowvec(tape.matmul(flat, pv(layer.w)), pv(layer.b));
        if (layer.bn != npos) {
            if (mode == BnMode::train) {
                const double inv_rows = 1.0 / static_cast<double>(rows);
                Value mu = tape.scale(tape.sum_rows(z), inv_rows);
                Value centered = tape.add_rowvec(z, tape.neg(mu));
                Value var = tape.scale(tape.sum_rows(tape.square(centered)), inv_rows);
                Value inv_std = tape.recip(tape.sqrt(tape.add_scalar(var, kBnEps)));
                Value xhat = tape.mul_rowvec(centered, inv_std);
                z = tape.add_rowvec(tape.mul_rowvec(xhat, pv(layer.gamma)),
                                    pv(layer.beta));
                if (update_stats) {
                    RunningStats& stats = bn_stats_[layer.bn];
                    stats.mean = add(scale(stats.mean, kBnMomentum),
                                     scale(tape.tensor(mu), 1.0 - kBnMomentum));
                    stats.var = add(scale(stats.var, kBnMomentum),
                                    scale(tape.tensor(var), 1.0 - kBnMomentum));
                    stats.populated = true;
                }
            } else {
                const RunningStats& stats = bn_stats_[layer.bn];
                if (!stats.populated) {
                    throw StateError("forward: eval mode with unpopulated running stats");
                }
                Tensor inv_std =
                    recip(sqrt_elem(add_scalar(stats.var, kBnEps)));
                Value xhat = tape.mul_rowvec(
                    tape.add_rowvec(z, tape.constant(neg(stats.mean))),
                    tape.constant(inv_std));
                z = tape.add_rowvec(tape.mul_rowvec(xhat, pv(layer.gamma)),
                                    pv(layer.beta));
            }
        }
        flat = tape.relu(z);
    }

    const std::size_t feat_dim = cfg_.encoder_widths.back();
    Value pooled = tape.mean_points(tape.reshape(flat, {bsz, m, feat_dim}));

    Value h = pooled;
    for (std::size_t i = 0; i < head_layers_.size(); ++i) {
        const LayerRef& layer = head_layers_[i];
        Value z = tape.add_rowvec(tape.matmul(h, pv(layer.w)), pv(layer.b));
        // No activation after the final affine layer.
        h = (i + 1 < head_layers_.size()) ? tape.relu(z) : z;
    }

    if (param_values) *param_values = std::move(bound);
    return tape.reshape(h, {bsz});
}

EnergyNet::TapeForward EnergyNet::forward_on_tape(Tape& tape, const Tensor& batch,
                                                  BnMode mode, bool input_grad,
                                                  bool bind_params,
                                                  bool update_stats) {
    TapeForward fwd;
    fwd.input = input_grad ? tape.leaf(batch) : tape.constant(batch);
    std::vector<Value> bound;
    fwd.energies = build_energies(tape, fwd.input, mode, bind_params,
                                  update_stats, &bound);
    if (bind_params) fwd.params = std::move(bound);
    return fwd;
}

Value EnergyNet::energy_sum(Tape& tape, Value x) const {
    // Sampling path: parameters constant, eval-mode normalization.
    auto* self = const_cast<EnergyNet*>(this);
    Value energies = self->build_energies(tape, x, BnMode::eval, false, false, nullptr);
    return tape.sum_all(energies);
}

Tensor EnergyNet::encode_plain(const Tensor& flat, BnMode mode,
                               std::size_t upto) const {
    Tensor h = flat;
    const std::size_t end = std::min(upto, enc_layers_.size());
    for (std::size_t i = 0; i < end; ++i) {
        const LayerRef& layer = enc_layers_[i];
        Tensor z = add_rowvec(matmul(h, params_[layer.w]), params_[layer.b]);
        if (layer.bn != npos) {
            RunningStats scratch = bn_stats_[layer.bn]; // eval reads, train discards
            z = batch_norm(z, params_[layer.gamma], params_[layer.beta], mode,
                           scratch, kBnEps, kBnMomentum);
        }
        h = relu(z);
    }
    return h;
}

Tensor EnergyNet::forward_plain(const Tensor& batch, BnMode mode) const {
    if (batch.rank() != 3 || batch.dim(2) != 3) {
        throw ShapeError("forward: input must be [B,M,3], got " + batch.shape_str());
    }
    const std::size_t bsz = batch.dim(0), m = batch.dim(1);
    Tensor feats = encode_plain(batch.reshape({bsz * m, 3}), mode, npos);
    Tensor h = mean_points(feats.reshape({bsz, m, cfg_.encoder_widths.back()}));
    for (std::size_t i = 0; i < head_layers_.size(); ++i) {
        const LayerRef& layer = head_layers_[i];
        Tensor z = add_rowvec(matmul(h, params_[layer.w]), params_[layer.b]);
        h = (i + 1 < head_layers_.size()) ? relu(z) : z;
    }
    return h.reshape({bsz});
}

std::vector<double> EnergyNet::energy_forward(std::span<const PointCloud> batch,
                                              BnMode mode) const {
    Tensor e = forward_plain(pack_clouds(batch), mode);
    return std::vector<double>(e.data().begin(), e.data().end());
}

std::vector<Tensor> EnergyNet::grad_params(const Tensor& batch, BnMode mode,
                                           bool update_stats) {
    if (batch.rank() != 3 || batch.dim(0) == 0) {
        throw ContractError("grad_params: non-empty [B,M,3] batch required");
    }
    Tape tape;
    TapeForward fwd = forward_on_tape(tape, batch, mode, false, true, update_stats);
    Value objective =
        tape.scale(tape.sum_all(fwd.energies), 1.0 / static_cast<double>(batch.dim(0)));
    std::vector<Value> adj = tape.backward(objective, fwd.params);
    std::vector<Tensor> grads(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        grads[i] = adj[i].valid() ? tape.tensor(adj[i])
                                  : Tensor::zeros(params_[i].shape());
    }
    return grads;
}

Tensor EnergyNet::grad_input(const Tensor& batch) const {
    if (batch.rank() != 3 || batch.dim(0) == 0) {
        throw ContractError("grad_input: non-empty [B,M,3] batch required");
    }
    Tape tape;
    Value x = tape.leaf(batch);
    Value total = const_cast<EnergyNet*>(this)->energy_sum(tape, x);
    Value g = tape.grad(total, x);
    return tape.tensor(g);
}

Tensor EnergyNet::point_features(const PointCloud& cloud, std::size_t layer) const {
    if (layer >= enc_layers_.size()) {
        throw ContractError("point_features: layer index out of range");
    }
    cloud.validate();
    Tensor flat = pack_cloud(cloud).reshape({cloud.size(), 3});
    return encode_plain(flat, BnMode::eval, layer + 1);
}

Tensor EnergyNet::global_feature(const PointCloud& cloud, Pool pool) const {
    cloud.validate();
    const std::size_t m = cloud.size();
    Tensor flat = pack_cloud(cloud).reshape({m, 3});
    Tensor feats = encode_plain(flat, BnMode::eval, npos)
                       .reshape({1, m, cfg_.encoder_widths.back()});
    Tensor pooled = pool == Pool::mean ? mean_points(feats) : max_points(feats);
    return pooled.reshape({cfg_.encoder_widths.back()});
}

} // namespace pebm
