#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pebm/energy_model.hpp"
#include "pebm/point_cloud.hpp"
#include "pebm/tape.hpp"
#include "pebm/tensor.hpp"

namespace pebm {

// Architecture of the scalar score network: a per-point MLP encoder shared
// across points, average pooling over the point axis, then an MLP head
// whose final layer is affine with one output.
struct NetConfig {
    std::vector<std::size_t> encoder_widths{32, 64, 128};
    std::vector<std::size_t> head_widths{64, 32, 1};
    bool use_batch_norm_encoder = true;

    void validate() const;
};

enum class Pool { mean, max };

// Permutation-invariant scalar score f(X) over point clouds, with tape
// forwards for parameter and coordinate gradients. Parameters may be read
// concurrently; mutation (set_param, stats updates) needs exclusive access.
class EnergyNet : public EnergyModel {
public:
    EnergyNet() = default;

    // Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases,
    // gamma 1 / beta 0, running stats (0,1). Deterministic in `seed`.
    static EnergyNet init(const NetConfig& config, std::uint64_t seed);

    const NetConfig& config() const { return cfg_; }

    // ---- trainable parameters (flattened, stable order) ----
    std::size_t num_params() const { return params_.size(); }
    const std::string& param_name(std::size_t i) const { return param_names_[i]; }
    const Tensor& param(std::size_t i) const { return params_[i]; }
    void set_param(std::size_t i, Tensor t);
    std::size_t total_param_count() const;

    // ---- batch-norm running statistics (not trainable) ----
    std::size_t num_bn_layers() const { return bn_stats_.size(); }
    const RunningStats& bn_stats(std::size_t layer) const { return bn_stats_[layer]; }
    void set_bn_stats(std::size_t layer, RunningStats stats);

    // ---- tape forward ----
    struct TapeForward {
        Value energies;             // [B], per-cloud scores
        Value input;                // the [B,M,3] node
        std::vector<Value> params;  // bound parameter leaves (empty if constant)
    };

    // Builds the forward graph for `batch` [B,M,3]. With bind_params the
    // parameters enter as leaves (for grad_params); otherwise as constants.
    // update_stats folds the train-mode batch statistics into the running
    // stats and requires BnMode::train.
    TapeForward forward_on_tape(Tape& tape, const Tensor& batch, BnMode mode,
                                bool input_grad, bool bind_params,
                                bool update_stats = false);

    // EnergyModel: eval-mode score sum with constant parameters.
    Value energy_sum(Tape& tape, Value x) const override;

    // ---- plain (tape-free) evaluation ----
    // Pure in both modes: train mode uses batch statistics without
    // touching the running stats.
    Tensor forward_plain(const Tensor& batch, BnMode mode = BnMode::eval) const;
    std::vector<double> energy_forward(std::span<const PointCloud> batch,
                                       BnMode mode = BnMode::eval) const;

    // ---- gradients ----
    // d(mean_b f(X_b))/dtheta, one tensor per parameter.
    std::vector<Tensor> grad_params(const Tensor& batch,
                                    BnMode mode = BnMode::eval,
                                    bool update_stats = false);
    // df(X_b)/dX_b per cloud, eval mode; shape [B,M,3].
    Tensor grad_input(const Tensor& batch) const;

    // Post-activation encoder outputs at `layer` for each point; [M,C].
    Tensor point_features(const PointCloud& cloud, std::size_t layer) const;
    // Pooled final encoder features; [C].
    Tensor global_feature(const PointCloud& cloud, Pool pool) const;

private:
    Value build_energies(Tape& tape, Value x, BnMode mode, bool bind_params,
                         bool update_stats, std::vector<Value>* param_values);

    // Per-point encoder applied to flat [N,3] rows up to and including
    // encoder layer `upto` (exclusive end; npos = all layers).
    Tensor encode_plain(const Tensor& flat, BnMode mode, std::size_t upto) const;

    struct LayerRef {
        std::size_t w, b;              // indices into params_
        std::size_t gamma = npos, beta = npos;
        std::size_t bn = npos;         // index into bn_stats_
    };
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    NetConfig cfg_;
    std::vector<Tensor> params_;
    std::vector<std::string> param_names_;
    std::vector<RunningStats> bn_stats_;
    std::vector<LayerRef> enc_layers_;
    std::vector<LayerRef> head_layers_;

    static constexpr double kBnEps = 1e-5;
    static constexpr double kBnMomentum = 0.9;
};

} // namespace pebm
