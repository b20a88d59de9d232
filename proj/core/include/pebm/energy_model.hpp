#pragma once

#include "pebm/tape.hpp"

namespace pebm {

// Anything the Langevin sampler can draw from: a differentiable scalar
// score per cloud, recorded on a tape. Implementations must not mutate
// their own state (sampling reads parameters only).
class EnergyModel {
public:
    virtual ~EnergyModel() = default;

    // Records the sum over the batch of per-cloud scores f(X_b) for a
    // [B,M,3] value `x` and returns the scalar node. Per-cloud terms must
    // be decoupled so that the adjoint of `x` holds each cloud's own
    // coordinate gradient.
    virtual Value energy_sum(Tape& tape, Value x) const = 0;
};

} // namespace pebm
