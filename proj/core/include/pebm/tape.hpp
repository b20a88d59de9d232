#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pebm/tensor.hpp"

namespace pebm {

class Tape;

// Handle to a node on a tape. Only meaningful with the tape that created it.
struct Value {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode differentiation record. Nodes are appended in evaluation
// order (which is therefore topological), each carrying its result tensor
// and a VJP builder. The VJP builders emit ordinary tape nodes, so adjoints
// are themselves differentiable values: backward() can be applied to a
// graph that already contains an earlier backward pass, which is how
// gradients flow through the unrolled sampling dynamics.
//
// A tape is single-writer: confine each tape to the evaluation that
// created it.
class Tape {
public:
    // Leaves participate in differentiation; constants do not.
    Value leaf(Tensor t);
    Value constant(Tensor t);

    const Tensor& tensor(Value v) const { return nodes_[check_id(v)].out; }
    bool requires_grad(Value v) const { return nodes_[check_id(v)].requires_grad; }
    std::size_t num_nodes() const { return nodes_.size(); }

    Value matmul(Value a, Value b);
    Value transpose(Value a);
    Value add(Value a, Value b);
    Value sub(Value a, Value b);
    Value neg(Value a);
    Value mul(Value a, Value b);
    Value scale(Value a, double c);
    Value add_scalar(Value a, double c);
    Value square(Value a);
    Value sqrt(Value a);
    Value recip(Value a);
    Value relu(Value a);
    Value add_rowvec(Value a, Value v);
    Value mul_rowvec(Value a, Value v);
    Value sum_rows(Value a);
    Value broadcast_rows(Value v, std::size_t rows);
    Value sum_all(Value a);
    Value fill_like(std::vector<std::size_t> shape, Value scalar);
    Value reshape(Value a, std::vector<std::size_t> shape);
    Value mean_points(Value a);
    Value sum_points(Value a);
    Value repeat_points(Value a, std::size_t m);
    Value max_points(Value a);
    Value gather_points(Value a, std::vector<std::uint32_t> idx);
    Value scatter_points(Value a, std::vector<std::uint32_t> idx, std::size_t m);

    // Reverse pass from a scalar root. Returns the adjoint of each entry of
    // `wrt` (invalid when the root does not depend on it). Adjoints are
    // appended to this tape as new nodes; `stop` nodes receive adjoints but
    // are not propagated through, which bounds the pass to the subgraph of
    // interest when differentiating step by step.
    std::vector<Value> backward(Value root, std::span<const Value> wrt,
                                std::span<const Value> stop = {});

    // Convenience: adjoint of a single value.
    Value grad(Value root, Value wrt, std::span<const Value> stop = {});

private:
    // A VJP builder returns the adjoint contribution for each input slot.
    using Vjp = std::function<std::array<Value, 2>(Tape&, Value up)>;

    struct Node {
        Tensor out;
        std::array<int, 2> in{{-1, -1}};
        bool requires_grad = false;
        Vjp vjp;
    };

    int check_id(Value v) const;
    Value push(Tensor out, Value a, Value b, Vjp vjp);

    std::vector<Node> nodes_;
};

} // namespace pebm
