#include "pebm/tape.hpp"

#include <algorithm>

namespace pebm {

int Tape::check_id(Value v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size()) {
        throw ContractError("tape: value does not belong to this tape");
    }
    return v.id;
}

Value Tape::push(Tensor out, Value a, Value b, Vjp vjp) {
    Node n;
    n.out = std::move(out);
    n.in = {a.id, b.id};
    n.requires_grad = (a.valid() && nodes_[a.id].requires_grad) ||
                      (b.valid() && nodes_[b.id].requires_grad);
    if (n.requires_grad) n.vjp = std::move(vjp);
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Tape::leaf(Tensor t) {
    Node n;
    n.out = std::move(t);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Tape::constant(Tensor t) {
    Node n;
    n.out = std::move(t);
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Tape::matmul(Value a, Value b) {
    Tensor out = pebm::matmul(tensor(a), tensor(b));
    return push(std::move(out), a, b, [a, b](Tape& t, Value up) {
        std::array<Value, 2> g;
        if (t.requires_grad(a)) g[0] = t.matmul(up, t.transpose(b));
        if (t.requires_grad(b)) g[1] = t.matmul(t.transpose(a), up);
        return g;
    });
}

Value Tape::transpose(Value a) {
    return push(pebm::transpose(tensor(a)), a, {}, [](Tape& t, Value up) {
        return std::array<Value, 2>{t.transpose(up), Value{}};
    });
}

Value Tape::add(Value a, Value b) {
    return push(pebm::add(tensor(a), tensor(b)), a, b, [a, b](Tape& t, Value up) {
        std::array<Value, 2> g;
        if (t.requires_grad(a)) g[0] = up;
        if (t.requires_grad(b)) g[1] = up;
        return g;
    });
}

Value Tape::sub(Value a, Value b) {
    return push(pebm::sub(tensor(a), tensor(b)), a, b, [a, b](Tape& t, Value up) {
        std::array<Value, 2> g;
        if (t.requires_grad(a)) g[0] = up;
        if (t.requires_grad(b)) g[1] = t.neg(up);
        return g;
    });
}

Value Tape::neg(Value a) {
    return push(pebm::neg(tensor(a)), a, {}, [](Tape& t, Value up) {
        return std::array<Value, 2>{t.neg(up), Value{}};
    });
}

Value Tape::mul(Value a, Value b) {
    return push(pebm::mul(tensor(a), tensor(b)), a, b, [a, b](Tape& t, Value up) {
        std::array<Value, 2> g;
        if (t.requires_grad(a)) g[0] = t.mul(up, b);
        if (t.requires_grad(b)) g[1] = t.mul(up, a);
        return g;
    });
}

Value Tape::scale(Value a, double c) {
    return push(pebm::scale(tensor(a), c), a, {}, [c](Tape& t, Value up) {
        return std::array<Value, 2>{t.scale(up, c), Value{}};
    });
}

Value Tape::add_scalar(Value a, double c) {
    return push(pebm::add_scalar(tensor(a), c), a, {}, [](Tape&, Value up) {
        return std::array<Value, 2>{up, Value{}};
    });
}

Value Tape::square(Value a) {
    return push(pebm::square(tensor(a)), a, {}, [a](Tape& t, Value up) {
        return std::array<Value, 2>{t.mul(up, t.scale(a, 2.0)), Value{}};
    });
}

Value Tape::sqrt(Value a) {
    Value y = push(pebm::sqrt_elem(tensor(a)), a, {}, nullptr);
    // d sqrt(a) = up / (2 sqrt(a)); reuse the output node.
    nodes_[y.id].vjp = [y](Tape& t, Value up) {
        return std::array<Value, 2>{t.scale(t.mul(up, t.recip(y)), 0.5), Value{}};
    };
    return y;
}

Value Tape::recip(Value a) {
    Value y = push(pebm::recip(tensor(a)), a, {}, nullptr);
    nodes_[y.id].vjp = [y](Tape& t, Value up) {
        return std::array<Value, 2>{t.neg(t.mul(up, t.square(y))), Value{}};
    };
    return y;
}

Value Tape::relu(Value a) {
    Tensor mask = pebm::relu_mask(tensor(a));
    return push(pebm::relu(tensor(a)), a, {},
                [mask = std::move(mask)](Tape& t, Value up) {
        // The active-set mask is locally constant, so it enters as data.
        return std::array<Value, 2>{t.mul(up, t.constant(mask)), Value{}};
    });
}

Value Tape::add_rowvec(Value a, Value v) {
    return push(pebm::add_rowvec(tensor(a), tensor(v)), a, v,
                [a, v](Tape& t, Value up) {
        std::array<Value, 2> g;
        if (t.requires_grad(a)) g[0] = up;
        if (t.requires_grad(v)) g[1] = t.sum_rows(up);
        return g;
    });
}

Value Tape::mul_rowvec(Value a, Value v) {
    return push(pebm::mul_rowvec(tensor(a), tensor(v)), a, v,
                [a, v](Tape& t, Value up) {
        std::array<Value, 2> g;
        if (t.requires_grad(a)) g[0] = t.mul_rowvec(up, v);
        if (t.requires_grad(v)) g[1] = t.sum_rows(t.mul(up, a));
        return g;
    });
}

Value Tape::sum_rows(Value a) {
    const std::size_t rows = tensor(a).dim(0);
    return push(pebm::sum_rows(tensor(a)), a, {}, [rows](Tape& t, Value up) {
        return std::array<Value, 2>{t.broadcast_rows(up, rows), Value{}};
    });
}

Value Tape::broadcast_rows(Value v, std::size_t rows) {
    return push(pebm::broadcast_rows(tensor(v), rows), v, {},
                [](Tape& t, Value up) {
        return std::array<Value, 2>{t.sum_rows(up), Value{}};
    });
}

Value Tape::sum_all(Value a) {
    std::vector<std::size_t> shape = tensor(a).shape();
    return push(pebm::sum_all(tensor(a)), a, {},
                [shape = std::move(shape)](Tape& t, Value up) {
        return std::array<Value, 2>{t.fill_like(shape, up), Value{}};
    });
}

Value Tape::fill_like(std::vector<std::size_t> shape, Value scalar) {
    const Tensor& s = tensor(scalar);
    if (s.size() != 1) throw ContractError("fill_like: scalar operand required");
    Tensor out = Tensor::full(shape, s[0]);
    return push(std::move(out), scalar, {}, [](Tape& t, Value up) {
        return std::array<Value, 2>{t.sum_all(up), Value{}};
    });
}

Value Tape::reshape(Value a, std::vector<std::size_t> shape) {
    std::vector<std::size_t> original = tensor(a).shape();
    return push(tensor(a).reshape(std::move(shape)), a, {},
                [original = std::move(original)](Tape& t, Value up) {
        return std::array<Value, 2>{t.reshape(up, original), Value{}};
    });
}

Value Tape::mean_points(Value a) {
    const std::size_t m = tensor(a).dim(1);
    return push(pebm::mean_points(tensor(a)), a, {}, [m](Tape& t, Value up) {
        return std::array<Value, 2>{
            t.repeat_points(t.scale(up, 1.0 / static_cast<double>(m)), m), Value{}};
    });
}

Value Tape::sum_points(Value a) {
    const std::size_t m = tensor(a).dim(1);
    return push(pebm::sum_points(tensor(a)), a, {}, [m](Tape& t, Value up) {
        return std::array<Value, 2>{t.repeat_points(up, m), Value{}};
    });
}

Value Tape::repeat_points(Value a, std::size_t m) {
    return push(pebm::repeat_points(tensor(a), m), a, {}, [](Tape& t, Value up) {
        return std::array<Value, 2>{t.sum_points(up), Value{}};
    });
}

Value Tape::max_points(Value a) {
    std::vector<std::uint32_t> idx;
    Tensor out = pebm::max_points(tensor(a), &idx);
    const std::size_t m = tensor(a).dim(1);
    return push(std::move(out), a, {},
                [idx = std::move(idx), m](Tape& t, Value up) {
        return std::array<Value, 2>{t.scatter_points(up, idx, m), Value{}};
    });
}

Value Tape::gather_points(Value a, std::vector<std::uint32_t> idx) {
    const std::size_t m = tensor(a).dim(1);
    Tensor out = pebm::gather_points(tensor(a), idx);
    return push(std::move(out), a, {},
                [idx = std::move(idx), m](Tape& t, Value up) {
        return std::array<Value, 2>{t.scatter_points(up, idx, m), Value{}};
    });
}

Value Tape::scatter_points(Value a, std::vector<std::uint32_t> idx, std::size_t m) {
    Tensor out = pebm::scatter_points(tensor(a), idx, m);
    return push(std::move(out), a, {}, [idx = std::move(idx)](Tape& t, Value up) {
        return std::array<Value, 2>{t.gather_points(up, idx), Value{}};
    });
}

std::vector<Value> Tape::backward(Value root, std::span<const Value> wrt,
                                  std::span<const Value> stop) {
    const int root_id = check_id(root);
    if (tensor(root).size() != 1) {
        throw ContractError("backward: root must be a scalar node");
    }

    std::vector<Value> adjoint(static_cast<std::size_t>(root_id) + 1, Value{});
    adjoint[root_id] = constant(Tensor::scalar(1.0));

    std::vector<char> stopped(static_cast<std::size_t>(root_id) + 1, 0);
    for (Value s : stop) {
        const int id = check_id(s);
        if (id <= root_id) stopped[id] = 1;
    }

    for (int id = root_id; id >= 0; --id) {
        if (!adjoint[id].valid()) continue;
        const Node& node = nodes_[id];
        if (!node.requires_grad || !node.vjp || stopped[id]) continue;
        const auto contributions = node.vjp(*this, adjoint[id]);
        for (int slot = 0; slot < 2; ++slot) {
            const int input = node.in[slot];
            if (input < 0 || !contributions[slot].valid()) continue;
            if (!nodes_[input].requires_grad) continue;
            adjoint[input] = adjoint[input].valid()
                                 ? add(adjoint[input], contributions[slot])
                                 : contributions[slot];
        }
    }

    std::vector<Value> out;
    out.reserve(wrt.size());
    for (Value w : wrt) {
        const int id = check_id(w);
        out.push_back(id <= root_id ? adjoint[id] : Value{});
    }
    return out;
}

Value Tape::grad(Value root, Value wrt, std::span<const Value> stop) {
    Value w[1] = {wrt};
    auto g = backward(root, w, stop);
    if (!g[0].valid()) {
        // Root does not depend on wrt: the gradient is identically zero.
        return constant(Tensor::zeros(tensor(wrt).shape()));
    }
    return g[0];
}

} // namespace pebm
