#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pebm/errors.hpp"

namespace pebm {

// Dense row-major array of 64-bit floats. Immutable once constructed;
// copies share the underlying buffer, so Tensor behaves like a cheap value.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double value);
    static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data);
    static Tensor scalar(double value) { return from_data({1}, {value}); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_ ? data_->size() : 0; }
    bool empty() const { return size() == 0; }

    std::span<const double> data() const {
        return data_ ? std::span<const double>(*data_) : std::span<const double>();
    }
    double operator[](std::size_t i) const { return (*data_)[i]; }

    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

    // Shares the buffer; total size must match.
    Tensor reshape(std::vector<std::size_t> shape) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

    // Element access for 2-d / 3-d tensors (test and glue code convenience).
    double at(std::size_t i, std::size_t j) const {
        return (*data_)[i * shape_[1] + j];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return (*data_)[(i * shape_[1] + j) * shape_[2] + k];
    }

private:
    Tensor(std::vector<std::size_t> shape, std::shared_ptr<const std::vector<double>> data)
        : shape_(std::move(shape)), data_(std::move(data)) {}

    std::vector<std::size_t> shape_;
    std::shared_ptr<const std::vector<double>> data_;
};

std::size_t shape_product(std::span<const std::size_t> shape);

// ---- element-wise and linear-algebra kernels -------------------------------
//
// All kernels allocate their result; inputs are never modified. Shape
// mismatches raise ShapeError.

Tensor matmul(const Tensor& a, const Tensor& b); // [m,k] x [k,n] -> [m,n]
Tensor transpose(const Tensor& a);               // [m,n] -> [n,m]

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor square(const Tensor& a);
Tensor sqrt_elem(const Tensor& a);
Tensor recip(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor relu_mask(const Tensor& a); // 1 where a > 0, else 0

// Row-vector broadcasts over the trailing axis of a 2-d tensor.
Tensor add_rowvec(const Tensor& a, const Tensor& v); // [r,c] + [c]
Tensor mul_rowvec(const Tensor& a, const Tensor& v); // [r,c] * [c]
Tensor sum_rows(const Tensor& a);                    // [r,c] -> [c]
Tensor broadcast_rows(const Tensor& v, std::size_t rows); // [c] -> [r,c]

Tensor sum_all(const Tensor& a);                    // -> [1]
Tensor fill_like(std::span<const std::size_t> shape, double value);

// ---- point-axis reductions over [B,M,C] tensors ----------------------------

// Mean over the point axis. Uses an order-invariant exact accumulator, so
// the result is bit-identical under any permutation of the M points.
Tensor mean_points(const Tensor& a);                          // [B,M,C] -> [B,C]
Tensor repeat_points(const Tensor& a, std::size_t m);         // [B,C] -> [B,M,C]
Tensor sum_points(const Tensor& a);                           // [B,M,C] -> [B,C]
Tensor max_points(const Tensor& a, std::vector<std::uint32_t>* argmax = nullptr);
Tensor gather_points(const Tensor& a, std::span<const std::uint32_t> idx); // [B,M,C] -> [B,C]
Tensor scatter_points(const Tensor& a, std::span<const std::uint32_t> idx,
                      std::size_t m);                         // [B,C] -> [B,M,C]

// ---- batch normalization ----------------------------------------------------

enum class BnMode { train, eval };

struct RunningStats {
    Tensor mean;
    Tensor var;
    bool populated = false;
};

// Batch norm over the rows of x [B,C]. Train mode normalizes by batch
// statistics (population variance, 1/B) and updates `stats` by EMA with
// the given momentum; eval mode normalizes by `stats`, which must be
// populated. Returns gamma * x_hat + beta.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BnMode mode, RunningStats& stats, double eps = 1e-5,
                  double momentum = 0.9);

// ---- reductions to plain doubles -------------------------------------------

double dot(const Tensor& a, const Tensor& b);
double norm(const Tensor& a);       // Euclidean
double max_abs(const Tensor& a);
bool all_finite(const Tensor& a);

// Order-invariant sum: the result depends only on the multiset of values,
// not their order, and is accurate to ~1 ulp of the true sum. Values must
// be finite.
double stable_sum(std::span<const double> values);

} // namespace pebm
