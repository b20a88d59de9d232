#include "pebm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "pebm/thread_pool.hpp"

namespace pebm {

namespace {

void check(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

std::vector<double> alloc(std::size_t n) { return std::vector<double>(n); }

} // namespace

std::size_t shape_product(std::span<const std::size_t> shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    return full(std::move(shape), 0.0);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    std::size_t n = shape_product(shape);
    return Tensor(std::move(shape),
                  std::make_shared<const std::vector<double>>(n, value));
}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> data) {
    if (shape_product(shape) != data.size()) {
        throw ShapeError("from_data: shape does not match data length");
    }
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("from_data: zero-sized dimension");
    }
    return Tensor(std::move(shape),
                  std::make_shared<const std::vector<double>>(std::move(data)));
}

Tensor Tensor::reshape(std::vector<std::size_t> shape) const {
    if (shape_product(shape) != size()) {
        throw ShapeError("reshape: element count mismatch (" + shape_str() + ")");
    }
    return Tensor(std::move(shape), data_);
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << ",";
        os << shape_[i];
    }
    os << "]";
    return os.str();
}

// ---- matmul -----------------------------------------------------------------

namespace {

// out[i,j] accumulates a[i,k]*b[k,j] strictly in ascending k, which keeps the
// result bit-identical to a naive i-j-k triple loop while letting the j loop
// vectorize. Parallel over row blocks; each output row is written by exactly
// one worker.
void matmul_kernel(const double* a, const double* b, double* out,
                   std::size_t m, std::size_t k, std::size_t n) {
    parallel_for(m, std::max<std::size_t>(1, 16384 / std::max<std::size_t>(1, k * n)),
                 [&](std::size_t ib, std::size_t ie) {
        for (std::size_t i = ib; i < ie; ++i) {
            double* out_row = out + i * n;
            std::fill(out_row, out_row + n, 0.0);
            const double* a_row = a + i * k;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double aik = a_row[kk];
                const double* b_row = b + kk * n;
                for (std::size_t j = 0; j < n; ++j) {
                    out_row[j] += aik * b_row[j];
                }
            }
        }
    });
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    check(a.rank() == 2 && b.rank() == 2, "matmul: operands must be rank 2");
    check(a.dim(1) == b.dim(0), "matmul: inner dimensions differ, " +
                                    a.shape_str() + " x " + b.shape_str());
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = alloc(m * n);
    matmul_kernel(a.data().data(), b.data().data(), out.data(), m, k, n);
    return Tensor::from_data({m, n}, std::move(out));
}

Tensor transpose(const Tensor& a) {
    check(a.rank() == 2, "transpose: operand must be rank 2");
    const std::size_t m = a.dim(0), n = a.dim(1);
    auto out = alloc(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    return Tensor::from_data({n, m}, std::move(out));
}

// ---- elementwise ------------------------------------------------------------

namespace {

template <class F>
Tensor binary_op(const Tensor& a, const Tensor& b, F f, const char* name) {
    check(a.same_shape(b), std::string(name) + ": shape mismatch " +
                               a.shape_str() + " vs " + b.shape_str());
    auto out = alloc(a.size());
    const auto da = a.data(), db = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(da[i], db[i]);
    return Tensor::from_data(a.shape(), std::move(out));
}

template <class F>
Tensor unary_op(const Tensor& a, F f) {
    auto out = alloc(a.size());
    const auto da = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(da[i]);
    return Tensor::from_data(a.shape(), std::move(out));
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, [](double x, double y) { return x + y; }, "add");
}
Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, [](double x, double y) { return x - y; }, "sub");
}
Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, [](double x, double y) { return x * y; }, "mul");
}
Tensor neg(const Tensor& a) {
    return unary_op(a, [](double x) { return -x; });
}
Tensor scale(const Tensor& a, double c) {
    return unary_op(a, [c](double x) { return x * c; });
}
Tensor add_scalar(const Tensor& a, double c) {
    return unary_op(a, [c](double x) { return x + c; });
}
Tensor square(const Tensor& a) {
    return unary_op(a, [](double x) { return x * x; });
}
Tensor sqrt_elem(const Tensor& a) {
    return unary_op(a, [](double x) { return std::sqrt(x); });
}
Tensor recip(const Tensor& a) {
    return unary_op(a, [](double x) { return 1.0 / x; });
}
Tensor relu(const Tensor& a) {
    return unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; });
}
Tensor relu_mask(const Tensor& a) {
    return unary_op(a, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

// ---- row-vector broadcasts --------------------------------------------------

namespace {
void check_rowvec(const Tensor& a, const Tensor& v, const char* name) {
    check(a.rank() == 2 && v.rank() == 1 && v.dim(0) == a.dim(1),
          std::string(name) + ": want [r,c] with [c], got " + a.shape_str() +
              " with " + v.shape_str());
}
} // namespace

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    check_rowvec(a, v, "add_rowvec");
    const std::size_t r = a.dim(0), c = a.dim(1);
    auto out = alloc(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] = a.data()[i * c + j] + v.data()[j];
        }
    }
    return Tensor::from_data(a.shape(), std::move(out));
}

Tensor mul_rowvec(const Tensor& a, const Tensor& v) {
    check_rowvec(a, v, "mul_rowvec");
    const std::size_t r = a.dim(0), c = a.dim(1);
    auto out = alloc(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] = a.data()[i * c + j] * v.data()[j];
        }
    }
    return Tensor::from_data(a.shape(), std::move(out));
}

Tensor sum_rows(const Tensor& a) {
    check(a.rank() == 2, "sum_rows: operand must be rank 2");
    const std::size_t r = a.dim(0), c = a.dim(1);
    auto out = alloc(c);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) out[j] += a.data()[i * c + j];
    }
    return Tensor::from_data({c}, std::move(out));
}

Tensor broadcast_rows(const Tensor& v, std::size_t rows) {
    check(v.rank() == 1, "broadcast_rows: operand must be rank 1");
    const std::size_t c = v.dim(0);
    auto out = alloc(rows * c);
    for (std::size_t i = 0; i < rows; ++i) {
        std::memcpy(out.data() + i * c, v.data().data(), c * sizeof(double));
    }
    return Tensor::from_data({rows, c}, std::move(out));
}

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double x : a.data()) s += x;
    return Tensor::scalar(s);
}

Tensor fill_like(std::span<const std::size_t> shape, double value) {
    return Tensor::full(std::vector<std::size_t>(shape.begin(), shape.end()), value);
}

// ---- order-invariant sum ----------------------------------------------------

double stable_sum(std::span<const double> values) {
    // Fixed-point accumulation in a 128-bit integer aligned to the largest
    // exponent present. Integer addition commutes, so the result depends
    // only on the multiset of values; per-term rounding keeps ~62 bits
    // below the largest magnitude, within 1 ulp of the true sum for any
    // realistic count.
    double amax = 0.0;
    for (double v : values) amax = std::max(amax, std::fabs(v));
    if (amax == 0.0) return 0.0;
    int emax = 0;
    std::frexp(amax, &emax); // amax = f * 2^emax, f in [0.5, 1)
    const int shift = 62 - emax;
    __int128 acc = 0;
    for (double v : values) {
        acc += static_cast<__int128>(llrint(std::ldexp(v, shift)));
    }
    // __int128 -> double conversion rounds correctly to nearest.
    return std::ldexp(static_cast<double>(acc), -shift);
}

// ---- point-axis reductions --------------------------------------------------

namespace {
void check_points(const Tensor& a, const char* name) {
    check(a.rank() == 3, std::string(name) + ": operand must be [B,M,C], got " +
                             a.shape_str());
}
} // namespace

Tensor mean_points(const Tensor& a) {
    check_points(a, "mean_points");
    const std::size_t bsz = a.dim(0), m = a.dim(1), c = a.dim(2);
    auto out = alloc(bsz * c);
    std::vector<double> column(m);
    for (std::size_t b = 0; b < bsz; ++b) {
        const double* base = a.data().data() + b * m * c;
        for (std::size_t j = 0; j < c; ++j) {
            for (std::size_t i = 0; i < m; ++i) column[i] = base[i * c + j];
            out[b * c + j] = stable_sum(column) / static_cast<double>(m);
        }
    }
    return Tensor::from_data({bsz, c}, std::move(out));
}

Tensor sum_points(const Tensor& a) {
    check_points(a, "sum_points");
    const std::size_t bsz = a.dim(0), m = a.dim(1), c = a.dim(2);
    auto out = alloc(bsz * c);
    for (std::size_t b = 0; b < bsz; ++b) {
        const double* base = a.data().data() + b * m * c;
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < c; ++j) out[b * c + j] += base[i * c + j];
        }
    }
    return Tensor::from_data({bsz, c}, std::move(out));
}

Tensor repeat_points(const Tensor& a, std::size_t m) {
    check(a.rank() == 2, "repeat_points: operand must be [B,C]");
    const std::size_t bsz = a.dim(0), c = a.dim(1);
    auto out = alloc(bsz * m * c);
    for (std::size_t b = 0; b < bsz; ++b) {
        for (std::size_t i = 0; i < m; ++i) {
            std::memcpy(out.data() + (b * m + i) * c, a.data().data() + b * c,
                        c * sizeof(double));
        }
    }
    return Tensor::from_data({bsz, m, c}, std::move(out));
}

Tensor max_points(const Tensor& a, std::vector<std::uint32_t>* argmax) {
    check_points(a, "max_points");
    const std::size_t bsz = a.dim(0), m = a.dim(1), c = a.dim(2);
    auto out = alloc(bsz * c);
    if (argmax) argmax->assign(bsz * c, 0);
    for (std::size_t b = 0; b < bsz; ++b) {
        const double* base = a.data().data() + b * m * c;
        for (std::size_t j = 0; j < c; ++j) {
            double best = base[j];
            std::size_t best_i = 0;
            for (std::size_t i = 1; i < m; ++i) {
                const double x = base[i * c + j];
                if (x > best) {
                    best = x;
                    best_i = i;
                }
            }
            out[b * c + j] = best;
            if (argmax) (*argmax)[b * c + j] = static_cast<std::uint32_t>(best_i);
        }
    }
    return Tensor::from_data({bsz, c}, std::move(out));
}

Tensor gather_points(const Tensor& a, std::span<const std::uint32_t> idx) {
    check_points(a, "gather_points");
    const std::size_t bsz = a.dim(0), m = a.dim(1), c = a.dim(2);
    check(idx.size() == bsz * c, "gather_points: index size mismatch");
    auto out = alloc(bsz * c);
    for (std::size_t b = 0; b < bsz; ++b) {
        for (std::size_t j = 0; j < c; ++j) {
            const std::size_t i = idx[b * c + j];
            check(i < m, "gather_points: index out of range");
            out[b * c + j] = a.data()[(b * m + i) * c + j];
        }
    }
    return Tensor::from_data({bsz, c}, std::move(out));
}

Tensor scatter_points(const Tensor& a, std::span<const std::uint32_t> idx,
                      std::size_t m) {
    check(a.rank() == 2, "scatter_points: operand must be [B,C]");
    const std::size_t bsz = a.dim(0), c = a.dim(1);
    check(idx.size() == bsz * c, "scatter_points: index size mismatch");
    auto out = alloc(bsz * m * c);
    for (std::size_t b = 0; b < bsz; ++b) {
        for (std::size_t j = 0; j < c; ++j) {
            const std::size_t i = idx[b * c + j];
            check(i < m, "scatter_points: index out of range");
            out[(b * m + i) * c + j] += a.data()[b * c + j];
        }
    }
    return Tensor::from_data({bsz, m, c}, std::move(out));
}

// ---- batch norm ------------------------------------------------------------

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BnMode mode, RunningStats& stats, double eps, double momentum) {
    check(x.rank() == 2, "batch_norm: input must be [B,C]");
    const std::size_t bsz = x.dim(0), c = x.dim(1);
    check(gamma.rank() == 1 && gamma.dim(0) == c, "batch_norm: gamma must be [C]");
    check(beta.rank() == 1 && beta.dim(0) == c, "batch_norm: beta must be [C]");

    Tensor mean_t, var_t;
    if (mode == BnMode::train) {
        if (bsz < 1) throw ContractError("batch_norm: empty batch");
        std::vector<double> mean(c, 0.0), var(c, 0.0);
        for (std::size_t i = 0; i < bsz; ++i) {
            for (std::size_t j = 0; j < c; ++j) mean[j] += x.data()[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) mean[j] /= static_cast<double>(bsz);
        for (std::size_t i = 0; i < bsz; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                const double d = x.data()[i * c + j] - mean[j];
                var[j] += d * d;
            }
        }
        for (std::size_t j = 0; j < c; ++j) var[j] /= static_cast<double>(bsz);
        mean_t = Tensor::from_data({c}, mean);
        var_t = Tensor::from_data({c}, var);
        if (!stats.populated) {
            stats.mean = mean_t;
            stats.var = var_t;
            stats.populated = true;
        } else {
            stats.mean = add(scale(stats.mean, momentum), scale(mean_t, 1.0 - momentum));
            stats.var = add(scale(stats.var, momentum), scale(var_t, 1.0 - momentum));
        }
    } else {
        if (!stats.populated) {
            throw StateError("batch_norm: eval mode with unpopulated running stats");
        }
        mean_t = stats.mean;
        var_t = stats.var;
    }

    auto out = alloc(bsz * c);
    for (std::size_t j = 0; j < c; ++j) {
        const double inv = 1.0 / std::sqrt(var_t[j] + eps);
        const double g = gamma[j], bshift = beta[j], mu = mean_t[j];
        for (std::size_t i = 0; i < bsz; ++i) {
            out[i * c + j] = (x.data()[i * c + j] - mu) * inv * g + bshift;
        }
    }
    return Tensor::from_data(x.shape(), std::move(out));
}

// ---- scalar reductions ------------------------------------------------------

double dot(const Tensor& a, const Tensor& b) {
    check(a.size() == b.size(), "dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
    return s;
}

double norm(const Tensor& a) {
    double s = 0.0;
    for (double x : a.data()) s += x * x;
    return std::sqrt(s);
}

double max_abs(const Tensor& a) {
    double s = 0.0;
    for (double x : a.data()) s = std::max(s, std::fabs(x));
    return s;
}

bool all_finite(const Tensor& a) {
    for (double x : a.data()) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

} // namespace pebm
