#pragma once

#include <cstddef>
#include <vector>

#include "cf3d/rng.hpp"
#include "cf3d/tensor.hpp"

namespace cf3d::ad {

enum class Mode { Train, Eval };
enum class Padding { Same, Valid };
enum class PoolKind { Max, Avg };

// ---- convolution -----------------------------------------------------------

/// Cross-correlation of x [n,h,w,c_in] with kernel [k,k,c_in,c_out].
/// Same padding gives ceil(h/stride) outputs (TensorFlow convention: extra
/// padding goes to the bottom/right). `bias` may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride, Padding padding);
inline Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride, Padding padding) {
    return conv2d(x, kernel, Tensor{}, stride, padding);
}

/// Adjoint of a same-padded conv2d: x [n,h,w,c_in], kernel [k,k,c_out,c_in]
/// produces [n, h*stride, w*stride, c_out].
Tensor conv_transpose2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride);

// ---- dense -----------------------------------------------------------------

/// x [n_in] or [batch, n_in]; W [n_in, n_out]; b [n_out] (may be undefined).
Tensor dense(const Tensor& x, const Tensor& W, const Tensor& b);

// ---- activations -----------------------------------------------------------

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// ---- normalization ---------------------------------------------------------

struct BatchNormOptions {
    double momentum = 0.1;
    double eps = 1e-5;
};

/// Per-channel normalization of x [n,h,w,c]. In train mode uses batch
/// statistics (biased variance) and blends them into running_mean /
/// running_var; eval mode uses the running statistics and leaves them alone.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                   Tensor& running_var, Mode mode, const BatchNormOptions& opts = {});

// ---- pooling ---------------------------------------------------------------

/// k x k window with the given stride, valid padding.
Tensor pool2d(const Tensor& x, PoolKind kind, std::size_t k, std::size_t stride);
/// [n,h,w,c] -> [n,1,1,c]
Tensor global_pool_channel(const Tensor& x, PoolKind kind);
/// [n,h,w,c] -> [n,h,w,1]
Tensor global_pool_pixel(const Tensor& x, PoolKind kind);

// ---- elementwise / structural ----------------------------------------------

/// Elementwise ops broadcast size-1 axes of equal-rank operands.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
/// Expands size-1 axes of x to `shape` (same rank).
Tensor broadcast_to(const Tensor& x, const Shape& shape);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
/// [n, ...] -> [n, prod(...)]
Tensor flatten(const Tensor& x);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

/// Train: zero each element with probability `rate`, scale survivors by
/// 1/(1-rate). Eval: identity.
Tensor dropout(const Tensor& x, double rate, Rng& rng, Mode mode);

// ---- reductions and losses -------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor frobenius_norm(const Tensor& x);
/// Norm of each leading-axis slice: [n, ...] -> [n].
Tensor frobenius_norm_rows(const Tensor& x);
Tensor mse(const Tensor& pred, const Tensor& target);

/// Mean-centred cosine similarity of each leading-axis slice of a and b:
/// [n, ...] x [n, ...] -> [n]. A slice whose centred norm is zero yields 0
/// with zero gradient; `degenerate` (if given) counts such rows.
Tensor adjusted_cosine_rows(const Tensor& a, const Tensor& b, std::size_t* degenerate = nullptr);

}  // namespace cf3d::ad
