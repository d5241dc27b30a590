#pragma once

#include <string>
#include <vector>

#include "cf3d/ops.hpp"
#include "cf3d/rng.hpp"
#include "cf3d/tensor.hpp"

namespace cf3d::ad {

/// A parameter or buffer as seen by optimizers and checkpoints.
struct NamedTensor {
    std::string name;
    Tensor tensor;
    bool trainable = true;
};

using ParamList = std::vector<NamedTensor>;

/// Trainable tensors only, in registration order.
std::vector<Tensor> trainable(const ParamList& params);

/// He-normal initialised kernel, zero bias.
struct Conv2d {
    Tensor kernel;  // [k,k,c_in,c_out]
    Tensor bias;    // [c_out] or undefined
    std::size_t stride = 1;
    Padding padding = Padding::Same;

    Conv2d() = default;
    Conv2d(Rng& rng, std::size_t k, std::size_t c_in, std::size_t c_out, std::size_t stride = 1,
           Padding padding = Padding::Same, bool with_bias = true);
    Tensor operator()(const Tensor& x) const { return conv2d(x, kernel, bias, stride, padding); }
    void collect(const std::string& prefix, ParamList& out) const;
};

struct ConvTranspose2d {
    Tensor kernel;  // [k,k,c_out,c_in]
    Tensor bias;
    std::size_t stride = 2;

    ConvTranspose2d() = default;
    ConvTranspose2d(Rng& rng, std::size_t k, std::size_t c_in, std::size_t c_out, std::size_t stride,
                    bool with_bias = true);
    Tensor operator()(const Tensor& x) const { return conv_transpose2d(x, kernel, bias, stride); }
    void collect(const std::string& prefix, ParamList& out) const;
};

struct Dense {
    Tensor weight;  // [n_in, n_out]
    Tensor bias;

    Dense() = default;
    Dense(Rng& rng, std::size_t n_in, std::size_t n_out);
    Tensor operator()(const Tensor& x) const { return dense(x, weight, bias); }
    void collect(const std::string& prefix, ParamList& out) const;
};

/// Scale starts at 1, shift at 0; running stats are buffers (not trainable).
struct BatchNorm2d {
    Tensor gamma, beta;
    mutable Tensor running_mean, running_var;
    BatchNormOptions options;

    BatchNorm2d() = default;
    explicit BatchNorm2d(std::size_t channels);
    Tensor operator()(const Tensor& x, Mode mode) const {
        return batchnorm2d(x, gamma, beta, running_mean, running_var, mode, options);
    }
    void collect(const std::string& prefix, ParamList& out) const;
};

/// Snapshot of every value in `params`, for freeze checks and rollbacks.
std::vector<std::vector<double>> snapshot(const ParamList& params);

}  // namespace cf3d::ad
