#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cf3d/tensor.hpp"

namespace cf3d::ad {

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m, v;

    /// Zeroed moments shaped like `params`.
    static AdamState for_params(const std::vector<Tensor>& params, double lr);
};

/// One bias-corrected Adam update of `params` using their current gradients.
void adam_step(std::vector<Tensor>& params, AdamState& state);
/// Same, with gradients supplied explicitly.
void adam_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads, AdamState& state);

void zero_grads(std::vector<Tensor>& params);

/// Constant until `delay_epochs`, then linear decay reaching 0 at `total_epochs`.
struct LrSchedule {
    double base_lr = 1e-3;
    std::size_t total_epochs = 1;
    std::size_t delay_epochs = 0;

    double lr(std::size_t epoch) const;
};

}  // namespace cf3d::ad
