#include "cf3d/optim.hpp"

#include <cmath>

#include "cf3d/errors.hpp"

namespace cf3d::ad {

AdamState AdamState::for_params(const std::vector<Tensor>& params, double lr) {
    AdamState s;
    s.lr = lr;
    for (const auto& p : params) {
        s.m.emplace_back(p.numel(), 0.0);
        s.v.emplace_back(p.numel(), 0.0);
    }
    return s;
}

void adam_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads, AdamState& state) {
    if (params.size() != state.m.size() || grads.size() != params.size())
        throw ShapeError("adam_step: " + std::to_string(params.size()) + " params, " + std::to_string(grads.size()) +
                         " grads, state for " + std::to_string(state.m.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].size() != params[i].numel() || state.m[i].size() != params[i].numel())
            throw ShapeError("adam_step: gradient/state size mismatch for parameter " + std::to_string(i) + " of shape " +
                             to_string(params[i].shape()));
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].mutable_data();
        auto& m = state.m[i];
        auto& v = state.v[i];
        const auto& g = grads[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            p[j] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

void adam_step(std::vector<Tensor>& params, AdamState& state) {
    std::vector<std::vector<double>> grads;
    grads.reserve(params.size());
    for (auto& p : params) {
        const auto g = p.grad();
        grads.emplace_back(g.begin(), g.end());
    }
    adam_step(params, grads, state);
}

void zero_grads(std::vector<Tensor>& params) {
    for (auto& p : params) p.zero_grad();
}

double LrSchedule::lr(std::size_t epoch) const {
    if (epoch < delay_epochs) return base_lr;
    if (epoch >= total_epochs || total_epochs <= delay_epochs) return 0.0;
    return base_lr * static_cast<double>(total_epochs - epoch) / static_cast<double>(total_epochs - delay_epochs);
}

}  // namespace cf3d::ad
