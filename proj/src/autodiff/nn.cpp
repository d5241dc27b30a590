#include "cf3d/nn.hpp"

#include <algorithm>
#include <cmath>

namespace cf3d::ad {

namespace {

Tensor he_normal(Rng& rng, Shape shape, std::size_t fan_in) {
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = sd * rng.normal();
    return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

std::vector<Tensor> trainable(const ParamList& params) {
    std::vector<Tensor> out;
    for (const auto& p : params)
        if (p.trainable) out.push_back(p.tensor);
    return out;
}

Conv2d::Conv2d(Rng& rng, std::size_t k, std::size_t c_in, std::size_t c_out, std::size_t stride_, Padding padding_,
               bool with_bias)
    : kernel(he_normal(rng, {k, k, c_in, c_out}, k * k * c_in)), stride(stride_), padding(padding_) {
    if (with_bias) bias = Tensor::zeros({c_out}, true);
}

void Conv2d::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".kernel", kernel, true});
    if (bias.defined()) out.push_back({prefix + ".bias", bias, true});
}

ConvTranspose2d::ConvTranspose2d(Rng& rng, std::size_t k, std::size_t c_in, std::size_t c_out, std::size_t stride_,
                                 bool with_bias)
    : kernel(he_normal(rng, {k, k, c_out, c_in}, std::max<std::size_t>(1, k * k * c_in / (stride_ * stride_)))), stride(stride_) {
    if (with_bias) bias = Tensor::zeros({c_out}, true);
}

void ConvTranspose2d::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".kernel", kernel, true});
    if (bias.defined()) out.push_back({prefix + ".bias", bias, true});
}

Dense::Dense(Rng& rng, std::size_t n_in, std::size_t n_out)
    : weight(he_normal(rng, {n_in, n_out}, n_in)), bias(Tensor::zeros({n_out}, true)) {}

void Dense::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".weight", weight, true});
    out.push_back({prefix + ".bias", bias, true});
}

BatchNorm2d::BatchNorm2d(std::size_t channels)
    : gamma(Tensor::full({channels}, 1.0, true)),
      beta(Tensor::zeros({channels}, true)),
      running_mean(Tensor::zeros({channels})),
      running_var(Tensor::full({channels}, 1.0)) {}

void BatchNorm2d::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".gamma", gamma, true});
    out.push_back({prefix + ".beta", beta, true});
    out.push_back({prefix + ".running_mean", running_mean, false});
    out.push_back({prefix + ".running_var", running_var, false});
}

std::vector<std::vector<double>> snapshot(const ParamList& params) {
    std::vector<std::vector<double>> out;
    out.reserve(params.size());
    for (const auto& p : params) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    return out;
}

}  // namespace cf3d::ad
