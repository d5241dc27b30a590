#include <cmath>
#include <sstream>

#include "cf3d/errors.hpp"
#include "cf3d/models.hpp"

namespace cf3d {

ChannelAttention::ChannelAttention(Rng& rng, std::size_t channels, std::size_t reduction) {
    if (channels < 1 || reduction < 1) throw ConfigError("channel attention needs channels >= 1");
    const std::size_t hidden = std::max<std::size_t>(1, channels / reduction);
    squeeze = ad::Conv2d(rng, 1, channels, hidden);
    expand = ad::Conv2d(rng, 1, hidden, channels);
}

Attention ChannelAttention::operator()(const Tensor& x) const {
    auto mlp = [&](const Tensor& v) { return expand(ad::relu(squeeze(v))); };
    const Tensor avg = mlp(ad::global_pool_channel(x, ad::PoolKind::Avg));
    const Tensor mx = mlp(ad::global_pool_channel(x, ad::PoolKind::Max));
    Tensor v = ad::sigmoid(ad::add(avg, mx));
    return {v, ad::hadamard(x, v)};
}

void ChannelAttention::collect(const std::string& prefix, ad::ParamList& out) const {
    squeeze.collect(prefix + ".squeeze", out);
    expand.collect(prefix + ".expand", out);
}

SpatialAttention::SpatialAttention(Rng& rng, std::size_t k) : conv(rng, k, 2, 1) {}

Attention SpatialAttention::operator()(const Tensor& x) const {
    const Tensor stats = ad::concat(
        {ad::global_pool_pixel(x, ad::PoolKind::Avg), ad::global_pool_pixel(x, ad::PoolKind::Max)}, 3);
    Tensor v = ad::sigmoid(conv(stats));
    return {v, ad::hadamard(x, v)};
}

void SpatialAttention::collect(const std::string& prefix, ad::ParamList& out) const {
    conv.collect(prefix + ".conv", out);
}

ConvBlock::ConvBlock(Rng& rng, std::size_t k, std::size_t c_in, std::size_t c_out, std::size_t stride)
    : conv(rng, k, c_in, c_out, stride), bn(c_out) {}

void ConvBlock::collect(const std::string& prefix, ad::ParamList& out) const {
    conv.collect(prefix + ".conv", out);
    bn.collect(prefix + ".bn", out);
}

UpStack::UpStack(Rng& rng, const std::vector<std::size_t>& channels, std::size_t k) {
    for (std::size_t i = 0; i + 1 < channels.size(); ++i)
        layers.emplace_back(rng, k, channels[i], channels[i + 1], 2);
}

Tensor UpStack::operator()(const Tensor& x) const {
    Tensor y = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        y = layers[i](y);
        if (i + 1 < layers.size()) y = ad::relu(y);
    }
    return y;
}

void UpStack::collect(const std::string& prefix, ad::ParamList& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + "." + std::to_string(i), out);
}

void check_finite(const char* stage, std::size_t epoch, std::size_t batch,
                  const std::vector<std::pair<const char*, double>>& parts) {
    bool ok = true;
    for (const auto& p : parts) ok = ok && std::isfinite(p.second);
    if (ok) return;
    std::ostringstream os;
    os << stage << ": non-finite loss at epoch " << epoch << ", batch " << batch << " (";
    for (std::size_t i = 0; i < parts.size(); ++i) os << (i ? ", " : "") << parts[i].first << '=' << parts[i].second;
    os << ')';
    throw NumericError(os.str());
}

}  // namespace cf3d
