#include <algorithm>

#include "cf3d/errors.hpp"
#include "cf3d/models.hpp"

namespace cf3d {

using namespace ad;

Shape MmrConfig::latent_shape() const {
    const std::size_t f = std::size_t{1} << block_channels.size();
    return {grid_h / f, grid_w / f, block_channels.back()};
}

void MmrConfig::validate() const {
    if (block_channels.empty() || block_channels.size() > 16) throw ConfigError("MMR needs 1..16 blocks");
    const std::size_t f = std::size_t{1} << block_channels.size();
    if (grid_w % f || grid_h % f || grid_w < f || grid_h < f)
        throw ConfigError("grid is not divisible by 2^" + std::to_string(block_channels.size()));
    if (stem_channels < 1 || kernel < 1 || sam_kernel < 1) throw ConfigError("MMR sizes must be >= 1");
}

MmrModel::MmrModel(const MmrConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng(seed, 0x3A3A).fork(1);
    stem_ = Conv2d(rng, cfg_.kernel, 1, cfg_.stem_channels);
    std::size_t c_in = cfg_.stem_channels;
    for (std::size_t i = 0; i < cfg_.block_channels.size(); ++i) {
        if (cfg_.use_sam && (cfg_.sam_every_block || i == 0)) sams_.emplace_back(rng, cfg_.sam_kernel);
        blocks_.emplace_back(rng, cfg_.kernel, c_in, cfg_.block_channels[i], 2);
        c_in = cfg_.block_channels[i];
    }
    std::vector<std::size_t> chans;
    for (auto it = cfg_.block_channels.rbegin(); it != cfg_.block_channels.rend(); ++it) chans.push_back(*it);
    chans.push_back(1);
    decoder_ = UpStack(rng, chans, cfg_.kernel);
}

ParamList MmrModel::parameters() const {
    ParamList out;
    stem_.collect("stem", out);
    for (std::size_t i = 0; i < sams_.size(); ++i) sams_[i].collect("sam." + std::to_string(i), out);
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect("down." + std::to_string(i), out);
    decoder_.collect("up", out);
    return out;
}

Attention MmrModel::sam(std::size_t block, const Tensor& x) const {
    if (block >= sams_.size()) return {Tensor{}, x};
    return sams_[block](x);
}

Tensor MmrModel::encode(const Tensor& e_v, Mode mode) const {
    const Shape want{e_v.rank() ? e_v.dim(0) : 0, cfg_.grid_h, cfg_.grid_w, 1};
    if (e_v.shape() != want) throw ShapeError("E_v must be " + to_string(want) + ", got " + to_string(e_v.shape()));
    Tensor x = relu(stem_(e_v));
    for (std::size_t i = 0; i < blocks_.size(); ++i) x = blocks_[i](sam(i, x).output, mode);
    return x;
}

Tensor MmrModel::decode(const Tensor& code) const { return decoder_(code); }

Tensor MmrModel::loss(const Tensor& e_v, Mode mode) const {
    return mean(frobenius_norm_rows(sub(decode(encode(e_v, mode)), e_v)));
}

namespace {

Tensor stack_maps(const std::vector<std::vector<double>>& maps, const std::vector<std::size_t>& idx,
                  std::size_t w, std::size_t h) {
    std::vector<double> data;
    data.reserve(idx.size() * w * h);
    for (auto i : idx) {
        if (maps[i].size() != w * h) throw ShapeError("E_v map has the wrong number of cells");
        data.insert(data.end(), maps[i].begin(), maps[i].end());
    }
    return Tensor::from({idx.size(), h, w, 1}, std::move(data));
}

double mean_loss(const MmrModel& m, const std::vector<std::vector<double>>& maps, std::size_t batch) {
    if (maps.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t s = 0; s < maps.size(); s += batch) {
        std::vector<std::size_t> idx;
        for (std::size_t i = s; i < std::min(maps.size(), s + batch); ++i) idx.push_back(i);
        total += static_cast<double>(idx.size()) *
                 m.loss(stack_maps(maps, idx, m.config().grid_w, m.config().grid_h), Mode::Eval).item();
    }
    return total / static_cast<double>(maps.size());
}

}  // namespace

std::vector<LossEpoch> train_mmr(MmrModel& model, const std::vector<std::vector<double>>& train_maps,
                                 const std::vector<std::vector<double>>& val_maps, const Schedule& schedule,
                                 std::uint64_t seed) {
    if (train_maps.empty()) throw UsageError("MMR training set is empty");
    if (schedule.batch < 1 || schedule.epochs < 1) throw ConfigError("schedule needs epochs >= 1 and batch >= 1");
    auto params = trainable(model.parameters());
    auto adam = AdamState::for_params(params, schedule.lr);
    const auto lr = schedule.lr_schedule();
    Rng rng(seed, 0x3A3B);
    std::vector<std::size_t> order(train_maps.size());
    std::vector<LossEpoch> history;
    for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
        adam.lr = lr.lr(epoch);
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        LossEpoch rec{epoch + 1, 0.0, 0.0};
        std::size_t b = 0;
        for (std::size_t s = 0; s < order.size(); s += schedule.batch, ++b) {
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(s),
                                               order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + schedule.batch)));
            // Batch statistics need two samples; a lone leftover joins the previous batch's last map.
            std::vector<std::size_t> use = idx;
            if (use.size() == 1 && order.size() > 1) use.push_back(order[s - 1]);
            zero_grads(params);
            const Tensor L = model.loss(stack_maps(train_maps, use, model.config().grid_w, model.config().grid_h),
                                        Mode::Train);
            check_finite("mmr", epoch + 1, b, {{"L_rec", L.item()}});
            backward(L);
            adam_step(params, adam);
            rec.train += static_cast<double>(idx.size()) * L.item();
        }
        rec.train /= static_cast<double>(order.size());
        rec.val = mean_loss(model, val_maps.empty() ? train_maps : val_maps, schedule.batch);
        history.push_back(rec);
    }
    return history;
}

}  // namespace cf3d
