#include <algorithm>

#include "cf3d/errors.hpp"
#include "cf3d/models.hpp"

namespace cf3d {

using namespace ad;

std::size_t CsiRConfig::n_patches() const { return (latent_shape[0] / patch) * (latent_shape[1] / patch); }

void CsiRConfig::validate() const {
    if (latent_shape.size() != 3) throw ConfigError("latent shape must be [h, w, c]");
    if (patch < 1 || latent_shape[0] % patch || latent_shape[1] % patch)
        throw ConfigError("patch size " + std::to_string(patch) + " does not divide latent " +
                          to_string(latent_shape));
    if (embed_dim < 1) throw ConfigError("embedding width must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

Tensor patch_embed(const Tensor& latent, const Conv2d& conv, std::size_t patch) {
    if (latent.rank() != 4) throw ShapeError("latent must be [n,h,w,c]");
    if (patch < 1 || latent.dim(1) % patch || latent.dim(2) % patch)
        throw ConfigError("patch size " + std::to_string(patch) + " does not divide latent " +
                          to_string(latent.shape()));
    return flatten(conv(latent));
}

CsiRModel::CsiRModel(const CsiRConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng(seed, 0xC5C5).fork(1);
    const std::size_t c = cfg_.latent_shape[2];
    embed_a_ = Conv2d(rng, cfg_.patch, c, cfg_.embed_dim, cfg_.patch, Padding::Valid);
    embed_b_ = Conv2d(rng, cfg_.patch, c, cfg_.embed_dim, cfg_.patch, Padding::Valid);
    std::size_t n_in = 2 * cfg_.n_patches() * cfg_.embed_dim + 3;
    for (auto h : cfg_.hidden) {
        fc_.emplace_back(rng, n_in, h);
        n_in = h;
    }
    fc_.emplace_back(rng, n_in, 1);
}

ParamList CsiRModel::parameters() const {
    ParamList out;
    embed_a_.collect("embed.corrmmf", out);
    embed_b_.collect("embed.mmr", out);
    for (std::size_t i = 0; i < fc_.size(); ++i) fc_[i].collect("fc." + std::to_string(i), out);
    return out;
}

Tensor CsiRModel::embed_corrmmf(const Tensor& latent) const { return patch_embed(latent, embed_a_, cfg_.patch); }
Tensor CsiRModel::embed_mmr(const Tensor& latent) const { return patch_embed(latent, embed_b_, cfg_.patch); }

Tensor CsiRModel::regress(const Tensor& emb_corrmmf, const Tensor& emb_mmr, const Tensor& coords, Mode mode,
                          Rng* rng) const {
    if (coords.rank() != 2 || coords.dim(1) != 3) throw ShapeError("coords must be [n,3]");
    for (double v : coords.data())
        if (!(v >= 0.0 && v <= 1.0)) throw RangeError("LAV coordinate " + std::to_string(v) + " outside [0,1]");
    const std::size_t n = coords.dim(0);
    if (emb_corrmmf.rank() != 2 || emb_corrmmf.dim(0) != n) throw ShapeError("Corr-MMF embedding batch mismatch");
    Tensor b = emb_mmr;
    if (b.rank() != 2) throw ShapeError("MMR embedding must be [n, d]");
    if (b.dim(0) != n) b = broadcast_to(b, {n, b.dim(1)});
    Tensor x = concat({emb_corrmmf, b, coords}, 1);
    if (mode == Mode::Train && cfg_.dropout > 0.0 && !rng) throw ConfigError("training with dropout needs an Rng");
    Rng none(0);
    for (std::size_t i = 0; i + 1 < fc_.size(); ++i) x = dropout(relu(fc_[i](x)), cfg_.dropout, rng ? *rng : none, mode);
    return sigmoid(fc_.back()(x));
}

namespace {

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& idx) {
    Shape s = t.shape();
    const std::size_t row = numel(s) / s[0];
    s[0] = idx.size();
    std::vector<double> out(idx.size() * row);
    const auto src = t.data();
    for (std::size_t k = 0; k < idx.size(); ++k)
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(idx[k] * row), row,
                    out.begin() + static_cast<std::ptrdiff_t>(k * row));
    return Tensor::from(std::move(s), std::move(out));
}

Tensor coord_rows(const CsiRData& d, const std::vector<std::size_t>& idx) {
    std::vector<double> v;
    v.reserve(idx.size() * 3);
    for (auto i : idx) v.insert(v.end(), d.coords[i].begin(), d.coords[i].end());
    return Tensor::from({idx.size(), 3}, std::move(v));
}

void check_data(const CsiRData& d) {
    const std::size_t n = d.targets.size();
    if (d.coords.size() != n || !d.corrmmf_latents.defined() || d.corrmmf_latents.dim(0) != n || !d.mmr_latent.defined())
        throw ShapeError("CSI-R data arrays disagree in length");
}

double mse_of(const std::vector<double>& p, const std::vector<double>& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
    return p.empty() ? 0.0 : s / static_cast<double>(p.size());
}

}  // namespace

std::vector<double> predict_csir(const CsiRModel& model, const CsiRData& data, std::size_t batch) {
    check_data(data);
    std::vector<double> out;
    out.reserve(data.targets.size());
    const Tensor eb = model.embed_mmr(data.mmr_latent);
    batch = std::max<std::size_t>(1, batch);
    for (std::size_t s = 0; s < data.targets.size(); s += batch) {
        std::vector<std::size_t> idx;
        for (std::size_t i = s; i < std::min(data.targets.size(), s + batch); ++i) idx.push_back(i);
        const Tensor p = model.regress(model.embed_corrmmf(gather_rows(data.corrmmf_latents, idx)), eb,
                                       coord_rows(data, idx), Mode::Eval);
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    return out;
}

std::vector<LossEpoch> train_csir(CsiRModel& model, const CsiRData& train, const CsiRData& val,
                                  const Schedule& schedule, std::uint64_t seed) {
    check_data(train);
    if (train.targets.empty()) throw UsageError("CSI-R training set is empty");
    if (schedule.batch < 1 || schedule.epochs < 1) throw ConfigError("schedule needs epochs >= 1 and batch >= 1");
    auto params = trainable(model.parameters());
    auto adam = AdamState::for_params(params, schedule.lr);
    const auto lr = schedule.lr_schedule();
    Rng shuffle(seed, 0xC5C6), drop(seed, 0xC5C7);
    std::vector<std::size_t> order(train.targets.size());
    std::vector<LossEpoch> history;
    for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
        adam.lr = lr.lr(epoch);
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
        LossEpoch rec{epoch + 1, 0.0, 0.0};
        std::size_t b = 0;
        for (std::size_t s = 0; s < order.size(); s += schedule.batch, ++b) {
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(s),
                                               order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + schedule.batch)));
            std::vector<double> t;
            for (auto i : idx) t.push_back(train.targets[i]);
            zero_grads(params);
            const Tensor pred = model.regress(model.embed_corrmmf(gather_rows(train.corrmmf_latents, idx)),
                                              model.embed_mmr(train.mmr_latent), coord_rows(train, idx), Mode::Train,
                                              &drop);
            const Tensor L = mse(pred, Tensor::from({idx.size(), 1}, std::move(t)));
            check_finite("csi-r", epoch + 1, b, {{"mse", L.item()}});
            backward(L);
            adam_step(params, adam);
            rec.train += static_cast<double>(idx.size()) * L.item();
        }
        rec.train /= static_cast<double>(order.size());
        const CsiRData& v = val.targets.empty() ? train : val;
        rec.val = mse_of(predict_csir(model, v), v.targets);
        history.push_back(rec);
    }
    return history;
}

}  // namespace cf3d
