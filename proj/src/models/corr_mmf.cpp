#include <algorithm>
#include <cmath>
#include <sstream>

#include "cf3d/errors.hpp"
#include "cf3d/models.hpp"

namespace cf3d {

using namespace ad;

Shape CorrMmfConfig::latent_shape() const {
    const std::size_t f = std::size_t{1} << levels();
    return {grid_h / f, grid_w / f, latent_channels()};
}

void CorrMmfConfig::validate() const {
    if (view_channels.empty()) throw ConfigError("Corr-MMF needs at least one view block");
    if (levels() > 16) throw ConfigError("Corr-MMF is too deep");
    const std::size_t f = std::size_t{1} << levels();
    if (grid_w % f || grid_h % f || grid_w < f || grid_h < f)
        throw ConfigError("grid " + std::to_string(grid_w) + "x" + std::to_string(grid_h) + " is not divisible by " +
                          std::to_string(f) + " (2^levels)");
    if (kernel < 1) throw ConfigError("kernel size must be >= 1");
    if (!(sigma > 0)) throw ConfigError("TAM sigma must be positive");
    if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
}

CorrMmfModel::CorrMmfModel(const CorrMmfConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng(seed, 0xC0AA).fork(1);
    std::size_t c_in = 1;
    for (auto c : cfg_.view_channels) {
        e1_.emplace_back(rng, cfg_.kernel, c_in, c, 2);
        c_in = c;
    }
    c_in = 1;
    for (auto c : cfg_.view_channels) {
        e2_.emplace_back(rng, cfg_.kernel, c_in, c, 2);
        c_in = c;
    }
    const std::size_t C = cfg_.latent_channels();
    cam_ = ChannelAttention(rng, C);
    for (std::size_t i = 0; i < cfg_.fused_blocks; ++i) e3_.emplace_back(rng, cfg_.kernel, C, C, 2);
    std::vector<std::size_t> chans{C};
    for (std::size_t i = 0; i < cfg_.fused_blocks; ++i) chans.push_back(C);
    for (std::size_t i = cfg_.view_channels.size() - 1; i > 0; --i) chans.push_back(cfg_.view_channels[i - 1]);
    chans.push_back(2);
    decoder_ = UpStack(rng, chans, cfg_.kernel);
}

ParamList CorrMmfModel::parameters() const {
    ParamList out;
    for (std::size_t i = 0; i < e1_.size(); ++i) e1_[i].collect("e1." + std::to_string(i), out);
    for (std::size_t i = 0; i < e2_.size(); ++i) e2_[i].collect("e2." + std::to_string(i), out);
    cam_.collect("e3.cam", out);
    for (std::size_t i = 0; i < e3_.size(); ++i) e3_[i].collect("e3." + std::to_string(i), out);
    decoder_.collect("dec", out);
    return out;
}

std::pair<Tensor, Tensor> CorrMmfModel::encode_views(const Tensor& g, const Tensor& e, Mode mode) const {
    const Shape want{g.rank() ? g.dim(0) : 0, cfg_.grid_h, cfg_.grid_w, 1};
    if (g.shape() != want || e.shape() != want)
        throw ShapeError("views must both be " + to_string(want) + ", got " + to_string(g.shape()) + " and " +
                         to_string(e.shape()));
    Tensor a = g, b = e;
    for (const auto& blk : e1_) a = blk(a, mode);
    for (const auto& blk : e2_) b = blk(b, mode);
    return {a, b};
}

Attention CorrMmfModel::cam(const Tensor& o_f) const {
    if (!cfg_.use_cam) return {Tensor{}, o_f};
    return cam_(o_f);
}

Tensor CorrMmfModel::fuse(const Tensor& o1, const Tensor& o2, Mode mode) const {
    if (o1.shape() != o2.shape())
        throw ShapeError("fusion needs equal shapes, got " + to_string(o1.shape()) + " and " + to_string(o2.shape()));
    Tensor x = cam(add(o1, o2)).output;
    for (const auto& blk : e3_) x = blk(x, mode);
    return x;
}

Tensor CorrMmfModel::encode(const Tensor& g, const Tensor& e, Mode mode) const {
    auto [a, b] = encode_views(g, e, mode);
    return fuse(a, b, mode);
}

Tensor CorrMmfModel::decode(const Tensor& code) const { return decoder_(code); }

CorrMmfLosses CorrMmfModel::losses(const Tensor& g, const Tensor& e, double lambda, Mode mode) const {
    if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
    const std::size_t n = g.dim(0);
    const Tensor zeros = Tensor::zeros(g.shape());
    const Tensor code = encode(concat({g, g, zeros}, 0), concat({e, zeros, e}, 0), mode);
    const Tensor rec = decode(code);

    CorrMmfLosses out;
    const Tensor target = concat({g, e}, 3);
    out.fusion = mean(frobenius_norm_rows(sub(slice(rec, 0, 0, n), target)));
    const Tensor rec_e0 = slice(rec, 0, n, n), rec_g0 = slice(rec, 0, 2 * n, n);
    out.cross = add(mean(frobenius_norm_rows(sub(slice(rec_g0, 3, 0, 1), g))),
                    mean(frobenius_norm_rows(sub(slice(rec_e0, 3, 1, 1), e))));
    const Tensor c = mean(adjusted_cosine_rows(flatten(slice(code, 0, n, n)), flatten(slice(code, 0, 2 * n, n)),
                                               &out.degenerate));
    out.corr = c.item();
    out.corr_loss = add_scalar(scale(c, -1.0), 1.0);
    out.objective = add(add(out.fusion, out.cross), scale(out.corr_loss, lambda));
    return out;
}

double adjusted_cosine(const std::vector<double>& a, const std::vector<double>& b, bool* degenerate) {
    if (a.size() != b.size() || a.size() < 2)
        throw ShapeError("adjusted cosine needs two vectors of equal length >= 2");
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    const bool deg = saa <= 1e-300 || sbb <= 1e-300;
    if (degenerate) *degenerate = deg;
    if (deg) return 0.0;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::pair<Tensor, Tensor> masked_views(const CorrMmfConfig& cfg, const std::vector<double>& g_view,
                                       const std::vector<double>& e_view,
                                       const std::vector<std::pair<double, double>>& xy) {
    const std::size_t cells = cfg.grid_w * cfg.grid_h;
    if (g_view.size() != cells || e_view.size() != cells)
        throw ShapeError("view maps must have " + std::to_string(cells) + " cells");
    std::vector<double> g(xy.size() * cells), e(xy.size() * cells);
    for (std::size_t k = 0; k < xy.size(); ++k) {
        const auto m = cfg.use_tam ? tam_mask(xy[k].first, xy[k].second, cfg.grid_w, cfg.grid_h, cfg.sigma)
                                   : std::vector<double>(cells, 1.0);
        for (std::size_t i = 0; i < cells; ++i) {
            g[k * cells + i] = m[i] * g_view[i];
            e[k * cells + i] = m[i] * e_view[i];
        }
    }
    const Shape s{xy.size(), cfg.grid_h, cfg.grid_w, 1};
    return {Tensor::from(s, std::move(g)), Tensor::from(s, std::move(e))};
}

CorrMmfEpoch evaluate_corrmmf(const CorrMmfModel& model, const CorrMmfData& data,
                              const std::vector<std::pair<double, double>>& xy, double lambda, std::size_t batch) {
    CorrMmfEpoch r;
    if (xy.empty()) return r;
    batch = std::max<std::size_t>(1, batch);
    for (std::size_t s = 0; s < xy.size(); s += batch) {
        const std::vector<std::pair<double, double>> chunk(xy.begin() + static_cast<std::ptrdiff_t>(s),
                                                           xy.begin() + static_cast<std::ptrdiff_t>(std::min(xy.size(), s + batch)));
        auto [g, e] = masked_views(model.config(), data.g_view, data.e_view, chunk);
        const auto L = model.losses(g, e, lambda, Mode::Eval);
        const double w = static_cast<double>(chunk.size());
        r.fusion += w * L.fusion.item();
        r.cross += w * L.cross.item();
        r.corr_loss += w * L.corr_loss.item();
        r.objective += w * L.objective.item();
        r.val_corr += w * L.corr;
    }
    const double n = static_cast<double>(xy.size());
    r.fusion /= n;
    r.cross /= n;
    r.corr_loss /= n;
    r.objective /= n;
    r.val_corr /= n;
    r.val_objective = r.objective;
    return r;
}

std::vector<CorrMmfEpoch> train_corrmmf(CorrMmfModel& model, const CorrMmfData& data, const Schedule& schedule,
                                        double lambda, std::uint64_t seed) {
    if (data.train_xy.empty()) throw UsageError("Corr-MMF training set is empty");
    if (schedule.batch < 1 || schedule.epochs < 1) throw ConfigError("schedule needs epochs >= 1 and batch >= 1");
    auto params = trainable(model.parameters());
    auto adam = AdamState::for_params(params, schedule.lr);
    const auto lr = schedule.lr_schedule();
    Rng rng(seed, 0x7A11);
    std::vector<std::size_t> order(data.train_xy.size());
    std::vector<CorrMmfEpoch> history;
    for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
        adam.lr = lr.lr(epoch);
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        CorrMmfEpoch rec;
        rec.epoch = epoch + 1;
        std::size_t b = 0;
        for (std::size_t s = 0; s < order.size(); s += schedule.batch, ++b) {
            std::vector<std::pair<double, double>> chunk;
            for (std::size_t i = s; i < std::min(order.size(), s + schedule.batch); ++i)
                chunk.push_back(data.train_xy[order[i]]);
            auto [g, e] = masked_views(model.config(), data.g_view, data.e_view, chunk);
            zero_grads(params);
            const auto L = model.losses(g, e, lambda, Mode::Train);
            check_finite("corr-mmf", epoch + 1, b, {{"L_fusion", L.fusion.item()}, {"L_cross", L.cross.item()},
                                                    {"L_corr", L.corr_loss.item()}, {"L_obj", L.objective.item()}});
            backward(L.objective);
            adam_step(params, adam);
            const double w = static_cast<double>(chunk.size());
            rec.fusion += w * L.fusion.item();
            rec.cross += w * L.cross.item();
            rec.corr_loss += w * L.corr_loss.item();
            rec.objective += w * L.objective.item();
        }
        const double n = static_cast<double>(order.size());
        rec.fusion /= n;
        rec.cross /= n;
        rec.corr_loss /= n;
        rec.objective /= n;
        const auto val = evaluate_corrmmf(model, data, data.val_xy.empty() ? data.train_xy : data.val_xy, lambda,
                                          schedule.batch);
        rec.val_objective = val.objective;
        rec.val_corr = val.val_corr;
        history.push_back(rec);
    }
    return history;
}

namespace {
std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}
}  // namespace

std::string corrmmf_history_csv(const std::vector<CorrMmfEpoch>& history) {
    std::string out = "epoch,L_fusion,L_cross,L_corr,L_obj,val_L_obj\n";
    for (const auto& h : history)
        out += std::to_string(h.epoch) + "," + fmt(h.fusion) + "," + fmt(h.cross) + "," + fmt(h.corr_loss) + "," +
               fmt(h.objective) + "," + fmt(h.val_objective) + "\n";
    return out;
}

std::string loss_history_csv(const std::vector<LossEpoch>& history) {
    std::string out = "epoch,train_loss,val_loss\n";
    for (const auto& h : history) out += std::to_string(h.epoch) + "," + fmt(h.train) + "," + fmt(h.val) + "\n";
    return out;
}

}  // namespace cf3d
