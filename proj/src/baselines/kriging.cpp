#include <algorithm>
#include <cmath>
#include <limits>

#include "cf3d/baselines.hpp"
#include "cf3d/errors.hpp"

namespace cf3d {

VariogramKind parse_variogram_kind(const std::string& name) {
    if (name == "exponential") return VariogramKind::Exponential;
    if (name == "spherical") return VariogramKind::Spherical;
    if (name == "gaussian") return VariogramKind::Gaussian;
    throw ConfigError("unknown variogram model '" + name + "'");
}

const char* to_string(VariogramKind kind) {
    switch (kind) {
        case VariogramKind::Exponential: return "exponential";
        case VariogramKind::Spherical: return "spherical";
        case VariogramKind::Gaussian: return "gaussian";
    }
    return "?";
}

namespace {

// Structured part of the variogram, rising from 0 to ~1 at the range.
double shape(VariogramKind kind, double h, double range) {
    const double r = h / range;
    switch (kind) {
        case VariogramKind::Exponential: return 1.0 - std::exp(-3.0 * r);
        case VariogramKind::Spherical: return r >= 1.0 ? 1.0 : 1.5 * r - 0.5 * r * r * r;
        case VariogramKind::Gaussian: return 1.0 - std::exp(-3.0 * r * r);
    }
    return 0.0;
}

}  // namespace

double VariogramModel::operator()(double h) const {
    if (h <= 0.0) return 0.0;
    return nugget + (sill - nugget) * shape(kind, h, range);
}

EmpiricalVariogram empirical_variogram(const std::vector<Sample>& samples, double max_lag, std::size_t bins) {
    if (samples.size() < 3) throw UsageError("variogram needs at least 3 samples");
    if (bins < 1) throw ConfigError("variogram needs at least one bin");
    const std::size_t n = samples.size();
    if (max_lag <= 0.0) {
        double far = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) far = std::max(far, norm(samples[i].position - samples[j].position));
        max_lag = 0.5 * far;
    }
    if (!(max_lag > 0.0)) throw UsageError("all samples coincide; no lags to bin");
    EmpiricalVariogram ev;
    ev.bin_width = max_lag / static_cast<double>(bins);
    std::vector<double> sum_lag(bins, 0.0), sum_g(bins, 0.0);
    std::vector<std::size_t> cnt(bins, 0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double h = norm(samples[i].position - samples[j].position);
            if (h <= 0.0 || h > max_lag) continue;
            const auto b = std::min(bins - 1, static_cast<std::size_t>(h / ev.bin_width));
            const double d = samples[i].value - samples[j].value;
            sum_lag[b] += h;
            sum_g[b] += 0.5 * d * d;
            ++cnt[b];
        }
    for (std::size_t b = 0; b < bins; ++b) {
        if (!cnt[b]) continue;
        ev.lag.push_back(sum_lag[b] / static_cast<double>(cnt[b]));
        ev.gamma.push_back(sum_g[b] / static_cast<double>(cnt[b]));
        ev.count.push_back(cnt[b]);
    }
    return ev;
}

VariogramModel fit_variogram(const EmpiricalVariogram& ev, VariogramKind kind) {
    if (ev.lag.size() < 5)
        throw UsageError("variogram fit needs at least 5 non-empty lag bins, got " + std::to_string(ev.lag.size()));
    const double max_lag = ev.lag.back();
    VariogramModel best;
    best.kind = kind;
    double best_err = std::numeric_limits<double>::infinity();
    const std::size_t steps = 80;
    const double lo = 0.5 * ev.bin_width, hi = 3.0 * max_lag;
    for (std::size_t s = 0; s < steps; ++s) {
        const double range = lo * std::pow(hi / lo, static_cast<double>(s) / static_cast<double>(steps - 1));
        // Weighted normal equations for gamma ~ c0 + c * f(h).
        double sw = 0, sf = 0, sff = 0, sg = 0, sfg = 0;
        for (std::size_t i = 0; i < ev.lag.size(); ++i) {
            const double w = static_cast<double>(ev.count[i]);
            const double f = shape(kind, ev.lag[i], range);
            sw += w;
            sf += w * f;
            sff += w * f * f;
            sg += w * ev.gamma[i];
            sfg += w * f * ev.gamma[i];
        }
        struct Cand {
            double c0, c;
        };
        std::vector<Cand> cands;
        const double det = sw * sff - sf * sf;
        if (std::abs(det) > 1e-300) cands.push_back({(sff * sg - sf * sfg) / det, (sw * sfg - sf * sg) / det});
        if (sff > 0) cands.push_back({0.0, sfg / sff});
        cands.push_back({sg / sw, 0.0});
        for (auto c : cands) {
            if (c.c0 < 0.0 || c.c < 0.0) continue;
            double err = 0.0;
            for (std::size_t i = 0; i < ev.lag.size(); ++i) {
                const double r = c.c0 + c.c * shape(kind, ev.lag[i], range) - ev.gamma[i];
                err += static_cast<double>(ev.count[i]) * r * r;
            }
            if (err < best_err) {
                best_err = err;
                best.nugget = c.c0;
                best.sill = c.c0 + std::max(c.c, 1e-8);
                best.range = range;
            }
        }
    }
    return best;
}

KrigingModel::KrigingModel(std::vector<Sample> samples, VariogramModel model)
    : samples_(std::move(samples)), model_(model) {
    if (samples_.empty()) throw UsageError("Kriging needs at least one sample");
    if (!(model_.sill > 0.0 && model_.range > 0.0 && model_.nugget >= 0.0 && model_.nugget <= model_.sill))
        throw ConfigError("variogram needs sill > 0, range > 0, 0 <= nugget <= sill");
    const auto n = static_cast<Eigen::Index>(samples_.size());
    Eigen::MatrixXd A(n + 1, n + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        A(i, i) = 0.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double g = model_(norm(samples_[i].position - samples_[j].position));
            A(i, j) = g;
            A(j, i) = g;
        }
        A(i, n) = 1.0;
        A(n, i) = 1.0;
    }
    A(n, n) = 0.0;
    lu_.compute(A);
    if (!(lu_.rcond() > 1e-15)) {
        // Covariance-side jitter: lower the diagonal of Gamma slightly.
        for (Eigen::Index i = 0; i < n; ++i) A(i, i) -= 1e-10 * model_.sill;
        lu_.compute(A);
        if (!(lu_.rcond() > 1e-15)) throw NumericError("Kriging system is singular even after jitter");
    }
}

Eigen::VectorXd KrigingModel::weights(Vec3 query) const {
    const auto n = static_cast<Eigen::Index>(samples_.size());
    Eigen::VectorXd b(n + 1);
    for (Eigen::Index i = 0; i < n; ++i) b(i) = model_(norm(samples_[i].position - query));
    b(n) = 1.0;
    return lu_.solve(b);
}

double KrigingModel::predict(Vec3 query) const {
    const Eigen::VectorXd w = weights(query);
    double s = 0.0;
    for (std::size_t i = 0; i < samples_.size(); ++i) s += w(static_cast<Eigen::Index>(i)) * samples_[i].value;
    return s;
}

KrigingModel kriging_fit(const std::vector<Sample>& samples, VariogramKind kind) {
    return KrigingModel(samples, fit_variogram(empirical_variogram(samples), kind));
}

}  // namespace cf3d
