#include "cf3d/channel.hpp"

#include <cmath>
#include <numbers>

#include "cf3d/errors.hpp"
#include "cf3d/rng.hpp"

namespace cf3d {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

cvec steering_vector(double phi, double theta, std::size_t n_bs, double spacing_over_lambda) {
    if (n_bs < 1) throw ConfigError("steering vector needs n_bs >= 1");
    const double zeta = std::cos(theta) * std::sin(phi);
    cvec a(n_bs);
    for (std::size_t i = 0; i < n_bs; ++i)
        a[i] = std::polar(1.0, kTwoPi * static_cast<double>(i) * spacing_over_lambda * zeta);
    return a;
}

Vec3 wave_vector(double phi, double theta) {
    return {std::cos(theta) * std::sin(phi), std::sin(theta) * std::sin(phi), std::cos(phi)};
}

Vec3 LavState::unit_velocity() const { return wave_vector(elevation_v, azimuth_v); }

LavState make_lav(Vec3 position, double carrier_hz, std::uint64_t seed, double speed) {
    Rng rng(seed, 0x1a5);
    LavState s;
    s.position = position;
    s.speed = speed;
    s.azimuth_v = rng.uniform(-std::numbers::pi, std::numbers::pi);
    s.elevation_v = std::acos(rng.uniform(-1.0, 1.0));
    s.doppler_hz = speed * carrier_hz / 299792458.0;
    return s;
}

ChannelRealization channel_realization(const ChannelParams& params, const PathSet& paths, const LavState& lav,
                                       std::size_t n, std::size_t n_bs, double spacing_over_lambda,
                                       std::uint64_t seed) {
    if (params.rician_k < 0.0) throw ConfigError("Rician K must be non-negative");
    if (params.beta < 0.0) throw ConfigError("large-scale gain must be non-negative");
    const double K = paths.los ? params.rician_k : 0.0;
    if (params.n_paths == 0 && K < kRicianCap) throw DegenerateChannelError("no NLOS paths and no LOS component");

    double w_los, w_nlos;
    if (K >= kRicianCap) {
        w_los = 1.0;
        w_nlos = 0.0;
    } else {
        w_los = std::sqrt(K / (K + 1.0));
        w_nlos = std::sqrt(1.0 / (K + 1.0));
    }
    const Vec3 v = lav.unit_velocity();
    const double doppler_step = kTwoPi * lav.doppler_hz * lav.symbol_period * static_cast<double>(n);
    auto dot = [](Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; };

    ChannelRealization out;
    out.beta = params.beta;
    out.symbol_index = n;
    out.los.assign(n_bs, {0.0, 0.0});
    out.nlos.assign(n_bs, {0.0, 0.0});

    if (paths.los && w_los > 0.0) {
        const Path& p = *paths.los;
        const double xi = dot(v, wave_vector(p.elevation, p.azimuth));
        const auto rot = std::polar(w_los, doppler_step * xi + p.phase);
        const auto a = steering_vector(p.elevation, p.azimuth, n_bs, spacing_over_lambda);
        for (std::size_t i = 0; i < n_bs; ++i) out.los[i] = a[i] * rot;
    }
    if (w_nlos > 0.0 && params.n_paths > 0) {
        const std::size_t L = params.n_paths;
        const double per_path = w_nlos / std::sqrt(static_cast<double>(L));
        const bool traced = L <= paths.nlos.size();
        Rng rng(seed, 0x2105);
        for (std::size_t l = 0; l < L; ++l) {
            double theta, phi, phase;
            if (traced) {
                theta = paths.nlos[l].azimuth;
                phi = paths.nlos[l].elevation;
                phase = paths.nlos[l].phase;
            } else {
                theta = rng.uniform(-std::numbers::pi, std::numbers::pi);
                phi = std::acos(rng.uniform(-1.0, 1.0));
                phase = rng.uniform(0.0, kTwoPi);
            }
            const double xi = dot(v, wave_vector(phi, theta));
            const auto rot = std::polar(per_path, doppler_step * xi + phase);
            const auto a = steering_vector(phi, theta, n_bs, spacing_over_lambda);
            for (std::size_t i = 0; i < n_bs; ++i) out.nlos[i] += a[i] * rot;
        }
    }
    const double sb = std::sqrt(params.beta);
    out.h.resize(n_bs);
    for (std::size_t i = 0; i < n_bs; ++i) out.h[i] = sb * (out.los[i] + out.nlos[i]);
    return out;
}

LargeScale compute_large_scale(const PathSet& paths) {
    LargeScale ls;
    if (paths.empty()) {
        ls.deep_shadow = true;
        return ls;
    }
    double los_p = 0.0, nlos_p = 0.0;
    if (paths.los) los_p = paths.los->amplitude * paths.los->amplitude;
    for (const auto& p : paths.nlos) nlos_p += p.amplitude * p.amplitude;
    ls.beta = los_p + nlos_p;
    if (!paths.los) ls.rician_k = 0.0;
    else if (nlos_p == 0.0) ls.rician_k = kRicianCap;
    else ls.rician_k = std::min(los_p / nlos_p, kRicianCap);
    return ls;
}

double rss(const cvec& h, double p_bs_w) {
    if (!(p_bs_w > 0.0)) throw ConfigError("transmit power must be positive");
    double s = 0.0;
    for (const auto& v : h) s += std::norm(v);
    return p_bs_w * s;
}

double to_db(double g) {
    if (!(g > 0.0)) return kDbFloor;
    return std::max(10.0 * std::log10(g), kDbFloor);
}

double simulate_rss_db(const Scenario& scn, Vec3 position, std::uint64_t seed, const ChannelConfig& config,
                       const std::vector<Facade>* facades) {
    const Rng root(seed, 0xc4a2);
    const PathSet paths = trace_paths(scn, position, root.fork(1).next_u64(), config.trace, facades);
    const LargeScale ls = compute_large_scale(paths);
    if (ls.deep_shadow) return kDbFloor;
    ChannelParams params;
    params.beta = ls.beta;
    params.rician_k = ls.rician_k;
    params.n_paths = paths.nlos.empty() ? 1 : paths.nlos.size();
    const LavState lav = make_lav(position, scn.bs.carrier_hz, root.fork(2).next_u64(), config.speed);
    Rng sym = root.fork(3);
    const std::size_t n = config.max_symbol ? static_cast<std::size_t>(sym.below(config.max_symbol)) : 0;
    const auto real = channel_realization(params, paths, lav, n, scn.bs.n_bs, scn.bs.spacing_over_lambda,
                                          root.fork(4).next_u64());
    return to_db(rss(real.h, scn.bs.tx_power_w()));
}

}  // namespace cf3d
