#pragma once

#include <complex>
#include <numbers>
#include <cstdint>
#include <vector>

#include "cf3d/raytrace.hpp"
#include "cf3d/scenario.hpp"

namespace cf3d {

using cvec = std::vector<std::complex<double>>;

/// Uniform-linear-array response: element i is exp(j 2 pi i (d/lambda) cos(theta) sin(phi)).
cvec steering_vector(double phi, double theta, std::size_t n_bs, double spacing_over_lambda);

struct LavState {
    Vec3 position;
    double speed = 10.0;     // m/s
    double azimuth_v = 0.0;  // theta_v
    double elevation_v = std::numbers::pi / 2;  // phi_v
    double doppler_hz = 0.0;
    double symbol_period = 10.0 / 30720.0;

    Vec3 unit_velocity() const;
};

/// Unit wave vector for azimuth theta and elevation phi.
Vec3 wave_vector(double phi, double theta);

/// LAV with a random heading and Doppler speed/lambda.
LavState make_lav(Vec3 position, double carrier_hz, std::uint64_t seed, double speed = 10.0);

inline constexpr double kRicianCap = 1e12;

struct ChannelParams {
    double rician_k = 0.0;
    double beta = 1.0;
    std::size_t n_paths = 1;  // L of the NLOS sum
};

struct ChannelRealization {
    cvec h;     // sqrt(beta) (los + nlos)
    cvec los;   // K-weighted LOS term
    cvec nlos;  // 1/(K+1)-weighted NLOS sum
    double beta = 0.0;
    std::size_t symbol_index = 0;
};

/// Rician channel for symbol n. Without a LOS path K is forced to 0. When
/// L does not exceed the traced NLOS count the traced angles and phases are
/// used, otherwise L statistical paths are drawn from `seed`. K >= 1e12 is
/// treated as a pure LOS channel.
ChannelRealization channel_realization(const ChannelParams& params, const PathSet& paths, const LavState& lav,
                                       std::size_t n, std::size_t n_bs, double spacing_over_lambda,
                                       std::uint64_t seed);

struct LargeScale {
    double beta = 0.0;
    double rician_k = 0.0;
    bool deep_shadow = false;
};

/// beta = sum of squared path amplitudes; K = LOS power over NLOS power
/// (capped at 1e12 for LOS-only, 0 without LOS).
LargeScale compute_large_scale(const PathSet& paths);

/// g = p_bs * ||h||^2 (W).
double rss(const cvec& h, double p_bs_w);

inline constexpr double kDbFloor = -200.0;
/// 10 log10(g), with g <= 0 mapped to the -200 dB floor.
double to_db(double g);

struct ChannelConfig {
    TraceOptions trace;
    double speed = 10.0;
    std::size_t max_symbol = 1024;  // n drawn uniformly in [0, max_symbol)
};

/// Trace, realise and measure one position: received power in dB.
double simulate_rss_db(const Scenario& scn, Vec3 position, std::uint64_t seed, const ChannelConfig& config,
                       const std::vector<Facade>* facades = nullptr);

}  // namespace cf3d
