#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cf3d/channel.hpp"
#include "cf3d/scenario.hpp"

namespace cf3d {

inline constexpr double kRssThresholdDb = -147.0;

struct Normalization {
    double g_thr = kRssThresholdDb;
    double g_max = 0.0;
};

/// max((g - g_thr) / (g_max - g_thr), 0), in the dB domain.
double normalize_rss(double g_db, double g_thr, double g_max);
/// Inverse of normalize_rss on (0, 1].
double denormalize_rss(double g_norm, double g_thr, double g_max);
inline double normalize_rss(double g_db, const Normalization& n) { return normalize_rss(g_db, n.g_thr, n.g_max); }

struct CsiTuple {
    Vec3 position;
    double rss_db = 0.0;
    double rss_norm = 0.0;
};

struct CfStore {
    std::vector<CsiTuple> tuples;
    std::string scenario_id;
    Normalization norm;

    std::size_t size() const { return tuples.size(); }
    CfStore subset(const std::vector<std::size_t>& indices) const;
};

std::string scenario_id(const Scenario& scn);

/// Received power in dB for each position, in input order. Positions inside
/// a structure or outside the scene raise RangeError naming the index.
/// Labels depend only on (seed, position), so they do not change with the
/// order or company of the query.
std::vector<double> simulate_positions(const Scenario& scn, const std::vector<Vec3>& positions, std::uint64_t seed,
                                       const ChannelConfig& config, std::size_t jobs = 1);

/// One CSI tuple per position, normalised with `norm`. Duplicate positions
/// are rejected.
CfStore build_cf(const Scenario& scn, const std::vector<Vec3>& positions, std::uint64_t seed,
                 const ChannelConfig& config, const Normalization& norm, std::size_t jobs = 1);
/// Re-normalises an existing store in place.
void renormalize(CfStore& store, const Normalization& norm);

inline constexpr double kGroundHeight = 1.5;

struct GroundMeasurementGrid {
    std::size_t grid_w = 0, grid_h = 0;
    std::vector<float> values;       // normalised RSS, 0 on structure cells
    std::vector<std::uint8_t> mask;  // 1 = measured street cell
    std::vector<double> rss_db;      // raw dB per cell (floor on structure cells); not persisted
    Normalization norm;
};

/// Raw dB RSS at 1.5 m over every street-cell centre.
GroundMeasurementGrid sample_ground_grid(const Scenario& scn, std::uint64_t seed, const ChannelConfig& config,
                                         std::size_t jobs = 1);
/// Fills `values` from `rss_db` with the given normalisation.
void normalize_grid(GroundMeasurementGrid& grid, const Normalization& norm);

/// Uniform positions over the free volume with z in [z_lo, z_hi].
std::vector<Vec3> sample_aerial_positions(const Scenario& scn, std::size_t count, std::uint64_t seed,
                                          double z_lo = 25.0, double z_hi = 80.0);

struct Metrics {
    double mae = 0.0;
    double rmse = 0.0;
};

Metrics metrics(const std::vector<double>& pred, const std::vector<double>& truth);

struct DatasetSplit {
    std::vector<std::size_t> train, val, test;
    std::uint64_t seed = 0;
};

DatasetSplit split(std::size_t n, std::array<double, 3> fractions, std::uint64_t seed);

}  // namespace cf3d
