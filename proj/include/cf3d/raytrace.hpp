#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "cf3d/scenario.hpp"

namespace cf3d {

/// True iff the segment p1 -> p2 passes below the roof of some structure
/// cell. The horizontal projection is walked cell by cell (DDA) and the
/// segment height is checked at both ends of each cell crossing.
bool los_blocked(const Scenario& scn, Vec3 p1, Vec3 p2);

/// Vertical wall segment on a cell boundary. `axis` 0 means the plane x =
/// coord spanning y in [lo, hi]; axis 1 means y = coord spanning x in [lo, hi].
/// `normal` is +1 or -1 along that axis, pointing into the street.
struct Facade {
    int axis = 0;
    double coord = 0, lo = 0, hi = 0;
    double height = 0;
    int normal = 1;
};

/// Maximal runs of structure edges facing a street cell, in a fixed order.
std::vector<Facade> extract_facades(const Scenario& scn);

struct Path {
    double azimuth = 0;    // theta in [-pi, pi), departure direction at the BS
    double elevation = 0;  // phi in [0, pi], measured from the vertical
    double phase = 0;      // [0, 2pi)
    double amplitude = 0;  // linear field amplitude
    double length = 0;     // m
    int bounces = 0;
};

struct PathSet {
    std::optional<Path> los;
    std::vector<Path> nlos;

    std::size_t size() const { return nlos.size() + (los ? 1 : 0); }
    bool empty() const { return size() == 0; }
};

struct TraceOptions {
    std::size_t max_paths = 5;
    double reflection_coeff = 0.6;
};

/// Free-space power gain (lambda / 4 pi d)^2; d is clamped to >= 1 m.
double free_space_gain(double distance, double carrier_hz);

/// Departure angles (theta, phi) of direction `d`.
std::pair<double, double> direction_angles(Vec3 d);

/// LOS (if unblocked) plus single-bounce specular reflections off up to
/// max_paths-1 of the strongest valid facades. `facades` may be passed in to
/// avoid re-extracting them per query.
PathSet trace_paths(const Scenario& scn, Vec3 lav, std::uint64_t seed, const TraceOptions& options = {},
                    const std::vector<Facade>* facades = nullptr);

}  // namespace cf3d
