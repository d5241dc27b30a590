#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace cf3d {

struct Vec3 {
    double x = 0, y = 0, z = 0;
};

inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
double norm(Vec3 v);

struct BsConfig {
    double x = 0, y = 0;  // ground position, m
    double mast_height = 25.0;
    std::size_t n_bs = 64;
    double spacing_over_lambda = 0.5;
    double carrier_hz = 3.5e9;
    double tx_power_dbm = 23.0;

    Vec3 antenna() const { return {x, y, mast_height}; }
    double tx_power_w() const;
    double wavelength() const;
};

/// Urban scene on a 1 m grid. Cell (ix, iy) covers [ix, ix+1) x [iy, iy+1);
/// maps are row-major with iy as the row.
struct Scenario {
    std::size_t grid_w = 0, grid_h = 0;
    std::vector<std::uint8_t> e_h;  // 1 = structure
    std::vector<float> e_v;         // structure height, m
    BsConfig bs;
    std::uint64_t seed = 0;
    double target_density = 0.0;

    std::size_t index(std::size_t ix, std::size_t iy) const { return iy * grid_w + ix; }
    bool building(std::size_t ix, std::size_t iy) const { return e_h[index(ix, iy)] != 0; }
    double height(std::size_t ix, std::size_t iy) const { return e_v[index(ix, iy)]; }
    double footprint_fraction() const;
    double max_height() const;
    bool contains_xy(double x, double y) const;
    /// True when p lies strictly below the roof of a structure cell.
    bool inside_structure(Vec3 p) const;
};

struct ScenarioOptions {
    std::size_t width = 128, height = 128;
    double density = 0.3;
    double min_building_height = 5.0, max_building_height = 40.0;
    std::size_t min_side = 4, max_side = 16;
    std::size_t street_gap = 2;  // free cells kept between buildings
    BsConfig bs;                 // x, y are chosen by the generator
};

/// Non-overlapping axis-aligned buildings until the footprint fraction
/// reaches the target, then a base station on a random street cell.
/// Throws GenerationError if the density cannot be reached.
Scenario generate_scenario(std::uint64_t seed, const ScenarioOptions& options);

/// Throws DataError if the scene breaks its invariants.
void validate(const Scenario& scn);

}  // namespace cf3d
