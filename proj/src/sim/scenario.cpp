#include "cf3d/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "cf3d/errors.hpp"
#include "cf3d/rng.hpp"

namespace cf3d {

double norm(Vec3 v) { return std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z); }

double BsConfig::tx_power_w() const { return std::pow(10.0, (tx_power_dbm - 30.0) / 10.0); }
double BsConfig::wavelength() const { return 299792458.0 / carrier_hz; }

double Scenario::footprint_fraction() const {
    if (e_h.empty()) return 0.0;
    const auto n = std::count_if(e_h.begin(), e_h.end(), [](std::uint8_t v) { return v != 0; });
    return static_cast<double>(n) / static_cast<double>(e_h.size());
}

double Scenario::max_height() const {
    double m = 0.0;
    for (float h : e_v) m = std::max(m, static_cast<double>(h));
    return m;
}

bool Scenario::contains_xy(double x, double y) const {
    return x >= 0.0 && y >= 0.0 && x <= static_cast<double>(grid_w) && y <= static_cast<double>(grid_h);
}

bool Scenario::inside_structure(Vec3 p) const {
    if (!contains_xy(p.x, p.y)) return false;
    const auto ix = std::min(static_cast<std::size_t>(p.x), grid_w - 1);
    const auto iy = std::min(static_cast<std::size_t>(p.y), grid_h - 1);
    return building(ix, iy) && p.z < height(ix, iy);
}

Scenario generate_scenario(std::uint64_t seed, const ScenarioOptions& o) {
    if (o.width < 32 || o.height < 32)
        throw ConfigError("scenario dimensions must be at least 32x32, got " + std::to_string(o.width) + "x" +
                          std::to_string(o.height));
    if (!(o.density >= 0.0 && o.density < 1.0))
        throw ConfigError("building density must lie in [0, 1), got " + std::to_string(o.density));
    if (o.min_side < 1 || o.max_side < o.min_side) throw ConfigError("invalid building side range");
    if (!(o.min_building_height > 0.0 && o.max_building_height >= o.min_building_height &&
          o.max_building_height <= 100.0))
        throw ConfigError("building heights must satisfy 0 < min <= max <= 100 m");

    Scenario scn;
    scn.grid_w = o.width;
    scn.grid_h = o.height;
    scn.e_h.assign(o.width * o.height, 0);
    scn.e_v.assign(o.width * o.height, 0.0f);
    scn.bs = o.bs;
    scn.seed = seed;
    scn.target_density = o.density;

    Rng rng(seed, 0x5ce7e);
    const double total = static_cast<double>(o.width * o.height);
    std::size_t filled = 0;
    const std::size_t target = static_cast<std::size_t>(std::llround(o.density * total));
    const std::size_t max_attempts = 200000;
    const auto gap = static_cast<std::ptrdiff_t>(o.street_gap);

    for (std::size_t attempt = 0; attempt < max_attempts && filled < target; ++attempt) {
        std::size_t bw = o.min_side + rng.below(o.max_side - o.min_side + 1);
        std::size_t bh = o.min_side + rng.below(o.max_side - o.min_side + 1);
        const double h = rng.uniform(o.min_building_height, o.max_building_height);
        if (bw > o.width - 2 || bh > o.height - 2) continue;
        // Trim the last buildings so the footprint does not overshoot.
        while (filled + bw * bh > target && (bw > o.min_side || bh > o.min_side)) {
            if (bw >= bh && bw > o.min_side) --bw;
            else if (bh > o.min_side) --bh;
            else --bw;
        }
        if (filled + bw * bh > target && filled + bw * bh - target > target - filled) break;
        const std::size_t x0 = 1 + rng.below(o.width - bw - 1);
        const std::size_t y0 = 1 + rng.below(o.height - bh - 1);
        bool clear = true;
        for (std::ptrdiff_t y = static_cast<std::ptrdiff_t>(y0) - gap;
             clear && y < static_cast<std::ptrdiff_t>(y0 + bh) + gap; ++y) {
            if (y < 0 || y >= static_cast<std::ptrdiff_t>(o.height)) continue;
            for (std::ptrdiff_t x = static_cast<std::ptrdiff_t>(x0) - gap; x < static_cast<std::ptrdiff_t>(x0 + bw) + gap;
                 ++x) {
                if (x < 0 || x >= static_cast<std::ptrdiff_t>(o.width)) continue;
                if (scn.e_h[static_cast<std::size_t>(y) * o.width + static_cast<std::size_t>(x)]) {
                    clear = false;
                    break;
                }
            }
        }
        if (!clear) continue;
        for (std::size_t y = y0; y < y0 + bh; ++y)
            for (std::size_t x = x0; x < x0 + bw; ++x) {
                scn.e_h[y * o.width + x] = 1;
                scn.e_v[y * o.width + x] = static_cast<float>(h);
            }
        filled += bw * bh;
    }
    const double achieved = static_cast<double>(filled) / total;
    if (std::abs(achieved - o.density) > 0.05) {
        std::ostringstream os;
        os << "could not reach building density " << o.density << " (placed " << achieved << ")";
        throw GenerationError(os.str());
    }

    std::vector<std::size_t> street;
    for (std::size_t i = 0; i < scn.e_h.size(); ++i)
        if (!scn.e_h[i]) street.push_back(i);
    if (street.empty()) throw GenerationError("no street cell left for the base station");
    const std::size_t cell = street[rng.below(street.size())];
    scn.bs.x = static_cast<double>(cell % o.width) + 0.5;
    scn.bs.y = static_cast<double>(cell / o.width) + 0.5;
    validate(scn);
    return scn;
}

void validate(const Scenario& scn) {
    if (scn.grid_w == 0 || scn.grid_h == 0) throw DataError("scenario has empty grid");
    const std::size_t n = scn.grid_w * scn.grid_h;
    if (scn.e_h.size() != n || scn.e_v.size() != n) throw DataError("scenario map sizes do not match the grid");
    for (std::size_t i = 0; i < n; ++i) {
        const double h = scn.e_v[i];
        if (!(h >= 0.0 && h <= 100.0)) throw DataError("structure height out of [0, 100] m at cell " + std::to_string(i));
        if (scn.e_h[i] > 1) throw DataError("footprint map must be binary");
        if (h > 0.0 && !scn.e_h[i]) throw DataError("height without footprint at cell " + std::to_string(i));
        if (!scn.e_h[i] && h != 0.0) throw DataError("street cell with nonzero height at cell " + std::to_string(i));
    }
    const auto& bs = scn.bs;
    if (bs.n_bs < 1) throw DataError("base station needs at least one antenna");
    if (!(bs.spacing_over_lambda > 0.0)) throw DataError("antenna spacing must be positive");
    if (!(bs.carrier_hz > 0.0)) throw DataError("carrier frequency must be positive");
    if (!scn.contains_xy(bs.x, bs.y)) throw DataError("base station outside the scenario");
}

}  // namespace cf3d
