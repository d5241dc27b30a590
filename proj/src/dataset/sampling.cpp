#include <algorithm>

#include "cf3d/dataset.hpp"
#include "cf3d/errors.hpp"
#include "cf3d/rng.hpp"

namespace cf3d {

GroundMeasurementGrid sample_ground_grid(const Scenario& scn, std::uint64_t seed, const ChannelConfig& config,
                                         std::size_t jobs) {
    GroundMeasurementGrid g;
    g.grid_w = scn.grid_w;
    g.grid_h = scn.grid_h;
    g.mask.assign(scn.grid_w * scn.grid_h, 0);
    g.values.assign(scn.grid_w * scn.grid_h, 0.0f);
    g.rss_db.assign(scn.grid_w * scn.grid_h, kDbFloor);
    std::vector<Vec3> pts;
    std::vector<std::size_t> cells;
    for (std::size_t iy = 0; iy < scn.grid_h; ++iy)
        for (std::size_t ix = 0; ix < scn.grid_w; ++ix) {
            if (scn.building(ix, iy)) continue;
            pts.push_back({static_cast<double>(ix) + 0.5, static_cast<double>(iy) + 0.5, kGroundHeight});
            cells.push_back(scn.index(ix, iy));
        }
    const auto db = simulate_positions(scn, pts, seed, config, jobs);
    for (std::size_t k = 0; k < cells.size(); ++k) {
        g.mask[cells[k]] = 1;
        g.rss_db[cells[k]] = db[k];
    }
    double mx = kDbFloor;
    for (std::size_t k = 0; k < cells.size(); ++k) mx = std::max(mx, db[k]);
    if (mx > kRssThresholdDb) normalize_grid(g, Normalization{kRssThresholdDb, mx});
    return g;
}

void normalize_grid(GroundMeasurementGrid& grid, const Normalization& norm) {
    if (grid.rss_db.size() != grid.values.size()) throw UsageError("grid carries no raw dB values to normalise");
    grid.norm = norm;
    for (std::size_t i = 0; i < grid.values.size(); ++i)
        grid.values[i] = grid.mask[i] ? static_cast<float>(std::min(normalize_rss(grid.rss_db[i], norm), 1.0)) : 0.0f;
}

std::vector<Vec3> sample_aerial_positions(const Scenario& scn, std::size_t count, std::uint64_t seed, double z_lo,
                                          double z_hi) {
    if (!(z_hi >= z_lo && z_lo >= 0.0)) throw ConfigError("invalid altitude band");
    Rng rng(seed, 0xae71a1);
    std::vector<Vec3> out;
    out.reserve(count);
    const double w = static_cast<double>(scn.grid_w), h = static_cast<double>(scn.grid_h);
    std::size_t rejected = 0;
    while (out.size() < count) {
        Vec3 p{rng.uniform(0.0, w), rng.uniform(0.0, h), rng.uniform(z_lo, z_hi)};
        if (scn.inside_structure(p)) {
            if (++rejected > 100 * (count + 100)) throw GenerationError("altitude band is almost entirely inside buildings");
            continue;
        }
        out.push_back(p);
    }
    return out;
}

}  // namespace cf3d
