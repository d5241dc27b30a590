#include "cf3d/raytrace.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "cf3d/errors.hpp"
#include "cf3d/rng.hpp"

namespace cf3d {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::ptrdiff_t clamp_cell(double v, std::size_t n) {
    auto i = static_cast<std::ptrdiff_t>(std::floor(v));
    return std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 1);
}

}  // namespace

bool los_blocked(const Scenario& scn, Vec3 p1, Vec3 p2) {
    const double dx = p2.x - p1.x, dy = p2.y - p1.y, dz = p2.z - p1.z;
    std::ptrdiff_t ix = clamp_cell(p1.x, scn.grid_w), iy = clamp_cell(p1.y, scn.grid_h);
    const std::ptrdiff_t ex = clamp_cell(p2.x, scn.grid_w), ey = clamp_cell(p2.y, scn.grid_h);
    const int sx = dx > 0 ? 1 : (dx < 0 ? -1 : 0);
    const int sy = dy > 0 ? 1 : (dy < 0 ? -1 : 0);
    double tmax_x = sx == 0 ? kInf : ((static_cast<double>(ix) + (sx > 0 ? 1.0 : 0.0)) - p1.x) / dx;
    double tmax_y = sy == 0 ? kInf : ((static_cast<double>(iy) + (sy > 0 ? 1.0 : 0.0)) - p1.y) / dy;
    const double tdx = sx == 0 ? kInf : 1.0 / std::abs(dx);
    const double tdy = sy == 0 ? kInf : 1.0 / std::abs(dy);
    const auto w = static_cast<std::ptrdiff_t>(scn.grid_w), h = static_cast<std::ptrdiff_t>(scn.grid_h);

    double t = 0.0;
    for (;;) {
        const bool last = ix == ex && iy == ey;
        const double t_next = last ? 1.0 : std::min({tmax_x, tmax_y, 1.0});
        const std::size_t cell = static_cast<std::size_t>(iy) * scn.grid_w + static_cast<std::size_t>(ix);
        if (scn.e_h[cell]) {
            const double roof = scn.e_v[cell];
            const double z_lo = std::min(p1.z + dz * std::max(t, 0.0), p1.z + dz * t_next);
            if (z_lo < roof) return true;
        }
        if (last || t_next >= 1.0) break;
        if (tmax_x < tmax_y) {
            ix += sx;
            t = tmax_x;
            tmax_x += tdx;
        } else {
            iy += sy;
            t = tmax_y;
            tmax_y += tdy;
        }
        if (ix < 0 || iy < 0 || ix >= w || iy >= h) break;
    }
    return false;
}

std::vector<Facade> extract_facades(const Scenario& scn) {
    std::vector<Facade> out;
    const std::size_t W = scn.grid_w, H = scn.grid_h;
    auto is_b = [&](std::ptrdiff_t x, std::ptrdiff_t y) {
        if (x < 0 || y < 0 || x >= static_cast<std::ptrdiff_t>(W) || y >= static_cast<std::ptrdiff_t>(H)) return false;
        return scn.building(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
    };
    auto inside = [&](std::ptrdiff_t x, std::ptrdiff_t y) {
        return x >= 0 && y >= 0 && x < static_cast<std::ptrdiff_t>(W) && y < static_cast<std::ptrdiff_t>(H);
    };
    // Walls of constant x: between column x-1 and x. normal +1 means street at x (building at x-1).
    for (int normal : {1, -1}) {
        for (std::size_t bx = 0; bx <= W; ++bx) {
            const auto x = static_cast<std::ptrdiff_t>(bx);
            const std::ptrdiff_t bcol = normal > 0 ? x - 1 : x;  // building side
            const std::ptrdiff_t scol = normal > 0 ? x : x - 1;  // street side
            std::ptrdiff_t run_start = -1;
            double run_h = 0;
            for (std::ptrdiff_t y = 0; y <= static_cast<std::ptrdiff_t>(H); ++y) {
                bool edge = false;
                double hh = 0;
                if (y < static_cast<std::ptrdiff_t>(H) && is_b(bcol, y) && inside(scol, y) && !is_b(scol, y)) {
                    edge = true;
                    hh = scn.height(static_cast<std::size_t>(bcol), static_cast<std::size_t>(y));
                }
                if (run_start >= 0 && (!edge || hh != run_h)) {
                    out.push_back({0, static_cast<double>(x), static_cast<double>(run_start), static_cast<double>(y),
                                   run_h, normal});
                    run_start = -1;
                }
                if (edge && run_start < 0) {
                    run_start = y;
                    run_h = hh;
                }
            }
        }
    }
    for (int normal : {1, -1}) {
        for (std::size_t by = 0; by <= H; ++by) {
            const auto y = static_cast<std::ptrdiff_t>(by);
            const std::ptrdiff_t brow = normal > 0 ? y - 1 : y;
            const std::ptrdiff_t srow = normal > 0 ? y : y - 1;
            std::ptrdiff_t run_start = -1;
            double run_h = 0;
            for (std::ptrdiff_t x = 0; x <= static_cast<std::ptrdiff_t>(W); ++x) {
                bool edge = false;
                double hh = 0;
                if (x < static_cast<std::ptrdiff_t>(W) && is_b(x, brow) && inside(x, srow) && !is_b(x, srow)) {
                    edge = true;
                    hh = scn.height(static_cast<std::size_t>(x), static_cast<std::size_t>(brow));
                }
                if (run_start >= 0 && (!edge || hh != run_h)) {
                    out.push_back({1, static_cast<double>(y), static_cast<double>(run_start), static_cast<double>(x),
                                   run_h, normal});
                    run_start = -1;
                }
                if (edge && run_start < 0) {
                    run_start = x;
                    run_h = hh;
                }
            }
        }
    }
    return out;
}

double free_space_gain(double distance, double carrier_hz) {
    const double lambda = 299792458.0 / carrier_hz;
    const double d = std::max(distance, 1.0);
    const double a = lambda / (4.0 * std::numbers::pi * d);
    return a * a;
}

std::pair<double, double> direction_angles(Vec3 d) {
    const double r = norm(d);
    if (r == 0.0) return {0.0, 0.0};
    double theta = std::atan2(d.y, d.x);
    if (theta >= std::numbers::pi) theta -= 2.0 * std::numbers::pi;
    const double phi = std::acos(std::clamp(d.z / r, -1.0, 1.0));
    return {theta, phi};
}

PathSet trace_paths(const Scenario& scn, Vec3 lav, std::uint64_t seed, const TraceOptions& opt,
                    const std::vector<Facade>* facades) {
    if (opt.max_paths < 1) throw ConfigError("max_paths must be >= 1");
    const Vec3 bs = scn.bs.antenna();
    const double fc = scn.bs.carrier_hz;
    Rng rng(seed, 0x7a7e);
    PathSet ps;

    if (!los_blocked(scn, bs, lav)) {
        Path p;
        p.length = norm(lav - bs);
        p.amplitude = std::sqrt(free_space_gain(p.length, fc));
        std::tie(p.azimuth, p.elevation) = direction_angles(lav - bs);
        ps.los = p;
    }
    if (opt.max_paths < 2) {
        if (ps.los) ps.los->phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        return ps;
    }

    std::vector<Facade> local;
    if (!facades) {
        local = extract_facades(scn);
        facades = &local;
    }
    struct Candidate {
        Path path;
        std::size_t facade;
    };
    std::vector<Candidate> cands;
    for (std::size_t fi = 0; fi < facades->size(); ++fi) {
        const Facade& f = (*facades)[fi];
        const double bs_a = f.axis == 0 ? bs.x : bs.y;
        const double lav_a = f.axis == 0 ? lav.x : lav.y;
        // Both ends must be strictly on the street side of the wall plane.
        if ((bs_a - f.coord) * f.normal <= 0.0 || (lav_a - f.coord) * f.normal <= 0.0) continue;
        Vec3 image = bs;
        if (f.axis == 0) image.x = 2.0 * f.coord - bs.x;
        else image.y = 2.0 * f.coord - bs.y;
        const double img_a = f.axis == 0 ? image.x : image.y;
        const double t = (f.coord - img_a) / (lav_a - img_a);
        const Vec3 hit = image + t * (lav - image);
        const double along = f.axis == 0 ? hit.y : hit.x;
        if (along < f.lo || along > f.hi || hit.z < 0.0 || hit.z > f.height) continue;
        Vec3 r = hit;
        if (f.axis == 0) r.x += 1e-6 * f.normal;
        else r.y += 1e-6 * f.normal;
        if (los_blocked(scn, bs, r) || los_blocked(scn, r, lav)) continue;
        Path p;
        p.bounces = 1;
        p.length = norm(lav - image);
        p.amplitude = opt.reflection_coeff * std::sqrt(free_space_gain(p.length, fc));
        std::tie(p.azimuth, p.elevation) = direction_angles(hit - bs);
        cands.push_back({p, fi});
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.path.amplitude > b.path.amplitude; });
    const std::size_t keep = std::min(cands.size(), opt.max_paths - 1);
    for (std::size_t i = 0; i < keep; ++i) ps.nlos.push_back(cands[i].path);

    if (ps.los) ps.los->phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (auto& p : ps.nlos) p.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    return ps;
}

}  // namespace cf3d
