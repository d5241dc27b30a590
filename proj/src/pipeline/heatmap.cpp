#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cf3d/errors.hpp"
#include "cf3d/pipeline.hpp"

namespace cf3d {

std::array<std::uint8_t, 3> colormap(double t) {
    static const double anchors[5][3] = {
        {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
    if (!std::isfinite(t)) t = 0.0;
    const int idx = static_cast<int>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
    const double s = idx / 255.0 * 4.0;
    const int a = std::min(3, static_cast<int>(s));
    const double f = s - a;
    std::array<std::uint8_t, 3> c{};
    for (int k = 0; k < 3; ++k)
        c[k] = static_cast<std::uint8_t>(std::lround(anchors[a][k] + f * (anchors[a + 1][k] - anchors[a][k])));
    return c;
}

std::vector<std::uint8_t> encode_ppm(const HeatSlice& slice, double lo, double hi) {
    if (slice.values.size() != slice.grid_w * slice.grid_h) throw ShapeError("heat slice size mismatch");
    if (!(hi > lo)) throw ConfigError("colour range needs hi > lo");
    const std::string header = "P6\n" + std::to_string(slice.grid_w) + " " + std::to_string(slice.grid_h) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(header.size() + 3 * slice.values.size());
    for (double v : slice.values) {
        std::array<std::uint8_t, 3> c{128, 128, 128};
        if (!std::isnan(v)) c = colormap((v - lo) / (hi - lo));
        out.insert(out.end(), c.begin(), c.end());
    }
    return out;
}

std::string encode_slice_csv(const HeatSlice& slice) {
    std::string out;
    char buf[32];
    for (std::size_t y = 0; y < slice.grid_h; ++y) {
        for (std::size_t x = 0; x < slice.grid_w; ++x) {
            if (x) out += ',';
            const double v = slice.values[y * slice.grid_w + x];
            if (!std::isnan(v)) {
                std::snprintf(buf, sizeof buf, "%.6f", v);
                out += buf;
            }
        }
        out += '\n';
    }
    return out;
}

}  // namespace cf3d
