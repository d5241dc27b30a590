#include <algorithm>
#include <cmath>

#include "cf3d/errors.hpp"
#include "cf3d/models.hpp"

namespace cf3d {

std::pair<double, double> snap_to_cell(double x, double y, std::size_t grid_w, std::size_t grid_h) {
    auto snap = [](double v, std::size_t n) {
        const double c = std::clamp(std::floor(v), 0.0, static_cast<double>(n) - 1.0);
        return c + 0.5;
    };
    return {snap(x, grid_w), snap(y, grid_h)};
}

std::vector<double> tam_mask(double x, double y, std::size_t grid_w, std::size_t grid_h, double sigma) {
    if (!(sigma > 0.0)) throw ConfigError("TAM sigma must be positive");
    const auto [cx, cy] = snap_to_cell(x, y, grid_w, grid_h);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    std::vector<double> out(grid_w * grid_h);
    for (std::size_t iy = 0; iy < grid_h; ++iy) {
        const double dy = static_cast<double>(iy) + 0.5 - cy;
        for (std::size_t ix = 0; ix < grid_w; ++ix) {
            const double dx = static_cast<double>(ix) + 0.5 - cx;
            out[iy * grid_w + ix] = std::exp(-(dx * dx + dy * dy) * inv);
        }
    }
    return out;
}

TamMasks tam_masks(double x, double y, std::size_t grid_w, std::size_t grid_h, double sigma) {
    auto m = Tensor::from({1, grid_h, grid_w, 1}, tam_mask(x, y, grid_w, grid_h, sigma));
    return {m, m, sigma};
}

Tensor tam_mask_batch(const std::vector<std::pair<double, double>>& xy, std::size_t grid_w, std::size_t grid_h,
                      double sigma) {
    std::vector<double> data;
    data.reserve(xy.size() * grid_w * grid_h);
    for (const auto& [x, y] : xy) {
        const auto m = tam_mask(x, y, grid_w, grid_h, sigma);
        data.insert(data.end(), m.begin(), m.end());
    }
    return Tensor::from({xy.size(), grid_h, grid_w, 1}, std::move(data));
}

}  // namespace cf3d
