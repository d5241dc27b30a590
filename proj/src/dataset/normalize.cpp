#include <algorithm>
#include <cmath>
#include <numeric>

#include "cf3d/dataset.hpp"
#include "cf3d/errors.hpp"
#include "cf3d/rng.hpp"

namespace cf3d {

namespace {

void check_bounds(double g_thr, double g_max) {
    if (!(g_max > g_thr))
        throw ConfigError("normalisation needs g_max > g_thr (got g_max=" + std::to_string(g_max) +
                          ", g_thr=" + std::to_string(g_thr) + ")");
}

}  // namespace

double normalize_rss(double g_db, double g_thr, double g_max) {
    check_bounds(g_thr, g_max);
    return std::max((g_db - g_thr) / (g_max - g_thr), 0.0);
}

double denormalize_rss(double g_norm, double g_thr, double g_max) {
    check_bounds(g_thr, g_max);
    return g_thr + g_norm * (g_max - g_thr);
}

Metrics metrics(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.empty()) throw UsageError("metrics need at least one prediction");
    if (pred.size() != truth.size())
        throw UsageError("metrics: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(truth.size()) + " targets");
    double abs_sum = 0.0, sq_sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = pred[i] - truth[i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
    }
    const double n = static_cast<double>(pred.size());
    Metrics m{abs_sum / n, std::sqrt(sq_sum / n)};
    // Guard the Jensen ordering against last-bit rounding.
    m.rmse = std::max(m.rmse, m.mae);
    return m;
}

DatasetSplit split(std::size_t n, std::array<double, 3> fractions, std::uint64_t seed) {
    for (double f : fractions)
        if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
    if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed, 0x5b1);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const auto n_train = std::min(n, static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n))));
    const auto n_val =
        std::min(n - n_train, static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n))));
    DatasetSplit s;
    s.seed = seed;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                 order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    if (fractions[2] == 0.0 && !s.test.empty()) {  // rounding leftovers go to train
        s.train.insert(s.train.end(), s.test.begin(), s.test.end());
        s.test.clear();
    }
    return s;
}

}  // namespace cf3d
