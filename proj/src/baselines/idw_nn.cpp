#include <cmath>
#include <limits>

#include "cf3d/baselines.hpp"
#include "cf3d/errors.hpp"

namespace cf3d {

std::vector<Sample> samples_from(const CfStore& store) {
    std::vector<Sample> out;
    out.reserve(store.size());
    for (const auto& t : store.tuples) out.push_back({t.position, t.rss_norm});
    return out;
}

double idw_predict(const std::vector<Sample>& samples, Vec3 query, double power) {
    if (samples.empty()) throw UsageError("IDW needs at least one sample");
    double num = 0.0, den = 0.0;
    for (const auto& s : samples) {
        const double d = norm(s.position - query);
        if (d == 0.0) return s.value;
        const double w = std::pow(d, -power);
        num += w * s.value;
        den += w;
    }
    return num / den;
}

double nn_predict(const std::vector<Sample>& samples, Vec3 query) {
    if (samples.empty()) throw UsageError("nearest neighbour needs at least one sample");
    double best = std::numeric_limits<double>::infinity();
    double value = samples.front().value;
    for (const auto& s : samples) {
        const Vec3 d = s.position - query;
        const double d2 = d.x * d.x + d.y * d.y + d.z * d.z;
        if (d2 < best) {
            best = d2;
            value = s.value;
        }
    }
    return value;
}

}  // namespace cf3d
