#include <algorithm>
#include <bit>
#include <cmath>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "cf3d/dataset.hpp"
#include "cf3d/errors.hpp"
#include "cf3d/rng.hpp"

namespace cf3d {

namespace {

std::uint64_t position_seed(std::uint64_t seed, Vec3 p) {
    std::uint64_t h = Rng(seed, std::bit_cast<std::uint64_t>(p.x)).next_u64();
    h = Rng(h, std::bit_cast<std::uint64_t>(p.y)).next_u64();
    return Rng(h, std::bit_cast<std::uint64_t>(p.z)).next_u64();
}

template <class F>
void parallel_for(std::size_t n, std::size_t jobs, F&& f) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(jobs);
    for (std::size_t j = 0; j < jobs; ++j) {
        pool.emplace_back([&, j] {
            try {
                for (std::size_t i = j; i < n; i += jobs) f(i);
            } catch (...) {
                errors[j] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace

std::string scenario_id(const Scenario& scn) {
    std::ostringstream os;
    os << "scn-" << scn.seed << '-' << scn.grid_w << 'x' << scn.grid_h << "-d" << scn.target_density;
    return os.str();
}

CfStore CfStore::subset(const std::vector<std::size_t>& indices) const {
    CfStore out;
    out.scenario_id = scenario_id;
    out.norm = norm;
    out.tuples.reserve(indices.size());
    for (auto i : indices) out.tuples.push_back(tuples.at(i));
    return out;
}

std::vector<double> simulate_positions(const Scenario& scn, const std::vector<Vec3>& positions, std::uint64_t seed,
                                       const ChannelConfig& config, std::size_t jobs) {
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const Vec3 p = positions[i];
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) || !scn.contains_xy(p.x, p.y) ||
            p.z < 0.0)
            throw RangeError("position " + std::to_string(i) + " lies outside the scenario");
        if (scn.inside_structure(p)) throw RangeError("position " + std::to_string(i) + " lies inside a building");
    }
    const auto facades = extract_facades(scn);
    std::vector<double> out(positions.size());
    parallel_for(positions.size(), jobs, [&](std::size_t i) {
        out[i] = simulate_rss_db(scn, positions[i], position_seed(seed, positions[i]), config, &facades);
    });
    return out;
}

CfStore build_cf(const Scenario& scn, const std::vector<Vec3>& positions, std::uint64_t seed,
                 const ChannelConfig& config, const Normalization& norm, std::size_t jobs) {
    std::set<std::tuple<double, double, double>> seen;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        if (!seen.emplace(positions[i].x, positions[i].y, positions[i].z).second)
            throw UsageError("duplicate position at index " + std::to_string(i));
    }
    const auto db = simulate_positions(scn, positions, seed, config, jobs);
    CfStore store;
    store.scenario_id = scenario_id(scn);
    store.norm = norm;
    store.tuples.resize(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        store.tuples[i].position = positions[i];
        store.tuples[i].rss_db = db[i];
    }
    renormalize(store, norm);
    return store;
}

void renormalize(CfStore& store, const Normalization& norm) {
    store.norm = norm;
    for (auto& t : store.tuples) t.rss_norm = std::min(normalize_rss(t.rss_db, norm), 1.0);
}

}  // namespace cf3d
