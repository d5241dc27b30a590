#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cf3d/channel.hpp"
#include "cf3d/errors.hpp"
#include "cf3d/io.hpp"
#include "cf3d/raytrace.hpp"
#include "cf3d/rng.hpp"
#include "cf3d/scenario.hpp"

using namespace cf3d;

namespace {

Scenario empty_scene(std::size_t w = 64, std::size_t h = 64, double bs_x = 20.5, double bs_y = 32.5) {
    Scenario s;
    s.grid_w = w;
    s.grid_h = h;
    s.e_h.assign(w * h, 0);
    s.e_v.assign(w * h, 0.0f);
    s.bs.x = bs_x;
    s.bs.y = bs_y;
    return s;
}

void add_block(Scenario& s, std::size_t x0, std::size_t x1, std::size_t y0, std::size_t y1, float height) {
    for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) {
            s.e_h[s.index(x, y)] = 1;
            s.e_v[s.index(x, y)] = height;
        }
}

}  // namespace

TEST_CASE("scenario generation") {
    ScenarioOptions o;
    o.density = 0.0;
    auto flat = generate_scenario(1, o);
    CHECK(flat.footprint_fraction() == 0.0);
    CHECK(flat.max_height() == 0.0);

    o.density = 0.3;
    auto a = generate_scenario(7, o);
    auto b = generate_scenario(7, o);
    CHECK(encode_scenario(a) == encode_scenario(b));
    CHECK(std::abs(a.footprint_fraction() - 0.3) <= 0.05);
    CHECK_FALSE(a.building(static_cast<std::size_t>(a.bs.x), static_cast<std::size_t>(a.bs.y)));
    for (std::size_t i = 0; i < a.e_h.size(); ++i) {
        if (a.e_v[i] > 0) CHECK(a.e_h[i] == 1);
        if (!a.e_h[i]) CHECK(a.e_v[i] == 0.0f);
        CHECK(a.e_v[i] <= 100.0f);
    }
    CHECK(encode_scenario(generate_scenario(8, o)) != encode_scenario(a));

    o.density = 1.0;
    CHECK_THROWS_AS(generate_scenario(1, o), ConfigError);
    o.density = 0.9;
    CHECK_THROWS_AS(generate_scenario(1, o), GenerationError);
    o.density = 0.3;
    o.width = 16;
    CHECK_THROWS_AS(generate_scenario(1, o), ConfigError);
}

TEST_CASE("line of sight") {
    auto s = empty_scene();
    const Vec3 bs = s.bs.antenna();
    Rng rng(2);
    for (int i = 0; i < 100; ++i) CHECK_FALSE(los_blocked(s, bs, {rng.uniform(0, 64), rng.uniform(0, 64), rng.uniform(0, 80)}));

    // 20 m wall between the 25 m mast and a LAV at 10 m behind it.
    add_block(s, 30, 32, 20, 44, 20.0f);
    CHECK(los_blocked(s, bs, {40.5, 32.5, 10.0}));
    CHECK_FALSE(los_blocked(s, bs, {40.5, 32.5, 60.0}));  // high enough to clear it
    CHECK_FALSE(los_blocked(s, bs, {bs.x, bs.y, 80.0}));  // straight up
    CHECK(los_blocked(s, {40.5, 32.5, 10.0}, bs));        // symmetric
}

TEST_CASE("image-source reflection") {
    const double lambda = 299792458.0 / 3.5e9;
    auto s = empty_scene();
    SUBCASE("empty scene has exactly the LOS path") {
        auto ps = trace_paths(s, {50.5, 10.5, 40.0}, 3);
        CHECK(ps.los.has_value());
        CHECK(ps.nlos.empty());
    }
    add_block(s, 30, 34, 20, 44, 60.0f);  // blocker between BS and LAV
    const Vec3 lav{44.5, 32.5, 30.0};
    SUBCASE("parallel reflector produces the mirrored path") {
        add_block(s, 10, 54, 50, 54, 60.0f);  // facade at y = 50 facing -y
        auto ps = trace_paths(s, lav, 3);
        CHECK_FALSE(ps.los.has_value());
        REQUIRE(ps.nlos.size() >= 1);
        // Image of the BS across y = 50 is (20.5, 67.5, 25); path length |LAV - image|.
        const double len = std::sqrt(24.0 * 24.0 + 35.0 * 35.0 + 5.0 * 5.0);
        CHECK(ps.nlos[0].length == doctest::Approx(len).epsilon(1e-12));
        CHECK(ps.nlos[0].amplitude == doctest::Approx(0.6 * lambda / (4 * std::numbers::pi * len)).epsilon(1e-12));
        // Departure towards the reflection point (32.5, 50, 27.5).
        const auto [theta, phi] = direction_angles(Vec3{12.0, 17.5, 2.5});
        CHECK(ps.nlos[0].azimuth == doctest::Approx(theta));
        CHECK(ps.nlos[0].elevation == doctest::Approx(phi));
    }
    SUBCASE("reflection point off the facade gives no path") {
        add_block(s, 40, 54, 50, 54, 60.0f);  // hit at x = 32.5 misses [40, 54]
        auto ps = trace_paths(s, lav, 3);
        CHECK(ps.empty());
    }
    SUBCASE("path count never exceeds the cap") {
        ScenarioOptions o;
        o.width = o.height = 64;
        auto scn = generate_scenario(5, o);
        const auto facades = extract_facades(scn);
        Rng rng(4);
        for (int i = 0; i < 300; ++i) {
            Vec3 p{rng.uniform(0, 64), rng.uniform(0, 64), rng.uniform(1, 80)};
            if (scn.inside_structure(p)) continue;
            CHECK(trace_paths(scn, p, i, {}, &facades).size() <= 5);
            CHECK(trace_paths(scn, p, i, {3, 0.6}, &facades).size() <= 3);
        }
    }
}

TEST_CASE("shadowing monotonicity") {
    auto s = empty_scene();
    const Vec3 lav{50.5, 32.5, 12.0};
    CHECK(trace_paths(s, lav, 1).los.has_value());
    add_block(s, 35, 38, 28, 37, 30.0f);
    CHECK_FALSE(trace_paths(s, lav, 1).los.has_value());
}

TEST_CASE("steering vector") {
    auto a = steering_vector(std::numbers::pi / 2, std::numbers::pi / 2, 8, 0.5);
    for (auto v : a) {
        CHECK(v.real() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(std::abs(v.imag()) < 1e-12);
    }
    auto b = steering_vector(std::numbers::pi / 2, 0.0, 2, 0.5);
    CHECK(b[0] == std::complex<double>(1.0, 0.0));
    CHECK(b[1].real() == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(std::abs(b[1].imag()) < 1e-12);
    Rng rng(8);
    for (int i = 0; i < 1000; ++i) {
        const std::size_t n = 1 + rng.below(64);
        auto v = steering_vector(rng.uniform(0, std::numbers::pi), rng.uniform(-std::numbers::pi, std::numbers::pi), n,
                                 rng.uniform(0.1, 2.0));
        double s = 0;
        for (auto x : v) s += std::norm(x);
        CHECK(s == doctest::Approx(static_cast<double>(n)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(steering_vector(0, 0, 0, 0.5), ConfigError);
}

TEST_CASE("channel realisation") {
    PathSet los_only;
    los_only.los = Path{0.3, 1.1, 0.7, 1.0, 10.0, 0};
    LavState lav;

    SUBCASE("K at the cap is pure LOS") {
        auto r = channel_realization({1e12, 2.5, 4}, los_only, lav, 17, 64, 0.5, 1);
        double s = 0;
        for (auto v : r.h) s += std::norm(v);
        CHECK(s == doctest::Approx(2.5 * 64).epsilon(1e-12));
        CHECK(rss(r.h, 1.0) == doctest::Approx(2.5 * 64).epsilon(1e-12));
    }
    SUBCASE("no Doppler rotation at n = 0") {
        lav.doppler_hz = 0.0;
        auto r = channel_realization({3.0, 1.0, 2}, los_only, lav, 0, 4, 0.5, 1);
        const auto expect = std::polar(std::sqrt(3.0 / 4.0), 0.7);
        CHECK(std::abs(r.los[0] - expect) < 1e-15);
        lav.doppler_hz = 116.0;
        auto r2 = channel_realization({3.0, 1.0, 2}, los_only, lav, 0, 4, 0.5, 1);
        CHECK(std::abs(r2.los[0] - expect) < 1e-15);
    }
    SUBCASE("decomposition reassembles h") {
        auto r = channel_realization({2.0, 0.3, 8}, los_only, make_lav({1, 2, 30}, 3.5e9, 4), 99, 16, 0.5, 5);
        for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(r.h[i] - std::sqrt(0.3) * (r.los[i] + r.nlos[i])) < 1e-15);
    }
    SUBCASE("missing LOS forces K = 0") {
        PathSet none;
        auto r = channel_realization({5.0, 1.0, 3}, none, lav, 0, 4, 0.5, 1);
        for (auto v : r.los) CHECK(v == std::complex<double>(0, 0));
        CHECK_THROWS_AS(channel_realization({5.0, 1.0, 0}, none, lav, 0, 4, 0.5, 1), DegenerateChannelError);
    }
    SUBCASE("NLOS power and mean over many draws") {
        const int draws = 10000;
        PathSet none;
        double s = 0, s2 = 0;
        std::complex<double> mean0 = 0;
        for (int d = 0; d < draws; ++d) {
            auto r = channel_realization({0.0, 1.0, 256}, none, make_lav({0, 0, 30}, 3.5e9, d), d % 50, 4, 0.5, d);
            double p = 0;
            for (auto v : r.nlos) p += std::norm(v);
            s += p;
            s2 += p * p;
            mean0 += r.nlos[0];
        }
        const double m = s / draws;
        const double se = std::sqrt((s2 / draws - m * m) / draws);
        CHECK(std::abs(m - 4.0) < 3 * se);
        mean0 /= static_cast<double>(draws);
        CHECK(std::abs(mean0.real()) < 4.0 / std::sqrt(draws));
        CHECK(std::abs(mean0.imag()) < 4.0 / std::sqrt(draws));
    }
    SUBCASE("total power with a LOS component") {
        const int draws = 10000;
        double s = 0, s2 = 0;
        for (int d = 0; d < draws; ++d) {
            PathSet ps = los_only;
            ps.los->phase = 0.1 * d;
            auto r = channel_realization({2.0, 0.5, 64}, ps, make_lav({0, 0, 30}, 3.5e9, d), d, 4, 0.5, d);
            const double p = rss(r.h, 1.0) / 0.5;
            s += p;
            s2 += p * p;
        }
        const double m = s / draws;
        const double se = std::sqrt((s2 / draws - m * m) / draws);
        CHECK(std::abs(m - 4.0) < 3 * se);
    }
}

TEST_CASE("rss and large-scale gain") {
    cvec e1{{1, 0}, {0, 0}, {0, 0}};
    CHECK(rss(e1, 2.0) == 2.0);
    cvec h{{0.3, -0.2}, {1.1, 0.4}};
    CHECK(rss(h, 4.0) == doctest::Approx(2.0 * rss(h, 2.0)).epsilon(1e-15));
    CHECK(to_db(0.0) == kDbFloor);
    CHECK(to_db(1e-3) == doctest::Approx(-30.0));
    CHECK_THROWS_AS(rss(h, 0.0), ConfigError);

    const double lambda = 299792458.0 / 3.5e9;
    CHECK(lambda == doctest::Approx(0.08565).epsilon(1e-4));
    CHECK(free_space_gain(1.0, 3.5e9) == doctest::Approx(4.645e-5).epsilon(1e-3));

    PathSet ps;
    ps.los = Path{};
    ps.los->amplitude = 0.01;
    auto ls = compute_large_scale(ps);
    CHECK(ls.rician_k >= 1e12);
    CHECK(ls.beta == doctest::Approx(1e-4));
    ps.nlos.push_back(Path{});
    ps.nlos[0].amplitude = 0.01;
    CHECK(compute_large_scale(ps).rician_k == doctest::Approx(1.0));
    ps.los.reset();
    CHECK(compute_large_scale(ps).rician_k == 0.0);
    auto shadow = compute_large_scale(PathSet{});
    CHECK(shadow.deep_shadow);
    CHECK(shadow.beta == 0.0);
}

TEST_CASE("simulation is deterministic per seed") {
    ScenarioOptions o;
    o.width = o.height = 48;
    auto scn = generate_scenario(3, o);
    ChannelConfig cc;
    const Vec3 p{10.2, 30.7, 41.0};
    CHECK(simulate_rss_db(scn, p, 9, cc) == simulate_rss_db(scn, p, 9, cc));
}
