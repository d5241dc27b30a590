#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "cf3d/dataset.hpp"
#include "cf3d/errors.hpp"
#include "cf3d/io.hpp"
#include "cf3d/rng.hpp"

using namespace cf3d;

TEST_CASE("rss normalisation") {
    const double g_max = -40.0;
    CHECK(normalize_rss(-147.0, -147.0, g_max) == 0.0);
    CHECK(normalize_rss(g_max, -147.0, g_max) == 1.0);
    CHECK(normalize_rss(-160.0, -147.0, g_max) == 0.0);
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const double g = rng.uniform(-147.0, g_max);
        if (g == -147.0) continue;
        CHECK(std::abs(denormalize_rss(normalize_rss(g, -147.0, g_max), -147.0, g_max) - g) < 1e-12);
    }
    CHECK_THROWS_AS(normalize_rss(-50.0, -147.0, -147.0), ConfigError);
    CHECK_THROWS_AS(denormalize_rss(0.5, -100.0, -120.0), ConfigError);
}

TEST_CASE("metrics") {
    auto same = metrics({0.1, 0.2}, {0.1, 0.2});
    CHECK(same.mae == 0.0);
    CHECK(same.rmse == 0.0);
    auto m = metrics({0, 1}, {1, 1});
    CHECK(m.mae == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(std::abs(m.rmse - 0.70711) < 1e-5);
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> p(1 + rng.below(20)), t(p.size());
        for (std::size_t j = 0; j < p.size(); ++j) {
            p[j] = rng.uniform();
            t[j] = rng.uniform();
        }
        auto r = metrics(p, t);
        CHECK(r.rmse >= r.mae);
    }
    CHECK_THROWS_AS(metrics({}, {}), UsageError);
    CHECK_THROWS_AS(metrics({1.0}, {1.0, 2.0}), UsageError);
}

TEST_CASE("split") {
    auto all = split(100, {1, 0, 0}, 3);
    CHECK(all.train.size() == 100);
    CHECK(all.val.empty());
    CHECK(all.test.empty());
    auto a = split(1000, {0.8, 0.1, 0.1}, 5);
    auto b = split(1000, {0.8, 0.1, 0.1}, 5);
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);
    CHECK(a.train.size() == 800);
    CHECK(a.val.size() == 100);
    std::set<std::size_t> seen(a.train.begin(), a.train.end());
    seen.insert(a.val.begin(), a.val.end());
    seen.insert(a.test.begin(), a.test.end());
    CHECK(seen.size() == 1000);
    CHECK(split(1000, {0.8, 0.1, 0.1}, 6).train != a.train);
    CHECK_THROWS_AS(split(10, {0.5, 0.2, 0.2}, 1), ConfigError);
}

TEST_CASE("ground grid on an empty scene falls off with distance") {
    ScenarioOptions o;
    o.density = 0.0;
    o.width = o.height = 64;
    auto scn = generate_scenario(2, o);
    auto g = sample_ground_grid(scn, 4, {});
    auto g2 = sample_ground_grid(scn, 4, {});
    CHECK(g.values == g2.values);
    std::vector<std::vector<double>> rings(12);
    for (std::size_t iy = 0; iy < 64; ++iy)
        for (std::size_t ix = 0; ix < 64; ++ix) {
            const std::size_t i = scn.index(ix, iy);
            CHECK(g.mask[i] == 1);
            CHECK(g.values[i] >= 0.0f);
            CHECK(g.values[i] <= 1.0f);
            const double d = std::hypot(ix + 0.5 - scn.bs.x, iy + 0.5 - scn.bs.y);
            const auto r = static_cast<std::size_t>(d / 4.0);
            if (r < rings.size()) rings[r].push_back(g.rss_db[i]);
        }
    double prev = 1e9;
    for (auto& r : rings) {
        if (r.empty()) continue;
        std::nth_element(r.begin(), r.begin() + r.size() / 2, r.end());
        const double med = r[r.size() / 2];
        CHECK(med < prev);
        prev = med;
    }
}

TEST_CASE("csi store") {
    ScenarioOptions o;
    o.width = o.height = 48;
    auto scn = generate_scenario(11, o);
    const Normalization norm{-147.0, -30.0};
    ChannelConfig cc;
    CHECK(build_cf(scn, {}, 1, cc, norm).size() == 0);

    std::vector<Vec3> ragged{{0.123, 47.9, 25.0}, {13.37, 2.718, 79.99}, {30.0001, 30.0, 50.5}};
    auto st = build_cf(scn, ragged, 1, cc, norm);
    REQUIRE(st.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(st.tuples[i].position.x == ragged[i].x);
        CHECK(st.tuples[i].position.y == ragged[i].y);
        CHECK(st.tuples[i].position.z == ragged[i].z);
        CHECK(st.tuples[i].rss_norm >= 0.0);
        CHECK(st.tuples[i].rss_norm <= 1.0);
        if (st.tuples[i].rss_db <= -147.0) CHECK(st.tuples[i].rss_norm == 0.0);
    }
    CHECK(encode_store(build_cf(scn, ragged, 1, cc, norm)) == encode_store(st));
    // Labels depend on the position, not on its index in the query.
    std::vector<Vec3> reversed(ragged.rbegin(), ragged.rend());
    CHECK(build_cf(scn, reversed, 1, cc, norm).tuples[0].rss_db == st.tuples[2].rss_db);

    auto dup = ragged;
    dup.push_back(ragged[1]);
    CHECK_THROWS_AS(build_cf(scn, dup, 1, cc, norm), UsageError);
    std::size_t bx = 0, by = 0;
    for (std::size_t i = 0; i < scn.e_h.size(); ++i)
        if (scn.e_h[i]) {
            bx = i % scn.grid_w;
            by = i / scn.grid_w;
            break;
        }
    std::vector<Vec3> bad{{1.0, 1.0, 30.0}, {bx + 0.5, by + 0.5, 1.0}};
    try {
        build_cf(scn, bad, 1, cc, norm);
        FAIL("expected a range error");
    } catch (const RangeError& e) {
        CHECK(std::string(e.what()).find("position 1") != std::string::npos);
    }

    auto pos = sample_aerial_positions(scn, 200, 5);
    for (auto& p : pos) {
        CHECK(p.z >= 25.0);
        CHECK(p.z <= 80.0);
        CHECK_FALSE(scn.inside_structure(p));
    }
}

TEST_CASE("persistence round trips") {
    Rng rng(9);
    CfStore st;
    st.scenario_id = "scn-test";
    st.norm = {-147.0, -33.25};
    for (int i = 0; i < 1000; ++i)
        st.tuples.push_back({{rng.uniform(0, 128), rng.uniform(0, 128), rng.uniform(25, 80)},
                             rng.uniform(-200, -30),
                             rng.uniform()});
    const auto bytes = encode_store(st);
    const auto back = decode_store(bytes);
    CHECK(encode_store(back) == bytes);
    CHECK(back.tuples[17].position.y == st.tuples[17].position.y);

    ScenarioOptions o;
    o.width = o.height = 40;
    auto scn = generate_scenario(4, o);
    const auto sb = encode_scenario(scn);
    CHECK(encode_scenario(decode_scenario(sb)) == sb);

    auto g = sample_ground_grid(scn, 2, {});
    const auto gb = encode_grid(g);
    auto g2 = decode_grid(gb);
    CHECK(encode_grid(g2) == gb);
    CHECK(g2.values == g.values);

    auto corrupt = bytes;
    corrupt[1] = 'X';
    CHECK_THROWS_AS(decode_store(corrupt), FormatError);
    auto truncated = sb;
    truncated.resize(truncated.size() - 5);
    CHECK_THROWS_AS(decode_scenario(truncated), FormatError);
    // Version bump in the JSON header.
    std::string text(gb.begin(), gb.end());
    const auto at = text.find("\"version\":1");
    REQUIRE(at != std::string::npos);
    auto bumped = gb;
    bumped[at + 10] = '7';
    CHECK_THROWS_AS(decode_grid(bumped), FormatError);
}
