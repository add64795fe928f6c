#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "mumimo/grid.hpp"

using namespace mumimo;

namespace {

GridConfig make_cfg(int n_f, int n_t, int n_k, int n_m) {
    GridConfig cfg;
    cfg.n_f = n_f;
    cfg.n_t = n_t;
    cfg.n_k = n_k;
    cfg.n_m = n_m;
    return cfg;
}

}  // namespace

TEST_CASE("1P pilot pattern reproduces the worked comb example") {
    // Paper coordinates are 1-based: user 1 at {(1,3),(3,3),...,(11,3)}.
    GridConfig cfg = make_cfg(12, 14, 2, 4);
    PilotPattern p = build_pilot_pattern(cfg, PatternKind::OneP);
    CHECK(p.n_pf == 6);
    CHECK(p.n_pt == 1);
    REQUIRE(p.pilot_sets.size() == 2);
    std::vector<std::pair<int, int>> expected;
    for (int f = 0; f <= 10; f += 2) expected.push_back({f, 2});  // 0-based
    CHECK(p.pilot_sets[0] == expected);
    for (auto& [f, t] : p.pilot_sets[1]) {
        CHECK(t == 2);
        CHECK(f % 2 == 1);
    }
}

TEST_CASE("single user 1P covers all subcarriers of the pilot symbol") {
    GridConfig cfg = make_cfg(12, 14, 1, 2);
    PilotPattern p = build_pilot_pattern(cfg, PatternKind::OneP);
    CHECK(p.n_pf == 12);
    std::set<int> fs;
    for (auto& [f, t] : p.pilot_sets[0]) {
        fs.insert(f);
        CHECK(t == 2);
    }
    CHECK(fs.size() == 12);
}

TEST_CASE("2P pattern at paper scale tiles both pilot symbols") {
    GridConfig cfg = make_cfg(72, 14, 4, 16);
    PilotPattern p = build_pilot_pattern(cfg, PatternKind::TwoP);
    CHECK(p.n_pf == 18);
    CHECK(p.n_pt == 2);
    std::set<std::pair<int, int>> all;
    for (int k = 0; k < 4; ++k) {
        CHECK(p.pilot_sets[k].size() == 36);
        for (auto& re : p.pilot_sets[k]) {
            // Disjointness: no RE claimed twice.
            CHECK(all.insert(re).second);
        }
    }
    CHECK(all.size() == 2 * 72);
    for (int f = 0; f < 72; ++f)
        for (int t : {2, 11}) CHECK(all.count({f, t}) == 1);
}

TEST_CASE("pilot pattern rejects n_f not divisible by n_k") {
    GridConfig cfg = make_cfg(24, 14, 5, 8);
    CHECK_THROWS_AS(build_pilot_pattern(cfg, PatternKind::OneP), DimensionError);
}

TEST_CASE("whole-grid partition is a single group") {
    GridConfig cfg = make_cfg(12, 14, 2, 4);
    PilotPattern p = build_pilot_pattern(cfg, PatternKind::OneP);
    ReGroupPartition part = build_partition(cfg, p, 12, 14);
    CHECK(part.groups.size() == 1);
    CHECK(part.group_of(0, 0) == 0);
    CHECK(part.group_of(11, 13) == 0);
}

TEST_CASE("paper-scale partition has 12 tiles") {
    GridConfig cfg = make_cfg(72, 14, 4, 16);
    PilotPattern p = build_pilot_pattern(cfg, PatternKind::TwoP);
    ReGroupPartition part = build_partition(cfg, p, 12, 7);
    CHECK(part.groups.size() == 12);
}

TEST_CASE("every RE belongs to exactly one group") {
    GridConfig cfg = make_cfg(24, 14, 2, 4);
    PilotPattern p = build_pilot_pattern(cfg, PatternKind::TwoP);
    ReGroupPartition part = build_partition(cfg, p, 4, 7);
    std::vector<int> count(part.groups.size(), 0);
    for (int f = 0; f < 24; ++f)
        for (int t = 0; t < 14; ++t) {
            int g = part.group_of(f, t);
            REQUIRE(g >= 0);
            REQUIRE(g < static_cast<int>(part.groups.size()));
            const auto& r = part.groups[g];
            CHECK(f >= r.f_begin);
            CHECK(f < r.f_end);
            CHECK(t >= r.t_begin);
            CHECK(t < r.t_end);
            count[g] += 1;
        }
    for (int c : count) CHECK(c == 4 * 7);
}

TEST_CASE("1P nearest-pilot map always points into the unique pilot symbol") {
    GridConfig cfg = make_cfg(24, 14, 2, 4);
    PilotPattern p = build_pilot_pattern(cfg, PatternKind::OneP);
    ReGroupPartition part = build_partition(cfg, p, 12, 7);
    for (std::size_t g = 0; g < part.groups.size(); ++g)
        for (int k = 0; k < 2; ++k) {
            int idx = part.nearest_pilot_map[g][k];
            CHECK(p.pilot_sets[k][idx].second == 2);
        }
}

TEST_CASE("partition rejects non-divisible group sizes") {
    GridConfig cfg = make_cfg(24, 14, 2, 4);
    PilotPattern p = build_pilot_pattern(cfg, PatternKind::OneP);
    CHECK_THROWS_AS(build_partition(cfg, p, 5, 7), DimensionError);
}

TEST_CASE("config validation") {
    GridConfig cfg = make_cfg(24, 14, 5, 4);  // n_m < n_k
    CHECK_THROWS_AS(cfg.validate(), DimensionError);
    cfg = make_cfg(10, 14, 2, 4);  // n_f not multiple of 12
    CHECK_THROWS_AS(cfg.validate(), DimensionError);
    cfg = make_cfg(24, 14, 2, 4);
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("JSON dumps are non-empty and mention dimensions") {
    GridConfig cfg = make_cfg(24, 14, 2, 4);
    PilotPattern p = build_pilot_pattern(cfg, PatternKind::TwoP);
    ReGroupPartition part = build_partition(cfg, p, 4, 7);
    CHECK(p.to_json().find("pilot") != std::string::npos);
    CHECK(part.to_json().find("group") != std::string::npos);
}
