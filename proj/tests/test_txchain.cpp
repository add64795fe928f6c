#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mumimo/txchain.hpp"

using namespace mumimo;

TEST_CASE("16-QAM has 16 points with unit average energy") {
    Constellation c = build_constellation(4);
    REQUIRE(c.points.size() == 16);
    double e = 0.0;
    for (const auto& p : c.points) e += std::norm(p);
    CHECK(std::abs(e / 16.0 - 1.0) < 1e-12);
}

TEST_CASE("Gray adjacency: axis-neighbors differ in exactly one bit") {
    Constellation c = build_constellation(4);
    const double step = 2.0 / std::sqrt(10.0);
    int checked = 0;
    for (int a = 0; a < 16; ++a)
        for (int b = a + 1; b < 16; ++b) {
            cd d = c.points[a] - c.points[b];
            bool i_neighbor = std::abs(std::abs(d.real()) - step) < 1e-9 &&
                              std::abs(d.imag()) < 1e-9;
            bool q_neighbor = std::abs(std::abs(d.imag()) - step) < 1e-9 &&
                              std::abs(d.real()) < 1e-9;
            if (!i_neighbor && !q_neighbor) continue;
            int diff = 0;
            for (int m = 0; m < 4; ++m)
                diff += Constellation::bit_of_label(a, m, 4) != Constellation::bit_of_label(b, m, 4);
            CHECK(diff == 1);
            ++checked;
        }
    CHECK(checked == 24);  // 12 I-axis + 12 Q-axis neighbor pairs
}

TEST_CASE("minimum squared distance is 4/10") {
    Constellation c = build_constellation(4);
    double dmin = 1e300;
    for (int a = 0; a < 16; ++a)
        for (int b = a + 1; b < 16; ++b) dmin = std::min(dmin, std::norm(c.points[a] - c.points[b]));
    CHECK(std::abs(dmin - 0.4) < 1e-12);
}

TEST_CASE("map then hard-demap is the identity over all labels") {
    Constellation c = build_constellation(4);
    for (int label = 0; label < 16; ++label) {
        std::uint8_t bits[4];
        for (int m = 0; m < 4; ++m)
            bits[m] = static_cast<std::uint8_t>(Constellation::bit_of_label(label, m, 4));
        CHECK(c.hard_demap(c.map(bits)) == label);
    }
}

TEST_CASE("odd modulation orders are rejected") {
    CHECK_THROWS_AS(build_constellation(3), DimensionError);
}

TEST_CASE("data RE count matches the worked 1P example") {
    GridConfig cfg;
    cfg.n_f = 12;
    cfg.n_t = 14;
    cfg.n_k = 2;
    cfg.n_m = 4;
    PilotPattern p = build_pilot_pattern(cfg, PatternKind::OneP);
    auto d = data_re_set(cfg, p);
    CHECK(d.size() == 12 * 14 - 12);  // whole pilot symbol excluded
    for (auto& [f, t] : d) CHECK(t != 2);
}

TEST_CASE("grid assembly places pilots, zeros, and data symbols") {
    GridConfig cfg;
    cfg.n_f = 12;
    cfg.n_t = 14;
    cfg.n_k = 2;
    cfg.n_m = 4;
    PilotPattern pat = build_pilot_pattern(cfg, PatternKind::TwoP);
    Constellation c = build_constellation(4);
    auto d = data_re_set(cfg, pat);
    std::vector<std::vector<std::uint8_t>> bits(
        2, std::vector<std::uint8_t>(d.size() * 4, 0));  // all-zero bits
    TxGrid tx = assemble_tx_grid(cfg, pat, c, bits);

    std::uint8_t zero_bits[4] = {0, 0, 0, 0};
    cd zero_sym = c.map(zero_bits);
    for (auto& [f, t] : d)
        for (int k = 0; k < 2; ++k) CHECK(std::abs(tx.at(f, t)[k] - zero_sym) < 1e-12);
    for (int k = 0; k < 2; ++k)
        for (auto& [f, t] : pat.pilot_sets[k]) {
            CHECK(std::abs(tx.at(f, t)[k] - 1.0) < 1e-12);        // own pilot
            CHECK(std::abs(tx.at(f, t)[1 - k]) < 1e-12);          // other user silent
        }
}

TEST_CASE("round trip: noiseless symbols demap to the transmitted bits") {
    GridConfig cfg;
    cfg.n_f = 12;
    cfg.n_t = 14;
    cfg.n_k = 2;
    cfg.n_m = 4;
    PilotPattern pat = build_pilot_pattern(cfg, PatternKind::OneP);
    Constellation c = build_constellation(4);
    auto d = data_re_set(cfg, pat);
    auto rng = make_rng(42);
    std::uniform_int_distribution<int> coin(0, 1);
    std::vector<std::vector<std::uint8_t>> bits(2);
    for (auto& b : bits) {
        b.resize(d.size() * 4);
        for (auto& v : b) v = static_cast<std::uint8_t>(coin(rng));
    }
    TxGrid tx = assemble_tx_grid(cfg, pat, c, bits);
    for (int k = 0; k < 2; ++k)
        for (std::size_t i = 0; i < d.size(); ++i) {
            auto [f, t] = d[i];
            int label = c.hard_demap(tx.at(f, t)[k]);
            for (int m = 0; m < 4; ++m)
                CHECK(Constellation::bit_of_label(label, m, 4) == bits[k][i * 4 + m]);
        }
}

TEST_CASE("bit-count mismatch is rejected") {
    GridConfig cfg;
    cfg.n_f = 12;
    cfg.n_t = 14;
    cfg.n_k = 2;
    cfg.n_m = 4;
    PilotPattern pat = build_pilot_pattern(cfg, PatternKind::OneP);
    Constellation c = build_constellation(4);
    std::vector<std::vector<std::uint8_t>> bits(2, std::vector<std::uint8_t>(10, 0));
    CHECK_THROWS_AS(assemble_tx_grid(cfg, pat, c, bits), DimensionError);
}
