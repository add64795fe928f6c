#include "mumimo/txchain.hpp"

#include <cmath>

namespace mumimo {

namespace {

int gray_to_binary(int g) {
    int b = g;
    for (int shift = 1; shift < 16; shift <<= 1) b ^= b >> shift;
    return b;
}

}  // namespace

Constellation build_constellation(int m_bits) {
    if (m_bits < 2 || m_bits % 2 != 0)
        throw DimensionError("build_constellation: modulation order must be even and >= 2");
    const int bpa = m_bits / 2;          // bits per axis
    const int levels = 1 << bpa;
    // Average energy of the square constellation: 2 * mean of (2u - (L-1))^2.
    double e = 0.0;
    for (int u = 0; u < levels; ++u) {
        double a = 2.0 * u - (levels - 1);
        e += a * a;
    }
    e = 2.0 * e / levels;
    const double scale = 1.0 / std::sqrt(e);

    Constellation c;
    c.m_bits = m_bits;
    c.points.resize(1 << m_bits);
    for (int label = 0; label < (1 << m_bits); ++label) {
        int gi = label >> bpa;            // first half of the label: I axis
        int gq = label & (levels - 1);    // second half: Q axis
        double ai = (2.0 * gray_to_binary(gi) - (levels - 1)) * scale;
        double aq = (2.0 * gray_to_binary(gq) - (levels - 1)) * scale;
        c.points[label] = cd(ai, aq);
    }
    return c;
}

cd Constellation::map(const std::uint8_t* bits) const {
    int label = 0;
    for (int m = 0; m < m_bits; ++m) label = (label << 1) | (bits[m] & 1);
    return points[label];
}

int Constellation::hard_demap(cd x) const {
    int best = 0;
    double bd = 1e300;
    for (std::size_t i = 0; i < points.size(); ++i) {
        double d = std::norm(x - points[i]);
        if (d < bd) {
            bd = d;
            best = static_cast<int>(i);
        }
    }
    return best;
}

std::vector<std::pair<int, int>> data_re_set(const GridConfig& cfg, const PilotPattern& pattern) {
    std::vector<std::pair<int, int>> d;
    for (int f = 0; f < cfg.n_f; ++f)
        for (int t = 0; t < cfg.n_t; ++t)
            if (!pattern.is_pilot_symbol(t)) d.push_back({f, t});
    return d;
}

TxGrid assemble_tx_grid(const GridConfig& cfg, const PilotPattern& pattern,
                        const Constellation& constellation,
                        const std::vector<std::vector<std::uint8_t>>& bits) {
    cfg.validate();
    if (constellation.m_bits != cfg.m_bits)
        throw DimensionError("assemble_tx_grid: constellation order mismatch");

    TxGrid g;
    g.n_f = cfg.n_f;
    g.n_t = cfg.n_t;
    g.n_k = cfg.n_k;
    g.m_bits = cfg.m_bits;
    g.data_res = data_re_set(cfg, pattern);
    const std::size_t need = g.data_res.size() * static_cast<std::size_t>(cfg.m_bits);
    if (bits.size() != static_cast<std::size_t>(cfg.n_k))
        throw DimensionError("assemble_tx_grid: need one bit vector per user");
    for (const auto& b : bits)
        if (b.size() != need) throw DimensionError("assemble_tx_grid: bit count mismatch");
    g.bits = bits;

    g.x.assign(static_cast<std::size_t>(cfg.n_f) * cfg.n_t, VecC::Zero(cfg.n_k));
    for (int k = 0; k < cfg.n_k; ++k)
        for (auto [f, t] : pattern.pilot_sets[k])
            g.x[static_cast<std::size_t>(f) * cfg.n_t + t][k] = cd(1.0, 0.0);

    for (std::size_t i = 0; i < g.data_res.size(); ++i) {
        auto [f, t] = g.data_res[i];
        for (int k = 0; k < cfg.n_k; ++k)
            g.x[static_cast<std::size_t>(f) * cfg.n_t + t][k] =
                constellation.map(&bits[k][i * cfg.m_bits]);
    }
    return g;
}

}  // namespace mumimo
