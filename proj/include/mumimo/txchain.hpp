#ifndef MUMIMO_TXCHAIN_HPP
#define MUMIMO_TXCHAIN_HPP

#include <cstdint>
#include <vector>

#include "mumimo/common.hpp"
#include "mumimo/grid.hpp"

namespace mumimo {

// Gray-labeled square QAM with unit average energy. The first M/2 bits of a
// label select the I axis, the last M/2 the Q axis, reflected-Gray per axis.
struct Constellation {
    int m_bits = 4;
    std::vector<cd> points;  // indexed by label

    cd map(const std::uint8_t* bits) const;  // m_bits entries in {0,1}
    int hard_demap(cd x) const;              // returns label of nearest point
    static int bit_of_label(int label, int m, int m_bits) {
        return (label >> (m_bits - 1 - m)) & 1;
    }
};

Constellation build_constellation(int m_bits);

struct TxGrid {
    int n_f = 0, n_t = 0, n_k = 0, m_bits = 0;
    std::vector<VecC> x;                          // per RE, length n_k
    std::vector<std::pair<int, int>> data_res;    // set D, f-major order
    std::vector<std::vector<std::uint8_t>> bits;  // per user, |D| * M bits

    const VecC& at(int f, int t) const { return x[static_cast<std::size_t>(f) * n_t + t]; }
};

// Data REs of the grid in f-major order (all symbols that carry no pilots).
std::vector<std::pair<int, int>> data_re_set(const GridConfig& cfg, const PilotPattern& pattern);

// bits: per user, |D| * M entries; pilots are 1 on own pilot REs, 0 on other
// users' pilot REs, constellation symbols on data REs.
TxGrid assemble_tx_grid(const GridConfig& cfg, const PilotPattern& pattern,
                        const Constellation& constellation,
                        const std::vector<std::vector<std::uint8_t>>& bits);

}  // namespace mumimo

#endif
