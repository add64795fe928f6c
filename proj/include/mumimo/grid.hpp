#ifndef MUMIMO_GRID_HPP
#define MUMIMO_GRID_HPP

#include <string>
#include <utility>
#include <vector>

#include "mumimo/common.hpp"

namespace mumimo {

// All (f, t) indices are 0-based internally.

struct GridConfig {
    int n_f = 24;        // subcarriers
    int n_t = 14;        // OFDM symbols
    int n_k = 2;         // users
    int n_m = 4;         // BS antennas
    int m_bits = 4;      // bits per symbol
    double subcarrier_spacing_hz = 15e3;
    double center_freq_hz = 3.5e9;

    void validate() const;
    int num_res() const { return n_f * n_t; }
};

enum class PatternKind { OneP, TwoP };

struct PilotPattern {
    PatternKind kind = PatternKind::OneP;
    std::vector<int> pilot_symbol_indices;                     // t indices
    std::vector<std::vector<std::pair<int, int>>> pilot_sets;  // per user, (f, t)
    int n_pf = 0;  // pilots per symbol per user
    int n_pt = 0;  // pilot-bearing symbols

    bool is_pilot_symbol(int t) const;
    std::string to_json() const;
};

struct GroupRect {
    int f_begin, f_end;  // half-open
    int t_begin, t_end;
};

struct ReGroupPartition {
    std::vector<GroupRect> groups;
    // nearest_pilot_map[g][k] = index into pattern.pilot_sets[k]
    std::vector<std::vector<int>> nearest_pilot_map;
    int group_f = 0, group_t = 0;
    int n_gf = 0, n_gt = 0;

    int group_of(int f, int t) const;
    std::string to_json() const;
};

// Pilot symbols default to 3 (1P) and {3, 12} (2P), 1-based.
PilotPattern build_pilot_pattern(const GridConfig& cfg, PatternKind kind,
                                 const std::vector<int>& pilot_symbols_1based = {});

ReGroupPartition build_partition(const GridConfig& cfg, const PilotPattern& pattern,
                                 int group_f, int group_t);

}  // namespace mumimo

#endif
