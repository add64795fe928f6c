#include "mumimo/grid.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mumimo {

void GridConfig::validate() const {
    if (n_f < 1 || n_t < 1 || n_k < 1 || n_m < 1 || m_bits < 1)
        throw DimensionError("GridConfig: all dimensions must be >= 1");
    if (n_m < n_k) throw DimensionError("GridConfig: n_m must be >= n_k");
    if (n_f % 12 != 0) throw DimensionError("GridConfig: n_f must be divisible by 12");
    if (subcarrier_spacing_hz <= 0 || center_freq_hz <= 0)
        throw DimensionError("GridConfig: frequencies must be positive");
}

bool PilotPattern::is_pilot_symbol(int t) const {
    return std::find(pilot_symbol_indices.begin(), pilot_symbol_indices.end(), t) !=
           pilot_symbol_indices.end();
}

PilotPattern build_pilot_pattern(const GridConfig& cfg, PatternKind kind,
                                 const std::vector<int>& pilot_symbols_1based) {
    cfg.validate();
    if (cfg.n_f % cfg.n_k != 0)
        throw DimensionError("build_pilot_pattern: n_f must be divisible by n_k");

    PilotPattern p;
    p.kind = kind;
    std::vector<int> syms = pilot_symbols_1based;
    if (syms.empty()) syms = (kind == PatternKind::OneP) ? std::vector<int>{3} : std::vector<int>{3, 12};
    if (kind == PatternKind::OneP && syms.size() != 1)
        throw DimensionError("OneP pattern requires exactly one pilot symbol");
    if (kind == PatternKind::TwoP && syms.size() != 2)
        throw DimensionError("TwoP pattern requires exactly two pilot symbols");
    for (int s : syms) {
        if (s < 1 || s > cfg.n_t) throw DimensionError("pilot symbol index out of range");
        p.pilot_symbol_indices.push_back(s - 1);
    }

    p.n_pt = static_cast<int>(p.pilot_symbol_indices.size());
    p.n_pf = cfg.n_f / cfg.n_k;
    p.pilot_sets.resize(cfg.n_k);
    for (int k = 0; k < cfg.n_k; ++k) {
        // comb of spacing n_k, user k on subcarriers {k, k + n_k, ...}
        for (int t : p.pilot_symbol_indices)
            for (int f = k; f < cfg.n_f; f += cfg.n_k) p.pilot_sets[k].push_back({f, t});
    }
    return p;
}

int ReGroupPartition::group_of(int f, int t) const {
    return (f / group_f) * n_gt + (t / group_t);
}

ReGroupPartition build_partition(const GridConfig& cfg, const PilotPattern& pattern,
                                 int group_f, int group_t) {
    cfg.validate();
    if (group_f < 1 || group_t < 1 || cfg.n_f % group_f != 0 || cfg.n_t % group_t != 0)
        throw DimensionError("build_partition: group sizes must divide grid dimensions");

    ReGroupPartition part;
    part.group_f = group_f;
    part.group_t = group_t;
    part.n_gf = cfg.n_f / group_f;
    part.n_gt = cfg.n_t / group_t;
    for (int gf = 0; gf < part.n_gf; ++gf) {
        for (int gt = 0; gt < part.n_gt; ++gt) {
            GroupRect r{gf * group_f, (gf + 1) * group_f, gt * group_t, (gt + 1) * group_t};
            part.groups.push_back(r);
            std::vector<int> nearest(cfg.n_k, 0);
            double cf = r.f_begin + (group_f - 1) / 2.0;
            double ct = r.t_begin + (group_t - 1) / 2.0;
            for (int k = 0; k < cfg.n_k; ++k) {
                double best = 1e300;
                int best_i = 0;
                for (std::size_t i = 0; i < pattern.pilot_sets[k].size(); ++i) {
                    auto [pf, pt] = pattern.pilot_sets[k][i];
                    double d = std::abs(pf - cf) + std::abs(pt - ct);
                    if (d < best - 1e-12) {  // ties break toward lower index
                        best = d;
                        best_i = static_cast<int>(i);
                    }
                }
                nearest[k] = best_i;
            }
            part.nearest_pilot_map.push_back(std::move(nearest));
        }
    }
    return part;
}

std::string PilotPattern::to_json() const {
    std::ostringstream os;
    os << "{\"kind\":\"" << (kind == PatternKind::OneP ? "1P" : "2P") << "\",\"pilot_symbols\":[";
    for (std::size_t i = 0; i < pilot_symbol_indices.size(); ++i)
        os << (i ? "," : "") << pilot_symbol_indices[i];
    os << "],\"n_pf\":" << n_pf << ",\"n_pt\":" << n_pt << ",\"pilot_sets\":[";
    for (std::size_t k = 0; k < pilot_sets.size(); ++k) {
        os << (k ? "," : "") << "[";
        for (std::size_t i = 0; i < pilot_sets[k].size(); ++i)
            os << (i ? "," : "") << "[" << pilot_sets[k][i].first << "," << pilot_sets[k][i].second
               << "]";
        os << "]";
    }
    os << "]}";
    return os.str();
}

std::string ReGroupPartition::to_json() const {
    std::ostringstream os;
    os << "{\"group_f\":" << group_f << ",\"group_t\":" << group_t << ",\"groups\":[";
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& r = groups[g];
        os << (g ? "," : "") << "[" << r.f_begin << "," << r.f_end << "," << r.t_begin << ","
           << r.t_end << "]";
    }
    os << "]}";
    return os.str();
}

}  // namespace mumimo
