#ifndef MUMIMO_RXCONV_HPP
#define MUMIMO_RXCONV_HPP

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mumimo/chan.hpp"
#include "mumimo/common.hpp"
#include "mumimo/grid.hpp"
#include "mumimo/txchain.hpp"

namespace mumimo {

// Covariance of vec(H_P) over pilot REs of one user. Vector ordering: pilot RE
// index p (pilot_sets order, pilot symbols outer, subcarriers inner), antenna
// m fastest, i.e. index = p * N_m + m.
struct PilotCovariance {
    int n_p = 0;  // pilot REs per user (n_pf * n_pt)
    int n_m = 0;
    MatC sigma;  // (n_p * n_m)^2, Hermitian PSD

    void check_valid() const;
};

struct ChannelEstimateBundle {
    ChannelTensor h_hat;            // estimates, N_m x N_k per RE
    std::vector<MatC> e_per_group;  // summed over users, N_m x N_m
    std::vector<std::vector<MatC>> e_per_group_user;  // [group][user]
    std::vector<MatC> h_hat_pilots;  // per user, (n_p x n_m) pilot-RE estimates
};

struct EqualizedOutput {
    int n_f = 0, n_t = 0, n_k = 0;
    std::vector<VecC> x_hat;  // per RE, length n_k
    std::vector<VecR> rho2;   // per RE, length n_k

    const VecC& x_at(int f, int t) const { return x_hat[static_cast<std::size_t>(f) * n_t + t]; }
    const VecR& r_at(int f, int t) const { return rho2[static_cast<std::size_t>(f) * n_t + t]; }
};

struct LlrGrid {
    int n_f = 0, n_t = 0, n_k = 0, m_bits = 0;
    std::vector<double> llr;  // (((f * n_t + t) * n_k + k) * m_bits + m)

    double& at(int f, int t, int k, int m) {
        return llr[((static_cast<std::size_t>(f) * n_t + t) * n_k + k) * m_bits + m];
    }
    double at(int f, int t, int k, int m) const {
        return llr[((static_cast<std::size_t>(f) * n_t + t) * n_k + k) * m_bits + m];
    }
    static LlrGrid zeros(int n_f, int n_t, int n_k, int m_bits) {
        LlrGrid g;
        g.n_f = n_f;
        g.n_t = n_t;
        g.n_k = n_k;
        g.m_bits = m_bits;
        g.llr.assign(static_cast<std::size_t>(n_f) * n_t * n_k * m_bits, 0.0);
        return g;
    }
};

using ChannelSampler = std::function<ChannelTensor(std::uint64_t sample_index)>;

// Sample covariance of vec(H_P) for user 0 over n_samples channel draws.
// When cache_path is nonempty the result is persisted there (binary, with a
// parameter hash in the header) and reloaded on later calls.
PilotCovariance estimate_pilot_covariance(const GridConfig& cfg, const PilotPattern& pattern,
                                          const ChannelSampler& sampler, int n_samples,
                                          const std::string& cache_path = {},
                                          std::uint64_t param_hash = 0);

// vec(H_hat_P) = Sigma (Sigma + sigma2 I)^{-1} vec(Y_P), via Hermitian solve.
VecC lmmse_pilot_estimate(const VecC& y_pilots, const PilotCovariance& cov, double sigma2);

enum class InterpMode { FreqNire, FreqTime };

// Pilot-RE estimates per user -> full-grid estimate tensor. Linear in
// frequency inside each pilot symbol (constant beyond edge pilots), then NIRE
// copy in time; FreqTime additionally interpolates linearly between the two
// pilot symbols of a 2P pattern.
ChannelTensor interpolate(const GridConfig& cfg, const PilotPattern& pattern,
                          const std::vector<MatC>& h_hat_pilots, InterpMode mode);

// LMMSE posterior error covariance Sigma - Sigma (Sigma + sigma2 I)^{-1} Sigma,
// spatial blocks extracted per pilot RE, nearest-pilot assignment per group,
// summed over users.
struct ErrorCovEstimate {
    std::vector<MatC> per_group;                    // summed over users
    std::vector<std::vector<MatC>> per_group_user;  // [group][user]
};
ErrorCovEstimate estimate_error_cov(const GridConfig& cfg, const PilotCovariance& cov,
                                    double sigma2, const PilotPattern& pattern,
                                    const ReGroupPartition& partition);

// Expand a per-group covariance into a per-RE table.
std::vector<MatC> expand_group_cov(const GridConfig& cfg, const ReGroupPartition& partition,
                                   const std::vector<MatC>& per_group);

// W_g = (sum_g H^H) (sum_g (H H^H + E_re) + |g| sigma2 I)^{-1}, one per group.
std::vector<MatC> grouped_lmmse(const ChannelTensor& h_hat, const std::vector<MatC>& e_per_re,
                                double sigma2, const ReGroupPartition& partition);

EqualizedOutput equalize_and_scale(const std::vector<MatC>& w_per_group,
                                   const ChannelTensor& h_hat, const ReceivedGrid& y,
                                   const std::vector<MatC>& e_per_re, double sigma2,
                                   const ReGroupPartition& partition);

enum class DemapMethod { Exact, MaxLog };

LlrGrid awgn_demap(const EqualizedOutput& eq, const Constellation& constellation,
                   DemapMethod method);

// Per-RE exact/max-log LLRs for one symbol, exposed for oracles and the CLI.
void awgn_demap_symbol(cd x_hat, double rho2, const Constellation& constellation,
                       DemapMethod method, double* out_llrs);

// Convenience chain used by the harness. Optional overrides implement the
// perfect-CSI receiver (true pilot channels and externally supplied E).
struct ConvRxOptions {
    InterpMode interp = InterpMode::FreqNire;
    DemapMethod demap = DemapMethod::Exact;
    // If set, used instead of the LMMSE pilot estimates (per user, n_p x n_m).
    std::optional<std::vector<MatC>> pilot_estimates_override;
    // If set, used instead of the analytic per-group covariance (per RE).
    std::optional<std::vector<MatC>> e_per_re_override;
};

struct ConvRxOutput {
    ChannelEstimateBundle estimate;
    std::vector<MatC> e_per_re;
    std::vector<MatC> w_per_group;
    EqualizedOutput eq;
    LlrGrid llr;
};

ConvRxOutput conventional_receive(const GridConfig& cfg, const PilotPattern& pattern,
                                  const ReGroupPartition& partition, const PilotCovariance& cov,
                                  const ReceivedGrid& y, double sigma2,
                                  const Constellation& constellation,
                                  const ConvRxOptions& opts = {});

// Received pilot observations of user k, vec ordering matching PilotCovariance.
VecC gather_pilot_observations(const ReceivedGrid& y, const PilotPattern& pattern, int user);

}  // namespace mumimo

#endif
