#ifndef MUMIMO_CHAN_HPP
#define MUMIMO_CHAN_HPP

#include <string>
#include <vector>

#include "mumimo/common.hpp"
#include "mumimo/grid.hpp"

namespace mumimo {

// Synthetic tapped-delay-line model: Jakes Doppler processes per tap,
// ULA steering signatures, exponential power-delay profile.
struct ChannelModelParams {
    int n_taps = 8;
    double delay_spread_s = 100e-9;  // RMS delay spread
    double doppler_hz = 0.0;         // maximum Doppler shift
    double angle_spread = 2.0 * M_PI / 3.0;  // azimuth spread around broadside
    std::uint64_t seed = 0;
    int n_sinusoids = 24;

    void validate() const;
};

// H indexed by RE: h(f, t) is the N_m x N_k per-RE channel matrix.
struct ChannelTensor {
    int n_f = 0, n_t = 0, n_m = 0, n_k = 0;
    std::vector<MatC> h;  // size n_f * n_t, each N_m x N_k

    MatC& at(int f, int t) { return h[static_cast<std::size_t>(f) * n_t + t]; }
    const MatC& at(int f, int t) const { return h[static_cast<std::size_t>(f) * n_t + t]; }

    // Per-user energy sum over the grid: sum_{f,t} ||h_{f,t}^{(k)}||^2.
    double user_energy(int k) const;
};

struct NoiseSpec {
    double sigma2 = 1.0;
    double snr_db = 0.0;

    static NoiseSpec from_snr_db(double snr) {
        NoiseSpec n;
        n.snr_db = snr;
        n.sigma2 = std::pow(10.0, -snr / 10.0);
        return n;
    }
    static NoiseSpec from_sigma2(double s2) {
        NoiseSpec n;
        n.sigma2 = s2;
        n.snr_db = 10.0 * std::log10(1.0 / s2);
        return n;
    }
};

struct ReceivedGrid {
    int n_f = 0, n_t = 0, n_m = 0;
    std::vector<VecC> y;  // size n_f * n_t, each length n_m

    VecC& at(int f, int t) { return y[static_cast<std::size_t>(f) * n_t + t]; }
    const VecC& at(int f, int t) const { return y[static_cast<std::size_t>(f) * n_t + t]; }
};

ChannelTensor generate_channel(const GridConfig& cfg, const ChannelModelParams& params);

// y_{f,t} = H_{f,t} x_{f,t} + n,  n ~ CN(0, sigma2 I).
ReceivedGrid apply_channel(const ChannelTensor& h, const std::vector<VecC>& x,
                           const NoiseSpec& noise, std::uint64_t seed);

// Flat binary channel exchange format: header of 4 LE u32 dims (n_f, n_t, n_m, n_k),
// then interleaved re/im float64 in (f, t, m, k) order, f slowest, k fastest.
void write_channel_file(const std::string& path, const ChannelTensor& h);
ChannelTensor read_channel_file(const std::string& path);

}  // namespace mumimo

#endif
