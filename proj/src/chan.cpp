#include "mumimo/chan.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace mumimo {

void ChannelModelParams::validate() const {
    if (n_taps < 1) throw DimensionError("ChannelModelParams: n_taps must be >= 1");
    if (doppler_hz < 0) throw DimensionError("ChannelModelParams: doppler_hz must be >= 0");
    if (delay_spread_s < 0) throw DimensionError("ChannelModelParams: delay_spread_s must be >= 0");
    if (n_sinusoids < 1) throw DimensionError("ChannelModelParams: n_sinusoids must be >= 1");
}

double ChannelTensor::user_energy(int k) const {
    double e = 0.0;
    for (const auto& m : h) e += m.col(k).squaredNorm();
    return e;
}

ChannelTensor generate_channel(const GridConfig& cfg, const ChannelModelParams& params) {
    cfg.validate();
    params.validate();

    const int L = params.n_taps;
    auto rng = make_rng(params.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    // Tap delays spaced by the RMS delay spread, exponential power profile.
    std::vector<double> tau(L), power(L);
    double psum = 0.0;
    for (int l = 0; l < L; ++l) {
        tau[l] = l * params.delay_spread_s;
        power[l] = (params.delay_spread_s > 0) ? std::exp(-static_cast<double>(l)) : (l == 0 ? 1.0 : 0.0);
        psum += power[l];
    }
    for (int l = 0; l < L; ++l) power[l] /= psum;

    const double t_sym = 1.0 / cfg.subcarrier_spacing_hz;
    const int ns = params.n_sinusoids;

    ChannelTensor ch;
    ch.n_f = cfg.n_f;
    ch.n_t = cfg.n_t;
    ch.n_m = cfg.n_m;
    ch.n_k = cfg.n_k;
    ch.h.assign(static_cast<std::size_t>(cfg.n_f) * cfg.n_t, MatC::Zero(cfg.n_m, cfg.n_k));

    // Per user and tap: Jakes gain over OFDM symbols plus a ULA steering signature.
    // g[k][l][t], steer[k][l][m]
    std::vector<std::vector<VecC>> gains(cfg.n_k), steer(cfg.n_k);
    for (int k = 0; k < cfg.n_k; ++k) {
        gains[k].resize(L);
        steer[k].resize(L);
        for (int l = 0; l < L; ++l) {
            VecC g = VecC::Zero(cfg.n_t);
            for (int n = 0; n < ns; ++n) {
                double psi = 2.0 * M_PI * unif(rng);   // arrival angle
                double phi = 2.0 * M_PI * unif(rng);   // phase
                double fd = params.doppler_hz * std::cos(psi);
                for (int t = 0; t < cfg.n_t; ++t)
                    g[t] += std::polar(1.0, 2.0 * M_PI * fd * t * t_sym + phi);
            }
            gains[k][l] = g / std::sqrt(static_cast<double>(ns));

            double theta = params.angle_spread * (unif(rng) - 0.5);
            VecC a(cfg.n_m);
            for (int m = 0; m < cfg.n_m; ++m)
                a[m] = std::polar(1.0, -M_PI * m * std::sin(theta));
            steer[k][l] = a;
        }
    }

    for (int f = 0; f < cfg.n_f; ++f) {
        for (int l = 0; l < L; ++l) {
            cd fshift = std::polar(std::sqrt(power[l]),
                                   -2.0 * M_PI * f * cfg.subcarrier_spacing_hz * tau[l]);
            for (int t = 0; t < cfg.n_t; ++t) {
                for (int k = 0; k < cfg.n_k; ++k)
                    ch.at(f, t).col(k) += fshift * gains[k][l][t] * steer[k][l];
            }
        }
    }

    // Per-user energy normalization: sum_{f,t} ||h^{(k)}||^2 = N_f N_t N_m.
    const double target = static_cast<double>(cfg.n_f) * cfg.n_t * cfg.n_m;
    for (int k = 0; k < cfg.n_k; ++k) {
        double e = ch.user_energy(k);
        if (e <= 0) throw std::runtime_error("generate_channel: degenerate zero-energy channel");
        double s = std::sqrt(target / e);
        for (auto& m : ch.h) m.col(k) *= s;
    }
    return ch;
}

ReceivedGrid apply_channel(const ChannelTensor& h, const std::vector<VecC>& x,
                           const NoiseSpec& noise, std::uint64_t seed) {
    if (x.size() != h.h.size()) throw DimensionError("apply_channel: RE count mismatch");
    auto rng = make_rng(seed);
    const double sd = std::sqrt(noise.sigma2);

    ReceivedGrid out;
    out.n_f = h.n_f;
    out.n_t = h.n_t;
    out.n_m = h.n_m;
    out.y.resize(h.h.size());
    for (std::size_t i = 0; i < h.h.size(); ++i) {
        if (x[i].size() != h.n_k) throw DimensionError("apply_channel: tx vector length mismatch");
        VecC n(h.n_m);
        for (int m = 0; m < h.n_m; ++m) n[m] = sd * randn_c(rng);
        out.y[i] = h.h[i] * x[i] + n;
    }
    return out;
}

void write_channel_file(const std::string& path, const ChannelTensor& h) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_channel_file: cannot open " + path);
    std::uint32_t dims[4] = {static_cast<std::uint32_t>(h.n_f), static_cast<std::uint32_t>(h.n_t),
                             static_cast<std::uint32_t>(h.n_m), static_cast<std::uint32_t>(h.n_k)};
    os.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    for (int f = 0; f < h.n_f; ++f)
        for (int t = 0; t < h.n_t; ++t)
            for (int m = 0; m < h.n_m; ++m)
                for (int k = 0; k < h.n_k; ++k) {
                    cd v = h.at(f, t)(m, k);
                    double buf[2] = {v.real(), v.imag()};
                    os.write(reinterpret_cast<const char*>(buf), sizeof(buf));
                }
    if (!os) throw std::runtime_error("write_channel_file: write failed");
}

ChannelTensor read_channel_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_channel_file: cannot open " + path);
    std::uint32_t dims[4];
    is.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (!is) throw std::runtime_error("read_channel_file: truncated header");
    ChannelTensor h;
    h.n_f = static_cast<int>(dims[0]);
    h.n_t = static_cast<int>(dims[1]);
    h.n_m = static_cast<int>(dims[2]);
    h.n_k = static_cast<int>(dims[3]);
    h.h.assign(static_cast<std::size_t>(h.n_f) * h.n_t, MatC::Zero(h.n_m, h.n_k));
    for (int f = 0; f < h.n_f; ++f)
        for (int t = 0; t < h.n_t; ++t)
            for (int m = 0; m < h.n_m; ++m)
                for (int k = 0; k < h.n_k; ++k) {
                    double buf[2];
                    is.read(reinterpret_cast<char*>(buf), sizeof(buf));
                    if (!is) throw std::runtime_error("read_channel_file: truncated payload");
                    h.at(f, t)(m, k) = cd(buf[0], buf[1]);
                }
    return h;
}

}  // namespace mumimo
