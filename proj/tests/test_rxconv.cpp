#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mumimo/rxconv.hpp"

using namespace mumimo;

namespace {

GridConfig cfg12(int n_k = 2, int n_m = 4) {
    GridConfig cfg;
    cfg.n_f = 12;
    cfg.n_t = 14;
    cfg.n_k = n_k;
    cfg.n_m = n_m;
    return cfg;
}

MatC random_psd(int n, std::uint64_t seed) {
    auto rng = make_rng(seed);
    MatC a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = randn_c(rng);
    return a * a.adjoint() / n;
}

VecC random_vec(int n, std::uint64_t seed) {
    auto rng = make_rng(seed);
    VecC v(n);
    for (int i = 0; i < n; ++i) v[i] = randn_c(rng);
    return v;
}

PilotCovariance make_cov(const MatC& sigma, int n_p, int n_m) {
    PilotCovariance cov;
    cov.n_p = n_p;
    cov.n_m = n_m;
    cov.sigma = sigma;
    return cov;
}

// Naive 2^M-term demapper in long double for oracle comparisons.
void brute_demap(cd x, double rho2, const Constellation& c, double* out) {
    const int mb = c.m_bits;
    for (int m = 0; m < mb; ++m) {
        long double s1 = 0.0L, s0 = 0.0L;
        for (int label = 0; label < (1 << mb); ++label) {
            long double e = expl(-static_cast<long double>(std::norm(x - c.points[label])) / rho2);
            if (Constellation::bit_of_label(label, m, mb))
                s1 += e;
            else
                s0 += e;
        }
        long double l = logl(s1) - logl(s0);
        out[m] = std::clamp(static_cast<double>(l), -kLlrClip, kLlrClip);
    }
}

}  // namespace

TEST_CASE("LMMSE pilot estimate: identity prior at high SNR returns the observation") {
    const int dim = 8;
    PilotCovariance cov = make_cov(MatC::Identity(dim, dim), 4, 2);
    VecC y = random_vec(dim, 1);
    VecC est = lmmse_pilot_estimate(y, cov, 1e-12);
    CHECK((est - y).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("LMMSE pilot estimate: zero prior collapses to zero") {
    const int dim = 8;
    PilotCovariance cov = make_cov(MatC::Zero(dim, dim), 4, 2);
    VecC y = random_vec(dim, 2);
    VecC est = lmmse_pilot_estimate(y, cov, 0.5);
    CHECK(est.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("LMMSE pilot estimate matches dense algebra") {
    const int dim = 12;
    MatC sigma = random_psd(dim, 3);
    PilotCovariance cov = make_cov(sigma, 6, 2);
    VecC y = random_vec(dim, 4);
    const double sigma2 = 0.1;
    VecC expected = sigma * (sigma + sigma2 * MatC::Identity(dim, dim)).inverse() * y;
    VecC est = lmmse_pilot_estimate(y, cov, sigma2);
    CHECK((est - expected).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("interpolation preserves constants in both modes") {
    GridConfig cfg = cfg12();
    for (auto kind : {PatternKind::OneP, PatternKind::TwoP}) {
        PilotPattern pat = build_pilot_pattern(cfg, kind);
        const int n_p = pat.n_pf * pat.n_pt;
        const cd c0(0.7, -0.2);
        std::vector<MatC> pilots(cfg.n_k, MatC::Constant(n_p, cfg.n_m, c0));
        std::vector<InterpMode> modes{InterpMode::FreqNire};
        if (kind == PatternKind::TwoP) modes.push_back(InterpMode::FreqTime);
        for (auto mode : modes) {
            ChannelTensor h = interpolate(cfg, pat, pilots, mode);
            for (const auto& m : h.h)
                CHECK((m.array() - c0).abs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("frequency interpolation midpoint") {
    GridConfig cfg = cfg12();
    PilotPattern pat = build_pilot_pattern(cfg, PatternKind::OneP);
    const int n_p = pat.n_pf;  // user 0 pilots at f = 0,2,...,10, t=2
    std::vector<MatC> pilots(cfg.n_k, MatC::Zero(n_p, cfg.n_m));
    pilots[0](1, 0) = 1.0;  // pilot at f=2 has value 1, pilot at f=0 value 0
    ChannelTensor h = interpolate(cfg, pat, pilots, InterpMode::FreqNire);
    CHECK(std::abs(h.at(1, 2)(0, 0) - 0.5) < 1e-12);
    CHECK(std::abs(h.at(0, 2)(0, 0)) < 1e-12);
    CHECK(std::abs(h.at(2, 2)(0, 0) - 1.0) < 1e-12);
}

TEST_CASE("freq-time interpolation matches a hand-rolled 1-D interpolator") {
    GridConfig cfg = cfg12();
    PilotPattern pat = build_pilot_pattern(cfg, PatternKind::TwoP);  // symbols t=2 and t=11
    const int n_p = pat.n_pf * pat.n_pt;
    std::vector<MatC> pilots(cfg.n_k, MatC::Zero(n_p, cfg.n_m));
    const cd v1(0.3, 0.4), v2(-1.0, 0.25);
    // Constant over frequency per pilot symbol so the f-interpolation is exact.
    for (int p = 0; p < n_p; ++p)
        for (int m = 0; m < cfg.n_m; ++m)
            pilots[0](p, m) = (p < pat.n_pf) ? v1 : v2;
    ChannelTensor h = interpolate(cfg, pat, pilots, InterpMode::FreqTime);
    for (int t = 0; t < cfg.n_t; ++t) {
        cd expected;
        if (t <= 2)
            expected = v1;
        else if (t >= 11)
            expected = v2;
        else
            expected = v1 + (static_cast<double>(t) - 2.0) / 9.0 * (v2 - v1);
        CHECK(std::abs(h.at(5, t)(0, 0) - expected) < 1e-12);
    }
}

TEST_CASE("NIRE copies the nearest pilot symbol") {
    GridConfig cfg = cfg12();
    PilotPattern pat = build_pilot_pattern(cfg, PatternKind::TwoP);
    const int n_p = pat.n_pf * pat.n_pt;
    std::vector<MatC> pilots(cfg.n_k, MatC::Zero(n_p, cfg.n_m));
    for (int p = 0; p < n_p; ++p)
        for (int m = 0; m < cfg.n_m; ++m) pilots[0](p, m) = (p < pat.n_pf) ? 1.0 : 2.0;
    ChannelTensor h = interpolate(cfg, pat, pilots, InterpMode::FreqNire);
    // t=2 and t=11 are the pilot symbols; t<=6 nearer to 2 (ties toward earlier).
    CHECK(std::abs(h.at(3, 0)(0, 0) - 1.0) < 1e-12);
    CHECK(std::abs(h.at(3, 6)(0, 0) - 1.0) < 1e-12);
    CHECK(std::abs(h.at(3, 7)(0, 0) - 2.0) < 1e-12);
    CHECK(std::abs(h.at(3, 13)(0, 0) - 2.0) < 1e-12);
}

TEST_CASE("posterior error covariance vanishes at zero noise") {
    GridConfig cfg = cfg12(2, 2);
    PilotPattern pat = build_pilot_pattern(cfg, PatternKind::OneP);
    ReGroupPartition part = build_partition(cfg, pat, 12, 14);
    const int dim = pat.n_pf * pat.n_pt * cfg.n_m;
    PilotCovariance cov = make_cov(random_psd(dim, 5) + 0.1 * MatC::Identity(dim, dim),
                                   pat.n_pf * pat.n_pt, cfg.n_m);
    ErrorCovEstimate e = estimate_error_cov(cfg, cov, 1e-12, pat, part);
    for (const auto& m : e.per_group) CHECK(m.cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("spatially white prior gives the closed-form scalar error") {
    GridConfig cfg = cfg12(2, 2);
    PilotPattern pat = build_pilot_pattern(cfg, PatternKind::OneP);
    ReGroupPartition part = build_partition(cfg, pat, 12, 14);
    const int dim = pat.n_pf * pat.n_pt * cfg.n_m;
    PilotCovariance cov = make_cov(MatC::Identity(dim, dim), pat.n_pf * pat.n_pt, cfg.n_m);
    const double sigma2 = 0.3;
    ErrorCovEstimate e = estimate_error_cov(cfg, cov, sigma2, pat, part);
    const double expected = sigma2 / (1.0 + sigma2);
    for (const auto& per_user : e.per_group_user)
        for (const auto& m : per_user)
            CHECK((m - expected * MatC::Identity(cfg.n_m, cfg.n_m)).cwiseAbs().maxCoeff() < 1e-10);
    // Summed over users per Eq. 2.
    CHECK((e.per_group[0] - 2.0 * expected * MatC::Identity(cfg.n_m, cfg.n_m))
              .cwiseAbs()
              .maxCoeff() < 1e-10);
}

namespace {

ChannelTensor random_channel_tensor(const GridConfig& cfg, std::uint64_t seed) {
    auto rng = make_rng(seed);
    ChannelTensor h;
    h.n_f = cfg.n_f;
    h.n_t = cfg.n_t;
    h.n_m = cfg.n_m;
    h.n_k = cfg.n_k;
    h.h.resize(static_cast<std::size_t>(cfg.n_f) * cfg.n_t);
    for (auto& m : h.h) {
        m = MatC(cfg.n_m, cfg.n_k);
        for (int i = 0; i < cfg.n_m; ++i)
            for (int j = 0; j < cfg.n_k; ++j) m(i, j) = randn_c(rng);
    }
    return h;
}

}  // namespace

TEST_CASE("grouped LMMSE at 1x1 groups equals per-RE LMMSE") {
    GridConfig cfg = cfg12();
    PilotPattern pat = build_pilot_pattern(cfg, PatternKind::OneP);
    ReGroupPartition part = build_partition(cfg, pat, 1, 1);
    ChannelTensor h = random_channel_tensor(cfg, 6);
    const double sigma2 = 0.2;
    std::vector<MatC> e(h.h.size(), MatC::Zero(cfg.n_m, cfg.n_m));
    auto w = grouped_lmmse(h, e, sigma2, part);
    for (int f = 0; f < cfg.n_f; ++f)
        for (int t = 0; t < cfg.n_t; ++t) {
            const MatC& hh = h.at(f, t);
            MatC expected = hh.adjoint() *
                            (hh * hh.adjoint() + sigma2 * MatC::Identity(cfg.n_m, cfg.n_m))
                                .inverse();
            CHECK((w[part.group_of(f, t)] - expected).cwiseAbs().maxCoeff() < 1e-9);
        }
}

TEST_CASE("zero-forcing limit: W H approaches identity") {
    GridConfig cfg = cfg12();
    PilotPattern pat = build_pilot_pattern(cfg, PatternKind::OneP);
    ReGroupPartition part = build_partition(cfg, pat, 1, 1);
    ChannelTensor h = random_channel_tensor(cfg, 7);
    std::vector<MatC> e(h.h.size(), MatC::Zero(cfg.n_m, cfg.n_m));
    auto w = grouped_lmmse(h, e, 1e-12, part);
    for (int f = 0; f < 3; ++f) {
        MatC prod = w[part.group_of(f, 0)] * h.at(f, 0);
        CHECK((prod - MatC::Identity(cfg.n_k, cfg.n_k)).cwiseAbs().maxCoeff() < 1e-4);
    }
}

TEST_CASE("grouped LMMSE matches a dense brute-force Eq. 3 evaluation") {
    GridConfig cfg = cfg12();
    PilotPattern pat = build_pilot_pattern(cfg, PatternKind::OneP);
    ReGroupPartition part = build_partition(cfg, pat, 4, 7);
    ChannelTensor h = random_channel_tensor(cfg, 8);
    const double sigma2 = 0.15;
    std::vector<MatC> e(h.h.size());
    for (std::size_t i = 0; i < e.size(); ++i)
        e[i] = random_psd(cfg.n_m, 100 + i) * 0.1;
    auto w = grouped_lmmse(h, e, sigma2, part);
    for (std::size_t g = 0; g < part.groups.size(); ++g) {
        const auto& r = part.groups[g];
        MatC num = MatC::Zero(cfg.n_k, cfg.n_m);
        MatC den = MatC::Zero(cfg.n_m, cfg.n_m);
        for (int f = r.f_begin; f < r.f_end; ++f)
            for (int t = r.t_begin; t < r.t_end; ++t) {
                const MatC& hh = h.at(f, t);
                std::size_t i = static_cast<std::size_t>(f) * cfg.n_t + t;
                num += hh.adjoint();
                den += hh * hh.adjoint() + e[i] + sigma2 * MatC::Identity(cfg.n_m, cfg.n_m);
            }
        MatC expected = num * den.inverse();
        CHECK((w[g] - expected).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("scaling makes the effective diagonal unity and rho2 matches Eq. 6") {
    GridConfig cfg = cfg12();
    PilotPattern pat = build_pilot_pattern(cfg, PatternKind::OneP);
    ReGroupPartition part = build_partition(cfg, pat, 4, 7);
    ChannelTensor h = random_channel_tensor(cfg, 9);
    const double sigma2 = 0.2;
    std::vector<MatC> e(h.h.size());
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = random_psd(cfg.n_m, 400 + i) * 0.05;
    auto w = grouped_lmmse(h, e, sigma2, part);
    auto rng = make_rng(10);
    ReceivedGrid y;
    y.n_f = cfg.n_f;
    y.n_t = cfg.n_t;
    y.n_m = cfg.n_m;
    y.y.resize(h.h.size());
    for (auto& v : y.y) {
        v = VecC(cfg.n_m);
        for (int m = 0; m < cfg.n_m; ++m) v[m] = randn_c(rng);
    }
    EqualizedOutput eq = equalize_and_scale(w, h, y, e, sigma2, part);
    for (int f = 0; f < cfg.n_f; f += 3)
        for (int t = 0; t < cfg.n_t; t += 5) {
            std::size_t i = static_cast<std::size_t>(f) * cfg.n_t + t;
            const MatC& wg = w[part.group_of(f, t)];
            for (int k = 0; k < cfg.n_k; ++k) {
                cd d = (wg.row(k) * h.at(f, t).col(k))(0);
                cd expected_x = (wg.row(k) * y.y[i])(0) / d;
                CHECK(std::abs(eq.x_hat[i][k] - expected_x) < 1e-9);
                // Brute-force Eq. 6.
                VecC wk = wg.row(k).adjoint();
                MatC hmk(cfg.n_m, cfg.n_k - 1);
                for (int kk = 0, col = 0; kk < cfg.n_k; ++kk)
                    if (kk != k) hmk.col(col++) = h.at(f, t).col(kk);
                double num = std::real(
                    (wk.adjoint() *
                     (hmk * hmk.adjoint() + e[i] + sigma2 * MatC::Identity(cfg.n_m, cfg.n_m)) *
                     wk)(0));
                double expected_rho = num / std::norm(d);
                CHECK(std::abs(eq.rho2[i][k] - expected_rho) < 1e-9 * std::max(1.0, expected_rho));
            }
        }
}

TEST_CASE("rho2 predicts the empirical post-equalization error variance") {
    GridConfig cfg = cfg12();
    PilotPattern pat = build_pilot_pattern(cfg, PatternKind::OneP);
    ReGroupPartition part = build_partition(cfg, pat, 12, 14);
    // One fixed channel matrix everywhere, perfect CSI, E = 0.
    auto rng0 = make_rng(11);
    MatC hm(cfg.n_m, cfg.n_k);
    for (int i = 0; i < cfg.n_m; ++i)
        for (int j = 0; j < cfg.n_k; ++j) hm(i, j) = randn_c(rng0);
    ChannelTensor h;
    h.n_f = cfg.n_f;
    h.n_t = cfg.n_t;
    h.n_m = cfg.n_m;
    h.n_k = cfg.n_k;
    h.h.assign(static_cast<std::size_t>(cfg.n_f) * cfg.n_t, hm);
    const double sigma2 = 0.1;
    std::vector<MatC> e(h.h.size(), MatC::Zero(cfg.n_m, cfg.n_m));
    auto w = grouped_lmmse(h, e, sigma2, part);

    // Monte-Carlo error variance at one RE with random unit-power symbols.
    const int n_draws = 20000;
    auto rng = make_rng(12);
    VecR acc = VecR::Zero(cfg.n_k);
    ReceivedGrid y;
    y.n_f = cfg.n_f;
    y.n_t = cfg.n_t;
    y.n_m = cfg.n_m;
    y.y.assign(h.h.size(), VecC::Zero(cfg.n_m));
    EqualizedOutput ref = equalize_and_scale(w, h, y, e, sigma2, part);
    for (int d = 0; d < n_draws; ++d) {
        VecC x(cfg.n_k), n(cfg.n_m);
        for (int k = 0; k < cfg.n_k; ++k) x[k] = randn_c(rng);
        for (int m = 0; m < cfg.n_m; ++m) n[m] = std::sqrt(sigma2) * randn_c(rng);
        VecC yy = hm * x + n;
        for (int k = 0; k < cfg.n_k; ++k) {
            cd den = (w[0].row(k) * hm.col(k))(0);
            cd xh = (w[0].row(k) * yy)(0) / den;
            acc[k] += std::norm(xh - x[k]);
        }
    }
    for (int k = 0; k < cfg.n_k; ++k) {
        double emp = acc[k] / n_draws;
        CHECK(std::abs(emp - ref.rho2[0][k]) < 0.05 * ref.rho2[0][k]);
    }
}

TEST_CASE("demapper: on-point input at tiny noise saturates toward the label") {
    Constellation c = build_constellation(4);
    EqualizedOutput eq;
    eq.n_f = 1;
    eq.n_t = 1;
    eq.n_k = 1;
    for (int label = 0; label < 16; ++label) {
        double llrs[4];
        awgn_demap_symbol(c.points[label], 1e-6, c, DemapMethod::Exact, llrs);
        for (int m = 0; m < 4; ++m) {
            int b = Constellation::bit_of_label(label, m, 4);
            CHECK(std::abs(llrs[m] - (b ? kLlrClip : -kLlrClip)) < 1e-9);
        }
    }
}

TEST_CASE("demapper: origin input zeroes the sign bits by symmetry") {
    Constellation c = build_constellation(4);
    double llrs[4];
    awgn_demap_symbol(cd(0.0, 0.0), 0.5, c, DemapMethod::Exact, llrs);
    CHECK(std::abs(llrs[0]) < 1e-12);  // I-axis sign bit
    CHECK(std::abs(llrs[2]) < 1e-12);  // Q-axis sign bit
}

TEST_CASE("exact demapper equals the brute-force 16-term sum; max-log bounded") {
    Constellation c = build_constellation(4);
    auto rng = make_rng(13);
    std::uniform_real_distribution<double> urho(1e-3, 10.0);
    for (int i = 0; i < 2000; ++i) {
        cd x = 2.0 * randn_c(rng);
        double rho2 = urho(rng);
        double exact[4], maxlog[4], brute[4];
        awgn_demap_symbol(x, rho2, c, DemapMethod::Exact, exact);
        awgn_demap_symbol(x, rho2, c, DemapMethod::MaxLog, maxlog);
        brute_demap(x, rho2, c, brute);
        for (int m = 0; m < 4; ++m) {
            CHECK(std::abs(exact[m] - brute[m]) < 1e-9);
            CHECK(std::abs(exact[m] - maxlog[m]) <= std::log(8.0) + 1e-9);
        }
    }
}

TEST_CASE("pilot covariance of an iid channel is close to identity and cached") {
    GridConfig cfg = cfg12(2, 2);
    PilotPattern pat = build_pilot_pattern(cfg, PatternKind::OneP);
    ChannelSampler iid = [&cfg](std::uint64_t i) {
        return random_channel_tensor(cfg, 777 + i);
    };
    std::string path =
        (std::filesystem::temp_directory_path() / "mumimo_test_cov_cache.bin").string();
    std::filesystem::remove(path);
    PilotCovariance cov = estimate_pilot_covariance(cfg, pat, iid, 20000, path, 12345);
    const int dim = pat.n_pf * cfg.n_m;
    REQUIRE(cov.sigma.rows() == dim);
    MatC eye = MatC::Identity(dim, dim);
    CHECK((cov.sigma - eye).norm() / eye.norm() < 0.05);
    CHECK((cov.sigma - cov.sigma.adjoint()).cwiseAbs().maxCoeff() < 1e-10);
    Eigen::SelfAdjointEigenSolver<MatC> es(cov.sigma);
    CHECK(es.eigenvalues().minCoeff() > -1e-8 * std::abs(cov.sigma.real().trace()));
    // Second call must hit the cache and reproduce the matrix exactly.
    int calls = 0;
    ChannelSampler counting = [&](std::uint64_t i) {
        ++calls;
        return random_channel_tensor(cfg, 777 + i);
    };
    PilotCovariance cov2 = estimate_pilot_covariance(cfg, pat, counting, 20000, path, 12345);
    CHECK(calls == 0);
    CHECK((cov2.sigma - cov.sigma).cwiseAbs().maxCoeff() == 0.0);
    std::filesystem::remove(path);
}

TEST_CASE("LMMSE beats least squares in mean squared error") {
    GridConfig cfg = cfg12(2, 2);
    PilotPattern pat = build_pilot_pattern(cfg, PatternKind::OneP);
    const int dim = pat.n_pf * cfg.n_m;
    // Correlated prior: KMS-style covariance so LMMSE has something to exploit.
    MatC sigma(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) sigma(i, j) = std::pow(0.9, std::abs(i - j));
    PilotCovariance cov = make_cov(sigma, pat.n_pf, cfg.n_m);
    const double sigma2 = 0.1;  // SNR 10 dB
    Eigen::LLT<MatC> chol(sigma);
    auto rng = make_rng(14);
    double mse_lmmse = 0.0, mse_ls = 0.0;
    for (int r = 0; r < 1000; ++r) {
        VecC z(dim);
        for (int i = 0; i < dim; ++i) z[i] = randn_c(rng);
        VecC hp = chol.matrixL() * z;
        VecC y = hp;
        for (int i = 0; i < dim; ++i) y[i] += std::sqrt(sigma2) * randn_c(rng);
        VecC est = lmmse_pilot_estimate(y, cov, sigma2);
        mse_lmmse += (est - hp).squaredNorm();
        mse_ls += (y - hp).squaredNorm();
    }
    CHECK(mse_lmmse < mse_ls);
}

TEST_CASE("conventional receiver produces finite clipped LLRs of the right shape") {
    GridConfig cfg = cfg12();
    PilotPattern pat = build_pilot_pattern(cfg, PatternKind::TwoP);
    ReGroupPartition part = build_partition(cfg, pat, 4, 7);
    Constellation c = build_constellation(4);
    const int dim = pat.n_pf * pat.n_pt * cfg.n_m;
    PilotCovariance cov =
        make_cov(random_psd(dim, 15) + 0.2 * MatC::Identity(dim, dim), pat.n_pf * pat.n_pt,
                 cfg.n_m);
    auto rng = make_rng(16);
    ReceivedGrid y;
    y.n_f = cfg.n_f;
    y.n_t = cfg.n_t;
    y.n_m = cfg.n_m;
    y.y.resize(static_cast<std::size_t>(cfg.n_f) * cfg.n_t);
    for (auto& v : y.y) {
        v = VecC(cfg.n_m);
        for (int m = 0; m < cfg.n_m; ++m) v[m] = randn_c(rng);
    }
    ConvRxOutput rx = conventional_receive(cfg, pat, part, cov, y, 0.1, c);
    CHECK(rx.llr.n_f == cfg.n_f);
    CHECK(rx.llr.n_k == cfg.n_k);
    CHECK(rx.llr.m_bits == 4);
    for (double l : rx.llr.llr) {
        CHECK(std::isfinite(l));
        CHECK(std::abs(l) <= kLlrClip + 1e-12);
    }
}
