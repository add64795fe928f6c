#include "mumimo/rxconv.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <fstream>

namespace mumimo {

namespace {

// Hermitian solve A X = B with Cholesky, adding jitter 1e-9 * trace / N on failure.
MatC herm_solve(MatC a, const MatC& b) {
    const int n = static_cast<int>(a.rows());
    for (int attempt = 0; attempt < 3; ++attempt) {
        Eigen::LLT<MatC> llt(a);
        if (llt.info() == Eigen::Success) return llt.solve(b);
        double jitter = 1e-9 * std::abs(a.trace().real()) / n;
        if (jitter <= 0) jitter = 1e-12;
        a += jitter * MatC::Identity(n, n);
    }
    Eigen::LDLT<MatC> ldlt(a);
    if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("herm_solve: factorization failed (non-PSD system)");
    return ldlt.solve(b);
}

}  // namespace

void PilotCovariance::check_valid() const {
    const int dim = n_p * n_m;
    if (sigma.rows() != dim || sigma.cols() != dim)
        throw DimensionError("PilotCovariance: dimension mismatch");
    double asym = (sigma - sigma.adjoint()).cwiseAbs().maxCoeff();
    if (asym > 1e-10) throw std::runtime_error("PilotCovariance: not Hermitian");
}

VecC gather_pilot_observations(const ReceivedGrid& y, const PilotPattern& pattern, int user) {
    const auto& set = pattern.pilot_sets.at(user);
    VecC v(static_cast<Eigen::Index>(set.size()) * y.n_m);
    for (std::size_t p = 0; p < set.size(); ++p) {
        auto [f, t] = set[p];
        v.segment(static_cast<Eigen::Index>(p) * y.n_m, y.n_m) = y.at(f, t);
    }
    return v;
}

PilotCovariance estimate_pilot_covariance(const GridConfig& cfg, const PilotPattern& pattern,
                                          const ChannelSampler& sampler, int n_samples,
                                          const std::string& cache_path,
                                          std::uint64_t param_hash) {
    if (n_samples < 1000)
        throw DimensionError("estimate_pilot_covariance: n_samples must be >= 1000");
    const int n_p = pattern.n_pf * pattern.n_pt;
    const int dim = n_p * cfg.n_m;

    if (!cache_path.empty()) {
        std::ifstream is(cache_path, std::ios::binary);
        if (is) {
            char magic[4];
            std::uint64_t hash = 0;
            std::uint32_t d = 0, ns = 0;
            is.read(magic, 4);
            is.read(reinterpret_cast<char*>(&hash), 8);
            is.read(reinterpret_cast<char*>(&d), 4);
            is.read(reinterpret_cast<char*>(&ns), 4);
            if (is && std::string(magic, 4) == "MMSC" && hash == param_hash &&
                d == static_cast<std::uint32_t>(dim) && ns == static_cast<std::uint32_t>(n_samples)) {
                PilotCovariance cov;
                cov.n_p = n_p;
                cov.n_m = cfg.n_m;
                cov.sigma.resize(dim, dim);
                is.read(reinterpret_cast<char*>(cov.sigma.data()),
                        static_cast<std::streamsize>(sizeof(cd)) * dim * dim);
                if (is) return cov;
            }
        }
    }

    MatC acc = MatC::Zero(dim, dim);
    for (int s = 0; s < n_samples; ++s) {
        ChannelTensor h = sampler(static_cast<std::uint64_t>(s));
        VecC v(dim);
        const auto& set = pattern.pilot_sets[0];
        for (std::size_t p = 0; p < set.size(); ++p) {
            auto [f, t] = set[p];
            v.segment(static_cast<Eigen::Index>(p) * cfg.n_m, cfg.n_m) = h.at(f, t).col(0);
        }
        acc.noalias() += v * v.adjoint();
    }
    PilotCovariance cov;
    cov.n_p = n_p;
    cov.n_m = cfg.n_m;
    cov.sigma = acc / static_cast<double>(n_samples);
    cov.sigma = 0.5 * (cov.sigma + cov.sigma.adjoint().eval());

    if (!cache_path.empty()) {
        std::ofstream os(cache_path, std::ios::binary);
        if (os) {
            std::uint32_t d = static_cast<std::uint32_t>(dim), ns = static_cast<std::uint32_t>(n_samples);
            os.write("MMSC", 4);
            os.write(reinterpret_cast<const char*>(&param_hash), 8);
            os.write(reinterpret_cast<const char*>(&d), 4);
            os.write(reinterpret_cast<const char*>(&ns), 4);
            os.write(reinterpret_cast<const char*>(cov.sigma.data()),
                     static_cast<std::streamsize>(sizeof(cd)) * dim * dim);
        }
    }
    return cov;
}

VecC lmmse_pilot_estimate(const VecC& y_pilots, const PilotCovariance& cov, double sigma2) {
    cov.check_valid();
    if (sigma2 <= 0) throw DimensionError("lmmse_pilot_estimate: sigma2 must be > 0");
    const int dim = static_cast<int>(cov.sigma.rows());
    if (y_pilots.size() != dim) throw DimensionError("lmmse_pilot_estimate: observation size mismatch");
    MatC a = cov.sigma + sigma2 * MatC::Identity(dim, dim);
    return cov.sigma * herm_solve(a, y_pilots);
}

ChannelTensor interpolate(const GridConfig& cfg, const PilotPattern& pattern,
                          const std::vector<MatC>& h_hat_pilots, InterpMode mode) {
    if (mode == InterpMode::FreqTime && pattern.kind != PatternKind::TwoP)
        throw DimensionError("interpolate: FreqTime mode requires the 2P pattern");
    if (h_hat_pilots.size() != static_cast<std::size_t>(cfg.n_k))
        throw DimensionError("interpolate: need estimates for every user");

    ChannelTensor out;
    out.n_f = cfg.n_f;
    out.n_t = cfg.n_t;
    out.n_m = cfg.n_m;
    out.n_k = cfg.n_k;
    out.h.assign(static_cast<std::size_t>(cfg.n_f) * cfg.n_t, MatC::Zero(cfg.n_m, cfg.n_k));

    const int n_pt = pattern.n_pt;
    const int n_pf = pattern.n_pf;

    for (int k = 0; k < cfg.n_k; ++k) {
        const MatC& hp = h_hat_pilots[k];
        if (hp.rows() != n_pf * n_pt || hp.cols() != cfg.n_m)
            throw DimensionError("interpolate: pilot estimate shape mismatch");
        // Pilot subcarriers of user k in ascending order (comb of spacing n_k).
        std::vector<int> pf(n_pf);
        for (int i = 0; i < n_pf; ++i) pf[i] = pattern.pilot_sets[k][i].first;

        // Frequency interpolation inside each pilot symbol: interp[it] is n_f x n_m.
        std::vector<MatC> interp(n_pt, MatC::Zero(cfg.n_f, cfg.n_m));
        for (int it = 0; it < n_pt; ++it) {
            for (int f = 0; f < cfg.n_f; ++f) {
                if (f <= pf.front()) {
                    interp[it].row(f) = hp.row(it * n_pf);
                } else if (f >= pf.back()) {
                    interp[it].row(f) = hp.row(it * n_pf + n_pf - 1);
                } else {
                    int i = 0;
                    while (pf[i + 1] < f) ++i;
                    double w = static_cast<double>(f - pf[i]) / (pf[i + 1] - pf[i]);
                    interp[it].row(f) =
                        (1.0 - w) * hp.row(it * n_pf + i) + w * hp.row(it * n_pf + i + 1);
                }
            }
        }

        for (int t = 0; t < cfg.n_t; ++t) {
            if (mode == InterpMode::FreqTime) {
                int t1 = pattern.pilot_symbol_indices[0], t2 = pattern.pilot_symbol_indices[1];
                for (int f = 0; f < cfg.n_f; ++f) {
                    Eigen::RowVectorXcd v;
                    if (t <= t1) {
                        v = interp[0].row(f);
                    } else if (t >= t2) {
                        v = interp[1].row(f);
                    } else {
                        double w = static_cast<double>(t - t1) / (t2 - t1);
                        v = (1.0 - w) * interp[0].row(f) + w * interp[1].row(f);
                    }
                    out.at(f, t).col(k) = v.transpose();
                }
                continue;
            }
            // NIRE: nearest pilot symbol, ties toward earlier t.
            int best_it = 0;
            int best_d = std::abs(t - pattern.pilot_symbol_indices[0]);
            for (int it = 1; it < n_pt; ++it) {
                int d = std::abs(t - pattern.pilot_symbol_indices[it]);
                if (d < best_d) {
                    best_d = d;
                    best_it = it;
                }
            }
            for (int f = 0; f < cfg.n_f; ++f)
                out.at(f, t).col(k) = interp[best_it].row(f).transpose();
        }
    }
    return out;
}

ErrorCovEstimate estimate_error_cov(const GridConfig& cfg, const PilotCovariance& cov,
                                    double sigma2, const PilotPattern& pattern,
                                    const ReGroupPartition& partition) {
    cov.check_valid();
    const int dim = static_cast<int>(cov.sigma.rows());
    // LMMSE posterior error covariance.
    MatC a = cov.sigma + sigma2 * MatC::Identity(dim, dim);
    MatC x = herm_solve(a, cov.sigma);
    MatC err = cov.sigma - cov.sigma * x;
    err = 0.5 * (err + err.adjoint().eval());

    ErrorCovEstimate out;
    const std::size_t n_groups = partition.groups.size();
    out.per_group.assign(n_groups, MatC::Zero(cfg.n_m, cfg.n_m));
    out.per_group_user.assign(n_groups, std::vector<MatC>(cfg.n_k));
    for (std::size_t g = 0; g < n_groups; ++g) {
        for (int k = 0; k < cfg.n_k; ++k) {
            int p = partition.nearest_pilot_map[g][k];
            MatC block = err.block(p * cfg.n_m, p * cfg.n_m, cfg.n_m, cfg.n_m);
            out.per_group_user[g][k] = block;
            out.per_group[g] += block;
        }
    }
    (void)pattern;
    return out;
}

std::vector<MatC> expand_group_cov(const GridConfig& cfg, const ReGroupPartition& partition,
                                   const std::vector<MatC>& per_group) {
    std::vector<MatC> per_re(static_cast<std::size_t>(cfg.n_f) * cfg.n_t);
    for (int f = 0; f < cfg.n_f; ++f)
        for (int t = 0; t < cfg.n_t; ++t)
            per_re[static_cast<std::size_t>(f) * cfg.n_t + t] = per_group[partition.group_of(f, t)];
    return per_re;
}

std::vector<MatC> grouped_lmmse(const ChannelTensor& h_hat, const std::vector<MatC>& e_per_re,
                                double sigma2, const ReGroupPartition& partition) {
    if (h_hat.n_m < h_hat.n_k) throw DimensionError("grouped_lmmse: requires n_m >= n_k");
    if (e_per_re.size() != h_hat.h.size()) throw DimensionError("grouped_lmmse: E table size mismatch");

    std::vector<MatC> w(partition.groups.size());
    for (std::size_t g = 0; g < partition.groups.size(); ++g) {
        const auto& r = partition.groups[g];
        MatC a = MatC::Zero(h_hat.n_m, h_hat.n_m);
        MatC bh = MatC::Zero(h_hat.n_m, h_hat.n_k);  // (sum H^H)^H = sum H
        int count = 0;
        for (int f = r.f_begin; f < r.f_end; ++f) {
            for (int t = r.t_begin; t < r.t_end; ++t) {
                const MatC& h = h_hat.at(f, t);
                a.noalias() += h * h.adjoint();
                a += e_per_re[static_cast<std::size_t>(f) * h_hat.n_t + t];
                bh += h;
                ++count;
            }
        }
        a += count * sigma2 * MatC::Identity(h_hat.n_m, h_hat.n_m);
        a = 0.5 * (a + a.adjoint().eval());
        // W = B A^{-1} with B = sum H^H; solve the Hermitian system for W^H.
        w[g] = herm_solve(a, bh).adjoint();
    }
    return w;
}

EqualizedOutput equalize_and_scale(const std::vector<MatC>& w_per_group,
                                   const ChannelTensor& h_hat, const ReceivedGrid& y,
                                   const std::vector<MatC>& e_per_re, double sigma2,
                                   const ReGroupPartition& partition) {
    EqualizedOutput out;
    out.n_f = h_hat.n_f;
    out.n_t = h_hat.n_t;
    out.n_k = h_hat.n_k;
    out.x_hat.assign(h_hat.h.size(), VecC::Zero(h_hat.n_k));
    out.rho2.assign(h_hat.h.size(), VecR::Ones(h_hat.n_k));

    const MatC eye = MatC::Identity(h_hat.n_m, h_hat.n_m);
    for (int f = 0; f < h_hat.n_f; ++f) {
        for (int t = 0; t < h_hat.n_t; ++t) {
            const std::size_t i = static_cast<std::size_t>(f) * h_hat.n_t + t;
            const MatC& w = w_per_group[partition.group_of(f, t)];
            const MatC& h = h_hat.h[i];
            const MatC& e = e_per_re[i];
            VecC wy = w * y.y[i];
            MatC g = w * h;  // N_k x N_k
            for (int k = 0; k < h_hat.n_k; ++k) {
                cd diag = g(k, k);
                if (std::abs(diag) < 1e-300)
                    throw std::runtime_error("equalize_and_scale: zero diagonal, user unservable");
                out.x_hat[i][k] = wy[k] / diag;

                VecC wk = w.row(k).adjoint();
                MatC h_mk(h_hat.n_m, h_hat.n_k - 1);
                for (int kk = 0, col = 0; kk < h_hat.n_k; ++kk)
                    if (kk != k) h_mk.col(col++) = h.col(kk);
                cd num = (wk.adjoint() * (h_mk * h_mk.adjoint() + e + sigma2 * eye) * wk)(0);
                double den = std::norm((wk.adjoint() * h.col(k))(0));
                double r2 = num.real() / std::max(den, 1e-300);
                out.rho2[i][k] = std::max(r2, 1e-300);
            }
        }
    }
    return out;
}

void awgn_demap_symbol(cd x_hat, double rho2, const Constellation& constellation,
                       DemapMethod method, double* out_llrs) {
    const int m_bits = constellation.m_bits;
    const int np = static_cast<int>(constellation.points.size());
    // Metrics -|x - p|^2 / rho2 for every point.
    thread_local std::vector<double> metric;
    metric.resize(np);
    for (int p = 0; p < np; ++p) metric[p] = -std::norm(x_hat - constellation.points[p]) / rho2;

    for (int m = 0; m < m_bits; ++m) {
        double max1 = -1e300, max0 = -1e300;
        for (int p = 0; p < np; ++p) {
            if (Constellation::bit_of_label(p, m, m_bits))
                max1 = std::max(max1, metric[p]);
            else
                max0 = std::max(max0, metric[p]);
        }
        double llr;
        if (method == DemapMethod::MaxLog) {
            llr = max1 - max0;
        } else {
            double s1 = 0.0, s0 = 0.0;
            for (int p = 0; p < np; ++p) {
                if (Constellation::bit_of_label(p, m, m_bits))
                    s1 += std::exp(metric[p] - max1);
                else
                    s0 += std::exp(metric[p] - max0);
            }
            llr = (max1 + std::log(s1)) - (max0 + std::log(s0));
        }
        out_llrs[m] = std::clamp(llr, -kLlrClip, kLlrClip);
    }
}

LlrGrid awgn_demap(const EqualizedOutput& eq, const Constellation& constellation,
                   DemapMethod method) {
    LlrGrid g = LlrGrid::zeros(eq.n_f, eq.n_t, eq.n_k, constellation.m_bits);
    for (int f = 0; f < eq.n_f; ++f)
        for (int t = 0; t < eq.n_t; ++t)
            for (int k = 0; k < eq.n_k; ++k) {
                const std::size_t i = static_cast<std::size_t>(f) * eq.n_t + t;
                awgn_demap_symbol(eq.x_hat[i][k], eq.rho2[i][k], constellation, method,
                                  &g.at(f, t, k, 0));
            }
    return g;
}

ConvRxOutput conventional_receive(const GridConfig& cfg, const PilotPattern& pattern,
                                  const ReGroupPartition& partition, const PilotCovariance& cov,
                                  const ReceivedGrid& y, double sigma2,
                                  const Constellation& constellation, const ConvRxOptions& opts) {
    ConvRxOutput out;
    const int n_p = pattern.n_pf * pattern.n_pt;

    out.estimate.h_hat_pilots.resize(cfg.n_k);
    for (int k = 0; k < cfg.n_k; ++k) {
        if (opts.pilot_estimates_override) {
            out.estimate.h_hat_pilots[k] = (*opts.pilot_estimates_override)[k];
        } else {
            VecC yp = gather_pilot_observations(y, pattern, k);
            VecC est = lmmse_pilot_estimate(yp, cov, sigma2);
            MatC hp(n_p, cfg.n_m);
            for (int p = 0; p < n_p; ++p)
                hp.row(p) = est.segment(static_cast<Eigen::Index>(p) * cfg.n_m, cfg.n_m).transpose();
            out.estimate.h_hat_pilots[k] = hp;
        }
    }

    out.estimate.h_hat = interpolate(cfg, pattern, out.estimate.h_hat_pilots, opts.interp);

    if (opts.e_per_re_override) {
        out.e_per_re = *opts.e_per_re_override;
    } else {
        ErrorCovEstimate e = estimate_error_cov(cfg, cov, sigma2, pattern, partition);
        out.estimate.e_per_group = e.per_group;
        out.estimate.e_per_group_user = e.per_group_user;
        out.e_per_re = expand_group_cov(cfg, partition, e.per_group);
    }

    out.w_per_group = grouped_lmmse(out.estimate.h_hat, out.e_per_re, sigma2, partition);
    out.eq = equalize_and_scale(out.w_per_group, out.estimate.h_hat, y, out.e_per_re, sigma2,
                                partition);
    out.llr = awgn_demap(out.eq, constellation, opts.demap);
    return out;
}

}  // namespace mumimo
