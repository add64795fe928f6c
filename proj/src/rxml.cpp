#include "mumimo/rxml.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mumimo {

namespace {

constexpr double kLn10 = 2.302585092994046;

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

std::vector<Param*> MlReceiverParams::trainable() {
    std::vector<Param*> out = cnn_e.params();
    auto l = cnn_l.params();
    auto d = cnn_dmp.params();
    out.insert(out.end(), l.begin(), l.end());
    out.insert(out.end(), d.begin(), d.end());
    out.push_back(&gamma);
    return out;
}

std::vector<Param*> MlReceiverParams::checkpoint_tensors() {
    std::vector<Param*> out = trainable();
    auto se = cnn_e.state();
    auto sl = cnn_l.state();
    auto sd = cnn_dmp.state();
    out.insert(out.end(), se.begin(), se.end());
    out.insert(out.end(), sl.begin(), sl.end());
    out.insert(out.end(), sd.begin(), sd.end());
    return out;
}

void MlReceiverParams::save(const std::string& path) { save_checkpoint(path, checkpoint_tensors()); }
void MlReceiverParams::load(const std::string& path) { load_checkpoint(path, checkpoint_tensors()); }

MlReceiverParams build_ml_receiver(int n_m, int m_bits, std::uint64_t seed) {
    auto rng = make_rng(seed);
    MlReceiverParams p;
    p.n_m = n_m;
    p.m_bits = m_bits;

    p.cnn_e.add(std::make_unique<Conv2D>("cnn_e.conv0", 4, 32, 5, 3, 1, 1, rng));
    p.cnn_e.add(std::make_unique<Activation>(Act::Relu));
    p.cnn_e.add(std::make_unique<Conv2D>("cnn_e.conv1", 32, 32, 5, 3, 1, 1, rng));
    p.cnn_e.add(std::make_unique<Activation>(Act::Relu));
    p.cnn_e.add(std::make_unique<Conv2D>("cnn_e.out", 32, 2, 1, 1, 1, 1, rng));
    p.cnn_e.add(std::make_unique<Activation>(Act::Sigmoid));

    p.cnn_l.add(std::make_unique<Conv2D>("cnn_l.conv0", 2 * n_m, 32, 1, 1, 1, 1, rng));
    const int lk[5][2] = {{3, 2}, {5, 2}, {7, 2}, {5, 2}, {3, 2}};
    const int ld[5][2] = {{1, 1}, {2, 1}, {3, 1}, {2, 1}, {1, 1}};
    for (int i = 0; i < 5; ++i)
        p.cnn_l.add(std::make_unique<ResNetBlock>("cnn_l.res" + std::to_string(i), 32, lk[i][0],
                                                  lk[i][1], ld[i][0], ld[i][1], rng));
    p.cnn_l.add(std::make_unique<Conv2D>("cnn_l.out", 32, 1, 3, 2, 1, 1, rng));
    p.cnn_l.add(std::make_unique<GlobalAvgPool>());
    p.cnn_l.add(std::make_unique<Dense>("cnn_l.dense", 1, 1, rng));

    p.cnn_dmp.add(std::make_unique<Conv2D>("cnn_dmp.conv0", 6, 128, 1, 1, 1, 1, rng));
    const int dk[7][2] = {{3, 3}, {5, 3}, {7, 3}, {9, 3}, {7, 3}, {5, 3}, {3, 3}};
    const int dd[7][2] = {{1, 1}, {2, 1}, {3, 2}, {4, 3}, {3, 2}, {2, 1}, {1, 1}};
    for (int i = 0; i < 7; ++i)
        p.cnn_dmp.add(std::make_unique<ResNetBlock>("cnn_dmp.res" + std::to_string(i), 128,
                                                    dk[i][0], dk[i][1], dd[i][0], dd[i][1], rng));
    p.cnn_dmp.add(std::make_unique<Conv2D>("cnn_dmp.out", 128, m_bits, 1, 1, 1, 1, rng));

    p.gamma.name = "gamma";
    p.gamma.shape = {1};
    p.gamma.value = {M_PI};
    p.gamma.grad = {0.0};
    return p;
}

double positional_coord(int index, int extent) {
    int half = extent / 2;
    return (index < half) ? static_cast<double>(index - half) : static_cast<double>(index - half + 1);
}

MatC build_decay_covariance(double alpha, double beta, double gamma, int n_m) {
    MatC e(n_m, n_m);
    for (int x = 0; x < n_m; ++x)
        for (int y = 0; y < n_m; ++y) {
            int d = y - x;
            e(x, y) = alpha * std::pow(beta, std::abs(d)) * std::polar(1.0, gamma * d);
        }
    return e;
}

void decay_covariance_backward(double alpha, double beta, double gamma, const MatC& cotangent,
                               double* d_alpha, double* d_beta, double* d_gamma) {
    const int n_m = static_cast<int>(cotangent.rows());
    for (int x = 0; x < n_m; ++x)
        for (int y = 0; y < n_m; ++y) {
            int d = y - x;
            int ad = std::abs(d);
            cd ph = std::polar(1.0, gamma * d);
            cd g = cotangent(x, y);
            double bpow = std::pow(beta, ad);
            *d_alpha += std::real(std::conj(g) * (bpow * ph));
            if (ad >= 1) *d_beta += std::real(std::conj(g) * (alpha * ad * std::pow(beta, ad - 1) * ph));
            *d_gamma += std::real(std::conj(g) * (alpha * bpow * cd(0.0, 1.0) * static_cast<double>(d) * ph));
        }
}

// ---------------------------------------------------------------------------
// MlPipeline

MlPipeline::MlPipeline(const GridConfig& cfg, const PilotPattern& pattern,
                       const ReGroupPartition& partition, const Constellation& constellation,
                       MlReceiverParams* params, MlRxOptions opts)
    : cfg_(cfg),
      pattern_(pattern),
      partition_(partition),
      constellation_(constellation),
      params_(params),
      opts_(std::move(opts)),
      data_res_(data_re_set(cfg, pattern)) {}

DiffTensor MlPipeline::make_planes(int batch, int channels) const {
    DiffTensor t = DiffTensor::zeros(batch, cfg_.n_f, cfg_.n_t, channels);
    for (int b = 0; b < batch; ++b)
        for (int f = 0; f < cfg_.n_f; ++f)
            for (int tt = 0; tt < cfg_.n_t; ++tt) {
                t.at(b, f, tt, 0) = positional_coord(f, cfg_.n_f);
                t.at(b, f, tt, 1) = positional_coord(tt, cfg_.n_t);
            }
    return t;
}

std::vector<std::vector<LlrGrid>> MlPipeline::forward(const std::vector<const RgSample*>& batch,
                                                      const PilotCovariance& cov, bool training) {
    const int bs = static_cast<int>(batch.size());
    const int nk = cfg_.n_k;
    const int nm = cfg_.n_m;
    const int n_p = pattern_.n_pf * pattern_.n_pt;
    batch_size_ = bs;
    cache_.assign(bs, {});

    // Front end: LMMSE pilot estimation and interpolation (not trainable).
    std::vector<std::vector<MatC>> pilot_est(bs);
    for (int s = 0; s < bs; ++s) {
        const RgSample& smp = *batch[s];
        cache_[s].sample = &smp;
        pilot_est[s].resize(nk);
        for (int k = 0; k < nk; ++k) {
            VecC yp = gather_pilot_observations(smp.y, pattern_, k);
            VecC est = lmmse_pilot_estimate(yp, cov, smp.sigma2);
            MatC hp(n_p, nm);
            for (int p = 0; p < n_p; ++p)
                hp.row(p) = est.segment(static_cast<Eigen::Index>(p) * nm, nm).transpose();
            pilot_est[s][k] = hp;
        }
        cache_[s].h_hat = interpolate(cfg_, pattern_, pilot_est[s], opts_.interp);
    }

    const bool injected = opts_.inject_e_per_re_user.has_value();

    // Doppler feature: CNN_l on the pilot-grid estimates (2P only).
    std::vector<double> l_feature(static_cast<std::size_t>(bs) * nk, 0.0);
    cnn_l_used_ = (pattern_.kind == PatternKind::TwoP) && !injected;
    if (cnn_l_used_) {
        cnn_l_in_ = DiffTensor::zeros(bs * nk, pattern_.n_pf, pattern_.n_pt, 2 * nm);
        for (int s = 0; s < bs; ++s)
            for (int k = 0; k < nk; ++k) {
                int bi = s * nk + k;
                for (int it = 0; it < pattern_.n_pt; ++it)
                    for (int i = 0; i < pattern_.n_pf; ++i)
                        for (int m = 0; m < nm; ++m) {
                            cd v = pilot_est[s][k](it * pattern_.n_pf + i, m);
                            cnn_l_in_.at(bi, i, it, m) = v.real();
                            cnn_l_in_.at(bi, i, it, nm + m) = v.imag();
                        }
            }
        DiffTensor lout = params_->cnn_l.forward(cnn_l_in_, training);
        for (int bi = 0; bi < bs * nk; ++bi) l_feature[bi] = lout.v[bi];
    }

    // CNN_E: per (sample, user) covariance-model parameter maps.
    const double gamma = params_->gamma.value[0];
    if (!injected) {
        cnn_e_in_ = make_planes(bs * nk, 4);
        for (int s = 0; s < bs; ++s)
            for (int k = 0; k < nk; ++k) {
                int bi = s * nk + k;
                for (int f = 0; f < cfg_.n_f; ++f)
                    for (int t = 0; t < cfg_.n_t; ++t) {
                        cnn_e_in_.at(bi, f, t, 2) = batch[s]->snr_db;
                        cnn_e_in_.at(bi, f, t, 3) = l_feature[bi];
                    }
            }
        cnn_e_out_ = params_->cnn_e.forward(cnn_e_in_, training);
    }

    // Equalization chain per sample.
    llr_out_.assign(bs, {});
    for (int s = 0; s < bs; ++s) {
        SampleCache& c = cache_[s];
        const double sigma2 = c.sample->sigma2;
        const std::size_t n_re = c.h_hat.h.size();
        c.e_per_re.assign(n_re, MatC::Zero(nm, nm));
        for (int f = 0; f < cfg_.n_f; ++f)
            for (int t = 0; t < cfg_.n_t; ++t) {
                std::size_t i = static_cast<std::size_t>(f) * cfg_.n_t + t;
                for (int k = 0; k < nk; ++k) {
                    if (injected) {
                        c.e_per_re[i] += (*opts_.inject_e_per_re_user)[i][k];
                    } else {
                        int bi = s * nk + k;
                        double a = cnn_e_out_.at(bi, f, t, 0);
                        double b = cnn_e_out_.at(bi, f, t, 1);
                        c.e_per_re[i] += build_decay_covariance(a, b, gamma, nm);
                    }
                }
            }

        const std::size_t n_groups = partition_.groups.size();
        c.w_per_group.resize(n_groups);
        c.a_inv.resize(n_groups);
        c.b_sum.resize(n_groups);
        for (std::size_t g = 0; g < n_groups; ++g) {
            const auto& r = partition_.groups[g];
            MatC a = MatC::Zero(nm, nm);
            MatC bsum = MatC::Zero(nm, nk);
            int count = 0;
            for (int f = r.f_begin; f < r.f_end; ++f)
                for (int t = r.t_begin; t < r.t_end; ++t) {
                    std::size_t i = static_cast<std::size_t>(f) * cfg_.n_t + t;
                    const MatC& h = c.h_hat.h[i];
                    a.noalias() += h * h.adjoint();
                    a += c.e_per_re[i];
                    bsum += h;
                    ++count;
                }
            a += count * sigma2 * MatC::Identity(nm, nm);
            c.a_inv[g] = a.llt().solve(MatC::Identity(nm, nm));
            c.b_sum[g] = bsum;
            c.w_per_group[g] = bsum.adjoint() * c.a_inv[g];
        }

        c.eq = equalize_and_scale(c.w_per_group, c.h_hat, c.sample->y, c.e_per_re, sigma2,
                                  partition_);
    }

    if (opts_.use_awgn_demapper) {
        for (int s = 0; s < bs; ++s) {
            LlrGrid full = awgn_demap(cache_[s].eq, constellation_, DemapMethod::Exact);
            std::vector<LlrGrid> per_user;
            for (int k = 0; k < nk; ++k) {
                LlrGrid g = LlrGrid::zeros(cfg_.n_f, cfg_.n_t, 1, cfg_.m_bits);
                for (int f = 0; f < cfg_.n_f; ++f)
                    for (int t = 0; t < cfg_.n_t; ++t)
                        for (int m = 0; m < cfg_.m_bits; ++m)
                            g.at(f, t, 0, m) = full.at(f, t, k, m);
                per_user.push_back(std::move(g));
            }
            llr_out_[s] = std::move(per_user);
        }
        return llr_out_;
    }

    // CNN demapper on the six grid-level planes.
    cnn_dmp_in_ = make_planes(bs * nk, 6);
    for (int s = 0; s < bs; ++s)
        for (int k = 0; k < nk; ++k) {
            int bi = s * nk + k;
            for (int f = 0; f < cfg_.n_f; ++f)
                for (int t = 0; t < cfg_.n_t; ++t) {
                    std::size_t i = static_cast<std::size_t>(f) * cfg_.n_t + t;
                    cnn_dmp_in_.at(bi, f, t, 2) = batch[s]->snr_db;
                    cnn_dmp_in_.at(bi, f, t, 3) = 10.0 * std::log10(cache_[s].eq.rho2[i][k]);
                    cnn_dmp_in_.at(bi, f, t, 4) = cache_[s].eq.x_hat[i][k].real();
                    cnn_dmp_in_.at(bi, f, t, 5) = cache_[s].eq.x_hat[i][k].imag();
                }
        }
    cnn_dmp_out_ = params_->cnn_dmp.forward(cnn_dmp_in_, training);

    for (int s = 0; s < bs; ++s) {
        std::vector<LlrGrid> per_user;
        for (int k = 0; k < nk; ++k) {
            int bi = s * nk + k;
            LlrGrid g = LlrGrid::zeros(cfg_.n_f, cfg_.n_t, 1, cfg_.m_bits);
            for (int f = 0; f < cfg_.n_f; ++f)
                for (int t = 0; t < cfg_.n_t; ++t)
                    for (int m = 0; m < cfg_.m_bits; ++m)
                        g.at(f, t, 0, m) = cnn_dmp_out_.at(bi, f, t, m);
            per_user.push_back(std::move(g));
        }
        llr_out_[s] = std::move(per_user);
    }
    return llr_out_;
}

double MlPipeline::backward_loss(const std::vector<const RgSample*>& batch) {
    if (opts_.use_awgn_demapper || opts_.inject_e_per_re_user)
        throw std::runtime_error("MlPipeline::backward_loss: not supported in harness modes");
    const int bs = batch_size_;
    const int nk = cfg_.n_k;
    const int nm = cfg_.n_m;
    const int mb = cfg_.m_bits;
    const double ln2 = std::log(2.0);

    // Loss and demapper output gradient over data REs.
    double loss = 0.0;
    DiffTensor gout = DiffTensor::zeros(bs * nk, cfg_.n_f, cfg_.n_t, mb);
    for (int s = 0; s < bs; ++s)
        for (int k = 0; k < nk; ++k) {
            int bi = s * nk + k;
            const auto& bits = batch[s]->bits.at(k);
            for (std::size_t i = 0; i < data_res_.size(); ++i) {
                auto [f, t] = data_res_[i];
                for (int m = 0; m < mb; ++m) {
                    double l = cnn_dmp_out_.at(bi, f, t, m);
                    std::uint8_t b = bits[i * mb + m];
                    double z = b ? -l : l;
                    double sp = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
                    loss += sp;
                    gout.at(bi, f, t, m) = (sigmoid(l) - static_cast<double>(b)) / (bs * ln2);
                }
            }
        }
    loss /= bs * ln2;

    DiffTensor gin = params_->cnn_dmp.backward(gout);

    // Equalizer chain backward per sample.
    const double gamma = params_->gamma.value[0];
    double d_gamma = 0.0;
    DiffTensor gout_e = DiffTensor::zeros(bs * nk, cfg_.n_f, cfg_.n_t, 2);
    const MatC eye = MatC::Identity(nm, nm);

    for (int s = 0; s < bs; ++s) {
        SampleCache& c = cache_[s];
        const double sigma2 = c.sample->sigma2;
        const std::size_t n_groups = partition_.groups.size();
        std::vector<MatC> g_w(n_groups, MatC::Zero(nk, nm));
        std::vector<MatC> g_e(c.e_per_re.size(), MatC::Zero(nm, nm));

        for (int f = 0; f < cfg_.n_f; ++f)
            for (int t = 0; t < cfg_.n_t; ++t) {
                std::size_t i = static_cast<std::size_t>(f) * cfg_.n_t + t;
                int g = partition_.group_of(f, t);
                const MatC& w = c.w_per_group[g];
                const MatC& h = c.h_hat.h[i];
                const MatC& e = c.e_per_re[i];
                const VecC& y = c.sample->y.y[i];
                for (int k = 0; k < nk; ++k) {
                    int bi = s * nk + k;
                    double g_re = gin.at(bi, f, t, 4);
                    double g_im = gin.at(bi, f, t, 5);
                    double rho2 = c.eq.rho2[i][k];
                    double g_rho = gin.at(bi, f, t, 3) * 10.0 / (rho2 * kLn10);
                    if (g_re == 0.0 && g_im == 0.0 && g_rho == 0.0) continue;

                    VecC wk = w.row(k).adjoint();
                    cd d = (w.row(k) * h.col(k))(0);
                    cd xhat = c.eq.x_hat[i][k];
                    MatC h_mk(nm, nk - 1);
                    for (int kk = 0, col = 0; kk < nk; ++kk)
                        if (kk != k) h_mk.col(col++) = h.col(kk);
                    MatC mk = h_mk * h_mk.adjoint() + e + sigma2 * eye;
                    VecC mw = mk * wk;
                    double num = std::real((wk.adjoint() * mw)(0));
                    double den = std::norm(d);

                    cd g_xhat(g_re, g_im);
                    cd g_u = g_xhat / std::conj(d);
                    cd g_d = -g_xhat * std::conj(xhat) / std::conj(d);
                    double g_num = g_rho / den;
                    double g_den = -g_rho * num / (den * den);
                    g_d += 2.0 * g_den * d;

                    // rho2 numerator: cotangents on w and on E.
                    VecC g_wvec = 2.0 * g_num * mw;
                    g_e[i].noalias() += g_num * (wk * wk.adjoint());

                    // Row-k cotangent on W from u = W_k y, d = W_k h_k, w = W_k^H.
                    for (int m = 0; m < nm; ++m)
                        g_w[g](k, m) += g_u * std::conj(y[m]) + g_d * std::conj(h(m, k)) +
                                        std::conj(g_wvec[m]);
                }
            }

        // W = B^H A^{-1}: propagate to A, then to every E in the group.
        for (std::size_t g = 0; g < n_groups; ++g) {
            MatC g_c = c.b_sum[g] * g_w[g];               // cotangent on A^{-1}
            MatC g_a = -c.a_inv[g] * g_c * c.a_inv[g];    // A Hermitian
            const auto& r = partition_.groups[g];
            for (int f = r.f_begin; f < r.f_end; ++f)
                for (int t = r.t_begin; t < r.t_end; ++t)
                    g_e[static_cast<std::size_t>(f) * cfg_.n_t + t] += g_a;
        }

        // Power-decay model backward into (alpha, beta) maps and gamma.
        for (int f = 0; f < cfg_.n_f; ++f)
            for (int t = 0; t < cfg_.n_t; ++t) {
                std::size_t i = static_cast<std::size_t>(f) * cfg_.n_t + t;
                for (int k = 0; k < nk; ++k) {
                    int bi = s * nk + k;
                    double a = cnn_e_out_.at(bi, f, t, 0);
                    double b = cnn_e_out_.at(bi, f, t, 1);
                    double da = 0.0, db = 0.0;
                    decay_covariance_backward(a, b, gamma, g_e[i], &da, &db, &d_gamma);
                    gout_e.at(bi, f, t, 0) = da;
                    gout_e.at(bi, f, t, 1) = db;
                }
            }
    }
    params_->gamma.grad[0] += d_gamma;

    DiffTensor gin_e = params_->cnn_e.backward(gout_e);

    if (cnn_l_used_) {
        DiffTensor gout_l = DiffTensor::zeros(bs * nk, 1, 1, 1);
        for (int bi = 0; bi < bs * nk; ++bi) {
            double dl = 0.0;
            for (int f = 0; f < cfg_.n_f; ++f)
                for (int t = 0; t < cfg_.n_t; ++t) dl += gin_e.at(bi, f, t, 3);
            gout_l.v[bi] = dl;
        }
        params_->cnn_l.backward(gout_l);
    }
    return loss;
}

std::vector<LlrGrid> ml_receive(const GridConfig& cfg, const PilotPattern& pattern,
                                const ReGroupPartition& partition, const PilotCovariance& cov,
                                const Constellation& constellation, MlReceiverParams& params,
                                const ReceivedGrid& y, double sigma2, double snr_db,
                                const MlRxOptions& opts) {
    RgSample sample;
    sample.y = y;
    sample.sigma2 = sigma2;
    sample.snr_db = snr_db;
    MlPipeline pipe(cfg, pattern, partition, constellation, &params, opts);
    auto out = pipe.forward({&sample}, cov, false);
    for (auto& g : out[0])
        for (auto& v : g.llr) v = std::clamp(v, -kLlrClip, kLlrClip);
    return std::move(out[0]);
}

TrainResult train(const std::vector<RgSample>& dataset, const GridConfig& cfg,
                  const PilotPattern& pattern, const ReGroupPartition& partition,
                  const PilotCovariance& cov, const Constellation& constellation,
                  MlReceiverParams& params, const TrainConfig& tc, InterpMode interp) {
    if (dataset.empty()) throw DimensionError("train: empty dataset");
    MlRxOptions opts;
    opts.interp = interp;
    MlPipeline pipe(cfg, pattern, partition, constellation, &params, opts);
    auto trainable = params.trainable();
    AdamState adam;
    adam.lr = tc.lr;
    adam.init(trainable);
    auto rng = make_rng(tc.seed);
    std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);

    TrainResult res;
    double initial_loss = 0.0;
    int high_loss_streak = 0;
    for (int step = 0; step < tc.steps; ++step) {
        std::vector<const RgSample*> batch;
        if (static_cast<int>(dataset.size()) == tc.batch_size) {
            for (const auto& s : dataset) batch.push_back(&s);
        } else {
            for (int b = 0; b < tc.batch_size; ++b) batch.push_back(&dataset[pick(rng)]);
        }
        for (auto* p : trainable) p->zero_grad();
        pipe.forward(batch, cov, true);
        double loss = pipe.backward_loss(batch);
        adam_step(trainable, adam);
        res.loss_trace.push_back(loss);
        if (step == 0) initial_loss = loss;
        if (!std::isfinite(loss) || loss > 10.0 * initial_loss) {
            if (++high_loss_streak >= 100 || !std::isfinite(loss)) {
                res.diverged = true;
                break;
            }
        } else {
            high_loss_streak = 0;
        }
    }
    return res;
}

double achievable_rate_estimate(double loss, int n_data_re, int m_bits, int n_k) {
    double total = static_cast<double>(n_data_re) * m_bits;
    return total * (1.0 - loss / (total * n_k));
}

}  // namespace mumimo
