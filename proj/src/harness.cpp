#include "mumimo/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace mumimo {

namespace {

using nlohmann::json;

constexpr double kSpeedOfLight = 299792458.0;

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a_str(const std::string& s) { return fnv1a(s.data(), s.size()); }

void ensure_dir(const std::string& dir) {
    if (!dir.empty()) std::filesystem::create_directories(dir);
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

double doppler_hz_for_speed(double speed_kmh, double center_freq_hz) {
    return (speed_kmh / 3.6) * center_freq_hz / kSpeedOfLight;
}

void ScenarioConfig::validate() const {
    grid.validate();
    chan.validate();
    if (snr_db.empty()) throw DimensionError("scenario: SNR list empty");
    if (speeds.empty()) throw DimensionError("scenario: speed range list empty");
    for (const auto& r : speeds)
        if (r.lo_kmh > r.hi_kmh || r.lo_kmh < 0.0)
            throw DimensionError("scenario: invalid speed range");
    if (group_f < 1 || group_t < 1 || grid.n_f % group_f != 0 || grid.n_t % group_t != 0)
        throw DimensionError("scenario: group sizes must divide the grid");
    if (receiver != "baseline" && receiver != "ml" && receiver != "perfect_csi")
        throw DimensionError("scenario: unknown receiver '" + receiver + "'");
    if (train.n_rgs < 1 || train.tc.batch_size < 1 || train.tc.steps < 0)
        throw DimensionError("scenario: invalid training spec");
    if (eval.target_codeword_errors < 1 || eval.max_frames < 1)
        throw DimensionError("scenario: invalid eval spec");
    if (cov_samples < 1000) throw DimensionError("scenario: cov_samples must be >= 1000");
}

std::uint64_t ScenarioConfig::param_hash() const {
    std::ostringstream os;
    os << grid.n_f << ',' << grid.n_t << ',' << grid.n_k << ',' << grid.n_m << ','
       << grid.m_bits << ',' << grid.subcarrier_spacing_hz << ',' << grid.center_freq_hz << '|'
       << (pattern == PatternKind::OneP ? "1P" : "2P") << '|';
    for (int s : pilot_symbols_1based) os << s << ';';
    os << '|' << chan.n_taps << ',' << chan.delay_spread_s << ',' << chan.angle_spread << ','
       << chan.n_sinusoids << '|';
    for (const auto& r : speeds) os << r.lo_kmh << '-' << r.hi_kmh << ';';
    os << '|' << seed;
    return fnv1a_str(os.str());
}

ScenarioConfig ScenarioConfig::from_json_text(const std::string& text) {
    json j = json::parse(text);
    ScenarioConfig c;
    if (j.contains("grid")) {
        const auto& g = j["grid"];
        c.grid.n_f = g.value("n_f", c.grid.n_f);
        c.grid.n_t = g.value("n_t", c.grid.n_t);
        c.grid.n_k = g.value("n_k", c.grid.n_k);
        c.grid.n_m = g.value("n_m", c.grid.n_m);
        c.grid.m_bits = g.value("m_bits", c.grid.m_bits);
        c.grid.subcarrier_spacing_hz = g.value("subcarrier_spacing_hz", c.grid.subcarrier_spacing_hz);
        c.grid.center_freq_hz = g.value("center_freq_hz", c.grid.center_freq_hz);
    }
    std::string pat = j.value("pattern", std::string("2P"));
    if (pat == "1P")
        c.pattern = PatternKind::OneP;
    else if (pat == "2P")
        c.pattern = PatternKind::TwoP;
    else
        throw DimensionError("scenario: pattern must be 1P or 2P");
    if (j.contains("pilot_symbols"))
        c.pilot_symbols_1based = j["pilot_symbols"].get<std::vector<int>>();
    std::string interp = j.value("interp", std::string("freq_nire"));
    if (interp == "freq_nire")
        c.interp = InterpMode::FreqNire;
    else if (interp == "freq_time")
        c.interp = InterpMode::FreqTime;
    else
        throw DimensionError("scenario: interp must be freq_nire or freq_time");
    if (j.contains("speeds_kmh")) {
        c.speeds.clear();
        for (const auto& r : j["speeds_kmh"])
            c.speeds.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
    }
    if (j.contains("snr_db")) c.snr_db = j["snr_db"].get<std::vector<double>>();
    if (j.contains("channel")) {
        const auto& ch = j["channel"];
        c.chan.n_taps = ch.value("n_taps", c.chan.n_taps);
        if (ch.contains("delay_spread_ns"))
            c.chan.delay_spread_s = ch["delay_spread_ns"].get<double>() * 1e-9;
        c.chan.angle_spread = ch.value("angle_spread", c.chan.angle_spread);
        c.chan.n_sinusoids = ch.value("n_sinusoids", c.chan.n_sinusoids);
    }
    if (j.contains("group")) {
        c.group_f = j["group"].value("f", c.group_f);
        c.group_t = j["group"].value("t", c.group_t);
    }
    c.receiver = j.value("receiver", c.receiver);
    if (j.contains("train")) {
        const auto& t = j["train"];
        c.train.n_rgs = t.value("n_rgs", c.train.n_rgs);
        c.train.tc.steps = t.value("steps", c.train.tc.steps);
        c.train.tc.batch_size = t.value("batch_size", c.train.tc.batch_size);
        c.train.tc.lr = t.value("lr", c.train.tc.lr);
        c.train.tc.seed = t.value("seed", c.train.tc.seed);
    }
    if (j.contains("eval")) {
        const auto& e = j["eval"];
        c.eval.target_codeword_errors =
            e.value("target_codeword_errors", c.eval.target_codeword_errors);
        c.eval.max_frames = e.value("max_frames", c.eval.max_frames);
    }
    c.cov_samples = j.value("cov_samples", c.cov_samples);
    c.mc_e_samples = j.value("mc_e_samples", c.mc_e_samples);
    c.cache_dir = j.value("cache_dir", c.cache_dir);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

ScenarioConfig ScenarioConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

PilotPattern scenario_pattern(const ScenarioConfig& cfg) {
    return build_pilot_pattern(cfg.grid, cfg.pattern, cfg.pilot_symbols_1based);
}

ReGroupPartition scenario_partition(const ScenarioConfig& cfg, const PilotPattern& pattern) {
    return build_partition(cfg.grid, pattern, cfg.group_f, cfg.group_t);
}

ChannelTensor draw_channel(const ScenarioConfig& cfg, std::uint64_t seed, std::uint64_t index,
                           double* speed_kmh_out, int* range_index_out) {
    const int r = static_cast<int>(index % cfg.speeds.size());
    auto rng = make_rng(split_seed(seed, index));
    std::uniform_real_distribution<double> u(cfg.speeds[r].lo_kmh, cfg.speeds[r].hi_kmh);
    double speed = u(rng);
    if (speed_kmh_out) *speed_kmh_out = speed;
    if (range_index_out) *range_index_out = r;
    ChannelModelParams p = cfg.chan;
    p.doppler_hz = doppler_hz_for_speed(speed, cfg.grid.center_freq_hz);
    p.seed = split_seed(seed, (index << 1) ^ 0x5EEDULL);
    return generate_channel(cfg.grid, p);
}

PilotCovariance scenario_pilot_covariance(const ScenarioConfig& cfg) {
    PilotPattern pattern = scenario_pattern(cfg);
    ensure_dir(cfg.cache_dir);
    std::uint64_t chan_seed = split_seed(cfg.seed, 0xC0FULL);
    ChannelSampler sampler = [&cfg, chan_seed](std::uint64_t i) {
        return draw_channel(cfg, chan_seed, i);
    };
    std::string path = cfg.cache_dir.empty()
                           ? std::string()
                           : cfg.cache_dir + "/pilot_cov_" + std::to_string(cfg.param_hash()) +
                                 ".bin";
    return estimate_pilot_covariance(cfg.grid, pattern, sampler, cfg.cov_samples, path,
                                     cfg.param_hash());
}

Dataset generate_dataset(const ScenarioConfig& cfg, int n_rgs, std::uint64_t seed) {
    if (n_rgs < 1) throw DimensionError("generate_dataset: n_rgs must be >= 1");
    PilotPattern pattern = scenario_pattern(cfg);
    Constellation constellation = build_constellation(cfg.grid.m_bits);
    auto data_res = data_re_set(cfg.grid, pattern);
    const std::size_t n_bits = data_res.size() * cfg.grid.m_bits;
    const double snr_lo = *std::min_element(cfg.snr_db.begin(), cfg.snr_db.end());
    const double snr_hi = *std::max_element(cfg.snr_db.begin(), cfg.snr_db.end());

    Dataset ds;
    ds.samples.reserve(n_rgs);
    std::uint64_t chan_seed = split_seed(seed, 0xD5ULL);
    for (int i = 0; i < n_rgs; ++i) {
        double speed = 0.0;
        int range = 0;
        ChannelTensor h = draw_channel(cfg, chan_seed, static_cast<std::uint64_t>(i), &speed,
                                       &range);
        auto rng = make_rng(split_seed(seed, 0xB175ULL + i));
        std::vector<std::vector<std::uint8_t>> bits(cfg.grid.n_k);
        std::uniform_int_distribution<int> coin(0, 1);
        for (int k = 0; k < cfg.grid.n_k; ++k) {
            bits[k].resize(n_bits);
            for (auto& b : bits[k]) b = static_cast<std::uint8_t>(coin(rng));
        }
        std::uniform_real_distribution<double> usnr(snr_lo, snr_hi);
        double snr = (snr_lo == snr_hi) ? snr_lo : usnr(rng);
        NoiseSpec noise = NoiseSpec::from_snr_db(snr);
        TxGrid tx = assemble_tx_grid(cfg.grid, pattern, constellation, bits);
        RgSample s;
        s.y = apply_channel(h, tx.x, noise, split_seed(seed, 0x401500ULL + i));
        s.sigma2 = noise.sigma2;
        s.snr_db = noise.snr_db;
        s.bits = std::move(bits);
        ds.samples.push_back(std::move(s));
        ds.speeds_kmh.push_back(speed);
        ds.range_index.push_back(range);
    }
    return ds;
}

std::uint64_t dataset_hash(const Dataset& ds) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& s : ds.samples) {
        h = fnv1a(&s.sigma2, sizeof(double), h);
        h = fnv1a(&s.snr_db, sizeof(double), h);
        for (const auto& y : s.y.y) h = fnv1a(y.data(), sizeof(cd) * y.size(), h);
        for (const auto& b : s.bits) h = fnv1a(b.data(), b.size(), h);
    }
    return h;
}

std::vector<MatC> monte_carlo_error_cov(const ScenarioConfig& cfg, const PilotPattern& pattern,
                                        bool use_true_pilots, const PilotCovariance* cov,
                                        double sigma2, int n_samples, std::uint64_t seed) {
    if (!use_true_pilots && cov == nullptr)
        throw DimensionError("monte_carlo_error_cov: LMMSE mode requires a pilot covariance");
    const int nm = cfg.grid.n_m;
    const int nk = cfg.grid.n_k;
    const int n_p = pattern.n_pf * pattern.n_pt;
    const std::size_t n_re = static_cast<std::size_t>(cfg.grid.num_res());
    std::vector<MatC> acc(n_re, MatC::Zero(nm, nm));
    std::uint64_t chan_seed = split_seed(seed, 0xABCDULL);
    auto noise_rng = make_rng(split_seed(seed, 0xF00FULL));
    const double sigma = std::sqrt(sigma2);

    for (int s = 0; s < n_samples; ++s) {
        ChannelTensor h = draw_channel(cfg, chan_seed, static_cast<std::uint64_t>(s));
        std::vector<MatC> pilot_est(nk);
        for (int k = 0; k < nk; ++k) {
            MatC hp(n_p, nm);
            for (int p = 0; p < n_p; ++p) {
                auto [f, t] = pattern.pilot_sets[k][p];
                hp.row(p) = h.at(f, t).col(k).transpose();
            }
            if (use_true_pilots) {
                pilot_est[k] = hp;
            } else {
                VecC yp(n_p * nm);
                for (int p = 0; p < n_p; ++p)
                    for (int m = 0; m < nm; ++m)
                        yp[p * nm + m] = hp(p, m) + sigma * randn_c(noise_rng);
                VecC est = lmmse_pilot_estimate(yp, *cov, sigma2);
                MatC em(n_p, nm);
                for (int p = 0; p < n_p; ++p)
                    em.row(p) = est.segment(static_cast<Eigen::Index>(p) * nm, nm).transpose();
                pilot_est[k] = em;
            }
        }
        ChannelTensor h_hat = interpolate(cfg.grid, pattern, pilot_est, cfg.interp);
        for (std::size_t i = 0; i < n_re; ++i) {
            for (int k = 0; k < nk; ++k) {
                VecC err = h.h[i].col(k) - h_hat.h[i].col(k);
                acc[i].noalias() += err * err.adjoint();
            }
        }
    }
    for (auto& m : acc) m /= static_cast<double>(n_samples);
    return acc;
}

namespace {

constexpr char kPerfectCsiMagic[4] = {'M', 'M', 'P', 'E'};

bool load_perfect_csi_cache(const std::string& path, std::uint64_t hash, std::size_t n_re,
                            int n_m, std::vector<MatC>* out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    char magic[4];
    std::uint64_t fhash = 0;
    std::uint64_t fn_re = 0, fn_m = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&fhash), 8);
    in.read(reinterpret_cast<char*>(&fn_re), 8);
    in.read(reinterpret_cast<char*>(&fn_m), 8);
    if (!in || std::memcmp(magic, kPerfectCsiMagic, 4) != 0 || fhash != hash ||
        fn_re != n_re || fn_m != static_cast<std::uint64_t>(n_m))
        return false;
    out->assign(n_re, MatC::Zero(n_m, n_m));
    for (auto& m : *out) {
        in.read(reinterpret_cast<char*>(m.data()), sizeof(cd) * m.size());
        if (!in) return false;
    }
    return true;
}

void save_perfect_csi_cache(const std::string& path, std::uint64_t hash,
                            const std::vector<MatC>& e) {
    std::ofstream out(path, std::ios::binary);
    if (!out) return;
    out.write(kPerfectCsiMagic, 4);
    std::uint64_t n_re = e.size(), n_m = e.empty() ? 0 : e[0].rows();
    out.write(reinterpret_cast<const char*>(&hash), 8);
    out.write(reinterpret_cast<const char*>(&n_re), 8);
    out.write(reinterpret_cast<const char*>(&n_m), 8);
    for (const auto& m : e) out.write(reinterpret_cast<const char*>(m.data()), sizeof(cd) * m.size());
}

}  // namespace

std::vector<MatC> perfect_csi_error_cov(const ScenarioConfig& cfg) {
    PilotPattern pattern = scenario_pattern(cfg);
    const std::size_t n_re = static_cast<std::size_t>(cfg.grid.num_res());
    std::uint64_t hash = split_seed(cfg.param_hash(),
                                    static_cast<std::uint64_t>(cfg.mc_e_samples) ^
                                        (cfg.interp == InterpMode::FreqTime ? 1u : 0u));
    std::string path;
    if (!cfg.cache_dir.empty()) {
        ensure_dir(cfg.cache_dir);
        path = cfg.cache_dir + "/perfect_csi_e_" + std::to_string(hash) + ".bin";
        std::vector<MatC> cached;
        if (load_perfect_csi_cache(path, hash, n_re, cfg.grid.n_m, &cached)) return cached;
    }
    std::vector<MatC> e = monte_carlo_error_cov(cfg, pattern, /*use_true_pilots=*/true, nullptr,
                                                0.0, cfg.mc_e_samples,
                                                split_seed(cfg.seed, 0xE0EULL));
    if (!path.empty()) save_perfect_csi_cache(path, hash, e);
    return e;
}

int rgs_per_frame(const ScenarioConfig& cfg, const PilotPattern& pattern, int codeword_len) {
    const int bits_per_rg =
        static_cast<int>(data_re_set(cfg.grid, pattern).size()) * cfg.grid.m_bits;
    const long long l = std::lcm(static_cast<long long>(bits_per_rg),
                                 static_cast<long long>(codeword_len));
    return static_cast<int>(l / bits_per_rg);
}

namespace {

// Receive one RG and return clipped per-user data-RE LLR streams appended to
// out[k] (f-major over D, m fastest).
void receive_rg_llrs(const ScenarioConfig& cfg, const PilotPattern& pattern,
                     const ReGroupPartition& partition, const PilotCovariance& cov,
                     const Constellation& constellation,
                     const std::vector<std::pair<int, int>>& data_res,
                     const std::string& receiver, MlReceiverParams* ml,
                     const std::vector<MatC>* perfect_e, const ChannelTensor& h,
                     const ReceivedGrid& y, const NoiseSpec& noise,
                     std::vector<std::vector<double>>* out) {
    const int nk = cfg.grid.n_k;
    const int mb = cfg.grid.m_bits;
    if (receiver == "ml") {
        MlRxOptions opts;
        opts.interp = cfg.interp;
        auto llrs = ml_receive(cfg.grid, pattern, partition, cov, constellation, *ml, y,
                               noise.sigma2, noise.snr_db, opts);
        for (int k = 0; k < nk; ++k)
            for (auto [f, t] : data_res)
                for (int m = 0; m < mb; ++m) (*out)[k].push_back(llrs[k].at(f, t, 0, m));
        return;
    }
    ConvRxOptions opts;
    opts.interp = cfg.interp;
    opts.demap = DemapMethod::Exact;
    if (receiver == "perfect_csi") {
        const int n_p = pattern.n_pf * pattern.n_pt;
        std::vector<MatC> true_pilots(nk);
        for (int k = 0; k < nk; ++k) {
            MatC hp(n_p, cfg.grid.n_m);
            for (int p = 0; p < n_p; ++p) {
                auto [f, t] = pattern.pilot_sets[k][p];
                hp.row(p) = h.at(f, t).col(k).transpose();
            }
            true_pilots[k] = hp;
        }
        opts.pilot_estimates_override = std::move(true_pilots);
        opts.e_per_re_override = *perfect_e;
    }
    ConvRxOutput rx = conventional_receive(cfg.grid, pattern, partition, cov, y, noise.sigma2,
                                           constellation, opts);
    for (int k = 0; k < nk; ++k)
        for (auto [f, t] : data_res)
            for (int m = 0; m < mb; ++m) (*out)[k].push_back(rx.llr.at(f, t, k, m));
}

}  // namespace

BerReport run_ber_sweep(const ScenarioConfig& cfg, const std::string& receiver,
                        MlReceiverParams* ml) {
    if (receiver == "ml" && ml == nullptr)
        throw std::runtime_error("run_ber_sweep: ml receiver requires trained parameters");
    PilotPattern pattern = scenario_pattern(cfg);
    ReGroupPartition partition = scenario_partition(cfg, pattern);
    Constellation constellation = build_constellation(cfg.grid.m_bits);
    auto data_res = data_re_set(cfg.grid, pattern);
    const LdpcCode& code = LdpcCode::wifi_n1296_r12();
    PilotCovariance cov = scenario_pilot_covariance(cfg);
    std::vector<MatC> perfect_e;
    if (receiver == "perfect_csi") perfect_e = perfect_csi_error_cov(cfg);

    const int nk = cfg.grid.n_k;
    const int mb = cfg.grid.m_bits;
    const int bits_per_rg = static_cast<int>(data_res.size()) * mb;
    const int n_rg_frame = rgs_per_frame(cfg, pattern, code.n());
    const int cw_per_user = n_rg_frame * bits_per_rg / code.n();
    const std::uint64_t chan_seed = split_seed(cfg.seed, 0xCAFEULL);

    BerReport report;
    report.receiver = receiver;
    report.seed = cfg.seed;
    report.config_hash = cfg.param_hash();

    for (std::size_t si = 0; si < cfg.snr_db.size(); ++si) {
        NoiseSpec noise = NoiseSpec::from_snr_db(cfg.snr_db[si]);
        BerPoint pt;
        pt.snr_db = cfg.snr_db[si];
        for (int frame = 0; frame < cfg.eval.max_frames &&
                            pt.codeword_errors < cfg.eval.target_codeword_errors;
             ++frame) {
            std::uint64_t frame_seed = split_seed(cfg.seed, 0xBEEF00ULL + frame);
            // Transmit side: per-user info bits -> codewords -> bit stream.
            std::vector<std::vector<std::uint8_t>> info(nk), coded(nk);
            for (int k = 0; k < nk; ++k) {
                auto rng = make_rng(split_seed(frame_seed, 0x10ULL + k));
                std::uniform_int_distribution<int> coin(0, 1);
                for (int c = 0; c < cw_per_user; ++c) {
                    std::vector<std::uint8_t> ib(code.k_info());
                    for (auto& b : ib) b = static_cast<std::uint8_t>(coin(rng));
                    auto cw = code.encode(ib);
                    info[k].insert(info[k].end(), ib.begin(), ib.end());
                    coded[k].insert(coded[k].end(), cw.begin(), cw.end());
                }
            }
            // Channel + receiver per RG; collect LLR streams.
            std::vector<std::vector<double>> llr_stream(nk);
            for (int j = 0; j < n_rg_frame; ++j) {
                std::vector<std::vector<std::uint8_t>> rg_bits(nk);
                for (int k = 0; k < nk; ++k)
                    rg_bits[k].assign(coded[k].begin() + static_cast<long>(j) * bits_per_rg,
                                      coded[k].begin() + static_cast<long>(j + 1) * bits_per_rg);
                TxGrid tx = assemble_tx_grid(cfg.grid, pattern, constellation, rg_bits);
                std::uint64_t rg_index =
                    static_cast<std::uint64_t>(frame) * n_rg_frame + j;
                ChannelTensor h = draw_channel(cfg, chan_seed, rg_index);
                ReceivedGrid y = apply_channel(h, tx.x, noise,
                                               split_seed(frame_seed, 0x99ULL + j));
                receive_rg_llrs(cfg, pattern, partition, cov, constellation, data_res, receiver,
                                ml, &perfect_e, h, y, noise, &llr_stream);
            }
            // Uncoded + coded error counting.
            for (int k = 0; k < nk; ++k) {
                for (std::size_t b = 0; b < coded[k].size(); ++b) {
                    int hard = llr_stream[k][b] > 0.0 ? 1 : 0;
                    pt.uncoded_bits += 1;
                    pt.uncoded_errors += (hard != coded[k][b]) ? 1 : 0;
                }
                for (int c = 0; c < cw_per_user; ++c) {
                    std::vector<double> cw_llr(
                        llr_stream[k].begin() + static_cast<long>(c) * code.n(),
                        llr_stream[k].begin() + static_cast<long>(c + 1) * code.n());
                    for (auto& l : cw_llr) l = std::clamp(l, -kLlrClip, kLlrClip);
                    auto dec = code.decode(cw_llr, 40);
                    auto dec_info = code.extract_info(dec.bits);
                    bool cw_err = false;
                    for (int b = 0; b < code.k_info(); ++b) {
                        int tx_bit = info[k][static_cast<std::size_t>(c) * code.k_info() + b];
                        pt.bits += 1;
                        if (dec_info[b] != tx_bit) {
                            pt.errors += 1;
                            cw_err = true;
                        }
                    }
                    if (cw_err) pt.codeword_errors += 1;
                }
            }
            pt.frames += 1;
        }
        pt.coded_ber = pt.bits > 0 ? static_cast<double>(pt.errors) / pt.bits : 0.0;
        pt.uncoded_ber =
            pt.uncoded_bits > 0 ? static_cast<double>(pt.uncoded_errors) / pt.uncoded_bits : 0.0;
        if (pt.bits > 0)
            pt.ci95 = 1.96 * std::sqrt(pt.coded_ber * (1.0 - pt.coded_ber) / pt.bits);
        report.points.push_back(pt);
    }
    return report;
}

void write_ber_csv(const std::string& path, const BerReport& report) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write CSV: " + path);
    out << "snr_db,coded_ber,uncoded_ber,bits,errors,ci95\n";
    char buf[256];
    for (const auto& p : report.points) {
        std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.10g,%lld,%lld,%.10g\n", p.snr_db,
                      p.coded_ber, p.uncoded_ber, p.bits, p.errors, p.ci95);
        out << buf;
    }
}

BerReport read_ber_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read CSV: " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("snr_db,", 0) != 0)
        throw std::runtime_error("bad CSV header in " + path);
    BerReport r;
    r.receiver = std::filesystem::path(path).stem().string();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        BerPoint p;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream is(line);
        is >> p.snr_db >> p.coded_ber >> p.uncoded_ber >> p.bits >> p.errors >> p.ci95;
        if (is.fail()) throw std::runtime_error("bad CSV row in " + path);
        r.points.push_back(p);
    }
    return r;
}

void write_ber_svg(const std::string& path, const std::vector<BerReport>& reports) {
    double snr_lo = 1e300, snr_hi = -1e300, ber_lo = 1.0, ber_hi = 1e-300;
    for (const auto& r : reports)
        for (const auto& p : r.points) {
            snr_lo = std::min(snr_lo, p.snr_db);
            snr_hi = std::max(snr_hi, p.snr_db);
            double b = std::max(p.coded_ber, 1e-7);
            ber_lo = std::min(ber_lo, b);
            ber_hi = std::max(ber_hi, b);
        }
    if (reports.empty() || snr_lo > snr_hi) throw std::runtime_error("no curves to plot");
    if (snr_hi == snr_lo) snr_hi = snr_lo + 1.0;
    double ly_lo = std::floor(std::log10(ber_lo));
    double ly_hi = std::ceil(std::log10(std::max(ber_hi, ber_lo * 1.0001)));
    if (ly_hi == ly_lo) ly_hi = ly_lo + 1.0;

    const double w = 640, hgt = 480, ml = 70, mr = 150, mt = 30, mb = 50;
    auto xmap = [&](double snr) { return ml + (snr - snr_lo) / (snr_hi - snr_lo) * (w - ml - mr); };
    auto ymap = [&](double ber) {
        double ly = std::log10(std::max(ber, 1e-7));
        return mt + (ly_hi - ly) / (ly_hi - ly_lo) * (hgt - mt - mb);
    };
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write SVG: " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << hgt
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    // Grid lines and axis labels.
    for (int d = static_cast<int>(ly_lo); d <= static_cast<int>(ly_hi); ++d) {
        double y = ymap(std::pow(10.0, d));
        out << "<line x1=\"" << ml << "\" y1=\"" << y << "\" x2=\"" << w - mr << "\" y2=\"" << y
            << "\" stroke=\"#ddd\"/>\n";
        out << "<text x=\"" << ml - 8 << "\" y=\"" << y + 4
            << "\" text-anchor=\"end\">1e" << d << "</text>\n";
    }
    int n_ticks = 6;
    for (int i = 0; i <= n_ticks; ++i) {
        double snr = snr_lo + (snr_hi - snr_lo) * i / n_ticks;
        double x = xmap(snr);
        out << "<line x1=\"" << x << "\" y1=\"" << mt << "\" x2=\"" << x << "\" y2=\""
            << hgt - mb << "\" stroke=\"#eee\"/>\n";
        char lbl[32];
        std::snprintf(lbl, sizeof(lbl), "%.3g", snr);
        out << "<text x=\"" << x << "\" y=\"" << hgt - mb + 18 << "\" text-anchor=\"middle\">"
            << lbl << "</text>\n";
    }
    out << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << hgt - 12
        << "\" text-anchor=\"middle\">SNR (dB)</text>\n";
    out << "<text x=\"16\" y=\"" << (mt + hgt - mb) / 2
        << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << (mt + hgt - mb) / 2
        << ")\">coded BER</text>\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const char* color = colors[i % 6];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (const auto& p : reports[i].points) out << xmap(p.snr_db) << ',' << ymap(p.coded_ber) << ' ';
        out << "\"/>\n";
        for (const auto& p : reports[i].points)
            out << "<circle cx=\"" << xmap(p.snr_db) << "\" cy=\"" << ymap(p.coded_ber)
                << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        out << "<text x=\"" << w - mr + 10 << "\" y=\"" << mt + 16 + 18 * i << "\" fill=\""
            << color << "\">" << reports[i].receiver << "</text>\n";
    }
    out << "</svg>\n";
}

LossReport evaluate_loss(const ScenarioConfig& cfg, const Dataset& ds,
                         const std::string& receiver, MlReceiverParams* ml) {
    if (receiver == "ml" && ml == nullptr)
        throw std::runtime_error("evaluate_loss: ml receiver requires trained parameters");
    if (receiver == "perfect_csi")
        throw std::runtime_error("evaluate_loss: perfect_csi needs per-sample channels; use sweep");
    PilotPattern pattern = scenario_pattern(cfg);
    ReGroupPartition partition = scenario_partition(cfg, pattern);
    Constellation constellation = build_constellation(cfg.grid.m_bits);
    auto data_res = data_re_set(cfg.grid, pattern);
    PilotCovariance cov = scenario_pilot_covariance(cfg);

    const int nk = cfg.grid.n_k;
    const int mb = cfg.grid.m_bits;
    const double ln2 = std::log(2.0);
    double loss = 0.0;
    for (const auto& s : ds.samples) {
        NoiseSpec noise;
        noise.sigma2 = s.sigma2;
        noise.snr_db = s.snr_db;
        std::vector<std::vector<double>> llrs(nk);
        ChannelTensor dummy;  // true channel only needed by perfect_csi
        receive_rg_llrs(cfg, pattern, partition, cov, constellation, data_res, receiver, ml,
                        nullptr, dummy, s.y, noise, &llrs);
        for (int k = 0; k < nk; ++k)
            for (std::size_t i = 0; i < data_res.size(); ++i)
                for (int m = 0; m < mb; ++m) {
                    double l = llrs[k][i * mb + m];
                    double z = s.bits[k][i * mb + m] ? -l : l;
                    double sp = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
                    loss += sp / ln2;
                }
    }
    LossReport r;
    r.loss = loss / static_cast<double>(ds.samples.size());
    r.rate_per_user = achievable_rate_estimate(r.loss, static_cast<int>(data_res.size()), mb, nk);
    return r;
}

}  // namespace mumimo
