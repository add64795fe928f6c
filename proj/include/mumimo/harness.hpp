#ifndef MUMIMO_HARNESS_HPP
#define MUMIMO_HARNESS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "mumimo/chan.hpp"
#include "mumimo/fec.hpp"
#include "mumimo/grid.hpp"
#include "mumimo/rxconv.hpp"
#include "mumimo/rxml.hpp"
#include "mumimo/txchain.hpp"

namespace mumimo {

struct SpeedRange {
    double lo_kmh = 0.0;
    double hi_kmh = 0.0;
};

// Maximum Doppler shift for a terminal speed (km/h) at the carrier frequency.
double doppler_hz_for_speed(double speed_kmh, double center_freq_hz);

struct TrainSpec {
    int n_rgs = 300;
    TrainConfig tc;
};

struct EvalSpec {
    int target_codeword_errors = 100;
    int max_frames = 200;
};

// One experiment: grid, pilot pattern, channel statistics, SNR sweep, receiver
// selection, training and evaluation budgets, cache/output locations.
struct ScenarioConfig {
    GridConfig grid;
    PatternKind pattern = PatternKind::TwoP;
    std::vector<int> pilot_symbols_1based;  // empty -> defaults
    InterpMode interp = InterpMode::FreqNire;
    std::vector<SpeedRange> speeds{{2.0, 15.0}};
    std::vector<double> snr_db{4.0, 7.0, 10.0};
    ChannelModelParams chan;  // doppler_hz/seed filled per draw
    int group_f = 4, group_t = 7;
    std::string receiver = "baseline";  // baseline | ml | perfect_csi
    TrainSpec train;
    EvalSpec eval;
    int cov_samples = 1000;
    int mc_e_samples = 10000;
    std::string cache_dir = "cache";
    std::string out_dir = ".";
    std::uint64_t seed = 1;

    void validate() const;
    std::uint64_t param_hash() const;  // grid/pattern/channel/speed hash for caches

    static ScenarioConfig from_json_file(const std::string& path);
    static ScenarioConfig from_json_text(const std::string& text);
};

PilotPattern scenario_pattern(const ScenarioConfig& cfg);
ReGroupPartition scenario_partition(const ScenarioConfig& cfg, const PilotPattern& pattern);

// Channel draw for sample index i: speed sub-range i mod |ranges|, speed
// uniform inside it, Doppler from the carrier frequency; deterministic in
// (seed, i).
ChannelTensor draw_channel(const ScenarioConfig& cfg, std::uint64_t seed, std::uint64_t index,
                           double* speed_kmh_out = nullptr, int* range_index_out = nullptr);

// Pilot-observation covariance for the scenario's channel distribution,
// disk-cached under cache_dir.
PilotCovariance scenario_pilot_covariance(const ScenarioConfig& cfg);

struct Dataset {
    std::vector<RgSample> samples;
    std::vector<double> speeds_kmh;
    std::vector<int> range_index;
};

// Training/evaluation RGs with uncoded random bits; per-RG speed cycled over
// the sub-ranges in equal proportion and SNR uniform over the sweep span.
Dataset generate_dataset(const ScenarioConfig& cfg, int n_rgs, std::uint64_t seed);

std::uint64_t dataset_hash(const Dataset& ds);

// Monte-Carlo spatial error covariance E[h_err h_err^H] per RE, summed over
// users. use_true_pilots selects the perfect-CSI front end (exact channel at
// the pilot REs); otherwise noisy LMMSE pilot estimation with `cov`.
std::vector<MatC> monte_carlo_error_cov(const ScenarioConfig& cfg, const PilotPattern& pattern,
                                        bool use_true_pilots, const PilotCovariance* cov,
                                        double sigma2, int n_samples, std::uint64_t seed);

// Perfect-CSI auxiliary table (independent of sigma2), disk-cached.
std::vector<MatC> perfect_csi_error_cov(const ScenarioConfig& cfg);

struct BerPoint {
    double snr_db = 0.0;
    double coded_ber = 0.0;
    double uncoded_ber = 0.0;
    long long bits = 0;    // info bits counted (coded BER denominator)
    long long errors = 0;  // info bit errors
    long long uncoded_bits = 0;
    long long uncoded_errors = 0;
    int frames = 0;
    int codeword_errors = 0;
    double ci95 = 0.0;  // normal-approximation half width on coded BER
};

struct BerReport {
    std::string receiver;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
    std::vector<BerPoint> points;
};

// Coded/uncoded Monte-Carlo BER per SNR point with paired per-frame seeds.
// ml may be null for baseline / perfect_csi.
BerReport run_ber_sweep(const ScenarioConfig& cfg, const std::string& receiver,
                        MlReceiverParams* ml);

void write_ber_csv(const std::string& path, const BerReport& report);
BerReport read_ber_csv(const std::string& path);

// Log-y BER curves, one per report.
void write_ber_svg(const std::string& path, const std::vector<BerReport>& reports);

// Number of RGs per evaluation frame: the smallest count whose per-user data
// payload is a whole number of LDPC codewords.
int rgs_per_frame(const ScenarioConfig& cfg, const PilotPattern& pattern, int codeword_len);

// Eq-8 loss of a receiver on a dataset (mean per RG) plus the implied rate.
struct LossReport {
    double loss = 0.0;
    double rate_per_user = 0.0;
};
LossReport evaluate_loss(const ScenarioConfig& cfg, const Dataset& ds,
                         const std::string& receiver, MlReceiverParams* ml);

}  // namespace mumimo

#endif
