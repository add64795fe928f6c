#ifndef MUMIMO_RXML_HPP
#define MUMIMO_RXML_HPP

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mumimo/nnengine.hpp"
#include "mumimo/rxconv.hpp"

namespace mumimo {

// Trainable components of the ML-enhanced receiver: the covariance-parameter
// CNN, the Doppler-feature CNN, the grid demapper CNN, and the phase offset of
// the power-decay covariance model.
struct MlReceiverParams {
    int n_m = 0, m_bits = 0;
    Sequential cnn_e;    // 4 planes -> 2 planes (alpha, beta) in (0,1)
    Sequential cnn_l;    // pilot-grid re/im -> scalar feature
    Sequential cnn_dmp;  // 6 planes -> M LLR planes
    Param gamma;         // power-decay phase offset, initialized at pi

    std::vector<Param*> trainable();
    std::vector<Param*> checkpoint_tensors();  // trainable + batchnorm state
    void save(const std::string& path);
    void load(const std::string& path);
};

MlReceiverParams build_ml_receiver(int n_m, int m_bits, std::uint64_t seed);

// Positional plane values: antisymmetric ramp [-n/2..-1, 1..n/2], 0 skipped.
double positional_coord(int index, int extent);

// e_{x,y} = alpha * beta^{|y-x|} * exp(j gamma (y-x)), a scaled KMS matrix.
MatC build_decay_covariance(double alpha, double beta, double gamma, int n_m);

// Accumulates (d alpha, d beta, d gamma) from the complex cotangent of the
// covariance matrix. Cotangent convention: dL/dRe + j dL/dIm per entry.
void decay_covariance_backward(double alpha, double beta, double gamma, const MatC& cotangent,
                               double* d_alpha, double* d_beta, double* d_gamma);

// One training / inference sample: a received RG with its noise level and the
// transmitted data bits (per user, |D| * M, f-major over D).
struct RgSample {
    ReceivedGrid y;
    double sigma2 = 1.0;
    double snr_db = 0.0;
    std::vector<std::vector<std::uint8_t>> bits;
};

struct MlRxOptions {
    InterpMode interp = InterpMode::FreqNire;
    // Consistency-harness mode: bypass CNN_E / the decay model and use this
    // per-RE per-user covariance table instead.
    std::optional<std::vector<std::vector<MatC>>> inject_e_per_re_user;  // [re][user]
    // Consistency-harness mode: replace CNN_Dmp by the exact AWGN demapper.
    bool use_awgn_demapper = false;
};

// Full differentiable batch pipeline. One forward per instance per call;
// backward() must follow the matching forward().
class MlPipeline {
  public:
    MlPipeline(const GridConfig& cfg, const PilotPattern& pattern,
               const ReGroupPartition& partition, const Constellation& constellation,
               MlReceiverParams* params, MlRxOptions opts = {});

    // Raw (unclipped) LLR grids per sample per user.
    std::vector<std::vector<LlrGrid>> forward(const std::vector<const RgSample*>& batch,
                                              const PilotCovariance& cov, bool training);

    // Eq-8 style loss over data REs plus full backprop into the trainable
    // parameters (gradients accumulated; caller zeroes them).
    double backward_loss(const std::vector<const RgSample*>& batch);

  private:
    const GridConfig cfg_;
    const PilotPattern pattern_;
    const ReGroupPartition partition_;
    const Constellation constellation_;
    MlReceiverParams* params_;
    MlRxOptions opts_;
    std::vector<std::pair<int, int>> data_res_;

    // Per-forward caches.
    struct SampleCache {
        ChannelTensor h_hat;
        std::vector<MatC> e_per_re;     // summed over users
        std::vector<MatC> w_per_group;  // N_k x N_m
        std::vector<MatC> a_inv;        // per group
        std::vector<MatC> b_sum;  // per group, sum of H_hat over the group
        EqualizedOutput eq;
        const RgSample* sample = nullptr;
    };
    std::vector<SampleCache> cache_;
    DiffTensor cnn_l_in_, cnn_e_in_, cnn_e_out_, cnn_dmp_in_, cnn_dmp_out_;
    std::vector<std::vector<LlrGrid>> llr_out_;
    bool cnn_l_used_ = false;
    int batch_size_ = 0;

    DiffTensor make_planes(int batch, int extra_channels) const;
};

// Evaluation-path receiver for a single RG; LLRs clipped for the decoder.
std::vector<LlrGrid> ml_receive(const GridConfig& cfg, const PilotPattern& pattern,
                                const ReGroupPartition& partition, const PilotCovariance& cov,
                                const Constellation& constellation, MlReceiverParams& params,
                                const ReceivedGrid& y, double sigma2, double snr_db,
                                const MlRxOptions& opts = {});

struct TrainConfig {
    int batch_size = 27;
    double lr = 1e-3;
    int steps = 600;
    std::uint64_t seed = 1;
};

struct TrainResult {
    std::vector<double> loss_trace;
    bool diverged = false;
};

TrainResult train(const std::vector<RgSample>& dataset, const GridConfig& cfg,
                  const PilotPattern& pattern, const ReGroupPartition& partition,
                  const PilotCovariance& cov, const Constellation& constellation,
                  MlReceiverParams& params, const TrainConfig& tc,
                  InterpMode interp = InterpMode::FreqNire);

// Rate estimate implied by an Eq-8 loss value (bits per user grid).
double achievable_rate_estimate(double loss, int n_data_re, int m_bits, int n_k);

}  // namespace mumimo

#endif
