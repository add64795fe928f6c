#ifndef MUMIMO_NNENGINE_HPP
#define MUMIMO_NNENGINE_HPP

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mumimo/common.hpp"

namespace mumimo {

// 4-D real tensor (batch, height, width, channels), channel fastest, with an
// optional same-shape gradient slot.
struct DiffTensor {
    int n = 0, h = 0, w = 0, c = 0;
    std::vector<double> v;
    std::vector<double> grad;

    static DiffTensor zeros(int n, int h, int w, int c) {
        DiffTensor t;
        t.n = n;
        t.h = h;
        t.w = w;
        t.c = c;
        t.v.assign(static_cast<std::size_t>(n) * h * w * c, 0.0);
        return t;
    }
    std::size_t size() const { return v.size(); }
    std::size_t idx(int b, int y, int x, int ch) const {
        return ((static_cast<std::size_t>(b) * h + y) * w + x) * c + ch;
    }
    double& at(int b, int y, int x, int ch) { return v[idx(b, y, x, ch)]; }
    double at(int b, int y, int x, int ch) const { return v[idx(b, y, x, ch)]; }
    void alloc_grad() { grad.assign(v.size(), 0.0); }
    bool same_shape(const DiffTensor& o) const {
        return n == o.n && h == o.h && w == o.w && c == o.c;
    }
};

struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;

    std::size_t size() const { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

class Layer {
  public:
    virtual ~Layer() = default;
    virtual DiffTensor forward(const DiffTensor& in, bool training) = 0;
    virtual DiffTensor backward(const DiffTensor& grad_out) = 0;
    virtual std::vector<Param*> params() { return {}; }
    // Non-trainable persistent state (batchnorm running statistics).
    virtual std::vector<Param*> state() { return {}; }
};

enum class Act { Relu, Elu, Sigmoid };

class Activation : public Layer {
  public:
    explicit Activation(Act kind) : kind_(kind) {}
    DiffTensor forward(const DiffTensor& in, bool training) override;
    DiffTensor backward(const DiffTensor& grad_out) override;

  private:
    Act kind_;
    DiffTensor out_;
};

// Cross-correlation with dilation and TF-style "same" zero padding.
class Conv2D : public Layer {
  public:
    Conv2D(std::string name, int in_ch, int out_ch, int kh, int kw, int dh, int dw,
           std::mt19937_64& rng);
    DiffTensor forward(const DiffTensor& in, bool training) override;
    DiffTensor backward(const DiffTensor& grad_out) override;
    std::vector<Param*> params() override { return {&weight_, &bias_}; }

    Param& weight() { return weight_; }
    Param& bias() { return bias_; }

  private:
    int in_ch_, out_ch_, kh_, kw_, dh_, dw_;
    Param weight_;  // [kh][kw][in][out]
    Param bias_;    // [out]
    DiffTensor in_;
};

// Depthwise (per-channel spatial) convolution, channel multiplier 1, no bias.
class DepthwiseConv2D : public Layer {
  public:
    DepthwiseConv2D(std::string name, int ch, int kh, int kw, int dh, int dw,
                    std::mt19937_64& rng);
    DiffTensor forward(const DiffTensor& in, bool training) override;
    DiffTensor backward(const DiffTensor& grad_out) override;
    std::vector<Param*> params() override { return {&weight_}; }

  private:
    int ch_, kh_, kw_, dh_, dw_;
    Param weight_;  // [kh][kw][ch]
    DiffTensor in_;
};

// Depthwise followed by pointwise 1x1; bias on the pointwise stage.
class SeparableConv2D : public Layer {
  public:
    SeparableConv2D(std::string name, int in_ch, int out_ch, int kh, int kw, int dh, int dw,
                    std::mt19937_64& rng);
    DiffTensor forward(const DiffTensor& in, bool training) override;
    DiffTensor backward(const DiffTensor& grad_out) override;
    std::vector<Param*> params() override;

  private:
    DepthwiseConv2D depthwise_;
    Conv2D pointwise_;
};

class BatchNorm : public Layer {
  public:
    BatchNorm(std::string name, int ch, double momentum = 0.99, double eps = 1e-5);
    DiffTensor forward(const DiffTensor& in, bool training) override;
    DiffTensor backward(const DiffTensor& grad_out) override;
    std::vector<Param*> params() override { return {&gamma_, &beta_}; }

    Param& running_mean() { return run_mean_; }
    Param& running_var() { return run_var_; }
    // Running statistics are state, not optimized; exposed for checkpoints.
    std::vector<Param*> state() override { return {&run_mean_, &run_var_}; }

  private:
    int ch_;
    double momentum_, eps_;
    Param gamma_, beta_, run_mean_, run_var_;
    DiffTensor xhat_;
    std::vector<double> mean_, inv_std_;
    int count_ = 0;
};

// out = in + sepconv(relu(batchnorm(in)))
class ResNetBlock : public Layer {
  public:
    ResNetBlock(std::string name, int ch, int kh, int kw, int dh, int dw, std::mt19937_64& rng);
    DiffTensor forward(const DiffTensor& in, bool training) override;
    DiffTensor backward(const DiffTensor& grad_out) override;
    std::vector<Param*> params() override;
    std::vector<Param*> state() override { return bn_.state(); }

  private:
    BatchNorm bn_;
    Activation relu_;
    SeparableConv2D conv_;
};

// Mean over the spatial dimensions: (n, h, w, c) -> (n, 1, 1, c).
class GlobalAvgPool : public Layer {
  public:
    DiffTensor forward(const DiffTensor& in, bool training) override;
    DiffTensor backward(const DiffTensor& grad_out) override;

  private:
    int h_ = 0, w_ = 0;
};

// Affine map on the flattened (h * w * c) feature vector.
class Dense : public Layer {
  public:
    Dense(std::string name, int in_features, int out_features, std::mt19937_64& rng);
    DiffTensor forward(const DiffTensor& in, bool training) override;
    DiffTensor backward(const DiffTensor& grad_out) override;
    std::vector<Param*> params() override { return {&weight_, &bias_}; }

  private:
    int in_f_, out_f_;
    Param weight_;  // [in][out]
    Param bias_;
    DiffTensor in_;
};

class Sequential : public Layer {
  public:
    Sequential() = default;
    void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
    DiffTensor forward(const DiffTensor& in, bool training) override;
    DiffTensor backward(const DiffTensor& grad_out) override;
    std::vector<Param*> params() override;
    std::vector<Param*> state() override;
    std::vector<Layer*> layers();

  private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::int64_t step = 0;
    std::vector<std::vector<double>> m, v;

    void init(const std::vector<Param*>& params);
};

void adam_step(const std::vector<Param*>& params, AdamState& state);

// Eq-style bit-metric loss in log2 units: -(1/batch) sum log2 sigmoid-posterior.
// grad_llrs gets (sigmoid(llr) - bit) / (batch * ln 2).
double bce_with_logits(const std::vector<double>& llrs, const std::vector<std::uint8_t>& bits,
                       int batch_size, std::vector<double>* grad_llrs);

// Checkpoint format: "MMCK" magic, u32 count, then per tensor: u32 name length,
// name bytes, u32 ndims, u32 dims, f64 payload.
void save_checkpoint(const std::string& path, const std::vector<Param*>& params);
void load_checkpoint(const std::string& path, const std::vector<Param*>& params);

}  // namespace mumimo

#endif
