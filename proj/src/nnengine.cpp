#include "mumimo/nnengine.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace mumimo {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Param make_param(std::string name, std::vector<int> shape, double init_limit,
                 std::mt19937_64* rng) {
    Param p;
    p.name = std::move(name);
    p.shape = std::move(shape);
    std::size_t sz = 1;
    for (int d : p.shape) sz *= static_cast<std::size_t>(d);
    p.value.assign(sz, 0.0);
    p.grad.assign(sz, 0.0);
    if (rng && init_limit > 0) {
        std::uniform_real_distribution<double> u(-init_limit, init_limit);
        for (auto& v : p.value) v = u(*rng);
    }
    return p;
}

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Activation

DiffTensor Activation::forward(const DiffTensor& in, bool) {
    DiffTensor out = in;
    switch (kind_) {
        case Act::Relu:
            for (auto& v : out.v) v = v > 0 ? v : 0.0;
            break;
        case Act::Elu:
            for (auto& v : out.v) v = v > 0 ? v : std::expm1(v);
            break;
        case Act::Sigmoid:
            for (auto& v : out.v) v = sigmoid(v);
            break;
    }
    out_ = out;
    return out;
}

DiffTensor Activation::backward(const DiffTensor& grad_out) {
    DiffTensor g = grad_out;
    for (std::size_t i = 0; i < g.v.size(); ++i) {
        double y = out_.v[i];
        switch (kind_) {
            case Act::Relu:
                g.v[i] *= (y > 0) ? 1.0 : 0.0;
                break;
            case Act::Elu:
                g.v[i] *= (y > 0) ? 1.0 : (y + 1.0);
                break;
            case Act::Sigmoid:
                g.v[i] *= y * (1.0 - y);
                break;
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Conv2D

Conv2D::Conv2D(std::string name, int in_ch, int out_ch, int kh, int kw, int dh, int dw,
               std::mt19937_64& rng)
    : in_ch_(in_ch), out_ch_(out_ch), kh_(kh), kw_(kw), dh_(dh), dw_(dw) {
    if (kh < 1 || kw < 1 || dh < 1 || dw < 1)
        throw DimensionError("Conv2D: kernel and dilation must be >= 1");
    double limit = std::sqrt(6.0 / (kh * kw * in_ch + kh * kw * out_ch));
    weight_ = make_param(name + ".w", {kh, kw, in_ch, out_ch}, limit, &rng);
    bias_ = make_param(name + ".b", {out_ch}, 0.0, nullptr);
}

DiffTensor Conv2D::forward(const DiffTensor& in, bool) {
    if (in.c != in_ch_) throw DimensionError("Conv2D: channel mismatch");
    in_ = in;
    DiffTensor out = DiffTensor::zeros(in.n, in.h, in.w, out_ch_);
    // Bias broadcast.
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = bias_.value[i % out_ch_];

    const int ph = ((kh_ - 1) * dh_) / 2;
    const int pw = ((kw_ - 1) * dw_) / 2;
    for (int ky = 0; ky < kh_; ++ky) {
        for (int kx = 0; kx < kw_; ++kx) {
            const int dy = ky * dh_ - ph;
            const int dx = kx * dw_ - pw;
            CMapMat wk(&weight_.value[(static_cast<std::size_t>(ky) * kw_ + kx) * in_ch_ * out_ch_],
                       in_ch_, out_ch_);
            const int x0 = std::max(0, -dx);
            const int x1 = std::min(in.w, in.w - dx);
            if (x1 <= x0) continue;
            const int len = x1 - x0;
            for (int b = 0; b < in.n; ++b) {
                for (int y = 0; y < in.h; ++y) {
                    const int iy = y + dy;
                    if (iy < 0 || iy >= in.h) continue;
                    CMapMat src(&in.v[in.idx(b, iy, x0 + dx, 0)], len, in_ch_);
                    MapMat dst(&out.v[out.idx(b, y, x0, 0)], len, out_ch_);
                    dst.noalias() += src * wk;
                }
            }
        }
    }
    return out;
}

DiffTensor Conv2D::backward(const DiffTensor& grad_out) {
    DiffTensor gin = DiffTensor::zeros(in_.n, in_.h, in_.w, in_ch_);
    for (std::size_t i = 0; i < grad_out.v.size(); ++i) bias_.grad[i % out_ch_] += grad_out.v[i];

    const int ph = ((kh_ - 1) * dh_) / 2;
    const int pw = ((kw_ - 1) * dw_) / 2;
    for (int ky = 0; ky < kh_; ++ky) {
        for (int kx = 0; kx < kw_; ++kx) {
            const int dy = ky * dh_ - ph;
            const int dx = kx * dw_ - pw;
            const std::size_t woff = (static_cast<std::size_t>(ky) * kw_ + kx) * in_ch_ * out_ch_;
            CMapMat wk(&weight_.value[woff], in_ch_, out_ch_);
            MapMat gwk(&weight_.grad[woff], in_ch_, out_ch_);
            const int x0 = std::max(0, -dx);
            const int x1 = std::min(in_.w, in_.w - dx);
            if (x1 <= x0) continue;
            const int len = x1 - x0;
            for (int b = 0; b < in_.n; ++b) {
                for (int y = 0; y < in_.h; ++y) {
                    const int iy = y + dy;
                    if (iy < 0 || iy >= in_.h) continue;
                    CMapMat src(&in_.v[in_.idx(b, iy, x0 + dx, 0)], len, in_ch_);
                    CMapMat gout(&grad_out.v[grad_out.idx(b, y, x0, 0)], len, out_ch_);
                    MapMat gsrc(&gin.v[gin.idx(b, iy, x0 + dx, 0)], len, in_ch_);
                    gwk.noalias() += src.transpose() * gout;
                    gsrc.noalias() += gout * wk.transpose();
                }
            }
        }
    }
    return gin;
}

// ---------------------------------------------------------------------------
// DepthwiseConv2D

DepthwiseConv2D::DepthwiseConv2D(std::string name, int ch, int kh, int kw, int dh, int dw,
                                 std::mt19937_64& rng)
    : ch_(ch), kh_(kh), kw_(kw), dh_(dh), dw_(dw) {
    double limit = std::sqrt(6.0 / (2.0 * kh * kw));
    weight_ = make_param(name + ".dw", {kh, kw, ch}, limit, &rng);
}

DiffTensor DepthwiseConv2D::forward(const DiffTensor& in, bool) {
    if (in.c != ch_) throw DimensionError("DepthwiseConv2D: channel mismatch");
    in_ = in;
    DiffTensor out = DiffTensor::zeros(in.n, in.h, in.w, ch_);
    const int ph = ((kh_ - 1) * dh_) / 2;
    const int pw = ((kw_ - 1) * dw_) / 2;
    for (int ky = 0; ky < kh_; ++ky) {
        for (int kx = 0; kx < kw_; ++kx) {
            const int dy = ky * dh_ - ph;
            const int dx = kx * dw_ - pw;
            Eigen::Map<const Eigen::RowVectorXd> wk(
                &weight_.value[(static_cast<std::size_t>(ky) * kw_ + kx) * ch_], ch_);
            const int x0 = std::max(0, -dx);
            const int x1 = std::min(in.w, in.w - dx);
            if (x1 <= x0) continue;
            const int len = x1 - x0;
            for (int b = 0; b < in.n; ++b)
                for (int y = 0; y < in.h; ++y) {
                    const int iy = y + dy;
                    if (iy < 0 || iy >= in.h) continue;
                    CMapMat src(&in.v[in.idx(b, iy, x0 + dx, 0)], len, ch_);
                    MapMat dst(&out.v[out.idx(b, y, x0, 0)], len, ch_);
                    dst.array() += src.array().rowwise() * wk.array();
                }
        }
    }
    return out;
}

DiffTensor DepthwiseConv2D::backward(const DiffTensor& grad_out) {
    DiffTensor gin = DiffTensor::zeros(in_.n, in_.h, in_.w, ch_);
    const int ph = ((kh_ - 1) * dh_) / 2;
    const int pw = ((kw_ - 1) * dw_) / 2;
    for (int ky = 0; ky < kh_; ++ky) {
        for (int kx = 0; kx < kw_; ++kx) {
            const int dy = ky * dh_ - ph;
            const int dx = kx * dw_ - pw;
            const std::size_t woff = (static_cast<std::size_t>(ky) * kw_ + kx) * ch_;
            Eigen::Map<const Eigen::RowVectorXd> wk(&weight_.value[woff], ch_);
            Eigen::Map<Eigen::RowVectorXd> gwk(&weight_.grad[woff], ch_);
            const int x0 = std::max(0, -dx);
            const int x1 = std::min(in_.w, in_.w - dx);
            if (x1 <= x0) continue;
            const int len = x1 - x0;
            for (int b = 0; b < in_.n; ++b)
                for (int y = 0; y < in_.h; ++y) {
                    const int iy = y + dy;
                    if (iy < 0 || iy >= in_.h) continue;
                    CMapMat src(&in_.v[in_.idx(b, iy, x0 + dx, 0)], len, ch_);
                    CMapMat gout(&grad_out.v[grad_out.idx(b, y, x0, 0)], len, ch_);
                    MapMat gsrc(&gin.v[gin.idx(b, iy, x0 + dx, 0)], len, ch_);
                    gwk.array() += (src.array() * gout.array()).colwise().sum();
                    gsrc.array() += gout.array().rowwise() * wk.array();
                }
        }
    }
    return gin;
}

// ---------------------------------------------------------------------------
// SeparableConv2D

SeparableConv2D::SeparableConv2D(std::string name, int in_ch, int out_ch, int kh, int kw, int dh,
                                 int dw, std::mt19937_64& rng)
    : depthwise_(name, in_ch, kh, kw, dh, dw, rng),
      pointwise_(name + ".pw", in_ch, out_ch, 1, 1, 1, 1, rng) {}

DiffTensor SeparableConv2D::forward(const DiffTensor& in, bool training) {
    return pointwise_.forward(depthwise_.forward(in, training), training);
}

DiffTensor SeparableConv2D::backward(const DiffTensor& grad_out) {
    return depthwise_.backward(pointwise_.backward(grad_out));
}

std::vector<Param*> SeparableConv2D::params() {
    auto p = depthwise_.params();
    auto q = pointwise_.params();
    p.insert(p.end(), q.begin(), q.end());
    return p;
}

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(std::string name, int ch, double momentum, double eps)
    : ch_(ch), momentum_(momentum), eps_(eps) {
    gamma_ = make_param(name + ".gamma", {ch}, 0.0, nullptr);
    std::fill(gamma_.value.begin(), gamma_.value.end(), 1.0);
    beta_ = make_param(name + ".beta", {ch}, 0.0, nullptr);
    run_mean_ = make_param(name + ".rmean", {ch}, 0.0, nullptr);
    run_var_ = make_param(name + ".rvar", {ch}, 0.0, nullptr);
    std::fill(run_var_.value.begin(), run_var_.value.end(), 1.0);
}

DiffTensor BatchNorm::forward(const DiffTensor& in, bool training) {
    if (in.c != ch_) throw DimensionError("BatchNorm: channel mismatch");
    const int count = in.n * in.h * in.w;
    count_ = count;
    mean_.assign(ch_, 0.0);
    inv_std_.assign(ch_, 0.0);

    std::vector<double> var(ch_, 0.0);
    if (training) {
        for (std::size_t i = 0; i < in.v.size(); ++i) mean_[i % ch_] += in.v[i];
        for (int c = 0; c < ch_; ++c) mean_[c] /= count;
        for (std::size_t i = 0; i < in.v.size(); ++i) {
            double d = in.v[i] - mean_[i % ch_];
            var[i % ch_] += d * d;
        }
        for (int c = 0; c < ch_; ++c) var[c] /= count;
        for (int c = 0; c < ch_; ++c) {
            run_mean_.value[c] = momentum_ * run_mean_.value[c] + (1.0 - momentum_) * mean_[c];
            run_var_.value[c] = momentum_ * run_var_.value[c] + (1.0 - momentum_) * var[c];
        }
    } else {
        mean_ = run_mean_.value;
        var = run_var_.value;
    }
    for (int c = 0; c < ch_; ++c) inv_std_[c] = 1.0 / std::sqrt(var[c] + eps_);

    xhat_ = in;
    DiffTensor out = in;
    for (std::size_t i = 0; i < in.v.size(); ++i) {
        int c = static_cast<int>(i % ch_);
        double xh = (in.v[i] - mean_[c]) * inv_std_[c];
        xhat_.v[i] = xh;
        out.v[i] = gamma_.value[c] * xh + beta_.value[c];
    }
    return out;
}

DiffTensor BatchNorm::backward(const DiffTensor& grad_out) {
    const int n = count_;
    std::vector<double> sum_g(ch_, 0.0), sum_gx(ch_, 0.0);
    for (std::size_t i = 0; i < grad_out.v.size(); ++i) {
        int c = static_cast<int>(i % ch_);
        sum_g[c] += grad_out.v[i];
        sum_gx[c] += grad_out.v[i] * xhat_.v[i];
    }
    for (int c = 0; c < ch_; ++c) {
        gamma_.grad[c] += sum_gx[c];
        beta_.grad[c] += sum_g[c];
    }
    DiffTensor gin = grad_out;
    for (std::size_t i = 0; i < grad_out.v.size(); ++i) {
        int c = static_cast<int>(i % ch_);
        gin.v[i] = gamma_.value[c] * inv_std_[c] / n *
                   (n * grad_out.v[i] - sum_g[c] - xhat_.v[i] * sum_gx[c]);
    }
    return gin;
}

// ---------------------------------------------------------------------------
// ResNetBlock

ResNetBlock::ResNetBlock(std::string name, int ch, int kh, int kw, int dh, int dw,
                         std::mt19937_64& rng)
    : bn_(name + ".bn", ch), relu_(Act::Relu), conv_(name + ".sep", ch, ch, kh, kw, dh, dw, rng) {}

DiffTensor ResNetBlock::forward(const DiffTensor& in, bool training) {
    DiffTensor branch = conv_.forward(relu_.forward(bn_.forward(in, training), training), training);
    DiffTensor out = in;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += branch.v[i];
    return out;
}

DiffTensor ResNetBlock::backward(const DiffTensor& grad_out) {
    DiffTensor gb = bn_.backward(relu_.backward(conv_.backward(grad_out)));
    DiffTensor gin = grad_out;
    for (std::size_t i = 0; i < gin.v.size(); ++i) gin.v[i] += gb.v[i];
    return gin;
}

std::vector<Param*> ResNetBlock::params() {
    auto p = bn_.params();
    auto q = conv_.params();
    p.insert(p.end(), q.begin(), q.end());
    return p;
}

// ---------------------------------------------------------------------------
// GlobalAvgPool / Dense / Sequential

DiffTensor GlobalAvgPool::forward(const DiffTensor& in, bool) {
    h_ = in.h;
    w_ = in.w;
    DiffTensor out = DiffTensor::zeros(in.n, 1, 1, in.c);
    for (int b = 0; b < in.n; ++b)
        for (int y = 0; y < in.h; ++y)
            for (int x = 0; x < in.w; ++x)
                for (int c = 0; c < in.c; ++c) out.at(b, 0, 0, c) += in.at(b, y, x, c);
    const double inv = 1.0 / (in.h * in.w);
    for (auto& v : out.v) v *= inv;
    return out;
}

DiffTensor GlobalAvgPool::backward(const DiffTensor& grad_out) {
    DiffTensor gin = DiffTensor::zeros(grad_out.n, h_, w_, grad_out.c);
    const double inv = 1.0 / (h_ * w_);
    for (int b = 0; b < grad_out.n; ++b)
        for (int y = 0; y < h_; ++y)
            for (int x = 0; x < w_; ++x)
                for (int c = 0; c < grad_out.c; ++c)
                    gin.at(b, y, x, c) = grad_out.at(b, 0, 0, c) * inv;
    return gin;
}

Dense::Dense(std::string name, int in_features, int out_features, std::mt19937_64& rng)
    : in_f_(in_features), out_f_(out_features) {
    double limit = std::sqrt(6.0 / (in_features + out_features));
    weight_ = make_param(name + ".w", {in_features, out_features}, limit, &rng);
    bias_ = make_param(name + ".b", {out_features}, 0.0, nullptr);
}

DiffTensor Dense::forward(const DiffTensor& in, bool) {
    const int feat = in.h * in.w * in.c;
    if (feat != in_f_) throw DimensionError("Dense: feature size mismatch");
    in_ = in;
    DiffTensor out = DiffTensor::zeros(in.n, 1, 1, out_f_);
    CMapMat x(in.v.data(), in.n, feat);
    CMapMat w(weight_.value.data(), in_f_, out_f_);
    MapMat y(out.v.data(), in.n, out_f_);
    y.noalias() = x * w;
    for (int b = 0; b < in.n; ++b)
        for (int o = 0; o < out_f_; ++o) out.v[static_cast<std::size_t>(b) * out_f_ + o] += bias_.value[o];
    return out;
}

DiffTensor Dense::backward(const DiffTensor& grad_out) {
    const int feat = in_f_;
    DiffTensor gin = DiffTensor::zeros(in_.n, in_.h, in_.w, in_.c);
    CMapMat x(in_.v.data(), in_.n, feat);
    CMapMat w(weight_.value.data(), in_f_, out_f_);
    CMapMat gy(grad_out.v.data(), grad_out.n, out_f_);
    MapMat gw(weight_.grad.data(), in_f_, out_f_);
    MapMat gx(gin.v.data(), in_.n, feat);
    gw.noalias() += x.transpose() * gy;
    gx.noalias() = gy * w.transpose();
    for (int b = 0; b < grad_out.n; ++b)
        for (int o = 0; o < out_f_; ++o)
            bias_.grad[o] += grad_out.v[static_cast<std::size_t>(b) * out_f_ + o];
    return gin;
}

DiffTensor Sequential::forward(const DiffTensor& in, bool training) {
    DiffTensor x = in;
    for (auto& l : layers_) x = l->forward(x, training);
    return x;
}

DiffTensor Sequential::backward(const DiffTensor& grad_out) {
    DiffTensor g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
}

std::vector<Param*> Sequential::params() {
    std::vector<Param*> out;
    for (auto& l : layers_) {
        auto p = l->params();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

std::vector<Param*> Sequential::state() {
    std::vector<Param*> out;
    for (auto& l : layers_) {
        auto p = l->state();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

std::vector<Layer*> Sequential::layers() {
    std::vector<Layer*> out;
    for (auto& l : layers_) out.push_back(l.get());
    return out;
}

// ---------------------------------------------------------------------------
// Adam / loss / checkpoints

void AdamState::init(const std::vector<Param*>& params) {
    m.clear();
    v.clear();
    for (auto* p : params) {
        m.emplace_back(p->size(), 0.0);
        v.emplace_back(p->size(), 0.0);
    }
    step = 0;
}

void adam_step(const std::vector<Param*>& params, AdamState& state) {
    if (state.m.size() != params.size()) throw DimensionError("adam_step: state not initialized");
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Param& p = *params[i];
        if (state.m[i].size() != p.size()) throw DimensionError("adam_step: shape mismatch");
        for (std::size_t j = 0; j < p.size(); ++j) {
            double g = p.grad[j];
            state.m[i][j] = state.beta1 * state.m[i][j] + (1.0 - state.beta1) * g;
            state.v[i][j] = state.beta2 * state.v[i][j] + (1.0 - state.beta2) * g * g;
            double mhat = state.m[i][j] / bc1;
            double vhat = state.v[i][j] / bc2;
            p.value[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

double bce_with_logits(const std::vector<double>& llrs, const std::vector<std::uint8_t>& bits,
                       int batch_size, std::vector<double>* grad_llrs) {
    if (llrs.size() != bits.size()) throw DimensionError("bce_with_logits: size mismatch");
    const double ln2 = std::log(2.0);
    double loss = 0.0;
    if (grad_llrs) grad_llrs->assign(llrs.size(), 0.0);
    for (std::size_t i = 0; i < llrs.size(); ++i) {
        double l = llrs[i];
        double z = (bits[i] ? -l : l);  // -log P(correct bit) = softplus(z)
        double sp = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        loss += sp;
        if (grad_llrs) (*grad_llrs)[i] = (sigmoid(l) - static_cast<double>(bits[i])) / (batch_size * ln2);
    }
    return loss / (batch_size * ln2);
}

void save_checkpoint(const std::string& path, const std::vector<Param*>& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write("MMCK", 4);
    std::uint32_t count = static_cast<std::uint32_t>(params.size());
    os.write(reinterpret_cast<const char*>(&count), 4);
    for (auto* p : params) {
        std::uint32_t nl = static_cast<std::uint32_t>(p->name.size());
        os.write(reinterpret_cast<const char*>(&nl), 4);
        os.write(p->name.data(), nl);
        std::uint32_t nd = static_cast<std::uint32_t>(p->shape.size());
        os.write(reinterpret_cast<const char*>(&nd), 4);
        for (int d : p->shape) {
            std::uint32_t u = static_cast<std::uint32_t>(d);
            os.write(reinterpret_cast<const char*>(&u), 4);
        }
        os.write(reinterpret_cast<const char*>(p->value.data()),
                 static_cast<std::streamsize>(p->size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("save_checkpoint: write failed");
}

void load_checkpoint(const std::string& path, const std::vector<Param*>& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "MMCK")
        throw std::runtime_error("load_checkpoint: bad magic");
    std::uint32_t count = 0;
    is.read(reinterpret_cast<char*>(&count), 4);
    std::vector<std::pair<std::string, std::vector<double>>> entries;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t nl = 0;
        is.read(reinterpret_cast<char*>(&nl), 4);
        std::string name(nl, '\0');
        is.read(name.data(), nl);
        std::uint32_t nd = 0;
        is.read(reinterpret_cast<char*>(&nd), 4);
        std::size_t sz = 1;
        for (std::uint32_t d = 0; d < nd; ++d) {
            std::uint32_t u = 0;
            is.read(reinterpret_cast<char*>(&u), 4);
            sz *= u;
        }
        std::vector<double> data(sz);
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(sz * sizeof(double)));
        if (!is) throw std::runtime_error("load_checkpoint: truncated file");
        entries.emplace_back(std::move(name), std::move(data));
    }
    for (auto* p : params) {
        bool found = false;
        for (auto& [name, data] : entries) {
            if (name == p->name) {
                if (data.size() != p->size())
                    throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
                p->value = data;
                found = true;
                break;
            }
        }
        if (!found) throw std::runtime_error("load_checkpoint: missing tensor " + p->name);
    }
}

}  // namespace mumimo
