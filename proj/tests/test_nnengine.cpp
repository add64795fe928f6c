#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>

#include "mumimo/nnengine.hpp"

using namespace mumimo;

namespace {

DiffTensor random_tensor(int n, int h, int w, int c, std::uint64_t seed) {
    auto rng = make_rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    DiffTensor t = DiffTensor::zeros(n, h, w, c);
    for (auto& v : t.v) v = g(rng);
    return t;
}

std::vector<double> random_cotangent(std::size_t n, std::uint64_t seed) {
    auto rng = make_rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> r(n);
    for (auto& v : r) v = g(rng);
    return r;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Gradient check of loss(x) = <layer(x), R> against central differences for
// both the input and every parameter.
void check_layer_gradients(Layer& layer, DiffTensor in, double tol = 1e-4,
                           double h = 1e-5) {
    DiffTensor out0 = layer.forward(in, true);
    std::vector<double> r = random_cotangent(out0.size(), 12345);
    DiffTensor gout = out0;
    gout.v = r;
    DiffTensor gin = layer.backward(gout);
    REQUIRE(gin.same_shape(in));

    // Save analytic parameter gradients before FD probes overwrite caches.
    std::vector<std::vector<double>> pgrads;
    for (Param* p : layer.params()) pgrads.push_back(p->grad);

    auto rel = [&](double a, double b) {
        double scale = std::max(std::abs(a), std::abs(b));
        return scale < 1e-7 ? 0.0 : std::abs(a - b) / scale;
    };
    auto eval = [&](const DiffTensor& x) { return dot(layer.forward(x, true).v, r); };

    for (std::size_t i = 0; i < in.size(); ++i) {
        DiffTensor xp = in, xm = in;
        xp.v[i] += h;
        xm.v[i] -= h;
        double fd = (eval(xp) - eval(xm)) / (2.0 * h);
        CHECK(rel(gin.v[i], fd) < tol);
    }
    auto params = layer.params();
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Param* p = params[pi];
        for (std::size_t i = 0; i < p->size(); ++i) {
            double save = p->value[i];
            p->value[i] = save + h;
            double fp = eval(in);
            p->value[i] = save - h;
            double fm = eval(in);
            p->value[i] = save;
            double fd = (fp - fm) / (2.0 * h);
            CHECK(rel(pgrads[pi][i], fd) < tol);
        }
    }
}

}  // namespace

TEST_CASE("identity 1x1 conv passes the input through") {
    auto rng = make_rng(1);
    Conv2D conv("id", 3, 3, 1, 1, 1, 1, rng);
    // weight layout [kh][kw][in][out]
    for (auto& v : conv.weight().value) v = 0.0;
    for (auto& v : conv.bias().value) v = 0.0;
    for (int c = 0; c < 3; ++c) conv.weight().value[c * 3 + c] = 1.0;
    DiffTensor in = random_tensor(2, 5, 4, 3, 2);
    DiffTensor out = conv.forward(in, false);
    for (std::size_t i = 0; i < in.size(); ++i) CHECK(out.v[i] == doctest::Approx(in.v[i]));
}

TEST_CASE("same padding preserves spatial dims for every Table-style config") {
    auto rng = make_rng(3);
    const int ks[][4] = {{3, 2, 1, 1}, {5, 2, 2, 1}, {7, 2, 3, 1}, {3, 3, 1, 1}, {5, 3, 2, 1},
                         {7, 3, 3, 2}, {9, 3, 4, 3}, {5, 3, 1, 1}, {1, 1, 1, 1}};
    DiffTensor in = random_tensor(1, 14, 6, 2, 4);
    for (auto& k : ks) {
        Conv2D conv("c", 2, 3, k[0], k[1], k[2], k[3], rng);
        DiffTensor out = conv.forward(in, false);
        CHECK(out.h == in.h);
        CHECK(out.w == in.w);
        CHECK(out.c == 3);
        SeparableConv2D sep("s", 2, 3, k[0], k[1], k[2], k[3], rng);
        DiffTensor out2 = sep.forward(in, false);
        CHECK(out2.h == in.h);
        CHECK(out2.w == in.w);
    }
}

TEST_CASE("ResNet block with zeroed parameters is a pure skip connection") {
    auto rng = make_rng(4);
    ResNetBlock block("rb", 3, 3, 2, 1, 1, rng);
    for (Param* p : block.params())
        for (auto& v : p->value) v = 0.0;
    DiffTensor in = random_tensor(2, 6, 4, 3, 5);
    DiffTensor out = block.forward(in, true);
    for (std::size_t i = 0; i < in.size(); ++i) CHECK(out.v[i] == doctest::Approx(in.v[i]));
}

TEST_CASE("finite-difference gradients: activations") {
    for (Act a : {Act::Relu, Act::Elu, Act::Sigmoid}) {
        Activation act(a);
        check_layer_gradients(act, random_tensor(2, 6, 4, 3, 10 + static_cast<int>(a)));
    }
}

TEST_CASE("finite-difference gradients: conv2d with dilation") {
    auto rng = make_rng(20);
    Conv2D conv("c", 3, 4, 3, 2, 2, 1, rng);
    check_layer_gradients(conv, random_tensor(2, 6, 4, 3, 21));
}

TEST_CASE("finite-difference gradients: depthwise conv") {
    auto rng = make_rng(22);
    DepthwiseConv2D conv("d", 3, 3, 2, 1, 1, rng);
    check_layer_gradients(conv, random_tensor(2, 6, 4, 3, 23));
}

TEST_CASE("finite-difference gradients: separable conv") {
    auto rng = make_rng(24);
    SeparableConv2D conv("s", 3, 4, 5, 2, 2, 1, rng);
    check_layer_gradients(conv, random_tensor(2, 6, 4, 3, 25));
}

TEST_CASE("finite-difference gradients: batchnorm (training stats)") {
    BatchNorm bn("bn", 3);
    check_layer_gradients(bn, random_tensor(2, 6, 4, 3, 26));
}

TEST_CASE("finite-difference gradients: resnet block") {
    auto rng = make_rng(27);
    ResNetBlock block("rb", 3, 3, 2, 2, 1, rng);
    check_layer_gradients(block, random_tensor(2, 6, 4, 3, 28));
}

TEST_CASE("finite-difference gradients: global average pool and dense") {
    GlobalAvgPool pool;
    check_layer_gradients(pool, random_tensor(2, 6, 4, 3, 29));
    auto rng = make_rng(30);
    Dense dense("dn", 12, 5, rng);
    check_layer_gradients(dense, random_tensor(2, 1, 4, 3, 31));
}

TEST_CASE("finite-difference gradients: small sequential stack") {
    auto rng = make_rng(32);
    Sequential seq;
    seq.add(std::make_unique<Conv2D>("c0", 3, 4, 3, 2, 1, 1, rng));
    seq.add(std::make_unique<Activation>(Act::Relu));
    seq.add(std::make_unique<ResNetBlock>("rb", 4, 3, 2, 2, 1, rng));
    seq.add(std::make_unique<Conv2D>("c1", 4, 2, 1, 1, 1, 1, rng));
    check_layer_gradients(seq, random_tensor(2, 6, 4, 3, 33));
}

TEST_CASE("batchnorm inference matches training once running stats converge") {
    BatchNorm bn("bn", 3);
    DiffTensor in = random_tensor(4, 5, 4, 3, 34);
    DiffTensor train_out;
    for (int i = 0; i < 3000; ++i) train_out = bn.forward(in, true);
    DiffTensor inf_out = bn.forward(in, false);
    for (std::size_t i = 0; i < in.size(); ++i)
        CHECK(std::abs(inf_out.v[i] - train_out.v[i]) < 1e-6);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    Param p;
    p.name = "w";
    p.shape = {3};
    p.value = {1.0, -2.0, 0.5};
    p.grad = {0.0, 0.0, 0.0};
    std::vector<Param*> ps{&p};
    AdamState st;
    st.init(ps);
    adam_step(ps, st);
    CHECK(p.value == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("adam: first step magnitude is about lr, and w^2 converges") {
    Param p;
    p.name = "w";
    p.shape = {1};
    p.value = {1.0};
    p.grad = {0.0};
    std::vector<Param*> ps{&p};
    AdamState st;
    st.lr = 0.1;
    st.init(ps);
    p.grad[0] = 2.0 * p.value[0];  // d/dw w^2
    adam_step(ps, st);
    CHECK(std::abs((1.0 - p.value[0]) - st.lr) < 1e-6);  // bias-corrected first step
    for (int i = 0; i < 199; ++i) {
        p.grad[0] = 2.0 * p.value[0];
        adam_step(ps, st);
    }
    CHECK(std::abs(p.value[0]) < 1e-2);
}

TEST_CASE("bce_with_logits values and gradient") {
    std::vector<double> llrs{0.0, 40.0, -3.0};
    std::vector<std::uint8_t> bits{1, 1, 0};
    std::vector<double> grad;
    double loss = bce_with_logits(llrs, bits, 1, &grad);
    // llr 0 -> 1 bit; llr 40 correct -> ~0; llr -3 b=0 -> log2(1+e^-3).
    double expected = 1.0 + 0.0 + std::log1p(std::exp(-3.0)) / std::log(2.0);
    CHECK(loss == doctest::Approx(expected).epsilon(1e-9));
    CHECK(bce_with_logits({40.0}, {1}, 1, nullptr) < 1e-10);
    // FD check.
    for (std::size_t i = 0; i < llrs.size(); ++i) {
        auto lp = llrs, lm = llrs;
        lp[i] += 1e-6;
        lm[i] -= 1e-6;
        double fd = (bce_with_logits(lp, bits, 1, nullptr) -
                     bce_with_logits(lm, bits, 1, nullptr)) /
                    2e-6;
        CHECK(std::abs(grad[i] - fd) < 1e-4 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("checkpoint round trip restores parameters by name") {
    auto rng = make_rng(40);
    Sequential a, b;
    a.add(std::make_unique<Conv2D>("c0", 2, 3, 3, 3, 1, 1, rng));
    a.add(std::make_unique<ResNetBlock>("rb", 3, 3, 2, 1, 1, rng));
    b.add(std::make_unique<Conv2D>("c0", 2, 3, 3, 3, 1, 1, rng));
    b.add(std::make_unique<ResNetBlock>("rb", 3, 3, 2, 1, 1, rng));

    auto collect = [](Sequential& s) {
        std::vector<Param*> ps = s.params();
        auto st = s.state();
        ps.insert(ps.end(), st.begin(), st.end());
        return ps;
    };
    std::string path = (std::filesystem::temp_directory_path() / "mumimo_ckpt_test.bin").string();
    save_checkpoint(path, collect(a));
    load_checkpoint(path, collect(b));
    auto pa = collect(a), pb = collect(b);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
    std::filesystem::remove(path);
}

TEST_CASE("initialization is deterministic given the seed") {
    auto r1 = make_rng(50), r2 = make_rng(50);
    Conv2D c1("c", 3, 4, 3, 3, 1, 1, r1), c2("c", 3, 4, 3, 3, 1, 1, r2);
    CHECK(c1.weight().value == c2.weight().value);
}
