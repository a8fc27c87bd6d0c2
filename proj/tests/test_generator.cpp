#include "doctest.h"

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tfc/generator.hpp"
#include "tfc/rng.hpp"
#include "tfc/spectral.hpp"

using namespace tfc;
using ad::Tensor;
using ad::Var;

namespace {

using V = Var<double>;

Tensor<double> random_tensor(std::vector<long> shape, Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
    Tensor<double> t = Tensor<double>::zeros(std::move(shape));
    for (long i = 0; i < t.count(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

double loss_value(const std::function<V()>& make_loss) { return make_loss()->val.data()[0]; }

void check_grads(const std::function<V()>& make_loss, const std::vector<V>& leaves,
                 double tol = 1e-4, double h = 1e-5) {
    for (const V& l : leaves) ad::zero_grad(l);
    V loss = make_loss();
    ad::backward(loss);
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        const V& l = leaves[li];
        REQUIRE(!l->grad.empty());
        for (long i = 0; i < l->val.count(); ++i) {
            const double keep = l->val.data()[i];
            l->val.data()[i] = keep + h;
            const double up = loss_value(make_loss);
            l->val.data()[i] = keep - h;
            const double dn = loss_value(make_loss);
            l->val.data()[i] = keep;
            const double fd = (up - dn) / (2.0 * h);
            const double an = l->grad.data()[i];
            const double scale = std::max({1.0, std::abs(fd), std::abs(an)});
            CAPTURE(li);
            CAPTURE(i);
            CAPTURE(fd);
            CAPTURE(an);
            CHECK(std::abs(fd - an) <= tol * scale);
        }
    }
}

// Spot-checks a few coordinates per tensor; exhaustive FD over the whole
// model would dominate the suite's runtime for no extra signal.
void check_grads_sampled(const std::function<V()>& make_loss,
                         const std::vector<std::pair<std::string, V>>& named, long per_tensor,
                         Rng& rng, double tol, double h = 1e-5) {
    for (const auto& nv : named) ad::zero_grad(nv.second);
    V loss = make_loss();
    ad::backward(loss);
    for (const auto& [name, l] : named) {
        REQUIRE(!l->grad.empty());
        const long n = l->val.count();
        for (long s = 0; s < std::min(per_tensor, n); ++s) {
            const long i = n <= per_tensor ? s : static_cast<long>(rng.next_below(n));
            const double keep = l->val.data()[i];
            l->val.data()[i] = keep + h;
            const double up = loss_value(make_loss);
            l->val.data()[i] = keep - h;
            const double dn = loss_value(make_loss);
            l->val.data()[i] = keep;
            const double fd = (up - dn) / (2.0 * h);
            const double an = l->grad.data()[i];
            const double scale = std::max({1.0, std::abs(fd), std::abs(an)});
            CAPTURE(name);
            CAPTURE(i);
            CAPTURE(fd);
            CAPTURE(an);
            CHECK(std::abs(fd - an) <= tol * scale);
        }
    }
}

GeneratorConfig tiny_config(TfcVariant v = TfcVariant::C, long c = 4) {
    GeneratorConfig cfg;
    cfg.base_channels = c;
    cfg.variant = v;
    cfg.num_heads = 2;
    cfg.conv_kernel = 3;
    return cfg;
}

void randomize_all_biases(GeneratorParams<double>& p, Rng& rng) {
    visit_params(p, "", [&](const std::string& name, V& v) {
        if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0)
            for (long i = 0; i < v->val.count(); ++i) v->val.data()[i] = rng.uniform(-0.5, 0.5);
    });
}

}  // namespace

TEST_SUITE("generator") {

TEST_CASE("encoder halves the frequency axis at full spectrogram size") {
    Rng rng(401);
    GeneratorParams<double> p = init_generator<double>(tiny_config(), rng);
    V x = ad::leaf(random_tensor({1, 188, 512, 3}, rng));
    x->requires_grad = false;
    V z = encode(x, p);
    REQUIRE(z->val.shape == std::vector<long>({1, 188, 256, 4}));
    long bad = 0;
    for (long i = 0; i < z->val.count(); ++i)
        if (!std::isfinite(z->val.data()[i])) ++bad;
    CHECK(bad == 0);

    V z2 = encode(x, p);
    long diff = 0;
    for (long i = 0; i < z->val.count(); ++i)
        if (z->val.data()[i] != z2->val.data()[i]) ++diff;
    CHECK(diff == 0);
}

TEST_CASE("encoder rejects malformed inputs") {
    Rng rng(402);
    GeneratorParams<double> p = init_generator<double>(tiny_config(), rng);
    V odd = ad::leaf(random_tensor({1, 4, 15, 3}, rng));
    CHECK_THROWS_AS((void)encode(odd, p), ShapeError);
    V planes = ad::leaf(random_tensor({1, 4, 16, 2}, rng));
    CHECK_THROWS_AS((void)encode(planes, p), ShapeError);
    GeneratorConfig bad = tiny_config();
    bad.dilations = {1, 2, 4, 4};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("encoder gradients match finite differences") {
    Rng rng(403);
    GeneratorParams<double> p = init_generator<double>(tiny_config(), rng);
    randomize_all_biases(p, rng);
    V x = ad::leaf(random_tensor({1, 8, 16, 3}, rng));
    auto make_loss = [&]() { return ad::sum(encode(x, p)); };

    std::vector<V> leaves{x};
    for (auto& [name, v] : named_params(p.enc, "enc")) leaves.push_back(v);
    check_grads(make_loss, leaves, 1e-4);
}

TEST_CASE("mask decoder doubles frequency and stays finite") {
    Rng rng(404);
    GeneratorParams<double> p = init_generator<double>(tiny_config(), rng);
    randomize_all_biases(p, rng);
    V z = ad::leaf(random_tensor({1, 6, 256, 4}, rng));
    V m = mask_decode(z, p);
    REQUIRE(m->val.shape == std::vector<long>({1, 6, 512}));
    long bad = 0;
    for (long i = 0; i < m->val.count(); ++i)
        if (!std::isfinite(m->val.data()[i])) ++bad;
    CHECK(bad == 0);
}

TEST_CASE("subpixel shuffle interleaves channels into frequency") {
    // (1,1,2,2): frequencies {f0,f1} with channel pairs (a0,a1), (b0,b1)
    Tensor<double> t = Tensor<double>::zeros({1, 1, 2, 2});
    t.data()[0] = 10.0;  // f0 c0
    t.data()[1] = 11.0;  // f0 c1
    t.data()[2] = 20.0;  // f1 c0
    t.data()[3] = 21.0;  // f1 c1
    V up = ad::subpixel_freq2(ad::leaf(std::move(t)));
    REQUIRE(up->val.shape == std::vector<long>({1, 1, 4, 1}));
    CHECK(up->val.data()[0] == 10.0);
    CHECK(up->val.data()[1] == 11.0);
    CHECK(up->val.data()[2] == 20.0);
    CHECK(up->val.data()[3] == 21.0);

    // 4 channels fold into 2: even output bins take the first half
    Tensor<double> s = Tensor<double>::zeros({1, 1, 2, 4});
    for (long i = 0; i < 8; ++i) s.data()[i] = static_cast<double>(i);
    V up2 = ad::subpixel_freq2(ad::leaf(std::move(s)));
    REQUIRE(up2->val.shape == std::vector<long>({1, 1, 4, 2}));
    const double want[8] = {0, 1, 2, 3, 4, 5, 6, 7};
    for (long i = 0; i < 8; ++i) CHECK(up2->val.data()[i] == want[i]);
}

TEST_CASE("complex decoder emits two planes with reproducible bias response") {
    Rng rng(405);
    GeneratorParams<double> p = init_generator<double>(tiny_config(), rng);
    randomize_all_biases(p, rng);
    V z = ad::leaf(ad::Tensor<double>::zeros({1, 5, 8, 4}));
    auto [rr, ri] = complex_decode(z, p);
    REQUIRE(rr->val.shape == std::vector<long>({1, 5, 16}));
    REQUIRE(ri->val.shape == std::vector<long>({1, 5, 16}));

    auto [rr2, ri2] = complex_decode(z, p);
    long diff = 0, nonzero = 0;
    for (long i = 0; i < rr->val.count(); ++i) {
        if (rr->val.data()[i] != rr2->val.data()[i]) ++diff;
        if (ri->val.data()[i] != ri2->val.data()[i]) ++diff;
        if (rr->val.data()[i] != 0.0) ++nonzero;
    }
    CHECK(diff == 0);
    CHECK(nonzero > 0);  // biases alone drive the zero-input response
}

TEST_CASE("complex decoder gradients match finite differences") {
    Rng rng(406);
    GeneratorParams<double> p = init_generator<double>(tiny_config(), rng);
    randomize_all_biases(p, rng);
    V z = ad::leaf(random_tensor({1, 8, 8, 4}, rng));
    auto make_loss = [&]() {
        auto [rr, ri] = complex_decode(z, p);
        return ad::add(ad::sum(rr), ad::sum(ad::mul(ri, ri)));
    };
    std::vector<V> leaves{z};
    for (auto& [name, v] : named_params(p.cplx_dec, "cplx")) leaves.push_back(v);
    check_grads(make_loss, leaves, 1e-4);
}

TEST_CASE("identity-configured weights pass the noisy spectrogram through") {
    Rng rng(407);
    Waveform w;
    w.sample_rate = 16000;
    w.samples.resize(4096);
    for (double& s : w.samples) s = rng.uniform(-0.8, 0.8);

    StftConfig cfg;
    const ComplexSpectrogram S = stft(w, cfg);
    const CompressedSpecTriplet y = compress(S, 0.3);

    GeneratorParams<double> p = init_generator<double>(tiny_config(TfcVariant::CPq), rng);
    randomize_all_biases(p, rng);
    auto fill = [](V& v, double val) {
        for (long i = 0; i < v->val.count(); ++i) v->val.data()[i] = val;
    };
    fill(p.mask_dec.out_w, 0.0);
    fill(p.mask_dec.out_b, 1.0);
    fill(p.cplx_dec.out_w, 0.0);
    fill(p.cplx_dec.out_b, 0.0);

    const EnhancedSpec out = generator_forward(y, p);
    REQUIRE(out.frames == y.frames);
    REQUIRE(out.bins == y.bins);
    long mism = 0;
    for (std::size_t i = 0; i < y.mag.size(); ++i) {
        if (out.masked_mag[i] != y.mag[i]) ++mism;
        if (out.res_r[i] != 0.0 || out.res_i[i] != 0.0) ++mism;
        if (out.xr[i] != y.re[i]) ++mism;
        if (out.xi[i] != y.im[i]) ++mism;
    }
    CHECK(mism == 0);
}

TEST_CASE("full model gradient of the complex loss matches finite differences") {
    Rng rng(408);
    GeneratorConfig cfg = tiny_config(TfcVariant::CPq);
    GeneratorParams<double> p = init_generator<double>(cfg, rng);
    randomize_all_biases(p, rng);

    const long t = 8, f = 16;
    V ym = ad::leaf(random_tensor({1, t, f}, rng, 0.2, 1.0));
    V yr = ad::leaf(random_tensor({1, t, f}, rng));
    V yi = ad::leaf(random_tensor({1, t, f}, rng));
    V tr = ad::constant(random_tensor({1, t, f}, rng));
    V ti = ad::constant(random_tensor({1, t, f}, rng));

    auto make_loss = [&]() {
        auto g = generator_graph(ym, yr, yi, p);
        auto dr = ad::sub(g.xr, tr);
        auto di = ad::sub(g.xi, ti);
        return ad::add(ad::mean(ad::mul(dr, dr)), ad::mean(ad::mul(di, di)));
    };

    std::vector<std::pair<std::string, V>> named = named_params(p, "g");
    named.emplace_back("input.ym", ym);
    named.emplace_back("input.yr", yr);
    named.emplace_back("input.yi", yi);
    Rng pick(409);
    check_grads_sampled(make_loss, named, 3, pick, 1e-3);
}

TEST_CASE("parameter count is variant-independent and grows with width") {
    Rng rng(410);
    const TfcVariant variants[] = {TfcVariant::C, TfcVariant::P, TfcVariant::PC,
                                   TfcVariant::CPv, TfcVariant::CPq};
    long base = -1;
    for (TfcVariant v : variants) {
        GeneratorParams<double> p = init_generator<double>(tiny_config(v), rng);
        const long n = param_count(p);
        if (base < 0) base = n;
        CHECK(n == base);
    }
    GeneratorParams<double> p6 = init_generator<double>(tiny_config(TfcVariant::C, 6), rng);
    GeneratorParams<double> p8 = init_generator<double>(tiny_config(TfcVariant::C, 8), rng);
    CHECK(base < param_count(p6));
    CHECK(param_count(p6) < param_count(p8));
}

TEST_CASE("shape guards reject mismatched planes") {
    Rng rng(411);
    GeneratorParams<double> p = init_generator<double>(tiny_config(), rng);
    V ym = ad::leaf(random_tensor({1, 4, 16}, rng, 0.2, 1.0));
    V yr = ad::leaf(random_tensor({1, 4, 16}, rng));
    V yi_bad = ad::leaf(random_tensor({1, 4, 8}, rng));
    V flat = ad::leaf(random_tensor({4, 16}, rng));

    CHECK_THROWS_AS((void)generator_graph(ym, yr, yi_bad, p), ShapeError);
    CHECK_THROWS_AS((void)generator_graph(flat, flat, flat, p), ShapeError);

    CompressedSpecTriplet y;
    y.frames = 4;
    y.bins = 16;
    y.mag.assign(64, 0.5);
    y.re.assign(64, 0.1);
    y.im.assign(32, 0.1);  // short plane
    CHECK_THROWS_AS((void)generator_forward(y, p), ShapeError);
}

}  // TEST_SUITE
