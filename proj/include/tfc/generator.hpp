#pragma once
// CMGAN-style enhancement generator: a dilated-DenseNet encoder that halves
// the frequency axis, a stack of TFC modules as the bottleneck, and two
// decoders (magnitude mask, complex residual) recombined with the noisy
// phase: X_r = (M * Y_m) cos(phase) + R_r, likewise for the imaginary part.
// The compressed planes already carry the phase factors (Y_r = Y_m cos,
// Y_i = Y_m sin), so the recombination is computed as M * Y_r + R_r; this is
// the same equation regrouped, and it avoids recomputing cos/sin, whose
// low bits depend on whether the compiler fused them into one sincos call.

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "tfc/conformer.hpp"
#include "tfc/errors.hpp"
#include "tfc/rng.hpp"
#include "tfc/spectral.hpp"
#include "tfc/tensor.hpp"

namespace tfc {

struct GeneratorConfig {
    long base_channels = 16;
    std::array<long, 4> dilations{1, 2, 4, 8};
    TfcVariant variant = TfcVariant::C;
    long tfc_depth = 2;
    long num_heads = 4;
    long conv_kernel = 31;

    ConformerConfig conformer() const { return {base_channels, num_heads, conv_kernel}; }

    void validate() const {
        if (base_channels <= 0) throw ConfigError("base_channels must be positive");
        if (dilations != std::array<long, 4>{1, 2, 4, 8})
            throw ConfigError("densenet dilations must be [1,2,4,8]");
        if (tfc_depth <= 0) throw ConfigError("tfc_depth must be positive");
        conformer().validate();
    }
};

// ---- parameter structs ----

// One conv -> instance norm -> PReLU stage.
template <typename T>
struct ConvUnitParams {
    using scalar = T;
    ad::Var<T> w, b, gamma, beta, slope;
};

template <typename T>
struct DenseNetParams {
    using scalar = T;
    std::vector<ConvUnitParams<T>> layers;
};

template <typename T>
struct EncoderParams {
    using scalar = T;
    ConvUnitParams<T> in;    // 1x1, 3 -> C
    DenseNetParams<T> dense; // 3x3, time-dilated, growth C
    ConvUnitParams<T> down;  // 1x3, frequency stride 2
};

template <typename T>
struct DecoderParams {
    using scalar = T;
    DenseNetParams<T> dense;
    ad::Var<T> up_w, up_b;          // 1x3, C -> 2C feeding the subpixel shuffle
    ad::Var<T> up_gamma, up_beta, up_slope;
    ad::Var<T> out_w, out_b;        // 1x1, C -> output channels
    ad::Var<T> out_slope;           // mask decoder only; null for the complex decoder
};

template <typename T>
struct GeneratorParams {
    using scalar = T;
    GeneratorConfig cfg;
    EncoderParams<T> enc;
    std::vector<TfcParams<T>> tfc;
    DecoderParams<T> mask_dec;
    DecoderParams<T> cplx_dec;
};

// ---- initialization ----

template <typename T>
ConvUnitParams<T> init_conv_unit(long kt, long kf, long ci, long co, Rng& rng) {
    ConvUnitParams<T> p;
    p.w = init_weight<T>({kt, kf, ci, co}, kt * kf * ci, rng);
    p.b = init_const<T>({co}, T(0));
    p.gamma = init_const<T>({co}, T(1));
    p.beta = init_const<T>({co}, T(0));
    p.slope = init_const<T>({co}, T(0.25));
    return p;
}

template <typename T>
DenseNetParams<T> init_dense_net(long c, Rng& rng) {
    DenseNetParams<T> p;
    for (long j = 1; j <= 4; ++j) p.layers.push_back(init_conv_unit<T>(3, 3, c * j, c, rng));
    return p;
}

template <typename T>
DecoderParams<T> init_decoder(long c, long out_channels, bool out_act, Rng& rng) {
    DecoderParams<T> p;
    p.dense = init_dense_net<T>(c, rng);
    p.up_w = init_weight<T>({1, 3, c, 2 * c}, 3 * c, rng);
    p.up_b = init_const<T>({2 * c}, T(0));
    p.up_gamma = init_const<T>({c}, T(1));
    p.up_beta = init_const<T>({c}, T(0));
    p.up_slope = init_const<T>({c}, T(0.25));
    p.out_w = init_weight<T>({1, 1, c, out_channels}, c, rng);
    p.out_b = init_const<T>({out_channels}, T(0));
    if (out_act) p.out_slope = init_const<T>({1}, T(0.25));
    return p;
}

template <typename T>
GeneratorParams<T> init_generator(const GeneratorConfig& cfg, Rng& rng) {
    cfg.validate();
    const long c = cfg.base_channels;
    GeneratorParams<T> p;
    p.cfg = cfg;
    p.enc.in = init_conv_unit<T>(1, 1, 3, c, rng);
    p.enc.dense = init_dense_net<T>(c, rng);
    p.enc.down = init_conv_unit<T>(1, 3, c, c, rng);
    for (long k = 0; k < cfg.tfc_depth; ++k) p.tfc.push_back(init_tfc<T>(cfg.conformer(), rng));
    p.mask_dec = init_decoder<T>(c, 1, true, rng);
    p.cplx_dec = init_decoder<T>(c, 2, false, rng);
    return p;
}

// ---- parameter enumeration ----

template <typename T, typename F>
void visit_params(ConvUnitParams<T>& p, const std::string& pre, F&& f) {
    f(pre + ".w", p.w);
    f(pre + ".b", p.b);
    f(pre + ".gamma", p.gamma);
    f(pre + ".beta", p.beta);
    f(pre + ".slope", p.slope);
}

template <typename T, typename F>
void visit_params(DenseNetParams<T>& p, const std::string& pre, F&& f) {
    for (std::size_t j = 0; j < p.layers.size(); ++j)
        visit_params(p.layers[j], pre + "." + std::to_string(j), f);
}

template <typename T, typename F>
void visit_params(EncoderParams<T>& p, const std::string& pre, F&& f) {
    visit_params(p.in, pre + ".in", f);
    visit_params(p.dense, pre + ".dense", f);
    visit_params(p.down, pre + ".down", f);
}

template <typename T, typename F>
void visit_params(DecoderParams<T>& p, const std::string& pre, F&& f) {
    visit_params(p.dense, pre + ".dense", f);
    f(pre + ".up.w", p.up_w);
    f(pre + ".up.b", p.up_b);
    f(pre + ".up.gamma", p.up_gamma);
    f(pre + ".up.beta", p.up_beta);
    f(pre + ".up.slope", p.up_slope);
    f(pre + ".out.w", p.out_w);
    f(pre + ".out.b", p.out_b);
    if (p.out_slope) f(pre + ".out.slope", p.out_slope);
}

template <typename T, typename F>
void visit_params(GeneratorParams<T>& p, const std::string& pre, F&& f) {
    visit_params(p.enc, pre + ".enc", f);
    for (std::size_t k = 0; k < p.tfc.size(); ++k)
        visit_params(p.tfc[k], pre + ".tfc." + std::to_string(k), f);
    visit_params(p.mask_dec, pre + ".mask", f);
    visit_params(p.cplx_dec, pre + ".cplx", f);
}

template <typename P>
void set_requires_grad(P& p, bool on) {
    using T = typename P::scalar;
    visit_params(p, "", [on](const std::string&, ad::Var<T>& v) { v->requires_grad = on; });
}

// ---- forward graphs ----

template <typename T>
ad::Var<T> conv_unit(const ad::Var<T>& x, ConvUnitParams<T>& p, long dil_t, long stride_f,
                     long pad_t, long pad_f) {
    auto y = ad::conv2d(x, p.w, p.b, dil_t, stride_f, pad_t, pad_f);
    y = ad::instance_norm(y, p.gamma, p.beta);
    return ad::prelu(y, p.slope);
}

// Each layer consumes the block input concatenated with every earlier
// layer's output; returns the last layer's output (growth-rate channels).
template <typename T>
ad::Var<T> dense_net(const ad::Var<T>& x, DenseNetParams<T>& p, const std::array<long, 4>& dil) {
    if (p.layers.size() != dil.size()) throw ShapeError("dense_net: layer/dilation mismatch");
    std::vector<ad::Var<T>> feats{x};
    ad::Var<T> y = x;
    for (std::size_t j = 0; j < p.layers.size(); ++j) {
        ad::Var<T> in = feats.size() == 1 ? feats[0] : ad::concat_last(feats);
        y = conv_unit(in, p.layers[j], dil[j], 1, dil[j], 1);
        feats.push_back(y);
    }
    return y;
}

// x: (B, T, F, 3) with even F -> (B, T, F/2, C).
template <typename T>
ad::Var<T> encode(const ad::Var<T>& x, GeneratorParams<T>& p) {
    if (x->val.ndim() != 4 || x->val.dim(3) != 3)
        throw ShapeError("encode: expected B,T,F,3 input");
    if (x->val.dim(2) % 2 != 0) throw ShapeError("encode: frequency dim must be even");
    auto h = conv_unit(x, p.enc.in, 1, 1, 0, 0);
    h = dense_net(h, p.enc.dense, p.cfg.dilations);
    return conv_unit(h, p.enc.down, 1, 2, 0, 1);
}

template <typename T>
ad::Var<T> decoder_body(const ad::Var<T>& z, DecoderParams<T>& p, const std::array<long, 4>& dil) {
    auto h = dense_net(z, p.dense, dil);
    h = ad::conv2d(h, p.up_w, p.up_b, 1, 1, 0, 1);
    h = ad::subpixel_freq2(h);
    h = ad::instance_norm(h, p.up_gamma, p.up_beta);
    h = ad::prelu(h, p.up_slope);
    return ad::conv2d(h, p.out_w, p.out_b, 1, 1, 0, 0);
}

// z: (B, T, F', C) -> mask (B, T, 2F').
template <typename T>
ad::Var<T> mask_decode(const ad::Var<T>& z, GeneratorParams<T>& p) {
    auto m = decoder_body(z, p.mask_dec, p.cfg.dilations);
    m = ad::prelu(m, p.mask_dec.out_slope);
    return ad::reshape(m, {m->val.dim(0), m->val.dim(1), m->val.dim(2)});
}

// z: (B, T, F', C) -> residuals (B, T, 2F') x 2.
template <typename T>
std::pair<ad::Var<T>, ad::Var<T>> complex_decode(const ad::Var<T>& z, GeneratorParams<T>& p) {
    auto out = decoder_body(z, p.cplx_dec, p.cfg.dilations);
    const long b = out->val.dim(0), t = out->val.dim(1), f = out->val.dim(2);
    auto rr = ad::reshape(ad::slice_last(out, 0, 1), {b, t, f});
    auto ri = ad::reshape(ad::slice_last(out, 1, 1), {b, t, f});
    return {rr, ri};
}

template <typename T>
struct GeneratorGraph {
    ad::Var<T> xr, xi;        // recombined outputs
    ad::Var<T> masked_mag;    // mask * Y_m
    ad::Var<T> res_r, res_i;  // complex-decoder residuals
};

// ym/yr/yi: (B, T, F) compressed planes.
template <typename T>
GeneratorGraph<T> generator_graph(const ad::Var<T>& ym, const ad::Var<T>& yr,
                                  const ad::Var<T>& yi, GeneratorParams<T>& p) {
    if (ym->val.ndim() != 3) throw ShapeError("generator: expected B,T,F planes");
    if (ym->val.shape != yr->val.shape || ym->val.shape != yi->val.shape)
        throw ShapeError("generator: plane shapes differ");
    const long b = ym->val.dim(0), t = ym->val.dim(1), f = ym->val.dim(2);

    auto x = ad::concat_last(std::vector<ad::Var<T>>{ad::reshape(ym, {b, t, f, 1}),
                                                     ad::reshape(yr, {b, t, f, 1}),
                                                     ad::reshape(yi, {b, t, f, 1})});
    auto z = encode(x, p);
    auto u = z;
    for (auto& tfc_params : p.tfc) u = apply_tfc(u, p.cfg.variant, tfc_params);
    auto d = ad::add(u, z);

    GeneratorGraph<T> g;
    auto mask = mask_decode(d, p);
    g.masked_mag = ad::mul(mask, ym);
    auto rr_ri = complex_decode(d, p);
    g.res_r = rr_ri.first;
    g.res_i = rr_ri.second;
    g.xr = ad::add(ad::mul(mask, yr), g.res_r);
    g.xi = ad::add(ad::mul(mask, yi), g.res_i);
    return g;
}

// Plain-data forward for inference paths.
struct EnhancedSpec {
    long frames = 0;
    long bins = 0;
    std::vector<double> xr, xi;                  // recombined grids
    std::vector<double> masked_mag, res_r, res_i;
};

template <typename T>
EnhancedSpec generator_forward(const CompressedSpecTriplet& y, GeneratorParams<T>& p) {
    if (y.mag.size() != static_cast<std::size_t>(y.frames) * y.bins ||
        y.re.size() != y.mag.size() || y.im.size() != y.mag.size())
        throw ShapeError("generator_forward: inconsistent triplet planes");
    const long t = y.frames, f = y.bins;
    auto plane = [&](const std::vector<double>& src) {
        ad::Tensor<T> v = ad::Tensor<T>::zeros({1, t, f});
        for (long i = 0; i < v.count(); ++i) v.data()[i] = static_cast<T>(src[i]);
        return ad::constant(std::move(v));
    };
    auto g = generator_graph(plane(y.mag), plane(y.re), plane(y.im), p);

    EnhancedSpec out;
    out.frames = t;
    out.bins = f;
    auto dump = [](const ad::Var<T>& v, std::vector<double>& dst) {
        dst.resize(static_cast<std::size_t>(v->val.count()));
        for (long i = 0; i < v->val.count(); ++i) dst[i] = static_cast<double>(v->val.data()[i]);
    };
    dump(g.xr, out.xr);
    dump(g.xi, out.xi);
    dump(g.masked_mag, out.masked_mag);
    dump(g.res_r, out.res_r);
    dump(g.res_i, out.res_i);
    return out;
}

} // namespace tfc
