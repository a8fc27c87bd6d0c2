#pragma once

// Conformer blocks, the axis-wise T-/F-Conformers, and the five composition
// variants. Blocks run on (N, L, C) sequences; the axis wrappers fold a
// B x T x F x C feature map into batched sequences along one axis.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "tfc/errors.hpp"
#include "tfc/rng.hpp"
#include "tfc/tensor.hpp"

namespace tfc {

enum class TfcVariant { C, P, PC, CPv, CPq };

inline TfcVariant parse_variant(const std::string& tag) {
    if (tag == "C") return TfcVariant::C;
    if (tag == "P") return TfcVariant::P;
    if (tag == "PC") return TfcVariant::PC;
    if (tag == "CPv") return TfcVariant::CPv;
    if (tag == "CPq") return TfcVariant::CPq;
    throw ConfigError("unknown TFC variant: " + tag);
}

inline std::string variant_name(TfcVariant v) {
    switch (v) {
        case TfcVariant::C: return "C";
        case TfcVariant::P: return "P";
        case TfcVariant::PC: return "PC";
        case TfcVariant::CPv: return "CPv";
        case TfcVariant::CPq: return "CPq";
    }
    throw ConfigError("unknown TFC variant tag");
}

struct ConformerConfig {
    long model_dim = 32;
    long num_heads = 4;
    long conv_kernel = 31;

    void validate() const {
        if (model_dim <= 0 || num_heads <= 0 || model_dim % num_heads != 0)
            throw ConfigError("model_dim must be a positive multiple of num_heads");
        if (conv_kernel <= 0 || conv_kernel % 2 == 0)
            throw ConfigError("conv_kernel must be positive and odd");
    }
};

// ---- parameter structs ----

template <typename T>
struct LayerNormParams {
    using scalar = T;
    ad::Var<T> gamma, beta;
};

template <typename T>
struct FfnParams {
    using scalar = T;
    LayerNormParams<T> ln;
    ad::Var<T> w1, b1, w2, b2;
};

template <typename T>
struct MhaParams {
    using scalar = T;
    LayerNormParams<T> ln;
    ad::Var<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename T>
struct ConvModuleParams {
    using scalar = T;
    LayerNormParams<T> ln;
    ad::Var<T> pw1, pw1_b, dw;
    LayerNormParams<T> norm;
    ad::Var<T> pw2, pw2_b;
};

template <typename T>
struct ConformerBlockParams {
    using scalar = T;
    FfnParams<T> ffn1, ffn2;
    MhaParams<T> mha;
    ConvModuleParams<T> conv;
    LayerNormParams<T> ln_out;
    long model_dim = 0;
    long num_heads = 0;
    long conv_kernel = 0;
};

// One TFC module: one F-Conformer plus one T-Conformer.
template <typename T>
struct TfcParams {
    using scalar = T;
    ConformerBlockParams<T> f_block, t_block;
};

// ---- initialization ----

template <typename T>
ad::Var<T> init_weight(std::vector<long> shape, long fan_in, Rng& rng) {
    ad::Tensor<T> w = ad::Tensor<T>::zeros(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (long i = 0; i < w.count(); ++i)
        w.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
    return ad::leaf(std::move(w));
}

template <typename T>
ad::Var<T> init_const(std::vector<long> shape, T v) {
    return ad::leaf(ad::Tensor<T>::full(std::move(shape), v));
}

template <typename T>
LayerNormParams<T> init_layer_norm(long c) {
    return {init_const<T>({c}, T(1)), init_const<T>({c}, T(0))};
}

template <typename T>
FfnParams<T> init_ffn(long c, Rng& rng) {
    FfnParams<T> p;
    p.ln = init_layer_norm<T>(c);
    p.w1 = init_weight<T>({c, 4 * c}, c, rng);
    p.b1 = init_const<T>({4 * c}, T(0));
    p.w2 = init_weight<T>({4 * c, c}, 4 * c, rng);
    p.b2 = init_const<T>({c}, T(0));
    return p;
}

template <typename T>
MhaParams<T> init_mha(long c, Rng& rng) {
    MhaParams<T> p;
    p.ln = init_layer_norm<T>(c);
    p.wq = init_weight<T>({c, c}, c, rng);
    p.bq = init_const<T>({c}, T(0));
    p.wk = init_weight<T>({c, c}, c, rng);
    p.bk = init_const<T>({c}, T(0));
    p.wv = init_weight<T>({c, c}, c, rng);
    p.bv = init_const<T>({c}, T(0));
    p.wo = init_weight<T>({c, c}, c, rng);
    p.bo = init_const<T>({c}, T(0));
    return p;
}

template <typename T>
ConvModuleParams<T> init_conv_module(long c, long kernel, Rng& rng) {
    ConvModuleParams<T> p;
    p.ln = init_layer_norm<T>(c);
    p.pw1 = init_weight<T>({c, 2 * c}, c, rng);
    p.pw1_b = init_const<T>({2 * c}, T(0));
    p.dw = init_weight<T>({kernel, c}, kernel, rng);
    p.norm = init_layer_norm<T>(c);
    p.pw2 = init_weight<T>({c, c}, c, rng);
    p.pw2_b = init_const<T>({c}, T(0));
    return p;
}

template <typename T>
ConformerBlockParams<T> init_conformer_block(const ConformerConfig& cfg, Rng& rng) {
    cfg.validate();
    ConformerBlockParams<T> p;
    p.ffn1 = init_ffn<T>(cfg.model_dim, rng);
    p.mha = init_mha<T>(cfg.model_dim, rng);
    p.conv = init_conv_module<T>(cfg.model_dim, cfg.conv_kernel, rng);
    p.ffn2 = init_ffn<T>(cfg.model_dim, rng);
    p.ln_out = init_layer_norm<T>(cfg.model_dim);
    p.model_dim = cfg.model_dim;
    p.num_heads = cfg.num_heads;
    p.conv_kernel = cfg.conv_kernel;
    return p;
}

template <typename T>
TfcParams<T> init_tfc(const ConformerConfig& cfg, Rng& rng) {
    TfcParams<T> p;
    p.f_block = init_conformer_block<T>(cfg, rng);
    p.t_block = init_conformer_block<T>(cfg, rng);
    return p;
}

// ---- parameter enumeration (stable order, used by optimizer/checkpoints) ----

template <typename T, typename F>
void visit_params(LayerNormParams<T>& p, const std::string& pre, F&& f) {
    f(pre + ".gamma", p.gamma);
    f(pre + ".beta", p.beta);
}

template <typename T, typename F>
void visit_params(FfnParams<T>& p, const std::string& pre, F&& f) {
    visit_params(p.ln, pre + ".ln", f);
    f(pre + ".w1", p.w1);
    f(pre + ".b1", p.b1);
    f(pre + ".w2", p.w2);
    f(pre + ".b2", p.b2);
}

template <typename T, typename F>
void visit_params(MhaParams<T>& p, const std::string& pre, F&& f) {
    visit_params(p.ln, pre + ".ln", f);
    f(pre + ".wq", p.wq);
    f(pre + ".bq", p.bq);
    f(pre + ".wk", p.wk);
    f(pre + ".bk", p.bk);
    f(pre + ".wv", p.wv);
    f(pre + ".bv", p.bv);
    f(pre + ".wo", p.wo);
    f(pre + ".bo", p.bo);
}

template <typename T, typename F>
void visit_params(ConvModuleParams<T>& p, const std::string& pre, F&& f) {
    visit_params(p.ln, pre + ".ln", f);
    f(pre + ".pw1", p.pw1);
    f(pre + ".pw1_b", p.pw1_b);
    f(pre + ".dw", p.dw);
    visit_params(p.norm, pre + ".norm", f);
    f(pre + ".pw2", p.pw2);
    f(pre + ".pw2_b", p.pw2_b);
}

template <typename T, typename F>
void visit_params(ConformerBlockParams<T>& p, const std::string& pre, F&& f) {
    visit_params(p.ffn1, pre + ".ffn1", f);
    visit_params(p.mha, pre + ".mha", f);
    visit_params(p.conv, pre + ".conv", f);
    visit_params(p.ffn2, pre + ".ffn2", f);
    visit_params(p.ln_out, pre + ".ln_out", f);
}

template <typename T, typename F>
void visit_params(TfcParams<T>& p, const std::string& pre, F&& f) {
    visit_params(p.f_block, pre + ".f", f);
    visit_params(p.t_block, pre + ".t", f);
}

template <typename P>
auto named_params(P& p, const std::string& prefix) {
    using T = typename P::scalar;
    std::vector<std::pair<std::string, ad::Var<T>>> out;
    visit_params(p, prefix, [&](const std::string& n, ad::Var<T>& v) { out.emplace_back(n, v); });
    return out;
}

template <typename P>
long param_count(P& p) {
    long n = 0;
    using T = typename P::scalar;
    visit_params(p, "", [&](const std::string&, ad::Var<T>& v) { n += v->val.count(); });
    return n;
}

// ---- forward passes ----

// x flattened to rows over the last dim, times w plus bias, reshaped back.
template <typename T>
ad::Var<T> project_rows(const ad::Var<T>& x, const ad::Var<T>& w, const ad::Var<T>& b) {
    const long c_in = w->val.dim(0), c_out = w->val.dim(1);
    if (x->val.shape.back() != c_in) throw ShapeError("project_rows: channel mismatch");
    const long rows = x->val.count() / c_in;
    std::vector<long> out_shape = x->val.shape;
    out_shape.back() = c_out;
    ad::Var<T> h = ad::matmul(ad::reshape(x, {rows, c_in}), w);
    h = ad::add_bias(h, b);
    return ad::reshape(h, std::move(out_shape));
}

// Scaled dot-product attention with separate q/k/v sources, heads
// concatenated and output-projected. Inputs are (N, L, C) sequences.
template <typename T>
ad::Var<T> multi_head_attention(const ad::Var<T>& q_in, const ad::Var<T>& k_in,
                                const ad::Var<T>& v_in, const MhaParams<T>& p, long heads) {
    if (q_in->val.ndim() != 3 || k_in->val.ndim() != 3 || v_in->val.ndim() != 3)
        throw ShapeError("multi_head_attention: expected N,L,C sequences");
    const long n = q_in->val.dim(0), lq = q_in->val.dim(1), c = q_in->val.dim(2);
    const long lk = k_in->val.dim(1);
    if (k_in->val.dim(0) != n || v_in->val.dim(0) != n || k_in->val.dim(2) != c ||
        v_in->val.dim(2) != c || v_in->val.dim(1) != lk)
        throw ShapeError("multi_head_attention: q/k/v shapes disagree");
    if (heads <= 0 || c % heads != 0)
        throw ShapeError("multi_head_attention: dim not divisible by heads");
    if (p.wq->val.dim(0) != c) throw ShapeError("multi_head_attention: params expect other dim");
    const long dh = c / heads;

    auto split = [&](const ad::Var<T>& x, long l) {
        return ad::reshape(ad::permute(ad::reshape(x, {n, l, heads, dh}), {0, 2, 1, 3}),
                           {n * heads, l, dh});
    };
    ad::Var<T> qh = split(project_rows(q_in, p.wq, p.bq), lq);
    ad::Var<T> kh = split(project_rows(k_in, p.wk, p.bk), lk);
    ad::Var<T> vh = split(project_rows(v_in, p.wv, p.bv), lk);

    const T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));
    ad::Var<T> o = ad::bmm(ad::attention_probs(qh, kh, scale), vh);
    o = ad::reshape(ad::permute(ad::reshape(o, {n, heads, lq, dh}), {0, 2, 1, 3}), {n, lq, c});
    return project_rows(o, p.wo, p.bo);
}

template <typename T>
ad::Var<T> ffn_forward(const ad::Var<T>& x, const FfnParams<T>& p) {
    ad::Var<T> h = ad::layer_norm(x, p.ln.gamma, p.ln.beta);
    h = ad::silu(project_rows(h, p.w1, p.b1));
    return project_rows(h, p.w2, p.b2);
}

// pointwise expand -> GLU -> depthwise along L -> norm -> SiLU -> pointwise
template <typename T>
ad::Var<T> conv_module_forward(const ad::Var<T>& x, const ConvModuleParams<T>& p) {
    const long c = x->val.shape.back();
    ad::Var<T> h = ad::layer_norm(x, p.ln.gamma, p.ln.beta);
    h = project_rows(h, p.pw1, p.pw1_b);
    ad::Var<T> gate = ad::sigmoid(ad::slice_last(h, c, c));
    h = ad::mul(ad::slice_last(h, 0, c), gate);
    h = ad::depthwise_conv1d(h, p.dw);
    h = ad::layer_norm(h, p.norm.gamma, p.norm.beta);
    h = ad::silu(h);
    return project_rows(h, p.pw2, p.pw2_b);
}

// Optional external attention inputs; a null member falls back to the
// block's own stream. External sources pass through the same pre-attention
// layer norm as the self path, so no extra parameters appear.
template <typename T>
struct AttentionSources {
    ad::Var<T> q, k, v;
};

template <typename T>
ad::Var<T> conformer_block(const ad::Var<T>& x, const ConformerBlockParams<T>& p,
                           const AttentionSources<T>& src = {}) {
    if (x->val.ndim() != 3) throw ShapeError("conformer_block: expected N,L,C");
    if (x->val.shape.back() != p.model_dim)
        throw ShapeError("conformer_block: channel dim does not match params");

    ad::Var<T> stream = ad::add(x, ad::smul(ffn_forward(x, p.ffn1), T(0.5)));

    ad::Var<T> self_norm;
    auto normed = [&](const ad::Var<T>& s) -> ad::Var<T> {
        if (!s) {
            if (!self_norm) self_norm = ad::layer_norm(stream, p.mha.ln.gamma, p.mha.ln.beta);
            return self_norm;
        }
        return ad::layer_norm(s, p.mha.ln.gamma, p.mha.ln.beta);
    };
    ad::Var<T> k_in = normed(src.k);
    ad::Var<T> v_in = (src.v && src.v == src.k) ? k_in : normed(src.v);
    ad::Var<T> q_in = normed(src.q);

    stream = ad::add(stream, multi_head_attention(q_in, k_in, v_in, p.mha, p.num_heads));
    stream = ad::add(stream, conv_module_forward(stream, p.conv));
    stream = ad::add(stream, ad::smul(ffn_forward(stream, p.ffn2), T(0.5)));
    return ad::layer_norm(stream, p.ln_out.gamma, p.ln_out.beta);
}

// ---- axis folding ----

template <typename T>
void require_feature_map(const ad::Var<T>& x) {
    if (x->val.ndim() != 4) throw ShapeError("expected feature map B,T,F,C");
}

// (B, T, F, C) -> (B*F, T, C)
template <typename T>
ad::Var<T> to_time_seq(const ad::Var<T>& x) {
    require_feature_map(x);
    const long b = x->val.dim(0), t = x->val.dim(1), f = x->val.dim(2), c = x->val.dim(3);
    return ad::reshape(ad::permute(x, {0, 2, 1, 3}), {b * f, t, c});
}

template <typename T>
ad::Var<T> from_time_seq(const ad::Var<T>& y, long b, long t, long f, long c) {
    return ad::permute(ad::reshape(y, {b, f, t, c}), {0, 2, 1, 3});
}

// (B, T, F, C) -> (B*T, F, C); contiguous, so this is free
template <typename T>
ad::Var<T> to_freq_seq(const ad::Var<T>& x) {
    require_feature_map(x);
    return ad::reshape(x, {x->val.dim(0) * x->val.dim(1), x->val.dim(2), x->val.dim(3)});
}

template <typename T>
ad::Var<T> from_freq_seq(const ad::Var<T>& y, long b, long t, long f, long c) {
    return ad::reshape(y, {b, t, f, c});
}

template <typename T>
ad::Var<T> t_conformer(const ad::Var<T>& x, const ConformerBlockParams<T>& p) {
    require_feature_map(x);
    const long b = x->val.dim(0), t = x->val.dim(1), f = x->val.dim(2), c = x->val.dim(3);
    return from_time_seq(conformer_block(to_time_seq(x), p), b, t, f, c);
}

template <typename T>
ad::Var<T> f_conformer(const ad::Var<T>& x, const ConformerBlockParams<T>& p) {
    require_feature_map(x);
    const long b = x->val.dim(0), t = x->val.dim(1), f = x->val.dim(2), c = x->val.dim(3);
    return from_freq_seq(conformer_block(to_freq_seq(x), p), b, t, f, c);
}

// The five compositions. External attention sources reuse the T-block's
// pre-attention layer norm, so every variant carries identical parameters.
template <typename T>
ad::Var<T> apply_tfc(const ad::Var<T>& x, TfcVariant variant, const TfcParams<T>& p) {
    require_feature_map(x);
    const long b = x->val.dim(0), t = x->val.dim(1), f = x->val.dim(2), c = x->val.dim(3);
    switch (variant) {
        case TfcVariant::C:
            return t_conformer(f_conformer(x, p.f_block), p.t_block);
        case TfcVariant::P:
            return ad::add(t_conformer(x, p.t_block), f_conformer(x, p.f_block));
        case TfcVariant::PC: {
            AttentionSources<T> src;
            src.v = to_time_seq(f_conformer(x, p.f_block));
            return from_time_seq(conformer_block(to_time_seq(x), p.t_block, src), b, t, f, c);
        }
        case TfcVariant::CPv: {
            ad::Var<T> fx = f_conformer(x, p.f_block);
            AttentionSources<T> src;
            src.v = to_time_seq(x);
            return from_time_seq(conformer_block(to_time_seq(fx), p.t_block, src), b, t, f, c);
        }
        case TfcVariant::CPq: {
            ad::Var<T> ft = to_time_seq(f_conformer(x, p.f_block));
            AttentionSources<T> src;
            src.q = to_time_seq(x);
            src.k = ft;
            src.v = ft;
            return from_time_seq(conformer_block(ft, p.t_block, src), b, t, f, c);
        }
    }
    throw ConfigError("unknown TFC variant");
}

}  // namespace tfc
