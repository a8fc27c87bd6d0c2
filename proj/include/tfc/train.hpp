#pragma once
// Training: the magnitude/complex/time loss combination, an AdamW optimizer
// with decoupled weight decay, and a desk-scale fit loop with resumable
// checkpoints and a JSONL metrics log.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tfc/errors.hpp"
#include "tfc/generator.hpp"
#include "tfc/spectral.hpp"
#include "tfc/tensor.hpp"
#include "tfc/wav.hpp"

namespace tfc {

struct LossWeights {
    double mag = 0.15;
    double ri = 0.85;
    double time = 0.1;

    void validate() const {
        if (mag < 0 || ri < 0 || time < 0) throw ConfigError("loss weights must be nonnegative");
        if (mag == 0 && ri == 0 && time == 0) throw ConfigError("loss weights are all zero");
    }
};

struct LossBreakdown {
    double l_mag = 0;
    double l_ri = 0;
    double l_time = 0;
    double total = 0;
};

// Plain-data loss over reconstructed outputs; the training path builds the
// same three terms as a graph (loss_graph below).
LossBreakdown compute_loss(const CompressedSpecTriplet& clean, const EnhancedSpec& est,
                           const Waveform& x, const Waveform& xhat, const LossWeights& w);

struct TrainConfig {
    double lr = 5e-5;
    long batch_size = 8;
    long epochs = 1;
    std::uint64_t seed = 1;
    double weight_decay = 0.01;
    double grad_clip = 0.0;        // global L2 norm; 0 disables
    std::string manifest;
    std::string out_dir;
    GeneratorConfig gen;
    LossWeights weights;
    StftConfig stft;
    double compress_exponent = 0.3;
    long max_steps = 0;            // stop after this many optimizer steps; 0 = epochs decide
    double stop_loss_ratio = 0.0;  // stop once total <= ratio * first-step total; 0 disables
    long checkpoint_every = 0;     // also write last.ckpt every N steps; 0 = exits only
    std::string resume_from;       // last.ckpt of an earlier run

    void validate() const {
        if (!(lr > 0)) throw ConfigError("learning rate must be positive");
        if (batch_size < 1) throw ConfigError("batch size must be at least 1");
        if (epochs < 0) throw ConfigError("epochs must be nonnegative");
        if (weight_decay < 0) throw ConfigError("weight decay must be nonnegative");
        weights.validate();
        gen.validate();
    }
};

// ---- optimizer ----

// Decoupled weight decay (skipped for normalization affine terms and PReLU
// slopes), then bias-corrected adaptive moments. Strict elementwise loops
// keep updates bitwise reproducible.
template <typename T>
struct AdamW {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    long step_count = 0;
    std::vector<ad::Tensor<T>> m, v;
    std::vector<char> decay;

    static bool decays(const std::string& name) {
        for (const char* suffix : {".gamma", ".beta", ".slope"}) {
            const std::size_t n = std::string(suffix).size();
            if (name.size() >= n && name.compare(name.size() - n, n, suffix) == 0) return false;
        }
        return true;
    }

    void attach(const std::vector<std::pair<std::string, ad::Var<T>>>& params) {
        m.clear();
        v.clear();
        decay.clear();
        step_count = 0;
        for (const auto& [name, p] : params) {
            m.push_back(ad::Tensor<T>::zeros(p->val.shape));
            v.push_back(ad::Tensor<T>::zeros(p->val.shape));
            decay.push_back(decays(name) ? 1 : 0);
        }
    }

    void update(const std::vector<std::pair<std::string, ad::Var<T>>>& params) {
        if (m.size() != params.size()) throw ConfigError("optimizer not attached to these params");
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const ad::Var<T>& p = params[i].second;
            if (p->grad.empty()) continue;
            T* w = p->val.data();
            const T* g = p->grad.data();
            T* mi = m[i].data();
            T* vi = v[i].data();
            const T keep = static_cast<T>(1.0 - lr * (decay[i] ? weight_decay : 0.0));
            const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
            const T c1 = static_cast<T>(1.0 - beta1), c2 = static_cast<T>(1.0 - beta2);
            const T step_size = static_cast<T>(lr / bc1);
            const T denom_scale = static_cast<T>(1.0 / std::sqrt(bc2));
            const T e = static_cast<T>(eps);
            for (long k = 0; k < p->val.count(); ++k) {
                w[k] *= keep;
                mi[k] = b1 * mi[k] + c1 * g[k];
                vi[k] = b2 * vi[k] + c2 * g[k] * g[k];
                w[k] -= step_size * mi[k] / (std::sqrt(vi[k]) * denom_scale + e);
            }
        }
    }
};

// ---- graph loss ----

template <typename T>
struct LossGraphResult {
    ad::Var<T> total;      // backward root
    LossBreakdown parts;   // double-precision readout, total recombined from parts
};

// Targets: xm/xr/xi compressed clean planes shaped like the generator output,
// clean_wave the time-domain target. c is the compression exponent.
template <typename T>
LossGraphResult<T> loss_graph(const GeneratorGraph<T>& g, const ad::Tensor<T>& xm,
                              const ad::Tensor<T>& xr, const ad::Tensor<T>& xi,
                              const ad::Tensor<T>& clean_wave, const StftConfig& cfg, double c,
                              const LossWeights& w) {
    if (g.xr->val.shape != xm.shape || g.xr->val.shape != xr.shape ||
        g.xr->val.shape != xi.shape)
        throw ShapeError("loss_graph: target plane shape mismatch");
    if (g.xr->val.dim(0) != 1) throw ShapeError("loss_graph: expected a single-item batch");
    const long t = g.xr->val.dim(1), f = g.xr->val.dim(2);

    auto msq = ad::add(ad::mul(g.xr, g.xr), ad::mul(g.xi, g.xi));
    auto est_m = ad::sqrt_op(msq);

    auto dm = ad::sub(est_m, ad::constant(xm));
    auto l_mag = ad::mean(ad::mul(dm, dm));

    auto dr = ad::sub(g.xr, ad::constant(xr));
    auto di = ad::sub(g.xi, ad::constant(xi));
    auto l_ri = ad::add(ad::mean(ad::mul(dr, dr)), ad::mean(ad::mul(di, di)));

    // Eq-style decompression: m^((1-c)/c) * (xr + j xi), then the inverse STFT.
    const double q = (1.0 - c) / (2.0 * c);
    auto scale = ad::pow_scalar(msq, static_cast<T>(q));
    auto fr = ad::reshape(ad::mul(scale, g.xr), {t, f});
    auto fi = ad::reshape(ad::mul(scale, g.xi), {t, f});
    auto wav = ad::istft_wave(fr, fi, cfg, clean_wave.count());
    auto l_time = ad::mean(ad::abs_op(ad::sub(wav, ad::constant(clean_wave))));

    LossGraphResult<T> out;
    out.total = ad::add(ad::add(ad::smul(l_mag, static_cast<T>(w.mag)),
                                ad::smul(l_ri, static_cast<T>(w.ri))),
                        ad::smul(l_time, static_cast<T>(w.time)));
    out.parts.l_mag = static_cast<double>(l_mag->val.data()[0]);
    out.parts.l_ri = static_cast<double>(l_ri->val.data()[0]);
    out.parts.l_time = static_cast<double>(l_time->val.data()[0]);
    out.parts.total = w.mag * out.parts.l_mag + w.ri * out.parts.l_ri + w.time * out.parts.l_time;
    return out;
}

// ---- training driver ----

// One example, with everything the step needs precomputed.
template <typename T>
struct TrainItem {
    ad::Tensor<T> ym, yr, yi;  // degraded compressed planes (1, T, F)
    ad::Tensor<T> xm, xr, xi;  // clean compressed planes
    ad::Tensor<T> clean_wave;  // (len)
};

template <typename T>
TrainItem<T> make_train_item(const Waveform& clean, const Waveform& degraded,
                             const StftConfig& cfg, double c) {
    if (clean.size() != degraded.size())
        throw ShapeError("train item: clean/degraded lengths differ");
    auto planes = [&](const Waveform& wv, ad::Tensor<T>& pm, ad::Tensor<T>& pr,
                      ad::Tensor<T>& pi) {
        const CompressedSpecTriplet y = compress(stft(wv, cfg), c);
        pm = ad::Tensor<T>::zeros({1, y.frames, y.bins});
        pr = ad::Tensor<T>::zeros({1, y.frames, y.bins});
        pi = ad::Tensor<T>::zeros({1, y.frames, y.bins});
        for (long i = 0; i < pm.count(); ++i) {
            pm.data()[i] = static_cast<T>(y.mag[i]);
            pr.data()[i] = static_cast<T>(y.re[i]);
            pi.data()[i] = static_cast<T>(y.im[i]);
        }
    };
    TrainItem<T> item;
    planes(degraded, item.ym, item.yr, item.yi);
    planes(clean, item.xm, item.xr, item.xi);
    item.clean_wave = ad::Tensor<T>::zeros({static_cast<long>(clean.size())});
    for (long i = 0; i < item.clean_wave.count(); ++i)
        item.clean_wave.data()[i] = static_cast<T>(clean.samples[i]);
    return item;
}

template <typename T>
struct Trainer {
    GeneratorParams<T> params;
    std::vector<std::pair<std::string, ad::Var<T>>> named;
    AdamW<T> opt;
    StftConfig stft_cfg;
    LossWeights weights;
    double compress_exponent = 0.3;
    double grad_clip = 0.0;
    long global_step = 0;

    Trainer(GeneratorParams<T> p, const TrainConfig& cfg)
        : params(std::move(p)), named(named_params(params, "gen")), stft_cfg(cfg.stft),
          weights(cfg.weights), compress_exponent(cfg.compress_exponent),
          grad_clip(cfg.grad_clip) {
        opt.lr = cfg.lr;
        opt.weight_decay = cfg.weight_decay;
        opt.attach(named);
    }

    // Forward/backward over the batch mean, then one optimizer step.
    LossBreakdown step(const std::vector<const TrainItem<T>*>& batch) {
        if (batch.empty()) throw ConfigError("train step: empty batch");
        for (auto& [name, p] : named) ad::zero_grad(p);

        ad::Var<T> total;
        LossBreakdown acc;
        for (const TrainItem<T>* item : batch) {
            auto g = generator_graph(ad::constant(item->ym), ad::constant(item->yr),
                                     ad::constant(item->yi), params);
            auto lg = loss_graph(g, item->xm, item->xr, item->xi, item->clean_wave, stft_cfg,
                                 compress_exponent, weights);
            total = total ? ad::add(total, lg.total) : lg.total;
            acc.l_mag += lg.parts.l_mag;
            acc.l_ri += lg.parts.l_ri;
            acc.l_time += lg.parts.l_time;
        }
        const double inv = 1.0 / static_cast<double>(batch.size());
        acc.l_mag *= inv;
        acc.l_ri *= inv;
        acc.l_time *= inv;
        acc.total = weights.mag * acc.l_mag + weights.ri * acc.l_ri + weights.time * acc.l_time;
        if (!std::isfinite(acc.total))
            throw DivergedError("training loss is not finite at step " +
                                std::to_string(global_step + 1));

        if (batch.size() > 1) total = ad::smul(total, static_cast<T>(inv));
        ad::backward(total);
        if (grad_clip > 0) clip_gradients();
        opt.update(named);
        ++global_step;
        return acc;
    }

    void clip_gradients() {
        double norm_sq = 0;
        for (auto& [name, p] : named) {
            if (p->grad.empty()) continue;
            for (long k = 0; k < p->grad.count(); ++k) {
                const double g = static_cast<double>(p->grad.data()[k]);
                norm_sq += g * g;
            }
        }
        const double norm = std::sqrt(norm_sq);
        if (norm <= grad_clip) return;
        const T s = static_cast<T>(grad_clip / norm);
        for (auto& [name, p] : named) {
            if (p->grad.empty()) continue;
            for (long k = 0; k < p->grad.count(); ++k) p->grad.data()[k] *= s;
        }
    }
};

struct FitResult {
    std::string best_checkpoint;
    std::string last_checkpoint;
    LossBreakdown first;
    LossBreakdown last;
    double best_validation = 0;
    bool has_validation = false;
    long steps = 0;
};

// Reads the manifest, trains (float32 path), writes last.ckpt/best.ckpt and
// a JSONL metrics log under cfg.out_dir.
FitResult fit(const TrainConfig& cfg);

} // namespace tfc
