#pragma once
// Waveform enhancement: compressed STFT in, generator forward, resynthesis
// out. Long files are processed in 3 s windows joined by an equal-power
// crossfade; everything at or under the whole-file limit goes through in one
// pass.

#include <cmath>
#include <memory>
#include <string>

#include "tfc/generator.hpp"
#include "tfc/spectral.hpp"
#include "tfc/wav.hpp"

namespace tfc {

inline constexpr long kEnhanceWholeFileLimit = 30L * kPipelineSampleRate;
inline constexpr long kEnhanceWindow = 3L * kPipelineSampleRate;
inline constexpr long kEnhanceCrossfade = kPipelineSampleRate / 4;

template <typename T>
Waveform enhance_segment(const Waveform& in, GeneratorParams<T>& p, const StftConfig& cfg,
                         double c) {
    const CompressedSpecTriplet y = compress(stft(in, cfg), c);
    EnhancedSpec est = generator_forward(y, p);
    CompressedSpecTriplet t;
    t.frames = static_cast<int>(est.frames);
    t.bins = static_cast<int>(est.bins);
    t.exponent = c;
    t.mag = std::move(est.masked_mag);
    t.re = std::move(est.xr);
    t.im = std::move(est.xi);
    return resynthesize(t, cfg, static_cast<long>(in.size()));
}

template <typename T>
Waveform enhance_waveform(const Waveform& in, GeneratorParams<T>& p, const StftConfig& cfg,
                          double c) {
    const long n = static_cast<long>(in.size());
    if (n == 0) throw ShapeError("enhance: empty waveform");
    if (n <= kEnhanceWholeFileLimit) {
        Waveform out = enhance_segment(in, p, cfg, c);
        out.sample_rate = in.sample_rate;
        return out;
    }

    Waveform out;
    out.sample_rate = in.sample_rate;
    out.samples.assign(n, 0.0);
    const long stride = kEnhanceWindow - kEnhanceCrossfade;
    for (long start = 0; start < n; start += stride) {
        const long len = std::min(kEnhanceWindow, n - start);
        Waveform seg;
        seg.sample_rate = in.sample_rate;
        seg.samples.assign(in.samples.begin() + start, in.samples.begin() + start + len);
        const Waveform enh = enhance_segment(seg, p, cfg, c);

        const long fade = start == 0 ? 0 : std::min(kEnhanceCrossfade, len);
        for (long i = 0; i < fade; ++i) {
            const double th = fade > 1
                                  ? M_PI_2 * static_cast<double>(i) / static_cast<double>(fade - 1)
                                  : M_PI_4;
            out.samples[start + i] =
                std::cos(th) * out.samples[start + i] + std::sin(th) * enh.samples[i];
        }
        for (long i = fade; i < len; ++i) out.samples[start + i] = enh.samples[i];
    }
    return out;
}

// Loads a checkpoint once and enhances any number of waveforms with it,
// dispatching on the stored parameter precision.
class Enhancer {
public:
    explicit Enhancer(const std::string& checkpoint_path, StftConfig cfg = {},
                      double compress_exponent = 0.3);
    ~Enhancer();
    Enhancer(Enhancer&&) noexcept;
    Enhancer& operator=(Enhancer&&) noexcept;

    Waveform enhance(const Waveform& in);
    const GeneratorConfig& config() const { return gen_cfg_; }
    int dtype_bytes() const { return dtype_bytes_; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    StftConfig cfg_;
    double c_ = 0.3;
    int dtype_bytes_ = 0;
    GeneratorConfig gen_cfg_;
};

} // namespace tfc
