#include "tfc/spectral.hpp"

#include <algorithm>
#include <cmath>

#include "tfc/errors.hpp"
#include "tfc/fft.hpp"

namespace tfc {

std::vector<double> make_window(WindowKind kind, int n) {
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i) {
        const double c = std::cos(2.0 * M_PI * i / n); // periodic form
        w[i] = (kind == WindowKind::Hamming) ? 0.54 - 0.46 * c : 0.5 - 0.5 * c;
    }
    return w;
}

namespace {

// Reflect index into [0, n), bouncing off both ends (no edge repeat).
long reflect_index(long i, long n) {
    if (n == 1) return 0;
    const long period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

std::vector<double> pad_center(const std::vector<double>& x, int pad) {
    const long n = static_cast<long>(x.size());
    std::vector<double> out(n + 2L * pad);
    for (long i = 0; i < static_cast<long>(out.size()); ++i)
        out[i] = x[reflect_index(i - pad, n)];
    return out;
}

void validate(const StftConfig& cfg) {
    if (!is_pow2(cfg.fft_size) || cfg.hop <= 0 || cfg.hop > cfg.fft_size)
        throw ConfigError("invalid STFT config: fft_size=" + std::to_string(cfg.fft_size) +
                          " hop=" + std::to_string(cfg.hop));
}

} // namespace

ComplexSpectrogram stft_full(const Waveform& x, const StftConfig& cfg) {
    validate(cfg);
    if (x.samples.empty()) throw InvalidInput("stft: empty input waveform");
    for (double v : x.samples)
        if (!std::isfinite(v)) throw InvalidInput("stft: non-finite sample in input");

    const int n = cfg.fft_size;
    const int pad = cfg.centered ? n / 2 : 0;
    const std::vector<double> padded = cfg.centered ? pad_center(x.samples, pad) : x.samples;
    const std::vector<double> win = make_window(cfg.window, n);

    ComplexSpectrogram S;
    S.cfg = cfg;
    S.frames = cfg.frames_for(x.samples.size());
    S.bins = cfg.full_bins();
    S.data.resize(static_cast<std::size_t>(S.frames) * S.bins);

    std::vector<double> frame(n);
    for (int t = 0; t < S.frames; ++t) {
        const long start = static_cast<long>(t) * cfg.hop;
        for (int i = 0; i < n; ++i) {
            const long idx = start + i;
            frame[i] = (idx < static_cast<long>(padded.size()) ? padded[idx] : 0.0) * win[i];
        }
        const std::vector<cplx> bins = rfft(frame);
        std::copy(bins.begin(), bins.end(), S.data.begin() + static_cast<std::size_t>(t) * S.bins);
    }
    return S;
}

ComplexSpectrogram stft(const Waveform& x, const StftConfig& cfg) {
    ComplexSpectrogram full = stft_full(x, cfg);
    ComplexSpectrogram S;
    S.cfg = cfg;
    S.frames = full.frames;
    S.bins = cfg.bins();
    S.data.resize(static_cast<std::size_t>(S.frames) * S.bins);
    for (int t = 0; t < S.frames; ++t)
        for (int k = 0; k < S.bins; ++k) S.at(t, k) = full.at(t, k);
    return S;
}

Waveform istft(const ComplexSpectrogram& S, const StftConfig& cfg, long length) {
    validate(cfg);
    const int n = cfg.fft_size;
    const int half = n / 2 + 1;
    if (S.bins != half && S.bins != half - 1)
        throw ShapeError("istft: grid has " + std::to_string(S.bins) + " bins, expected " +
                         std::to_string(half) + " or " + std::to_string(half - 1));
    if (S.frames < 1) throw ShapeError("istft: empty spectrogram");

    const std::vector<double> win = make_window(cfg.window, n);
    const long buf_len = static_cast<long>(S.frames - 1) * cfg.hop + n;
    std::vector<double> acc(buf_len, 0.0);
    std::vector<double> env(buf_len, 0.0);

    std::vector<cplx> bins(half);
    for (int t = 0; t < S.frames; ++t) {
        for (int k = 0; k < half; ++k)
            bins[k] = (k < S.bins) ? S.at(t, k) : cplx(0.0, 0.0);
        const std::vector<double> frame = irfft(bins, n);
        const long start = static_cast<long>(t) * cfg.hop;
        for (int i = 0; i < n; ++i) {
            acc[start + i] += frame[i] * win[i];
            env[start + i] += win[i] * win[i];
        }
    }

    const int off = cfg.centered ? n / 2 : 0;
    if (length < 0) length = static_cast<long>(S.frames - 1) * cfg.hop;
    Waveform y;
    y.samples.assign(length, 0.0);
    for (long i = 0; i < length; ++i) {
        const long j = i + off;
        if (j >= buf_len) break;
        y.samples[i] = acc[j] / std::max(env[j], 1e-12);
    }
    return y;
}

CompressedSpecTriplet compress(const ComplexSpectrogram& S, double c) {
    if (!(c > 0.0 && c <= 1.0))
        throw ConfigError("compress: exponent must be in (0, 1], got " + std::to_string(c));
    CompressedSpecTriplet t;
    t.frames = S.frames;
    t.bins = S.bins;
    t.exponent = c;
    const std::size_t n = S.data.size();
    t.mag.resize(n);
    t.re.resize(n);
    t.im.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = std::abs(S.data[i]);
        const double m = (c == 1.0) ? a : std::pow(a, c);
        const double ph = std::atan2(S.data[i].imag(), S.data[i].real());
        t.mag[i] = m;
        t.re[i] = m * std::cos(ph);
        t.im[i] = m * std::sin(ph);
    }
    return t;
}

Waveform resynthesize(const CompressedSpecTriplet& est, const StftConfig& cfg, long length) {
    const double c = est.exponent;
    const double q = (1.0 - c) / c;
    ComplexSpectrogram S;
    S.cfg = cfg;
    S.frames = est.frames;
    S.bins = est.bins;
    S.data.resize(est.mag.size());
    for (std::size_t i = 0; i < est.mag.size(); ++i) {
        const double m = std::sqrt(est.re[i] * est.re[i] + est.im[i] * est.im[i]);
        const double scale = (c == 1.0) ? 1.0 : (m > 0.0 ? std::pow(m, q) : 0.0);
        S.data[i] = cplx(scale * est.re[i], scale * est.im[i]);
    }
    return istft(S, cfg, length); // zero Nyquist bin appended inside
}

std::vector<double> phase_grid(const ComplexSpectrogram& S) {
    std::vector<double> ph(S.data.size());
    for (std::size_t i = 0; i < S.data.size(); ++i)
        ph[i] = std::atan2(S.data[i].imag(), S.data[i].real());
    return ph;
}

} // namespace tfc
