#pragma once

#include <complex>
#include <vector>

#include "tfc/wav.hpp"

namespace tfc {

enum class WindowKind { Hamming, Hann };

// Analysis/synthesis configuration. Default profile: 1024-point FFT,
// 75% overlap, periodic Hamming window, center padding.
struct StftConfig {
    int fft_size = 1024;
    int hop = 256;
    WindowKind window = WindowKind::Hamming;
    bool centered = true;

    int bins() const { return fft_size / 2; } // Nyquist bin dropped
    int full_bins() const { return fft_size / 2 + 1; }
    int frames_for(std::size_t num_samples) const {
        return static_cast<int>(num_samples / hop) + 1;
    }
};

std::vector<double> make_window(WindowKind kind, int n);

// Complex STFT grid, frames-major (frames x bins).
struct ComplexSpectrogram {
    int frames = 0;
    int bins = 0;
    std::vector<std::complex<double>> data;
    StftConfig cfg;

    std::complex<double>& at(int t, int k) { return data[static_cast<std::size_t>(t) * bins + k]; }
    const std::complex<double>& at(int t, int k) const {
        return data[static_cast<std::size_t>(t) * bins + k];
    }
};

// Power-law compressed planes: mag = |S|^c, re = mag cos(phase),
// im = mag sin(phase). Frames-major, same grid as the spectrogram.
struct CompressedSpecTriplet {
    int frames = 0;
    int bins = 0;
    std::vector<double> mag, re, im;
    double exponent = 0.3;
};

// Center-padded (reflect) STFT over all fft_size/2 + 1 bins.
ComplexSpectrogram stft_full(const Waveform& x, const StftConfig& cfg);

// Pipeline STFT: Nyquist bin dropped so bins == fft_size/2.
ComplexSpectrogram stft(const Waveform& x, const StftConfig& cfg);

// Least-squares overlap-add inversion (analysis window reused for
// synthesis, normalized by the summed squared-window envelope).
// `length` < 0 means the natural length (frames - 1) * hop. Accepts
// grids with or without the Nyquist bin (a zero bin is assumed when
// absent).
Waveform istft(const ComplexSpectrogram& S, const StftConfig& cfg, long length = -1);

CompressedSpecTriplet compress(const ComplexSpectrogram& S, double c);

// Magnitude decompression per mag^((1-c)/c) * (re + j im) followed by
// the inverse transform. mag is recomputed internally as sqrt(re^2+im^2).
Waveform resynthesize(const CompressedSpecTriplet& est, const StftConfig& cfg, long length = -1);

// Phase grid of a spectrogram (atan2 of each entry), frames-major.
std::vector<double> phase_grid(const ComplexSpectrogram& S);

} // namespace tfc
