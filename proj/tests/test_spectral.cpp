#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "tfc/errors.hpp"
#include "tfc/rng.hpp"
#include "tfc/spectral.hpp"

using namespace tfc;

namespace {

Waveform random_clip(std::uint64_t seed, int n) {
    Waveform w;
    w.samples.resize(n);
    Rng rng(seed);
    for (auto& v : w.samples) v = rng.uniform(-0.9, 0.9);
    return w;
}

Waveform sine(double freq_hz, int n, double amp = 0.5) {
    Waveform w;
    w.samples.resize(n);
    for (int i = 0; i < n; ++i)
        w.samples[i] = amp * std::sin(2.0 * M_PI * freq_hz * i / kPipelineSampleRate);
    return w;
}

double interior_max_err(const std::vector<double>& a, const std::vector<double>& b, int margin) {
    double m = 0;
    for (std::size_t i = margin; i + margin < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Random mixture of cosines aligned to the 1024-point bin grid, well below
// Nyquist. With reflect padding and n % 1024 == 1 each analysis frame sees the
// exact periodic continuation, so the dropped bin 512 carries no energy and
// the 512-bin roundtrip is limited only by floating point.
Waveform band_limited_clip(std::uint64_t seed, int n) {
    Waveform w;
    w.samples.assign(n, 0.0);
    Rng rng(seed);
    for (int c = 0; c < 32; ++c) {
        const int bin = 2 + static_cast<int>(rng.next_below(499));
        const double amp = rng.uniform(0.02, 0.25) * (rng.next_below(2) ? 1.0 : -1.0);
        const double w0 = 2.0 * M_PI * bin / 1024.0;
        for (int i = 0; i < n; ++i) w.samples[i] += amp * std::cos(w0 * i);
    }
    return w;
}

} // namespace

TEST_SUITE("spectral") {

TEST_CASE("1 kHz sine peaks exactly at bin 64") {
    StftConfig cfg;
    auto S = stft(sine(1000.0, 48000), cfg);
    REQUIRE(S.bins == 512);
    for (int t = 2; t < S.frames - 2; ++t) {
        int best = 0;
        double best_mag = -1;
        for (int k = 0; k < S.bins; ++k) {
            const double m = std::abs(S.at(t, k));
            if (m > best_mag) {
                best_mag = m;
                best = k;
            }
        }
        CHECK(best == 64);
    }
}

TEST_CASE("all-zero input gives all-zero 188x512 grid") {
    StftConfig cfg;
    Waveform w;
    w.samples.assign(48000, 0.0);
    auto S = stft(w, cfg);
    CHECK(S.frames == 188);
    CHECK(S.bins == 512);
    for (const auto& v : S.data) CHECK(std::abs(v) == 0.0);
}

TEST_CASE("frame 10 equals direct windowed DFT of its segment") {
    StftConfig cfg;
    auto x = random_clip(21, 8192);
    auto S = stft_full(x, cfg);

    // oracle: reflect-pad by hand, window, naive DFT of frame 10
    const int n = cfg.fft_size;
    const int t = 10;
    auto win = make_window(cfg.window, n);
    std::vector<double> seg(n);
    for (int i = 0; i < n; ++i) {
        long idx = static_cast<long>(t) * cfg.hop + i - n / 2;
        long L = static_cast<long>(x.samples.size());
        long period = 2 * (L - 1);
        idx = ((idx % period) + period) % period;
        if (idx >= L) idx = period - idx;
        seg[i] = x.samples[idx] * win[i];
    }
    double max_err = 0;
    for (int k = 0; k < S.bins; ++k) {
        std::complex<double> acc(0, 0);
        for (int i = 0; i < n; ++i) {
            const double ang = -2.0 * M_PI * k * i / n;
            acc += seg[i] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        max_err = std::max(max_err, std::abs(acc - S.at(t, k)));
    }
    CHECK(max_err < 1e-9);
}

TEST_CASE("stft rejects empty input") {
    StftConfig cfg;
    Waveform w;
    CHECK_THROWS_AS(stft(w, cfg), InvalidInput);
}

TEST_CASE("istft of zero spectrogram is silence; istft is linear") {
    StftConfig cfg;
    ComplexSpectrogram Z;
    Z.cfg = cfg;
    Z.frames = 32;
    Z.bins = 512;
    Z.data.assign(static_cast<std::size_t>(Z.frames) * Z.bins, {0.0, 0.0});
    auto y = istft(Z, cfg);
    for (double v : y.samples) CHECK(v == 0.0);

    auto S = stft(random_clip(5, 16384), cfg);
    auto y1 = istft(S, cfg);
    ComplexSpectrogram S3 = S;
    for (auto& v : S3.data) v *= 3.25;
    auto y3 = istft(S3, cfg);
    double max_err = 0;
    for (std::size_t i = 0; i < y1.samples.size(); ++i)
        max_err = std::max(max_err, std::abs(y3.samples[i] - 3.25 * y1.samples[i]));
    CHECK(max_err < 1e-9);
}

TEST_CASE("white-noise roundtrip through the full grid below 1e-6 interior") {
    StftConfig cfg;
    auto x = random_clip(77, 48000);
    auto y = istft(stft_full(x, cfg), cfg, static_cast<long>(x.samples.size()));
    REQUIRE(y.samples.size() == x.samples.size());
    CHECK(interior_max_err(x.samples, y.samples, cfg.fft_size / 2) < 1e-6);
}

TEST_CASE("band-limited roundtrip through the 512-bin grid below 1e-6 interior") {
    StftConfig cfg;
    auto x = band_limited_clip(77, 47 * 1024 + 1);
    auto y = istft(stft(x, cfg), cfg, static_cast<long>(x.samples.size()));
    REQUIRE(y.samples.size() == x.samples.size());
    CHECK(interior_max_err(x.samples, y.samples, cfg.fft_size / 2) < 1e-6);
}

TEST_CASE("compress: identity exponent, 32^0.3, phase preservation") {
    ComplexSpectrogram S;
    S.frames = 1;
    S.bins = 3;
    S.data = {{32.0, 0.0}, {3.0, -4.0}, {0.0, 0.0}};

    auto t1 = compress(S, 1.0);
    CHECK(t1.mag[0] == doctest::Approx(32.0).epsilon(1e-15));
    CHECK(t1.re[1] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(t1.im[1] == doctest::Approx(-4.0).epsilon(1e-12));

    auto t = compress(S, 0.3);
    const double expect = std::pow(2.0, 1.5);
    CHECK(t.mag[0] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(t.re[0] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(t.im[0] == doctest::Approx(0.0));
    CHECK(t.mag[2] == 0.0);
    CHECK(t.re[2] == 0.0);

    // phase of a nonzero entry is preserved
    const double want = std::atan2(-4.0, 3.0);
    CHECK(std::atan2(t.im[1], t.re[1]) == doctest::Approx(want).epsilon(1e-9));
    CHECK(t.mag[1] * t.mag[1] ==
          doctest::Approx(t.re[1] * t.re[1] + t.im[1] * t.im[1]).epsilon(1e-10));
}

TEST_CASE("compress rejects bad exponent") {
    ComplexSpectrogram S;
    S.frames = 1;
    S.bins = 1;
    S.data = {{1.0, 0.0}};
    CHECK_THROWS_AS(compress(S, 0.0), ConfigError);
    CHECK_THROWS_AS(compress(S, 1.5), ConfigError);
}

TEST_CASE("resynthesize: single-bin decompression reaches linear magnitude 32") {
    // one bin with compressed magnitude 2^1.5 under c=0.3 decompresses to 32
    CompressedSpecTriplet t;
    t.frames = 1;
    t.bins = 4;
    t.exponent = 0.3;
    t.mag.assign(4, 0.0);
    t.re.assign(4, 0.0);
    t.im.assign(4, 0.0);
    t.re[1] = std::pow(2.0, 1.5);
    t.mag[1] = t.re[1];
    const double m = std::sqrt(t.re[1] * t.re[1]);
    const double linear = std::pow(m, (1.0 - 0.3) / 0.3) * m;
    CHECK(linear == doctest::Approx(32.0).epsilon(1e-9));
}

TEST_CASE("resynthesize roundtrip and zero case") {
    StftConfig cfg;
    auto x = band_limited_clip(31, 47 * 1024 + 1);
    for (double c : {0.3, 0.5, 1.0}) {
        auto est = compress(stft(x, cfg), c);
        auto y = resynthesize(est, cfg, static_cast<long>(x.samples.size()));
        double peak = 0;
        for (double v : x.samples) peak = std::max(peak, std::abs(v));
        CHECK(interior_max_err(x.samples, y.samples, cfg.fft_size / 2) < 1e-6 * peak);
    }

    CompressedSpecTriplet z;
    z.frames = 8;
    z.bins = 512;
    z.exponent = 0.3;
    z.mag.assign(8 * 512, 0.0);
    z.re.assign(8 * 512, 0.0);
    z.im.assign(8 * 512, 0.0);
    auto y = resynthesize(z, StftConfig{});
    for (double v : y.samples) CHECK(v == 0.0);
}

TEST_CASE("Parseval: full-spectrum energy equals windowed-signal energy") {
    StftConfig cfg;
    auto x = random_clip(41, 20000);
    auto S = stft_full(x, cfg);

    const int n = cfg.fft_size;
    auto win = make_window(cfg.window, n);
    // windowed-signal energy, frame by frame over the same padded signal
    std::vector<double> px(x.samples.size() + n);
    const long L = static_cast<long>(x.samples.size());
    for (long i = 0; i < static_cast<long>(px.size()); ++i) {
        long idx = i - n / 2;
        long period = 2 * (L - 1);
        idx = ((idx % period) + period) % period;
        if (idx >= L) idx = period - idx;
        px[i] = x.samples[idx];
    }
    double sig_energy = 0;
    for (int t = 0; t < S.frames; ++t)
        for (int i = 0; i < n; ++i) {
            const double v = px[static_cast<long>(t) * cfg.hop + i] * win[i];
            sig_energy += v * v;
        }

    double spec_energy = 0;
    for (int t = 0; t < S.frames; ++t) {
        for (int k = 0; k < S.bins; ++k) {
            const double m2 = std::norm(S.at(t, k));
            spec_energy += (k == 0 || k == n / 2) ? m2 : 2.0 * m2;
        }
    }
    spec_energy /= n;
    CHECK(spec_energy == doctest::Approx(sig_energy).epsilon(1e-6));
}

TEST_CASE("compress/decompress magnitudes are mutual inverses") {
    Rng rng(99);
    for (int i = 0; i < 200; ++i) {
        const double m = std::pow(10.0, rng.uniform(-6.0, 3.0));
        for (double c : {0.3, 0.5, 1.0}) {
            const double comp = std::pow(m, c);
            const double back = std::pow(comp, (1.0 - c) / c) * comp;
            CHECK(back == doctest::Approx(m).epsilon(1e-9));
        }
    }
}

TEST_CASE("stft linearity") {
    StftConfig cfg;
    auto a = random_clip(1, 8000);
    auto b = random_clip(2, 8000);
    Waveform mix;
    mix.samples.resize(8000);
    for (int i = 0; i < 8000; ++i) mix.samples[i] = 1.5 * a.samples[i] - 0.25 * b.samples[i];
    auto Sa = stft(a, cfg), Sb = stft(b, cfg), Sm = stft(mix, cfg);
    double max_err = 0;
    for (std::size_t i = 0; i < Sm.data.size(); ++i)
        max_err = std::max(max_err, std::abs(Sm.data[i] - (1.5 * Sa.data[i] - 0.25 * Sb.data[i])));
    CHECK(max_err < 1e-9);
}

} // TEST_SUITE
