#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "tfc/degrade.hpp"
#include "tfc/errors.hpp"
#include "tfc/rng.hpp"
#include "tfc/wav.hpp"

using namespace tfc;

namespace {

Waveform noise_clip(std::uint64_t seed, int n, double amp = 0.5) {
    Waveform w;
    w.samples.resize(n);
    Rng rng(seed);
    for (auto& v : w.samples) v = rng.uniform(-amp, amp);
    return w;
}

Waveform sine(double freq_hz, int n, double amp = 0.5) {
    Waveform w;
    w.samples.resize(n);
    for (int i = 0; i < n; ++i)
        w.samples[i] = amp * std::sin(2.0 * M_PI * freq_hz * i / kPipelineSampleRate);
    return w;
}

double rms(const std::vector<double>& x, std::size_t lo, std::size_t hi) {
    double e = 0;
    for (std::size_t i = lo; i < hi; ++i) e += x[i] * x[i];
    return std::sqrt(e / (hi - lo));
}

std::vector<double> naive_convolve(const std::vector<double>& x, const std::vector<double>& h,
                                   std::size_t out_len) {
    std::vector<double> out(out_len, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < h.size(); ++j)
            if (i + j < out_len) out[i + j] += x[i] * h[j];
    return out;
}

AudioBank delta_rir_bank() {
    AudioBank b;
    b.ids = {"delta"};
    b.clips = {{1.0}};
    return b;
}

AudioBank small_noise_bank(std::uint64_t seed = 900) {
    AudioBank b;
    b.ids = {"n0"};
    b.clips.push_back(noise_clip(seed, 8000, 0.3).samples);
    return b;
}

}  // namespace

TEST_SUITE("degrade") {

TEST_CASE("convolution with a unit impulse is the identity") {
    auto x = noise_clip(3, 4096);
    auto y = convolve_rir(x, {1.0});
    REQUIRE(y.samples.size() == x.samples.size());
    for (std::size_t i = 0; i < x.samples.size(); ++i) CHECK(y.samples[i] == x.samples[i]);
}

TEST_CASE("convolution with a scaled delayed impulse shifts and scales") {
    auto x = noise_clip(4, 2048);
    std::vector<double> h(101, 0.0);
    h[100] = 0.5;
    auto y = convolve_rir(x, h);
    for (int i = 0; i < 100; ++i) CHECK(std::abs(y.samples[i]) < 1e-12);
    for (std::size_t i = 100; i < y.samples.size(); ++i)
        CHECK(std::abs(y.samples[i] - 0.5 * x.samples[i - 100]) < 1e-12);
}

TEST_CASE("short convolution matches the direct double-loop oracle") {
    auto x = noise_clip(5, 32);
    auto hw = noise_clip(6, 8);
    auto y = convolve_rir(x, hw.samples);
    auto want = naive_convolve(x.samples, hw.samples, x.samples.size());
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(std::abs(y.samples[i] - want[i]) < 1e-12);
}

TEST_CASE("long convolution (FFT path) matches the direct oracle") {
    auto x = noise_clip(7, 3000);
    auto hw = noise_clip(8, 257);
    auto y = convolve_rir(x, hw.samples);
    auto want = naive_convolve(x.samples, hw.samples, x.samples.size());
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(std::abs(y.samples[i] - want[i]) < 1e-10);
}

TEST_CASE("convolution rejects empty or non-finite impulse responses") {
    auto x = noise_clip(9, 64);
    CHECK_THROWS_AS(convolve_rir(x, {}), InvalidInput);
    CHECK_THROWS_AS(convolve_rir(x, {1.0, std::nan("")}), InvalidInput);
}

TEST_CASE("equal energies at 0 dB mix with unit gain") {
    auto s = noise_clip(10, 1000);
    Waveform n = s;
    std::reverse(n.samples.begin(), n.samples.end());  // same energy, different signal
    auto y = mix_at_snr(s, n, 0.0);
    for (std::size_t i = 0; i < y.samples.size(); ++i)
        CHECK(y.samples[i] == doctest::Approx(s.samples[i] + n.samples[i]).epsilon(1e-12));
}

TEST_CASE("equal energies at 20 dB mix with gain 0.1") {
    auto s = noise_clip(11, 1000);
    Waveform n = s;
    std::reverse(n.samples.begin(), n.samples.end());
    auto y = mix_at_snr(s, n, 20.0);
    for (std::size_t i = 0; i < y.samples.size(); ++i)
        CHECK(y.samples[i] == doctest::Approx(s.samples[i] + 0.1 * n.samples[i]).epsilon(1e-12));
}

TEST_CASE("post-hoc SNR equals the requested value within 1e-9 dB") {
    auto s = noise_clip(12, 5000, 0.8);
    auto n = noise_clip(13, 5000, 0.2);
    for (double snr : {-3.0, 5.0, 13.7, 30.0}) {
        auto y = mix_at_snr(s, n, snr);
        double es = 0, ea = 0;
        for (std::size_t i = 0; i < y.samples.size(); ++i) {
            es += s.samples[i] * s.samples[i];
            const double d = y.samples[i] - s.samples[i];
            ea += d * d;
        }
        CHECK(10.0 * std::log10(es / ea) == doctest::Approx(snr).epsilon(1e-9));
    }
}

TEST_CASE("silent noise raises DegenerateNoise; +inf SNR disables the noise path") {
    auto s = noise_clip(14, 100);
    Waveform z;
    z.samples.assign(100, 0.0);
    CHECK_THROWS_AS(mix_at_snr(s, z, 10.0), DegenerateNoise);

    auto y = mix_at_snr(s, z, kNoNoiseSnr);
    for (std::size_t i = 0; i < y.samples.size(); ++i) CHECK(y.samples[i] == s.samples[i]);
}

TEST_CASE("flat 0 dB EQ is the identity within 1e-6") {
    auto x = noise_clip(15, 20000);
    auto y = band_eq(x, {0.0, 0.0, 0.0, 0.0});
    REQUIRE(y.samples.size() == x.samples.size());
    double m = 0;
    for (std::size_t i = 0; i < x.samples.size(); ++i)
        m = std::max(m, std::abs(y.samples[i] - x.samples[i]));
    CHECK(m < 1e-6);
}

TEST_CASE("uniform +20 dB EQ multiplies by 10 within 1e-5 relative") {
    auto x = noise_clip(16, 20000);
    auto y = band_eq(x, {20.0, 20.0, 20.0, 20.0});
    double m = 0, peak = 0;
    for (std::size_t i = 0; i < x.samples.size(); ++i) {
        m = std::max(m, std::abs(y.samples[i] - 10.0 * x.samples[i]));
        peak = std::max(peak, std::abs(10.0 * x.samples[i]));
    }
    CHECK(m < 1e-5 * peak);
}

TEST_CASE("-15 dB on the 200-1000 Hz band attenuates a 500 Hz sine accordingly") {
    auto x = sine(500.0, 48000);
    auto y = band_eq(x, {0.0, -15.0, 0.0, 0.0});
    const std::size_t lo = 4096, hi = x.samples.size() - 4096;
    const double ratio = rms(y.samples, lo, hi) / rms(x.samples, lo, hi);
    CHECK(ratio == doctest::Approx(std::pow(10.0, -15.0 / 20.0)).epsilon(0.01));
}

TEST_CASE("lowcut sends DC to below 1e-3 in steady state") {
    Waveform x;
    x.samples.assign(32000, 1.0);
    auto y = lowcut(x);
    double m = 0;
    for (std::size_t i = 16000; i < y.samples.size(); ++i) m = std::max(m, std::abs(y.samples[i]));
    CHECK(m < 1e-3);
}

TEST_CASE("lowcut passes 1 kHz with under 0.1 dB loss") {
    auto x = sine(1000.0, 48000);
    auto y = lowcut(x);
    const std::size_t lo = 16000, hi = 48000;
    const double drop = -20.0 * std::log10(rms(y.samples, lo, hi) / rms(x.samples, lo, hi));
    CHECK(std::abs(drop) < 0.1);
}

TEST_CASE("lowcut attenuates 20 Hz per the analytic 4th-order response") {
    auto x = sine(20.0, 96000);
    auto y = lowcut(x);
    const std::size_t lo = 48000, hi = 96000;
    const double att_db = -20.0 * std::log10(rms(y.samples, lo, hi) / rms(x.samples, lo, hi));
    CHECK(att_db >= 15.0);
    // |H(f)| = 1/sqrt(1 + (fc/f)^8) for the Butterworth prototype
    const double analytic = 10.0 * std::log10(1.0 + std::pow(35.0 / 20.0, 8.0));
    CHECK(att_db == doctest::Approx(analytic).epsilon(0.03));
}

TEST_CASE("peak normalization hits the target and flags silence") {
    auto x = noise_clip(17, 3000);
    auto r = normalize_peak(x, 0.95);
    CHECK_FALSE(r.silent);
    double peak = 0;
    for (double v : r.wave.samples) peak = std::max(peak, std::abs(v));
    CHECK(peak == doctest::Approx(0.95).epsilon(1e-9));

    // already at target: unchanged bit for bit
    auto r2 = normalize_peak(r.wave, 0.95);
    for (std::size_t i = 0; i < r.wave.samples.size(); ++i)
        CHECK(r2.wave.samples[i] == r.wave.samples[i]);

    Waveform z;
    z.samples.assign(100, 0.0);
    auto rz = normalize_peak(z, 0.95);
    CHECK(rz.silent);
    for (double v : rz.wave.samples) CHECK(v == 0.0);
}

TEST_CASE("degradation is a pure function of clean input and spec") {
    auto clean = noise_clip(18, 32000);
    DegradationSpec spec;
    spec.seed = 42;
    auto a = degrade(clean, spec);
    auto b = degrade(clean, spec);
    REQUIRE(a.degraded.samples.size() == b.degraded.samples.size());
    for (std::size_t i = 0; i < a.degraded.samples.size(); ++i)
        CHECK(a.degraded.samples[i] == b.degraded.samples[i]);
    CHECK(a.applied.rir_id == b.applied.rir_id);
    CHECK(a.applied.noise_id == b.applied.noise_id);
    CHECK(a.applied.snr_db == b.applied.snr_db);
}

TEST_CASE("identity settings reproduce the clean target within 1e-6") {
    auto clean = noise_clip(19, 32000);
    DegradationSpec spec;
    spec.seed = 7;
    spec.snr_range_db = {kNoNoiseSnr, kNoNoiseSnr};
    spec.band_gain_range_db = {0.0, 0.0};
    auto ex = degrade(clean, spec, delta_rir_bank(), small_noise_bank());
    REQUIRE(ex.degraded.samples.size() == ex.clean.samples.size());
    double m = 0;
    for (std::size_t i = 0; i < ex.clean.samples.size(); ++i)
        m = std::max(m, std::abs(ex.degraded.samples[i] - ex.clean.samples[i]));
    CHECK(m < 1e-6);
}

TEST_CASE("sampled parameters stay in range and SNR is near-uniform over seeds") {
    auto clean = noise_clip(20, 16000);
    const auto rirs = delta_rir_bank();
    const auto noises = small_noise_bank();

    const int n = 1000;
    std::vector<double> snrs;
    snrs.reserve(n);
    for (int i = 0; i < n; ++i) {
        DegradationSpec spec;
        spec.seed = Rng::derive(1000, static_cast<std::uint64_t>(i));
        auto ex = degrade(clean, spec, rirs, noises);
        CHECK(ex.degraded.samples.size() == clean.samples.size());
        CHECK(ex.applied.snr_db >= 5.0);
        CHECK(ex.applied.snr_db <= 30.0);
        for (double g : ex.applied.band_gains_db) {
            CHECK(g >= -15.0);
            CHECK(g <= 15.0);
        }
        snrs.push_back(ex.applied.snr_db);
    }

    std::sort(snrs.begin(), snrs.end());
    double ks = 0;
    for (int i = 0; i < n; ++i) {
        const double u = (snrs[i] - 5.0) / 25.0;
        ks = std::max(ks, std::abs(u - static_cast<double>(i) / n));
        ks = std::max(ks, std::abs(static_cast<double>(i + 1) / n - u));
    }
    CHECK(ks < 0.05);
}

TEST_CASE("the applied record replays bit-exactly and survives JSON") {
    auto clean = noise_clip(21, 24000);
    DegradationSpec spec;
    spec.seed = 99;
    const auto rirs = make_synthetic_rir_bank(1, 4);
    const auto noises = make_synthetic_noise_bank(2, 4, 20000);
    auto ex = degrade(clean, spec, rirs, noises);

    auto again = replay_degradation(clean, ex.applied, rirs, noises);
    REQUIRE(again.samples.size() == ex.degraded.samples.size());
    for (std::size_t i = 0; i < again.samples.size(); ++i)
        CHECK(again.samples[i] == ex.degraded.samples[i]);

    auto parsed = applied_from_json(applied_to_json(ex.applied));
    auto third = replay_degradation(clean, parsed, rirs, noises);
    for (std::size_t i = 0; i < third.samples.size(); ++i)
        CHECK(third.samples[i] == ex.degraded.samples[i]);

    AppliedDegradation quiet = ex.applied;
    quiet.snr_db = kNoNoiseSnr;
    auto qparsed = applied_from_json(applied_to_json(quiet));
    CHECK(std::isinf(qparsed.snr_db));
}

TEST_CASE("empty banks and malformed specs are configuration errors") {
    auto clean = noise_clip(22, 16000);
    DegradationSpec spec;
    CHECK_THROWS_AS(degrade(clean, spec, AudioBank{}, small_noise_bank()), ConfigError);
    CHECK_THROWS_AS(degrade(clean, spec, delta_rir_bank(), AudioBank{}), ConfigError);

    DegradationSpec bad;
    bad.snr_range_db = {20.0, 5.0};
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    Waveform shorty;
    shorty.samples.assign(100, 0.1);
    CHECK_THROWS_AS(degrade(shorty, spec, delta_rir_bank(), small_noise_bank()), InvalidInput);
}

}  // TEST_SUITE
