#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <vector>

#include "tfc/errors.hpp"
#include "tfc/fft.hpp"
#include "tfc/metrics.hpp"
#include "tfc/rng.hpp"
#include "tfc/spectral.hpp"
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

// Self-contained fwsnr reimplementation: own padding, framing, windowing,
// naive DFT, mel triangles, and weighting, sharing nothing with the library.
double fwsnr_oracle(const Waveform& ref, const Waveform& est) {
    const int n = 1024, hop = 256, bins = 513, bands = 25;
    const double fs = 16000.0;

    auto padded = [&](const std::vector<double>& x, long i) {
        const long len = static_cast<long>(x.size());
        long j = i - n / 2;
        const long period = 2 * (len - 1);
        j = ((j % period) + period) % period;
        return x[j < len ? j : period - j];
    };
    auto window = [&](int i) { return 0.54 - 0.46 * std::cos(2.0 * M_PI * i / n); };
    auto spectrum = [&](const std::vector<double>& x, int t, int k) {
        std::complex<double> acc{0, 0};
        for (int i = 0; i < n; ++i) {
            const double v = padded(x, static_cast<long>(t) * hop + i) * window(i);
            const double ang = -2.0 * M_PI * k * i / n;
            acc += v * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        return acc;
    };

    auto mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
    auto imel = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
    std::vector<double> edge(bands + 2);
    for (int k = 0; k < bands + 2; ++k) edge[k] = imel(mel(fs / 2) * k / (bands + 1));
    auto tri = [&](int b, double cf) {
        if (cf > edge[b] && cf < edge[b + 1]) return (cf - edge[b]) / (edge[b + 1] - edge[b]);
        if (cf >= edge[b + 1] && cf < edge[b + 2])
            return (edge[b + 2] - cf) / (edge[b + 2] - edge[b + 1]);
        return 0.0;
    };

    const int frames = static_cast<int>(ref.samples.size()) / hop + 1;
    double total = 0;
    int used = 0;
    for (int t = 0; t < frames; ++t) {
        std::vector<std::complex<double>> R(bins), E(bins);
        for (int k = 0; k < bins; ++k) {
            R[k] = spectrum(ref.samples, t, k);
            E[k] = spectrum(est.samples, t, k);
        }
        double num = 0, den = 0;
        for (int b = 0; b < bands; ++b) {
            double sig = 0, dist = 0;
            for (int k = 0; k < bins; ++k) {
                const double w = tri(b, k * fs / n);
                sig += w * std::norm(R[k]);
                dist += w * std::norm(R[k] - E[k]);
            }
            const double weight = std::pow(std::sqrt(sig), 0.2);
            if (weight <= 0) continue;
            const double snr =
                dist == 0 ? 35.0 : std::clamp(10.0 * std::log10(sig / dist), -10.0, 35.0);
            num += weight * snr;
            den += weight;
        }
        if (den > 0) {
            total += num / den;
            ++used;
        }
    }
    return total / used;
}

// MRS reimplementation with its own framing and Hann windowing (FFT reused;
// it is pinned elsewhere against a naive DFT).
double mrs_oracle(const Waveform& ref, const Waveform& est) {
    double total = 0;
    for (int n : {512, 1024, 2048}) {
        const int hop = n / 4;
        auto grid = [&](const std::vector<double>& x) {
            const long len = static_cast<long>(x.size());
            const int frames = static_cast<int>(len / hop) + 1;
            std::vector<double> mags;
            for (int t = 0; t < frames; ++t) {
                std::vector<double> fr(n);
                for (int i = 0; i < n; ++i) {
                    long j = static_cast<long>(t) * hop + i - n / 2;
                    const long period = 2 * (len - 1);
                    j = ((j % period) + period) % period;
                    const double v = x[j < len ? j : period - j];
                    fr[i] = v * (0.5 - 0.5 * std::cos(2.0 * M_PI * i / n));
                }
                for (const auto& c : rfft(fr)) mags.push_back(std::abs(c));
            }
            return mags;
        };
        const auto mr = grid(ref.samples);
        const auto me = grid(est.samples);
        double num = 0, den = 0, logsum = 0;
        for (std::size_t i = 0; i < mr.size(); ++i) {
            num += (mr[i] - me[i]) * (mr[i] - me[i]);
            den += mr[i] * mr[i];
            logsum += std::abs(std::log(std::max(mr[i], 1e-7)) - std::log(std::max(me[i], 1e-7)));
        }
        total += std::sqrt(num) / std::sqrt(den) + logsum / mr.size();
    }
    return total;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("sdr: identical signals are +inf, half-amplitude is 6.0206 dB") {
    auto x = noise_clip(50, 4000);
    CHECK(std::isinf(sdr(x, x)));
    CHECK(sdr(x, x) > 0);

    Waveform half = x;
    for (auto& v : half.samples) v *= 0.5;
    CHECK(sdr(x, half) == doctest::Approx(6.0206).epsilon(1e-4));
}

TEST_CASE("sdr matches the direct formula and the alpha closed form") {
    auto ref = noise_clip(51, 1024);
    auto est = noise_clip(52, 1024);
    double er = 0, ed = 0;
    for (int i = 0; i < 1024; ++i) {
        er += ref.samples[i] * ref.samples[i];
        const double d = ref.samples[i] - est.samples[i];
        ed += d * d;
    }
    CHECK(sdr(ref, est) == doctest::Approx(10.0 * std::log10(er / ed)).epsilon(1e-10));

    for (double alpha : {0.5, 0.9, 2.0, -1.0}) {
        Waveform scaled = ref;
        for (auto& v : scaled.samples) v *= alpha;
        CHECK(sdr(ref, scaled) ==
              doctest::Approx(-20.0 * std::log10(std::abs(1.0 - alpha))).epsilon(1e-9));
    }
}

TEST_CASE("sdr rejects silent references and mismatched lengths") {
    Waveform z;
    z.samples.assign(100, 0.0);
    auto x = noise_clip(53, 100);
    CHECK_THROWS_AS(sdr(z, x), DegenerateReference);
    Waveform shorter;
    shorter.samples.assign(50, 0.1);
    CHECK_THROWS_AS(sdr(x, shorter), InvalidInput);
}

TEST_CASE("fwsnr: identical signals clip to 35 dB exactly") {
    auto x = noise_clip(54, 12000);
    CHECK(fwsnr(x, x) == 35.0);
}

TEST_CASE("fwsnr: anti-phase estimate sits near -6 dB, strictly between clips") {
    auto x = noise_clip(55, 12000);
    Waveform neg = x;
    for (auto& v : neg.samples) v = -v;
    const double v = fwsnr(x, neg);
    CHECK(v == doctest::Approx(10.0 * std::log10(0.25)).epsilon(1e-6));
    CHECK(v > -10.0);
    CHECK(v < 35.0);
}

TEST_CASE("fwsnr matches the independent oracle within 1e-9 dB") {
    auto ref = noise_clip(56, 8000);
    auto est = noise_clip(57, 8000);
    for (std::size_t i = 0; i < est.samples.size(); ++i)
        est.samples[i] = 0.8 * ref.samples[i] + 0.3 * est.samples[i];
    CHECK(fwsnr(ref, est) == doctest::Approx(fwsnr_oracle(ref, est)).epsilon(1e-9));
}

TEST_CASE("fwsnr output always lies in the clip range") {
    auto ref = noise_clip(58, 6000);
    auto junk = noise_clip(59, 6000, 5.0);
    const double v = fwsnr(ref, junk);
    CHECK(v >= -10.0);
    CHECK(v <= 35.0);
    Waveform silent;
    silent.samples.assign(ref.samples.size(), 0.0);
    CHECK_THROWS_AS(fwsnr(silent, ref), DegenerateReference);
}

TEST_CASE("mrs: zero at identity, 3(1+ln 2) at doubling") {
    auto x = noise_clip(60, 12000);
    CHECK(mrs(x, x) == 0.0);

    Waveform twice = x;
    for (auto& v : twice.samples) v *= 2.0;
    CHECK(mrs(x, twice) == doctest::Approx(3.0 * (1.0 + std::log(2.0))).epsilon(1e-9));
}

TEST_CASE("mrs matches the brute-force oracle within 1e-9") {
    auto ref = noise_clip(61, 6000);
    auto est = noise_clip(62, 6000);
    CHECK(mrs(ref, est) == doctest::Approx(mrs_oracle(ref, est)).epsilon(1e-9));
}

TEST_CASE("l1_spec: zero at identity, 1 for a unit-offset grid, oracle match") {
    auto x = noise_clip(63, 9000);
    CHECK(l1_spec(x, x) == 0.0);

    CompressedSpecTriplet a;
    a.frames = 3;
    a.bins = 4;
    a.exponent = 0.3;
    a.mag.assign(12, 0.25);
    a.re = a.im = a.mag;
    CompressedSpecTriplet b = a;
    for (auto& v : b.mag) v += 1.0;
    CHECK(l1_spec(a, b) == doctest::Approx(1.0).epsilon(1e-15));

    auto est = noise_clip(64, 9000);
    StftConfig cfg;
    const auto cr = compress(stft(x, cfg), 0.3);
    const auto ce = compress(stft(est, cfg), 0.3);
    double acc = 0;
    for (std::size_t i = 0; i < cr.mag.size(); ++i) acc += std::abs(cr.mag[i] - ce.mag[i]);
    CHECK(l1_spec(x, est) == doctest::Approx(acc / cr.mag.size()).epsilon(1e-12));
}

TEST_CASE("evaluate: single pair aggregates equal the per-pair values") {
    auto ref = noise_clip(65, 8000);
    auto est = noise_clip(66, 8000);
    auto rep = evaluate_pairs({"only"}, {ref}, {est});
    REQUIRE(rep.pairs.size() == 1);
    CHECK(rep.evaluated == 1);
    CHECK(rep.excluded == 0);
    CHECK(rep.fwsnr_db.mean == rep.pairs[0].fwsnr_db);
    CHECK(rep.mrs.mean == rep.pairs[0].mrs);
    CHECK(rep.l1_spec.mean == rep.pairs[0].l1_spec);
    CHECK(rep.sdr_db.mean == rep.pairs[0].sdr_db);
    CHECK(rep.fwsnr_db.ci95 == 0.0);
}

TEST_CASE("evaluate: permuting the pair list leaves the report unchanged") {
    std::vector<std::string> ids = {"b", "a", "c"};
    std::vector<Waveform> refs = {noise_clip(70, 6000), noise_clip(71, 6000),
                                  noise_clip(72, 6000)};
    std::vector<Waveform> ests = {noise_clip(73, 6000), noise_clip(74, 6000),
                                  noise_clip(75, 6000)};
    auto r1 = evaluate_pairs(ids, refs, ests);
    auto r2 = evaluate_pairs({"a", "c", "b"}, {refs[1], refs[2], refs[0]},
                             {ests[1], ests[2], ests[0]});
    CHECK(report_to_json(r1) == report_to_json(r2));
    CHECK(r1.pairs[0].id == "a");

    // aggregate means are plain arithmetic means
    double m = 0;
    for (const auto& p : r1.pairs) m += p.mrs;
    CHECK(r1.mrs.mean == doctest::Approx(m / 3.0).epsilon(1e-9));
}

TEST_CASE("evaluate: directory scan pairs files, excludes broken pairs") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "tfc_metrics_eval";
    fs::remove_all(dir);
    fs::create_directories(dir);

    auto a = noise_clip(80, 8000);
    auto b = noise_clip(81, 8000);
    write_wav((dir / "p0_clean.wav").string(), a);
    write_wav((dir / "p0_estimate.wav").string(), b);
    write_wav((dir / "p1_clean.wav").string(), b);
    write_wav((dir / "p1_estimate.wav").string(), a);
    write_wav((dir / "p2_clean.wav").string(), a);
    Waveform shorter;
    shorter.samples.assign(4000, 0.1);
    write_wav((dir / "p2_estimate.wav").string(), shorter);
    write_wav((dir / "p3_clean.wav").string(), a);  // no estimate file

    auto rep = evaluate(dir.string());
    REQUIRE(rep.pairs.size() == 4);
    CHECK(rep.evaluated == 2);
    CHECK(rep.excluded == 2);
    CHECK(rep.pairs[0].id == "p0");
    CHECK_FALSE(rep.pairs[0].excluded());
    CHECK_FALSE(rep.pairs[1].excluded());
    CHECK(rep.pairs[2].excluded());
    CHECK(rep.pairs[3].excluded());

    CHECK_THROWS_AS(evaluate((dir / "nope").string()), ConfigError);
    fs::remove_all(dir);
}

}  // TEST_SUITE
