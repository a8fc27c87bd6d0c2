#include "tfc/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "json.hpp"
#include "tfc/errors.hpp"
#include "tfc/fft.hpp"
#include "tfc/rng.hpp"
#include "tfc/spectral.hpp"

namespace tfc {

namespace {

int next_pow2(long n) {
    int p = 1;
    while (p < n) p *= 2;
    return p;
}

std::vector<double> direct_convolve(const std::vector<double>& x, const std::vector<double>& h,
                                    std::size_t out_len) {
    std::vector<double> out(out_len, 0.0);
    for (std::size_t i = 0; i < out_len; ++i) {
        const std::size_t jmax = std::min(h.size() - 1, i);
        double acc = 0;
        for (std::size_t j = 0; j <= jmax; ++j)
            if (i - j < x.size()) acc += x[i - j] * h[j];
        out[i] = acc;
    }
    return out;
}

// Overlap-add FFT convolution, truncated to out_len.
std::vector<double> fft_convolve(const std::vector<double>& x, const std::vector<double>& h,
                                 std::size_t out_len) {
    const long m = static_cast<long>(h.size());
    const int nfft = std::max(8192, next_pow2(4 * m));
    const long block = nfft - (m - 1);

    std::vector<double> hp(h);
    hp.resize(nfft, 0.0);
    const std::vector<cplx> H = rfft(hp);

    std::vector<double> out(out_len, 0.0);
    std::vector<double> seg(nfft);
    for (std::size_t start = 0; start < x.size(); start += block) {
        const std::size_t take = std::min<std::size_t>(block, x.size() - start);
        std::fill(seg.begin(), seg.end(), 0.0);
        std::copy(x.begin() + start, x.begin() + start + take, seg.begin());
        std::vector<cplx> X = rfft(seg);
        for (std::size_t k = 0; k < X.size(); ++k) X[k] *= H[k];
        const std::vector<double> y = irfft(X, nfft);
        const std::size_t span = std::min<std::size_t>(take + m - 1, out_len - std::min(out_len, start));
        for (std::size_t i = 0; i < span && start + i < out_len; ++i) out[start + i] += y[i];
    }
    return out;
}

int band_of(double center_hz) {
    for (int b = 0; b < 4; ++b) {
        const double lo = kEqBandEdgesHz[b][0];
        const double hi = kEqBandEdgesHz[b][1];
        if (center_hz >= lo && (center_hz < hi || b == 3)) return b;
    }
    return 3;
}

struct Biquad {
    double b0, b1, b2, a1, a2;
    double s1 = 0, s2 = 0;

    double step(double x) {
        const double y = b0 * x + s1;
        s1 = b1 * x - a1 * y + s2;
        s2 = b2 * x - a2 * y;
        return y;
    }
};

Biquad highpass_section(double fc, double fs, double q) {
    const double w0 = 2.0 * M_PI * fc / fs;
    const double cw = std::cos(w0), sw = std::sin(w0);
    const double alpha = sw / (2.0 * q);
    const double a0 = 1.0 + alpha;
    Biquad s{};
    s.b0 = (1.0 + cw) / 2.0 / a0;
    s.b1 = -(1.0 + cw) / a0;
    s.b2 = (1.0 + cw) / 2.0 / a0;
    s.a1 = -2.0 * cw / a0;
    s.a2 = (1.0 - alpha) / a0;
    return s;
}

std::vector<double> tile_from(const std::vector<double>& src, std::size_t len, long offset) {
    std::vector<double> out(len);
    const std::size_t n = src.size();
    for (std::size_t i = 0; i < len; ++i) out[i] = src[(offset + i) % n];
    return out;
}

const std::vector<double>& bank_lookup(const AudioBank& bank, const std::string& id,
                                       const char* what) {
    for (std::size_t i = 0; i < bank.ids.size(); ++i)
        if (bank.ids[i] == id) return bank.clips[i];
    throw ConfigError(std::string(what) + " id not present in bank: " + id);
}

}  // namespace

void DegradationSpec::validate() const {
    if (snr_range_db[0] > snr_range_db[1])
        throw ConfigError("degradation: snr range low > high");
    if (band_gain_range_db[0] > band_gain_range_db[1])
        throw ConfigError("degradation: band gain range low > high");
    if (!(lowcut_hz > 0.0) || lowcut_hz >= kPipelineSampleRate / 2.0)
        throw ConfigError("degradation: lowcut_hz out of range");
    if (!(peak_target > 0.0) || peak_target > 1.0)
        throw ConfigError("degradation: peak_target must be in (0, 1]");
}

Waveform convolve_rir(const Waveform& x, const std::vector<double>& h) {
    if (h.empty()) throw InvalidInput("convolve_rir: empty impulse response");
    for (double v : h)
        if (!std::isfinite(v)) throw InvalidInput("convolve_rir: non-finite impulse response");

    Waveform out;
    out.sample_rate = x.sample_rate;
    out.samples = (h.size() <= 32)
                      ? direct_convolve(x.samples, h, x.samples.size())
                      : fft_convolve(x.samples, h, x.samples.size());
    return out;
}

Waveform mix_at_snr(const Waveform& s, const Waveform& n, double snr_db) {
    if (std::isinf(snr_db) && snr_db > 0) return s;  // noise path disabled
    if (s.samples.size() != n.samples.size())
        throw InvalidInput("mix_at_snr: signal and noise lengths differ");

    double es = 0, en = 0;
    for (double v : s.samples) es += v * v;
    for (double v : n.samples) en += v * v;
    if (en <= 0.0) throw DegenerateNoise("mix_at_snr: noise clip is silent");

    const double alpha = std::sqrt(es / (en * std::pow(10.0, snr_db / 10.0)));
    Waveform out;
    out.sample_rate = s.sample_rate;
    out.samples.resize(s.samples.size());
    for (std::size_t i = 0; i < out.samples.size(); ++i)
        out.samples[i] = s.samples[i] + alpha * n.samples[i];
    return out;
}

Waveform band_eq(const Waveform& x, const std::array<double, 4>& gains_db) {
    for (double g : gains_db)
        if (!std::isfinite(g)) throw InvalidInput("band_eq: non-finite gain");

    StftConfig cfg;
    ComplexSpectrogram S = stft_full(x, cfg);

    std::array<double, 4> lin{};
    for (int b = 0; b < 4; ++b) lin[b] = std::pow(10.0, gains_db[b] / 20.0);

    for (int k = 0; k < S.bins; ++k) {
        const double cf = static_cast<double>(k) * x.sample_rate / cfg.fft_size;
        const double g = lin[band_of(cf)];
        for (int t = 0; t < S.frames; ++t) S.at(t, k) *= g;
    }
    Waveform out = istft(S, cfg, static_cast<long>(x.samples.size()));
    out.sample_rate = x.sample_rate;
    return out;
}

Waveform lowcut(const Waveform& x, double cutoff_hz) {
    // 4th-order Butterworth high-pass as two cascaded biquads.
    Biquad s1 = highpass_section(cutoff_hz, x.sample_rate, 0.54119610014620);
    Biquad s2 = highpass_section(cutoff_hz, x.sample_rate, 1.30656296487638);

    Waveform out;
    out.sample_rate = x.sample_rate;
    out.samples.resize(x.samples.size());
    for (std::size_t i = 0; i < x.samples.size(); ++i)
        out.samples[i] = s2.step(s1.step(x.samples[i]));
    return out;
}

NormalizeResult normalize_peak(const Waveform& x, double target) {
    double peak = 0;
    for (double v : x.samples) peak = std::max(peak, std::abs(v));

    NormalizeResult r;
    r.wave.sample_rate = x.sample_rate;
    if (peak == 0.0) {
        r.wave.samples = x.samples;
        r.silent = true;
        return r;
    }
    const double scale = target / peak;
    r.wave.samples.resize(x.samples.size());
    for (std::size_t i = 0; i < x.samples.size(); ++i) r.wave.samples[i] = x.samples[i] * scale;
    return r;
}

AudioBank make_synthetic_rir_bank(std::uint64_t seed, int count) {
    AudioBank bank;
    for (int k = 0; k < count; ++k) {
        Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(k)));
        const double t60 = rng.uniform(0.08, 0.35);
        const double rate = std::log(1000.0) / (t60 * kPipelineSampleRate);

        std::vector<double> h(4000);
        h[0] = 1.0;
        for (std::size_t i = 1; i < h.size(); ++i)
            h[i] = 0.35 * rng.normal() * std::exp(-rate * static_cast<double>(i));

        double e = 0;
        for (double v : h) e += v * v;
        const double inv = 1.0 / std::sqrt(e);
        for (double& v : h) v *= inv;

        char id[32];
        std::snprintf(id, sizeof(id), "rir_synth_%02d", k);
        bank.ids.emplace_back(id);
        bank.clips.push_back(std::move(h));
    }
    return bank;
}

AudioBank make_synthetic_noise_bank(std::uint64_t seed, int count, int length) {
    AudioBank bank;
    for (int k = 0; k < count; ++k) {
        Rng rng(Rng::derive(seed, 0x1000 + static_cast<std::uint64_t>(k)));
        std::vector<double> n(length);
        // 3-pole pinking approximation over white noise.
        double b0 = 0, b1 = 0, b2 = 0;
        for (auto& v : n) {
            const double w = rng.normal();
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            v = b0 + b1 + b2 + w * 0.1848;
        }
        double peak = 0;
        for (double v : n) peak = std::max(peak, std::abs(v));
        for (double& v : n) v *= 0.7 / peak;

        char id[32];
        std::snprintf(id, sizeof(id), "noise_synth_%02d", k);
        bank.ids.emplace_back(id);
        bank.clips.push_back(std::move(n));
    }
    return bank;
}

AudioBank load_bank_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw ConfigError("bank directory does not exist: " + dir);

    std::vector<fs::path> paths;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".wav") paths.push_back(e.path());
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw ConfigError("bank directory has no .wav files: " + dir);

    AudioBank bank;
    for (const auto& p : paths) {
        Waveform w = read_wav(p.string());
        bank.ids.push_back(p.stem().string());
        bank.clips.push_back(std::move(w.samples));
    }
    return bank;
}

AudioBank resolve_bank(const std::string& source, bool rir) {
    if (source == "synthetic")
        return rir ? make_synthetic_rir_bank(0x5eed0001) : make_synthetic_noise_bank(0x5eed0002);
    return load_bank_dir(source);
}

Waveform replay_degradation(const Waveform& clean, const AppliedDegradation& applied,
                            const AudioBank& rirs, const AudioBank& noises) {
    Waveform y = convolve_rir(clean, bank_lookup(rirs, applied.rir_id, "rir"));
    if (!(std::isinf(applied.snr_db) && applied.snr_db > 0)) {
        const std::vector<double>& src = bank_lookup(noises, applied.noise_id, "noise");
        Waveform n;
        n.sample_rate = clean.sample_rate;
        n.samples = tile_from(src, clean.samples.size(), applied.noise_offset);
        y = mix_at_snr(y, n, applied.snr_db);
    }
    y = band_eq(y, applied.band_gains_db);
    y = lowcut(y, applied.lowcut_hz);
    return normalize_peak(y, applied.peak_target).wave;
}

PairedExample degrade(const Waveform& clean, const DegradationSpec& spec, const AudioBank& rirs,
                      const AudioBank& noises) {
    spec.validate();
    if (clean.samples.size() < static_cast<std::size_t>(clean.sample_rate))
        throw InvalidInput("degrade: clean clip shorter than 1 s");
    if (rirs.size() == 0) throw ConfigError("degrade: empty RIR bank");
    if (noises.size() == 0) throw ConfigError("degrade: empty noise bank");

    Rng rng(spec.seed);
    AppliedDegradation ap;
    ap.seed = spec.seed;
    ap.lowcut_hz = spec.lowcut_hz;
    ap.peak_target = spec.peak_target;

    const std::size_t ri = static_cast<std::size_t>(rng.next_below(rirs.size()));
    ap.rir_id = rirs.ids[ri];
    const std::size_t ni = static_cast<std::size_t>(rng.next_below(noises.size()));
    ap.noise_id = noises.ids[ni];
    ap.noise_offset = static_cast<long>(rng.next_below(noises.clips[ni].size()));
    ap.snr_db = (spec.snr_range_db[0] == spec.snr_range_db[1])
                    ? spec.snr_range_db[0]
                    : rng.uniform(spec.snr_range_db[0], spec.snr_range_db[1]);
    for (int b = 0; b < 4; ++b)
        ap.band_gains_db[b] =
            (spec.band_gain_range_db[0] == spec.band_gain_range_db[1])
                ? spec.band_gain_range_db[0]
                : rng.uniform(spec.band_gain_range_db[0], spec.band_gain_range_db[1]);

    PairedExample ex;
    ex.applied = ap;
    ex.degraded = replay_degradation(clean, ap, rirs, noises);
    ex.clean = normalize_peak(lowcut(clean, spec.lowcut_hz), spec.peak_target).wave;
    return ex;
}

PairedExample degrade(const Waveform& clean, const DegradationSpec& spec) {
    const AudioBank rirs = resolve_bank(spec.rir_source, true);
    const AudioBank noises = resolve_bank(spec.noise_source, false);
    return degrade(clean, spec, rirs, noises);
}

std::string applied_to_json(const AppliedDegradation& a) {
    nlohmann::json j;
    j["rir_id"] = a.rir_id;
    j["noise_id"] = a.noise_id;
    j["noise_offset"] = a.noise_offset;
    if (std::isfinite(a.snr_db))
        j["snr_db"] = a.snr_db;
    else
        j["snr_db"] = "inf";
    j["band_gains_db"] = a.band_gains_db;
    j["lowcut_hz"] = a.lowcut_hz;
    j["peak_target"] = a.peak_target;
    j["seed"] = a.seed;
    return j.dump(2);
}

AppliedDegradation applied_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("applied record: bad JSON: ") + e.what());
    }
    AppliedDegradation a;
    try {
        a.rir_id = j.at("rir_id").get<std::string>();
        a.noise_id = j.at("noise_id").get<std::string>();
        a.noise_offset = j.at("noise_offset").get<long>();
        if (j.at("snr_db").is_string())
            a.snr_db = kNoNoiseSnr;
        else
            a.snr_db = j.at("snr_db").get<double>();
        const auto g = j.at("band_gains_db");
        for (int b = 0; b < 4; ++b) a.band_gains_db[b] = g.at(b).get<double>();
        a.lowcut_hz = j.at("lowcut_hz").get<double>();
        a.peak_target = j.at("peak_target").get<double>();
        a.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("applied record: missing or mistyped field: ") + e.what());
    }
    return a;
}

}  // namespace tfc
