#include "tfc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "json.hpp"
#include "tfc/errors.hpp"

namespace tfc {

namespace {

double energy(const std::vector<double>& x) {
    double e = 0;
    for (double v : x) e += v * v;
    return e;
}

void require_equal_lengths(const Waveform& ref, const Waveform& est, const char* op) {
    if (ref.samples.size() != est.samples.size())
        throw InvalidInput(std::string(op) + ": ref and est lengths differ");
    if (ref.samples.empty()) throw InvalidInput(std::string(op) + ": empty input");
}

double mel_of(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double hz_of(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

double sdr(const Waveform& ref, const Waveform& est) {
    require_equal_lengths(ref, est, "sdr");
    const double er = energy(ref.samples);
    if (er <= 0.0) throw DegenerateReference("sdr: reference is silent");

    double ed = 0;
    for (std::size_t i = 0; i < ref.samples.size(); ++i) {
        const double d = ref.samples[i] - est.samples[i];
        ed += d * d;
    }
    if (ed == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(er / ed);
}

std::vector<std::vector<double>> mel_filterbank(int bands, int full_bins, double sample_rate) {
    const double nyquist = sample_rate / 2.0;
    const double mel_max = mel_of(nyquist);
    std::vector<double> edges(bands + 2);
    for (int k = 0; k < bands + 2; ++k) edges[k] = hz_of(mel_max * k / (bands + 1));

    std::vector<std::vector<double>> fb(bands, std::vector<double>(full_bins, 0.0));
    for (int b = 0; b < bands; ++b) {
        const double lo = edges[b], mid = edges[b + 1], hi = edges[b + 2];
        for (int k = 0; k < full_bins; ++k) {
            const double cf = k * sample_rate / (2.0 * (full_bins - 1));
            if (cf > lo && cf < mid)
                fb[b][k] = (cf - lo) / (mid - lo);
            else if (cf >= mid && cf < hi)
                fb[b][k] = (hi - cf) / (hi - mid);
        }
    }
    return fb;
}

double fwsnr(const Waveform& ref, const Waveform& est) {
    require_equal_lengths(ref, est, "fwsnr");
    if (energy(ref.samples) <= 0.0) throw DegenerateReference("fwsnr: reference is silent");

    StftConfig cfg;
    const ComplexSpectrogram R = stft_full(ref, cfg);
    const ComplexSpectrogram E = stft_full(est, cfg);
    const auto fb = mel_filterbank(25, cfg.full_bins(), ref.sample_rate);

    double frame_sum = 0;
    int frames_used = 0;
    for (int t = 0; t < R.frames; ++t) {
        double num = 0, den = 0;
        for (std::size_t b = 0; b < fb.size(); ++b) {
            double sig = 0, dist = 0;
            for (int k = 0; k < R.bins; ++k) {
                const double w = fb[b][k];
                if (w == 0.0) continue;
                sig += w * std::norm(R.at(t, k));
                dist += w * std::norm(R.at(t, k) - E.at(t, k));
            }
            const double weight = std::pow(std::sqrt(sig), 0.2);
            if (weight <= 0.0) continue;
            double snr;
            if (dist == 0.0)
                snr = 35.0;
            else
                snr = std::clamp(10.0 * std::log10(sig / dist), -10.0, 35.0);
            num += weight * snr;
            den += weight;
        }
        if (den > 0.0) {
            frame_sum += num / den;
            ++frames_used;
        }
    }
    if (frames_used == 0) throw DegenerateReference("fwsnr: no frames with signal energy");
    return frame_sum / frames_used;
}

double mrs(const Waveform& ref, const Waveform& est) {
    require_equal_lengths(ref, est, "mrs");

    double total = 0;
    for (int size : {512, 1024, 2048}) {
        StftConfig cfg;
        cfg.fft_size = size;
        cfg.hop = size / 4;
        cfg.window = WindowKind::Hann;
        const ComplexSpectrogram R = stft_full(ref, cfg);
        const ComplexSpectrogram E = stft_full(est, cfg);

        double num = 0, den = 0, logsum = 0;
        const std::size_t cells = R.data.size();
        for (std::size_t i = 0; i < cells; ++i) {
            const double mr = std::abs(R.data[i]);
            const double me = std::abs(E.data[i]);
            num += (mr - me) * (mr - me);
            den += mr * mr;
            logsum += std::abs(std::log(std::max(mr, 1e-7)) - std::log(std::max(me, 1e-7)));
        }
        total += std::sqrt(num) / std::max(std::sqrt(den), 1e-30) + logsum / cells;
    }
    return total;
}

double l1_spec(const CompressedSpecTriplet& ref, const CompressedSpecTriplet& est) {
    if (ref.mag.size() != est.mag.size() || ref.mag.empty())
        throw InvalidInput("l1_spec: magnitude grids differ in shape");
    double acc = 0;
    for (std::size_t i = 0; i < ref.mag.size(); ++i) acc += std::abs(ref.mag[i] - est.mag[i]);
    return acc / ref.mag.size();
}

double l1_spec(const Waveform& ref, const Waveform& est) {
    require_equal_lengths(ref, est, "l1_spec");
    StftConfig cfg;
    return l1_spec(compress(stft(ref, cfg), 0.3), compress(stft(est, cfg), 0.3));
}

namespace {

Aggregate aggregate_of(const std::vector<double>& xs) {
    Aggregate a;
    if (xs.empty()) return a;
    double s = 0;
    for (double v : xs) s += v;
    a.mean = s / xs.size();
    if (xs.size() > 1 && std::isfinite(a.mean)) {
        double ss = 0;
        for (double v : xs) ss += (v - a.mean) * (v - a.mean);
        const double sd = std::sqrt(ss / (xs.size() - 1));
        a.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(xs.size()));
    }
    return a;
}

nlohmann::json number_or_inf(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

}  // namespace

MetricsReport evaluate_pairs(const std::vector<std::string>& ids,
                             const std::vector<Waveform>& refs,
                             const std::vector<Waveform>& ests) {
    if (ids.empty()) throw ConfigError("evaluate: no pairs given");

    std::vector<std::size_t> order(ids.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });

    MetricsReport rep;
    std::vector<double> fw, mr, l1, sd;
    for (std::size_t oi : order) {
        PairRecord rec;
        rec.id = ids[oi];
        try {
            const Waveform& r = refs[oi];
            const Waveform& e = ests[oi];
            if (r.samples.size() != e.samples.size())
                throw InvalidInput("length mismatch: ref " + std::to_string(r.samples.size()) +
                                   " vs est " + std::to_string(e.samples.size()));
            rec.fwsnr_db = fwsnr(r, e);
            rec.mrs = mrs(r, e);
            rec.l1_spec = l1_spec(r, e);
            rec.sdr_db = sdr(r, e);
        } catch (const Error& err) {
            rec.error = err.what();
        }
        if (!rec.excluded()) {
            fw.push_back(rec.fwsnr_db);
            mr.push_back(rec.mrs);
            l1.push_back(rec.l1_spec);
            sd.push_back(rec.sdr_db);
        }
        rep.pairs.push_back(std::move(rec));
    }
    rep.evaluated = static_cast<int>(fw.size());
    rep.excluded = static_cast<int>(rep.pairs.size()) - rep.evaluated;
    rep.fwsnr_db = aggregate_of(fw);
    rep.mrs = aggregate_of(mr);
    rep.l1_spec = aggregate_of(l1);
    rep.sdr_db = aggregate_of(sd);
    return rep;
}

MetricsReport evaluate(const std::string& dir, const std::string& clean_suffix,
                       const std::string& est_suffix) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw ConfigError("evaluate: not a directory: " + dir);

    const std::string clean_tail = "_" + clean_suffix + ".wav";
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string name = e.path().filename().string();
        if (name.size() > clean_tail.size() &&
            name.compare(name.size() - clean_tail.size(), clean_tail.size(), clean_tail) == 0)
            ids.push_back(name.substr(0, name.size() - clean_tail.size()));
    }
    if (ids.empty()) throw ConfigError("evaluate: no *" + clean_tail + " files in " + dir);
    std::sort(ids.begin(), ids.end());

    std::vector<std::string> kept;
    std::vector<Waveform> refs, ests;
    MetricsReport missing_only;
    std::vector<PairRecord> missing;
    for (const auto& id : ids) {
        const std::string ref_path = dir + "/" + id + clean_tail;
        const std::string est_path = dir + "/" + id + "_" + est_suffix + ".wav";
        PairRecord rec;
        rec.id = id;
        try {
            Waveform r = read_wav(ref_path);
            Waveform e = read_wav(est_path);
            kept.push_back(id);
            refs.push_back(std::move(r));
            ests.push_back(std::move(e));
        } catch (const Error& err) {
            rec.error = err.what();
            missing.push_back(std::move(rec));
        }
    }

    MetricsReport rep = kept.empty() && !missing.empty()
                            ? MetricsReport{}
                            : evaluate_pairs(kept, refs, ests);
    for (auto& rec : missing) rep.pairs.push_back(std::move(rec));
    std::sort(rep.pairs.begin(), rep.pairs.end(),
              [](const PairRecord& a, const PairRecord& b) { return a.id < b.id; });
    rep.excluded = 0;
    for (const auto& p : rep.pairs) rep.excluded += p.excluded() ? 1 : 0;
    rep.evaluated = static_cast<int>(rep.pairs.size()) - rep.excluded;
    return rep;
}

std::string report_to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["note"] =
        "sdr is the plain energy ratio 10*log10(E_ref / E_err); it is not the "
        "bss_eval projection family used by mus_eval";
    j["fad"] = nullptr;  // reserved, not computed
    j["evaluated"] = r.evaluated;
    j["excluded"] = r.excluded;

    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : r.pairs) {
        nlohmann::json e;
        e["id"] = p.id;
        if (p.excluded()) {
            e["error"] = p.error;
        } else {
            e["fwsnr_db"] = number_or_inf(p.fwsnr_db);
            e["mrs"] = number_or_inf(p.mrs);
            e["l1_spec"] = number_or_inf(p.l1_spec);
            e["sdr_db"] = number_or_inf(p.sdr_db);
        }
        pairs.push_back(std::move(e));
    }
    j["pairs"] = std::move(pairs);

    auto agg = [](const Aggregate& a) {
        nlohmann::json e;
        e["mean"] = number_or_inf(a.mean);
        e["ci95"] = number_or_inf(a.ci95);
        return e;
    };
    j["aggregate"]["fwsnr_db"] = agg(r.fwsnr_db);
    j["aggregate"]["mrs"] = agg(r.mrs);
    j["aggregate"]["l1_spec"] = agg(r.l1_spec);
    j["aggregate"]["sdr_db"] = agg(r.sdr_db);
    return j.dump(2);
}

}  // namespace tfc
