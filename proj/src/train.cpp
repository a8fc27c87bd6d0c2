#include "tfc/train.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

#include "nlohmann/json.hpp"
#include "tfc/checkpoint.hpp"
#include "tfc/rng.hpp"

namespace fs = std::filesystem;

namespace tfc {

LossBreakdown compute_loss(const CompressedSpecTriplet& clean, const EnhancedSpec& est,
                           const Waveform& x, const Waveform& xhat, const LossWeights& w) {
    if (est.frames != clean.frames || est.bins != clean.bins)
        throw ShapeError("compute_loss: spectrogram grids differ");
    const long n = est.frames * est.bins;
    if (static_cast<long>(est.xr.size()) != n || static_cast<long>(est.xi.size()) != n)
        throw ShapeError("compute_loss: estimate plane size mismatch");
    if (x.size() != xhat.size()) throw ShapeError("compute_loss: waveform lengths differ");
    if (n == 0 || x.size() == 0) throw ShapeError("compute_loss: empty input");

    LossBreakdown out;
    double sm = 0, sr = 0, si = 0;
    for (long i = 0; i < n; ++i) {
        const double m = std::sqrt(est.xr[i] * est.xr[i] + est.xi[i] * est.xi[i]);
        const double dm = m - clean.mag[i];
        sm += dm * dm;
        const double dr = est.xr[i] - clean.re[i];
        sr += dr * dr;
        const double di = est.xi[i] - clean.im[i];
        si += di * di;
    }
    out.l_mag = sm / static_cast<double>(n);
    out.l_ri = sr / static_cast<double>(n) + si / static_cast<double>(n);
    double st = 0;
    for (std::size_t i = 0; i < x.size(); ++i) st += std::abs(x.samples[i] - xhat.samples[i]);
    out.l_time = st / static_cast<double>(x.size());
    out.total = w.mag * out.l_mag + w.ri * out.l_ri + w.time * out.l_time;
    return out;
}

namespace {

struct PairPaths {
    std::string clean, degraded;
};

struct Manifest {
    std::vector<PairPaths> train, val;
};

std::vector<PairPaths> parse_pairs(const nlohmann::json& arr, const fs::path& base,
                                   const std::string& section) {
    if (!arr.is_array()) throw ConfigError("manifest: \"" + section + "\" must be an array");
    std::vector<PairPaths> out;
    for (const auto& e : arr) {
        if (!e.is_object() || !e.contains("clean") || !e.contains("degraded"))
            throw ConfigError("manifest: each " + section +
                              " entry needs \"clean\" and \"degraded\"");
        for (const auto& [k, v] : e.items())
            if (k != "clean" && k != "degraded")
                throw ConfigError("manifest: unknown key \"" + k + "\" in " + section);
        auto resolve = [&](const std::string& s) {
            fs::path p(s);
            return (p.is_absolute() ? p : base / p).string();
        };
        out.push_back({resolve(e["clean"].get<std::string>()),
                       resolve(e["degraded"].get<std::string>())});
    }
    return out;
}

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("manifest: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("manifest: " + path + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("manifest: top level must be an object");
    for (const auto& [k, v] : j.items())
        if (k != "train" && k != "val")
            throw ConfigError("manifest: unknown key \"" + k + "\"");
    if (!j.contains("train")) throw ConfigError("manifest: missing \"train\" section");
    const fs::path base = fs::path(path).parent_path();
    Manifest m;
    m.train = parse_pairs(j["train"], base, "train");
    if (j.contains("val")) m.val = parse_pairs(j["val"], base, "val");
    if (m.train.empty()) throw ConfigError("manifest: training set is empty");
    return m;
}

// Same permutation for a given (seed, epoch) no matter where a run was
// interrupted, so resumed runs see the identical data order.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, long epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(Rng::derive(seed, 1000 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.next_below(i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

// Frozen-parameter loss through the plain forward/resynthesis path.
double validation_total(GeneratorParams<float>& params,
                        const std::vector<std::pair<Waveform, Waveform>>& val,
                        const TrainConfig& cfg) {
    double sum = 0;
    for (const auto& [clean, degraded] : val) {
        const auto y = compress(stft(degraded, cfg.stft), cfg.compress_exponent);
        const auto xc = compress(stft(clean, cfg.stft), cfg.compress_exponent);
        EnhancedSpec est = generator_forward(y, params);
        CompressedSpecTriplet t;
        t.frames = static_cast<int>(est.frames);
        t.bins = static_cast<int>(est.bins);
        t.exponent = cfg.compress_exponent;
        t.mag = est.masked_mag;
        t.re = est.xr;
        t.im = est.xi;
        const Waveform xhat = resynthesize(t, cfg.stft, static_cast<long>(clean.size()));
        sum += compute_loss(xc, est, clean, xhat, cfg.weights).total;
    }
    return sum / static_cast<double>(val.size());
}

struct ProgressState {
    double first_total = 0;
    bool has_first = false;
    double best_val = 0;
    bool has_best = false;
};

void save_state(const std::string& path, Trainer<float>& tr, long epoch, long next_index,
                const ProgressState& ps) {
    std::vector<std::pair<std::string, ad::Tensor<float>>> extra;
    for (std::size_t i = 0; i < tr.named.size(); ++i) {
        extra.emplace_back("opt.m." + tr.named[i].first, tr.opt.m[i]);
        extra.emplace_back("opt.v." + tr.named[i].first, tr.opt.v[i]);
    }
    nlohmann::json ex;
    ex["opt_step"] = tr.opt.step_count;
    ex["global_step"] = tr.global_step;
    ex["epoch"] = epoch;
    ex["step_in_epoch"] = next_index;
    if (ps.has_first) ex["first_total"] = ps.first_total;
    if (ps.has_best) ex["best_val"] = ps.best_val;
    save_generator(path, tr.params, std::move(extra), std::move(ex));
}

// Returns (epoch, next_index); optimizer moments and counters go straight
// into the trainer.
std::pair<long, long> restore_state(const Checkpoint<float>& raw, Trainer<float>& tr,
                                    ProgressState& ps) {
    nlohmann::json j = nlohmann::json::parse(raw.config_json);
    if (!j.contains("extra")) throw ConfigError("resume checkpoint has no training state");
    const nlohmann::json& ex = j["extra"];
    std::pair<long, long> pos;
    try {
        tr.opt.step_count = ex.at("opt_step").get<long>();
        tr.global_step = ex.at("global_step").get<long>();
        pos.first = ex.at("epoch").get<long>();
        pos.second = ex.at("step_in_epoch").get<long>();
        if (ex.contains("first_total")) {
            ps.first_total = ex["first_total"].get<double>();
            ps.has_first = true;
        }
        if (ex.contains("best_val")) {
            ps.best_val = ex["best_val"].get<double>();
            ps.has_best = true;
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("resume checkpoint state: ") + e.what());
    }
    for (std::size_t i = 0; i < tr.named.size(); ++i) {
        for (const char* kind : {"m", "v"}) {
            const std::string name = std::string("opt.") + kind + "." + tr.named[i].first;
            const ad::Tensor<float>* t = raw.find(name);
            if (!t) throw ConfigError("resume checkpoint: missing " + name);
            ad::Tensor<float>& dst = kind[0] == 'm' ? tr.opt.m[i] : tr.opt.v[i];
            if (t->shape != dst.shape)
                throw ConfigError("resume checkpoint: shape mismatch for " + name);
            std::copy(t->data(), t->data() + t->count(), dst.data());
        }
    }
    return pos;
}

} // namespace

FitResult fit(const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.manifest.empty()) throw ConfigError("fit: manifest path required");
    if (cfg.out_dir.empty()) throw ConfigError("fit: output directory required");
    const Manifest manifest = load_manifest(cfg.manifest);

    fs::create_directories(cfg.out_dir);
    const std::string last_path = (fs::path(cfg.out_dir) / "last.ckpt").string();
    const std::string best_path = (fs::path(cfg.out_dir) / "best.ckpt").string();

    std::vector<TrainItem<float>> items;
    items.reserve(manifest.train.size());
    for (const auto& p : manifest.train)
        items.push_back(make_train_item<float>(read_wav(p.clean), read_wav(p.degraded), cfg.stft,
                                               cfg.compress_exponent));
    std::vector<std::pair<Waveform, Waveform>> val;
    for (const auto& p : manifest.val)
        val.emplace_back(read_wav(p.clean), read_wav(p.degraded));

    const bool resumed = !cfg.resume_from.empty();
    Checkpoint<float> resume_raw;
    GeneratorParams<float> params = [&] {
        if (!resumed) {
            Rng rng(cfg.seed);
            return init_generator<float>(cfg.gen, rng);
        }
        GeneratorParams<float> p = load_generator<float>(cfg.resume_from, &resume_raw);
        nlohmann::json stored = nlohmann::json::parse(resume_raw.config_json)["generator"];
        if (stored != generator_config_to_json(cfg.gen))
            throw ConfigError(
                "fit: resume checkpoint was trained with a different generator config");
        return p;
    }();
    set_requires_grad(params, true);

    Trainer<float> trainer(std::move(params), cfg);
    ProgressState ps;
    long epoch = 0;
    long next_index = 0;
    if (resumed) std::tie(epoch, next_index) = restore_state(resume_raw, trainer, ps);

    std::ofstream log((fs::path(cfg.out_dir) / "metrics.jsonl").string(), std::ios::app);
    if (!log) throw ConfigError("fit: cannot open metrics log in " + cfg.out_dir);

    FitResult result;
    result.best_validation = ps.best_val;
    result.has_validation = !val.empty();
    bool best_saved = false;
    long steps_since_val = 0;
    bool stop = false;

    auto run_validation = [&](long at_epoch) {
        const double v = validation_total(trainer.params, val, cfg);
        steps_since_val = 0;
        if (!ps.has_best || v < ps.best_val) {
            ps.best_val = v;
            ps.has_best = true;
            save_generator(best_path, trainer.params, {}, {{"val_total", v}});
            best_saved = true;
        }
        result.best_validation = ps.best_val;
        nlohmann::json line;
        line["event"] = "validation";
        line["epoch"] = at_epoch;
        line["step"] = trainer.global_step;
        line["val_total"] = v;
        log << line.dump() << "\n" << std::flush;
    };

    const bool step_capped = cfg.max_steps > 0;
    while (!stop &&
           (step_capped ? trainer.global_step < cfg.max_steps : epoch < cfg.epochs)) {
        const auto order = epoch_order(items.size(), cfg.seed, epoch);
        while (next_index < static_cast<long>(order.size()) && !stop) {
            std::vector<const TrainItem<float>*> batch;
            const long end = std::min<long>(next_index + cfg.batch_size, order.size());
            for (long i = next_index; i < end; ++i) batch.push_back(&items[order[i]]);

            const auto t0 = std::chrono::steady_clock::now();
            LossBreakdown lb;
            try {
                lb = trainer.step(batch);
            } catch (const DivergedError&) {
                save_state((fs::path(cfg.out_dir) / "diverged.ckpt").string(), trainer, epoch,
                           next_index, ps);
                throw;
            }
            const double wall_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
            next_index = end;
            ++result.steps;
            ++steps_since_val;
            if (!ps.has_first) {
                ps.first_total = lb.total;
                ps.has_first = true;
            }
            if (result.steps == 1) result.first = lb;
            result.last = lb;

            nlohmann::json line;
            line["step"] = trainer.global_step;
            line["epoch"] = epoch;
            line["l_mag"] = lb.l_mag;
            line["l_ri"] = lb.l_ri;
            line["l_time"] = lb.l_time;
            line["total"] = lb.total;
            line["lr"] = cfg.lr;
            line["wall_ms"] = wall_ms;
            log << line.dump() << "\n" << std::flush;

            if (step_capped && trainer.global_step >= cfg.max_steps) stop = true;
            if (cfg.stop_loss_ratio > 0 && lb.total <= cfg.stop_loss_ratio * ps.first_total)
                stop = true;
            if (cfg.checkpoint_every > 0 && trainer.global_step % cfg.checkpoint_every == 0)
                save_state(last_path, trainer, epoch, next_index, ps);
        }
        if (next_index >= static_cast<long>(order.size())) {
            ++epoch;
            next_index = 0;
            if (!val.empty()) run_validation(epoch);
        }
    }

    if (!val.empty() && steps_since_val > 0) run_validation(epoch);
    save_state(last_path, trainer, epoch, next_index, ps);
    if (!best_saved && !ps.has_best) save_generator(best_path, trainer.params, {}, nlohmann::json{});
    result.best_checkpoint = best_path;
    result.last_checkpoint = last_path;
    return result;
}

} // namespace tfc
