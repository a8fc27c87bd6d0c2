// tfc: dataset degradation, training, enhancement, and evaluation from one
// binary. Every command echoes its effective configuration so a run can be
// reproduced bit-exactly from the log alone.
//
// Exit codes: 0 success, 1 partial data failure, 2 usage or config error.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tfc/checkpoint.hpp"
#include "tfc/degrade.hpp"
#include "tfc/enhance.hpp"
#include "tfc/errors.hpp"
#include "tfc/metrics.hpp"
#include "tfc/rng.hpp"
#include "tfc/train.hpp"
#include "tfc/wav.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool quiet_logs() {
    const char* v = std::getenv("TFC_LOG");
    return v && (std::string(v) == "quiet" || std::string(v) == "0");
}

void info(const std::string& line) {
    if (!quiet_logs()) std::cout << line << "\n";
}

std::vector<fs::path> list_wavs(const std::string& dir) {
    if (!fs::is_directory(dir)) throw tfc::ConfigError("not a directory: " + dir);
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".wav") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

// ---- config file ----
// JSON with up to four sections (stft, degrade, generator, train), each key
// optional; command-line flags override whatever the file sets.

struct CliState {
    tfc::StftConfig stft;
    tfc::DegradationSpec deg;
    tfc::GeneratorConfig gen;
    tfc::TrainConfig train;
    tfc::LossWeights weights;
    double compress_exponent = 0.3;
    bool variant_set = false;
};

void reject_unknown(const json& j, const std::string& where,
                    std::initializer_list<const char*> keys) {
    for (const auto& [k, v] : j.items()) {
        (void)v;
        if (std::none_of(keys.begin(), keys.end(), [&](const char* s) { return k == s; }))
            throw tfc::ConfigError("config: unknown key '" + k + "' in " + where);
    }
}

template <typename T>
void take(const json& j, const char* key, T& into) {
    if (j.contains(key)) into = j.at(key).get<T>();
}

void apply_stft(const json& j, tfc::StftConfig& c) {
    reject_unknown(j, "stft", {"fft_size", "hop"});
    take(j, "fft_size", c.fft_size);
    take(j, "hop", c.hop);
}

void apply_degrade(const json& j, tfc::DegradationSpec& d) {
    reject_unknown(j, "degrade",
                   {"rir_source", "noise_source", "snr_range_db", "band_gain_range_db",
                    "lowcut_hz", "peak_target", "seed"});
    take(j, "rir_source", d.rir_source);
    take(j, "noise_source", d.noise_source);
    take(j, "snr_range_db", d.snr_range_db);
    take(j, "band_gain_range_db", d.band_gain_range_db);
    take(j, "lowcut_hz", d.lowcut_hz);
    take(j, "peak_target", d.peak_target);
    take(j, "seed", d.seed);
}

void apply_generator(const json& j, CliState& st) {
    reject_unknown(j, "generator",
                   {"base_channels", "dilations", "variant", "tfc_depth", "num_heads",
                    "conv_kernel"});
    take(j, "base_channels", st.gen.base_channels);
    if (j.contains("dilations")) {
        const auto d = j.at("dilations").get<std::vector<long>>();
        if (d.size() != st.gen.dilations.size())
            throw tfc::ConfigError("config: dilations must have 4 entries");
        std::copy(d.begin(), d.end(), st.gen.dilations.begin());
    }
    if (j.contains("variant")) {
        st.gen.variant = tfc::parse_variant(j.at("variant").get<std::string>());
        st.variant_set = true;
    }
    take(j, "tfc_depth", st.gen.tfc_depth);
    take(j, "num_heads", st.gen.num_heads);
    take(j, "conv_kernel", st.gen.conv_kernel);
}

void apply_train(const json& j, CliState& st) {
    reject_unknown(j, "train",
                   {"lr", "batch_size", "epochs", "seed", "weight_decay", "grad_clip",
                    "max_steps", "stop_loss_ratio", "checkpoint_every", "loss_weights",
                    "compress_exponent"});
    take(j, "lr", st.train.lr);
    take(j, "batch_size", st.train.batch_size);
    take(j, "epochs", st.train.epochs);
    take(j, "seed", st.train.seed);
    take(j, "weight_decay", st.train.weight_decay);
    take(j, "grad_clip", st.train.grad_clip);
    take(j, "max_steps", st.train.max_steps);
    take(j, "stop_loss_ratio", st.train.stop_loss_ratio);
    take(j, "checkpoint_every", st.train.checkpoint_every);
    if (j.contains("loss_weights")) {
        const auto w = j.at("loss_weights").get<std::vector<double>>();
        if (w.size() != 3)
            throw tfc::ConfigError("config: loss_weights must be [mag, ri, time]");
        st.weights = {w[0], w[1], w[2]};
    }
    take(j, "compress_exponent", st.compress_exponent);
}

void load_config(const std::string& path, CliState& st) {
    std::ifstream f(path);
    if (!f) throw tfc::ConfigError("cannot open config file: " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw tfc::ConfigError("config: " + std::string(e.what()));
    }
    if (!j.is_object()) throw tfc::ConfigError("config: top level must be an object");
    reject_unknown(j, "config", {"stft", "degrade", "generator", "train"});
    if (j.contains("stft")) apply_stft(j["stft"], st.stft);
    if (j.contains("degrade")) apply_degrade(j["degrade"], st.deg);
    if (j.contains("generator")) apply_generator(j["generator"], st);
    if (j.contains("train")) apply_train(j["train"], st);
}

json stft_to_json(const tfc::StftConfig& c) {
    return {{"fft_size", c.fft_size}, {"hop", c.hop}};
}

json degrade_to_json(const tfc::DegradationSpec& d) {
    return {{"rir_source", d.rir_source},
            {"noise_source", d.noise_source},
            {"snr_range_db", d.snr_range_db},
            {"band_gain_range_db", d.band_gain_range_db},
            {"lowcut_hz", d.lowcut_hz},
            {"peak_target", d.peak_target},
            {"seed", d.seed}};
}

json train_to_json(const tfc::TrainConfig& c, double compress_exponent) {
    return {{"manifest", c.manifest},
            {"out_dir", c.out_dir},
            {"lr", c.lr},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"seed", c.seed},
            {"weight_decay", c.weight_decay},
            {"grad_clip", c.grad_clip},
            {"max_steps", c.max_steps},
            {"stop_loss_ratio", c.stop_loss_ratio},
            {"checkpoint_every", c.checkpoint_every},
            {"resume_from", c.resume_from},
            {"loss_weights", {c.weights.mag, c.weights.ri, c.weights.time}},
            {"compress_exponent", compress_exponent},
            {"generator", tfc::generator_config_to_json(c.gen)},
            {"stft", stft_to_json(c.stft)}};
}

void print_format_hint() {
    std::cerr << "hint: inputs must be 16 kHz mono 16-bit PCM WAV; resample offline"
                 " (e.g. sox in.wav -r 16000 -c 1 -b 16 out.wav) and retry\n";
}

// ---- degrade ----

int run_degrade(CliState st, const std::string& in_dir, const std::string& out_dir) {
    st.deg.validate();
    const std::vector<fs::path> files = list_wavs(in_dir);
    if (files.empty()) throw tfc::ConfigError("no .wav files in " + in_dir);
    fs::create_directories(out_dir);
    const tfc::AudioBank rirs = tfc::resolve_bank(st.deg.rir_source, true);
    const tfc::AudioBank noises = tfc::resolve_bank(st.deg.noise_source, false);
    info("config: " + degrade_to_json(st.deg).dump());

    json pairs = json::array();
    long skipped = 0;
    for (std::size_t i = 0; i < files.size(); ++i) {
        const std::string stem = files[i].stem().string();
        try {
            const tfc::Waveform clean = tfc::read_wav(files[i].string());
            tfc::DegradationSpec spec = st.deg;
            spec.seed = tfc::Rng::derive(st.deg.seed, i);
            const tfc::PairedExample pair = tfc::degrade(clean, spec, rirs, noises);
            const std::string clean_name = stem + ".clean.wav";
            const std::string degraded_name = stem + ".degraded.wav";
            tfc::write_wav((fs::path(out_dir) / clean_name).string(), pair.clean);
            tfc::write_wav((fs::path(out_dir) / degraded_name).string(), pair.degraded);
            std::ofstream meta(fs::path(out_dir) / (stem + ".applied.json"));
            meta << tfc::applied_to_json(pair.applied) << "\n";
            pairs.push_back({{"clean", clean_name}, {"degraded", degraded_name}});
            info(stem + ": snr " + std::to_string(pair.applied.snr_db) + " dB, rir " +
                 pair.applied.rir_id + ", noise " + pair.applied.noise_id);
        } catch (const tfc::Error& e) {
            ++skipped;
            std::cerr << "skip " << files[i].string() << ": " << e.what() << "\n";
        }
    }
    if (skipped) print_format_hint();
    {
        std::ofstream mf(fs::path(out_dir) / "manifest.json");
        mf << json{{"train", pairs}}.dump(2) << "\n";
    }
    std::cout << pairs.size() << " pairs written to " << out_dir;
    if (skipped) std::cout << " (" << skipped << " skipped)";
    std::cout << "\n";
    return skipped ? 1 : 0;
}

// ---- train ----

int run_train(const CliState& st) {
    tfc::TrainConfig cfg = st.train;
    cfg.gen = st.gen;
    cfg.stft = st.stft;
    cfg.weights = st.weights;
    cfg.compress_exponent = st.compress_exponent;
    cfg.validate();
    info("config: " + train_to_json(cfg, cfg.compress_exponent).dump());

    const tfc::FitResult r = tfc::fit(cfg);
    std::cout << "steps " << r.steps;
    if (r.steps > 0)
        std::cout << ", loss " << r.first.total << " -> " << r.last.total;
    if (r.has_validation) std::cout << ", best val " << r.best_validation;
    std::cout << "\n";
    std::cout << "checkpoints: " << r.last_checkpoint << " " << r.best_checkpoint << "\n";
    return 0;
}

// ---- enhance ----

int run_enhance(const CliState& st, const std::string& ckpt, const std::string& in,
                const std::string& out) {
    tfc::Enhancer enhancer(ckpt, st.stft, st.compress_exponent);
    if (st.variant_set && st.gen.variant != enhancer.config().variant)
        throw tfc::ConfigError("checkpoint holds variant " +
                               std::string(tfc::variant_name(enhancer.config().variant)) +
                               ", config requests " +
                               std::string(tfc::variant_name(st.gen.variant)));
    info("config: " + json{{"checkpoint", ckpt},
                           {"generator", tfc::generator_config_to_json(enhancer.config())},
                           {"stft", stft_to_json(st.stft)},
                           {"compress_exponent", st.compress_exponent}}
                          .dump());

    if (fs::is_directory(in)) {
        const std::vector<fs::path> files = list_wavs(in);
        if (files.empty()) throw tfc::ConfigError("no .wav files in " + in);
        fs::create_directories(out);
        long skipped = 0;
        for (const fs::path& f : files) {
            try {
                const tfc::Waveform x = tfc::read_wav(f.string());
                const tfc::Waveform y = enhancer.enhance(x);
                tfc::write_wav((fs::path(out) / f.filename()).string(), y);
                info(f.filename().string() + ": " + std::to_string(x.size()) + " samples");
            } catch (const tfc::Error& e) {
                ++skipped;
                std::cerr << "skip " << f.string() << ": " << e.what() << "\n";
            }
        }
        if (skipped) print_format_hint();
        std::cout << (files.size() - skipped) << " files enhanced";
        if (skipped) std::cout << " (" << skipped << " skipped)";
        std::cout << "\n";
        return skipped ? 1 : 0;
    }

    const tfc::Waveform x = tfc::read_wav(in);
    const tfc::Waveform y = enhancer.enhance(x);
    const fs::path parent = fs::path(out).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    tfc::write_wav(out, y);
    std::cout << out << ": " << y.size() << " samples\n";
    return 0;
}

// ---- evaluate ----

int run_evaluate(const std::string& ref_dir, const std::string& est_dir,
                 const std::string& report_path) {
    const std::vector<fs::path> refs = list_wavs(ref_dir);
    const std::vector<fs::path> ests = list_wavs(est_dir);
    if (refs.empty()) throw tfc::ConfigError("no .wav files in " + ref_dir);
    if (ests.empty()) throw tfc::ConfigError("no .wav files in " + est_dir);
    info("config: " + json{{"ref", ref_dir}, {"est", est_dir}}.dump());

    long mismatched = 0;
    std::vector<std::string> ids;
    std::vector<tfc::Waveform> ref_waves, est_waves;
    for (const fs::path& r : refs) {
        const fs::path e = fs::path(est_dir) / r.filename();
        if (!fs::exists(e)) {
            ++mismatched;
            std::cerr << "no estimate for " << r.filename().string() << "\n";
            continue;
        }
        try {
            tfc::Waveform rw = tfc::read_wav(r.string());
            tfc::Waveform ew = tfc::read_wav(e.string());
            ids.push_back(r.stem().string());
            ref_waves.push_back(std::move(rw));
            est_waves.push_back(std::move(ew));
        } catch (const tfc::Error& ex) {
            ++mismatched;
            std::cerr << "skip " << r.filename().string() << ": " << ex.what() << "\n";
        }
    }
    for (const fs::path& e : ests)
        if (!fs::exists(fs::path(ref_dir) / e.filename())) {
            ++mismatched;
            std::cerr << "no reference for " << e.filename().string() << "\n";
        }
    if (ids.empty()) throw tfc::ConfigError("no matching reference/estimate pairs");

    const tfc::MetricsReport rep = tfc::evaluate_pairs(ids, ref_waves, est_waves);
    if (!report_path.empty()) {
        const fs::path parent = fs::path(report_path).parent_path();
        if (!parent.empty()) fs::create_directories(parent);
        std::ofstream rf(report_path);
        rf << tfc::report_to_json(rep) << "\n";
        if (!rf) throw tfc::ConfigError("cannot write report: " + report_path);
    }

    for (const tfc::PairRecord& p : rep.pairs) {
        if (p.excluded()) {
            std::cout << p.id << ": excluded (" << p.error << ")\n";
            continue;
        }
        std::cout << p.id << ": fwsnr " << p.fwsnr_db << " mrs " << p.mrs << " l1_spec "
                  << p.l1_spec << " sdr " << p.sdr_db << "\n";
    }
    std::cout << "evaluated " << rep.evaluated << " excluded " << rep.excluded << "\n";
    std::cout << "fwsnr   " << rep.fwsnr_db.mean << " +/- " << rep.fwsnr_db.ci95 << "\n";
    std::cout << "mrs     " << rep.mrs.mean << " +/- " << rep.mrs.ci95 << "\n";
    std::cout << "l1_spec " << rep.l1_spec.mean << " +/- " << rep.l1_spec.ci95 << "\n";
    std::cout << "sdr     " << rep.sdr_db.mean << " +/- " << rep.sdr_db.ci95 << "\n";
    return (mismatched || rep.excluded) ? 1 : 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"TF-Conformer music enhancement toolkit"};
    app.require_subcommand(1);

    CliState st;
    std::string config_path;

    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file");
    };

    // degrade
    auto* deg = app.add_subcommand("degrade", "Make paired clean/degraded WAVs");
    std::string deg_in, deg_out;
    std::uint64_t deg_seed = 0;
    deg->add_option("--in", deg_in, "directory of clean 16 kHz mono WAVs")->required();
    deg->add_option("--out", deg_out, "output directory")->required();
    deg->add_option("--seed", deg_seed, "base seed for the degradation draws");
    add_config(deg);

    // train
    auto* tr = app.add_subcommand("train", "Fit a generator on a pair manifest");
    std::string tr_manifest, tr_out, tr_variant, tr_resume;
    double tr_lr = 0, tr_stop_ratio = 0, tr_weight_decay = 0, tr_grad_clip = 0;
    long tr_epochs = 0, tr_batch = 0, tr_max_steps = 0, tr_ckpt_every = 0;
    std::uint64_t tr_seed = 0;
    tr->add_option("--manifest", tr_manifest, "pair manifest JSON")->required();
    tr->add_option("--out", tr_out, "checkpoint/metrics output directory")->required();
    tr->add_option("--variant", tr_variant, "TFC variant: C, P, PC, CPv, CPq");
    tr->add_option("--epochs", tr_epochs, "training epochs");
    tr->add_option("--lr", tr_lr, "learning rate");
    tr->add_option("--batch-size", tr_batch, "examples per optimizer step");
    tr->add_option("--seed", tr_seed, "init/shuffle seed");
    tr->add_option("--weight-decay", tr_weight_decay, "decoupled weight decay");
    tr->add_option("--grad-clip", tr_grad_clip, "global gradient-norm clip, 0 = off");
    tr->add_option("--max-steps", tr_max_steps, "stop after N optimizer steps");
    tr->add_option("--stop-loss-ratio", tr_stop_ratio,
                   "stop once total <= ratio * first-step total");
    tr->add_option("--checkpoint-every", tr_ckpt_every, "write last.ckpt every N steps");
    tr->add_option("--resume", tr_resume, "resume from an earlier last.ckpt");
    add_config(tr);

    // enhance
    auto* en = app.add_subcommand("enhance", "Enhance a WAV file or directory");
    std::string en_ckpt, en_in, en_out, en_variant;
    en->add_option("--ckpt", en_ckpt, "generator checkpoint")->required();
    en->add_option("--in", en_in, "input WAV or directory")->required();
    en->add_option("--out", en_out, "output WAV or directory")->required();
    en->add_option("--variant", en_variant, "require this TFC variant in the checkpoint");
    add_config(en);

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Score estimate WAVs against references");
    std::string ev_ref, ev_est, ev_report;
    ev->add_option("--ref", ev_ref, "directory of reference WAVs")->required();
    ev->add_option("--est", ev_est, "directory of estimate WAVs")->required();
    ev->add_option("--report", ev_report, "write the JSON report here");
    add_config(ev);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (!config_path.empty()) load_config(config_path, st);

        if (deg->parsed()) {
            if (deg->count("--seed")) st.deg.seed = deg_seed;
            return run_degrade(st, deg_in, deg_out);
        }
        if (tr->parsed()) {
            st.train.manifest = tr_manifest;
            st.train.out_dir = tr_out;
            if (tr->count("--variant")) {
                st.gen.variant = tfc::parse_variant(tr_variant);
                st.variant_set = true;
            }
            if (tr->count("--epochs")) st.train.epochs = tr_epochs;
            if (tr->count("--lr")) st.train.lr = tr_lr;
            if (tr->count("--batch-size")) st.train.batch_size = tr_batch;
            if (tr->count("--seed")) st.train.seed = tr_seed;
            if (tr->count("--weight-decay")) st.train.weight_decay = tr_weight_decay;
            if (tr->count("--grad-clip")) st.train.grad_clip = tr_grad_clip;
            if (tr->count("--max-steps")) st.train.max_steps = tr_max_steps;
            if (tr->count("--stop-loss-ratio")) st.train.stop_loss_ratio = tr_stop_ratio;
            if (tr->count("--checkpoint-every")) st.train.checkpoint_every = tr_ckpt_every;
            if (tr->count("--resume")) st.train.resume_from = tr_resume;
            return run_train(st);
        }
        if (en->parsed()) {
            if (en->count("--variant")) {
                st.gen.variant = tfc::parse_variant(en_variant);
                st.variant_set = true;
            }
            return run_enhance(st, en_ckpt, en_in, en_out);
        }
        if (ev->parsed()) return run_evaluate(ev_ref, ev_est, ev_report);
    } catch (const tfc::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const tfc::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
