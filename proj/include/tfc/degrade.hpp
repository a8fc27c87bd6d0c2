#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "tfc/wav.hpp"

namespace tfc {

// Sentinel SNR that disables the noise path entirely.
inline constexpr double kNoNoiseSnr = std::numeric_limits<double>::infinity();

inline constexpr std::array<std::array<double, 2>, 4> kEqBandEdgesHz{
    {{0.0, 200.0}, {200.0, 1000.0}, {1000.0, 4000.0}, {4000.0, 8000.0}}};

struct DegradationSpec {
    std::string rir_source = "synthetic";    // directory of WAVs, or "synthetic"
    std::string noise_source = "synthetic";  // directory of WAVs, or "synthetic"
    std::array<double, 2> snr_range_db{5.0, 30.0};
    std::array<double, 2> band_gain_range_db{-15.0, 15.0};
    double lowcut_hz = 35.0;
    double peak_target = 0.95;
    std::uint64_t seed = 0;

    void validate() const;  // throws ConfigError on malformed ranges
};

// Everything needed to re-derive `degraded` from `clean` without the RNG.
struct AppliedDegradation {
    std::string rir_id;
    std::string noise_id;
    long noise_offset = 0;  // cyclic tiling start within the noise clip
    double snr_db = kNoNoiseSnr;
    std::array<double, 4> band_gains_db{0.0, 0.0, 0.0, 0.0};
    double lowcut_hz = 35.0;
    double peak_target = 0.95;
    std::uint64_t seed = 0;
};

struct PairedExample {
    Waveform clean;  // processed target (lowcut + peak normalization)
    Waveform degraded;
    AppliedDegradation applied;
};

// Named collection of sample buffers (RIRs or noise clips).
struct AudioBank {
    std::vector<std::string> ids;
    std::vector<std::vector<double>> clips;

    std::size_t size() const { return ids.size(); }
};

Waveform convolve_rir(const Waveform& x, const std::vector<double>& h);
Waveform mix_at_snr(const Waveform& s, const Waveform& n, double snr_db);
Waveform band_eq(const Waveform& x, const std::array<double, 4>& gains_db);
Waveform lowcut(const Waveform& x, double cutoff_hz = 35.0);

struct NormalizeResult {
    Waveform wave;
    bool silent = false;
};
NormalizeResult normalize_peak(const Waveform& x, double target = 0.95);

AudioBank make_synthetic_rir_bank(std::uint64_t seed, int count = 16);
AudioBank make_synthetic_noise_bank(std::uint64_t seed, int count = 16,
                                    int length = 4 * kPipelineSampleRate);
AudioBank load_bank_dir(const std::string& dir);
// Resolves "synthetic" to a generated bank, anything else to a directory scan.
AudioBank resolve_bank(const std::string& source, bool rir);

PairedExample degrade(const Waveform& clean, const DegradationSpec& spec,
                      const AudioBank& rirs, const AudioBank& noises);
PairedExample degrade(const Waveform& clean, const DegradationSpec& spec);

// Re-derives the degraded waveform from a recorded parameter set, bit-exactly.
Waveform replay_degradation(const Waveform& clean, const AppliedDegradation& applied,
                            const AudioBank& rirs, const AudioBank& noises);

std::string applied_to_json(const AppliedDegradation& a);
AppliedDegradation applied_from_json(const std::string& text);

}  // namespace tfc
