#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tfc/spectral.hpp"
#include "tfc/wav.hpp"

namespace tfc {

double sdr(const Waveform& ref, const Waveform& est);
double fwsnr(const Waveform& ref, const Waveform& est);
double mrs(const Waveform& ref, const Waveform& est);
double l1_spec(const Waveform& ref, const Waveform& est);
double l1_spec(const CompressedSpecTriplet& ref, const CompressedSpecTriplet& est);

// 25 triangular mel filters over the full-grid bin centers; row b holds the
// per-bin weights of band b.
std::vector<std::vector<double>> mel_filterbank(int bands, int full_bins, double sample_rate);

struct PairRecord {
    std::string id;
    double fwsnr_db = 0;
    double mrs = 0;
    double l1_spec = 0;
    double sdr_db = 0;
    std::string error;  // nonempty means the pair was excluded

    bool excluded() const { return !error.empty(); }
};

struct Aggregate {
    double mean = 0;
    double ci95 = 0;  // normal-approximation 95% half-width
};

struct MetricsReport {
    std::vector<PairRecord> pairs;  // sorted by id, excluded ones included
    int evaluated = 0;
    int excluded = 0;
    Aggregate fwsnr_db, mrs, l1_spec, sdr_db;
};

MetricsReport evaluate(const std::string& dir, const std::string& clean_suffix = "clean",
                       const std::string& est_suffix = "estimate");
MetricsReport evaluate_pairs(const std::vector<std::string>& ids,
                             const std::vector<Waveform>& refs,
                             const std::vector<Waveform>& ests);

std::string report_to_json(const MetricsReport& r);

}  // namespace tfc
