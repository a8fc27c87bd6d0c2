#pragma once

#include <string>
#include <vector>

namespace tfc {

// Mono sample sequence, amplitudes nominally in [-1, 1].
struct Waveform {
    std::vector<double> samples;
    int sample_rate = 16000;

    std::size_t size() const { return samples.size(); }
};

inline constexpr int kPipelineSampleRate = 16000;

// 16-bit PCM mono readers/writers. Anything else (sample rate, channel
// count, encoding) is rejected with a descriptive error; there is no
// silent resampling.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& w);

} // namespace tfc
