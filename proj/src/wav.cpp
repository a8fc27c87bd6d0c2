#include "tfc/wav.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "tfc/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "WAV and checkpoint I/O assume a little-endian host");

namespace tfc {

namespace {

std::uint32_t rd_u32(const unsigned char* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
           std::uint32_t(p[3]) << 24;
}
std::uint16_t rd_u16(const unsigned char* p) { return std::uint16_t(p[0] | p[1] << 8); }

void wr_u32(std::ofstream& f, std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void wr_u16(std::ofstream& f, std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); }

} // namespace

Waveform read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InvalidInput("cannot open WAV file: " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
        std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
        throw InvalidInput("not a RIFF/WAVE file: " + path);

    std::uint16_t fmt = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const unsigned char* data = nullptr;
    std::size_t data_len = 0;

    std::size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        const char* id = reinterpret_cast<const char*>(buf.data() + pos);
        std::uint32_t len = rd_u32(buf.data() + pos + 4);
        const unsigned char* body = buf.data() + pos + 8;
        if (pos + 8 + len > buf.size()) len = static_cast<std::uint32_t>(buf.size() - pos - 8);
        if (std::memcmp(id, "fmt ", 4) == 0 && len >= 16) {
            fmt = rd_u16(body);
            channels = rd_u16(body + 2);
            rate = rd_u32(body + 4);
            bits = rd_u16(body + 14);
        } else if (std::memcmp(id, "data", 4) == 0) {
            data = body;
            data_len = len;
        }
        pos += 8 + len + (len & 1); // chunks are word-aligned
    }

    if (!data) throw InvalidInput("WAV file has no data chunk: " + path);
    if (fmt != 1) throw InvalidInput(path + ": only PCM encoding is supported (fmt tag " +
                                     std::to_string(fmt) + ")");
    if (bits != 16) throw InvalidInput(path + ": only 16-bit samples are supported, got " +
                                       std::to_string(bits) + "-bit");
    if (channels != 1)
        throw InvalidInput(path + ": only mono is supported, got " + std::to_string(channels) +
                           " channels");
    if (rate != kPipelineSampleRate)
        throw InvalidInput(path + ": sample rate must be 16000 Hz, got " + std::to_string(rate) +
                           " Hz (resample beforehand; this tool does not resample)");

    Waveform w;
    w.sample_rate = static_cast<int>(rate);
    const std::size_t n = data_len / 2;
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::int16_t s = static_cast<std::int16_t>(rd_u16(data + 2 * i));
        w.samples[i] = static_cast<double>(s) / 32768.0;
    }
    return w;
}

void write_wav(const std::string& path, const Waveform& w) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw InvalidInput("cannot open WAV file for writing: " + path);
    const std::uint32_t n = static_cast<std::uint32_t>(w.samples.size());
    const std::uint32_t data_bytes = n * 2;
    const std::uint32_t rate = static_cast<std::uint32_t>(w.sample_rate);

    f.write("RIFF", 4);
    wr_u32(f, 36 + data_bytes);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    wr_u32(f, 16);
    wr_u16(f, 1);  // PCM
    wr_u16(f, 1);  // mono
    wr_u32(f, rate);
    wr_u32(f, rate * 2); // byte rate
    wr_u16(f, 2);  // block align
    wr_u16(f, 16); // bits
    f.write("data", 4);
    wr_u32(f, data_bytes);
    for (std::uint32_t i = 0; i < n; ++i) {
        double v = std::lrint(w.samples[i] * 32768.0);
        if (v > 32767.0) v = 32767.0;
        if (v < -32768.0) v = -32768.0;
        auto s = static_cast<std::int16_t>(v);
        f.write(reinterpret_cast<const char*>(&s), 2);
    }
    if (!f) throw InvalidInput("failed writing WAV file: " + path);
}

} // namespace tfc
