#include "tfc/checkpoint.hpp"

#include <cstdio>
#include <filesystem>

namespace tfc {

namespace detail_ckpt {

void write_file_atomic(const std::string& path, const std::vector<unsigned char>& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw ConfigError("checkpoint: cannot open " + tmp + " for writing");
        f.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
        if (!f) throw ConfigError("checkpoint: short write to " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw ConfigError("checkpoint: rename to " + path + " failed: " + ec.message());
}

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw ConfigError("checkpoint: cannot open " + path);
    const std::streamsize n = f.tellg();
    f.seekg(0);
    std::vector<unsigned char> buf(static_cast<std::size_t>(n));
    f.read(reinterpret_cast<char*>(buf.data()), n);
    if (!f) throw ConfigError("checkpoint: short read from " + path);
    return buf;
}

} // namespace detail_ckpt

int checkpoint_dtype_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("checkpoint: cannot open " + path);
    char magic[8];
    std::uint32_t dtype = 0;
    f.read(magic, 8);
    f.read(reinterpret_cast<char*>(&dtype), sizeof(dtype));
    if (!f || std::string(magic, 8) != std::string(kCheckpointMagic, 8))
        throw ConfigError("checkpoint: bad magic in " + path);
    if (dtype != 4 && dtype != 8)
        throw ConfigError("checkpoint: unsupported dtype width " + std::to_string(dtype));
    return static_cast<int>(dtype);
}

std::string checkpoint_config(const std::string& path) {
    using namespace detail_ckpt;
    const std::vector<unsigned char> buf = read_file(path);
    Reader r{buf};
    if (r.get_string(8) != std::string(kCheckpointMagic, 8))
        throw ConfigError("checkpoint: bad magic in " + path);
    (void)r.get<std::uint32_t>();
    return r.get_string(r.get<std::uint64_t>());
}

} // namespace tfc
