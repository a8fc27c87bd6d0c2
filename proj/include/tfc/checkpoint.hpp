#pragma once
// Versioned binary checkpoint container: a JSON config snapshot plus named
// tensors stored as raw little-endian IEEE-754, so reloads are bit-exact.
// Layout: magic "TFCKPT01" | u32 dtype bytes | u64 json len | json |
// u64 record count | records (u32 name len | name | u32 ndim | i64 dims |
// payload). Writes go through a temp file and rename, so an interrupted
// save never leaves a truncated checkpoint behind.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tfc/errors.hpp"
#include "tfc/generator.hpp"
#include "tfc/tensor.hpp"

namespace tfc {

inline constexpr char kCheckpointMagic[9] = "TFCKPT01";

namespace detail_ckpt {

void write_file_atomic(const std::string& path, const std::vector<unsigned char>& bytes);
std::vector<unsigned char> read_file(const std::string& path);

template <typename V>
void put(std::vector<unsigned char>& out, V v) {
    unsigned char b[sizeof(V)];
    std::memcpy(b, &v, sizeof(V));
    out.insert(out.end(), b, b + sizeof(V));
}

struct Reader {
    const std::vector<unsigned char>& buf;
    std::size_t pos = 0;

    template <typename V>
    V get() {
        V v;
        if (pos + sizeof(V) > buf.size()) throw ConfigError("checkpoint: truncated file");
        std::memcpy(&v, buf.data() + pos, sizeof(V));
        pos += sizeof(V);
        return v;
    }
    std::string get_string(std::size_t n) {
        if (pos + n > buf.size()) throw ConfigError("checkpoint: truncated file");
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    }
};

} // namespace detail_ckpt

template <typename T>
void save_checkpoint(const std::string& path, const std::string& config_json,
                     const std::vector<std::pair<std::string, ad::Tensor<T>>>& tensors) {
    using namespace detail_ckpt;
    std::vector<unsigned char> out;
    out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 8);
    put<std::uint32_t>(out, sizeof(T));
    put<std::uint64_t>(out, config_json.size());
    out.insert(out.end(), config_json.begin(), config_json.end());
    put<std::uint64_t>(out, tensors.size());
    for (const auto& [name, t] : tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
        for (long d : t.shape) put<std::int64_t>(out, d);
        const auto* raw = reinterpret_cast<const unsigned char*>(t.data());
        out.insert(out.end(), raw, raw + t.count() * sizeof(T));
    }
    write_file_atomic(path, out);
}

template <typename T>
struct Checkpoint {
    std::string config_json;
    std::vector<std::pair<std::string, ad::Tensor<T>>> tensors;

    const ad::Tensor<T>* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    using namespace detail_ckpt;
    const std::vector<unsigned char> buf = read_file(path);
    Reader r{buf};
    if (r.get_string(8) != std::string(kCheckpointMagic, 8))
        throw ConfigError("checkpoint: bad magic in " + path);
    const auto dtype = r.get<std::uint32_t>();
    if (dtype != sizeof(T))
        throw ConfigError("checkpoint: dtype is " + std::to_string(dtype * 8) +
                          "-bit, expected " + std::to_string(sizeof(T) * 8) + "-bit");
    Checkpoint<T> ck;
    ck.config_json = r.get_string(r.get<std::uint64_t>());
    const auto n = r.get<std::uint64_t>();
    ck.tensors.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        const std::string name = r.get_string(r.get<std::uint32_t>());
        const auto ndim = r.get<std::uint32_t>();
        std::vector<long> shape(ndim);
        for (auto& d : shape) d = static_cast<long>(r.get<std::int64_t>());
        ad::Tensor<T> t = ad::Tensor<T>::zeros(shape);
        for (long j = 0; j < t.count(); ++j) t.data()[j] = r.get<T>();
        ck.tensors.emplace_back(name, std::move(t));
    }
    return ck;
}

// Peek without committing to a scalar type.
int checkpoint_dtype_bytes(const std::string& path);
std::string checkpoint_config(const std::string& path);

// ---- generator snapshots ----

inline nlohmann::json generator_config_to_json(const GeneratorConfig& cfg) {
    return {{"base_channels", cfg.base_channels},
            {"dilations", cfg.dilations},
            {"variant", variant_name(cfg.variant)},
            {"tfc_depth", cfg.tfc_depth},
            {"num_heads", cfg.num_heads},
            {"conv_kernel", cfg.conv_kernel}};
}

inline GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
    GeneratorConfig cfg;
    try {
        cfg.base_channels = j.at("base_channels").get<long>();
        const auto dil = j.at("dilations").get<std::vector<long>>();
        if (dil.size() != cfg.dilations.size())
            throw ConfigError("generator config: dilations must have 4 entries");
        std::copy(dil.begin(), dil.end(), cfg.dilations.begin());
        cfg.variant = parse_variant(j.at("variant").get<std::string>());
        cfg.tfc_depth = j.at("tfc_depth").get<long>();
        cfg.num_heads = j.at("num_heads").get<long>();
        cfg.conv_kernel = j.at("conv_kernel").get<long>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("generator config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

inline constexpr const char* kGenParamPrefix = "gen";

// Snapshot = generator config + named parameters (+ caller extras such as
// optimizer state, which ride along under their own name prefixes).
template <typename T>
void save_generator(const std::string& path, GeneratorParams<T>& p,
                    std::vector<std::pair<std::string, ad::Tensor<T>>> extra = {},
                    nlohmann::json extra_config = {}) {
    nlohmann::json j;
    j["generator"] = generator_config_to_json(p.cfg);
    if (!extra_config.is_null() && !extra_config.empty()) j["extra"] = std::move(extra_config);
    std::vector<std::pair<std::string, ad::Tensor<T>>> tensors;
    visit_params(p, std::string(kGenParamPrefix),
                 [&](const std::string& n, ad::Var<T>& v) { tensors.emplace_back(n, v->val); });
    for (auto& e : extra) tensors.push_back(std::move(e));
    save_checkpoint<T>(path, j.dump(), tensors);
}

// Rebuilds params from the stored config, then overwrites every tensor
// from the file. Missing or misshapen records are config errors. The full
// checkpoint (extras included) is returned through `raw` when requested.
template <typename T>
GeneratorParams<T> load_generator(const std::string& path, Checkpoint<T>* raw = nullptr) {
    Checkpoint<T> ck = load_checkpoint<T>(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ck.config_json);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("checkpoint config: ") + e.what());
    }
    if (!j.contains("generator")) throw ConfigError("checkpoint: no generator config in " + path);
    const GeneratorConfig cfg = generator_config_from_json(j["generator"]);
    Rng rng(0);
    GeneratorParams<T> p = init_generator<T>(cfg, rng);
    visit_params(p, std::string(kGenParamPrefix), [&](const std::string& n, ad::Var<T>& v) {
        const ad::Tensor<T>* t = ck.find(n);
        if (!t) throw ConfigError("checkpoint: missing tensor " + n);
        if (t->shape != v->val.shape) throw ConfigError("checkpoint: shape mismatch for " + n);
        std::copy(t->data(), t->data() + t->count(), v->val.data());
    });
    if (raw) *raw = std::move(ck);
    return p;
}

} // namespace tfc
