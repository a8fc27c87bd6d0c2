#include "tfc/enhance.hpp"

#include <optional>

#include "tfc/checkpoint.hpp"

namespace tfc {

struct Enhancer::Impl {
    std::optional<GeneratorParams<float>> pf;
    std::optional<GeneratorParams<double>> pd;
};

Enhancer::Enhancer(const std::string& checkpoint_path, StftConfig cfg, double compress_exponent)
    : impl_(std::make_unique<Impl>()), cfg_(cfg), c_(compress_exponent) {
    dtype_bytes_ = checkpoint_dtype_bytes(checkpoint_path);
    if (dtype_bytes_ == static_cast<int>(sizeof(float))) {
        impl_->pf = load_generator<float>(checkpoint_path);
        gen_cfg_ = impl_->pf->cfg;
    } else if (dtype_bytes_ == static_cast<int>(sizeof(double))) {
        impl_->pd = load_generator<double>(checkpoint_path);
        gen_cfg_ = impl_->pd->cfg;
    } else {
        throw ConfigError("checkpoint: unsupported parameter width " +
                          std::to_string(dtype_bytes_ * 8) + "-bit");
    }
}

Enhancer::~Enhancer() = default;
Enhancer::Enhancer(Enhancer&&) noexcept = default;
Enhancer& Enhancer::operator=(Enhancer&&) noexcept = default;

Waveform Enhancer::enhance(const Waveform& in) {
    if (impl_->pf) return enhance_waveform(in, *impl_->pf, cfg_, c_);
    return enhance_waveform(in, *impl_->pd, cfg_, c_);
}

} // namespace tfc
