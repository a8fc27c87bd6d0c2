#pragma once

#include <stdexcept>
#include <string>

namespace tfc {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or empty input data (empty waveform, bad WAV file, ...).
struct InvalidInput : Error {
    using Error::Error;
};

// Tensor/grid dimensions do not line up.
struct ShapeError : Error {
    using Error::Error;
};

// Bad configuration: unknown variant tag, empty dataset, unknown keys, ...
struct ConfigError : Error {
    using Error::Error;
};

// Noise clip with zero energy cannot be scaled to a target SNR.
struct DegenerateNoise : Error {
    using Error::Error;
};

// Silent reference signal; the metric is undefined.
struct DegenerateReference : Error {
    using Error::Error;
};

// Training produced a non-finite loss.
struct DivergedError : Error {
    using Error::Error;
};

} // namespace tfc
