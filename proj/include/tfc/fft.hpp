#pragma once

#include <complex>
#include <vector>

namespace tfc {

using cplx = std::complex<double>;

// In-place iterative radix-2 FFT. n must be a power of two.
void fft_inplace(std::vector<cplx>& a, bool inverse);

// Forward real FFT: n real samples -> n/2 + 1 bins.
std::vector<cplx> rfft(const std::vector<double>& x);

// Inverse of rfft: n/2 + 1 bins -> n real samples. n must be a power of two.
std::vector<double> irfft(const std::vector<cplx>& bins, int n);

bool is_pow2(int n);

} // namespace tfc
