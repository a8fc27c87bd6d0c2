#include "tfc/fft.hpp"

#include <cmath>

#include "tfc/errors.hpp"

namespace tfc {

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

void fft_inplace(std::vector<cplx>& a, bool inverse) {
    const int n = static_cast<int>(a.size());
    if (!is_pow2(n)) throw InvalidInput("fft: size must be a power of two, got " + std::to_string(n));

    // bit reversal
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }

    for (int len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * M_PI / len;
        const cplx wl(std::cos(ang), std::sin(ang));
        for (int i = 0; i < n; i += len) {
            cplx w(1.0, 0.0);
            for (int k = 0; k < len / 2; ++k) {
                cplx u = a[i + k];
                cplx v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (inverse) {
        const double inv = 1.0 / n;
        for (auto& x : a) x *= inv;
    }
}

std::vector<cplx> rfft(const std::vector<double>& x) {
    const int n = static_cast<int>(x.size());
    std::vector<cplx> a(x.begin(), x.end());
    fft_inplace(a, false);
    a.resize(n / 2 + 1);
    return a;
}

std::vector<double> irfft(const std::vector<cplx>& bins, int n) {
    if (static_cast<int>(bins.size()) != n / 2 + 1)
        throw ShapeError("irfft: expected " + std::to_string(n / 2 + 1) + " bins, got " +
                         std::to_string(bins.size()));
    std::vector<cplx> a(n);
    for (int k = 0; k <= n / 2; ++k) a[k] = bins[k];
    for (int k = n / 2 + 1; k < n; ++k) a[k] = std::conj(bins[n - k]);
    fft_inplace(a, true);
    std::vector<double> out(n);
    for (int i = 0; i < n; ++i) out[i] = a[i].real();
    return out;
}

} // namespace tfc
