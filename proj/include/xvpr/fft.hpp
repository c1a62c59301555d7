#pragma once

#include <complex>
#include <vector>

namespace xvpr {

using Complex = std::complex<double>;

/// Radix-2 FFT. Forward uses the unscaled e^{-2*pi*i*k*n/N} convention;
/// the inverse scales by 1/N so that ifft(fft(x)) == x.
/// Only power-of-two lengths (including 1) are accepted.
std::vector<Complex> fft(std::vector<Complex> x, bool inverse);

inline std::vector<Complex> fft(std::vector<Complex> x) { return fft(std::move(x), false); }
inline std::vector<Complex> ifft(std::vector<Complex> x) { return fft(std::move(x), true); }

bool is_power_of_two(std::size_t n);

}  // namespace xvpr
