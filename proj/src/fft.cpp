#include "xvpr/fft.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace xvpr {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::vector<Complex> fft(std::vector<Complex> x, bool inverse) {
  const std::size_t n = x.size();
  if (!is_power_of_two(n))
    throw std::invalid_argument("fft: length " + std::to_string(n) + " is not a power of two");
  if (n == 1) return x;

  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }

  const double sign = inverse ? 2.0 : -2.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = sign * std::numbers::pi / static_cast<double>(len);
    const Complex wn(std::cos(angle), std::sin(angle));
    for (std::size_t i = 0; i < n; i += len) {
      Complex w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const Complex u = x[i + k];
        const Complex v = x[i + k + len / 2] * w;
        x[i + k] = u + v;
        x[i + k + len / 2] = u - v;
        w *= wn;
      }
    }
  }

  if (inverse) {
    const double scale = 1.0 / static_cast<double>(n);
    for (Complex& c : x) c *= scale;
  }
  return x;
}

}  // namespace xvpr
