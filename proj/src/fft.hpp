#pragma once

// Thin RAII wrapper over FFTW's real transforms. Planning is serialized because the
// FFTW planner is not thread-safe; execution on distinct buffers is.

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace envtrack::detail {

/// Forward real FFT of length n: returns n/2 + 1 bins.
std::vector<std::complex<double>> rfft(std::span<const double> x);

/// Inverse of rfft for a length-n signal (normalized, so irfft(rfft(x)) == x).
std::vector<double> irfft(std::span<const std::complex<double>> bins, std::size_t n);

/// Smallest length >= n whose only prime factors are 2, 3, 5, 7.
std::size_t good_fft_size(std::size_t n);

/// Full linear convolution of x and h via FFT (length x.size() + h.size() - 1).
std::vector<double> fft_convolve(std::span<const double> x, std::span<const double> h);

}  // namespace envtrack::detail
