#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace epg::dsp {

// In-place iterative radix-2 FFT. Size must be a power of two.
// inverse=true applies the conjugate transform and the 1/N scale.
void fft_inplace(std::vector<std::complex<double>>& data, bool inverse);

size_t next_power_of_two(size_t n);

}  // namespace epg::dsp
