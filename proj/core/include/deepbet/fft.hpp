#pragma once

#include <complex>
#include <vector>

#include "deepbet/volume.hpp"

namespace deepbet::fft {

using Complex = std::complex<double>;

/// In-place unnormalized DFT along one axis of an x-fastest complex grid.
void transform_axis(std::vector<Complex>& data, const Dims& dims, int axis, bool inverse);

/// In-place unnormalized 3D DFT. The inverse is scaled by 1/N so that
/// inverse(forward(x)) == x.
void transform_3d(std::vector<Complex>& data, const Dims& dims, bool inverse);

/// Signed frequency of DFT bin k for length n, in (-n/2, n/2].
inline long signed_frequency(long k, long n) { return k <= n / 2 ? k : k - n; }

}  // namespace deepbet::fft
