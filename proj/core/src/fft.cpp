#include "deepbet/fft.hpp"

#include <mutex>

#include <fftw3.h>

namespace deepbet::fft {
namespace {

// FFTW's planner is not thread-safe; execution of a finished plan is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct Plan {
  fftw_plan plan = nullptr;
  ~Plan() {
    if (plan != nullptr) {
      std::lock_guard<std::mutex> lock(planner_mutex());
      fftw_destroy_plan(plan);
    }
  }
};

fftw_complex* as_fftw(std::vector<Complex>& v) { return reinterpret_cast<fftw_complex*>(v.data()); }

}  // namespace

void transform_axis(std::vector<Complex>& data, const Dims& dims, int axis, bool inverse) {
  const int n = static_cast<int>(dims[axis]);
  const int stride = axis == 0 ? 1 : static_cast<int>(axis == 1 ? dims[0] : dims[0] * dims[1]);
  const int sign = inverse ? FFTW_BACKWARD : FFTW_FORWARD;
  Plan p;
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    if (axis == 0) {
      const int howmany = static_cast<int>(dims[1] * dims[2]);
      p.plan = fftw_plan_many_dft(1, &n, howmany, as_fftw(data), nullptr, 1, n, as_fftw(data), nullptr,
                                  1, n, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    } else if (axis == 1) {
      // One batch per z-plane: dims[0] interleaved transforms of stride dims[0].
      const int howmany = static_cast<int>(dims[0]);
      p.plan = fftw_plan_many_dft(1, &n, howmany, as_fftw(data), nullptr, stride, 1, as_fftw(data),
                                  nullptr, stride, 1, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    } else {
      const int howmany = static_cast<int>(dims[0] * dims[1]);
      p.plan = fftw_plan_many_dft(1, &n, howmany, as_fftw(data), nullptr, stride, 1, as_fftw(data),
                                  nullptr, stride, 1, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    }
  }
  if (axis == 1) {
    const std::int64_t plane = dims[0] * dims[1];
    for (std::int64_t z = 0; z < dims[2]; ++z) {
      auto* base = reinterpret_cast<fftw_complex*>(data.data() + z * plane);
      fftw_execute_dft(p.plan, base, base);
    }
  } else {
    fftw_execute(p.plan);
  }
  if (inverse) {
    const double s = 1.0 / static_cast<double>(n);
    for (auto& c : data) c *= s;
  }
}

void transform_3d(std::vector<Complex>& data, const Dims& dims, bool inverse) {
  Plan p;
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    // FFTW is row-major: the slowest axis (z) comes first.
    p.plan = fftw_plan_dft_3d(static_cast<int>(dims[2]), static_cast<int>(dims[1]), static_cast<int>(dims[0]),
                              as_fftw(data), as_fftw(data), inverse ? FFTW_BACKWARD : FFTW_FORWARD,
                              FFTW_ESTIMATE);
  }
  fftw_execute(p.plan);
  if (inverse) {
    const double s = 1.0 / static_cast<double>(voxel_count(dims));
    for (auto& c : data) c *= s;
  }
}

}  // namespace deepbet::fft
