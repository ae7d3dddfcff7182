#pragma once

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>

namespace amor {

namespace detail {
// FFTW planning is not thread-safe; execution on distinct buffers is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const noexcept { fftw_free(p); }
};
}  // namespace detail

/// Real-to-complex / complex-to-real transform of a fixed length. Owns its
/// buffers; one instance per thread.
class RealFft {
 public:
  explicit RealFft(std::size_t n)
      : n_(n),
        real_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        spec_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
    if (n == 0 || !real_ || !spec_) throw std::bad_alloc();
    std::lock_guard lock(detail::fftw_planner_mutex());
    forward_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), real_.get(), spec_.get(), FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), spec_.get(), real_.get(), FFTW_ESTIMATE);
  }

  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  ~RealFft() {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
  }

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }

  std::span<double> real() { return {real_.get(), n_}; }
  std::span<std::complex<double>> spectrum() {
    return {reinterpret_cast<std::complex<double>*>(spec_.get()), bins()};
  }

  /// real() -> spectrum(), unnormalized.
  void forward() { fftw_execute(forward_); }
  /// spectrum() -> real(), unnormalized (a round trip scales by n). Clobbers spectrum().
  void inverse() { fftw_execute(inverse_); }

 private:
  std::size_t n_;
  std::unique_ptr<double, detail::FftwFree> real_;
  std::unique_ptr<fftw_complex, detail::FftwFree> spec_;
  fftw_plan forward_{};
  fftw_plan inverse_{};
};

}  // namespace amor
