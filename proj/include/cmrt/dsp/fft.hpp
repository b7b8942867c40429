#pragma once

#include <fftw3.h>

#include <complex>
#include <cstring>
#include <mutex>
#include <span>
#include <vector>

namespace cmrt::dsp {

namespace detail {
// The FFTW planner is not re-entrant; execution of distinct plans is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

/// Real-input FFT of fixed length, planned with FFTW_ESTIMATE so the chosen
/// algorithm (and therefore every output bit) is reproducible.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_ = fftw_alloc_real(n_);
    out_ = fftw_alloc_complex(n_ / 2 + 1);
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n_), in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const { return n_; }

  /// Unnormalized forward transform; returns n/2+1 bins.
  std::vector<std::complex<double>> forward(std::span<const double> x) {
    std::memcpy(in_, x.data(), n_ * sizeof(double));
    fftw_execute(plan_);
    std::vector<std::complex<double>> out(n_ / 2 + 1);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = {out_[i][0], out_[i][1]};
    return out;
  }

  /// Forward transform magnitudes written into `mag` (n/2+1 entries).
  void magnitudes(std::span<const double> x, std::span<double> mag) {
    std::memcpy(in_, x.data(), n_ * sizeof(double));
    fftw_execute(plan_);
    for (std::size_t i = 0; i < n_ / 2 + 1; ++i) mag[i] = std::hypot(out_[i][0], out_[i][1]);
  }

 private:
  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

/// Unnormalized inverse of RealFft (output scaled by n).
class InverseRealFft {
 public:
  explicit InverseRealFft(std::size_t n) : n_(n) {
    in_ = fftw_alloc_complex(n_ / 2 + 1);
    out_ = fftw_alloc_real(n_);
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan_ = fftw_plan_dft_c2r_1d(static_cast<int>(n_), in_, out_, FFTW_ESTIMATE);
  }
  ~InverseRealFft() {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  InverseRealFft(const InverseRealFft&) = delete;
  InverseRealFft& operator=(const InverseRealFft&) = delete;

  std::vector<double> inverse(std::span<const std::complex<double>> spectrum) {
    for (std::size_t i = 0; i < n_ / 2 + 1; ++i) {
      in_[i][0] = spectrum[i].real();
      in_[i][1] = spectrum[i].imag();
    }
    fftw_execute(plan_);
    return std::vector<double>(out_, out_ + n_);
  }

 private:
  std::size_t n_;
  fftw_complex* in_ = nullptr;
  double* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

}  // namespace cmrt::dsp
