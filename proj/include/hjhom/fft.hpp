#pragma once

// Thin RAII layer over FFTW. Plans are created once per shape and reused via
// the new-array execute interface, which is safe to call concurrently.

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <tuple>
#include <vector>

namespace hjhom::fft {

using cplx = std::complex<double>;

enum class Kind { R2C, C2R, Forward, Backward };

namespace detail {

struct PlanDeleter {
  void operator()(fftw_plan_s* p) const { fftw_destroy_plan(p); }
};
using PlanPtr = std::unique_ptr<fftw_plan_s, PlanDeleter>;

inline std::size_t product(const std::vector<int>& dims) {
  std::size_t n = 1;
  for (int d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::size_t half_size(const std::vector<int>& dims) {
  std::size_t n = 1;
  for (std::size_t a = 0; a + 1 < dims.size(); ++a) n *= static_cast<std::size_t>(dims[a]);
  return n * static_cast<std::size_t>(dims.back() / 2 + 1);
}

class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(Kind kind, const std::vector<int>& dims) {
    std::lock_guard lock(mutex_);
    auto key = std::make_tuple(kind, dims);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second.get();

    const std::size_t n = product(dims);
    const int rank = static_cast<int>(dims.size());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    std::vector<double> real(n);
    std::vector<cplx> a(n), b(n);
    auto* ca = reinterpret_cast<fftw_complex*>(a.data());
    auto* cb = reinterpret_cast<fftw_complex*>(b.data());
    fftw_plan plan = nullptr;
    switch (kind) {
      case Kind::R2C: plan = fftw_plan_dft_r2c(rank, dims.data(), real.data(), ca, flags); break;
      case Kind::C2R: plan = fftw_plan_dft_c2r(rank, dims.data(), ca, real.data(), flags); break;
      case Kind::Forward: plan = fftw_plan_dft(rank, dims.data(), ca, cb, FFTW_FORWARD, flags); break;
      case Kind::Backward: plan = fftw_plan_dft(rank, dims.data(), ca, cb, FFTW_BACKWARD, flags); break;
    }
    auto [it, inserted] = plans_.emplace(key, PlanPtr(plan));
    return it->second.get();
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<Kind, std::vector<int>>, PlanPtr> plans_;
};

}  // namespace detail

/// Number of complex coefficients in the half spectrum of a real array.
inline std::size_t half_spectrum_size(const std::vector<int>& dims) { return detail::half_size(dims); }

/// Unnormalized real-to-complex transform (half spectrum along the last axis).
inline void r2c(const std::vector<int>& dims, std::span<const double> in, std::span<cplx> out) {
  fftw_plan plan = detail::PlanCache::instance().get(Kind::R2C, dims);
  fftw_execute_dft_r2c(plan, const_cast<double*>(in.data()),
                       reinterpret_cast<fftw_complex*>(out.data()));
}

/// Normalized inverse of r2c. The input is not modified.
inline void c2r(const std::vector<int>& dims, std::span<const cplx> in, std::span<double> out) {
  fftw_plan plan = detail::PlanCache::instance().get(Kind::C2R, dims);
  std::vector<cplx> scratch(in.begin(), in.end());
  fftw_execute_dft_c2r(plan, reinterpret_cast<fftw_complex*>(scratch.data()), out.data());
  const double scale = 1.0 / static_cast<double>(detail::product(dims));
  for (double& v : out) v *= scale;
}

/// Unnormalized full complex forward transform.
inline void forward(const std::vector<int>& dims, std::span<const cplx> in, std::span<cplx> out) {
  fftw_plan plan = detail::PlanCache::instance().get(Kind::Forward, dims);
  fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(const_cast<cplx*>(in.data())),
                   reinterpret_cast<fftw_complex*>(out.data()));
}

/// Reusable real <-> half-spectrum transform pair with its own buffers, for
/// tight time-stepping loops. inverse() is unnormalized and clobbers coef().
class RealTransform {
 public:
  explicit RealTransform(std::vector<int> dims)
      : dims_(std::move(dims)), real_(detail::product(dims_)), coef_(detail::half_size(dims_)) {
    r2c_ = detail::PlanCache::instance().get(Kind::R2C, dims_);
    c2r_ = detail::PlanCache::instance().get(Kind::C2R, dims_);
  }

  std::vector<double>& real() { return real_; }
  std::vector<cplx>& coef() { return coef_; }
  const std::vector<int>& dims() const { return dims_; }

  void forward() { fftw_execute_dft_r2c(r2c_, real_.data(), reinterpret_cast<fftw_complex*>(coef_.data())); }
  void inverse() { fftw_execute_dft_c2r(c2r_, reinterpret_cast<fftw_complex*>(coef_.data()), real_.data()); }

 private:
  std::vector<int> dims_;
  std::vector<double> real_;
  std::vector<cplx> coef_;
  fftw_plan r2c_ = nullptr;
  fftw_plan c2r_ = nullptr;
};

/// Signed wavenumber of index i on an axis with n points.
inline int wavenumber(int i, int n) { return i <= n / 2 ? i : i - n; }

}  // namespace hjhom::fft
