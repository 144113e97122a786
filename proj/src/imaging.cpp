#include "fedgimp/imaging.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <string>

#include "fedgimp/error.hpp"

namespace fedgimp::imaging {

const char* density_name(Density d) { return d == Density::kVariable ? "variable" : "uniform"; }

Density parse_density(const std::string& name) {
  if (name == "variable" || name == "vd" || name == "VD") return Density::kVariable;
  if (name == "uniform" || name == "ud" || name == "UD") return Density::kUniform;
  throw Error(ErrorCode::kInvalidArgument, "unknown density '" + name + "'");
}

double SamplingMask::sampled_fraction() const {
  if (pattern.empty()) return 0.0;
  const auto on = std::count(pattern.begin(), pattern.end(), std::uint8_t{1});
  return double(on) / double(pattern.size());
}

std::vector<int> SamplingMask::sampled_columns() const {
  std::vector<int> cols;
  for (int c = 0; c < width; ++c)
    if (height > 0 && at(0, c)) cols.push_back(c);
  return cols;
}

namespace {

constexpr double kFractionTolerance = 0.05;

SamplingMask from_columns(int height, int width, const std::vector<std::uint8_t>& columns) {
  SamplingMask m;
  m.height = height;
  m.width = width;
  m.pattern.resize(std::size_t(height) * width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) m.pattern[std::size_t(r) * width + c] = columns[c];
  return m;
}

}  // namespace

SamplingMask make_mask(int height, int width, double rate, Density density, int calibration_lines,
                       std::uint64_t seed) {
  if (!(rate > 1.0) || !std::isfinite(rate)) {
    throw Error(ErrorCode::kInvalidRate, "acceleration rate must exceed 1, got " + std::to_string(rate));
  }
  if (height < 1 || width < 2) throw Error(ErrorCode::kInvalidArgument, "mask shape too small");
  if (calibration_lines < 0) throw Error(ErrorCode::kInvalidArgument, "negative calibration lines");
  if (double(calibration_lines) >= double(width) / rate) {
    throw Error(ErrorCode::kInfeasibleMask,
                std::to_string(calibration_lines) + " calibration lines exceed the budget of " +
                    std::to_string(double(width) / rate) + " columns");
  }

  const int budget = std::max(1, int(std::lround(double(width) / rate)));
  const int centre = width / 2;
  const int cal_start = centre - calibration_lines / 2;
  std::vector<std::uint8_t> columns(width, 0);
  for (int c = cal_start; c < cal_start + calibration_lines; ++c) columns[c] = 1;

  if (density == Density::kUniform) {
    // Periodic columns through the centre; pick the integer period whose
    // total column count lands closest to the budget, preferring ceil(rate).
    auto build = [&](int period) {
      std::vector<std::uint8_t> cols = columns;
      for (int c = centre % period; c < width; c += period) cols[c] = 1;
      return cols;
    };
    auto count = [](const std::vector<std::uint8_t>& cols) {
      return int(std::count(cols.begin(), cols.end(), std::uint8_t{1}));
    };
    const double target = 1.0 / rate;
    int best_period = int(std::ceil(rate));
    std::vector<std::uint8_t> best = build(best_period);
    if (std::abs(double(count(best)) / width - target) > kFractionTolerance) {
      double best_err = std::abs(double(count(best)) / width - target);
      for (int p = 2; p <= width; ++p) {
        auto cols = build(p);
        const double err = std::abs(double(count(cols)) / width - target);
        if (err < best_err) {
          best_err = err;
          best_period = p;
          best = std::move(cols);
        }
      }
      if (best_err > kFractionTolerance) {
        throw Error(ErrorCode::kInfeasibleMask, "no periodic pattern meets the target rate");
      }
    }
    columns = std::move(best);
  } else {
    std::mt19937_64 rng(seed);
    std::vector<double> weight(width, 0.0);
    const double half = double(width) / 2.0;
    for (int c = 0; c < width; ++c) {
      if (columns[c]) continue;
      const double offset = std::abs(double(c - centre)) / half;
      weight[c] = std::pow(std::max(0.0, 1.0 - offset), 3.0);
    }
    int remaining = budget - calibration_lines;
    while (remaining > 0) {
      double total = 0.0;
      for (double w : weight) total += w;
      if (total <= 0.0) break;
      std::uniform_real_distribution<double> uni(0.0, total);
      double u = uni(rng);
      int pick = -1;
      for (int c = 0; c < width; ++c) {
        if (weight[c] <= 0.0) continue;
        pick = c;
        if (u < weight[c]) break;
        u -= weight[c];
      }
      columns[pick] = 1;
      weight[pick] = 0.0;
      --remaining;
    }
  }

  SamplingMask mask = from_columns(height, width, columns);
  mask.rate = rate;
  mask.density = density;
  mask.calibration_lines = calibration_lines;
  mask.seed = seed;
  return mask;
}

SamplingMask full_mask(int height, int width) {
  SamplingMask m = from_columns(height, width, std::vector<std::uint8_t>(width, 1));
  m.rate = 1.0;
  m.calibration_lines = width;
  return m;
}

CoilSensitivities make_synthetic_coils(int height, int width, int n_coils, std::uint64_t seed) {
  if (n_coils < 1) throw Error(ErrorCode::kInvalidArgument, "n_coils must be >= 1");
  CoilSensitivities coils{ComplexStack(n_coils, height, width)};
  if (n_coils == 1) {
    std::fill(coils.maps.values.begin(), coils.maps.values.end(), cplx(1.0, 0.0));
    return coils;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.15, 0.15);
  std::uniform_real_distribution<double> phase(-std::numbers::pi, std::numbers::pi);
  const double cy = (height - 1) / 2.0, cx = (width - 1) / 2.0;
  const double radius = 0.6 * std::max(height, width);
  const double sigma = 0.45 * std::max(height, width);
  for (int k = 0; k < n_coils; ++k) {
    const double angle = 2.0 * std::numbers::pi * (k + jitter(rng)) / n_coils;
    const double py = cy + radius * std::sin(angle), px = cx + radius * std::cos(angle);
    const double phi0 = phase(rng);
    const double ramp_y = 0.5 * jitter(rng), ramp_x = 0.5 * jitter(rng);
    auto plane = coils.maps.plane(k);
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c) {
        const double d2 = (r - py) * (r - py) + (c - px) * (c - px);
        const double mag = std::exp(-d2 / (2.0 * sigma * sigma));
        const double ph = phi0 + ramp_y * (r - cy) / height * std::numbers::pi * 2.0 +
                          ramp_x * (c - cx) / width * std::numbers::pi * 2.0;
        plane[std::size_t(r) * width + c] = std::polar(mag, ph);
      }
  }
  for (std::size_t p = 0; p < std::size_t(height) * width; ++p) {
    double sos = 0.0;
    for (int k = 0; k < n_coils; ++k) sos += std::norm(coils.maps.plane(k)[p]);
    const double inv = sos > 0.0 ? 1.0 / std::sqrt(sos) : 0.0;
    for (int k = 0; k < n_coils; ++k) coils.maps.plane(k)[p] *= inv;
  }
  return coils;
}

namespace {

// FFTW planning is not thread-safe; execution with the new-array API is.
class PlanCache {
 public:
  fftw_plan get(int height, int width, int sign) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto key = std::make_tuple(height, width, sign);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    std::vector<cplx> scratch(std::size_t(height) * width);
    auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
    fftw_plan plan =
        fftw_plan_dft_2d(height, width, buf, buf, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans_.emplace(key, plan);
    return plan;
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

PlanCache& plan_cache() {
  static PlanCache cache;
  return cache;
}

// Cyclic shift by (sy, sx): out[(r+sy) mod H][(c+sx) mod W] = in[r][c].
void circshift(std::span<cplx> plane, int height, int width, int sy, int sx) {
  std::vector<cplx> tmp(plane.begin(), plane.end());
  for (int r = 0; r < height; ++r) {
    const int rr = (r + sy) % height;
    for (int c = 0; c < width; ++c) plane[std::size_t(rr) * width + (c + sx) % width] = tmp[std::size_t(r) * width + c];
  }
}

void centered_fft(std::span<cplx> plane, int height, int width, int sign) {
  if (plane.size() != std::size_t(height) * width) throw Error(ErrorCode::kShapeError, "fft plane size");
  // ifftshift, transform, fftshift.
  circshift(plane, height, width, height - height / 2, width - width / 2);
  fftw_plan plan = plan_cache().get(height, width, sign);
  auto* buf = reinterpret_cast<fftw_complex*>(plane.data());
  fftw_execute_dft(plan, buf, buf);
  circshift(plane, height, width, height / 2, width / 2);
  const double s = 1.0 / std::sqrt(double(height) * width);
  for (auto& v : plane) v *= s;
}

}  // namespace

void fft2c(std::span<cplx> plane, int height, int width) { centered_fft(plane, height, width, FFTW_FORWARD); }
void ifft2c(std::span<cplx> plane, int height, int width) { centered_fft(plane, height, width, FFTW_BACKWARD); }

ImagingOperator::ImagingOperator(SamplingMask mask, std::optional<CoilSensitivities> coils)
    : mask_(std::move(mask)), coils_(std::move(coils)) {
  if (mask_.pattern.size() != std::size_t(mask_.height) * mask_.width) {
    throw Error(ErrorCode::kShapeError, "mask pattern size");
  }
  if (coils_ && (coils_->maps.height != mask_.height || coils_->maps.width != mask_.width)) {
    throw Error(ErrorCode::kShapeError, "coil maps do not match the mask shape");
  }
}

void ImagingOperator::check_image(const ComplexImage& image) const {
  if (image.height != height() || image.width != width()) {
    throw Error(ErrorCode::kShapeError, "image " + std::to_string(image.height) + "x" +
                                            std::to_string(image.width) + " vs operator " +
                                            std::to_string(height()) + "x" + std::to_string(width()));
  }
}

void ImagingOperator::check_samples(const ComplexStack& samples) const {
  if (samples.count != coils() || samples.height != height() || samples.width != width()) {
    throw Error(ErrorCode::kShapeError, "k-space samples do not match the operator");
  }
}

ComplexStack ImagingOperator::coil_kspace(const ComplexImage& image) const {
  check_image(image);
  const int C = coils(), H = height(), W = width();
  ComplexStack out(C, H, W);
#pragma omp parallel for schedule(static) if (C > 1)
  for (int c = 0; c < C; ++c) {
    auto plane = out.plane(c);
    for (std::size_t p = 0; p < plane.size(); ++p) {
      plane[p] = coils_ ? coils_->maps.plane(c)[p] * image.pixels[p] : image.pixels[p];
    }
    fft2c(plane, H, W);
  }
  return out;
}

ComplexStack ImagingOperator::apply(const ComplexImage& image) const {
  ComplexStack k = coil_kspace(image);
  for (int c = 0; c < k.count; ++c) {
    auto plane = k.plane(c);
    for (std::size_t p = 0; p < plane.size(); ++p)
      if (!mask_.pattern[p]) plane[p] = 0.0;
  }
  return k;
}

ComplexImage ImagingOperator::combine(const ComplexStack& kspace) const {
  check_samples(kspace);
  const int C = coils(), H = height(), W = width();
  ComplexStack tmp = kspace;
#pragma omp parallel for schedule(static) if (C > 1)
  for (int c = 0; c < C; ++c) ifft2c(tmp.plane(c), H, W);
  ComplexImage out(H, W);
  for (int c = 0; c < C; ++c) {
    auto plane = tmp.plane(c);
    for (std::size_t p = 0; p < plane.size(); ++p) {
      out.pixels[p] += coils_ ? std::conj(coils_->maps.plane(c)[p]) * plane[p] : plane[p];
    }
  }
  return out;
}

ComplexImage ImagingOperator::apply_adjoint(const ComplexStack& samples) const {
  check_samples(samples);
  ComplexStack masked = samples;
  for (int c = 0; c < masked.count; ++c) {
    auto plane = masked.plane(c);
    for (std::size_t p = 0; p < plane.size(); ++p)
      if (!mask_.pattern[p]) plane[p] = 0.0;
  }
  return combine(masked);
}

KSpaceAcquisition forward(const ImagingOperator& op, const ComplexImage& image) {
  return KSpaceAcquisition{op.apply(image), op};
}

ComplexImage adjoint(const ImagingOperator& op, const KSpaceAcquisition& acquisition) {
  return op.apply_adjoint(acquisition.samples);
}

cplx inner(std::span<const cplx> a, std::span<const cplx> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kShapeError, "inner product size mismatch");
  cplx acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::conj(a[i]) * b[i];
  return acc;
}

double norm2(std::span<const cplx> a) {
  double acc = 0.0;
  for (const auto& v : a) acc += std::norm(v);
  return std::sqrt(acc);
}

}  // namespace fedgimp::imaging
