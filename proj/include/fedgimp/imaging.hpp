#pragma once

// Cartesian MRI imaging operator: y = M F (S m) per coil, with a centred
// orthonormal 2D FFT, so F is unitary and Parseval holds exactly.
//
// Array convention: rows are the frequency-encode direction (H), columns
// the phase-encode direction (W). Undersampling removes whole columns.

#include <complex>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace fedgimp::imaging {

using cplx = std::complex<double>;

struct ComplexImage {
  int height = 0;
  int width = 0;
  std::vector<cplx> pixels;  // row-major

  ComplexImage() = default;
  ComplexImage(int h, int w) : height(h), width(w), pixels(std::size_t(h) * w) {}

  cplx& at(int r, int c) { return pixels[std::size_t(r) * width + c]; }
  cplx at(int r, int c) const { return pixels[std::size_t(r) * width + c]; }
  std::size_t size() const { return pixels.size(); }
  friend bool operator==(const ComplexImage&, const ComplexImage&) = default;
};

// C stacked HxW complex planes (coil maps, multi-coil k-space).
struct ComplexStack {
  int count = 0;
  int height = 0;
  int width = 0;
  std::vector<cplx> values;

  ComplexStack() = default;
  ComplexStack(int c, int h, int w) : count(c), height(h), width(w), values(std::size_t(c) * h * w) {}

  std::span<cplx> plane(int c) { return {values.data() + std::size_t(c) * height * width, std::size_t(height) * width}; }
  std::span<const cplx> plane(int c) const {
    return {values.data() + std::size_t(c) * height * width, std::size_t(height) * width};
  }
  friend bool operator==(const ComplexStack&, const ComplexStack&) = default;
};

enum class Density : std::uint8_t { kVariable = 0, kUniform = 1 };

const char* density_name(Density d);
Density parse_density(const std::string& name);  // "variable"/"vd", "uniform"/"ud"

struct SamplingMask {
  int height = 0;
  int width = 0;
  double rate = 1.0;
  Density density = Density::kVariable;
  int calibration_lines = 0;
  std::uint64_t seed = 0;
  std::vector<std::uint8_t> pattern;  // HxW, 0/1

  bool at(int r, int c) const { return pattern[std::size_t(r) * width + c] != 0; }
  double sampled_fraction() const;
  std::vector<int> sampled_columns() const;
  friend bool operator==(const SamplingMask&, const SamplingMask&) = default;
};

// Column-wise Cartesian mask. Variable density draws phase-encode columns
// without replacement with weight (1 - |offset|)^3 around the centre;
// uniform density takes every p-th column (p = ceil(rate) unless that misses
// the sampling budget) aligned on the k-space centre. The central
// `calibration_lines` columns are always sampled.
SamplingMask make_mask(int height, int width, double rate, Density density, int calibration_lines,
                       std::uint64_t seed);

// Fully sampled mask (R = 1), used for references and round-trip checks.
SamplingMask full_mask(int height, int width);

struct CoilSensitivities {
  ComplexStack maps;
  int coils() const { return maps.count; }
};

// Smooth complex Gaussian lobes placed around the image periphery, then
// normalised so the per-pixel sum of squares is one.
CoilSensitivities make_synthetic_coils(int height, int width, int n_coils, std::uint64_t seed);

// Centred orthonormal 2D FFT of one HxW plane, in place.
void fft2c(std::span<cplx> plane, int height, int width);
void ifft2c(std::span<cplx> plane, int height, int width);

class ImagingOperator {
 public:
  ImagingOperator() = default;
  explicit ImagingOperator(SamplingMask mask, std::optional<CoilSensitivities> coils = std::nullopt);

  int height() const { return mask_.height; }
  int width() const { return mask_.width; }
  int coils() const { return coils_ ? coils_->coils() : 1; }
  const SamplingMask& mask() const { return mask_; }
  const std::optional<CoilSensitivities>& sensitivities() const { return coils_; }

  // Per coil: mask ⊙ F(map_c ⊙ m).
  ComplexStack apply(const ComplexImage& image) const;
  // Σ_c conj(map_c) ⊙ F⁻¹(mask ⊙ y_c).
  ComplexImage apply_adjoint(const ComplexStack& samples) const;
  // Un-masked per-coil k-space F(map_c ⊙ m).
  ComplexStack coil_kspace(const ComplexImage& image) const;
  // Σ_c conj(map_c) ⊙ F⁻¹(k_c) without masking.
  ComplexImage combine(const ComplexStack& kspace) const;

 private:
  void check_image(const ComplexImage& image) const;
  void check_samples(const ComplexStack& samples) const;

  SamplingMask mask_;
  std::optional<CoilSensitivities> coils_;
};

struct KSpaceAcquisition {
  ComplexStack samples;  // zero where the mask is false
  ImagingOperator op;
};

KSpaceAcquisition forward(const ImagingOperator& op, const ComplexImage& image);
ComplexImage adjoint(const ImagingOperator& op, const KSpaceAcquisition& acquisition);

// Complex inner product Σ conj(a) b.
cplx inner(std::span<const cplx> a, std::span<const cplx> b);
// Euclidean norm sqrt(Σ |a|²).
double norm2(std::span<const cplx> a);

}  // namespace fedgimp::imaging
