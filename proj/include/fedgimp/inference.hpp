#pragma once

// Test-time reconstruction: the trained prior is coupled with a
// subject-specific imaging operator and (θ_S, w, n) are adapted to the
// acquired samples by minimising
//   ‖A·crop(S(w, n)) − y‖₂ + η·TV(crop(S(w, n))).

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedgimp/autograd.hpp"
#include "fedgimp/imaging.hpp"
#include "fedgimp/params.hpp"
#include "fedgimp/prior.hpp"

namespace fedgimp::inference {

struct InferenceConfig {
  double lr = 1e-2;
  double beta1 = 0.0;
  double beta2 = 0.99;
  int iterations = 1000;    // E
  double tv_weight = 1e-4;  // η
  std::uint64_t seed = 0;   // z and initial n

  void validate() const;
};

nlohmann::json to_json(const InferenceConfig& c);
InferenceConfig inference_config_from_json(const nlohmann::json& j);

struct DcLossTerms {
  double total = 0.0;
  double data = 0.0;
  double penalty = 0.0;  // already multiplied by η
};

// Network output [1, C, R, R] → complex image centrally cropped to
// height×width (channel 0 real, channel 1 imaginary when present).
imaging::ComplexImage tensor_to_image(const Tensor& x, int height, int width);

// ‖A·m − y‖₂ with m read from a [1, C, H, W] variable; the gradient is
// A†r/‖r‖ (real part only for one channel), zero when r = 0.
ad::Var data_term(const ad::Var& image, const imaging::KSpaceAcquisition& y);
// Σ_p sqrt(Σ_ch (∂x)² + (∂y)²) with forward differences and replicate
// boundary; the gradient is zero at pixels with zero gradient magnitude.
ad::Var total_variation(const ad::Var& image);

// Loss for an explicit (θ_S, w, n). `synthesizer` needs the synthesizer/*
// arrays only.
DcLossTerms dc_loss(const prior::ModelConfig& c, const imaging::KSpaceAcquisition& y, const ParamSet& synthesizer,
                    const Tensor& w, const std::vector<Tensor>& noise, double tv_weight);

struct Reconstruction {
  imaging::ComplexImage image;      // S(w^E, n^E), cropped to the acquisition matrix
  std::vector<DcLossTerms> trace;   // one entry per iteration, before its update
  ParamSet synthesizer;             // adapted θ_S
  Tensor w;
  std::vector<Tensor> noise;
};

// Fresh z from `config.seed`, w¹ = M(z ⊕ v) with the mapper frozen, random
// n¹, then E Adam steps on (θ_S, w, n) jointly.
Reconstruction adapt_and_reconstruct(const prior::ModelConfig& c, const ParamSet& generator, int site,
                                     const imaging::KSpaceAcquisition& y, const InferenceConfig& config);

// Per coil: k = F(map_c ⊙ m); k[Ω] ← y[Ω]; coil-combine.
imaging::ComplexImage enforce_data_consistency(const imaging::ComplexImage& image,
                                               const imaging::KSpaceAcquisition& y);

}  // namespace fedgimp::inference
