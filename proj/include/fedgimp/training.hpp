#pragma once

// Per-site adversarial training: non-saturating logistic losses for G and
// D, the R1 gradient penalty on real images, alternating Adam updates and
// the progressive-growing schedule.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedgimp/imaging.hpp"
#include "fedgimp/params.hpp"
#include "fedgimp/prior.hpp"

namespace fedgimp::training {

struct ProgressivePhase {
  int resolution = 4;
  int rounds = 1;
  double fade_fraction = 0.5;
};
using ProgressiveSchedule = std::vector<ProgressivePhase>;

// One phase per resolution, splitting `total_rounds` as evenly as possible.
ProgressiveSchedule equal_schedule(const prior::ModelConfig& c, int total_rounds, double fade_fraction = 0.5);

// Active stage for a 0-based round. Inside a phase the newest layer fades in
// linearly over the first fade_fraction of its rounds; the first phase is
// always fully active. Rounds past the schedule, or an empty schedule
// (progressive growing disabled), give the full-resolution stage.
prior::Stage progressive_stage(int round, const ProgressiveSchedule& schedule, const prior::ModelConfig& c);

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double r1_weight = 10.0;  // δ
  int local_epochs = 150;   // I
  int batch_size = 16;
  int steps_per_epoch = 0;  // minibatches per epoch; 0 means one pass over the site's data
  ProgressiveSchedule schedule;  // empty: progressive growing disabled
  // Test-only: R1 parameter gradient from central differences instead of
  // double backpropagation.
  bool r1_finite_difference = false;

  AdamConfig adam() const { return AdamConfig{lr, beta1, beta2, 1e-8}; }
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Latent draws for one minibatch.
struct LatentBatch {
  Tensor z;                   // [N, J]
  Tensor v;                   // [N, K] one-hot
  std::vector<Tensor> noise;  // per (layer, block)
  int size() const { return z.empty() ? 0 : z.dim(0); }
};

// `levels` as in prior::sample_noise.
LatentBatch sample_latents(const prior::ModelConfig& c, int site, int batch, std::mt19937_64& rng, int levels = 0);

struct LossValue {
  double loss = 0.0;
  double penalty = 0.0;  // R1 term (discriminator only), already weighted by δ/2
  GradientMap grads;
};

// L_G = -E[log f(D(G(z ⊕ v, n)))], f the logistic sigmoid. Gradients are
// w.r.t. generator parameters only.
LossValue generator_loss(const prior::ModelConfig& c, const ParamSet& generator,
                         const ParamSet& discriminator, const LatentBatch& latents,
                         const prior::Stage& stage, bool with_grads = true);

// L_D = -E[log(1 - f(D(G(..))))] - E[log f(D(x_r))] + δ/2 E[|∇_x D(x_r)|²].
// `reals` are at stage resolution. Gradients are w.r.t. discriminator
// parameters only; the generator is frozen.
LossValue discriminator_loss(const prior::ModelConfig& c, const ParamSet& discriminator,
                             const ParamSet& generator, const Tensor& reals, const LatentBatch& latents,
                             double r1_weight, const prior::Stage& stage, bool with_grads = true,
                             bool r1_finite_difference = false);

// ∇_x D(x) per sample, same shape as `images`.
Tensor discriminator_input_gradient(const prior::ModelConfig& c, const ParamSet& discriminator,
                                    const Tensor& images, const prior::Stage& stage);

// δ/2 · mean_b |∇_x D(x_b)|² and its gradient w.r.t. discriminator params.
LossValue r1_penalty(const prior::ModelConfig& c, const ParamSet& discriminator, const Tensor& images,
                     double r1_weight, const prior::Stage& stage, bool with_grads = true);

// Site-local state that never leaves the site.
struct SiteState {
  int site_index = 0;
  std::vector<Tensor> images;  // [C, R, R] each, at model resolution
  ParamSet discriminator;
  Adam generator_opt;
  Adam discriminator_opt;
  std::mt19937_64 rng;
};

SiteState make_site(const prior::ModelConfig& c, const TrainConfig& t, int site_index,
                    std::vector<Tensor> images, std::uint64_t seed);

struct EpochLoss {
  double generator = 0.0;
  double discriminator = 0.0;
};

// One pass over the site's images in shuffled minibatches (or
// steps_per_epoch minibatches), each a G step then a D step. Returns the mean
// losses. Throws DivergenceError on a non-finite loss.
EpochLoss train_epoch(const prior::ModelConfig& c, const TrainConfig& t, SiteState& site, ParamSet& generator,
                      const prior::Stage& stage, int epoch_index);

struct LocalUpdate {
  ParamSet generator;
  std::vector<EpochLoss> trace;  // one entry per local epoch
};

// θ_G^k ← θ_G, then `local_epochs` alternating updates.
LocalUpdate local_update(const prior::ModelConfig& c, const TrainConfig& t, SiteState& site,
                         const ParamSet& global_generator, int round);

// Non-federated baseline: one pooled site trained for `epochs` epochs, with
// the progressive stage advancing every `local_epochs` epochs.
struct CentralizedResult {
  ParamSet generator;
  std::vector<EpochLoss> trace;
};
CentralizedResult train_centralized(const prior::ModelConfig& c, const TrainConfig& t, SiteState& site,
                                    ParamSet generator, int epochs);

// Zero-pads (centred) a complex image to the model's square resolution as
// [C,R,R]: real/imaginary planes, or the magnitude for one-channel models.
Tensor image_to_tensor(const prior::ModelConfig& c, const imaging::ComplexImage& image);

}  // namespace fedgimp::training
