#pragma once

// Style-based generative prior: mapper M (site-conditioned latents),
// synthesizer S, and discriminator D. Parameters live in ParamSets with
// names under "mapper/", "synthesizer/" and "discriminator/"; forward passes
// are pure functions of (params, inputs).

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedgimp/autograd.hpp"
#include "fedgimp/params.hpp"

namespace fedgimp::prior {

struct ModelConfig {
  int latent_dim = 32;          // J
  int num_sites = 1;            // K
  bool site_conditioned = true;  // false: conventional mapper fed z only
  int mapper_layers = 8;        // L_M
  int synth_layers = 5;         // L_S; output resolution 4 * 2^(L_S - 1)
  int channel_base = 8;
  int channel_max = 64;
  int image_channels = 2;  // 2: real/imag planes, 1: magnitude
  int kernel = 3;
  double leaky_slope = 0.2;
  double adain_eps = 1e-8;
  // true: weights are stored unit-variance and scaled by their He constant
  // at use. false: He-initialised weights used as stored.
  bool equalized_lr = false;
  double noise_strength_init = 0.1;

  int resolution() const { return 4 << (synth_layers - 1); }
  int resolution_at(int layer) const { return 4 << (layer - 1); }
  // Feature width at synthesizer layer / discriminator level `layer` (1-based):
  // min(channel_max, channel_base * 2^(L_S - layer)).
  int channels_at(int layer) const;
  int mapper_input_dim() const { return latent_dim + (site_conditioned ? num_sites : 0); }

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Active depth of the progressive model: layers 1..level are live and
// `alpha` blends the newest layer with the upsampled previous output.
struct Stage {
  int level = 1;
  double alpha = 1.0;
  int resolution() const { return 4 << (level - 1); }
};

Stage full_stage(const ModelConfig& c);

ParamSet init_generator(const ModelConfig& c, std::mt19937_64& rng);
ParamSet init_discriminator(const ModelConfig& c, std::mt19937_64& rng);

// Leaf Vars for a ParamSet, optionally requiring grad.
class Bindings {
 public:
  Bindings(const ParamSet& params, bool requires_grad);
  const ad::Var& operator[](const std::string& name) const;
  // Gradients of `loss` for every bound parameter, keyed by name.
  GradientMap gradients(const ad::Var& loss) const;
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<ad::Var>& vars() const { return vars_; }

 private:
  std::vector<std::string> names_;
  std::vector<ad::Var> vars_;
  std::map<std::string, std::size_t> index_;
};

// Noise fields n_i^b, one [N, u_i, h_i, w_i] array per (layer i, block b),
// ordered (1,1), (1,2), (2,1), .... With `levels` > 0 only the first
// `levels` layers are drawn (enough for a progressive stage of that depth).
std::vector<Tensor> sample_noise(const ModelConfig& c, int batch, std::mt19937_64& rng, int levels = 0);
std::vector<Shape> noise_shapes(const ModelConfig& c, int batch);

// Mapper input z ⊕ v ([N, J+K]); just z for the conventional mapper.
Tensor mapper_input(const ModelConfig& c, const Tensor& z, const Tensor& v);
Tensor one_hot(int num_sites, int site, int batch);
void check_one_hot(const Tensor& v, int num_sites);

// ---- building blocks (Var level) -----------------------------------------
ad::Var dense(const ad::Var& x, const ad::Var& weight, const ad::Var& bias, double gain);
ad::Var conv(const ad::Var& x, const ad::Var& weight, const ad::Var& bias, double gain);
// φ(x_c + ε_c n_c) per channel.
ad::Var noise_inject(const ad::Var& x, const ad::Var& noise, const ad::Var& strength, double slope);
// γ ⊙ (x - μ)/sqrt(σ² + eps) + β per (sample, channel); gamma/beta are [N,C].
ad::Var adain(const ad::Var& x, const ad::Var& gamma, const ad::Var& beta, double eps);

// ---- networks -------------------------------------------------------------
ad::Var map_latent(const ModelConfig& c, const Bindings& g, const ad::Var& input);

struct SynthesisTrace {
  std::vector<Tensor> adain_outputs;  // one per (layer, block)
};

ad::Var synthesize(const ModelConfig& c, const Bindings& g, const ad::Var& w,
                   const std::vector<ad::Var>& noise, const Stage& stage,
                   SynthesisTrace* trace = nullptr);

// Logits [N].
ad::Var discriminate(const ModelConfig& c, const Bindings& d, const ad::Var& images,
                     const Stage& stage);

// ---- Tensor-level conveniences -------------------------------------------
Tensor map_latent(const ModelConfig& c, const ParamSet& generator, const Tensor& z, const Tensor& v);
Tensor synthesize(const ModelConfig& c, const ParamSet& generator, const Tensor& w,
                  const std::vector<Tensor>& noise, const Stage& stage);
Tensor discriminate(const ModelConfig& c, const ParamSet& discriminator, const Tensor& images,
                    const Stage& stage);
Tensor adain(const Tensor& x, const std::vector<double>& gamma, const std::vector<double>& beta,
             double eps = 1e-8);
Tensor noise_inject(const Tensor& x, const Tensor& noise, const std::vector<double>& strength,
                    double slope = 0.2);

// Downsample full-resolution images [N,C,R,R] to the stage resolution,
// blending in the coarser level while a layer fades in.
Tensor images_at_stage(const ModelConfig& c, const Tensor& images, const Stage& stage);

}  // namespace fedgimp::prior
