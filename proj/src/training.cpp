#include "fedgimp/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fedgimp/error.hpp"

namespace fedgimp::training {

using ad::Var;
using prior::Bindings;
using prior::ModelConfig;
using prior::Stage;

ProgressiveSchedule equal_schedule(const ModelConfig& c, int total_rounds, double fade_fraction) {
  ProgressiveSchedule schedule;
  const int phases = c.synth_layers;
  const int base = std::max(total_rounds, 0) / phases;
  const int extra = std::max(total_rounds, 0) % phases;
  for (int i = 0; i < phases; ++i) {
    // Leftover rounds go to the final (full-resolution) phases.
    const int rounds = base + (i >= phases - extra ? 1 : 0);
    schedule.push_back({c.resolution_at(i + 1), std::max(rounds, 1), fade_fraction});
  }
  return schedule;
}

Stage progressive_stage(int round, const ProgressiveSchedule& schedule, const ModelConfig& c) {
  if (schedule.empty()) return prior::full_stage(c);
  int start = 0;
  for (std::size_t p = 0; p < schedule.size(); ++p) {
    const auto& phase = schedule[p];
    int level = 1;
    while (c.resolution_at(level) < phase.resolution && level < c.synth_layers) ++level;
    if (c.resolution_at(level) != phase.resolution) {
      throw Error(ErrorCode::kConfigError, "schedule resolution " + std::to_string(phase.resolution) +
                                               " is not a model resolution");
    }
    if (round < start + phase.rounds) {
      const int t = round - start;
      double alpha = 1.0;
      const int fade_rounds = int(std::floor(phase.fade_fraction * phase.rounds));
      if (p > 0 && level > 1 && fade_rounds > 0) alpha = std::min(1.0, double(t + 1) / double(fade_rounds + 1));
      return Stage{level, alpha};
    }
    start += phase.rounds;
  }
  return prior::full_stage(c);
}

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kConfigError, what); };
  if (!(lr > 0.0)) bad("lr must be > 0");
  if (r1_weight < 0.0) bad("r1_weight must be >= 0");
  if (local_epochs < 0) bad("local_epochs must be >= 0");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (steps_per_epoch < 0) bad("steps_per_epoch must be >= 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) bad("Adam betas must be in [0,1)");
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json schedule = nlohmann::json::array();
  for (const auto& p : c.schedule)
    schedule.push_back({{"resolution", p.resolution}, {"rounds", p.rounds}, {"fade_fraction", p.fade_fraction}});
  return {{"lr", c.lr},           {"beta1", c.beta1},           {"beta2", c.beta2},
          {"r1_weight", c.r1_weight}, {"local_epochs", c.local_epochs}, {"batch_size", c.batch_size},
          {"steps_per_epoch", c.steps_per_epoch},
          {"progressive_schedule", schedule}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.r1_weight = j.value("r1_weight", c.r1_weight);
  c.local_epochs = j.value("local_epochs", c.local_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  if (j.contains("progressive_schedule")) {
    for (const auto& p : j.at("progressive_schedule")) {
      c.schedule.push_back({p.at("resolution").get<int>(), p.at("rounds").get<int>(),
                            p.value("fade_fraction", 0.5)});
    }
  }
  c.validate();
  return c;
}

LatentBatch sample_latents(const ModelConfig& c, int site, int batch, std::mt19937_64& rng, int levels) {
  LatentBatch b;
  b.z = Tensor({batch, c.latent_dim});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : b.z.values()) v = normal(rng);
  b.v = prior::one_hot(c.num_sites, site, batch);
  b.noise = prior::sample_noise(c, batch, rng, levels);
  return b;
}

namespace {

std::vector<Var> constant_vars(const std::vector<Tensor>& tensors) {
  std::vector<Var> out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) out.emplace_back(t);
  return out;
}

Var generate(const ModelConfig& c, const Bindings& g, const LatentBatch& latents, const Stage& stage) {
  Var w = prior::map_latent(c, g, Var(prior::mapper_input(c, latents.z, latents.v)));
  return prior::synthesize(c, g, w, constant_vars(latents.noise), stage);
}

void require_nonempty(int n, const char* what) {
  if (n < 1) throw Error(ErrorCode::kInvalidArgument, std::string(what) + " batch is empty");
}

// Σ_b D(x_b + h·dir_b) parameter gradient.
GradientMap shifted_logit_grads(const ModelConfig& c, const ParamSet& discriminator, const Tensor& images,
                                const Tensor& direction, double h, const Stage& stage) {
  Tensor shifted = images;
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += h * direction[i];
  Bindings d(discriminator, true);
  Var logits = prior::discriminate(c, d, Var(shifted), stage);
  return d.gradients(ad::sum(logits));
}

}  // namespace

LossValue generator_loss(const ModelConfig& c, const ParamSet& generator, const ParamSet& discriminator,
                         const LatentBatch& latents, const Stage& stage, bool with_grads) {
  require_nonempty(latents.size(), "generator");
  std::optional<ad::NoGradGuard> guard;
  if (!with_grads) guard.emplace();
  Bindings g(generator, with_grads);
  Bindings d(discriminator, false);
  Var fake = generate(c, g, latents, stage);
  Var logits = prior::discriminate(c, d, fake, stage);
  Var loss = ad::mean(ad::softplus(ad::scale(logits, -1.0)));
  LossValue out;
  out.loss = loss.value()[0];
  if (with_grads) out.grads = g.gradients(loss);
  return out;
}

Tensor discriminator_input_gradient(const ModelConfig& c, const ParamSet& discriminator, const Tensor& images,
                                    const Stage& stage) {
  if (!ad::grad_enabled()) throw std::logic_error("discriminator_input_gradient needs gradient recording");
  Bindings d(discriminator, false);
  Var x(images, true);
  Var logits = prior::discriminate(c, d, x, stage);
  return ad::grad(ad::sum(logits), {x})[0].value();
}

LossValue r1_penalty(const ModelConfig& c, const ParamSet& discriminator, const Tensor& images, double r1_weight,
                     const Stage& stage, bool with_grads) {
  const int B = images.dim(0);
  require_nonempty(B, "real");
  LossValue out;
  if (!with_grads) {
    Tensor g = discriminator_input_gradient(c, discriminator, images, stage);
    double s = 0.0;
    for (double v : g.values()) s += v * v;
    out.loss = out.penalty = 0.5 * r1_weight * s / B;
    return out;
  }
  Bindings d(discriminator, true);
  Var x(images, true);
  Var logits = prior::discriminate(c, d, x, stage);
  Var g = ad::grad(ad::sum(logits), {x}, /*create_graph=*/true)[0];
  Var penalty = ad::scale(ad::sum(ad::mul(g, g)), 0.5 * r1_weight / B);
  out.loss = out.penalty = penalty.value()[0];
  out.grads = d.gradients(penalty);
  return out;
}

LossValue discriminator_loss(const ModelConfig& c, const ParamSet& discriminator, const ParamSet& generator,
                             const Tensor& reals, const LatentBatch& latents, double r1_weight,
                             const Stage& stage, bool with_grads, bool r1_finite_difference) {
  require_nonempty(latents.size(), "fake");
  require_nonempty(reals.rank() == 4 ? reals.dim(0) : 0, "real");
  const int B = reals.dim(0);

  Tensor fakes;
  {
    ad::NoGradGuard frozen;
    Bindings g(generator, false);
    fakes = generate(c, g, latents, stage).value();
  }

  std::optional<ad::NoGradGuard> guard;
  if (!with_grads) guard.emplace();
  Bindings d(discriminator, with_grads);
  const bool graph_penalty = with_grads && r1_weight > 0.0 && !r1_finite_difference;
  Var x(reals, graph_penalty);
  Var logits_fake = prior::discriminate(c, d, Var(fakes), stage);
  Var logits_real = prior::discriminate(c, d, x, stage);
  Var loss = ad::add(ad::mean(ad::softplus(logits_fake)), ad::mean(ad::softplus(ad::scale(logits_real, -1.0))));

  LossValue out;
  if (graph_penalty) {
    Var g = ad::grad(ad::sum(logits_real), {x}, /*create_graph=*/true)[0];
    Var penalty = ad::scale(ad::sum(ad::mul(g, g)), 0.5 * r1_weight / B);
    out.penalty = penalty.value()[0];
    loss = ad::add(loss, penalty);
    out.loss = loss.value()[0];
    out.grads = d.gradients(loss);
    return out;
  }

  out.loss = loss.value()[0];
  if (with_grads) out.grads = d.gradients(loss);
  guard.reset();
  if (r1_weight > 0.0) {
    Tensor g = discriminator_input_gradient(c, discriminator, reals, stage);
    double s = 0.0;
    for (double v : g.values()) s += v * v;
    out.penalty = 0.5 * r1_weight * s / B;
    out.loss += out.penalty;
    if (with_grads) {
      // ∂/∂θ ½|∇_x D|² = d/dh ∇_θ D(x + h ∇_x D) at h = 0.
      const double h = 1e-4;
      auto plus = shifted_logit_grads(c, discriminator, reals, g, h, stage);
      auto minus = shifted_logit_grads(c, discriminator, reals, g, -h, stage);
      for (auto& [name, grad] : out.grads) {
        const Tensor& a = plus.at(name);
        const Tensor& b = minus.at(name);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += r1_weight / B * (a[i] - b[i]) / (2.0 * h);
      }
    }
  }
  return out;
}

SiteState make_site(const ModelConfig& c, const TrainConfig& t, int site_index, std::vector<Tensor> images,
                    std::uint64_t seed) {
  SiteState s;
  s.site_index = site_index;
  s.images = std::move(images);
  s.rng.seed(seed);
  s.discriminator = prior::init_discriminator(c, s.rng);
  s.generator_opt = Adam(t.adam());
  s.discriminator_opt = Adam(t.adam());
  return s;
}

EpochLoss train_epoch(const ModelConfig& c, const TrainConfig& t, SiteState& site, ParamSet& generator,
                      const Stage& stage, int epoch_index) {
  if (site.images.empty()) throw Error(ErrorCode::kInvalidArgument, "site dataset is empty");
  const int N = int(site.images.size());
  const int B = std::min(t.batch_size, N);
  const int steps = t.steps_per_epoch > 0 ? t.steps_per_epoch : (N + B - 1) / B;
  const Shape& one = site.images.front().shape();
  const std::size_t per = site.images.front().size();

  std::vector<int> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), site.rng);
  int cursor = 0;

  EpochLoss mean;
  for (int s = 0; s < steps; ++s) {
    LatentBatch g_latents = sample_latents(c, site.site_index, B, site.rng, stage.level);
    LossValue g = generator_loss(c, generator, site.discriminator, g_latents, stage);
    if (!std::isfinite(g.loss)) {
      throw DivergenceError(ErrorCode::kDivergedTraining, epoch_index, "generator loss is not finite");
    }
    site.generator_opt.step(generator, g.grads);

    Tensor reals({B, one[0], one[1], one[2]});
    for (int b = 0; b < B; ++b) {
      if (cursor == N) {
        std::shuffle(order.begin(), order.end(), site.rng);
        cursor = 0;
      }
      std::copy_n(site.images[order[cursor++]].data(), per, reals.data() + b * per);
    }
    reals = prior::images_at_stage(c, reals, stage);
    LatentBatch d_latents = sample_latents(c, site.site_index, B, site.rng, stage.level);
    LossValue d = discriminator_loss(c, site.discriminator, generator, reals, d_latents, t.r1_weight, stage, true,
                                     t.r1_finite_difference);
    if (!std::isfinite(d.loss)) {
      throw DivergenceError(ErrorCode::kDivergedTraining, epoch_index, "discriminator loss is not finite");
    }
    site.discriminator_opt.step(site.discriminator, d.grads);
    mean.generator += g.loss / steps;
    mean.discriminator += d.loss / steps;
  }
  return mean;
}

LocalUpdate local_update(const ModelConfig& c, const TrainConfig& t, SiteState& site,
                         const ParamSet& global_generator, int round) {
  LocalUpdate out;
  out.generator = global_generator;
  const Stage stage = progressive_stage(round, t.schedule, c);
  for (int i = 0; i < t.local_epochs; ++i) {
    out.trace.push_back(train_epoch(c, t, site, out.generator, stage, i));
  }
  return out;
}

CentralizedResult train_centralized(const ModelConfig& c, const TrainConfig& t, SiteState& site,
                                    ParamSet generator, int epochs) {
  CentralizedResult out;
  const int per_round = std::max(t.local_epochs, 1);
  for (int e = 0; e < epochs; ++e) {
    const Stage stage = progressive_stage(e / per_round, t.schedule, c);
    out.trace.push_back(train_epoch(c, t, site, generator, stage, e));
  }
  out.generator = std::move(generator);
  return out;
}

Tensor image_to_tensor(const ModelConfig& c, const imaging::ComplexImage& image) {
  const int R = c.resolution();
  if (image.height > R || image.width > R) {
    throw Error(ErrorCode::kShapeError, "image larger than model resolution " + std::to_string(R));
  }
  Tensor out({c.image_channels, R, R});
  const int r0 = (R - image.height) / 2, c0 = (R - image.width) / 2;
  for (int r = 0; r < image.height; ++r)
    for (int col = 0; col < image.width; ++col) {
      const auto v = image.at(r, col);
      const std::size_t p = std::size_t(r + r0) * R + col + c0;
      if (c.image_channels == 1) {
        out[p] = std::abs(v);
      } else {
        out[p] = v.real();
        out[std::size_t(R) * R + p] = v.imag();
      }
    }
  return out;
}

}  // namespace fedgimp::training
