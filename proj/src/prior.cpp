#include "fedgimp/prior.hpp"

#include <algorithm>
#include <cmath>

#include "fedgimp/error.hpp"
#include "fedgimp/kernels.hpp"

namespace fedgimp::prior {

using ad::Var;

int ModelConfig::channels_at(int layer) const {
  const int shift = synth_layers - layer;
  long width = long(channel_base) << std::max(0, shift);
  return int(std::min<long>(channel_max, width));
}

void ModelConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kConfigError, what); };
  if (latent_dim < 1) bad("latent_dim must be >= 1");
  if (num_sites < 1) bad("num_sites must be >= 1");
  if (mapper_layers < 1) bad("mapper_layers must be >= 1");
  if (synth_layers < 1 || synth_layers > 10) bad("synth_layers must be in [1, 10]");
  if (channel_base < 1 || channel_max < 1) bad("channel widths must be positive");
  if (image_channels != 1 && image_channels != 2) bad("image_channels must be 1 or 2");
  if (kernel < 1 || kernel % 2 == 0) bad("kernel must be odd");
}

nlohmann::json to_json(const ModelConfig& c) {
  std::vector<int> schedule;
  for (int i = 1; i <= c.synth_layers; ++i) schedule.push_back(c.channels_at(i));
  return {{"latent_dim", c.latent_dim},       {"num_sites", c.num_sites},
          {"site_conditioned", c.site_conditioned}, {"mapper_layers", c.mapper_layers},
          {"synth_layers", c.synth_layers},   {"discriminator_layers", c.synth_layers},
          {"channel_base", c.channel_base},   {"channel_max", c.channel_max},
          {"channel_schedule", schedule},     {"image_channels", c.image_channels},
          {"kernel", c.kernel},               {"leaky_slope", c.leaky_slope},
          {"adain_eps", c.adain_eps},         {"equalized_lr", c.equalized_lr},
          {"noise_strength_init", c.noise_strength_init}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.num_sites = j.value("num_sites", c.num_sites);
  c.site_conditioned = j.value("site_conditioned", c.site_conditioned);
  c.mapper_layers = j.value("mapper_layers", c.mapper_layers);
  c.synth_layers = j.value("synth_layers", c.synth_layers);
  c.channel_base = j.value("channel_base", c.channel_base);
  c.channel_max = j.value("channel_max", c.channel_max);
  c.image_channels = j.value("image_channels", c.image_channels);
  c.kernel = j.value("kernel", c.kernel);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.adain_eps = j.value("adain_eps", c.adain_eps);
  c.equalized_lr = j.value("equalized_lr", c.equalized_lr);
  c.noise_strength_init = j.value("noise_strength_init", c.noise_strength_init);
  c.validate();
  return c;
}

Stage full_stage(const ModelConfig& c) { return Stage{c.synth_layers, 1.0}; }

namespace {

std::string layer_name(const char* net, int i) { return std::string(net) + "/layer" + std::to_string(i); }

// He constant for a layer followed by leaky ReLU, unit gain for linear heads.
double he_gain(int fan_in, bool activated) { return (activated ? std::sqrt(2.0) : 1.0) / std::sqrt(double(fan_in)); }

// Runtime multiplier applied to stored weights.
double runtime_gain(const ModelConfig& c, int fan_in, bool activated) {
  return c.equalized_lr ? he_gain(fan_in, activated) : 1.0;
}

Tensor random_weights(const ModelConfig& c, Shape shape, int fan_in, bool activated, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double s = c.equalized_lr ? 1.0 : he_gain(fan_in, activated);
  for (auto& v : t.values()) v = s * normal(rng);
  return t;
}

void check_noise_shapes(const ModelConfig& c, const std::vector<Var>& noise, int batch, int level) {
  const auto shapes = noise_shapes(c, batch);
  if (noise.size() < std::size_t(2 * level)) {
    throw Error(ErrorCode::kShapeError, "expected " + std::to_string(2 * level) + " noise fields, got " +
                                            std::to_string(noise.size()));
  }
  for (int i = 0; i < 2 * level; ++i) {
    if (noise[i].shape() != shapes[i]) {
      throw Error(ErrorCode::kShapeError, "noise field " + std::to_string(i) + " has shape " +
                                              shape_string(noise[i].shape()) + ", expected " +
                                              shape_string(shapes[i]));
    }
  }
}

}  // namespace

ParamSet init_generator(const ModelConfig& c, std::mt19937_64& rng) {
  c.validate();
  ParamSet p;
  const int J = c.latent_dim;
  for (int i = 1; i <= c.mapper_layers; ++i) {
    const int in = i == 1 ? c.mapper_input_dim() : J;
    const std::string base = "mapper/fc" + std::to_string(i);
    p.add(base + "/weight", random_weights(c, {J, in}, in, true, rng));
    p.add(base + "/bias", Tensor({J}));
  }
  p.add("synthesizer/const", Tensor({1, c.channels_at(1), 4, 4}, 1.0));
  for (int i = 1; i <= c.synth_layers; ++i) {
    const int u = c.channels_at(i);
    const int prev = i == 1 ? c.channels_at(1) : c.channels_at(i - 1);
    const std::string base = layer_name("synthesizer", i);
    for (int b = 1; b <= 2; ++b) {
      const int cin = b == 1 ? prev : u;
      const std::string blk = std::to_string(b);
      p.add(base + "/conv" + blk + "/weight",
            random_weights(c, {u, cin, c.kernel, c.kernel}, cin * c.kernel * c.kernel, true, rng));
      p.add(base + "/conv" + blk + "/bias", Tensor({u}));
      p.add(base + "/noise" + blk + "/strength", Tensor({u}, c.noise_strength_init));
      p.add(base + "/style" + blk + "/gamma_weight", random_weights(c, {u, J}, J, false, rng));
      p.add(base + "/style" + blk + "/gamma_bias", Tensor({u}, 1.0));
      p.add(base + "/style" + blk + "/beta_weight", random_weights(c, {u, J}, J, false, rng));
      p.add(base + "/style" + blk + "/beta_bias", Tensor({u}));
    }
    p.add(base + "/to_image/weight", random_weights(c, {c.image_channels, u, 1, 1}, u, false, rng));
    p.add(base + "/to_image/bias", Tensor({c.image_channels}));
  }
  return p;
}

ParamSet init_discriminator(const ModelConfig& c, std::mt19937_64& rng) {
  c.validate();
  ParamSet p;
  for (int i = 1; i <= c.synth_layers; ++i) {
    const int d = c.channels_at(i);
    const std::string base = layer_name("discriminator", i);
    p.add(base + "/from_image/weight", random_weights(c, {d, c.image_channels, 1, 1}, c.image_channels, true, rng));
    p.add(base + "/from_image/bias", Tensor({d}));
    const int out = i == 1 ? d : c.channels_at(i - 1);
    p.add(base + "/conv/weight", random_weights(c, {out, d, 3, 3}, d * 9, true, rng));
    p.add(base + "/conv/bias", Tensor({out}));
  }
  const int flat = c.channels_at(1) * 16;
  p.add("discriminator/fc/weight", random_weights(c, {1, flat}, flat, false, rng));
  p.add("discriminator/fc/bias", Tensor({1}));
  return p;
}

Bindings::Bindings(const ParamSet& params, bool requires_grad) {
  for (const auto& [name, t] : params.entries()) {
    index_[name] = vars_.size();
    names_.push_back(name);
    vars_.emplace_back(t, requires_grad);
  }
}

const Var& Bindings::operator[](const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::kNotFound, "parameter " + name);
  return vars_[it->second];
}

GradientMap Bindings::gradients(const Var& loss) const {
  std::vector<Var> wrt;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (vars_[i].requires_grad()) {
      wrt.push_back(vars_[i]);
      names.push_back(names_[i]);
    }
  }
  auto grads = ad::grad(loss, wrt);
  GradientMap out;
  for (std::size_t i = 0; i < wrt.size(); ++i) out.emplace(names[i], grads[i].value());
  return out;
}

std::vector<Shape> noise_shapes(const ModelConfig& c, int batch) {
  std::vector<Shape> shapes;
  for (int i = 1; i <= c.synth_layers; ++i) {
    const int r = c.resolution_at(i);
    for (int b = 0; b < 2; ++b) shapes.push_back({batch, c.channels_at(i), r, r});
  }
  return shapes;
}

std::vector<Tensor> sample_noise(const ModelConfig& c, int batch, std::mt19937_64& rng, int levels) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Tensor> fields;
  auto shapes = noise_shapes(c, batch);
  if (levels > 0 && levels < c.synth_layers) shapes.resize(std::size_t(2 * levels));
  for (auto& s : shapes) {
    Tensor t(s);
    for (auto& v : t.values()) v = normal(rng);
    fields.push_back(std::move(t));
  }
  return fields;
}

Tensor one_hot(int num_sites, int site, int batch) {
  if (site < 0 || site >= num_sites) throw Error(ErrorCode::kInvalidArgument, "site index out of range");
  Tensor v({batch, num_sites});
  for (int n = 0; n < batch; ++n) v[std::size_t(n) * num_sites + site] = 1.0;
  return v;
}

void check_one_hot(const Tensor& v, int num_sites) {
  if (v.rank() != 2 || v.dim(1) != num_sites) {
    throw Error(ErrorCode::kShapeError, "site vector must be [N," + std::to_string(num_sites) + "]");
  }
  for (int n = 0; n < v.dim(0); ++n) {
    int ones = 0;
    for (int k = 0; k < num_sites; ++k) {
      const double x = v[std::size_t(n) * num_sites + k];
      if (x == 1.0) ++ones;
      else if (x != 0.0) ones = -1000;
    }
    if (ones != 1) throw Error(ErrorCode::kShapeError, "site vector is not one-hot");
  }
}

Tensor mapper_input(const ModelConfig& c, const Tensor& z, const Tensor& v) {
  if (z.rank() != 2 || z.dim(1) != c.latent_dim) {
    throw Error(ErrorCode::kShapeError, "z must be [N," + std::to_string(c.latent_dim) + "]");
  }
  const int N = z.dim(0), J = c.latent_dim;
  if (!c.site_conditioned) return z;
  check_one_hot(v, c.num_sites);
  if (v.dim(0) != N) throw Error(ErrorCode::kShapeError, "z and v batch sizes differ");
  const int K = c.num_sites;
  Tensor out({N, J + K});
  for (int n = 0; n < N; ++n) {
    std::copy_n(z.data() + std::size_t(n) * J, J, out.data() + std::size_t(n) * (J + K));
    std::copy_n(v.data() + std::size_t(n) * K, K, out.data() + std::size_t(n) * (J + K) + J);
  }
  return out;
}

Var dense(const Var& x, const Var& weight, const Var& bias, double gain) {
  Var w = gain == 1.0 ? weight : ad::scale(weight, gain);
  return ad::add_channel_bias(ad::matmul(x, w, false, true), bias);
}

Var conv(const Var& x, const Var& weight, const Var& bias, double gain) {
  Var w = gain == 1.0 ? weight : ad::scale(weight, gain);
  return ad::add_channel_bias(ad::conv2d(x, w), bias);
}

Var noise_inject(const Var& x, const Var& noise, const Var& strength, double slope) {
  if (x.shape() != noise.shape()) {
    throw Error(ErrorCode::kShapeError, "noise " + shape_string(noise.shape()) + " vs features " +
                                            shape_string(x.shape()));
  }
  return ad::leaky_relu(ad::add(x, ad::mul(ad::channel_expand(strength, x.shape()), noise)), slope);
}

Var adain(const Var& x, const Var& gamma, const Var& beta, double eps) {
  Var normalized = ad::instance_norm(x, eps);
  return ad::add(ad::mul(normalized, ad::sample_channel_expand(gamma, x.shape())),
                 ad::sample_channel_expand(beta, x.shape()));
}

Var map_latent(const ModelConfig& c, const Bindings& g, const Var& input) {
  if (input.value().rank() != 2 || input.shape()[1] != c.mapper_input_dim()) {
    throw Error(ErrorCode::kShapeError, "mapper input must be [N," + std::to_string(c.mapper_input_dim()) + "]");
  }
  Var x = input;
  for (int i = 1; i <= c.mapper_layers; ++i) {
    const std::string base = "mapper/fc" + std::to_string(i);
    const int fan_in = i == 1 ? c.mapper_input_dim() : c.latent_dim;
    x = ad::leaky_relu(dense(x, g[base + "/weight"], g[base + "/bias"], runtime_gain(c, fan_in, true)),
                       c.leaky_slope);
  }
  return x;
}

Var synthesize(const ModelConfig& c, const Bindings& g, const Var& w, const std::vector<Var>& noise,
               const Stage& stage, SynthesisTrace* trace) {
  if (stage.level < 1 || stage.level > c.synth_layers) throw Error(ErrorCode::kShapeError, "stage level");
  if (w.value().rank() != 2 || w.shape()[1] != c.latent_dim) {
    throw Error(ErrorCode::kShapeError, "w must be [N," + std::to_string(c.latent_dim) + "]");
  }
  const int N = w.shape()[0];
  check_noise_shapes(c, noise, N, stage.level);
  const double style_gain = runtime_gain(c, c.latent_dim, false);

  Var x = ad::repeat_batch(g["synthesizer/const"], N);
  Var previous_image;
  for (int i = 1; i <= stage.level; ++i) {
    const std::string base = layer_name("synthesizer", i);
    if (i > 1) x = ad::upsample2x(x);
    for (int b = 1; b <= 2; ++b) {
      const std::string blk = std::to_string(b);
      const int cin = x.shape()[1];
      x = conv(x, g[base + "/conv" + blk + "/weight"], g[base + "/conv" + blk + "/bias"],
               runtime_gain(c, cin * c.kernel * c.kernel, true));
      x = noise_inject(x, noise[2 * (i - 1) + (b - 1)], g[base + "/noise" + blk + "/strength"], c.leaky_slope);
      Var gamma = dense(w, g[base + "/style" + blk + "/gamma_weight"], g[base + "/style" + blk + "/gamma_bias"], style_gain);
      Var beta = dense(w, g[base + "/style" + blk + "/beta_weight"], g[base + "/style" + blk + "/beta_bias"], style_gain);
      x = adain(x, gamma, beta, c.adain_eps);
      if (trace) trace->adain_outputs.push_back(x.value());
    }
    if (i == stage.level - 1 && stage.alpha < 1.0) {
      previous_image = conv(x, g[base + "/to_image/weight"], g[base + "/to_image/bias"],
                            runtime_gain(c, x.shape()[1], false));
    }
  }
  const std::string last = layer_name("synthesizer", stage.level);
  Var image = conv(x, g[last + "/to_image/weight"], g[last + "/to_image/bias"], runtime_gain(c, x.shape()[1], false));
  if (previous_image.defined()) {
    image = ad::add(ad::scale(image, stage.alpha), ad::scale(ad::upsample2x(previous_image), 1.0 - stage.alpha));
  }
  return image;
}

Var discriminate(const ModelConfig& c, const Bindings& d, const Var& images, const Stage& stage) {
  const int r = stage.resolution();
  if (images.value().rank() != 4 || images.shape()[1] != c.image_channels || images.shape()[2] != r ||
      images.shape()[3] != r) {
    throw Error(ErrorCode::kShapeError, "discriminator expects [N," + std::to_string(c.image_channels) + "," +
                                            std::to_string(r) + "," + std::to_string(r) + "], got " +
                                            shape_string(images.shape()));
  }
  const double slope = c.leaky_slope;
  auto from_image = [&](const Var& x, int level) {
    const std::string base = layer_name("discriminator", level);
    return ad::leaky_relu(conv(x, d[base + "/from_image/weight"], d[base + "/from_image/bias"],
                               runtime_gain(c, c.image_channels, true)),
                          slope);
  };
  auto block = [&](const Var& h, int level) {
    const std::string base = layer_name("discriminator", level);
    return ad::leaky_relu(conv(h, d[base + "/conv/weight"], d[base + "/conv/bias"],
                               runtime_gain(c, h.shape()[1] * 9, true)),
                          slope);
  };

  Var h = from_image(images, stage.level);
  for (int i = stage.level; i >= 2; --i) {
    h = ad::downsample2x(block(h, i));
    if (i == stage.level && stage.alpha < 1.0) {
      Var coarse = from_image(ad::downsample2x(images), i - 1);
      h = ad::add(ad::scale(h, stage.alpha), ad::scale(coarse, 1.0 - stage.alpha));
    }
  }
  h = block(h, 1);
  const int N = images.shape()[0];
  const int flat = h.shape()[1] * h.shape()[2] * h.shape()[3];
  Var logits = dense(ad::reshape(h, {N, flat}), d["discriminator/fc/weight"], d["discriminator/fc/bias"],
                     runtime_gain(c, flat, false));
  return ad::reshape(logits, {N});
}

Tensor map_latent(const ModelConfig& c, const ParamSet& generator, const Tensor& z, const Tensor& v) {
  ad::NoGradGuard guard;
  Bindings g(generator, false);
  return map_latent(c, g, Var(mapper_input(c, z, v))).value();
}

Tensor synthesize(const ModelConfig& c, const ParamSet& generator, const Tensor& w,
                  const std::vector<Tensor>& noise, const Stage& stage) {
  ad::NoGradGuard guard;
  Bindings g(generator, false);
  std::vector<Var> n;
  for (const auto& t : noise) n.emplace_back(t);
  return synthesize(c, g, Var(w), n, stage).value();
}

Tensor discriminate(const ModelConfig& c, const ParamSet& discriminator, const Tensor& images,
                    const Stage& stage) {
  ad::NoGradGuard guard;
  Bindings d(discriminator, false);
  return discriminate(c, d, Var(images), stage).value();
}

Tensor adain(const Tensor& x, const std::vector<double>& gamma, const std::vector<double>& beta, double eps) {
  if (x.rank() != 4 || int(gamma.size()) != x.dim(1) || int(beta.size()) != x.dim(1)) {
    throw Error(ErrorCode::kShapeError, "adain: gamma/beta must have one entry per channel");
  }
  ad::NoGradGuard guard;
  const int N = x.dim(0), C = x.dim(1);
  Tensor g({N, C}), b({N, C});
  for (int n = 0; n < N; ++n)
    for (int ch = 0; ch < C; ++ch) {
      g[std::size_t(n) * C + ch] = gamma[ch];
      b[std::size_t(n) * C + ch] = beta[ch];
    }
  return adain(Var(x), Var(g), Var(b), eps).value();
}

Tensor noise_inject(const Tensor& x, const Tensor& noise, const std::vector<double>& strength, double slope) {
  if (x.rank() != 4 || int(strength.size()) != x.dim(1)) {
    throw Error(ErrorCode::kShapeError, "noise_inject: one strength per channel");
  }
  ad::NoGradGuard guard;
  return noise_inject(Var(x), Var(noise), Var(Tensor({x.dim(1)}, std::vector<double>(strength))), slope).value();
}

Tensor images_at_stage(const ModelConfig& c, const Tensor& images, const Stage& stage) {
  if (images.rank() != 4 || images.dim(2) != c.resolution() || images.dim(3) != c.resolution()) {
    throw Error(ErrorCode::kShapeError, "images must be at model resolution " + std::to_string(c.resolution()));
  }
  Tensor x = images;
  auto down = [](const Tensor& t) {
    Shape s = t.shape();
    s[2] /= 2;
    s[3] /= 2;
    Tensor out(s);
    kernels::downsample2x(s[0] * s[1], s[2], s[3], t.values(), out.values());
    return out;
  };
  for (int level = c.synth_layers; level > stage.level; --level) x = down(x);
  if (stage.alpha < 1.0 && stage.level > 1) {
    Tensor coarse = down(x);
    Tensor up(x.shape());
    kernels::upsample2x(coarse.dim(0) * coarse.dim(1), coarse.dim(2), coarse.dim(3), coarse.values(), up.values());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = stage.alpha * x[i] + (1.0 - stage.alpha) * up[i];
  }
  return x;
}

}  // namespace fedgimp::prior
