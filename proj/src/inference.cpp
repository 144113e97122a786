#include "fedgimp/inference.hpp"

#include <cmath>
#include <random>
#include <string>

#include "fedgimp/error.hpp"

namespace fedgimp::inference {

using ad::Var;
using imaging::ComplexImage;
using imaging::ComplexStack;
using imaging::cplx;

void InferenceConfig::validate() const {
  if (iterations < 1) throw Error(ErrorCode::kInvalidArgument, "iterations must be >= 1");
  if (tv_weight < 0.0) throw Error(ErrorCode::kInvalidArgument, "tv_weight must be >= 0");
  if (!(lr > 0.0)) throw Error(ErrorCode::kInvalidArgument, "lr must be > 0");
}

nlohmann::json to_json(const InferenceConfig& c) {
  return {{"lr", c.lr},           {"beta1", c.beta1},         {"beta2", c.beta2},
          {"iterations", c.iterations}, {"tv_weight", c.tv_weight}, {"seed", c.seed}};
}

InferenceConfig inference_config_from_json(const nlohmann::json& j) {
  InferenceConfig c;
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.iterations = j.value("iterations", c.iterations);
  c.tv_weight = j.value("tv_weight", c.tv_weight);
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

void require_image_var(const Tensor& x) {
  if (x.rank() != 4 || x.dim(0) != 1 || x.dim(1) < 1 || x.dim(1) > 2) {
    throw Error(ErrorCode::kShapeError, "expected a [1, C, H, W] image with C in {1,2}, got " +
                                            shape_string(x.shape()));
  }
}

ComplexImage planes_to_image(const Tensor& x) {
  const int C = x.dim(1), H = x.dim(2), W = x.dim(3);
  ComplexImage m(H, W);
  const std::size_t n = std::size_t(H) * W;
  for (std::size_t p = 0; p < n; ++p) m.pixels[p] = cplx(x[p], C == 2 ? x[n + p] : 0.0);
  return m;
}

}  // namespace

ComplexImage tensor_to_image(const Tensor& x, int height, int width) {
  require_image_var(x);
  if (height > x.dim(2) || width > x.dim(3)) {
    throw Error(ErrorCode::kShapeError, "acquisition matrix larger than the synthesized image");
  }
  ad::NoGradGuard guard;
  return planes_to_image(ad::center_crop(Var(x), height, width).value());
}

Var data_term(const Var& image, const imaging::KSpaceAcquisition& y) {
  require_image_var(image.value());
  const int C = image.value().dim(1), H = image.value().dim(2), W = image.value().dim(3);
  if (H != y.op.height() || W != y.op.width()) {
    throw Error(ErrorCode::kShapeError, "image " + std::to_string(H) + "x" + std::to_string(W) +
                                            " does not match operator " + std::to_string(y.op.height()) + "x" +
                                            std::to_string(y.op.width()));
  }
  ComplexStack r = y.op.apply(planes_to_image(image.value()));
  if (r.values.size() != y.samples.values.size()) throw Error(ErrorCode::kShapeError, "acquisition coil count mismatch");
  for (std::size_t i = 0; i < r.values.size(); ++i) r.values[i] -= y.samples.values[i];
  const double norm = imaging::norm2(r.values);

  Tensor dir(image.shape());
  if (norm > 0.0) {
    const ComplexImage back = y.op.apply_adjoint(r);
    const std::size_t n = std::size_t(H) * W;
    for (std::size_t p = 0; p < n; ++p) {
      dir[p] = back.pixels[p].real() / norm;
      if (C == 2) dir[n + p] = back.pixels[p].imag() / norm;
    }
  }
  const Shape shape = image.shape();
  return ad::make_op(
      Tensor::scalar(norm), {image},
      [dir, shape](const Var& g) { return std::vector<Var>{ad::mul_const(ad::expand_scalar(g, shape), dir)}; },
      "data_term", /*first_order_only=*/true);
}

Var total_variation(const Var& image) {
  const Tensor& x = image.value();
  require_image_var(x);
  const int C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t n = std::size_t(H) * W;
  Tensor dir(x.shape());
  double tv = 0.0;
  for (int r = 0; r < H; ++r)
    for (int col = 0; col < W; ++col) {
      const std::size_t p = std::size_t(r) * W + col;
      const std::size_t right = col + 1 < W ? p + 1 : p;
      const std::size_t down = r + 1 < H ? p + W : p;
      double mag2 = 0.0;
      for (int ch = 0; ch < C; ++ch) {
        const double dx = x[ch * n + right] - x[ch * n + p];
        const double dy = x[ch * n + down] - x[ch * n + p];
        mag2 += dx * dx + dy * dy;
      }
      if (mag2 == 0.0) continue;
      const double mag = std::sqrt(mag2);
      tv += mag;
      for (int ch = 0; ch < C; ++ch) {
        const double dx = x[ch * n + right] - x[ch * n + p];
        const double dy = x[ch * n + down] - x[ch * n + p];
        dir[ch * n + right] += dx / mag;
        dir[ch * n + down] += dy / mag;
        dir[ch * n + p] -= (dx + dy) / mag;
      }
    }
  const Shape shape = x.shape();
  return ad::make_op(
      Tensor::scalar(tv), {image},
      [dir, shape](const Var& g) { return std::vector<Var>{ad::mul_const(ad::expand_scalar(g, shape), dir)}; },
      "total_variation", /*first_order_only=*/true);
}

namespace {

struct LossVars {
  Var total;
  Var data;
  Var penalty;
};

LossVars build_loss(const prior::ModelConfig& c, const prior::Bindings& b, const Var& w,
                    const std::vector<Var>& noise, const imaging::KSpaceAcquisition& y, double tv_weight) {
  Var image = prior::synthesize(c, b, w, noise, prior::full_stage(c));
  if (y.op.height() > image.shape()[2] || y.op.width() > image.shape()[3]) {
    throw Error(ErrorCode::kShapeError, "acquisition matrix larger than the model resolution");
  }
  Var cropped = ad::center_crop(image, y.op.height(), y.op.width());
  LossVars l;
  l.data = data_term(cropped, y);
  l.penalty = ad::scale(total_variation(cropped), tv_weight);
  l.total = ad::add(l.data, l.penalty);
  return l;
}

DcLossTerms terms(const LossVars& l) {
  return DcLossTerms{l.total.value()[0], l.data.value()[0], l.penalty.value()[0]};
}

}  // namespace

DcLossTerms dc_loss(const prior::ModelConfig& c, const imaging::KSpaceAcquisition& y, const ParamSet& synthesizer,
                    const Tensor& w, const std::vector<Tensor>& noise, double tv_weight) {
  ad::NoGradGuard guard;
  prior::Bindings b(synthesizer, false);
  std::vector<Var> n(noise.begin(), noise.end());
  return terms(build_loss(c, b, Var(w), n, y, tv_weight));
}

Reconstruction adapt_and_reconstruct(const prior::ModelConfig& c, const ParamSet& generator, int site,
                                     const imaging::KSpaceAcquisition& y, const InferenceConfig& config) {
  config.validate();
  if (imaging::norm2(y.samples.values) == 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "acquisition holds no signal");
  }

  std::mt19937_64 rng(config.seed);
  Tensor z({1, c.latent_dim});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : z.values()) v = normal(rng);
  const Tensor v = c.site_conditioned ? prior::one_hot(c.num_sites, site, 1) : prior::one_hot(1, 0, 1);
  Tensor w0;
  {
    ad::NoGradGuard guard;
    w0 = prior::map_latent(c, generator, z, v);
  }

  // One optimiser over θ_S, w and n.
  ParamSet vars = generator.subset("synthesizer/");
  vars.add("latent/w", w0);
  const auto noise0 = prior::sample_noise(c, 1, rng);
  for (std::size_t i = 0; i < noise0.size(); ++i) vars.add("latent/noise" + std::to_string(i), noise0[i]);
  Adam opt(AdamConfig{config.lr, config.beta1, config.beta2, 1e-8});

  auto noise_vars = [&](const prior::Bindings& b) {
    std::vector<Var> n;
    for (std::size_t i = 0; i < noise0.size(); ++i) n.push_back(b["latent/noise" + std::to_string(i)]);
    return n;
  };

  Reconstruction out;
  out.trace.reserve(config.iterations);
  for (int e = 0; e < config.iterations; ++e) {
    prior::Bindings b(vars, true);
    LossVars l = build_loss(c, b, b["latent/w"], noise_vars(b), y, config.tv_weight);
    const DcLossTerms t = terms(l);
    if (!std::isfinite(t.total)) {
      throw DivergenceError(ErrorCode::kDivergedInference, e, "data-consistency loss is not finite");
    }
    out.trace.push_back(t);
    opt.step(vars, b.gradients(l.total));
  }

  {
    ad::NoGradGuard guard;
    prior::Bindings b(vars, false);
    Var image = prior::synthesize(c, b, b["latent/w"], noise_vars(b), prior::full_stage(c));
    out.image = tensor_to_image(image.value(), y.op.height(), y.op.width());
  }
  out.synthesizer = vars.subset("synthesizer/");
  out.w = vars.at("latent/w");
  for (std::size_t i = 0; i < noise0.size(); ++i) out.noise.push_back(vars.at("latent/noise" + std::to_string(i)));
  return out;
}

ComplexImage enforce_data_consistency(const ComplexImage& image, const imaging::KSpaceAcquisition& y) {
  ComplexStack k = y.op.coil_kspace(image);
  if (k.values.size() != y.samples.values.size()) throw Error(ErrorCode::kShapeError, "acquisition coil count mismatch");
  const auto& mask = y.op.mask();
  const std::size_t plane = std::size_t(k.height) * k.width;
  for (int coil = 0; coil < k.count; ++coil)
    for (std::size_t p = 0; p < plane; ++p)
      if (mask.pattern[p]) k.values[coil * plane + p] = y.samples.values[coil * plane + p];
  return y.op.combine(k);
}

}  // namespace fedgimp::inference
