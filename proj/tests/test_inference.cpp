#include <doctest.h>

#include <cmath>
#include <random>

#include "fedgimp/error.hpp"
#include "fedgimp/inference.hpp"
#include "fedgimp/training.hpp"
#include "support.hpp"

using namespace fedgimp;
using namespace fedgimp::testing;
using imaging::cplx;

namespace {

prior::ModelConfig tiny_model() {
  prior::ModelConfig c;
  c.latent_dim = 4;
  c.num_sites = 2;
  c.mapper_layers = 2;
  c.synth_layers = 2;
  c.channel_base = 2;
  c.channel_max = 3;
  return c;
}

imaging::ComplexImage smooth_phantom(int h, int w) {
  imaging::ComplexImage m(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double y = (r - h / 2.0) / h, x = (c - w / 2.0) / w;
      m.at(r, c) = {std::exp(-8 * (x * x + y * y)), 0.2 * x};
    }
  return m;
}

template <class Fn>
void expect_code(ErrorCode code, Fn&& fn) {
  try {
    fn();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == code);
  }
}

struct Setup {
  prior::ModelConfig c = tiny_model();
  ParamSet generator;
  std::vector<Tensor> noise;
  Tensor w;
  Setup() {
    std::mt19937_64 rng(1);
    generator = prior::init_generator(c, rng);
    noise = prior::sample_noise(c, 1, rng);
    w = random_tensor({1, c.latent_dim}, 2);
  }
  ParamSet synth() const { return generator.subset("synthesizer/"); }
};

}  // namespace

TEST_CASE("dc_loss vanishes for a constant image that explains the data") {
  Setup s;
  ParamSet g = s.synth();
  for (auto& [name, t] : g.entries())
    for (auto& v : t.values()) v = 0.0;
  g.at("synthesizer/layer2/to_image/bias")[0] = 0.7;
  g.at("synthesizer/layer2/to_image/bias")[1] = -0.2;
  imaging::ComplexImage constant(6, 8);
  for (auto& p : constant.pixels) p = {0.7, -0.2};
  imaging::ImagingOperator op(imaging::make_mask(6, 8, 2.0, imaging::Density::kUniform, 2, 0));
  const auto y = imaging::forward(op, constant);
  const auto loss = inference::dc_loss(s.c, y, g, s.w, s.noise, 1e-2);
  CHECK(std::abs(loss.total) < 1e-12);
}

TEST_CASE("dc_loss data term equals the masked k-space norm when y = 0") {
  Setup s;
  imaging::ImagingOperator op(imaging::make_mask(8, 6, 3.0, imaging::Density::kVariable, 1, 3),
                              imaging::make_synthetic_coils(8, 6, 3, 1));
  imaging::KSpaceAcquisition zero{imaging::ComplexStack(3, 8, 6), op};
  const auto loss = inference::dc_loss(s.c, zero, s.synth(), s.w, s.noise, 0.0);
  const Tensor out = prior::synthesize(s.c, s.generator, s.w, s.noise, prior::full_stage(s.c));
  const auto image = inference::tensor_to_image(out, 8, 6);
  const auto k = op.apply(image);
  double energy = 0;
  for (const auto& v : k.values) energy += std::norm(v);
  CHECK(loss.data == doctest::Approx(std::sqrt(energy)).epsilon(1e-12));
  CHECK(loss.penalty == 0.0);
  CHECK(loss.total == loss.data);
}

TEST_CASE("the penalty component is linear in the TV weight") {
  Setup s;
  imaging::ImagingOperator op(imaging::make_mask(8, 8, 2.0, imaging::Density::kVariable, 2, 4));
  const auto y = imaging::forward(op, smooth_phantom(8, 8));
  const double l0 = inference::dc_loss(s.c, y, s.synth(), s.w, s.noise, 0.0).total;
  const double l1 = inference::dc_loss(s.c, y, s.synth(), s.w, s.noise, 0.3).total;
  const double l2 = inference::dc_loss(s.c, y, s.synth(), s.w, s.noise, 0.6).total;
  CHECK(l2 - l0 == doctest::Approx(2 * (l1 - l0)).epsilon(1e-10));
}

TEST_CASE("total variation matches a direct evaluation and has the right gradient") {
  const Tensor x0 = random_tensor({1, 2, 5, 4}, 7);
  double expected = 0;
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 4; ++c) {
      double sq = 0;
      for (int ch = 0; ch < 2; ++ch) {
        auto at = [&](int rr, int cc) { return x0[(ch * 5 + rr) * 4 + cc]; };
        const double dy = (r + 1 < 5 ? at(r + 1, c) : at(r, c)) - at(r, c);
        const double dx = (c + 1 < 4 ? at(r, c + 1) : at(r, c)) - at(r, c);
        sq += dx * dx + dy * dy;
      }
      expected += std::sqrt(sq);
    }
  ad::Var x(x0, true);
  const ad::Var tv = inference::total_variation(x);
  CHECK(tv.value()[0] == doctest::Approx(expected).epsilon(1e-12));
  const Tensor g = ad::grad(tv, {x})[0].value();
  const Tensor dir = random_tensor(x0.shape(), 8);
  auto f = [](const Tensor& t) { return inference::total_variation(ad::Var(t)).value()[0]; };
  CHECK(relative_error(dot(g, dir), directional_fd(f, x0, dir)) < 1e-6);

  ad::Var flat(Tensor({1, 1, 3, 3}, 2.0), true);
  const Tensor flat_grad = ad::grad(inference::total_variation(flat), {flat})[0].value();
  for (double v : flat_grad.values()) CHECK(v == 0.0);
}

TEST_CASE("data term gradient matches finite differences") {
  for (int channels : {1, 2}) {
    imaging::ImagingOperator op(imaging::make_mask(6, 6, 2.0, imaging::Density::kVariable, 2, 5),
                                imaging::make_synthetic_coils(6, 6, 2, 2));
    const auto y = imaging::forward(op, smooth_phantom(6, 6));
    const Tensor x0 = random_tensor({1, channels, 6, 6}, 9);
    ad::Var x(x0, true);
    const Tensor g = ad::grad(inference::data_term(x, y), {x})[0].value();
    const Tensor dir = random_tensor(x0.shape(), 10);
    auto f = [&](const Tensor& t) { return inference::data_term(ad::Var(t), y).value()[0]; };
    CHECK(relative_error(dot(g, dir), directional_fd(f, x0, dir)) < 1e-6);
  }
}

TEST_CASE("adaptation descends, is deterministic and leaves the mapper alone") {
  Setup s;
  const ParamSet before = s.generator;
  imaging::ImagingOperator op(imaging::make_mask(8, 8, 2.0, imaging::Density::kVariable, 2, 6));
  const auto y = imaging::forward(op, smooth_phantom(8, 8));
  inference::InferenceConfig cfg;
  cfg.iterations = 40;
  cfg.seed = 3;
  const auto a = inference::adapt_and_reconstruct(s.c, s.generator, 1, y, cfg);
  const auto b = inference::adapt_and_reconstruct(s.c, s.generator, 1, y, cfg);
  REQUIRE(a.trace.size() == 40);
  CHECK(a.trace.back().total < a.trace.front().total);
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += a.trace[i].total;
    last += a.trace[30 + i].total;
  }
  CHECK(last < first);
  CHECK(a.image == b.image);
  CHECK(a.synthesizer == b.synthesizer);
  CHECK(s.generator == before);
  for (const auto& name : a.synthesizer.names()) CHECK(name.rfind("synthesizer/", 0) == 0);
  CHECK(a.image.height == 8);
  CHECK(max_abs_diff(a.synthesizer, s.synth()) > 0.0);

  cfg.tv_weight = 0.0;
  const auto plain = inference::adapt_and_reconstruct(s.c, s.generator, 0, y, cfg);
  for (const auto& t : plain.trace) CHECK(t.penalty == 0.0);
}

TEST_CASE("one generator serves operators with different rates and densities") {
  Setup s;
  inference::InferenceConfig cfg;
  cfg.iterations = 5;
  for (auto [rate, density] : {std::pair{2.0, imaging::Density::kVariable}, std::pair{2.0, imaging::Density::kUniform}}) {
    imaging::ImagingOperator op(imaging::make_mask(8, 6, rate, density, 1, 1));
    const auto rec = inference::adapt_and_reconstruct(s.c, s.generator, 0, imaging::forward(op, smooth_phantom(8, 6)), cfg);
    CHECK(rec.image.width == 6);
    CHECK(rec.trace.size() == 5);
  }
}

TEST_CASE("adaptation argument errors") {
  Setup s;
  imaging::ImagingOperator op(imaging::make_mask(8, 8, 2.0, imaging::Density::kVariable, 2, 6));
  const auto y = imaging::forward(op, smooth_phantom(8, 8));
  inference::InferenceConfig cfg;
  cfg.iterations = 0;
  expect_code(ErrorCode::kInvalidArgument, [&] { inference::adapt_and_reconstruct(s.c, s.generator, 0, y, cfg); });
  cfg.iterations = 2;
  cfg.tv_weight = -1;
  expect_code(ErrorCode::kInvalidArgument, [&] { inference::adapt_and_reconstruct(s.c, s.generator, 0, y, cfg); });
  cfg.tv_weight = 0;
  imaging::KSpaceAcquisition zero{imaging::ComplexStack(1, 8, 8), op};
  expect_code(ErrorCode::kInvalidArgument, [&] { inference::adapt_and_reconstruct(s.c, s.generator, 0, zero, cfg); });
  imaging::ImagingOperator big(imaging::make_mask(16, 16, 2.0, imaging::Density::kVariable, 2, 6));
  const auto ybig = imaging::forward(big, smooth_phantom(16, 16));
  expect_code(ErrorCode::kShapeError, [&] { inference::adapt_and_reconstruct(s.c, s.generator, 0, ybig, cfg); });
  expect_code(ErrorCode::kShapeError, [&] { inference::dc_loss(s.c, ybig, s.synth(), s.w, s.noise, 0.0); });
}

TEST_CASE("a generator producing non-finite images raises diverged-inference") {
  Setup s;
  s.generator.at("synthesizer/layer2/to_image/bias")[0] = std::nan("");
  imaging::ImagingOperator op(imaging::make_mask(8, 8, 2.0, imaging::Density::kVariable, 2, 6));
  inference::InferenceConfig cfg;
  cfg.iterations = 3;
  try {
    inference::adapt_and_reconstruct(s.c, s.generator, 0, imaging::forward(op, smooth_phantom(8, 8)), cfg);
    FAIL("expected diverged-inference");
  } catch (const DivergenceError& e) {
    CHECK(e.code() == ErrorCode::kDivergedInference);
    CHECK(e.step() == 0);
  }
}

TEST_CASE("enforce_data_consistency examples") {
  const auto m = smooth_phantom(8, 6);
  imaging::ImagingOperator op(imaging::make_mask(8, 6, 2.0, imaging::Density::kVariable, 2, 1));
  const auto same = inference::enforce_data_consistency(m, imaging::forward(op, m));
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(std::abs(same.pixels[i] - m.pixels[i]) < 1e-12);

  imaging::ImagingOperator full(imaging::full_mask(8, 6));
  const auto target = imaging::forward(full, smooth_phantom(8, 6));
  imaging::ComplexImage other(8, 6);
  for (auto& p : other.pixels) p = {0.3, 0.9};
  const auto replaced = inference::enforce_data_consistency(other, target);
  const auto zf = imaging::adjoint(full, target);
  for (std::size_t i = 0; i < zf.size(); ++i) CHECK(std::abs(replaced.pixels[i] - zf.pixels[i]) < 1e-12);

  const auto y = imaging::forward(op, m);
  const auto out = inference::enforce_data_consistency(other, y);
  const auto again = imaging::forward(op, out);
  for (std::size_t i = 0; i < y.samples.values.size(); ++i)
    CHECK(std::abs(again.samples.values[i] - y.samples.values[i]) < 1e-6);
  CHECK_THROWS_AS(inference::enforce_data_consistency(imaging::ComplexImage(4, 4), y), Error);
}

TEST_CASE("padding to the model resolution and cropping back are inverse") {
  const auto c = tiny_model();
  const auto m = smooth_phantom(6, 5);
  const Tensor t = training::image_to_tensor(c, m).reshaped({1, 2, 8, 8});
  CHECK(inference::tensor_to_image(t, 6, 5) == m);
}
