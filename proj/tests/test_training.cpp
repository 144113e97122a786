#include <doctest.h>

#include <cmath>
#include <random>

#include "fedgimp/error.hpp"
#include "fedgimp/training.hpp"
#include "reference_network.hpp"
#include "support.hpp"

using namespace fedgimp;
using namespace fedgimp::testing;
using prior::ModelConfig;
using prior::Stage;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.latent_dim = 4;
  c.num_sites = 2;
  c.mapper_layers = 2;
  c.synth_layers = 2;
  c.channel_base = 2;
  c.channel_max = 3;
  return c;
}

ParamSet zeroed(ParamSet p) {
  for (auto& [name, t] : p.entries()) t = Tensor(t.shape());
  return p;
}

ParamSet jittered(ParamSet p, std::uint64_t seed, double s = 0.1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, s);
  for (auto& [name, t] : p.entries())
    for (auto& v : t.values()) v += n(rng);
  return p;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Features sample_of(const Tensor& images, int n) {
  const int C = images.dim(1), H = images.dim(2), W = images.dim(3);
  Features f(C, Map(H, std::vector<double>(W)));
  for (int c = 0; c < C; ++c)
    for (int r = 0; r < H; ++r)
      for (int col = 0; col < W; ++col) f[c][r][col] = images[((std::size_t(n) * C + c) * H + r) * W + col];
  return f;
}

Features fake_of(const ModelConfig& c, const ParamSet& g, const training::LatentBatch& lat, int n, const Stage& s) {
  std::vector<double> input(lat.z.data() + n * c.latent_dim, lat.z.data() + (n + 1) * c.latent_dim);
  input.insert(input.end(), lat.v.data() + n * c.num_sites, lat.v.data() + (n + 1) * c.num_sites);
  return reference_synthesizer(c, g, reference_mapper(c, g, input), lat.noise, n, s);
}

// Squared norm of ∇x D at one sample, by central differences on the
// reference discriminator.
double fd_input_grad_sq(const ModelConfig& c, const ParamSet& d, Features x, const Stage& s) {
  double total = 0;
  const double h = 1e-5;
  for (auto& plane : x)
    for (auto& row : plane)
      for (double& v : row) {
        const double keep = v;
        v = keep + h;
        const double up = reference_discriminator(c, d, x, s);
        v = keep - h;
        const double down = reference_discriminator(c, d, x, s);
        v = keep;
        const double g = (up - down) / (2 * h);
        total += g * g;
      }
  return total;
}

struct Fixture {
  ModelConfig c = tiny_config();
  ParamSet g, d;
  training::LatentBatch lat;
  Tensor reals;
  Stage stage;
  Fixture() {
    std::mt19937_64 rng(3);
    g = jittered(prior::init_generator(c, rng), 4);
    d = jittered(prior::init_discriminator(c, rng), 5);
    lat = training::sample_latents(c, 1, 3, rng);
    reals = random_tensor({3, 2, 8, 8}, 6);
    stage = prior::full_stage(c);
  }
};

}  // namespace

TEST_CASE("zero-logit discriminator gives the log 2 constants") {
  Fixture f;
  const ParamSet d0 = zeroed(f.d);
  const auto lg = training::generator_loss(f.c, f.g, d0, f.lat, f.stage);
  const auto ld = training::discriminator_loss(f.c, d0, f.g, f.reals, f.lat, 10.0, f.stage);
  CHECK(lg.loss == doctest::Approx(0.6931471805599453).epsilon(1e-9));
  CHECK(ld.loss == doctest::Approx(1.3862943611198906).epsilon(1e-9));
  CHECK(ld.penalty == 0.0);
  CHECK(lg.loss == doctest::Approx(ld.loss / 2).epsilon(1e-12));
}

TEST_CASE("generator loss saturates when fakes look real") {
  Fixture f;
  ParamSet d0 = zeroed(f.d);
  d0.at("discriminator/fc/bias")[0] = 50.0;
  CHECK(training::generator_loss(f.c, f.g, d0, f.lat, f.stage).loss < 1e-20);
}

TEST_CASE("losses match a direct transcription on the reference networks") {
  Fixture f;
  for (const Stage s : {Stage{2, 1.0}, Stage{2, 0.5}, Stage{1, 1.0}}) {
    const Tensor reals = prior::images_at_stage(f.c, f.reals, s);
    double lg = 0, fake_term = 0, real_term = 0, penalty = 0;
    for (int n = 0; n < 3; ++n) {
      const double dfake = reference_discriminator(f.c, f.d, fake_of(f.c, f.g, f.lat, n, s), s);
      const double dreal = reference_discriminator(f.c, f.d, sample_of(reals, n), s);
      lg += -std::log(sigmoid(dfake)) / 3;
      fake_term += -std::log(1 - sigmoid(dfake)) / 3;
      real_term += -std::log(sigmoid(dreal)) / 3;
      penalty += fd_input_grad_sq(f.c, f.d, sample_of(reals, n), s) / 3;
    }
    const double delta = 10.0;
    CHECK(training::generator_loss(f.c, f.g, f.d, f.lat, s).loss == doctest::Approx(lg).epsilon(1e-6));
    const auto ld = training::discriminator_loss(f.c, f.d, f.g, reals, f.lat, delta, s);
    CHECK(ld.penalty == doctest::Approx(delta / 2 * penalty).epsilon(1e-4));
    CHECK(ld.loss == doctest::Approx(fake_term + real_term + delta / 2 * penalty).epsilon(1e-6));
    const auto ld0 = training::discriminator_loss(f.c, f.d, f.g, reals, f.lat, 0.0, s);
    CHECK(ld0.penalty == 0.0);
    CHECK(ld0.loss == doctest::Approx(fake_term + real_term).epsilon(1e-9));
  }
}

TEST_CASE("R1 parameter gradient: double backprop agrees with the finite-difference fallback") {
  Fixture f;
  const auto exact = training::discriminator_loss(f.c, f.d, f.g, f.reals, f.lat, 10.0, f.stage, true, false);
  const auto approx = training::discriminator_loss(f.c, f.d, f.g, f.reals, f.lat, 10.0, f.stage, true, true);
  double num = 0, den = 0;
  for (const auto& [name, t] : exact.grads) {
    const Tensor& o = approx.grads.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      num += (t[i] - o[i]) * (t[i] - o[i]);
      den += t[i] * t[i];
    }
  }
  CHECK(std::sqrt(num / den) < 1e-4);

  // And the penalty gradient itself against central differences of the penalty.
  const auto p = training::r1_penalty(f.c, f.d, f.reals, 10.0, f.stage);
  for (const std::string name : {"discriminator/layer2/conv/weight", "discriminator/fc/weight"}) {
    const Tensor dir = random_tensor(f.d.at(name).shape(), 31);
    auto value = [&](const Tensor& t) {
      ParamSet moved = f.d;
      moved.at(name) = t;
      return training::r1_penalty(f.c, moved, f.reals, 10.0, f.stage, false).loss;
    };
    CHECK(relative_error(dot(p.grads.at(name), dir), directional_fd(value, f.d.at(name), dir)) < 1e-5);
  }
}

TEST_CASE("R1 penalty is non-negative") {
  Fixture f;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Tensor x = random_tensor({2, 2, 8, 8}, 40 + s, 3.0);
    CHECK(training::r1_penalty(f.c, jittered(f.d, s, 1.0), x, 10.0, f.stage, false).loss >= 0.0);
  }
}

TEST_CASE("each loss only produces gradients for its own network") {
  Fixture f;
  const auto lg = training::generator_loss(f.c, f.g, f.d, f.lat, f.stage);
  const auto ld = training::discriminator_loss(f.c, f.d, f.g, f.reals, f.lat, 10.0, f.stage);
  for (const auto& [name, t] : lg.grads) CHECK(f.g.contains(name));
  for (const auto& [name, t] : ld.grads) CHECK(f.d.contains(name));
  CHECK(lg.grads.size() == f.g.size());
  CHECK(ld.grads.size() == f.d.size());
}

TEST_CASE("empty batches are rejected") {
  Fixture f;
  std::mt19937_64 rng(0);
  const auto empty = training::sample_latents(f.c, 0, 0, rng);
  auto expect_invalid = [](auto&& fn) {
    try {
      fn();
      FAIL("expected invalid-argument");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kInvalidArgument);
    }
  };
  expect_invalid([&] { training::generator_loss(f.c, f.g, f.d, empty, f.stage); });
  expect_invalid([&] { training::discriminator_loss(f.c, f.d, f.g, f.reals, empty, 10.0, f.stage); });
  expect_invalid([&] { training::discriminator_loss(f.c, f.d, f.g, Tensor({0, 2, 8, 8}), f.lat, 10.0, f.stage); });
}

TEST_CASE("progressive stage examples") {
  ModelConfig c;
  c.synth_layers = 4;
  const auto schedule = training::equal_schedule(c, 20);
  REQUIRE(schedule.size() == 4);
  int total = 0;
  for (const auto& p : schedule) total += p.rounds;
  CHECK(total == 20);

  const Stage first = training::progressive_stage(0, schedule, c);
  CHECK(first.resolution() == 4);
  CHECK(first.alpha == 1.0);

  // Second phase covers rounds 5..9 with fade over floor(0.5*5) = 2 rounds.
  CHECK(training::progressive_stage(5, schedule, c).level == 2);
  CHECK(training::progressive_stage(5, schedule, c).alpha == doctest::Approx(1.0 / 3));
  CHECK(training::progressive_stage(6, schedule, c).alpha == doctest::Approx(2.0 / 3));
  CHECK(training::progressive_stage(7, schedule, c).alpha == 1.0);

  const Stage last = training::progressive_stage(19, schedule, c);
  CHECK(last.resolution() == 32);
  CHECK(last.alpha == 1.0);
  CHECK(training::progressive_stage(500, schedule, c).resolution() == 32);
  CHECK(training::progressive_stage(0, {}, c).resolution() == 32);

  // Linear within the fade window of a long phase.
  training::ProgressiveSchedule longer{{4, 2, 0.5}, {8, 10, 0.5}};
  std::vector<double> alphas;
  for (int r = 2; r < 7; ++r) alphas.push_back(training::progressive_stage(r, longer, c).alpha);
  for (std::size_t i = 1; i < alphas.size(); ++i) {
    CHECK(alphas[i] > alphas[i - 1]);
    CHECK(alphas[i] - alphas[i - 1] == doctest::Approx(1.0 / 6));
  }
  CHECK(alphas.front() > 0.0);
  CHECK(training::progressive_stage(7, longer, c).alpha == 1.0);
}

TEST_CASE("local update: identity at zero epochs, bookkeeping and determinism") {
  Fixture f;
  training::TrainConfig t;
  t.batch_size = 2;
  t.local_epochs = 0;
  std::vector<Tensor> images;
  for (int i = 0; i < 5; ++i) images.push_back(random_tensor({2, 8, 8}, 60 + i));

  auto site = training::make_site(f.c, t, 1, images, 9);
  const auto none = training::local_update(f.c, t, site, f.g, 0);
  CHECK(none.generator == f.g);
  CHECK(none.trace.empty());

  t.local_epochs = 3;
  auto a = training::make_site(f.c, t, 1, images, 9);
  auto b = training::make_site(f.c, t, 1, images, 9);
  const auto ua = training::local_update(f.c, t, a, f.g, 0);
  const auto ub = training::local_update(f.c, t, b, f.g, 0);
  CHECK(ua.trace.size() == 3);
  CHECK(ua.generator == ub.generator);
  CHECK(a.discriminator == b.discriminator);
  CHECK(max_abs_diff(ua.generator, f.g) > 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(ua.trace[i].generator == ub.trace[i].generator);
    CHECK(ua.trace[i].discriminator == ub.trace[i].discriminator);
  }
}

TEST_CASE("non-finite losses raise diverged-training with the epoch index") {
  Fixture f;
  training::TrainConfig t;
  t.batch_size = 2;
  t.local_epochs = 2;
  auto site = training::make_site(f.c, t, 0, {random_tensor({2, 8, 8}, 1), random_tensor({2, 8, 8}, 2)}, 1);
  ParamSet broken = f.g;
  broken.at("synthesizer/layer2/to_image/bias")[0] = std::nan("");
  try {
    training::local_update(f.c, t, site, broken, 0);
    FAIL("expected diverged-training");
  } catch (const DivergenceError& e) {
    CHECK(e.code() == ErrorCode::kDivergedTraining);
    CHECK(e.step() == 0);
  }
}

TEST_CASE("train config validation and json round trip") {
  training::TrainConfig t;
  t.schedule = {{4, 3, 0.5}, {8, 2, 0.25}};
  t.local_epochs = 7;
  const auto back = training::train_config_from_json(training::to_json(t));
  CHECK(back.local_epochs == 7);
  CHECK(back.schedule.size() == 2);
  CHECK(back.schedule[1].fade_fraction == 0.25);
  t.lr = 0;
  CHECK_THROWS_AS(t.validate(), Error);
}

TEST_CASE("complex images map to model tensors with centred padding") {
  ModelConfig c = tiny_config();
  imaging::ComplexImage m(6, 4);
  m.at(0, 0) = {3.0, -4.0};
  const Tensor two = training::image_to_tensor(c, m);
  CHECK(two.shape() == Shape{2, 8, 8});
  CHECK(two[1 * 8 + 2] == 3.0);
  CHECK(two[64 + 1 * 8 + 2] == -4.0);
  c.image_channels = 1;
  const Tensor one = training::image_to_tensor(c, m);
  CHECK(one[1 * 8 + 2] == doctest::Approx(5.0));
  CHECK_THROWS_AS(training::image_to_tensor(c, imaging::ComplexImage(9, 4)), Error);
}

TEST_CASE("loss values without gradients still include the R1 term") {
  Fixture f;
  const auto with = training::discriminator_loss(f.c, f.d, f.g, f.reals, f.lat, 10.0, f.stage, true);
  const auto without = training::discriminator_loss(f.c, f.d, f.g, f.reals, f.lat, 10.0, f.stage, false);
  CHECK(without.penalty > 0.0);
  CHECK(without.penalty == doctest::Approx(with.penalty).epsilon(1e-12));
  CHECK(without.loss == doctest::Approx(with.loss).epsilon(1e-12));
  ad::NoGradGuard guard;
  CHECK_THROWS_AS(training::discriminator_input_gradient(f.c, f.d, f.reals, f.stage), std::logic_error);
}
