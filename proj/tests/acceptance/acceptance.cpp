// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. `--only 3,5` runs a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "../reference_network.hpp"
#include "../support.hpp"
#include "fedgimp/data.hpp"
#include "fedgimp/evaluation.hpp"
#include "fedgimp/federation.hpp"
#include "fedgimp/inference.hpp"
#include "fedgimp/io.hpp"
#include "fedgimp/random.hpp"
#include "fedgimp/training.hpp"

using namespace fedgimp;
using namespace fedgimp::testing;
using imaging::ComplexImage;
using imaging::cplx;
using imaging::Density;

namespace {

// ---- pinned tolerances -----------------------------------------------------
constexpr double kDotTol = 1e-5;
constexpr double kRoundTripTol = 1e-6;
constexpr double kAggregateTol = 1e-12;
constexpr double kWeightSumTol = 1e-9;
constexpr double kEquivalenceTol = 1e-7;
constexpr double kLossTol = 1e-6;
constexpr double kR1GradTol = 1e-4;
constexpr double kMomentTol = 1e-4;
constexpr double kQualityMarginDb = 3.0;
constexpr double kShiftMarginDb = 2.0;
constexpr double kAblationSlackDb = 0.1;
constexpr double kDcTol = 1e-6;

// ---- end-to-end setup ------------------------------------------------------
constexpr int kSites = 3;
constexpr int kSubjects = 55;  // 40/10/5 split: 200 training slices per site
constexpr int kSlices = 5;
constexpr int kRounds = 40;
constexpr std::uint64_t kDataSeed = 11;
constexpr std::uint64_t kFederationSeed = 5;
constexpr int kCalibration = 4;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

imaging::ComplexImage random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  ComplexImage m(h, w);
  for (auto& p : m.pixels) p = {n(rng), n(rng)};
  return m;
}

imaging::ComplexStack random_stack(int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  imaging::ComplexStack s(c, h, w);
  for (auto& p : s.values) p = {n(rng), n(rng)};
  return s;
}

// ---- 1 ---------------------------------------------------------------------
Outcome operator_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_dot = 0, worst_trip = 0;
  for (int coils : {1, 5}) {
    for (int trial = 0; trial < 100; ++trial) {
      const std::uint64_t seed = derive_seed(1000 + coils, trial);
      std::optional<imaging::CoilSensitivities> maps;
      if (coils > 1) maps = imaging::make_synthetic_coils(64, 64, coils, derive_seed(seed, 1));
      const Density d = trial % 2 ? Density::kUniform : Density::kVariable;
      const double rate = 2.0 + trial % 5;
      imaging::ImagingOperator op(imaging::make_mask(64, 64, rate, d, kCalibration, derive_seed(seed, 2)), maps);
      const auto x = random_image(64, 64, derive_seed(seed, 3));
      const auto y = random_stack(coils, 64, 64, derive_seed(seed, 4));
      const cplx lhs = imaging::inner(op.apply(x).values, y.values);
      const cplx rhs = imaging::inner(x.pixels, op.apply_adjoint(y).pixels);
      worst_dot = std::max(worst_dot, std::abs(lhs - rhs) / (imaging::norm2(x.pixels) * imaging::norm2(y.values)));

      imaging::ImagingOperator full(imaging::full_mask(64, 64), maps);
      const auto back = imaging::adjoint(full, imaging::forward(full, x));
      double err = 0;
      for (std::size_t i = 0; i < x.size(); ++i) err += std::norm(back.pixels[i] - x.pixels[i]);
      worst_trip = std::max(worst_trip, std::sqrt(err) / imaging::norm2(x.pixels));
    }
  }
  const double secs = seconds_since(t0);
  return {worst_dot < kDotTol && worst_trip < kRoundTripTol && secs < 10.0,
          "200 cases (1 and 5 coils), worst dot-test " + fmt("%.2e", worst_dot) + ", worst full-mask round trip " +
              fmt("%.2e", worst_trip) + ", " + fmt("%.1f", secs) + " s"};
}

// ---- 2 ---------------------------------------------------------------------
Outcome aggregation_oracle() {
  double worst = 0, worst_sum = 0;
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const int K = 1 + int(rng() % 6);
    std::vector<long> counts(K);
    for (auto& n : counts) n = 1 + long(rng() % 500);
    const auto alpha = federation::compute_site_weights(counts);
    double sum = 0;
    for (double a : alpha) sum += a;
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));

    std::vector<ParamSet> locals(K);
    const std::vector<Shape> shapes{{3, 4}, {7}, {2, 2, 3, 3}, {1}};
    for (int k = 0; k < K; ++k)
      for (std::size_t a = 0; a < shapes.size(); ++a)
        locals[k].add("p" + std::to_string(a), random_tensor(shapes[a], derive_seed(trial * 10 + k, a), 3.0));
    const ParamSet got = federation::aggregate(locals, alpha);

    long total = 0;
    for (long n : counts) total += n;
    for (std::size_t a = 0; a < shapes.size(); ++a) {
      const std::string name = "p" + std::to_string(a);
      const Tensor& g = got.at(name);
      for (std::size_t i = 0; i < g.size(); ++i) {
        double expect = 0;
        for (int k = 0; k < K; ++k) expect += double(counts[k]) / double(total) * locals[k].at(name)[i];
        worst = std::max(worst, std::abs(g[i] - expect));
      }
    }
  }
  return {worst < kAggregateTol && worst_sum < kWeightSumTol,
          "20 parameter sets, max |aggregate - oracle| " + fmt("%.2e", worst) + ", max |sum alpha - 1| " +
              fmt("%.2e", worst_sum)};
}

// ---- 3 ---------------------------------------------------------------------
std::vector<Tensor> phantom_tensors(const prior::ModelConfig& c, int site, int subjects, int resolution,
                                    std::uint64_t seed) {
  data::PhantomSetOptions o;
  o.site = site;
  o.n_subjects = subjects;
  o.resolution = resolution;
  o.style = data::preset_style(site);
  o.seed = seed;
  const auto set = data::make_phantom_set(o);
  std::vector<Tensor> out;
  for (std::size_t i : set.manifest.indices(data::Split::kTrain))
    out.push_back(training::image_to_tensor(c, set.images[i]));
  return out;
}

Outcome single_site_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  prior::ModelConfig c;
  c.num_sites = 1;
  c.latent_dim = 8;
  c.mapper_layers = 4;
  c.synth_layers = 4;  // 32x32
  c.channel_base = 4;
  c.channel_max = 8;
  training::TrainConfig t;
  t.local_epochs = 2;
  t.batch_size = 8;
  t.schedule = training::equal_schedule(c, 3);
  const auto images = phantom_tensors(c, 0, 22, 32, 3);

  auto state = federation::make_federation(c, t, {images}, 13);
  federation::FederationOptions opts;
  opts.rounds = 3;
  const auto fed = federation::run_federation(state, opts);
  const auto stored = io::decode_archive(io::encode_archive(fed.checkpoints.back()));

  std::mt19937_64 rng(derive_seed(13, 0));
  const ParamSet g0 = prior::init_generator(c, rng);
  auto site = training::make_site(c, t, 0, images, derive_seed(13, 1));
  const auto central = training::train_centralized(c, t, site, g0, 6);
  federation::FederationState central_state = state;
  central_state.generator = central.generator;
  central_state.sites[0] = site;
  const auto central_stored = io::decode_archive(io::encode_archive(federation::make_checkpoint(central_state)));

  const bool same_names = same_structure(stored.arrays, central_stored.arrays);
  const double diff = same_names ? max_abs_diff(stored.arrays, central_stored.arrays) : INFINITY;
  const double secs = seconds_since(t0);
  return {same_names && diff < kEquivalenceTol && secs < 300.0,
          "K=1, L=3, I=2 vs 6 centralized epochs at 32x32: max abs checkpoint diff " + fmt("%.2e", diff) + " over " +
              std::to_string(stored.arrays.size()) + " arrays, " + fmt("%.1f", secs) + " s"};
}

// ---- 4 ---------------------------------------------------------------------
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Features sample_of(const Tensor& images, int n) {
  const int C = images.dim(1), H = images.dim(2), W = images.dim(3);
  Features f(C, Map(H, std::vector<double>(W)));
  for (int ch = 0; ch < C; ++ch)
    for (int r = 0; r < H; ++r)
      for (int col = 0; col < W; ++col) f[ch][r][col] = images[((std::size_t(n) * C + ch) * H + r) * W + col];
  return f;
}

double fd_input_grad_sq(const prior::ModelConfig& c, const ParamSet& d, Features x, const prior::Stage& s) {
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
        total += std::pow((up - down) / (2 * h), 2);
      }
  return total;
}

ParamSet jittered(ParamSet p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.1);
  for (auto& [name, t] : p.entries())
    for (auto& v : t.values()) v += n(rng);
  return p;
}

Outcome loss_oracles() {
  prior::ModelConfig c;
  c.latent_dim = 4;
  c.num_sites = 2;
  c.mapper_layers = 2;
  c.synth_layers = 2;  // 8x8
  c.channel_base = 2;
  c.channel_max = 3;
  const double delta = 10.0;
  double worst_g = 0, worst_d = 0, worst_r1 = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::mt19937_64 rng(derive_seed(40, seed));
    const ParamSet g = jittered(prior::init_generator(c, rng), derive_seed(41, seed));
    const ParamSet d = jittered(prior::init_discriminator(c, rng), derive_seed(42, seed));
    const int N = 3;
    const auto lat = training::sample_latents(c, int(seed % 2), N, rng);
    const Tensor reals = random_tensor({N, 2, 8, 8}, derive_seed(43, seed));
    const prior::Stage s = prior::full_stage(c);

    double lg = 0, ld = 0;
    for (int n = 0; n < N; ++n) {
      std::vector<double> input(lat.z.data() + n * c.latent_dim, lat.z.data() + (n + 1) * c.latent_dim);
      input.insert(input.end(), lat.v.data() + n * c.num_sites, lat.v.data() + (n + 1) * c.num_sites);
      const auto fake = reference_synthesizer(c, g, reference_mapper(c, g, input), lat.noise, n, s);
      const double dfake = reference_discriminator(c, d, fake, s);
      const double dreal = reference_discriminator(c, d, sample_of(reals, n), s);
      lg += -std::log(sigmoid(dfake)) / N;
      ld += (-std::log(1 - sigmoid(dfake)) - std::log(sigmoid(dreal)) +
             delta / 2 * fd_input_grad_sq(c, d, sample_of(reals, n), s)) /
            N;
    }
    const double got_g = training::generator_loss(c, g, d, lat, s, false).loss;
    const double got_d = training::discriminator_loss(c, d, g, reals, lat, delta, s, false).loss;
    worst_g = std::max(worst_g, std::abs(got_g - lg) / std::max(1.0, std::abs(lg)));
    worst_d = std::max(worst_d, std::abs(got_d - ld) / std::max(1.0, std::abs(ld)));

    // R1 parameter gradient against central differences of the penalty.
    const auto r1 = training::r1_penalty(c, d, reals, delta, s, true);
    ParamSet dir = d;
    for (auto& [name, t] : dir.entries()) t = random_tensor(t.shape(), derive_seed(44 + seed, t.size()));
    double analytic = 0;
    for (const auto& [name, t] : dir.entries()) analytic += testing::dot(r1.grads.at(name), t);
    const double h = 1e-5;
    auto shifted = [&](double step) {
      ParamSet p = d;
      for (auto& [name, t] : p.entries()) {
        const Tensor& u = dir.at(name);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] += step * u[i];
      }
      return training::r1_penalty(c, p, reals, delta, s, false).penalty;
    };
    const double numeric = (shifted(h) - shifted(-h)) / (2 * h);
    worst_r1 = std::max(worst_r1, relative_error(analytic, numeric));
  }
  return {worst_g < kLossTol && worst_d < kLossTol && worst_r1 < kR1GradTol,
          "3 tiny networks: generator loss err " + fmt("%.2e", worst_g) + ", discriminator loss err " +
              fmt("%.2e", worst_d) + ", R1 gradient rel err " + fmt("%.2e", worst_r1) + " on 8x8"};
}

// ---- 5 ---------------------------------------------------------------------
Outcome adain_moments() {
  double worst_mean = 0, worst_std = 0;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 50; ++trial) {
    const int N = 1 + trial % 3, C = 1 + trial % 5, H = 4 << (trial % 4);
    const Tensor x = random_tensor({N, C, H, H}, derive_seed(50, trial), 0.1 + trial);
    std::vector<double> gamma(C), beta(C);
    for (int ch = 0; ch < C; ++ch) {
      gamma[ch] = 2 * n(rng);
      beta[ch] = 3 * n(rng);
    }
    const Tensor y = prior::adain(x, gamma, beta);
    const int P = H * H;
    for (int s = 0; s < N * C; ++s) {
      double mu = 0, var = 0;
      for (int p = 0; p < P; ++p) mu += y[std::size_t(s) * P + p];
      mu /= P;
      for (int p = 0; p < P; ++p) var += std::pow(y[std::size_t(s) * P + p] - mu, 2);
      worst_mean = std::max(worst_mean, std::abs(mu - beta[s % C]));
      worst_std = std::max(worst_std, std::abs(std::sqrt(var / P) - std::abs(gamma[s % C])));
    }
  }
  return {worst_mean < kMomentTol && worst_std < kMomentTol,
          "50 random inputs: max |mean - beta| " + fmt("%.2e", worst_mean) + ", max |std - |gamma|| " +
              fmt("%.2e", worst_std)};
}

// ---- end-to-end experiment (6-11) ------------------------------------------
struct TestCase {
  int site;
  ComplexImage reference;
};

struct Experiment {
  std::vector<std::vector<Tensor>> train_images;
  std::vector<TestCase> tests;
  std::vector<std::vector<std::string>> broadcast_manifests;
  prior::ModelConfig model;
  ParamSet generator;
  double train_seconds = 0;
};

prior::ModelConfig e2e_model(bool site_conditioned) {
  prior::ModelConfig c;
  c.num_sites = kSites;
  c.site_conditioned = site_conditioned;
  c.latent_dim = 32;
  c.mapper_layers = 8;
  c.synth_layers = 5;  // 64x64
  c.channel_base = 4;
  c.channel_max = 16;
  c.image_channels = 1;
  return c;
}

Experiment train_experiment(bool site_conditioned) {
  Experiment e;
  e.model = e2e_model(site_conditioned);
  for (int k = 0; k < kSites; ++k) {
    data::PhantomSetOptions o;
    o.site = k;
    o.n_subjects = kSubjects;
    o.slices_per_subject = kSlices;
    o.style = data::preset_style(k);
    o.seed = kDataSeed;
    const auto set = data::make_phantom_set(o);
    std::vector<Tensor> train;
    for (std::size_t i = 0; i < set.images.size(); ++i) {
      const auto& entry = set.manifest.entries[i];
      if (entry.split == data::Split::kTrain) train.push_back(training::image_to_tensor(e.model, set.images[i]));
      // Central slice of every test subject.
      if (entry.split == data::Split::kTest && entry.slice == kSlices / 2) e.tests.push_back({k, set.images[i]});
    }
    e.train_images.push_back(std::move(train));
  }
  training::TrainConfig t;
  t.local_epochs = 1;  // one pass over the site's 200 slices per round
  t.batch_size = 16;
  t.schedule = training::equal_schedule(e.model, kRounds);

  const auto t0 = std::chrono::steady_clock::now();
  auto state = federation::make_federation(e.model, t, e.train_images, kFederationSeed);
  federation::FederationOptions opts;
  opts.rounds = kRounds;
  opts.checkpoint_interval = kRounds;
  opts.on_round = [](const federation::RoundReport& r) {
    if (r.round % 10 == 0) std::cerr << "  " << federation::format_round(r) << "\n";
  };
  auto result = federation::run_federation(state, opts);
  e.train_seconds = seconds_since(t0);
  e.broadcast_manifests = std::move(result.broadcast_manifests);
  // Reload from the serialized checkpoint, as a deployment would.
  const auto ckpt = io::decode_archive(io::encode_archive(result.checkpoints.back()));
  e.model = federation::checkpoint_model(ckpt);
  e.generator = federation::checkpoint_generator(ckpt);
  return e;
}

// Inference settings. η is chosen for the orthonormal FFT scaling used here
// by sweeping the validation split.
inference::InferenceConfig e2e_inference(std::uint64_t seed, int iterations = 1000) {
  inference::InferenceConfig ic;
  ic.lr = 1e-2;
  ic.iterations = iterations;
  ic.tv_weight = 3e-3;
  ic.seed = seed;
  return ic;
}

struct OperatorSpec {
  double rate;
  Density density;
  std::string label() const { return "R" + fmt("%.0f", rate) + " " + imaging::density_name(density); }
};

struct CaseResult {
  double psnr = 0, zf = 0;
  double dc_error = 0;
};

imaging::KSpaceAcquisition acquire(const TestCase& tc, std::size_t index, const OperatorSpec& spec) {
  const auto seed = derive_seed(700 + std::uint64_t(spec.rate) * 10 + std::uint64_t(spec.density), index);
  imaging::ImagingOperator op(imaging::make_mask(tc.reference.height, tc.reference.width, spec.rate, spec.density,
                                                 kCalibration, seed));
  return data::simulate_acquisition(tc.reference, op, std::nullopt, 0);
}

double dc_error(const ComplexImage& image, const imaging::KSpaceAcquisition& y) {
  const auto enforced = inference::enforce_data_consistency(image, y);
  const auto k = y.op.coil_kspace(enforced);
  double worst = 0;
  const std::size_t plane = std::size_t(k.height) * k.width;
  for (int coil = 0; coil < k.count; ++coil)
    for (std::size_t p = 0; p < plane; ++p)
      if (y.op.mask().pattern[p]) worst = std::max(worst, std::abs(k.values[coil * plane + p] - y.samples.values[coil * plane + p]));
  return worst;
}

struct OperatorSummary {
  double psnr = 0, zf = 0;
  double dc_error = 0;
  int cases = 0;
};

OperatorSummary reconstruct_all(const Experiment& e, const OperatorSpec& spec) {
  OperatorSummary s;
  for (std::size_t i = 0; i < e.tests.size(); ++i) {
    const auto& tc = e.tests[i];
    const auto y = acquire(tc, i, spec);
    const int site = e.model.site_conditioned ? tc.site : 0;
    const auto rec = inference::adapt_and_reconstruct(e.model, e.generator, site, y, e2e_inference(derive_seed(77, i)));
    s.psnr += evaluation::compare(tc.reference, rec.image).psnr_db;
    s.zf += evaluation::compare(tc.reference, imaging::adjoint(y.op, y)).psnr_db;
    s.dc_error = std::max(s.dc_error, dc_error(rec.image, y));
    ++s.cases;
  }
  s.psnr /= s.cases;
  s.zf /= s.cases;
  return s;
}

class Suite {
 public:
  const Experiment& site_indexed() {
    if (!indexed_) {
      std::cerr << "training the site-indexed prior\n";
      indexed_ = train_experiment(true);
    }
    return *indexed_;
  }
  const Experiment& conventional() {
    if (!conventional_) {
      std::cerr << "training the conventional-mapper prior\n";
      conventional_ = train_experiment(false);
    }
    return *conventional_;
  }
  const OperatorSummary& summary(const OperatorSpec& spec) {
    const auto key = spec.label();
    if (!summaries_.count(key)) summaries_[key] = reconstruct_all(site_indexed(), spec);
    return summaries_.at(key);
  }
  std::optional<Experiment> indexed_, conventional_;
  std::map<std::string, OperatorSummary> summaries_;
};

const OperatorSpec kR3VD{3.0, Density::kVariable};
const OperatorSpec kR6VD{6.0, Density::kVariable};
const OperatorSpec kR3UD{3.0, Density::kUniform};

// ---- 6 ---------------------------------------------------------------------
Outcome inference_descent(Suite& suite) {
  const auto& e = suite.site_indexed();
  const auto t0 = std::chrono::steady_clock::now();
  int descending = 0;
  double worst_ratio = 0;
  const int cases = 10;
  for (int i = 0; i < cases; ++i) {
    const auto& tc = e.tests[i % e.tests.size()];
    const auto y = acquire(tc, 100 + i, kR3VD);
    const auto rec = inference::adapt_and_reconstruct(e.model, e.generator, tc.site, y,
                                                      e2e_inference(derive_seed(66, i), 200));
    double first = 0, last = 0;
    for (int k = 0; k < 10; ++k) {
      first += rec.trace[k].total / 10;
      last += rec.trace[rec.trace.size() - 10 + k].total / 10;
    }
    descending += last < first;
    worst_ratio = std::max(worst_ratio, last / first);
  }
  const double secs = seconds_since(t0);
  return {descending == cases && secs < 600.0,
          std::to_string(descending) + "/" + std::to_string(cases) +
              " cases descend at E=200, worst last-10/first-10 ratio " + fmt("%.3f", worst_ratio) + ", " +
              fmt("%.0f", secs) + " s"};
}

// ---- 7 ---------------------------------------------------------------------
Outcome quality_ordering(Suite& suite) {
  const auto& e = suite.site_indexed();
  const auto t0 = std::chrono::steady_clock::now();
  const auto& s = suite.summary(kR3VD);
  const double total = e.train_seconds + seconds_since(t0);
  return {s.psnr - s.zf >= kQualityMarginDb && total < 7200.0,
          "R3 variable over " + std::to_string(s.cases) + " test slices: fedgimp " + fmt("%.2f", s.psnr) +
              " dB vs zero-filled " + fmt("%.2f", s.zf) + " dB (margin " + fmt("%+.2f", s.psnr - s.zf) +
              " dB), training " + fmt("%.0f", e.train_seconds) + " s"};
}

// ---- 8 ---------------------------------------------------------------------
Outcome operator_shift(Suite& suite) {
  std::ostringstream detail;
  bool pass = true;
  for (const auto& spec : {kR6VD, kR3UD}) {
    const auto& s = suite.summary(spec);
    pass &= s.psnr - s.zf >= kShiftMarginDb;
    detail << spec.label() << ": " << fmt("%.2f", s.psnr) << " vs " << fmt("%.2f", s.zf) << " dB ("
           << fmt("%+.2f", s.psnr - s.zf) << ")  ";
  }
  detail << "same checkpoint, no retraining";
  return {pass, detail.str()};
}

// ---- 9 ---------------------------------------------------------------------
Outcome mapper_ablation(Suite& suite) {
  const double indexed = suite.summary(kR3VD).psnr;
  const auto conventional = reconstruct_all(suite.conventional(), kR3VD);
  return {indexed >= conventional.psnr - kAblationSlackDb,
          "R3 variable mean PSNR: site-indexed " + fmt("%.2f", indexed) + " dB, conventional " +
              fmt("%.2f", conventional.psnr) + " dB (difference " + fmt("%+.2f", indexed - conventional.psnr) +
              " dB)"};
}

// ---- 10 --------------------------------------------------------------------
Outcome privacy(Suite& suite) {
  const auto& e = suite.site_indexed();
  long discriminator_arrays = 0, arrays = 0;
  for (const auto& manifest : e.broadcast_manifests)
    for (const auto& name : manifest) {
      ++arrays;
      discriminator_arrays += name.rfind("discriminator/", 0) == 0;
    }
  const bool all_rounds = int(e.broadcast_manifests.size()) == kRounds;
  return {all_rounds && arrays > 0 && discriminator_arrays == 0,
          std::to_string(e.broadcast_manifests.size()) + " broadcasts, " + std::to_string(arrays) +
              " arrays, discriminator arrays: " + std::to_string(discriminator_arrays)};
}

// ---- 11 --------------------------------------------------------------------
// Gated on single-coil acquisitions: the experiment's reconstructions plus
// noisy acquisitions of arbitrary images. With several coils the overwritten
// coil k-spaces are combined into one image, which in general cannot match
// every coil's samples at once; that residual is reported, not gated.
Outcome strict_dc(Suite& suite) {
  double worst = 0;
  int cases = 0;
  for (const auto& spec : {kR3VD, kR6VD, kR3UD}) {
    const auto& s = suite.summary(spec);
    worst = std::max(worst, s.dc_error);
    cases += s.cases;
  }
  const auto& e = suite.site_indexed();
  double multi = 0;
  for (std::size_t i = 0; i < e.tests.size(); ++i) {
    const auto& ref = e.tests[i].reference;
    const int H = ref.height, W = ref.width;
    imaging::ImagingOperator single(imaging::make_mask(H, W, 4.0, Density::kUniform, kCalibration, derive_seed(111, i)));
    const auto y = data::simulate_acquisition(ref, single, 30.0, derive_seed(112, i));
    worst = std::max(worst, dc_error(random_image(H, W, derive_seed(113, i)), y));
    ++cases;

    imaging::ImagingOperator coils(imaging::make_mask(H, W, 4.0, Density::kVariable, kCalibration, derive_seed(114, i)),
                                   imaging::make_synthetic_coils(H, W, 5, derive_seed(110, i)));
    const auto yc = data::simulate_acquisition(ref, coils, 30.0, derive_seed(115, i));
    multi = std::max(multi, dc_error(random_image(H, W, derive_seed(116, i)), yc));
  }
  return {worst < kDcTol, std::to_string(cases) + " single-coil cases, max |k[acquired] - y| " + fmt("%.2e", worst) +
                              " (5-coil combined residual, not gated: " + fmt("%.2e", multi) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  std::vector<int> only;
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  Suite suite;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"operator adjoint and round trip", operator_correctness},
      {"aggregation oracle", aggregation_oracle},
      {"single-site equivalence", single_site_equivalence},
      {"loss transcription oracles", loss_oracles},
      {"AdaIN moments", adain_moments},
      {"inference descent", [&] { return inference_descent(suite); }},
      {"end-to-end quality ordering", [&] { return quality_ordering(suite); }},
      {"operator-shift robustness", [&] { return operator_shift(suite); }},
      {"mapper ablation", [&] { return mapper_ablation(suite); }},
      {"privacy discipline", [&] { return privacy(suite); }},
      {"strict data consistency", [&] { return strict_dc(suite); }},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& ex) {
      o = {false, std::string("exception: ") + ex.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << o.detail
              << std::endl;
  }
  return failed ? 1 : 0;
}
