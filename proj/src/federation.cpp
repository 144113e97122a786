#include "fedgimp/federation.hpp"

#include <chrono>
#include <cstdio>
#include <exception>
#include <numeric>
#include <random>
#include <sstream>

#include "fedgimp/random.hpp"

namespace fedgimp::federation {

namespace {

const std::string kDiscriminatorPrefix = "discriminator/";
const std::string kOptimizerPrefix = "optimizer/";

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

std::string site_tag(int k) { return "site" + std::to_string(k); }

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

void set_rng_state(std::mt19937_64& rng, const std::string& state) {
  std::istringstream in(state);
  in >> rng;
  if (!in) throw Error(ErrorCode::kConfigError, "corrupt RNG state in checkpoint");
}

void store_adam(const Adam& opt, const std::string& prefix, ParamSet& arrays, nlohmann::json& steps) {
  for (const auto& [name, slot] : opt.slots()) {
    arrays.add(prefix + name + "/m", slot.m);
    arrays.add(prefix + name + "/v", slot.v);
    steps[prefix + name] = slot.steps;
  }
}

Adam load_adam(const AdamConfig& config, const std::string& prefix, const ParamSet& arrays,
               const nlohmann::json& steps) {
  Adam opt(config);
  for (auto it = steps.begin(); it != steps.end(); ++it) {
    if (!starts_with(it.key(), prefix)) continue;
    const std::string name = it.key().substr(prefix.size());
    Adam::Slot slot;
    slot.m = arrays.at(it.key() + "/m");
    slot.v = arrays.at(it.key() + "/v");
    slot.steps = it.value().get<long>();
    opt.slots()[name] = std::move(slot);
  }
  return opt;
}

SiteSummary summarize(int site, const std::vector<training::EpochLoss>& trace) {
  SiteSummary s{site, 0.0, 0.0};
  if (trace.empty()) return s;
  for (const auto& e : trace) {
    s.generator_loss += e.generator;
    s.discriminator_loss += e.discriminator;
  }
  s.generator_loss /= trace.size();
  s.discriminator_loss /= trace.size();
  return s;
}

}  // namespace

std::vector<double> compute_site_weights(const std::vector<long>& sample_counts) {
  if (sample_counts.empty()) throw Error(ErrorCode::kInvalidArgument, "no sites");
  long total = 0;
  for (long n : sample_counts) {
    if (n < 0) throw Error(ErrorCode::kInvalidArgument, "negative sample count");
    total += n;
  }
  if (total == 0) throw Error(ErrorCode::kInvalidArgument, "all sample counts are zero");
  std::vector<double> alpha;
  alpha.reserve(sample_counts.size());
  for (long n : sample_counts) alpha.push_back(double(n) / double(total));
  return alpha;
}

ParamSet aggregate(const std::vector<ParamSet>& locals, const std::vector<double>& alpha) {
  if (locals.empty()) throw Error(ErrorCode::kInvalidArgument, "nothing to aggregate");
  if (locals.size() != alpha.size()) {
    throw Error(ErrorCode::kIncompatibleModels, std::to_string(locals.size()) + " models but " +
                                                    std::to_string(alpha.size()) + " weights");
  }
  for (std::size_t k = 1; k < locals.size(); ++k) {
    if (!same_structure(locals[0], locals[k])) {
      throw Error(ErrorCode::kIncompatibleModels, "site " + std::to_string(k) + " parameters differ in structure");
    }
  }
  ParamSet global = locals[0];
  for (std::size_t e = 0; e < global.entries().size(); ++e) {
    Tensor& out = global.entries()[e].second;
    for (std::size_t i = 0; i < out.size(); ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < locals.size(); ++k) acc += alpha[k] * locals[k].entries()[e].second[i];
      out[i] = acc;
    }
  }
  return global;
}

Payload make_payload(const ParamSet& generator, const std::string& kind, int round) {
  for (const auto& name : generator.names()) {
    if (!starts_with(name, "mapper/") && !starts_with(name, "synthesizer/")) {
      throw Error(ErrorCode::kInvalidArgument, "refusing to transmit '" + name + "'");
    }
  }
  io::Archive archive;
  archive.metadata = {{"kind", kind}, {"round", round}};
  archive.arrays = generator;
  Payload p;
  p.bytes = io::encode_archive(archive);
  p.manifest = io::archive_manifest(p.bytes);
  return p;
}

ParamSet open_payload(const Payload& payload) { return io::decode_archive(payload.bytes).arrays; }

FederationState make_federation(const prior::ModelConfig& model, const training::TrainConfig& train,
                                std::vector<std::vector<Tensor>> site_images, std::uint64_t seed) {
  model.validate();
  train.validate();
  if (site_images.empty()) throw Error(ErrorCode::kInvalidArgument, "federation needs at least one site");
  if (model.site_conditioned && model.num_sites != int(site_images.size())) {
    throw Error(ErrorCode::kConfigError, "model has " + std::to_string(model.num_sites) + " site slots but " +
                                             std::to_string(site_images.size()) + " sites were given");
  }
  FederationState s;
  s.model = model;
  s.train = train;
  std::mt19937_64 rng(derive_seed(seed, 0));
  s.generator = prior::init_generator(model, rng);
  std::vector<long> counts;
  for (std::size_t k = 0; k < site_images.size(); ++k) {
    counts.push_back(long(site_images[k].size()));
    s.sites.push_back(training::make_site(model, train, int(k), std::move(site_images[k]),
                                          derive_seed(seed, int(k) + 1)));
  }
  s.weights = compute_site_weights(counts);
  return s;
}

std::string format_round(const RoundReport& r) {
  char head[96];
  std::snprintf(head, sizeof head, "round %d  res %d alpha %.2f", r.round + 1, r.stage.resolution(), r.stage.alpha);
  std::string line = head;
  for (const auto& s : r.sites) {
    char part[96];
    std::snprintf(part, sizeof part, "  site%d G %.4f D %.4f", s.site, s.generator_loss, s.discriminator_loss);
    line += part;
  }
  char tail[32];
  std::snprintf(tail, sizeof tail, "  %.2fs", r.seconds);
  return line + tail;
}

std::string loss_csv(const std::vector<RoundReport>& reports, bool header) {
  std::ostringstream out;
  out.precision(17);
  if (header) out << "round,site,epoch,role,loss\n";
  for (const auto& r : reports)
    for (std::size_t k = 0; k < r.traces.size(); ++k)
      for (std::size_t e = 0; e < r.traces[k].size(); ++e) {
        out << r.round << ',' << k << ',' << e << ",G," << r.traces[k][e].generator << '\n';
        out << r.round << ',' << k << ',' << e << ",D," << r.traces[k][e].discriminator << '\n';
      }
  return out.str();
}

std::string checkpoint_name(int round) {
  char name[48];
  std::snprintf(name, sizeof name, "round_%04d.ckpt", round);
  return name;
}

FederationResult run_federation(FederationState& state, const FederationOptions& options) {
  if (state.sites.empty()) throw Error(ErrorCode::kInvalidArgument, "federation has no sites");
  if (options.checkpoint_interval < 1) throw Error(ErrorCode::kConfigError, "checkpoint_interval must be >= 1");
  const int K = int(state.sites.size());
  FederationResult result;

  for (int l = state.round; l < options.rounds; ++l) {
    const auto t0 = std::chrono::steady_clock::now();
    const Payload broadcast = make_payload(state.generator, "broadcast", l);
    result.broadcast_manifests.push_back(broadcast.manifest);

    std::vector<Payload> uploads(K);
    std::vector<std::vector<training::EpochLoss>> traces(K);
    std::vector<std::exception_ptr> failures(K);

    auto work = [&](int k) {
      try {
        if (options.before_local_update) options.before_local_update(k, l);
        const ParamSet received = open_payload(broadcast);
        auto update = training::local_update(state.model, state.train, state.sites[k], received, l);
        traces[k] = std::move(update.trace);
        uploads[k] = make_payload(update.generator, "upload", l);
      } catch (...) {
        failures[k] = std::current_exception();
      }
    };
    if (options.parallel_sites) {
#pragma omp parallel for schedule(dynamic, 1)
      for (int k = 0; k < K; ++k) work(k);
    } else {
      for (int k = 0; k < K; ++k) work(k);
    }

    for (int k = 0; k < K; ++k) {
      if (!failures[k]) continue;
      try {
        std::rethrow_exception(failures[k]);
      } catch (const std::exception& e) {
        throw SiteFailure(k, l, e.what());
      }
    }

    std::vector<ParamSet> locals;
    locals.reserve(K);
    for (const auto& p : uploads) locals.push_back(open_payload(p));
    state.generator = aggregate(locals, state.weights);
    state.round = l + 1;

    RoundReport report;
    report.round = l;
    report.stage = training::progressive_stage(l, state.train.schedule, state.model);
    for (int k = 0; k < K; ++k) report.sites.push_back(summarize(k, traces[k]));
    report.traces = std::move(traces);
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (options.on_round) options.on_round(report);
    result.reports.push_back(std::move(report));

    if ((l + 1) % options.checkpoint_interval == 0 || l + 1 == options.rounds) {
      io::Archive ckpt = make_checkpoint(state);
      if (options.checkpoint_dir.empty()) {
        result.checkpoints.push_back(std::move(ckpt));
      } else {
        const auto path = options.checkpoint_dir / checkpoint_name(l + 1);
        io::write_archive(path, ckpt);
        result.checkpoint_files.push_back(path);
      }
    }
  }
  result.generator = state.generator;
  return result;
}

io::Archive make_checkpoint(const FederationState& state) {
  io::Archive a;
  a.arrays = state.generator;
  nlohmann::json steps = nlohmann::json::object();
  nlohmann::json rngs = nlohmann::json::array();
  for (const auto& site : state.sites) {
    const std::string tag = site_tag(site.site_index);
    for (const auto& [name, value] : site.discriminator.entries()) {
      a.arrays.add(kDiscriminatorPrefix + tag + "/" + name.substr(kDiscriminatorPrefix.size()), value);
    }
    store_adam(site.generator_opt, kOptimizerPrefix + tag + "/generator/", a.arrays, steps);
    store_adam(site.discriminator_opt, kOptimizerPrefix + tag + "/discriminator/", a.arrays, steps);
    rngs.push_back(rng_state(site.rng));
  }

  const prior::ModelConfig& c = state.model;
  nlohmann::json channels = nlohmann::json::array();
  for (int i = 1; i <= c.synth_layers; ++i) channels.push_back(c.channels_at(i));
  const prior::Stage stage =
      training::progressive_stage(std::max(state.round - 1, 0), state.train.schedule, state.model);
  a.metadata = {
      {"kind", "checkpoint"},
      {"round", state.round},
      {"J", c.latent_dim},
      {"K", int(state.sites.size())},
      {"L_M", c.mapper_layers},
      {"L_S", c.synth_layers},
      {"L_D", c.synth_layers},
      {"channel_schedule", channels},
      {"progressive_stage", {{"resolution", stage.resolution()}, {"alpha", stage.alpha}}},
      {"model", prior::to_json(c)},
      {"train", training::to_json(state.train)},
      {"site_weights", state.weights},
      {"optimizer_steps", steps},
      {"rng_states", rngs},
  };
  return a;
}

prior::ModelConfig checkpoint_model(const io::Archive& archive) {
  if (!archive.metadata.contains("model")) {
    throw Error(ErrorCode::kConfigError, "archive is not a model checkpoint");
  }
  return prior::model_config_from_json(archive.metadata.at("model"));
}

ParamSet checkpoint_generator(const io::Archive& archive) {
  ParamSet g = archive.arrays.subset("mapper/");
  g.merge(archive.arrays.subset("synthesizer/"));
  if (g.empty()) throw Error(ErrorCode::kConfigError, "checkpoint holds no generator parameters");
  return g;
}

FederationState restore_checkpoint(const io::Archive& archive, std::vector<std::vector<Tensor>> site_images) {
  FederationState s;
  s.model = checkpoint_model(archive);
  s.train = training::train_config_from_json(archive.metadata.at("train"));
  s.generator = checkpoint_generator(archive);
  s.round = archive.metadata.at("round").get<int>();
  s.weights = archive.metadata.at("site_weights").get<std::vector<double>>();
  const int K = archive.metadata.at("K").get<int>();
  if (int(site_images.size()) != K) {
    throw Error(ErrorCode::kConfigError, "checkpoint has " + std::to_string(K) + " sites but " +
                                             std::to_string(site_images.size()) + " datasets were given");
  }
  const auto& steps = archive.metadata.at("optimizer_steps");
  const auto& rngs = archive.metadata.at("rng_states");
  for (int k = 0; k < K; ++k) {
    training::SiteState site;
    site.site_index = k;
    site.images = std::move(site_images[k]);
    const std::string prefix = kDiscriminatorPrefix + site_tag(k) + "/";
    const ParamSet stored = archive.arrays.subset(prefix);
    for (const auto& [name, value] : stored.entries()) {
      site.discriminator.add(kDiscriminatorPrefix + name.substr(prefix.size()), value);
    }
    site.generator_opt = load_adam(s.train.adam(), kOptimizerPrefix + site_tag(k) + "/generator/", archive.arrays, steps);
    site.discriminator_opt =
        load_adam(s.train.adam(), kOptimizerPrefix + site_tag(k) + "/discriminator/", archive.arrays, steps);
    set_rng_state(site.rng, rngs.at(k).get<std::string>());
    s.sites.push_back(std::move(site));
  }
  return s;
}

}  // namespace fedgimp::federation
