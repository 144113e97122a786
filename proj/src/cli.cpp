#include "fedgimp/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fedgimp/data.hpp"
#include "fedgimp/evaluation.hpp"
#include "fedgimp/federation.hpp"
#include "fedgimp/inference.hpp"
#include "fedgimp/io.hpp"
#include "fedgimp/random.hpp"
#include "fedgimp/training.hpp"

namespace fedgimp::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfigError:
    case ErrorCode::kNotFound:
    case ErrorCode::kEmptyInput:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kInvalidRate:
    case ErrorCode::kInfeasibleMask:
      return kExitConfig;
    default:
      return kExitRuntime;
  }
}

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  double rate = 0.0;
  std::string density;
  int site = 0;
  std::string checkpoint;
  CLI::Option* config_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* rate_opt = nullptr;
  CLI::Option* density_opt = nullptr;
  CLI::Option* site_opt = nullptr;
  CLI::Option* checkpoint_opt = nullptr;
};

void add_common(CLI::App* cmd, Flags& f) {
  f.config_opt = cmd->add_option("--config", f.config, "JSON config file");
  f.out_opt = cmd->add_option("--out", f.out, "output directory");
  f.seed_opt = cmd->add_option("--seed", f.seed, "random seed");
  f.rate_opt = cmd->add_option("--rate", f.rate, "acceleration rate R");
  f.density_opt = cmd->add_option("--density", f.density, "sampling density: variable|uniform");
  f.site_opt = cmd->add_option("--site", f.site, "site index");
  f.checkpoint_opt = cmd->add_option("--checkpoint", f.checkpoint, "checkpoint file");
}

json load_config(const Flags& f) {
  if (!f.config_opt->count()) return json::object();
  json j = io::read_json(f.config);
  if (!j.is_object()) throw Error(ErrorCode::kConfigError, f.config + ": top level must be an object");
  return j;
}

// Flags beat config values.
void apply_common(const Flags& f, json& c) {
  if (f.out_opt->count()) c["out"] = f.out;
  if (f.seed_opt->count()) c["seed"] = f.seed;
  if (f.rate_opt->count()) c["rate"] = f.rate;
  if (f.density_opt->count()) c["density"] = imaging::density_name(imaging::parse_density(f.density));
  if (f.site_opt->count()) c["site"] = f.site;
  if (f.checkpoint_opt->count()) c["checkpoint"] = f.checkpoint;
}

template <typename T>
T get(const json& c, const std::string& key, T fallback) {
  if (!c.contains(key) || c.at(key).is_null()) return fallback;
  try {
    return c.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfigError, "config key '" + key + "': " + e.what());
  }
}

std::string require_string(const json& c, const std::string& key) {
  if (!c.contains(key)) throw Error(ErrorCode::kConfigError, "missing required setting '" + key + "'");
  return get<std::string>(c, key, "");
}

fs::path out_dir(const json& c) { return fs::path(get<std::string>(c, "out", "out")); }

void persist(const fs::path& dir, const std::string& command, const json& resolved) {
  io::write_json(dir / (command + ".resolved.json"), resolved);
}

// ---- make-data -----------------------------------------------------------

int cmd_make_data(const Flags& f, std::ostream& out) {
  json c = load_config(f);
  apply_common(f, c);
  c["out"] = out_dir(c).string();
  c["seed"] = get<std::uint64_t>(c, "seed", 0);
  c["resolution"] = get<int>(c, "resolution", 64);
  c["num_sites"] = get<int>(c, "num_sites", 3);
  c["n_subjects"] = get<int>(c, "n_subjects", 55);
  c["slices_per_subject"] = get<int>(c, "slices_per_subject", 1);
  c["contrasts"] = get<std::vector<std::string>>(c, "contrasts", {"T1"});
  c["split_ratios"] = get<std::vector<int>>(c, "split_ratios", {40, 10, 5});
  c["phase"] = get<double>(c, "phase", 0.0);
  c["rate"] = get<double>(c, "rate", 3.0);
  c["density"] = get<std::string>(c, "density", "variable");
  c["calibration_lines"] = get<int>(c, "calibration_lines", 4);
  c["coils"] = get<int>(c, "coils", 1);
  if (!c.contains("sites")) c["sites"] = json::array();

  const auto ratios = c["split_ratios"].get<std::vector<int>>();
  if (ratios.size() != 3) throw Error(ErrorCode::kConfigError, "split_ratios needs three entries");
  const int K = c["num_sites"].get<int>();
  if (K < 1) throw Error(ErrorCode::kConfigError, "num_sites must be >= 1");

  const fs::path dir = out_dir(c);
  for (int k = 0; k < K; ++k) {
    const json site = k < int(c["sites"].size()) ? c["sites"][k] : json::object();
    data::PhantomSetOptions o;
    o.site = k;
    o.n_subjects = get<int>(site, "n_subjects", c["n_subjects"].get<int>());
    o.slices_per_subject = get<int>(site, "slices_per_subject", c["slices_per_subject"].get<int>());
    o.contrasts = get<std::vector<std::string>>(site, "contrasts", c["contrasts"].get<std::vector<std::string>>());
    o.resolution = c["resolution"].get<int>();
    o.style = data::preset_style(k);
    o.style.phase = c["phase"].get<double>();
    if (site.contains("style")) o.style = data::site_style_from_json(site.at("style"));
    o.ratios = data::SplitRatios{ratios[0], ratios[1], ratios[2]};
    o.test_forward_model = data::ForwardModelSpec{c["rate"].get<double>(),
                                                  imaging::parse_density(c["density"].get<std::string>()),
                                                  c["calibration_lines"].get<int>(), c["coils"].get<int>()};
    o.seed = c["seed"].get<std::uint64_t>();
    const auto set = data::make_phantom_set(o);
    const fs::path site_dir = dir / ("site" + std::to_string(k));
    data::write_phantom_set(site_dir, set);
    out << "site " << k << ": " << set.images.size() << " images -> " << (site_dir / "manifest.json").string()
        << "\n";
  }
  persist(dir, "make-data", c);
  return kExitOk;
}

// ---- train ---------------------------------------------------------------

std::vector<std::vector<Tensor>> load_site_images(const std::vector<std::string>& manifests,
                                                  const prior::ModelConfig& model) {
  std::vector<std::vector<Tensor>> sites;
  for (const auto& path : manifests) {
    const auto manifest = data::read_manifest(path);
    std::vector<Tensor> images;
    for (const auto& img : data::load_images(path, manifest, data::Split::kTrain)) {
      images.push_back(training::image_to_tensor(model, img));
    }
    if (images.empty()) throw Error(ErrorCode::kEmptyInput, path + " has no training images");
    sites.push_back(std::move(images));
  }
  return sites;
}

int cmd_train(const Flags& f, const std::string& resume, std::ostream& out) {
  json c = load_config(f);
  apply_common(f, c);
  if (!resume.empty()) c["resume"] = resume;
  c["out"] = out_dir(c).string();
  c["seed"] = get<std::uint64_t>(c, "seed", 0);
  c["rounds"] = get<int>(c, "rounds", 100);
  c["checkpoint_interval"] = get<int>(c, "checkpoint_interval", 10);
  c["parallel_sites"] = get<bool>(c, "parallel_sites", false);
  c["progressive"] = get<bool>(c, "progressive", true);
  if (!c.contains("manifests") || !c["manifests"].is_array() || c["manifests"].empty()) {
    throw Error(ErrorCode::kConfigError, "train needs a non-empty 'manifests' list");
  }
  const auto manifests = c["manifests"].get<std::vector<std::string>>();
  for (const auto& m : manifests) {
    if (!fs::exists(m)) throw Error(ErrorCode::kNotFound, m);
  }

  prior::ModelConfig model = prior::model_config_from_json(c.value("model", json::object()));
  if (model.site_conditioned) model.num_sites = int(manifests.size());
  model.validate();
  training::TrainConfig train = training::train_config_from_json(c.value("train", json::object()));
  const int rounds = c["rounds"].get<int>();
  if (train.schedule.empty() && c["progressive"].get<bool>()) train.schedule = training::equal_schedule(model, rounds);

  const fs::path dir = out_dir(c);
  auto site_images = load_site_images(manifests, model);

  federation::FederationState state;
  if (c.contains("resume")) {
    const auto archive = io::read_archive(c["resume"].get<std::string>());
    state = federation::restore_checkpoint(archive, std::move(site_images));
    model = state.model;
    train = state.train;
    out << "resuming at round " << state.round << "\n";
  } else {
    state = federation::make_federation(model, train, std::move(site_images), c["seed"].get<std::uint64_t>());
  }
  c["model"] = prior::to_json(model);
  c["train"] = training::to_json(train);
  persist(dir, "train", c);

  federation::FederationOptions options;
  options.rounds = rounds;
  options.checkpoint_interval = c["checkpoint_interval"].get<int>();
  options.checkpoint_dir = dir / "checkpoints";
  options.parallel_sites = c["parallel_sites"].get<bool>();
  options.on_round = [&out](const federation::RoundReport& r) { out << federation::format_round(r) << std::endl; };

  const auto result = federation::run_federation(state, options);
  const fs::path csv = dir / "loss.csv";
  if (c.contains("resume") && fs::exists(csv)) {
    std::ofstream append(csv, std::ios::app);
    append << federation::loss_csv(result.reports, false);
    if (!append) throw Error(ErrorCode::kIoError, "cannot append to " + csv.string());
  } else {
    io::write_file(csv, federation::loss_csv(result.reports));
  }
  for (const auto& p : result.checkpoint_files) out << "checkpoint " << p.string() << "\n";
  return kExitOk;
}

// ---- reconstruct ---------------------------------------------------------

struct Case {
  std::string id;
  std::optional<imaging::ComplexImage> reference;
  imaging::KSpaceAcquisition acquisition;
  int site = 0;
};

imaging::KSpaceAcquisition read_acquisition(const fs::path& dir) {
  imaging::ComplexStack samples = io::read_stack(dir / "kspace");
  imaging::SamplingMask mask = io::read_mask(dir / "mask.mask");
  std::optional<imaging::CoilSensitivities> coils;
  if (fs::exists(dir / "coils.json")) coils = imaging::CoilSensitivities{io::read_stack(dir / "coils")};
  imaging::ImagingOperator op(std::move(mask), std::move(coils));
  if (samples.count != op.coils() || samples.height != op.height() || samples.width != op.width()) {
    throw Error(ErrorCode::kShapeError, dir.string() + ": k-space does not match mask/coils");
  }
  return imaging::KSpaceAcquisition{std::move(samples), std::move(op)};
}

void write_acquisition(const fs::path& dir, const imaging::KSpaceAcquisition& y) {
  io::write_stack(dir / "kspace", y.samples);
  io::write_mask(dir / "mask.mask", y.op.mask());
  if (y.op.sensitivities()) io::write_stack(dir / "coils", y.op.sensitivities()->maps);
}

imaging::KSpaceAcquisition simulate(const json& c, const imaging::ComplexImage& ref, std::uint64_t seed) {
  auto mask = imaging::make_mask(ref.height, ref.width, c["rate"].get<double>(),
                                 imaging::parse_density(c["density"].get<std::string>()),
                                 c["calibration_lines"].get<int>(), derive_seed(seed, 1));
  std::optional<imaging::CoilSensitivities> coils;
  const int n_coils = c["coils"].get<int>();
  if (n_coils > 1) coils = imaging::make_synthetic_coils(ref.height, ref.width, n_coils, derive_seed(seed, 2));
  imaging::ImagingOperator op(std::move(mask), std::move(coils));
  std::optional<double> snr;
  if (!c["snr_db"].is_null()) snr = c["snr_db"].get<double>();
  return data::simulate_acquisition(ref, op, snr, derive_seed(seed, 3));
}

std::string trace_csv(const std::vector<inference::DcLossTerms>& trace) {
  std::ostringstream s;
  s.precision(17);
  s << "iteration,total,data,penalty\n";
  for (std::size_t i = 0; i < trace.size(); ++i)
    s << i << ',' << trace[i].total << ',' << trace[i].data << ',' << trace[i].penalty << '\n';
  return s.str();
}

int cmd_reconstruct(const Flags& f, const std::string& reference, const std::string& acquisition,
                    const std::string& manifest, int iterations, std::ostream& out) {
  json c = load_config(f);
  apply_common(f, c);
  if (!reference.empty()) c["reference"] = reference;
  if (!acquisition.empty()) c["acquisition"] = acquisition;
  if (!manifest.empty()) c["manifest"] = manifest;
  c["out"] = out_dir(c).string();
  c["seed"] = get<std::uint64_t>(c, "seed", 0);
  c["site"] = get<int>(c, "site", 0);
  c["rate"] = get<double>(c, "rate", 3.0);
  c["density"] = get<std::string>(c, "density", "variable");
  c["calibration_lines"] = get<int>(c, "calibration_lines", 4);
  c["coils"] = get<int>(c, "coils", 1);
  if (!c.contains("snr_db")) c["snr_db"] = nullptr;
  c["max_cases"] = get<int>(c, "max_cases", 0);
  inference::InferenceConfig icfg = inference::inference_config_from_json(c.value("inference", json::object()));
  if (iterations > 0) icfg.iterations = iterations;
  icfg.validate();
  const std::string ckpt_path = require_string(c, "checkpoint");
  const int modes = int(c.contains("reference")) + int(c.contains("acquisition")) + int(c.contains("manifest"));
  if (modes == 0) throw Error(ErrorCode::kConfigError, "reconstruct needs --reference, --acquisition or --manifest");
  if (c.contains("manifest") && modes > 1) {
    throw Error(ErrorCode::kConfigError, "--manifest cannot be combined with --reference/--acquisition");
  }

  const auto archive = io::read_archive(ckpt_path);
  const prior::ModelConfig model = federation::checkpoint_model(archive);
  const ParamSet generator = federation::checkpoint_generator(archive);
  const fs::path dir = out_dir(c);
  const std::uint64_t seed = c["seed"].get<std::uint64_t>();

  std::vector<Case> cases;
  if (c.contains("manifest")) {
    const fs::path mpath = c["manifest"].get<std::string>();
    const auto m = data::read_manifest(mpath);
    const auto idx = m.indices(data::Split::kTest);
    const auto images = data::load_images(mpath, m, data::Split::kTest);
    const int limit = c["max_cases"].get<int>();
    for (std::size_t i = 0; i < images.size() && (limit <= 0 || int(i) < limit); ++i) {
      Case k;
      k.id = fs::path(m.entries[idx[i]].image).filename().string();
      k.reference = images[i];
      k.acquisition = simulate(c, images[i], derive_seed(seed, 100 + i));
      k.site = f.site_opt->count() ? c["site"].get<int>() : m.site;
      cases.push_back(std::move(k));
    }
    if (cases.empty()) throw Error(ErrorCode::kEmptyInput, mpath.string() + " has no test images");
  } else {
    Case k;
    k.id = "case";
    k.site = c["site"].get<int>();
    if (c.contains("reference")) k.reference = io::read_image(c["reference"].get<std::string>());
    if (c.contains("acquisition")) {
      k.acquisition = read_acquisition(c["acquisition"].get<std::string>());
    } else {
      k.acquisition = simulate(c, *k.reference, seed);
    }
    cases.push_back(std::move(k));
  }
  c["inference"] = inference::to_json(icfg);
  persist(dir, "reconstruct", c);

  json records = json::array();
  const bool single = cases.size() == 1 && !c.contains("manifest");
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const Case& k = cases[i];
    const fs::path cdir = single ? dir : dir / k.id;
    inference::InferenceConfig cc = icfg;
    cc.seed = derive_seed(icfg.seed ^ seed, i);
    const auto rec = inference::adapt_and_reconstruct(model, generator, k.site, k.acquisition, cc);
    const auto zf = imaging::adjoint(k.acquisition.op, k.acquisition);
    io::write_image(cdir / "recon", rec.image);
    io::write_image(cdir / "recon_dc", inference::enforce_data_consistency(rec.image, k.acquisition));
    io::write_image(cdir / "zero_filled", zf);
    io::write_file(cdir / "loss_trace.csv", trace_csv(rec.trace));
    std::vector<double> totals;
    for (const auto& t : rec.trace) totals.push_back(t.total);
    io::write_file(cdir / "loss_trace.svg", evaluation::trace_svg(totals, "data-consistency loss"));
    if (!c.contains("acquisition")) write_acquisition(cdir / "acquisition", k.acquisition);

    std::ostringstream line;
    line << k.id << ": loss " << rec.trace.front().total << " -> " << rec.trace.back().total;
    if (k.reference) {
      const auto& mask = k.acquisition.op.mask();
      for (const auto& [method, image] :
           {std::pair<std::string, const imaging::ComplexImage*>{"fedgimp", &rec.image}, {"zero-filled", &zf}}) {
        evaluation::MetricRecord r{method, k.id, k.site, mask.rate, imaging::density_name(mask.density),
                                   evaluation::compare(*k.reference, *image)};
        records.push_back(evaluation::to_json(r));
        line << "  " << method << " " << r.metrics.psnr_db << " dB";
      }
    }
    out << line.str() << "\n";
  }
  if (!records.empty()) io::write_json(dir / "metrics.json", json{{"records", records}});
  return kExitOk;
}

// ---- evaluate ------------------------------------------------------------

std::vector<fs::path> metric_files(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (!fs::exists(p)) throw Error(ErrorCode::kNotFound, in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::recursive_directory_iterator(p))
        if (e.is_regular_file() && e.path().filename() == "metrics.json") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(p);
    }
  }
  return files;
}

int cmd_evaluate(const Flags& f, const std::vector<std::string>& inputs, bool by_site, std::ostream& out) {
  json c = load_config(f);
  apply_common(f, c);
  if (!inputs.empty()) c["inputs"] = inputs;
  c["out"] = out_dir(c).string();
  c["by_site"] = by_site || get<bool>(c, "by_site", false);
  const auto paths = get<std::vector<std::string>>(c, "inputs", {});
  if (paths.empty()) throw Error(ErrorCode::kEmptyInput, "no metric files given");

  std::vector<evaluation::MetricRecord> records;
  for (const auto& file : metric_files(paths)) {
    const json j = io::read_json(file);
    const json& list = j.is_array() ? j : j.value("records", json::array());
    for (const auto& r : list) records.push_back(evaluation::metric_record_from_json(r));
  }
  if (records.empty()) throw Error(ErrorCode::kEmptyInput, "no metric records found");

  const auto rows = evaluation::summarize(records, c["by_site"].get<bool>());
  const fs::path dir = out_dir(c);
  const std::string csv = evaluation::summary_csv(rows);
  io::write_file(dir / "summary.csv", csv);
  io::write_file(dir / "summary.svg", evaluation::summary_svg(rows));
  persist(dir, "evaluate", c);
  out << csv;
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated generative MRI priors: data, training, reconstruction, evaluation", "fedgimp"};
  app.require_subcommand(1);

  Flags make_flags, train_flags, recon_flags, eval_flags;
  auto* make = app.add_subcommand("make-data", "generate phantom datasets for simulated sites");
  add_common(make, make_flags);

  auto* train = app.add_subcommand("train", "federated training of the generative prior");
  add_common(train, train_flags);
  std::string resume;
  train->add_option("--resume", resume, "continue from a training checkpoint");

  auto* recon = app.add_subcommand("reconstruct", "reconstruct undersampled acquisitions with a trained prior");
  add_common(recon, recon_flags);
  std::string reference, acquisition, manifest;
  int iterations = 0;
  recon->add_option("--reference", reference, "fully sampled image (ri-planes stem); simulates the acquisition");
  recon->add_option("--acquisition", acquisition, "acquisition directory (kspace, mask.mask, optional coils)");
  recon->add_option("--manifest", manifest, "dataset manifest; reconstructs its test split");
  recon->add_option("--iterations", iterations, "override the number of inference iterations");

  auto* eval = app.add_subcommand("evaluate", "aggregate metrics into a table and plot");
  add_common(eval, eval_flags);
  std::vector<std::string> inputs;
  bool by_site = false;
  eval->add_option("inputs", inputs, "metrics.json files or directories");
  eval->add_flag("--by-site", by_site, "one row per site as well as method and rate");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "config-error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (make->parsed()) return cmd_make_data(make_flags, out);
    if (train->parsed()) return cmd_train(train_flags, resume, out);
    if (recon->parsed()) return cmd_reconstruct(recon_flags, reference, acquisition, manifest, iterations, out);
    if (eval->parsed()) return cmd_evaluate(eval_flags, inputs, by_site, out);
  } catch (const Error& e) {
    err << e.what() << "\n";
    return exit_code(e.code());
  } catch (const json::exception& e) {
    err << "config-error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    err << "io-error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "runtime-error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace fedgimp::cli
