#pragma once

// Simulated federation: the server broadcasts the global generator, every
// site adapts it against its private discriminator, and the server averages
// the returned generators. Broadcast and upload cross a serialisation
// boundary so the payload contents can be audited.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fedgimp/error.hpp"
#include "fedgimp/io.hpp"
#include "fedgimp/params.hpp"
#include "fedgimp/prior.hpp"
#include "fedgimp/training.hpp"

namespace fedgimp::federation {

// α^k = N^k / Σ N^j.
std::vector<double> compute_site_weights(const std::vector<long>& sample_counts);

// Σ_k α^k θ^k, elementwise over every array.
ParamSet aggregate(const std::vector<ParamSet>& locals, const std::vector<double>& alpha);

struct Payload {
  std::vector<std::string> manifest;  // array names, as read back from `bytes`
  std::string bytes;
};

// Serialises generator parameters for transport. Refuses anything that is
// not a mapper/synthesizer array.
Payload make_payload(const ParamSet& generator, const std::string& kind, int round);
ParamSet open_payload(const Payload& payload);

struct FederationState {
  prior::ModelConfig model;
  training::TrainConfig train;
  ParamSet generator;
  std::vector<training::SiteState> sites;
  std::vector<double> weights;
  int round = 0;  // completed rounds
};

// Seeds are derived from `seed`: stream 0 initialises the generator and
// stream k+1 drives site k (discriminator init, minibatches, latents).
FederationState make_federation(const prior::ModelConfig& model, const training::TrainConfig& train,
                                std::vector<std::vector<Tensor>> site_images, std::uint64_t seed);

struct SiteSummary {
  int site = 0;
  double generator_loss = 0.0;  // mean over local epochs
  double discriminator_loss = 0.0;
};

struct RoundReport {
  int round = 0;  // 0-based
  prior::Stage stage;
  std::vector<SiteSummary> sites;
  std::vector<std::vector<training::EpochLoss>> traces;  // [site][epoch]
  double seconds = 0.0;
};

std::string format_round(const RoundReport& report);
// "round,site,epoch,role,loss" rows, roles G and D.
std::string loss_csv(const std::vector<RoundReport>& reports, bool header = true);

class SiteFailure : public Error {
 public:
  SiteFailure(int site, int round, const std::string& reason)
      : Error(ErrorCode::kSiteFailure,
              "site " + std::to_string(site) + " failed in round " + std::to_string(round) + ": " + reason),
        site_(site),
        round_(round),
        reason_(reason) {}
  int site() const noexcept { return site_; }
  int round() const noexcept { return round_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  int site_;
  int round_;
  std::string reason_;
};

struct FederationOptions {
  int rounds = 100;              // L, total including rounds already completed
  int checkpoint_interval = 10;  // checkpoint after every this many rounds and after the last
  std::filesystem::path checkpoint_dir;  // empty: keep checkpoints in memory only
  bool parallel_sites = false;
  std::function<void(const RoundReport&)> on_round;
  // Test hook, called inside each site's worker before its local update.
  std::function<void(int site, int round)> before_local_update;
};

struct FederationResult {
  ParamSet generator;
  std::vector<RoundReport> reports;
  std::vector<std::filesystem::path> checkpoint_files;
  std::vector<io::Archive> checkpoints;  // filled when checkpoint_dir is empty
  std::vector<std::vector<std::string>> broadcast_manifests;  // one per round
};

// Runs rounds state.round .. rounds-1. On a site failure the round is
// abandoned before aggregation and SiteFailure is thrown; `state.generator`
// keeps the previous round's value.
FederationResult run_federation(FederationState& state, const FederationOptions& options);

// Full training state: generator, per-site discriminators and optimiser
// moments, RNG states and bookkeeping metadata. Enough to resume exactly.
io::Archive make_checkpoint(const FederationState& state);
// Restores a checkpoint; site images are not stored and must be supplied.
FederationState restore_checkpoint(const io::Archive& archive, std::vector<std::vector<Tensor>> site_images);

std::string checkpoint_name(int round);
prior::ModelConfig checkpoint_model(const io::Archive& archive);
ParamSet checkpoint_generator(const io::Archive& archive);

}  // namespace fedgimp::federation
