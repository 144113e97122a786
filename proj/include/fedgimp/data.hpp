#pragma once

// Synthetic multi-contrast brain-like phantoms standing in for clinical
// scans, partitioned into subject-disjoint splits per site, and retrospective
// undersampling of those images.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedgimp/imaging.hpp"

namespace fedgimp::data {

enum class Split { kTrain, kValidation, kTest };
const char* split_name(Split s);
Split parse_split(const std::string& name);

// Site-level acquisition "look": geometry and intensity statistics that
// differ between sites to create a domain shift.
struct SiteStyle {
  double scale = 1.0;          // head size multiplier
  double aspect = 1.0;         // extra y/x stretch
  double rotation_deg = 0.0;   // mean head rotation
  double contrast_gamma = 1.0; // tissue intensity exponent
  double texture = 0.05;       // amplitude of smooth multiplicative texture
  double bias_field = 0.1;     // amplitude of a smooth coil-shading ramp
  double phase = 0.0;          // peak amplitude (rad) of smooth image phase; 0 gives real images
};

nlohmann::json to_json(const SiteStyle& s);
SiteStyle site_style_from_json(const nlohmann::json& j);
// A fixed, clearly distinct style for site k (k = 0 is neutral).
SiteStyle preset_style(int site);

// Supported contrast names: "T1", "T2", "PD".
const std::vector<std::string>& known_contrasts();

struct SplitRatios {
  int train = 40;
  int validation = 10;
  int test = 5;
};

// Subjects per split: exact when n equals the ratio total, otherwise
// largest-remainder rounding of n·ratio/total.
std::vector<int> split_counts(int n_subjects, const SplitRatios& ratios);

struct ForwardModelSpec {
  double rate = 3.0;
  imaging::Density density = imaging::Density::kVariable;
  int calibration_lines = 4;
  int coils = 1;
};

struct ManifestEntry {
  std::string subject;
  std::string contrast;
  int slice = 0;
  Split split = Split::kTrain;
  std::string image;  // ri-planes stem, relative to the manifest directory
};

struct DatasetManifest {
  int site = 0;
  int resolution = 64;
  std::uint64_t seed = 0;
  std::vector<std::string> contrasts;
  SiteStyle style;
  SplitRatios ratios;
  ForwardModelSpec test_forward_model;
  std::vector<ManifestEntry> entries;

  std::vector<std::size_t> indices(Split split) const;
};

nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

struct PhantomSetOptions {
  int site = 0;
  int n_subjects = 55;
  int slices_per_subject = 1;
  std::vector<std::string> contrasts{"T1"};
  int resolution = 64;
  SiteStyle style;
  SplitRatios ratios;
  ForwardModelSpec test_forward_model;
  std::uint64_t seed = 0;
};

struct PhantomSet {
  DatasetManifest manifest;
  std::vector<imaging::ComplexImage> images;  // aligned with manifest.entries
};

// One image per (subject, slice, contrast). Subjects are generated from
// seeds derived from (seed, site, subject), so a subject's images do not
// depend on how many other subjects are requested. Intensities are scaled
// to a peak magnitude of 1.
PhantomSet make_phantom_set(const PhantomSetOptions& options);

// Writes <dir>/manifest.json and <dir>/images/<entry>.{bin,json}.
void write_phantom_set(const std::filesystem::path& dir, const PhantomSet& set);
DatasetManifest read_manifest(const std::filesystem::path& manifest_path);
std::vector<imaging::ComplexImage> load_images(const std::filesystem::path& manifest_path,
                                               const DatasetManifest& manifest, Split split);

// y = forward(op, m), plus complex white Gaussian noise on acquired samples
// only, with σ² = mean_Ω|y|² / 10^(snr/10).
imaging::KSpaceAcquisition simulate_acquisition(const imaging::ComplexImage& image, const imaging::ImagingOperator& op,
                                                std::optional<double> noise_snr_db, std::uint64_t seed);

}  // namespace fedgimp::data
