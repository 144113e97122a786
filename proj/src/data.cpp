#include "fedgimp/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "fedgimp/error.hpp"
#include "fedgimp/io.hpp"
#include "fedgimp/random.hpp"

namespace fedgimp::data {

using imaging::ComplexImage;
using imaging::cplx;

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "validation" || name == "val") return Split::kValidation;
  if (name == "test") return Split::kTest;
  throw Error(ErrorCode::kConfigError, "unknown split '" + name + "'");
}

nlohmann::json to_json(const SiteStyle& s) {
  return {{"scale", s.scale},     {"aspect", s.aspect},   {"rotation_deg", s.rotation_deg},
          {"contrast_gamma", s.contrast_gamma}, {"texture", s.texture}, {"bias_field", s.bias_field},
          {"phase", s.phase}};
}

SiteStyle site_style_from_json(const nlohmann::json& j) {
  SiteStyle s;
  s.scale = j.value("scale", s.scale);
  s.aspect = j.value("aspect", s.aspect);
  s.rotation_deg = j.value("rotation_deg", s.rotation_deg);
  s.contrast_gamma = j.value("contrast_gamma", s.contrast_gamma);
  s.texture = j.value("texture", s.texture);
  s.bias_field = j.value("bias_field", s.bias_field);
  s.phase = j.value("phase", s.phase);
  return s;
}

SiteStyle preset_style(int site) {
  switch (site % 3) {
    case 0: return SiteStyle{};
    case 1: return SiteStyle{0.92, 1.06, 6.0, 1.25, 0.08, 0.15, 0.0};
    default: return SiteStyle{1.05, 0.94, -5.0, 0.8, 0.03, 0.2, 0.0};
  }
}

const std::vector<std::string>& known_contrasts() {
  static const std::vector<std::string> names{"T1", "T2", "PD"};
  return names;
}

std::vector<int> split_counts(int n_subjects, const SplitRatios& ratios) {
  if (n_subjects < 0) throw Error(ErrorCode::kInvalidArgument, "negative subject count");
  const int parts[3] = {ratios.train, ratios.validation, ratios.test};
  const int total = parts[0] + parts[1] + parts[2];
  if (parts[0] < 0 || parts[1] < 0 || parts[2] < 0 || total == 0) {
    throw Error(ErrorCode::kInvalidArgument, "split ratios must be non-negative with a positive total");
  }
  std::vector<int> counts(3);
  std::vector<std::pair<long, int>> remainders;
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const long scaled = long(n_subjects) * parts[i];
    counts[i] = int(scaled / total);
    assigned += counts[i];
    remainders.push_back({scaled % total, i});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int i = 0; assigned < n_subjects; ++i, ++assigned) ++counts[remainders[i].second];
  return counts;
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split == split) out.push_back(i);
  return out;
}

nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"subject", e.subject},
                       {"contrast", e.contrast},
                       {"slice", e.slice},
                       {"split", split_name(e.split)},
                       {"image", e.image}});
  }
  return {{"site", m.site},
          {"resolution", m.resolution},
          {"seed", m.seed},
          {"contrasts", m.contrasts},
          {"site_style", to_json(m.style)},
          {"split_ratios", {m.ratios.train, m.ratios.validation, m.ratios.test}},
          {"test_forward_model",
           {{"rate", m.test_forward_model.rate},
            {"density", imaging::density_name(m.test_forward_model.density)},
            {"calibration_lines", m.test_forward_model.calibration_lines},
            {"coils", m.test_forward_model.coils}}},
          {"entries", entries}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.site = j.at("site").get<int>();
    m.resolution = j.at("resolution").get<int>();
    m.seed = j.value("seed", std::uint64_t{0});
    m.contrasts = j.value("contrasts", std::vector<std::string>{});
    if (j.contains("site_style")) m.style = site_style_from_json(j.at("site_style"));
    if (j.contains("split_ratios")) {
      const auto r = j.at("split_ratios").get<std::vector<int>>();
      if (r.size() == 3) m.ratios = SplitRatios{r[0], r[1], r[2]};
    }
    if (j.contains("test_forward_model")) {
      const auto& f = j.at("test_forward_model");
      m.test_forward_model.rate = f.value("rate", 3.0);
      m.test_forward_model.density = imaging::parse_density(f.value("density", std::string("variable")));
      m.test_forward_model.calibration_lines = f.value("calibration_lines", 4);
      m.test_forward_model.coils = f.value("coils", 1);
    }
    for (const auto& e : j.at("entries")) {
      m.entries.push_back(ManifestEntry{e.at("subject").get<std::string>(), e.at("contrast").get<std::string>(),
                                        e.value("slice", 0), parse_split(e.at("split").get<std::string>()),
                                        e.at("image").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfigError, std::string("malformed manifest: ") + e.what());
  }
  return m;
}

namespace {

enum Tissue { kBackground, kScalp, kCsf, kGrey, kWhite, kLesion, kTissueCount };

double tissue_intensity(const std::string& contrast, int tissue) {
  static const double t1[kTissueCount] = {0.0, 0.95, 0.15, 0.55, 0.80, 0.40};
  static const double t2[kTissueCount] = {0.0, 0.45, 1.00, 0.65, 0.45, 0.90};
  static const double pd[kTissueCount] = {0.0, 0.80, 0.90, 0.85, 0.70, 0.85};
  if (contrast == "T1") return t1[tissue];
  if (contrast == "T2") return t2[tissue];
  if (contrast == "PD") return pd[tissue];
  throw Error(ErrorCode::kInvalidArgument, "unknown contrast '" + contrast + "'");
}

struct Ellipse {
  double cx = 0, cy = 0, a = 1, b = 1, angle = 0;
  // < 1 inside
  double radius(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (c * dx + s * dy) / a, v = (-s * dx + c * dy) / b;
    return std::sqrt(u * u + v * v);
  }
  double polar(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    return std::atan2((-s * dx + c * dy) / b, (c * dx + s * dy) / a);
  }
};

struct Wave {
  double fx, fy, phase, amp;
};

// Anatomy of one subject, shared by all its slices and contrasts.
struct Subject {
  Ellipse head;
  double rotation = 0;
  int gyri = 7;
  double gyri_phase = 0, gyri_depth = 0.05;
  double white_ratio = 0.72;
  double ventricle_size = 0.16, ventricle_gap = 0.09;
  std::vector<Ellipse> lesions;
  std::vector<Wave> texture;
  double bias_angle = 0;
  std::vector<double> phase_coeffs;
};

Subject make_subject(const SiteStyle& style, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  Subject s;
  s.rotation = (style.rotation_deg + 4.0 * n(rng)) * std::numbers::pi / 180.0;
  s.head.cx = 0.02 * n(rng);
  s.head.cy = 0.02 * n(rng);
  s.head.a = 0.70 * style.scale * (0.95 + 0.1 * u(rng));
  s.head.b = 0.86 * style.scale * style.aspect * (0.95 + 0.1 * u(rng));
  s.head.angle = s.rotation;
  s.gyri = 6 + int(u(rng) * 5);
  s.gyri_phase = 2 * std::numbers::pi * u(rng);
  s.gyri_depth = 0.03 + 0.04 * u(rng);
  s.white_ratio = 0.66 + 0.1 * u(rng);
  s.ventricle_size = 0.12 + 0.08 * u(rng);
  s.ventricle_gap = 0.07 + 0.05 * u(rng);
  const int lesions = int(u(rng) * 3);
  for (int i = 0; i < lesions; ++i) {
    const double r = 0.35 * std::sqrt(u(rng)), t = 2 * std::numbers::pi * u(rng);
    Ellipse e;
    e.cx = r * std::cos(t);
    e.cy = r * std::sin(t);
    e.a = 0.03 + 0.05 * u(rng);
    e.b = 0.03 + 0.05 * u(rng);
    e.angle = std::numbers::pi * u(rng);
    s.lesions.push_back(e);
  }
  for (int i = 0; i < 6; ++i) {
    s.texture.push_back(Wave{3.0 * (u(rng) - 0.5) * 2, 3.0 * (u(rng) - 0.5) * 2, 2 * std::numbers::pi * u(rng),
                             (0.5 + u(rng)) / 6.0});
  }
  s.bias_angle = 2 * std::numbers::pi * u(rng);
  for (int i = 0; i < 3; ++i) s.phase_coeffs.push_back(n(rng));
  return s;
}

int tissue_at(const Subject& s, double x, double y, double z) {
  // Slices away from z = 0 shrink the head and the ventricles.
  const double shrink = std::sqrt(std::max(0.0, 1.0 - 0.8 * z * z));
  Ellipse head = s.head;
  head.a *= shrink;
  head.b *= shrink;
  const double r = head.radius(x, y);
  if (r >= 1.0) return kBackground;
  if (r >= 0.91) return kScalp;
  if (r >= 0.87) return kCsf;
  const double theta = head.polar(x, y);
  const double boundary = s.white_ratio + s.gyri_depth * std::sin(s.gyri * theta + s.gyri_phase);
  const double vs = s.ventricle_size * std::max(0.0, 1.0 - 1.5 * std::abs(z));
  if (vs > 0.01) {
    for (int side : {-1, 1}) {
      Ellipse v;
      v.cx = head.cx + side * s.ventricle_gap * std::cos(s.rotation);
      v.cy = head.cy + side * s.ventricle_gap * std::sin(s.rotation);
      v.a = 0.4 * vs;
      v.b = vs;
      v.angle = s.rotation + side * 0.25;
      if (v.radius(x, y) < 1.0) return kCsf;
    }
  }
  if (r < boundary) {
    for (const auto& l : s.lesions) {
      Ellipse e = l;
      e.cx = head.cx + l.cx * shrink;
      e.cy = head.cy + l.cy * shrink;
      if (e.radius(x, y) < 1.0) return kLesion;
    }
    return kWhite;
  }
  return kGrey;
}

ComplexImage render(const Subject& s, const SiteStyle& style, const std::string& contrast, double z, int R) {
  ComplexImage img(R, R);
  constexpr int kSuper = 2;
  double peak = 0.0;
  std::vector<double> mag(std::size_t(R) * R);
  for (int row = 0; row < R; ++row)
    for (int col = 0; col < R; ++col) {
      double acc = 0.0;
      for (int sy = 0; sy < kSuper; ++sy)
        for (int sx = 0; sx < kSuper; ++sx) {
          const double x = -1.0 + 2.0 * (col + (sx + 0.5) / kSuper) / R;
          const double y = -1.0 + 2.0 * (row + (sy + 0.5) / kSuper) / R;
          const int t = tissue_at(s, x, y, z);
          if (t == kBackground) continue;
          acc += std::pow(tissue_intensity(contrast, t), style.contrast_gamma);
        }
      double v = acc / (kSuper * kSuper);
      if (v > 0.0) {
        const double x = -1.0 + 2.0 * (col + 0.5) / R, y = -1.0 + 2.0 * (row + 0.5) / R;
        double field = 0.0;
        for (const auto& w : s.texture) field += w.amp * std::cos(std::numbers::pi * (w.fx * x + w.fy * y) + w.phase);
        const double bias = std::cos(s.bias_angle) * x + std::sin(s.bias_angle) * y;
        v *= (1.0 + style.texture * field) * (1.0 + style.bias_field * bias);
        v = std::max(v, 0.0);
      }
      mag[std::size_t(row) * R + col] = v;
      peak = std::max(peak, v);
    }
  for (int row = 0; row < R; ++row)
    for (int col = 0; col < R; ++col) {
      const double x = -1.0 + 2.0 * (col + 0.5) / R, y = -1.0 + 2.0 * (row + 0.5) / R;
      const double phi = style.phase * std::tanh(s.phase_coeffs[0] * x + s.phase_coeffs[1] * y +
                                                 s.phase_coeffs[2] * x * y);
      const double m = peak > 0.0 ? mag[std::size_t(row) * R + col] / peak : 0.0;
      img.at(row, col) = style.phase == 0.0 ? cplx(m, 0.0) : std::polar(m, phi);
    }
  return img;
}

bool valid_resolution(int r) {
  if (r < 4 || r % 4 != 0) return false;
  const int q = r / 4;
  return (q & (q - 1)) == 0;
}

}  // namespace

PhantomSet make_phantom_set(const PhantomSetOptions& o) {
  if (!valid_resolution(o.resolution)) {
    throw Error(ErrorCode::kInvalidArgument,
                "resolution " + std::to_string(o.resolution) + " is not 4 times a power of two");
  }
  if (o.slices_per_subject < 1) throw Error(ErrorCode::kInvalidArgument, "slices_per_subject must be >= 1");
  for (const auto& c : o.contrasts) tissue_intensity(c, kBackground);
  const auto counts = split_counts(o.n_subjects, o.ratios);

  PhantomSet set;
  auto& m = set.manifest;
  m.site = o.site;
  m.resolution = o.resolution;
  m.seed = o.seed;
  m.contrasts = o.contrasts;
  m.style = o.style;
  m.ratios = o.ratios;
  m.test_forward_model = o.test_forward_model;

  const std::uint64_t site_seed = derive_seed(o.seed, std::uint64_t(o.site));
  for (int i = 0; i < o.n_subjects; ++i) {
    const Split split = i < counts[0] ? Split::kTrain : i < counts[0] + counts[1] ? Split::kValidation : Split::kTest;
    std::mt19937_64 rng(derive_seed(site_seed, std::uint64_t(i)));
    const Subject subject = make_subject(o.style, rng);
    char id[64];
    std::snprintf(id, sizeof id, "site%d-subj%03d", o.site, i);
    for (int sl = 0; sl < o.slices_per_subject; ++sl) {
      const double z = o.slices_per_subject == 1 ? 0.0 : -0.5 + double(sl) / (o.slices_per_subject - 1);
      for (const auto& contrast : o.contrasts) {
        char stem[96];
        std::snprintf(stem, sizeof stem, "images/%s_%s_z%02d", id, contrast.c_str(), sl);
        m.entries.push_back(ManifestEntry{id, contrast, sl, split, stem});
        set.images.push_back(render(subject, o.style, contrast, z, o.resolution));
      }
    }
  }
  return set;
}

void write_phantom_set(const std::filesystem::path& dir, const PhantomSet& set) {
  for (std::size_t i = 0; i < set.images.size(); ++i) io::write_image(dir / set.manifest.entries[i].image, set.images[i]);
  io::write_json(dir / "manifest.json", to_json(set.manifest));
}

DatasetManifest read_manifest(const std::filesystem::path& manifest_path) {
  return manifest_from_json(io::read_json(manifest_path));
}

std::vector<ComplexImage> load_images(const std::filesystem::path& manifest_path, const DatasetManifest& manifest,
                                      Split split) {
  std::vector<ComplexImage> out;
  const auto dir = manifest_path.parent_path();
  for (std::size_t i : manifest.indices(split)) out.push_back(io::read_image(dir / manifest.entries[i].image));
  return out;
}

imaging::KSpaceAcquisition simulate_acquisition(const ComplexImage& image, const imaging::ImagingOperator& op,
                                                std::optional<double> noise_snr_db, std::uint64_t seed) {
  imaging::KSpaceAcquisition y = imaging::forward(op, image);
  if (!noise_snr_db) return y;
  const auto& mask = op.mask();
  const std::size_t plane = std::size_t(op.height()) * op.width();
  double power = 0.0;
  std::size_t acquired = 0;
  for (int c = 0; c < y.samples.count; ++c)
    for (std::size_t p = 0; p < plane; ++p)
      if (mask.pattern[p]) {
        power += std::norm(y.samples.values[c * plane + p]);
        ++acquired;
      }
  if (acquired == 0) return y;
  power /= double(acquired);
  const double sigma = std::sqrt(power / std::pow(10.0, *noise_snr_db / 10.0) / 2.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  for (int c = 0; c < y.samples.count; ++c)
    for (std::size_t p = 0; p < plane; ++p)
      if (mask.pattern[p]) {
        const double re = n(rng);
        const double im = n(rng);
        y.samples.values[c * plane + p] += cplx(re, im);
      }
  return y;
}

}  // namespace fedgimp::data
