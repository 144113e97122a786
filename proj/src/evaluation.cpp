#include "fedgimp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "fedgimp/error.hpp"

namespace fedgimp::evaluation {

namespace {

void require_2d(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw Error(ErrorCode::kShapeError, std::string(what) + " must be [H, W]");
}

void require_same(const Tensor& a, const Tensor& b) {
  require_2d(a, "reference");
  require_2d(b, "test image");
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::kShapeError, shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

constexpr int kRadius = 5;
constexpr double kSigma = 1.5;

std::vector<double> gaussian_taps() {
  std::vector<double> taps(2 * kRadius + 1);
  double total = 0.0;
  for (int i = -kRadius; i <= kRadius; ++i) total += taps[i + kRadius] = std::exp(-0.5 * i * i / (kSigma * kSigma));
  for (auto& t : taps) t /= total;
  return taps;
}

// Separable Gaussian filter evaluated only where the window fits.
std::vector<double> filter_valid(const std::vector<double>& x, int H, int W, const std::vector<double>& taps) {
  const int Wv = W - 2 * kRadius, Hv = H - 2 * kRadius;
  std::vector<double> rows(std::size_t(H) * Wv);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < Wv; ++c) {
      double acc = 0.0;
      for (int k = 0; k <= 2 * kRadius; ++k) acc += taps[k] * x[std::size_t(r) * W + c + k];
      rows[std::size_t(r) * Wv + c] = acc;
    }
  std::vector<double> out(std::size_t(Hv) * Wv);
  for (int r = 0; r < Hv; ++r)
    for (int c = 0; c < Wv; ++c) {
      double acc = 0.0;
      for (int k = 0; k <= 2 * kRadius; ++k) acc += taps[k] * rows[std::size_t(r + k) * Wv + c];
      out[std::size_t(r) * Wv + c] = acc;
    }
  return out;
}

std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string fmt_rate(double r) {
  std::ostringstream out;
  out << r;
  return out.str();
}

}  // namespace

Tensor magnitude(const imaging::ComplexImage& image) {
  Tensor out({image.height, image.width});
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = std::abs(image.pixels[i]);
  return out;
}

Tensor normalize01(const Tensor& image) {
  Tensor out(image.shape());
  if (image.empty()) return out;
  const auto [lo, hi] = std::minmax_element(image.values().begin(), image.values().end());
  const double span = *hi - *lo;
  if (span <= 0.0) return out;
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = (image[i] - *lo) / span;
  return out;
}

double psnr(const Tensor& reference, const Tensor& test) {
  require_same(reference, test);
  double se = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double d = reference[i] - test[i];
    se += d * d;
  }
  const double mse = se / double(reference.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Tensor& reference, const Tensor& test) {
  require_same(reference, test);
  const int H = reference.dim(0), W = reference.dim(1);
  if (H < 2 * kRadius + 1 || W < 2 * kRadius + 1) {
    throw Error(ErrorCode::kInvalidArgument, "image smaller than the 11x11 SSIM window");
  }
  const auto taps = gaussian_taps();
  const std::vector<double>& x = reference.storage();
  const std::vector<double>& y = test.storage();
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, H, W, taps);
  const auto my = filter_valid(y, H, W, taps);
  const auto mxx = filter_valid(xx, H, W, taps);
  const auto myy = filter_valid(yy, H, W, taps);
  const auto mxy = filter_valid(xy, H, W, taps);
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = mxx[i] - mx[i] * mx[i];
    const double vy = myy[i] - my[i] * my[i];
    const double cxy = mxy[i] - mx[i] * my[i];
    total += ((2 * mx[i] * my[i] + C1) * (2 * cxy + C2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2));
  }
  return 100.0 * total / double(mx.size());
}

ImageMetrics compare(const imaging::ComplexImage& reference, const imaging::ComplexImage& test) {
  const Tensor r = normalize01(magnitude(reference));
  const Tensor t = normalize01(magnitude(test));
  return ImageMetrics{psnr(r, t), ssim(r, t)};
}

nlohmann::json to_json(const MetricRecord& r) {
  return {{"method", r.method},   {"case", r.case_id},
          {"site", r.site},       {"rate", r.rate},
          {"density", r.density}, {"psnr_db", r.metrics.psnr_db},
          {"ssim_pct", r.metrics.ssim_pct}};
}

MetricRecord metric_record_from_json(const nlohmann::json& j) {
  MetricRecord r;
  try {
    r.method = j.at("method").get<std::string>();
    r.case_id = j.value("case", std::string());
    r.site = j.value("site", 0);
    r.rate = j.at("rate").get<double>();
    r.density = j.at("density").get<std::string>();
    r.metrics.psnr_db = j.at("psnr_db").get<double>();
    r.metrics.ssim_pct = j.at("ssim_pct").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfigError, std::string("malformed metric record: ") + e.what());
  }
  return r;
}

Stats stats(const std::vector<double>& values) {
  Stats s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= double(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / double(values.size()));
  return s;
}

std::vector<SummaryRow> summarize(const std::vector<MetricRecord>& records, bool by_site) {
  using Key = std::tuple<std::string, double, std::string, int>;
  std::map<Key, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& r : records) {
    auto& g = groups[Key{r.method, r.rate, r.density, by_site ? r.site : -1}];
    g.first.push_back(r.metrics.psnr_db);
    g.second.push_back(r.metrics.ssim_pct);
  }
  std::vector<SummaryRow> rows;
  for (const auto& [key, values] : groups) {
    SummaryRow row;
    std::tie(row.method, row.rate, row.density, row.site) = key;
    row.count = int(values.first.size());
    row.psnr = stats(values.first);
    row.ssim = stats(values.second);
    rows.push_back(row);
  }
  return rows;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out = "method,rate,density,site,count,psnr_mean,psnr_std,ssim_mean,ssim_std\n";
  for (const auto& r : rows) {
    out += r.method + "," + fmt_rate(r.rate) + "," + r.density + "," + (r.site < 0 ? "all" : std::to_string(r.site)) +
           "," + std::to_string(r.count) + "," + fmt(r.psnr.mean) + "," + fmt(r.psnr.std) + "," + fmt(r.ssim.mean) +
           "," + fmt(r.ssim.std) + "\n";
  }
  return out;
}

std::string summary_svg(const std::vector<SummaryRow>& rows) {
  std::vector<std::string> methods;
  std::vector<std::string> settings;
  std::map<std::pair<std::string, std::string>, double> value;
  double top = 1.0;
  for (const auto& r : rows) {
    const std::string setting = fmt_rate(r.rate) + "x " + r.density + (r.site < 0 ? "" : " s" + std::to_string(r.site));
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    if (std::find(settings.begin(), settings.end(), setting) == settings.end()) settings.push_back(setting);
    value[{setting, r.method}] = r.psnr.mean;
    top = std::max(top, r.psnr.mean);
  }
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  const double plot_h = 240, left = 50, bottom = 280, bar = 18, gap = 24;
  const double group_w = bar * std::max<std::size_t>(methods.size(), 1) + gap;
  const double width = left + group_w * std::max<std::size_t>(settings.size(), 1) + 160;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"320\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<text x=\"" << left << "\" y=\"16\">mean PSNR (dB)</text>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << width - 150 << "\" y2=\"" << bottom
      << "\" stroke=\"black\"/>\n";
  for (std::size_t s = 0; s < settings.size(); ++s) {
    const double x0 = left + gap / 2 + s * group_w;
    for (std::size_t m = 0; m < methods.size(); ++m) {
      const auto it = value.find({settings[s], methods[m]});
      if (it == value.end()) continue;
      const double h = plot_h * std::max(it->second, 0.0) / top;
      svg << "<rect x=\"" << x0 + m * bar << "\" y=\"" << bottom - h << "\" width=\"" << bar - 2 << "\" height=\"" << h
          << "\" fill=\"" << colors[m % 6] << "\"><title>" << methods[m] << " " << settings[s] << ": "
          << fmt(it->second, 2) << "</title></rect>\n";
    }
    svg << "<text x=\"" << x0 << "\" y=\"" << bottom + 16 << "\">" << settings[s] << "</text>\n";
  }
  for (std::size_t m = 0; m < methods.size(); ++m) {
    const double y = 40 + 16 * m;
    svg << "<rect x=\"" << width - 140 << "\" y=\"" << y - 10 << "\" width=\"10\" height=\"10\" fill=\""
        << colors[m % 6] << "\"/><text x=\"" << width - 125 << "\" y=\"" << y << "\">" << methods[m] << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string trace_svg(const std::vector<double>& values, const std::string& title) {
  const double w = 480, h = 240, pad = 40;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n<text x=\"" << pad << "\" y=\"16\">" << title << "</text>\n";
  if (!values.empty()) {
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double span = *hi > *lo ? *hi - *lo : 1.0;
    svg << "<polyline fill=\"none\" stroke=\"#1f77b4\" points=\"";
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double x = pad + (w - 2 * pad) * (values.size() > 1 ? double(i) / (values.size() - 1) : 0.0);
      const double y = h - pad - (h - 2 * pad) * (values[i] - *lo) / span;
      svg << fmt(x, 1) << "," << fmt(y, 1) << " ";
    }
    svg << "\"/>\n<text x=\"4\" y=\"" << pad << "\">" << fmt(*hi, 3) << "</text>\n<text x=\"4\" y=\"" << h - pad
        << "\">" << fmt(*lo, 3) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace fedgimp::evaluation
