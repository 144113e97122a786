#pragma once

// Image-quality metrics against fully sampled references and the
// table/plot reports built from them. Images are [H, W] magnitude tensors.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedgimp/imaging.hpp"
#include "fedgimp/tensor.hpp"

namespace fedgimp::evaluation {

constexpr double kPsnrCap = 99.0;

Tensor magnitude(const imaging::ComplexImage& image);

// (x − min) / (max − min); constant images map to zeros.
Tensor normalize01(const Tensor& image);

// 10·log10(1 / MSE), capped at kPsnrCap.
double psnr(const Tensor& reference, const Tensor& test);

// Mean local SSIM ×100 with an 11×11 Gaussian window (σ = 1.5), dynamic
// range 1, C1 = 0.01², C2 = 0.03², population (co)variances, averaged over
// the pixels whose window lies inside the image.
double ssim(const Tensor& reference, const Tensor& test);

struct ImageMetrics {
  double psnr_db = 0.0;
  double ssim_pct = 0.0;
};

// Magnitudes of both images, each normalised to [0, 1], then PSNR and SSIM.
ImageMetrics compare(const imaging::ComplexImage& reference, const imaging::ComplexImage& test);

struct MetricRecord {
  std::string method;
  std::string case_id;
  int site = 0;
  double rate = 1.0;
  std::string density;
  ImageMetrics metrics;
};

nlohmann::json to_json(const MetricRecord& r);
MetricRecord metric_record_from_json(const nlohmann::json& j);

struct Stats {
  double mean = 0.0;
  double std = 0.0;  // population
};
Stats stats(const std::vector<double>& values);

struct SummaryRow {
  std::string method;
  double rate = 1.0;
  std::string density;
  int site = -1;  // -1: all sites pooled
  int count = 0;
  Stats psnr;
  Stats ssim;
};

// One row per (method, rate, density), or per (method, rate, density, site)
// when `by_site` is set. Rows are sorted by their key.
std::vector<SummaryRow> summarize(const std::vector<MetricRecord>& records, bool by_site = false);

std::string summary_csv(const std::vector<SummaryRow>& rows);
// Grouped bar chart of mean PSNR per (rate, density) and method.
std::string summary_svg(const std::vector<SummaryRow>& rows);
// Line plot of a loss trace.
std::string trace_svg(const std::vector<double>& values, const std::string& title);

}  // namespace fedgimp::evaluation
