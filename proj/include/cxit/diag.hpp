#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cxit/numerics.hpp"
#include "cxit/width.hpp"

namespace cxit {

struct PlanCorrelation {
  Matrix values;                          // K x K, symmetric, unit diagonal
  // Columns with no mass or no spread; their correlations are reported as 0.
  std::vector<Eigen::Index> degenerate_columns;
};

// Pearson correlation between the L1-normalized columns of the plan.
PlanCorrelation plan_correlation(const TransmissionPlan& plan);
PlanCorrelation plan_correlation(const Matrix& plan);

// Mean |corr| over distinct slot pairs that share a segment. Pairs are
// taken from the plan's blocks; blocks with a single slot contribute nothing.
double within_segment_mean_abs_correlation(const Matrix& correlation, const std::vector<PlanBlock>& blocks);

struct PlanSpectrum {
  Vector normalized;  // singular values / their sum, descending
  double erank = 0.0;
};

PlanSpectrum plan_spectrum(const Matrix& plan);
PlanSpectrum plan_spectrum(const TransmissionPlan& plan);

struct DiagReport {
  PlanCorrelation correlation;
  PlanSpectrum spectrum;
  Matrix gate_heatmap;  // N x L
  nlohmann::ordered_json meta;
};

// Writes correlation.csv, spectrum.csv, gates.csv and meta.json into dir,
// creating it if needed.
void export_report(const DiagReport& report, const std::filesystem::path& dir);

// Plain CSV helpers shared with the CLI. Values are written with enough
// digits to round-trip at f32.
void write_csv(const Matrix& m, const std::filesystem::path& path);
Matrix read_csv(const std::filesystem::path& path);

// Sparse plan export: {"rows", "cols", "blocks": [{"token_range", "slot_range", "values"}]}.
nlohmann::ordered_json plan_to_json(const TransmissionPlan& plan);

// Version string baked in at configure time (git describe when available).
std::string version_string();

}  // namespace cxit
