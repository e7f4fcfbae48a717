#include "cxit/diag.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cxit/error.hpp"

#ifndef CXIT_VERSION
#define CXIT_VERSION "0.0.0-unknown"
#endif

namespace cxit {

PlanCorrelation plan_correlation(const Matrix& plan) {
  if (plan.cols() < 2) throw InvalidArgument("plan_correlation: need at least 2 slots");
  if (plan.rows() < 2) throw InvalidArgument("plan_correlation: need at least 2 tokens");
  if (!all_finite(plan)) throw InvalidArgument("plan_correlation: non-finite plan");

  Matrix cols = plan.transpose();
  for (Eigen::Index k = 0; k < cols.rows(); ++k) {
    const double mass = cols.row(k).cwiseAbs().sum();
    if (mass > 0.0) cols.row(k) /= mass;
  }
  Correlation c = pearson_rows(cols);
  return {std::move(c.values), std::move(c.degenerate_rows)};
}

PlanCorrelation plan_correlation(const TransmissionPlan& plan) { return plan_correlation(plan.plan); }

double within_segment_mean_abs_correlation(const Matrix& correlation, const std::vector<PlanBlock>& blocks) {
  double total = 0.0;
  std::size_t pairs = 0;
  for (const auto& b : blocks) {
    if (b.slot_end > static_cast<std::size_t>(correlation.rows()))
      throw InvalidArgument("within_segment_mean_abs_correlation: block exceeds matrix");
    for (std::size_t i = b.slot_begin; i < b.slot_end; ++i)
      for (std::size_t j = i + 1; j < b.slot_end; ++j) {
        total += std::abs(correlation(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        ++pairs;
      }
  }
  if (pairs == 0) throw DegenerateInput("within_segment_mean_abs_correlation: no segment has two slots");
  return total / static_cast<double>(pairs);
}

PlanSpectrum plan_spectrum(const Matrix& plan) {
  const Vector sigma = singular_values(plan);
  const double total = sigma.sum();
  if (!(total > 0.0)) throw DegenerateInput("plan_spectrum: zero plan");
  return {sigma / total, effective_rank_from_spectrum(sigma)};
}

PlanSpectrum plan_spectrum(const TransmissionPlan& plan) { return plan_spectrum(plan.plan); }

void write_csv(const Matrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out.precision(9);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << static_cast<float>(m(i, j));
    }
    out << '\n';
  }
  if (!out) throw IoError(path.string(), "write failed");
}

Matrix read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size())
        throw ParseError("csv", path.string() + ": bad number '" + cell + "' on row " + std::to_string(rows.size()));
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError("csv", path.string() + ": ragged row " + std::to_string(rows.size()));
    rows.push_back(std::move(row));
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

void export_report(const DiagReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir.string(), ec.message());

  write_csv(report.correlation.values, dir / "correlation.csv");
  write_csv(report.spectrum.normalized, dir / "spectrum.csv");
  write_csv(report.gate_heatmap, dir / "gates.csv");

  nlohmann::ordered_json meta = report.meta;
  meta["version"] = version_string();
  meta["erank"] = report.spectrum.erank;
  meta["degenerate_slots"] = report.correlation.degenerate_columns;
  const auto path = dir / "meta.json";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out << meta.dump(2) << '\n';
  if (!out) throw IoError(path.string(), "write failed");
}

nlohmann::ordered_json plan_to_json(const TransmissionPlan& plan) {
  nlohmann::ordered_json j;
  j["rows"] = plan.plan.rows();
  j["cols"] = plan.plan.cols();
  j["row_residual"] = plan.row_residual;
  auto& blocks = j["blocks"] = nlohmann::ordered_json::array();
  for (const auto& b : plan.blocks) {
    nlohmann::ordered_json values = nlohmann::ordered_json::array();
    for (std::size_t t = b.token_begin; t < b.token_end; ++t) {
      std::vector<double> row;
      for (std::size_t k = b.slot_begin; k < b.slot_end; ++k)
        row.push_back(plan.plan(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)));
      values.push_back(std::move(row));
    }
    blocks.push_back({{"token_range", {b.token_begin, b.token_end}},
                      {"slot_range", {b.slot_begin, b.slot_end}},
                      {"values", std::move(values)}});
  }
  return j;
}

std::string version_string() { return CXIT_VERSION; }

}  // namespace cxit
