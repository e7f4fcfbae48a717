#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "cxit/diag.hpp"
#include "cxit/error.hpp"

using namespace cxit;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cxit_test_diag" / name;
  fs::remove_all(dir);
  return dir;
}

Vector random_capacity(Rng& rng, Eigen::Index n) {
  return softmax(gaussian_matrix(rng, n, 1, 1.0).col(0));
}

Matrix float_rounded(const Matrix& m) {
  return m.unaryExpr([](double x) { return double(float(x)); });
}

}  // namespace

TEST(PlanCorrelation, IdenticalColumnsCorrelateFully) {
  Matrix p(4, 3);
  p << 1, 1, 0, 2, 2, 1, 3, 3, 0, 4, 4, 2;
  const auto c = plan_correlation(p);
  EXPECT_NEAR(c.values(0, 1), 1.0, 1e-15);
  EXPECT_TRUE(c.degenerate_columns.empty());
}

TEST(PlanCorrelation, ConstantCostPlanIsAllOnes) {
  Rng rng(1);
  const Vector rho = random_capacity(rng, 16);
  const Matrix p = rho * Vector::Constant(4, 0.25).transpose();
  const auto c = plan_correlation(p);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(c.values(i, j), 1.0, 1e-12);
}

TEST(PlanCorrelation, DisjointSupportMatchesDirectPearson) {
  Matrix p = Matrix::Zero(4, 2);
  p(0, 0) = p(1, 0) = 0.125;
  p(2, 1) = p(3, 1) = 0.125;
  const auto c = plan_correlation(p);
  Matrix cols(2, 4);
  cols.row(0) = p.col(0).transpose() / p.col(0).sum();
  cols.row(1) = p.col(1).transpose() / p.col(1).sum();
  EXPECT_NEAR(c.values(0, 1), pearson_rows(cols).values(0, 1), 1e-15);
  EXPECT_NEAR(c.values(0, 1), -1.0, 1e-15);
}

TEST(PlanCorrelation, InvariantToColumnRescaling) {
  Rng rng(2);
  const Matrix p = gaussian_matrix(rng, 12, 5, 1.0).cwiseAbs();
  Matrix q = p;
  q.col(1) *= 7.5;
  q.col(3) *= 1e-3;
  EXPECT_LT((plan_correlation(p).values - plan_correlation(q).values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PlanCorrelation, SymmetricUnitDiagonal) {
  Rng rng(3);
  const auto c = plan_correlation(gaussian_matrix(rng, 10, 6, 1.0).cwiseAbs());
  EXPECT_EQ(c.values, c.values.transpose());
  for (int i = 0; i < 6; ++i) EXPECT_EQ(c.values(i, i), 1.0);
}

TEST(PlanCorrelation, ZeroColumnIsFlagged) {
  Matrix p = Matrix::Ones(4, 3);
  p(1, 1) = 2.0;
  p.col(2).setZero();
  const auto c = plan_correlation(p);
  ASSERT_EQ(c.degenerate_columns.size(), 2u);  // column 0 has no spread, column 2 no mass
  EXPECT_EQ(c.values(2, 1), 0.0);
  EXPECT_THROW(plan_correlation(Matrix::Ones(4, 1)), InvalidArgument);
}

TEST(WithinSegment, AveragesOnlyPairsInsideBlocks) {
  Matrix c = Matrix::Identity(4, 4);
  c(0, 1) = c(1, 0) = 0.5;
  c(2, 3) = c(3, 2) = -0.25;
  c(0, 2) = c(2, 0) = 0.9;
  const std::vector<PlanBlock> blocks{{0, 4, 0, 2}, {4, 8, 2, 4}};
  EXPECT_NEAR(within_segment_mean_abs_correlation(c, blocks), 0.375, 1e-15);
  EXPECT_THROW(within_segment_mean_abs_correlation(c, {{0, 4, 0, 1}, {4, 8, 1, 2}}), DegenerateInput);
}

TEST(PlanSpectrum, KnownCases) {
  const auto flat = plan_spectrum(Matrix(Matrix::Identity(5, 5) / 5.0));
  EXPECT_NEAR(flat.erank, 5.0, 1e-12);
  EXPECT_NEAR(flat.normalized.sum(), 1.0, 1e-15);
  Rng rng(4);
  const Matrix rank1 = random_capacity(rng, 8) * Vector::Constant(4, 0.25).transpose();
  EXPECT_NEAR(plan_spectrum(rank1).erank, 1.0, 1e-9);
  EXPECT_THROW(plan_spectrum(Matrix::Zero(3, 2)), DegenerateInput);
}

TEST(PlanSpectrum, BlockDiagonalIsUnionOfBlocks) {
  Rng rng(5);
  const Matrix a = gaussian_matrix(rng, 6, 3, 1.0).cwiseAbs();
  const Matrix b = gaussian_matrix(rng, 4, 2, 1.0).cwiseAbs();
  Matrix p = Matrix::Zero(10, 5);
  p.topLeftCorner(6, 3) = a;
  p.bottomRightCorner(4, 2) = b;
  std::vector<double> expected;
  for (const Matrix* m : {&a, &b}) {
    const Vector s = singular_values(*m);
    expected.insert(expected.end(), s.data(), s.data() + s.size());
  }
  std::sort(expected.rbegin(), expected.rend());
  double total = 0;
  for (double x : expected) total += x;
  const auto spectrum = plan_spectrum(p);
  ASSERT_EQ(spectrum.normalized.size(), 5);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(spectrum.normalized[i], expected[i] / total, 1e-12);
  EXPECT_LE(spectrum.erank, 2.0 * 3.0);
}

TEST(PlanSpectrum, EffectiveRankWithinBounds) {
  Rng rng(6);
  for (int i = 0; i < 10; ++i) {
    const auto s = plan_spectrum(gaussian_matrix(rng, 12, 4, 1.0).cwiseAbs());
    EXPECT_GE(s.erank, 1.0);
    EXPECT_LE(s.erank, 4.0 + 1e-12);
  }
}

TEST(Export, WritesFilesThatRoundTripAtFloatPrecision) {
  Rng rng(7);
  const Matrix plan = gaussian_matrix(rng, 9, 3, 1.0).cwiseAbs();
  DiagReport r;
  r.correlation = plan_correlation(plan);
  r.spectrum = plan_spectrum(plan);
  r.gate_heatmap = Matrix(9, 2);
  for (int t = 0; t < 9; ++t) r.gate_heatmap.row(t) = softmax(gaussian_matrix(rng, 2, 1, 1.0).col(0)).transpose();
  r.meta = {{"config_hash", "abc123"}, {"seed", 17}};

  const fs::path dir = fresh_dir("nested") / "deeper";
  export_report(r, dir);
  for (const char* f : {"correlation.csv", "spectrum.csv", "gates.csv", "meta.json"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_EQ(float_rounded(read_csv(dir / "correlation.csv")), float_rounded(r.correlation.values));
  EXPECT_EQ(float_rounded(read_csv(dir / "gates.csv")), float_rounded(r.gate_heatmap));
  const Matrix spectrum = read_csv(dir / "spectrum.csv");
  ASSERT_EQ(spectrum.cols(), 1);
  EXPECT_EQ(float_rounded(spectrum), float_rounded(r.spectrum.normalized));
  for (int t = 0; t < 9; ++t) EXPECT_NEAR(read_csv(dir / "gates.csv").row(t).sum(), 1.0, 1e-6);

  std::ifstream in(dir / "meta.json");
  const auto meta = nlohmann::json::parse(in);
  EXPECT_EQ(meta["config_hash"], "abc123");
  EXPECT_EQ(meta["seed"], 17);
  EXPECT_EQ(meta["version"], version_string());
  EXPECT_NEAR(meta["erank"].get<double>(), r.spectrum.erank, 1e-15);
}

TEST(Export, UnwritableDirectoryIsIoError) {
  const fs::path file = fresh_dir("blocker");
  fs::create_directories(file.parent_path());
  std::ofstream(file) << "x";
  DiagReport r;
  r.correlation = plan_correlation(Matrix(Matrix::Identity(3, 3)));
  r.spectrum = plan_spectrum(Matrix(Matrix::Identity(3, 3)));
  r.gate_heatmap = Matrix::Constant(3, 1, 1.0);
  EXPECT_THROW(export_report(r, file / "sub"), IoError);
  fs::remove(file);
}

TEST(Csv, RejectsRaggedInput) {
  const fs::path dir = fresh_dir("csv");
  fs::create_directories(dir);
  std::ofstream(dir / "ragged.csv") << "1,2,3\n4,5\n";
  EXPECT_THROW(read_csv(dir / "ragged.csv"), ParseError);
  std::ofstream(dir / "junk.csv") << "1,abc\n";
  EXPECT_THROW(read_csv(dir / "junk.csv"), ParseError);
}

TEST(PlanJson, ListsBlocksWithValues) {
  TransmissionPlan p;
  p.plan = Matrix::Zero(4, 2);
  p.plan(0, 0) = p.plan(1, 0) = 0.25;
  p.plan(2, 1) = p.plan(3, 1) = 0.25;
  p.blocks = {{0, 2, 0, 1}, {2, 4, 1, 2}};
  const auto j = plan_to_json(p);
  EXPECT_EQ(j["rows"], 4);
  EXPECT_EQ(j["cols"], 2);
  ASSERT_EQ(j["blocks"].size(), 2u);
  EXPECT_EQ(j["blocks"][1]["token_range"], nlohmann::json::array({2, 4}));
  EXPECT_EQ(j["blocks"][1]["values"].size(), 2u);
}
