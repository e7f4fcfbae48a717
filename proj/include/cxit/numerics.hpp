#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace cxit {

// Row-major dense storage shared by every module.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Counter-based generator: draw i is mix(seed, i), so any stream position can
// be reproduced without replaying earlier draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer in [0, bound); bound > 0.
  std::uint64_t below(std::uint64_t bound);
  double gaussian();

  // Independent stream keyed by a label, e.g. rng.substream("depth").
  Rng substream(std::string_view label) const;
  Rng substream(std::uint64_t index) const;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t fnv1a64(std::string_view bytes);

Matrix gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev);

Vector softmax(const Vector& values, double temperature = 1.0);
double log_sum_exp(std::span<const double> values);

// Nonincreasing singular values, length min(rows, cols).
Vector singular_values(const Matrix& m);

// exp of the Shannon entropy of the L1-normalized singular spectrum.
double effective_rank(const Matrix& m);
double effective_rank_from_spectrum(const Vector& sigma);

struct Correlation {
  Matrix values;
  // Rows whose variance vanished; their off-diagonal entries are 0.
  std::vector<Eigen::Index> degenerate_rows;
};

Correlation pearson_rows(const Matrix& m);

// Central differences at 64-bit. Throws EvaluationFailure naming the coordinate.
Vector finite_diff_gradient(const std::function<double(const Vector&)>& f,
                            const Vector& x, double h);

bool all_finite(const Matrix& m);

}  // namespace cxit
