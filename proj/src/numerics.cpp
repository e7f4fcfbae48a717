#include "cxit/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/SVD>

#include "cxit/error.hpp"

namespace cxit {

namespace {

std::uint64_t splitmix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

}  // namespace

std::uint64_t Rng::next_u64() {
  ++counter_;
  return splitmix(seed_ + counter_ * kGolden);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) throw InvalidArgument("Rng::below: bound must be positive");
  // Rejection keeps the result unbiased.
  const std::uint64_t limit = (~std::uint64_t{0} / bound) * bound;
  for (;;) {
    const std::uint64_t x = next_u64();
    if (x < limit) return x % bound;
  }
}

double Rng::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

Rng Rng::substream(std::string_view label) const {
  return Rng(splitmix(seed_ ^ splitmix(fnv1a64(label))));
}

Rng Rng::substream(std::uint64_t index) const {
  return Rng(splitmix(seed_ ^ splitmix(index * kGolden + 0x632be59bd9b4e019ULL)));
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Matrix gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = stddev * rng.gaussian();
  return m;
}

Vector softmax(const Vector& values, double temperature) {
  if (values.size() == 0) throw InvalidArgument("softmax: empty vector");
  if (!(temperature > 0.0)) throw InvalidArgument("softmax: temperature must be positive");
  const double peak = values.maxCoeff();
  Vector out = ((values.array() - peak) / temperature).exp();
  out /= out.sum();
  return out;
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("log_sum_exp: empty input");
  const double peak = *std::max_element(values.begin(), values.end());
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - peak);
  return peak + std::log(acc);
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

Vector singular_values(const Matrix& m) {
  if (m.rows() < 1 || m.cols() < 1) throw InvalidArgument("singular_values: empty matrix");
  if (!m.allFinite()) throw InvalidArgument("singular_values: non-finite entry");
  // Two-sided Jacobi converges to full relative accuracy, including tiny values.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  Vector sigma = svd.singularValues().cwiseMax(0.0);
  std::sort(sigma.data(), sigma.data() + sigma.size(), std::greater<>());
  return sigma;
}

double effective_rank_from_spectrum(const Vector& sigma) {
  const double total = sigma.sum();
  if (!(total > 0.0)) throw DegenerateInput("effective_rank: all singular values are zero");
  double entropy = 0.0;
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    const double p = sigma[i] / total;
    if (p > 0.0) entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

double effective_rank(const Matrix& m) { return effective_rank_from_spectrum(singular_values(m)); }

Correlation pearson_rows(const Matrix& m) {
  if (m.cols() < 2) throw InvalidArgument("pearson_rows: need at least two columns");
  const Eigen::Index n = m.rows();
  Matrix centered = m.colwise() - m.rowwise().mean();
  Vector norms = centered.rowwise().norm();
  Correlation out{Matrix::Zero(n, n), {}};
  for (Eigen::Index i = 0; i < n; ++i) {
    // Relative threshold so constant rows with rounding noise still count as constant.
    const double scale = m.row(i).cwiseAbs().maxCoeff();
    if (!(norms[i] > 1e-14 * std::max(scale, 1e-300))) out.degenerate_rows.push_back(i);
  }
  auto degenerate = [&](Eigen::Index i) {
    return std::find(out.degenerate_rows.begin(), out.degenerate_rows.end(), i) !=
           out.degenerate_rows.end();
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values(i, i) = 1.0;
    if (degenerate(i)) continue;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (degenerate(j)) continue;
      double r = centered.row(i).dot(centered.row(j)) / (norms[i] * norms[j]);
      r = std::clamp(r, -1.0, 1.0);
      out.values(i, j) = r;
      out.values(j, i) = r;
    }
  }
  return out;
}

Vector finite_diff_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                            double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite_diff_gradient: step must be positive");
  Vector grad(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down))
      throw EvaluationFailure(static_cast<std::size_t>(i), "non-finite function value");
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace cxit
