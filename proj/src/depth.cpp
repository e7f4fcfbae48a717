#include "cxit/depth.hpp"

#include <cmath>

#include "cxit/error.hpp"

namespace cxit {

namespace {

void check_shapes(const HiddenStates& h, const DepthParams& p) {
  const auto L = h.num_layers();
  const auto d = static_cast<Eigen::Index>(h.hidden_dim());
  if (p.num_layers() != L)
    throw InvalidArgument("depth: structure prior has " + std::to_string(p.num_layers()) +
                          " entries, states have " + std::to_string(L) + " layers");
  if (p.W_c.rows() != d) throw InvalidArgument("depth: W_c rows must equal hidden dim");
  if (p.W_layer.size() != L && p.W_layer.size() != 1)
    throw InvalidArgument("depth: need one W_layer per layer or a single shared one");
  if (p.e_layer.size() != L) throw InvalidArgument("depth: need one layer embedding per layer");
  for (const auto& w : p.W_layer)
    if (w.rows() != d || w.cols() != p.W_c.cols())
      throw InvalidArgument("depth: W_layer shape must match W_c");
  for (const auto& e : p.e_layer)
    if (e.size() != p.W_c.cols()) throw InvalidArgument("depth: layer embedding length must equal gate dim");
  if (p.W_a.rows() != d) throw InvalidArgument("depth: W_a rows must equal hidden dim");
  if (!(p.tau > 0.0)) throw InvalidArgument("depth: tau must be positive");
}

}  // namespace

DepthParams init_depth_params(const DepthShape& s, Rng& rng) {
  const auto d = static_cast<Eigen::Index>(s.hidden_dim);
  const auto p = static_cast<Eigen::Index>(s.gate_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(s.hidden_dim));
  DepthParams out;
  out.w_logits = Vector::Zero(static_cast<Eigen::Index>(s.num_layers));
  // The score is an unscaled p-term dot product; shrinking W_c by 1/sqrt(p)
  // keeps its spread O(1) so the initial gates stay close to uniform.
  out.W_c = gaussian_matrix(rng, d, p, scale / std::sqrt(static_cast<double>(s.gate_dim)));
  const std::size_t projections = s.shared_layer_projection ? 1 : s.num_layers;
  for (std::size_t l = 0; l < projections; ++l) out.W_layer.push_back(gaussian_matrix(rng, d, p, scale));
  out.e_layer.assign(s.num_layers, Vector::Zero(p));
  out.W_a = gaussian_matrix(rng, d, static_cast<Eigen::Index>(s.anchor_dim), scale);
  out.tau = s.tau;
  return out;
}

Matrix mix_layers(const HiddenStates& h, const DepthParams& params) {
  check_shapes(h, params);
  const Vector prior = softmax(params.w_logits);
  Matrix mixed = prior[0] * h.layer(0);
  for (std::size_t l = 1; l < h.num_layers(); ++l) mixed += prior[static_cast<Eigen::Index>(l)] * h.layer(l);
  return mixed;
}

Matrix gate_coefficients(const HiddenStates& h, const Matrix& mixed, const DepthParams& params) {
  check_shapes(h, params);
  if (mixed.rows() != h.layer(0).rows() || mixed.cols() != h.layer(0).cols())
    throw InvalidArgument("gate_coefficients: mixed context shape mismatch");
  const auto N = mixed.rows();
  const auto L = static_cast<Eigen::Index>(h.num_layers());
  const Matrix query = mixed * params.W_c;
  Matrix scores(N, L);
  for (Eigen::Index l = 0; l < L; ++l) {
    Matrix keys = h.layer(static_cast<std::size_t>(l)) * params.layer_projection(static_cast<std::size_t>(l));
    keys.rowwise() += params.e_layer[static_cast<std::size_t>(l)].transpose();
    scores.col(l) = query.cwiseProduct(keys).rowwise().sum();
  }
  Matrix gates(N, L);
  for (Eigen::Index t = 0; t < N; ++t) gates.row(t) = softmax(scores.row(t).transpose(), params.tau).transpose();
  return gates;
}

DepthTrace depth_forward(const HiddenStates& h, const DepthParams& params) {
  check_shapes(h, params);
  const std::size_t L = h.num_layers();
  DepthTrace tr;
  tr.prior = softmax(params.w_logits);
  tr.out.context_mix = tr.prior[0] * h.layer(0);
  for (std::size_t l = 1; l < L; ++l) tr.out.context_mix += tr.prior[static_cast<Eigen::Index>(l)] * h.layer(l);
  tr.context_query = tr.out.context_mix * params.W_c;

  const auto N = tr.context_query.rows();
  Matrix scores(N, static_cast<Eigen::Index>(L));
  for (std::size_t l = 0; l < L; ++l) {
    Matrix keys = h.layer(l) * params.layer_projection(l);
    keys.rowwise() += params.e_layer[l].transpose();
    scores.col(static_cast<Eigen::Index>(l)) = tr.context_query.cwiseProduct(keys).rowwise().sum();
    tr.layer_keys.push_back(std::move(keys));
    tr.projected.push_back(h.layer(l) * params.W_a);
  }
  tr.out.gates.resize(N, static_cast<Eigen::Index>(L));
  for (Eigen::Index t = 0; t < N; ++t)
    tr.out.gates.row(t) = softmax(scores.row(t).transpose(), params.tau).transpose();

  tr.out.anchors = Matrix::Zero(N, params.W_a.cols());
  for (std::size_t l = 0; l < L; ++l)
    tr.out.anchors += tr.out.gates.col(static_cast<Eigen::Index>(l)).asDiagonal() * tr.projected[l];
  return tr;
}

TokenAnchors build_anchors(const HiddenStates& h, const DepthParams& params) {
  return depth_forward(h, params).out;
}

void depth_backward(const HiddenStates& h, const DepthParams& params, const DepthTrace& tr,
                    const Matrix& d_anchors, DepthParams& grad) {
  const std::size_t L = h.num_layers();
  const auto N = d_anchors.rows();
  const Matrix& gates = tr.out.gates;

  // Anchor sum: anchors = sum_l diag(gates_l) H_l W_a.
  Matrix d_gates(N, static_cast<Eigen::Index>(L));
  for (std::size_t l = 0; l < L; ++l) {
    const auto li = static_cast<Eigen::Index>(l);
    d_gates.col(li) = d_anchors.cwiseProduct(tr.projected[l]).rowwise().sum();
    grad.W_a.noalias() += h.layer(l).transpose() * (gates.col(li).asDiagonal() * d_anchors);
  }

  // Row softmax with temperature.
  Matrix d_scores(N, static_cast<Eigen::Index>(L));
  for (Eigen::Index t = 0; t < N; ++t) {
    const double inner = gates.row(t).dot(d_gates.row(t));
    d_scores.row(t) = gates.row(t).cwiseProduct((d_gates.row(t).array() - inner).matrix()) / params.tau;
  }

  Matrix d_query = Matrix::Zero(N, params.W_c.cols());
  for (std::size_t l = 0; l < L; ++l) {
    const auto li = static_cast<Eigen::Index>(l);
    d_query += d_scores.col(li).asDiagonal() * tr.layer_keys[l];
    const Matrix d_keys = d_scores.col(li).asDiagonal() * tr.context_query;
    grad.W_layer[params.shared_layer_projection() ? 0 : l].noalias() += h.layer(l).transpose() * d_keys;
    grad.e_layer[l] += d_keys.colwise().sum().transpose();
  }
  grad.W_c.noalias() += tr.out.context_mix.transpose() * d_query;

  const Matrix d_mix = d_query * params.W_c.transpose();
  Vector d_prior(static_cast<Eigen::Index>(L));
  for (std::size_t l = 0; l < L; ++l) d_prior[static_cast<Eigen::Index>(l)] = d_mix.cwiseProduct(h.layer(l)).sum();
  const double inner = tr.prior.dot(d_prior);
  grad.w_logits += tr.prior.cwiseProduct((d_prior.array() - inner).matrix());
}

}  // namespace cxit
