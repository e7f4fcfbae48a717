#pragma once

#include <vector>

#include "cxit/numerics.hpp"
#include "cxit/states.hpp"

namespace cxit {

struct DepthParams {
  Vector w_logits;               // L, structure prior before softmax
  Matrix W_c;                    // d x p, context projection
  std::vector<Matrix> W_layer;   // L matrices d x p (one when shared)
  std::vector<Vector> e_layer;   // L layer embeddings of length p
  Matrix W_a;                    // d x d_a, anchor projection
  double tau = 1.0;

  std::size_t num_layers() const noexcept { return static_cast<std::size_t>(w_logits.size()); }
  bool shared_layer_projection() const noexcept { return W_layer.size() == 1; }
  const Matrix& layer_projection(std::size_t l) const {
    return W_layer[shared_layer_projection() ? 0 : l];
  }
};

struct DepthShape {
  std::size_t num_layers = 4;
  std::size_t hidden_dim = 32;
  std::size_t gate_dim = 256;
  std::size_t anchor_dim = 32;
  bool shared_layer_projection = false;
  double tau = 1.0;
};

// Gaussian projections with stddev 1/sqrt(fan_in), except W_c which is further
// divided by sqrt(gate_dim) so initial gate scores are O(1). Zero layer
// embeddings and zero structure logits, so the initial prior is uniform.
DepthParams init_depth_params(const DepthShape& shape, Rng& rng);

struct TokenAnchors {
  Matrix anchors;      // N x d_a
  Matrix gates;        // N x L
  Matrix context_mix;  // N x d
};

Matrix mix_layers(const HiddenStates& h, const DepthParams& params);
Matrix gate_coefficients(const HiddenStates& h, const Matrix& mixed, const DepthParams& params);
TokenAnchors build_anchors(const HiddenStates& h, const DepthParams& params);

// Forward intermediates kept for the reverse pass.
struct DepthTrace {
  Vector prior;                    // softmax(w_logits)
  Matrix context_query;            // N x p, mixed * W_c
  std::vector<Matrix> layer_keys;  // L of N x p
  std::vector<Matrix> projected;   // L of N x d_a, H_l * W_a
  TokenAnchors out;
};

DepthTrace depth_forward(const HiddenStates& h, const DepthParams& params);

// Accumulates parameter gradients into `grad` given dLoss/dAnchors.
void depth_backward(const HiddenStates& h, const DepthParams& params, const DepthTrace& trace,
                    const Matrix& d_anchors, DepthParams& grad);

}  // namespace cxit
