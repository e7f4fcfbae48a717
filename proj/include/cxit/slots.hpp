#pragma once

#include "cxit/depth.hpp"
#include "cxit/width.hpp"

namespace cxit {

struct SlotParams {
  Matrix W_g;     // d_a x d_a
  Matrix mlp_W1;  // d_a x m
  Vector mlp_b1;  // m
  Matrix mlp_W2;  // m x d_dec
  Vector mlp_b2;  // d_dec
};

struct SlotShape {
  std::size_t anchor_dim = 32;
  std::size_t mlp_hidden = 256;
  std::size_t decoder_dim = 32;
};

SlotParams init_slot_params(const SlotShape& shape, Rng& rng);

struct CompressedSlots {
  Matrix raw;      // K x d_a
  Matrix aligned;  // K x d_dec
};

// z_k = sum_t plan(t, k) * W_g^T anchor_t
Matrix aggregate_slots(const Matrix& anchors, const TransmissionPlan& plan, const SlotParams& params);
Matrix aggregate_slots(const TokenAnchors& anchors, const TransmissionPlan& plan, const SlotParams& params);

// Row-wise two-layer tanh MLP.
Matrix align(const Matrix& raw, const SlotParams& params);

struct CompressionParams {
  DepthParams depth;
  WidthParams width;
  SlotParams slot;
};

struct CompressionResult {
  CompressedSlots slots;
  TokenAnchors anchors;
  TransmissionPlan plan;
};

CompressionResult compress(const HiddenStates& h, const CompressionParams& params,
                           Allocation mode = Allocation::Transport);

struct SlotTrace {
  Matrix projected;  // N x d_a, anchors * W_g
  Matrix hidden;     // K x m, tanh activations
  CompressedSlots out;
};

SlotTrace slot_forward(const Matrix& anchors, const Matrix& plan, const SlotParams& params);

struct SlotBackward {
  Matrix d_anchors;
  Matrix d_plan;  // dense N x K; callers read only the declared blocks
};

SlotBackward slot_backward(const Matrix& anchors, const Matrix& plan, const SlotParams& params,
                           const SlotTrace& trace, const Matrix& d_aligned, SlotParams& grad);

}  // namespace cxit
