#pragma once

#include <cstddef>
#include <vector>

#include "cxit/depth.hpp"
#include "cxit/numerics.hpp"

namespace cxit {

struct WidthParams {
  Matrix W_u;    // d_a x d_u, shared sender/receiver projection
  Vector w_rho;  // d_a, capacity head
  double epsilon = 0.05;
  std::size_t segment_len = 128;
  std::size_t sinkhorn_iters = 30;
  std::size_t ratio = 4;

  void validate() const;
};

struct WidthShape {
  std::size_t anchor_dim = 32;
  std::size_t utility_dim = 256;
  double epsilon = 0.05;
  std::size_t segment_len = 128;
  std::size_t sinkhorn_iters = 30;
  std::size_t ratio = 4;
};

WidthParams init_width_params(const WidthShape& shape, Rng& rng);

enum class Allocation { Transport, WindowAttention };

// One diagonal block of the plan: tokens [token_begin, token_end) send only
// to slots [slot_begin, slot_end).
struct PlanBlock {
  std::size_t token_begin = 0, token_end = 0;
  std::size_t slot_begin = 0, slot_end = 0;

  std::size_t tokens() const noexcept { return token_end - token_begin; }
  std::size_t slots() const noexcept { return slot_end - slot_begin; }
  bool operator==(const PlanBlock&) const = default;
};

// Consecutive segments of `segment_len` tokens (the last may be shorter),
// each owning ceil(tokens / ratio) slots.
std::vector<PlanBlock> segment_layout(std::size_t seq_len, std::size_t segment_len, std::size_t ratio);
std::size_t num_slots(std::size_t seq_len, std::size_t segment_len, std::size_t ratio);

// Contiguous near-equal partition of n tokens into k fields; earlier fields
// take the extra token. Returns k+1 boundaries.
std::vector<std::size_t> field_bounds(std::size_t n, std::size_t k);

struct TransmissionPlan {
  Matrix plan;  // N x K
  std::vector<PlanBlock> blocks;
  Vector sender_marginals;    // N
  Vector receiver_marginals;  // K
  double row_residual = 0.0;  // worst |row_sum - sender marginal| over blocks
};

// Field means of the anchor rows, K x d_a.
Matrix build_receivers(const Matrix& anchors, std::size_t num_slots);
Matrix build_receivers(const TokenAnchors& anchors, std::size_t num_slots);

// Cosine similarity between W_u-projected anchors and receivers, N x K.
// A projection with norm below 1e-12 has cosine 0 against everything.
Matrix utility_matrix(const Matrix& anchors, const Matrix& receivers, const WidthParams& params);

// Softmax of W_rho-projected anchors over tokens [begin, end).
Vector sender_capacities(const Matrix& anchors, const WidthParams& params, std::size_t begin,
                         std::size_t end);

struct SinkhornResult {
  Matrix plan;
  double row_residual = 0.0;
};

// Log-domain Sinkhorn: each iteration rescales rows then columns, so column
// marginals are exact on return and rows carry the reported residual.
SinkhornResult sinkhorn_plan(const Matrix& cost, const Vector& row_marginals,
                             const Vector& col_marginals, double epsilon, std::size_t iters);

// Everything the reverse pass needs from one Sinkhorn solve.
struct SinkhornTrace {
  Matrix log_kernel;  // -cost / epsilon
  std::vector<Matrix> row_soft;  // per iteration, row-wise softmax of log_kernel + b
  std::vector<Matrix> col_soft;  // per iteration, column-wise softmax of log_kernel + a
  Matrix plan;
  double row_residual = 0.0;
};

SinkhornTrace sinkhorn_traced(const Matrix& cost, const Vector& row_marginals,
                              const Vector& col_marginals, double epsilon, std::size_t iters);

struct SinkhornGrad {
  Matrix d_log_kernel;
  Vector d_log_row_marginals;
};

// Reverse pass through the unrolled iterations.
SinkhornGrad sinkhorn_backward(const SinkhornTrace& trace, const Matrix& d_plan);

TransmissionPlan segmented_plan(const TokenAnchors& anchors, const WidthParams& params);
TransmissionPlan window_attention_baseline(const TokenAnchors& anchors, const WidthParams& params);

struct SegmentTrace {
  Matrix sender_proj;    // N_seg x d_u
  Matrix receiver_proj;  // K_seg x d_u
  Vector sender_norms, receiver_norms;
  Matrix utility;
  Vector capacity;
  SinkhornTrace sinkhorn;  // Transport only
  Matrix window_soft;      // WindowAttention only: per-field softmax, N_seg x K_seg
};

struct WidthTrace {
  Allocation mode = Allocation::Transport;
  std::vector<SegmentTrace> segments;
  TransmissionPlan plan;
};

WidthTrace width_forward(const Matrix& anchors, const WidthParams& params, Allocation mode);

// Accumulates W_u / w_rho gradients into `grad`; returns dLoss/dAnchors.
Matrix width_backward(const Matrix& anchors, const WidthParams& params, const WidthTrace& trace,
                      const Matrix& d_plan, WidthParams& grad);

}  // namespace cxit
