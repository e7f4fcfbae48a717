#include "cxit/width.hpp"

#include <cmath>

#include "cxit/error.hpp"

namespace cxit {

namespace {

constexpr double kNormFloor = 1e-12;

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

void check_marginal(const Vector& m, const char* which) {
  if (m.size() == 0) throw InvalidArgument(std::string("sinkhorn: empty ") + which + " marginal");
  if (!(m.array() > 0.0).all() || !m.allFinite())
    throw InvalidArgument(std::string("sinkhorn: ") + which + " marginal must be strictly positive");
  if (std::abs(m.sum() - 1.0) > 1e-9)
    throw InvalidArgument(std::string("sinkhorn: ") + which + " marginal must sum to 1");
}

// Row-wise softmax of `logits`; writes log-normalizers into `lse`.
Matrix row_softmax(const Matrix& logits, Vector& lse) {
  const Vector peak = logits.rowwise().maxCoeff();
  Matrix e = (logits.colwise() - peak).array().exp().matrix();
  const Vector sum = e.rowwise().sum();
  lse = peak.array() + sum.array().log();
  return sum.cwiseInverse().asDiagonal() * e;
}

Matrix col_softmax(const Matrix& logits, Vector& lse) {
  const Eigen::RowVectorXd peak = logits.colwise().maxCoeff();
  Matrix e = (logits.rowwise() - peak).array().exp().matrix();
  const Eigen::RowVectorXd sum = e.colwise().sum();
  lse = (peak.array() + sum.array().log()).transpose();
  return e * sum.cwiseInverse().asDiagonal();
}

Vector normalize_rows(const Matrix& m, Matrix& unit) {
  Vector norms = m.rowwise().norm();
  unit = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (norms[i] < kNormFloor) unit.row(i).setZero();
    else unit.row(i) /= norms[i];
  }
  return norms;
}

// Averages anchor rows inside each field: receivers = F * anchors.
Matrix field_means(const Matrix& rows, std::size_t k) {
  const auto bounds = field_bounds(static_cast<std::size_t>(rows.rows()), k);
  Matrix out(idx(k), rows.cols());
  for (std::size_t f = 0; f < k; ++f) {
    const auto len = idx(bounds[f + 1] - bounds[f]);
    out.row(idx(f)) = rows.middleRows(idx(bounds[f]), len).colwise().sum() / static_cast<double>(len);
  }
  return out;
}

// Adjoint of field_means.
void field_means_backward(const Matrix& d_out, std::size_t n, Matrix& d_rows) {
  const auto k = static_cast<std::size_t>(d_out.rows());
  const auto bounds = field_bounds(n, k);
  for (std::size_t f = 0; f < k; ++f) {
    const double len = static_cast<double>(bounds[f + 1] - bounds[f]);
    for (std::size_t t = bounds[f]; t < bounds[f + 1]; ++t) d_rows.row(idx(t)) += d_out.row(idx(f)) / len;
  }
}

void check_anchor_shapes(const Matrix& anchors, const WidthParams& params) {
  params.validate();
  if (params.W_u.rows() != anchors.cols())
    throw InvalidArgument("width: W_u rows must equal anchor dim");
  if (params.w_rho.size() != anchors.cols())
    throw InvalidArgument("width: W_rho length must equal anchor dim");
}

}  // namespace

void WidthParams::validate() const {
  if (!(epsilon > 0.0)) throw InvalidArgument("width: epsilon must be positive");
  if (ratio == 0) throw InvalidArgument("width: ratio must be at least 1");
  if (segment_len < ratio) throw InvalidArgument("width: segment length must be at least the ratio");
  if (segment_len % ratio != 0) throw InvalidArgument("width: segment length must be divisible by the ratio");
  if (sinkhorn_iters == 0) throw InvalidArgument("width: need at least one Sinkhorn iteration");
}

WidthParams init_width_params(const WidthShape& s, Rng& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(s.anchor_dim));
  WidthParams p;
  p.W_u = gaussian_matrix(rng, idx(s.anchor_dim), idx(s.utility_dim), scale);
  p.w_rho = gaussian_matrix(rng, idx(s.anchor_dim), 1, scale).col(0);
  p.epsilon = s.epsilon;
  p.segment_len = s.segment_len;
  p.sinkhorn_iters = s.sinkhorn_iters;
  p.ratio = s.ratio;
  p.validate();
  return p;
}

std::vector<PlanBlock> segment_layout(std::size_t seq_len, std::size_t segment_len, std::size_t ratio) {
  if (ratio == 0 || segment_len == 0) throw InvalidArgument("segment_layout: zero segment length or ratio");
  if (seq_len < ratio)
    throw InvalidArgument("segment_layout: sequence length " + std::to_string(seq_len) +
                          " is shorter than the ratio " + std::to_string(ratio));
  std::vector<PlanBlock> blocks;
  std::size_t slot = 0;
  for (std::size_t begin = 0; begin < seq_len; begin += segment_len) {
    const std::size_t end = std::min(seq_len, begin + segment_len);
    const std::size_t k = (end - begin + ratio - 1) / ratio;
    blocks.push_back({begin, end, slot, slot + k});
    slot += k;
  }
  return blocks;
}

std::size_t num_slots(std::size_t seq_len, std::size_t segment_len, std::size_t ratio) {
  return segment_layout(seq_len, segment_len, ratio).back().slot_end;
}

std::vector<std::size_t> field_bounds(std::size_t n, std::size_t k) {
  if (k == 0 || k > n)
    throw InvalidArgument("field partition: need 1 <= K <= N, got K=" + std::to_string(k) +
                          " N=" + std::to_string(n));
  const std::size_t base = n / k;
  const std::size_t extra = n % k;
  std::vector<std::size_t> bounds{0};
  for (std::size_t f = 0; f < k; ++f) bounds.push_back(bounds.back() + base + (f < extra ? 1 : 0));
  return bounds;
}

Matrix build_receivers(const Matrix& anchors, std::size_t num_slots) {
  if (num_slots == 0 || num_slots > static_cast<std::size_t>(anchors.rows()))
    throw InvalidArgument("build_receivers: need 1 <= K <= N, got K=" + std::to_string(num_slots) +
                          " N=" + std::to_string(anchors.rows()));
  return field_means(anchors, num_slots);
}

Matrix build_receivers(const TokenAnchors& anchors, std::size_t num_slots) {
  return build_receivers(anchors.anchors, num_slots);
}

Matrix utility_matrix(const Matrix& anchors, const Matrix& receivers, const WidthParams& params) {
  if (params.W_u.rows() != anchors.cols() || receivers.cols() != anchors.cols())
    throw InvalidArgument("utility_matrix: dimension mismatch");
  Matrix su, ru;
  normalize_rows(anchors * params.W_u, su);
  normalize_rows(receivers * params.W_u, ru);
  return su * ru.transpose();
}

Vector sender_capacities(const Matrix& anchors, const WidthParams& params, std::size_t begin,
                         std::size_t end) {
  if (begin >= end || end > static_cast<std::size_t>(anchors.rows()))
    throw InvalidArgument("sender_capacities: empty or out-of-range segment");
  if (params.w_rho.size() != anchors.cols()) throw InvalidArgument("sender_capacities: W_rho length mismatch");
  return softmax(anchors.middleRows(idx(begin), idx(end - begin)) * params.w_rho);
}

SinkhornTrace sinkhorn_traced(const Matrix& cost, const Vector& row_marginals,
                              const Vector& col_marginals, double epsilon, std::size_t iters) {
  if (!cost.allFinite()) throw InvalidArgument("sinkhorn: non-finite cost");
  if (cost.rows() != row_marginals.size() || cost.cols() != col_marginals.size())
    throw InvalidArgument("sinkhorn: marginal lengths do not match the cost matrix");
  if (!(epsilon > 0.0)) throw InvalidArgument("sinkhorn: epsilon must be positive");
  if (iters == 0) throw InvalidArgument("sinkhorn: need at least one iteration");
  check_marginal(row_marginals, "row");
  check_marginal(col_marginals, "column");

  SinkhornTrace tr;
  tr.log_kernel = -cost / epsilon;
  const Vector log_row = row_marginals.array().log();
  const Vector log_col = col_marginals.array().log();
  Vector a = Vector::Zero(cost.rows());
  Vector b = Vector::Zero(cost.cols());
  Vector lse;
  tr.row_soft.reserve(iters);
  tr.col_soft.reserve(iters);
  for (std::size_t it = 0; it < iters; ++it) {
    tr.row_soft.push_back(row_softmax(tr.log_kernel.rowwise() + b.transpose(), lse));
    a = log_row - lse;
    tr.col_soft.push_back(col_softmax(tr.log_kernel.colwise() + a, lse));
    b = log_col - lse;
  }
  // Column-normalized: plan = diag(a) K diag(b) with exact column sums.
  tr.plan = tr.col_soft.back() * col_marginals.asDiagonal();
  tr.row_residual = (tr.plan.rowwise().sum() - row_marginals).cwiseAbs().maxCoeff();
  return tr;
}

SinkhornResult sinkhorn_plan(const Matrix& cost, const Vector& row_marginals,
                             const Vector& col_marginals, double epsilon, std::size_t iters) {
  SinkhornTrace tr = sinkhorn_traced(cost, row_marginals, col_marginals, epsilon, iters);
  return {std::move(tr.plan), tr.row_residual};
}

SinkhornGrad sinkhorn_backward(const SinkhornTrace& tr, const Matrix& d_plan) {
  const Matrix g = d_plan.cwiseProduct(tr.plan);
  SinkhornGrad out{g, Vector::Zero(tr.plan.rows())};
  Vector da = g.rowwise().sum();
  Vector db = g.colwise().sum().transpose();
  for (std::size_t it = tr.row_soft.size(); it-- > 0;) {
    // b = log_col - LSE_t(K + a)
    const Matrix& cs = tr.col_soft[it];
    out.d_log_kernel.noalias() -= cs * db.asDiagonal();
    da.noalias() -= cs * db;
    // a = log_row - LSE_k(K + b_prev)
    const Matrix& rs = tr.row_soft[it];
    out.d_log_row_marginals += da;
    out.d_log_kernel.noalias() -= da.asDiagonal() * rs;
    db.noalias() = -rs.transpose() * da;
    da.setZero();
  }
  return out;
}

WidthTrace width_forward(const Matrix& anchors, const WidthParams& params, Allocation mode) {
  check_anchor_shapes(anchors, params);
  const auto N = static_cast<std::size_t>(anchors.rows());
  WidthTrace tr;
  tr.mode = mode;
  tr.plan.blocks = segment_layout(N, params.segment_len, params.ratio);
  const std::size_t K = tr.plan.blocks.back().slot_end;
  tr.plan.plan = Matrix::Zero(idx(N), idx(K));
  tr.plan.sender_marginals = Vector::Zero(idx(N));
  tr.plan.receiver_marginals = Vector::Zero(idx(K));
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(params.W_u.cols()));

  for (const PlanBlock& blk : tr.plan.blocks) {
    SegmentTrace seg;
    const auto n = blk.tokens();
    const auto k = blk.slots();
    const auto x = anchors.middleRows(idx(blk.token_begin), idx(n));
    seg.sender_proj = x * params.W_u;
    seg.receiver_proj = field_means(seg.sender_proj, k);
    const Vector col_marg = Vector::Constant(idx(k), 1.0 / static_cast<double>(k));
    Matrix block;

    if (mode == Allocation::Transport) {
      Matrix su, ru;
      seg.sender_norms = normalize_rows(seg.sender_proj, su);
      seg.receiver_norms = normalize_rows(seg.receiver_proj, ru);
      seg.utility = su * ru.transpose();
      if (!seg.utility.allFinite()) throw DivergenceError("width: non-finite utility");
      seg.capacity = softmax(x * params.w_rho);
      seg.sinkhorn = sinkhorn_traced((1.0 - seg.utility.array()).matrix(), seg.capacity, col_marg,
                                     params.epsilon, params.sinkhorn_iters);
      block = seg.sinkhorn.plan;
      tr.plan.row_residual = std::max(tr.plan.row_residual, seg.sinkhorn.row_residual);
      tr.plan.sender_marginals.segment(idx(blk.token_begin), idx(n)) = seg.capacity;
    } else {
      const auto bounds = field_bounds(n, k);
      seg.window_soft = Matrix::Zero(idx(n), idx(k));
      for (std::size_t f = 0; f < k; ++f) {
        const auto len = idx(bounds[f + 1] - bounds[f]);
        const Vector logits =
            seg.sender_proj.middleRows(idx(bounds[f]), len) * seg.receiver_proj.row(idx(f)).transpose() *
            attn_scale;
        seg.window_soft.block(idx(bounds[f]), idx(f), len, 1) = softmax(logits);
      }
      block = seg.window_soft / static_cast<double>(k);
      tr.plan.sender_marginals.segment(idx(blk.token_begin), idx(n)) = block.rowwise().sum();
    }
    tr.plan.plan.block(idx(blk.token_begin), idx(blk.slot_begin), idx(n), idx(k)) = block;
    tr.plan.receiver_marginals.segment(idx(blk.slot_begin), idx(k)) = col_marg;
    tr.segments.push_back(std::move(seg));
  }
  return tr;
}

TransmissionPlan segmented_plan(const TokenAnchors& anchors, const WidthParams& params) {
  return width_forward(anchors.anchors, params, Allocation::Transport).plan;
}

TransmissionPlan window_attention_baseline(const TokenAnchors& anchors, const WidthParams& params) {
  return width_forward(anchors.anchors, params, Allocation::WindowAttention).plan;
}

Matrix width_backward(const Matrix& anchors, const WidthParams& params, const WidthTrace& tr,
                      const Matrix& d_plan, WidthParams& grad) {
  Matrix d_anchors = Matrix::Zero(anchors.rows(), anchors.cols());
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(params.W_u.cols()));

  for (std::size_t s = 0; s < tr.plan.blocks.size(); ++s) {
    const PlanBlock& blk = tr.plan.blocks[s];
    const SegmentTrace& seg = tr.segments[s];
    const auto n = blk.tokens();
    const auto k = blk.slots();
    const auto x = anchors.middleRows(idx(blk.token_begin), idx(n));
    const Matrix d_block = d_plan.block(idx(blk.token_begin), idx(blk.slot_begin), idx(n), idx(k));
    Matrix d_sender = Matrix::Zero(idx(n), seg.sender_proj.cols());
    Matrix d_receiver = Matrix::Zero(idx(k), seg.sender_proj.cols());
    auto d_x = d_anchors.middleRows(idx(blk.token_begin), idx(n));

    if (tr.mode == Allocation::Transport) {
      const SinkhornGrad sg = sinkhorn_backward(seg.sinkhorn, d_block);
      // log_kernel = (utility - 1) / epsilon
      const Matrix d_util = sg.d_log_kernel / params.epsilon;

      // Capacity: log rho = logits - LSE(logits).
      const Vector d_logits =
          sg.d_log_row_marginals - seg.capacity * sg.d_log_row_marginals.sum();
      grad.w_rho.noalias() += x.transpose() * d_logits;
      d_x.noalias() += d_logits * params.w_rho.transpose();

      // Cosine: U = s_hat r_hat^T, rows with a vanishing projection are constant.
      const Vector inv_s = seg.sender_norms.unaryExpr([](double v) { return v < kNormFloor ? 0.0 : 1.0 / v; });
      const Vector inv_r = seg.receiver_norms.unaryExpr([](double v) { return v < kNormFloor ? 0.0 : 1.0 / v; });
      const Matrix s_hat = inv_s.asDiagonal() * seg.sender_proj;
      const Matrix r_hat = inv_r.asDiagonal() * seg.receiver_proj;
      const Matrix gu = d_util.cwiseProduct(seg.utility);
      d_sender.noalias() = inv_s.asDiagonal() * (d_util * r_hat);
      d_sender.noalias() -= (inv_s.cwiseProduct(gu.rowwise().sum())).asDiagonal() * s_hat;
      d_receiver.noalias() = inv_r.asDiagonal() * (d_util.transpose() * s_hat);
      d_receiver.noalias() -= (inv_r.cwiseProduct(gu.colwise().sum().transpose())).asDiagonal() * r_hat;
    } else {
      const auto bounds = field_bounds(n, k);
      for (std::size_t f = 0; f < k; ++f) {
        const auto begin = idx(bounds[f]);
        const auto len = idx(bounds[f + 1] - bounds[f]);
        const Vector w = seg.window_soft.block(begin, idx(f), len, 1);
        const Vector dw = d_block.block(begin, idx(f), len, 1) / static_cast<double>(k);
        const Vector d_logit = w.cwiseProduct((dw.array() - w.dot(dw)).matrix()) * attn_scale;
        d_sender.middleRows(begin, len).noalias() += d_logit * seg.receiver_proj.row(idx(f));
        d_receiver.row(idx(f)).noalias() +=
            d_logit.transpose() * seg.sender_proj.middleRows(begin, len);
      }
    }
    field_means_backward(d_receiver, n, d_sender);
    grad.W_u.noalias() += x.transpose() * d_sender;
    d_x.noalias() += d_sender * params.W_u.transpose();
  }
  return d_anchors;
}

}  // namespace cxit
