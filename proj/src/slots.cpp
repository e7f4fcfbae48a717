#include "cxit/slots.hpp"

#include <cmath>

#include "cxit/error.hpp"

namespace cxit {

namespace {

void check_aggregate(const Matrix& anchors, const Matrix& plan, const SlotParams& p) {
  if (plan.rows() != anchors.rows())
    throw InvalidArgument("aggregate_slots: plan has " + std::to_string(plan.rows()) +
                          " rows, anchors have " + std::to_string(anchors.rows()));
  if (p.W_g.rows() != anchors.cols()) throw InvalidArgument("aggregate_slots: W_g rows must equal anchor dim");
}

void check_align(const Matrix& raw, const SlotParams& p) {
  if (p.mlp_W1.rows() != raw.cols() || p.mlp_b1.size() != p.mlp_W1.cols() ||
      p.mlp_W2.rows() != p.mlp_W1.cols() || p.mlp_b2.size() != p.mlp_W2.cols())
    throw InvalidArgument("align: MLP shapes inconsistent with slot width");
}

}  // namespace

SlotParams init_slot_params(const SlotShape& s, Rng& rng) {
  const auto da = static_cast<Eigen::Index>(s.anchor_dim);
  const auto m = static_cast<Eigen::Index>(s.mlp_hidden);
  const auto dd = static_cast<Eigen::Index>(s.decoder_dim);
  SlotParams p;
  p.W_g = gaussian_matrix(rng, da, da, 1.0 / std::sqrt(static_cast<double>(s.anchor_dim)));
  p.mlp_W1 = gaussian_matrix(rng, da, m, 1.0 / std::sqrt(static_cast<double>(s.anchor_dim)));
  p.mlp_b1 = Vector::Zero(m);
  p.mlp_W2 = gaussian_matrix(rng, m, dd, 1.0 / std::sqrt(static_cast<double>(s.mlp_hidden)));
  p.mlp_b2 = Vector::Zero(dd);
  return p;
}

Matrix aggregate_slots(const Matrix& anchors, const TransmissionPlan& plan, const SlotParams& params) {
  check_aggregate(anchors, plan.plan, params);
  return plan.plan.transpose() * (anchors * params.W_g);
}

Matrix aggregate_slots(const TokenAnchors& anchors, const TransmissionPlan& plan, const SlotParams& params) {
  return aggregate_slots(anchors.anchors, plan, params);
}

Matrix align(const Matrix& raw, const SlotParams& params) {
  check_align(raw, params);
  Matrix hidden = raw * params.mlp_W1;
  hidden.rowwise() += params.mlp_b1.transpose();
  Matrix out = hidden.array().tanh().matrix() * params.mlp_W2;
  out.rowwise() += params.mlp_b2.transpose();
  return out;
}

SlotTrace slot_forward(const Matrix& anchors, const Matrix& plan, const SlotParams& params) {
  check_aggregate(anchors, plan, params);
  SlotTrace tr;
  tr.projected = anchors * params.W_g;
  tr.out.raw = plan.transpose() * tr.projected;
  check_align(tr.out.raw, params);
  tr.hidden = tr.out.raw * params.mlp_W1;
  tr.hidden.rowwise() += params.mlp_b1.transpose();
  tr.hidden = tr.hidden.array().tanh().matrix();
  tr.out.aligned = tr.hidden * params.mlp_W2;
  tr.out.aligned.rowwise() += params.mlp_b2.transpose();
  return tr;
}

SlotBackward slot_backward(const Matrix& anchors, const Matrix& plan, const SlotParams& params,
                           const SlotTrace& tr, const Matrix& d_aligned, SlotParams& grad) {
  grad.mlp_b2 += d_aligned.colwise().sum().transpose();
  grad.mlp_W2.noalias() += tr.hidden.transpose() * d_aligned;
  const Matrix d_hidden =
      (d_aligned * params.mlp_W2.transpose()).cwiseProduct((1.0 - tr.hidden.array().square()).matrix());
  grad.mlp_b1 += d_hidden.colwise().sum().transpose();
  grad.mlp_W1.noalias() += tr.out.raw.transpose() * d_hidden;
  const Matrix d_raw = d_hidden * params.mlp_W1.transpose();

  SlotBackward out;
  out.d_plan = tr.projected * d_raw.transpose();
  const Matrix d_projected = plan * d_raw;
  grad.W_g.noalias() += anchors.transpose() * d_projected;
  out.d_anchors = d_projected * params.W_g.transpose();
  return out;
}

CompressionResult compress(const HiddenStates& h, const CompressionParams& params, Allocation mode) {
  CompressionResult out;
  out.anchors = depth_forward(h, params.depth).out;
  out.plan = width_forward(out.anchors.anchors, params.width, mode).plan;
  const SlotTrace st = slot_forward(out.anchors.anchors, out.plan.plan, params.slot);
  out.slots = st.out;
  return out;
}

}  // namespace cxit
