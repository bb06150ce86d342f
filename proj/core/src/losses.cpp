#include "ioubal/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ioubal {

namespace {

constexpr double kScoreClamp = 1e-7;

void require_positives(std::span<const PositiveExample> positives, const char* who) {
  if (positives.empty()) {
    throw std::invalid_argument(std::string(who) + ": positives must be nonempty");
  }
}

void count_zero_iou(std::span<const PositiveExample> positives, WeightDiagnostics* diag) {
  if (!diag) return;
  for (const auto& ex : positives) {
    if (ex.iou == 0.0) diag->zero_iou_positives++;
  }
}

}  // namespace

void LossConfig::validate() const {
  if (eta < 0.0) throw std::invalid_argument("LossConfig: eta must be >= 0");
  if (lambda < 0.0) throw std::invalid_argument("LossConfig: lambda must be >= 0");
  if (!(delta > 0.0)) throw std::invalid_argument("LossConfig: delta must be > 0");
  if (!(w_loc > 0.0)) throw std::invalid_argument("LossConfig: w_loc must be > 0");
}

double clamp_score(double p) {
  return std::clamp(p, kScoreClamp, 1.0 - kScoreClamp);
}

double cross_entropy(double p, int label) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("cross_entropy: p must lie strictly in (0,1)");
  }
  if (label != 0 && label != 1) {
    throw std::domain_error("cross_entropy: label must be 0 or 1");
  }
  return label == 1 ? -std::log(p) : -std::log1p(-p);
}

double smooth_l1(double x, double delta) {
  if (!(delta > 0.0)) {
    throw std::invalid_argument("smooth_l1: delta must be > 0");
  }
  const double ax = std::abs(x);
  return ax <= delta ? x * x / (2.0 * delta) : ax - 0.5 * delta;
}

double cls_grad(double p, int label, double weight) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("cls_grad: p must lie strictly in (0,1)");
  }
  if (label != 0 && label != 1) {
    throw std::domain_error("cls_grad: label must be 0 or 1");
  }
  return weight * (-label / p + (1.0 - label) / (1.0 - p));
}

std::vector<double> cls_weights(std::span<const PositiveExample> positives, double eta,
                                WeightDiagnostics* diag) {
  require_positives(positives, "cls_weights");
  if (eta < 0.0) throw std::invalid_argument("cls_weights: eta must be >= 0");
  count_zero_iou(positives, diag);

  std::vector<double> raw(positives.size());
  double ce_sum = 0.0;
  double weighted_ce_sum = 0.0;
  for (std::size_t i = 0; i < positives.size(); ++i) {
    raw[i] = std::pow(positives[i].iou, eta);
    const double ce = cross_entropy(positives[i].score, 1);
    ce_sum += ce;
    weighted_ce_sum += raw[i] * ce;
  }
  if (weighted_ce_sum == 0.0 || ce_sum == 0.0) {
    if (diag) diag->normalizer_fallback = true;
    return std::vector<double>(positives.size(), 1.0);
  }
  const double norm = ce_sum / weighted_ce_sum;
  for (double& w : raw) w *= norm;
  return raw;
}

std::vector<double> loc_weights(std::span<const PositiveExample> positives, const LossConfig& cfg,
                                WeightDiagnostics* diag) {
  require_positives(positives, "loc_weights");
  cfg.validate();
  count_zero_iou(positives, diag);

  std::vector<double> raw(positives.size());
  for (std::size_t i = 0; i < positives.size(); ++i) {
    raw[i] = std::pow(positives[i].iou, cfg.lambda);
  }
  if (cfg.loc_weight_mode == LocWeightMode::Manual) {
    for (double& w : raw) w *= cfg.w_loc;
    return raw;
  }
  double sl_sum = 0.0;
  double weighted_sl_sum = 0.0;
  for (std::size_t i = 0; i < positives.size(); ++i) {
    const auto& ex = positives[i];
    for (double d : {ex.pred_delta.dcx - ex.target_delta.dcx, ex.pred_delta.dcy - ex.target_delta.dcy,
                     ex.pred_delta.dw - ex.target_delta.dw, ex.pred_delta.dh - ex.target_delta.dh}) {
      const double sl = smooth_l1(d, cfg.delta);
      sl_sum += sl;
      weighted_sl_sum += raw[i] * sl;
    }
  }
  if (weighted_sl_sum == 0.0 || sl_sum == 0.0) {
    if (diag) diag->normalizer_fallback = true;
    return std::vector<double>(positives.size(), 1.0);
  }
  const double norm = sl_sum / weighted_sl_sum;
  for (double& w : raw) w *= norm;
  return raw;
}

double cls_loss(std::span<const PositiveExample> positives,
                std::span<const NegativeExample> negatives, const LossConfig& cfg,
                WeightDiagnostics* diag) {
  const auto weights = cls_weights(positives, cfg.eta, diag);
  return cls_loss_with_weights(positives, negatives, weights);
}

double cls_loss_with_weights(std::span<const PositiveExample> positives,
                             std::span<const NegativeExample> negatives,
                             std::span<const double> weights) {
  require_positives(positives, "cls_loss_with_weights");
  if (weights.size() != positives.size()) {
    throw std::invalid_argument("cls_loss_with_weights: one weight per positive required");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < positives.size(); ++i) {
    loss += weights[i] * cross_entropy(positives[i].score, 1);
  }
  for (const auto& ex : negatives) {
    loss += cross_entropy(ex.score, 0);
  }
  return loss;
}

double loc_loss(std::span<const PositiveExample> positives, const LossConfig& cfg,
                WeightDiagnostics* diag) {
  const auto weights = loc_weights(positives, cfg, diag);
  return loc_loss_with_weights(positives, weights, cfg.delta);
}

double loc_loss_with_weights(std::span<const PositiveExample> positives,
                             std::span<const double> weights, double delta) {
  require_positives(positives, "loc_loss_with_weights");
  if (weights.size() != positives.size()) {
    throw std::invalid_argument("loc_loss_with_weights: one weight per positive required");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < positives.size(); ++i) {
    const auto& ex = positives[i];
    loss += weights[i] * smooth_l1(ex.pred_delta.dcx - ex.target_delta.dcx, delta);
    loss += weights[i] * smooth_l1(ex.pred_delta.dcy - ex.target_delta.dcy, delta);
    loss += weights[i] * smooth_l1(ex.pred_delta.dw - ex.target_delta.dw, delta);
    loss += weights[i] * smooth_l1(ex.pred_delta.dh - ex.target_delta.dh, delta);
  }
  return loss;
}

namespace {

double branch_grad(double d, double delta, double weight) {
  if (std::abs(d) <= delta) {
    return weight * d / delta;
  }
  return d > 0.0 ? weight : -weight;
}

}  // namespace

std::vector<BoxDelta> loc_grad(std::span<const PositiveExample> positives, const LossConfig& cfg) {
  const auto weights = loc_weights(positives, cfg);
  return loc_grad_with_weights(positives, weights, cfg.delta);
}

std::vector<BoxDelta> loc_grad_with_weights(std::span<const PositiveExample> positives,
                                            std::span<const double> weights, double delta) {
  require_positives(positives, "loc_grad_with_weights");
  if (weights.size() != positives.size()) {
    throw std::invalid_argument("loc_grad_with_weights: one weight per positive required");
  }
  std::vector<BoxDelta> grads(positives.size());
  for (std::size_t i = 0; i < positives.size(); ++i) {
    const auto& ex = positives[i];
    grads[i] = BoxDelta{
        branch_grad(ex.pred_delta.dcx - ex.target_delta.dcx, delta, weights[i]),
        branch_grad(ex.pred_delta.dcy - ex.target_delta.dcy, delta, weights[i]),
        branch_grad(ex.pred_delta.dw - ex.target_delta.dw, delta, weights[i]),
        branch_grad(ex.pred_delta.dh - ex.target_delta.dh, delta, weights[i]),
    };
  }
  return grads;
}

}  // namespace ioubal
