#pragma once

#include <span>
#include <vector>

#include "ioubal/geometry.hpp"

namespace ioubal {

// How the localization weight is kept on the scale of the unweighted loss:
// Manual multiplies iou^lambda by a fixed w_loc (calibrated once on the
// first batch, then frozen); Normalized rescales every batch so the
// weighted sum equals the unweighted sum.
enum class LocWeightMode { Manual, Normalized };

struct LossConfig {
  double eta = 0.0;     // classification focus exponent
  double lambda = 0.0;  // localization focus exponent
  double delta = 0.111; // smooth-L1 transition point
  double w_loc = 1.0;   // manual localization weight
  LocWeightMode loc_weight_mode = LocWeightMode::Manual;

  // Throws std::invalid_argument when a field is out of range.
  void validate() const;
};

// One matched anchor: predicted probability for its target class, the
// predicted and target regression offsets, and the IoU of the decoded
// predicted box against its ground-truth box. The label is 1 by
// definition; `iou` is recomputed each iteration from the current
// prediction and treated as a constant in all gradients.
struct PositiveExample {
  double score = 0.5;  // in (0,1), clamped upstream
  BoxDelta pred_delta;
  BoxDelta target_delta;
  double iou = 0.0;    // in [0,1]
};

// An unmatched anchor (label fixed at 0).
struct NegativeExample {
  double score = 0.5;  // in (0,1), clamped upstream
};

// Per-batch observability for the weight computations: the
// zero-denominator fallback and how many positives carry zero IoU
// (their weight vanishes under both losses).
struct WeightDiagnostics {
  bool normalizer_fallback = false;
  int zero_iou_positives = 0;
};

// Clamp a raw probability into [1e-7, 1 - 1e-7] before feeding it to the
// cross-entropy paths.
double clamp_score(double p);

// -label*log(p) - (1-label)*log(1-p). Throws std::domain_error unless
// 0 < p < 1 and label is 0 or 1.
double cross_entropy(double p, int label);

// x^2/(2*delta) for |x| <= delta, |x| - delta/2 otherwise.
double smooth_l1(double x, double delta);

// Exact derivative of weight * CE(p, label) with respect to p, the weight
// held constant.
double cls_grad(double p, int label, double weight);

// IoU-balanced classification weights:
//   w_i = iou_i^eta * (sum_j CE_j) / (sum_j iou_j^eta * CE_j),  CE_j = CE(p_j, 1)
// The normalization keeps sum w_i*CE_i equal to sum CE_i. A zero
// denominator falls back to all-ones weights and sets the diagnostic.
std::vector<double> cls_weights(std::span<const PositiveExample> positives, double eta,
                                WeightDiagnostics* diag = nullptr);

// IoU-balanced localization weights. Manual mode: w_i = w_loc * iou_i^lambda.
// Normalized mode rescales iou_i^lambda so the weighted smooth-L1 sum equals
// the unweighted sum; a zero denominator falls back to all-ones weights.
std::vector<double> loc_weights(std::span<const PositiveExample> positives, const LossConfig& cfg,
                                WeightDiagnostics* diag = nullptr);

// sum_pos w_i * CE(p_i, 1) + sum_neg CE(p_i, 0), weights from cls_weights.
// Positives must be nonempty.
double cls_loss(std::span<const PositiveExample> positives,
                std::span<const NegativeExample> negatives, const LossConfig& cfg,
                WeightDiagnostics* diag = nullptr);

// sum_pos sum_{m in cx,cy,w,h} w_i * smooth_l1(pred_m - target_m), weights
// from loc_weights. Positives must be nonempty.
double loc_loss(std::span<const PositiveExample> positives, const LossConfig& cfg,
                WeightDiagnostics* diag = nullptr);

// Per-positive, per-coordinate gradient of the weighted smooth L1 with the
// weight held constant: w * d/delta on the quadratic branch, w * sign(d)
// on the linear branch.
std::vector<BoxDelta> loc_grad(std::span<const PositiveExample> positives, const LossConfig& cfg);

// Stop-gradient evaluation paths: the same sums with the weights supplied
// explicitly and frozen. These are what the trainer and the
// finite-difference checks differentiate.
double cls_loss_with_weights(std::span<const PositiveExample> positives,
                             std::span<const NegativeExample> negatives,
                             std::span<const double> weights);
double loc_loss_with_weights(std::span<const PositiveExample> positives,
                             std::span<const double> weights, double delta);
std::vector<BoxDelta> loc_grad_with_weights(std::span<const PositiveExample> positives,
                                            std::span<const double> weights, double delta);

}  // namespace ioubal
