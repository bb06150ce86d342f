#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ioubal/geometry.hpp"
#include "ioubal/losses.hpp"

namespace ioubal {

// Sampling grid for a gradient-norm curve of the weighted smooth L1, the
// weight taken from the per-coordinate IoU upper bound (center axes use
// ((1-|d|)/(1+|d|))^lambda under the w_t = w_s assumption, size axes use
// e^{-lambda*|d|}).
struct CurveSpec {
  double lambda = 0.0;
  double w_loc = 1.0;
  double delta = 0.111;
  Axis axis = Axis::Center;
  double d_min = 0.0;
  double d_max = 0.95;
  int n_points = 96;

  void validate() const;
};

struct CurvePoint {
  double d = 0.0;
  double grad_norm = 0.0;
};

// |d(w(iou_B) * smooth_l1)/dd| at a single offset. Center axis requires
// |d| < 1; outside that the bound's base goes negative and the curve is
// undefined.
double gradient_norm_at(double d, Axis axis, double lambda, double w_loc, double delta);

// The curve over the spec's grid. lambda = 0 reproduces the standard
// smooth-L1 gradient norm scaled by w_loc.
std::vector<CurvePoint> gradient_norm_curve(const CurveSpec& spec);

enum class LossKind { Cls, Loc };

struct FiniteDiffReport {
  LossKind kind = LossKind::Cls;
  int trials = 0;
  double step = 1e-6;
  double tolerance = 1e-4;
  double max_rel_error = 0.0;
  bool passed = true;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::string worst_point;
};

// Draws random batches and compares the analytic gradients against central
// finite differences of the loss, weights held frozen across the
// perturbation. Failures are reported, not thrown.
FiniteDiffReport finite_diff_check(LossKind kind, int trial_count, std::uint64_t seed,
                                   double tolerance = 1e-4);

// w_loc such that manual-mode loc_loss equals the unweighted smooth-L1 sum
// on the given (first-iteration) batch; the caller freezes the value for
// the rest of the run. Throws std::domain_error on a degenerate batch.
double calibrate_w_loc(std::span<const PositiveExample> positives, double lambda, double delta);

// Reference (lambda, w_loc) pairs from the published parameter sweep.
// These reproduce the sweep verbatim; calibration on synthetic batches
// will produce different values.
struct LocPreset {
  double lambda;
  double w_loc;
};
std::span<const LocPreset> reference_loc_presets();
std::span<const double> reference_eta_sweep();

}  // namespace ioubal
