#include "ioubal/analysis.hpp"

#include <array>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ioubal {

void CurveSpec::validate() const {
  if (n_points < 2) throw std::invalid_argument("CurveSpec: n_points must be >= 2");
  if (!(d_max > d_min)) throw std::invalid_argument("CurveSpec: d_max must exceed d_min");
  if (!(delta > 0.0)) throw std::invalid_argument("CurveSpec: delta must be > 0");
  if (lambda < 0.0) throw std::invalid_argument("CurveSpec: lambda must be >= 0");
  if (!(w_loc > 0.0)) throw std::invalid_argument("CurveSpec: w_loc must be > 0");
  if (axis == Axis::Center && (std::abs(d_min) >= 1.0 || std::abs(d_max) >= 1.0)) {
    throw std::domain_error("CurveSpec: center-axis grid must stay within |d| < 1");
  }
}

double gradient_norm_at(double d, Axis axis, double lambda, double w_loc, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("gradient_norm_at: delta must be > 0");
  const double ad = std::abs(d);
  double factor;
  if (axis == Axis::Center) {
    if (ad >= 1.0) {
      throw std::domain_error("gradient_norm_at: center axis requires |d| < 1");
    }
    factor = w_loc * std::pow((1.0 - ad) / (1.0 + ad), lambda);
  } else {
    factor = w_loc * std::exp(-lambda * ad);
  }
  return factor * (ad <= delta ? ad / delta : 1.0);
}

std::vector<CurvePoint> gradient_norm_curve(const CurveSpec& spec) {
  spec.validate();
  std::vector<CurvePoint> points;
  points.reserve(spec.n_points);
  const double step = (spec.d_max - spec.d_min) / (spec.n_points - 1);
  for (int k = 0; k < spec.n_points; ++k) {
    const double d = spec.d_min + k * step;
    points.push_back({d, gradient_norm_at(d, spec.axis, spec.lambda, spec.w_loc, spec.delta)});
  }
  return points;
}

namespace {

constexpr double kFdStep = 1e-6;

double rel_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / scale;
}

void record(FiniteDiffReport& report, double analytic, double numeric, const std::string& point) {
  const double err = rel_error(analytic, numeric);
  if (err > report.max_rel_error) {
    report.max_rel_error = err;
    report.worst_analytic = analytic;
    report.worst_numeric = numeric;
    report.worst_point = point;
  }
}

FiniteDiffReport check_cls(int trial_count, std::uint64_t seed, double tolerance) {
  FiniteDiffReport report;
  report.kind = LossKind::Cls;
  report.trials = trial_count;
  report.step = kFdStep;
  report.tolerance = tolerance;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> score_dist(0.01, 0.99);
  std::uniform_real_distribution<double> iou_dist(0.0, 1.0);
  std::uniform_int_distribution<int> size_dist(1, 8);
  const std::array<double, 4> etas{0.5, 1.0, 1.5, 2.0};

  for (int t = 0; t < trial_count; ++t) {
    const int n = size_dist(rng);
    std::vector<PositiveExample> positives(n);
    for (auto& ex : positives) {
      ex.score = score_dist(rng);
      // occasional zero-IoU positive: its weight vanishes and both
      // gradients must be exactly zero
      ex.iou = (iou_dist(rng) < 0.05) ? 0.0 : iou_dist(rng);
    }
    const double eta = etas[t % etas.size()];
    const auto weights = cls_weights(positives, eta);

    std::vector<NegativeExample> negatives(size_dist(rng));
    for (auto& ex : negatives) ex.score = score_dist(rng);

    for (std::size_t i = 0; i < positives.size(); ++i) {
      const double analytic = cls_grad(positives[i].score, 1, weights[i]);
      auto perturbed = positives;
      perturbed[i].score = positives[i].score + kFdStep;
      const double up = cls_loss_with_weights(perturbed, negatives, weights);
      perturbed[i].score = positives[i].score - kFdStep;
      const double down = cls_loss_with_weights(perturbed, negatives, weights);
      const double numeric = (up - down) / (2.0 * kFdStep);
      std::ostringstream point;
      point << "positive p=" << positives[i].score << " w=" << weights[i];
      record(report, analytic, numeric, point.str());
    }
    for (std::size_t i = 0; i < negatives.size(); ++i) {
      const double analytic = cls_grad(negatives[i].score, 0, 1.0);
      auto perturbed = negatives;
      perturbed[i].score = negatives[i].score + kFdStep;
      const double up = cls_loss_with_weights(positives, perturbed, weights);
      perturbed[i].score = negatives[i].score - kFdStep;
      const double down = cls_loss_with_weights(positives, perturbed, weights);
      const double numeric = (up - down) / (2.0 * kFdStep);
      std::ostringstream point;
      point << "negative p=" << negatives[i].score;
      record(report, analytic, numeric, point.str());
    }
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

FiniteDiffReport check_loc(int trial_count, std::uint64_t seed, double tolerance) {
  FiniteDiffReport report;
  report.kind = LossKind::Loc;
  report.trials = trial_count;
  report.step = kFdStep;
  report.tolerance = tolerance;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> residual_dist(-1.5, 1.5);
  std::uniform_real_distribution<double> iou_dist(0.0, 1.0);
  std::uniform_real_distribution<double> wloc_dist(0.5, 3.5);
  std::uniform_int_distribution<int> size_dist(1, 8);
  const std::array<double, 4> lambdas{0.0, 0.5, 1.0, 1.5};
  const double delta = 0.111;

  // residuals are kept away from the kink at |d| = delta, where the loss
  // is not differentiable
  auto draw_residual = [&]() {
    double d = residual_dist(rng);
    while (std::abs(std::abs(d) - delta) < 1e-3) d = residual_dist(rng);
    return d;
  };

  for (int t = 0; t < trial_count; ++t) {
    LossConfig cfg;
    cfg.lambda = lambdas[t % lambdas.size()];
    cfg.delta = delta;
    cfg.w_loc = wloc_dist(rng);
    cfg.loc_weight_mode = (t % 2 == 0) ? LocWeightMode::Manual : LocWeightMode::Normalized;

    const int n = size_dist(rng);
    std::vector<PositiveExample> positives(n);
    for (auto& ex : positives) {
      ex.iou = (iou_dist(rng) < 0.05) ? 0.0 : iou_dist(rng);
      ex.pred_delta = BoxDelta{draw_residual(), draw_residual(), draw_residual(), draw_residual()};
      ex.target_delta = BoxDelta{};
    }
    const auto weights = loc_weights(positives, cfg);
    const auto analytic = loc_grad_with_weights(positives, weights, cfg.delta);

    for (std::size_t i = 0; i < positives.size(); ++i) {
      const std::array<double BoxDelta::*, 4> coords{&BoxDelta::dcx, &BoxDelta::dcy,
                                                     &BoxDelta::dw, &BoxDelta::dh};
      for (std::size_t m = 0; m < coords.size(); ++m) {
        auto perturbed = positives;
        perturbed[i].pred_delta.*coords[m] += kFdStep;
        const double up = loc_loss_with_weights(perturbed, weights, cfg.delta);
        perturbed[i].pred_delta.*coords[m] -= 2.0 * kFdStep;
        const double down = loc_loss_with_weights(perturbed, weights, cfg.delta);
        const double numeric = (up - down) / (2.0 * kFdStep);
        std::ostringstream point;
        point << "d=" << positives[i].pred_delta.*coords[m] << " w=" << weights[i]
              << " lambda=" << cfg.lambda;
        record(report, analytic[i].*coords[m], numeric, point.str());
      }
    }
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace

FiniteDiffReport finite_diff_check(LossKind kind, int trial_count, std::uint64_t seed,
                                   double tolerance) {
  if (trial_count < 1) throw std::invalid_argument("finite_diff_check: trial_count must be >= 1");
  return kind == LossKind::Cls ? check_cls(trial_count, seed, tolerance)
                               : check_loc(trial_count, seed, tolerance);
}

double calibrate_w_loc(std::span<const PositiveExample> positives, double lambda, double delta) {
  if (positives.empty()) {
    throw std::invalid_argument("calibrate_w_loc: positives must be nonempty");
  }
  if (lambda < 0.0 || !(delta > 0.0)) {
    throw std::invalid_argument("calibrate_w_loc: lambda >= 0 and delta > 0 required");
  }
  double sl_sum = 0.0;
  double weighted_sl_sum = 0.0;
  for (const auto& ex : positives) {
    const double raw = std::pow(ex.iou, lambda);
    for (double d : {ex.pred_delta.dcx - ex.target_delta.dcx, ex.pred_delta.dcy - ex.target_delta.dcy,
                     ex.pred_delta.dw - ex.target_delta.dw, ex.pred_delta.dh - ex.target_delta.dh}) {
      const double sl = smooth_l1(d, delta);
      sl_sum += sl;
      weighted_sl_sum += raw * sl;
    }
  }
  if (weighted_sl_sum == 0.0 || sl_sum == 0.0) {
    throw std::domain_error("calibrate_w_loc: degenerate calibration batch");
  }
  return sl_sum / weighted_sl_sum;
}

namespace {
constexpr std::array<LocPreset, 4> kLocPresets{{{0.5, 1.575}, {1.0, 2.226}, {1.5, 3.049}, {1.8, 3.649}}};
constexpr std::array<double, 4> kEtaSweep{1.0, 1.4, 1.5, 1.6};
}  // namespace

std::span<const LocPreset> reference_loc_presets() { return kLocPresets; }
std::span<const double> reference_eta_sweep() { return kEtaSweep; }

}  // namespace ioubal
