#pragma once

#include <array>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "ioubal/geometry.hpp"

namespace ioubal {

struct Detection {
  Box box;
  double score = 0.0;
  int class_id = 0;
};

struct GtBox {
  Box box;
  int class_id = 0;
};

// Detections and ground truth of one scene; matching never crosses scene
// boundaries.
struct ScenePredictions {
  std::vector<Detection> detections;
  std::vector<GtBox> ground_truth;
};

inline constexpr std::array<double, 10> kApThresholds{0.50, 0.55, 0.60, 0.65, 0.70,
                                                      0.75, 0.80, 0.85, 0.90, 0.95};

struct ApTable {
  std::array<double, 10> thresholds = kApThresholds;
  std::array<double, 10> ap{};
  double mean_ap = 0.0;
  // set when the no-GT/no-detection convention (AP = 1) fired
  bool empty_convention = false;

  double at(double threshold) const;
  double ap50() const { return ap[0]; }
  double ap60() const { return ap[2]; }
  double ap70() const { return ap[4]; }
  double ap75() const { return ap[5]; }
  double ap80() const { return ap[6]; }
  double ap90() const { return ap[8]; }
};

// Greedy class-aware NMS: repeatedly keep the highest-score remaining
// detection, discard same-class detections with IoU > iou_thresh against
// it. Ties in score keep input order.
std::vector<Detection> nms(std::span<const Detection> dets, double iou_thresh);

// 101-point interpolated average precision at one IoU threshold. Matching
// is class-aware and greedy by score rank; each ground truth matches at
// most once. Conventions: no GT and no detections -> 1.0, no GT with
// detections -> 0.0.
double ap_at_threshold(std::span<const Detection> dets, std::span<const GtBox> ground_truth,
                       double iou_thresh);
double ap_at_threshold(std::span<const ScenePredictions> scenes, double iou_thresh);

ApTable coco_ap(std::span<const Detection> dets, std::span<const GtBox> ground_truth);
ApTable coco_ap(std::span<const ScenePredictions> scenes);

struct IouBin {
  double lo = 0.0;
  double hi = 0.0;
  double mean_score = 0.0;
  int count = 0;
};

// Figure-3-style statistics. Bins of width 0.05 cover best-GT IoU from
// 0.5 up (the top bin closes at 1.0); detections with best IoU below 0.5
// stay out of the bins but count in the exceedance denominators. Empty
// bins are absent from `bins`.
struct ScoreIouStats {
  std::vector<IouBin> bins;
  std::array<double, 10> thresholds = kApThresholds;
  std::array<double, 10> exceedance{};  // fraction of detections with IoU above each threshold
  int n_detections = 0;
};

ScoreIouStats score_iou_stats(std::span<const Detection> dets,
                              std::span<const GtBox> ground_truth);
ScoreIouStats score_iou_stats(std::span<const ScenePredictions> scenes);

// Spearman rank correlation, ties by average rank. A constant input
// vector has no defined correlation and yields nullopt.
std::optional<double> rank_correlation(std::span<const std::pair<double, double>> pairs);

}  // namespace ioubal
