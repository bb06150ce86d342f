#include "ioubal/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ioubal {

double ApTable::at(double threshold) const {
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (std::abs(thresholds[i] - threshold) < 1e-9) return ap[i];
  }
  throw std::invalid_argument("ApTable::at: unknown threshold");
}

std::vector<Detection> nms(std::span<const Detection> dets, double iou_thresh) {
  if (iou_thresh < 0.0 || iou_thresh > 1.0) {
    throw std::invalid_argument("nms: iou_thresh must lie in [0,1]");
  }
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  std::vector<Detection> kept;
  kept.reserve(dets.size());
  for (std::size_t idx : order) {
    const Detection& cand = dets[idx];
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.class_id == cand.class_id && iou(k.box, cand.box) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

namespace {

// (score, is_true_positive) per detection plus the ground-truth count;
// pooled across scenes before the precision-recall sweep.
struct MatchedScores {
  std::vector<std::pair<double, bool>> scored;
  int n_gt = 0;
};

MatchedScores match_scene(std::span<const Detection> dets, std::span<const GtBox> gts,
                          double iou_thresh) {
  MatchedScores out;
  out.n_gt = static_cast<int>(gts.size());
  out.scored.reserve(dets.size());

  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  std::vector<bool> gt_used(gts.size(), false);
  for (std::size_t idx : order) {
    const Detection& det = dets[idx];
    double best_iou = 0.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_used[g] || gts[g].class_id != det.class_id) continue;
      const double v = iou(det.box, gts[g].box);
      if (v > best_iou) {
        best_iou = v;
        best_gt = static_cast<int>(g);
      }
    }
    const bool tp = best_gt >= 0 && best_iou >= iou_thresh;
    if (tp) gt_used[best_gt] = true;
    out.scored.emplace_back(det.score, tp);
  }
  return out;
}

double ap_from_matches(std::vector<MatchedScores> per_scene) {
  int total_gt = 0;
  std::size_t total_dets = 0;
  for (const auto& m : per_scene) {
    total_gt += m.n_gt;
    total_dets += m.scored.size();
  }
  if (total_gt == 0) {
    return total_dets == 0 ? 1.0 : 0.0;
  }
  if (total_dets == 0) {
    return 0.0;
  }

  std::vector<std::pair<double, bool>> pooled;
  pooled.reserve(total_dets);
  for (const auto& m : per_scene) {
    pooled.insert(pooled.end(), m.scored.begin(), m.scored.end());
  }
  std::stable_sort(pooled.begin(), pooled.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  std::vector<double> precision(pooled.size());
  std::vector<double> recall(pooled.size());
  int tp = 0;
  for (std::size_t k = 0; k < pooled.size(); ++k) {
    if (pooled[k].second) ++tp;
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    recall[k] = static_cast<double>(tp) / static_cast<double>(total_gt);
  }

  // 101-point interpolation: at each recall level, the best precision
  // achieved at that recall or beyond.
  double sum = 0.0;
  for (int level = 0; level <= 100; ++level) {
    const double r = level / 100.0;
    double best = 0.0;
    for (std::size_t k = 0; k < pooled.size(); ++k) {
      if (recall[k] >= r) best = std::max(best, precision[k]);
    }
    sum += best;
  }
  return sum / 101.0;
}

bool empty_inputs(std::span<const ScenePredictions> scenes) {
  for (const auto& s : scenes) {
    if (!s.detections.empty() || !s.ground_truth.empty()) return false;
  }
  return true;
}

}  // namespace

double ap_at_threshold(std::span<const Detection> dets, std::span<const GtBox> ground_truth,
                       double iou_thresh) {
  return ap_from_matches({match_scene(dets, ground_truth, iou_thresh)});
}

double ap_at_threshold(std::span<const ScenePredictions> scenes, double iou_thresh) {
  std::vector<MatchedScores> matches;
  matches.reserve(scenes.size());
  for (const auto& s : scenes) {
    matches.push_back(match_scene(s.detections, s.ground_truth, iou_thresh));
  }
  return ap_from_matches(std::move(matches));
}

ApTable coco_ap(std::span<const Detection> dets, std::span<const GtBox> ground_truth) {
  ApTable table;
  table.empty_convention = dets.empty() && ground_truth.empty();
  double sum = 0.0;
  for (std::size_t i = 0; i < kApThresholds.size(); ++i) {
    table.ap[i] = ap_at_threshold(dets, ground_truth, kApThresholds[i]);
    sum += table.ap[i];
  }
  table.mean_ap = sum / static_cast<double>(kApThresholds.size());
  return table;
}

ApTable coco_ap(std::span<const ScenePredictions> scenes) {
  ApTable table;
  table.empty_convention = empty_inputs(scenes);
  double sum = 0.0;
  for (std::size_t i = 0; i < kApThresholds.size(); ++i) {
    table.ap[i] = ap_at_threshold(scenes, kApThresholds[i]);
    sum += table.ap[i];
  }
  table.mean_ap = sum / static_cast<double>(kApThresholds.size());
  return table;
}

namespace {

double best_gt_iou(const Detection& det, std::span<const GtBox> gts) {
  double best = 0.0;
  for (const auto& gt : gts) {
    if (gt.class_id != det.class_id) continue;
    best = std::max(best, iou(det.box, gt.box));
  }
  return best;
}

ScoreIouStats stats_from_ious(const std::vector<std::pair<double, double>>& score_iou) {
  constexpr int kBins = 10;
  std::array<double, kBins> score_sum{};
  std::array<int, kBins> counts{};

  ScoreIouStats stats;
  stats.n_detections = static_cast<int>(score_iou.size());
  for (const auto& [score, best] : score_iou) {
    if (best >= 0.5) {
      int bin = static_cast<int>((best - 0.5) / 0.05);
      bin = std::min(bin, kBins - 1);  // IoU 1.0 lands in the top bin
      score_sum[bin] += score;
      counts[bin] += 1;
    }
    for (std::size_t t = 0; t < kApThresholds.size(); ++t) {
      if (best > kApThresholds[t]) stats.exceedance[t] += 1.0;
    }
  }
  if (stats.n_detections > 0) {
    for (double& e : stats.exceedance) e /= stats.n_detections;
  }
  for (int b = 0; b < kBins; ++b) {
    if (counts[b] == 0) continue;
    stats.bins.push_back(IouBin{0.5 + 0.05 * b, 0.5 + 0.05 * (b + 1),
                                score_sum[b] / counts[b], counts[b]});
  }
  return stats;
}

}  // namespace

ScoreIouStats score_iou_stats(std::span<const Detection> dets,
                              std::span<const GtBox> ground_truth) {
  std::vector<std::pair<double, double>> score_iou;
  score_iou.reserve(dets.size());
  for (const auto& det : dets) {
    score_iou.emplace_back(det.score, best_gt_iou(det, ground_truth));
  }
  return stats_from_ious(score_iou);
}

ScoreIouStats score_iou_stats(std::span<const ScenePredictions> scenes) {
  std::vector<std::pair<double, double>> score_iou;
  for (const auto& s : scenes) {
    for (const auto& det : s.detections) {
      score_iou.emplace_back(det.score, best_gt_iou(det, s.ground_truth));
    }
  }
  return stats_from_ious(score_iou);
}

namespace {

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::optional<double> rank_correlation(std::span<const std::pair<double, double>> pairs) {
  if (pairs.size() < 2) {
    throw std::invalid_argument("rank_correlation: at least two pairs required");
  }
  std::vector<double> xs(pairs.size()), ys(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    xs[i] = pairs[i].first;
    ys[i] = pairs[i].second;
  }
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);

  const double n = static_cast<double>(pairs.size());
  const double mean = (n + 1.0) / 2.0;
  double cov = 0.0, var_x = 0.0, var_y = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    cov += (rx[i] - mean) * (ry[i] - mean);
    var_x += (rx[i] - mean) * (rx[i] - mean);
    var_y += (ry[i] - mean) * (ry[i] - mean);
  }
  if (var_x == 0.0 || var_y == 0.0) {
    return std::nullopt;  // a constant vector has no rank ordering
  }
  return cov / std::sqrt(var_x * var_y);
}

}  // namespace ioubal
