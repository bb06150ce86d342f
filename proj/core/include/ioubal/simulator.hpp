#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ioubal/evaluation.hpp"
#include "ioubal/geometry.hpp"
#include "ioubal/losses.hpp"

namespace ioubal {

// Geometry of the synthetic task: scenes, the anchor grid, matching
// thresholds, and the feature-noise level that keeps the linear model
// imperfect.
struct SimConfig {
  double scene_size = 64.0;  // square bounds (0,0,S,S)
  int min_objects = 1;
  int max_objects = 4;
  double min_object_size = 12.0;
  double max_object_size = 28.0;
  double max_pairwise_iou = 0.3;
  int rejection_budget = 1000;  // placement attempts per scene
  int num_classes = 1;

  int grid_size = 8;  // grid_size x grid_size anchor centers
  std::vector<double> anchor_scales{12.0, 20.0};
  std::vector<double> anchor_ratios{0.5, 1.0, 2.0};

  double pos_thresh = 0.5;
  double neg_thresh = 0.4;

  // Object-encoding noise: most anchors carry lightly corrupted hints,
  // a small fraction carries badly corrupted ones. The corrupted anchors
  // regress to wrong boxes, end up with low IoU, and dominate the plain
  // smooth-L1 gradient — the population the balanced losses reweight.
  double feature_noise_sigma = 0.03;
  double hint_outlier_fraction = 0.15;
  double hint_outlier_scale = 6.0;

  void validate() const;
};

struct SceneObject {
  Box box;
  int class_id = 0;
};

struct Scene {
  Box bounds;
  std::vector<SceneObject> objects;
  std::uint64_t seed = 0;
};

struct AnchorSet {
  std::vector<Box> anchors;
};

enum class MatchKind { Positive, Negative, Ignore };

struct AnchorAssignment {
  MatchKind kind = MatchKind::Negative;
  int best_object = -1;  // argmax-IoU object, ties to the lowest index
  double max_iou = 0.0;
};

struct MatchResult {
  std::vector<AnchorAssignment> assignments;
};

// Deterministic for a fixed seed. Objects are rejection-sampled until all
// pairwise IoUs stay at or below cfg.max_pairwise_iou; throws
// std::runtime_error when the attempt budget runs out.
Scene generate_scene(std::uint64_t seed, const SimConfig& cfg);

// Per-scene seeds derived from the experiment seed; training and held-out
// streams never collide.
std::uint64_t train_scene_seed(std::uint64_t experiment_seed, int index);
std::uint64_t eval_scene_seed(std::uint64_t experiment_seed, int index);

AnchorSet build_anchors(const SimConfig& cfg);

MatchResult match_anchors(const AnchorSet& anchors, const Scene& scene, double pos_thresh,
                          double neg_thresh);

inline constexpr int kFeatureDim = 21;

// One scene prepared for the trainer: the fixed per-anchor feature map
// and the noiseless regression targets. Each anchor carries two
// independent noisy encodings of its best-matching object (drawn once at
// creation, sharing the anchor's corruption state); their disagreement is
// the only observable trace of a corrupted encoding. Layout per anchor:
//   [0]      bias
//   [1..4]   encoding A (target offsets plus noise)
//   [5..8]   encoding B
//   [9..12]  |A| per coordinate
//   [13..16] |A - B| per coordinate
//   [17..20] anchor geometry, scene-normalized
struct SceneBatch {
  Scene scene;
  MatchResult match;
  std::vector<double> features;         // n_anchors x kFeatureDim, row-major
  std::vector<BoxDelta> target_deltas;  // per anchor, against its best object
  std::vector<int> positive_anchors;    // ascending anchor index
};

SceneBatch make_scene_batch(std::uint64_t seed, const SimConfig& cfg, const AnchorSet& anchors);

// Feature view of the regression head: the raw encodings and the anchor
// geometry. The magnitude blocks (|A|, |A - B|) are classification-only,
// the way separate head towers see different representations.
inline constexpr std::array<int, 13> kRegFeatureIdx{0, 1, 2, 3, 4, 5, 6, 7, 8, 17, 18, 19, 20};

// Linear heads over the fixed features: one score head per class and a
// four-row regression head.
struct ToyModel {
  int num_classes = 1;
  std::vector<double> cls_head;  // num_classes x kFeatureDim
  std::vector<double> reg_head;  // 4 x kFeatureDim

  static ToyModel zeros(int num_classes);
  bool finite() const;
};

struct TrainConfig {
  LossConfig loss;
  bool baseline = false;        // standard CE + smooth L1, no reweighting
  bool calibrate_w_loc = true;  // manual mode: fit w_loc on the first trainable batch
  double learning_rate = 5e-5;
  int epochs = 30;
  int batch_size = 1;  // scenes per SGD step
  std::uint64_t seed = 1;
  int scenes_count = 32;
  int eval_scenes = 16;
  SimConfig sim;
  double det_score_thresh = 0.02;
  double nms_thresh = 0.5;
  int max_dets_per_scene = 100;

  void validate() const;
};

struct ForwardResult {
  std::vector<double> scores;        // n_anchors x num_classes, clamped
  std::vector<BoxDelta> deltas;      // per anchor
  std::vector<double> positive_iou;  // per positive anchor: decoded, clipped, vs target
};

ForwardResult forward(const ToyModel& model, const AnchorSet& anchors, const SceneBatch& batch);

// Which (scene, anchor, class) a loss example came from; needed to push
// gradients back into the heads.
struct ExampleRef {
  int scene = 0;
  int anchor = 0;
  int cls = 0;
};

// The stop-gradient objective of one SGD step: the examples gathered from
// a forward pass plus the weights computed there and then frozen.
struct StepObjective {
  std::vector<PositiveExample> positives;
  std::vector<ExampleRef> positive_refs;
  std::vector<NegativeExample> negatives;
  std::vector<ExampleRef> negative_refs;
  std::vector<double> cls_w;
  std::vector<double> loc_w;
  WeightDiagnostics cls_diag;
  WeightDiagnostics loc_diag;
};

StepObjective build_objective(const ToyModel& model, const AnchorSet& anchors,
                              std::span<const SceneBatch> scenes, const TrainConfig& cfg,
                              double w_loc);

struct BatchLoss {
  double cls_loss = 0.0;
  double loc_loss = 0.0;
  double total() const { return cls_loss + loc_loss; }
};

// Loss of the frozen objective at an arbitrary model (scores and deltas
// recomputed, weights held constant) — the quantity the analytic head
// gradients differentiate, and the one finite differences probe.
BatchLoss objective_loss(const ToyModel& model, std::span<const SceneBatch> scenes,
                         const StepObjective& objective, double delta);

struct HeadGradients {
  std::vector<double> cls_head;
  std::vector<double> reg_head;
};

HeadGradients objective_gradients(const ToyModel& model, std::span<const SceneBatch> scenes,
                                  const StepObjective& objective, double delta);

struct StepStats {
  double cls_loss = 0.0;
  double loc_loss = 0.0;
  bool skipped = false;  // batch without positives
  int zero_iou_positives = 0;
  bool cls_fallback = false;
  bool loc_fallback = false;
};

// One SGD step at the given (frozen) w_loc. Weights are recomputed from
// the pre-step forward pass and held constant within the step.
StepStats train_step(ToyModel& model, const AnchorSet& anchors,
                     std::span<const SceneBatch> scenes, const TrainConfig& cfg, double w_loc);

struct EpochLoss {
  double cls_loss = 0.0;
  double loc_loss = 0.0;
};

struct ExperimentDiagnostics {
  long zero_iou_positives = 0;
  int cls_fallback_batches = 0;
  int loc_fallback_batches = 0;
  int skipped_steps = 0;
};

struct DetectionRecord {
  Detection det;
  double best_gt_iou = 0.0;
};

struct SceneDetections {
  std::uint64_t scene_seed = 0;
  std::vector<DetectionRecord> detections;  // post-NMS
};

struct ExperimentReport {
  TrainConfig config;
  double used_w_loc = 1.0;  // calibrated value when calibration ran
  std::vector<EpochLoss> epoch_losses;
  ExperimentDiagnostics diagnostics;
  ToyModel final_model;
  ApTable ap;           // post-NMS, pooled over held-out scenes
  ScoreIouStats stats;  // post-NMS
  std::optional<double> spearman_post_nms;  // score vs IoU over detections with IoU >= 0.5
  std::optional<double> spearman_pre_nms;
  int n_detections = 0;
  int n_ground_truth = 0;
  std::vector<SceneDetections> scene_detections;
};

// Trains on scenes_count scenes, evaluates on a disjoint held-out set.
// Pure function of the config (seed included).
ExperimentReport run_experiment(const TrainConfig& cfg);

struct PairedRun {
  std::uint64_t seed = 0;
  ExperimentReport baseline;
  ExperimentReport treatment;
};

struct CompareReport {
  std::vector<PairedRun> runs;
  // seed means; spearman means are absent if any run lacked enough pairs
  std::optional<double> baseline_mean_spearman;
  std::optional<double> treatment_mean_spearman;
  std::array<double, 10> baseline_mean_ap{};
  std::array<double, 10> treatment_mean_ap{};
  double baseline_mean_map = 0.0;
  double treatment_mean_map = 0.0;
};

// Runs baseline_cfg and treatment_cfg under each seed (both sides see
// identical scenes) and aggregates paired metrics.
CompareReport compare_runs(const TrainConfig& baseline_cfg, const TrainConfig& treatment_cfg,
                           std::span<const std::uint64_t> seeds);

}  // namespace ioubal
