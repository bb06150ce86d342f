#include "ioubal/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "ioubal/analysis.hpp"

namespace ioubal {

namespace {

// Independent deterministic streams per (seed, purpose, index).
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(seed ^ (stream * 0xd1342543de82ef95ULL)) + index);
}

constexpr std::uint64_t kStreamObjects = 1;
constexpr std::uint64_t kStreamFeatures = 2;
constexpr std::uint64_t kStreamTrainScene = 3;
constexpr std::uint64_t kStreamEvalScene = 4;

double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double dot_row(const std::vector<double>& head, int row, const double* f) {
  const double* w = head.data() + static_cast<std::size_t>(row) * kFeatureDim;
  double acc = 0.0;
  for (int k = 0; k < kFeatureDim; ++k) acc += w[k] * f[k];
  return acc;
}

double dot_reg_row(const std::vector<double>& head, int row, const double* f) {
  const double* w = head.data() + static_cast<std::size_t>(row) * kFeatureDim;
  double acc = 0.0;
  for (int k : kRegFeatureIdx) acc += w[k] * f[k];
  return acc;
}

BoxDelta reg_delta(const std::vector<double>& head, const double* f) {
  return BoxDelta{dot_reg_row(head, 0, f), dot_reg_row(head, 1, f), dot_reg_row(head, 2, f),
                  dot_reg_row(head, 3, f)};
}

}  // namespace

void SimConfig::validate() const {
  if (!(scene_size > 0.0)) throw std::invalid_argument("SimConfig: scene_size must be > 0");
  if (min_objects < 1 || max_objects < min_objects) {
    throw std::invalid_argument("SimConfig: need 1 <= min_objects <= max_objects");
  }
  if (!(min_object_size > 0.0) || max_object_size < min_object_size ||
      max_object_size > scene_size) {
    throw std::invalid_argument("SimConfig: object sizes must satisfy 0 < min <= max <= scene");
  }
  if (max_pairwise_iou < 0.0 || max_pairwise_iou > 1.0) {
    throw std::invalid_argument("SimConfig: max_pairwise_iou must lie in [0,1]");
  }
  if (rejection_budget < 1) throw std::invalid_argument("SimConfig: rejection_budget must be >= 1");
  if (num_classes < 1) throw std::invalid_argument("SimConfig: num_classes must be >= 1");
  if (grid_size < 1) throw std::invalid_argument("SimConfig: grid_size must be >= 1");
  if (anchor_scales.empty() || anchor_ratios.empty()) {
    throw std::invalid_argument("SimConfig: anchor scales and ratios must be nonempty");
  }
  for (double s : anchor_scales) {
    if (!(s > 0.0)) throw std::invalid_argument("SimConfig: anchor scales must be positive");
  }
  for (double r : anchor_ratios) {
    if (!(r > 0.0)) throw std::invalid_argument("SimConfig: anchor ratios must be positive");
  }
  if (!(neg_thresh >= 0.0 && neg_thresh <= pos_thresh && pos_thresh <= 1.0)) {
    throw std::invalid_argument("SimConfig: need 0 <= neg_thresh <= pos_thresh <= 1");
  }
  if (feature_noise_sigma < 0.0) {
    throw std::invalid_argument("SimConfig: feature_noise_sigma must be >= 0");
  }
  if (hint_outlier_fraction < 0.0 || hint_outlier_fraction > 1.0) {
    throw std::invalid_argument("SimConfig: hint_outlier_fraction must lie in [0,1]");
  }
  if (hint_outlier_scale < 1.0) {
    throw std::invalid_argument("SimConfig: hint_outlier_scale must be >= 1");
  }
}

void TrainConfig::validate() const {
  loss.validate();
  sim.validate();
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (scenes_count < 1) throw std::invalid_argument("TrainConfig: scenes_count must be >= 1");
  if (eval_scenes < 1) throw std::invalid_argument("TrainConfig: eval_scenes must be >= 1");
  if (det_score_thresh < 0.0 || det_score_thresh >= 1.0) {
    throw std::invalid_argument("TrainConfig: det_score_thresh must lie in [0,1)");
  }
  if (nms_thresh < 0.0 || nms_thresh > 1.0) {
    throw std::invalid_argument("TrainConfig: nms_thresh must lie in [0,1]");
  }
  if (max_dets_per_scene < 1) {
    throw std::invalid_argument("TrainConfig: max_dets_per_scene must be >= 1");
  }
}

std::uint64_t train_scene_seed(std::uint64_t experiment_seed, int index) {
  return mix_seed(experiment_seed, kStreamTrainScene, static_cast<std::uint64_t>(index));
}

std::uint64_t eval_scene_seed(std::uint64_t experiment_seed, int index) {
  return mix_seed(experiment_seed, kStreamEvalScene, static_cast<std::uint64_t>(index));
}

Scene generate_scene(std::uint64_t seed, const SimConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(mix_seed(seed, kStreamObjects, 0));
  std::uniform_int_distribution<int> count_dist(cfg.min_objects, cfg.max_objects);
  std::uniform_real_distribution<double> size_dist(cfg.min_object_size, cfg.max_object_size);
  std::uniform_int_distribution<int> class_dist(0, cfg.num_classes - 1);

  Scene scene;
  scene.seed = seed;
  scene.bounds = Box{0.0, 0.0, cfg.scene_size, cfg.scene_size};

  const int target_count = count_dist(rng);
  int attempts = 0;
  while (static_cast<int>(scene.objects.size()) < target_count) {
    if (++attempts > cfg.rejection_budget) {
      throw std::runtime_error("generate_scene: rejection budget exhausted");
    }
    const double w = size_dist(rng);
    const double h = size_dist(rng);
    std::uniform_real_distribution<double> cx_dist(0.5 * w, cfg.scene_size - 0.5 * w);
    std::uniform_real_distribution<double> cy_dist(0.5 * h, cfg.scene_size - 0.5 * h);
    const Box box = Box::centered(cx_dist(rng), cy_dist(rng), w, h);
    const int class_id = class_dist(rng);

    bool ok = true;
    for (const auto& obj : scene.objects) {
      if (iou(obj.box, box) > cfg.max_pairwise_iou) {
        ok = false;
        break;
      }
    }
    if (ok) scene.objects.push_back(SceneObject{box, class_id});
  }
  return scene;
}

AnchorSet build_anchors(const SimConfig& cfg) {
  cfg.validate();
  AnchorSet set;
  set.anchors.reserve(static_cast<std::size_t>(cfg.grid_size) * cfg.grid_size *
                      cfg.anchor_scales.size() * cfg.anchor_ratios.size());
  const double stride = cfg.scene_size / cfg.grid_size;
  for (int gy = 0; gy < cfg.grid_size; ++gy) {
    for (int gx = 0; gx < cfg.grid_size; ++gx) {
      const double cx = (gx + 0.5) * stride;
      const double cy = (gy + 0.5) * stride;
      for (double scale : cfg.anchor_scales) {
        for (double ratio : cfg.anchor_ratios) {
          const double w = scale * std::sqrt(ratio);
          const double h = scale / std::sqrt(ratio);
          set.anchors.push_back(Box::centered(cx, cy, w, h));
        }
      }
    }
  }
  return set;
}

MatchResult match_anchors(const AnchorSet& anchors, const Scene& scene, double pos_thresh,
                          double neg_thresh) {
  if (!(neg_thresh >= 0.0 && neg_thresh <= pos_thresh && pos_thresh <= 1.0)) {
    throw std::invalid_argument("match_anchors: need 0 <= neg_thresh <= pos_thresh <= 1");
  }
  MatchResult result;
  result.assignments.resize(anchors.anchors.size());
  for (std::size_t a = 0; a < anchors.anchors.size(); ++a) {
    AnchorAssignment& assign = result.assignments[a];
    assign.best_object = scene.objects.empty() ? -1 : 0;
    for (std::size_t o = 0; o < scene.objects.size(); ++o) {
      const double v = iou(anchors.anchors[a], scene.objects[o].box);
      if (v > assign.max_iou) {
        assign.max_iou = v;
        assign.best_object = static_cast<int>(o);
      }
    }
    if (assign.max_iou >= pos_thresh) {
      assign.kind = MatchKind::Positive;
    } else if (assign.max_iou < neg_thresh) {
      assign.kind = MatchKind::Negative;
    } else {
      assign.kind = MatchKind::Ignore;
    }
  }
  return result;
}

SceneBatch make_scene_batch(std::uint64_t seed, const SimConfig& cfg, const AnchorSet& anchors) {
  SceneBatch batch;
  batch.scene = generate_scene(seed, cfg);
  batch.match = match_anchors(anchors, batch.scene, cfg.pos_thresh, cfg.neg_thresh);

  const std::size_t n = anchors.anchors.size();
  batch.features.resize(n * kFeatureDim);
  batch.target_deltas.resize(n);

  std::mt19937_64 rng(mix_seed(seed, kStreamFeatures, 0));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> outlier(0.0, 1.0);
  const double s = cfg.scene_size;

  for (std::size_t a = 0; a < n; ++a) {
    const Box& anchor = anchors.anchors[a];
    const AnchorAssignment& assign = batch.match.assignments[a];
    const Box target = batch.scene.objects[assign.best_object].box;
    const BoxDelta g = encode(anchor, target);
    batch.target_deltas[a] = g;

    const double sigma = cfg.feature_noise_sigma *
                         (outlier(rng) < cfg.hint_outlier_fraction ? cfg.hint_outlier_scale : 1.0);
    const double target_offsets[4] = {g.dcx, g.dcy, g.dw, g.dh};

    double* f = batch.features.data() + a * kFeatureDim;
    f[0] = 1.0;
    for (int m = 0; m < 4; ++m) f[1 + m] = target_offsets[m] + sigma * noise(rng);
    for (int m = 0; m < 4; ++m) f[5 + m] = target_offsets[m] + sigma * noise(rng);
    for (int m = 0; m < 4; ++m) f[9 + m] = std::abs(f[1 + m]);
    // disagreement between the encodings, standardized to the base noise
    // level so the channel trains at the same rate as the others
    const double disagreement_unit =
        cfg.feature_noise_sigma > 0.0 ? cfg.feature_noise_sigma : 1.0;
    for (int m = 0; m < 4; ++m) f[13 + m] = std::abs(f[1 + m] - f[5 + m]) / disagreement_unit;
    f[17] = anchor.cx() / s - 0.5;
    f[18] = anchor.cy() / s - 0.5;
    f[19] = anchor.w() / s;
    f[20] = anchor.h() / s;

    if (assign.kind == MatchKind::Positive) {
      batch.positive_anchors.push_back(static_cast<int>(a));
    }
  }
  return batch;
}

ToyModel ToyModel::zeros(int num_classes) {
  ToyModel model;
  model.num_classes = num_classes;
  model.cls_head.assign(static_cast<std::size_t>(num_classes) * kFeatureDim, 0.0);
  model.reg_head.assign(4 * kFeatureDim, 0.0);
  return model;
}

bool ToyModel::finite() const {
  auto ok = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  return ok(cls_head) && ok(reg_head);
}

ForwardResult forward(const ToyModel& model, const AnchorSet& anchors, const SceneBatch& batch) {
  const std::size_t n = batch.target_deltas.size();
  ForwardResult out;
  out.scores.resize(n * model.num_classes);
  out.deltas.resize(n);

  for (std::size_t a = 0; a < n; ++a) {
    const double* f = batch.features.data() + a * kFeatureDim;
    for (int c = 0; c < model.num_classes; ++c) {
      out.scores[a * model.num_classes + c] = clamp_score(sigmoid(dot_row(model.cls_head, c, f)));
    }
    out.deltas[a] = reg_delta(model.reg_head, f);
  }

  out.positive_iou.reserve(batch.positive_anchors.size());
  for (int a : batch.positive_anchors) {
    const auto& assign = batch.match.assignments[a];
    const Box decoded = decode(anchors.anchors[a], out.deltas[a]);
    const Box clipped = clip_box(decoded, batch.scene.bounds);
    out.positive_iou.push_back(iou(clipped, batch.scene.objects[assign.best_object].box));
  }
  return out;
}

StepObjective build_objective(const ToyModel& model, const AnchorSet& anchors,
                              std::span<const SceneBatch> scenes, const TrainConfig& cfg,
                              double w_loc) {
  StepObjective obj;

  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const SceneBatch& batch = scenes[s];
    const ForwardResult fwd = forward(model, anchors, batch);

    std::size_t pos_idx = 0;
    for (std::size_t a = 0; a < batch.target_deltas.size(); ++a) {
      const auto& assign = batch.match.assignments[a];
      if (assign.kind == MatchKind::Ignore) continue;
      if (assign.kind == MatchKind::Positive) {
        const int target_class = batch.scene.objects[assign.best_object].class_id;
        for (int c = 0; c < model.num_classes; ++c) {
          const double p = fwd.scores[a * model.num_classes + c];
          if (c == target_class) {
            obj.positives.push_back(
                PositiveExample{p, fwd.deltas[a], batch.target_deltas[a], fwd.positive_iou[pos_idx]});
            obj.positive_refs.push_back(ExampleRef{static_cast<int>(s), static_cast<int>(a), c});
          } else {
            obj.negatives.push_back(NegativeExample{p});
            obj.negative_refs.push_back(ExampleRef{static_cast<int>(s), static_cast<int>(a), c});
          }
        }
        ++pos_idx;
      } else {
        for (int c = 0; c < model.num_classes; ++c) {
          obj.negatives.push_back(NegativeExample{fwd.scores[a * model.num_classes + c]});
          obj.negative_refs.push_back(ExampleRef{static_cast<int>(s), static_cast<int>(a), c});
        }
      }
    }
  }

  if (obj.positives.empty()) {
    return obj;
  }
  for (const auto& ex : obj.positives) {
    if (ex.iou == 0.0) obj.cls_diag.zero_iou_positives++;
  }
  if (cfg.baseline) {
    obj.cls_w.assign(obj.positives.size(), 1.0);
    obj.loc_w.assign(obj.positives.size(), 1.0);
    return obj;
  }
  LossConfig loss_cfg = cfg.loss;
  loss_cfg.w_loc = w_loc;
  WeightDiagnostics cls_diag, loc_diag;
  obj.cls_w = cls_weights(obj.positives, loss_cfg.eta, &cls_diag);
  obj.loc_w = loc_weights(obj.positives, loss_cfg, &loc_diag);
  obj.cls_diag.normalizer_fallback = cls_diag.normalizer_fallback;
  obj.loc_diag.normalizer_fallback = loc_diag.normalizer_fallback;
  return obj;
}

namespace {

struct Recomputed {
  double score = 0.0;  // clamped
  BoxDelta pred_delta;
};

Recomputed recompute(const ToyModel& model, std::span<const SceneBatch> scenes,
                     const ExampleRef& ref, bool with_delta) {
  const SceneBatch& batch = scenes[ref.scene];
  const double* f = batch.features.data() + static_cast<std::size_t>(ref.anchor) * kFeatureDim;
  Recomputed r;
  r.score = clamp_score(sigmoid(dot_row(model.cls_head, ref.cls, f)));
  if (with_delta) {
    r.pred_delta = reg_delta(model.reg_head, f);
  }
  return r;
}

}  // namespace

BatchLoss objective_loss(const ToyModel& model, std::span<const SceneBatch> scenes,
                         const StepObjective& objective, double delta) {
  BatchLoss loss;
  if (objective.positives.empty()) return loss;

  std::vector<PositiveExample> positives = objective.positives;
  for (std::size_t i = 0; i < positives.size(); ++i) {
    const Recomputed r = recompute(model, scenes, objective.positive_refs[i], true);
    positives[i].score = r.score;
    positives[i].pred_delta = r.pred_delta;
  }
  std::vector<NegativeExample> negatives = objective.negatives;
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    negatives[i].score = recompute(model, scenes, objective.negative_refs[i], false).score;
  }

  loss.cls_loss = cls_loss_with_weights(positives, negatives, objective.cls_w);
  loss.loc_loss = loc_loss_with_weights(positives, objective.loc_w, delta);
  return loss;
}

HeadGradients objective_gradients(const ToyModel& model, std::span<const SceneBatch> scenes,
                                  const StepObjective& objective, double delta) {
  HeadGradients grads;
  grads.cls_head.assign(model.cls_head.size(), 0.0);
  grads.reg_head.assign(model.reg_head.size(), 0.0);
  if (objective.positives.empty()) return grads;

  std::vector<PositiveExample> positives = objective.positives;
  for (std::size_t i = 0; i < positives.size(); ++i) {
    const ExampleRef& ref = objective.positive_refs[i];
    const Recomputed r = recompute(model, scenes, ref, true);
    positives[i].score = r.score;
    positives[i].pred_delta = r.pred_delta;

    const double* f =
        scenes[ref.scene].features.data() + static_cast<std::size_t>(ref.anchor) * kFeatureDim;
    // chain rule through the logistic squashing: dp/dz = p(1-p)
    const double gz = cls_grad(r.score, 1, objective.cls_w[i]) * r.score * (1.0 - r.score);
    double* row = grads.cls_head.data() + static_cast<std::size_t>(ref.cls) * kFeatureDim;
    for (int k = 0; k < kFeatureDim; ++k) row[k] += gz * f[k];
  }

  const auto loc_grads = loc_grad_with_weights(positives, objective.loc_w, delta);
  for (std::size_t i = 0; i < positives.size(); ++i) {
    const ExampleRef& ref = objective.positive_refs[i];
    const double* f =
        scenes[ref.scene].features.data() + static_cast<std::size_t>(ref.anchor) * kFeatureDim;
    const double gl[4] = {loc_grads[i].dcx, loc_grads[i].dcy, loc_grads[i].dw, loc_grads[i].dh};
    for (int m = 0; m < 4; ++m) {
      double* row = grads.reg_head.data() + static_cast<std::size_t>(m) * kFeatureDim;
      for (int k : kRegFeatureIdx) row[k] += gl[m] * f[k];
    }
  }

  for (std::size_t i = 0; i < objective.negatives.size(); ++i) {
    const ExampleRef& ref = objective.negative_refs[i];
    const double p = recompute(model, scenes, ref, false).score;
    const double* f =
        scenes[ref.scene].features.data() + static_cast<std::size_t>(ref.anchor) * kFeatureDim;
    const double gz = cls_grad(p, 0, 1.0) * p * (1.0 - p);
    double* row = grads.cls_head.data() + static_cast<std::size_t>(ref.cls) * kFeatureDim;
    for (int k = 0; k < kFeatureDim; ++k) row[k] += gz * f[k];
  }
  return grads;
}

StepStats train_step(ToyModel& model, const AnchorSet& anchors,
                     std::span<const SceneBatch> scenes, const TrainConfig& cfg, double w_loc) {
  if (!model.finite()) {
    throw std::runtime_error("train_step: model parameters diverged");
  }
  const StepObjective obj = build_objective(model, anchors, scenes, cfg, w_loc);
  StepStats stats;
  stats.zero_iou_positives = obj.cls_diag.zero_iou_positives;
  stats.cls_fallback = obj.cls_diag.normalizer_fallback;
  stats.loc_fallback = obj.loc_diag.normalizer_fallback;
  if (obj.positives.empty()) {
    stats.skipped = true;
    return stats;
  }

  const BatchLoss loss = objective_loss(model, scenes, obj, cfg.loss.delta);
  stats.cls_loss = loss.cls_loss;
  stats.loc_loss = loss.loc_loss;

  const HeadGradients grads = objective_gradients(model, scenes, obj, cfg.loss.delta);
  for (std::size_t i = 0; i < model.cls_head.size(); ++i) {
    model.cls_head[i] -= cfg.learning_rate * grads.cls_head[i];
  }
  for (std::size_t i = 0; i < model.reg_head.size(); ++i) {
    model.reg_head[i] -= cfg.learning_rate * grads.reg_head[i];
  }
  return stats;
}

namespace {

struct EvalOutput {
  std::vector<ScenePredictions> post_nms;
  std::vector<std::pair<double, double>> pairs_post;  // (score, best IoU), IoU >= 0.5
  std::vector<std::pair<double, double>> pairs_pre;
  std::vector<SceneDetections> records;
  int n_detections = 0;
  int n_ground_truth = 0;
};

double best_iou_same_class(const Detection& det, const std::vector<SceneObject>& objects) {
  double best = 0.0;
  for (const auto& obj : objects) {
    if (obj.class_id != det.class_id) continue;
    best = std::max(best, iou(det.box, obj.box));
  }
  return best;
}

EvalOutput evaluate_model(const ToyModel& model, const AnchorSet& anchors,
                          std::span<const SceneBatch> eval_batches, const TrainConfig& cfg) {
  EvalOutput out;
  for (const SceneBatch& batch : eval_batches) {
    const ForwardResult fwd = forward(model, anchors, batch);

    std::vector<Detection> raw;
    for (std::size_t a = 0; a < batch.target_deltas.size(); ++a) {
      for (int c = 0; c < model.num_classes; ++c) {
        const double p = fwd.scores[a * model.num_classes + c];
        if (p < cfg.det_score_thresh) continue;
        const Box decoded = clip_box(decode(anchors.anchors[a], fwd.deltas[a]), batch.scene.bounds);
        raw.push_back(Detection{decoded, p, c});
      }
    }
    std::stable_sort(raw.begin(), raw.end(),
                     [](const Detection& x, const Detection& y) { return x.score > y.score; });
    if (static_cast<int>(raw.size()) > cfg.max_dets_per_scene) {
      raw.resize(cfg.max_dets_per_scene);
    }

    const std::vector<Detection> kept = nms(raw, cfg.nms_thresh);

    ScenePredictions preds;
    preds.detections = kept;
    for (const auto& obj : batch.scene.objects) {
      preds.ground_truth.push_back(GtBox{obj.box, obj.class_id});
    }
    out.n_ground_truth += static_cast<int>(batch.scene.objects.size());
    out.n_detections += static_cast<int>(kept.size());

    SceneDetections rec;
    rec.scene_seed = batch.scene.seed;
    for (const auto& det : kept) {
      const double best = best_iou_same_class(det, batch.scene.objects);
      rec.detections.push_back(DetectionRecord{det, best});
      if (best >= 0.5) out.pairs_post.emplace_back(det.score, best);
    }
    for (const auto& det : raw) {
      const double best = best_iou_same_class(det, batch.scene.objects);
      if (best >= 0.5) out.pairs_pre.emplace_back(det.score, best);
    }
    out.records.push_back(std::move(rec));
    out.post_nms.push_back(std::move(preds));
  }
  return out;
}

}  // namespace

ExperimentReport run_experiment(const TrainConfig& cfg) {
  cfg.validate();

  ExperimentReport report;
  report.config = cfg;

  const AnchorSet anchors = build_anchors(cfg.sim);

  std::vector<SceneBatch> train_batches;
  train_batches.reserve(cfg.scenes_count);
  for (int i = 0; i < cfg.scenes_count; ++i) {
    train_batches.push_back(
        make_scene_batch(train_scene_seed(cfg.seed, i), cfg.sim, anchors));
  }
  std::vector<SceneBatch> eval_batches;
  eval_batches.reserve(cfg.eval_scenes);
  for (int i = 0; i < cfg.eval_scenes; ++i) {
    eval_batches.push_back(
        make_scene_batch(eval_scene_seed(cfg.seed, i), cfg.sim, anchors));
  }

  ToyModel model = ToyModel::zeros(cfg.sim.num_classes);

  std::vector<std::pair<int, int>> steps;  // (first scene, count)
  for (int first = 0; first < cfg.scenes_count; first += cfg.batch_size) {
    steps.emplace_back(first, std::min(cfg.batch_size, cfg.scenes_count - first));
  }

  double w_loc = cfg.baseline ? 1.0 : cfg.loss.w_loc;
  if (!cfg.baseline && cfg.calibrate_w_loc && cfg.loss.loc_weight_mode == LocWeightMode::Manual) {
    // fit on the first batch that actually trains, then freeze
    bool calibrated = false;
    for (const auto& [first, count] : steps) {
      const StepObjective obj = build_objective(
          model, anchors, std::span<const SceneBatch>(train_batches.data() + first, count), cfg,
          1.0);
      if (obj.positives.empty()) continue;
      w_loc = calibrate_w_loc(obj.positives, cfg.loss.lambda, cfg.loss.delta);
      calibrated = true;
      break;
    }
    if (!calibrated) {
      throw std::runtime_error("run_experiment: no batch with positives to calibrate w_loc");
    }
  }
  report.used_w_loc = w_loc;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double cls_sum = 0.0;
    double loc_sum = 0.0;
    int counted = 0;
    for (const auto& [first, count] : steps) {
      const StepStats stats = train_step(
          model, anchors, std::span<const SceneBatch>(train_batches.data() + first, count), cfg,
          w_loc);
      report.diagnostics.zero_iou_positives += stats.zero_iou_positives;
      if (stats.cls_fallback) report.diagnostics.cls_fallback_batches += 1;
      if (stats.loc_fallback) report.diagnostics.loc_fallback_batches += 1;
      if (stats.skipped) {
        report.diagnostics.skipped_steps += 1;
        continue;
      }
      cls_sum += stats.cls_loss;
      loc_sum += stats.loc_loss;
      ++counted;
    }
    EpochLoss epoch_loss;
    if (counted > 0) {
      epoch_loss.cls_loss = cls_sum / counted;
      epoch_loss.loc_loss = loc_sum / counted;
    }
    report.epoch_losses.push_back(epoch_loss);
  }

  report.final_model = model;

  const EvalOutput eval = evaluate_model(model, anchors, eval_batches, cfg);
  report.ap = coco_ap(eval.post_nms);
  report.stats = score_iou_stats(eval.post_nms);
  report.n_detections = eval.n_detections;
  report.n_ground_truth = eval.n_ground_truth;
  report.scene_detections = eval.records;
  report.spearman_post_nms =
      eval.pairs_post.size() >= 2 ? rank_correlation(eval.pairs_post) : std::nullopt;
  report.spearman_pre_nms =
      eval.pairs_pre.size() >= 2 ? rank_correlation(eval.pairs_pre) : std::nullopt;
  return report;
}

CompareReport compare_runs(const TrainConfig& baseline_cfg, const TrainConfig& treatment_cfg,
                           std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) {
    throw std::invalid_argument("compare_runs: at least one seed required");
  }
  CompareReport report;
  double base_sp = 0.0, treat_sp = 0.0;
  bool all_sp = true;
  for (std::uint64_t seed : seeds) {
    PairedRun run;
    run.seed = seed;
    TrainConfig b = baseline_cfg;
    b.seed = seed;
    TrainConfig t = treatment_cfg;
    t.seed = seed;
    run.baseline = run_experiment(b);
    run.treatment = run_experiment(t);

    if (run.baseline.spearman_post_nms && run.treatment.spearman_post_nms) {
      base_sp += *run.baseline.spearman_post_nms;
      treat_sp += *run.treatment.spearman_post_nms;
    } else {
      all_sp = false;
    }
    for (std::size_t i = 0; i < kApThresholds.size(); ++i) {
      report.baseline_mean_ap[i] += run.baseline.ap.ap[i];
      report.treatment_mean_ap[i] += run.treatment.ap.ap[i];
    }
    report.baseline_mean_map += run.baseline.ap.mean_ap;
    report.treatment_mean_map += run.treatment.ap.mean_ap;
    report.runs.push_back(std::move(run));
  }
  const double n = static_cast<double>(seeds.size());
  for (std::size_t i = 0; i < kApThresholds.size(); ++i) {
    report.baseline_mean_ap[i] /= n;
    report.treatment_mean_ap[i] /= n;
  }
  report.baseline_mean_map /= n;
  report.treatment_mean_map /= n;
  if (all_sp) {
    report.baseline_mean_spearman = base_sp / n;
    report.treatment_mean_spearman = treat_sp / n;
  }
  return report;
}

}  // namespace ioubal
