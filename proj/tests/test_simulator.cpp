#include "ioubal/simulator.hpp"

#include <cmath>
#include <stdexcept>
#include <random>

#include "doctest.h"
#include "ioubal/analysis.hpp"
#include "ioubal/report.hpp"

using namespace ioubal;

namespace {

SimConfig small_sim() {
  SimConfig sim;
  sim.grid_size = 6;
  sim.anchor_scales = {12.0, 20.0};
  sim.anchor_ratios = {1.0, 2.0};
  return sim;
}

TrainConfig small_train() {
  TrainConfig cfg;
  cfg.sim = small_sim();
  cfg.scenes_count = 4;
  cfg.eval_scenes = 2;
  cfg.epochs = 3;
  cfg.learning_rate = 2e-5;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("generate_scene: deterministic, bounded cardinality, bounded overlap") {
  const SimConfig sim = small_sim();
  const Scene a = generate_scene(42, sim);
  const Scene b = generate_scene(42, sim);
  REQUIRE(a.objects.size() == b.objects.size());
  for (std::size_t i = 0; i < a.objects.size(); ++i) {
    CHECK(a.objects[i].box.x1 == b.objects[i].box.x1);
    CHECK(a.objects[i].box.y2 == b.objects[i].box.y2);
    CHECK(a.objects[i].class_id == b.objects[i].class_id);
  }

  SimConfig one = sim;
  one.min_objects = 1;
  one.max_objects = 1;
  CHECK(generate_scene(7, one).objects.size() == 1);

  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Scene scene = generate_scene(seed, sim);
    CHECK(!scene.objects.empty());
    CHECK(scene.objects.size() <= static_cast<std::size_t>(sim.max_objects));
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
      const Box& box = scene.objects[i].box;
      CHECK(box.x1 >= scene.bounds.x1);
      CHECK(box.y1 >= scene.bounds.y1);
      CHECK(box.x2 <= scene.bounds.x2);
      CHECK(box.y2 <= scene.bounds.y2);
      CHECK(box.area() > 0.0);
      for (std::size_t j = i + 1; j < scene.objects.size(); ++j) {
        CHECK(iou(box, scene.objects[j].box) <= sim.max_pairwise_iou);
      }
    }
  }
}

TEST_CASE("build_anchors: count and positive areas") {
  const SimConfig sim = small_sim();
  const AnchorSet anchors = build_anchors(sim);
  CHECK(anchors.anchors.size() == 6u * 6u * 2u * 2u);
  for (const Box& box : anchors.anchors) CHECK(box.area() > 0.0);
}

TEST_CASE("match_anchors: identity positive, faraway negative") {
  const SimConfig sim = small_sim();
  const AnchorSet anchors = build_anchors(sim);

  Scene scene;
  scene.bounds = Box{0, 0, sim.scene_size, sim.scene_size};
  // plant an object exactly on an interior anchor
  const std::size_t chosen = anchors.anchors.size() / 2;
  scene.objects.push_back(SceneObject{anchors.anchors[chosen], 0});

  const MatchResult match = match_anchors(anchors, scene, sim.pos_thresh, sim.neg_thresh);
  CHECK(match.assignments[chosen].kind == MatchKind::Positive);
  CHECK(match.assignments[chosen].max_iou == 1.0);

  // the first corner anchor is far from the planted object
  CHECK(match.assignments[0].max_iou == 0.0);
  CHECK(match.assignments[0].kind == MatchKind::Negative);

  CHECK_THROWS_AS(match_anchors(anchors, scene, 0.3, 0.5), std::invalid_argument);
}

TEST_CASE("match_anchors: equals brute-force classification on random scenes") {
  const SimConfig sim = small_sim();
  const AnchorSet anchors = build_anchors(sim);
  for (std::uint64_t seed = 100; seed < 140; ++seed) {
    const Scene scene = generate_scene(seed, sim);
    const MatchResult match = match_anchors(anchors, scene, sim.pos_thresh, sim.neg_thresh);
    for (std::size_t a = 0; a < anchors.anchors.size(); ++a) {
      double best = 0.0;
      int best_obj = 0;
      for (std::size_t o = 0; o < scene.objects.size(); ++o) {
        const double v = iou(anchors.anchors[a], scene.objects[o].box);
        if (v > best) {
          best = v;
          best_obj = static_cast<int>(o);
        }
      }
      const auto& assign = match.assignments[a];
      CHECK(assign.max_iou == best);
      CHECK(assign.best_object == best_obj);
      if (best >= sim.pos_thresh) {
        CHECK(assign.kind == MatchKind::Positive);
      } else if (best < sim.neg_thresh) {
        CHECK(assign.kind == MatchKind::Negative);
      } else {
        CHECK(assign.kind == MatchKind::Ignore);
      }
    }
  }
}

TEST_CASE("make_scene_batch: deterministic features") {
  const SimConfig sim = small_sim();
  const AnchorSet anchors = build_anchors(sim);
  const SceneBatch a = make_scene_batch(21, sim, anchors);
  const SceneBatch b = make_scene_batch(21, sim, anchors);
  REQUIRE(a.features.size() == b.features.size());
  for (std::size_t i = 0; i < a.features.size(); ++i) {
    CHECK(a.features[i] == b.features[i]);
  }
  CHECK(a.positive_anchors == b.positive_anchors);
}

TEST_CASE("forward: zero regression head reproduces the anchors") {
  const SimConfig sim = small_sim();
  const AnchorSet anchors = build_anchors(sim);
  const SceneBatch batch = make_scene_batch(3, sim, anchors);
  const ToyModel model = ToyModel::zeros(sim.num_classes);
  const ForwardResult fwd = forward(model, anchors, batch);

  for (const BoxDelta& d : fwd.deltas) {
    CHECK(d.dcx == 0.0);
    CHECK(d.dcy == 0.0);
    CHECK(d.dw == 0.0);
    CHECK(d.dh == 0.0);
  }
  for (double p : fwd.scores) CHECK(p == 0.5);

  for (std::size_t i = 0; i < batch.positive_anchors.size(); ++i) {
    const int a = batch.positive_anchors[i];
    const auto& assign = batch.match.assignments[a];
    const Box clipped = clip_box(anchors.anchors[a], batch.scene.bounds);
    const double expected = iou(clipped, batch.scene.objects[assign.best_object].box);
    CHECK(fwd.positive_iou[i] == expected);
    // interior anchors coincide with the matching IoU
    const Box& anchor = anchors.anchors[a];
    if (anchor.x1 >= 0 && anchor.y1 >= 0 && anchor.x2 <= sim.scene_size &&
        anchor.y2 <= sim.scene_size) {
      CHECK(fwd.positive_iou[i] == assign.max_iou);
    }
  }
}

TEST_CASE("forward: a head that copies the noiseless hints regresses perfectly") {
  SimConfig sim = small_sim();
  sim.feature_noise_sigma = 0.0;
  const AnchorSet anchors = build_anchors(sim);
  const SceneBatch batch = make_scene_batch(5, sim, anchors);

  ToyModel model = ToyModel::zeros(sim.num_classes);
  // reg row m reads feature 1+m, which holds the exact target offset
  for (int m = 0; m < 4; ++m) {
    model.reg_head[static_cast<std::size_t>(m) * kFeatureDim + 1 + m] = 1.0;
  }
  const ForwardResult fwd = forward(model, anchors, batch);
  for (double v : fwd.positive_iou) {
    CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("forward: regressed IoU equals an independent geometry recomputation") {
  const SimConfig sim = small_sim();
  const AnchorSet anchors = build_anchors(sim);
  const SceneBatch batch = make_scene_batch(9, sim, anchors);

  ToyModel model = ToyModel::zeros(sim.num_classes);
  std::mt19937_64 rng(4242);
  std::uniform_real_distribution<double> weight_dist(-0.05, 0.05);
  for (double& w : model.cls_head) w = weight_dist(rng);
  for (double& w : model.reg_head) w = weight_dist(rng);

  const ForwardResult fwd = forward(model, anchors, batch);
  for (std::size_t i = 0; i < batch.positive_anchors.size(); ++i) {
    const int a = batch.positive_anchors[i];
    const auto& assign = batch.match.assignments[a];
    const Box expected_box = clip_box(decode(anchors.anchors[a], fwd.deltas[a]),
                                      batch.scene.bounds);
    const double expected = iou(expected_box, batch.scene.objects[assign.best_object].box);
    CHECK(fwd.positive_iou[i] == expected);
  }
}

TEST_CASE("train_step: zero learning rate leaves the model unchanged") {
  TrainConfig cfg = small_train();
  cfg.learning_rate = 0.0;  // bypasses validate(); the step itself is a null update
  const AnchorSet anchors = build_anchors(cfg.sim);
  const std::vector<SceneBatch> scenes{make_scene_batch(1, cfg.sim, anchors)};

  ToyModel model = ToyModel::zeros(cfg.sim.num_classes);
  const ToyModel before = model;
  const StepStats stats = train_step(model, anchors, scenes, cfg, 1.0);
  CHECK(!stats.skipped);
  CHECK(model.cls_head == before.cls_head);
  CHECK(model.reg_head == before.reg_head);
  CHECK(stats.cls_loss > 0.0);
}

TEST_CASE("train_step: descends on a fixed batch") {
  TrainConfig cfg = small_train();
  cfg.learning_rate = 1e-5;
  const AnchorSet anchors = build_anchors(cfg.sim);
  const std::vector<SceneBatch> scenes{make_scene_batch(2, cfg.sim, anchors)};

  ToyModel model = ToyModel::zeros(cfg.sim.num_classes);
  const StepObjective obj = build_objective(model, anchors, scenes, cfg, 1.0);
  REQUIRE(!obj.positives.empty());
  const BatchLoss before = objective_loss(model, scenes, obj, cfg.loss.delta);

  ToyModel stepped = model;
  train_step(stepped, anchors, scenes, cfg, 1.0);
  // the frozen objective must improve after one small step
  const BatchLoss after = objective_loss(stepped, scenes, obj, cfg.loss.delta);
  CHECK(after.total() < before.total());
}

TEST_CASE("train_step: a batch without positives is skipped with a diagnostic") {
  TrainConfig cfg = small_train();
  cfg.sim.pos_thresh = 0.999;
  cfg.sim.neg_thresh = 0.9;
  const AnchorSet anchors = build_anchors(cfg.sim);
  const std::vector<SceneBatch> scenes{make_scene_batch(1, cfg.sim, anchors)};
  REQUIRE(scenes[0].positive_anchors.empty());

  ToyModel model = ToyModel::zeros(cfg.sim.num_classes);
  const ToyModel before = model;
  const StepStats stats = train_step(model, anchors, scenes, cfg, 1.0);
  CHECK(stats.skipped);
  CHECK(model.cls_head == before.cls_head);
}

TEST_CASE("analytic head gradients match finite differences of the frozen objective") {
  TrainConfig cfg = small_train();
  cfg.loss.eta = 1.5;
  cfg.loss.lambda = 1.5;
  cfg.loss.w_loc = 3.049;
  const AnchorSet anchors = build_anchors(cfg.sim);

  // pick a scene whose positive residuals stay clear of the smooth-L1 kink
  std::vector<SceneBatch> scenes;
  ToyModel model = ToyModel::zeros(cfg.sim.num_classes);
  std::mt19937_64 rng(999);
  std::uniform_real_distribution<double> weight_dist(-0.03, 0.03);
  for (std::uint64_t seed = 50;; ++seed) {
    scenes.assign(1, make_scene_batch(seed, cfg.sim, anchors));
    model = ToyModel::zeros(cfg.sim.num_classes);
    for (double& w : model.cls_head) w = weight_dist(rng);
    for (double& w : model.reg_head) w = weight_dist(rng);

    const ForwardResult fwd = forward(model, anchors, scenes[0]);
    bool clear = !scenes[0].positive_anchors.empty();
    for (int a : scenes[0].positive_anchors) {
      const BoxDelta& pred = fwd.deltas[a];
      const BoxDelta& target = scenes[0].target_deltas[a];
      for (double d : {pred.dcx - target.dcx, pred.dcy - target.dcy, pred.dw - target.dw,
                       pred.dh - target.dh}) {
        if (std::abs(std::abs(d) - cfg.loss.delta) < 2e-3) clear = false;
      }
    }
    if (clear) break;
  }

  const StepObjective obj = build_objective(model, anchors, scenes, cfg, cfg.loss.w_loc);
  REQUIRE(!obj.positives.empty());
  const HeadGradients grads = objective_gradients(model, scenes, obj, cfg.loss.delta);

  const double h = 1e-6;
  auto check_param = [&](std::vector<double>& params, std::size_t idx, double analytic) {
    const double saved = params[idx];
    params[idx] = saved + h;
    const double up = objective_loss(model, scenes, obj, cfg.loss.delta).total();
    params[idx] = saved - h;
    const double down = objective_loss(model, scenes, obj, cfg.loss.delta).total();
    params[idx] = saved;
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
    CHECK(std::abs(analytic - numeric) <= 1e-4 * scale);
  };

  for (std::size_t i = 0; i < model.cls_head.size(); ++i) {
    check_param(model.cls_head, i, grads.cls_head[i]);
  }
  for (std::size_t i = 0; i < model.reg_head.size(); ++i) {
    check_param(model.reg_head, i, grads.reg_head[i]);
  }
}

TEST_CASE("gradient-flow contract: rescaling iou rescales gradients by the weight ratio") {
  LossConfig cfg;
  cfg.lambda = 1.5;
  cfg.w_loc = 3.049;

  PositiveExample ex;
  ex.score = 0.5;
  ex.iou = 0.6;
  ex.pred_delta = BoxDelta{0.4, -0.8, 0.05, 0.2};
  std::vector<PositiveExample> low{ex};
  std::vector<PositiveExample> high{ex};
  high[0].iou = 0.9;

  const auto g_low = loc_grad(low, cfg);
  const auto g_high = loc_grad(high, cfg);
  const double ratio = std::pow(0.9, cfg.lambda) / std::pow(0.6, cfg.lambda);
  for (auto [a, b] : {std::pair{g_low[0].dcx, g_high[0].dcx},
                      std::pair{g_low[0].dcy, g_high[0].dcy},
                      std::pair{g_low[0].dw, g_high[0].dw},
                      std::pair{g_low[0].dh, g_high[0].dh}}) {
    if (a == 0.0) {
      CHECK(b == 0.0);
    } else {
      CHECK(b / a == doctest::Approx(ratio).epsilon(1e-12));
    }
  }
}

TEST_CASE("run_experiment: bit-identical reports for identical configs") {
  const TrainConfig cfg = small_train();
  const ExperimentReport a = run_experiment(cfg);
  const ExperimentReport b = run_experiment(cfg);
  CHECK(experiment_report_json(a) == experiment_report_json(b));
}

TEST_CASE("run_experiment: eta=0/lambda=0/w_loc=1 reproduces the baseline bit for bit") {
  TrainConfig base = small_train();
  base.baseline = true;

  TrainConfig reduced = small_train();
  reduced.baseline = false;
  reduced.calibrate_w_loc = false;
  reduced.loss.eta = 0.0;
  reduced.loss.lambda = 0.0;
  reduced.loss.w_loc = 1.0;

  const ExperimentReport a = run_experiment(base);
  const ExperimentReport b = run_experiment(reduced);

  REQUIRE(a.epoch_losses.size() == b.epoch_losses.size());
  for (std::size_t e = 0; e < a.epoch_losses.size(); ++e) {
    CHECK(a.epoch_losses[e].cls_loss == b.epoch_losses[e].cls_loss);
    CHECK(a.epoch_losses[e].loc_loss == b.epoch_losses[e].loc_loss);
  }
  CHECK(a.final_model.cls_head == b.final_model.cls_head);
  CHECK(a.final_model.reg_head == b.final_model.reg_head);
  for (std::size_t i = 0; i < a.ap.ap.size(); ++i) CHECK(a.ap.ap[i] == b.ap.ap[i]);
  CHECK(a.spearman_post_nms == b.spearman_post_nms);
}

TEST_CASE("run_experiment: calibration value is reproducible from the first batch") {
  TrainConfig cfg = small_train();
  cfg.loss.lambda = 1.5;
  cfg.calibrate_w_loc = true;
  const ExperimentReport report = run_experiment(cfg);

  const AnchorSet anchors = build_anchors(cfg.sim);
  const std::vector<SceneBatch> first{
      make_scene_batch(train_scene_seed(cfg.seed, 0), cfg.sim, anchors)};
  const ToyModel zero = ToyModel::zeros(cfg.sim.num_classes);
  const StepObjective obj = build_objective(zero, anchors, first, cfg, 1.0);
  REQUIRE(!obj.positives.empty());
  CHECK(report.used_w_loc == calibrate_w_loc(obj.positives, cfg.loss.lambda, cfg.loss.delta));
  CHECK(report.used_w_loc > 1.0);
}

TEST_CASE("run_experiment: skipped steps are counted when nothing matches") {
  TrainConfig cfg = small_train();
  cfg.baseline = true;
  cfg.sim.pos_thresh = 0.999;
  cfg.sim.neg_thresh = 0.9;
  const ExperimentReport report = run_experiment(cfg);
  CHECK(report.diagnostics.skipped_steps == cfg.epochs * cfg.scenes_count);
  for (const auto& e : report.epoch_losses) {
    CHECK(e.cls_loss == 0.0);
    CHECK(e.loc_loss == 0.0);
  }
}

TEST_CASE("run_experiment: batch_size > 1 groups scenes per step") {
  TrainConfig cfg = small_train();
  cfg.batch_size = 2;
  const ExperimentReport report = run_experiment(cfg);
  CHECK(report.epoch_losses.size() == static_cast<std::size_t>(cfg.epochs));
  CHECK(report.n_ground_truth > 0);
}

TEST_CASE("compare_runs: paired seeds and aggregate means") {
  TrainConfig base = small_train();
  base.baseline = true;
  TrainConfig treat = small_train();
  treat.loss.eta = 1.5;

  const std::vector<std::uint64_t> seeds{5, 6};
  const CompareReport report = compare_runs(base, treat, seeds);
  REQUIRE(report.runs.size() == 2);
  CHECK(report.runs[0].seed == 5);
  CHECK(report.runs[0].baseline.config.baseline);
  CHECK(!report.runs[0].treatment.config.baseline);
  // paired scenes: ground-truth counts agree within a pair
  for (const auto& run : report.runs) {
    CHECK(run.baseline.n_ground_truth == run.treatment.n_ground_truth);
  }
}
