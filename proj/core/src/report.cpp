#include "ioubal/report.hpp"

#include <charconv>
#include <sstream>

#include "json.hpp"

namespace ioubal {

using ordered_json = nlohmann::ordered_json;

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

const char* axis_name(Axis axis) { return axis == Axis::Center ? "center" : "size"; }

const char* mode_name(LocWeightMode mode) {
  return mode == LocWeightMode::Manual ? "manual" : "normalized";
}

ordered_json loss_config_json(const LossConfig& cfg) {
  return ordered_json{{"eta", cfg.eta},
                      {"lambda", cfg.lambda},
                      {"delta", cfg.delta},
                      {"w_loc", cfg.w_loc},
                      {"loc_weight_mode", mode_name(cfg.loc_weight_mode)}};
}

ordered_json sim_config_json(const SimConfig& cfg) {
  return ordered_json{{"scene_size", cfg.scene_size},
                      {"min_objects", cfg.min_objects},
                      {"max_objects", cfg.max_objects},
                      {"min_object_size", cfg.min_object_size},
                      {"max_object_size", cfg.max_object_size},
                      {"max_pairwise_iou", cfg.max_pairwise_iou},
                      {"rejection_budget", cfg.rejection_budget},
                      {"num_classes", cfg.num_classes},
                      {"grid_size", cfg.grid_size},
                      {"anchor_scales", cfg.anchor_scales},
                      {"anchor_ratios", cfg.anchor_ratios},
                      {"pos_thresh", cfg.pos_thresh},
                      {"neg_thresh", cfg.neg_thresh},
                      {"feature_noise_sigma", cfg.feature_noise_sigma},
                      {"hint_outlier_fraction", cfg.hint_outlier_fraction},
                      {"hint_outlier_scale", cfg.hint_outlier_scale}};
}

ordered_json train_config_json(const TrainConfig& cfg) {
  return ordered_json{{"loss", loss_config_json(cfg.loss)},
                      {"baseline", cfg.baseline},
                      {"calibrate_w_loc", cfg.calibrate_w_loc},
                      {"learning_rate", cfg.learning_rate},
                      {"epochs", cfg.epochs},
                      {"batch_size", cfg.batch_size},
                      {"seed", cfg.seed},
                      {"scenes_count", cfg.scenes_count},
                      {"eval_scenes", cfg.eval_scenes},
                      {"sim", sim_config_json(cfg.sim)},
                      {"det_score_thresh", cfg.det_score_thresh},
                      {"nms_thresh", cfg.nms_thresh},
                      {"max_dets_per_scene", cfg.max_dets_per_scene}};
}

ordered_json ap_table_json(const ApTable& table) {
  ordered_json per_threshold = ordered_json::array();
  for (std::size_t i = 0; i < table.thresholds.size(); ++i) {
    per_threshold.push_back(ordered_json{{"threshold", table.thresholds[i]}, {"ap", table.ap[i]}});
  }
  return ordered_json{{"mean_ap", table.mean_ap},
                      {"ap50", table.ap50()},
                      {"ap60", table.ap60()},
                      {"ap70", table.ap70()},
                      {"ap75", table.ap75()},
                      {"ap80", table.ap80()},
                      {"ap90", table.ap90()},
                      {"per_threshold", per_threshold},
                      {"empty_convention", table.empty_convention}};
}

ordered_json stats_json(const ScoreIouStats& stats) {
  ordered_json bins = ordered_json::array();
  for (const auto& bin : stats.bins) {
    bins.push_back(ordered_json{{"bin_lo", bin.lo},
                                {"bin_hi", bin.hi},
                                {"mean_score", bin.mean_score},
                                {"count", bin.count}});
  }
  ordered_json exceedance = ordered_json::array();
  for (std::size_t i = 0; i < stats.thresholds.size(); ++i) {
    exceedance.push_back(
        ordered_json{{"threshold", stats.thresholds[i]}, {"fraction", stats.exceedance[i]}});
  }
  return ordered_json{
      {"bins", bins}, {"exceedance", exceedance}, {"n_detections", stats.n_detections}};
}

ordered_json optional_json(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

ordered_json box_json(const Box& box) { return ordered_json::array({box.x1, box.y1, box.x2, box.y2}); }

ordered_json fd_report_json(const FiniteDiffReport& report) {
  return ordered_json{{"kind", report.kind == LossKind::Cls ? "cls" : "loc"},
                      {"trials", report.trials},
                      {"step", report.step},
                      {"tolerance", report.tolerance},
                      {"max_rel_error", report.max_rel_error},
                      {"passed", report.passed},
                      {"worst", ordered_json{{"analytic", report.worst_analytic},
                                             {"numeric", report.worst_numeric},
                                             {"point", report.worst_point}}}};
}

}  // namespace

std::string curve_csv(const CurveSpec& spec, std::span<const CurvePoint> points) {
  std::ostringstream out;
  out << "d,grad_norm,lambda,w_loc,axis\n";
  for (const auto& point : points) {
    out << format_double(point.d) << ',' << format_double(point.grad_norm) << ','
        << format_double(spec.lambda) << ',' << format_double(spec.w_loc) << ','
        << axis_name(spec.axis) << '\n';
  }
  return out.str();
}

std::string ap_table_csv(const ApTable& table) {
  std::ostringstream out;
  out << "threshold,ap\n";
  for (std::size_t i = 0; i < table.thresholds.size(); ++i) {
    out << format_double(table.thresholds[i]) << ',' << format_double(table.ap[i]) << '\n';
  }
  out << "mean," << format_double(table.mean_ap) << '\n';
  return out.str();
}

std::string score_iou_bins_csv(const ScoreIouStats& stats) {
  std::ostringstream out;
  out << "bin_lo,bin_hi,mean_score,count\n";
  for (const auto& bin : stats.bins) {
    out << format_double(bin.lo) << ',' << format_double(bin.hi) << ','
        << format_double(bin.mean_score) << ',' << bin.count << '\n';
  }
  return out.str();
}

std::string gradcheck_json(const FiniteDiffReport& cls_report, const FiniteDiffReport& loc_report) {
  const ordered_json j{{"passed", cls_report.passed && loc_report.passed},
                       {"cls", fd_report_json(cls_report)},
                       {"loc", fd_report_json(loc_report)}};
  return j.dump(2) + "\n";
}

std::string experiment_report_json(const ExperimentReport& report) {
  ordered_json epochs = ordered_json::array();
  for (std::size_t e = 0; e < report.epoch_losses.size(); ++e) {
    epochs.push_back(ordered_json{{"epoch", e},
                                  {"cls_loss", report.epoch_losses[e].cls_loss},
                                  {"loc_loss", report.epoch_losses[e].loc_loss}});
  }

  ordered_json scenes = ordered_json::array();
  for (const auto& scene : report.scene_detections) {
    ordered_json dets = ordered_json::array();
    for (const auto& rec : scene.detections) {
      dets.push_back(ordered_json{{"box", box_json(rec.det.box)},
                                  {"score", rec.det.score},
                                  {"class_id", rec.det.class_id},
                                  {"best_gt_iou", rec.best_gt_iou}});
    }
    scenes.push_back(ordered_json{{"scene_seed", scene.scene_seed}, {"detections", dets}});
  }

  const ordered_json j{
      {"config", train_config_json(report.config)},
      {"used_w_loc", report.used_w_loc},
      {"epoch_losses", epochs},
      {"diagnostics",
       ordered_json{{"zero_iou_positives", report.diagnostics.zero_iou_positives},
                    {"cls_fallback_batches", report.diagnostics.cls_fallback_batches},
                    {"loc_fallback_batches", report.diagnostics.loc_fallback_batches},
                    {"skipped_steps", report.diagnostics.skipped_steps}}},
      {"evaluation",
       ordered_json{{"ap", ap_table_json(report.ap)},
                    {"score_iou_stats", stats_json(report.stats)},
                    {"spearman_post_nms", optional_json(report.spearman_post_nms)},
                    {"spearman_pre_nms", optional_json(report.spearman_pre_nms)},
                    {"n_detections", report.n_detections},
                    {"n_ground_truth", report.n_ground_truth}}},
      {"model", ordered_json{{"num_classes", report.final_model.num_classes},
                             {"cls_head", report.final_model.cls_head},
                             {"reg_head", report.final_model.reg_head}}},
      {"scenes", scenes}};
  return j.dump(2) + "\n";
}

std::string compare_report_json(const CompareReport& report) {
  ordered_json runs = ordered_json::array();
  for (const auto& run : report.runs) {
    ordered_json delta{
        {"mean_ap", run.treatment.ap.mean_ap - run.baseline.ap.mean_ap},
        {"ap50", run.treatment.ap.ap50() - run.baseline.ap.ap50()},
        {"ap80", run.treatment.ap.ap80() - run.baseline.ap.ap80()},
        {"ap90", run.treatment.ap.ap90() - run.baseline.ap.ap90()},
    };
    if (run.baseline.spearman_post_nms && run.treatment.spearman_post_nms) {
      delta["spearman"] = *run.treatment.spearman_post_nms - *run.baseline.spearman_post_nms;
    } else {
      delta["spearman"] = nullptr;
    }
    runs.push_back(ordered_json{
        {"seed", run.seed},
        {"baseline", ordered_json{{"ap", ap_table_json(run.baseline.ap)},
                                  {"spearman_post_nms", optional_json(run.baseline.spearman_post_nms)},
                                  {"used_w_loc", run.baseline.used_w_loc}}},
        {"treatment",
         ordered_json{{"ap", ap_table_json(run.treatment.ap)},
                      {"spearman_post_nms", optional_json(run.treatment.spearman_post_nms)},
                      {"used_w_loc", run.treatment.used_w_loc}}},
        {"delta", delta}});
  }

  ordered_json mean_ap = ordered_json::array();
  for (std::size_t i = 0; i < kApThresholds.size(); ++i) {
    mean_ap.push_back(ordered_json{{"threshold", kApThresholds[i]},
                                   {"baseline", report.baseline_mean_ap[i]},
                                   {"treatment", report.treatment_mean_ap[i]},
                                   {"delta", report.treatment_mean_ap[i] - report.baseline_mean_ap[i]}});
  }

  ordered_json means{{"baseline_mean_ap", report.baseline_mean_map},
                     {"treatment_mean_ap", report.treatment_mean_map},
                     {"per_threshold", mean_ap},
                     {"baseline_mean_spearman", optional_json(report.baseline_mean_spearman)},
                     {"treatment_mean_spearman", optional_json(report.treatment_mean_spearman)}};
  if (report.baseline_mean_spearman && report.treatment_mean_spearman) {
    means["delta_spearman"] = *report.treatment_mean_spearman - *report.baseline_mean_spearman;
  } else {
    means["delta_spearman"] = nullptr;
  }

  ordered_json configs = ordered_json::object();
  if (!report.runs.empty()) {
    configs["baseline"] = train_config_json(report.runs.front().baseline.config);
    configs["treatment"] = train_config_json(report.runs.front().treatment.config);
  }

  const ordered_json j{{"configs", configs}, {"runs", runs}, {"means", means}};
  return j.dump(2) + "\n";
}

}  // namespace ioubal
