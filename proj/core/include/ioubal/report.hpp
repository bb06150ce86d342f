#pragma once

#include <span>
#include <string>

#include "ioubal/analysis.hpp"
#include "ioubal/evaluation.hpp"
#include "ioubal/simulator.hpp"

namespace ioubal {

// Shortest decimal representation that round-trips the double.
std::string format_double(double v);

// CSV with header "d,grad_norm,lambda,w_loc,axis".
std::string curve_csv(const CurveSpec& spec, std::span<const CurvePoint> points);

// CSV with header "threshold,ap"; a final "mean,..." row carries the
// averaged AP.
std::string ap_table_csv(const ApTable& table);

// CSV with header "bin_lo,bin_hi,mean_score,count"; empty bins are absent.
std::string score_iou_bins_csv(const ScoreIouStats& stats);

std::string gradcheck_json(const FiniteDiffReport& cls_report, const FiniteDiffReport& loc_report);

std::string experiment_report_json(const ExperimentReport& report);

std::string compare_report_json(const CompareReport& report);

}  // namespace ioubal
