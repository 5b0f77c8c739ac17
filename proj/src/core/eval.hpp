#pragma once

#include <chrono>
#include <functional>

#include "detection_types.hpp"

namespace sfpn {

struct EvalDet {
  int image_id = 0;
  int class_id = 0;
  double score = 0;
  Box box;
};

struct EvalGt {
  int image_id = 0;
  int class_id = 0;
  Box box;
};

struct EvalResult {
  double ap = 0, ap50 = 0, ap75 = 0;
  std::vector<double> per_class_ap;  // -1 marks classes excluded (absent)
  std::int64_t num_images = 0, num_gts = 0, num_detections = 0;
};

// Single-class, single-threshold COCO-style AP: greedy matching in score
// order (per image), 101-point interpolated precision-recall integral.
// Inputs must all carry the same class.
double average_precision(std::vector<EvalDet> dets,
                         const std::vector<EvalGt>& gts, double iou_threshold);

// AP over IoU 0.50:0.05:0.95 averaged across classes, plus AP50/AP75.
// Classes absent from both detections and ground truth are excluded from
// the mean.
EvalResult coco_map(const std::vector<EvalDet>& dets,
                    const std::vector<EvalGt>& gts, int num_classes);

std::string eval_result_to_json(const EvalResult& r);

struct LatencyReport {
  std::string tag;
  int input_size = 0;
  int iterations = 0;
  double mean_ms = 0, median_ms = 0, p95_ms = 0;
  double fps() const { return 1000.0 / mean_ms; }
};

// Times a callable: warmup runs discarded, then iters timed runs.
LatencyReport bench_latency(const std::string& tag, int input_size,
                            const std::function<void()>& run, int iters,
                            int warmup);

std::string latency_report_to_json(const LatencyReport& r);
std::string latency_report_to_csv_row(const LatencyReport& r);

}  // namespace sfpn
