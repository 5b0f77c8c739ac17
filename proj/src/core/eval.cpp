#include "eval.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include <json.hpp>

namespace sfpn {

double average_precision(std::vector<EvalDet> dets,
                         const std::vector<EvalGt>& gts, double iou_threshold) {
  if (gts.empty()) return 0.0;
  std::stable_sort(dets.begin(), dets.end(),
                   [](const EvalDet& a, const EvalDet& b) {
                     return a.score > b.score;
                   });

  std::map<int, std::vector<size_t>> gts_by_image;
  for (size_t i = 0; i < gts.size(); ++i)
    gts_by_image[gts[i].image_id].push_back(i);
  std::vector<char> matched(gts.size(), 0);

  std::vector<char> is_tp(dets.size(), 0);
  for (size_t d = 0; d < dets.size(); ++d) {
    auto it = gts_by_image.find(dets[d].image_id);
    if (it == gts_by_image.end()) continue;
    double best_iou = iou_threshold;
    int best = -1;
    for (size_t gi : it->second) {
      if (matched[gi]) continue;
      double v = iou(dets[d].box, gts[gi].box);
      if (v >= best_iou && (best < 0 || v > best_iou)) {
        best_iou = v;
        best = int(gi);
      }
    }
    if (best >= 0) {
      matched[size_t(best)] = 1;
      is_tp[d] = 1;
    }
  }

  // Precision-recall samples at each detection rank.
  const double num_gt = double(gts.size());
  std::vector<double> precision(dets.size()), recall(dets.size());
  double tp = 0;
  for (size_t d = 0; d < dets.size(); ++d) {
    tp += is_tp[d];
    precision[d] = tp / double(d + 1);
    recall[d] = tp / num_gt;
  }

  // 101-point interpolation: precision at each recall gridpoint is the max
  // precision at any recall >= the gridpoint.
  double ap = 0;
  for (int g = 0; g <= 100; ++g) {
    double r = g / 100.0;
    double best = 0;
    for (size_t d = 0; d < dets.size(); ++d)
      if (recall[d] >= r) best = std::max(best, precision[d]);
    ap += best;
  }
  return ap / 101.0;
}

EvalResult coco_map(const std::vector<EvalDet>& dets,
                    const std::vector<EvalGt>& gts, int num_classes) {
  if (num_classes < 1) throw ArgumentError("coco_map: num_classes must be >= 1");
  EvalResult out;
  out.num_gts = std::int64_t(gts.size());
  out.num_detections = std::int64_t(dets.size());
  {
    std::vector<int> image_ids;
    for (const auto& g : gts) image_ids.push_back(g.image_id);
    for (const auto& d : dets) image_ids.push_back(d.image_id);
    std::sort(image_ids.begin(), image_ids.end());
    out.num_images = std::int64_t(
        std::unique(image_ids.begin(), image_ids.end()) - image_ids.begin());
  }

  std::vector<std::vector<EvalDet>> dets_by_class;
  dets_by_class.resize(size_t(num_classes));
  std::vector<std::vector<EvalGt>> gts_by_class;
  gts_by_class.resize(size_t(num_classes));
  for (const auto& d : dets) {
    if (d.class_id < 0 || d.class_id >= num_classes)
      throw ArgumentError("coco_map: detection class out of range");
    dets_by_class[size_t(d.class_id)].push_back(d);
  }
  for (const auto& g : gts) {
    if (g.class_id < 0 || g.class_id >= num_classes)
      throw ArgumentError("coco_map: ground truth class out of range");
    gts_by_class[size_t(g.class_id)].push_back(g);
  }

  out.per_class_ap.assign(size_t(num_classes), -1.0);
  double sum_mean = 0, sum_50 = 0, sum_75 = 0;
  int active = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (dets_by_class[size_t(c)].empty() && gts_by_class[size_t(c)].empty())
      continue;  // class absent everywhere: excluded from the mean
    double mean = 0, ap50 = 0, ap75 = 0;
    for (int t = 0; t < 10; ++t) {
      double thr = 0.50 + 0.05 * t;
      double ap = average_precision(dets_by_class[size_t(c)],
                                    gts_by_class[size_t(c)], thr);
      mean += ap;
      if (t == 0) ap50 = ap;
      if (t == 5) ap75 = ap;
    }
    mean /= 10.0;
    out.per_class_ap[size_t(c)] = mean;
    sum_mean += mean;
    sum_50 += ap50;
    sum_75 += ap75;
    ++active;
  }
  if (active > 0) {
    out.ap = sum_mean / active;
    out.ap50 = sum_50 / active;
    out.ap75 = sum_75 / active;
  }
  return out;
}

std::string eval_result_to_json(const EvalResult& r) {
  nlohmann::ordered_json j;
  j["AP"] = r.ap;
  j["AP50"] = r.ap50;
  j["AP75"] = r.ap75;
  j["per_class_AP"] = r.per_class_ap;
  j["images"] = r.num_images;
  j["ground_truths"] = r.num_gts;
  j["detections"] = r.num_detections;
  return j.dump(2);
}

LatencyReport bench_latency(const std::string& tag, int input_size,
                            const std::function<void()>& run, int iters,
                            int warmup) {
  if (iters < 1) throw ArgumentError("bench_latency: iters must be >= 1");
  if (warmup < 0) throw ArgumentError("bench_latency: warmup must be >= 0");
  using clock = std::chrono::steady_clock;
  for (int i = 0; i < warmup; ++i) run();
  std::vector<double> ms;
  ms.resize(size_t(iters));
  for (int i = 0; i < iters; ++i) {
    auto t0 = clock::now();
    run();
    auto t1 = clock::now();
    ms[size_t(i)] =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  std::vector<double> sorted = ms;
  std::sort(sorted.begin(), sorted.end());
  LatencyReport r;
  r.tag = tag;
  r.input_size = input_size;
  r.iterations = iters;
  r.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / iters;
  r.median_ms = sorted[size_t(iters / 2)];
  r.p95_ms = sorted[std::min(size_t(iters) - 1, size_t(iters * 95 / 100))];
  return r;
}

std::string latency_report_to_json(const LatencyReport& r) {
  nlohmann::ordered_json j;
  j["tag"] = r.tag;
  j["input_size"] = r.input_size;
  j["iterations"] = r.iterations;
  j["mean_ms"] = r.mean_ms;
  j["median_ms"] = r.median_ms;
  j["p95_ms"] = r.p95_ms;
  j["fps"] = r.fps();
  return j.dump(2);
}

std::string latency_report_to_csv_row(const LatencyReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s,%d,%.3f,%.2f", r.tag.c_str(),
                r.input_size, r.mean_ms, r.fps());
  return buf;
}

}  // namespace sfpn
