#include "detection_types.hpp"

#include <algorithm>
#include <cmath>

namespace sfpn {

double iou(const Box& a, const Box& b) {
  double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0 || iy <= 0) return 0.0;
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::vector<Anchor> gen_anchors(const ScaleSchedule& schedule, int input_size) {
  static const int kMultipliers[3] = {1, 2, 4};
  std::vector<Anchor> out;
  out.reserve(size_t(anchor_count(schedule, input_size)));
  for (int li = 0; li < schedule.level_count(); ++li) {
    const int stride = schedule.strides[size_t(li)];
    const int cells = ScaleSchedule::map_size(input_size, stride);
    for (int row = 0; row < cells; ++row) {
      for (int col = 0; col < cells; ++col) {
        for (int slot = 0; slot < 3; ++slot) {
          Anchor a;
          a.cx = (col + 0.5) * stride;
          a.cy = (row + 0.5) * stride;
          a.side = double(kMultipliers[slot] * stride);
          a.stride = stride;
          a.level_index = li;
          a.cell_row = row;
          a.cell_col = col;
          a.slot = slot;
          out.push_back(a);
        }
      }
    }
  }
  return out;
}

std::int64_t anchor_count(const ScaleSchedule& schedule, int input_size) {
  std::int64_t total = 0;
  for (int stride : schedule.strides) {
    std::int64_t cells = ScaleSchedule::map_size(input_size, stride);
    total += 3 * cells * cells;
  }
  return total;
}

namespace {

double logit_clamped(double p) {
  constexpr double kEps = 1e-6;
  p = std::min(std::max(p, kEps), 1.0 - kEps);
  return std::log(p / (1.0 - p));
}

std::array<double, 4> encode_box(const GroundTruthBox& gt, const Anchor& a) {
  double fx = gt.box.cx() / a.stride - a.cell_col;
  double fy = gt.box.cy() / a.stride - a.cell_row;
  return {logit_clamped(fx), logit_clamped(fy),
          std::log(gt.box.width() / a.side), std::log(gt.box.height() / a.side)};
}

}  // namespace

TargetAssignment assign_targets(const std::vector<GroundTruthBox>& gts,
                                const std::vector<Anchor>& anchors) {
  if (anchors.empty()) throw ArgumentError("assign_targets: no anchors");
  const size_t n = anchors.size();
  TargetAssignment out;
  out.state.assign(n, AnchorState::Negative);
  out.gt_index.assign(n, -1);
  out.regression.assign(n, {0, 0, 0, 0});

  for (size_t g = 0; g < gts.size(); ++g) {
    const GroundTruthBox& gt = gts[g];
    if (gt.box.area() <= 0)
      throw ArgumentError("assign_targets: ground truth with non-positive area");
    int best = -1;
    double best_iou = -1.0;
    for (size_t i = 0; i < n; ++i) {
      if (out.state[i] == AnchorState::Positive) continue;
      double v = iou(gt.box, anchors[i].box());
      if (v > best_iou ||
          (v == best_iou && best >= 0 &&
           anchors[i].stride < anchors[size_t(best)].stride)) {
        best_iou = v;
        best = int(i);
      }
    }
    if (best < 0 || best_iou <= 0.0) {
      // Degenerate overlap: fall back to the nearest-center anchor.
      double best_d = std::numeric_limits<double>::infinity();
      for (size_t i = 0; i < n; ++i) {
        if (out.state[i] == AnchorState::Positive) continue;
        double dx = anchors[i].cx - gt.box.cx();
        double dy = anchors[i].cy - gt.box.cy();
        double d = dx * dx + dy * dy;
        if (d < best_d) {
          best_d = d;
          best = int(i);
        }
      }
    }
    if (best < 0) throw ArgumentError("assign_targets: more GTs than anchors");
    out.state[size_t(best)] = AnchorState::Positive;
    out.gt_index[size_t(best)] = int(g);
    out.regression[size_t(best)] = encode_box(gt, anchors[size_t(best)]);
    out.positive_anchor.push_back(best);
  }

  for (size_t i = 0; i < n; ++i) {
    if (out.state[i] != AnchorState::Negative) continue;
    for (const GroundTruthBox& gt : gts) {
      if (iou(gt.box, anchors[i].box()) > 0.5) {
        out.state[i] = AnchorState::Ignored;
        break;
      }
    }
  }
  return out;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold,
                           int max_out) {
  auto score_order = [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.box.x1 != b.box.x1) return a.box.x1 < b.box.x1;
    return a.box.y1 < b.box.y1;
  };
  std::stable_sort(dets.begin(), dets.end(), score_order);

  std::vector<Detection> kept;
  std::vector<char> dead(dets.size(), 0);
  for (size_t i = 0; i < dets.size(); ++i) {
    if (dead[i]) continue;
    kept.push_back(dets[i]);
    for (size_t j = i + 1; j < dets.size(); ++j) {
      if (dead[j] || dets[j].class_id != dets[i].class_id) continue;
      if (iou(dets[i].box, dets[j].box) > iou_threshold) dead[j] = 1;
    }
  }
  if (int(kept.size()) > max_out) kept.resize(size_t(max_out));
  return kept;
}

}  // namespace sfpn
