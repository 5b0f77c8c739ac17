#pragma once

#include <vector>

#include "schedule.hpp"

namespace sfpn {

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
};

double iou(const Box& a, const Box& b);

// Square prior box anchored at a feature-map cell center. side is the
// stride scaled by 1x / 2x / 4x depending on the slot.
struct Anchor {
  double cx = 0, cy = 0;
  double side = 0;
  int stride = 0;
  int level_index = 0;
  int cell_row = 0, cell_col = 0;
  int slot = 0;  // 0..2

  Box box() const {
    return {cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2};
  }
};

struct Detection {
  Box box;
  double score = 0;
  int class_id = 0;
};

struct GroundTruthBox {
  Box box;
  int class_id = 0;
};

enum class AnchorState : std::uint8_t { Negative, Positive, Ignored };

struct TargetAssignment {
  std::vector<AnchorState> state;            // per anchor
  std::vector<int> gt_index;                 // valid for positives
  std::vector<std::array<double, 4>> regression;  // (tx,ty,tw,th), positives
  std::vector<int> positive_anchor;          // per ground truth

  int positive_count() const { return int(positive_anchor.size()); }
};

// Three square anchors per cell for every level of the schedule, ordered
// by (level, row, col, slot).
std::vector<Anchor> gen_anchors(const ScaleSchedule& schedule, int input_size);

// Anchor count closed form: 3 * sum over levels of floor(S/stride)^2.
std::int64_t anchor_count(const ScaleSchedule& schedule, int input_size);

// One positive anchor per ground truth (global best IoU; ties by lower
// stride then lower anchor index). Non-positive anchors with IoU > 0.5
// against any ground truth are ignored. Regression targets invert the
// decode transform.
TargetAssignment assign_targets(const std::vector<GroundTruthBox>& gts,
                                const std::vector<Anchor>& anchors);

// Greedy per-class NMS. Candidates sorted by score descending, ties by
// lower x1 then y1; a box is dropped when IoU with a kept box exceeds the
// threshold. Output sorted by score descending, capped at max_out.
std::vector<Detection> nms(std::vector<Detection> dets,
                           double iou_threshold = 0.5, int max_out = 100);

}  // namespace sfpn
