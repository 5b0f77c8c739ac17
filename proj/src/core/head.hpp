#pragma once

#include "detection_types.hpp"
#include "model.hpp"

namespace sfpn {

// Raw prediction channel layout, per anchor slot a:
//   channel a*(5+C) + k, k = 0..4 -> tx, ty, tw, th, tobj; k = 5.. -> class
// logits. The same 1x1 conv is applied to every level.
template <class T>
Tensor<T> head_apply(const SfpnModel<T>& model, const FeatureLevel<T>& level) {
  if (level.map.dim(1) != model.config().neck_channels)
    throw ArgumentError("head_apply: level channels do not match the neck width");
  return conv2d(level.map, model.head().weight, model.head().bias, 1, 0);
}

// Level indices the head runs on: original strides only in base mode, the
// whole schedule in SOL mode.
inline std::vector<int> head_level_indices(const ScaleSchedule& schedule,
                                           bool sol_mode) {
  std::vector<int> out;
  for (int i = 0; i < schedule.level_count(); ++i)
    if (sol_mode || !schedule.synthetic[size_t(i)]) out.push_back(i);
  return out;
}

// YOLO-style decode of one raw map against its level's anchors:
//   bx = (col + sigmoid(tx)) * stride,  bw = side * exp(tw),
//   score = sigmoid(tobj) * max_c sigmoid(tcls_c).
// Boxes are clamped to the image; degenerate and below-threshold boxes are
// dropped.
template <class T>
std::vector<Detection> decode(const Tensor<T>& raw,
                              const std::vector<Anchor>& level_anchors,
                              int num_classes, int input_size,
                              double conf_threshold) {
  const Shape4& s = raw.shape();
  const int per_slot = 5 + num_classes;
  const int cells_h = s[2], cells_w = s[3];
  if (s[0] != 1 || s[1] != 3 * per_slot)
    throw ArgumentError("decode: raw map shape mismatch");
  if (level_anchors.size() != size_t(3) * cells_h * cells_w)
    throw ArgumentError("decode: anchors do not align with the raw map");

  auto at = [&](int ch, int row, int col) {
    return double(raw.data()[(size_t(ch) * cells_h + row) * cells_w + col]);
  };

  std::vector<Detection> out;
  for (const Anchor& a : level_anchors) {
    const int base = a.slot * per_slot;
    double tobj = at(base + 4, a.cell_row, a.cell_col);
    double best_cls = -std::numeric_limits<double>::infinity();
    int best_id = 0;
    for (int c = 0; c < num_classes; ++c) {
      double v = at(base + 5 + c, a.cell_row, a.cell_col);
      if (v > best_cls) {
        best_cls = v;
        best_id = c;
      }
    }
    double score = sigmoid_scalar(tobj) * sigmoid_scalar(best_cls);
    if (score < conf_threshold) continue;

    double bx = (a.cell_col + sigmoid_scalar(at(base + 0, a.cell_row,
                                                a.cell_col))) *
                a.stride;
    double by = (a.cell_row + sigmoid_scalar(at(base + 1, a.cell_row,
                                                a.cell_col))) *
                a.stride;
    double bw = a.side * std::exp(at(base + 2, a.cell_row, a.cell_col));
    double bh = a.side * std::exp(at(base + 3, a.cell_row, a.cell_col));
    Box box{bx - bw / 2, by - bh / 2, bx + bw / 2, by + bh / 2};
    box.x1 = std::min(std::max(box.x1, 0.0), double(input_size));
    box.y1 = std::min(std::max(box.y1, 0.0), double(input_size));
    box.x2 = std::min(std::max(box.x2, 0.0), double(input_size));
    box.y2 = std::min(std::max(box.y2, 0.0), double(input_size));
    if (box.width() <= 0 || box.height() <= 0) continue;
    out.push_back({box, score, best_id});
  }
  return out;
}

// Composite loss over the raw maps of the head levels, one custom autograd
// node. Mean binary cross-entropy on objectness over positives and
// negatives, BCE on class logits and smooth-L1 on the box residuals over
// positives only, combined 1 : 1 : 2.
inline constexpr double kSmoothL1Beta = 1.0;

template <class T>
Tensor<T> detection_loss(const std::vector<Tensor<T>>& raw_maps,
                         const std::vector<std::vector<Anchor>>& level_anchors,
                         const TargetAssignment& assignment, int num_classes,
                         const std::vector<int>& gt_classes) {
  if (raw_maps.empty()) throw ArgumentError("detection_loss: no raw maps");
  if (raw_maps.size() != level_anchors.size())
    throw ArgumentError("detection_loss: maps/anchors mismatch");
  const int per_slot = 5 + num_classes;

  // Global anchor index -> (map, flat offset of channel 0 of its slot).
  struct Ref {
    int map;
    size_t base;   // offset of tx within the map's value array
    size_t plane;  // h*w, the channel pitch
  };
  std::vector<Ref> refs;
  size_t total = 0;
  for (size_t m = 0; m < raw_maps.size(); ++m) total += level_anchors[m].size();
  if (assignment.state.size() != total)
    throw ArgumentError("detection_loss: assignment does not cover the anchors");
  refs.reserve(total);
  for (size_t m = 0; m < raw_maps.size(); ++m) {
    const Shape4& s = raw_maps[m].shape();
    if (s[0] != 1 || s[1] != 3 * per_slot)
      throw ArgumentError("detection_loss: raw map shape mismatch");
    const size_t plane = size_t(s[2]) * s[3];
    for (const Anchor& a : level_anchors[m]) {
      size_t cell = size_t(a.cell_row) * s[3] + a.cell_col;
      refs.push_back({int(m), size_t(a.slot) * per_slot * plane + cell, plane});
    }
  }

  auto bce = [](double x, double y) {
    // log(1+e^x) - x*y, stable for either sign
    return softplus_scalar(x) - x * y;
  };
  // Quadratic within +-kSmoothL1Beta of zero, linear outside; the small
  // beta keeps a strong gradient on nearly-correct boxes.
  auto smooth_l1 = [](double d) {
    double ad = std::abs(d);
    return ad < kSmoothL1Beta ? 0.5 * d * d / kSmoothL1Beta
                              : ad - 0.5 * kSmoothL1Beta;
  };

  // Objectness is averaged separately over negatives and positives so the
  // few positive anchors are not drowned by the thousands of negatives.
  double obj_pos = 0, obj_neg = 0, cls_sum = 0, reg_sum = 0;
  std::int64_t negatives = 0, positives = 0;
  for (size_t i = 0; i < refs.size(); ++i) {
    const AnchorState st = assignment.state[i];
    if (st == AnchorState::Ignored) continue;
    const Ref& r = refs[i];
    const auto& v = raw_maps[size_t(r.map)].data();
    double tobj = double(v[r.base + 4 * r.plane]);
    if (st != AnchorState::Positive) {
      obj_neg += bce(tobj, 0.0);
      ++negatives;
      continue;
    }
    obj_pos += bce(tobj, 1.0);
    ++positives;
    int cls = gt_classes[size_t(assignment.gt_index[i])];
    for (int c = 0; c < num_classes; ++c)
      cls_sum += bce(double(v[r.base + size_t(5 + c) * r.plane]), c == cls);
    for (int k = 0; k < 4; ++k)
      reg_sum += smooth_l1(double(v[r.base + size_t(k) * r.plane]) -
                           assignment.regression[i][size_t(k)]);
  }
  if (negatives + positives == 0)
    throw ArgumentError("detection_loss: no scored anchors");

  const double w_obj = 1.0, w_cls = 1.0, w_reg = 2.0;
  double loss = 0;
  if (negatives > 0) loss += w_obj * obj_neg / double(negatives);
  if (positives > 0)
    loss += (w_obj * obj_pos + w_cls * cls_sum + w_reg * reg_sum) /
            double(positives);

  std::vector<Tensor<T>> parents(raw_maps.begin(), raw_maps.end());
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  for (const auto& t : raw_maps) nodes.push_back(t.node_ptr());
  auto asg = assignment;  // captured by value; small relative to the maps
  auto classes = gt_classes;
  return make_op_result<T>(
      {1, 1, 1, 1}, {T(loss)}, std::move(parents),
      [refs = std::move(refs), nodes = std::move(nodes), asg = std::move(asg),
       classes = std::move(classes), num_classes, negatives,
       positives](TensorNode<T>& self) {
        const double g0 = double(self.grad[0]);
        for (auto& n : nodes) n->ensure_grad();
        for (size_t i = 0; i < refs.size(); ++i) {
          const AnchorState st = asg.state[i];
          if (st == AnchorState::Ignored) continue;
          const Ref& r = refs[i];
          auto& val = nodes[size_t(r.map)]->value;
          auto& grad = nodes[size_t(r.map)]->grad;
          const bool pos = st == AnchorState::Positive;
          double tobj = double(val[r.base + 4 * r.plane]);
          grad[r.base + 4 * r.plane] +=
              T(g0 * (sigmoid_scalar(tobj) - (pos ? 1.0 : 0.0)) /
                double(pos ? positives : negatives));
          if (!pos) continue;
          int cls = classes[size_t(asg.gt_index[i])];
          for (int c = 0; c < num_classes; ++c) {
            size_t off = r.base + size_t(5 + c) * r.plane;
            grad[off] += T(g0 * (sigmoid_scalar(double(val[off])) -
                                 (c == cls ? 1.0 : 0.0)) /
                           double(positives));
          }
          for (int k = 0; k < 4; ++k) {
            size_t off = r.base + size_t(k) * r.plane;
            double d = double(val[off]) - asg.regression[i][size_t(k)];
            double dd = std::abs(d) < kSmoothL1Beta ? d / kSmoothL1Beta
                                                    : (d > 0 ? 1.0 : -1.0);
            grad[off] += T(g0 * 2.0 * dd / double(positives));
          }
        }
      },
      "detection_loss");
}

// Anchors of a single level, in (row, col, slot) order.
inline std::vector<Anchor> level_anchor_grid(const ScaleSchedule& schedule,
                                             int level_index, int input_size) {
  ScaleSchedule one;
  one.variant = schedule.variant;
  one.strides = {schedule.strides[size_t(level_index)]};
  one.synthetic = {schedule.synthetic[size_t(level_index)]};
  auto anchors = gen_anchors(one, input_size);
  for (Anchor& a : anchors) a.level_index = level_index;
  return anchors;
}

// Full inference path: forward, shared head on the selected levels, decode
// against each level's anchors, joint NMS.
template <class T>
std::vector<Detection> predict(const SfpnModel<T>& model,
                               const Tensor<T>& image, bool sol_mode,
                               double conf_threshold = 0.05,
                               double nms_threshold = 0.5, int max_out = 100) {
  NoGradGuard ng;
  auto levels = model.forward(image);
  auto indices = head_level_indices(model.schedule(), sol_mode);
  std::vector<Detection> all;
  for (int li : indices) {
    const FeatureLevel<T>& level = levels[size_t(li)];
    Tensor<T> raw = head_apply(model, level);
    auto anchors = level_anchor_grid(model.schedule(), li,
                                     model.config().input_size);
    auto dets = decode(raw, anchors, model.config().num_classes,
                       model.config().input_size, conf_threshold);
    all.insert(all.end(), dets.begin(), dets.end());
  }
  return nms(std::move(all), nms_threshold, max_out);
}

// Per-cell max objectness over the three slots, upsampled to the input
// resolution. Values are probabilities in [0, 1].
template <class T>
Tensor<T> export_confidence(const SfpnModel<T>& model, const Tensor<T>& image,
                            int level_index, bool sol_mode) {
  NoGradGuard ng;
  auto indices = head_level_indices(model.schedule(), sol_mode);
  bool allowed = false;
  for (int li : indices) allowed = allowed || li == level_index;
  if (level_index < 0 || level_index >= model.schedule().level_count() ||
      !allowed)
    throw ArgumentError("export_confidence: level " +
                        std::to_string(level_index) +
                        " is not a head level in this mode");
  auto levels = model.forward(image);
  Tensor<T> raw = head_apply(model, levels[size_t(level_index)]);
  const int per_slot = 5 + model.config().num_classes;
  const int h = raw.dim(2), w = raw.dim(3);
  std::vector<T> conf(size_t(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      T best = T(0);
      for (int slot = 0; slot < 3; ++slot) {
        T v = sigmoid_scalar(raw.at(0, slot * per_slot + 4, y, x));
        best = std::max(best, v);
      }
      conf[size_t(y) * w + x] = best;
    }
  Tensor<T> map = Tensor<T>::from_data({1, 1, h, w}, std::move(conf));
  const int s = model.config().input_size;
  return bilinear_resize(map, s, s);
}

}  // namespace sfpn
