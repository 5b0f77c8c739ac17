#pragma once

#include <filesystem>
#include <fstream>

#include "data_io.hpp"
#include "eval.hpp"
#include "head.hpp"

namespace sfpn {

struct TrainOptions {
  int epochs = 60;
  int batch_size = 4;
  double lr = 0.01;
  double lr_final = 1e-4;
  double momentum = 0.9;  // SGD momentum / Adam first-moment decay
  std::string optimizer = "sgd";  // "sgd" or "adam"
  int warmup_epochs = 0;  // linear lr ramp before the cosine decay
  std::uint64_t seed = 0;
  int val_count = 0;          // records held out from the tail of the dataset
  double target_ap50 = -1.0;  // stop early once the validation AP50 reaches it
  double conf_threshold = 0.05;
  double nms_threshold = 0.5;
  bool flip_augment = true;
  double grad_clip_norm = 10.0;  // global L2 clip; <= 0 disables
  std::string resume_from;       // optional last-state checkpoint

  void validate() const {
    if (epochs < 1 || batch_size < 1) throw ArgumentError("train: epochs and batch size must be positive");
    if (lr <= 0 || lr_final <= 0) throw ArgumentError("train: learning rates must be positive");
    if (momentum < 0 || momentum >= 1) throw ArgumentError("train: momentum must be in [0,1)");
    if (optimizer != "sgd" && optimizer != "adam")
      throw ArgumentError("train: optimizer must be 'sgd' or 'adam'");
  }
};

struct TrainResult {
  double best_ap50 = 0;
  int best_epoch = -1;
  int epochs_run = 0;
  double final_loss = 0;
};

namespace detail {

// Linear warmup to lr over the first warmup_epochs, then cosine decay down
// to lr_final across the remaining epoch range.
inline double cosine_lr(const TrainOptions& opt, int epoch) {
  if (opt.epochs <= 1) return opt.lr;
  if (epoch < opt.warmup_epochs)
    return opt.lr * double(epoch + 1) / double(opt.warmup_epochs);
  double t = double(epoch - opt.warmup_epochs) /
             double(std::max(1, opt.epochs - 1 - opt.warmup_epochs));
  return opt.lr_final + 0.5 * (opt.lr - opt.lr_final) * (1.0 + std::cos(t * M_PI));
}

inline DatasetRecord flip_record(const DatasetRecord& rec) {
  DatasetRecord out = rec;
  const int s = rec.image_size;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        out.image[(size_t(c) * s + y) * s + x] =
            rec.image[(size_t(c) * s + y) * s + (s - 1 - x)];
  for (auto& gt : out.gts) {
    double x1 = s - gt.box.x2, x2 = s - gt.box.x1;
    gt.box.x1 = x1;
    gt.box.x2 = x2;
  }
  return out;
}

// Target assignment over the full level set with positives restricted to
// the original levels. `flat` lists every scored anchor in loss order;
// `original` is its original-level subsequence, which assign_targets maps
// onto. Synthetic anchors become negative, or ignored when they overlap a
// ground truth box with IoU > 0.5.
inline TargetAssignment assign_with_synthetic_background(
    const ScaleSchedule& schedule, const std::vector<GroundTruthBox>& gts,
    const std::vector<Anchor>& flat, const std::vector<Anchor>& original) {
  auto base = assign_targets(gts, original);
  if (flat.size() == original.size()) return base;

  TargetAssignment out;
  out.state.resize(flat.size(), AnchorState::Negative);
  out.gt_index.resize(flat.size(), -1);
  out.regression.resize(flat.size(), {0, 0, 0, 0});
  out.positive_anchor.assign(gts.size(), -1);

  size_t oi = 0;
  std::vector<size_t> original_to_flat(original.size());
  for (size_t i = 0; i < flat.size(); ++i) {
    if (!schedule.synthetic[size_t(flat[i].level_index)]) {
      original_to_flat[oi] = i;
      out.state[i] = base.state[oi];
      out.gt_index[i] = base.gt_index[oi];
      out.regression[i] = base.regression[oi];
      ++oi;
      continue;
    }
    for (const auto& gt : gts)
      if (iou(flat[i].box(), gt.box) > 0.5) {
        out.state[i] = AnchorState::Ignored;
        break;
      }
  }
  for (size_t g = 0; g < gts.size(); ++g)
    out.positive_anchor[g] =
        int(original_to_flat[size_t(base.positive_anchor[g])]);
  return out;
}

}  // namespace detail

template <class T>
Tensor<T> image_tensor(const DatasetRecord& rec) {
  std::vector<T> data(rec.image.begin(), rec.image.end());
  return Tensor<T>::from_data({1, 3, rec.image_size, rec.image_size},
                              std::move(data));
}

// Scales all gradients so their global L2 norm is at most max_norm.
template <class T>
void clip_grad_norm(ParamStore<T>& params, double max_norm) {
  double sq = 0;
  for (auto& [name, t] : params)
    if (t.has_grad())
      for (T g : t.grad()) sq += double(g) * double(g);
  double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0) return;
  const T scale = T(max_norm / norm);
  for (auto& [name, t] : params)
    if (t.has_grad())
      for (T& g : t.mutable_grad()) g *= scale;
}

// Validation AP50 with the current parameters.
template <class T>
double validate_ap50(const SfpnModel<T>& model,
                     const std::vector<DatasetRecord>& val, bool sol_mode,
                     double conf_threshold, double nms_threshold) {
  std::vector<EvalDet> dets;
  std::vector<EvalGt> gts;
  for (const auto& rec : val) {
    auto pred = predict(model, image_tensor<T>(rec), sol_mode, conf_threshold,
                        nms_threshold);
    for (const auto& d : pred)
      dets.push_back({rec.image_id, d.class_id, d.score, d.box});
    for (const auto& gt : rec.gts)
      gts.push_back({rec.image_id, gt.class_id, gt.box});
  }
  return coco_map(dets, gts, model.config().num_classes).ap50;
}

// Mean batch loss with gradients accumulated into the model parameters.
template <class T>
double train_batch(SfpnModel<T>& model, const std::vector<DatasetRecord*>& batch,
                   const std::vector<char>& flip,
                   const std::vector<int>& head_levels) {
  double total = 0;
  const T inv = T(1) / T(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    DatasetRecord rec = flip[i] ? detail::flip_record(*batch[i]) : *batch[i];
    auto levels = model.forward(image_tensor<T>(rec));

    std::vector<Tensor<T>> raws;
    std::vector<std::vector<Anchor>> anchors;
    std::vector<Anchor> flat, original;
    for (int li : head_levels) {
      raws.push_back(head_apply(model, levels[size_t(li)]));
      anchors.push_back(level_anchor_grid(model.schedule(), li,
                                          model.config().input_size));
      flat.insert(flat.end(), anchors.back().begin(), anchors.back().end());
      if (!model.schedule().synthetic[size_t(li)])
        original.insert(original.end(), anchors.back().begin(),
                        anchors.back().end());
    }
    // Positives live on the original levels, which both evaluation modes
    // score. Synthetic-level anchors still enter the loss as negatives (or
    // ignored near an object) so their objectness is calibrated when the
    // synthetic levels are scored at inference.
    auto assignment = detail::assign_with_synthetic_background(
        model.schedule(), rec.gts, flat, original);
    std::vector<int> gt_classes;
    for (const auto& gt : rec.gts) gt_classes.push_back(gt.class_id);

    Tensor<T> loss = detection_loss(raws, anchors, assignment,
                                    model.config().num_classes, gt_classes);
    total += double(loss.data()[0]);
    backward(mul_scalar(loss, inv));
  }
  return total / double(batch.size());
}

// Deterministic single-threaded training loop. Writes per-epoch CSV rows
// (epoch, loss, val AP50), the best-AP50 checkpoint (best.ckpt) and a
// resumable last state with optimizer moments (last.ckpt) into out_dir.
template <class T>
TrainResult train(SfpnModel<T>& model, std::vector<DatasetRecord> records,
                  const TrainOptions& opt, const std::string& out_dir) {
  opt.validate();
  if (opt.val_count < 0 || size_t(opt.val_count) >= records.size())
    throw ArgumentError("train: val_count must leave at least one training record");
  std::vector<DatasetRecord> val(records.end() - opt.val_count, records.end());
  records.resize(records.size() - size_t(opt.val_count));

  std::filesystem::create_directories(out_dir);
  auto path = [&](const char* f) {
    return (std::filesystem::path(out_dir) / f).string();
  };

  const bool adam = opt.optimizer == "adam";
  SgdOptimizer<T> sgd{T(opt.momentum)};
  AdamOptimizer<T> adam_opt{T(opt.momentum)};
  int start_epoch = 0;
  if (!opt.resume_from.empty()) {
    auto entries = load_checkpoint<T>(opt.resume_from);
    for (auto& [name, t] : entries) {
      if (name == "trainer.epoch") {
        start_epoch = int(t.data()[0]);
      } else if (name == "trainer.step") {
        adam_opt.steps() = std::int64_t(t.data()[0]);
      } else if (name.rfind("opt.m.", 0) == 0) {
        adam_opt.moment1()[name.substr(6)] = t.data();
      } else if (name.rfind("opt.v.", 0) == 0) {
        (adam ? adam_opt.moment2() : sgd.velocity())[name.substr(6)] = t.data();
      } else if (model.params().contains(name)) {
        model.params().get(name).mutable_data() = t.data();
      }
    }
  }

  std::ofstream log(path("train_log.csv"),
                    start_epoch > 0 ? std::ios::app : std::ios::out);
  if (!log) throw DataError("cannot write training log in " + out_dir);
  if (start_epoch == 0) log << "epoch,loss,ap50\n";

  // The loss covers every pyramid level, synthetic ones included, so the
  // shared head is calibrated for both evaluation modes. Parameters are
  // identical either way; which levels are scored at inference stays a
  // prediction-time choice.
  auto head_levels = head_level_indices(model.schedule(), true);
  TrainResult result;
  std::vector<int> order(records.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);

  for (int epoch = start_epoch; epoch < opt.epochs; ++epoch) {
    std::mt19937_64 rng(opt.seed + std::uint64_t(epoch) * 0x51ed2701u + 1);
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = detail::cosine_lr(opt, epoch);

    double epoch_loss = 0;
    int batches = 0;
    for (size_t pos = 0; pos < order.size(); pos += size_t(opt.batch_size)) {
      std::vector<DatasetRecord*> batch;
      std::vector<char> flip;
      for (size_t i = pos; i < std::min(order.size(), pos + size_t(opt.batch_size)); ++i) {
        batch.push_back(&records[size_t(order[i])]);
        flip.push_back(opt.flip_augment && (rng() & 1));
      }
      double loss = train_batch(model, batch, flip, head_levels);
      if (!std::isfinite(loss)) throw NumericError("train: loss diverged (non-finite)");
      if (opt.grad_clip_norm > 0) clip_grad_norm(model.params(), opt.grad_clip_norm);
      if (adam)
        adam_opt.step(model.params(), T(lr));
      else
        sgd.step(model.params(), T(lr));
      epoch_loss += loss;
      ++batches;
    }
    result.final_loss = epoch_loss / std::max(1, batches);

    double ap50 = val.empty()
                      ? 0.0
                      : validate_ap50(model, val, false, opt.conf_threshold,
                                      opt.nms_threshold);
    log << epoch << "," << result.final_loss << "," << ap50 << "\n" << std::flush;
    if (ap50 >= result.best_ap50 && (result.best_epoch < 0 || ap50 > result.best_ap50)) {
      result.best_ap50 = ap50;
      result.best_epoch = epoch;
      model.save(path("best.ckpt"));
    }

    // Resumable state: parameters + optimizer moments + step counters.
    {
      std::vector<std::pair<std::string, Tensor<T>>> entries(
          model.params().begin(), model.params().end());
      auto add_state = [&](const char* prefix,
                           const std::map<std::string, std::vector<T>>& m) {
        for (const auto& [name, v] : m) {
          auto t = Tensor<T>::from_data(
              {1, std::max<int>(1, int(v.size())), 1, 1}, std::vector<T>(v));
          entries.emplace_back(prefix + name, std::move(t));
        }
      };
      if (adam) {
        add_state("opt.m.", adam_opt.moment1());
        add_state("opt.v.", adam_opt.moment2());
      } else {
        add_state("opt.v.", sgd.velocity());
      }
      entries.emplace_back("trainer.epoch",
                           Tensor<T>::from_data({1, 1, 1, 1},
                                                {T(epoch + 1)}));
      if (adam)
        entries.emplace_back("trainer.step",
                             Tensor<T>::from_data({1, 1, 1, 1},
                                                  {T(adam_opt.steps())}));
      save_checkpoint(path("last.ckpt"), entries);
    }

    result.epochs_run = epoch + 1;
    if (opt.target_ap50 > 0 && result.best_ap50 >= opt.target_ap50) break;
  }
  return result;
}

}  // namespace sfpn
