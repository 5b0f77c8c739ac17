#pragma once

#include <optional>

#include "conv.hpp"
#include "params.hpp"
#include "schedule.hpp"

namespace sfpn {

// Architecture description. Defaults follow the reference setting: neck
// width 112, three SFBs, three anchors per cell.
struct ModelConfig {
  Variant variant = Variant::Sfpn3;
  int neck_channels = 112;
  int input_size = 224;
  int num_classes = 2;
  int anchors_per_cell = 3;
  int sfb_count = 3;
  std::vector<int> backbone_widths = {16, 32, 64, 96, 128};
  bool sol_enabled = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (neck_channels < 1 || input_size < 1 || num_classes < 1 ||
        sfb_count < 1)
      throw ArgumentError("model config: fields must be positive");
    if (input_size % 32 != 0)
      throw ArgumentError("model config: input_size must be divisible by 32");
    if (backbone_widths.size() != 5)
      throw ArgumentError("model config: backbone_widths must list 5 stages");
  }
  int head_out_channels() const { return anchors_per_cell * (5 + num_classes); }
};

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);
ModelConfig config_from_file(const std::string& path);

template <class T>
struct FeatureLevel {
  int stride = 0;
  bool synthetic = false;
  Tensor<T> map;
};

namespace detail {

template <class T>
struct ConvUnit {
  Tensor<T> weight, bias;
};

// fan_multiplier widens the effective fan-in for convs that consume a
// pixelwise sum of several maps, keeping activation variance flat through
// the fusion stack. fan_multiplier = 0 zero-initializes (prediction conv).
template <class T>
ConvUnit<T> add_conv(ParamStore<T>& params, const std::string& name, int oc,
                     int ic, int k, std::mt19937_64& rng,
                     int fan_multiplier = 1) {
  auto w = Tensor<T>::zeros({oc, ic, k, k});
  if (fan_multiplier > 0) kaiming_uniform(w, rng, double(fan_multiplier));
  return {params.add(name + ".w", std::move(w)),
          params.add(name + ".b", Tensor<T>::zeros({1, oc, 1, 1}))};
}

}  // namespace detail

// The full SFPN: tiny stride-2 backbone with lateral convs to the neck
// width, front synthetic-layer SFMs, and sfb_count stacked SFBs. One 3x3
// conv per SFM; one shared 1x1 head conv.
template <class T>
class SfpnModel {
 public:
  explicit SfpnModel(ModelConfig cfg)
      : cfg_(std::move(cfg)), schedule_(build_schedule(cfg_.variant)) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    const auto& bw = cfg_.backbone_widths;
    const int nc = cfg_.neck_channels;
    int in_c = 3;
    for (size_t i = 0; i < bw.size(); ++i) {
      stages_.push_back(detail::add_conv(params_, "backbone.stage" +
                                             std::to_string(i),
                                         bw[i], in_c, 3, rng));
      in_c = bw[i];
    }
    for (int i = 0; i < 3; ++i)
      laterals_.push_back(detail::add_conv(params_, "backbone.lateral" +
                                               std::to_string(i),
                                           nc, bw[size_t(i) + 2], 3, rng));
    for (int i = 0; i < schedule_.synthetic_count(); ++i)
      front_.push_back(detail::add_conv(params_, "neck.front" +
                                            std::to_string(i),
                                        nc, nc, 3, rng, 2));
    const int levels = schedule_.level_count();
    for (int b = 0; b < cfg_.sfb_count; ++b)
      for (int i = 0; i < levels; ++i) {
        int arity = 1 + (i > 0) + (i < levels - 1);
        sfb_.push_back(detail::add_conv(
            params_, "neck.sfb" + std::to_string(b) + ".sfm" + std::to_string(i),
            nc, nc, 3, rng, arity));
      }
    head_ = detail::add_conv(params_, "head.pred", cfg_.head_out_channels(), nc,
                             1, rng, 0);
  }

  const ModelConfig& config() const { return cfg_; }
  const ScaleSchedule& schedule() const { return schedule_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  // Parameter counts by scope: backbone / neck / head / total.
  std::int64_t count_params(const std::string& scope) const {
    if (scope == "total" || scope.empty()) return params_.count_elements();
    if (scope == "backbone" || scope == "neck" || scope == "head")
      return params_.count_elements(scope + ".");
    throw ArgumentError("count_params: unknown scope '" + scope + "'");
  }

  // SFM: resize every input to the target grid, sum pixelwise, 3x3 conv,
  // relu. Output flagged synthetic iff the target stride is.
  FeatureLevel<T> sfm_fuse(const std::vector<FeatureLevel<T>>& inputs,
                           int target_stride, bool target_synthetic,
                           const detail::ConvUnit<T>& conv) const {
    if (inputs.empty() || inputs.size() > 3)
      throw ArgumentError("sfm_fuse: needs 1 to 3 inputs");
    const int size = ScaleSchedule::map_size(cfg_.input_size, target_stride);
    std::optional<Tensor<T>> acc;
    for (const auto& in : inputs) {
      if (in.map.dim(1) != cfg_.neck_channels)
        throw ArgumentError("sfm_fuse: input channel mismatch");
      Tensor<T> r = bilinear_resize(in.map, size, size);
      acc = acc ? add(*acc, r) : r;
    }
    Tensor<T> fused = relu(conv2d(*acc, conv.weight, conv.bias, 1, 1));
    return {target_stride, target_synthetic, std::move(fused)};
  }

  // Backbone: five stride-2 3x3 convs with relu; stages 2..4 (strides
  // 8/16/32) pass through lateral 3x3 convs to the neck width.
  std::vector<FeatureLevel<T>> backbone(const Tensor<T>& image) const {
    if (image.dim(1) != 3 || image.dim(2) != cfg_.input_size ||
        image.dim(3) != cfg_.input_size)
      throw ArgumentError("backbone: image must be nx3x" +
                          std::to_string(cfg_.input_size) + "x" +
                          std::to_string(cfg_.input_size) + ", got " +
                          shape_str(image.shape()));
    std::vector<FeatureLevel<T>> out;
    Tensor<T> x = image;
    for (size_t i = 0; i < stages_.size(); ++i) {
      x = relu(conv2d(x, stages_[i].weight, stages_[i].bias, 2, 1));
      if (i >= 2) {
        const auto& lat = laterals_[i - 2];
        out.push_back({8 << (i - 2), false,
                       relu(conv2d(x, lat.weight, lat.bias, 1, 1))});
      }
    }
    return out;
  }

  // Each synthetic stride is produced by one SFM fed with the two closest
  // original levels in log-stride distance (ties toward the finer level).
  std::vector<FeatureLevel<T>> synthesize_front(
      const std::vector<FeatureLevel<T>>& originals) const {
    auto original_strides = schedule_.original_strides();
    if (originals.size() != original_strides.size())
      throw ArgumentError("synthesize_front: expected 3 original levels");
    for (size_t i = 0; i < originals.size(); ++i)
      if (originals[i].stride != original_strides[i])
        throw ArgumentError("synthesize_front: original stride mismatch");

    std::vector<FeatureLevel<T>> out;
    size_t sfm_idx = 0;
    for (int li = 0; li < schedule_.level_count(); ++li) {
      const int stride = schedule_.strides[size_t(li)];
      if (!schedule_.synthetic[size_t(li)]) {
        for (const auto& o : originals)
          if (o.stride == stride) out.push_back(o);
        continue;
      }
      auto idx = nearest_original_pair(stride, original_strides);
      std::vector<FeatureLevel<T>> inputs = {originals[idx.first],
                                             originals[idx.second]};
      out.push_back(sfm_fuse(inputs, stride, true, front_[sfm_idx++]));
    }
    return out;
  }

  // SFB: odd-index levels (batch two) updated from themselves and their
  // even neighbors, then even-index levels from themselves and the updated
  // odd neighbors. Strides and level count are preserved.
  std::vector<FeatureLevel<T>> sfb_pass(std::vector<FeatureLevel<T>> levels,
                                        int sfb_index) const {
    const int L = int(levels.size());
    if (L < 2) throw ArgumentError("sfb_pass: needs at least 2 levels");
    const detail::ConvUnit<T>* units =
        &sfb_[size_t(sfb_index) * size_t(schedule_.level_count())];
    for (int phase = 0; phase < 2; ++phase) {
      std::vector<FeatureLevel<T>> next = levels;
      for (int i = phase == 0 ? 1 : 0; i < L; i += 2) {
        std::vector<FeatureLevel<T>> inputs = {levels[size_t(i)]};
        if (i - 1 >= 0) inputs.push_back(levels[size_t(i) - 1]);
        if (i + 1 < L) inputs.push_back(levels[size_t(i) + 1]);
        next[size_t(i)] = sfm_fuse(inputs, levels[size_t(i)].stride,
                                   levels[size_t(i)].synthetic, units[i]);
      }
      levels = std::move(next);
    }
    return levels;
  }

  // backbone -> front synthesis -> sfb_count SFB passes.
  std::vector<FeatureLevel<T>> forward(const Tensor<T>& image) const {
    auto levels = synthesize_front(backbone(image));
    for (int b = 0; b < cfg_.sfb_count; ++b)
      levels = sfb_pass(std::move(levels), b);
    return levels;
  }

  const detail::ConvUnit<T>& head() const { return head_; }

  void load(const std::string& path) {
    auto entries = load_checkpoint<T>(path);
    size_t matched = 0;
    for (auto& [name, t] : entries) {
      if (!params_.contains(name)) continue;  // optimizer state etc.
      Tensor<T>& dst = params_.get(name);
      if (dst.shape() != t.shape())
        throw DataError("checkpoint entry '" + name + "' has shape " +
                        shape_str(t.shape()) + ", model expects " +
                        shape_str(dst.shape()));
      dst.mutable_data() = t.data();
      ++matched;
    }
    if (matched != params_.size())
      throw DataError("checkpoint is missing model parameters (" +
                      std::to_string(matched) + "/" +
                      std::to_string(params_.size()) + " matched)");
  }

  void save(const std::string& path) const { save_checkpoint(path, params_); }

  static std::pair<size_t, size_t> nearest_original_pair(
      int stride, const std::vector<int>& originals) {
    std::vector<size_t> order(originals.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto dist = [&](size_t i) {
      return std::abs(std::log(double(stride) / originals[i]));
    };
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      // Ties toward the finer (smaller) stride.
      double da = dist(a), db = dist(b);
      if (da != db) return da < db;
      return originals[a] < originals[b];
    });
    size_t i = order[0], j = order[1];
    return {std::min(i, j), std::max(i, j)};
  }

 private:
  ModelConfig cfg_;
  ScaleSchedule schedule_;
  ParamStore<T> params_;
  std::vector<detail::ConvUnit<T>> stages_;
  std::vector<detail::ConvUnit<T>> laterals_;
  std::vector<detail::ConvUnit<T>> front_;
  std::vector<detail::ConvUnit<T>> sfb_;
  detail::ConvUnit<T> head_;
};

}  // namespace sfpn
