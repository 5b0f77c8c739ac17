#include "sfpn/sfpn.h"

#include <json.hpp>

#include "data_io.hpp"
#include "eval.hpp"
#include "head.hpp"
#include "model.hpp"
#include "train.hpp"

using Real = float;

struct sfpn_model {
  sfpn::SfpnModel<Real> impl;
};
struct sfpn_dataset {
  std::vector<sfpn::DatasetRecord> records;
};

namespace {

thread_local std::string g_last_error = "no error";

sfpn_status fail(sfpn_status code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

template <class Fn>
sfpn_status guarded(Fn&& fn) {
  try {
    fn();
    return SFPN_OK;
  } catch (const sfpn::ArgumentError& e) {
    return fail(SFPN_ERR_ARGUMENT, e.what());
  } catch (const sfpn::DataError& e) {
    return fail(SFPN_ERR_DATA, e.what());
  } catch (const sfpn::NumericError& e) {
    return fail(SFPN_ERR_NUMERIC, e.what());
  } catch (const std::exception& e) {
    return fail(SFPN_ERR_ARGUMENT, e.what());
  }
}

sfpn_status require(const void* p, const char* what) {
  if (p) return SFPN_OK;
  return fail(SFPN_ERR_ARGUMENT, std::string("null ") + what);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

nlohmann::json parse_options(const char* options_json,
                             std::initializer_list<const char*> allowed) {
  if (!options_json || !*options_json) return nlohmann::json::object();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(options_json);
  } catch (const nlohmann::json::exception& e) {
    throw sfpn::ArgumentError(std::string("options: invalid JSON: ") + e.what());
  }
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw sfpn::ArgumentError("options: unknown key '" + key + "'");
  }
  return j;
}

// Flags may arrive as JSON booleans or as 0/1 numbers from C callers.
bool opt_flag(const nlohmann::json& j, const char* key, bool fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number()) return v.get<double>() != 0.0;
  throw sfpn::ArgumentError(std::string("options: '") + key +
                            "' must be a boolean or 0/1");
}

sfpn::Tensor<Real> load_image(const char* ppm_path, int expected_size) {
  auto [image, size] = sfpn::read_ppm_file(ppm_path);
  if (size != expected_size)
    throw sfpn::DataError("image size " + std::to_string(size) +
                          " does not match the model input size " +
                          std::to_string(expected_size));
  return sfpn::Tensor<Real>::from_data({1, 3, size, size},
                                       std::vector<Real>(image.begin(),
                                                         image.end()));
}

}  // namespace

extern "C" {

const char* sfpn_last_error(void) { return g_last_error.c_str(); }

void sfpn_string_free(char* s) { std::free(s); }

sfpn_status sfpn_model_create(const char* config_json, sfpn_model** out) {
  if (auto s = require(config_json, "config"); s != SFPN_OK) return s;
  if (auto s = require(out, "output pointer"); s != SFPN_OK) return s;
  return guarded([&] {
    *out = new sfpn_model{sfpn::SfpnModel<Real>(
        sfpn::config_from_json(config_json))};
  });
}

sfpn_status sfpn_model_create_from_file(const char* config_path,
                                        sfpn_model** out) {
  if (auto s = require(config_path, "path"); s != SFPN_OK) return s;
  if (auto s = require(out, "output pointer"); s != SFPN_OK) return s;
  return guarded([&] {
    *out = new sfpn_model{sfpn::SfpnModel<Real>(
        sfpn::config_from_file(config_path))};
  });
}

void sfpn_model_free(sfpn_model* m) { delete m; }

sfpn_status sfpn_model_save(const sfpn_model* m, const char* path) {
  if (auto s = require(m, "model"); s != SFPN_OK) return s;
  if (auto s = require(path, "path"); s != SFPN_OK) return s;
  return guarded([&] { m->impl.save(path); });
}

sfpn_status sfpn_model_load(sfpn_model* m, const char* path) {
  if (auto s = require(m, "model"); s != SFPN_OK) return s;
  if (auto s = require(path, "path"); s != SFPN_OK) return s;
  return guarded([&] { m->impl.load(path); });
}

sfpn_status sfpn_model_param_count(const sfpn_model* m, const char* scope,
                                   uint64_t* out) {
  if (auto s = require(m, "model"); s != SFPN_OK) return s;
  if (auto s = require(scope, "scope"); s != SFPN_OK) return s;
  if (auto s = require(out, "output pointer"); s != SFPN_OK) return s;
  return guarded([&] { *out = uint64_t(m->impl.count_params(scope)); });
}

sfpn_status sfpn_model_level_count(const sfpn_model* m, int* out) {
  if (auto s = require(m, "model"); s != SFPN_OK) return s;
  if (auto s = require(out, "output pointer"); s != SFPN_OK) return s;
  *out = m->impl.schedule().level_count();
  return SFPN_OK;
}

sfpn_status sfpn_model_head_level_count(const sfpn_model* m, int sol,
                                        int* out) {
  if (auto s = require(m, "model"); s != SFPN_OK) return s;
  if (auto s = require(out, "output pointer"); s != SFPN_OK) return s;
  *out = int(sfpn::head_level_indices(m->impl.schedule(), sol != 0).size());
  return SFPN_OK;
}

sfpn_status sfpn_dataset_generate(int num_images, int image_size,
                                  uint64_t seed, sfpn_dataset** out) {
  if (auto s = require(out, "output pointer"); s != SFPN_OK) return s;
  return guarded([&] {
    sfpn::ShapesSpec spec;
    spec.num_images = num_images;
    spec.image_size = image_size;
    spec.seed = seed;
    *out = new sfpn_dataset{sfpn::gen_shapes(spec)};
  });
}

sfpn_status sfpn_dataset_open(const char* dir, sfpn_dataset** out) {
  if (auto s = require(dir, "directory"); s != SFPN_OK) return s;
  if (auto s = require(out, "output pointer"); s != SFPN_OK) return s;
  return guarded([&] { *out = new sfpn_dataset{sfpn::load_dataset(dir)}; });
}

sfpn_status sfpn_dataset_write(const sfpn_dataset* d, const char* dir) {
  if (auto s = require(d, "dataset"); s != SFPN_OK) return s;
  if (auto s = require(dir, "directory"); s != SFPN_OK) return s;
  return guarded([&] { sfpn::write_dataset(dir, d->records); });
}

sfpn_status sfpn_dataset_size(const sfpn_dataset* d, int* out) {
  if (auto s = require(d, "dataset"); s != SFPN_OK) return s;
  if (auto s = require(out, "output pointer"); s != SFPN_OK) return s;
  *out = int(d->records.size());
  return SFPN_OK;
}

void sfpn_dataset_free(sfpn_dataset* d) { delete d; }

sfpn_status sfpn_train(sfpn_model* m, const sfpn_dataset* d,
                       const char* options_json, const char* out_dir,
                       double* best_ap50) {
  if (auto s = require(m, "model"); s != SFPN_OK) return s;
  if (auto s = require(d, "dataset"); s != SFPN_OK) return s;
  if (auto s = require(out_dir, "output directory"); s != SFPN_OK) return s;
  return guarded([&] {
    auto j = parse_options(options_json,
                           {"epochs", "batch_size", "lr", "lr_final",
                            "momentum", "warmup_epochs", "seed", "val_count",
                            "target_ap50",
                            "conf_threshold", "nms_threshold", "flip_augment", "grad_clip_norm", "optimizer",
                            "resume_from"});
    sfpn::TrainOptions opt;
    if (j.contains("epochs")) opt.epochs = j["epochs"].get<int>();
    if (j.contains("batch_size")) opt.batch_size = j["batch_size"].get<int>();
    if (j.contains("lr")) opt.lr = j["lr"].get<double>();
    if (j.contains("lr_final")) opt.lr_final = j["lr_final"].get<double>();
    if (j.contains("momentum")) opt.momentum = j["momentum"].get<double>();
    if (j.contains("warmup_epochs")) opt.warmup_epochs = j["warmup_epochs"].get<int>();
    if (j.contains("grad_clip_norm")) opt.grad_clip_norm = j["grad_clip_norm"].get<double>();
    if (j.contains("optimizer")) opt.optimizer = j["optimizer"].get<std::string>();
    if (j.contains("seed")) opt.seed = j["seed"].get<uint64_t>();
    if (j.contains("val_count")) opt.val_count = j["val_count"].get<int>();
    if (j.contains("target_ap50")) opt.target_ap50 = j["target_ap50"].get<double>();
    if (j.contains("conf_threshold")) opt.conf_threshold = j["conf_threshold"].get<double>();
    if (j.contains("nms_threshold")) opt.nms_threshold = j["nms_threshold"].get<double>();
    opt.flip_augment = opt_flag(j, "flip_augment", opt.flip_augment);
    if (j.contains("resume_from")) opt.resume_from = j["resume_from"].get<std::string>();
    auto result = sfpn::train(m->impl, d->records, opt, out_dir);
    if (best_ap50) *best_ap50 = result.best_ap50;
  });
}

sfpn_status sfpn_evaluate(const sfpn_model* m, const sfpn_dataset* d,
                          const char* options_json, char** result_json) {
  if (auto s = require(m, "model"); s != SFPN_OK) return s;
  if (auto s = require(d, "dataset"); s != SFPN_OK) return s;
  if (auto s = require(result_json, "output pointer"); s != SFPN_OK) return s;
  return guarded([&] {
    auto j = parse_options(options_json,
                           {"sol", "conf_threshold", "nms_threshold"});
    bool sol = opt_flag(j, "sol", false);
    double conf = j.value("conf_threshold", 0.05);
    double nms_thr = j.value("nms_threshold", 0.5);
    std::vector<sfpn::EvalDet> dets;
    std::vector<sfpn::EvalGt> gts;
    for (const auto& rec : d->records) {
      auto pred = sfpn::predict(m->impl, sfpn::image_tensor<Real>(rec), sol,
                                conf, nms_thr);
      for (const auto& det : pred)
        dets.push_back({rec.image_id, det.class_id, det.score, det.box});
      for (const auto& gt : rec.gts)
        gts.push_back({rec.image_id, gt.class_id, gt.box});
    }
    auto result = sfpn::coco_map(dets, gts, m->impl.config().num_classes);
    *result_json = dup_string(sfpn::eval_result_to_json(result));
  });
}

sfpn_status sfpn_predict_ppm(const sfpn_model* m, const char* ppm_path,
                             const char* options_json,
                             char** detections_jsonl) {
  if (auto s = require(m, "model"); s != SFPN_OK) return s;
  if (auto s = require(ppm_path, "image path"); s != SFPN_OK) return s;
  if (auto s = require(detections_jsonl, "output pointer"); s != SFPN_OK) return s;
  return guarded([&] {
    auto j = parse_options(options_json,
                           {"sol", "conf_threshold", "nms_threshold", "image_id"});
    auto image = load_image(ppm_path, m->impl.config().input_size);
    auto dets = sfpn::predict(m->impl, image, opt_flag(j, "sol", false),
                              j.value("conf_threshold", 0.05),
                              j.value("nms_threshold", 0.5));
    int image_id = j.value("image_id", 0);
    std::string out;
    for (const auto& det : dets) {
      nlohmann::ordered_json line;
      line["image_id"] = image_id;
      line["class_id"] = det.class_id;
      line["score"] = det.score;
      line["bbox"] = {det.box.x1, det.box.y1, det.box.x2, det.box.y2};
      out += line.dump() + "\n";
    }
    *detections_jsonl = dup_string(out);
  });
}

sfpn_status sfpn_benchmark(const sfpn_model* m, const char* options_json,
                           char** report_json) {
  if (auto s = require(m, "model"); s != SFPN_OK) return s;
  if (auto s = require(report_json, "output pointer"); s != SFPN_OK) return s;
  return guarded([&] {
    auto j = parse_options(options_json, {"iters", "warmup", "sol", "tag"});
    int iters = j.value("iters", 50);
    int warmup = j.value("warmup", 5);
    bool sol = opt_flag(j, "sol", false);
    std::string tag = j.value("tag", std::string(variant_name(
                                         m->impl.config().variant)) +
                                         (sol ? "-sol" : ""));
    const int s = m->impl.config().input_size;
    // Fixed random image; timing covers the full forward + predict path.
    sfpn::SplitMix64 rng(12345);
    std::vector<Real> pixels(size_t(3) * s * s);
    for (auto& v : pixels) v = Real(rng.uniform());
    auto image = sfpn::Tensor<Real>::from_data({1, 3, s, s}, std::move(pixels));
    auto report = sfpn::bench_latency(
        tag, s, [&] { sfpn::predict(m->impl, image, sol); }, iters, warmup);
    *report_json = dup_string(sfpn::latency_report_to_json(report));
  });
}

sfpn_status sfpn_export_confidence(const sfpn_model* m, const char* ppm_path,
                                   int level_index, int sol,
                                   const char* out_pgm_path) {
  if (auto s = require(m, "model"); s != SFPN_OK) return s;
  if (auto s = require(ppm_path, "image path"); s != SFPN_OK) return s;
  if (auto s = require(out_pgm_path, "output path"); s != SFPN_OK) return s;
  return guarded([&] {
    auto image = load_image(ppm_path, m->impl.config().input_size);
    auto map = sfpn::export_confidence(m->impl, image, level_index, sol != 0);
    std::vector<float> gray(map.data().begin(), map.data().end());
    sfpn::write_pgm_file(out_pgm_path, gray, map.dim(2), map.dim(3));
  });
}

}  // extern "C"
