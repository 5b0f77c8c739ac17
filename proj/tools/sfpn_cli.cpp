// Command-line front end for the SFPN library. Talks to the shared
// library exclusively through the C API in sfpn/sfpn.h.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sfpn/sfpn.h"

namespace {

// Exit codes: 0 success, 2 bad arguments, 3 data errors, 4 numeric failure.
int check(sfpn_status s) {
  if (s != SFPN_OK) {
    std::cerr << "error: " << sfpn_last_error() << "\n";
    std::exit(int(s));
  }
  return 0;
}

struct ModelArgs {
  std::string config_path;
  std::string variant = "sfpn3";
  int input_size = 224;
  int num_classes = 2;
  int neck_channels = 112;
  std::uint64_t seed = 0;

  void add_flags(CLI::App* app) {
    app->add_option("--config", config_path, "Model config JSON file");
    app->add_option("--variant", variant, "sfpn3 | sfpn5 | sfpn9")
        ->check(CLI::IsMember({"sfpn3", "sfpn5", "sfpn9"}));
    app->add_option("--size", input_size, "Input size (multiple of 32)");
    app->add_option("--classes", num_classes, "Number of classes");
    app->add_option("--neck", neck_channels, "Neck channel width");
    app->add_option("--seed", seed, "Init seed");
  }

  std::string to_json(const std::string& variant_override = "") const {
    std::string v = variant_override.empty() ? variant : variant_override;
    std::ostringstream os;
    os << "{\"variant\":\"" << v << "\",\"input_size\":" << input_size
       << ",\"num_classes\":" << num_classes
       << ",\"neck_channels\":" << neck_channels << ",\"seed\":" << seed << "}";
    return os.str();
  }

  sfpn_model* create(const std::string& variant_override = "") const {
    sfpn_model* m = nullptr;
    if (!config_path.empty() && variant_override.empty())
      check(sfpn_model_create_from_file(config_path.c_str(), &m));
    else
      check(sfpn_model_create(to_json(variant_override).c_str(), &m));
    return m;
  }
};

std::string take_string(char* s) {
  std::string out = s ? s : "";
  sfpn_string_free(s);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SFPN synthetic-pyramid object detection toolkit"};
  app.require_subcommand(1);

  // ---- gen ----
  auto* gen = app.add_subcommand("gen", "Generate a synthetic shapes dataset");
  int gen_n = 100, gen_size = 96;
  std::uint64_t gen_seed = 0;
  std::string gen_out = "dataset";
  gen->add_option("--n", gen_n, "Number of images");
  gen->add_option("--img-size", gen_size, "Image size (multiple of 32)");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--out", gen_out, "Output directory")->required();

  // ---- train ----
  auto* train = app.add_subcommand("train", "Train a model on a dataset");
  ModelArgs train_model;
  train_model.add_flags(train);
  std::string train_data, train_out = "run", train_resume;
  int train_epochs = 60, train_batch = 8, train_val = 0, train_warmup = 0;
  double train_clip = 10.0;
  double train_lr = 0.01, train_momentum = 0.9, train_target = -1.0;
  std::string train_optim = "sgd";
  train->add_option("--data", train_data, "Dataset directory")->required();
  train->add_option("--out", train_out, "Output directory");
  train->add_option("--epochs", train_epochs);
  train->add_option("--batch", train_batch);
  train->add_option("--lr", train_lr);
  train->add_option("--momentum", train_momentum);
  train->add_option("--warmup", train_warmup, "Warmup epochs before cosine decay");
  train->add_option("--clip", train_clip, "Global gradient-norm clip");
  train->add_option("--optimizer", train_optim, "sgd | adam")
      ->check(CLI::IsMember({"sgd", "adam"}));
  train->add_option("--val-count", train_val, "Records held out for validation");
  train->add_option("--target-ap50", train_target, "Stop early at this val AP50");
  train->add_option("--resume", train_resume, "Resume from a last.ckpt state");

  // ---- eval ----
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ModelArgs eval_model;
  eval_model.add_flags(eval);
  std::string eval_data, eval_ckpt, eval_out;
  bool eval_sol = false;
  double eval_conf = 0.05, eval_nms = 0.5;
  eval->add_option("--data", eval_data, "Dataset directory")->required();
  eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
  eval->add_option("--out", eval_out, "Write result JSON here as well");
  eval->add_flag("--sol", eval_sol, "Use synthetic output layers");
  eval->add_option("--conf", eval_conf, "Confidence threshold");
  eval->add_option("--nms", eval_nms, "NMS IoU threshold");

  // ---- params ----
  auto* params = app.add_subcommand("params", "Parameter audit across variants");
  ModelArgs params_model;
  params_model.add_flags(params);

  // ---- bench ----
  auto* bench = app.add_subcommand("bench", "Latency benchmark");
  ModelArgs bench_model;
  bench_model.add_flags(bench);
  int bench_iters = 50, bench_warmup = 5;
  bool bench_sol = false, bench_sweep = false;
  std::string bench_csv;
  bench->add_option("--iters", bench_iters);
  bench->add_option("--warmup", bench_warmup);
  bench->add_flag("--sol", bench_sol, "Use synthetic output layers");
  bench->add_flag("--sweep", bench_sweep, "Run all three variants");
  bench->add_option("--csv", bench_csv, "Append CSV rows to this file");

  // ---- viz ----
  auto* viz = app.add_subcommand("viz", "Export per-level confidence maps");
  ModelArgs viz_model;
  viz_model.add_flags(viz);
  std::string viz_image, viz_ckpt, viz_out = ".";
  bool viz_sol = false;
  viz->add_option("--image", viz_image, "Input PPM image")->required();
  viz->add_option("--checkpoint", viz_ckpt, "Model checkpoint");
  viz->add_option("--out", viz_out, "Output directory");
  viz->add_flag("--sol", viz_sol, "Include synthetic output layers");

  // ---- predict ----
  auto* predict = app.add_subcommand("predict", "Detections for one image");
  ModelArgs pred_model;
  pred_model.add_flags(predict);
  std::string pred_image, pred_ckpt;
  bool pred_sol = false;
  double pred_conf = 0.05, pred_nms = 0.5;
  predict->add_option("--image", pred_image, "Input PPM image")->required();
  predict->add_option("--checkpoint", pred_ckpt, "Model checkpoint");
  predict->add_flag("--sol", pred_sol);
  predict->add_option("--conf", pred_conf);
  predict->add_option("--nms", pred_nms);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (gen->parsed()) {
    sfpn_dataset* d = nullptr;
    check(sfpn_dataset_generate(gen_n, gen_size, gen_seed, &d));
    check(sfpn_dataset_write(d, gen_out.c_str()));
    int n = 0;
    sfpn_dataset_size(d, &n);
    sfpn_dataset_free(d);
    std::cout << "wrote " << n << " images to " << gen_out << "\n";
    return 0;
  }

  if (train->parsed()) {
    sfpn_model* m = train_model.create();
    sfpn_dataset* d = nullptr;
    check(sfpn_dataset_open(train_data.c_str(), &d));
    std::ostringstream opts;
    opts << "{\"epochs\":" << train_epochs << ",\"batch_size\":" << train_batch
         << ",\"lr\":" << train_lr << ",\"momentum\":" << train_momentum
         << ",\"warmup_epochs\":" << train_warmup
         << ",\"grad_clip_norm\":" << train_clip
         << ",\"optimizer\":\"" << train_optim << "\""
         << ",\"seed\":" << train_model.seed << ",\"val_count\":" << train_val
         << ",\"target_ap50\":" << train_target;
    if (!train_resume.empty()) opts << ",\"resume_from\":\"" << train_resume << "\"";
    opts << "}";
    double best = 0;
    check(sfpn_train(m, d, opts.str().c_str(), train_out.c_str(), &best));
    std::cout << "best val AP50: " << best << "\n"
              << "checkpoints and train_log.csv written to " << train_out << "\n";
    sfpn_dataset_free(d);
    sfpn_model_free(m);
    return 0;
  }

  if (eval->parsed()) {
    sfpn_model* m = eval_model.create();
    check(sfpn_model_load(m, eval_ckpt.c_str()));
    sfpn_dataset* d = nullptr;
    check(sfpn_dataset_open(eval_data.c_str(), &d));
    std::ostringstream opts;
    opts << "{\"sol\":" << (eval_sol ? "true" : "false")
         << ",\"conf_threshold\":" << eval_conf
         << ",\"nms_threshold\":" << eval_nms << "}";
    char* result = nullptr;
    check(sfpn_evaluate(m, d, opts.str().c_str(), &result));
    std::string json = take_string(result);
    std::cout << json << "\n";
    if (!eval_out.empty()) {
      std::ofstream os(eval_out);
      os << json << "\n";
    }
    sfpn_dataset_free(d);
    sfpn_model_free(m);
    return 0;
  }

  if (params->parsed()) {
    const char* variants[] = {"sfpn3", "sfpn5", "sfpn9"};
    const char* scopes[] = {"backbone", "neck", "head", "total"};
    std::uint64_t neck[3] = {};
    std::printf("%-8s %12s %12s %12s %12s\n", "variant", "backbone", "neck",
                "head", "total");
    for (int v = 0; v < 3; ++v) {
      sfpn_model* m = params_model.create(variants[v]);
      std::uint64_t counts[4];
      for (int s = 0; s < 4; ++s)
        check(sfpn_model_param_count(m, scopes[s], &counts[s]));
      neck[v] = counts[1];
      std::printf("%-8s %12llu %12llu %12llu %12llu\n", variants[v],
                  (unsigned long long)counts[0], (unsigned long long)counts[1],
                  (unsigned long long)counts[2], (unsigned long long)counts[3]);
      sfpn_model_free(m);
    }
    std::printf("neck delta sfpn3->sfpn5: %llu\n",
                (unsigned long long)(neck[1] - neck[0]));
    std::printf("neck delta sfpn5->sfpn9: %llu\n",
                (unsigned long long)(neck[2] - neck[1]));
    return 0;
  }

  if (bench->parsed()) {
    std::vector<std::string> variants =
        bench_sweep ? std::vector<std::string>{"sfpn3", "sfpn5", "sfpn9"}
                    : std::vector<std::string>{};
    std::ofstream csv;
    if (!bench_csv.empty()) csv.open(bench_csv, std::ios::app);
    auto run_one = [&](const std::string& variant_override) {
      sfpn_model* m = bench_model.create(variant_override);
      std::ostringstream opts;
      opts << "{\"iters\":" << bench_iters << ",\"warmup\":" << bench_warmup
           << ",\"sol\":" << (bench_sol ? "true" : "false") << "}";
      char* report = nullptr;
      check(sfpn_benchmark(m, opts.str().c_str(), &report));
      std::string json = take_string(report);
      std::cout << json << "\n";
      if (csv.is_open()) {
        // tag, size, mean_ms, fps from the JSON report
        auto field = [&](const char* key) {
          auto p = json.find(std::string("\"") + key + "\"");
          p = json.find(':', p) + 1;
          auto q = json.find_first_of(",}\n", p);
          std::string v = json.substr(p, q - p);
          while (!v.empty() && (v.front() == ' ' || v.front() == '"')) v.erase(v.begin());
          while (!v.empty() && (v.back() == ' ' || v.back() == '"')) v.pop_back();
          return v;
        };
        csv << field("tag") << "," << field("input_size") << ","
            << field("mean_ms") << "," << field("fps") << "\n";
      }
      sfpn_model_free(m);
    };
    if (variants.empty())
      run_one("");
    else
      for (const auto& v : variants) run_one(v);
    return 0;
  }

  if (viz->parsed()) {
    sfpn_model* m = viz_model.create();
    if (!viz_ckpt.empty()) check(sfpn_model_load(m, viz_ckpt.c_str()));
    std::filesystem::create_directories(viz_out);
    int levels = 0, head_levels = 0;
    check(sfpn_model_level_count(m, &levels));
    check(sfpn_model_head_level_count(m, viz_sol ? 1 : 0, &head_levels));
    int written = 0;
    for (int li = 0; li < levels && written < head_levels; ++li) {
      auto out = (std::filesystem::path(viz_out) /
                  ("confidence_level" + std::to_string(li) + ".pgm"))
                     .string();
      sfpn_status s = sfpn_export_confidence(m, viz_image.c_str(), li,
                                             viz_sol ? 1 : 0, out.c_str());
      if (s == SFPN_ERR_ARGUMENT) continue;  // not a head level in this mode
      check(s);
      std::cout << out << "\n";
      ++written;
    }
    sfpn_model_free(m);
    return 0;
  }

  if (predict->parsed()) {
    sfpn_model* m = pred_model.create();
    if (!pred_ckpt.empty()) check(sfpn_model_load(m, pred_ckpt.c_str()));
    std::ostringstream opts;
    opts << "{\"sol\":" << (pred_sol ? "true" : "false")
         << ",\"conf_threshold\":" << pred_conf
         << ",\"nms_threshold\":" << pred_nms << "}";
    char* dets = nullptr;
    check(sfpn_predict_ppm(m, pred_image.c_str(), opts.str().c_str(), &dets));
    std::cout << take_string(dets);
    sfpn_model_free(m);
    return 0;
  }

  return 2;
}
