#include "model.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sfpn {

std::string config_to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["variant"] = variant_name(cfg.variant);
  j["input_size"] = cfg.input_size;
  j["neck_channels"] = cfg.neck_channels;
  j["num_classes"] = cfg.num_classes;
  j["seed"] = cfg.seed;
  j["backbone_widths"] = cfg.backbone_widths;
  j["sol_enabled"] = cfg.sol_enabled;
  return j.dump(2);
}

ModelConfig config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model config: invalid JSON: ") + e.what());
  }
  ModelConfig cfg;
  try {
    if (j.contains("variant"))
      cfg.variant = variant_from_string(j["variant"].get<std::string>());
    if (j.contains("input_size")) cfg.input_size = j["input_size"].get<int>();
    if (j.contains("neck_channels"))
      cfg.neck_channels = j["neck_channels"].get<int>();
    if (j.contains("num_classes")) cfg.num_classes = j["num_classes"].get<int>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("backbone_widths"))
      cfg.backbone_widths = j["backbone_widths"].get<std::vector<int>>();
    if (j.contains("sol_enabled")) cfg.sol_enabled = j["sol_enabled"].get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model config: bad field: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ModelConfig config_from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open model config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return config_from_json(ss.str());
}

}  // namespace sfpn
