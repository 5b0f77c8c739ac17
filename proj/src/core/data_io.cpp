#include "data_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace sfpn {

const char* shape_class_name(int class_id) {
  switch (class_id) {
    case 0: return "rectangle";
    case 1: return "ellipse";
  }
  throw ArgumentError("unknown shape class " + std::to_string(class_id));
}

namespace {

void fill_rect(std::vector<float>& img, int s, const Box& b,
               const double rgb[3]) {
  int x1 = std::max(0, int(std::ceil(b.x1 - 0.5)));
  int y1 = std::max(0, int(std::ceil(b.y1 - 0.5)));
  int x2 = std::min(s - 1, int(std::floor(b.x2 - 0.5)));
  int y2 = std::min(s - 1, int(std::floor(b.y2 - 0.5)));
  for (int c = 0; c < 3; ++c)
    for (int y = y1; y <= y2; ++y)
      for (int x = x1; x <= x2; ++x)
        img[(size_t(c) * s + y) * s + x] = float(rgb[c]);
}

void fill_ellipse(std::vector<float>& img, int s, const Box& b,
                  const double rgb[3]) {
  double cx = b.cx(), cy = b.cy();
  double a = b.width() / 2, bb = b.height() / 2;
  int x1 = std::max(0, int(std::floor(b.x1)));
  int y1 = std::max(0, int(std::floor(b.y1)));
  int x2 = std::min(s - 1, int(std::ceil(b.x2)));
  int y2 = std::min(s - 1, int(std::ceil(b.y2)));
  for (int y = y1; y <= y2; ++y)
    for (int x = x1; x <= x2; ++x) {
      double dx = (x + 0.5 - cx) / a, dy = (y + 0.5 - cy) / bb;
      if (dx * dx + dy * dy <= 1.0)
        for (int c = 0; c < 3; ++c)
          img[(size_t(c) * s + y) * s + x] = float(rgb[c]);
    }
}

}  // namespace

DatasetRecord gen_shape_record(const ShapesSpec& spec, int index) {
  const int s = spec.image_size;
  SplitMix64 rng(spec.seed ^ (std::uint64_t(index) * 0x9E3779B97F4A7C15ull));

  DatasetRecord rec;
  rec.image_id = index;
  rec.image_size = s;
  rec.image.resize(size_t(3) * s * s);
  for (auto& v : rec.image) v = float(rng.uniform(0.0, 0.2));

  const int wanted = rng.uniform_int(spec.min_objects, spec.max_objects);
  const double lo = std::log(spec.min_size_frac * s);
  const double hi = std::log(spec.max_size_frac * s);
  const double la = 0.5 * std::log(spec.max_aspect);
  int attempts = 0;
  while (int(rec.gts.size()) < wanted && attempts < 50) {
    ++attempts;
    int cls = rng.uniform_int(0, kNumShapeClasses - 1);
    // Log-uniform mean side with a bounded aspect ratio; extreme slivers
    // are unrepresentative and unlearnable at these strides.
    double side = std::exp(rng.uniform(lo, hi));
    double ar = std::exp(rng.uniform(-la, la));
    double w = std::min(side * ar, double(s));
    double h = std::min(side / ar, double(s));
    double cx = rng.uniform(w / 2, s - w / 2);
    double cy = rng.uniform(h / 2, s - h / 2);
    Box box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
    double rgb[3];
    for (double& c : rgb) c = rng.uniform(0.3, 1.0);

    bool clash = false;
    for (const auto& gt : rec.gts) clash = clash || iou(gt.box, box) > 0.3;
    if (clash) continue;

    if (cls == 0)
      fill_rect(rec.image, s, box, rgb);
    else
      fill_ellipse(rec.image, s, box, rgb);
    rec.gts.push_back({box, cls});
  }
  return rec;
}

std::vector<DatasetRecord> gen_shapes(const ShapesSpec& spec) {
  spec.validate();
  std::vector<DatasetRecord> out;
  out.reserve(size_t(spec.num_images));
  for (int i = 0; i < spec.num_images; ++i)
    out.push_back(gen_shape_record(spec, i));
  return out;
}

// ---- PPM ----

std::vector<std::uint8_t> write_ppm(const std::vector<float>& image, int size) {
  if (image.size() != size_t(3) * size * size)
    throw ArgumentError("write_ppm: buffer does not match size");
  std::string header =
      "P6\n" + std::to_string(size) + " " + std::to_string(size) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + size_t(3) * size * size);
  const size_t plane = size_t(size) * size;
  for (size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) {
      float v = image[size_t(c) * plane + p];
      v = std::min(std::max(v, 0.0f), 1.0f);
      out.push_back(std::uint8_t(std::lround(v * 255.0f)));
    }
  return out;
}

std::pair<std::vector<float>, int> read_ppm(
    const std::vector<std::uint8_t>& bytes) {
  size_t pos = 0;
  auto token = [&]() -> std::string {
    while (pos < bytes.size() &&
           (std::isspace(bytes[pos]) || bytes[pos] == '#')) {
      if (bytes[pos] == '#')
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      else
        ++pos;
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos]))
      t.push_back(char(bytes[pos++]));
    if (t.empty()) throw DataError("ppm: truncated header");
    return t;
  };
  if (token() != "P6") throw DataError("ppm: not a binary P6 file");
  int w, h, maxval;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw DataError("ppm: malformed header");
  }
  if (w < 1 || h < 1 || w != h) throw DataError("ppm: expected a square image");
  if (maxval != 255) throw DataError("ppm: only maxval 255 is supported");
  ++pos;  // single whitespace after maxval
  const size_t plane = size_t(w) * h;
  if (bytes.size() - pos < plane * 3) throw DataError("ppm: truncated payload");
  std::vector<float> image(plane * 3);
  for (size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c)
      image[size_t(c) * plane + p] = float(bytes[pos + p * 3 + c]) / 255.0f;
  return {std::move(image), w};
}

void write_ppm_file(const std::string& path, const std::vector<float>& image,
                    int size) {
  auto bytes = write_ppm(image, size);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           std::streamsize(bytes.size()));
  if (!os) throw DataError("write failed: " + path);
}

std::pair<std::vector<float>, int> read_ppm_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(is),
                                  std::istreambuf_iterator<char>()};
  return read_ppm(bytes);
}

void write_pgm_file(const std::string& path, const std::vector<float>& gray,
                    int h, int w) {
  if (gray.size() != size_t(h) * w)
    throw ArgumentError("write_pgm: buffer does not match size");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << "P5\n" << w << " " << h << "\n255\n";
  for (float v : gray) {
    v = std::min(std::max(v, 0.0f), 1.0f);
    os.put(char(std::uint8_t(std::lround(v * 255.0f))));
  }
  if (!os) throw DataError("write failed: " + path);
}

// ---- COCO-subset annotations ----

CocoSubset load_coco_subset(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("annotations: invalid JSON: ") + e.what());
  }
  if (!j.contains("images") || !j.contains("annotations") ||
      !j.contains("categories"))
    throw DataError("annotations: missing images/annotations/categories");

  CocoSubset out;
  std::map<int, size_t> image_index;
  try {
    for (const auto& im : j["images"]) {
      CocoImageMeta meta;
      meta.image_id = im.at("id").get<int>();
      meta.file_name = im.at("file_name").get<std::string>();
      meta.width = im.at("width").get<int>();
      meta.height = im.at("height").get<int>();
      image_index[meta.image_id] = out.images.size();
      out.images.push_back(std::move(meta));
    }
    // Category ids remapped to contiguous [0, C) preserving ascending order.
    std::map<int, std::string> cats;
    for (const auto& c : j["categories"])
      cats[c.at("id").get<int>()] = c.at("name").get<std::string>();
    std::map<int, int> remap;
    for (const auto& [id, name] : cats) {
      remap[id] = int(out.category_names.size());
      out.category_names.push_back(name);
    }
    for (const auto& a : j["annotations"]) {
      int image_id = a.at("image_id").get<int>();
      auto it = image_index.find(image_id);
      if (it == image_index.end())
        throw DataError("annotations: unknown image id " +
                        std::to_string(image_id));
      auto bbox = a.at("bbox").get<std::vector<double>>();
      if (bbox.size() != 4) throw DataError("annotations: bbox must have 4 values");
      if (bbox[2] <= 0 || bbox[3] <= 0) {
        ++out.skipped_annotations;
        continue;
      }
      int cat = a.at("category_id").get<int>();
      auto rit = remap.find(cat);
      if (rit == remap.end())
        throw DataError("annotations: unknown category id " + std::to_string(cat));
      Box box{bbox[0], bbox[1], bbox[0] + bbox[2], bbox[1] + bbox[3]};
      out.images[it->second].gts.push_back({box, rit->second});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("annotations: bad field: ") + e.what());
  }
  return out;
}

// ---- dataset directory ----

namespace {

std::string record_file_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d.ppm", index);
  return buf;
}

}  // namespace

void write_dataset(const std::string& dir,
                   const std::vector<DatasetRecord>& records) {
  fs::create_directories(dir);
  nlohmann::ordered_json j;
  j["images"] = nlohmann::json::array();
  j["annotations"] = nlohmann::json::array();
  j["categories"] = nlohmann::json::array();
  for (int c = 0; c < kNumShapeClasses; ++c)
    j["categories"].push_back({{"id", c}, {"name", shape_class_name(c)}});
  int ann_id = 0;
  for (size_t i = 0; i < records.size(); ++i) {
    const DatasetRecord& r = records[i];
    std::string name = record_file_name(int(i));
    write_ppm_file((fs::path(dir) / name).string(), r.image, r.image_size);
    j["images"].push_back({{"id", r.image_id},
                           {"file_name", name},
                           {"width", r.image_size},
                           {"height", r.image_size}});
    for (const auto& gt : r.gts)
      j["annotations"].push_back(
          {{"id", ann_id++},
           {"image_id", r.image_id},
           {"bbox", {gt.box.x1, gt.box.y1, gt.box.width(), gt.box.height()}},
           {"category_id", gt.class_id}});
  }
  std::ofstream os(fs::path(dir) / "annotations.json");
  if (!os) throw DataError("cannot write annotations.json in " + dir);
  os << j.dump(2) << "\n";
}

std::vector<DatasetRecord> load_dataset(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "annotations.json");
  if (!is) throw DataError("no annotations.json in " + dir);
  std::stringstream ss;
  ss << is.rdbuf();
  CocoSubset subset = load_coco_subset(ss.str());

  std::vector<DatasetRecord> out;
  out.reserve(subset.images.size());
  for (const auto& meta : subset.images) {
    if (meta.width != meta.height)
      throw DataError("dataset: non-square image " + meta.file_name);
    auto [image, size] = read_ppm_file((fs::path(dir) / meta.file_name).string());
    if (size != meta.width)
      throw DataError("dataset: size mismatch for " + meta.file_name);
    DatasetRecord rec;
    rec.image_id = meta.image_id;
    rec.image_size = size;
    rec.image = std::move(image);
    rec.gts = meta.gts;
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace sfpn
