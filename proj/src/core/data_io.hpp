#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "detection_types.hpp"

namespace sfpn {

// Counter-based PRNG; one independent stream per dataset index.
struct SplitMix64 {
  std::uint64_t state;
  explicit SplitMix64(std::uint64_t seed) : state(seed) {}
  std::uint64_t next() {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
  double uniform() { return double(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + int(next() % std::uint64_t(hi - lo + 1));
  }
};

// Image stored channel-major (3 x S x S), values in [0, 1].
struct DatasetRecord {
  int image_id = 0;
  int image_size = 0;
  std::vector<float> image;
  std::vector<GroundTruthBox> gts;
};

struct ShapesSpec {
  int image_size = 96;
  int num_images = 100;
  int min_objects = 1, max_objects = 5;
  double min_size_frac = 0.07, max_size_frac = 0.65;  // log-uniform side range
  double max_aspect = 2.0;  // width:height ratio bound
  std::uint64_t seed = 0;

  void validate() const {
    if (image_size < 32 || image_size % 32 != 0)
      throw ArgumentError("shapes spec: image_size must be a positive multiple of 32");
    if (num_images < 1 || min_objects < 1 || max_objects < min_objects)
      throw ArgumentError("shapes spec: invalid counts");
    if (min_size_frac <= 0 || max_size_frac <= min_size_frac ||
        max_size_frac > 1.0)
      throw ArgumentError("shapes spec: invalid size range");
    if (max_aspect < 1.0)
      throw ArgumentError("shapes spec: max_aspect must be at least 1");
  }
};

inline constexpr int kNumShapeClasses = 2;  // 0 rectangle, 1 ellipse
const char* shape_class_name(int class_id);

// Deterministic synthetic dataset: noise background, 1..5 filled
// rectangles/ellipses with pairwise IoU <= 0.3, tight GT boxes.
DatasetRecord gen_shape_record(const ShapesSpec& spec, int index);
std::vector<DatasetRecord> gen_shapes(const ShapesSpec& spec);

// ---- PPM / PGM ----

std::vector<std::uint8_t> write_ppm(const std::vector<float>& image, int size);
// Returns the image buffer (3 x S x S) and the size.
std::pair<std::vector<float>, int> read_ppm(const std::vector<std::uint8_t>& bytes);

void write_ppm_file(const std::string& path, const std::vector<float>& image,
                    int size);
std::pair<std::vector<float>, int> read_ppm_file(const std::string& path);

void write_pgm_file(const std::string& path, const std::vector<float>& gray,
                    int h, int w);

// ---- COCO-subset annotations ----

struct CocoImageMeta {
  int image_id = 0;
  std::string file_name;
  int width = 0, height = 0;
  std::vector<GroundTruthBox> gts;  // class ids remapped to [0, C)
};

struct CocoSubset {
  std::vector<CocoImageMeta> images;
  std::vector<std::string> category_names;  // index = remapped id
  int skipped_annotations = 0;              // non-positive bbox w/h
};

CocoSubset load_coco_subset(const std::string& json_text);

// ---- dataset directory: NNNNNN.ppm files + annotations.json ----

void write_dataset(const std::string& dir, const std::vector<DatasetRecord>& records);
std::vector<DatasetRecord> load_dataset(const std::string& dir);

}  // namespace sfpn
