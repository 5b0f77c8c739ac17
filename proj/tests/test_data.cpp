#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "data_io.hpp"

using namespace sfpn;

TEST_CASE("generation is deterministic and order independent") {
  ShapesSpec spec;
  spec.num_images = 8;
  spec.seed = 42;
  auto a = gen_shapes(spec);
  auto b = gen_shapes(spec);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].gts.size() == b[i].gts.size());
  }
  // per-index seeding: a record does not depend on its neighbors
  auto solo = gen_shape_record(spec, 5);
  CHECK(solo.image == a[5].image);
}

TEST_CASE("different seeds give different images") {
  ShapesSpec a, b;
  a.num_images = b.num_images = 1;
  a.seed = 1;
  b.seed = 2;
  CHECK(gen_shapes(a)[0].image != gen_shapes(b)[0].image);
}

TEST_CASE("spec validation") {
  ShapesSpec spec;
  spec.min_objects = 3;
  spec.max_objects = 1;
  CHECK_THROWS_AS(spec.validate(), ArgumentError);
  spec = ShapesSpec{};
  spec.image_size = 0;
  CHECK_THROWS_AS(spec.validate(), ArgumentError);
  spec = ShapesSpec{};
  spec.min_size_frac = 0.9;
  spec.max_size_frac = 0.1;
  CHECK_THROWS_AS(spec.validate(), ArgumentError);
}

TEST_CASE("records respect the object and boundary contracts") {
  ShapesSpec spec;
  spec.num_images = 30;
  spec.seed = 9;
  for (const auto& rec : gen_shapes(spec)) {
    CHECK(int(rec.gts.size()) >= 1);
    CHECK(int(rec.gts.size()) <= spec.max_objects);
    for (const auto& gt : rec.gts) {
      CHECK(gt.box.x1 >= -1e-9);
      CHECK(gt.box.y1 >= -1e-9);
      CHECK(gt.box.x2 <= spec.image_size + 1e-9);
      CHECK(gt.box.y2 <= spec.image_size + 1e-9);
      CHECK(gt.box.area() > 0);
      CHECK((gt.class_id == 0 || gt.class_id == 1));
    }
    // pairwise overlap cap
    for (size_t i = 0; i < rec.gts.size(); ++i)
      for (size_t j = i + 1; j < rec.gts.size(); ++j)
        CHECK(iou(rec.gts[i].box, rec.gts[j].box) <= 0.3 + 1e-9);
    for (float v : rec.image) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("size distribution spans below stride 8 and above stride 32") {
  ShapesSpec spec;
  spec.num_images = 1000;
  spec.seed = 7;
  int tiny = 0, large = 0;
  for (int i = 0; i < spec.num_images; ++i)
    for (const auto& gt : gen_shape_record(spec, i).gts) {
      double side = std::sqrt(gt.box.area());
      if (side < 8) ++tiny;
      if (side > 32) ++large;
    }
  CHECK(tiny > 0);
  CHECK(large > 0);
}

TEST_CASE("ppm 2x2 exact byte layout") {
  // pixels (row major): red, green, blue, white
  std::vector<float> img(12, 0.0f);
  auto px = [&](int y, int x, float r, float g, float b) {
    img[(0 * 2 + y) * 2 + x] = r;
    img[(1 * 2 + y) * 2 + x] = g;
    img[(2 * 2 + y) * 2 + x] = b;
  };
  px(0, 0, 1, 0, 0);
  px(0, 1, 0, 1, 0);
  px(1, 0, 0, 0, 1);
  px(1, 1, 1, 1, 1);
  auto bytes = write_ppm(img, 2);
  std::vector<std::uint8_t> want = {'P', '6', '\n', '2', ' ', '2', '\n',
                                    '2', '5', '5', '\n',
                                    255, 0, 0, 0, 255, 0,
                                    0, 0, 255, 255, 255, 255};
  CHECK(bytes == want);
}

TEST_CASE("ppm round-trip stays within the quantization bound") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<float> d(0.f, 1.f);
  std::vector<float> img(size_t(3) * 5 * 5);
  for (auto& v : img) v = d(rng);
  auto [back, size] = read_ppm(write_ppm(img, 5));
  REQUIRE(size == 5);
  REQUIRE(back.size() == img.size());
  for (size_t i = 0; i < img.size(); ++i)
    CHECK(std::abs(back[i] - img[i]) <= 1.0f / 255.0f + 1e-6f);
  // a second pass is bit-exact
  auto twice = read_ppm(write_ppm(back, 5)).first;
  CHECK(twice == back);
}

TEST_CASE("ppm reader tolerates comments and rejects junk") {
  std::string text = "P6\n# a comment\n1 1\n255\nabc";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  auto [img, size] = read_ppm(bytes);
  CHECK(size == 1);
  CHECK(img.size() == 3);
  std::string bad = "P5\n1 1\n255\nab";
  CHECK_THROWS_AS(read_ppm({bad.begin(), bad.end()}), DataError);
  std::string trunc = "P6\n2 2\n255\nab";
  CHECK_THROWS_AS(read_ppm({trunc.begin(), trunc.end()}), DataError);
}

TEST_CASE("coco subset remaps category ids in ascending order") {
  std::string text = R"({
    "images": [
      {"id": 10, "file_name": "a.ppm", "width": 64, "height": 64},
      {"id": 11, "file_name": "b.ppm", "width": 64, "height": 64}
    ],
    "categories": [
      {"id": 99, "name": "truck"},
      {"id": 7, "name": "cat"},
      {"id": 12, "name": "dog"}
    ],
    "annotations": [
      {"image_id": 10, "category_id": 99, "bbox": [1, 2, 10, 20]},
      {"image_id": 10, "category_id": 7, "bbox": [5, 5, 8, 8]},
      {"image_id": 11, "category_id": 12, "bbox": [0, 0, 4, 4]},
      {"image_id": 11, "category_id": 7, "bbox": [3, 3, 0, 5]}
    ]
  })";
  auto sub = load_coco_subset(text);
  REQUIRE(sub.category_names.size() == 3);
  CHECK(sub.category_names == std::vector<std::string>{"cat", "dog", "truck"});
  CHECK(sub.skipped_annotations == 1);  // zero-width bbox
  REQUIRE(sub.images.size() == 2);
  const auto& g0 = sub.images[0].gts;
  REQUIRE(g0.size() == 2);
  CHECK(g0[0].class_id == 2);  // 99 -> truck -> 2
  CHECK(g0[0].box.x1 == doctest::Approx(1));
  CHECK(g0[0].box.x2 == doctest::Approx(11));
  CHECK(g0[0].box.y2 == doctest::Approx(22));
  CHECK(g0[1].class_id == 0);
  CHECK(sub.images[1].gts.size() == 1);
}

TEST_CASE("coco subset rejects dangling references") {
  std::string bad_img = R"({"images": [], "categories": [{"id": 1, "name": "x"}],
    "annotations": [{"image_id": 5, "category_id": 1, "bbox": [0,0,1,1]}]})";
  CHECK_THROWS_AS(load_coco_subset(bad_img), DataError);
  std::string bad_cat = R"({"images": [{"id": 5, "file_name": "a", "width": 4, "height": 4}],
    "categories": [], "annotations": [{"image_id": 5, "category_id": 1, "bbox": [0,0,1,1]}]})";
  CHECK_THROWS_AS(load_coco_subset(bad_cat), DataError);
  CHECK_THROWS_AS(load_coco_subset("not json"), DataError);
}

TEST_CASE("dataset directory round-trip") {
  ShapesSpec spec;
  spec.num_images = 4;
  spec.seed = 3;
  auto records = gen_shapes(spec);
  std::string dir = "/tmp/sfpn_test_ds";
  std::filesystem::remove_all(dir);
  write_dataset(dir, records);
  auto loaded = load_dataset(dir);
  REQUIRE(loaded.size() == records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    CHECK(loaded[i].image_size == records[i].image_size);
    REQUIRE(loaded[i].gts.size() == records[i].gts.size());
    for (size_t g = 0; g < records[i].gts.size(); ++g) {
      CHECK(loaded[i].gts[g].class_id == records[i].gts[g].class_id);
      CHECK(loaded[i].gts[g].box.x1 ==
            doctest::Approx(records[i].gts[g].box.x1).epsilon(1e-6));
    }
    // images go through one quantization
    for (size_t p = 0; p < records[i].image.size(); ++p)
      CHECK(std::abs(loaded[i].image[p] - records[i].image[p]) <=
            1.0f / 255.0f + 1e-6f);
  }
  CHECK_THROWS_AS(load_dataset("/tmp/sfpn_no_such_dir"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("pgm writer emits a valid 8-bit file") {
  std::vector<float> gray = {0.0f, 0.5f, 1.0f, 0.25f};
  std::string path = "/tmp/sfpn_test.pgm";
  write_pgm_file(path, gray, 2, 2);
  std::ifstream is(path, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(is)),
                      std::istreambuf_iterator<char>());
  CHECK(content.rfind("P5\n2 2\n255\n", 0) == 0);
  CHECK(content.size() == 11 + 4);
  CHECK(std::uint8_t(content[11]) == 0);
  CHECK(std::uint8_t(content[13]) == 255);
  std::remove(path.c_str());
}

TEST_CASE("splitmix64 reference values") {
  // reference sequence for seed 1234567
  SplitMix64 rng(1234567);
  std::uint64_t a = rng.next(), b = rng.next();
  SplitMix64 rng2(1234567);
  CHECK(rng2.next() == a);
  CHECK(rng2.next() == b);
  CHECK(a != b);
  double u = SplitMix64(9).uniform();
  CHECK(u >= 0.0);
  CHECK(u < 1.0);
  int k = SplitMix64(9).uniform_int(3, 5);
  CHECK(k >= 3);
  CHECK(k <= 5);
}
