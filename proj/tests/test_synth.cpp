#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dilnet/synth.hpp"

using namespace dilnet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  TempDir() : path(fs::temp_directory_path() / "dilnet_synth_test") {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path path;
};

}  // namespace

TEST_SUITE("synth") {

TEST_CASE("count zero yields an empty stream") {
  ShapesSceneConfig cfg;
  CHECK(generate(cfg, 0).empty());
}

TEST_CASE("generation is a pure function of the seed") {
  ShapesSceneConfig cfg;
  cfg.seed = 17;
  auto a = generate(cfg, 3);
  auto b = generate(cfg, 3);
  REQUIRE(a.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(a[i].image.data == b[i].image.data);
    CHECK(a[i].labels.data == b[i].labels.data);
  }
  // different seed, different scenes
  cfg.seed = 18;
  auto c = generate(cfg, 1);
  CHECK(c[0].image.data != a[0].image.data);
}

TEST_CASE("labels stay legal and cover every class") {
  ShapesSceneConfig cfg;
  cfg.num_classes = 3;
  cfg.seed = 5;
  std::vector<int64_t> hist(cfg.num_classes, 0);
  for (int64_t i = 0; i < 100; ++i) {
    SynthSample s = generate_scene(cfg, i);
    for (int32_t v : s.labels.data) {
      REQUIRE(v >= 0);
      REQUIRE(v < cfg.num_classes);
      ++hist[v];
    }
    for (float p : s.image.data) {
      REQUIRE(p >= 0.0f);
      REQUIRE(p <= 1.0f);
    }
  }
  for (int64_t c = 0; c < cfg.num_classes; ++c) CHECK(hist[c] > 0);
}

TEST_CASE("ppm round trip is exact up to quantization") {
  TempDir dir;
  ShapesSceneConfig cfg;
  cfg.seed = 9;
  SynthSample s = generate_scene(cfg, 0);
  std::string path = (dir.path / "img.ppm").string();
  write_ppm(path, s.image);
  Tensor back = read_ppm(path);
  CHECK(back.shape == s.image.shape);
  CHECK(max_abs_diff(back, s.image) <= 0.5 / 255.0 + 1e-6);
}

TEST_CASE("pgm carries class ids and the ignore value") {
  TempDir dir;
  LabelMap m(1, 2, 3);
  m.data = {0, 1, 2, 254, 255, 7};
  std::string path = (dir.path / "lab.pgm").string();
  write_pgm(path, m);
  LabelMap back = read_pgm(path);
  CHECK(back.data == m.data);
  CHECK(back.data[4] == kIgnoreLabel);
}

TEST_CASE("single-pixel ppm scaling") {
  TempDir dir;
  std::string path = (dir.path / "one.ppm").string();
  std::ofstream os(path, std::ios::binary);
  os << "P6\n1 1\n255\n";
  os.put(static_cast<char>(255));
  os.put(static_cast<char>(0));
  os.put(static_cast<char>(0));
  os.close();
  Tensor t = read_ppm(path);
  CHECK(t.shape == Shape{1, 3, 1, 1});
  CHECK(t.data[0] == 1.0f);
  CHECK(t.data[1] == 0.0f);
  CHECK(t.data[2] == 0.0f);
}

TEST_CASE("malformed files fail with a byte offset") {
  TempDir dir;
  std::string bad_magic = (dir.path / "bad.ppm").string();
  {
    std::ofstream os(bad_magic, std::ios::binary);
    os << "P3\n1 1\n255\n";
  }
  CHECK_THROWS_AS(read_ppm(bad_magic), FormatError);

  std::string truncated = (dir.path / "short.ppm").string();
  {
    std::ofstream os(truncated, std::ios::binary);
    os << "P6\n2 2\n255\n";
    os.put(static_cast<char>(1));  // 1 of 12 payload bytes
  }
  try {
    read_ppm(truncated);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("at byte") != std::string::npos);
    CHECK(e.offset > 0);
  }

  std::string bad_maxval = (dir.path / "max.pgm").string();
  {
    std::ofstream os(bad_maxval, std::ios::binary);
    os << "P5\n1 1\n65535\n";
    os.put(static_cast<char>(0));
  }
  CHECK_THROWS_AS(read_pgm(bad_maxval), FormatError);
}

TEST_CASE("dataset directory round trip") {
  TempDir dir;
  ShapesSceneConfig cfg;
  cfg.seed = 21;
  std::string root = (dir.path / "ds").string();
  write_dataset(root, cfg, 4);
  CHECK(fs::exists(fs::path(root) / "manifest.txt"));
  CHECK(fs::exists(fs::path(root) / "images" / "000000.ppm"));
  CHECK(fs::exists(fs::path(root) / "labels" / "000003.pgm"));
  Dataset ds = load_dataset(root);
  REQUIRE(ds.images.size() == 4);
  REQUIRE(ds.labels.size() == 4);
  SynthSample first = generate_scene(cfg, 0);
  CHECK(ds.labels[0].data == first.labels.data);
  CHECK(max_abs_diff(ds.images[0], first.image) <= 0.5 / 255.0 + 1e-6);
}

}  // TEST_SUITE
