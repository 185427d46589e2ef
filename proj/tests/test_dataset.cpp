#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "dataset.hpp"

using namespace argus;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("argus_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool clouds_equal(const PointCloud& a, const PointCloud& b) {
  if (a.size() != b.size()) return false;
  return std::memcmp(a.xyz.data(), b.xyz.data(), a.size() * 12) == 0 &&
         std::memcmp(a.rgb.data(), b.rgb.data(), a.size() * 12) == 0 &&
         std::memcmp(a.source_id.data(), b.source_id.data(), a.size() * 4) == 0;
}

bool samples_equal(const SceneSample& a, const SceneSample& b) {
  if (a.scene.objects.size() != b.scene.objects.size()) return false;
  if (a.scene.surfaces.size() != b.scene.surfaces.size()) return false;
  if (a.scene.seed != b.scene.seed) return false;
  if (a.scene.bounds.lo != b.scene.bounds.lo) return false;
  if (a.scene.bounds.hi != b.scene.bounds.hi) return false;
  for (size_t i = 0; i < a.scene.objects.size(); ++i) {
    const auto &x = a.scene.objects[i], &y = b.scene.objects[i];
    if (x.id != y.id || x.category != y.category || x.box.lo != y.box.lo ||
        x.box.hi != y.box.hi || x.color != y.color ||
        x.color_name != y.color_name ||
        x.complex_structure != y.complex_structure)
      return false;
  }
  for (size_t i = 0; i < a.scene.surfaces.size(); ++i) {
    const auto &x = a.scene.surfaces[i], &y = b.scene.surfaces[i];
    if (x.id != y.id || x.kind != y.kind || x.plane != y.plane ||
        x.origin != y.origin || x.edge_u != y.edge_u || x.edge_v != y.edge_v ||
        x.color != y.color || x.color_name != y.color_name ||
        x.textureless != y.textureless ||
        std::memcmp(x.hole, y.hole, sizeof(x.hole)) != 0)
      return false;
  }
  if (!clouds_equal(a.cloud_clean, b.cloud_clean)) return false;
  if (!clouds_equal(a.cloud_degraded, b.cloud_degraded)) return false;
  if (a.views.size() != b.views.size()) return false;
  for (size_t i = 0; i < a.views.size(); ++i) {
    const auto &x = a.views[i], &y = b.views[i];
    if (x.width != y.width || x.height != y.height) return false;
    if (std::memcmp(x.rgb.data(), y.rgb.data(), x.rgb.size() * 4) != 0)
      return false;
    if (std::memcmp(x.pose.world_to_cam.data(), y.pose.world_to_cam.data(),
                    64) != 0)
      return false;
  }
  if (a.qa.size() != b.qa.size()) return false;
  for (size_t i = 0; i < a.qa.size(); ++i) {
    const auto &x = a.qa[i], &y = b.qa[i];
    if (x.task != y.task || x.question != y.question || x.answer != y.answer ||
        x.support_ids != y.support_ids ||
        x.targets_degraded != y.targets_degraded)
      return false;
  }
  return true;
}

SceneSample small_sample(uint64_t seed) {
  SceneConfig scfg;
  QAConfig qcfg;
  SampleParams sp;
  sp.n_points = 512;
  sp.n_views = 3;
  sp.image_size = 32;
  return generate_sample(scfg, qcfg, sp, seed);
}

}  // namespace

TEST_CASE("point cloud files round trip bitwise with the documented size") {
  fs::path dir = temp_dir("cloud");
  SceneSample s = small_sample(1);
  fs::path f = dir / "c.bin";
  write_cloud_bin(f, s.cloud_clean);
  // header + per point: 3 xyz floats, 3 rgb floats, one int32
  CHECK(fs::file_size(f) == 4 + s.cloud_clean.size() * 28);
  PointCloud back = read_cloud_bin(f);
  CHECK(clouds_equal(back, s.cloud_clean));

  // independent header check: first 4 bytes are the little-endian count
  std::ifstream in(f, std::ios::binary);
  unsigned char b4[4];
  in.read(reinterpret_cast<char*>(b4), 4);
  uint32_t n = b4[0] | (b4[1] << 8) | (b4[2] << 16) | (b4[3] << 24);
  CHECK(n == s.cloud_clean.size());
  fs::remove_all(dir);
}

TEST_CASE("a truncated cloud file is reported by name") {
  fs::path dir = temp_dir("trunc");
  SceneSample s = small_sample(2);
  fs::path f = dir / "cloud_clean.bin";
  write_cloud_bin(f, s.cloud_clean);
  fs::resize_file(f, fs::file_size(f) - 9);
  try {
    read_cloud_bin(f);
    FAIL("expected DatasetFormatError");
  } catch (const DatasetFormatError& e) {
    CHECK(std::string(e.what()).find("cloud_clean.bin") != std::string::npos);
  }
  CHECK_THROWS_AS(read_cloud_bin(dir / "nope.bin"), DatasetFormatError);
  fs::remove_all(dir);
}

TEST_CASE("view images round trip bitwise through png") {
  fs::path dir = temp_dir("png");
  SceneSample s = small_sample(3);
  for (const auto& v : s.views) {
    fs::path f = dir / "v.png";
    write_view_png(f, v);
    // real png signature
    std::ifstream in(f, std::ios::binary);
    unsigned char sig[8];
    in.read(reinterpret_cast<char*>(sig), 8);
    CHECK(sig[0] == 0x89);
    CHECK(sig[1] == 'P');
    CHECK(sig[2] == 'N');
    CHECK(sig[3] == 'G');
    View back;
    read_view_png(f, back);
    REQUIRE(back.width == v.width);
    REQUIRE(back.height == v.height);
    CHECK(std::memcmp(back.rgb.data(), v.rgb.data(), v.rgb.size() * 4) == 0);
  }
  // garbage is rejected, named
  fs::path bad = dir / "bad.png";
  std::ofstream(bad) << "this is not a png";
  View v;
  CHECK_THROWS_AS(read_view_png(bad, v), DatasetFormatError);
  fs::remove_all(dir);
}

TEST_CASE("pose files are 16 row major floats") {
  fs::path dir = temp_dir("pose");
  CameraPose pose;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      pose.world_to_cam(r, c) = static_cast<float>(10 * r + c);
  fs::path f = dir / "p.pose";
  write_pose_bin(f, pose);
  CHECK(fs::file_size(f) == 64);
  // row-major order on disk, independent of any in-memory layout
  std::ifstream in(f, std::ios::binary);
  float raw[16];
  in.read(reinterpret_cast<char*>(raw), 64);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      CHECK(raw[4 * r + c] == static_cast<float>(10 * r + c));
  CameraPose back = read_pose_bin(f);
  CHECK(back.world_to_cam == pose.world_to_cam);
  fs::resize_file(f, 60);
  CHECK_THROWS_AS(read_pose_bin(f), DatasetFormatError);
  fs::remove_all(dir);
}

TEST_CASE("qa lines carry the documented fields") {
  fs::path dir = temp_dir("qa");
  SceneSample s = small_sample(4);
  write_scene_dir(dir / "scene_0", s);
  std::ifstream in(dir / "scene_0" / "qa.jsonl");
  REQUIRE(in.good());
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    CHECK(j.contains("task"));
    CHECK(j.contains("question"));
    CHECK(j.contains("answer"));
    CHECK(j.contains("targets_degraded"));
    ++lines;
  }
  CHECK(lines == static_cast<int>(s.qa.size()));
  fs::remove_all(dir);
}

TEST_CASE("a dataset of ten scenes reads back bit identical") {
  fs::path dir = temp_dir("roundtrip");
  GenParams p;
  p.n_scenes = 10;
  p.sample.n_points = 512;
  p.sample.n_views = 3;
  p.sample.image_size = 32;
  std::vector<SceneSample> samples;
  for (int i = 0; i < p.n_scenes; ++i)
    samples.push_back(generate_sample(p.scene, p.qa, p.sample,
                                      derive_seed(77, "scene", static_cast<uint64_t>(i))));
  DatasetManifest m = write_dataset(samples, dir, p, 77);
  CHECK(m.n_scenes == 10);
  CHECK(m.n_views == 3);
  CHECK(!m.config_hash.empty());

  auto back = read_dataset(dir);
  REQUIRE(back.size() == samples.size());
  for (size_t i = 0; i < samples.size(); ++i)
    CHECK(samples_equal(samples[i], back[i]));

  // splits partition the index range
  DatasetManifest m2 = read_manifest(dir);
  std::vector<int> all;
  all.insert(all.end(), m2.train_idx.begin(), m2.train_idx.end());
  all.insert(all.end(), m2.val_idx.begin(), m2.val_idx.end());
  all.insert(all.end(), m2.test_idx.begin(), m2.test_idx.end());
  std::sort(all.begin(), all.end());
  REQUIRE(all.size() == 10);
  for (int i = 0; i < 10; ++i) CHECK(all[static_cast<size_t>(i)] == i);
  CHECK(m2.config_hash == m.config_hash);
  fs::remove_all(dir);
}

TEST_CASE("manifest mismatches against the files on disk are reported") {
  fs::path dir = temp_dir("mismatch");
  GenParams p;
  p.n_scenes = 3;
  p.sample.n_points = 256;
  p.sample.n_views = 2;
  p.sample.image_size = 32;
  generate_dataset(dir, p, 5);
  // a vanished view breaks the per-scene count
  fs::remove(dir / "scene_1" / "views" / "1.png");
  CHECK_THROWS_AS(read_dataset(dir), DatasetFormatError);
  fs::remove_all(dir);
}

TEST_CASE("parallel generation writes exactly the serial bytes") {
  fs::path a = temp_dir("gen_serial");
  fs::path b = temp_dir("gen_par");
  GenParams p;
  p.n_scenes = 6;
  p.sample.n_points = 256;
  p.sample.n_views = 2;
  p.sample.image_size = 32;
  p.workers = 1;
  generate_dataset(a, p, 9);
  p.workers = 3;
  generate_dataset(b, p, 9);

  int compared = 0;
  for (auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    fs::path rel = fs::relative(e.path(), a);
    fs::path other = b / rel;
    REQUIRE(fs::exists(other));
    std::ifstream fa(e.path(), std::ios::binary), fb(other, std::ios::binary);
    std::string ba((std::istreambuf_iterator<char>(fa)), {});
    std::string bb((std::istreambuf_iterator<char>(fb)), {});
    CHECK(ba == bb);
    ++compared;
  }
  CHECK(compared > 6 * 4);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("config hash tracks the generation settings") {
  GenParams p;
  std::string h0 = gen_config_hash(p, 1);
  CHECK(h0 == gen_config_hash(p, 1));
  CHECK(h0 != gen_config_hash(p, 2));
  GenParams q = p;
  q.sample.void_prob = 0.75;
  CHECK(h0 != gen_config_hash(q, 1));
}

TEST_CASE("single scene reads validate the manifest too") {
  fs::path dir = temp_dir("single");
  GenParams p;
  p.n_scenes = 2;
  p.sample.n_points = 256;
  p.sample.n_views = 2;
  p.sample.image_size = 32;
  generate_dataset(dir, p, 3);
  SceneSample s = read_dataset_scene(dir, 1);
  CHECK(s.views.size() == 2);
  CHECK_THROWS_AS(read_dataset_scene(dir, 7), InvalidConfig);
  fs::remove_all(dir);
}
