#include "dataset.hpp"

#include <png.h>

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <numeric>
#include <thread>

#include "hashing.hpp"

static_assert(std::endian::native == std::endian::little,
              "the on-disk format is little-endian");
static_assert(sizeof(Eigen::Vector3f) == 12);

namespace argus {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- point clouds -----------------------------------------------------------

void write_cloud_bin(const fs::path& file, const PointCloud& pc) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  uint32_t n = static_cast<uint32_t>(pc.size());
  out.write(reinterpret_cast<const char*>(&n), 4);
  out.write(reinterpret_cast<const char*>(pc.xyz.data()), n * 12);
  out.write(reinterpret_cast<const char*>(pc.rgb.data()), n * 12);
  out.write(reinterpret_cast<const char*>(pc.source_id.data()), n * 4);
  if (!out) throw IoError("short write to " + file.string());
}

PointCloud read_cloud_bin(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DatasetFormatError("missing point cloud file " + file.string());
  uint32_t n = 0;
  in.read(reinterpret_cast<char*>(&n), 4);
  if (!in) throw DatasetFormatError("truncated point cloud file " + file.string());
  const uintmax_t expect = 4 + static_cast<uintmax_t>(n) * 28;
  if (fs::file_size(file) != expect)
    throw DatasetFormatError("truncated point cloud file " + file.string());
  PointCloud pc;
  pc.xyz.resize(n);
  pc.rgb.resize(n);
  pc.source_id.resize(n);
  in.read(reinterpret_cast<char*>(pc.xyz.data()), n * 12);
  in.read(reinterpret_cast<char*>(pc.rgb.data()), n * 12);
  in.read(reinterpret_cast<char*>(pc.source_id.data()), n * 4);
  if (!in) throw DatasetFormatError("truncated point cloud file " + file.string());
  return pc;
}

// ---- images -----------------------------------------------------------------

void write_view_png(const fs::path& file, const View& v) {
  FILE* fp = std::fopen(file.string().c_str(), "wb");
  if (!fp) throw IoError("cannot open " + file.string() + " for writing");
  std::vector<png_byte> row(static_cast<size_t>(v.width) * 3);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw IoError("png write failed for " + file.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(v.width),
               static_cast<png_uint_32>(v.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < v.height; ++y) {
    for (int x = 0; x < v.width * 3; ++x) {
      float f = v.rgb[static_cast<size_t>(y * v.width * 3 + x)];
      row[static_cast<size_t>(x)] =
          static_cast<png_byte>(std::lround(f * 255.0f));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

void read_view_png(const fs::path& file, View& v) {
  FILE* fp = std::fopen(file.string().c_str(), "rb");
  if (!fp) throw DatasetFormatError("missing view image " + file.string());
  std::vector<png_byte> row;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    std::fclose(fp);
    throw DatasetFormatError("corrupt view image " + file.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  if (png_get_bit_depth(png, info) != 8 ||
      png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw DatasetFormatError("unexpected pixel format in " + file.string());
  }
  v.width = static_cast<int>(png_get_image_width(png, info));
  v.height = static_cast<int>(png_get_image_height(png, info));
  v.rgb.assign(static_cast<size_t>(v.width) * v.height * 3, 0.0f);
  row.resize(static_cast<size_t>(v.width) * 3);
  for (int y = 0; y < v.height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < v.width * 3; ++x)
      v.rgb[static_cast<size_t>(y * v.width * 3 + x)] =
          static_cast<float>(row[static_cast<size_t>(x)]) / 255.0f;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
}

// ---- poses ------------------------------------------------------------------

void write_pose_bin(const fs::path& file, const CameraPose& pose) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      float f = pose.world_to_cam(r, c);
      out.write(reinterpret_cast<const char*>(&f), 4);
    }
}

CameraPose read_pose_bin(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DatasetFormatError("missing pose file " + file.string());
  if (fs::file_size(file) != 64)
    throw DatasetFormatError("pose file must be 16 floats: " + file.string());
  CameraPose pose;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      float f = 0;
      in.read(reinterpret_cast<char*>(&f), 4);
      pose.world_to_cam(r, c) = f;
    }
  return pose;
}

// ---- json -------------------------------------------------------------------

namespace {

json vec3_json(const Eigen::Vector3f& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3f json_vec3(const json& j) {
  return {j.at(0).get<float>(), j.at(1).get<float>(), j.at(2).get<float>()};
}

json scene_json(const SceneGraph& s) {
  json j;
  j["seed"] = s.seed;
  j["bounds"] = {{"lo", vec3_json(s.bounds.lo)}, {"hi", vec3_json(s.bounds.hi)}};
  j["objects"] = json::array();
  for (const auto& o : s.objects) {
    j["objects"].push_back({{"id", o.id},
                            {"category", to_string(o.category)},
                            {"lo", vec3_json(o.box.lo)},
                            {"hi", vec3_json(o.box.hi)},
                            {"color", vec3_json(o.color)},
                            {"color_name", o.color_name},
                            {"complex_structure", o.complex_structure}});
  }
  j["surfaces"] = json::array();
  for (const auto& sf : s.surfaces) {
    j["surfaces"].push_back(
        {{"id", sf.id},
         {"kind", to_string(sf.kind)},
         {"plane", json::array({sf.plane.x(), sf.plane.y(), sf.plane.z(), sf.plane.w()})},
         {"origin", vec3_json(sf.origin)},
         {"edge_u", vec3_json(sf.edge_u)},
         {"edge_v", vec3_json(sf.edge_v)},
         {"color", vec3_json(sf.color)},
         {"color_name", sf.color_name},
         {"textureless", sf.textureless},
         {"hole", json::array({sf.hole[0], sf.hole[1], sf.hole[2], sf.hole[3]})}});
  }
  return j;
}

SceneGraph scene_from_json(const json& j) {
  SceneGraph s;
  s.seed = j.at("seed").get<uint64_t>();
  s.bounds.lo = json_vec3(j.at("bounds").at("lo"));
  s.bounds.hi = json_vec3(j.at("bounds").at("hi"));
  for (const auto& jo : j.at("objects")) {
    ObjectSpec o;
    o.id = jo.at("id").get<int>();
    o.category = category_from_string(jo.at("category").get<std::string>());
    o.box.lo = json_vec3(jo.at("lo"));
    o.box.hi = json_vec3(jo.at("hi"));
    o.color = json_vec3(jo.at("color"));
    o.color_name = jo.at("color_name").get<std::string>();
    o.complex_structure = jo.at("complex_structure").get<bool>();
    s.objects.push_back(std::move(o));
  }
  for (const auto& js : j.at("surfaces")) {
    SurfaceSpec sf;
    sf.id = js.at("id").get<int>();
    sf.kind = surface_kind_from_string(js.at("kind").get<std::string>());
    for (int i = 0; i < 4; ++i) sf.plane[i] = js.at("plane").at(i).get<float>();
    sf.origin = json_vec3(js.at("origin"));
    sf.edge_u = json_vec3(js.at("edge_u"));
    sf.edge_v = json_vec3(js.at("edge_v"));
    sf.color = json_vec3(js.at("color"));
    sf.color_name = js.at("color_name").get<std::string>();
    sf.textureless = js.at("textureless").get<bool>();
    for (int i = 0; i < 4; ++i) sf.hole[i] = js.at("hole").at(i).get<float>();
    s.surfaces.push_back(std::move(sf));
  }
  return s;
}

json qa_json(const QAItem& q) {
  return {{"task", to_string(q.task)},
          {"question", q.question},
          {"answer", q.answer},
          {"support_ids", q.support_ids},
          {"targets_degraded", q.targets_degraded}};
}

QAItem qa_from_json(const json& j) {
  QAItem q;
  q.task = task_from_string(j.at("task").get<std::string>());
  q.question = j.at("question").get<std::string>();
  q.answer = j.at("answer").get<std::string>();
  q.support_ids = j.at("support_ids").get<std::vector<int>>();
  q.targets_degraded = j.at("targets_degraded").get<bool>();
  return q;
}

json load_json_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DatasetFormatError("missing file " + file.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DatasetFormatError("corrupt json in " + file.string() + ": " + e.what());
  }
  return j;
}

void store_json_file(const fs::path& file, const json& j) {
  std::ofstream out(file);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  out << j.dump(2) << "\n";
}

}  // namespace

// ---- scene directories ------------------------------------------------------

void write_scene_dir(const fs::path& dir, const SceneSample& s) {
  fs::create_directories(dir / "views");
  store_json_file(dir / "scene.json", scene_json(s.scene));
  {
    std::ofstream out(dir / "qa.jsonl");
    if (!out) throw IoError("cannot open " + (dir / "qa.jsonl").string());
    for (const auto& q : s.qa) out << qa_json(q).dump() << "\n";
  }
  write_cloud_bin(dir / "cloud_clean.bin", s.cloud_clean);
  write_cloud_bin(dir / "cloud_degraded.bin", s.cloud_degraded);
  for (size_t i = 0; i < s.views.size(); ++i) {
    write_view_png(dir / "views" / (std::to_string(i) + ".png"), s.views[i]);
    write_pose_bin(dir / "views" / (std::to_string(i) + ".pose"),
                   s.views[i].pose);
  }
}

SceneSample read_scene_dir(const fs::path& dir) {
  SceneSample s;
  s.scene = scene_from_json(load_json_file(dir / "scene.json"));
  {
    fs::path qp = dir / "qa.jsonl";
    std::ifstream in(qp);
    if (!in) throw DatasetFormatError("missing file " + qp.string());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        s.qa.push_back(qa_from_json(json::parse(line)));
      } catch (const json::exception& e) {
        throw DatasetFormatError("corrupt json in " + qp.string() + ": " + e.what());
      }
    }
  }
  s.cloud_clean = read_cloud_bin(dir / "cloud_clean.bin");
  s.cloud_degraded = read_cloud_bin(dir / "cloud_degraded.bin");
  for (int i = 0;; ++i) {
    fs::path img = dir / "views" / (std::to_string(i) + ".png");
    if (!fs::exists(img)) break;
    View v;
    read_view_png(img, v);
    v.pose = read_pose_bin(dir / "views" / (std::to_string(i) + ".pose"));
    s.views.push_back(std::move(v));
  }
  return s;
}

// ---- datasets ---------------------------------------------------------------

std::string gen_config_hash(const GenParams& p, uint64_t seed) {
  Fnv1a h;
  h.update_pod(seed);
  h.update_pod(p.n_scenes);
  h.update_pod(p.val_frac);
  h.update_pod(p.test_frac);
  h.update_pod(p.scene.room_min);
  h.update_pod(p.scene.room_max);
  h.update_pod(p.scene.objects_min);
  h.update_pod(p.scene.objects_max);
  for (const auto& [c, n] : p.scene.fixed_counts) {
    h.update(to_string(c));
    h.update_pod(n);
  }
  h.update_pod(p.scene.complex_prob);
  h.update_pod(p.scene.wall_textureless_prob);
  h.update_pod(p.scene.floor_textureless_prob);
  h.update_pod(p.scene.with_window);
  h.update_pod(p.qa.count_q);
  h.update_pod(p.qa.color_q);
  h.update_pod(p.qa.exist_q);
  h.update_pod(p.qa.spatial_q);
  h.update_pod(p.qa.caption_q);
  h.update_pod(p.sample.n_points);
  h.update_pod(p.sample.n_views);
  h.update_pod(p.sample.image_size);
  h.update_pod(p.sample.void_prob);
  h.update_pod(p.sample.jitter_sigma);
  return hex64(h.digest());
}

namespace {

DatasetManifest build_manifest(const GenParams& p, uint64_t seed, int n_views) {
  if (p.n_scenes < 1) throw InvalidConfig("n_scenes must be >= 1");
  if (p.val_frac < 0 || p.test_frac < 0 || p.val_frac + p.test_frac >= 1.0)
    throw InvalidConfig("split fractions must be >= 0 and sum below 1");
  DatasetManifest m;
  m.seed = seed;
  m.n_scenes = p.n_scenes;
  m.n_views = n_views;
  m.config_hash = gen_config_hash(p, seed);
  m.sample = p.sample;
  for (int i = 0; i < p.n_scenes; ++i)
    m.scene_dirs.push_back("scene_" + std::to_string(i));

  std::vector<int> order(static_cast<size_t>(p.n_scenes));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, "split");
  std::shuffle(order.begin(), order.end(), rng);
  int n_test = static_cast<int>(std::floor(p.test_frac * p.n_scenes));
  int n_val = static_cast<int>(std::floor(p.val_frac * p.n_scenes));
  m.test_idx.assign(order.begin(), order.begin() + n_test);
  m.val_idx.assign(order.begin() + n_test, order.begin() + n_test + n_val);
  m.train_idx.assign(order.begin() + n_test + n_val, order.end());
  std::sort(m.test_idx.begin(), m.test_idx.end());
  std::sort(m.val_idx.begin(), m.val_idx.end());
  std::sort(m.train_idx.begin(), m.train_idx.end());
  if (m.train_idx.empty()) throw InvalidConfig("no scenes left for training");
  return m;
}

void store_manifest(const fs::path& root, const DatasetManifest& m) {
  json j;
  j["format_version"] = m.format_version;
  j["seed"] = m.seed;
  j["n_scenes"] = m.n_scenes;
  j["n_views"] = m.n_views;
  j["config_hash"] = m.config_hash;
  j["scene_dirs"] = m.scene_dirs;
  j["splits"] = {{"train", m.train_idx}, {"val", m.val_idx}, {"test", m.test_idx}};
  j["sample"] = {{"n_points", m.sample.n_points},
                 {"n_views", m.sample.n_views},
                 {"image_size", m.sample.image_size},
                 {"void_prob", m.sample.void_prob},
                 {"jitter_sigma", m.sample.jitter_sigma}};
  store_json_file(root / "manifest.json", j);
}

}  // namespace

DatasetManifest write_dataset(const std::vector<SceneSample>& samples,
                              const fs::path& root, const GenParams& p,
                              uint64_t seed) {
  if (samples.empty()) throw InvalidConfig("no samples to write");
  if (static_cast<int>(samples.size()) != p.n_scenes)
    throw InvalidConfig("sample count does not match n_scenes");
  fs::create_directories(root);
  DatasetManifest m =
      build_manifest(p, seed, static_cast<int>(samples[0].views.size()));
  for (size_t i = 0; i < samples.size(); ++i)
    write_scene_dir(root / m.scene_dirs[i], samples[i]);
  store_manifest(root, m);
  return m;
}

DatasetManifest generate_dataset(const fs::path& root, const GenParams& p,
                                 uint64_t seed) {
  fs::create_directories(root);
  DatasetManifest m = build_manifest(p, seed, p.sample.n_views);
  int workers = std::max(1, std::min(p.workers, p.n_scenes));
  std::atomic<int> next{0};
  std::mutex err_mu;
  std::exception_ptr first_err;
  auto work = [&]() {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= p.n_scenes) return;
      try {
        SceneSample s = generate_sample(p.scene, p.qa, p.sample,
                                        derive_seed(seed, "scene",
                                                    static_cast<uint64_t>(i)));
        write_scene_dir(root / m.scene_dirs[static_cast<size_t>(i)], s);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!first_err) first_err = std::current_exception();
        next.store(p.n_scenes);  // stop the pool
        return;
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (first_err) std::rethrow_exception(first_err);
  store_manifest(root, m);
  return m;
}

DatasetManifest read_manifest(const fs::path& root) {
  json j = load_json_file(root / "manifest.json");
  DatasetManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    m.seed = j.at("seed").get<uint64_t>();
    m.n_scenes = j.at("n_scenes").get<int>();
    m.n_views = j.at("n_views").get<int>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.scene_dirs = j.at("scene_dirs").get<std::vector<std::string>>();
    m.train_idx = j.at("splits").at("train").get<std::vector<int>>();
    m.val_idx = j.at("splits").at("val").get<std::vector<int>>();
    m.test_idx = j.at("splits").at("test").get<std::vector<int>>();
    m.sample.n_points = j.at("sample").at("n_points").get<int>();
    m.sample.n_views = j.at("sample").at("n_views").get<int>();
    m.sample.image_size = j.at("sample").at("image_size").get<int>();
    m.sample.void_prob = j.at("sample").at("void_prob").get<double>();
    m.sample.jitter_sigma = j.at("sample").at("jitter_sigma").get<double>();
  } catch (const json::exception& e) {
    throw DatasetFormatError("bad manifest in " + root.string() + ": " + e.what());
  }
  if (static_cast<int>(m.scene_dirs.size()) != m.n_scenes)
    throw DatasetFormatError("manifest scene count mismatch in " +
                             (root / "manifest.json").string());
  return m;
}

SceneSample read_dataset_scene(const fs::path& root, int index) {
  DatasetManifest m = read_manifest(root);
  if (index < 0 || index >= m.n_scenes)
    throw InvalidConfig("scene index out of range");
  SceneSample s = read_scene_dir(root / m.scene_dirs[static_cast<size_t>(index)]);
  if (static_cast<int>(s.views.size()) != m.n_views)
    throw DatasetFormatError(
        "view count mismatch vs manifest in " +
        (root / m.scene_dirs[static_cast<size_t>(index)]).string());
  return s;
}

std::vector<SceneSample> read_dataset(const fs::path& root) {
  DatasetManifest m = read_manifest(root);
  std::vector<SceneSample> out;
  out.reserve(m.scene_dirs.size());
  for (const auto& d : m.scene_dirs) {
    SceneSample s = read_scene_dir(root / d);
    if (static_cast<int>(s.views.size()) != m.n_views)
      throw DatasetFormatError("view count mismatch vs manifest in " +
                               (root / d).string());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace argus
