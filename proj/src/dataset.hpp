#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "scene.hpp"

namespace argus {

// On-disk layout, all little-endian:
//   <root>/manifest.json
//   <root>/scene_<k>/scene.json
//   <root>/scene_<k>/qa.jsonl           one {task, question, answer, ...} per line
//   <root>/scene_<k>/cloud_clean.bin    uint32 N, N*3 f32 xyz, N*3 f32 rgb, N i32 source
//   <root>/scene_<k>/cloud_degraded.bin same format
//   <root>/scene_<k>/views/<i>.png      8-bit RGB
//   <root>/scene_<k>/views/<i>.pose     16 f32, row-major world-to-camera
// Image channels are quantized to k/255 before writing, so the PNG byte round
// trip is exact and read(write(s)) reproduces every float bit.

struct GenParams {
  SceneConfig scene;
  QAConfig qa;
  SampleParams sample;
  int n_scenes = 16;
  double val_frac = 0.2;
  double test_frac = 0.2;
  int workers = 1;
};

struct DatasetManifest {
  int format_version = 1;
  uint64_t seed = 0;
  int n_scenes = 0;
  int n_views = 0;
  std::string config_hash;
  std::vector<std::string> scene_dirs;
  std::vector<int> train_idx, val_idx, test_idx;
  SampleParams sample;
};

void write_cloud_bin(const std::filesystem::path& file, const PointCloud& pc);
PointCloud read_cloud_bin(const std::filesystem::path& file);

void write_view_png(const std::filesystem::path& file, const View& v);
void read_view_png(const std::filesystem::path& file, View& v);

void write_pose_bin(const std::filesystem::path& file, const CameraPose& pose);
CameraPose read_pose_bin(const std::filesystem::path& file);

void write_scene_dir(const std::filesystem::path& dir, const SceneSample& s);
SceneSample read_scene_dir(const std::filesystem::path& dir);

std::string gen_config_hash(const GenParams& p, uint64_t seed);

// Writes already-generated samples plus a manifest.
DatasetManifest write_dataset(const std::vector<SceneSample>& samples,
                              const std::filesystem::path& root,
                              const GenParams& p, uint64_t seed);

// Generates p.n_scenes samples (scene k seeded from derive_seed(seed, "scene", k))
// and writes them, one scene per worker thread.
DatasetManifest generate_dataset(const std::filesystem::path& root,
                                 const GenParams& p, uint64_t seed);

DatasetManifest read_manifest(const std::filesystem::path& root);

// Reads everything back and validates the manifest against the files on disk.
std::vector<SceneSample> read_dataset(const std::filesystem::path& root);
SceneSample read_dataset_scene(const std::filesystem::path& root, int index);

}  // namespace argus
