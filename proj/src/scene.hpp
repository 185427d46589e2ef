#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace argus {

// Synthetic room scenes: axis-aligned boxes on a floor inside a walled room,
// plus flat room surfaces. Everything lives in a y-up right-handed world
// frame: +x right, +y up, +z forward; "left of" compares x centers.

enum class Category { chair, table, lamp, window, sofa, shelf };
enum class SurfaceKind { floor, wall, window_plane };
enum class Task { count, color, exist, spatial, caption };

const char* to_string(Category c);
const char* plural(Category c);
const char* to_string(SurfaceKind k);
const char* to_string(Task t);
Category category_from_string(const std::string& s);
SurfaceKind surface_kind_from_string(const std::string& s);
Task task_from_string(const std::string& s);

// Named palette shared by objects and surfaces. Entries are spread out in RGB
// so the +-0.1 degradation noise never flips the nearest palette entry.
struct PaletteEntry {
  const char* name;
  Eigen::Vector3f rgb;
};
const std::vector<PaletteEntry>& palette();
int nearest_palette_index(const Eigen::Vector3f& rgb);

struct Box {
  Eigen::Vector3f lo = Eigen::Vector3f::Zero();
  Eigen::Vector3f hi = Eigen::Vector3f::Zero();

  Eigen::Vector3f center() const { return 0.5f * (lo + hi); }
  Eigen::Vector3f extent() const { return hi - lo; }
  bool contains(const Eigen::Vector3f& p, float eps = 1e-4f) const {
    return (p.array() >= lo.array() - eps).all() &&
           (p.array() <= hi.array() + eps).all();
  }
  bool intersects(const Box& o, float margin = 0.0f) const {
    return (lo.array() - margin < o.hi.array()).all() &&
           (o.lo.array() - margin < hi.array()).all();
  }
  float surface_area() const {
    Eigen::Vector3f e = extent();
    return 2.0f * (e.x() * e.y() + e.x() * e.z() + e.y() * e.z());
  }
};

struct ObjectSpec {
  int id = 0;
  Category category = Category::chair;
  Box box;
  Eigen::Vector3f color = Eigen::Vector3f::Zero();
  std::string color_name;
  bool complex_structure = false;  // degradation jitter target
};

// Flat rectangular surface: plane coefficients (unit normal; a,b,c,d with
// a x + b y + c z + d = 0) plus the rectangle used for area sampling,
// origin + s * edge_u + t * edge_v for s,t in [0,1]. A wall hosting a window
// records the window's cut-out in its (s, t) coordinates so no wall points
// are sampled behind the pane.
struct SurfaceSpec {
  int id = 0;  // global source id (objects come first)
  SurfaceKind kind = SurfaceKind::wall;
  Eigen::Vector4f plane = Eigen::Vector4f::Zero();
  Eigen::Vector3f origin = Eigen::Vector3f::Zero();
  Eigen::Vector3f edge_u = Eigen::Vector3f::Zero();
  Eigen::Vector3f edge_v = Eigen::Vector3f::Zero();
  Eigen::Vector3f color = Eigen::Vector3f::Zero();
  std::string color_name;
  bool textureless = false;  // degradation void target
  // hole in (s, t) space: {s0, t0, s1, t1}; zero area means none
  float hole[4] = {0, 0, 0, 0};

  float area() const {
    float a = edge_u.cross(edge_v).norm();
    float hole_frac = (hole[2] - hole[0]) * (hole[3] - hole[1]);
    return a * (1.0f - hole_frac);
  }
};

struct SceneGraph {
  uint64_t seed = 0;
  Box bounds;  // the room
  std::vector<ObjectSpec> objects;
  std::vector<SurfaceSpec> surfaces;

  int source_count() const {
    return static_cast<int>(objects.size() + surfaces.size());
  }
  // source ids: objects 0..n-1, then surfaces n..n+m-1
  bool source_is_object(int sid) const {
    return sid >= 0 && sid < static_cast<int>(objects.size());
  }
  const SurfaceSpec& surface_by_source(int sid) const {
    return surfaces.at(sid - static_cast<int>(objects.size()));
  }
};

struct PointCloud {
  std::vector<Eigen::Vector3f> xyz;
  std::vector<Eigen::Vector3f> rgb;
  std::vector<int32_t> source_id;

  size_t size() const { return xyz.size(); }
};

struct CameraPose {
  // world-to-camera, rows: right / up / forward then the affine translation;
  // serialized row-major.
  Eigen::Matrix4f world_to_cam = Eigen::Matrix4f::Identity();
};

struct View {
  int width = 0, height = 0;
  std::vector<float> rgb;  // H * W * 3, row-major, values quantized to k/255
  CameraPose pose;

  float at(int y, int x, int c) const {
    return rgb[static_cast<size_t>((y * width + x) * 3 + c)];
  }
};

struct QAItem {
  Task task = Task::count;
  std::string question;
  std::string answer;
  std::vector<int> support_ids;  // sources the answer depends on
  bool targets_degraded = false;
};

struct SceneSample {
  SceneGraph scene;
  PointCloud cloud_clean;
  PointCloud cloud_degraded;
  std::vector<View> views;
  std::vector<QAItem> qa;
};

struct SceneConfig {
  float room_min = 4.0f;
  float room_max = 7.0f;
  int objects_min = 3;
  int objects_max = 6;
  // when non-empty, exact per-category object counts override the random mix
  std::map<Category, int> fixed_counts;
  double complex_prob = 0.35;
  double wall_textureless_prob = 0.5;
  double floor_textureless_prob = 0.5;
  bool with_window = true;
};

struct QAConfig {
  int count_q = 2;
  int color_q = 2;
  int exist_q = 2;
  int spatial_q = 1;
  int caption_q = 1;
};

SceneGraph generate_scene(const SceneConfig& cfg, uint64_t seed);
PointCloud sample_point_cloud(const SceneGraph& scene, int n_points, uint64_t seed);
PointCloud degrade_point_cloud(const PointCloud& cloud, const SceneGraph& scene,
                               double void_prob, double jitter_sigma,
                               uint64_t seed);
std::vector<View> render_views(const SceneGraph& scene, const PointCloud& cloud,
                               int n_views, int image_size, uint64_t seed);
std::vector<QAItem> generate_qa(const SceneGraph& scene, const QAConfig& cfg,
                                uint64_t seed);

// Camera helpers, exposed for tests and the pose-swap checks.
CameraPose camera_pose(const Eigen::Vector3f& eye, const Eigen::Vector3f& target);
std::vector<CameraPose> camera_ring(const SceneGraph& scene, int n_views,
                                    uint64_t seed);
// focal length in pixels for the fixed 60 degree vertical fov
float focal_px(int image_size);

// Deterministic 32-token scene description; the text analog of the projected
// scene queries, used for stub pretraining and for caption answers.
std::vector<std::string> describe_scene_tokens(const SceneGraph& scene);
std::string caption_answer(const SceneGraph& scene);

struct SampleParams {
  int n_points = 2048;
  int n_views = 16;
  int image_size = 64;
  double void_prob = 0.5;
  double jitter_sigma = 0.02;
};

SceneSample generate_sample(const SceneConfig& scfg, const QAConfig& qcfg,
                            const SampleParams& sp, uint64_t seed);

}  // namespace argus
