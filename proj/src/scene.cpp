#include "scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace argus {

const char* to_string(Category c) {
  switch (c) {
    case Category::chair: return "chair";
    case Category::table: return "table";
    case Category::lamp: return "lamp";
    case Category::window: return "window";
    case Category::sofa: return "sofa";
    case Category::shelf: return "shelf";
  }
  return "?";
}

const char* plural(Category c) {
  switch (c) {
    case Category::chair: return "chairs";
    case Category::table: return "tables";
    case Category::lamp: return "lamps";
    case Category::window: return "windows";
    case Category::sofa: return "sofas";
    case Category::shelf: return "shelves";
  }
  return "?";
}

const char* to_string(SurfaceKind k) {
  switch (k) {
    case SurfaceKind::floor: return "floor";
    case SurfaceKind::wall: return "wall";
    case SurfaceKind::window_plane: return "window_plane";
  }
  return "?";
}

const char* to_string(Task t) {
  switch (t) {
    case Task::count: return "count";
    case Task::color: return "color";
    case Task::exist: return "exist";
    case Task::spatial: return "spatial";
    case Task::caption: return "caption";
  }
  return "?";
}

static const std::array<Category, 6> kAllCategories = {
    Category::chair, Category::table, Category::lamp,
    Category::window, Category::sofa, Category::shelf};

// categories the random mix samples; window presence comes from the wall pane
static const std::array<Category, 5> kPlaceable = {
    Category::chair, Category::table, Category::lamp, Category::sofa,
    Category::shelf};

Category category_from_string(const std::string& s) {
  for (Category c : kAllCategories)
    if (s == to_string(c) || s == plural(c)) return c;
  throw InvalidConfig("unknown category: " + s);
}

SurfaceKind surface_kind_from_string(const std::string& s) {
  if (s == "floor") return SurfaceKind::floor;
  if (s == "wall") return SurfaceKind::wall;
  if (s == "window_plane") return SurfaceKind::window_plane;
  throw InvalidConfig("unknown surface kind: " + s);
}

Task task_from_string(const std::string& s) {
  for (Task t : {Task::count, Task::color, Task::exist, Task::spatial, Task::caption})
    if (s == to_string(t)) return t;
  throw InvalidConfig("unknown task: " + s);
}

const std::vector<PaletteEntry>& palette() {
  static const std::vector<PaletteEntry> kPalette = {
      {"red", {0.90f, 0.10f, 0.10f}},    {"green", {0.10f, 0.80f, 0.15f}},
      {"blue", {0.15f, 0.20f, 0.90f}},   {"yellow", {0.95f, 0.90f, 0.10f}},
      {"white", {0.95f, 0.95f, 0.95f}},  {"black", {0.05f, 0.05f, 0.05f}},
      {"orange", {0.95f, 0.50f, 0.05f}}, {"purple", {0.60f, 0.10f, 0.80f}},
  };
  return kPalette;
}

int nearest_palette_index(const Eigen::Vector3f& rgb) {
  const auto& pal = palette();
  int best = 0;
  float best_d = std::numeric_limits<float>::max();
  for (size_t i = 0; i < pal.size(); ++i) {
    float d = (pal[i].rgb - rgb).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

// ---- scene generation -------------------------------------------------------

namespace {

struct SizeRange {
  float w0, w1, h0, h1, d0, d1;
};

SizeRange size_range(Category c) {
  switch (c) {
    case Category::chair: return {0.45f, 0.60f, 0.80f, 1.00f, 0.45f, 0.60f};
    case Category::table: return {1.00f, 1.60f, 0.70f, 0.80f, 0.70f, 1.00f};
    case Category::lamp: return {0.25f, 0.35f, 1.20f, 1.60f, 0.25f, 0.35f};
    case Category::window: return {1.00f, 1.40f, 0.90f, 1.20f, 0.06f, 0.10f};
    case Category::sofa: return {1.50f, 2.00f, 0.75f, 0.90f, 0.80f, 1.00f};
    case Category::shelf: return {0.80f, 1.20f, 1.50f, 2.00f, 0.30f, 0.40f};
  }
  return {0.5f, 0.5f, 0.5f, 0.5f, 0.5f, 0.5f};
}

int pick_color(Rng& rng) {
  return static_cast<int>(uniform_int(rng, 0, static_cast<int64_t>(palette().size()) - 1));
}

constexpr float kWallMargin = 0.2f;
constexpr float kObjectGap = 0.05f;

}  // namespace

SceneGraph generate_scene(const SceneConfig& cfg, uint64_t seed) {
  if (cfg.room_min < 2.0f || cfg.room_max > 8.0f || cfg.room_min > cfg.room_max)
    throw InvalidConfig("room dimensions must lie in [2, 8] meters");
  if (cfg.objects_min < 1 || cfg.objects_max > 12 ||
      cfg.objects_min > cfg.objects_max)
    throw InvalidConfig("object count range must lie in [1, 12]");
  int fixed_total = 0;
  for (const auto& [c, n] : cfg.fixed_counts) {
    if (n < 0) throw InvalidConfig("negative fixed count");
    fixed_total += n;
  }
  if (!cfg.fixed_counts.empty() && (fixed_total < 1 || fixed_total > 12))
    throw InvalidConfig("fixed counts must total 1..12");

  SceneGraph scene;
  scene.seed = seed;

  Rng room_rng = make_rng(seed, "room");
  float W = static_cast<float>(uniform<double>(room_rng, cfg.room_min, cfg.room_max));
  float D = static_cast<float>(uniform<double>(room_rng, cfg.room_min, cfg.room_max));
  float H = static_cast<float>(uniform<double>(room_rng, 2.6, 3.2));
  scene.bounds.lo = {0, 0, 0};
  scene.bounds.hi = {W, H, D};

  // object list
  std::vector<Category> wanted;
  if (!cfg.fixed_counts.empty()) {
    for (const auto& [c, n] : cfg.fixed_counts)
      for (int i = 0; i < n; ++i) wanted.push_back(c);
  } else {
    Rng mix_rng = make_rng(seed, "mix");
    int n = static_cast<int>(uniform_int(mix_rng, cfg.objects_min, cfg.objects_max));
    for (int i = 0; i < n; ++i)
      wanted.push_back(kPlaceable[static_cast<size_t>(
          uniform_int(mix_rng, 0, static_cast<int64_t>(kPlaceable.size()) - 1))]);
  }

  Rng place_rng = make_rng(seed, "place");
  int next_id = 0;
  for (Category cat : wanted) {
    SizeRange sr = size_range(cat);
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      float w = static_cast<float>(uniform<double>(place_rng, sr.w0, sr.w1));
      float h = static_cast<float>(uniform<double>(place_rng, sr.h0, sr.h1));
      float d = static_cast<float>(uniform<double>(place_rng, sr.d0, sr.d1));
      float x0 = kWallMargin, x1 = W - kWallMargin - w;
      float z0 = kWallMargin, z1 = D - kWallMargin - d;
      if (x1 <= x0 || z1 <= z0) continue;
      float x = static_cast<float>(uniform<double>(place_rng, x0, x1));
      float z = static_cast<float>(uniform<double>(place_rng, z0, z1));
      Box box;
      box.lo = {x, 0.0f, z};
      box.hi = {x + w, h, z + d};
      bool clash = false;
      for (const auto& o : scene.objects)
        if (box.intersects(o.box, kObjectGap)) {
          clash = true;
          break;
        }
      if (clash) continue;
      ObjectSpec obj;
      obj.id = next_id++;
      obj.category = cat;
      obj.box = box;
      int ci = pick_color(place_rng);
      obj.color = palette()[ci].rgb;
      obj.color_name = palette()[ci].name;
      obj.complex_structure = uniform<double>(place_rng) < cfg.complex_prob;
      scene.objects.push_back(std::move(obj));
      placed = true;
    }
    if (!placed)
      throw PlacementError("could not place a " + std::string(to_string(cat)) +
                           " after 1000 attempts");
  }

  // surfaces: floor, four walls, optionally a window pane on one wall
  Rng surf_rng = make_rng(seed, "surf");
  int wall_color = pick_color(surf_rng);
  int floor_color = pick_color(surf_rng);
  int window_color = pick_color(surf_rng);
  while (window_color == wall_color) window_color = pick_color(surf_rng);
  bool walls_textureless = uniform<double>(surf_rng) < cfg.wall_textureless_prob;
  bool floor_textureless = uniform<double>(surf_rng) < cfg.floor_textureless_prob;

  int sid = next_id;  // surfaces continue the source id range
  auto add_surface = [&](SurfaceKind kind, const Eigen::Vector3f& origin,
                         const Eigen::Vector3f& eu, const Eigen::Vector3f& ev,
                         const Eigen::Vector3f& normal, float plane_d,
                         int color_idx, bool textureless) -> SurfaceSpec& {
    SurfaceSpec s;
    s.id = sid++;
    s.kind = kind;
    s.plane << normal.x(), normal.y(), normal.z(), plane_d;
    s.origin = origin;
    s.edge_u = eu;
    s.edge_v = ev;
    s.color = palette()[color_idx].rgb;
    s.color_name = palette()[color_idx].name;
    s.textureless = textureless;
    scene.surfaces.push_back(std::move(s));
    return scene.surfaces.back();
  };

  add_surface(SurfaceKind::floor, {0, 0, 0}, {W, 0, 0}, {0, 0, D}, {0, 1, 0}, 0,
              floor_color, floor_textureless);
  add_surface(SurfaceKind::wall, {0, 0, 0}, {0, 0, D}, {0, H, 0}, {1, 0, 0}, 0,
              wall_color, walls_textureless);
  add_surface(SurfaceKind::wall, {W, 0, 0}, {0, 0, D}, {0, H, 0}, {-1, 0, 0}, W,
              wall_color, walls_textureless);
  add_surface(SurfaceKind::wall, {0, 0, 0}, {W, 0, 0}, {0, H, 0}, {0, 0, 1}, 0,
              wall_color, walls_textureless);
  add_surface(SurfaceKind::wall, {0, 0, D}, {W, 0, 0}, {0, H, 0}, {0, 0, -1}, D,
              wall_color, walls_textureless);

  if (cfg.with_window) {
    // host wall index within scene.surfaces (1..4)
    int host = 1 + static_cast<int>(uniform_int(surf_rng, 0, 3));
    SurfaceSpec& wall = scene.surfaces[static_cast<size_t>(host)];
    float wall_w = wall.edge_u.norm(), wall_h = wall.edge_v.norm();
    float win_w = static_cast<float>(uniform<double>(surf_rng, 0.9, 1.4));
    float win_h = static_cast<float>(uniform<double>(surf_rng, 0.8, 1.1));
    win_w = std::min(win_w, wall_w - 0.8f);
    win_h = std::min(win_h, wall_h - 1.6f);
    float s0 = static_cast<float>(
        uniform<double>(surf_rng, 0.3, wall_w - 0.3 - win_w)) / wall_w;
    float t0 = static_cast<float>(
        uniform<double>(surf_rng, 1.0, wall_h - 0.3 - win_h)) / wall_h;
    float s1 = s0 + win_w / wall_w;
    float t1 = t0 + win_h / wall_h;
    wall.hole[0] = s0;
    wall.hole[1] = t0;
    wall.hole[2] = s1;
    wall.hole[3] = t1;

    SurfaceSpec& win = add_surface(
        SurfaceKind::window_plane, wall.origin + s0 * wall.edge_u + t0 * wall.edge_v,
        (s1 - s0) * wall.edge_u, (t1 - t0) * wall.edge_v,
        wall.plane.head<3>(), wall.plane.w(), window_color, /*textureless=*/true);
    (void)win;
  }

  // a scene must carry at least one void target
  bool any_textureless = false;
  for (const auto& s : scene.surfaces) any_textureless |= s.textureless;
  if (!any_textureless) scene.surfaces.front().textureless = true;

  return scene;
}

// ---- point sampling ---------------------------------------------------------

namespace {

Eigen::Vector3f sample_box_surface(const Box& b, Rng& rng) {
  Eigen::Vector3f e = b.extent();
  // face areas: x-faces, y-faces, z-faces (two each)
  float ax = e.y() * e.z(), ay = e.x() * e.z(), az = e.x() * e.y();
  std::array<float, 6> faces = {ax, ax, ay, ay, az, az};
  float total = 2 * (ax + ay + az);
  float r = static_cast<float>(uniform<double>(rng, 0, total));
  int f = 0;
  for (; f < 5; ++f) {
    if (r < faces[static_cast<size_t>(f)]) break;
    r -= faces[static_cast<size_t>(f)];
  }
  float u = static_cast<float>(uniform<double>(rng));
  float v = static_cast<float>(uniform<double>(rng));
  Eigen::Vector3f p = b.lo;
  switch (f) {
    case 0: p += Eigen::Vector3f(0, u * e.y(), v * e.z()); break;
    case 1: p += Eigen::Vector3f(e.x(), u * e.y(), v * e.z()); break;
    case 2: p += Eigen::Vector3f(u * e.x(), 0, v * e.z()); break;
    case 3: p += Eigen::Vector3f(u * e.x(), e.y(), v * e.z()); break;
    case 4: p += Eigen::Vector3f(u * e.x(), v * e.y(), 0); break;
    default: p += Eigen::Vector3f(u * e.x(), v * e.y(), e.z()); break;
  }
  return p;
}

Eigen::Vector3f sample_surface(const SurfaceSpec& s, Rng& rng) {
  for (;;) {
    float u = static_cast<float>(uniform<double>(rng));
    float v = static_cast<float>(uniform<double>(rng));
    bool in_hole = u >= s.hole[0] && u < s.hole[2] && v >= s.hole[1] && v < s.hole[3];
    if (!in_hole) return s.origin + u * s.edge_u + v * s.edge_v;
  }
}

}  // namespace

PointCloud sample_point_cloud(const SceneGraph& scene, int n_points, uint64_t seed) {
  if (n_points < 64) throw InvalidConfig("n_points must be >= 64");

  // area-proportional allocation with largest remainders so the counts sum
  // exactly to n_points
  const int n_src = scene.source_count();
  std::vector<double> area(static_cast<size_t>(n_src), 0.0);
  for (const auto& o : scene.objects) area[static_cast<size_t>(o.id)] = o.box.surface_area();
  for (const auto& s : scene.surfaces) area[static_cast<size_t>(s.id)] = s.area();
  double total = std::accumulate(area.begin(), area.end(), 0.0);

  std::vector<int> alloc(static_cast<size_t>(n_src), 0);
  std::vector<std::pair<double, int>> rema;
  int assigned = 0;
  for (int i = 0; i < n_src; ++i) {
    double exact = n_points * area[static_cast<size_t>(i)] / total;
    alloc[static_cast<size_t>(i)] = static_cast<int>(std::floor(exact));
    assigned += alloc[static_cast<size_t>(i)];
    rema.push_back({exact - std::floor(exact), i});
  }
  std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int k = 0; k < n_points - assigned; ++k)
    alloc[static_cast<size_t>(rema[static_cast<size_t>(k)].second)] += 1;

  PointCloud pc;
  pc.xyz.reserve(static_cast<size_t>(n_points));
  pc.rgb.reserve(static_cast<size_t>(n_points));
  pc.source_id.reserve(static_cast<size_t>(n_points));
  for (int sid = 0; sid < n_src; ++sid) {
    Rng rng = make_rng(seed, "pts", static_cast<uint64_t>(sid));
    bool is_obj = scene.source_is_object(sid);
    const Eigen::Vector3f color = is_obj
        ? scene.objects[static_cast<size_t>(sid)].color
        : scene.surface_by_source(sid).color;
    for (int k = 0; k < alloc[static_cast<size_t>(sid)]; ++k) {
      Eigen::Vector3f p = is_obj
          ? sample_box_surface(scene.objects[static_cast<size_t>(sid)].box, rng)
          : sample_surface(scene.surface_by_source(sid), rng);
      pc.xyz.push_back(p);
      pc.rgb.push_back(color);
      pc.source_id.push_back(sid);
    }
  }
  return pc;
}

PointCloud degrade_point_cloud(const PointCloud& cloud, const SceneGraph& scene,
                               double void_prob, double jitter_sigma,
                               uint64_t seed) {
  if (void_prob < 0.0 || void_prob > 1.0)
    throw InvalidConfig("void_prob must lie in [0, 1]");
  if (jitter_sigma < 0.0) throw InvalidConfig("jitter_sigma must be >= 0");

  // per-surface void draws use substreams keyed by surface id, so raising
  // void_prob only ever removes more surfaces (same uniforms, wider cut)
  const int n_obj = static_cast<int>(scene.objects.size());
  std::vector<bool> voided(scene.surfaces.size(), false);
  for (size_t j = 0; j < scene.surfaces.size(); ++j) {
    if (!scene.surfaces[j].textureless) continue;
    Rng rng = make_rng(seed, "void", static_cast<uint64_t>(scene.surfaces[j].id));
    voided[j] = uniform<double>(rng) < void_prob;
  }

  std::vector<Rng> jitter_rng;
  jitter_rng.reserve(scene.objects.size());
  for (const auto& o : scene.objects)
    jitter_rng.push_back(make_rng(seed, "jitter", static_cast<uint64_t>(o.id)));

  PointCloud out;
  out.xyz.reserve(cloud.size());
  out.rgb.reserve(cloud.size());
  out.source_id.reserve(cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i) {
    int sid = cloud.source_id[i];
    if (sid >= n_obj) {
      if (voided[static_cast<size_t>(sid - n_obj)]) continue;
      out.xyz.push_back(cloud.xyz[i]);
      out.rgb.push_back(cloud.rgb[i]);
      out.source_id.push_back(sid);
      continue;
    }
    Eigen::Vector3f p = cloud.xyz[i];
    Eigen::Vector3f c = cloud.rgb[i];
    if (scene.objects[static_cast<size_t>(sid)].complex_structure) {
      Rng& rng = jitter_rng[static_cast<size_t>(sid)];
      for (int a = 0; a < 3; ++a)
        p[a] += static_cast<float>(normal<double>(rng, 0.0, jitter_sigma));
      for (int a = 0; a < 3; ++a)
        c[a] = std::clamp(
            c[a] + static_cast<float>(uniform<double>(rng, -0.1, 0.1)), 0.0f, 1.0f);
    }
    out.xyz.push_back(p);
    out.rgb.push_back(c);
    out.source_id.push_back(sid);
  }
  return out;
}

// ---- cameras and rendering --------------------------------------------------

CameraPose camera_pose(const Eigen::Vector3f& eye, const Eigen::Vector3f& target) {
  Eigen::Vector3f f = (target - eye).normalized();
  Eigen::Vector3f up(0, 1, 0);
  if (std::abs(f.dot(up)) > 0.999f) up = Eigen::Vector3f(0, 0, 1);
  Eigen::Vector3f r = up.cross(f).normalized();
  Eigen::Vector3f u = f.cross(r);
  CameraPose pose;
  pose.world_to_cam.setIdentity();
  pose.world_to_cam.block<1, 3>(0, 0) = r.transpose();
  pose.world_to_cam.block<1, 3>(1, 0) = u.transpose();
  pose.world_to_cam.block<1, 3>(2, 0) = f.transpose();
  pose.world_to_cam(0, 3) = -r.dot(eye);
  pose.world_to_cam(1, 3) = -u.dot(eye);
  pose.world_to_cam(2, 3) = -f.dot(eye);
  return pose;
}

std::vector<CameraPose> camera_ring(const SceneGraph& scene, int n_views,
                                    uint64_t seed) {
  Eigen::Vector3f c = scene.bounds.center();
  float diag = scene.bounds.extent().norm();
  float radius = 1.5f * diag;
  // Fibonacci sphere lattice; the seed only rotates it in azimuth
  Rng rng = make_rng(seed, "cams");
  double az0 = uniform<double>(rng, 0.0, 2.0 * M_PI);
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  std::vector<CameraPose> poses;
  poses.reserve(static_cast<size_t>(n_views));
  for (int i = 0; i < n_views; ++i) {
    double y = 1.0 - 2.0 * (i + 0.5) / n_views;
    double r = std::sqrt(std::max(0.0, 1.0 - y * y));
    double th = golden * i + az0;
    Eigen::Vector3f dir(static_cast<float>(r * std::cos(th)),
                        static_cast<float>(y),
                        static_cast<float>(r * std::sin(th)));
    poses.push_back(camera_pose(c + radius * dir, c));
  }
  return poses;
}

float focal_px(int image_size) {
  return 0.5f * static_cast<float>(image_size) /
         std::tan(static_cast<float>(M_PI) / 6.0f);  // 60 degree vertical fov
}

namespace {

inline float quantize8(float v) {
  int k = static_cast<int>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  return static_cast<float>(k) / 255.0f;
}

}  // namespace

std::vector<View> render_views(const SceneGraph& scene, const PointCloud& cloud,
                               int n_views, int image_size, uint64_t seed) {
  if (image_size < 16 || image_size > 256 || image_size % 8 != 0)
    throw InvalidConfig("image_size must be a multiple of 8 in [16, 256]");
  if (n_views < 1) throw InvalidConfig("n_views must be >= 1");

  auto poses = camera_ring(scene, n_views, seed);
  const int S = image_size;
  const float f = focal_px(S);
  const float cx = S * 0.5f, cy = S * 0.5f;

  std::vector<View> views;
  views.reserve(poses.size());
  for (const auto& pose : poses) {
    View view;
    view.width = S;
    view.height = S;
    view.pose = pose;
    view.rgb.assign(static_cast<size_t>(S * S * 3), 1.0f);  // white background
    std::vector<float> zbuf(static_cast<size_t>(S * S),
                            std::numeric_limits<float>::max());

    for (size_t i = 0; i < cloud.size(); ++i) {
      Eigen::Vector4f ph(cloud.xyz[i].x(), cloud.xyz[i].y(), cloud.xyz[i].z(), 1.0f);
      Eigen::Vector4f pc = pose.world_to_cam * ph;
      float z = pc.z();
      if (z < 0.05f) continue;
      float u = f * pc.x() / z + cx;
      float v = cy - f * pc.y() / z;
      // 1 px splat: paint pixels whose center lies within 1 px of the hit
      int iu = static_cast<int>(std::floor(u));
      int iv = static_cast<int>(std::floor(v));
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          int px = iu + dx, py = iv + dy;
          if (px < 0 || px >= S || py < 0 || py >= S) continue;
          float du = (px + 0.5f) - u, dv = (py + 0.5f) - v;
          if (du * du + dv * dv > 1.0f) continue;
          size_t pix = static_cast<size_t>(py * S + px);
          if (z < zbuf[pix]) {
            zbuf[pix] = z;
            view.rgb[pix * 3 + 0] = quantize8(cloud.rgb[i].x());
            view.rgb[pix * 3 + 1] = quantize8(cloud.rgb[i].y());
            view.rgb[pix * 3 + 2] = quantize8(cloud.rgb[i].z());
          }
        }
      }
    }
    views.push_back(std::move(view));
  }
  return views;
}

// ---- question generation ----------------------------------------------------

namespace {

int count_of(const SceneGraph& scene, Category cat) {
  int n = 0;
  for (const auto& o : scene.objects)
    if (o.category == cat) ++n;
  if (cat == Category::window)
    for (const auto& s : scene.surfaces)
      if (s.kind == SurfaceKind::window_plane) ++n;
  return n;
}

std::vector<int> supports_of(const SceneGraph& scene, Category cat) {
  std::vector<int> ids;
  for (const auto& o : scene.objects)
    if (o.category == cat) ids.push_back(o.id);
  if (cat == Category::window)
    for (const auto& s : scene.surfaces)
      if (s.kind == SurfaceKind::window_plane) ids.push_back(s.id);
  return ids;
}

bool targets_degraded_for(const SceneGraph& scene, const std::vector<int>& ids) {
  if (ids.empty()) return false;
  for (int sid : ids) {
    if (scene.source_is_object(sid)) {
      if (!scene.objects[static_cast<size_t>(sid)].complex_structure) return false;
    } else {
      if (!scene.surface_by_source(sid).textureless) return false;
    }
  }
  return true;
}

// unique-instance object categories, enum order
std::vector<Category> unique_cats(const SceneGraph& scene) {
  std::vector<Category> out;
  for (Category c : kAllCategories) {
    if (c == Category::window) continue;
    int n = 0;
    for (const auto& o : scene.objects)
      if (o.category == c) ++n;
    if (n == 1) out.push_back(c);
  }
  return out;
}

const ObjectSpec* only_instance(const SceneGraph& scene, Category c) {
  const ObjectSpec* hit = nullptr;
  for (const auto& o : scene.objects)
    if (o.category == c) {
      if (hit) return nullptr;
      hit = &o;
    }
  return hit;
}

QAItem make_item(const SceneGraph& scene, Task task, std::string q, std::string a,
                 std::vector<int> supports) {
  QAItem item;
  item.task = task;
  item.question = std::move(q);
  item.answer = std::move(a);
  item.targets_degraded = targets_degraded_for(scene, supports);
  item.support_ids = std::move(supports);
  return item;
}

}  // namespace

std::vector<QAItem> generate_qa(const SceneGraph& scene, const QAConfig& cfg,
                                uint64_t seed) {
  if (cfg.count_q < 0 || cfg.color_q < 0 || cfg.exist_q < 0 ||
      cfg.spatial_q < 0 || cfg.caption_q < 0)
    throw InvalidConfig("per-task question counts must be >= 0");

  std::vector<QAItem> items;
  Rng rng = make_rng(seed, "qa");

  // count
  {
    std::vector<Category> pool(kAllCategories.begin(), kAllCategories.end());
    std::shuffle(pool.begin(), pool.end(), rng);
    for (int i = 0; i < cfg.count_q && i < static_cast<int>(pool.size()); ++i) {
      Category c = pool[static_cast<size_t>(i)];
      items.push_back(make_item(
          scene, Task::count,
          std::string("how many ") + plural(c) + " are there",
          std::to_string(count_of(scene, c)), supports_of(scene, c)));
    }
  }

  // color: surfaces and unique-instance objects
  {
    struct ColorCand {
      std::string noun;
      std::string answer;
      std::vector<int> supports;
    };
    std::vector<ColorCand> pool;
    for (const auto& s : scene.surfaces) {
      if (s.kind == SurfaceKind::window_plane)
        pool.push_back({"window", s.color_name, {s.id}});
    }
    {
      std::vector<int> wall_ids;
      std::string wall_color;
      for (const auto& s : scene.surfaces)
        if (s.kind == SurfaceKind::wall) {
          wall_ids.push_back(s.id);
          wall_color = s.color_name;
        }
      if (!wall_ids.empty()) pool.push_back({"wall", wall_color, wall_ids});
      for (const auto& s : scene.surfaces)
        if (s.kind == SurfaceKind::floor)
          pool.push_back({"floor", s.color_name, {s.id}});
    }
    for (Category c : unique_cats(scene)) {
      const ObjectSpec* o = only_instance(scene, c);
      pool.push_back({to_string(c), o->color_name, {o->id}});
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    for (int i = 0; i < cfg.color_q && i < static_cast<int>(pool.size()); ++i) {
      auto& cand = pool[static_cast<size_t>(i)];
      items.push_back(make_item(scene, Task::color,
                                "what color is the " + cand.noun, cand.answer,
                                cand.supports));
    }
  }

  // exist: alternate present / absent categories where possible
  {
    std::vector<Category> present, absent;
    for (Category c : kAllCategories)
      (count_of(scene, c) > 0 ? present : absent).push_back(c);
    std::shuffle(present.begin(), present.end(), rng);
    std::shuffle(absent.begin(), absent.end(), rng);
    size_t pi = 0, ai = 0;
    for (int i = 0; i < cfg.exist_q; ++i) {
      bool want_present = (i % 2 == 0);
      Category c;
      if (want_present && pi < present.size()) c = present[pi++];
      else if (!want_present && ai < absent.size()) c = absent[ai++];
      else if (pi < present.size()) c = present[pi++];
      else if (ai < absent.size()) c = absent[ai++];
      else break;
      bool yes = count_of(scene, c) > 0;
      items.push_back(make_item(scene, Task::exist,
                                std::string("is there a ") + to_string(c),
                                yes ? "yes" : "no",
                                yes ? supports_of(scene, c) : std::vector<int>{}));
    }
  }

  // spatial: the leftmost/rightmost pair among unique-instance categories
  if (cfg.spatial_q > 0) {
    auto uniq = unique_cats(scene);
    if (uniq.size() >= 2) {
      const ObjectSpec *lo = nullptr, *hi = nullptr;
      for (Category c : uniq) {
        const ObjectSpec* o = only_instance(scene, c);
        if (!lo || o->box.center().x() < lo->box.center().x()) lo = o;
        if (!hi || o->box.center().x() > hi->box.center().x()) hi = o;
      }
      if (lo != hi) {
        for (int i = 0; i < cfg.spatial_q; ++i) {
          bool ask_forward = uniform<double>(rng) < 0.5;
          const ObjectSpec* a = ask_forward ? lo : hi;
          const ObjectSpec* b = ask_forward ? hi : lo;
          items.push_back(make_item(
              scene, Task::spatial,
              std::string("is the ") + to_string(a->category) + " left of the " +
                  to_string(b->category),
              a->box.center().x() < b->box.center().x() ? "yes" : "no",
              {a->id, b->id}));
        }
      }
    }
  }

  if (cfg.caption_q > 0) {
    std::vector<int> all;
    for (const auto& o : scene.objects) all.push_back(o.id);
    items.push_back(make_item(scene, Task::caption, "describe the room",
                              caption_answer(scene), all));
  }

  if (items.empty())
    throw EmptyQAError("no question template is satisfiable for this scene");
  return items;
}

// ---- scene description ------------------------------------------------------

std::vector<std::string> describe_scene_tokens(const SceneGraph& scene) {
  std::vector<std::string> tok;
  tok.reserve(32);
  for (Category c : kAllCategories) {
    tok.push_back(std::to_string(count_of(scene, c)));
    tok.push_back(to_string(c));
  }
  std::string win = "none", wall = "none", floor = "none";
  for (const auto& s : scene.surfaces) {
    if (s.kind == SurfaceKind::window_plane) win = s.color_name;
    if (s.kind == SurfaceKind::wall) wall = s.color_name;
    if (s.kind == SurfaceKind::floor) floor = s.color_name;
  }
  tok.insert(tok.end(), {"window", win, "wall", wall, "floor", floor});

  auto uniq = unique_cats(scene);
  const ObjectSpec *lo = nullptr, *hi = nullptr;
  for (Category c : uniq) {
    const ObjectSpec* o = only_instance(scene, c);
    if (!lo || o->box.center().x() < lo->box.center().x()) lo = o;
    if (!hi || o->box.center().x() > hi->box.center().x()) hi = o;
  }
  tok.push_back("leftmost");
  tok.push_back(lo && lo != hi ? to_string(lo->category) : "none");
  tok.push_back("rightmost");
  tok.push_back(hi && lo != hi ? to_string(hi->category) : "none");

  int pairs = 0;
  for (Category c : uniq) {
    if (pairs >= 5) break;
    const ObjectSpec* o = only_instance(scene, c);
    tok.push_back(to_string(c));
    tok.push_back(o->color_name);
    ++pairs;
  }
  while (tok.size() < 32) tok.push_back(".");
  tok.resize(32);
  return tok;
}

std::string caption_answer(const SceneGraph& scene) {
  std::string out = "room with";
  for (Category c : kAllCategories) {
    int n = count_of(scene, c);
    if (n == 0) continue;
    out += " " + std::to_string(n) + " " + to_string(c);
  }
  return out;
}

SceneSample generate_sample(const SceneConfig& scfg, const QAConfig& qcfg,
                            const SampleParams& sp, uint64_t seed) {
  SceneSample s;
  s.scene = generate_scene(scfg, seed);
  s.cloud_clean = sample_point_cloud(s.scene, sp.n_points, derive_seed(seed, "cloud"));
  s.cloud_degraded =
      degrade_point_cloud(s.cloud_clean, s.scene, sp.void_prob, sp.jitter_sigma,
                          derive_seed(seed, "degrade"));
  s.views = render_views(s.scene, s.cloud_clean, sp.n_views, sp.image_size,
                         derive_seed(seed, "views"));
  s.qa = generate_qa(s.scene, qcfg, derive_seed(seed, "qa"));
  return s;
}

}  // namespace argus
