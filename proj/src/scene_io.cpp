#include "grendel/scene_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "grendel/error.hpp"
#include "grendel/log.hpp"
#include "grendel/rasterizer.hpp"
#include "grendel/rng.hpp"

namespace grendel {

using nlohmann::json;

std::size_t SceneManifest::index_of(int id) const {
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    if (cameras[i].id == id) return i;
  }
  throw Error("unknown camera id " + std::to_string(id));
}

std::filesystem::path SceneManifest::resolve(const std::string& relative) const {
  const std::filesystem::path p(relative);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<int> default_test_ids(const std::vector<int>& ids) {
  std::vector<int> out;
  if (ids.size() < 2) return out;
  for (std::size_t i = 0; i < ids.size(); i += 8) out.push_back(ids[i]);
  return out;
}

namespace {

template <typename T>
T require(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw Error(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(where + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace

SceneManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest '" + path.string() + "'");
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error("manifest '" + path.string() + "' is not valid JSON: " + e.what());
  }
  SceneManifest m;
  m.base_dir = path.parent_path();
  if (!root.contains("cameras") || !root["cameras"].is_array() || root["cameras"].empty()) {
    throw Error("manifest '" + path.string() + "' has no cameras");
  }
  std::set<int> seen;
  for (const auto& jc : root["cameras"]) {
    CameraView cam;
    const std::string where = "manifest camera #" + std::to_string(m.cameras.size());
    cam.id = require<int>(jc, "id", where);
    cam.width = require<int>(jc, "width", where);
    cam.height = require<int>(jc, "height", where);
    cam.fx = require<double>(jc, "fx", where);
    cam.fy = require<double>(jc, "fy", where);
    cam.cx = require<double>(jc, "cx", where);
    cam.cy = require<double>(jc, "cy", where);
    const auto r = require<std::vector<double>>(jc, "R", where);
    const auto t = require<std::vector<double>>(jc, "t", where);
    cam.image_path = require<std::string>(jc, "image", where);
    if (r.size() != 9 || t.size() != 3) throw Error(where + ": R needs 9 values and t needs 3");
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) cam.rotation(a, b) = r[3 * a + b];
      cam.translation[a] = t[a];
    }
    if (cam.width <= 0 || cam.height <= 0 || !(cam.fx > 0.0) || !(cam.fy > 0.0)) {
      throw Error(where + ": image size and focal lengths must be positive");
    }
    if (const double err = cam.orthonormality_error(); !(err <= 1e-6)) {
      throw Error(where + " (id " + std::to_string(cam.id) + "): rotation is not orthonormal (|R^T R - I| = " +
                  std::to_string(err) + ")");
    }
    if (!seen.insert(cam.id).second) throw Error("manifest: duplicate camera id " + std::to_string(cam.id));
    m.cameras.push_back(std::move(cam));
  }
  m.points_path = root.value("points", std::string());

  std::vector<int> all;
  for (const auto& c : m.cameras) all.push_back(c.id);
  const bool has_train = root.contains("train_ids");
  const bool has_test = root.contains("test_ids");
  if (has_test) m.test_ids = root["test_ids"].get<std::vector<int>>();
  else m.test_ids = default_test_ids(all);
  if (has_train) {
    m.train_ids = root["train_ids"].get<std::vector<int>>();
  } else {
    const std::set<int> test(m.test_ids.begin(), m.test_ids.end());
    for (int id : all) {
      if (!test.count(id)) m.train_ids.push_back(id);
    }
  }
  for (const auto* list : {&m.train_ids, &m.test_ids}) {
    for (int id : *list) {
      if (!seen.count(id)) throw Error("manifest split references unknown camera id " + std::to_string(id));
    }
  }
  for (int id : m.test_ids) {
    if (std::find(m.train_ids.begin(), m.train_ids.end(), id) != m.train_ids.end()) {
      throw Error("manifest: camera " + std::to_string(id) + " is in both the train and test split");
    }
  }
  if (m.test_ids.empty()) log_warning("manifest '" + path.string() + "' has no test views");

  for (const auto& cam : m.cameras) {
    const auto img_path = m.resolve(cam.image_path);
    if (!std::filesystem::exists(img_path)) {
      throw Error("camera " + std::to_string(cam.id) + ": image '" + img_path.string() + "' does not exist");
    }
    // Only the header is needed to check the size, but PPMs here are small.
    const Image img = read_ppm(img_path);
    if (img.width != cam.width || img.height != cam.height) {
      throw Error("camera " + std::to_string(cam.id) + ": image '" + img_path.string() + "' is " +
                  std::to_string(img.width) + "x" + std::to_string(img.height) + ", manifest says " +
                  std::to_string(cam.width) + "x" + std::to_string(cam.height));
    }
  }
  return m;
}

void save_manifest(const std::filesystem::path& path, const SceneManifest& manifest) {
  json root;
  root["cameras"] = json::array();
  for (const auto& cam : manifest.cameras) {
    std::vector<double> r(9), t(3);
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) r[3 * a + b] = cam.rotation(a, b);
      t[a] = cam.translation[a];
    }
    root["cameras"].push_back({{"id", cam.id},
                               {"width", cam.width},
                               {"height", cam.height},
                               {"fx", cam.fx},
                               {"fy", cam.fy},
                               {"cx", cam.cx},
                               {"cy", cam.cy},
                               {"R", r},
                               {"t", t},
                               {"image", cam.image_path}});
  }
  // No splits at all means "use the default split" on load.
  if (!manifest.train_ids.empty() || !manifest.test_ids.empty()) {
    root["train_ids"] = manifest.train_ids;
    root["test_ids"] = manifest.test_ids;
  }
  if (!manifest.points_path.empty()) root["points"] = manifest.points_path;
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest '" + path.string() + "'");
  out << root.dump(2) << '\n';
}

std::vector<Image> load_images(const SceneManifest& manifest) {
  std::vector<Image> out;
  out.reserve(manifest.cameras.size());
  for (const auto& cam : manifest.cameras) {
    Image img = read_ppm(manifest.resolve(cam.image_path));
    if (img.width != cam.width || img.height != cam.height) {
      throw Error("camera " + std::to_string(cam.id) + ": image size does not match the manifest");
    }
    out.push_back(std::move(img));
  }
  return out;
}

PointSet load_points(const std::filesystem::path& path) {
  const PlyTable t = read_ply(path);
  const auto cx = t.column("x"), cy = t.column("y"), cz = t.column("z");
  if (!cx || !cy || !cz) throw Error("point cloud '" + path.string() + "' lacks x/y/z properties");
  const auto cr = t.column("red"), cg = t.column("green"), cb = t.column("blue");
  const bool has_color = cr && cg && cb;
  const bool byte_color = has_color && t.types[*cr].find("char") != std::string::npos;
  const bool byte_color_alt = has_color && t.types[*cr].find("int8") != std::string::npos;
  const double color_scale = (byte_color || byte_color_alt) ? 1.0 / 255.0 : 1.0;
  PointSet ps;
  for (std::size_t r = 0; r < t.rows; ++r) {
    ps.positions.emplace_back(t.at(r, *cx), t.at(r, *cy), t.at(r, *cz));
    if (has_color) {
      ps.colors.emplace_back(t.at(r, *cr) * color_scale, t.at(r, *cg) * color_scale, t.at(r, *cb) * color_scale);
    }
  }
  return ps;
}

void save_points(const std::filesystem::path& path, const PointSet& points) {
  PlyTable t;
  t.names = {"x", "y", "z"};
  t.types = {"double", "double", "double"};
  const bool color = !points.colors.empty();
  if (color) {
    t.names.insert(t.names.end(), {"red", "green", "blue"});
    t.types.insert(t.types.end(), {"uchar", "uchar", "uchar"});
  }
  t.rows = points.positions.size();
  for (std::size_t i = 0; i < t.rows; ++i) {
    for (int a = 0; a < 3; ++a) t.values.push_back(points.positions[i][a]);
    if (color) {
      for (int a = 0; a < 3; ++a) {
        t.values.push_back(std::round(std::clamp(points.colors[i][a], 0.0, 1.0) * 255.0));
      }
    }
  }
  write_ply(path, t);
}

double scene_extent(const std::vector<CameraView>& cameras) {
  if (cameras.empty()) return 1.0;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& c : cameras) mean += c.center();
  mean /= static_cast<double>(cameras.size());
  double r = 0.0;
  for (const auto& c : cameras) r = std::max(r, (c.center() - mean).norm());
  // A single camera (or coincident ones) has no spread; keep thresholds finite.
  return r > 0.0 ? r : 1.0;
}

// --- checkpoints -----------------------------------------------------------

namespace {

std::vector<std::string> checkpoint_columns() {
  std::vector<std::string> names = {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"};
  for (int k = 0; k < 45; ++k) names.push_back("f_rest_" + std::to_string(k));
  names.push_back("opacity");
  for (int k = 0; k < 3; ++k) names.push_back("scale_" + std::to_string(k));
  for (int k = 0; k < 4; ++k) names.push_back("rot_" + std::to_string(k));
  return names;
}

constexpr char kMagic[4] = {'G', 'O', 'P', 'T'};
constexpr std::uint32_t kSidecarVersion = 1;

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}
void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}
void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  Reader(const std::string& data, std::size_t pos, const std::filesystem::path& path)
      : data_(data), pos_(pos), path_(path) {}
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + b])) << (8 * b);
    pos_ += 8;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + b])) << (8 * b);
    pos_ += 4;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw Error("optimizer sidecar '" + path_.string() + "' is truncated");
  }
  const std::string& data_;
  std::size_t pos_;
  const std::filesystem::path& path_;
};

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".gopt");
}

}  // namespace

PlyTable cloud_to_ply(const GaussianCloud& cloud) {
  PlyTable t;
  t.names = checkpoint_columns();
  t.types.assign(t.names.size(), "double");
  t.rows = cloud.count();
  t.values.reserve(t.rows * t.names.size());
  for (std::size_t i = 0; i < t.rows; ++i) {
    for (double v : cloud.row(Group::Position, i)) t.values.push_back(v);
    for (int k = 0; k < 3; ++k) t.values.push_back(0.0);
    for (double v : cloud.row(Group::ShDc, i)) t.values.push_back(v);
    const auto rest = cloud.row(Group::ShRest, i);
    for (int c = 0; c < 3; ++c) {
      for (int k = 0; k < 15; ++k) t.values.push_back(rest[3 * k + c]);
    }
    t.values.push_back(cloud.row(Group::OpacityLogit, i)[0]);
    for (double v : cloud.row(Group::LogScale, i)) t.values.push_back(v);
    for (double v : cloud.row(Group::Rotation, i)) t.values.push_back(v);
  }
  return t;
}

GaussianCloud cloud_from_ply(const PlyTable& t) {
  const auto names = checkpoint_columns();
  std::vector<std::size_t> col(names.size());
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto c = t.column(names[k]);
    // Normals are optional; everything else defines the scene.
    if (!c && k >= 3 && k < 6) {
      col[k] = SIZE_MAX;
      continue;
    }
    if (!c) {
      throw Error("checkpoint has " + std::to_string(t.cols()) + " vertex properties and lacks '" + names[k] +
                  "'; expected the 62-property layout of SH degree 3");
    }
    col[k] = *c;
  }
  GaussianCloud cloud(t.rows);
  for (std::size_t i = 0; i < t.rows; ++i) {
    auto get = [&](std::size_t k) { return t.at(i, col[k]); };
    auto pos = cloud.row(Group::Position, i);
    for (int a = 0; a < 3; ++a) pos[a] = get(a);
    auto dc = cloud.row(Group::ShDc, i);
    for (int c = 0; c < 3; ++c) dc[c] = get(6 + c);
    auto rest = cloud.row(Group::ShRest, i);
    for (int c = 0; c < 3; ++c) {
      for (int k = 0; k < 15; ++k) rest[3 * k + c] = get(9 + c * 15 + k);
    }
    cloud.row(Group::OpacityLogit, i)[0] = get(54);
    auto s = cloud.row(Group::LogScale, i);
    for (int a = 0; a < 3; ++a) s[a] = get(55 + a);
    auto q = cloud.row(Group::Rotation, i);
    for (int a = 0; a < 4; ++a) q[a] = get(58 + a);
  }
  return cloud;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const std::size_t n = ck.cloud.count();
  if (ck.adam.count() != n || ck.ids.size() != n) {
    throw Error("save_checkpoint: cloud, optimizer state and ids have different sizes");
  }
  PlyTable t = cloud_to_ply(ck.cloud);
  t.comments.push_back("grendel-mini checkpoint");
  write_ply(path, t);

  std::string payload;
  put_u64(payload, static_cast<std::uint64_t>(ck.images_seen));
  put_u64(payload, static_cast<std::uint64_t>(ck.iteration));
  put_u64(payload, ck.seed);
  put_u64(payload, ck.next_id);
  put_u64(payload, n);
  for (auto id : ck.ids) put_u64(payload, id);
  for (int g = 0; g < kNumGroups; ++g) {
    put_u64(payload, static_cast<std::uint64_t>(ck.adam.step[g]));
    put_u64(payload, ck.adam.exp_avg[g].size());
    for (double v : ck.adam.exp_avg[g]) put_f64(payload, v);
    for (double v : ck.adam.exp_avg_sq[g]) put_f64(payload, v);
  }
  std::string blob(kMagic, 4);
  put_u32(blob, kSidecarVersion);
  put_u64(blob, payload.size());
  blob += payload;
  std::ofstream out(sidecar_path(path), std::ios::binary);
  if (!out) throw Error("cannot write optimizer sidecar '" + sidecar_path(path).string() + "'");
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Checkpoint ck;
  ck.cloud = cloud_from_ply(read_ply(path));
  const std::size_t n = ck.cloud.count();
  const auto side = sidecar_path(path);
  if (!std::filesystem::exists(side)) {
    ck.adam.resize(n);
    ck.ids.resize(n);
    for (std::size_t i = 0; i < n; ++i) ck.ids[i] = i;
    ck.next_id = n;
    return ck;
  }
  std::ifstream in(side, std::ios::binary);
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 16 || std::memcmp(data.data(), kMagic, 4) != 0) {
    throw Error("'" + side.string() + "' is not an optimizer sidecar (bad magic)");
  }
  Reader r(data, 4, side);
  if (const auto v = r.u32(); v != kSidecarVersion) {
    throw Error("optimizer sidecar '" + side.string() + "' has unsupported version " + std::to_string(v));
  }
  const std::uint64_t len = r.u64();
  if (data.size() - r.pos() != len) throw Error("optimizer sidecar '" + side.string() + "' has a bad length");
  ck.images_seen = static_cast<std::int64_t>(r.u64());
  ck.iteration = static_cast<std::int64_t>(r.u64());
  ck.seed = r.u64();
  ck.next_id = r.u64();
  if (r.u64() != n) throw Error("optimizer sidecar '" + side.string() + "' does not match the PLY vertex count");
  ck.ids.resize(n);
  for (auto& id : ck.ids) id = r.u64();
  ck.adam.resize(n);
  for (int g = 0; g < kNumGroups; ++g) {
    ck.adam.step[g] = static_cast<std::int64_t>(r.u64());
    if (r.u64() != ck.adam.exp_avg[g].size()) {
      throw Error("optimizer sidecar '" + side.string() + "': moment size mismatch in group " + kGroupNames[g]);
    }
    for (double& v : ck.adam.exp_avg[g]) v = r.f64();
    for (double& v : ck.adam.exp_avg_sq[g]) v = r.f64();
  }
  return ck;
}

// --- synthetic scenes ----------------------------------------------------

namespace {

Eigen::Vector4d random_quaternion(KeyedRng& rng) {
  Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return q / q.norm();
}

Image render_truth(const GaussianCloud& cloud, const CameraView& cam) {
  const ProjectedShard p = transform_gaussians(cloud, {}, cam);
  const TileGrid grid = TileGrid::for_image(cam.width, cam.height);
  const TileZBuffer z = build_tile_lists(p, grid);
  return render_forward(z, p, {}, RenderSettings{}).image;
}

}  // namespace

SyntheticScene generate_synthetic_scene(const SyntheticSpec& spec) {
  if (spec.count < 1 || spec.views < 1) throw Error("synthetic scene needs at least one Gaussian and one view");
  if (spec.width < 1 || spec.height < 1) throw Error("synthetic scene needs a positive image size");
  SyntheticScene scene;
  const double e = spec.extent;
  const double focal = 0.5 * std::min(spec.width, spec.height) * spec.camera_distance / (spec.fov_margin * e * 1.5);
  const bool skewed = spec.skew > 0.0;

  KeyedRng cam_rng(spec.seed, 0xCA3E5ULL);
  for (int v = 0; v < spec.views; ++v) {
    Eigen::Vector3d dir;
    if (skewed) {
      // Narrow cone around +z so the skew band stays put in every view.
      dir = Eigen::Vector3d(cam_rng.uniform(-0.08, 0.08), cam_rng.uniform(-0.08, 0.08), 1.0).normalized();
    } else {
      // Fibonacci sphere for even coverage.
      const double z = 1.0 - 2.0 * (v + 0.5) / spec.views;
      const double phi = v * std::numbers::pi * (3.0 - std::sqrt(5.0));
      const double rxy = std::sqrt(std::max(0.0, 1.0 - z * z));
      dir = Eigen::Vector3d(rxy * std::cos(phi), z, rxy * std::sin(phi));
    }
    const Eigen::Vector3d eye = dir * spec.camera_distance;
    const Eigen::Vector3d up = std::abs(dir.y()) > 0.95 ? Eigen::Vector3d(0, 0, 1) : Eigen::Vector3d(0, 1, 0);
    CameraView cam = look_at(eye, Eigen::Vector3d::Zero(), up, spec.width, spec.height, focal);
    cam.id = v;
    char name[32];
    std::snprintf(name, sizeof(name), "images/%04d.ppm", v);
    cam.image_path = name;
    scene.cameras.push_back(cam);
  }

  GaussianCloud& truth = scene.truth;
  truth.resize(static_cast<std::size_t>(spec.count));
  const int skew_count = skewed ? static_cast<int>(std::lround(spec.skew * spec.count)) : 0;
  // World-space band that lands in the top `skew_band` of the image for a
  // camera on the +z axis.
  const double y_hi = 0.5 * spec.height / focal * spec.camera_distance * 0.92;
  const double y_lo = (0.5 - spec.skew_band) * spec.height / focal * spec.camera_distance;
  const double x_half = 0.5 * spec.width / focal * spec.camera_distance * 0.9;
  for (int i = 0; i < spec.count; ++i) {
    KeyedRng rng(spec.seed, 0x6A055ULL, static_cast<std::uint64_t>(i));
    Eigen::Vector3d pos;
    if (i < skew_count) {
      pos = Eigen::Vector3d(rng.uniform(-x_half, x_half), rng.uniform(y_lo, y_hi), rng.uniform(-0.1, 0.1) * e);
    } else {
      pos = Eigen::Vector3d(rng.uniform(-e, e), rng.uniform(-e, e), rng.uniform(-e, e));
    }
    auto p = truth.row(Group::Position, i);
    for (int a = 0; a < 3; ++a) p[a] = pos[a];
    auto s = truth.row(Group::LogScale, i);
    for (int a = 0; a < 3; ++a) s[a] = std::log(e * rng.uniform(spec.scale_min, spec.scale_max));
    const Eigen::Vector4d q = random_quaternion(rng);
    auto qr = truth.row(Group::Rotation, i);
    for (int a = 0; a < 4; ++a) qr[a] = q[a];
    truth.row(Group::OpacityLogit, i)[0] = inverse_sigmoid(rng.uniform(spec.opacity_min, spec.opacity_max));
    auto dc = truth.row(Group::ShDc, i);
    for (int c = 0; c < 3; ++c) dc[c] = rgb_to_sh_dc(rng.uniform(0.1, 0.9));
    for (double& r : truth.row(Group::ShRest, i)) r = spec.view_dependence * rng.normal();
  }

  for (const auto& cam : scene.cameras) scene.images.push_back(render_truth(truth, cam));

  std::vector<int> ids;
  for (const auto& c : scene.cameras) ids.push_back(c.id);
  scene.test_ids = default_test_ids(ids);
  for (int id : ids) {
    if (std::find(scene.test_ids.begin(), scene.test_ids.end(), id) == scene.test_ids.end()) {
      scene.train_ids.push_back(id);
    }
  }

  // Initial points: a keyed subset of the true centers, jittered.
  const auto keep = static_cast<std::size_t>(
      std::clamp<long>(std::lround(spec.init_fraction * spec.count), 1L, static_cast<long>(spec.count)));
  std::vector<std::pair<std::uint64_t, int>> order;
  for (int i = 0; i < spec.count; ++i) {
    order.emplace_back(splitmix64(spec.seed ^ (0x1417ULL + static_cast<std::uint64_t>(i) * 0x9e37ULL)), i);
  }
  std::sort(order.begin(), order.end());
  std::vector<int> chosen;
  for (std::size_t k = 0; k < keep; ++k) chosen.push_back(order[k].second);
  std::sort(chosen.begin(), chosen.end());
  for (int i : chosen) {
    KeyedRng rng(spec.seed, 0x717ULL, static_cast<std::uint64_t>(i));
    const Eigen::Vector3d jitter(rng.normal(), rng.normal(), rng.normal());
    scene.init_points.positions.push_back(truth.position(i) + jitter * (spec.init_jitter * e));
    Eigen::Vector3d rgb;
    for (int c = 0; c < 3; ++c) rgb[c] = std::clamp(sh_dc_to_rgb(truth.row(Group::ShDc, i)[c]), 0.0, 1.0);
    scene.init_points.colors.push_back(rgb);
  }
  return scene;
}

std::filesystem::path write_synthetic_scene(const std::filesystem::path& dir, const SyntheticScene& scene) {
  std::filesystem::create_directories(dir / "images");
  SceneManifest m;
  m.cameras = scene.cameras;
  m.train_ids = scene.train_ids;
  m.test_ids = scene.test_ids;
  m.points_path = "points.ply";
  for (std::size_t v = 0; v < scene.cameras.size(); ++v) {
    write_ppm(dir / scene.cameras[v].image_path, scene.images[v]);
  }
  save_points(dir / "points.ply", scene.init_points);
  write_ply(dir / "truth.ply", cloud_to_ply(scene.truth));
  const auto manifest = dir / "manifest.json";
  save_manifest(manifest, m);
  return manifest;
}

}  // namespace grendel
