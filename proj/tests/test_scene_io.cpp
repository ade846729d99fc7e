#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "grendel/error.hpp"
#include "grendel/pipeline.hpp"
#include "grendel/ply.hpp"
#include "grendel/scene_io.hpp"
#include "oracles.hpp"

using namespace grendel;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("grendel_test_scene_io_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Writes n cameras with gray 8x6 images and returns the manifest path.
fs::path write_cameras(const fs::path& dir, int n, bool write_splits = false) {
  SceneManifest m;
  fs::create_directories(dir / "images");
  for (int i = 0; i < n; ++i) {
    CameraView c = oracle::test_camera(8, 6, 10.0, Eigen::Vector3d(0.1 * i, 0, -3));
    c.id = i;
    c.image_path = "images/" + std::to_string(i) + ".ppm";
    write_ppm(dir / c.image_path, Image(8, 6, 0.5));
    m.cameras.push_back(c);
  }
  if (write_splits) {
    m.test_ids = default_test_ids([&] {
      std::vector<int> ids;
      for (int i = 0; i < n; ++i) ids.push_back(i);
      return ids;
    }());
    for (int i = 0; i < n; ++i) {
      if (std::find(m.test_ids.begin(), m.test_ids.end(), i) == m.test_ids.end()) m.train_ids.push_back(i);
    }
  }
  save_manifest(dir / "manifest.json", m);
  return dir / "manifest.json";
}

struct CerrCapture {
  std::ostringstream buf;
  std::streambuf* old;
  CerrCapture() : old(std::cerr.rdbuf(buf.rdbuf())) {}
  ~CerrCapture() { std::cerr.rdbuf(old); }
};

}  // namespace

TEST_CASE("default split holds out every 8th camera") {
  const fs::path d = fresh_dir("split8");
  const SceneManifest m = load_manifest(write_cameras(d, 8));
  CHECK(m.test_ids == std::vector<int>{0});
  CHECK(m.train_ids == std::vector<int>{1, 2, 3, 4, 5, 6, 7});
  CHECK(default_test_ids({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}) == std::vector<int>{0, 8});
}

TEST_CASE("a single camera trains with an empty test split and a warning") {
  const fs::path d = fresh_dir("single");
  CerrCapture cap;
  const SceneManifest m = load_manifest(write_cameras(d, 1));
  CHECK(m.test_ids.empty());
  CHECK(m.train_ids == std::vector<int>{0});
  CHECK(cap.buf.str().find("no test views") != std::string::npos);
}

TEST_CASE("manifest round trip preserves cameras") {
  const fs::path d = fresh_dir("roundtrip");
  const SceneManifest m = load_manifest(write_cameras(d, 3, true));
  save_manifest(d / "again.json", m);
  const SceneManifest m2 = load_manifest(d / "again.json");
  REQUIRE(m2.cameras.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(m2.cameras[i].rotation == m.cameras[i].rotation);
    CHECK(m2.cameras[i].translation == m.cameras[i].translation);
    CHECK(m2.cameras[i].fx == m.cameras[i].fx);
  }
  CHECK(m2.index_of(2) == 2);
  CHECK_THROWS_AS(m2.index_of(9), Error);
}

TEST_CASE("manifest validation errors") {
  const fs::path d = fresh_dir("invalid");
  const fs::path p = write_cameras(d, 2);
  SceneManifest good = load_manifest(p);

  SUBCASE("rotation off by 1e-2") {
    SceneManifest m = good;
    m.cameras[1].rotation(0, 0) += 1e-2;
    save_manifest(p, m);
    CHECK_THROWS_WITH_AS(load_manifest(p), doctest::Contains("not orthonormal"), Error);
  }
  SUBCASE("image size mismatch") {
    SceneManifest m = good;
    m.cameras[0].width = 9;
    save_manifest(p, m);
    CHECK_THROWS_WITH_AS(load_manifest(p), doctest::Contains("manifest says 9x6"), Error);
  }
  SUBCASE("missing image") {
    fs::remove(d / "images/1.ppm");
    CHECK_THROWS_WITH_AS(load_manifest(p), doctest::Contains("does not exist"), Error);
  }
  SUBCASE("duplicate id") {
    SceneManifest m = good;
    m.cameras[1].id = 0;
    save_manifest(p, m);
    CHECK_THROWS_WITH_AS(load_manifest(p), doctest::Contains("duplicate camera id"), Error);
  }
  SUBCASE("overlapping splits") {
    SceneManifest m = good;
    m.train_ids = {0, 1};
    m.test_ids = {1};
    save_manifest(p, m);
    CHECK_THROWS_WITH_AS(load_manifest(p), doctest::Contains("both the train and test"), Error);
  }
  SUBCASE("non-positive focal") {
    SceneManifest m = good;
    m.cameras[0].fx = 0.0;
    save_manifest(p, m);
    CHECK_THROWS_WITH_AS(load_manifest(p), doctest::Contains("positive"), Error);
  }
  SUBCASE("missing file names the path") {
    CHECK_THROWS_WITH_AS(load_manifest(d / "nope.json"), doctest::Contains("nope.json"), Error);
  }
}

TEST_CASE("PPM round trip is exact on the 8-bit grid") {
  const fs::path d = fresh_dir("ppm");
  Image img(5, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>(i % 256) / 255.0;
  write_ppm(d / "a.ppm", img);
  const Image back = read_ppm(d / "a.ppm");
  CHECK(back == quantize_8bit(img));
  CHECK(back.width == 5);
  CHECK(back.height == 3);
}

TEST_CASE("checkpoint round trip is bitwise") {
  const fs::path d = fresh_dir("ckpt");
  Checkpoint ck;
  ck.cloud = oracle::random_cloud(100, 5);
  ck.adam.resize(100);
  KeyedRng rng(9);
  for (int g = 0; g < kNumGroups; ++g) {
    for (double& v : ck.adam.exp_avg[g]) v = rng.normal() * 1e-3;
    for (double& v : ck.adam.exp_avg_sq[g]) v = rng.uniform() * 1e-7;
    ck.adam.step[g] = 40 + g;
  }
  for (int i = 0; i < 100; ++i) ck.ids.push_back(static_cast<std::uint64_t>(3 * i + 1));
  ck.images_seen = 1234;
  ck.iteration = 321;
  ck.seed = 77;
  ck.next_id = 400;
  save_checkpoint(d / "c.ply", ck);
  const Checkpoint back = load_checkpoint(d / "c.ply");
  CHECK(back.cloud == ck.cloud);
  CHECK(back.adam == ck.adam);
  CHECK(back.ids == ck.ids);
  CHECK(back.images_seen == 1234);
  CHECK(back.iteration == 321);
  CHECK(back.seed == 77);
  CHECK(back.next_id == 400);
  CHECK(read_ply(d / "c.ply").cols() == 62);
}

TEST_CASE("a 62-property checkpoint without sidecar loads with fresh state") {
  const fs::path d = fresh_dir("external");
  const GaussianCloud c = oracle::random_cloud(7, 2);
  PlyTable t = cloud_to_ply(c);
  // Other tools store float properties.
  for (auto& ty : t.types) ty = "float";
  write_ply(d / "ext.ply", t);
  const Checkpoint ck = load_checkpoint(d / "ext.ply");
  REQUIRE(ck.cloud.count() == 7);
  CHECK(ck.ids == std::vector<std::uint64_t>{0, 1, 2, 3, 4, 5, 6});
  CHECK(ck.next_id == 7);
  CHECK(ck.adam.count() == 7);
  CHECK(ck.adam.step[0] == 0);
  for (int g = 0; g < kNumGroups; ++g) {
    for (std::size_t i = 0; i < c.data(static_cast<Group>(g)).size(); ++i) {
      CHECK(ck.cloud.groups[g][i] == doctest::Approx(c.groups[g][i]).epsilon(1e-6));
    }
  }
}

TEST_CASE("f_rest is stored channel-major") {
  GaussianCloud c(1);
  c.row(Group::ShRest, 0)[(2 - 1) * 3 + 1] = 3.5;  // k = 2, green
  const PlyTable t = cloud_to_ply(c);
  const auto col = t.column("f_rest_" + std::to_string(1 * 15 + (2 - 1)));
  REQUIRE(col.has_value());
  CHECK(t.at(0, *col) == 3.5);
  CHECK(cloud_from_ply(t) == c);
}

TEST_CASE("truncated PLY reports the end of the body") {
  const fs::path d = fresh_dir("trunc");
  save_checkpoint(d / "c.ply", [] {
    Checkpoint ck;
    ck.cloud = oracle::random_cloud(4, 1);
    ck.adam.resize(4);
    ck.ids = {0, 1, 2, 3};
    ck.next_id = 4;
    return ck;
  }());
  std::ifstream in(d / "c.ply");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  // Drop the last two rows.
  for (int k = 0; k < 2; ++k) text.erase(text.rfind('\n', text.size() - 2) + 1);
  std::ofstream(d / "t.ply") << text;
  CHECK_THROWS_WITH_AS(read_ply(d / "t.ply"), doctest::Contains("unexpected end of PLY body"), Error);
}

TEST_CASE("point clouds round trip with colors") {
  const fs::path d = fresh_dir("points");
  PointSet p;
  p.positions = {{0.5, -1, 2}, {3, 4, 5}};
  p.colors = {{1, 0, 0}, {0, 0.2, 1}};
  save_points(d / "p.ply", p);
  const PointSet q = load_points(d / "p.ply");
  CHECK(q.positions == p.positions);
  REQUIRE(q.colors.size() == 2);
  CHECK(q.colors[1][1] == doctest::Approx(51.0 / 255.0));
}

TEST_CASE("scene extent is the camera-center radius about their mean") {
  std::vector<CameraView> cams;
  for (const Eigen::Vector3d e : {Eigen::Vector3d(2, 0, 0), Eigen::Vector3d(-2, 0, 0), Eigen::Vector3d(0, 1, 0)}) {
    cams.push_back(look_at(e, Eigen::Vector3d(0, 0, 5), Eigen::Vector3d(0, -1, 0), 4, 4, 4));
  }
  const Eigen::Vector3d mean(0, 1.0 / 3, 0);
  double r = 0;
  for (const auto& c : cams) r = std::max(r, (c.center() - mean).norm());
  CHECK(scene_extent(cams) == doctest::Approx(r).epsilon(1e-12));
}

TEST_CASE("synthetic scenes are deterministic in their parameters") {
  SyntheticSpec s;
  s.count = 40;
  s.views = 9;
  s.width = s.height = 32;
  s.seed = 4;
  const SyntheticScene a = generate_synthetic_scene(s);
  const SyntheticScene b = generate_synthetic_scene(s);
  CHECK(a.truth == b.truth);
  CHECK(a.images == b.images);
  CHECK(a.test_ids == std::vector<int>{0, 8});
  CHECK(a.train_ids.size() == 7);
  s.seed = 5;
  CHECK_FALSE(generate_synthetic_scene(s).truth == a.truth);
  for (const auto& c : a.cameras) CHECK(c.orthonormality_error() < 1e-12);
}

TEST_CASE("a lone bright Gaussian on the optical axis peaks at the principal point") {
  GaussianCloud c(1);
  c.row(Group::OpacityLogit, 0)[0] = 3.0;
  for (double& s : c.row(Group::LogScale, 0)) s = std::log(0.1);
  c.row(Group::Rotation, 0)[0] = 1.0;
  for (double& v : c.row(Group::ShDc, 0)) v = rgb_to_sh_dc(1.0);
  const CameraView cam = look_at(Eigen::Vector3d(0, 0, -4), Eigen::Vector3d::Zero(), Eigen::Vector3d(0, -1, 0), 32,
                                 32, 30.0);
  const Image img = render_view(c, cam);
  int bx = -1, by = -1;
  double best = -1;
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      if (img.at(x, y, 0) > best) {
        best = img.at(x, y, 0);
        bx = x;
        by = y;
      }
    }
  }
  CHECK(bx == 16);
  CHECK(by == 16);
}

TEST_CASE("skewed scenes pack Gaussians into the top band") {
  SyntheticSpec s;
  s.count = 200;
  s.views = 6;
  s.width = s.height = 64;
  s.skew = 0.9;
  const SyntheticScene sc = generate_synthetic_scene(s);
  for (const auto& cam : sc.cameras) {
    const ProjectedShard p = transform_gaussians(sc.truth, {}, cam);
    int in_band = 0, vis = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!p.visible[i]) continue;
      ++vis;
      if (p.mean2d[2 * i + 1] < 0.25 * 64) ++in_band;
    }
    REQUIRE(vis > 0);
    CHECK(static_cast<double>(in_band) / vis > 0.8);
  }
}

TEST_CASE("writing a synthetic scene produces a loadable manifest") {
  const fs::path d = fresh_dir("synth");
  SyntheticSpec s;
  s.count = 20;
  s.views = 8;
  s.width = s.height = 24;
  const SyntheticScene sc = generate_synthetic_scene(s);
  const fs::path mp = write_synthetic_scene(d, sc);
  const SceneManifest m = load_manifest(mp);
  CHECK(m.cameras.size() == 8);
  const auto imgs = load_images(m);
  CHECK(imgs[3] == quantize_8bit(sc.images[3]));
  CHECK(load_points(m.resolve(m.points_path)).positions.size() == sc.init_points.positions.size());
}
