#include <doctest.h>

#include <cmath>

#include "grendel/error.hpp"
#include "grendel/projection.hpp"
#include "oracles.hpp"

using namespace grendel;

namespace {

// Scalar probe: a fixed random weighting of the projected attributes of
// Gaussian i (the others do not depend on its parameters).
double weighted(const ProjectedShard& p, const ProjectedGrads& w, std::size_t i) {
  if (!p.visible[i]) return 0.0;
  const auto r = w.row(i);
  double s = r[pg::kMeanX] * p.mean2d[2 * i] + r[pg::kMeanY] * p.mean2d[2 * i + 1];
  for (int k = 0; k < 3; ++k) s += r[pg::kConicA + k] * p.conic[3 * i + k];
  for (int k = 0; k < 3; ++k) s += r[pg::kRgb + k] * p.rgb[3 * i + k];
  s += r[pg::kOpacity] * p.opacity[i];
  return s;
}

}  // namespace

TEST_CASE("a point projects through the pinhole model") {
  GaussianCloud c(1);
  auto pos = c.row(Group::Position, 0);
  pos[0] = 0.5;
  pos[1] = 0.25;
  c.row(Group::Rotation, 0)[0] = 1.0;
  for (double& s : c.row(Group::LogScale, 0)) s = std::log(0.01);
  const CameraView cam = look_at(Eigen::Vector3d(0, 0, -4), Eigen::Vector3d::Zero(), Eigen::Vector3d(0, -1, 0), 64,
                                 48, 50.0);
  const ProjectedShard p = transform_gaussians(c, {}, cam);
  REQUIRE(p.visible[0]);
  CHECK(p.mean2d[0] == doctest::Approx(32 + 50.0 * 0.5 / 4));
  CHECK(p.mean2d[1] == doctest::Approx(24 + 50.0 * 0.25 / 4));
  CHECK(p.depth[0] == doctest::Approx(4.0));
  CHECK(p.opacity[0] == 0.5);
  CHECK(p.ids[0] == 0);
}

TEST_CASE("isotropic Gaussian at the center has the expected conic") {
  GaussianCloud c(1);
  c.row(Group::Rotation, 0)[0] = 1.0;
  for (double& s : c.row(Group::LogScale, 0)) s = std::log(0.2);
  const CameraView cam = look_at(Eigen::Vector3d(0, 0, -4), Eigen::Vector3d::Zero(), Eigen::Vector3d(0, -1, 0), 64,
                                 64, 40.0);
  ProjectionSettings s;
  const ProjectedShard p = transform_gaussians(c, {}, cam, s);
  // Screen variance (f * sigma / z)^2 plus the dilation.
  const double var = std::pow(40.0 * 0.2 / 4.0, 2) + s.dilation;
  CHECK(p.conic[0] == doctest::Approx(1.0 / var));
  CHECK(p.conic[1] == doctest::Approx(0.0));
  CHECK(p.conic[2] == doctest::Approx(1.0 / var));
  CHECK(p.radius[0] == static_cast<int>(std::ceil(3.0 * std::sqrt(var))));
}

TEST_CASE("points behind the near plane or off screen are invisible") {
  GaussianCloud c(3);
  for (int i = 0; i < 3; ++i) c.row(Group::Rotation, i)[0] = 1.0;
  c.row(Group::Position, 1)[2] = -5.0;   // behind the camera
  c.row(Group::Position, 2)[0] = 100.0;  // far off to the side
  const CameraView cam = look_at(Eigen::Vector3d(0, 0, -4), Eigen::Vector3d::Zero(), Eigen::Vector3d(0, -1, 0), 32,
                                 32, 30.0);
  const ProjectedShard p = transform_gaussians(c, {}, cam);
  CHECK(p.visible[0] == 1);
  CHECK(p.visible[1] == 0);
  CHECK(p.visible[2] == 0);
  CHECK(p.radius[1] == 0);
}

TEST_CASE("radius grows monotonically with scale") {
  const CameraView cam = oracle::test_camera(64, 64, 60.0);
  int last = 0;
  for (double s = 0.01; s < 1.0; s *= 1.3) {
    GaussianCloud c(1);
    c.row(Group::Rotation, 0)[0] = 1.0;
    for (double& l : c.row(Group::LogScale, 0)) l = std::log(s);
    const ProjectedShard p = transform_gaussians(c, {}, cam);
    CHECK(p.radius[0] >= last);
    last = p.radius[0];
  }
  CHECK(last > 10);
}

TEST_CASE("non-finite parameters are reported with their index") {
  GaussianCloud c = oracle::random_cloud(4, 3);
  c.row(Group::LogScale, 2)[1] = std::nan("");
  CHECK_THROWS_WITH_AS(transform_gaussians(c, {}, oracle::test_camera()), doctest::Contains("Gaussian 2"), Error);
}

TEST_CASE("negative SH colors clamp and block the gradient") {
  GaussianCloud c(1);
  c.row(Group::Rotation, 0)[0] = 1.0;
  c.row(Group::ShDc, 0)[0] = rgb_to_sh_dc(-0.3);
  c.row(Group::ShDc, 0)[1] = rgb_to_sh_dc(0.6);
  const CameraView cam = oracle::test_camera();
  const ProjectedShard p = transform_gaussians(c, {}, cam);
  CHECK(p.clamped[0] == 1);
  CHECK(p.clamped[1] == 0);
  CHECK(p.rgb[0] == 0.0);
  ProjectedGrads g(1);
  g.row(0)[pg::kRgb] = 1.0;
  g.row(0)[pg::kRgb + 1] = 1.0;
  const GaussianCloud d = transform_backward(g, c, cam, p);
  CHECK(d.row(Group::ShDc, 0)[0] == 0.0);
  CHECK(d.row(Group::ShDc, 0)[1] == doctest::Approx(kShC0));
}

TEST_CASE("transform_backward matches finite differences for every parameter") {
  const GaussianCloud cloud = oracle::random_cloud(6, 21);
  const CameraView cam = oracle::test_camera(48, 40, 45.0);
  const ProjectedShard fwd = transform_gaussians(cloud, {}, cam);
  ProjectedGrads w(cloud.count());
  KeyedRng rng(5);
  for (double& v : w.values) v = rng.normal();
  const GaussianCloud analytic = transform_backward(w, cloud, cam, fwd);

  int probes = 0;
  for (std::size_t i = 0; i < cloud.count(); ++i) {
    if (!fwd.visible[i]) continue;
    for (int g = 0; g < kNumGroups; ++g) {
      const Group grp = static_cast<Group>(g);
      for (int k = 0; k < group_width(grp); ++k) {
        const double x0 = cloud.row(grp, i)[k];
        bool flags_changed = false;
        const double num = oracle::central_diff(
            [&](double v) {
              GaussianCloud c = cloud;
              c.row(grp, i)[k] = v;
              const ProjectedShard p = transform_gaussians(c, {}, cam);
              flags_changed |= p.clamped != fwd.clamped || p.visible != fwd.visible;
              return weighted(p, w, i);
            },
            x0, 1e-5);
        if (flags_changed) continue;
        const double a = analytic.row(grp, i)[k];
        const double err = std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-6});
        CHECK_MESSAGE(err <= 1e-6, "group ", std::string(kGroupNames[g]), " gaussian ", i, " k ", k, " a=", a, " n=", num);
        ++probes;
      }
    }
  }
  CHECK(probes > 200);
}

TEST_CASE("accumulate variant adds into an existing buffer") {
  const GaussianCloud cloud = oracle::random_cloud(3, 8);
  const CameraView cam = oracle::test_camera();
  const ProjectedShard fwd = transform_gaussians(cloud, {}, cam);
  ProjectedGrads w(3);
  for (double& v : w.values) v = 0.5;
  const GaussianCloud once = transform_backward(w, cloud, cam, fwd);
  GaussianCloud twice = once;
  transform_backward_accumulate(w, cloud, cam, fwd, {}, twice);
  for (int g = 0; g < kNumGroups; ++g) {
    for (std::size_t j = 0; j < once.groups[g].size(); ++j) CHECK(twice.groups[g][j] == 2 * once.groups[g][j]);
  }
}
