#include "grendel/projection.hpp"

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "grendel/error.hpp"
#include "grendel/sh.hpp"

namespace grendel {

void ProjectedShard::resize(std::size_t n) {
  mean2d.resize(2 * n);
  depth.resize(n);
  radius.resize(n);
  conic.resize(3 * n);
  rgb.resize(3 * n);
  opacity.resize(n);
  visible.resize(n);
  clamped.resize(3 * n);
  ids.resize(n);
}

void ProjectedShard::append_from(const ProjectedShard& src, std::size_t i) {
  mean2d.insert(mean2d.end(), src.mean2d.begin() + 2 * i, src.mean2d.begin() + 2 * i + 2);
  depth.push_back(src.depth[i]);
  radius.push_back(src.radius[i]);
  conic.insert(conic.end(), src.conic.begin() + 3 * i, src.conic.begin() + 3 * i + 3);
  rgb.insert(rgb.end(), src.rgb.begin() + 3 * i, src.rgb.begin() + 3 * i + 3);
  opacity.push_back(src.opacity[i]);
  visible.push_back(src.visible[i]);
  clamped.insert(clamped.end(), src.clamped.begin() + 3 * i, src.clamped.begin() + 3 * i + 3);
  ids.push_back(src.ids[i]);
}

namespace {

using Mat23 = Eigen::Matrix<double, 2, 3>;

bool finite_row(std::span<const double> r) {
  for (double v : r) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// Shared forward geometry for one Gaussian.
struct Geometry {
  Eigen::Vector3d p_cam;
  Eigen::Vector4d q_unit;
  double q_norm = 1.0;
  Eigen::Matrix3d rot_q;
  Eigen::Vector3d scale;
  Eigen::Matrix3d sigma;  // world-space 3D covariance
  Mat23 jac_view;         // J * W
  double a = 0, b = 0, c = 0;  // dilated 2D covariance
};

Mat23 perspective_jacobian(const CameraView& view, const Eigen::Vector3d& p) {
  const double iz = 1.0 / p.z();
  Mat23 j;
  j << view.fx * iz, 0.0, -view.fx * p.x() * iz * iz,
       0.0, view.fy * iz, -view.fy * p.y() * iz * iz;
  return j;
}

Geometry compute_geometry(const GaussianCloud& cloud, std::size_t i, const CameraView& view,
                          const ProjectionSettings& settings) {
  Geometry g;
  g.p_cam = view.rotation * cloud.position(i) + view.translation;
  const Eigen::Vector4d q = cloud.rotation(i);
  g.q_norm = q.norm();
  g.q_unit = q / g.q_norm;
  g.rot_q = quaternion_to_matrix(g.q_unit);
  g.scale = cloud.scale(i);
  const Eigen::Matrix3d m = g.rot_q * g.scale.asDiagonal();
  g.sigma = m * m.transpose();
  if (g.p_cam.z() > settings.near_clip) {
    g.jac_view = perspective_jacobian(view, g.p_cam) * view.rotation;
    const Eigen::Matrix2d cov = g.jac_view * g.sigma * g.jac_view.transpose();
    g.a = cov(0, 0) + settings.dilation;
    g.b = cov(0, 1);
    g.c = cov(1, 1) + settings.dilation;
  }
  return g;
}

}  // namespace

ProjectedShard transform_gaussians(const GaussianCloud& cloud, std::span<const std::uint64_t> ids,
                                   const CameraView& view, const ProjectionSettings& settings) {
  const std::size_t n = cloud.count();
  if (!ids.empty() && ids.size() != n) throw Error("transform_gaussians: id count does not match cloud");
  ProjectedShard out;
  out.resize(n);
  const Eigen::Vector3d cam_center = view.center();

  for (std::size_t i = 0; i < n; ++i) {
    for (int g = 0; g < kNumGroups; ++g) {
      if (!finite_row(cloud.row(static_cast<Group>(g), i))) {
        throw Error("non-finite " + std::string(kGroupNames[g]) + " parameter at Gaussian " +
                    std::to_string(i));
      }
    }
    out.ids[i] = ids.empty() ? i : ids[i];
    out.visible[i] = 0;
    out.radius[i] = 0;
    out.opacity[i] = cloud.opacity(i);

    const Geometry geo = compute_geometry(cloud, i, view, settings);
    const Eigen::Vector3d& p = geo.p_cam;
    out.depth[i] = p.z();
    if (p.z() <= settings.near_clip) continue;

    const double det = geo.a * geo.c - geo.b * geo.b;
    if (!(det > 0.0)) continue;
    const double mid = 0.5 * (geo.a + geo.c);
    const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
    if (!(lambda_max > 0.0)) continue;
    const int radius = static_cast<int>(std::ceil(settings.radius_sigmas * std::sqrt(lambda_max)));

    const double mx = view.fx * p.x() / p.z() + view.cx;
    const double my = view.fy * p.y() / p.z() + view.cy;
    if (mx + radius < 0.0 || my + radius < 0.0 || mx - radius > view.width - 1 ||
        my - radius > view.height - 1) {
      continue;
    }

    out.mean2d[2 * i] = mx;
    out.mean2d[2 * i + 1] = my;
    out.conic[3 * i] = geo.c / det;
    out.conic[3 * i + 1] = -geo.b / det;
    out.conic[3 * i + 2] = geo.a / det;
    out.radius[i] = radius;
    out.visible[i] = 1;

    const Eigen::Vector3d dir = (cloud.position(i) - cam_center).normalized();
    const auto coeffs = cloud.sh(i);
    const Eigen::Vector3d color = eval_sh(coeffs, dir, settings.sh_degree);
    for (int c = 0; c < 3; ++c) {
      out.clamped[3 * i + c] = color[c] < 0.0;
      out.rgb[3 * i + c] = std::max(color[c], 0.0);
    }
  }
  return out;
}

void transform_backward_accumulate(const ProjectedGrads& grad, const GaussianCloud& cloud,
                                   const CameraView& view, const ProjectedShard& forward,
                                   const ProjectionSettings& settings, GaussianCloud& out) {
  const std::size_t n = cloud.count();
  if (forward.size() != n || grad.size() != n || out.count() != n) {
    throw Error("transform_backward: shape mismatch with forward call");
  }
  const Eigen::Vector3d cam_center = view.center();
  const Eigen::Matrix3d& w = view.rotation;

  for (std::size_t i = 0; i < n; ++i) {
    if (!forward.visible[i]) continue;
    const auto g = grad.row(i);
    const Geometry geo = compute_geometry(cloud, i, view, settings);
    const Eigen::Vector3d& p = geo.p_cam;
    Eigen::Vector3d d_pcam = Eigen::Vector3d::Zero();
    Eigen::Vector3d d_pos = Eigen::Vector3d::Zero();

    // Opacity through the sigmoid.
    const double alpha = forward.opacity[i];
    out.row(Group::OpacityLogit, i)[0] += g[pg::kOpacity] * alpha * (1.0 - alpha);

    // Color through SH and the view direction.
    Eigen::Vector3d g_rgb;
    for (int c = 0; c < 3; ++c) g_rgb[c] = forward.clamped[3 * i + c] ? 0.0 : g[pg::kRgb + c];
    if (!g_rgb.isZero(0.0)) {
      const Eigen::Vector3d v = cloud.position(i) - cam_center;
      const double vn = v.norm();
      const Eigen::Vector3d dir = v / vn;
      const auto coeffs = cloud.sh(i);
      const ShGradient sg = eval_sh_backward(coeffs, dir, settings.sh_degree, g_rgb);
      auto dc = out.row(Group::ShDc, i);
      auto rest = out.row(Group::ShRest, i);
      for (int k = 0; k < 3; ++k) dc[k] += sg.coeffs[k];
      for (int k = 0; k < 45; ++k) rest[k] += sg.coeffs[3 + k];
      d_pos += (sg.dir - dir * dir.dot(sg.dir)) / vn;
    }

    // Mean through the perspective division.
    const double iz = 1.0 / p.z();
    d_pcam.x() += g[pg::kMeanX] * view.fx * iz;
    d_pcam.y() += g[pg::kMeanY] * view.fy * iz;
    d_pcam.z() -= (g[pg::kMeanX] * view.fx * p.x() + g[pg::kMeanY] * view.fy * p.y()) * iz * iz;

    // Conic -> dilated 2D covariance -> (J W, Sigma).
    const double det = geo.a * geo.c - geo.b * geo.b;
    Eigen::Matrix2d conic;
    conic << geo.c / det, -geo.b / det, -geo.b / det, geo.a / det;
    Eigen::Matrix2d g_conic;
    g_conic << g[pg::kConicA], 0.5 * g[pg::kConicB], 0.5 * g[pg::kConicB], g[pg::kConicC];
    const Eigen::Matrix2d g_cov = -(conic * g_conic * conic);  // symmetric-matrix gradient

    const Mat23& t = geo.jac_view;
    const Eigen::Matrix3d g_sigma = t.transpose() * g_cov * t;
    const Mat23 g_t = 2.0 * g_cov * t * geo.sigma;
    const Mat23 g_j = g_t * w.transpose();

    const double fx = view.fx, fy = view.fy;
    d_pcam.x() += g_j(0, 2) * (-fx * iz * iz);
    d_pcam.y() += g_j(1, 2) * (-fy * iz * iz);
    d_pcam.z() += g_j(0, 0) * (-fx * iz * iz) + g_j(0, 2) * (2.0 * fx * p.x() * iz * iz * iz) +
                  g_j(1, 1) * (-fy * iz * iz) + g_j(1, 2) * (2.0 * fy * p.y() * iz * iz * iz);

    d_pos += w.transpose() * d_pcam;
    auto pos = out.row(Group::Position, i);
    for (int k = 0; k < 3; ++k) pos[k] += d_pos[k];

    // Sigma = M M^T, M = R(q) diag(s).
    const Eigen::Matrix3d m = geo.rot_q * geo.scale.asDiagonal();
    const Eigen::Matrix3d g_m = 2.0 * g_sigma * m;
    auto ls = out.row(Group::LogScale, i);
    for (int j = 0; j < 3; ++j) {
      double gs = 0.0;
      for (int r = 0; r < 3; ++r) gs += geo.rot_q(r, j) * g_m(r, j);
      ls[j] += gs * geo.scale[j];
    }
    Eigen::Matrix3d gr;
    for (int r = 0; r < 3; ++r) {
      for (int j = 0; j < 3; ++j) gr(r, j) = g_m(r, j) * geo.scale[j];
    }
    const double qw = geo.q_unit[0], qx = geo.q_unit[1], qy = geo.q_unit[2], qz = geo.q_unit[3];
    Eigen::Vector4d gq;
    gq[0] = 2 * (-qz * gr(0, 1) + qy * gr(0, 2) + qz * gr(1, 0) - qx * gr(1, 2) - qy * gr(2, 0) +
                 qx * gr(2, 1));
    gq[1] = 2 * (qy * gr(0, 1) + qz * gr(0, 2) + qy * gr(1, 0) - 2 * qx * gr(1, 1) - qw * gr(1, 2) +
                 qz * gr(2, 0) + qw * gr(2, 1) - 2 * qx * gr(2, 2));
    gq[2] = 2 * (-2 * qy * gr(0, 0) + qx * gr(0, 1) + qw * gr(0, 2) + qx * gr(1, 0) + qz * gr(1, 2) -
                 qw * gr(2, 0) + qz * gr(2, 1) - 2 * qy * gr(2, 2));
    gq[3] = 2 * (-2 * qz * gr(0, 0) - qw * gr(0, 1) + qx * gr(0, 2) + qw * gr(1, 0) -
                 2 * qz * gr(1, 1) + qy * gr(1, 2) + qx * gr(2, 0) + qy * gr(2, 1));
    // Through q / |q|.
    const Eigen::Vector4d gq_raw = (gq - geo.q_unit * geo.q_unit.dot(gq)) / geo.q_norm;
    auto rot = out.row(Group::Rotation, i);
    for (int k = 0; k < 4; ++k) rot[k] += gq_raw[k];
  }
}

GaussianCloud transform_backward(const ProjectedGrads& grad, const GaussianCloud& cloud,
                                 const CameraView& view, const ProjectedShard& forward,
                                 const ProjectionSettings& settings) {
  GaussianCloud out(cloud.count());
  transform_backward_accumulate(grad, cloud, view, forward, settings, out);
  return out;
}

}  // namespace grendel
