#pragma once

#include <string>

#include <Eigen/Core>

namespace grendel {

/// Posed pinhole camera. `rotation`/`translation` map world to camera
/// coordinates: p_cam = R * x + t. Pixel (u, v) has its center at (u, v).
struct CameraView {
  int id = 0;
  int width = 0;
  int height = 0;
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  std::string image_path;

  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }
  /// Max |R^T R - I| entry.
  double orthonormality_error() const;
};

/// Camera at `eye` looking at `target`, with image y pointing along -up.
CameraView look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                   const Eigen::Vector3d& up, int width, int height, double focal);

}  // namespace grendel
