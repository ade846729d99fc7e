#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "grendel/camera.hpp"
#include "grendel/gaussian_cloud.hpp"
#include "grendel/image.hpp"
#include "grendel/ply.hpp"

namespace grendel {

struct SceneManifest {
  std::vector<CameraView> cameras;
  std::vector<int> train_ids;
  std::vector<int> test_ids;
  std::string points_path;            // as written in the manifest
  std::filesystem::path base_dir;     // relative paths resolve against this

  /// Index into `cameras` of the camera with the given id; throws if absent.
  std::size_t index_of(int id) const;
  std::filesystem::path resolve(const std::string& relative) const;
};

/// Every 8th image (0-indexed) is held out for testing.
std::vector<int> default_test_ids(const std::vector<int>& ids);

/// Loads and validates a JSON manifest: unique ids, orthonormal rotations
/// (|R^T R - I| <= 1e-6), positive intrinsics, every referenced image present
/// with the declared size, disjoint splits.
SceneManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const SceneManifest& manifest);

/// Images of all cameras, in camera order.
std::vector<Image> load_images(const SceneManifest& manifest);

/// ASCII PLY with x, y, z and optional red, green, blue (uchar 0-255 or float 0-1).
PointSet load_points(const std::filesystem::path& path);
void save_points(const std::filesystem::path& path, const PointSet& points);

/// Radius of the bounding sphere of the camera centers about their mean.
double scene_extent(const std::vector<CameraView>& cameras);

/// A trained scene plus everything needed to resume bit-exactly.
struct Checkpoint {
  GaussianCloud cloud;
  AdamState adam;
  std::vector<std::uint64_t> ids;
  std::int64_t images_seen = 0;
  std::int64_t iteration = 0;
  std::uint64_t seed = 0;
  std::uint64_t next_id = 0;
};

/// Writes `path` (PLY, 62 vertex properties) and `path` + ".gopt" (optimizer
/// state and ids).
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Reads a checkpoint. Without a sidecar the optimizer state is fresh and
/// ids are 0..n-1, which is how checkpoints from other tools load.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Conversions for the 62-property vertex layout (f_rest is channel-major).
GaussianCloud cloud_from_ply(const PlyTable& table);
PlyTable cloud_to_ply(const GaussianCloud& cloud);

struct SyntheticSpec {
  int count = 500;
  int views = 48;
  int width = 64;
  int height = 64;
  double extent = 1.0;            // Gaussians live in [-extent, extent]^3
  double camera_distance = 4.0;
  double fov_margin = 1.3;        // > 1 leaves a border around the cube
  double scale_min = 0.03;        // world units, fraction of extent
  double scale_max = 0.12;
  double opacity_min = 0.5;
  double opacity_max = 0.95;
  double view_dependence = 0.05;  // std-dev of the higher SH coefficients
  // Fraction of Gaussians packed into the top band of every view. Cameras
  // then sit in a narrow cone in front of the scene so the band is stable.
  double skew = 0.0;
  double skew_band = 0.25;        // band height as a fraction of the image
  // Initial point set for training: a fraction of the true centers, jittered.
  double init_fraction = 1.0;
  double init_jitter = 0.02;      // fraction of extent
  std::uint64_t seed = 0;
};

struct SyntheticScene {
  GaussianCloud truth;
  std::vector<CameraView> cameras;
  std::vector<Image> images;
  std::vector<int> train_ids;
  std::vector<int> test_ids;
  PointSet init_points;
};

/// Deterministic in its SyntheticSpec. Ground truth is rendered by this library's own
/// forward pass.
SyntheticScene generate_synthetic_scene(const SyntheticSpec& spec);

/// Writes manifest.json, images/NNNN.ppm, points.ply and truth.ply into `dir`.
/// Images are 8-bit, so the stored targets are the quantized renders.
std::filesystem::path write_synthetic_scene(const std::filesystem::path& dir, const SyntheticScene& scene);

}  // namespace grendel
