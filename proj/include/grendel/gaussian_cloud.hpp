#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace grendel {

/// Learnable parameter groups. Each group is stored as one flat array of
/// `count * group_width(g)` scalars, row-major per Gaussian.
enum class Group : int { Position = 0, LogScale, Rotation, OpacityLogit, ShDc, ShRest };

inline constexpr int kNumGroups = 6;
inline constexpr int kShCoeffs = 16;                  // per channel, degree <= 3
inline constexpr int kShScalars = kShCoeffs * 3;      // 48
inline constexpr std::array<int, kNumGroups> kGroupWidth{3, 3, 4, 1, 3, 45};
inline constexpr std::array<const char*, kNumGroups> kGroupNames{
    "position", "scale", "rotation", "opacity", "sh_dc", "sh_rest"};

constexpr int group_width(Group g) { return kGroupWidth[static_cast<int>(g)]; }
constexpr int group_index(Group g) { return static_cast<int>(g); }
std::optional<Group> group_from_name(std::string_view name);

// Y_0^0 = 0.5 * sqrt(1 / pi)
inline constexpr double kShC0 = 0.28209479177387814;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double inverse_sigmoid(double y) { return std::log(y / (1.0 - y)); }
inline double rgb_to_sh_dc(double c) { return (c - 0.5) / kShC0; }
inline double sh_dc_to_rgb(double dc) { return 0.5 + kShC0 * dc; }

/// Structure-of-arrays store for all Gaussians of a scene (or one shard).
/// The same layout doubles as a gradient buffer.
struct GaussianCloud {
  std::array<std::vector<double>, kNumGroups> groups;

  GaussianCloud() = default;
  explicit GaussianCloud(std::size_t n) { resize(n); }

  std::size_t count() const { return groups[0].size() / 3; }
  void resize(std::size_t n);
  void clear() { resize(0); }

  std::span<double> row(Group g, std::size_t i) {
    const auto w = static_cast<std::size_t>(group_width(g));
    return {groups[group_index(g)].data() + i * w, w};
  }
  std::span<const double> row(Group g, std::size_t i) const {
    const auto w = static_cast<std::size_t>(group_width(g));
    return {groups[group_index(g)].data() + i * w, w};
  }
  std::vector<double>& data(Group g) { return groups[group_index(g)]; }
  const std::vector<double>& data(Group g) const { return groups[group_index(g)]; }

  Eigen::Vector3d position(std::size_t i) const;
  Eigen::Vector3d scale(std::size_t i) const;
  Eigen::Vector4d rotation(std::size_t i) const;
  double opacity(std::size_t i) const { return sigmoid(groups[3][i]); }
  /// Gathers the 48 SH scalars, coefficient-major then channel: index k*3 + c.
  std::array<double, kShScalars> sh(std::size_t i) const;

  /// Appends row `i` of `src` to this cloud.
  void append_from(const GaussianCloud& src, std::size_t i);
  /// Keeps rows with keep[i] != 0, preserving order.
  void compact(std::span<const std::uint8_t> keep);
  /// Renormalizes every quaternion to unit length.
  void normalize_rotations();

  bool operator==(const GaussianCloud&) const = default;
};

/// First and second Adam moments plus a per-group step counter.
struct AdamState {
  std::array<std::vector<double>, kNumGroups> exp_avg;
  std::array<std::vector<double>, kNumGroups> exp_avg_sq;
  std::array<std::int64_t, kNumGroups> step{};

  AdamState() = default;
  explicit AdamState(std::size_t n) { resize(n); }

  std::size_t count() const { return exp_avg[0].size() / 3; }
  /// Resizes to n Gaussians; new rows start with zero moments.
  void resize(std::size_t n);
  void append_zero() { resize(count() + 1); }
  void append_from(const AdamState& src, std::size_t i);
  void compact(std::span<const std::uint8_t> keep);
  void reset();

  bool operator==(const AdamState&) const = default;
};

struct PointSet {
  std::vector<Eigen::Vector3d> positions;
  std::vector<Eigen::Vector3d> colors;  // optional; empty or same length, in [0,1]
};

struct InitConfig {
  double initial_opacity = 0.1;
  int neighbors = 3;
  double min_scale = 1e-7;
};

/// Builds a cloud with one Gaussian per point: isotropic log-scale from the
/// mean distance to the nearest neighbors, identity rotation, constant
/// opacity and DC color from the point RGB (0.5 gray when absent).
GaussianCloud init_from_points(const PointSet& points, const InitConfig& config = {});

/// Mean distance to the k nearest other points, per point (k is clipped to
/// n - 1). Exact; uses an x-sorted sweep with pruning.
std::vector<double> mean_knn_distance(std::span<const Eigen::Vector3d> points, int k);

/// Unit-quaternion (w, x, y, z) to rotation matrix.
Eigen::Matrix3d quaternion_to_matrix(const Eigen::Vector4d& q);

}  // namespace grendel
