#include "grendel/gaussian_cloud.hpp"

#include <algorithm>
#include <numeric>
#include <queue>

#include "grendel/error.hpp"

namespace grendel {

std::optional<Group> group_from_name(std::string_view name) {
  for (int g = 0; g < kNumGroups; ++g) {
    if (name == kGroupNames[g]) return static_cast<Group>(g);
  }
  return std::nullopt;
}

void GaussianCloud::resize(std::size_t n) {
  for (int g = 0; g < kNumGroups; ++g) groups[g].resize(n * kGroupWidth[g], 0.0);
}

Eigen::Vector3d GaussianCloud::position(std::size_t i) const {
  const double* p = groups[0].data() + 3 * i;
  return {p[0], p[1], p[2]};
}

Eigen::Vector3d GaussianCloud::scale(std::size_t i) const {
  const double* p = groups[1].data() + 3 * i;
  return {std::exp(p[0]), std::exp(p[1]), std::exp(p[2])};
}

Eigen::Vector4d GaussianCloud::rotation(std::size_t i) const {
  const double* p = groups[2].data() + 4 * i;
  return {p[0], p[1], p[2], p[3]};
}

std::array<double, kShScalars> GaussianCloud::sh(std::size_t i) const {
  std::array<double, kShScalars> out{};
  std::copy_n(groups[4].data() + 3 * i, 3, out.begin());
  std::copy_n(groups[5].data() + 45 * i, 45, out.begin() + 3);
  return out;
}

namespace {

template <typename Arrays>
void append_rows(Arrays& dst, const Arrays& src, std::size_t i) {
  for (int g = 0; g < kNumGroups; ++g) {
    const auto w = static_cast<std::size_t>(kGroupWidth[g]);
    dst[g].insert(dst[g].end(), src[g].begin() + i * w, src[g].begin() + (i + 1) * w);
  }
}

template <typename Arrays>
void compact_rows(Arrays& arrays, std::span<const std::uint8_t> keep) {
  for (int g = 0; g < kNumGroups; ++g) {
    const auto w = static_cast<std::size_t>(kGroupWidth[g]);
    auto& a = arrays[g];
    std::size_t out = 0;
    for (std::size_t i = 0; i < keep.size(); ++i) {
      if (!keep[i]) continue;
      if (out != i) std::copy_n(a.begin() + i * w, w, a.begin() + out * w);
      ++out;
    }
    a.resize(out * w);
  }
}

}  // namespace

void GaussianCloud::append_from(const GaussianCloud& src, std::size_t i) {
  append_rows(groups, src.groups, i);
}

void GaussianCloud::compact(std::span<const std::uint8_t> keep) {
  if (keep.size() != count()) throw Error("compact: mask length does not match cloud size");
  compact_rows(groups, keep);
}

void GaussianCloud::normalize_rotations() {
  auto& q = groups[2];
  for (std::size_t i = 0; i < q.size(); i += 4) {
    const double n = std::sqrt(q[i] * q[i] + q[i + 1] * q[i + 1] + q[i + 2] * q[i + 2] +
                               q[i + 3] * q[i + 3]);
    if (n == 0.0) {
      q[i] = 1.0;
      continue;
    }
    for (int k = 0; k < 4; ++k) q[i + k] /= n;
  }
}

void AdamState::resize(std::size_t n) {
  for (int g = 0; g < kNumGroups; ++g) {
    exp_avg[g].resize(n * kGroupWidth[g], 0.0);
    exp_avg_sq[g].resize(n * kGroupWidth[g], 0.0);
  }
}

void AdamState::append_from(const AdamState& src, std::size_t i) {
  append_rows(exp_avg, src.exp_avg, i);
  append_rows(exp_avg_sq, src.exp_avg_sq, i);
}

void AdamState::compact(std::span<const std::uint8_t> keep) {
  if (keep.size() != count()) throw Error("compact: mask length does not match state size");
  compact_rows(exp_avg, keep);
  compact_rows(exp_avg_sq, keep);
}

void AdamState::reset() {
  for (int g = 0; g < kNumGroups; ++g) {
    std::fill(exp_avg[g].begin(), exp_avg[g].end(), 0.0);
    std::fill(exp_avg_sq[g].begin(), exp_avg_sq[g].end(), 0.0);
    step[g] = 0;
  }
}

std::vector<double> mean_knn_distance(std::span<const Eigen::Vector3d> points, int k) {
  const std::size_t n = points.size();
  std::vector<double> out(n, 0.0);
  if (n < 2 || k <= 0) return out;
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), n - 1);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return points[a].x() < points[b].x() || (points[a].x() == points[b].x() && a < b);
  });

  for (std::size_t pos = 0; pos < n; ++pos) {
    const Eigen::Vector3d& p = points[order[pos]];
    std::priority_queue<double> best;  // max-heap of squared distances, size <= kk
    auto consider = [&](std::size_t j) {
      const double d2 = (points[order[j]] - p).squaredNorm();
      if (best.size() < kk) {
        best.push(d2);
      } else if (d2 < best.top()) {
        best.pop();
        best.push(d2);
      }
    };
    auto pruned = [&](std::size_t j) {
      const double dx = points[order[j]].x() - p.x();
      return best.size() == kk && dx * dx > best.top();
    };
    for (std::size_t j = pos + 1; j < n && !pruned(j); ++j) consider(j);
    for (std::size_t j = pos; j-- > 0 && !pruned(j);) consider(j);

    double sum = 0.0;
    std::vector<double> d;
    while (!best.empty()) {
      d.push_back(std::sqrt(best.top()));
      best.pop();
    }
    std::sort(d.begin(), d.end());
    for (double v : d) sum += v;
    out[order[pos]] = sum / static_cast<double>(kk);
  }
  return out;
}

GaussianCloud init_from_points(const PointSet& points, const InitConfig& config) {
  const std::size_t n = points.positions.size();
  if (n == 0) throw Error("empty initialization");
  if (!points.colors.empty() && points.colors.size() != n) {
    throw Error("init_from_points: color count does not match point count");
  }
  GaussianCloud cloud(n);
  const auto dist = mean_knn_distance(points.positions, config.neighbors);
  const double opacity_logit = inverse_sigmoid(config.initial_opacity);
  for (std::size_t i = 0; i < n; ++i) {
    auto pos = cloud.row(Group::Position, i);
    for (int a = 0; a < 3; ++a) pos[a] = points.positions[i][a];
    // A lone point has no neighbors; fall back to unit scale.
    const double d = n == 1 ? 1.0 : std::max(dist[i], config.min_scale);
    for (double& s : cloud.row(Group::LogScale, i)) s = std::log(d);
    auto q = cloud.row(Group::Rotation, i);
    q[0] = 1.0;
    cloud.row(Group::OpacityLogit, i)[0] = opacity_logit;
    auto dc = cloud.row(Group::ShDc, i);
    for (int c = 0; c < 3; ++c) {
      dc[c] = points.colors.empty() ? 0.0 : rgb_to_sh_dc(points.colors[i][c]);
    }
  }
  return cloud;
}

Eigen::Matrix3d quaternion_to_matrix(const Eigen::Vector4d& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

}  // namespace grendel
