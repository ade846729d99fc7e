#pragma once

#include <array>
#include <span>

#include <Eigen/Core>

#include "grendel/gaussian_cloud.hpp"

namespace grendel {

/// Number of basis functions used for a degree (clamped to [0, 3]).
int sh_basis_count(int degree);

/// Real SH basis values at a unit direction, (degree, order) lexicographic.
std::array<double, kShCoeffs> sh_basis(const Eigen::Vector3d& dir, int degree);

/// color_c = 0.5 + sum_k Y_k(dir) * coeffs[k*3 + c], truncated at degree.
Eigen::Vector3d eval_sh(std::span<const double, kShScalars> coeffs, const Eigen::Vector3d& dir,
                        int degree);

struct ShGradient {
  std::array<double, kShScalars> coeffs{};
  Eigen::Vector3d dir = Eigen::Vector3d::Zero();  // w.r.t. the (unit) direction components
};

/// Backward of eval_sh for an upstream gradient on the color.
ShGradient eval_sh_backward(std::span<const double, kShScalars> coeffs, const Eigen::Vector3d& dir,
                            int degree, const Eigen::Vector3d& grad_rgb);

}  // namespace grendel
