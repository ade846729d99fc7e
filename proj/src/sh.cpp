#include "grendel/sh.hpp"

#include <algorithm>

namespace grendel {

namespace {

constexpr double kC1 = 0.4886025119029199;
constexpr std::array<double, 5> kC2{1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                    -1.0925484305920792, 0.5462742152960396};
constexpr std::array<double, 7> kC3{-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                                    0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                                    -0.5900435899266435};

// Value plus its partials w.r.t. (x, y, z); enough forward-mode AD for the
// polynomial basis.
struct Dual {
  double v = 0.0;
  Eigen::Vector3d d = Eigen::Vector3d::Zero();
};
Dual operator-(const Dual& a, const Dual& b) { return {a.v - b.v, a.d - b.d}; }
Dual operator*(const Dual& a, const Dual& b) { return {a.v * b.v, a.d * b.v + b.d * a.v}; }
Dual operator*(double s, const Dual& a) { return {s * a.v, s * a.d}; }

template <typename T>
T constant(double c) {
  if constexpr (std::is_same_v<T, Dual>) {
    return Dual{c, Eigen::Vector3d::Zero()};
  } else {
    return c;
  }
}

template <typename T>
void basis(const T& x, const T& y, const T& z, int degree, T* out) {
  out[0] = constant<T>(kShC0);
  if (degree < 1) return;
  out[1] = -kC1 * y;
  out[2] = kC1 * z;
  out[3] = -kC1 * x;
  if (degree < 2) return;
  const T xx = x * x, yy = y * y, zz = z * z;
  const T xy = x * y, yz = y * z, xz = x * z;
  out[4] = kC2[0] * xy;
  out[5] = kC2[1] * yz;
  out[6] = kC2[2] * (2.0 * zz - xx - yy);
  out[7] = kC2[3] * xz;
  out[8] = kC2[4] * (xx - yy);
  if (degree < 3) return;
  out[9] = kC3[0] * (y * (3.0 * xx - yy));
  out[10] = kC3[1] * (xy * z);
  out[11] = kC3[2] * (y * (4.0 * zz - xx - yy));
  out[12] = kC3[3] * (z * (2.0 * zz - 3.0 * xx - 3.0 * yy));
  out[13] = kC3[4] * (x * (4.0 * zz - xx - yy));
  out[14] = kC3[5] * (z * (xx - yy));
  out[15] = kC3[6] * (x * (xx - 3.0 * yy));
}

}  // namespace

int sh_basis_count(int degree) {
  const int d = std::clamp(degree, 0, 3);
  return (d + 1) * (d + 1);
}

std::array<double, kShCoeffs> sh_basis(const Eigen::Vector3d& dir, int degree) {
  std::array<double, kShCoeffs> out{};
  basis<double>(dir.x(), dir.y(), dir.z(), std::clamp(degree, 0, 3), out.data());
  return out;
}

Eigen::Vector3d eval_sh(std::span<const double, kShScalars> coeffs, const Eigen::Vector3d& dir,
                        int degree) {
  const auto y = sh_basis(dir, degree);
  const int n = sh_basis_count(degree);
  Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
  for (int k = 0; k < n; ++k) {
    for (int c = 0; c < 3; ++c) rgb[c] += y[k] * coeffs[k * 3 + c];
  }
  return rgb + Eigen::Vector3d::Constant(0.5);
}

ShGradient eval_sh_backward(std::span<const double, kShScalars> coeffs, const Eigen::Vector3d& dir,
                            int degree, const Eigen::Vector3d& grad_rgb) {
  const int d = std::clamp(degree, 0, 3);
  const Dual x{dir.x(), Eigen::Vector3d::UnitX()};
  const Dual y{dir.y(), Eigen::Vector3d::UnitY()};
  const Dual z{dir.z(), Eigen::Vector3d::UnitZ()};
  std::array<Dual, kShCoeffs> b{};
  basis<Dual>(x, y, z, d, b.data());

  ShGradient g;
  const int n = sh_basis_count(d);
  for (int k = 0; k < n; ++k) {
    double dot = 0.0;
    for (int c = 0; c < 3; ++c) {
      g.coeffs[k * 3 + c] = b[k].v * grad_rgb[c];
      dot += coeffs[k * 3 + c] * grad_rgb[c];
    }
    g.dir += dot * b[k].d;
  }
  return g;
}

}  // namespace grendel
