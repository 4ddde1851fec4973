#pragma once

// Differentiable SE(3) geometry: axis-angle rotations, pull-back sampling
// grids, trilinear volume resampling and Z-buffer compositing.
//
// Everything here is templated on the scalar type so the same code runs in
// float inside the networks and in double for finite-difference checks.

#include "insegan/image.hpp"
#include "insegan/tensor.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <utility>

namespace insegan::geometry {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Points3 = Eigen::Matrix<Scalar, 3, Eigen::Dynamic>;

/// Axis-angle rotation (radians times unit axis) plus translation in
/// normalized volume coordinates.
template <typename Scalar>
struct PoseVector6 {
  Vec3<Scalar> omega = Vec3<Scalar>::Zero();
  Vec3<Scalar> tau = Vec3<Scalar>::Zero();

  static PoseVector6 from_vector(const Eigen::Matrix<Scalar, 6, 1>& v) {
    return {v.template head<3>(), v.template tail<3>()};
  }
  Eigen::Matrix<Scalar, 6, 1> to_vector() const {
    Eigen::Matrix<Scalar, 6, 1> v;
    v << omega, tau;
    return v;
  }
};

/// x' = R x + t.
template <typename Scalar>
struct RigidTransform {
  Mat3<Scalar> R = Mat3<Scalar>::Identity();
  Vec3<Scalar> t = Vec3<Scalar>::Zero();

  Vec3<Scalar> apply(const Vec3<Scalar>& x) const { return R * x + t; }
  Vec3<Scalar> apply_inverse(const Vec3<Scalar>& x) const { return R.transpose() * (x - t); }

  /// (*this ∘ inner)(x) = R (R_inner x + t_inner) + t.
  RigidTransform compose(const RigidTransform& inner) const { return {R * inner.R, R * inner.t + t}; }
  RigidTransform inverse() const { return {R.transpose(), -(R.transpose() * t)}; }
};

template <typename Scalar>
Mat3<Scalar> skew(const Vec3<Scalar>& v) {
  Mat3<Scalar> k;
  k << Scalar(0), -v.z(), v.y(),  //
      v.z(), Scalar(0), -v.x(),   //
      -v.y(), v.x(), Scalar(0);
  return k;
}

namespace detail {

template <typename Scalar>
void require_finite(const Vec3<Scalar>& v, const char* what) {
  if (!v.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

/// Rodrigues coefficients R = I + a K + b K^2 and their radial derivatives
/// divided by theta (so that d a / d omega_k = da_over_theta * omega_k).
template <typename Scalar>
struct RodriguesCoefficients {
  Scalar a, b, da_over_theta, db_over_theta;
};

template <typename Scalar>
RodriguesCoefficients<Scalar> rodrigues_coefficients(Scalar theta) {
  using std::cos;
  using std::sin;
  const Scalar t2 = theta * theta;
  RodriguesCoefficients<Scalar> c;
  if (theta < Scalar(1e-8)) {
    c.a = Scalar(1) - t2 / Scalar(6);
    c.b = Scalar(0.5) - t2 / Scalar(24);
  } else {
    const Scalar half = sin(theta / Scalar(2));
    c.a = sin(theta) / theta;
    c.b = Scalar(2) * half * half / t2;
  }
  // The closed forms lose precision well before 1e-8, so the derivative
  // terms switch to their Taylor series earlier.
  if (theta < Scalar(1e-2)) {
    const Scalar t4 = t2 * t2;
    c.da_over_theta = Scalar(-1) / Scalar(3) + t2 / Scalar(30) - t4 / Scalar(840);
    c.db_over_theta = Scalar(-1) / Scalar(12) + t2 / Scalar(180) - t4 / Scalar(6720);
  } else {
    const Scalar t3 = t2 * theta;
    c.da_over_theta = (theta * cos(theta) - sin(theta)) / t3;
    c.db_over_theta = (theta * sin(theta) - Scalar(2) * (Scalar(1) - cos(theta))) / (t3 * theta);
  }
  return c;
}

}  // namespace detail

/// Rodrigues' formula. Near zero the second-order series is used.
template <typename Scalar>
Mat3<Scalar> axis_angle_to_rotation(const Vec3<Scalar>& omega) {
  detail::require_finite(omega, "axis_angle_to_rotation");
  const auto c = detail::rodrigues_coefficients<Scalar>(omega.norm());
  const Mat3<Scalar> k = skew(omega);
  return Mat3<Scalar>::Identity() + c.a * k + c.b * (k * k);
}

/// Partial derivatives dR/d omega_k, k = 0..2.
template <typename Scalar>
std::array<Mat3<Scalar>, 3> rotation_jacobian(const Vec3<Scalar>& omega) {
  detail::require_finite(omega, "rotation_jacobian");
  const auto c = detail::rodrigues_coefficients<Scalar>(omega.norm());
  const Mat3<Scalar> k = skew(omega);
  const Mat3<Scalar> k2 = k * k;
  std::array<Mat3<Scalar>, 3> out;
  for (int i = 0; i < 3; ++i) {
    const Mat3<Scalar> e = skew<Scalar>(Vec3<Scalar>::Unit(i));
    out[i] = c.da_over_theta * omega[i] * k + c.a * e + c.db_over_theta * omega[i] * k2 + c.b * (e * k + k * e);
  }
  return out;
}

/// Chain rule through Rodrigues: dL/d omega from dL/dR.
template <typename Scalar>
Vec3<Scalar> rotation_backward(const Vec3<Scalar>& omega, const Mat3<Scalar>& grad_rotation) {
  const auto jac = rotation_jacobian(omega);
  Vec3<Scalar> g;
  for (int i = 0; i < 3; ++i) g[i] = (jac[i].array() * grad_rotation.array()).sum();
  return g;
}

template <typename Scalar>
RigidTransform<Scalar> pose_to_transform(const PoseVector6<Scalar>& pose) {
  detail::require_finite(pose.tau, "pose_to_transform");
  return {axis_angle_to_rotation(pose.omega), pose.tau};
}

struct VolumeShape {
  Index depth = 0;
  Index height = 0;
  Index width = 0;

  Index voxels() const { return depth * height * width; }
  bool operator==(const VolumeShape&) const = default;
};

inline void require_valid(const VolumeShape& shape) {
  if (shape.depth < 1 || shape.height < 1 || shape.width < 1) {
    throw std::invalid_argument("volume shape must be at least 1 along every axis");
  }
}

/// Center of voxel i along an axis of the given size, in [-1, 1].
template <typename Scalar>
Scalar voxel_center(Index i, Index size) {
  return Scalar(2 * i + 1) / Scalar(size) - Scalar(1);
}

/// Normalized coordinate -> continuous voxel index (inverse of voxel_center).
template <typename Scalar>
Scalar continuous_index(Scalar coord, Index size) {
  return ((coord + Scalar(1)) * Scalar(size) - Scalar(1)) / Scalar(2);
}

/// Source coordinates for every output voxel. Columns are ordered (d, h, w)
/// row-major; rows are (x, y, z) with x along width, y along height and z
/// along depth.
template <typename Scalar>
struct SamplingGrid {
  VolumeShape shape;
  Points3<Scalar> coords;
};

template <typename Scalar>
Points3<Scalar> voxel_lattice(const VolumeShape& shape) {
  require_valid(shape);
  Points3<Scalar> x(3, shape.voxels());
  Index p = 0;
  for (Index d = 0; d < shape.depth; ++d) {
    for (Index h = 0; h < shape.height; ++h) {
      for (Index w = 0; w < shape.width; ++w, ++p) {
        x(0, p) = voxel_center<Scalar>(w, shape.width);
        x(1, p) = voxel_center<Scalar>(h, shape.height);
        x(2, p) = voxel_center<Scalar>(d, shape.depth);
      }
    }
  }
  return x;
}

/// Pull-back grid: coords = R^T (x - t), so sampling through it moves the
/// volume content by the transform.
template <typename Scalar>
SamplingGrid<Scalar> affine_grid(const RigidTransform<Scalar>& transform, const VolumeShape& shape) {
  Points3<Scalar> x = voxel_lattice<Scalar>(shape);
  x.colwise() -= transform.t;
  return {shape, transform.R.transpose() * x};
}

template <typename Scalar>
struct TransformGradient {
  Mat3<Scalar> R = Mat3<Scalar>::Zero();
  Vec3<Scalar> t = Vec3<Scalar>::Zero();
};

/// Given dL/dcoords, returns dL/dR and dL/dt for affine_grid.
template <typename Scalar>
TransformGradient<Scalar> affine_grid_backward(const RigidTransform<Scalar>& transform, const VolumeShape& shape,
                                               const Points3<Scalar>& grad_coords) {
  Points3<Scalar> x = voxel_lattice<Scalar>(shape);
  if (grad_coords.cols() != x.cols()) throw std::invalid_argument("affine_grid_backward: grid size mismatch");
  x.colwise() -= transform.t;
  TransformGradient<Scalar> g;
  g.R = x * grad_coords.transpose();
  g.t = -(transform.R * grad_coords.rowwise().sum());
  return g;
}

namespace detail {

/// The eight trilinear taps around a continuous source position.
template <typename Scalar>
struct Taps {
  Index x0, y0, z0;
  Scalar fx, fy, fz;
};

template <typename Scalar>
Taps<Scalar> taps(const Scalar* coord, const VolumeShape& src) {
  using std::floor;
  const Scalar ix = continuous_index(coord[0], src.width);
  const Scalar iy = continuous_index(coord[1], src.height);
  const Scalar iz = continuous_index(coord[2], src.depth);
  Taps<Scalar> t;
  const Scalar fx0 = floor(ix), fy0 = floor(iy), fz0 = floor(iz);
  t.x0 = static_cast<Index>(fx0);
  t.y0 = static_cast<Index>(fy0);
  t.z0 = static_cast<Index>(fz0);
  t.fx = ix - fx0;
  t.fy = iy - fy0;
  t.fz = iz - fz0;
  return t;
}

inline bool inside(Index i, Index size) { return i >= 0 && i < size; }

inline VolumeShape volume_shape_of(const Shape& s) { return {s[1], s[2], s[3]}; }

}  // namespace detail

/// Resamples a C×D×H×W volume at the grid positions with trilinear
/// interpolation and zero padding outside the source volume.
template <typename Scalar>
Tensor<Scalar> trilinear_sample(const Tensor<Scalar>& volume, const SamplingGrid<Scalar>& grid) {
  if (volume.rank() != 4) throw std::invalid_argument("trilinear_sample: volume must be C×D×H×W");
  if (grid.coords.cols() != grid.shape.voxels()) throw std::invalid_argument("trilinear_sample: malformed grid");
  const Index channels = volume.dim(0);
  const VolumeShape src = detail::volume_shape_of(volume.shape());
  const Index src_voxels = src.voxels();
  const Index out_voxels = grid.shape.voxels();
  Tensor<Scalar> out({channels, grid.shape.depth, grid.shape.height, grid.shape.width});
  const Scalar* vin = volume.data();
  Scalar* vout = out.data();
  for (Index p = 0; p < out_voxels; ++p) {
    const auto t = detail::taps(grid.coords.col(p).data(), src);
    for (int corner = 0; corner < 8; ++corner) {
      const Index dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
      const Index x = t.x0 + dx, y = t.y0 + dy, z = t.z0 + dz;
      if (!detail::inside(x, src.width) || !detail::inside(y, src.height) || !detail::inside(z, src.depth)) continue;
      const Scalar w = (dx ? t.fx : Scalar(1) - t.fx) * (dy ? t.fy : Scalar(1) - t.fy) * (dz ? t.fz : Scalar(1) - t.fz);
      const Index offset = (z * src.height + y) * src.width + x;
      for (Index c = 0; c < channels; ++c) vout[c * out_voxels + p] += w * vin[c * src_voxels + offset];
    }
  }
  return out;
}

template <typename Scalar>
struct SampleGradients {
  Tensor<Scalar> volume;
  Points3<Scalar> coords;
};

/// Reverse-mode derivative of trilinear_sample with respect to both the
/// volume and the grid coordinates.
template <typename Scalar>
SampleGradients<Scalar> trilinear_sample_backward(const Tensor<Scalar>& volume, const SamplingGrid<Scalar>& grid,
                                                  const Tensor<Scalar>& grad_output, bool want_volume = true,
                                                  bool want_coords = true) {
  const Index channels = volume.dim(0);
  const VolumeShape src = detail::volume_shape_of(volume.shape());
  require_shape(grad_output.shape(), {channels, grid.shape.depth, grid.shape.height, grid.shape.width},
                "trilinear_sample_backward");
  const Index src_voxels = src.voxels();
  const Index out_voxels = grid.shape.voxels();
  SampleGradients<Scalar> g;
  if (want_volume) g.volume = Tensor<Scalar>::zeros_like(volume);
  if (want_coords) g.coords = Points3<Scalar>::Zero(3, out_voxels);
  const Scalar* vin = volume.data();
  const Scalar* gout = grad_output.data();
  Scalar* gvol = want_volume ? g.volume.data() : nullptr;
  const Scalar sx = Scalar(src.width) / Scalar(2);
  const Scalar sy = Scalar(src.height) / Scalar(2);
  const Scalar sz = Scalar(src.depth) / Scalar(2);
  for (Index p = 0; p < out_voxels; ++p) {
    const auto t = detail::taps(grid.coords.col(p).data(), src);
    Scalar gx = 0, gy = 0, gz = 0;
    for (int corner = 0; corner < 8; ++corner) {
      const Index dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
      const Index x = t.x0 + dx, y = t.y0 + dy, z = t.z0 + dz;
      if (!detail::inside(x, src.width) || !detail::inside(y, src.height) || !detail::inside(z, src.depth)) continue;
      const Scalar wx = dx ? t.fx : Scalar(1) - t.fx;
      const Scalar wy = dy ? t.fy : Scalar(1) - t.fy;
      const Scalar wz = dz ? t.fz : Scalar(1) - t.fz;
      const Index offset = (z * src.height + y) * src.width + x;
      Scalar dot = 0;
      for (Index c = 0; c < channels; ++c) {
        const Scalar go = gout[c * out_voxels + p];
        if (gvol) gvol[c * src_voxels + offset] += wx * wy * wz * go;
        dot += go * vin[c * src_voxels + offset];
      }
      const Scalar sgx = dx ? Scalar(1) : Scalar(-1);
      const Scalar sgy = dy ? Scalar(1) : Scalar(-1);
      const Scalar sgz = dz ? Scalar(1) : Scalar(-1);
      gx += sgx * wy * wz * dot;
      gy += wx * sgy * wz * dot;
      gz += wx * wy * sgz * dot;
    }
    if (want_coords) {
      g.coords(0, p) = gx * sx;
      g.coords(1, p) = gy * sy;
      g.coords(2, p) = gz * sz;
    }
  }
  return g;
}

/// Depth-wise max pooling over an n×H×W stack of instance renders.
template <typename Scalar>
struct Composite {
  Image<Scalar> depth;
  /// 1 + index of the nearest instance; ties go to the lowest index.
  LabelImage labels;
};

template <typename Scalar>
Composite<Scalar> zbuffer_composite(std::span<const Image<Scalar>> stack) {
  if (stack.empty()) throw std::invalid_argument("zbuffer_composite: empty stack");
  const Index rows = stack.front().rows(), cols = stack.front().cols();
  Composite<Scalar> out{stack.front(), LabelImage::Ones(rows, cols)};
  for (std::size_t k = 1; k < stack.size(); ++k) {
    const auto& layer = stack[k];
    if (layer.rows() != rows || layer.cols() != cols) {
      throw std::invalid_argument("zbuffer_composite: instance rasters differ in size");
    }
    const auto nearer = layer > out.depth;
    out.labels = nearer.select(static_cast<std::int32_t>(k + 1), out.labels);
    out.depth = nearer.select(layer, out.depth);
  }
  return out;
}

}  // namespace insegan::geometry
