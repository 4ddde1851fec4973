#pragma once

// Forward and backward kernels for the layers used by the networks.
// Spatial layers accept 2-D (N,C,H,W) and 3-D (N,C,D,H,W) tensors; a 2-D
// tensor is processed as a 3-D one with unit depth.

#include "insegan/tensor.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <stdexcept>

namespace insegan::kernels {

struct ConvSpec {
  Index kernel = 3;
  Index stride = 1;
  Index padding = 1;
};

struct Extent3 {
  Index d = 1, h = 1, w = 1;
  Index size() const { return d * h * w; }
};

template <typename Scalar>
Extent3 spatial_extent(const Tensor<Scalar>& x) {
  if (x.rank() == 4) return {1, x.dim(2), x.dim(3)};
  if (x.rank() == 5) return {x.dim(2), x.dim(3), x.dim(4)};
  throw std::invalid_argument("expected a 2-D or 3-D batched tensor, got " + shape_string(x.shape()));
}

inline Shape batched_shape(Index n, Index c, const Extent3& e, bool volumetric) {
  return volumetric ? Shape{n, c, e.d, e.h, e.w} : Shape{n, c, e.h, e.w};
}

struct ConvGeometry {
  Extent3 in, out;
  Extent3 kernel;
  Index stride, stride_d, padding_hw, padding_d;

  ConvGeometry(const Extent3& input, const ConvSpec& spec, bool volumetric)
      : in(input),
        kernel{volumetric ? spec.kernel : 1, spec.kernel, spec.kernel},
        stride(spec.stride),
        stride_d(volumetric ? spec.stride : 1),
        padding_hw(spec.padding),
        padding_d(volumetric ? spec.padding : 0) {
    if (stride < 1 || spec.kernel < 1 || spec.padding < 0) throw std::invalid_argument("invalid convolution spec");
    out.d = (in.d + 2 * padding_d - kernel.d) / stride_d + 1;
    out.h = (in.h + 2 * padding_hw - kernel.h) / stride + 1;
    out.w = (in.w + 2 * padding_hw - kernel.w) / stride + 1;
    if (out.d < 1 || out.h < 1 || out.w < 1) throw std::invalid_argument("convolution output would be empty");
  }
};

/// Unfolds one sample (C × in) into a (C·k) × out column matrix.
template <typename Scalar>
void im2col(const Scalar* input, Index channels, const ConvGeometry& g, Scalar* cols) {
  const Index out_size = g.out.size();
  Index row = 0;
  for (Index c = 0; c < channels; ++c) {
    const Scalar* plane = input + c * g.in.size();
    for (Index kz = 0; kz < g.kernel.d; ++kz) {
      for (Index ky = 0; ky < g.kernel.h; ++ky) {
        for (Index kx = 0; kx < g.kernel.w; ++kx, ++row) {
          Scalar* dst = cols + row * out_size;
          for (Index oz = 0; oz < g.out.d; ++oz) {
            const Index iz = oz * g.stride_d - g.padding_d + kz;
            for (Index oy = 0; oy < g.out.h; ++oy) {
              const Index iy = oy * g.stride - g.padding_hw + ky;
              Scalar* d = dst + (oz * g.out.h + oy) * g.out.w;
              if (iz < 0 || iz >= g.in.d || iy < 0 || iy >= g.in.h) {
                for (Index ox = 0; ox < g.out.w; ++ox) d[ox] = Scalar(0);
                continue;
              }
              const Scalar* src = plane + (iz * g.in.h + iy) * g.in.w;
              for (Index ox = 0; ox < g.out.w; ++ox) {
                const Index ix = ox * g.stride - g.padding_hw + kx;
                d[ox] = (ix >= 0 && ix < g.in.w) ? src[ix] : Scalar(0);
              }
            }
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters columns back into an input-shaped buffer.
template <typename Scalar>
void col2im(const Scalar* cols, Index channels, const ConvGeometry& g, Scalar* input) {
  const Index out_size = g.out.size();
  Index row = 0;
  for (Index c = 0; c < channels; ++c) {
    Scalar* plane = input + c * g.in.size();
    for (Index kz = 0; kz < g.kernel.d; ++kz) {
      for (Index ky = 0; ky < g.kernel.h; ++ky) {
        for (Index kx = 0; kx < g.kernel.w; ++kx, ++row) {
          const Scalar* src = cols + row * out_size;
          for (Index oz = 0; oz < g.out.d; ++oz) {
            const Index iz = oz * g.stride_d - g.padding_d + kz;
            if (iz < 0 || iz >= g.in.d) continue;
            for (Index oy = 0; oy < g.out.h; ++oy) {
              const Index iy = oy * g.stride - g.padding_hw + ky;
              if (iy < 0 || iy >= g.in.h) continue;
              const Scalar* s = src + (oz * g.out.h + oy) * g.out.w;
              Scalar* dst = plane + (iz * g.in.h + iy) * g.in.w;
              for (Index ox = 0; ox < g.out.w; ++ox) {
                const Index ix = ox * g.stride - g.padding_hw + kx;
                if (ix >= 0 && ix < g.in.w) dst[ix] += s[ox];
              }
            }
          }
        }
      }
    }
  }
}

/// weight: Cout × Cin × k[×k]×k, bias: Cout.
template <typename Scalar>
Tensor<Scalar> conv_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                            const ConvSpec& spec) {
  const bool volumetric = x.rank() == 5;
  const Index n = x.dim(0), cin = x.dim(1), cout = weight.dim(0);
  if (weight.rank() != x.rank() || weight.dim(1) != cin) {
    throw std::invalid_argument("conv: weight " + shape_string(weight.shape()) + " incompatible with input " +
                                shape_string(x.shape()));
  }
  const ConvGeometry g(spatial_extent(x), spec, volumetric);
  const Index k = cin * g.kernel.size();
  const Index p = g.out.size();
  Tensor<Scalar> out(batched_shape(n, cout, g.out, volumetric));
  typename Tensor<Scalar>::RowMatrix cols(k, p);
  const auto w = weight.matrix(cout, k);
  for (Index s = 0; s < n; ++s) {
    im2col(x.data() + s * cin * g.in.size(), cin, g, cols.data());
    typename Tensor<Scalar>::MatrixMap y(out.data() + s * cout * p, cout, p);
    y.noalias() = w * cols;
    y.colwise() += bias.array().matrix();
  }
  return out;
}

template <typename Scalar>
struct ConvGradients {
  Tensor<Scalar> input, weight, bias;
};

template <typename Scalar>
ConvGradients<Scalar> conv_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                                    const Tensor<Scalar>& grad_out, const ConvSpec& spec, bool want_input,
                                    bool want_params) {
  const bool volumetric = x.rank() == 5;
  const Index n = x.dim(0), cin = x.dim(1), cout = weight.dim(0);
  const ConvGeometry g(spatial_extent(x), spec, volumetric);
  const Index k = cin * g.kernel.size();
  const Index p = g.out.size();
  ConvGradients<Scalar> out;
  if (want_input) out.input = Tensor<Scalar>::zeros_like(x);
  if (want_params) {
    out.weight = Tensor<Scalar>::zeros_like(weight);
    out.bias = Tensor<Scalar>({cout});
  }
  typename Tensor<Scalar>::RowMatrix cols(k, p);
  const auto w = weight.matrix(cout, k);
  for (Index s = 0; s < n; ++s) {
    typename Tensor<Scalar>::ConstMatrixMap gy(grad_out.data() + s * cout * p, cout, p);
    if (want_params) {
      im2col(x.data() + s * cin * g.in.size(), cin, g, cols.data());
      out.weight.matrix(cout, k).noalias() += gy * cols.transpose();
      out.bias.array().matrix() += gy.rowwise().sum();
    }
    if (want_input) {
      cols.noalias() = w.transpose() * gy;
      col2im(cols.data(), cin, g, out.input.data() + s * cin * g.in.size());
    }
  }
  return out;
}

/// x: N × in, weight: out × in, bias: out.
template <typename Scalar>
Tensor<Scalar> linear_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias) {
  const Index n = x.dim(0), in = x.dim(1), out_features = weight.dim(0);
  if (weight.dim(1) != in) throw std::invalid_argument("linear: input width mismatch");
  Tensor<Scalar> y({n, out_features});
  auto ym = y.matrix(n, out_features);
  const auto xm = x.matrix(n, in);
  const auto wm = weight.matrix(out_features, in);
  // Row by row, so each sample's result is independent of its batch position.
  for (Index i = 0; i < n; ++i) {
    ym.row(i).noalias() = xm.row(i) * wm.transpose();
  }
  ym.rowwise() += bias.array().matrix().transpose();
  return y;
}

/// Per-sample, per-channel normalization over all spatial positions.
template <typename Scalar>
struct InstanceNormResult {
  Tensor<Scalar> output;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> inv_std;  // one per (sample, channel)
};

template <typename Scalar>
InstanceNormResult<Scalar> instance_norm_forward(const Tensor<Scalar>& x, Scalar eps = Scalar(1e-5)) {
  const Index groups = x.dim(0) * x.dim(1);
  const Index m = x.size() / groups;
  InstanceNormResult<Scalar> r{Tensor<Scalar>::zeros_like(x), {}};
  r.inv_std.resize(groups);
  for (Index g = 0; g < groups; ++g) {
    const auto in = x.array().segment(g * m, m);
    const Scalar mean = in.mean();
    const Scalar var = (in - mean).square().mean();
    const Scalar inv = Scalar(1) / std::sqrt(var + eps);
    r.inv_std[g] = inv;
    r.output.array().segment(g * m, m) = (in - mean) * inv;
  }
  return r;
}

/// Uses the normalized output and saved 1/std to form dL/dx.
template <typename Scalar>
Tensor<Scalar> instance_norm_backward(const Tensor<Scalar>& normalized,
                                      const Eigen::Array<Scalar, Eigen::Dynamic, 1>& inv_std,
                                      const Tensor<Scalar>& grad_out) {
  const Index groups = inv_std.size();
  const Index m = normalized.size() / groups;
  Tensor<Scalar> gx = Tensor<Scalar>::zeros_like(normalized);
  for (Index g = 0; g < groups; ++g) {
    const auto xh = normalized.array().segment(g * m, m);
    const auto gy = grad_out.array().segment(g * m, m);
    const Scalar mean_gy = gy.mean();
    const Scalar mean_gy_xh = (gy * xh).mean();
    gx.array().segment(g * m, m) = inv_std[g] * (gy - mean_gy - xh * mean_gy_xh);
  }
  return gx;
}

/// Nearest-neighbour ×2 upsampling of every spatial axis.
template <typename Scalar>
Tensor<Scalar> upsample2x_forward(const Tensor<Scalar>& x) {
  const bool volumetric = x.rank() == 5;
  const Extent3 e = spatial_extent(x);
  const Extent3 o{volumetric ? 2 * e.d : 1, 2 * e.h, 2 * e.w};
  const Index planes = x.dim(0) * x.dim(1);
  Tensor<Scalar> y(batched_shape(x.dim(0), x.dim(1), o, volumetric));
  for (Index c = 0; c < planes; ++c) {
    const Scalar* src = x.data() + c * e.size();
    Scalar* dst = y.data() + c * o.size();
    for (Index z = 0; z < o.d; ++z) {
      const Index sz = volumetric ? z / 2 : z;
      for (Index yy = 0; yy < o.h; ++yy) {
        const Scalar* row = src + (sz * e.h + yy / 2) * e.w;
        Scalar* out = dst + (z * o.h + yy) * o.w;
        for (Index xx = 0; xx < o.w; ++xx) out[xx] = row[xx / 2];
      }
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> upsample2x_backward(const Shape& input_shape, const Tensor<Scalar>& grad_out) {
  Tensor<Scalar> gx(input_shape);
  const bool volumetric = gx.rank() == 5;
  const Extent3 e = spatial_extent(gx);
  const Extent3 o{volumetric ? 2 * e.d : 1, 2 * e.h, 2 * e.w};
  const Index planes = gx.dim(0) * gx.dim(1);
  for (Index c = 0; c < planes; ++c) {
    Scalar* dst = gx.data() + c * e.size();
    const Scalar* src = grad_out.data() + c * o.size();
    for (Index z = 0; z < o.d; ++z) {
      const Index sz = volumetric ? z / 2 : z;
      for (Index yy = 0; yy < o.h; ++yy) {
        Scalar* row = dst + (sz * e.h + yy / 2) * e.w;
        const Scalar* g = src + (z * o.h + yy) * o.w;
        for (Index xx = 0; xx < o.w; ++xx) row[xx / 2] += g[xx];
      }
    }
  }
  return gx;
}

}  // namespace insegan::kernels
