#include "insegan/autograd.hpp"

#include "insegan/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace insegan::ad {

void Node::accumulate(const Tensorf& g) {
  if (grad.empty()) {
    grad = g;
    grad.reshape(value.shape());
    return;
  }
  if (g.size() != grad.size()) throw std::logic_error("gradient size mismatch for " + shape_string(value.shape()));
  grad.array() += g.array();
}

Var::Var(Tensorf value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensorf Var::grad() const {
  if (node_->has_grad()) return node_->grad;
  return Tensorf::zeros_like(node_->value);
}

Var constant(Tensorf value) { return Var(std::move(value), false); }

Var detach(const Var& v) { return constant(v.value()); }

Var record(Tensorf value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  Var out(std::move(value), false);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.inputs.reserve(inputs.size());
  for (auto& in : inputs) node.inputs.push_back(in.node());
  node.backward = std::move(fn);
  return out;
}

void backward(const Var& root) {
  if (root.value().size() != 1) throw std::invalid_argument("backward: root must be a scalar");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && child->backward && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  root.node()->accumulate(Tensorf(root.shape(), 1.0f));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->has_grad()) node->backward(*node);
  }
}

namespace {

Node& input(Node& n, std::size_t i) { return *n.inputs[i]; }

void require_same_shape(const Var& a, const Var& b, const char* what) {
  require_shape(b.shape(), a.shape(), what);
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensorf out(a.shape(), a.value().array() + b.value().array());
  return record(std::move(out), {a, b}, [](Node& n) {
    for (std::size_t i = 0; i < 2; ++i) {
      if (input(n, i).requires_grad) input(n, i).accumulate(n.grad);
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensorf out(a.shape(), a.value().array() - b.value().array());
  return record(std::move(out), {a, b}, [](Node& n) {
    if (input(n, 0).requires_grad) input(n, 0).accumulate(n.grad);
    if (input(n, 1).requires_grad) input(n, 1).accumulate(Tensorf(n.grad.shape(), -n.grad.array()));
  });
}

Var scale(const Var& a, float s) {
  Tensorf out(a.shape(), a.value().array() * s);
  return record(std::move(out), {a}, [s](Node& n) { input(n, 0).accumulate(Tensorf(n.grad.shape(), n.grad.array() * s)); });
}

Var leaky_relu(const Var& x, float slope) {
  const auto& v = x.value().array();
  Tensorf out(x.shape(), (v > 0.0f).select(v, v * slope));
  return record(std::move(out), {x}, [slope](Node& n) {
    const auto& v = input(n, 0).value.array();
    input(n, 0).accumulate(Tensorf(n.grad.shape(), (v > 0.0f).select(n.grad.array(), n.grad.array() * slope)));
  });
}

Var tanh(const Var& x) {
  Tensorf out(x.shape(), x.value().array().tanh());
  return record(std::move(out), {x}, [](Node& n) {
    const auto& y = n.value.array();
    input(n, 0).accumulate(Tensorf(n.grad.shape(), n.grad.array() * (1.0f - y.square())));
  });
}

Var sigmoid(const Var& x) {
  Tensorf out(x.shape(), 1.0f / (1.0f + (-x.value().array()).exp()));
  return record(std::move(out), {x}, [](Node& n) {
    const auto& y = n.value.array();
    input(n, 0).accumulate(Tensorf(n.grad.shape(), n.grad.array() * y * (1.0f - y)));
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensorf out = x.value().reshaped(std::move(shape));
  return record(std::move(out), {x}, [](Node& n) { input(n, 0).accumulate(n.grad); });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  if (x.value().rank() != 2) throw std::invalid_argument("linear: input must be N×features, got " + shape_string(x.shape()));
  Tensorf out = kernels::linear_forward(x.value(), weight.value(), bias.value());
  return record(std::move(out), {x, weight, bias}, [](Node& n) {
    Node& xn = input(n, 0);
    Node& wn = input(n, 1);
    Node& bn = input(n, 2);
    const Index batch = xn.value.dim(0), in = xn.value.dim(1), outf = wn.value.dim(0);
    const auto gy = n.grad.matrix(batch, outf);
    if (xn.requires_grad) {
      Tensorf gx(xn.value.shape());
      gx.matrix(batch, in).noalias() = gy * wn.value.matrix(outf, in);
      xn.accumulate(gx);
    }
    if (wn.requires_grad) {
      Tensorf gw(wn.value.shape());
      gw.matrix(outf, in).noalias() = gy.transpose() * xn.value.matrix(batch, in);
      wn.accumulate(gw);
    }
    if (bn.requires_grad) {
      Tensorf gb(bn.value.shape());
      gb.array() = gy.colwise().sum().transpose().array();
      bn.accumulate(gb);
    }
  });
}

Var conv(const Var& x, const Var& weight, const Var& bias, const kernels::ConvSpec& spec) {
  Tensorf out = kernels::conv_forward(x.value(), weight.value(), bias.value(), spec);
  return record(std::move(out), {x, weight, bias}, [spec](Node& n) {
    Node& xn = input(n, 0);
    Node& wn = input(n, 1);
    Node& bn = input(n, 2);
    const bool params = wn.requires_grad || bn.requires_grad;
    auto g = kernels::conv_backward(xn.value, wn.value, n.grad, spec, xn.requires_grad, params);
    if (xn.requires_grad) xn.accumulate(g.input);
    if (wn.requires_grad) wn.accumulate(g.weight);
    if (bn.requires_grad) bn.accumulate(g.bias);
  });
}

Var instance_norm(const Var& x) {
  auto r = kernels::instance_norm_forward(x.value());
  auto inv_std = std::move(r.inv_std);
  return record(std::move(r.output), {x}, [inv_std = std::move(inv_std)](Node& n) {
    input(n, 0).accumulate(kernels::instance_norm_backward(n.value, inv_std, n.grad));
  });
}

Var upsample2x(const Var& x) {
  Tensorf out = kernels::upsample2x_forward(x.value());
  return record(std::move(out), {x}, [](Node& n) {
    input(n, 0).accumulate(kernels::upsample2x_backward(input(n, 0).value.shape(), n.grad));
  });
}

Var mean_groups(const Var& x, Index group) {
  const Index rows = x.dim(0);
  if (group < 1 || rows % group != 0) {
    throw std::invalid_argument("mean_groups: batch " + std::to_string(rows) + " not divisible by " + std::to_string(group));
  }
  const Index per = x.value().size() / rows;
  const Index outer = rows / group;
  Shape shape = x.shape();
  shape[0] = outer;
  Tensorf out(shape);
  // Each output is summed in sorted order so the result does not depend on
  // the order of the group members.
  std::vector<float> members(static_cast<std::size_t>(group));
  const float* src = x.value().data();
  for (Index b = 0; b < outer; ++b) {
    for (Index i = 0; i < per; ++i) {
      for (Index k = 0; k < group; ++k) members[static_cast<std::size_t>(k)] = src[(b * group + k) * per + i];
      std::sort(members.begin(), members.end());
      float sum = 0.0f;
      for (float v : members) sum += v;
      out[b * per + i] = sum / static_cast<float>(group);
    }
  }
  return record(std::move(out), {x}, [group, per, outer](Node& n) {
    Tensorf g(input(n, 0).value.shape());
    for (Index b = 0; b < outer; ++b) {
      const auto src = n.grad.array().segment(b * per, per) / static_cast<float>(group);
      for (Index k = 0; k < group; ++k) g.array().segment((b * group + k) * per, per) = src;
    }
    input(n, 0).accumulate(g);
  });
}

Var pose_activation(const Var& x) {
  if (x.value().rank() != 2 || x.dim(1) != 6) throw std::invalid_argument("pose_activation: expected M×6");
  Tensorf out = x.value();
  auto m = out.matrix(x.dim(0), 6);
  m.rightCols<3>() = m.rightCols<3>().array().tanh().matrix();
  return record(std::move(out), {x}, [](Node& n) {
    const Index rows = n.value.dim(0);
    Tensorf g = n.grad;
    auto gm = g.matrix(rows, 6);
    const auto y = n.value.matrix(rows, 6).rightCols<3>().array();
    gm.rightCols<3>() = (gm.rightCols<3>().array() * (1.0f - y.square())).matrix();
    input(n, 0).accumulate(g);
  });
}

Var gather_rows(const Var& x, const std::vector<Index>& index) {
  const Index rows = x.dim(0);
  const Index per = x.value().size() / rows;
  Shape shape = x.shape();
  shape[0] = static_cast<Index>(index.size());
  Tensorf out(shape);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= rows) throw std::out_of_range("gather_rows: index out of range");
    out.array().segment(static_cast<Index>(i) * per, per) = x.value().array().segment(index[i] * per, per);
  }
  return record(std::move(out), {x}, [index, per](Node& n) {
    Tensorf g(input(n, 0).value.shape());
    for (std::size_t i = 0; i < index.size(); ++i) {
      g.array().segment(index[i] * per, per) += n.grad.array().segment(static_cast<Index>(i) * per, per);
    }
    input(n, 0).accumulate(g);
  });
}

Var warp_volume(const Var& volume, const Var& poses) {
  using namespace geometry;
  const Tensorf& vol = volume.value();
  if (vol.rank() != 4) throw std::invalid_argument("warp_volume: volume must be C×D×H×W");
  if (poses.value().rank() != 2 || poses.dim(1) != 6) throw std::invalid_argument("warp_volume: poses must be M×6");
  const Index count = poses.dim(0);
  const Index per = vol.size();
  const VolumeShape shape{vol.dim(1), vol.dim(2), vol.dim(3)};
  const auto pose_matrix = poses.value().matrix(count, 6);

  std::vector<RigidTransform<float>> transforms;
  transforms.reserve(static_cast<std::size_t>(count));
  Tensorf out({count, vol.dim(0), vol.dim(1), vol.dim(2), vol.dim(3)});
  for (Index m = 0; m < count; ++m) {
    const Eigen::Matrix<float, 6, 1> p = pose_matrix.row(m).transpose();
    transforms.push_back(pose_to_transform(PoseVector6<float>::from_vector(p)));
    const auto grid = affine_grid(transforms.back(), shape);
    out.array().segment(m * per, per) = trilinear_sample(vol, grid).array();
  }
  return record(std::move(out), {volume, poses}, [transforms = std::move(transforms), shape, per](Node& n) {
    Node& vn = input(n, 0);
    Node& pn = input(n, 1);
    const Index count = static_cast<Index>(transforms.size());
    Tensorf gvol;
    if (vn.requires_grad) gvol = Tensorf::zeros_like(vn.value);
    Tensorf gpose;
    if (pn.requires_grad) gpose = Tensorf::zeros_like(pn.value);
    const auto pose_matrix = pn.value.matrix(count, 6);
    for (Index m = 0; m < count; ++m) {
      const auto grid = affine_grid(transforms[static_cast<std::size_t>(m)], shape);
      Tensorf gout(vn.value.shape(), n.grad.array().segment(m * per, per));
      auto g = trilinear_sample_backward(vn.value, grid, gout, vn.requires_grad, pn.requires_grad);
      if (vn.requires_grad) gvol.array() += g.volume.array();
      if (pn.requires_grad) {
        const auto& tr = transforms[static_cast<std::size_t>(m)];
        const auto gt = affine_grid_backward(tr, shape, g.coords);
        const Vec3<float> omega = pose_matrix.row(m).head<3>().transpose();
        const Vec3<float> gomega = rotation_backward(omega, gt.R);
        auto row = gpose.matrix(count, 6).row(m);
        row.head<3>() = gomega.transpose();
        row.tail<3>() = gt.t.transpose();
      }
    }
    if (vn.requires_grad) vn.accumulate(gvol);
    if (pn.requires_grad) pn.accumulate(gpose);
  });
}

Var sum_squared_difference(const Var& a, const Var& b) {
  require_same_shape(a, b, "sum_squared_difference");
  const auto diff = (a.value().array() - b.value().array()).eval();
  Tensorf out({1}, 0.0f);
  out[0] = diff.square().sum();
  return record(std::move(out), {a, b}, [diff](Node& n) {
    const float g = n.grad[0] * 2.0f;
    if (input(n, 0).requires_grad) input(n, 0).accumulate(Tensorf(input(n, 0).value.shape(), diff * g));
    if (input(n, 1).requires_grad) input(n, 1).accumulate(Tensorf(input(n, 1).value.shape(), diff * -g));
  });
}

Var mean_squared_error(const Var& a, const Var& b) {
  return scale(sum_squared_difference(a, b), 1.0f / static_cast<float>(a.value().size()));
}

Var mean_absolute_error(const Var& a, const Var& b) {
  require_same_shape(a, b, "mean_absolute_error");
  const auto diff = (a.value().array() - b.value().array()).eval();
  const float count = static_cast<float>(diff.size());
  Tensorf out({1}, diff.abs().sum() / count);
  return record(std::move(out), {a, b}, [diff, count](Node& n) {
    const float g = n.grad[0] / count;
    const Eigen::ArrayXf sign = diff.sign();
    if (input(n, 0).requires_grad) input(n, 0).accumulate(Tensorf(input(n, 0).value.shape(), sign * g));
    if (input(n, 1).requires_grad) input(n, 1).accumulate(Tensorf(input(n, 1).value.shape(), sign * -g));
  });
}

Var mean_log(const Var& scores, float eps, bool complement) {
  const auto& s = scores.value().array();
  const float count = static_cast<float>(s.size());
  const Eigen::ArrayXf clamped = s.max(eps).min(1.0f - eps);
  const Eigen::ArrayXf arg = complement ? (1.0f - clamped).eval() : clamped;
  Tensorf out({1}, arg.log().sum() / count);
  return record(std::move(out), {scores}, [s = Eigen::ArrayXf(s), arg, eps, complement, count](Node& n) {
    const float g = n.grad[0] / count;
    const auto active = (s > eps && s < 1.0f - eps);
    const float sign = complement ? -1.0f : 1.0f;
    Eigen::ArrayXf grad = active.select(sign * g / arg, 0.0f);
    input(n, 0).accumulate(Tensorf(input(n, 0).value.shape(), grad));
  });
}

float item(const Var& scalar) {
  if (scalar.value().size() != 1) throw std::invalid_argument("item: not a scalar");
  return scalar.value()[0];
}

}  // namespace insegan::ad
