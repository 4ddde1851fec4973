#include "insegan/eval.hpp"

#include "insegan/losses.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace insegan {

std::vector<BinaryMask> masks_from_labels(const LabelImage& labels, int instances) {
  std::vector<BinaryMask> masks;
  for (int k = 1; k <= instances; ++k) masks.push_back((labels == k).cast<std::uint8_t>());
  return masks;
}

namespace {

// Overlap counts: rows = GT segments, cols = predicted labels 1..max.
Eigen::MatrixXd overlap_table(const LabelImage& pred, const std::vector<BinaryMask>& gt, Eigen::VectorXd& gt_area,
                              Eigen::VectorXd& pred_area) {
  for (const auto& g : gt) {
    if (g.rows() != pred.rows() || g.cols() != pred.cols()) throw std::invalid_argument("miou: mask sizes differ");
  }
  if (pred.size() > 0 && pred.minCoeff() < 0) throw std::invalid_argument("miou: negative label");
  const int labels = pred.size() > 0 ? pred.maxCoeff() : 0;
  Eigen::MatrixXd overlap = Eigen::MatrixXd::Zero(static_cast<Index>(gt.size()), labels);
  gt_area = Eigen::VectorXd::Zero(static_cast<Index>(gt.size()));
  pred_area = Eigen::VectorXd::Zero(labels);
  for (Index p = 0; p < pred.size(); ++p) {
    const int l = pred.data()[p];
    if (l > 0) pred_area[l - 1] += 1;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (!gt[g].data()[p]) continue;
      gt_area[static_cast<Index>(g)] += 1;
      if (l > 0) overlap(static_cast<Index>(g), l - 1) += 1;
    }
  }
  return overlap;
}

}  // namespace

double miou(const LabelImage& pred, const std::vector<BinaryMask>& gt) {
  Eigen::VectorXd gt_area, pred_area;
  const Eigen::MatrixXd overlap = overlap_table(pred, gt, gt_area, pred_area);
  double sum = 0;
  int segments = 0;
  for (Index g = 0; g < overlap.rows(); ++g) {
    if (gt_area[g] == 0) continue;
    ++segments;
    if (overlap.cols() == 0) continue;
    // Largest overlap; equal overlaps resolve to the higher IoU so the
    // result does not depend on label ids.
    double best_shared = 0, best_iou = 0;
    for (Index p = 0; p < overlap.cols(); ++p) {
      const double shared = overlap(g, p);
      if (shared <= 0 || shared < best_shared) continue;
      const double iou = shared / (gt_area[g] + pred_area[p] - shared);
      if (shared > best_shared || iou > best_iou) {
        best_shared = shared;
        best_iou = iou;
      }
    }
    sum += best_iou;
  }
  if (segments == 0) throw std::invalid_argument("miou: no non-empty ground-truth segment");
  return sum / segments;
}

double miou(const LabelImage& pred, const LabelImage& gt_labels) {
  if (pred.rows() != gt_labels.rows() || pred.cols() != gt_labels.cols()) {
    throw std::invalid_argument("miou: mask sizes differ");
  }
  return miou(pred, masks_from_labels(gt_labels, gt_labels.size() > 0 ? gt_labels.maxCoeff() : 0));
}

double miou_bijective(const LabelImage& pred, const std::vector<BinaryMask>& gt) {
  Eigen::VectorXd gt_area, pred_area;
  const Eigen::MatrixXd overlap = overlap_table(pred, gt, gt_area, pred_area);
  std::vector<Index> rows;
  for (Index g = 0; g < overlap.rows(); ++g) {
    if (gt_area[g] > 0) rows.push_back(g);
  }
  if (rows.empty()) throw std::invalid_argument("miou: no non-empty ground-truth segment");
  const Index size = std::max<Index>(static_cast<Index>(rows.size()), overlap.cols());
  CostMatrix cost = CostMatrix::Zero(size, size);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (Index c = 0; c < overlap.cols(); ++c) {
      const double shared = overlap(rows[r], c);
      const double iou = shared > 0 ? shared / (gt_area[rows[r]] + pred_area[c] - shared) : 0.0;
      cost(static_cast<Index>(r), c) = 1.0 - iou;
    }
    for (Index c = overlap.cols(); c < size; ++c) cost(static_cast<Index>(r), c) = 1.0;
  }
  const Assignment a = hungarian(cost);
  double sum = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) sum += 1.0 - cost(static_cast<Index>(r), a.perm[r]);
  return sum / static_cast<double>(rows.size());
}

LiftedPoints lift_foreground(const DepthMap& depth, float floor, float margin, double depth_scale) {
  LiftedPoints out;
  const float cut = floor + margin;
  float top = cut;
  for (Index i = 0; i < depth.size(); ++i) top = std::max(top, depth.data()[i]);
  double alpha = top > floor ? static_cast<double>(depth.cols()) / (top - floor) : 1.0;
  if (depth_scale > 0) alpha = depth_scale;
  std::vector<Eigen::RowVector3d> rows;
  for (Index r = 0; r < depth.rows(); ++r) {
    for (Index c = 0; c < depth.cols(); ++c) {
      if (!(depth(r, c) > cut)) continue;
      rows.emplace_back(static_cast<double>(c), static_cast<double>(r), alpha * (depth(r, c) - floor));
      out.pixels.emplace_back(r, c);
    }
  }
  out.points.resize(static_cast<Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) out.points.row(static_cast<Index>(i)) = rows[i];
  return out;
}

std::vector<int> kmeans(const Eigen::MatrixX3d& points, int k, std::mt19937_64& rng, int restarts,
                        int max_iterations) {
  const Index count = points.rows();
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (count < k) throw std::invalid_argument("kmeans: fewer points than clusters");
  std::vector<int> best_labels(static_cast<std::size_t>(count), 0);
  double best_inertia = std::numeric_limits<double>::infinity();
  std::vector<int> labels(static_cast<std::size_t>(count));
  for (int restart = 0; restart < std::max(1, restarts); ++restart) {
    // k-means++ seeding
    Eigen::MatrixX3d centers(k, 3);
    std::uniform_int_distribution<Index> pick(0, count - 1);
    centers.row(0) = points.row(pick(rng));
    Eigen::VectorXd d2 = (points.rowwise() - centers.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
      const double total = d2.sum();
      Index chosen = 0;
      if (total > 0) {
        std::uniform_real_distribution<double> u(0.0, total);
        double target = u(rng);
        for (chosen = 0; chosen < count - 1; ++chosen) {
          target -= d2[chosen];
          if (target <= 0) break;
        }
      } else {
        chosen = pick(rng);
      }
      centers.row(c) = points.row(chosen);
      d2 = d2.cwiseMin((points.rowwise() - centers.row(c)).rowwise().squaredNorm());
    }
    // Lloyd iterations
    double inertia = 0;
    for (int it = 0; it < max_iterations; ++it) {
      bool changed = it == 0;
      inertia = 0;
      for (Index i = 0; i < count; ++i) {
        Index nearest = 0;
        const double d = (centers.rowwise() - points.row(i)).rowwise().squaredNorm().minCoeff(&nearest);
        inertia += d;
        if (labels[static_cast<std::size_t>(i)] != static_cast<int>(nearest)) changed = true;
        labels[static_cast<std::size_t>(i)] = static_cast<int>(nearest);
      }
      if (!changed) break;
      Eigen::MatrixX3d sums = Eigen::MatrixX3d::Zero(k, 3);
      Eigen::VectorXd sizes = Eigen::VectorXd::Zero(k);
      for (Index i = 0; i < count; ++i) {
        sums.row(labels[static_cast<std::size_t>(i)]) += points.row(i);
        sizes[labels[static_cast<std::size_t>(i)]] += 1;
      }
      for (int c = 0; c < k; ++c) {
        if (sizes[c] > 0) centers.row(c) = sums.row(c) / sizes[c];
      }
    }
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best_labels = labels;
    }
  }
  return best_labels;
}

LabelImage kmeans_segment(const DepthMap& depth, int n, float floor, std::mt19937_64& rng,
                          const BaselineOptions& options) {
  if (n < 1) throw std::invalid_argument("kmeans_segment: n must be >= 1");
  LabelImage out = LabelImage::Zero(depth.rows(), depth.cols());
  const LiftedPoints lifted = lift_foreground(depth, floor, options.foreground_margin, options.depth_scale);
  const Index count = lifted.points.rows();
  if (count == 0) return out;
  if (count < n) {
    std::clog << "warning: kmeans_segment: " << count << " foreground pixels for " << n
              << " clusters; using a single cluster\n";
    for (const auto& [r, c] : lifted.pixels) out(r, c) = 1;
    return out;
  }
  const std::vector<int> labels = kmeans(lifted.points, n, rng, options.restarts, options.max_iterations);
  for (Index i = 0; i < count; ++i) {
    const auto [r, c] = lifted.pixels[static_cast<std::size_t>(i)];
    out(r, c) = labels[static_cast<std::size_t>(i)] + 1;
  }
  return out;
}

LabelImage spectral_segment(const DepthMap& depth, int n, float floor, const BaselineOptions& options,
                            std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("spectral_segment: n must be >= 1");
  LabelImage out = LabelImage::Zero(depth.rows(), depth.cols());
  const LiftedPoints lifted = lift_foreground(depth, floor, options.foreground_margin, options.depth_scale);
  const Index total = lifted.points.rows();
  if (total == 0) return out;
  if (n == 1 || total <= n) {
    for (const auto& [r, c] : lifted.pixels) out(r, c) = 1;
    return out;
  }

  // Deterministic subsample: evenly strided foreground pixels.
  std::vector<Index> sample;
  const Index cap = std::max<Index>(options.max_points, n);
  if (total <= cap) {
    sample.resize(static_cast<std::size_t>(total));
    std::iota(sample.begin(), sample.end(), Index{0});
  } else {
    for (Index i = 0; i < cap; ++i) sample.push_back(i * total / cap);
  }
  const Index m = static_cast<Index>(sample.size());
  Eigen::MatrixX3d pts(m, 3);
  for (Index i = 0; i < m; ++i) pts.row(i) = lifted.points.row(sample[static_cast<std::size_t>(i)]);

  const Index k = std::min<Index>(options.neighbors, m - 1);
  const Index kb = std::min<Index>(options.bandwidth_neighbor, k);
  Eigen::MatrixXd dist(m, m);
  for (Index i = 0; i < m; ++i) dist.row(i) = (pts.rowwise() - pts.row(i)).rowwise().norm().transpose();
  std::vector<std::vector<Index>> knn(static_cast<std::size_t>(m));
  Eigen::VectorXd sigma(m);
  std::vector<Index> order(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) {
    std::iota(order.begin(), order.end(), Index{0});
    std::partial_sort(order.begin(), order.begin() + k + 1, order.end(), [&](Index a, Index b) {
      return dist(i, a) < dist(i, b) || (dist(i, a) == dist(i, b) && a < b);
    });
    std::vector<Index> neigh;
    for (Index j = 0; j < k + 1 && static_cast<Index>(neigh.size()) < k; ++j) {
      if (order[static_cast<std::size_t>(j)] != i) neigh.push_back(order[static_cast<std::size_t>(j)]);
    }
    sigma[i] = std::max(dist(i, neigh[static_cast<std::size_t>(kb - 1)]), 1e-12);
    knn[static_cast<std::size_t>(i)] = std::move(neigh);
  }
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m, m);
  for (Index i = 0; i < m; ++i) {
    for (const Index j : knn[static_cast<std::size_t>(i)]) {
      const double a = std::exp(-dist(i, j) * dist(i, j) / (sigma[i] * sigma[j]));
      w(i, j) = std::max(w(i, j), a);
      w(j, i) = std::max(w(j, i), a);
    }
  }
  const Eigen::VectorXd degree = w.rowwise().sum();
  std::vector<char> isolated(static_cast<std::size_t>(m), 0);
  Eigen::VectorXd inv_sqrt(m);
  for (Index i = 0; i < m; ++i) {
    isolated[static_cast<std::size_t>(i)] = degree[i] < 1e-12;
    inv_sqrt[i] = isolated[static_cast<std::size_t>(i)] ? 0.0 : 1.0 / std::sqrt(degree[i]);
  }
  const Eigen::MatrixXd normalized = inv_sqrt.asDiagonal() * w * inv_sqrt.asDiagonal();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(normalized);
  Eigen::MatrixXd embedding = solver.eigenvectors().rightCols(n);
  for (Index i = 0; i < m; ++i) {
    const double norm = embedding.row(i).norm();
    if (norm > 0) embedding.row(i) /= norm;
  }

  // k-means++ / Lloyd on the row-normalized embedding.
  std::mt19937_64 rng(seed);
  std::vector<int> labels(static_cast<std::size_t>(m), 0);
  {
    const Index dims = embedding.cols();
    Eigen::MatrixXd centers(n, dims);
    double best = std::numeric_limits<double>::infinity();
    for (int restart = 0; restart < std::max(1, options.restarts); ++restart) {
      std::uniform_int_distribution<Index> pick(0, m - 1);
      centers.row(0) = embedding.row(pick(rng));
      Eigen::VectorXd d2 = (embedding.rowwise() - centers.row(0)).rowwise().squaredNorm();
      for (int c = 1; c < n; ++c) {
        std::discrete_distribution<Index> weighted(d2.data(), d2.data() + d2.size());
        const Index chosen = d2.sum() > 0 ? weighted(rng) : pick(rng);
        centers.row(c) = embedding.row(chosen);
        d2 = d2.cwiseMin((embedding.rowwise() - centers.row(c)).rowwise().squaredNorm());
      }
      std::vector<int> current(static_cast<std::size_t>(m), -1);
      double inertia = 0;
      for (int it = 0; it < options.max_iterations; ++it) {
        bool changed = false;
        inertia = 0;
        for (Index i = 0; i < m; ++i) {
          Index nearest = 0;
          inertia += (centers.rowwise() - embedding.row(i)).rowwise().squaredNorm().minCoeff(&nearest);
          if (current[static_cast<std::size_t>(i)] != nearest) changed = true;
          current[static_cast<std::size_t>(i)] = static_cast<int>(nearest);
        }
        if (!changed) break;
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(n, dims);
        Eigen::VectorXd sizes = Eigen::VectorXd::Zero(n);
        for (Index i = 0; i < m; ++i) {
          sums.row(current[static_cast<std::size_t>(i)]) += embedding.row(i);
          sizes[current[static_cast<std::size_t>(i)]] += 1;
        }
        for (int c = 0; c < n; ++c) {
          if (sizes[c] > 0) centers.row(c) = sums.row(c) / sizes[c];
        }
      }
      if (inertia < best) {
        best = inertia;
        labels = current;
      }
    }
  }

  // Isolated sampled points and unsampled pixels take the label of the
  // nearest connected sampled point.
  std::vector<Index> anchors;
  for (Index i = 0; i < m; ++i) {
    if (!isolated[static_cast<std::size_t>(i)]) anchors.push_back(i);
  }
  if (anchors.empty()) {
    for (const auto& [r, c] : lifted.pixels) out(r, c) = 1;
    return out;
  }
  std::vector<int> sampled_label(static_cast<std::size_t>(total), -1);
  for (Index i = 0; i < m; ++i) {
    if (!isolated[static_cast<std::size_t>(i)]) {
      sampled_label[static_cast<std::size_t>(sample[static_cast<std::size_t>(i)])] = labels[static_cast<std::size_t>(i)];
    }
  }
  for (Index p = 0; p < total; ++p) {
    int label = sampled_label[static_cast<std::size_t>(p)];
    if (label < 0) {
      double best = std::numeric_limits<double>::infinity();
      for (const Index a : anchors) {
        const double d = (pts.row(a) - lifted.points.row(p)).squaredNorm();
        if (d < best) {
          best = d;
          label = labels[static_cast<std::size_t>(a)];
        }
      }
    }
    const auto [r, c] = lifted.pixels[static_cast<std::size_t>(p)];
    out(r, c) = label + 1;
  }
  return out;
}

void EvalReport::add(const std::string& id, double value) {
  if (!(value >= 0.0 && value <= 1.0)) throw std::invalid_argument("EvalReport: mIoU outside [0, 1]");
  scene_ids.push_back(id);
  per_scene.push_back(value);
}

double EvalReport::mean() const {
  if (per_scene.empty()) return 0.0;
  return std::accumulate(per_scene.begin(), per_scene.end(), 0.0) / static_cast<double>(per_scene.size());
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json scenes = nlohmann::json::array();
  for (std::size_t i = 0; i < per_scene.size(); ++i) scenes.push_back({{"scene", scene_ids[i]}, {"miou", per_scene[i]}});
  return {{"mean", mean()},
          {"count", per_scene.size()},
          {"per_class", per_class},
          {"config", config},
          {"checkpoint", checkpoint_id},
          {"scenes", scenes}};
}

std::string EvalReport::summary_table() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << std::left << std::setw(16) << "class" << std::right << std::setw(10) << "mIoU" << '\n';
  for (const auto& [name, value] : per_class) out << std::left << std::setw(16) << name << std::right << std::setw(10) << value << '\n';
  out << std::left << std::setw(16) << "mean" << std::right << std::setw(10) << mean() << "  (" << per_scene.size()
      << " scenes)\n";
  return out.str();
}

}  // namespace insegan
