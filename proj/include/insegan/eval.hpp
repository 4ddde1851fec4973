#pragma once

// Segmentation metric, classical baselines and evaluation reports.

#include "insegan/image.hpp"
#include "insegan/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace insegan {

using BinaryMask = Image<std::uint8_t>;

/// Per-instance masks from a label image (label k -> mask k-1).
std::vector<BinaryMask> masks_from_labels(const LabelImage& labels, int instances);

/// For each non-empty GT segment, IoU with the predicted segment of largest
/// overlap (segments may be reused; label 0 never matches), averaged.
double miou(const LabelImage& pred, const std::vector<BinaryMask>& gt);
double miou(const LabelImage& pred, const LabelImage& gt_labels);

/// One-to-one matching variant for sensitivity checks.
double miou_bijective(const LabelImage& pred, const std::vector<BinaryMask>& gt);

struct BaselineOptions {
  float foreground_margin = 0.05f;  // foreground is depth > floor + margin
  int restarts = 10;                // k-means
  int max_iterations = 100;         // k-means Lloyd iterations per restart
  int neighbors = 10;               // spectral kNN graph
  int bandwidth_neighbor = 7;       // spectral per-point bandwidth
  Index max_points = 2000;          // spectral subsample cap
  double depth_scale = 0;           // α for the depth axis; 0 = map the depth range onto the width
};

/// Points (col, row, α·depth). With depth_scale = 0, α maps the foreground
/// depth range onto the image width.
struct LiftedPoints {
  Eigen::MatrixX3d points;
  std::vector<std::pair<Index, Index>> pixels;  // (row, col)
};
LiftedPoints lift_foreground(const DepthMap& depth, float floor, float margin, double depth_scale = 0);

/// Lloyd's algorithm with k-means++ seeding, best of `restarts` by inertia.
std::vector<int> kmeans(const Eigen::MatrixX3d& points, int k, std::mt19937_64& rng, int restarts = 10,
                        int max_iterations = 100);

LabelImage kmeans_segment(const DepthMap& depth, int n, float floor, std::mt19937_64& rng,
                          const BaselineOptions& options = {});

/// Normalized-cut spectral clustering on a self-tuning kNN graph.
LabelImage spectral_segment(const DepthMap& depth, int n, float floor, const BaselineOptions& options = {},
                            std::uint64_t seed = 0);

struct EvalReport {
  std::vector<std::string> scene_ids;
  std::vector<double> per_scene;
  std::map<std::string, double> per_class;
  nlohmann::json config;
  std::string checkpoint_id;

  void add(const std::string& id, double value);
  double mean() const;
  nlohmann::json to_json() const;
  std::string summary_table() const;
};

}  // namespace insegan
