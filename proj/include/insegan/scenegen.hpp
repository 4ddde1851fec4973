#pragma once

// Synthetic bin scenes: shapes dropped into a bin and stacked on a height
// field, rendered as top-down depth with ground-truth instance labels; plus
// the on-disk dataset container.
//
// World frame: x runs along image columns, y along image rows, z up. The
// bin covers [0, extent]² and the floor is at height 0.

#include "insegan/eval.hpp"
#include "insegan/image.hpp"
#include "insegan/nets.hpp"
#include "insegan/tensor.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace insegan::scenegen {

inline constexpr Index kNativeSize = 224;
inline constexpr float kFloorDepth = 0.0f;

enum class ShapeKind { kBox, kCylinder, kCone, kLBlock, kTBlock };

ShapeKind parse_shape_kind(std::string_view name);
std::string to_string(ShapeKind kind);

struct ShapeSpec {
  ShapeKind kind = ShapeKind::kBox;
  /// Box: edge lengths. Cylinder/cone: (diameter, diameter, height).
  /// L/T blocks: bounding box, arms one third of the width.
  Eigen::Vector3d dims{1.0, 0.6, 0.4};

  static ShapeSpec preset(ShapeKind kind);
  void validate() const;
  /// Diameter of the bounding sphere about the local origin.
  double diameter() const;
};

/// Half-space description n·q <= d of one convex piece, local frame.
struct ConvexPiece {
  std::vector<Eigen::Vector3d> normals;
  std::vector<double> offsets;
};

std::vector<ConvexPiece> shape_pieces(const ShapeSpec& shape);

/// Where and how an instance is dropped; z is decided by the settle rule.
struct Placement {
  double x = 0, y = 0;
  Eigen::Vector3d omega = Eigen::Vector3d::Zero();  // axis-angle
};

enum class PlacementMode { kRandom, kNonOverlapping };

struct Scene {
  DepthMap depth;           // kNativeSize², floor + stacked heights
  LabelImage labels;        // 0 floor, k = instance k visible
  std::vector<Eigen::Matrix<float, 6, 1>> poses;  // (omega, x, y, z) per instance
  std::vector<bool> occluded;                      // instance has no visible pixel
  std::uint64_t seed = 0;

  std::vector<BinaryMask> gt_masks() const;
};

/// Sequential drops with heightmap stacking. `placements`, when given,
/// override the random draws (one per instance).
Scene drop_and_settle(const ShapeSpec& shape, int n, double bin_extent, std::mt19937_64& rng,
                      PlacementMode mode = PlacementMode::kRandom,
                      const std::vector<Placement>& placements = {});

/// Bilinear resize with pixel-centre alignment.
DepthMap resize_bilinear(const DepthMap& image, Index rows, Index cols);

/// Nearest-neighbour label resize (pixel centres).
LabelImage resize_labels(const LabelImage& labels, Index rows, Index cols);

struct Normalization {
  double mean = 0;
  double std = 1;
  double variance = 1;
};

/// Bilinear resize to 64×64, then (x - mean) / std.
DepthMap normalize_and_resize(const DepthMap& depth, const std::optional<Normalization>& norm);

struct DatasetConfig {
  ShapeSpec shape;
  int instances = 5;
  double bin_factor = 4.0;  // bin extent = factor × shape diameter
  std::uint64_t base_seed = 0;
  Index train_count = 0;
  Index val_count = 0;
  Index test_count = 0;       // plain test scenes (ignored when hard-test selection is on)
  Index hard_test_count = 0;  // keep this many hardest candidates for K-Means
  Index hard_candidates = 0;
  PlacementMode placement = PlacementMode::kRandom;

  void validate() const;
  double bin_extent() const { return bin_factor * shape.diameter(); }
};

struct SceneRecord {
  Index index = 0;
  std::uint64_t seed = 0;
  std::string split;  // train, val or test
  std::vector<bool> occluded;
};

/// Directory of scene_%06d.{depth,mask,pose} files plus manifest.json.
class Dataset {
 public:
  static Dataset open(const std::filesystem::path& dir);

  const std::filesystem::path& dir() const { return dir_; }
  const nlohmann::json& manifest() const { return manifest_; }
  const std::vector<SceneRecord>& scenes() const { return scenes_; }
  Normalization normalization() const;
  int instances() const;
  /// Normalized depth of the empty bin.
  float background_level() const;
  std::string class_name() const;
  double bin_extent() const;
  /// Baseline options with the metric depth scale of this dataset.
  BaselineOptions baseline_options() const;

  std::vector<Index> split(std::string_view name) const;  // positions into scenes()
  Scene load_scene(Index position) const;
  /// N×1×64×64 normalized images; optional additive N(0, sigma) noise.
  Tensorf images(const std::vector<Index>& positions, double noise_sigma = 0.0, std::uint64_t noise_seed = 0) const;
  LabelImage labels64(Index position) const;

 private:
  std::filesystem::path dir_;
  nlohmann::json manifest_;
  std::vector<SceneRecord> scenes_;
};

/// Generates and writes a dataset. Seeds are base_seed + scene index.
Dataset build_dataset(const DatasetConfig& config, const std::filesystem::path& dir);

/// Depth-axis scale that makes the baseline feature space metric: one
/// normalized depth unit becomes std / pixel-size feature units.
double metric_depth_scale(const Normalization& norm, double bin_extent);

/// K-Means baseline on one stored scene (the hard-test criterion).
double kmeans_scene_miou(const DepthMap& normalized, const LabelImage& labels64, int n, float background,
                         std::uint64_t seed, const BaselineOptions& options = {});

void write_scene(const std::filesystem::path& dir, Index index, const Scene& scene);
Scene read_scene(const std::filesystem::path& dir, Index index, int n);

}  // namespace insegan::scenegen
