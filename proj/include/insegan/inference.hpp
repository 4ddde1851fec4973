#pragma once

// Test-time segmentation: encode, render each instance alone, Z-buffer,
// threshold.

#include "insegan/geometry.hpp"
#include "insegan/image.hpp"
#include "insegan/nets.hpp"

#include <json.hpp>

#include <filesystem>
#include <vector>

namespace insegan {

using DepthStack = std::vector<DepthMap>;

struct SegmentationResult {
  LabelImage mask;              // 0 = background, k = instance k (column k-1 of latents)
  DepthStack instance_depths;   // one rendered image per latent column
  DepthMap composite;           // pointwise max over instance_depths
  LatentSet latents;
};

inline constexpr float kDefaultTauOffset = 0.05f;
inline constexpr int kDefaultMinArea = 8;

/// Threshold just above the dataset's empty-bin depth (normalized units).
inline float default_tau(float background_level) { return background_level + kDefaultTauOffset; }

struct SegmentOptions {
  float tau = kDefaultTauOffset;
  /// Components smaller than this are returned to background; 0 disables.
  int min_area = 0;
  /// Median-filter radius applied to the composite before thresholding; 0 disables.
  int median_radius = 0;
};

/// Labels from a stack: Z-buffer composite, then composite <= tau -> 0.
SegmentationResult segment_stack(DepthStack stack, const SegmentOptions& options);

/// Segments one 1×64×64 (or 64×64) normalized depth image.
SegmentationResult segment(const Tensorf& image, const Generator& generator, const Encoder& encoder,
                           const SegmentOptions& options);

/// Segments N×1×64×64 images, batching the network passes.
std::vector<SegmentationResult> segment_batch(const Tensorf& images, const Generator& generator,
                                              const Encoder& encoder, const SegmentOptions& options,
                                              Index chunk = 32);

/// 4-connected components of each label with fewer than min_area pixels
/// become background.
LabelImage clean_mask(const LabelImage& mask, int min_area);

/// Square-window median, clamped at the borders.
DepthMap median_filter(const DepthMap& image, int radius);

/// Binary PGM (P5), 8-bit labels.
void write_label_pgm(const std::filesystem::path& path, const LabelImage& mask);
LabelImage read_label_pgm(const std::filesystem::path& path);

/// Writes <stem>.pgm and <stem>.json (tau, n, checkpoint id, min_area).
void write_mask_with_sidecar(const std::filesystem::path& stem, const LabelImage& mask, const nlohmann::json& record);

}  // namespace insegan
