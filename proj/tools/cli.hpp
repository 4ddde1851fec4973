#pragma once

// Command-line front end and the experiment helpers it is built from.

#include "insegan/eval.hpp"
#include "insegan/inference.hpp"
#include "insegan/scenegen.hpp"
#include "insegan/training.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace insegan::cli {

/// Runs one command line (args exclude the program name). Returns the exit
/// code; usage errors print help, runtime errors print a JSON record to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Training configuration matched to a dataset's instance count.
TrainConfig default_config(const scenegen::Dataset& data, bool desk_width);

SegmentOptions default_segment_options(const scenegen::Dataset& data);

EvalReport evaluate_model(const scenegen::Dataset& data, const std::string& split, const Generator& generator,
                          const Encoder& encoder, const SegmentOptions& options);

/// "kmeans" or "spectral"; per-scene seeds.
EvalReport evaluate_baseline(const scenegen::Dataset& data, const std::string& split, const std::string& method);

struct RunResult {
  FitResult fit;
  EvalReport report;
};

/// fit() on the train split (validating on val when present), then scores
/// the final model on `eval_split`.
RunResult train_and_evaluate(const scenegen::Dataset& data, const TrainConfig& config,
                             const std::filesystem::path& out_dir, const std::string& eval_split,
                             double noise_sigma = 0.0, std::ostream* log = nullptr);

struct AblationRow {
  std::string name;
  TrainConfig config;
};

/// One row per (variant, loss set), named "<variant>-<losses>".
std::vector<AblationRow> ablation_configs(const TrainConfig& base, const std::vector<std::string>& loss_sets,
                                          const std::vector<std::string>& variants);

/// Input, composite render, segmentation and per-instance renders side by
/// side, one row per scene, as a binary PPM.
void write_plot_grid(const std::filesystem::path& path, const std::vector<DepthMap>& inputs,
                     const std::vector<SegmentationResult>& results);

}  // namespace insegan::cli
