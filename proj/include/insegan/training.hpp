#pragma once

// Adversarial training of generator, discriminator and encoder, with
// checkpointing and a metrics log.

#include "insegan/losses.hpp"
#include "insegan/nets.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace insegan {

struct AdamConfig {
  float lr = 2e-4f;
  float beta1 = 0.5f;
  float beta2 = 0.99f;
  float eps = 1e-8f;

  bool operator==(const AdamConfig&) const = default;
};

/// Adam over every parameter of one module. Parameters that received no
/// gradient in a step are left untouched.
class Adam {
 public:
  Adam(const Module& module, AdamConfig config);

  /// Applies one update. Throws and leaves every parameter unchanged if the
  /// update would produce a non-finite value.
  void step();
  void reset();

  std::int64_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }

  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::vector<Tensorf>& first_moments() { return m_; }
  std::vector<Tensorf>& second_moments() { return v_; }
  const std::vector<Tensorf>& first_moments() const { return m_; }
  const std::vector<Tensorf>& second_moments() const { return v_; }
  void set_steps(std::int64_t steps) { steps_ = steps; }

 private:
  AdamConfig config_;
  std::vector<NamedParameter> params_;
  std::vector<Tensorf> m_, v_;
  std::int64_t steps_ = 0;
};

struct TrainConfig {
  NetConfig net = NetConfig::full(5);
  GeneratorVariant variant = GeneratorVariant::kTemplate3d;
  Aligner aligner = Aligner::kOptimalTransport;
  IpotOptions ipot;
  EncoderLossWeights encoder;
  PoseNorm pose_norm = PoseNorm::kL1;
  AdamConfig adam;
  Index batch_size = 128;
  int epochs = 1000;
  std::uint64_t seed = 0;
  bool augment = true;
  int checkpoint_every = 10;  // epochs; 0 keeps only the final checkpoint
  int validate_every = 10;    // epochs; 0 disables validation
  bool auto_reset = false;    // reset optimizers instead of halting on divergence
  int max_resets = 3;

  Index instances() const { return net.instances; }
  void validate() const;
  bool operator==(const TrainConfig&) const;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Everything needed to resume training exactly.
struct TrainState {
  explicit TrainState(const TrainConfig& config);

  TrainConfig config;
  Generator generator;
  Discriminator discriminator;
  Encoder encoder;
  Adam opt_generator, opt_discriminator, opt_encoder;
  std::mt19937_64 rng;
  int epoch = 0;            // completed epochs
  std::int64_t step = 0;    // completed train steps

  void reset_optimizers();
};

struct StepLosses {
  float discriminator = 0, generator = 0;
  float align = 0, intermediate = 0, pose = 0, encoder = 0;

  bool all_finite() const;
};

/// Thrown when a loss or update becomes non-finite. The message names the
/// sub-step, the loss values and the gradient norms.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Hooks for observing the sub-steps of train_step in tests.
struct StepProbe {
  std::function<void(const TrainState&)> before_encoder_update;
  std::function<void(const TrainState&)> after_encoder_update;
};

/// One D -> G -> E update on a B×1×64×64 batch of real images.
StepLosses train_step(const Tensorf& batch, TrainState& state, const StepProbe* probe = nullptr);

/// Independent horizontal and vertical flips, each with probability 1/2.
Tensorf augment(const Tensorf& image, std::mt19937_64& rng);
Tensorf flip_horizontal(const Tensorf& image);
Tensorf flip_vertical(const Tensorf& image);

/// Stacks images [index] of an N×1×64×64 tensor into a batch.
Tensorf gather_batch(const Tensorf& images, const std::vector<Index>& index);

inline constexpr const char* kCheckpointFormat = "insegan-ckpt/1";

/// Writes atomically (temporary file, then rename).
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);
/// Reads only the manifest record of a checkpoint.
nlohmann::json read_checkpoint_manifest(const std::filesystem::path& path);

struct EpochMetrics {
  int epoch = 0;
  StepLosses mean;  // averaged over the epoch's steps
  double wall_time_s = 0;
  std::optional<double> validation_miou;
};

struct FitOptions {
  std::filesystem::path output_dir;
  std::function<double(const TrainState&)> validate;  // returns mIoU
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct FitResult {
  std::vector<EpochMetrics> history;
  std::vector<std::filesystem::path> checkpoints;
  bool diverged = false;
  int resets = 0;
  std::string divergence_message;
};

/// Trains from state.epoch to state.config.epochs on N×1×64×64 images.
/// Writes metrics.csv (and validation.csv when a validator is given) and
/// checkpoints into options.output_dir.
FitResult fit(const Tensorf& images, TrainState& state, const FitOptions& options);

inline constexpr const char* kMetricsHeader = "epoch,loss_d,loss_g,loss_e_align,loss_e_inter,loss_e_pose,wall_time_s";

}  // namespace insegan
