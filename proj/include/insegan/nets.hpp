#pragma once

// Generator, discriminator and instance pose encoder.
//
// Batched tensors are N×C×H×W (or N×C×D×H×W). Latent sets travel through
// the networks as (B·n)×d matrices whose rows are grouped by sample: rows
// [b·n, (b+1)·n) hold the n instance latents of sample b.

#include "insegan/autograd.hpp"
#include "insegan/kernels.hpp"
#include "insegan/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace insegan {

inline constexpr Index kImageSize = 64;
inline constexpr Index kFeatureSize = 16;
inline constexpr Index kTemplateSize = 4;
inline constexpr Index kVolumeSize = 16;

/// d×n matrix of instance latents; column i belongs to instance i.
using LatentSet = Eigen::MatrixXf;

/// Weight init of the pose MLP: N(0, 0.02²) like every other layer, or
/// N(0, 2/fan_in).
enum class PoseInit { kFixed, kFanIn };

PoseInit parse_pose_init(std::string_view name);
std::string to_string(PoseInit init);

struct NetConfig {
  Index latent_dim = 128;
  Index instances = 5;
  Index template_channels = 64;  // implicit template is channels × 4³
  Index template_hidden = 32;    // after the first 3-D up-block (8³)
  Index template_out = 16;       // channels of the 16³ decoded template
  Index feature_channels = 128;  // instance feature maps and derendered map
  Index projector_hidden = 128;
  Index renderer_hidden0 = 64;
  Index renderer_hidden1 = 32;
  Index critic_base = 64;  // D and E trunks: base, 2·base, 4·base, 8·base
  Index pose_hidden0 = 128;
  Index pose_hidden1 = 64;
  PoseInit pose_init = PoseInit::kFanIn;

  /// Widths from the published architecture.
  static NetConfig full(Index instances = 5);
  /// Width-reduced networks for CPU-scale experiments.
  static NetConfig desk(Index instances = 2);

  void validate() const;
  bool operator==(const NetConfig&) const = default;
};

enum class GeneratorVariant { kTemplate3d, kPlain2d };

GeneratorVariant parse_generator_variant(std::string_view name);
std::string to_string(GeneratorVariant variant);

struct NamedParameter {
  std::string name;
  ad::Var var;
};

struct Linear {
  ad::Var weight, bias;
  ad::Var operator()(const ad::Var& x) const { return ad::linear(x, weight, bias); }
};

struct Conv {
  ad::Var weight, bias;
  kernels::ConvSpec spec;
  ad::Var operator()(const ad::Var& x) const { return ad::conv(x, weight, bias, spec); }
};

/// Owns a flat, ordered list of learnable tensors.
class Module {
 public:
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  Module(Module&&) = default;
  Module& operator=(Module&&) = default;
  virtual ~Module() = default;

  const std::vector<NamedParameter>& parameters() const { return params_; }
  const ad::Var* find_parameter(std::string_view name) const;
  Index parameter_count() const;
  void set_requires_grad(bool on);
  void zero_grad();
  bool all_finite() const;

 protected:
  ad::Var add_parameter(std::string name, Tensorf init);
  Linear make_linear(const std::string& name, Index in, Index out, std::mt19937_64& rng, float stddev = 0.02f);
  Conv make_conv(const std::string& name, Index in, Index out, kernels::ConvSpec spec, bool volumetric,
                 std::mt19937_64& rng);

 private:
  std::vector<NamedParameter> params_;
};

class Generator : public Module {
 public:
  struct Output {
    ad::Var image;   // B×1×64×64
    ad::Var pooled;  // B×F×16×16, the average-pooled instance features
  };

  Generator(const NetConfig& config, GeneratorVariant variant, std::uint64_t seed);

  const NetConfig& config() const { return config_; }
  GeneratorVariant variant() const { return variant_; }

  /// M×d latents -> M×6 poses (axis-angle, tanh-bounded translation).
  ad::Var pose_decode(const ad::Var& z) const;
  /// Decodes the implicit template to a C×16×16×16 feature volume.
  ad::Var template_features() const;
  /// Warps the decoded template by each pose: M×C×16×16×16.
  ad::Var warp(const ad::Var& features, const ad::Var& poses) const;
  /// Folds depth into channels and projects to M×F×16×16.
  ad::Var project(const ad::Var& warped) const;
  /// Full single-instance feature path for M latents.
  ad::Var instance_features(const ad::Var& z) const;
  /// Depth renderer: B×F×16×16 -> B×1×64×64.
  ad::Var render(const ad::Var& features) const;

  /// Renders each sample from the mean of its n instance feature maps.
  Output generate(const ad::Var& latents, Index instances) const;
  /// Renders each latent on its own (no pooling): M×1×64×64.
  ad::Var generate_single(const ad::Var& z) const;

 private:
  struct UpBlock3d {
    Conv conv1, conv2, skip;
  };
  ad::Var up_block(const UpBlock3d& block, const ad::Var& x) const;
  void require_latents(const ad::Var& z) const;

  NetConfig config_;
  GeneratorVariant variant_;

  std::vector<Linear> pose_layers_;
  ad::Var template_;
  UpBlock3d template_up0_, template_up1_;
  Conv project0_, project1_;

  Linear plain_fc_;
  Conv plain0_, plain1_, plain2_;

  Conv render0_, render1_, render_out_;
};

class Discriminator : public Module {
 public:
  Discriminator(const NetConfig& config, std::uint64_t seed);

  const NetConfig& config() const { return config_; }

  /// B×1×64×64 -> B×1 pre-sigmoid logits.
  ad::Var logits(const ad::Var& images) const;
  /// Scores in [0, 1].
  ad::Var discriminate(const ad::Var& images) const;

 private:
  NetConfig config_;
  Conv conv0_, conv1_, conv2_, conv3_;
  Linear head_;
};

class Encoder : public Module {
 public:
  struct Output {
    ad::Var latents;     // (B·n)×d
    ad::Var derendered;  // B×F×16×16
  };

  Encoder(const NetConfig& config, std::uint64_t seed);

  const NetConfig& config() const { return config_; }

  /// Image derenderer: B×1×64×64 -> B×F×16×16.
  ad::Var derender(const ad::Var& images) const;
  /// Instance decoder: B×F×16×16 -> (B·n)×d.
  ad::Var decode_instances(const ad::Var& derendered) const;
  Output encode(const ad::Var& images) const;

 private:
  NetConfig config_;
  Conv conv0_, conv1_, derender_head_;
  Conv conv2_, conv3_;
  Linear head_;
};

/// Column set <-> row-grouped network input.
ad::Var latents_to_var(const LatentSet& z);
LatentSet var_to_latents(const Tensorf& rows, Index sample = 0, Index instances = -1);

/// Single-image conveniences over the batched networks.
Tensorf generate_image(const Generator& g, const LatentSet& z);
Tensorf generate_single_image(const Generator& g, const Eigen::VectorXf& z);
float discriminate_image(const Discriminator& d, const Tensorf& image);

}  // namespace insegan
