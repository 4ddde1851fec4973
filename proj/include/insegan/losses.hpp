#pragma once

// Training objectives: adversarial losses and the three-part encoder loss,
// with Hungarian / optimal-transport / greedy alignment of latent sets.

#include "insegan/autograd.hpp"
#include "insegan/nets.hpp"

#include <Eigen/Core>

#include <string>
#include <string_view>
#include <vector>

namespace insegan {

/// Pairwise distances, rows index Z columns and columns index Ẑ columns.
using CostMatrix = Eigen::MatrixXd;

/// perm[i] = column matched to row i.
using Permutation = std::vector<Index>;

inline constexpr float kScoreEpsilon = 1e-7f;

struct Assignment {
  Permutation perm;
  double cost = 0.0;
};

/// Minimum-cost assignment. Among equal-cost optima the lexicographically
/// smallest permutation is returned.
Assignment hungarian(const CostMatrix& cost);

struct IpotOptions {
  double beta = 1.0;    // proximal weight
  int iterations = 50;  // outer proximal steps
  int inner = 1;        // Sinkhorn sweeps per outer step
};

struct TransportPlan {
  Eigen::MatrixXd plan;      // marginals 1/n on both sides
  Eigen::MatrixXd log_plan;  // last proximal iterate, never underflows
};

/// Inexact proximal-point optimal transport with uniform marginals,
/// computed in the log domain.
TransportPlan ipot_align(const CostMatrix& cost, const IpotOptions& options = {});

/// Row-argmax; if that is not a permutation, the plan is repaired by a
/// Hungarian solve that maximizes the plan's log-mass.
Permutation round_plan(const TransportPlan& plan);

/// Each row in turn takes its cheapest still-unused column.
Permutation greedy_assignment(const CostMatrix& cost);

enum class Aligner { kOptimalTransport, kHungarian, kGreedy };

Aligner parse_aligner(std::string_view name);
std::string to_string(Aligner aligner);

Permutation align(const CostMatrix& cost, Aligner aligner, const IpotOptions& options = {});

/// D(i, j) = ||z_i - ẑ_j||².
CostMatrix pairwise_squared_distances(const LatentSet& z, const LatentSet& zhat);

/// ||Z - π(Ẑ)||² for one latent set.
double alignment_loss(const LatentSet& z, const LatentSet& zhat, Aligner aligner, const IpotOptions& options = {});

/// Batched alignment loss: rows grouped by sample as in the networks;
/// squared Frobenius distance per sample, averaged over samples. The
/// permutation is a constant of the step, gradients flow into `zhat`.
ad::Var alignment_loss(const Tensorf& z, const ad::Var& zhat, Index instances, Aligner aligner,
                       const IpotOptions& options = {});

/// ||F̄ - G_r⁻¹(x̂)||², mean over entries.
ad::Var intermediate_loss(const ad::Var& pooled, const ad::Var& derendered);

enum class PoseNorm { kL1, kL2 };

/// Distance between a generated image and its regeneration from Ẑ.
ad::Var pose_loss(const ad::Var& generated, const ad::Var& regenerated, PoseNorm norm = PoseNorm::kL1);

struct EncoderLossWeights {
  bool use_alignment = true;
  bool use_intermediate = true;
  bool use_pose = true;
  float lambda_intermediate = 1.0f;
  float lambda_pose = 1.0f;
};

/// Loss sets written as letters: "a" alignment, "i" intermediate, "p" pose
/// (e.g. "aip").
EncoderLossWeights parse_loss_set(std::string_view letters);
std::string loss_set_name(const EncoderLossWeights& weights);

/// L_a + λ₁ L_i + λ₂ L_p with disabled terms dropped. Undefined inputs are
/// allowed for disabled terms.
ad::Var encoder_loss(const ad::Var& alignment, const ad::Var& intermediate, const ad::Var& pose,
                     const EncoderLossWeights& weights = {});

struct AdversarialLosses {
  ad::Var discriminator;  // -E log D(x) - E log(1 - D(G(Z)))
  ad::Var generator;      // -E log D(G(Z))
};

AdversarialLosses adversarial_losses(const ad::Var& real_scores, const ad::Var& fake_scores);

}  // namespace insegan
