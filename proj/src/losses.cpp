#include "insegan/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace insegan {

namespace {

void require_cost(const CostMatrix& cost, const char* what) {
  if (cost.rows() != cost.cols()) throw std::invalid_argument(std::string(what) + ": cost matrix must be square");
  if (!cost.allFinite()) throw std::invalid_argument(std::string(what) + ": cost matrix must be finite");
}

// Shortest augmenting path with potentials; returns row -> column.
Permutation solve_assignment(const CostMatrix& cost) {
  const Index n = cost.rows();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<Index> p(n + 1, 0), way(n + 1, 0);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const Index i0 = p[j0];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const Index j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Permutation perm(n);
  for (Index j = 1; j <= n; ++j) perm[p[j] - 1] = j - 1;
  return perm;
}

double permutation_cost(const CostMatrix& cost, const Permutation& perm) {
  double total = 0.0;
  for (std::size_t i = 0; i < perm.size(); ++i) total += cost(static_cast<Index>(i), perm[i]);
  return total;
}

double logsumexp(const Eigen::Ref<const Eigen::VectorXd>& x) {
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

bool is_permutation(const Permutation& perm) {
  std::vector<char> seen(perm.size(), 0);
  for (const Index j : perm) {
    if (j < 0 || j >= static_cast<Index>(perm.size()) || seen[j]) return false;
    seen[j] = 1;
  }
  return true;
}

}  // namespace

Assignment hungarian(const CostMatrix& cost) {
  require_cost(cost, "hungarian");
  const Index n = cost.rows();
  if (n == 0) return {};
  const Permutation first = solve_assignment(cost);
  const double optimum = permutation_cost(cost, first);
  const double tolerance = 1e-9 * std::max(1.0, std::abs(optimum));

  // Fix rows one at a time to the smallest column that still admits an optimum.
  Permutation perm(n, -1);
  std::vector<char> taken(n, 0);
  double fixed = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Index rest = n - i - 1;
    for (Index j = 0; j < n; ++j) {
      if (taken[j]) continue;
      double total = fixed + cost(i, j);
      if (rest > 0) {
        CostMatrix sub(rest, rest);
        Index c = 0;
        for (Index col = 0; col < n; ++col) {
          if (taken[col] || col == j) continue;
          for (Index r = 0; r < rest; ++r) sub(r, c) = cost(i + 1 + r, col);
          ++c;
        }
        total += permutation_cost(sub, solve_assignment(sub));
      }
      if (total <= optimum + tolerance) {
        perm[i] = j;
        taken[j] = 1;
        fixed += cost(i, j);
        break;
      }
    }
    if (perm[i] < 0) return {first, optimum};
  }
  return {perm, permutation_cost(cost, perm)};
}

TransportPlan ipot_align(const CostMatrix& cost, const IpotOptions& options) {
  require_cost(cost, "ipot_align");
  if (!(options.beta > 0.0) || !std::isfinite(options.beta)) throw std::invalid_argument("ipot_align: beta must be positive");
  if (options.iterations < 1 || options.inner < 1) throw std::invalid_argument("ipot_align: iteration counts must be >= 1");
  const Index n = cost.rows();
  if (n == 0) return {};

  const double log_marginal = -std::log(static_cast<double>(n));
  const Eigen::MatrixXd log_kernel = -cost / options.beta;
  Eigen::MatrixXd log_plan = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd log_row(n), log_col = Eigen::VectorXd::Constant(n, log_marginal);

  const auto row_sweep = [&](const Eigen::MatrixXd& q) {
    for (Index i = 0; i < n; ++i) log_row[i] = log_marginal - logsumexp((q.row(i).transpose() + log_col).eval());
  };
  const auto col_sweep = [&](const Eigen::MatrixXd& q) {
    for (Index j = 0; j < n; ++j) log_col[j] = log_marginal - logsumexp((q.col(j) + log_row).eval());
  };

  for (int t = 0; t < options.iterations; ++t) {
    const Eigen::MatrixXd q = log_kernel + log_plan;
    for (int l = 0; l < options.inner; ++l) {
      row_sweep(q);
      col_sweep(q);
    }
    log_plan = q.colwise() + log_row;
    log_plan.rowwise() += log_col.transpose();
  }

  // Project the iterate onto the transport polytope: shrink rows and columns
  // that carry too much mass, then spread the deficit as a rank-one update.
  const double target = 1.0 / static_cast<double>(n);
  Eigen::MatrixXd plan = log_plan.array().exp().matrix();
  const Eigen::ArrayXd row_scale = (target / plan.rowwise().sum().array()).min(1.0);
  plan = row_scale.matrix().asDiagonal() * plan;
  const Eigen::ArrayXd col_scale = (target / plan.colwise().sum().transpose().array()).min(1.0);
  plan = plan * col_scale.matrix().asDiagonal();
  const Eigen::VectorXd row_deficit = (target - plan.rowwise().sum().array()).max(0.0).matrix();
  const Eigen::VectorXd col_deficit = (target - plan.colwise().sum().transpose().array()).max(0.0).matrix();
  const double total_deficit = row_deficit.sum();
  if (total_deficit > 0.0) plan += row_deficit * col_deficit.transpose() / total_deficit;
  return {plan, log_plan};
}

Permutation round_plan(const TransportPlan& plan) {
  const Index n = plan.log_plan.rows();
  Permutation perm(n);
  for (Index i = 0; i < n; ++i) plan.log_plan.row(i).maxCoeff(&perm[i]);
  if (is_permutation(perm)) return perm;
  const double floor = -1e300;
  const CostMatrix repair = -plan.log_plan.array().max(floor).matrix();
  return hungarian(repair).perm;
}

Permutation greedy_assignment(const CostMatrix& cost) {
  require_cost(cost, "greedy_assignment");
  const Index n = cost.rows();
  Permutation perm(n);
  std::vector<char> taken(n, 0);
  for (Index i = 0; i < n; ++i) {
    Index best = -1;
    for (Index j = 0; j < n; ++j) {
      if (!taken[j] && (best < 0 || cost(i, j) < cost(i, best))) best = j;
    }
    perm[i] = best;
    taken[best] = 1;
  }
  return perm;
}

Aligner parse_aligner(std::string_view name) {
  if (name == "ot") return Aligner::kOptimalTransport;
  if (name == "hungarian") return Aligner::kHungarian;
  if (name == "greedy") return Aligner::kGreedy;
  throw std::invalid_argument("unknown aligner: " + std::string(name));
}

std::string to_string(Aligner aligner) {
  switch (aligner) {
    case Aligner::kOptimalTransport: return "ot";
    case Aligner::kHungarian: return "hungarian";
    case Aligner::kGreedy: return "greedy";
  }
  return "unknown";
}

Permutation align(const CostMatrix& cost, Aligner aligner, const IpotOptions& options) {
  switch (aligner) {
    case Aligner::kOptimalTransport: return round_plan(ipot_align(cost, options));
    case Aligner::kHungarian: return hungarian(cost).perm;
    case Aligner::kGreedy: return greedy_assignment(cost);
  }
  throw std::invalid_argument("align: unknown aligner");
}

CostMatrix pairwise_squared_distances(const LatentSet& z, const LatentSet& zhat) {
  if (z.rows() != zhat.rows() || z.cols() != zhat.cols()) {
    throw std::invalid_argument("pairwise_squared_distances: latent sets differ in shape");
  }
  const Eigen::MatrixXd a = z.cast<double>(), b = zhat.cast<double>();
  CostMatrix d(a.cols(), b.cols());
  for (Index i = 0; i < a.cols(); ++i) {
    for (Index j = 0; j < b.cols(); ++j) d(i, j) = (a.col(i) - b.col(j)).squaredNorm();
  }
  return d;
}

double alignment_loss(const LatentSet& z, const LatentSet& zhat, Aligner aligner, const IpotOptions& options) {
  const CostMatrix d = pairwise_squared_distances(z, zhat);
  const Permutation perm = align(d, aligner, options);
  return permutation_cost(d, perm);
}

ad::Var alignment_loss(const Tensorf& z, const ad::Var& zhat, Index instances, Aligner aligner,
                       const IpotOptions& options) {
  require_shape(zhat.shape(), z.shape(), "alignment_loss");
  if (z.rank() != 2 || instances < 1 || z.dim(0) % instances != 0) {
    throw std::invalid_argument("alignment_loss: expected (B*n)×d latents with n dividing the rows");
  }
  const Index batch = z.dim(0) / instances;
  std::vector<Index> index(static_cast<std::size_t>(z.dim(0)));
  for (Index b = 0; b < batch; ++b) {
    const LatentSet target = var_to_latents(z, b, instances);
    const LatentSet predicted = var_to_latents(zhat.value(), b, instances);
    const Permutation perm = align(pairwise_squared_distances(target, predicted), aligner, options);
    for (Index i = 0; i < instances; ++i) index[b * instances + i] = b * instances + perm[i];
  }
  const ad::Var aligned = ad::gather_rows(zhat, index);
  return ad::scale(ad::sum_squared_difference(aligned, ad::constant(z)), 1.0f / static_cast<float>(batch));
}

ad::Var intermediate_loss(const ad::Var& pooled, const ad::Var& derendered) {
  require_shape(derendered.shape(), pooled.shape(), "intermediate_loss");
  return ad::mean_squared_error(derendered, pooled);
}

ad::Var pose_loss(const ad::Var& generated, const ad::Var& regenerated, PoseNorm norm) {
  require_shape(regenerated.shape(), generated.shape(), "pose_loss");
  return norm == PoseNorm::kL1 ? ad::mean_absolute_error(regenerated, generated)
                               : ad::mean_squared_error(regenerated, generated);
}

EncoderLossWeights parse_loss_set(std::string_view letters) {
  EncoderLossWeights w;
  w.use_alignment = w.use_intermediate = w.use_pose = false;
  for (const char c : letters) {
    bool* flag = c == 'a' ? &w.use_alignment : c == 'i' ? &w.use_intermediate : c == 'p' ? &w.use_pose : nullptr;
    if (flag == nullptr || *flag) {
      throw std::invalid_argument("bad loss set '" + std::string(letters) + "' (letters a, i, p, each at most once)");
    }
    *flag = true;
  }
  if (letters.empty()) throw std::invalid_argument("empty loss set");
  return w;
}

std::string loss_set_name(const EncoderLossWeights& weights) {
  std::string out;
  if (weights.use_alignment) out += 'a';
  if (weights.use_intermediate) out += 'i';
  if (weights.use_pose) out += 'p';
  return out;
}

ad::Var encoder_loss(const ad::Var& alignment, const ad::Var& intermediate, const ad::Var& pose,
                     const EncoderLossWeights& weights) {
  ad::Var total;
  const auto accumulate = [&total](const ad::Var& term) { total = total.defined() ? ad::add(total, term) : term; };
  if (weights.use_alignment) accumulate(alignment);
  if (weights.use_intermediate) accumulate(ad::scale(intermediate, weights.lambda_intermediate));
  if (weights.use_pose) accumulate(ad::scale(pose, weights.lambda_pose));
  if (!total.defined()) throw std::invalid_argument("encoder_loss: every term is disabled");
  return total;
}

AdversarialLosses adversarial_losses(const ad::Var& real_scores, const ad::Var& fake_scores) {
  const ad::Var real_term = ad::mean_log(real_scores, kScoreEpsilon, false);
  const ad::Var fake_term = ad::mean_log(fake_scores, kScoreEpsilon, true);
  return {ad::scale(ad::add(real_term, fake_term), -1.0f),
          ad::scale(ad::mean_log(fake_scores, kScoreEpsilon, false), -1.0f)};
}

}  // namespace insegan
