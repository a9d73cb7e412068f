#ifndef SAFRO_TESTS_SUPPORT_HPP_
#define SAFRO_TESTS_SUPPORT_HPP_

// Generators and brute-force oracles shared by the tests. Oracles here are
// written independently of the library code they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "safro/core.hpp"
#include "safro/drpo.hpp"
#include "safro/fusion.hpp"
#include "safro/policy.hpp"

namespace safro::support {

inline std::vector<double> random_vector(SeededRng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

/// Gains with frequent ties (small integer grid) so tie handling is exercised.
inline std::vector<double> random_gains(SeededRng& rng, std::size_t n) {
  std::vector<double> g(n);
  for (double& x : g) x = static_cast<double>(rng.below(4));
  return g;
}

inline RankedList identity_list(std::size_t n) {
  RankedList l;
  l.order.resize(n);
  std::iota(l.order.begin(), l.order.end(), std::size_t{0});
  l.fused_scores.assign(n, 0.0);
  return l;
}

inline RankedList list_from_order(std::vector<std::size_t> order) {
  RankedList l;
  l.fused_scores.assign(order.size(), 0.0);
  l.order = std::move(order);
  return l;
}

/// DCG with the 1/log2(pos + 1) discount, evaluated directly.
inline double dcg_oracle(const std::vector<std::size_t>& order, const std::vector<double>& gains, std::size_t cutoff) {
  double d = 0.0;
  for (std::size_t p = 0; p < std::min(cutoff, order.size()); ++p) {
    d += gains[order[p]] / std::log2(static_cast<double>(p) + 2.0);
  }
  return d;
}

/// NDCG whose ideal DCG is found by trying every permutation.
inline double ndcg_permutation_oracle(const std::vector<std::size_t>& order, const std::vector<double>& gains,
                                      std::size_t cutoff) {
  std::vector<std::size_t> perm(gains.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = 0.0;
  do {
    best = std::max(best, dcg_oracle(perm, gains, cutoff));
  } while (std::next_permutation(perm.begin(), perm.end()));
  if (best == 0.0) return 0.0;
  return dcg_oracle(order, gains, cutoff) / best;
}

inline std::vector<std::size_t> random_permutation(SeededRng& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

/// Calls fn(indices) for every element of {0..B-1}^k.
inline void for_each_joint(std::size_t k, std::size_t b, const std::function<void(const std::vector<std::size_t>&)>& fn) {
  std::vector<std::size_t> idx(k, 0);
  for (;;) {
    fn(idx);
    std::size_t t = k;
    while (t > 0) {
      --t;
      if (++idx[t] < b) break;
      idx[t] = 0;
      if (t == 0) return;
    }
    if (k == 0) return;
  }
}

/// Policy with parameters drawn uniformly from [-scale, scale].
inline Policy random_policy(SeededRng& rng, std::size_t input_dim, std::size_t k, std::size_t b, std::size_t hidden,
                            std::size_t relation_dim, bool traf = true,
                            FeasibilityMode mode = FeasibilityMode::soft, double scale = 0.8) {
  PolicyShape shape;
  shape.input_dim = input_dim;
  shape.hidden = hidden;
  shape.layers = 2;
  shape.relation_dim = relation_dim;
  shape.traf = traf;
  // Hard mode needs feasible points, which the 0..1 grid always has.
  const bool hard = mode == FeasibilityMode::hard;
  const double w_max = hard ? 1.0 : std::max(0.45, 2.0 / static_cast<double>(k));
  auto space = ActionSpace::uniform_grid(k, b, hard ? 0.0 : 0.05, w_max, 0.01);
  Policy p(shape, space, mode);
  for (double& v : p.params()) v = rng.uniform(-scale, scale);
  return p;
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

/// Scalar c_logp * log_prob(a | x) + c_ent * entropy(x) used by gradient checks.
inline double policy_objective(const Policy& p, std::span<const double> x, const FusionAction& a, double c_logp,
                               double c_ent) {
  const auto out = p.forward(x);
  return c_logp * p.log_prob(out, a) + c_ent * p.entropy(out);
}

/// Largest per-block relative error ||analytic - fd|| / max(||fd||, floor)
/// between backward() and central differences with step h (near the cube
/// root of machine epsilon, which balances truncation against roundoff).
inline double policy_gradient_block_error(Policy& p, std::span<const double> x, const FusionAction& a,
                                          double c_logp, double c_ent, double h = 6e-6,
                                          double floor = 1e-6) {
  auto analytic = p.zero_grads();
  p.backward(x, a, c_logp, c_ent, analytic);
  auto& params = p.params();
  double worst = 0.0;
  for (const auto& e : p.layout().entries()) {
    double diff = 0.0, norm = 0.0;
    for (std::size_t t = e.offset; t < e.offset + e.size(); ++t) {
      const double saved = params[t];
      params[t] = saved + h;
      const double up = policy_objective(p, x, a, c_logp, c_ent);
      params[t] = saved - h;
      const double down = policy_objective(p, x, a, c_logp, c_ent);
      params[t] = saved;
      const double fd = (up - down) / (2.0 * h);
      diff += (fd - analytic[t]) * (fd - analytic[t]);
      norm += fd * fd;
    }
    worst = std::max(worst, std::sqrt(diff) / std::max(std::sqrt(norm), floor));
  }
  return worst;
}

/// Term I (group advantages) and Term II (C^i times summed score gradients)
/// of the unclipped dual-advantage gradient, each accumulated one sample at
/// a time through Policy::backward. Both carry the 1 / (B_q G) surrogate scale.
struct GradientTerms {
  std::vector<double> term1;
  std::vector<double> term2;
};

inline GradientTerms dual_gradient_terms(const Policy& p, const std::vector<std::vector<double>>& states,
                                         const std::vector<FusionAction>& actions, const AdvantageBatch& adv) {
  const std::size_t bq = adv.groups;
  const std::size_t g = adv.group_size;
  const double scale = 1.0 / static_cast<double>(bq * g);
  GradientTerms t{p.zero_grads(), p.zero_grads()};
  for (std::size_t i = 0; i < bq; ++i) {
    auto score_sum = p.zero_grads();
    for (std::size_t s = 0; s < g; ++s) {
      p.backward(states[i], actions[i * g + s], scale * adv.group_adv(i, s), 0.0, t.term1);
      p.backward(states[i], actions[i * g + s], 1.0, 0.0, score_sum);
    }
    for (std::size_t q = 0; q < score_sum.size(); ++q) t.term2[q] += scale * adv.shifts[i] * score_sum[q];
  }
  return t;
}

}  // namespace safro::support

#endif  // SAFRO_TESTS_SUPPORT_HPP_
