#ifndef SAFRO_FUSION_HPP_
#define SAFRO_FUSION_HPP_

// Fusion scoring f(s, w) = sum_j w_j ln(1 + s_j), ranking, and the discrete
// weight grid with its feasible subset.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "safro/core.hpp"

namespace safro {

inline double fuse_score(std::span<const double> scores, std::span<const double> weights) {
  require_dim(weights.size(), scores.size(), "fuse_score weights");
  double f = 0.0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (!(scores[j] >= 0.0)) throw DomainError("fuse_score: negative score component");
    f += weights[j] * std::log1p(scores[j]);
  }
  return f;
}

inline double fuse_score(const ScoreVector& s, std::span<const double> weights) {
  return fuse_score(s.values(), weights);
}

struct RankedList {
  std::vector<std::size_t> order;   // order[pos] = candidate index
  std::vector<double> fused_scores;  // indexed by candidate

  std::size_t size() const { return order.size(); }
  bool operator==(const RankedList&) const = default;
};

/// Descending by fused score, ties by ascending candidate index.
inline RankedList rank_by_scores(std::vector<double> fused) {
  if (fused.empty()) throw DomainError("rank: empty candidate list");
  RankedList list;
  list.order.resize(fused.size());
  std::iota(list.order.begin(), list.order.end(), std::size_t{0});
  std::stable_sort(list.order.begin(), list.order.end(),
                   [&](std::size_t a, std::size_t b) { return fused[a] > fused[b]; });
  list.fused_scores = std::move(fused);
  return list;
}

inline RankedList rank(std::span<const ScoreVector> candidates, std::span<const double> weights) {
  if (candidates.empty()) throw DomainError("rank: empty candidate list");
  std::vector<double> fused(candidates.size());
  for (std::size_t n = 0; n < candidates.size(); ++n) fused[n] = fuse_score(candidates[n], weights);
  return rank_by_scores(std::move(fused));
}

inline RankedList rank(std::span<const Candidate> candidates, std::span<const double> weights) {
  if (candidates.empty()) throw DomainError("rank: empty candidate list");
  std::vector<double> fused(candidates.size());
  for (std::size_t n = 0; n < candidates.size(); ++n) {
    fused[n] = fuse_score(candidates[n].scores, weights);
  }
  return rank_by_scores(std::move(fused));
}

/// Checks that `order` is a permutation of 0..n-1.
inline bool is_permutation_of(std::span<const std::size_t> order, std::size_t n) {
  if (order.size() != n) return false;
  std::vector<char> seen(n, 0);
  for (std::size_t idx : order) {
    if (idx >= n || seen[idx]) return false;
    seen[idx] = 1;
  }
  return true;
}

inline bool is_feasible(const FusionAction& a, double tolerance) {
  return std::abs(a.weight_sum() - 1.0) <= tolerance;
}

/// Per-task bin grids plus the sum-to-one tolerance.
class ActionSpace {
 public:
  ActionSpace() = default;

  ActionSpace(std::vector<std::vector<double>> bins, std::vector<std::pair<double, double>> bounds,
              double tolerance)
      : bins_(std::move(bins)), bounds_(std::move(bounds)), tolerance_(tolerance) {
    validate();
  }

  /// Evenly spaced grid of `bin_count` values over [w_min, w_max] for each of `tasks`.
  static ActionSpace uniform_grid(std::size_t tasks, std::size_t bin_count, double w_min,
                                  double w_max, double tolerance) {
    if (tasks == 0 || bin_count == 0) throw ConfigError("ActionSpace: tasks and bins must be >= 1");
    std::vector<double> grid(bin_count);
    for (std::size_t b = 0; b < bin_count; ++b) {
      grid[b] = bin_count == 1 ? w_min
                               : std::min(w_max, w_min + (w_max - w_min) * static_cast<double>(b) /
                                                             static_cast<double>(bin_count - 1));
    }
    return ActionSpace(std::vector<std::vector<double>>(tasks, grid),
                       std::vector<std::pair<double, double>>(tasks, {w_min, w_max}), tolerance);
  }

  std::size_t tasks() const { return bins_.size(); }
  std::size_t bin_count() const { return bins_.empty() ? 0 : bins_.front().size(); }
  double tolerance() const { return tolerance_; }
  const std::vector<std::vector<double>>& bins() const { return bins_; }
  const std::vector<std::pair<double, double>>& bounds() const { return bounds_; }

  FusionAction action(std::span<const std::size_t> bin_indices) const {
    require_dim(bin_indices.size(), tasks(), "ActionSpace::action");
    FusionAction a;
    a.bin_indices.assign(bin_indices.begin(), bin_indices.end());
    a.weights.resize(tasks());
    for (std::size_t j = 0; j < tasks(); ++j) {
      if (bin_indices[j] >= bins_[j].size()) throw DomainError("ActionSpace::action: bin index out of range");
      a.weights[j] = bins_[j][bin_indices[j]];
    }
    return a;
  }

  FusionAction action(std::initializer_list<std::size_t> bin_indices) const {
    return action(std::span<const std::size_t>(bin_indices.begin(), bin_indices.size()));
  }

  /// Total number of grid points B^k, saturating at SIZE_MAX.
  std::size_t grid_size() const {
    std::size_t total = 1;
    for (const auto& b : bins_) {
      if (b.size() != 0 && total > std::numeric_limits<std::size_t>::max() / b.size()) {
        return std::numeric_limits<std::size_t>::max();
      }
      total *= b.size();
    }
    return total;
  }

  bool operator==(const ActionSpace&) const = default;

 private:
  void validate() const {
    if (bins_.empty()) throw ConfigError("ActionSpace: at least one task required");
    require_dim(bounds_.size(), bins_.size(), "ActionSpace bounds");
    if (!(tolerance_ > 0.0)) throw ConfigError("ActionSpace: tolerance must be > 0");
    const std::size_t b0 = bins_.front().size();
    for (std::size_t j = 0; j < bins_.size(); ++j) {
      const auto& b = bins_[j];
      if (b.empty()) throw ConfigError("ActionSpace: empty bin list");
      if (b.size() != b0) throw ConfigError("ActionSpace: all tasks must share the same bin count");
      const auto [lo, hi] = bounds_[j];
      if (!(lo <= hi)) throw ConfigError("ActionSpace: bounds must satisfy w_min <= w_max");
      for (std::size_t i = 0; i < b.size(); ++i) {
        if (b[i] < lo || b[i] > hi) throw ConfigError("ActionSpace: bin value outside bounds");
        if (i > 0 && !(b[i] > b[i - 1])) throw ConfigError("ActionSpace: bins must be strictly ascending");
      }
    }
  }

  std::vector<std::vector<double>> bins_;
  std::vector<std::pair<double, double>> bounds_;
  double tolerance_ = 0.01;
};

inline constexpr std::size_t kDefaultEnumerationCap = 10'000'000;

/// Iterates the Cartesian grid in lexicographic bin-index order.
template <typename Visitor>
void for_each_action(const ActionSpace& space, Visitor&& visit,
                     std::size_t cap = kDefaultEnumerationCap) {
  if (space.grid_size() > cap) throw DomainError("enumerate: grid size exceeds enumeration cap");
  const std::size_t k = space.tasks();
  std::vector<std::size_t> idx(k, 0);
  for (;;) {
    visit(space.action(idx));
    std::size_t j = k;
    while (j > 0) {
      --j;
      if (++idx[j] < space.bins()[j].size()) break;
      idx[j] = 0;
      if (j == 0) return;
    }
  }
}

inline std::vector<FusionAction> enumerate_feasible(const ActionSpace& space,
                                                    std::size_t cap = kDefaultEnumerationCap) {
  std::vector<FusionAction> out;
  for_each_action(
      space,
      [&](FusionAction a) {
        if (is_feasible(a, space.tolerance())) out.push_back(std::move(a));
      },
      cap);
  return out;
}

}  // namespace safro

#endif  // SAFRO_FUSION_HPP_
