#ifndef SAFRO_CORE_HPP_
#define SAFRO_CORE_HPP_

// Shared domain types and the deterministic random-number contract.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace safro {

/*
 * Errors
 */

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
  using Error::Error;
};

struct DomainError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct NumericalError : Error {
  using Error::Error;
};

inline void require_dim(std::size_t got, std::size_t expected, std::string_view what) {
  if (got != expected) {
    throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(expected) +
                         ", got " + std::to_string(got));
  }
}

/*
 * Random numbers
 *
 * xoshiro256** seeded through splitmix64. All distributions are implemented
 * here rather than taken from <random> so draw sequences do not depend on the
 * standard library vendor.
 */

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

constexpr std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
  return splitmix64(x);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace detail

class SeededRng {
 public:
  SeededRng() : SeededRng(0, 0) {}
  explicit SeededRng(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {
    std::uint64_t x = detail::mix(seed, stream);
    for (auto& s : state_) s = detail::splitmix64(x);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  /// Independent substream keyed by (seed, stream, label). Does not depend on
  /// how many values this generator has already produced.
  SeededRng split(std::string_view label) const {
    return SeededRng(seed_, detail::mix(stream_, detail::fnv1a(label)));
  }
  SeededRng split(std::string_view label, std::uint64_t index) const {
    return SeededRng(seed_, detail::mix(detail::mix(stream_, detail::fnv1a(label)), index));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = detail::rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, n).
  std::size_t below(std::size_t n) {
    if (n == 0) throw DomainError("SeededRng::below: n must be positive");
    // Lemire-style rejection keeps the draw unbiased.
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return static_cast<std::size_t>(r % bound);
    }
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::size_t binomial(std::size_t n, double p) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) k += bernoulli(p) ? 1 : 0;
    return k;
  }

  /// Inverse-CDF draw from a probability vector; tolerates rounding in the tail.
  std::size_t categorical(std::span<const double> probs) {
    const double u = uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    for (std::size_t i = probs.size(); i-- > 0;) {
      if (probs[i] > 0.0) return i;
    }
    return probs.size() - 1;
  }

  bool operator==(const SeededRng& other) const {
    return seed_ == other.seed_ && stream_ == other.stream_ && state_[0] == other.state_[0] &&
           state_[1] == other.state_[1] && state_[2] == other.state_[2] &&
           state_[3] == other.state_[3];
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t state_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline SeededRng split_rng(const SeededRng& parent, std::string_view label) {
  return parent.split(label);
}

/*
 * Domain types
 */

/// Per-item non-negative predictions, one per task.
class ScoreVector {
 public:
  ScoreVector() = default;
  explicit ScoreVector(std::vector<double> values) : values_(std::move(values)) {
    for (double v : values_) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw DomainError("ScoreVector: components must be finite and non-negative");
      }
    }
  }

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t j) const { return values_[j]; }
  std::span<const double> values() const { return values_; }

  bool operator==(const ScoreVector&) const = default;

 private:
  std::vector<double> values_;
};

/// One discrete weight vector: a bin index per task and the weight it resolves to.
struct FusionAction {
  std::vector<std::size_t> bin_indices;
  std::vector<double> weights;

  std::size_t size() const { return bin_indices.size(); }
  double weight_sum() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }

  bool operator==(const FusionAction&) const = default;
};

struct Candidate {
  ScoreVector scores;
  double relevance = 0.0;  // latent, in [0, 1]
  double quality = 0.0;    // latent, in [0, 1]

  bool operator==(const Candidate&) const = default;
};

struct ItemFeedback {
  int click = 0;
  int long_play = 0;
  double duration = 0.0;  // seconds
  double relevance_label = 0.0;

  bool operator==(const ItemFeedback&) const = default;
};

/// One logged query. `candidates` are stored in displayed order, so
/// feedback[i] belongs to candidates[i] at position i + 1.
struct QueryEpisode {
  std::uint64_t user_id = 0;
  std::uint64_t query_id = 0;
  std::vector<double> state_features;
  std::vector<Candidate> candidates;
  std::vector<double> weights;  // fusion weights that produced the displayed order
  std::vector<ItemFeedback> feedback;
  int reformulated = 0;
  double session_gap = 1.0;
  int retained = 0;
  double user_gap_baseline = 1.0;
  int future_clicks = 0;
  int future_long_plays = 0;
  double retention_probability = 0.0;

  bool operator==(const QueryEpisode&) const = default;

  void validate() const {
    if (candidates.empty()) throw DomainError("QueryEpisode: candidates must be non-empty");
    if (!feedback.empty() && feedback.size() != candidates.size()) {
      throw DimensionError("QueryEpisode: feedback must align with candidates");
    }
    if (!(session_gap > 0.0)) throw DomainError("QueryEpisode: session_gap must be > 0");
    if (!(user_gap_baseline > 0.0)) throw DomainError("QueryEpisode: user_gap_baseline must be > 0");
  }
};

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace safro

#endif  // SAFRO_CORE_HPP_
