#ifndef SAFRO_DENSE_HPP_
#define SAFRO_DENSE_HPP_

// Flat parameter storage and hand-written dense layers shared by the policy
// network and the satisfaction reward model.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "safro/core.hpp"
#include "safro/io.hpp"

namespace safro {

/// Named tensors laid out back to back in one flat buffer.
class ParamLayout {
 public:
  struct Entry {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t offset = 0;
    std::size_t size() const { return rows * cols; }
  };

  std::size_t add(std::string name, std::size_t rows, std::size_t cols) {
    entries_.push_back({std::move(name), rows, cols, total_});
    total_ += rows * cols;
    return entries_.size() - 1;
  }

  std::size_t total() const { return total_; }
  std::size_t count() const { return entries_.size(); }
  const Entry& entry(std::size_t i) const { return entries_.at(i); }
  const std::vector<Entry>& entries() const { return entries_; }

  std::span<double> view(std::vector<double>& data, std::size_t i) const {
    const auto& e = entries_.at(i);
    return std::span<double>(data).subspan(e.offset, e.size());
  }
  std::span<const double> view(const std::vector<double>& data, std::size_t i) const {
    const auto& e = entries_.at(i);
    return std::span<const double>(data).subspan(e.offset, e.size());
  }

  std::vector<TensorShape> shapes() const {
    std::vector<TensorShape> out;
    for (const auto& e : entries_) {
      out.push_back({static_cast<std::int32_t>(e.rows), static_cast<std::int32_t>(e.cols)});
    }
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::size_t total_ = 0;
};

/// y = x W + b with W stored row-major as (in x out).
inline void linear_forward(std::span<const double> x, std::span<const double> w,
                           std::span<const double> b, std::span<double> y) {
  const std::size_t in = x.size();
  const std::size_t out = y.size();
  for (std::size_t c = 0; c < out; ++c) y[c] = b.empty() ? 0.0 : b[c];
  for (std::size_t r = 0; r < in; ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    const double* row = w.data() + r * out;
    for (std::size_t c = 0; c < out; ++c) y[c] += xr * row[c];
  }
}

/// Accumulates dW, db and (optionally) dx for y = x W + b.
inline void linear_backward(std::span<const double> x, std::span<const double> w,
                            std::span<const double> dy, std::span<double> dw, std::span<double> db,
                            std::span<double> dx) {
  const std::size_t in = x.size();
  const std::size_t out = dy.size();
  for (std::size_t c = 0; c < out; ++c) {
    if (!db.empty()) db[c] += dy[c];
  }
  for (std::size_t r = 0; r < in; ++r) {
    const double xr = x[r];
    double* drow = dw.data() + r * out;
    const double* row = w.data() + r * out;
    double acc = 0.0;
    for (std::size_t c = 0; c < out; ++c) {
      drow[c] += xr * dy[c];
      acc += row[c] * dy[c];
    }
    if (!dx.empty()) dx[r] += acc;
  }
}

/// Stack of dense layers with rectifier activations. When `relu_output` is
/// false the final layer is left linear.
class Mlp {
 public:
  Mlp() = default;

  Mlp(ParamLayout& layout, const std::string& prefix, std::vector<std::size_t> widths,
      bool relu_output)
      : widths_(std::move(widths)), relu_output_(relu_output) {
    if (widths_.size() < 2) throw ConfigError("Mlp: need at least input and output widths");
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      weight_ids_.push_back(layout.add(prefix + ".w" + std::to_string(l), widths_[l], widths_[l + 1]));
      bias_ids_.push_back(layout.add(prefix + ".b" + std::to_string(l), 1, widths_[l + 1]));
    }
  }

  std::size_t input_dim() const { return widths_.front(); }
  std::size_t output_dim() const { return widths_.back(); }
  std::size_t layers() const { return weight_ids_.size(); }
  const std::vector<std::size_t>& widths() const { return widths_; }
  std::size_t weight_id(std::size_t l) const { return weight_ids_[l]; }
  std::size_t bias_id(std::size_t l) const { return bias_ids_[l]; }

  /// activations[0] = input, activations[l+1] = output of layer l (post-activation).
  struct Cache {
    std::vector<std::vector<double>> activations;
  };

  Cache forward(const ParamLayout& layout, const std::vector<double>& params,
                std::span<const double> x) const {
    require_dim(x.size(), input_dim(), "Mlp input");
    Cache cache;
    cache.activations.reserve(layers() + 1);
    cache.activations.emplace_back(x.begin(), x.end());
    for (std::size_t l = 0; l < layers(); ++l) {
      std::vector<double> y(widths_[l + 1]);
      linear_forward(cache.activations.back(), layout.view(params, weight_ids_[l]),
                     layout.view(params, bias_ids_[l]), y);
      const bool relu = relu_output_ || l + 1 < layers();
      if (relu) {
        for (double& v : y) v = v > 0.0 ? v : 0.0;
      }
      cache.activations.push_back(std::move(y));
    }
    return cache;
  }

  /// Backpropagates d(output) into `grads` (same layout as params); returns d(input).
  std::vector<double> backward(const ParamLayout& layout, const std::vector<double>& params,
                               const Cache& cache, std::span<const double> d_output,
                               std::vector<double>& grads) const {
    require_dim(d_output.size(), output_dim(), "Mlp output gradient");
    std::vector<double> dy(d_output.begin(), d_output.end());
    for (std::size_t l = layers(); l-- > 0;) {
      const bool relu = relu_output_ || l + 1 < layers();
      if (relu) {
        const auto& act = cache.activations[l + 1];
        for (std::size_t c = 0; c < dy.size(); ++c) {
          if (!(act[c] > 0.0)) dy[c] = 0.0;
        }
      }
      std::vector<double> dx(widths_[l], 0.0);
      linear_backward(cache.activations[l], layout.view(params, weight_ids_[l]), dy,
                      layout.view(grads, weight_ids_[l]), layout.view(grads, bias_ids_[l]), dx);
      dy = std::move(dx);
    }
    return dy;
  }

 private:
  std::vector<std::size_t> widths_;
  bool relu_output_ = true;
  std::vector<std::size_t> weight_ids_;
  std::vector<std::size_t> bias_ids_;
};

/// Fills every tensor from Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), one fan_in per tensor.
inline void init_uniform_fan_in(const ParamLayout& layout, std::vector<double>& params,
                                SeededRng& rng,
                                const std::vector<std::size_t>& fan_in_per_tensor) {
  require_dim(fan_in_per_tensor.size(), layout.count(), "init fan_in table");
  params.assign(layout.total(), 0.0);
  for (std::size_t t = 0; t < layout.count(); ++t) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, fan_in_per_tensor[t])));
    for (double& v : layout.view(params, t)) v = rng.uniform(-bound, bound);
  }
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace safro

#endif  // SAFRO_DENSE_HPP_
