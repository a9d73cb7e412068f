#ifndef SAFRO_POLICY_HPP_
#define SAFRO_POLICY_HPP_

// Task-relation-aware fusion policy.
//
//   h        = MLP(x)                                (rectifier layers)
//   z_i      = h Wz_i + bz_i                         (B bin logits per task)
//   u_i      = h Wu_i                                (relation embedding, dim d)
//   e_ij     = <u_i, u_j>,  att_ij = softmax_j(e_ij)
//   gate_i   = logistic(h v_i + c_i)
//   z~_i     = gate_i * z_i + sum_j att_ij * z_j
//   pi_i     = softmax(z~_i)
//
// Actions are one bin per task drawn independently from pi_i ("soft" mode),
// or from the product distribution renormalized over the feasible grid
// ("hard" mode). With TRAF disabled z~_i = z_i.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "safro/core.hpp"
#include "safro/dense.hpp"
#include "safro/fusion.hpp"
#include "safro/io.hpp"

namespace safro {

enum class FeasibilityMode { soft, hard };

struct PolicyShape {
  std::size_t input_dim = 0;
  std::size_t hidden = 32;         // d_h
  std::size_t layers = 2;          // L
  std::size_t relation_dim = 8;    // d
  bool traf = true;

  bool operator==(const PolicyShape&) const = default;
};

/// Row-major (k x B) logits / probabilities plus TRAF diagnostics.
struct PolicyOutput {
  std::size_t tasks = 0;
  std::size_t bins = 0;
  std::vector<double> refined_logits;
  std::vector<double> probs;
  std::vector<double> attention;  // k x k, row-stochastic
  std::vector<double> gates;      // k

  std::span<const double> task_probs(std::size_t i) const {
    return std::span<const double>(probs).subspan(i * bins, bins);
  }
  std::span<const double> task_logits(std::size_t i) const {
    return std::span<const double>(refined_logits).subspan(i * bins, bins);
  }
};

struct SampledAction {
  FusionAction action;
  double log_prob = 0.0;
};

namespace detail {

inline void softmax_inplace(std::span<double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

inline double log_sum_exp(std::span<const double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - mx);
  return mx + std::log(sum);
}

inline double xlogx(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

}  // namespace detail

class Policy {
 public:
  Policy() = default;

  Policy(PolicyShape shape, ActionSpace space, FeasibilityMode mode = FeasibilityMode::soft)
      : shape_(shape), space_(std::move(space)), mode_(mode) {
    if (shape_.input_dim == 0 || shape_.hidden == 0 || shape_.layers == 0 || shape_.relation_dim == 0) {
      throw ConfigError("policy: input_dim, hidden, layers and relation_dim must be >= 1");
    }
    const std::size_t k = tasks();
    const std::size_t b = bins();
    std::vector<std::size_t> widths{shape_.input_dim};
    for (std::size_t l = 0; l < shape_.layers; ++l) widths.push_back(shape_.hidden);
    encoder_ = Mlp(layout_, "encoder", widths, /*relu_output=*/true);
    for (std::size_t i = 0; i < k; ++i) {
      const auto s = std::to_string(i);
      head_w_.push_back(layout_.add("head.w" + s, shape_.hidden, b));
      head_b_.push_back(layout_.add("head.b" + s, 1, b));
      rel_w_.push_back(layout_.add("relation.w" + s, shape_.hidden, shape_.relation_dim));
      gate_w_.push_back(layout_.add("gate.w" + s, shape_.hidden, 1));
      gate_b_.push_back(layout_.add("gate.b" + s, 1, 1));
    }
    params_.assign(layout_.total(), 0.0);
    if (mode_ == FeasibilityMode::hard) {
      feasible_ = enumerate_feasible(space_);
      if (feasible_.empty()) throw ConfigError("policy: hard feasibility mode with an empty feasible set");
    }
  }

  /// Uniform(+-1/sqrt(fan_in)) initialization from the given substream.
  static Policy initialized(PolicyShape shape, ActionSpace space, FeasibilityMode mode, SeededRng rng) {
    Policy p(shape, std::move(space), mode);
    std::vector<std::size_t> fan_in;
    for (std::size_t l = 0; l < p.encoder_.layers(); ++l) {
      fan_in.push_back(p.encoder_.widths()[l]);
      fan_in.push_back(p.encoder_.widths()[l]);
    }
    for (std::size_t i = 0; i < p.tasks(); ++i) {
      for (int t = 0; t < 5; ++t) fan_in.push_back(shape.hidden);
    }
    init_uniform_fan_in(p.layout_, p.params_, rng, fan_in);
    return p;
  }

  const PolicyShape& shape() const { return shape_; }
  const ActionSpace& space() const { return space_; }
  FeasibilityMode mode() const { return mode_; }
  const std::vector<FusionAction>& feasible_actions() const { return feasible_; }
  std::size_t tasks() const { return space_.tasks(); }
  std::size_t bins() const { return space_.bin_count(); }
  const ParamLayout& layout() const { return layout_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::vector<double> zero_grads() const { return std::vector<double>(layout_.total(), 0.0); }

  /*
   * Forward
   */

  struct Cache {
    Mlp::Cache encoder;
    std::vector<double> base_logits;  // k x B
    std::vector<double> embeddings;   // k x d
    PolicyOutput out;
  };

  Cache forward_cached(std::span<const double> x) const {
    require_dim(x.size(), shape_.input_dim, "policy state features");
    const std::size_t k = tasks();
    const std::size_t b = bins();
    const std::size_t d = shape_.relation_dim;
    Cache c;
    c.encoder = encoder_.forward(layout_, params_, x);
    const auto& h = c.encoder.activations.back();
    check_finite(h, "encoder output");

    c.base_logits.assign(k * b, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      linear_forward(h, layout_.view(params_, head_w_[i]), layout_.view(params_, head_b_[i]),
                     std::span<double>(c.base_logits).subspan(i * b, b));
    }
    check_finite(c.base_logits, "base logit heads");

    auto& out = c.out;
    out.tasks = k;
    out.bins = b;
    out.attention.assign(k * k, 0.0);
    out.gates.assign(k, 0.0);
    if (shape_.traf) {
      c.embeddings.assign(k * d, 0.0);
      for (std::size_t i = 0; i < k; ++i) {
        linear_forward(h, layout_.view(params_, rel_w_[i]), {}, std::span<double>(c.embeddings).subspan(i * d, d));
        double pre = 0.0;
        linear_forward(h, layout_.view(params_, gate_w_[i]), layout_.view(params_, gate_b_[i]),
                       std::span<double>(&pre, 1));
        out.gates[i] = sigmoid(pre);
      }
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          double e = 0.0;
          for (std::size_t t = 0; t < d; ++t) e += c.embeddings[i * d + t] * c.embeddings[j * d + t];
          out.attention[i * k + j] = e;
        }
        detail::softmax_inplace(std::span<double>(out.attention).subspan(i * k, k));
      }
      check_finite(out.attention, "task-relation attention");
      out.refined_logits.assign(k * b, 0.0);
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t t = 0; t < b; ++t) {
          double v = out.gates[i] * c.base_logits[i * b + t];
          for (std::size_t j = 0; j < k; ++j) v += out.attention[i * k + j] * c.base_logits[j * b + t];
          out.refined_logits[i * b + t] = v;
        }
      }
    } else {
      for (std::size_t i = 0; i < k; ++i) out.attention[i * k + i] = 1.0;
      out.refined_logits = c.base_logits;
    }
    check_finite(out.refined_logits, "refined logits");
    out.probs = out.refined_logits;
    for (std::size_t i = 0; i < k; ++i) detail::softmax_inplace(std::span<double>(out.probs).subspan(i * b, b));
    return c;
  }

  PolicyOutput forward(std::span<const double> x) const { return forward_cached(x).out; }

  /*
   * Distribution over actions
   */

  /// Sum over tasks of ln pi_i(bin_i); the unnormalized product-distribution term.
  double factorized_log_prob(const PolicyOutput& out, std::span<const std::size_t> bin_indices) const {
    require_dim(bin_indices.size(), out.tasks, "policy action");
    double lp = 0.0;
    for (std::size_t i = 0; i < out.tasks; ++i) {
      if (bin_indices[i] >= out.bins) throw DomainError("log_prob: bin index out of range");
      lp += std::log(out.probs[i * out.bins + bin_indices[i]]);
    }
    return lp;
  }

  double log_prob(const PolicyOutput& out, const FusionAction& a) const {
    const double lp = factorized_log_prob(out, a.bin_indices);
    if (mode_ == FeasibilityMode::soft) return lp;
    if (!is_feasible(a, space_.tolerance())) return -std::numeric_limits<double>::infinity();
    return lp - hard_log_normalizer(out);
  }

  SampledAction sample(const PolicyOutput& out, SeededRng& rng) const {
    if (mode_ == FeasibilityMode::soft) {
      std::vector<std::size_t> idx(out.tasks);
      for (std::size_t i = 0; i < out.tasks; ++i) idx[i] = rng.categorical(out.task_probs(i));
      auto a = space_.action(idx);
      return {a, factorized_log_prob(out, idx)};
    }
    const auto probs = hard_probabilities(out);
    const std::size_t n = rng.categorical(probs);
    return {feasible_[n], std::log(probs[n])};
  }

  /// Mode of the distribution: per-task argmax (soft) or joint argmax over the feasible set (hard).
  FusionAction greedy(const PolicyOutput& out) const {
    if (mode_ == FeasibilityMode::soft) {
      std::vector<std::size_t> idx(out.tasks);
      for (std::size_t i = 0; i < out.tasks; ++i) {
        const auto p = out.task_probs(i);
        idx[i] = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
      }
      return space_.action(idx);
    }
    const auto probs = hard_probabilities(out);
    return feasible_[static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin())];
  }

  double entropy(const PolicyOutput& out) const {
    if (mode_ == FeasibilityMode::soft) {
      double h = 0.0;
      for (std::size_t i = 0; i < out.tasks; ++i) {
        for (double p : out.task_probs(i)) h -= detail::xlogx(p);
      }
      return h;
    }
    double h = 0.0;
    for (double p : hard_probabilities(out)) h -= detail::xlogx(p);
    return h;
  }

  /*
   * Backward
   */

  /// d(c_logp * log_prob(a) + c_ent * entropy) / d(refined logits), row-major k x B.
  std::vector<double> refined_logit_gradient(const PolicyOutput& out, const FusionAction& a,
                                             double c_logp, double c_ent) const {
    const std::size_t k = out.tasks;
    const std::size_t b = out.bins;
    require_dim(a.bin_indices.size(), k, "policy action");
    std::vector<double> g(k * b, 0.0);
    if (mode_ == FeasibilityMode::soft) {
      for (std::size_t i = 0; i < k; ++i) {
        const auto p = out.task_probs(i);
        double h_i = 0.0;
        for (double q : p) h_i -= detail::xlogx(q);
        for (std::size_t t = 0; t < b; ++t) {
          const double onehot = a.bin_indices[i] == t ? 1.0 : 0.0;
          double v = 0.0;
          if (c_logp != 0.0) v += c_logp * (onehot - p[t]);
          if (c_ent != 0.0 && p[t] > 0.0) v -= c_ent * p[t] * (std::log(p[t]) + h_i);
          g[i * b + t] = v;
        }
      }
      return g;
    }
    // Hard mode: p(a) = prod_i pi_i(a_i) / Z over the feasible set.
    // d log p(a) / d z~_i[t] = 1[a_i = t] - q_i[t] with q the marginals of p,
    // d H / d z~_i[t]        = -(M_i[t] + q_i[t] H), M_i[t] = sum_{a: a_i = t} p log p.
    const auto probs = hard_probabilities(out);
    std::vector<double> marg(k * b, 0.0);
    std::vector<double> m(k * b, 0.0);
    double h = 0.0;
    for (std::size_t n = 0; n < feasible_.size(); ++n) {
      const double p = probs[n];
      const double plogp = detail::xlogx(p);
      h -= plogp;
      for (std::size_t i = 0; i < k; ++i) {
        marg[i * b + feasible_[n].bin_indices[i]] += p;
        m[i * b + feasible_[n].bin_indices[i]] += plogp;
      }
    }
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t t = 0; t < b; ++t) {
        const double onehot = a.bin_indices[i] == t ? 1.0 : 0.0;
        g[i * b + t] = c_logp * (onehot - marg[i * b + t]) - c_ent * (m[i * b + t] + marg[i * b + t] * h);
      }
    }
    return g;
  }

  /// Backpropagates a refined-logit gradient through TRAF, heads and encoder
  /// and accumulates into `grads`.
  void backward_from_refined(const Cache& c, std::span<const double> d_refined,
                             std::vector<double>& grads) const {
    const std::size_t k = tasks();
    const std::size_t b = bins();
    const std::size_t d = shape_.relation_dim;
    require_dim(d_refined.size(), k * b, "refined logit gradient");
    require_dim(grads.size(), layout_.total(), "policy gradient buffer");
    const auto& h = c.encoder.activations.back();
    const auto& out = c.out;
    std::vector<double> dh(shape_.hidden, 0.0);
    std::vector<double> dz(k * b, 0.0);

    if (shape_.traf) {
      const auto& att = out.attention;
      const auto& z = c.base_logits;
      std::vector<double> d_att(k * k, 0.0);
      std::vector<double> d_gate(k, 0.0);
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t t = 0; t < b; ++t) {
          const double g = d_refined[i * b + t];
          dz[i * b + t] += out.gates[i] * g;
          d_gate[i] += g * z[i * b + t];
          for (std::size_t j = 0; j < k; ++j) {
            dz[j * b + t] += att[i * k + j] * g;
            d_att[i * k + j] += g * z[j * b + t];
          }
        }
      }
      // Row softmax backward, then e_ij = <u_i, u_j>.
      std::vector<double> d_e(k * k, 0.0);
      for (std::size_t i = 0; i < k; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += att[i * k + j] * d_att[i * k + j];
        for (std::size_t j = 0; j < k; ++j) d_e[i * k + j] = att[i * k + j] * (d_att[i * k + j] - dot);
      }
      std::vector<double> du(k * d, 0.0);
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const double s = d_e[i * k + j] + d_e[j * k + i];
          for (std::size_t t = 0; t < d; ++t) du[i * d + t] += s * c.embeddings[j * d + t];
        }
      }
      for (std::size_t i = 0; i < k; ++i) {
        linear_backward(h, layout_.view(params_, rel_w_[i]), std::span<const double>(du).subspan(i * d, d),
                        layout_.view(grads, rel_w_[i]), {}, dh);
        const double g = out.gates[i];
        const double d_pre = d_gate[i] * g * (1.0 - g);
        linear_backward(h, layout_.view(params_, gate_w_[i]), std::span<const double>(&d_pre, 1),
                        layout_.view(grads, gate_w_[i]), layout_.view(grads, gate_b_[i]), dh);
      }
    } else {
      std::copy(d_refined.begin(), d_refined.end(), dz.begin());
    }

    for (std::size_t i = 0; i < k; ++i) {
      linear_backward(h, layout_.view(params_, head_w_[i]), std::span<const double>(dz).subspan(i * b, b),
                      layout_.view(grads, head_w_[i]), layout_.view(grads, head_b_[i]), dh);
    }
    encoder_.backward(layout_, params_, c.encoder, dh, grads);
  }

  /// Accumulates d(c_logp * log_prob(a) + c_ent * entropy)/d(params) into `grads`.
  void backward(std::span<const double> x, const FusionAction& a, double c_logp, double c_ent,
                std::vector<double>& grads) const {
    const auto c = forward_cached(x);
    backward(c, a, c_logp, c_ent, grads);
  }

  void backward(const Cache& c, const FusionAction& a, double c_logp, double c_ent,
                std::vector<double>& grads) const {
    if (c_logp == 0.0 && c_ent == 0.0) return;
    const auto d_refined = refined_logit_gradient(c.out, a, c_logp, c_ent);
    backward_from_refined(c, d_refined, grads);
  }

  /// Hard-mode probability of every feasible action, in enumeration order.
  std::vector<double> hard_probabilities(const PolicyOutput& out) const {
    std::vector<double> lw(feasible_.size());
    for (std::size_t n = 0; n < feasible_.size(); ++n) lw[n] = factorized_log_prob(out, feasible_[n].bin_indices);
    const double lz = detail::log_sum_exp(lw);
    for (double& v : lw) v = std::exp(v - lz);
    return lw;
  }

 private:
  double hard_log_normalizer(const PolicyOutput& out) const {
    std::vector<double> lw(feasible_.size());
    for (std::size_t n = 0; n < feasible_.size(); ++n) lw[n] = factorized_log_prob(out, feasible_[n].bin_indices);
    return detail::log_sum_exp(lw);
  }

  static void check_finite(std::span<const double> v, const char* where) {
    if (!all_finite(v)) throw NumericalError(std::string("policy forward: non-finite value in ") + where);
  }

  PolicyShape shape_;
  ActionSpace space_;
  FeasibilityMode mode_ = FeasibilityMode::soft;
  std::vector<FusionAction> feasible_;
  ParamLayout layout_;
  Mlp encoder_;
  std::vector<std::size_t> head_w_, head_b_, rel_w_, gate_w_, gate_b_;
  std::vector<double> params_;
};

inline PolicyOutput forward(const Policy& policy, std::span<const double> state_features) {
  return policy.forward(state_features);
}

inline SampledAction sample_action(const Policy& policy, const PolicyOutput& out, SeededRng& rng) {
  return policy.sample(out, rng);
}

inline double log_prob(const Policy& policy, const PolicyOutput& out, const FusionAction& a) {
  return policy.log_prob(out, a);
}

inline double entropy(const Policy& policy, const PolicyOutput& out) { return policy.entropy(out); }

/*
 * Checkpoints
 */

inline Json policy_sidecar(const Policy& p) {
  return Json{{"kind", "policy"},
              {"input_dim", p.shape().input_dim},
              {"k", p.tasks()},
              {"B", p.bins()},
              {"d_h", p.shape().hidden},
              {"d", p.shape().relation_dim},
              {"L", p.shape().layers},
              {"traf", p.shape().traf},
              {"mode", p.mode() == FeasibilityMode::hard ? "hard" : "soft"},
              {"bins", p.space().bins()},
              {"bounds", p.space().bounds()},
              {"tolerance", p.space().tolerance()}};
}

inline void save_policy(const std::filesystem::path& path, const Policy& p) {
  write_file_atomic(path, encode_tensors({p.layout().shapes(), p.params()}), true);
  auto sidecar = path;
  sidecar += ".json";
  write_file_atomic(sidecar, policy_sidecar(p).dump(2) + "\n");
}

inline Policy load_policy(const std::filesystem::path& path) {
  auto sidecar_path = path;
  sidecar_path += ".json";
  const auto j = Json::parse(read_file(sidecar_path));
  PolicyShape shape;
  shape.input_dim = j.at("input_dim").get<std::size_t>();
  shape.hidden = j.at("d_h").get<std::size_t>();
  shape.relation_dim = j.at("d").get<std::size_t>();
  shape.layers = j.at("L").get<std::size_t>();
  shape.traf = j.at("traf").get<bool>();
  ActionSpace space(j.at("bins").get<std::vector<std::vector<double>>>(),
                    j.at("bounds").get<std::vector<std::pair<double, double>>>(),
                    j.at("tolerance").get<double>());
  const auto mode = j.at("mode").get<std::string>() == "hard" ? FeasibilityMode::hard : FeasibilityMode::soft;
  Policy p(shape, space, mode);
  const auto file = decode_tensors(read_file(path, true));
  if (file.shapes != p.layout().shapes()) throw Error("policy checkpoint: shape mismatch with sidecar");
  p.params() = file.data;
  return p;
}

}  // namespace safro

#endif  // SAFRO_POLICY_HPP_
