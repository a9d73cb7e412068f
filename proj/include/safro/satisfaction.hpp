#ifndef SAFRO_SATISFACTION_HPP_
#define SAFRO_SATISFACTION_HPP_

// Ground-truth satisfaction reward from query-level proxies and the list-level
// regressor that learns to predict it.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "safro/core.hpp"
#include "safro/dense.hpp"
#include "safro/fusion.hpp"
#include "safro/io.hpp"

namespace safro {

struct SatConfig {
  double gap_quantile = 0.6;  // beta_q
  double stability = 1.0;     // delta, seconds
  double temperature = 1.0;   // T
  double alpha = 0.5;

  void validate() const {
    if (!(gap_quantile > 0.0 && gap_quantile < 1.0)) {
      throw ConfigError("satisfaction.gap_quantile: expected value in (0, 1)");
    }
    if (!(stability > 0.0)) throw ConfigError("satisfaction.stability: expected value > 0");
    if (!(temperature > 0.0)) throw ConfigError("satisfaction.temperature: expected value > 0");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("satisfaction.alpha: expected value in (0, 1)");
  }
};

/// Empirical quantile with linear interpolation between order statistics.
inline double gap_baseline(std::vector<double> history, double quantile) {
  if (history.empty()) throw DomainError("gap_baseline: empty history");
  if (!(quantile >= 0.0 && quantile <= 1.0)) throw DomainError("gap_baseline: quantile outside [0, 1]");
  std::sort(history.begin(), history.end());
  const double h = quantile * static_cast<double>(history.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, history.size() - 1);
  return history[lo] + (h - static_cast<double>(lo)) * (history[hi] - history[lo]);
}

/// exp(-gap / ((baseline + stability) * temperature)).
inline double gap_score(double session_gap, double baseline, double stability, double temperature) {
  if (!(temperature > 0.0)) throw DomainError("gap_score: temperature must be > 0");
  if (!(stability > 0.0)) throw DomainError("gap_score: stability must be > 0");
  if (!(baseline > 0.0)) throw DomainError("gap_score: baseline must be > 0");
  if (!(session_gap >= 0.0)) throw DomainError("gap_score: session gap must be >= 0");
  return std::exp(-session_gap / ((baseline + stability) * temperature));
}

/// Satisfaction from the three proxies: a reformulated query scores zero,
/// otherwise the alpha-mix of the decayed gap and next-day retention.
inline double satisfaction_reward(int reformulated, double session_gap, int retained,
                                  double baseline, const SatConfig& cfg) {
  const double gap = gap_score(session_gap, baseline, cfg.stability, cfg.temperature);
  const double ret = retained ? 1.0 : 0.0;
  return (reformulated ? 0.0 : 1.0) * (cfg.alpha * gap + (1.0 - cfg.alpha) * ret);
}

inline double r_sat(const QueryEpisode& episode, const SatConfig& cfg) {
  return satisfaction_reward(episode.reformulated, episode.session_gap, episode.retained,
                             episode.user_gap_baseline, cfg);
}

/// ln(1 + clicks + long plays) observed in the follow-up window.
inline double confidence(long future_clicks, long future_long_plays) {
  if (future_clicks < 0 || future_long_plays < 0) throw DomainError("confidence: negative counts");
  return std::log1p(static_cast<double>(future_clicks + future_long_plays));
}

inline double confidence(const QueryEpisode& episode) {
  return confidence(episode.future_clicks, episode.future_long_plays);
}

/*
 * List features
 *
 * Fixed schema, `positions` = P:
 *   [2p]     relevance label at position p (0 past the end of the list)
 *   [2p + 1] click proxy s_click / (1 + s_click) at position p
 *   [2P]     list length / P
 *
 * No fused-score aggregates: those track the logging weights rather than the
 * shown items, and a model fit on randomly weighted logs keys on them.
 */

struct ListFeatureSchema {
  std::size_t positions = 10;
  std::size_t click_task = 0;

  std::size_t dim() const { return 2 * positions + 1; }
  bool operator==(const ListFeatureSchema&) const = default;
};

inline std::vector<double> list_features(std::span<const Candidate> candidates,
                                         const RankedList& list,
                                         std::span<const double> relevance_labels,
                                         const ListFeatureSchema& schema) {
  require_dim(relevance_labels.size(), candidates.size(), "list_features relevance labels");
  require_dim(list.order.size(), candidates.size(), "list_features ranking");
  std::vector<double> f(schema.dim(), 0.0);
  const std::size_t shown = std::min(schema.positions, list.order.size());
  for (std::size_t p = 0; p < shown; ++p) {
    const std::size_t n = list.order[p];
    f[2 * p] = relevance_labels[n];
    const double s = candidates[n].scores.size() > schema.click_task ? candidates[n].scores[schema.click_task] : 0.0;
    f[2 * p + 1] = s / (1.0 + s);
  }
  f[2 * schema.positions] = static_cast<double>(list.order.size()) / static_cast<double>(schema.positions);
  return f;
}

/// Features for a logged episode, whose candidates are already in displayed order.
inline std::vector<double> logged_list_features(const QueryEpisode& e, const ListFeatureSchema& schema) {
  RankedList list;
  list.order.resize(e.candidates.size());
  std::iota(list.order.begin(), list.order.end(), std::size_t{0});
  list.fused_scores.resize(e.candidates.size());
  std::vector<double> labels(e.candidates.size());
  for (std::size_t n = 0; n < e.candidates.size(); ++n) {
    list.fused_scores[n] = e.weights.empty() ? 0.0 : fuse_score(e.candidates[n].scores, e.weights);
    labels[n] = e.feedback.empty() ? e.candidates[n].relevance : e.feedback[n].relevance_label;
  }
  return list_features(e.candidates, list, labels, schema);
}

/*
 * Reward model
 */

struct RewardModelShape {
  std::size_t context_dim = 0;
  std::vector<std::size_t> hidden{32};
  ListFeatureSchema schema;

  std::size_t input_dim() const { return context_dim + schema.dim(); }
  bool operator==(const RewardModelShape&) const = default;
};

class RewardModel {
 public:
  RewardModel() = default;

  explicit RewardModel(RewardModelShape shape) : shape_(std::move(shape)) {
    std::vector<std::size_t> widths{shape_.input_dim()};
    widths.insert(widths.end(), shape_.hidden.begin(), shape_.hidden.end());
    widths.push_back(1);
    mlp_ = Mlp(layout_, "reward", widths, /*relu_output=*/false);
    params_.assign(layout_.total(), 0.0);
  }

  static RewardModel initialized(RewardModelShape shape, SeededRng rng) {
    RewardModel m(std::move(shape));
    std::vector<std::size_t> fan_in;
    for (std::size_t l = 0; l < m.mlp_.layers(); ++l) {
      fan_in.push_back(m.mlp_.widths()[l]);  // weight
      fan_in.push_back(m.mlp_.widths()[l]);  // bias
    }
    init_uniform_fan_in(m.layout_, m.params_, rng, fan_in);
    return m;
  }

  const RewardModelShape& shape() const { return shape_; }
  const ParamLayout& layout() const { return layout_; }
  const Mlp& mlp() const { return mlp_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  std::vector<double> input(std::span<const double> context, std::span<const double> list_feats) const {
    require_dim(context.size(), shape_.context_dim, "reward model query context");
    require_dim(list_feats.size(), shape_.schema.dim(), "reward model list features");
    std::vector<double> x(context.begin(), context.end());
    x.insert(x.end(), list_feats.begin(), list_feats.end());
    return x;
  }

  /// Unclamped regressor output.
  double raw(std::span<const double> context, std::span<const double> list_feats) const {
    const auto x = input(context, list_feats);
    return mlp_.forward(layout_, params_, x).activations.back()[0];
  }

  double predict(std::span<const double> context, std::span<const double> list_feats) const {
    return std::clamp(raw(context, list_feats), 0.0, 1.0);
  }

  bool operator==(const RewardModel& o) const { return shape_ == o.shape_ && params_ == o.params_; }

 private:
  RewardModelShape shape_;
  ParamLayout layout_;
  Mlp mlp_;
  std::vector<double> params_;
};

inline double predict_satisfaction(const RewardModel& model, std::span<const double> context,
                                   std::span<const double> list_feats) {
  return model.predict(context, list_feats);
}

struct RewardSample {
  std::vector<double> context;
  std::vector<double> list_features;
  double target = 0.0;
  double confidence = 0.0;
};

inline std::vector<RewardSample> reward_samples(const std::vector<QueryEpisode>& episodes,
                                                const SatConfig& cfg,
                                                const ListFeatureSchema& schema) {
  std::vector<RewardSample> out;
  out.reserve(episodes.size());
  for (const auto& e : episodes) {
    out.push_back({e.state_features, logged_list_features(e, schema), r_sat(e, cfg), confidence(e)});
  }
  return out;
}

/// (1 / sum c) * sum c_i (R(x_i) - t_i)^2 over the unclamped output.
inline double weighted_mse(const RewardModel& model, std::span<const RewardSample> data) {
  double num = 0.0;
  double den = 0.0;
  for (const auto& s : data) {
    if (s.confidence == 0.0) continue;
    const double err = model.raw(s.context, s.list_features) - s.target;
    num += s.confidence * err * err;
    den += s.confidence;
  }
  if (!(den > 0.0)) throw DomainError("weighted_mse: total confidence must be > 0");
  return num / den;
}

/// Gradient of weighted_mse with respect to every parameter.
inline std::vector<double> weighted_mse_gradient(const RewardModel& model,
                                                 std::span<const RewardSample> data) {
  double den = 0.0;
  for (const auto& s : data) den += s.confidence;
  if (!(den > 0.0)) throw DomainError("weighted_mse_gradient: total confidence must be > 0");
  std::vector<double> grads(model.layout().total(), 0.0);
  for (const auto& s : data) {
    if (s.confidence == 0.0) continue;
    const auto x = model.input(s.context, s.list_features);
    const auto cache = model.mlp().forward(model.layout(), model.params(), x);
    const double err = cache.activations.back()[0] - s.target;
    const double dout = 2.0 * s.confidence * err / den;
    model.mlp().backward(model.layout(), model.params(), cache, std::span<const double>(&dout, 1), grads);
  }
  return grads;
}

struct RewardTrainConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::size_t epochs = 60;
  std::size_t batch_size = 64;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("reward_model.learning_rate: expected value > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("reward_model.momentum: expected value in [0, 1)");
    if (epochs < 1) throw ConfigError("reward_model.epochs: expected value >= 1");
    if (batch_size < 1) throw ConfigError("reward_model.batch_size: expected value >= 1");
  }
};

struct RewardTrainResult {
  RewardModel model;
  std::vector<double> loss_trace;  // full-data weighted MSE after each epoch
};

/// Mini-batch gradient descent with momentum on the confidence-weighted MSE.
inline RewardTrainResult train_reward_model(RewardModel model, std::span<const RewardSample> data,
                                            const RewardTrainConfig& cfg, SeededRng rng) {
  cfg.validate();
  double total_conf = 0.0;
  for (const auto& s : data) {
    if (!(s.confidence >= 0.0)) throw DomainError("train_reward_model: negative confidence");
    total_conf += s.confidence;
  }
  if (!(total_conf > 0.0)) throw DomainError("train_reward_model: total confidence must be > 0");

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> velocity(model.params().size(), 0.0);
  RewardTrainResult result;
  std::vector<RewardSample> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      double batch_conf = 0.0;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        batch.push_back(data[order[i]]);
        batch_conf += data[order[i]].confidence;
      }
      if (!(batch_conf > 0.0)) continue;
      const auto g = weighted_mse_gradient(model, batch);
      auto& p = model.params();
      for (std::size_t t = 0; t < p.size(); ++t) {
        velocity[t] = cfg.momentum * velocity[t] - cfg.learning_rate * g[t];
        p[t] += velocity[t];
      }
    }
    if (!all_finite(model.params())) {
      throw NumericalError("train_reward_model: non-finite parameters after epoch " + std::to_string(epoch));
    }
    result.loss_trace.push_back(weighted_mse(model, data));
  }
  result.model = std::move(model);
  return result;
}

/*
 * Checkpoints: binary tensors + JSON sidecar
 */

inline void to_json(Json& j, const SatConfig& c) {
  j = Json{{"gap_quantile", c.gap_quantile},
           {"stability", c.stability},
           {"temperature", c.temperature},
           {"alpha", c.alpha}};
}
inline void from_json(const Json& j, SatConfig& c) {
  c.gap_quantile = j.at("gap_quantile").get<double>();
  c.stability = j.at("stability").get<double>();
  c.temperature = j.at("temperature").get<double>();
  c.alpha = j.at("alpha").get<double>();
}

inline std::string encode_reward_model(const RewardModel& m) {
  return encode_tensors({m.layout().shapes(), m.params()});
}

inline Json reward_model_sidecar(const RewardModel& m, const SatConfig& sat) {
  return Json{{"kind", "reward_model"},
              {"context_dim", m.shape().context_dim},
              {"hidden", m.shape().hidden},
              {"positions", m.shape().schema.positions},
              {"click_task", m.shape().schema.click_task},
              {"satisfaction", sat}};
}

inline void save_reward_model(const std::filesystem::path& path, const RewardModel& m,
                              const SatConfig& sat) {
  write_file_atomic(path, encode_reward_model(m), true);
  auto sidecar = path;
  sidecar += ".json";
  write_file_atomic(sidecar, reward_model_sidecar(m, sat).dump(2) + "\n");
}

inline RewardModel load_reward_model(const std::filesystem::path& path, SatConfig* sat = nullptr) {
  auto sidecar_path = path;
  sidecar_path += ".json";
  const auto sidecar = Json::parse(read_file(sidecar_path));
  RewardModelShape shape;
  shape.context_dim = sidecar.at("context_dim").get<std::size_t>();
  shape.hidden = sidecar.at("hidden").get<std::vector<std::size_t>>();
  shape.schema.positions = sidecar.at("positions").get<std::size_t>();
  shape.schema.click_task = sidecar.at("click_task").get<std::size_t>();
  if (sat) *sat = sidecar.at("satisfaction").get<SatConfig>();
  RewardModel m(shape);
  const auto file = decode_tensors(read_file(path, true));
  if (file.shapes != m.layout().shapes()) throw Error("reward model checkpoint: shape mismatch with sidecar");
  m.params() = file.data;
  return m;
}

}  // namespace safro

#endif  // SAFRO_SATISFACTION_HPP_
