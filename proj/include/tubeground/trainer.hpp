#pragma once

// SGD-with-momentum training over weakly labelled video/sentence pairs.
//
// Each step rebuilds the tape for one batch: every sentence and every
// proposal is encoded once, all B x B x N proposal/sentence pairs are
// scored, and a single backward pass yields the batch gradient.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tubeground/autodiff.hpp"
#include "tubeground/error.hpp"
#include "tubeground/eval.hpp"
#include "tubeground/interactor.hpp"
#include "tubeground/log.hpp"
#include "tubeground/objective.hpp"
#include "tubeground/prepared.hpp"

namespace tubeground {

struct TrainConfig {
  std::size_t batch_size = 16;
  double learning_rate = 0.001;
  double momentum = 0.9;
  std::size_t epochs = 30;
  double beta = 1.0;
  double delta = 1.0;
  std::uint64_t seed = 0;
  std::size_t proposals_per_video = 30;
  std::size_t segments = kDefaultSegments;  // t_p
  std::size_t hidden = 512;                 // D
  std::size_t attention = 0;                // K, 0 = hidden
  bool normalize_rank = false;
  std::size_t max_steps = 0;  // 0 = no cap

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
    if (!(delta >= 0.0)) throw ConfigError("delta must be non-negative");
    if (proposals_per_video == 0 || segments == 0 || hidden == 0) {
      throw ConfigError("proposals_per_video, segments and hidden must be positive");
    }
  }

  ObjectiveConfig objective() const { return {delta, beta, normalize_rank}; }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},   {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},       {"epochs", c.epochs},
          {"beta", c.beta},               {"delta", c.delta},
          {"seed", c.seed},               {"proposals_per_video", c.proposals_per_video},
          {"segments", c.segments},       {"hidden", c.hidden},
          {"attention", c.attention},     {"normalize_rank", c.normalize_rank},
          {"max_steps", c.max_steps}};
}

// Overlays the keys present in j onto c; unknown keys are rejected.
inline void apply_json(TrainConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      const auto& v = it.value();
      if (k == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (k == "learning_rate") c.learning_rate = v.get<double>();
      else if (k == "momentum") c.momentum = v.get<double>();
      else if (k == "epochs") c.epochs = v.get<std::size_t>();
      else if (k == "beta") c.beta = v.get<double>();
      else if (k == "delta") c.delta = v.get<double>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "proposals_per_video") c.proposals_per_video = v.get<std::size_t>();
      else if (k == "segments") c.segments = v.get<std::size_t>();
      else if (k == "hidden") c.hidden = v.get<std::size_t>();
      else if (k == "attention") c.attention = v.get<std::size_t>();
      else if (k == "normalize_rank") c.normalize_rank = v.get<bool>();
      else if (k == "max_steps") c.max_steps = v.get<std::size_t>();
      else throw ConfigError("unknown train config key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad train config value: ") + e.what());
  }
}

// Shuffled partition of [0, n) for one epoch; the last batch may be short.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                          std::uint64_t seed, std::uint64_t epoch) {
  if (n == 0) throw ContractError("cannot batch an empty dataset");
  if (batch_size == 0) throw ContractError("batch size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{seed, epoch, std::uint64_t{0xba7c4}};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return out;
}

struct OptimizerState {
  std::vector<Tensor> velocity;  // parallel to InteractorParams::flatten()
};

inline OptimizerState make_optimizer_state(const InteractorParams& params) {
  OptimizerState s;
  for (const Tensor& t : params.flatten()) s.velocity.emplace_back(t.rows(), t.cols());
  return s;
}

// Classical momentum: v <- momentum * v + g; p <- p - lr * v.
inline void sgd_step(InteractorParams& params, const std::vector<Tensor>& grads, OptimizerState& state,
                     double lr, double momentum) {
  std::size_t k = 0;
  if (state.velocity.empty()) state = make_optimizer_state(params);
  if (grads.size() != state.velocity.size()) throw DimensionError("sgd_step: gradient count mismatch");
  params.weights.visit([&](const char* name, Tensor& p) {
    const Tensor& g = grads[k];
    Tensor& v = state.velocity[k];
    if (!g.same_shape(p) || !v.same_shape(p)) {
      throw DimensionError(std::string("sgd_step: shape mismatch for ") + name);
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw NumericError(std::string("non-finite gradient in parameter ") + name + " at entry " +
                           std::to_string(i) + " (value " + std::to_string(g[i]) + ")");
      }
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      p[i] -= lr * v[i];
    }
    ++k;
  });
}

struct BatchGraph {
  graph::LossVars loss;
  ad::Var scores;  // B x B video-level matrix
};

// Builds the batch objective on the tape.
inline BatchGraph batch_objective(ad::Tape& tape, const graph::BoundWeights& w,
                                  const std::vector<const PreparedVideo*>& batch, const ObjectiveConfig& cfg) {
  const std::size_t B = batch.size();
  if (B == 0) throw ContractError("empty batch");
  std::vector<ad::Var> sentences;
  std::vector<std::vector<ad::Var>> visuals(B);
  for (std::size_t j = 0; j < B; ++j) sentences.push_back(graph::encode_sentence(w, tape.constant(batch[j]->sentence)));
  for (std::size_t i = 0; i < B; ++i) {
    for (const Tensor& p : batch[i]->proposals) visuals[i].push_back(graph::encode_visual(w, tape.constant(p)));
  }
  std::vector<ad::Var> rows;
  std::vector<ad::Var> aligned(B);
  for (std::size_t i = 0; i < B; ++i) {
    std::vector<ad::Var> row;
    for (std::size_t j = 0; j < B; ++j) {
      std::vector<ad::Var> per_proposal;
      for (const ad::Var& hp : visuals[i]) per_proposal.push_back(graph::pair_score(w, hp, sentences[j]));
      ad::Var s = ad::concat_cols(per_proposal);  // 1 x N
      if (i == j) aligned[i] = s;
      row.push_back(graph::video_score(s));
    }
    rows.push_back(ad::concat_cols(row));
  }
  BatchGraph out;
  out.scores = ad::concat_rows(rows);
  out.loss = graph::total_loss(out.scores, aligned, cfg);
  return out;
}

struct BatchResult {
  double total = 0.0;
  double rank = 0.0;
  double div = 0.0;
  std::vector<Tensor> grads;
};

inline BatchResult batch_gradients(const InteractorParams& params, const std::vector<const PreparedVideo*>& batch,
                                   const ObjectiveConfig& cfg) {
  ad::Tape tape;
  auto w = graph::bind(tape, params, true);
  BatchGraph g = batch_objective(tape, w, batch, cfg);
  tape.backward(g.loss.total);
  BatchResult out{g.loss.total.item(), g.loss.rank.item(), g.loss.div.item(), {}};
  w.visit([&](const char*, const ad::Var& v) { out.grads.push_back(v.grad()); });
  return out;
}

struct EpochLog {
  std::size_t epoch = 0;
  double mean_total = 0.0;
  double mean_rank = 0.0;
  double mean_div = 0.0;
};

struct TrainResult {
  InteractorParams params;
  std::vector<EpochLog> log;
  std::size_t steps = 0;
  std::size_t selected_epoch = 0;
  std::optional<double> selected_validation_accuracy;
};

using EpochCallback = std::function<void(std::size_t epoch, const InteractorParams&)>;

inline InteractorDims dims_for(const std::vector<PreparedVideo>& data, const TrainConfig& cfg) {
  if (data.empty() || data.front().proposals.empty()) throw ContractError("training data is empty");
  InteractorDims d;
  d.visual_dim = data.front().proposals.front().cols();
  d.word_dim = data.front().sentence.cols();
  d.visual_hidden = d.word_hidden = cfg.hidden;
  d.attention = cfg.attention;
  return d;
}

inline TrainResult train(const std::vector<PreparedVideo>& data, const TrainConfig& cfg,
                         const std::vector<PreparedVideo>* validation = nullptr,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.empty()) throw ContractError("training data is empty");
  if (data.size() < 2) warn("single-video dataset: ranking loss is identically 0, training on diversity only");
  for (const auto& v : data) {
    if (v.proposals.size() > cfg.proposals_per_video) {
      throw ContractError("video " + v.id + " has more proposals than proposals_per_video");
    }
  }
  TrainResult res;
  res.params = init_params(dims_for(data, cfg), cfg.seed);
  OptimizerState state = make_optimizer_state(res.params);
  const ObjectiveConfig obj = cfg.objective();

  std::optional<double> best_acc;
  InteractorParams best_params = res.params;
  bool done = false;
  for (std::size_t epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    EpochLog log{epoch + 1, 0.0, 0.0, 0.0};
    std::size_t nb = 0;
    for (const auto& idx : make_batches(data.size(), cfg.batch_size, cfg.seed, epoch)) {
      std::vector<const PreparedVideo*> batch;
      for (std::size_t i : idx) batch.push_back(&data[i]);
      BatchResult br = batch_gradients(res.params, batch, obj);
      sgd_step(res.params, br.grads, state, cfg.learning_rate, cfg.momentum);
      log.mean_total += br.total;
      log.mean_rank += br.rank;
      log.mean_div += br.div;
      ++nb;
      ++res.steps;
      if (cfg.max_steps != 0 && res.steps >= cfg.max_steps) {
        done = true;
        break;
      }
    }
    log.mean_total /= static_cast<double>(nb);
    log.mean_rank /= static_cast<double>(nb);
    log.mean_div /= static_cast<double>(nb);
    res.log.push_back(log);
    if (on_epoch) on_epoch(log.epoch, res.params);
    if (validation && !validation->empty()) {
      const double acc = evaluate(res.params, *validation).method.average;
      if (!best_acc || acc > *best_acc) {
        best_acc = acc;
        best_params = res.params;
        res.selected_epoch = log.epoch;
      }
    }
  }
  if (best_acc) {
    res.params = std::move(best_params);
    res.selected_validation_accuracy = best_acc;
  } else {
    res.selected_epoch = res.log.empty() ? 0 : res.log.back().epoch;
  }
  return res;
}

inline std::string loss_csv(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  out << "epoch,mean_total,mean_rank,mean_div\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << format_double(e.mean_total) << ',' << format_double(e.mean_rank) << ','
        << format_double(e.mean_div) << '\n';
  }
  return out.str();
}

}  // namespace tubeground
