#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tubeground/gradcheck.hpp"
#include "tubeground/trainer.hpp"

namespace tubeground {

// Shape of one finite-difference check of the batch objective through the
// full interactor.
struct GradSuiteDims {
  std::size_t hidden = 8;       // D
  std::size_t attention = 8;    // K
  std::size_t segments = 4;     // t_p
  std::size_t words = 5;        // t_q
  std::size_t proposals = 3;    // N
  std::size_t batch = 2;        // B
  std::size_t visual_dim = 6;   // d_p
  std::size_t word_dim = 7;     // d_q
  double input_scale = 3.0;     // sd of the random pooled features and word vectors
};

inline GradSuiteDims grad_suite_dims(const std::string& name) {
  if (name == "small") return {};
  if (name == "tiny") return {3, 3, 2, 3, 2, 2, 3, 4, 3.0};
  throw ConfigError("unknown gradcheck dims '" + name + "' (expected small or tiny)");
}

namespace detail {

inline Tensor gaussian(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd) {
  std::normal_distribution<double> n(0.0, sd);
  Tensor t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = n(rng);
  return t;
}

inline std::vector<PreparedVideo> grad_suite_videos(const GradSuiteDims& d, std::mt19937_64& rng) {
  std::vector<PreparedVideo> out(d.batch);
  for (std::size_t v = 0; v < d.batch; ++v) {
    out[v].id = "g" + std::to_string(v);
    for (std::size_t n = 0; n < d.proposals; ++n) out[v].proposals.push_back(gaussian(d.segments, d.visual_dim, rng, d.input_scale));
    out[v].tubes.resize(d.proposals);
    out[v].sentence = gaussian(d.words, d.word_dim, rng, d.input_scale);
  }
  return out;
}

inline ad::GradCheckResult check_objective(const InteractorParams& params, const std::vector<PreparedVideo>& videos,
                                           const ObjectiveConfig& obj) {
  std::vector<const PreparedVideo*> batch;
  for (const auto& v : videos) batch.push_back(&v);
  ad::GraphBuilder f = [&](ad::Tape& tape, std::span<const ad::Var> vars) {
    graph::BoundWeights w;
    std::size_t i = 0;
    w.visit([&](const char*, ad::Var& x) { x = vars[i++]; });
    return batch_objective(tape, w, batch, obj).loss.total;
  };
  return ad::grad_check(f, params.flatten());
}

}  // namespace detail

// Central-difference check of every interactor parameter under the total
// loss of one batch, at a random init drawn from seed.
inline ad::GradCheckResult grad_suite(const GradSuiteDims& d, std::uint64_t seed,
                                      const ObjectiveConfig& obj = {}) {
  std::mt19937_64 rng(seed);
  InteractorDims dims;
  dims.visual_dim = d.visual_dim;
  dims.word_dim = d.word_dim;
  dims.visual_hidden = dims.word_hidden = d.hidden;
  dims.attention = d.attention;
  const auto params = init_params(dims, seed);
  return detail::check_objective(params, detail::grad_suite_videos(d, rng), obj);
}

}  // namespace tubeground
