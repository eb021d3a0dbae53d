#pragma once

// Multiple-instance training objective.
//
// A video's score for a sentence is the best score among its proposals.
// The ranking loss is a bidirectional hinge over a batch score matrix
// S(v_i, q_j): every off-diagonal entry acts as a negative sentence for
// row i and as a negative video for column j. The diversity loss is the
// entropy of the softmax over an aligned pair's proposal scores.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "tubeground/autodiff.hpp"
#include "tubeground/error.hpp"
#include "tubeground/tensor.hpp"

namespace tubeground {

struct ProposalScores {
  std::vector<double> scores;
  std::size_t argmax = 0;

  explicit ProposalScores(std::vector<double> s) : scores(std::move(s)) {
    if (scores.empty()) throw ContractError("proposal score list is empty");
    argmax = ad::argmax_index(scores);
  }
};

struct ObjectiveConfig {
  double margin = 1.0;          // Delta
  double beta = 1.0;            // diversity weight
  bool normalize_rank = false;  // divide the ranking sum by its term count
};

struct LossBreakdown {
  double rank = 0.0;
  double div = 0.0;
  double total = 0.0;
  double beta = 1.0;
  double margin = 1.0;
};

namespace graph {

using ad::Var;

// 1 x 1 maximum over a row of proposal scores; gradient goes to the
// lowest-index argmax.
inline Var video_score(Var proposal_scores) { return ad::max(proposal_scores); }

// scores: B x B, entry (i, j) = S(v_i, q_j).
inline Var ranking_loss(Var scores, const ObjectiveConfig& cfg = {}) {
  const Tensor& s = scores.value();
  if (s.rows() != s.cols()) throw ContractError("ranking loss needs a square score matrix, got " + s.shape_string());
  const std::size_t B = s.rows();
  if (B == 0) throw ContractError("ranking loss on an empty batch");
  if (B == 1) return ad::scale(ad::sum(scores), 0.0);
  // Flattened index lists for: positive (i,i), sentence negative (i,j), video negative (j,i).
  std::vector<std::size_t> pos, neg_sentence, neg_video;
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      if (i == j) continue;
      pos.push_back(i * B + i);
      neg_sentence.push_back(i * B + j);
      neg_video.push_back(j * B + i);
    }
  }
  Var flat = ad::reshape(scores, B * B, 1);
  Var positive = ad::gather_rows(flat, pos);
  Var h1 = ad::relu(ad::add_scalar(ad::gather_rows(flat, std::move(neg_sentence)) - positive, cfg.margin));
  Var h2 = ad::relu(ad::add_scalar(ad::gather_rows(flat, std::move(neg_video)) - positive, cfg.margin));
  Var total = ad::sum(h1) + ad::sum(h2);
  if (cfg.normalize_rank) total = ad::scale(total, 1.0 / static_cast<double>(2 * pos.size()));
  return total;
}

// Entropy of softmax(scores) for a 1 x N row, as lse(y) - <softmax(y), y>
// with y = x - max(x). This equals -sum p log p, treats 0 log 0 as 0, and
// is non-negative in floating point since lse(y) >= 0 >= <p, y>.
inline Var diversity_loss(Var scores) {
  if (scores.rows() != 1 || scores.cols() == 0) {
    throw ContractError("diversity loss expects a non-empty 1xN score row, got " + scores.value().shape_string());
  }
  const auto vals = scores.value().data();
  Var y = ad::add_scalar(scores, -vals[ad::argmax_index(vals)]);
  Var p = ad::softmax_rows(y);
  return ad::logsumexp_rows(y) - ad::sum(ad::mul(p, y));
}

struct LossVars {
  Var rank;
  Var div;
  Var total;
};

// scores: B x B video-level matrix; aligned: per aligned pair i, the 1 x N_i
// row of proposal scores s(q_i, p_n) from video i.
inline LossVars total_loss(Var scores, std::span<const Var> aligned, const ObjectiveConfig& cfg = {}) {
  if (aligned.size() != scores.rows()) {
    throw ContractError("total loss: " + std::to_string(aligned.size()) + " aligned rows for a batch of " +
                        std::to_string(scores.rows()));
  }
  LossVars out;
  out.rank = ranking_loss(scores, cfg);
  std::vector<Var> divs;
  divs.reserve(aligned.size());
  for (const Var& row : aligned) divs.push_back(diversity_loss(row));
  out.div = ad::mean(ad::concat_rows(divs));
  out.total = out.rank + ad::scale(out.div, cfg.beta);
  return out;
}

}  // namespace graph

inline double video_score(const ProposalScores& s) { return s.scores[s.argmax]; }

inline double ranking_loss(const Tensor& scores, const ObjectiveConfig& cfg = {}) {
  ad::Tape tape;
  return graph::ranking_loss(tape.constant(scores), cfg).item();
}

inline double diversity_loss(std::span<const double> scores) {
  if (scores.empty()) throw ContractError("diversity loss of empty score list");
  ad::Tape tape;
  const double h = graph::diversity_loss(tape.constant(Tensor::row(scores))).item();
  return std::min(h, std::log(static_cast<double>(scores.size())));
}

inline double diversity_loss(const ProposalScores& s) { return diversity_loss(s.scores); }

inline LossBreakdown total_loss(const Tensor& scores, const std::vector<ProposalScores>& aligned,
                                const ObjectiveConfig& cfg = {}) {
  ad::Tape tape;
  std::vector<ad::Var> rows;
  for (const auto& a : aligned) rows.push_back(tape.constant(Tensor::row(a.scores)));
  auto v = graph::total_loss(tape.constant(scores), rows, cfg);
  return {v.rank.item(), v.div.item(), v.total.item(), cfg.beta, cfg.margin};
}

}  // namespace tubeground
