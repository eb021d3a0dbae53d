#pragma once

// Tube-overlap accuracy, reference rows, and inspection exports.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tubeground/dataset.hpp"
#include "tubeground/error.hpp"
#include "tubeground/interactor.hpp"
#include "tubeground/linker.hpp"
#include "tubeground/objective.hpp"
#include "tubeground/prepared.hpp"

namespace tubeground {

inline const std::vector<double> kDefaultEtas = {0.4, 0.5, 0.6};

// Mean IoU over the annotated frames only.
inline double tube_overlap(const Tube& pred, const GroundTruthTube& gt) {
  if (gt.boxes.empty()) throw ContractError("ground-truth tube has no annotated frames");
  double total = 0.0;
  for (const auto& [frame, box] : gt.boxes) {
    if (frame >= pred.length()) {
      throw ContractError("annotated frame " + std::to_string(frame) + " outside predicted tube of length " +
                          std::to_string(pred.length()));
    }
    total += iou(pred.boxes[frame], box);
  }
  return total / static_cast<double>(gt.boxes.size());
}

// Fraction of overlaps strictly greater than eta.
inline double accuracy_at(std::span<const double> overlaps, double eta) {
  if (overlaps.empty()) throw ContractError("accuracy of an empty overlap list");
  std::size_t hits = 0;
  for (double o : overlaps) {
    if (!(o >= 0.0 && o <= 1.0)) throw ContractError("overlap " + std::to_string(o) + " outside [0, 1]");
    if (o > eta) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(overlaps.size());
}

struct AccuracyRow {
  std::string name;
  std::vector<double> etas;
  std::vector<double> accuracy;
  double average = 0.0;
};

inline AccuracyRow make_row(std::string name, std::span<const double> overlaps, const std::vector<double>& etas) {
  if (etas.empty()) throw ContractError("no thresholds given");
  AccuracyRow row{std::move(name), etas, {}, 0.0};
  for (double eta : etas) row.accuracy.push_back(accuracy_at(overlaps, eta));
  double s = 0.0;
  for (double a : row.accuracy) s += a;
  row.average = s / static_cast<double>(row.accuracy.size());
  return row;
}

inline std::vector<double> proposal_overlaps(const std::vector<Tube>& tubes, const GroundTruthTube& gt) {
  std::vector<double> out;
  out.reserve(tubes.size());
  for (const auto& t : tubes) out.push_back(tube_overlap(t, gt));
  return out;
}

// Accuracy of an oracle that always picks the best-overlapping proposal.
inline AccuracyRow upper_bound(const std::vector<std::vector<double>>& overlaps_per_video,
                               const std::vector<double>& etas = kDefaultEtas) {
  std::vector<double> best;
  for (const auto& v : overlaps_per_video) {
    if (v.empty()) throw ContractError("video without proposals");
    best.push_back(*std::max_element(v.begin(), v.end()));
  }
  return make_row("proposal upper bound", best, etas);
}

struct RandomBaselineRow {
  AccuracyRow exact;                 // expectation under a uniform proposal choice
  std::vector<double> monte_carlo;   // mean accuracy over sampled choices, per eta
  std::vector<double> monte_carlo_sd;  // standard deviation of one trial's accuracy, per eta
  std::size_t trials = 0;
};

inline RandomBaselineRow random_baseline(const std::vector<std::vector<double>>& overlaps_per_video,
                                         const std::vector<double>& etas = kDefaultEtas, std::size_t trials = 1000,
                                         std::uint64_t seed = 0) {
  if (trials == 0) throw ContractError("random baseline needs at least one trial");
  if (overlaps_per_video.empty()) throw ContractError("random baseline on empty video list");
  RandomBaselineRow out;
  out.trials = trials;
  out.exact.name = "random";
  out.exact.etas = etas;
  for (double eta : etas) {
    double e = 0.0;
    for (const auto& v : overlaps_per_video) {
      if (v.empty()) throw ContractError("video without proposals");
      e += accuracy_at(v, eta);
    }
    out.exact.accuracy.push_back(e / static_cast<double>(overlaps_per_video.size()));
  }
  double s = 0.0;
  for (double a : out.exact.accuracy) s += a;
  out.exact.average = s / static_cast<double>(etas.size());

  std::mt19937_64 rng(seed);
  std::vector<double> sum(etas.size(), 0.0), sum_sq(etas.size(), 0.0);
  std::vector<double> picked(overlaps_per_video.size());
  for (std::size_t t = 0; t < trials; ++t) {
    for (std::size_t v = 0; v < overlaps_per_video.size(); ++v) {
      const auto& ov = overlaps_per_video[v];
      picked[v] = ov[std::uniform_int_distribution<std::size_t>(0, ov.size() - 1)(rng)];
    }
    for (std::size_t k = 0; k < etas.size(); ++k) {
      const double a = accuracy_at(picked, etas[k]);
      sum[k] += a;
      sum_sq[k] += a * a;
    }
  }
  for (std::size_t k = 0; k < etas.size(); ++k) {
    const double m = sum[k] / static_cast<double>(trials);
    out.monte_carlo.push_back(m);
    out.monte_carlo_sd.push_back(std::sqrt(std::max(0.0, sum_sq[k] / static_cast<double>(trials) - m * m)));
  }
  return out;
}

// ---- inference -----------------------------------------------------------

struct GroundingResult {
  std::size_t index = 0;
  std::vector<double> scores;  // s(q, p_n) for every proposal
  MatchResult match;           // for the chosen proposal
};

// Scores every proposal against the sentence and keeps the best one
// (lowest index on ties).
inline GroundingResult ground(const InteractorParams& params, std::span<const Tensor> proposals,
                              const Tensor& sentence) {
  if (proposals.empty()) throw ContractError("grounding needs at least one proposal");
  ad::Tape tape;
  auto w = graph::bind(tape, params, false);
  ad::Var hq = graph::encode_sentence(w, tape.constant(sentence));
  GroundingResult out;
  std::vector<graph::AttentionVars> atts;
  std::vector<graph::MatchVars> matches;
  std::vector<ad::Var> hps;
  for (const Tensor& p : proposals) {
    ad::Var hp = graph::encode_visual(w, tape.constant(p));
    auto att = graph::attend(w, hp, hq);
    auto m = graph::match(hp, att.guided);
    out.scores.push_back(m.score.item());
    atts.push_back(att);
    matches.push_back(m);
  }
  out.index = ad::argmax_index(out.scores);
  out.match.attention = atts[out.index].attention.value();
  out.match.guided = atts[out.index].guided.value();
  out.match.per_segment = matches[out.index].per_segment.value().values();
  out.match.score = out.scores[out.index];
  return out;
}

inline GroundingResult ground(const InteractorParams& params, const PreparedVideo& video) {
  return ground(params, video.proposals, video.sentence);
}

// ---- full evaluation -----------------------------------------------------

struct VideoEval {
  std::string id;
  std::size_t chosen = 0;
  std::size_t best = 0;  // proposal with maximal overlap
  std::vector<double> scores;
  std::vector<double> overlaps;
  double chosen_overlap = 0.0;
  double best_overlap = 0.0;
};

struct EvalReport {
  std::vector<double> etas;
  AccuracyRow method;
  RandomBaselineRow random;
  AccuracyRow upper;
  std::vector<VideoEval> videos;
  // Fraction of videos whose chosen proposal is the best-overlapping one.
  double hit_rate = 0.0;
  // Mean entropy of softmax-normalized proposal scores.
  double mean_score_entropy = 0.0;
};

struct EvalOptions {
  std::vector<double> etas = kDefaultEtas;
  std::size_t random_trials = 1000;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

inline VideoEval evaluate_video(const InteractorParams& params, const PreparedVideo& video) {
  if (!video.ground_truth) throw ContractError("video " + video.id + " has no ground-truth tube");
  VideoEval ve;
  ve.id = video.id;
  GroundingResult g = ground(params, video);
  ve.chosen = g.index;
  ve.scores = std::move(g.scores);
  ve.overlaps = proposal_overlaps(video.tubes, *video.ground_truth);
  ve.best = ad::argmax_index(ve.overlaps);
  ve.chosen_overlap = ve.overlaps[ve.chosen];
  ve.best_overlap = ve.overlaps[ve.best];
  return ve;
}

inline EvalReport evaluate(const InteractorParams& params, const std::vector<PreparedVideo>& videos,
                           const EvalOptions& opt = {}) {
  if (videos.empty()) throw ContractError("evaluation on an empty video list");
  EvalReport rep;
  rep.etas = opt.etas;
  rep.videos.resize(videos.size());
  const std::size_t nthreads = std::max<std::size_t>(1, std::min(opt.threads, videos.size()));
  if (nthreads == 1) {
    for (std::size_t i = 0; i < videos.size(); ++i) rep.videos[i] = evaluate_video(params, videos[i]);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(nthreads);
    for (std::size_t t = 0; t < nthreads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < videos.size(); i += nthreads) rep.videos[i] = evaluate_video(params, videos[i]);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  std::vector<double> chosen;
  std::vector<std::vector<double>> all;
  std::size_t hits = 0;
  double entropy = 0.0;
  for (const auto& v : rep.videos) {
    chosen.push_back(v.chosen_overlap);
    all.push_back(v.overlaps);
    if (v.chosen == v.best) ++hits;
    entropy += diversity_loss(v.scores);
  }
  rep.method = make_row("method", chosen, opt.etas);
  rep.upper = upper_bound(all, opt.etas);
  rep.random = random_baseline(all, opt.etas, opt.random_trials, opt.seed);
  rep.hit_rate = static_cast<double>(hits) / static_cast<double>(videos.size());
  rep.mean_score_entropy = entropy / static_cast<double>(videos.size());
  for (std::size_t k = 0; k < opt.etas.size(); ++k) {
    if (rep.upper.accuracy[k] < rep.method.accuracy[k]) {
      throw ContractError("upper bound below method accuracy at eta " + std::to_string(opt.etas[k]));
    }
  }
  return rep;
}

inline nlohmann::json to_json(const AccuracyRow& row) {
  nlohmann::json acc = nlohmann::json::object();
  for (std::size_t k = 0; k < row.etas.size(); ++k) acc[format_double(row.etas[k])] = row.accuracy[k];
  return {{"name", row.name}, {"accuracy", std::move(acc)}, {"average", row.average}};
}

inline nlohmann::json to_json(const EvalReport& rep) {
  using nlohmann::json;
  json rows = json::array({to_json(rep.method), to_json(rep.random.exact), to_json(rep.upper)});
  json mc = json::object();
  for (std::size_t k = 0; k < rep.etas.size(); ++k) {
    mc[format_double(rep.etas[k])] = {{"mean", rep.random.monte_carlo[k]}, {"sd", rep.random.monte_carlo_sd[k]}};
  }
  json videos = json::array();
  for (const auto& v : rep.videos) {
    videos.push_back({{"id", v.id},
                      {"chosen", v.chosen},
                      {"best", v.best},
                      {"chosen_overlap", v.chosen_overlap},
                      {"best_overlap", v.best_overlap},
                      {"scores", v.scores},
                      {"overlaps", v.overlaps}});
  }
  return {{"etas", rep.etas},
          {"rows", std::move(rows)},
          {"random_monte_carlo", {{"trials", rep.random.trials}, {"per_eta", std::move(mc)}}},
          {"hit_rate", rep.hit_rate},
          {"mean_score_entropy", rep.mean_score_entropy},
          {"videos", std::move(videos)}};
}

inline std::string to_csv(const EvalReport& rep) {
  std::ostringstream out;
  out << "row";
  for (double e : rep.etas) out << ",acc@" << format_double(e);
  out << ",average\n";
  for (const AccuracyRow* r : {&rep.method, &rep.random.exact, &rep.upper}) {
    out << r->name;
    for (double a : r->accuracy) out << ',' << format_double(a);
    out << ',' << format_double(r->average) << '\n';
  }
  return out.str();
}

// Attention weights of a grounded pair: {segment_index: [{token, weight}]}.
inline nlohmann::json attention_dump(const MatchResult& m, const std::vector<std::string>& tokens) {
  if (m.attention.cols() != tokens.size()) throw DimensionError("attention columns do not match token count");
  nlohmann::json out = nlohmann::json::object();
  for (std::size_t i = 0; i < m.attention.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < tokens.size(); ++j) row.push_back({{"token", tokens[j]}, {"weight", m.attention(i, j)}});
    out[std::to_string(i)] = std::move(row);
  }
  return out;
}

// Softmax-normalized proposal scores grouped by overlap decile.
struct DecileBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double mean_score = 0.0;
};

inline std::vector<DecileBin> score_distribution(const std::vector<VideoEval>& videos) {
  std::vector<DecileBin> bins(10);
  for (std::size_t k = 0; k < 10; ++k) {
    bins[k].lo = static_cast<double>(k) / 10.0;
    bins[k].hi = static_cast<double>(k + 1) / 10.0;
  }
  for (const auto& v : videos) {
    ad::Tape tape;
    const Tensor p = ad::softmax_rows(tape.constant(Tensor::row(v.scores))).value();
    for (std::size_t n = 0; n < v.overlaps.size(); ++n) {
      const auto k = std::min<std::size_t>(9, static_cast<std::size_t>(v.overlaps[n] * 10.0));
      bins[k].count += 1;
      bins[k].mean_score += p[n];
    }
  }
  for (auto& b : bins) {
    if (b.count > 0) b.mean_score /= static_cast<double>(b.count);
  }
  return bins;
}

}  // namespace tubeground
