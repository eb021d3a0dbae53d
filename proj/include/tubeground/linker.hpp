#pragma once

// Spatio-temporal tube proposals from per-frame scored boxes.
//
// Consecutive boxes are scored by confidence plus weighted overlap; a tube's
// energy is the mean of those scores along the path. The best tube is found
// with a Viterbi pass, its boxes are removed, and the process repeats.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "tubeground/error.hpp"
#include "tubeground/log.hpp"

namespace tubeground {

struct Box2D {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;
  double confidence = 0.0;

  double area() const { return (x2 - x1) * (y2 - y1); }

  friend bool operator==(const Box2D&, const Box2D&) = default;
};

inline void validate(const Box2D& b) {
  if (!(b.x2 > b.x1) || !(b.y2 > b.y1)) {
    throw ValidationError("degenerate box (" + std::to_string(b.x1) + ", " + std::to_string(b.y1) +
                          ", " + std::to_string(b.x2) + ", " + std::to_string(b.y2) + ")");
  }
  if (!(b.confidence >= 0.0 && b.confidence <= 1.0)) {
    throw ValidationError("box confidence " + std::to_string(b.confidence) + " outside [0, 1]");
  }
}

struct FrameBoxes {
  std::size_t frame_index = 0;
  std::vector<Box2D> boxes;
};

// One box per frame, frames 0..T-1 in order.
struct Tube {
  std::vector<Box2D> boxes;
  // Index of each box within its frame's original detection list.
  std::vector<std::size_t> box_index;
  double energy = 0.0;

  std::size_t length() const { return boxes.size(); }
};

struct LinkConfig {
  double lambda = 0.2;
  // Upper bound on proposals per video; nullopt extracts until a frame runs dry.
  std::optional<std::size_t> max_proposals = 30;
};

inline double iou(const Box2D& a, const Box2D& b) {
  validate(a);
  validate(b);
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return std::min(1.0, inter / (a.area() + b.area() - inter));
}

inline double link_score(const Box2D& current, const Box2D& next, const LinkConfig& cfg) {
  return current.confidence + next.confidence + cfg.lambda * iou(current, next);
}

inline double tube_energy(const Tube& tube, const LinkConfig& cfg) {
  const std::size_t t = tube.boxes.size();
  if (t < 2) throw ContractError("energy undefined for single-frame video");
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < t; ++i) total += link_score(tube.boxes[i], tube.boxes[i + 1], cfg);
  return total / static_cast<double>(t - 1);
}

namespace detail {

inline void check_frames(const std::vector<FrameBoxes>& frames) {
  if (frames.size() < 2) throw ContractError("energy undefined for single-frame video");
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].boxes.empty()) {
      throw ContractError("frame " + std::to_string(t) + " has no boxes");
    }
  }
}

// Viterbi over the boxes still alive; returns chosen positions in each
// frame's `alive` list.
inline std::vector<std::size_t> viterbi(const std::vector<FrameBoxes>& frames,
                                        const std::vector<std::vector<std::size_t>>& alive,
                                        const LinkConfig& cfg, double& best_total) {
  const std::size_t T = frames.size();
  std::vector<std::vector<double>> score(T);
  std::vector<std::vector<std::size_t>> back(T);
  score[0].assign(alive[0].size(), 0.0);
  for (std::size_t t = 1; t < T; ++t) {
    score[t].assign(alive[t].size(), 0.0);
    back[t].assign(alive[t].size(), 0);
    for (std::size_t j = 0; j < alive[t].size(); ++j) {
      const Box2D& bj = frames[t].boxes[alive[t][j]];
      double best = 0.0;
      std::size_t arg = 0;
      for (std::size_t i = 0; i < alive[t - 1].size(); ++i) {
        const double s = score[t - 1][i] + link_score(frames[t - 1].boxes[alive[t - 1][i]], bj, cfg);
        if (i == 0 || s > best) {
          best = s;
          arg = i;
        }
      }
      score[t][j] = best;
      back[t][j] = arg;
    }
  }
  std::vector<std::size_t> path(T);
  const auto& last = score[T - 1];
  path[T - 1] = static_cast<std::size_t>(std::max_element(last.begin(), last.end()) - last.begin());
  best_total = last[path[T - 1]];
  for (std::size_t t = T - 1; t > 0; --t) path[t - 1] = back[t][path[t]];
  return path;
}

inline Tube make_tube(const std::vector<FrameBoxes>& frames, std::vector<std::size_t> box_index,
                      double total) {
  Tube tube;
  tube.box_index = std::move(box_index);
  for (std::size_t t = 0; t < frames.size(); ++t) tube.boxes.push_back(frames[t].boxes[tube.box_index[t]]);
  tube.energy = total / static_cast<double>(frames.size() - 1);
  return tube;
}

}  // namespace detail

// Maximum-energy path. Ties go to the smallest box index, resolved from
// the last frame backward.
inline Tube best_path(const std::vector<FrameBoxes>& frames, const LinkConfig& cfg = {}) {
  detail::check_frames(frames);
  std::vector<std::vector<std::size_t>> alive(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    for (std::size_t b = 0; b < frames[t].boxes.size(); ++b) {
      validate(frames[t].boxes[b]);
      alive[t].push_back(b);
    }
  }
  double total = 0.0;
  auto path = detail::viterbi(frames, alive, cfg, total);
  return detail::make_tube(frames, std::move(path), total);
}

// Greedy proposal extraction: take the best path, delete its boxes, repeat
// until some frame is exhausted or cfg.max_proposals tubes exist.
inline std::vector<Tube> extract_proposals(const std::vector<FrameBoxes>& frames,
                                           const LinkConfig& cfg = {}) {
  detail::check_frames(frames);
  if (cfg.lambda < 0.0) throw ConfigError("link lambda must be non-negative");
  std::vector<std::vector<std::size_t>> alive(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    for (std::size_t b = 0; b < frames[t].boxes.size(); ++b) {
      validate(frames[t].boxes[b]);
      alive[t].push_back(b);
    }
  }
  std::vector<Tube> tubes;
  const std::size_t limit = cfg.max_proposals.value_or(static_cast<std::size_t>(-1));
  while (tubes.size() < limit) {
    if (std::any_of(alive.begin(), alive.end(), [](const auto& a) { return a.empty(); })) break;
    double total = 0.0;
    const std::vector<std::size_t> pos = detail::viterbi(frames, alive, cfg, total);
    std::vector<std::size_t> chosen(frames.size());
    for (std::size_t t = 0; t < frames.size(); ++t) {
      chosen[t] = alive[t][pos[t]];
      alive[t].erase(alive[t].begin() + static_cast<std::ptrdiff_t>(pos[t]));
    }
    tubes.push_back(detail::make_tube(frames, std::move(chosen), total));
  }
  std::size_t leftover = 0;
  for (const auto& a : alive) leftover += a.size();
  const bool ragged = std::any_of(alive.begin(), alive.end(),
                                  [&](const auto& a) { return a.size() != alive.front().size(); });
  if (ragged && leftover > 0) {
    warn("unequal boxes per frame: discarding " + std::to_string(leftover) +
         " boxes that cannot form complete tubes");
  }
  // Already non-increasing in exact arithmetic; a stable sort keeps ties in
  // extraction order.
  std::stable_sort(tubes.begin(), tubes.end(),
                   [](const Tube& a, const Tube& b) { return a.energy > b.energy; });
  return tubes;
}

}  // namespace tubeground
