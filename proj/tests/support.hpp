#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tubeground/linker.hpp"
#include "tubeground/tensor.hpp"

namespace tubeground::testing {

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Tensor t(rows, cols);
  for (double& v : t.data()) v = g(rng);
  return t;
}

inline Box2D box(double x1, double y1, double x2, double y2, double conf = 0.5) {
  return Box2D{x1, y1, x2, y2, conf};
}

// T frames of n random boxes inside a 100 x 100 canvas.
inline std::vector<FrameBoxes> random_frames(std::size_t T, std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0.0, 80.0), size(5.0, 20.0), conf(0.0, 1.0);
  std::vector<FrameBoxes> frames(T);
  for (std::size_t t = 0; t < T; ++t) {
    frames[t].frame_index = t;
    for (std::size_t b = 0; b < n; ++b) {
      const double x = pos(rng), y = pos(rng);
      frames[t].boxes.push_back(Box2D{x, y, x + size(rng), y + size(rng), conf(rng)});
    }
  }
  return frames;
}

struct BrutePath {
  std::vector<std::size_t> index;
  double energy = 0.0;
};

// Exhaustive best path over the given per-frame candidate lists. Link
// scores are summed front to back; among equal totals the winner has the
// smallest index in the last frame, then the one before, and so on.
inline BrutePath brute_force_path(const std::vector<FrameBoxes>& frames,
                                  const std::vector<std::vector<std::size_t>>& alive, const LinkConfig& cfg) {
  const std::size_t T = frames.size();
  std::vector<std::size_t> pos(T, 0);
  BrutePath best;
  bool have = false;
  double best_total = 0.0;
  auto reversed_less = [&](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    for (std::size_t t = T; t-- > 0;) {
      if (a[t] != b[t]) return a[t] < b[t];
    }
    return false;
  };
  while (true) {
    double total = 0.0;
    for (std::size_t t = 0; t + 1 < T; ++t) {
      total += link_score(frames[t].boxes[alive[t][pos[t]]], frames[t + 1].boxes[alive[t + 1][pos[t + 1]]], cfg);
    }
    std::vector<std::size_t> idx(T);
    for (std::size_t t = 0; t < T; ++t) idx[t] = alive[t][pos[t]];
    if (!have || total > best_total || (total == best_total && reversed_less(idx, best.index))) {
      best_total = total;
      best.index = idx;
      have = true;
    }
    std::size_t t = 0;
    while (t < T && ++pos[t] == alive[t].size()) pos[t++] = 0;
    if (t == T) break;
  }
  best.energy = best_total / static_cast<double>(T - 1);
  return best;
}

inline BrutePath brute_force_path(const std::vector<FrameBoxes>& frames, const LinkConfig& cfg) {
  std::vector<std::vector<std::size_t>> alive(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    for (std::size_t b = 0; b < frames[t].boxes.size(); ++b) alive[t].push_back(b);
  }
  return brute_force_path(frames, alive, cfg);
}

// Greedy extraction re-done by exhaustive search after every deletion.
inline std::vector<BrutePath> brute_force_greedy(const std::vector<FrameBoxes>& frames, const LinkConfig& cfg) {
  std::vector<std::vector<std::size_t>> alive(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    for (std::size_t b = 0; b < frames[t].boxes.size(); ++b) alive[t].push_back(b);
  }
  std::vector<BrutePath> out;
  while (std::none_of(alive.begin(), alive.end(), [](const auto& a) { return a.empty(); })) {
    BrutePath p = brute_force_path(frames, alive, cfg);
    for (std::size_t t = 0; t < frames.size(); ++t) {
      alive[t].erase(std::find(alive[t].begin(), alive[t].end(), p.index[t]));
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace tubeground::testing
