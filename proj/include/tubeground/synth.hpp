#pragma once

// Seeded generator of separable grounding problems.
//
// Each video holds n smoothly moving tubes in separate horizontal lanes.
// The target tube carries concept c (feature = u_c + noise). With
// probability confuser_rate one more tube carries a different concept; the
// rest show background directions, drawn from a small pool shared by all
// videos, that no sentence names. The sentence is the token for c mixed with
// filler tokens. Confidences are drawn the same way for every tube, so
// linking cannot leak which tube is the target.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "tubeground/dataset.hpp"
#include "tubeground/error.hpp"
#include "tubeground/features.hpp"

namespace tubeground {

struct SynthConfig {
  std::size_t videos = 96;
  std::size_t frames = 10;         // T
  std::size_t boxes = 5;           // n, boxes (and tubes) per frame
  std::size_t concepts = 4;        // C
  std::size_t feature_dim = 16;    // d_box
  std::size_t vocab = 16;          // V, concept tokens plus fillers
  std::size_t tokens = 2;          // tokens per sentence
  std::size_t embed_dim = 16;      // d_q
  double noise = 0.2;              // sigma of per-component feature noise
  double confuser_rate = 0.0;      // chance a video also shows a second concept
  std::size_t backgrounds = 0;     // background directions shared by all videos, 0 = boxes - 1
  std::uint64_t seed = 0;

  void validate() const {
    if (videos == 0) throw ContractError("synth: videos must be positive");
    if (frames < 2) throw ContractError("synth: need at least 2 frames");
    if (boxes < 2) throw ContractError("synth: need at least 2 boxes per frame");
    if (concepts == 0 || concepts > vocab) throw ContractError("synth: need 1 <= concepts <= vocab");
    if (feature_dim == 0 || embed_dim == 0 || tokens == 0) throw ContractError("synth: dimensions must be positive");
    if (!(noise >= 0.0)) throw ContractError("synth: noise must be non-negative");
    if (!(confuser_rate >= 0.0 && confuser_rate <= 1.0)) throw ContractError("synth: confuser_rate outside [0, 1]");
  }
};

struct SynthScenario {
  std::vector<VideoRecord> videos;
  EmbeddingTable embeddings;
  // Concept of each video's target tube, parallel to videos.
  std::vector<std::size_t> target_concept;
  // Which generated tube (in lane order) is the target, per video.
  std::vector<std::size_t> target_lane;
};

inline constexpr double kSynthFrameWidth = 640.0;
inline constexpr double kSynthLaneHeight = 80.0;

inline std::string concept_token(std::size_t c) { return "concept" + std::to_string(c); }
inline std::string filler_token(std::size_t k) { return "filler" + std::to_string(k); }

namespace detail {

inline std::vector<double> unit_basis(std::size_t dim, std::size_t k) {
  std::vector<double> v(dim, 0.0);
  v[k] = 1.0;
  return v;
}

inline std::vector<double> random_unit(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(dim);
  double n = 0.0;
  do {
    n = 0.0;
    for (double& x : v) n += (x = g(rng)) * x;
  } while (n < 1e-12);
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

// Orthonormal basis vectors while they last, random unit vectors after.
inline std::vector<std::vector<double>> directions(std::size_t count, std::size_t offset, std::size_t dim,
                                                   std::mt19937_64& rng) {
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < count; ++k) {
    out.push_back(offset + k < dim ? unit_basis(dim, offset + k) : random_unit(dim, rng));
  }
  return out;
}

struct Track {
  std::vector<Box2D> boxes;
};

inline Track smooth_track(std::size_t lane, std::size_t frames, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double w = 60.0 + 40.0 * u(rng);
  const double h = 50.0 + 10.0 * u(rng);
  const double top = static_cast<double>(lane) * kSynthLaneHeight;
  double x = (kSynthFrameWidth - w) * u(rng);
  double y = top + 2.0 + (kSynthLaneHeight - 4.0 - h) * u(rng);
  double vx = -4.0 + 8.0 * u(rng);
  const double base_conf = 0.41 + 0.18 * u(rng);
  Track tr;
  for (std::size_t t = 0; t < frames; ++t) {
    const double conf = std::clamp(base_conf - 0.01 + 0.02 * u(rng), 0.4, 0.6);
    tr.boxes.push_back(Box2D{x, y, x + w, y + h, conf});
    vx = std::clamp(vx - 1.0 + 2.0 * u(rng), -5.0, 5.0);
    x += vx;
    if (x < 0.0) {
      x = -x;
      vx = -vx;
    }
    if (x + w > kSynthFrameWidth) {
      x = 2.0 * (kSynthFrameWidth - w) - x;
      vx = -vx;
    }
    y = std::clamp(y - 0.5 + u(rng), top + 1.0, top + kSynthLaneHeight - 1.0 - h);
  }
  return tr;
}

}  // namespace detail

inline SynthScenario generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthScenario sc;
  std::mt19937_64 world(cfg.seed);

  const auto concept_dirs = detail::directions(cfg.concepts, 0, cfg.feature_dim, world);
  const std::size_t n_background = cfg.backgrounds == 0 ? cfg.boxes - 1 : cfg.backgrounds;
  const auto background_dirs = detail::directions(n_background, cfg.concepts, cfg.feature_dim, world);

  const std::size_t n_fillers = cfg.vocab - cfg.concepts;
  const auto concept_emb = detail::directions(cfg.concepts, 0, cfg.embed_dim, world);
  const auto filler_emb = detail::directions(n_fillers, cfg.concepts, cfg.embed_dim, world);
  for (std::size_t c = 0; c < cfg.concepts; ++c) sc.embeddings.add(concept_token(c), concept_emb[c]);
  for (std::size_t k = 0; k < n_fillers; ++k) sc.embeddings.add(filler_token(k), filler_emb[k]);

  for (std::size_t v = 0; v < cfg.videos; ++v) {
    std::seed_seq seq{static_cast<std::uint64_t>(cfg.seed), static_cast<std::uint64_t>(v), std::uint64_t{0x5eed}};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> noise(0.0, 1.0);

    const std::size_t target = std::uniform_int_distribution<std::size_t>(0, cfg.concepts - 1)(rng);

    // Direction of each tube; tube 0 is the target, tube 1 the confuser if any.
    const bool confuser = cfg.concepts > 1 && std::bernoulli_distribution(cfg.confuser_rate)(rng);
    std::vector<std::vector<double>> dirs(cfg.boxes);
    dirs[0] = concept_dirs[target];
    std::vector<std::size_t> bg(background_dirs.size());
    std::iota(bg.begin(), bg.end(), 0);
    std::shuffle(bg.begin(), bg.end(), rng);
    std::size_t next_bg = 0;
    for (std::size_t k = 1; k < cfg.boxes; ++k) {
      if (k == 1 && confuser) {
        std::size_t other = std::uniform_int_distribution<std::size_t>(0, cfg.concepts - 2)(rng);
        if (other >= target) ++other;
        dirs[k] = concept_dirs[other];
      } else {
        dirs[k] = background_dirs[bg[next_bg++ % bg.size()]];
      }
    }

    std::vector<std::size_t> lanes(cfg.boxes);
    std::iota(lanes.begin(), lanes.end(), 0);
    std::shuffle(lanes.begin(), lanes.end(), rng);
    std::vector<detail::Track> tracks;
    for (std::size_t k = 0; k < cfg.boxes; ++k) tracks.push_back(detail::smooth_track(lanes[k], cfg.frames, rng));

    VideoRecord rec;
    char id[32];
    std::snprintf(id, sizeof(id), "synth-%05zu", v);
    rec.id = id;
    rec.features.resize_frames(cfg.frames);
    GroundTruthTube gt;
    for (std::size_t t = 0; t < cfg.frames; ++t) {
      // Shuffle detection order so box indices carry no label information.
      std::vector<std::size_t> order(cfg.boxes);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      FrameBoxes fb;
      fb.frame_index = t;
      for (std::size_t b = 0; b < cfg.boxes; ++b) {
        const std::size_t k = order[b];
        fb.boxes.push_back(tracks[k].boxes[t]);
        std::vector<double> feat = dirs[k];
        for (double& x : feat) x += cfg.noise * noise(rng);
        rec.features.set(t, b, std::move(feat));
      }
      gt.boxes[t] = tracks[0].boxes[t];
      gt.boxes[t].confidence = 1.0;
      rec.frames.push_back(std::move(fb));
    }
    rec.ground_truth = std::move(gt);

    const std::size_t slot = std::uniform_int_distribution<std::size_t>(0, cfg.tokens - 1)(rng);
    for (std::size_t i = 0; i < cfg.tokens; ++i) {
      if (i == slot || n_fillers == 0) {
        rec.sentence.push_back(concept_token(target));
      } else {
        rec.sentence.push_back(filler_token(std::uniform_int_distribution<std::size_t>(0, n_fillers - 1)(rng)));
      }
    }
    sc.videos.push_back(std::move(rec));
    sc.target_concept.push_back(target);
    sc.target_lane.push_back(lanes[0]);
  }
  return sc;
}

}  // namespace tubeground
