#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tubeground/eval.hpp"
#include "tubeground/prepared.hpp"
#include "tubeground/synth.hpp"

using namespace tubeground;

namespace {

std::string dump(const SynthScenario& sc) {
  std::ostringstream out;
  write_dataset(out, sc.videos);
  write_embeddings(out, sc.embeddings);
  return out.str();
}

// Index of the concept token in a generated sentence.
std::size_t sentence_concept(const std::vector<std::string>& sentence, std::size_t concepts) {
  for (std::size_t c = 0; c < concepts; ++c) {
    for (const auto& tok : sentence) {
      if (tok == concept_token(c)) return c;
    }
  }
  return concepts;
}

// Mean per-frame feature of one linked tube, projected on axis c.
double concept_projection(const Tube& tube, const FeatureStore& store, std::size_t c) {
  double s = 0.0;
  for (std::size_t t = 0; t < tube.length(); ++t) s += store.get(t, tube.box_index[t])[c];
  return s / static_cast<double>(tube.length());
}

}  // namespace

TEST(Synth, SameSeedSameBytes) {
  SynthConfig cfg;
  cfg.videos = 12;
  cfg.seed = 7;
  EXPECT_EQ(dump(generate(cfg)), dump(generate(cfg)));
  SynthConfig other = cfg;
  other.seed = 8;
  EXPECT_NE(dump(generate(cfg)), dump(generate(other)));
}

TEST(Synth, ShapesFollowConfig) {
  SynthConfig cfg;
  cfg.videos = 5;
  cfg.frames = 7;
  cfg.boxes = 3;
  cfg.feature_dim = 9;
  cfg.tokens = 4;
  auto sc = generate(cfg);
  ASSERT_EQ(sc.videos.size(), 5u);
  EXPECT_EQ(sc.embeddings.size(), cfg.vocab);
  for (const auto& v : sc.videos) {
    ASSERT_EQ(v.frames.size(), 7u);
    for (const auto& f : v.frames) EXPECT_EQ(f.boxes.size(), 3u);
    EXPECT_EQ(v.features.dim(), 9u);
    EXPECT_EQ(v.sentence.size(), 4u);
    ASSERT_TRUE(v.ground_truth.has_value());
    EXPECT_EQ(v.ground_truth->boxes.size(), 7u);
  }
}

TEST(Synth, SentenceNamesTargetConcept) {
  SynthConfig cfg;
  cfg.videos = 40;
  auto sc = generate(cfg);
  std::set<std::size_t> seen;
  for (std::size_t v = 0; v < sc.videos.size(); ++v) {
    EXPECT_EQ(sentence_concept(sc.videos[v].sentence, cfg.concepts), sc.target_concept[v]);
    std::size_t mentions = 0;
    for (const auto& tok : sc.videos[v].sentence) mentions += tok.rfind("concept", 0) == 0;
    EXPECT_EQ(mentions, 1u);
    seen.insert(sc.target_concept[v]);
  }
  EXPECT_EQ(seen.size(), cfg.concepts);
}

TEST(Synth, ConceptDirectionsAreOrthonormal) {
  SynthConfig cfg;
  auto sc = generate(cfg);
  for (std::size_t a = 0; a < cfg.concepts; ++a) {
    const auto& ea = *sc.embeddings.find(concept_token(a));
    for (std::size_t b = 0; b < cfg.concepts; ++b) {
      const auto& eb = *sc.embeddings.find(concept_token(b));
      double dot = 0.0;
      for (std::size_t k = 0; k < ea.size(); ++k) dot += ea[k] * eb[k];
      EXPECT_EQ(dot, a == b ? 1.0 : 0.0);
    }
  }
}

TEST(Synth, NoiselessTargetCarriesItsConcept) {
  SynthConfig cfg;
  cfg.videos = 20;
  cfg.noise = 0.0;
  auto sc = generate(cfg);
  for (std::size_t v = 0; v < sc.videos.size(); ++v) {
    const auto& rec = sc.videos[v];
    const std::size_t c = sc.target_concept[v];
    // The ground-truth box is the only one whose feature is exactly u_c.
    for (std::size_t t = 0; t < rec.frames.size(); ++t) {
      std::size_t matches = 0;
      for (std::size_t b = 0; b < rec.frames[t].boxes.size(); ++b) {
        const auto& f = rec.features.get(t, b);
        const bool is_uc = f[c] == 1.0 && std::count(f.begin(), f.end(), 0.0) == static_cast<long>(f.size() - 1);
        if (is_uc) {
          ++matches;
          EXPECT_EQ(iou(rec.frames[t].boxes[b], rec.ground_truth->boxes.at(t)), 1.0);
        }
      }
      EXPECT_EQ(matches, 1u);
    }
  }
}

TEST(Synth, CorrelationPickerIsPerfectWithoutNoise) {
  SynthConfig cfg;
  cfg.videos = 50;
  cfg.concepts = 2;
  cfg.boxes = 2;
  cfg.noise = 0.0;
  cfg.confuser_rate = 1.0;
  auto sc = generate(cfg);
  auto props = link_dataset(sc.videos);
  std::size_t hits = 0;
  for (std::size_t v = 0; v < sc.videos.size(); ++v) {
    const auto& tubes = props.at(sc.videos[v].id);
    const std::size_t c = sentence_concept(sc.videos[v].sentence, cfg.concepts);
    std::size_t pick = 0;
    for (std::size_t n = 1; n < tubes.size(); ++n) {
      if (concept_projection(tubes[n], sc.videos[v].features, c) >
          concept_projection(tubes[pick], sc.videos[v].features, c)) {
        pick = n;
      }
    }
    const auto ov = proposal_overlaps(tubes, *sc.videos[v].ground_truth);
    hits += pick == ad::argmax_index(ov);
  }
  EXPECT_EQ(hits, sc.videos.size());
}

TEST(Synth, RandomPickerExpectsOneOverN) {
  SynthConfig cfg;
  cfg.videos = 30;
  cfg.boxes = 2;
  cfg.concepts = 2;
  auto sc = generate(cfg);
  auto props = link_dataset(sc.videos);
  std::vector<std::vector<double>> ov;
  for (const auto& v : sc.videos) ov.push_back(proposal_overlaps(props.at(v.id), *v.ground_truth));
  // One proposal is the ground truth and the other never overlaps it.
  EXPECT_DOUBLE_EQ(random_baseline(ov, {0.5}).exact.accuracy[0], 0.5);
}

TEST(Synth, ConfuserShowsAnotherConcept) {
  SynthConfig cfg;
  cfg.videos = 30;
  cfg.noise = 0.0;
  cfg.confuser_rate = 1.0;
  auto sc = generate(cfg);
  for (std::size_t v = 0; v < sc.videos.size(); ++v) {
    std::set<std::size_t> concepts;
    const auto& rec = sc.videos[v];
    for (std::size_t b = 0; b < rec.frames[0].boxes.size(); ++b) {
      const auto& f = rec.features.get(0, b);
      for (std::size_t c = 0; c < cfg.concepts; ++c) {
        if (f[c] == 1.0) concepts.insert(c);
      }
    }
    EXPECT_EQ(concepts.size(), 2u);
    EXPECT_TRUE(concepts.count(sc.target_concept[v]));
  }
  cfg.confuser_rate = 0.0;
  sc = generate(cfg);
  for (const auto& rec : sc.videos) {
    std::size_t concept_boxes = 0;
    for (std::size_t b = 0; b < rec.frames[0].boxes.size(); ++b) {
      const auto& f = rec.features.get(0, b);
      for (std::size_t c = 0; c < cfg.concepts; ++c) concept_boxes += f[c] == 1.0;
    }
    EXPECT_EQ(concept_boxes, 1u);
  }
}

TEST(Synth, LinkerRecoversGroundTruth) {
  SynthConfig cfg;
  cfg.videos = 60;
  auto sc = generate(cfg);
  auto props = link_dataset(sc.videos);
  for (const auto& v : sc.videos) {
    const auto ov = proposal_overlaps(props.at(v.id), *v.ground_truth);
    EXPECT_GE(*std::max_element(ov.begin(), ov.end()), 0.9) << v.id;
  }
}

TEST(Synth, ConfidenceDoesNotLeakLabels) {
  SynthConfig cfg;
  cfg.videos = 60;
  auto sc = generate(cfg);
  double target_sum = 0.0, other_sum = 0.0;
  std::size_t target_n = 0, other_n = 0;
  for (const auto& v : sc.videos) {
    for (std::size_t t = 0; t < v.frames.size(); ++t) {
      const Box2D& gt = v.ground_truth->boxes.at(t);
      for (const auto& b : v.frames[t].boxes) {
        EXPECT_GE(b.confidence, 0.4);
        EXPECT_LE(b.confidence, 0.6);
        if (iou(b, gt) == 1.0) {
          target_sum += b.confidence;
          ++target_n;
        } else {
          other_sum += b.confidence;
          ++other_n;
        }
      }
    }
  }
  ASSERT_GE(target_n + other_n, 1000u);
  ASSERT_EQ(target_n, 600u);
  EXPECT_LT(std::abs(target_sum / target_n - other_sum / other_n), 0.02);
}

TEST(Synth, MotionIsSmooth) {
  SynthConfig cfg;
  cfg.videos = 20;
  auto sc = generate(cfg);
  for (const auto& v : sc.videos) {
    for (std::size_t t = 1; t < v.frames.size(); ++t) {
      const Box2D& a = v.ground_truth->boxes.at(t - 1);
      const Box2D& b = v.ground_truth->boxes.at(t);
      EXPECT_LE(std::abs(b.x1 - a.x1), 10.0);
      EXPECT_LE(std::abs(b.y1 - a.y1), 1.0);
    }
  }
}

TEST(Synth, RejectsBadConfig) {
  SynthConfig cfg;
  cfg.boxes = 1;
  EXPECT_THROW(generate(cfg), ContractError);
  cfg = SynthConfig{};
  cfg.frames = 1;
  EXPECT_THROW(generate(cfg), ContractError);
  cfg = SynthConfig{};
  cfg.concepts = cfg.vocab + 1;
  EXPECT_THROW(generate(cfg), ContractError);
  cfg = SynthConfig{};
  cfg.confuser_rate = 1.5;
  EXPECT_THROW(generate(cfg), ContractError);
  cfg = SynthConfig{};
  cfg.noise = -0.1;
  EXPECT_THROW(generate(cfg), ContractError);
}
