#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "support.hpp"
#include "tubeground/eval.hpp"
#include "tubeground/prepared.hpp"
#include "tubeground/synth.hpp"
#include "tubeground/trainer.hpp"

using namespace tubeground;
using tubeground::testing::box;
using tubeground::testing::random_tensor;

namespace {

Tube tube_of(std::vector<Box2D> boxes) {
  Tube t;
  t.box_index.assign(boxes.size(), 0);
  t.boxes = std::move(boxes);
  return t;
}

std::vector<std::vector<double>> random_overlaps(std::size_t videos, std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> out(videos, std::vector<double>(n));
  for (auto& v : out) {
    for (double& x : v) x = u(rng);
  }
  return out;
}

std::vector<PreparedVideo> synth_videos(std::size_t count, std::uint64_t seed) {
  SynthConfig sc;
  sc.videos = count;
  sc.seed = seed;
  sc.frames = 6;
  auto scen = generate(sc);
  return prepare_dataset(scen.videos, link_dataset(scen.videos), scen.embeddings, 3);
}

InteractorParams params_for(const std::vector<PreparedVideo>& v, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.hidden = 8;
  return init_params(dims_for(v, cfg), seed);
}

}  // namespace

TEST(TubeOverlap, Identity) {
  Tube p = tube_of({box(0, 0, 4, 4), box(1, 1, 5, 5), box(2, 2, 6, 6)});
  GroundTruthTube gt;
  for (std::size_t t = 0; t < 3; ++t) gt.boxes[t] = p.boxes[t];
  EXPECT_EQ(tube_overlap(p, gt), 1.0);
}

TEST(TubeOverlap, Disjoint) {
  Tube p = tube_of({box(0, 0, 4, 4), box(0, 0, 4, 4)});
  GroundTruthTube gt;
  gt.boxes[0] = box(10, 10, 12, 12);
  gt.boxes[1] = box(4, 0, 8, 4);
  EXPECT_EQ(tube_overlap(p, gt), 0.0);
}

TEST(TubeOverlap, MeanOverAnnotatedFrames) {
  Tube p = tube_of({box(0, 0, 10, 10), box(0, 0, 10, 10), box(50, 50, 60, 60)});
  GroundTruthTube gt;
  gt.boxes[0] = box(0, 0, 10, 10);
  gt.boxes[1] = box(5, 0, 15, 10);  // IoU 1/3
  EXPECT_DOUBLE_EQ(tube_overlap(p, gt), 2.0 / 3.0);
}

TEST(TubeOverlap, SymmetricAndBounded) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    auto a = tubeground::testing::random_frames(4, 2, rng);
    Tube pa = tube_of({a[0].boxes[0], a[1].boxes[0], a[2].boxes[0], a[3].boxes[0]});
    Tube pb = tube_of({a[0].boxes[1], a[1].boxes[1], a[2].boxes[1], a[3].boxes[1]});
    GroundTruthTube ga, gb;
    for (std::size_t t = 0; t < 4; t += 1 + trial % 2) {
      ga.boxes[t] = pa.boxes[t];
      gb.boxes[t] = pb.boxes[t];
    }
    const double ab = tube_overlap(pa, gb), ba = tube_overlap(pb, ga);
    EXPECT_EQ(ab, ba);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(TubeOverlap, Errors) {
  Tube p = tube_of({box(0, 0, 1, 1)});
  GroundTruthTube gt;
  EXPECT_THROW(tube_overlap(p, gt), ContractError);
  gt.boxes[3] = box(0, 0, 1, 1);
  EXPECT_THROW(tube_overlap(p, gt), ContractError);
}

TEST(AccuracyAt, Examples) {
  const std::vector<double> ones{1.0, 1.0, 1.0};
  EXPECT_EQ(accuracy_at(ones, 0.6), 1.0);
  const std::vector<double> at{0.4, 0.5};
  EXPECT_EQ(accuracy_at(at, 0.4), 0.5);
  EXPECT_EQ(accuracy_at(at, 0.5), 0.0);
  const std::vector<double> half{0.5, 0.3};
  EXPECT_EQ(accuracy_at(half, 0.4), 0.5);
  EXPECT_THROW(accuracy_at(std::vector<double>{}, 0.5), ContractError);
  EXPECT_THROW(accuracy_at(std::vector<double>{1.5}, 0.5), ContractError);
}

TEST(AccuracyAt, NonIncreasingInEta) {
  std::mt19937_64 rng(2);
  auto ov = random_overlaps(1, 200, rng)[0];
  double prev = 1.0;
  for (double eta = 0.0; eta <= 1.0; eta += 0.01) {
    const double a = accuracy_at(ov, eta);
    EXPECT_LE(a, prev);
    prev = a;
  }
}

TEST(MakeRow, AveragesThresholds) {
  const std::vector<double> ov{0.45, 0.55, 0.65, 0.1};
  auto row = make_row("m", ov, kDefaultEtas);
  EXPECT_EQ(row.accuracy, (std::vector<double>{0.75, 0.5, 0.25}));
  EXPECT_DOUBLE_EQ(row.average, 0.5);
}

TEST(UpperBound, PerfectProposalGivesOne) {
  std::vector<std::vector<double>> ov{{0.1, 1.0}, {1.0}, {0.3, 0.2, 1.0}};
  auto row = upper_bound(ov);
  for (double a : row.accuracy) EXPECT_EQ(a, 1.0);
}

TEST(UpperBound, MatchesBruteForceMax) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto ov = random_overlaps(15, 5, rng);
    auto row = upper_bound(ov);
    for (std::size_t k = 0; k < kDefaultEtas.size(); ++k) {
      std::size_t hits = 0;
      for (const auto& v : ov) {
        bool any = false;
        for (double o : v) any = any || o > kDefaultEtas[k];
        hits += any;
      }
      EXPECT_DOUBLE_EQ(row.accuracy[k], static_cast<double>(hits) / 15.0);
    }
  }
}

TEST(RandomBaseline, SingleProposalEqualsUpperBound) {
  std::vector<std::vector<double>> ov{{0.7}, {0.45}, {0.2}};
  EXPECT_EQ(random_baseline(ov).exact.accuracy, upper_bound(ov).accuracy);
}

TEST(RandomBaseline, OnePassingProposalGivesOneOverN) {
  for (std::size_t N : {2u, 5u, 8u}) {
    std::vector<double> v(N, 0.1);
    v[N / 2] = 0.9;
    auto row = random_baseline({v, v}, {0.5});
    EXPECT_DOUBLE_EQ(row.exact.accuracy[0], 1.0 / N);
  }
}

TEST(RandomBaseline, MonteCarloAgreesWithExpectation) {
  std::mt19937_64 rng(4);
  auto ov = random_overlaps(30, 5, rng);
  auto row = random_baseline(ov, kDefaultEtas, 4000, 9);
  for (std::size_t k = 0; k < kDefaultEtas.size(); ++k) {
    const double se = row.monte_carlo_sd[k] / std::sqrt(4000.0);
    EXPECT_LE(std::abs(row.monte_carlo[k] - row.exact.accuracy[k]), 3.0 * se + 1e-12);
  }
}

TEST(Ground, SingleProposalIsChosen) {
  auto videos = synth_videos(1, 1);
  auto params = params_for(videos, 0);
  std::vector<Tensor> one{videos[0].proposals[3]};
  EXPECT_EQ(ground(params, one, videos[0].sentence).index, 0u);
}

TEST(Ground, PicksLowestArgmax) {
  auto videos = synth_videos(3, 2);
  auto params = params_for(videos, 1);
  for (const auto& v : videos) {
    auto g = ground(params, v);
    EXPECT_EQ(g.index, ProposalScores(g.scores).argmax);
    EXPECT_NEAR(g.match.score, g.scores[g.index], 1e-15);
  }
  std::vector<Tensor> twins{videos[0].proposals[1], videos[0].proposals[1]};
  EXPECT_EQ(ground(params, twins, videos[0].sentence).index, 0u);
}

TEST(Evaluate, UpperBoundDominatesMethod) {
  auto videos = synth_videos(12, 3);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto rep = evaluate(params_for(videos, seed), videos);
    for (std::size_t k = 0; k < rep.etas.size(); ++k) {
      EXPECT_GE(rep.upper.accuracy[k], rep.method.accuracy[k]);
      EXPECT_GE(rep.upper.accuracy[k], rep.random.exact.accuracy[k]);
    }
    EXPECT_GE(rep.hit_rate, 0.0);
    EXPECT_LE(rep.mean_score_entropy, std::log(5.0));
  }
}

TEST(Evaluate, ThreadsDoNotChangeReport) {
  auto videos = synth_videos(9, 4);
  auto params = params_for(videos, 2);
  EvalOptions one, four;
  four.threads = 4;
  EXPECT_EQ(to_json(evaluate(params, videos, one)).dump(), to_json(evaluate(params, videos, four)).dump());
}

TEST(Evaluate, ReportsAreWellFormed) {
  auto videos = synth_videos(5, 5);
  auto rep = evaluate(params_for(videos, 3), videos);
  auto j = to_json(rep);
  ASSERT_EQ(j["rows"].size(), 3u);
  EXPECT_EQ(j["rows"][2]["name"], "proposal upper bound");
  EXPECT_EQ(j["videos"].size(), 5u);
  const std::string csv = to_csv(rep);
  EXPECT_EQ(csv.rfind("row,acc@0.4,acc@0.5,acc@0.6,average\n", 0), 0u);

  auto bins = score_distribution(rep.videos);
  std::size_t total = 0;
  for (const auto& b : bins) {
    total += b.count;
    EXPECT_GE(b.mean_score, 0.0);
    EXPECT_LE(b.mean_score, 1.0);
  }
  EXPECT_EQ(total, 25u);
}

TEST(Evaluate, MissingGroundTruthIsError) {
  auto videos = synth_videos(2, 6);
  videos[1].ground_truth.reset();
  EXPECT_THROW(evaluate(params_for(videos, 0), videos), ContractError);
}

TEST(AttentionDump, OneEntryPerSegmentAndToken) {
  auto videos = synth_videos(1, 7);
  auto g = ground(params_for(videos, 0), videos[0]);
  auto j = attention_dump(g.match, videos[0].tokens);
  ASSERT_EQ(j.size(), 3u);
  for (const auto& [seg, row] : j.items()) {
    ASSERT_EQ(row.size(), videos[0].tokens.size());
    double s = 0.0;
    for (const auto& e : row) s += e["weight"].get<double>();
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  EXPECT_THROW(attention_dump(g.match, {"x"}), DimensionError);
}
