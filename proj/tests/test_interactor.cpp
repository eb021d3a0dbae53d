#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "support.hpp"
#include "tubeground/gradcheck.hpp"
#include "tubeground/interactor.hpp"

using namespace tubeground;
using tubeground::testing::random_tensor;

namespace {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), Vec(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t(r, c);
  }
  return m;
}

// x (1 x n) times W (n x m), plus b.
Vec affine(const Vec& x, const Tensor& w, const Tensor* b) {
  Vec out(w.cols(), 0.0);
  for (std::size_t j = 0; j < w.cols(); ++j) {
    double s = b ? (*b)(0, j) : 0.0;
    for (std::size_t i = 0; i < w.rows(); ++i) s += x[i] * w(i, j);
    out[j] = s;
  }
  return out;
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Plain-loop LSTM with gate blocks i | f | g | o, starting from zeros.
Mat reference_lstm(const Mat& x, const Tensor& wx, const Tensor& wh, const Tensor& b) {
  const std::size_t D = wh.rows();
  Vec h(D, 0.0), c(D, 0.0);
  Mat out;
  for (const Vec& row : x) {
    Vec z = affine(row, wx, &b);
    const Vec zh = affine(h, wh, nullptr);
    for (std::size_t k = 0; k < 4 * D; ++k) z[k] += zh[k];
    for (std::size_t k = 0; k < D; ++k) {
      const double i = sigmoid(z[k]), f = sigmoid(z[D + k]), g = std::tanh(z[2 * D + k]), o = sigmoid(z[3 * D + k]);
      c[k] = f * c[k] + i * g;
      h[k] = o * std::tanh(c[k]);
    }
    out.push_back(h);
  }
  return out;
}

Mat reference_encode(const Tensor& in, const Tensor& pw, const Tensor& pb, const Tensor& wx, const Tensor& wh,
                     const Tensor& b) {
  Mat x;
  for (const Vec& row : to_mat(in)) x.push_back(affine(row, pw, &pb));
  return reference_lstm(x, wx, wh, b);
}

struct ReferencePair {
  Mat attention;
  double score = 0.0;
};

ReferencePair reference_pair(const InteractorParams& p, const Tensor& segments, const Tensor& words) {
  const auto& w = p.weights;
  const Mat hp = reference_encode(segments, w.visual_proj_w, w.visual_proj_b, w.visual_lstm_wx, w.visual_lstm_wh,
                                  w.visual_lstm_b);
  const Mat hq = reference_encode(words, w.word_proj_w, w.word_proj_b, w.word_lstm_wx, w.word_lstm_wh,
                                  w.word_lstm_b);
  const std::size_t K = w.attn_wq.rows(), D = hp[0].size();
  ReferencePair out;
  double total = 0.0;
  for (const Vec& hi : hp) {
    Vec e;
    for (const Vec& hj : hq) {
      double s = w.attn_b2(0, 0);
      for (std::size_t k = 0; k < K; ++k) {
        double u = w.attn_b1(0, k);
        for (std::size_t d = 0; d < D; ++d) u += w.attn_wq(k, d) * hj[d] + w.attn_wp(k, d) * hi[d];
        s += w.attn_w(k, 0) * std::tanh(u);
      }
      e.push_back(s);
    }
    double mx = e[0];
    for (double v : e) mx = std::max(mx, v);
    double z = 0.0;
    for (double& v : e) z += (v = std::exp(v - mx));
    for (double& v : e) v /= z;
    Vec guided(D, 0.0);
    for (std::size_t j = 0; j < hq.size(); ++j) {
      for (std::size_t d = 0; d < D; ++d) guided[d] += e[j] * hq[j][d];
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      dot += hi[d] * guided[d];
      na += hi[d] * hi[d];
      nb += guided[d] * guided[d];
    }
    total += dot / std::sqrt(na * nb);
    out.attention.push_back(e);
  }
  out.score = total / static_cast<double>(hp.size());
  return out;
}

InteractorDims small_dims(std::size_t dp = 5, std::size_t dq = 4, std::size_t D = 6, std::size_t K = 3) {
  InteractorDims d;
  d.visual_dim = dp;
  d.word_dim = dq;
  d.visual_hidden = d.word_hidden = D;
  d.attention = K;
  return d;
}

}  // namespace

TEST(Init, DeterministicAndSeeded) {
  auto d = small_dims();
  EXPECT_EQ(init_params(d, 4), init_params(d, 4));
  EXPECT_FALSE(init_params(d, 4) == init_params(d, 5));
}

TEST(Init, RespectsFanInBound) {
  auto d = small_dims(100, 100, 100, 100);
  auto p = init_params(d, 1);
  for (double v : p.weights.visual_proj_w.data()) {
    EXPECT_GE(v, -0.1);
    EXPECT_LE(v, 0.1);
  }
  for (double v : p.weights.word_proj_b.data()) EXPECT_LE(std::abs(v), 0.1);
}

TEST(Init, ForgetGateBiasIsOne) {
  auto p = init_params(small_dims(), 2);
  for (std::size_t k = 6; k < 12; ++k) {
    EXPECT_EQ(p.weights.visual_lstm_b[k], 1.0);
    EXPECT_EQ(p.weights.word_lstm_b[k], 1.0);
  }
  EXPECT_NE(p.weights.visual_lstm_b[0], 1.0);
}

TEST(Dims, HiddenSizesMustAgree) {
  auto d = small_dims();
  d.word_hidden = 7;
  EXPECT_THROW(init_params(d, 0), ConfigError);
  d = small_dims();
  d.visual_dim = 0;
  EXPECT_THROW(init_params(d, 0), ContractError);
}

TEST(Encode, ZeroNetworkGivesZeroStates) {
  auto p = zero_params(small_dims());
  std::mt19937_64 rng(3);
  auto enc = encode(p, random_tensor(4, 5, rng), random_tensor(3, 4, rng));
  for (double v : enc.visual.data()) EXPECT_EQ(v, 0.0);
  for (double v : enc.words.data()) EXPECT_EQ(v, 0.0);
}

TEST(Encode, MatchesReferenceLstm) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    auto p = init_params(small_dims(), trial);
    Tensor seg = random_tensor(7, 5, rng), words = random_tensor(4, 4, rng);
    auto enc = encode(p, seg, words);
    const auto& w = p.weights;
    Mat hp = reference_encode(seg, w.visual_proj_w, w.visual_proj_b, w.visual_lstm_wx, w.visual_lstm_wh,
                              w.visual_lstm_b);
    Mat hq = reference_encode(words, w.word_proj_w, w.word_proj_b, w.word_lstm_wx, w.word_lstm_wh, w.word_lstm_b);
    ASSERT_EQ(enc.visual.rows(), 7u);
    for (std::size_t t = 0; t < 7; ++t) {
      for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(enc.visual(t, k), hp[t][k], 1e-13);
    }
    for (std::size_t t = 0; t < 4; ++t) {
      for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(enc.words(t, k), hq[t][k], 1e-13);
    }
  }
}

TEST(Encode, RejectsWrongFeatureSize) {
  auto p = init_params(small_dims(), 0);
  EXPECT_THROW(encode(p, Tensor(3, 4), Tensor(2, 4)), ContractError);
  EXPECT_THROW(encode(p, Tensor(3, 5), Tensor(2, 3)), ContractError);
}

TEST(Attention, MatchesDirectEvaluation) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = init_params(small_dims(), 100 + trial);
    Tensor seg = random_tensor(5, 5, rng), words = random_tensor(6, 4, rng);
    auto got = evaluate_pair(p, seg, words);
    auto want = reference_pair(p, seg, words);
    EXPECT_NEAR(got.score, want.score, 1e-12);
    for (std::size_t i = 0; i < 5; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        EXPECT_NEAR(got.attention(i, j), want.attention[i][j], 1e-12);
        row += got.attention(i, j);
      }
      EXPECT_NEAR(row, 1.0, 1e-9);
    }
  }
}

TEST(Attention, SingleWordTakesAllWeight) {
  std::mt19937_64 rng(7);
  auto p = init_params(small_dims(), 8);
  Tensor words = random_tensor(1, 4, rng);
  auto enc = encode(p, random_tensor(4, 5, rng), words);
  auto att = attend(p, enc);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(att.attention(i, 0), 1.0);
    for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(att.guided(i, k), enc.words(0, k), 1e-15);
  }
}

TEST(Attention, ZeroOutputWeightIsUniform) {
  std::mt19937_64 rng(9);
  auto p = init_params(small_dims(), 10);
  for (double& v : p.weights.attn_w.data()) v = 0.0;
  auto enc = encode(p, random_tensor(3, 5, rng), random_tensor(4, 4, rng));
  auto att = attend(p, enc);
  for (double v : att.attention.data()) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(Attention, OutputBiasCancels) {
  std::mt19937_64 rng(11);
  auto p = init_params(small_dims(), 12);
  auto enc = encode(p, random_tensor(4, 5, rng), random_tensor(5, 4, rng));
  auto before = attend(p, enc);
  p.weights.attn_b2(0, 0) += 3.7;
  auto after = attend(p, enc);
  EXPECT_EQ(before.attention, after.attention);
}

TEST(Match, Examples) {
  ad::Tape tape;
  Tensor hp(4, 2, {1, 0, 1, 0, 1, 0, 1, 0});
  Tensor same = hp;
  Tensor neg(4, 2, {-1, 0, -2, 0, -1, 0, -3, 0});
  Tensor mixed(4, 2, {1, 0, 0, 1, -1, 0, 0, 2});
  EXPECT_NEAR(graph::match(tape.constant(hp), tape.constant(same)).score.item(), 1.0, 1e-15);
  EXPECT_NEAR(graph::match(tape.constant(hp), tape.constant(neg)).score.item(), -1.0, 1e-15);
  auto m = graph::match(tape.constant(hp), tape.constant(mixed));
  EXPECT_NEAR(m.score.item(), 0.0, 1e-15);
  EXPECT_NEAR(m.per_segment.value()[2], -1.0, 1e-15);
}

TEST(Match, ScoreIsBounded) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = init_params(small_dims(), trial);
    const double scale = trial % 2 ? 10.0 : 0.1;
    auto r = evaluate_pair(p, random_tensor(4, 5, rng, scale), random_tensor(3, 4, rng, scale));
    EXPECT_GE(r.score, -1.0);
    EXPECT_LE(r.score, 1.0);
    EXPECT_TRUE(std::isfinite(r.score));
  }
}

TEST(Match, DeterministicUnderReordering) {
  std::mt19937_64 rng(15);
  auto p = init_params(small_dims(), 1);
  Tensor seg = random_tensor(4, 5, rng), words = random_tensor(3, 4, rng);
  Tensor swapped = words;
  for (std::size_t k = 0; k < 4; ++k) std::swap(swapped(0, k), swapped(2, k));
  EXPECT_EQ(evaluate_pair(p, seg, words).score, evaluate_pair(p, seg, words).score);
  EXPECT_EQ(evaluate_pair(p, seg, swapped).score, evaluate_pair(p, seg, swapped).score);
}

TEST(Gradients, PairScoreAtDeskDims) {
  std::mt19937_64 rng(17);
  auto p = init_params(small_dims(6, 7, 8, 8), 3);
  const Tensor seg = random_tensor(4, 6, rng, 3.0), words = random_tensor(5, 7, rng, 3.0);
  ad::GraphBuilder f = [&](ad::Tape& tape, std::span<const ad::Var> v) {
    graph::BoundWeights w;
    std::size_t i = 0;
    w.visit([&](const char*, ad::Var& x) { x = v[i++]; });
    return graph::pair_score(w, graph::encode_visual(w, tape.constant(seg)),
                             graph::encode_sentence(w, tape.constant(words)));
  };
  auto res = ad::grad_check(f, p.flatten());
  EXPECT_LT(res.max_rel_error, 1e-4) << "param " << res.worst_param << " entry " << res.worst_index;
  EXPECT_GT(res.checked, 1000u);
}

TEST(Checkpoint, JsonRoundTripIsExact) {
  Checkpoint ck;
  ck.params = init_params(small_dims(), 21);
  ck.segments = 7;
  auto back = checkpoint_from_json(nlohmann::json::parse(checkpoint_to_json(ck).dump()));
  EXPECT_EQ(back.params, ck.params);
  EXPECT_EQ(back.segments, 7u);
}

TEST(Checkpoint, RejectsForeignFiles) {
  EXPECT_THROW(checkpoint_from_json(nlohmann::json{{"format", "other"}}), ParseError);
  auto j = checkpoint_to_json(Checkpoint{init_params(small_dims(), 0), 4});
  j["params"]["attention.w"]["shape"] = {2, 2};
  EXPECT_THROW(checkpoint_from_json(j), ParseError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ck.json"), LookupError);
}
