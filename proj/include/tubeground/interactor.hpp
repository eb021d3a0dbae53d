#pragma once

// Attentive interactor: LSTM encoders for a tube's segment features and a
// sentence's word embeddings, additive attention that summarizes the
// sentence once per visual segment, and cosine matching between each
// segment state and its visually guided sentence feature.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "tubeground/autodiff.hpp"
#include "tubeground/error.hpp"
#include "tubeground/tensor.hpp"

namespace tubeground {

struct InteractorDims {
  std::size_t visual_dim = 0;     // d_p, per-segment visual feature size
  std::size_t word_dim = 0;       // d_q, word embedding size
  std::size_t visual_hidden = 16; // D_p
  std::size_t word_hidden = 16;   // D_q
  std::size_t attention = 0;      // K; 0 means "same as hidden"

  std::size_t hidden() const { return visual_hidden; }
  std::size_t attention_dim() const { return attention == 0 ? visual_hidden : attention; }

  void validate() const {
    if (visual_dim == 0 || word_dim == 0 || visual_hidden == 0 || word_hidden == 0) {
      throw ContractError("interactor dimensions must be positive");
    }
    // The matching cosine compares visual states with guided sentence
    // features, which live in the word-hidden space.
    if (visual_hidden != word_hidden) {
      throw ConfigError("visual hidden size " + std::to_string(visual_hidden) +
                        " differs from word hidden size " + std::to_string(word_hidden));
    }
  }

  friend bool operator==(const InteractorDims&, const InteractorDims&) = default;
};

// Every learnable array of the interactor. T is Tensor for stored
// parameters and ad::Var once they are bound to a tape.
template <class T>
struct InteractorWeights {
  T visual_proj_w;   // d_p x D
  T visual_proj_b;   // 1 x D
  T word_proj_w;     // d_q x D
  T word_proj_b;     // 1 x D
  T visual_lstm_wx;  // D x 4D, gate blocks i | f | g | o
  T visual_lstm_wh;  // D x 4D
  T visual_lstm_b;   // 1 x 4D
  T word_lstm_wx;
  T word_lstm_wh;
  T word_lstm_b;
  T attn_wq;  // K x D
  T attn_wp;  // K x D
  T attn_b1;  // 1 x K
  T attn_w;   // K x 1
  T attn_b2;  // 1 x 1

  template <class F>
  void visit(F&& f) {
    f("visual_proj.w", visual_proj_w);
    f("visual_proj.b", visual_proj_b);
    f("word_proj.w", word_proj_w);
    f("word_proj.b", word_proj_b);
    f("visual_lstm.wx", visual_lstm_wx);
    f("visual_lstm.wh", visual_lstm_wh);
    f("visual_lstm.b", visual_lstm_b);
    f("word_lstm.wx", word_lstm_wx);
    f("word_lstm.wh", word_lstm_wh);
    f("word_lstm.b", word_lstm_b);
    f("attention.wq", attn_wq);
    f("attention.wp", attn_wp);
    f("attention.b1", attn_b1);
    f("attention.w", attn_w);
    f("attention.b2", attn_b2);
  }

  template <class F>
  void visit(F&& f) const {
    const_cast<InteractorWeights*>(this)->visit([&](const char* name, const T& v) { f(name, v); });
  }
};

struct InteractorParams {
  InteractorDims dims;
  InteractorWeights<Tensor> weights;

  std::vector<Tensor> flatten() const {
    std::vector<Tensor> out;
    weights.visit([&](const char*, const Tensor& t) { out.push_back(t); });
    return out;
  }

  void unflatten(const std::vector<Tensor>& in) {
    std::size_t i = 0;
    weights.visit([&](const char* name, Tensor& t) {
      if (i >= in.size() || !in[i].same_shape(t)) {
        throw DimensionError(std::string("unflatten: bad tensor for ") + name);
      }
      t = in[i++];
    });
  }

  friend bool operator==(const InteractorParams& a, const InteractorParams& b) {
    return a.dims == b.dims && a.flatten() == b.flatten();
  }
};

namespace detail {

struct ShapeInfo {
  std::size_t rows, cols, fan_in;
};

template <class F>
void for_each_shape(const InteractorDims& d, F&& f) {
  const std::size_t D = d.hidden(), K = d.attention_dim();
  f("visual_proj.w", ShapeInfo{d.visual_dim, D, d.visual_dim});
  f("visual_proj.b", ShapeInfo{1, D, d.visual_dim});
  f("word_proj.w", ShapeInfo{d.word_dim, D, d.word_dim});
  f("word_proj.b", ShapeInfo{1, D, d.word_dim});
  f("visual_lstm.wx", ShapeInfo{D, 4 * D, D});
  f("visual_lstm.wh", ShapeInfo{D, 4 * D, D});
  f("visual_lstm.b", ShapeInfo{1, 4 * D, D});
  f("word_lstm.wx", ShapeInfo{D, 4 * D, D});
  f("word_lstm.wh", ShapeInfo{D, 4 * D, D});
  f("word_lstm.b", ShapeInfo{1, 4 * D, D});
  f("attention.wq", ShapeInfo{K, D, D});
  f("attention.wp", ShapeInfo{K, D, D});
  f("attention.b1", ShapeInfo{1, K, D});
  f("attention.w", ShapeInfo{K, 1, K});
  f("attention.b2", ShapeInfo{1, 1, K});
}

}  // namespace detail

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; LSTM forget-gate
// biases start at 1. Deterministic in the seed.
inline InteractorParams init_params(const InteractorDims& dims, std::uint64_t seed) {
  dims.validate();
  InteractorParams p;
  p.dims = dims;
  std::mt19937_64 rng(seed);
  std::vector<Tensor> tensors;
  detail::for_each_shape(dims, [&](const char*, detail::ShapeInfo s) {
    Tensor t(s.rows, s.cols);
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.data()) v = dist(rng);
    tensors.push_back(std::move(t));
  });
  std::size_t i = 0;
  p.weights.visit([&](const char*, Tensor& t) { t = std::move(tensors[i++]); });
  const std::size_t D = dims.hidden();
  for (Tensor* b : {&p.weights.visual_lstm_b, &p.weights.word_lstm_b}) {
    for (std::size_t k = D; k < 2 * D; ++k) (*b)[k] = 1.0;
  }
  return p;
}

// Same shapes as init_params, every entry zero.
inline InteractorParams zero_params(const InteractorDims& dims) {
  dims.validate();
  InteractorParams p;
  p.dims = dims;
  std::vector<Tensor> tensors;
  detail::for_each_shape(dims, [&](const char*, detail::ShapeInfo s) { tensors.emplace_back(s.rows, s.cols); });
  std::size_t i = 0;
  p.weights.visit([&](const char*, Tensor& t) { t = std::move(tensors[i++]); });
  return p;
}

namespace graph {

using ad::Tape;
using ad::Var;

using BoundWeights = InteractorWeights<Var>;

// Places every parameter on the tape; trainable selects param vs constant.
inline BoundWeights bind(Tape& tape, const InteractorParams& p, bool trainable = true) {
  BoundWeights out;
  std::vector<Var> vars;
  p.weights.visit([&](const char*, const Tensor& t) {
    vars.push_back(trainable ? tape.param(t) : tape.constant(t));
  });
  std::size_t i = 0;
  out.visit([&](const char*, Var& v) { v = vars[i++]; });
  return out;
}

// Unidirectional LSTM from a zero state over the rows of x (t x D).
// Returns the t x D sequence of hidden states.
inline Var lstm(Var x, Var wx, Var wh, Var b) {
  const std::size_t steps = x.rows();
  const std::size_t D = wh.rows();
  if (steps == 0) throw DimensionError("lstm: empty input sequence");
  Var pre = ad::add(ad::matmul(x, wx), b);  // t x 4D input contributions
  std::vector<Var> hs;
  hs.reserve(steps);
  Var h, c;
  for (std::size_t t = 0; t < steps; ++t) {
    Var z = ad::slice_rows(pre, t, 1);
    if (t > 0) z = ad::add(z, ad::matmul(h, wh));
    Var i = ad::sigmoid(ad::slice_cols(z, 0, D));
    Var f = ad::sigmoid(ad::slice_cols(z, D, D));
    Var g = ad::tanh(ad::slice_cols(z, 2 * D, D));
    Var o = ad::sigmoid(ad::slice_cols(z, 3 * D, D));
    c = t == 0 ? ad::mul(i, g) : ad::add(ad::mul(f, c), ad::mul(i, g));
    h = ad::mul(o, ad::tanh(c));
    hs.push_back(h);
  }
  return ad::concat_rows(hs);
}

inline void check_input(Var features, std::size_t expected, const char* what) {
  if (features.cols() != expected) {
    throw ContractError(std::string(what) + " features have dimension " + std::to_string(features.cols()) +
                        ", interactor expects " + std::to_string(expected));
  }
  if (features.rows() == 0) throw ContractError(std::string(what) + " sequence is empty");
}

// H_p: t_p x D hidden states for a segment feature matrix.
inline Var encode_visual(const BoundWeights& w, Var segments) {
  check_input(segments, w.visual_proj_w.rows(), "visual");
  Var x = ad::add(ad::matmul(segments, w.visual_proj_w), w.visual_proj_b);
  return lstm(x, w.visual_lstm_wx, w.visual_lstm_wh, w.visual_lstm_b);
}

// H_q: t_q x D hidden states for a sentence matrix.
inline Var encode_sentence(const BoundWeights& w, Var words) {
  check_input(words, w.word_proj_w.rows(), "word");
  Var x = ad::add(ad::matmul(words, w.word_proj_w), w.word_proj_b);
  return lstm(x, w.word_lstm_wx, w.word_lstm_wh, w.word_lstm_b);
}

struct AttentionVars {
  Var logits;     // t_p x t_q, e_ij
  Var attention;  // t_p x t_q, row-softmax of logits
  Var guided;     // t_p x D, attention-weighted sentence states
};

// e_ij = w^T tanh(Wq h_j^q + Wp h_i^p + b1) + b2, normalized over j.
inline AttentionVars attend(const BoundWeights& w, Var visual_states, Var word_states) {
  const std::size_t tp = visual_states.rows();
  const std::size_t tq = word_states.rows();
  if (visual_states.cols() != w.attn_wp.cols() || word_states.cols() != w.attn_wq.cols()) {
    throw DimensionError("attend: hidden states do not match attention weights");
  }
  Var word_keys = ad::matmul(word_states, ad::transpose(w.attn_wq));                      // t_q x K
  Var visual_keys = ad::add(ad::matmul(visual_states, ad::transpose(w.attn_wp)), w.attn_b1);  // t_p x K
  std::vector<std::size_t> vi(tp * tq), wj(tp * tq);
  for (std::size_t i = 0; i < tp; ++i) {
    for (std::size_t j = 0; j < tq; ++j) {
      vi[i * tq + j] = i;
      wj[i * tq + j] = j;
    }
  }
  Var joint = ad::tanh(ad::add(ad::gather_rows(visual_keys, std::move(vi)),
                               ad::gather_rows(word_keys, std::move(wj))));  // (t_p t_q) x K
  Var core = ad::matmul(joint, w.attn_w);  // (t_p t_q) x 1
  AttentionVars out;
  out.logits = ad::reshape(ad::add(core, w.attn_b2), tp, tq);
  // b2 shifts a whole row, so the softmax over the b2-free part is the same
  // function and stays bit-identical when b2 changes.
  out.attention = ad::softmax_rows(ad::reshape(core, tp, tq));
  out.guided = ad::matmul(out.attention, word_states);
  return out;
}

// Matching function between a segment state and its guided sentence
// feature, row by row. Cosine is the only instantiation.
struct CosineMatch {
  Var operator()(Var visual_states, Var guided) const { return ad::cosine_rows(visual_states, guided); }
};

struct MatchVars {
  Var per_segment;  // t_p x 1
  Var score;        // 1 x 1, mean of per_segment
};

template <class Similarity = CosineMatch>
MatchVars match(Var visual_states, Var guided, Similarity sim = {}) {
  MatchVars out;
  out.per_segment = sim(visual_states, guided);
  out.score = ad::mean(out.per_segment);
  return out;
}

// s(q, p) for one proposal and one sentence, both already encoded.
inline Var pair_score(const BoundWeights& w, Var visual_states, Var word_states) {
  AttentionVars att = attend(w, visual_states, word_states);
  return match(visual_states, att.guided).score;
}

}  // namespace graph

struct EncodedPair {
  Tensor visual;  // H_p
  Tensor words;   // H_q
};

struct AttentionOutput {
  Tensor attention;  // t_p x t_q
  Tensor guided;     // t_p x D
};

struct MatchResult {
  Tensor attention;
  Tensor guided;
  std::vector<double> per_segment;
  double score = 0.0;
};

inline EncodedPair encode(const InteractorParams& params, const Tensor& segments, const Tensor& words) {
  ad::Tape tape;
  auto w = graph::bind(tape, params, false);
  return {graph::encode_visual(w, tape.constant(segments)).value(),
          graph::encode_sentence(w, tape.constant(words)).value()};
}

inline AttentionOutput attend(const InteractorParams& params, const EncodedPair& pair) {
  ad::Tape tape;
  auto w = graph::bind(tape, params, false);
  auto att = graph::attend(w, tape.constant(pair.visual), tape.constant(pair.words));
  return {att.attention.value(), att.guided.value()};
}

inline MatchResult match(const EncodedPair& pair, const AttentionOutput& att) {
  if (pair.visual.cols() != att.guided.cols()) {
    throw ConfigError("matching requires equal visual and word hidden sizes");
  }
  ad::Tape tape;
  auto m = graph::match(tape.constant(pair.visual), tape.constant(att.guided));
  MatchResult out;
  out.attention = att.attention;
  out.guided = att.guided;
  out.per_segment = m.per_segment.value().values();
  out.score = m.score.item();
  return out;
}

// Full forward pass for one (proposal, sentence) pair.
inline MatchResult evaluate_pair(const InteractorParams& params, const Tensor& segments, const Tensor& words) {
  ad::Tape tape;
  auto w = graph::bind(tape, params, false);
  ad::Var hp = graph::encode_visual(w, tape.constant(segments));
  ad::Var hq = graph::encode_sentence(w, tape.constant(words));
  auto att = graph::attend(w, hp, hq);
  auto m = graph::match(hp, att.guided);
  MatchResult out;
  out.attention = att.attention.value();
  out.guided = att.guided.value();
  out.per_segment = m.per_segment.value().values();
  out.score = m.score.item();
  return out;
}

// ---- checkpoints ---------------------------------------------------------

inline constexpr const char* kCheckpointFormat = "tubeground-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  InteractorParams params;
  std::size_t segments = 20;  // t_p used to pool proposals for this model
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& ck) {
  using nlohmann::json;
  const InteractorDims& d = ck.params.dims;
  json params = json::object();
  ck.params.weights.visit([&](const char* name, const Tensor& t) {
    params[name] = {{"shape", {t.rows(), t.cols()}}, {"values", t.values()}};
  });
  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"dims",
           {{"visual_dim", d.visual_dim},
            {"word_dim", d.word_dim},
            {"visual_hidden", d.visual_hidden},
            {"word_hidden", d.word_hidden},
            {"attention", d.attention_dim()}}},
          {"segments", ck.segments},
          {"params", std::move(params)}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) throw ParseError("not a checkpoint file");
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw ParseError("unsupported checkpoint version " + j.at("version").dump());
    }
    InteractorDims d;
    const auto& jd = j.at("dims");
    d.visual_dim = jd.at("visual_dim").get<std::size_t>();
    d.word_dim = jd.at("word_dim").get<std::size_t>();
    d.visual_hidden = jd.at("visual_hidden").get<std::size_t>();
    d.word_hidden = jd.at("word_hidden").get<std::size_t>();
    d.attention = jd.at("attention").get<std::size_t>();
    Checkpoint ck;
    ck.params = zero_params(d);
    ck.segments = j.at("segments").get<std::size_t>();
    const auto& jp = j.at("params");
    ck.params.weights.visit([&](const char* name, Tensor& t) {
      const auto& entry = jp.at(name);
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2 || shape[0] != t.rows() || shape[1] != t.cols()) {
        throw ParseError(std::string("checkpoint tensor ") + name + " has unexpected shape");
      }
      t = Tensor(t.rows(), t.cols(), entry.at("values").get<std::vector<double>>());
    });
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LookupError("cannot write checkpoint " + path);
  out << checkpoint_to_json(ck).dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint " + path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace tubeground
