#pragma once

// Per-box visual features, segment pooling, and word embeddings.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tubeground/error.hpp"
#include "tubeground/linker.hpp"
#include "tubeground/tensor.hpp"

namespace tubeground {

// Visual feature vector for every (frame, box) of one video.
class FeatureStore {
 public:
  FeatureStore() = default;

  std::size_t dim() const { return dim_; }
  std::size_t frames() const { return features_.size(); }

  void resize_frames(std::size_t n) { features_.resize(n); }

  void set(std::size_t frame, std::size_t box, std::vector<double> feature) {
    if (feature.empty()) throw ValidationError("empty feature vector");
    if (dim_ == 0) dim_ = feature.size();
    if (feature.size() != dim_) {
      throw ValidationError("feature for frame " + std::to_string(frame) + " box " +
                            std::to_string(box) + " has dimension " + std::to_string(feature.size()) +
                            ", expected " + std::to_string(dim_));
    }
    if (frame >= features_.size()) features_.resize(frame + 1);
    auto& row = features_[frame];
    if (box >= row.size()) row.resize(box + 1);
    row[box] = std::move(feature);
  }

  bool contains(std::size_t frame, std::size_t box) const {
    return frame < features_.size() && box < features_[frame].size() && !features_[frame][box].empty();
  }

  const std::vector<double>& get(std::size_t frame, std::size_t box) const {
    if (!contains(frame, box)) {
      throw LookupError("no feature for frame " + std::to_string(frame) + " box " + std::to_string(box));
    }
    return features_[frame][box];
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::vector<std::vector<double>>> features_;
};

inline constexpr std::size_t kDefaultSegments = 20;

// Averages the tube's frame features into t_p evenly split segments.
// Segment s covers frames [floor(s*T/t_p), floor((s+1)*T/t_p)); when that
// range is empty (T < t_p) it takes frame min(floor(s*T/t_p), T-1).
inline Tensor pool_segments(const Tube& tube, const FeatureStore& store,
                            std::size_t segments = kDefaultSegments) {
  const std::size_t T = tube.length();
  if (segments == 0) throw ContractError("segment count must be positive");
  if (T == 0) throw ContractError("cannot pool an empty tube");
  if (tube.box_index.size() != T) throw ContractError("tube box_index length differs from its boxes");
  const std::size_t d = store.dim();
  Tensor out(segments, d);
  for (std::size_t s = 0; s < segments; ++s) {
    const std::size_t lo = s * T / segments;
    const std::size_t hi = (s + 1) * T / segments;
    auto row = out.row_span(s);
    if (lo >= hi) {
      const std::size_t f = std::min(lo, T - 1);
      const auto& v = store.get(f, tube.box_index[f]);
      std::copy(v.begin(), v.end(), row.begin());
      continue;
    }
    for (std::size_t f = lo; f < hi; ++f) {
      const auto& v = store.get(f, tube.box_index[f]);
      for (std::size_t k = 0; k < d; ++k) row[k] += v[k];
    }
    const double n = static_cast<double>(hi - lo);
    for (double& v : row) v /= n;
  }
  return out;
}

inline std::string fold_case(std::string_view token) {
  std::string out(token);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// Shortest text form that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

class EmbeddingTable {
 public:
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  void add(std::string_view token, std::vector<double> vec) {
    if (vec.empty()) throw ParseError("embedding for '" + std::string(token) + "' is empty");
    if (dim_ == 0) dim_ = vec.size();
    if (vec.size() != dim_) {
      throw ParseError("embedding for '" + std::string(token) + "' has dimension " +
                       std::to_string(vec.size()) + ", expected " + std::to_string(dim_));
    }
    std::string key = fold_case(token);
    if (index_.count(key)) throw ParseError("duplicate token '" + key + "'");
    index_.emplace(key, tokens_.size());
    tokens_.push_back(std::move(key));
    vectors_.push_back(std::move(vec));
  }

  const std::vector<double>* find(std::string_view token) const {
    auto it = index_.find(fold_case(token));
    return it == index_.end() ? nullptr : &vectors_[it->second];
  }

  const std::vector<double>& vector_at(std::size_t i) const { return vectors_[i]; }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> tokens_;
  std::vector<std::vector<double>> vectors_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct SentenceMatrix {
  Tensor features;  // t_q x d_q
  std::vector<std::string> tokens;
};

// Looks up every token, dropping out-of-vocabulary words and keeping order.
inline SentenceMatrix embed_sentence(const std::vector<std::string>& tokens, const EmbeddingTable& table) {
  if (tokens.empty()) throw ContractError("empty sentence");
  SentenceMatrix out;
  std::vector<double> data;
  for (const auto& tok : tokens) {
    const auto* v = table.find(tok);
    if (!v) continue;
    data.insert(data.end(), v->begin(), v->end());
    out.tokens.push_back(tok);
  }
  if (out.tokens.empty()) throw ValidationError("empty sentence: every token is out of vocabulary");
  out.features = Tensor(out.tokens.size(), table.dim(), std::move(data));
  return out;
}

// Parses `token v1 ... vd` lines. A leading word2vec "count dim" header is skipped.
inline EmbeddingTable parse_embeddings(std::istream& in) {
  EmbeddingTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string token;
    if (!(ss >> token)) continue;
    std::vector<double> vec;
    std::string field;
    while (ss >> field) {
      double v = 0.0;
      auto res = std::from_chars(field.data(), field.data() + field.size(), v);
      if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
        throw ParseError("embeddings line " + std::to_string(lineno) + ": bad number '" + field + "'");
      }
      vec.push_back(v);
    }
    if (lineno == 1 && vec.size() == 1 && table.size() == 0 &&
        token.find_first_not_of("0123456789") == std::string::npos) {
      continue;
    }
    try {
      table.add(token, std::move(vec));
    } catch (const ParseError& e) {
      throw ParseError("embeddings line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (table.size() == 0) throw ParseError("no embeddings");
  return table;
}

inline EmbeddingTable load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open embeddings file " + path);
  return parse_embeddings(in);
}

inline void write_embeddings(std::ostream& out, const EmbeddingTable& table) {
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << table.tokens()[i];
    for (double v : table.vector_at(i)) out << ' ' << format_double(v);
    out << '\n';
  }
}

inline void save_embeddings(const std::string& path, const EmbeddingTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LookupError("cannot write embeddings file " + path);
  write_embeddings(out, table);
}

}  // namespace tubeground
