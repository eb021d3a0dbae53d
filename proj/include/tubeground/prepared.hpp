#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "tubeground/dataset.hpp"
#include "tubeground/error.hpp"
#include "tubeground/features.hpp"
#include "tubeground/linker.hpp"

namespace tubeground {

// A video reduced to what the interactor consumes: pooled proposal
// features, the embedded sentence, and the proposal tubes themselves for
// overlap scoring.
struct PreparedVideo {
  std::string id;
  std::vector<Tube> tubes;
  std::vector<Tensor> proposals;  // t_p x d_p each, parallel to tubes
  Tensor sentence;                // t_q x d_q
  std::vector<std::string> tokens;
  std::optional<GroundTruthTube> ground_truth;
};

inline PreparedVideo prepare_video(const VideoRecord& rec, const std::vector<Tube>& tubes,
                                   const EmbeddingTable& table, std::size_t segments,
                                   std::size_t max_proposals = static_cast<std::size_t>(-1)) {
  if (tubes.empty()) throw ContractError("video " + rec.id + " has no proposals");
  PreparedVideo out;
  out.id = rec.id;
  for (std::size_t n = 0; n < tubes.size() && n < max_proposals; ++n) {
    if (tubes[n].length() != rec.frames.size()) {
      throw ContractError("video " + rec.id + ": proposal " + std::to_string(n) + " spans " +
                          std::to_string(tubes[n].length()) + " frames, video has " +
                          std::to_string(rec.frames.size()));
    }
    try {
      out.proposals.push_back(pool_segments(tubes[n], rec.features, segments));
    } catch (const LookupError& e) {
      throw LookupError("video " + rec.id + ": " + e.what());
    }
    out.tubes.push_back(tubes[n]);
  }
  try {
    SentenceMatrix s = embed_sentence(rec.sentence, table);
    out.sentence = std::move(s.features);
    out.tokens = std::move(s.tokens);
  } catch (const Error& e) {
    throw ValidationError("video " + rec.id + ": " + e.what());
  }
  out.ground_truth = rec.ground_truth;
  return out;
}

inline std::vector<PreparedVideo> prepare_dataset(const std::vector<VideoRecord>& records,
                                                  const ProposalMap& proposals, const EmbeddingTable& table,
                                                  std::size_t segments,
                                                  std::size_t max_proposals = static_cast<std::size_t>(-1)) {
  std::vector<PreparedVideo> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    auto it = proposals.find(rec.id);
    if (it == proposals.end()) throw LookupError("no proposals for video " + rec.id);
    out.push_back(prepare_video(rec, it->second, table, segments, max_proposals));
  }
  return out;
}

// Links proposals for every record (the materialized-file path does the
// same through write_proposals / load_proposals).
inline ProposalMap link_dataset(const std::vector<VideoRecord>& records, const LinkConfig& cfg = {}) {
  ProposalMap out;
  for (const auto& rec : records) out[rec.id] = extract_proposals(rec.frames, cfg);
  return out;
}

}  // namespace tubeground
