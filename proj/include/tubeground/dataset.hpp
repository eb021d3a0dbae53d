#pragma once

// JSON-lines video records and proposal files.
//
// Dataset line:
//   {"id": str,
//    "frames": [{"boxes": [{"x1","y1","x2","y2","conf","feat":[...]}]}],
//    "sentence": [tokens],
//    "gt_tube": optional [{"frame","x1","y1","x2","y2"}]}
//
// Proposal line (one tube):
//   {"video": str, "index": n, "energy": e,
//    "boxes": [{"frame","box","x1","y1","x2","y2","conf"}]}

#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tubeground/error.hpp"
#include "tubeground/features.hpp"
#include "tubeground/linker.hpp"

namespace tubeground {

// Annotated boxes keyed by frame index; may cover a subset of frames.
struct GroundTruthTube {
  std::map<std::size_t, Box2D> boxes;
};

struct VideoRecord {
  std::string id;
  std::vector<FrameBoxes> frames;
  FeatureStore features;
  std::vector<std::string> sentence;
  std::optional<GroundTruthTube> ground_truth;
};

namespace detail {

using nlohmann::json;

class RecordReader {
 public:
  RecordReader(std::size_t record, const json& root) : record_(record), root_(root) {}

  [[noreturn]] void fail(const std::string& path, const std::string& what) const {
    throw ParseError("record " + std::to_string(record_) + " field " + path + ": " + what);
  }

  const json& member(const json& obj, const std::string& key, const std::string& path) const {
    if (!obj.is_object()) fail(path, "expected object");
    auto it = obj.find(key);
    if (it == obj.end()) fail(path + "." + key, "missing");
    return *it;
  }

  double number(const json& obj, const std::string& key, const std::string& path) const {
    const json& v = member(obj, key, path);
    if (!v.is_number()) fail(path + "." + key, "expected number");
    return v.get<double>();
  }

  VideoRecord read() const {
    VideoRecord rec;
    const json& id = member(root_, "id", "$");
    if (!id.is_string()) fail("$.id", "expected string");
    rec.id = id.get<std::string>();

    const json& frames = member(root_, "frames", "$");
    if (!frames.is_array()) fail("$.frames", "expected array");
    rec.features.resize_frames(frames.size());
    for (std::size_t t = 0; t < frames.size(); ++t) {
      const std::string fpath = "$.frames[" + std::to_string(t) + "]";
      const json& boxes = member(frames[t], "boxes", fpath);
      if (!boxes.is_array()) fail(fpath + ".boxes", "expected array");
      FrameBoxes fb;
      fb.frame_index = t;
      for (std::size_t b = 0; b < boxes.size(); ++b) {
        const std::string bpath = fpath + ".boxes[" + std::to_string(b) + "]";
        const json& jb = boxes[b];
        Box2D box{number(jb, "x1", bpath), number(jb, "y1", bpath), number(jb, "x2", bpath),
                  number(jb, "y2", bpath), number(jb, "conf", bpath)};
        try {
          validate(box);
        } catch (const ValidationError& e) {
          throw ValidationError("record " + std::to_string(record_) + " field " + bpath + ": " + e.what());
        }
        const json& feat = member(jb, "feat", bpath);
        if (!feat.is_array() || feat.empty()) fail(bpath + ".feat", "expected non-empty array");
        std::vector<double> f;
        f.reserve(feat.size());
        for (std::size_t k = 0; k < feat.size(); ++k) {
          if (!feat[k].is_number()) fail(bpath + ".feat[" + std::to_string(k) + "]", "expected number");
          f.push_back(feat[k].get<double>());
        }
        try {
          rec.features.set(t, b, std::move(f));
        } catch (const ValidationError& e) {
          fail(bpath + ".feat", e.what());
        }
        fb.boxes.push_back(box);
      }
      rec.frames.push_back(std::move(fb));
    }

    const json& sentence = member(root_, "sentence", "$");
    if (!sentence.is_array()) fail("$.sentence", "expected array");
    for (std::size_t i = 0; i < sentence.size(); ++i) {
      if (!sentence[i].is_string()) fail("$.sentence[" + std::to_string(i) + "]", "expected string");
      rec.sentence.push_back(sentence[i].get<std::string>());
    }

    auto gt = root_.find("gt_tube");
    if (gt != root_.end() && !gt->is_null()) {
      if (!gt->is_array() || gt->empty()) fail("$.gt_tube", "expected non-empty array");
      GroundTruthTube tube;
      for (std::size_t i = 0; i < gt->size(); ++i) {
        const std::string gpath = "$.gt_tube[" + std::to_string(i) + "]";
        const json& g = (*gt)[i];
        const json& frame = member(g, "frame", gpath);
        if (!frame.is_number_integer() || frame.get<long long>() < 0) {
          fail(gpath + ".frame", "expected non-negative integer");
        }
        Box2D box{number(g, "x1", gpath), number(g, "y1", gpath), number(g, "x2", gpath),
                  number(g, "y2", gpath), 1.0};
        try {
          validate(box);
        } catch (const ValidationError& e) {
          throw ValidationError("record " + std::to_string(record_) + " field " + gpath + ": " + e.what());
        }
        tube.boxes[frame.get<std::size_t>()] = box;
      }
      rec.ground_truth = std::move(tube);
    }
    return rec;
  }

 private:
  std::size_t record_;
  const json& root_;
};

}  // namespace detail

inline VideoRecord parse_record(const std::string& line, std::size_t record_index = 0) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("record " + std::to_string(record_index) + ": invalid JSON: " + e.what());
  }
  return detail::RecordReader(record_index, j).read();
}

inline std::vector<VideoRecord> parse_dataset(std::istream& in) {
  std::vector<VideoRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_record(line, out.size()));
  }
  return out;
}

inline std::vector<VideoRecord> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open dataset file " + path);
  return parse_dataset(in);
}

inline nlohmann::json to_json(const VideoRecord& rec) {
  using nlohmann::json;
  json frames = json::array();
  for (std::size_t t = 0; t < rec.frames.size(); ++t) {
    json boxes = json::array();
    for (std::size_t b = 0; b < rec.frames[t].boxes.size(); ++b) {
      const Box2D& box = rec.frames[t].boxes[b];
      boxes.push_back({{"x1", box.x1},
                       {"y1", box.y1},
                       {"x2", box.x2},
                       {"y2", box.y2},
                       {"conf", box.confidence},
                       {"feat", rec.features.get(t, b)}});
    }
    frames.push_back({{"boxes", std::move(boxes)}});
  }
  json j = {{"id", rec.id}, {"frames", std::move(frames)}, {"sentence", rec.sentence}};
  if (rec.ground_truth) {
    json gt = json::array();
    for (const auto& [frame, box] : rec.ground_truth->boxes) {
      gt.push_back({{"frame", frame}, {"x1", box.x1}, {"y1", box.y1}, {"x2", box.x2}, {"y2", box.y2}});
    }
    j["gt_tube"] = std::move(gt);
  }
  return j;
}

inline void write_dataset(std::ostream& out, const std::vector<VideoRecord>& records) {
  for (const auto& rec : records) out << to_json(rec).dump() << '\n';
}

inline void save_dataset(const std::string& path, const std::vector<VideoRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LookupError("cannot write dataset file " + path);
  write_dataset(out, records);
}

// Proposals for every video, keyed by video id.
using ProposalMap = std::map<std::string, std::vector<Tube>>;

inline void write_proposals(std::ostream& out, const std::string& video_id, const std::vector<Tube>& tubes) {
  using nlohmann::json;
  for (std::size_t n = 0; n < tubes.size(); ++n) {
    json boxes = json::array();
    for (std::size_t t = 0; t < tubes[n].length(); ++t) {
      const Box2D& b = tubes[n].boxes[t];
      boxes.push_back({{"frame", t},
                       {"box", tubes[n].box_index[t]},
                       {"x1", b.x1},
                       {"y1", b.y1},
                       {"x2", b.x2},
                       {"y2", b.y2},
                       {"conf", b.confidence}});
    }
    json j = {{"video", video_id}, {"index", n}, {"energy", tubes[n].energy}, {"boxes", std::move(boxes)}};
    out << j.dump() << '\n';
  }
}

inline ProposalMap parse_proposals(std::istream& in) {
  using nlohmann::json;
  ProposalMap out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "proposals line " + std::to_string(lineno);
    try {
      json j = json::parse(line);
      Tube tube;
      tube.energy = j.at("energy").get<double>();
      const json& boxes = j.at("boxes");
      for (std::size_t t = 0; t < boxes.size(); ++t) {
        const json& b = boxes[t];
        if (b.at("frame").get<std::size_t>() != t) throw ParseError(where + ": frames must be consecutive from 0");
        tube.box_index.push_back(b.at("box").get<std::size_t>());
        tube.boxes.push_back(Box2D{b.at("x1").get<double>(), b.at("y1").get<double>(), b.at("x2").get<double>(),
                                   b.at("y2").get<double>(), b.at("conf").get<double>()});
        validate(tube.boxes.back());
      }
      auto& list = out[j.at("video").get<std::string>()];
      if (j.at("index").get<std::size_t>() != list.size()) throw ParseError(where + ": proposal index out of order");
      list.push_back(std::move(tube));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  return out;
}

inline ProposalMap load_proposals(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open proposals file " + path);
  return parse_proposals(in);
}

}  // namespace tubeground
