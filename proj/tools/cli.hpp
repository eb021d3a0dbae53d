#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "tubeground/tubeground.hpp"

namespace tubeground::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

namespace detail {

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LookupError("cannot write " + path);
  return out;
}

inline void write_file(const std::string& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
}

inline void make_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw LookupError("cannot create directory " + dir + ": " + ec.message());
}

inline std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

inline std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

// Inputs shared by the commands that run a trained model.
struct ModelInputs {
  std::string data, proposals, embeddings, checkpoint;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--data", data, "dataset JSON-lines file")->required();
    cmd.add_option("--proposals", proposals, "proposals JSON-lines file from `link`")->required();
    cmd.add_option("--embeddings", embeddings, "word embedding table")->required();
    cmd.add_option("--checkpoint", checkpoint, "checkpoint written by `train`")->required();
  }
};

struct Loaded {
  Checkpoint ck;
  std::vector<PreparedVideo> videos;
};

inline Loaded load_model_inputs(const ModelInputs& in) {
  Loaded l;
  l.ck = load_checkpoint(in.checkpoint);
  const auto records = load_dataset(in.data);
  l.videos = prepare_dataset(records, load_proposals(in.proposals), load_embeddings(in.embeddings), l.ck.segments);
  return l;
}

inline const PreparedVideo& find_video(const std::vector<PreparedVideo>& videos, const std::string& id) {
  for (const auto& v : videos) {
    if (v.id == id) return v;
  }
  throw LookupError("no video with id " + id);
}

inline nlohmann::json tube_json(const Tube& tube) {
  nlohmann::json boxes = nlohmann::json::array();
  for (std::size_t t = 0; t < tube.length(); ++t) {
    const Box2D& b = tube.boxes[t];
    boxes.push_back({{"frame", t}, {"box", tube.box_index[t]}, {"x1", b.x1}, {"y1", b.y1}, {"x2", b.x2}, {"y2", b.y2}});
  }
  return {{"energy", tube.energy}, {"boxes", std::move(boxes)}};
}

}  // namespace detail

// Parses argv, runs one subcommand, and maps failures to exit codes:
// 0 success, 1 usage error, 2 data or contract error.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  using namespace detail;
  ScopedWarningSink sink([&err](const std::string& msg) { err << "warning: " << msg << '\n'; });

  CLI::App app{"Weakly supervised spatio-temporal grounding of sentences in video tubes", "tubeground"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  // gen-synth
  SynthConfig synth;
  std::string synth_out;
  std::size_t synth_test = 0;
  auto* gen = app.add_subcommand("gen-synth", "write a seeded synthetic scenario");
  gen->add_option("--out", synth_out, "output directory")->required();
  gen->add_option("--seed", synth.seed, "generator seed")->capture_default_str();
  gen->add_option("--videos", synth.videos, "number of videos")->capture_default_str();
  gen->add_option("--test", synth_test, "hold out the last N videos as test.jsonl (rest in train.jsonl)")
      ->capture_default_str();
  gen->add_option("--frames", synth.frames, "frames per video")->capture_default_str();
  gen->add_option("--boxes", synth.boxes, "boxes per frame")->capture_default_str();
  gen->add_option("--concepts", synth.concepts, "number of concepts")->capture_default_str();
  gen->add_option("--feature-dim", synth.feature_dim, "box feature size")->capture_default_str();
  gen->add_option("--vocab", synth.vocab, "vocabulary size")->capture_default_str();
  gen->add_option("--tokens", synth.tokens, "tokens per sentence")->capture_default_str();
  gen->add_option("--embed-dim", synth.embed_dim, "word embedding size")->capture_default_str();
  gen->add_option("--noise", synth.noise, "feature noise sigma")->capture_default_str();
  gen->add_option("--confuser-rate", synth.confuser_rate, "chance a video shows a second concept")
      ->capture_default_str();
  gen->add_option("--backgrounds", synth.backgrounds, "background directions shared by all videos, 0 = boxes - 1")
      ->capture_default_str();

  // link
  std::string link_data, link_out;
  LinkConfig link_cfg;
  std::size_t link_max = *link_cfg.max_proposals;
  auto* link = app.add_subcommand("link", "link per-frame boxes into proposal tubes");
  link->add_option("--data", link_data, "dataset JSON-lines file")->required();
  link->add_option("--out", link_out, "proposals file to write")->required();
  link->add_option("--lambda", link_cfg.lambda, "IoU weight in the link score")->capture_default_str();
  link->add_option("--max-proposals", link_max, "proposals per video, 0 = until a frame runs dry")
      ->capture_default_str();

  // train
  std::string tr_data, tr_props, tr_emb, tr_config, tr_out, tr_val;
  std::optional<std::uint64_t> tr_seed;
  std::optional<std::size_t> tr_epochs, tr_steps, tr_hidden, tr_segments, tr_batch;
  std::optional<double> tr_lr, tr_beta;
  std::size_t tr_every = 1;
  auto* trn = app.add_subcommand("train", "train the interactor on weakly labeled pairs");
  trn->add_option("--data", tr_data, "training dataset")->required();
  trn->add_option("--proposals", tr_props, "proposals file covering training (and validation) videos")->required();
  trn->add_option("--embeddings", tr_emb, "word embedding table")->required();
  trn->add_option("--out", tr_out, "output directory")->required();
  trn->add_option("--config", tr_config, "JSON train config; flags below override it");
  trn->add_option("--validation", tr_val, "dataset with ground truth for checkpoint selection");
  trn->add_option("--seed", tr_seed, "init and shuffle seed");
  trn->add_option("--epochs", tr_epochs, "epochs");
  trn->add_option("--max-steps", tr_steps, "stop after this many updates, 0 = no cap");
  trn->add_option("--hidden", tr_hidden, "LSTM and attention size D");
  trn->add_option("--segments", tr_segments, "pooled segments per proposal t_p");
  trn->add_option("--batch-size", tr_batch, "videos per batch");
  trn->add_option("--learning-rate", tr_lr, "SGD learning rate");
  trn->add_option("--beta", tr_beta, "diversity loss weight");
  trn->add_option("--save-every", tr_every, "also write checkpoint-epochNNNN.json every N epochs, 0 = never")
      ->capture_default_str();

  // eval
  ModelInputs ev_in;
  std::string ev_out, ev_csv;
  EvalOptions ev_opts;
  auto* evl = app.add_subcommand("eval", "score grounding accuracy against ground-truth tubes");
  ev_in.add_to(*evl);
  evl->add_option("--out", ev_out, "report JSON to write")->required();
  evl->add_option("--csv", ev_csv, "also write the accuracy table as CSV");
  evl->add_option("--eta", ev_opts.etas, "overlap thresholds")->delimiter(',')->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  evl->add_option("--threads", ev_opts.threads, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  evl->add_option("--seed", ev_opts.seed, "seed of the Monte Carlo random baseline")->capture_default_str();
  evl->add_option("--trials", ev_opts.random_trials, "Monte Carlo trials")->capture_default_str();

  // ground
  ModelInputs gr_in;
  std::string gr_video, gr_sentence, gr_out;
  auto* grd = app.add_subcommand("ground", "print the chosen tube for one video and sentence");
  gr_in.add_to(*grd);
  grd->add_option("--video", gr_video, "video id")->required();
  grd->add_option("--sentence", gr_sentence, "whitespace-separated sentence (default: the video's own)");
  grd->add_option("--out", gr_out, "also write the result JSON here");

  // inspect-attention
  ModelInputs at_in;
  std::string at_video, at_out;
  auto* att = app.add_subcommand("inspect-attention", "dump per-segment attention over words of grounded pairs");
  at_in.add_to(*att);
  att->add_option("--out", at_out, "JSON file to write")->required();
  att->add_option("--video", at_video, "only this video (default: all)");

  // gradcheck
  std::string gc_dims = "small";
  std::uint64_t gc_seed = 0;
  auto* gck = app.add_subcommand("gradcheck", "finite-difference check of the interactor and loss");
  gck->add_option("--dims", gc_dims, "fixture size")->check(CLI::IsMember({"small", "tiny"}))->capture_default_str();
  gck->add_option("--seed", gc_seed, "fixture seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) {
      auto sc = generate(synth);
      if (synth_test >= synth.videos) throw ContractError("--test must leave at least one training video");
      make_dir(synth_out);
      save_dataset(join(synth_out, "dataset.jsonl"), sc.videos);
      save_embeddings(join(synth_out, "embeddings.txt"), sc.embeddings);
      if (synth_test > 0) {
        const auto cut = sc.videos.begin() + static_cast<std::ptrdiff_t>(synth.videos - synth_test);
        save_dataset(join(synth_out, "train.jsonl"), {sc.videos.begin(), cut});
        save_dataset(join(synth_out, "test.jsonl"), {cut, sc.videos.end()});
      }
      nlohmann::json meta = {{"seed", synth.seed},
                             {"videos", synth.videos},
                             {"test", synth_test},
                             {"frames", synth.frames},
                             {"boxes", synth.boxes},
                             {"concepts", synth.concepts},
                             {"feature_dim", synth.feature_dim},
                             {"vocab", synth.vocab},
                             {"tokens", synth.tokens},
                             {"embed_dim", synth.embed_dim},
                             {"noise", synth.noise},
                             {"confuser_rate", synth.confuser_rate},
                             {"backgrounds", synth.backgrounds},
                             {"target_concept", sc.target_concept}};
      write_file(join(synth_out, "scenario.json"), meta.dump(2) + "\n");
      out << "wrote " << sc.videos.size() << " videos to " << synth_out << '\n';
    } else if (*link) {
      if (link_max == 0) link_cfg.max_proposals.reset();
      else link_cfg.max_proposals = link_max;
      const auto records = load_dataset(link_data);
      auto f = open_out(link_out);
      std::size_t total = 0;
      for (const auto& rec : records) {
        const auto tubes = extract_proposals(rec.frames, link_cfg);
        write_proposals(f, rec.id, tubes);
        total += tubes.size();
      }
      out << "wrote " << total << " proposals for " << records.size() << " videos to " << link_out << '\n';
    } else if (*trn) {
      TrainConfig cfg;
      if (!tr_config.empty()) {
        std::ifstream cf(tr_config);
        if (!cf) throw LookupError("cannot open config file " + tr_config);
        nlohmann::json j;
        try {
          cf >> j;
        } catch (const nlohmann::json::exception& e) {
          throw ConfigError(tr_config + ": " + e.what());
        }
        apply_json(cfg, j);
      }
      if (tr_seed) cfg.seed = *tr_seed;
      if (tr_epochs) cfg.epochs = *tr_epochs;
      if (tr_steps) cfg.max_steps = *tr_steps;
      if (tr_hidden) cfg.hidden = *tr_hidden;
      if (tr_segments) cfg.segments = *tr_segments;
      if (tr_batch) cfg.batch_size = *tr_batch;
      if (tr_lr) cfg.learning_rate = *tr_lr;
      if (tr_beta) cfg.beta = *tr_beta;
      cfg.validate();

      const auto props = load_proposals(tr_props);
      const auto table = load_embeddings(tr_emb);
      const auto data = prepare_dataset(load_dataset(tr_data), props, table, cfg.segments, cfg.proposals_per_video);
      std::vector<PreparedVideo> val;
      if (!tr_val.empty()) val = prepare_dataset(load_dataset(tr_val), props, table, cfg.segments);
      make_dir(tr_out);
      EpochCallback on_epoch;
      if (tr_every > 0) {
        on_epoch = [&](std::size_t epoch, const InteractorParams& p) {
          if (epoch % tr_every != 0) return;
          std::ostringstream name;
          name << "checkpoint-epoch" << std::setw(4) << std::setfill('0') << epoch << ".json";
          save_checkpoint(join(tr_out, name.str()), Checkpoint{p, cfg.segments});
        };
      }
      auto res = train(data, cfg, tr_val.empty() ? nullptr : &val, on_epoch);
      save_checkpoint(join(tr_out, "checkpoint.json"), Checkpoint{res.params, cfg.segments});
      write_file(join(tr_out, "loss.csv"), loss_csv(res.log));
      write_file(join(tr_out, "config.json"), to_json(cfg).dump(2) + "\n");
      out << "trained " << res.steps << " steps over " << res.log.size() << " epochs";
      if (res.selected_validation_accuracy) {
        out << "; selected epoch " << res.selected_epoch << " (validation accuracy "
            << format_double(*res.selected_validation_accuracy) << ")";
      }
      if (!res.log.empty()) out << "; final mean loss " << format_double(res.log.back().mean_total);
      out << '\n';
    } else if (*evl) {
      auto l = load_model_inputs(ev_in);
      auto rep = evaluate(l.ck.params, l.videos, ev_opts);
      write_file(ev_out, to_json(rep).dump(2) + "\n");
      const std::string csv = to_csv(rep);
      if (!ev_csv.empty()) write_file(ev_csv, csv);
      out << csv << "hit_rate," << format_double(rep.hit_rate) << '\n';
    } else if (*grd) {
      auto l = load_model_inputs(gr_in);
      const PreparedVideo& v = find_video(l.videos, gr_video);
      Tensor sentence = v.sentence;
      std::vector<std::string> tokens = v.tokens;
      if (!gr_sentence.empty()) {
        auto s = embed_sentence(split_words(gr_sentence), load_embeddings(gr_in.embeddings));
        sentence = std::move(s.features);
        tokens = std::move(s.tokens);
      }
      auto g = ground(l.ck.params, v.proposals, sentence);
      nlohmann::json j = {{"video", v.id},   {"tokens", tokens},        {"proposal", g.index},
                          {"score", g.match.score}, {"scores", g.scores}, {"tube", tube_json(v.tubes[g.index])}};
      if (!gr_out.empty()) write_file(gr_out, j.dump(2) + "\n");
      out << j.dump() << '\n';
    } else if (*att) {
      auto l = load_model_inputs(at_in);
      nlohmann::json dump = nlohmann::json::object();
      for (const auto& v : l.videos) {
        if (!at_video.empty() && v.id != at_video) continue;
        auto g = ground(l.ck.params, v);
        dump[v.id] = {{"proposal", g.index},
                      {"score", g.match.score},
                      {"per_segment", g.match.per_segment},
                      {"attention", attention_dump(g.match, v.tokens)}};
      }
      if (!at_video.empty() && dump.empty()) throw LookupError("no video with id " + at_video);
      write_file(at_out, dump.dump(2) + "\n");
      out << "wrote attention for " << dump.size() << " videos to " << at_out << '\n';
    } else if (*gck) {
      const auto res = grad_suite(grad_suite_dims(gc_dims), gc_seed);
      const double worst = res.max_rel_error;
      out << "checked " << res.checked << " entries; worst is parameter " << res.worst_param << " entry "
          << res.worst_index << " (analytic " << res.analytic << ", numeric " << res.numeric << ")\n";
      out << "max relative error: " << worst << '\n';
      if (!(worst < 1e-4)) {
        err << "error: gradient check failed (" << worst << " >= 1e-4)\n";
        return kExitData;
      }
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

}  // namespace tubeground::cli
