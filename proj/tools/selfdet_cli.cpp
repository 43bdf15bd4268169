#include "selfdet/pipeline.hpp"
#include "selfdet/propagation.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace selfdet;

namespace {

// Flat key=value config file; unknown keys are an error.
void apply_config_line(Hyperparams& hp, const std::string& key, const std::string& value) {
  if (key == "C") hp.C = std::stod(value);
  else if (key == "lambda") hp.lambda = std::stod(value);
  else if (key == "gamma_max") hp.gamma_max = std::stod(value);
  else if (key == "r") hp.r = std::stod(value);
  else if (key == "tau") hp.tau = std::stoi(value);
  else if (key == "k_nn") hp.k_nn = std::stoi(value);
  else if (key == "bg_threshold") hp.bg_threshold = std::stod(value);
  else if (key == "nms_iou") hp.nms_iou = std::stod(value);
  else if (key == "stop_epsilon") hp.stop_epsilon = std::stod(value);
  else if (key == "max_iterations") hp.max_iterations = std::stoi(value);
  else throw DataError("unknown config key: " + key);
}

void load_config_file(Hyperparams& hp, const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open config file " + file.string());
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!key.empty()) apply_config_line(hp, key, value);
  }
}

void add_hp_overrides(CLI::App* cmd, Hyperparams& hp, std::string& config_path) {
  cmd->add_option("--config", config_path, "key=value config file");
  cmd->add_option("--C", hp.C);
  cmd->add_option("--lambda", hp.lambda);
  cmd->add_option("--gamma-max", hp.gamma_max);
  cmd->add_option("--r", hp.r);
  cmd->add_option("--tau", hp.tau);
  cmd->add_option("--k-nn", hp.k_nn);
  cmd->add_option("--bg-threshold", hp.bg_threshold);
  cmd->add_option("--nms-iou", hp.nms_iou);
  cmd->add_option("--stop-epsilon", hp.stop_epsilon);
  cmd->add_option("--max-iterations", hp.max_iterations);
}

std::vector<BoxRecord> detections_to_records(const std::vector<Detection>& dets) {
  std::vector<BoxRecord> recs;
  for (const auto& d : dets) {
    BoxRecord r;
    r.frame = d.frame_index;
    r.box = d.box;
    r.score = d.score;
    recs.push_back(r);
  }
  return recs;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-learning scene-specific sliding-window detector"};
  app.require_subcommand(1);

  // --- synth ---
  auto* synth = app.add_subcommand("synth", "generate a synthetic scene with ground truth");
  SynthConfig scfg;
  std::string synth_out, neg_out;
  int num_negatives = 10;
  synth->add_option("--out", synth_out, "output frame directory")->required();
  synth->add_option("--seed", scfg.seed);
  synth->add_option("--frames", scfg.num_frames);
  synth->add_option("--width", scfg.width);
  synth->add_option("--height", scfg.height);
  synth->add_option("--sprites", scfg.num_sprites);
  synth->add_option("--distractors", scfg.num_distractors);
  synth->add_option("--noise", scfg.noise_sigma);
  synth->add_option("--texture-seed", scfg.texture_seed);
  synth->add_option("--negatives-out", neg_out, "also write a negative-image pool here");
  synth->add_option("--num-negatives", num_negatives);

  // --- learn ---
  auto* learn = app.add_subcommand("learn", "self-learn a detector from unlabeled video");
  std::string learn_video, learn_negs, learn_out, learn_config;
  PipelineConfig pcfg;
  learn->add_option("--video", learn_video, "frame directory")->required();
  learn->add_option("--negatives", learn_negs, "negative image directory")->required();
  learn->add_option("--out", learn_out, "output directory")->required();
  learn->add_option("--seed", pcfg.seed);
  add_hp_overrides(learn, pcfg.hp, learn_config);

  // --- detect ---
  auto* det = app.add_subcommand("detect", "run the detector over frames");
  std::string det_model, det_frames, det_out;
  double det_threshold = 0.0;
  det->add_option("--model", det_model)->required();
  det->add_option("--frames", det_frames)->required();
  det->add_option("--out", det_out, "detections JSONL path")->required();
  det->add_option("--threshold", det_threshold, "raw score threshold");

  // --- eval ---
  auto* ev = app.add_subcommand("eval", "PR/AP and FPPI against ground truth");
  std::string ev_dets, ev_gt, ev_out;
  ev->add_option("--detections", ev_dets)->required();
  ev->add_option("--gt", ev_gt)->required();
  ev->add_option("--out", ev_out, "output directory for curve.csv and summary.json")->required();

  // --- report ---
  auto* rep = app.add_subcommand("report", "per-iteration learning tables");
  std::string rep_log;
  rep->add_option("--log", rep_log)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e); // --help
    app.exit(e);
    return 1;
  }

  try {
    if (synth->parsed()) {
      const SynthScene scene = synth_scene(scfg);
      write_sequence(scene.frames, synth_out);
      write_box_records(records_from_ground_truth(scene.gt), fs::path(synth_out) / "gt.jsonl");
      if (!neg_out.empty())
        write_sequence(synth_negatives(scfg, num_negatives), neg_out);
    } else if (learn->parsed()) {
      if (!learn_config.empty()) {
        Hyperparams base;
        load_config_file(base, learn_config);
        // file first, explicit flags override
        Hyperparams flags = pcfg.hp;
        pcfg.hp = base;
        for (const auto* opt : learn->get_options()) (void)opt;
        // CLI11 already wrote flag values into pcfg.hp before this point,
        // so re-apply any flag the user passed
        if (learn->count("--C")) pcfg.hp.C = flags.C;
        if (learn->count("--lambda")) pcfg.hp.lambda = flags.lambda;
        if (learn->count("--gamma-max")) pcfg.hp.gamma_max = flags.gamma_max;
        if (learn->count("--r")) pcfg.hp.r = flags.r;
        if (learn->count("--tau")) pcfg.hp.tau = flags.tau;
        if (learn->count("--k-nn")) pcfg.hp.k_nn = flags.k_nn;
        if (learn->count("--bg-threshold")) pcfg.hp.bg_threshold = flags.bg_threshold;
        if (learn->count("--nms-iou")) pcfg.hp.nms_iou = flags.nms_iou;
        if (learn->count("--stop-epsilon")) pcfg.hp.stop_epsilon = flags.stop_epsilon;
        if (learn->count("--max-iterations")) pcfg.hp.max_iterations = flags.max_iterations;
      }
      const FrameSequence video = load_sequence(learn_video);
      const FrameSequence negs = load_sequence(learn_negs);
      const LearnState state = self_learn(video, negs, pcfg);

      fs::create_directories(learn_out);
      save_model(state.model, pcfg.hp, fs::path(learn_out) / "model.json");
      std::vector<BoxRecord> labels;
      for (const auto& s : state.labeled) {
        BoxRecord r;
        r.frame = s.proposal.frame_index;
        r.box = s.proposal.box;
        r.label = s.label;
        r.iteration = s.iteration;
        switch (s.provenance) {
          case Provenance::discovered: r.provenance = "discovered"; break;
          case Provenance::propagated: r.provenance = "propagated"; break;
          case Provenance::hard_negative: r.provenance = "hard_negative"; break;
          case Provenance::negative_image: r.provenance = "negative_image"; break;
        }
        labels.push_back(r);
      }
      write_box_records(labels, fs::path(learn_out) / "labels.jsonl");
      const fs::path log_path = fs::path(learn_out) / "log.jsonl";
      if (fs::exists(log_path)) fs::remove(log_path);
      for (const auto& e : state.log) append_log_entry(e, log_path);
    } else if (det->parsed()) {
      Hyperparams hp;
      const LatentModel model = load_model(det_model, &hp);
      const FrameSequence frames = load_sequence(det_frames);
      ProposalParams pp;
      std::vector<Detection> all;
      for (const auto& f : frames) {
        auto dets = detect(model, f, pp, det_threshold, hp.nms_iou);
        all.insert(all.end(), dets.begin(), dets.end());
      }
      write_box_records(detections_to_records(all), det_out);
    } else if (ev->parsed()) {
      const auto det_recs = read_box_records(ev_dets);
      const auto gt_recs = read_box_records(ev_gt);
      std::vector<Detection> dets;
      int max_frame = -1;
      for (const auto& r : det_recs) {
        dets.push_back({r.box, r.score.value_or(0.0), r.frame});
        max_frame = std::max(max_frame, r.frame);
      }
      GroundTruth gt = ground_truth_from_records(gt_recs);
      for (const auto& [f, v] : gt.frames) max_frame = std::max(max_frame, f);
      const EvalCurve curve = evaluate(dets, gt, max_frame + 1);
      fs::create_directories(ev_out);
      write_curve_csv(curve, fs::path(ev_out) / "curve.csv");
      write_curve_summary(curve, fs::path(ev_out) / "summary.json");
      std::printf("ap=%.4f max_recall=%.4f\n", curve.ap, curve.max_recall);
    } else if (rep->parsed()) {
      const auto log = read_log(rep_log);
      std::printf("%4s %10s %10s %7s %22s %6s %6s %s\n", "iter", "xi_l", "xi_u", "gamma",
                  "alpha(det,mot,obj)", "pos", "neg", "warn");
      for (const auto& e : log) {
        std::printf("%4d %10.6f %10.6f %7.2f (%5.3f,%5.3f,%5.3f) %6d %6d %s\n",
                    e.iteration, e.xi_l, e.xi_u, e.gamma,
                    e.alpha.size() > 2 ? e.alpha[0] : 0.0,
                    e.alpha.size() > 2 ? e.alpha[1] : 0.0,
                    e.alpha.size() > 2 ? e.alpha[2] : 0.0, e.num_positives,
                    e.num_negatives, e.stability_warning ? "STABILITY" : "");
      }
    }
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
