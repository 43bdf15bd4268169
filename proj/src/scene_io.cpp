#include "selfdet/scene_io.hpp"

#include "selfdet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace selfdet {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// PGM (P5, maxval 255)

Frame read_pgm(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw CorruptFile("cannot open " + file.string());
  std::string magic;
  in >> magic;
  if (magic != "P5") throw UnsupportedFormat("not a P5 PGM: " + file.string());

  auto next_token = [&in]() {
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
    throw CorruptFile("truncated PGM header");
  };

  Frame f;
  f.width = std::stoi(next_token());
  f.height = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (maxval != 255) throw UnsupportedFormat("PGM maxval must be 255");
  in.get(); // single whitespace after maxval
  f.pixels.resize(static_cast<size_t>(f.width) * f.height);
  in.read(reinterpret_cast<char*>(f.pixels.data()),
          static_cast<std::streamsize>(f.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(f.pixels.size()))
    throw CorruptFile("truncated PGM payload: " + file.string());
  return f;
}

void write_pgm(const Frame& frame, const fs::path& file) {
  std::ofstream out(file, std::ios::binary);
  out << "P5\n" << frame.width << " " << frame.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(frame.pixels.data()),
            static_cast<std::streamsize>(frame.pixels.size()));
}

FrameSequence load_sequence(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".pgm")
      files.push_back(e.path());
  }
  if (files.empty()) throw EmptyDirectory();
  std::sort(files.begin(), files.end());

  FrameSequence seq;
  seq.reserve(files.size());
  for (size_t i = 0; i < files.size(); ++i) {
    Frame f = read_pgm(files[i]);
    f.index = static_cast<int>(i);
    if (!seq.empty() && (f.width != seq[0].width || f.height != seq[0].height))
      throw MixedDimensions();
    seq.push_back(std::move(f));
  }
  return seq;
}

void write_sequence(const FrameSequence& seq, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& f : seq) {
    std::ostringstream name;
    name.width(6);
    name.fill('0');
    name << f.index;
    write_pgm(f, dir / (name.str() + ".pgm"));
  }
}

// ---------------------------------------------------------------------------
// Synthetic scenes

namespace {

std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(round_half_up(v), 0, 255));
}

// Coarse value-noise background, bilinearly interpolated.
std::vector<double> make_background(int w, int h, std::uint64_t texture_seed) {
  Rng rng(texture_seed * 7919 + 13);
  const int cell = 16;
  const int gw = w / cell + 2, gh = h / cell + 2;
  std::vector<double> grid(static_cast<size_t>(gw) * gh);
  for (auto& g : grid) g = rng.uniform(95.0, 150.0);

  std::vector<double> bg(static_cast<size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = static_cast<double>(x) / cell;
      const double gy = static_cast<double>(y) / cell;
      const int x0 = static_cast<int>(gx), y0 = static_cast<int>(gy);
      const double fx = gx - x0, fy = gy - y0;
      const double v00 = grid[static_cast<size_t>(y0) * gw + x0];
      const double v10 = grid[static_cast<size_t>(y0) * gw + x0 + 1];
      const double v01 = grid[static_cast<size_t>(y0 + 1) * gw + x0];
      const double v11 = grid[static_cast<size_t>(y0 + 1) * gw + x0 + 1];
      bg[static_cast<size_t>(y) * w + x] =
          v00 * (1 - fx) * (1 - fy) + v10 * fx * (1 - fy) +
          v01 * (1 - fx) * fy + v11 * fx * fy;
    }
  }
  return bg;
}

struct MovingBody {
  double x, y, w, h;   // top-left, size
  double vx, vy;
  double shade;        // per-body intensity offset
};

void bounce(MovingBody& b, int fw, int fh) {
  if (b.x < 0) { b.x = 0; b.vx = std::abs(b.vx); }
  if (b.y < 0) { b.y = 0; b.vy = std::abs(b.vy); }
  if (b.x + b.w > fw) { b.x = fw - b.w; b.vx = -std::abs(b.vx); }
  if (b.y + b.h > fh) { b.y = fh - b.h; b.vy = -std::abs(b.vy); }
}

// Upright 1:2 sprite with head/torso/leg structure: strong internal
// vertical gradients distinguish it from the wide striped distractors.
void draw_sprite(std::vector<double>& img, int fw, int fh, const MovingBody& b) {
  const int x0 = std::max(0, round_half_up(b.x));
  const int y0 = std::max(0, round_half_up(b.y));
  const int x1 = std::min(fw, round_half_up(b.x + b.w));
  const int y1 = std::min(fh, round_half_up(b.y + b.h));
  for (int y = y0; y < y1; ++y) {
    const double ry = (y - b.y) / b.h;
    for (int x = x0; x < x1; ++x) {
      const double rx = (x - b.x) / b.w;
      double v;
      if (ry < 0.18) {
        // head: dark blob centered horizontally
        const double d = std::abs(rx - 0.5);
        v = d < 0.3 ? 40.0 + b.shade : 200.0 + b.shade;
      } else if (ry < 0.55) {
        // torso: bright slab with dark outline
        const bool edge = rx < 0.12 || rx > 0.88;
        v = edge ? 50.0 + b.shade : 210.0 + b.shade;
      } else {
        // legs: two dark stripes with a bright gap
        const bool leg = (rx > 0.08 && rx < 0.40) || (rx > 0.60 && rx < 0.92);
        v = leg ? 45.0 + b.shade : 190.0 + b.shade;
      }
      img[static_cast<size_t>(y) * fw + x] = v;
    }
  }
}

// Wide horizontally-striped distractor ("vehicle").
void draw_distractor(std::vector<double>& img, int fw, int fh, const MovingBody& b) {
  const int x0 = std::max(0, round_half_up(b.x));
  const int y0 = std::max(0, round_half_up(b.y));
  const int x1 = std::min(fw, round_half_up(b.x + b.w));
  const int y1 = std::min(fh, round_half_up(b.y + b.h));
  for (int y = y0; y < y1; ++y) {
    const double ry = (y - b.y) / b.h;
    const int band = static_cast<int>(ry * 4.0);
    const double v = (band % 2 == 0) ? 70.0 + b.shade : 180.0 + b.shade;
    for (int x = x0; x < x1; ++x)
      img[static_cast<size_t>(y) * fw + x] = v;
  }
}

} // namespace

SynthScene synth_scene(const SynthConfig& cfg) {
  Rng rng(cfg.seed);
  const int fw = cfg.width, fh = cfg.height;
  const auto bg = make_background(fw, fh, cfg.texture_seed);

  std::vector<MovingBody> sprites, distractors;
  for (int i = 0; i < cfg.num_sprites; ++i) {
    MovingBody b;
    b.h = rng.uniform_int(cfg.sprite_min_h, cfg.sprite_max_h);
    b.w = b.h * 0.5;
    b.x = rng.uniform(0.0, fw - b.w);
    b.y = rng.uniform(0.0, fh - b.h);
    const double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
    const double ang = rng.uniform(0.0, 2.0 * M_PI);
    b.vx = speed * std::cos(ang);
    b.vy = speed * std::sin(ang) * 0.3; // mostly lateral motion
    b.shade = rng.uniform(-15.0, 15.0);
    sprites.push_back(b);
  }
  for (int i = 0; i < cfg.num_distractors; ++i) {
    MovingBody b;
    b.h = rng.uniform_int(14, 24);
    b.w = b.h * 2.5;
    b.x = rng.uniform(0.0, fw - b.w);
    b.y = rng.uniform(0.0, fh - b.h);
    const double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
    b.vx = (rng.uniform() < 0.5 ? -speed : speed);
    b.vy = 0.0;
    b.shade = rng.uniform(-20.0, 20.0);
    distractors.push_back(b);
  }

  SynthScene scene;
  scene.frames.reserve(cfg.num_frames);
  for (int t = 0; t < cfg.num_frames; ++t) {
    std::vector<double> img = bg;
    for (const auto& d : distractors) draw_distractor(img, fw, fh, d);
    for (const auto& s : sprites) draw_sprite(img, fw, fh, s);

    Frame f;
    f.index = t;
    f.width = fw;
    f.height = fh;
    f.pixels.resize(img.size());
    for (size_t i = 0; i < img.size(); ++i)
      f.pixels[i] = to_u8(img[i] + cfg.noise_sigma * rng.gaussian());
    scene.frames.push_back(std::move(f));

    auto& gts = scene.gt.frames[t];
    for (size_t i = 0; i < sprites.size(); ++i) {
      BBox box{sprites[i].x, sprites[i].y, sprites[i].w, sprites[i].h};
      gts.push_back({box.clamp_to({fw, fh}), static_cast<int>(i)});
    }

    for (auto& s : sprites) {
      s.x += s.vx + rng.uniform(-0.3, 0.3);
      s.y += s.vy + rng.uniform(-0.3, 0.3);
      bounce(s, fw, fh);
    }
    for (auto& d : distractors) {
      d.x += d.vx;
      d.y += d.vy;
      bounce(d, fw, fh);
    }
  }
  return scene;
}

FrameSequence synth_negatives(const SynthConfig& cfg, int count) {
  FrameSequence out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    SynthConfig neg = cfg;
    neg.num_sprites = 0;
    neg.num_frames = 1;
    neg.seed = cfg.seed * 1000003 + 17 + static_cast<std::uint64_t>(i);
    neg.texture_seed = cfg.texture_seed + 101 + static_cast<std::uint64_t>(i);
    Frame f = synth_scene(neg).frames.front();
    f.index = i;
    out.push_back(std::move(f));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model file

static constexpr int kModelFormatVersion = 1;

void save_model(const LatentModel& model, const Hyperparams& hp, const fs::path& file) {
  json j;
  j["format_version"] = kModelFormatVersion;
  j["window_w"] = model.window_w;
  j["window_h"] = model.window_h;
  j["feature_dim"] = model.feature_dim();
  j["bias"] = model.bias;
  j["weights"] = model.weights;
  j["iteration"] = model.training_iteration;
  j["hyperparams"] = {
      {"C", hp.C}, {"lambda", hp.lambda}, {"gamma_max", hp.gamma_max},
      {"r", hp.r}, {"tau", hp.tau}, {"k_nn", hp.k_nn},
      {"bg_threshold", hp.bg_threshold}, {"nms_iou", hp.nms_iou},
      {"stop_epsilon", hp.stop_epsilon}, {"max_iterations", hp.max_iterations}};
  std::ofstream out(file);
  out << j.dump(1) << "\n";
}

LatentModel load_model(const fs::path& file, Hyperparams* hp_out) {
  std::ifstream in(file);
  if (!in) throw CorruptFile("cannot open " + file.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw CorruptFile(std::string("bad model JSON: ") + e.what());
  }
  if (!j.contains("format_version") || j["format_version"].get<int>() != kModelFormatVersion)
    throw VersionMismatch("unsupported model format_version");
  LatentModel m;
  try {
    m.window_w = j.at("window_w").get<int>();
    m.window_h = j.at("window_h").get<int>();
    m.bias = j.at("bias").get<double>();
    m.weights = j.at("weights").get<std::vector<double>>();
    m.training_iteration = j.at("iteration").get<int>();
    if (hp_out) {
      const auto& h = j.at("hyperparams");
      hp_out->C = h.at("C").get<double>();
      hp_out->lambda = h.at("lambda").get<double>();
      hp_out->gamma_max = h.at("gamma_max").get<double>();
      hp_out->r = h.at("r").get<double>();
      hp_out->tau = h.at("tau").get<int>();
      hp_out->k_nn = h.at("k_nn").get<int>();
      hp_out->bg_threshold = h.at("bg_threshold").get<double>();
      hp_out->nms_iou = h.at("nms_iou").get<double>();
      hp_out->stop_epsilon = h.at("stop_epsilon").get<double>();
      hp_out->max_iterations = h.at("max_iterations").get<int>();
    }
  } catch (const json::exception& e) {
    throw CorruptFile(std::string("bad model JSON: ") + e.what());
  }
  if (static_cast<int>(m.weights.size()) != j.at("feature_dim").get<int>())
    throw CorruptFile("feature_dim does not match weights length");
  return m;
}

// ---------------------------------------------------------------------------
// JSONL box records and learning log

static json record_to_json(const BoxRecord& r) {
  json j;
  j["frame"] = r.frame;
  j["x"] = r.box.x;
  j["y"] = r.box.y;
  j["w"] = r.box.w;
  j["h"] = r.box.h;
  if (r.score) j["score"] = *r.score;
  if (r.label) j["label"] = *r.label;
  if (r.provenance) j["provenance"] = *r.provenance;
  if (r.iteration) j["iteration"] = *r.iteration;
  return j;
}

void write_box_records(const std::vector<BoxRecord>& records, const fs::path& file) {
  std::ofstream out(file);
  for (const auto& r : records) out << record_to_json(r).dump() << "\n";
}

std::vector<BoxRecord> read_box_records(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw CorruptFile("cannot open " + file.string());
  std::vector<BoxRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw CorruptFile(std::string("bad JSONL line: ") + e.what());
    }
    BoxRecord r;
    r.frame = j.at("frame").get<int>();
    r.box = {j.at("x").get<double>(), j.at("y").get<double>(),
             j.at("w").get<double>(), j.at("h").get<double>()};
    if (j.contains("score")) r.score = j["score"].get<double>();
    if (j.contains("label")) r.label = j["label"].get<int>();
    if (j.contains("provenance")) r.provenance = j["provenance"].get<std::string>();
    if (j.contains("iteration")) r.iteration = j["iteration"].get<int>();
    out.push_back(std::move(r));
  }
  return out;
}

GroundTruth ground_truth_from_records(const std::vector<BoxRecord>& records) {
  GroundTruth gt;
  for (const auto& r : records)
    gt.frames[r.frame].push_back({r.box, r.label.value_or(0)});
  return gt;
}

std::vector<BoxRecord> records_from_ground_truth(const GroundTruth& gt) {
  std::vector<BoxRecord> out;
  for (const auto& [frame, entries] : gt.frames) {
    for (const auto& e : entries) {
      BoxRecord r;
      r.frame = frame;
      r.box = e.box;
      r.label = e.object_id;
      out.push_back(r);
    }
  }
  return out;
}

void append_log_entry(const LogEntry& e, const fs::path& file) {
  json j;
  j["iteration"] = e.iteration;
  j["xi_l"] = e.xi_l;
  j["xi_u"] = e.xi_u;
  j["gamma"] = e.gamma;
  j["alpha"] = e.alpha;
  j["num_positives"] = e.num_positives;
  j["num_negatives"] = e.num_negatives;
  j["objective"] = e.objective;
  j["stability_warning"] = e.stability_warning;
  std::ofstream out(file, std::ios::app);
  out << j.dump() << "\n";
}

std::vector<LogEntry> read_log(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw CorruptFile("cannot open " + file.string());
  std::vector<LogEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    LogEntry e;
    e.iteration = j.at("iteration").get<int>();
    e.xi_l = j.at("xi_l").get<double>();
    e.xi_u = j.at("xi_u").get<double>();
    e.gamma = j.at("gamma").get<double>();
    e.alpha = j.at("alpha").get<std::vector<double>>();
    e.num_positives = j.at("num_positives").get<int>();
    e.num_negatives = j.at("num_negatives").get<int>();
    e.objective = j.at("objective").get<double>();
    e.stability_warning = j.at("stability_warning").get<bool>();
    out.push_back(std::move(e));
  }
  return out;
}

} // namespace selfdet
