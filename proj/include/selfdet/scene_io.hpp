#pragma once

#include "selfdet/core.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

namespace selfdet {

struct MixedDimensions : DataError {
  MixedDimensions() : DataError("frames have mixed dimensions") {}
};
struct UnsupportedFormat : DataError {
  using DataError::DataError;
};
struct EmptyDirectory : DataError {
  EmptyDirectory() : DataError("no frames found in directory") {}
};
struct VersionMismatch : DataError {
  using DataError::DataError;
};
struct CorruptFile : DataError {
  using DataError::DataError;
};

struct Frame {
  int index = 0;
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels; // row-major grayscale

  std::uint8_t at(int x, int y) const { return pixels[static_cast<size_t>(y) * width + x]; }
  FrameSize size() const { return {width, height}; }
};

using FrameSequence = std::vector<Frame>;

struct GroundTruth {
  // per frame index: boxes with object identity tags
  struct Entry {
    BBox box;
    int object_id = 0;
  };
  std::map<int, std::vector<Entry>> frames;
};

struct SynthConfig {
  int width = 160;
  int height = 120;
  int num_frames = 200;
  int num_sprites = 3;
  int sprite_min_h = 28;
  int sprite_max_h = 52;
  double speed_min = 0.5;
  double speed_max = 2.0;
  int num_distractors = 2;
  double noise_sigma = 2.0;
  std::uint64_t texture_seed = 1;
  std::uint64_t seed = 7;
};

FrameSequence load_sequence(const std::filesystem::path& dir);
void write_sequence(const FrameSequence& seq, const std::filesystem::path& dir);

Frame read_pgm(const std::filesystem::path& file);
void write_pgm(const Frame& frame, const std::filesystem::path& file);

struct SynthScene {
  FrameSequence frames;
  GroundTruth gt;
};
SynthScene synth_scene(const SynthConfig& cfg);

// Negative pool: textured backgrounds with distractors and no sprites.
FrameSequence synth_negatives(const SynthConfig& cfg, int count);

struct LatentModel {
  std::vector<double> weights; // dimension D
  double bias = 0.0;
  int window_w = 32;
  int window_h = 64;
  int training_iteration = 0;

  int feature_dim() const { return static_cast<int>(weights.size()); }
};

void save_model(const LatentModel& model, const Hyperparams& hp,
                const std::filesystem::path& file);
LatentModel load_model(const std::filesystem::path& file, Hyperparams* hp_out = nullptr);

// JSONL box records: {frame, x, y, w, h, score?, label?, provenance?, iteration?}
struct BoxRecord {
  int frame = 0;
  BBox box;
  std::optional<double> score;
  std::optional<int> label;
  std::optional<std::string> provenance;
  std::optional<int> iteration;
};
void write_box_records(const std::vector<BoxRecord>& records,
                       const std::filesystem::path& file);
std::vector<BoxRecord> read_box_records(const std::filesystem::path& file);

GroundTruth ground_truth_from_records(const std::vector<BoxRecord>& records);
std::vector<BoxRecord> records_from_ground_truth(const GroundTruth& gt);

// One learning-log line per iteration (Fig. 5-style report data).
struct LogEntry {
  int iteration = 0;
  double xi_l = 0.0;
  double xi_u = 0.0;
  double gamma = 0.0;
  std::vector<double> alpha;
  int num_positives = 0;
  int num_negatives = 0;
  double objective = 0.0;
  bool stability_warning = false;
};
void append_log_entry(const LogEntry& e, const std::filesystem::path& file);
std::vector<LogEntry> read_log(const std::filesystem::path& file);

} // namespace selfdet
