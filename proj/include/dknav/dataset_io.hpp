#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dknav/errors.hpp"
#include "dknav/imaging.hpp"
#include "dknav/trajgen.hpp"

// On-disk image-sequence datasets.
//
// Layout: <root>/<sequence-id>/index.jsonl with frames under
// <root>/<sequence-id>/frames/NNNNNN.ppm.  The index is JSON Lines: the first
// line is a header object {id, rate_hz, camera, role}, each following line
// one frame object {t, phase, image, pose} with the pose as the flat
// 7-element array and the image path relative to the sequence directory.

namespace dknav {

class MissingImage : public Error {
 public:
  using Error::Error;
};

class TimestampGap : public Error {
 public:
  using Error::Error;
};

class TooShort : public Error {
 public:
  using Error::Error;
};

// How a sequence participates in train/validation splits.  `automatic`
// sequences are chunk-partitioned by split(); explicit roles pin the whole
// sequence; `test` sequences are never assigned to train or val.
enum class SequenceRole { automatic, train, val, test };

std::string to_string(SequenceRole role);
SequenceRole role_from_string(const std::string& s);  // throws MalformedFile

struct FrameRef {
  double t_s = 0.0;
  int phase = 1;
  std::string image_path;  // relative to the sequence directory
  Pose pose;
};

struct SequenceRecord {
  std::string id;
  double rate_hz = 10.0;
  CameraIntrinsics camera;
  SequenceRole role = SequenceRole::automatic;
  std::vector<FrameRef> frames;
  // Directory holding index.jsonl; filled by build/load so callers can
  // resolve the relative frame paths.
  std::string directory;

  std::string frame_path(std::size_t i) const;  // directory + '/' + relative
  double duration_s() const {
    return frames.empty() ? 0.0 : static_cast<double>(frames.size()) / rate_hz;
  }
};

// One sequence's build recipe: a relative trajectory plus rendering options.
struct SequenceBuildConfig {
  std::string id;
  SequenceRole role = SequenceRole::automatic;
  TrajectoryConfig trajectory;
  RenderSettings render;
  int width = 744;
  int height = 480;
  double hfov_deg = 65.6;
  double vfov_deg = 44.7;
};

// Twelve ~5 min sequences at 744x480: six cluttered-scene backgrounds
// alternating with six noise-texture backgrounds, varied sun elevations,
// sequences 01 and 08 reserved for testing.
std::vector<SequenceBuildConfig> table1_build_configs(std::uint64_t seed);

// Six ~1 min sequences at 186x120 for quick end-to-end runs: four train,
// one val, one test, alternating backgrounds, gentle sun angles.
std::vector<SequenceBuildConfig> mini_build_configs(std::uint64_t seed);

// Generates the trajectory, renders every sample, writes frames and the
// index (atomically).  Deterministic for a fixed config.
SequenceRecord build_sequence(const std::string& root, const SequenceBuildConfig& config);
std::vector<SequenceRecord> build_dataset(const std::string& root,
                                          const std::vector<SequenceBuildConfig>& configs);

// Writes <record.directory>/index.jsonl for an in-memory record.
void write_index(const SequenceRecord& record);

// Loads and fully validates one sequence directory: schema (MalformedFile),
// image presence and size (MissingImage / MalformedFile), uniform 1/rate
// timestamps (TimestampGap).
SequenceRecord load_sequence(const std::string& directory);

// Loads every sequence under root (any directory containing index.jsonl),
// ordered by id.
std::vector<SequenceRecord> load_dataset(const std::string& root);

struct IndexRange {
  long long begin = 0;  // half-open [begin, end) frame indices
  long long end = 0;
};

struct SplitSlice {
  std::string sequence_id;
  IndexRange range;
};

struct SplitPlan {
  std::uint64_t seed = 0;
  std::vector<SplitSlice> train;
  std::vector<SplitSlice> val;

  long long train_frames() const;
  long long val_frames() const;
};

// Partitions non-test sequences into train/val.  Sequences with explicit
// train/val roles contribute whole; `automatic` sequences are cut into
// chunks whose lengths are drawn uniformly from the feasible subset of
// {64, 128, 256, 512, 1024} seconds (a trailing piece shorter than 64 s
// always goes to train).  Shuffled chunks are assigned to val until the val
// fraction reaches 20% of all non-test frames, skipping any chunk that
// would push it past 25%.  Throws TooShort when the non-test sequences
// total less than 128 s.
SplitPlan split(const std::vector<SequenceRecord>& records, std::uint64_t seed);

void write_split(const std::string& path, const SplitPlan& plan);
SplitPlan read_split(const std::string& path);

}  // namespace dknav
