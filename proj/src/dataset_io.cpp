#include "dknav/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "dknav/rng.hpp"
#include "internal/file_io.hpp"
#include "json.hpp"

namespace dknav {

namespace fs = std::filesystem;

namespace {

using ordered_json = nlohmann::ordered_json;

void validate_id(const std::string& id) {
  if (id.empty() || id.front() == '/' || id.back() == '/' || id.find("..") != std::string::npos) {
    throw ConfigInvalid("sequence id must be a relative path without '..': '" + id + "'");
  }
}

ordered_json camera_to_json(const CameraIntrinsics& c) {
  return ordered_json{{"width", c.width}, {"height", c.height}, {"fx", c.fx},
                      {"fy", c.fy},       {"cx", c.cx},         {"cy", c.cy}};
}

CameraIntrinsics camera_from_json(const ordered_json& j, const std::string& where) {
  if (!j.is_object()) throw MalformedFile(where + ": camera must be an object");
  CameraIntrinsics c;
  try {
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw MalformedFile(where + ": bad camera object: " + e.what());
  }
  if (c.width <= 0 || c.height <= 0 || !(c.fx > 0) || !(c.fy > 0)) {
    throw MalformedFile(where + ": camera dimensions and focal lengths must be positive");
  }
  return c;
}

ordered_json parse_line(const std::string& line, const std::string& where) {
  try {
    return ordered_json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedFile(where + ": invalid JSON: " + e.what());
  }
}

std::string index_path(const std::string& directory) {
  return (fs::path(directory) / "index.jsonl").string();
}

}  // namespace

std::string to_string(SequenceRole role) {
  switch (role) {
    case SequenceRole::automatic: return "auto";
    case SequenceRole::train: return "train";
    case SequenceRole::val: return "val";
    case SequenceRole::test: return "test";
  }
  return "auto";
}

SequenceRole role_from_string(const std::string& s) {
  if (s == "auto") return SequenceRole::automatic;
  if (s == "train") return SequenceRole::train;
  if (s == "val") return SequenceRole::val;
  if (s == "test") return SequenceRole::test;
  throw MalformedFile("unknown sequence role: '" + s + "'");
}

std::string SequenceRecord::frame_path(std::size_t i) const {
  return (fs::path(directory) / frames.at(i).image_path).string();
}

void write_index(const SequenceRecord& record) {
  std::ostringstream out;
  ordered_json header{{"id", record.id},
                      {"rate_hz", record.rate_hz},
                      {"camera", camera_to_json(record.camera)},
                      {"role", to_string(record.role)}};
  out << header.dump() << '\n';
  for (const FrameRef& f : record.frames) {
    const auto p = f.pose.to_array();
    ordered_json line{{"t", f.t_s}, {"phase", f.phase}, {"image", f.image_path}, {"pose", p}};
    out << line.dump() << '\n';
  }
  internal::write_file_atomic(index_path(record.directory), out.str());
}

SequenceRecord build_sequence(const std::string& root, const SequenceBuildConfig& config) {
  validate_id(config.id);

  SequenceRecord rec;
  rec.id = config.id;
  rec.rate_hz = config.trajectory.rate_hz;
  rec.camera = intrinsics_from_fov(config.width, config.height, config.hfov_deg, config.vfov_deg);
  rec.role = config.role;
  rec.directory = (fs::path(root) / config.id).string();

  const std::vector<RelativeSample> samples = generate(config.trajectory);
  const FixtureModel model = make_berthing_fixture();

  std::error_code ec;
  fs::create_directories(fs::path(rec.directory) / "frames", ec);
  if (ec) throw IoFailure("cannot create " + rec.directory + ": " + ec.message());

  rec.frames.reserve(samples.size());
  char name[32];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof name, "frames/%06zu.ppm", i);
    const Image img = render(rec.camera, samples[i].pose, model, config.render);
    write_ppm((fs::path(rec.directory) / name).string(), img);
    rec.frames.push_back({samples[i].t_s, samples[i].phase, name, samples[i].pose});
  }
  write_index(rec);
  return rec;
}

std::vector<SequenceRecord> build_dataset(const std::string& root,
                                          const std::vector<SequenceBuildConfig>& configs) {
  std::vector<SequenceRecord> out;
  out.reserve(configs.size());
  for (const SequenceBuildConfig& c : configs) out.push_back(build_sequence(root, c));
  return out;
}

SequenceRecord load_sequence(const std::string& directory) {
  const std::string path = index_path(directory);
  const std::string content = internal::read_file(path);

  SequenceRecord rec;
  rec.directory = directory;

  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    const ordered_json j = parse_line(line, where);
    if (!j.is_object()) throw MalformedFile(where + ": expected a JSON object");

    if (line_no == 1) {
      try {
        rec.id = j.at("id").get<std::string>();
        rec.rate_hz = j.at("rate_hz").get<double>();
        rec.role = role_from_string(j.at("role").get<std::string>());
        rec.camera = camera_from_json(j.at("camera"), where);
      } catch (const nlohmann::json::exception& e) {
        throw MalformedFile(where + ": bad header: " + e.what());
      }
      if (!(rec.rate_hz > 0)) throw MalformedFile(where + ": rate_hz must be positive");
      continue;
    }

    FrameRef f;
    try {
      f.t_s = j.at("t").get<double>();
      f.phase = j.at("phase").get<int>();
      f.image_path = j.at("image").get<std::string>();
      const auto pose = j.at("pose").get<std::vector<double>>();
      if (pose.size() != 7) throw MalformedFile(where + ": pose must have 7 elements");
      std::array<double, 7> arr;
      std::copy(pose.begin(), pose.end(), arr.begin());
      f.pose = Pose::from_array(arr);
    } catch (const nlohmann::json::exception& e) {
      throw MalformedFile(where + ": bad frame: " + e.what());
    }
    if (f.phase < 1 || f.phase > 3) throw MalformedFile(where + ": phase must be 1, 2 or 3");
    rec.frames.push_back(std::move(f));
  }

  if (line_no == 0) throw MalformedFile(path + ": empty index");

  const double dt = 1.0 / rec.rate_hz;
  for (std::size_t i = 0; i < rec.frames.size(); ++i) {
    const double expected = static_cast<double>(i) * dt;
    if (std::abs(rec.frames[i].t_s - expected) > 1e-6) {
      throw TimestampGap(rec.id + ": frame " + std::to_string(i) + " at t=" +
                         std::to_string(rec.frames[i].t_s) + " s, expected " +
                         std::to_string(expected) + " s");
    }
    const std::string img_path = rec.frame_path(i);
    if (!fs::exists(img_path)) {
      throw MissingImage(rec.id + ": missing image " + img_path);
    }
    const auto [w, h] = read_ppm_size(img_path);
    if (w != rec.camera.width || h != rec.camera.height) {
      throw MalformedFile(rec.id + ": image " + img_path + " is " + std::to_string(w) + "x" +
                          std::to_string(h) + ", camera expects " +
                          std::to_string(rec.camera.width) + "x" +
                          std::to_string(rec.camera.height));
    }
  }
  return rec;
}

std::vector<SequenceRecord> load_dataset(const std::string& root) {
  if (!fs::is_directory(root)) throw IoFailure("not a directory: " + root);
  std::vector<std::string> dirs;
  for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator();
       ++it) {
    if (it->is_regular_file() && it->path().filename() == "index.jsonl") {
      dirs.push_back(it->path().parent_path().string());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<SequenceRecord> out;
  out.reserve(dirs.size());
  for (const std::string& d : dirs) out.push_back(load_sequence(d));
  std::sort(out.begin(), out.end(),
            [](const SequenceRecord& a, const SequenceRecord& b) { return a.id < b.id; });
  return out;
}

long long SplitPlan::train_frames() const {
  long long n = 0;
  for (const SplitSlice& s : train) n += s.range.end - s.range.begin;
  return n;
}

long long SplitPlan::val_frames() const {
  long long n = 0;
  for (const SplitSlice& s : val) n += s.range.end - s.range.begin;
  return n;
}

SplitPlan split(const std::vector<SequenceRecord>& records, std::uint64_t seed) {
  SplitPlan plan;
  plan.seed = seed;

  double total_s = 0.0;
  long long total_frames = 0;
  for (const SequenceRecord& r : records) {
    if (r.role == SequenceRole::test) continue;
    total_s += r.duration_s();
    total_frames += static_cast<long long>(r.frames.size());
  }
  if (total_s < 128.0) {
    throw TooShort("need at least 128 s of non-test footage, have " + std::to_string(total_s) +
                   " s");
  }

  long long val_frames = 0;
  struct Chunk {
    std::string id;
    IndexRange range;
  };
  std::vector<Chunk> chunks;

  static constexpr std::array<int, 5> kChunkSeconds{64, 128, 256, 512, 1024};

  std::uint64_t ordinal = 0;
  for (const SequenceRecord& r : records) {
    if (r.role == SequenceRole::test) continue;
    const long long n = static_cast<long long>(r.frames.size());
    if (r.role == SequenceRole::train) {
      plan.train.push_back({r.id, {0, n}});
      continue;
    }
    if (r.role == SequenceRole::val) {
      plan.val.push_back({r.id, {0, n}});
      val_frames += n;
      continue;
    }

    // Chunk an `automatic` sequence.
    Rng rng(derive_seed(derive_seed(seed, 0xC40C), ordinal++));
    long long pos = 0;
    while (pos < n) {
      std::vector<long long> feasible;
      for (int secs : kChunkSeconds) {
        const long long len = std::llround(secs * r.rate_hz);
        if (len <= n - pos) feasible.push_back(len);
      }
      if (feasible.empty()) {
        // Trailing piece shorter than the smallest chunk: train keeps it.
        plan.train.push_back({r.id, {pos, n}});
        break;
      }
      const long long len = feasible[rng.below(feasible.size())];
      chunks.push_back({r.id, {pos, pos + len}});
      pos += len;
    }
  }

  // Shuffle chunks, then fill val up to 20% without ever passing 25%.
  Rng shuffle_rng(derive_seed(seed, 0xA551));
  for (std::size_t i = chunks.size(); i > 1; --i) {
    const std::size_t j = shuffle_rng.below(i);
    std::swap(chunks[i - 1], chunks[j]);
  }
  const long long target = (total_frames * 20 + 99) / 100;  // ceil(20%)
  const long long cap = total_frames * 25 / 100;
  for (const Chunk& c : chunks) {
    const long long len = c.range.end - c.range.begin;
    if (val_frames < target && val_frames + len <= cap) {
      plan.val.push_back({c.id, c.range});
      val_frames += len;
    } else {
      plan.train.push_back({c.id, c.range});
    }
  }

  const auto by_position = [](const SplitSlice& a, const SplitSlice& b) {
    if (a.sequence_id != b.sequence_id) return a.sequence_id < b.sequence_id;
    return a.range.begin < b.range.begin;
  };
  std::sort(plan.train.begin(), plan.train.end(), by_position);
  std::sort(plan.val.begin(), plan.val.end(), by_position);
  return plan;
}

void write_split(const std::string& path, const SplitPlan& plan) {
  const auto slices = [](const std::vector<SplitSlice>& v) {
    ordered_json arr = ordered_json::array();
    for (const SplitSlice& s : v) {
      arr.push_back(ordered_json{
          {"sequence", s.sequence_id}, {"begin", s.range.begin}, {"end", s.range.end}});
    }
    return arr;
  };
  ordered_json j{{"seed", plan.seed}, {"train", slices(plan.train)}, {"val", slices(plan.val)}};
  internal::write_file_atomic(path, j.dump(2) + "\n");
}

SplitPlan read_split(const std::string& path) {
  const ordered_json j = parse_line(internal::read_file(path), path);
  SplitPlan plan;
  try {
    plan.seed = j.at("seed").get<std::uint64_t>();
    for (const char* key : {"train", "val"}) {
      auto& dst = std::string(key) == "train" ? plan.train : plan.val;
      for (const auto& s : j.at(key)) {
        SplitSlice slice;
        slice.sequence_id = s.at("sequence").get<std::string>();
        slice.range.begin = s.at("begin").get<long long>();
        slice.range.end = s.at("end").get<long long>();
        if (slice.range.begin < 0 || slice.range.end < slice.range.begin) {
          throw MalformedFile(path + ": bad frame range");
        }
        dst.push_back(std::move(slice));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw MalformedFile(path + ": bad split plan: " + e.what());
  }
  return plan;
}

std::vector<SequenceBuildConfig> table1_build_configs(std::uint64_t seed) {
  // Per sequence: sun elevation, cluttered-scene background (vs noise
  // texture), and whether the sequence is held out for testing.
  struct Row {
    double sun_deg;
    bool clutter;
    bool test;
  };
  static constexpr std::array<Row, 12> kRows{{{37, true, true},
                                              {75, false, false},
                                              {56, true, false},
                                              {146, false, false},
                                              {127, false, false},
                                              {165, true, false},
                                              {56, false, false},
                                              {146, true, true},
                                              {56, true, false},
                                              {146, false, false},
                                              {56, false, false},
                                              {146, true, false}}};

  std::vector<SequenceBuildConfig> out;
  out.reserve(kRows.size());
  for (std::size_t i = 0; i < kRows.size(); ++i) {
    SequenceBuildConfig c;
    char id[32];
    std::snprintf(id, sizeof id, "synthetic/%02zu", i + 1);
    c.id = id;
    c.role = kRows[i].test ? SequenceRole::test : SequenceRole::automatic;
    c.trajectory.seed = derive_seed(seed, i);
    c.render.background = kRows[i].clutter ? Background::clutter : Background::texture;
    c.render.sun_direction = sun_from_elevation_deg(kRows[i].sun_deg);
    c.render.seed = derive_seed(seed, 0xB000 + i);
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<SequenceBuildConfig> mini_build_configs(std::uint64_t seed) {
  // Sun elevations are arranged so the val/test sequences sit inside the
  // range spanned by the training set rather than extrapolating past it.
  static constexpr std::array<double, 6> kSunDeg{30, 60, 40, 55, 45, 50};
  std::vector<SequenceBuildConfig> out;
  out.reserve(6);
  for (std::size_t i = 0; i < 6; ++i) {
    SequenceBuildConfig c;
    char id[32];
    std::snprintf(id, sizeof id, "mini/%02zu", i + 1);
    c.id = id;
    c.role = i < 4 ? SequenceRole::train : (i == 4 ? SequenceRole::val : SequenceRole::test);
    c.width = 186;
    c.height = 120;
    // The desk rig uses a longer lens than the flight sensor: at this frame
    // size a 38-degree field keeps the fixture tens of pixels wide over the
    // whole approach, which range regression needs.  The vertical field
    // matches square pixels.
    c.hfov_deg = 38.0;
    c.vfov_deg = 25.04;

    // Ranges are scaled down with the frame so the fixture still covers
    // enough pixels at the start of the approach for range regression, and
    // the approach stops while the fixture is still almost fully in view.
    // The rig camera runs at 15 Hz, a bench-webcam rate.
    TrajectoryConfig& t = c.trajectory;
    t.seed = derive_seed(seed, i);
    t.rate_hz = 15.0;
    t.start_range_m = 1.15;
    t.handover_range_m = 0.7;
    t.dock_range_m = 0.5;
    t.forced_speed_ms = 0.0125;
    t.waypoint_radius_m = {0.10, 0.22};
    t.perturb_vel_ms = 0.004;
    t.perturb_pos_m = 0.01;
    t.perturb_att_deg = 0.2;
    t.align_time_s = 6.0;

    c.render.background = i % 2 == 0 ? Background::clutter : Background::texture;
    c.render.sun_direction = sun_from_elevation_deg(kSunDeg[i]);
    c.render.seed = derive_seed(seed, 0xB000 + i);
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace dknav
