#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "intentcap/error.hpp"
#include "intentcap/rng.hpp"

namespace intentcap {

// One tracked box in COCO [x, y, w, h] pixel convention. An all-zero bbox is
// the out-of-scene sentinel.
struct FrameBox {
  std::int64_t frame_index = 0;
  std::array<double, 4> bbox{0, 0, 0, 0};

  bool is_sentinel() const {
    return bbox[0] == 0.0 && bbox[1] == 0.0 && bbox[2] == 0.0 && bbox[3] == 0.0;
  }
};

inline std::array<double, 4> coco_to_corners(const std::array<double, 4>& bbox) {
  if (bbox[2] < 0.0 || bbox[3] < 0.0)
    throw ValidationError("coco_to_corners: negative width/height");
  return {bbox[0], bbox[1], bbox[0] + bbox[2], bbox[1] + bbox[3]};
}

inline std::array<double, 4> corners_to_coco(const std::array<double, 4>& corners) {
  if (corners[2] < corners[0] || corners[3] < corners[1])
    throw ValidationError("corners_to_coco: inverted corners");
  return {corners[0], corners[1], corners[2] - corners[0], corners[3] - corners[1]};
}

struct VideoAnnotation {
  std::string video_id;  // "<category>-<n>"
  std::string category;
  int fps = 1;
  std::array<int, 2> frame_size{0, 0};  // width, height in pixels
  std::vector<FrameBox> frames;
  std::vector<std::string> captions;  // 0 for test-style, exactly 5 for train-style

  std::size_t frame_count() const { return frames.size(); }
};

struct ValidationIssue {
  std::string file;
  std::string video_id;
  std::string rule;
  std::string detail;
};

namespace detail {

inline std::size_t line_of_byte(const std::string& content, std::size_t byte) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < byte && i < content.size(); ++i)
    if (content[i] == '\n') ++line;
  return line;
}

inline bool parse_video_id(const std::string& video_id, std::string& category, int& number) {
  const auto dash = video_id.rfind('-');
  if (dash == std::string::npos || dash == 0 || dash + 1 >= video_id.size()) return false;
  category = video_id.substr(0, dash);
  const std::string suffix = video_id.substr(dash + 1);
  for (char c : suffix)
    if (c < '0' || c > '9') return false;
  number = std::stoi(suffix);
  return number >= 1;
}

}  // namespace detail

// Checks every per-video invariant, returning one issue per violated rule.
inline std::vector<ValidationIssue> validate_annotation(const VideoAnnotation& ann,
                                                        const std::string& file = "") {
  std::vector<ValidationIssue> issues;
  auto flag = [&](const std::string& rule, const std::string& detail) {
    issues.push_back({file, ann.video_id, rule, detail});
  };

  std::string id_category;
  int id_number = 0;
  if (!detail::parse_video_id(ann.video_id, id_category, id_number))
    flag("video_id", "expected \"<category>-<n>\", got \"" + ann.video_id + "\"");
  else if (id_category != ann.category)
    flag("video_id", "prefix \"" + id_category + "\" does not match category \"" + ann.category +
                         "\"");

  if (ann.fps != 1) flag("fps", "fps must be 1, got " + std::to_string(ann.fps));
  if (ann.frame_size[0] < 1 || ann.frame_size[1] < 1)
    flag("frame_size", "frame size must be positive");
  if (ann.frames.empty()) flag("frame_index", "video has no frames");

  std::int64_t prev = -1;
  bool index_ok = true;
  for (const auto& fb : ann.frames) {
    if ((prev == -1 && fb.frame_index != 0) || fb.frame_index <= prev) {
      index_ok = false;
      break;
    }
    prev = fb.frame_index;
  }
  if (!ann.frames.empty() && !index_ok)
    flag("frame_index", "frame indices must start at 0 and be strictly increasing");

  for (const auto& fb : ann.frames) {
    bool finite = true;
    for (double v : fb.bbox) finite = finite && std::isfinite(v);
    if (!finite || fb.bbox[2] < 0.0 || fb.bbox[3] < 0.0) {
      flag("bbox", "frame " + std::to_string(fb.frame_index) +
                       " has a non-finite or negative-extent bbox");
      break;
    }
  }

  if (ann.captions.size() != 0 && ann.captions.size() != 5)
    flag("captions", "expected 0 (test) or 5 (train) captions, got " +
                         std::to_string(ann.captions.size()));
  return issues;
}

namespace detail {

// Parses one annotation document. Schema problems are reported as issues; the
// 5-element all-zero sentinel bbox is accepted and normalized to 4 elements.
inline std::optional<VideoAnnotation> annotation_from_json(const nlohmann::json& j,
                                                           const std::string& file,
                                                           std::vector<ValidationIssue>& issues) {
  VideoAnnotation ann;
  try {
    ann.video_id = j.at("video_id").get<std::string>();
    ann.category = j.at("category").get<std::string>();
    ann.fps = j.at("fps").get<int>();
    const auto& fs = j.at("frame_size");
    ann.frame_size = {fs.at(0).get<int>(), fs.at(1).get<int>()};
    for (const auto& f : j.at("frames")) {
      FrameBox fb;
      fb.frame_index = f.at("index").get<std::int64_t>();
      const auto& bb = f.at("bbox");
      if (bb.size() == 5) {
        bool all_zero = true;
        for (const auto& v : bb) all_zero = all_zero && v.get<double>() == 0.0;
        if (!all_zero) {
          issues.push_back({file, ann.video_id, "bbox",
                            "5-element bbox is only accepted as the all-zero sentinel"});
          return std::nullopt;
        }
        fb.bbox = {0, 0, 0, 0};
      } else if (bb.size() == 4) {
        for (std::size_t i = 0; i < 4; ++i) fb.bbox[i] = bb.at(i).get<double>();
      } else {
        issues.push_back({file, ann.video_id, "bbox", "bbox must have 4 elements"});
        return std::nullopt;
      }
      ann.frames.push_back(fb);
    }
    if (j.contains("captions"))
      ann.captions = j.at("captions").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    issues.push_back({file, ann.video_id, "schema", e.what()});
    return std::nullopt;
  }
  return ann;
}

}  // namespace detail

inline nlohmann::json annotation_to_json(const VideoAnnotation& ann) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& fb : ann.frames)
    frames.push_back({{"index", fb.frame_index}, {"bbox", fb.bbox}});
  return nlohmann::json{{"video_id", ann.video_id}, {"category", ann.category},
                        {"fps", ann.fps},           {"frame_size", ann.frame_size},
                        {"frames", frames},         {"captions", ann.captions}};
}

struct LoadResult {
  std::vector<VideoAnnotation> annotations;  // only videos that passed validation
  std::vector<ValidationIssue> issues;
};

// Loads every *.json under `root` (non-recursive, filename order). Violations
// are collected per file, never silently dropped; a video with any violation
// is excluded from the returned annotation list.
inline LoadResult load_annotations(const std::filesystem::path& root) {
  if (!std::filesystem::exists(root))
    throw IoError("dataset root does not exist: " + root.string());
  if (!std::filesystem::is_directory(root))
    throw IoError("dataset root is not a directory: " + root.string());

  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(root))
    if (entry.is_regular_file() && entry.path().extension() == ".json")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  LoadResult result;
  for (const auto& path : files) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
      result.issues.push_back({path.string(), "", "io", "cannot open file"});
      continue;
    }
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string content = buf.str();
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(content);
    } catch (const nlohmann::json::parse_error& e) {
      result.issues.push_back({path.string(), "", "parse",
                               "line " + std::to_string(detail::line_of_byte(content, e.byte)) +
                                   ": " + e.what()});
      continue;
    }
    auto ann = detail::annotation_from_json(j, path.string(), result.issues);
    if (!ann) continue;
    auto issues = validate_annotation(*ann, path.string());
    if (issues.empty()) {
      result.annotations.push_back(std::move(*ann));
    } else {
      result.issues.insert(result.issues.end(), issues.begin(), issues.end());
    }
  }
  return result;
}

struct CorpusRules {
  std::size_t expected_categories = 70;
  std::size_t videos_per_category = 20;
};

// Corpus-level conventions: category count, per-category size, unique ids.
inline std::vector<ValidationIssue> validate_corpus(const std::vector<VideoAnnotation>& annotations,
                                                    const CorpusRules& rules = {}) {
  std::vector<ValidationIssue> issues;
  std::map<std::string, std::size_t> per_category;
  std::map<std::string, std::size_t> id_counts;
  for (const auto& ann : annotations) {
    ++per_category[ann.category];
    ++id_counts[ann.video_id];
  }
  for (const auto& [video_id, count] : id_counts)
    if (count > 1)
      issues.push_back({"", video_id, "duplicate_id",
                        "video id appears " + std::to_string(count) + " times"});
  for (const auto& [category, count] : per_category)
    if (count != rules.videos_per_category)
      issues.push_back({"", "", "category_size",
                        "category \"" + category + "\" has " + std::to_string(count) +
                            " videos, expected " + std::to_string(rules.videos_per_category)});
  if (per_category.size() != rules.expected_categories)
    issues.push_back({"", "", "category_count",
                      "corpus has " + std::to_string(per_category.size()) +
                          " categories, expected " + std::to_string(rules.expected_categories)});
  return issues;
}

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> public_test;
  std::vector<std::string> private_test;
};

// Per-category 14/3/3 partition of the 20 videos. Videos are ordered by the
// numeric suffix of their id; seed 0 keeps that fixed order, any other seed
// applies a deterministic per-category shuffle first.
inline DatasetSplit make_split(const std::vector<VideoAnnotation>& annotations,
                               std::uint64_t seed) {
  std::map<std::string, std::vector<std::pair<int, std::string>>> by_category;
  for (const auto& ann : annotations) {
    std::string category;
    int number = 0;
    if (!detail::parse_video_id(ann.video_id, category, number))
      throw ValidationError("make_split: malformed video id " + ann.video_id);
    by_category[ann.category].emplace_back(number, ann.video_id);
  }
  DatasetSplit split;
  Rng root(seed);
  for (auto& [category, videos] : by_category) {
    if (videos.size() != 20)
      throw ValidationError("make_split: category \"" + category + "\" has " +
                            std::to_string(videos.size()) + " videos, expected 20");
    std::sort(videos.begin(), videos.end());
    std::vector<std::string> ids;
    ids.reserve(videos.size());
    for (const auto& [number, video_id] : videos) ids.push_back(video_id);
    if (seed != 0) {
      Rng stream = root.sub("split/" + category);
      stream.shuffle(ids);
    }
    for (std::size_t i = 0; i < 14; ++i) split.train.push_back(ids[i]);
    for (std::size_t i = 14; i < 17; ++i) split.public_test.push_back(ids[i]);
    for (std::size_t i = 17; i < 20; ++i) split.private_test.push_back(ids[i]);
  }
  return split;
}

inline nlohmann::json split_to_json(const DatasetSplit& split) {
  return nlohmann::json{{"train", split.train},
                        {"public_test", split.public_test},
                        {"private_test", split.private_test}};
}

// Training-time sampling: a target count drawn uniformly from [32, 48]
// (clamped to the video length), then that many distinct indices, sorted.
inline std::vector<std::size_t> sample_frames_train(std::size_t n_frames, Rng& rng) {
  if (n_frames < 1) throw InputError("sample_frames_train: empty video");
  auto target = static_cast<std::size_t>(rng.uniform_int(32, 48));
  target = std::min(target, n_frames);
  return rng.sample_sorted(n_frames, target);
}

// Inference-time sampling: all frames when the video is short, otherwise 48
// uniformly strided indices floor(i * n / 48).
inline std::vector<std::size_t> sample_frames_infer(std::size_t n_frames) {
  if (n_frames < 1) throw InputError("sample_frames_infer: empty video");
  std::vector<std::size_t> out;
  if (n_frames <= 48) {
    out.resize(n_frames);
    for (std::size_t i = 0; i < n_frames; ++i) out[i] = i;
    return out;
  }
  out.reserve(48);
  for (std::size_t i = 0; i < 48; ++i) out.push_back(i * n_frames / 48);
  return out;
}

enum class LengthRoute { kShort, kLong };

// Strictly-below-threshold videos route to the short-video model.
inline LengthRoute route_by_length(std::size_t n_frames, std::size_t threshold = 74) {
  if (threshold < 1) throw ConfigError("route_by_length: threshold must be >= 1");
  return n_frames < threshold ? LengthRoute::kShort : LengthRoute::kLong;
}

}  // namespace intentcap
