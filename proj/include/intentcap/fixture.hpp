#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "intentcap/dataset.hpp"
#include "intentcap/error.hpp"
#include "intentcap/prompt.hpp"
#include "intentcap/rng.hpp"

namespace intentcap {

namespace detail {

// 70 object categories, one per LaSoT-style class.
inline const std::vector<std::string>& fixture_categories() {
  static const std::vector<std::string> names = {
      "airplane", "basketball", "bear",       "bicycle",    "bird",       "boat",
      "book",     "bottle",     "bus",        "car",        "cat",        "cattle",
      "chameleon", "coin",      "crab",       "crocodile",  "cup",        "deer",
      "dog",      "drone",      "fan",        "elephant",   "flag",       "fox",
      "frisbee",  "dartboard",  "gecko",      "giraffe",    "goldfish",   "gorilla",
      "guitar",   "hand",       "hat",        "helmet",     "hippo",      "horse",
      "kangaroo", "kite",       "leopard",    "plate",      "lion",       "lizard",
      "microphone", "monkey",   "motorcycle", "mouse",      "person",     "pig",
      "ball",     "rabbit",     "kart",       "robot",      "cube",       "squid",
      "shark",    "sheep",      "skateboard", "spider",     "squirrel",   "surfboard",
      "swing",    "tank",       "tiger",      "train",      "truck",      "turtle",
      "umbrella", "volleyball", "yoyo",       "zebra"};
  return names;
}

inline std::string fixture_caption(const std::string& category, Rng& rng) {
  static const char* verbs[] = {"moves across",  "circles around", "chases a ball through",
                                "rests beside",  "jumps over",     "slides along",
                                "runs through",  "drifts past"};
  static const char* places[] = {"the yard",      "an open field", "the road",
                                 "shallow water", "the arena",     "a rocky slope",
                                 "the track",     "tall grass"};
  static const char* tails[] = {"before stopping near the camera", "while staying in view",
                                "as the camera follows it",        "and then turns back",
                                "without slowing down",            "while the light changes"};
  std::string caption = "the " + category + " ";
  caption += verbs[rng.uniform_int(0, 7)];
  caption += " ";
  caption += places[rng.uniform_int(0, 7)];
  caption += " ";
  caption += tails[rng.uniform_int(0, 5)];
  return caption;
}

}  // namespace detail

struct FixtureOptions {
  std::size_t categories = 70;
  std::size_t videos_per_category = 20;
  std::uint64_t seed = 0;
  std::array<int, 2> frame_size{448, 448};
  bool with_frames = false;  // also write PPM frames under <root>/frames/
};

// Writes a synthetic annotation corpus that satisfies every dataset
// convention: per-video JSON files, COCO boxes with occasional out-of-scene
// sentinels, FPS 1, five captions per video, and frame counts spread around
// the 74-frame routing threshold. Deterministic for a given seed.
inline void generate_fixture(const std::filesystem::path& root, const FixtureOptions& options) {
  std::filesystem::create_directories(root);
  const auto& base_names = detail::fixture_categories();
  Rng rng(options.seed);
  for (std::size_t c = 0; c < options.categories; ++c) {
    const std::string category =
        c < base_names.size() ? base_names[c] : "object" + std::to_string(c);
    for (std::size_t v = 1; v <= options.videos_per_category; ++v) {
      VideoAnnotation ann;
      ann.category = category;
      ann.video_id = category + "-" + std::to_string(v);
      ann.fps = 1;
      ann.frame_size = options.frame_size;
      Rng vr = rng.sub("video/" + ann.video_id);

      const auto n_frames = static_cast<std::size_t>(vr.uniform_int(30, 119));
      const double fw = options.frame_size[0], fh = options.frame_size[1];
      double bw = fw * vr.uniform(0.15, 0.35);
      double bh = fh * vr.uniform(0.15, 0.35);
      double x = vr.uniform(0.0, fw - bw);
      double y = vr.uniform(0.0, fh - bh);
      for (std::size_t i = 0; i < n_frames; ++i) {
        FrameBox fb;
        fb.frame_index = static_cast<std::int64_t>(i);
        if (i > 2 && vr.uniform() < 0.04) {
          fb.bbox = {0, 0, 0, 0};  // out of scene
        } else {
          x = std::clamp(x + vr.uniform(-0.03, 0.03) * fw, 0.0, fw - bw);
          y = std::clamp(y + vr.uniform(-0.03, 0.03) * fh, 0.0, fh - bh);
          fb.bbox = {std::round(x * 100) / 100, std::round(y * 100) / 100,
                     std::round(bw * 100) / 100, std::round(bh * 100) / 100};
        }
        ann.frames.push_back(fb);
      }
      for (int k = 0; k < 5; ++k) ann.captions.push_back(detail::fixture_caption(category, vr));

      std::ofstream out(root / (ann.video_id + ".json"), std::ios::binary);
      if (!out) throw IoError("cannot write fixture file for " + ann.video_id);
      out << annotation_to_json(ann).dump() << "\n";

      if (options.with_frames) {
        const auto dir = root / "frames" / ann.video_id;
        std::filesystem::create_directories(dir);
        for (const auto& fb : ann.frames) {
          Frame frame = Frame::solid(options.frame_size[0], options.frame_size[1], 96, 112, 96);
          if (!fb.is_sentinel()) {
            const int bx = static_cast<int>(fb.bbox[0]), by = static_cast<int>(fb.bbox[1]);
            const int ex = std::min(frame.width, bx + static_cast<int>(fb.bbox[2]));
            const int ey = std::min(frame.height, by + static_cast<int>(fb.bbox[3]));
            for (int yy = by; yy < ey; ++yy)
              for (int xx = bx; xx < ex; ++xx) {
                auto* px = frame.at(xx, yy);
                px[0] = 200;
                px[1] = 180;
                px[2] = 40;
              }
          }
          write_ppm(frame, dir / ("frame_" + std::to_string(fb.frame_index) + ".ppm"));
        }
      }
    }
  }
}

}  // namespace intentcap
