#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "intentcap/dataset.hpp"
#include "intentcap/error.hpp"

namespace intentcap {

// 8-bit RGB frame, row-major.
struct Frame {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // 3 * width * height

  static Frame solid(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (w < 1 || h < 1) throw InputError("Frame: dimensions must be positive");
    Frame f;
    f.width = w;
    f.height = h;
    f.pixels.resize(static_cast<std::size_t>(3) * w * h);
    for (std::size_t i = 0; i < f.pixels.size(); i += 3) {
      f.pixels[i] = r;
      f.pixels[i + 1] = g;
      f.pixels[i + 2] = b;
    }
    return f;
  }

  std::uint8_t* at(int x, int y) {
    return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }
};

// Binary PPM (P6, maxval 255); bit-exact and dependency-free.
inline void write_ppm(const Frame& frame, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "P6\n" << frame.width << " " << frame.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(frame.pixels.data()),
            static_cast<std::streamsize>(frame.pixels.size()));
  if (!out) throw IoError("short write: " + path.string());
}

inline Frame read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  auto next_token = [&]() -> std::string {
    std::string tok;
    char c;
    while (in.get(c)) {
      if (c == '#') {  // comment to end of line
        while (in.get(c) && c != '\n') {
        }
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!tok.empty()) return tok;
        continue;
      }
      tok.push_back(c);
    }
    return tok;
  };
  const std::string magic = next_token();
  if (magic != "P6") throw ParseError(path.string() + ": not a binary PPM (P6)");
  Frame frame;
  try {
    frame.width = std::stoi(next_token());
    frame.height = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    if (maxval != 255) throw ParseError(path.string() + ": only maxval 255 supported");
  } catch (const std::invalid_argument&) {
    throw ParseError(path.string() + ": malformed PPM header");
  }
  if (frame.width < 1 || frame.height < 1)
    throw ParseError(path.string() + ": non-positive dimensions");
  frame.pixels.resize(static_cast<std::size_t>(3) * frame.width * frame.height);
  in.read(reinterpret_cast<char*>(frame.pixels.data()),
          static_cast<std::streamsize>(frame.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(frame.pixels.size()))
    throw ParseError(path.string() + ": truncated pixel data");
  return frame;
}

// Visual-prompt rectangle style. `stroke_px` is used literally;
// scaled_default() gives the 3 px @ 448 convention scaled to a frame.
struct RenderStyle {
  double margin_fraction = 0.05;  // enlargement per side length
  double stroke_px = 3.0;

  static RenderStyle scaled_default(int frame_w, int frame_h) {
    RenderStyle style;
    style.stroke_px = std::max(1.0, 3.0 * std::min(frame_w, frame_h) / 448.0);
    return style;
  }
};

// Draws a hollow pure-red rectangle around the box (enlarged by the margin,
// clamped to the frame). A pixel is painted when its center lies inside the
// stroke band just outside the enlarged box; interior pixels and pixels away
// from the band are untouched. The sentinel box leaves the frame unchanged.
inline Frame render_visual_prompt(const Frame& frame, const std::array<double, 4>& corners,
                                  const RenderStyle& style = {}) {
  Frame out = frame;
  if (corners[0] == 0.0 && corners[1] == 0.0 && corners[2] == 0.0 && corners[3] == 0.0)
    return out;
  const double mx = style.margin_fraction * (corners[2] - corners[0]);
  const double my = style.margin_fraction * (corners[3] - corners[1]);
  const double x1 = std::clamp(corners[0] - mx, 0.0, static_cast<double>(frame.width));
  const double x2 = std::clamp(corners[2] + mx, 0.0, static_cast<double>(frame.width));
  const double y1 = std::clamp(corners[1] - my, 0.0, static_cast<double>(frame.height));
  const double y2 = std::clamp(corners[3] + my, 0.0, static_cast<double>(frame.height));
  const double s = style.stroke_px;

  const int c_lo = std::max(0, static_cast<int>(std::floor(x1 - s)));
  const int c_hi = std::min(frame.width - 1, static_cast<int>(std::ceil(x2 + s)));
  const int r_lo = std::max(0, static_cast<int>(std::floor(y1 - s)));
  const int r_hi = std::min(frame.height - 1, static_cast<int>(std::ceil(y2 + s)));
  for (int r = r_lo; r <= r_hi; ++r) {
    const double cy = r + 0.5;
    for (int c = c_lo; c <= c_hi; ++c) {
      const double cx = c + 0.5;
      const bool in_outer =
          cx > x1 - s && cx < x2 + s && cy > y1 - s && cy < y2 + s;
      const bool in_inner = cx > x1 && cx < x2 && cy > y1 && cy < y2;
      if (in_outer && !in_inner) {
        auto* px = out.at(c, r);
        px[0] = 255;
        px[1] = 0;
        px[2] = 0;
      }
    }
  }
  return out;
}

// Pixel corners -> integers on the 0..1000 scale; out-of-frame corners are
// clamped first (reported through `clamped`).
inline std::array<int, 4> normalize_box(const std::array<double, 4>& corners, int frame_w,
                                        int frame_h, bool* clamped = nullptr) {
  if (frame_w < 1 || frame_h < 1) throw InputError("normalize_box: frame size must be positive");
  std::array<double, 4> c = corners;
  bool was_clamped = false;
  for (std::size_t i : {std::size_t{0}, std::size_t{2}}) {
    const double v = std::clamp(c[i], 0.0, static_cast<double>(frame_w));
    was_clamped = was_clamped || v != c[i];
    c[i] = v;
  }
  for (std::size_t i : {std::size_t{1}, std::size_t{3}}) {
    const double v = std::clamp(c[i], 0.0, static_cast<double>(frame_h));
    was_clamped = was_clamped || v != c[i];
    c[i] = v;
  }
  if (clamped) *clamped = was_clamped;
  return {static_cast<int>(std::llround(1000.0 * c[0] / frame_w)),
          static_cast<int>(std::llround(1000.0 * c[1] / frame_h)),
          static_cast<int>(std::llround(1000.0 * c[2] / frame_w)),
          static_cast<int>(std::llround(1000.0 * c[3] / frame_h))};
}

// Instruction wording is a stand-in; the tested contract is the structure:
// one category-bearing task sentence, then exactly one line per sampled frame
// carrying either the "[x1, y1, x2, y2]" coordinates or the out-of-scene
// marker.
struct InstructionTemplate {
  std::string preamble =
      "Describe what the {category} marked as the object of interest does in this video.";
  std::string out_of_scene_marker = "object not visible";

  static InstructionTemplate standard() { return {}; }
};

namespace detail {

inline std::string substitute_category(const std::string& preamble, const std::string& category) {
  std::string out = preamble;
  const std::string slot = "{category}";
  for (auto pos = out.find(slot); pos != std::string::npos; pos = out.find(slot, pos))
    out.replace(pos, slot.size(), category);
  return out;
}

}  // namespace detail

// Deterministic instruction text: preamble plus one coordinate (or
// out-of-scene) line per sampled frame, in sampled order.
inline std::string build_instruction(const VideoAnnotation& ann,
                                     std::span<const std::size_t> sampled_indices,
                                     const InstructionTemplate& tmpl = {},
                                     int* clamp_warnings = nullptr) {
  std::string out = detail::substitute_category(tmpl.preamble, ann.category);
  for (std::size_t idx : sampled_indices) {
    if (idx >= ann.frames.size())
      throw InputError("build_instruction: frame position " + std::to_string(idx) +
                       " out of range for " + ann.video_id);
    const FrameBox& fb = ann.frames[idx];
    out += "\nFrame " + std::to_string(fb.frame_index) + ": ";
    if (fb.is_sentinel()) {
      out += tmpl.out_of_scene_marker;
    } else {
      bool clamped = false;
      const auto n = normalize_box(coco_to_corners(fb.bbox), ann.frame_size[0], ann.frame_size[1],
                                   &clamped);
      if (clamped && clamp_warnings) ++*clamp_warnings;
      out += "[" + std::to_string(n[0]) + ", " + std::to_string(n[1]) + ", " +
             std::to_string(n[2]) + ", " + std::to_string(n[3]) + "]";
    }
  }
  return out;
}

enum class PromptMode { kText, kVisual, kBoth };

inline std::string to_string(PromptMode mode) {
  switch (mode) {
    case PromptMode::kText: return "text";
    case PromptMode::kVisual: return "visual";
    case PromptMode::kBoth: return "both";
  }
  return "?";
}

inline PromptMode prompt_mode_from_string(const std::string& s) {
  if (s == "text") return PromptMode::kText;
  if (s == "visual") return PromptMode::kVisual;
  if (s == "both") return PromptMode::kBoth;
  throw ConfigError("unknown prompt mode \"" + s + "\" (expected text|visual|both)");
}

struct PromptBundle {
  std::string video_id;
  PromptMode mode = PromptMode::kText;
  std::string instruction;
  std::vector<Frame> rendered_frames;  // aligned with the sampled indices
  int clamp_warnings = 0;
};

// Assembles the per-video prompt artifacts for a mode. `frames` must be
// aligned with `sampled_indices` for the visual modes; text mode takes none.
inline PromptBundle build_bundle(const VideoAnnotation& ann,
                                 std::span<const std::size_t> sampled_indices, PromptMode mode,
                                 std::span<const Frame> frames = {},
                                 const InstructionTemplate& tmpl = {},
                                 const RenderStyle* style = nullptr) {
  PromptBundle bundle;
  bundle.video_id = ann.video_id;
  bundle.mode = mode;
  if (mode == PromptMode::kVisual) {
    bundle.instruction = detail::substitute_category(tmpl.preamble, ann.category);
  } else {
    bundle.instruction = build_instruction(ann, sampled_indices, tmpl, &bundle.clamp_warnings);
  }
  if (mode == PromptMode::kText) return bundle;

  if (frames.size() != sampled_indices.size())
    throw InputError("build_bundle: mode \"" + to_string(mode) + "\" needs one frame per sampled index for " +
                     ann.video_id + " (got " + std::to_string(frames.size()) + ", want " +
                     std::to_string(sampled_indices.size()) + ")");
  bundle.rendered_frames.reserve(frames.size());
  for (std::size_t p = 0; p < frames.size(); ++p) {
    const FrameBox& fb = ann.frames.at(sampled_indices[p]);
    const RenderStyle effective =
        style ? *style : RenderStyle::scaled_default(frames[p].width, frames[p].height);
    if (fb.is_sentinel()) {
      bundle.rendered_frames.push_back(frames[p]);
    } else {
      bundle.rendered_frames.push_back(
          render_visual_prompt(frames[p], coco_to_corners(fb.bbox), effective));
    }
  }
  return bundle;
}

}  // namespace intentcap
