#include <catch2/catch.hpp>

#include <filesystem>
#include <set>
#include <vector>

#include "intentcap/prompt.hpp"
#include "intentcap/rng.hpp"

using namespace intentcap;

namespace {

VideoAnnotation one_frame_video() {
  VideoAnnotation ann;
  ann.video_id = "dog-1";
  ann.category = "dog";
  ann.fps = 1;
  ann.frame_size = {448, 448};
  ann.frames = {{0, {112, 112, 224, 224}}};  // centered half-size box
  return ann;
}

std::set<std::size_t> changed_pixels(const Frame& a, const Frame& b) {
  std::set<std::size_t> changed;
  REQUIRE(a.pixels.size() == b.pixels.size());
  for (std::size_t i = 0; i < a.pixels.size(); i += 3)
    if (a.pixels[i] != b.pixels[i] || a.pixels[i + 1] != b.pixels[i + 1] ||
        a.pixels[i + 2] != b.pixels[i + 2])
      changed.insert(i / 3);
  return changed;
}

}  // namespace

TEST_CASE("normalize_box") {
  SECTION("midpoint and extremes") {
    auto n = normalize_box({224, 224, 448, 448}, 448, 448);
    CHECK(n == std::array<int, 4>{500, 500, 1000, 1000});
    n = normalize_box({0, 0, 448, 448}, 448, 448);
    CHECK(n == std::array<int, 4>{0, 0, 1000, 1000});
  }
  SECTION("roundtrip within one pixel") {
    const std::array<int, 4> scaled{500, 500, 750, 1000};
    std::array<double, 4> px{scaled[0] * 448.0 / 1000.0, scaled[1] * 448.0 / 1000.0,
                             scaled[2] * 448.0 / 1000.0, scaled[3] * 448.0 / 1000.0};
    auto back = normalize_box(px, 448, 448);
    for (int k = 0; k < 4; ++k) {
      const double recovered = back[k] * 448.0 / 1000.0;
      CHECK(std::fabs(recovered - px[k]) <= 1.0);
    }
  }
  SECTION("out-of-frame corners clamp with a warning") {
    bool clamped = false;
    auto n = normalize_box({-10, 5, 500, 400}, 448, 448, &clamped);
    CHECK(clamped);
    CHECK(n[0] == 0);
    CHECK(n[2] == 1000);
    clamped = true;
    normalize_box({5, 5, 100, 100}, 448, 448, &clamped);
    CHECK_FALSE(clamped);
  }
  SECTION("monotone in each coordinate") {
    Rng rng(70);
    for (int trial = 0; trial < 200; ++trial) {
      const double a = rng.uniform(0, 448), b = rng.uniform(0, 448);
      auto na = normalize_box({a, 0, 448, 448}, 448, 448);
      auto nb = normalize_box({b, 0, 448, 448}, 448, 448);
      if (a <= b) CHECK(na[0] <= nb[0]);
    }
  }
  SECTION("idempotent under clamp-then-normalize") {
    const std::array<double, 4> wild{-50, 20, 600, 500};
    auto direct = normalize_box(wild, 448, 448);
    const std::array<double, 4> pre_clamped{0, 20, 448, 448};
    CHECK(direct == normalize_box(pre_clamped, 448, 448));
  }
}

TEST_CASE("build_instruction") {
  const auto ann = one_frame_video();
  SECTION("no sampled frames leaves only the preamble") {
    const auto text = build_instruction(ann, {});
    CHECK(text.find("dog") != std::string::npos);
    CHECK(text.find("Frame") == std::string::npos);
  }
  SECTION("coordinate line for a visible frame") {
    const std::vector<std::size_t> indices{0};
    const auto text = build_instruction(ann, indices);
    CHECK(text.find("Frame 0: [250, 250, 750, 750]") != std::string::npos);
  }
  SECTION("sentinel frame emits the out-of-scene marker") {
    auto v = ann;
    v.frames[0].bbox = {0, 0, 0, 0};
    const std::vector<std::size_t> indices{0};
    const auto text = build_instruction(v, indices);
    CHECK(text.find("Frame 0: object not visible") != std::string::npos);
  }
  SECTION("byte identical across runs and exactly one line per index") {
    VideoAnnotation v = ann;
    v.frames = {{0, {10, 10, 50, 50}}, {1, {0, 0, 0, 0}}, {2, {30, 20, 60, 80}}};
    const std::vector<std::size_t> indices{0, 1, 2};
    const auto a = build_instruction(v, indices);
    const auto b = build_instruction(v, indices);
    CHECK(a == b);
    std::size_t lines = 0;
    for (char c : a) lines += c == '\n';
    CHECK(lines == indices.size());
  }
  SECTION("out-of-range index throws") {
    const std::vector<std::size_t> indices{5};
    CHECK_THROWS_AS(build_instruction(ann, indices), InputError);
  }
}

TEST_CASE("render_visual_prompt") {
  SECTION("sentinel leaves the frame untouched") {
    Frame frame = Frame::solid(16, 16, 10, 20, 30);
    Frame out = render_visual_prompt(frame, {0, 0, 0, 0});
    CHECK(out.pixels == frame.pixels);
  }
  SECTION("10x10 frame, box [2,2,6,6], margin 0, stroke 1 changes exactly 20 pixels") {
    Frame frame = Frame::solid(10, 10, 0, 0, 0);
    RenderStyle style;
    style.margin_fraction = 0.0;
    style.stroke_px = 1.0;
    Frame out = render_visual_prompt(frame, {2, 2, 6, 6}, style);
    const auto changed = changed_pixels(frame, out);
    CHECK(changed.size() == 20);
    for (std::size_t p : changed) {
      CHECK(out.pixels[3 * p] == 255);
      CHECK(out.pixels[3 * p + 1] == 0);
      CHECK(out.pixels[3 * p + 2] == 0);
    }
    // band = ring around the box: rows/cols 1..6 minus the 2..5 interior
    for (std::size_t p : changed) {
      const std::size_t x = p % 10, y = p / 10;
      CHECK(x >= 1);
      CHECK(x <= 6);
      CHECK(y >= 1);
      CHECK(y <= 6);
      CHECK((x < 2 || x > 5 || y < 2 || y > 5));
    }
  }
  SECTION("changed pixels stay within the dilated band and are pure red") {
    Rng rng(71);
    for (int trial = 0; trial < 40; ++trial) {
      const int w = static_cast<int>(rng.uniform_int(8, 40));
      const int h = static_cast<int>(rng.uniform_int(8, 40));
      Frame frame = Frame::solid(w, h, 17, 34, 51);
      const double x1 = rng.uniform(0, w - 2), y1 = rng.uniform(0, h - 2);
      const std::array<double, 4> corners{x1, y1, x1 + rng.uniform(0.5, w - x1),
                                          y1 + rng.uniform(0.5, h - y1)};
      RenderStyle style;
      style.margin_fraction = rng.uniform(0.0, 0.1);
      style.stroke_px = rng.uniform(1.0, 3.0);
      Frame out = render_visual_prompt(frame, corners, style);
      const double mx = style.margin_fraction * (corners[2] - corners[0]);
      const double my = style.margin_fraction * (corners[3] - corners[1]);
      for (std::size_t p : changed_pixels(frame, out)) {
        CHECK(out.pixels[3 * p] == 255);
        CHECK(out.pixels[3 * p + 1] == 0);
        CHECK(out.pixels[3 * p + 2] == 0);
        const double cx = static_cast<double>(p % w) + 0.5;
        const double cy = static_cast<double>(p / w) + 0.5;
        CHECK(cx > corners[0] - mx - style.stroke_px - 1e-9);
        CHECK(cx < corners[2] + mx + style.stroke_px + 1e-9);
        CHECK(cy > corners[1] - my - style.stroke_px - 1e-9);
        CHECK(cy < corners[3] + my + style.stroke_px + 1e-9);
      }
    }
  }
  SECTION("re-rendering the same box is idempotent") {
    Frame frame = Frame::solid(20, 20, 90, 90, 90);
    RenderStyle style;
    style.margin_fraction = 0.05;
    style.stroke_px = 2.0;
    Frame once = render_visual_prompt(frame, {4, 5, 14, 15}, style);
    Frame twice = render_visual_prompt(once, {4, 5, 14, 15}, style);
    CHECK(once.pixels == twice.pixels);
  }
}

TEST_CASE("build_bundle modes") {
  VideoAnnotation ann = one_frame_video();
  ann.frames.push_back({1, {0, 0, 0, 0}});
  const std::vector<std::size_t> indices{0, 1};
  const std::vector<Frame> frames(2, Frame::solid(448, 448, 50, 60, 70));

  SECTION("text mode: coordinates, no frames") {
    auto bundle = build_bundle(ann, indices, PromptMode::kText);
    CHECK(bundle.instruction.find("[250, 250, 750, 750]") != std::string::npos);
    CHECK(bundle.rendered_frames.empty());
  }
  SECTION("visual mode: no coordinate lines, rendered frames present") {
    auto bundle = build_bundle(ann, indices, PromptMode::kVisual, frames);
    CHECK(bundle.instruction.find("[") == std::string::npos);
    CHECK(bundle.instruction.find("Frame") == std::string::npos);
    REQUIRE(bundle.rendered_frames.size() == 2);
    // frame 0 has a box, frame 1 is the sentinel and stays untouched
    CHECK(bundle.rendered_frames[0].pixels != frames[0].pixels);
    CHECK(bundle.rendered_frames[1].pixels == frames[1].pixels);
  }
  SECTION("both mode matches the two single modes") {
    auto both = build_bundle(ann, indices, PromptMode::kBoth, frames);
    auto text_only = build_bundle(ann, indices, PromptMode::kText);
    auto visual_only = build_bundle(ann, indices, PromptMode::kVisual, frames);
    CHECK(both.instruction == text_only.instruction);
    REQUIRE(both.rendered_frames.size() == visual_only.rendered_frames.size());
    for (std::size_t i = 0; i < both.rendered_frames.size(); ++i)
      CHECK(both.rendered_frames[i].pixels == visual_only.rendered_frames[i].pixels);
  }
  SECTION("missing frames in a visual mode is an input error") {
    CHECK_THROWS_AS(build_bundle(ann, indices, PromptMode::kVisual), InputError);
    CHECK_THROWS_AS(build_bundle(ann, indices, PromptMode::kBoth), InputError);
  }
}

TEST_CASE("ppm round trip") {
  namespace fs = std::filesystem;
  const auto path = fs::temp_directory_path() / "intentcap_ppm_test.ppm";
  Frame frame = Frame::solid(7, 5, 1, 2, 3);
  frame.at(3, 2)[0] = 200;
  write_ppm(frame, path);
  Frame back = read_ppm(path);
  CHECK(back.width == 7);
  CHECK(back.height == 5);
  CHECK(back.pixels == frame.pixels);
  fs::remove(path);

  const auto bad = fs::temp_directory_path() / "intentcap_ppm_bad.ppm";
  {
    std::ofstream out(bad, std::ios::binary);
    out << "P5\n2 2\n255\n";
  }
  CHECK_THROWS_AS(read_ppm(bad), ParseError);
  fs::remove(bad);
  CHECK_THROWS_AS(read_ppm(fs::temp_directory_path() / "intentcap_missing.ppm"), IoError);
}
