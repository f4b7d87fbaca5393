// intentcap: command-line toolkit for intention-oriented video captioning
// experiments. Subcommands cover dataset validation and splitting, prompt
// building, the box-adapter demo harness, caption scoring, ensemble voting,
// length routing, and synthetic fixture generation.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "intentcap/box_adapter.hpp"
#include "intentcap/dataset.hpp"
#include "intentcap/ensemble.hpp"
#include "intentcap/error.hpp"
#include "intentcap/fixture.hpp"
#include "intentcap/metrics.hpp"
#include "intentcap/prompt.hpp"
#include "intentcap/rng.hpp"
#include "intentcap/tensor.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace intentcap;

namespace {

constexpr const char* kVersion = "intentcap 0.1.0";

// Temp-file-plus-rename so concurrent runs over disjoint output dirs never
// observe partial files.
void atomic_write(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out << content;
    if (!out) throw IoError("short write: " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_config(const fs::path& out_dir, const json& config) {
  atomic_write(out_dir / "run_config.json", config.dump(2) + "\n");
}

json load_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// JSONL helpers for {"video_id","caption"} records.
std::map<std::string, std::string> read_caption_jsonl(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("video_id") || !j.contains("caption"))
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": expected {\"video_id\",\"caption\"}");
    const auto video_id = j.at("video_id").get<std::string>();
    if (!out.emplace(video_id, j.at("caption").get<std::string>()).second)
      throw InputError(path.string() + ": duplicate video_id " + video_id);
  }
  return out;
}

ReferenceMap read_reference_jsonl(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  ReferenceMap out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("video_id") || !j.contains("caption"))
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": expected {\"video_id\",\"caption\"}");
    out[j.at("video_id").get<std::string>()].push_back(j.at("caption").get<std::string>());
  }
  return out;
}

std::string caption_jsonl_line(const std::string& video_id, const std::string& caption) {
  return json{{"caption", caption}, {"video_id", video_id}}.dump() + "\n";
}

LoadResult load_validated(const fs::path& root) {
  auto result = load_annotations(root);
  std::sort(result.annotations.begin(), result.annotations.end(),
            [](const auto& a, const auto& b) { return a.video_id < b.video_id; });
  return result;
}

void print_issues(const std::vector<ValidationIssue>& issues, std::size_t limit = 10) {
  for (std::size_t i = 0; i < issues.size() && i < limit; ++i) {
    const auto& issue = issues[i];
    std::cout << "  [" << issue.rule << "] " << (issue.video_id.empty() ? issue.file : issue.video_id)
              << ": " << issue.detail << "\n";
  }
  if (issues.size() > limit) std::cout << "  ... " << issues.size() - limit << " more\n";
}

int cmd_validate_dataset(const fs::path& root, std::size_t categories,
                         std::size_t videos_per_category) {
  auto result = load_validated(root);
  CorpusRules rules{categories, videos_per_category};
  auto corpus_issues = validate_corpus(result.annotations, rules);
  result.issues.insert(result.issues.end(), corpus_issues.begin(), corpus_issues.end());

  std::map<std::string, std::size_t> per_rule{
      {"parse", 0},       {"io", 0},          {"schema", 0},         {"video_id", 0},
      {"fps", 0},         {"frame_size", 0},  {"frame_index", 0},    {"bbox", 0},
      {"captions", 0},    {"duplicate_id", 0}, {"category_size", 0}, {"category_count", 0}};
  for (const auto& issue : result.issues) ++per_rule[issue.rule];

  std::cout << "videos loaded: " << result.annotations.size() << "\n";
  std::cout << "rule             violations\n";
  for (const auto& [rule, count] : per_rule)
    std::printf("%-16s %zu\n", rule.c_str(), count);
  if (result.issues.empty()) {
    std::cout << "dataset is clean\n";
    return 0;
  }
  std::cout << "violations:\n";
  print_issues(result.issues);
  return 1;
}

int cmd_split(const fs::path& root, std::uint64_t seed, const fs::path& out_dir) {
  auto result = load_validated(root);
  if (!result.issues.empty()) {
    std::cout << "dataset has validation issues; fix them before splitting\n";
    print_issues(result.issues);
    return 1;
  }
  const auto split = make_split(result.annotations, seed);
  fs::create_directories(out_dir);
  atomic_write(out_dir / "split.json", split_to_json(split).dump(2) + "\n");
  write_config(out_dir, json{{"command", "split"},
                             {"dataset_root", root.string()},
                             {"seed", seed},
                             {"out", out_dir.string()}});
  std::cout << "train " << split.train.size() << ", public_test " << split.public_test.size()
            << ", private_test " << split.private_test.size() << " -> "
            << (out_dir / "split.json").string() << "\n";
  return 0;
}

struct PromptArgs {
  std::string root;
  std::string mode = "text";
  std::string sampler = "infer";
  std::uint64_t seed = 0;
  std::string frames_dir;  // defaults to <root>/frames
  std::string out;
};

int cmd_build_prompts(const PromptArgs& args) {
  auto result = load_validated(args.root);
  if (!result.issues.empty()) {
    std::cout << "dataset has validation issues; fix them before building prompts\n";
    print_issues(result.issues);
    return 1;
  }
  const PromptMode mode = prompt_mode_from_string(args.mode);
  if (args.sampler != "train" && args.sampler != "infer")
    throw ConfigError("unknown sampler \"" + args.sampler + "\" (expected train|infer)");
  const fs::path out_dir = args.out;
  const fs::path frames_dir =
      args.frames_dir.empty() ? fs::path(args.root) / "frames" : fs::path(args.frames_dir);
  fs::create_directories(out_dir);

  Rng root_rng(args.seed);
  std::string jsonl;
  json indices_doc = json::object();
  const InstructionTemplate tmpl = InstructionTemplate::standard();
  for (const auto& ann : result.annotations) {
    std::vector<std::size_t> indices;
    if (args.sampler == "train") {
      Rng stream = root_rng.sub("sampler/" + ann.video_id);
      indices = sample_frames_train(ann.frame_count(), stream);
    } else {
      indices = sample_frames_infer(ann.frame_count());
    }

    std::vector<Frame> frames;
    if (mode != PromptMode::kText) {
      for (std::size_t idx : indices) {
        const auto frame_path =
            frames_dir / ann.video_id /
            ("frame_" + std::to_string(ann.frames[idx].frame_index) + ".ppm");
        if (!fs::exists(frame_path))
          throw InputError("missing frame image for visual mode: " + frame_path.string());
        frames.push_back(read_ppm(frame_path));
      }
    }
    const PromptBundle bundle = build_bundle(ann, indices, mode, frames, tmpl);
    jsonl += json{{"instruction", bundle.instruction},
                  {"mode", to_string(mode)},
                  {"video_id", ann.video_id}}
                 .dump() +
             "\n";
    indices_doc[ann.video_id] = indices;
    for (std::size_t p = 0; p < bundle.rendered_frames.size(); ++p) {
      const auto dir = out_dir / ann.video_id;
      fs::create_directories(dir);
      const auto name = "frame_" + std::to_string(ann.frames[indices[p]].frame_index) + ".ppm";
      const fs::path tmp = dir / (name + ".tmp");
      write_ppm(bundle.rendered_frames[p], tmp);
      fs::rename(tmp, dir / name);
    }
  }
  atomic_write(out_dir / "prompts.jsonl", jsonl);
  atomic_write(out_dir / "indices.json", indices_doc.dump(2) + "\n");
  write_config(out_dir, json{{"command", "build-prompts"},
                             {"dataset_root", args.root},
                             {"mode", args.mode},
                             {"sampler", args.sampler},
                             {"seed", args.seed},
                             {"frames_dir", args.frames_dir},
                             {"out", args.out}});
  std::cout << result.annotations.size() << " videos -> " << (out_dir / "prompts.jsonl").string()
            << "\n";
  return 0;
}

struct AdapterDemoArgs {
  AdapterStackConfig stack;
  std::size_t frames = 2;
  std::size_t spatial = 4;
  std::uint64_t seed = 7;
  std::string config_file;
  std::string out;
};

int cmd_adapter_demo(AdapterDemoArgs args) {
  if (!args.config_file.empty()) from_json(load_json_file(args.config_file), args.stack);
  args.stack.validate();
  Rng rng(args.seed);

  AdapterVitStack stack(args.stack, args.seed);
  Tensor input = Tensor::random_uniform(
      {args.frames, args.stack.adapter.d, args.spatial, args.spatial}, rng);
  std::vector<NormalizedBox> boxes;
  for (std::size_t i = 0; i < args.frames; ++i)
    boxes.push_back({rng.uniform(0.0, 0.4), rng.uniform(0.0, 0.4), rng.uniform(0.5, 1.0),
                     rng.uniform(0.5, 1.0)});

  const auto t0 = std::chrono::steady_clock::now();
  Tensor with_adapters = stack.forward(input, boxes);
  const auto t1 = std::chrono::steady_clock::now();
  Tensor plain = stack.forward_plain(input);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < plain.size(); ++i)
    max_diff = std::max(max_diff, std::fabs(with_adapters.values()[i] - plain.values()[i]));
  const bool identity_ok = max_diff == 0.0;
  std::printf("identity_at_init  %s  max_abs_diff=%g\n", identity_ok ? "PASS" : "FAIL", max_diff);

  // open every branch before checking gradients
  auto params = stack.trainable_params();
  Rng perturb = rng.sub("perturb");
  for (auto& p : params) {
    auto data = p.mutable_values();
    for (auto& v : data) v += perturb.uniform(-0.1, 0.1);
  }
  auto f = [&] { return mean(stack.forward(input, boxes)); };
  const auto report = grad_check(f, params, 1e-3, 4);
  const bool grad_ok = report.ok(1e-4);
  std::printf("grad_check        %s  max_rel_err=%.3e tol=1e-4 entries=%zu\n",
              grad_ok ? "PASS" : "FAIL", report.max_rel_err, report.entries_checked);

  std::printf("trainable_params  %zu  (adapters=%zu of %zu layers)\n",
              stack.trainable_param_count(), args.stack.adapter_layers, args.stack.layers);
  const double forward_ms =
      std::chrono::duration_cast<std::chrono::microseconds>(t1 - t0).count() / 1000.0;
  std::printf("forward_time_ms   %.2f\n", forward_ms);

  if (!args.out.empty()) {
    json config;
    to_json(config, args.stack);
    config["command"] = "adapter-demo";
    config["seed"] = args.seed;
    config["frames"] = args.frames;
    config["spatial"] = args.spatial;
    fs::create_directories(args.out);
    write_config(args.out, config);
  }
  if (!identity_ok) {
    std::cout << "FAILED: identity_at_init\n";
    return 1;
  }
  if (!grad_ok) {
    std::cout << "FAILED: grad_check\n";
    return 1;
  }
  return 0;
}

int cmd_score(const fs::path& candidates_path, const fs::path& references_path,
              const fs::path& out_dir) {
  const auto candidates = read_caption_jsonl(candidates_path);
  const auto references = read_reference_jsonl(references_path);
  const auto report = score_all(candidates, references);

  std::printf("BLEU@4   %.2f\n", 100.0 * report.bleu4);
  std::printf("METEOR   %.2f\n", 100.0 * report.meteor);
  std::printf("CIDEr    %.2f\n", 100.0 * report.cider);
  std::printf("ROUGE-L  %.2f\n", 100.0 * report.rouge_l);
  for (const auto& warning : report.warnings) std::cout << "warning: " << warning << "\n";

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    atomic_write(out_dir / "report.json", report_to_json(report).dump(2) + "\n");
    write_config(out_dir, json{{"command", "score"},
                               {"candidates", candidates_path.string()},
                               {"references", references_path.string()},
                               {"out", out_dir.string()}});
  }
  if (!report.missing_candidates.empty()) {
    std::cout << "missing candidates for " << report.missing_candidates.size() << " videos:";
    for (const auto& video_id : report.missing_candidates) std::cout << " " << video_id;
    std::cout << "\n";
    return 1;
  }
  return 0;
}

int cmd_vote(const std::vector<std::string>& inputs, const SimilarityConfig& cfg,
             const fs::path& out_dir) {
  cfg.validate();
  std::vector<ModelCaptions> models;
  for (const auto& input : inputs) {
    const fs::path path = input;
    std::string model_id = path.stem().string();
    for (const auto& m : models)
      if (m.model_id == model_id) model_id += "_" + std::to_string(models.size());
    models.push_back({model_id, read_caption_jsonl(path)});
  }
  const auto outcome = vote_corpus(models, cfg);

  std::string jsonl;
  json audit = json::object();
  for (const auto& [video_id, caption] : outcome.captions) {
    jsonl += caption_jsonl_line(video_id, caption);
    const auto& pool = outcome.pools.at(video_id);
    const auto& a = outcome.audits.at(video_id);
    json pool_json = json::array();
    for (const auto& entry : pool.entries)
      pool_json.push_back({{"model_id", entry.model_id}, {"caption", entry.caption}});
    audit[video_id] = {{"pool", pool_json},
                       {"matrix", a.matrix},
                       {"averages", a.averages},
                       {"winner",
                        {{"model_id", outcome.winner_models.at(video_id)}, {"caption", caption}}}};
  }
  fs::create_directories(out_dir);
  atomic_write(out_dir / "fused.jsonl", jsonl);
  atomic_write(out_dir / "audit.json", audit.dump(2) + "\n");
  write_config(out_dir, json{{"command", "vote"},
                             {"inputs", inputs},
                             {"char_n", cfg.char_n},
                             {"w_char", cfg.w_char},
                             {"w_token", cfg.w_token},
                             {"out", out_dir.string()}});
  std::cout << outcome.captions.size() << " videos fused from " << models.size() << " models -> "
            << (out_dir / "fused.jsonl").string() << "\n";
  return 0;
}

int cmd_route(const fs::path& root, std::size_t threshold, const fs::path& out_dir) {
  auto result = load_validated(root);
  if (!result.issues.empty()) {
    std::cout << "dataset has validation issues; fix them before routing\n";
    print_issues(result.issues);
    return 1;
  }
  json manifest{{"short", json::array()}, {"long", json::array()}};
  for (const auto& ann : result.annotations) {
    const char* key =
        route_by_length(ann.frame_count(), threshold) == LengthRoute::kShort ? "short" : "long";
    manifest[key].push_back(ann.video_id);
  }
  fs::create_directories(out_dir);
  atomic_write(out_dir / "route.json", manifest.dump(2) + "\n");
  write_config(out_dir, json{{"command", "route"},
                             {"dataset_root", root.string()},
                             {"threshold", threshold},
                             {"out", out_dir.string()}});
  std::cout << manifest["short"].size() << " short, " << manifest["long"].size() << " long -> "
            << (out_dir / "route.json").string() << "\n";
  return 0;
}

int cmd_gen_fixture(const fs::path& out, const FixtureOptions& options) {
  generate_fixture(out, options);
  std::cout << "wrote " << options.categories * options.videos_per_category
            << " annotation files under " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toolkit for intention-oriented controllable video captioning experiments"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  // validate-dataset
  std::string vd_root;
  std::size_t vd_categories = 70, vd_videos = 20;
  auto* validate = app.add_subcommand("validate-dataset", "check dataset conventions");
  validate->add_option("--root", vd_root, "directory of per-video JSON annotations")->required();
  validate->add_option("--categories", vd_categories, "expected category count");
  validate->add_option("--videos-per-category", vd_videos, "expected videos per category");

  // split
  std::string sp_root, sp_out = "out";
  std::uint64_t sp_seed = 0;
  auto* split_cmd = app.add_subcommand("split", "write the 14/3/3 split manifest");
  split_cmd->add_option("--root", sp_root, "dataset root")->required();
  split_cmd->add_option("--seed", sp_seed, "0 keeps suffix order, otherwise shuffles");
  split_cmd->add_option("--out", sp_out, "output directory");

  // build-prompts
  PromptArgs prompt_args;
  std::string prompt_config;
  auto* prompts = app.add_subcommand("build-prompts", "emit instruction JSONL and visual prompts");
  auto* opt_root = prompts->add_option("--root", prompt_args.root, "dataset root");
  auto* opt_mode = prompts->add_option("--mode", prompt_args.mode, "text|visual|both");
  auto* opt_sampler = prompts->add_option("--sampler", prompt_args.sampler, "train|infer");
  auto* opt_seed = prompts->add_option("--seed", prompt_args.seed, "sampling seed");
  auto* opt_frames = prompts->add_option("--frames-dir", prompt_args.frames_dir,
                                         "frame images (default <root>/frames)");
  auto* opt_out = prompts->add_option("--out", prompt_args.out, "output directory");
  prompts->add_option("--config", prompt_config, "run_config.json from a previous run");

  // adapter-demo
  AdapterDemoArgs demo;
  demo.stack.adapter.d = 8;
  demo.stack.adapter.heads = 2;
  demo.stack.adapter.roi_h = 2;
  demo.stack.adapter.roi_w = 2;
  demo.stack.layers = 6;
  demo.stack.adapter_layers = 5;
  auto* adapter_demo =
      app.add_subcommand("adapter-demo", "box-adapter invariants and gradient check");
  adapter_demo->add_option("--d", demo.stack.adapter.d, "channel dim");
  adapter_demo->add_option("--heads", demo.stack.adapter.heads, "attention heads");
  adapter_demo->add_option("--layers", demo.stack.layers, "synthetic ViT depth");
  adapter_demo->add_option("--adapter-layers", demo.stack.adapter_layers,
                           "adapters in the last k layers");
  adapter_demo->add_option("--roi-h", demo.stack.adapter.roi_h, "RoI output height");
  adapter_demo->add_option("--roi-w", demo.stack.adapter.roi_w, "RoI output width");
  adapter_demo->add_option("--frames", demo.frames, "frames in the demo input");
  adapter_demo->add_option("--spatial", demo.spatial, "h = w of the feature maps");
  adapter_demo->add_option("--seed", demo.seed, "weight/input seed");
  adapter_demo->add_flag("--ffn-standard-init", demo.stack.adapter.ffn_standard_init,
                         "standard FFN output init; only the zero conv stays closed");
  adapter_demo->add_option("--config", demo.config_file, "stack config JSON");
  adapter_demo->add_option("--out", demo.out, "optional output directory for the config echo");

  // score
  std::string sc_candidates, sc_references, sc_out;
  auto* score_cmd = app.add_subcommand("score", "BLEU@4, METEOR, CIDEr, ROUGE-L");
  score_cmd->add_option("--candidates", sc_candidates, "candidate JSONL")->required();
  score_cmd->add_option("--references", sc_references, "reference JSONL (repeats per video)")
      ->required();
  score_cmd->add_option("--out", sc_out, "output directory for report.json");

  // vote
  std::vector<std::string> vo_inputs;
  SimilarityConfig vo_cfg;
  std::string vo_out = "out";
  auto* vote_cmd = app.add_subcommand("vote", "consensus-vote captions from several models");
  vote_cmd->add_option("--inputs", vo_inputs, "caption JSONL files, one per model")
      ->required()
      ->expected(-1);
  vote_cmd->add_option("--char-n", vo_cfg.char_n, "character n-gram order");
  vote_cmd->add_option("--w-char", vo_cfg.w_char, "character-cosine weight");
  vote_cmd->add_option("--w-token", vo_cfg.w_token, "token-F1 weight");
  vote_cmd->add_option("--out", vo_out, "output directory");

  // route
  std::string rt_root, rt_out = "out";
  std::size_t rt_threshold = 74;
  auto* route_cmd = app.add_subcommand("route", "split video ids by frame-count threshold");
  route_cmd->add_option("--root", rt_root, "dataset root")->required();
  route_cmd->add_option("--threshold", rt_threshold, "frames below this route short");
  route_cmd->add_option("--out", rt_out, "output directory");

  // gen-fixture
  FixtureOptions fixture;
  std::string gf_out;
  std::vector<int> gf_frame_size;
  auto* gen = app.add_subcommand("gen-fixture", "write a synthetic annotation corpus");
  gen->add_option("--out", gf_out, "target directory")->required();
  gen->add_option("--categories", fixture.categories, "category count");
  gen->add_option("--videos-per-category", fixture.videos_per_category, "videos per category");
  gen->add_option("--seed", fixture.seed, "generation seed");
  gen->add_option("--frame-size", gf_frame_size, "frame width height")->expected(2);
  gen->add_flag("--with-frames", fixture.with_frames, "also write PPM frames");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*validate) return cmd_validate_dataset(vd_root, vd_categories, vd_videos);
    if (*split_cmd) return cmd_split(sp_root, sp_seed, sp_out);
    if (*prompts) {
      if (!prompt_config.empty()) {
        const json j = load_json_file(prompt_config);
        if (!*opt_root) prompt_args.root = j.value("dataset_root", prompt_args.root);
        if (!*opt_mode) prompt_args.mode = j.value("mode", prompt_args.mode);
        if (!*opt_sampler) prompt_args.sampler = j.value("sampler", prompt_args.sampler);
        if (!*opt_seed) prompt_args.seed = j.value("seed", prompt_args.seed);
        if (!*opt_frames) prompt_args.frames_dir = j.value("frames_dir", prompt_args.frames_dir);
        if (!*opt_out) prompt_args.out = j.value("out", prompt_args.out);
      }
      if (prompt_args.root.empty()) throw ConfigError("build-prompts: --root (or --config) required");
      if (prompt_args.out.empty()) prompt_args.out = "out";
      return cmd_build_prompts(prompt_args);
    }
    if (*adapter_demo) return cmd_adapter_demo(demo);
    if (*score_cmd) return cmd_score(sc_candidates, sc_references, sc_out);
    if (*vote_cmd) return cmd_vote(vo_inputs, vo_cfg, vo_out);
    if (*route_cmd) return cmd_route(rt_root, rt_threshold, rt_out);
    if (*gen) {
      if (gf_frame_size.size() == 2) fixture.frame_size = {gf_frame_size[0], gf_frame_size[1]};
      return cmd_gen_fixture(gf_out, fixture);
    }
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
