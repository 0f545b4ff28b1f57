#pragma once

// command implementations behind the CLI: synthesize paired data, classify
// clean frames, restore with sliding windows, train, evaluate, and emit
// temporal profiles. Everything is driven by one PipelineConfig and the seed
// in its train block; reruns with the same inputs write identical bytes

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tape/degradation.hpp"
#include "tape/evaluation.hpp"
#include "tape/frame_analysis.hpp"
#include "tape/media_io.hpp"
#include "tape/restoration_net.hpp"
#include "tape/training.hpp"

namespace tape {

// --- configuration ----------------------------------------------------------------------

struct PipelinePaths {
  std::string source_dir;   // clean source videos for synthesis
  std::string dataset_dir;  // synthesized <video>/{input,gt,recipe.json} tree
  std::string checkpoint;   // model checkpoint
  std::string output_dir;   // restored frames, reports, logs
};

inline void to_json(nlohmann::json& j, const PipelinePaths& p) {
  j = {{"source_dir", p.source_dir},
       {"dataset_dir", p.dataset_dir},
       {"checkpoint", p.checkpoint},
       {"output_dir", p.output_dir}};
}

inline void from_json(const nlohmann::json& j, PipelinePaths& p) {
  p.source_dir = j.value("source_dir", "");
  p.dataset_dir = j.value("dataset_dir", "");
  p.checkpoint = j.value("checkpoint", "");
  p.output_dir = j.value("output_dir", "");
}

inline constexpr int kPipelineConfigVersion = 1;

struct PipelineConfig {
  PipelinePaths paths;
  NetConfig net;
  TrainConfig train;
  LossConfig loss;
  DegradationConfig degradation;
  std::string prompt_file;                   // empty = built-in prompt list
  std::string embedding_provider = "toy";    // image/text scorer backend
  std::string perceptual_provider = "toy";   // identity | toy
  int train_steps = 2000;
  int score_bins = 256;
  int min_clean_pool = 5;

  void validate() const {
    net.validate();
    train.validate();
    loss.validate();
    degradation.validate();
    if (train_steps < 1) throw std::invalid_argument("PipelineConfig: train_steps must be >= 1");
    if (score_bins < 2 || min_clean_pool < 1)
      throw std::invalid_argument("PipelineConfig: invalid classification knobs");
  }
};

inline void to_json(nlohmann::json& j, const PipelineConfig& c) {
  j = {{"version", kPipelineConfigVersion},
       {"paths", c.paths},
       {"net", c.net},
       {"train", c.train},
       {"loss", c.loss},
       {"degradation", c.degradation},
       {"prompt_file", c.prompt_file},
       {"embedding_provider", c.embedding_provider},
       {"perceptual_provider", c.perceptual_provider},
       {"train_steps", c.train_steps},
       {"score_bins", c.score_bins},
       {"min_clean_pool", c.min_clean_pool}};
}

inline void from_json(const nlohmann::json& j, PipelineConfig& c) {
  c = PipelineConfig{};
  if (j.value("version", kPipelineConfigVersion) != kPipelineConfigVersion)
    throw std::runtime_error("PipelineConfig: unsupported config version");
  if (j.contains("paths")) j.at("paths").get_to(c.paths);
  if (j.contains("net")) j.at("net").get_to(c.net);
  if (j.contains("train")) j.at("train").get_to(c.train);
  if (j.contains("loss")) j.at("loss").get_to(c.loss);
  if (j.contains("degradation")) j.at("degradation").get_to(c.degradation);
  c.prompt_file = j.value("prompt_file", std::string());
  c.embedding_provider = j.value("embedding_provider", std::string("toy"));
  c.perceptual_provider = j.value("perceptual_provider", std::string("toy"));
  c.train_steps = j.value("train_steps", 2000);
  c.score_bins = j.value("score_bins", 256);
  c.min_clean_pool = j.value("min_clean_pool", 5);
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("config: " + path.string() + ": " + e.what());
  }
  PipelineConfig cfg = j.get<PipelineConfig>();
  cfg.validate();
  return cfg;
}

// --- shared plumbing --------------------------------------------------------------------

namespace detail {

template <typename F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw std::runtime_error(name + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// videos are subdirectories of the root; a root holding frames directly acts
// as one video named after itself
inline std::vector<std::string> video_names_or_self(const std::filesystem::path& root,
                                                    bool* flat) {
  std::vector<std::string> names = video_dir_names(root);
  *flat = names.empty();
  if (*flat) names.push_back(root.filename().string());
  return names;
}

}  // namespace detail

template <typename T>
Tensor<T> frames_to_tensor(const FrameSeq& seq, size_t start, size_t count) {
  if (start + count > seq.size())
    throw std::invalid_argument("frames_to_tensor: window exceeds clip length");
  const int H = seq.height(), W = seq.width();
  std::vector<T> data;
  data.reserve(count * static_cast<size_t>(H) * static_cast<size_t>(W) * 3);
  for (size_t f = start; f < start + count; ++f)
    for (float v : seq.frames[f].pixels()) data.push_back(static_cast<T>(v));
  return Tensor<T>::from_data(
      {static_cast<int64_t>(count), static_cast<int64_t>(H), static_cast<int64_t>(W), 3},
      std::move(data));
}

template <typename T>
Tensor<T> frames_to_tensor(const FrameSeq& seq) {
  return frames_to_tensor<T>(seq, 0, seq.size());
}

template <typename T>
Tensor<T> gather_frames_tensor(const FrameSeq& seq, const std::vector<int>& indices) {
  const int H = seq.height(), W = seq.width();
  std::vector<T> data;
  data.reserve(indices.size() * static_cast<size_t>(H) * static_cast<size_t>(W) * 3);
  for (int idx : indices) {
    if (idx < 0 || static_cast<size_t>(idx) >= seq.size())
      throw std::invalid_argument("gather_frames_tensor: index out of range");
    for (float v : seq.frames[static_cast<size_t>(idx)].pixels())
      data.push_back(static_cast<T>(v));
  }
  return Tensor<T>::from_data(
      {static_cast<int64_t>(indices.size()), static_cast<int64_t>(H), static_cast<int64_t>(W), 3},
      std::move(data));
}

// (N,H,W,3) tensor back to frames, clamped to the storable [0,1] range
template <typename T>
std::vector<Frame> tensor_to_frames(const Tensor<T>& t) {
  if (t.shape().size() != 4 || t.dim(3) != 3)
    throw std::invalid_argument("tensor_to_frames: expected (N,H,W,3)");
  const int N = static_cast<int>(t.dim(0)), H = static_cast<int>(t.dim(1)),
            W = static_cast<int>(t.dim(2));
  const auto& v = t.value();
  std::vector<Frame> frames;
  frames.reserve(static_cast<size_t>(N));
  size_t i = 0;
  for (int f = 0; f < N; ++f) {
    Frame frame(H, W);
    for (auto& p : frame.pixels())
      p = std::clamp(static_cast<float>(v[i++]), 0.0f, 1.0f);
    frames.push_back(std::move(frame));
  }
  return frames;
}

inline std::unique_ptr<EmbeddingProvider> make_embedding_provider(const PipelineConfig& cfg) {
  if (cfg.embedding_provider == "toy")
    return std::make_unique<DeterministicToyProvider>(cfg.train.seed);
  throw std::invalid_argument("embedding provider '" + cfg.embedding_provider +
                              "' is not bundled; available: toy");
}

// score every frame against the artifact prompts and build the clean set,
// keeping image embeddings in memory for reference selection
inline CleanSet classify_clip(const PipelineConfig& cfg, const FrameSeq& clip) {
  const std::unique_ptr<EmbeddingProvider> provider = make_embedding_provider(cfg);
  const std::vector<std::string> prompts =
      cfg.prompt_file.empty() ? default_prompts() : load_prompts(cfg.prompt_file);
  const PromptEnsemble ensemble = ensemble_prompts(*provider, prompts);
  auto [scores, embeddings] = score_frames(*provider, clip, ensemble);
  return build_clean_set(std::move(scores), std::move(embeddings), prompts, cfg.score_bins,
                         cfg.min_clean_pool);
}

// --- synth ------------------------------------------------------------------------------

struct SynthResult {
  int videos = 0;
  int frames = 0;
  bool dry_run = false;
};

// degrades every source video under a per-video seed derived from the master
// seed and the video name; recipes always land next to the frames
inline SynthResult cmd_synth(const PipelineConfig& cfg, bool dry_run = false,
                             std::ostream* log = nullptr) {
  const std::filesystem::path src = cfg.paths.source_dir;
  const std::filesystem::path out = cfg.paths.dataset_dir;
  if (out.empty()) throw std::runtime_error("synth: dataset_dir not set");

  bool flat = false;
  const std::vector<std::string> names = detail::stage(
      "synth: scan-source", [&] { return detail::video_names_or_self(src, &flat); });

  SynthResult result;
  result.dry_run = dry_run;
  nlohmann::json manifest = {{"version", 1},
                             {"seed", cfg.train.seed},
                             {"dry_run", dry_run},
                             {"videos", nlohmann::json::array()}};
  for (const std::string& name : names) {
    const std::filesystem::path video_src = flat ? src : src / name;
    const FrameSeq clip =
        detail::stage("synth: load " + name, [&] { return load_frame_dir(video_src); });

    DegradationConfig dc = cfg.degradation;
    dc.frame_height = clip.height();
    dc.frame_width = clip.width();
    const uint64_t video_seed = KeyedRng(cfg.train.seed, detail::fnv1a(name)).next_u64();
    const DegradationRecipe recipe = make_recipe(video_seed, dc, clip.size());

    const std::filesystem::path video_out = out / name;
    detail::stage("synth: write " + name, [&] {
      detail::write_json(video_out / "recipe.json", recipe);
      if (!dry_run) {
        save_frame_dir(degrade_clip(clip, recipe), video_out / "input");
        save_frame_dir(clip, video_out / "gt");
      }
      return 0;
    });
    manifest["videos"].push_back({{"name", name},
                                  {"frames", clip.size()},
                                  {"height", clip.height()},
                                  {"width", clip.width()}});
    ++result.videos;
    result.frames += static_cast<int>(clip.size());
    if (log) (*log) << "synth: " << name << ": " << clip.size() << " frames\n";
  }
  detail::stage("synth: write manifest", [&] {
    detail::write_json(out / "manifest.json", manifest);
    return 0;
  });
  return result;
}

// --- classify ---------------------------------------------------------------------------

inline CleanSet cmd_classify(const PipelineConfig& cfg, const std::filesystem::path& clip_path,
                             const std::filesystem::path& out_json) {
  const FrameSeq clip =
      detail::stage("classify: load-clip", [&] { return load_frame_dir(clip_path); });
  const CleanSet set =
      detail::stage("classify: score", [&] { return classify_clip(cfg, clip); });
  detail::stage("classify: write-report", [&] {
    nlohmann::json j = set;
    j["clip"] = clip_path.string();
    detail::write_json(out_json, j);
    return 0;
  });
  return set;
}

// --- restore ----------------------------------------------------------------------------

// non-overlapping stride-T window starts with a right-aligned tail, e.g.
// 12 frames at T=5 give [0..4], [5..9], [7..11]
inline std::vector<size_t> restore_window_starts(size_t n_frames, int t_frames) {
  if (t_frames < 1) throw std::invalid_argument("restore_window_starts: T must be >= 1");
  const size_t T = static_cast<size_t>(t_frames);
  if (n_frames < T) throw std::invalid_argument("restore_window_starts: clip shorter than T");
  std::vector<size_t> starts;
  for (size_t s = 0; s + T <= n_frames; s += T) starts.push_back(s);
  if (starts.back() + T < n_frames) starts.push_back(n_frames - T);
  return starts;
}

struct RestoreResult {
  int frames = 0;
  int windows = 0;
  bool padded = false;  // clip was shorter than T and repeated its last frame
};

inline RestoreResult cmd_restore(const PipelineConfig& cfg,
                                 const std::filesystem::path& clip_path,
                                 const std::filesystem::path& checkpoint_path,
                                 const std::filesystem::path& out_dir,
                                 std::ostream* log = nullptr) {
  FrameSeq clip =
      detail::stage("restore: load-clip", [&] { return load_frame_dir(clip_path); });
  RestorationModel<float> model = detail::stage(
      "restore: load-checkpoint", [&] { return load_model<float>(checkpoint_path.string()); });
  for (const auto& name : model.trainable().names())
    model.trainable().at(name).set_requires_grad(false);

  const int T = model.config().t_frames;
  const int D = model.config().d_refs;
  const size_t n_orig = clip.size();

  RestoreResult result;
  if (clip.size() < static_cast<size_t>(T)) {
    result.padded = true;
    std::cerr << "restore: warning: clip has " << n_orig << " frames, padding to window size "
              << T << " by repeating the last frame\n";
    while (clip.size() < static_cast<size_t>(T)) clip.frames.push_back(clip.frames.back());
  }

  const CleanSet clean =
      detail::stage("restore: classify", [&] { return classify_clip(cfg, clip); });

  const std::vector<size_t> starts = restore_window_starts(clip.size(), T);
  std::vector<Frame> restored(clip.size());
  for (size_t s : starts) {
    const int center = static_cast<int>(s) + T / 2;
    const ReferenceSet refs = detail::stage("restore: select-references", [&] {
      return select_references(clean, clean.image_embeddings[static_cast<size_t>(center)], D,
                               center);
    });
    const Tensor<float> input = frames_to_tensor<float>(clip, s, static_cast<size_t>(T));
    const Tensor<float> ref_frames = gather_frames_tensor<float>(clip, refs.indices);
    const Tensor<float> out = detail::stage(
        "restore: forward", [&] { return model.restore_window(input, ref_frames); });
    std::vector<Frame> window = tensor_to_frames(out);
    for (int f = 0; f < T; ++f) restored[s + static_cast<size_t>(f)] = std::move(window[f]);
    ++result.windows;
    if (log) (*log) << "restore: window at " << s << " done\n";
  }

  restored.resize(n_orig);
  FrameSeq out_seq;
  out_seq.frames = std::move(restored);
  out_seq.fps = clip.fps;
  detail::stage("restore: write-frames", [&] {
    save_frame_dir(out_seq, out_dir);
    return 0;
  });
  result.frames = static_cast<int>(n_orig);
  return result;
}

// --- train ------------------------------------------------------------------------------

// load the synthesized tree and precompute per-center reference indices from
// the clean-set classification of each degraded clip
inline TrainDataset<float> build_train_dataset(const PipelineConfig& cfg,
                                               const std::filesystem::path& dataset_dir,
                                               std::vector<std::string>* names_out = nullptr) {
  const std::vector<std::string> names = detail::video_dir_names(dataset_dir);
  if (names.empty()) throw std::runtime_error("no video directories under " +
                                              dataset_dir.string());
  TrainDataset<float> ds;
  for (const std::string& name : names) {
    const std::filesystem::path dir = dataset_dir / name;
    if (!std::filesystem::is_directory(dir / "input")) continue;  // manifest or stray dir
    const FrameSeq input = load_frame_dir(dir / "input");
    const FrameSeq gt = load_frame_dir(dir / "gt");
    if (input.size() != gt.size() || input.height() != gt.height() ||
        input.width() != gt.width())
      throw std::runtime_error("video " + name + " input/gt frames do not match");

    const CleanSet clean = classify_clip(cfg, input);
    TrainClip<float> clip;
    clip.degraded = frames_to_tensor<float>(input);
    clip.gt = frames_to_tensor<float>(gt);
    clip.refs_by_center.resize(input.size());
    for (size_t i = 0; i < input.size(); ++i)
      clip.refs_by_center[i] =
          select_references(clean, clean.image_embeddings[i], cfg.net.d_refs,
                            static_cast<int>(i))
              .indices;
    ds.clips.push_back(std::move(clip));
    if (names_out) names_out->push_back(name);
  }
  if (ds.clips.empty())
    throw std::runtime_error("no input/gt video pairs under " + dataset_dir.string());
  return ds;
}

struct TrainResult {
  int64_t steps_run = 0;
  int64_t final_step = 0;
  double first_loss = 0;
  double final_loss = 0;
  std::string checkpoint;
};

inline TrainResult cmd_train(const PipelineConfig& cfg,
                             const std::filesystem::path& dataset_dir,
                             const std::filesystem::path& out_checkpoint,
                             const std::filesystem::path& log_path = {},
                             const std::filesystem::path& resume = {},
                             std::ostream* log = nullptr) {
  const TrainDataset<float> ds = detail::stage(
      "train: load-dataset", [&] { return build_train_dataset(cfg, dataset_dir); });

  int64_t start_step = 0;
  std::optional<TrainState<float>> state;
  if (!resume.empty()) {
    state = detail::stage("train: load-resume-checkpoint", [&] {
      return load_train_checkpoint<float>(resume.string(), adamw_config(cfg.train));
    });
    start_step = state->step;
  } else {
    state.emplace(TrainState<float>{RestorationModel<float>(cfg.net, cfg.train.seed),
                                    AdamW<float>(adamw_config(cfg.train)), 0});
  }
  const std::unique_ptr<PerceptualProvider<float>> provider =
      make_perceptual_provider<float>(cfg.perceptual_provider);

  std::ofstream jsonl;
  if (!log_path.empty()) {
    if (log_path.has_parent_path()) std::filesystem::create_directories(log_path.parent_path());
    jsonl.open(log_path, start_step > 0 ? std::ios::app : std::ios::trunc);
    if (!jsonl) throw std::runtime_error("train: cannot write log " + log_path.string());
  }

  const int64_t end_step = std::max<int64_t>(start_step, cfg.train_steps);
  const std::vector<StepLog> logs = detail::stage("train: loop", [&] {
    return train_loop(state->model, state->opt, ds, cfg.train, cfg.loss, provider.get(),
                      start_step, end_step, jsonl.is_open() ? &jsonl : nullptr);
  });

  detail::stage("train: save-checkpoint", [&] {
    if (out_checkpoint.has_parent_path())
      std::filesystem::create_directories(out_checkpoint.parent_path());
    save_train_checkpoint(out_checkpoint.string(), state->model, state->opt, end_step);
    return 0;
  });

  TrainResult result;
  result.steps_run = static_cast<int64_t>(logs.size());
  result.final_step = end_step;
  result.first_loss = logs.empty() ? 0.0 : logs.front().loss_total;
  result.final_loss = logs.empty() ? 0.0 : logs.back().loss_total;
  result.checkpoint = out_checkpoint.string();
  if (log)
    (*log) << "train: " << result.steps_run << " steps, loss " << result.first_loss << " -> "
           << result.final_loss << "\n";
  return result;
}

// --- evaluate ---------------------------------------------------------------------------

inline MetricReport cmd_evaluate(const std::filesystem::path& restored_root,
                                 const std::filesystem::path& gt_root,
                                 const std::filesystem::path& out_json) {
  const MetricReport report = detail::stage(
      "evaluate: metrics", [&] { return evaluate_testset(restored_root, gt_root); });
  detail::stage("evaluate: write-report", [&] {
    detail::write_json(out_json, report);
    return 0;
  });
  return report;
}

// --- profile ----------------------------------------------------------------------------

// writes <prefix>.png (rows = time) and <prefix>.json with the patch, the
// per-row deviation from the median row, and the flagged rows
inline TemporalProfile cmd_profile(const std::filesystem::path& clip_path, PatchBounds patch,
                                   int column, const std::filesystem::path& out_prefix,
                                   double flag_threshold = 0.05) {
  const FrameSeq clip =
      detail::stage("profile: load-clip", [&] { return load_frame_dir(clip_path); });
  if (patch.height == 0 && patch.width == 0)
    patch = PatchBounds{0, 0, clip.height(), clip.width()};
  if (column < 0) column = patch.width / 2;

  const TemporalProfile tp = detail::stage(
      "profile: extract", [&] { return temporal_profile(clip, patch, column); });
  const std::vector<double> deviation = profile_row_deviation(tp.profile);
  std::vector<int> flagged;
  for (size_t t = 0; t < deviation.size(); ++t)
    if (deviation[t] > flag_threshold) flagged.push_back(static_cast<int>(t));

  detail::stage("profile: write", [&] {
    const std::filesystem::path png = out_prefix.string() + ".png";
    if (png.has_parent_path()) std::filesystem::create_directories(png.parent_path());
    save_png(tp.profile, png);
    detail::write_json(out_prefix.string() + ".json",
                       {{"clip", clip_path.string()},
                        {"column_index", tp.column_index},
                        {"patch", tp.patch},
                        {"frames", tp.profile.height()},
                        {"profile_height", tp.profile.height()},
                        {"profile_width", tp.profile.width()},
                        {"row_deviation", deviation},
                        {"flag_threshold", flag_threshold},
                        {"flagged_rows", flagged},
                        {"png", png.filename().string()}});
    return 0;
  });
  return tp;
}

}  // namespace tape
