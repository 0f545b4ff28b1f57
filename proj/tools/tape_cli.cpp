// tape: reference-based restoration of analog-video artifacts.
//
// Subcommands cover the full pipeline: synth paired training data from clean
// sources, classify clean frames, train, restore, evaluate, and render
// temporal profiles. All randomness flows from --seed (or the config's train
// seed); reruns with identical inputs write identical artifacts.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tape/pipeline.hpp"

namespace {

struct GlobalArgs {
  std::string config_path;
  uint64_t seed = 0;
  bool seed_set = false;
  bool verbose = false;
};

tape::PipelineConfig resolve_config(const GlobalArgs& g) {
  tape::PipelineConfig cfg;
  if (!g.config_path.empty()) cfg = tape::load_pipeline_config(g.config_path);
  if (g.seed_set) cfg.train.seed = g.seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reference-based restoration of degraded analog videotape"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config_path, "pipeline config JSON");
  auto* seed_opt = app.add_option("--seed", g.seed, "master seed (overrides the config)");
  app.add_flag("--verbose", g.verbose, "progress logging to stderr");

  auto* synth = app.add_subcommand("synth", "degrade clean sources into paired training data");
  std::string synth_source, synth_out;
  bool dry_run = false;
  synth->add_option("--source", synth_source, "clean source root (overrides config)");
  synth->add_option("--out", synth_out, "dataset output root (overrides config)");
  synth->add_flag("--dry-run", dry_run, "write recipes only, no frames");

  auto* classify = app.add_subcommand("classify", "score frames and write the clean set");
  std::string classify_clip, classify_out = "clean_set.json";
  classify->add_option("--clip", classify_clip, "frame directory to classify")->required();
  classify->add_option("--out", classify_out, "output JSON path");

  auto* restore = app.add_subcommand("restore", "restore a clip with a trained checkpoint");
  std::string restore_clip, restore_ckpt, restore_out;
  restore->add_option("--clip", restore_clip, "frame directory to restore")->required();
  restore->add_option("--checkpoint", restore_ckpt, "model checkpoint (overrides config)");
  restore->add_option("--out", restore_out, "restored frame directory (overrides config)");

  auto* train = app.add_subcommand("train", "train the restoration network");
  std::string train_data, train_out, train_log, train_resume;
  int64_t train_steps = -1;
  train->add_option("--data", train_data, "synthesized dataset root (overrides config)");
  train->add_option("--steps", train_steps, "total steps to reach (overrides config)");
  train->add_option("--out", train_out, "checkpoint output path (overrides config)");
  train->add_option("--log", train_log, "JSONL loss log path");
  train->add_option("--resume", train_resume, "checkpoint to resume from");

  auto* evaluate = app.add_subcommand("evaluate", "PSNR/SSIM report for restored vs ground truth");
  std::string eval_restored, eval_gt, eval_out = "metrics.json";
  evaluate->add_option("--restored", eval_restored, "restored tree root")->required();
  evaluate->add_option("--gt", eval_gt, "ground-truth tree root")->required();
  evaluate->add_option("--out", eval_out, "report JSON path");

  auto* profile = app.add_subcommand("profile", "temporal profile of one pixel column");
  std::string profile_clip, profile_out = "profile";
  int prof_column = -1, prof_y0 = 0, prof_x0 = 0, prof_h = 0, prof_w = 0;
  double prof_flag = 0.05;
  profile->add_option("--clip", profile_clip, "frame directory")->required();
  profile->add_option("--column", prof_column, "column inside the patch (default: middle)");
  profile->add_option("--y0", prof_y0, "patch top");
  profile->add_option("--x0", prof_x0, "patch left");
  profile->add_option("--height", prof_h, "patch height (default: full frame)");
  profile->add_option("--width", prof_w, "patch width (default: full frame)");
  profile->add_option("--flag-threshold", prof_flag, "row deviation above this is flagged");
  profile->add_option("--out", profile_out, "output prefix for .png/.json");

  for (CLI::App* sub : {synth, classify, restore, train, evaluate, profile})
    sub->fallthrough();

  CLI11_PARSE(app, argc, argv);
  g.seed_set = seed_opt->count() > 0;

  const CLI::App* sub = app.get_subcommands().front();
  std::ostream* log = g.verbose ? &std::cerr : nullptr;
  try {
    tape::PipelineConfig cfg = resolve_config(g);
    if (sub == synth) {
      if (!synth_source.empty()) cfg.paths.source_dir = synth_source;
      if (!synth_out.empty()) cfg.paths.dataset_dir = synth_out;
      const tape::SynthResult r = tape::cmd_synth(cfg, dry_run, log);
      std::cout << "synth: wrote " << (dry_run ? "recipes for " : "") << r.videos
                << " videos (" << r.frames << " frames) to " << cfg.paths.dataset_dir << "\n";
    } else if (sub == classify) {
      const tape::CleanSet set = tape::cmd_classify(cfg, classify_clip, classify_out);
      std::cout << "classify: " << set.clean_indices.size() << "/" << set.scores.size()
                << " frames clean, threshold " << set.threshold << ", report " << classify_out
                << "\n";
    } else if (sub == restore) {
      if (!restore_ckpt.empty()) cfg.paths.checkpoint = restore_ckpt;
      if (!restore_out.empty()) cfg.paths.output_dir = restore_out;
      if (cfg.paths.checkpoint.empty())
        throw std::runtime_error("restore: no checkpoint given (--checkpoint or config)");
      if (cfg.paths.output_dir.empty())
        throw std::runtime_error("restore: no output directory given (--out or config)");
      const tape::RestoreResult r =
          tape::cmd_restore(cfg, restore_clip, cfg.paths.checkpoint, cfg.paths.output_dir, log);
      std::cout << "restore: " << r.frames << " frames in " << r.windows << " windows to "
                << cfg.paths.output_dir << (r.padded ? " (input was padded)" : "") << "\n";
    } else if (sub == train) {
      if (!train_data.empty()) cfg.paths.dataset_dir = train_data;
      if (!train_out.empty()) cfg.paths.checkpoint = train_out;
      if (train_steps > 0) cfg.train_steps = static_cast<int>(train_steps);
      if (cfg.paths.dataset_dir.empty())
        throw std::runtime_error("train: no dataset root given (--data or config)");
      if (cfg.paths.checkpoint.empty())
        throw std::runtime_error("train: no checkpoint path given (--out or config)");
      const tape::TrainResult r =
          tape::cmd_train(cfg, cfg.paths.dataset_dir, cfg.paths.checkpoint, train_log,
                          train_resume, log);
      std::cout << "train: reached step " << r.final_step << ", loss " << r.first_loss
                << " -> " << r.final_loss << ", checkpoint " << r.checkpoint << "\n";
    } else if (sub == evaluate) {
      const tape::MetricReport r = tape::cmd_evaluate(eval_restored, eval_gt, eval_out);
      std::cout << "evaluate: " << r.videos.size() << " videos, mean PSNR " << r.mean_psnr
                << " dB, mean SSIM " << r.mean_ssim << ", report " << eval_out << "\n";
    } else if (sub == profile) {
      tape::PatchBounds patch{prof_y0, prof_x0, prof_h, prof_w};
      const tape::TemporalProfile tp =
          tape::cmd_profile(profile_clip, patch, prof_column, profile_out, prof_flag);
      std::cout << "profile: " << tp.profile.height() << " rows x " << tp.profile.width()
                << " columns at column " << tp.column_index << ", wrote " << profile_out
                << ".png/.json\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "tape " << sub->get_name() << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
