// Synthetic analog-tape degradation.
//
// A recipe fixes, per frame, which effects fire and with which parameters.
// Recipes are a pure function of (seed, config, n_frames) and serialize to
// JSON, so any synthetic clip can be regenerated bit-exactly. Effects apply
// in a fixed order: undersaturation -> noise -> dropout overlay ->
// displacement -> chroma lines.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tape/media_io.hpp"
#include "tape/rng.hpp"

namespace tape {

enum class ChromaColor { kCyan, kMagenta, kGreen };

inline const char* to_string(ChromaColor c) {
  switch (c) {
    case ChromaColor::kCyan: return "cyan";
    case ChromaColor::kMagenta: return "magenta";
    case ChromaColor::kGreen: return "green";
  }
  throw std::invalid_argument("unknown chroma color");
}

inline ChromaColor chroma_color_from_string(const std::string& s) {
  if (s == "cyan") return ChromaColor::kCyan;
  if (s == "magenta") return ChromaColor::kMagenta;
  if (s == "green") return ChromaColor::kGreen;
  throw std::invalid_argument("unknown chroma color: " + s);
}

struct ChromaLine {
  int row = 0;
  ChromaColor color = ChromaColor::kCyan;
  float alpha = 0.0f;
};

struct GridBand {
  int row_start = 0;
  int row_end = 0;  // exclusive
  int shift_px = 0;
};

// Horizontal band pattern where displacement applies. Derived from one of
// six fixed line-grid templates plus a vertical wiggle offset.
struct GridSpec {
  int grid_id = 0;
  int vertical_offset = 0;
  std::vector<GridBand> bands;  // non-overlapping, sorted, clipped to frame
};

struct EffectParams {
  float saturation_scale = 1.0f;  // 1 = no effect
  float noise_sigma = 0.0f;
  std::optional<int> dropout_overlay_id;
  int dropout_offset_y = 0;
  std::optional<GridSpec> displacement;
  std::vector<ChromaLine> chroma_lines;

  bool is_identity() const {
    return saturation_scale == 1.0f && noise_sigma == 0.0f && !dropout_overlay_id &&
           !displacement && chroma_lines.empty();
  }
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  void check(const char* name) const {
    if (!(lo <= hi)) throw std::invalid_argument(std::string("empty range: ") + name);
  }
};

struct DegradationConfig {
  int frame_height = 576;
  int frame_width = 788;

  double p_clean = 0.3;  // chance a frame skips all effects

  double p_undersaturation = 0.8;
  Range saturation_scale{0.25, 0.75};

  double p_noise = 0.8;
  Range noise_sigma{0.02, 0.10};

  double p_dropout = 0.4;
  int overlay_bank_size = 8;

  double p_displacement = 0.6;
  int max_shift_px = 8;

  double p_chroma = 0.6;
  int max_chroma_lines = 5;
  Range chroma_alpha{0.3, 0.9};

  void validate() const {
    if (frame_height <= 0 || frame_width <= 0)
      throw std::invalid_argument("DegradationConfig: frame dims must be positive");
    for (double p : {p_clean, p_undersaturation, p_noise, p_dropout, p_displacement, p_chroma})
      if (p < 0.0 || p > 1.0) throw std::invalid_argument("DegradationConfig: probability out of [0,1]");
    saturation_scale.check("saturation_scale");
    noise_sigma.check("noise_sigma");
    chroma_alpha.check("chroma_alpha");
    if (noise_sigma.lo < 0.0) throw std::invalid_argument("DegradationConfig: negative noise sigma");
    if (max_shift_px < 0 || max_chroma_lines < 0 || overlay_bank_size <= 0)
      throw std::invalid_argument("DegradationConfig: invalid counts");
  }
};

struct DegradationRecipe {
  uint64_t seed = 0;
  DegradationConfig config;
  std::vector<EffectParams> per_frame;
};

namespace effect_stream {
// stream ids for KeyedRng(seed, frame_index, id)
constexpr uint64_t kClean = 0;
constexpr uint64_t kUndersaturation = 1;
constexpr uint64_t kNoise = 2;
constexpr uint64_t kDropout = 3;
constexpr uint64_t kDisplacement = 4;
constexpr uint64_t kChroma = 5;
constexpr uint64_t kApplyOffset = 0x100;  // parameter draws vs. pixel draws
}  // namespace effect_stream

// --- individual effects -----------------------------------------------------

inline Frame apply_undersaturation(const Frame& frame, float scale) {
  if (scale < 0.0f || scale > 1.0f)
    throw std::invalid_argument("apply_undersaturation: scale must be in [0,1]");
  if (scale == 1.0f) return frame;
  Frame out(frame.height(), frame.width());
  for (int y = 0; y < frame.height(); ++y)
    for (int x = 0; x < frame.width(); ++x) {
      const float gray = 0.299f * frame.at(y, x, 0) + 0.587f * frame.at(y, x, 1) +
                         0.114f * frame.at(y, x, 2);
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = std::clamp(gray + scale * (frame.at(y, x, c) - gray), 0.0f, 1.0f);
    }
  return out;
}

inline Frame apply_tape_noise(const Frame& frame, float sigma, KeyedRng& rng) {
  if (sigma < 0.0f) throw std::invalid_argument("apply_tape_noise: sigma must be >= 0");
  if (sigma == 0.0f) return frame;
  Frame out(frame.height(), frame.width());
  auto& in = frame.pixels();
  auto& px = out.pixels();
  for (size_t i = 0; i < px.size(); ++i)
    px[i] = std::clamp(in[i] + sigma * static_cast<float>(rng.next_gaussian()), 0.0f, 1.0f);
  return out;
}

// lighten blend: per-channel max
inline Frame apply_dropout_overlay(const Frame& frame, const Frame& overlay) {
  if (!frame.same_dims(overlay))
    throw std::invalid_argument("apply_dropout_overlay: dimension mismatch");
  Frame out(frame.height(), frame.width());
  auto& a = frame.pixels();
  auto& b = overlay.pixels();
  auto& px = out.pixels();
  for (size_t i = 0; i < px.size(); ++i) px[i] = std::max(a[i], b[i]);
  return out;
}

// Procedural white-streak texture bank standing in for VHS overlay footage.
// Purely a function of (overlay_id, dims, offset_y).
inline Frame make_dropout_overlay(int overlay_id, int height, int width, int offset_y = 0) {
  Frame out(height, width);
  KeyedRng rng(0xd80f0a64ull, static_cast<uint64_t>(overlay_id), 0x5eed);
  const int n_streaks = static_cast<int>(rng.next_int(2, 6));
  for (int s = 0; s < n_streaks; ++s) {
    const int row = static_cast<int>(rng.next_int(0, height - 1));
    const int thickness = static_cast<int>(rng.next_int(1, 3));
    const int x0 = static_cast<int>(rng.next_int(0, width - 1));
    const int len = static_cast<int>(rng.next_int(width / 4, width));
    const float intensity = static_cast<float>(rng.next_uniform(0.55, 1.0));
    for (int dy = 0; dy < thickness; ++dy) {
      const int y = (((row + dy + offset_y) % height) + height) % height;
      for (int x = x0; x < std::min(width, x0 + len); ++x) {
        // taper toward streak ends
        const float t = static_cast<float>(x - x0) / static_cast<float>(len);
        const float v = intensity * (0.4f + 0.6f * std::sin(3.14159265f * std::min(1.0f, t)));
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = std::max(out.at(y, x, c), std::clamp(v, 0.0f, 1.0f));
      }
    }
  }
  return out;
}

namespace detail {

struct GridTemplate {
  int active_rows;
  int inactive_rows;
  int period() const { return active_rows + inactive_rows; }
};

// Six fixed line patterns spanning thin-line and thick-band mistracking.
// All periods are powers of two.
inline const GridTemplate kGridTemplates[6] = {
    {1, 7}, {2, 14}, {4, 12}, {8, 24}, {16, 48}, {24, 40},
};

}  // namespace detail

// Active bands of one template at a given vertical wiggle offset, shifts
// left at zero. A row r is active when ((r + offset) mod period) < active_rows.
inline std::vector<GridBand> make_grid_bands(int grid_id, int vertical_offset, int frame_h) {
  if (grid_id < 0 || grid_id >= 6)
    throw std::invalid_argument("make_grid_bands: grid_id must be in [0,6)");
  const auto& tpl = detail::kGridTemplates[grid_id];
  const int period = tpl.period();
  std::vector<GridBand> bands;
  int run_start = -1;
  for (int r = 0; r <= frame_h; ++r) {
    const bool active =
        r < frame_h && (((r + vertical_offset) % period) + period) % period < tpl.active_rows;
    if (active && run_start < 0) run_start = r;
    if (!active && run_start >= 0) {
      bands.push_back(GridBand{run_start, r, 0});
      run_start = -1;
    }
  }
  return bands;
}

inline GridSpec build_grid(const DegradationConfig& config, int grid_id, int frame_h,
                           KeyedRng& rng) {
  if (grid_id < 0 || grid_id >= 6) throw std::invalid_argument("build_grid: grid_id must be in [0,6)");
  GridSpec spec;
  spec.grid_id = grid_id;
  spec.vertical_offset =
      static_cast<int>(rng.next_int(0, detail::kGridTemplates[grid_id].period() - 1));
  spec.bands = make_grid_bands(grid_id, spec.vertical_offset, frame_h);
  for (GridBand& band : spec.bands)
    band.shift_px = static_cast<int>(rng.next_int(-config.max_shift_px, config.max_shift_px));
  return spec;
}

// Horizontal shift of active bands with edge-replication padding.
inline Frame apply_displacement(const Frame& frame, const GridSpec& grid) {
  Frame out = frame;
  const int w = frame.width();
  for (const GridBand& band : grid.bands) {
    if (band.row_start < 0 || band.row_end > frame.height() || band.row_start > band.row_end)
      throw std::invalid_argument("apply_displacement: band outside frame");
    if (band.shift_px == 0) continue;
    for (int y = band.row_start; y < band.row_end; ++y)
      for (int x = 0; x < w; ++x) {
        const int src = std::clamp(x - band.shift_px, 0, w - 1);
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = frame.at(y, src, c);
      }
  }
  return out;
}

inline Frame apply_chroma_lines(const Frame& frame, const std::vector<ChromaLine>& lines) {
  Frame out = frame;
  for (const ChromaLine& line : lines) {
    if (line.row < 0 || line.row >= frame.height())
      throw std::invalid_argument("apply_chroma_lines: row outside frame");
    if (line.alpha < 0.0f || line.alpha > 1.0f)
      throw std::invalid_argument("apply_chroma_lines: alpha must be in [0,1]");
    float rgb[3];
    switch (line.color) {
      case ChromaColor::kCyan: rgb[0] = 0; rgb[1] = 1; rgb[2] = 1; break;
      case ChromaColor::kMagenta: rgb[0] = 1; rgb[1] = 0; rgb[2] = 1; break;
      case ChromaColor::kGreen: rgb[0] = 0; rgb[1] = 1; rgb[2] = 0; break;
      default: throw std::invalid_argument("apply_chroma_lines: bad color tag");
    }
    for (int x = 0; x < frame.width(); ++x)
      for (int c = 0; c < 3; ++c)
        out.at(line.row, x, c) =
            (1.0f - line.alpha) * frame.at(line.row, x, c) + line.alpha * rgb[c];
  }
  return out;
}

// --- recipe construction and application ------------------------------------

inline EffectParams sample_effect_params(uint64_t seed, const DegradationConfig& config,
                                         size_t frame_index) {
  EffectParams p;
  KeyedRng clean_rng(seed, frame_index, effect_stream::kClean);
  if (clean_rng.next_bernoulli(config.p_clean)) return p;  // identity frame

  {
    KeyedRng rng(seed, frame_index, effect_stream::kUndersaturation);
    if (rng.next_bernoulli(config.p_undersaturation))
      p.saturation_scale = static_cast<float>(
          rng.next_uniform(config.saturation_scale.lo, config.saturation_scale.hi));
  }
  {
    KeyedRng rng(seed, frame_index, effect_stream::kNoise);
    if (rng.next_bernoulli(config.p_noise))
      p.noise_sigma =
          static_cast<float>(rng.next_uniform(config.noise_sigma.lo, config.noise_sigma.hi));
  }
  {
    KeyedRng rng(seed, frame_index, effect_stream::kDropout);
    if (rng.next_bernoulli(config.p_dropout)) {
      p.dropout_overlay_id = static_cast<int>(rng.next_int(0, config.overlay_bank_size - 1));
      p.dropout_offset_y = static_cast<int>(rng.next_int(0, config.frame_height - 1));
    }
  }
  {
    KeyedRng rng(seed, frame_index, effect_stream::kDisplacement);
    if (rng.next_bernoulli(config.p_displacement)) {
      const int grid_id = static_cast<int>(rng.next_int(0, 5));
      p.displacement = build_grid(config, grid_id, config.frame_height, rng);
    }
  }
  {
    KeyedRng rng(seed, frame_index, effect_stream::kChroma);
    if (rng.next_bernoulli(config.p_chroma) && config.max_chroma_lines > 0) {
      const int n = static_cast<int>(rng.next_int(1, config.max_chroma_lines));
      for (int i = 0; i < n; ++i) {
        ChromaLine line;
        line.row = static_cast<int>(rng.next_int(0, config.frame_height - 1));
        line.color = static_cast<ChromaColor>(rng.next_int(0, 2));
        line.alpha =
            static_cast<float>(rng.next_uniform(config.chroma_alpha.lo, config.chroma_alpha.hi));
        p.chroma_lines.push_back(line);
      }
    }
  }
  return p;
}

inline DegradationRecipe make_recipe(uint64_t seed, const DegradationConfig& config,
                                     size_t n_frames) {
  if (n_frames == 0) throw std::invalid_argument("make_recipe: n_frames must be positive");
  config.validate();
  DegradationRecipe recipe;
  recipe.seed = seed;
  recipe.config = config;
  recipe.per_frame.reserve(n_frames);
  for (size_t f = 0; f < n_frames; ++f)
    recipe.per_frame.push_back(sample_effect_params(seed, config, f));
  return recipe;
}

inline Frame degrade_frame(const Frame& frame, const EffectParams& params, uint64_t seed,
                           size_t frame_index) {
  Frame out = frame;
  if (params.saturation_scale != 1.0f)
    out = apply_undersaturation(out, params.saturation_scale);
  if (params.noise_sigma > 0.0f) {
    KeyedRng rng(seed, frame_index, effect_stream::kNoise + effect_stream::kApplyOffset);
    out = apply_tape_noise(out, params.noise_sigma, rng);
  }
  if (params.dropout_overlay_id) {
    Frame overlay = make_dropout_overlay(*params.dropout_overlay_id, frame.height(),
                                         frame.width(), params.dropout_offset_y);
    out = apply_dropout_overlay(out, overlay);
  }
  if (params.displacement) out = apply_displacement(out, *params.displacement);
  if (!params.chroma_lines.empty()) out = apply_chroma_lines(out, params.chroma_lines);
  return out;
}

inline FrameSeq degrade_clip(const FrameSeq& clip, const DegradationRecipe& recipe) {
  clip.validate();
  if (recipe.per_frame.size() != clip.frames.size())
    throw std::invalid_argument("degrade_clip: recipe length does not match clip");
  FrameSeq out;
  out.fps = clip.fps;
  out.frames.reserve(clip.frames.size());
  for (size_t f = 0; f < clip.frames.size(); ++f)
    out.frames.push_back(degrade_frame(clip.frames[f], recipe.per_frame[f], recipe.seed, f));
  return out;
}

// --- JSON serialization ------------------------------------------------------

inline void to_json(nlohmann::json& j, const Range& r) { j = {{"lo", r.lo}, {"hi", r.hi}}; }
inline void from_json(const nlohmann::json& j, Range& r) {
  j.at("lo").get_to(r.lo);
  j.at("hi").get_to(r.hi);
}

inline void to_json(nlohmann::json& j, const DegradationConfig& c) {
  j = {{"frame_height", c.frame_height},
       {"frame_width", c.frame_width},
       {"p_clean", c.p_clean},
       {"p_undersaturation", c.p_undersaturation},
       {"saturation_scale", c.saturation_scale},
       {"p_noise", c.p_noise},
       {"noise_sigma", c.noise_sigma},
       {"p_dropout", c.p_dropout},
       {"overlay_bank_size", c.overlay_bank_size},
       {"p_displacement", c.p_displacement},
       {"max_shift_px", c.max_shift_px},
       {"p_chroma", c.p_chroma},
       {"max_chroma_lines", c.max_chroma_lines},
       {"chroma_alpha", c.chroma_alpha}};
}

inline void from_json(const nlohmann::json& j, DegradationConfig& c) {
  j.at("frame_height").get_to(c.frame_height);
  j.at("frame_width").get_to(c.frame_width);
  j.at("p_clean").get_to(c.p_clean);
  j.at("p_undersaturation").get_to(c.p_undersaturation);
  j.at("saturation_scale").get_to(c.saturation_scale);
  j.at("p_noise").get_to(c.p_noise);
  j.at("noise_sigma").get_to(c.noise_sigma);
  j.at("p_dropout").get_to(c.p_dropout);
  j.at("overlay_bank_size").get_to(c.overlay_bank_size);
  j.at("p_displacement").get_to(c.p_displacement);
  j.at("max_shift_px").get_to(c.max_shift_px);
  j.at("p_chroma").get_to(c.p_chroma);
  j.at("max_chroma_lines").get_to(c.max_chroma_lines);
  j.at("chroma_alpha").get_to(c.chroma_alpha);
}

inline void to_json(nlohmann::json& j, const GridBand& b) {
  j = {{"row_start", b.row_start}, {"row_end", b.row_end}, {"shift_px", b.shift_px}};
}
inline void from_json(const nlohmann::json& j, GridBand& b) {
  j.at("row_start").get_to(b.row_start);
  j.at("row_end").get_to(b.row_end);
  j.at("shift_px").get_to(b.shift_px);
}

inline void to_json(nlohmann::json& j, const GridSpec& g) {
  j = {{"grid_id", g.grid_id}, {"vertical_offset", g.vertical_offset}, {"bands", g.bands}};
}
inline void from_json(const nlohmann::json& j, GridSpec& g) {
  j.at("grid_id").get_to(g.grid_id);
  j.at("vertical_offset").get_to(g.vertical_offset);
  j.at("bands").get_to(g.bands);
}

inline void to_json(nlohmann::json& j, const ChromaLine& l) {
  j = {{"row", l.row}, {"color", to_string(l.color)}, {"alpha", l.alpha}};
}
inline void from_json(const nlohmann::json& j, ChromaLine& l) {
  j.at("row").get_to(l.row);
  l.color = chroma_color_from_string(j.at("color").get<std::string>());
  j.at("alpha").get_to(l.alpha);
}

inline void to_json(nlohmann::json& j, const EffectParams& p) {
  j = nlohmann::json::object();
  j["saturation_scale"] = p.saturation_scale;
  j["noise_sigma"] = p.noise_sigma;
  if (p.dropout_overlay_id) {
    j["dropout_overlay_id"] = *p.dropout_overlay_id;
    j["dropout_offset_y"] = p.dropout_offset_y;
  }
  if (p.displacement) j["displacement"] = *p.displacement;
  if (!p.chroma_lines.empty()) j["chroma_lines"] = p.chroma_lines;
}

inline void from_json(const nlohmann::json& j, EffectParams& p) {
  p = EffectParams{};
  j.at("saturation_scale").get_to(p.saturation_scale);
  j.at("noise_sigma").get_to(p.noise_sigma);
  if (j.contains("dropout_overlay_id")) {
    p.dropout_overlay_id = j.at("dropout_overlay_id").get<int>();
    j.at("dropout_offset_y").get_to(p.dropout_offset_y);
  }
  if (j.contains("displacement")) p.displacement = j.at("displacement").get<GridSpec>();
  if (j.contains("chroma_lines")) j.at("chroma_lines").get_to(p.chroma_lines);
}

inline constexpr int kRecipeFormatVersion = 1;

inline void to_json(nlohmann::json& j, const DegradationRecipe& r) {
  j = {{"version", kRecipeFormatVersion},
       {"seed", r.seed},
       {"config", r.config},
       {"per_frame", r.per_frame}};
}

inline void from_json(const nlohmann::json& j, DegradationRecipe& r) {
  if (j.at("version").get<int>() != kRecipeFormatVersion)
    throw std::runtime_error("DegradationRecipe: unsupported format version");
  j.at("seed").get_to(r.seed);
  j.at("config").get_to(r.config);
  j.at("per_frame").get_to(r.per_frame);
}

}  // namespace tape
