#include "tape/degradation.hpp"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

using tape::DegradationConfig;
using tape::DegradationRecipe;
using tape::EffectParams;
using tape::Frame;
using tape::FrameSeq;
using tape::GridBand;
using tape::GridSpec;
using tape::KeyedRng;

namespace {

Frame gray_frame(int h, int w, float value) {
  Frame f(h, w);
  for (float& v : f.pixels()) v = value;
  return f;
}

Frame random_frame(int h, int w, uint64_t seed) {
  KeyedRng rng(seed, 0);
  Frame f(h, w);
  for (float& v : f.pixels()) v = static_cast<float>(rng.next_uniform());
  return f;
}

DegradationConfig zero_prob_config(int h = 32, int w = 32) {
  DegradationConfig c;
  c.frame_height = h;
  c.frame_width = w;
  c.p_clean = 0.0;
  c.p_undersaturation = 0.0;
  c.p_noise = 0.0;
  c.p_dropout = 0.0;
  c.p_displacement = 0.0;
  c.p_chroma = 0.0;
  return c;
}

}  // namespace

TEST(MakeRecipe, Deterministic) {
  DegradationConfig config;
  config.frame_height = 64;
  config.frame_width = 64;
  DegradationRecipe a = tape::make_recipe(99, config, 50);
  DegradationRecipe b = tape::make_recipe(99, config, 50);
  nlohmann::json ja = a, jb = b;
  EXPECT_EQ(ja, jb);
}

TEST(MakeRecipe, ZeroProbabilitiesGiveIdentity) {
  DegradationRecipe r = tape::make_recipe(7, zero_prob_config(), 20);
  for (const EffectParams& p : r.per_frame) EXPECT_TRUE(p.is_identity());
}

TEST(MakeRecipe, CleanFractionMatchesProbability) {
  DegradationConfig config;
  config.frame_height = 64;
  config.frame_width = 64;
  config.p_clean = 0.3;
  config.p_undersaturation = 1.0;
  config.p_noise = 1.0;
  config.p_dropout = 1.0;
  config.p_displacement = 1.0;
  config.p_chroma = 1.0;
  DegradationRecipe r = tape::make_recipe(123, config, 10000);
  int clean = 0;
  for (const EffectParams& p : r.per_frame) clean += p.is_identity() ? 1 : 0;
  const double frac = clean / 10000.0;
  EXPECT_GT(frac, 0.27);
  EXPECT_LT(frac, 0.33);
}

TEST(Undersaturation, IdentityAtScaleOne) {
  Frame f = random_frame(8, 8, 1);
  Frame out = tape::apply_undersaturation(f, 1.0f);
  EXPECT_EQ(out.pixels(), f.pixels());
}

TEST(Undersaturation, FullDesaturationIsLuma) {
  Frame f(1, 1);
  f.at(0, 0, 0) = 1.0f;
  Frame out = tape::apply_undersaturation(f, 0.0f);
  EXPECT_NEAR(out.at(0, 0, 0), 0.299f, 1e-6f);
  EXPECT_NEAR(out.at(0, 0, 1), 0.299f, 1e-6f);
  EXPECT_NEAR(out.at(0, 0, 2), 0.299f, 1e-6f);
}

TEST(Undersaturation, GrayscaleFixedPoint) {
  Frame f = gray_frame(6, 6, 0.42f);
  for (float scale : {0.0f, 0.3f, 0.7f}) {
    Frame out = tape::apply_undersaturation(f, scale);
    for (size_t i = 0; i < out.pixels().size(); ++i)
      EXPECT_NEAR(out.pixels()[i], f.pixels()[i], 1e-6f);
  }
  EXPECT_THROW(tape::apply_undersaturation(f, 1.5f), std::invalid_argument);
}

TEST(TapeNoise, SigmaZeroIdentity) {
  Frame f = random_frame(8, 8, 2);
  KeyedRng rng(1, 2, 3);
  Frame out = tape::apply_tape_noise(f, 0.0f, rng);
  EXPECT_EQ(out.pixels(), f.pixels());
}

TEST(TapeNoise, EmpiricalStd) {
  Frame f = gray_frame(256, 256, 0.5f);
  KeyedRng rng(11, 0, 0);
  Frame out = tape::apply_tape_noise(f, 0.1f, rng);
  double sum = 0.0, sum2 = 0.0;
  const size_t n = out.pixels().size();
  for (size_t i = 0; i < n; ++i) {
    const double d = out.pixels()[i] - 0.5;
    sum += d;
    sum2 += d * d;
  }
  const double mean = sum / n;
  const double std = std::sqrt(sum2 / n - mean * mean);
  EXPECT_GT(std, 0.095);
  EXPECT_LT(std, 0.105);
}

TEST(TapeNoise, DeterministicGivenState) {
  Frame f = gray_frame(16, 16, 0.5f);
  KeyedRng a(5, 6, 7), b(5, 6, 7);
  Frame outa = tape::apply_tape_noise(f, 0.05f, a);
  Frame outb = tape::apply_tape_noise(f, 0.05f, b);
  EXPECT_EQ(outa.pixels(), outb.pixels());
  EXPECT_THROW(tape::apply_tape_noise(f, -0.1f, a), std::invalid_argument);
}

TEST(DropoutOverlay, MaxSemantics) {
  Frame f = gray_frame(4, 4, 0.3f);
  Frame zeros(4, 4);
  EXPECT_EQ(tape::apply_dropout_overlay(f, zeros).pixels(), f.pixels());
  Frame ones = gray_frame(4, 4, 1.0f);
  Frame lit = tape::apply_dropout_overlay(f, ones);
  for (float v : lit.pixels()) EXPECT_EQ(v, 1.0f);
  Frame seven = gray_frame(4, 4, 0.7f);
  Frame blended = tape::apply_dropout_overlay(f, seven);
  for (float v : blended.pixels()) EXPECT_EQ(v, 0.7f);
  EXPECT_THROW(tape::apply_dropout_overlay(f, gray_frame(5, 4, 0.0f)), std::invalid_argument);
}

TEST(DropoutOverlay, BankDeterministicAndBounded) {
  for (int id = 0; id < 8; ++id) {
    Frame a = tape::make_dropout_overlay(id, 48, 64, 5);
    Frame b = tape::make_dropout_overlay(id, 48, 64, 5);
    EXPECT_EQ(a.pixels(), b.pixels());
    float maxv = 0.0f;
    for (float v : a.pixels()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
      maxv = std::max(maxv, v);
    }
    EXPECT_GT(maxv, 0.0f) << "overlay " << id << " is empty";
  }
}

TEST(Grid, TemplateArithmetic) {
  // the {8 active, 24 inactive} template on h=64 at offset 0
  std::vector<GridBand> bands = tape::make_grid_bands(3, 0, 64);
  ASSERT_EQ(bands.size(), 2u);
  EXPECT_EQ(bands[0].row_start, 0);
  EXPECT_EQ(bands[0].row_end, 8);
  EXPECT_EQ(bands[1].row_start, 32);
  EXPECT_EQ(bands[1].row_end, 40);
}

TEST(Grid, PeriodicityOracle) {
  // every template period divides 64, so offset=h reproduces offset=0
  const int h = 64;
  for (int id = 0; id < 6; ++id) {
    std::vector<GridBand> base = tape::make_grid_bands(id, 0, h);
    std::vector<GridBand> wrapped = tape::make_grid_bands(id, h, h);
    ASSERT_EQ(base.size(), wrapped.size()) << "template " << id;
    for (size_t i = 0; i < base.size(); ++i) {
      EXPECT_EQ(base[i].row_start, wrapped[i].row_start);
      EXPECT_EQ(base[i].row_end, wrapped[i].row_end);
    }
  }
  EXPECT_THROW(tape::make_grid_bands(6, 0, h), std::invalid_argument);
}

TEST(Grid, BandsSortedDisjointClipped) {
  DegradationConfig config;
  config.max_shift_px = 4;
  for (int id = 0; id < 6; ++id) {
    KeyedRng rng(17, id);
    GridSpec spec = tape::build_grid(config, id, 50, rng);
    int prev_end = 0;
    for (const GridBand& b : spec.bands) {
      EXPECT_GE(b.row_start, prev_end);
      EXPECT_GT(b.row_end, b.row_start);
      EXPECT_LE(b.row_end, 50);
      EXPECT_LE(std::abs(b.shift_px), 4);
      prev_end = b.row_end;
    }
  }
}

TEST(Displacement, ZeroShiftIdentity) {
  Frame f = random_frame(16, 16, 3);
  GridSpec grid;
  grid.bands.push_back(GridBand{0, 16, 0});
  EXPECT_EQ(tape::apply_displacement(f, grid).pixels(), f.pixels());
}

TEST(Displacement, ShiftRightWithEdgeReplication) {
  const int w = 12;
  Frame f(4, w);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) f.at(y, x, c) = static_cast<float>(x) / w;
  GridSpec grid;
  grid.bands.push_back(GridBand{0, 4, 2});
  Frame out = tape::apply_displacement(f, grid);
  for (int y = 0; y < 4; ++y) {
    EXPECT_EQ(out.at(y, 0, 0), f.at(y, 0, 0));
    EXPECT_EQ(out.at(y, 1, 0), f.at(y, 0, 0));
    for (int x = 2; x < w; ++x) EXPECT_EQ(out.at(y, x, 0), f.at(y, x - 2, 0));
  }
}

TEST(Displacement, IndexMappingOracle) {
  // forward shift then backward shift agrees with the direct index map
  Frame f = random_frame(20, 30, 4);
  for (int shift : {-3, 1, 5}) {
    GridSpec fwd;
    fwd.bands.push_back(GridBand{4, 12, shift});
    Frame shifted = tape::apply_displacement(f, fwd);

    Frame oracle = f;
    for (int y = 4; y < 12; ++y)
      for (int x = 0; x < 30; ++x) {
        const int src = std::clamp(x - shift, 0, 29);
        for (int c = 0; c < 3; ++c) oracle.at(y, x, c) = f.at(y, src, c);
      }
    EXPECT_EQ(shifted.pixels(), oracle.pixels()) << "shift " << shift;

    GridSpec bwd;
    bwd.bands.push_back(GridBand{4, 12, -shift});
    Frame back = tape::apply_displacement(shifted, bwd);
    const int margin = std::abs(shift);
    for (int y = 0; y < 20; ++y)
      for (int x = margin; x < 30 - margin; ++x)
        for (int c = 0; c < 3; ++c) EXPECT_EQ(back.at(y, x, c), f.at(y, x, c));
  }
}

TEST(ChromaLines, BlendFormula) {
  Frame f = random_frame(8, 8, 5);
  EXPECT_EQ(tape::apply_chroma_lines(f, {{3, tape::ChromaColor::kCyan, 0.0f}}).pixels(),
            f.pixels());

  Frame green = tape::apply_chroma_lines(f, {{2, tape::ChromaColor::kGreen, 1.0f}});
  for (int x = 0; x < 8; ++x) {
    EXPECT_EQ(green.at(2, x, 0), 0.0f);
    EXPECT_EQ(green.at(2, x, 1), 1.0f);
    EXPECT_EQ(green.at(2, x, 2), 0.0f);
  }

  Frame black(4, 4);
  Frame cyan = tape::apply_chroma_lines(black, {{1, tape::ChromaColor::kCyan, 0.5f}});
  for (int x = 0; x < 4; ++x) {
    EXPECT_EQ(cyan.at(1, x, 0), 0.0f);
    EXPECT_EQ(cyan.at(1, x, 1), 0.5f);
    EXPECT_EQ(cyan.at(1, x, 2), 0.5f);
  }
  EXPECT_THROW(tape::apply_chroma_lines(f, {{9, tape::ChromaColor::kCyan, 0.5f}}),
               std::invalid_argument);
}

TEST(DegradeClip, IdentityRecipeIsNoOp) {
  FrameSeq clip;
  for (int i = 0; i < 4; ++i) clip.frames.push_back(random_frame(32, 32, 10 + i));
  DegradationRecipe recipe = tape::make_recipe(1, zero_prob_config(), 4);
  FrameSeq out = tape::degrade_clip(clip, recipe);
  for (size_t i = 0; i < 4; ++i) EXPECT_EQ(out.frames[i].pixels(), clip.frames[i].pixels());
}

TEST(DegradeClip, Deterministic) {
  FrameSeq clip;
  for (int i = 0; i < 6; ++i) clip.frames.push_back(random_frame(64, 64, 20 + i));
  DegradationConfig config;
  config.frame_height = 64;
  config.frame_width = 64;
  DegradationRecipe recipe = tape::make_recipe(77, config, 6);
  FrameSeq a = tape::degrade_clip(clip, recipe);
  FrameSeq b = tape::degrade_clip(clip, recipe);
  for (size_t i = 0; i < 6; ++i) EXPECT_EQ(a.frames[i].pixels(), b.frames[i].pixels());
}

TEST(DegradeClip, NoiseOnlyMeanAbsDeviation) {
  // E|N(0, 0.05)| = 0.05 * sqrt(2/pi) ~= 0.0399
  FrameSeq clip;
  for (int i = 0; i < 3; ++i) clip.frames.push_back(gray_frame(128, 128, 0.5f));
  DegradationRecipe recipe;
  recipe.seed = 42;
  recipe.config = zero_prob_config(128, 128);
  recipe.per_frame.resize(3);
  for (EffectParams& p : recipe.per_frame) p.noise_sigma = 0.05f;
  FrameSeq out = tape::degrade_clip(clip, recipe);
  for (size_t f = 0; f < 3; ++f) {
    double acc = 0.0;
    const auto& a = clip.frames[f].pixels();
    const auto& b = out.frames[f].pixels();
    for (size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    const double mad = acc / a.size();
    EXPECT_GT(mad, 0.035) << "frame " << f;
    EXPECT_LT(mad, 0.045) << "frame " << f;
  }
}

TEST(DegradeClip, OutputStaysInRange) {
  FrameSeq clip;
  for (int i = 0; i < 5; ++i) clip.frames.push_back(random_frame(64, 64, 30 + i));
  DegradationConfig config;
  config.frame_height = 64;
  config.frame_width = 64;
  config.p_clean = 0.0;
  config.p_undersaturation = 1.0;
  config.p_noise = 1.0;
  config.p_dropout = 1.0;
  config.p_displacement = 1.0;
  config.p_chroma = 1.0;
  FrameSeq out = tape::degrade_clip(clip, tape::make_recipe(3, config, 5));
  for (const Frame& f : out.frames)
    for (float v : f.pixels()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
}

TEST(Recipe, JsonRoundTrip) {
  DegradationConfig config;
  config.frame_height = 48;
  config.frame_width = 56;
  DegradationRecipe recipe = tape::make_recipe(31337, config, 12);
  nlohmann::json j = recipe;
  EXPECT_EQ(j.at("version").get<int>(), tape::kRecipeFormatVersion);
  DegradationRecipe back = j.get<DegradationRecipe>();
  nlohmann::json j2 = back;
  EXPECT_EQ(j, j2);

  FrameSeq clip;
  for (int i = 0; i < 12; ++i) clip.frames.push_back(random_frame(48, 56, 40 + i));
  FrameSeq a = tape::degrade_clip(clip, recipe);
  FrameSeq b = tape::degrade_clip(clip, back);
  for (size_t i = 0; i < 12; ++i) EXPECT_EQ(a.frames[i].pixels(), b.frames[i].pixels());
}

TEST(Recipe, LengthMismatchRejected) {
  FrameSeq clip;
  clip.frames.push_back(gray_frame(32, 32, 0.5f));
  DegradationRecipe recipe = tape::make_recipe(1, zero_prob_config(), 2);
  EXPECT_THROW(tape::degrade_clip(clip, recipe), std::invalid_argument);
}
