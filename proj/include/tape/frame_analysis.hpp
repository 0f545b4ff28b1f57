// Zero-shot frame quality analysis.
//
// Frames are scored by cosine similarity between their image embedding and an
// ensemble of text prompts describing tape artifacts; higher score means more
// degraded. Otsu's method on the score histogram splits frames into clean and
// degraded, and the cleanest frames most similar to a given window feed the
// restoration network as references.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tape/media_io.hpp"
#include "tape/rng.hpp"

namespace tape {

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual int dim() const = 0;
  // both return unit-L2-norm vectors, deterministic per input
  virtual std::vector<float> embed_image(const Frame& frame) const = 0;
  virtual std::vector<float> embed_text(const std::string& text) const = 0;
};

inline double dot(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: dimension mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

inline double l2_norm(const std::vector<float>& v) { return std::sqrt(dot(v, v)); }

inline std::vector<float> l2_normalize(std::vector<float> v) {
  const double n = l2_norm(v);
  if (n < 1e-12) throw std::runtime_error("l2_normalize: zero-norm vector");
  for (float& x : v) x = static_cast<float>(x / n);
  return v;
}

// The twelve default artifact prompts, one per line in data/default_prompts.txt.
inline const std::vector<std::string>& default_prompts() {
  static const std::vector<std::string> kPrompts = {
      "an image with color artifacts along rows",
      "an image with interlacing artifacts",
      "an image of a noisy photo",
      "an image of a degraded photo",
      "a photo with distortions",
      "an image of a bad photo",
      "a jpeg corrupted image of a photo",
      "a pixelated image of a photo",
      "a blurry image of a photo",
      "a jpeg corrupted photo",
      "a pixelated photo",
      "a blurry photo",
  };
  return kPrompts;
}

inline std::vector<std::string> load_prompts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_prompts: cannot open " + path);
  std::vector<std::string> prompts;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (!line.empty()) prompts.push_back(line);
  }
  if (prompts.empty()) throw std::runtime_error("load_prompts: no prompts in " + path);
  return prompts;
}

struct PromptEnsemble {
  std::vector<std::string> prompts;
  std::vector<float> vector;  // unit norm
};

inline PromptEnsemble ensemble_prompts(const EmbeddingProvider& provider,
                                       const std::vector<std::string>& prompts) {
  if (prompts.empty()) throw std::invalid_argument("ensemble_prompts: empty prompt list");
  std::vector<double> acc(provider.dim(), 0.0);
  for (const std::string& p : prompts) {
    const std::vector<float> e = provider.embed_text(p);
    if (static_cast<int>(e.size()) != provider.dim())
      throw std::runtime_error("ensemble_prompts: provider dim mismatch");
    for (size_t i = 0; i < acc.size(); ++i) acc[i] += e[i];
  }
  std::vector<float> mean(acc.size());
  for (size_t i = 0; i < acc.size(); ++i)
    mean[i] = static_cast<float>(acc[i] / static_cast<double>(prompts.size()));
  PromptEnsemble out;
  out.prompts = prompts;
  out.vector = l2_normalize(std::move(mean));  // throws on antipodal cancellation
  return out;
}

inline std::pair<std::vector<float>, std::vector<std::vector<float>>> score_frames(
    const EmbeddingProvider& provider, const FrameSeq& seq, const PromptEnsemble& ensemble) {
  seq.validate();
  std::vector<float> scores;
  std::vector<std::vector<float>> embeddings;
  scores.reserve(seq.frames.size());
  embeddings.reserve(seq.frames.size());
  for (size_t i = 0; i < seq.frames.size(); ++i) {
    try {
      embeddings.push_back(provider.embed_image(seq.frames[i]));
      scores.push_back(static_cast<float>(dot(embeddings.back(), ensemble.vector)));
    } catch (const std::exception& e) {
      throw std::runtime_error("score_frames: frame " + std::to_string(i) + ": " + e.what());
    }
  }
  return {std::move(scores), std::move(embeddings)};
}

// Otsu's threshold over an equal-width histogram of the scores. Candidate
// thresholds are the upper edges of all bins but the last; the winner
// minimizes weighted intra-class variance, lowest edge on ties. Returns
// nullopt when every score is identical (degenerate histogram).
inline std::optional<float> otsu_threshold(const std::vector<float>& scores, int bins = 256) {
  if (scores.size() < 2) throw std::invalid_argument("otsu_threshold: need at least 2 scores");
  if (bins < 2) throw std::invalid_argument("otsu_threshold: need at least 2 bins");
  const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
  const double lo = *lo_it, hi = *hi_it;
  if (lo == hi) return std::nullopt;

  std::vector<int> hist(bins, 0);
  const double width = (hi - lo) / bins;
  for (float s : scores) {
    int b = static_cast<int>((s - lo) / width);
    hist[std::clamp(b, 0, bins - 1)]++;
  }

  // class statistics over bin centers, cumulative scan over split positions
  const double total = static_cast<double>(scores.size());
  double sum_all = 0.0;
  for (int b = 0; b < bins; ++b) sum_all += hist[b] * (lo + (b + 0.5) * width);

  double best_between = -1.0;
  int best_k = -1;
  double w0 = 0.0, sum0 = 0.0;
  for (int k = 0; k < bins - 1; ++k) {
    w0 += hist[k];
    sum0 += hist[k] * (lo + (k + 0.5) * width);
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double mu0 = sum0 / w0;
    const double mu1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (between > best_between) {
      best_between = between;
      best_k = k;
    }
  }
  if (best_k < 0) return std::nullopt;  // unreachable for non-degenerate input
  return static_cast<float>(lo + (best_k + 1) * width);
}

inline std::vector<int> classify_frames(const std::vector<float>& scores, float threshold) {
  std::vector<int> clean;
  for (size_t i = 0; i < scores.size(); ++i)
    if (scores[i] < threshold) clean.push_back(static_cast<int>(i));
  return clean;
}

enum class CleanSetFallback { kNone, kAllClean, kLowestPool };

inline const char* to_string(CleanSetFallback f) {
  switch (f) {
    case CleanSetFallback::kNone: return "none";
    case CleanSetFallback::kAllClean: return "all_clean";
    case CleanSetFallback::kLowestPool: return "lowest_pool";
  }
  throw std::invalid_argument("unknown fallback tag");
}

inline CleanSetFallback clean_set_fallback_from_string(const std::string& s) {
  if (s == "none") return CleanSetFallback::kNone;
  if (s == "all_clean") return CleanSetFallback::kAllClean;
  if (s == "lowest_pool") return CleanSetFallback::kLowestPool;
  throw std::invalid_argument("unknown fallback tag: " + s);
}

struct CleanSet {
  std::vector<float> scores;
  float threshold = 0.0f;
  std::vector<int> clean_indices;  // sorted ascending
  std::vector<std::vector<float>> image_embeddings;
  std::vector<std::string> prompts;
  CleanSetFallback fallback = CleanSetFallback::kNone;

  void validate() const {
    if (scores.empty()) throw std::invalid_argument("CleanSet: empty");
    if (!image_embeddings.empty() && image_embeddings.size() != scores.size())
      throw std::invalid_argument("CleanSet: embeddings/scores length mismatch");
    if (clean_indices.empty()) throw std::invalid_argument("CleanSet: empty clean set");
    if (!std::is_sorted(clean_indices.begin(), clean_indices.end()))
      throw std::invalid_argument("CleanSet: clean_indices not sorted");
    for (size_t i = 0; i < scores.size(); ++i) {
      const bool in = std::binary_search(clean_indices.begin(), clean_indices.end(),
                                         static_cast<int>(i));
      if (in != (scores[i] < threshold))
        throw std::invalid_argument("CleanSet: clean_indices inconsistent with threshold");
    }
  }
};

// Builds the clean set with the degenerate fallbacks: all-equal scores mark
// every frame clean; an empty clean set falls back to the min_pool
// lowest-score frames (plus score ties), so downstream selection always has
// at least min_pool candidates. In every case the set stays consistent with
// {i : scores[i] < threshold}.
inline CleanSet build_clean_set(std::vector<float> scores,
                                std::vector<std::vector<float>> image_embeddings,
                                std::vector<std::string> prompts, int bins = 256,
                                int min_pool = 5, bool skip_classification = false,
                                std::optional<float> override_threshold = std::nullopt) {
  if (scores.empty()) throw std::invalid_argument("build_clean_set: no scores");
  if (min_pool < 1) throw std::invalid_argument("build_clean_set: min_pool must be >= 1");
  CleanSet set;
  set.scores = std::move(scores);
  set.image_embeddings = std::move(image_embeddings);
  set.prompts = std::move(prompts);

  const float max_score = *std::max_element(set.scores.begin(), set.scores.end());
  const auto mark_all_clean = [&](CleanSetFallback why) {
    set.threshold = std::nextafter(max_score, std::numeric_limits<float>::infinity());
    set.fallback = why;
    set.clean_indices = classify_frames(set.scores, set.threshold);
  };

  if (skip_classification) {
    // reference-from-all-frames ablation switch
    mark_all_clean(CleanSetFallback::kNone);
    set.validate();
    return set;
  }

  std::optional<float> thr = override_threshold;
  if (!thr && set.scores.size() >= 2) thr = otsu_threshold(set.scores, bins);
  if (!thr) {
    mark_all_clean(CleanSetFallback::kAllClean);
    set.validate();
    return set;
  }

  set.threshold = *thr;
  set.clean_indices = classify_frames(set.scores, set.threshold);
  if (set.clean_indices.empty()) {
    const size_t pool = std::min<size_t>(min_pool, set.scores.size());
    if (pool == set.scores.size()) {
      mark_all_clean(CleanSetFallback::kLowestPool);
      set.validate();
      return set;
    }
    std::vector<float> sorted = set.scores;
    std::nth_element(sorted.begin(), sorted.begin() + (pool - 1), sorted.end());
    const float cutoff = sorted[pool - 1];
    set.threshold = std::nextafter(cutoff, std::numeric_limits<float>::infinity());
    set.fallback = CleanSetFallback::kLowestPool;
    set.clean_indices = classify_frames(set.scores, set.threshold);
  }
  set.validate();
  return set;
}

struct ReferenceSet {
  int window_center = 0;
  std::vector<int> indices;        // length D
  std::vector<float> similarities;  // cosine to the window-center embedding
};

// Top-D clean frames by cosine similarity to the window-center embedding.
// Ties break toward the lower frame index. When fewer than D clean frames
// exist the ranking is cycled from the top to pad out D entries.
inline ReferenceSet select_references(const CleanSet& clean,
                                      const std::vector<float>& center_embedding, int d,
                                      int window_center = 0) {
  if (d < 1) throw std::invalid_argument("select_references: D must be >= 1");
  if (clean.clean_indices.empty())
    throw std::invalid_argument("select_references: empty clean set");
  if (clean.image_embeddings.size() != clean.scores.size())
    throw std::invalid_argument("select_references: clean set lacks image embeddings");

  std::vector<std::pair<float, int>> ranked;
  ranked.reserve(clean.clean_indices.size());
  for (int idx : clean.clean_indices) {
    const float sim =
        static_cast<float>(dot(clean.image_embeddings[static_cast<size_t>(idx)], center_embedding));
    ranked.emplace_back(sim, idx);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  ReferenceSet out;
  out.window_center = window_center;
  for (int i = 0; i < d; ++i) {
    const auto& [sim, idx] = ranked[static_cast<size_t>(i) % ranked.size()];
    out.indices.push_back(idx);
    out.similarities.push_back(sim);
  }
  return out;
}

struct ClassificationReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_defined = true;
  bool recall_defined = true;
  bool f1_defined = true;
  int tp = 0, fp = 0, fn = 0, tn = 0;
};

// Binary metrics with clean as the positive class.
inline ClassificationReport classification_report(const std::vector<int>& predicted_clean,
                                                  const std::vector<int>& oracle_clean, int n) {
  std::vector<char> pred(n, 0), truth(n, 0);
  for (int i : predicted_clean) {
    if (i < 0 || i >= n) throw std::invalid_argument("classification_report: index out of range");
    pred[i] = 1;
  }
  for (int i : oracle_clean) {
    if (i < 0 || i >= n) throw std::invalid_argument("classification_report: index out of range");
    truth[i] = 1;
  }
  ClassificationReport r;
  for (int i = 0; i < n; ++i) {
    if (pred[i] && truth[i]) r.tp++;
    else if (pred[i] && !truth[i]) r.fp++;
    else if (!pred[i] && truth[i]) r.fn++;
    else r.tn++;
  }
  r.accuracy = n > 0 ? static_cast<double>(r.tp + r.tn) / n : 0.0;
  if (r.tp + r.fp > 0) r.precision = static_cast<double>(r.tp) / (r.tp + r.fp);
  else r.precision_defined = false;
  if (r.tp + r.fn > 0) r.recall = static_cast<double>(r.tp) / (r.tp + r.fn);
  else r.recall_defined = false;
  if (r.precision_defined && r.recall_defined && r.precision + r.recall > 0.0)
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  else r.f1_defined = false;
  return r;
}

// --- deterministic toy embedding provider ------------------------------------
//
// Stands in for a vision-language model so the pipeline is testable offline.
// A fixed unit direction u marks "degraded"; an image embeds as
// s*u + sqrt(1-s^2)*w with w a content-hash unit vector orthogonal to u and
// s a clamped multiple of the mean absolute vertical pixel difference, so
// noisier frames land closer to u. Text embeds as u plus a small
// prompt-hash perturbation, keeping every artifact prompt near u.
class DeterministicToyProvider : public EmbeddingProvider {
 public:
  explicit DeterministicToyProvider(uint64_t seed = 1234, int dim = 64, double energy_gain = 1.0,
                                    double prompt_jitter = 0.05)
      : dim_(dim), energy_gain_(energy_gain), prompt_jitter_(prompt_jitter) {
    if (dim < 4) throw std::invalid_argument("DeterministicToyProvider: dim too small");
    u_ = random_unit(seed, 0xdeb7);
  }

  int dim() const override { return dim_; }

  const std::vector<float>& degraded_direction() const { return u_; }

  // mean absolute vertical neighbor difference, the degradation proxy
  static double frame_energy(const Frame& frame) {
    if (frame.height() < 2) return 0.0;
    double acc = 0.0;
    for (int y = 0; y + 1 < frame.height(); ++y)
      for (int x = 0; x < frame.width(); ++x)
        for (int c = 0; c < 3; ++c)
          acc += std::abs(static_cast<double>(frame.at(y + 1, x, c)) - frame.at(y, x, c));
    return acc / (static_cast<double>(frame.height() - 1) * frame.width() * 3);
  }

  std::vector<float> embed_image(const Frame& frame) const override {
    const double s = std::clamp(energy_gain_ * frame_energy(frame), 0.0, 1.0);
    std::vector<float> w = orthogonal_unit(hash_frame(frame), 0x1a9e);
    std::vector<float> out(dim_);
    const double t = std::sqrt(std::max(0.0, 1.0 - s * s));
    for (int i = 0; i < dim_; ++i) out[i] = static_cast<float>(s * u_[i] + t * w[i]);
    return out;
  }

  std::vector<float> embed_text(const std::string& text) const override {
    std::vector<float> h = orthogonal_unit(hash_string(text), 0x7e47);
    std::vector<float> v(dim_);
    for (int i = 0; i < dim_; ++i)
      v[i] = static_cast<float>(u_[i] + prompt_jitter_ * h[i]);
    return l2_normalize(std::move(v));
  }

 private:
  std::vector<float> random_unit(uint64_t key, uint64_t stream) const {
    KeyedRng rng(key, stream);
    std::vector<float> v(dim_);
    for (int i = 0; i < dim_; ++i) v[i] = static_cast<float>(rng.next_gaussian());
    return l2_normalize(std::move(v));
  }

  // unit vector orthogonal to u_, deterministic in key
  std::vector<float> orthogonal_unit(uint64_t key, uint64_t stream) const {
    for (uint64_t attempt = 0;; ++attempt) {
      std::vector<float> v = random_unit(key + attempt, stream);
      const double proj = dot(v, u_);
      std::vector<double> r(dim_);
      double norm2 = 0.0;
      for (int i = 0; i < dim_; ++i) {
        r[i] = static_cast<double>(v[i]) - proj * u_[i];
        norm2 += r[i] * r[i];
      }
      if (norm2 < 1e-12) continue;  // parallel draw, retry
      const double inv = 1.0 / std::sqrt(norm2);
      std::vector<float> out(dim_);
      for (int i = 0; i < dim_; ++i) out[i] = static_cast<float>(r[i] * inv);
      return out;
    }
  }

  static uint64_t hash_string(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }

  static uint64_t hash_frame(const Frame& frame) {
    uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](uint64_t x) {
      h ^= x;
      h *= 0x100000001b3ull;
    };
    mix(static_cast<uint64_t>(frame.height()));
    mix(static_cast<uint64_t>(frame.width()));
    for (float p : frame.pixels()) {
      uint32_t bits;
      static_assert(sizeof(bits) == sizeof(p));
      std::memcpy(&bits, &p, sizeof(bits));
      mix(bits);
    }
    return h;
  }

  int dim_;
  double energy_gain_;
  double prompt_jitter_;
  std::vector<float> u_;
};

// --- JSON export --------------------------------------------------------------

inline constexpr int kCleanSetFormatVersion = 1;

inline void to_json(nlohmann::json& j, const CleanSet& s) {
  j = {{"version", kCleanSetFormatVersion},
       {"scores", s.scores},
       {"threshold", s.threshold},
       {"clean_indices", s.clean_indices},
       {"prompts", s.prompts},
       {"fallback", to_string(s.fallback)}};
}

inline void from_json(const nlohmann::json& j, CleanSet& s) {
  s = CleanSet{};
  if (j.at("version").get<int>() != kCleanSetFormatVersion)
    throw std::runtime_error("CleanSet: unsupported format version");
  j.at("scores").get_to(s.scores);
  j.at("threshold").get_to(s.threshold);
  j.at("clean_indices").get_to(s.clean_indices);
  j.at("prompts").get_to(s.prompts);
  s.fallback = clean_set_fallback_from_string(j.at("fallback").get<std::string>());
}

inline void to_json(nlohmann::json& j, const ClassificationReport& r) {
  j = {{"accuracy", r.accuracy},
       {"precision", r.precision},
       {"recall", r.recall},
       {"f1", r.f1},
       {"precision_defined", r.precision_defined},
       {"recall_defined", r.recall_defined},
       {"f1_defined", r.f1_defined},
       {"tp", r.tp},
       {"fp", r.fp},
       {"fn", r.fn},
       {"tn", r.tn}};
}

}  // namespace tape
