#pragma once

// full-reference metrics over frame directories: PSNR and SSIM per frame,
// per-video and test-set aggregation, and temporal profiles (a pixel column
// stacked over time) for judging temporal stability by eye or by row
// deviation

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tape/media_io.hpp"

namespace tape {

// reports cap unbounded PSNR at this value; the raw flag survives in JSON
inline constexpr double kPsnrCap = 99.0;

template <typename T>
double psnr_data(const std::vector<T>& a, const std::vector<T>& b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("psnr: element counts differ or are empty");
  double mse = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

// peak-1.0 PSNR over all RGB samples; identical frames give +infinity
inline double psnr(const Frame& a, const Frame& b) {
  if (!a.same_dims(b)) throw std::invalid_argument("psnr: frame dimensions differ");
  return psnr_data(a.pixels(), b.pixels());
}

inline double cap_psnr(double v) { return std::min(v, kPsnrCap); }

namespace detail {

inline const std::array<double, 11>& gaussian11() {
  static const std::array<double, 11> k = [] {
    std::array<double, 11> g{};
    const double sigma = 1.5;
    double sum = 0;
    for (int i = 0; i < 11; ++i) {
      const double d = i - 5;
      g[static_cast<size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
      sum += g[static_cast<size_t>(i)];
    }
    for (auto& v : g) v /= sum;
    return g;
  }();
  return k;
}

inline std::vector<double> luma(const Frame& f) {
  std::vector<double> y(static_cast<size_t>(f.height()) * static_cast<size_t>(f.width()));
  size_t i = 0;
  for (int yy = 0; yy < f.height(); ++yy)
    for (int xx = 0; xx < f.width(); ++xx)
      y[i++] = 0.299 * f.at(yy, xx, 0) + 0.587 * f.at(yy, xx, 1) + 0.114 * f.at(yy, xx, 2);
  return y;
}

// separable 11x11 Gaussian over the valid region: (H, W) -> (H-10, W-10)
inline std::vector<double> gauss_valid(const std::vector<double>& img, int H, int W) {
  const auto& k = gaussian11();
  const int Wv = W - 10, Hv = H - 10;
  std::vector<double> tmp(static_cast<size_t>(H) * static_cast<size_t>(Wv), 0.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < Wv; ++x) {
      double acc = 0;
      for (int i = 0; i < 11; ++i)
        acc += k[static_cast<size_t>(i)] * img[static_cast<size_t>(y * W + x + i)];
      tmp[static_cast<size_t>(y * Wv + x)] = acc;
    }
  std::vector<double> out(static_cast<size_t>(Hv) * static_cast<size_t>(Wv), 0.0);
  for (int y = 0; y < Hv; ++y)
    for (int x = 0; x < Wv; ++x) {
      double acc = 0;
      for (int i = 0; i < 11; ++i)
        acc += k[static_cast<size_t>(i)] * tmp[static_cast<size_t>((y + i) * Wv + x)];
      out[static_cast<size_t>(y * Wv + x)] = acc;
    }
  return out;
}

}  // namespace detail

// mean local SSIM on luma (ITU-R BT.601 weights): 11x11 Gaussian window with
// sigma 1.5, K1=0.01, K2=0.03, peak 1.0, valid region only
inline double ssim(const Frame& a, const Frame& b) {
  if (!a.same_dims(b)) throw std::invalid_argument("ssim: frame dimensions differ");
  const int H = a.height(), W = a.width();
  if (H < 11 || W < 11)
    throw std::invalid_argument("ssim: frames smaller than the 11x11 window");
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;

  std::vector<double> la = detail::luma(a), lb = detail::luma(b);
  std::vector<double> laa(la.size()), lbb(la.size()), lab(la.size());
  for (size_t i = 0; i < la.size(); ++i) {
    laa[i] = la[i] * la[i];
    lbb[i] = lb[i] * lb[i];
    lab[i] = la[i] * lb[i];
  }
  std::vector<double> mu1 = detail::gauss_valid(la, H, W);
  std::vector<double> mu2 = detail::gauss_valid(lb, H, W);
  std::vector<double> s11 = detail::gauss_valid(laa, H, W);
  std::vector<double> s22 = detail::gauss_valid(lbb, H, W);
  std::vector<double> s12 = detail::gauss_valid(lab, H, W);

  double total = 0;
  for (size_t i = 0; i < mu1.size(); ++i) {
    const double var1 = s11[i] - mu1[i] * mu1[i];
    const double var2 = s22[i] - mu2[i] * mu2[i];
    const double cov = s12[i] - mu1[i] * mu2[i];
    total += ((2 * mu1[i] * mu2[i] + C1) * (2 * cov + C2)) /
             ((mu1[i] * mu1[i] + mu2[i] * mu2[i] + C1) * (var1 + var2 + C2));
  }
  return total / static_cast<double>(mu1.size());
}

// --- temporal profiles -----------------------------------------------------------------

struct PatchBounds {
  int y0 = 0, x0 = 0, height = 0, width = 0;
};

inline void to_json(nlohmann::json& j, const PatchBounds& p) {
  j = {{"y0", p.y0}, {"x0", p.x0}, {"height", p.height}, {"width", p.width}};
}

inline void from_json(const nlohmann::json& j, PatchBounds& p) {
  p.y0 = j.value("y0", 0);
  p.x0 = j.value("x0", 0);
  p.height = j.value("height", 0);
  p.width = j.value("width", 0);
}

// row t of the profile is the chosen pixel column at time t laid out
// horizontally; a static clip therefore yields identical rows
struct TemporalProfile {
  int column_index = 0;
  PatchBounds patch;
  Frame profile;  // (frames) rows x (patch height) columns
};

inline TemporalProfile temporal_profile(const FrameSeq& seq, PatchBounds patch, int column) {
  seq.validate();
  const int H = seq.height(), W = seq.width();
  if (patch.height <= 0 || patch.width <= 0 || patch.y0 < 0 || patch.x0 < 0 ||
      patch.y0 + patch.height > H || patch.x0 + patch.width > W)
    throw std::invalid_argument("temporal_profile: patch out of bounds");
  if (column < 0 || column >= patch.width)
    throw std::invalid_argument("temporal_profile: column outside the patch");

  TemporalProfile out;
  out.column_index = column;
  out.patch = patch;
  out.profile = Frame(static_cast<int>(seq.size()), patch.height);
  for (size_t t = 0; t < seq.size(); ++t)
    for (int i = 0; i < patch.height; ++i)
      for (int c = 0; c < 3; ++c)
        out.profile.at(static_cast<int>(t), i, c) =
            seq.frames[t].at(patch.y0 + i, patch.x0 + column, c);
  return out;
}

// mean absolute deviation of each profile row from the elementwise median
// across rows; clean frames of a static scene score exactly zero
inline std::vector<double> profile_row_deviation(const Frame& profile) {
  const int T = profile.height(), L = profile.width();
  std::vector<double> dev(static_cast<size_t>(T), 0.0);
  std::vector<float> column(static_cast<size_t>(T));
  for (int i = 0; i < L; ++i)
    for (int c = 0; c < 3; ++c) {
      for (int t = 0; t < T; ++t) column[static_cast<size_t>(t)] = profile.at(t, i, c);
      std::vector<float> sorted = column;
      std::nth_element(sorted.begin(), sorted.begin() + T / 2, sorted.end());
      const double median = sorted[static_cast<size_t>(T / 2)];
      for (int t = 0; t < T; ++t)
        dev[static_cast<size_t>(t)] += std::abs(column[static_cast<size_t>(t)] - median);
    }
  for (auto& d : dev) d /= static_cast<double>(L * 3);
  return dev;
}

// --- reports ----------------------------------------------------------------------------

struct FrameMetrics {
  double psnr = 0;  // capped at kPsnrCap
  bool psnr_unbounded = false;
  double ssim = 0;
};

struct VideoMetrics {
  std::string name;
  std::vector<FrameMetrics> frames;
  double mean_psnr = 0;
  double mean_ssim = 0;
  int psnr_unbounded_frames = 0;
};

struct MetricReport {
  std::vector<VideoMetrics> videos;
  double mean_psnr = 0;  // mean of per-video means
  double mean_ssim = 0;
  std::map<std::string, double> external;  // adapter-filled metrics, never required
};

inline void to_json(nlohmann::json& j, const FrameMetrics& m) {
  j = {{"psnr", m.psnr}, {"psnr_unbounded", m.psnr_unbounded}, {"ssim", m.ssim}};
}

inline void to_json(nlohmann::json& j, const VideoMetrics& v) {
  j = {{"name", v.name},
       {"mean_psnr", v.mean_psnr},
       {"mean_ssim", v.mean_ssim},
       {"psnr_unbounded_frames", v.psnr_unbounded_frames},
       {"frames", v.frames}};
}

inline void to_json(nlohmann::json& j, const MetricReport& r) {
  j = {{"mean_psnr", r.mean_psnr},
       {"mean_ssim", r.mean_ssim},
       {"videos", r.videos},
       {"external", r.external}};
}

// per-frame metrics for one restored/ground-truth pair on center crops of at
// most 512x512 (smaller frames are used whole)
inline VideoMetrics evaluate_video(const FrameSeq& restored, const FrameSeq& gt,
                                   const std::string& name) {
  if (restored.size() != gt.size())
    throw std::runtime_error("evaluate: video " + name + " has " +
                             std::to_string(restored.size()) + " restored vs " +
                             std::to_string(gt.size()) + " ground-truth frames");
  VideoMetrics v;
  v.name = name;
  for (size_t i = 0; i < restored.size(); ++i) {
    const Frame& r = restored.frames[i];
    const Frame& g = gt.frames[i];
    if (!r.same_dims(g))
      throw std::runtime_error("evaluate: frame " + std::to_string(i) + " of " + name +
                               " has mismatched dimensions");
    const int ch = std::min(512, r.height()), cw = std::min(512, r.width());
    const Frame rc = center_crop(r, ch, cw);
    const Frame gc = center_crop(g, ch, cw);
    FrameMetrics m;
    const double raw = psnr(rc, gc);
    m.psnr_unbounded = std::isinf(raw);
    m.psnr = cap_psnr(raw);
    m.ssim = ssim(rc, gc);
    v.frames.push_back(m);
    v.mean_psnr += m.psnr;
    v.mean_ssim += m.ssim;
    v.psnr_unbounded_frames += m.psnr_unbounded ? 1 : 0;
  }
  v.mean_psnr /= static_cast<double>(v.frames.size());
  v.mean_ssim /= static_cast<double>(v.frames.size());
  return v;
}

namespace detail {

inline std::vector<std::string> video_dir_names(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root))
    throw std::runtime_error("evaluate: no such directory: " + root.string());
  std::vector<std::string> names;
  for (const auto& e : std::filesystem::directory_iterator(root))
    if (e.is_directory()) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace detail

// walks matching video subdirectories (or treats the roots as one video when
// neither has any) and averages per-video means into the test-set mean
inline MetricReport evaluate_testset(const std::filesystem::path& restored_root,
                                     const std::filesystem::path& gt_root) {
  std::vector<std::string> rv = detail::video_dir_names(restored_root);
  std::vector<std::string> gv = detail::video_dir_names(gt_root);
  if (rv != gv) {
    std::string msg = "evaluate: video sets differ; restored has [";
    for (const auto& n : rv) msg += n + " ";
    msg += "], ground truth has [";
    for (const auto& n : gv) msg += n + " ";
    msg += "]";
    throw std::runtime_error(msg);
  }

  MetricReport report;
  if (rv.empty()) {
    report.videos.push_back(evaluate_video(load_frame_dir(restored_root),
                                           load_frame_dir(gt_root),
                                           restored_root.filename().string()));
  } else {
    for (const auto& name : rv)
      report.videos.push_back(
          evaluate_video(load_frame_dir(restored_root / name), load_frame_dir(gt_root / name),
                         name));
  }
  for (const auto& v : report.videos) {
    report.mean_psnr += v.mean_psnr;
    report.mean_ssim += v.mean_ssim;
  }
  report.mean_psnr /= static_cast<double>(report.videos.size());
  report.mean_ssim /= static_cast<double>(report.videos.size());
  return report;
}

}  // namespace tape
