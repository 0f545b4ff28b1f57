// Frame/FrameSeq types and PNG directory I/O.
//
// Frames are RGB float arrays in [0,1]. Clips are stored on disk as
// directories of zero-padded 8-bit PNGs (<clip>/{degraded,gt}/NNNNNN.png),
// which keeps every pipeline stage bit-reproducible.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

namespace tape {

class Frame {
 public:
  Frame() = default;

  Frame(int height, int width)
      : height_(height), width_(width),
        pixels_(static_cast<size_t>(check_dims(height, width)) * 3, 0.0f) {}

  Frame(int height, int width, std::vector<float> pixels)
      : height_(height), width_(width), pixels_(std::move(pixels)) {
    check_dims(height, width);
    if (pixels_.size() != static_cast<size_t>(height) * width * 3)
      throw std::invalid_argument("Frame: pixel buffer size does not match dimensions");
    for (float v : pixels_) {
      if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
        throw std::invalid_argument("Frame: pixel values must be finite and within [0,1]");
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return pixels_.empty(); }

  float& at(int y, int x, int c) { return pixels_[idx(y, x, c)]; }
  float at(int y, int x, int c) const { return pixels_[idx(y, x, c)]; }

  const std::vector<float>& pixels() const { return pixels_; }
  std::vector<float>& pixels() { return pixels_; }

  bool same_dims(const Frame& o) const {
    return height_ == o.height_ && width_ == o.width_;
  }

 private:
  static int check_dims(int h, int w) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("Frame: dimensions must be positive");
    return h * w;
  }
  size_t idx(int y, int x, int c) const {
    return (static_cast<size_t>(y) * width_ + x) * 3 + c;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> pixels_;
};

struct FrameSeq {
  std::vector<Frame> frames;
  float fps = 25.0f;  // metadata only

  void validate() const {
    if (frames.empty()) throw std::invalid_argument("FrameSeq: must contain at least one frame");
    if (fps <= 0.0f) throw std::invalid_argument("FrameSeq: fps must be positive");
    for (const Frame& f : frames)
      if (!f.same_dims(frames.front()))
        throw std::invalid_argument("FrameSeq: frames must share dimensions");
  }

  int height() const { return frames.front().height(); }
  int width() const { return frames.front().width(); }
  size_t size() const { return frames.size(); }
};

struct PairedClip {
  FrameSeq degraded;
  FrameSeq ground_truth;        // may be empty for real-world clips
  bool has_ground_truth = false;
  std::filesystem::path recipe_path;

  void validate() const {
    degraded.validate();
    if (has_ground_truth) {
      ground_truth.validate();
      if (ground_truth.size() != degraded.size() ||
          ground_truth.height() != degraded.height() ||
          ground_truth.width() != degraded.width())
        throw std::invalid_argument("PairedClip: ground truth must match degraded clip");
    }
  }
};

// round-half-up quantization; the documented storage rule
inline uint8_t quantize_8bit(float v) {
  float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<uint8_t>(std::floor(c * 255.0f + 0.5f));
}

inline float dequantize_8bit(uint8_t v) { return static_cast<float>(v) / 255.0f; }

namespace detail {

struct PngReadCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* fp = nullptr;
  ~PngReadCloser() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (fp) std::fclose(fp);
  }
};

struct PngWriteCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* fp = nullptr;
  ~PngWriteCloser() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (fp) std::fclose(fp);
  }
};

}  // namespace detail

inline Frame load_png(const std::filesystem::path& path) {
  detail::PngReadCloser ctx;
  ctx.fp = std::fopen(path.string().c_str(), "rb");
  if (!ctx.fp) throw std::runtime_error("load_png: cannot open " + path.string());

  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!ctx.png) throw std::runtime_error("load_png: png_create_read_struct failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) throw std::runtime_error("load_png: png_create_info_struct failed");
  if (setjmp(png_jmpbuf(ctx.png)))
    throw std::runtime_error("load_png: libpng error while reading " + path.string());

  png_init_io(ctx.png, ctx.fp);
  png_read_info(ctx.png, ctx.info);

  png_uint_32 w = png_get_image_width(ctx.png, ctx.info);
  png_uint_32 h = png_get_image_height(ctx.png, ctx.info);
  int color = png_get_color_type(ctx.png, ctx.info);
  int depth = png_get_bit_depth(ctx.png, ctx.info);

  // normalize any input to 8-bit RGB
  if (depth == 16) png_set_strip_16(ctx.png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(ctx.png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(ctx.png);
  if (png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(ctx.png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(ctx.png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(ctx.png);
  png_read_update_info(ctx.png, ctx.info);

  std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
  Frame frame(static_cast<int>(h), static_cast<int>(w));
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(ctx.png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        frame.at(static_cast<int>(y), static_cast<int>(x), c) =
            dequantize_8bit(row[x * 3 + c]);
  }
  png_read_end(ctx.png, nullptr);
  return frame;
}

inline void save_png(const Frame& frame, const std::filesystem::path& path) {
  detail::PngWriteCloser ctx;
  ctx.fp = std::fopen(path.string().c_str(), "wb");
  if (!ctx.fp) throw std::runtime_error("save_png: cannot open " + path.string() + " for writing");

  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!ctx.png) throw std::runtime_error("save_png: png_create_write_struct failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) throw std::runtime_error("save_png: png_create_info_struct failed");
  if (setjmp(png_jmpbuf(ctx.png)))
    throw std::runtime_error("save_png: libpng error while writing " + path.string());

  png_init_io(ctx.png, ctx.fp);
  png_set_IHDR(ctx.png, ctx.info, frame.width(), frame.height(), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ctx.png, ctx.info);

  std::vector<uint8_t> row(static_cast<size_t>(frame.width()) * 3);
  for (int y = 0; y < frame.height(); ++y) {
    for (int x = 0; x < frame.width(); ++x)
      for (int c = 0; c < 3; ++c) row[x * 3 + c] = quantize_8bit(frame.at(y, x, c));
    png_write_row(ctx.png, row.data());
  }
  png_write_end(ctx.png, nullptr);
}

inline std::string frame_filename(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d.png", index);
  return buf;
}

// Loads a directory of PNGs named by zero-padded frame index. Indices must
// form a contiguous run; gaps are reported explicitly.
inline FrameSeq load_frame_dir(const std::filesystem::path& dir, float fps = 25.0f) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw std::runtime_error("load_frame_dir: no such directory: " + dir.string());

  std::map<long, fs::path> by_index;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    fs::path p = entry.path();
    if (p.extension() != ".png") continue;
    const std::string stem = p.stem().string();
    if (stem.empty() || stem.find_first_not_of("0123456789") != std::string::npos) continue;
    by_index.emplace(std::stol(stem), p);
  }
  if (by_index.empty())
    throw std::runtime_error("load_frame_dir: no indexed .png frames in " + dir.string());

  long first = by_index.begin()->first;
  long last = by_index.rbegin()->first;
  if (static_cast<long>(by_index.size()) != last - first + 1) {
    std::string gaps;
    for (long i = first; i <= last; ++i) {
      if (!by_index.count(i)) {
        if (!gaps.empty()) gaps += ", ";
        gaps += std::to_string(i);
      }
    }
    throw std::runtime_error("load_frame_dir: non-contiguous frame indices in " +
                             dir.string() + "; missing: " + gaps);
  }

  FrameSeq seq;
  seq.fps = fps;
  seq.frames.reserve(by_index.size());
  for (const auto& [index, path] : by_index) {
    Frame f = load_png(path);
    if (!seq.frames.empty() && !f.same_dims(seq.frames.front()))
      throw std::runtime_error("load_frame_dir: inconsistent dimensions at " + path.string());
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

inline void save_frame_dir(const FrameSeq& seq, const std::filesystem::path& dir) {
  seq.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (!std::filesystem::is_directory(dir))
    throw std::runtime_error("save_frame_dir: cannot create directory " + dir.string());
  for (size_t i = 0; i < seq.frames.size(); ++i)
    save_png(seq.frames[i], dir / frame_filename(static_cast<int>(i)));
}

// Crop anchored at (floor((H-h)/2), floor((W-w)/2)); odd remainders go to
// the bottom/right.
inline Frame center_crop(const Frame& frame, int h, int w) {
  if (h <= 0 || w <= 0) throw std::invalid_argument("center_crop: target must be positive");
  if (h > frame.height() || w > frame.width())
    throw std::invalid_argument("center_crop: crop larger than frame");
  const int y0 = (frame.height() - h) / 2;
  const int x0 = (frame.width() - w) / 2;
  Frame out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = frame.at(y0 + y, x0 + x, c);
  return out;
}

}  // namespace tape
