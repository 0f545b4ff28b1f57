// Swin-UNet restoration network with multi-reference fusion.
//
// Encoder/decoder of windowed 3D transformer blocks over T input frames with
// patch merging/expanding between scales. A frozen per-frame transformer
// extracts a multi-scale feature pyramid from D reference frames; at each
// decoder scale a pair of fusion blocks cross-attends the processed features
// against the reference windows and adds the result back.
//
// Fusion math per window, per head:
//   Q = F_P Pq, K_d = F_R[d] Pk, V_d = F_R[d] Pv
//   A_{t,d} = softmax(Q_t K_d^T / sqrt(C_head) + B)      B from a relative table
//   G_{t,d} = A_{t,d} V_d                                 -> (T, D, M^2, C)
//   pooled  = MHA(query = mean_d G, key/value = concat_d G)
//   out     = pooled + MLP(LN(pooled))
// The second block of a pair repeats this on half-window-shifted grids with
// the first block's output as the query source.
//
// All reductions across the D axis go through order-canonical ops, so the
// output is exactly invariant to reference permutation, not just up to
// floating-point reassociation.
#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tape/rng.hpp"
#include "tape/tensor.hpp"

namespace tape {

// --- configuration -----------------------------------------------------------

enum class FusionMode { kMrsff, kSwin3dCross };
enum class PoolingMode { kAttention, kAverage };

inline std::string to_string(FusionMode m) {
  return m == FusionMode::kMrsff ? "mrsff" : "swin3d_cross";
}
inline std::string to_string(PoolingMode m) {
  return m == PoolingMode::kAttention ? "attention" : "average";
}
inline FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "mrsff") return FusionMode::kMrsff;
  if (s == "swin3d_cross") return FusionMode::kSwin3dCross;
  throw std::invalid_argument("unknown fusion_mode: " + s);
}
inline PoolingMode pooling_mode_from_string(const std::string& s) {
  if (s == "attention") return PoolingMode::kAttention;
  if (s == "average") return PoolingMode::kAverage;
  throw std::invalid_argument("unknown pooling_mode: " + s);
}

struct NetConfig {
  int t_frames = 5;    // frames restored per window
  int d_refs = 5;      // reference frames fused per window
  int window = 8;      // attention window side M
  int embed_dim = 96;  // base channels C
  int stages = 3;
  std::vector<int> heads_per_stage;  // empty = max(1, C_s/32), stages+1 entries
  double mlp_ratio = 4.0;
  int depth_per_stage = 2;  // transformer blocks per stage
  FusionMode fusion_mode = FusionMode::kMrsff;
  PoolingMode pooling_mode = PoolingMode::kAttention;

  int stage_channels(int s) const { return embed_dim << s; }

  int stage_heads(int s) const {
    if (!heads_per_stage.empty()) return heads_per_stage[static_cast<size_t>(s)];
    return std::max(1, stage_channels(s) / 32);
  }

  // spatial dims are padded to a multiple of this before the forward pass
  int pad_multiple() const { return window << stages; }

  void validate() const {
    if (t_frames < 1 || d_refs < 1) throw std::invalid_argument("NetConfig: T and D must be >= 1");
    if (window < 1) throw std::invalid_argument("NetConfig: window must be >= 1");
    if (embed_dim < 1 || stages < 1 || depth_per_stage < 1)
      throw std::invalid_argument("NetConfig: embed_dim, stages, depth must be >= 1");
    if (mlp_ratio <= 0) throw std::invalid_argument("NetConfig: mlp_ratio must be positive");
    if (!heads_per_stage.empty() &&
        heads_per_stage.size() != static_cast<size_t>(stages) + 1)
      throw std::invalid_argument("NetConfig: heads_per_stage needs stages+1 entries");
    for (int s = 0; s <= stages; ++s) {
      const int h = stage_heads(s);
      if (h < 1 || stage_channels(s) % h != 0)
        throw std::invalid_argument("NetConfig: stage " + std::to_string(s) +
                                    " channels not divisible by head count");
    }
  }
};

inline void to_json(nlohmann::json& j, const NetConfig& c) {
  j = nlohmann::json{{"t_frames", c.t_frames},
                     {"d_refs", c.d_refs},
                     {"window", c.window},
                     {"embed_dim", c.embed_dim},
                     {"stages", c.stages},
                     {"heads_per_stage", c.heads_per_stage},
                     {"mlp_ratio", c.mlp_ratio},
                     {"depth_per_stage", c.depth_per_stage},
                     {"fusion_mode", to_string(c.fusion_mode)},
                     {"pooling_mode", to_string(c.pooling_mode)}};
}

inline void from_json(const nlohmann::json& j, NetConfig& c) {
  c = NetConfig{};
  c.t_frames = j.value("t_frames", c.t_frames);
  c.d_refs = j.value("d_refs", c.d_refs);
  c.window = j.value("window", c.window);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.stages = j.value("stages", c.stages);
  c.heads_per_stage = j.value("heads_per_stage", c.heads_per_stage);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.depth_per_stage = j.value("depth_per_stage", c.depth_per_stage);
  c.fusion_mode = fusion_mode_from_string(j.value("fusion_mode", std::string("mrsff")));
  c.pooling_mode = pooling_mode_from_string(j.value("pooling_mode", std::string("attention")));
}

// --- parameter registry --------------------------------------------------------

template <typename T>
class ParamStore {
 public:
  Tensor<T> add(const std::string& name, Tensor<T> t) {
    if (map_.count(name)) throw std::logic_error("duplicate parameter: " + name);
    names_.push_back(name);
    map_.emplace(name, t);
    return t;
  }

  Tensor<T>& at(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }

  const Tensor<T>& at(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return map_.count(name) > 0; }
  const std::vector<std::string>& names() const { return names_; }
  size_t size() const { return names_.size(); }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& name : names_) n += map_.at(name).numel();
    return n;
  }

  void set_requires_grad(bool v) {
    for (const auto& name : names_) map_.at(name).set_requires_grad(v);
  }

  void zero_grad() {
    for (const auto& name : names_) map_.at(name).zero_grad();
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, Tensor<T>> map_;
};

namespace detail {

inline uint64_t name_hash(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

enum class Init { kZero, kOne, kTruncNormal };

template <typename T>
Tensor<T> register_param(ParamStore<T>& store, const std::string& name, Shape shape, Init init,
                         uint64_t seed, bool trainable) {
  const size_t n = static_cast<size_t>(shape_numel(shape));
  std::vector<T> data(n, T(0));
  if (init == Init::kOne) {
    std::fill(data.begin(), data.end(), T(1));
  } else if (init == Init::kTruncNormal) {
    KeyedRng rng(seed, name_hash(name));
    for (auto& v : data) {
      double z;
      do {
        z = rng.next_gaussian();
      } while (std::abs(z) > 2.0);
      v = static_cast<T>(z * 0.02);
    }
  }
  return store.add(name, Tensor<T>::from_data(std::move(shape), std::move(data), trainable));
}

// cached immutable index maps keyed by the integers that determine them
using IndexMap = std::shared_ptr<const std::vector<int64_t>>;

template <typename BuildFn>
IndexMap cached_map(std::map<std::vector<int64_t>, IndexMap>& cache,
                    const std::vector<int64_t>& key, BuildFn&& build) {
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto map = std::make_shared<std::vector<int64_t>>(build());
  cache.emplace(key, map);
  return map;
}

}  // namespace detail

// --- grid ops ---------------------------------------------------------------------

// (F, H, W, C) -> (num_windows, F, M^2, C); windows row-major over the grid,
// tokens row-major within a window
template <typename T>
Tensor<T> window_partition(const Tensor<T>& grid, int M) {
  const int64_t F = grid.dim(0), H = grid.dim(1), W = grid.dim(2), C = grid.dim(3);
  if (H % M != 0 || W % M != 0)
    throw std::invalid_argument("window_partition: dims " + shape_str(grid.shape()) +
                                " not divisible by window " + std::to_string(M));
  Tensor<T> x = reshape(grid, {F, H / M, M, W / M, M, C});
  x = permute(x, {1, 3, 0, 2, 4, 5});
  return reshape(x, {(H / M) * (W / M), F, static_cast<int64_t>(M) * M, C});
}

template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, int M, int64_t H, int64_t W) {
  const int64_t F = windows.dim(1), C = windows.dim(3);
  Tensor<T> x = reshape(windows, {H / M, W / M, F, M, M, C});
  x = permute(x, {2, 0, 3, 1, 4, 5});
  return reshape(x, {F, H, W, C});
}

// token at (y, x) moves to ((y - dy) mod H, (x - dx) mod W)
template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& grid, int dy, int dx) {
  if (dy == 0 && dx == 0) return grid;
  const int64_t F = grid.dim(0), H = grid.dim(1), W = grid.dim(2), C = grid.dim(3);
  static std::map<std::vector<int64_t>, detail::IndexMap> cache;
  detail::IndexMap idx = detail::cached_map(cache, {F, H, W, C, dy, dx}, [&] {
    std::vector<int64_t> map(static_cast<size_t>(F * H * W * C));
    size_t o = 0;
    for (int64_t f = 0; f < F; ++f)
      for (int64_t y = 0; y < H; ++y) {
        const int64_t sy = ((y + dy) % H + H) % H;
        for (int64_t x = 0; x < W; ++x) {
          const int64_t sx = ((x + dx) % W + W) % W;
          const int64_t base = ((f * H + sy) * W + sx) * C;
          for (int64_t c = 0; c < C; ++c) map[o++] = base + c;
        }
      }
    return map;
  });
  return pixel_gather(grid, idx, {F, H, W, C});
}

// reflect-pad (mirror without repeating the border sample) H and W up to
// multiples of `mult`; pads on the bottom/right
template <typename T>
Tensor<T> reflect_pad_to_multiple(const Tensor<T>& grid, int mult) {
  const int64_t F = grid.dim(0), H = grid.dim(1), W = grid.dim(2), C = grid.dim(3);
  const int64_t Hp = (H + mult - 1) / mult * mult;
  const int64_t Wp = (W + mult - 1) / mult * mult;
  if (Hp == H && Wp == W) return grid;
  if (H < 2 || W < 2) throw std::invalid_argument("reflect pad needs dims >= 2");
  auto mirror = [](int64_t i, int64_t n) {
    const int64_t period = 2 * (n - 1);
    int64_t p = i % period;
    return p < n ? p : period - p;
  };
  static std::map<std::vector<int64_t>, detail::IndexMap> cache;
  detail::IndexMap idx = detail::cached_map(cache, {F, H, W, C, Hp, Wp}, [&] {
    std::vector<int64_t> map(static_cast<size_t>(F * Hp * Wp * C));
    size_t o = 0;
    for (int64_t f = 0; f < F; ++f)
      for (int64_t y = 0; y < Hp; ++y) {
        const int64_t sy = mirror(y, H);
        for (int64_t x = 0; x < Wp; ++x) {
          const int64_t base = ((f * H + sy) * W + mirror(x, W)) * C;
          for (int64_t c = 0; c < C; ++c) map[o++] = base + c;
        }
      }
    return map;
  });
  return pixel_gather(grid, idx, {F, Hp, Wp, C});
}

template <typename T>
Tensor<T> crop_grid(const Tensor<T>& grid, int64_t H, int64_t W) {
  Tensor<T> out = grid;
  if (grid.dim(1) != H) out = slice(out, 1, 0, H);
  if (out.dim(2) != W) out = slice(out, 2, 0, W);
  return out;
}

// 3x3 conv, stride 1, zero padding, channels-last; w is (9*Cin, Cout)
template <typename T>
Tensor<T> conv3x3(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const int64_t F = x.dim(0), H = x.dim(1), W = x.dim(2), Cin = x.dim(3);
  if (w.dim(0) != 9 * Cin)
    throw std::invalid_argument("conv3x3: weight expects " + std::to_string(9 * Cin) +
                                " input columns, got " + std::to_string(w.dim(0)));
  static std::map<std::vector<int64_t>, detail::IndexMap> cache;
  detail::IndexMap idx = detail::cached_map(cache, {F, H, W, Cin}, [&] {
    std::vector<int64_t> map(static_cast<size_t>(F * H * W * 9 * Cin));
    size_t o = 0;
    for (int64_t f = 0; f < F; ++f)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x0 = 0; x0 < W; ++x0)
          for (int64_t ky = -1; ky <= 1; ++ky)
            for (int64_t kx = -1; kx <= 1; ++kx) {
              const int64_t sy = y + ky, sx = x0 + kx;
              const bool in = sy >= 0 && sy < H && sx >= 0 && sx < W;
              const int64_t base = in ? ((f * H + sy) * W + sx) * Cin : -1;
              for (int64_t c = 0; c < Cin; ++c) map[o++] = in ? base + c : -1;
            }
    return map;
  });
  Tensor<T> patches = pixel_gather(x, idx, {F * H * W, 9 * Cin});
  return reshape(add(matmul(patches, w), b), {F, H, W, w.dim(1)});
}

// concat each 2x2 neighborhood (4C channels, row-major sub-block order) then
// project 4C -> 2C; halves spatial dims
template <typename T>
Tensor<T> patch_merge_op(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const int64_t F = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0) throw std::invalid_argument("patch_merge: odd spatial dims");
  static std::map<std::vector<int64_t>, detail::IndexMap> cache;
  detail::IndexMap idx = detail::cached_map(cache, {F, H, W, C}, [&] {
    std::vector<int64_t> map(static_cast<size_t>(F * H * W * C));
    size_t o = 0;
    for (int64_t f = 0; f < F; ++f)
      for (int64_t y = 0; y < H / 2; ++y)
        for (int64_t x0 = 0; x0 < W / 2; ++x0)
          for (int64_t g = 0; g < 4; ++g) {
            const int64_t base = ((f * H + 2 * y + g / 2) * W + 2 * x0 + g % 2) * C;
            for (int64_t c = 0; c < C; ++c) map[o++] = base + c;
          }
    return map;
  });
  Tensor<T> merged = pixel_gather(x, idx, {F, H / 2, W / 2, 4 * C});
  return linear(merged, w, b);
}

// project C -> 2C then pixel-shuffle: channel quartet [a,b,c,d] becomes the
// 2x2 spatial block [[a,b],[c,d]]; (F,H,W,C) -> (F,2H,2W,C/2)
template <typename T>
Tensor<T> patch_expand_op(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const int64_t F = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor<T> y = linear(x, w, b);
  const int64_t C2 = y.dim(3);
  if (C2 % 4 != 0) throw std::invalid_argument("patch_expand: channels not divisible by 4");
  const int64_t Cout = C2 / 4;
  static std::map<std::vector<int64_t>, detail::IndexMap> cache;
  detail::IndexMap idx = detail::cached_map(cache, {F, H, W, C2}, [&] {
    std::vector<int64_t> map(static_cast<size_t>(F * H * W * C2));
    size_t o = 0;
    for (int64_t f = 0; f < F; ++f)
      for (int64_t y2 = 0; y2 < 2 * H; ++y2)
        for (int64_t x2 = 0; x2 < 2 * W; ++x2) {
          const int64_t sub = (y2 % 2) * 2 + x2 % 2;
          const int64_t base = ((f * H + y2 / 2) * W + x2 / 2) * C2 + sub * Cout;
          for (int64_t c = 0; c < Cout; ++c) map[o++] = base + c;
        }
    return map;
  });
  return pixel_gather(y, idx, {F, 2 * H, 2 * W, Cout});
}

// --- attention plumbing -------------------------------------------------------------

// (..., L, C) -> (..., heads, L, C/heads)
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, int heads) {
  Shape s = x.shape();
  const int r = static_cast<int>(s.size());
  const int64_t L = s[static_cast<size_t>(r - 2)], C = s[static_cast<size_t>(r - 1)];
  Shape s2(s.begin(), s.end() - 2);
  s2.push_back(L);
  s2.push_back(heads);
  s2.push_back(C / heads);
  std::vector<int> perm(static_cast<size_t>(r + 1));
  std::iota(perm.begin(), perm.end(), 0);
  // after reshape the last three dims are (L, heads, hd); swap L and heads
  std::swap(perm[static_cast<size_t>(r - 2)], perm[static_cast<size_t>(r - 1)]);
  return permute(reshape(x, s2), perm);
}

// (..., heads, L, hd) -> (..., L, heads*hd)
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  Shape s = x.shape();
  const int r = static_cast<int>(s.size());
  std::vector<int> perm(static_cast<size_t>(r));
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[static_cast<size_t>(r - 3)], perm[static_cast<size_t>(r - 2)]);
  Tensor<T> y = permute(x, perm);
  Shape out(s.begin(), s.end() - 3);
  out.push_back(s[static_cast<size_t>(r - 2)]);
  out.push_back(s[static_cast<size_t>(r - 3)] * s[static_cast<size_t>(r - 1)]);
  return reshape(y, out);
}

// builds (heads, Lq, Lk) bias from a (rows, heads) table and a relative-index
// map of Lq*Lk entries; shared across windows by construction
template <typename T>
Tensor<T> build_relative_bias(const Tensor<T>& table, const detail::IndexMap& rel_index,
                              int64_t Lq, int64_t Lk, int64_t expected_rows) {
  if (table.dim(0) != expected_rows)
    throw std::invalid_argument("relative bias table has " + std::to_string(table.dim(0)) +
                                " rows, geometry needs " + std::to_string(expected_rows));
  const int64_t heads = table.dim(1);
  static std::map<std::vector<int64_t>, detail::IndexMap> cache;
  detail::IndexMap idx = detail::cached_map(
      cache,
      {reinterpret_cast<int64_t>(rel_index.get()), heads, Lq, Lk, table.dim(0)}, [&] {
        std::vector<int64_t> map(static_cast<size_t>(heads * Lq * Lk));
        size_t o = 0;
        for (int64_t h = 0; h < heads; ++h)
          for (int64_t i = 0; i < Lq * Lk; ++i) map[o++] = (*rel_index)[static_cast<size_t>(i)] * heads + h;
        return map;
      });
  return pixel_gather(table, idx, {heads, Lq, Lk});
}

namespace detail {

// relative index for joint temporal-spatial windows: rows (2F-1)(2M-1)^2,
// token order t-major then row-major spatial; F=1 gives the spatial-only table
inline IndexMap relative_index_joint(int M, int F) {
  static std::map<std::vector<int64_t>, IndexMap> cache;
  return cached_map(cache, {M, F}, [&] {
    const int64_t L = static_cast<int64_t>(F) * M * M;
    std::vector<int64_t> map(static_cast<size_t>(L * L));
    size_t o = 0;
    for (int64_t i = 0; i < L; ++i) {
      const int64_t ti = i / (M * M), yi = (i / M) % M, xi = i % M;
      for (int64_t j = 0; j < L; ++j) {
        const int64_t tj = j / (M * M), yj = (j / M) % M, xj = j % M;
        const int64_t dt = ti - tj + F - 1, dy = yi - yj + M - 1, dx = xi - xj + M - 1;
        map[o++] = (dt * (2 * M - 1) + dy) * (2 * M - 1) + dx;
      }
    }
    return map;
  });
}

// relative index for cross attention from T query frames to D key frames:
// rows (T+D-1)(2M-1)^2, temporal offset t-d
inline IndexMap relative_index_cross(int M, int T, int D) {
  static std::map<std::vector<int64_t>, IndexMap> cache;
  return cached_map(cache, {M, T, D}, [&] {
    const int64_t Lq = static_cast<int64_t>(T) * M * M, Lk = static_cast<int64_t>(D) * M * M;
    std::vector<int64_t> map(static_cast<size_t>(Lq * Lk));
    size_t o = 0;
    for (int64_t i = 0; i < Lq; ++i) {
      const int64_t ti = i / (M * M), yi = (i / M) % M, xi = i % M;
      for (int64_t j = 0; j < Lk; ++j) {
        const int64_t dj = j / (M * M), yj = (j / M) % M, xj = j % M;
        const int64_t dt = ti - dj + D - 1, dy = yi - yj + M - 1, dx = xi - xj + M - 1;
        map[o++] = (dt * (2 * M - 1) + dy) * (2 * M - 1) + dx;
      }
    }
    return map;
  });
}

// attention chunk size over the window axis, keeping per-chunk logits near 4M elements
inline int64_t window_chunk(int64_t nw, int64_t logits_per_window) {
  const int64_t budget = int64_t(1) << 22;
  return std::clamp(budget / std::max<int64_t>(1, logits_per_window), int64_t(1), nw);
}

}  // namespace detail

// shifted-window mask over spatial tokens: (nw, 1, 1, M^2, 1, M^2) with 0 for
// same-region pairs and -100 for pairs wrapped together by the cyclic shift;
// the returned tensor is a shared constant, never mutated
template <typename T>
Tensor<T> shift_attention_mask(int64_t H, int64_t W, int M, int shift) {
  static std::map<std::vector<int64_t>, Tensor<T>> cache;
  const std::vector<int64_t> key{H, W, M, shift};
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  std::vector<int> region(static_cast<size_t>(H * W));
  int id = 0;
  const std::array<std::pair<int64_t, int64_t>, 3> hs{
      {{0, H - M}, {H - M, H - shift}, {H - shift, H}}};
  const std::array<std::pair<int64_t, int64_t>, 3> ws{
      {{0, W - M}, {W - M, W - shift}, {W - shift, W}}};
  for (const auto& [h0, h1] : hs) {
    for (const auto& [w0, w1] : ws) {
      for (int64_t y = h0; y < h1; ++y)
        for (int64_t x = w0; x < w1; ++x) region[static_cast<size_t>(y * W + x)] = id;
      ++id;
    }
  }
  const int64_t nw = (H / M) * (W / M), M2 = static_cast<int64_t>(M) * M;
  std::vector<T> buf(static_cast<size_t>(nw * M2 * M2), T(0));
  for (int64_t w = 0; w < nw; ++w) {
    const int64_t wy = w / (W / M), wx = w % (W / M);
    for (int64_t i = 0; i < M2; ++i) {
      const int ri = region[static_cast<size_t>((wy * M + i / M) * W + wx * M + i % M)];
      for (int64_t j = 0; j < M2; ++j) {
        const int rj = region[static_cast<size_t>((wy * M + j / M) * W + wx * M + j % M)];
        if (ri != rj) buf[static_cast<size_t>((w * M2 + i) * M2 + j)] = T(-100);
      }
    }
  }
  Tensor<T> mask = Tensor<T>::from_data({nw, 1, 1, M2, 1, M2}, std::move(buf));
  cache.emplace(key, mask);
  return mask;
}

// --- transformer blocks -----------------------------------------------------------

template <typename T>
struct SwinBlockParams {
  Tensor<T> ln1_g, ln1_b;
  Tensor<T> qkv_w, qkv_b;
  Tensor<T> proj_w, proj_b;
  Tensor<T> bias_table;  // ((2F-1)(2M-1)^2, heads), F=1 when per-frame
  Tensor<T> ln2_g, ln2_b;
  Tensor<T> fc1_w, fc1_b, fc2_w, fc2_b;
  int heads = 1;
  bool joint_temporal = true;
};

template <typename T>
SwinBlockParams<T> make_swin_block_params(ParamStore<T>& st, const std::string& p, int C,
                                          int heads, double mlp_ratio, int M, int bias_frames,
                                          uint64_t seed, bool trainable) {
  using detail::Init;
  using detail::register_param;
  const int64_t hidden = static_cast<int64_t>(C * mlp_ratio);
  const int64_t rows = static_cast<int64_t>(2 * bias_frames - 1) * (2 * M - 1) * (2 * M - 1);
  SwinBlockParams<T> b;
  b.heads = heads;
  b.joint_temporal = bias_frames > 1;
  b.ln1_g = register_param(st, p + ".ln1.g", {C}, Init::kOne, seed, trainable);
  b.ln1_b = register_param(st, p + ".ln1.b", {C}, Init::kZero, seed, trainable);
  b.qkv_w = register_param(st, p + ".qkv.w", {C, 3 * C}, Init::kTruncNormal, seed, trainable);
  b.qkv_b = register_param(st, p + ".qkv.b", {3 * C}, Init::kZero, seed, trainable);
  b.proj_w = register_param(st, p + ".proj.w", {C, C}, Init::kTruncNormal, seed, trainable);
  b.proj_b = register_param(st, p + ".proj.b", {C}, Init::kZero, seed, trainable);
  b.bias_table = register_param(st, p + ".bias_table", {rows, heads}, Init::kZero, seed, trainable);
  b.ln2_g = register_param(st, p + ".ln2.g", {C}, Init::kOne, seed, trainable);
  b.ln2_b = register_param(st, p + ".ln2.b", {C}, Init::kZero, seed, trainable);
  b.fc1_w = register_param(st, p + ".mlp.fc1.w", {C, hidden}, Init::kTruncNormal, seed, trainable);
  b.fc1_b = register_param(st, p + ".mlp.fc1.b", {hidden}, Init::kZero, seed, trainable);
  b.fc2_w = register_param(st, p + ".mlp.fc2.w", {hidden, C}, Init::kTruncNormal, seed, trainable);
  b.fc2_b = register_param(st, p + ".mlp.fc2.b", {C}, Init::kZero, seed, trainable);
  return b;
}

// windowed multi-head self-attention over (nw, G, L, C) tokens; G groups share
// a window's mask (G = frames for per-frame attention, 1 for joint windows)
template <typename T>
Tensor<T> window_self_attention(const Tensor<T>& tokens, const SwinBlockParams<T>& p,
                                const Tensor<T>& bias, const Tensor<T>& mask, int M,
                                std::vector<Tensor<T>>* debug_attn = nullptr) {
  const int64_t nw = tokens.dim(0), G = tokens.dim(1), L = tokens.dim(2), C = tokens.dim(3);
  const int heads = p.heads;
  const int64_t hd = C / heads;
  const int64_t M2 = static_cast<int64_t>(M) * M;
  const T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(hd)));
  const int64_t chunk = detail::window_chunk(nw, G * heads * L * L);
  std::vector<Tensor<T>> pieces;
  for (int64_t w0 = 0; w0 < nw; w0 += chunk) {
    const int64_t cw = std::min(chunk, nw - w0);
    Tensor<T> t = reshape(slice(tokens, 0, w0, cw), {cw * G, L, C});
    Tensor<T> qkv = linear(t, p.qkv_w, p.qkv_b);
    Tensor<T> q = split_heads(slice(qkv, 2, 0, C), heads);
    Tensor<T> k = split_heads(slice(qkv, 2, C, C), heads);
    Tensor<T> v = split_heads(slice(qkv, 2, 2 * C, C), heads);
    Tensor<T> logits = mul_scalar(matmul(q, transpose_last2(k)), scale);
    if (bias.defined()) logits = add(logits, bias);
    if (mask.defined()) {
      // expose the spatial token axes so the per-window spatial mask
      // broadcasts across frames and heads
      const int64_t Fp = L / M2;
      Tensor<T> lg = reshape(logits, {cw, static_cast<int64_t>(G) * heads, Fp, M2, Fp, M2});
      lg = add(lg, slice(mask, 0, w0, cw));
      logits = reshape(lg, {cw * G, heads, L, L});
    }
    Tensor<T> att = softmax_lastdim(logits);
    if (debug_attn) debug_attn->push_back(att);
    Tensor<T> out = merge_heads(matmul(att, v));
    out = linear(out, p.proj_w, p.proj_b);
    pieces.push_back(reshape(out, {cw, G, L, C}));
  }
  return pieces.size() == 1 ? pieces[0] : concat(pieces, 0);
}

// pre-LN transformer block over (F, H, W, C): windowed (optionally shifted)
// self-attention residual, then LN+MLP residual; joint_temporal attends over
// all F frames of a window jointly, otherwise per frame
template <typename T>
Tensor<T> swin_block(const Tensor<T>& grid, const SwinBlockParams<T>& p, int M, bool shifted,
                     std::vector<Tensor<T>>* debug_attn = nullptr) {
  const int64_t F = grid.dim(0), H = grid.dim(1), W = grid.dim(2), C = grid.dim(3);
  const int shift = shifted && std::min(H, W) > M ? M / 2 : 0;

  Tensor<T> x = layernorm_lastdim(grid, p.ln1_g, p.ln1_b);
  if (shift > 0) x = cyclic_shift(x, shift, shift);
  Tensor<T> win = window_partition(x, M);  // (nw, F, M^2, C)
  const int64_t nw = win.dim(0), M2 = win.dim(2);

  Tensor<T> tokens, bias, mask;
  const int Fb = p.joint_temporal ? static_cast<int>(F) : 1;
  detail::IndexMap rel = detail::relative_index_joint(M, Fb);
  const int64_t rows = static_cast<int64_t>(2 * Fb - 1) * (2 * M - 1) * (2 * M - 1);
  if (p.joint_temporal) {
    tokens = reshape(win, {nw, 1, F * M2, C});
    bias = build_relative_bias(p.bias_table, rel, F * M2, F * M2, rows);
  } else {
    tokens = win;
    bias = build_relative_bias(p.bias_table, rel, M2, M2, rows);
  }
  if (shift > 0) mask = shift_attention_mask<T>(H, W, M, shift);

  Tensor<T> att = window_self_attention(tokens, p, bias, mask, M, debug_attn);
  x = window_reverse(reshape(att, {nw, F, M2, C}), M, H, W);
  if (shift > 0) x = cyclic_shift(x, -shift, -shift);
  x = add(grid, x);

  Tensor<T> y = layernorm_lastdim(x, p.ln2_g, p.ln2_b);
  y = linear(gelu(linear(y, p.fc1_w, p.fc1_b)), p.fc2_w, p.fc2_b);
  return add(x, y);
}

// --- multi-reference fusion ----------------------------------------------------------

template <typename T>
struct PoolParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln_g, ln_b;
  Tensor<T> fc1_w, fc1_b, fc2_w, fc2_b;
};

template <typename T>
struct MrsffBlockParams {
  Tensor<T> pq, pk, pv;  // (C, C), no bias
  Tensor<T> bias_table;  // ((2M-1)^2, heads)
  Tensor<T> out_w, out_b;
  PoolParams<T> pool;
  int heads = 1;
};

template <typename T>
struct MrsffPairParams {
  MrsffBlockParams<T> b0, b1;
};

template <typename T>
PoolParams<T> make_pool_params(ParamStore<T>& st, const std::string& p, int C, double mlp_ratio,
                               uint64_t seed, bool trainable) {
  using detail::Init;
  using detail::register_param;
  const int64_t hidden = static_cast<int64_t>(C * mlp_ratio);
  PoolParams<T> o;
  o.wq = register_param(st, p + ".wq", {C, C}, Init::kTruncNormal, seed, trainable);
  o.bq = register_param(st, p + ".bq", {C}, Init::kZero, seed, trainable);
  o.wk = register_param(st, p + ".wk", {C, C}, Init::kTruncNormal, seed, trainable);
  o.bk = register_param(st, p + ".bk", {C}, Init::kZero, seed, trainable);
  o.wv = register_param(st, p + ".wv", {C, C}, Init::kTruncNormal, seed, trainable);
  o.bv = register_param(st, p + ".bv", {C}, Init::kZero, seed, trainable);
  o.wo = register_param(st, p + ".wo", {C, C}, Init::kZero, seed, trainable);
  o.bo = register_param(st, p + ".bo", {C}, Init::kZero, seed, trainable);
  o.ln_g = register_param(st, p + ".ln.g", {C}, Init::kOne, seed, trainable);
  o.ln_b = register_param(st, p + ".ln.b", {C}, Init::kZero, seed, trainable);
  o.fc1_w = register_param(st, p + ".mlp.fc1.w", {C, hidden}, Init::kTruncNormal, seed, trainable);
  o.fc1_b = register_param(st, p + ".mlp.fc1.b", {hidden}, Init::kZero, seed, trainable);
  o.fc2_w = register_param(st, p + ".mlp.fc2.w", {hidden, C}, Init::kZero, seed, trainable);
  o.fc2_b = register_param(st, p + ".mlp.fc2.b", {C}, Init::kZero, seed, trainable);
  return o;
}

// residual projections start at zero so an untrained fusion block contributes
// nothing and the surrounding pair reduces to identity
template <typename T>
MrsffBlockParams<T> make_mrsff_block_params(ParamStore<T>& st, const std::string& p, int C,
                                            int heads, int M, double mlp_ratio, uint64_t seed,
                                            bool trainable) {
  using detail::Init;
  using detail::register_param;
  const int64_t rows = static_cast<int64_t>(2 * M - 1) * (2 * M - 1);
  MrsffBlockParams<T> b;
  b.heads = heads;
  b.pq = register_param(st, p + ".pq", {C, C}, Init::kTruncNormal, seed, trainable);
  b.pk = register_param(st, p + ".pk", {C, C}, Init::kTruncNormal, seed, trainable);
  b.pv = register_param(st, p + ".pv", {C, C}, Init::kTruncNormal, seed, trainable);
  b.bias_table = register_param(st, p + ".bias_table", {rows, heads}, Init::kZero, seed, trainable);
  b.out_w = register_param(st, p + ".out.w", {C, C}, Init::kZero, seed, trainable);
  b.out_b = register_param(st, p + ".out.b", {C}, Init::kZero, seed, trainable);
  b.pool = make_pool_params(st, p + ".pool", C, mlp_ratio, seed, trainable);
  return b;
}

// multi-reference windowed cross attention: every processed frame window
// attends to every reference window; returns per-pair fused features
// (nw, T, D, M^2, C) after head concat and output projection
template <typename T>
Tensor<T> mr_wmca(const Tensor<T>& fp_win, const Tensor<T>& fr_win,
                  const MrsffBlockParams<T>& p, std::vector<Tensor<T>>* debug_attn = nullptr) {
  const int64_t nw = fp_win.dim(0), Tn = fp_win.dim(1), M2 = fp_win.dim(2), C = fp_win.dim(3);
  const int64_t D = fr_win.dim(1);
  if (fr_win.dim(2) != M2 || fr_win.dim(3) != C)
    throw std::invalid_argument("mr_wmca: window shape mismatch " + shape_str(fp_win.shape()) +
                                " vs " + shape_str(fr_win.shape()));
  const int heads = p.heads;
  const int64_t hd = C / heads;
  const int M = static_cast<int>(std::lround(std::sqrt(static_cast<double>(M2))));
  const T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(hd)));

  Tensor<T> q = split_heads(matmul(reshape(fp_win, {nw * Tn, M2, C}), p.pq), heads);
  Tensor<T> k = split_heads(matmul(reshape(fr_win, {nw * D, M2, C}), p.pk), heads);
  Tensor<T> v = split_heads(matmul(reshape(fr_win, {nw * D, M2, C}), p.pv), heads);
  q = reshape(q, {nw, Tn, 1, heads, M2, hd});
  k = reshape(k, {nw, 1, D, heads, M2, hd});
  v = reshape(v, {nw, 1, D, heads, M2, hd});

  Tensor<T> bias = build_relative_bias(p.bias_table, detail::relative_index_joint(M, 1), M2, M2,
                                       static_cast<int64_t>(2 * M - 1) * (2 * M - 1));
  Tensor<T> logits = add(mul_scalar(matmul(q, transpose_last2(k)), scale), bias);
  Tensor<T> att = softmax_lastdim(logits);  // (nw, T, D, heads, M2, M2)
  if (debug_attn) debug_attn->push_back(att);
  Tensor<T> fused = merge_heads(matmul(att, v));  // (nw, T, D, M2, C)
  return reshape(linear(reshape(fused, {nw * Tn * D, M2, C}), p.out_w, p.out_b),
                 {nw, Tn, D, M2, C});
}

// pools (nw, T, D, M^2, C) across references into (nw, T, M^2, C): the mean
// over D queries an MHA whose keys/values concatenate all D windows, followed
// by a pre-LN MLP residual. All cross-reference reductions are order-canonical
// so the result is exactly permutation invariant in D.
template <typename T>
Tensor<T> attention_pool(const Tensor<T>& fg, const PoolParams<T>& p, int heads,
                         PoolingMode mode, std::vector<Tensor<T>>* debug_attn = nullptr) {
  const int64_t nw = fg.dim(0), Tn = fg.dim(1), D = fg.dim(2), M2 = fg.dim(3), C = fg.dim(4);
  std::vector<Tensor<T>> slices;
  for (int64_t d = 0; d < D; ++d)
    slices.push_back(reshape(slice(fg, 2, d, 1), {nw, Tn, M2, C}));
  Tensor<T> favg = mul_scalar(ordered_sum_stack(slices), 1.0 / static_cast<double>(D));

  Tensor<T> x;
  if (mode == PoolingMode::kAverage) {
    x = favg;
  } else {
    const int64_t hd = C / heads;
    const T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(hd)));
    Tensor<T> q = split_heads(linear(favg, p.wq, p.bq), heads);  // (nw,T,heads,M2,hd)
    std::vector<Tensor<T>> logit_blocks, value_blocks;
    for (int64_t d = 0; d < D; ++d) {
      Tensor<T> kd = split_heads(linear(slices[static_cast<size_t>(d)], p.wk, p.bk), heads);
      Tensor<T> vd = split_heads(linear(slices[static_cast<size_t>(d)], p.wv, p.bv), heads);
      logit_blocks.push_back(mul_scalar(matmul(q, transpose_last2(kd)), scale));
      value_blocks.push_back(vd);
    }
    std::vector<Tensor<T>> block_maxes;
    for (const auto& l : logit_blocks) block_maxes.push_back(rowmax_lastdim_detached(l));
    Tensor<T> stab = max_stack_detached(block_maxes);
    std::vector<Tensor<T>> zs, nums;
    for (int64_t d = 0; d < D; ++d) {
      Tensor<T> e = exp_t(sub(logit_blocks[static_cast<size_t>(d)], stab));
      zs.push_back(rowsum_lastdim(e));
      nums.push_back(matmul(e, value_blocks[static_cast<size_t>(d)]));
    }
    Tensor<T> z = ordered_sum_stack(zs);
    Tensor<T> att_out = div(ordered_sum_stack(nums), z);
    if (debug_attn) {
      // full probability rows over all D*M^2 keys
      std::vector<Tensor<T>> probs;
      for (int64_t d = 0; d < D; ++d)
        probs.push_back(div(exp_t(sub(logit_blocks[static_cast<size_t>(d)], stab)), z));
      debug_attn->push_back(concat(probs, -1));
    }
    x = linear(merge_heads(att_out), p.wo, p.bo);
  }
  Tensor<T> y = layernorm_lastdim(x, p.ln_g, p.ln_b);
  y = linear(gelu(linear(y, p.fc1_w, p.fc1_b)), p.fc2_w, p.fc2_b);
  return add(x, y);
}

// one fusion block over pre-partitioned windows, chunked over the window axis
template <typename T>
Tensor<T> mrsff_block(const Tensor<T>& fq_win, const Tensor<T>& fr_win,
                      const MrsffBlockParams<T>& p, PoolingMode mode,
                      std::vector<Tensor<T>>* debug_attn = nullptr) {
  const int64_t nw = fq_win.dim(0), Tn = fq_win.dim(1), M2 = fq_win.dim(2);
  const int64_t D = fr_win.dim(1);
  const int64_t chunk = detail::window_chunk(nw, Tn * D * p.heads * M2 * M2);
  std::vector<Tensor<T>> pieces;
  for (int64_t w0 = 0; w0 < nw; w0 += chunk) {
    const int64_t cw = std::min(chunk, nw - w0);
    Tensor<T> fg = mr_wmca(slice(fq_win, 0, w0, cw), slice(fr_win, 0, w0, cw), p, debug_attn);
    pieces.push_back(attention_pool(fg, p.pool, p.heads, mode, debug_attn));
  }
  return pieces.size() == 1 ? pieces[0] : concat(pieces, 0);
}

// fusion pair: unshifted block, then a half-window-shifted block fed the first
// block's output as queries; the fused result is added onto the processed grid
template <typename T>
Tensor<T> mrsff_pair(const Tensor<T>& fp_grid, const Tensor<T>& fr_grid,
                     const MrsffPairParams<T>& p, int M, PoolingMode mode,
                     std::vector<Tensor<T>>* debug_attn = nullptr) {
  const int64_t H = fp_grid.dim(1), W = fp_grid.dim(2);
  if (fr_grid.dim(1) != H || fr_grid.dim(2) != W || fr_grid.dim(3) != fp_grid.dim(3))
    throw std::invalid_argument("mrsff_pair: grid shape mismatch " + shape_str(fp_grid.shape()) +
                                " vs " + shape_str(fr_grid.shape()));
  const int shift = M / 2;
  Tensor<T> ff1 = mrsff_block(window_partition(fp_grid, M), window_partition(fr_grid, M), p.b0,
                              mode, debug_attn);
  Tensor<T> g1 = window_reverse(ff1, M, H, W);

  Tensor<T> q2 = cyclic_shift(g1, shift, shift);
  Tensor<T> r2 = cyclic_shift(fr_grid, shift, shift);
  Tensor<T> ff2 =
      mrsff_block(window_partition(q2, M), window_partition(r2, M), p.b1, mode, debug_attn);
  Tensor<T> fused = cyclic_shift(window_reverse(ff2, M, H, W), -shift, -shift);
  return add(fp_grid, fused);
}

// --- cross-attention fusion (ablation) --------------------------------------------

template <typename T>
struct CrossBlockParams {
  Tensor<T> pq, pk, pv;
  Tensor<T> bias_table;  // ((T+D-1)(2M-1)^2, heads)
  Tensor<T> out_w, out_b;
  Tensor<T> ln_g, ln_b;
  Tensor<T> fc1_w, fc1_b, fc2_w, fc2_b;
  int heads = 1;
};

template <typename T>
struct CrossPairParams {
  CrossBlockParams<T> b0, b1;
};

template <typename T>
CrossBlockParams<T> make_cross_block_params(ParamStore<T>& st, const std::string& p, int C,
                                            int heads, int M, int Tn, int D, double mlp_ratio,
                                            uint64_t seed, bool trainable) {
  using detail::Init;
  using detail::register_param;
  const int64_t rows = static_cast<int64_t>(Tn + D - 1) * (2 * M - 1) * (2 * M - 1);
  const int64_t hidden = static_cast<int64_t>(C * mlp_ratio);
  CrossBlockParams<T> b;
  b.heads = heads;
  b.pq = register_param(st, p + ".pq", {C, C}, Init::kTruncNormal, seed, trainable);
  b.pk = register_param(st, p + ".pk", {C, C}, Init::kTruncNormal, seed, trainable);
  b.pv = register_param(st, p + ".pv", {C, C}, Init::kTruncNormal, seed, trainable);
  b.bias_table = register_param(st, p + ".bias_table", {rows, heads}, Init::kZero, seed, trainable);
  b.out_w = register_param(st, p + ".out.w", {C, C}, Init::kZero, seed, trainable);
  b.out_b = register_param(st, p + ".out.b", {C}, Init::kZero, seed, trainable);
  b.ln_g = register_param(st, p + ".ln.g", {C}, Init::kOne, seed, trainable);
  b.ln_b = register_param(st, p + ".ln.b", {C}, Init::kZero, seed, trainable);
  b.fc1_w = register_param(st, p + ".mlp.fc1.w", {C, hidden}, Init::kTruncNormal, seed, trainable);
  b.fc1_b = register_param(st, p + ".mlp.fc1.b", {hidden}, Init::kZero, seed, trainable);
  b.fc2_w = register_param(st, p + ".mlp.fc2.w", {hidden, C}, Init::kZero, seed, trainable);
  b.fc2_b = register_param(st, p + ".mlp.fc2.b", {C}, Init::kZero, seed, trainable);
  return b;
}

// joint spatio-temporal cross attention: all T*M^2 processed tokens of a
// window attend to all D*M^2 reference tokens at once
template <typename T>
Tensor<T> cross_fusion_block(const Tensor<T>& fq_win, const Tensor<T>& fr_win,
                             const CrossBlockParams<T>& p,
                             std::vector<Tensor<T>>* debug_attn = nullptr) {
  const int64_t nw = fq_win.dim(0), Tn = fq_win.dim(1), M2 = fq_win.dim(2), C = fq_win.dim(3);
  const int64_t D = fr_win.dim(1);
  const int heads = p.heads;
  const int64_t hd = C / heads;
  const int M = static_cast<int>(std::lround(std::sqrt(static_cast<double>(M2))));
  const T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(hd)));
  Tensor<T> bias =
      build_relative_bias(p.bias_table,
                          detail::relative_index_cross(M, static_cast<int>(Tn), static_cast<int>(D)),
                          Tn * M2, D * M2, (Tn + D - 1) * (2 * M - 1) * (2 * M - 1));
  const int64_t chunk = detail::window_chunk(nw, heads * Tn * M2 * D * M2);
  std::vector<Tensor<T>> pieces;
  for (int64_t w0 = 0; w0 < nw; w0 += chunk) {
    const int64_t cw = std::min(chunk, nw - w0);
    Tensor<T> q = split_heads(matmul(reshape(slice(fq_win, 0, w0, cw), {cw, Tn * M2, C}), p.pq),
                              heads);
    Tensor<T> kv_src = reshape(slice(fr_win, 0, w0, cw), {cw, D * M2, C});
    Tensor<T> k = split_heads(matmul(kv_src, p.pk), heads);
    Tensor<T> v = split_heads(matmul(kv_src, p.pv), heads);
    Tensor<T> att = softmax_lastdim(add(mul_scalar(matmul(q, transpose_last2(k)), scale), bias));
    if (debug_attn) debug_attn->push_back(att);
    Tensor<T> x = linear(merge_heads(matmul(att, v)), p.out_w, p.out_b);
    Tensor<T> y = layernorm_lastdim(x, p.ln_g, p.ln_b);
    y = linear(gelu(linear(y, p.fc1_w, p.fc1_b)), p.fc2_w, p.fc2_b);
    pieces.push_back(reshape(add(x, y), {cw, Tn, M2, C}));
  }
  return pieces.size() == 1 ? pieces[0] : concat(pieces, 0);
}

template <typename T>
Tensor<T> cross_fusion_pair(const Tensor<T>& fp_grid, const Tensor<T>& fr_grid,
                            const CrossPairParams<T>& p, int M,
                            std::vector<Tensor<T>>* debug_attn = nullptr) {
  const int64_t H = fp_grid.dim(1), W = fp_grid.dim(2);
  const int shift = M / 2;
  Tensor<T> ff1 = cross_fusion_block(window_partition(fp_grid, M), window_partition(fr_grid, M),
                                     p.b0, debug_attn);
  Tensor<T> g1 = window_reverse(ff1, M, H, W);
  Tensor<T> ff2 = cross_fusion_block(window_partition(cyclic_shift(g1, shift, shift), M),
                                     window_partition(cyclic_shift(fr_grid, shift, shift), M),
                                     p.b1, debug_attn);
  Tensor<T> fused = cyclic_shift(window_reverse(ff2, M, H, W), -shift, -shift);
  return add(fp_grid, fused);
}

// --- full model ---------------------------------------------------------------------

template <typename T>
using FeaturePyramid = std::vector<Tensor<T>>;  // [s] = (D, H/2^s, W/2^s, C*2^s)

template <typename T>
class RestorationModel {
 public:
  explicit RestorationModel(NetConfig cfg, uint64_t seed = 7777) : cfg_(cfg), seed_(seed) {
    cfg_.validate();
    build();
  }

  const NetConfig& config() const { return cfg_; }
  uint64_t seed() const { return seed_; }
  ParamStore<T>& trainable() { return store_; }
  const ParamStore<T>& trainable() const { return store_; }
  ParamStore<T>& frozen() { return frozen_; }
  const ParamStore<T>& frozen() const { return frozen_; }

  // frozen per-frame feature pyramid of the reference frames; inputs must
  // already be padded to pad_multiple
  FeaturePyramid<T> extract_ref_pyramid(const Tensor<T>& refs) const {
    if (refs.dim(0) != cfg_.d_refs)
      throw std::invalid_argument("extract_ref_pyramid: expected " + std::to_string(cfg_.d_refs) +
                                  " reference frames, got " + std::to_string(refs.dim(0)));
    Tensor<T> x = conv3x3(refs, ext_shallow_w_, ext_shallow_b_);
    FeaturePyramid<T> pyr;
    for (int s = 0; s < cfg_.stages; ++s) {
      for (int i = 0; i < cfg_.depth_per_stage; ++i)
        x = swin_block(x, ext_blocks_[static_cast<size_t>(s)][static_cast<size_t>(i)],
                       cfg_.window, i % 2 == 1);
      pyr.push_back(x);
      if (s + 1 < cfg_.stages)
        x = patch_merge_op(x, ext_merge_w_[static_cast<size_t>(s)],
                           ext_merge_b_[static_cast<size_t>(s)]);
    }
    return pyr;
  }

  // core forward on pre-padded inputs with a matching reference pyramid
  Tensor<T> restore_padded(const Tensor<T>& input, const FeaturePyramid<T>& pyramid,
                           std::vector<Tensor<T>>* debug_attn = nullptr) const {
    const int64_t H = input.dim(1), W = input.dim(2);
    if (input.dim(0) != cfg_.t_frames)
      throw std::invalid_argument("restore: expected " + std::to_string(cfg_.t_frames) +
                                  " input frames, got " + std::to_string(input.dim(0)));
    if (H % cfg_.pad_multiple() != 0 || W % cfg_.pad_multiple() != 0)
      throw std::invalid_argument("restore: dims not padded to multiple of " +
                                  std::to_string(cfg_.pad_multiple()));
    if (pyramid.size() != static_cast<size_t>(cfg_.stages))
      throw std::invalid_argument("restore: pyramid has wrong number of scales");

    Tensor<T> x = conv3x3(input, shallow_w_, shallow_b_);
    std::vector<Tensor<T>> skips;
    for (int s = 0; s < cfg_.stages; ++s) {
      for (int i = 0; i < cfg_.depth_per_stage; ++i)
        x = swin_block(x, enc_blocks_[static_cast<size_t>(s)][static_cast<size_t>(i)],
                       cfg_.window, i % 2 == 1, debug_attn);
      skips.push_back(x);
      x = patch_merge_op(x, merge_w_[static_cast<size_t>(s)], merge_b_[static_cast<size_t>(s)]);
    }
    for (int i = 0; i < cfg_.depth_per_stage; ++i)
      x = swin_block(x, bott_blocks_[static_cast<size_t>(i)], cfg_.window, i % 2 == 1, debug_attn);
    for (int s = cfg_.stages - 1; s >= 0; --s) {
      x = patch_expand_op(x, expand_w_[static_cast<size_t>(s)], expand_b_[static_cast<size_t>(s)]);
      x = add(x, skips[static_cast<size_t>(s)]);
      for (int i = 0; i < cfg_.depth_per_stage; ++i)
        x = swin_block(x, dec_blocks_[static_cast<size_t>(s)][static_cast<size_t>(i)],
                       cfg_.window, i % 2 == 1, debug_attn);
      const Tensor<T>& refs_s = pyramid[static_cast<size_t>(s)];
      if (refs_s.dim(1) != x.dim(1) || refs_s.dim(2) != x.dim(2) || refs_s.dim(3) != x.dim(3))
        throw std::invalid_argument("restore: pyramid scale " + std::to_string(s) +
                                    " shape " + shape_str(refs_s.shape()) +
                                    " does not match decoder " + shape_str(x.shape()));
      if (cfg_.fusion_mode == FusionMode::kMrsff)
        x = mrsff_pair(x, refs_s, mrsff_[static_cast<size_t>(s)], cfg_.window, cfg_.pooling_mode,
                       debug_attn);
      else
        x = cross_fusion_pair(x, refs_s, cross_[static_cast<size_t>(s)], cfg_.window, debug_attn);
    }
    return add(input, conv3x3(x, out_w_, out_b_));
  }

  // end-to-end: reflect-pads input and refs, runs the network, crops back
  Tensor<T> restore_window(const Tensor<T>& input, const Tensor<T>& refs,
                           std::vector<Tensor<T>>* debug_attn = nullptr) const {
    if (input.shape().size() != 4 || input.dim(3) != 3)
      throw std::invalid_argument("restore_window: input must be (T,H,W,3)");
    if (refs.shape().size() != 4 || refs.dim(3) != 3 || refs.dim(1) != input.dim(1) ||
        refs.dim(2) != input.dim(2))
      throw std::invalid_argument("restore_window: refs must be (D,H,W,3) matching input dims");
    const int64_t H = input.dim(1), W = input.dim(2);
    Tensor<T> in_p = reflect_pad_to_multiple(input, cfg_.pad_multiple());
    Tensor<T> refs_p = reflect_pad_to_multiple(refs, cfg_.pad_multiple());
    FeaturePyramid<T> pyr = extract_ref_pyramid(refs_p);
    return crop_grid(restore_padded(in_p, pyr, debug_attn), H, W);
  }

 private:
  void build() {
    using detail::Init;
    using detail::register_param;
    const int M = cfg_.window;
    const double r = cfg_.mlp_ratio;

    shallow_w_ = register_param(store_, "shallow.w", {27, cfg_.embed_dim}, Init::kTruncNormal,
                                seed_, true);
    shallow_b_ = register_param(store_, "shallow.b", {cfg_.embed_dim}, Init::kZero, seed_, true);
    for (int s = 0; s < cfg_.stages; ++s) {
      const int C = cfg_.stage_channels(s);
      std::vector<SwinBlockParams<T>> blocks;
      for (int i = 0; i < cfg_.depth_per_stage; ++i)
        blocks.push_back(make_swin_block_params(store_, "enc" + std::to_string(s) + ".blk" +
                                                std::to_string(i),
                                                C, cfg_.stage_heads(s), r, M, cfg_.t_frames,
                                                seed_, true));
      enc_blocks_.push_back(std::move(blocks));
      merge_w_.push_back(register_param(store_, "enc" + std::to_string(s) + ".merge.w",
                                        {4 * C, 2 * C}, Init::kTruncNormal, seed_, true));
      merge_b_.push_back(register_param(store_, "enc" + std::to_string(s) + ".merge.b", {2 * C},
                                        Init::kZero, seed_, true));
    }
    {
      const int C = cfg_.stage_channels(cfg_.stages);
      for (int i = 0; i < cfg_.depth_per_stage; ++i)
        bott_blocks_.push_back(make_swin_block_params(store_, "bott.blk" + std::to_string(i), C,
                                                      cfg_.stage_heads(cfg_.stages), r, M,
                                                      cfg_.t_frames, seed_, true));
    }
    for (int s = 0; s < cfg_.stages; ++s) {
      const int C = cfg_.stage_channels(s);
      const int Cin = 2 * C;
      expand_w_.push_back(register_param(store_, "dec" + std::to_string(s) + ".expand.w",
                                         {Cin, 2 * Cin}, Init::kTruncNormal, seed_, true));
      expand_b_.push_back(register_param(store_, "dec" + std::to_string(s) + ".expand.b",
                                         {2 * Cin}, Init::kZero, seed_, true));
      std::vector<SwinBlockParams<T>> blocks;
      for (int i = 0; i < cfg_.depth_per_stage; ++i)
        blocks.push_back(make_swin_block_params(store_, "dec" + std::to_string(s) + ".blk" +
                                                std::to_string(i),
                                                C, cfg_.stage_heads(s), r, M, cfg_.t_frames,
                                                seed_, true));
      dec_blocks_.push_back(std::move(blocks));
      const std::string fp = "dec" + std::to_string(s) + ".fuse";
      if (cfg_.fusion_mode == FusionMode::kMrsff) {
        MrsffPairParams<T> pair;
        pair.b0 = make_mrsff_block_params(store_, fp + ".b0", C, cfg_.stage_heads(s), M, r,
                                          seed_, true);
        pair.b1 = make_mrsff_block_params(store_, fp + ".b1", C, cfg_.stage_heads(s), M, r,
                                          seed_, true);
        mrsff_.push_back(std::move(pair));
      } else {
        CrossPairParams<T> pair;
        pair.b0 = make_cross_block_params(store_, fp + ".b0", C, cfg_.stage_heads(s), M,
                                          cfg_.t_frames, cfg_.d_refs, r, seed_, true);
        pair.b1 = make_cross_block_params(store_, fp + ".b1", C, cfg_.stage_heads(s), M,
                                          cfg_.t_frames, cfg_.d_refs, r, seed_, true);
        cross_.push_back(std::move(pair));
      }
    }
    out_w_ = register_param(store_, "out.w", {9 * cfg_.embed_dim, 3}, Init::kZero, seed_, true);
    out_b_ = register_param(store_, "out.b", {3}, Init::kZero, seed_, true);

    ext_shallow_w_ = register_param(frozen_, "ext.shallow.w", {27, cfg_.embed_dim},
                                    Init::kTruncNormal, seed_ + 1, false);
    ext_shallow_b_ = register_param(frozen_, "ext.shallow.b", {cfg_.embed_dim}, Init::kZero,
                                    seed_ + 1, false);
    for (int s = 0; s < cfg_.stages; ++s) {
      const int C = cfg_.stage_channels(s);
      std::vector<SwinBlockParams<T>> blocks;
      for (int i = 0; i < cfg_.depth_per_stage; ++i)
        blocks.push_back(make_swin_block_params(frozen_, "ext.enc" + std::to_string(s) + ".blk" +
                                                std::to_string(i),
                                                C, cfg_.stage_heads(s), r, M, 1, seed_ + 1,
                                                false));
      ext_blocks_.push_back(std::move(blocks));
      if (s + 1 < cfg_.stages) {
        ext_merge_w_.push_back(register_param(frozen_, "ext.enc" + std::to_string(s) + ".merge.w",
                                              {4 * C, 2 * C}, Init::kTruncNormal, seed_ + 1,
                                              false));
        ext_merge_b_.push_back(register_param(frozen_, "ext.enc" + std::to_string(s) + ".merge.b",
                                              {2 * C}, Init::kZero, seed_ + 1, false));
      }
    }
  }

  NetConfig cfg_;
  uint64_t seed_;
  ParamStore<T> store_;
  ParamStore<T> frozen_;

  Tensor<T> shallow_w_, shallow_b_, out_w_, out_b_;
  std::vector<std::vector<SwinBlockParams<T>>> enc_blocks_, dec_blocks_;
  std::vector<SwinBlockParams<T>> bott_blocks_;
  std::vector<Tensor<T>> merge_w_, merge_b_, expand_w_, expand_b_;
  std::vector<MrsffPairParams<T>> mrsff_;
  std::vector<CrossPairParams<T>> cross_;

  Tensor<T> ext_shallow_w_, ext_shallow_b_;
  std::vector<std::vector<SwinBlockParams<T>>> ext_blocks_;
  std::vector<Tensor<T>> ext_merge_w_, ext_merge_b_;
};

// --- checkpoint io ------------------------------------------------------------------

inline constexpr uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'T', 'A', 'P', 'E', 'C', 'K', 'P', 'T'};

template <typename T>
struct Checkpoint {
  nlohmann::json config;
  nlohmann::json extra;
  std::vector<std::string> order;
  std::unordered_map<std::string, Tensor<T>> tensors;
};

namespace detail {

template <typename V>
void write_raw(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_raw(std::istream& is) {
  V v;
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_raw<uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
  const uint64_t n = read_raw<uint64_t>(is);
  if (n > (uint64_t(1) << 32)) throw std::runtime_error("checkpoint: corrupt string length");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  os.write(kCheckpointMagic, 8);
  detail::write_raw<uint32_t>(os, kCheckpointVersion);
  detail::write_raw<uint32_t>(os, static_cast<uint32_t>(sizeof(T)));
  detail::write_string(os, ckpt.config.dump());
  detail::write_string(os, ckpt.extra.dump());
  detail::write_raw<uint64_t>(os, ckpt.order.size());
  for (const auto& name : ckpt.order) {
    const Tensor<T>& t = ckpt.tensors.at(name);
    detail::write_string(os, name);
    detail::write_raw<uint32_t>(os, static_cast<uint32_t>(t.shape().size()));
    for (int64_t d : t.shape()) detail::write_raw<int64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.value().data()),
             static_cast<std::streamsize>(sizeof(T) * t.value().size()));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint32_t version = detail::read_raw<uint32_t>(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const uint32_t dtype = detail::read_raw<uint32_t>(is);
  if (dtype != sizeof(T))
    throw std::runtime_error("checkpoint: dtype width " + std::to_string(dtype) +
                             " does not match requested width " + std::to_string(sizeof(T)));
  Checkpoint<T> ckpt;
  ckpt.config = nlohmann::json::parse(detail::read_string(is));
  ckpt.extra = nlohmann::json::parse(detail::read_string(is));
  const uint64_t n = detail::read_raw<uint64_t>(is);
  for (uint64_t i = 0; i < n; ++i) {
    const std::string name = detail::read_string(is);
    const uint32_t rank = detail::read_raw<uint32_t>(is);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = detail::read_raw<int64_t>(is);
    std::vector<T> data(static_cast<size_t>(shape_numel(shape)));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(sizeof(T) * data.size()));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor data for " + name);
    ckpt.order.push_back(name);
    ckpt.tensors.emplace(name, Tensor<T>::from_data(std::move(shape), std::move(data)));
  }
  return ckpt;
}

// copies checkpoint tensors into a store, validating the name sets match and
// every shape agrees
template <typename T>
void load_into_store(ParamStore<T>& store, const Checkpoint<T>& ckpt,
                     const std::string& what) {
  for (const auto& name : store.names()) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end())
      throw std::runtime_error("checkpoint: missing " + what + " tensor: " + name);
    Tensor<T>& dst = store.at(name);
    if (it->second.shape() != dst.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + name + ": file has " +
                               shape_str(it->second.shape()) + ", model expects " +
                               shape_str(dst.shape()));
    dst.mutable_value() = it->second.value();
  }
}

template <typename T>
void save_model(const std::string& path, const RestorationModel<T>& model,
                const nlohmann::json& extra = nlohmann::json::object()) {
  Checkpoint<T> ckpt;
  ckpt.config = model.config();
  ckpt.extra = extra;
  ckpt.extra["seed"] = model.seed();
  for (const auto& name : model.trainable().names()) {
    ckpt.order.push_back(name);
    ckpt.tensors.emplace(name, model.trainable().at(name));
  }
  for (const auto& name : model.frozen().names()) {
    ckpt.order.push_back(name);
    ckpt.tensors.emplace(name, model.frozen().at(name));
  }
  save_checkpoint(path, ckpt);
}

template <typename T>
RestorationModel<T> load_model(const std::string& path) {
  Checkpoint<T> ckpt = load_checkpoint<T>(path);
  NetConfig cfg = ckpt.config.template get<NetConfig>();
  RestorationModel<T> model(cfg, ckpt.extra.value("seed", uint64_t(7777)));
  load_into_store(model.trainable(), ckpt, "model");
  load_into_store(model.frozen(), ckpt, "frozen extractor");
  return model;
}

}  // namespace tape
