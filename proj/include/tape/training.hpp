#pragma once

// training stack: Charbonnier + perceptual losses over feature providers,
// decoupled-weight-decay Adam, window/crop sampling, and a resumable loop
// that logs JSON lines. Sampling draws are keyed by (seed, step) only, so a
// resumed run replays the exact sample sequence of an uninterrupted one.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tape/restoration_net.hpp"
#include "tape/rng.hpp"
#include "tape/tensor.hpp"

namespace tape {

// --- loss configuration ---------------------------------------------------------------

struct LossConfig {
  double epsilon = 1e-12;
  double lambda_char = 200.0;
  double lambda_perc = 1.0;
  // layer tags of the pretrained network an external adapter would expose;
  // the bundled providers define their own tags
  std::vector<std::string> perceptual_layers = {"relu2_2", "relu3_4", "relu4_4", "conv5_4"};

  void validate() const {
    if (!(epsilon > 0)) throw std::invalid_argument("LossConfig: epsilon must be > 0");
    if (lambda_char < 0 || lambda_perc < 0)
      throw std::invalid_argument("LossConfig: loss weights must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const LossConfig& c) {
  j = {{"epsilon", c.epsilon},
       {"lambda_char", c.lambda_char},
       {"lambda_perc", c.lambda_perc},
       {"perceptual_layers", c.perceptual_layers}};
}

inline void from_json(const nlohmann::json& j, LossConfig& c) {
  c.epsilon = j.value("epsilon", c.epsilon);
  c.lambda_char = j.value("lambda_char", c.lambda_char);
  c.lambda_perc = j.value("lambda_perc", c.lambda_perc);
  c.perceptual_layers = j.value("perceptual_layers", c.perceptual_layers);
}

// --- perceptual feature providers -----------------------------------------------------

// frozen feature extractor: maps (N, H, W, 3) frames to one grid per layer;
// gradients flow to the frames, never to provider weights
template <typename T>
class PerceptualProvider {
 public:
  virtual ~PerceptualProvider() = default;
  virtual const std::vector<std::string>& layers() const = 0;
  virtual std::vector<Tensor<T>> features(const Tensor<T>& frames) const = 0;
};

template <typename T>
class IdentityProvider : public PerceptualProvider<T> {
 public:
  const std::vector<std::string>& layers() const override { return tags_; }
  std::vector<Tensor<T>> features(const Tensor<T>& frames) const override { return {frames}; }

 private:
  std::vector<std::string> tags_{"image"};
};

// small fixed random-convolution stack standing in for a pretrained network
// in offline tests; weights are seeded and non-trainable
template <typename T>
class ToyConvProvider : public PerceptualProvider<T> {
 public:
  explicit ToyConvProvider(uint64_t seed = 4242, std::vector<int> channels = {8, 16}) {
    int cin = 3;
    for (size_t l = 0; l < channels.size(); ++l) {
      const std::string tag = "toy.conv" + std::to_string(l + 1);
      ws_.push_back(detail::register_param(store_, tag + ".w", {9 * cin, channels[l]},
                                           detail::Init::kTruncNormal, seed, false));
      bs_.push_back(detail::register_param(store_, tag + ".b", {channels[l]},
                                           detail::Init::kZero, seed, false));
      tags_.push_back(tag);
      cin = channels[l];
    }
  }

  const std::vector<std::string>& layers() const override { return tags_; }

  std::vector<Tensor<T>> features(const Tensor<T>& frames) const override {
    std::vector<Tensor<T>> out;
    Tensor<T> x = frames;
    for (size_t l = 0; l < ws_.size(); ++l) {
      x = gelu(conv3x3(x, ws_[l], bs_[l]));
      out.push_back(x);
    }
    return out;
  }

  const ParamStore<T>& params() const { return store_; }

 private:
  ParamStore<T> store_;
  std::vector<Tensor<T>> ws_, bs_;
  std::vector<std::string> tags_;
};

template <typename T>
std::unique_ptr<PerceptualProvider<T>> make_perceptual_provider(const std::string& kind,
                                                                uint64_t seed = 4242) {
  if (kind == "identity") return std::make_unique<IdentityProvider<T>>();
  if (kind == "toy") return std::make_unique<ToyConvProvider<T>>(seed);
  throw std::invalid_argument("unknown perceptual provider: " + kind +
                              " (expected \"identity\" or \"toy\")");
}

// --- losses ---------------------------------------------------------------------------

// mean over all elements of sqrt(d^2 + eps^2); >= eps, with equality iff the
// inputs are identical
template <typename T>
Tensor<T> charbonnier_loss(const Tensor<T>& restored, const Tensor<T>& target,
                           double epsilon = 1e-12) {
  if (restored.shape() != target.shape())
    throw std::invalid_argument("charbonnier_loss: shape mismatch " +
                                shape_str(restored.shape()) + " vs " + shape_str(target.shape()));
  Tensor<T> d = sub(restored, target);
  return mean_all(sqrt_t(add_scalar(square_t(d), epsilon * epsilon)));
}

// sum over layers of the mean squared feature difference (the per-layer sum of
// squares divided by the layer's element count)
template <typename T>
Tensor<T> perceptual_loss(const PerceptualProvider<T>& provider, const Tensor<T>& restored,
                          const Tensor<T>& target) {
  if (restored.shape() != target.shape())
    throw std::invalid_argument("perceptual_loss: shape mismatch " +
                                shape_str(restored.shape()) + " vs " + shape_str(target.shape()));
  std::vector<Tensor<T>> fr = provider.features(restored);
  std::vector<Tensor<T>> ft = provider.features(target);
  if (fr.size() != provider.layers().size())
    throw std::invalid_argument("perceptual_loss: provider returned " +
                                std::to_string(fr.size()) + " maps for " +
                                std::to_string(provider.layers().size()) + " layers");
  Tensor<T> acc = Tensor<T>::scalar(T(0));
  for (size_t l = 0; l < fr.size(); ++l)
    acc = add(acc, mean_all(square_t(sub(fr[l], ft[l]))));
  return acc;
}

template <typename T>
struct LossBreakdown {
  Tensor<T> total;
  Tensor<T> charbonnier;
  Tensor<T> perceptual;
};

template <typename T>
LossBreakdown<T> total_loss(const LossConfig& cfg, const PerceptualProvider<T>* provider,
                            const Tensor<T>& restored, const Tensor<T>& target) {
  cfg.validate();
  LossBreakdown<T> out;
  out.charbonnier = charbonnier_loss(restored, target, cfg.epsilon);
  if (cfg.lambda_perc != 0) {
    if (!provider)
      throw std::invalid_argument("total_loss: lambda_perc != 0 requires a feature provider");
    out.perceptual = perceptual_loss(*provider, restored, target);
  } else {
    out.perceptual = Tensor<T>::scalar(T(0));
  }
  out.total = add(mul_scalar(out.charbonnier, cfg.lambda_char),
                  mul_scalar(out.perceptual, cfg.lambda_perc));
  return out;
}

// --- optimizer ------------------------------------------------------------------------

struct AdamWConfig {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// adaptive moments with decoupled weight decay; parameters that received no
// gradient in a step are skipped entirely (their state clock does not advance)
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  AdamWConfig& config() { return cfg_; }

  void step(ParamStore<T>& params) {
    for (const auto& name : params.names()) {
      Tensor<T>& p = params.at(name);
      if (!p.requires_grad() || p.grad().empty()) continue;
      const std::vector<T>& g = p.grad();
      State& s = state_[name];
      if (s.m.empty()) {
        s.m.assign(g.size(), T(0));
        s.v.assign(g.size(), T(0));
      }
      s.t += 1;
      const double bc1 = 1.0 / (1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t)));
      const double bc2 = 1.0 / (1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t)));
      const T decay = static_cast<T>(1.0 - cfg_.lr * cfg_.weight_decay);
      std::vector<T>& x = p.mutable_value();
      for (size_t i = 0; i < x.size(); ++i) {
        s.m[i] = static_cast<T>(cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i]);
        s.v[i] = static_cast<T>(cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i]);
        const double mh = s.m[i] * bc1;
        const double vh = s.v[i] * bc2;
        x[i] = static_cast<T>(x[i] * decay - cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
      }
    }
  }

  void zero_grad(ParamStore<T>& params) { params.zero_grad(); }

  // checkpoint plumbing: moments and per-parameter step counts become named
  // tensors alongside the model weights
  void export_state(Checkpoint<T>& ckpt) const {
    for (const auto& [name, s] : state_) {
      add_tensor(ckpt, "opt.m." + name, {static_cast<int64_t>(s.m.size())}, s.m);
      add_tensor(ckpt, "opt.v." + name, {static_cast<int64_t>(s.v.size())}, s.v);
      add_tensor(ckpt, "opt.t." + name, {1}, {static_cast<T>(s.t)});
    }
  }

  void import_state(const Checkpoint<T>& ckpt) {
    state_.clear();
    for (const auto& name : ckpt.order) {
      if (name.rfind("opt.m.", 0) != 0) continue;
      const std::string param = name.substr(6);
      State s;
      s.m = ckpt.tensors.at(name).value();
      s.v = ckpt.tensors.at("opt.v." + param).value();
      s.t = static_cast<uint64_t>(ckpt.tensors.at("opt.t." + param).value()[0]);
      state_.emplace(param, std::move(s));
    }
  }

  bool has_state(const std::string& name) const { return state_.count(name) > 0; }
  uint64_t step_count(const std::string& name) const {
    auto it = state_.find(name);
    return it == state_.end() ? 0 : it->second.t;
  }

 private:
  struct State {
    uint64_t t = 0;
    std::vector<T> m, v;
  };

  static void add_tensor(Checkpoint<T>& ckpt, const std::string& name, Shape shape,
                         std::vector<T> data) {
    ckpt.order.push_back(name);
    ckpt.tensors.emplace(name, Tensor<T>::from_data(std::move(shape), std::move(data)));
  }

  AdamWConfig cfg_;
  std::map<std::string, State> state_;
};

// --- training data --------------------------------------------------------------------

template <typename T>
struct TrainClip {
  Tensor<T> degraded;  // (N, H, W, 3)
  Tensor<T> gt;        // (N, H, W, 3)
  // [center frame] = indices of the D reference frames chosen for a window
  // centered there; entries outside valid window centers may be empty
  std::vector<std::vector<int>> refs_by_center;
};

template <typename T>
struct TrainDataset {
  std::vector<TrainClip<T>> clips;
};

template <typename T>
struct TrainingSample {
  Tensor<T> input;  // (T, c, c, 3)
  Tensor<T> gt;     // (T, c, c, 3)
  Tensor<T> refs;   // (D, c, c, 3)
  int clip = 0;
  int start = 0;
  int y0 = 0, x0 = 0;
};

namespace detail {

template <typename T>
Tensor<T> crop2d(const Tensor<T>& frames, int y0, int cy, int x0, int cx) {
  return slice(slice(frames, 1, y0, cy), 2, x0, cx);
}

}  // namespace detail

// uniform clip + start index, one shared random crop applied to the window,
// its ground truth, and the reference frames chosen for the window's center.
// Draw order is fixed: clip, start, crop y, crop x.
template <typename T>
TrainingSample<T> sample_training_window(const TrainDataset<T>& ds, int t_frames, int d_refs,
                                         int crop, KeyedRng& rng) {
  if (ds.clips.empty()) throw std::invalid_argument("sample_training_window: empty dataset");
  const int ci = static_cast<int>(rng.next_int(0, static_cast<int64_t>(ds.clips.size()) - 1));
  const TrainClip<T>& clip = ds.clips[static_cast<size_t>(ci)];
  const int64_t n = clip.degraded.dim(0);
  if (n < t_frames)
    throw std::invalid_argument("sample_training_window: clip " + std::to_string(ci) + " has " +
                                std::to_string(n) + " frames, window needs " +
                                std::to_string(t_frames));
  if (clip.gt.shape() != clip.degraded.shape())
    throw std::invalid_argument("sample_training_window: degraded/gt shape mismatch");
  const int start = static_cast<int>(rng.next_int(0, n - t_frames));
  const int center = start + t_frames / 2;
  if (static_cast<size_t>(center) >= clip.refs_by_center.size() ||
      static_cast<int>(clip.refs_by_center[static_cast<size_t>(center)].size()) != d_refs)
    throw std::invalid_argument("sample_training_window: clip " + std::to_string(ci) +
                                " lacks " + std::to_string(d_refs) +
                                " references for center frame " + std::to_string(center));

  const int64_t H = clip.degraded.dim(1), W = clip.degraded.dim(2);
  const int cy = static_cast<int>(std::min<int64_t>(crop, H));
  const int cx = static_cast<int>(std::min<int64_t>(crop, W));
  const int y0 = static_cast<int>(rng.next_int(0, H - cy));
  const int x0 = static_cast<int>(rng.next_int(0, W - cx));

  TrainingSample<T> s;
  s.clip = ci;
  s.start = start;
  s.y0 = y0;
  s.x0 = x0;
  s.input = detail::crop2d(slice(clip.degraded, 0, start, t_frames), y0, cy, x0, cx);
  s.gt = detail::crop2d(slice(clip.gt, 0, start, t_frames), y0, cy, x0, cx);
  std::vector<Tensor<T>> refs;
  for (int idx : clip.refs_by_center[static_cast<size_t>(center)]) {
    if (idx < 0 || idx >= n)
      throw std::invalid_argument("sample_training_window: reference index out of range");
    refs.push_back(detail::crop2d(slice(clip.degraded, 0, idx, 1), y0, cy, x0, cx));
  }
  s.refs = refs.size() == 1 ? refs[0] : concat(refs, 0);
  return s;
}

// --- training loop --------------------------------------------------------------------

struct TrainConfig {
  int epochs = 100;
  double lr = 2e-5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.99;
  int crop = 128;
  uint64_t seed = 1234;
  int windows_per_step = 1;
  int log_every = 1;

  void validate() const {
    if (epochs <= 0 || crop <= 0 || windows_per_step <= 0 || log_every <= 0)
      throw std::invalid_argument("TrainConfig: counts must be positive");
    if (lr < 0 || weight_decay < 0)
      throw std::invalid_argument("TrainConfig: lr and weight_decay must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
      throw std::invalid_argument("TrainConfig: betas must lie in [0, 1)");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"lr", c.lr},
       {"weight_decay", c.weight_decay},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"crop", c.crop},
       {"seed", c.seed},
       {"windows_per_step", c.windows_per_step},
       {"log_every", c.log_every}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.crop = j.value("crop", c.crop);
  c.seed = j.value("seed", c.seed);
  c.windows_per_step = j.value("windows_per_step", c.windows_per_step);
  c.log_every = j.value("log_every", c.log_every);
}

inline AdamWConfig adamw_config(const TrainConfig& tc) {
  AdamWConfig o;
  o.lr = tc.lr;
  o.beta1 = tc.beta1;
  o.beta2 = tc.beta2;
  o.weight_decay = tc.weight_decay;
  return o;
}

struct StepStats {
  double loss_char = 0;
  double loss_perc = 0;
  double loss_total = 0;
};

// forward + backward over one or more windows (gradients averaged), then a
// single optimizer step; aborts on non-finite loss before touching parameters
template <typename T>
StepStats train_step(RestorationModel<T>& model, AdamW<T>& opt,
                     const std::vector<TrainingSample<T>>& samples, const LossConfig& lc,
                     const PerceptualProvider<T>* provider) {
  if (samples.empty()) throw std::invalid_argument("train_step: no samples");
  const double inv = 1.0 / static_cast<double>(samples.size());
  StepStats stats;
  for (const auto& s : samples) {
    Tensor<T> out = model.restore_window(s.input, s.refs);
    LossBreakdown<T> parts = total_loss(lc, provider, out, s.gt);
    const double lt = static_cast<double>(parts.total.item());
    const double lch = static_cast<double>(parts.charbonnier.item());
    const double lp = static_cast<double>(parts.perceptual.item());
    if (!std::isfinite(lt))
      throw std::runtime_error("train_step: non-finite loss (char=" + std::to_string(lch) +
                               ", perc=" + std::to_string(lp) + ", total=" + std::to_string(lt) +
                               "); aborting before the parameter update");
    mul_scalar(parts.total, inv).backward();
    stats.loss_char += lch * inv;
    stats.loss_perc += lp * inv;
    stats.loss_total += lt * inv;
  }
  opt.step(model.trainable());
  opt.zero_grad(model.trainable());
  return stats;
}

struct StepLog {
  int64_t step = 0;
  double loss_char = 0;
  double loss_perc = 0;
  double loss_total = 0;
  double wallclock = 0;  // seconds since the loop started
};

// runs steps [start_step, end_step); each step draws its samples from a rng
// keyed by (seed, step) so interrupted runs resume identically
template <typename T>
std::vector<StepLog> train_loop(RestorationModel<T>& model, AdamW<T>& opt,
                                const TrainDataset<T>& ds, const TrainConfig& tc,
                                const LossConfig& lc, const PerceptualProvider<T>* provider,
                                int64_t start_step, int64_t end_step,
                                std::ostream* jsonl = nullptr,
                                const std::function<bool(const StepLog&)>& should_stop = {}) {
  tc.validate();
  lc.validate();
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<StepLog> logs;
  for (int64_t s = start_step; s < end_step; ++s) {
    KeyedRng rng(tc.seed, 0x747261696eull, static_cast<uint64_t>(s));
    std::vector<TrainingSample<T>> samples;
    for (int w = 0; w < tc.windows_per_step; ++w)
      samples.push_back(sample_training_window(ds, model.config().t_frames,
                                               model.config().d_refs, tc.crop, rng));
    const StepStats stats = train_step(model, opt, samples, lc, provider);
    StepLog log;
    log.step = s;
    log.loss_char = stats.loss_char;
    log.loss_perc = stats.loss_perc;
    log.loss_total = stats.loss_total;
    log.wallclock =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (jsonl && s % tc.log_every == 0) {
      nlohmann::json j = {{"step", log.step},
                          {"loss_char", log.loss_char},
                          {"loss_perc", log.loss_perc},
                          {"loss_total", log.loss_total},
                          {"wallclock", log.wallclock}};
      (*jsonl) << j.dump() << "\n";
    }
    logs.push_back(log);
    if (should_stop && should_stop(log)) break;
  }
  return logs;
}

// --- training checkpoints -------------------------------------------------------------

template <typename T>
void save_train_checkpoint(const std::string& path, const RestorationModel<T>& model,
                           const AdamW<T>& opt, int64_t step,
                           nlohmann::json extra = nlohmann::json::object()) {
  Checkpoint<T> ckpt;
  ckpt.config = model.config();
  ckpt.extra = std::move(extra);
  ckpt.extra["seed"] = model.seed();
  ckpt.extra["step"] = step;
  for (const auto& name : model.trainable().names()) {
    ckpt.order.push_back(name);
    ckpt.tensors.emplace(name, model.trainable().at(name));
  }
  for (const auto& name : model.frozen().names()) {
    ckpt.order.push_back(name);
    ckpt.tensors.emplace(name, model.frozen().at(name));
  }
  opt.export_state(ckpt);
  save_checkpoint(path, ckpt);
}

template <typename T>
struct TrainState {
  RestorationModel<T> model;
  AdamW<T> opt;
  int64_t step = 0;
};

template <typename T>
TrainState<T> load_train_checkpoint(const std::string& path, AdamWConfig ocfg = {}) {
  Checkpoint<T> ckpt = load_checkpoint<T>(path);
  NetConfig cfg = ckpt.config.template get<NetConfig>();
  RestorationModel<T> model(cfg, ckpt.extra.value("seed", uint64_t(7777)));
  load_into_store(model.trainable(), ckpt, "model");
  load_into_store(model.frozen(), ckpt, "frozen extractor");
  AdamW<T> opt(ocfg);
  opt.import_state(ckpt);
  return TrainState<T>{std::move(model), std::move(opt), ckpt.extra.value("step", int64_t(0))};
}

}  // namespace tape
