#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "intentcap/error.hpp"
#include "intentcap/rng.hpp"
#include "intentcap/tensor.hpp"

namespace intentcap {

// Box in [0,1] coordinates relative to the frame extent. The all-zero box is
// the out-of-scene sentinel.
struct NormalizedBox {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  bool is_sentinel() const { return x1 == 0.0 && y1 == 0.0 && x2 == 0.0 && y2 == 0.0; }

  void validate() const {
    const bool finite = std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
                        std::isfinite(y2);
    if (!finite || x1 > x2 || y1 > y2 || x1 < 0.0 || y1 < 0.0 || x2 > 1.0 || y2 > 1.0)
      throw InputError("NormalizedBox: corners must satisfy 0 <= x1 <= x2 <= 1 (and same for y)");
  }

  static NormalizedBox from_pixels(const std::array<double, 4>& corners, double frame_w,
                                   double frame_h) {
    if (frame_w <= 0.0 || frame_h <= 0.0)
      throw InputError("NormalizedBox: frame size must be positive");
    NormalizedBox b{std::clamp(corners[0] / frame_w, 0.0, 1.0),
                    std::clamp(corners[1] / frame_h, 0.0, 1.0),
                    std::clamp(corners[2] / frame_w, 0.0, 1.0),
                    std::clamp(corners[3] / frame_h, 0.0, 1.0)};
    return b;
  }
};

// Differentiable RoI alignment of a [d,h,w] feature map onto a fixed
// out_h x out_w grid. Each output bin averages samples_per_axis^2 bilinear
// samples taken at half-pixel-offset continuous coordinates; samples outside
// the map clamp to the border. A zero-area box collapses to point sampling;
// the sentinel box yields an all-zero region with no gradient path.
inline Tensor roi_align(const Tensor& feat, const NormalizedBox& box, std::size_t out_h,
                        std::size_t out_w, std::size_t samples_per_axis = 2) {
  if (feat.rank() != 3) throw DimensionError("roi_align: feature map must be [d,h,w]");
  if (out_h < 1 || out_w < 1 || samples_per_axis < 1)
    throw ConfigError("roi_align: output size and sampling rate must be >= 1");
  const std::size_t d = feat.dim(0), h = feat.dim(1), w = feat.dim(2);
  if (h == 0 || w == 0) throw DimensionError("roi_align: empty feature map");
  if (box.is_sentinel()) return Tensor::zeros({d, out_h, out_w});
  box.validate();

  const double bx1 = box.x1 * static_cast<double>(w);
  const double bx2 = box.x2 * static_cast<double>(w);
  const double by1 = box.y1 * static_cast<double>(h);
  const double by2 = box.y2 * static_cast<double>(h);
  const double bin_w = (bx2 - bx1) / static_cast<double>(out_w);
  const double bin_h = (by2 - by1) / static_cast<double>(out_h);
  const double inv_samples =
      1.0 / static_cast<double>(samples_per_axis * samples_per_axis);

  struct Tap {
    std::size_t plane_index;  // r * w + c
    double weight;            // bilinear weight / sample count
  };
  // Spatial taps are shared across channels.
  std::vector<std::vector<Tap>> taps(out_h * out_w);
  for (std::size_t by = 0; by < out_h; ++by) {
    for (std::size_t bx = 0; bx < out_w; ++bx) {
      auto& bin = taps[by * out_w + bx];
      for (std::size_t sy = 0; sy < samples_per_axis; ++sy) {
        const double yy = by1 + (static_cast<double>(by) +
                                 (static_cast<double>(sy) + 0.5) / samples_per_axis) *
                                    bin_h;
        for (std::size_t sx = 0; sx < samples_per_axis; ++sx) {
          const double xx = bx1 + (static_cast<double>(bx) +
                                   (static_cast<double>(sx) + 0.5) / samples_per_axis) *
                                      bin_w;
          const double u = xx - 0.5, v = yy - 0.5;
          const double cf = std::floor(u), rf = std::floor(v);
          const double du = u - cf, dv = v - rf;
          const auto clamp_c = [&](double x) {
            return static_cast<std::size_t>(std::clamp(x, 0.0, static_cast<double>(w - 1)));
          };
          const auto clamp_r = [&](double y) {
            return static_cast<std::size_t>(std::clamp(y, 0.0, static_cast<double>(h - 1)));
          };
          const std::size_t c0 = clamp_c(cf), c1 = clamp_c(cf + 1.0);
          const std::size_t r0 = clamp_r(rf), r1 = clamp_r(rf + 1.0);
          bin.push_back({r0 * w + c0, (1.0 - dv) * (1.0 - du) * inv_samples});
          bin.push_back({r0 * w + c1, (1.0 - dv) * du * inv_samples});
          bin.push_back({r1 * w + c0, dv * (1.0 - du) * inv_samples});
          bin.push_back({r1 * w + c1, dv * du * inv_samples});
        }
      }
    }
  }

  std::vector<double> out(d * out_h * out_w, 0.0);
  const auto fv = feat.values();
  for (std::size_t ch = 0; ch < d; ++ch) {
    const std::size_t plane = ch * h * w;
    for (std::size_t bin = 0; bin < taps.size(); ++bin) {
      double acc = 0.0;
      for (const auto& tap : taps[bin]) acc += tap.weight * fv[plane + tap.plane_index];
      out[ch * taps.size() + bin] = acc;
    }
  }
  auto pf = feat.node();
  return Tensor::make_op(
      {d, out_h, out_w}, std::move(out), {feat},
      [pf, taps = std::move(taps), d, h, w](detail::Node& self) {
        if (!pf->requires_grad) return;
        pf->ensure_grad();
        const std::size_t bins = taps.size();
        for (std::size_t ch = 0; ch < d; ++ch) {
          const std::size_t plane = ch * h * w;
          for (std::size_t bin = 0; bin < bins; ++bin) {
            const double g = self.grad[ch * bins + bin];
            for (const auto& tap : taps[bin]) pf->grad[plane + tap.plane_index] += g * tap.weight;
          }
        }
      });
}

struct BoxAdapterConfig {
  std::size_t d = 8;          // channel dim
  std::size_t heads = 2;      // cross-attention heads
  std::size_t roi_h = 7;      // RoI output height
  std::size_t roi_w = 7;      // RoI output width
  double ffn_ratio = 4.0;     // hidden multiplier
  double eps = 1e-5;          // layer-norm epsilon
  bool ffn_standard_init = false;  // true: FFN output gets standard init (gate-only zeroing)

  std::size_t ffn_hidden() const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(ffn_ratio * static_cast<double>(d)));
  }

  void validate() const {
    if (d == 0 || heads == 0 || d % heads != 0)
      throw ConfigError("BoxAdapterConfig: d must be a positive multiple of heads");
    if (roi_h < 1 || roi_w < 1) throw ConfigError("BoxAdapterConfig: RoI size must be >= 1");
    if (eps <= 0.0) throw ConfigError("BoxAdapterConfig: eps must be positive");
    if (ffn_ratio <= 0.0) throw ConfigError("BoxAdapterConfig: ffn_ratio must be positive");
  }
};

inline void to_json(nlohmann::json& j, const BoxAdapterConfig& cfg) {
  j = nlohmann::json{{"d", cfg.d},
                     {"heads", cfg.heads},
                     {"roi", {cfg.roi_h, cfg.roi_w}},
                     {"ffn_ratio", cfg.ffn_ratio},
                     {"eps", cfg.eps},
                     {"ffn_standard_init", cfg.ffn_standard_init}};
}

inline void from_json(const nlohmann::json& j, BoxAdapterConfig& cfg) {
  cfg.d = j.value("d", cfg.d);
  cfg.heads = j.value("heads", cfg.heads);
  if (j.contains("roi")) {
    cfg.roi_h = j.at("roi").at(0).get<std::size_t>();
    cfg.roi_w = j.at("roi").at(1).get<std::size_t>();
  }
  cfg.ffn_ratio = j.value("ffn_ratio", cfg.ffn_ratio);
  cfg.eps = j.value("eps", cfg.eps);
  cfg.ffn_standard_init = j.value("ffn_standard_init", cfg.ffn_standard_init);
}

// Global-local fusion block: RoI-aligned region features are injected into
// the frame features through cross-attention (frame features as queries,
// region features as keys/values), gated by a zero-initialized 1x1 conv, then
// a pre-LN FFN residual. With the default init the whole block is exactly the
// identity; ffn_standard_init restores standard FFN output initialization so only
// the zero conv gates the attention branch.
class BoxAdapter {
 public:
  BoxAdapter(const BoxAdapterConfig& cfg, Rng rng) : cfg_(cfg) {
    cfg.validate();
    const std::size_t d = cfg.d;
    const double std_w = 1.0 / std::sqrt(static_cast<double>(d));
    ln_roi_gamma_ = Tensor::full({d}, 1.0);
    ln_roi_beta_ = Tensor::zeros({d});
    wq_ = Tensor::random_normal({d, d}, rng, std_w);
    bq_ = Tensor::zeros({d});
    wk_ = Tensor::random_normal({d, d}, rng, std_w);
    bk_ = Tensor::zeros({d});
    wv_ = Tensor::random_normal({d, d}, rng, std_w);
    bv_ = Tensor::zeros({d});
    zero_w_ = Tensor::zeros({d, d});
    zero_b_ = Tensor::zeros({d});
    ln_ffn_gamma_ = Tensor::full({d}, 1.0);
    ln_ffn_beta_ = Tensor::zeros({d});
    const std::size_t hidden = cfg.ffn_hidden();
    ffn_w1_ = Tensor::random_normal({hidden, d}, rng, std_w);
    ffn_b1_ = Tensor::zeros({hidden});
    if (cfg.ffn_standard_init) {
      ffn_w2_ = Tensor::random_normal({d, hidden}, rng,
                                      1.0 / std::sqrt(static_cast<double>(hidden)));
    } else {
      ffn_w2_ = Tensor::zeros({d, hidden});
    }
    ffn_b2_ = Tensor::zeros({d});
    for (Tensor* t : trainable()) t->set_requires_grad(true);
  }

  const BoxAdapterConfig& config() const { return cfg_; }

  // R = RoI_Align(LN(V_f), bbox) per frame; sentinel frames yield an all-zero
  // region slice (optionally reported through sentinel_flags).
  Tensor extract_region(const Tensor& frames_feat, std::span<const NormalizedBox> boxes,
                        std::vector<bool>* sentinel_flags = nullptr) const {
    if (frames_feat.rank() != 4)
      throw DimensionError("extract_region: features must be [N,d,h,w]");
    if (frames_feat.dim(1) != cfg_.d)
      throw ConfigError("extract_region: channel dim does not match the adapter config");
    const std::size_t n = frames_feat.dim(0);
    if (boxes.size() != n)
      throw InputError("extract_region: expected one box per frame (" + std::to_string(n) +
                       " frames, " + std::to_string(boxes.size()) + " boxes)");
    Tensor normed = layer_norm(frames_feat, ln_roi_gamma_, ln_roi_beta_, cfg_.eps, 1);
    std::vector<Tensor> regions;
    regions.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (sentinel_flags) sentinel_flags->push_back(boxes[i].is_sentinel());
      regions.push_back(roi_align(frame_at(normed, i), boxes[i], cfg_.roi_h, cfg_.roi_w));
    }
    return stack_frames(regions);
  }

  // V~ = V + Z(MHA(ConvQ(V), ConvK(R), ConvV(R))); out = V~ + FFN(LN(V~)).
  Tensor fuse(const Tensor& frames_feat, const Tensor& region) const {
    if (frames_feat.rank() != 4 || region.rank() != 4)
      throw DimensionError("fuse: expected [N,d,h,w] features and [N,d,h',w'] regions");
    if (frames_feat.dim(0) != region.dim(0) || frames_feat.dim(1) != cfg_.d ||
        region.dim(1) != cfg_.d)
      throw ConfigError("fuse: shapes inconsistent with the adapter config");
    const std::size_t n = frames_feat.dim(0);
    const std::size_t h = frames_feat.dim(2), w = frames_feat.dim(3);
    Tensor q = conv1x1(frames_feat, wq_, bq_);
    Tensor k = conv1x1(region, wk_, bk_);
    Tensor v = conv1x1(region, wv_, bv_);
    std::vector<Tensor> fused;
    fused.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      Tensor qt = to_tokens(frame_at(q, i));  // [h*w, d]
      Tensor kt = to_tokens(frame_at(k, i));  // [h'*w', d]
      Tensor vt = to_tokens(frame_at(v, i));
      Tensor attn = multi_head_attention(qt, kt, vt, cfg_.heads);
      fused.push_back(from_tokens(attn, h, w));
    }
    Tensor gated = conv1x1(stack_frames(fused), zero_w_, zero_b_);
    Tensor v_tilde = add(frames_feat, gated);
    Tensor normed = layer_norm(v_tilde, ln_ffn_gamma_, ln_ffn_beta_, cfg_.eps, 1);
    Tensor hidden = gelu(conv1x1(normed, ffn_w1_, ffn_b1_));
    Tensor ffn = conv1x1(hidden, ffn_w2_, ffn_b2_);
    return add(v_tilde, ffn);
  }

  Tensor forward(const Tensor& frames_feat, std::span<const NormalizedBox> boxes) const {
    return fuse(frames_feat, extract_region(frames_feat, boxes));
  }

  std::vector<Tensor> trainable_params() const {
    std::vector<Tensor> out;
    for (const Tensor* t : trainable()) out.push_back(*t);
    return out;
  }

  std::size_t trainable_param_count() const {
    std::size_t total = 0;
    for (const Tensor* t : trainable()) total += t->size();
    return total;
  }

  Tensor& zero_conv_weight() { return zero_w_; }
  Tensor& zero_conv_bias() { return zero_b_; }
  Tensor& ffn_out_weight() { return ffn_w2_; }

 private:
  std::vector<Tensor*> trainable() {
    return {&ln_roi_gamma_, &ln_roi_beta_, &wq_,  &bq_,     &wk_,          &bk_,
            &wv_,           &bv_,          &zero_w_, &zero_b_, &ln_ffn_gamma_, &ln_ffn_beta_,
            &ffn_w1_,       &ffn_b1_,      &ffn_w2_, &ffn_b2_};
  }
  std::vector<const Tensor*> trainable() const {
    auto* self = const_cast<BoxAdapter*>(this);
    std::vector<const Tensor*> out;
    for (Tensor* t : self->trainable()) out.push_back(t);
    return out;
  }

  BoxAdapterConfig cfg_;
  Tensor ln_roi_gamma_, ln_roi_beta_;
  Tensor wq_, bq_, wk_, bk_, wv_, bv_;
  Tensor zero_w_, zero_b_;
  Tensor ln_ffn_gamma_, ln_ffn_beta_;
  Tensor ffn_w1_, ffn_b1_, ffn_w2_, ffn_b2_;
};

// Frozen synthetic transformer layer over h*w spatial tokens (pre-LN
// self-attention + FFN). Stands in for the real visual-encoder layers, which
// stay frozen during adapter training.
class VitLayer {
 public:
  VitLayer(std::size_t d, std::size_t heads, double eps, Rng rng)
      : d_(d), heads_(heads), eps_(eps) {
    // gentle init keeps the frozen backbone well conditioned at toy dims
    const double std_w = 0.5 / std::sqrt(static_cast<double>(d));
    ln1_gamma_ = Tensor::full({d}, 1.0);
    ln1_beta_ = Tensor::zeros({d});
    wq_ = Tensor::random_normal({d, d}, rng, std_w);
    bq_ = Tensor::random_normal({d}, rng, 0.02);
    wk_ = Tensor::random_normal({d, d}, rng, std_w);
    bk_ = Tensor::random_normal({d}, rng, 0.02);
    wv_ = Tensor::random_normal({d, d}, rng, std_w);
    bv_ = Tensor::random_normal({d}, rng, 0.02);
    wo_ = Tensor::random_normal({d, d}, rng, std_w);
    bo_ = Tensor::random_normal({d}, rng, 0.02);
    ln2_gamma_ = Tensor::full({d}, 1.0);
    ln2_beta_ = Tensor::zeros({d});
    const std::size_t hidden = 4 * d;
    w1_ = Tensor::random_normal({hidden, d}, rng, std_w);
    b1_ = Tensor::random_normal({hidden}, rng, 0.02);
    w2_ = Tensor::random_normal({d, hidden}, rng, 0.5 / std::sqrt(static_cast<double>(hidden)));
    b2_ = Tensor::random_normal({d}, rng, 0.02);
  }

  Tensor forward(const Tensor& tokens) const {
    Tensor x1 = layer_norm(tokens, ln1_gamma_, ln1_beta_, eps_, 1);
    Tensor q = add_rowwise(matmul(x1, transpose(wq_)), bq_);
    Tensor k = add_rowwise(matmul(x1, transpose(wk_)), bk_);
    Tensor v = add_rowwise(matmul(x1, transpose(wv_)), bv_);
    Tensor attn = add_rowwise(matmul(multi_head_attention(q, k, v, heads_), transpose(wo_)), bo_);
    Tensor t1 = add(tokens, attn);
    Tensor x2 = layer_norm(t1, ln2_gamma_, ln2_beta_, eps_, 1);
    Tensor f = add_rowwise(
        matmul(gelu(add_rowwise(matmul(x2, transpose(w1_)), b1_)), transpose(w2_)), b2_);
    return add(t1, f);
  }

 private:
  std::size_t d_, heads_;
  double eps_;
  Tensor ln1_gamma_, ln1_beta_;
  Tensor wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
  Tensor ln2_gamma_, ln2_beta_;
  Tensor w1_, b1_, w2_, b2_;
};

struct AdapterStackConfig {
  std::size_t layers = 6;          // total synthetic ViT layers L
  std::size_t adapter_layers = 5;  // adapters in the LAST k layers
  BoxAdapterConfig adapter;

  void validate() const {
    adapter.validate();
    if (adapter_layers > layers)
      throw ConfigError("AdapterStackConfig: adapter_layers must not exceed layers");
  }
};

inline void to_json(nlohmann::json& j, const AdapterStackConfig& cfg) {
  j = nlohmann::json{{"layers", cfg.layers}, {"adapter_layers", cfg.adapter_layers}};
  to_json(j["adapter"], cfg.adapter);
}

inline void from_json(const nlohmann::json& j, AdapterStackConfig& cfg) {
  cfg.layers = j.value("layers", cfg.layers);
  cfg.adapter_layers = j.value("adapter_layers", cfg.adapter_layers);
  if (j.contains("adapter")) from_json(j.at("adapter"), cfg.adapter);
}

// Synthetic ViT stack with box adapters behind the last k layers:
// V^(l+1) = Box_Adapter(ViT_Layer(V^(l))). ViT weights are frozen and drawn
// from seed-derived streams independent of the adapter count, so the same
// seed yields identical backbones with and without adapters.
class AdapterVitStack {
 public:
  AdapterVitStack(const AdapterStackConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng root(seed);
    for (std::size_t l = 0; l < cfg.layers; ++l)
      layers_.emplace_back(cfg.adapter.d, cfg.adapter.heads, cfg.adapter.eps,
                           root.sub("vit/" + std::to_string(l)));
    for (std::size_t l = cfg.layers - cfg.adapter_layers; l < cfg.layers; ++l)
      adapters_.emplace_back(cfg.adapter, root.sub("adapter/" + std::to_string(l)));
  }

  const AdapterStackConfig& config() const { return cfg_; }

  bool layer_has_adapter(std::size_t layer) const {
    return layer >= cfg_.layers - cfg_.adapter_layers && layer < cfg_.layers;
  }

  Tensor forward(const Tensor& frames_feat, std::span<const NormalizedBox> boxes) const {
    return run(frames_feat, boxes, true);
  }

  // Adapter-free baseline over the identical frozen backbone.
  Tensor forward_plain(const Tensor& frames_feat) const { return run(frames_feat, {}, false); }

  std::vector<Tensor> trainable_params() const {
    std::vector<Tensor> out;
    for (const auto& a : adapters_) {
      auto p = a.trainable_params();
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  // Adapter parameters only; the frozen backbone never counts.
  std::size_t trainable_param_count() const {
    std::size_t total = 0;
    for (const auto& a : adapters_) total += a.trainable_param_count();
    return total;
  }

  std::vector<BoxAdapter>& adapters() { return adapters_; }

 private:
  Tensor run(const Tensor& frames_feat, std::span<const NormalizedBox> boxes,
             bool with_adapters) const {
    if (frames_feat.rank() != 4) throw DimensionError("stack: features must be [N,d,h,w]");
    const std::size_t n = frames_feat.dim(0);
    const std::size_t h = frames_feat.dim(2), w = frames_feat.dim(3);
    if (with_adapters && boxes.size() != n)
      throw InputError("stack: expected one box per frame");
    Tensor x = frames_feat;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      std::vector<Tensor> frames;
      frames.reserve(n);
      for (std::size_t i = 0; i < n; ++i)
        frames.push_back(from_tokens(layers_[l].forward(to_tokens(frame_at(x, i))), h, w));
      x = stack_frames(frames);
      if (with_adapters && layer_has_adapter(l))
        x = adapters_[l - (cfg_.layers - cfg_.adapter_layers)].forward(x, boxes);
    }
    return x;
  }

  AdapterStackConfig cfg_;
  std::vector<VitLayer> layers_;
  std::vector<BoxAdapter> adapters_;
};

// Closed-form parameter count for one adapter (3 projection convs, the zero
// conv, two layer norms, and the FFN pair).
inline std::size_t adapter_param_count(const BoxAdapterConfig& cfg) {
  const std::size_t d = cfg.d, hidden = cfg.ffn_hidden();
  return 3 * (d * d + d) + (d * d + d) + 2 * (2 * d) + (hidden * d + hidden) +
         (d * hidden + d);
}

inline std::size_t count_trainable_params(const AdapterVitStack& stack) {
  return stack.trainable_param_count();
}

}  // namespace intentcap
