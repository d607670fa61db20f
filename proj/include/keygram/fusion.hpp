#pragma once

// Context-adaptive fusion of a retrieved memory vector into hidden states:
//
//   K_m = M W_K,  V_m = M W_V                        (B x d each)
//   A[b,l] = sigmoid(<H[b,l], K_m[b]> / sqrt(d))     (B x L)
//   G = A (.) V_m                                    (B x L x d)
//   dH = Conv_span(G),  H~ = H + dH
//
// Conv_span is depthwise and bias-free. In token mode it runs along the token
// axis; in slot-channel mode it runs along the channel axis with a tap stride
// of one slot segment. Both use "same" zero padding with floor((w-1)/2) taps
// on the left. Everything is templated on the scalar so gradient checks can
// run the identical code in double precision.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "keygram/errors.hpp"
#include "keygram/hashing.hpp"

namespace keygram {

enum class ConvMode { Token, SlotChannel };

inline const char* to_string(ConvMode m) { return m == ConvMode::Token ? "token" : "slot-channel"; }

inline ConvMode conv_mode_from_string(const std::string& s) {
  if (s == "token") return ConvMode::Token;
  if (s == "slot-channel") return ConvMode::SlotChannel;
  throw ConfigError("unknown conv mode '" + s + "'");
}

struct FusionShape {
  std::size_t batch = 1;   // B
  std::size_t tokens = 1;  // L
  std::size_t width = 1;   // d
};

template <class T>
struct FusionCache {
  FusionShape shape;
  std::vector<T> keys;    // K_m, B x d
  std::vector<T> values;  // V_m, B x d
  std::vector<T> gates;   // A, B x L
  std::vector<T> gated;   // G, B x L x d
  std::vector<T> delta;   // dH, B x L x d
  std::vector<T> output;  // H~, B x L x d
};

template <class T>
struct FusionGrads {
  std::vector<T> hidden;   // B x L x d
  std::vector<T> memory;   // B x d_m
  std::vector<T> w_key;    // d_m x d
  std::vector<T> w_value;  // d_m x d
  std::vector<T> kernel;   // d x w
};

template <class T>
T sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

// K = M W for M: B x d_m, W: d_m x d.
template <class T>
std::vector<T> project(std::span<const T> memory, std::span<const T> weight, std::size_t batch,
                       std::size_t memory_width, std::size_t width) {
  if (memory.size() != batch * memory_width || weight.size() != memory_width * width)
    throw DimMismatch("project: memory " + std::to_string(memory.size()) + ", weight " +
                      std::to_string(weight.size()));
  std::vector<T> out(batch * width, T(0));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < memory_width; ++i) {
      T m = memory[b * memory_width + i];
      if (m == T(0)) continue;
      const T* w = weight.data() + i * width;
      T* o = out.data() + b * width;
      for (std::size_t c = 0; c < width; ++c) o[c] += m * w[c];
    }
  return out;
}

template <class T>
std::vector<T> gate(std::span<const T> hidden, std::span<const T> keys, const FusionShape& s) {
  if (hidden.size() != s.batch * s.tokens * s.width || keys.size() != s.batch * s.width)
    throw DimMismatch("gate: shapes do not conform");
  const T scale = T(1) / std::sqrt(static_cast<T>(s.width));
  std::vector<T> a(s.batch * s.tokens);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t l = 0; l < s.tokens; ++l) {
      const T* h = hidden.data() + (b * s.tokens + l) * s.width;
      const T* k = keys.data() + b * s.width;
      T dot = 0;
      for (std::size_t c = 0; c < s.width; ++c) dot += h[c] * k[c];
      a[b * s.tokens + l] = sigmoid(dot * scale);
    }
  return a;
}

struct ConvGeometry {
  ConvMode mode = ConvMode::Token;
  std::size_t span = 1;
  std::size_t channel_stride = 1;  // slot-channel mode only

  std::ptrdiff_t left_pad() const { return static_cast<std::ptrdiff_t>((span - 1) / 2); }
};

namespace detail {

// Visits every (output index, input index, kernel index) triple of the
// depthwise convolution over one B x L x d tensor.
template <class F>
void for_each_tap(const FusionShape& s, const ConvGeometry& g, F&& f) {
  const auto pad = g.left_pad();
  const auto L = static_cast<std::ptrdiff_t>(s.tokens);
  const auto D = static_cast<std::ptrdiff_t>(s.width);
  const auto stride = static_cast<std::ptrdiff_t>(g.channel_stride);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::ptrdiff_t l = 0; l < L; ++l)
      for (std::ptrdiff_t c = 0; c < D; ++c) {
        const std::size_t out = (b * s.tokens + l) * s.width + c;
        for (std::size_t k = 0; k < g.span; ++k) {
          const auto shift = static_cast<std::ptrdiff_t>(k) - pad;
          std::size_t in;
          if (g.mode == ConvMode::Token) {
            auto src = l + shift;
            if (src < 0 || src >= L) continue;
            in = (b * s.tokens + static_cast<std::size_t>(src)) * s.width + c;
          } else {
            auto src = c + shift * stride;
            if (src < 0 || src >= D) continue;
            in = (b * s.tokens + l) * s.width + static_cast<std::size_t>(src);
          }
          f(out, in, static_cast<std::size_t>(c) * g.span + k);
        }
      }
}

}  // namespace detail

// ΔH = Conv_span(A (.) V_m). Kernel layout is d x w (channel-major).
template <class T>
std::vector<T> convolve(std::span<const T> gated, std::span<const T> kernel, const FusionShape& s,
                        const ConvGeometry& g) {
  if (kernel.size() != s.width * g.span) throw DimMismatch("conv kernel must hold w*d coefficients");
  if (gated.size() != s.batch * s.tokens * s.width) throw DimMismatch("conv input shape");
  std::vector<T> out(gated.size(), T(0));
  detail::for_each_tap(s, g, [&](std::size_t o, std::size_t i, std::size_t k) {
    out[o] += kernel[k] * gated[i];
  });
  return out;
}

// H~ = H + Conv_span(A (.) V_m); returns (ΔH, H~) through the cache.
template <class T>
void fuse(std::span<const T> hidden, std::span<const T> gates, std::span<const T> values,
          std::span<const T> kernel, const FusionShape& s, const ConvGeometry& g, FusionCache<T>& cache) {
  if (gates.size() != s.batch * s.tokens || values.size() != s.batch * s.width ||
      hidden.size() != s.batch * s.tokens * s.width)
    throw DimMismatch("fuse: shapes do not conform");
  cache.gated.assign(hidden.size(), T(0));
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t l = 0; l < s.tokens; ++l) {
      T a = gates[b * s.tokens + l];
      for (std::size_t c = 0; c < s.width; ++c)
        cache.gated[(b * s.tokens + l) * s.width + c] = a * values[b * s.width + c];
    }
  cache.delta = convolve<T>(cache.gated, kernel, s, g);
  cache.output.resize(hidden.size());
  for (std::size_t i = 0; i < hidden.size(); ++i) cache.output[i] = hidden[i] + cache.delta[i];
}

template <class T>
class FusionLayer {
 public:
  FusionLayer() = default;

  // W_K, W_V uniform in [-1/sqrt(d_m), 1/sqrt(d_m)]; conv kernel all zero.
  FusionLayer(std::uint32_t layer, std::size_t memory_width, std::size_t width, ConvGeometry conv,
              std::uint64_t seed)
      : layer_(layer), memory_width_(memory_width), width_(width), conv_(conv) {
    if (memory_width == 0 || width == 0 || conv.span == 0 || conv.channel_stride == 0)
      throw DimMismatch("fusion layer dimensions must be positive");
    w_key_.resize(memory_width * width);
    w_value_.resize(memory_width * width);
    kernel_.assign(width * conv.span, T(0));
    const double bound = 1.0 / std::sqrt(static_cast<double>(memory_width));
    SplitMix64 gen(stream_seed(seed, layer, 0xfu, 0xfu, 0));
    auto draw = [&] {
      double u = static_cast<double>(gen.next() >> 11) * 0x1.0p-53;
      return static_cast<T>((2.0 * u - 1.0) * bound);
    };
    for (auto& w : w_key_) w = draw();
    for (auto& w : w_value_) w = draw();
  }

  std::uint32_t layer() const { return layer_; }
  std::size_t memory_width() const { return memory_width_; }
  std::size_t width() const { return width_; }
  const ConvGeometry& conv() const { return conv_; }

  std::vector<T>& w_key() { return w_key_; }
  std::vector<T>& w_value() { return w_value_; }
  std::vector<T>& kernel() { return kernel_; }
  const std::vector<T>& w_key() const { return w_key_; }
  const std::vector<T>& w_value() const { return w_value_; }
  const std::vector<T>& kernel() const { return kernel_; }

  FusionCache<T> forward(std::span<const T> hidden, std::span<const T> memory, const FusionShape& s) const {
    check(s, hidden, memory);
    FusionCache<T> cache;
    cache.shape = s;
    cache.keys = project<T>(memory, w_key_, s.batch, memory_width_, width_);
    cache.values = project<T>(memory, w_value_, s.batch, memory_width_, width_);
    cache.gates = gate<T>(hidden, cache.keys, s);
    fuse<T>(hidden, cache.gates, cache.values, kernel_, s, conv_, cache);
    return cache;
  }

  // Gradients of sum(upstream * H~) with respect to every input and parameter.
  FusionGrads<T> backward(const FusionCache<T>& cache, std::span<const T> hidden, std::span<const T> memory,
                          std::span<const T> upstream) const {
    const auto& s = cache.shape;
    check(s, hidden, memory);
    if (upstream.size() != hidden.size()) throw DimMismatch("upstream gradient shape");
    const std::size_t B = s.batch, L = s.tokens, D = s.width, DM = memory_width_;
    FusionGrads<T> g;
    g.hidden.assign(upstream.begin(), upstream.end());
    g.kernel.assign(kernel_.size(), T(0));
    std::vector<T> d_gated(cache.gated.size(), T(0));
    detail::for_each_tap(s, conv_, [&](std::size_t o, std::size_t i, std::size_t k) {
      d_gated[i] += kernel_[k] * upstream[o];
      g.kernel[k] += upstream[o] * cache.gated[i];
    });

    std::vector<T> d_keys(B * D, T(0)), d_values(B * D, T(0));
    const T scale = T(1) / std::sqrt(static_cast<T>(D));
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t l = 0; l < L; ++l) {
        const std::size_t row = (b * L + l) * D;
        const T a = cache.gates[b * L + l];
        T d_a = 0;
        for (std::size_t c = 0; c < D; ++c) {
          d_a += d_gated[row + c] * cache.values[b * D + c];
          d_values[b * D + c] += d_gated[row + c] * a;
        }
        const T d_logit = d_a * a * (T(1) - a) * scale;
        for (std::size_t c = 0; c < D; ++c) {
          g.hidden[row + c] += d_logit * cache.keys[b * D + c];
          d_keys[b * D + c] += d_logit * hidden[row + c];
        }
      }

    g.w_key.assign(DM * D, T(0));
    g.w_value.assign(DM * D, T(0));
    g.memory.assign(B * DM, T(0));
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < DM; ++i) {
        const T m = memory[b * DM + i];
        const T* wk = w_key_.data() + i * D;
        const T* wv = w_value_.data() + i * D;
        T* gk = g.w_key.data() + i * D;
        T* gv = g.w_value.data() + i * D;
        const T* dk = d_keys.data() + b * D;
        const T* dv = d_values.data() + b * D;
        T dm = 0;
        for (std::size_t c = 0; c < D; ++c) {
          gk[c] += m * dk[c];
          gv[c] += m * dv[c];
          dm += wk[c] * dk[c] + wv[c] * dv[c];
        }
        g.memory[b * DM + i] = dm;
      }
    return g;
  }

  // Grows the projections to `new_memory_width` rows. Old row i moves to
  // row_map[i]; every other row starts at zero, so outputs are unchanged.
  void extend_projections(std::size_t new_memory_width, std::span<const std::size_t> row_map) {
    if (new_memory_width <= memory_width_)
      throw DimMismatch("extend_projections needs a wider memory");
    if (row_map.size() != memory_width_) throw DimMismatch("row map must cover every existing row");
    std::vector<T> wk(new_memory_width * width_, T(0)), wv(new_memory_width * width_, T(0));
    for (std::size_t i = 0; i < memory_width_; ++i) {
      if (row_map[i] >= new_memory_width) throw DimMismatch("row map target out of range");
      std::copy_n(w_key_.begin() + i * width_, width_, wk.begin() + row_map[i] * width_);
      std::copy_n(w_value_.begin() + i * width_, width_, wv.begin() + row_map[i] * width_);
    }
    w_key_ = std::move(wk);
    w_value_ = std::move(wv);
    memory_width_ = new_memory_width;
  }

  // New coordinates appended after the existing ones (slot expansion).
  void extend_projections(std::size_t new_memory_width) {
    std::vector<std::size_t> identity(memory_width_);
    for (std::size_t i = 0; i < identity.size(); ++i) identity[i] = i;
    extend_projections(new_memory_width, identity);
  }

  std::size_t parameter_count() const { return w_key_.size() + w_value_.size() + kernel_.size(); }

  template <class U>
  FusionLayer<U> cast() const {
    FusionLayer<U> out;
    out.layer_ = layer_;
    out.memory_width_ = memory_width_;
    out.width_ = width_;
    out.conv_ = conv_;
    out.w_key_.assign(w_key_.begin(), w_key_.end());
    out.w_value_.assign(w_value_.begin(), w_value_.end());
    out.kernel_.assign(kernel_.begin(), kernel_.end());
    return out;
  }

 private:
  template <class U>
  friend class FusionLayer;

  void check(const FusionShape& s, std::span<const T> hidden, std::span<const T> memory) const {
    if (s.width != width_) throw DimMismatch("hidden width does not match the fusion layer");
    if (hidden.size() != s.batch * s.tokens * s.width) throw DimMismatch("hidden tensor shape");
    if (memory.size() != s.batch * memory_width_)
      throw DimMismatch("memory width " + std::to_string(memory.size()) + " != B*d_m " +
                        std::to_string(s.batch * memory_width_));
  }

  std::uint32_t layer_ = 0;
  std::size_t memory_width_ = 0;
  std::size_t width_ = 0;
  ConvGeometry conv_;
  std::vector<T> w_key_, w_value_, kernel_;
};

}  // namespace keygram
