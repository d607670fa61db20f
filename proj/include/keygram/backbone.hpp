#pragma once

// Toy transformer backbone with optional Key-Gram fusion at selected blocks.
//
// Block (pre-LN, single head, no mask):
//   x <- x + Fusion_l(x, M_l)            only when l is in the insertion set
//   x <- x + Attn(LN1(x))
//   x <- x + W2 relu(W1 LN2(x))
// Head: mean over tokens of LNf(x), then one linear classifier per label space.
//
// Sequences are processed one at a time; the trainer accumulates gradients
// over a batch. Scalar-templated so gradient checks can run in double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "keygram/errors.hpp"
#include "keygram/fusion.hpp"
#include "keygram/hashing.hpp"
#include "keygram/memory.hpp"

namespace keygram {

struct BackboneConfig {
  std::size_t vocab_size = 0;
  std::size_t max_tokens = 16;
  std::size_t blocks = 6;   // N
  std::size_t width = 64;   // d
  std::size_t mlp_ratio = 4;
  std::vector<std::size_t> head_sizes;  // one classifier per label space
  std::uint64_t seed = 0;
};

namespace nn {

// y[n x out] (+)= x[n x in] W[in x out] + b
template <class T>
void linear(std::span<const T> x, std::span<const T> w, std::span<const T> b, std::span<T> y, std::size_t n,
            std::size_t in, std::size_t out) {
  for (std::size_t r = 0; r < n; ++r) {
    T* yr = y.data() + r * out;
    for (std::size_t c = 0; c < out; ++c) yr[c] = b.empty() ? T(0) : b[c];
    const T* xr = x.data() + r * in;
    for (std::size_t i = 0; i < in; ++i) {
      const T xi = xr[i];
      const T* wi = w.data() + i * out;
      for (std::size_t c = 0; c < out; ++c) yr[c] += xi * wi[c];
    }
  }
}

// Accumulates dW += x^T dy, db += colsum(dy) and writes dx = dy W^T (if non-empty).
template <class T>
void linear_backward(std::span<const T> x, std::span<const T> w, std::span<const T> dy, std::span<T> dx,
                     std::span<T> dw, std::span<T> db, std::size_t n, std::size_t in, std::size_t out) {
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = x.data() + r * in;
    const T* dyr = dy.data() + r * out;
    for (std::size_t i = 0; i < in; ++i) {
      const T xi = xr[i];
      T* dwi = dw.data() + i * out;
      const T* wi = w.data() + i * out;
      T acc = 0;
      for (std::size_t c = 0; c < out; ++c) dwi[c] += xi * dyr[c];
#pragma omp simd reduction(+ : acc)
      for (std::size_t c = 0; c < out; ++c) acc += wi[c] * dyr[c];
      if (!dx.empty()) dx[r * in + i] = acc;
    }
    if (!db.empty())
      for (std::size_t c = 0; c < out; ++c) db[c] += dyr[c];
  }
}

template <class T>
struct NormCache {
  std::vector<T> xhat;
  std::vector<T> rstd;
};

template <class T>
void layer_norm(std::span<const T> x, std::span<const T> g, std::span<const T> b, std::span<T> y,
                NormCache<T>& cache, std::size_t n, std::size_t d) {
  constexpr T eps = T(1e-5);
  cache.xhat.resize(n * d);
  cache.rstd.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = x.data() + r * d;
    T mean = 0;
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<T>(d);
    const T rstd = T(1) / std::sqrt(var + eps);
    cache.rstd[r] = rstd;
    for (std::size_t c = 0; c < d; ++c) {
      const T xh = (xr[c] - mean) * rstd;
      cache.xhat[r * d + c] = xh;
      y[r * d + c] = xh * g[c] + b[c];
    }
  }
}

template <class T>
void layer_norm_backward(const NormCache<T>& cache, std::span<const T> g, std::span<const T> dy, std::span<T> dx,
                         std::span<T> dg, std::span<T> db, std::size_t n, std::size_t d) {
  for (std::size_t r = 0; r < n; ++r) {
    T mean_dxh = 0, mean_dxh_xh = 0;
    for (std::size_t c = 0; c < d; ++c) {
      const T xh = cache.xhat[r * d + c];
      const T dxh = dy[r * d + c] * g[c];
      dg[c] += dy[r * d + c] * xh;
      db[c] += dy[r * d + c];
      mean_dxh += dxh;
      mean_dxh_xh += dxh * xh;
    }
    mean_dxh /= static_cast<T>(d);
    mean_dxh_xh /= static_cast<T>(d);
    for (std::size_t c = 0; c < d; ++c) {
      const T xh = cache.xhat[r * d + c];
      const T dxh = dy[r * d + c] * g[c];
      dx[r * d + c] = cache.rstd[r] * (dxh - mean_dxh - xh * mean_dxh_xh);
    }
  }
}

}  // namespace nn

template <class T>
struct Block {
  std::vector<T> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;

  template <class F>
  void visit(F&& f) {
    for (auto* p : {&ln1_g, &ln1_b, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo, &ln2_g, &ln2_b, &w1, &b1, &w2, &b2})
      f(*p);
  }
  bool operator==(const Block&) const = default;
};

// Dense backbone parameters; the same type doubles as a gradient accumulator.
template <class T>
struct Backbone {
  BackboneConfig cfg;
  std::vector<T> embedding;  // vocab x d
  std::vector<T> position;   // max_tokens x d
  std::vector<Block<T>> blocks;
  std::vector<T> lnf_g, lnf_b;
  std::vector<std::vector<T>> head_w, head_b;  // per label space: d x C, C

  template <class F>
  void visit(F&& f) {
    f(embedding);
    f(position);
    for (auto& b : blocks) b.visit(f);
    f(lnf_g);
    f(lnf_b);
    for (auto& w : head_w) f(w);
    for (auto& b : head_b) f(b);
  }

  static Backbone zeros(const BackboneConfig& cfg) {
    Backbone m;
    m.cfg = cfg;
    const std::size_t d = cfg.width, h = cfg.width * cfg.mlp_ratio;
    m.embedding.assign(cfg.vocab_size * d, T(0));
    m.position.assign(cfg.max_tokens * d, T(0));
    m.blocks.resize(cfg.blocks);
    for (auto& b : m.blocks) {
      for (auto* p : {&b.ln1_g, &b.ln1_b, &b.bq, &b.bk, &b.bv, &b.bo, &b.ln2_g, &b.ln2_b, &b.b2})
        p->assign(d, T(0));
      for (auto* p : {&b.wq, &b.wk, &b.wv, &b.wo}) p->assign(d * d, T(0));
      b.w1.assign(d * h, T(0));
      b.b1.assign(h, T(0));
      b.w2.assign(h * d, T(0));
    }
    m.lnf_g.assign(d, T(0));
    m.lnf_b.assign(d, T(0));
    for (auto c : cfg.head_sizes) {
      m.head_w.emplace_back(d * c, T(0));
      m.head_b.emplace_back(c, T(0));
    }
    return m;
  }

  // Linear weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], token
  // embeddings uniform in [-1, 1], positions in [-0.02, 0.02], norms at (1, 0).
  static Backbone init(const BackboneConfig& cfg) {
    if (cfg.vocab_size == 0 || cfg.width == 0 || cfg.head_sizes.empty())
      throw ConfigError("backbone needs a vocabulary, a width and at least one label space");
    Backbone m = zeros(cfg);
    SplitMix64 gen(SplitMix64::mix(cfg.seed ^ 0xb5ad4eceda1ce2a9ULL));
    auto fill = [&](std::vector<T>& v, double bound) {
      for (auto& x : v) {
        double u = static_cast<double>(gen.next() >> 11) * 0x1.0p-53;
        x = static_cast<T>((2.0 * u - 1.0) * bound);
      }
    };
    const double d = static_cast<double>(cfg.width);
    const double h = d * static_cast<double>(cfg.mlp_ratio);
    fill(m.embedding, 1.0);
    fill(m.position, 0.02);
    for (auto& b : m.blocks) {
      std::fill(b.ln1_g.begin(), b.ln1_g.end(), T(1));
      std::fill(b.ln2_g.begin(), b.ln2_g.end(), T(1));
      for (auto* p : {&b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo, &b.w1, &b.b1})
        fill(*p, 1.0 / std::sqrt(d));
      fill(b.w2, 1.0 / std::sqrt(h));
      fill(b.b2, 1.0 / std::sqrt(h));
    }
    std::fill(m.lnf_g.begin(), m.lnf_g.end(), T(1));
    for (auto& w : m.head_w) fill(w, 1.0 / std::sqrt(d));
    for (auto& b : m.head_b) fill(b, 1.0 / std::sqrt(d));
    return m;
  }

  template <class U>
  Backbone<U> cast() const {
    Backbone<U> out = Backbone<U>::zeros(cfg);
    auto src = *this;
    std::vector<const std::vector<T>*> from;
    src.visit([&](std::vector<T>& v) { from.push_back(&v); });
    std::size_t i = 0;
    out.visit([&](std::vector<U>& v) {
      v.assign(from[i]->begin(), from[i]->end());
      ++i;
    });
    return out;
  }

  bool operator==(const Backbone& o) const {
    return embedding == o.embedding && position == o.position && blocks == o.blocks && lnf_g == o.lnf_g &&
           lnf_b == o.lnf_b && head_w == o.head_w && head_b == o.head_b;
  }
};

template <class T>
struct BlockCache {
  std::vector<T> input;  // block input after any fusion
  std::vector<T> h1, q, k, v, probs, attn, x1, h2, pre, act;
  nn::NormCache<T> n1, n2;
};

template <class T>
struct ForwardCache {
  std::size_t tokens = 0;
  std::vector<int> ids;
  std::vector<std::vector<T>> block_inputs;       // before fusion
  std::map<std::uint32_t, std::vector<T>> memory;  // retrieved vectors, d_m each
  std::map<std::uint32_t, FusionCache<T>> fusion;
  std::vector<BlockCache<T>> blocks;
  std::vector<T> final_x, final_h, pooled;
  nn::NormCache<T> nf;
  std::vector<std::vector<T>> logits;
};

template <class T>
struct ModelGrads {
  Backbone<T> backbone;
  std::map<std::uint32_t, FusionGrads<T>> fusion;
  std::map<std::uint32_t, std::vector<T>> memory;  // dL/dM per inserted layer
};

// Backbone plus Key-Gram modules at `insertion` layers, backed by `memory`.
template <class T>
class KeyGramModel {
 public:
  KeyGramModel() = default;

  KeyGramModel(Backbone<T> backbone, LogicalMemory memory, std::map<std::uint32_t, FusionLayer<T>> fusion)
      : backbone_(std::move(backbone)), memory_(std::move(memory)), fusion_(std::move(fusion)) {
    for (const auto& [layer, f] : fusion_) {
      if (layer >= backbone_.cfg.blocks)
        throw UnknownLayer("insertion layer " + std::to_string(layer) + " outside the backbone");
      if (!memory_.has_layer(layer)) throw UnknownLayer("memory has no layer " + std::to_string(layer));
      if (f.width() != backbone_.cfg.width) throw DimMismatch("fusion width differs from backbone width");
      if (f.memory_width() != memory_.memory_width(layer)) throw DimMismatch("fusion memory width differs");
    }
  }

  // Plain backbone with an empty insertion set.
  explicit KeyGramModel(Backbone<T> backbone) : backbone_(std::move(backbone)) {}

  Backbone<T>& backbone() { return backbone_; }
  const Backbone<T>& backbone() const { return backbone_; }
  LogicalMemory& memory() { return memory_; }
  const LogicalMemory& memory() const { return memory_; }
  std::map<std::uint32_t, FusionLayer<T>>& fusion() { return fusion_; }
  const std::map<std::uint32_t, FusionLayer<T>>& fusion() const { return fusion_; }

  // Growth keeps every output unchanged: new rows and new projection rows
  // start at zero and old coordinates are carried to their new offsets.
  std::uint32_t expand_capacity(std::uint32_t slot, std::uint32_t head) {
    std::map<std::uint32_t, std::vector<Segment>> before;
    for (const auto& [l, _] : fusion_) before[l] = memory_.layout(l);
    const auto gen = memory_.expand_capacity(slot, head);
    for (auto& [l, f] : fusion_) {
      const auto after = memory_.layout(l);
      std::vector<std::size_t> row_map(f.memory_width());
      for (const auto& seg : before[l])
        for (const auto& n : after)
          if (n.slot == seg.slot && n.head == seg.head && n.generation == seg.generation)
            for (std::size_t c = 0; c < memory_.head_width(); ++c) row_map[seg.offset + c] = n.offset + c;
      f.extend_projections(memory_.memory_width(l), row_map);
    }
    return gen;
  }

  void expand_slots(std::uint32_t extra) {
    memory_.expand_slots(extra);
    for (auto& [l, f] : fusion_) f.extend_projections(memory_.memory_width(l));
  }

  std::set<std::uint32_t> insertion_set() const {
    std::set<std::uint32_t> out;
    for (const auto& [l, _] : fusion_) out.insert(l);
    return out;
  }

  ForwardCache<T> forward(std::span<const int> ids, std::span<const PaddedKey> keys,
                          LookupStats* stats = nullptr) const {
    const auto& cfg = backbone_.cfg;
    const std::size_t L = ids.size(), d = cfg.width, h = d * cfg.mlp_ratio;
    if (L == 0 || L > cfg.max_tokens) throw DimMismatch("sequence length out of range");
    ForwardCache<T> c;
    c.tokens = L;
    c.ids.assign(ids.begin(), ids.end());
    std::vector<T> x(L * d);
    for (std::size_t t = 0; t < L; ++t) {
      if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= cfg.vocab_size)
        throw DimMismatch("token id out of vocabulary");
      for (std::size_t j = 0; j < d; ++j)
        x[t * d + j] = backbone_.embedding[static_cast<std::size_t>(ids[t]) * d + j] + backbone_.position[t * d + j];
    }
    c.blocks.resize(cfg.blocks);
    c.block_inputs.resize(cfg.blocks);
    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
    for (std::size_t bi = 0; bi < cfg.blocks; ++bi) {
      c.block_inputs[bi] = x;
      if (auto it = fusion_.find(static_cast<std::uint32_t>(bi)); it != fusion_.end()) {
        auto raw = memory_.retrieve(keys, it->first, stats);
        std::vector<T> mem(raw.begin(), raw.end());
        auto fc = it->second.forward(x, mem, FusionShape{1, L, d});
        x = fc.output;
        c.memory[it->first] = std::move(mem);
        c.fusion[it->first] = std::move(fc);
      }
      const auto& p = backbone_.blocks[bi];
      auto& bc = c.blocks[bi];
      bc.input = x;
      bc.h1.resize(L * d);
      nn::layer_norm<T>(x, p.ln1_g, p.ln1_b, bc.h1, bc.n1, L, d);
      bc.q.resize(L * d);
      bc.k.resize(L * d);
      bc.v.resize(L * d);
      nn::linear<T>(bc.h1, p.wq, p.bq, bc.q, L, d, d);
      nn::linear<T>(bc.h1, p.wk, p.bk, bc.k, L, d, d);
      nn::linear<T>(bc.h1, p.wv, p.bv, bc.v, L, d, d);
      bc.probs.assign(L * L, T(0));
      for (std::size_t i = 0; i < L; ++i) {
        T mx = -INFINITY;
        for (std::size_t j = 0; j < L; ++j) {
          T s = 0;
          for (std::size_t c2 = 0; c2 < d; ++c2) s += bc.q[i * d + c2] * bc.k[j * d + c2];
          s *= inv_sqrt_d;
          bc.probs[i * L + j] = s;
          mx = std::max(mx, s);
        }
        T z = 0;
        for (std::size_t j = 0; j < L; ++j) z += (bc.probs[i * L + j] = std::exp(bc.probs[i * L + j] - mx));
        for (std::size_t j = 0; j < L; ++j) bc.probs[i * L + j] /= z;
      }
      bc.attn.assign(L * d, T(0));
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j) {
          const T pij = bc.probs[i * L + j];
          for (std::size_t c2 = 0; c2 < d; ++c2) bc.attn[i * d + c2] += pij * bc.v[j * d + c2];
        }
      std::vector<T> proj(L * d);
      nn::linear<T>(bc.attn, p.wo, p.bo, proj, L, d, d);
      bc.x1.resize(L * d);
      for (std::size_t i = 0; i < L * d; ++i) bc.x1[i] = x[i] + proj[i];
      bc.h2.resize(L * d);
      nn::layer_norm<T>(bc.x1, p.ln2_g, p.ln2_b, bc.h2, bc.n2, L, d);
      bc.pre.resize(L * h);
      nn::linear<T>(bc.h2, p.w1, p.b1, bc.pre, L, d, h);
      bc.act.resize(L * h);
      for (std::size_t i = 0; i < L * h; ++i) bc.act[i] = bc.pre[i] > T(0) ? bc.pre[i] : T(0);
      std::vector<T> mlp(L * d);
      nn::linear<T>(bc.act, p.w2, p.b2, mlp, L, h, d);
      for (std::size_t i = 0; i < L * d; ++i) x[i] = bc.x1[i] + mlp[i];
    }
    c.final_x = x;
    c.final_h.resize(L * d);
    nn::layer_norm<T>(x, backbone_.lnf_g, backbone_.lnf_b, c.final_h, c.nf, L, d);
    c.pooled.assign(d, T(0));
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t j = 0; j < d; ++j) c.pooled[j] += c.final_h[t * d + j];
    for (auto& v : c.pooled) v /= static_cast<T>(L);
    for (std::size_t hd = 0; hd < cfg.head_sizes.size(); ++hd) {
      std::vector<T> logits(cfg.head_sizes[hd]);
      nn::linear<T>(c.pooled, backbone_.head_w[hd], backbone_.head_b[hd], logits, 1, d, cfg.head_sizes[hd]);
      c.logits.push_back(std::move(logits));
    }
    return c;
  }

  ModelGrads<T> zero_grads() const {
    ModelGrads<T> g{Backbone<T>::zeros(backbone_.cfg), {}, {}};
    for (const auto& [l, f] : fusion_) {
      FusionGrads<T> fg;
      fg.w_key.assign(f.w_key().size(), T(0));
      fg.w_value.assign(f.w_value().size(), T(0));
      fg.kernel.assign(f.kernel().size(), T(0));
      g.fusion[l] = std::move(fg);
    }
    return g;
  }

  // Accumulates gradients of sum_h <dlogits[h], logits[h]> into `g`.
  // g.memory[layer] receives this sequence's dL/dM (overwritten, not summed).
  void backward(const ForwardCache<T>& c, const std::vector<std::vector<T>>& dlogits, ModelGrads<T>& g) const {
    const auto& cfg = backbone_.cfg;
    const std::size_t L = c.tokens, d = cfg.width, h = d * cfg.mlp_ratio;
    auto& gb = g.backbone;
    std::vector<T> dpooled(d, T(0));
    for (std::size_t hd = 0; hd < cfg.head_sizes.size(); ++hd) {
      std::vector<T> dp(d);
      nn::linear_backward<T>(c.pooled, backbone_.head_w[hd], dlogits[hd], dp, gb.head_w[hd], gb.head_b[hd], 1, d,
                             cfg.head_sizes[hd]);
      for (std::size_t j = 0; j < d; ++j) dpooled[j] += dp[j];
    }
    std::vector<T> dh(L * d);
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t j = 0; j < d; ++j) dh[t * d + j] = dpooled[j] / static_cast<T>(L);
    std::vector<T> dx(L * d);
    nn::layer_norm_backward<T>(c.nf, backbone_.lnf_g, dh, dx, gb.lnf_g, gb.lnf_b, L, d);

    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
    for (std::size_t bi = cfg.blocks; bi-- > 0;) {
      const auto& p = backbone_.blocks[bi];
      auto& gp = gb.blocks[bi];
      const auto& bc = c.blocks[bi];
      // MLP branch
      std::vector<T> dact(L * h);
      nn::linear_backward<T>(bc.act, p.w2, dx, dact, gp.w2, gp.b2, L, h, d);
      for (std::size_t i = 0; i < L * h; ++i)
        if (bc.pre[i] <= T(0)) dact[i] = T(0);
      std::vector<T> dh2(L * d);
      nn::linear_backward<T>(bc.h2, p.w1, dact, dh2, gp.w1, gp.b1, L, d, h);
      std::vector<T> dx1(L * d);
      nn::layer_norm_backward<T>(bc.n2, p.ln2_g, dh2, dx1, gp.ln2_g, gp.ln2_b, L, d);
      for (std::size_t i = 0; i < L * d; ++i) dx1[i] += dx[i];
      // attention branch
      std::vector<T> dattn(L * d);
      nn::linear_backward<T>(bc.attn, p.wo, dx1, dattn, gp.wo, gp.bo, L, d, d);
      std::vector<T> dprobs(L * L, T(0)), dv(L * d, T(0));
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j) {
          T acc = 0;
          const T pij = bc.probs[i * L + j];
          for (std::size_t c2 = 0; c2 < d; ++c2) {
            acc += dattn[i * d + c2] * bc.v[j * d + c2];
            dv[j * d + c2] += pij * dattn[i * d + c2];
          }
          dprobs[i * L + j] = acc;
        }
      std::vector<T> dq(L * d, T(0)), dk(L * d, T(0));
      for (std::size_t i = 0; i < L; ++i) {
        T dot = 0;
        for (std::size_t j = 0; j < L; ++j) dot += dprobs[i * L + j] * bc.probs[i * L + j];
        for (std::size_t j = 0; j < L; ++j) {
          const T ds = bc.probs[i * L + j] * (dprobs[i * L + j] - dot) * inv_sqrt_d;
          for (std::size_t c2 = 0; c2 < d; ++c2) {
            dq[i * d + c2] += ds * bc.k[j * d + c2];
            dk[j * d + c2] += ds * bc.q[i * d + c2];
          }
        }
      }
      std::vector<T> dh1(L * d, T(0)), tmp(L * d);
      nn::linear_backward<T>(bc.h1, p.wq, dq, tmp, gp.wq, gp.bq, L, d, d);
      for (std::size_t i = 0; i < L * d; ++i) dh1[i] += tmp[i];
      nn::linear_backward<T>(bc.h1, p.wk, dk, tmp, gp.wk, gp.bk, L, d, d);
      for (std::size_t i = 0; i < L * d; ++i) dh1[i] += tmp[i];
      nn::linear_backward<T>(bc.h1, p.wv, dv, tmp, gp.wv, gp.bv, L, d, d);
      for (std::size_t i = 0; i < L * d; ++i) dh1[i] += tmp[i];
      std::vector<T> dinput(L * d);
      nn::layer_norm_backward<T>(bc.n1, p.ln1_g, dh1, dinput, gp.ln1_g, gp.ln1_b, L, d);
      for (std::size_t i = 0; i < L * d; ++i) dinput[i] += dx1[i];
      dx = std::move(dinput);
      // fusion sits in front of the block
      if (auto it = fusion_.find(static_cast<std::uint32_t>(bi)); it != fusion_.end()) {
        const auto& fc = c.fusion.at(it->first);
        auto fg = it->second.backward(fc, c.block_inputs[bi], c.memory.at(it->first), dx);
        auto& acc = g.fusion[it->first];
        for (std::size_t i = 0; i < fg.w_key.size(); ++i) acc.w_key[i] += fg.w_key[i];
        for (std::size_t i = 0; i < fg.w_value.size(); ++i) acc.w_value[i] += fg.w_value[i];
        for (std::size_t i = 0; i < fg.kernel.size(); ++i) acc.kernel[i] += fg.kernel[i];
        g.memory[it->first] = std::move(fg.memory);
        dx = std::move(fg.hidden);
      }
    }
    for (std::size_t t = 0; t < L; ++t) {
      const auto id = static_cast<std::size_t>(c.ids[t]);
      for (std::size_t j = 0; j < d; ++j) {
        gb.embedding[id * d + j] += dx[t * d + j];
        gb.position[t * d + j] += dx[t * d + j];
      }
    }
  }

 private:
  Backbone<T> backbone_;
  LogicalMemory memory_;
  std::map<std::uint32_t, FusionLayer<T>> fusion_;
};

// Softmax cross-entropy; returns the loss and writes dL/dlogits.
template <class T>
T cross_entropy(std::span<const T> logits, std::size_t label, std::span<T> dlogits) {
  T mx = *std::max_element(logits.begin(), logits.end());
  T z = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += std::exp(logits[i] - mx);
  for (std::size_t i = 0; i < logits.size(); ++i) dlogits[i] = std::exp(logits[i] - mx) / z;
  dlogits[label] -= T(1);
  return -(logits[label] - mx - std::log(z));
}

template <class T>
std::size_t argmax(std::span<const T> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace keygram
