#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "keygram/fusion.hpp"

using namespace keygram;

namespace {

struct Case {
  FusionShape shape;
  std::size_t memory_width;
  ConvGeometry conv;
};

std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

FusionLayer<double> random_layer(std::mt19937_64& rng, const Case& c) {
  FusionLayer<double> f(0, c.memory_width, c.shape.width, c.conv, rng());
  f.kernel() = uniform(rng, f.kernel().size());
  return f;
}

double relative_error(double a, double b) { return std::abs(a - b) / std::max(1e-6, std::abs(a) + std::abs(b)); }

// Direct depthwise convolution with explicit zero padding, written without
// the shared tap iterator.
std::vector<double> conv_reference(const std::vector<double>& g, const std::vector<double>& kernel,
                                   const FusionShape& s, const ConvGeometry& geom) {
  const long L = static_cast<long>(s.tokens), D = static_cast<long>(s.width), w = static_cast<long>(geom.span);
  const long pad = (w - 1) / 2;
  std::vector<double> out(g.size(), 0.0);
  for (long b = 0; b < static_cast<long>(s.batch); ++b)
    for (long l = 0; l < L; ++l)
      for (long c = 0; c < D; ++c) {
        double acc = 0;
        for (long k = 0; k < w; ++k) {
          long ll = l, cc = c;
          if (geom.mode == ConvMode::Token) ll = l + k - pad;
          else cc = c + (k - pad) * static_cast<long>(geom.channel_stride);
          if (ll < 0 || ll >= L || cc < 0 || cc >= D) continue;
          acc += kernel[static_cast<std::size_t>(c * w + k)] * g[static_cast<std::size_t>((b * L + ll) * D + cc)];
        }
        out[static_cast<std::size_t>((b * L + l) * D + c)] = acc;
      }
  return out;
}

std::vector<Case> random_cases(std::mt19937_64& rng, ConvMode mode, std::size_t n) {
  std::vector<Case> cases;
  for (std::size_t i = 0; i < n; ++i) {
    Case c;
    c.shape.batch = 1 + rng() % 3;
    c.shape.tokens = 1 + rng() % 6;
    c.shape.width = 2 + rng() % 7;
    c.memory_width = 1 + rng() % 9;
    c.conv.mode = mode;
    c.conv.span = 1 + rng() % 5;
    c.conv.channel_stride = 1 + rng() % 3;
    cases.push_back(c);
  }
  return cases;
}

}  // namespace

TEST(Gate, WorkedExample) {
  // d = 2, H = (1, 0), K_m = (2, 0): sigmoid(2 / sqrt(2)).
  std::vector<double> h{1, 0}, k{2, 0};
  auto a = gate<double>(h, k, FusionShape{1, 1, 2});
  EXPECT_NEAR(a[0], 0.80443, 1e-4);
  EXPECT_DOUBLE_EQ(a[0], 1.0 / (1.0 + std::exp(-std::sqrt(2.0))));
}

TEST(Gate, ZeroKeysGiveOneHalf) {
  std::mt19937_64 rng(1);
  auto h = uniform(rng, 2 * 3 * 4);
  auto a = gate<double>(h, std::vector<double>(8, 0.0), FusionShape{2, 3, 4});
  for (double v : a) EXPECT_EQ(v, 0.5);
}

TEST(Sigmoid, StableForLargeInputs) {
  EXPECT_EQ(sigmoid(-1000.0), 0.0);
  EXPECT_EQ(sigmoid(1000.0), 1.0);
  EXPECT_FALSE(std::isnan(sigmoid(-1e300)));
}

TEST(Project, MatchesMatrixProduct) {
  std::mt19937_64 rng(2);
  auto m = uniform(rng, 2 * 3), w = uniform(rng, 3 * 4);
  auto k = project<double>(m, w, 2, 3, 4);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 4; ++c) {
      double ref = 0;
      for (std::size_t i = 0; i < 3; ++i) ref += m[b * 3 + i] * w[i * 4 + c];
      EXPECT_NEAR(k[b * 4 + c], ref, 1e-12);
    }
  EXPECT_THROW(project<double>(m, w, 2, 3, 5), DimMismatch);
}

TEST(Convolve, MatchesDirectReference) {
  std::mt19937_64 rng(3);
  for (auto mode : {ConvMode::Token, ConvMode::SlotChannel})
    for (const auto& c : random_cases(rng, mode, 30)) {
      auto g = uniform(rng, c.shape.batch * c.shape.tokens * c.shape.width);
      auto k = uniform(rng, c.shape.width * c.conv.span);
      auto got = convolve<double>(g, k, c.shape, c.conv);
      auto ref = conv_reference(g, k, c.shape, c.conv);
      for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], ref[i], 1e-12);
    }
}

TEST(Convolve, SamePaddingPlacesTheCenterTap) {
  // Span 3, single channel, unit impulse at token 2: tap k lands on token 2 - (k - 1).
  std::vector<double> g{0, 0, 1, 0, 0};
  std::vector<double> k{1, 10, 100};
  auto out = convolve<double>(g, k, FusionShape{1, 5, 1}, ConvGeometry{ConvMode::Token, 3, 1});
  EXPECT_EQ(out, (std::vector<double>{0, 100, 10, 1, 0}));
  // Even span 4: left pad 1.
  std::vector<double> k4{1, 10, 100, 1000};
  auto out4 = convolve<double>(g, k4, FusionShape{1, 5, 1}, ConvGeometry{ConvMode::Token, 4, 1});
  EXPECT_EQ(out4, (std::vector<double>{1000, 100, 10, 1, 0}));
}

TEST(Convolve, SlotChannelStridesBySegment) {
  // d = 4, stride 2, span 3: channel c reads c-2, c, c+2.
  std::vector<double> g{1, 2, 3, 4};
  std::vector<double> k(12, 0.0);
  for (std::size_t c = 0; c < 4; ++c) k[c * 3 + 0] = 1;  // left tap only
  auto out = convolve<double>(g, k, FusionShape{1, 1, 4}, ConvGeometry{ConvMode::SlotChannel, 3, 2});
  EXPECT_EQ(out, (std::vector<double>{0, 0, 1, 2}));
}

TEST(FusionLayer, IdentityAtInit) {
  std::mt19937_64 rng(4);
  for (auto mode : {ConvMode::Token, ConvMode::SlotChannel})
    for (const auto& c : random_cases(rng, mode, 20)) {
      FusionLayer<float> f(2, c.memory_width, c.shape.width, c.conv, 5);
      for (float v : f.kernel()) ASSERT_EQ(v, 0.0f);
      std::vector<float> h(c.shape.batch * c.shape.tokens * c.shape.width), m(c.shape.batch * c.memory_width);
      std::uniform_real_distribution<float> d(-3, 3);
      for (auto& x : h) x = d(rng);
      for (auto& x : m) x = d(rng);
      auto cache = f.forward(h, m, c.shape);
      ASSERT_EQ(cache.output, h);
    }
}

TEST(FusionLayer, InitBounds) {
  FusionLayer<double> f(0, 16, 8, ConvGeometry{ConvMode::Token, 3, 1}, 1);
  for (double w : f.w_key()) EXPECT_LE(std::abs(w), 0.25);
  for (double w : f.w_value()) EXPECT_LE(std::abs(w), 0.25);
  EXPECT_EQ(f.parameter_count(), 16u * 8 * 2 + 8 * 3);
  EXPECT_THROW(FusionLayer<double>(0, 0, 8, ConvGeometry{}, 1), DimMismatch);
}

TEST(FusionLayer, ShapeChecks) {
  FusionLayer<double> f(0, 4, 3, ConvGeometry{ConvMode::Token, 2, 1}, 1);
  std::vector<double> h(2 * 3), m(4);
  EXPECT_THROW(f.forward(h, m, FusionShape{1, 2, 4}), DimMismatch);
  EXPECT_THROW(f.forward(h, std::vector<double>(5), FusionShape{1, 2, 3}), DimMismatch);
  auto cache = f.forward(h, m, FusionShape{1, 2, 3});
  EXPECT_THROW(f.backward(cache, h, m, std::vector<double>(5)), DimMismatch);
}

// Central differences of sum(U * H~) against the analytic backward pass.
TEST(FusionLayer, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  const double eps = 1e-6;
  std::size_t checked_cases = 0;
  for (auto mode : {ConvMode::Token, ConvMode::SlotChannel})
    for (const auto& c : random_cases(rng, mode, 20)) {
      auto f = random_layer(rng, c);
      auto h = uniform(rng, c.shape.batch * c.shape.tokens * c.shape.width);
      auto m = uniform(rng, c.shape.batch * c.memory_width);
      auto u = uniform(rng, h.size());
      auto objective = [&] {
        auto out = f.forward(h, m, c.shape).output;
        double s = 0;
        for (std::size_t i = 0; i < out.size(); ++i) s += u[i] * out[i];
        return s;
      };
      auto grads = f.backward(f.forward(h, m, c.shape), h, m, u);
      auto check = [&](std::vector<double>& param, const std::vector<double>& analytic, const char* name) {
        ASSERT_EQ(param.size(), analytic.size()) << name;
        for (std::size_t i = 0; i < param.size(); ++i) {
          const double saved = param[i];
          param[i] = saved + eps;
          const double up = objective();
          param[i] = saved - eps;
          const double down = objective();
          param[i] = saved;
          const double numeric = (up - down) / (2 * eps);
          ASSERT_LT(relative_error(numeric, analytic[i]), 1e-4)
              << name << "[" << i << "] numeric " << numeric << " analytic " << analytic[i];
        }
      };
      check(h, grads.hidden, "hidden");
      check(m, grads.memory, "memory");
      check(f.w_key(), grads.w_key, "w_key");
      check(f.w_value(), grads.w_value, "w_value");
      check(f.kernel(), grads.kernel, "kernel");
      ++checked_cases;
    }
  EXPECT_EQ(checked_cases, 40u);
}

TEST(FusionLayer, ExtendProjectionsPreservesOutput) {
  std::mt19937_64 rng(6);
  Case c{FusionShape{2, 4, 6}, 8, ConvGeometry{ConvMode::Token, 3, 1}};
  auto f = random_layer(rng, c);
  auto h = uniform(rng, 2 * 4 * 6);
  auto m = uniform(rng, 2 * 8);
  auto before = f.forward(h, m, c.shape).output;

  // Two new coordinates inserted after old index 3 and at the end.
  std::vector<std::size_t> row_map{0, 1, 2, 3, 5, 6, 7, 8};
  auto g = f;
  g.extend_projections(10, row_map);
  std::vector<double> m2(2 * 10, 0.0);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t i = 0; i < 8; ++i) m2[b * 10 + row_map[i]] = m[b * 8 + i];
    m2[b * 10 + 4] = 123.0;  // arbitrary content in new rows
    m2[b * 10 + 9] = -7.0;
  }
  EXPECT_EQ(g.forward(h, m2, FusionShape{2, 4, 6}).output, before);

  auto a = f;
  a.extend_projections(12);
  std::vector<double> m3(2 * 12, 5.0);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 8; ++i) m3[b * 12 + i] = m[b * 8 + i];
  EXPECT_EQ(a.forward(h, m3, c.shape).output, before);

  EXPECT_THROW(f.extend_projections(8), DimMismatch);
  EXPECT_THROW(f.extend_projections(10, std::vector<std::size_t>{0, 1}), DimMismatch);
}

TEST(FusionLayer, CastRoundTrip) {
  FusionLayer<float> f(1, 4, 3, ConvGeometry{ConvMode::SlotChannel, 3, 1}, 9);
  auto d = f.cast<double>();
  auto back = d.cast<float>();
  EXPECT_EQ(back.w_key(), f.w_key());
  EXPECT_EQ(back.conv().mode, ConvMode::SlotChannel);
}

TEST(ConvMode, ParsesNames) {
  EXPECT_EQ(conv_mode_from_string("token"), ConvMode::Token);
  EXPECT_EQ(conv_mode_from_string("slot-channel"), ConvMode::SlotChannel);
  EXPECT_THROW(conv_mode_from_string("depthwise"), ConfigError);
}
