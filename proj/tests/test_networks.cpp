#include "psfcycle/discriminator.hpp"
#include "psfcycle/generator.hpp"
#include "support.hpp"

using namespace psfcycle;
using testsupport::relative_error;

namespace {

template <typename Scalar>
Feature<Scalar> random_feature(Index channels, Shape3 s, std::uint64_t seed) {
  Rng rng(seed);
  Feature<Scalar> f(channels, s);
  for (Index i = 0; i < f.data.size(); ++i) f.data.data()[i] = static_cast<Scalar>(rng.uniform(-1, 1));
  return f;
}

Index flat(const Shape3& s, Index z, Index y, Index x) { return (z * s.h + y) * s.w + x; }

/// Zero-padded cross-correlation with weight column order c * taps + t.
Feature<double> naive_conv(const Conv3d<double>& conv, Param<double>& w, Param<double>& b, const Feature<double>& x,
                           int k, int stride) {
  const Shape3 os = conv.output_shape(x.shape);
  Feature<double> y(conv.out_channels(), os);
  const Index p = k / 2, taps = Index(k) * k * k;
  for (Index co = 0; co < conv.out_channels(); ++co)
    for (Index z = 0; z < os.d; ++z)
      for (Index yy = 0; yy < os.h; ++yy)
        for (Index xx = 0; xx < os.w; ++xx) {
          double acc = b.value(co, 0);
          for (Index c = 0; c < x.channels(); ++c)
            for (Index a = 0; a < k; ++a)
              for (Index bb = 0; bb < k; ++bb)
                for (Index cc = 0; cc < k; ++cc) {
                  const Index iz = z * stride + a - p, iy = yy * stride + bb - p, ix = xx * stride + cc - p;
                  if (iz < 0 || iy < 0 || ix < 0 || iz >= x.shape.d || iy >= x.shape.h || ix >= x.shape.w) continue;
                  const Index t = (a * k + bb) * k + cc;
                  acc += w.value(co, c * taps + t) * x.data(c, flat(x.shape, iz, iy, ix));
                }
          y.data(co, flat(os, z, yy, xx)) = acc;
        }
  return y;
}

struct ConvCase {
  Index in, out;
  int k, stride;
  Shape3 shape;
};

// Pointwise, shifted (stride 1 with >= 4 inputs, one and several chunks),
// unfolded (stride 1 with few inputs, stride 2).
const std::vector<ConvCase> kConvCases{
    {3, 2, 1, 1, {4, 5, 6}},  {4, 3, 3, 1, {5, 4, 6}}, {4, 3, 3, 1, {8, 16, 16}}, {1, 3, 3, 1, {5, 6, 4}},
    {2, 3, 3, 2, {6, 4, 8}},  {3, 2, 3, 2, {5, 7, 6}}, {1, 2, 3, 1, {8, 32, 40}}, {5, 2, 3, 2, {4, 4, 4}},
};

/// Checks sampled analytic parameter gradients and all input gradients of
/// L = sum(w * f(x)) against central differences.
template <typename Forward, typename Backward>
void check_gradients(ParamRefs<double> params, Feature<double> x, const Feature<double>& w, Forward&& forward,
                     Backward&& backward, std::uint64_t seed, bool check_input = true, double tol = 1e-4) {
  auto loss = [&](const Feature<double>& in) { return forward(in).data.cwiseProduct(w.data).sum(); };
  zero_grads(params);
  Feature<double> gx;
  backward(x, w, check_input ? &gx : nullptr);
  const double h = 1e-6;
  Rng rng(seed);
  for (auto* p : params) {
    for (int s = 0; s < 12; ++s) {
      const auto i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(p->value.size())));
      const double keep = p->value.data()[i];
      p->value.data()[i] = keep + h;
      const double lp = loss(x);
      p->value.data()[i] = keep - h;
      const double lm = loss(x);
      p->value.data()[i] = keep;
      INFO(p->name << "[" << i << "]");
      CHECK(relative_error(p->grad.data()[i], (lp - lm) / (2 * h)) < tol);
    }
  }
  if (!check_input) return;
  for (int s = 0; s < 24; ++s) {
    const auto i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(x.data.size())));
    const double keep = x.data.data()[i];
    x.data.data()[i] = keep + h;
    const double lp = loss(x);
    x.data.data()[i] = keep - h;
    const double lm = loss(x);
    x.data.data()[i] = keep;
    INFO("input[" << i << "]");
    CHECK(relative_error(gx.data.data()[i], (lp - lm) / (2 * h)) < tol);
  }
}

}  // namespace

TEST_CASE("conv output side follows the padding rule") {
  CHECK(conv_output_side(64, 3, 1) == 64);
  CHECK(conv_output_side(64, 3, 2) == 32);
  CHECK(conv_output_side(5, 3, 2) == 3);
  CHECK(conv_output_side(7, 1, 1) == 7);
}

TEST_CASE("conv forward matches the direct loop on every lowering") {
  std::uint64_t seed = 1;
  for (const auto& c : kConvCases) {
    Rng rng(seed++);
    Conv3d<double> conv("c", c.in, c.out, c.k, c.stride, rng);
    conv.bias().value.setRandom();
    const auto x = random_feature<double>(c.in, c.shape, seed++);
    const auto y = conv.forward(x);
    const auto ref = naive_conv(conv, conv.weight(), conv.bias(), x, c.k, c.stride);
    INFO("in " << c.in << " k " << c.k << " stride " << c.stride << " shape " << to_string(c.shape));
    CHECK(y.shape == ref.shape);
    CHECK((y.data - ref.data).cwiseAbs().maxCoeff() < 1e-11);
  }
}

TEST_CASE("conv forward in float agrees with double") {
  Rng r1(5), r2(5);
  Conv3d<float> cf("c", 6, 4, 3, 1, r1);
  Conv3d<double> cd("c", 6, 4, 3, 1, r2);
  const auto xd = random_feature<double>(6, {6, 7, 8}, 6);
  Feature<float> xf(RowMatrix<float>(xd.data.cast<float>()), xd.shape);
  const RowMatrix<double> diff = cf.forward(xf).data.cast<double>() - cd.forward(xd).data;
  CHECK(diff.cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("conv gradients match central differences on every lowering") {
  std::uint64_t seed = 100;
  for (const auto& c : kConvCases) {
    if (c.shape.size() > 4000) continue;
    Rng rng(seed++);
    Conv3d<double> conv("c", c.in, c.out, c.k, c.stride, rng);
    const auto x = random_feature<double>(c.in, c.shape, seed++);
    const auto w = random_feature<double>(c.out, conv.output_shape(c.shape), seed++);
    INFO("in " << c.in << " k " << c.k << " stride " << c.stride);
    check_gradients(
        conv.parameters(), x, w, [&](const Feature<double>& in) { return conv.forward(in); },
        [&](const Feature<double>& in, const Feature<double>& g, Feature<double>* gx) { conv.backward(in, g, gx); },
        seed++);
  }
}

TEST_CASE("shifted and unfolded lowerings agree across chunk boundaries") {
  // Shifted lowering (4 inputs, three zeroed) against the unfolded one (1 input)
  // on an input that spans several chunks of each.
  Rng rng(7);
  Conv3d<double> shifted("s", 4, 3, 3, 1, rng);
  Conv3d<double> unfolded("u", 1, 3, 3, 1, rng);
  for (Index co = 0; co < 3; ++co)
    for (Index t = 0; t < 27; ++t) {
      unfolded.weight().value(co, t) = shifted.weight().value(co, t);
      for (Index c = 1; c < 4; ++c) shifted.weight().value(co, c * 27 + t) = 0.0;
    }
  const Shape3 s{8, 16, 16};
  const auto x1 = random_feature<double>(1, s, 8);
  Feature<double> x4(4, s);
  x4.data.row(0) = x1.data.row(0);
  const auto g = random_feature<double>(3, s, 9);
  CHECK((shifted.forward(x4).data - unfolded.forward(x1).data).cwiseAbs().maxCoeff() < 1e-11);
  zero_grads(shifted.parameters());
  zero_grads(unfolded.parameters());
  Feature<double> gx4, gx1;
  shifted.backward(x4, g, &gx4);
  unfolded.backward(x1, g, &gx1);
  CHECK((gx4.data.row(0) - gx1.data.row(0)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((shifted.weight().grad.leftCols(27) - unfolded.weight().grad).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((shifted.bias().grad - unfolded.bias().grad).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("transposed conv doubles each side and matches the scatter definition") {
  Rng rng(11);
  UpConv3d<double> up("u", 3, 2, rng);
  const auto x = random_feature<double>(3, {2, 3, 4}, 12);
  const auto y = up.forward(x);
  CHECK(y.shape == Shape3{4, 6, 8});
  auto params = up.parameters();
  const auto& w = params[0]->value;
  for (Index co = 0; co < 2; ++co)
    for (Index z = 0; z < 4; ++z)
      for (Index yy = 0; yy < 6; ++yy)
        for (Index xx = 0; xx < 8; ++xx) {
          const Index tap = ((z % 2) * 2 + yy % 2) * 2 + xx % 2;
          double acc = 0;
          for (Index c = 0; c < 3; ++c) acc += w(tap * 2 + co, c) * x.data(c, flat(x.shape, z / 2, yy / 2, xx / 2));
          CHECK(y.data(co, flat(y.shape, z, yy, xx)) == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("transposed conv gradients match central differences") {
  Rng rng(13);
  UpConv3d<double> up("u", 3, 2, rng);
  const auto x = random_feature<double>(3, {2, 3, 2}, 14);
  const auto w = random_feature<double>(2, {4, 6, 4}, 15);
  check_gradients(
      up.parameters(), x, w, [&](const Feature<double>& in) { return up.forward(in); },
      [&](const Feature<double>& in, const Feature<double>& g, Feature<double>* gx) { up.backward(in, g, gx); }, 16);
}

TEST_CASE("instance norm standardizes each channel") {
  const auto x = random_feature<double>(3, {4, 4, 4}, 17);
  Vector<double> inv;
  const auto y = instance_norm(x, &inv);
  for (Index c = 0; c < 3; ++c) {
    CHECK(std::abs(y.data.row(c).mean()) < 1e-12);
    CHECK(y.data.row(c).squaredNorm() / 64.0 == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("instance norm gradient matches central differences") {
  auto x = random_feature<double>(2, {3, 3, 3}, 18);
  const auto w = random_feature<double>(2, {3, 3, 3}, 19);
  Vector<double> inv;
  const auto xhat = instance_norm(x, &inv);
  const auto gx = instance_norm_backward(xhat, inv, w);
  auto loss = [&] { return instance_norm<double>(x, nullptr).data.cwiseProduct(w.data).sum(); };
  const double h = 1e-6;
  for (Index i = 0; i < x.data.size(); ++i) {
    const double keep = x.data.data()[i];
    x.data.data()[i] = keep + h;
    const double lp = loss();
    x.data.data()[i] = keep - h;
    const double lm = loss();
    x.data.data()[i] = keep;
    CHECK(relative_error(gx.data.data()[i], (lp - lm) / (2 * h)) < 1e-4);
  }
}

TEST_CASE("rectifier passes positives and scales negatives") {
  Feature<double> x(1, {1, 1, 4});
  x.data << -2.0, -0.5, 0.0, 3.0;
  const auto relu = rectify(x, 0.0);
  const auto leaky = rectify(x, 0.2);
  CHECK(relu.data(0, 0) == 0.0);
  CHECK(relu.data(0, 3) == 3.0);
  CHECK(leaky.data(0, 0) == doctest::Approx(-0.4));
  CHECK(leaky.data(0, 3) == 3.0);
  Feature<double> g(1, {1, 1, 4});
  g.data.setOnes();
  const auto gb = rectify_backward(x, g, 0.2);
  CHECK(gb.data(0, 0) == doctest::Approx(0.2));
  CHECK(gb.data(0, 3) == 1.0);
}

TEST_CASE("generator preserves shape and maps into the unit interval") {
  Generator<float> g({4, 2}, 1);
  const Volumef x = testsupport::random_volume<float>({8, 12, 16}, 20);
  const Volumef y = g.forward(x);
  CHECK(y.shape() == x.shape());
  CHECK(y.array().minCoeff() > 0.0f);
  CHECK(y.array().maxCoeff() < 1.0f);
  CHECK_THROWS_AS(g.forward(Volumef({8, 6, 8})), std::invalid_argument);
}

TEST_CASE("generator output bias sets the initial output level") {
  Generator<float> g({4, 1, -3.0}, 2);
  const Volumef y = g.forward(Volumef({4, 4, 4}));
  // Zero input: every block output is zero after instance norm, so only the bias remains.
  CHECK(y.array().mean() == doctest::Approx(1.0 / (1.0 + std::exp(3.0))).epsilon(1e-5));
}

TEST_CASE("default generator has 64 first-layer channels and a fixed parameter count") {
  Generator<float> g(GeneratorConfig{}, 3);
  CHECK(g.first_layer_channels() == 64);
  CHECK(count_parameters(g.parameters()) == 19960257);
  Generator<float> small({16, 3}, 3);
  CHECK(count_parameters(small.parameters()) == 1248369);
}

TEST_CASE("generator gradients match central differences") {
  Generator<double> g({2, 2}, 4);
  const Volumed x = testsupport::random_volume<double>({4, 4, 8}, 21);
  const Volumed w = testsupport::random_volume<double>({4, 4, 8}, 22, -1, 1);
  typename Generator<double>::Trace t;
  g.forward(x, &t);
  zero_grads(g.parameters());
  const Volumed gx = g.backward(t, w, true);
  auto loss = [&](const Volumed& in) { return (g.forward(in).array() * w.array()).sum(); };
  const double h = 1e-6;
  Rng rng(23);
  for (auto* p : g.parameters())
    for (int s = 0; s < 4; ++s) {
      const auto i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(p->value.size())));
      const double keep = p->value.data()[i];
      p->value.data()[i] = keep + h;
      const double lp = loss(x);
      p->value.data()[i] = keep - h;
      const double lm = loss(x);
      p->value.data()[i] = keep;
      INFO(p->name << "[" << i << "]");
      CHECK(testsupport::gradient_close(p->grad.data()[i], (lp - lm) / (2 * h), 1e-3));
    }
  for (Index i = 0; i < x.size(); i += 7) {
    Volumed xp = x, xm = x;
    xp.array()[i] += h;
    xm.array()[i] -= h;
    CHECK(relative_error(gx.array()[i], (loss(xp) - loss(xm)) / (2 * h)) < 1e-3);
  }
}

TEST_CASE("discriminator score map side is input side over 2^n_blocks") {
  Discriminator<float> d({4, 4}, 5);
  CHECK(d.forward(testsupport::random_volume<float>({16, 16, 16}, 24)).shape() == Shape3{1, 1, 1});
  CHECK(d.forward(testsupport::random_volume<float>({32, 32, 32}, 25)).shape() == Shape3{2, 2, 2});
  CHECK(d.forward(testsupport::random_volume<float>({64, 64, 64}, 26)).shape() == Shape3{4, 4, 4});
  CHECK_THROWS_AS(d.forward(Volumef({24, 16, 16})), std::invalid_argument);
}

TEST_CASE("discriminator gradients match central differences") {
  for (auto [leaky, first_norm] : {std::pair{false, true}, std::pair{true, true}, std::pair{false, false}}) {
    DiscriminatorConfig cfg{2, 2, leaky};
    cfg.norm_first_block = first_norm;
    Discriminator<double> d(cfg, 6);
    // Random biases keep pre-activations off the rectifier kink at exactly zero.
    Rng brng(26);
    for (auto* p : d.parameters())
      if (p->value.cols() == 1)
        for (Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = brng.uniform(-0.1, 0.1);
    const Volumed x = testsupport::random_volume<double>({8, 8, 8}, 27);
    const Volumed w = testsupport::random_volume<double>({2, 2, 2}, 28, -1, 1);
    typename Discriminator<double>::Trace t;
    d.forward(x, &t);
    zero_grads(d.parameters());
    const Volumed gx = d.backward(t, w, true);
    auto loss = [&](const Volumed& in) { return (d.forward(in).array() * w.array()).sum(); };
    const double h = 1e-6;
    Rng rng(29);
    for (auto* p : d.parameters())
      for (int s = 0; s < 6; ++s) {
        const auto i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(p->value.size())));
        const double keep = p->value.data()[i];
        p->value.data()[i] = keep + h;
        const double lp = loss(x);
        p->value.data()[i] = keep - h;
        const double lm = loss(x);
        p->value.data()[i] = keep;
        INFO(p->name << "[" << i << "] " << p->grad.data()[i] << " vs " << (lp - lm) / (2 * h));
        CHECK(testsupport::gradient_close(p->grad.data()[i], (lp - lm) / (2 * h), 1e-3));
      }
    for (Index i = 0; i < x.size(); i += 5) {
      Volumed xp = x, xm = x;
      xp.array()[i] += h;
      xm.array()[i] -= h;
      CHECK(relative_error(gx.array()[i], (loss(xp) - loss(xm)) / (2 * h)) < 1e-3);
    }
  }
}

TEST_CASE("discriminator normalizes every block but the last, and optionally not the first") {
  const Volumef x = testsupport::random_volume<float>({32, 32, 32}, 30);
  for (bool first : {true, false}) {
    DiscriminatorConfig cfg{4, 4};
    cfg.norm_first_block = first;
    const Discriminator<float> d(cfg, 31);
    typename Discriminator<float>::Trace t;
    d.forward(x, &t);
    for (std::size_t b = 0; b < t.blocks.size(); ++b) {
      // Instance-normalized channels have zero mean.
      const bool normalized = b + 1 < t.blocks.size() && (b > 0 || first);
      const float worst_mean = t.blocks[b].pre.data.rowwise().mean().cwiseAbs().maxCoeff();
      INFO("first " << first << " block " << b << " mean " << worst_mean);
      CHECK((worst_mean < 1e-5f) == normalized);
    }
  }
}

TEST_CASE("multi-scale crops have the configured sides and stay inside the patch") {
  const ScaleSet scales;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto boxes = sample_crops(64, scales, 16, seed);
    REQUIRE(boxes.size() == 3);
    CHECK(boxes[0].side == 64);
    CHECK(boxes[1].side == 32);
    CHECK(boxes[2].side == 16);
    for (const auto& b : boxes) {
      CHECK(b.z >= 0);
      CHECK(b.z + b.side <= 64);
      CHECK(b.y + b.side <= 64);
      CHECK(b.x + b.side <= 64);
    }
  }
  const Volumef p = testsupport::random_volume<float>({64, 64, 64}, 30);
  const auto crops = multiscale_crops(p, scales, 31);
  CHECK(max_abs_diff(crops[0], p) == 0.0f);
  CHECK(crops[2].shape() == Shape3{16, 16, 16});
  CHECK_THROWS_AS(sample_crops(32, scales, 16, 0), std::invalid_argument);
  CHECK_THROWS_AS((ScaleSet{{0.5, 1.0}}.validate()), std::invalid_argument);
}
