#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mbttbf/nn/checkpoint.hpp"
#include "mbttbf/nn/model.hpp"
#include "mbttbf/train/gradcheck.hpp"
#include "test_util.hpp"

using namespace mbttbf;
using namespace mbttbf::nn;

namespace {

template <typename T>
Tensor<T> random_tensor(synth::Rng& rng, int c, int h, int w, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(c, h, w);
  for (T& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

void randomize(Parameter<double>& p, synth::Rng& rng, double scale = 0.5) {
  for (double& v : p.value) v = scale * rng.normal();
}

NetworkConfig tiny(Topology t, bool scfb = true, std::uint64_t seed = 0) {
  NetworkConfig c;
  c.backbone = Backbone::tiny;
  c.topology = t;
  c.use_scfb = scfb;
  c.rng_seed = seed;
  return c;
}

// Zero every weight and bias whose name starts with `prefix`.
template <typename T>
void zero_params(ParameterStore<T>& store, const std::string& prefix) {
  for (std::size_t i = 0; i < store.count(); ++i)
    if (store[i].name.rfind(prefix, 0) == 0) std::fill(store[i].value.begin(), store[i].value.end(), T(0));
}

}  // namespace

// ---------------------------------------------------------------- tensors and ops

TEST(Tensor, ImagePaddedToMultiple) {
  synth::Rng rng(1);
  const auto img = fixtures::random_image(rng, 40, 33);
  const auto t = image_to_tensor<float>(img);
  EXPECT_EQ(t.channels, 3);
  EXPECT_EQ(t.height, 64);
  EXPECT_EQ(t.width, 64);
  EXPECT_EQ(t.at(2, 39, 32), img.at(39, 32, 2));
  EXPECT_EQ(t.at(0, 40, 0), 0.0f);
  EXPECT_EQ(t.at(0, 0, 33), 0.0f);
}

TEST(Ops, ConvMatchesDirectLoops) {
  synth::Rng rng(2);
  for (int k : {1, 3, 5}) {
    ParameterStore<double> ps;
    auto& w = ps.add("w", {4, 3, k, k});
    auto& b = ps.add("b", {4});
    randomize(w, rng);
    randomize(b, rng);
    const auto x = random_tensor<double>(rng, 3, 6, 7);
    Tape<double> tape;
    const auto& y = tape.value(tape.conv2d(tape.input(x), w, b));
    const int p = k / 2;
    for (int o = 0; o < 4; ++o)
      for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 7; ++c) {
          double acc = b.value[o];
          for (int i = 0; i < 3; ++i)
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx) {
                const int rr = r + dy - p, cc = c + dx - p;
                if (rr < 0 || rr >= 6 || cc < 0 || cc >= 7) continue;
                acc += w.value[((o * 3 + i) * k + dy) * k + dx] * x.at(i, rr, cc);
              }
          EXPECT_NEAR(y.at(o, r, c), acc, 1e-12);
        }
  }
}

TEST(Ops, MaxPoolPicksBlockMaximum) {
  Tensor<double> x(1, 4, 4);
  for (int i = 0; i < 16; ++i) x.data[i] = (i * 7) % 16;
  Tape<double> tape;
  const auto& y = tape.value(tape.maxpool2(tape.input(x)));
  ASSERT_EQ(y.height, 2);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) {
      double m = -1;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) m = std::max(m, x.at(0, 2 * r + dy, 2 * c + dx));
      EXPECT_EQ(y.at(0, r, c), m);
    }
}

TEST(Ops, UpsampleHalfPixelBilinear) {
  Tensor<double> x(1, 1, 2);
  x.data = {0.0, 4.0};
  Tape<double> tape;
  const auto& y = tape.value(tape.upsample(tape.input(x, 8), 2));
  // Output centres map to source positions -0.25, 0.25, 0.75, 1.25 (clamped).
  ASSERT_EQ(y.width, 4);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 1), 1.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 2), 3.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 3), 4.0);
  EXPECT_EQ(tape.stride(tape.upsample(tape.input(x, 8), 2)), 4);
}

TEST(Ops, UpsampleOfConstantIsConstant) {
  Tensor<double> x(2, 3, 5, 1.75);
  Tape<double> tape;
  for (double v : tape.value(tape.upsample(tape.input(x, 32), 8)).data) EXPECT_DOUBLE_EQ(v, 1.75);
}

TEST(Ops, ResampleStrides) {
  Tape<double> tape;
  Var a = tape.input(Tensor<double>(2, 8, 8), 4);
  EXPECT_EQ(tape.stride(tape.resample(a, 16)), 16);
  EXPECT_EQ(tape.value(tape.resample(a, 16)).height, 2);
  EXPECT_EQ(tape.stride(tape.resample(a, 1)), 1);
  EXPECT_EQ(tape.value(tape.resample(a, 1)).height, 32);
  EXPECT_EQ(tape.resample(a, 4).id, a.id);
  EXPECT_THROW(tape.resample(a, 6), AlignmentError);
}

TEST(Ops, ShapeErrors) {
  Tape<double> tape;
  Var a = tape.input(Tensor<double>(2, 4, 4), 4);
  Var b = tape.input(Tensor<double>(2, 4, 4), 8);
  Var c = tape.input(Tensor<double>(3, 4, 4), 4);
  EXPECT_THROW(tape.add(a, b), AlignmentError);
  EXPECT_THROW(tape.add(a, c), AlignmentError);
  EXPECT_THROW(tape.concat({a, b}), AlignmentError);
  EXPECT_THROW(tape.mse(a, Tensor<double>(1, 4, 4)), AlignmentError);
  ParameterStore<double> ps;
  auto& w = ps.add("w", {1, 5, 1, 1});
  auto& bias = ps.add("b", {1});
  EXPECT_THROW(tape.conv2d(a, w, bias), AlignmentError);
}

// Gradient of every op against central differences through a small graph
// whose parameters sit in front of the op under test.
TEST(Ops, GradientsMatchFiniteDifferences) {
  synth::Rng rng(3);
  ParameterStore<double> ps;
  auto& w1 = ps.add("w1", {3, 2, 3, 3});
  auto& b1 = ps.add("b1", {3});
  auto& w2 = ps.add("w2", {3, 2, 1, 1});
  auto& b2 = ps.add("b2", {3});
  auto& wg = ps.add("wg", {2, 3, 1, 1});
  auto& bg = ps.add("bg", {2});
  for (std::size_t i = 0; i < ps.count(); ++i) randomize(ps[i], rng);
  const auto x = random_tensor<double>(rng, 2, 8, 8);
  const auto t_fine = random_tensor<double>(rng, 6, 8, 8);
  const auto t_coarse = random_tensor<double>(rng, 3, 4, 4);
  const auto t_up = random_tensor<double>(rng, 3, 16, 16);

  auto build = [&](Tape<double>& tape) {
    Var in = tape.input(x, 4);
    Var a = tape.relu(tape.conv2d(in, w1, b1));
    Var b = tape.conv2d(in, w2, b2);
    Var s = tape.sigmoid(tape.conv2d(a, wg, bg));
    Var gated = tape.gated_sum(s, {a, b});
    Var cat = tape.concat({gated, tape.add(a, b)});
    Var loss = tape.mse(cat, t_fine);
    loss = tape.axpy(loss, tape.mse(tape.maxpool2(b), t_coarse), 0.7);
    loss = tape.axpy(loss, tape.mse(tape.avgpool(a, 2), t_coarse), 1.3);
    loss = tape.axpy(loss, tape.mse(tape.upsample(b, 2), t_up), 0.5);
    return loss;
  };
  const auto report = train::check_gradients(ps, build, 64, 1e-6);
  for (const auto& g : report.groups) EXPECT_LT(g.rel_error, 1e-7) << g.name;
}

TEST(Ops, FrozenParameterGetsNoGradient) {
  synth::Rng rng(4);
  ParameterStore<double> ps;
  auto& w = ps.add("w", {2, 2, 3, 3});
  auto& b = ps.add("b", {2});
  randomize(w, rng);
  w.frozen = true;
  const auto x = random_tensor<double>(rng, 2, 5, 5);
  const auto t = random_tensor<double>(rng, 2, 5, 5);
  const auto report = train::check_gradients(ps, [&](Tape<double>& tape) {
    return tape.mse(tape.conv2d(tape.input(x), w, b), t);
  });
  for (double g : w.grad) EXPECT_EQ(g, 0.0);
  EXPECT_TRUE(report.groups[0].frozen);
  EXPECT_EQ(report.groups[0].analytic_norm, 0.0);
  EXPECT_GT(report.groups[1].analytic_norm, 0.0);
  EXPECT_LT(report.max_rel_error, 1e-7);
}

TEST(Parameters, StoreBasics) {
  ParameterStore<float> ps;
  ps.add("a", {2, 3});
  ps.add("b", {4});
  EXPECT_EQ(ps.total_size(), 10u);
  EXPECT_THROW(ps.add("a", {1}), ConfigError);
  EXPECT_THROW(ps.get("c"), ConfigError);
  ParameterStore<float> copy = ps;
  copy.get("a").value[0] = 5.0f;
  EXPECT_EQ(ps.get("a").value[0], 0.0f);
  EXPECT_EQ(copy.names(), (std::vector<std::string>{"a", "b"}));
}

// ---------------------------------------------------------------- model structure

TEST(Model, Vgg16TapContract) {
  NetworkConfig cfg;
  cfg.topology = Topology::FLAT_ADD;
  Model<float> m(cfg);
  synth::Rng rng(5);
  const auto s = m.infer(fixtures::random_image(rng, 64, 64));
  const int strides[4] = {4, 8, 16, 32}, channels[4] = {256, 512, 512, 128};
  Tape<float> tape;
  const auto g = m.forward(tape, image_to_tensor<float>(fixtures::random_image(rng, 64, 64)));
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(tape.stride(g.raw_taps[i]), strides[i]);
    EXPECT_EQ(tape.value(g.raw_taps[i]).channels, channels[i]);
    EXPECT_EQ(tape.value(g.raw_taps[i]).height, 64 / strides[i]);
    // Dimensionality reduction to 32 channels, stride unchanged.
    EXPECT_EQ(tape.value(g.taps[i]).channels, 32);
    EXPECT_EQ(tape.stride(g.taps[i]), strides[i]);
  }
  EXPECT_EQ(m.params().get("backbone.conv6.weight").shape, (std::vector<int>{128, 512, 1, 1}));
}

TEST(Model, TinyTapContract) {
  Model<float> m(tiny(Topology::FLAT_CONCAT));
  Tape<float> tape;
  const auto g = m.forward(tape, Tensor<float>(3, 64, 64));
  const int strides[4] = {4, 8, 16, 32}, channels[4] = {32, 64, 64, 64};
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(tape.stride(g.raw_taps[i]), strides[i]);
    EXPECT_EQ(tape.value(g.raw_taps[i]).channels, channels[i]);
  }
}

TEST(Model, ZeroInputGivesZeroEverywhere) {
  for (auto t : {Topology::NONE, Topology::FLAT_ADD, Topology::BTTB, Topology::MBTTBF}) {
    Model<double> m(tiny(t));
    Tape<double> tape;
    const auto g = m.forward(tape, Tensor<double>(3, 64, 64));
    const auto s = m.materialize(tape, g);
    for (const auto& tap : s.taps)
      for (double v : tap.values.data) EXPECT_EQ(v, 0.0);
    for (const auto& [k, v] : s.bt)
      for (double x : v.values.data) EXPECT_EQ(x, 0.0) << k;
    for (const auto& [k, v] : s.tb)
      for (double x : v.values.data) EXPECT_EQ(x, 0.0) << k;
    for (const auto& [k, v] : s.sides)
      for (double x : v.values.data) EXPECT_EQ(x, 0.0) << k;
    for (double x : s.prediction.values.data) EXPECT_EQ(x, 0.0);
  }
}

TEST(Model, MbttbfGraphShape) {
  Model<float> m(tiny(Topology::MBTTBF));
  synth::Rng rng(6);
  Tape<float> tape;
  const auto g = m.forward(tape, image_to_tensor<float>(fixtures::random_image(rng, 64, 64)));
  const auto& pred = tape.value(g.prediction);
  EXPECT_EQ(pred.channels, 1);
  EXPECT_EQ(pred.height, 16);
  EXPECT_EQ(pred.width, 16);
  EXPECT_EQ(tape.stride(g.prediction), kPredictionStride);
  for (float v : pred.data) EXPECT_GE(v, 0.0f);
  // 10 fusion blocks, two side outputs each.
  EXPECT_EQ(g.sides.size(), 20u);
  EXPECT_EQ(tape.stride(g.bt.at("Fbt1_56")), 32);
  EXPECT_EQ(tape.stride(g.bt.at("Fbt2_456")), 32);
  EXPECT_EQ(tape.stride(g.bt.at("Fbt2_345")), 16);
  EXPECT_EQ(tape.stride(g.tb.at("Ftb1_43")), 4);
  EXPECT_EQ(tape.stride(g.tb.at("Ftb2_543")), 4);
  EXPECT_EQ(tape.stride(g.tb.at("Ftb2_654")), 8);
  EXPECT_EQ(tape.value(g.attention).channels, 4);
  EXPECT_EQ(tape.value(g.fused).channels, 32);
  for (const auto& side : g.sides) {
    EXPECT_EQ(tape.value(side.map).channels, 1);
    for (float v : tape.value(side.map).data) EXPECT_GE(v, 0.0f);
  }
}

TEST(Model, SideOutputTargets) {
  Model<float> m(tiny(Topology::MBTTBF));
  Tape<float> tape;
  const auto g = m.forward(tape, Tensor<float>(3, 32, 32));
  std::map<std::string, BandMask> bands;
  for (const auto& s : g.sides) bands[s.name] = s.bands;
  EXPECT_EQ(bands.at("bt1.scfb34.side_i"), band_bit(3));
  EXPECT_EQ(bands.at("bt1.scfb56.side_j"), band_bit(6));
  EXPECT_EQ(bands.at("tb1.scfb65.side_i"), band_bit(6));
  EXPECT_EQ(bands.at("tb1.scfb43.side_j"), band_bit(3));
  EXPECT_EQ(bands.at("bt2.scfb345.side_i"), band_bit(3) | band_bit(4));
  EXPECT_EQ(bands.at("bt2.scfb345.side_j"), band_bit(4) | band_bit(5));
  EXPECT_EQ(bands.at("tb2.scfb543.side_j"), band_bit(4) | band_bit(3));
}

TEST(Model, SideOutputCountsPerTopology) {
  const std::pair<Topology, std::size_t> expect[] = {{Topology::NONE, 0},  {Topology::FLAT_ADD, 0},
                                                    {Topology::FLAT_CONCAT, 0}, {Topology::BT, 6},
                                                    {Topology::TB, 6},    {Topology::BTTB, 12},
                                                    {Topology::MBTTBF, 20}};
  for (auto [t, n] : expect) {
    Model<float> m(tiny(t));
    Tape<float> tape;
    EXPECT_EQ(m.forward(tape, Tensor<float>(3, 32, 32)).sides.size(), n) << to_string(t);
  }
  Model<float> no_scfb(tiny(Topology::MBTTBF, false));
  Tape<float> tape;
  EXPECT_TRUE(no_scfb.forward(tape, Tensor<float>(3, 32, 32)).sides.empty());
  EXPECT_TRUE(no_scfb.params().contains("bt1.scfb34.fuse.weight"));
  EXPECT_FALSE(no_scfb.params().contains("bt1.scfb34.c1_i.weight"));
}

TEST(Model, BttbUsesTwoWayAttention) {
  Model<float> m(tiny(Topology::BTTB));
  EXPECT_EQ(m.params().get("attention.conv1.weight").shape, (std::vector<int>{16, 64, 3, 3}));
  EXPECT_EQ(m.params().get("attention.conv2.weight").shape, (std::vector<int>{2, 16, 1, 1}));
  Model<float> full(tiny(Topology::MBTTBF));
  EXPECT_EQ(full.params().get("attention.conv1.weight").shape, (std::vector<int>{16, 128, 3, 3}));
}

TEST(Model, NoneEqualsStandaloneBaseline) {
  Model<float> m(tiny(Topology::NONE, true, 7));
  synth::Rng rng(7);
  const auto x = image_to_tensor<float>(fixtures::random_image(rng, 64, 96));
  auto& ps = m.params();
  // Independent assembly of backbone + conv6 + predictor from the same weights.
  Tape<float> ref;
  Var v = ref.input(x, 1);
  const auto layout = backbone_layout(Backbone::tiny);
  for (std::size_t b = 0; b < layout.blocks.size(); ++b) {
    if (b > 0) v = ref.maxpool2(v);
    for (std::size_t i = 0; i < layout.blocks[b].size(); ++i) {
      const std::string n = "backbone.conv" + std::to_string(b + 1) + "_" + std::to_string(i + 1);
      v = ref.relu(ref.conv2d(v, ps.get(n + ".weight"), ps.get(n + ".bias")));
    }
  }
  v = ref.relu(ref.conv2d(ref.maxpool2(v), ps.get("backbone.conv6.weight"), ps.get("backbone.conv6.bias")));
  v = ref.relu(ref.conv2d(v, ps.get("predict.weight"), ps.get("predict.bias")));

  Tape<float> tape;
  const auto g = m.forward(tape, x);
  EXPECT_EQ(tape.value(g.prediction), ref.value(v));
  EXPECT_EQ(tape.stride(g.prediction), 32);
}

TEST(Model, ZeroResidualsPassFeaturesThrough) {
  Model<double> m(tiny(Topology::MBTTBF));
  for (const char* blk : {"bt1.scfb34", "bt1.scfb45", "bt1.scfb56", "tb1.scfb65", "tb1.scfb54", "tb1.scfb43",
                          "bt2.scfb345", "bt2.scfb456", "tb2.scfb654", "tb2.scfb543"}) {
    zero_params(m.params(), std::string(blk) + ".c1_i");
    zero_params(m.params(), std::string(blk) + ".c1_j");
  }
  synth::Rng rng(8);
  Tape<double> tape;
  const auto g = m.forward(tape, image_to_tensor<double>(fixtures::random_image(rng, 64, 64)));
  const auto& F = g.taps;
  // Level-1 bottom-top: inputs resampled to the coarser stride.
  auto check = [&](const std::string& blk, Var fi, Var fj, int target) {
    Tape<double> t2;
    const auto& b = g.blocks.at(blk);
    auto resampled = [&](Var v) {
      Var in = t2.input(tape.value(v), tape.stride(v));
      return t2.value(t2.resample(in, target));
    };
    EXPECT_EQ(tape.value(b.hat_i), resampled(fi)) << blk;
    EXPECT_EQ(tape.value(b.hat_j), resampled(fj)) << blk;
  };
  check("bt1.scfb34", F[0], F[1], 8);
  check("bt1.scfb45", g.bt.at("Fbt1_34"), F[2], 16);
  check("bt1.scfb56", g.bt.at("Fbt1_45"), F[3], 32);
  check("tb1.scfb65", F[3], F[2], 16);
  check("tb1.scfb54", g.tb.at("Ftb1_65"), F[1], 8);
  check("tb1.scfb43", g.tb.at("Ftb1_54"), F[0], 4);
}

TEST(Model, ZeroAttentionHeadAveragesInputs) {
  for (auto topo : {Topology::BTTB, Topology::MBTTBF}) {
    Model<double> m(tiny(topo));
    zero_params(m.params(), "attention.");
    synth::Rng rng(9);
    Tape<double> tape;
    const auto g = m.forward(tape, image_to_tensor<double>(fixtures::random_image(rng, 64, 64)));
    for (double a : tape.value(g.attention).data) EXPECT_EQ(a, 0.5);
    const auto& fused = tape.value(g.fused);
    for (std::size_t i = 0; i < fused.size(); ++i) {
      double sum = 0.0;
      for (Var in : g.attention_inputs) sum += tape.value(in).data[i];
      EXPECT_NEAR(fused.data[i], 0.5 * sum, 1e-12);
    }
  }
}

TEST(Model, AttentionDecomposition) {
  Model<double> m(tiny(Topology::MBTTBF, true, 3));
  synth::Rng rng(10);
  auto& w = m.params().get("attention.conv2.weight");
  for (double& v : w.value) v = 3.0 * rng.normal();
  Tape<double> tape;
  const auto g = m.forward(tape, image_to_tensor<double>(fixtures::random_image(rng, 64, 64)));
  const auto& A = tape.value(g.attention);
  for (double a : A.data) {
    EXPECT_GT(a, 0.0);
    EXPECT_LT(a, 1.0);
  }
  const auto& fused = tape.value(g.fused);
  for (int c = 0; c < fused.channels; ++c)
    for (int y = 0; y < fused.height; ++y)
      for (int x = 0; x < fused.width; ++x) {
        double expect = 0.0;
        for (int k = 0; k < 4; ++k) expect += A.at(k, y, x) * tape.value(g.attention_inputs[k]).at(c, y, x);
        EXPECT_NEAR(fused.at(c, y, x), expect, 1e-12);
      }
}

TEST(Model, IdenticalInputsGateByAttentionSum) {
  // With four copies of one input the fused map is (sum_k A^k) * M.
  Tape<double> tape;
  synth::Rng rng(11);
  Var m = tape.input(random_tensor<double>(rng, 3, 4, 4), 4);
  Var a = tape.input(random_tensor<double>(rng, 4, 4, 4, 0.0, 1.0), 4);
  const auto& f = tape.value(tape.gated_sum(a, {m, m, m, m}));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        double s = 0.0;
        for (int k = 0; k < 4; ++k) s += tape.value(a).at(k, y, x);
        EXPECT_NEAR(f.at(c, y, x), s * tape.value(m).at(c, y, x), 1e-12);
      }
}

TEST(Model, SameSeedIsBitIdentical) {
  synth::Rng rng(12);
  const auto img = fixtures::random_image(rng, 64, 64);
  Model<float> a(tiny(Topology::MBTTBF, true, 5)), b(tiny(Topology::MBTTBF, true, 5));
  for (std::size_t i = 0; i < a.params().count(); ++i) EXPECT_EQ(a.params()[i].value, b.params()[i].value);
  const auto sa = a.infer(img), sb = b.infer(img);
  EXPECT_EQ(sa.prediction.values, sb.prediction.values);
  ASSERT_EQ(sa.sides.size(), sb.sides.size());
  for (std::size_t i = 0; i < sa.sides.size(); ++i) EXPECT_EQ(sa.sides[i].second.values, sb.sides[i].second.values);
  Model<float> c(tiny(Topology::MBTTBF, true, 6));
  EXPECT_NE(a.params().get("predict.weight").value, c.params().get("predict.weight").value);
}

TEST(Model, OutputsFiniteForUnitRangeInputs) {
  synth::Rng rng(13);
  for (auto t : {Topology::NONE, Topology::FLAT_ADD, Topology::FLAT_CONCAT, Topology::BT, Topology::TB,
                 Topology::BTTB, Topology::MBTTBF}) {
    Model<float> m(tiny(t));
    const auto s = m.infer(fixtures::random_image(rng, 48, 80));
    EXPECT_TRUE(s.prediction.values.all_finite()) << to_string(t);
    for (const auto& [name, side] : s.sides) EXPECT_TRUE(side.values.all_finite()) << name;
  }
}

TEST(Model, RejectsUnalignedInput) {
  Model<float> m(tiny(Topology::NONE));
  Tape<float> tape;
  EXPECT_THROW(m.forward(tape, Tensor<float>(3, 40, 32)), AlignmentError);
  EXPECT_THROW(m.forward(tape, Tensor<float>(1, 32, 32)), AlignmentError);
}

TEST(Model, ConfigJson) {
  NetworkConfig c = tiny(Topology::BT, false, 9);
  EXPECT_EQ(network_config_from_json(to_json(c)), c);
  EXPECT_THROW(network_config_from_json(nlohmann::json{{"topologyy", "BT"}}), ConfigError);
  EXPECT_THROW(network_config_from_json(nlohmann::json{{"topology", "RING"}}), ConfigError);
  EXPECT_THROW(network_config_from_json(nlohmann::json{{"dr_channels", 0}}), ConfigError);
  for (auto t : {Topology::NONE, Topology::FLAT_ADD, Topology::FLAT_CONCAT, Topology::BT, Topology::TB,
                 Topology::BTTB, Topology::MBTTBF})
    EXPECT_EQ(topology_from_string(to_string(t)), t);
}

// ---------------------------------------------------------------- checkpoints

TEST(Checkpoint, RoundTrip) {
  Model<float> m(tiny(Topology::MBTTBF, true, 4));
  const auto dir = fixtures::scratch_dir("nn_ckpt");
  save_checkpoint(dir / "m.ckpt", m);
  const auto back = load_checkpoint<float>(dir / "m.ckpt");
  EXPECT_EQ(back.config(), m.config());
  ASSERT_EQ(back.params().count(), m.params().count());
  for (std::size_t i = 0; i < m.params().count(); ++i) {
    EXPECT_EQ(back.params()[i].name, m.params()[i].name);
    EXPECT_EQ(back.params()[i].value, m.params()[i].value);
  }
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(m));
}

TEST(Checkpoint, KeyMismatchListsDiff) {
  Model<float> m(tiny(Topology::BT));
  std::string bytes = serialize_checkpoint(m);
  // Rename one key in the header without changing its length.
  const auto pos = bytes.find("bt1.scfb45.c2_i.weight");
  ASSERT_NE(pos, std::string::npos);
  bytes.replace(pos, 10, "bt9.scfb45");
  try {
    deserialize_checkpoint<float>(bytes, "edited");
    FAIL();
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("-bt1.scfb45.c2_i.weight"), std::string::npos) << msg;
    EXPECT_NE(msg.find("+bt9.scfb45.c2_i.weight"), std::string::npos) << msg;
  }
}

TEST(Checkpoint, CorruptInputs) {
  Model<float> m(tiny(Topology::NONE));
  const std::string bytes = serialize_checkpoint(m);
  EXPECT_THROW(deserialize_checkpoint<float>("NOTACKPT" + bytes.substr(8), "x"), FormatError);
  EXPECT_THROW(deserialize_checkpoint<float>(bytes.substr(0, bytes.size() - 4), "x"), FormatError);
  EXPECT_THROW(deserialize_checkpoint<float>(bytes.substr(0, 10), "x"), FormatError);
  EXPECT_THROW(load_checkpoint<float>("/nonexistent/ckpt"), FormatError);
}

TEST(Checkpoint, LoadsIntoDoublePrecision) {
  Model<float> m(tiny(Topology::TB, true, 2));
  const auto d = deserialize_checkpoint<double>(serialize_checkpoint(m), "mem");
  for (std::size_t i = 0; i < m.params().count(); ++i)
    for (std::size_t k = 0; k < m.params()[i].size(); ++k)
      EXPECT_EQ(static_cast<float>(d.params()[i].value[k]), m.params()[i].value[k]);
}
