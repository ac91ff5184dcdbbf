#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "physioattn/backbones.hpp"

using namespace physioattn;

namespace {

// Analytic layer-by-layer counter, coded from the architecture descriptions
// and independent of the planner.
struct Oracle {
  std::size_t head_width;
  std::size_t demo = 4;

  static std::size_t conv(std::size_t cin, std::size_t cout, std::size_t k, bool bn) {
    return cin * cout * k + cout + (bn ? 2 * cout : 0);
  }
  static std::size_t block(AttentionKind a, std::size_t c) {
    switch (a) {
      case AttentionKind::se:
      case AttentionKind::cbam: {
        const std::size_t r = std::min<std::size_t>(16, c), h = c / r;
        return 2 * c * h + h + c + (a == AttentionKind::cbam ? 2 * 7 + 1 : 0);
      }
      case AttentionKind::nl:
        return 3 * (c * (c / 2) + c / 2) + (c / 2) * c + c;
      default:
        return 0;
    }
  }
  static bool attended(std::size_t module, int fraction) {
    return fraction == 100 || (fraction == 50 && module % 2 == 0);
  }

  std::size_t pooled_head(std::size_t c) const { return c * head_width + head_width + (head_width + demo) + 1; }

  std::size_t vgg(std::size_t level, AttentionKind a, int f, bool with_head = true) const {
    const std::vector<std::vector<std::size_t>> w = {{64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
    const std::size_t pool[5] = {3, 2, 3, 3, 3};
    std::size_t n = 0, c = 2, len = 2000;
    for (std::size_t m = 0; m < level; ++m) {
      for (auto o : w[m]) {
        n += conv(c, o, 3, false);
        c = o;
        len -= 2;
      }
      len /= pool[m];
      if (attended(m + 1, f)) n += block(a, c);
    }
    if (!with_head) return n;
    const std::size_t W = head_width;
    return n + c * len * W + W + (W + demo) * W + W + W + 1;
  }

  std::size_t resnet(std::size_t level, AttentionKind a, int f) const {
    const std::size_t w[8] = {64, 64, 128, 128, 256, 256, 512, 512};
    std::size_t n = conv(2, 64, 7, true), c = 64;
    for (std::size_t m = 0; m < level; ++m) {
      n += conv(c, w[m], 3, true) + conv(w[m], w[m], 3, true);
      if (w[m] != c) n += conv(c, w[m], 1, true);
      c = w[m];
      if (attended(m + 1, f)) n += block(a, c);
    }
    return n + pooled_head(c);
  }

  std::size_t inception(std::size_t level, AttentionKind a, int f) const {
    // b1, b3 reduce, b3, b5 reduce, b5, pool projection
    const std::size_t mods[9][6] = {{64, 96, 128, 16, 32, 32},     {128, 128, 192, 32, 96, 64},   {192, 96, 208, 16, 48, 64},
                                    {160, 112, 224, 24, 64, 64},   {128, 128, 256, 24, 64, 64},   {112, 144, 288, 32, 64, 64},
                                    {256, 160, 320, 32, 128, 128}, {256, 160, 320, 32, 128, 128}, {384, 192, 384, 48, 128, 128}};
    std::size_t n = conv(2, 64, 7, false) + conv(64, 192, 3, false), c = 192;
    for (std::size_t m = 0; m < level; ++m) {
      const auto* x = mods[m];
      n += conv(c, x[0], 1, false) + conv(c, x[1], 1, false) + conv(x[1], x[2], 3, false) + conv(c, x[3], 1, false) +
           conv(x[3], x[4], 5, false) + conv(c, x[5], 1, false);
      c = x[0] + x[2] + x[4] + x[5];
      if (attended(m + 1, f)) n += block(a, c);
    }
    return n + pooled_head(c);
  }

  std::size_t msa(const MsaConfig& m) const {
    const std::size_t d = m.d_model, layer = 4 * (d * d + d) + 2 * (2 * d) + d * m.d_ff + m.d_ff + m.d_ff * d + d;
    return 2 * d * 20 + d + m.n_layers * layer + d * d + d + (d + demo) + 1;
  }

  std::size_t operator()(const ModelConfig& cfg) const {
    switch (cfg.family) {
      case BackboneFamily::vgg: return vgg(cfg.level, cfg.attention, cfg.fraction);
      case BackboneFamily::resnet: return resnet(cfg.level, cfg.attention, cfg.fraction);
      case BackboneFamily::inception: return inception(cfg.level, cfg.attention, cfg.fraction);
      case BackboneFamily::msa_only: return msa(*cfg.msa);
    }
    return 0;
  }
};

ModelConfig cnn_config(BackboneFamily f, std::size_t level, AttentionKind a, int frac, std::size_t head_width = 0) {
  ModelConfig c;
  c.family = f;
  c.level = level;
  c.attention = a;
  c.fraction = frac;
  c.head_width = head_width;
  return c;
}

ModelConfig msa_config(MsaConfig m = {}) {
  ModelConfig c;
  c.family = BackboneFamily::msa_only;
  c.attention = AttentionKind::msa;
  c.fraction = 100;
  c.msa = m;
  return c;
}

// The thirteen families: three bare backbones, three backbones x three
// attention kinds, and the stand-alone self-attention model.
std::vector<ModelConfig> thirteen_families(int fraction, std::size_t head_width) {
  std::vector<ModelConfig> out;
  for (auto f : {BackboneFamily::vgg, BackboneFamily::resnet, BackboneFamily::inception}) {
    out.push_back(cnn_config(f, default_level(f), AttentionKind::none, 0, head_width));
    for (auto a : {AttentionKind::se, AttentionKind::nl, AttentionKind::cbam})
      out.push_back(cnn_config(f, default_level(f), a, fraction, head_width));
  }
  out.push_back(msa_config());
  return out;
}

std::pair<Tensor<float>, Tensor<float>> random_inputs(std::size_t batch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.f, 1.f);
  std::vector<float> w(batch * 2 * 2000), d(batch * 4);
  for (auto& v : w) v = n(rng);
  for (auto& v : d) v = n(rng);
  return {Tensor<float>({batch, 2, 2000}, w), Tensor<float>({batch, 4}, d)};
}

}  // namespace

TEST(Placement, FractionRules) {
  EXPECT_EQ(attention_placement(6, 50), (std::vector<std::size_t>{2, 4, 6}));
  EXPECT_TRUE(attention_placement(4, 0).empty());
  EXPECT_EQ(attention_placement(4, 100), (std::vector<std::size_t>{1, 2, 3, 4}));
  EXPECT_EQ(attention_placement(5, 50), (std::vector<std::size_t>{2, 4}));
  EXPECT_TRUE(attention_placement(1, 50).empty());
  EXPECT_THROW(attention_placement(4, 25), std::invalid_argument);
  EXPECT_THROW(attention_placement(0, 100), std::invalid_argument);
  for (std::size_t n = 1; n <= 9; ++n)
    for (int f : {0, 50, 100}) EXPECT_EQ(attention_placement(n, f).size(), n * static_cast<std::size_t>(f) / 100);
}

TEST(Config, ValidationRejectsInconsistentCombinations) {
  EXPECT_THROW(cnn_config(BackboneFamily::resnet, 9, AttentionKind::none, 0).validate(), std::invalid_argument);
  EXPECT_THROW(cnn_config(BackboneFamily::vgg, 6, AttentionKind::none, 0).validate(), std::invalid_argument);
  EXPECT_THROW(cnn_config(BackboneFamily::vgg, 0, AttentionKind::none, 0).validate(), std::invalid_argument);
  EXPECT_THROW(cnn_config(BackboneFamily::resnet, 2, AttentionKind::se, 0).validate(), std::invalid_argument);
  EXPECT_THROW(cnn_config(BackboneFamily::resnet, 2, AttentionKind::none, 50).validate(), std::invalid_argument);
  EXPECT_THROW(cnn_config(BackboneFamily::resnet, 2, AttentionKind::se, 30).validate(), std::invalid_argument);
  EXPECT_THROW(cnn_config(BackboneFamily::resnet, 2, AttentionKind::msa, 100).validate(), std::invalid_argument);
  auto m = msa_config();
  m.msa.reset();
  EXPECT_THROW(m.validate(), std::invalid_argument);
  auto bad = msa_config({16, 6, 32, 1});
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  auto wrong_kind = msa_config();
  wrong_kind.attention = AttentionKind::se;
  EXPECT_THROW(wrong_kind.validate(), std::invalid_argument);
  EXPECT_NO_THROW(msa_config().validate());
}

TEST(Counting, TrivialLayers) {
  Initializer init(1);
  EXPECT_EQ(count_params(Dense<float>("d", 4, 3, init, InitKind::xavier_uniform)), 15u);
  EXPECT_EQ(count_params(Conv1d<float>("c", 2, 4, 3, 1, Padding::same, init, InitKind::xavier_uniform)), 28u);
  EXPECT_EQ(count_params(BatchNorm<float>("bn", 8)), 16u);
}

TEST(Counting, PlannerMatchesAnalyticOracleForEveryValidConfig) {
  const Oracle oracle{64};
  for (auto f : {BackboneFamily::vgg, BackboneFamily::resnet, BackboneFamily::inception})
    for (std::size_t level = 1; level <= max_level(f); ++level)
      for (auto a : {AttentionKind::none, AttentionKind::se, AttentionKind::nl, AttentionKind::cbam})
        for (int frac : {0, 50, 100}) {
          if ((a == AttentionKind::none) != (frac == 0)) continue;
          auto cfg = cnn_config(f, level, a, frac, 64);
          EXPECT_EQ(planned_param_count(cfg), oracle(cfg))
              << to_string(f) << " level " << level << " " << to_string(a) << frac;
        }
  for (const auto& m : msa_grid()) {
    if (!m.valid()) continue;
    auto cfg = msa_config(m);
    cfg.head_width = m.d_model;
    EXPECT_EQ(planned_param_count(cfg), oracle(cfg));
  }
}

TEST(Counting, BuiltModelsMatchAnalyticOracle) {
  // Full-size heads at the default levels, plus every level of the pooled families.
  for (const auto& cfg : thirteen_families(50, 0)) {
    const Oracle oracle{cfg.resolved_head_width()};
    auto model = build_model<float>(cfg, 3);
    EXPECT_EQ(count_params(*model), oracle(cfg)) << to_string(cfg.family) << " " << to_string(cfg.attention);
  }
  for (auto f : {BackboneFamily::resnet, BackboneFamily::inception})
    for (std::size_t level = 1; level <= max_level(f); ++level) {
      auto cfg = cnn_config(f, level, AttentionKind::cbam, 100, 32);
      auto model = build_model<float>(cfg, 1);
      EXPECT_EQ(count_params(*model), Oracle{32}(cfg));
    }
}

TEST(Counting, BatchnormRunningStatsAreNotParameters) {
  auto model = build_model<float>(cnn_config(BackboneFamily::resnet, 1, AttentionKind::none, 0, 8), 1);
  std::size_t buffer_values = 0;
  for (auto& [name, v] : model->buffers()) buffer_values += v->size();
  // stem bn + two bn in the block, two buffers each
  EXPECT_EQ(buffer_values, 2u * (64 + 64 + 64));
  EXPECT_EQ(count_params(*model), Oracle{8}(model->config()));
}

TEST(Counting, MoreAttentionMeansMoreParameters) {
  for (auto f : {BackboneFamily::vgg, BackboneFamily::resnet, BackboneFamily::inception})
    for (auto a : {AttentionKind::se, AttentionKind::nl, AttentionKind::cbam}) {
      const std::size_t level = default_level(f);
      const auto n0 = planned_param_count(cnn_config(f, level, AttentionKind::none, 0));
      const auto n50 = planned_param_count(cnn_config(f, level, a, 50));
      const auto n100 = planned_param_count(cnn_config(f, level, a, 100));
      EXPECT_LT(n0, n50);
      EXPECT_LT(n50, n100);
    }
}

TEST(Counting, BackboneCountsReproduceLevelTable) {
  // Backbone convolutions (plus the flatten-fed VGG dense stack) per level.
  const auto resnet = reference_level_table(BackboneFamily::resnet);
  const auto inception = reference_level_table(BackboneFamily::inception);
  for (const auto& [level, count] : resnet.counts)
    EXPECT_EQ(planning_param_count(BackboneFamily::resnet, level), count) << "resnet level " << level;
  for (const auto& [level, count] : inception.counts)
    EXPECT_EQ(planning_param_count(BackboneFamily::inception, level), count) << "inception level " << level;
  EXPECT_EQ(planning_param_count(BackboneFamily::inception, 9), inception.default_count);

  const auto vgg = reference_level_table(BackboneFamily::vgg);
  for (std::size_t level = 2; level <= 4; ++level)
    EXPECT_EQ(planning_param_count(BackboneFamily::vgg, level), vgg.counts[level - 1].second) << "vgg level " << level;
  // level 1 differs from the listed value by one digit, 192128065 vs 191128065
  EXPECT_EQ(planning_param_count(BackboneFamily::vgg, 1), 191128065u);
  // the listed full-depth count leaves out the 4096 + 1 output layer
  EXPECT_EQ(planning_param_count(BackboneFamily::vgg, 5), 40567296u + 4097u);
}

TEST(Counting, VggFlattenHeadDominatesShallowLevels) {
  const Oracle oracle{4096};
  for (std::size_t level = 1; level <= 5; ++level) {
    EXPECT_EQ(planning_param_count(BackboneFamily::vgg, level) + 4 * 4096,
              oracle.vgg(level, AttentionKind::none, 0));
  }
}

TEST(LevelSelection, ReferenceTableChoosesReportedLevels) {
  EXPECT_EQ(select_level(reference_level_table(BackboneFamily::vgg)), 5u);
  EXPECT_EQ(select_level(reference_level_table(BackboneFamily::resnet)), 6u);
  EXPECT_EQ(select_level(reference_level_table(BackboneFamily::inception)), 4u);
  EXPECT_EQ(level_trend(reference_level_table(BackboneFamily::vgg)), LevelTrend::decreasing);
  EXPECT_EQ(level_trend(reference_level_table(BackboneFamily::resnet)), LevelTrend::increasing);
  EXPECT_EQ(level_trend(reference_level_table(BackboneFamily::inception)), LevelTrend::increasing);
}

TEST(LevelSelection, ThresholdsAreOneFifthOfDefault) {
  EXPECT_NEAR(reference_level_table(BackboneFamily::resnet).threshold(), 769830.4, 1e-6);
  EXPECT_NEAR(reference_level_table(BackboneFamily::inception).threshold(), 683452.8, 1e-6);
  EXPECT_NEAR(reference_level_table(BackboneFamily::vgg).threshold(), 8113459.2, 1e-6);
}

TEST(LevelSelection, ComputedTableAgrees) {
  for (auto f : {BackboneFamily::vgg, BackboneFamily::resnet, BackboneFamily::inception})
    EXPECT_EQ(select_level(model_level_table(f)), default_level(f)) << to_string(f);
}

TEST(LevelSelection, EdgeCases) {
  LevelTable flat{BackboneFamily::resnet, {{1, 10}, {2, 10}, {3, 10}}, 50};
  EXPECT_EQ(level_trend(flat), LevelTrend::mixed);
  EXPECT_EQ(select_level(flat), 1u);  // tie goes to the lower level; 10 * 5 == 50 reaches the threshold
  LevelTable too_small{BackboneFamily::resnet, {{1, 1}, {2, 2}}, 100};
  EXPECT_THROW(select_level(too_small), std::runtime_error);
  LevelTable empty{BackboneFamily::resnet, {}, 100};
  EXPECT_THROW(select_level(empty), std::invalid_argument);
  LevelTable one{BackboneFamily::resnet, {{1, 5}}, 5};
  EXPECT_THROW(level_trend(one), std::invalid_argument);
}

TEST(Build, ThirteenFamiliesSatisfyShapeContract) {
  for (int fraction : {50, 100}) {
    auto configs = thirteen_families(fraction, 16);
    ASSERT_EQ(configs.size(), 13u);
    auto [w, d] = random_inputs(2, 5);
    for (const auto& cfg : configs) {
      auto model = build_model<float>(cfg, 7);
      NoGradGuard g;
      auto y = model->forward(w, d, Mode::eval);
      EXPECT_EQ(y.shape(), (Shape{2, 1})) << to_string(cfg.family) << " " << to_string(cfg.attention);
      for (float v : y.data()) EXPECT_TRUE(std::isfinite(v));
    }
  }
}

TEST(Build, ShapeContractAcrossBatchSizes) {
  auto model = build_model<float>(cnn_config(BackboneFamily::resnet, 2, AttentionKind::se, 50, 16), 1);
  for (std::size_t b : {1u, 2u, 128u}) {
    auto [w, d] = random_inputs(b, b);
    NoGradGuard g;
    EXPECT_EQ(model->forward(w, d, Mode::eval).shape(), (Shape{b, 1}));
  }
  auto [w, d] = random_inputs(2, 1);
  EXPECT_THROW(model->forward(Tensor<float>::zeros({2, 3, 2000}), d, Mode::eval), ShapeError);
  EXPECT_THROW(model->forward(Tensor<float>::zeros({2, 2, 1000}), d, Mode::eval), ShapeError);
  EXPECT_THROW(model->forward(w, Tensor<float>::zeros({2, 3}), Mode::eval), ShapeError);
  EXPECT_THROW(model->forward(w, Tensor<float>::zeros({1, 4}), Mode::eval), ShapeError);
}

TEST(Build, AttentionBlocksSitAfterSelectedModules) {
  auto model = build_model<float>(cnn_config(BackboneFamily::resnet, 6, AttentionKind::se, 50, 16), 1);
  std::vector<std::size_t> after;
  const auto& st = model->stages();
  for (std::size_t i = 0; i < st.size(); ++i) {
    if (!st[i].is_attention) continue;
    EXPECT_EQ(st[i].kind, "se");
    ASSERT_GT(i, 0u);
    EXPECT_FALSE(st[i - 1].is_attention);
    EXPECT_EQ(st[i - 1].module_index, st[i].module_index);
    after.push_back(st[i].module_index);
  }
  EXPECT_EQ(after, (std::vector<std::size_t>{2, 4, 6}));
  EXPECT_EQ(model->attention_block_count(), 3u);

  auto cbam = build_model<float>(cnn_config(BackboneFamily::inception, 4, AttentionKind::cbam, 100, 16), 1);
  auto bare = build_model<float>(cnn_config(BackboneFamily::inception, 4, AttentionKind::none, 0, 16), 1);
  EXPECT_EQ(cbam->attention_block_count(), 4u);
  EXPECT_LT(count_params(*bare), count_params(*cbam));
}

TEST(Build, BlockChannelsFollowHostModule) {
  auto model = build_model<float>(cnn_config(BackboneFamily::vgg, 3, AttentionKind::se, 100, 16), 1);
  std::vector<std::size_t> widths;
  for (const auto& p : model->parameters())
    if (p.name.ends_with("/se/fc2/bias")) widths.push_back(p.size());
  EXPECT_EQ(widths, (std::vector<std::size_t>{64, 128, 256}));
}

TEST(Build, SameSeedSameWeights) {
  auto cfg = cnn_config(BackboneFamily::resnet, 2, AttentionKind::nl, 100, 16);
  auto a = build_model<double>(cfg, 42), b = build_model<double>(cfg, 42), c = build_model<double>(cfg, 43);
  ASSERT_EQ(a->parameters().size(), b->parameters().size());
  bool differs = false;
  for (std::size_t i = 0; i < a->parameters().size(); ++i) {
    EXPECT_EQ(a->parameters()[i].value.data(), b->parameters()[i].value.data());
    differs = differs || a->parameters()[i].value.data() != c->parameters()[i].value.data();
  }
  EXPECT_TRUE(differs);
}

TEST(Build, ParameterNamesAreUnique) {
  for (const auto& cfg : thirteen_families(100, 8)) {
    auto model = build_model<float>(cfg, 1);
    std::set<std::string> names;
    for (const auto& p : model->parameters()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
  }
}

TEST(Families, ParseAndDefaults) {
  EXPECT_EQ(parse_family("inception"), BackboneFamily::inception);
  EXPECT_EQ(parse_family("msa_only"), BackboneFamily::msa_only);
  EXPECT_THROW(parse_family("alexnet"), std::invalid_argument);
  EXPECT_EQ(max_level(BackboneFamily::vgg), 5u);
  EXPECT_EQ(max_level(BackboneFamily::resnet), 8u);
  EXPECT_EQ(max_level(BackboneFamily::inception), 8u);
}
