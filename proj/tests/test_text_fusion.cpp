#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <tuple>

#include "mirage/fusion.hpp"
#include "mirage/text_pipeline.hpp"
#include "support.hpp"

namespace mirage {
namespace {

double eval_accuracy(std::span<const FeatureRecord> records, auto score, double threshold) {
  std::size_t ok = 0;
  for (const auto& r : records) ok += (score(r) >= threshold) == r.label.is_fake();
  return static_cast<double>(ok) / static_cast<double>(records.size());
}

struct Fixture {
  Bundle bundle;
  Partitions parts;
};

const Fixture& synthetic(double image_signal, double text_signal, double object_signal, std::uint64_t seed = 11) {
  static std::map<std::tuple<double, double, double, std::uint64_t>, Fixture> cache;
  auto key = std::make_tuple(image_signal, text_signal, object_signal, seed);
  auto it = cache.find(key);
  if (it == cache.end()) {
    SynthConfig c = testing::small_synth(seed);
    c.image_signal = image_signal;
    c.text_signal = text_signal;
    c.object_signal = object_signal;
    Fixture f{generate(c), {}};
    f.parts = split(f.bundle.records, f.bundle.manifest);
    it = cache.emplace(key, std::move(f)).first;
  }
  return it->second;
}

TEST(Tbm, DefaultWidthAndDeterminism) {
  const Fixture& f = synthetic(0.8, 0.8, 0.8);
  const CalibratedClassifier a = train_tbm(f.parts.train, f.parts.eval, DetectorConfig{});
  EXPECT_EQ(a.model.input_dim(), 18u);
  EXPECT_EQ(to_json(train_tbm(f.parts.train, f.parts.eval, DetectorConfig{})).dump(), to_json(a).dump());
}

TEST(Tbm, ConstantConceptsGiveMajorityRate) {
  const Fixture& f = synthetic(0.8, 0.8, 0.8);
  auto flatten = [](std::vector<FeatureRecord> rs, std::size_t drop) {
    // Zero concepts and an uneven class mix so the majority rate is not 0.5.
    for (auto& r : rs) std::fill(r.text_concepts.begin(), r.text_concepts.end(), 0.0);
    std::erase_if(rs, [&, k = std::size_t{0}](const FeatureRecord& r) mutable {
      return r.label.is_fake() && k++ < drop;
    });
    return rs;
  };
  const auto train = flatten(f.parts.train, 40), eval = flatten(f.parts.eval, 40);
  const CalibratedClassifier tbm = train_tbm(train, eval, DetectorConfig{});
  const double first = tbm.score(eval[0].text_concepts);
  for (const auto& r : eval) EXPECT_EQ(tbm.score(r.text_concepts), first);
  std::size_t real = 0;
  for (const auto& r : eval) real += !r.label.is_fake();
  const double majority = static_cast<double>(std::max(real, eval.size() - real)) / static_cast<double>(eval.size());
  EXPECT_EQ(eval_accuracy(eval, [&](const FeatureRecord& r) { return tbm.score(r.text_concepts); }, tbm.threshold),
            majority);
}

TEST(MirageTxt, StackedWidthAndLinearSlot) {
  const Fixture& f = synthetic(0.8, 0.8, 0.8);
  const MirageTxtModel m = train_mirage_txt(f.parts.train, f.parts.eval, DetectorConfig{});
  EXPECT_EQ(m.tbm_bottleneck.model.input_dim(), 19u);
  const Vector v = stacked_text_features(f.parts.test[3], m.text_linear);
  EXPECT_EQ(v[18], m.text_linear.score(f.parts.test[3].text_embedding));
  EXPECT_EQ(train_mirage_txt(f.parts.train, f.parts.eval, DetectorConfig{}), m);
  FeatureRecord short_concepts = f.parts.test[0];
  short_concepts.text_concepts.pop_back();
  EXPECT_THROW(score_txt(m, short_concepts), DataError);
}

TEST(MirageTxt, ZeroModelScoresHalf) {
  MirageTxtModel m{{LinearModel(2), 0.5}, {LinearModel(5), 0.5}};
  FeatureRecord r;
  r.text_embedding = {0.3, -1.0};
  r.text_concepts = {0.1, 0.2, 0.3, 0.4};
  EXPECT_EQ(score_txt(m, r), 0.5);
}

TEST(MirageTxt, TextEmbeddingSignalOnlyBeatsTbm) {
  // Concepts carry no signal here; only the caption embedding does.
  const Fixture& f = synthetic(0.0, 0.8, 0.0, 12);
  std::vector<FeatureRecord> train = f.parts.train, eval = f.parts.eval;
  Rng rng(40);
  for (auto* part : {&train, &eval}) {
    for (auto& r : *part) {
      for (double& c : r.text_concepts) c = rng.uniform();
    }
  }
  const CalibratedClassifier tbm = train_tbm(train, eval, DetectorConfig{});
  const MirageTxtModel txt = train_mirage_txt(train, eval, DetectorConfig{});
  const double a_txt = eval_accuracy(eval, [&](const FeatureRecord& r) { return score_txt(txt, r); },
                                     txt.tbm_bottleneck.threshold);
  const double a_tbm = eval_accuracy(eval, [&](const FeatureRecord& r) { return tbm.score(r.text_concepts); },
                                     tbm.threshold);
  EXPECT_GE(a_txt, a_tbm);
}

TEST(LateFusion, Identities) {
  EXPECT_NEAR(fuse_late(sigmoid(2.0), sigmoid(-2.0)), 0.5, 1e-15);
  EXPECT_EQ(fuse_late(0.5, 0.5), 0.5);
  Rng rng(41);
  for (int trial = 0; trial < 10000; ++trial) {
    const double a = rng.uniform(1e-6, 1 - 1e-6), b = rng.uniform(1e-6, 1 - 1e-6);
    const double oracle = 1.0 / (1.0 + std::exp(-(std::log(a / (1 - a)) + std::log(b / (1 - b))) / 2.0));
    const double f = fuse_late(a, b);
    EXPECT_NEAR(f, oracle, 1e-12);
    EXPECT_EQ(f, fuse_late(b, a));
    EXPECT_NEAR(fuse_late(a, a), a, 1e-12);
    EXPECT_GE(f, std::min(a, b) - 1e-15);
    EXPECT_LE(f, std::max(a, b) + 1e-15);
  }
}

MirageModel zero_mirage(FusionMode mode) {
  MirageModel m;
  m.img.global_linear.model = LinearModel(2);
  m.img.bank.vocabulary = {"a"};
  m.img.bank.crop_dim = 1;
  m.img.bank.classifiers = {std::nullopt};
  m.img.bottleneck.model = LinearModel(2);
  m.txt = {{LinearModel(2), 0.5}, {LinearModel(2), 0.5}};
  m.mode = mode;
  if (mode == FusionMode::kEarlyOutputs) m.fusion_head = CalibratedClassifier{LinearModel(2), 0.5};
  if (mode == FusionMode::kEarlyFeatures) m.fusion_head = CalibratedClassifier{LinearModel(4), 0.5};
  return m;
}

TEST(MirageModel, InvariantsAndNeutralScore) {
  FeatureRecord r;
  r.image_embedding = {0.0, 0.0};
  r.text_embedding = {0.0, 0.0};
  r.text_concepts = {0.2};
  for (FusionMode mode : {FusionMode::kLate, FusionMode::kEarlyOutputs, FusionMode::kEarlyFeatures}) {
    const MirageModel m = zero_mirage(mode);
    EXPECT_NO_THROW(m.validate());
    EXPECT_EQ(score_mirage(m, r), 0.5);
  }
  MirageModel late_with_head = zero_mirage(FusionMode::kLate);
  late_with_head.fusion_head = CalibratedClassifier{LinearModel(2), 0.5};
  EXPECT_THROW(late_with_head.validate(), DataError);
  MirageModel early = zero_mirage(FusionMode::kEarlyOutputs);
  early.fusion_head->model = LinearModel(3);
  EXPECT_THROW(early.validate(), DataError);
  MirageModel features = zero_mirage(FusionMode::kEarlyFeatures);
  features.fusion_head->model = LinearModel(2);
  EXPECT_THROW(features.validate(), DataError);
}

TEST(FusionMode, Parsing) {
  EXPECT_EQ(parse_fusion_mode("late"), FusionMode::kLate);
  EXPECT_EQ(parse_fusion_mode("early"), FusionMode::kEarlyOutputs);
  EXPECT_EQ(parse_fusion_mode("early-features"), FusionMode::kEarlyFeatures);
  EXPECT_THROW(parse_fusion_mode("mid"), DataError);
  for (FusionMode m : {FusionMode::kLate, FusionMode::kEarlyOutputs, FusionMode::kEarlyFeatures}) {
    EXPECT_EQ(parse_fusion_mode(to_string(m)), m);
  }
}

TEST(EarlyFusion, BothVariantsOnSeparableData) {
  // Separable by either modality: high image and text signal.
  SynthConfig c = testing::small_synth(7);
  c.image_signal = 1.0;
  c.text_signal = 1.0;
  const Bundle b = generate(c);
  const Partitions p = split(b.records, b.manifest);
  DetectorConfig cfg;
  const MirageImgModel img =
      train_mirage_img(p.train, p.eval, b.manifest.object_class_names, b.manifest.crop_dim, cfg);
  const MirageTxtModel txt = train_mirage_txt(p.train, p.eval, cfg);
  const MirageModel outputs = train_early(p.train, p.eval, img, txt, FusionMode::kEarlyOutputs, cfg);
  const MirageModel features = train_early(p.train, p.eval, img, txt, FusionMode::kEarlyFeatures, cfg);
  EXPECT_EQ(outputs.fusion_head->model.input_dim(), 2u);
  EXPECT_EQ(features.fusion_head->model.input_dim(), b.manifest.image_dim + b.manifest.text_dim);
  for (const MirageModel* m : {&outputs, &features}) {
    EXPECT_GE(eval_accuracy(p.eval, [&](const FeatureRecord& r) { return score_mirage(*m, r); }, decision_threshold(*m)),
              0.95);
  }
  EXPECT_THROW(train_early(p.train, p.eval, img, txt, FusionMode::kLate, cfg), DataError);
}

}  // namespace
}  // namespace mirage
