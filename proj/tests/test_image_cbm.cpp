#include <gtest/gtest.h>

#include <algorithm>

#include "mirage/image_cbm.hpp"
#include "support.hpp"

namespace mirage {
namespace {

using testing::random_vector;

// Bank with hand-set classifiers: class c scores sigmoid(w_c . crop).
ObjectClassBank hand_bank(Rng& rng, std::size_t n_classes, std::size_t crop_dim, double absent_rate) {
  ObjectClassBank bank;
  bank.crop_dim = crop_dim;
  for (std::size_t c = 0; c < n_classes; ++c) {
    bank.vocabulary.push_back("c" + std::to_string(c));
    if (rng.uniform() < absent_rate) {
      bank.classifiers.emplace_back(std::nullopt);
    } else {
      bank.classifiers.emplace_back(LinearModel(random_vector(rng, crop_dim), rng.normal()));
    }
  }
  return bank;
}

FeatureRecord with_detections(Rng& rng, const ObjectClassBank& bank, std::size_t n) {
  FeatureRecord r;
  r.id = "rec";
  for (std::size_t k = 0; k < n; ++k) {
    const auto c = rng.below(bank.size());
    r.objects.push_back({static_cast<int>(c), bank.vocabulary[c], random_vector(rng, bank.crop_dim), 1.0});
  }
  return r;
}

// Independent oracle: enumerate detections, keep a per-class running max.
Vector brute_force_concepts(const FeatureRecord& r, const ObjectClassBank& bank) {
  Vector out(bank.size(), 0.0);
  for (std::size_t c = 0; c < bank.size(); ++c) {
    if (!bank.classifiers[c]) continue;
    for (const auto& d : r.objects) {
      if (static_cast<std::size_t>(d.class_id) != c) continue;
      double z = bank.classifiers[c]->bias;
      for (std::size_t q = 0; q < d.crop_embedding.size(); ++q) z += bank.classifiers[c]->weights[q] * d.crop_embedding[q];
      out[c] = std::max(out[c], 1.0 / (1.0 + std::exp(-z)));
    }
  }
  return out;
}

TEST(Pooling, NoDetectionsGivesZeroVector) {
  Rng rng(30);
  const ObjectClassBank bank = hand_bank(rng, 300, 4, 0.3);
  FeatureRecord r;
  const ConceptVector v = assemble_concepts(r, bank);
  ASSERT_EQ(v.scores.size(), 300u);
  EXPECT_TRUE(std::all_of(v.scores.begin(), v.scores.end(), [](double s) { return s == 0.0; }));
}

TEST(Pooling, MaxRule) {
  // Class 0 classifier is the identity logit on a 1-dim crop.
  ObjectClassBank bank;
  bank.vocabulary = {"k"};
  bank.crop_dim = 1;
  bank.classifiers.emplace_back(LinearModel({1.0}, 0.0));
  FeatureRecord r;
  r.objects.push_back({0, "k", {logit(0.3)}, 1.0});
  r.objects.push_back({0, "k", {logit(0.7)}, 1.0});
  EXPECT_NEAR(assemble_concepts(r, bank).scores[0], 0.7, 1e-12);
}

TEST(Pooling, RandomizedInvariants) {
  Rng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const ObjectClassBank bank = hand_bank(rng, 1 + rng.below(12), 1 + rng.below(4), 0.3);
    FeatureRecord r = with_detections(rng, bank, rng.below(10));
    const Vector base = assemble_concepts(r, bank).scores;

    // Brute-force oracle; absent or undetected classes are exactly 0.
    const Vector oracle = brute_force_concepts(r, bank);
    for (std::size_t c = 0; c < base.size(); ++c) {
      EXPECT_NEAR(base[c], oracle[c], 1e-15);
      const bool detected = std::any_of(r.objects.begin(), r.objects.end(),
                                        [&](const ObjectDetection& d) { return static_cast<std::size_t>(d.class_id) == c; });
      if (!bank.classifiers[c] || !detected) EXPECT_EQ(base[c], 0.0);
    }

    // Permutation invariance, bit-exact.
    FeatureRecord shuffled = r;
    rng.shuffle(std::span<ObjectDetection>(shuffled.objects));
    EXPECT_EQ(assemble_concepts(shuffled, bank).scores, base);

    // A dominated detection (score <= current max of its class) changes nothing.
    for (const auto& d : r.objects) {
      const auto c = static_cast<std::size_t>(d.class_id);
      if (!bank.classifiers[c]) continue;
      FeatureRecord more = r;
      ObjectDetection copy = d;
      const double s_here = predict_score(*bank.classifiers[c], d.crop_embedding);
      // Move the crop against the weights so its score can only drop.
      for (std::size_t q = 0; q < copy.crop_embedding.size(); ++q) {
        copy.crop_embedding[q] -= rng.uniform() * bank.classifiers[c]->weights[q];
      }
      ASSERT_LE(predict_score(*bank.classifiers[c], copy.crop_embedding), s_here);
      more.objects.insert(more.objects.begin() + static_cast<std::ptrdiff_t>(rng.below(more.objects.size() + 1)), copy);
      EXPECT_EQ(assemble_concepts(more, bank).scores, base);
      break;
    }
  }
}

TEST(Pooling, RejectsBadDetections) {
  Rng rng(32);
  const ObjectClassBank bank = hand_bank(rng, 3, 2, 0.0);
  FeatureRecord r;
  r.objects.push_back({3, "c3", {0.0, 0.0}, 1.0});
  EXPECT_THROW(assemble_concepts(r, bank), DataError);
  r.objects[0] = {1, "c1", {0.0}, 1.0};
  EXPECT_THROW(assemble_concepts(r, bank), DataError);
}

TEST(ConceptVector, LayoutWidths) {
  EXPECT_NO_THROW(ConceptVector::make(Vector(300, 0.1), ConceptLayout::kObjects, 300));
  EXPECT_NO_THROW(ConceptVector::make(Vector(301, 0.1), ConceptLayout::kObjectsWithLinear, 300));
  EXPECT_THROW(ConceptVector::make(Vector(300, 0.1), ConceptLayout::kObjectsWithLinear, 300), DataError);
  EXPECT_THROW(ConceptVector::make(Vector(18, 1.5), ConceptLayout::kText, 18), DataError);
}

TEST(CropDataset, Buckets) {
  FeatureRecord empty;
  empty.id = "e";
  FeatureRecord fake;
  fake.id = "f";
  fake.label = Label(1);
  fake.objects.push_back({7, "seven", {0.1}, 0.9});
  fake.objects.push_back({7, "seven", {0.2}, 0.4});
  const CropDataset d = build_crop_dataset(std::vector{empty, fake}, 10);
  EXPECT_EQ(d[7].size(), 2u);
  EXPECT_EQ(d[7].labels, (std::vector<int>{1, 1}));
  std::size_t total = 0;
  for (const auto& b : d) total += b.size();
  EXPECT_EQ(total, 2u);
  EXPECT_EQ(build_crop_dataset(std::vector{fake}, 10, 0.5)[7].size(), 1u);
}

CropDataset random_crops(Rng& rng, std::size_t n_classes, std::size_t crop_dim) {
  CropDataset d(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    const auto n = rng.below(40);
    for (std::uint64_t i = 0; i < n; ++i) {
      const int y = static_cast<int>(rng.below(2));
      Vector crop = random_vector(rng, crop_dim);
      crop[0] += y ? 1.0 : -1.0;
      d[c].crops.push_back(std::move(crop));
      d[c].labels.push_back(y);
    }
  }
  // Force a single-label class and an empty class.
  d[0].labels.assign(d[0].labels.size(), 1);
  d[1] = {};
  return d;
}

TEST(Bank, AbsenceRules) {
  Rng rng(33);
  const CropDataset d = random_crops(rng, 12, 3);
  DetectorConfig cfg;
  const ObjectClassBank bank = train_bank(d, std::vector<std::string>(12, "x"), 3, cfg);
  EXPECT_FALSE(bank.classifiers[0].has_value());
  EXPECT_FALSE(bank.classifiers[1].has_value());
  for (std::size_t c = 0; c < d.size(); ++c) {
    const bool trainable = d[c].size() >= cfg.min_crops_per_class && d[c].has_both_labels();
    EXPECT_EQ(bank.classifiers[c].has_value(), trainable) << "class " << c;
    if (bank.classifiers[c]) EXPECT_EQ(bank.classifiers[c]->input_dim(), 3u);
  }
}

TEST(Bank, OrderAndThreadIndependent) {
  Rng rng(34);
  const CropDataset d = random_crops(rng, 16, 3);
  const CropDataset e = random_crops(rng, 16, 3);
  const std::vector<std::string> vocab(16, "x");
  DetectorConfig cfg;
  cfg.train.batch_size = 5;
  cfg.train.seed = 3;
  const ObjectClassBank base = train_bank(d, vocab, 3, cfg, &e);
  std::vector<std::size_t> order(16);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::reverse(order.begin(), order.end());
  const ObjectClassBank reversed = train_bank(d, vocab, 3, cfg, &e, order);
  EXPECT_EQ(to_json(reversed).dump(), to_json(base).dump());
  cfg.threads = 4;
  EXPECT_EQ(to_json(train_bank(d, vocab, 3, cfg, &e)).dump(), to_json(base).dump());
}

TEST(Bank, SaveLoadRoundTrip) {
  Rng rng(35);
  const CropDataset d = random_crops(rng, 8, 2);
  const ObjectClassBank bank = train_bank(d, std::vector<std::string>(8, "x"), 2, DetectorConfig{});
  testing::TempDir dir;
  save_bank(bank, dir.path());
  EXPECT_EQ(load_bank(dir.path()), bank);
}

TEST(MirageImg, StructureAndDeterminism) {
  const Bundle b = generate(testing::small_synth());
  const Partitions p = split(b.records, b.manifest);
  DetectorConfig cfg;
  const MirageImgModel m = train_mirage_img(p.train, p.eval, b.manifest.object_class_names, b.manifest.crop_dim, cfg);
  EXPECT_EQ(m.bottleneck.model.input_dim(), b.manifest.n_object_classes + 1);
  // The global linear score occupies the final slot.
  const Vector v = stacked_image_features(p.test[0], m.bank, m.global_linear);
  EXPECT_EQ(v.back(), m.global_linear.score(p.test[0].image_embedding));
  const MirageImgModel again =
      train_mirage_img(p.train, p.eval, b.manifest.object_class_names, b.manifest.crop_dim, cfg);
  EXPECT_EQ(again, m);
}

TEST(MirageImg, ZeroModelScoresHalf) {
  MirageImgModel m;
  m.global_linear.model = LinearModel(3);
  m.bank.vocabulary = {"a", "b"};
  m.bank.crop_dim = 2;
  m.bank.classifiers = {LinearModel(2), std::nullopt};
  m.bottleneck.model = LinearModel(3);
  FeatureRecord r;
  r.image_embedding = Vector(3, 0.0);
  EXPECT_EQ(score_img(m, r), 0.5);
  EXPECT_EQ(predict_img(m, r).label, Label::kFake);
}

TEST(MirageImg, GlobalSignalOnlyBeatsCbm) {
  SynthConfig sc = testing::small_synth(5);
  sc.text_signal = 0.0;
  sc.object_signal = 0.0;
  const Bundle b = generate(sc);
  const Partitions p = split(b.records, b.manifest);
  DetectorConfig cfg;
  const CalibratedClassifier global = train_image_linear(p.train, p.eval, cfg);
  const ObjectClassBank bank = train_bank_for(p.train, p.eval, b.manifest.object_class_names, b.manifest.crop_dim, cfg);
  const CalibratedClassifier cbm = train_obj_cbm(p.train, p.eval, bank, cfg);
  const MirageImgModel img = assemble_mirage_img(global, bank, p.train, p.eval, cfg);
  // Accuracy on the eval partition, as the paired comparison prescribes.
  auto acc = [&](auto score, double t) {
    std::size_t ok = 0;
    for (const auto& r : p.eval) ok += (score(r) >= t) == r.label.is_fake();
    return static_cast<double>(ok) / static_cast<double>(p.eval.size());
  };
  const double a_img = acc([&](const FeatureRecord& r) { return score_img(img, r); }, img.bottleneck.threshold);
  const double a_cbm = acc([&](const FeatureRecord& r) { return cbm.score(assemble_concepts(r, bank).scores); },
                           cbm.threshold);
  EXPECT_GE(a_img, a_cbm);
}

}  // namespace
}  // namespace mirage
