#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "morph/attack.hpp"
#include "morph/geometry.hpp"

using namespace morph;
using namespace morph::attack;

namespace {

LabeledDataset tiny_dataset(int per_class, uint64_t seed, const std::string& split = "train") {
  DataSpec spec;
  spec.families = {"sphere", "cube", "torus"};
  spec.samples_per_class = per_class;
  spec.n_points = 24;
  spec.noise_sigma = 0.01;
  return generate_synthetic_dataset(spec, seed, split);
}

morphnet::MorphNetF tiny_gen(int c, int n_points, uint64_t seed = 5) {
  morphnet::MorphNetF gen;
  Rng rng(seed);
  gen.init(rng, c, n_points, 1, "mean", false, seed);
  return gen;
}

// Classifier whose logits are constant regardless of input: all weights zero,
// head bias set so argmax is always `winner`.
models::ClassifierF constant_classifier(int c, int winner) {
  models::ClassifierF m;
  Rng rng(1);
  m.init(rng, c);
  for (auto& s : m.params()) std::fill(s.p, s.p + s.n, 0.0f);
  for (auto& s : m.params())
    if (s.name == "h2.b") s.p[winner] = 1.0f;
  return m;
}

// Classifier that predicts class 0 iff the cloud's max x coordinate exceeds
// the threshold. Built from identity pass-through units so the pooled feature
// is exactly max_x + 10.
models::ClassifierF threshold_classifier(int c, float threshold) {
  models::ClassifierF m;
  Rng rng(1);
  m.init(rng, c);
  for (auto& s : m.params()) std::fill(s.p, s.p + s.n, 0.0f);
  auto set = [&](const std::string& name, size_t idx, float v) {
    for (auto& s : m.params())
      if (s.name == name) s.p[idx] = v;
  };
  // l1: unit 0 = x + 10 (positive so relu and maxpool stay monotone in x)
  set("l1.W", 0, 1.0f);
  set("l1.b", 0, 10.0f);
  // l2, l3, h1: pass unit 0 through (row-major W, unit 0 -> unit 0)
  set("l2.W", 0, 1.0f);
  set("l3.W", 0, 1.0f);
  set("h1.W", 0, 1.0f);
  // h2: logit 0 = feature - (threshold + 10), other logits 0
  set("h2.W", 0, 1.0f);
  set("h2.b", 0, -(threshold + 10.0f));
  return m;
}

std::vector<int> class_histogram(const LabeledDataset& ds) {
  std::vector<int> h(ds.num_classes, 0);
  for (const auto& r : ds.records) ++h[r.label];
  return h;
}

}  // namespace

TEST_CASE("poisoning with alpha zero returns the dataset unchanged") {
  auto data = tiny_dataset(4, 11);
  auto gen = tiny_gen(data.num_classes, data.points_per_cloud);
  PoisonConfig cfg;
  cfg.alpha = 0;
  auto out = poison_training_set(gen, data, cfg);
  REQUIRE(out.records.size() == data.records.size());
  for (size_t i = 0; i < out.records.size(); ++i) {
    CHECK(out.records[i].cloud.v == data.records[i].cloud.v);
    CHECK(out.records[i].label == data.records[i].label);
    CHECK_FALSE(out.records[i].poisoned);
    CHECK(out.records[i].condition_class == -1);
  }
}

TEST_CASE("poisoning with alpha 100 replaces every record, labels unchanged") {
  auto data = tiny_dataset(4, 12);
  auto gen = tiny_gen(data.num_classes, data.points_per_cloud);
  PoisonConfig cfg;
  cfg.alpha = 100;
  auto out = poison_training_set(gen, data, cfg);
  REQUIRE(out.records.size() == data.records.size());
  for (size_t i = 0; i < out.records.size(); ++i) {
    CHECK(out.records[i].poisoned);
    CHECK(out.records[i].label == data.records[i].label);
    CHECK(out.records[i].condition_class == out.records[i].label);
    CHECK(out.records[i].cloud.v != data.records[i].cloud.v);
  }
}

TEST_CASE("poison count audit at alpha 30") {
  auto data = tiny_dataset(10, 13);
  auto gen = tiny_gen(data.num_classes, data.points_per_cloud);
  PoisonConfig cfg;
  cfg.alpha = 30;
  cfg.seed = 9;
  auto out = poison_training_set(gen, data, cfg);

  // independent count oracle: lround(alpha/100 * n_t) per class
  std::vector<int> per_class_total(data.num_classes, 0);
  for (const auto& r : data.records) ++per_class_total[r.label];
  std::vector<int> poisoned_count(data.num_classes, 0);
  for (const auto& r : out.records)
    if (r.poisoned) {
      ++poisoned_count[r.label];
      CHECK(r.condition_class == r.label);
    }
  for (int t = 0; t < data.num_classes; ++t) {
    const int expect = static_cast<int>(std::lround(0.30 * per_class_total[t]));
    CHECK(poisoned_count[t] == expect);
    CHECK(expect == 3);
  }
}

TEST_CASE("poisoning invariants: counts, histogram, clean labels") {
  auto data = tiny_dataset(7, 14);
  auto gen = tiny_gen(data.num_classes, data.points_per_cloud);
  PoisonConfig cfg;
  cfg.alpha = 40;
  cfg.seed = 3;
  auto out = poison_training_set(gen, data, cfg);

  CHECK(out.records.size() == data.records.size());
  CHECK(class_histogram(out) == class_histogram(data));
  for (size_t i = 0; i < out.records.size(); ++i)
    CHECK(out.records[i].label == data.records[i].label);  // clean-label audit

  // untouched records keep their exact clouds
  for (size_t i = 0; i < out.records.size(); ++i)
    if (!out.records[i].poisoned) CHECK(out.records[i].cloud.v == data.records[i].cloud.v);
}

TEST_CASE("poison selection is seed-deterministic") {
  auto data = tiny_dataset(8, 15);
  auto gen = tiny_gen(data.num_classes, data.points_per_cloud);
  PoisonConfig cfg;
  cfg.alpha = 50;
  cfg.seed = 21;
  auto a = poison_training_set(gen, data, cfg);
  auto b = poison_training_set(gen, data, cfg);
  for (size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].poisoned == b.records[i].poisoned);
    CHECK(a.records[i].cloud.v == b.records[i].cloud.v);
  }

  cfg.seed = 22;
  auto c = poison_training_set(gen, data, cfg);
  bool any_diff = false;
  for (size_t i = 0; i < a.records.size(); ++i)
    if (a.records[i].poisoned != c.records[i].poisoned) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("targeted subset poisons only the requested classes") {
  auto data = tiny_dataset(6, 16);
  auto gen = tiny_gen(data.num_classes, data.points_per_cloud);
  PoisonConfig cfg;
  cfg.alpha = 50;
  cfg.target_classes = {1};
  auto out = poison_training_set(gen, data, cfg);
  for (const auto& r : out.records)
    if (r.poisoned) CHECK(r.label == 1);
  int n_poisoned = 0;
  for (const auto& r : out.records) n_poisoned += r.poisoned ? 1 : 0;
  CHECK(n_poisoned == 3);
}

TEST_CASE("poison validation errors") {
  auto data = tiny_dataset(4, 17);
  auto gen = tiny_gen(data.num_classes, data.points_per_cloud);
  PoisonConfig cfg;
  cfg.alpha = -1;
  CHECK_THROWS_AS(poison_training_set(gen, data, cfg), ConfigError);
  cfg.alpha = 101;
  CHECK_THROWS_AS(poison_training_set(gen, data, cfg), ConfigError);

  // a declared class with zero records
  LabeledDataset sparse = data;
  sparse.num_classes = 4;
  auto gen4 = tiny_gen(4, data.points_per_cloud);
  cfg.alpha = 30;
  CHECK_THROWS_AS(poison_training_set(gen4, sparse, cfg), ConfigError);

  // class count mismatch between generator and data
  cfg.alpha = 30;
  CHECK_THROWS_AS(poison_training_set(gen4, data, cfg), InvalidInputError);
}

TEST_CASE("asr with constant classifiers") {
  auto test = tiny_dataset(4, 18, "test");
  auto gen = tiny_gen(test.num_classes, test.points_per_cloud);

  auto always_t = constant_classifier(test.num_classes, 1);
  CHECK(asr(always_t, gen, test, 1, false) == doctest::Approx(100.0));
  CHECK(asr(always_t, gen, test, 1, true) == doctest::Approx(100.0));

  auto never_t = constant_classifier(test.num_classes, 0);
  CHECK(asr(never_t, gen, test, 1, false) == doctest::Approx(0.0));
  CHECK(asr(never_t, gen, test, 1, true) == doctest::Approx(0.0));
}

TEST_CASE("asr counts exactly the crafted clouds that cross the head") {
  // 10 eligible records, classifier predicts the target for exactly 7
  DataSpec spec;
  spec.families = {"sphere", "cube"};
  spec.samples_per_class = 5;
  spec.n_points = 24;
  spec.noise_sigma = 0.05;
  auto test = generate_synthetic_dataset(spec, 19, "test");
  REQUIRE(test.records.size() == 10);
  for (auto& r : test.records) r.label = 1;  // all eligible for t = 0

  auto gen = tiny_gen(test.num_classes, test.points_per_cloud, 7);

  // oracle: max x of each crafted cloud, threshold between the 7th and 8th
  morphnet::MorphNetWork<float> work;
  std::vector<float> maxx;
  for (const auto& r : test.records) {
    const CloudF& crafted = morphnet_forward(gen, r.cloud, 0, work);
    float mx = crafted.at(0, 0);
    for (int i = 0; i < crafted.rows; ++i) mx = std::max(mx, crafted.at(i, 0));
    maxx.push_back(mx);
  }
  auto sorted = maxx;
  std::sort(sorted.begin(), sorted.end(), std::greater<float>());
  REQUIRE(sorted[6] > sorted[7]);  // distinct values so the threshold is clean
  const float threshold = 0.5f * (sorted[6] + sorted[7]);

  auto victim = threshold_classifier(test.num_classes, threshold);
  CHECK(asr(victim, gen, test, 0, false) == doctest::Approx(70.0));
}

TEST_CASE("asr exclusion toggle and eligibility errors") {
  auto test = tiny_dataset(3, 20, "test");
  auto gen = tiny_gen(test.num_classes, test.points_per_cloud);
  auto always_t = constant_classifier(test.num_classes, 2);

  EvalOptions include_all;
  include_all.exclude_true_target = false;
  CHECK(asr(always_t, gen, test, 2, false, include_all) == doctest::Approx(100.0));

  // all records share the target label: no eligible records under exclusion
  LabeledDataset only_t = test;
  for (auto& r : only_t.records) r.label = 2;
  CHECK_THROWS_AS(asr(always_t, gen, only_t, 2, false), InvalidInputError);
  CHECK(asr(always_t, gen, only_t, 2, false, include_all) == doctest::Approx(100.0));
}

TEST_CASE("masr is the unweighted mean of per-class asr") {
  auto test = tiny_dataset(4, 23, "test");
  auto gen = tiny_gen(test.num_classes, test.points_per_cloud, 9);

  // an arbitrary fixed classifier gives varied per-class rates
  models::ClassifierF victim;
  Rng rng(31);
  victim.init(rng, test.num_classes);

  std::vector<double> per_class;
  for (int t = 0; t < test.num_classes; ++t)
    per_class.push_back(asr(victim, gen, test, t, false));
  const double mean =
      std::accumulate(per_class.begin(), per_class.end(), 0.0) / per_class.size();
  CHECK(masr(victim, gen, test, false) == doctest::Approx(mean));

  // single-class target set equals that class's asr
  CHECK(masr(victim, gen, test, false, {2}) == doctest::Approx(per_class[2]));
}

TEST_CASE("defended asr differs only by the outlier filter") {
  auto test = tiny_dataset(4, 24, "test");
  auto gen = tiny_gen(test.num_classes, test.points_per_cloud);
  models::ClassifierF victim;
  Rng rng(32);
  victim.init(rng, test.num_classes);

  for (int t = 0; t < test.num_classes; ++t) {
    const double undefended = asr(victim, gen, test, t, false);
    const double defended = asr(victim, gen, test, t, true);
    CHECK(undefended >= 0.0);
    CHECK(undefended <= 100.0);
    CHECK(defended >= 0.0);
    CHECK(defended <= 100.0);
  }

  // a filter too weak to drop anything reproduces the undefended rate
  EvalOptions no_drop;
  no_drop.filter.alpha = 1e9;
  CHECK(asr(victim, gen, test, 1, true, no_drop) == asr(victim, gen, test, 1, false));
}

TEST_CASE("mean poison chamfer matches a direct recomputation") {
  auto test = tiny_dataset(3, 25, "test");
  auto gen = tiny_gen(test.num_classes, test.points_per_cloud);

  morphnet::MorphNetWork<float> work;
  double acc = 0;
  size_t cnt = 0;
  for (int t = 0; t < test.num_classes; ++t)
    for (const auto& r : test.records) {
      if (r.label == t) continue;
      const CloudF& crafted = morphnet_forward(gen, r.cloud, t, work);
      acc += geo::chamfer_distance<float>(r.cloud, crafted);
      ++cnt;
    }
  CHECK(mean_poison_chamfer(gen, test) == doctest::Approx(acc / cnt));
}

TEST_CASE("report serialization round trip") {
  AttackReport r;
  r.target_classes = {0, 1, 2};
  r.per_class_asr = {80.0, 60.0, 70.0};
  r.per_class_asr_d = {10.0, 20.0, 30.0};
  r.masr = 70.0;
  r.masr_d = 20.0;
  r.victim_clean_acc = 91.5;
  r.benign_clean_acc = 92.0;
  r.delta_acc = 0.5;
  r.mean_chamfer = 3.25;
  r.provenance_json = "{\"poison_seed\":7}";

  const auto js = report_json(r);
  CHECK(report_json(r) == js);  // deterministic
  auto parsed = nlohmann::json::parse(js);
  CHECK(parsed["masr"].get<double>() == doctest::Approx(70.0));
  CHECK(parsed["per_class_asr"].size() == 3);
  CHECK(parsed["provenance"]["poison_seed"].get<int>() == 7);

  const auto csv = report_csv(r);
  CHECK(csv == "target_class,asr,asr_defended\n"
               "0,80.0000,10.0000\n"
               "1,60.0000,20.0000\n"
               "2,70.0000,30.0000\n");
}

TEST_CASE("attack experiment end to end at micro scale") {
  ExperimentConfig cfg;
  cfg.data.families = {"sphere", "cube", "torus"};
  cfg.data.samples_per_class = 6;
  cfg.data.n_points = 24;
  cfg.data.noise_sigma = 0.01;
  cfg.data_seed = 41;

  cfg.clean_cfg.epochs = 12;
  cfg.clean_cfg.lr = 0.05;
  cfg.clean_cfg.batch_size = 6;
  cfg.clean_cfg.seed = 42;

  cfg.morph_cfg.epochs = 2;
  cfg.morph_cfg.batch_size = 6;
  cfg.morph_cfg.n_blocks = 1;
  cfg.morph_cfg.seed = 43;

  cfg.poison.alpha = 30;
  cfg.poison.seed = 44;

  cfg.victim_cfg = cfg.clean_cfg;
  cfg.victim_cfg.seed = 45;

  auto res = run_attack_experiment(cfg);
  CHECK(res.report.target_classes.size() == 3);
  CHECK(res.report.per_class_asr.size() == 3);
  CHECK(res.report.per_class_asr_d.size() == 3);
  CHECK(res.report.masr >= 0.0);
  CHECK(res.report.masr <= 100.0);
  CHECK(res.report.mean_chamfer > 0.0);
  CHECK(res.report.delta_acc ==
        doctest::Approx(res.report.benign_clean_acc - res.report.victim_clean_acc));
  CHECK_FALSE(res.report.provenance_json.empty());
  auto prov = nlohmann::json::parse(res.report.provenance_json);
  CHECK(prov["victim_arch"] == "pointnet_mini");
  CHECK(prov["morphnet_sha256"].get<std::string>().size() == 64);

  int n_poisoned = 0;
  for (const auto& r : res.poisoned_train.records) n_poisoned += r.poisoned ? 1 : 0;
  CHECK(n_poisoned == 6);  // lround(0.3 * 6) = 2 per class, 3 classes

  // rerun reproduces the report byte for byte
  auto res2 = run_attack_experiment(cfg);
  CHECK(report_json(res2.report) == report_json(res.report));
}

TEST_CASE("alpha zero experiment leaves the victim identical to its twin") {
  ExperimentConfig cfg;
  cfg.data.families = {"sphere", "cube"};
  cfg.data.samples_per_class = 4;
  cfg.data.n_points = 24;
  cfg.data_seed = 51;
  cfg.clean_cfg.epochs = 4;
  cfg.clean_cfg.lr = 0.05;
  cfg.clean_cfg.batch_size = 4;
  cfg.clean_cfg.seed = 52;
  cfg.morph_cfg.epochs = 1;
  cfg.morph_cfg.batch_size = 4;
  cfg.morph_cfg.n_blocks = 1;
  cfg.morph_cfg.seed = 53;
  cfg.poison.alpha = 0;
  cfg.victim_cfg = cfg.clean_cfg;

  auto res = run_attack_experiment(cfg);
  for (const auto& r : res.poisoned_train.records) CHECK_FALSE(r.poisoned);
  CHECK(res.report.delta_acc == doctest::Approx(0.0));

  auto vp = res.victim.params();
  auto bp = res.benign.params();
  REQUIRE(vp.size() == bp.size());
  for (size_t i = 0; i < vp.size(); ++i)
    CHECK(std::equal(vp[i].p, vp[i].p + vp[i].n, bp[i].p));
}

TEST_CASE("transfer eval runs the same protocol on another architecture") {
  auto train = tiny_dataset(4, 61, "train");
  auto test = tiny_dataset(4, 61, "test");
  auto gen = tiny_gen(train.num_classes, train.points_per_cloud);

  PoisonConfig pcfg;
  pcfg.alpha = 50;
  pcfg.seed = 62;
  auto poisoned = poison_training_set(gen, train, pcfg);

  models::TrainConfig vcfg;
  vcfg.epochs = 2;
  vcfg.lr = 0.05;
  vcfg.batch_size = 4;
  vcfg.seed = 63;

  auto rep = transfer_eval(gen, poisoned, train, "edgeconv_mini", test, vcfg);
  CHECK(rep.target_classes.size() == 3);
  CHECK(rep.masr >= 0.0);
  CHECK(rep.masr <= 100.0);
  auto prov = nlohmann::json::parse(rep.provenance_json);
  CHECK(prov["transfer_arch"] == "edgeconv_mini");

  // source tag: identical protocol, just the source architecture
  auto rep_src = transfer_eval(gen, poisoned, train, "pointnet_mini", test, vcfg);
  CHECK(rep_src.target_classes.size() == 3);
}
