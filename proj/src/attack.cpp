#include "morph/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "json.hpp"
#include "morph/fsio.hpp"
#include "morph/geometry.hpp"

namespace morph::attack {

using models::ClassifierF;
using morphnet::MorphNetF;
using nlohmann::json;

namespace {

std::vector<int> resolve_targets(const std::vector<int>& requested, int c) {
  std::vector<int> out = requested;
  if (out.empty()) {
    out.resize(c);
    std::iota(out.begin(), out.end(), 0);
  }
  for (int t : out) require(t >= 0 && t < c, "target class out of range");
  return out;
}

int argmax_row(const float* v, int c) {
  int best = 0;
  for (int j = 1; j < c; ++j)
    if (v[j] > v[best]) best = j;
  return best;
}

std::string params_sha256(ClassifierF& m) {
  std::vector<float> blob;
  for (const auto& s : m.params()) blob.insert(blob.end(), s.p, s.p + s.n);
  return fsio::sha256_hex(blob.data(), blob.size() * sizeof(float));
}

std::string params_sha256(MorphNetF& m) {
  nn::ParamList<float> params;
  m.params(params);
  std::vector<float> blob;
  for (const auto& s : params) blob.insert(blob.end(), s.p, s.p + s.n);
  return fsio::sha256_hex(blob.data(), blob.size() * sizeof(float));
}

}  // namespace

LabeledDataset poison_training_set(const MorphNetF& gen, const LabeledDataset& data,
                                   const PoisonConfig& cfg) {
  if (cfg.alpha < 0 || cfg.alpha > 100)
    throw ConfigError("poison: alpha must be in [0, 100], got " + std::to_string(cfg.alpha));
  data.validate();
  require(gen.c == data.num_classes, "poison: generator/dataset class count mismatch");
  require(gen.n_points == data.points_per_cloud, "poison: generator/dataset point count mismatch");

  LabeledDataset out = data;
  if (cfg.alpha == 0) return out;

  const auto targets = resolve_targets(cfg.target_classes, data.num_classes);
  std::vector<std::vector<size_t>> by_class(data.num_classes);
  for (size_t i = 0; i < data.records.size(); ++i)
    by_class[data.records[i].label].push_back(i);

  morphnet::MorphNetWork<float> work;
  for (int t : targets) {
    const auto& members = by_class[t];
    if (members.empty())
      throw ConfigError("poison: class " + std::to_string(t) + " has no records");
    const auto count =
        static_cast<size_t>(std::lround(cfg.alpha / 100.0 * static_cast<double>(members.size())));
    Rng rng = Rng::derive(cfg.seed, 300, static_cast<uint64_t>(t));
    std::vector<size_t> picks = members;
    rng.shuffle(picks);
    picks.resize(count);
    std::sort(picks.begin(), picks.end());
    for (size_t idx : picks) {
      Record& rec = out.records[idx];
      rec.cloud = morphnet_forward(gen, rec.cloud, t, work);
      rec.poisoned = true;
      rec.condition_class = t;
    }
  }
  out.validate();
  return out;
}

double asr(const ClassifierF& victim, const MorphNetF& gen, const LabeledDataset& test, int t,
           bool defended, const EvalOptions& opts) {
  require(t >= 0 && t < test.num_classes, "asr: target class out of range");
  require(gen.c == test.num_classes, "asr: generator/dataset class count mismatch");
  morphnet::MorphNetWork<float> work;
  models::ClassifierWork<float> cwork;
  size_t eligible = 0, hits = 0;
  for (const auto& rec : test.records) {
    if (opts.exclude_true_target && rec.label == t) continue;
    ++eligible;
    const CloudF& crafted = morphnet_forward(gen, rec.cloud, t, work);
    if (defended) {
      const CloudF filtered =
          geo::sor_filter<float>(crafted, opts.filter.k, static_cast<float>(opts.filter.alpha));
      models::forward(victim, filtered, cwork);
    } else {
      models::forward(victim, crafted, cwork);
    }
    if (argmax_row(cwork.logits(victim).data(), test.num_classes) == t) ++hits;
  }
  if (eligible == 0)
    throw InvalidInputError("asr: no eligible test records for class " + std::to_string(t));
  return 100.0 * static_cast<double>(hits) / static_cast<double>(eligible);
}

double masr(const ClassifierF& victim, const MorphNetF& gen, const LabeledDataset& test,
            bool defended, const std::vector<int>& target_classes, const EvalOptions& opts) {
  const auto targets = resolve_targets(target_classes, test.num_classes);
  double acc = 0;
  for (int t : targets) acc += asr(victim, gen, test, t, defended, opts);
  return acc / static_cast<double>(targets.size());
}

double mean_poison_chamfer(const MorphNetF& gen, const LabeledDataset& test,
                           const std::vector<int>& target_classes, bool exclude_true_target) {
  const auto targets = resolve_targets(target_classes, test.num_classes);
  morphnet::MorphNetWork<float> work;
  double acc = 0;
  size_t cnt = 0;
  for (int t : targets)
    for (const auto& rec : test.records) {
      if (exclude_true_target && rec.label == t) continue;
      const CloudF& crafted = morphnet_forward(gen, rec.cloud, t, work);
      acc += geo::chamfer_distance<float>(rec.cloud, crafted);
      ++cnt;
    }
  require(cnt > 0, "mean_poison_chamfer: no eligible pairs");
  return acc / static_cast<double>(cnt);
}

std::string report_json(const AttackReport& r) {
  json j = {
      {"target_classes", r.target_classes},
      {"per_class_asr", r.per_class_asr},
      {"per_class_asr_d", r.per_class_asr_d},
      {"masr", r.masr},
      {"masr_d", r.masr_d},
      {"victim_clean_acc", r.victim_clean_acc},
      {"benign_clean_acc", r.benign_clean_acc},
      {"delta_acc", r.delta_acc},
      {"mean_chamfer", r.mean_chamfer},
  };
  if (!r.provenance_json.empty()) j["provenance"] = json::parse(r.provenance_json);
  return j.dump(2) + "\n";
}

std::string report_csv(const AttackReport& r) {
  std::string out = "target_class,asr,asr_defended\n";
  char line[96];
  for (size_t i = 0; i < r.target_classes.size(); ++i) {
    std::snprintf(line, sizeof(line), "%d,%.4f,%.4f\n", r.target_classes[i], r.per_class_asr[i],
                  r.per_class_asr_d[i]);
    out += line;
  }
  return out;
}

namespace {

AttackReport evaluate(const ClassifierF& victim, const ClassifierF& benign, const MorphNetF& gen,
                      const LabeledDataset& test, const std::vector<int>& target_classes,
                      const EvalOptions& opts, json provenance) {
  AttackReport rep;
  rep.target_classes = resolve_targets(target_classes, test.num_classes);
  for (int t : rep.target_classes) {
    rep.per_class_asr.push_back(asr(victim, gen, test, t, false, opts));
    rep.per_class_asr_d.push_back(asr(victim, gen, test, t, true, opts));
  }
  const auto n = static_cast<double>(rep.target_classes.size());
  rep.masr = std::accumulate(rep.per_class_asr.begin(), rep.per_class_asr.end(), 0.0) / n;
  rep.masr_d = std::accumulate(rep.per_class_asr_d.begin(), rep.per_class_asr_d.end(), 0.0) / n;
  rep.victim_clean_acc = 100.0 * models::accuracy(victim, test);
  rep.benign_clean_acc = 100.0 * models::accuracy(benign, test);
  rep.delta_acc = rep.benign_clean_acc - rep.victim_clean_acc;
  rep.mean_chamfer = mean_poison_chamfer(gen, test, rep.target_classes, opts.exclude_true_target);
  rep.provenance_json = provenance.dump();
  return rep;
}

}  // namespace

ExperimentResult run_attack_experiment(const ExperimentConfig& cfg) {
  ExperimentResult res;
  const auto train = generate_synthetic_dataset(cfg.data, cfg.data_seed, "train");
  const auto test = generate_synthetic_dataset(cfg.data, cfg.data_seed, "test");

  auto clean_run = models::train_classifier(train, cfg.clean_cfg);
  res.clean = clean_run.model;

  auto morph_run = training::train_morphnet(res.clean, train, cfg.morph_cfg);
  res.gen = std::move(morph_run.net);

  res.poisoned_train = poison_training_set(res.gen, train, cfg.poison);

  auto victim_run = models::train_classifier(res.poisoned_train, cfg.victim_cfg);
  res.victim = victim_run.model;
  auto benign_run = models::train_classifier(train, cfg.victim_cfg);
  res.benign = benign_run.model;

  json provenance = {
      {"data_seed", cfg.data_seed},
      {"clean_seed", cfg.clean_cfg.seed},
      {"morph_seed", cfg.morph_cfg.seed},
      {"poison_seed", cfg.poison.seed},
      {"victim_seed", cfg.victim_cfg.seed},
      {"alpha", cfg.poison.alpha},
      {"n_blocks", cfg.morph_cfg.n_blocks},
      {"lambda", cfg.morph_cfg.weights.lambda},
      {"theta", cfg.morph_cfg.weights.theta},
      {"victim_arch", cfg.victim_cfg.arch},
      {"clean_sha256", params_sha256(res.clean)},
      {"morphnet_sha256", params_sha256(res.gen)},
      {"victim_sha256", params_sha256(res.victim)},
      {"benign_sha256", params_sha256(res.benign)},
  };
  res.report = evaluate(res.victim, res.benign, res.gen, test, cfg.poison.target_classes,
                        cfg.eval, std::move(provenance));
  return res;
}

AttackReport transfer_eval(const MorphNetF& gen, const LabeledDataset& poisoned_train,
                           const LabeledDataset& clean_train, const std::string& transfer_arch,
                           const LabeledDataset& test, const models::TrainConfig& victim_cfg,
                           const EvalOptions& opts) {
  require(poisoned_train.num_classes == clean_train.num_classes,
          "transfer_eval: poisoned/clean class count mismatch");
  models::TrainConfig cfg = victim_cfg;
  cfg.arch = transfer_arch;
  auto victim_run = models::train_classifier(poisoned_train, cfg);
  auto benign_run = models::train_classifier(clean_train, cfg);

  auto mutable_gen = gen;
  json provenance = {
      {"transfer_arch", transfer_arch},
      {"victim_seed", cfg.seed},
      {"morphnet_sha256", params_sha256(mutable_gen)},
      {"victim_sha256", params_sha256(victim_run.model)},
      {"benign_sha256", params_sha256(benign_run.model)},
  };
  return evaluate(victim_run.model, benign_run.model, gen, test, {}, opts, std::move(provenance));
}

}  // namespace morph::attack
