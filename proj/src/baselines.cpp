#include "morph/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "json.hpp"
#include "morph/fsio.hpp"
#include "morph/geometry.hpp"

namespace morph::baselines {

using models::ClassifierF;
using nlohmann::json;

namespace {

constexpr uint64_t kSelectTag = 300;  // shared with the generator attack
constexpr uint64_t kAttachTag = 400;
constexpr uint64_t kEvalTag = 500;
constexpr uint64_t kInitTag = 610;
constexpr uint64_t kPlacementTag = 611;

void check_spec(const StaticTriggerSpec& spec) {
  require(spec.num_points >= 1, "static trigger: num_points must be >= 1");
  const double norm = std::sqrt(spec.direction[0] * spec.direction[0] +
                                spec.direction[1] * spec.direction[1] +
                                spec.direction[2] * spec.direction[2]);
  require(std::abs(norm - 1.0) <= 1e-6, "static trigger: direction must be unit length");
  require(spec.extent > 0, "static trigger: extent must be positive");
}

std::vector<int> pick_indices(int n, int count, uint64_t seed) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

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

uint64_t record_seed(uint64_t seed, uint64_t tag, size_t idx) {
  return Rng::mix(Rng::mix(seed, tag), static_cast<uint64_t>(idx));
}

std::string params_sha256(ClassifierF& m) {
  std::vector<float> blob;
  for (const auto& s : m.params()) blob.insert(blob.end(), s.p, s.p + s.n);
  return fsio::sha256_hex(blob.data(), blob.size() * sizeof(float));
}

}  // namespace

CloudF line_trigger_points(const StaticTriggerSpec& spec) {
  check_spec(spec);
  CloudF out(spec.num_points, 3);
  for (int i = 0; i < spec.num_points; ++i) {
    const double s = spec.extent * static_cast<double>(i + 1) / spec.num_points;
    for (int d = 0; d < 3; ++d) out.at(i, d) = static_cast<float>(s * spec.direction[d]);
  }
  return out;
}

CloudF attach_trigger(const CloudF& cloud, const CloudF& trigger, uint64_t seed) {
  require(cloud.cols == 3 && trigger.cols == 3, "attach_trigger: clouds must be Nx3");
  require(trigger.rows >= 1, "attach_trigger: empty trigger");
  require(trigger.rows < cloud.rows, "attach_trigger: trigger must have fewer points than cloud");
  CloudF out = cloud;
  const auto idx = pick_indices(cloud.rows, trigger.rows, seed);
  for (int j = 0; j < trigger.rows; ++j)
    for (int d = 0; d < 3; ++d) out.at(idx[j], d) = trigger.at(j, d);
  return out;
}

CloudF apply_static_trigger(const CloudF& cloud, const StaticTriggerSpec& spec, uint64_t seed) {
  return attach_trigger(cloud, line_trigger_points(spec), seed);
}

CloudF pgd_perturb(const ClassifierF& f_clean, const CloudF& cloud, int true_label,
                   const PgdConfig& cfg) {
  require(cfg.eps >= 0, "pgd: eps must be non-negative");
  require(cfg.steps >= 0, "pgd: steps must be non-negative");
  require(cfg.step_size > 0, "pgd: step_size must be positive");
  ClassifierF f = f_clean;
  const int c = f.num_classes();
  require(true_label >= 0 && true_label < c, "pgd: label out of range");
  CloudF x = cloud;
  if (cfg.eps == 0 || cfg.steps == 0) return x;

  const auto eps = static_cast<float>(cfg.eps);
  const auto step = static_cast<float>(cfg.step_size);
  models::ClassifierWork<float> w;
  Mat<float> dlogits(1, c);
  CloudF g(cloud.rows, 3);
  for (int s = 0; s < cfg.steps; ++s) {
    models::forward(f, x, w);
    nn::softmax_xent(w.logits(f).data(), c, true_label, dlogits.data());
    g.zero();
    models::backward(f, x, w, dlogits, &g);
    for (size_t i = 0; i < x.v.size(); ++i) {
      if (g.v[i] > 0)
        x.v[i] += step;
      else if (g.v[i] < 0)
        x.v[i] -= step;
      // exact L-inf projection: the recomputed deviation must not exceed eps,
      // so back off rounding at the ball boundary ulp by ulp
      const float orig = cloud.v[i];
      float r = orig + std::clamp(x.v[i] - orig, -eps, eps);
      while (std::abs(r - orig) > eps) r = std::nextafterf(r, orig);
      x.v[i] = r;
    }
  }
  return x;
}

UniversalTrigger optimize_universal_trigger(const ClassifierF& f_clean, const LabeledDataset& data,
                                            int t, bool with_den, const TriggerOptConfig& cfg) {
  data.validate();
  const int c = f_clean.num_classes();
  require(c == data.num_classes, "trigger opt: classifier/dataset class count mismatch");
  require(t >= 0 && t < c, "trigger opt: target class out of range");
  require(cfg.iters >= 1, "trigger opt: iters must be >= 1");
  require(cfg.lr > 0, "trigger opt: lr must be positive");
  require(cfg.num_points >= 1 && cfg.num_points < data.points_per_cloud,
          "trigger opt: need 1 <= num_points < cloud size");
  if (with_den) require(cfg.theta >= 0, "trigger opt: theta must be non-negative");

  std::vector<size_t> non_target;
  for (size_t i = 0; i < data.records.size(); ++i)
    if (data.records[i].label != t) non_target.push_back(i);
  require(!non_target.empty(), "trigger opt: no non-target samples");

  // init from a seeded point subset of a seeded non-target sample
  Rng init_rng = Rng::derive(cfg.seed, kInitTag, static_cast<uint64_t>(t));
  const auto& seed_cloud =
      data.records[non_target[init_rng.uniform_index(non_target.size())]].cloud;
  UniversalTrigger trig;
  trig.target = t;
  trig.points = CloudF(cfg.num_points, 3);
  {
    std::vector<int> idx(seed_cloud.rows);
    std::iota(idx.begin(), idx.end(), 0);
    init_rng.shuffle(idx);
    for (int j = 0; j < cfg.num_points; ++j)
      for (int d = 0; d < 3; ++d) trig.points.at(j, d) = seed_cloud.at(idx[j], d);
  }

  // fixed per-sample placement across iterations
  std::vector<std::vector<int>> placement(non_target.size());
  for (size_t i = 0; i < non_target.size(); ++i)
    placement[i] = pick_indices(data.points_per_cloud, cfg.num_points,
                                record_seed(cfg.seed, kPlacementTag, non_target[i]));

  ClassifierF f = f_clean;
  models::ClassifierWork<float> w;
  Mat<float> dlogits(1, c);
  CloudF grad(cfg.num_points, 3);
  CloudF dx(data.points_per_cloud, 3);
  CloudF dden(data.points_per_cloud, 3);
  const geo::OutlierParams den_params{cfg.den_k, geo::scaled_m(data.points_per_cloud)};
  const float inv = 1.0f / static_cast<float>(non_target.size());

  nn::AdamOpt<float> opt;
  opt.lr = static_cast<float>(cfg.lr);
  nn::ParamList<float> plist;
  plist.push_back({"trigger", trig.points.data(), grad.data(), trig.points.size()});

  CloudF x_sub;
  for (int it = 0; it < cfg.iters; ++it) {
    grad.zero();
    for (size_t i = 0; i < non_target.size(); ++i) {
      x_sub = data.records[non_target[i]].cloud;
      const auto& idx = placement[i];
      for (int j = 0; j < cfg.num_points; ++j)
        for (int d = 0; d < 3; ++d) x_sub.at(idx[j], d) = trig.points.at(j, d);

      models::forward(f, x_sub, w);
      nn::softmax_xent(w.logits(f).data(), c, t, dlogits.data());
      for (auto& v : dlogits.v) v *= inv;
      dx.zero();
      models::backward(f, x_sub, w, dlogits, &dx);
      if (with_den && cfg.theta > 0) {
        dden.zero();
        geo::outlier_score_with_grad<float>(x_sub, den_params, dden,
                                            static_cast<float>(cfg.theta) * inv);
        for (size_t k = 0; k < dx.v.size(); ++k) dx.v[k] += dden.v[k];
      }
      for (int j = 0; j < cfg.num_points; ++j)
        for (int d = 0; d < 3; ++d) grad.at(j, d) += dx.at(idx[j], d);
    }
    if (!nn::grads_finite(plist))
      throw NumericalError("optimize_universal_trigger diverged at iteration " +
                           std::to_string(it));
    opt.step(plist);
  }
  require(all_finite(trig.points.data(), trig.points.size()),
          "trigger opt: non-finite trigger coordinates");
  return trig;
}

void save_trigger(const UniversalTrigger& trigger, const TriggerOptConfig& cfg,
                  const std::string& dir) {
  json meta = {
      {"format_version", 1},
      {"kind", "trigger"},
      {"target", trigger.target},
      {"num_points", trigger.points.rows},
      {"iters", cfg.iters},
      {"lr", cfg.lr},
      {"theta", cfg.theta},
      {"den_k", cfg.den_k},
      {"seed", cfg.seed},
  };
  fsio::write_text_atomic(dir + "/meta.json", meta.dump(2) + "\n");
  fsio::write_file_atomic(dir + "/points.f32", trigger.points.data(),
                          trigger.points.size() * sizeof(float));
}

UniversalTrigger load_trigger(const std::string& dir, TriggerOptConfig* cfg) {
  json meta;
  try {
    meta = json::parse(fsio::read_text(dir + "/meta.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed trigger meta in " + dir + ": " + e.what());
  }
  if (meta.value("kind", "") != "trigger")
    throw ConfigError("checkpoint in " + dir + " is not a trigger artifact");
  UniversalTrigger trig;
  trig.target = meta.at("target").get<int>();
  const int n = meta.at("num_points").get<int>();
  const auto blob = fsio::read_file(dir + "/points.f32");
  if (blob.size() != static_cast<size_t>(n) * 3 * sizeof(float))
    throw ConfigError("trigger blob size mismatch in " + dir);
  trig.points = CloudF(n, 3);
  std::memcpy(trig.points.data(), blob.data(), blob.size());
  if (cfg) {
    cfg->num_points = n;
    cfg->iters = meta.at("iters").get<int>();
    cfg->lr = meta.at("lr").get<double>();
    cfg->theta = meta.at("theta").get<double>();
    cfg->den_k = meta.at("den_k").get<int>();
    cfg->seed = meta.at("seed").get<uint64_t>();
  }
  return trig;
}

LabeledDataset baseline_poison_class(const ClassifierF& f_clean, const LabeledDataset& data,
                                     int t, const CloudF& trigger, const PgdConfig& pgd,
                                     double alpha, uint64_t seed) {
  if (alpha < 0 || alpha > 100)
    throw ConfigError("baseline poison: alpha must be in [0, 100], got " + std::to_string(alpha));
  data.validate();
  require(t >= 0 && t < data.num_classes, "baseline poison: target class out of range");

  LabeledDataset out = data;
  if (alpha == 0) return out;

  std::vector<size_t> members;
  for (size_t i = 0; i < data.records.size(); ++i)
    if (data.records[i].label == t) members.push_back(i);
  if (members.empty())
    throw ConfigError("baseline poison: class " + std::to_string(t) + " has no records");

  const auto count =
      static_cast<size_t>(std::lround(alpha / 100.0 * static_cast<double>(members.size())));
  Rng rng = Rng::derive(seed, kSelectTag, static_cast<uint64_t>(t));
  std::vector<size_t> picks = members;
  rng.shuffle(picks);
  picks.resize(count);
  std::sort(picks.begin(), picks.end());

  for (size_t idx : picks) {
    Record& rec = out.records[idx];
    const CloudF hardened = pgd_perturb(f_clean, rec.cloud, t, pgd);
    rec.cloud = attach_trigger(hardened, trigger, record_seed(seed, kAttachTag, idx));
    rec.poisoned = true;
    rec.condition_class = t;
  }
  out.validate();
  return out;
}

double triggered_asr(const ClassifierF& victim, const CloudF& trigger, const LabeledDataset& test,
                     int t, bool defended, const attack::EvalOptions& opts, uint64_t seed) {
  require(t >= 0 && t < test.num_classes, "triggered_asr: target class out of range");
  models::ClassifierWork<float> cwork;
  size_t eligible = 0, hits = 0;
  for (size_t i = 0; i < test.records.size(); ++i) {
    const auto& rec = test.records[i];
    if (opts.exclude_true_target && rec.label == t) continue;
    ++eligible;
    CloudF attacked = attach_trigger(rec.cloud, trigger, record_seed(seed, kEvalTag, i));
    if (defended)
      attacked = geo::sor_filter<float>(attacked, opts.filter.k,
                                        static_cast<float>(opts.filter.alpha));
    models::forward(victim, attacked, cwork);
    if (argmax_row(cwork.logits(victim).data(), test.num_classes) == t) ++hits;
  }
  if (eligible == 0)
    throw InvalidInputError("triggered_asr: no eligible test records for class " +
                            std::to_string(t));
  return 100.0 * static_cast<double>(hits) / static_cast<double>(eligible);
}

BaselineResult run_baseline_attack(const BaselineConfig& cfg) {
  if (cfg.kind != "static" && cfg.kind != "universal" && cfg.kind != "universal_den")
    throw ConfigError("baseline kind must be static, universal, or universal_den, got " +
                      cfg.kind);

  BaselineResult res;
  const auto train = generate_synthetic_dataset(cfg.data, cfg.data_seed, "train");
  const auto test = generate_synthetic_dataset(cfg.data, cfg.data_seed, "test");

  res.clean = models::train_classifier(train, cfg.clean_cfg).model;
  res.benign = models::train_classifier(train, cfg.victim_cfg).model;

  attack::AttackReport& rep = res.report;
  rep.target_classes = resolve_targets(cfg.poison.target_classes, train.num_classes);

  double victim_acc_sum = 0;
  double chamfer_sum = 0;
  size_t chamfer_cnt = 0;
  std::vector<std::string> victim_hashes;
  for (int t : rep.target_classes) {
    CloudF trig_points;
    if (cfg.kind == "static") {
      trig_points = line_trigger_points(cfg.static_spec);
    } else {
      auto trig = optimize_universal_trigger(res.clean, train, t,
                                             cfg.kind == "universal_den", cfg.trigger);
      trig_points = trig.points;
      res.triggers.push_back(std::move(trig));
    }

    const auto poisoned =
        baseline_poison_class(res.clean, train, t, trig_points, cfg.pgd, cfg.poison.alpha,
                              cfg.poison.seed);
    auto victim = models::train_classifier(poisoned, cfg.victim_cfg).model;

    rep.per_class_asr.push_back(
        triggered_asr(victim, trig_points, test, t, false, cfg.eval, cfg.poison.seed));
    rep.per_class_asr_d.push_back(
        triggered_asr(victim, trig_points, test, t, true, cfg.eval, cfg.poison.seed));
    victim_acc_sum += 100.0 * models::accuracy(victim, test);
    victim_hashes.push_back(params_sha256(victim));

    for (size_t i = 0; i < test.records.size(); ++i) {
      const auto& rec = test.records[i];
      if (cfg.eval.exclude_true_target && rec.label == t) continue;
      const CloudF attacked =
          attach_trigger(rec.cloud, trig_points, record_seed(cfg.poison.seed, kEvalTag, i));
      chamfer_sum += geo::chamfer_distance<float>(rec.cloud, attacked);
      ++chamfer_cnt;
    }
  }

  const auto n = static_cast<double>(rep.target_classes.size());
  rep.masr = std::accumulate(rep.per_class_asr.begin(), rep.per_class_asr.end(), 0.0) / n;
  rep.masr_d = std::accumulate(rep.per_class_asr_d.begin(), rep.per_class_asr_d.end(), 0.0) / n;
  rep.victim_clean_acc = victim_acc_sum / n;
  rep.benign_clean_acc = 100.0 * models::accuracy(res.benign, test);
  rep.delta_acc = rep.benign_clean_acc - rep.victim_clean_acc;
  require(chamfer_cnt > 0, "run_baseline_attack: no eligible evaluation pairs");
  rep.mean_chamfer = chamfer_sum / static_cast<double>(chamfer_cnt);

  json provenance = {
      {"kind", cfg.kind},
      {"data_seed", cfg.data_seed},
      {"clean_seed", cfg.clean_cfg.seed},
      {"victim_seed", cfg.victim_cfg.seed},
      {"poison_seed", cfg.poison.seed},
      {"trigger_seed", cfg.trigger.seed},
      {"alpha", cfg.poison.alpha},
      {"pgd_eps", cfg.pgd.eps},
      {"pgd_steps", cfg.pgd.steps},
      {"pgd_step_size", cfg.pgd.step_size},
      {"clean_sha256", params_sha256(res.clean)},
      {"benign_sha256", params_sha256(res.benign)},
      {"victim_sha256", victim_hashes},
  };
  rep.provenance_json = provenance.dump();
  return res;
}

}  // namespace morph::baselines
