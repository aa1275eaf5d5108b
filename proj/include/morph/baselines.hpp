#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "morph/attack.hpp"
#include "morph/dataset.hpp"
#include "morph/models.hpp"

namespace morph::baselines {

// Fixed line trigger: points evenly spaced on the ray from the origin.
struct StaticTriggerSpec {
  int num_points = 20;
  std::array<double, 3> direction = {0.5773502691896258, 0.5773502691896258,
                                     0.5773502691896258};
  double extent = 1.2;  // protrudes past the unit sphere
};

// The trigger's own geometry: row i at extent * (i+1)/num_points * direction,
// so a single point sits at the far end of the segment.
CloudF line_trigger_points(const StaticTriggerSpec& spec);

// Replaces a seeded-random subset of trigger.rows points with the trigger
// rows (ascending replaced indices). Point count unchanged.
CloudF attach_trigger(const CloudF& cloud, const CloudF& trigger, uint64_t seed);

CloudF apply_static_trigger(const CloudF& cloud, const StaticTriggerSpec& spec, uint64_t seed);

struct PgdConfig {
  double eps = 0.05;       // L-inf radius on normalized clouds
  int steps = 10;
  double step_size = 0.01;
};

// Signed-gradient ascent on the true-class cross entropy, projected to the
// L-inf ball around the input. Lowers the clean model's confidence without
// changing the label. eps = 0 or steps = 0 returns the input unchanged.
CloudF pgd_perturb(const models::ClassifierF& f_clean, const CloudF& cloud, int true_label,
                   const PgdConfig& cfg);

struct UniversalTrigger {
  CloudF points;
  int target = 0;
};

struct TriggerOptConfig {
  int num_points = 20;
  int iters = 60;
  double lr = 0.01;
  double theta = 0.02;  // weight of the outlier term when with_den
  int den_k = 3;
  uint64_t seed = 0;
};

// Gradient-optimizes free trigger coordinates (initialized from a seeded
// 20-point subset of a non-target sample) so the clean model classifies
// non-target samples with the trigger substituted in as t. with_den adds
// theta * mean outlier score of the triggered clouds.
UniversalTrigger optimize_universal_trigger(const models::ClassifierF& f_clean,
                                            const LabeledDataset& data, int t, bool with_den,
                                            const TriggerOptConfig& cfg);

void save_trigger(const UniversalTrigger& trigger, const TriggerOptConfig& cfg,
                  const std::string& dir);
UniversalTrigger load_trigger(const std::string& dir, TriggerOptConfig* cfg = nullptr);

// Clean-label poisoning for one target class: a seeded alpha% of class-t
// records are PGD-perturbed and get the trigger substituted in; labels stay t.
LabeledDataset baseline_poison_class(const models::ClassifierF& f_clean,
                                     const LabeledDataset& data, int t, const CloudF& trigger,
                                     const PgdConfig& pgd, double alpha, uint64_t seed);

// ASR of a fixed trigger: percentage of eligible test records classified as t
// once the trigger is substituted in (seeded per-record placement).
double triggered_asr(const models::ClassifierF& victim, const CloudF& trigger,
                     const LabeledDataset& test, int t, bool defended,
                     const attack::EvalOptions& opts, uint64_t seed);

struct BaselineConfig {
  std::string kind = "static";  // static | universal | universal_den
  DataSpec data;
  uint64_t data_seed = 1;
  models::TrainConfig clean_cfg;   // surrogate for PGD and trigger optimization
  models::TrainConfig victim_cfg;  // per-target victims and the benign twin
  attack::PoisonConfig poison;
  attack::EvalOptions eval;
  PgdConfig pgd;
  StaticTriggerSpec static_spec;
  TriggerOptConfig trigger;
};

struct BaselineResult {
  models::ClassifierF clean;
  models::ClassifierF benign;
  std::vector<UniversalTrigger> triggers;  // per target class; empty for static
  attack::AttackReport report;
};

// Single-target protocol iterated per class: poison class t, train a victim,
// evaluate, and average. Same report schema as the generator attack.
BaselineResult run_baseline_attack(const BaselineConfig& cfg);

}  // namespace morph::baselines
