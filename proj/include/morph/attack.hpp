#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "morph/dataset.hpp"
#include "morph/models.hpp"
#include "morph/morphnet.hpp"
#include "morph/training.hpp"

namespace morph::attack {

struct PoisonConfig {
  double alpha = 30.0;              // percent of each class's records
  std::vector<int> target_classes;  // empty = every class
  uint64_t seed = 0;
};

// SOR preprocessing used on the defended evaluation path.
struct DefenseFilter {
  int k = 2;
  double alpha = 1.1;
};

struct EvalOptions {
  // Standard reading: a sample already labeled t cannot be "misclassified
  // as" t, so such records are excluded. Toggleable for the literal protocol.
  bool exclude_true_target = true;
  DefenseFilter filter;
};

// Replaces a seeded uniform alpha% of each targeted class's records with the
// generator's output conditioned on that same class. Labels never change.
LabeledDataset poison_training_set(const morphnet::MorphNetF& gen, const LabeledDataset& data,
                                   const PoisonConfig& cfg);

// Percentage of eligible test records classified as t after conditioning the
// generator on t. defended=true applies the SOR filter before inference.
double asr(const models::ClassifierF& victim, const morphnet::MorphNetF& gen,
           const LabeledDataset& test, int t, bool defended, const EvalOptions& opts = {});

// Unweighted mean of asr over the target set (empty = all classes).
double masr(const models::ClassifierF& victim, const morphnet::MorphNetF& gen,
            const LabeledDataset& test, bool defended,
            const std::vector<int>& target_classes = {}, const EvalOptions& opts = {});

struct AttackReport {
  std::vector<int> target_classes;
  std::vector<double> per_class_asr;
  std::vector<double> per_class_asr_d;
  double masr = 0;
  double masr_d = 0;
  double victim_clean_acc = 0;
  double benign_clean_acc = 0;
  double delta_acc = 0;      // benign minus victim, percentage points
  double mean_chamfer = 0;   // over the evaluated (record, target) pairs
  std::string provenance_json;  // seeds, configs, checkpoint hashes
};

std::string report_json(const AttackReport& r);
std::string report_csv(const AttackReport& r);

// Builds the full report for an existing victim/benign/generator triple.
// provenance_json, when nonempty, must parse as a JSON object and is embedded
// in the report.
AttackReport evaluate_models(const models::ClassifierF& victim, const models::ClassifierF& benign,
                             const morphnet::MorphNetF& gen, const LabeledDataset& test,
                             const std::vector<int>& target_classes = {},
                             const EvalOptions& opts = {},
                             const std::string& provenance_json = "");

struct ExperimentConfig {
  DataSpec data;
  uint64_t data_seed = 1;
  models::TrainConfig clean_cfg;   // the attacker's surrogate classifier
  training::MorphTrainConfig morph_cfg;
  PoisonConfig poison;
  models::TrainConfig victim_cfg;  // victim and its benign twin
  EvalOptions eval;
};

struct ExperimentResult {
  models::ClassifierF clean;
  morphnet::MorphNetF gen;
  LabeledDataset poisoned_train;
  models::ClassifierF victim;
  models::ClassifierF benign;
  AttackReport report;
};

// Full pipeline in memory: clean training, generator training, poisoning,
// victim + benign twin training, evaluation. Reproducible from the config.
ExperimentResult run_attack_experiment(const ExperimentConfig& cfg);

// Trains a victim of a different architecture on an existing poisoned set and
// evaluates the same generator against it. The benign twin (for delta
// accuracy) trains on clean_train with the same config.
AttackReport transfer_eval(const morphnet::MorphNetF& gen, const LabeledDataset& poisoned_train,
                           const LabeledDataset& clean_train, const std::string& transfer_arch,
                           const LabeledDataset& test, const models::TrainConfig& victim_cfg,
                           const EvalOptions& opts = {});

// Mean chamfer between benign clouds and their conditioned outputs over the
// asr-eligible (record, target) pairs.
double mean_poison_chamfer(const morphnet::MorphNetF& gen, const LabeledDataset& test,
                           const std::vector<int>& target_classes = {},
                           bool exclude_true_target = true);

}  // namespace morph::attack
