#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "morph/dataset.hpp"
#include "morph/models.hpp"

namespace morph::defenses {

// Victim training with the selected per-batch augmentations; all switches off
// delegates to plain train_classifier bit for bit.
models::ClassifierF defended_training(const LabeledDataset& data, bool rotate, bool jitter,
                                      models::TrainConfig cfg);

// Percentage of the top-50% spectral-similarity candidates of class t that
// carry the poison flag. Features are the victim's penultimate activations,
// centered; similarity is absolute cosine to their top right singular vector.
double spectral_signature_scan(const models::ClassifierF& victim, const LabeledDataset& data,
                               int t);

struct SpectralScanResult {
  std::vector<int> classes;
  std::vector<double> proportions;  // percent truly poisoned among candidates
  double mean = 0;
  double min = 0;
  double max = 0;
};

SpectralScanResult spectral_scan_all(const models::ClassifierF& victim,
                                     const LabeledDataset& data);

std::string scan_json(const SpectralScanResult& r);
std::string scan_csv(const SpectralScanResult& r);

struct CleanseConfig {
  int iters = 80;
  double lr = 0.01;
  double gamma = 0.01;   // L1 sparsity weight on the reversed trigger
  int max_samples = 64;  // seeded subsample of the clean set per optimization
  int restarts = 1;      // extra seeded inits; the lowest final objective wins
  double init_scale = 0.2;
  uint64_t seed = 0;
};

struct CleanseResult {
  std::vector<double> norms;  // per-class reversed-trigger L1 norms
  double anomaly_index = 0;
  bool infected = false;
  int min_class = 0;  // the suspect class (smallest norm)
};

// |median - min| / (1.4826 * MAD) over the per-class norms. Shift- and
// positive-scale-invariant; 0 when all norms coincide.
double mad_anomaly_index(const std::vector<double>& norms);

// Reverse-engineers an additive per-point trigger field for every class and
// flags the model infected when the smallest L1 norm is an MAD outlier.
CleanseResult neural_cleanse(const models::ClassifierF& victim, const LabeledDataset& clean_set,
                             const CleanseConfig& cfg);

std::string cleanse_json(const CleanseResult& r);
std::string cleanse_csv(const CleanseResult& r);

}  // namespace morph::defenses
