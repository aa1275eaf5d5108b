#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "morph/common.hpp"

namespace morph {

struct Record {
  CloudF cloud;
  int label = 0;
  bool poisoned = false;
  int condition_class = -1;  // -1 when not poisoned
};

struct LabeledDataset {
  std::vector<Record> records;
  int num_classes = 0;
  int points_per_cloud = 0;
  std::string split;
  std::vector<std::string> families;
  uint64_t seed = 0;

  // Checks the structural invariants; throws InvalidInputError on violation.
  void validate() const;
};

struct DataSpec {
  std::vector<std::string> families;  // subset of the known family names
  int samples_per_class = 0;
  int n_points = 0;
  double noise_sigma = 0.0;
};

const std::vector<std::string>& known_families();

// Deterministic for fixed (spec, seed, split): each record draws from an RNG
// stream derived from those three values and its index.
LabeledDataset generate_synthetic_dataset(const DataSpec& spec, uint64_t seed,
                                          const std::string& split);

// Directory layout: meta.json, points.f32 (LE float32, [record][point][xyz]),
// labels.i32 (LE int32), poison.json when any record is poisoned.
void save_dataset(const LabeledDataset& ds, const std::string& dir);
LabeledDataset load_dataset(const std::string& dir);

}  // namespace morph
