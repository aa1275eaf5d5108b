#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "morph/common.hpp"
#include "morph/dataset.hpp"
#include "morph/geometry.hpp"
#include "morph/models.hpp"
#include "morph/morphnet.hpp"

namespace morph::training {

struct LossWeights {
  double lambda = 0.05;  // reconstruction weight
  double theta = 0.02;   // denoising weight; 0 recovers the basic objective
};

template <class T>
struct LossParts {
  T cls = T(0);
  T rec = T(0);
  T den = T(0);
};

// Weighted sum of the three terms. Aborts on non-finite parts so divergence
// surfaces with context instead of propagating NaNs.
template <class T>
T total_loss(const LossParts<T>& parts, const LossWeights& w) {
  if (!std::isfinite(static_cast<double>(parts.cls)) ||
      !std::isfinite(static_cast<double>(parts.rec)) ||
      !std::isfinite(static_cast<double>(parts.den)))
    throw NumericalError("total_loss: non-finite loss part (cls=" +
                         std::to_string(static_cast<double>(parts.cls)) + ", rec=" +
                         std::to_string(static_cast<double>(parts.rec)) + ", den=" +
                         std::to_string(static_cast<double>(parts.den)) + ")");
  return parts.cls + static_cast<T>(w.lambda) * parts.rec + static_cast<T>(w.theta) * parts.den;
}

// Mean over the batch of -log f_t(x) under a frozen classifier. When dx is
// given, accumulates the per-sample gradient of the MEAN loss into dx[i];
// classifier parameter gradients are scratch (the caller never steps them).
template <class T>
T loss_cls(models::Classifier<T>& f_clean, const std::vector<Cloud<T>>& batch,
           const std::vector<int>& targets, std::vector<Cloud<T>>* dx = nullptr) {
  require(batch.size() == targets.size(), "loss_cls: batch/target size mismatch");
  require(!batch.empty(), "loss_cls: empty batch");
  if (dx) require(dx->size() == batch.size(), "loss_cls: bad dx size");
  models::ClassifierWork<T> w;
  const int c = f_clean.num_classes();
  const T inv = T(1) / static_cast<T>(batch.size());
  T loss = T(0);
  Mat<T> dlogits(1, c);
  for (size_t i = 0; i < batch.size(); ++i) {
    require(targets[i] >= 0 && targets[i] < c, "loss_cls: target out of range");
    models::forward(f_clean, batch[i], w);
    loss += nn::softmax_xent(w.logits(f_clean).data(), c, targets[i],
                             dx ? dlogits.data() : nullptr);
    if (dx) {
      for (auto& v : dlogits.v) v *= inv;
      Cloud<T> g(batch[i].rows, 3);
      models::backward(f_clean, batch[i], w, dlogits, &g);
      auto& acc = (*dx)[i];
      require(acc.rows == batch[i].rows && acc.cols == 3, "loss_cls: bad dx shape");
      for (size_t j = 0; j < g.v.size(); ++j) acc.v[j] += g.v[j];
    }
  }
  return loss * inv;
}

// Sum of Chamfer distances from the benign cloud to every intermediate.
// When dinter is given, accumulates w_scale * gradient into dinter[k].
template <class T>
T loss_rec(const Cloud<T>& benign, const std::vector<const Cloud<T>*>& intermediates,
           std::vector<Cloud<T>>* dinter = nullptr, T w_scale = T(1)) {
  require(!intermediates.empty(), "loss_rec: no intermediates");
  if (dinter) require(dinter->size() == intermediates.size(), "loss_rec: bad dinter size");
  T loss = T(0);
  for (size_t k = 0; k < intermediates.size(); ++k)
    loss += geo::chamfer_distance<T>(benign, *intermediates[k], nullptr,
                                     dinter ? &(*dinter)[k] : nullptr, w_scale);
  return loss;
}

// Mean outlier score over the batch. When dx is given, accumulates
// w_scale * gradient of the MEAN into dx[i].
template <class T>
T loss_den(const std::vector<Cloud<T>>& batch, const geo::OutlierParams& params,
           std::vector<Cloud<T>>* dx = nullptr, T w_scale = T(1)) {
  require(!batch.empty(), "loss_den: empty batch");
  if (dx) require(dx->size() == batch.size(), "loss_den: bad dx size");
  const T inv = T(1) / static_cast<T>(batch.size());
  T loss = T(0);
  for (size_t i = 0; i < batch.size(); ++i) {
    if (dx)
      loss += geo::outlier_score_with_grad<T>(batch[i], params, (*dx)[i], w_scale * inv);
    else
      loss += geo::outlier_score<T>(batch[i], params);
  }
  return loss * inv;
}

struct MorphTrainConfig {
  int n_blocks = 2;
  std::string residual_mode = "mean";
  bool no_residual = false;
  std::string optimizer = "adam";
  double lr = 5e-4;
  int batch_size = 16;
  int epochs = 30;
  std::string target_policy = "random";  // "random" | "all"
  uint64_t seed = 0;
  LossWeights weights;
  int den_k = 3;
  int den_m = 0;  // 0 = scale with cloud size
};

struct MorphEpochStats {
  int epoch = 0;
  double cls = 0, rec = 0, den = 0, total = 0;
  double wall_seconds = 0;
};

struct MorphTrainResult {
  morphnet::MorphNetF net;
  std::vector<MorphEpochStats> history;
};

// Trains the generator against a frozen copy of f_clean. Deterministic for a
// fixed config; per-epoch shuffling and target draws use streams derived from
// cfg.seed. Throws NumericalError if the loss diverges.
MorphTrainResult train_morphnet(const models::ClassifierF& f_clean, const LabeledDataset& data,
                                const MorphTrainConfig& cfg);

// epoch,cls,rec,den,total,wall_seconds per line.
std::string history_csv(const std::vector<MorphEpochStats>& history);

}  // namespace morph::training
