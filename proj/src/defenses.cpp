#include "morph/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "morph/nn.hpp"
#include "morph/rng.hpp"

namespace morph::defenses {

using models::ClassifierF;
using nlohmann::json;

namespace {

constexpr uint64_t kCleanseSampleTag = 700;
constexpr uint64_t kCleanseInitTag = 710;
// The scan takes no seed; a fixed constant keeps the power-iteration start
// deterministic without tying it to any experiment stream.
constexpr uint64_t kPowerInitSeed = 0x73706563747261ULL;

double vec_norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

models::ClassifierF defended_training(const LabeledDataset& data, bool rotate, bool jitter,
                                      models::TrainConfig cfg) {
  cfg.augment_rotate = rotate;
  cfg.augment_jitter = jitter;
  return models::train_classifier(data, cfg).model;
}

double spectral_signature_scan(const ClassifierF& victim, const LabeledDataset& data, int t) {
  data.validate();
  require(victim.num_classes() == data.num_classes, "spectral scan: class count mismatch");
  require(t >= 0 && t < data.num_classes, "spectral scan: class out of range");
  std::vector<int> idx;
  for (int i = 0; i < (int)data.records.size(); ++i)
    if (data.records[i].label == t) idx.push_back(i);
  const int n = (int)idx.size();
  require(n >= 2, "spectral scan: class " + std::to_string(t) + " needs at least 2 records");

  models::ClassifierWork<float> w;
  std::vector<std::vector<double>> feats(n);
  int d = 0;
  for (int i = 0; i < n; ++i) {
    models::forward(victim, data.records[idx[i]].cloud, w);
    const auto& f = w.penultimate(victim);
    d = (int)f.size();
    feats[i].assign(f.data(), f.data() + f.size());
  }

  std::vector<double> mu(d, 0.0);
  for (const auto& f : feats)
    for (int j = 0; j < d; ++j) mu[j] += f[j];
  for (double& m : mu) m /= n;
  for (auto& f : feats)
    for (int j = 0; j < d; ++j) f[j] -= mu[j];

  // Top right singular vector of the centered feature matrix, via power
  // iteration on its d x d Gram matrix (positive semi-definite, so the
  // iterate's direction is stable).
  std::vector<double> gram((size_t)d * d, 0.0);
  for (const auto& f : feats)
    for (int a = 0; a < d; ++a) {
      const double fa = f[a];
      if (fa == 0.0) continue;
      double* row = gram.data() + (size_t)a * d;
      for (int b = 0; b < d; ++b) row[b] += fa * f[b];
    }

  Rng rng(Rng::mix(kPowerInitSeed, (uint64_t)t));
  std::vector<double> v(d), nv(d);
  for (double& x : v) x = rng.gaussian();
  double vn = vec_norm(v);
  if (vn == 0.0) v[0] = vn = 1.0;
  for (double& x : v) x /= vn;

  bool degenerate = false;
  for (int it = 0; it < 200; ++it) {
    for (int a = 0; a < d; ++a) {
      const double* row = gram.data() + (size_t)a * d;
      double s = 0;
      for (int b = 0; b < d; ++b) s += row[b] * v[b];
      nv[a] = s;
    }
    const double nn_ = vec_norm(nv);
    if (nn_ < 1e-300) {
      degenerate = true;  // centered features are all zero
      break;
    }
    double delta = 0;
    for (int a = 0; a < d; ++a) {
      nv[a] /= nn_;
      delta = std::max(delta, std::abs(nv[a] - v[a]));
    }
    v.swap(nv);
    if (delta < 1e-13) break;
  }

  std::vector<std::pair<double, int>> scored(n);
  for (int i = 0; i < n; ++i) {
    double score = 0;
    if (!degenerate) {
      double dot = 0;
      for (int j = 0; j < d; ++j) dot += feats[i][j] * v[j];
      const double fn = vec_norm(feats[i]);
      if (fn > 0) score = std::abs(dot) / fn;
    }
    scored[i] = {score, i};
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  const int cand = n / 2;
  int hit = 0;
  for (int i = 0; i < cand; ++i)
    if (data.records[idx[scored[i].second]].poisoned) ++hit;
  return 100.0 * hit / cand;
}

SpectralScanResult spectral_scan_all(const ClassifierF& victim, const LabeledDataset& data) {
  SpectralScanResult r;
  for (int t = 0; t < data.num_classes; ++t) {
    r.classes.push_back(t);
    r.proportions.push_back(spectral_signature_scan(victim, data, t));
  }
  r.mean = std::accumulate(r.proportions.begin(), r.proportions.end(), 0.0) /
           (double)r.proportions.size();
  const auto [mn, mx] = std::minmax_element(r.proportions.begin(), r.proportions.end());
  r.min = *mn;
  r.max = *mx;
  return r;
}

std::string scan_json(const SpectralScanResult& r) {
  json j = {
      {"classes", r.classes},
      {"proportions", r.proportions},
      {"mean", r.mean},
      {"min", r.min},
      {"max", r.max},
  };
  return j.dump(2) + "\n";
}

std::string scan_csv(const SpectralScanResult& r) {
  std::string out = "class,candidate_poison_pct\n";
  char line[64];
  for (size_t i = 0; i < r.classes.size(); ++i) {
    std::snprintf(line, sizeof(line), "%d,%.4f\n", r.classes[i], r.proportions[i]);
    out += line;
  }
  return out;
}

double mad_anomaly_index(const std::vector<double>& norms) {
  require(!norms.empty(), "anomaly index: empty norm vector");
  const double med = median_of(norms);
  const double mn = *std::min_element(norms.begin(), norms.end());
  std::vector<double> dev(norms.size());
  for (size_t i = 0; i < norms.size(); ++i) dev[i] = std::abs(norms[i] - med);
  const double mad = median_of(dev);
  const double num = std::abs(med - mn);
  if (mad == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return num / (1.4826 * mad);
}

CleanseResult neural_cleanse(const ClassifierF& victim, const LabeledDataset& clean_set,
                             const CleanseConfig& cfg) {
  clean_set.validate();
  const int c = victim.num_classes();
  require(c == clean_set.num_classes, "neural cleanse: class count mismatch");
  if (cfg.iters < 1) throw ConfigError("neural cleanse: iters must be >= 1");
  if (!(cfg.lr > 0)) throw ConfigError("neural cleanse: lr must be > 0");
  if (cfg.gamma < 0) throw ConfigError("neural cleanse: gamma must be >= 0");
  if (cfg.max_samples < 1) throw ConfigError("neural cleanse: max_samples must be >= 1");
  if (cfg.restarts < 1) throw ConfigError("neural cleanse: restarts must be >= 1");
  if (cfg.init_scale < 0) throw ConfigError("neural cleanse: init_scale must be >= 0");

  // Same seeded subsample for every class so the norms are comparable.
  std::vector<int> order(clean_set.records.size());
  std::iota(order.begin(), order.end(), 0);
  Rng srng(Rng::derive(cfg.seed, kCleanseSampleTag));
  srng.shuffle(order);
  const int ns = std::min<int>(cfg.max_samples, (int)order.size());
  order.resize(ns);
  std::sort(order.begin(), order.end());

  const int rows = clean_set.points_per_cloud;
  const int total = rows * 3;
  ClassifierF model = victim;  // backward scribbles parameter grads
  auto mparams = model.params();

  CleanseResult res;
  res.norms.resize(c);
  models::ClassifierWork<float> w;
  CloudF xadv(rows, 3), dx(rows, 3);
  Mat<float> dlogits(1, c);
  const float inv = 1.0f / (float)ns;

  for (int t = 0; t < c; ++t) {
    double best_obj = std::numeric_limits<double>::infinity();
    double best_l1 = 0;
    for (int r = 0; r < cfg.restarts; ++r) {
      CloudF delta(rows, 3), grad(rows, 3);
      delta.zero();
      if (r > 0) {
        Rng irng(Rng::derive(cfg.seed, kCleanseInitTag, (uint64_t)t * 1000 + (uint64_t)r));
        for (int i = 0; i < total; ++i)
          delta.data()[i] = (float)(cfg.init_scale * irng.gaussian());
      }
      nn::ParamList<float> dp;
      dp.push_back({"delta", delta.data(), grad.data(), delta.size()});
      nn::AdamOpt<float> opt;
      opt.lr = (float)cfg.lr;

      for (int it = 0; it < cfg.iters; ++it) {
        grad.zero();
        nn::zero_grads(mparams);
        for (int s = 0; s < ns; ++s) {
          const CloudF& x = clean_set.records[order[s]].cloud;
          for (int i = 0; i < total; ++i) xadv.data()[i] = x.data()[i] + delta.data()[i];
          models::forward(model, xadv, w);
          nn::softmax_xent<float>(w.logits(model).data(), c, t, dlogits.data());
          for (int j = 0; j < c; ++j) dlogits.data()[j] *= inv;
          models::backward(model, xadv, w, dlogits, &dx);
          for (int i = 0; i < total; ++i) grad.data()[i] += dx.data()[i];
        }
        const float g = (float)cfg.gamma;
        for (int i = 0; i < total; ++i) {
          const float vi = delta.data()[i];
          if (vi != 0.0f) grad.data()[i] += vi > 0.0f ? g : -g;
        }
        if (!nn::grads_finite(dp))
          throw NumericalError("neural cleanse: diverged at iteration " + std::to_string(it) +
                               " for class " + std::to_string(t));
        opt.step(dp);
      }

      // final objective decides between restart basins
      double l1 = 0;
      for (int i = 0; i < total; ++i) l1 += std::abs((double)delta.data()[i]);
      double ce = 0;
      for (int s = 0; s < ns; ++s) {
        const CloudF& x = clean_set.records[order[s]].cloud;
        for (int i = 0; i < total; ++i) xadv.data()[i] = x.data()[i] + delta.data()[i];
        models::forward(model, xadv, w);
        ce += (double)nn::softmax_xent<float>(w.logits(model).data(), c, t, nullptr);
      }
      const double obj = ce / ns + cfg.gamma * l1;
      if (!(obj < best_obj)) continue;
      best_obj = obj;
      best_l1 = l1;
    }
    res.norms[t] = best_l1;
  }

  res.anomaly_index = mad_anomaly_index(res.norms);
  res.infected = res.anomaly_index > 2.0;
  res.min_class =
      (int)(std::min_element(res.norms.begin(), res.norms.end()) - res.norms.begin());
  return res;
}

std::string cleanse_json(const CleanseResult& r) {
  json j = {
      {"norms", r.norms},
      {"anomaly_index", r.anomaly_index},
      {"infected", r.infected},
      {"min_class", r.min_class},
  };
  return j.dump(2) + "\n";
}

std::string cleanse_csv(const CleanseResult& r) {
  std::string out = "class,l1_norm\n";
  char line[64];
  for (size_t i = 0; i < r.norms.size(); ++i) {
    std::snprintf(line, sizeof(line), "%zu,%.6f\n", i, r.norms[i]);
    out += line;
  }
  return out;
}

}  // namespace morph::defenses
