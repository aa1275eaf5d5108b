#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "morph/common.hpp"
#include "morph/dataset.hpp"
#include "morph/geometry.hpp"
#include "morph/nn.hpp"

namespace morph::models {

// Shared per-point MLP (3-64-128-256), global max-pool, head 256-128-C.
template <class T>
struct PointNetMini {
  nn::Dense<T> l1, l2, l3, h1, h2;
  int num_classes = 0;

  void init(Rng& rng, int c) {
    num_classes = c;
    l1.init(rng, 3, 64);
    l2.init(rng, 64, 128);
    l3.init(rng, 128, 256);
    h1.init(rng, 256, 128);
    h2.init(rng, 128, c, 1.0);
  }

  void params(nn::ParamList<T>& out) {
    l1.params(out, "l1.W", "l1.b");
    l2.params(out, "l2.W", "l2.b");
    l3.params(out, "l3.W", "l3.b");
    h1.params(out, "h1.W", "h1.b");
    h2.params(out, "h2.W", "h2.b");
  }
};

template <class T>
struct PointNetWork {
  Mat<T> a1, a2, a3, pooled, f1, logits;
  std::vector<int32_t> arg;
  Mat<T> d3, d2, d1, dpool, df1;
};

template <class T>
void forward(const PointNetMini<T>& m, const Cloud<T>& x, PointNetWork<T>& w) {
  require(x.cols == 3 && x.rows >= 1, "pointnet forward: cloud must be Nx3");
  m.l1.forward(x, w.a1);
  nn::relu_inplace(w.a1);
  m.l2.forward(w.a1, w.a2);
  nn::relu_inplace(w.a2);
  m.l3.forward(w.a2, w.a3);
  nn::relu_inplace(w.a3);
  nn::global_maxpool(w.a3, w.pooled, w.arg);
  m.h1.forward(w.pooled, w.f1);
  nn::relu_inplace(w.f1);
  m.h2.forward(w.f1, w.logits);
}

// dlogits: 1 x C. Accumulates parameter gradients; fills dx when given.
template <class T>
void backward(PointNetMini<T>& m, const Cloud<T>& x, PointNetWork<T>& w, const Mat<T>& dlogits,
              Cloud<T>* dx = nullptr) {
  m.h2.backward(w.f1, dlogits, &w.df1);
  nn::relu_backward_inplace(w.f1, w.df1);
  m.h1.backward(w.pooled, w.df1, &w.dpool);
  w.d3.resize(w.a3.rows, w.a3.cols);
  nn::global_maxpool_backward(w.dpool, w.arg, w.d3);
  nn::relu_backward_inplace(w.a3, w.d3);
  m.l3.backward(w.a2, w.d3, &w.d2);
  nn::relu_backward_inplace(w.a2, w.d2);
  m.l2.backward(w.a1, w.d2, &w.d1);
  nn::relu_backward_inplace(w.a1, w.d1);
  m.l1.backward(x, w.d1, dx);
}

// Per-point MLP 3-64-128, one k-NN edge aggregation stage (k=8 on input
// coordinates), global max-pool, head 256-128-C.
template <class T>
struct EdgeConvMini {
  nn::Dense<T> l1, l2, le, h1, h2;
  int num_classes = 0;
  int k = 8;

  void init(Rng& rng, int c) {
    num_classes = c;
    l1.init(rng, 3, 64);
    l2.init(rng, 64, 128);
    le.init(rng, 256, 256);
    h1.init(rng, 256, 128);
    h2.init(rng, 128, c, 1.0);
  }

  void params(nn::ParamList<T>& out) {
    l1.params(out, "l1.W", "l1.b");
    l2.params(out, "l2.W", "l2.b");
    le.params(out, "le.W", "le.b");
    h1.params(out, "h1.W", "h1.b");
    h2.params(out, "h2.W", "h2.b");
  }
};

template <class T>
struct EdgeConvWork {
  std::vector<int32_t> nbr;
  int k_eff = 0;
  Mat<T> a1, a2, E, ae, he, pooled, f1, logits;
  std::vector<int32_t> earg, arg;
  Mat<T> dhe, dae, dE, d2, d1, dpool, df1;
};

template <class T>
void forward(const EdgeConvMini<T>& m, const Cloud<T>& x, EdgeConvWork<T>& w) {
  require(x.cols == 3 && x.rows >= 2, "edgeconv forward: need at least two points");
  const int n = x.rows;
  const int k = std::min(m.k, n - 1);
  w.k_eff = k;
  w.nbr = geo::knn_indices(x, k);

  m.l1.forward(x, w.a1);
  nn::relu_inplace(w.a1);
  m.l2.forward(w.a1, w.a2);
  nn::relu_inplace(w.a2);

  const int f = w.a2.cols;
  w.E.resize(n * k, 2 * f);
  for (int i = 0; i < n; ++i) {
    const T* hi = w.a2.row(i);
    for (int t = 0; t < k; ++t) {
      const T* hj = w.a2.row(w.nbr[(size_t)i * k + t]);
      T* e = w.E.row(i * k + t);
      for (int j = 0; j < f; ++j) {
        e[j] = hi[j];
        e[f + j] = hj[j] - hi[j];
      }
    }
  }
  m.le.forward(w.E, w.ae);
  nn::relu_inplace(w.ae);

  // Max over each point's k edge rows; earg keeps the winning E-row.
  const int fe = w.ae.cols;
  w.he.resize(n, fe);
  w.earg.resize((size_t)n * fe);
  for (int i = 0; i < n; ++i) {
    T* o = w.he.row(i);
    int32_t* a = w.earg.data() + (size_t)i * fe;
    const T* first = w.ae.row(i * k);
    for (int j = 0; j < fe; ++j) {
      o[j] = first[j];
      a[j] = i * k;
    }
    for (int t = 1; t < k; ++t) {
      const T* q = w.ae.row(i * k + t);
      for (int j = 0; j < fe; ++j) {
        if (q[j] > o[j]) {
          o[j] = q[j];
          a[j] = i * k + t;
        }
      }
    }
  }

  nn::global_maxpool(w.he, w.pooled, w.arg);
  m.h1.forward(w.pooled, w.f1);
  nn::relu_inplace(w.f1);
  m.h2.forward(w.f1, w.logits);
}

template <class T>
void backward(EdgeConvMini<T>& m, const Cloud<T>& x, EdgeConvWork<T>& w, const Mat<T>& dlogits,
              Cloud<T>* dx = nullptr) {
  const int n = x.rows, k = w.k_eff, f = w.a2.cols;
  m.h2.backward(w.f1, dlogits, &w.df1);
  nn::relu_backward_inplace(w.f1, w.df1);
  m.h1.backward(w.pooled, w.df1, &w.dpool);

  w.dhe.resize(n, w.he.cols);
  nn::global_maxpool_backward(w.dpool, w.arg, w.dhe);

  w.dae.resize(w.ae.rows, w.ae.cols);
  for (int i = 0; i < n; ++i) {
    const T* d = w.dhe.row(i);
    const int32_t* a = w.earg.data() + (size_t)i * w.he.cols;
    for (int j = 0; j < w.he.cols; ++j) w.dae.at(a[j], j) += d[j];
  }
  nn::relu_backward_inplace(w.ae, w.dae);
  m.le.backward(w.E, w.dae, &w.dE);

  w.d2.resize(n, f);
  for (int i = 0; i < n; ++i) {
    T* gi = w.d2.row(i);
    for (int t = 0; t < k; ++t) {
      const T* de = w.dE.row(i * k + t);
      T* gj = w.d2.row(w.nbr[(size_t)i * k + t]);
      for (int j = 0; j < f; ++j) {
        gi[j] += de[j] - de[f + j];
        gj[j] += de[f + j];
      }
    }
  }
  nn::relu_backward_inplace(w.a2, w.d2);
  m.l2.backward(w.a1, w.d2, &w.d1);
  nn::relu_backward_inplace(w.a1, w.d1);
  m.l1.backward(x, w.d1, dx);
}

// Tagged wrapper so training, evaluation, and checkpoints handle both
// architectures uniformly.
template <class T>
struct Classifier {
  std::string arch = "pointnet_mini";
  PointNetMini<T> pn;
  EdgeConvMini<T> ec;

  void init(Rng& rng, int c) {
    if (arch == "pointnet_mini")
      pn.init(rng, c);
    else if (arch == "edgeconv_mini")
      ec.init(rng, c);
    else
      throw ConfigError("unknown architecture: " + arch);
  }

  int num_classes() const { return arch == "pointnet_mini" ? pn.num_classes : ec.num_classes; }

  nn::ParamList<T> params() {
    nn::ParamList<T> out;
    if (arch == "pointnet_mini")
      pn.params(out);
    else
      ec.params(out);
    return out;
  }
};

template <class T>
struct ClassifierWork {
  PointNetWork<T> pn;
  EdgeConvWork<T> ec;

  const Mat<T>& logits(const Classifier<T>& m) const {
    return m.arch == "pointnet_mini" ? pn.logits : ec.logits;
  }
  // Penultimate activation (1 x 128), the feature the spectral scan uses.
  const Mat<T>& penultimate(const Classifier<T>& m) const {
    return m.arch == "pointnet_mini" ? pn.f1 : ec.f1;
  }
};

template <class T>
void forward(const Classifier<T>& m, const Cloud<T>& x, ClassifierWork<T>& w) {
  if (m.arch == "pointnet_mini")
    forward(m.pn, x, w.pn);
  else
    forward(m.ec, x, w.ec);
}

template <class T>
void backward(Classifier<T>& m, const Cloud<T>& x, ClassifierWork<T>& w, const Mat<T>& dlogits,
              Cloud<T>* dx = nullptr) {
  if (m.arch == "pointnet_mini")
    backward(m.pn, x, w.pn, dlogits, dx);
  else
    backward(m.ec, x, w.ec, dlogits, dx);
}

// Batch forward: one row of logits per cloud.
template <class T>
Mat<T> classifier_forward(const Classifier<T>& m, const std::vector<Cloud<T>>& batch) {
  Mat<T> out((int)batch.size(), m.num_classes());
  ClassifierWork<T> w;
  for (size_t i = 0; i < batch.size(); ++i) {
    forward(m, batch[i], w);
    const Mat<T>& lg = w.logits(m);
    std::copy(lg.data(), lg.data() + lg.size(), out.row((int)i));
  }
  return out;
}

using ClassifierF = Classifier<float>;

struct TrainConfig {
  std::string arch = "pointnet_mini";
  std::string optimizer = "sgd";  // sgd | adam
  double lr = 0.1;
  double momentum = 0.9;
  int batch_size = 32;
  int epochs = 60;
  uint64_t seed = 1;
  bool augment_rotate = false;
  bool augment_jitter = false;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  ClassifierF model;
  std::vector<EpochStats> history;
};

// Mini-batch training with the configured optimizer; lr decays by 10x at
// 2/3 and 5/6 of the epoch budget. Deterministic for a fixed config.
TrainResult train_classifier(const LabeledDataset& data, const TrainConfig& cfg);

double accuracy(const ClassifierF& model, const LabeledDataset& data);
std::vector<double> per_class_accuracy(const ClassifierF& model, const LabeledDataset& data);

// Checkpoint directory: meta.json plus params.f32 (flat little-endian floats
// in parameter-list order).
void save_classifier(const ClassifierF& model, const std::string& dir, uint64_t seed,
                     int epoch);
ClassifierF load_classifier(const std::string& dir);

}  // namespace morph::models
