#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "morph/common.hpp"
#include "morph/kernels/kernels.hpp"
#include "morph/rng.hpp"

namespace morph::nn {

// Flat view of a parameter tensor and its gradient, gathered from a model so
// optimizers and checkpoints can treat all architectures uniformly.
template <class T>
struct ParamSlot {
  std::string name;
  T* p;
  T* g;
  size_t n;
};

template <class T>
using ParamList = std::vector<ParamSlot<T>>;

// Fully connected layer, Y = X W + b, row-major activations (rows = items).
template <class T>
struct Dense {
  Mat<T> W, b, gW, gb;

  int fin() const { return W.rows; }
  int fout() const { return W.cols; }

  // gain 2 gives He initialization for ReLU layers, gain 1 suits linear output.
  void init(Rng& rng, int fin_, int fout_, double gain = 2.0) {
    W.resize(fin_, fout_);
    b.resize(1, fout_);
    gW.resize(fin_, fout_);
    gb.resize(1, fout_);
    const double sigma = std::sqrt(gain / fin_);
    for (auto& w : W.v) w = static_cast<T>(sigma * rng.gaussian());
  }

  void forward(const Mat<T>& X, Mat<T>& Y) const {
    Y.resize(X.rows, fout());
    kernels::gemm_nn<T>(X.rows, fout(), fin(), X.data(), W.data(), Y.data(), false);
    for (int i = 0; i < Y.rows; ++i) kernels::axpy<T>(fout(), T(1), b.data(), Y.row(i));
  }

  // Accumulates gW/gb; writes dX (overwriting) when given.
  void backward(const Mat<T>& X, const Mat<T>& dY, Mat<T>* dX) {
    kernels::gemm_tn<T>(fin(), fout(), X.rows, X.data(), dY.data(), gW.data(), true);
    for (int i = 0; i < dY.rows; ++i) kernels::axpy<T>(fout(), T(1), dY.row(i), gb.data());
    if (dX) {
      dX->resize(X.rows, fin());
      kernels::gemm_nt<T>(X.rows, fin(), fout(), dY.data(), W.data(), dX->data(), false);
    }
  }

  void zero_grad() {
    gW.zero();
    gb.zero();
  }

  void params(ParamList<T>& out, const char* wname, const char* bname) {
    out.push_back({wname, W.data(), gW.data(), W.size()});
    out.push_back({bname, b.data(), gb.data(), b.size()});
  }
};

template <class T>
void relu_inplace(Mat<T>& x) {
  kernels::relu<T>(x.data(), x.size());
}

// y is the forward output (post-ReLU); dy is masked in place.
template <class T>
void relu_backward_inplace(const Mat<T>& y, Mat<T>& dy) {
  kernels::relu_backward<T>(y.data(), dy.data(), dy.size());
}

// Column-wise max over all rows; arg records the winning row per feature.
template <class T>
void global_maxpool(const Mat<T>& X, Mat<T>& out, std::vector<int32_t>& arg) {
  out.resize(1, X.cols);
  arg.resize(X.cols);
  kernels::colmax_argmax<T>(X.data(), X.rows, X.cols, out.data(), arg.data());
}

template <class T>
void global_maxpool_backward(const Mat<T>& dout, const std::vector<int32_t>& arg, Mat<T>& dX) {
  for (int j = 0; j < dout.cols; ++j) dX.at(arg[j], j) += dout.at(0, j);
}

// Per-point max over the point itself and its k listed neighbors. arg stores
// the winning source row for each (point, feature).
template <class T>
void graph_maxpool(const Mat<T>& X, const std::vector<int32_t>& nbr, int k, Mat<T>& out,
                   std::vector<int32_t>& arg) {
  const int n = X.rows, f = X.cols;
  out.resize(n, f);
  arg.resize((size_t)n * f);
  for (int i = 0; i < n; ++i) {
    const T* self = X.row(i);
    T* o = out.row(i);
    int32_t* a = arg.data() + (size_t)i * f;
    for (int j = 0; j < f; ++j) {
      o[j] = self[j];
      a[j] = i;
    }
    for (int t = 0; t < k; ++t) {
      const int32_t src = nbr[(size_t)i * k + t];
      const T* q = X.row(src);
      for (int j = 0; j < f; ++j) {
        if (q[j] > o[j]) {
          o[j] = q[j];
          a[j] = src;
        }
      }
    }
  }
}

template <class T>
void graph_maxpool_backward(const Mat<T>& dout, const std::vector<int32_t>& arg, Mat<T>& dX) {
  const int f = dout.cols;
  for (int i = 0; i < dout.rows; ++i) {
    const T* d = dout.row(i);
    const int32_t* a = arg.data() + (size_t)i * f;
    for (int j = 0; j < f; ++j) dX.at(a[j], j) += d[j];
  }
}

template <class T>
void softmax(const T* logits, int c, T* probs) {
  T mx = logits[0];
  for (int i = 1; i < c; ++i) mx = std::max(mx, logits[i]);
  T sum = T(0);
  for (int i = 0; i < c; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (int i = 0; i < c; ++i) probs[i] /= sum;
}

// Returns -log p[label]; when dlogits is given it is overwritten with the
// gradient (softmax minus one-hot).
template <class T>
T softmax_xent(const T* logits, int c, int label, T* dlogits = nullptr) {
  require(label >= 0 && label < c, "softmax_xent: label out of range");
  std::vector<T> probs(c);
  softmax(logits, c, probs.data());
  const T p = std::max(probs[label], std::numeric_limits<T>::min());
  if (dlogits) {
    for (int i = 0; i < c; ++i) dlogits[i] = probs[i];
    dlogits[label] -= T(1);
  }
  return -std::log(p);
}

template <class T>
struct AdamOpt {
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  int64_t t = 0;

  void step(const ParamList<T>& params) {
    if (m_.empty()) {
      for (const auto& s : params) {
        m_.emplace_back(s.n, T(0));
        v_.emplace_back(s.n, T(0));
      }
    }
    require(m_.size() == params.size(), "AdamOpt: parameter list changed shape");
    ++t;
    const T bc1 = T(1) / (T(1) - std::pow(beta1, T(t)));
    const T bc2 = T(1) / (T(1) - std::pow(beta2, T(t)));
    for (size_t i = 0; i < params.size(); ++i) {
      const auto& s = params[i];
      kernels::adam_step<T>(s.n, s.p, s.g, m_[i].data(), v_[i].data(), lr, beta1, beta2, eps,
                            bc1, bc2);
    }
  }

private:
  std::vector<std::vector<T>> m_, v_;
};

template <class T>
struct SgdOpt {
  T lr = T(0.1);
  T momentum = T(0.9);

  void step(const ParamList<T>& params) {
    if (vel_.empty())
      for (const auto& s : params) vel_.emplace_back(s.n, T(0));
    require(vel_.size() == params.size(), "SgdOpt: parameter list changed shape");
    for (size_t i = 0; i < params.size(); ++i) {
      const auto& s = params[i];
      kernels::sgd_momentum_step<T>(s.n, s.p, s.g, vel_[i].data(), lr, momentum);
    }
  }

private:
  std::vector<std::vector<T>> vel_;
};

template <class T>
void zero_grads(const ParamList<T>& params) {
  for (const auto& s : params) std::fill(s.g, s.g + s.n, T(0));
}

template <class T>
void scale_grads(const ParamList<T>& params, T scale) {
  for (const auto& s : params)
    for (size_t i = 0; i < s.n; ++i) s.g[i] *= scale;
}

template <class T>
bool grads_finite(const ParamList<T>& params) {
  for (const auto& s : params)
    if (!all_finite(s.g, s.n)) return false;
  return true;
}

}  // namespace morph::nn
