#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>

// Reference kernels, templated on the scalar type. The float instantiation
// backs the "scalar" runtime backend and is the ground truth the SIMD
// variants are equivalence-tested against. The double instantiation is used
// by test oracles and gradient checks.

namespace morph::kernels::scalar_impl {

template <class T>
void gemm_nn(int m, int n, int k, const T* A, const T* B, T* C, bool acc) {
  for (int i = 0; i < m; ++i) {
    T* c = C + static_cast<size_t>(i) * n;
    if (!acc)
      for (int j = 0; j < n; ++j) c[j] = T(0);
    const T* a = A + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const T ap = a[p];
      const T* b = B + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += ap * b[j];
    }
  }
}

template <class T>
void gemm_nt(int m, int n, int k, const T* A, const T* B, T* C, bool acc) {
  for (int i = 0; i < m; ++i) {
    const T* a = A + static_cast<size_t>(i) * k;
    T* c = C + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* b = B + static_cast<size_t>(j) * k;
      T s = T(0);
      for (int p = 0; p < k; ++p) s += a[p] * b[p];
      c[j] = acc ? c[j] + s : s;
    }
  }
}

template <class T>
void gemm_tn(int m, int n, int k, const T* A, const T* B, T* C, bool acc) {
  if (!acc) {
    for (size_t i = 0; i < static_cast<size_t>(m) * n; ++i) C[i] = T(0);
  }
  for (int p = 0; p < k; ++p) {
    const T* a = A + static_cast<size_t>(p) * m;
    const T* b = B + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const T ai = a[i];
      T* c = C + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) c[j] += ai * b[j];
    }
  }
}

template <class T>
void relu(T* x, size_t n) {
  for (size_t i = 0; i < n; ++i) x[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void relu_backward(const T* y, T* dy, size_t n) {
  for (size_t i = 0; i < n; ++i)
    if (y[i] <= T(0)) dy[i] = T(0);
}

template <class T>
void axpy(size_t n, T a, const T* x, T* y) {
  for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <class T>
void sqdist_row(T qx, T qy, T qz, const T* px, const T* py, const T* pz, size_t n, T* out) {
  for (size_t i = 0; i < n; ++i) {
    const T dx = qx - px[i];
    const T dy = qy - py[i];
    const T dz = qz - pz[i];
    out[i] = dx * dx + dy * dy + dz * dz;
  }
}

template <class T>
void nn_min(T qx, T qy, T qz, const T* px, const T* py, const T* pz, size_t n, T* dist,
            int32_t* idx) {
  T best = std::numeric_limits<T>::max();
  int32_t best_i = -1;
  for (size_t i = 0; i < n; ++i) {
    const T dx = qx - px[i];
    const T dy = qy - py[i];
    const T dz = qz - pz[i];
    const T d = dx * dx + dy * dy + dz * dz;
    if (d < best) {
      best = d;
      best_i = static_cast<int32_t>(i);
    }
  }
  *dist = best;
  *idx = best_i;
}

template <class T>
void colmax_argmax(const T* X, int rows, int cols, T* vals, int32_t* arg) {
  for (int j = 0; j < cols; ++j) {
    vals[j] = X[j];
    arg[j] = 0;
  }
  for (int r = 1; r < rows; ++r) {
    const T* x = X + static_cast<size_t>(r) * cols;
    for (int j = 0; j < cols; ++j) {
      if (x[j] > vals[j]) {
        vals[j] = x[j];
        arg[j] = r;
      }
    }
  }
}

template <class T>
void adam_step(size_t n, T* p, const T* g, T* m, T* v, T lr, T beta1, T beta2, T eps, T bc1,
               T bc2) {
  for (size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
    v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
    const T mhat = m[i] * bc1;
    const T vhat = v[i] * bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template <class T>
void sgd_momentum_step(size_t n, T* p, const T* g, T* vel, T lr, T momentum) {
  for (size_t i = 0; i < n; ++i) {
    vel[i] = momentum * vel[i] + g[i];
    p[i] -= lr * vel[i];
  }
}

}  // namespace morph::kernels::scalar_impl
