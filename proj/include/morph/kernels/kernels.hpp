#pragma once

#include "morph/kernels/backend.hpp"
#include "morph/kernels/scalar_impl.hpp"

// Typed entry points used by the rest of the library. float routes through
// the runtime-dispatched backend; every other scalar type runs the reference
// implementation directly.

namespace morph::kernels {

template <class T>
void gemm_nn(int m, int n, int k, const T* A, const T* B, T* C, bool acc = false) {
  scalar_impl::gemm_nn(m, n, k, A, B, C, acc);
}
template <>
inline void gemm_nn<float>(int m, int n, int k, const float* A, const float* B, float* C,
                           bool acc) {
  active().gemm_nn(m, n, k, A, B, C, acc);
}

template <class T>
void gemm_nt(int m, int n, int k, const T* A, const T* B, T* C, bool acc = false) {
  scalar_impl::gemm_nt(m, n, k, A, B, C, acc);
}
template <>
inline void gemm_nt<float>(int m, int n, int k, const float* A, const float* B, float* C,
                           bool acc) {
  active().gemm_nt(m, n, k, A, B, C, acc);
}

template <class T>
void gemm_tn(int m, int n, int k, const T* A, const T* B, T* C, bool acc = false) {
  scalar_impl::gemm_tn(m, n, k, A, B, C, acc);
}
template <>
inline void gemm_tn<float>(int m, int n, int k, const float* A, const float* B, float* C,
                           bool acc) {
  active().gemm_tn(m, n, k, A, B, C, acc);
}

template <class T>
void relu(T* x, size_t n) {
  scalar_impl::relu(x, n);
}
template <>
inline void relu<float>(float* x, size_t n) {
  active().relu(x, n);
}

template <class T>
void relu_backward(const T* y, T* dy, size_t n) {
  scalar_impl::relu_backward(y, dy, n);
}
template <>
inline void relu_backward<float>(const float* y, float* dy, size_t n) {
  active().relu_backward(y, dy, n);
}

template <class T>
void axpy(size_t n, T a, const T* x, T* y) {
  scalar_impl::axpy(n, a, x, y);
}
template <>
inline void axpy<float>(size_t n, float a, const float* x, float* y) {
  active().axpy(n, a, x, y);
}

template <class T>
void sqdist_row(T qx, T qy, T qz, const T* px, const T* py, const T* pz, size_t n, T* out) {
  scalar_impl::sqdist_row(qx, qy, qz, px, py, pz, n, out);
}
template <>
inline void sqdist_row<float>(float qx, float qy, float qz, const float* px, const float* py,
                              const float* pz, size_t n, float* out) {
  active().sqdist_row(qx, qy, qz, px, py, pz, n, out);
}

template <class T>
void nn_min(T qx, T qy, T qz, const T* px, const T* py, const T* pz, size_t n, T* dist,
            int32_t* idx) {
  scalar_impl::nn_min(qx, qy, qz, px, py, pz, n, dist, idx);
}
template <>
inline void nn_min<float>(float qx, float qy, float qz, const float* px, const float* py,
                          const float* pz, size_t n, float* dist, int32_t* idx) {
  active().nn_min(qx, qy, qz, px, py, pz, n, dist, idx);
}

template <class T>
void colmax_argmax(const T* X, int rows, int cols, T* vals, int32_t* arg) {
  scalar_impl::colmax_argmax(X, rows, cols, vals, arg);
}
template <>
inline void colmax_argmax<float>(const float* X, int rows, int cols, float* vals, int32_t* arg) {
  active().colmax_argmax(X, rows, cols, vals, arg);
}

template <class T>
void adam_step(size_t n, T* p, const T* g, T* m, T* v, T lr, T beta1, T beta2, T eps, T bc1,
               T bc2) {
  scalar_impl::adam_step(n, p, g, m, v, lr, beta1, beta2, eps, bc1, bc2);
}
template <>
inline void adam_step<float>(size_t n, float* p, const float* g, float* m, float* v, float lr,
                             float beta1, float beta2, float eps, float bc1, float bc2) {
  active().adam_step(n, p, g, m, v, lr, beta1, beta2, eps, bc1, bc2);
}

template <class T>
void sgd_momentum_step(size_t n, T* p, const T* g, T* vel, T lr, T momentum) {
  scalar_impl::sgd_momentum_step(n, p, g, vel, lr, momentum);
}
template <>
inline void sgd_momentum_step<float>(size_t n, float* p, const float* g, float* vel, float lr,
                                     float momentum) {
  active().sgd_momentum_step(n, p, g, vel, lr, momentum);
}

}  // namespace morph::kernels
