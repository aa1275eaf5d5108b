#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace morph::kernels {

// Function-pointer table for the float32 hot path. One instance per ISA;
// selected once at startup (cpuid) or forced via force()/MORPH_BACKEND.
//
// Conventions: matrices are dense row-major with lda == cols.
//   gemm_nn: C(m x n) (+)= A(m x k) * B(k x n)
//   gemm_nt: C(m x n) (+)= A(m x k) * B(n x k)^T
//   gemm_tn: C(m x n) (+)= A(k x m)^T * B(k x n)
struct Backend {
  const char* name;

  void (*gemm_nn)(int m, int n, int k, const float* A, const float* B, float* C, bool acc);
  void (*gemm_nt)(int m, int n, int k, const float* A, const float* B, float* C, bool acc);
  void (*gemm_tn)(int m, int n, int k, const float* A, const float* B, float* C, bool acc);

  void (*relu)(float* x, size_t n);
  // y is the post-activation output of the forward pass; zeroes dy where y == 0.
  void (*relu_backward)(const float* y, float* dy, size_t n);
  void (*axpy)(size_t n, float a, const float* x, float* y);

  // Squared distances from query q to n points given as SoA arrays.
  void (*sqdist_row)(float qx, float qy, float qz, const float* px, const float* py,
                     const float* pz, size_t n, float* out);
  // Min squared distance and its index; exact ties resolved to the lower index.
  void (*nn_min)(float qx, float qy, float qz, const float* px, const float* py,
                 const float* pz, size_t n, float* dist, int32_t* idx);

  // Per-column max over rows with the argmax row; ties keep the lower row.
  void (*colmax_argmax)(const float* X, int rows, int cols, float* vals, int32_t* arg);

  // bc1/bc2 are the precomputed 1/(1-beta^t) bias corrections.
  void (*adam_step)(size_t n, float* p, const float* g, float* m, float* v, float lr,
                    float beta1, float beta2, float eps, float bc1, float bc2);
  void (*sgd_momentum_step)(size_t n, float* p, const float* g, float* vel, float lr,
                            float momentum);
};

// Active table. Resolved on first use: best ISA the CPU supports, unless
// overridden by force() or the MORPH_BACKEND environment variable.
const Backend& active();

// Select a backend by name ("scalar", "avx2", "neon", "auto").
// Returns false if the name is unknown or unsupported on this machine.
bool force(const std::string& name);

std::vector<std::string> available();

const Backend* scalar_backend();
const Backend* avx2_backend();  // nullptr when not compiled in or unsupported
const Backend* neon_backend();

}  // namespace morph::kernels
