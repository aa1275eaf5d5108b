#include "morph/kernels/backend.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <cfloat>
#include <cmath>

namespace morph::kernels {
namespace {

inline float hsum8(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
  lo = _mm_add_ss(lo, _mm_shuffle_ps(lo, lo, 1));
  return _mm_cvtss_f32(lo);
}

// 4x16 register-blocked panels; row and column tails fall back to plain loops.
void gemm_nn(int m, int n, int k, const float* A, const float* B, float* C, bool acc) {
  const int n16 = n & ~15;
  for (int j = 0; j < n16; j += 16) {
    int i = 0;
    for (; i + 4 <= m; i += 4) {
      __m256 c00, c01, c10, c11, c20, c21, c30, c31;
      if (acc) {
        c00 = _mm256_loadu_ps(C + (size_t)(i + 0) * n + j);
        c01 = _mm256_loadu_ps(C + (size_t)(i + 0) * n + j + 8);
        c10 = _mm256_loadu_ps(C + (size_t)(i + 1) * n + j);
        c11 = _mm256_loadu_ps(C + (size_t)(i + 1) * n + j + 8);
        c20 = _mm256_loadu_ps(C + (size_t)(i + 2) * n + j);
        c21 = _mm256_loadu_ps(C + (size_t)(i + 2) * n + j + 8);
        c30 = _mm256_loadu_ps(C + (size_t)(i + 3) * n + j);
        c31 = _mm256_loadu_ps(C + (size_t)(i + 3) * n + j + 8);
      } else {
        c00 = c01 = c10 = c11 = c20 = c21 = c30 = c31 = _mm256_setzero_ps();
      }
      for (int p = 0; p < k; ++p) {
        const __m256 b0 = _mm256_loadu_ps(B + (size_t)p * n + j);
        const __m256 b1 = _mm256_loadu_ps(B + (size_t)p * n + j + 8);
        __m256 a;
        a = _mm256_broadcast_ss(A + (size_t)(i + 0) * k + p);
        c00 = _mm256_fmadd_ps(a, b0, c00);
        c01 = _mm256_fmadd_ps(a, b1, c01);
        a = _mm256_broadcast_ss(A + (size_t)(i + 1) * k + p);
        c10 = _mm256_fmadd_ps(a, b0, c10);
        c11 = _mm256_fmadd_ps(a, b1, c11);
        a = _mm256_broadcast_ss(A + (size_t)(i + 2) * k + p);
        c20 = _mm256_fmadd_ps(a, b0, c20);
        c21 = _mm256_fmadd_ps(a, b1, c21);
        a = _mm256_broadcast_ss(A + (size_t)(i + 3) * k + p);
        c30 = _mm256_fmadd_ps(a, b0, c30);
        c31 = _mm256_fmadd_ps(a, b1, c31);
      }
      _mm256_storeu_ps(C + (size_t)(i + 0) * n + j, c00);
      _mm256_storeu_ps(C + (size_t)(i + 0) * n + j + 8, c01);
      _mm256_storeu_ps(C + (size_t)(i + 1) * n + j, c10);
      _mm256_storeu_ps(C + (size_t)(i + 1) * n + j + 8, c11);
      _mm256_storeu_ps(C + (size_t)(i + 2) * n + j, c20);
      _mm256_storeu_ps(C + (size_t)(i + 2) * n + j + 8, c21);
      _mm256_storeu_ps(C + (size_t)(i + 3) * n + j, c30);
      _mm256_storeu_ps(C + (size_t)(i + 3) * n + j + 8, c31);
    }
    for (; i < m; ++i) {
      __m256 c0, c1;
      if (acc) {
        c0 = _mm256_loadu_ps(C + (size_t)i * n + j);
        c1 = _mm256_loadu_ps(C + (size_t)i * n + j + 8);
      } else {
        c0 = c1 = _mm256_setzero_ps();
      }
      for (int p = 0; p < k; ++p) {
        const __m256 a = _mm256_broadcast_ss(A + (size_t)i * k + p);
        c0 = _mm256_fmadd_ps(a, _mm256_loadu_ps(B + (size_t)p * n + j), c0);
        c1 = _mm256_fmadd_ps(a, _mm256_loadu_ps(B + (size_t)p * n + j + 8), c1);
      }
      _mm256_storeu_ps(C + (size_t)i * n + j, c0);
      _mm256_storeu_ps(C + (size_t)i * n + j + 8, c1);
    }
  }
  if (n16 < n) {
    for (int i = 0; i < m; ++i) {
      float* c = C + (size_t)i * n;
      if (!acc)
        for (int j = n16; j < n; ++j) c[j] = 0.0f;
      const float* a = A + (size_t)i * k;
      for (int p = 0; p < k; ++p) {
        const float ap = a[p];
        const float* b = B + (size_t)p * n;
        for (int j = n16; j < n; ++j) c[j] += ap * b[j];
      }
    }
  }
}

void gemm_nt(int m, int n, int k, const float* A, const float* B, float* C, bool acc) {
  const int k8 = k & ~7;
  for (int i = 0; i < m; ++i) {
    const float* a = A + (size_t)i * k;
    float* c = C + (size_t)i * n;
    int j = 0;
    for (; j + 4 <= n; j += 4) {
      __m256 s0 = _mm256_setzero_ps();
      __m256 s1 = _mm256_setzero_ps();
      __m256 s2 = _mm256_setzero_ps();
      __m256 s3 = _mm256_setzero_ps();
      const float* b0 = B + (size_t)(j + 0) * k;
      const float* b1 = B + (size_t)(j + 1) * k;
      const float* b2 = B + (size_t)(j + 2) * k;
      const float* b3 = B + (size_t)(j + 3) * k;
      for (int p = 0; p < k8; p += 8) {
        const __m256 va = _mm256_loadu_ps(a + p);
        s0 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b0 + p), s0);
        s1 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b1 + p), s1);
        s2 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b2 + p), s2);
        s3 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b3 + p), s3);
      }
      float r0 = hsum8(s0), r1 = hsum8(s1), r2 = hsum8(s2), r3 = hsum8(s3);
      for (int p = k8; p < k; ++p) {
        const float ap = a[p];
        r0 += ap * b0[p];
        r1 += ap * b1[p];
        r2 += ap * b2[p];
        r3 += ap * b3[p];
      }
      if (acc) {
        c[j + 0] += r0;
        c[j + 1] += r1;
        c[j + 2] += r2;
        c[j + 3] += r3;
      } else {
        c[j + 0] = r0;
        c[j + 1] = r1;
        c[j + 2] = r2;
        c[j + 3] = r3;
      }
    }
    for (; j < n; ++j) {
      const float* b = B + (size_t)j * k;
      __m256 s = _mm256_setzero_ps();
      for (int p = 0; p < k8; p += 8)
        s = _mm256_fmadd_ps(_mm256_loadu_ps(a + p), _mm256_loadu_ps(b + p), s);
      float r = hsum8(s);
      for (int p = k8; p < k; ++p) r += a[p] * b[p];
      c[j] = acc ? c[j] + r : r;
    }
  }
}

void gemm_tn(int m, int n, int k, const float* A, const float* B, float* C, bool acc) {
  const int n16 = n & ~15;
  for (int j = 0; j < n16; j += 16) {
    int i = 0;
    for (; i + 4 <= m; i += 4) {
      __m256 c00, c01, c10, c11, c20, c21, c30, c31;
      if (acc) {
        c00 = _mm256_loadu_ps(C + (size_t)(i + 0) * n + j);
        c01 = _mm256_loadu_ps(C + (size_t)(i + 0) * n + j + 8);
        c10 = _mm256_loadu_ps(C + (size_t)(i + 1) * n + j);
        c11 = _mm256_loadu_ps(C + (size_t)(i + 1) * n + j + 8);
        c20 = _mm256_loadu_ps(C + (size_t)(i + 2) * n + j);
        c21 = _mm256_loadu_ps(C + (size_t)(i + 2) * n + j + 8);
        c30 = _mm256_loadu_ps(C + (size_t)(i + 3) * n + j);
        c31 = _mm256_loadu_ps(C + (size_t)(i + 3) * n + j + 8);
      } else {
        c00 = c01 = c10 = c11 = c20 = c21 = c30 = c31 = _mm256_setzero_ps();
      }
      for (int p = 0; p < k; ++p) {
        const __m256 b0 = _mm256_loadu_ps(B + (size_t)p * n + j);
        const __m256 b1 = _mm256_loadu_ps(B + (size_t)p * n + j + 8);
        const float* arow = A + (size_t)p * m + i;
        __m256 a;
        a = _mm256_broadcast_ss(arow + 0);
        c00 = _mm256_fmadd_ps(a, b0, c00);
        c01 = _mm256_fmadd_ps(a, b1, c01);
        a = _mm256_broadcast_ss(arow + 1);
        c10 = _mm256_fmadd_ps(a, b0, c10);
        c11 = _mm256_fmadd_ps(a, b1, c11);
        a = _mm256_broadcast_ss(arow + 2);
        c20 = _mm256_fmadd_ps(a, b0, c20);
        c21 = _mm256_fmadd_ps(a, b1, c21);
        a = _mm256_broadcast_ss(arow + 3);
        c30 = _mm256_fmadd_ps(a, b0, c30);
        c31 = _mm256_fmadd_ps(a, b1, c31);
      }
      _mm256_storeu_ps(C + (size_t)(i + 0) * n + j, c00);
      _mm256_storeu_ps(C + (size_t)(i + 0) * n + j + 8, c01);
      _mm256_storeu_ps(C + (size_t)(i + 1) * n + j, c10);
      _mm256_storeu_ps(C + (size_t)(i + 1) * n + j + 8, c11);
      _mm256_storeu_ps(C + (size_t)(i + 2) * n + j, c20);
      _mm256_storeu_ps(C + (size_t)(i + 2) * n + j + 8, c21);
      _mm256_storeu_ps(C + (size_t)(i + 3) * n + j, c30);
      _mm256_storeu_ps(C + (size_t)(i + 3) * n + j + 8, c31);
    }
    for (; i < m; ++i) {
      __m256 c0, c1;
      if (acc) {
        c0 = _mm256_loadu_ps(C + (size_t)i * n + j);
        c1 = _mm256_loadu_ps(C + (size_t)i * n + j + 8);
      } else {
        c0 = c1 = _mm256_setzero_ps();
      }
      for (int p = 0; p < k; ++p) {
        const __m256 a = _mm256_broadcast_ss(A + (size_t)p * m + i);
        c0 = _mm256_fmadd_ps(a, _mm256_loadu_ps(B + (size_t)p * n + j), c0);
        c1 = _mm256_fmadd_ps(a, _mm256_loadu_ps(B + (size_t)p * n + j + 8), c1);
      }
      _mm256_storeu_ps(C + (size_t)i * n + j, c0);
      _mm256_storeu_ps(C + (size_t)i * n + j + 8, c1);
    }
  }
  if (n16 < n) {
    if (!acc) {
      for (int i = 0; i < m; ++i)
        for (int j = n16; j < n; ++j) C[(size_t)i * n + j] = 0.0f;
    }
    for (int p = 0; p < k; ++p) {
      const float* a = A + (size_t)p * m;
      const float* b = B + (size_t)p * n;
      for (int i = 0; i < m; ++i) {
        const float ai = a[i];
        float* c = C + (size_t)i * n;
        for (int j = n16; j < n; ++j) c[j] += ai * b[j];
      }
    }
  }
}

void relu(float* x, size_t n) {
  const __m256 z = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(x + i, _mm256_max_ps(_mm256_loadu_ps(x + i), z));
  for (; i < n; ++i) x[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward(const float* y, float* dy, size_t n) {
  const __m256 z = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(y + i), z, _CMP_GT_OQ);
    _mm256_storeu_ps(dy + i, _mm256_and_ps(_mm256_loadu_ps(dy + i), mask));
  }
  for (; i < n; ++i)
    if (y[i] <= 0.0f) dy[i] = 0.0f;
}

void axpy(size_t n, float a, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(a);
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i,
                     _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

void sqdist_row(float qx, float qy, float qz, const float* px, const float* py, const float* pz,
                size_t n, float* out) {
  const __m256 vqx = _mm256_set1_ps(qx);
  const __m256 vqy = _mm256_set1_ps(qy);
  const __m256 vqz = _mm256_set1_ps(qz);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 dx = _mm256_sub_ps(vqx, _mm256_loadu_ps(px + i));
    const __m256 dy = _mm256_sub_ps(vqy, _mm256_loadu_ps(py + i));
    const __m256 dz = _mm256_sub_ps(vqz, _mm256_loadu_ps(pz + i));
    const __m256 d =
        _mm256_fmadd_ps(dz, dz, _mm256_fmadd_ps(dy, dy, _mm256_mul_ps(dx, dx)));
    _mm256_storeu_ps(out + i, d);
  }
  for (; i < n; ++i) {
    const float dx = qx - px[i];
    const float dy = qy - py[i];
    const float dz = qz - pz[i];
    out[i] = dx * dx + dy * dy + dz * dz;
  }
}

void nn_min(float qx, float qy, float qz, const float* px, const float* py, const float* pz,
            size_t n, float* dist, int32_t* idx) {
  float best = FLT_MAX;
  int32_t best_i = -1;
  size_t i = 0;
  if (n >= 8) {
    const __m256 vqx = _mm256_set1_ps(qx);
    const __m256 vqy = _mm256_set1_ps(qy);
    const __m256 vqz = _mm256_set1_ps(qz);
    __m256 vbest = _mm256_set1_ps(FLT_MAX);
    __m256i vbesti = _mm256_set1_epi32(0);
    __m256i vidx = _mm256_setr_epi32(0, 1, 2, 3, 4, 5, 6, 7);
    const __m256i vinc = _mm256_set1_epi32(8);
    for (; i + 8 <= n; i += 8) {
      const __m256 dx = _mm256_sub_ps(vqx, _mm256_loadu_ps(px + i));
      const __m256 dy = _mm256_sub_ps(vqy, _mm256_loadu_ps(py + i));
      const __m256 dz = _mm256_sub_ps(vqz, _mm256_loadu_ps(pz + i));
      const __m256 d =
          _mm256_fmadd_ps(dz, dz, _mm256_fmadd_ps(dy, dy, _mm256_mul_ps(dx, dx)));
      const __m256 lt = _mm256_cmp_ps(d, vbest, _CMP_LT_OQ);
      vbest = _mm256_blendv_ps(vbest, d, lt);
      vbesti = _mm256_blendv_epi8(vbesti, vidx, _mm256_castps_si256(lt));
      vidx = _mm256_add_epi32(vidx, vinc);
    }
    alignas(32) float bd[8];
    alignas(32) int32_t bi[8];
    _mm256_store_ps(bd, vbest);
    _mm256_store_si256(reinterpret_cast<__m256i*>(bi), vbesti);
    for (int lane = 0; lane < 8; ++lane) {
      if (bd[lane] < best || (bd[lane] == best && bi[lane] < best_i)) {
        best = bd[lane];
        best_i = bi[lane];
      }
    }
  }
  for (; i < n; ++i) {
    const float dx = qx - px[i];
    const float dy = qy - py[i];
    const float dz = qz - pz[i];
    const float d = dx * dx + dy * dy + dz * dz;
    if (d < best) {
      best = d;
      best_i = static_cast<int32_t>(i);
    }
  }
  *dist = best;
  *idx = best_i;
}

void colmax_argmax(const float* X, int rows, int cols, float* vals, int32_t* arg) {
  const int c8 = cols & ~7;
  for (int j = 0; j < c8; j += 8) {
    __m256 vvals = _mm256_loadu_ps(X + j);
    __m256i varg = _mm256_setzero_si256();
    for (int r = 1; r < rows; ++r) {
      const __m256 vx = _mm256_loadu_ps(X + (size_t)r * cols + j);
      const __m256 gt = _mm256_cmp_ps(vx, vvals, _CMP_GT_OQ);
      vvals = _mm256_blendv_ps(vvals, vx, gt);
      varg = _mm256_blendv_epi8(varg, _mm256_set1_epi32(r), _mm256_castps_si256(gt));
    }
    _mm256_storeu_ps(vals + j, vvals);
    _mm256_storeu_si256(reinterpret_cast<__m256i*>(arg + j), varg);
  }
  for (int j = c8; j < cols; ++j) {
    vals[j] = X[j];
    arg[j] = 0;
    for (int r = 1; r < rows; ++r) {
      const float x = X[(size_t)r * cols + j];
      if (x > vals[j]) {
        vals[j] = x;
        arg[j] = r;
      }
    }
  }
}

void adam_step(size_t n, float* p, const float* g, float* m, float* v, float lr, float beta1,
               float beta2, float eps, float bc1, float bc2) {
  const __m256 vb1 = _mm256_set1_ps(beta1);
  const __m256 vb2 = _mm256_set1_ps(beta2);
  const __m256 vo1 = _mm256_set1_ps(1.0f - beta1);
  const __m256 vo2 = _mm256_set1_ps(1.0f - beta2);
  const __m256 vlr = _mm256_set1_ps(lr);
  const __m256 veps = _mm256_set1_ps(eps);
  const __m256 vbc1 = _mm256_set1_ps(bc1);
  const __m256 vbc2 = _mm256_set1_ps(bc2);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 vg = _mm256_loadu_ps(g + i);
    __m256 vm = _mm256_fmadd_ps(vo1, vg, _mm256_mul_ps(vb1, _mm256_loadu_ps(m + i)));
    __m256 vv = _mm256_fmadd_ps(vo2, _mm256_mul_ps(vg, vg),
                                _mm256_mul_ps(vb2, _mm256_loadu_ps(v + i)));
    _mm256_storeu_ps(m + i, vm);
    _mm256_storeu_ps(v + i, vv);
    const __m256 mhat = _mm256_mul_ps(vm, vbc1);
    const __m256 vhat = _mm256_mul_ps(vv, vbc2);
    const __m256 upd = _mm256_div_ps(mhat, _mm256_add_ps(_mm256_sqrt_ps(vhat), veps));
    _mm256_storeu_ps(p + i, _mm256_fnmadd_ps(vlr, upd, _mm256_loadu_ps(p + i)));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
    p[i] -= lr * (m[i] * bc1) / (std::sqrt(v[i] * bc2) + eps);
  }
}

void sgd_momentum_step(size_t n, float* p, const float* g, float* vel, float lr,
                       float momentum) {
  const __m256 vmom = _mm256_set1_ps(momentum);
  const __m256 vlr = _mm256_set1_ps(lr);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 vv =
        _mm256_fmadd_ps(vmom, _mm256_loadu_ps(vel + i), _mm256_loadu_ps(g + i));
    _mm256_storeu_ps(vel + i, vv);
    _mm256_storeu_ps(p + i, _mm256_fnmadd_ps(vlr, vv, _mm256_loadu_ps(p + i)));
  }
  for (; i < n; ++i) {
    vel[i] = momentum * vel[i] + g[i];
    p[i] -= lr * vel[i];
  }
}

const Backend kAvx2 = {
    .name = "avx2",
    .gemm_nn = &gemm_nn,
    .gemm_nt = &gemm_nt,
    .gemm_tn = &gemm_tn,
    .relu = &relu,
    .relu_backward = &relu_backward,
    .axpy = &axpy,
    .sqdist_row = &sqdist_row,
    .nn_min = &nn_min,
    .colmax_argmax = &colmax_argmax,
    .adam_step = &adam_step,
    .sgd_momentum_step = &sgd_momentum_step,
};

}  // namespace

const Backend* avx2_backend() {
  static const Backend* b = [] {
    return (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
               ? &kAvx2
               : static_cast<const Backend*>(nullptr);
  }();
  return b;
}

}  // namespace morph::kernels

#else

namespace morph::kernels {
const Backend* avx2_backend() { return nullptr; }
}  // namespace morph::kernels

#endif
