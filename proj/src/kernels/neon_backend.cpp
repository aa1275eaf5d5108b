#include "morph/kernels/backend.hpp"

#if defined(__aarch64__) && defined(__ARM_NEON)

#include <arm_neon.h>

#include <cfloat>

#include "morph/kernels/scalar_impl.hpp"

namespace morph::kernels {
namespace {

void gemm_nn(int m, int n, int k, const float* A, const float* B, float* C, bool acc) {
  const int n16 = n & ~15;
  for (int i = 0; i < m; ++i) {
    const float* a = A + (size_t)i * k;
    float* c = C + (size_t)i * n;
    for (int j = 0; j < n16; j += 16) {
      float32x4_t c0, c1, c2, c3;
      if (acc) {
        c0 = vld1q_f32(c + j);
        c1 = vld1q_f32(c + j + 4);
        c2 = vld1q_f32(c + j + 8);
        c3 = vld1q_f32(c + j + 12);
      } else {
        c0 = c1 = c2 = c3 = vdupq_n_f32(0.0f);
      }
      for (int p = 0; p < k; ++p) {
        const float ap = a[p];
        const float* b = B + (size_t)p * n + j;
        c0 = vfmaq_n_f32(c0, vld1q_f32(b), ap);
        c1 = vfmaq_n_f32(c1, vld1q_f32(b + 4), ap);
        c2 = vfmaq_n_f32(c2, vld1q_f32(b + 8), ap);
        c3 = vfmaq_n_f32(c3, vld1q_f32(b + 12), ap);
      }
      vst1q_f32(c + j, c0);
      vst1q_f32(c + j + 4, c1);
      vst1q_f32(c + j + 8, c2);
      vst1q_f32(c + j + 12, c3);
    }
    if (n16 < n) {
      if (!acc)
        for (int j = n16; j < n; ++j) c[j] = 0.0f;
      for (int p = 0; p < k; ++p) {
        const float ap = a[p];
        const float* b = B + (size_t)p * n;
        for (int j = n16; j < n; ++j) c[j] += ap * b[j];
      }
    }
  }
}

void gemm_nt(int m, int n, int k, const float* A, const float* B, float* C, bool acc) {
  const int k4 = k & ~3;
  for (int i = 0; i < m; ++i) {
    const float* a = A + (size_t)i * k;
    float* c = C + (size_t)i * n;
    for (int j = 0; j < n; ++j) {
      const float* b = B + (size_t)j * k;
      float32x4_t s = vdupq_n_f32(0.0f);
      for (int p = 0; p < k4; p += 4) s = vfmaq_f32(s, vld1q_f32(a + p), vld1q_f32(b + p));
      float r = vaddvq_f32(s);
      for (int p = k4; p < k; ++p) r += a[p] * b[p];
      c[j] = acc ? c[j] + r : r;
    }
  }
}

void relu(float* x, size_t n) {
  const float32x4_t z = vdupq_n_f32(0.0f);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(x + i, vmaxq_f32(vld1q_f32(x + i), z));
  for (; i < n; ++i) x[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward(const float* y, float* dy, size_t n) {
  const float32x4_t z = vdupq_n_f32(0.0f);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const uint32x4_t mask = vcgtq_f32(vld1q_f32(y + i), z);
    vst1q_f32(dy + i,
              vreinterpretq_f32_u32(vandq_u32(vreinterpretq_u32_f32(vld1q_f32(dy + i)), mask)));
  }
  for (; i < n; ++i)
    if (y[i] <= 0.0f) dy[i] = 0.0f;
}

void axpy(size_t n, float a, const float* x, float* y) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    vst1q_f32(y + i, vfmaq_n_f32(vld1q_f32(y + i), vld1q_f32(x + i), a));
  for (; i < n; ++i) y[i] += a * x[i];
}

void sqdist_row(float qx, float qy, float qz, const float* px, const float* py, const float* pz,
                size_t n, float* out) {
  const float32x4_t vqx = vdupq_n_f32(qx);
  const float32x4_t vqy = vdupq_n_f32(qy);
  const float32x4_t vqz = vdupq_n_f32(qz);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float32x4_t dx = vsubq_f32(vqx, vld1q_f32(px + i));
    const float32x4_t dy = vsubq_f32(vqy, vld1q_f32(py + i));
    const float32x4_t dz = vsubq_f32(vqz, vld1q_f32(pz + i));
    vst1q_f32(out + i, vfmaq_f32(vfmaq_f32(vmulq_f32(dx, dx), dy, dy), dz, dz));
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
  if (n >= 4) {
    const float32x4_t vqx = vdupq_n_f32(qx);
    const float32x4_t vqy = vdupq_n_f32(qy);
    const float32x4_t vqz = vdupq_n_f32(qz);
    float32x4_t vbest = vdupq_n_f32(FLT_MAX);
    int32x4_t vbesti = vdupq_n_s32(0);
    int32x4_t vidx = {0, 1, 2, 3};
    const int32x4_t vinc = vdupq_n_s32(4);
    for (; i + 4 <= n; i += 4) {
      const float32x4_t dx = vsubq_f32(vqx, vld1q_f32(px + i));
      const float32x4_t dy = vsubq_f32(vqy, vld1q_f32(py + i));
      const float32x4_t dz = vsubq_f32(vqz, vld1q_f32(pz + i));
      const float32x4_t d = vfmaq_f32(vfmaq_f32(vmulq_f32(dx, dx), dy, dy), dz, dz);
      const uint32x4_t lt = vcltq_f32(d, vbest);
      vbest = vbslq_f32(lt, d, vbest);
      vbesti = vbslq_s32(lt, vidx, vbesti);
      vidx = vaddq_s32(vidx, vinc);
    }
    float bd[4];
    int32_t bi[4];
    vst1q_f32(bd, vbest);
    vst1q_s32(bi, vbesti);
    for (int lane = 0; lane < 4; ++lane) {
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

const Backend kNeon = {
    .name = "neon",
    .gemm_nn = &gemm_nn,
    .gemm_nt = &gemm_nt,
    .gemm_tn = &scalar_impl::gemm_tn<float>,
    .relu = &relu,
    .relu_backward = &relu_backward,
    .axpy = &axpy,
    .sqdist_row = &sqdist_row,
    .nn_min = &nn_min,
    .colmax_argmax = &scalar_impl::colmax_argmax<float>,
    .adam_step = &scalar_impl::adam_step<float>,
    .sgd_momentum_step = &scalar_impl::sgd_momentum_step<float>,
};

}  // namespace

const Backend* neon_backend() { return &kNeon; }

}  // namespace morph::kernels

#else

namespace morph::kernels {
const Backend* neon_backend() { return nullptr; }
}  // namespace morph::kernels

#endif
