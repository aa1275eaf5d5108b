#include "morph/kernels/backend.hpp"

#include <cstdlib>

#include "morph/kernels/scalar_impl.hpp"

namespace morph::kernels {

namespace {

namespace si = scalar_impl;

const Backend kScalar = {
    "scalar",
    &si::gemm_nn<float>,
    &si::gemm_nt<float>,
    &si::gemm_tn<float>,
    &si::relu<float>,
    &si::relu_backward<float>,
    &si::axpy<float>,
    &si::sqdist_row<float>,
    &si::nn_min<float>,
    &si::colmax_argmax<float>,
    &si::adam_step<float>,
    &si::sgd_momentum_step<float>,
};

const Backend* pick_default() {
  if (const char* env = std::getenv("MORPH_BACKEND")) {
    const std::string name(env);
    if (name == "scalar") return &kScalar;
    if (name == "avx2" && avx2_backend()) return avx2_backend();
    if (name == "neon" && neon_backend()) return neon_backend();
    // Unknown or unsupported value: fall through to auto selection.
  }
  if (const Backend* b = avx2_backend()) return b;
  if (const Backend* b = neon_backend()) return b;
  return &kScalar;
}

const Backend*& current() {
  static const Backend* b = pick_default();
  return b;
}

}  // namespace

const Backend* scalar_backend() { return &kScalar; }

const Backend& active() { return *current(); }

bool force(const std::string& name) {
  if (name == "auto") {
    if (const Backend* b = avx2_backend()) {
      current() = b;
      return true;
    }
    if (const Backend* b = neon_backend()) {
      current() = b;
      return true;
    }
    current() = &kScalar;
    return true;
  }
  if (name == "scalar") {
    current() = &kScalar;
    return true;
  }
  if (name == "avx2" && avx2_backend()) {
    current() = avx2_backend();
    return true;
  }
  if (name == "neon" && neon_backend()) {
    current() = neon_backend();
    return true;
  }
  return false;
}

std::vector<std::string> available() {
  std::vector<std::string> names = {"scalar"};
  if (avx2_backend()) names.emplace_back("avx2");
  if (neon_backend()) names.emplace_back("neon");
  return names;
}

}  // namespace morph::kernels
