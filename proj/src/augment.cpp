#include "morph/augment.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace morph::aug {

namespace {

std::array<int, 9> matmul(const std::array<int, 9>& a, const std::array<int, 9>& b) {
  std::array<int, 9> c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[3 * i + j] += a[3 * i + k] * b[3 * k + j];
  return c;
}

std::array<std::array<int, 9>, 24> build_rotations() {
  // Generate the group from two 90-degree rotations by closure.
  const std::array<int, 9> rx = {1, 0, 0, 0, 0, -1, 0, 1, 0};
  const std::array<int, 9> ry = {0, 0, 1, 0, 1, 0, -1, 0, 0};
  std::vector<std::array<int, 9>> seen = {{1, 0, 0, 0, 1, 0, 0, 0, 1}};
  bool grew = true;
  while (grew) {
    grew = false;
    for (size_t i = 0; i < seen.size(); ++i) {
      for (const auto& g : {rx, ry}) {
        const auto m = matmul(seen[i], g);
        if (std::find(seen.begin(), seen.end(), m) == seen.end()) {
          seen.push_back(m);
          grew = true;
        }
      }
    }
  }
  std::array<std::array<int, 9>, 24> out{};
  std::copy_n(seen.begin(), 24, out.begin());
  return out;
}

}  // namespace

const std::array<std::array<int, 9>, 24>& cube_rotations() {
  static const auto rots = build_rotations();
  return rots;
}

CloudF rotate24(const CloudF& cloud, Rng& rng) {
  const auto& R = cube_rotations()[rng.uniform_index(24)];
  CloudF out(cloud.rows, 3);
  for (int i = 0; i < cloud.rows; ++i) {
    const float* p = cloud.row(i);
    float* q = out.row(i);
    for (int r = 0; r < 3; ++r)
      q[r] = (float)R[3 * r] * p[0] + (float)R[3 * r + 1] * p[1] + (float)R[3 * r + 2] * p[2];
  }
  return out;
}

CloudF scale_jitter(const CloudF& cloud, Rng& rng) {
  const float s = static_cast<float>(rng.uniform(0.8, 1.25));
  CloudF out(cloud.rows, 3);
  for (size_t i = 0; i < cloud.v.size(); ++i) {
    const float j = std::clamp(static_cast<float>(0.01 * rng.gaussian()), -0.05f, 0.05f);
    out.v[i] = s * cloud.v[i] + j;
  }
  return out;
}

}  // namespace morph::aug
