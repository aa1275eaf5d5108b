#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "morph/common.hpp"
#include "morph/kernels/kernels.hpp"

namespace morph::geo {

// Neighborhood statistic parameters. m follows the 30-of-2048 ratio when
// scaled to other cloud sizes via scaled_m().
struct OutlierParams {
  int k = 3;
  int m = 30;
};

inline int scaled_m(int n_points) {
  return std::max(4, (int)std::lround(0.0146 * n_points));
}

// Structure-of-arrays view used by the distance kernels.
template <class T>
struct SoACloud {
  std::vector<T> x, y, z;

  explicit SoACloud(const Cloud<T>& c) : x(c.rows), y(c.rows), z(c.rows) {
    for (int i = 0; i < c.rows; ++i) {
      const T* p = c.row(i);
      x[i] = p[0];
      y[i] = p[1];
      z[i] = p[2];
    }
  }
  size_t size() const { return x.size(); }
};

// Sum over a of the squared distance to the nearest point of b, plus the
// mirror term. Optional gradient accumulation: da/db get w * d(chamfer)/d(point).
template <class T>
T chamfer_distance(const Cloud<T>& a, const Cloud<T>& b, Cloud<T>* da = nullptr,
                   Cloud<T>* db = nullptr, T w = T(1)) {
  require(a.rows >= 1 && b.rows >= 1, "chamfer_distance: empty cloud");
  require(a.cols == 3 && b.cols == 3, "chamfer_distance: clouds must be Nx3");
  if (da) require(da->rows == a.rows && da->cols == 3, "chamfer_distance: bad da shape");
  if (db) require(db->rows == b.rows && db->cols == 3, "chamfer_distance: bad db shape");

  const SoACloud<T> sb(b);
  const SoACloud<T> sa(a);
  T total = T(0);
  for (int i = 0; i < a.rows; ++i) {
    const T* p = a.row(i);
    T d;
    int32_t j;
    kernels::nn_min<T>(p[0], p[1], p[2], sb.x.data(), sb.y.data(), sb.z.data(), sb.size(), &d,
                       &j);
    total += d;
    if (da || db) {
      const T* q = b.row(j);
      const T gx = T(2) * (p[0] - q[0]), gy = T(2) * (p[1] - q[1]), gz = T(2) * (p[2] - q[2]);
      if (da) {
        T* g = da->row(i);
        g[0] += w * gx;
        g[1] += w * gy;
        g[2] += w * gz;
      }
      if (db) {
        T* g = db->row(j);
        g[0] -= w * gx;
        g[1] -= w * gy;
        g[2] -= w * gz;
      }
    }
  }
  for (int j = 0; j < b.rows; ++j) {
    const T* q = b.row(j);
    T d;
    int32_t i;
    kernels::nn_min<T>(q[0], q[1], q[2], sa.x.data(), sa.y.data(), sa.z.data(), sa.size(), &d,
                       &i);
    total += d;
    if (da || db) {
      const T* p = a.row(i);
      const T gx = T(2) * (q[0] - p[0]), gy = T(2) * (q[1] - p[1]), gz = T(2) * (q[2] - p[2]);
      if (db) {
        T* g = db->row(j);
        g[0] += w * gx;
        g[1] += w * gy;
        g[2] += w * gz;
      }
      if (da) {
        T* g = da->row(i);
        g[0] -= w * gx;
        g[1] -= w * gy;
        g[2] -= w * gz;
      }
    }
  }
  return total;
}

// k nearest neighbors of every point (self excluded), row-major N x k.
// Ties resolve to the lower index.
template <class T>
std::vector<int32_t> knn_indices(const Cloud<T>& cloud, int k) {
  const int n = cloud.rows;
  require(k >= 1 && k < n, "knn_indices: need 1 <= k < N");
  const SoACloud<T> s(cloud);
  std::vector<int32_t> out((size_t)n * k);
  std::vector<T> d(n);
  std::vector<char> taken(n);
  for (int i = 0; i < n; ++i) {
    const T* p = cloud.row(i);
    kernels::sqdist_row<T>(p[0], p[1], p[2], s.x.data(), s.y.data(), s.z.data(), (size_t)n,
                           d.data());
    std::fill(taken.begin(), taken.end(), 0);
    taken[i] = 1;
    for (int pick = 0; pick < k; ++pick) {
      int best = -1;
      T bd = std::numeric_limits<T>::max();
      for (int j = 0; j < n; ++j) {
        if (!taken[j] && d[j] < bd) {
          bd = d[j];
          best = j;
        }
      }
      taken[best] = 1;
      out[(size_t)i * k + pick] = best;
    }
  }
  return out;
}

// D(p_i) for every point: mean unsquared distance to the k nearest neighbors.
template <class T>
std::vector<T> avg_knn_distances(const Cloud<T>& cloud, int k) {
  const int n = cloud.rows;
  require(k >= 1 && k < n, "avg_knn_distances: need 1 <= k < N");
  const std::vector<int32_t> nbr = knn_indices(cloud, k);
  std::vector<T> out(n);
  for (int i = 0; i < n; ++i) {
    const T* p = cloud.row(i);
    T sum = T(0);
    for (int t = 0; t < k; ++t) {
      const T* q = cloud.row(nbr[(size_t)i * k + t]);
      const T dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
      sum += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    out[i] = sum / T(k);
  }
  return out;
}

template <class T>
T avg_knn_distance(const Cloud<T>& cloud, int i, int k) {
  require(i >= 0 && i < cloud.rows, "avg_knn_distance: index out of range");
  return avg_knn_distances(cloud, k)[i];
}

// Indices of the m largest values, value ties resolved to the lower index.
template <class T>
std::vector<int> top_m_indices(const std::vector<T>& vals, int m) {
  std::vector<int> idx(vals.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + m, idx.end(), [&](int a, int b) {
    return vals[a] > vals[b] || (vals[a] == vals[b] && a < b);
  });
  idx.resize(m);
  return idx;
}

// D(x): mean of D(p_i) over the m highest-scoring points.
template <class T>
T outlier_score(const Cloud<T>& cloud, const OutlierParams& params) {
  require(params.m >= 1 && params.m <= cloud.rows, "outlier_score: need 1 <= m <= N");
  const std::vector<T> d = avg_knn_distances(cloud, params.k);
  const std::vector<int> top = top_m_indices(d, params.m);
  T sum = T(0);
  for (int i : top) sum += d[i];
  return sum / T(params.m);
}

// Gradient of outlier_score with respect to the points, with the top-m set
// and the neighbor sets treated as fixed. Accumulates w * d(score)/d(point).
template <class T>
T outlier_score_with_grad(const Cloud<T>& cloud, const OutlierParams& params, Cloud<T>& grad,
                          T w = T(1)) {
  require(params.m >= 1 && params.m <= cloud.rows, "outlier_score: need 1 <= m <= N");
  require(grad.rows == cloud.rows && grad.cols == 3, "outlier_score: bad grad shape");
  const std::vector<int32_t> nbr = knn_indices(cloud, params.k);
  const int k = params.k;
  std::vector<T> d(cloud.rows);
  for (int i = 0; i < cloud.rows; ++i) {
    const T* p = cloud.row(i);
    T sum = T(0);
    for (int t = 0; t < k; ++t) {
      const T* q = cloud.row(nbr[(size_t)i * k + t]);
      const T dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
      sum += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    d[i] = sum / T(k);
  }
  const std::vector<int> top = top_m_indices(d, params.m);
  const T coef = w / (T(params.m) * T(k));
  T sum = T(0);
  for (int i : top) {
    sum += d[i];
    const T* p = cloud.row(i);
    for (int t = 0; t < k; ++t) {
      const int j = nbr[(size_t)i * k + t];
      const T* q = cloud.row(j);
      const T dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
      const T dist = std::sqrt(dx * dx + dy * dy + dz * dz);
      if (dist <= T(1e-12)) continue;
      const T s = coef / dist;
      T* gi = grad.row(i);
      T* gj = grad.row(j);
      gi[0] += s * dx;
      gi[1] += s * dy;
      gi[2] += s * dz;
      gj[0] -= s * dx;
      gj[1] -= s * dy;
      gj[2] -= s * dz;
    }
  }
  return sum / T(params.m);
}

// Statistical outlier removal: drop points whose D(p_i) exceeds mu + alpha *
// sigma over the cloud's own D distribution. Population sigma. Never empties
// the cloud; if every point would go, the input is returned unchanged.
template <class T>
Cloud<T> sor_filter(const Cloud<T>& cloud, int k, T alpha) {
  require(k >= 1 && k < cloud.rows, "sor_filter: need 1 <= k < N");
  require(alpha > T(0), "sor_filter: alpha must be positive");
  const std::vector<T> d = avg_knn_distances(cloud, k);
  T mu = T(0);
  for (T v : d) mu += v;
  mu /= T(cloud.rows);
  T var = T(0);
  for (T v : d) var += (v - mu) * (v - mu);
  var /= T(cloud.rows);
  const T cutoff = mu + alpha * std::sqrt(var);
  std::vector<int> keep;
  keep.reserve(cloud.rows);
  for (int i = 0; i < cloud.rows; ++i)
    if (!(d[i] > cutoff)) keep.push_back(i);
  if (keep.empty() || (int)keep.size() == cloud.rows) return cloud;
  Cloud<T> out((int)keep.size(), 3);
  for (int r = 0; r < (int)keep.size(); ++r) {
    const T* p = cloud.row(keep[r]);
    T* q = out.row(r);
    q[0] = p[0];
    q[1] = p[1];
    q[2] = p[2];
  }
  return out;
}

// Center on the centroid, then scale so the farthest point sits on the unit
// sphere. A fully degenerate cloud (all points identical) maps to zeros.
template <class T>
Cloud<T> normalize_unit_sphere(const Cloud<T>& cloud) {
  require(cloud.rows >= 1, "normalize_unit_sphere: empty cloud");
  Cloud<T> out(cloud.rows, 3);
  T cx = T(0), cy = T(0), cz = T(0);
  for (int i = 0; i < cloud.rows; ++i) {
    const T* p = cloud.row(i);
    cx += p[0];
    cy += p[1];
    cz += p[2];
  }
  cx /= T(cloud.rows);
  cy /= T(cloud.rows);
  cz /= T(cloud.rows);
  T rmax = T(0);
  for (int i = 0; i < cloud.rows; ++i) {
    const T* p = cloud.row(i);
    const T dx = p[0] - cx, dy = p[1] - cy, dz = p[2] - cz;
    rmax = std::max(rmax, std::sqrt(dx * dx + dy * dy + dz * dz));
  }
  const T s = rmax > T(1e-12) ? T(1) / rmax : T(0);
  for (int i = 0; i < cloud.rows; ++i) {
    const T* p = cloud.row(i);
    T* q = out.row(i);
    q[0] = (p[0] - cx) * s;
    q[1] = (p[1] - cy) * s;
    q[2] = (p[2] - cz) * s;
  }
  return out;
}

}  // namespace morph::geo
