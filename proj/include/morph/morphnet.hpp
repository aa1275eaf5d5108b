#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "morph/common.hpp"
#include "morph/geometry.hpp"
#include "morph/nn.hpp"
#include "morph/rng.hpp"

namespace morph::morphnet {

// Quasi-uniform unit-sphere coordinates: a Fibonacci spiral rotated by a
// seeded random rotation so different seeds fold against different grids.
// The grid is fixed for the lifetime of a model and rebuilt from (n, seed).
template <class T>
Mat<T> sphere_grid(int n, uint64_t seed) {
  require(n >= 1, "sphere_grid: need n >= 1");
  Mat<T> g(n, 3);
  const double ga = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double y = 1.0 - 2.0 * (i + 0.5) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
    const double th = ga * i;
    g.at(i, 0) = static_cast<T>(r * std::cos(th));
    g.at(i, 1) = static_cast<T>(y);
    g.at(i, 2) = static_cast<T>(r * std::sin(th));
  }
  // Uniform random rotation from a unit quaternion.
  Rng rng = Rng::derive(seed, 0x5052494eull);
  double q[4];
  double norm = 0;
  do {
    norm = 0;
    for (double& c : q) {
      c = rng.gaussian();
      norm += c * c;
    }
  } while (norm < 1e-12);
  norm = std::sqrt(norm);
  const double w = q[0] / norm, x = q[1] / norm, y = q[2] / norm, z = q[3] / norm;
  const double R[3][3] = {
      {1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
      {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
      {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}};
  for (int i = 0; i < n; ++i) {
    const double p[3] = {static_cast<double>(g.at(i, 0)), static_cast<double>(g.at(i, 1)),
                         static_cast<double>(g.at(i, 2))};
    for (int r = 0; r < 3; ++r)
      g.at(i, r) = static_cast<T>(R[r][0] * p[0] + R[r][1] * p[1] + R[r][2] * p[2]);
  }
  return g;
}

template <class T>
std::vector<T> one_hot(int t, int c) {
  require(c >= 1, "one_hot: need C >= 1");
  require(t >= 0 && t < c, "one_hot: class index out of range");
  std::vector<T> h(c, T(0));
  h[t] = T(1);
  return h;
}

// Layer widths shared by every block.
inline constexpr int kFeat = 64;    // T1 output and folding feature width
inline constexpr int kLatent = 128; // encoder latent z
inline constexpr int kGraphK = 8;   // neighborhood size for the local max-pool

// One morph block: a per-point lift T1 whose features d feed two branches.
// The residual branch passes d straight to the output head; the poisoning
// branch compresses d to a global latent z and folds a fixed sphere grid,
// conditioned on the target one-hot, back to per-point features. T2 maps the
// branch concatenation to output coordinates.
template <class T>
struct MorphBlock {
  nn::Dense<T> t1a, t1b;       // 3 -> 64 -> 64, ReLU
  nn::Dense<T> enc1, enc2;     // 64 -> 64 (graph pool between) -> 128, ReLU
  nn::Dense<T> fold1a, fold1b; // [z | H_t | grid] -> 64 -> 64
  nn::Dense<T> fold2a, fold2b; // [z | H_t | f1] -> 64 -> 64
  nn::Dense<T> t2a, t2b;       // [d | f2] -> 64 -> 3 (f2 alone when no_residual)

  void init(Rng& rng, int c, bool no_residual) {
    t1a.init(rng, 3, kFeat);
    t1b.init(rng, kFeat, kFeat);
    enc1.init(rng, kFeat, kFeat);
    enc2.init(rng, kFeat, kLatent);
    fold1a.init(rng, kLatent + c + 3, kFeat);
    fold1b.init(rng, kFeat, kFeat, 1.0);
    fold2a.init(rng, kLatent + c + kFeat, kFeat);
    fold2b.init(rng, kFeat, kFeat, 1.0);
    t2a.init(rng, no_residual ? kFeat : 2 * kFeat, kFeat);
    t2b.init(rng, kFeat, 3, 1.0);
  }

  void params(nn::ParamList<T>& out, const std::string& prefix) {
    nn::Dense<T>* layers[] = {&t1a, &t1b, &enc1, &enc2, &fold1a,
                              &fold1b, &fold2a, &fold2b, &t2a, &t2b};
    const char* names[] = {"t1a", "t1b", "enc1", "enc2", "fold1a",
                           "fold1b", "fold2a", "fold2b", "t2a", "t2b"};
    for (int i = 0; i < 10; ++i) {
      const std::string base = prefix + "." + names[i];
      layers[i]->params(out, (base + ".W").c_str(), (base + ".b").c_str());
    }
  }

  void zero_grad() {
    for (nn::Dense<T>* l : {&t1a, &t1b, &enc1, &enc2, &fold1a, &fold1b,
                            &fold2a, &fold2b, &t2a, &t2b})
      l->zero_grad();
  }
};

template <class T>
struct MorphNet {
  std::vector<MorphBlock<T>> blocks;
  Mat<T> grid; // N x 3, fixed
  int c = 0;
  int n_points = 0;
  uint64_t grid_seed = 0;
  std::string residual_mode = "mean"; // "mean" | "sum"
  bool no_residual = false;

  int n_blocks() const { return static_cast<int>(blocks.size()); }

  void init(Rng& rng, int c_, int n_points_, int n_blocks, const std::string& mode,
            bool no_residual_, uint64_t grid_seed_) {
    require(n_blocks >= 1, "morphnet: need n >= 1 blocks");
    require(mode == "mean" || mode == "sum", "morphnet: residual_mode must be mean or sum");
    c = c_;
    n_points = n_points_;
    grid_seed = grid_seed_;
    residual_mode = mode;
    no_residual = no_residual_;
    grid = sphere_grid<T>(n_points_, grid_seed_);
    blocks.assign(n_blocks, {});
    for (auto& b : blocks) b.init(rng, c_, no_residual_);
  }

  void params(nn::ParamList<T>& out) {
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].params(out, "b" + std::to_string(i));
  }

  void zero_grad() {
    for (auto& b : blocks) b.zero_grad();
  }
};

using MorphNetF = MorphNet<float>;

// Forward/backward scratch for one block. Backward reuses the cached
// activations; neighbor and max indices are treated as fixed per forward.
template <class T>
struct MorphBlockWork {
  Cloud<T> xin;
  Mat<T> h1, d;
  Mat<T> e1, ep, e2, z;
  std::vector<int32_t> nbr, gp_arg, z_arg;
  int k_eff = 0;
  Mat<T> in1, g1, f1;
  Mat<T> in2, g2, f2;
  Mat<T> tin, u;
  Cloud<T> out;
  // backward scratch
  Mat<T> du, dtin, dd, df2, dg2, din2, df1, dg1, din1, dz, de2, dep, de1, dd_enc, dh1;
  Cloud<T> dxin;
};

namespace detail {

template <class T>
void splice_cols(const Mat<T>& src, int c0, int w, Mat<T>& dst) {
  dst.resize(src.rows, w);
  for (int i = 0; i < src.rows; ++i) {
    const T* s = src.row(i) + c0;
    T* d = dst.row(i);
    for (int j = 0; j < w; ++j) d[j] = s[j];
  }
}

} // namespace detail

// Runs one block on `x` conditioned on class t. The kNN graph for the local
// max-pool is built on the block's input coordinates.
template <class T>
const Cloud<T>& morph_block_forward(const MorphBlock<T>& blk, const Mat<T>& grid, int c,
                                    const Cloud<T>& x, int t, MorphBlockWork<T>& w) {
  require(x.cols == 3, "morph_block_forward: cloud must be Nx3");
  require(x.rows == grid.rows, "morph_block_forward: cloud size differs from grid");
  require(t >= 0 && t < c, "morph_block_forward: class index out of range");
  const int n = x.rows;
  w.xin = x;

  // T1 per-point lift
  blk.t1a.forward(w.xin, w.h1);
  nn::relu_inplace(w.h1);
  blk.t1b.forward(w.h1, w.d);
  nn::relu_inplace(w.d);

  // encoder to global latent z
  blk.enc1.forward(w.d, w.e1);
  nn::relu_inplace(w.e1);
  w.k_eff = std::min(kGraphK, n - 1);
  if (w.k_eff >= 1)
    w.nbr = geo::knn_indices(w.xin, w.k_eff);
  else
    w.nbr.clear();
  nn::graph_maxpool(w.e1, w.nbr, w.k_eff, w.ep, w.gp_arg);
  blk.enc2.forward(w.ep, w.e2);
  nn::relu_inplace(w.e2);
  nn::global_maxpool(w.e2, w.z, w.z_arg);

  // folding decoder, conditioned on the one-hot target
  const std::vector<T> h = one_hot<T>(t, c);
  w.in1.resize(n, kLatent + c + 3);
  for (int i = 0; i < n; ++i) {
    T* row = w.in1.row(i);
    for (int j = 0; j < kLatent; ++j) row[j] = w.z.at(0, j);
    for (int j = 0; j < c; ++j) row[kLatent + j] = h[j];
    const T* gp = grid.row(i);
    for (int j = 0; j < 3; ++j) row[kLatent + c + j] = gp[j];
  }
  blk.fold1a.forward(w.in1, w.g1);
  nn::relu_inplace(w.g1);
  blk.fold1b.forward(w.g1, w.f1);

  w.in2.resize(n, kLatent + c + kFeat);
  for (int i = 0; i < n; ++i) {
    T* row = w.in2.row(i);
    for (int j = 0; j < kLatent; ++j) row[j] = w.z.at(0, j);
    for (int j = 0; j < c; ++j) row[kLatent + j] = h[j];
    const T* f = w.f1.row(i);
    for (int j = 0; j < kFeat; ++j) row[kLatent + c + j] = f[j];
  }
  blk.fold2a.forward(w.in2, w.g2);
  nn::relu_inplace(w.g2);
  blk.fold2b.forward(w.g2, w.f2);

  // output head over both branches
  const bool resid = blk.t2a.fin() == 2 * kFeat;
  if (resid) {
    w.tin.resize(n, 2 * kFeat);
    for (int i = 0; i < n; ++i) {
      T* row = w.tin.row(i);
      const T* dp = w.d.row(i);
      const T* fp = w.f2.row(i);
      for (int j = 0; j < kFeat; ++j) row[j] = dp[j];
      for (int j = 0; j < kFeat; ++j) row[kFeat + j] = fp[j];
    }
  } else {
    w.tin = w.f2;
  }
  blk.t2a.forward(w.tin, w.u);
  nn::relu_inplace(w.u);
  blk.t2b.forward(w.u, w.out);
  return w.out;
}

// Accumulates parameter gradients for dL/d(out) = dout; adds the gradient
// with respect to the block input into dxin when given. Index selections
// (kNN graph, max-pools) are constant within the pass.
template <class T>
void morph_block_backward(MorphBlock<T>& blk, MorphBlockWork<T>& w, const Cloud<T>& dout,
                          Cloud<T>* dxin) {
  const int n = w.xin.rows;
  require(dout.rows == n && dout.cols == 3, "morph_block_backward: bad dout shape");

  // output head
  blk.t2b.backward(w.u, dout, &w.du);
  nn::relu_backward_inplace(w.u, w.du);
  blk.t2a.backward(w.tin, w.du, &w.dtin);
  const bool resid = blk.t2a.fin() == 2 * kFeat;
  if (resid) {
    detail::splice_cols(w.dtin, 0, kFeat, w.dd);
    detail::splice_cols(w.dtin, kFeat, kFeat, w.df2);
  } else {
    w.dd.resize(n, kFeat);
    w.df2 = w.dtin;
  }

  // folding stages; z receives contributions from both stage inputs
  blk.fold2b.backward(w.g2, w.df2, &w.dg2);
  nn::relu_backward_inplace(w.g2, w.dg2);
  blk.fold2a.backward(w.in2, w.dg2, &w.din2);

  detail::splice_cols(w.din2, blk.fold2a.fin() - kFeat, kFeat, w.df1);
  blk.fold1b.backward(w.g1, w.df1, &w.dg1);
  nn::relu_backward_inplace(w.g1, w.dg1);
  blk.fold1a.backward(w.in1, w.dg1, &w.din1);

  w.dz.resize(1, kLatent);
  for (int i = 0; i < n; ++i) {
    const T* r2 = w.din2.row(i);
    const T* r1 = w.din1.row(i);
    for (int j = 0; j < kLatent; ++j) w.dz.at(0, j) += r2[j] + r1[j];
  }

  // encoder
  w.de2.resize(n, kLatent);
  nn::global_maxpool_backward(w.dz, w.z_arg, w.de2);
  nn::relu_backward_inplace(w.e2, w.de2);
  blk.enc2.backward(w.ep, w.de2, &w.dep);
  w.de1.resize(n, kFeat);
  nn::graph_maxpool_backward(w.dep, w.gp_arg, w.de1);
  nn::relu_backward_inplace(w.e1, w.de1);
  blk.enc1.backward(w.d, w.de1, &w.dd_enc);
  for (size_t i = 0; i < w.dd.v.size(); ++i) w.dd.v[i] += w.dd_enc.v[i];

  // T1; both branches have merged into dd
  nn::relu_backward_inplace(w.d, w.dd);
  blk.t1b.backward(w.h1, w.dd, &w.dh1);
  nn::relu_backward_inplace(w.h1, w.dh1);
  blk.t1a.backward(w.xin, w.dh1, &w.dxin);
  if (dxin) {
    require(dxin->rows == n && dxin->cols == 3, "morph_block_backward: bad dxin shape");
    for (size_t i = 0; i < dxin->v.size(); ++i) dxin->v[i] += w.dxin.v[i];
  }
}

template <class T>
struct MorphNetWork {
  std::vector<MorphBlockWork<T>> blocks;
  // backward scratch
  Cloud<T> g, dxin;

  const Cloud<T>& intermediate(int k) const { return blocks[k].out; }
  const Cloud<T>& final_out() const { return blocks.back().out; }
};

// Stacked recurrence: the first block sees the benign cloud, every later
// block sees combine(previous output, benign input), index-wise mean or sum
// per residual_mode. Returns the final output; all intermediates stay
// available through the work struct.
template <class T>
const Cloud<T>& morphnet_forward(const MorphNet<T>& net, const Cloud<T>& x, int t,
                                 MorphNetWork<T>& work) {
  require(x.rows == net.n_points && x.cols == 3, "morphnet_forward: cloud size mismatch");
  require(t >= 0 && t < net.c, "morphnet_forward: class index out of range");
  const int n = net.n_blocks();
  work.blocks.resize(n);
  const T half = net.residual_mode == "mean" ? T(0.5) : T(1);
  Cloud<T> combined;
  for (int k = 0; k < n; ++k) {
    const Cloud<T>* input = &x;
    if (k > 0) {
      const Cloud<T>& prev = work.blocks[k - 1].out;
      combined.resize(x.rows, 3);
      for (size_t i = 0; i < combined.v.size(); ++i)
        combined.v[i] = half * (prev.v[i] + x.v[i]);
      input = &combined;
    }
    morph_block_forward(net.blocks[k], net.grid, net.c, *input, t, work.blocks[k]);
  }
  return work.final_out();
}

// dinter[k] is dL/d(intermediate k); an empty mat means no loss attaches
// there. Accumulates parameter gradients; adds dL/d(benign input) into dx
// when given.
template <class T>
void morphnet_backward(MorphNet<T>& net, MorphNetWork<T>& work,
                       const std::vector<Cloud<T>>& dinter, Cloud<T>* dx = nullptr) {
  const int n = net.n_blocks();
  require(static_cast<int>(dinter.size()) == n, "morphnet_backward: need one grad per block");
  const int rows = net.n_points;
  const T half = net.residual_mode == "mean" ? T(0.5) : T(1);
  work.g.resize(rows, 3);
  if (dinter[n - 1].rows > 0) work.g = dinter[n - 1];
  for (int k = n - 1; k >= 0; --k) {
    work.dxin.resize(rows, 3);
    morph_block_backward(net.blocks[k], work.blocks[k], work.g, &work.dxin);
    if (k > 0) {
      // input was half*(prev + x): split the input gradient between chains
      Cloud<T> next(rows, 3);
      if (dinter[k - 1].rows > 0) next = dinter[k - 1];
      for (size_t i = 0; i < next.v.size(); ++i) next.v[i] += half * work.dxin.v[i];
      if (dx)
        for (size_t i = 0; i < dx->v.size(); ++i) dx->v[i] += half * work.dxin.v[i];
      work.g = next;
    } else if (dx) {
      for (size_t i = 0; i < dx->v.size(); ++i) dx->v[i] += work.dxin.v[i];
    }
  }
}

void save_morphnet(const MorphNetF& net, const std::string& dir, uint64_t seed, int epoch);
MorphNetF load_morphnet(const std::string& dir);

} // namespace morph::morphnet
